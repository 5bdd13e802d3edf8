//! Minimal SVG line charts for the per-round levels and accuracy.

use std::path::Path;

use crate::runner::ExperimentResult;
use fedsplit::Result as LibResult;

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

fn polyline(points: &[(f64, f64)], x_range: (f64, f64), y_range: (f64, f64)) -> String {
    const W: f64 = 600.0;
    const H: f64 = 300.0;
    const MARGIN: f64 = 40.0;
    let (x0, x1) = x_range;
    let (y0, y1) = y_range;
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0).max(1e-12) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0).max(1e-12) * (H - 2.0 * MARGIN);
    points
        .iter()
        .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn chart(title: &str, series: &[Series<'_>]) -> String {
    let xs: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .collect();
    let fold = |v: &[f64], init: f64, f: fn(f64, f64) -> f64| v.iter().fold(init, |a, b| f(a, *b));
    let x_range = (
        fold(&xs, f64::INFINITY, f64::min),
        fold(&xs, f64::NEG_INFINITY, f64::max),
    );
    let y_lo = fold(&ys, f64::INFINITY, f64::min).min(0.0);
    let y_hi = fold(&ys, f64::NEG_INFINITY, f64::max) * 1.05;
    let mut svg = String::new();
    svg.push_str(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"300\" viewBox=\"0 0 600 300\">\n",
    );
    svg.push_str("<rect width=\"600\" height=\"300\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"300\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n"
    ));
    // axes
    svg.push_str("<line x1=\"40\" y1=\"260\" x2=\"560\" y2=\"260\" stroke=\"black\"/>\n");
    svg.push_str("<line x1=\"40\" y1=\"40\" x2=\"40\" y2=\"260\" stroke=\"black\"/>\n");
    svg.push_str(&format!(
        "<text x=\"40\" y=\"275\" font-family=\"sans-serif\" font-size=\"10\">{:.0}</text>\n",
        x_range.0
    ));
    svg.push_str(&format!(
        "<text x=\"545\" y=\"275\" font-family=\"sans-serif\" font-size=\"10\">{:.0}</text>\n",
        x_range.1
    ));
    svg.push_str(&format!(
        "<text x=\"5\" y=\"262\" font-family=\"sans-serif\" font-size=\"10\">{y_lo:.2}</text>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"5\" y=\"45\" font-family=\"sans-serif\" font-size=\"10\">{y_hi:.2}</text>\n"
    ));
    for (i, s) in series.iter().enumerate() {
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            s.color,
            polyline(&s.points, x_range, (y_lo, y_hi))
        ));
        svg.push_str(&format!(
            "<text x=\"460\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{}</text>\n",
            40 + 14 * i,
            s.color,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write levels.svg (xi, phi, lambda) and accuracy.svg for the first seed.
pub fn write_charts(result: &ExperimentResult, out_dir: &Path) -> LibResult<()> {
    let run = match result.runs.first() {
        Some(r) => r,
        None => return Ok(()),
    };
    let pick = |f: &dyn Fn(&fedsplit::federation::RoundReport) -> f64| {
        run.output
            .reports
            .iter()
            .map(|r| (r.round as f64, f(r)))
            .collect::<Vec<_>>()
    };
    let levels = chart(
        "noise / diversity levels per round",
        &[
            Series {
                label: "xi",
                color: "#c0392b",
                points: pick(&|r| r.xi),
            },
            Series {
                label: "phi",
                color: "#2980b9",
                points: pick(&|r| r.phi),
            },
            Series {
                label: "lambda",
                color: "#27ae60",
                points: pick(&|r| r.lambda),
            },
        ],
    );
    let accuracy = chart(
        "test accuracy per round",
        &[Series {
            label: "accuracy",
            color: "#8e44ad",
            points: pick(&|r| r.test_acc),
        }],
    );
    let write = |name: &str, body: String| {
        std::fs::write(out_dir.join(name), body).map_err(|e| fedsplit::Error::Io {
            path: out_dir.join(name).display().to_string(),
            source: e,
        })
    };
    write("levels.svg", levels)?;
    write("accuracy.svg", accuracy)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_valid_svg_shell() {
        let s = chart(
            "t",
            &[Series {
                label: "a",
                color: "red",
                points: vec![(0.0, 0.0), (1.0, 1.0)],
            }],
        );
        assert!(s.starts_with("<svg"));
        assert!(s.contains("polyline"));
        assert!(s.ends_with("</svg>\n"));
    }
}

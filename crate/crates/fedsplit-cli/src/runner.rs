//! Experiment execution: dataset assembly, per-seed runs, sweeps, and the
//! metric artifacts (CSV rows, JSON summaries, SVG charts).

use std::path::Path;

use serde::Serialize;

use fedsplit::accountant;
use fedsplit::data::{
    generate_federation, generate_test_set, load_csv, split_train_test, ClientDataset, Sample,
};
use fedsplit::federation::{run_training, RoundReport, RunConfig, RunOutput, SplitStrategy};
use fedsplit::parallel;
use fedsplit::Result as LibResult;

use crate::config::ValidatedConfig;
use crate::output;

/// Exact column layout of the per-round CSV. The trailing `guarded` flag
/// column marks denominator-guarded rounds (0/1) instead of emitting NaNs.
pub const CSV_HEADER: &str = "round,seed,xi,phi,lambda,clip_C,v,n_participants,train_loss,test_acc,test_auc,epsilon_so_far,guarded";

/// One seed's executed run.
pub struct SeedRun {
    pub seed: u64,
    pub output: RunOutput,
}

/// A full experiment: one run per seed.
pub struct ExperimentResult {
    pub runs: Vec<SeedRun>,
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Serialize)]
pub struct SummaryPrivacy {
    pub z: f64,
    pub delta: f64,
    /// Accounted budget; absent on non-private runs.
    pub epsilon: Option<f64>,
    pub rounds: u32,
    pub subsample_ratio: f64,
}

#[derive(Debug, Serialize)]
pub struct SeedFinal {
    pub seed: u64,
    pub test_acc: f64,
    pub test_auc: f64,
    pub train_loss: f64,
    pub final_v: usize,
}

#[derive(Debug, Serialize)]
pub struct MetricStats {
    pub test_acc: f64,
    pub test_auc: f64,
    pub train_loss: f64,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub privacy: SummaryPrivacy,
    pub per_seed: Vec<SeedFinal>,
    pub mean: MetricStats,
    pub std: MetricStats,
}

/// Assemble the federation and pooled test set for one seed.
pub fn build_data(
    cfg: &ValidatedConfig,
    seed: u64,
    n_clients_override: Option<usize>,
) -> LibResult<(Vec<ClientDataset>, Vec<Sample>)> {
    let ds = &cfg.raw.dataset;
    if ds.source == "csv" {
        let mut clients = Vec::new();
        let label = ds.label_column.as_deref().unwrap_or("label");
        for (i, path) in ds.csv_paths.iter().enumerate() {
            let mut c = load_csv(path, label)?;
            c.client_id = i as u64;
            clients.push(c);
        }
        let mut trains = Vec::new();
        let mut test = Vec::new();
        for c in &clients {
            let (train, held) = split_train_test(c, ds.test_fraction, seed)?;
            trains.push(train);
            test.extend(held);
        }
        return Ok((trains, test));
    }
    let n = n_clients_override.unwrap_or_else(|| ds.n_clients.expect("validated"));
    let clients = generate_federation(
        n,
        ds.samples_per_client.expect("validated"),
        ds.dim.expect("validated"),
        ds.heterogeneity.expect("validated"),
        seed,
    )?;
    if ds.test_source == "heldout" {
        let mut trains = Vec::new();
        let mut test = Vec::new();
        for c in &clients {
            let (train, held) = split_train_test(c, ds.test_fraction, seed)?;
            trains.push(train);
            test.extend(held);
        }
        Ok((trains, test))
    } else {
        let test = generate_test_set(ds.test_samples, ds.dim.expect("validated"), seed)?;
        Ok((clients, test))
    }
}

/// Overrides a sweep axis applies on top of the base config.
#[derive(Debug, Clone, Copy, Default)]
pub struct AxisOverride {
    pub z: Option<f64>,
    pub fixed_v: Option<usize>,
    pub n_clients: Option<usize>,
    pub rounds: Option<u32>,
    pub subsample: Option<f64>,
}

fn run_config(cfg: &ValidatedConfig, seed: u64, ov: &AxisOverride) -> RunConfig {
    let split = match ov.fixed_v {
        Some(v) => SplitStrategy::Fixed { v },
        None => cfg.split.clone(),
    };
    RunConfig {
        seed,
        rounds: ov.rounds.unwrap_or(cfg.raw.privacy.rounds),
        z: ov.z.unwrap_or(cfg.raw.privacy.z),
        delta: cfg.delta,
        subsample_ratio: ov.subsample.unwrap_or(cfg.raw.privacy.subsample_ratio),
        optimizer: cfg.optimizer,
        clip: cfg.clip,
        local: cfg.local.clone(),
        split,
    }
}

/// Execute one experiment (all seeds) with optional axis overrides. Seeds run
/// in parallel; results are kept in seed order.
pub fn execute(cfg: &ValidatedConfig, ov: &AxisOverride) -> LibResult<ExperimentResult> {
    let seeds = cfg.seeds.clone();
    let runs: Vec<LibResult<SeedRun>> = parallel::map_indexed(seeds.len(), |i| {
        let seed = seeds[i];
        let (clients, test) = build_data(cfg, seed, ov.n_clients)?;
        let rc = run_config(cfg, seed, ov);
        let output = run_training(&clients, &test, &rc)?;
        Ok(SeedRun { seed, output })
    });
    let runs = runs.into_iter().collect::<LibResult<Vec<_>>>()?;
    let z = ov.z.unwrap_or(cfg.raw.privacy.z);
    let rounds = ov.rounds.unwrap_or(cfg.raw.privacy.rounds);
    let epsilon = if z > 0.0 {
        accountant::epsilon_for(z, rounds, cfg.delta)?
    } else {
        f64::INFINITY
    };
    // row-count invariant: rounds x seeds, no silent drops
    for run in &runs {
        assert_eq!(
            run.output.reports.len(),
            rounds as usize,
            "run dropped rounds"
        );
    }
    Ok(ExperimentResult {
        runs,
        epsilon,
        delta: cfg.delta,
    })
}

pub fn csv_line(seed: u64, r: &RoundReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.round,
        seed,
        r.xi,
        r.phi,
        r.lambda,
        r.clip_c,
        r.v_per_client.first().copied().unwrap_or(1),
        r.n_participants,
        r.train_loss,
        r.test_acc,
        r.test_auc,
        r.epsilon_so_far,
        u8::from(r.guarded),
    )
}

pub fn render_csv(result: &ExperimentResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for run in &result.runs {
        for r in &run.output.reports {
            out.push_str(&csv_line(run.seed, r));
            out.push('\n');
        }
    }
    out
}

pub fn summarize(cfg: &ValidatedConfig, ov: &AxisOverride, result: &ExperimentResult) -> Summary {
    let per_seed: Vec<SeedFinal> = result
        .runs
        .iter()
        .map(|run| {
            let last = run.output.reports.last().expect("nonempty run");
            SeedFinal {
                seed: run.seed,
                test_acc: last.test_acc,
                test_auc: last.test_auc,
                train_loss: last.train_loss,
                final_v: last.v_per_client.first().copied().unwrap_or(1),
            }
        })
        .collect();
    let stat = |f: &dyn Fn(&SeedFinal) -> f64| {
        let vals: Vec<f64> = per_seed.iter().map(f).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = if vals.len() > 1 {
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64
        } else {
            0.0
        };
        (mean, var.sqrt())
    };
    let (acc_m, acc_s) = stat(&|s| s.test_acc);
    let (auc_m, auc_s) = stat(&|s| s.test_auc);
    let (loss_m, loss_s) = stat(&|s| s.train_loss);
    Summary {
        seeds: cfg.seeds.clone(),
        privacy: SummaryPrivacy {
            z: ov.z.unwrap_or(cfg.raw.privacy.z),
            delta: result.delta,
            epsilon: result.epsilon.is_finite().then_some(result.epsilon),
            rounds: ov.rounds.unwrap_or(cfg.raw.privacy.rounds),
            subsample_ratio: ov.subsample.unwrap_or(cfg.raw.privacy.subsample_ratio),
        },
        per_seed,
        mean: MetricStats {
            test_acc: acc_m,
            test_auc: auc_m,
            train_loss: loss_m,
        },
        std: MetricStats {
            test_acc: acc_s,
            test_auc: auc_s,
            train_loss: loss_s,
        },
    }
}

/// Run the experiment and write rounds.csv, summary.json and optional charts.
pub fn cmd_run(cfg: &ValidatedConfig, out_dir: &Path, svg: bool) -> LibResult<()> {
    let result = execute(cfg, &AxisOverride::default())?;
    write_artifacts(cfg, &AxisOverride::default(), &result, out_dir, svg)?;
    log::info!(
        "run complete: {} seeds x {} rounds -> {}",
        cfg.seeds.len(),
        cfg.raw.privacy.rounds,
        out_dir.display()
    );
    Ok(())
}

pub fn write_artifacts(
    cfg: &ValidatedConfig,
    ov: &AxisOverride,
    result: &ExperimentResult,
    out_dir: &Path,
    svg: bool,
) -> LibResult<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let csv = render_csv(result);
    std::fs::write(out_dir.join("rounds.csv"), &csv).map_err(|e| io_err(out_dir, e))?;
    let summary = summarize(cfg, ov, result);
    let json = serde_json::to_string_pretty(&summary).expect("serializable summary");
    std::fs::write(out_dir.join("summary.json"), json + "\n").map_err(|e| io_err(out_dir, e))?;
    if svg {
        output::write_charts(result, out_dir)?;
    }
    Ok(())
}

fn io_err(path: &Path, e: std::io::Error) -> fedsplit::Error {
    fedsplit::Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

/// Sweep one axis: one experiment per value, consolidated CSV at the root.
pub fn cmd_sweep(cfg: &ValidatedConfig, out_dir: &Path, svg: bool) -> LibResult<()> {
    let sweep = cfg
        .raw
        .sweep
        .as_ref()
        .expect("validated sweep section present");
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut consolidated = format!("axis,value,{CSV_HEADER}\n");
    for value in &sweep.values {
        let mut ov = AxisOverride::default();
        let label: String = match sweep.axis.as_str() {
            "z" => {
                ov.z = Some(*value);
                format!("z{value}")
            }
            "v" => {
                ov.fixed_v = Some(*value as usize);
                format!("v{}", *value as usize)
            }
            "n_clients" => {
                ov.n_clients = Some(*value as usize);
                format!("n{}", *value as usize)
            }
            "rounds" => {
                ov.rounds = Some(*value as u32);
                format!("rounds{}", *value as u32)
            }
            "subsample" => {
                ov.subsample = Some(*value);
                format!("subsample{value}")
            }
            _ => unreachable!("validated axis"),
        };
        let result = execute(cfg, &ov)?;
        for run in &result.runs {
            for r in &run.output.reports {
                consolidated.push_str(&format!("{},{},", sweep.axis, value));
                consolidated.push_str(&csv_line(run.seed, r));
                consolidated.push('\n');
            }
        }
        write_artifacts(cfg, &ov, &result, &out_dir.join(&label), svg)?;
        log::info!("sweep point {label} complete");
    }
    std::fs::write(out_dir.join("consolidated.csv"), consolidated)
        .map_err(|e| io_err(out_dir, e))?;
    Ok(())
}

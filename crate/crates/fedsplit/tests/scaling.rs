//! Doubling the split count approximately halves the measured noise level
//! and doubles the measured diversity level. The check is empirical: levels
//! are averaged over rounds 5 onward of a fixed-clip instrumentation run and
//! the doubling ratios must stay within +-30%.

use fedsplit::data::{generate_federation, generate_test_set};
use fedsplit::federation::{run_training, ClipConfig, OptimizerKind, RunConfig, SplitStrategy};
use fedsplit::train::{BatchSpec, LocalConfig};

fn level_means(v: usize, seed: u64, rounds: u32) -> (f64, f64) {
    let clients = generate_federation(6, 600, 512, 0.3, seed).unwrap();
    let test = generate_test_set(100, 512, seed).unwrap();
    let cfg = RunConfig {
        seed,
        rounds,
        z: 0.5,
        delta: 1e-1,
        subsample_ratio: 1.0,
        optimizer: OptimizerKind::FedAvg,
        clip: ClipConfig::FixedFromFirstRound { frac: 0.1 },
        local: LocalConfig {
            eta: 0.3,
            epochs: 1,
            batch: BatchSpec::Full,
            weight_decay: 0.0,
            dp: None,
        },
        split: SplitStrategy::Fixed { v },
    };
    let out = run_training(&clients, &test, &cfg).unwrap();
    let window: Vec<_> = out.reports.iter().filter(|r| r.round >= 5).collect();
    let xi = window.iter().map(|r| r.xi).sum::<f64>() / window.len() as f64;
    let phi = window.iter().map(|r| r.phi).sum::<f64>() / window.len() as f64;
    (xi, phi)
}

#[test]
fn doubling_v_halves_noise_and_doubles_diversity() {
    let seeds = [1u64, 2];
    let rounds = 20;
    let mut means = std::collections::BTreeMap::new();
    for v in [1usize, 2, 4] {
        let mut xi = 0.0;
        let mut phi = 0.0;
        for &s in &seeds {
            let (x, p) = level_means(v, s, rounds);
            xi += x / seeds.len() as f64;
            phi += p / seeds.len() as f64;
        }
        means.insert(v, (xi, phi));
    }
    for (lo, hi) in [(1usize, 2usize), (2, 4)] {
        let (xi_lo, phi_lo) = means[&lo];
        let (xi_hi, phi_hi) = means[&hi];
        let xi_ratio = xi_hi * 2.0 / xi_lo;
        let phi_ratio = phi_hi / (2.0 * phi_lo);
        assert!(
            (xi_ratio - 1.0).abs() <= 0.30,
            "xi_{hi} * 2 vs xi_{lo}: ratio {xi_ratio:.3}"
        );
        assert!(
            (phi_ratio - 1.0).abs() <= 0.30,
            "phi_{hi} / 2 vs phi_{lo}: ratio {phi_ratio:.3}"
        );
    }
}

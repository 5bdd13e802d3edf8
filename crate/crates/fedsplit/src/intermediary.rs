//! Adaptive sub-client splitting: the controller that chooses how many
//! intermediaries each client presents to the server.
//!
//! Measured per round, the noise-to-diversity ratio `lambda = xi / phi`
//! scales with the split count as `xi_v = xi / v` and `phi_v = v * phi`.
//! Inverting those laws rebases an observation at the current `v` to its
//! `v = 1` equivalent, and the controller drives the rebased ratio toward
//! `1/N` with `v = round(sqrt(N * xi / phi))`. Per-round changes are clamped
//! to one step so the split count cannot oscillate.

use crate::error::{Error, Result};

/// Which participant count the target ratio is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioBase {
    /// The number of original silo clients (default).
    Clients,
    /// The current intermediary count `N_v`.
    Participants,
}

/// Split decision currently in force.
#[derive(Debug, Clone)]
pub struct SplitPlan {
    /// Shards per client; uniform across clients by construction.
    pub v_per_client: Vec<usize>,
    /// Total participants under the plan.
    pub total_participants: usize,
    /// Round at which the plan was last changed.
    pub round_set_at: u64,
    /// True when the last target was truncated by the one-step clamp.
    pub clamped_last_update: bool,
}

impl SplitPlan {
    pub fn uniform(v: usize, n_clients: usize, round: u64) -> Self {
        SplitPlan {
            v_per_client: vec![v; n_clients],
            total_participants: v * n_clients,
            round_set_at: round,
            clamped_last_update: false,
        }
    }

    pub fn v(&self) -> usize {
        self.v_per_client.first().copied().unwrap_or(1)
    }
}

/// One round's ratio measurement at the split count it was taken under.
#[derive(Debug, Clone, Copy)]
pub struct RatioObservation {
    pub xi: f64,
    pub phi: f64,
    pub lambda: f64,
    pub v_current: usize,
}

impl RatioObservation {
    pub fn new(xi: f64, phi: f64, v_current: usize) -> Result<Self> {
        if xi < 0.0 || !xi.is_finite() {
            return Err(Error::invalid("xi", "must be >= 0 and finite"));
        }
        if phi <= 0.0 || !phi.is_finite() {
            return Err(Error::invalid("phi", "must be positive and finite"));
        }
        if v_current == 0 {
            return Err(Error::invalid("v_current", "must be >= 1"));
        }
        Ok(RatioObservation {
            xi,
            phi,
            lambda: xi / phi,
            v_current,
        })
    }
}

/// Invert the scaling laws to recover `v = 1` equivalent levels:
/// `xi_base = v * xi_v`, `phi_base = phi_v / v`.
pub fn rebase_ratio(obs: &RatioObservation) -> (f64, f64) {
    let v = obs.v_current as f64;
    (v * obs.xi, obs.phi / v)
}

/// Split count that puts the projected ratio at `1/N`:
/// `v = max(1, round(sqrt(N * xi / phi)))` on base (v = 1) levels.
pub fn target_v(n: usize, xi_base: f64, phi_base: f64) -> Result<usize> {
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    if phi_base <= 0.0 {
        return Err(Error::invalid("phi_base", "must be positive"));
    }
    if xi_base < 0.0 {
        return Err(Error::invalid("xi_base", "must be >= 0"));
    }
    let target = (n as f64 * xi_base / phi_base).sqrt();
    Ok((target.round() as usize).max(1))
}

/// Hard limits the controller must respect when choosing `v`.
#[derive(Debug, Clone, Copy)]
pub struct SplitLimits {
    /// Largest v that keeps every client's shards nonempty (and trainable
    /// under the configured batch size).
    pub max_v: usize,
}

impl SplitLimits {
    /// Limit from client sizes alone.
    pub fn from_client_sizes(sizes: &[usize]) -> Result<Self> {
        let min = sizes
            .iter()
            .copied()
            .min()
            .ok_or_else(|| Error::Dataset("no clients".into()))?;
        Ok(SplitLimits { max_v: min.max(1) })
    }

    /// Limit from client sizes with every shard at least `batch` samples.
    pub fn with_min_shard(sizes: &[usize], batch: usize) -> Result<Self> {
        let min = sizes
            .iter()
            .copied()
            .min()
            .ok_or_else(|| Error::Dataset("no clients".into()))?;
        let cap = min.checked_div(batch).unwrap_or(min);
        Ok(SplitLimits { max_v: cap.max(1) })
    }
}

/// Compute the next plan from the previous round's observation.
///
/// `initialize` performs the one unclamped jump allowed when the first
/// measured round seeds the controller; afterwards `|v_next - v| <= 1`.
pub fn update_plan(
    plan: &SplitPlan,
    obs: &RatioObservation,
    n_clients: usize,
    round: u64,
    limits: SplitLimits,
    base: RatioBase,
    initialize: bool,
) -> Result<SplitPlan> {
    if round <= plan.round_set_at && !initialize {
        return Err(Error::invalid(
            "round",
            format!("round {round} not after plan round {}", plan.round_set_at),
        ));
    }
    let (xi_base, phi_base) = rebase_ratio(obs);
    let n_ref = match base {
        RatioBase::Clients => n_clients,
        RatioBase::Participants => plan.total_participants,
    };
    let raw_target = target_v(n_ref, xi_base, phi_base)?;
    let current = plan.v();
    let stepped = if initialize {
        raw_target
    } else {
        raw_target.clamp(current.saturating_sub(1), current + 1)
    };
    let bounded = stepped.clamp(1, limits.max_v.max(1));
    let mut next = SplitPlan::uniform(bounded, n_clients, round);
    next.clamped_last_update = bounded != raw_target;
    if bounded == current {
        // unchanged plans keep their original epoch so partitions persist
        next.round_set_at = plan.round_set_at;
    }
    Ok(next)
}

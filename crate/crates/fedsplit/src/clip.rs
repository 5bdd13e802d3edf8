//! Client-level DP machinery: update clipping, the Gaussian aggregation
//! mechanism, and the quantile-tracking clip-bound controller.
//!
//! The mechanism releases `(1/N) (sum_i clip(delta_i, C) + N(0, z^2 C^2 I))`
//! over the N participants of a round. The clip bound C adapts toward the
//! `gamma`-quantile of raw update norms by multiplicative steps
//! `C <- C * exp(-eta_c * (b - gamma))`, where `b` is the (optionally noised)
//! fraction of updates within the bound.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::train::UpdatePacket;
use crate::vector::ParamVector;

/// Clip-bound controller state.
#[derive(Debug, Clone, Copy)]
pub struct ClipState {
    /// Current clip bound, in update-norm units.
    pub c: f64,
    /// Multiplicative adaptation rate.
    pub eta_c: f64,
    /// Target quantile of raw norms.
    pub gamma: f64,
    /// Std of the Gaussian noise on the within-bound count (0 = noiseless).
    pub sigma_b: f64,
}

impl ClipState {
    pub fn new(c: f64, eta_c: f64, gamma: f64, sigma_b: f64) -> Result<Self> {
        if c <= 0.0 || !c.is_finite() {
            return Err(Error::invalid("clip.c", "must be positive"));
        }
        if eta_c <= 0.0 || !eta_c.is_finite() {
            return Err(Error::invalid("clip.eta_c", "must be positive"));
        }
        if !(0.0 < gamma && gamma < 1.0) {
            return Err(Error::invalid("clip.gamma", "must lie in (0, 1)"));
        }
        if sigma_b < 0.0 || !sigma_b.is_finite() {
            return Err(Error::invalid("clip.sigma_b", "must be >= 0"));
        }
        Ok(ClipState {
            c,
            eta_c,
            gamma,
            sigma_b,
        })
    }
}

/// Noise specification for one aggregation round.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    /// Noise multiplier.
    pub z: f64,
    /// Number of participants aggregated this round.
    pub n_participants: usize,
}

impl NoiseSpec {
    /// Realized per-coordinate noise std on the released mean: z * C / N.
    pub fn sigma(&self, c: f64) -> f64 {
        self.z * c / self.n_participants as f64
    }
}

/// Norm-clip `delta` to the ball of radius `c`, preserving direction:
/// `delta / max(||delta|| / c, 1)`.
pub fn clip_update(delta: &ParamVector, c: f64) -> Result<ParamVector> {
    if c <= 0.0 || !c.is_finite() {
        return Err(Error::invalid("c", "clip bound must be positive"));
    }
    let norm = delta.l2_norm();
    let scale = 1.0 / (norm / c).max(1.0);
    delta.scale(scale)
}

/// Everything the metrics layer needs from one aggregation.
#[derive(Debug, Clone)]
pub struct AggregateOutcome {
    /// `(1/N) (sum clipped + noise)` — the released update.
    pub noisy_mean: ParamVector,
    /// Pre-noise sum of clipped updates.
    pub clipped_sum: ParamVector,
    /// Raw (pre-clip) update norms, in packet order.
    pub raw_norms: Vec<f64>,
    /// The realized `N(0, z^2 C^2 I)` draw.
    pub noise_vector: ParamVector,
}

/// Gaussian mechanism over one round of update packets. Summation is
/// index-ordered; `N` is the number of packets actually received.
pub fn aggregate(
    updates: &[UpdatePacket],
    clip: &ClipState,
    noise: &NoiseSpec,
    stream: &mut RngStream,
) -> Result<AggregateOutcome> {
    let first = updates.first().ok_or(Error::EmptyVector)?;
    let dim = first.delta.dim();
    if updates.iter().any(|u| u.delta.dim() != dim) {
        return Err(Error::DimMismatch {
            left: dim,
            right: updates
                .iter()
                .map(|u| u.delta.dim())
                .find(|&d| d != dim)
                .unwrap_or(dim),
        });
    }
    if noise.n_participants != updates.len() {
        return Err(Error::invalid(
            "noise.n_participants",
            format!("{} != {} packets", noise.n_participants, updates.len()),
        ));
    }
    let mut clipped_sum = ParamVector::zeros(dim);
    let mut raw_norms = Vec::with_capacity(updates.len());
    for packet in updates {
        raw_norms.push(packet.delta.l2_norm());
        let clipped = clip_update(&packet.delta, clip.c)?;
        clipped_sum.axpy_in_place(1.0, &clipped)?;
    }
    let noise_vector = stream.gaussian_sample(dim, noise.z * clip.c)?;
    let mut noisy_mean = clipped_sum.clone();
    noisy_mean.axpy_in_place(1.0, &noise_vector)?;
    let noisy_mean = noisy_mean.scale(1.0 / updates.len() as f64)?;
    Ok(AggregateOutcome {
        noisy_mean,
        clipped_sum,
        raw_norms,
        noise_vector,
    })
}

/// One quantile-tracking step of the clip bound. The within-bound fraction is
/// `b = (#{||delta_i|| <= C} + N(0, sigma_b^2)) / N`.
pub fn adapt_clip(
    state: &ClipState,
    raw_norms: &[f64],
    stream: &mut RngStream,
) -> Result<ClipState> {
    if raw_norms.is_empty() {
        return Err(Error::EmptyVector);
    }
    let n = raw_norms.len() as f64;
    let within = raw_norms.iter().filter(|&&x| x <= state.c).count() as f64;
    let noise = if state.sigma_b > 0.0 {
        state.sigma_b * stream.standard_normal()
    } else {
        0.0
    };
    let b = (within + noise) / n;
    let mut next = *state;
    next.c = state.c * (-state.eta_c * (b - state.gamma)).exp();
    Ok(next)
}

/// Effective update-noise multiplier when the quantile estimate is itself
/// noised: `(z^-2 - (2 sigma_b)^-2)^(-1/2)`. Requires `sigma_b > z / 2`.
pub fn noised_quantile_z(z: f64, sigma_b: f64) -> Result<f64> {
    if z <= 0.0 || sigma_b <= 0.0 {
        return Err(Error::invalid("z", "both z and sigma_b must be positive"));
    }
    let inv = z.powi(-2) - (2.0 * sigma_b).powi(-2);
    if inv <= 0.0 {
        return Err(Error::invalid(
            "sigma_b",
            format!("must exceed z/2 = {} for the correction to exist", z / 2.0),
        ));
    }
    Ok(inv.powf(-0.5))
}

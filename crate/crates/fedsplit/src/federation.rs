//! The server round loop: broadcast, local training, DP aggregation, server
//! optimizer step, sub-client splitting and per-round metrics.
//!
//! Per round the server releases `(1/N)(sum_i clip(delta_i, C) + N(0, z^2 C^2 I))`
//! and records two levels built from the same pre-noise clipped sum:
//! noise level `xi = ||zeta|| / ||sum clip(delta_i)||` and diversity level
//! `phi = sum ||delta_i|| / ||sum clip(delta_i)||`. Their ratio
//! `lambda = xi / phi` drives the adaptive sub-client controller.

use crate::accountant;
use crate::clip::{self, AggregateOutcome, ClipState, NoiseSpec};
use crate::data::{shard_datasets, ClientDataset, IntermediaryPartition, Sample};
use crate::error::{Error, Result};
use crate::intermediary::{update_plan, RatioBase, RatioObservation, SplitLimits, SplitPlan};
use crate::model::Model;
use crate::parallel;
use crate::rng::{streams, RngStream};
use crate::train::{local_update, BatchSpec, LocalConfig, UpdatePacket};
use crate::vector::ParamVector;

/// Aggregate norms below this are treated as degenerate; the previous round's
/// levels are carried forward and the round is flagged.
pub const DENOM_GUARD: f64 = 1e-12;

/// Noise level: realized noise norm over the clipped-aggregate norm.
/// `None` when the denominator falls under the guard.
pub fn noise_level(zeta: &ParamVector, clipped_sum: &ParamVector) -> Result<Option<f64>> {
    if zeta.dim() != clipped_sum.dim() {
        return Err(Error::DimMismatch {
            left: zeta.dim(),
            right: clipped_sum.dim(),
        });
    }
    let denom = clipped_sum.l2_norm();
    if denom < DENOM_GUARD {
        return Ok(None);
    }
    Ok(Some(zeta.l2_norm() / denom))
}

/// Diversity level: sum of raw update norms over the clipped-aggregate norm.
pub fn diversity_level(raw_norms: &[f64], clipped_sum: &ParamVector) -> Result<Option<f64>> {
    if raw_norms.is_empty() {
        return Err(Error::EmptyVector);
    }
    let denom = clipped_sum.l2_norm();
    if denom < DENOM_GUARD {
        return Ok(None);
    }
    Ok(Some(raw_norms.iter().sum::<f64>() / denom))
}

/// Server-side optimizer applied to the released noisy mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    FedAvg,
    FedAdam(FedAdamConfig),
    /// Step-normalized averaging; packets are rescaled by `tau_eff / tau_i`
    /// before clipping, then applied like FedAvg.
    FedNova,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FedAdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    /// Adaptivity floor added to the root second moment.
    pub tau: f64,
    /// Server learning rate.
    pub eta_s: f64,
}

impl Default for FedAdamConfig {
    fn default() -> Self {
        FedAdamConfig {
            beta1: 0.9,
            beta2: 0.99,
            tau: 1e-3,
            eta_s: 1e-2,
        }
    }
}

/// Mutable server optimizer state.
#[derive(Debug, Clone)]
pub enum ServerOptimizer {
    FedAvg,
    FedAdam {
        cfg: FedAdamConfig,
        m: ParamVector,
        v: ParamVector,
        t: u64,
    },
    FedNova,
}

impl ServerOptimizer {
    fn new(kind: OptimizerKind, dim: usize) -> Self {
        match kind {
            OptimizerKind::FedAvg => ServerOptimizer::FedAvg,
            OptimizerKind::FedNova => ServerOptimizer::FedNova,
            OptimizerKind::FedAdam(cfg) => ServerOptimizer::FedAdam {
                cfg,
                m: ParamVector::zeros(dim),
                v: ParamVector::zeros(dim),
                t: 0,
            },
        }
    }
}

/// Server model plus optimizer and mechanism state.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub model: Model,
    pub round: u64,
    pub optimizer: ServerOptimizer,
}

impl ServerState {
    pub fn new(model: Model, kind: OptimizerKind) -> Self {
        let dim = model.dim();
        ServerState {
            model,
            round: 0,
            optimizer: ServerOptimizer::new(kind, dim),
        }
    }
}

/// Apply one server optimizer step to the released mean update.
pub fn server_step(state: &mut ServerState, noisy_mean: &ParamVector) -> Result<()> {
    match &mut state.optimizer {
        ServerOptimizer::FedAvg | ServerOptimizer::FedNova => {
            state.model.theta.axpy_in_place(1.0, noisy_mean)?;
        }
        ServerOptimizer::FedAdam { cfg, m, v, t } => {
            *t += 1;
            let g = noisy_mean.scale(-1.0)?; // pseudo-gradient
            let b1 = cfg.beta1;
            let b2 = cfg.beta2;
            let mut m_next = m.scale(b1)?;
            m_next.axpy_in_place(1.0 - b1, &g)?;
            let g_sq = ParamVector::new(g.iter().map(|x| x * x).collect())?;
            let mut v_next = v.scale(b2)?;
            v_next.axpy_in_place(1.0 - b2, &g_sq)?;
            let bc1 = 1.0 - b1.powi(*t as i32);
            let bc2 = 1.0 - b2.powi(*t as i32);
            let step: Vec<f64> = m_next
                .iter()
                .zip(v_next.iter())
                .map(|(mi, vi)| {
                    let m_hat = mi / bc1;
                    let v_hat = vi / bc2;
                    -cfg.eta_s * m_hat / (v_hat.sqrt() + cfg.tau)
                })
                .collect();
            state
                .model
                .theta
                .axpy_in_place(1.0, &ParamVector::new(step)?)?;
            *m = m_next;
            *v = v_next;
        }
    }
    state.round += 1;
    Ok(())
}

/// Uniform sample without replacement of `round(ratio * n)` indices
/// (minimum 1), deterministic per stream, returned in ascending order.
pub fn subsample(n: usize, ratio: f64, stream: &mut RngStream) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid("ratio", "must lie in (0, 1]"));
    }
    if ratio == 1.0 {
        return Ok((0..n).collect());
    }
    let k = ((ratio * n as f64).round() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    stream.shuffle(&mut idx);
    let mut selected = idx[..k].to_vec();
    selected.sort_unstable();
    Ok(selected)
}

/// Evaluation summary over a pooled test set.
#[derive(Debug, Clone, Copy)]
pub struct EvalReport {
    pub acc: f64,
    /// Rank-statistic AUC with ties counted one half; -1 when undefined.
    pub auc: f64,
    pub auc_defined: bool,
    pub loss: f64,
}

/// Accuracy at threshold 0.5, rank-statistic AUC and mean loss.
pub fn evaluate(model: &Model, test: &[Sample]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Dataset("empty test set".into()));
    }
    let mut scores = Vec::with_capacity(test.len());
    let mut correct = 0usize;
    for s in test {
        let p = model.predict_prob(s)?;
        let predicted = p > 0.5;
        if predicted == (s.label > 0.5) {
            correct += 1;
        }
        scores.push((p, s.label > 0.5));
    }
    let acc = correct as f64 / test.len() as f64;
    let loss = model.loss(test)?;
    let n_pos = scores.iter().filter(|(_, y)| *y).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(EvalReport {
            acc,
            auc: -1.0,
            auc_defined: false,
            loss,
        });
    }
    // Mann-Whitney U via average ranks; identical to counting positive
    // pairs with ties worth one half.
    scores.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < scores.len() {
        let mut j = i;
        while j + 1 < scores.len() && scores[j + 1].0 == scores[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for item in &scores[i..=j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    let auc = u / (n_pos as f64 * n_neg as f64);
    Ok(EvalReport {
        acc,
        auc,
        auc_defined: true,
        loss,
    })
}

// ---------------------------------------------------------------------------
// Full training runs
// ---------------------------------------------------------------------------

/// Clip-bound configuration for a run.
#[derive(Debug, Clone, Copy)]
pub enum ClipConfig {
    /// No clipping and no noise; only valid with `z = 0`.
    None,
    /// Constant bound.
    Fixed { c: f64 },
    /// Constant bound set to `frac` times the median norm of unsplit
    /// client updates measured at the initial model.
    FixedFromFirstRound { frac: f64 },
    /// Quantile-tracking bound. `c0 = None` initializes from the median of
    /// the first round's raw update norms; that median is read pre-noise, a
    /// data-dependent choice the privacy accounting does not cover.
    Adaptive {
        c0: Option<f64>,
        eta_c: f64,
        gamma: f64,
        sigma_b: f64,
        /// Apply the noised-quantile correction to the update noise.
        noised_correction: bool,
    },
}

impl ClipConfig {
    pub fn adaptive_default() -> Self {
        ClipConfig::Adaptive {
            c0: None,
            eta_c: 0.2,
            gamma: 0.5,
            sigma_b: 0.0,
            noised_correction: false,
        }
    }
}

/// How participants are formed from clients.
#[derive(Debug, Clone)]
pub enum SplitStrategy {
    /// Every client splits into exactly `v` shards for the whole run.
    Fixed { v: usize },
    /// Ratio-driven adaptive splitting.
    Adaptive { base: RatioBase },
    /// Caller-provided partitions, fixed for the whole run. Must cover every
    /// client in order.
    Explicit(Vec<IntermediaryPartition>),
}

/// Everything needed to execute one training run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub rounds: u32,
    pub z: f64,
    pub delta: f64,
    pub subsample_ratio: f64,
    pub optimizer: OptimizerKind,
    pub clip: ClipConfig,
    pub local: LocalConfig,
    pub split: SplitStrategy,
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds", "must be >= 1"));
        }
        if self.z < 0.0 || !self.z.is_finite() {
            return Err(Error::invalid("z", "must be >= 0"));
        }
        if self.z > 0.0 && !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta", "must lie in (0, 1) when z > 0"));
        }
        if !(self.subsample_ratio > 0.0 && self.subsample_ratio <= 1.0) {
            return Err(Error::invalid("subsample_ratio", "must lie in (0, 1]"));
        }
        if matches!(self.clip, ClipConfig::None) && self.z > 0.0 {
            return Err(Error::invalid(
                "clip",
                "clipping cannot be disabled on a private run (z > 0)",
            ));
        }
        self.local.validate()
    }
}

/// Per-round record emitted by a run.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: u64,
    pub xi: f64,
    pub phi: f64,
    pub lambda: f64,
    pub clip_c: f64,
    pub v_per_client: Vec<usize>,
    pub n_participants: usize,
    pub train_loss: f64,
    pub test_acc: f64,
    pub test_auc: f64,
    pub epsilon_so_far: f64,
    /// True when the aggregate norm fell under the guard and levels were
    /// carried forward.
    pub guarded: bool,
    pub auc_defined: bool,
    /// True when the controller's one-step clamp truncated its raw target.
    pub clamp_engaged: bool,
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub reports: Vec<RoundReport>,
    pub model: Model,
}

enum ResolvedClip {
    Unclipped,
    Pending(ClipConfig),
    Ready(ClipState, bool), // state, noised_correction
}

struct Trainer<'a> {
    cfg: &'a RunConfig,
    clients: &'a [ClientDataset],
    test: &'a [Sample],
    state: ServerState,
    clip: ResolvedClip,
    plan: SplitPlan,
    partitions: Vec<IntermediaryPartition>,
    shards: Vec<Vec<Sample>>,
    shard_owner: Vec<usize>,
    controller_ready: bool,
    last_obs: Option<RatioObservation>,
    prev_xi: f64,
    prev_phi: f64,
}

impl<'a> Trainer<'a> {
    fn new(clients: &'a [ClientDataset], test: &'a [Sample], cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        let first = clients
            .first()
            .ok_or_else(|| Error::Dataset("no clients".into()))?;
        let dim = first.feature_dim();
        if clients.iter().any(|c| c.feature_dim() != dim) {
            return Err(Error::Dataset(
                "clients disagree on feature dimension".into(),
            ));
        }
        let model = Model::logistic_zeros(dim);
        let state = ServerState::new(model, cfg.optimizer);
        let v0 = match &cfg.split {
            SplitStrategy::Fixed { v } => *v,
            SplitStrategy::Adaptive { .. } => 1,
            SplitStrategy::Explicit(parts) => {
                if parts.len() != clients.len() {
                    return Err(Error::invalid(
                        "split",
                        "explicit partitions must cover every client",
                    ));
                }
                parts.first().map(|p| p.v).unwrap_or(1)
            }
        };
        let clip = match cfg.clip {
            ClipConfig::None => ResolvedClip::Unclipped,
            ClipConfig::Fixed { c } => {
                ResolvedClip::Ready(ClipState::new(c, 0.2, 0.5, 0.0)?, false)
            }
            other => ResolvedClip::Pending(other),
        };
        let mut trainer = Trainer {
            cfg,
            clients,
            test,
            state,
            clip,
            plan: SplitPlan::uniform(v0, clients.len(), 0),
            partitions: Vec::new(),
            shards: Vec::new(),
            shard_owner: Vec::new(),
            controller_ready: false,
            last_obs: None,
            prev_xi: 0.0,
            prev_phi: 1.0,
        };
        trainer.rebuild_shards(0)?;
        Ok(trainer)
    }

    fn split_limits(&self) -> Result<SplitLimits> {
        let sizes: Vec<usize> = self.clients.iter().map(ClientDataset::len).collect();
        match self.cfg.local.batch {
            BatchSpec::Fixed(k) => SplitLimits::with_min_shard(&sizes, k),
            BatchSpec::Full => SplitLimits::from_client_sizes(&sizes),
        }
    }

    fn rebuild_shards(&mut self, plan_round: u64) -> Result<()> {
        self.partitions = match &self.cfg.split {
            SplitStrategy::Explicit(parts) => parts.clone(),
            _ => self
                .clients
                .iter()
                .map(|c| {
                    crate::data::split_client_at_round(c, self.plan.v(), self.cfg.seed, plan_round)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        self.shards.clear();
        self.shard_owner.clear();
        for (position, (client, partition)) in
            self.clients.iter().zip(&self.partitions).enumerate()
        {
            for shard in shard_datasets(client, partition)? {
                self.shards.push(shard.samples);
                self.shard_owner.push(position);
            }
        }
        Ok(())
    }

    /// Median norm of unsplit client updates at the initial model, used to
    /// resolve `FixedFromFirstRound` clip bounds.
    fn calibration_median(&self) -> Result<f64> {
        let model = &self.state.model;
        let norms_res: Vec<Result<f64>> = parallel::map_indexed(self.clients.len(), |i| {
            let mut stream = RngStream::new(self.cfg.seed, streams::CLIP_CALIBRATION | i as u64, 0);
            local_update(
                model,
                &self.clients[i].samples,
                &self.cfg.local,
                &mut stream,
            )
            .map(|p| p.delta.l2_norm())
        });
        let mut norms = norms_res.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(median(&mut norms))
    }

    fn execute_round(&mut self, round: u64) -> Result<RoundReport> {
        let cfg = self.cfg;
        // participant selection: whole clients drop out under subsampling
        let selected_clients = subsample(
            self.clients.len(),
            cfg.subsample_ratio,
            &mut RngStream::new(cfg.seed, streams::SUBSAMPLE, round),
        )?;
        let selected: Vec<usize> = (0..self.shards.len())
            .filter(|&i| selected_clients.binary_search(&self.shard_owner[i]).is_ok())
            .collect();

        // local training, one stream per participant ordinal
        let model = &self.state.model;
        let shards = &self.shards;
        let packets_res: Vec<Result<UpdatePacket>> =
            parallel::map_indexed(selected.len(), |ordinal| {
                let mut stream =
                    RngStream::new(cfg.seed, streams::participant(ordinal as u64), round);
                local_update(model, &shards[selected[ordinal]], &cfg.local, &mut stream)
            });
        let mut packets = packets_res.into_iter().collect::<Result<Vec<_>>>()?;

        // step-count normalization ahead of clipping
        if matches!(cfg.optimizer, OptimizerKind::FedNova) {
            normalize_by_steps(&mut packets)?;
        }

        // resolve a pending clip bound from this round's raw norms
        if let ResolvedClip::Pending(mode) = &self.clip {
            self.clip = match *mode {
                ClipConfig::FixedFromFirstRound { frac } => {
                    if frac <= 0.0 || !frac.is_finite() {
                        return Err(Error::invalid("clip.frac", "must be positive"));
                    }
                    let c = frac * self.calibration_median()?;
                    ResolvedClip::Ready(ClipState::new(c, 0.2, 0.5, 0.0)?, false)
                }
                ClipConfig::Adaptive {
                    c0,
                    eta_c,
                    gamma,
                    sigma_b,
                    noised_correction,
                } => {
                    let c = match c0 {
                        Some(c) => c,
                        None => {
                            let mut norms: Vec<f64> =
                                packets.iter().map(|p| p.delta.l2_norm()).collect();
                            median(&mut norms)
                        }
                    };
                    ResolvedClip::Ready(
                        ClipState::new(c, eta_c, gamma, sigma_b)?,
                        noised_correction,
                    )
                }
                ClipConfig::None | ClipConfig::Fixed { .. } => unreachable!("resolved at init"),
            };
        }

        // aggregate
        let outcome = match &self.clip {
            ResolvedClip::Unclipped => aggregate_unclipped(&packets)?,
            ResolvedClip::Ready(state, noised) => {
                let z_eff = if *noised && state.sigma_b > 0.0 && cfg.z > 0.0 {
                    clip::noised_quantile_z(cfg.z, state.sigma_b)?
                } else {
                    cfg.z
                };
                let spec = NoiseSpec {
                    z: z_eff,
                    n_participants: packets.len(),
                };
                clip::aggregate(
                    &packets,
                    state,
                    &spec,
                    &mut RngStream::new(cfg.seed, streams::SERVER_NOISE, round),
                )?
            }
            ResolvedClip::Pending(_) => unreachable!("resolved above"),
        };

        // levels from the raw aggregation inputs
        let xi_opt = noise_level(&outcome.noise_vector, &outcome.clipped_sum)?;
        let phi_opt = diversity_level(&outcome.raw_norms, &outcome.clipped_sum)?;
        let guarded = xi_opt.is_none() || phi_opt.is_none();
        let xi = xi_opt.unwrap_or(self.prev_xi);
        let phi = phi_opt.unwrap_or(self.prev_phi);
        let lambda = if phi > 0.0 { xi / phi } else { 0.0 };
        self.prev_xi = xi;
        self.prev_phi = phi;

        // quantile tracking
        if let ResolvedClip::Ready(state, _) = &mut self.clip {
            if matches!(cfg.clip, ClipConfig::Adaptive { .. }) {
                let next = clip::adapt_clip(
                    state,
                    &outcome.raw_norms,
                    &mut RngStream::new(cfg.seed, streams::QUANTILE_NOISE, round),
                )?;
                *state = next;
            }
        }

        // server update
        server_step(&mut self.state, &outcome.noisy_mean)?;

        // controller bookkeeping for the next round; the report carries the
        // plan this round actually ran under
        let mut clamp_engaged = false;
        let v_used = self.plan.v();
        let v_report = self.plan.v_per_client.clone();
        if let SplitStrategy::Adaptive { base } = &cfg.split {
            if !guarded && phi > 0.0 {
                let obs = RatioObservation::new(xi, phi, v_used)?;
                self.last_obs = Some(obs);
                let limits = self.split_limits()?;
                let initialize = !self.controller_ready;
                let next = update_plan(
                    &self.plan,
                    &obs,
                    self.clients.len(),
                    round,
                    limits,
                    *base,
                    initialize,
                )?;
                self.controller_ready = true;
                clamp_engaged = next.clamped_last_update;
                if next.v() != self.plan.v() {
                    self.plan = next;
                    self.rebuild_shards(round)?;
                } else {
                    self.plan.clamped_last_update = next.clamped_last_update;
                }
            }
        }

        // evaluation
        let eval = evaluate(&self.state.model, self.test)?;
        let train_loss = pooled_train_loss(&self.state.model, self.clients)?;
        let epsilon_so_far = if cfg.z > 0.0 {
            accountant::epsilon_for(cfg.z, round as u32, cfg.delta)?
        } else {
            f64::INFINITY
        };
        let clip_c = match &self.clip {
            ResolvedClip::Ready(state, _) => state.c,
            _ => 0.0,
        };
        Ok(RoundReport {
            round,
            xi,
            phi,
            lambda,
            clip_c,
            v_per_client: v_report,
            n_participants: packets.len(),
            train_loss,
            test_acc: eval.acc,
            test_auc: eval.auc,
            epsilon_so_far,
            guarded,
            auc_defined: eval.auc_defined,
            clamp_engaged,
        })
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite norms"));
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn pooled_train_loss(model: &Model, clients: &[ClientDataset]) -> Result<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for c in clients {
        acc += model.loss(&c.samples)? * c.len() as f64;
        n += c.len();
    }
    Ok(acc / n as f64)
}

/// Rescale packets by `tau_eff / tau_i` with `tau_eff` the sample-weighted
/// mean step count. Equal step counts rescale by exactly 1.
fn normalize_by_steps(packets: &mut [UpdatePacket]) -> Result<()> {
    let total_samples: u128 = packets.iter().map(|p| p.samples as u128).sum();
    let weighted_steps: u128 = packets
        .iter()
        .map(|p| p.samples as u128 * p.steps as u128)
        .sum();
    if total_samples == 0 {
        return Err(Error::Dataset("packets hold no samples".into()));
    }
    let tau_eff = weighted_steps as f64 / total_samples as f64;
    for p in packets.iter_mut() {
        if p.steps == 0 {
            continue; // zero-step packets carry a zero delta already
        }
        let factor = tau_eff / p.steps as f64;
        p.delta = p.delta.scale(factor)?;
    }
    Ok(())
}

/// Plain mean of raw updates with a zero noise vector, for non-private runs.
fn aggregate_unclipped(packets: &[UpdatePacket]) -> Result<AggregateOutcome> {
    let first = packets.first().ok_or(Error::EmptyVector)?;
    let dim = first.delta.dim();
    let mut clipped_sum = ParamVector::zeros(dim);
    let mut raw_norms = Vec::with_capacity(packets.len());
    for p in packets {
        if p.delta.dim() != dim {
            return Err(Error::DimMismatch {
                left: dim,
                right: p.delta.dim(),
            });
        }
        raw_norms.push(p.delta.l2_norm());
        clipped_sum.axpy_in_place(1.0, &p.delta)?;
    }
    let noisy_mean = clipped_sum.scale(1.0 / packets.len() as f64)?;
    Ok(AggregateOutcome {
        noisy_mean,
        clipped_sum,
        raw_norms,
        noise_vector: ParamVector::zeros(dim),
    })
}

/// Execute a full training run: `rounds` federated rounds from a zero
/// logistic model, reporting per-round levels and evaluation metrics.
pub fn run_training(
    clients: &[ClientDataset],
    test: &[Sample],
    cfg: &RunConfig,
) -> Result<RunOutput> {
    let mut trainer = Trainer::new(clients, test, cfg)?;
    let mut reports = Vec::with_capacity(cfg.rounds as usize);
    for round in 1..=u64::from(cfg.rounds) {
        reports.push(trainer.execute_round(round)?);
    }
    Ok(RunOutput {
        reports,
        model: trainer.state.model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_federation, generate_test_set};
    use crate::model::grad;

    fn unit_packet(values: Vec<f64>) -> UpdatePacket {
        UpdatePacket {
            delta: ParamVector::new(values).unwrap(),
            steps: 1,
            samples: 1,
        }
    }

    #[test]
    fn noise_level_cases() {
        let zeta = ParamVector::new(vec![0.0, 2.0]).unwrap();
        let sum = ParamVector::new(vec![4.0, 0.0]).unwrap();
        assert_eq!(noise_level(&zeta, &sum).unwrap(), Some(0.5));
        let zero = ParamVector::zeros(2);
        assert_eq!(noise_level(&zero, &sum).unwrap(), Some(0.0));
        // degenerate denominator guards
        assert_eq!(noise_level(&zeta, &zero).unwrap(), None);
    }

    #[test]
    fn diversity_level_cases() {
        // perfectly aligned updates below the bound: phi = 1
        let sum = ParamVector::new(vec![3.0, 0.0]).unwrap();
        assert!(close(
            diversity_level(&[1.0, 1.0, 1.0], &sum).unwrap().unwrap(),
            1.0
        ));
        // two orthogonal unit updates: phi = sqrt(2)
        let sum = ParamVector::new(vec![1.0, 1.0]).unwrap();
        assert!(close(
            diversity_level(&[1.0, 1.0], &sum).unwrap().unwrap(),
            std::f64::consts::SQRT_2
        ));
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn fedavg_zero_update_is_fixed_point() {
        let model = Model::logistic_zeros(3);
        let mut state = ServerState::new(model.clone(), OptimizerKind::FedAvg);
        server_step(&mut state, &ParamVector::zeros(4)).unwrap();
        assert_eq!(state.model.theta, model.theta);
        assert_eq!(state.round, 1);
    }

    #[test]
    fn fedadam_first_step_is_bounded_by_eta_s() {
        let cfg = FedAdamConfig::default();
        let mut state = ServerState::new(Model::logistic_zeros(3), OptimizerKind::FedAdam(cfg));
        let g = ParamVector::new(vec![0.5, -2.0, 0.01, 1.0]).unwrap();
        server_step(&mut state, &g).unwrap();
        for (step, gi) in state.model.theta.iter().zip(g.iter()) {
            // first Adam step moves along the pseudo-gradient's sign with
            // magnitude at most eta_s / (1 + tau/|g|) < eta_s
            assert!(step.abs() <= cfg.eta_s);
            if gi.abs() > 1e-6 {
                assert_eq!(step.signum(), gi.signum());
            }
        }
    }

    #[test]
    fn subsample_cases() {
        let mut s = RngStream::new(1, 2, 3);
        let sel = subsample(6, 2.0 / 3.0, &mut s).unwrap();
        assert_eq!(sel.len(), 4);
        let all = subsample(5, 1.0, &mut RngStream::new(1, 2, 3)).unwrap();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        let a = subsample(10, 0.5, &mut RngStream::new(9, 9, 9)).unwrap();
        let b = subsample(10, 0.5, &mut RngStream::new(9, 9, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evaluate_auc_hand_case() {
        // scores {pos: 0.9, 0.4; neg: 0.6, 0.1} -> AUC = 3/4
        let mk = |x: f64, y: f64| Sample {
            features: ParamVector::new(vec![x]).unwrap(),
            label: y,
        };
        // logistic model with theta = (1, 0): prob = sigmoid(x)
        let model = Model::logistic(ParamVector::new(vec![1.0, 0.0]).unwrap());
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let test = vec![
            mk(logit(0.9), 1.0),
            mk(logit(0.4), 1.0),
            mk(logit(0.6), 0.0),
            mk(logit(0.1), 0.0),
        ];
        let r = evaluate(&model, &test).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-12);
        assert!(r.auc_defined);
        // perfectly separated scores
        let test = vec![mk(3.0, 1.0), mk(2.5, 1.0), mk(-2.0, 0.0)];
        let r = evaluate(&model, &test).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.acc, 1.0);
        // single-class is flagged undefined
        let test = vec![mk(1.0, 1.0), mk(2.0, 1.0)];
        let r = evaluate(&model, &test).unwrap();
        assert!(!r.auc_defined);
        assert_eq!(r.auc, -1.0);
    }

    #[test]
    fn auc_matches_brute_force_pair_counting() {
        let mut stream = RngStream::new(40, 0, 0);
        let model = Model::logistic(ParamVector::new(vec![1.0, 0.3, 0.0]).unwrap());
        let test: Vec<Sample> = (0..60)
            .map(|_| Sample {
                features: stream.gaussian_sample(2, 1.0).unwrap(),
                label: f64::from(stream.uniform() < 0.5),
            })
            .collect();
        let r = evaluate(&model, &test).unwrap();
        // brute force over all positive/negative pairs, ties worth 1/2
        let scored: Vec<(f64, bool)> = test
            .iter()
            .map(|s| (model.predict_prob(s).unwrap(), s.label > 0.5))
            .collect();
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (sp, yp) in &scored {
            if !yp {
                continue;
            }
            for (sn, yn) in &scored {
                if *yn {
                    continue;
                }
                pairs += 1.0;
                if sp > sn {
                    wins += 1.0;
                } else if sp == sn {
                    wins += 0.5;
                }
            }
        }
        assert!((r.auc - wins / pairs).abs() < 1e-12);
    }

    #[test]
    fn fednova_equal_steps_reduces_to_fedavg_bitwise() {
        let mut a = vec![
            unit_packet(vec![0.3, -0.1]),
            unit_packet(vec![-0.2, 0.4]),
            unit_packet(vec![0.05, 0.05]),
        ];
        for p in &mut a {
            p.steps = 7;
            p.samples = 50;
        }
        let b = a.clone();
        normalize_by_steps(&mut a).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(
                pa.delta, pb.delta,
                "equal-step normalization must be identity"
            );
        }
    }

    #[test]
    fn nonprivate_loop_equals_reference_fedavg_bitwise() {
        let clients = generate_federation(4, 30, 3, 0.2, 11).unwrap();
        let test = generate_test_set(40, 3, 11).unwrap();
        let cfg = RunConfig {
            seed: 11,
            rounds: 3,
            z: 0.0,
            delta: 1e-2,
            subsample_ratio: 1.0,
            optimizer: OptimizerKind::FedAvg,
            clip: ClipConfig::None,
            local: LocalConfig {
                eta: 0.2,
                epochs: 1,
                batch: BatchSpec::Full,
                weight_decay: 0.0,
                dp: None,
            },
            split: SplitStrategy::Fixed { v: 1 },
        };
        let out = run_training(&clients, &test, &cfg).unwrap();

        // independent plain FedAvg: same local updates, mean application
        let mut theta = ParamVector::zeros(4);
        for round in 1..=3u64 {
            let model = Model::logistic(theta.clone());
            let mut mean = ParamVector::zeros(4);
            for (i, c) in clients.iter().enumerate() {
                let mut stream = RngStream::new(11, streams::participant(i as u64), round);
                let p = local_update(&model, &c.samples, &cfg.local, &mut stream).unwrap();
                mean.axpy_in_place(1.0, &p.delta).unwrap();
            }
            let mean = mean.scale(1.0 / clients.len() as f64).unwrap();
            theta.axpy_in_place(1.0, &mean).unwrap();
        }
        assert_eq!(out.model.theta, theta);
    }

    #[test]
    fn single_full_batch_round_is_centralized_gradient_step() {
        // z = 0, v = 1, one full-batch local step, equal client sizes: the
        // round equals one centralized gradient-descent step on the pooled
        // data (up to floating summation order).
        let clients = generate_federation(3, 40, 3, 0.0, 13).unwrap();
        let test = generate_test_set(20, 3, 13).unwrap();
        let cfg = RunConfig {
            seed: 13,
            rounds: 1,
            z: 0.0,
            delta: 1e-2,
            subsample_ratio: 1.0,
            optimizer: OptimizerKind::FedAvg,
            clip: ClipConfig::None,
            local: LocalConfig {
                eta: 0.5,
                epochs: 1,
                batch: BatchSpec::Full,
                weight_decay: 0.0,
                dp: None,
            },
            split: SplitStrategy::Fixed { v: 1 },
        };
        let out = run_training(&clients, &test, &cfg).unwrap();
        let pooled: Vec<Sample> = clients.iter().flat_map(|c| c.samples.clone()).collect();
        let g = grad(&Model::logistic_zeros(3), &pooled).unwrap();
        let expect = g.scale(-0.5).unwrap();
        for (a, b) in out.model.theta.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn run_is_deterministic() {
        let clients = generate_federation(3, 24, 3, 0.3, 7).unwrap();
        let test = generate_test_set(30, 3, 7).unwrap();
        let cfg = RunConfig {
            seed: 7,
            rounds: 4,
            z: 0.5,
            delta: 1e-1,
            subsample_ratio: 2.0 / 3.0,
            optimizer: OptimizerKind::FedAvg,
            clip: ClipConfig::adaptive_default(),
            local: LocalConfig {
                eta: 0.2,
                epochs: 1,
                batch: BatchSpec::Fixed(8),
                weight_decay: 0.0,
                dp: None,
            },
            split: SplitStrategy::Adaptive {
                base: RatioBase::Clients,
            },
        };
        let a = run_training(&clients, &test, &cfg).unwrap();
        let b = run_training(&clients, &test, &cfg).unwrap();
        assert_eq!(a.model.theta, b.model.theta);
        for (ra, rb) in a.reports.iter().zip(&b.reports) {
            assert_eq!(ra.xi, rb.xi);
            assert_eq!(ra.test_acc, rb.test_acc);
            assert_eq!(ra.v_per_client, rb.v_per_client);
        }
    }

    #[test]
    fn report_counts_are_consistent() {
        let clients = generate_federation(5, 20, 2, 0.1, 3).unwrap();
        let test = generate_test_set(25, 2, 3).unwrap();
        let cfg = RunConfig {
            seed: 3,
            rounds: 6,
            z: 0.3,
            delta: 1e-1,
            subsample_ratio: 1.0,
            optimizer: OptimizerKind::FedAvg,
            clip: ClipConfig::adaptive_default(),
            local: LocalConfig {
                eta: 0.1,
                epochs: 1,
                batch: BatchSpec::Full,
                weight_decay: 0.0,
                dp: None,
            },
            split: SplitStrategy::Fixed { v: 2 },
        };
        let out = run_training(&clients, &test, &cfg).unwrap();
        assert_eq!(out.reports.len(), 6);
        for (i, r) in out.reports.iter().enumerate() {
            assert_eq!(r.round, i as u64 + 1);
            assert_eq!(r.n_participants, 10);
            assert!(r.lambda.is_finite());
            if !r.guarded && r.phi > 0.0 {
                assert!((r.lambda - r.xi / r.phi).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn clip_disabled_with_noise_is_rejected() {
        let clients = generate_federation(2, 10, 2, 0.0, 1).unwrap();
        let test = generate_test_set(10, 2, 1).unwrap();
        let cfg = RunConfig {
            seed: 1,
            rounds: 1,
            z: 0.5,
            delta: 1e-1,
            subsample_ratio: 1.0,
            optimizer: OptimizerKind::FedAvg,
            clip: ClipConfig::None,
            local: LocalConfig {
                eta: 0.1,
                epochs: 1,
                batch: BatchSpec::Full,
                weight_decay: 0.0,
                dp: None,
            },
            split: SplitStrategy::Fixed { v: 1 },
        };
        assert!(run_training(&clients, &test, &cfg).is_err());
    }
}

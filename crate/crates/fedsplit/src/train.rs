//! Client-side training: plain SGD producing round updates, and sample-level
//! DP-SGD with per-sample clipping and batch-level Gaussian noise.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::RngStream;
use crate::vector::ParamVector;

/// Batch size selection for local SGD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchSpec {
    /// One batch containing the whole shard.
    Full,
    Fixed(usize),
}

impl BatchSpec {
    pub fn resolve(&self, shard_len: usize) -> Result<usize> {
        match *self {
            BatchSpec::Full => Ok(shard_len),
            BatchSpec::Fixed(k) => {
                if k == 0 {
                    return Err(Error::invalid("batch_size", "must be >= 1"));
                }
                if k > shard_len {
                    return Err(Error::invalid(
                        "batch_size",
                        format!("{k} exceeds shard size {shard_len}"),
                    ));
                }
                Ok(k)
            }
        }
    }
}

/// Sample-level DP parameters for DP-SGD.
#[derive(Debug, Clone, Copy)]
pub struct DpLocal {
    /// Noise multiplier.
    pub z: f64,
    /// Per-sample gradient clip bound.
    pub c: f64,
}

/// Local training hyperparameters.
#[derive(Debug, Clone)]
pub struct LocalConfig {
    pub eta: f64,
    pub epochs: u32,
    pub batch: BatchSpec,
    /// L2 penalty added to the local gradient (0 disables).
    pub weight_decay: f64,
    pub dp: Option<DpLocal>,
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 || !self.eta.is_finite() {
            return Err(Error::invalid("eta", "must be positive"));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::invalid("weight_decay", "must be >= 0"));
        }
        if let Some(dp) = &self.dp {
            if dp.z < 0.0 || !dp.z.is_finite() {
                return Err(Error::invalid("dp.z", "must be >= 0"));
            }
            if dp.c <= 0.0 || !dp.c.is_finite() {
                return Err(Error::invalid("dp.c", "must be positive"));
            }
        }
        Ok(())
    }
}

/// One participant's round contribution.
#[derive(Debug, Clone)]
pub struct UpdatePacket {
    /// Raw parameter difference, local minus received global.
    pub delta: ParamVector,
    /// Number of SGD steps taken.
    pub steps: u64,
    /// Number of samples held.
    pub samples: usize,
}

fn batch_grad_into(
    model: &Model,
    shard: &[Sample],
    chunk: &[usize],
    weight_decay: f64,
    scratch: &mut [f64],
) -> Result<ParamVector> {
    scratch.fill(0.0);
    for &i in chunk {
        model.add_sample_grad(&shard[i], scratch)?;
    }
    let inv = 1.0 / chunk.len() as f64;
    let mut g = Vec::with_capacity(scratch.len());
    if weight_decay > 0.0 {
        for (s, t) in scratch.iter().zip(model.theta.as_slice()) {
            g.push(s * inv + weight_decay * t);
        }
    } else {
        for s in scratch.iter() {
            g.push(s * inv);
        }
    }
    ParamVector::new(g)
}

/// Run `epochs` passes of minibatch SGD over the shard from the received
/// global parameters; the packet carries `delta = theta_local - theta_global`.
/// Batches are fixed shuffles (one permutation per epoch) for determinism.
pub fn local_update(
    model: &Model,
    shard: &[Sample],
    cfg: &LocalConfig,
    stream: &mut RngStream,
) -> Result<UpdatePacket> {
    cfg.validate()?;
    if shard.is_empty() {
        return Err(Error::Dataset("local_update on empty shard".into()));
    }
    let k = cfg.batch.resolve(shard.len())?;
    let mut local = model.clone();
    let mut steps = 0u64;
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut scratch = vec![0.0; local.dim()];
    let single_batch = k >= shard.len();
    for _ in 0..cfg.epochs {
        if !single_batch {
            stream.shuffle(&mut order);
        }
        for chunk in order.chunks(k) {
            let g = batch_grad_into(&local, shard, chunk, cfg.weight_decay, &mut scratch)?;
            local.theta.axpy_in_place(-cfg.eta, &g)?;
            steps += 1;
        }
    }
    Ok(UpdatePacket {
        delta: local.theta.sub(&model.theta)?,
        steps,
        samples: shard.len(),
    })
}

/// One round of sample-level DP-SGD: `ceil(n/k)` batches drawn by Poisson
/// sampling with probability `k/n`, per-sample gradients clipped at `c`, and
/// Gaussian noise `N(0, z^2 c^2 I)` added to each batch sum before the
/// `1/k`-scaled descent step. An empty batch degenerates to a noise-only step.
pub fn dp_sgd_round(
    model: &Model,
    shard: &[Sample],
    cfg: &LocalConfig,
    stream: &mut RngStream,
) -> Result<Model> {
    cfg.validate()?;
    let dp = cfg
        .dp
        .as_ref()
        .ok_or_else(|| Error::invalid("dp", "dp_sgd_round requires dp parameters"))?;
    if shard.is_empty() {
        return Err(Error::Dataset("dp_sgd_round on empty shard".into()));
    }
    let n = shard.len();
    let k = cfg.batch.resolve(n)?;
    let t_batches = n.div_ceil(k);
    let p = k as f64 / n as f64;
    let mut local = model.clone();
    for _ in 0..t_batches {
        let mut batch_sum = ParamVector::zeros(local.dim());
        for sample in shard {
            if stream.uniform() < p {
                let g = local.sample_grad(sample)?;
                let clipped = crate::clip::clip_update(&g, dp.c)?;
                batch_sum.axpy_in_place(1.0, &clipped)?;
            }
        }
        let noise = stream.gaussian_sample(local.dim(), dp.z * dp.c)?;
        batch_sum.axpy_in_place(1.0, &noise)?;
        local.theta.axpy_in_place(-cfg.eta / k as f64, &batch_sum)?;
    }
    Ok(local)
}

//! Local model definitions: logistic classification and a certified
//! mu-convex quadratic.
//!
//! The quadratic per-sample loss is `(mu/2) * ||theta - x||^2` with the
//! sample's features as the center, which makes it mu-convex and beta-smooth
//! with `beta = mu` by construction. The logistic model appends an intercept
//! coordinate, so `theta.dim() == feature_dim + 1`.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Logistic,
    /// `mu`-convex quadratic; smoothness constant equals `mu`.
    Quadratic {
        mu: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Model {
    pub kind: ModelKind,
    pub theta: ParamVector,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Model {
    pub fn logistic(theta: ParamVector) -> Self {
        Model {
            kind: ModelKind::Logistic,
            theta,
        }
    }

    pub fn quadratic(mu: f64, theta: ParamVector) -> Result<Self> {
        if mu <= 0.0 || !mu.is_finite() {
            return Err(Error::invalid("mu", "must be positive"));
        }
        Ok(Model {
            kind: ModelKind::Quadratic { mu },
            theta,
        })
    }

    /// Fresh zero-initialized logistic model for `feature_dim` features.
    pub fn logistic_zeros(feature_dim: usize) -> Self {
        Model::logistic(ParamVector::zeros(feature_dim + 1))
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        let expect = match self.kind {
            ModelKind::Logistic => self.theta.dim() - 1,
            ModelKind::Quadratic { .. } => self.theta.dim(),
        };
        if sample.features.dim() != expect {
            return Err(Error::DimMismatch {
                left: sample.features.dim(),
                right: expect,
            });
        }
        Ok(())
    }

    /// Raw score of one sample: the logit for logistic models.
    pub fn logit(&self, sample: &Sample) -> Result<f64> {
        self.check_sample(sample)?;
        match self.kind {
            ModelKind::Logistic => {
                let t = self.theta.as_slice();
                let x = sample.features.as_slice();
                let mut z = t[t.len() - 1];
                for (w, xi) in t[..t.len() - 1].iter().zip(x) {
                    z += w * xi;
                }
                Ok(z)
            }
            ModelKind::Quadratic { .. } => Err(Error::invalid(
                "model",
                "logit is defined for logistic models only",
            )),
        }
    }

    pub fn predict_prob(&self, sample: &Sample) -> Result<f64> {
        Ok(sigmoid(self.logit(sample)?))
    }

    /// Per-sample loss value.
    pub fn sample_loss(&self, sample: &Sample) -> Result<f64> {
        self.check_sample(sample)?;
        match self.kind {
            ModelKind::Logistic => {
                let z = self.logit(sample)?;
                let y = sample.label;
                // log(1 + exp(z)) - y z, stable form
                let softplus = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                Ok(softplus - y * z)
            }
            ModelKind::Quadratic { mu } => {
                let diff = self.theta.sub(&sample.features)?;
                Ok(0.5 * mu * diff.dot(&diff)?)
            }
        }
    }

    /// Mean loss over a batch.
    pub fn loss(&self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Dataset("loss over empty batch".into()));
        }
        let mut acc = 0.0;
        for s in batch {
            acc += self.sample_loss(s)?;
        }
        Ok(acc / batch.len() as f64)
    }

    /// Accumulate the per-sample loss gradient into `acc` without allocating.
    pub(crate) fn add_sample_grad(&self, sample: &Sample, acc: &mut [f64]) -> Result<()> {
        self.check_sample(sample)?;
        match self.kind {
            ModelKind::Logistic => {
                let residual = sigmoid(self.logit(sample)?) - sample.label;
                let x = sample.features.as_slice();
                for (a, xi) in acc[..x.len()].iter_mut().zip(x) {
                    *a += residual * xi;
                }
                acc[x.len()] += residual;
            }
            ModelKind::Quadratic { mu } => {
                let t = self.theta.as_slice();
                let x = sample.features.as_slice();
                for ((a, ti), xi) in acc.iter_mut().zip(t).zip(x) {
                    *a += mu * (ti - xi);
                }
            }
        }
        Ok(())
    }

    /// Gradient of the per-sample loss at the current parameters.
    pub fn sample_grad(&self, sample: &Sample) -> Result<ParamVector> {
        self.check_sample(sample)?;
        match self.kind {
            ModelKind::Logistic => {
                let residual = sigmoid(self.logit(sample)?) - sample.label;
                let x = sample.features.as_slice();
                let mut g = Vec::with_capacity(self.theta.dim());
                for xi in x {
                    g.push(residual * xi);
                }
                g.push(residual); // intercept
                ParamVector::new(g)
            }
            ModelKind::Quadratic { mu } => self.theta.sub(&sample.features)?.scale(mu),
        }
    }
}

/// Mean of per-sample gradients over a nonempty batch.
pub fn grad(model: &Model, batch: &[Sample]) -> Result<ParamVector> {
    if batch.is_empty() {
        return Err(Error::Dataset("gradient over empty batch".into()));
    }
    let mut acc = ParamVector::zeros(model.dim());
    for s in batch {
        acc.axpy_in_place(1.0, &model.sample_grad(s)?)?;
    }
    acc.scale(1.0 / batch.len() as f64)
}

//! Per-sample gradient statistics at the latent vector and the encoder.

use super::{Result, RlError};
use crate::autodiff::{gemm, Gradients};
use crate::nn::Forward;

/// Where gradients are inspected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cut {
    /// The encoder output `x_E`, before any head mapping.
    Latent,
    /// All encoder weights and biases.
    Encoder,
}

impl Cut {
    fn name(self) -> &'static str {
        match self {
            Cut::Latent => "latent",
            Cut::Encoder => "encoder",
        }
    }
}

/// Mean per-sample L2 norm and total across-sample variance of a gradient.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct CutStats {
    pub magnitude: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct GradStats {
    pub latent: CutStats,
    pub encoder: CutStats,
}

impl GradStats {
    /// Element-wise mean of several measurements.
    pub fn mean(items: &[GradStats]) -> Option<GradStats> {
        if items.is_empty() {
            return None;
        }
        let k = items.len() as f64;
        let avg = |f: fn(&GradStats) -> f64| items.iter().map(f).sum::<f64>() / k;
        Some(GradStats {
            latent: CutStats {
                magnitude: avg(|g| g.latent.magnitude),
                variance: avg(|g| g.latent.variance),
            },
            encoder: CutStats {
                magnitude: avg(|g| g.encoder.magnitude),
                variance: avg(|g| g.encoder.variance),
            },
        })
    }
}

/// Gradient statistics at `cut` after `backward` has run on a loss built from
/// `fwd`.
///
/// Row `b` of a retained gradient, multiplied by `sample_scale`, is taken as
/// the gradient of sample `b`'s own loss: pass the batch size for a mean
/// loss and 1 for a summed loss. Encoder gradients are per-sample outer
/// products `δ_b a_bᵀ` for the (effective) weights plus `δ_b` for the biases.
pub fn grad_probe(
    grads: &Gradients,
    fwd: &Forward<'_>,
    cut: Cut,
    sample_scale: f64,
) -> Result<CutStats> {
    match cut {
        Cut::Latent => {
            let g = grads
                .get(fwd.latent)
                .ok_or(RlError::NotRetained(cut.name()))?;
            let (b, n) = (g.rows(), g.cols());
            let mut mean = vec![0.0; n];
            let mut mag = 0.0;
            let mut sq = 0.0;
            for r in 0..b {
                let row = g.row(r);
                let s: f64 = row.iter().map(|x| (x * sample_scale).powi(2)).sum();
                mag += s.sqrt();
                sq += s;
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += x * sample_scale / b as f64;
                }
            }
            let mean_sq: f64 = mean.iter().map(|m| m * m).sum();
            Ok(CutStats {
                magnitude: mag / b as f64,
                variance: (sq / b as f64 - mean_sq).max(0.0),
            })
        }
        Cut::Encoder => {
            let mut per_sample: Vec<f64> = Vec::new();
            let mut mean_sq = 0.0;
            for (z, a) in fwd.pre_activations.iter().zip(&fwd.layer_inputs) {
                let delta = grads.get(*z).ok_or(RlError::NotRetained(cut.name()))?;
                let act = a.value();
                let (b, out, inp) = (delta.rows(), delta.cols(), act.cols());
                per_sample.resize(b, 0.0);
                for r in 0..b {
                    let d2: f64 = delta
                        .row(r)
                        .iter()
                        .map(|x| (x * sample_scale).powi(2))
                        .sum();
                    let a2: f64 = act.row(r).iter().map(|x| x * x).sum();
                    per_sample[r] += d2 * (a2 + 1.0);
                }
                // Mean weight gradient δᵀA/B and mean bias gradient.
                let scale = sample_scale / b as f64;
                let w = gemm(out, b, inp, delta.data(), true, act.data(), false);
                mean_sq += w.iter().map(|x| (x * scale).powi(2)).sum::<f64>();
                for c in 0..out {
                    let bias: f64 = (0..b).map(|r| delta.get(r, c)).sum::<f64>() * scale;
                    mean_sq += bias * bias;
                }
            }
            if per_sample.is_empty() {
                return Err(RlError::NotRetained(cut.name()));
            }
            let b = per_sample.len() as f64;
            Ok(CutStats {
                magnitude: per_sample.iter().map(|s| s.sqrt()).sum::<f64>() / b,
                variance: (per_sample.iter().sum::<f64>() / b - mean_sq).max(0.0),
            })
        }
    }
}

/// Both cuts at once.
pub fn probe_update(grads: &Gradients, fwd: &Forward<'_>, sample_scale: f64) -> Result<GradStats> {
    Ok(GradStats {
        latent: grad_probe(grads, fwd, Cut::Latent, sample_scale)?,
        encoder: grad_probe(grads, fwd, Cut::Encoder, sample_scale)?,
    })
}

//! Weighted assembly of the Stage-II objective.

use crate::autograd::{Graph, Var};
use crate::config::LossWeights;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pitch, energy and duration L1 terms and the diffusion denoising MSE.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub pitch: f64,
    pub energy: f64,
    pub duration: f64,
    pub style: f64,
}

impl LossComponents {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.pitch * self.pitch + w.energy * self.energy + w.duration * self.duration + w.style * self.style
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            pitch: self.pitch + o.pitch,
            energy: self.energy + o.energy,
            duration: self.duration + o.duration,
            style: self.style + o.style,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            pitch: self.pitch * k,
            energy: self.energy * k,
            duration: self.duration * k,
            style: self.style * k,
        }
    }
}

fn mean_abs<T: Scalar>(a: &[T], b: &[T], what: &str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "{what}: {} predictions for {} targets",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y).abs().to_f64_lossy()).sum();
    Ok(s / a.len() as f64)
}

/// Predicted and target sequences for one item.
pub struct DubPrediction<'a, T> {
    pub pitch: (&'a [T], &'a [T]),
    pub energy: (&'a [T], &'a [T]),
    pub duration: (&'a [T], &'a [T]),
    /// Denoiser estimate and clean scaled style, if the diffusion term is active.
    pub style: Option<(&'a [T], &'a [T])>,
}

/// Total `λ1·L_p + λ2·L_n + λ3·L_d + λ4·L_Sp` and its components.
pub fn compute_dub_loss<T: Scalar>(p: &DubPrediction<T>, w: &LossWeights) -> Result<(f64, LossComponents)> {
    let style = match p.style {
        Some((a, b)) => {
            if a.len() != b.len() {
                return Err(Error::InvalidArgument("denoiser output shape mismatch".into()));
            }
            a.iter()
                .zip(b)
                .map(|(&x, &y)| (x - y).to_f64_lossy().powi(2))
                .sum::<f64>()
                / a.len().max(1) as f64
        }
        None => 0.0,
    };
    let c = LossComponents {
        pitch: mean_abs(p.pitch.0, p.pitch.1, "pitch")?,
        energy: mean_abs(p.energy.0, p.energy.1, "energy")?,
        duration: mean_abs(p.duration.0, p.duration.1, "duration")?,
        style,
    };
    Ok((c.weighted_total(w), c))
}

/// Graph-side counterpart: the weighted total node for backpropagation.
pub(crate) fn weighted_loss_graph<T: Scalar>(g: &mut Graph<T>, terms: [Option<Var>; 4], w: &LossWeights) -> Var {
    let weights = [w.pitch, w.energy, w.duration, w.style];
    let parts: Vec<(Var, T)> = terms
        .iter()
        .zip(weights)
        .filter_map(|(v, k)| v.map(|v| (v, T::of(k))))
        .collect();
    g.weighted_sum(&parts)
}

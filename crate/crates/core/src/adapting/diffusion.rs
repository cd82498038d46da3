//! Conditional denoising diffusion over prosodic style vectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::acoustic::{StyleRole, StyleVector};
use crate::autograd::{Graph, Var};
use crate::config::{DiffusionConfig, Parameterization};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{sinusoidal_positions, Bind, Linear};
use crate::params::ParamStore;
use crate::scalar::Scalar;

pub const TIME_EMBED_DIM: usize = 32;

/// Linear β schedule; `t` runs from 1 to `T` everywhere in this module.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    pub parameterization: Parameterization,
}

impl DiffusionSchedule {
    pub fn new(config: &DiffusionConfig) -> Result<Self> {
        let n = config.steps;
        if n == 0 || !(0.0 < config.beta_start && config.beta_start < config.beta_end && config.beta_end < 1.0) {
            return Err(Error::InvalidArgument("invalid diffusion schedule".into()));
        }
        let betas: Vec<f64> = (0..n)
            .map(|i| {
                if n == 1 {
                    config.beta_end
                } else {
                    config.beta_start + (config.beta_end - config.beta_start) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            parameterization: config.parameterization,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// Variance of `q(s_{t−1} | s_t, s_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        let prev = if t > 1 { self.alpha_bar(t - 1) } else { 1.0 };
        self.betas[t - 1] * (1.0 - prev) / (1.0 - self.alpha_bar(t))
    }

    /// Weights of `s_0` and `s_t` in the mean of `q(s_{t−1} | s_t, s_0)`.
    pub fn posterior_mean_coefficients(&self, t: usize) -> (f64, f64) {
        let prev = if t > 1 { self.alpha_bar(t - 1) } else { 1.0 };
        let denom = 1.0 - self.alpha_bar(t);
        (
            prev.sqrt() * self.betas[t - 1] / denom,
            self.alphas[t - 1].sqrt() * (1.0 - prev) / denom,
        )
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "diffusion step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// `√ᾱ_t·s0 + √(1 − ᾱ_t)·noise`.
pub fn diffusion_forward<T: Scalar>(s0: &[T], t: usize, noise: &[T], sched: &DiffusionSchedule) -> Result<Vec<T>> {
    sched.check(t)?;
    if s0.len() != noise.len() {
        return Err(Error::InvalidArgument("noise and signal differ in length".into()));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
    Ok(s0.iter().zip(noise).map(|(&x, &e)| a * x + b * e).collect())
}

/// Residual MLP over `(s_t, t, condition)`; its output is read according
/// to the schedule's [`Parameterization`].
#[derive(Debug, Clone)]
pub struct Denoiser {
    input: Linear,
    hidden: Vec<Linear>,
    out: Linear,
    dim: usize,
}

impl Denoiser {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            input: Linear::new(store, &format!("{name}.in"), 2 * dim + TIME_EMBED_DIM, hidden, rng),
            hidden: (0..2)
                .map(|i| Linear::new(store, &format!("{name}.hidden{i}"), hidden, hidden, rng))
                .collect(),
            out: Linear::new(store, &format!("{name}.out"), hidden, dim, rng),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `x_t` and `cond` are `1 × dim`; returns a `1 × dim` row.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bind<T>, x_t: Var, t: usize, cond: Var) -> Var {
        let temb = Matrix::row_vector(sinusoidal_positions::<T>(t + 1, TIME_EMBED_DIM).row(t).to_vec());
        let temb = g.constant(temb);
        let x = g.concat_cols(&[x_t, temb, cond]);
        let h = self.input.forward(g, p, x);
        let mut h = g.tanh(h);
        for layer in &self.hidden {
            let u = layer.forward(g, p, h);
            let u = g.tanh(u);
            h = g.add(h, u);
        }
        self.out.forward(g, p, h)
    }
}

fn gaussian<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n).map(|_| T::of(StandardNormal.sample(rng))).collect()
}

/// Ancestral sampling from `N(0, I)` down to `s_0`, conditioned on the
/// `1 × dim` pooled fusion feature; the result is scaled to unit norm.
pub fn diffusion_sample<T: Scalar>(
    denoiser: &Denoiser,
    store: &ParamStore<T>,
    condition: &Matrix<T>,
    sched: &DiffusionSchedule,
    seed: u64,
) -> Result<StyleVector<T>> {
    let d = denoiser.dim;
    if condition.shape() != (1, d) {
        return Err(Error::InvalidArgument(format!(
            "condition must be 1 × {d}, got {:?}",
            condition.shape()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<T> = gaussian(&mut rng, d);
    for t in (1..=sched.steps()).rev() {
        let mut g = Graph::new();
        let p = Bind::frozen(store);
        let xv = g.constant(Matrix::row_vector(x.clone()));
        let c = g.constant(condition.clone());
        let out = denoiser.forward(&mut g, p, xv, t, c);
        let out = g.value(out).as_slice();
        let ab = sched.alpha_bar(t);
        let x0: Vec<T> = match sched.parameterization {
            Parameterization::Clean => out.to_vec(),
            Parameterization::Noise => x
                .iter()
                .zip(out)
                .map(|(&xi, &ei)| (xi - T::of((1.0 - ab).sqrt()) * ei) / T::of(ab.sqrt()))
                .collect(),
        };
        let (c0, ct) = sched.posterior_mean_coefficients(t);
        let (c0, ct) = (T::of(c0), T::of(ct));
        let noise: Vec<T> = if t > 1 {
            gaussian(&mut rng, d)
        } else {
            vec![T::zero(); d]
        };
        let sd = T::of(sched.posterior_variance(t).sqrt());
        x = x
            .iter()
            .zip(&x0)
            .zip(&noise)
            .map(|((&xi, &x0i), &zi)| c0 * x0i + ct * xi + sd * zi)
            .collect();
    }
    let norm = x.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::of(1e-8));
    if !norm.is_finite() {
        return Err(Error::InvariantViolation("diffusion sample diverged".into()));
    }
    Ok(StyleVector {
        values: x.into_iter().map(|v| v / norm).collect(),
        role: StyleRole::Prosodic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_reaches_noise() {
        let s = DiffusionSchedule::new(&DiffusionConfig::default()).unwrap();
        assert_eq!(s.steps(), 50);
        assert!(s.betas.windows(2).all(|w| w[0] < w[1] && w[0] > 0.0));
        assert!(s.alpha_bar(50) < 0.01);
        assert!(s.alpha_bar(50).sqrt() <= 0.1);
        // the reference value for the upper end is too gentle to reach noise
        let gentle = DiffusionSchedule::new(&DiffusionConfig {
            beta_end: 0.05,
            ..DiffusionConfig::default()
        })
        .unwrap();
        assert!(gentle.alpha_bar(50) > 0.2);
    }

    #[test]
    fn forward_marginal_variance_matches_closed_form() {
        let s = DiffusionSchedule::new(&DiffusionConfig::default()).unwrap();
        let t = 25;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s0 = [0.7f64];
        let draws: Vec<f64> = (0..100_000)
            .map(|_| diffusion_forward(&s0, t, &gaussian::<f64>(&mut rng, 1), &s).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        let expect = 1.0 - s.alpha_bar(t);
        assert!((var - expect).abs() <= 0.05 * expect, "{var} vs {expect}");
        assert!((mean - s.alpha_bar(t).sqrt() * 0.7).abs() < 0.01);
        assert!(diffusion_forward(&s0, 0, &[0.0], &s).is_err());
        assert!(diffusion_forward(&s0, 51, &[0.0], &s).is_err());
    }

    #[test]
    fn sampler_is_reproducible_and_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let den = Denoiser::new(&mut store, "d", 8, 16, &mut rng);
        let s = DiffusionSchedule::new(&DiffusionConfig::default()).unwrap();
        let c = Matrix::from_fn(1, 8, |_, j| j as f64 * 0.1);
        let a = diffusion_sample(&den, &store, &c, &s, 9).unwrap();
        assert_eq!(a, diffusion_sample(&den, &store, &c, &s, 9).unwrap());
        assert_ne!(a, diffusion_sample(&den, &store, &c, &s, 10).unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert_eq!(a.role, StyleRole::Prosodic);
        assert!(diffusion_sample(&den, &store, &Matrix::zeros(1, 7), &s, 0).is_err());
    }

    #[test]
    fn posterior_mean_matches_noise_form() {
        let s = DiffusionSchedule::new(&DiffusionConfig::default()).unwrap();
        let (x_t, eps) = (0.7, -1.3);
        for t in [1, 2, 25, 50] {
            let ab = s.alpha_bar(t);
            let x0 = (x_t - (1.0 - ab).sqrt() * eps) / ab.sqrt();
            let (c0, ct) = s.posterior_mean_coefficients(t);
            let via_eps = (x_t - s.betas[t - 1] / (1.0 - ab).sqrt() * eps) / s.alphas[t - 1].sqrt();
            assert!((c0 * x0 + ct * x_t - via_eps).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn noise_parameterisation_samples_are_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::<f64>::new();
        let den = Denoiser::new(&mut store, "d", 8, 16, &mut rng);
        let s = DiffusionSchedule::new(&DiffusionConfig {
            parameterization: Parameterization::Noise,
            ..DiffusionConfig::default()
        })
        .unwrap();
        let c = Matrix::from_fn(1, 8, |_, j| j as f64 * 0.1);
        let a = diffusion_sample(&den, &store, &c, &s, 3).unwrap();
        assert_eq!(a, diffusion_sample(&den, &store, &c, &s, 3).unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-9);
    }
}

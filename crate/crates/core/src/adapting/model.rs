use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::diffusion::{diffusion_sample, Denoiser, DiffusionSchedule};
use super::idea::{idea_normalize, IDEA_RIDGE};
use crate::acoustic::{style_input, StyleRole, StyleVector};
use crate::alignment::{PhonemeSequence, PHONEME_INVENTORY};
use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::corpus::VisualFeatureBundle;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{
    sinusoidal_positions, AdaIn, Bind, Conv1d, Embedding, LayerNorm, Linear, MultiHeadAttention, ADAIN_EPS,
};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::signal::prosody::energy_curve;
use crate::signal::{MelSpectrogram, N_MELS};

const NORM_EPS: f64 = 1e-8;
/// Slows the duration head's pre-activation so single optimiser steps
/// cannot push the rectifier deep into its flat region.
const DURATION_GAIN: f64 = 0.1;

/// Corpus statistics of the phoneme-level targets. Predictor outputs are
/// produced in standardised units and mapped back with these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsodyStats {
    /// Mean and standard deviation of phoneme log-F0 (natural log of Hz).
    pub pitch_mean: f64,
    pub pitch_std: f64,
    /// Mean and standard deviation of phoneme log-norm energy.
    pub energy_mean: f64,
    pub energy_std: f64,
    /// Mean phoneme duration in mel frames.
    pub duration_mean: f64,
}

impl Default for ProsodyStats {
    fn default() -> Self {
        Self {
            pitch_mean: 5.0,
            pitch_std: 0.3,
            energy_mean: -2.0,
            energy_std: 1.0,
            duration_mean: 8.0,
        }
    }
}

impl ProsodyStats {
    /// Statistics of the given phoneme-level targets; spreads are floored
    /// so a constant corpus still yields usable scales.
    pub fn from_targets(pitch: &[f64], energy: &[f64], durations: &[f64]) -> Result<Self> {
        if pitch.is_empty() || durations.is_empty() {
            return Err(Error::InvalidArgument("no phoneme targets".into()));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let std = |v: &[f64], m: f64| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        let (pm, em) = (mean(pitch), mean(energy));
        Ok(Self {
            pitch_mean: pm,
            pitch_std: std(pitch, pm).max(1e-3),
            energy_mean: em,
            energy_std: std(energy, em).max(1e-3),
            duration_mean: mean(durations).max(1.0),
        })
    }
}

/// Self-attention phoneme encoder producing prosodic text features.
#[derive(Debug, Clone)]
struct PtbeLayer {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
}

#[derive(Debug, Clone)]
struct ProsodyPredictor {
    adain: AdaIn,
    convs: Vec<Conv1d>,
    out: Linear,
}

#[derive(Debug, Clone)]
struct DurationPredictor {
    attn: MultiHeadAttention,
    norm: LayerNorm,
    conv: Conv1d,
    out: Linear,
}

/// All Stage-II parameters, kept in a store separate from the acoustic one.
#[derive(Debug, Clone)]
pub struct ProsodyModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub stats: ProsodyStats,
    pub schedule: DiffusionSchedule,
    embed: Embedding,
    layers: Vec<PtbeLayer>,
    pse_convs: Vec<Conv1d>,
    pse_out: Linear,
    f_alpha: Linear,
    f_beta: Linear,
    fusion: MultiHeadAttention,
    predictor: ProsodyPredictor,
    duration: DurationPredictor,
    pub denoiser: Denoiser,
}

impl<T: Scalar> ProsodyModel<T> {
    pub fn new(config: &ModelConfig, stats: ProsodyStats, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let dv = config.visual_dim;
        let k = config.kernel_size;
        let h = config.n_head;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let embed = Embedding::new(&mut s, "prosodic.ptbe.embed", PHONEME_INVENTORY, d, &mut rng);
        let layers = (0..config.ptbe_layers)
            .map(|i| {
                let n = format!("prosodic.ptbe.layer{i}");
                PtbeLayer {
                    attn: MultiHeadAttention::new(&mut s, &format!("{n}.attn"), d, h, &mut rng),
                    norm1: LayerNorm::new(&mut s, &format!("{n}.norm1"), d),
                    ff1: Linear::new(&mut s, &format!("{n}.ff1"), d, 2 * d, &mut rng),
                    ff2: Linear::new(&mut s, &format!("{n}.ff2"), 2 * d, d, &mut rng),
                    norm2: LayerNorm::new(&mut s, &format!("{n}.norm2"), d),
                }
            })
            .collect();
        let pse_convs = vec![
            Conv1d::new(&mut s, "prosodic.pse.conv0", N_MELS + 1, d, k, &mut rng),
            Conv1d::new(&mut s, "prosodic.pse.conv1", d, d, k, &mut rng),
        ];
        let pse_out = Linear::new(&mut s, "prosodic.pse.out", d, d, &mut rng);
        let small = 0.1 / (dv as f64).sqrt();
        let f_alpha = Linear::with_bias(&mut s, "prosodic.idea.alpha", dv, dv, small, 1.0, &mut rng);
        let f_beta = Linear::with_std(&mut s, "prosodic.idea.beta", dv, dv, 1.0 / (dv as f64).sqrt(), &mut rng);
        let fusion = MultiHeadAttention::cross(&mut s, "prosodic.fusion", d, dv, h, &mut rng);
        let predictor = ProsodyPredictor {
            adain: AdaIn::new(&mut s, "prosodic.predictor.adain", d, d, &mut rng),
            convs: (0..2)
                .map(|i| Conv1d::new(&mut s, &format!("prosodic.predictor.conv{i}"), d, d, k, &mut rng))
                .collect(),
            out: Linear::new(&mut s, "prosodic.predictor.out", d, 2, &mut rng),
        };
        let duration = DurationPredictor {
            attn: MultiHeadAttention::cross(&mut s, "prosodic.duration.lip", d, dv, h, &mut rng),
            norm: LayerNorm::new(&mut s, "prosodic.duration.norm", d),
            conv: Conv1d::new(&mut s, "prosodic.duration.conv", d, d, k, &mut rng),
            out: Linear::with_std(&mut s, "prosodic.duration.out", d, 1, 0.01, &mut rng),
        };
        let denoiser = Denoiser::new(&mut s, "prosodic.diffusion", d, config.diffusion.hidden, &mut rng);
        Ok(Self {
            config: config.clone(),
            schedule: DiffusionSchedule::new(&config.diffusion)?,
            params: s,
            stats,
            embed,
            layers,
            pse_convs,
            pse_out,
            f_alpha,
            f_beta,
            fusion,
            predictor,
            duration,
            denoiser,
        })
    }

    pub fn from_params(config: &ModelConfig, stats: ProsodyStats, params: &ParamStore<T>) -> Result<Self> {
        let mut m = Self::new(config, stats, 0)?;
        m.params.load_values(params)?;
        Ok(m)
    }

    /// Whether a parameter belongs to the diffusion denoiser.
    pub fn is_diffusion_param(name: &str) -> bool {
        name.starts_with("prosodic.diffusion.")
    }

    pub fn text_graph(&self, g: &mut Graph<T>, p: Bind<T>, phonemes: &PhonemeSequence) -> Result<Var> {
        if phonemes.inventory_size > PHONEME_INVENTORY {
            return Err(Error::InvalidArgument(format!(
                "phoneme inventory of {} exceeds the model's {PHONEME_INVENTORY}",
                phonemes.inventory_size
            )));
        }
        let e = self.embed.forward(g, p, &phonemes.ids);
        let pos = g.constant(sinusoidal_positions(phonemes.len(), self.config.d_model));
        let mut x = g.add(e, pos);
        // pre-norm blocks: the residual stream always keeps the positional code
        for layer in &self.layers {
            let n = layer.norm1.forward(g, p, x);
            let a = layer.attn.forward(g, p, n, n);
            x = g.add(x, a);
            let n = layer.norm2.forward(g, p, x);
            let f = layer.ff1.forward(g, p, n);
            let f = g.tanh(f);
            let f = layer.ff2.forward(g, p, f);
            x = g.add(x, f);
        }
        Ok(x)
    }

    /// Level-free mel plus a standardised energy track.
    pub fn style_features(&self, mel: &MelSpectrogram<T>) -> Result<Matrix<T>> {
        let base = style_input(mel)?;
        let energy = energy_curve(mel);
        let (m, s) = (T::of(self.stats.energy_mean), T::of(self.stats.energy_std));
        Ok(Matrix::from_fn(base.rows(), N_MELS + 1, |t, c| {
            if c < N_MELS {
                base[(t, c)]
            } else {
                (energy[t] - m) / s
            }
        }))
    }

    pub fn style_graph(&self, g: &mut Graph<T>, p: Bind<T>, mel: &MelSpectrogram<T>) -> Result<Var> {
        let mut h = g.constant(self.style_features(mel)?);
        for conv in &self.pse_convs {
            let c = conv.forward(g, p, h);
            h = g.tanh(c);
        }
        let pooled = g.mean_rows(h);
        let y = self.pse_out.forward(g, p, pooled);
        Ok(g.l2_normalize_rows(y, T::of(NORM_EPS)))
    }

    fn check_visual(&self, v: &VisualFeatureBundle<T>) -> Result<()> {
        if v.dim() != self.config.visual_dim {
            return Err(Error::InvalidArgument(format!(
                "visual features have {} dims, model expects {}",
                v.dim(),
                self.config.visual_dim
            )));
        }
        Ok(())
    }

    /// Modulated emotion stream `V_p` from an already whitened stream.
    pub fn emotion_graph(&self, g: &mut Graph<T>, p: Bind<T>, whitened: &Matrix<T>, atmosphere: &[T]) -> Var {
        let w = g.constant(whitened.clone());
        let a = g.constant(Matrix::row_vector(atmosphere.to_vec()));
        let alpha = self.f_alpha.forward(g, p, a);
        let beta = self.f_beta.forward(g, p, a);
        let scaled = g.mul_row(w, alpha);
        g.add_row(scaled, beta)
    }

    /// `T_Fusion = T_p + CA(T_p, V_p)`.
    pub fn fusion_graph(&self, g: &mut Graph<T>, p: Bind<T>, text: Var, emotion: Var) -> Var {
        let a = self.fusion.forward(g, p, text, emotion);
        g.add(text, a)
    }

    /// Phoneme-level `(log-F0, energy)` columns in natural units.
    pub fn predictor_graph(&self, g: &mut Graph<T>, p: Bind<T>, fusion: Var, style: Var) -> (Var, Var) {
        let mut h = self.predictor.adain.forward(g, p, fusion, style);
        for conv in &self.predictor.convs {
            let c = conv.forward(g, p, h);
            h = g.tanh(c);
        }
        let y = self.predictor.out.forward(g, p, h);
        let st = &self.stats;
        let pitch = g.slice_cols(y, 0, 1);
        let pitch = g.scale(pitch, T::of(st.pitch_std));
        let pitch = g.offset(pitch, T::of(st.pitch_mean));
        let energy = g.slice_cols(y, 1, 1);
        let energy = g.scale(energy, T::of(st.energy_std));
        let energy = g.offset(energy, T::of(st.energy_mean));
        (pitch, energy)
    }

    /// Non-negative per-phoneme durations in frames (`L_pho × 1`).
    pub fn duration_graph(&self, g: &mut Graph<T>, p: Bind<T>, text: Var, lip: &Matrix<T>) -> Var {
        let lip = g.constant(lip.clone());
        // queries see only what distinguishes phonemes within the clip, so the
        // attention cannot settle on one clip-wide frame for every phoneme
        let query = g.standardize_cols(text, T::of(ADAIN_EPS));
        let a = self.duration.attn.forward(g, p, query, lip);
        let h = g.add(text, a);
        let h = self.duration.norm.forward(g, p, h);
        let h = self.duration.conv.forward(g, p, h);
        let h = g.tanh(h);
        let y = self.duration.out.forward(g, p, h);
        let y = g.scale(y, T::of(DURATION_GAIN));
        let y = g.softplus(y);
        // softplus(0) = ln 2, so an untrained head predicts the corpus mean
        g.scale(y, T::of(self.stats.duration_mean / std::f64::consts::LN_2))
    }

    pub fn encode_text_prosodic(&self, phonemes: &PhonemeSequence) -> Result<Matrix<T>> {
        let mut g = Graph::new();
        let v = self.text_graph(&mut g, Bind::frozen(&self.params), phonemes)?;
        Ok(g.value(v).clone())
    }

    pub fn encode_style_prosodic(&self, mel: &MelSpectrogram<T>) -> Result<StyleVector<T>> {
        let mut g = Graph::new();
        let v = self.style_graph(&mut g, Bind::frozen(&self.params), mel)?;
        Ok(StyleVector {
            values: g.value(v).as_slice().to_vec(),
            role: StyleRole::Prosodic,
        })
    }

    /// IDEA applied to a clip: whitening, then atmosphere modulation.
    pub fn emotion_features(&self, visual: &VisualFeatureBundle<T>) -> Result<Matrix<T>> {
        self.check_visual(visual)?;
        let white = idea_normalize(&visual.emotion, IDEA_RIDGE)?;
        let mut g = Graph::new();
        let v = self.emotion_graph(&mut g, Bind::frozen(&self.params), &white, &visual.atmosphere);
        Ok(g.value(v).clone())
    }

    /// Gain `f_α(a)` and bias `f_β(a)` of the IDEA modulation.
    pub fn idea_affine(&self, atmosphere: &[T]) -> (Vec<T>, Vec<T>) {
        let mut g = Graph::new();
        let p = Bind::frozen(&self.params);
        let a = g.constant(Matrix::row_vector(atmosphere.to_vec()));
        let alpha = self.f_alpha.forward(&mut g, p, a);
        let beta = self.f_beta.forward(&mut g, p, a);
        (g.value(alpha).as_slice().to_vec(), g.value(beta).as_slice().to_vec())
    }

    pub fn fuse(&self, text: &Matrix<T>, emotion: &Matrix<T>) -> Result<Matrix<T>> {
        if text.cols() != self.config.d_model || emotion.cols() != self.config.visual_dim {
            return Err(Error::InvalidArgument(
                "fusion input widths do not match the model".into(),
            ));
        }
        let mut g = Graph::new();
        let p = Bind::frozen(&self.params);
        let t = g.constant(text.clone());
        let e = g.constant(emotion.clone());
        let f = self.fusion_graph(&mut g, p, t, e);
        Ok(g.value(f).clone())
    }

    pub fn predict_prosody(&self, fusion: &Matrix<T>, style: &StyleVector<T>) -> Result<(Vec<T>, Vec<T>)> {
        if style.role != StyleRole::Prosodic {
            return Err(Error::InvalidArgument(
                "prosody predictor needs a prosodic style vector".into(),
            ));
        }
        if fusion.cols() != self.config.d_model || style.values.len() != self.config.d_model {
            return Err(Error::InvalidArgument(
                "predictor input widths do not match the model".into(),
            ));
        }
        let mut g = Graph::new();
        let p = Bind::frozen(&self.params);
        let f = g.constant(fusion.clone());
        let s = g.constant(style.as_row());
        let (pitch, energy) = self.predictor_graph(&mut g, p, f, s);
        Ok((g.value(pitch).as_slice().to_vec(), g.value(energy).as_slice().to_vec()))
    }

    pub fn predict_duration(&self, text: &Matrix<T>, lip: &Matrix<T>) -> Result<Vec<T>> {
        if text.cols() != self.config.d_model || lip.cols() != self.config.visual_dim || lip.rows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "duration predictor expects {}-wide text and non-empty {}-wide lip features",
                self.config.d_model, self.config.visual_dim
            )));
        }
        let mut g = Graph::new();
        let p = Bind::frozen(&self.params);
        let t = g.constant(text.clone());
        let d = self.duration_graph(&mut g, p, t, lip);
        Ok(g.value(d).as_slice().to_vec())
    }

    /// Per-head weights of the text-to-lip attention on the duration path.
    pub fn lip_attention(&self, text: &Matrix<T>, lip: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
        super::cross_attend(text, lip, &self.duration.attn, &self.params).map(|r| r.1)
    }

    /// Samples `S̃_p` conditioned on the temporal mean of `T_Fusion`.
    pub fn sample_style(&self, fusion: &Matrix<T>, seed: u64) -> Result<StyleVector<T>> {
        let cond = Matrix::row_vector(fusion.column_means());
        diffusion_sample(&self.denoiser, &self.params, &cond, &self.schedule, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustic::AcousticModel;
    use rand::Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_head: 2,
            visual_dim: 6,
            diffusion: crate::config::DiffusionConfig {
                hidden: 16,
                ..Default::default()
            },
            ..ModelConfig::default()
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn phonemes() -> PhonemeSequence {
        PhonemeSequence::synthetic((0..12).map(|i| (i * 5) % 32).collect()).unwrap()
    }

    #[test]
    fn text_features_shape_and_independence() {
        let m = ProsodyModel::<f64>::new(&small(), ProsodyStats::default(), 1).unwrap();
        let t = m.encode_text_prosodic(&phonemes()).unwrap();
        assert_eq!(t.shape(), (12, 16));
        assert_eq!(t, m.encode_text_prosodic(&phonemes()).unwrap());
        let a = AcousticModel::<f64>::new(&small(), 1).unwrap();
        assert_ne!(t, a.encode_text_acoustic(&phonemes()).unwrap());
    }

    #[test]
    fn prosodic_style_is_unit_norm() {
        let m = ProsodyModel::<f64>::new(&small(), ProsodyStats::default(), 2).unwrap();
        let mel = MelSpectrogram::new(random(20, 80, 3).map(|v| v * 30.0 - 40.0)).unwrap();
        let s = m.encode_style_prosodic(&mel).unwrap();
        assert!((s.norm() - 1.0).abs() < 1e-5);
        assert_eq!(s.role, StyleRole::Prosodic);
        assert_eq!(s, m.encode_style_prosodic(&mel).unwrap());
        let short = MelSpectrogram::new(random(3, 80, 3).map(|v| v - 40.0)).unwrap();
        assert!(matches!(
            m.encode_style_prosodic(&short),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn predictors_follow_their_contracts() {
        let m = ProsodyModel::<f64>::new(&small(), ProsodyStats::default(), 3).unwrap();
        let text = m.encode_text_prosodic(&phonemes()).unwrap();
        let fusion = m.fuse(&text, &random(30, 6, 4)).unwrap();
        assert_eq!(fusion.shape(), (12, 16));
        let unit = |seed| {
            let v: Vec<f64> = random(1, 16, seed).into_vec();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            StyleVector {
                values: v.iter().map(|x| x / n).collect(),
                role: StyleRole::Prosodic,
            }
        };
        let (p, e) = m.predict_prosody(&fusion, &unit(5)).unwrap();
        assert_eq!((p.len(), e.len()), (12, 12));
        assert_ne!(m.predict_prosody(&fusion, &unit(6)).unwrap().0, p);
        let wrong = StyleVector {
            role: StyleRole::Acoustic,
            ..unit(5)
        };
        assert!(m.predict_prosody(&fusion, &wrong).is_err());
        for seed in 0..20 {
            let d = m
                .predict_duration(&text, &random(40, 6, seed).map(|v| v * 10.0))
                .unwrap();
            assert_eq!(d.len(), 12);
            assert!(d.iter().all(|&x| x >= 0.0));
        }
        assert!(m.predict_duration(&text, &random(40, 5, 0)).is_err());
    }

    #[test]
    fn untrained_sampler_gives_unit_norm() {
        let m = ProsodyModel::<f64>::new(&small(), ProsodyStats::default(), 4).unwrap();
        let fusion = random(9, 16, 1);
        let s = m.sample_style(&fusion, 3).unwrap();
        assert!((s.norm() - 1.0).abs() < 1e-9 && s.values.iter().all(|v| v.is_finite()));
        assert_eq!(s, m.sample_style(&fusion, 3).unwrap());
    }

    #[test]
    fn idea_affine_starts_near_identity() {
        let m = ProsodyModel::<f64>::new(&small(), ProsodyStats::default(), 5).unwrap();
        let (alpha, beta) = m.idea_affine(&[0.0; 6]);
        assert_eq!(alpha, vec![1.0; 6]);
        assert_eq!(beta, vec![0.0; 6]);
    }
}

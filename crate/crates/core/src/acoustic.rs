//! The acoustic system: text encoder, style encoder, AdaIN-conditioned
//! decoder and the reconstruction objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{upsample_index, AlignmentMatrix, PhonemeSequence, PHONEME_INVENTORY};
use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{AdaIn, BiLstm, Bind, Conv1d, Embedding, Linear, ADAIN_EPS};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::signal::prosody::{interpolated_log_f0, LOG_F0_CENTER};
use crate::signal::{MelSpectrogram, N_MELS};

/// Decoder outputs are mapped to dB as `MEL_SCALE·y + MEL_OFFSET`.
pub const MEL_SCALE: f64 = 20.0;
pub const MEL_OFFSET: f64 = -40.0;
pub const MIN_STYLE_FRAMES: usize = 4;
/// Voiced frames are quantised into log-spaced pitch buckets over the
/// extractor's search range; bucket 0 is reserved for unvoiced frames.
pub const PITCH_BUCKETS: usize = 128;
const PITCH_BUCKET_RANGE: (f64, f64) = (50.0, 800.0);
const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StyleRole {
    Acoustic,
    Prosodic,
}

/// Unit-norm style embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleVector<T = f32> {
    pub values: Vec<T>,
    pub role: StyleRole,
}

impl<T: Scalar> StyleVector<T> {
    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn cosine(&self, other: &Self) -> T {
        let dot: T = self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum();
        dot / (self.norm() * other.norm()).max(T::of(NORM_EPS))
    }

    pub fn as_row(&self) -> Matrix<T> {
        Matrix::row_vector(self.values.clone())
    }
}

/// Mean absolute difference over all cells, in dB.
pub fn reconstruction_loss<T: Scalar>(pred: &MelSpectrogram<T>, target: &MelSpectrogram<T>) -> Result<T> {
    if pred.frames.shape() != target.frames.shape() {
        return Err(Error::InvalidArgument(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.frames.shape(),
            target.frames.shape()
        )));
    }
    let total: T = pred
        .frames
        .as_slice()
        .iter()
        .zip(target.frames.as_slice())
        .map(|(&a, &b)| (a - b).abs())
        .sum();
    Ok(total / T::of_usize(pred.frames.len().max(1)))
}

/// Frame-level decoder conditioning: `[log f0 − centre, energy, unvoiced]`.
/// Unvoiced frames carry the interpolated contour plus the flag.
pub fn prosody_channels<T: Scalar>(pitch: &[T], energy: &[T]) -> Result<Matrix<T>> {
    if pitch.len() != energy.len() {
        return Err(Error::InvalidArgument(format!(
            "pitch has {} frames, energy {}",
            pitch.len(),
            energy.len()
        )));
    }
    let lf0 = interpolated_log_f0(pitch);
    let centre = T::of(LOG_F0_CENTER);
    Ok(Matrix::from_fn(pitch.len(), 3, |t, c| match c {
        0 => {
            if lf0[t] == T::zero() {
                T::zero()
            } else {
                lf0[t] - centre
            }
        }
        1 => energy[t],
        _ => {
            if pitch[t] > T::zero() {
                T::zero()
            } else {
                T::one()
            }
        }
    }))
}

/// Bucket index for each row of a `prosody_channels` matrix.
pub fn pitch_buckets<T: Scalar>(prosody: &Matrix<T>) -> Vec<usize> {
    let (lo, hi) = (PITCH_BUCKET_RANGE.0.ln(), PITCH_BUCKET_RANGE.1.ln());
    (0..prosody.rows())
        .map(|t| {
            if prosody[(t, 2)] > T::zero() {
                return 0;
            }
            let lf0 = prosody[(t, 0)].to_f64_lossy() + LOG_F0_CENTER;
            let x = ((lf0 - lo) / (hi - lo) * PITCH_BUCKETS as f64).floor();
            1 + x.clamp(0.0, (PITCH_BUCKETS - 1) as f64) as usize
        })
        .collect()
}

/// Level-free view of a spectrogram for the style encoders: the utterance
/// mean is removed and the dB range scaled to roughly unit size.
pub(crate) fn style_input<T: Scalar>(m: &MelSpectrogram<T>) -> Result<Matrix<T>> {
    if m.n_frames() < MIN_STYLE_FRAMES {
        return Err(Error::DegenerateInput(format!(
            "style encoder needs at least {MIN_STYLE_FRAMES} frames, got {}",
            m.n_frames()
        )));
    }
    let mean = m.frames.mean();
    let scale = T::one() / T::of(MEL_SCALE);
    Ok(m.frames.map(|v| (v - mean) * scale))
}

/// Convolutional encoder pooled over time into a unit-norm vector.
#[derive(Debug, Clone)]
pub struct StyleEncoder {
    pub convs: Vec<Conv1d>,
    pub out: Linear,
}

impl StyleEncoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_model: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            convs: vec![
                Conv1d::new(store, &format!("{name}.conv0"), d_in, d_model, kernel, rng),
                Conv1d::new(store, &format!("{name}.conv1"), d_model, d_model, kernel, rng),
            ],
            out: Linear::new(store, &format!("{name}.out"), d_model, d_model, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bind<T>, x: Var) -> Var {
        let mut h = x;
        for conv in &self.convs {
            let c = conv.forward(g, p, h);
            h = g.tanh(c);
        }
        let pooled = g.mean_rows(h);
        let y = self.out.forward(g, p, pooled);
        g.l2_normalize_rows(y, T::of(NORM_EPS))
    }
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    conv: Conv1d,
    adain: AdaIn,
}

/// Stage-I model. All parameters live in one store so the whole system can
/// be hashed and frozen as a unit.
#[derive(Debug, Clone)]
pub struct AcousticModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    embed: Embedding,
    lstm: BiLstm,
    style: StyleEncoder,
    text_in: Linear,
    prosody_in: Linear,
    pitch_embed: Embedding,
    blocks: Vec<DecoderBlock>,
    out: Linear,
}

impl<T: Scalar> AcousticModel<T> {
    /// Deterministic initialisation; parameter names and count depend only on `config`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let k = config.kernel_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let embed = Embedding::new(&mut s, "acoustic.text.embed", PHONEME_INVENTORY, d, &mut rng);
        let lstm = BiLstm::new(&mut s, "acoustic.text.lstm", d, d, &mut rng);
        let style = StyleEncoder::new(&mut s, "acoustic.style", N_MELS, d, k, &mut rng);
        let text_in = Linear::new(&mut s, "acoustic.dec.text_in", d, d, &mut rng);
        let prosody_in = Linear::new(&mut s, "acoustic.dec.prosody_in", 3, d, &mut rng);
        let pitch_embed = Embedding::new(&mut s, "acoustic.dec.pitch_embed", PITCH_BUCKETS + 1, d, &mut rng);
        let blocks = (0..config.decoder_layers)
            .map(|i| DecoderBlock {
                conv: Conv1d::new(&mut s, &format!("acoustic.dec.block{i}.conv"), d, d, k, &mut rng),
                adain: AdaIn::new(&mut s, &format!("acoustic.dec.block{i}.adain"), d, d, &mut rng),
            })
            .collect();
        let out = Linear::new(&mut s, "acoustic.dec.out", d, N_MELS, &mut rng);
        Ok(Self {
            config: config.clone(),
            params: s,
            embed,
            lstm,
            style,
            text_in,
            prosody_in,
            pitch_embed,
            blocks,
            out,
        })
    }

    /// Model with the layout of `config` and the values of `params`.
    pub fn from_params(config: &ModelConfig, params: &ParamStore<T>) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.load_values(params)?;
        Ok(m)
    }

    pub fn params_hash(&self) -> String {
        self.params.content_hash()
    }

    pub fn text_graph(&self, g: &mut Graph<T>, p: Bind<T>, phonemes: &PhonemeSequence) -> Result<Var> {
        if phonemes.inventory_size > PHONEME_INVENTORY {
            return Err(Error::InvalidArgument(format!(
                "phoneme inventory of {} exceeds the model's {PHONEME_INVENTORY}",
                phonemes.inventory_size
            )));
        }
        let x = self.embed.forward(g, p, &phonemes.ids);
        Ok(self.lstm.forward(g, p, x))
    }

    pub fn style_graph(&self, g: &mut Graph<T>, p: Bind<T>, mel: &MelSpectrogram<T>) -> Result<Var> {
        let x = g.constant(style_input(mel)?);
        Ok(self.style.forward(g, p, x))
    }

    /// `upsampled` is `L_mel × d_m`, `prosody` is `L_mel × 3` (see
    /// [`prosody_channels`]), `style` is `1 × d_m`. Returns the `L_mel × 80`
    /// spectrogram in dB.
    pub fn decoder_graph(&self, g: &mut Graph<T>, p: Bind<T>, upsampled: Var, prosody: &Matrix<T>, style: Var) -> Var {
        let a = self.text_in.forward(g, p, upsampled);
        let pr = g.constant(prosody.clone());
        let b = self.prosody_in.forward(g, p, pr);
        let c = self.pitch_embed.forward(g, p, &pitch_buckets(prosody));
        let ab = g.add(a, b);
        let mut h = g.add(ab, c);
        for block in &self.blocks {
            let c = block.conv.forward(g, p, h);
            let c = block.adain.forward(g, p, c, style);
            let c = g.tanh(c);
            h = g.add(h, c);
        }
        let y = self.out.forward(g, p, h);
        let y = g.scale(y, T::of(MEL_SCALE));
        g.offset(y, T::of(MEL_OFFSET))
    }

    /// Full Stage-I reconstruction graph with ground-truth alignment and prosody.
    pub fn reconstruct_graph(
        &self,
        g: &mut Graph<T>,
        p: Bind<T>,
        phonemes: &PhonemeSequence,
        alignment: &AlignmentMatrix,
        prosody: &Matrix<T>,
        style_source: &MelSpectrogram<T>,
    ) -> Result<Var> {
        if alignment.n_phonemes() != phonemes.len() {
            return Err(Error::InvalidArgument(format!(
                "alignment covers {} phonemes, sequence has {}",
                alignment.n_phonemes(),
                phonemes.len()
            )));
        }
        if prosody.rows() != alignment.n_frames() {
            return Err(Error::InvalidArgument(format!(
                "prosody has {} frames, alignment {}",
                prosody.rows(),
                alignment.n_frames()
            )));
        }
        let text = self.text_graph(g, p, phonemes)?;
        let up = g.gather_rows(text, upsample_index(alignment));
        let style = self.style_graph(g, p, style_source)?;
        Ok(self.decoder_graph(g, p, up, prosody, style))
    }

    pub fn encode_text_acoustic(&self, phonemes: &PhonemeSequence) -> Result<Matrix<T>> {
        let mut g = Graph::new();
        let v = self.text_graph(&mut g, Bind::frozen(&self.params), phonemes)?;
        Ok(g.value(v).clone())
    }

    pub fn encode_style_acoustic(&self, mel: &MelSpectrogram<T>) -> Result<StyleVector<T>> {
        let mut g = Graph::new();
        let v = self.style_graph(&mut g, Bind::frozen(&self.params), mel)?;
        Ok(StyleVector {
            values: g.value(v).as_slice().to_vec(),
            role: StyleRole::Acoustic,
        })
    }

    pub fn decode_audio(
        &self,
        upsampled_text: &Matrix<T>,
        pitch: &[T],
        energy: &[T],
        style: &StyleVector<T>,
    ) -> Result<MelSpectrogram<T>> {
        let n = upsampled_text.rows();
        if pitch.len() != n || energy.len() != n {
            return Err(Error::InvalidArgument(format!(
                "decoder input has {n} frames but pitch/energy have {}/{}",
                pitch.len(),
                energy.len()
            )));
        }
        if upsampled_text.cols() != self.config.d_model || style.values.len() != self.config.d_model {
            return Err(Error::InvalidArgument(
                "decoder input width differs from d_model".into(),
            ));
        }
        let mut g = Graph::new();
        let p = Bind::frozen(&self.params);
        let up = g.constant(upsampled_text.clone());
        let pr = prosody_channels(pitch, energy)?;
        let s = g.constant(style.as_row());
        let y = self.decoder_graph(&mut g, p, up, &pr, s);
        MelSpectrogram::new(g.value(y).clone())
    }
}

/// Scalar-loop AdaIN on one channel, used as a reference by tests and
/// by callers that work outside the autodiff tape.
pub fn adain_channel<T: Scalar>(c: &[T], gain: T, bias: T) -> Vec<T> {
    let n = T::of_usize(c.len());
    let mean = c.iter().copied().sum::<T>() / n;
    let var = c.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let sd = var.sqrt().max(T::of(ADAIN_EPS));
    c.iter().map(|&v| gain * (v - mean) / sd + bias).collect()
}

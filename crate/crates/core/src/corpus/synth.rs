//! Synthetic harmonic speech and dubbing-clip generator with exact ground truth.
//!
//! Each phoneme has a fixed three-formant envelope, an intrinsic pitch and
//! energy offset and a typical duration. Speakers scale the formants, set
//! the base pitch, spectral tilt and loudness. Dubbing clips add a latent
//! emotion amplitude that raises pitch and effort and is also written into
//! the clip's visual emotion features.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::visual::{write_visual, VisualFeatureBundle, VISUAL_FPS};
use super::{write_manifest, RecordKind, UtteranceRecord};
use crate::alignment::{DurationVector, PhonemeSequence, PHONEME_INVENTORY};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::sinusoidal_positions;
use crate::signal::prosody::{energy_curve, ProsodyCurves};
use crate::signal::{mel_spectrogram, save_waveform, Waveform, HOP_LENGTH, HOP_SECONDS, SAMPLE_RATE};

const SHAPE_SEED: u64 = 0x5eed_0f_f0e7;
const MAX_HARMONIC_HZ: f64 = 11_000.0;
const MIN_DURATION: usize = 4;
const MAX_DURATION: usize = 14;
/// Octaves of pitch change per unit of latent emotion.
const EMOTION_OCTAVES: f64 = 0.6;
/// Natural-log gain per unit of latent emotion.
const EMOTION_GAIN: f64 = 0.3;
/// Dubbing clips are padded to a whole number of this many mel frames so
/// that the visual frame count maps back onto the audio exactly.
const CLIP_QUANTUM: usize = 16;
const ARTICULATION_DIMS: usize = 6;
const ORDINAL_DIMS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeShape {
    /// (centre Hz, bandwidth Hz, linear gain) per formant.
    pub formants: [(f64, f64, f64); 3],
    /// Natural-log pitch offset.
    pub intrinsic_pitch: f64,
    /// Natural-log amplitude offset.
    pub intrinsic_energy: f64,
    pub base_duration: f64,
    pub articulation: [f64; ARTICULATION_DIMS],
}

/// Fixed shape of phoneme `id`, identical across corpora and seeds.
pub fn phoneme_shape(id: usize) -> PhonemeShape {
    let mut rng = ChaCha8Rng::seed_from_u64(SHAPE_SEED);
    rng.set_stream(id as u64);
    let normal = Normal::new(0.0, 1.0).unwrap();
    PhonemeShape {
        formants: [
            (rng.gen_range(250.0..900.0), rng.gen_range(60.0..150.0), 1.0),
            (
                rng.gen_range(900.0..2500.0),
                rng.gen_range(80.0..200.0),
                rng.gen_range(0.4..1.0),
            ),
            (
                rng.gen_range(2300.0..3600.0),
                rng.gen_range(120.0..260.0),
                rng.gen_range(0.15..0.5),
            ),
        ],
        intrinsic_pitch: rng.gen_range(-0.04..0.04),
        intrinsic_energy: rng.gen_range(-0.3..0.3),
        base_duration: rng.gen_range(5.0..11.0),
        articulation: std::array::from_fn(|_| normal.sample(&mut rng)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerTemplate {
    pub speaker_id: String,
    pub base_f0: f64,
    pub formant_scale: f64,
    /// Spectral roll-off exponent (amplitude ∝ f^-tilt above 100 Hz).
    pub tilt: f64,
    /// Natural-log loudness offset.
    pub energy: f64,
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

impl SpeakerTemplate {
    /// Low-discrepancy sequences keep every pair of speakers distinct.
    pub fn new(index: usize) -> Self {
        let i = index as f64;
        Self {
            speaker_id: format!("spk{index:02}"),
            base_f0: 110.0 * 2f64.powf(1.1 * frac(0.5 + i * 0.618_033_988_75)),
            formant_scale: 0.85 + 0.3 * frac(0.25 + i * 0.414_213_562_37),
            tilt: 0.6 + 0.6 * frac(0.75 + i * 0.732_050_807_57),
            energy: -0.5 * frac(i * 0.236_067_977_5),
        }
    }

    fn envelope(&self, shape: &PhonemeShape, freq: f64, effort: f64) -> f64 {
        let resonance: f64 = shape
            .formants
            .iter()
            .map(|&(f, b, g)| {
                let x = (freq - f * self.formant_scale) / b;
                g / (1.0 + x * x)
            })
            .sum();
        let tilt = (self.tilt - 0.25 * effort).max(0.2);
        (resonance + 0.02) * (freq.max(100.0) / 100.0).powf(-tilt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusOptions {
    pub n_speakers: usize,
    pub n_utts: usize,
    pub seed: u64,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    /// Width of the visual emotion and lip features.
    pub visual_dim: usize,
    pub n_movies: usize,
}

impl CorpusOptions {
    pub fn new(n_speakers: usize, n_utts: usize, seed: u64) -> Self {
        Self {
            n_speakers,
            n_utts,
            seed,
            min_phonemes: 6,
            max_phonemes: 12,
            visual_dim: 16,
            n_movies: 4,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::InvalidArgument("at least two speakers are required".into()));
        }
        if self.n_utts == 0 {
            return Err(Error::InvalidArgument("n_utts must be positive".into()));
        }
        if self.min_phonemes == 0 || self.min_phonemes > self.max_phonemes {
            return Err(Error::InvalidArgument("invalid phoneme count range".into()));
        }
        if self.visual_dim < ARTICULATION_DIMS + ORDINAL_DIMS + 2 {
            return Err(Error::InvalidArgument(format!(
                "visual_dim must be at least {}",
                ARTICULATION_DIMS + ORDINAL_DIMS + 2
            )));
        }
        Ok(())
    }
}

/// One generated utterance before it is written to disk.
struct Generated {
    phonemes: Vec<usize>,
    durations: Vec<usize>,
    waveform: Waveform<f64>,
    pitch: Vec<f64>,
    emotion: Option<f64>,
}

fn interpolate_at_centres(values: &[f64], durations: &[usize]) -> Vec<f64> {
    let mut centres = Vec::with_capacity(values.len());
    let mut start = 0.0;
    for &d in durations {
        centres.push(start + d as f64 / 2.0 - 0.5);
        start += d as f64;
    }
    let n = start as usize;
    (0..n)
        .map(|t| {
            let x = t as f64;
            let k = centres.partition_point(|&c| c <= x);
            if k == 0 {
                values[0]
            } else if k == centres.len() {
                values[values.len() - 1]
            } else {
                let (a, b) = (centres[k - 1], centres[k]);
                let w = (x - a) / (b - a);
                values[k - 1] * (1.0 - w) + values[k] * w
            }
        })
        .collect()
}

fn render(
    speaker: &SpeakerTemplate,
    phonemes: &[usize],
    durations: &[usize],
    log_f0: &[f64],
    log_gain: &[f64],
    effort: &[f64],
) -> (Waveform<f64>, Vec<f64>) {
    let owners: Vec<usize> = durations
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat(i).take(d))
        .collect();
    let frame_lf0 = interpolate_at_centres(log_f0, durations);
    let frame_gain = interpolate_at_centres(log_gain, durations);
    let frame_effort = interpolate_at_centres(effort, durations);
    let n_frames = owners.len();
    let shapes: Vec<PhonemeShape> = phonemes.iter().map(|&p| phoneme_shape(p)).collect();
    let f0_floor = frame_lf0.iter().copied().fold(f64::INFINITY, f64::min).exp();
    let n_harm = (MAX_HARMONIC_HZ / f0_floor).floor() as usize;

    // harmonic amplitudes at frame centres
    let amps: Vec<Vec<f64>> = (0..n_frames)
        .map(|t| {
            let f0 = frame_lf0[t].exp();
            let shape = &shapes[owners[t]];
            let g = 0.3 * (frame_gain[t] + speaker.energy).exp();
            (1..=n_harm)
                .map(|k| {
                    let f = k as f64 * f0;
                    if f > MAX_HARMONIC_HZ {
                        0.0
                    } else {
                        g * speaker.envelope(shape, f, frame_effort[t])
                    }
                })
                .collect()
        })
        .collect();

    let n_samples = n_frames * HOP_LENGTH;
    let half = HOP_LENGTH as f64 / 2.0;
    let mut phase = 0.0f64;
    let mut samples = Vec::with_capacity(n_samples);
    for n in 0..n_samples {
        let pos = ((n as f64 - half + 0.5) / HOP_LENGTH as f64).clamp(0.0, (n_frames - 1) as f64);
        let t0 = pos.floor() as usize;
        let t1 = (t0 + 1).min(n_frames - 1);
        let w = pos - t0 as f64;
        let lf0 = frame_lf0[t0] * (1.0 - w) + frame_lf0[t1] * w;
        phase += std::f64::consts::TAU * lf0.exp() / SAMPLE_RATE as f64;
        let mut s = 0.0;
        for (k, (&a0, &a1)) in amps[t0].iter().zip(&amps[t1]).enumerate() {
            let a = a0 * (1.0 - w) + a1 * w;
            if a > 0.0 {
                s += a * ((k + 1) as f64 * phase).sin();
            }
        }
        samples.push(s);
    }
    let mut wave = Waveform::new(samples, SAMPLE_RATE);
    let peak = wave.peak();
    if peak > 0.95 {
        wave = wave.scaled(0.95 / peak);
    }
    let pitch = frame_lf0.iter().map(|v| v.exp()).collect();
    (wave, pitch)
}

fn generate_one(opts: &CorpusOptions, index: usize, dub: bool) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(2 * index as u64 + dub as u64 + 1);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let speaker = SpeakerTemplate::new(index % opts.n_speakers);
    let n = rng.gen_range(opts.min_phonemes..=opts.max_phonemes);
    let phonemes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..PHONEME_INVENTORY)).collect();
    let tempo: f64 = rng.gen_range(0.85..1.15);
    let mut durations: Vec<usize> = phonemes
        .iter()
        .map(|&p| {
            let d = phoneme_shape(p).base_duration * tempo * (1.0 + 0.12 * normal.sample(&mut rng));
            (d.round() as usize).clamp(MIN_DURATION, MAX_DURATION)
        })
        .collect();
    if dub {
        let total: usize = durations.iter().sum();
        let extra = total.next_multiple_of(CLIP_QUANTUM) - total;
        for k in 0..extra {
            durations[n - 1 - k % n] += 1;
        }
    }

    let emotion = dub.then(|| rng.gen_range(-1.0..1.0));
    let e = emotion.unwrap_or(0.0);
    let offset = 0.06 * normal.sample(&mut rng);
    let log_f0: Vec<f64> = phonemes
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            speaker.base_f0.ln() + phoneme_shape(p).intrinsic_pitch - 0.1 * i as f64 / n as f64
                + offset
                + 0.015 * normal.sample(&mut rng)
                + EMOTION_OCTAVES * std::f64::consts::LN_2 * e
        })
        .collect();
    let log_gain: Vec<f64> = phonemes
        .iter()
        .map(|&p| phoneme_shape(p).intrinsic_energy + EMOTION_GAIN * e + 0.05 * normal.sample(&mut rng))
        .collect();
    let effort = vec![e; n];
    let (waveform, pitch) = render(&speaker, &phonemes, &durations, &log_f0, &log_gain, &effort);
    Generated {
        phonemes,
        durations,
        waveform,
        pitch,
        emotion,
    }
}

fn emotion_label(e: f64) -> i8 {
    if e > 1.0 / 3.0 {
        1
    } else if e < -1.0 / 3.0 {
        -1
    } else {
        0
    }
}

/// Visual features for a clip: the emotion stream carries the latent
/// amplitude along a fixed direction plus a per-movie bias, the lip stream
/// encodes which phoneme is being articulated and for how long.
fn visual_features(opts: &CorpusOptions, index: usize, g: &Generated) -> VisualFeatureBundle<f64> {
    let d = opts.visual_dim;
    let n_mel: usize = g.durations.iter().sum();
    let l_v = (n_mel as f64 * HOP_SECONDS * VISUAL_FPS).round() as usize;
    let e = g.emotion.unwrap_or(0.0);
    let normal = Normal::new(0.0, 1.0).unwrap();

    let mut dir_rng = ChaCha8Rng::seed_from_u64(SHAPE_SEED ^ 0xd1);
    let mut direction: Vec<f64> = (0..d).map(|_| normal.sample(&mut dir_rng)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);
    let mut movie_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x40_71e5);
    movie_rng.set_stream((index % opts.n_movies.max(1)) as u64);
    let bias: Vec<f64> = (0..d).map(|_| 0.3 * normal.sample(&mut movie_rng)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7e_a1);
    rng.set_stream(index as u64);
    let wobble_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut emotion = Matrix::zeros(l_v, d);
    for t in 0..l_v {
        let et = e + 0.15 * (std::f64::consts::TAU * t as f64 / 20.0 + wobble_phase).sin();
        for j in 0..d {
            emotion[(t, j)] = 2.0 * et * direction[j] + bias[j] + 0.3 * normal.sample(&mut rng);
        }
    }
    let atmosphere = emotion.column_means();

    let owners: Vec<usize> = g
        .durations
        .iter()
        .enumerate()
        .flat_map(|(i, &dur)| std::iter::repeat(i).take(dur))
        .collect();
    let ordinal: Matrix<f64> = sinusoidal_positions(g.phonemes.len(), ORDINAL_DIMS);
    let mut lip = Matrix::zeros(l_v, d);
    for t in 0..l_v {
        let seconds = (t as f64 + 0.5) / VISUAL_FPS;
        let frame = ((seconds / HOP_SECONDS) as usize).min(n_mel - 1);
        let i = owners[frame];
        let shape = phoneme_shape(g.phonemes[i]);
        let row = lip.row_mut(t);
        row[..ARTICULATION_DIMS].copy_from_slice(&shape.articulation);
        row[ARTICULATION_DIMS..ARTICULATION_DIMS + ORDINAL_DIMS].copy_from_slice(ordinal.row(i));
        row[ARTICULATION_DIMS + ORDINAL_DIMS] = g.durations[i] as f64 / 10.0;
        row[ARTICULATION_DIMS + ORDINAL_DIMS + 1] = 1.0;
        for v in row.iter_mut() {
            *v += 0.02 * normal.sample(&mut rng);
        }
    }
    VisualFeatureBundle::new(emotion, atmosphere, lip).expect("generator produces consistent shapes")
}

fn write_corpus(out_dir: &Path, opts: &CorpusOptions, dub: bool) -> Result<PathBuf> {
    opts.validate()?;
    let wav_dir = out_dir.join("wavs");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let vis_dir = out_dir.join("visual");
    if dub {
        std::fs::create_dir_all(&vis_dir).map_err(|e| Error::io(&vis_dir, e))?;
    }
    let records: Vec<UtteranceRecord> = (0..opts.n_utts)
        .into_par_iter()
        .map(|i| -> Result<UtteranceRecord> {
            let g = generate_one(opts, i, dub);
            let speaker = SpeakerTemplate::new(i % opts.n_speakers);
            let utt_id = if dub {
                format!("clip{i:04}")
            } else {
                format!("{}_utt{i:04}", speaker.speaker_id)
            };
            let wav = wav_dir.join(format!("{utt_id}.wav"));
            save_waveform(&wav, &g.waveform)?;
            // ground truth energy is measured on the quantised file contents
            let stored = crate::signal::load_waveform::<f64>(&wav)?;
            let mel = mel_spectrogram(&stored)?;
            let visual = if dub {
                let path = vis_dir.join(format!("{utt_id}.pdvis"));
                write_visual(&path, &visual_features(opts, i, &g))?;
                Some(path)
            } else {
                None
            };
            Ok(UtteranceRecord {
                utt_id,
                speaker_id: speaker.speaker_id,
                kind: if dub { RecordKind::Dub } else { RecordKind::Speech },
                phonemes: PhonemeSequence::synthetic(g.phonemes.clone())?,
                wav,
                durations: DurationVector(g.durations.clone()),
                prosody: ProsodyCurves {
                    pitch: g.pitch.iter().map(|&v| v as f32).collect(),
                    energy: energy_curve(&mel).iter().map(|&v| v as f32).collect(),
                },
                visual,
                augmentation: None,
                emotion_label: g.emotion.map(emotion_label),
                emotion_amplitude: g.emotion.map(|v| v as f32),
                reference: None,
            })
        })
        .collect::<Result<_>>()?;
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}

/// Writes `wavs/` and `manifest.jsonl` under `out_dir`; returns the manifest path.
pub fn generate_speech_corpus(out_dir: &Path, opts: &CorpusOptions) -> Result<PathBuf> {
    write_corpus(out_dir, opts, false)
}

/// Like [`generate_speech_corpus`] plus a `visual/` directory of PDVIS1 files.
pub fn generate_dub_corpus(out_dir: &Path, opts: &CorpusOptions) -> Result<PathBuf> {
    write_corpus(out_dir, opts, true)
}

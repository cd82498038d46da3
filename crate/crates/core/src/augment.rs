//! Frequency-domain prosody enhancement: mel-band pitch shifting, time-axis
//! duration stretching, and the corpus-level policy that applies them.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::UtteranceRecord;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::signal::{
    extract_prosody, invert_mel_seeded, load_waveform, save_waveform, MelAnalyzer, MelSpectrogram, DEFAULT_ITERATIONS,
    FLOOR_DB,
};

pub const MIN_STRETCH: f64 = 0.5;
pub const MAX_STRETCH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentationSpec {
    PitchShift { pitch_bins: i32 },
    DurationStretch { stretch_factor: f64 },
}

impl AugmentationSpec {
    pub fn apply<T: Scalar>(&self, m: &MelSpectrogram<T>) -> Result<MelSpectrogram<T>> {
        match *self {
            AugmentationSpec::PitchShift { pitch_bins } => pitch_shift(m, pitch_bins),
            AugmentationSpec::DurationStretch { stretch_factor } => duration_stretch(m, stretch_factor),
        }
    }
}

/// Rolls every frame by `k` mel bands (positive = upwards) and fills the
/// vacated bands with the floor value.
pub fn pitch_shift<T: Scalar>(m: &MelSpectrogram<T>, k: i32) -> Result<MelSpectrogram<T>> {
    let n_mels = m.n_mels() as i64;
    if (k as i64).abs() >= n_mels {
        return Err(Error::InvalidArgument(format!(
            "pitch shift of {k} bands needs |k| < {n_mels}"
        )));
    }
    let floor = T::of(FLOOR_DB);
    let frames = Matrix::from_fn(m.n_frames(), m.n_mels(), |t, i| {
        let src = i as i64 - k as i64;
        if (0..n_mels).contains(&src) {
            m.frames[(t, src as usize)]
        } else {
            floor
        }
    });
    Ok(MelSpectrogram {
        frames,
        hop_length: m.hop_length,
        sample_rate: m.sample_rate,
    })
}

/// Output length of a stretch by `r`.
pub fn stretched_len(len: usize, r: f64) -> usize {
    (len as f64 * r).round() as usize
}

/// Resamples the time axis to `round(L·r)` frames by linear interpolation,
/// with first and last frames aligned to the input's.
pub fn duration_stretch<T: Scalar>(m: &MelSpectrogram<T>, r: f64) -> Result<MelSpectrogram<T>> {
    if !(MIN_STRETCH..=MAX_STRETCH).contains(&r) {
        return Err(Error::InvalidArgument(format!(
            "stretch factor {r} outside [{MIN_STRETCH}, {MAX_STRETCH}]"
        )));
    }
    let len = m.n_frames();
    let out_len = stretched_len(len, r);
    if out_len < 2 {
        return Err(Error::DegenerateInput(format!(
            "stretching {len} frames by {r} leaves {out_len}"
        )));
    }
    let step = if len > 1 {
        (len - 1) as f64 / (out_len - 1) as f64
    } else {
        0.0
    };
    let mut frames = Matrix::zeros(out_len, m.n_mels());
    for j in 0..out_len {
        let x = j as f64 * step;
        let lo = (x.floor() as usize).min(len - 1);
        let hi = (lo + 1).min(len - 1);
        let w = T::of(x - lo as f64);
        let (a, b) = (m.frames.row(lo), m.frames.row(hi));
        for ((o, &va), &vb) in frames.row_mut(j).iter_mut().zip(a).zip(b) {
            *o = va + (vb - va) * w;
        }
    }
    Ok(MelSpectrogram {
        frames,
        hop_length: m.hop_length,
        sample_rate: m.sample_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhancementPolicy {
    pub ratio: f64,
    pub pitch_bin_range: (i32, i32),
    pub stretch_range: (f64, f64),
    pub seed: u64,
}

impl Default for EnhancementPolicy {
    fn default() -> Self {
        Self {
            ratio: 0.03,
            pitch_bin_range: (-8, 8),
            stretch_range: (0.8, 1.25),
            seed: 0,
        }
    }
}

impl EnhancementPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::InvalidArgument(format!("ratio {} outside [0, 1]", self.ratio)));
        }
        let (lo, hi) = self.pitch_bin_range;
        if lo > hi || lo.abs() >= 80 || hi.abs() >= 80 || (lo == 0 && hi == 0) {
            return Err(Error::InvalidArgument(format!(
                "pitch bin range [{lo}, {hi}] must be ordered, inside (-80, 80) and contain a non-zero shift"
            )));
        }
        let (a, b) = self.stretch_range;
        if !(a <= b && a >= MIN_STRETCH && b <= MAX_STRETCH) {
            return Err(Error::InvalidArgument(format!(
                "stretch range [{a}, {b}] must be ordered inside [{MIN_STRETCH}, {MAX_STRETCH}]"
            )));
        }
        Ok(())
    }

    /// Number of utterances augmented out of `n`.
    pub fn count(&self, n: usize) -> usize {
        ((self.ratio * n as f64).round() as usize).min(n)
    }

    /// Chosen utterance indices (ascending) and their specs. Each utterance
    /// receives exactly one augmentation, drawn from its own RNG stream.
    pub fn select(&self, n: usize) -> Vec<(usize, AugmentationSpec)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut chosen = sample(&mut rng, n, self.count(n)).into_vec();
        chosen.sort_unstable();
        chosen.into_iter().map(|i| (i, self.spec_for(i))).collect()
    }

    fn spec_for(&self, index: usize) -> AugmentationSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        if rng.gen_bool(0.5) {
            let (lo, hi) = self.pitch_bin_range;
            loop {
                let k = rng.gen_range(lo..=hi);
                if k != 0 {
                    return AugmentationSpec::PitchShift { pitch_bins: k };
                }
            }
        } else {
            let (a, b) = self.stretch_range;
            let r = if a == b { a } else { rng.gen_range(a..=b) };
            AugmentationSpec::DurationStretch { stretch_factor: r }
        }
    }
}

/// Applies `spec` to one record: the augmented mel is rendered to audio in
/// `out_dir`, and prosody and durations are re-derived from that audio.
pub fn augment_record(
    record: &UtteranceRecord,
    spec: AugmentationSpec,
    out_dir: &Path,
    seed: u64,
) -> Result<UtteranceRecord> {
    let analyzer = MelAnalyzer::<f32>::new();
    let w = load_waveform::<f32>(&record.wav)?;
    let m = analyzer.analyze(&w)?;
    let shifted = spec.apply(&m)?;
    let w_aug = invert_mel_seeded(&analyzer, &shifted, DEFAULT_ITERATIONS, seed).peak_limited();
    let m_aug = analyzer.analyze(&w_aug)?;
    let prosody = extract_prosody(&m_aug, &w_aug);
    let durations = record.durations.rescaled(m_aug.n_frames())?;

    let wav_dir = out_dir.join("wavs");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let wav = wav_dir.join(format!("{}.wav", record.utt_id));
    save_waveform(&wav, &w_aug)?;
    Ok(UtteranceRecord {
        wav,
        durations,
        prosody,
        augmentation: Some(spec),
        ..record.clone()
    })
}

/// Replaces exactly `round(ratio·N)` records with augmented versions; all
/// other records are returned untouched.
pub fn apply_policy(
    records: &[UtteranceRecord],
    policy: &EnhancementPolicy,
    out_dir: &Path,
) -> Result<Vec<UtteranceRecord>> {
    policy.validate()?;
    let selection = policy.select(records.len());
    let augmented: Vec<(usize, UtteranceRecord)> = selection
        .par_iter()
        .map(|&(i, spec)| {
            augment_record(&records[i], spec, out_dir, policy.seed ^ i as u64)
                .map(|r| (i, r))
                .map_err(|e| e.in_stage("augment"))
        })
        .collect::<Result<_>>()?;
    let mut out = records.to_vec();
    for (i, r) in augmented {
        out[i] = r;
    }
    Ok(out)
}

//! Mel-to-waveform reconstruction: non-negative least-squares projection back
//! to linear magnitudes followed by fast Griffin-Lim phase recovery.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use crate::scalar::Scalar;

use super::audio::Waveform;
use super::mel::{db_to_amplitude, MelAnalyzer, MelSpectrogram};
use super::{FLOOR_DB, HOP_LENGTH, SAMPLE_RATE};

pub const DEFAULT_ITERATIONS: usize = 64;
const NNLS_ITERATIONS: usize = 30;
const MOMENTUM: f64 = 0.99;

/// Reconstructs a waveform of exactly `L_mel · hop` samples.
///
/// Cells at the floor are treated as silence, so an all-floor input yields an
/// all-zero waveform. Phase initialisation is drawn from `seed`.
pub fn invert_mel_seeded<T: Scalar>(
    analyzer: &MelAnalyzer<T>,
    m: &MelSpectrogram<T>,
    iterations: usize,
    seed: u64,
) -> Waveform<T> {
    let n_frames = m.n_frames();
    let n_samples = n_frames * HOP_LENGTH;
    let target = linear_magnitudes(analyzer, m);
    let unscale = analyzer.stft.window_sum / T::of(2.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spectra: Vec<Vec<Complex<T>>> = target
        .iter()
        .map(|mag| {
            mag.iter()
                .map(|&a| {
                    let phase = T::of(rng.gen_range(0.0..std::f64::consts::TAU));
                    Complex::from_polar(a * unscale, phase)
                })
                .collect()
        })
        .collect();

    let alpha = T::of(MOMENTUM);
    let mut previous: Option<Vec<Vec<Complex<T>>>> = None;
    for _ in 0..iterations {
        let x = analyzer.stft.inverse(&spectra, n_samples);
        let rebuilt: Vec<Vec<Complex<T>>> = (0..n_frames).map(|t| analyzer.stft.frame_spectrum(&x, t)).collect();
        let accelerated: Vec<Vec<Complex<T>>> = match &previous {
            Some(prev) => rebuilt
                .iter()
                .zip(prev)
                .map(|(cur, old)| cur.iter().zip(old).map(|(&c, &o)| c + (c - o) * alpha).collect())
                .collect(),
            None => rebuilt.clone(),
        };
        for (frame, (acc, mag)) in spectra.iter_mut().zip(accelerated.iter().zip(&target)) {
            for ((s, &c), &a) in frame.iter_mut().zip(acc).zip(mag) {
                let n = c.norm();
                *s = if n > T::zero() {
                    c * (a * unscale / n)
                } else {
                    Complex::new(a * unscale, T::zero())
                };
            }
        }
        previous = Some(rebuilt);
    }
    let samples = analyzer.stft.inverse(&spectra, n_samples);
    Waveform::new(samples, SAMPLE_RATE)
}

pub fn invert_mel<T: Scalar>(m: &MelSpectrogram<T>, iterations: usize) -> Waveform<T> {
    invert_mel_seeded(&MelAnalyzer::new(), m, iterations, 0)
}

/// Per-frame non-negative least squares `min ‖F·s − mel‖` via multiplicative
/// updates, initialised from the filter-normalised back projection.
fn linear_magnitudes<T: Scalar>(analyzer: &MelAnalyzer<T>, m: &MelSpectrogram<T>) -> Vec<Vec<T>> {
    let filters = &analyzer.filters;
    let n_bins = filters.cols();
    let floor = T::of(FLOOR_DB + 1e-6);
    let tiny = T::of(1e-12);
    // sparse rows: (first nonzero bin, weights)
    let bands: Vec<(usize, Vec<T>)> = filters
        .iter_rows()
        .map(|r| {
            let first = r.iter().position(|&w| w > T::zero()).unwrap_or(0);
            let last = r.iter().rposition(|&w| w > T::zero()).unwrap_or(0);
            (first, r[first..=last].to_vec())
        })
        .collect();
    let row_sums: Vec<T> = bands.iter().map(|(_, w)| w.iter().copied().sum()).collect();
    let project = |s: &[T]| -> Vec<T> {
        bands
            .iter()
            .map(|(first, w)| w.iter().zip(&s[*first..]).map(|(&a, &b)| a * b).sum())
            .collect()
    };
    let back_project = |v: &[T]| -> Vec<T> {
        let mut out = vec![T::zero(); n_bins];
        for ((first, w), &x) in bands.iter().zip(v) {
            for (o, &a) in out[*first..].iter_mut().zip(w) {
                *o += a * x;
            }
        }
        out
    };
    (0..m.n_frames())
        .map(|t| {
            let mel: Vec<T> = m
                .frames
                .row(t)
                .iter()
                .map(|&db| if db <= floor { T::zero() } else { db_to_amplitude(db) })
                .collect();
            if mel.iter().all(|&v| v == T::zero()) {
                return vec![T::zero(); n_bins];
            }
            let ft_mel = back_project(&mel);
            let normalised: Vec<T> = mel.iter().zip(&row_sums).map(|(&v, &s)| v / s.max(tiny)).collect();
            let mut s = back_project(&normalised);
            for _ in 0..NNLS_ITERATIONS {
                let gs = back_project(&project(&s));
                for ((v, &num), &den) in s.iter_mut().zip(&ft_mel).zip(&gs) {
                    *v = *v * num / (den + tiny);
                }
            }
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::signal::mel::mel_spectrogram;

    #[test]
    fn length_contract() {
        let m = MelSpectrogram::<f32>::new(Matrix::filled(80, 80, -30.0)).unwrap();
        let w = invert_mel(&m, 4);
        assert_eq!(w.len(), 24000);
    }

    #[test]
    fn floor_maps_to_silence() {
        let m = MelSpectrogram::<f64>::new(Matrix::filled(80, 80, -80.0)).unwrap();
        let w = invert_mel(&m, 8);
        assert!(w.peak() < 1e-3);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let tone: Vec<f32> = (0..6000)
            .map(|i| 0.3 * (2.0 * std::f32::consts::PI * 200.0 * i as f32 / 24000.0).sin())
            .collect();
        let m = mel_spectrogram(&Waveform::new(tone, 24000)).unwrap();
        assert_eq!(invert_mel(&m, 8), invert_mel(&m, 8));
    }
}

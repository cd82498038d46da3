//! Frame-level pitch and energy extraction.
//!
//! Pitch uses normalised autocorrelation over a 1200-sample window centred on
//! each mel frame, searching lags for 50–800 Hz. Energy is the natural log of
//! the L2 norm of the linear-magnitude mel frame.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::audio::Waveform;
use super::mel::{frame_center, MelSpectrogram};
use super::{SAMPLE_RATE, WIN_LENGTH};

pub const F0_MIN: f64 = 50.0;
pub const F0_MAX: f64 = 800.0;
pub const ENERGY_EPS: f64 = 1e-5;
/// Minimum peak normalised autocorrelation for a frame to count as voiced.
pub const VOICING_THRESHOLD: f64 = 0.6;
/// Frames quieter than this RMS are unvoiced regardless of periodicity.
pub const SILENCE_RMS: f64 = 1e-4;
/// Candidate lags within this fraction of the best correlation are eligible;
/// the shortest eligible lag wins, which suppresses sub-octave errors.
const OCTAVE_TOLERANCE: f64 = 0.9;

/// Frame-level prosody: pitch in Hz (0 = unvoiced) and log-norm energy.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyCurves<T = f32> {
    pub pitch: Vec<T>,
    pub energy: Vec<T>,
}

impl<T: Scalar> ProsodyCurves<T> {
    pub fn len(&self) -> usize {
        self.pitch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pitch.is_empty()
    }

    pub fn validate(&self, n_frames: usize) -> Result<()> {
        if self.pitch.len() != n_frames || self.energy.len() != n_frames {
            return Err(Error::InvariantViolation(format!(
                "prosody curves have lengths {}/{} but the spectrogram has {n_frames} frames",
                self.pitch.len(),
                self.energy.len()
            )));
        }
        let (lo, hi) = (T::of(F0_MIN), T::of(F0_MAX));
        if let Some(p) = self.pitch.iter().find(|&&p| !(p == T::zero() || (p >= lo && p <= hi))) {
            return Err(Error::InvariantViolation(format!(
                "pitch value {p} outside {{0}} ∪ [50, 800]"
            )));
        }
        if self.energy.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvariantViolation("non-finite energy".into()));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ProsodyCurves<U> {
        ProsodyCurves {
            pitch: self.pitch.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
            energy: self.energy.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }
}

pub fn frame_energy<T: Scalar>(m: &MelSpectrogram<T>, t: usize) -> T {
    let norm = m.linear_frame(t).iter().map(|&a| a * a).sum::<T>().sqrt();
    (T::of(ENERGY_EPS) + norm).ln()
}

pub fn energy_curve<T: Scalar>(m: &MelSpectrogram<T>) -> Vec<T> {
    (0..m.n_frames()).map(|t| frame_energy(m, t)).collect()
}

pub fn extract_prosody<T: Scalar>(m: &MelSpectrogram<T>, w: &Waveform<T>) -> ProsodyCurves<T> {
    ProsodyCurves {
        pitch: pitch_curve(w, m.n_frames()),
        energy: energy_curve(m),
    }
}

/// Pitch in Hz for `n_frames` frames of `w`, 0 where unvoiced.
pub fn pitch_curve<T: Scalar>(w: &Waveform<T>, n_frames: usize) -> Vec<T> {
    let fft_len = (2 * WIN_LENGTH).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);
    let sr = SAMPLE_RATE as f64;
    let min_lag = (sr / F0_MAX).floor() as usize;
    let max_lag = ((sr / F0_MIN).ceil() as usize).min(WIN_LENGTH - 2);
    let half = (WIN_LENGTH / 2) as isize;

    (0..n_frames)
        .map(|t| {
            let start = frame_center(t) - half;
            let seg: Vec<f64> = (0..WIN_LENGTH)
                .map(|i| {
                    let s = start + i as isize;
                    if s >= 0 && (s as usize) < w.samples.len() {
                        w.samples[s as usize].to_f64_lossy()
                    } else {
                        0.0
                    }
                })
                .collect();
            let energy: f64 = seg.iter().map(|v| v * v).sum();
            if (energy / WIN_LENGTH as f64).sqrt() < SILENCE_RMS {
                return T::zero();
            }
            let mut buf: Vec<Complex<f64>> = seg
                .iter()
                .map(|&v| Complex::new(v, 0.0))
                .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
                .take(fft_len)
                .collect();
            fwd.process(&mut buf);
            for c in &mut buf {
                *c = Complex::new(c.norm_sqr(), 0.0);
            }
            inv.process(&mut buf);
            let acf: Vec<f64> = buf.iter().map(|c| c.re / fft_len as f64).collect();

            // prefix sums of squares for the two overlapping segments
            let mut prefix = vec![0.0; WIN_LENGTH + 1];
            for (i, v) in seg.iter().enumerate() {
                prefix[i + 1] = prefix[i] + v * v;
            }
            let nacf = |lag: usize| -> f64 {
                let e_head = prefix[WIN_LENGTH - lag];
                let e_tail = prefix[WIN_LENGTH] - prefix[lag];
                let d = (e_head * e_tail).sqrt();
                if d <= 0.0 {
                    0.0
                } else {
                    acf[lag] / d
                }
            };
            let r: Vec<f64> = (min_lag - 1..=max_lag + 1).map(nacf).collect();
            let at = |lag: usize| r[lag + 1 - min_lag];
            let peaks: Vec<usize> = (min_lag..=max_lag)
                .filter(|&l| at(l) >= at(l - 1) && at(l) >= at(l + 1))
                .collect();
            let Some(best) = peaks.iter().map(|&l| at(l)).reduce(f64::max) else {
                return T::zero();
            };
            if best < VOICING_THRESHOLD {
                return T::zero();
            }
            let lag = *peaks
                .iter()
                .find(|&&l| at(l) >= OCTAVE_TOLERANCE * best)
                .expect("best peak qualifies");
            let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
            let denom = a - 2.0 * b + c;
            let offset = if denom.abs() > 1e-12 {
                (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            let f0 = sr / (lag as f64 + offset);
            T::of(f0.clamp(F0_MIN, F0_MAX))
        })
        .collect()
}

/// Reference log-frequency subtracted before feeding pitch to the models.
pub const LOG_F0_CENTER: f64 = 5.0;

/// log-Hz pitch with unvoiced frames filled from the nearest voiced frame
/// (linear interpolation between voiced neighbours). All-unvoiced → zeros.
pub fn interpolated_log_f0<T: Scalar>(pitch: &[T]) -> Vec<T> {
    let voiced: Vec<usize> = (0..pitch.len()).filter(|&i| pitch[i] > T::zero()).collect();
    if voiced.is_empty() {
        return vec![T::zero(); pitch.len()];
    }
    let mut out = vec![T::zero(); pitch.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let next = voiced.partition_point(|&v| v < i);
        *o = if next < voiced.len() && voiced[next] == i {
            pitch[i].ln()
        } else if next == 0 {
            pitch[voiced[0]].ln()
        } else if next == voiced.len() {
            pitch[voiced[voiced.len() - 1]].ln()
        } else {
            let (a, b) = (voiced[next - 1], voiced[next]);
            let frac = T::of_usize(i - a) / T::of_usize(b - a);
            pitch[a].ln() * (T::one() - frac) + pitch[b].ln() * frac
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::mel::mel_spectrogram;

    fn tone(freq: f64, amp: f64, n: usize) -> Waveform<f64> {
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 24000.0).sin())
                .collect(),
            24000,
        )
    }

    #[test]
    fn pure_220_hz_tone() {
        let w = tone(220.0, 0.4, 24000);
        let m = mel_spectrogram(&w).unwrap();
        let p = extract_prosody(&m, &w);
        assert_eq!(p.len(), 80);
        let voiced: Vec<f64> = p.pitch.iter().copied().filter(|&v| v > 0.0).collect();
        assert!(voiced.len() >= 76);
        for v in voiced {
            assert!((v - 220.0).abs() <= 3.0, "{v}");
        }
        p.validate(80).unwrap();
    }

    #[test]
    fn tracks_a_range_of_frequencies() {
        for f in [60.0, 95.0, 150.0, 333.0, 510.0, 780.0] {
            let w = tone(f, 0.3, 12000);
            let pitch = pitch_curve(&w, 40);
            for &v in &pitch[4..36] {
                assert!((v - f).abs() <= 3.0, "f={f}: {v}");
            }
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let w = Waveform::<f64>::silence(6000);
        let m = mel_spectrogram(&w).unwrap();
        let p = extract_prosody(&m, &w);
        assert!(p.pitch.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubling_amplitude_adds_log_two_to_energy() {
        let w = tone(180.0, 0.2, 12000);
        let w2 = w.scaled(2.0);
        let (m, m2) = (mel_spectrogram(&w).unwrap(), mel_spectrogram(&w2).unwrap());
        let (p, p2) = (extract_prosody(&m, &w), extract_prosody(&m2, &w2));
        for t in 0..p.len() {
            assert!((p2.energy[t] - p.energy[t] - 2f64.ln()).abs() < 1e-3);
        }
        assert_eq!(p.pitch, p2.pitch);
    }

    #[test]
    fn sign_flip_keeps_energy() {
        let w = tone(260.0, 0.3, 9000);
        let neg = w.scaled(-1.0);
        let (m, mn) = (mel_spectrogram(&w).unwrap(), mel_spectrogram(&neg).unwrap());
        assert_eq!(energy_curve(&m), energy_curve(&mn));
    }

    #[test]
    fn log_f0_interpolation_fills_gaps() {
        let p = [0.0, 100.0, 0.0, 0.0, 400.0, 0.0];
        let lf = interpolated_log_f0(&p);
        let (a, b) = (100f64.ln(), 400f64.ln());
        assert!((lf[0] - a).abs() < 1e-12);
        assert!((lf[2] - (a + (b - a) / 3.0)).abs() < 1e-12);
        assert!((lf[5] - b).abs() < 1e-12);
        assert_eq!(interpolated_log_f0(&[0.0f64; 3]), vec![0.0; 3]);
    }
}

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

use super::audio::Waveform;
use super::{FLOOR_DB, HOP_LENGTH, N_FFT, N_MELS, SAMPLE_RATE, WIN_LENGTH};

/// Log-magnitude mel spectrogram, `L_mel × n_mels`, in dB with a −80 dB floor.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram<T = f32> {
    pub frames: Matrix<T>,
    pub hop_length: usize,
    pub sample_rate: u32,
}

impl<T: Scalar> MelSpectrogram<T> {
    /// Wraps a frame matrix, clamping to the floor and rejecting non-finite cells.
    pub fn new(frames: Matrix<T>) -> Result<Self> {
        if !frames.all_finite() {
            return Err(Error::InvalidArgument("mel spectrogram has non-finite values".into()));
        }
        let floor = T::of(FLOOR_DB);
        Ok(Self {
            frames: frames.map(|v| v.max(floor)),
            hop_length: HOP_LENGTH,
            sample_rate: SAMPLE_RATE,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.cols()
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_length as f64 / self.sample_rate as f64
    }

    pub fn cast<U: Scalar>(&self) -> MelSpectrogram<U> {
        MelSpectrogram {
            frames: self.frames.cast(),
            hop_length: self.hop_length,
            sample_rate: self.sample_rate,
        }
    }

    /// Linear (non-dB) magnitude of frame `t`.
    pub fn linear_frame(&self, t: usize) -> Vec<T> {
        self.frames.row(t).iter().map(|&db| db_to_amplitude(db)).collect()
    }
}

pub fn db_to_amplitude<T: Scalar>(db: T) -> T {
    T::of(10.0).powf(db / T::of(20.0))
}

pub fn amplitude_to_db<T: Scalar>(a: T) -> T {
    let floor = T::of(10f64.powf(FLOOR_DB / 20.0));
    T::of(20.0) * a.max(floor).log10()
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with unit peak, equally spaced on the HTK mel scale
/// between 0 Hz and Nyquist. Returns an `n_mels × (n_fft/2 + 1)` matrix.
pub fn mel_filterbank<T: Scalar>(sample_rate: u32, n_fft: usize, n_mels: usize) -> Matrix<T> {
    let n_bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let m_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    Matrix::from_fn(n_mels, n_bins, |m, k| {
        let f = k as f64 * sample_rate as f64 / n_fft as f64;
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let w = if f > lo && f <= c {
            (f - lo) / (c - lo)
        } else if f > c && f < hi {
            (hi - f) / (hi - c)
        } else {
            0.0
        };
        T::of(w)
    })
}

/// Index of the mel band whose triangle peaks closest to `freq`.
pub fn band_of_frequency(freq: f64, sample_rate: u32, n_mels: usize) -> usize {
    let m_max = hz_to_mel(sample_rate as f64 / 2.0);
    let pos = hz_to_mel(freq) / m_max * (n_mels + 1) as f64 - 1.0;
    pos.round().clamp(0.0, (n_mels - 1) as f64) as usize
}

/// Frame geometry shared by analysis and resynthesis: frame `t` is centred on
/// sample `t·hop + hop/2`, so it summarises samples `[t·hop, (t+1)·hop)`.
pub fn frame_center(t: usize) -> isize {
    (t * HOP_LENGTH + HOP_LENGTH / 2) as isize
}

pub fn frame_count(n_samples: usize) -> usize {
    n_samples.div_ceil(HOP_LENGTH)
}

/// Short-time Fourier analysis with the fixed 24 kHz geometry.
pub struct Stft<T: Scalar> {
    pub window: Vec<T>,
    pub window_sum: T,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Scalar> Default for Stft<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Stft<T> {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        let pad = (N_FFT - WIN_LENGTH) / 2;
        // periodic Hann of WIN_LENGTH, zero-padded to N_FFT
        let window: Vec<T> = (0..N_FFT)
            .map(|i| {
                if i < pad || i >= pad + WIN_LENGTH {
                    T::zero()
                } else {
                    let n = (i - pad) as f64;
                    T::of(0.5 - 0.5 * (2.0 * std::f64::consts::PI * n / WIN_LENGTH as f64).cos())
                }
            })
            .collect();
        let window_sum = window.iter().copied().sum();
        Self {
            window,
            window_sum,
            forward: planner.plan_fft_forward(N_FFT),
            inverse: planner.plan_fft_inverse(N_FFT),
        }
    }

    /// Complex spectrum of frame `t` (first `N_FFT/2 + 1` bins).
    pub fn frame_spectrum(&self, samples: &[T], t: usize) -> Vec<Complex<T>> {
        let start = frame_center(t) - (N_FFT / 2) as isize;
        let mut buf: Vec<Complex<T>> = (0..N_FFT)
            .map(|i| {
                let s = start + i as isize;
                let v = if s >= 0 && (s as usize) < samples.len() {
                    samples[s as usize]
                } else {
                    T::zero()
                };
                Complex::new(v * self.window[i], T::zero())
            })
            .collect();
        self.forward.process(&mut buf);
        buf.truncate(N_FFT / 2 + 1);
        buf
    }

    /// Magnitudes scaled so a full-band sinusoid of amplitude `A` peaks near `A`.
    pub fn magnitude(&self, spectrum: &[Complex<T>]) -> Vec<T> {
        let k = T::of(2.0) / self.window_sum;
        spectrum.iter().map(|c| c.norm() * k).collect()
    }

    /// Weighted overlap-add inverse of half spectra produced by [`Self::frame_spectrum`].
    pub fn inverse(&self, spectra: &[Vec<Complex<T>>], n_samples: usize) -> Vec<T> {
        let mut out = vec![T::zero(); n_samples];
        let mut norm = vec![T::zero(); n_samples];
        let inv_n = T::one() / T::of_usize(N_FFT);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); N_FFT];
        for (t, half) in spectra.iter().enumerate() {
            buf[..half.len()].copy_from_slice(half);
            for k in 1..N_FFT / 2 {
                buf[N_FFT - k] = half[k].conj();
            }
            self.inverse.process(&mut buf);
            let start = frame_center(t) - (N_FFT / 2) as isize;
            for (i, c) in buf.iter().enumerate() {
                let s = start + i as isize;
                if s >= 0 && (s as usize) < n_samples {
                    let w = self.window[i];
                    out[s as usize] += c.re * inv_n * w;
                    norm[s as usize] += w * w;
                }
            }
        }
        let tiny = T::of(1e-8);
        for (o, n) in out.iter_mut().zip(norm) {
            if n > tiny {
                *o /= n;
            }
        }
        out
    }
}

/// Mel analysis with a cached filterbank and FFT plan.
pub struct MelAnalyzer<T: Scalar> {
    pub stft: Stft<T>,
    pub filters: Matrix<T>,
}

impl<T: Scalar> Default for MelAnalyzer<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> MelAnalyzer<T> {
    pub fn new() -> Self {
        Self {
            stft: Stft::new(),
            filters: mel_filterbank(SAMPLE_RATE, N_FFT, N_MELS),
        }
    }

    pub fn analyze(&self, w: &Waveform<T>) -> Result<MelSpectrogram<T>> {
        if w.sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidArgument(format!(
                "expected {SAMPLE_RATE} Hz audio, got {}",
                w.sample_rate
            )));
        }
        if w.len() < HOP_LENGTH {
            return Err(Error::DegenerateInput(format!(
                "waveform of {} samples is shorter than one hop ({HOP_LENGTH})",
                w.len()
            )));
        }
        let n_frames = frame_count(w.len());
        let mut frames = Matrix::zeros(n_frames, N_MELS);
        for t in 0..n_frames {
            let mag = self.stft.magnitude(&self.stft.frame_spectrum(&w.samples, t));
            for m in 0..N_MELS {
                let e: T = self.filters.row(m).iter().zip(&mag).map(|(&f, &a)| f * a).sum();
                frames[(t, m)] = amplitude_to_db(e);
            }
        }
        MelSpectrogram::new(frames)
    }
}

pub fn mel_spectrogram<T: Scalar>(w: &Waveform<T>) -> Result<MelSpectrogram<T>> {
    MelAnalyzer::new().analyze(w)
}

const MEL_MAGIC: &[u8; 6] = b"PDMEL1";

/// Writes the cache layout: magic, `u32` frames, `u32` bands, `f32` hop
/// seconds, then row-major `f32` cells, all little-endian.
pub fn write_mel_cache<T: Scalar>(path: impl AsRef<Path>, m: &MelSpectrogram<T>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(18 + 4 * m.frames.len());
    buf.extend_from_slice(MEL_MAGIC);
    buf.extend_from_slice(&(m.n_frames() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.n_mels() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.hop_seconds() as f32).to_le_bytes());
    for v in m.frames.as_slice() {
        buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

pub fn read_mel_cache<T: Scalar>(path: impl AsRef<Path>) -> Result<MelSpectrogram<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 18 || &bytes[..6] != MEL_MAGIC {
        return Err(Error::Format(format!("{}: not a PDMEL1 file", path.display())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (u32_at(6), u32_at(10));
    let hop_seconds = f32::from_le_bytes(bytes[14..18].try_into().unwrap()) as f64;
    let body = &bytes[18..];
    if body.len() != rows * cols * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} data bytes, found {}",
            path.display(),
            rows * cols * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    let hop_length = (hop_seconds * SAMPLE_RATE as f64).round() as usize;
    let mut m = MelSpectrogram::new(Matrix::from_vec(rows, cols, data)?)?;
    m.hop_length = hop_length;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f64, n: usize) -> Waveform<f64> {
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 24000.0).sin())
                .collect(),
            SAMPLE_RATE,
        )
    }

    #[test]
    fn one_second_gives_eighty_frames() {
        let m = mel_spectrogram(&tone(440.0, 0.5, 24000)).unwrap();
        assert_eq!(m.n_frames(), 80);
        assert_eq!(m.n_mels(), 80);
        let m = mel_spectrogram(&tone(440.0, 0.5, 24001)).unwrap();
        assert_eq!(m.n_frames(), 81);
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let m = mel_spectrogram(&Waveform::<f32>::silence(24000)).unwrap();
        assert!(m.frames.as_slice().iter().all(|&v| v == -80.0));
    }

    #[test]
    fn shorter_than_one_hop_is_degenerate() {
        let r = mel_spectrogram(&Waveform::<f32>::silence(299));
        assert!(matches!(r, Err(Error::DegenerateInput(_))));
        assert!(mel_spectrogram(&Waveform::<f32>::silence(300)).is_ok());
    }

    /// Direct O(N²) DFT of one windowed frame projected through a mel bank
    /// built here from the closed-form triangle definition.
    #[test]
    fn tone_ridge_matches_direct_dft_oracle() {
        let w = tone(440.0, 0.5, 24000);
        let m = mel_spectrogram(&w).unwrap();
        let t = 40;
        let center = t * 300 + 150;
        let n_bins = 1025;
        let mut mag = vec![0.0f64; n_bins];
        let mut wsum = 0.0;
        for i in 0..1200 {
            wsum += 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / 1200.0).cos();
        }
        for (k, slot) in mag.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..1200 {
                let s = center - 600 + i;
                let win = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / 1200.0).cos();
                let x = w.samples[s] * win;
                // frame origin sits 424 samples into the 2048-point buffer
                let ph = -2.0 * std::f64::consts::PI * k as f64 * (i + 424) as f64 / 2048.0;
                re += x * ph.cos();
                im += x * ph.sin();
            }
            *slot = (re * re + im * im).sqrt() * 2.0 / wsum;
        }
        let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
        let imel = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
        let top = mel(12000.0);
        let mut oracle = vec![0.0; 80];
        for (b, o) in oracle.iter_mut().enumerate() {
            let lo = imel(top * b as f64 / 81.0);
            let c = imel(top * (b + 1) as f64 / 81.0);
            let hi = imel(top * (b + 2) as f64 / 81.0);
            for (k, &a) in mag.iter().enumerate() {
                let f = k as f64 * 24000.0 / 2048.0;
                let wgt = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
                *o += wgt * a;
            }
        }
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        let oracle_band = argmax(&oracle);
        assert_eq!(argmax(m.frames.row(t)), oracle_band);
        assert_eq!(oracle_band, band_of_frequency(440.0, 24000, 80));
        // the ridge is dominant: everything else is at least 6 dB below the peak
        let peak = m.frames[(t, oracle_band)];
        for (b, &v) in m.frames.row(t).iter().enumerate() {
            if (b as isize - oracle_band as isize).abs() > 1 {
                assert!(v < peak - 6.0, "band {b}: {v} vs peak {peak}");
            }
        }
        for b in 0..80 {
            let oracle_db = 20.0 * oracle[b].max(1e-4).log10();
            assert!((m.frames[(t, b)] - oracle_db).abs() < 1e-6);
        }
    }

    #[test]
    fn analysis_is_bitwise_deterministic() {
        let w = tone(330.0, 0.3, 12000);
        assert_eq!(mel_spectrogram(&w).unwrap(), mel_spectrogram(&w).unwrap());
    }

    #[test]
    fn cache_round_trip_and_rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pdmel");
        let m = mel_spectrogram(&tone(200.0, 0.2, 6000).cast::<f32>()).unwrap();
        write_mel_cache(&p, &m).unwrap();
        let back: MelSpectrogram<f32> = read_mel_cache(&p).unwrap();
        assert_eq!(back, m);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..6], b"PDMEL1");
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 20);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 80);
        assert_eq!(f32::from_le_bytes(bytes[14..18].try_into().unwrap()), 0.0125);
        std::fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(read_mel_cache::<f32>(&p), Err(Error::Format(_))));
    }
}

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::SAMPLE_RATE;

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T = f32> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn silence(len: usize) -> Self {
        Self::new(vec![T::zero(); len], SAMPLE_RATE)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> T {
        self.samples.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Scales the waveform down so that its peak is at most 1. Quieter
    /// signals are left untouched, preserving their level.
    pub fn peak_limited(mut self) -> Self {
        let peak = self.peak();
        if peak > T::one() {
            for s in &mut self.samples {
                *s /= peak;
            }
        }
        self
    }

    pub fn scaled(&self, k: T) -> Self {
        Self::new(self.samples.iter().map(|&s| s * k).collect(), self.sample_rate)
    }

    pub fn cast<U: Scalar>(&self) -> Waveform<U> {
        Waveform::new(
            self.samples.iter().map(|s| U::of(s.to_f64_lossy())).collect(),
            self.sample_rate,
        )
    }
}

/// Reads a 16-bit PCM mono RIFF file, resamples to 24 kHz and limits the peak to 1.
pub fn load_waveform<T: Scalar>(path: impl AsRef<Path>) -> Result<Waveform<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = hound::WavReader::new(std::io::BufReader::new(file))
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "{}: expected 16-bit PCM, found {:?} {} bits",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let samples: Vec<T> = reader
        .into_samples::<i16>()
        .map(|s| {
            s.map(|v| T::of(v as f64 / 32768.0))
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        })
        .collect::<Result<_>>()?;
    if samples.is_empty() {
        return Err(Error::Format(format!("{}: no audio samples", path.display())));
    }
    let resampled = resample(&samples, spec.sample_rate, SAMPLE_RATE);
    Ok(Waveform::new(resampled, SAMPLE_RATE).peak_limited())
}

/// Writes a 16-bit PCM mono RIFF file; samples are clipped to `[-1, 1]`.
pub fn save_waveform<T: Scalar>(path: impl AsRef<Path>, w: &Waveform<T>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for &s in &w.samples {
        let v = (s.to_f64_lossy().clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// The output has `round(len · to / from)` samples.
pub fn resample<T: Scalar>(samples: &[T], from: u32, to: u32) -> Vec<T> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    const ZERO_CROSSINGS: f64 = 16.0;
    let ratio = to as f64 / from as f64;
    let out_len = (samples.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    (0..out_len)
        .map(|j| {
            let center = j as f64 / ratio;
            let lo = (center - half_width).ceil().max(0.0) as usize;
            let hi = ((center + half_width).floor() as usize).min(samples.len() - 1);
            let mut acc = 0.0;
            for (i, s) in samples.iter().enumerate().take(hi + 1).skip(lo) {
                let x = i as f64 - center;
                let window = 0.5 + 0.5 * (std::f64::consts::PI * x / half_width).cos();
                acc += s.to_f64_lossy() * cutoff * sinc(cutoff * x) * window;
            }
            T::of(acc)
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

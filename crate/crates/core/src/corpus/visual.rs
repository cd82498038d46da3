//! Per-clip visual features and the PDVIS1 container.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

const MAGIC: &[u8; 6] = b"PDVIS1";

/// Visual frame rate of every clip.
pub const VISUAL_FPS: f64 = 25.0;

/// Emotion sequence, clip-level atmosphere vector and lip-motion sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatureBundle<T = f32> {
    pub emotion: Matrix<T>,
    pub atmosphere: Vec<T>,
    pub lip: Matrix<T>,
    pub fps: f64,
}

impl<T: Scalar> VisualFeatureBundle<T> {
    pub fn new(emotion: Matrix<T>, atmosphere: Vec<T>, lip: Matrix<T>) -> Result<Self> {
        let b = Self {
            emotion,
            atmosphere,
            lip,
            fps: VISUAL_FPS,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn n_frames(&self) -> usize {
        self.emotion.rows()
    }

    pub fn dim(&self) -> usize {
        self.emotion.cols()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_frames() as f64 / self.fps
    }

    pub fn validate(&self) -> Result<()> {
        if self.emotion.shape() != self.lip.shape() {
            return Err(Error::InvariantViolation(format!(
                "emotion {:?} and lip {:?} shapes differ",
                self.emotion.shape(),
                self.lip.shape()
            )));
        }
        if self.atmosphere.len() != self.emotion.cols() {
            return Err(Error::InvariantViolation(format!(
                "atmosphere has {} dims, features have {}",
                self.atmosphere.len(),
                self.emotion.cols()
            )));
        }
        if self.emotion.rows() == 0 {
            return Err(Error::DegenerateInput("clip has no visual frames".into()));
        }
        if !self.emotion.all_finite() || !self.lip.all_finite() || self.atmosphere.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation("non-finite visual feature".into()));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> VisualFeatureBundle<U> {
        VisualFeatureBundle {
            emotion: self.emotion.cast(),
            atmosphere: self.atmosphere.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
            lip: self.lip.cast(),
            fps: self.fps,
        }
    }
}

pub fn write_visual<T: Scalar>(path: impl AsRef<Path>, v: &VisualFeatureBundle<T>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(14 + 4 * (2 * v.emotion.len() + v.atmosphere.len()));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(v.n_frames() as u32).to_le_bytes());
    buf.extend_from_slice(&(v.dim() as u32).to_le_bytes());
    let values = v.emotion.as_slice().iter().chain(&v.atmosphere).chain(v.lip.as_slice());
    for x in values {
        buf.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_visual<T: Scalar>(path: impl AsRef<Path>) -> Result<VisualFeatureBundle<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 14 || &bytes[..6] != MAGIC {
        return Err(Error::Format(format!("{} is not a PDVIS1 file", path.display())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (l_v, d) = (u32_at(6), u32_at(10));
    let expected = 14 + 4 * (2 * l_v * d + d);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes for L_v={l_v}, d={d}, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let values: Vec<T> = bytes[14..]
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    let emotion = Matrix::from_vec(l_v, d, values[..l_v * d].to_vec())?;
    let atmosphere = values[l_v * d..l_v * d + d].to_vec();
    let lip = Matrix::from_vec(l_v, d, values[l_v * d + d..].to_vec())?;
    VisualFeatureBundle::new(emotion, atmosphere, lip).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.pdvis");
        let v = VisualFeatureBundle::new(
            Matrix::<f32>::from_fn(25, 4, |r, c| (r * 4 + c) as f32 * 0.1),
            vec![0.5, -0.5, 1.0, 2.0],
            Matrix::from_fn(25, 4, |r, c| r as f32 - c as f32),
        )
        .unwrap();
        write_visual(&p, &v).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..6], b"PDVIS1");
        assert_eq!(bytes.len(), 14 + 4 * (2 * 100 + 4));
        assert_eq!(read_visual::<f32>(&p).unwrap(), v);
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_visual::<f32>(&p), Err(Error::Format(_))));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let r = VisualFeatureBundle::new(Matrix::<f32>::zeros(5, 3), vec![0.0; 3], Matrix::zeros(4, 3));
        assert!(r.is_err());
    }
}

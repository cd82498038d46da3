//! Monotonic hard alignment between phonemes and mel frames.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Size of the synthetic phoneme inventory.
pub const PHONEME_INVENTORY: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeSequence {
    pub ids: Vec<usize>,
    pub inventory_size: usize,
}

impl PhonemeSequence {
    pub fn new(ids: Vec<usize>, inventory_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::DegenerateInput("empty phoneme sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= inventory_size) {
            return Err(Error::InvalidArgument(format!(
                "phoneme id {bad} outside inventory of {inventory_size}"
            )));
        }
        Ok(Self { ids, inventory_size })
    }

    pub fn synthetic(ids: Vec<usize>) -> Result<Self> {
        Self::new(ids, PHONEME_INVENTORY)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Space- or comma-separated integer ids.
    pub fn parse(text: &str, inventory_size: usize) -> Result<Self> {
        let ids = text
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad phoneme id {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ids, inventory_size)
    }

    pub fn to_text(&self) -> String {
        self.ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
    }
}

/// Frames per phoneme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DurationVector(pub Vec<usize>);

impl DurationVector {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        text.split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad duration {s:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(DurationVector)
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }

    /// Frame-to-phoneme assignment, length `total()`.
    pub fn frame_owners(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(i, &d)| std::iter::repeat(i).take(d))
            .collect()
    }

    /// Proportionally rescales to sum exactly `target` using largest remainders.
    pub fn rescaled(&self, target: usize) -> Result<Self> {
        let weights: Vec<f64> = self.0.iter().map(|&d| d as f64).collect();
        largest_remainder(&weights, target).map(DurationVector)
    }
}

/// Integer apportionment of `target` proportional to non-negative `weights`:
/// floor of each exact share, then the leftover units go to the largest
/// fractional parts (ties → lower index).
pub fn largest_remainder(weights: &[f64], target: usize) -> Result<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::DegenerateInput(
            "weights must be finite, non-negative, and sum to a positive value".into(),
        ));
    }
    let exact: Vec<f64> = weights.iter().map(|w| w * target as f64 / total).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    // `assigned` can exceed `target` by float error only in pathological
    // cases; the remainder loop then has nothing to hand out.
    for &i in order.iter().take(target.saturating_sub(assigned)) {
        out[i] += 1;
    }
    let mut excess = out.iter().sum::<usize>().saturating_sub(target);
    for &i in order.iter().rev() {
        if excess == 0 {
            break;
        }
        if out[i] > 0 {
            out[i] -= 1;
            excess -= 1;
        }
    }
    Ok(out)
}

/// Hard `L_pho × L_mel` alignment stored as each frame's owning phoneme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMatrix {
    n_phonemes: usize,
    owners: Vec<usize>,
}

impl AlignmentMatrix {
    pub fn n_phonemes(&self) -> usize {
        self.n_phonemes
    }

    pub fn n_frames(&self) -> usize {
        self.owners.len()
    }

    pub fn owners(&self) -> &[usize] {
        &self.owners
    }

    pub fn dense<T: Scalar>(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.n_phonemes, self.owners.len());
        for (t, &i) in self.owners.iter().enumerate() {
            m[(i, t)] = T::one();
        }
        m
    }

    /// Validates a dense 0/1 matrix: one 1 per column, non-decreasing owners.
    pub fn from_dense<T: Scalar>(m: &Matrix<T>) -> Result<Self> {
        let mut owners = Vec::with_capacity(m.cols());
        for t in 0..m.cols() {
            let mut owner = None;
            for i in 0..m.rows() {
                let v = m[(i, t)];
                if v == T::one() {
                    if owner.is_some() {
                        return Err(Error::InvariantViolation(format!(
                            "frame {t} is assigned to more than one phoneme"
                        )));
                    }
                    owner = Some(i);
                } else if v != T::zero() {
                    return Err(Error::InvariantViolation(format!(
                        "entry ({i}, {t}) is {v}, expected 0 or 1"
                    )));
                }
            }
            let Some(i) = owner else {
                return Err(Error::InvariantViolation(format!("frame {t} has no phoneme")));
            };
            if let Some(&prev) = owners.last() {
                if i < prev {
                    return Err(Error::InvariantViolation(format!(
                        "frame {t} goes back from phoneme {prev} to {i}"
                    )));
                }
            }
            owners.push(i);
        }
        Ok(Self {
            n_phonemes: m.rows(),
            owners,
        })
    }
}

pub fn durations_to_alignment(d: &DurationVector) -> Result<AlignmentMatrix> {
    if d.total() == 0 {
        return Err(Error::DegenerateInput("durations sum to zero".into()));
    }
    Ok(AlignmentMatrix {
        n_phonemes: d.len(),
        owners: d.frame_owners(),
    })
}

pub fn alignment_to_durations(a: &AlignmentMatrix) -> DurationVector {
    let mut d = vec![0; a.n_phonemes];
    for &i in &a.owners {
        d[i] += 1;
    }
    DurationVector(d)
}

/// Row `t` of the output is the feature row of the phoneme owning frame `t`.
pub fn upsample_by_alignment<T: Scalar>(features: &Matrix<T>, a: &AlignmentMatrix) -> Result<Matrix<T>> {
    if features.rows() != a.n_phonemes {
        return Err(Error::InvalidArgument(format!(
            "{} feature rows for {} phonemes",
            features.rows(),
            a.n_phonemes
        )));
    }
    let mut out = Matrix::zeros(a.n_frames(), features.cols());
    for (t, &i) in a.owners.iter().enumerate() {
        out.row_mut(t).copy_from_slice(features.row(i));
    }
    Ok(out)
}

/// Gather index for upsampling on the autodiff tape.
pub fn upsample_index(a: &AlignmentMatrix) -> Vec<Option<usize>> {
    a.owners.iter().map(|&i| Some(i)).collect()
}

/// Per-phoneme mean of a frame-level curve; phonemes without frames get 0.
pub fn phoneme_pool_prosody<T: Scalar>(curve: &[T], a: &AlignmentMatrix) -> Result<Vec<T>> {
    if curve.len() != a.n_frames() {
        return Err(Error::InvalidArgument(format!(
            "curve has {} frames, alignment has {}",
            curve.len(),
            a.n_frames()
        )));
    }
    let mut sums = vec![T::zero(); a.n_phonemes];
    let mut counts = vec![0usize; a.n_phonemes];
    for (&v, &i) in curve.iter().zip(&a.owners) {
        sums[i] += v;
        counts[i] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| if c == 0 { T::zero() } else { s / T::of_usize(c) })
        .collect())
}

/// Reads `utt_id<TAB>d1,d2,...` lines.
pub fn read_duration_file(path: impl AsRef<Path>) -> Result<Vec<(String, DurationVector)>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, durs) = line.split_once('\t').ok_or_else(|| Error::Manifest {
            line: n + 1,
            utt_id: String::new(),
            field: "durations".into(),
            message: "expected utt_id<TAB>durations".into(),
        })?;
        let d = DurationVector::parse(durs).map_err(|e| Error::Manifest {
            line: n + 1,
            utt_id: id.to_string(),
            field: "durations".into(),
            message: e.to_string(),
        })?;
        out.push((id.to_string(), d));
    }
    Ok(out)
}

pub fn write_duration_file<'a>(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = (&'a str, &'a DurationVector)>,
) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for (id, d) in rows {
        writeln!(f, "{id}\t{}", d.to_text()).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

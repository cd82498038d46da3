//! Objective metrics: mel-cepstral distortion under time warping, the
//! length-penalised variant, style-embedding similarity and duration error,
//! plus corpus evaluation and an adapter for external scorers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic::AcousticModel;
use crate::adapting::{render_dub_mel, synthesize_dub_mel, ProsodyModel};
use crate::alignment::DurationVector;
use crate::corpus::{ingest_manifest, read_visual, UtteranceRecord};
use crate::error::{Error, Result, StageExt};
use crate::scalar::Scalar;
use crate::signal::{load_waveform, MelAnalyzer, MelSpectrogram, Waveform};

/// Cepstral coefficients compared by MCD, `c1..=c13`; `c0` (level) is excluded.
pub const MCD_COEFFICIENTS: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McdConfig {
    pub coefficients: usize,
    /// The length penalty is `(max/min)^exponent`.
    pub length_penalty_exponent: f64,
}

impl Default for McdConfig {
    fn default() -> Self {
        Self {
            coefficients: MCD_COEFFICIENTS,
            length_penalty_exponent: 1.0,
        }
    }
}

/// Orthonormal DCT-II of the natural-log mel amplitudes, coefficients
/// `1..=n` of every frame.
pub fn mel_cepstra<T: Scalar>(m: &MelSpectrogram<T>, n: usize) -> Vec<Vec<f64>> {
    let bins = m.n_mels();
    let db_to_ln = std::f64::consts::LN_10 / 20.0;
    let basis: Vec<Vec<f64>> = (1..=n)
        .map(|k| {
            (0..bins)
                .map(|j| {
                    (2.0 / bins as f64).sqrt()
                        * (std::f64::consts::PI * k as f64 * (2 * j + 1) as f64 / (2 * bins) as f64).cos()
                })
                .collect()
        })
        .collect();
    m.frames
        .iter_rows()
        .map(|row| {
            basis
                .iter()
                .map(|b| b.iter().zip(row).map(|(w, &v)| w * v.to_f64_lossy() * db_to_ln).sum())
                .collect()
        })
        .collect()
}

/// Distortion between two cepstral frames in dB.
pub fn frame_mcd(a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    10.0 / std::f64::consts::LN_10 * (2.0 * sq).sqrt()
}

fn check_frames<T: Scalar>(a: &MelSpectrogram<T>, b: &MelSpectrogram<T>) -> Result<()> {
    if a.n_frames() < 2 || b.n_frames() < 2 {
        return Err(Error::DegenerateInput(format!(
            "MCD needs at least 2 frames per input, got {} and {}",
            a.n_frames(),
            b.n_frames()
        )));
    }
    if a.n_mels() != b.n_mels() {
        return Err(Error::InvalidArgument(format!(
            "{} vs {} mel bins",
            a.n_mels(),
            b.n_mels()
        )));
    }
    Ok(())
}

/// Minimum-cost monotone path with steps (1,0), (0,1), (1,1); returns the
/// mean local cost along it. Equal-cost paths resolve to the shorter one.
pub fn dtw_mean_cost(cost: &[Vec<f64>]) -> f64 {
    let (n, m) = (cost.len(), cost[0].len());
    let mut acc = vec![vec![(f64::INFINITY, 0usize); m]; n];
    for i in 0..n {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, usize::MAX);
                for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
                    if i >= di && j >= dj {
                        let c = acc[i - di][j - dj];
                        if c.0 < best.0 || (c.0 == best.0 && c.1 < best.1) {
                            best = c;
                        }
                    }
                }
                best
            };
            acc[i][j] = (best.0 + cost[i][j], best.1 + 1);
        }
    }
    let (total, len) = acc[n - 1][m - 1];
    total / len as f64
}

pub fn mcd_dtw_with<T: Scalar>(a: &MelSpectrogram<T>, b: &MelSpectrogram<T>, config: &McdConfig) -> Result<f64> {
    check_frames(a, b)?;
    let (ca, cb) = (mel_cepstra(a, config.coefficients), mel_cepstra(b, config.coefficients));
    let cost: Vec<Vec<f64>> = ca
        .iter()
        .map(|x| cb.iter().map(|y| frame_mcd(x, y)).collect())
        .collect();
    Ok(dtw_mean_cost(&cost))
}

pub fn mcd_dtw<T: Scalar>(a: &MelSpectrogram<T>, b: &MelSpectrogram<T>) -> Result<f64> {
    mcd_dtw_with(a, b, &McdConfig::default())
}

/// Unwarped frame-by-frame mean MCD of equal-length inputs.
pub fn mcd_framewise<T: Scalar>(a: &MelSpectrogram<T>, b: &MelSpectrogram<T>) -> Result<f64> {
    check_frames(a, b)?;
    if a.n_frames() != b.n_frames() {
        return Err(Error::InvalidArgument(format!(
            "frame-wise MCD needs equal lengths, got {} and {}",
            a.n_frames(),
            b.n_frames()
        )));
    }
    let (ca, cb) = (mel_cepstra(a, MCD_COEFFICIENTS), mel_cepstra(b, MCD_COEFFICIENTS));
    Ok(ca.iter().zip(&cb).map(|(x, y)| frame_mcd(x, y)).sum::<f64>() / ca.len() as f64)
}

pub fn length_penalty(la: usize, lb: usize, exponent: f64) -> f64 {
    (la.max(lb) as f64 / la.min(lb).max(1) as f64).powf(exponent)
}

pub fn mcd_dtw_sl_with<T: Scalar>(a: &MelSpectrogram<T>, b: &MelSpectrogram<T>, config: &McdConfig) -> Result<f64> {
    Ok(mcd_dtw_with(a, b, config)? * length_penalty(a.n_frames(), b.n_frames(), config.length_penalty_exponent))
}

pub fn mcd_dtw_sl<T: Scalar>(a: &MelSpectrogram<T>, b: &MelSpectrogram<T>) -> Result<f64> {
    mcd_dtw_sl_with(a, b, &McdConfig::default())
}

/// Cosine of the acoustic style vectors of two spectrograms.
pub fn secs_mel<T: Scalar>(a: &MelSpectrogram<T>, b: &MelSpectrogram<T>, encoder: &AcousticModel<T>) -> Result<f64> {
    for m in [a, b] {
        if m.frames.max_value() <= m.frames.min_value() {
            return Err(Error::DegenerateInput(
                "spectrogram is constant, no voice to embed".into(),
            ));
        }
    }
    let sa = encoder.encode_style_acoustic(a)?;
    let sb = encoder.encode_style_acoustic(b)?;
    Ok(sa.cosine(&sb).to_f64_lossy().clamp(-1.0, 1.0))
}

pub fn secs<T: Scalar>(generated: &Waveform<T>, reference: &Waveform<T>, encoder: &AcousticModel<T>) -> Result<f64> {
    let analyzer = MelAnalyzer::new();
    secs_mel(&analyzer.analyze(generated)?, &analyzer.analyze(reference)?, encoder)
}

/// Mean absolute per-phoneme difference in frames.
pub fn duration_error(pred: &DurationVector, truth: &DurationVector) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted durations for {} phonemes",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: usize = pred.0.iter().zip(&truth.0).map(|(&a, &b)| a.abs_diff(b)).sum();
    Ok(sum as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSetting {
    /// The target's own audio is the voice reference.
    Dub1,
    /// Another utterance by the same speaker is the voice reference.
    Dub2,
    /// The manifest names a reference for every item.
    ZeroShot,
}

impl FromStr for EvalSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dub1" => Ok(Self::Dub1),
            "dub2" => Ok(Self::Dub2),
            "zero_shot" => Ok(Self::ZeroShot),
            other => Err(Error::InvalidArgument(format!(
                "unknown setting {other:?}, expected dub1, dub2 or zero_shot"
            ))),
        }
    }
}

/// How the evaluated prosody is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProsodySource {
    Model,
    /// Model prosody with the phoneme order of pitch, energy and duration
    /// permuted independently per clip; a control that keeps the marginal
    /// statistics but destroys the alignment to content.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceMetrics {
    pub utt_id: String,
    pub mcd_dtw: f64,
    pub mcd_dtw_sl: f64,
    pub secs: f64,
    pub duration_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub setting: Option<EvalSetting>,
    pub items: Vec<UtteranceMetrics>,
    pub mean: UtteranceMetrics,
}

impl MetricReport {
    pub fn new(setting: Option<EvalSetting>, items: Vec<UtteranceMetrics>) -> Self {
        let n = items.len().max(1) as f64;
        let avg = |f: fn(&UtteranceMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        let mean = UtteranceMetrics {
            utt_id: "mean".into(),
            mcd_dtw: avg(|m| m.mcd_dtw),
            mcd_dtw_sl: avg(|m| m.mcd_dtw_sl),
            secs: avg(|m| m.secs),
            duration_error: avg(|m| m.duration_error),
        };
        Self { setting, items, mean }
    }

    /// Tab-separated rows, SECS as a percentage, closing with the mean row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("utt_id\tmcd_dtw\tmcd_dtw_sl\tsecs_pct\tduration_error\n");
        for m in self.items.iter().chain(std::iter::once(&self.mean)) {
            let _ = writeln!(
                s,
                "{}\t{:.4}\t{:.4}\t{:.2}\t{:.4}",
                m.utt_id,
                m.mcd_dtw,
                m.mcd_dtw_sl,
                100.0 * m.secs,
                m.duration_error
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let setting = match self.setting {
            Some(EvalSetting::Dub1) => "dub1",
            Some(EvalSetting::Dub2) => "dub2",
            Some(EvalSetting::ZeroShot) => "zero_shot",
            None => "-",
        };
        format!(
            "setting      {setting}\nutterances   {}\nMCD-DTW      {:.3} dB\nMCD-DTW-SL   {:.3} dB\nSECS         {:.2} %\ndur. error   {:.3} frames\n",
            self.items.len(),
            self.mean.mcd_dtw,
            self.mean.mcd_dtw_sl,
            100.0 * self.mean.secs,
            self.mean.duration_error
        )
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Scores one generated spectrogram against its ground truth.
pub fn score_utterance<T: Scalar>(
    utt_id: &str,
    generated: &MelSpectrogram<T>,
    target: &MelSpectrogram<T>,
    predicted: &DurationVector,
    truth: &DurationVector,
    encoder: &AcousticModel<T>,
) -> Result<UtteranceMetrics> {
    Ok(UtteranceMetrics {
        utt_id: utt_id.to_string(),
        mcd_dtw: mcd_dtw(generated, target)?,
        mcd_dtw_sl: mcd_dtw_sl(generated, target)?,
        secs: secs_mel(generated, target, encoder)?,
        duration_error: duration_error(predicted, truth)?,
    })
}

/// Voice reference audio for every record under a setting.
pub fn select_references(
    records: &[UtteranceRecord],
    setting: EvalSetting,
    manifest_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let missing = |i: usize, field: &str, message: String| Error::Manifest {
        line: i + 1,
        utt_id: records[i].utt_id.clone(),
        field: field.into(),
        message,
    };
    (0..records.len())
        .map(|i| {
            let r = &records[i];
            match setting {
                EvalSetting::Dub1 => Ok(r.wav.clone()),
                EvalSetting::Dub2 => records
                    .iter()
                    .enumerate()
                    .find(|(j, o)| *j != i && o.speaker_id == r.speaker_id)
                    .map(|(_, o)| o.wav.clone())
                    .ok_or_else(|| {
                        missing(
                            i,
                            "speaker_id",
                            format!("speaker {} has no other utterance to use as reference", r.speaker_id),
                        )
                    }),
                EvalSetting::ZeroShot => {
                    let name = r
                        .reference
                        .as_ref()
                        .ok_or_else(|| missing(i, "reference", "zero-shot evaluation needs a reference".into()))?;
                    if let Some(o) = records.iter().find(|o| &o.utt_id == name) {
                        return Ok(o.wav.clone());
                    }
                    let p = manifest_dir.join(name);
                    if p.is_file() {
                        Ok(p)
                    } else {
                        Err(missing(
                            i,
                            "reference",
                            format!("reference {name:?} is neither an utt_id nor a file"),
                        ))
                    }
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub seed: u64,
    pub prosody: ProsodySource,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            prosody: ProsodySource::Model,
        }
    }
}

fn permuted<V: Clone>(v: &[V], rng: &mut ChaCha8Rng) -> Vec<V> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.shuffle(rng);
    idx.into_iter().map(|i| v[i].clone()).collect()
}

/// Synthesises every dubbing record of the manifest and scores it against
/// its ground-truth audio. Items run in parallel; the report is in manifest
/// order and depends only on the models, the manifest and `options.seed`.
pub fn evaluate_corpus<T: Scalar>(
    manifest: impl AsRef<Path>,
    acoustic: &AcousticModel<T>,
    prosodic: &ProsodyModel<T>,
    setting: EvalSetting,
    options: &EvalOptions,
) -> Result<MetricReport> {
    let manifest = manifest.as_ref();
    let records = ingest_manifest(manifest)?;
    let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let references = select_references(&records, setting, &dir)?;
    let analyzer = MelAnalyzer::<T>::new();
    let items = records
        .par_iter()
        .zip(&references)
        .enumerate()
        .map(|(i, (r, reference))| {
            let visual_path = r.visual.as_ref().ok_or_else(|| Error::Manifest {
                line: i + 1,
                utt_id: r.utt_id.clone(),
                field: "visual".into(),
                message: "evaluation needs dubbing clips".into(),
            })?;
            let visual = read_visual::<T>(visual_path).stage("visual features")?;
            let target = analyzer.analyze(&load_waveform(&r.wav)?).stage("target analysis")?;
            let ref_mel = analyzer
                .analyze(&load_waveform(reference)?)
                .stage("reference analysis")?;
            let seed = options.seed.wrapping_add(i as u64);
            let mut out = synthesize_dub_mel(&r.phonemes, &ref_mel, &visual, acoustic, prosodic, seed)?;
            if options.prosody == ProsodySource::Shuffled {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a1f);
                out.pitch = permuted(&out.pitch, &mut rng);
                out.energy = permuted(&out.energy, &mut rng);
                out.durations = DurationVector(permuted(&out.durations.0, &mut rng));
                out.mel = render_dub_mel(
                    acoustic,
                    &r.phonemes,
                    &out.acoustic_style,
                    &out.pitch,
                    &out.energy,
                    &out.durations,
                )?;
            }
            score_utterance(&r.utt_id, &out.mel, &target, &out.durations, &r.durations, acoustic)
                .map_err(|e| e.in_stage("metrics"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::new(Some(setting), items))
}

/// Scores from an external evaluator, one row per utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalScores {
    pub metrics: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

/// Out-of-process scorer (ASR error rate, MOS prediction, emotion accuracy
/// and the like). The program is invoked as `program args.. MANIFEST` where
/// `MANIFEST` lists `utt_id<TAB>wav_path` lines; it must print a header
/// `utt_id<TAB>metric..` followed by one tab-separated row per utterance and
/// exit with status 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalEvaluator {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

impl ExternalEvaluator {
    pub fn run(&self, generated: &[(String, PathBuf)], work_dir: &Path) -> Result<ExternalScores> {
        let list = work_dir.join("external_eval_manifest.tsv");
        let body: String = generated
            .iter()
            .map(|(id, p)| format!("{id}\t{}\n", p.display()))
            .collect();
        std::fs::write(&list, body).map_err(|e| Error::io(&list, e))?;
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(&list)
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        if !out.status.success() {
            return Err(Error::Format(format!(
                "external evaluator {} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        parse_external_scores(&String::from_utf8_lossy(&out.stdout))
    }
}

pub fn parse_external_scores(text: &str) -> Result<ExternalScores> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("external evaluator printed nothing".into()))?;
    let mut cols = header.split('\t');
    if cols.next() != Some("utt_id") {
        return Err(Error::Format(format!(
            "external header must start with utt_id: {header:?}"
        )));
    }
    let metrics: Vec<String> = cols.map(str::to_string).collect();
    let rows = lines
        .map(|l| {
            let mut f = l.split('\t');
            let id = f.next().unwrap_or_default().to_string();
            let vals = f
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad score {v:?} in {l:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != metrics.len() {
                return Err(Error::Format(format!(
                    "row {l:?} has {} scores for {} metrics",
                    vals.len(),
                    metrics.len()
                )));
            }
            Ok((id, vals))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExternalScores { metrics, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_mel(rng: &mut ChaCha8Rng, frames: usize) -> MelSpectrogram<f64> {
        MelSpectrogram::new(Matrix::from_fn(frames, 80, |_, _| rng.gen_range(-80.0..0.0))).unwrap()
    }

    // Independent recursion over every monotone path.
    fn exhaustive(cost: &[Vec<f64>], i: usize, j: usize) -> Vec<(f64, usize)> {
        if i == 0 && j == 0 {
            return vec![(cost[0][0], 1)];
        }
        let mut out = Vec::new();
        for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
            if i >= di && j >= dj {
                for (c, l) in exhaustive(cost, i - di, j - dj) {
                    out.push((c + cost[i][j], l + 1));
                }
            }
        }
        out
    }

    #[test]
    fn dtw_matches_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (n, m) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.gen::<f64>()).collect()).collect();
            let best = exhaustive(&cost, n - 1, m - 1)
                .into_iter()
                .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
                .unwrap();
            assert!((dtw_mean_cost(&cost) - best.0 / best.1 as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn cepstra_match_dense_dct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mel(&mut rng, 3);
        let c = mel_cepstra(&m, 79);
        // the orthonormal basis preserves energy once c0 is added back
        for (t, row) in m.frames.iter_rows().enumerate() {
            let x: Vec<f64> = row.iter().map(|v| v * std::f64::consts::LN_10 / 20.0).collect();
            let c0 = x.iter().sum::<f64>() / 80f64.sqrt();
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let coeff: f64 = c0 * c0 + c[t].iter().map(|v| v * v).sum::<f64>();
            assert!((energy - coeff).abs() < 1e-9 * energy);
        }
    }

    #[test]
    fn identical_and_duplicated_inputs_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_mel(&mut rng, 12);
        assert_eq!(mcd_dtw(&a, &a).unwrap(), 0.0);
        assert_eq!(mcd_dtw_sl(&a, &a).unwrap(), 0.0);
        let doubled = Matrix::from_fn(24, 80, |t, j| a.frames.row(t / 2)[j]);
        let b = MelSpectrogram::new(doubled).unwrap();
        assert_eq!(mcd_dtw(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn length_penalty_scales_by_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_mel(&mut rng, 20);
        let b = random_mel(&mut rng, 10);
        let base = mcd_dtw(&a, &b).unwrap();
        assert!((mcd_dtw_sl(&a, &b).unwrap() - 2.0 * base).abs() < 1e-12);
        let c = random_mel(&mut rng, 20);
        assert_eq!(mcd_dtw_sl(&a, &c).unwrap(), mcd_dtw(&a, &c).unwrap());
    }

    #[test]
    fn short_inputs_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_mel(&mut rng, 1);
        let b = random_mel(&mut rng, 5);
        assert!(matches!(mcd_dtw(&a, &b), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn duration_error_cases() {
        let d = |v: &[usize]| DurationVector(v.to_vec());
        assert_eq!(duration_error(&d(&[4, 5]), &d(&[4, 5])).unwrap(), 0.0);
        assert_eq!(duration_error(&d(&[2, 3]), &d(&[3, 2])).unwrap(), 1.0);
        assert!(matches!(
            duration_error(&d(&[1]), &d(&[1, 2])),
            Err(Error::InvalidArgument(_))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let n = rng.gen_range(1..30);
            let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..20)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..20)).collect();
            let mut s = 0.0;
            for k in 0..n {
                s += (a[k] as f64 - b[k] as f64).abs();
            }
            assert!((duration_error(&d(&a), &d(&b)).unwrap() - s / n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn settings_parse() {
        assert_eq!("dub2".parse::<EvalSetting>().unwrap(), EvalSetting::Dub2);
        assert!("dub3".parse::<EvalSetting>().is_err());
    }

    #[test]
    fn external_scores_parse_and_reject() {
        let s = parse_external_scores("utt_id\twer\tmos\na\t0.1\t3.0\nb\t0.2\t3.5\n").unwrap();
        assert_eq!(s.metrics, vec!["wer", "mos"]);
        assert_eq!(s.rows[1], ("b".to_string(), vec![0.2, 3.5]));
        assert!(parse_external_scores("utt_id\twer\na\tx\n").is_err());
        assert!(parse_external_scores("id\twer\n").is_err());
        assert!(parse_external_scores("utt_id\twer\na\t1\t2\n").is_err());
    }

    #[test]
    fn report_mean_and_tsv() {
        let m = |id: &str, v: f64| UtteranceMetrics {
            utt_id: id.into(),
            mcd_dtw: v,
            mcd_dtw_sl: 2.0 * v,
            secs: 0.5,
            duration_error: v,
        };
        let r = MetricReport::new(Some(EvalSetting::Dub1), vec![m("a", 1.0), m("b", 3.0)]);
        assert_eq!(r.mean.mcd_dtw, 2.0);
        assert_eq!(r.mean.mcd_dtw_sl, 4.0);
        let tsv = r.to_tsv();
        assert_eq!(tsv.lines().count(), 4);
        assert!(tsv.lines().last().unwrap().starts_with("mean\t2.0000\t4.0000\t50.00"));
        assert!(r.summary().contains("dub1"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn mcd_is_symmetric_nonnegative_and_below_framewise(seed in any::<u64>(), la in 2usize..14, lb in 2usize..14) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mel(&mut rng, la);
            let b = random_mel(&mut rng, lb);
            let ab = mcd_dtw(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - mcd_dtw(&b, &a).unwrap()).abs() < 1e-6);
            prop_assert!(mcd_dtw_sl(&a, &b).unwrap() >= ab);
            let c = random_mel(&mut rng, la);
            prop_assert!(mcd_dtw(&a, &c).unwrap() <= mcd_framewise(&a, &c).unwrap() + 1e-9);
        }
    }
}

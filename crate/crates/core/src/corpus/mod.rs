//! Utterance records, manifest ingestion and the synthetic corpus generators.

mod synth;
pub mod visual;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{DurationVector, PhonemeSequence, PHONEME_INVENTORY};
use crate::augment::AugmentationSpec;
use crate::error::{Error, Result};
use crate::signal::mel::frame_count;
use crate::signal::prosody::ProsodyCurves;
use crate::signal::SAMPLE_RATE;

pub use synth::{
    generate_dub_corpus, generate_speech_corpus, phoneme_shape, CorpusOptions, PhonemeShape, SpeakerTemplate,
};
pub use visual::{read_visual, write_visual, VisualFeatureBundle, VISUAL_FPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    /// Text–speech pair for acoustic pre-training.
    Speech,
    /// Script, clip and dubbed speech triplet.
    Dub,
}

/// One corpus item. Paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub kind: RecordKind,
    pub phonemes: PhonemeSequence,
    pub wav: PathBuf,
    pub durations: DurationVector,
    pub prosody: ProsodyCurves<f32>,
    pub visual: Option<PathBuf>,
    pub augmentation: Option<AugmentationSpec>,
    /// Quantised sign of the latent emotion: -1, 0 or 1.
    pub emotion_label: Option<i8>,
    /// Latent emotion amplitude used by the synthetic generator.
    pub emotion_amplitude: Option<f32>,
    /// Explicit reference utterance for zero-shot evaluation.
    pub reference: Option<String>,
}

impl UtteranceRecord {
    pub fn n_frames(&self) -> usize {
        self.durations.total()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    utt_id: String,
    speaker_id: String,
    kind: RecordKind,
    phonemes: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inventory: Option<usize>,
    wav: String,
    durations: String,
    pitch: Vec<f32>,
    energy: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    visual: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    augmentation: Option<AugmentationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emotion_label: Option<i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emotion_amplitude: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
}

/// Frame count of a wav file after resampling to the working rate.
pub fn wav_frame_count(path: &Path) -> Result<usize> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    let n = reader.duration() as usize;
    let n = if spec.sample_rate == SAMPLE_RATE {
        n
    } else {
        (n as f64 * SAMPLE_RATE as f64 / spec.sample_rate as f64).round() as usize
    };
    Ok(frame_count(n))
}

/// Streams records from a line-delimited JSON manifest, validating each one
/// against its audio and visual files as it is read.
pub struct ManifestReader {
    dir: PathBuf,
    lines: std::iter::Enumerate<std::io::Lines<std::io::BufReader<std::fs::File>>>,
    path: PathBuf,
}

impl ManifestReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self {
            dir,
            lines: std::io::BufReader::new(file).lines().enumerate(),
            path,
        })
    }

    fn parse(&self, line_no: usize, line: &str) -> Result<UtteranceRecord> {
        let bad = |utt: &str, field: &str, message: String| Error::Manifest {
            line: line_no,
            utt_id: utt.to_string(),
            field: field.to_string(),
            message,
        };
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| {
            let field = e.to_string();
            let field = field.split('`').nth(1).unwrap_or("record").to_string();
            bad("", &field, e.to_string())
        })?;
        let id = entry.utt_id.clone();
        let phonemes = PhonemeSequence::parse(&entry.phonemes, entry.inventory.unwrap_or(PHONEME_INVENTORY))
            .map_err(|e| bad(&id, "phonemes", e.to_string()))?;
        let durations = DurationVector::parse(&entry.durations).map_err(|e| bad(&id, "durations", e.to_string()))?;
        if durations.len() != phonemes.len() {
            return Err(bad(
                &id,
                "durations",
                format!("{} durations for {} phonemes", durations.len(), phonemes.len()),
            ));
        }
        let wav = self.dir.join(&entry.wav);
        let l_mel = wav_frame_count(&wav).map_err(|e| bad(&id, "wav", e.to_string()))?;
        if durations.total() != l_mel {
            return Err(bad(
                &id,
                "durations",
                format!(
                    "durations sum to {} but the audio has {l_mel} frames",
                    durations.total()
                ),
            ));
        }
        let prosody = ProsodyCurves {
            pitch: entry.pitch,
            energy: entry.energy,
        };
        prosody
            .validate(l_mel)
            .map_err(|e| bad(&id, "prosody", e.to_string()))?;
        let visual = entry.visual.as_ref().map(|v| self.dir.join(v));
        match (entry.kind, &visual) {
            (RecordKind::Dub, None) => return Err(bad(&id, "visual", "dubbing record without visual features".into())),
            (RecordKind::Dub, Some(v)) if !v.is_file() => {
                return Err(bad(&id, "visual", format!("missing visual file {}", v.display())))
            }
            (RecordKind::Speech, Some(_)) => {
                return Err(bad(&id, "visual", "pre-training record carries visual features".into()))
            }
            _ => {}
        }
        Ok(UtteranceRecord {
            utt_id: entry.utt_id,
            speaker_id: entry.speaker_id,
            kind: entry.kind,
            phonemes,
            wav,
            durations,
            prosody,
            visual,
            augmentation: entry.augmentation,
            emotion_label: entry.emotion_label,
            emotion_amplitude: entry.emotion_amplitude,
            reference: entry.reference,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Iterator for ManifestReader {
    type Item = Result<UtteranceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (i, line) = self.lines.next()?;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse(i + 1, &line));
        }
    }
}

/// Reads and validates every record; fails on the first invalid line.
pub fn ingest_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>> {
    ManifestReader::open(path)?.collect()
}

fn relative_to(dir: &Path, p: &Path) -> String {
    p.strip_prefix(dir).unwrap_or(p).to_string_lossy().into_owned()
}

/// Writes records as JSON lines with paths relative to the manifest directory.
pub fn write_manifest(path: impl AsRef<Path>, records: &[UtteranceRecord]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in records {
        let entry = ManifestEntry {
            utt_id: r.utt_id.clone(),
            speaker_id: r.speaker_id.clone(),
            kind: r.kind,
            phonemes: r.phonemes.to_text(),
            inventory: (r.phonemes.inventory_size != PHONEME_INVENTORY).then_some(r.phonemes.inventory_size),
            wav: relative_to(&dir, &r.wav),
            durations: r.durations.to_text(),
            pitch: r.prosody.pitch.clone(),
            energy: r.prosody.energy.clone(),
            visual: r.visual.as_ref().map(|v| relative_to(&dir, v)),
            augmentation: r.augmentation,
            emotion_label: r.emotion_label,
            emotion_amplitude: r.emotion_amplitude,
            reference: r.reference.clone(),
        };
        let line = serde_json::to_string(&entry).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

//! The inference path from script, reference voice and silent clip to audio.

use super::model::ProsodyModel;
use super::scale_durations;
use crate::acoustic::{AcousticModel, StyleVector};
use crate::alignment::{durations_to_alignment, upsample_by_alignment, DurationVector, PhonemeSequence};
use crate::corpus::VisualFeatureBundle;
use crate::error::{Error, Result, StageExt};
use crate::scalar::Scalar;
use crate::signal::{invert_mel_seeded, MelAnalyzer, MelSpectrogram, Waveform, HOP_SECONDS};

/// Everything the dubbing path produced on the way to the spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct DubOutput<T> {
    pub mel: MelSpectrogram<T>,
    pub durations: DurationVector,
    /// Phoneme-level log-F0 (natural log of Hz) and log-norm energy.
    pub pitch: Vec<T>,
    pub energy: Vec<T>,
    pub prosodic_style: StyleVector<T>,
    pub acoustic_style: StyleVector<T>,
}

/// Decodes a spectrogram from phoneme-level prosody and integer durations.
pub fn render_dub_mel<T: Scalar>(
    acoustic: &AcousticModel<T>,
    script: &PhonemeSequence,
    acoustic_style: &StyleVector<T>,
    pitch: &[T],
    energy: &[T],
    durations: &DurationVector,
) -> Result<MelSpectrogram<T>> {
    let n = script.len();
    if pitch.len() != n || energy.len() != n || durations.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{n} phonemes but {} pitch, {} energy and {} duration values",
            pitch.len(),
            energy.len(),
            durations.len()
        )));
    }
    let align = durations_to_alignment(durations)?;
    let text = acoustic.encode_text_acoustic(script)?;
    let up = upsample_by_alignment(&text, &align)?;
    let frame_pitch: Vec<T> = align.owners().iter().map(|&i| pitch[i].exp()).collect();
    let frame_energy: Vec<T> = align.owners().iter().map(|&i| energy[i]).collect();
    acoustic.decode_audio(&up, &frame_pitch, &frame_energy, acoustic_style)
}

/// Full dubbing path up to the decoder spectrogram.
pub fn synthesize_dub_mel<T: Scalar>(
    script: &PhonemeSequence,
    reference: &MelSpectrogram<T>,
    visual: &VisualFeatureBundle<T>,
    acoustic: &AcousticModel<T>,
    prosodic: &ProsodyModel<T>,
    seed: u64,
) -> Result<DubOutput<T>> {
    let acoustic_style = acoustic.encode_style_acoustic(reference).stage("acoustic style")?;
    let text_p = prosodic.encode_text_prosodic(script).stage("prosodic text")?;
    let emotion = prosodic.emotion_features(visual).stage("emotion analysis")?;
    let fusion = prosodic.fuse(&text_p, &emotion).stage("fusion")?;
    let prosodic_style = prosodic.sample_style(&fusion, seed).stage("style diffusion")?;
    let (pitch, energy) = prosodic
        .predict_prosody(&fusion, &prosodic_style)
        .stage("prosody predictor")?;
    let d_pred = prosodic
        .predict_duration(&text_p, &visual.lip)
        .stage("duration predictor")?;
    let durations = scale_durations(&d_pred, visual.n_frames(), visual.fps, HOP_SECONDS).stage("duration scaling")?;
    let mel = render_dub_mel(acoustic, script, &acoustic_style, &pitch, &energy, &durations).stage("decoder")?;
    Ok(DubOutput {
        mel,
        durations,
        pitch,
        energy,
        prosodic_style,
        acoustic_style,
    })
}

/// Dubbed waveform of `round(L_v / fps / hop)` frames.
pub fn synthesize_dub<T: Scalar>(
    script: &PhonemeSequence,
    reference: &Waveform<T>,
    visual: &VisualFeatureBundle<T>,
    acoustic: &AcousticModel<T>,
    prosodic: &ProsodyModel<T>,
    seed: u64,
    vocoder_iterations: usize,
) -> Result<(Waveform<T>, DubOutput<T>)> {
    let analyzer = MelAnalyzer::new();
    let reference = analyzer.analyze(reference).stage("reference analysis")?;
    let out = synthesize_dub_mel(script, &reference, visual, acoustic, prosodic, seed)?;
    let wav = invert_mel_seeded(&analyzer, &out.mel, vocoder_iterations, seed).peak_limited();
    Ok((wav, out))
}

//! Stage I: reconstruction training of the acoustic system with
//! ground-truth alignment and prosody.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{batch_gradients, epoch_batches, LossComponents, RngState, StepLog};
use crate::acoustic::{prosody_channels, AcousticModel};
use crate::alignment::{durations_to_alignment, AlignmentMatrix, PhonemeSequence};
use crate::autograd::Graph;
use crate::config::TrainConfig;
use crate::corpus::UtteranceRecord;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Bind;
use crate::optim::Adam;
use crate::params::Gradients;
use crate::scalar::Scalar;
use crate::signal::{load_waveform, MelAnalyzer, MelSpectrogram};

/// One utterance prepared for reconstruction training.
#[derive(Debug, Clone)]
pub struct PretrainItem<T> {
    pub utt_id: String,
    pub phonemes: PhonemeSequence,
    pub alignment: AlignmentMatrix,
    pub prosody: Matrix<T>,
    pub mel: MelSpectrogram<T>,
}

pub fn load_pretrain_items<T: Scalar>(records: &[UtteranceRecord]) -> Result<Vec<PretrainItem<T>>> {
    let analyzer = MelAnalyzer::<T>::new();
    records
        .par_iter()
        .map(|r| {
            let w = load_waveform::<T>(&r.wav)?;
            let mel = analyzer.analyze(&w)?;
            let p = r.prosody.cast::<T>();
            Ok(PretrainItem {
                utt_id: r.utt_id.clone(),
                phonemes: r.phonemes.clone(),
                alignment: durations_to_alignment(&r.durations)?,
                prosody: prosody_channels(&p.pitch, &p.energy)?,
                mel,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome<T> {
    pub log: Vec<StepLog>,
    pub epoch_losses: Vec<f64>,
    /// Corpus-mean reconstruction loss before the first step and after the last.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub optimizer: Adam<T>,
    pub epochs_completed: usize,
    pub steps: usize,
    pub rng: RngState,
}

fn item_loss<T: Scalar>(
    model: &AcousticModel<T>,
    item: &PretrainItem<T>,
    train: bool,
) -> Result<(LossComponents, f64, Gradients<T>)> {
    let mut g = Graph::new();
    let p = if train {
        Bind::train(&model.params)
    } else {
        Bind::frozen(&model.params)
    };
    let pred = model.reconstruct_graph(&mut g, p, &item.phonemes, &item.alignment, &item.prosody, &item.mel)?;
    let target = g.constant(item.mel.frames.clone());
    let loss = g.l1_loss(pred, target);
    let value = g.scalar(loss).to_f64_lossy();
    let grads = if train { g.backward(loss) } else { Gradients::new() };
    Ok((LossComponents::default(), value, grads))
}

/// Reconstruction loss of one item and its gradient with respect to every
/// acoustic parameter.
pub fn reconstruction_gradients<T: Scalar>(
    model: &AcousticModel<T>,
    item: &PretrainItem<T>,
) -> Result<(f64, Gradients<T>)> {
    item_loss(model, item, true).map(|(_, v, g)| (v, g))
}

/// Mean reconstruction loss over `items` with the current parameters.
pub fn corpus_reconstruction_loss<T: Scalar>(model: &AcousticModel<T>, items: &[PretrainItem<T>]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let losses: Vec<f64> = items
        .par_iter()
        .map(|it| item_loss(model, it, false).map(|r| r.1))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / items.len() as f64)
}

/// Trains `model` in place. On divergence the parameters are rolled back to
/// the last step that produced finite values and a training failure is
/// returned.
pub fn pretrain<T: Scalar>(
    items: &[PretrainItem<T>],
    config: &TrainConfig,
    model: &mut AcousticModel<T>,
) -> Result<PretrainOutcome<T>> {
    config.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidArgument("pre-training corpus is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Adam::new(config.adam());
    let initial_loss = corpus_reconstruction_loss(model, items)?;
    let mut log = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut step = 0;
    for _ in 0..config.epochs {
        let mut sum = 0.0;
        let batches = epoch_batches(items.len(), config.batch_size, &mut rng);
        for batch in &batches {
            step += 1;
            let (_, loss, grads) = batch_gradients(batch, |i| item_loss(model, &items[i], true))?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::TrainingFailure {
                    step,
                    message: format!("reconstruction loss became {loss}"),
                });
            }
            let snapshot = model.params.clone();
            optimizer.step(&mut model.params, &grads);
            if !model.params.iter().all(|(_, _, m)| m.all_finite()) {
                model.params = snapshot;
                return Err(Error::TrainingFailure {
                    step,
                    message: "parameters became non-finite".into(),
                });
            }
            log.push(StepLog {
                step,
                loss,
                components: LossComponents::default(),
            });
            sum += loss;
        }
        epoch_losses.push(sum / batches.len() as f64);
    }
    let final_loss = corpus_reconstruction_loss(model, items)?;
    Ok(PretrainOutcome {
        log,
        epoch_losses,
        initial_loss,
        final_loss,
        optimizer,
        epochs_completed: config.epochs,
        steps: step,
        rng: RngState::capture(config.seed, &rng),
    })
}

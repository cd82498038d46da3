//! Stage II: prosody adapting with the acoustic system frozen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::loss::weighted_loss_graph;
use super::{batch_gradients, epoch_batches, LossComponents, RngState, StepLog};
use crate::acoustic::AcousticModel;
use crate::adapting::{diffusion_forward, idea_normalize, ProsodyModel, ProsodyStats, IDEA_RIDGE};
use crate::alignment::{durations_to_alignment, phoneme_pool_prosody, PhonemeSequence};
use crate::autograd::Graph;
use crate::config::{Parameterization, TrainConfig};
use crate::corpus::{read_visual, RecordKind, UtteranceRecord, VisualFeatureBundle};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Bind;
use crate::optim::Adam;
use crate::params::Gradients;
use crate::scalar::Scalar;
use crate::signal::prosody::interpolated_log_f0;
use crate::signal::{load_waveform, MelAnalyzer, MelSpectrogram};

/// One dubbing clip with its phoneme-level targets.
#[derive(Debug, Clone)]
pub struct AdaptItem<T> {
    pub utt_id: String,
    pub phonemes: PhonemeSequence,
    /// Ground-truth dubbing spectrogram, the input of the prosodic style encoder.
    pub mel: MelSpectrogram<T>,
    pub visual: VisualFeatureBundle<T>,
    /// Whitened emotion stream; it has no parameters, so it is computed once.
    pub whitened: Matrix<T>,
    /// Phoneme-mean log-F0 (natural log of Hz) and energy, and durations in frames.
    pub pitch: Vec<T>,
    pub energy: Vec<T>,
    pub durations: Vec<T>,
}

pub fn load_adapt_items<T: Scalar>(records: &[UtteranceRecord]) -> Result<Vec<AdaptItem<T>>> {
    let analyzer = MelAnalyzer::<T>::new();
    records
        .par_iter()
        .map(|r| {
            let visual_path = match (&r.kind, &r.visual) {
                (RecordKind::Dub, Some(v)) => v,
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "{} is not a dubbing clip with visual features",
                        r.utt_id
                    )))
                }
            };
            let visual = read_visual::<T>(visual_path)?;
            let mel = analyzer.analyze(&load_waveform::<T>(&r.wav)?)?;
            let align = durations_to_alignment(&r.durations)?;
            let p = r.prosody.cast::<T>();
            Ok(AdaptItem {
                utt_id: r.utt_id.clone(),
                phonemes: r.phonemes.clone(),
                whitened: idea_normalize(&visual.emotion, IDEA_RIDGE)?,
                visual,
                pitch: phoneme_pool_prosody(&interpolated_log_f0(&p.pitch), &align)?,
                energy: phoneme_pool_prosody(&p.energy, &align)?,
                durations: r.durations.0.iter().map(|&d| T::of_usize(d)).collect(),
                mel,
            })
        })
        .collect()
}

/// Target statistics over every phoneme of every item.
pub fn prosody_stats<T: Scalar>(items: &[AdaptItem<T>]) -> Result<ProsodyStats> {
    let flat = |f: fn(&AdaptItem<T>) -> &Vec<T>| -> Vec<f64> {
        items
            .iter()
            .flat_map(|it| f(it).iter().map(|v| v.to_f64_lossy()))
            .collect()
    };
    ProsodyStats::from_targets(&flat(|i| &i.pitch), &flat(|i| &i.energy), &flat(|i| &i.durations))
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome<T> {
    pub log: Vec<StepLog>,
    pub epoch_losses: Vec<LossComponents>,
    /// Corpus-mean components before the first step and after the last.
    pub initial: LossComponents,
    pub final_: LossComponents,
    pub optimizer: Adam<T>,
    pub acoustic_hash: String,
    pub steps: usize,
    pub rng: RngState,
}

/// Fails with a freeze violation if the acoustic parameters changed.
pub fn check_frozen<T: Scalar>(acoustic: &AcousticModel<T>, expected: &str, epoch: usize) -> Result<()> {
    let now = acoustic.params_hash();
    if now != expected {
        return Err(Error::FreezeViolation {
            epoch,
            before: expected.to_string(),
            after: now,
        });
    }
    Ok(())
}

/// Noised copies of each teacher style per step for the denoising term.
const DIFFUSION_DRAWS: usize = 8;

struct ItemTask {
    train: bool,
    diffusion: bool,
    noise_seed: u64,
}

fn item_loss<T: Scalar>(
    model: &ProsodyModel<T>,
    item: &AdaptItem<T>,
    config: &TrainConfig,
    task: &ItemTask,
) -> Result<(LossComponents, f64, Gradients<T>)> {
    let mut g = Graph::new();
    let p = if task.train {
        Bind::train(&model.params)
    } else {
        Bind::frozen(&model.params)
    };
    let text = model.text_graph(&mut g, p, &item.phonemes)?;
    let emotion = model.emotion_graph(&mut g, p, &item.whitened, &item.visual.atmosphere);
    let fusion = model.fusion_graph(&mut g, p, text, emotion);
    let style = model.style_graph(&mut g, p, &item.mel)?;
    let (pitch, energy) = model.predictor_graph(&mut g, p, fusion, style);
    let dur = model.duration_graph(&mut g, p, text, &item.visual.lip);

    let column = |g: &mut Graph<T>, v: &[T]| g.constant(Matrix::column_vector(v.to_vec()));
    let (tp, te, td) = (
        column(&mut g, &item.pitch),
        column(&mut g, &item.energy),
        column(&mut g, &item.durations),
    );
    let lp = g.l1_loss(pitch, tp);
    let ln = g.l1_loss(energy, te);
    let ld = g.l1_loss(dur, td);

    let mut ls = None;
    if task.diffusion {
        // the teacher style is a target, so it enters as a constant; the
        // pooled condition stays on the tape and trains the fusion stack
        let d = model.config.d_model;
        let x0: Vec<T> = g
            .value(style)
            .as_slice()
            .iter()
            .map(|&v| v * T::of_usize(d).sqrt())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(task.noise_seed);
        let steps = model.schedule.steps();
        let c = g.mean_rows(fusion);
        let mut terms = Vec::with_capacity(DIFFUSION_DRAWS);
        for _ in 0..DIFFUSION_DRAWS {
            let t = 1 + rng.gen_range(0..steps);
            let noise: Vec<T> = (0..d).map(|_| T::of(StandardNormal.sample(&mut rng))).collect();
            let x_t = diffusion_forward(&x0, t, &noise, &model.schedule)?;
            let x_t = g.constant(Matrix::row_vector(x_t));
            let pred = model.denoiser.forward(&mut g, p, x_t, t, c);
            let target = match model.schedule.parameterization {
                Parameterization::Clean => x0.clone(),
                Parameterization::Noise => noise,
            };
            let target = g.constant(Matrix::row_vector(target));
            terms.push(g.mse_loss(pred, target));
        }
        let sum = terms[1..].iter().fold(terms[0], |acc, &v| g.add(acc, v));
        ls = Some(g.scale(sum, T::of(1.0 / DIFFUSION_DRAWS as f64)));
    }
    let w = &config.loss_weights;
    let total = weighted_loss_graph(&mut g, [Some(lp), Some(ln), Some(ld), ls], w);
    let comps = LossComponents {
        pitch: g.scalar(lp).to_f64_lossy(),
        energy: g.scalar(ln).to_f64_lossy(),
        duration: g.scalar(ld).to_f64_lossy(),
        style: ls.map_or(0.0, |v| g.scalar(v).to_f64_lossy()),
    };
    let value = g.scalar(total).to_f64_lossy();
    let grads = if task.train {
        g.backward(total)
    } else {
        Gradients::new()
    };
    Ok((comps, value, grads))
}

/// Weighted L_p + L_n + L_d of one item (no diffusion term) and its gradient
/// with respect to every prosodic parameter.
pub fn prosody_gradients<T: Scalar>(
    model: &ProsodyModel<T>,
    item: &AdaptItem<T>,
    config: &TrainConfig,
) -> Result<(LossComponents, f64, Gradients<T>)> {
    let task = ItemTask {
        train: true,
        diffusion: false,
        noise_seed: 0,
    };
    item_loss(model, item, config, &task)
}

/// Corpus-mean loss components with the current parameters. The diffusion
/// term uses fixed per-item noise so repeated calls agree.
pub fn evaluate_adapt_losses<T: Scalar>(
    model: &ProsodyModel<T>,
    items: &[AdaptItem<T>],
    config: &TrainConfig,
) -> Result<LossComponents> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let parts: Vec<LossComponents> = items
        .par_iter()
        .enumerate()
        .map(|(i, it)| {
            let task = ItemTask {
                train: false,
                diffusion: true,
                noise_seed: config.seed ^ (0xe7a1 + i as u64),
            };
            item_loss(model, it, config, &task).map(|r| r.0)
        })
        .collect::<Result<_>>()?;
    let sum = parts.iter().fold(LossComponents::default(), |a, b| a.add(b));
    Ok(sum.scaled(1.0 / items.len() as f64))
}

/// Trains the prosody model. The acoustic model is only read; its hash is
/// re-checked after every epoch.
pub fn adapt<T: Scalar>(
    items: &[AdaptItem<T>],
    config: &TrainConfig,
    acoustic: &AcousticModel<T>,
    model: &mut ProsodyModel<T>,
) -> Result<AdaptOutcome<T>> {
    config.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidArgument("dubbing corpus is empty".into()));
    }
    if acoustic.config.d_model != model.config.d_model {
        return Err(Error::InvalidArgument("acoustic and prosodic widths differ".into()));
    }
    let acoustic_hash = acoustic.params_hash();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Adam::new(config.adam());
    let initial = evaluate_adapt_losses(model, items, config)?;
    let half = config.epochs / 2;
    let diffusion_on = config.loss_weights.style > 0.0;
    let mut log = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let second_half = epoch >= half;
        let batches = epoch_batches(items.len(), config.batch_size, &mut rng);
        let mut sum = LossComponents::default();
        for batch in &batches {
            step += 1;
            let (comps, loss, grads) = batch_gradients(batch, |i| {
                let task = ItemTask {
                    train: true,
                    diffusion: second_half && diffusion_on,
                    noise_seed: config.seed ^ ((step as u64) << 24 | i as u64),
                };
                item_loss(model, &items[i], config, &task)
            })?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::TrainingFailure {
                    step,
                    message: format!("adapting loss became {loss}"),
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
                components: comps,
            });
            sum = sum.add(&comps);
        }
        epoch_losses.push(sum.scaled(1.0 / batches.len() as f64));
        check_frozen(acoustic, &acoustic_hash, epoch + 1)?;
    }
    let final_ = evaluate_adapt_losses(model, items, config)?;
    Ok(AdaptOutcome {
        log,
        epoch_losses,
        initial,
        final_,
        optimizer,
        acoustic_hash,
        steps: step,
        rng: RngState::capture(config.seed, &rng),
    })
}

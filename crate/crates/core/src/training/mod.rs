//! Two-stage training: acoustic pre-training and frozen-acoustic prosody
//! adapting, plus loss assembly, logging and checkpoints.

mod adapt;
pub mod checkpoint;
pub mod loss;
mod pretrain;

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Gradients;
use crate::scalar::Scalar;

pub use adapt::{
    adapt, check_frozen, evaluate_adapt_losses, load_adapt_items, prosody_gradients, prosody_stats, AdaptItem,
    AdaptOutcome,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Subsystem, CHECKPOINT_VERSION};
pub use loss::{compute_dub_loss, LossComponents};
pub use pretrain::{
    corpus_reconstruction_loss, load_pretrain_items, pretrain, reconstruction_gradients, PretrainItem, PretrainOutcome,
};

/// Position of a training loop's shuffling RNG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// 128-bit word position, as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Format(format!("bad RNG position {}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// One optimisation step as written to the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub components: LossComponents,
}

/// Writes `step loss L_p L_n L_d L_Sp`, tab separated, one line per step.
pub fn write_training_log(path: impl AsRef<Path>, log: &[StepLog]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(f, "step\tloss\tL_p\tL_n\tL_d\tL_Sp").map_err(|e| Error::io(path, e))?;
    for s in log {
        let c = s.components;
        writeln!(
            f,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            s.step, s.loss, c.pitch, c.energy, c.duration, c.style
        )
        .map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Runs `per_item` over a batch in parallel and averages the results in
/// batch order, so the outcome does not depend on thread scheduling.
pub(crate) fn batch_gradients<T, F>(batch: &[usize], per_item: F) -> Result<(LossComponents, f64, Gradients<T>)>
where
    T: Scalar,
    F: Fn(usize) -> Result<(LossComponents, f64, Gradients<T>)> + Sync,
{
    let results: Vec<(LossComponents, f64, Gradients<T>)> =
        batch.par_iter().map(|&i| per_item(i)).collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut grads = Gradients::new();
    let mut comps = LossComponents::default();
    let mut total = 0.0;
    for (c, l, g) in &results {
        grads.merge(g);
        comps = comps.add(c);
        total += l;
    }
    grads.scale(T::of(1.0 / n));
    Ok((comps.scaled(1.0 / n), total / n, grads))
}

/// Epoch-wise shuffled mini-batches.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

//! Stage II: the prosody-adapting system that reads the script and the
//! silent clip, and predicts pitch, energy, durations and prosodic style.

pub mod diffusion;
mod dub;
pub mod idea;
mod model;

use crate::alignment::{largest_remainder, DurationVector};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Bind, MultiHeadAttention};
use crate::params::ParamStore;
use crate::scalar::Scalar;

pub use diffusion::{diffusion_forward, diffusion_sample, Denoiser, DiffusionSchedule};
pub use dub::{render_dub_mel, synthesize_dub, synthesize_dub_mel, DubOutput};
pub use idea::{idea_modulate, idea_normalize, IDEA_RIDGE};
pub use model::{ProsodyModel, ProsodyStats};

/// Mel frames covered by `clip_frames` video frames.
pub fn clip_target_frames(clip_frames: usize, fps: f64, hop_seconds: f64) -> usize {
    (clip_frames as f64 / fps / hop_seconds).round() as usize
}

/// Integer durations proportional to `d_pred` that exactly fill the clip.
pub fn scale_durations<T: Scalar>(
    d_pred: &[T],
    clip_frames: usize,
    fps: f64,
    hop_seconds: f64,
) -> Result<DurationVector> {
    if !(fps > 0.0 && hop_seconds > 0.0) {
        return Err(Error::InvalidArgument("fps and hop must be positive".into()));
    }
    let weights: Vec<f64> = d_pred.iter().map(|v| v.to_f64_lossy()).collect();
    if !(weights.iter().sum::<f64>() > 0.0) {
        return Err(Error::DegenerateInput("predicted durations sum to zero".into()));
    }
    largest_remainder(&weights, clip_target_frames(clip_frames, fps, hop_seconds)).map(DurationVector)
}

/// Multi-head attention of `query` over `kv`, outside the training tape.
/// Returns the `L_q × d_m` output and each head's `L_q × L_kv` weights.
pub fn cross_attend<T: Scalar>(
    query: &Matrix<T>,
    kv: &Matrix<T>,
    attn: &MultiHeadAttention,
    params: &ParamStore<T>,
) -> Result<(Matrix<T>, Vec<Matrix<T>>)> {
    if query.cols() != attn.q.d_in || kv.cols() != attn.k.d_in {
        return Err(Error::InvalidArgument(format!(
            "attention expects query width {} and key width {}, got {} and {}",
            attn.q.d_in,
            attn.k.d_in,
            query.cols(),
            kv.cols()
        )));
    }
    if kv.rows() == 0 {
        return Err(Error::InvalidArgument("empty key/value sequence".into()));
    }
    let mut g = Graph::new();
    let q = g.constant(query.clone());
    let k = g.constant(kv.clone());
    let (out, weights) = attn.forward_with_weights(&mut g, Bind::frozen(params), q, k);
    Ok((
        g.value(out).clone(),
        weights.iter().map(|&w| g.value(w).clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::signal::HOP_SECONDS;

    #[test]
    fn one_second_clip_is_eighty_frames() {
        assert_eq!(clip_target_frames(25, 25.0, 0.0125), 80);
        let d = scale_durations(&[1.0f64, 1.0, 1.0], 25, 25.0, HOP_SECONDS).unwrap();
        assert_eq!(d.total(), 80);
        assert!(d.0.iter().all(|&x| (x as f64 - 80.0 / 3.0).abs() <= 1.0));
        assert_eq!(d.0, vec![27, 27, 26]);
    }

    #[test]
    fn exact_integers_pass_through() {
        let d = scale_durations(&[30.0f64, 10.0, 40.0], 25, 25.0, HOP_SECONDS).unwrap();
        assert_eq!(d.0, vec![30, 10, 40]);
        assert!(matches!(
            scale_durations(&[0.0f64, 0.0], 25, 25.0, HOP_SECONDS),
            Err(Error::DegenerateInput(_))
        ));
    }

    fn attention(d: usize, d_kv: usize, heads: usize, seed: u64) -> (MultiHeadAttention, ParamStore<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let a = MultiHeadAttention::cross(&mut s, "ca", d, d_kv, heads, &mut rng);
        (a, s)
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn single_key_copies_projected_value() {
        let (a, s) = attention(8, 5, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, kv) = (random(6, 8, &mut rng), random(1, 5, &mut rng));
        let (out, w) = cross_attend(&q, &kv, &a, &s).unwrap();
        assert!(w.iter().all(|h| h.as_slice().iter().all(|&x| (x - 1.0).abs() < 1e-12)));
        let v = kv.matmul(s.get(a.v.w)).add_row(s.get(a.v.b));
        let expect = v.matmul(s.get(a.out.w)).add_row(s.get(a.out.b));
        for r in 0..6 {
            for c in 0..8 {
                assert!((out[(r, c)] - expect[(0, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_head_matches_dense_reference() {
        let (a, s) = attention(4, 3, 1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (q, kv) = (random(5, 4, &mut rng), random(7, 3, &mut rng));
        let (out, w) = cross_attend(&q, &kv, &a, &s).unwrap();
        let proj = |x: &Matrix<f64>, l: &crate::nn::Linear| x.matmul(s.get(l.w)).add_row(s.get(l.b));
        let (qq, kk, vv) = (proj(&q, &a.q), proj(&kv, &a.k), proj(&kv, &a.v));
        let mut att = Matrix::zeros(5, 7);
        for i in 0..5 {
            let logits: Vec<f64> = (0..7)
                .map(|j| (0..4).map(|c| qq[(i, c)] * kk[(j, c)]).sum::<f64>() / 2.0)
                .collect();
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for j in 0..7 {
                att[(i, j)] = (logits[j] - m).exp() / z;
            }
        }
        assert!(att.max_abs_diff(&w[0]) < 1e-6);
        let expect = proj(&att.matmul(&vv), &a.out);
        assert!(expect.max_abs_diff(&out) < 1e-6);
        assert!(cross_attend(&kv, &kv, &a, &s).is_err());
    }

    proptest! {
        #[test]
        fn durations_fill_the_clip(
            preds in proptest::collection::vec(0.0f64..20.0, 1..30),
            l_v in 1usize..400,
            c in 0.01f64..100.0,
        ) {
            prop_assume!(preds.iter().sum::<f64>() > 1e-6);
            let d = scale_durations(&preds, l_v, 25.0, HOP_SECONDS).unwrap();
            prop_assert_eq!(d.total(), (l_v as f64 * 3.2).round() as usize);
            let scaled: Vec<f64> = preds.iter().map(|p| p * c).collect();
            let d2 = scale_durations(&scaled, l_v, 25.0, HOP_SECONDS).unwrap();
            let target = d.total() as f64;
            let total: f64 = preds.iter().sum();
            // disagreement is only allowed where a share sits on a rounding tie
            let near_tie = preds.iter().any(|p| {
                let share = p * target / total;
                let frac = share - share.floor();
                frac < 1e-9 || frac > 1.0 - 1e-9
            }) || {
                let mut fracs: Vec<f64> = preds.iter().map(|p| { let s = p * target / total; s - s.floor() }).collect();
                fracs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                fracs.windows(2).any(|w| w[1] - w[0] < 1e-9)
            };
            prop_assert!(d == d2 || near_tie);
        }

        #[test]
        fn attention_rows_are_stochastic(seed in 0u64..500, lq in 1usize..6, lk in 1usize..9) {
            let (a, s) = attention(8, 3, 4, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let (_, w) = cross_attend(&random(lq, 8, &mut rng), &random(lk, 3, &mut rng), &a, &s).unwrap();
            for head in &w {
                for row in head.iter_rows() {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    prop_assert!(row.iter().all(|&x| x >= 0.0));
                }
            }
        }
    }
}

//! Layer building blocks over the autodiff tape.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::matrix::Matrix;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// How a forward pass reads a parameter store.
#[derive(Clone, Copy)]
pub struct Bind<'a, T> {
    pub store: &'a ParamStore<T>,
    pub trainable: bool,
}

impl<'a, T: Scalar> Bind<'a, T> {
    pub fn train(store: &'a ParamStore<T>) -> Self {
        Self { store, trainable: true }
    }

    pub fn frozen(store: &'a ParamStore<T>) -> Self {
        Self {
            store,
            trainable: false,
        }
    }

    pub fn p(&self, g: &mut Graph<T>, id: ParamId) -> Var {
        if self.trainable {
            g.param(self.store, id)
        } else {
            g.frozen(self.store, id)
        }
    }
}

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self::with_std(store, name, d_in, d_out, glorot(d_in, d_out), rng)
    }

    pub fn with_std<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.normal(format!("{name}.w"), d_in, d_out, std, rng);
        let b = store.constant(format!("{name}.b"), 1, d_out, 0.0);
        Self { w, b, d_in, d_out }
    }

    /// Linear layer whose bias starts at `bias` (e.g. 1 for gain heads).
    pub fn with_bias<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        std: f64,
        bias: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.normal(format!("{name}.w"), d_in, d_out, std, rng);
        let b = store.constant(format!("{name}.b"), 1, d_out, bias);
        Self { w, b, d_in, d_out }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bind<T>, x: Var) -> Var {
        let w = p.p(g, self.w);
        let b = p.p(g, self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

/// Time-axis convolution with "same" zero padding: rows are time steps,
/// columns are channels.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel: usize,
    pub proj: Linear,
}

impl Conv1d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let proj = Linear::new(store, name, d_in * kernel, d_out, rng);
        Self { kernel, proj }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bind<T>, x: Var) -> Var {
        let len = g.shape(x).0;
        let half = (self.kernel / 2) as isize;
        let taps: Vec<Var> = (-half..=half)
            .map(|shift| {
                if shift == 0 {
                    return x;
                }
                let index = (0..len as isize)
                    .map(|t| {
                        let s = t + shift;
                        (s >= 0 && s < len as isize).then_some(s as usize)
                    })
                    .collect();
                g.gather_rows(x, index)
            })
            .collect();
        let unfolded = g.concat_cols(&taps);
        self.proj.forward(g, p, unfolded)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let table = store.normal(format!("{name}.table"), vocab, dim, 1.0 / (dim as f64).sqrt(), rng);
        Self { table, vocab, dim }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bind<T>, ids: &[usize]) -> Var {
        let t = p.p(g, self.table);
        g.gather_rows(t, ids.iter().map(|&i| Some(i)).collect())
    }
}

/// Single-direction LSTM over the rows of its input.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub input: Linear,
    pub recurrent: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let input = Linear::new(store, &format!("{name}.input"), d_in, 4 * hidden, rng);
        // forget-gate bias of 1
        {
            let b = store.get_mut(input.b);
            for j in hidden..2 * hidden {
                b[(0, j)] = T::one();
            }
        }
        let recurrent = store.normal(
            format!("{name}.recurrent"),
            hidden,
            4 * hidden,
            1.0 / (hidden as f64).sqrt(),
            rng,
        );
        Self {
            input,
            recurrent,
            hidden,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bind<T>, x: Var, reverse: bool) -> Var {
        let len = g.shape(x).0;
        let h = self.hidden;
        let xw = self.input.forward(g, p, x);
        let wh = p.p(g, self.recurrent);
        let mut hidden = g.constant(Matrix::zeros(1, h));
        let mut cell = g.constant(Matrix::zeros(1, h));
        let mut outs = vec![hidden; len];
        let order: Vec<usize> = if reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        };
        for t in order {
            let xt = g.slice_rows(xw, t, 1);
            let rec = g.matmul(hidden, wh);
            let gates = g.add(xt, rec);
            let i = g.slice_cols(gates, 0, h);
            let f = g.slice_cols(gates, h, h);
            let c_in = g.slice_cols(gates, 2 * h, h);
            let o = g.slice_cols(gates, 3 * h, h);
            let i = g.sigmoid(i);
            let f = g.sigmoid(f);
            let c_in = g.tanh(c_in);
            let o = g.sigmoid(o);
            let keep = g.mul(f, cell);
            let write = g.mul(i, c_in);
            cell = g.add(keep, write);
            let ct = g.tanh(cell);
            hidden = g.mul(o, ct);
            outs[t] = hidden;
        }
        g.concat_rows(&outs)
    }
}

/// Bidirectional LSTM; output columns are `[forward | backward]`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(d_out % 2 == 0, "BiLstm output width must be even");
        Self {
            fwd: Lstm::new(store, &format!("{name}.fwd"), d_in, d_out / 2, rng),
            bwd: Lstm::new(store, &format!("{name}.bwd"), d_in, d_out / 2, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bind<T>, x: Var) -> Var {
        let f = self.fwd.forward(g, p, x, false);
        let b = self.bwd.forward(g, p, x, true);
        g.concat_cols(&[f, b])
    }
}

/// Multi-head scaled dot-product attention with query and key/value streams.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub n_head: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        n_head: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self::cross(store, name, d_model, d_model, n_head, rng)
    }

    /// Attention whose key/value stream has width `d_kv`.
    pub fn cross<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        d_kv: usize,
        n_head: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(n_head > 0 && d_model % n_head == 0, "n_head must divide d_model");
        Self {
            q: Linear::new(store, &format!("{name}.q"), d_model, d_model, rng),
            k: Linear::new(store, &format!("{name}.k"), d_kv, d_model, rng),
            v: Linear::new(store, &format!("{name}.v"), d_kv, d_model, rng),
            out: Linear::new(store, &format!("{name}.out"), d_model, d_model, rng),
            n_head,
            d_model,
        }
    }

    /// Returns the projected output and the per-head attention weight nodes.
    pub fn forward_with_weights<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: Bind<T>,
        query: Var,
        kv: Var,
    ) -> (Var, Vec<Var>) {
        let q = self.q.forward(g, p, query);
        let k = self.k.forward(g, p, kv);
        let v = self.v.forward(g, p, kv);
        let dh = self.d_model / self.n_head;
        // logits scaled by 1/sqrt(d_model)
        let inv_scale = T::one() / T::of_usize(self.d_model).sqrt();
        let mut heads = Vec::with_capacity(self.n_head);
        let mut weights = Vec::with_capacity(self.n_head);
        for h in 0..self.n_head {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let kt = g.transpose(kh);
            let logits = g.matmul(qh, kt);
            let logits = g.scale(logits, inv_scale);
            let w = g.softmax_rows(logits);
            heads.push(g.matmul(w, vh));
            weights.push(w);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)
        };
        (self.out.forward(g, p, cat), weights)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bind<T>, query: Var, kv: Var) -> Var {
        self.forward_with_weights(g, p, query, kv).0
    }
}

/// Adaptive instance normalisation: every channel (column) is standardised
/// over time (rows), then scaled and shifted by projections of a style vector.
#[derive(Debug, Clone)]
pub struct AdaIn {
    pub gain: Linear,
    pub bias: Linear,
}

pub const ADAIN_EPS: f64 = 1e-5;

impl AdaIn {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_style: usize,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let std = 0.5 / (d_style as f64).sqrt();
        Self {
            gain: Linear::with_bias(store, &format!("{name}.gain"), d_style, channels, std, 1.0, rng),
            bias: Linear::with_std(store, &format!("{name}.bias"), d_style, channels, std, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bind<T>, x: Var, style: Var) -> Var {
        let normed = g.standardize_cols(x, T::of(ADAIN_EPS));
        let gain = self.gain.forward(g, p, style);
        let bias = self.bias.forward(g, p, style);
        let scaled = g.mul_row(normed, gain);
        g.add_row(scaled, bias)
    }
}

/// Per-row normalisation across channels with learnable gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.constant(format!("{name}.gain"), 1, dim, 1.0),
            bias: store.constant(format!("{name}.bias"), 1, dim, 0.0),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bind<T>, x: Var) -> Var {
        let xt = g.transpose(x);
        let n = g.standardize_cols(xt, T::of(ADAIN_EPS));
        let n = g.transpose(n);
        let gain = p.p(g, self.gain);
        let bias = p.p(g, self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }
}

/// Sinusoidal encoding of integer positions, `len × dim`.
pub fn sinusoidal_positions<T: Scalar>(len: usize, dim: usize) -> Matrix<T> {
    Matrix::from_fn(len, dim, |pos, i| {
        let pair = (i / 2) as f64;
        let freq = 1.0 / 10000f64.powf(2.0 * pair / dim as f64);
        let a = pos as f64 * freq;
        T::of(if i % 2 == 0 { a.sin() } else { a.cos() })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layer_norm_rows_are_standardised() {
        let mut s = ParamStore::<f64>::new();
        let ln = LayerNorm::new(&mut s, "ln", 6);
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_fn(3, 6, |i, j| (i * 7 + j * j) as f64));
        let y = ln.forward(&mut g, Bind::train(&s), x);
        for row in g.value(y).iter_rows() {
            let mean = row.iter().sum::<f64>() / 6.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn conv_same_padding_keeps_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::<f64>::new();
        let conv = Conv1d::new(&mut s, "c", 3, 5, 3, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Matrix::filled(7, 3, 1.0));
        let y = conv.forward(&mut g, Bind::train(&s), x);
        assert_eq!(g.shape(y), (7, 5));
    }

    #[test]
    fn lstm_is_order_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::<f64>::new();
        let lstm = BiLstm::new(&mut s, "l", 2, 4, &mut rng);
        let run = |rows: Vec<Vec<f64>>| {
            let mut g = Graph::new();
            let x = g.constant(Matrix::from_rows(&rows).unwrap());
            let y = lstm.forward(&mut g, Bind::frozen(&s), x);
            g.value(y).clone()
        };
        let a = run(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = run(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(a.shape(), (2, 4));
        assert!(a.row(0) != b.row(1));
    }
}

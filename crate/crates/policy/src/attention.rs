//! Multi-head attention and post-LN transformer blocks on the tape.

use graphopt_tensor::{ParamId, ParamStore, Tape, Var};
use rand::Rng;

/// Heads of width `d_head`, concatenated and projected back to `d_model`.
#[derive(Debug, Clone)]
pub struct AttnParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub n_head: usize,
    pub d_head: usize,
}

impl AttnParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        n_head: usize,
        d_head: usize,
        rng: &mut R,
    ) -> Self {
        let inner = n_head * d_head;
        Self {
            wq: store.add_uniform(format!("{prefix}.wq"), d_model, inner, d_model, rng),
            wk: store.add_uniform(format!("{prefix}.wk"), d_model, inner, d_model, rng),
            wv: store.add_uniform(format!("{prefix}.wv"), d_model, inner, d_model, rng),
            wo: store.add_uniform(format!("{prefix}.wo"), inner, d_model, inner, rng),
            bo: store.add_uniform(format!("{prefix}.bo"), 1, d_model, inner, rng),
            n_head,
            d_head,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.wq, self.wk, self.wv, self.wo, self.bo]
    }

    /// Queries from `q_in`, keys and values from `kv_in`; no mask.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, q_in: Var, kv_in: Var) -> Var {
        let wq = tape.param(store, self.wq);
        let wk = tape.param(store, self.wk);
        let wv = tape.param(store, self.wv);
        let q = tape.matmul(q_in, wq);
        let k = tape.matmul(kv_in, wk);
        let v = tape.matmul(kv_in, wv);
        let heads: Vec<Var> = (0..self.n_head)
            .map(|h| {
                let start = h * self.d_head;
                let qh = tape.slice_cols(q, start, self.d_head);
                let kh = tape.slice_cols(k, start, self.d_head);
                let vh = tape.slice_cols(v, start, self.d_head);
                tape.scaled_dot_attention(qh, kh, vh, None).0
            })
            .collect();
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        let wo = tape.param(store, self.wo);
        let bo = tape.param(store, self.bo);
        let out = tape.matmul(cat, wo);
        tape.add_row(out, bo)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn init(store: &mut ParamStore, prefix: &str, width: usize) -> Self {
        Self {
            gain: store.add_full(format!("{prefix}.gain"), 1, width, 1.0),
            bias: store.add_full(format!("{prefix}.bias"), 1, width, 0.0),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// `x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

impl Affine {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, fan_in: usize, out: usize, rng: &mut R) -> Self {
        Self {
            w: store.add_uniform(format!("{prefix}.w"), fan_in, out, fan_in, rng),
            b: store.add_uniform(format!("{prefix}.b"), 1, out, fan_in, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

/// `LN2(h + FFN(h))` with `h = LN1(q + MHA(q, kv))`.
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub attn: AttnParams,
    pub ln1: LayerNormParams,
    pub ff1: Affine,
    pub ff2: Affine,
    pub ln2: LayerNormParams,
}

impl BlockParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        n_head: usize,
        d_head: usize,
        d_inner: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            attn: AttnParams::init(store, &format!("{prefix}.attn"), d_model, n_head, d_head, rng),
            ln1: LayerNormParams::init(store, &format!("{prefix}.ln1"), d_model),
            ff1: Affine::init(store, &format!("{prefix}.ff1"), d_model, d_inner, rng),
            ff2: Affine::init(store, &format!("{prefix}.ff2"), d_inner, d_model, rng),
            ln2: LayerNormParams::init(store, &format!("{prefix}.ln2"), d_model),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, q_in: Var, kv_in: Var) -> Var {
        let a = self.attn.forward(tape, store, q_in, kv_in);
        let r = tape.add(q_in, a);
        let h = self.ln1.forward(tape, store, r);
        let f = self.ff1.forward(tape, store, h);
        let f = tape.relu(f);
        let f = self.ff2.forward(tape, store, f);
        let r = tape.add(h, f);
        self.ln2.forward(tape, store, r)
    }
}

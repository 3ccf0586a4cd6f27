//! Attention-bearing blocks: scaled dot-product attention, the per-unit
//! previous-state attention that feeds the working memory, the memory
//! self-attention that reads it out, and the position-wise feed-forward.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{fan_in, ParamId, ParamStore};

/// Query, key and value projections of one attention product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionHead {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub d_k: usize,
}

impl AttentionHead {
    /// Queries come from `d_in_q`-wide rows, keys and values from `d_in_kv`-wide rows.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut impl Rng,
        d_in_q: usize,
        d_in_kv: usize,
        d_k: usize,
        d_v: usize,
    ) -> Self {
        assert!(d_k > 0, "attention key width must be positive");
        AttentionHead {
            w_q: store.add(format!("{prefix}.w_q"), fan_in(rng, d_in_q, d_k, d_in_q)),
            w_k: store.add(format!("{prefix}.w_k"), fan_in(rng, d_in_kv, d_k, d_in_kv)),
            w_v: store.add(format!("{prefix}.w_v"), fan_in(rng, d_in_kv, d_v, d_in_kv)),
            d_k,
        }
    }

    pub fn num_params(d_in_q: usize, d_in_kv: usize, d_k: usize, d_v: usize) -> usize {
        d_in_q * d_k + d_in_kv * d_k + d_in_kv * d_v
    }
}

/// Two-layer position-wise MLP whose hidden width is four times the model width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

pub const FF_EXPANSION: usize = 4;

impl FeedForward {
    pub fn init(store: &mut ParamStore, prefix: &str, rng: &mut impl Rng, d: usize) -> Self {
        let h = FF_EXPANSION * d;
        FeedForward {
            w1: store.add(format!("{prefix}.w1"), fan_in(rng, d, h, d)),
            b1: store.add(format!("{prefix}.b1"), fan_in(rng, 1, h, d)),
            w2: store.add(format!("{prefix}.w2"), fan_in(rng, h, d, h)),
            b2: store.add(format!("{prefix}.b2"), fan_in(rng, 1, d, h)),
        }
    }

    pub fn num_params(d: usize) -> usize {
        let h = FF_EXPANSION * d;
        d * h + h + h * d + d
    }
}

/// `softmax(q·kᵀ/√d_k)·v`. A `false` mask entry removes that key for that query.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let (_, d_q) = tape.shape(q);
    let (m_k, d_k) = tape.shape(k);
    let (m_v, _) = tape.shape(v);
    if d_q != d_k {
        return Err(Error::dim(
            "scaled_dot_attention",
            format!("query width {d_q} vs key width {d_k}"),
        ));
    }
    if m_k != m_v {
        return Err(Error::dim(
            "scaled_dot_attention",
            format!("{m_k} keys vs {m_v} values"),
        ));
    }
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    let weights = tape.softmax_rows_masked(scores, mask)?;
    tape.matmul(weights, v)
}

/// One attention product per memory unit: unit `i` queries with the
/// embedding and reads keys and values off every unit's state, then adds the
/// embedding back. Returns one `1×d_a` information vector per unit.
pub fn previous_state_attention_rows(
    tape: &mut Tape,
    params: &[Var],
    emb: Var,
    states: Var,
    heads: &[AttentionHead],
) -> Result<Vec<Var>> {
    if heads.is_empty() {
        return Err(Error::config(
            "previous-state attention needs at least one memory unit",
        ));
    }
    heads
        .iter()
        .map(|h| {
            let q = tape.matmul(emb, h.w_q.of(params))?;
            let k = tape.matmul(states, h.w_k.of(params))?;
            let v = tape.matmul(states, h.w_v.of(params))?;
            let attended = scaled_dot_attention(tape, q, k, v, None)?;
            tape.add(attended, emb)
        })
        .collect()
}

/// [`previous_state_attention_rows`] stacked into an `M×d_a` matrix.
pub fn previous_state_attention(
    tape: &mut Tape,
    params: &[Var],
    emb: Var,
    states: Var,
    heads: &[AttentionHead],
) -> Result<Var> {
    let rows = previous_state_attention_rows(tape, params, emb, states, heads)?;
    tape.concat_rows(&rows)
}

/// Self-attention across the `M` unit states, residual add of the states,
/// flatten to `1×(M·d_m)` and project down to `1×d_a` through `reduce`.
pub fn memory_self_attention(
    tape: &mut Tape,
    params: &[Var],
    states: Var,
    head: &AttentionHead,
    reduce: Var,
) -> Result<Var> {
    let (m, d_m) = tape.shape(states);
    let q = tape.matmul(states, head.w_q.of(params))?;
    let k = tape.matmul(states, head.w_k.of(params))?;
    let v = tape.matmul(states, head.w_v.of(params))?;
    let attended = scaled_dot_attention(tape, q, k, v, None)?;
    let mixed = tape.add(attended, states)?;
    let flat = tape.reshape(mixed, 1, m * d_m)?;
    tape.matmul(flat, reduce)
}

/// `relu(x·w1 + b1)·w2 + b2 + x`, applied row-wise.
pub fn feed_forward(tape: &mut Tape, params: &[Var], x: Var, ff: &FeedForward) -> Result<Var> {
    let h = tape.matmul(x, ff.w1.of(params))?;
    let h = tape.add_row_bias(h, ff.b1.of(params))?;
    let h = tape.relu(h)?;
    let h = tape.matmul(h, ff.w2.of(params))?;
    let h = tape.add_row_bias(h, ff.b2.of(params))?;
    tape.add(h, x)
}

/// Helper for tests and callers that only need values.
pub fn attention_weights(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (qv, kv) = (tape.constant(q.clone()), tape.constant(k.clone()));
    let s = tape.matmul_nt(qv, kv)?;
    let s = tape.scale(s, 1.0 / (k.cols() as f64).sqrt())?;
    let w = tape.softmax_rows(s)?;
    Ok(tape.value(w).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    fn attend(q: Tensor, k: Tensor, v: Tensor) -> Tensor {
        let mut tape = Tape::new();
        let (q, k, v) = (tape.constant(q), tape.constant(k), tape.constant(v));
        let out = scaled_dot_attention(&mut tape, q, k, v, None).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn single_key_returns_its_value() {
        let out = attend(
            t(&[&[0.3, -2.0]]),
            t(&[&[5.0, 1.0]]),
            t(&[&[7.0, -3.0, 0.5]]),
        );
        assert_eq!(out.data(), &[7.0, -3.0, 0.5]);
    }

    #[test]
    fn identical_keys_average_values() {
        let out = attend(
            t(&[&[0.4, 1.1]]),
            t(&[&[1.0, 2.0], &[1.0, 2.0]]),
            t(&[&[2.0], &[6.0]]),
        );
        assert!((out.data()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn two_key_hand_value() {
        let out = attend(
            t(&[&[1.0, 0.0]]),
            t(&[&[1.0, 0.0], &[0.0, 1.0]]),
            t(&[&[1.0], &[0.0]]),
        );
        let e = (1.0 / 2f64.sqrt()).exp();
        let expected = e / (e + 1.0);
        assert!((out.data()[0] - expected).abs() < 1e-12);
        assert!((expected - 0.6698).abs() < 1e-4);
    }

    #[test]
    fn fully_masked_row_is_rejected() {
        let mut tape = Tape::new();
        let q = tape.constant(t(&[&[1.0]]));
        let k = tape.constant(t(&[&[1.0], &[2.0]]));
        let v = tape.constant(t(&[&[1.0], &[2.0]]));
        assert!(scaled_dot_attention(&mut tape, q, k, v, Some(&[false, false])).is_err());
    }

    fn store_with(tensors: Vec<(&str, Tensor)>) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = tensors.into_iter().map(|(n, t)| s.add(n, t)).collect();
        (s, ids)
    }

    #[test]
    fn previous_state_attention_residual_only_when_values_vanish() {
        let (store, ids) = store_with(vec![
            ("q", t(&[&[0.5, 0.1], &[0.2, -0.3]])),
            ("k", t(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]])),
            ("v", Tensor::zeros(3, 2)),
        ]);
        let head = AttentionHead {
            w_q: ids[0],
            w_k: ids[1],
            w_v: ids[2],
            d_k: 2,
        };
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let emb = tape.constant(t(&[&[0.7, -1.4]]));
        let states = tape.constant(t(&[&[0.1, 0.2, 0.3]]));
        let out = previous_state_attention(&mut tape, &p, emb, states, &[head]).unwrap();
        assert_eq!(tape.value(out).data(), &[0.7, -1.4]);
    }

    #[test]
    fn previous_state_attention_symmetric_units_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let head = AttentionHead::init(&mut store, "h", &mut rng, 3, 4, 3, 3);
        let heads = [head; 3];
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let emb = tape.constant(t(&[&[0.2, -0.1, 0.9]]));
        let row: &[f64] = &[0.1, 0.2, 0.3, 0.4];
        let states = tape.constant(t(&[row, row, row]));
        let out = previous_state_attention(&mut tape, &p, emb, states, &heads).unwrap();
        let v = tape.value(out);
        assert_eq!(v.row_slice(0), v.row_slice(1));
        assert_eq!(v.row_slice(1), v.row_slice(2));
    }

    #[test]
    fn previous_state_attention_scalar_oracle() {
        // M=2 units, every width 1: weights are plain scalars.
        let (store, ids) = store_with(vec![
            ("q0", t(&[&[2.0]])),
            ("k0", t(&[&[1.0]])),
            ("v0", t(&[&[3.0]])),
            ("q1", t(&[&[-1.0]])),
            ("k1", t(&[&[0.5]])),
            ("v1", t(&[&[1.0]])),
        ]);
        let heads = [
            AttentionHead {
                w_q: ids[0],
                w_k: ids[1],
                w_v: ids[2],
                d_k: 1,
            },
            AttentionHead {
                w_q: ids[3],
                w_k: ids[4],
                w_v: ids[5],
                d_k: 1,
            },
        ];
        let (e, s0, s1) = (0.5, 0.8, -0.4);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let emb = tape.constant(t(&[&[e]]));
        let states = tape.constant(t(&[&[s0], &[s1]]));
        let out = previous_state_attention(&mut tape, &p, emb, states, &heads).unwrap();

        let manual = |wq: f64, wk: f64, wv: f64| {
            let q = e * wq;
            let (a0, a1) = ((q * s0 * wk).exp(), (q * s1 * wk).exp());
            (a0 * s0 * wv + a1 * s1 * wv) / (a0 + a1) + e
        };
        let got = tape.value(out).data();
        assert!((got[0] - manual(2.0, 1.0, 3.0)).abs() < 1e-12);
        assert!((got[1] - manual(-1.0, 0.5, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn self_attention_single_unit_and_annihilator() {
        let (store, ids) = store_with(vec![
            ("q", t(&[&[1.0, 0.0], &[0.0, 1.0]])),
            ("k", t(&[&[0.3, 0.1], &[0.2, 0.4]])),
            ("v", t(&[&[2.0, 0.0], &[1.0, -1.0]])),
            ("reduce", t(&[&[1.0], &[0.0]])),
            ("zero", Tensor::zeros(2, 1)),
        ]);
        let head = AttentionHead {
            w_q: ids[0],
            w_k: ids[1],
            w_v: ids[2],
            d_k: 2,
        };
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let s = tape.constant(t(&[&[0.5, -0.25]]));
        // value projection of the state: [0.5*2 - 0.25*1, 0.25] = [0.75, 0.25]; plus state = [1.25, 0.0]
        let out = memory_self_attention(&mut tape, &p, s, &head, ids[3].of(&p)).unwrap();
        assert!((tape.value(out).data()[0] - 1.25).abs() < 1e-12);
        let zero = memory_self_attention(&mut tape, &p, s, &head, ids[4].of(&p)).unwrap();
        assert_eq!(tape.value(zero).data(), &[0.0]);
    }

    #[test]
    fn self_attention_two_unit_oracle() {
        // M=2, d_m=2, d_a=1, identity projections.
        let (store, ids) = store_with(vec![
            ("q", Tensor::identity(2)),
            ("k", Tensor::identity(2)),
            ("v", Tensor::identity(2)),
            ("reduce", t(&[&[1.0], &[2.0], &[-1.0], &[0.5]])),
        ]);
        let head = AttentionHead {
            w_q: ids[0],
            w_k: ids[1],
            w_v: ids[2],
            d_k: 2,
        };
        let s = [[0.4, -0.2], [0.1, 0.6]];
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let sv = tape.constant(t(&[&s[0], &s[1]]));
        let out = memory_self_attention(&mut tape, &p, sv, &head, ids[3].of(&p)).unwrap();

        let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
        let r2 = 2f64.sqrt();
        let mut mixed = [[0.0; 2]; 2];
        for i in 0..2 {
            let w0 = (dot(s[i], s[0]) / r2).exp();
            let w1 = (dot(s[i], s[1]) / r2).exp();
            for c in 0..2 {
                mixed[i][c] = (w0 * s[0][c] + w1 * s[1][c]) / (w0 + w1) + s[i][c];
            }
        }
        let expected = mixed[0][0] + 2.0 * mixed[0][1] - mixed[1][0] + 0.5 * mixed[1][1];
        assert!((tape.value(out).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn feed_forward_residual_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let ff = FeedForward::init(&mut store, "ff", &mut rng, 2);
        for tensor in store.tensors_mut() {
            tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(t(&[&[0.3, -0.9]]));
        let out = feed_forward(&mut tape, &p, x, &ff).unwrap();
        assert_eq!(tape.value(out).data(), &[0.3, -0.9]);

        store
            .get_mut(ff.b2)
            .data_mut()
            .copy_from_slice(&[1.5, -2.0]);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(t(&[&[0.3, -0.9]]));
        let out = feed_forward(&mut tape, &p, x, &ff).unwrap();
        assert_eq!(tape.value(out).data(), &[1.8, -2.9]);
    }

    #[test]
    fn feed_forward_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let ff = FeedForward::init(&mut store, "ff", &mut rng, 1);
        store
            .get_mut(ff.w1)
            .data_mut()
            .copy_from_slice(&[1.0, -1.0, 2.0, 0.5]);
        store
            .get_mut(ff.b1)
            .data_mut()
            .copy_from_slice(&[0.1, 0.2, -0.3, 0.0]);
        store
            .get_mut(ff.w2)
            .data_mut()
            .copy_from_slice(&[1.0, 2.0, -1.0, 3.0]);
        store.get_mut(ff.b2).data_mut().copy_from_slice(&[0.25]);
        let x = 0.4;
        let hidden: [f64; 4] = [x + 0.1, -x + 0.2, 2.0 * x - 0.3, 0.5 * x];
        let expected = hidden[0].max(0.0) + 2.0 * hidden[1].max(0.0) - hidden[2].max(0.0)
            + 3.0 * hidden[3].max(0.0)
            + 0.25
            + x;
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let xv = tape.constant(t(&[&[x]]));
        let out = feed_forward(&mut tape, &p, xv, &ff).unwrap();
        assert!((tape.value(out).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn blocks_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let heads: Vec<_> = (0..2)
            .map(|i| AttentionHead::init(&mut store, &format!("p{i}"), &mut rng, 2, 3, 2, 2))
            .collect();
        let self_head = AttentionHead::init(&mut store, "s", &mut rng, 3, 3, 2, 3);
        let reduce = store.add("reduce", fan_in(&mut rng, 6, 2, 6));
        let ff = FeedForward::init(&mut store, "ff", &mut rng, 2);
        let emb = store.add("emb", fan_in(&mut rng, 1, 2, 1));
        let states = store.add("states", fan_in(&mut rng, 2, 3, 1));
        let err = grad_check(
            |tape, p| {
                let info = previous_state_attention(tape, p, emb.of(p), states.of(p), &heads)?;
                let info = tape.tanh(info)?;
                let mixed = tape.matmul_nt(info, info)?;
                let s2 = tape.matmul(mixed, states.of(p))?;
                let h = memory_self_attention(tape, p, s2, &self_head, reduce.of(p))?;
                let h = feed_forward(tape, p, h, &ff)?;
                let h = tape.mul(h, h)?;
                tape.sum(h)
            },
            store.tensors(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

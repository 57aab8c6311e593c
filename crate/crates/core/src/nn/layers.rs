//! Reusable layer composites: attention, positional encoding, pooling, MLP.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, VarId};
use super::{NnError, Scalar};

/// Parameters of one multi-head self-attention layer.
#[derive(Debug)]
pub struct AttentionParams {
    pub d_model: usize,
    pub heads: usize,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

impl AttentionParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        d_model: usize,
        heads: usize,
    ) -> Result<Self, NnError> {
        if heads == 0 || d_model % heads != 0 {
            return Err(NnError::HeadsMismatch {
                dim: d_model,
                heads,
            });
        }
        Ok(Self {
            d_model,
            heads,
            wq: store.xavier(&format!("{prefix}.wq"), d_model, d_model),
            bq: store.zeros(&format!("{prefix}.bq"), d_model),
            wk: store.xavier(&format!("{prefix}.wk"), d_model, d_model),
            bk: store.zeros(&format!("{prefix}.bk"), d_model),
            wv: store.xavier(&format!("{prefix}.wv"), d_model, d_model),
            bv: store.zeros(&format!("{prefix}.bv"), d_model),
            wo: store.xavier(&format!("{prefix}.wo"), d_model, d_model),
            bo: store.zeros(&format!("{prefix}.bo"), d_model),
        })
    }
}

/// Scaled dot-product attention over a `(T, d)` sequence: per head,
/// `softmax(Q K^T / sqrt(d/h)) V`, heads concatenated and projected.
pub fn multi_head_self_attention<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    params: &AttentionParams,
    x: VarId,
) -> Result<VarId, NnError> {
    let sh = tape.shape(x).to_vec();
    if sh.len() != 2 || sh[1] != params.d_model {
        return Err(NnError::ShapeMismatch {
            op: "multi_head_self_attention",
            left: sh,
            right: vec![0, params.d_model],
        });
    }
    let head_dim = params.d_model / params.heads;
    let scale = S::from_f64(1.0 / (head_dim as f64).sqrt());

    let wq = tape.param(store, params.wq);
    let bq = tape.param(store, params.bq);
    let wk = tape.param(store, params.wk);
    let bk = tape.param(store, params.bk);
    let wv = tape.param(store, params.wv);
    let bv = tape.param(store, params.bv);
    let q0 = tape.matmul(x, wq)?;
    let q = tape.add_row(q0, bq)?;
    let k0 = tape.matmul(x, wk)?;
    let k = tape.add_row(k0, bk)?;
    let v0 = tape.matmul(x, wv)?;
    let v = tape.add_row(v0, bv)?;

    let mut heads = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let qh = tape.slice(q, 1, h * head_dim, head_dim)?;
        let kh = tape.slice(k, 1, h * head_dim, head_dim)?;
        let vh = tape.slice(v, 1, h * head_dim, head_dim)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, scale);
        let attn = tape.softmax_axis1(scaled)?;
        heads.push(tape.matmul(attn, vh)?);
    }
    let merged = tape.concat(&heads, 1)?;
    let wo = tape.param(store, params.wo);
    let bo = tape.param(store, params.bo);
    let projected = tape.matmul(merged, wo)?;
    tape.add_row(projected, bo)
}

/// Interleaved sine/cosine positional encoding of shape `(t, d)`:
/// `pe[p, 2i] = sin(p / 10000^(2i/d))`, `pe[p, 2i+1] = cos(...)`.
pub fn sinusoidal_positional_encoding<S: Scalar>(
    tape: &mut Tape<S>,
    t: usize,
    d: usize,
) -> Result<VarId, NnError> {
    if d % 2 != 0 {
        return Err(NnError::BadShape {
            op: "sinusoidal_positional_encoding",
            expected: "an even model dimension",
            got: vec![t, d],
        });
    }
    let mut values = Vec::with_capacity(t * d);
    for pos in 0..t {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            values.push(S::from_f64(if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }));
        }
    }
    Ok(tape.constant(&[t, d], values))
}

/// Per-column mean over time: `(T, d)` to `(d)`.
pub fn global_average_pool<S: Scalar>(tape: &mut Tape<S>, x: VarId) -> Result<VarId, NnError> {
    tape.mean_axis0(x)
}

/// Output nonlinearity of the last MLP layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadActivation {
    Linear,
    Sigmoid,
}

/// A stack of affine layers with rectified-linear hidden activations.
#[derive(Debug)]
pub struct MlpParams {
    layers: Vec<(ParamId, ParamId)>,
    pub dims: Vec<usize>,
    pub head: HeadActivation,
}

impl MlpParams {
    /// `dims` is the chain `[in, hidden..., out]`, so `dims.len() - 1`
    /// affine layers are created.
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        dims: &[usize],
        head: HeadActivation,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least [in, out] dims");
        let layers = (0..dims.len() - 1)
            .map(|l| {
                (
                    store.xavier(&format!("{prefix}.{l}.w"), dims[l], dims[l + 1]),
                    store.zeros(&format!("{prefix}.{l}.b"), dims[l + 1]),
                )
            })
            .collect();
        Self {
            layers,
            dims: dims.to_vec(),
            head,
        }
    }
}

/// Applies the MLP to a vector `(d_in)` or a row batch `(n, d_in)`.
/// Hidden layers use relu; the final layer is linear unless a sigmoid
/// head was configured.
pub fn mlp<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    params: &MlpParams,
    x: VarId,
) -> Result<VarId, NnError> {
    let in_shape = tape.shape(x).to_vec();
    let was_vector = in_shape.len() == 1;
    let mut h = if was_vector {
        tape.reshape(x, &[1, in_shape[0]])?
    } else {
        x
    };
    if tape.shape(h)[1] != params.dims[0] {
        return Err(NnError::ShapeMismatch {
            op: "mlp",
            left: in_shape,
            right: vec![params.dims[0]],
        });
    }
    let last = params.layers.len() - 1;
    for (l, &(w, b)) in params.layers.iter().enumerate() {
        let wv = tape.param(store, w);
        let bv = tape.param(store, b);
        let lin = tape.matmul(h, wv)?;
        h = tape.add_row(lin, bv)?;
        if l < last {
            h = tape.relu(h);
        } else if params.head == HeadActivation::Sigmoid {
            h = tape.sigmoid(h);
        }
    }
    if was_vector {
        let out = tape.shape(h)[1];
        h = tape.reshape(h, &[out])?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_values(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn positional_encoding_reference_entries() {
        let mut tape = Tape::<f64>::new();
        let pe = sinusoidal_positional_encoding(&mut tape, 4, 6).unwrap();
        let v = tape.values(pe);
        assert_eq!(v[0], 0.0); // sin(0)
        assert_eq!(v[1], 1.0); // cos(0)
        assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
        // position 1, pair 1: angle = 1 / 10000^(2/6)
        let angle = 1.0 / 10000f64.powf(2.0 / 6.0);
        assert!((v[6 + 2] - angle.sin()).abs() < 1e-12);
        assert!((v[6 + 3] - angle.cos()).abs() < 1e-12);
    }

    #[test]
    fn positional_encoding_rejects_odd_dim() {
        let mut tape = Tape::<f64>::new();
        assert!(sinusoidal_positional_encoding(&mut tape, 3, 5).is_err());
    }

    #[test]
    fn gap_of_constant_rows_is_that_row() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[3, 2], vec![1.5, -2.0, 1.5, -2.0, 1.5, -2.0]);
        let g = global_average_pool(&mut tape, x).unwrap();
        assert_eq!(tape.values(g), &[1.5, -2.0]);
    }

    #[test]
    fn gap_of_single_row_is_identity_and_grad_uniform() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[1, 3], vec![0.1, 0.2, 0.3]);
        let g = global_average_pool(&mut tape, x).unwrap();
        assert_eq!(tape.values(g), &[0.1, 0.2, 0.3]);

        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[4, 2], random_values(8, 3));
        let g = global_average_pool(&mut tape, x).unwrap();
        let loss = tape.sum_all(g);
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).iter().all(|&d| (d - 0.25).abs() < 1e-12));
    }

    #[test]
    fn attention_with_t1_reduces_to_projections() {
        let mut store = ParamStore::<f64>::new(5);
        let attn = AttentionParams::init(&mut store, "attn", 8, 2).unwrap();
        let x_vals = random_values(8, 11);

        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[1, 8], x_vals.clone());
        let y = multi_head_self_attention(&mut tape, &store, &attn, x).unwrap();

        // oracle: out = (x Wv + bv) Wo + bo
        let mut tape2 = Tape::<f64>::new();
        let x2 = tape2.constant(&[1, 8], x_vals);
        let wv = tape2.param(&store, store.id("attn.wv").unwrap());
        let bv = tape2.param(&store, store.id("attn.bv").unwrap());
        let wo = tape2.param(&store, store.id("attn.wo").unwrap());
        let bo = tape2.param(&store, store.id("attn.bo").unwrap());
        let v0 = tape2.matmul(x2, wv).unwrap();
        let v = tape2.add_row(v0, bv).unwrap();
        let p = tape2.matmul(v, wo).unwrap();
        let want = tape2.add_row(p, bo).unwrap();

        for (a, b) in tape.values(y).iter().zip(tape2.values(want)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let mut store = ParamStore::<f64>::new(9);
        let attn = AttentionParams::init(&mut store, "attn", 8, 2).unwrap();
        let t = 5;
        let x_vals = random_values(t * 8, 21);

        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[t, 8], x_vals.clone());
        let y = multi_head_self_attention(&mut tape, &store, &attn, x).unwrap();
        let y_vals = tape.values(y).to_vec();

        // rotate rows by 2
        let perm: Vec<usize> = (0..t).map(|r| (r + 2) % t).collect();
        let mut xp = vec![0.0; t * 8];
        for (r, &pr) in perm.iter().enumerate() {
            xp[r * 8..(r + 1) * 8].copy_from_slice(&x_vals[pr * 8..(pr + 1) * 8]);
        }
        let mut tape2 = Tape::<f64>::new();
        let x2 = tape2.constant(&[t, 8], xp);
        let y2 = multi_head_self_attention(&mut tape2, &store, &attn, x2).unwrap();
        for (r, &pr) in perm.iter().enumerate() {
            for c in 0..8 {
                let a = tape2.values(y2)[r * 8 + c];
                let b = y_vals[pr * 8 + c];
                assert!((a - b).abs() < 1e-9, "row {r} col {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn attention_rows_of_softmax_sum_to_one_is_checked_in_tape_tests() {
        // covered by tape::tests::softmax_rows_sum_to_one; here we assert
        // the attention output stays finite for larger inputs
        let mut store = ParamStore::<f64>::new(2);
        let attn = AttentionParams::init(&mut store, "a", 16, 4).unwrap();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[10, 16], random_values(160, 33));
        let y = multi_head_self_attention(&mut tape, &store, &attn, x).unwrap();
        assert!(tape.values(y).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn attention_rejects_indivisible_heads() {
        let mut store = ParamStore::<f64>::new(2);
        assert_eq!(
            AttentionParams::init(&mut store, "a", 10, 3).unwrap_err(),
            NnError::HeadsMismatch { dim: 10, heads: 3 }
        );
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new(17);
        let attn = AttentionParams::init(&mut store, "attn", 6, 2).unwrap();
        let x_vals = random_values(4 * 6, 51);
        let report = gradcheck::check_params(&mut store, 1e-5, |tape, store| {
            let x = tape.constant(&[4, 6], x_vals.clone());
            let y = multi_head_self_attention(tape, store, &attn, x)?;
            Ok(tape.sum_all(y))
        })
        .unwrap();
        assert!(
            report.max_rel_error <= 1e-4,
            "attention gradcheck failed: {report:?}"
        );
    }

    #[test]
    fn mlp_identity_layer_passes_through() {
        let mut store = ParamStore::<f64>::new(0);
        let p = MlpParams::init(&mut store, "m", &[3, 3], HeadActivation::Linear);
        // overwrite with identity weights, zero bias
        let w = store.id("m.0.w").unwrap();
        let vals = store.values_mut(w);
        vals.copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[3], vec![0.5, -1.0, 2.0]);
        let y = mlp(&mut tape, &store, &p, x).unwrap();
        assert_eq!(tape.values(y), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn mlp_zero_weights_yield_bias() {
        let mut store = ParamStore::<f64>::new(0);
        let p = MlpParams::init(&mut store, "m", &[3, 2], HeadActivation::Linear);
        let w = store.id("m.0.w").unwrap();
        store.values_mut(w).fill(0.0);
        let b = store.id("m.0.b").unwrap();
        store.values_mut(b).copy_from_slice(&[0.7, -0.4]);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[3], vec![5.0, 6.0, 7.0]);
        let y = mlp(&mut tape, &store, &p, x).unwrap();
        assert_eq!(tape.values(y), &[0.7, -0.4]);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new(23);
        let p = MlpParams::init(&mut store, "m", &[4, 6, 2], HeadActivation::Sigmoid);
        let x_vals = random_values(4, 71);
        let report = gradcheck::check_params(&mut store, 1e-5, |tape, store| {
            let x = tape.constant(&[4], x_vals.clone());
            let y = mlp(tape, store, &p, x)?;
            Ok(tape.sum_all(y))
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "mlp gradcheck: {report:?}");
    }

    #[test]
    fn mlp_rejects_wrong_input_width() {
        let mut store = ParamStore::<f64>::new(0);
        let p = MlpParams::init(&mut store, "m", &[4, 2], HeadActivation::Linear);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[3], vec![0.0; 3]);
        assert!(matches!(
            mlp(&mut tape, &store, &p, x),
            Err(NnError::ShapeMismatch { .. })
        ));
    }
}

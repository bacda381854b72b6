//! Bidirectional interaction between taxonomy levels: score evidence
//! sharpens item decisions, item evidence modulates score decisions, and a
//! top-down filter keeps leaf predictions consistent with the chosen item.

use crate::autodiff::{SoftmaxAxes, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fill value that drives masked logits to zero probability under softmax.
pub const STRICT_MASK_FILL: f64 = -1e30;

/// Knobs shared by the interaction units and the filter.
#[derive(Debug, Clone, Copy)]
pub struct HierOptions {
    /// Span of the leaf-level normalization: all leaves jointly
    /// (`FlatLastTwo`) or each item's scores separately (`Last`).
    pub c2_axes: SoftmaxAxes,
    /// Replace filtered-out entries with a large negative fill instead of
    /// multiplying them by zero.
    pub strict_mask: bool,
}

impl Default for HierOptions {
    fn default() -> Self {
        HierOptions {
            c2_axes: SoftmaxAxes::FlatLastTwo,
            strict_mask: false,
        }
    }
}

/// Score-to-item unit: leaf evidence feeding the item decision.
pub struct S2iOutputs {
    /// Best leaf similarity per item, `(n,J)`.
    pub ms_c2: Var,
    /// Index of the winning score per `(sample, item)`.
    pub ms_argmax: Vec<usize>,
    /// Item text vectors scaled by pooled leaf evidence, `(n,J,d)`.
    pub ns_c1: Var,
    /// Re-scored item similarities, `(n,J)`.
    pub s_prime_c1: Var,
    /// Final item beliefs on the simplex, `(n,J)`.
    pub s_hat_c1: Var,
}

/// Item-to-score unit: item evidence feeding the leaf decision.
pub struct I2sOutputs {
    /// Item similarities copied across scores, `(n,J,K)`.
    pub ms_c1: Var,
    /// Leaf text vectors scaled by item evidence, `(n,J*K,d)`.
    pub ns_c2: Var,
    /// Re-scored leaf similarities, `(n,J,K)`.
    pub s_prime_c2: Var,
    /// Final leaf beliefs, `(n,J,K)`, normalized over `c2_axes`.
    pub s_hat_c2: Var,
}

/// Everything produced by one hierarchical forward pass.
pub struct HierOutputs {
    pub s2i: S2iOutputs,
    pub i2s: I2sOutputs,
    /// Winning item per sample, read from the item beliefs.
    pub parents: Vec<usize>,
    /// One-block-per-sample 0/1 filter, `(n,J,K)`.
    pub mask: Tensor,
    /// Leaf beliefs after the top-down filter, `(n,J,K)`.
    pub filtered_c2: Var,
}

fn blended_belief(tape: &mut Tape, a: Var, b: Var, axes: SoftmaxAxes) -> Result<Var> {
    let da = tape.softmax(a, axes)?;
    let db = tape.softmax(b, axes)?;
    let sum = tape.add(da, db)?;
    tape.scale(sum, 0.5)
}

/// Builds the score-to-item unit from fused level similarities
/// `s_va_c1 (n,J)`, `s_va_c2 (n,J,K)`, item texts `h_c1 (J,d)` and video
/// vectors `h_v (n,d)`.
pub fn s2i(
    tape: &mut Tape,
    s_va_c1: Var,
    s_va_c2: Var,
    h_c1: Var,
    h_v: Var,
) -> Result<S2iOutputs> {
    let (ms_c2, ms_argmax) = tape.max_pool_last(s_va_c2)?;
    let ns_c1 = tape.hadamard_scale(h_c1, ms_c2)?;
    let s_prime_c1 = tape.batched_matvec(ns_c1, h_v)?;
    let s_hat_c1 = blended_belief(tape, s_va_c1, s_prime_c1, SoftmaxAxes::Last)?;
    Ok(S2iOutputs {
        ms_c2,
        ms_argmax,
        ns_c1,
        s_prime_c1,
        s_hat_c1,
    })
}

/// Builds the item-to-score unit from the same similarity surfaces plus the
/// flat leaf text table `h_c2_flat (J*K, d)`.
pub fn i2s(
    tape: &mut Tape,
    s_va_c1: Var,
    s_va_c2: Var,
    h_c2_flat: Var,
    h_v: Var,
    axes: SoftmaxAxes,
) -> Result<I2sOutputs> {
    let shape = tape.value(s_va_c2).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::shape(
            "i2s",
            format!("leaf similarities must be rank 3, got {shape:?}"),
        ));
    }
    let (n, j, k) = (shape[0], shape[1], shape[2]);
    if tape.value(h_c2_flat).shape() != [j * k, tape.value(h_v).shape()[1]] {
        return Err(Error::shape(
            "i2s",
            format!(
                "leaf table {:?} does not cover {j}x{k} leaves",
                tape.value(h_c2_flat).shape()
            ),
        ));
    }
    let ms_c1 = tape.broadcast_repeat(s_va_c1, k)?;
    let ms_flat = tape.reshape(ms_c1, vec![n, j * k])?;
    let ns_c2 = tape.hadamard_scale(h_c2_flat, ms_flat)?;
    let sp_flat = tape.batched_matvec(ns_c2, h_v)?;
    let s_prime_c2 = tape.reshape(sp_flat, vec![n, j, k])?;
    let s_hat_c2 = blended_belief(tape, s_va_c2, s_prime_c2, axes)?;
    Ok(I2sOutputs {
        ms_c1,
        ns_c2,
        s_prime_c2,
        s_hat_c2,
    })
}

/// Argmax of each row; ties resolve to the lowest index.
pub fn row_argmax(scores: &Tensor) -> Vec<usize> {
    let cols = *scores.shape().last().expect("non-empty shape");
    scores
        .data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Top-down filter from item beliefs `s_hat_c1 (n,J)`: keeps only the
/// winning item's score block. Returns the 0/1 mask `(n,J,K)` and the
/// winning item per sample.
pub fn filter_mask(s_hat_c1: &Tensor, scores_per_item: usize) -> Result<(Tensor, Vec<usize>)> {
    if s_hat_c1.rank() != 2 {
        return Err(Error::shape(
            "filter_mask",
            format!("item beliefs must be rank 2, got {:?}", s_hat_c1.shape()),
        ));
    }
    let (n, j) = (s_hat_c1.shape()[0], s_hat_c1.shape()[1]);
    let parents = row_argmax(s_hat_c1);
    let mut mask = vec![0.0; n * j * scores_per_item];
    for (i, &p) in parents.iter().enumerate() {
        for k in 0..scores_per_item {
            mask[(i * j + p) * scores_per_item + k] = 1.0;
        }
    }
    Ok((Tensor::new(vec![n, j, scores_per_item], mask)?, parents))
}

/// Applies the filter to leaf beliefs: multiplication by the 0/1 mask, or
/// substitution with [`STRICT_MASK_FILL`] under the strict variant.
pub fn apply_filter(
    tape: &mut Tape,
    s_hat_c2: Var,
    mask: &Tensor,
    strict: bool,
) -> Result<Var> {
    if strict {
        let keep: Vec<bool> = mask.data().iter().map(|&m| m > 0.5).collect();
        tape.mask_fill(s_hat_c2, &keep, STRICT_MASK_FILL)
    } else {
        tape.mul_mask(s_hat_c2, mask)
    }
}

/// Runs both interaction units and the filter. The filter treats the item
/// argmax as a constant: gradients flow through the kept leaf entries only.
pub fn hier_forward(
    tape: &mut Tape,
    s_va_c1: Var,
    s_va_c2: Var,
    h_c1: Var,
    h_c2_flat: Var,
    h_v: Var,
    opts: HierOptions,
) -> Result<HierOutputs> {
    let s2i_out = s2i(tape, s_va_c1, s_va_c2, h_c1, h_v)?;
    let i2s_out = i2s(tape, s_va_c1, s_va_c2, h_c2_flat, h_v, opts.c2_axes)?;
    let k = tape.value(s_va_c2).shape()[2];
    let (mask, parents) = filter_mask(tape.value(s2i_out.s_hat_c1), k)?;
    let filtered_c2 = apply_filter(tape, i2s_out.s_hat_c2, &mask, opts.strict_mask)?;
    Ok(HierOutputs {
        s2i: s2i_out,
        i2s: i2s_out,
        parents,
        mask,
        filtered_c2,
    })
}

/// Parent-coherent prediction: the winning item, then the winning score
/// inside that item's block. Ties resolve to the lowest index.
pub fn predict(s_hat_c1: &Tensor, s_hat_c2: &Tensor) -> Result<Vec<(usize, usize)>> {
    if s_hat_c1.rank() != 2 || s_hat_c2.rank() != 3 {
        return Err(Error::shape(
            "predict",
            format!(
                "expected (n,J) and (n,J,K), got {:?} and {:?}",
                s_hat_c1.shape(),
                s_hat_c2.shape()
            ),
        ));
    }
    if s_hat_c1.shape()[0] != s_hat_c2.shape()[0] || s_hat_c1.shape()[1] != s_hat_c2.shape()[1] {
        return Err(Error::shape(
            "predict",
            format!(
                "mismatched beliefs {:?} vs {:?}",
                s_hat_c1.shape(),
                s_hat_c2.shape()
            ),
        ));
    }
    let k = s_hat_c2.shape()[2];
    let parents = row_argmax(s_hat_c1);
    Ok(parents
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut best = 0usize;
            for s in 0..k {
                if s_hat_c2.at3(i, p, s) > s_hat_c2.at3(i, p, best) {
                    best = s;
                }
            }
            (p, best)
        })
        .collect())
}

/// Flat leaf argmax per sample, ignoring the hierarchy.
pub fn predict_flat(s_hat_c2: &Tensor) -> Result<Vec<usize>> {
    if s_hat_c2.rank() != 3 {
        return Err(Error::shape(
            "predict_flat",
            format!("expected (n,J,K), got {:?}", s_hat_c2.shape()),
        ));
    }
    let flat = s_hat_c2.reshaped(vec![
        s_hat_c2.shape()[0],
        s_hat_c2.shape()[1] * s_hat_c2.shape()[2],
    ])?;
    Ok(row_argmax(&flat))
}

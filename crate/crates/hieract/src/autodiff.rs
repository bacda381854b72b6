//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Values are computed eagerly when an op is recorded; `backward` walks the
//! tape in reverse and accumulates cotangents into every reachable node.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Normalization span for [`Tape::softmax`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxAxes {
    /// Each trailing-axis slice is one normalization group.
    Last,
    /// Rank-3 input only: each `[j,k]` plane of a sample is one group.
    FlatLastTwo,
}

/// Which direction(s) the contrastive loss averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoNceDirection {
    Row,
    Column,
    Symmetric,
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
}

enum Op {
    Matmul { a: usize, b: usize, out: usize },
    MatmulNT { a: usize, b: usize, out: usize },
    BatchedMatvec { t: usize, v: usize, out: usize },
    HadamardScale { h: usize, ms: usize, out: usize },
    Softmax { x: usize, out: usize, group: usize },
    MaxPoolLast { x: usize, out: usize, argmax: Vec<usize> },
    BroadcastRepeat { x: usize, out: usize, reps: usize },
    MeanMiddle { x: usize, out: usize },
    RowNormalize { x: usize, out: usize, norms: Vec<f64> },
    Add { a: usize, b: usize, out: usize },
    Scale { x: usize, c: f64, out: usize },
    Reshape { x: usize, out: usize },
    WeightedSum { x: usize, out: usize, weights: Vec<f64> },
    MulMask { x: usize, out: usize, mask: Vec<f64> },
    MaskFill { x: usize, out: usize, keep: Vec<bool> },
    TempScale { x: usize, log_t: usize, out: usize },
    InfoNce { s: usize, out: usize, dir: InfoNceDirection },
    KlRows { p: usize, q: usize, out: usize },
    CeRows { x: usize, out: usize, targets: Vec<usize> },
}

/// Record of a forward computation, replayable in reverse for gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<Op>,
}

/// Streaming mean that is exact when every term is bit-identical.
fn running_mean(terms: &[f64]) -> f64 {
    let mut mean = 0.0;
    for (k, &t) in terms.iter().enumerate() {
        mean += (t - mean) / (k + 1) as f64;
    }
    mean
}

/// Per-anchor contrastive terms over rows (or columns when `transpose`).
fn nce_terms(s: &Tensor, transpose: bool) -> Vec<f64> {
    let n = s.shape()[0];
    (0..n)
        .map(|i| {
            let get = |j: usize| if transpose { s.at2(j, i) } else { s.at2(i, j) };
            let m = (0..n).map(get).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..n).map(|j| (get(j) - m).exp()).sum();
            sum.ln() - (get(i) - m)
        })
        .collect()
}

fn softmax_group(values: &mut [f64]) {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Registers a leaf that will not be differentiated against.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value)
    }

    /// Registers a trainable leaf; gradients are available after `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value.with_grad())
    }

    fn push(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated cotangent of `v`, present once `backward` has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, op: &'static str, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::shape(op, format!("var {} not on this tape", v.0)));
        }
        Ok(())
    }

    /// `A (n,k) x B (k,m) -> (n,m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check("matmul", a)?;
        self.check("matmul", b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("incompatible {:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let av = ta.at2(i, p);
                for j in 0..m {
                    out[i * m + j] += av * tb.at2(p, j);
                }
            }
        }
        let out = self.push(Tensor::new(vec![n, m], out)?);
        self.ops.push(Op::Matmul {
            a: a.0,
            b: b.0,
            out: out.0,
        });
        Ok(out)
    }

    /// `A (n,k) x B (m,k)^T -> (n,m)`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check("matmul_nt", a)?;
        self.check("matmul_nt", b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[1] {
            return Err(Error::shape(
                "matmul_nt",
                format!("incompatible {:?} x {:?}^T", ta.shape(), tb.shape()),
            ));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += ta.at2(i, p) * tb.at2(j, p);
                }
                out[i * m + j] = acc;
            }
        }
        let out = self.push(Tensor::new(vec![n, m], out)?);
        self.ops.push(Op::MatmulNT {
            a: a.0,
            b: b.0,
            out: out.0,
        });
        Ok(out)
    }

    /// `T (n,P,d) x V (n,d) -> (n,P)`, one matvec per leading index.
    pub fn batched_matvec(&mut self, t: Var, v: Var) -> Result<Var> {
        self.check("batched_matvec", t)?;
        self.check("batched_matvec", v)?;
        let (tt, tv) = (&self.nodes[t.0].value, &self.nodes[v.0].value);
        if tt.rank() != 3
            || tv.rank() != 2
            || tt.shape()[0] != tv.shape()[0]
            || tt.shape()[2] != tv.shape()[1]
        {
            return Err(Error::shape(
                "batched_matvec",
                format!("incompatible {:?} x {:?}", tt.shape(), tv.shape()),
            ));
        }
        let (n, p, d) = (tt.shape()[0], tt.shape()[1], tt.shape()[2]);
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            for q in 0..p {
                let mut acc = 0.0;
                for m in 0..d {
                    acc += tt.at3(i, q, m) * tv.at2(i, m);
                }
                out[i * p + q] = acc;
            }
        }
        let out = self.push(Tensor::new(vec![n, p], out)?);
        self.ops.push(Op::BatchedMatvec {
            t: t.0,
            v: v.0,
            out: out.0,
        });
        Ok(out)
    }

    /// `H (P,d) scaled per sample by MS (n,P) -> (n,P,d)`:
    /// `out[i,p,m] = H[p,m] * MS[i,p]`.
    pub fn hadamard_scale(&mut self, h: Var, ms: Var) -> Result<Var> {
        self.check("hadamard_scale", h)?;
        self.check("hadamard_scale", ms)?;
        let (th, tm) = (&self.nodes[h.0].value, &self.nodes[ms.0].value);
        if th.rank() != 2 || tm.rank() != 2 || th.shape()[0] != tm.shape()[1] {
            return Err(Error::shape(
                "hadamard_scale",
                format!("incompatible {:?} with {:?}", th.shape(), tm.shape()),
            ));
        }
        let (p, d, n) = (th.shape()[0], th.shape()[1], tm.shape()[0]);
        let mut out = vec![0.0; n * p * d];
        for i in 0..n {
            for q in 0..p {
                let s = tm.at2(i, q);
                for m in 0..d {
                    out[(i * p + q) * d + m] = th.at2(q, m) * s;
                }
            }
        }
        let out = self.push(Tensor::new(vec![n, p, d], out)?);
        self.ops.push(Op::HadamardScale {
            h: h.0,
            ms: ms.0,
            out: out.0,
        });
        Ok(out)
    }

    /// Max-subtracted softmax over the chosen trailing span.
    pub fn softmax(&mut self, x: Var, axes: SoftmaxAxes) -> Result<Var> {
        self.check("softmax", x)?;
        let tx = &self.nodes[x.0].value;
        let group = match axes {
            SoftmaxAxes::Last => *tx.shape().last().expect("non-empty shape"),
            SoftmaxAxes::FlatLastTwo => {
                if tx.rank() != 3 {
                    return Err(Error::shape(
                        "softmax",
                        format!("flattened-last-two needs rank 3, got {:?}", tx.shape()),
                    ));
                }
                tx.shape()[1] * tx.shape()[2]
            }
        };
        let mut data = tx.data().to_vec();
        let shape = tx.shape().to_vec();
        for chunk in data.chunks_mut(group) {
            softmax_group(chunk);
        }
        let out = self.push(Tensor::new(shape, data)?);
        self.ops.push(Op::Softmax {
            x: x.0,
            out: out.0,
            group,
        });
        Ok(out)
    }

    /// Collapses the trailing axis by maximum; ties resolve to the lowest index.
    /// Returns the pooled var and the argmax per group.
    pub fn max_pool_last(&mut self, x: Var) -> Result<(Var, Vec<usize>)> {
        self.check("max_pool_last", x)?;
        let tx = &self.nodes[x.0].value;
        if tx.rank() < 2 {
            return Err(Error::shape(
                "max_pool_last",
                format!("needs rank >= 2, got {:?}", tx.shape()),
            ));
        }
        let group = *tx.shape().last().expect("non-empty shape");
        let out_shape: Vec<usize> = tx.shape()[..tx.rank() - 1].to_vec();
        let mut pooled = Vec::with_capacity(tx.numel() / group);
        let mut argmax = Vec::with_capacity(tx.numel() / group);
        for chunk in tx.data().chunks(group) {
            let mut best = 0usize;
            for (j, &v) in chunk.iter().enumerate() {
                if v > chunk[best] {
                    best = j;
                }
            }
            pooled.push(chunk[best]);
            argmax.push(best);
        }
        let out = self.push(Tensor::new(out_shape, pooled)?);
        self.ops.push(Op::MaxPoolLast {
            x: x.0,
            out: out.0,
            argmax: argmax.clone(),
        });
        Ok((out, argmax))
    }

    /// `(n,J) -> (n,J,reps)` by copying each entry along a new trailing axis.
    pub fn broadcast_repeat(&mut self, x: Var, reps: usize) -> Result<Var> {
        self.check("broadcast_repeat", x)?;
        if reps == 0 {
            return Err(Error::shape("broadcast_repeat", "zero repeats"));
        }
        let tx = &self.nodes[x.0].value;
        if tx.rank() != 2 {
            return Err(Error::shape(
                "broadcast_repeat",
                format!("needs rank 2, got {:?}", tx.shape()),
            ));
        }
        let (n, j) = (tx.shape()[0], tx.shape()[1]);
        let mut out = Vec::with_capacity(n * j * reps);
        for &v in tx.data() {
            out.extend(std::iter::repeat_n(v, reps));
        }
        let out = self.push(Tensor::new(vec![n, j, reps], out)?);
        self.ops.push(Op::BroadcastRepeat {
            x: x.0,
            out: out.0,
            reps,
        });
        Ok(out)
    }

    /// `(n,T,d) -> (n,d)` by averaging over the middle axis.
    pub fn mean_middle(&mut self, x: Var) -> Result<Var> {
        self.check("mean_middle", x)?;
        let tx = &self.nodes[x.0].value;
        if tx.rank() != 3 {
            return Err(Error::shape(
                "mean_middle",
                format!("needs rank 3, got {:?}", tx.shape()),
            ));
        }
        let (n, t, d) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for s in 0..t {
                for m in 0..d {
                    out[i * d + m] += tx.at3(i, s, m);
                }
            }
        }
        for v in out.iter_mut() {
            *v /= t as f64;
        }
        let out = self.push(Tensor::new(vec![n, d], out)?);
        self.ops.push(Op::MeanMiddle { x: x.0, out: out.0 });
        Ok(out)
    }

    /// Scales each trailing-axis vector to unit Euclidean norm.
    /// Errors on a vector whose norm is below 1e-12, naming its row.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        self.check("row_normalize", x)?;
        let tx = &self.nodes[x.0].value;
        let d = *tx.shape().last().expect("non-empty shape");
        let shape = tx.shape().to_vec();
        let mut data = tx.data().to_vec();
        let mut norms = Vec::with_capacity(data.len() / d);
        for (r, chunk) in data.chunks_mut(d).enumerate() {
            let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::numeric(
                    "row_normalize",
                    format!("row {r} has near-zero norm {norm:.3e}"),
                ));
            }
            for v in chunk.iter_mut() {
                *v /= norm;
            }
            norms.push(norm);
        }
        let out = self.push(Tensor::new(shape, data)?);
        self.ops.push(Op::RowNormalize {
            x: x.0,
            out: out.0,
            norms,
        });
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check("add", a)?;
        self.check("add", b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "add",
                format!("mismatched {:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = ta.shape().to_vec();
        let out = self.push(Tensor::new(shape, data)?);
        self.ops.push(Op::Add {
            a: a.0,
            b: b.0,
            out: out.0,
        });
        Ok(out)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.check("scale", x)?;
        let tx = &self.nodes[x.0].value;
        let data: Vec<f64> = tx.data().iter().map(|v| v * c).collect();
        let shape = tx.shape().to_vec();
        let out = self.push(Tensor::new(shape, data)?);
        self.ops.push(Op::Scale {
            x: x.0,
            c,
            out: out.0,
        });
        Ok(out)
    }

    /// View with a new shape over the same element order; gradient passes through.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.check("reshape", x)?;
        let reshaped = self.nodes[x.0].value.reshaped(shape)?;
        let out = self.push(reshaped);
        self.ops.push(Op::Reshape { x: x.0, out: out.0 });
        Ok(out)
    }

    /// Scalar dot product of `x` with fixed `weights`.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        self.check("weighted_sum", x)?;
        let tx = &self.nodes[x.0].value;
        if tx.numel() != weights.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} elements", weights.len(), tx.numel()),
            ));
        }
        let v: f64 = tx.data().iter().zip(weights).map(|(x, w)| x * w).sum();
        let out = self.push(Tensor::scalar(v));
        self.ops.push(Op::WeightedSum {
            x: x.0,
            out: out.0,
            weights: weights.to_vec(),
        });
        Ok(out)
    }

    /// Elementwise product with a constant mask of identical shape.
    pub fn mul_mask(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        self.check("mul_mask", x)?;
        let tx = &self.nodes[x.0].value;
        if tx.shape() != mask.shape() {
            return Err(Error::shape(
                "mul_mask",
                format!("mismatched {:?} vs {:?}", tx.shape(), mask.shape()),
            ));
        }
        let data: Vec<f64> = tx
            .data()
            .iter()
            .zip(mask.data())
            .map(|(x, m)| x * m)
            .collect();
        let shape = tx.shape().to_vec();
        let out = self.push(Tensor::new(shape, data)?);
        self.ops.push(Op::MulMask {
            x: x.0,
            out: out.0,
            mask: mask.data().to_vec(),
        });
        Ok(out)
    }

    /// Keeps `x` where `keep` is true, otherwise substitutes the constant `fill`.
    pub fn mask_fill(&mut self, x: Var, keep: &[bool], fill: f64) -> Result<Var> {
        self.check("mask_fill", x)?;
        let tx = &self.nodes[x.0].value;
        if tx.numel() != keep.len() {
            return Err(Error::shape(
                "mask_fill",
                format!("{} mask bits for {} elements", keep.len(), tx.numel()),
            ));
        }
        let data: Vec<f64> = tx
            .data()
            .iter()
            .zip(keep)
            .map(|(&x, &k)| if k { x } else { fill })
            .collect();
        let shape = tx.shape().to_vec();
        let out = self.push(Tensor::new(shape, data)?);
        self.ops.push(Op::MaskFill {
            x: x.0,
            out: out.0,
            keep: keep.to_vec(),
        });
        Ok(out)
    }

    /// Divides `x` by the temperature `exp(log_t)`; `log_t` is a shape `[1]` var.
    pub fn temp_scale(&mut self, x: Var, log_t: Var) -> Result<Var> {
        self.check("temp_scale", x)?;
        self.check("temp_scale", log_t)?;
        let lt = self.nodes[log_t.0].value.item()?;
        let s = (-lt).exp();
        let tx = &self.nodes[x.0].value;
        let data: Vec<f64> = tx.data().iter().map(|v| v * s).collect();
        let shape = tx.shape().to_vec();
        let out = self.push(Tensor::new(shape, data)?);
        self.ops.push(Op::TempScale {
            x: x.0,
            log_t: log_t.0,
            out: out.0,
        });
        Ok(out)
    }

    /// Contrastive alignment loss over a square similarity matrix whose
    /// diagonal holds the matched pairs. Exactly `ln n` on a constant matrix.
    pub fn info_nce(&mut self, s: Var, dir: InfoNceDirection) -> Result<Var> {
        self.check("info_nce", s)?;
        let ts = &self.nodes[s.0].value;
        if ts.rank() != 2 || ts.shape()[0] != ts.shape()[1] {
            return Err(Error::shape(
                "info_nce",
                format!("needs a square matrix, got {:?}", ts.shape()),
            ));
        }
        ts.check_finite("info_nce")?;
        let loss = match dir {
            InfoNceDirection::Row => running_mean(&nce_terms(ts, false)),
            InfoNceDirection::Column => running_mean(&nce_terms(ts, true)),
            InfoNceDirection::Symmetric => {
                let r = running_mean(&nce_terms(ts, false));
                let c = running_mean(&nce_terms(ts, true));
                (r + c) / 2.0
            }
        };
        let out = self.push(Tensor::scalar(loss));
        self.ops.push(Op::InfoNce {
            s: s.0,
            out: out.0,
            dir,
        });
        Ok(out)
    }

    /// Mean over rows of `KL(P_row || Q_row)`. Rows must already lie on the
    /// simplex; `Q` must be strictly positive.
    pub fn kl_rows(&mut self, p: Var, q: Var) -> Result<Var> {
        self.kl_rows_impl(p, q, false)
    }

    /// [`Tape::kl_rows`] that tolerates exact zeros in `P` (masked entries).
    pub fn kl_rows_allow_zero(&mut self, p: Var, q: Var) -> Result<Var> {
        self.kl_rows_impl(p, q, true)
    }

    fn kl_rows_impl(&mut self, p: Var, q: Var, allow_zero_p: bool) -> Result<Var> {
        self.check("kl_rows", p)?;
        self.check("kl_rows", q)?;
        let (tp, tq) = (&self.nodes[p.0].value, &self.nodes[q.0].value);
        if tp.rank() != 2 || tp.shape() != tq.shape() {
            return Err(Error::shape(
                "kl_rows",
                format!("needs equal rank-2 shapes, got {:?} vs {:?}", tp.shape(), tq.shape()),
            ));
        }
        let (rows, cols) = (tp.shape()[0], tp.shape()[1]);
        for r in 0..rows {
            let mut ps = 0.0;
            let mut qs = 0.0;
            for c in 0..cols {
                let (pv, qv) = (tp.at2(r, c), tq.at2(r, c));
                if qv <= 0.0 || !qv.is_finite() {
                    return Err(Error::numeric(
                        "kl_rows",
                        format!("non-positive reference entry {qv} at ({r},{c})"),
                    ));
                }
                let p_ok = if allow_zero_p { pv >= 0.0 } else { pv > 0.0 };
                if !p_ok || !pv.is_finite() {
                    return Err(Error::numeric(
                        "kl_rows",
                        format!("invalid probability entry {pv} at ({r},{c})"),
                    ));
                }
                ps += pv;
                qs += qv;
            }
            if (ps - 1.0).abs() > 1e-6 || (qs - 1.0).abs() > 1e-6 {
                return Err(Error::numeric(
                    "kl_rows",
                    format!("row {r} sums {ps:.9} / {qs:.9}, expected 1 within 1e-6"),
                ));
            }
        }
        let terms: Vec<f64> = (0..rows)
            .map(|r| {
                (0..cols)
                    .map(|c| {
                        let (pv, qv) = (tp.at2(r, c), tq.at2(r, c));
                        if pv == 0.0 {
                            0.0
                        } else {
                            pv * (pv / qv).ln()
                        }
                    })
                    .sum()
            })
            .collect();
        let out = self.push(Tensor::scalar(running_mean(&terms)));
        self.ops.push(Op::KlRows {
            p: p.0,
            q: q.0,
            out: out.0,
        });
        Ok(out)
    }

    /// Mean cross-entropy of logit rows against integer targets.
    pub fn ce_rows(&mut self, x: Var, targets: &[usize]) -> Result<Var> {
        self.check("ce_rows", x)?;
        let tx = &self.nodes[x.0].value;
        if tx.rank() != 2 || tx.shape()[0] != targets.len() {
            return Err(Error::shape(
                "ce_rows",
                format!("{} targets for shape {:?}", targets.len(), tx.shape()),
            ));
        }
        let (rows, cols) = (tx.shape()[0], tx.shape()[1]);
        if let Some(&t) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::shape(
                "ce_rows",
                format!("target {t} out of range for {cols} classes"),
            ));
        }
        tx.check_finite("ce_rows")?;
        let terms: Vec<f64> = (0..rows)
            .map(|r| {
                let row = tx.row(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - (row[targets[r]] - m)
            })
            .collect();
        let out = self.push(Tensor::scalar(running_mean(&terms)));
        self.ops.push(Op::CeRows {
            x: x.0,
            out: out.0,
            targets: targets.to_vec(),
        });
        Ok(out)
    }

    /// Seeds the cotangent of the scalar `loss` and sweeps the tape in reverse.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check("backward", loss)?;
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!(
                    "loss must be scalar, got {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            ));
        }
        for node in self.nodes.iter_mut() {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..self.ops.len()).rev() {
            self.backward_op(idx);
        }
        Ok(())
    }

    fn take_out_grad(&self, out: usize) -> Option<Vec<f64>> {
        self.nodes[out].grad.clone()
    }

    fn grad_slot(&mut self, id: usize) -> &mut Vec<f64> {
        let numel = self.nodes[id].value.numel();
        self.nodes[id].grad.get_or_insert_with(|| vec![0.0; numel])
    }

    fn backward_op(&mut self, idx: usize) {
        // Ops are split into (read saved data, compute contributions) then
        // (accumulate), to satisfy the borrow checker without cloning tensors.
        macro_rules! out_grad {
            ($out:expr) => {
                match self.take_out_grad($out) {
                    Some(g) => g,
                    None => return,
                }
            };
        }
        match &self.ops[idx] {
            &Op::Matmul { a, b, out } => {
                let g = out_grad!(out);
                let (n, k) = (self.nodes[a].value.shape()[0], self.nodes[a].value.shape()[1]);
                let m = self.nodes[b].value.shape()[1];
                let mut da = vec![0.0; n * k];
                let mut db = vec![0.0; k * m];
                {
                    let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
                    for i in 0..n {
                        for j in 0..m {
                            let gv = g[i * m + j];
                            for p in 0..k {
                                da[i * k + p] += gv * tb.at2(p, j);
                                db[p * m + j] += gv * ta.at2(i, p);
                            }
                        }
                    }
                }
                accumulate(self.grad_slot(a), &da);
                accumulate(self.grad_slot(b), &db);
            }
            &Op::MatmulNT { a, b, out } => {
                let g = out_grad!(out);
                let (n, k) = (self.nodes[a].value.shape()[0], self.nodes[a].value.shape()[1]);
                let m = self.nodes[b].value.shape()[0];
                let mut da = vec![0.0; n * k];
                let mut db = vec![0.0; m * k];
                {
                    let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
                    for i in 0..n {
                        for j in 0..m {
                            let gv = g[i * m + j];
                            for p in 0..k {
                                da[i * k + p] += gv * tb.at2(j, p);
                                db[j * k + p] += gv * ta.at2(i, p);
                            }
                        }
                    }
                }
                accumulate(self.grad_slot(a), &da);
                accumulate(self.grad_slot(b), &db);
            }
            &Op::BatchedMatvec { t, v, out } => {
                let g = out_grad!(out);
                let (n, p, d) = {
                    let s = self.nodes[t].value.shape();
                    (s[0], s[1], s[2])
                };
                let mut dt = vec![0.0; n * p * d];
                let mut dv = vec![0.0; n * d];
                {
                    let (tt, tv) = (&self.nodes[t].value, &self.nodes[v].value);
                    for i in 0..n {
                        for q in 0..p {
                            let gv = g[i * p + q];
                            for m in 0..d {
                                dt[(i * p + q) * d + m] += gv * tv.at2(i, m);
                                dv[i * d + m] += gv * tt.at3(i, q, m);
                            }
                        }
                    }
                }
                accumulate(self.grad_slot(t), &dt);
                accumulate(self.grad_slot(v), &dv);
            }
            &Op::HadamardScale { h, ms, out } => {
                let g = out_grad!(out);
                let (p, d) = {
                    let s = self.nodes[h].value.shape();
                    (s[0], s[1])
                };
                let n = self.nodes[ms].value.shape()[0];
                let mut dh = vec![0.0; p * d];
                let mut dms = vec![0.0; n * p];
                {
                    let (th, tm) = (&self.nodes[h].value, &self.nodes[ms].value);
                    for i in 0..n {
                        for q in 0..p {
                            let s = tm.at2(i, q);
                            for m in 0..d {
                                let gv = g[(i * p + q) * d + m];
                                dh[q * d + m] += gv * s;
                                dms[i * p + q] += gv * th.at2(q, m);
                            }
                        }
                    }
                }
                accumulate(self.grad_slot(h), &dh);
                accumulate(self.grad_slot(ms), &dms);
            }
            &Op::Softmax { x, out, group } => {
                let g = out_grad!(out);
                let numel = self.nodes[out].value.numel();
                let mut dx = vec![0.0; numel];
                {
                    let y = self.nodes[out].value.data();
                    for start in (0..numel).step_by(group) {
                        let end = start + group;
                        let dot: f64 = (start..end).map(|i| g[i] * y[i]).sum();
                        for i in start..end {
                            dx[i] = y[i] * (g[i] - dot);
                        }
                    }
                }
                accumulate(self.grad_slot(x), &dx);
            }
            Op::MaxPoolLast { x, out, argmax } => {
                let (x, out) = (*x, *out);
                let argmax = argmax.clone();
                let g = out_grad!(out);
                let group = *self.nodes[x].value.shape().last().expect("non-empty");
                let mut dx = vec![0.0; self.nodes[x].value.numel()];
                for (r, &am) in argmax.iter().enumerate() {
                    dx[r * group + am] += g[r];
                }
                accumulate(self.grad_slot(x), &dx);
            }
            &Op::BroadcastRepeat { x, out, reps } => {
                let g = out_grad!(out);
                let n = self.nodes[x].value.numel();
                let mut dx = vec![0.0; n];
                for (i, dv) in dx.iter_mut().enumerate() {
                    for k in 0..reps {
                        *dv += g[i * reps + k];
                    }
                }
                accumulate(self.grad_slot(x), &dx);
            }
            &Op::MeanMiddle { x, out } => {
                let g = out_grad!(out);
                let (n, t, d) = {
                    let s = self.nodes[x].value.shape();
                    (s[0], s[1], s[2])
                };
                let mut dx = vec![0.0; n * t * d];
                for i in 0..n {
                    for s in 0..t {
                        for m in 0..d {
                            dx[(i * t + s) * d + m] = g[i * d + m] / t as f64;
                        }
                    }
                }
                accumulate(self.grad_slot(x), &dx);
            }
            Op::RowNormalize { x, out, norms } => {
                let (x, out) = (*x, *out);
                let norms = norms.clone();
                let g = out_grad!(out);
                let d = *self.nodes[x].value.shape().last().expect("non-empty");
                let mut dx = vec![0.0; self.nodes[x].value.numel()];
                {
                    let y = self.nodes[out].value.data();
                    for (r, &norm) in norms.iter().enumerate() {
                        let (s, e) = (r * d, (r + 1) * d);
                        let dot: f64 = (s..e).map(|i| g[i] * y[i]).sum();
                        for i in s..e {
                            dx[i] = (g[i] - y[i] * dot) / norm;
                        }
                    }
                }
                accumulate(self.grad_slot(x), &dx);
            }
            &Op::Add { a, b, out } => {
                let g = out_grad!(out);
                accumulate(self.grad_slot(a), &g);
                accumulate(self.grad_slot(b), &g);
            }
            &Op::Scale { x, c, out } => {
                let g = out_grad!(out);
                let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                accumulate(self.grad_slot(x), &dx);
            }
            &Op::Reshape { x, out } => {
                let g = out_grad!(out);
                accumulate(self.grad_slot(x), &g);
            }
            Op::WeightedSum { x, out, weights } => {
                let (x, out) = (*x, *out);
                let weights = weights.clone();
                let g = out_grad!(out)[0];
                let dx: Vec<f64> = weights.iter().map(|w| w * g).collect();
                accumulate(self.grad_slot(x), &dx);
            }
            Op::MulMask { x, out, mask } => {
                let (x, out) = (*x, *out);
                let mask = mask.clone();
                let g = out_grad!(out);
                let dx: Vec<f64> = g.iter().zip(&mask).map(|(g, m)| g * m).collect();
                accumulate(self.grad_slot(x), &dx);
            }
            Op::MaskFill { x, out, keep } => {
                let (x, out) = (*x, *out);
                let keep = keep.clone();
                let g = out_grad!(out);
                let dx: Vec<f64> = g
                    .iter()
                    .zip(&keep)
                    .map(|(g, &k)| if k { *g } else { 0.0 })
                    .collect();
                accumulate(self.grad_slot(x), &dx);
            }
            &Op::TempScale { x, log_t, out } => {
                let g = out_grad!(out);
                let lt = self.nodes[log_t].value.data()[0];
                let s = (-lt).exp();
                let mut dlt = 0.0;
                let dx: Vec<f64> = {
                    let y = self.nodes[out].value.data();
                    for (gv, yv) in g.iter().zip(y) {
                        dlt -= gv * yv;
                    }
                    g.iter().map(|gv| gv * s).collect()
                };
                accumulate(self.grad_slot(x), &dx);
                accumulate(self.grad_slot(log_t), &[dlt]);
            }
            &Op::InfoNce { s, out, dir } => {
                let g = out_grad!(out)[0];
                let n = self.nodes[s].value.shape()[0];
                let mut ds = vec![0.0; n * n];
                {
                    let ts = &self.nodes[s].value;
                    let (row_w, col_w) = match dir {
                        InfoNceDirection::Row => (1.0, 0.0),
                        InfoNceDirection::Column => (0.0, 1.0),
                        InfoNceDirection::Symmetric => (0.5, 0.5),
                    };
                    if row_w != 0.0 {
                        for i in 0..n {
                            let mut p: Vec<f64> = (0..n).map(|j| ts.at2(i, j)).collect();
                            softmax_group(&mut p);
                            for j in 0..n {
                                let delta = if i == j { 1.0 } else { 0.0 };
                                ds[i * n + j] += g * row_w * (p[j] - delta) / n as f64;
                            }
                        }
                    }
                    if col_w != 0.0 {
                        for j in 0..n {
                            let mut p: Vec<f64> = (0..n).map(|i| ts.at2(i, j)).collect();
                            softmax_group(&mut p);
                            for i in 0..n {
                                let delta = if i == j { 1.0 } else { 0.0 };
                                ds[i * n + j] += g * col_w * (p[i] - delta) / n as f64;
                            }
                        }
                    }
                }
                accumulate(self.grad_slot(s), &ds);
            }
            &Op::KlRows { p, q, out } => {
                let g = out_grad!(out)[0];
                let (rows, cols) = {
                    let s = self.nodes[p].value.shape();
                    (s[0], s[1])
                };
                let mut dp = vec![0.0; rows * cols];
                let mut dq = vec![0.0; rows * cols];
                {
                    let (tp, tq) = (&self.nodes[p].value, &self.nodes[q].value);
                    let inv_r = 1.0 / rows as f64;
                    for r in 0..rows {
                        for c in 0..cols {
                            let (pv, qv) = (tp.at2(r, c), tq.at2(r, c));
                            if pv > 0.0 {
                                dp[r * cols + c] = g * inv_r * ((pv / qv).ln() + 1.0);
                            }
                            dq[r * cols + c] = -g * inv_r * (pv / qv);
                        }
                    }
                }
                accumulate(self.grad_slot(p), &dp);
                accumulate(self.grad_slot(q), &dq);
            }
            Op::CeRows { x, out, targets } => {
                let (x, out) = (*x, *out);
                let targets = targets.clone();
                let g = out_grad!(out)[0];
                let (rows, cols) = {
                    let s = self.nodes[x].value.shape();
                    (s[0], s[1])
                };
                let mut dx = vec![0.0; rows * cols];
                {
                    let tx = &self.nodes[x].value;
                    let inv_r = 1.0 / rows as f64;
                    for r in 0..rows {
                        let mut p: Vec<f64> = tx.row(r).to_vec();
                        softmax_group(&mut p);
                        for c in 0..cols {
                            let delta = if c == targets[r] { 1.0 } else { 0.0 };
                            dx[r * cols + c] = g * inv_r * (p[c] - delta);
                        }
                    }
                }
                accumulate(self.grad_slot(x), &dx);
            }
        }
    }
}

fn accumulate(slot: &mut [f64], contrib: &[f64]) {
    for (s, c) in slot.iter_mut().zip(contrib) {
        *s += c;
    }
}

/// Default step for finite-difference probes.
pub const FD_STEP: f64 = 1e-6;
/// Default relative-error tolerance for gradient checks.
pub const GRAD_TOL: f64 = 1e-5;

/// Compares the tape gradient of `f` at `x` against central finite
/// differences with step `h`. Relative error uses the denominator
/// `max(|g|, |g_fd|, 1e-8)`. Returns the max relative error, or an error
/// when it exceeds `tol` or any evaluation is non-finite.
pub fn grad_check<F>(name: &str, x: &Tensor, h: f64, tol: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::shape(
            "grad_check",
            format!("probe must produce a scalar, got {:?}", tape.value(out).shape()),
        ));
    }
    tape.value(out).check_finite("grad_check")?;
    tape.backward(out)?;
    let analytic = tape
        .grad(v)
        .ok_or_else(|| Error::numeric("grad_check", "no gradient reached the probed input"))?
        .to_vec();

    let eval = |data: Vec<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.input(Tensor::new(x.shape().to_vec(), data)?);
        let out = f(&mut t, v)?;
        let val = t.value(out).item()?;
        if !val.is_finite() {
            return Err(Error::numeric("grad_check", format!("non-finite probe value {val}")));
        }
        Ok(val)
    };

    let mut max_rel = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.data().to_vec();
        plus[i] += h;
        let mut minus = x.data().to_vec();
        minus[i] -= h;
        let g_fd = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let g = analytic[i];
        let rel = (g - g_fd).abs() / g.abs().max(g_fd.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    if max_rel > tol {
        return Err(Error::GradCheck {
            op: name.to_string(),
            max_rel_err: max_rel,
            tol,
        });
    }
    Ok(max_rel)
}

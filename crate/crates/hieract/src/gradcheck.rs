//! Finite-difference audit of every differentiable operation plus three
//! end-to-end loss compositions, runnable from the CLI.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::Serialize;

use crate::autodiff::{grad_check, InfoNceDirection, SoftmaxAxes, Tape, Var, FD_STEP, GRAD_TOL};
use crate::error::{Error, Result};
use crate::hier::{self, HierOptions};
use crate::objective::{self, KlDirection, ObjectiveOptions};
use crate::tensor::Tensor;

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, Serialize)]
pub struct OpCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

fn randn(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| rand_distr::StandardNormal.sample(rng))
        .collect();
    Tensor::new(shape, data).expect("fixture shape")
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let raw = randn(rng, vec![rows, cols]);
    crate::encoding::l2_normalize_rows(&raw).expect("fixture rows")
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let w: f64 = rand_distr::StandardNormal.sample(rng);
            0.2 + w * 0.1
        })
        .collect()
}

type Check = Box<dyn FnOnce() -> Result<f64>>;

fn op_checks() -> Vec<(&'static str, Check)> {
    let mut list: Vec<(&'static str, Check)> = Vec::new();
    let mut add = |name: &'static str, f: Check| list.push((name, f));

    add(
        "matmul_lhs",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(101);
            let a = randn(&mut rng, vec![3, 4]);
            let b = randn(&mut rng, vec![4, 2]);
            let w = weights(&mut rng, 6);
            grad_check("matmul_lhs", &a, FD_STEP, GRAD_TOL, move |t, v| {
                let vb = t.input(b.clone());
                let out = t.matmul(v, vb)?;
                t.weighted_sum(out, &w)
            })
        }),
    );
    add(
        "matmul_rhs",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(102);
            let a = randn(&mut rng, vec![3, 4]);
            let b = randn(&mut rng, vec![4, 2]);
            let w = weights(&mut rng, 6);
            grad_check("matmul_rhs", &b, FD_STEP, GRAD_TOL, move |t, v| {
                let va = t.input(a.clone());
                let out = t.matmul(va, v)?;
                t.weighted_sum(out, &w)
            })
        }),
    );
    add(
        "matmul_nt_lhs",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(103);
            let a = randn(&mut rng, vec![3, 5]);
            let b = randn(&mut rng, vec![4, 5]);
            let w = weights(&mut rng, 12);
            grad_check("matmul_nt_lhs", &a, FD_STEP, GRAD_TOL, move |t, v| {
                let vb = t.input(b.clone());
                let out = t.matmul_nt(v, vb)?;
                t.weighted_sum(out, &w)
            })
        }),
    );
    add(
        "matmul_nt_rhs",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(104);
            let a = randn(&mut rng, vec![3, 5]);
            let b = randn(&mut rng, vec![4, 5]);
            let w = weights(&mut rng, 12);
            grad_check("matmul_nt_rhs", &b, FD_STEP, GRAD_TOL, move |t, v| {
                let va = t.input(a.clone());
                let out = t.matmul_nt(va, v)?;
                t.weighted_sum(out, &w)
            })
        }),
    );
    add(
        "batched_matvec_table",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(105);
            let table = randn(&mut rng, vec![2, 3, 4]);
            let vecs = randn(&mut rng, vec![2, 4]);
            let w = weights(&mut rng, 6);
            grad_check("batched_matvec_table", &table, FD_STEP, GRAD_TOL, move |t, v| {
                let inp = t.input(vecs.clone());
                let out = t.batched_matvec(v, inp)?;
                t.weighted_sum(out, &w)
            })
        }),
    );
    add(
        "batched_matvec_vectors",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(106);
            let table = randn(&mut rng, vec![2, 3, 4]);
            let vecs = randn(&mut rng, vec![2, 4]);
            let w = weights(&mut rng, 6);
            grad_check("batched_matvec_vectors", &vecs, FD_STEP, GRAD_TOL, move |t, v| {
                let inp = t.input(table.clone());
                let out = t.batched_matvec(inp, v)?;
                t.weighted_sum(out, &w)
            })
        }),
    );
    add(
        "hadamard_scale_table",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(107);
            let h = randn(&mut rng, vec![3, 4]);
            let ms = randn(&mut rng, vec![2, 3]);
            let w = weights(&mut rng, 24);
            grad_check("hadamard_scale_table", &h, FD_STEP, GRAD_TOL, move |t, v| {
                let m = t.input(ms.clone());
                let out = t.hadamard_scale(v, m)?;
                t.weighted_sum(out, &w)
            })
        }),
    );
    add(
        "hadamard_scale_scales",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(108);
            let h = randn(&mut rng, vec![3, 4]);
            let ms = randn(&mut rng, vec![2, 3]);
            let w = weights(&mut rng, 24);
            grad_check("hadamard_scale_scales", &ms, FD_STEP, GRAD_TOL, move |t, v| {
                let hh = t.input(h.clone());
                let out = t.hadamard_scale(hh, v)?;
                t.weighted_sum(out, &w)
            })
        }),
    );
    add(
        "softmax_last",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(109);
            let x = randn(&mut rng, vec![2, 3, 4]);
            let w = weights(&mut rng, 24);
            grad_check("softmax_last", &x, FD_STEP, GRAD_TOL, move |t, v| {
                let y = t.softmax(v, SoftmaxAxes::Last)?;
                t.weighted_sum(y, &w)
            })
        }),
    );
    add(
        "softmax_flat_last_two",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(110);
            let x = randn(&mut rng, vec![2, 3, 4]);
            let w = weights(&mut rng, 24);
            grad_check("softmax_flat_last_two", &x, FD_STEP, GRAD_TOL, move |t, v| {
                let y = t.softmax(v, SoftmaxAxes::FlatLastTwo)?;
                t.weighted_sum(y, &w)
            })
        }),
    );
    add(
        "max_pool_last",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(111);
            let x = randn(&mut rng, vec![2, 3, 4]);
            let w = weights(&mut rng, 6);
            grad_check("max_pool_last", &x, FD_STEP, GRAD_TOL, move |t, v| {
                let (y, _) = t.max_pool_last(v)?;
                t.weighted_sum(y, &w)
            })
        }),
    );
    add(
        "broadcast_repeat",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(112);
            let x = randn(&mut rng, vec![2, 3]);
            let w = weights(&mut rng, 18);
            grad_check("broadcast_repeat", &x, FD_STEP, GRAD_TOL, move |t, v| {
                let y = t.broadcast_repeat(v, 3)?;
                t.weighted_sum(y, &w)
            })
        }),
    );
    add(
        "mean_middle",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(113);
            let x = randn(&mut rng, vec![2, 3, 4]);
            let w = weights(&mut rng, 8);
            grad_check("mean_middle", &x, FD_STEP, GRAD_TOL, move |t, v| {
                let y = t.mean_middle(v)?;
                t.weighted_sum(y, &w)
            })
        }),
    );
    add(
        "row_normalize",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(114);
            let x = randn(&mut rng, vec![3, 4]);
            let w = weights(&mut rng, 12);
            grad_check("row_normalize", &x, FD_STEP, GRAD_TOL, move |t, v| {
                let y = t.row_normalize(v)?;
                t.weighted_sum(y, &w)
            })
        }),
    );
    add(
        "reshape",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(115);
            let x = randn(&mut rng, vec![2, 6]);
            let w = weights(&mut rng, 12);
            grad_check("reshape", &x, FD_STEP, GRAD_TOL, move |t, v| {
                let y = t.reshape(v, vec![2, 3, 2])?;
                t.weighted_sum(y, &w)
            })
        }),
    );
    add(
        "add",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(116);
            let a = randn(&mut rng, vec![3, 4]);
            let b = randn(&mut rng, vec![3, 4]);
            let w = weights(&mut rng, 12);
            grad_check("add", &a, FD_STEP, GRAD_TOL, move |t, v| {
                let vb = t.input(b.clone());
                let y = t.add(v, vb)?;
                t.weighted_sum(y, &w)
            })
        }),
    );
    add(
        "scale",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(117);
            let x = randn(&mut rng, vec![3, 4]);
            let w = weights(&mut rng, 12);
            grad_check("scale", &x, FD_STEP, GRAD_TOL, move |t, v| {
                let y = t.scale(v, -0.7)?;
                t.weighted_sum(y, &w)
            })
        }),
    );
    add(
        "weighted_sum",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(118);
            let x = randn(&mut rng, vec![3, 4]);
            let w = weights(&mut rng, 12);
            grad_check("weighted_sum", &x, FD_STEP, GRAD_TOL, move |t, v| {
                t.weighted_sum(v, &w)
            })
        }),
    );
    add(
        "mul_mask",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(119);
            let x = randn(&mut rng, vec![2, 3, 4]);
            let mask = Tensor::new(
                vec![2, 3, 4],
                (0..24).map(|i| if i % 3 == 1 { 0.0 } else { 1.0 }).collect(),
            )
            .expect("mask");
            let w = weights(&mut rng, 24);
            grad_check("mul_mask", &x, FD_STEP, GRAD_TOL, move |t, v| {
                let y = t.mul_mask(v, &mask)?;
                t.weighted_sum(y, &w)
            })
        }),
    );
    add(
        "mask_fill",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(120);
            let x = randn(&mut rng, vec![2, 3, 4]);
            let keep: Vec<bool> = (0..24).map(|i| i % 4 != 2).collect();
            let w = weights(&mut rng, 24);
            grad_check("mask_fill", &x, FD_STEP, GRAD_TOL, move |t, v| {
                let y = t.mask_fill(v, &keep, -3.0)?;
                t.weighted_sum(y, &w)
            })
        }),
    );
    add(
        "temp_scale_input",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(121);
            let x = randn(&mut rng, vec![3, 3]);
            let w = weights(&mut rng, 9);
            grad_check("temp_scale_input", &x, FD_STEP, GRAD_TOL, move |t, v| {
                let lt = t.input(Tensor::scalar(0.3));
                let y = t.temp_scale(v, lt)?;
                t.weighted_sum(y, &w)
            })
        }),
    );
    add(
        "temp_scale_temperature",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(122);
            let x = randn(&mut rng, vec![3, 3]);
            let w = weights(&mut rng, 9);
            let lt = Tensor::scalar(-0.4);
            grad_check("temp_scale_temperature", &lt, FD_STEP, GRAD_TOL, move |t, v| {
                let vx = t.input(x.clone());
                let y = t.temp_scale(vx, v)?;
                t.weighted_sum(y, &w)
            })
        }),
    );
    add(
        "info_nce_row",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            let s = randn(&mut rng, vec![5, 5]);
            grad_check("info_nce_row", &s, FD_STEP, GRAD_TOL, move |t, v| {
                t.info_nce(v, InfoNceDirection::Row)
            })
        }),
    );
    add(
        "info_nce_column",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(124);
            let s = randn(&mut rng, vec![5, 5]);
            grad_check("info_nce_column", &s, FD_STEP, GRAD_TOL, move |t, v| {
                t.info_nce(v, InfoNceDirection::Column)
            })
        }),
    );
    add(
        "info_nce_symmetric",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(125);
            let s = randn(&mut rng, vec![5, 5]);
            grad_check("info_nce_symmetric", &s, FD_STEP, GRAD_TOL, move |t, v| {
                t.info_nce(v, InfoNceDirection::Symmetric)
            })
        }),
    );
    // The simplex arguments are produced inside the closure so finite
    // differences never hand `kl_rows` an unnormalized row.
    add(
        "kl_rows_beliefs",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(126);
            let logits = randn(&mut rng, vec![4, 5]);
            let q_logits = randn(&mut rng, vec![4, 5]);
            grad_check("kl_rows_beliefs", &logits, FD_STEP, GRAD_TOL, move |t, v| {
                let p = t.softmax(v, SoftmaxAxes::Last)?;
                let ql = t.input(q_logits.clone());
                let q = t.softmax(ql, SoftmaxAxes::Last)?;
                t.kl_rows(p, q)
            })
        }),
    );
    add(
        "kl_rows_targets",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(127);
            let logits = randn(&mut rng, vec![4, 5]);
            let q_logits = randn(&mut rng, vec![4, 5]);
            grad_check("kl_rows_targets", &q_logits, FD_STEP, GRAD_TOL, move |t, v| {
                let pl = t.input(logits.clone());
                let p = t.softmax(pl, SoftmaxAxes::Last)?;
                let q = t.softmax(v, SoftmaxAxes::Last)?;
                t.kl_rows(p, q)
            })
        }),
    );
    add(
        "kl_rows_allow_zero",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(128);
            let p = Tensor::new(
                vec![3, 4],
                vec![0.0, 0.5, 0.25, 0.25, 0.125, 0.0, 0.375, 0.5, 0.75, 0.125, 0.0, 0.125],
            )
            .expect("fixture");
            let q_logits = randn(&mut rng, vec![3, 4]);
            grad_check("kl_rows_allow_zero", &q_logits, FD_STEP, GRAD_TOL, move |t, v| {
                let vp = t.input(p.clone());
                let q = t.softmax(v, SoftmaxAxes::Last)?;
                t.kl_rows_allow_zero(vp, q)
            })
        }),
    );
    add(
        "ce_rows",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(129);
            let x = randn(&mut rng, vec![4, 5]);
            let targets = vec![0, 2, 4, 1];
            grad_check("ce_rows", &x, FD_STEP, GRAD_TOL, move |t, v| {
                t.ce_rows(v, &targets)
            })
        }),
    );
    list
}

struct CompositionFixture {
    h_v_raw: Tensor,
    h_a: Tensor,
    h_c1: Tensor,
    h_c2_flat: Tensor,
    p_v: Tensor,
    labels: Vec<(usize, usize)>,
}

fn composition_fixture(seed: u64) -> CompositionFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, j, k, d) = (5, 3, 3, 6);
    CompositionFixture {
        h_v_raw: unit_rows(&mut rng, n, d),
        h_a: unit_rows(&mut rng, n, d),
        h_c1: unit_rows(&mut rng, j, d),
        h_c2_flat: unit_rows(&mut rng, j * k, d),
        p_v: {
            let noise = randn(&mut rng, vec![d, d]);
            let mut data = noise.data().to_vec();
            for i in 0..d {
                data[i * d + i] = data[i * d + i] * 0.1 + 1.0;
            }
            for v in data.iter_mut() {
                *v *= 0.6;
            }
            Tensor::new(vec![d, d], data).expect("fixture")
        },
        labels: vec![(0, 1), (2, 0), (1, 2), (0, 0), (2, 2)],
    }
}

/// Builds the projected video tower and the fused level similarities the
/// hierarchical compositions share. Returns `(fused_c1, fused_c2, h_v)`.
fn fused_sims(tape: &mut Tape, fx: &CompositionFixture, p_v: Var) -> Result<(Var, Var, Var)> {
    let raw = tape.input(fx.h_v_raw.clone());
    let mapped = tape.matmul(raw, p_v)?;
    let h_v = tape.row_normalize(mapped)?;
    let h_a = tape.input(fx.h_a.clone());
    let h_c1 = tape.input(fx.h_c1.clone());
    let h_c2 = tape.input(fx.h_c2_flat.clone());
    let (n, j, k) = (5, 3, 3);

    let sv1 = tape.matmul_nt(h_v, h_c1)?;
    let sa1 = tape.matmul_nt(h_a, h_c1)?;
    let sum1 = tape.add(sv1, sa1)?;
    let fused_c1 = tape.scale(sum1, 0.5)?;
    let sv2 = tape.matmul_nt(h_v, h_c2)?;
    let sa2 = tape.matmul_nt(h_a, h_c2)?;
    let sum2 = tape.add(sv2, sa2)?;
    let half2 = tape.scale(sum2, 0.5)?;
    let fused_c2 = tape.reshape(half2, vec![n, j, k])?;
    Ok((fused_c1, fused_c2, h_v))
}

fn composition_checks() -> Vec<(&'static str, Check)> {
    let mut list: Vec<(&'static str, Check)> = Vec::new();

    list.push((
        "composition_cross_contrast",
        Box::new(|| {
            let fx = composition_fixture(200);
            let probe = fx.p_v.clone();
            grad_check(
                "composition_cross_contrast",
                &probe,
                FD_STEP,
                GRAD_TOL,
                move |t, v| {
                    let raw = t.input(fx.h_v_raw.clone());
                    let mapped = t.matmul(raw, v)?;
                    let h_v = t.row_normalize(mapped)?;
                    let h_a = t.input(fx.h_a.clone());
                    let s_va = t.matmul_nt(h_v, h_a)?;
                    let lt = t.input(Tensor::scalar(0.2));
                    let logits = t.temp_scale(s_va, lt)?;
                    t.info_nce(logits, InfoNceDirection::Symmetric)
                },
            )
        }),
    ));
    list.push((
        "composition_item_loss_via_s2i",
        Box::new(|| {
            let fx = composition_fixture(201);
            let probe = fx.p_v.clone();
            grad_check(
                "composition_item_loss_via_s2i",
                &probe,
                FD_STEP,
                GRAD_TOL,
                move |t, v| {
                    let (fused_c1, fused_c2, h_v) = fused_sims(t, &fx, v)?;
                    let h_c1 = t.input(fx.h_c1.clone());
                    let out = hier::s2i(t, fused_c1, fused_c2, h_c1, h_v)?;
                    let flat = t.softmax(fused_c2, SoftmaxAxes::FlatLastTwo)?;
                    let (l1, _) = objective::hier_losses(
                        t,
                        out.s_hat_c1,
                        flat,
                        &fx.labels,
                        ObjectiveOptions {
                            kl_direction: KlDirection::PredTarget,
                            hard_targets: false,
                            c2_axes: SoftmaxAxes::FlatLastTwo,
                        },
                    )?;
                    Ok(l1)
                },
            )
        }),
    ));
    list.push((
        "composition_score_loss_via_i2s_filter",
        Box::new(|| {
            let fx = composition_fixture(202);
            let probe = fx.p_v.clone();
            grad_check(
                "composition_score_loss_via_i2s_filter",
                &probe,
                FD_STEP,
                GRAD_TOL,
                move |t, v| {
                    let (fused_c1, fused_c2, h_v) = fused_sims(t, &fx, v)?;
                    let h_c1 = t.input(fx.h_c1.clone());
                    let h_c2 = t.input(fx.h_c2_flat.clone());
                    let out = hier::hier_forward(
                        t,
                        fused_c1,
                        fused_c2,
                        h_c1,
                        h_c2,
                        h_v,
                        HierOptions::default(),
                    )?;
                    let (_, l2) = objective::hier_losses(
                        t,
                        out.s2i.s_hat_c1,
                        out.filtered_c2,
                        &fx.labels,
                        ObjectiveOptions {
                            kl_direction: KlDirection::PredTarget,
                            hard_targets: false,
                            c2_axes: SoftmaxAxes::FlatLastTwo,
                        },
                    )?;
                    Ok(l2)
                },
            )
        }),
    ));
    list
}

/// Runs the whole audit. Ordinary errors (broken fixtures) propagate; a
/// tolerance breach becomes a failed row instead.
pub fn run_suite() -> Result<Vec<OpCheck>> {
    let mut rows = Vec::new();
    for (name, check) in op_checks().into_iter().chain(composition_checks()) {
        let row = match check() {
            Ok(err) => OpCheck {
                name: name.to_string(),
                max_rel_err: err,
                tol: GRAD_TOL,
                passed: true,
            },
            Err(Error::GradCheck { max_rel_err, tol, .. }) => OpCheck {
                name: name.to_string(),
                max_rel_err,
                tol,
                passed: false,
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    Ok(rows)
}

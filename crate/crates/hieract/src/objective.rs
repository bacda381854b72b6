//! Training objectives: level-wise distribution matching against label
//! targets, the cross-entropy ablation, and the weighted total.

use serde::{Deserialize, Serialize};

use crate::autodiff::{SoftmaxAxes, Tape, Var};
use crate::error::{Error, Result};
use crate::taxonomy::SCORES_PER_ITEM;
use crate::tensor::Tensor;

/// Which side of the divergence holds the model's beliefs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(belief || target)`.
    PredTarget,
    /// `KL(target || belief)`.
    TargetPred,
}

/// Target shaping and divergence options for [`hier_losses`].
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveOptions {
    pub kl_direction: KlDirection,
    /// Use the raw one-hot rows as targets instead of their softmax.
    pub hard_targets: bool,
    /// Leaf normalization span; must match the span used by the forward pass.
    pub c2_axes: SoftmaxAxes,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        ObjectiveOptions {
            kl_direction: KlDirection::PredTarget,
            hard_targets: false,
            c2_axes: SoftmaxAxes::FlatLastTwo,
        }
    }
}

impl ObjectiveOptions {
    /// Rejects combinations whose divergence is undefined (infinite).
    pub fn validate(&self) -> Result<()> {
        if self.hard_targets && self.kl_direction == KlDirection::PredTarget {
            return Err(Error::Config(
                "hard targets put zero mass where beliefs are positive; \
                 KL(belief || target) diverges, use the target-first direction"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Binary indicator tables for labels `(item, score)`:
/// `(n,J)` item targets and `(n,J,3)` leaf targets.
pub fn one_hot_targets(
    labels: &[(usize, usize)],
    num_items: usize,
) -> Result<(Tensor, Tensor)> {
    if labels.is_empty() {
        return Err(Error::Data("no labels to build targets from".into()));
    }
    let n = labels.len();
    let mut g1 = vec![0.0; n * num_items];
    let mut g2 = vec![0.0; n * num_items * SCORES_PER_ITEM];
    for (i, &(item, score)) in labels.iter().enumerate() {
        if item >= num_items || score >= SCORES_PER_ITEM {
            return Err(Error::Data(format!(
                "label ({item},{score}) out of range for {num_items} items at sample {i}"
            )));
        }
        g1[i * num_items + item] = 1.0;
        g2[(i * num_items + item) * SCORES_PER_ITEM + score] = 1.0;
    }
    Ok((
        Tensor::new(vec![n, num_items], g1)?,
        Tensor::new(vec![n, num_items, SCORES_PER_ITEM], g2)?,
    ))
}

fn c2_row_shape(axes: SoftmaxAxes, n: usize, j: usize) -> Vec<usize> {
    match axes {
        SoftmaxAxes::FlatLastTwo => vec![n, j * SCORES_PER_ITEM],
        SoftmaxAxes::Last => vec![n * j, SCORES_PER_ITEM],
    }
}

/// Distribution-matching losses at both levels.
///
/// Beliefs are renormalized with a softmax, targets are either softened
/// one-hots or (under `hard_targets`) the one-hot rows themselves, and each
/// level contributes the mean row-wise KL in the configured direction.
pub fn hier_losses(
    tape: &mut Tape,
    s_hat_c1: Var,
    filtered_c2: Var,
    labels: &[(usize, usize)],
    opts: ObjectiveOptions,
) -> Result<(Var, Var)> {
    opts.validate()?;
    let (n, j) = {
        let s = tape.value(s_hat_c1).shape();
        if s.len() != 2 {
            return Err(Error::shape(
                "hier_losses",
                format!("item beliefs must be rank 2, got {s:?}"),
            ));
        }
        (s[0], s[1])
    };
    if labels.len() != n {
        return Err(Error::Data(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    let (g1, g2) = one_hot_targets(labels, j)?;

    let pred1 = tape.softmax(s_hat_c1, SoftmaxAxes::Last)?;
    let g1v = tape.input(g1);
    let target1 = if opts.hard_targets {
        g1v
    } else {
        tape.softmax(g1v, SoftmaxAxes::Last)?
    };
    let l1 = match opts.kl_direction {
        KlDirection::PredTarget => tape.kl_rows_allow_zero(pred1, target1)?,
        KlDirection::TargetPred => tape.kl_rows_allow_zero(target1, pred1)?,
    };

    let rows = c2_row_shape(opts.c2_axes, n, j);
    let pred2_rows = tape.reshape(filtered_c2, rows.clone())?;
    let pred2 = tape.softmax(pred2_rows, SoftmaxAxes::Last)?;
    let g2v = tape.input(g2);
    let g2_rows = tape.reshape(g2v, rows)?;
    let target2 = if opts.hard_targets {
        g2_rows
    } else {
        tape.softmax(g2_rows, SoftmaxAxes::Last)?
    };
    let l2 = match opts.kl_direction {
        KlDirection::PredTarget => tape.kl_rows_allow_zero(pred2, target2)?,
        KlDirection::TargetPred => tape.kl_rows_allow_zero(target2, pred2)?,
    };
    Ok((l1, l2))
}

/// Cross-entropy replacement for the KL losses: beliefs are treated as
/// logits over items and flat leaves.
pub fn ce_variant(
    tape: &mut Tape,
    s_hat_c1: Var,
    filtered_c2: Var,
    labels: &[(usize, usize)],
) -> Result<(Var, Var)> {
    let (n, j) = {
        let s = tape.value(s_hat_c1).shape();
        (s[0], s[1])
    };
    if labels.len() != n {
        return Err(Error::Data(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    let items: Vec<usize> = labels.iter().map(|&(it, _)| it).collect();
    let leaves: Vec<usize> = labels
        .iter()
        .map(|&(it, sc)| it * SCORES_PER_ITEM + sc)
        .collect();
    let l1 = tape.ce_rows(s_hat_c1, &items)?;
    let flat = tape.reshape(filtered_c2, vec![n, j * SCORES_PER_ITEM])?;
    let l2 = tape.ce_rows(flat, &leaves)?;
    Ok((l1, l2))
}

/// `l_cross + lambda1 * l1 + lambda2 * l2`, omitting a missing cross term.
pub fn total_loss(
    tape: &mut Tape,
    l_cross: Option<Var>,
    l1: Var,
    l2: Var,
    lambda1: f64,
    lambda2: f64,
) -> Result<Var> {
    if !lambda1.is_finite() || !lambda2.is_finite() || lambda1 < 0.0 || lambda2 < 0.0 {
        return Err(Error::Config(format!(
            "loss weights must be finite and non-negative, got {lambda1} and {lambda2}"
        )));
    }
    let w1 = tape.scale(l1, lambda1)?;
    let w2 = tape.scale(l2, lambda2)?;
    let hier = tape.add(w1, w2)?;
    match l_cross {
        Some(lc) => tape.add(lc, hier),
        None => Ok(hier),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::InfoNceDirection;

    #[test]
    fn one_hot_positions_and_ranges() {
        let (g1, g2) = one_hot_targets(&[(1, 2), (0, 0)], 3).unwrap();
        assert_eq!(g1.at2(0, 1), 1.0);
        assert_eq!(g1.at2(1, 0), 1.0);
        assert_eq!(g1.data().iter().sum::<f64>(), 2.0);
        assert_eq!(g2.at3(0, 1, 2), 1.0);
        assert_eq!(g2.at3(1, 0, 0), 1.0);
        assert_eq!(g2.data().iter().sum::<f64>(), 2.0);
        assert!(one_hot_targets(&[(3, 0)], 3).is_err());
        assert!(one_hot_targets(&[(0, 3)], 3).is_err());
        assert!(one_hot_targets(&[], 3).is_err());
    }

    #[test]
    fn softened_one_hot_matches_direct_formula() {
        let mut tape = Tape::new();
        let (g1, _) = one_hot_targets(&[(2, 0)], 4).unwrap();
        let v = tape.input(g1);
        let soft = tape.softmax(v, SoftmaxAxes::Last).unwrap();
        let e = 1.0f64.exp();
        let hot = e / (e + 3.0);
        let cold = 1.0 / (e + 3.0);
        let row = tape.value(soft).row(0);
        for (idx, &p) in row.iter().enumerate() {
            let expect = if idx == 2 { hot } else { cold };
            assert!((p - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_beliefs_give_zero_loss() {
        let labels = vec![(0, 1), (2, 0), (1, 2)];
        let (g1, g2) = one_hot_targets(&labels, 3).unwrap();
        let mut tape = Tape::new();
        let s1 = tape.input(g1);
        let s2 = tape.input(g2);
        let (l1, l2) = hier_losses(&mut tape, s1, s2, &labels, ObjectiveOptions::default()).unwrap();
        assert_eq!(tape.value(l1).item().unwrap(), 0.0);
        assert_eq!(tape.value(l2).item().unwrap(), 0.0);
    }

    #[test]
    fn rejects_diverging_direction_with_hard_targets() {
        let opts = ObjectiveOptions {
            hard_targets: true,
            kl_direction: KlDirection::PredTarget,
            ..ObjectiveOptions::default()
        };
        assert!(opts.validate().is_err());
    }

    #[test]
    fn hard_target_kl_equals_cross_entropy() {
        let labels = vec![(0, 2), (1, 0)];
        let logits1 = Tensor::new(vec![2, 2], vec![0.4, -0.3, 0.1, 0.9]).unwrap();
        let logits2 = Tensor::new(
            vec![2, 2, 3],
            vec![0.3, -0.2, 0.5, 0.0, 0.1, -0.4, 0.2, 0.2, -0.1, 0.6, -0.5, 0.3],
        )
        .unwrap();
        let opts = ObjectiveOptions {
            hard_targets: true,
            kl_direction: KlDirection::TargetPred,
            ..ObjectiveOptions::default()
        };
        let mut tape = Tape::new();
        let s1 = tape.input(logits1.clone());
        let s2 = tape.input(logits2.clone());
        let (l1, l2) = hier_losses(&mut tape, s1, s2, &labels, opts).unwrap();
        let (c1, c2) = {
            let s1 = tape.input(logits1);
            let s2 = tape.input(logits2);
            ce_variant(&mut tape, s1, s2, &labels).unwrap()
        };
        assert!((tape.value(l1).item().unwrap() - tape.value(c1).item().unwrap()).abs() < 1e-12);
        assert!((tape.value(l2).item().unwrap() - tape.value(c2).item().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn total_combines_with_weights() {
        let mut tape = Tape::new();
        let s = tape.input(Tensor::new(vec![2, 2], vec![2.0, -1.0, -1.0, 2.0]).unwrap());
        let lc = tape.info_nce(s, InfoNceDirection::Symmetric).unwrap();
        let l1 = tape.input(Tensor::scalar(0.5));
        let l2 = tape.input(Tensor::scalar(0.25));
        let l1 = tape.scale(l1, 1.0).unwrap();
        let l2 = tape.scale(l2, 1.0).unwrap();
        let total = total_loss(&mut tape, Some(lc), l1, l2, 2.0, 4.0).unwrap();
        let expect = tape.value(lc).item().unwrap() + 2.0 * 0.5 + 4.0 * 0.25;
        assert!((tape.value(total).item().unwrap() - expect).abs() < 1e-15);
        assert!(total_loss(&mut tape, Some(lc), l1, l2, -1.0, 0.0).is_err());
    }

    #[test]
    fn missing_cross_term_is_hier_only() {
        let mut tape = Tape::new();
        let l1 = tape.input(Tensor::scalar(0.5));
        let l2 = tape.input(Tensor::scalar(0.25));
        let total = total_loss(&mut tape, None, l1, l2, 1.0, 1.0).unwrap();
        assert!((tape.value(total).item().unwrap() - 0.75).abs() < 1e-15);
    }
}

//! Similarity surfaces between modalities and taxonomy levels, and the
//! contrastive alignment loss over matched video/annotation pairs.

use crate::autodiff::{InfoNceDirection, Tape, Var};
use crate::error::{Error, Result};

/// Pairwise similarities between per-sample video and annotation vectors:
/// `S[i,j] = h_v[i] . h_a[j]`, shape `(n,n)`. Matched pairs sit on the
/// diagonal.
pub fn cross_modal_similarity(tape: &mut Tape, h_v: Var, h_a: Var) -> Result<Var> {
    let (nv, na) = (tape.value(h_v).shape()[0], tape.value(h_a).shape()[0]);
    if nv != na {
        return Err(Error::shape(
            "cross_modal_similarity",
            format!("{nv} video rows vs {na} annotation rows"),
        ));
    }
    tape.matmul_nt(h_v, h_a)
}

/// Similarities from every sample vector to every class vector of one
/// taxonomy level: `S[i,j] = h[i] . level[j]`, shape `(n, classes)`.
pub fn level_similarity(tape: &mut Tape, h: Var, level: Var) -> Result<Var> {
    tape.matmul_nt(h, level)
}

/// Averages the video-side and annotation-side similarity surfaces.
pub fn fuse_modalities(tape: &mut Tape, s_video: Var, s_text: Var) -> Result<Var> {
    let sum = tape.add(s_video, s_text)?;
    tape.scale(sum, 0.5)
}

/// Contrastive loss over a square cross-modal similarity matrix.
pub fn info_nce(tape: &mut Tape, s: Var, direction: InfoNceDirection) -> Result<Var> {
    tape.info_nce(s, direction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cross_modal_entries_are_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut data = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let v = Tensor::new(vec![3, 4], data(12)).unwrap();
        let a = Tensor::new(vec![3, 4], data(12)).unwrap();
        let mut tape = Tape::new();
        let (vv, va) = (tape.input(v.clone()), tape.input(a.clone()));
        let s = cross_modal_similarity(&mut tape, vv, va).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let direct: f64 = (0..4).map(|m| v.at2(i, m) * a.at2(j, m)).sum();
                assert!((tape.value(s).at2(i, j) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_modal_rejects_unpaired_rows() {
        let mut tape = Tape::new();
        let v = tape.input(Tensor::zeros(vec![3, 4]).unwrap());
        let a = tape.input(Tensor::zeros(vec![2, 4]).unwrap());
        assert!(cross_modal_similarity(&mut tape, v, a).is_err());
    }

    #[test]
    fn fuse_is_elementwise_average() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.input(Tensor::new(vec![2, 2], vec![3.0, 2.0, 1.0, 0.0]).unwrap());
        let f = fuse_modalities(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(f).data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn info_nce_prefers_aligned_diagonal() {
        let mut tape = Tape::new();
        let aligned = tape.input(Tensor::new(vec![2, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap());
        let confused = tape.input(Tensor::new(vec![2, 2], vec![-1.0, 1.0, 1.0, -1.0]).unwrap());
        let la = info_nce(&mut tape, aligned, InfoNceDirection::Symmetric).unwrap();
        let lc = info_nce(&mut tape, confused, InfoNceDirection::Symmetric).unwrap();
        assert!(tape.value(la).item().unwrap() < tape.value(lc).item().unwrap());
    }
}

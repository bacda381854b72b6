//! Accuracy metrics, confusion counts, and the ablation harness.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{Dataset, Splits};
use crate::encoding::ProjectionParams;
use crate::error::{Error, Result};
use crate::hier;
use crate::taxonomy::SCORES_PER_ITEM;
use crate::tensor::Tensor;
use crate::train::{self, ForwardFlags, TrainConfig};

/// Accuracy summary over one evaluation split.
///
/// `c2_top1_independent` scores the flat argmax over all leaves before any
/// filtering; `c2_top1_coherent` requires the predicted parent item to be
/// correct as well, so it can never exceed `c1_top1`. Confusion matrices
/// are `counts[true][predicted]`, items at level one and flat leaves at
/// level two (level-two counts use the coherent prediction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub c1_top1: f64,
    pub c1_top3: f64,
    pub c2_top1_independent: f64,
    pub c2_top1_coherent: f64,
    pub confusion_c1: Vec<Vec<usize>>,
    pub confusion_c2: Vec<Vec<usize>>,
    pub n_eval: usize,
}

/// Fraction of rows whose label ranks among the `k` best scores. Ties rank
/// the lower index first, matching every argmax in the pipeline.
pub fn topk_accuracy(scores: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    if scores.rank() != 2 {
        return Err(Error::shape(
            "topk_accuracy",
            format!("expected a rank-2 score table, got {:?}", scores.shape()),
        ));
    }
    let (n, m) = (scores.shape()[0], scores.shape()[1]);
    if k == 0 || k > m {
        return Err(Error::Config(format!(
            "top-k order {k} outside 1..={m}"
        )));
    }
    if labels.len() != n {
        return Err(Error::Data(format!("{} labels for {n} rows", labels.len())));
    }
    if n == 0 {
        return Err(Error::Data("no rows to score".into()));
    }
    let mut hits = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if label >= m {
            return Err(Error::Data(format!("label {label} out of range at row {i}")));
        }
        let row = scores.row(i);
        let target = row[label];
        // The label is in the top k iff fewer than k entries outrank it,
        // where an entry outranks on higher score or equal score at a
        // lower index.
        let better = row
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > target || (s == target && j < label))
            .count();
        if better < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Fraction of samples whose predicted `(item, score)` pair matches the
/// label exactly. A correct score under the wrong item counts as wrong.
pub fn coherent_c2_accuracy(
    preds: &[(usize, usize)],
    labels: &[(usize, usize)],
) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data("no predictions to score".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Runs the forward pipeline on the given sample indices and scores it.
///
/// Top-3 is reported at level one only (clamped to the item count for tiny
/// taxonomies). The independent level-two metric reads the pre-filter
/// belief surface; the coherent one follows the hierarchy's own parent
/// choice.
pub fn evaluate(
    params: &ProjectionParams,
    ds: &Dataset,
    indices: &[usize],
    flags: ForwardFlags,
) -> Result<MetricsReport> {
    if indices.is_empty() {
        return Err(Error::Data("empty evaluation split".into()));
    }
    ds.validate()?;
    let subset = ds.embeddings.select_samples(indices)?;
    let labels: Vec<(usize, usize)> = indices.iter().map(|&i| ds.labels[i]).collect();
    let j = ds.taxonomy.num_items();
    let leaves = j * SCORES_PER_ITEM;

    let mut tape = Tape::new();
    let m = train::model_vars(&mut tape, &subset, params, false, false)?;
    let surf = train::forward_surfaces(&mut tape, &m, flags, false)?;
    let c1 = tape.value(surf.c1).clone();
    let c2_pre = tape.value(surf.c2_pre).clone();
    let c2_sel = tape.value(surf.c2_loss).clone();

    let item_labels: Vec<usize> = labels.iter().map(|&(it, _)| it).collect();
    let leaf_labels: Vec<usize> = labels
        .iter()
        .map(|&(it, sc)| it * SCORES_PER_ITEM + sc)
        .collect();

    let c1_top1 = topk_accuracy(&c1, &item_labels, 1)?;
    let c1_top3 = topk_accuracy(&c1, &item_labels, 3.min(j))?;
    let flat_preds = hier::predict_flat(&c2_pre)?;
    let independent = flat_preds
        .iter()
        .zip(&leaf_labels)
        .filter(|(p, l)| p == l)
        .count() as f64
        / labels.len() as f64;
    let preds = hier::predict(&c1, &c2_sel)?;
    let coherent = coherent_c2_accuracy(&preds, &labels)?;

    let mut confusion_c1 = vec![vec![0usize; j]; j];
    for (&(item, _), &p) in labels.iter().zip(hier::row_argmax(&c1).iter()) {
        confusion_c1[item][p] += 1;
    }
    let mut confusion_c2 = vec![vec![0usize; leaves]; leaves];
    for (&t, &(pi, ps)) in leaf_labels.iter().zip(preds.iter()) {
        confusion_c2[t][pi * SCORES_PER_ITEM + ps] += 1;
    }

    Ok(MetricsReport {
        c1_top1,
        c1_top3,
        c2_top1_independent: independent,
        c2_top1_coherent: coherent,
        confusion_c1,
        confusion_c2,
        n_eval: labels.len(),
    })
}

/// One trained variant in the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// Marks the variant that reduces to a flat, hierarchy-free classifier.
    pub flat_baseline: bool,
    pub metrics: MetricsReport,
}

type VariantSwitch = fn(&mut TrainConfig);

/// Trains the full model plus the five single-switch variants on identical
/// splits and seeds, scoring each on the test split. Row order is fixed:
/// full, no_cross, no_hier_units (the flat baseline), video_only,
/// text_only, ce_loss.
pub fn run_ablation(ds: &Dataset, splits: &Splits, base: &TrainConfig) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let variants: [(&str, VariantSwitch); 6] = [
        ("full", |_| {}),
        ("no_cross", |c| c.no_cross = true),
        ("no_hier_units", |c| c.no_hier_units = true),
        ("video_only", |c| c.video_only = true),
        ("text_only", |c| c.text_only = true),
        ("ce_loss", |c| c.ce_loss = true),
    ];
    let mut rows = Vec::with_capacity(variants.len());
    for (name, switch) in variants {
        let mut cfg = base.clone();
        switch(&mut cfg);
        log::info!("ablation variant {name}");
        let (params, _) = train::train(ds, splits, &cfg)?;
        let metrics = evaluate(&params, ds, &splits.test, cfg.forward_flags())?;
        rows.push(AblationRow {
            variant: name.to_string(),
            flat_baseline: name == "no_hier_units",
            metrics,
        });
    }
    Ok(rows)
}

/// Column order:
/// `variant,flat_baseline,c1_top1,c1_top3,c2_top1_independent,c2_top1_coherent,n_eval`.
pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.display().to_string(),
        source: e,
    })?;
    w.write_record([
        "variant",
        "flat_baseline",
        "c1_top1",
        "c1_top3",
        "c2_top1_independent",
        "c2_top1_coherent",
        "n_eval",
    ])
    .and_then(|()| {
        for r in rows {
            w.write_record([
                r.variant.clone(),
                r.flat_baseline.to_string(),
                format!("{}", r.metrics.c1_top1),
                format!("{}", r.metrics.c1_top3),
                format!("{}", r.metrics.c2_top1_independent),
                format!("{}", r.metrics.c2_top1_coherent),
                r.metrics.n_eval.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)
    })
    .map_err(|e| Error::Csv {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn save_ablation_json(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let text = serde_json::to_string_pretty(rows).map_err(|e| Error::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, make_splits, SplitMode, SplitSpec, SynthConfig};
    use crate::taxonomy::default_taxonomy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn topk_matches_pinned_cases() {
        let scores = Tensor::from_rows(&[vec![0.1, 0.7, 0.2]]).unwrap();
        assert_eq!(topk_accuracy(&scores, &[1], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&scores, &[0], 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&scores, &[0], 3).unwrap(), 1.0);
        assert!(topk_accuracy(&scores, &[0], 4).is_err());
        assert!(topk_accuracy(&scores, &[0], 0).is_err());
        assert!(topk_accuracy(&scores, &[3], 1).is_err());
    }

    #[test]
    fn topk_breaks_ties_toward_lower_index() {
        let scores = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert_eq!(topk_accuracy(&scores, &[0], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&scores, &[1], 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&scores, &[1], 2).unwrap(), 1.0);
    }

    #[test]
    fn topk_is_monotone_in_k_and_hits_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let n = 10_000;
        let m = 5;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random::<f64>()).collect())
            .collect();
        let scores = Tensor::from_rows(&rows).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let accs: Vec<f64> = (1..=m)
            .map(|k| topk_accuracy(&scores, &labels, k).unwrap())
            .collect();
        for w in accs.windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert!((accs[0] - 0.2).abs() < 0.05, "chance was {}", accs[0]);
        assert_eq!(accs[m - 1], 1.0);
    }

    #[test]
    fn coherent_counts_exact_pairs_only() {
        let labels = vec![(0, 1), (2, 2), (1, 0)];
        assert_eq!(coherent_c2_accuracy(&labels, &labels).unwrap(), 1.0);
        let preds = vec![(0, 1), (1, 2), (1, 1)];
        let acc = coherent_c2_accuracy(&preds, &labels).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-15);
        assert!(coherent_c2_accuracy(&preds[..2], &labels).is_err());
    }

    #[test]
    fn coherent_below_item_accuracy_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let n = 200;
            let labels: Vec<(usize, usize)> = (0..n)
                .map(|_| (rng.random_range(0..4), rng.random_range(0..3)))
                .collect();
            let preds: Vec<(usize, usize)> = (0..n)
                .map(|_| (rng.random_range(0..4), rng.random_range(0..3)))
                .collect();
            let coherent = coherent_c2_accuracy(&preds, &labels).unwrap();
            let item_acc = preds
                .iter()
                .zip(&labels)
                .filter(|((pi, _), (li, _))| pi == li)
                .count() as f64
                / n as f64;
            assert!(coherent <= item_acc + 1e-15);
        }
    }

    #[test]
    fn noiseless_data_scores_perfectly_untrained() {
        let cfg = SynthConfig {
            samples: 48,
            dim: 16,
            noise_sigma: 0.0,
            annotation_noise_sigma: 0.0,
            seed: 4,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg, &default_taxonomy()).unwrap();
        let params = ProjectionParams::init(16, 0, 0.0).unwrap();
        let all: Vec<usize> = (0..48).collect();
        let m = evaluate(&params, &ds, &all, ForwardFlags::default()).unwrap();
        assert_eq!(m.c1_top1, 1.0);
        assert_eq!(m.c1_top3, 1.0);
        assert_eq!(m.c2_top1_independent, 1.0);
        assert_eq!(m.c2_top1_coherent, 1.0);
        assert_eq!(m.n_eval, 48);
        for (t, row) in m.confusion_c1.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                assert_eq!(c, if t == p { 12 } else { 0 });
            }
        }
    }

    #[test]
    fn zero_separation_scores_exact_chance_untrained() {
        let cfg = SynthConfig {
            samples: 48,
            dim: 16,
            item_separation: 0.0,
            score_separation: 0.0,
            seed: 4,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg, &default_taxonomy()).unwrap();
        let params = ProjectionParams::init(16, 0, 0.0).unwrap();
        let all: Vec<usize> = (0..48).collect();
        let m = evaluate(&params, &ds, &all, ForwardFlags::default()).unwrap();
        // Identical class embeddings make every class column equal, so the
        // argmax lands on index 0 for every sample and accuracy collapses
        // to the label-0 frequency: exactly 1/4 and 1/12 on balanced data.
        assert!((m.c1_top1 - 0.25).abs() < 1e-12, "{}", m.c1_top1);
        assert!(
            (m.c2_top1_independent - 1.0 / 12.0).abs() < 1e-12,
            "{}",
            m.c2_top1_independent
        );
        assert!(
            (m.c2_top1_coherent - 1.0 / 12.0).abs() < 1e-12,
            "{}",
            m.c2_top1_coherent
        );
    }

    #[test]
    fn coherent_never_exceeds_item_accuracy_across_flags() {
        let cfg = SynthConfig {
            samples: 60,
            dim: 16,
            noise_sigma: 0.6,
            seed: 9,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg, &default_taxonomy()).unwrap();
        let all: Vec<usize> = (0..60).collect();
        for sigma_seed in 0..5 {
            let params = ProjectionParams::init(16, sigma_seed, 0.3).unwrap();
            for flags in [
                ForwardFlags::default(),
                ForwardFlags {
                    no_hier_units: true,
                    ..ForwardFlags::default()
                },
                ForwardFlags {
                    video_only: true,
                    ..ForwardFlags::default()
                },
                ForwardFlags {
                    strict_mask: true,
                    ..ForwardFlags::default()
                },
            ] {
                let m = evaluate(&params, &ds, &all, flags).unwrap();
                assert!(m.c2_top1_coherent <= m.c1_top1 + 1e-15);
            }
        }
    }

    #[test]
    fn ablation_tables_have_six_deterministic_rows() {
        let cfg = SynthConfig {
            samples: 60,
            dim: 16,
            seed: 12,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg, &default_taxonomy()).unwrap();
        let splits = make_splits(
            &ds.labels,
            4,
            &SplitSpec {
                mode: SplitMode::Full,
                train_frac: 0.6,
                val_frac: 0.0,
                seed: 2,
            },
        )
        .unwrap();
        let base = TrainConfig {
            epochs: 2,
            batch_size: 36,
            warmup_epochs: 1,
            seed: 3,
            ..TrainConfig::default()
        };
        let rows = run_ablation(&ds, &splits, &base).unwrap();
        assert_eq!(rows.len(), 6);
        let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(
            names,
            ["full", "no_cross", "no_hier_units", "video_only", "text_only", "ce_loss"]
        );
        assert!(rows.iter().all(|r| r.flat_baseline == (r.variant == "no_hier_units")));

        let again = run_ablation(&ds, &splits, &base).unwrap();
        assert_eq!(rows, again);

        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("ablation_table.csv");
        let json_path = dir.path().join("ablation_table.json");
        write_ablation_csv(&csv_path, &rows).unwrap();
        save_ablation_json(&json_path, &rows).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("variant,flat_baseline,c1_top1"));
        assert_eq!(text.lines().count(), 7);
        let back: Vec<AblationRow> =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(back, rows);
    }
}

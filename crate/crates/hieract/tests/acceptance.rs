//! Release gate: one test per release criterion. Each test prints a
//! single `criterion N (...): PASS/FAIL` line with its measured numbers
//! (visible under `--nocapture`, or automatically on failure).

use std::process::Command;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use hieract::autodiff::{InfoNceDirection, SoftmaxAxes, Tape};
use hieract::data::{
    generate_synthetic, make_splits, Dataset, SplitMode, SplitSpec, Splits, SynthConfig,
};
use hieract::encoding::ProjectionParams;
use hieract::eval::{evaluate, MetricsReport};
use hieract::fusion;
use hieract::gradcheck::run_suite;
use hieract::hier::{self, HierOptions};
use hieract::taxonomy::{default_taxonomy, SCORES_PER_ITEM};
use hieract::tensor::Tensor;
use hieract::train::{self, train, ForwardFlags, TrainConfig};

type Check = std::result::Result<String, Box<dyn std::error::Error>>;

fn ensure(cond: bool, msg: String) -> std::result::Result<(), Box<dyn std::error::Error>> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Prints the verdict line and panics on failure so the harness records it.
/// A budget of zero means the criterion states no runtime bound.
fn conclude(number: usize, label: &str, start: Instant, budget_s: f64, outcome: Check) {
    let elapsed = start.elapsed().as_secs_f64();
    let outcome = outcome.and_then(|detail| {
        ensure(
            budget_s == 0.0 || elapsed < budget_s,
            format!("runtime {elapsed:.1}s exceeds the {budget_s:.0}s budget"),
        )?;
        Ok(detail)
    });
    match outcome {
        Ok(detail) => println!("criterion {number} ({label}): PASS [{elapsed:.1}s] {detail}"),
        Err(e) => {
            println!("criterion {number} ({label}): FAIL [{elapsed:.1}s] {e}");
            panic!("criterion {number} ({label}): {e}");
        }
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| rand_distr::StandardNormal.sample(rng))
        .collect();
    Tensor::new(shape, data).expect("fixture shape")
}

/// Random interaction-unit inputs of the given dimensions.
struct Fixture {
    h_v: Tensor,
    h_c1: Tensor,
    h_c2_flat: Tensor,
    s_va_c1: Tensor,
    s_va_c2: Tensor,
    n: usize,
    j: usize,
    k: usize,
    d: usize,
}

fn fixture(seed: u64, n: usize, j: usize, k: usize, d: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Fixture {
        h_v: randn(&mut rng, vec![n, d]),
        h_c1: randn(&mut rng, vec![j, d]),
        h_c2_flat: randn(&mut rng, vec![j * k, d]),
        s_va_c1: randn(&mut rng, vec![n, j]),
        s_va_c2: randn(&mut rng, vec![n, j, k]),
        n,
        j,
        k,
        d,
    }
}

fn random_dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    (
        rng.random_range(2..8),
        rng.random_range(2..6),
        rng.random_range(2..5),
        rng.random_range(3..10),
    )
}

fn default_split(seed: u64) -> SplitSpec {
    SplitSpec {
        mode: SplitMode::Full,
        train_frac: 0.7,
        val_frac: 0.1,
        seed,
    }
}

fn dataset_and_splits(synth: &SynthConfig, mode: SplitMode) -> Check2<(Dataset, Splits)> {
    let tax = default_taxonomy();
    let ds = generate_synthetic(synth, &tax)?;
    let spec = SplitSpec {
        mode,
        ..default_split(synth.seed)
    };
    let splits = make_splits(&ds.labels, ds.taxonomy.num_items(), &spec)?;
    Ok((ds, splits))
}

type Check2<T> = std::result::Result<T, Box<dyn std::error::Error>>;

/// Trains with the single shared seed fanned out to data, split and
/// optimizer, then scores the test split, mirroring the CLI wiring.
fn train_and_score(synth: &SynthConfig, mode: SplitMode, cfg: &TrainConfig) -> Check2<MetricsReport> {
    let (ds, splits) = dataset_and_splits(synth, mode)?;
    let (params, _) = train(&ds, &splits, cfg)?;
    Ok(evaluate(&params, &ds, &splits.test, cfg.forward_flags())?)
}

#[test]
fn criterion_1_invariants() {
    let start = Instant::now();
    conclude(1, "invariant suite", start, 10.0, check_invariants());
}

fn check_invariants() -> Check {
    const SIMPLEX_TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(1_000);

    // Belief simplexes, filter mask structure and parent coherence on a
    // spread of random interaction fixtures.
    let fixtures = 20usize;
    for inst in 0..fixtures {
        let (n, j, k, d) = random_dims(&mut rng);
        let fx = fixture(1_100 + inst as u64, n, j, k, d);
        let mut tape = Tape::new();
        let h_v = tape.input(fx.h_v.clone());
        let h_c1 = tape.input(fx.h_c1.clone());
        let h_c2 = tape.input(fx.h_c2_flat.clone());
        let s1 = tape.input(fx.s_va_c1.clone());
        let s2 = tape.input(fx.s_va_c2.clone());
        let axes = if inst % 2 == 0 {
            SoftmaxAxes::FlatLastTwo
        } else {
            SoftmaxAxes::Last
        };
        let out = hier::hier_forward(
            &mut tape,
            s1,
            s2,
            h_c1,
            h_c2,
            h_v,
            HierOptions {
                c2_axes: axes,
                strict_mask: false,
            },
        )?;

        let c1_vals = tape.value(out.s2i.s_hat_c1).clone();
        for (i, row) in c1_vals.data().chunks(j).enumerate() {
            let sum: f64 = row.iter().sum();
            ensure(
                (sum - 1.0).abs() <= SIMPLEX_TOL,
                format!("instance {inst}: item belief row {i} sums to {sum}"),
            )?;
            ensure(
                row.iter().all(|&p| p >= 0.0),
                format!("instance {inst}: negative item belief in row {i}"),
            )?;
        }
        let c2_vals = tape.value(out.i2s.s_hat_c2);
        let group = match axes {
            SoftmaxAxes::FlatLastTwo => j * k,
            SoftmaxAxes::Last => k,
        };
        for (g, chunk) in c2_vals.data().chunks(group).enumerate() {
            let sum: f64 = chunk.iter().sum();
            ensure(
                (sum - 1.0).abs() <= SIMPLEX_TOL,
                format!("instance {inst}: score belief group {g} sums to {sum}"),
            )?;
        }

        ensure(
            out.parents == hier::row_argmax(&c1_vals),
            format!("instance {inst}: filter parents disagree with the item argmax"),
        )?;
        for i in 0..n {
            let mut kept = 0.0;
            for jj in 0..j {
                for kk in 0..k {
                    let m = out.mask.at3(i, jj, kk);
                    ensure(
                        m == 0.0 || m == 1.0,
                        format!("instance {inst}: mask entry {m} at ({i},{jj},{kk}) not binary"),
                    )?;
                    if m == 1.0 {
                        ensure(
                            jj == out.parents[i],
                            format!("instance {inst}: mask keeps ({i},{jj},{kk}) outside parent"),
                        )?;
                        kept += 1.0;
                    }
                }
            }
            ensure(
                kept == k as f64,
                format!("instance {inst}: mask row {i} keeps {kept} entries, wanted {k}"),
            )?;
        }

        let preds = hier::predict(&c1_vals, tape.value(out.filtered_c2))?;
        for (i, &(pi, ps)) in preds.iter().enumerate() {
            ensure(
                pi == out.parents[i],
                format!("instance {inst}: prediction {i} item {pi} vs parent {}", out.parents[i]),
            )?;
            ensure(
                out.mask.at3(i, pi, ps) == 1.0,
                format!("instance {inst}: prediction {i} leaf ({pi},{ps}) escapes the mask"),
            )?;
        }
    }

    // Similarity bounds on the generated corpus: every tower row is unit
    // length, so every similarity is a dot of unit vectors.
    let ds = generate_synthetic(&SynthConfig::default(), &default_taxonomy())?;
    let e = &ds.embeddings;
    let unit = |t: &Tensor, label: &str| -> std::result::Result<(), Box<dyn std::error::Error>> {
        let d = *t.shape().last().unwrap();
        for (r, row) in t.data().chunks(d).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            ensure(
                (norm - 1.0).abs() <= 1e-9,
                format!("{label} row {r} has norm {norm}"),
            )?;
        }
        Ok(())
    };
    unit(e.h_v(), "video tower")?;
    unit(e.h_a(), "annotation tower")?;
    unit(e.h_c1(), "item tower")?;
    unit(&e.h_c2_flat(), "leaf tower")?;
    let mut sim_count = 0usize;
    let mut bound = |a: &Tensor, b: &Tensor| -> std::result::Result<(), Box<dyn std::error::Error>> {
        let d = *a.shape().last().unwrap();
        for ra in a.data().chunks(d) {
            for rb in b.data().chunks(d) {
                let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
                ensure(
                    dot.abs() <= 1.0 + 1e-9,
                    format!("similarity {dot} escapes [-1, 1]"),
                )?;
                sim_count += 1;
            }
        }
        Ok(())
    };
    bound(e.h_v(), e.h_c1())?;
    bound(e.h_v(), &e.h_c2_flat())?;
    bound(e.h_a(), e.h_c1())?;
    bound(e.h_a(), &e.h_c2_flat())?;
    bound(e.h_v(), e.h_a())?;

    // Parent coherence through the deployed forward path as well.
    let params = ProjectionParams::init(e.dim(), 0, TrainConfig::default().init_sigma)?;
    let head: Vec<usize> = (0..48).collect();
    let subset = e.select_samples(&head)?;
    let mut tape = Tape::new();
    let m = train::model_vars(&mut tape, &subset, &params, false, false)?;
    let surf = train::forward_surfaces(&mut tape, &m, ForwardFlags::default(), false)?;
    let c1 = tape.value(surf.c1).clone();
    let preds = hier::predict(&c1, tape.value(surf.c2_loss))?;
    let parents = hier::row_argmax(&c1);
    for (i, &(pi, _)) in preds.iter().enumerate() {
        ensure(
            pi == parents[i],
            format!("pipeline prediction {i} item {pi} vs argmax {}", parents[i]),
        )?;
    }

    // Split disjointness and coverage across every mode.
    let modes = [
        SplitMode::Full,
        SplitMode::FewShot { k: 1 },
        SplitMode::FewShot { k: 2 },
        SplitMode::FewShot { k: 4 },
        SplitMode::ZeroShot,
    ];
    let leaves = ds.taxonomy.num_items() * SCORES_PER_ITEM;
    for &mode in &modes {
        for seed in 0..3u64 {
            let spec = SplitSpec {
                mode,
                ..default_split(seed)
            };
            let sp = make_splits(&ds.labels, ds.taxonomy.num_items(), &spec)?;
            let mut seen = vec![0u32; ds.samples()];
            for idx in sp.train.iter().chain(&sp.val).chain(&sp.test) {
                seen[*idx] += 1;
            }
            ensure(
                seen.iter().all(|&c| c == 1),
                format!("splits under {mode:?} seed {seed} are not a disjoint cover"),
            )?;
            match mode {
                SplitMode::FewShot { k } => {
                    let mut per_class = vec![0usize; leaves];
                    for &idx in &sp.train {
                        let (item, score) = ds.labels[idx];
                        per_class[item * SCORES_PER_ITEM + score] += 1;
                    }
                    ensure(
                        per_class.iter().all(|&c| c == k),
                        format!("few-shot k={k} seed {seed} left an unbalanced train split"),
                    )?;
                }
                SplitMode::ZeroShot => {
                    ensure(
                        sp.train.is_empty(),
                        format!("zero-shot seed {seed} produced training samples"),
                    )?;
                }
                SplitMode::Full => {}
            }
        }
    }

    Ok(format!(
        "{fixtures} interaction fixtures, {sim_count} similarity entries bounded, {} split configurations",
        modes.len() * 3
    ))
}

#[test]
fn criterion_2_gradients() {
    let start = Instant::now();
    conclude(2, "gradient suite", start, 30.0, check_gradients());
}

fn check_gradients() -> Check {
    let rows = run_suite()?;
    ensure(
        rows.len() >= 30,
        format!("only {} finite-difference checks ran", rows.len()),
    )?;
    for name in [
        "composition_cross_contrast",
        "composition_item_loss_via_s2i",
        "composition_score_loss_via_i2s_filter",
    ] {
        ensure(
            rows.iter().any(|r| r.name == name),
            format!("end-to-end check {name} is missing from the suite"),
        )?;
    }
    let mut worst: (f64, &str) = (0.0, "");
    for row in &rows {
        if row.max_rel_err > worst.0 {
            worst = (row.max_rel_err, &row.name);
        }
        ensure(
            row.passed && row.max_rel_err <= row.tol,
            format!("{}: max relative error {:.3e} over {:.0e}", row.name, row.max_rel_err, row.tol),
        )?;
    }
    Ok(format!(
        "{} checks, worst {} at {:.3e} (tol 1e-5, h=1e-6)",
        rows.len(),
        worst.1,
        worst.0
    ))
}

#[test]
fn criterion_3_algebraic_identities() {
    let start = Instant::now();
    conclude(3, "algebraic identities", start, 0.0, check_identities());
}

fn check_identities() -> Check {
    const TOL: f64 = 1e-12;
    let mut dim_rng = ChaCha8Rng::seed_from_u64(3_000);
    let instances = 100usize;
    for inst in 0..instances {
        let (n, j, k, d) = random_dims(&mut dim_rng);
        let fx = fixture(3_100 + inst as u64, n, j, k, d);
        let mut tape = Tape::new();
        let h_v = tape.input(fx.h_v.clone());
        let h_c1 = tape.input(fx.h_c1.clone());
        let h_c2 = tape.input(fx.h_c2_flat.clone());
        let s1 = tape.input(fx.s_va_c1.clone());
        let s2 = tape.input(fx.s_va_c2.clone());
        let up = hier::s2i(&mut tape, s1, s2, h_c1, h_v)?;
        let down = hier::i2s(&mut tape, s1, s2, h_c2, h_v, SoftmaxAxes::FlatLastTwo)?;

        // Pooled score evidence times the video-item similarity.
        for i in 0..fx.n {
            for jj in 0..fx.j {
                let pooled = (0..fx.k)
                    .map(|kk| fx.s_va_c2.at3(i, jj, kk))
                    .fold(f64::NEG_INFINITY, f64::max);
                let dot: f64 = (0..fx.d)
                    .map(|m| fx.h_c1.at2(jj, m) * fx.h_v.at2(i, m))
                    .sum();
                let got = tape.value(up.s_prime_c1).at2(i, jj);
                ensure(
                    (got - pooled * dot).abs() <= TOL,
                    format!("instance {inst}: refined item surface at ({i},{jj}): {got} vs {}", pooled * dot),
                )?;
            }
        }
        // Item evidence times the video-score similarity.
        for i in 0..fx.n {
            for jj in 0..fx.j {
                for kk in 0..fx.k {
                    let dot: f64 = (0..fx.d)
                        .map(|m| fx.h_c2_flat.at2(jj * fx.k + kk, m) * fx.h_v.at2(i, m))
                        .sum();
                    let want = fx.s_va_c1.at2(i, jj) * dot;
                    let got = tape.value(down.s_prime_c2).at3(i, jj, kk);
                    ensure(
                        (got - want).abs() <= TOL,
                        format!("instance {inst}: refined score surface at ({i},{jj},{kk}): {got} vs {want}"),
                    )?;
                }
            }
        }
    }

    // A constant similarity matrix carries no signal, so the contrastive
    // loss must equal ln n to the last bit.
    for n in 2..=64usize {
        let value = 0.31 * n as f64 - 5.0;
        let s = Tensor::new(vec![n, n], vec![value; n * n])?;
        let mut tape = Tape::new();
        let sv = tape.input(s);
        for dir in [
            InfoNceDirection::Row,
            InfoNceDirection::Column,
            InfoNceDirection::Symmetric,
        ] {
            let loss = fusion::info_nce(&mut tape, sv, dir)?;
            let got = tape.value(loss).item()?;
            ensure(
                got == (n as f64).ln(),
                format!("contrastive loss on a constant {n}x{n} matrix ({dir:?}): {got} != ln {n}"),
            )?;
        }
    }

    Ok(format!(
        "{instances} product-identity instances at 1e-12, exact ln n for n in 2..=64"
    ))
}

#[test]
fn criterion_4_default_convergence() {
    let start = Instant::now();
    conclude(4, "default-config convergence", start, 60.0, check_convergence());
}

fn check_convergence() -> Check {
    let mut min_c1 = f64::INFINITY;
    let mut min_c2 = f64::INFINITY;
    for seed in 0..5u64 {
        let synth = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let m = train_and_score(&synth, SplitMode::Full, &cfg)?;
        ensure(
            m.c1_top1 >= 0.95,
            format!("seed {seed}: item top-1 {:.4} below 0.95", m.c1_top1),
        )?;
        ensure(
            m.c2_top1_coherent >= 0.85,
            format!("seed {seed}: coherent score top-1 {:.4} below 0.85", m.c2_top1_coherent),
        )?;
        min_c1 = min_c1.min(m.c1_top1);
        min_c2 = min_c2.min(m.c2_top1_coherent);
    }
    Ok(format!(
        "5/5 seeds, worst item top-1 {min_c1:.4} (>= 0.95), worst coherent score top-1 {min_c2:.4} (>= 0.85)"
    ))
}

#[test]
fn criterion_5_hierarchy_ablation() {
    let start = Instant::now();
    conclude(5, "hierarchy ablation on the hard config", start, 120.0, check_ablation_direction());
}

fn check_ablation_direction() -> Check {
    let mut wins = 0usize;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let synth = SynthConfig {
            seed,
            ..SynthConfig::hard()
        };
        let full_cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let flat_cfg = TrainConfig {
            no_hier_units: true,
            ..full_cfg.clone()
        };
        let full = train_and_score(&synth, SplitMode::Full, &full_cfg)?;
        let flat = train_and_score(&synth, SplitMode::Full, &flat_cfg)?;
        if full.c2_top1_coherent >= flat.c2_top1_coherent {
            wins += 1;
        }
        pairs.push(format!(
            "seed {seed}: {:.4} vs {:.4}",
            full.c2_top1_coherent, flat.c2_top1_coherent
        ));
    }
    ensure(
        wins >= 4,
        format!("full model won only {wins}/5 seeds ({})", pairs.join(", ")),
    )?;
    Ok(format!("full model >= flat variant in {wins}/5 seeds ({})", pairs.join(", ")))
}

#[test]
fn criterion_6_chance_calibration() {
    let start = Instant::now();
    conclude(6, "chance calibration", start, 0.0, check_chance());
}

fn check_chance() -> Check {
    let mut c1_sum = 0.0;
    let mut c2_sum = 0.0;
    let mut c2_flat_sum = 0.0;
    let seeds = 5u64;
    for seed in 0..seeds {
        let synth = SynthConfig {
            item_separation: 0.0,
            score_separation: 0.0,
            seed,
            ..SynthConfig::default()
        };
        let (ds, splits) = dataset_and_splits(&synth, SplitMode::Full)?;
        let params =
            ProjectionParams::init(ds.embeddings.dim(), seed, TrainConfig::default().init_sigma)?;
        let m = evaluate(&params, &ds, &splits.test, ForwardFlags::default())?;
        c1_sum += m.c1_top1;
        c2_sum += m.c2_top1_coherent;
        c2_flat_sum += m.c2_top1_independent;
    }
    let c1 = c1_sum / seeds as f64;
    let c2 = c2_sum / seeds as f64;
    let c2_flat = c2_flat_sum / seeds as f64;
    let leaf_chance = 1.0 / 12.0;
    ensure(
        (c1 - 0.25).abs() <= 0.10,
        format!("mean item top-1 {c1:.4} outside 0.25 +/- 0.10"),
    )?;
    ensure(
        (c2 - leaf_chance).abs() <= 0.10,
        format!("mean coherent score top-1 {c2:.4} outside 1/12 +/- 0.10"),
    )?;
    Ok(format!(
        "untrained on separation-free data: item {c1:.4} (chance 0.25), coherent {c2:.4} / flat {c2_flat:.4} (chance {leaf_chance:.4})"
    ))
}

#[test]
fn criterion_7_cli_determinism() {
    let start = Instant::now();
    conclude(7, "run-to-run determinism", start, 0.0, check_determinism());
}

fn check_determinism() -> Check {
    let bin = env!("CARGO_BIN_EXE_hieract");
    let dirs = (tempfile::tempdir()?, tempfile::tempdir()?);
    for dir in [dirs.0.path(), dirs.1.path()] {
        let status = Command::new(bin)
            .args(["train", "--seed", "11"])
            .arg("--out")
            .arg(dir)
            .status()?;
        ensure(status.success(), format!("training run exited with {status}"))?;
    }
    let read = |p: &std::path::Path| std::fs::read(p.join("metrics.csv"));
    let (a, b) = (read(dirs.0.path())?, read(dirs.1.path())?);
    ensure(!a.is_empty(), "first run produced an empty metrics.csv".into())?;
    ensure(
        a == b,
        "metrics.csv differs between identically seeded runs".into(),
    )?;
    Ok(format!("two seeded CLI runs, metrics.csv byte-identical ({} bytes)", a.len()))
}

#[test]
fn criterion_8_few_shot_monotonicity() {
    let start = Instant::now();
    conclude(8, "few-shot monotonicity", start, 0.0, check_few_shot());
}

fn check_few_shot() -> Check {
    let mut means = Vec::new();
    for &k in &[1usize, 2, 4] {
        let mut sum = 0.0;
        for seed in 0..5u64 {
            let synth = SynthConfig {
                seed,
                ..SynthConfig::default()
            };
            let cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            let m = train_and_score(&synth, SplitMode::FewShot { k }, &cfg)?;
            sum += m.c2_top1_coherent;
        }
        means.push((k, sum / 5.0));
    }
    for pair in means.windows(2) {
        ensure(
            pair[0].1 <= pair[1].1,
            format!(
                "mean coherent score top-1 fell from {:.4} at k={} to {:.4} at k={}",
                pair[0].1, pair[0].0, pair[1].1, pair[1].0
            ),
        )?;
    }
    let shown: Vec<String> = means
        .iter()
        .map(|(k, m)| format!("k={k}: {m:.4}"))
        .collect();
    Ok(format!("mean coherent score top-1 non-decreasing ({})", shown.join(", ")))
}

//! Synthetic benchmark generator shaped like a two-level assessment corpus,
//! dataset persistence, and train/val/test split construction.
//!
//! Geometry: one base direction plus mutually orthonormal item and score
//! offsets give item centers with exact pairwise distance
//! `item_separation` and, inside each item, score sub-centers with exact
//! pairwise distance `score_separation` (before unit normalization).
//! Setting both separations to zero collapses every class onto the base
//! direction, making all similarities exactly equal per sample.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{
    l2_normalize_rows, read_embeddings, write_embeddings, EmbeddingSet, ManifestEntry,
};
use crate::error::{Error, Result};
use crate::hemb::sha256_hex;
use crate::taxonomy::{load_taxonomy, Taxonomy, SCORES_PER_ITEM};
use crate::tensor::Tensor;

/// Parameters of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Number of samples.
    pub samples: usize,
    /// Number of first-level items; must match the taxonomy.
    pub items: usize,
    /// Embedding dimension.
    pub dim: usize,
    /// Pairwise distance between item centers before normalization.
    pub item_separation: f64,
    /// Pairwise distance between score sub-centers inside an item.
    pub score_separation: f64,
    /// Gaussian noise scale on video embeddings.
    pub noise_sigma: f64,
    /// Gaussian noise scale on annotation embeddings.
    pub annotation_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            samples: 480,
            items: 4,
            dim: 32,
            item_separation: 1.3,
            score_separation: 0.85,
            noise_sigma: 0.32,
            annotation_noise_sigma: 0.16,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// A deliberately hostile regime: video embeddings are clean and items
    /// well separated, while score sub-centers sit close together under
    /// annotation noise larger than their separation. Score identity must
    /// then be recovered mostly from the video side, which rewards the
    /// interaction units over the flat fused surface.
    pub fn hard() -> Self {
        SynthConfig {
            item_separation: 1.8,
            score_separation: 0.3,
            noise_sigma: 0.15,
            annotation_noise_sigma: 0.5,
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.items == 0 {
            return Err(Error::Config("need at least one item".into()));
        }
        if self.samples < SCORES_PER_ITEM * self.items {
            return Err(Error::Config(format!(
                "{} samples cannot cover {} leaf classes",
                self.samples,
                SCORES_PER_ITEM * self.items
            )));
        }
        if self.dim < 2 {
            return Err(Error::Config(format!("dim {} must be >= 2", self.dim)));
        }
        for (name, v) in [
            ("item_separation", self.item_separation),
            ("score_separation", self.score_separation),
            ("noise_sigma", self.noise_sigma),
            ("annotation_noise_sigma", self.annotation_noise_sigma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Samples plus their leaf labels and the taxonomy they refer to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub embeddings: EmbeddingSet,
    /// `(item, score)` per sample.
    pub labels: Vec<(usize, usize)>,
    pub taxonomy: Taxonomy,
    pub synth: Option<SynthConfig>,
}

impl Dataset {
    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.embeddings.samples() != self.labels.len() {
            return Err(Error::Data(format!(
                "{} embedding rows vs {} labels",
                self.embeddings.samples(),
                self.labels.len()
            )));
        }
        if self.embeddings.num_items() != self.taxonomy.num_items() {
            return Err(Error::Data(format!(
                "{} embedded items vs {} taxonomy items",
                self.embeddings.num_items(),
                self.taxonomy.num_items()
            )));
        }
        let j = self.taxonomy.num_items();
        for (i, &(item, score)) in self.labels.iter().enumerate() {
            if item >= j || score >= SCORES_PER_ITEM {
                return Err(Error::Data(format!(
                    "label ({item},{score}) out of range at sample {i}"
                )));
            }
        }
        Ok(())
    }

    /// Flat leaf label per sample.
    pub fn leaf_labels(&self) -> Vec<usize> {
        self.labels
            .iter()
            .map(|&(it, sc)| it * SCORES_PER_ITEM + sc)
            .collect()
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rand_distr::StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws `count` mutually orthonormal directions. Falls back to plain unit
/// vectors when `count > d`, where exact separations are impossible.
fn orthonormal_directions(rng: &mut ChaCha8Rng, count: usize, d: usize) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(count);
    let exact = count <= d;
    for _ in 0..count {
        let mut v = gaussian_vec(rng, d);
        if exact {
            loop {
                for prev in &dirs {
                    let proj = dot(&v, prev);
                    for (x, p) in v.iter_mut().zip(prev) {
                        *x -= proj * p;
                    }
                }
                let norm = dot(&v, &v).sqrt();
                if norm > 1e-8 {
                    for x in v.iter_mut() {
                        *x /= norm;
                    }
                    break;
                }
                v = gaussian_vec(rng, d);
            }
        } else {
            let norm = dot(&v, &v).sqrt();
            for x in v.iter_mut() {
                *x /= norm;
            }
        }
        dirs.push(v);
    }
    dirs
}

/// Class centers before normalization: per-item centers `(J,d)` and
/// per-leaf sub-centers `(J,3,d)`.
pub(crate) fn class_centers(config: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (j, d) = (config.items, config.dim);
    let base = {
        let mut b = gaussian_vec(rng, d);
        let norm = dot(&b, &b).sqrt().max(1e-12);
        for x in b.iter_mut() {
            *x /= norm;
        }
        b
    };
    let dirs = orthonormal_directions(rng, j + SCORES_PER_ITEM, d);
    let (item_dirs, score_dirs) = dirs.split_at(j);
    let item_scale = config.item_separation / 2.0f64.sqrt();
    let score_scale = config.score_separation / 2.0f64.sqrt();
    let mut items = Vec::with_capacity(j);
    let mut leaves = Vec::with_capacity(j * SCORES_PER_ITEM);
    for q in item_dirs {
        let center: Vec<f64> = base
            .iter()
            .zip(q)
            .map(|(b, q)| b + item_scale * q)
            .collect();
        for g in score_dirs {
            leaves.push(
                center
                    .iter()
                    .zip(g)
                    .map(|(c, g)| c + score_scale * g)
                    .collect(),
            );
        }
        items.push(center);
    }
    (items, leaves)
}

/// Generates a balanced labeled corpus. Labels cycle through the flat leaf
/// order, so class counts differ by at most one.
///
/// Draw order from the seeded generator: base direction, item directions,
/// score directions, then per sample one video noise vector and one
/// annotation noise vector.
pub fn generate_synthetic(config: &SynthConfig, taxonomy: &Taxonomy) -> Result<Dataset> {
    config.validate()?;
    if config.items != taxonomy.num_items() {
        return Err(Error::Config(format!(
            "config wants {} items but taxonomy defines {}",
            config.items,
            taxonomy.num_items()
        )));
    }
    let (n, j, d) = (config.samples, config.items, config.dim);
    let leaves_total = j * SCORES_PER_ITEM;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (item_centers, leaf_centers) = class_centers(config, &mut rng);

    let labels: Vec<(usize, usize)> = (0..n)
        .map(|i| {
            let leaf = i % leaves_total;
            (leaf / SCORES_PER_ITEM, leaf % SCORES_PER_ITEM)
        })
        .collect();

    let mut h_v = Vec::with_capacity(n * d);
    let mut h_a = Vec::with_capacity(n * d);
    for &(item, score) in &labels {
        let center = &leaf_centers[item * SCORES_PER_ITEM + score];
        let noise_v = gaussian_vec(&mut rng, d);
        let noise_a = gaussian_vec(&mut rng, d);
        h_v.extend(
            center
                .iter()
                .zip(&noise_v)
                .map(|(c, e)| c + config.noise_sigma * e),
        );
        h_a.extend(
            center
                .iter()
                .zip(&noise_a)
                .map(|(c, e)| c + config.annotation_noise_sigma * e),
        );
    }
    let h_v = l2_normalize_rows(&Tensor::new(vec![n, d], h_v)?)?;
    let h_a = l2_normalize_rows(&Tensor::new(vec![n, d], h_a)?)?;
    let h_c1 = l2_normalize_rows(&Tensor::new(
        vec![j, d],
        item_centers.into_iter().flatten().collect(),
    )?)?;
    let h_c2 = l2_normalize_rows(&Tensor::new(
        vec![leaves_total, d],
        leaf_centers.into_iter().flatten().collect(),
    )?)?
    .reshaped(vec![j, SCORES_PER_ITEM, d])?;

    let dataset = Dataset {
        embeddings: EmbeddingSet::new(h_v, h_a, h_c1, h_c2)?,
        labels,
        taxonomy: taxonomy.clone(),
        synth: Some(config.clone()),
    };
    dataset.validate()?;
    Ok(dataset)
}

fn labels_csv_bytes(labels: &[(usize, usize)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "item", "score"]).map_err(|e| Error::Csv {
        path: "labels.csv".into(),
        source: e,
    })?;
    for (i, &(item, score)) in labels.iter().enumerate() {
        w.write_record([format!("v{i:05}"), item.to_string(), score.to_string()])
            .map_err(|e| Error::Csv {
                path: "labels.csv".into(),
                source: e,
            })?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("labels.csv buffering failed: {e}")))
}

/// Writes embeddings, labels, taxonomy, generator config and a manifest
/// with checksums into `dir`.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    dataset.validate()?;
    let mut manifest = write_embeddings(dir, &dataset.embeddings)?;

    let labels_bytes = labels_csv_bytes(&dataset.labels)?;
    let labels_path = dir.join("labels.csv");
    std::fs::write(&labels_path, &labels_bytes)
        .map_err(|e| Error::io(labels_path.display().to_string(), e))?;
    manifest.entries.insert(
        "labels".into(),
        ManifestEntry {
            file: "labels.csv".into(),
            rows: dataset.labels.len(),
            cols: 3,
            sha256: sha256_hex(&labels_bytes),
        },
    );

    let tax_text = serde_json::to_string_pretty(&dataset.taxonomy).map_err(|e| Error::Json {
        path: "taxonomy.json".into(),
        source: e,
    })? + "\n";
    let tax_path = dir.join("taxonomy.json");
    std::fs::write(&tax_path, &tax_text)
        .map_err(|e| Error::io(tax_path.display().to_string(), e))?;
    manifest.entries.insert(
        "taxonomy".into(),
        ManifestEntry {
            file: "taxonomy.json".into(),
            rows: dataset.taxonomy.num_items(),
            cols: 0,
            sha256: sha256_hex(tax_text.as_bytes()),
        },
    );

    if let Some(synth) = &dataset.synth {
        let text = serde_json::to_string_pretty(synth).map_err(|e| Error::Json {
            path: "synth_config.json".into(),
            source: e,
        })? + "\n";
        let path = dir.join("synth_config.json");
        std::fs::write(&path, &text).map_err(|e| Error::io(path.display().to_string(), e))?;
        manifest.entries.insert(
            "synth_config".into(),
            ManifestEntry {
                file: "synth_config.json".into(),
                rows: 1,
                cols: 0,
                sha256: sha256_hex(text.as_bytes()),
            },
        );
    }

    manifest.save(&dir.join("manifest.json"))
}

fn verify_text_entry(dir: &Path, entry: &ManifestEntry) -> Result<Vec<u8>> {
    let path = dir.join(&entry.file);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let got = sha256_hex(&bytes);
    if got != entry.sha256 {
        return Err(Error::Format {
            path: path.display().to_string(),
            detail: format!("checksum mismatch: manifest {}, file {got}", entry.sha256),
        });
    }
    Ok(bytes)
}

/// Reads a dataset directory written by [`write_dataset`], verifying
/// checksums and label ranges.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest = crate::encoding::Manifest::load(&manifest_path)?;

    let tax_entry = manifest.entry("taxonomy", &manifest_path)?;
    verify_text_entry(dir, tax_entry)?;
    let taxonomy = load_taxonomy(&dir.join(&tax_entry.file))?;

    let embeddings = read_embeddings(dir, &taxonomy)?;

    let labels_entry = manifest.entry("labels", &manifest_path)?;
    let labels_bytes = verify_text_entry(dir, labels_entry)?;
    let labels_path = dir.join(&labels_entry.file);
    let mut reader = csv::Reader::from_reader(labels_bytes.as_slice());
    let mut labels = Vec::new();
    for record in reader.deserialize::<(String, usize, usize)>() {
        let (_, item, score) = record.map_err(|e| Error::Csv {
            path: labels_path.display().to_string(),
            source: e,
        })?;
        labels.push((item, score));
    }

    let synth = match manifest.entries.get("synth_config") {
        Some(entry) => {
            let bytes = verify_text_entry(dir, entry)?;
            Some(
                serde_json::from_slice::<SynthConfig>(&bytes).map_err(|e| Error::Json {
                    path: dir.join(&entry.file).display().to_string(),
                    source: e,
                })?,
            )
        }
        None => None,
    };

    let dataset = Dataset {
        embeddings,
        labels,
        taxonomy,
        synth,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// How the corpus is divided for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Stratified fractions for train, val and test.
    Full,
    /// Exactly `k` training samples per leaf class; the rest of each class
    /// goes to val and test in their relative proportion. Training subsets
    /// are nested across increasing `k` for a fixed seed.
    FewShot { k: usize },
    /// No training samples; the train fraction joins the test portion.
    ZeroShot,
}

/// Split request: mode plus the train/val fractions (test takes the rest).
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| f.is_finite() && (0.0..1.0).contains(&f);
        if !ok(self.train_frac) || !ok(self.val_frac) {
            return Err(Error::Config(format!(
                "split fractions must lie in [0,1), got train {} val {}",
                self.train_frac, self.val_frac
            )));
        }
        if self.train_frac + self.val_frac >= 1.0 {
            return Err(Error::Config(format!(
                "train {} + val {} leave no test fraction",
                self.train_frac, self.val_frac
            )));
        }
        if let SplitMode::FewShot { k } = self.mode {
            if k == 0 {
                return Err(Error::Config("few-shot k must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Sample indices for each portion, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder apportionment of `total` into three integer parts
/// proportional to `fracs` (which sum to 1). Remainders tie toward the
/// earlier part.
fn apportion(total: usize, fracs: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fracs.iter().map(|f| f * total as f64).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = total - parts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        parts[i] += 1;
        rest -= 1;
    }
    [parts[0], parts[1], parts[2]]
}

/// Builds disjoint, class-stratified splits covering every sample.
///
/// Per leaf class the samples are shuffled by the split seed, then divided
/// by largest-remainder apportionment of the requested fractions. Few-shot
/// puts exactly `k` per class into train (the same shuffle for every `k`,
/// so training sets nest) and divides the rest between val and test in
/// their relative proportion.
pub fn make_splits(labels: &[(usize, usize)], num_items: usize, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if labels.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let leaves_total = num_items * SCORES_PER_ITEM;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); leaves_total];
    for (i, &(item, score)) in labels.iter().enumerate() {
        if item >= num_items || score >= SCORES_PER_ITEM {
            return Err(Error::Data(format!(
                "label ({item},{score}) out of range at sample {i}"
            )));
        }
        per_class[item * SCORES_PER_ITEM + score].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let test_frac = 1.0 - spec.train_frac - spec.val_frac;
    let eval_mass = spec.val_frac + test_frac;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (class, members) in per_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let (n_train, n_val) = match spec.mode {
            SplitMode::Full => {
                let [t, v, _] =
                    apportion(members.len(), [spec.train_frac, spec.val_frac, test_frac]);
                (t, v)
            }
            SplitMode::FewShot { k } => {
                if k > members.len() {
                    return Err(Error::Config(format!(
                        "few-shot k={k} exceeds the {} samples of class {class}",
                        members.len()
                    )));
                }
                let rest = members.len() - k;
                let [v, _, _] =
                    apportion(rest, [spec.val_frac / eval_mass, test_frac / eval_mass, 0.0]);
                (k, v)
            }
            SplitMode::ZeroShot => {
                let [_, v, _] =
                    apportion(members.len(), [spec.train_frac, spec.val_frac, test_frac]);
                (0, v)
            }
        };
        train.extend(&members[..n_train]);
        val.extend(&members[n_train..n_train + n_val]);
        test.extend(&members[n_train + n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Splits { train, val, test })
}

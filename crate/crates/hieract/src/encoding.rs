//! Embedding tables for videos, annotations and taxonomy text, plus the
//! trainable projection head that adapts frozen encoder outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hemb;
use crate::taxonomy::{Taxonomy, SCORES_PER_ITEM};
use crate::tensor::Tensor;

const UNIT_TOL: f64 = 1e-9;

/// Scales every trailing-axis vector to unit Euclidean norm.
/// Errors on a vector whose norm is below 1e-12.
pub fn l2_normalize_rows(t: &Tensor) -> Result<Tensor> {
    let d = *t.shape().last().expect("non-empty shape");
    let mut data = t.data().to_vec();
    for (r, chunk) in data.chunks_mut(d).enumerate() {
        let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::numeric(
                "l2_normalize_rows",
                format!("row {r} has near-zero norm {norm:.3e}"),
            ));
        }
        for v in chunk.iter_mut() {
            *v /= norm;
        }
    }
    Tensor::new(t.shape().to_vec(), data)
}

/// Collapses per-frame features `(n,T,d)` to one unit vector per sample by
/// averaging over frames, then normalizing. Errors name the offending sample.
pub fn temporal_pool(frames: &Tensor) -> Result<Tensor> {
    if frames.rank() != 3 {
        return Err(Error::shape(
            "temporal_pool",
            format!("expected (samples, frames, dim), got {:?}", frames.shape()),
        ));
    }
    let (n, t, d) = (frames.shape()[0], frames.shape()[1], frames.shape()[2]);
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for s in 0..t {
            for m in 0..d {
                out[i * d + m] += frames.at3(i, s, m);
            }
        }
        let row = &mut out[i * d..(i + 1) * d];
        let mut norm = 0.0;
        for v in row.iter_mut() {
            *v /= t as f64;
            norm += *v * *v;
        }
        let norm = norm.sqrt();
        if norm < 1e-12 {
            return Err(Error::numeric(
                "temporal_pool",
                format!("sample {i} pools to a near-zero vector (norm {norm:.3e})"),
            ));
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    Tensor::new(vec![n, d], out)
}

fn check_unit_rows(t: &Tensor, name: &str) -> Result<()> {
    t.check_finite("embedding_set")?;
    let d = *t.shape().last().expect("non-empty shape");
    for (r, chunk) in t.data().chunks(d).enumerate() {
        let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::numeric(
                "embedding_set",
                format!("{name} row {r} has norm {norm:.12}, expected 1 within {UNIT_TOL:.0e}"),
            ));
        }
    }
    Ok(())
}

/// Unit-norm embeddings for the four alignment surfaces: per-sample video
/// and annotation vectors plus per-item and per-leaf taxonomy text vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    h_v: Tensor,
    h_a: Tensor,
    h_c1: Tensor,
    h_c2: Tensor,
}

impl EmbeddingSet {
    /// Validates shapes, finiteness and unit row norms.
    ///
    /// Expected shapes: `h_v (n,d)`, `h_a (n,d)`, `h_c1 (J,d)`,
    /// `h_c2 (J,3,d)`.
    pub fn new(h_v: Tensor, h_a: Tensor, h_c1: Tensor, h_c2: Tensor) -> Result<Self> {
        if h_v.rank() != 2 || h_a.rank() != 2 || h_c1.rank() != 2 || h_c2.rank() != 3 {
            return Err(Error::shape(
                "embedding_set",
                format!(
                    "ranks (v,a,c1,c2) = ({},{},{},{}), expected (2,2,2,3)",
                    h_v.rank(),
                    h_a.rank(),
                    h_c1.rank(),
                    h_c2.rank()
                ),
            ));
        }
        let d = h_v.shape()[1];
        if h_a.shape()[1] != d || h_c1.shape()[1] != d || h_c2.shape()[2] != d {
            return Err(Error::shape(
                "embedding_set",
                "inconsistent embedding dimension across members".to_string(),
            ));
        }
        if h_a.shape()[0] != h_v.shape()[0] {
            return Err(Error::shape(
                "embedding_set",
                format!(
                    "{} videos vs {} annotations",
                    h_v.shape()[0],
                    h_a.shape()[0]
                ),
            ));
        }
        if h_c2.shape()[0] != h_c1.shape()[0] || h_c2.shape()[1] != SCORES_PER_ITEM {
            return Err(Error::shape(
                "embedding_set",
                format!(
                    "leaf table {:?} does not match {} items x {SCORES_PER_ITEM} scores",
                    h_c2.shape(),
                    h_c1.shape()[0]
                ),
            ));
        }
        check_unit_rows(&h_v, "videos")?;
        check_unit_rows(&h_a, "annotations")?;
        check_unit_rows(&h_c1, "items")?;
        check_unit_rows(&h_c2, "leaves")?;
        Ok(EmbeddingSet { h_v, h_a, h_c1, h_c2 })
    }

    pub fn samples(&self) -> usize {
        self.h_v.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.h_v.shape()[1]
    }

    pub fn num_items(&self) -> usize {
        self.h_c1.shape()[0]
    }

    pub fn h_v(&self) -> &Tensor {
        &self.h_v
    }

    pub fn h_a(&self) -> &Tensor {
        &self.h_a
    }

    pub fn h_c1(&self) -> &Tensor {
        &self.h_c1
    }

    pub fn h_c2(&self) -> &Tensor {
        &self.h_c2
    }

    /// Leaf table viewed as `(3J, d)` in flat leaf order.
    pub fn h_c2_flat(&self) -> Tensor {
        let j = self.num_items();
        self.h_c2
            .reshaped(vec![j * SCORES_PER_ITEM, self.dim()])
            .expect("leaf table reshapes")
    }

    /// Subset of samples by index, keeping taxonomy tables unchanged.
    pub fn select_samples(&self, indices: &[usize]) -> Result<EmbeddingSet> {
        let d = self.dim();
        let n = self.samples();
        let mut v = Vec::with_capacity(indices.len() * d);
        let mut a = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= n {
                return Err(Error::Data(format!("sample index {i} out of range for {n}")));
            }
            v.extend_from_slice(self.h_v.row(i));
            a.extend_from_slice(self.h_a.row(i));
        }
        EmbeddingSet::new(
            Tensor::new(vec![indices.len(), d], v)?,
            Tensor::new(vec![indices.len(), d], a)?,
            self.h_c1.clone(),
            self.h_c2.clone(),
        )
    }
}

/// Trainable affine head: one projection for video vectors, one shared
/// projection for every text surface, plus a log-temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    pub p_v: Tensor,
    pub p_t: Tensor,
    pub log_temperature: f64,
}

#[derive(Serialize, Deserialize)]
struct ProjectionParamsFile {
    dim: usize,
    p_v: Vec<f64>,
    p_t: Vec<f64>,
    log_temperature: f64,
}

impl ProjectionParams {
    /// Near-identity initialization: `I + N(0, sigma^2)` entrywise, seeded.
    pub fn init(dim: usize, seed: u64, sigma: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("projection dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |label: u8| -> Tensor {
            let _ = label;
            let mut data = vec![0.0; dim * dim];
            for (idx, v) in data.iter_mut().enumerate() {
                let noise: f64 = rand_distr::StandardNormal.sample(&mut rng);
                *v = noise * sigma + if idx % (dim + 1) == 0 { 1.0 } else { 0.0 };
            }
            Tensor::new(vec![dim, dim], data).expect("sized")
        };
        let p_v = draw(0);
        let p_t = draw(1);
        Ok(ProjectionParams {
            p_v,
            p_t,
            log_temperature: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.p_v.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.p_v.shape()[0];
        if self.p_v.shape() != [d, d] || self.p_t.shape() != [d, d] {
            return Err(Error::shape(
                "projection_params",
                format!("p_v {:?}, p_t {:?}", self.p_v.shape(), self.p_t.shape()),
            ));
        }
        self.p_v.check_finite("projection_params")?;
        self.p_t.check_finite("projection_params")?;
        if !self.log_temperature.is_finite() {
            return Err(Error::numeric(
                "projection_params",
                format!("log_temperature {}", self.log_temperature),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ProjectionParamsFile {
            dim: self.dim(),
            p_v: self.p_v.data().to_vec(),
            p_t: self.p_t.data().to_vec(),
            log_temperature: self.log_temperature,
        };
        let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: ProjectionParamsFile = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        let params = ProjectionParams {
            p_v: Tensor::new(vec![file.dim, file.dim], file.p_v)
                .map_err(|_| Error::Format {
                    path: path.display().to_string(),
                    detail: "p_v length does not match dim".into(),
                })?,
            p_t: Tensor::new(vec![file.dim, file.dim], file.p_t)
                .map_err(|_| Error::Format {
                    path: path.display().to_string(),
                    detail: "p_t length does not match dim".into(),
                })?,
            log_temperature: file.log_temperature,
        };
        params.validate()?;
        Ok(params)
    }
}

fn matmul_pure(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let av = a.at2(i, p);
            for j in 0..m {
                out[i * m + j] += av * b.at2(p, j);
            }
        }
    }
    Tensor::new(vec![n, m], out).expect("sized")
}

/// Projects and re-normalizes every member: video rows through `p_v`, all
/// text rows (annotations, items, leaves) through the shared `p_t`.
pub fn apply_projections(set: &EmbeddingSet, params: &ProjectionParams) -> Result<EmbeddingSet> {
    params.validate()?;
    if params.dim() != set.dim() {
        return Err(Error::shape(
            "apply_projections",
            format!("params dim {} vs embeddings dim {}", params.dim(), set.dim()),
        ));
    }
    let j = set.num_items();
    let d = set.dim();
    let h_v = l2_normalize_rows(&matmul_pure(set.h_v(), &params.p_v))?;
    let h_a = l2_normalize_rows(&matmul_pure(set.h_a(), &params.p_t))?;
    let h_c1 = l2_normalize_rows(&matmul_pure(set.h_c1(), &params.p_t))?;
    let c2_flat = l2_normalize_rows(&matmul_pure(&set.h_c2_flat(), &params.p_t))?;
    EmbeddingSet::new(
        h_v,
        h_a,
        h_c1,
        c2_flat.reshaped(vec![j, SCORES_PER_ITEM, d])?,
    )
}

/// Where embeddings come from.
#[derive(Debug, Clone)]
pub enum EncoderSpec {
    /// Read a previously exported embedding directory (with manifest).
    FileLoaded { dir: PathBuf },
    /// Deterministic random unit embeddings, a stand-in encoder for tests.
    SyntheticSeeded { dim: usize, seed: u64, samples: usize },
    /// Affine head applied to an existing base set.
    TrainableAffine { params: ProjectionParams },
}

/// Materializes an [`EmbeddingSet`] from a source description.
/// `base` is required by `TrainableAffine` and ignored otherwise.
pub fn build_embeddings(
    spec: &EncoderSpec,
    taxonomy: &Taxonomy,
    base: Option<&EmbeddingSet>,
) -> Result<EmbeddingSet> {
    match spec {
        EncoderSpec::FileLoaded { dir } => read_embeddings(dir, taxonomy),
        EncoderSpec::SyntheticSeeded { dim, seed, samples } => {
            if *dim < 2 {
                return Err(Error::Config(format!("embedding dim {dim} must be >= 2")));
            }
            if *samples == 0 {
                return Err(Error::Config("sample count must be positive".into()));
            }
            let j = taxonomy.num_items();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut unit_rows = |rows: usize| -> Result<Tensor> {
                let mut data = vec![0.0; rows * dim];
                for v in data.iter_mut() {
                    *v = rand_distr::StandardNormal.sample(&mut rng);
                }
                l2_normalize_rows(&Tensor::new(vec![rows, *dim], data)?)
            };
            let h_v = unit_rows(*samples)?;
            let h_a = unit_rows(*samples)?;
            let h_c1 = unit_rows(j)?;
            let h_c2 = unit_rows(j * SCORES_PER_ITEM)?.reshaped(vec![j, SCORES_PER_ITEM, *dim])?;
            EmbeddingSet::new(h_v, h_a, h_c1, h_c2)
        }
        EncoderSpec::TrainableAffine { params } => {
            let base = base.ok_or_else(|| {
                Error::Config("trainable-affine encoder needs a base embedding set".into())
            })?;
            apply_projections(base, params)
        }
    }
}

/// One file tracked by a dataset or embedding manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

/// Index of an exported directory: member name to file record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub entries: BTreeMap<String, ManifestEntry>,
}

pub const MANIFEST_FORMAT: &str = "hieract-embeddings";
pub const MANIFEST_VERSION: u32 = 1;

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Format {
                path: path.display().to_string(),
                detail: format!("unsupported manifest {} v{}", m.format, m.version),
            });
        }
        Ok(m)
    }

    pub fn entry(&self, name: &str, origin: &Path) -> Result<&ManifestEntry> {
        self.entries.get(name).ok_or_else(|| Error::Format {
            path: origin.display().to_string(),
            detail: format!("missing manifest entry {name:?}"),
        })
    }
}

const MEMBER_FILES: [(&str, &str); 4] = [
    ("videos", "videos.hemb"),
    ("annotations", "annotations.hemb"),
    ("items", "items.hemb"),
    ("leaves", "leaves.hemb"),
];

/// Writes the four member tables into `dir` and returns a manifest covering
/// them. The caller may extend the manifest before saving it.
pub fn write_embeddings(dir: &Path, set: &EmbeddingSet) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let d = set.dim();
    let tables: [(&str, &str, usize, Tensor); 4] = [
        ("videos", "videos.hemb", set.samples(), set.h_v().clone()),
        ("annotations", "annotations.hemb", set.samples(), set.h_a().clone()),
        ("items", "items.hemb", set.num_items(), set.h_c1().clone()),
        (
            "leaves",
            "leaves.hemb",
            set.num_items() * SCORES_PER_ITEM,
            set.h_c2_flat(),
        ),
    ];
    let mut entries = BTreeMap::new();
    for (name, file, rows, tensor) in tables {
        let sha = hemb::write_file(&dir.join(file), rows, d, tensor.data())?;
        entries.insert(
            name.to_string(),
            ManifestEntry {
                file: file.to_string(),
                rows,
                cols: d,
                sha256: sha,
            },
        );
    }
    Ok(Manifest {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
        dim: d,
        entries,
    })
}

/// Reads an embedding directory, verifying checksums, shapes and unit norms,
/// and checking the taxonomy tables against `taxonomy`.
pub fn read_embeddings(dir: &Path, taxonomy: &Taxonomy) -> Result<EmbeddingSet> {
    let manifest_path = dir.join("manifest.json");
    let manifest = Manifest::load(&manifest_path)?;
    let d = manifest.dim;
    let mut tables = Vec::with_capacity(4);
    for (name, _) in MEMBER_FILES {
        let entry = manifest.entry(name, &manifest_path)?;
        let path = dir.join(&entry.file);
        let (rows, cols, data) = hemb::read_file(&path, Some(&entry.sha256))?;
        if rows != entry.rows || cols != entry.cols || cols != d {
            return Err(Error::Format {
                path: path.display().to_string(),
                detail: format!(
                    "{rows}x{cols} on disk vs {}x{} in manifest (dim {d})",
                    entry.rows, entry.cols
                ),
            });
        }
        tables.push(Tensor::new(vec![rows, cols], data)?);
    }
    let leaves = tables.pop().expect("four tables");
    let items = tables.pop().expect("four tables");
    let annotations = tables.pop().expect("four tables");
    let videos = tables.pop().expect("four tables");

    let j = taxonomy.num_items();
    if items.shape()[0] != j {
        return Err(Error::Format {
            path: dir.display().to_string(),
            detail: format!("{} item rows for a {j}-item taxonomy", items.shape()[0]),
        });
    }
    if leaves.shape()[0] != j * SCORES_PER_ITEM {
        return Err(Error::Format {
            path: dir.display().to_string(),
            detail: format!(
                "{} leaf rows, expected {} ({} items x {SCORES_PER_ITEM})",
                leaves.shape()[0],
                j * SCORES_PER_ITEM,
                j
            ),
        });
    }
    EmbeddingSet::new(
        videos,
        annotations,
        items,
        leaves.reshaped(vec![j, SCORES_PER_ITEM, d])?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::default_taxonomy;

    fn synthetic(seed: u64, n: usize, d: usize) -> EmbeddingSet {
        let tax = default_taxonomy();
        build_embeddings(
            &EncoderSpec::SyntheticSeeded { dim: d, seed, samples: n },
            &tax,
            None,
        )
        .unwrap()
    }

    #[test]
    fn synthetic_build_is_deterministic() {
        let a = synthetic(7, 6, 8);
        let b = synthetic(7, 6, 8);
        assert_eq!(a, b);
        let c = synthetic(8, 6, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn embedding_set_rejects_non_unit_rows() {
        let mut set = synthetic(1, 3, 4);
        set.h_v.data_mut()[0] *= 2.0;
        let err = EmbeddingSet::new(
            set.h_v.clone(),
            set.h_a.clone(),
            set.h_c1.clone(),
            set.h_c2.clone(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("norm"));
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let tax = default_taxonomy();
        let set = synthetic(3, 5, 6);
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_embeddings(dir.path(), &set).unwrap();
        manifest.save(&dir.path().join("manifest.json")).unwrap();
        let back = read_embeddings(dir.path(), &tax).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn read_rejects_checksum_mismatch() {
        let tax = default_taxonomy();
        let set = synthetic(4, 4, 5);
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_embeddings(dir.path(), &set).unwrap();
        manifest.save(&dir.path().join("manifest.json")).unwrap();
        let victim = dir.path().join("videos.hemb");
        let mut bytes = std::fs::read(&victim).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        std::fs::write(&victim, bytes).unwrap();
        let err = read_embeddings(dir.path(), &tax).unwrap_err();
        assert!(err.to_string().contains("checksum"));
    }

    #[test]
    fn read_rejects_leaf_count_mismatch() {
        let tax = default_taxonomy();
        let set = synthetic(5, 4, 5);
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = write_embeddings(dir.path(), &set).unwrap();
        let truncated = l2_normalize_rows(
            &Tensor::new(vec![11, 5], set.h_c2_flat().data()[..55].to_vec()).unwrap(),
        )
        .unwrap();
        let sha = hemb::write_file(&dir.path().join("leaves.hemb"), 11, 5, truncated.data()).unwrap();
        let entry = manifest.entries.get_mut("leaves").unwrap();
        entry.rows = 11;
        entry.sha256 = sha;
        manifest.save(&dir.path().join("manifest.json")).unwrap();
        let err = read_embeddings(dir.path(), &tax).unwrap_err();
        assert!(err.to_string().contains("leaf rows"), "{err}");
    }

    #[test]
    fn temporal_pool_means_then_normalizes() {
        let frames = Tensor::new(
            vec![1, 2, 2],
            vec![1.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let pooled = temporal_pool(&frames).unwrap();
        let inv = 1.0 / 2.0f64.sqrt();
        assert!((pooled.at2(0, 0) - inv).abs() < 1e-15);
        assert!((pooled.at2(0, 1) - inv).abs() < 1e-15);

        let cancel = Tensor::new(vec![2, 2, 1], vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let err = temporal_pool(&cancel).unwrap_err();
        assert!(err.to_string().contains("sample 1"));
    }

    #[test]
    fn identity_projection_is_near_noop() {
        let set = synthetic(9, 4, 6);
        let params = ProjectionParams::init(6, 0, 0.0).unwrap();
        let out = apply_projections(&set, &params).unwrap();
        for (a, b) in set.h_v().data().iter().zip(out.h_v().data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in set.h_c2().data().iter().zip(out.h_c2().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_init_is_seeded_near_identity() {
        let a = ProjectionParams::init(5, 42, 0.01).unwrap();
        let b = ProjectionParams::init(5, 42, 0.01).unwrap();
        assert_eq!(a, b);
        for i in 0..5 {
            for j in 0..5 {
                let v = a.p_v.at2(i, j);
                if i == j {
                    assert!((v - 1.0).abs() < 0.1);
                } else {
                    assert!(v.abs() < 0.1);
                }
            }
        }
        assert_eq!(a.log_temperature, 0.0);
    }

    #[test]
    fn params_save_load_round_trip() {
        let params = ProjectionParams::init(4, 3, 0.01).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        params.save(&path).unwrap();
        let back = ProjectionParams::load(&path).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn select_samples_subsets_video_rows() {
        let set = synthetic(2, 6, 4);
        let sub = set.select_samples(&[4, 0]).unwrap();
        assert_eq!(sub.samples(), 2);
        assert_eq!(sub.h_v().row(0), set.h_v().row(4));
        assert_eq!(sub.h_a().row(1), set.h_a().row(0));
        assert!(set.select_samples(&[9]).is_err());
    }
}

//! Precomputed feature storage, dataset loading and batching.
//!
//! On disk a split lives at `<root>/<split>/`, one `<id>.mflf` file per
//! utterance plus a `manifest.tsv` with columns `id`, `label`, `path`
//! (relative to the split directory).

mod format;
mod synth;

pub use format::{
    decode, encode, header_len, read_feature_file, write_feature_file, FeatureFile,
    LayerFeatureSet, MAGIC, VERSION,
};
pub use synth::{generate_synthetic, synth_id, SynthSpec};

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::{LayerFeatureBatch, STORED_LAYERS};
use crate::label::Label;
use crate::numkit::Tensor;

pub const MANIFEST: &str = "manifest.tsv";
pub const DEFAULT_BATCH_SIZE: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Option<Label>,
    pub path: PathBuf,
}

fn label_text(label: Option<Label>) -> &'static str {
    label.map_or("unlabeled", Label::as_str)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::from("id\tlabel\tpath\n");
    for e in entries {
        text.push_str(&format!(
            "{}\t{}\t{}\n",
            e.id,
            label_text(e.label),
            e.path.display()
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("id\t")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [id, label, rel] = cols[..] else {
            return Err(Error::format(
                path,
                format!("line {}: expected 3 columns", n + 1),
            ));
        };
        let label = match label {
            "unlabeled" | "-" => None,
            other => Some(
                other
                    .parse()
                    .map_err(|e: String| Error::format(path, format!("line {}: {e}", n + 1)))?,
            ),
        };
        entries.push(ManifestEntry {
            id: id.to_string(),
            label,
            path: PathBuf::from(rel),
        });
    }
    Ok(entries)
}

/// Writes `files` to `<root>/<split>/` with a manifest. Returns the split
/// directory.
pub fn write_split(root: &Path, split: &str, files: &[FeatureFile]) -> Result<PathBuf> {
    let dir = root.join(split);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        let rel = PathBuf::from(format!("{}.mflf", f.id));
        write_feature_file(dir.join(&rel), &f.features, f.label, &f.id)?;
        entries.push(ManifestEntry {
            id: f.id.clone(),
            label: f.label,
            path: rel,
        });
    }
    write_manifest(&dir.join(MANIFEST), &entries)?;
    Ok(dir)
}

/// Immutable, shape-uniform collection of utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<FeatureFile>,
}

impl Dataset {
    pub fn new(items: Vec<FeatureFile>) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Ingestion("dataset is empty".into()))?;
        let (t, s) = (first.features.frames(), first.features.feature_dim());
        if let Some(bad) = items
            .iter()
            .find(|f| f.features.frames() != t || f.features.feature_dim() != s)
        {
            return Err(Error::Ingestion(format!(
                "{} has T={} S={}, {} has T={t} S={s}",
                bad.id,
                bad.features.frames(),
                bad.features.feature_dim(),
                first.id
            )));
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[FeatureFile] {
        &self.items
    }

    pub fn frames(&self) -> usize {
        self.items[0].features.frames()
    }

    pub fn feature_dim(&self) -> usize {
        self.items[0].features.feature_dim()
    }

    /// Stacks the utterances at `indices` into one batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::Ingestion("empty batch".into()));
        }
        let (t, s) = (self.frames(), self.feature_dim());
        let b = indices.len();
        let mut layers = Vec::with_capacity(STORED_LAYERS);
        for l in 0..STORED_LAYERS {
            let mut data = Vec::with_capacity(b * t * s);
            for &i in indices {
                data.extend_from_slice(self.items[i].features.layers()[l].data());
            }
            layers.push(Tensor::new(vec![b, t, s], data)?);
        }
        Ok(Batch {
            ids: indices.iter().map(|&i| self.items[i].id.clone()).collect(),
            labels: indices.iter().map(|&i| self.items[i].label).collect(),
            features: LayerFeatureBatch::new(layers)?,
        })
    }
}

/// Loads `<root>/<split>/` through its manifest. Files are read in
/// parallel; the result follows manifest order.
pub fn load_split(root: &Path, split: &str) -> Result<Dataset> {
    let dir = root.join(split);
    let entries = read_manifest(&dir.join(MANIFEST))?;
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(8);
    let chunk = entries.len().div_ceil(threads).max(1);
    let loaded: Vec<Result<Vec<FeatureFile>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = entries
            .chunks(chunk)
            .map(|part| {
                let dir = &dir;
                scope.spawn(move || part.iter().map(|e| load_entry(dir, e)).collect())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("loader thread panicked"))
            .collect()
    });
    let mut items = Vec::with_capacity(entries.len());
    for part in loaded {
        items.extend(part?);
    }
    Dataset::new(items)
}

fn load_entry(dir: &Path, entry: &ManifestEntry) -> Result<FeatureFile> {
    let path = dir.join(&entry.path);
    let file = read_feature_file(&path)?;
    if file.id != entry.id || file.label != entry.label {
        return Err(Error::Ingestion(format!(
            "{}: manifest says ({}, {}), file says ({}, {})",
            path.display(),
            entry.id,
            label_text(entry.label),
            file.id,
            label_text(file.label)
        )));
    }
    Ok(file)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub labels: Vec<Option<Label>>,
    pub features: LayerFeatureBatch,
}

impl Batch {
    /// Labels of a fully labeled batch.
    pub fn require_labels(&self) -> Result<Vec<Label>> {
        self.labels
            .iter()
            .zip(&self.ids)
            .map(|(l, id)| {
                l.ok_or_else(|| Error::Ingestion(format!("utterance {id} is unlabeled")))
            })
            .collect()
    }
}

/// Shuffled index batches covering `0..n` once. The last batch may be short.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// One epoch of materialized batches, shuffled by `seed`.
pub fn make_batches(dataset: &Dataset, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    batch_indices(dataset.len(), batch_size, seed)
        .iter()
        .map(|idx| dataset.batch(idx))
        .collect()
}

/// Deterministic per-epoch shuffle seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(n: usize) -> Dataset {
        let spec = SynthSpec {
            n_per_class: n / 2,
            frames: 2,
            feature_dim: 3,
            seed: 1,
            ..SynthSpec::default()
        };
        Dataset::new(generate_synthetic(&spec).unwrap()).unwrap()
    }

    #[test]
    fn ten_by_four_gives_4_4_2() {
        let sizes: Vec<usize> = make_batches(&dataset(10), 4, 0)
            .unwrap()
            .iter()
            .map(|b| b.ids.len())
            .collect();
        assert_eq!(sizes, [4, 4, 2]);
    }

    #[test]
    fn shuffle_depends_on_seed_only() {
        assert_eq!(batch_indices(20, 4, 5), batch_indices(20, 4, 5));
        assert_ne!(
            batch_indices(20, 4, epoch_seed(5, 0)),
            batch_indices(20, 4, epoch_seed(5, 1))
        );
    }

    #[test]
    fn every_utterance_once_per_epoch() {
        let mut seen: Vec<usize> = batch_indices(23, 4, 9).concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn batch_stacks_utterances() {
        let ds = dataset(4);
        let b = ds.batch(&[2, 0]).unwrap();
        assert_eq!(b.features.layer(5).shape(), &[2, 2, 3]);
        assert_eq!(
            &b.features.layer(5).data()[..6],
            ds.items()[2].features.layers()[5].data()
        );
        assert_eq!(b.ids[1], ds.items()[0].id);
    }

    #[test]
    fn mixed_geometry_is_ingestion_error() {
        let mut items = dataset(2).items().to_vec();
        let other = SynthSpec {
            n_per_class: 1,
            frames: 3,
            feature_dim: 3,
            ..SynthSpec::default()
        };
        items.extend(generate_synthetic(&other).unwrap());
        assert!(matches!(Dataset::new(items), Err(Error::Ingestion(_))));
        assert!(matches!(Dataset::new(vec![]), Err(Error::Ingestion(_))));
    }

    #[test]
    fn manifest_skips_comments() {
        let dir = std::env::temp_dir().join(format!("moefuse-manifest-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join(MANIFEST);
        fs::write(
            &path,
            "id\tlabel\tpath\n# note\na\tspoof\ta.mflf\nb\tunlabeled\tb.mflf\n",
        )
        .unwrap();
        let entries = read_manifest(&path).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].label, Some(Label::Spoof));
        assert_eq!(entries[1].label, None);
        fs::remove_dir_all(&dir).unwrap();
    }
}

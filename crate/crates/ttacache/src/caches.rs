//! Online positive/negative target caches: bounded per-class buckets with
//! entropy-based eviction, plus similarity retrieval over cache contents and
//! the personalized source cache.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::core::{normalize_f64, unit_cosine, Embedding, DEGENERATE_NORM};
use crate::error::{Error, Result};
use crate::personalize::PersonalizedSourceCache;
use crate::store::{self, expect_format, CACHESNAP_FORMAT};

/// Which band of the entropy gate a cache serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// One stored sample: embedding, pseudo-label (positive) or least-likely
/// label (negative), insertion-time entropy, and a monotone sequence id.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub vector: Embedding,
    pub label: usize,
    pub entropy: f64,
    pub seq: u64,
}

/// Per-class bounded buckets. When a bucket overflows, the single
/// highest-entropy entry goes (oldest first among ties), so each bucket keeps
/// the lowest-entropy samples seen for its class.
#[derive(Debug, Clone)]
pub struct TargetCache {
    polarity: Polarity,
    capacity_per_class: usize,
    buckets: Vec<Vec<CacheEntry>>,
}

/// Report of what `insert` displaced, if anything.
#[derive(Debug, Clone, PartialEq)]
pub struct Eviction {
    pub entry: CacheEntry,
    /// True when the incoming entry itself was rejected.
    pub displaced_new: bool,
}

impl TargetCache {
    pub fn new(polarity: Polarity, capacity_per_class: usize, n_classes: usize) -> Result<Self> {
        if capacity_per_class == 0 {
            return Err(Error::InvalidInput("cache capacity must be >= 1".into()));
        }
        if n_classes < 2 {
            return Err(Error::InvalidInput("cache needs at least 2 classes".into()));
        }
        Ok(Self {
            polarity,
            capacity_per_class,
            buckets: vec![Vec::new(); n_classes],
        })
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn capacity_per_class(&self) -> usize {
        self.capacity_per_class
    }

    pub fn n_classes(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket(&self, class_index: usize) -> &[CacheEntry] {
        &self.buckets[class_index]
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        for b in &mut self.buckets {
            b.clear();
        }
    }

    /// Appends the entry to its label's bucket; on overflow evicts the single
    /// highest-entropy entry (ties: oldest `seq` first) and reports it — the
    /// report may be the incoming entry itself.
    pub fn insert(&mut self, entry: CacheEntry) -> Result<Option<Eviction>> {
        if entry.label >= self.buckets.len() {
            return Err(Error::InvalidInput(format!(
                "cache label {} out of range ({} classes)",
                entry.label,
                self.buckets.len()
            )));
        }
        if !(entry.entropy.is_finite() && (0.0..=1.0).contains(&entry.entropy)) {
            return Err(Error::InvalidInput(format!(
                "cache entry entropy {} outside [0, 1]",
                entry.entropy
            )));
        }
        let new_seq = entry.seq;
        let bucket = &mut self.buckets[entry.label];
        bucket.push(entry);
        if bucket.len() <= self.capacity_per_class {
            return Ok(None);
        }
        let mut worst = 0;
        for i in 1..bucket.len() {
            let (e, w) = (&bucket[i], &bucket[worst]);
            if e.entropy > w.entropy || (e.entropy == w.entropy && e.seq < w.seq) {
                worst = i;
            }
        }
        let removed = bucket.remove(worst);
        let displaced_new = removed.seq == new_seq;
        Ok(Some(Eviction {
            entry: removed,
            displaced_new,
        }))
    }

    /// Similarity-weighted mean of the top-r entries nearest to `query`
    /// (optionally restricted to one label's bucket), L2-normalized. `None`
    /// when no entries match.
    pub fn retrieve(
        &self,
        query: &Embedding,
        r: usize,
        label_filter: Option<usize>,
    ) -> Result<Option<Embedding>> {
        if r == 0 {
            return Err(Error::InvalidInput("retrieval r must be >= 1".into()));
        }
        let candidates: Vec<(f64, u64, &Embedding)> = match label_filter {
            Some(label) => {
                if label >= self.buckets.len() {
                    return Err(Error::InvalidInput(format!(
                        "label filter {label} out of range"
                    )));
                }
                self.buckets[label]
                    .iter()
                    .map(|e| (unit_cosine(query, &e.vector), e.seq, &e.vector))
                    .collect()
            }
            None => self
                .buckets
                .iter()
                .flatten()
                .map(|e| (unit_cosine(query, &e.vector), e.seq, &e.vector))
                .collect(),
        };
        if candidates.is_empty() {
            return Ok(None);
        }
        Ok(Some(weighted_top_r(candidates, r)))
    }
}

/// Shared top-r aggregation: entries sorted by similarity (desc) with the
/// tiebreak id (asc), then combined as Σ wᵢ zᵢ / Σ wᵢ with
/// wᵢ = max(cos, 0) + 1e−6 and L2-normalized. If the weighted mean is
/// degenerate (antipodal cancellation), the single nearest entry wins.
fn weighted_top_r(mut candidates: Vec<(f64, u64, &Embedding)>, r: usize) -> Embedding {
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("similarities are finite")
            .then_with(|| a.1.cmp(&b.1))
    });
    candidates.truncate(r);
    let dim = candidates[0].2.dim();
    let mut acc = vec![0.0f64; dim];
    let mut total = 0.0f64;
    for (sim, _, z) in &candidates {
        let w = sim.max(0.0) + 1e-6;
        total += w;
        for (a, &v) in acc.iter_mut().zip(z.values()) {
            *a += w * v as f64;
        }
    }
    for a in &mut acc {
        *a /= total;
    }
    let (values, norm, _) = normalize_f64(&acc);
    if norm <= DEGENERATE_NORM {
        return candidates[0].2.clone();
    }
    Embedding::new(values).expect("normalized mean of finite vectors is finite")
}

/// Weighted top-r retrieval over every prototype of the personalized source
/// cache; always yields a vector (the cache is nonempty by construction).
pub fn retrieve_source(
    cache: &PersonalizedSourceCache,
    query: &Embedding,
    r: usize,
) -> Result<Embedding> {
    if r == 0 {
        return Err(Error::InvalidInput("retrieval r must be >= 1".into()));
    }
    let candidates: Vec<(f64, u64, &Embedding)> = cache
        .all_prototypes()
        .enumerate()
        .map(|(i, p)| (unit_cosine(query, &p.vector), i as u64, &p.vector))
        .collect();
    if candidates.is_empty() {
        return Err(Error::Internal(
            "personalized source cache is empty".into(),
        ));
    }
    Ok(weighted_top_r(candidates, r))
}

#[derive(Serialize, Deserialize)]
struct SnapshotRow {
    class_index: usize,
    row: usize,
    entropy: f64,
    seq: u64,
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    format: String,
    dim: usize,
    n_classes: usize,
    polarity: Polarity,
    capacity_per_class: usize,
    data: String,
    entries: Vec<SnapshotRow>,
}

/// Writes a cache snapshot in the prototype-store layout (JSON + `f32` blob)
/// for post-hoc analysis.
pub fn save_cache_snapshot(cache: &TargetCache, dim: usize, json_path: &Path) -> Result<()> {
    let stem = json_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "snapshot".into());
    let data_name = format!("{stem}.f32");
    let mut rows = Vec::new();
    let mut vectors = Vec::new();
    for (class_index, bucket) in (0..cache.n_classes()).map(|c| (c, cache.bucket(c))) {
        for e in bucket {
            rows.push(SnapshotRow {
                class_index,
                row: vectors.len(),
                entropy: e.entropy,
                seq: e.seq,
            });
            vectors.push(e.vector.clone());
        }
    }
    let header = SnapshotHeader {
        format: CACHESNAP_FORMAT.into(),
        dim,
        n_classes: cache.n_classes(),
        polarity: cache.polarity(),
        capacity_per_class: cache.capacity_per_class(),
        data: data_name.clone(),
        entries: rows,
    };
    store::write_json(json_path, &header)?;
    let blob = json_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
        .join(&data_name);
    store::write_embedding_blob(&blob, &vectors)
}

pub fn load_cache_snapshot(json_path: &Path) -> Result<TargetCache> {
    let header: SnapshotHeader = store::read_json(json_path)?;
    expect_format(&header.format, CACHESNAP_FORMAT)?;
    let blob = json_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
        .join(&header.data);
    let vectors = store::read_embedding_blob(&blob, header.entries.len(), header.dim)?;
    let mut cache = TargetCache::new(
        header.polarity,
        header.capacity_per_class,
        header.n_classes,
    )?;
    for row in &header.entries {
        let vector = vectors
            .get(row.row)
            .cloned()
            .ok_or_else(|| Error::Validation(format!("blob row {} out of range", row.row)))?;
        if row.class_index >= header.n_classes {
            return Err(Error::Validation(format!(
                "class index {} out of range",
                row.class_index
            )));
        }
        cache.buckets[row.class_index].push(CacheEntry {
            vector,
            label: row.class_index,
            entropy: row.entropy,
            seq: row.seq,
        });
    }
    Ok(cache)
}

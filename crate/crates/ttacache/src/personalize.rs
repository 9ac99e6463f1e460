//! Construction of the fixed per-target source cache: anchor statistics,
//! diagonal Fréchet distance, top-m subject selection, per-class prototype
//! pooling with an optional cap.
//!
//! The resulting cache is immutable — it has no mutation API and stays fixed
//! for the whole adaptation run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::core::{l2_normalize, Embedding};
use crate::error::{Error, Result};
use crate::store::{
    self, expect_format, read_embedding_blob, write_embedding_blob, Manifest, PrototypeStore,
    PCACHE_FORMAT,
};

/// Variance floor inside the Fréchet square roots. A floor (not an additive
/// term) so that exact moments stay exact.
pub const FRECHET_VAR_FLOOR: f64 = 1e-8;

/// Elementwise mean and population variance of a set of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Population statistics (variance divides by n); a single sample yields zero
/// variance.
pub fn anchor_stats(embeddings: &[Embedding]) -> Result<AnchorStats> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::InvalidInput("anchor statistics need at least one sample".into()))?;
    let dim = first.dim();
    let n = embeddings.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for e in embeddings {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch(
                "anchor samples differ in dimension".into(),
            ));
        }
        for (m, &v) in mean.iter_mut().zip(e.values()) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0f64; dim];
    for e in embeddings {
        for ((s, &v), m) in var.iter_mut().zip(e.values()).zip(&mean) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    for s in &mut var {
        *s /= n;
    }
    Ok(AnchorStats { mean, var })
}

/// Diagonal Fréchet distance between two Gaussian summaries:
/// `d² = ‖μ_a − μ_b‖² + Σ_j (√max(σ²_aj, ε) − √max(σ²_bj, ε))²`, returned as
/// `d ≥ 0`.
pub fn frechet_diag(a: &AnchorStats, b: &AnchorStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "anchor stats of dims {} and {}",
            a.mean.len(),
            b.mean.len()
        )));
    }
    let mut d2 = 0.0f64;
    for (ma, mb) in a.mean.iter().zip(&b.mean) {
        let d = ma - mb;
        d2 += d * d;
    }
    for (va, vb) in a.var.iter().zip(&b.var) {
        let d = va.max(FRECHET_VAR_FLOOR).sqrt() - vb.max(FRECHET_VAR_FLOOR).sqrt();
        d2 += d * d;
    }
    Ok(d2.sqrt())
}

/// Source subjects sorted ascending by Fréchet distance to the target stats;
/// equal distances fall back to lexicographic subject order.
pub fn rank_sources(
    target: &AnchorStats,
    sources: &BTreeMap<String, AnchorStats>,
) -> Result<Vec<(String, f64)>> {
    if sources.is_empty() {
        return Err(Error::InvalidInput("no source subjects to rank".into()));
    }
    let mut ranked = Vec::with_capacity(sources.len());
    for (id, stats) in sources {
        ranked.push((id.clone(), frechet_diag(target, stats)?));
    }
    ranked.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .expect("distances are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(ranked)
}

/// One pooled prototype inside the personalized cache.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizedPrototype {
    pub vector: Embedding,
    pub source_subject: String,
    pub anchor_distance: f64,
    pub cluster_size: usize,
}

/// The frozen per-target source cache: one pooled prototype list per class
/// plus the audited subject ranking. No mutation API.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizedSourceCache {
    target_id: String,
    anchor_class: usize,
    per_class: Vec<Vec<PersonalizedPrototype>>,
    selected_sources: Vec<(String, f64)>,
}

impl PersonalizedSourceCache {
    pub fn target_id(&self) -> &str {
        &self.target_id
    }

    pub fn anchor_class(&self) -> usize {
        self.anchor_class
    }

    pub fn n_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn dim(&self) -> usize {
        self.per_class[0][0].vector.dim()
    }

    pub fn class_prototypes(&self, class_index: usize) -> &[PersonalizedPrototype] {
        &self.per_class[class_index]
    }

    /// Iterates prototypes of all classes in (class, position) order.
    pub fn all_prototypes(&self) -> impl Iterator<Item = &PersonalizedPrototype> {
        self.per_class.iter().flatten()
    }

    pub fn selected_sources(&self) -> &[(String, f64)] {
        &self.selected_sources
    }

    pub fn len(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds the personalized cache for one target (supp. algorithm): source
/// anchor statistics come from each source's anchor-class prototypes, target
/// statistics from raw anchor frames; the top-m closest sources are pooled
/// per class, then optionally capped to the `cap_k` most relevant prototypes
/// (nearest subject first, larger clusters first, insertion order last).
/// `cap_k = 0` disables the cap.
pub fn build_personalized_cache(
    target_id: &str,
    target_anchor: &[Embedding],
    protos: &PrototypeStore,
    anchor_class: usize,
    m: usize,
    cap_k: usize,
) -> Result<PersonalizedSourceCache> {
    if target_anchor.is_empty() {
        return Err(Error::InvalidInput(format!(
            "target {target_id:?} has no anchor frames"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidInput("top-m must be >= 1".into()));
    }
    if anchor_class >= protos.n_classes() {
        return Err(Error::InvalidInput(format!(
            "anchor class {anchor_class} out of range (n_classes = {})",
            protos.n_classes()
        )));
    }
    protos.validate_coverage()?;

    let mut source_stats = BTreeMap::new();
    for subject in protos.subjects() {
        let vectors: Vec<Embedding> = protos
            .get(&subject, anchor_class)?
            .iter()
            .map(|e| e.vector.clone())
            .collect();
        source_stats.insert(subject, anchor_stats(&vectors)?);
    }
    let target_stats = anchor_stats(target_anchor)?;
    let ranked = rank_sources(&target_stats, &source_stats)?;
    let selected: Vec<(String, f64)> = ranked.into_iter().take(m).collect();

    let mut per_class = Vec::with_capacity(protos.n_classes());
    for class_index in 0..protos.n_classes() {
        let mut pooled: Vec<PersonalizedPrototype> = Vec::new();
        for (subject, distance) in &selected {
            for entry in protos.get(subject, class_index)? {
                pooled.push(PersonalizedPrototype {
                    vector: entry.vector.clone(),
                    source_subject: subject.clone(),
                    anchor_distance: *distance,
                    cluster_size: entry.cluster_size,
                });
            }
        }
        if pooled.is_empty() {
            return Err(Error::Validation(format!(
                "no prototypes pooled for class {class_index}"
            )));
        }
        // Stable sort keeps insertion order within equal (distance, size).
        pooled.sort_by(|a, b| {
            a.anchor_distance
                .partial_cmp(&b.anchor_distance)
                .expect("distances are finite")
                .then_with(|| b.cluster_size.cmp(&a.cluster_size))
        });
        if cap_k > 0 && pooled.len() > cap_k {
            pooled.truncate(cap_k);
        }
        per_class.push(pooled);
    }

    Ok(PersonalizedSourceCache {
        target_id: target_id.to_string(),
        anchor_class,
        per_class,
        selected_sources: selected,
    })
}

/// Gathers the target's anchor frames (the `anchor_range` slices of its
/// videos), L2-normalized.
pub fn target_anchor_frames(manifest: &Manifest, target_id: &str) -> Result<Vec<Embedding>> {
    let subject = manifest.subject(target_id)?;
    if subject.role != store::Role::Target {
        return Err(Error::Validation(format!(
            "subject {target_id:?} is not a target"
        )));
    }
    let mut out = Vec::new();
    for video in &subject.videos {
        if let Some((start, end)) = video.anchor_range {
            let frames = store::load_embeddings(manifest, video)?;
            for frame in &frames[start..end] {
                let (unit, degenerate) = l2_normalize(frame);
                if degenerate {
                    return Err(Error::DegenerateInput(format!(
                        "zero-norm anchor frame in target {target_id:?} video {:?}",
                        video.id
                    )));
                }
                out.push(unit);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Validation(format!(
            "target {target_id:?} has no videos with an anchor_range"
        )));
    }
    Ok(out)
}

/// Manifest-level wrapper: anchor frames come from the target's
/// `anchor_range` slices.
pub fn build_cache_from_manifest(
    manifest: &Manifest,
    protos: &PrototypeStore,
    target_id: &str,
    anchor_class: usize,
    m: usize,
    cap_k: usize,
) -> Result<PersonalizedSourceCache> {
    if manifest.dim != protos.dim() {
        return Err(Error::DimensionMismatch(format!(
            "manifest dim {} vs prototype store dim {}",
            manifest.dim,
            protos.dim()
        )));
    }
    let anchor = target_anchor_frames(manifest, target_id)?;
    build_personalized_cache(target_id, &anchor, protos, anchor_class, m, cap_k)
}

#[derive(Serialize, Deserialize)]
struct PcacheRow {
    class_index: usize,
    row: usize,
    source_subject: String,
    anchor_distance: f64,
    cluster_size: usize,
}

#[derive(Serialize, Deserialize)]
struct PcacheHeader {
    format: String,
    dim: usize,
    n_classes: usize,
    target_id: String,
    anchor_class: usize,
    data: String,
    selected_sources: Vec<(String, f64)>,
    entries: Vec<PcacheRow>,
}

/// Serializes the cache as JSON metadata plus a raw `f32` blob (same layout
/// as the prototype store).
pub fn save_personalized_cache(cache: &PersonalizedSourceCache, json_path: &Path) -> Result<()> {
    let stem = json_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pcache".into());
    let data_name = format!("{stem}.f32");
    let mut rows = Vec::new();
    let mut vectors = Vec::new();
    for (class_index, list) in cache.per_class.iter().enumerate() {
        for p in list {
            rows.push(PcacheRow {
                class_index,
                row: vectors.len(),
                source_subject: p.source_subject.clone(),
                anchor_distance: p.anchor_distance,
                cluster_size: p.cluster_size,
            });
            vectors.push(p.vector.clone());
        }
    }
    let header = PcacheHeader {
        format: PCACHE_FORMAT.into(),
        dim: cache.dim(),
        n_classes: cache.n_classes(),
        target_id: cache.target_id.clone(),
        anchor_class: cache.anchor_class,
        data: data_name.clone(),
        selected_sources: cache.selected_sources.clone(),
        entries: rows,
    };
    store::write_json(json_path, &header)?;
    let blob = json_path
        .parent()
        .map(std::path::Path::to_path_buf)
        .unwrap_or_default()
        .join(&data_name);
    write_embedding_blob(&blob, &vectors)
}

pub fn load_personalized_cache(json_path: &Path) -> Result<PersonalizedSourceCache> {
    let header: PcacheHeader = store::read_json(json_path)?;
    expect_format(&header.format, PCACHE_FORMAT)?;
    let blob = json_path
        .parent()
        .map(std::path::Path::to_path_buf)
        .unwrap_or_default()
        .join(&header.data);
    let vectors = read_embedding_blob(&blob, header.entries.len(), header.dim)?;
    let mut per_class: Vec<Vec<PersonalizedPrototype>> = vec![Vec::new(); header.n_classes];
    for row in &header.entries {
        if row.class_index >= header.n_classes {
            return Err(Error::Validation(format!(
                "class index {} out of range",
                row.class_index
            )));
        }
        let vector = vectors
            .get(row.row)
            .cloned()
            .ok_or_else(|| Error::Validation(format!("blob row {} out of range", row.row)))?;
        per_class[row.class_index].push(PersonalizedPrototype {
            vector,
            source_subject: row.source_subject.clone(),
            anchor_distance: row.anchor_distance,
            cluster_size: row.cluster_size,
        });
    }
    if per_class.iter().any(Vec::is_empty) {
        return Err(Error::Validation(
            "personalized cache has a class with no prototypes".into(),
        ));
    }
    Ok(PersonalizedSourceCache {
        target_id: header.target_id,
        anchor_class: header.anchor_class,
        per_class,
        selected_sources: header.selected_sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{ProtoMeta, PrototypeEntry};
    use tempfile::TempDir;

    fn unit(v: &[f32]) -> Embedding {
        l2_normalize(&Embedding::new(v.to_vec()).unwrap()).0
    }

    fn stats(mean: &[f64], var: &[f64]) -> AnchorStats {
        AnchorStats {
            mean: mean.to_vec(),
            var: var.to_vec(),
        }
    }

    #[test]
    fn anchor_stats_hand_computed() {
        let s = anchor_stats(&[
            Embedding::new(vec![1.0, 0.0]).unwrap(),
            Embedding::new(vec![0.0, 1.0]).unwrap(),
        ])
        .unwrap();
        assert_eq!(s.mean, vec![0.5, 0.5]);
        assert_eq!(s.var, vec![0.25, 0.25]);
    }

    #[test]
    fn anchor_stats_single_sample_zero_variance() {
        let s = anchor_stats(&[Embedding::new(vec![0.3, -0.7]).unwrap()]).unwrap();
        assert!((s.mean[0] - 0.3).abs() < 1e-7);
        assert_eq!(s.var, vec![0.0, 0.0]);
    }

    #[test]
    fn anchor_stats_monte_carlo() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let (mu, sigma) = (0.4f64, 0.2f64);
        let n = 4000;
        let samples: Vec<Embedding> = (0..n)
            .map(|_| {
                let x: f64 = rng.sample(rand_distr::StandardNormal);
                Embedding::new(vec![(mu + sigma * x) as f32, 1.0]).unwrap()
            })
            .collect();
        let s = anchor_stats(&samples).unwrap();
        let tol = 3.0 * sigma / (n as f64).sqrt();
        assert!((s.mean[0] - mu).abs() < tol);
        assert!((s.var[0] - sigma * sigma).abs() < 3.0 * sigma * sigma / (n as f64).sqrt() * 2.0);
    }

    #[test]
    fn frechet_identity_and_symmetry() {
        let a = stats(&[0.1, -0.2], &[0.5, 0.0]);
        assert_eq!(frechet_diag(&a, &a).unwrap(), 0.0);
        let b = stats(&[0.7, 0.1], &[0.2, 0.9]);
        assert_eq!(
            frechet_diag(&a, &b).unwrap(),
            frechet_diag(&b, &a).unwrap()
        );
    }

    #[test]
    fn frechet_closed_form() {
        // d² = (3 − 0)² + (√1 − √4)² = 9 + 1 = 10.
        let a = stats(&[0.0], &[1.0]);
        let b = stats(&[3.0], &[4.0]);
        let d = frechet_diag(&a, &b).unwrap();
        assert!((d * d - 10.0).abs() <= 1e-12);
    }

    #[test]
    fn frechet_dimension_mismatch() {
        let a = stats(&[0.0], &[1.0]);
        let b = stats(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(frechet_diag(&a, &b).is_err());
    }

    #[test]
    fn rank_sources_orders_by_distance_then_id() {
        let target = stats(&[0.0], &[1.0]);
        let mut sources = BTreeMap::new();
        sources.insert("far".to_string(), stats(&[3.0], &[4.0])); // √10
        sources.insert("near".to_string(), stats(&[0.5], &[1.0])); // 0.5
        sources.insert("mid".to_string(), stats(&[2.0], &[1.0])); // 2
        let ranked = rank_sources(&target, &sources).unwrap();
        assert_eq!(ranked[0].0, "near");
        assert!((ranked[0].1 - 0.5).abs() < 1e-12);
        assert_eq!(ranked[1].0, "mid");
        assert!((ranked[1].1 - 2.0).abs() < 1e-12);
        assert_eq!(ranked[2].0, "far");
        assert!((ranked[2].1 - 10f64.sqrt()).abs() < 1e-12);

        // Identical stats tie by id.
        let mut tied = BTreeMap::new();
        tied.insert("b".to_string(), stats(&[0.0], &[1.0]));
        tied.insert("a".to_string(), stats(&[0.0], &[1.0]));
        let ranked = rank_sources(&target, &tied).unwrap();
        assert_eq!(ranked[0].0, "a");
        assert_eq!(ranked[0].1, 0.0);
    }

    fn toy_store() -> PrototypeStore {
        let mut store = PrototypeStore::new(2, 2, "dbscan");
        let entry = |v: &[f32], size: usize| PrototypeEntry {
            vector: unit(v),
            cluster_size: size,
            meta: ProtoMeta::default(),
        };
        // Subject A sits on the axes; subject B is rotated away.
        store.insert("A", 0, vec![entry(&[1.0, 0.0], 4)]).unwrap();
        store.insert("A", 1, vec![entry(&[0.0, 1.0], 4)]).unwrap();
        store.insert("B", 0, vec![entry(&[0.6, 0.8], 9)]).unwrap();
        store.insert("B", 1, vec![entry(&[-0.8, 0.6], 9)]).unwrap();
        store
    }

    #[test]
    fn build_cache_selects_nearest_subject() {
        let store = toy_store();
        // Target anchor frames match subject A's anchor-class prototype.
        let anchor = vec![unit(&[1.0, 0.0]), unit(&[1.0, 0.01])];
        let cache = build_personalized_cache("t", &anchor, &store, 0, 1, 0).unwrap();
        assert_eq!(cache.selected_sources().len(), 1);
        assert_eq!(cache.selected_sources()[0].0, "A");
        for c in 0..2 {
            for p in cache.class_prototypes(c) {
                assert_eq!(p.source_subject, "A");
            }
        }
    }

    #[test]
    fn build_cache_m_all_pools_everything() {
        let store = toy_store();
        let anchor = vec![unit(&[1.0, 0.0])];
        let cache = build_personalized_cache("t", &anchor, &store, 0, 2, 0).unwrap();
        assert_eq!(cache.len(), 4);
        assert_eq!(cache.selected_sources().len(), 2);
    }

    #[test]
    fn build_cache_monotone_in_m() {
        let store = toy_store();
        let anchor = vec![unit(&[1.0, 0.0])];
        let small = build_personalized_cache("t", &anchor, &store, 0, 1, 0).unwrap();
        let large = build_personalized_cache("t", &anchor, &store, 0, 2, 0).unwrap();
        let small_ids: Vec<&str> = small
            .selected_sources()
            .iter()
            .map(|(s, _)| s.as_str())
            .collect();
        let large_ids: Vec<&str> = large
            .selected_sources()
            .iter()
            .map(|(s, _)| s.as_str())
            .collect();
        assert_eq!(&large_ids[..small_ids.len()], &small_ids[..]);
    }

    #[test]
    fn cap_k_keeps_nearest_then_largest() {
        let mut store = PrototypeStore::new(2, 2, "dbscan");
        let entry = |v: &[f32], size: usize| PrototypeEntry {
            vector: unit(v),
            cluster_size: size,
            meta: ProtoMeta::default(),
        };
        store
            .insert("A", 0, vec![entry(&[1.0, 0.0], 2), entry(&[0.99, 0.14], 7)])
            .unwrap();
        store.insert("A", 1, vec![entry(&[0.0, 1.0], 4)]).unwrap();
        store.insert("B", 0, vec![entry(&[0.9, 0.43], 5)]).unwrap();
        store.insert("B", 1, vec![entry(&[0.1, 1.0], 4)]).unwrap();
        let anchor = vec![unit(&[1.0, 0.0])];
        let cache = build_personalized_cache("t", &anchor, &store, 0, 2, 2).unwrap();
        let class0 = cache.class_prototypes(0);
        assert_eq!(class0.len(), 2);
        // Both kept prototypes come from the nearer subject A, larger first.
        assert_eq!(class0[0].source_subject, "A");
        assert_eq!(class0[0].cluster_size, 7);
        assert_eq!(class0[1].source_subject, "A");
        assert_eq!(class0[1].cluster_size, 2);
    }

    #[test]
    fn cache_round_trip() {
        let store = toy_store();
        let anchor = vec![unit(&[1.0, 0.0])];
        let cache = build_personalized_cache("t", &anchor, &store, 0, 2, 0).unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("pcache.json");
        save_personalized_cache(&cache, &path).unwrap();
        let loaded = load_personalized_cache(&path).unwrap();
        assert_eq!(cache, loaded);
    }

    #[test]
    fn cache_serialization_is_deterministic() {
        let store = toy_store();
        let anchor = vec![unit(&[1.0, 0.0])];
        let mut bytes = Vec::new();
        for _ in 0..2 {
            let dir = TempDir::new().unwrap();
            let cache = build_personalized_cache("t", &anchor, &store, 0, 2, 0).unwrap();
            let path = dir.path().join("pcache.json");
            save_personalized_cache(&cache, &path).unwrap();
            bytes.push((
                std::fs::read(&path).unwrap(),
                std::fs::read(dir.path().join("pcache.f32")).unwrap(),
            ));
        }
        assert_eq!(bytes[0], bytes[1]);
    }
}

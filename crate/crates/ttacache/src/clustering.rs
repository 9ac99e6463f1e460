//! Offline per-(subject, class) prototype extraction: DBSCAN over cosine
//! distance with quality/stability parameter selection, medoid summarization,
//! and the k-means (k=1) baseline.
//!
//! Everything is deterministic: points are expanded in index order, bootstrap
//! subsamples are drawn from seeded generators, and all ties break toward the
//! lower index / lower parameter value.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{unit_cosine, Embedding, UNIT_NORM_TOL};
use crate::error::{Error, Result};
use crate::store::{self, Manifest, ProtoMeta, PrototypeEntry, PrototypeStore};

/// Label value marking noise points.
pub const NOISE: i64 = -1;
const UNVISITED: i64 = -2;

/// DBSCAN parameters: cosine-distance radius and core-point density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn new(eps: f64, min_pts: usize) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidInput(format!("eps must be > 0, got {eps}")));
        }
        if min_pts < 2 {
            return Err(Error::InvalidInput(format!(
                "min_pts must be >= 2, got {min_pts}"
            )));
        }
        Ok(Self { eps, min_pts })
    }
}

/// A labeling of the input points: cluster id per point or [`NOISE`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub labels: Vec<i64>,
    pub n_clusters: usize,
    pub outlier_rate: f64,
}

fn cosine_dist(a: &Embedding, b: &Embedding) -> f64 {
    1.0 - unit_cosine(a, b)
}

fn check_normalized(points: &[Embedding]) -> Result<()> {
    for (i, p) in points.iter().enumerate() {
        if (p.norm() - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidInput(format!(
                "point {i} is not unit-norm (norm = {})",
                p.norm()
            )));
        }
    }
    Ok(())
}

/// DBSCAN over cosine distance `1 − cos(a, b)`. A point is core iff its
/// eps-neighborhood (itself included) holds at least `min_pts` points.
/// Clusters are grown from the lowest-index unvisited core point with a FIFO
/// seed queue, so the labeling is deterministic in the input order.
pub fn dbscan(points: &[Embedding], params: &DbscanParams) -> Result<ClusterResult> {
    check_normalized(points)?;
    let n = points.len();
    if n == 0 {
        return Ok(ClusterResult {
            labels: Vec::new(),
            n_clusters: 0,
            outlier_rate: 0.0,
        });
    }
    let neighborhood = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| cosine_dist(&points[i], &points[j]) <= params.eps)
            .collect()
    };
    let core: Vec<bool> = (0..n)
        .map(|i| neighborhood(i).len() >= params.min_pts)
        .collect();

    let mut labels = vec![UNVISITED; n];
    let mut cluster = 0i64;
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        if !core[i] {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = cluster;
        let mut queue: VecDeque<usize> = neighborhood(i).into_iter().filter(|&j| j != i).collect();
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE {
                labels[q] = cluster; // border point reclaimed from noise
                continue;
            }
            if labels[q] != UNVISITED {
                continue;
            }
            labels[q] = cluster;
            if core[q] {
                queue.extend(neighborhood(q));
            }
        }
        cluster += 1;
    }

    let noise = labels.iter().filter(|&&l| l == NOISE).count();
    Ok(ClusterResult {
        labels,
        n_clusters: cluster as usize,
        outlier_rate: noise as f64 / n as f64,
    })
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same points. Label values
/// are compared literally, so [`NOISE`] acts as one extra label. When both
/// partitions are degenerate in the same way (all-singletons or one block),
/// the index is 1.
pub fn adjusted_rand_index(a: &[i64], b: &[i64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "labelings differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "need at least 2 points for the adjusted Rand index".into(),
        ));
    }
    let mut contingency: HashMap<(i64, i64), u64> = HashMap::new();
    let mut rows: HashMap<i64, u64> = HashMap::new();
    let mut cols: HashMap<i64, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *contingency.entry((x, y)).or_insert(0) += 1;
        *rows.entry(x).or_insert(0) += 1;
        *cols.entry(y).or_insert(0) += 1;
    }
    let index: f64 = contingency.values().map(|&c| comb2(c as f64)).sum();
    let sum_a: f64 = rows.values().map(|&c| comb2(c as f64)).sum();
    let sum_b: f64 = cols.values().map(|&c| comb2(c as f64)).sum();
    let total = comb2(n as f64);
    // Integer form of (index − expected)/(max − expected): every product is
    // an exact (half-)integer at these scales, so the one division is
    // correctly rounded — e.g. the [0,0,1,1] vs [0,1,0,1] case is −0.5 exact.
    let numerator = index * total - sum_a * sum_b;
    let denominator = 0.5 * (sum_a + sum_b) * total - sum_a * sum_b;
    if denominator == 0.0 {
        // Both partitions degenerate identically (all singletons / one block).
        return Ok(1.0);
    }
    Ok(numerator / denominator)
}

/// Bootstrap protocol for stability scoring.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BootstrapSpec {
    /// Fraction of points per subsample (without replacement).
    pub rate: f64,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            rate: 0.8,
            rounds: 10,
            seed: 0,
        }
    }
}

/// Quality thresholds deciding which candidates count as usable clusterings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ValidityThresholds {
    pub max_outlier_rate: f64,
    pub min_clusters: usize,
    pub max_clusters: usize,
}

impl Default for ValidityThresholds {
    fn default() -> Self {
        Self {
            max_outlier_rate: 0.5,
            min_clusters: 1,
            max_clusters: 10,
        }
    }
}

/// One evaluated grid candidate.
#[derive(Debug, Clone)]
pub struct CandidateReport {
    pub params: DbscanParams,
    pub outlier_rate: f64,
    pub n_clusters: usize,
    pub mean_ari: f64,
    pub valid: bool,
}

/// Outcome of the parameter search over a grid.
#[derive(Debug, Clone)]
pub struct ParamSearchReport {
    pub candidates: Vec<CandidateReport>,
    pub chosen: DbscanParams,
    pub fallback_used: bool,
}

/// Splitmix-style mixing for deriving independent stream seeds.
pub(crate) fn derive_seed(base: u64, salt_a: u64, salt_b: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(salt_a.wrapping_add(1)))
        .wrapping_add(0xbf58_476d_1ce4_e5b9u64.wrapping_mul(salt_b.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Evaluates each grid candidate for quality (outlier rate, cluster count)
/// and stability (mean ARI over seeded bootstrap subsamples vs. the full-run
/// labels, noise counting as its own label). Picks the valid candidate with
/// the highest mean ARI; ties break by lower eps then lower min_pts. A grid
/// with no valid candidate sets `fallback_used`.
///
/// Candidates with fewer than `2 · min_pts` points are never valid (too few
/// samples to cluster meaningfully).
pub fn select_params(
    points: &[Embedding],
    grid: &[DbscanParams],
    bootstrap: &BootstrapSpec,
    thresholds: &ValidityThresholds,
) -> Result<ParamSearchReport> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty parameter grid".into()));
    }
    if !(bootstrap.rate > 0.0 && bootstrap.rate <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "bootstrap rate must be in (0, 1], got {}",
            bootstrap.rate
        )));
    }
    if bootstrap.rounds == 0 {
        return Err(Error::InvalidInput("bootstrap rounds must be >= 1".into()));
    }
    let n = points.len();
    let mut candidates = Vec::with_capacity(grid.len());
    for (ci, params) in grid.iter().enumerate() {
        let full = dbscan(points, params)?;
        let structurally_valid = n >= 2 * params.min_pts
            && full.outlier_rate <= thresholds.max_outlier_rate
            && full.n_clusters >= thresholds.min_clusters
            && full.n_clusters <= thresholds.max_clusters;
        let mut mean_ari = 0.0;
        if structurally_valid {
            let m = ((bootstrap.rate * n as f64).ceil() as usize).clamp(2, n);
            let mut total = 0.0;
            for round in 0..bootstrap.rounds {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(bootstrap.seed, ci as u64, round as u64));
                let mut idx: Vec<usize> = sample_indices(&mut rng, n, m).into_vec();
                idx.sort_unstable();
                let sub_points: Vec<Embedding> =
                    idx.iter().map(|&i| points[i].clone()).collect();
                let sub = dbscan(&sub_points, params)?;
                let full_restricted: Vec<i64> = idx.iter().map(|&i| full.labels[i]).collect();
                total += adjusted_rand_index(&sub.labels, &full_restricted)?;
            }
            mean_ari = total / bootstrap.rounds as f64;
        }
        candidates.push(CandidateReport {
            params: *params,
            outlier_rate: full.outlier_rate,
            n_clusters: full.n_clusters,
            mean_ari,
            valid: structurally_valid,
        });
    }

    let chosen = candidates
        .iter()
        .filter(|c| c.valid)
        .min_by(|a, b| {
            (-a.mean_ari, a.params.eps, a.params.min_pts)
                .partial_cmp(&(-b.mean_ari, b.params.eps, b.params.min_pts))
                .expect("ARI and parameters are finite")
        })
        .map(|c| c.params);
    Ok(ParamSearchReport {
        chosen: chosen.unwrap_or(grid[0]),
        fallback_used: chosen.is_none(),
        candidates,
    })
}

/// One medoid per non-noise cluster: the member maximizing summed cosine
/// similarity to its cluster (ties: lowest index). Without any cluster, falls
/// back to the single sample most aligned with the arithmetic mean.
pub fn extract_prototypes(
    points: &[Embedding],
    clusters: &ClusterResult,
) -> Result<Vec<PrototypeEntry>> {
    if points.is_empty() {
        return Err(Error::InvalidInput(
            "cannot extract prototypes from no points".into(),
        ));
    }
    if points.len() != clusters.labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} points vs {} labels",
            points.len(),
            clusters.labels.len()
        )));
    }
    if clusters.n_clusters == 0 {
        return Ok(vec![nearest_to_mean(points, true)]);
    }
    let mut entries = Vec::with_capacity(clusters.n_clusters);
    for cluster_id in 0..clusters.n_clusters as i64 {
        let members: Vec<usize> = (0..points.len())
            .filter(|&i| clusters.labels[i] == cluster_id)
            .collect();
        let mut best = members[0];
        let mut best_score = f64::NEG_INFINITY;
        for &i in &members {
            let score: f64 = members
                .iter()
                .map(|&j| unit_cosine(&points[i], &points[j]))
                .sum();
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        entries.push(PrototypeEntry {
            vector: points[best].clone(),
            cluster_size: members.len(),
            meta: ProtoMeta::default(),
        });
    }
    Ok(entries)
}

/// The k-means (k=1) baseline: the sample with maximal cosine similarity to
/// the normalized mean (ties: lowest index).
pub fn kmeans_k1_prototype(points: &[Embedding]) -> Result<PrototypeEntry> {
    if points.is_empty() {
        return Err(Error::InvalidInput(
            "cannot pick a prototype from no points".into(),
        ));
    }
    Ok(nearest_to_mean(points, false))
}

fn nearest_to_mean(points: &[Embedding], fallback: bool) -> PrototypeEntry {
    let dim = points[0].dim();
    let mut mean = vec![0.0f64; dim];
    for p in points {
        for (m, &v) in mean.iter_mut().zip(p.values()) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= points.len() as f64;
    }
    let mean_norm = mean.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let mut best = 0;
    if mean_norm > crate::core::DEGENERATE_NORM {
        let mut best_score = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let score: f64 = mean
                .iter()
                .zip(p.values())
                .map(|(&m, &v)| m * v as f64)
                .sum::<f64>()
                / mean_norm;
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
    }
    PrototypeEntry {
        vector: points[best].clone(),
        cluster_size: points.len(),
        meta: ProtoMeta {
            fallback,
            ..ProtoMeta::default()
        },
    }
}

/// Which prototype extractor backs the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extractor {
    Dbscan,
    Kmeans1,
}

impl Extractor {
    pub fn name(&self) -> &'static str {
        match self {
            Extractor::Dbscan => "dbscan",
            Extractor::Kmeans1 => "kmeans1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dbscan" => Ok(Extractor::Dbscan),
            "kmeans1" => Ok(Extractor::Kmeans1),
            other => Err(Error::InvalidInput(format!(
                "unknown extractor {other:?} (expected dbscan or kmeans1)"
            ))),
        }
    }
}

/// Grid construction and bootstrap settings for the offline build.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    /// Explicit eps grid; empty means "derive from pairwise-distance
    /// quantiles 0.1..0.9 of a seeded subsample".
    pub eps_grid: Vec<f64>,
    pub min_pts_grid: Vec<usize>,
    pub bootstrap_rate: f64,
    pub bootstrap_rounds: usize,
    pub max_outlier_rate: f64,
    pub min_clusters: usize,
    pub max_clusters: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            eps_grid: Vec::new(),
            min_pts_grid: vec![3, 5, 10],
            bootstrap_rate: 0.8,
            bootstrap_rounds: 10,
            max_outlier_rate: 0.5,
            min_clusters: 1,
            max_clusters: 10,
        }
    }
}

impl ClusteringConfig {
    pub fn thresholds(&self) -> ValidityThresholds {
        ValidityThresholds {
            max_outlier_rate: self.max_outlier_rate,
            min_clusters: self.min_clusters,
            max_clusters: self.max_clusters,
        }
    }
}

/// Eps candidates from distance quantiles of a (seeded) subsample of points.
fn auto_eps_grid(points: &[Embedding], seed: u64) -> Vec<f64> {
    const MAX_SAMPLE: usize = 128;
    let n = points.len();
    let subset: Vec<usize> = if n <= MAX_SAMPLE {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xA5, 0));
        let mut idx = sample_indices(&mut rng, n, MAX_SAMPLE).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut dists = Vec::with_capacity(subset.len() * (subset.len().saturating_sub(1)) / 2);
    for (a, &i) in subset.iter().enumerate() {
        for &j in subset.iter().skip(a + 1) {
            dists.push(cosine_dist(&points[i], &points[j]));
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut grid = Vec::new();
    if !dists.is_empty() {
        for k in 1..=9usize {
            let q = k as f64 / 10.0;
            let idx = ((q * dists.len() as f64).ceil() as usize)
                .saturating_sub(1)
                .min(dists.len() - 1);
            let eps = dists[idx];
            if eps > 0.0 && grid.last().map(|&g: &f64| (eps - g).abs() > 1e-12).unwrap_or(true) {
                grid.push(eps);
            }
        }
    }
    if grid.is_empty() {
        // Identical or near-identical points: any small radius groups them.
        grid = vec![0.05, 0.1, 0.2];
    }
    grid
}

/// Collects every labeled source frame per (subject, class index), L2 input
/// validation included.
fn source_frames_by_class(
    manifest: &Manifest,
) -> Result<BTreeMap<(String, usize), Vec<Embedding>>> {
    let mut grouped: BTreeMap<(String, usize), Vec<Embedding>> = BTreeMap::new();
    for subject in manifest.sources() {
        for video in &subject.videos {
            let frame_labels = video.frame_labels.as_ref().ok_or_else(|| {
                Error::Validation(format!(
                    "source subject {:?} video {:?} has no frame_labels",
                    subject.id, video.id
                ))
            })?;
            let frames = store::load_embeddings(manifest, video)?;
            for (frame, label) in frames.into_iter().zip(frame_labels) {
                let class_index = manifest
                    .classes
                    .index_of(label)
                    .expect("labels validated by load_manifest");
                let (unit, degenerate) = crate::core::l2_normalize(&frame);
                if degenerate {
                    return Err(Error::DegenerateInput(format!(
                        "zero-norm frame in subject {:?} video {:?}",
                        subject.id, video.id
                    )));
                }
                grouped
                    .entry((subject.id.clone(), class_index))
                    .or_default()
                    .push(unit);
            }
        }
    }
    Ok(grouped)
}

/// Builds the full prototype store for every (source subject, class) pair.
/// Jobs are independent; with `jobs > 1` they fan out over a scoped thread
/// pool and results are collated in (subject, class) order.
pub fn build_prototype_store(
    manifest: &Manifest,
    cfg: &ClusteringConfig,
    extractor: Extractor,
    seed: u64,
    jobs: usize,
) -> Result<PrototypeStore> {
    if manifest.sources().next().is_none() {
        return Err(Error::Validation("manifest has no source subjects".into()));
    }
    let grouped = source_frames_by_class(manifest)?;
    for subject in manifest.sources() {
        for c in 0..manifest.classes.len() {
            if !grouped.contains_key(&(subject.id.clone(), c)) {
                return Err(Error::Validation(format!(
                    "source subject {:?} has no frames labeled {:?}",
                    subject.id,
                    manifest.classes.label(c)
                )));
            }
        }
    }

    let jobs_list: Vec<(&(String, usize), &Vec<Embedding>)> = grouped.iter().collect();
    let run_one = |((subject, class_index), points): &(&(String, usize), &Vec<Embedding>)| -> Result<(
        String,
        usize,
        Vec<PrototypeEntry>,
        Option<store::SearchRecord>,
    )> {
        match extractor {
            Extractor::Kmeans1 => {
                let entry = kmeans_k1_prototype(points)?;
                Ok((subject.clone(), *class_index, vec![entry], None))
            }
            Extractor::Dbscan => {
                let job_seed = derive_seed(seed, hash_str(subject), *class_index as u64);
                let eps_grid = if cfg.eps_grid.is_empty() {
                    auto_eps_grid(points, job_seed)
                } else {
                    cfg.eps_grid.clone()
                };
                let mut grid = Vec::new();
                for &eps in &eps_grid {
                    for &min_pts in &cfg.min_pts_grid {
                        grid.push(DbscanParams::new(eps, min_pts)?);
                    }
                }
                let report = select_params(
                    points,
                    &grid,
                    &BootstrapSpec {
                        rate: cfg.bootstrap_rate,
                        rounds: cfg.bootstrap_rounds,
                        seed: job_seed,
                    },
                    &cfg.thresholds(),
                )?;
                let mut entries = if report.fallback_used {
                    let all_noise = ClusterResult {
                        labels: vec![NOISE; points.len()],
                        n_clusters: 0,
                        outlier_rate: 1.0,
                    };
                    extract_prototypes(points, &all_noise)?
                } else {
                    let clusters = dbscan(points, &report.chosen)?;
                    extract_prototypes(points, &clusters)?
                };
                let stability = report
                    .candidates
                    .iter()
                    .find(|c| c.valid && c.params == report.chosen)
                    .map(|c| c.mean_ari)
                    .unwrap_or(0.0);
                for e in &mut entries {
                    if !e.meta.fallback {
                        e.meta = ProtoMeta {
                            eps: report.chosen.eps,
                            min_pts: report.chosen.min_pts,
                            stability,
                            fallback: false,
                        };
                    }
                }
                let record = store::SearchRecord {
                    subject: subject.clone(),
                    class_index: *class_index,
                    chosen_eps: report.chosen.eps,
                    chosen_min_pts: report.chosen.min_pts,
                    fallback_used: report.fallback_used,
                    candidates: report
                        .candidates
                        .iter()
                        .map(|c| store::CandidateRecord {
                            eps: c.params.eps,
                            min_pts: c.params.min_pts,
                            outlier_rate: c.outlier_rate,
                            n_clusters: c.n_clusters,
                            mean_ari: c.mean_ari,
                            valid: c.valid,
                        })
                        .collect(),
                };
                Ok((subject.clone(), *class_index, entries, Some(record)))
            }
        }
    };

    let results: Vec<_> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            jobs_list.par_iter().map(run_one).collect::<Vec<_>>()
        })
    } else {
        jobs_list.iter().map(run_one).collect()
    };

    let mut out = PrototypeStore::new(manifest.dim, manifest.classes.len(), extractor.name());
    for result in results {
        let (subject, class_index, entries, record) = result?;
        out.insert(&subject, class_index, entries)?;
        if let Some(record) = record {
            out.push_report(record);
        }
    }
    out.validate_coverage()?;
    Ok(out)
}

fn hash_str(s: &str) -> u64 {
    // FNV-1a; stable across platforms and runs.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::l2_normalize;
    use rand::Rng;

    fn unit(v: &[f32]) -> Embedding {
        l2_normalize(&Embedding::new(v.to_vec()).unwrap()).0
    }

    /// Textbook DBSCAN (region queries recomputed on the fly) used as the
    /// independent reference for the main implementation.
    pub(crate) fn reference_dbscan(points: &[Embedding], params: &DbscanParams) -> Vec<i64> {
        const UNCLASSIFIED: i64 = -2;
        let n = points.len();
        let region = |i: usize| -> Vec<usize> {
            (0..n)
                .filter(|&j| 1.0 - unit_cosine(&points[i], &points[j]) <= params.eps)
                .collect()
        };
        let mut labels = vec![UNCLASSIFIED; n];
        let mut cluster = 0i64;
        for i in 0..n {
            if labels[i] != UNCLASSIFIED {
                continue;
            }
            let seeds = region(i);
            if seeds.len() < params.min_pts {
                labels[i] = NOISE;
                continue;
            }
            let mut queue: VecDeque<usize> = VecDeque::new();
            for &s in &seeds {
                if labels[s] == UNCLASSIFIED || labels[s] == NOISE {
                    labels[s] = cluster;
                    if s != i {
                        queue.push_back(s);
                    }
                }
            }
            while let Some(q) = queue.pop_front() {
                let result = region(q);
                if result.len() >= params.min_pts {
                    for r in result {
                        if labels[r] == NOISE {
                            labels[r] = cluster;
                        } else if labels[r] == UNCLASSIFIED {
                            labels[r] = cluster;
                            queue.push_back(r);
                        }
                    }
                }
            }
            cluster += 1;
        }
        labels
    }

    pub(crate) fn random_unit_points(
        rng: &mut impl Rng,
        n: usize,
        dim: usize,
    ) -> Vec<Embedding> {
        (0..n)
            .map(|_| {
                let v: Vec<f32> = (0..dim)
                    .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) as f32)
                    .collect();
                let e = Embedding::new(v).unwrap();
                let (u, degenerate) = l2_normalize(&e);
                assert!(!degenerate);
                u
            })
            .collect()
    }

    #[test]
    fn dbscan_two_tight_orthogonal_clusters() {
        let mut points = Vec::new();
        for k in 0..10 {
            let t = k as f32 * 1e-4;
            points.push(unit(&[1.0, t, 0.0]));
            points.push(unit(&[t, 0.0, 1.0]));
        }
        let result = dbscan(&points, &DbscanParams::new(0.1, 3).unwrap()).unwrap();
        assert_eq!(result.n_clusters, 2);
        assert_eq!(result.outlier_rate, 0.0);
        let reference = reference_dbscan(&points, &DbscanParams::new(0.1, 3).unwrap());
        assert_eq!(result.labels, reference);
    }

    #[test]
    fn dbscan_single_point_is_noise() {
        let result = dbscan(&[unit(&[1.0, 0.0])], &DbscanParams::new(0.1, 2).unwrap()).unwrap();
        assert_eq!(result.n_clusters, 0);
        assert_eq!(result.outlier_rate, 1.0);
        assert_eq!(result.labels, vec![NOISE]);
    }

    #[test]
    fn dbscan_identical_points_single_cluster() {
        let points = vec![unit(&[0.6, 0.8]); 5];
        let result = dbscan(&points, &DbscanParams::new(0.01, 3).unwrap()).unwrap();
        assert_eq!(result.n_clusters, 1);
        assert_eq!(result.outlier_rate, 0.0);
    }

    #[test]
    fn dbscan_empty_input() {
        let result = dbscan(&[], &DbscanParams::new(0.1, 2).unwrap()).unwrap();
        assert_eq!(result.n_clusters, 0);
        assert_eq!(result.outlier_rate, 0.0);
    }

    #[test]
    fn dbscan_matches_reference_on_random_inputs() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let n = rng.random_range(1..=48);
            let dim = rng.random_range(2..=6);
            let points = random_unit_points(&mut rng, n, dim);
            let params = DbscanParams::new(
                rng.random_range(0.01..1.5),
                rng.random_range(2..=6),
            )
            .unwrap();
            let ours = dbscan(&points, &params).unwrap();
            let reference = reference_dbscan(&points, &params);
            assert_eq!(ours.labels, reference, "params {params:?} n {n}");
        }
    }

    #[test]
    fn dbscan_rotation_invariant() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points = random_unit_points(&mut rng, 24, 3);
        let params = DbscanParams::new(0.4, 3).unwrap();
        let base = dbscan(&points, &params).unwrap();
        // A fixed rotation in the (0, 1) plane plus an axis swap.
        let theta = 0.7f64;
        let rotated: Vec<Embedding> = points
            .iter()
            .map(|p| {
                let v = p.values();
                let (x, y, z) = (v[0] as f64, v[1] as f64, v[2] as f64);
                let rx = x * theta.cos() - y * theta.sin();
                let ry = x * theta.sin() + y * theta.cos();
                unit(&[rx as f32, z as f32, ry as f32])
            })
            .collect();
        let after = dbscan(&rotated, &params).unwrap();
        assert_eq!(base.labels, after.labels);
    }

    #[test]
    fn ari_identical_and_relabelled() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn ari_hand_computed_negative() {
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert_eq!(v, -0.5);
    }

    #[test]
    fn ari_length_mismatch_errors() {
        assert!(adjusted_rand_index(&[0, 1], &[0, 1, 2]).is_err());
    }

    /// Brute-force pair-counting ARI used as the independent oracle.
    pub(crate) fn pair_counting_ari(a: &[i64], b: &[i64]) -> f64 {
        let n = a.len();
        let (mut n11, mut n00, mut n10, mut n01) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..n {
            for j in (i + 1)..n {
                let same_a = a[i] == a[j];
                let same_b = b[i] == b[j];
                match (same_a, same_b) {
                    (true, true) => n11 += 1.0,
                    (true, false) => n10 += 1.0,
                    (false, true) => n01 += 1.0,
                    (false, false) => n00 += 1.0,
                }
            }
        }
        let denom = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00);
        if denom == 0.0 {
            return 1.0;
        }
        2.0 * (n11 * n00 - n10 * n01) / denom
    }

    #[test]
    fn ari_matches_pair_counting_oracle() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(2..=12);
            let a: Vec<i64> = (0..n).map(|_| rng.random_range(-1..3)).collect();
            let b: Vec<i64> = (0..n).map(|_| rng.random_range(-1..3)).collect();
            let ours = adjusted_rand_index(&a, &b).unwrap();
            let oracle = pair_counting_ari(&a, &b);
            assert!((ours - oracle).abs() <= 1e-12, "a {a:?} b {b:?}");
            assert!((-1.0..=1.0 + 1e-12).contains(&ours));
            let sym = adjusted_rand_index(&b, &a).unwrap();
            assert!((ours - sym).abs() <= 1e-12);
        }
    }

    #[test]
    fn select_params_recovers_two_clusters() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut points = Vec::new();
        for _ in 0..20 {
            let mut jitter = || rng.random_range(-0.02f32..0.02);
            points.push(unit(&[1.0 + jitter(), jitter(), jitter()]));
        }
        for _ in 0..20 {
            let mut jitter = || rng.random_range(-0.02f32..0.02);
            points.push(unit(&[jitter(), 1.0 + jitter(), jitter()]));
        }
        let grid = vec![
            DbscanParams::new(0.02, 3).unwrap(),
            DbscanParams::new(0.3, 3).unwrap(),
            DbscanParams::new(1.9, 3).unwrap(),
        ];
        let report = select_params(
            &points,
            &grid,
            &BootstrapSpec {
                rate: 0.8,
                rounds: 10,
                seed: 1,
            },
            &ValidityThresholds::default(),
        )
        .unwrap();
        assert!(!report.fallback_used);
        let chosen = report
            .candidates
            .iter()
            .find(|c| c.params == report.chosen)
            .unwrap();
        assert_eq!(chosen.n_clusters, 2);
        assert!(chosen.mean_ari >= 0.9, "mean ARI {}", chosen.mean_ari);
    }

    #[test]
    fn select_params_uniform_noise_mostly_falls_back() {
        use rand::SeedableRng;
        // On sparse uniform directions a tight radius finds nothing and a huge
        // one finds a single blob; the mid grid should usually be invalid.
        let mut fallbacks = 0;
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points = random_unit_points(&mut rng, 24, 16);
            let grid = vec![
                DbscanParams::new(0.05, 5).unwrap(),
                DbscanParams::new(0.1, 5).unwrap(),
            ];
            let report = select_params(
                &points,
                &grid,
                &BootstrapSpec {
                    rate: 0.8,
                    rounds: 5,
                    seed,
                },
                &ValidityThresholds::default(),
            )
            .unwrap();
            if report.fallback_used {
                fallbacks += 1;
            }
        }
        assert!(fallbacks >= 4, "only {fallbacks}/5 runs fell back");
    }

    #[test]
    fn select_params_empty_grid_errors() {
        let points = vec![unit(&[1.0, 0.0]); 8];
        assert!(select_params(
            &points,
            &[],
            &BootstrapSpec::default(),
            &ValidityThresholds::default()
        )
        .is_err());
    }

    #[test]
    fn select_params_deterministic_given_seed() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let points = random_unit_points(&mut rng, 40, 4);
        let grid = vec![
            DbscanParams::new(0.2, 3).unwrap(),
            DbscanParams::new(0.5, 3).unwrap(),
        ];
        let spec = BootstrapSpec {
            rate: 0.8,
            rounds: 6,
            seed: 99,
        };
        let a = select_params(&points, &grid, &spec, &ValidityThresholds::default()).unwrap();
        let b = select_params(&points, &grid, &spec, &ValidityThresholds::default()).unwrap();
        assert_eq!(a.chosen, b.chosen);
        for (x, y) in a.candidates.iter().zip(&b.candidates) {
            assert_eq!(x.mean_ari, y.mean_ari);
        }
    }

    #[test]
    fn medoid_of_arc_is_middle_point() {
        let points = vec![unit(&[1.0, 0.0]), unit(&[0.99, 0.14]), unit(&[0.96, 0.28])];
        let clusters = ClusterResult {
            labels: vec![0, 0, 0],
            n_clusters: 1,
            outlier_rate: 0.0,
        };
        let entries = extract_prototypes(&points, &clusters).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].vector, points[1]);
        assert_eq!(entries[0].cluster_size, 3);
        // Brute-force check: the middle point maximizes summed similarity.
        let sums: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| unit_cosine(&points[i], &points[j])).sum())
            .collect();
        assert!(sums[1] >= sums[0] && sums[1] >= sums[2]);
    }

    #[test]
    fn all_noise_falls_back_to_nearest_mean() {
        let points = vec![unit(&[1.0, 0.1]), unit(&[1.0, -0.1]), unit(&[0.9, 0.0])];
        let clusters = ClusterResult {
            labels: vec![NOISE; 3],
            n_clusters: 0,
            outlier_rate: 1.0,
        };
        let entries = extract_prototypes(&points, &clusters).unwrap();
        assert_eq!(entries.len(), 1);
        assert!(entries[0].meta.fallback);
        assert_eq!(entries[0].cluster_size, 3);
        assert_eq!(entries[0].vector, points[2]); // exactly on the mean direction
    }

    #[test]
    fn prototypes_are_members_of_input() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let points = random_unit_points(&mut rng, 30, 4);
        let clusters = dbscan(&points, &DbscanParams::new(0.8, 3).unwrap()).unwrap();
        let entries = extract_prototypes(&points, &clusters).unwrap();
        for e in entries {
            assert!(points.iter().any(|p| *p == e.vector));
        }
    }

    #[test]
    fn kmeans1_tie_takes_lowest_index() {
        let points = vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0])];
        let entry = kmeans_k1_prototype(&points).unwrap();
        assert_eq!(entry.vector, points[0]);
        assert_eq!(entry.cluster_size, 2);
    }

    #[test]
    fn kmeans1_single_point() {
        let points = vec![unit(&[0.3, 0.7])];
        let entry = kmeans_k1_prototype(&points).unwrap();
        assert_eq!(entry.vector, points[0]);
    }

    #[test]
    fn kmeans1_central_member_wins() {
        let points = vec![unit(&[1.0, 0.3]), unit(&[1.0, 0.0]), unit(&[1.0, -0.3])];
        let entry = kmeans_k1_prototype(&points).unwrap();
        assert_eq!(entry.vector, points[1]);
    }
}

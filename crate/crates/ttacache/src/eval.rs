//! Metrics (WAR, UAR, weighted/macro F1), reliability diagrams with expected
//! calibration error, gate-cascade pass-rate accounting, and the ablation
//! runner.

use serde::{Deserialize, Serialize};

use crate::clustering::{build_prototype_store, ClusteringConfig, Extractor};
use crate::core::ClassAnchors;
use crate::engine::{run_subject, EngineConfig, FrameDecision};
use crate::error::{Error, Result};
use crate::gates::{Admission, EntropyMode, GateToggles};
use crate::personalize::build_cache_from_manifest;
use crate::store::Manifest;

/// Rows are truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, prediction: usize) {
        self.counts[truth][prediction] += 1;
    }

    pub fn count(&self, truth: usize, prediction: usize) -> u64 {
        self.counts[truth][prediction]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::InvalidInput("empty confusion matrix".into()));
        }
        Ok(())
    }

    /// Weighted average recall = overall accuracy = trace / total.
    pub fn war(&self) -> Result<f64> {
        self.check_nonempty()?;
        let trace: u64 = (0..self.n_classes()).map(|c| self.counts[c][c]).sum();
        Ok(trace as f64 / self.total() as f64)
    }

    /// Unweighted (macro) average recall over classes with nonzero support.
    pub fn uar(&self) -> Result<f64> {
        self.check_nonempty()?;
        let mut sum = 0.0;
        let mut classes = 0;
        for c in 0..self.n_classes() {
            let support = self.support(c);
            if support > 0 {
                sum += self.counts[c][c] as f64 / support as f64;
                classes += 1;
            }
        }
        Ok(sum / classes as f64)
    }

    fn f1(&self, class: usize) -> f64 {
        let tp = self.counts[class][class] as f64;
        let precision = match self.predicted(class) {
            0 => 0.0,
            p => tp / p as f64,
        };
        let recall = match self.support(class) {
            0 => 0.0,
            s => tp / s as f64,
        };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }

    /// Support-weighted mean of per-class F1.
    pub fn weighted_f1(&self) -> Result<f64> {
        self.check_nonempty()?;
        let total = self.total() as f64;
        Ok((0..self.n_classes())
            .map(|c| self.support(c) as f64 / total * self.f1(c))
            .sum())
    }

    /// Unweighted mean of per-class F1 over classes with nonzero support.
    pub fn macro_f1(&self) -> Result<f64> {
        self.check_nonempty()?;
        let mut sum = 0.0;
        let mut classes = 0;
        for c in 0..self.n_classes() {
            if self.support(c) > 0 {
                sum += self.f1(c);
                classes += 1;
            }
        }
        Ok(sum / classes as f64)
    }
}

pub const RELIABILITY_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Ten equal-width confidence bins and the expected calibration error
/// `Σ (n_b/N)·|acc_b − conf_b|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
    pub total: usize,
}

/// Bins (confidence, correct) samples into `[0,0.1), …, [0.9,1.0]`.
pub fn reliability(samples: &[(f64, bool)]) -> ReliabilityReport {
    let mut counts = vec![0usize; RELIABILITY_BINS];
    let mut conf_sums = vec![0.0f64; RELIABILITY_BINS];
    let mut correct = vec![0usize; RELIABILITY_BINS];
    for &(confidence, is_correct) in samples {
        let b = ((confidence * RELIABILITY_BINS as f64) as usize).min(RELIABILITY_BINS - 1);
        counts[b] += 1;
        conf_sums[b] += confidence;
        if is_correct {
            correct[b] += 1;
        }
    }
    let n = samples.len();
    let mut bins = Vec::with_capacity(RELIABILITY_BINS);
    let mut ece = 0.0;
    for b in 0..RELIABILITY_BINS {
        let (mean_confidence, accuracy) = if counts[b] > 0 {
            (
                conf_sums[b] / counts[b] as f64,
                correct[b] as f64 / counts[b] as f64,
            )
        } else {
            (0.0, 0.0)
        };
        if n > 0 && counts[b] > 0 {
            ece += counts[b] as f64 / n as f64 * (accuracy - mean_confidence).abs();
        }
        bins.push(ReliabilityBin {
            count: counts[b],
            mean_confidence,
            accuracy,
        });
    }
    ReliabilityReport {
        bins,
        ece,
        total: n,
    }
}

/// Gate-cascade counters over a stream of frame decisions. `joint` counts
/// frames passing all three gates; under strict admission accounting,
/// `admitted_pos + admitted_neg == joint`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateStats {
    pub frames: u64,
    pub temporal_pass: u64,
    pub entropy_pass: u64,
    pub proto_reached: u64,
    pub proto_pass: u64,
    pub joint: u64,
    pub admitted_pos: u64,
    pub admitted_neg: u64,
}

impl GateStats {
    pub fn record(&mut self, decision: &FrameDecision) {
        self.frames += 1;
        let Some(gate) = &decision.gate else {
            return;
        };
        if gate.temporal_pass {
            self.temporal_pass += 1;
        }
        if gate.entropy_mode != EntropyMode::Reject {
            self.entropy_pass += 1;
        }
        if let Some(proto) = &gate.proto {
            self.proto_reached += 1;
            if proto.pass {
                self.proto_pass += 1;
            }
        }
        let proto_ok = gate.proto.as_ref().map(|p| p.pass).unwrap_or(true);
        if gate.temporal_pass && gate.entropy_mode != EntropyMode::Reject && proto_ok {
            self.joint += 1;
        }
        match decision.cache.admitted {
            Admission::Positive => self.admitted_pos += 1,
            Admission::Negative => self.admitted_neg += 1,
            Admission::None => {}
        }
    }

    pub fn merge(&mut self, other: &GateStats) {
        self.frames += other.frames;
        self.temporal_pass += other.temporal_pass;
        self.entropy_pass += other.entropy_pass;
        self.proto_reached += other.proto_reached;
        self.proto_pass += other.proto_pass;
        self.joint += other.joint;
        self.admitted_pos += other.admitted_pos;
        self.admitted_neg += other.admitted_neg;
    }

    /// Pass rates as percentages of all frames (prototype rate relative to
    /// the frames that reached it).
    pub fn rates(&self) -> GateRates {
        let pct = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                100.0 * num as f64 / den as f64
            }
        };
        GateRates {
            temporal: pct(self.temporal_pass, self.frames),
            entropy: pct(self.entropy_pass, self.frames),
            proto: pct(self.proto_pass, self.proto_reached),
            joint: pct(self.joint, self.frames),
            positive: pct(self.admitted_pos, self.frames),
            negative: pct(self.admitted_neg, self.frames),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRates {
    pub temporal: f64,
    pub entropy: f64,
    pub proto: f64,
    pub joint: f64,
    pub positive: f64,
    pub negative: f64,
}

/// Tallies gate counters over frame decisions.
pub fn gate_stats<'a>(decisions: impl IntoIterator<Item = &'a FrameDecision>) -> GateStats {
    let mut stats = GateStats::default();
    for d in decisions {
        stats.record(d);
    }
    stats
}

/// Which caches an ablation row runs with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheVariant {
    /// Zero-shot: no caches, fused logits equal base logits.
    None,
    /// Personalized source cache only; target caches never populate.
    StaticOnly,
    /// Target caches only; no source cache (prototype gate cannot run).
    DynamicOnly,
    Both,
}

/// One ablation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub temporal: bool,
    pub entropy: bool,
    pub proto: bool,
    pub caches: CacheVariant,
    pub extractor: Extractor,
}

impl AblationRow {
    fn full(name: &str) -> Self {
        Self {
            name: name.into(),
            temporal: true,
            entropy: true,
            proto: true,
            caches: CacheVariant::Both,
            extractor: Extractor::Dbscan,
        }
    }
}

/// A named list of ablation rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationGrid {
    pub rows: Vec<AblationRow>,
}

impl AblationGrid {
    /// The five gate-subset rows: entropy-only, temporal+entropy,
    /// temporal+proto, entropy+proto, full tri-gate.
    pub fn gate_subsets() -> Self {
        let mut rows = Vec::new();
        for (name, temporal, entropy, proto) in [
            ("entropy", false, true, false),
            ("temp+entropy", true, true, false),
            ("temp+proto", true, false, true),
            ("entropy+proto", false, true, true),
            ("tri-gate", true, true, true),
        ] {
            rows.push(AblationRow {
                temporal,
                entropy,
                proto,
                ..AblationRow::full(name)
            });
        }
        Self { rows }
    }

    /// The four cache variants: none, static-only, dynamic-only, both.
    pub fn cache_variants() -> Self {
        let mut rows = Vec::new();
        for (name, caches) in [
            ("no-caches", CacheVariant::None),
            ("static-only", CacheVariant::StaticOnly),
            ("dynamic-only", CacheVariant::DynamicOnly),
            ("static+dynamic", CacheVariant::Both),
        ] {
            rows.push(AblationRow {
                caches,
                ..AblationRow::full(name)
            });
        }
        Self { rows }
    }

    /// Prototype-extractor comparison: DBSCAN medoids vs k-means (k=1).
    pub fn extractors() -> Self {
        let mut kmeans = AblationRow::full("kmeans1");
        kmeans.extractor = Extractor::Kmeans1;
        Self {
            rows: vec![AblationRow::full("dbscan"), kmeans],
        }
    }
}

/// Personalization knobs used by eval/ablation drivers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PersonalizeParams {
    pub anchor_class: usize,
    pub top_m: usize,
    pub cap_k: usize,
}

impl Default for PersonalizeParams {
    fn default() -> Self {
        Self {
            anchor_class: 0,
            top_m: 3,
            cap_k: 0,
        }
    }
}

/// One (row, target) measurement; `target = "mean"` rows average a row's
/// targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationCell {
    pub row: String,
    pub target: String,
    pub n_videos: usize,
    pub war: f64,
    pub uar: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
}

/// Translates an ablation row into engine settings.
pub fn engine_config_for_row(base: &EngineConfig, row: &AblationRow) -> EngineConfig {
    let mut cfg = base.clone();
    cfg.gate_toggles = GateToggles {
        temporal: row.temporal,
        entropy: row.entropy,
        proto: row.proto,
    };
    match row.caches {
        CacheVariant::None => {
            cfg.use_source_cache = false;
            cfg.use_target_caches = false;
        }
        CacheVariant::StaticOnly => {
            cfg.use_source_cache = true;
            cfg.use_target_caches = false;
        }
        CacheVariant::DynamicOnly => {
            cfg.use_source_cache = false;
            cfg.use_target_caches = true;
        }
        CacheVariant::Both => {
            cfg.use_source_cache = true;
            cfg.use_target_caches = true;
        }
    }
    cfg
}

/// Scores one adapted target against manifest truth labels.
pub fn score_subject(
    manifest: &Manifest,
    target_id: &str,
    videos: &[crate::engine::VideoDecision],
) -> Result<ConfusionMatrix> {
    let subject = manifest.subject(target_id)?;
    let mut cm = ConfusionMatrix::new(manifest.classes.len());
    for video in videos {
        let record = subject
            .videos
            .iter()
            .find(|v| v.id == video.id)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "log references unknown video {:?} of subject {target_id:?}",
                    video.id
                ))
            })?;
        let label = record.label.as_ref().ok_or_else(|| {
            Error::Validation(format!(
                "video {:?} of subject {target_id:?} has no truth label",
                video.id
            ))
        })?;
        let truth = manifest
            .classes
            .index_of(label)
            .expect("labels validated by load_manifest");
        cm.record(truth, video.label);
    }
    Ok(cm)
}

/// Runs the full pipeline once per grid row (prototype build → per-target
/// personalization → online adaptation → metrics). Emits one cell per
/// (row, target) plus a `mean` cell per row, in deterministic order.
pub fn run_ablation(
    manifest: &Manifest,
    anchors: &ClassAnchors,
    grid: &AblationGrid,
    base_engine: &EngineConfig,
    clustering: &ClusteringConfig,
    personalize: &PersonalizeParams,
    seed: u64,
) -> Result<Vec<AblationCell>> {
    if grid.rows.is_empty() {
        return Err(Error::InvalidInput("ablation grid has no rows".into()));
    }
    let targets: Vec<String> = manifest.targets().map(|s| s.id.clone()).collect();
    if targets.is_empty() {
        return Err(Error::Validation("manifest has no target subjects".into()));
    }

    // Prototype stores are pure functions of the extractor, so rows share.
    let mut stores: std::collections::BTreeMap<&'static str, crate::store::PrototypeStore> =
        std::collections::BTreeMap::new();
    let mut cells = Vec::new();
    for row in &grid.rows {
        let needs_static = !matches!(row.caches, CacheVariant::None | CacheVariant::DynamicOnly);
        let cfg = engine_config_for_row(base_engine, row);
        cfg.validate()?;
        let store = if needs_static {
            if !stores.contains_key(row.extractor.name()) {
                let built = build_prototype_store(manifest, clustering, row.extractor, seed, 1)?;
                stores.insert(row.extractor.name(), built);
            }
            Some(&stores[row.extractor.name()])
        } else {
            None
        };
        let mut row_metrics: Vec<(f64, f64, f64, f64, usize)> = Vec::new();
        for target in &targets {
            let cache = match store {
                Some(store) => Some(build_cache_from_manifest(
                    manifest,
                    store,
                    target,
                    personalize.anchor_class,
                    personalize.top_m,
                    personalize.cap_k,
                )?),
                None => None,
            };
            let subject = manifest.subject(target)?;
            let run = run_subject(&cfg, manifest, subject, anchors, cache.as_ref())?;
            let cm = score_subject(manifest, target, &run.videos)?;
            let cell = AblationCell {
                row: row.name.clone(),
                target: target.clone(),
                n_videos: run.videos.len(),
                war: cm.war()?,
                uar: cm.uar()?,
                weighted_f1: cm.weighted_f1()?,
                macro_f1: cm.macro_f1()?,
            };
            row_metrics.push((
                cell.war,
                cell.uar,
                cell.weighted_f1,
                cell.macro_f1,
                cell.n_videos,
            ));
            cells.push(cell);
        }
        let n = row_metrics.len() as f64;
        cells.push(AblationCell {
            row: row.name.clone(),
            target: "mean".into(),
            n_videos: row_metrics.iter().map(|m| m.4).sum(),
            war: row_metrics.iter().map(|m| m.0).sum::<f64>() / n,
            uar: row_metrics.iter().map(|m| m.1).sum::<f64>() / n,
            weighted_f1: row_metrics.iter().map(|m| m.2).sum::<f64>() / n,
            macro_f1: row_metrics.iter().map(|m| m.3).sum::<f64>() / n,
        });
    }
    Ok(cells)
}

//! The online adaptation loop: temporal pooling, base prediction, tri-gate
//! cache update, retrieval, embedding-level fusion, fused classification, and
//! video aggregation, with a full per-frame trace.
//!
//! Step order is fixed: pool → base classify → tri-gate update → retrieve →
//! fuse → fused classify. Cache updates happen before retrieval, so an
//! admitted frame can retrieve itself within the same step.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::caches::{retrieve_source, CacheEntry, Polarity, TargetCache};
use crate::core::{
    argmax, classify, normalize_f64, softmax, ClassAnchors, Embedding, LogitVector,
};
use crate::error::{Error, Result};
use crate::gates::{tri_gate, Admission, GateConfig, GateToggles, GateVerdict};
use crate::personalize::PersonalizedSourceCache;
use crate::store::{self, Manifest, SubjectRecord};

/// Weights of the fusion combination `z + α_src·z_src + α_pos·z⁺ − α_neg·z⁻`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionWeights {
    pub src: f64,
    pub pos: f64,
    pub neg: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            src: 1.0,
            pos: 1.0,
            neg: 1.0,
        }
    }
}

/// Whether target caches survive across a subject's videos or reset per
/// video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheScope {
    Subject,
    Video,
}

/// Everything the online loop needs to know.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub gate: GateConfig,
    pub gate_toggles: GateToggles,
    pub pos_capacity: usize,
    pub neg_capacity: usize,
    pub retrieval_r: usize,
    pub fusion: FusionWeights,
    /// Temporal pooling window L; `None` follows the gate window W.
    pub pool_window: Option<usize>,
    /// Restrict negative retrieval to the current base prediction's bucket.
    pub neg_label_filter: bool,
    pub use_source_cache: bool,
    pub use_target_caches: bool,
    pub cache_scope: CacheScope,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            gate: GateConfig::default(),
            gate_toggles: GateToggles::default(),
            pos_capacity: 5,
            neg_capacity: 4,
            retrieval_r: 3,
            fusion: FusionWeights::default(),
            pool_window: None,
            neg_label_filter: false,
            use_source_cache: true,
            use_target_caches: true,
            cache_scope: CacheScope::Subject,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.gate.validate()?;
        if self.pos_capacity == 0 || self.neg_capacity == 0 {
            return Err(Error::InvalidInput("cache capacities must be >= 1".into()));
        }
        if self.retrieval_r == 0 {
            return Err(Error::InvalidInput("retrieval_r must be >= 1".into()));
        }
        if self.pool_window == Some(0) {
            return Err(Error::InvalidInput("pool_window must be >= 1".into()));
        }
        for (name, w) in [
            ("src", self.fusion.src),
            ("pos", self.fusion.pos),
            ("neg", self.fusion.neg),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "fusion weight {name} must be >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }

    pub fn effective_pool_window(&self) -> usize {
        self.pool_window.unwrap_or(self.gate.window_w)
    }
}

/// What the tri-gate did to the caches this frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheUpdate {
    pub admitted: Admission,
    pub seq: Option<u64>,
    pub evicted_seq: Option<u64>,
}

impl CacheUpdate {
    fn none() -> Self {
        Self {
            admitted: Admission::None,
            seq: None,
            evicted_seq: None,
        }
    }
}

/// Which fusion components were available this frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedFlags {
    pub src: bool,
    pub pos: bool,
    pub neg: bool,
}

/// Full per-frame trace, one JSON-lines record per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDecision {
    pub video: String,
    pub t: usize,
    /// Norm of the raw window mean before renormalization.
    pub pool_norm: f64,
    pub base_logits: LogitVector,
    pub base_label: usize,
    pub entropy: f64,
    /// `None` when target caches are disabled for the run.
    pub gate: Option<GateVerdict>,
    pub cache: CacheUpdate,
    pub retrieved: RetrievedFlags,
    pub fused_logits: LogitVector,
    pub fused_label: usize,
    pub fusion_fallback: bool,
}

/// Video-level aggregate: temporally averaged fused logits and their argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoDecision {
    pub id: String,
    pub n_frames: usize,
    pub mean_logits: LogitVector,
    pub label: usize,
    pub confidence: f64,
    pub frames: Vec<FrameDecision>,
}

/// Combines the pooled embedding with retrieved evidence
/// (`z + α_src·z_src + α_pos·z⁺ − α_neg·z⁻`, absent parts zero) and
/// L2-normalizes. A near-zero sum falls back to `z` with a flag.
pub fn fuse(
    z: &Embedding,
    z_src: Option<&Embedding>,
    z_pos: Option<&Embedding>,
    z_neg: Option<&Embedding>,
    weights: &FusionWeights,
) -> (Embedding, bool) {
    let dim = z.dim();
    let mut acc: Vec<f64> = z.values().iter().map(|&v| v as f64).collect();
    let mut add = |part: Option<&Embedding>, w: f64| {
        if let Some(p) = part {
            debug_assert_eq!(p.dim(), dim);
            for (a, &v) in acc.iter_mut().zip(p.values()) {
                *a += w * v as f64;
            }
        }
    };
    add(z_src, weights.src);
    add(z_pos, weights.pos);
    add(z_neg, -weights.neg);
    let (values, norm, _) = normalize_f64(&acc);
    if norm < 1e-9 {
        return (z.clone(), true);
    }
    (
        Embedding::new(values).expect("fusion of finite embeddings is finite"),
        false,
    )
}

/// Mean of the most recent window frames, L2-normalized. Returns the raw mean
/// norm alongside; errors when the mean is degenerate.
pub fn pool_window(frames: &[&Embedding]) -> Result<(Embedding, f64)> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidInput("pooling needs at least one frame".into()))?;
    let dim = first.dim();
    let mut acc = vec![0.0f64; dim];
    for f in frames {
        for (a, &v) in acc.iter_mut().zip(f.values()) {
            *a += v as f64;
        }
    }
    for a in &mut acc {
        *a /= frames.len() as f64;
    }
    let (values, norm, degenerate) = normalize_f64(&acc);
    if degenerate {
        return Err(Error::DegenerateInput(
            "window mean has zero norm; cannot pool".into(),
        ));
    }
    Ok((Embedding::new(values)?, norm))
}

/// One adaptation stream: owns the pooling buffer, the prediction history,
/// and both target caches. Anchors and the personalized cache are shared
/// immutable inputs.
pub struct Engine<'a> {
    anchors: &'a ClassAnchors,
    source: Option<&'a PersonalizedSourceCache>,
    cfg: EngineConfig,
    pool: VecDeque<Embedding>,
    history: Vec<usize>,
    pos: TargetCache,
    neg: TargetCache,
    next_seq: u64,
}

impl<'a> Engine<'a> {
    pub fn new(
        anchors: &'a ClassAnchors,
        source: Option<&'a PersonalizedSourceCache>,
        cfg: EngineConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.use_source_cache {
            let cache = source.ok_or_else(|| {
                Error::InvalidInput(
                    "engine configured to use a source cache but none was provided".into(),
                )
            })?;
            if cache.dim() != anchors.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "source cache dim {} vs anchors dim {}",
                    cache.dim(),
                    anchors.dim()
                )));
            }
            if cache.n_classes() != anchors.classes().len() {
                return Err(Error::DimensionMismatch(format!(
                    "source cache has {} classes, anchors {}",
                    cache.n_classes(),
                    anchors.classes().len()
                )));
            }
        }
        let n_classes = anchors.classes().len();
        Ok(Self {
            anchors,
            source: if cfg.use_source_cache { source } else { None },
            pos: TargetCache::new(Polarity::Positive, cfg.pos_capacity, n_classes)?,
            neg: TargetCache::new(Polarity::Negative, cfg.neg_capacity, n_classes)?,
            cfg,
            pool: VecDeque::new(),
            history: Vec::new(),
            next_seq: 0,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn pos_cache(&self) -> &TargetCache {
        &self.pos
    }

    pub fn neg_cache(&self) -> &TargetCache {
        &self.neg
    }

    /// Clears the pooling buffer and prediction history (video boundary);
    /// caches are untouched.
    pub fn reset_stream(&mut self) {
        self.pool.clear();
        self.history.clear();
    }

    /// Empties both target caches (subject boundary or per-video scope).
    pub fn reset_caches(&mut self) {
        self.pos.clear();
        self.neg.clear();
    }

    /// Processes one frame, mutating caches only when the tri-gate admits.
    pub fn step(&mut self, frame: &Embedding, video: &str, t: usize) -> Result<FrameDecision> {
        if frame.dim() != self.anchors.dim() {
            return Err(Error::DimensionMismatch(format!(
                "frame dim {} vs anchors dim {}",
                frame.dim(),
                self.anchors.dim()
            )));
        }
        // Pool over the most recent L raw frames (current included).
        let window_l = self.cfg.effective_pool_window();
        self.pool.push_back(frame.clone());
        while self.pool.len() > window_l {
            self.pool.pop_front();
        }
        let window: Vec<&Embedding> = self.pool.iter().collect();
        let (pooled, pool_norm) = pool_window(&window)?;

        let (base_logits, prediction) = classify(&pooled, self.anchors)?;

        // Prediction history (current frame included), capped at W.
        self.history.push(prediction.label);
        let window_w = self.cfg.gate.window_w;
        if self.history.len() > window_w {
            let drop = self.history.len() - window_w;
            self.history.drain(..drop);
        }

        // Tri-gate admission before any retrieval.
        let mut cache_update = CacheUpdate::none();
        let gate = if self.cfg.use_target_caches {
            let verdict = tri_gate(
                &self.history,
                prediction.label,
                prediction.entropy,
                &pooled,
                self.source,
                &self.cfg.gate,
                &self.cfg.gate_toggles,
            )?;
            match verdict.admitted {
                Admission::Positive => {
                    cache_update = self.admit(&pooled, prediction.label, prediction.entropy, true)?;
                }
                Admission::Negative => {
                    let least_likely = base_logits.argmin();
                    cache_update =
                        self.admit(&pooled, least_likely, prediction.entropy, false)?;
                }
                Admission::None => {}
            }
            Some(verdict)
        } else {
            None
        };

        // Retrieval after the update (an admitted frame sees itself).
        let z_src = match self.source {
            Some(cache) => Some(retrieve_source(cache, &pooled, self.cfg.retrieval_r)?),
            None => None,
        };
        let (z_pos, z_neg) = if self.cfg.use_target_caches {
            let filter = self.cfg.neg_label_filter.then_some(prediction.label);
            (
                self.pos.retrieve(&pooled, self.cfg.retrieval_r, None)?,
                self.neg.retrieve(&pooled, self.cfg.retrieval_r, filter)?,
            )
        } else {
            (None, None)
        };
        let retrieved = RetrievedFlags {
            src: z_src.is_some(),
            pos: z_pos.is_some(),
            neg: z_neg.is_some(),
        };

        let (fused, fusion_fallback) = fuse(
            &pooled,
            z_src.as_ref(),
            z_pos.as_ref(),
            z_neg.as_ref(),
            &self.cfg.fusion,
        );
        let (fused_logits, fused_prediction) = classify(&fused, self.anchors)?;

        Ok(FrameDecision {
            video: video.to_string(),
            t,
            pool_norm,
            base_logits,
            base_label: prediction.label,
            entropy: prediction.entropy,
            gate,
            cache: cache_update,
            retrieved,
            fused_logits,
            fused_label: fused_prediction.label,
            fusion_fallback,
        })
    }

    fn admit(
        &mut self,
        vector: &Embedding,
        label: usize,
        entropy: f64,
        positive: bool,
    ) -> Result<CacheUpdate> {
        let seq = self.next_seq;
        self.next_seq += 1;
        let entry = CacheEntry {
            vector: vector.clone(),
            label,
            entropy,
            seq,
        };
        let cache = if positive { &mut self.pos } else { &mut self.neg };
        let eviction = cache.insert(entry)?;
        Ok(CacheUpdate {
            admitted: if positive {
                Admission::Positive
            } else {
                Admission::Negative
            },
            seq: Some(seq),
            evicted_seq: eviction.map(|e| e.entry.seq),
        })
    }

    /// Streams one video (fresh pooling buffer and history), averaging fused
    /// logits over its frames.
    pub fn run_video(&mut self, id: &str, frames: &[Embedding]) -> Result<VideoDecision> {
        if frames.is_empty() {
            return Err(Error::InvalidInput(format!("video {id:?} has no frames")));
        }
        self.reset_stream();
        let n_classes = self.anchors.classes().len();
        let mut decisions = Vec::with_capacity(frames.len());
        let mut mean = vec![0.0f64; n_classes];
        for (t, frame) in frames.iter().enumerate() {
            let decision = self.step(frame, id, t)?;
            for (m, &l) in mean.iter_mut().zip(decision.fused_logits.scores()) {
                *m += l;
            }
            decisions.push(decision);
        }
        for m in &mut mean {
            *m /= frames.len() as f64;
        }
        let label = argmax(&mean);
        let confidence = softmax(&mean)[label];
        Ok(VideoDecision {
            id: id.to_string(),
            n_frames: frames.len(),
            mean_logits: LogitVector(mean),
            label,
            confidence,
            frames: decisions,
        })
    }
}

/// Result of adapting over one subject's stream of videos.
pub struct SubjectRun {
    pub target_id: String,
    pub videos: Vec<VideoDecision>,
    pub pos_snapshot: TargetCache,
    pub neg_snapshot: TargetCache,
}

/// Runs the loop over every video of a target subject in manifest order.
/// Caches persist across the subject's videos (per-subject personalization)
/// unless the scope says per-video; zero-frame videos are skipped.
pub fn run_subject(
    cfg: &EngineConfig,
    manifest: &Manifest,
    subject: &SubjectRecord,
    anchors: &ClassAnchors,
    source: Option<&PersonalizedSourceCache>,
) -> Result<SubjectRun> {
    if manifest.dim != anchors.dim() {
        return Err(Error::DimensionMismatch(format!(
            "manifest dim {} vs anchors dim {}",
            manifest.dim,
            anchors.dim()
        )));
    }
    let mut engine = Engine::new(anchors, source, cfg.clone())?;
    let mut videos = Vec::new();
    for video in &subject.videos {
        if video.frames == 0 {
            continue;
        }
        if engine.cfg.cache_scope == CacheScope::Video {
            engine.reset_caches();
        }
        let frames = store::load_embeddings(manifest, video)?;
        videos.push(engine.run_video(&video.id, &frames)?);
    }
    Ok(SubjectRun {
        target_id: subject.id.clone(),
        videos,
        pos_snapshot: engine.pos.clone(),
        neg_snapshot: engine.neg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{l2_normalize, ClassSet};
    use crate::personalize::build_personalized_cache;
    use crate::store::{ProtoMeta, PrototypeEntry, PrototypeStore};

    fn unit(v: &[f32]) -> Embedding {
        l2_normalize(&Embedding::new(v.to_vec()).unwrap()).0
    }

    fn anchors(eta: f64) -> ClassAnchors {
        ClassAnchors::new(
            ClassSet::new(vec!["a".into(), "b".into()]).unwrap(),
            vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0])],
            eta,
        )
        .unwrap()
    }

    fn axis_source_cache() -> PersonalizedSourceCache {
        let mut store = PrototypeStore::new(2, 2, "dbscan");
        let entry = |v: &[f32]| PrototypeEntry {
            vector: unit(v),
            cluster_size: 1,
            meta: ProtoMeta::default(),
        };
        store.insert("s", 0, vec![entry(&[1.0, 0.0])]).unwrap();
        store.insert("s", 1, vec![entry(&[0.0, 1.0])]).unwrap();
        build_personalized_cache("t", &[unit(&[1.0, 0.0])], &store, 0, 1, 0).unwrap()
    }

    #[test]
    fn pool_window_cases() {
        let v = unit(&[0.6, 0.8]);
        let (pooled, norm) = pool_window(&[&v, &v, &v]).unwrap();
        assert_eq!(pooled, v);
        assert!((norm - 1.0).abs() < 1e-6);

        let (single, _) = pool_window(&[&v]).unwrap();
        assert_eq!(single, v);

        let a = unit(&[1.0, 0.0]);
        let b = unit(&[0.0, 1.0]);
        let (mix, norm) = pool_window(&[&a, &b]).unwrap();
        for &x in mix.values() {
            assert!((x - std::f32::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        }
        assert!((norm - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn pool_window_degenerate_mean_errors() {
        let a = unit(&[1.0, 0.0]);
        let b = unit(&[-1.0, 0.0]);
        assert!(pool_window(&[&a, &b]).is_err());
    }

    #[test]
    fn fuse_identity_limits() {
        let z = unit(&[1.0, 0.0]);
        let w0 = FusionWeights {
            src: 0.0,
            pos: 1.0,
            neg: 1.0,
        };
        let (fused, fallback) = fuse(&z, None, None, None, &w0);
        assert_eq!(fused, z);
        assert!(!fallback);

        // z = z_src = z_pos: direction preserved.
        let (fused, _) = fuse(&z, Some(&z), Some(&z), None, &FusionWeights::default());
        assert!((fused.dot(&z) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fuse_hand_arithmetic() {
        let z = unit(&[1.0, 0.0]);
        let s = unit(&[0.0, 1.0]);
        let (fused, _) = fuse(&z, Some(&s), None, None, &FusionWeights::default());
        for &x in fused.values() {
            assert!((x - std::f32::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        }
    }

    #[test]
    fn fuse_cancellation_falls_back_to_z() {
        let z = unit(&[1.0, 0.0]);
        let opposite = unit(&[-1.0, 0.0]);
        let w = FusionWeights {
            src: 0.0,
            pos: 0.0,
            neg: 1.0,
        };
        // z − z = 0 → fall back to z.
        let (fused, fallback) = fuse(&z, None, None, Some(&z.clone()), &w);
        assert!(fallback);
        assert_eq!(fused, z);
        let (fused, fallback) = fuse(&z, Some(&opposite), None, None, &FusionWeights::default());
        assert!(fallback);
        assert_eq!(fused, z);
    }

    fn base_cfg() -> EngineConfig {
        EngineConfig::default()
    }

    #[test]
    fn warmup_admits_nothing_but_fuses_source() {
        let anchors = anchors(5.0);
        let cache = axis_source_cache();
        let mut engine = Engine::new(&anchors, Some(&cache), base_cfg()).unwrap();
        let d = engine.step(&unit(&[1.0, 0.05]), "v", 0).unwrap();
        let gate = d.gate.as_ref().unwrap();
        assert!(!gate.temporal_pass);
        assert_eq!(d.cache.admitted, Admission::None);
        assert!(d.retrieved.src);
        assert!(!d.retrieved.pos && !d.retrieved.neg);
        assert_eq!(d.fused_label, 0);
    }

    #[test]
    fn confident_stream_fills_cache_then_evicts() {
        let anchors = anchors(12.0);
        let cache = axis_source_cache();
        let mut cfg = base_cfg();
        cfg.pos_capacity = 2;
        let mut engine = Engine::new(&anchors, Some(&cache), cfg).unwrap();
        let frame = unit(&[1.0, 0.02]);
        let mut admissions = 0;
        let mut evictions = 0;
        for t in 0..8 {
            let d = engine.step(&frame, "v", t).unwrap();
            if d.cache.admitted == Admission::Positive {
                admissions += 1;
                if d.cache.evicted_seq.is_some() {
                    evictions += 1;
                }
            }
            assert!(engine.pos_cache().bucket(0).len() <= 2);
        }
        // Warm-up is W−1 = 2 frames; the rest all admit.
        assert_eq!(admissions, 6);
        assert!(evictions >= 1);
    }

    #[test]
    fn max_entropy_stream_never_admits() {
        let anchors = anchors(8.0);
        let cache = axis_source_cache();
        let mut engine = Engine::new(&anchors, Some(&cache), base_cfg()).unwrap();
        let frame = unit(&[1.0, 1.0]); // equidistant from both anchors
        for t in 0..10 {
            let d = engine.step(&frame, "v", t).unwrap();
            assert_eq!(d.cache.admitted, Admission::None);
        }
        assert!(engine.pos_cache().is_empty());
        assert!(engine.neg_cache().is_empty());
    }

    #[test]
    fn fusion_degeneracy_base_equals_fused() {
        let anchors = anchors(6.0);
        let cache = axis_source_cache();
        let mut cfg = base_cfg();
        cfg.fusion.src = 0.0;
        cfg.use_target_caches = false;
        let mut engine = Engine::new(&anchors, Some(&cache), cfg).unwrap();
        for t in 0..6 {
            let v = unit(&[1.0 - 0.1 * t as f32, 0.2 + 0.1 * t as f32]);
            let d = engine.step(&v, "v", t).unwrap();
            for (b, f) in d.base_logits.scores().iter().zip(d.fused_logits.scores()) {
                assert!((b - f).abs() < 1e-6);
            }
            assert!(d.gate.is_none());
        }
    }

    #[test]
    fn admitted_frame_retrieves_itself_same_step() {
        let anchors = anchors(12.0);
        let cache = axis_source_cache();
        let mut engine = Engine::new(&anchors, Some(&cache), base_cfg()).unwrap();
        let frame = unit(&[1.0, 0.02]);
        let mut saw_same_step_retrieval = false;
        for t in 0..4 {
            let d = engine.step(&frame, "v", t).unwrap();
            if d.cache.admitted == Admission::Positive {
                // The positive retrieval must already see this admission.
                assert!(d.retrieved.pos);
                saw_same_step_retrieval = true;
            }
        }
        assert!(saw_same_step_retrieval);
    }

    #[test]
    fn negative_admission_stores_least_likely_label() {
        // η tuned so an off-axis frame lands in the negative entropy band.
        let anchors = anchors(2.0);
        let cache = axis_source_cache();
        let mut engine = Engine::new(&anchors, Some(&cache), base_cfg()).unwrap();
        let frame = unit(&[1.0, 0.35]);
        let mut saw_negative = false;
        for t in 0..6 {
            let d = engine.step(&frame, "v", t).unwrap();
            if d.cache.admitted == Admission::Negative {
                saw_negative = true;
                let least = d.base_logits.argmin();
                assert_eq!(engine.neg_cache().bucket(least).is_empty(), false);
            }
        }
        assert!(saw_negative, "stream never hit the negative band");
    }

    #[test]
    fn run_video_averages_logits() {
        let anchors = anchors(5.0);
        let cache = axis_source_cache();
        let mut engine = Engine::new(&anchors, Some(&cache), base_cfg()).unwrap();
        let frames = vec![unit(&[1.0, 0.1]); 4];
        let decision = engine.run_video("v0", &frames).unwrap();
        assert_eq!(decision.n_frames, 4);
        assert_eq!(decision.label, 0);
        let mut mean = vec![0.0; 2];
        for f in &decision.frames {
            for (m, &l) in mean.iter_mut().zip(f.fused_logits.scores()) {
                *m += l;
            }
        }
        for (m, &got) in mean.iter().zip(decision.mean_logits.scores()) {
            assert!((m / 4.0 - got).abs() < 1e-12);
        }
        assert!((0.0..=1.0).contains(&decision.confidence));
    }

    #[test]
    fn run_video_single_frame_is_frame_label() {
        let anchors = anchors(5.0);
        let cache = axis_source_cache();
        let mut engine = Engine::new(&anchors, Some(&cache), base_cfg()).unwrap();
        let d = engine.run_video("v", &[unit(&[0.2, 1.0])]).unwrap();
        assert_eq!(d.label, d.frames[0].fused_label);
    }

    #[test]
    fn run_video_empty_errors() {
        let anchors = anchors(5.0);
        let cache = axis_source_cache();
        let mut engine = Engine::new(&anchors, Some(&cache), base_cfg()).unwrap();
        assert!(engine.run_video("v", &[]).is_err());
    }

    #[test]
    fn determinism_same_stream_same_decisions() {
        let anchors = anchors(9.0);
        let cache = axis_source_cache();
        let frames: Vec<Embedding> = (0..12)
            .map(|i| unit(&[1.0, -0.3 + 0.06 * i as f32]))
            .collect();
        let run = |frames: &[Embedding]| {
            let mut engine = Engine::new(&anchors, Some(&cache), base_cfg()).unwrap();
            engine.run_video("v", frames).unwrap()
        };
        let a = run(&frames);
        let b = run(&frames);
        assert_eq!(a, b);
    }

    #[test]
    fn causality_truncation_preserves_prefix() {
        let anchors = anchors(9.0);
        let cache = axis_source_cache();
        let frames: Vec<Embedding> = (0..10)
            .map(|i| unit(&[1.0, -0.4 + 0.09 * i as f32]))
            .collect();
        let full = {
            let mut engine = Engine::new(&anchors, Some(&cache), base_cfg()).unwrap();
            engine.run_video("v", &frames).unwrap()
        };
        let truncated = {
            let mut engine = Engine::new(&anchors, Some(&cache), base_cfg()).unwrap();
            engine.run_video("v", &frames[..6]).unwrap()
        };
        for t in 0..6 {
            assert_eq!(full.frames[t], truncated.frames[t]);
        }
    }

    #[test]
    fn caches_persist_across_videos_within_subject() {
        let anchors = anchors(12.0);
        let cache = axis_source_cache();
        let mut engine = Engine::new(&anchors, Some(&cache), base_cfg()).unwrap();
        let frames = vec![unit(&[1.0, 0.02]); 6];
        let first = engine.run_video("v0", &frames).unwrap();
        let filled = engine.pos_cache().len();
        assert!(filled > 0);
        let second = engine.run_video("v1", &frames).unwrap();
        // Same input, but the second video starts with a warm cache: its
        // decisions may differ from the first only via cache state.
        assert_eq!(first.frames[0].base_logits, second.frames[0].base_logits);
        assert!(engine.pos_cache().len() >= filled);
    }
}

//! Domain types and the deterministic vector/statistics primitives shared by
//! every other module.
//!
//! Embeddings are stored as `f32` (the on-disk currency); all arithmetic
//! accumulates in `f64`. Every operation here is a pure function — argmax and
//! mode ties always break toward the lowest index so that repeated runs are
//! bit-identical.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm at or below which a vector carries no usable direction.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Tolerance for treating a stored vector as unit-norm.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// A dense frame embedding of fixed dimension with finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// Validates dimension ≥ 1 and finiteness of every component.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput(
                "embedding must have dimension >= 1".into(),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite embedding component at index {i}"
            )));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }

    /// True when |‖v‖₂ − 1| ≤ 1e−6.
    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOL
    }
}

/// Returns `v/‖v‖₂`, or `v` unchanged plus a `true` degenerate flag when the
/// norm is at or below [`DEGENERATE_NORM`]. Non-finite inputs are unreachable
/// here: [`Embedding::new`] rejects them at construction.
pub fn l2_normalize(v: &Embedding) -> (Embedding, bool) {
    let norm = v.norm();
    if norm <= DEGENERATE_NORM {
        return (v.clone(), true);
    }
    let values = v.values.iter().map(|&x| (x as f64 / norm) as f32).collect();
    (Embedding { values }, false)
}

/// Normalizes a raw `f64` vector, returning the degenerate flag alongside.
pub(crate) fn normalize_f64(v: &[f64]) -> (Vec<f32>, f64, bool) {
    let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if norm <= DEGENERATE_NORM {
        return (v.iter().map(|&x| x as f32).collect(), norm, true);
    }
    (v.iter().map(|&x| (x / norm) as f32).collect(), norm, false)
}

/// Cosine similarity, clamped to [−1, 1]. Errors on a zero-norm operand.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "cosine over dims {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let na = a.norm();
    let nb = b.norm();
    if na <= DEGENERATE_NORM || nb <= DEGENERATE_NORM {
        return Err(Error::DegenerateInput(
            "cosine of a zero-norm embedding".into(),
        ));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Dot product of two vectors assumed unit-norm, clamped to [−1, 1].
pub(crate) fn unit_cosine(a: &Embedding, b: &Embedding) -> f64 {
    a.dot(b).clamp(-1.0, 1.0)
}

/// The ordered, immutable set of class names for a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassSet {
    /// Requires ≥ 2 classes with unique, nonempty names.
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 classes, got {}",
                labels.len()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, name) in labels.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Validation(format!("class {i} has an empty name")));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate class name {name:?}")));
            }
        }
        Ok(Self { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, idx: usize) -> &str {
        &self.labels[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

impl TryFrom<Vec<String>> for ClassSet {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        ClassSet::new(labels)
    }
}

impl From<ClassSet> for Vec<String> {
    fn from(c: ClassSet) -> Vec<String> {
        c.labels
    }
}

/// One unit-norm anchor per class plus the logit scale η.
#[derive(Debug, Clone)]
pub struct ClassAnchors {
    classes: ClassSet,
    anchors: Vec<Embedding>,
    logit_scale: f64,
}

impl ClassAnchors {
    /// Normalizes each anchor; errors on count mismatch, a degenerate anchor,
    /// or a non-positive scale.
    pub fn new(classes: ClassSet, anchors: Vec<Embedding>, logit_scale: f64) -> Result<Self> {
        if anchors.len() != classes.len() {
            return Err(Error::Validation(format!(
                "{} anchors for {} classes",
                anchors.len(),
                classes.len()
            )));
        }
        if !(logit_scale.is_finite() && logit_scale > 0.0) {
            return Err(Error::Validation(format!(
                "logit scale must be positive, got {logit_scale}"
            )));
        }
        let dim = anchors[0].dim();
        let mut normalized = Vec::with_capacity(anchors.len());
        for (i, a) in anchors.into_iter().enumerate() {
            if a.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "anchor {i} has dim {}, expected {dim}",
                    a.dim()
                )));
            }
            let (unit, degenerate) = l2_normalize(&a);
            if degenerate {
                return Err(Error::DegenerateInput(format!(
                    "anchor for class {:?} has zero norm",
                    classes.label(i)
                )));
            }
            normalized.push(unit);
        }
        Ok(Self {
            classes,
            anchors: normalized,
            logit_scale,
        })
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.anchors[0].dim()
    }

    pub fn anchor(&self, class_index: usize) -> &Embedding {
        &self.anchors[class_index]
    }

    pub fn anchors(&self) -> &[Embedding] {
        &self.anchors
    }

    pub fn logit_scale(&self) -> f64 {
        self.logit_scale
    }
}

/// Per-class scores in class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector(pub Vec<f64>);

impl LogitVector {
    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    /// Lowest index among the maxima.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Lowest index among the minima (the least-likely class).
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v < self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Argmax with ties broken by lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A classified frame: label, probabilities, and normalized entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub probs: Vec<f64>,
    pub entropy: f64,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Shannon entropy of `probs` divided by log of the class count, so the
/// result lives in [0, 1] for any number of classes.
pub fn normalized_entropy(probs: &[f64]) -> f64 {
    debug_assert!(probs.len() >= 2);
    let h: f64 = probs
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum();
    (h / (probs.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Cosine logits against the class anchors (Eq. logits = η·cos), softmaxed
/// into a [`Prediction`]. Scale-invariant in `z`; errors on zero-norm `z`.
pub fn classify(z: &Embedding, anchors: &ClassAnchors) -> Result<(LogitVector, Prediction)> {
    if z.dim() != anchors.dim() {
        return Err(Error::DimensionMismatch(format!(
            "embedding dim {} vs anchor dim {}",
            z.dim(),
            anchors.dim()
        )));
    }
    let norm = z.norm();
    if norm <= DEGENERATE_NORM {
        return Err(Error::DegenerateInput(
            "cannot classify a zero-norm embedding".into(),
        ));
    }
    let eta = anchors.logit_scale();
    let logits: Vec<f64> = anchors
        .anchors()
        .iter()
        .map(|e| eta * (z.dot(e) / norm).clamp(-1.0, 1.0))
        .collect();
    let probs = softmax(&logits);
    let entropy = normalized_entropy(&probs);
    let label = argmax(&logits);
    Ok((
        LogitVector(logits),
        Prediction {
            label,
            probs,
            entropy,
        },
    ))
}

/// Unique mode of the label sequence, or `None` when the maximal count is
/// shared (including the empty sequence).
pub fn majority(labels: &[usize]) -> Option<usize> {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let mut best: Option<(usize, usize)> = None;
    let mut tied = false;
    let mut keys: Vec<usize> = counts.keys().copied().collect();
    keys.sort_unstable();
    for k in keys {
        let c = counts[&k];
        match best {
            Some((_, bc)) if c > bc => {
                best = Some((k, c));
                tied = false;
            }
            Some((_, bc)) if c == bc => tied = true,
            None => best = Some((k, c)),
            _ => {}
        }
    }
    match (best, tied) {
        (Some((k, _)), false) => Some(k),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn classes(n: usize) -> ClassSet {
        ClassSet::new((0..n).map(|i| format!("c{i}")).collect()).unwrap()
    }

    #[test]
    fn l2_normalize_345_triangle() {
        let (n, degenerate) = l2_normalize(&emb(&[3.0, 4.0]));
        assert!(!degenerate);
        assert_eq!(n.values(), &[0.6, 0.8]);
    }

    #[test]
    fn l2_normalize_zero_vector_flags_degenerate() {
        let (n, degenerate) = l2_normalize(&emb(&[0.0, 0.0]));
        assert!(degenerate);
        assert_eq!(n.values(), &[0.0, 0.0]);
    }

    #[test]
    fn l2_normalize_symmetric() {
        let (n, _) = l2_normalize(&emb(&[1.0, 1.0, 1.0, 1.0]));
        for &v in n.values() {
            assert!((v - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn embedding_rejects_non_finite() {
        assert!(Embedding::new(vec![1.0, f32::NAN]).is_err());
        assert!(Embedding::new(vec![]).is_err());
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&emb(&[1.0, 0.0]), &emb(&[1.0, 0.0])).unwrap() - 1.0).abs() < 1e-9);
        assert!(cosine(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap().abs() < 1e-9);
        // Hand computation: a·b/(‖a‖‖b‖) = 4/(√5·√5) = 0.8.
        let c = cosine(&emb(&[1.0, 2.0]), &emb(&[2.0, 1.0])).unwrap();
        assert!((c - 0.8).abs() < 1e-9);
    }

    #[test]
    fn cosine_zero_norm_errors() {
        let err = cosine(&emb(&[0.0, 0.0]), &emb(&[1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput(_)));
    }

    #[test]
    fn classify_anchor_self_match() {
        let anchors = ClassAnchors::new(
            classes(2),
            vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])],
            100.0,
        )
        .unwrap();
        let (logits, pred) = classify(&emb(&[1.0, 0.0]), &anchors).unwrap();
        assert_eq!(pred.label, 0);
        assert!(pred.probs[0] > 0.999);
        assert!(pred.entropy < 1e-6);
        assert!((logits.scores()[0] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn classify_equidistant_is_uniform_max_entropy() {
        let anchors = ClassAnchors::new(
            classes(2),
            vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])],
            5.0,
        )
        .unwrap();
        let (_, pred) = classify(&emb(&[1.0, 1.0]), &anchors).unwrap();
        assert!((pred.probs[0] - 0.5).abs() < 1e-9);
        assert!((pred.entropy - 1.0).abs() < 1e-9);
    }

    #[test]
    fn classify_two_class_hand_computed_entropy() {
        // logits (1, 0): probs = (0.7311, 0.2689), normalized entropy ≈ 0.8400.
        let anchors = ClassAnchors::new(
            classes(2),
            vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])],
            1.0,
        )
        .unwrap();
        // Query exactly on anchor 0: cosines are (1, 0).
        let (logits, pred) = classify(&emb(&[2.0, 0.0]), &anchors).unwrap();
        assert!((logits.scores()[0] - 1.0).abs() < 1e-12);
        assert!((logits.scores()[1]).abs() < 1e-12);
        assert!((pred.probs[0] - 0.731_058_578_630_0049).abs() < 1e-12);
        assert!((pred.entropy - 0.839_941_537_983_1692).abs() < 1e-9);
    }

    #[test]
    fn classify_scale_invariant() {
        let anchors = ClassAnchors::new(
            classes(3),
            vec![
                emb(&[1.0, 0.0, 0.2]),
                emb(&[0.0, 1.0, -0.3]),
                emb(&[0.4, 0.4, 1.0]),
            ],
            7.0,
        )
        .unwrap();
        let z = emb(&[0.3, -0.2, 0.9]);
        // Power-of-two scales keep αz exactly representable in f32, so the
        // check isolates the operation rather than input quantization.
        for alpha in [0.25f32, 0.5, 2.0, 4.0, 1024.0] {
            let scaled = emb(&z.values().iter().map(|&v| v * alpha).collect::<Vec<_>>());
            let (l1, p1) = classify(&z, &anchors).unwrap();
            let (l2, p2) = classify(&scaled, &anchors).unwrap();
            for (a, b) in l1.scores().iter().zip(l2.scores()) {
                assert!((a - b).abs() < 1e-9);
            }
            assert_eq!(p1.label, p2.label);
            assert!((p1.entropy - p2.entropy).abs() < 1e-9);
        }
    }

    #[test]
    fn majority_cases() {
        assert_eq!(majority(&[0, 0, 1]), Some(0));
        assert_eq!(majority(&[0, 1]), None);
        assert_eq!(majority(&[2, 2, 2]), Some(2));
        assert_eq!(majority(&[0, 1, 2]), None);
        assert_eq!(majority(&[]), None);
    }

    #[test]
    fn softmax_shift_invariant() {
        let l = [0.3, -1.2, 2.5];
        let shifted: Vec<f64> = l.iter().map(|x| x + 17.0).collect();
        for (a, b) in softmax(&l).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_range_endpoints() {
        assert!(normalized_entropy(&[1.0, 0.0]) < 1e-12);
        assert!((normalized_entropy(&[0.25, 0.25, 0.25, 0.25]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn class_set_rejects_invalid() {
        assert!(ClassSet::new(vec!["a".into()]).is_err());
        assert!(ClassSet::new(vec!["a".into(), "a".into()]).is_err());
        assert!(ClassSet::new(vec!["a".into(), "".into()]).is_err());
    }
}

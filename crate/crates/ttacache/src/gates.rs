//! The tri-gate cache-admission rule: temporal majority over the recent
//! prediction window, dual entropy thresholds, and prototype-margin
//! consistency against the personalized source cache.
//!
//! Gates run in order temporal → entropy → prototype. Temporal result and
//! entropy band are always recorded; the prototype check (the only costly
//! one) is evaluated only when both earlier gates pass.

use serde::{Deserialize, Serialize};

use crate::core::{majority, unit_cosine, Embedding};
use crate::error::{Error, Result};
use crate::personalize::PersonalizedSourceCache;

/// Thresholds of the tri-gate rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    /// Temporal window length W (frames), current frame included.
    pub window_w: usize,
    /// Confident below this normalized entropy (τ_h⁺).
    pub tau_h_pos: f64,
    /// Usable-as-negative below this normalized entropy (τ_h⁻).
    pub tau_h_neg: f64,
    /// Required margin between best and second-best prototype score (τ_Δ).
    pub tau_delta: f64,
    /// Per-class prototype scores average over the top-k nearest.
    pub proto_top_k: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            window_w: 3,
            tau_h_pos: 0.5,
            tau_h_neg: 0.8,
            tau_delta: 0.05,
            proto_top_k: 3,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_w == 0 {
            return Err(Error::InvalidInput("window_w must be >= 1".into()));
        }
        if !(self.tau_h_pos > 0.0 && self.tau_h_pos < 1.0) {
            return Err(Error::InvalidInput(format!(
                "tau_h_pos must be in (0, 1), got {}",
                self.tau_h_pos
            )));
        }
        if !(self.tau_h_neg > self.tau_h_pos && self.tau_h_neg <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "tau_h_neg must be in (tau_h_pos, 1], got {}",
                self.tau_h_neg
            )));
        }
        if !(self.tau_delta >= 0.0 && self.tau_delta.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "tau_delta must be >= 0, got {}",
                self.tau_delta
            )));
        }
        if self.proto_top_k == 0 {
            return Err(Error::InvalidInput("proto_top_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which entropy band the prediction falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyMode {
    Positive,
    Negative,
    Reject,
}

/// Cache admission decided by the tri-gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Admission {
    None,
    Positive,
    Negative,
}

/// Outcome of the prototype-consistency check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtoCheck {
    /// Prototype-suggested class c*.
    pub class: usize,
    /// Margin between best and second-best class scores.
    pub margin: f64,
    pub pass: bool,
}

/// Full per-frame gate trace. `proto` is `None` when the cascade never
/// reached the prototype check (or no source cache was available).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub temporal_pass: bool,
    pub entropy_mode: EntropyMode,
    pub proto: Option<ProtoCheck>,
    pub admitted: Admission,
}

/// Per-gate enable switches for ablation; a disabled gate always passes
/// (entropy disabled routes every admission to the positive cache).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateToggles {
    pub temporal: bool,
    pub entropy: bool,
    pub proto: bool,
}

impl Default for GateToggles {
    fn default() -> Self {
        Self {
            temporal: true,
            entropy: true,
            proto: true,
        }
    }
}

/// True iff the window is full (exactly W entries) and its unique majority
/// label equals the current prediction. Majority ties and warm-up windows
/// fail the gate.
pub fn temporal_gate(history: &[usize], current: usize, window_w: usize) -> bool {
    history.len() == window_w && majority(history) == Some(current)
}

/// Routes a normalized entropy into its band: `h < τ⁺` positive,
/// `τ⁺ ≤ h < τ⁻` negative, `h ≥ τ⁻` reject. The three bands partition [0, 1].
pub fn entropy_gate(h: f64, cfg: &GateConfig) -> EntropyMode {
    if h < cfg.tau_h_pos {
        EntropyMode::Positive
    } else if h < cfg.tau_h_neg {
        EntropyMode::Negative
    } else {
        EntropyMode::Reject
    }
}

/// Scores each class as the mean cosine over its top-k nearest prototypes
/// (all of them when a class holds fewer than k); c* is the argmax (ties:
/// lowest index) and the check passes iff c* equals the base prediction and
/// the top-two margin exceeds τ_Δ.
pub fn prototype_gate(
    query: &Embedding,
    cache: &PersonalizedSourceCache,
    base_label: usize,
    cfg: &GateConfig,
) -> Result<ProtoCheck> {
    let n_classes = cache.n_classes();
    if n_classes < 2 {
        return Err(Error::Internal(
            "prototype gate needs at least 2 classes".into(),
        ));
    }
    let mut scores = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let mut sims: Vec<f64> = cache
            .class_prototypes(c)
            .iter()
            .map(|p| unit_cosine(query, &p.vector))
            .collect();
        sims.sort_by(|a, b| b.partial_cmp(a).expect("similarities are finite"));
        let k = cfg.proto_top_k.min(sims.len());
        scores.push(sims[..k].iter().sum::<f64>() / k as f64);
    }
    let best = crate::core::argmax(&scores);
    let mut second = f64::NEG_INFINITY;
    for (c, &s) in scores.iter().enumerate() {
        if c != best && s > second {
            second = s;
        }
    }
    let margin = scores[best] - second;
    Ok(ProtoCheck {
        class: best,
        margin,
        pass: best == base_label && margin > cfg.tau_delta,
    })
}

/// The full cascade for one frame. `history` is the recent base-prediction
/// window including the current frame. Short-circuits: the prototype check
/// runs only when temporal and entropy allow an admission; its scores are
/// still recorded for the log whenever it runs.
pub fn tri_gate(
    history: &[usize],
    current_label: usize,
    entropy_h: f64,
    query: &Embedding,
    source_cache: Option<&PersonalizedSourceCache>,
    cfg: &GateConfig,
    toggles: &GateToggles,
) -> Result<GateVerdict> {
    let temporal_pass = !toggles.temporal || temporal_gate(history, current_label, cfg.window_w);
    let entropy_mode = if toggles.entropy {
        entropy_gate(entropy_h, cfg)
    } else {
        EntropyMode::Positive
    };

    if !temporal_pass || entropy_mode == EntropyMode::Reject {
        return Ok(GateVerdict {
            temporal_pass,
            entropy_mode,
            proto: None,
            admitted: Admission::None,
        });
    }

    let proto = match source_cache {
        Some(cache) => {
            let mut check = prototype_gate(query, cache, current_label, cfg)?;
            if !toggles.proto {
                check.pass = true;
            }
            Some(check)
        }
        // No source prototypes to check against: the gate cannot filter.
        None => None,
    };
    let proto_pass = proto.as_ref().map(|p| p.pass).unwrap_or(true);

    let admitted = if proto_pass {
        match entropy_mode {
            EntropyMode::Positive => Admission::Positive,
            EntropyMode::Negative => Admission::Negative,
            EntropyMode::Reject => unreachable!("rejected above"),
        }
    } else {
        Admission::None
    };
    Ok(GateVerdict {
        temporal_pass,
        entropy_mode,
        proto,
        admitted,
    })
}

//! Deterministic synthetic benchmark generator: per-subject shifted Gaussian
//! class clusters with AR(1) temporal noise, plus matching class anchors.
//!
//! Every subject carries one identity offset shared across its classes, so
//! matching source subjects to a target by anchor-class statistics transfers
//! to the other classes — the structure the personalized cache exploits.
//! Target subjects draw larger offsets than sources (`target_extra_shift`).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clustering::derive_seed as mix_seed;
use crate::core::{normalize_f64, ClassAnchors, ClassSet, Embedding};
use crate::error::{Error, Result};
use crate::store::{
    save_anchors, save_manifest, write_embedding_blob, Manifest, Role, SubjectRecord, VideoRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_classes: usize,
    pub n_source_subjects: usize,
    pub n_target_subjects: usize,
    pub frames_per_video: usize,
    pub videos_per_subject_per_class: usize,
    /// Expected norm of the per-subject identity offset (shared across
    /// classes), relative to the unit-norm class anchors. Dimension
    /// independent: drawn as N(0, (shift/√d)²·I).
    pub subject_shift: f64,
    /// Extra offset norm added for target subjects.
    pub target_extra_shift: f64,
    /// Expected norm of the per-frame Gaussian innovation, same scaling.
    pub noise_sigma: f64,
    /// AR(1) coefficient of the frame noise, in [0, 1).
    pub ar_rho: f64,
    /// Lower bound of the per-video class-signal intensity, drawn
    /// uniformly from [intensity_min, 1]. Low-intensity videos carry a weak
    /// class component relative to their subject offset and noise.
    pub intensity_min: f64,
    /// Norm of the random offset between the content directions the data is
    /// generated around and the classification anchors written to
    /// `anchors.json`. Models a zero-shot head that is misaligned with the
    /// visual content; labeled source prototypes do not share this error.
    pub anchor_misalignment: f64,
    /// Logit scale η written into the anchors sidecar.
    pub logit_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            n_classes: 2,
            n_source_subjects: 8,
            n_target_subjects: 4,
            frames_per_video: 30,
            videos_per_subject_per_class: 5,
            subject_shift: 1.0,
            target_extra_shift: 0.7,
            noise_sigma: 0.5,
            ar_rho: 0.8,
            intensity_min: 0.4,
            anchor_misalignment: 0.5,
            logit_scale: 8.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidInput("dim must be >= 1".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidInput("n_classes must be >= 2".into()));
        }
        for (name, v) in [
            ("n_source_subjects", self.n_source_subjects),
            ("n_target_subjects", self.n_target_subjects),
            ("frames_per_video", self.frames_per_video),
            ("videos_per_subject_per_class", self.videos_per_subject_per_class),
        ] {
            if v == 0 {
                return Err(Error::InvalidInput(format!("{name} must be >= 1")));
            }
        }
        if !(self.subject_shift >= 0.0 && self.target_extra_shift >= 0.0) {
            return Err(Error::InvalidInput("shifts must be >= 0".into()));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(Error::InvalidInput("noise_sigma must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.ar_rho) {
            return Err(Error::InvalidInput(format!(
                "ar_rho must be in [0, 1), got {}",
                self.ar_rho
            )));
        }
        if !(self.anchor_misalignment >= 0.0 && self.anchor_misalignment.is_finite()) {
            return Err(Error::InvalidInput(
                "anchor_misalignment must be >= 0".into(),
            ));
        }
        if !(self.intensity_min > 0.0 && self.intensity_min <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "intensity_min must be in (0, 1], got {}",
                self.intensity_min
            )));
        }
        if !(self.logit_scale > 0.0) {
            return Err(Error::InvalidInput("logit_scale must be > 0".into()));
        }
        Ok(())
    }

    /// Class names: index 0 is the designated neutral anchor class.
    pub fn class_names(&self) -> Vec<String> {
        (0..self.n_classes)
            .map(|c| {
                if c == 0 {
                    "neutral".to_string()
                } else {
                    format!("class{c}")
                }
            })
            .collect()
    }
}

/// What `generate` wrote.
#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub subjects: usize,
    pub videos: usize,
    pub frames: u64,
    pub manifest: String,
    pub anchors: String,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Gaussian offset with expected norm `scale`, half its energy spread along
/// the class-anchor directions and half isotropic. The in-span half moves
/// embeddings between classes (actual confusion); the isotropic half only
/// shrinks cosines (confidence). A purely isotropic offset would leave the
/// argmax untouched in high dimension.
fn structured_offset(rng: &mut ChaCha8Rng, anchors: &[Embedding], dim: usize, scale: f64) -> Vec<f64> {
    let n_classes = anchors.len();
    let sigma_span = scale / (2.0 * n_classes as f64).sqrt();
    let sigma_iso = scale / (2.0 * dim as f64).sqrt();
    let mut out = gaussian_vec(rng, dim, sigma_iso);
    for anchor in anchors {
        let gamma: f64 = sigma_span * rng.sample::<f64, _>(StandardNormal);
        for (x, &a) in out.iter_mut().zip(anchor.values()) {
            *x += gamma * a as f64;
        }
    }
    out
}

/// Random orthonormal-ish class anchors: Gram-Schmidt when the class count
/// fits the dimension, plain normalized Gaussians otherwise.
fn make_anchors(rng: &mut ChaCha8Rng, dim: usize, n_classes: usize) -> Result<Vec<Embedding>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    while rows.len() < n_classes {
        let mut v = gaussian_vec(rng, dim, 1.0);
        if n_classes <= dim {
            for prev in &rows {
                let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (x, p) in v.iter_mut().zip(prev) {
                    *x -= dot * p;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue; // resample a degenerate residual
        }
        for x in &mut v {
            *x /= norm;
        }
        rows.push(v);
    }
    rows.into_iter()
        .map(|v| {
            let (values, _, _) = normalize_f64(&v);
            Embedding::new(values)
        })
        .collect()
}

/// Writes the benchmark tree (`manifest.json`, `anchors.json` + blob, and one
/// `emb/*.f32` blob per video). Fully deterministic given the seed.
pub fn generate(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir.join("emb"))
        .map_err(|e| Error::io(format!("create {}", out_dir.display()), e))?;

    let class_names = cfg.class_names();
    let classes = ClassSet::new(class_names.clone())?;
    let mut anchor_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0, 0));
    let content_vecs = make_anchors(&mut anchor_rng, cfg.dim, cfg.n_classes)?;
    // The classifier's anchors sit off the content directions.
    let classifier_vecs: Vec<Embedding> = content_vecs
        .iter()
        .map(|content| {
            let offset = structured_offset(
                &mut anchor_rng,
                &content_vecs,
                cfg.dim,
                cfg.anchor_misalignment,
            );
            let raw: Vec<f64> = content
                .values()
                .iter()
                .zip(&offset)
                .map(|(&c, &o)| c as f64 + o)
                .collect();
            let (values, _, _) = normalize_f64(&raw);
            Embedding::new(values)
        })
        .collect::<Result<_>>()?;
    let anchors = ClassAnchors::new(classes.clone(), classifier_vecs, cfg.logit_scale)?;
    save_anchors(&anchors, &out_dir.join("anchors.json"))?;

    let mut subjects = Vec::new();
    let mut total_videos = 0usize;
    let mut total_frames = 0u64;
    let n_subjects = cfg.n_source_subjects + cfg.n_target_subjects;
    for s in 0..n_subjects {
        let is_target = s >= cfg.n_source_subjects;
        let (id, role) = if is_target {
            (format!("tgt{:02}", s - cfg.n_source_subjects), Role::Target)
        } else {
            (format!("src{s:02}"), Role::Source)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1, s as u64));
        let shift_norm = if is_target {
            cfg.subject_shift + cfg.target_extra_shift
        } else {
            cfg.subject_shift
        };
        let shift = structured_offset(&mut rng, &content_vecs, cfg.dim, shift_norm);

        let mut videos = Vec::new();
        for c in 0..cfg.n_classes {
            for v in 0..cfg.videos_per_subject_per_class {
                let video_id = format!("c{c}_v{v:02}");
                // Per-video mean: intensity-scaled anchor plus the subject
                // offset.
                let intensity =
                    rng.random_range(cfg.intensity_min..=1.0);
                let mut mean: Vec<f64> = content_vecs[c]
                    .values()
                    .iter()
                    .zip(&shift)
                    .map(|(&a, &s)| intensity * a as f64 + s)
                    .collect();
                let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in &mut mean {
                    *x /= norm;
                }
                let mut frames = Vec::with_capacity(cfg.frames_per_video);
                let mut ar = vec![0.0f64; cfg.dim];
                for _ in 0..cfg.frames_per_video {
                    let innovation =
                        structured_offset(&mut rng, &content_vecs, cfg.dim, cfg.noise_sigma);
                    for (a, i) in ar.iter_mut().zip(&innovation) {
                        *a = cfg.ar_rho * *a + i;
                    }
                    let raw: Vec<f64> = mean.iter().zip(&ar).map(|(m, e)| m + e).collect();
                    let (values, _, degenerate) = normalize_f64(&raw);
                    if degenerate {
                        return Err(Error::Internal(
                            "generated a zero-norm frame; shrink noise_sigma".into(),
                        ));
                    }
                    frames.push(Embedding::new(values)?);
                }
                let blob_name = format!("emb/{id}_{video_id}.f32");
                write_embedding_blob(&out_dir.join(&blob_name), &frames)?;
                total_frames += frames.len() as u64;
                total_videos += 1;
                videos.push(VideoRecord {
                    id: video_id,
                    frames: cfg.frames_per_video,
                    label: Some(class_names[c].clone()),
                    frame_labels: (!is_target)
                        .then(|| vec![class_names[c].clone(); cfg.frames_per_video]),
                    anchor_range: (is_target && c == 0).then_some((0, cfg.frames_per_video)),
                    embeddings_path: blob_name,
                });
            }
        }
        subjects.push(SubjectRecord { id, role, videos });
    }

    let manifest = Manifest::new(cfg.dim, classes, subjects, out_dir)?;
    save_manifest(&manifest, &out_dir.join("manifest.json"))?;
    Ok(SynthSummary {
        subjects: n_subjects,
        videos: total_videos,
        frames: total_frames,
        manifest: out_dir.join("manifest.json").display().to_string(),
        anchors: out_dir.join("anchors.json").display().to_string(),
    })
}

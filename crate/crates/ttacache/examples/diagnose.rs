//! Scratch diagnostics for the synthetic regime: frame-level accuracy before
//! and after fusion, retrieval purity, cache pseudo-label purity, and the
//! Fréchet subject ranking.

use tempfile::TempDir;
use ttacache::caches::retrieve_source;
use ttacache::clustering::{build_prototype_store, ClusteringConfig, Extractor};
use ttacache::core::cosine;
use ttacache::engine::{Engine, EngineConfig};
use ttacache::gates::Admission;
use ttacache::personalize::build_cache_from_manifest;
use ttacache::store::{load_anchors, load_embeddings, load_manifest, Role};
use ttacache::synth::{generate, SynthConfig};

fn main() -> ttacache::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let defaults = SynthConfig::default();
    let extra_shift: f64 = args
        .get(1)
        .map(|s| s.parse().unwrap())
        .unwrap_or(defaults.target_extra_shift);
    let noise: f64 = args
        .get(2)
        .map(|s| s.parse().unwrap())
        .unwrap_or(defaults.noise_sigma);
    let eta: f64 = args
        .get(3)
        .map(|s| s.parse().unwrap())
        .unwrap_or(defaults.logit_scale);
    let subject_shift: f64 = args
        .get(4)
        .map(|s| s.parse().unwrap())
        .unwrap_or(defaults.subject_shift);

    let dir = TempDir::new().unwrap();
    let misalignment: f64 = args
        .get(5)
        .map(|s| s.parse().unwrap())
        .unwrap_or(SynthConfig::default().anchor_misalignment);
    let cfg = SynthConfig {
        subject_shift,
        anchor_misalignment: misalignment,
        target_extra_shift: extra_shift,
        noise_sigma: noise,
        logit_scale: eta,
        seed: 1001,
        ..SynthConfig::default()
    };
    generate(&cfg, dir.path())?;
    let manifest = load_manifest(&dir.path().join("manifest.json"))?;
    let anchors = load_anchors(&dir.path().join("anchors.json"))?;
    let store = build_prototype_store(
        &manifest,
        &ClusteringConfig::default(),
        Extractor::Dbscan,
        0,
        1,
    )?;
    for subject in store.subjects() {
        let n: usize = (0..2).map(|c| store.get(&subject, c).unwrap().len()).sum();
        print!("{subject}:{n} ");
    }
    println!("(prototype counts)");

    let engine_cfg = EngineConfig::default();
    for target in manifest.subjects.iter().filter(|s| s.role == Role::Target) {
        let cache = build_cache_from_manifest(&manifest, &store, &target.id, 0, 3, 0)?;
        println!(
            "target {} selected {:?}",
            target.id,
            cache
                .selected_sources()
                .iter()
                .map(|(s, d)| format!("{s}@{d:.3}"))
                .collect::<Vec<_>>()
        );
        let mut engine = Engine::new(&anchors, Some(&cache), engine_cfg.clone())?;
        let (mut frames_n, mut base_ok, mut fused_ok) = (0u32, 0u32, 0u32);
        let (mut retr_n, mut retr_ok) = (0u32, 0u32);
        let (mut top3_pure, mut top3_mass_sum) = (0u32, 0.0f64);
        let (mut pos_n, mut pos_ok, mut neg_n, mut neg_wrong_counterlabel) = (0u32, 0u32, 0u32, 0u32);
        let mut entropy_hist = [0u32; 10];
        let mut video_base_ok = 0u32;
        let mut video_fused_ok = 0u32;
        let mut videos_n = 0u32;
        for video in &target.videos {
            let truth = manifest
                .classes
                .index_of(video.label.as_deref().unwrap())
                .unwrap();
            let frames = load_embeddings(&manifest, video)?;
            let decision = engine.run_video(&video.id, &frames)?;
            videos_n += 1;
            if decision.label == truth {
                video_fused_ok += 1;
            }
            let mut base_mean = vec![0.0; 2];
            for frame in &decision.frames {
                frames_n += 1;
                if frame.base_label == truth {
                    base_ok += 1;
                }
                if frame.fused_label == truth {
                    fused_ok += 1;
                }
                for (m, &l) in base_mean.iter_mut().zip(frame.base_logits.scores()) {
                    *m += l;
                }
                entropy_hist[((frame.entropy * 10.0) as usize).min(9)] += 1;
                match frame.cache.admitted {
                    Admission::Positive => {
                        pos_n += 1;
                        if frame.base_label == truth {
                            pos_ok += 1;
                        }
                    }
                    Admission::Negative => {
                        neg_n += 1;
                        // Counter-label should NOT be the truth.
                        if frame.base_logits.argmin() == truth {
                            neg_wrong_counterlabel += 1;
                        }
                    }
                    Admission::None => {}
                }
            }
            if ttacache::core::argmax(&base_mean) == truth {
                video_base_ok += 1;
            }
            // Retrieval purity: top-3 source prototypes' class mass vs truth.
            for frame in &frames {
                let (unit, _) = ttacache::core::l2_normalize(frame);
                let mut sims: Vec<(f64, usize)> = Vec::new();
                for c in 0..2 {
                    for p in cache.class_prototypes(c) {
                        sims.push((cosine(&unit, &p.vector)?, c));
                    }
                }
                sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
                retr_n += 1;
                if sims[0].1 == truth {
                    retr_ok += 1;
                }
                let top3 = &sims[..3.min(sims.len())];
                let mass: f64 = top3.iter().filter(|(_, c)| *c == truth).count() as f64
                    / top3.len() as f64;
                top3_mass_sum += mass;
                if top3.iter().all(|(_, c)| *c == truth) {
                    top3_pure += 1;
                }
            }
        }
        println!(
            "  frame base {:.3} fused {:.3} | video base {:.3} fused {:.3} | retr(top1) {:.3}",
            base_ok as f64 / frames_n as f64,
            fused_ok as f64 / frames_n as f64,
            video_base_ok as f64 / videos_n as f64,
            video_fused_ok as f64 / videos_n as f64,
            retr_ok as f64 / retr_n as f64,
        );
        println!(
            "  top3 all-true {:.3} true-mass {:.3} | protos in cache: {} + {}",
            top3_pure as f64 / retr_n as f64,
            top3_mass_sum / retr_n as f64,
            cache.class_prototypes(0).len(),
            cache.class_prototypes(1).len(),
        );
        println!(
            "  pos admits {pos_n} (purity {:.3}) neg admits {neg_n} (bad counter-label {:.3}) entropy hist {:?}",
            if pos_n > 0 { pos_ok as f64 / pos_n as f64 } else { f64::NAN },
            if neg_n > 0 { neg_wrong_counterlabel as f64 / neg_n as f64 } else { f64::NAN },
            entropy_hist
        );
    }
    Ok(())
}

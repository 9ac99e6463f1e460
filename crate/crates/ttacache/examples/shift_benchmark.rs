//! Multi-seed benchmark on the synthetic shift suite: how much do the caches
//! buy over zero-shot classification when targets drift away from sources?
//!
//! For each seed the full pipeline runs once per cache variant (no caches,
//! static-only, dynamic-only, both) and per gate subset. Prints per-seed WAR
//! and the means.
//!
//! ```bash
//! cargo run --release --example shift_benchmark -- [seeds] [extra_shift] [noise] [eta]
//! ```

use tempfile::TempDir;
use ttacache::clustering::ClusteringConfig;
use ttacache::engine::EngineConfig;
use ttacache::eval::{run_ablation, AblationGrid, PersonalizeParams};
use ttacache::store::{load_anchors, load_manifest};
use ttacache::synth::{generate, SynthConfig};

fn main() -> ttacache::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let defaults = SynthConfig::default();
    let n_seeds: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(5);
    let extra_shift: f64 = args
        .get(2)
        .map(|s| s.parse().unwrap())
        .unwrap_or(defaults.target_extra_shift);
    let noise: f64 = args
        .get(3)
        .map(|s| s.parse().unwrap())
        .unwrap_or(defaults.noise_sigma);
    let eta: f64 = args
        .get(4)
        .map(|s| s.parse().unwrap())
        .unwrap_or(defaults.logit_scale);
    let subject_shift: f64 = args
        .get(5)
        .map(|s| s.parse().unwrap())
        .unwrap_or(defaults.subject_shift);
    let misalignment: f64 = args
        .get(6)
        .map(|s| s.parse().unwrap())
        .unwrap_or(defaults.anchor_misalignment);
    let intensity_min: f64 = args
        .get(7)
        .map(|s| s.parse().unwrap())
        .unwrap_or(defaults.intensity_min);

    let grid = AblationGrid {
        rows: AblationGrid::cache_variants()
            .rows
            .into_iter()
            .chain(AblationGrid::gate_subsets().rows)
            .collect(),
    };
    let row_names: Vec<String> = grid.rows.iter().map(|r| r.name.clone()).collect();
    let mut sums = vec![0.0f64; row_names.len()];

    println!("seeds={n_seeds} subject_shift={subject_shift} extra_shift={extra_shift} noise={noise} eta={eta} misalign={misalignment}");
    for seed in 0..n_seeds {
        let dir = TempDir::new().expect("temp dir");
        let cfg = SynthConfig {
            subject_shift,
            intensity_min,
            anchor_misalignment: misalignment,
            target_extra_shift: extra_shift,
            noise_sigma: noise,
            logit_scale: eta,
            seed: 1000 + seed,
            ..SynthConfig::default()
        };
        generate(&cfg, dir.path())?;
        let manifest = load_manifest(&dir.path().join("manifest.json"))?;
        let anchors = load_anchors(&dir.path().join("anchors.json"))?;
        let cells = run_ablation(
            &manifest,
            &anchors,
            &grid,
            &EngineConfig::default(),
            &ClusteringConfig::default(),
            &PersonalizeParams::default(),
            seed,
        )?;
        print!("seed {seed:>2}:");
        for (i, name) in row_names.iter().enumerate() {
            let war = cells
                .iter()
                .find(|c| c.row == *name && c.target == "mean")
                .map(|c| c.war)
                .unwrap();
            sums[i] += war;
            print!(" {name}={war:.3}");
        }
        println!();
    }
    println!("--- means over {n_seeds} seeds ---");
    for (name, sum) in row_names.iter().zip(&sums) {
        println!("{name:<16} {:.4}", sum / n_seeds as f64);
    }
    Ok(())
}

//! File-based command layer behind the `ttacache` binary: a single TOML run
//! config with flag overrides, and one function per subcommand.
//!
//! Every command is deterministic given identical inputs and seeds — outputs
//! carry no timestamps, so re-runs are byte-identical. The effective
//! configuration is echoed into each output for provenance.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{build_prototype_store, ClusteringConfig, Extractor};
use crate::engine::{run_subject, EngineConfig, FrameDecision, SubjectRun};
use crate::error::{Error, Result};
use crate::eval::{
    gate_stats, reliability, run_ablation, AblationCell, AblationGrid, GateRates, GateStats,
    PersonalizeParams, ReliabilityReport,
};
use crate::caches::save_cache_snapshot;
use crate::personalize::{
    build_cache_from_manifest, load_personalized_cache, save_personalized_cache,
};
use crate::store::{
    self, load_anchors, load_manifest, load_prototype_store, save_prototype_store, Manifest,
};
use crate::synth::{generate, SynthConfig, SynthSummary};

pub const FRAMELOG_FORMAT: &str = "ttacache.framelog/v1";
pub const VIDEOS_FORMAT: &str = "ttacache.videos/v1";
pub const REPORT_FORMAT: &str = "ttacache.report/v1";
pub const TABLE_FORMAT: &str = "ttacache.table/v1";

/// Personalization section of the run config; the anchor class is named and
/// resolved against the manifest (default: the first class).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PersonalizeSettings {
    pub top_m: usize,
    pub cap_k: usize,
    pub anchor_class: Option<String>,
}

impl Default for PersonalizeSettings {
    fn default() -> Self {
        Self {
            top_m: 3,
            cap_k: 0,
            anchor_class: None,
        }
    }
}

impl PersonalizeSettings {
    pub fn resolve(&self, manifest: &Manifest) -> Result<PersonalizeParams> {
        let anchor_class = match &self.anchor_class {
            None => 0,
            Some(name) => manifest.classes.index_of(name).ok_or_else(|| {
                Error::Validation(format!("unknown anchor class {name:?}"))
            })?,
        };
        Ok(PersonalizeParams {
            anchor_class,
            top_m: self.top_m,
            cap_k: self.cap_k,
        })
    }
}

/// The whole run configuration, loadable from one TOML file. Missing
/// sections and fields fall back to defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub clustering: ClusteringConfig,
    pub personalize: PersonalizeSettings,
    pub engine: EngineConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("config {}", path.display()), e))?;
        toml::from_str(&text).map_err(|e| Error::MalformedConfig {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }
}

/// Optional flag overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct EngineOverrides {
    pub pos_capacity: Option<usize>,
    pub neg_capacity: Option<usize>,
    pub retrieval_r: Option<usize>,
    pub pool_window: Option<usize>,
    pub neg_label_filter: Option<bool>,
    pub alpha_src: Option<f64>,
    pub alpha_pos: Option<f64>,
    pub alpha_neg: Option<f64>,
    pub window_w: Option<usize>,
    pub tau_h_pos: Option<f64>,
    pub tau_h_neg: Option<f64>,
    pub tau_delta: Option<f64>,
    pub proto_top_k: Option<usize>,
    pub cache_scope: Option<crate::engine::CacheScope>,
}

impl EngineOverrides {
    pub fn apply(&self, cfg: &mut EngineConfig) {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        set!(cfg.pos_capacity, self.pos_capacity);
        set!(cfg.neg_capacity, self.neg_capacity);
        set!(cfg.retrieval_r, self.retrieval_r);
        set!(cfg.neg_label_filter, self.neg_label_filter);
        set!(cfg.fusion.src, self.alpha_src);
        set!(cfg.fusion.pos, self.alpha_pos);
        set!(cfg.fusion.neg, self.alpha_neg);
        set!(cfg.gate.window_w, self.window_w);
        set!(cfg.gate.tau_h_pos, self.tau_h_pos);
        set!(cfg.gate.tau_h_neg, self.tau_h_neg);
        set!(cfg.gate.tau_delta, self.tau_delta);
        set!(cfg.gate.proto_top_k, self.proto_top_k);
        set!(cfg.cache_scope, self.cache_scope);
        if self.pool_window.is_some() {
            cfg.pool_window = self.pool_window;
        }
    }
}

/// `synth gen`: writes the benchmark tree and returns summary counts.
pub fn cmd_synth_gen(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<SynthSummary> {
    let mut cfg = RunConfig::load_or_default(config)?.synth;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    generate(&cfg, out)
}

/// `protos build`: offline prototype extraction over every source subject.
pub fn cmd_protos_build(
    manifest_path: &Path,
    out: &Path,
    extractor: Extractor,
    config: Option<&Path>,
    seed: u64,
    jobs: usize,
) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let clustering = RunConfig::load_or_default(config)?.clustering;
    let store = build_prototype_store(&manifest, &clustering, extractor, seed, jobs.max(1))?;
    save_prototype_store(&store, out)
}

/// `cache build`: the personalized source cache for one target subject.
pub fn cmd_cache_build(
    manifest_path: &Path,
    protos_path: &Path,
    target: &str,
    out: &Path,
    config: Option<&Path>,
    top_m: Option<usize>,
    cap_k: Option<usize>,
    anchor_class: Option<&str>,
) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let protos = load_prototype_store(protos_path)?;
    let mut settings = RunConfig::load_or_default(config)?.personalize;
    if let Some(m) = top_m {
        settings.top_m = m;
    }
    if let Some(k) = cap_k {
        settings.cap_k = k;
    }
    if let Some(name) = anchor_class {
        settings.anchor_class = Some(name.to_string());
    }
    let params = settings.resolve(&manifest)?;
    let cache = build_cache_from_manifest(
        &manifest,
        &protos,
        target,
        params.anchor_class,
        params.top_m,
        params.cap_k,
    )?;
    save_personalized_cache(&cache, out)
}

#[derive(Serialize, Deserialize)]
struct FrameLogHeader {
    format: String,
    target: String,
    config: EngineConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoSummary {
    pub id: String,
    pub n_frames: usize,
    pub mean_logits: Vec<f64>,
    pub label: usize,
    pub confidence: f64,
}

#[derive(Serialize, Deserialize)]
struct VideosFile {
    format: String,
    target: String,
    config: EngineConfig,
    videos: Vec<VideoSummary>,
}

/// `adapt run`: streams every video of one target, writing `frames.jsonl`,
/// `videos.json`, final cache snapshots, and the effective config under
/// `out_dir`.
pub fn cmd_adapt_run(
    manifest_path: &Path,
    anchors_path: &Path,
    cache_path: &Path,
    target: &str,
    out_dir: &Path,
    config: Option<&Path>,
    overrides: &EngineOverrides,
) -> Result<SubjectRun> {
    let manifest = load_manifest(manifest_path)?;
    let anchors = load_anchors(anchors_path)?;
    if anchors.dim() != manifest.dim {
        return Err(Error::DimensionMismatch(format!(
            "anchors dim {} vs manifest dim {}",
            anchors.dim(),
            manifest.dim
        )));
    }
    if anchors.classes() != &manifest.classes {
        return Err(Error::Validation(
            "anchors and manifest disagree on the class set".into(),
        ));
    }
    let cache = load_personalized_cache(cache_path)?;
    if cache.target_id() != target {
        return Err(Error::Validation(format!(
            "cache was built for target {:?}, not {target:?}",
            cache.target_id()
        )));
    }
    let mut cfg = RunConfig::load_or_default(config)?.engine;
    overrides.apply(&mut cfg);
    cfg.validate()?;

    let subject = manifest.subject(target)?;
    let run = run_subject(&cfg, &manifest, subject, &anchors, Some(&cache))?;
    write_run_outputs(&run, &cfg, out_dir, manifest.dim)?;
    Ok(run)
}

/// Serializes one subject run into its output directory.
pub fn write_run_outputs(
    run: &SubjectRun,
    cfg: &EngineConfig,
    out_dir: &Path,
    dim: usize,
) -> Result<()> {
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("create {}", out_dir.display()), e))?;

    let header = FrameLogHeader {
        format: FRAMELOG_FORMAT.into(),
        target: run.target_id.clone(),
        config: cfg.clone(),
    };
    let mut lines = Vec::new();
    lines.push(serde_json::to_string(&header).map_err(json_encode_err)?);
    for video in &run.videos {
        for frame in &video.frames {
            lines.push(serde_json::to_string(frame).map_err(json_encode_err)?);
        }
    }
    fs::write(out_dir.join("frames.jsonl"), lines.join("\n") + "\n")
        .map_err(|e| Error::io("write frames.jsonl", e))?;

    let videos = VideosFile {
        format: VIDEOS_FORMAT.into(),
        target: run.target_id.clone(),
        config: cfg.clone(),
        videos: run
            .videos
            .iter()
            .map(|v| VideoSummary {
                id: v.id.clone(),
                n_frames: v.n_frames,
                mean_logits: v.mean_logits.scores().to_vec(),
                label: v.label,
                confidence: v.confidence,
            })
            .collect(),
    };
    store::write_json(&out_dir.join("videos.json"), &videos)?;
    save_cache_snapshot(&run.pos_snapshot, dim, &out_dir.join("snapshot_pos.json"))?;
    save_cache_snapshot(&run.neg_snapshot, dim, &out_dir.join("snapshot_neg.json"))?;
    store::write_json(&out_dir.join("config.json"), cfg)?;
    Ok(())
}

fn json_encode_err(e: serde_json::Error) -> Error {
    Error::Internal(format!("JSON encode failed: {e}"))
}

/// One adapt-run output directory, loaded back.
pub struct LoadedRun {
    pub target: String,
    pub videos: Vec<VideoSummary>,
    pub frames: Vec<FrameDecision>,
}

/// Reads `videos.json` and `frames.jsonl` from an adapt-run directory.
pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let videos_path = dir.join("videos.json");
    let videos: VideosFile = store::read_json(&videos_path)?;
    store::expect_format(&videos.format, VIDEOS_FORMAT)?;

    let frames_path = dir.join("frames.jsonl");
    let text = fs::read_to_string(&frames_path)
        .map_err(|e| Error::io(format!("read {}", frames_path.display()), e))?;
    let mut lines = text.lines();
    let header_line = lines.next().ok_or_else(|| {
        Error::Validation(format!("{} is empty", frames_path.display()))
    })?;
    let header: FrameLogHeader =
        serde_json::from_str(header_line).map_err(|e| Error::MalformedJson {
            path: frames_path.clone(),
            source: e,
        })?;
    store::expect_format(&header.format, FRAMELOG_FORMAT)?;
    if header.target != videos.target {
        return Err(Error::Validation(format!(
            "frame log target {:?} disagrees with videos.json target {:?}",
            header.target, videos.target
        )));
    }
    let mut frames = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        frames.push(
            serde_json::from_str(line).map_err(|e| Error::MalformedJson {
                path: frames_path.clone(),
                source: e,
            })?,
        );
    }
    Ok(LoadedRun {
        target: videos.target,
        videos: videos.videos,
        frames,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetReport {
    pub target: String,
    pub n_videos: usize,
    pub war: f64,
    pub uar: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub ece: f64,
    pub gates: GateStats,
    pub gate_rates: GateRates,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub war: f64,
    pub uar: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub ece: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub per_target: Vec<TargetReport>,
    pub mean: MeanMetrics,
    pub pooled_reliability: ReliabilityReport,
    pub pooled_gates: GateStats,
    pub pooled_gate_rates: GateRates,
}

/// `eval`: joins adapt-run logs with manifest truth into WAR/UAR/F1, a
/// reliability report, and gate-cascade statistics.
pub fn cmd_eval(log_dirs: &[PathBuf], manifest_path: &Path, out: &Path) -> Result<EvalReport> {
    if log_dirs.is_empty() {
        return Err(Error::InvalidInput("no log directories given".into()));
    }
    let manifest = load_manifest(manifest_path)?;
    let mut per_target = Vec::new();
    let mut pooled_samples: Vec<(f64, bool)> = Vec::new();
    let mut pooled_gates = GateStats::default();
    for dir in log_dirs {
        let run = load_run(dir)?;
        let subject = manifest.subject(&run.target)?;
        let mut cm = crate::eval::ConfusionMatrix::new(manifest.classes.len());
        let mut samples = Vec::new();
        for video in &run.videos {
            let record = subject
                .videos
                .iter()
                .find(|v| v.id == video.id)
                .ok_or_else(|| {
                    Error::Validation(format!(
                        "log references unknown video {:?} of subject {:?}",
                        video.id, run.target
                    ))
                })?;
            let label = record.label.as_ref().ok_or_else(|| {
                Error::Validation(format!(
                    "video {:?} of subject {:?} has no truth label",
                    video.id, run.target
                ))
            })?;
            let truth = manifest
                .classes
                .index_of(label)
                .expect("labels validated by load_manifest");
            cm.record(truth, video.label);
            samples.push((video.confidence, video.label == truth));
        }
        let gates = gate_stats(run.frames.iter());
        pooled_gates.merge(&gates);
        pooled_samples.extend_from_slice(&samples);
        let target_reliability = reliability(&samples);
        per_target.push(TargetReport {
            target: run.target.clone(),
            n_videos: run.videos.len(),
            war: cm.war()?,
            uar: cm.uar()?,
            weighted_f1: cm.weighted_f1()?,
            macro_f1: cm.macro_f1()?,
            ece: target_reliability.ece,
            gate_rates: gates.rates(),
            gates,
        });
    }

    let n = per_target.len() as f64;
    let mean = MeanMetrics {
        war: per_target.iter().map(|t| t.war).sum::<f64>() / n,
        uar: per_target.iter().map(|t| t.uar).sum::<f64>() / n,
        weighted_f1: per_target.iter().map(|t| t.weighted_f1).sum::<f64>() / n,
        macro_f1: per_target.iter().map(|t| t.macro_f1).sum::<f64>() / n,
        ece: per_target.iter().map(|t| t.ece).sum::<f64>() / n,
    };
    let report = EvalReport {
        format: REPORT_FORMAT.into(),
        per_target,
        mean,
        pooled_reliability: reliability(&pooled_samples),
        pooled_gate_rates: pooled_gates.rates(),
        pooled_gates,
    };
    store::write_json(out, &report)?;
    Ok(report)
}

/// Parses `--grid`: the preset names `gates`, `caches`, `extractors`, or a
/// path to a JSON grid file (`{"rows": [...]}`)
pub fn parse_grid(spec: &str) -> Result<AblationGrid> {
    match spec {
        "gates" => Ok(AblationGrid::gate_subsets()),
        "caches" => Ok(AblationGrid::cache_variants()),
        "extractors" => Ok(AblationGrid::extractors()),
        path => {
            let grid: AblationGrid = store::read_json(Path::new(path))?;
            if grid.rows.is_empty() {
                return Err(Error::Validation(format!("grid {path:?} has no rows")));
            }
            Ok(grid)
        }
    }
}

#[derive(Serialize)]
struct TableFile<'a> {
    format: &'a str,
    cells: &'a [AblationCell],
}

/// `ablate`: runs the grid and writes the table as CSV plus a JSON sibling.
pub fn cmd_ablate(
    manifest_path: &Path,
    anchors_path: &Path,
    grid_spec: &str,
    out_csv: &Path,
    config: Option<&Path>,
    seed: u64,
) -> Result<Vec<AblationCell>> {
    let manifest = load_manifest(manifest_path)?;
    let anchors = load_anchors(anchors_path)?;
    let grid = parse_grid(grid_spec)?;
    let run_cfg = RunConfig::load_or_default(config)?;
    let personalize = run_cfg.personalize.resolve(&manifest)?;
    let cells = run_ablation(
        &manifest,
        &anchors,
        &grid,
        &run_cfg.engine,
        &run_cfg.clustering,
        &personalize,
        seed,
    )?;

    let mut writer = csv::Writer::from_path(out_csv)
        .map_err(|e| Error::Internal(format!("open {}: {e}", out_csv.display())))?;
    writer
        .write_record(["row", "target", "n_videos", "war", "uar", "weighted_f1", "macro_f1"])
        .and_then(|_| {
            cells.iter().try_for_each(|c| {
                writer.write_record([
                    c.row.as_str(),
                    c.target.as_str(),
                    &c.n_videos.to_string(),
                    &format!("{:.6}", c.war),
                    &format!("{:.6}", c.uar),
                    &format!("{:.6}", c.weighted_f1),
                    &format!("{:.6}", c.macro_f1),
                ])
            })
        })
        .map_err(|e| Error::Internal(format!("write {}: {e}", out_csv.display())))?;
    writer
        .flush()
        .map_err(|e| Error::io(format!("flush {}", out_csv.display()), e))?;

    let json_path = out_csv.with_extension("json");
    store::write_json(
        &json_path,
        &TableFile {
            format: TABLE_FORMAT,
            cells: &cells,
        },
    )?;
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SynthConfig;
    use tempfile::TempDir;

    fn small_synth(dir: &Path) -> (PathBuf, PathBuf) {
        let cfg = SynthConfig {
            dim: 16,
            n_classes: 2,
            n_source_subjects: 3,
            n_target_subjects: 1,
            frames_per_video: 12,
            videos_per_subject_per_class: 2,
            seed: 21,
            ..SynthConfig::default()
        };
        generate(&cfg, dir).unwrap();
        (dir.join("manifest.json"), dir.join("anchors.json"))
    }

    #[test]
    fn full_pipeline_round_trip() {
        let data = TempDir::new().unwrap();
        let (manifest, anchors) = small_synth(data.path());
        let protos = data.path().join("protos.json");
        cmd_protos_build(&manifest, &protos, Extractor::Dbscan, None, 1, 1).unwrap();

        let cache = data.path().join("pcache.json");
        cmd_cache_build(&manifest, &protos, "tgt00", &cache, None, None, None, None).unwrap();

        let run_dir = data.path().join("run");
        let run = cmd_adapt_run(
            &manifest,
            &anchors,
            &cache,
            "tgt00",
            &run_dir,
            None,
            &EngineOverrides::default(),
        )
        .unwrap();
        assert_eq!(run.videos.len(), 4);
        assert!(run_dir.join("frames.jsonl").exists());
        assert!(run_dir.join("snapshot_pos.f32").exists());

        let loaded = load_run(&run_dir).unwrap();
        assert_eq!(loaded.target, "tgt00");
        assert_eq!(loaded.videos.len(), 4);
        assert_eq!(loaded.frames.len(), 4 * 12);

        let report_path = data.path().join("report.json");
        let report = cmd_eval(&[run_dir], &manifest, &report_path).unwrap();
        assert_eq!(report.per_target.len(), 1);
        assert!(report_path.exists());
    }

    #[test]
    fn kmeans_extractor_gives_single_prototype_per_pair() {
        let data = TempDir::new().unwrap();
        let (manifest_path, _) = small_synth(data.path());
        let protos_path = data.path().join("protos.json");
        cmd_protos_build(
            &manifest_path,
            &protos_path,
            Extractor::Kmeans1,
            None,
            1,
            1,
        )
        .unwrap();
        let store = load_prototype_store(&protos_path).unwrap();
        for subject in store.subjects() {
            for c in 0..2 {
                assert_eq!(store.get(&subject, c).unwrap().len(), 1);
            }
        }
    }

    #[test]
    fn adapt_is_deterministic_byte_identical() {
        let data = TempDir::new().unwrap();
        let (manifest, anchors) = small_synth(data.path());
        let protos = data.path().join("protos.json");
        cmd_protos_build(&manifest, &protos, Extractor::Dbscan, None, 5, 1).unwrap();
        let cache = data.path().join("pcache.json");
        cmd_cache_build(&manifest, &protos, "tgt00", &cache, None, None, None, None).unwrap();

        let mut payloads = Vec::new();
        for run in 0..2 {
            let dir = data.path().join(format!("run{run}"));
            cmd_adapt_run(
                &manifest,
                &anchors,
                &cache,
                "tgt00",
                &dir,
                None,
                &EngineOverrides::default(),
            )
            .unwrap();
            payloads.push((
                fs::read(dir.join("frames.jsonl")).unwrap(),
                fs::read(dir.join("videos.json")).unwrap(),
                fs::read(dir.join("snapshot_pos.json")).unwrap(),
                fs::read(dir.join("snapshot_pos.f32")).unwrap(),
            ));
        }
        assert_eq!(payloads[0], payloads[1]);
    }

    #[test]
    fn pool_window_flag_changes_the_log() {
        let data = TempDir::new().unwrap();
        let (manifest, anchors) = small_synth(data.path());
        let protos = data.path().join("protos.json");
        cmd_protos_build(&manifest, &protos, Extractor::Dbscan, None, 1, 1).unwrap();
        let cache = data.path().join("pcache.json");
        cmd_cache_build(&manifest, &protos, "tgt00", &cache, None, None, None, None).unwrap();

        let default_dir = data.path().join("default");
        cmd_adapt_run(
            &manifest,
            &anchors,
            &cache,
            "tgt00",
            &default_dir,
            None,
            &EngineOverrides::default(),
        )
        .unwrap();
        let nopool_dir = data.path().join("nopool");
        cmd_adapt_run(
            &manifest,
            &anchors,
            &cache,
            "tgt00",
            &nopool_dir,
            None,
            &EngineOverrides {
                pool_window: Some(1),
                ..EngineOverrides::default()
            },
        )
        .unwrap();
        assert_ne!(
            fs::read(default_dir.join("frames.jsonl")).unwrap(),
            fs::read(nopool_dir.join("frames.jsonl")).unwrap()
        );
    }

    #[test]
    fn unknown_target_fails_cleanly() {
        let data = TempDir::new().unwrap();
        let (manifest, _) = small_synth(data.path());
        let protos = data.path().join("protos.json");
        cmd_protos_build(&manifest, &protos, Extractor::Dbscan, None, 1, 1).unwrap();
        let err = cmd_cache_build(
            &manifest,
            &protos,
            "nobody",
            &data.path().join("x.json"),
            None,
            None,
            None,
            None,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn grid_presets_parse() {
        assert_eq!(parse_grid("gates").unwrap().rows.len(), 5);
        assert_eq!(parse_grid("caches").unwrap().rows.len(), 4);
        assert_eq!(parse_grid("extractors").unwrap().rows.len(), 2);
        assert!(parse_grid("/nonexistent/grid.json").is_err());
    }

    #[test]
    fn run_config_toml_round_trip() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            r#"
[synth]
dim = 24
seed = 9

[engine]
pos_capacity = 7

[engine.gate]
tau_delta = 0.1

[personalize]
top_m = 2
"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.synth.dim, 24);
        assert_eq!(cfg.synth.seed, 9);
        assert_eq!(cfg.engine.pos_capacity, 7);
        assert_eq!(cfg.engine.gate.tau_delta, 0.1);
        assert_eq!(cfg.personalize.top_m, 2);
        // Untouched fields keep defaults.
        assert_eq!(cfg.engine.neg_capacity, 4);
        assert_eq!(cfg.engine.gate.tau_h_pos, 0.5);
    }
}

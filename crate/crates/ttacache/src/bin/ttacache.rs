//! Thin command-line front end over the library's `cli` module.
//!
//! Exit codes: 0 success, 1 validation, 2 I/O, 3 internal invariant breach.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ttacache::cli::{
    cmd_ablate, cmd_adapt_run, cmd_cache_build, cmd_eval, cmd_protos_build, cmd_synth_gen,
    EngineOverrides,
};
use ttacache::clustering::Extractor;
use ttacache::engine::CacheScope;
use ttacache::error::Error;

#[derive(Parser)]
#[command(
    name = "ttacache",
    about = "Gradient-free test-time adaptation over embedding streams",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic benchmark generation.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Offline source-prototype extraction.
    Protos {
        #[command(subcommand)]
        command: ProtosCommand,
    },
    /// Personalized source-cache construction.
    Cache {
        #[command(subcommand)]
        command: CacheCommand,
    },
    /// Online adaptation over a target subject.
    Adapt {
        #[command(subcommand)]
        command: AdaptCommand,
    },
    /// Score adapt-run logs against manifest truth.
    Eval(EvalArgs),
    /// Run an ablation grid and emit a CSV/JSON table.
    Ablate(AblateArgs),
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Write a benchmark tree (manifest, anchors, embedding blobs).
    Gen {
        /// TOML run config ([synth] section).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum ProtosCommand {
    /// Build per-(source subject, class) prototypes.
    Build {
        #[arg(long)]
        manifest: PathBuf,
        /// Output JSON path (a sibling .f32 blob is written next to it).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "dbscan", value_parser = Extractor::parse)]
        extractor: Extractor,
        /// TOML run config ([clustering] section).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads for per-(subject, class) jobs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Subcommand)]
enum CacheCommand {
    /// Build the fixed personalized source cache for one target.
    Build {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        protos: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        top_m: Option<usize>,
        #[arg(long)]
        cap_k: Option<usize>,
        /// Anchor class name (default: the manifest's first class).
        #[arg(long)]
        anchor_class: Option<String>,
    },
}

#[derive(Args)]
struct EngineFlags {
    #[arg(long)]
    pos_capacity: Option<usize>,
    #[arg(long)]
    neg_capacity: Option<usize>,
    #[arg(long)]
    retrieval_r: Option<usize>,
    /// Temporal pooling window L (1 disables pooling).
    #[arg(long)]
    pool_window: Option<usize>,
    /// Restrict negative retrieval to the predicted class's bucket.
    #[arg(long)]
    neg_label_filter: Option<bool>,
    #[arg(long)]
    alpha_src: Option<f64>,
    #[arg(long)]
    alpha_pos: Option<f64>,
    #[arg(long)]
    alpha_neg: Option<f64>,
    /// Temporal gate window W.
    #[arg(long)]
    window_w: Option<usize>,
    #[arg(long)]
    tau_h_pos: Option<f64>,
    #[arg(long)]
    tau_h_neg: Option<f64>,
    #[arg(long)]
    tau_delta: Option<f64>,
    #[arg(long)]
    proto_top_k: Option<usize>,
    /// Cache persistence scope: subject (default) or video.
    #[arg(long, value_parser = parse_scope)]
    cache_scope: Option<CacheScope>,
}

fn parse_scope(s: &str) -> Result<CacheScope, String> {
    match s {
        "subject" => Ok(CacheScope::Subject),
        "video" => Ok(CacheScope::Video),
        other => Err(format!("unknown cache scope {other:?} (subject|video)")),
    }
}

impl EngineFlags {
    fn overrides(&self) -> EngineOverrides {
        EngineOverrides {
            pos_capacity: self.pos_capacity,
            neg_capacity: self.neg_capacity,
            retrieval_r: self.retrieval_r,
            pool_window: self.pool_window,
            neg_label_filter: self.neg_label_filter,
            alpha_src: self.alpha_src,
            alpha_pos: self.alpha_pos,
            alpha_neg: self.alpha_neg,
            window_w: self.window_w,
            tau_h_pos: self.tau_h_pos,
            tau_h_neg: self.tau_h_neg,
            tau_delta: self.tau_delta,
            proto_top_k: self.proto_top_k,
            cache_scope: self.cache_scope,
        }
    }
}

#[derive(Subcommand)]
enum AdaptCommand {
    /// Stream one target's videos, writing frame logs, video summaries, and
    /// cache snapshots into --out.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        anchors: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        target: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineFlags,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// One or more adapt-run output directories.
    #[arg(long, num_args = 1.., required = true)]
    logs: Vec<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    anchors: PathBuf,
    /// Preset name (gates | caches | extractors) or a JSON grid file.
    #[arg(long)]
    grid: String,
    /// Output CSV path; a .json sibling is written too.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth {
            command: SynthCommand::Gen { config, out, seed },
        } => {
            let summary = cmd_synth_gen(config.as_deref(), &out, seed)?;
            println!(
                "generated {} subjects, {} videos, {} frames under {}",
                summary.subjects,
                summary.videos,
                summary.frames,
                out.display()
            );
        }
        Command::Protos {
            command:
                ProtosCommand::Build {
                    manifest,
                    out,
                    extractor,
                    config,
                    seed,
                    jobs,
                },
        } => {
            cmd_protos_build(&manifest, &out, extractor, config.as_deref(), seed, jobs)?;
            println!("wrote prototype store {}", out.display());
        }
        Command::Cache {
            command:
                CacheCommand::Build {
                    manifest,
                    protos,
                    target,
                    out,
                    config,
                    top_m,
                    cap_k,
                    anchor_class,
                },
        } => {
            cmd_cache_build(
                &manifest,
                &protos,
                &target,
                &out,
                config.as_deref(),
                top_m,
                cap_k,
                anchor_class.as_deref(),
            )?;
            println!("wrote personalized cache {}", out.display());
        }
        Command::Adapt {
            command:
                AdaptCommand::Run {
                    manifest,
                    anchors,
                    cache,
                    target,
                    out,
                    config,
                    engine,
                },
        } => {
            let run = cmd_adapt_run(
                &manifest,
                &anchors,
                &cache,
                &target,
                &out,
                config.as_deref(),
                &engine.overrides(),
            )?;
            println!(
                "adapted {}: {} videos logged under {}",
                target,
                run.videos.len(),
                out.display()
            );
        }
        Command::Eval(args) => {
            let report = cmd_eval(&args.logs, &args.manifest, &args.out)?;
            println!(
                "eval over {} targets: mean WAR {:.4}, UAR {:.4}, weighted F1 {:.4}, ECE {:.4}",
                report.per_target.len(),
                report.mean.war,
                report.mean.uar,
                report.mean.weighted_f1,
                report.pooled_reliability.ece
            );
            println!("report written to {}", args.out.display());
        }
        Command::Ablate(args) => {
            let cells = cmd_ablate(
                &args.manifest,
                &args.anchors,
                &args.grid,
                &args.out,
                args.config.as_deref(),
                args.seed,
            )?;
            for cell in cells.iter().filter(|c| c.target == "mean") {
                println!(
                    "{:<16} mean WAR {:.4}  UAR {:.4}  wF1 {:.4}",
                    cell.row, cell.war, cell.uar, cell.weighted_f1
                );
            }
            println!("table written to {}", args.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

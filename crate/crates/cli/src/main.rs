use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use triquad::evaluation::evaluate_mesh;
use triquad::io::{load_ply_points, load_scan_set, write_ply_points, write_scan_set};
use triquad::meshing::{export_mesh_ply, import_mesh_ply, mesh_checkpoint};
use triquad::synth::{synth_scene, SceneSpec};
use triquad::trainer::{load_checkpoint, save_checkpoint, train, TrainConfig};

/// Neural SDF mapping with tri-quadtree features.
#[derive(Parser, Debug)]
#[command(name = "triquad", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ray-cast a synthetic scene into scans, poses and a ground-truth cloud.
    Synth {
        /// Scene description (TOML); the built-in room when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Output directory; receives scans/, poses.txt and gt.ply.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model to posed scans and write a checkpoint.
    Train {
        /// `key = value` config file; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of `*.bin` scans, paired with poses in sorted order.
        #[arg(long)]
        scans: PathBuf,
        /// One 3x4 pose per line.
        #[arg(long)]
        poses: PathBuf,
        /// Keep one frame out of every `stride`.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract a triangle mesh from a checkpoint.
    Mesh {
        #[arg(long)]
        ckpt: PathBuf,
        /// Marching-cubes grid spacing in metres.
        #[arg(long, default_value_t = 0.1)]
        mc_res: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a mesh against a ground-truth point cloud.
    Eval {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Distance below which a point counts as matched, in metres.
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
        /// Points sampled from the mesh surface.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Seed for the surface sampler.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report file (`key=value` lines).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print parameter counts and metadata of a checkpoint.
    Info {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var("TQ_SEED") {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("TQ_SEED={v:?} is not an unsigned integer"))?)),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(e).context("reading TQ_SEED"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { scene, out } => {
            let spec = match &scene {
                Some(path) => SceneSpec::load(path).with_context(|| format!("loading scene {}", path.display()))?,
                None => SceneSpec::room(),
            };
            let (scans, gt) = synth_scene(&spec)?;
            write_scan_set(&out, &scans)?;
            write_ply_points(out.join("gt.ply"), &gt)?;
            println!(
                "{} frames, {} points, {} ground-truth points -> {}",
                scans.frames.len(),
                scans.point_count(),
                gt.len(),
                out.display()
            );
        }
        Command::Train {
            config,
            scans,
            poses,
            stride,
            out,
        } => {
            let mut cfg = match &config {
                Some(path) => TrainConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = seed_override()? {
                info!("TQ_SEED overrides config seed {} -> {seed}", cfg.seed);
                cfg.seed = seed;
            }
            let set = load_scan_set(&scans, &poses, stride)?;
            info!("{} frames ({} points) after stride {stride}", set.frames.len(), set.point_count());
            let ckpt = train(&set, &cfg)?;
            save_checkpoint(&ckpt, &out)?;
            println!(
                "step {}: {} feature parameters, {} MLP parameters -> {}",
                ckpt.step,
                ckpt.feature_parameter_count(),
                ckpt.mlp_parameter_count(),
                out.display()
            );
        }
        Command::Mesh { ckpt, mc_res, out } => {
            anyhow::ensure!(mc_res.is_finite() && mc_res > 0.0, "--mc-res must be positive");
            let ckpt = load_checkpoint(&ckpt)?;
            let mesh = mesh_checkpoint(&ckpt, mc_res)?;
            export_mesh_ply(&mesh, &out)?;
            println!(
                "{} vertices, {} triangles, area {:.3} m^2 -> {}",
                mesh.vertices.len(),
                mesh.triangles.len(),
                mesh.surface_area(),
                out.display()
            );
        }
        Command::Eval {
            mesh,
            gt,
            threshold,
            samples,
            seed,
            out,
        } => {
            anyhow::ensure!(threshold.is_finite() && threshold > 0.0, "--threshold must be positive");
            anyhow::ensure!(samples > 0, "--samples must be at least 1");
            let mesh = import_mesh_ply(&mesh)?;
            let gt = load_ply_points(&gt)?;
            let report = evaluate_mesh(&mesh, &gt, threshold, samples, seed)?;
            print!("{report}");
            if let Some(path) = out {
                std::fs::write(&path, report.to_key_values()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Info { ckpt } => {
            let path = ckpt;
            let ckpt = load_checkpoint(&path)?;
            let features = ckpt.feature_parameter_count();
            let mlp = ckpt.mlp_parameter_count();
            let extent = ckpt.extent()?;
            println!("checkpoint        {}", path.display());
            println!("step              {}", ckpt.step);
            println!("feature params    {features}");
            println!("mlp params        {mlp}");
            println!("total params      {}", features + mlp);
            println!(
                "extent            origin ({:.3}, {:.3}, {:.3}), side {:.1} m",
                extent.origin.x,
                extent.origin.y,
                extent.origin.z,
                extent.side()
            );
            for t in &ckpt.tables {
                println!("table {:?} L{:<2}     {} vertices", t.plane, t.level, t.entries.len());
            }
            println!("mask cells        {}", ckpt.mask.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on usage errors and 0 for --help / --version
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

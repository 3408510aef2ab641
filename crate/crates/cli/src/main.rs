//! `dispose`: pose files to motion fields, flow sampling, correspondence maps,
//! toy guidance training and the invariant suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dispose_core::checks::run_suite;
use dispose_core::correspondence::{
    build_correspondence_map, extract_point_embeddings, rescale_correspondence, save_features, FeatureMap,
    FeatureProvider, FileProvider, SyntheticProvider,
};
use dispose_core::flow_sampling::{flow_edges, sample_sparse_flow};
use dispose_core::guidance_net::{build_dataset, loss_csv, save_checkpoint, train, Component, GuidancePipeline, TrainConfig, Variant};
use dispose_core::motion_field::{
    frame_constraints, rasterize_sparse_field, write_constraint_files, ExternalPropagator, HarmonicPropagator,
    MotionPropagator, ReferenceImage, SparseFlow,
};
use dispose_core::pose_io::{load_flow, load_pose_sequence, render_flow_png, save_flow, FlowField, MotionFieldStack};
use dispose_core::trajectory::{build_trajectory, reference_displacements, track_matrix, TrajectoryMap};
use dispose_core::{Error, Result};

use config::{parse_level, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "dispose", version, about = "Pose-derived motion field and keypoint correspondence guidance")]
struct Cli {
    /// JSON run configuration; flags override its values
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sparse (splatted) and dense (propagated) motion fields from a pose file
    Poses2fields(Poses2Fields),
    /// Watershed keypoint sampling of a dense .flo into a constraint file
    SampleFlow(SampleFlow),
    /// Correspondence maps from reference-frame descriptors at keypoint tracks
    BuildCorrespondence(BuildCorrespondence),
    /// Colour-wheel PNG of .flo files
    RenderFlow(RenderFlow),
    /// Train the guidance branches of the toy pipeline on the synthetic set
    TrainToy(TrainToy),
    /// Run the invariant suite; exit 1 if any check fails
    Check(Check),
}

#[derive(Args, Debug)]
struct OutArg {
    /// Output directory [default: out]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Poses2Fields {
    /// Pose sequence JSON
    #[arg(long, value_name = "JSON")]
    poses: Option<PathBuf>,
    /// Reference frame PNG for edge-aware propagation [default: uniform image]
    #[arg(long, value_name = "PNG")]
    reference: Option<PathBuf>,
    /// Splat standard deviation in pixels [default: 3]
    #[arg(long)]
    sigma: Option<f64>,
    /// Edge sensitivity of propagation weights [default: 0.01]
    #[arg(long)]
    beta: Option<f64>,
    /// Propagation residual tolerance [default: 1e-5]
    #[arg(long)]
    tol: Option<f64>,
    /// Keypoint confidence threshold [default: 0.3]
    #[arg(long)]
    conf_threshold: Option<f64>,
    /// Exchange directory of an external propagation model, used instead of the built-in solver
    #[arg(long, value_name = "DIR")]
    external_cmp: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct SampleFlow {
    /// Dense flow field
    #[arg(long, value_name = "FLO")]
    flo: Option<PathBuf>,
    /// NMS kernel size, odd and >= 3 [default: 5]
    #[arg(long)]
    kf: Option<usize>,
    /// Sobel magnitude threshold for motion edges [default: 1.0]
    #[arg(long)]
    edge_thresh: Option<f64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct BuildCorrespondence {
    /// Pose sequence JSON
    #[arg(long, value_name = "JSON")]
    poses: Option<PathBuf>,
    /// Descriptor file of the reference frame [default: seeded synthetic descriptors]
    #[arg(long, value_name = "FILE")]
    features: Option<PathBuf>,
    /// Channel count of synthetic descriptors [default: 8]
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Seed of synthetic descriptors [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Extra grids as HxW, comma separated; full resolution is always written
    #[arg(long, value_delimiter = ',', value_parser = parse_level)]
    levels: Option<Vec<[usize; 2]>>,
    /// Keypoint confidence threshold [default: 0.3]
    #[arg(long)]
    conf_threshold: Option<f64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct RenderFlow {
    /// Flow fields to render
    #[arg(long, value_name = "FLO", num_args = 1.., required = true)]
    flo: Vec<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct TrainToy {
    /// Optimisation steps [default: 200]
    #[arg(long)]
    steps: Option<usize>,
    /// Seed for weights, data and batches [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Guidance wiring: full, exp1 or exp2 [default: full]
    #[arg(long)]
    variant: Option<String>,
    /// Samples per step [default: 4]
    #[arg(long)]
    batch_size: Option<usize>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct Check {
    /// all, or one of pose_io, trajectory, motion_field, flow_sampling, correspondence, guidance_net
    #[arg(long, default_value = "all")]
    suite: String,
}

/// Failure classes, mapped to exit codes 1 and 2.
enum Failure {
    Invariant(String),
    Input(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteLoss { .. } => Failure::Invariant(e.to_string()),
            other => Failure::Input(other),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn required(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::Config(format!("missing {what}: pass the flag or set it in --config")))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io {
        path: cfg.out_dir.clone(),
        source: e,
    })?;
    Ok(&cfg.out_dir)
}

fn save_png(field: &FlowField, path: &Path) -> Result<()> {
    render_flow_png(&MotionFieldStack::single(field.clone()), 0, path)
}

fn poses2fields(args: Poses2Fields, mut cfg: RunConfig) -> CmdResult {
    set(&mut cfg.poses, args.poses.map(Some));
    set(&mut cfg.reference, args.reference.map(Some));
    set(&mut cfg.external_cmp, args.external_cmp.map(Some));
    set(&mut cfg.sigma, args.sigma);
    set(&mut cfg.beta, args.beta);
    set(&mut cfg.tol, args.tol);
    set(&mut cfg.conf_threshold, args.conf_threshold);
    set(&mut cfg.out_dir, args.out.out);
    cfg.validate()?;

    let seq = load_pose_sequence(required(&cfg.poses, "--poses")?)?;
    let (w, h) = (seq.width(), seq.height());
    let traj = build_trajectory(&seq, cfg.conf_threshold)?;
    let sparse = rasterize_sparse_field(&track_matrix(&traj), &traj, w, h, cfg.sigma)?;
    let reference = match &cfg.reference {
        Some(p) => ReferenceImage::load(p)?,
        None => ReferenceImage::uniform(w, h, [1.0; 3]),
    };
    let propagator: Box<dyn MotionPropagator> = match &cfg.external_cmp {
        Some(dir) => Box::new(ExternalPropagator { dir: dir.clone() }),
        None => Box::new(HarmonicPropagator {
            params: cfg.propagator(),
        }),
    };
    let dense = dense_fields(&reference, &traj, propagator.as_ref())?;
    let out = out_dir(&cfg)?;
    for n in 1..=traj.driven_frames() {
        let (fs, fd) = (sparse.frame(n - 1)?, dense.frame(n - 1)?);
        for (tag, field) in [("fs", fs), ("fd", fd)] {
            save_flow(field, out.join(format!("{tag}_{n:04}.flo")))?;
            save_png(field, &out.join(format!("{tag}_{n:04}.png")))?;
        }
        println!(
            "frame {n}: sparse max|v| {:.4} nonzero {:.4} | dense max|v| {:.4} nonzero {:.4}",
            fs.max_magnitude(),
            fs.nonzero_fraction(),
            fd.max_magnitude(),
            fd.nonzero_fraction()
        );
    }
    Ok(())
}

/// Dense field per driven frame; frames without any valid keypoint get a zero field.
fn dense_fields(reference: &ReferenceImage, traj: &TrajectoryMap, propagator: &dyn MotionPropagator) -> Result<MotionFieldStack> {
    let (w, h) = (traj.width(), traj.height());
    if (reference.width(), reference.height()) != (w, h) {
        return Err(Error::Dimension(format!(
            "reference image is {}x{}, poses are {w}x{h}",
            reference.width(),
            reference.height()
        )));
    }
    let ref_disp = reference_displacements(traj);
    let frames = (1..=traj.driven_frames())
        .map(|n| {
            let c = frame_constraints(&ref_disp, traj, n)?;
            if c.is_empty() {
                log::warn!("frame {n}: no valid keypoints, dense field set to zero");
                Ok(FlowField::zeros(w, h))
            } else {
                propagator.propagate(n, reference, &c)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    MotionFieldStack::new(w, h, frames)
}

fn sample_flow(args: SampleFlow, mut cfg: RunConfig) -> CmdResult {
    set(&mut cfg.flow, args.flo.map(Some));
    set(&mut cfg.kf, args.kf);
    set(&mut cfg.edge_threshold, args.edge_thresh);
    set(&mut cfg.out_dir, args.out.out);
    cfg.validate()?;
    let flow = load_flow(required(&cfg.flow, "--flo")?)?;
    let samples = if flow_edges(&flow, cfg.edge_threshold)?.count() == 0 {
        log::warn!("no motion edges at threshold {}; writing an empty constraint set", cfg.edge_threshold);
        SparseFlow::empty(flow.width(), flow.height())
    } else {
        sample_sparse_flow(&flow, cfg.edge_threshold, cfg.kf)?
    };
    let path = out_dir(&cfg)?.join("constraints.flo");
    write_constraint_files(&samples, &path)?;
    println!("{} samples -> {}", samples.len(), path.display());
    Ok(())
}

fn build_correspondence(args: BuildCorrespondence, mut cfg: RunConfig) -> CmdResult {
    set(&mut cfg.poses, args.poses.map(Some));
    set(&mut cfg.features, args.features.map(Some));
    set(&mut cfg.feature_dim, args.feature_dim);
    set(&mut cfg.seed, args.seed);
    set(&mut cfg.levels, args.levels);
    set(&mut cfg.conf_threshold, args.conf_threshold);
    set(&mut cfg.out_dir, args.out.out);
    cfg.validate()?;
    let seq = load_pose_sequence(required(&cfg.poses, "--poses")?)?;
    let traj = build_trajectory(&seq, cfg.conf_threshold)?;
    let reference = match &cfg.reference {
        Some(p) => ReferenceImage::load(p)?,
        None => ReferenceImage::uniform(seq.width(), seq.height(), [1.0; 3]),
    };
    let features = match &cfg.features {
        Some(p) => FileProvider { path: p.clone() }.features(&reference)?,
        None => SyntheticProvider {
            dp: cfg.feature_dim,
            seed: cfg.seed,
        }
        .features(&reference)?,
    };
    let emb = extract_point_embeddings(&features, &traj)?;
    let mut stacks = vec![build_correspondence_map(&emb, &traj)?];
    for [h, w] in &cfg.levels {
        stacks.push(rescale_correspondence(&emb, &traj, *h, *w)?);
    }
    let out = out_dir(&cfg)?;
    for s in &stacks {
        for (i, frame) in s.frames.iter().enumerate() {
            let n = i + 1;
            let map = FeatureMap::new(s.dp, s.height, s.width, frame.to_dense())?;
            save_features(&map, out.join(format!("fp_{}x{}_{n:04}.feat", s.height, s.width)))?;
            println!("grid {}x{} frame {n}: {} columns", s.height, s.width, frame.columns.len());
        }
    }
    Ok(())
}

fn render_flow(args: RenderFlow, mut cfg: RunConfig) -> CmdResult {
    set(&mut cfg.out_dir, args.out.out);
    let out = out_dir(&cfg)?.to_path_buf();
    for path in &args.flo {
        let field = load_flow(path)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "flow".into());
        let png = out.join(format!("{stem}.png"));
        save_png(&field, &png)?;
        println!("{} -> {} (max|v| {:.4})", path.display(), png.display(), field.max_magnitude());
    }
    Ok(())
}

fn train_toy(args: TrainToy, mut cfg: RunConfig) -> CmdResult {
    set(&mut cfg.steps, args.steps);
    set(&mut cfg.seed, args.seed);
    set(&mut cfg.batch_size, args.batch_size);
    if let Some(v) = args.variant {
        cfg.variant = v.parse::<Variant>()?;
    }
    set(&mut cfg.out_dir, args.out.out);
    cfg.validate()?;
    let mut pipeline = GuidancePipeline::new(cfg.net.clone(), cfg.variant, cfg.seed)?;
    let base = pipeline.store().checksum(Component::Base);
    let dataset = build_dataset(&pipeline, &cfg.dataset)?;
    let tcfg = TrainConfig {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let report = train(&mut pipeline, &dataset, &tcfg)?;
    let out = out_dir(&cfg)?;
    let csv = out.join("loss.csv");
    std::fs::write(&csv, loss_csv(&report.losses)).map_err(|e| Error::Io { path: csv.clone(), source: e })?;
    save_checkpoint(&pipeline, out.join("checkpoint"))?;
    println!(
        "variant {} seed {}: {} samples, {} steps, held-out loss {:.6} -> {:.6} (ratio {:.4})",
        cfg.variant,
        cfg.seed,
        dataset.len(),
        cfg.steps,
        report.eval_before,
        report.eval_after,
        report.eval_after / report.eval_before
    );
    if pipeline.store().checksum(Component::Base) != base {
        return Err(Failure::Invariant("base denoiser weights changed during training".into()));
    }
    Ok(())
}

fn check(args: Check) -> CmdResult {
    let results = run_suite(&args.suite)?;
    let mut first_failure = None;
    for r in &results {
        println!("{} {}::{} ({})", if r.passed { "PASS" } else { "FAIL" }, r.module, r.name, r.witness);
        if !r.passed && first_failure.is_none() {
            first_failure = Some(r.clone());
        }
    }
    match first_failure {
        None => {
            println!("{} checks passed", results.len());
            Ok(())
        }
        Some(r) => Err(Failure::Invariant(format!(
            "invariant {}::{} failed: {}",
            r.module, r.name, r.witness
        ))),
    }
}

fn run(cli: Cli) -> CmdResult {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Poses2fields(a) => poses2fields(a, cfg),
        Command::SampleFlow(a) => sample_flow(a, cfg),
        Command::BuildCorrespondence(a) => build_correspondence(a, cfg),
        Command::RenderFlow(a) => render_flow(a, cfg),
        Command::TrainToy(a) => train_toy(a, cfg),
        Command::Check(a) => check(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invariant(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

//! Command-line entry point for the ribbon proprioception pipeline.
//!
//! Subcommands follow the workflow order: `curvature` and `place` analyze
//! digitized ribbon curves to position the optical sensors, `synth` generates
//! synthetic trials, `calibrate` trains the eight-state classifier from trial
//! logs, `map` rasterizes its decision regions, and `classify` streams a
//! trial through a trained model.
//!
//! Exit codes: 0 success, 2 input error, 3 geometry degeneracy, 4 no usable
//! curvature variation (or ambiguous tensile side), 5 calibration
//! preprocessing failure.

mod manifest;

use std::fs;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use manifest::Manifest;
use proprio_core::geometry::GeometryError;
use proprio_core::mapgrid::{self, GridBounds, MapFormat, OverlayPoint};
use proprio_core::pipeline::{self, CalibrationConfig, PipelineError};
use proprio_core::placement::{self, PlacementError, StateCurveSet};
use proprio_core::signal::{self, SignalError, StateDataset, StateSample, TrialRecording};
use proprio_core::stream::{self, StreamError};
use proprio_core::svm::MulticlassSvm;
use proprio_core::synth::{self, TrajectorySpec};

/// Seed override honored by the `synth` subcommand.
const SEED_ENV: &str = "RIBBON_PROPRIO_SEED";

#[derive(Parser)]
#[command(name = "ribbon-proprio", version, about = "Optical ribbon-actuator proprioception toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute filtered, normalized curvature profiles for the eight states.
    Curvature(CurvatureArgs),
    /// Rank sensor regions by curvature variation and pick the tensile side.
    Place(PlaceArgs),
    /// Train the eight-state classifier from trial logs.
    Calibrate(CalibrateArgs),
    /// Rasterize a trained model's decision regions.
    Map(MapArgs),
    /// Classify a trial stream into state events.
    Classify(ClassifyArgs),
    /// Generate synthetic trials.
    Synth(SynthArgs),
}

#[derive(Args)]
struct CurveInput {
    /// Run manifest (JSON).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory of curve CSVs named *_s<k>.csv (alternative to --manifest).
    #[arg(long)]
    curves: Option<PathBuf>,
}

impl CurveInput {
    fn manifest(&self) -> Result<Manifest> {
        match (&self.manifest, &self.curves) {
            (Some(path), _) => Manifest::load(path),
            (None, Some(dir)) => Ok(Manifest {
                curve_dir: Some(dir.clone()),
                ..Manifest::default()
            }),
            (None, None) => bail!("pass --manifest or --curves"),
        }
    }
}

#[derive(Args)]
struct CurvatureArgs {
    #[command(flatten)]
    input: CurveInput,
    /// Low-pass cutoff as a fraction of the station sampling frequency.
    #[arg(long, default_value_t = 0.02)]
    cutoff_ratio: f64,
    /// Number of shared arc-length stations.
    #[arg(long, default_value_t = 512)]
    stations: usize,
    /// Report path (defaults to <out_dir>/curvature_report.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlaceArgs {
    #[command(flatten)]
    input: CurveInput,
    #[arg(long, default_value_t = 0.02)]
    cutoff_ratio: f64,
    #[arg(long, default_value_t = 512)]
    stations: usize,
    /// Sliding window extent in curve units (the printed well-pattern span).
    #[arg(long, default_value_t = 8.8)]
    window_mm: f64,
    /// Window stride in curve units.
    #[arg(long, default_value_t = 0.5)]
    stride_mm: f64,
    /// Number of regions to keep.
    #[arg(long, default_value_t = 2)]
    top_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Run manifest (JSON).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Trial logs (JSON lines); overrides the manifest's list.
    #[arg(long, num_args = 1..)]
    trials: Vec<PathBuf>,
    /// RBF width; defaults to 1/n_features.
    #[arg(long)]
    gamma: Option<f64>,
    /// Soft-margin penalty.
    #[arg(long)]
    c: Option<f64>,
    /// Buckling exclusion interval, "lo,hi" seconds.
    #[arg(long, value_parser = parse_pair)]
    exclusion: Option<(f64, f64)>,
    /// Full-contraction time; detected from the averaged series if omitted.
    #[arg(long)]
    end_time: Option<f64>,
    /// Model file path (defaults to <out_dir>/model.json).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training dataset sidecar (defaults to <out_dir>/dataset.json).
    #[arg(long)]
    dataset_out: Option<PathBuf>,
}

#[derive(Args)]
struct MapArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Plane bounds "x0,x1,y0,y1"; defaults to the stored training points'
    /// bounding box expanded 15% per side.
    #[arg(long, value_parser = parse_bounds)]
    bounds: Option<GridBounds>,
    #[arg(long, default_value_t = 512)]
    resolution: usize,
    /// csv or ppm.
    #[arg(long, default_value = "ppm")]
    format: MapFormat,
    /// Output path (defaults to map.<format>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Trial log path, or '-' for stdin.
    #[arg(long)]
    trial: String,
    /// Samples a state change must persist before an event is emitted.
    #[arg(long, default_value_t = 3)]
    debounce: usize,
    /// First-state reference "s1,s2" in corrected counts; defaults to the
    /// trial's pre-motion plateau (mean of the first 0.5 s).
    #[arg(long, value_parser = parse_pair)]
    reference: Option<(f64, f64)>,
    /// Event-suppression interval, "lo,hi" seconds.
    #[arg(long, value_parser = parse_pair)]
    exclusion: Option<(f64, f64)>,
    /// Training dataset sidecar for the manifold report; falls back to the
    /// model's stored support vectors.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output path for events + report (defaults to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Trajectory spec (JSON); built-in defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Number of trials.
    #[arg(short, long, default_value_t = 3)]
    n: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Base seed (spec seed when omitted; RIBBON_PROPRIO_SEED overrides both).
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected 'a,b', got '{s}'"));
    }
    let a = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let b = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((a, b))
}

fn parse_bounds(s: &str) -> Result<GridBounds, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(format!("expected 'x0,x1,y0,y1', got '{s}'"));
    }
    let mut v = [0.0; 4];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part.trim().parse::<f64>().map_err(|e| e.to_string())?;
    }
    GridBounds::new((v[0], v[1]), (v[2], v[3])).map_err(|e| e.to_string())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Curvature(args) => cmd_curvature(args),
        Command::Place(args) => cmd_place(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Map(args) => cmd_map(args),
        Command::Classify(args) => cmd_classify(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(p) = cause.downcast_ref::<PlacementError>() {
            return placement_code(p);
        }
        if let Some(g) = cause.downcast_ref::<GeometryError>() {
            return geometry_code(g);
        }
        if let Some(s) = cause.downcast_ref::<SignalError>() {
            return signal_code(s);
        }
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return match p {
                PipelineError::Signal(s) => signal_code(s),
                _ => 2,
            };
        }
        if let Some(s) = cause.downcast_ref::<StreamError>() {
            return match s {
                StreamError::NearZeroReference { .. } => 5,
                _ => 2,
            };
        }
    }
    2
}

fn placement_code(err: &PlacementError) -> i32 {
    match err {
        PlacementError::NoVariation | PlacementError::AmbiguousSide(_) => 4,
        PlacementError::Geometry(g) => geometry_code(g),
        _ => 2,
    }
}

fn geometry_code(err: &GeometryError) -> i32 {
    match err {
        GeometryError::DegenerateTangent { .. } | GeometryError::FlatProfile { .. } => 3,
        _ => 2,
    }
}

fn signal_code(err: &SignalError) -> i32 {
    match err {
        SignalError::ExclusionTooWide(..)
        | SignalError::NearZeroReference { .. }
        | SignalError::StateTimesCollide(..) => 5,
        _ => 2,
    }
}

fn out_path(explicit: &Option<PathBuf>, manifest: &Manifest, name: &str) -> PathBuf {
    match explicit {
        Some(p) => p.clone(),
        None => manifest
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("."))
            .join(name),
    }
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn build_state_set(input: &CurveInput, stations: usize, cutoff: f64) -> Result<(Manifest, StateCurveSet)> {
    let manifest = input.manifest()?;
    let curves = manifest.load_curves()?;
    let set = StateCurveSet::from_curves(&curves, stations, cutoff)?;
    Ok((manifest, set))
}

fn cmd_curvature(args: CurvatureArgs) -> Result<()> {
    eprintln!(
        "curvature: cutoff_ratio={} stations={} states=8",
        args.cutoff_ratio, args.stations
    );
    let (manifest, set) = build_state_set(&args.input, args.stations, args.cutoff_ratio)?;
    let report = placement::emit_placement_report(&set, &[]);
    let path = out_path(&args.out, &manifest, "curvature_report.csv");
    write_output(&path, report.as_bytes())?;
    println!("wrote {} ({} stations x 8 states)", path.display(), set.stations().len());
    Ok(())
}

fn cmd_place(args: PlaceArgs) -> Result<()> {
    eprintln!(
        "place: cutoff_ratio={} stations={} window={} stride={} top_k={}",
        args.cutoff_ratio, args.stations, args.window_mm, args.stride_mm, args.top_k
    );
    let (manifest, set) = build_state_set(&args.input, args.stations, args.cutoff_ratio)?;
    let mut regions = placement::score_regions(&set, args.window_mm, args.stride_mm)?;
    regions.truncate(args.top_k);
    for region in &mut regions {
        let choice = placement::select_surface(&set, region)?;
        region.side = choice.side;
        println!(
            "region center={:.2} half_width={:.2} side={} score={:.6} mean_signed={:.4}",
            region.center, region.half_width, region.side, region.score, choice.mean_signed
        );
    }
    let report = placement::emit_placement_report(&set, &regions);
    let path = out_path(&args.out, &manifest, "placement_report.csv");
    write_output(&path, report.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    samples: Vec<DatasetRow>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRow {
    s1: f64,
    s2: f64,
    state: u8,
    trial_id: String,
}

fn save_dataset(path: &Path, dataset: &StateDataset) -> Result<()> {
    let file = DatasetFile {
        samples: dataset
            .samples()
            .iter()
            .map(|s| DatasetRow {
                s1: s.features[0],
                s2: s.features[1],
                state: s.state,
                trial_id: s.trial_id.clone(),
            })
            .collect(),
    };
    write_output(path, serde_json::to_string_pretty(&file)?.as_bytes())
}

fn load_dataset(path: &Path) -> Result<StateDataset> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading dataset {}", path.display()))?;
    let file: DatasetFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing dataset {}", path.display()))?;
    let samples = file
        .samples
        .into_iter()
        .map(|r| StateSample {
            features: [r.s1, r.s2],
            state: r.state,
            trial_id: r.trial_id,
        })
        .collect();
    StateDataset::new(samples).map_err(Into::into)
}

fn read_trial_file(path: &Path) -> Result<TrialRecording> {
    let file = fs::File::open(path)
        .with_context(|| format!("opening trial {}", path.display()))?;
    signal::read_trial(BufReader::new(file))
        .with_context(|| format!("reading trial {}", path.display()))
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let manifest = match &args.manifest {
        Some(path) => Manifest::load(path)?,
        None => Manifest::default(),
    };
    let trial_paths = if args.trials.is_empty() {
        manifest.trials.clone()
    } else {
        args.trials.clone()
    };
    if trial_paths.is_empty() {
        bail!("no trial logs given (manifest `trials` or --trials)");
    }
    let recordings: Vec<TrialRecording> = trial_paths
        .iter()
        .map(|p| read_trial_file(p))
        .collect::<Result<_>>()?;

    let cfg = CalibrationConfig {
        exclusion: args.exclusion.or(manifest.exclusion),
        end_time: args.end_time.or(manifest.end_time),
        gamma: args.gamma.or(manifest.gamma),
        c: args.c.or(manifest.c).unwrap_or(1.0),
        ..CalibrationConfig::default()
    };
    eprintln!(
        "calibrate: trials={} baseline={}s states={} gamma={} c={} exclusion={:?} end_time={:?}",
        recordings.len(),
        cfg.baseline_s,
        cfg.n_states,
        cfg.gamma.map_or("1/n_features".into(), |g| g.to_string()),
        cfg.c,
        cfg.exclusion,
        cfg.end_time
    );

    let cal = pipeline::calibrate(&recordings, &cfg)?;
    if cal.single_trial {
        eprintln!("warning: single trial, averaging degenerates to identity");
    }
    if cal.clamped > 0 {
        eprintln!("warning: {} ambient-clamped samples", cal.clamped);
    }

    let model_path = out_path(&args.out, &manifest, "model.json");
    write_output(&model_path, cal.model.to_json().as_bytes())?;
    let dataset_path = out_path(&args.dataset_out, &manifest, "dataset.json");
    save_dataset(&dataset_path, &cal.dataset)?;

    let (correct, total) = cal.training_accuracy;
    println!(
        "trained {} classes, {} machines, gamma={}, training accuracy {}/{}",
        cal.model.classes().len(),
        cal.model.machines().len(),
        cal.model.params().gamma,
        correct,
        total
    );
    println!("end_time {:.3}s, wrote {} and {}", cal.end_time, model_path.display(), dataset_path.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<MulticlassSvm> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading model {}", path.display()))?;
    MulticlassSvm::from_json(&text)
        .with_context(|| format!("parsing model {}", path.display()))
}

/// Training rows recoverable from the model file alone: every stored support
/// vector is a training row; the sign of its dual coefficient tells which
/// side of the pair it belongs to.
fn training_points_from_model(model: &MulticlassSvm) -> Vec<(f64, f64, u8)> {
    let mut points: Vec<(f64, f64, u8)> = Vec::new();
    for m in model.machines() {
        for (sv, coef) in m.support_vectors.iter().zip(&m.dual_coefs) {
            let label = if *coef < 0.0 { m.neg } else { m.pos };
            let raw = model
                .standardizer()
                .inverse_transform(sv)
                .expect("model dimensions are consistent");
            let candidate = (raw[0], raw[1], label);
            if !points
                .iter()
                .any(|p| p.0.to_bits() == candidate.0.to_bits()
                    && p.1.to_bits() == candidate.1.to_bits()
                    && p.2 == candidate.2)
            {
                points.push(candidate);
            }
        }
    }
    points
}

fn cmd_map(args: MapArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let points = training_points_from_model(&model);
    let bounds = match args.bounds {
        Some(b) => b,
        None => {
            let coords: Vec<[f64; 2]> = points.iter().map(|p| [p.0, p.1]).collect();
            GridBounds::around(&coords)?
        }
    };
    eprintln!(
        "map: resolution={} bounds=({:.3},{:.3})x({:.3},{:.3}) format={:?}",
        args.resolution, bounds.x.0, bounds.x.1, bounds.y.0, bounds.y.1, args.format
    );
    let overlay: Vec<OverlayPoint> = points
        .iter()
        .map(|p| OverlayPoint {
            x: p.0,
            y: p.1,
            label: p.2,
        })
        .collect();
    let grid = mapgrid::rasterize(&model, bounds, args.resolution)?.with_overlay(overlay);
    let bytes = mapgrid::export_map(&grid, args.format)?;
    let default_name = match args.format {
        MapFormat::Csv => "map.csv",
        MapFormat::Ppm => "map.ppm",
    };
    let path = args.out.unwrap_or_else(|| PathBuf::from(default_name));
    write_output(&path, &bytes)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_classify(args: ClassifyArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let trial = if args.trial == "-" {
        let mut buf = String::new();
        std::io::stdin().read_to_string(&mut buf).context("reading stdin")?;
        signal::read_trial(buf.as_bytes()).context("reading trial from stdin")?
    } else {
        read_trial_file(Path::new(&args.trial))?
    };
    let (frames, clamped) = stream::correct_frames(trial.frames());
    if clamped > 0 {
        eprintln!("warning: {clamped} ambient-clamped samples");
    }
    let reference = match args.reference {
        Some((a, b)) => [a, b],
        None => stream::estimate_reference(&frames, signal::BASELINE_WINDOW_S)?,
    };
    eprintln!(
        "classify: debounce={} reference=({:.1},{:.1}) exclusion={:?}",
        args.debounce, reference[0], reference[1], args.exclusion
    );

    let run = stream::classify_stream(&model, &frames, reference, args.debounce, args.exclusion)?;
    let training = match &args.dataset {
        Some(path) => load_dataset(path)?,
        None => {
            let samples = training_points_from_model(&model)
                .into_iter()
                .map(|(s1, s2, state)| StateSample {
                    features: [s1, s2],
                    state,
                    trial_id: String::from("model"),
                })
                .collect();
            // Support vectors are genuine training rows, so state 1 keeps its
            // exact (1, 1) features.
            StateDataset::new(samples)?
        }
    };
    let report =
        stream::manifold_report(&run.trajectory, &run.events, &training, model.standardizer())?;

    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            Box::new(fs::File::create(path)?)
        }
        None => Box::new(std::io::stdout()),
    };
    stream::write_events(&mut out, &run.events, &report)?;
    if run.dropped_unpaired > 0 {
        eprintln!("warning: {} unpaired frames dropped", run.dropped_unpaired);
    }
    eprintln!(
        "classified {} samples into {} events; visited {:?}; mean manifold distance {:.4}",
        run.trajectory.len(),
        run.events.len(),
        report.visited,
        report.mean_distance
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading spec {}", path.display()))?;
            serde_json::from_str::<TrajectorySpec>(&text)
                .with_context(|| format!("parsing spec {}", path.display()))?
        }
        None => TrajectorySpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Ok(value) = std::env::var(SEED_ENV) {
        spec.seed = value
            .parse()
            .map_err(|_| anyhow!("{SEED_ENV}='{value}' is not a u64 seed"))?;
    }
    spec.validate().map_err(|e| anyhow!(e))?;
    eprintln!(
        "synth: n={} seed_base={} speed={} sigma={} rate={}Hz out={}",
        args.n, spec.seed, spec.speed_factor, spec.noise_sigma, spec.sample_rate,
        args.out.display()
    );
    let trials = synth::generate_condition(&spec, args.n, spec.seed).map_err(|e| anyhow!(e))?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    for trial in &trials {
        let path = args.out.join(format!("{}.jsonl", trial.trial_id));
        let mut buf = Vec::new();
        signal::write_trial(&mut buf, trial)?;
        write_output(&path, &buf)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

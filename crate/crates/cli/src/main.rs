use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mcmot::association::AssociationMethod;
use mcmot::io::csv::{
    parse_tracks, read_detections, serialize_detections, serialize_embeddings,
    serialize_track_embeddings, serialize_tracks, DetectionRow, EmbeddingTable,
};
use mcmot::io::results::{read_truth, to_json, truth_to_json, TimingReport};
use mcmot::io::{PipelineConfig, Preset, ResultsFile};
use mcmot::pipeline::{self, CameraInput};
use mcmot::sim::{self, ScenarioConfig};
use mcmot::{Error, Result};

/// Multi-camera person tracking and unique-identity counting.
#[derive(Parser)]
#[command(name = "mcmot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track one camera's detections and write per-frame confirmed tracks.
    Track(TrackArgs),
    /// Associate per-camera tracks into global identities.
    Associate(AssociateArgs),
    /// Generate a synthetic scenario: detections, embeddings, truth.
    Simulate(SimulateArgs),
    /// Score results files against truth files.
    Eval(EvalArgs),
    /// Track and associate a scenario directory in one run.
    Count(CountArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["study1", "study2"])]
    preset: Option<String>,
    /// Override the frame stride (keep frames where frame % stride == 0).
    #[arg(long)]
    frame_stride: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => PipelineConfig::load(path)?,
            (None, Some(name)) => PipelineConfig::preset(name.parse::<Preset>()?),
            (None, None) => PipelineConfig::default(),
        };
        if let Some(s) = self.frame_stride {
            cfg.decimation.stride = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    camera_id: u32,
    /// Stream length; defaults to one past the last detection frame.
    #[arg(long)]
    frames: Option<u64>,
    /// Tracks CSV; an embedding sidecar is written next to it when available.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Euclidean,
    Voting,
    EuclideanVoting,
    /// Euclidean clusters, with the voting count alongside.
    Both,
}

impl MethodArg {
    fn methods(self) -> Vec<AssociationMethod> {
        match self {
            MethodArg::Euclidean => vec![AssociationMethod::Euclidean],
            MethodArg::Voting => vec![AssociationMethod::Voting],
            MethodArg::EuclideanVoting => vec![AssociationMethod::EuclideanVoting],
            MethodArg::Both => vec![AssociationMethod::Euclidean, AssociationMethod::Voting],
        }
    }
}

#[derive(Args)]
struct AssociationArgs {
    /// Defaults to the configured method.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Association distance threshold; defaults to the configured value.
    #[arg(long)]
    threshold: Option<f64>,
}

impl AssociationArgs {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<Vec<AssociationMethod>> {
        if let Some(t) = self.threshold {
            cfg.association.threshold = t;
        }
        cfg.validate()?;
        Ok(self
            .method
            .map_or_else(|| vec![cfg.association.method], MethodArg::methods))
    }
}

#[derive(Args)]
struct AssociateArgs {
    /// Directory of `cam<N>.tracks.csv` files with `cam<N>.tracks.emb.csv` sidecars.
    #[arg(long)]
    tracks: PathBuf,
    #[command(flatten)]
    association: AssociationArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario TOML; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Results file; repeat together with --truth for several sets.
    #[arg(long, required = true)]
    results: Vec<PathBuf>,
    #[arg(long, required = true)]
    truth: Vec<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CountArgs {
    /// Directory written by `simulate` (`cam<N>.detections.csv`, embeddings, optional truth.json).
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    association: AssociationArgs,
    /// Worker threads for per-camera tracking.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    output: PathBuf,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Camera ids of files named `cam<N><suffix>` in `dir`, ascending.
fn cameras_in(dir: &Path, suffix: &str) -> Result<Vec<u32>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let name = entry.map_err(|e| io_err(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if let Some(id) = name
            .strip_prefix("cam")
            .and_then(|r| r.strip_suffix(suffix))
        {
            if let Ok(id) = id.parse() {
                ids.push(id);
            }
        }
    }
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(Error::Domain(format!(
            "no cam<N>{suffix} files in {}",
            dir.display()
        )));
    }
    Ok(ids)
}

fn embedding_sidecar(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name.strip_suffix(".csv").unwrap_or(&name);
    path.with_file_name(format!("{stem}.emb.csv"))
}

fn track(a: &TrackArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let rows = read_detections(&a.detections, a.embeddings.as_deref())?;
    let input = CameraInput {
        camera_id: a.camera_id,
        detections: rows.into_iter().map(|r| r.detection).collect(),
        frame_count: a.frames,
    };
    let start = Instant::now();
    let run = pipeline::track_camera(&input, &cfg)?;
    write(&a.output, &serialize_tracks(&run.tracklets))?;
    if let Some(emb) = serialize_track_embeddings(&run.tracklets) {
        write(&embedding_sidecar(&a.output), &emb)?;
    }
    let t = TimingReport::new(run.frames_processed, start.elapsed().as_secs_f64(), 1);
    eprintln!(
        "camera {}: {} tracklets, {} frames in {:.3} s ({:.0} fps)",
        a.camera_id,
        run.tracklets.len(),
        t.frames_processed,
        t.wall_seconds,
        t.fps
    );
    Ok(())
}

fn write_results(results: &ResultsFile, timing: &TimingReport, output: &Path) -> Result<()> {
    results.write(output)?;
    write(&TimingReport::sidecar_path(output), &timing.to_json())?;
    eprintln!(
        "{} unique ({}), {} frames in {:.3} s ({:.0} fps)",
        results.unique_count,
        results.method,
        timing.frames_processed,
        timing.wall_seconds,
        timing.fps
    );
    println!("{}", results.unique_count);
    Ok(())
}

fn associate(a: &AssociateArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    let methods = a.association.apply(&mut cfg)?;
    let start = Instant::now();
    let mut per_camera = BTreeMap::new();
    for cam in cameras_in(&a.tracks, ".tracks.csv")? {
        let path = a.tracks.join(format!("cam{cam}.tracks.csv"));
        let emb_path = embedding_sidecar(&path);
        let text = read(&path)?;
        let emb_text = if emb_path.exists() {
            Some(read(&emb_path)?)
        } else {
            None
        };
        let tracklets = parse_tracks(
            cam,
            &path,
            &text,
            emb_text.as_deref().map(|t| (emb_path.as_path(), t)),
        )?;
        per_camera.insert(cam, tracklets);
    }
    let results = pipeline::associate(&per_camera, &cfg, &methods, 0)?;
    let timing = TimingReport::new(0, start.elapsed().as_secs_f64(), 1);
    write_results(&results, &timing, &a.output)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg: ScenarioConfig = match &a.config {
        Some(p) => toml::from_str(&read(p)?)
            .map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let scenario = sim::generate(&cfg)?;
    for st in &scenario.streams {
        let rows: Vec<DetectionRow> = st
            .detections
            .iter()
            .enumerate()
            .map(|(i, d)| DetectionRow {
                det_id: i as u64,
                detection: d.clone(),
            })
            .collect();
        let mut table = EmbeddingTable {
            dim: cfg.embedding_dim,
            rows: BTreeMap::new(),
        };
        for r in &rows {
            if let Some(e) = &r.detection.embedding {
                table.rows.insert((r.detection.frame, r.det_id), e.clone());
            }
        }
        write(
            &a.out.join(format!("cam{}.detections.csv", st.camera_id)),
            &serialize_detections(&rows),
        )?;
        write(
            &a.out.join(format!("cam{}.embeddings.csv", st.camera_id)),
            &serialize_embeddings(&table),
        )?;
    }
    write(&a.out.join("truth.json"), &truth_to_json(&scenario.truth))?;
    write(
        &a.out.join("scenario.toml"),
        &toml::to_string(&cfg).expect("scenario serializes"),
    )?;
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    if a.results.len() != a.truth.len() {
        return Err(Error::Config(format!(
            "{} results files but {} truth files",
            a.results.len(),
            a.truth.len()
        )));
    }
    let results = a
        .results
        .iter()
        .map(|p| ResultsFile::read(p))
        .collect::<Result<Vec<_>>>()?;
    let truths = a
        .truth
        .iter()
        .map(|p| read_truth(p))
        .collect::<Result<Vec<_>>>()?;
    let sets: Vec<_> = results.iter().zip(&truths).collect();
    let report = pipeline::evaluate(&sets)?;
    let json = to_json(&report);
    print!("{json}");
    if let Some(out) = &a.output {
        write(out, &json)?;
    }
    Ok(())
}

fn count(a: &CountArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    let methods = a.association.apply(&mut cfg)?;
    let scenario_path = a.input.join("scenario.toml");
    let frame_count = if scenario_path.exists() {
        let sc: ScenarioConfig = toml::from_str(&read(&scenario_path)?)
            .map_err(|e| Error::Config(format!("{}: {}", scenario_path.display(), e.message())))?;
        Some(sc.frames)
    } else {
        None
    };
    let mut inputs = Vec::new();
    for cam in cameras_in(&a.input, ".detections.csv")? {
        let det = a.input.join(format!("cam{cam}.detections.csv"));
        let emb = a.input.join(format!("cam{cam}.embeddings.csv"));
        let rows = read_detections(&det, emb.exists().then_some(emb.as_path()))?;
        inputs.push(CameraInput {
            camera_id: cam,
            detections: rows.into_iter().map(|r| r.detection).collect(),
            frame_count,
        });
    }
    let (mut results, timing) = pipeline::run(&inputs, &cfg, &methods, a.threads)?;
    let truth_path = a.input.join("truth.json");
    if truth_path.exists() {
        let truth = read_truth(&truth_path)?;
        results.count_report = Some(pipeline::evaluate(&[(&results, &truth)])?);
    }
    write_results(&results, &timing, &a.output)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Track(a) => track(a),
        Command::Associate(a) => associate(a),
        Command::Simulate(a) => simulate(a),
        Command::Eval(a) => eval(a),
        Command::Count(a) => count(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(2)
        }
    }
}

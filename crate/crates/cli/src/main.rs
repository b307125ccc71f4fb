use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use effmp::config::PipelineConfig;
use effmp::eval::{breakdown_text, evaluate, load_dataset, predict_bundle};
use effmp::features::{estimate_dynamic_state, sample_goal_points, GoalSet};
use effmp::model::{count_flops, PredictionSet, Variant};
use effmp::plot::render_svg;
use effmp::scene::{generate_dataset, load_scene_bundle, save_scene_bundle, RoadTemplate, SyntheticSpec};
use effmp::tensor::read_checkpoint;
use effmp::train::{model_from_checkpoint, Trainer};
use effmp::Error;

#[derive(Parser)]
#[command(name = "effmp", version, about = "Attention-based trajectory prediction with map-based goal features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of scene bundles.
    GenData(GenData),
    /// Train a model and write best.ckpt / last.ckpt.
    Train(Train),
    /// Predict trajectories for one bundle.
    Predict(Predict),
    /// Evaluate a checkpoint on a dataset directory.
    Eval(Eval),
    /// Sample goal points for one bundle.
    ExtractFeatures(ExtractFeatures),
    /// Report parameter count and forward cost.
    Flops(Flops),
    /// Render a bundle and its predictions as SVG.
    Plot(Plot),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "intersection")]
    template: RoadTemplate,
    #[arg(long, default_value_t = 4)]
    agents: usize,
    /// Observation noise in meters.
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    k: Option<usize>,
    /// Continue from a last.ckpt written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct Predict {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// Per-scene breakdown file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractFeatures {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Flops {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, default_value_t = 10)]
    agents: usize,
    /// Goal points per scene.
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct Plot {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Error> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn require_file(flag: &str, path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{flag}: no such file: {}", path.display())))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn gen_data(a: GenData) -> CmdResult {
    let spec = SyntheticSpec::new(a.template, a.agents, a.sigma)?;
    create_dir(&a.out)?;
    for b in generate_dataset(&spec, a.count, a.seed) {
        save_scene_bundle(&b, &a.out.join(format!("{}.bundle", b.scene.scene_id())))?;
    }
    println!("wrote {} scenes to {}", a.count, a.out.display());
    Ok(())
}

fn train(a: Train) -> CmdResult {
    let data = load_dataset(&a.data_dir)?;
    create_dir(&a.out)?;
    let mut trainer = match &a.resume {
        Some(ckpt) => {
            require_file("--resume", ckpt)?;
            Trainer::resume_from(ckpt, data)?
        }
        None => {
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(s) = a.seed {
                cfg.train.seed = s;
            }
            if let Some(v) = a.variant {
                cfg.model.variant = v;
            }
            if let Some(k) = a.k {
                cfg.model.k = k;
            }
            if let Some(s) = a.steps {
                cfg.train.max_steps = s;
            }
            cfg.validate()?;
            Trainer::new(cfg, data)?
        }
    };
    let log_path = a.out.join("train.log");
    let file = fs::File::create(&log_path).map_err(|e| Error::Io {
        path: log_path.clone(),
        source: e,
    })?;
    let mut tee = Tee {
        file: io::BufWriter::new(file),
        stdout: io::stdout().lock(),
    };
    let summary = trainer.run(&mut tee, Some(&a.out))?;
    tee.flush().map_err(|e| Error::Io { path: log_path, source: e })?;
    println!(
        "trained {} steps, best val minADE {:.6}{}",
        summary.steps,
        summary.best_metric,
        if summary.early_stopped { " (early stop)" } else { "" }
    );
    Ok(())
}

struct Tee<A: Write, B: Write> {
    file: A,
    stdout: B,
}

impl<A: Write, B: Write> Write for Tee<A, B> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.file.write_all(buf)?;
        self.stdout.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.file.flush()?;
        self.stdout.flush()
    }
}

fn load_model(checkpoint: &Path, config: Option<&Path>) -> Result<(PipelineConfig, effmp::model::Model), Failure> {
    require_file("--checkpoint", checkpoint)?;
    let expected = config.map(PipelineConfig::load).transpose()?;
    let ckpt = read_checkpoint(checkpoint)?;
    Ok(model_from_checkpoint(&ckpt, expected.as_ref())?)
}

fn predict(a: Predict) -> CmdResult {
    let (cfg, model) = load_model(&a.checkpoint, a.config.as_deref())?;
    let bundle = load_scene_bundle(&a.bundle)?;
    let k = a.k.unwrap_or(cfg.model.k);
    let pred = predict_bundle(&model, &cfg.features, &bundle, k)?;
    write_file(&a.out, &pred.to_text())?;
    Ok(())
}

fn eval(a: Eval) -> CmdResult {
    let (cfg, model) = load_model(&a.checkpoint, a.config.as_deref())?;
    let data = load_dataset(&a.data_dir)?;
    let k = a.k.unwrap_or(cfg.model.k);
    let (report, rows) = evaluate(&model, &cfg.features, &data, k)?;
    println!("{report}");
    let out = a.out.unwrap_or_else(|| a.data_dir.join("eval_breakdown.txt"));
    write_file(&out, &breakdown_text(k, &rows))?;
    Ok(())
}

fn goals_for(bundle: &effmp::scene::SceneBundle, cfg: &PipelineConfig) -> Result<GoalSet, Error> {
    let scene = &bundle.scene;
    let state = estimate_dynamic_state(scene.target(), scene.time().hz as f64, &cfg.features.smoothing)?;
    sample_goal_points(&bundle.grid, &state, scene.target().last(), &cfg.features.sampler)
}

fn extract_features(a: ExtractFeatures) -> CmdResult {
    let cfg = load_config(a.config.as_deref())?;
    let bundle = load_scene_bundle(&a.bundle)?;
    let goals = goals_for(&bundle, &cfg)?;
    write_file(&a.out, &goals.to_text())?;
    println!("{} goal points, radius {:.3} m", goals.points.len(), goals.radius);
    Ok(())
}

fn flops(a: Flops) -> CmdResult {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(v) = a.variant {
        cfg.model.variant = v;
    }
    if let Some(k) = a.k {
        cfg.model.k = k;
    }
    cfg.validate()?;
    let r = a.r.unwrap_or(cfg.features.sampler.r);
    let rep = count_flops(&cfg.model, a.agents, r);
    println!("variant={} agents={} r={}", cfg.model.variant, a.agents, r);
    println!("params={} params_m={:.6}", rep.params, rep.params_millions());
    println!("gmacs={:.6} gflops={:.6}", rep.gmacs(), rep.gflops());
    println!("attention_gmacs={:.9}", rep.attention_gmacs());
    Ok(())
}

fn plot(a: Plot) -> CmdResult {
    let cfg = load_config(a.config.as_deref())?;
    let bundle = load_scene_bundle(&a.bundle)?;
    let pred = a.pred.as_deref().map(PredictionSet::load).transpose()?;
    let goals = match goals_for(&bundle, &cfg) {
        Ok(g) => Some(g),
        Err(Error::NoFeasibleCells) => None,
        Err(e) => return Err(e.into()),
    };
    write_file(&a.out, &render_svg(&bundle, pred.as_ref(), goals.as_ref()))?;
    Ok(())
}

fn threads_from_env() -> Result<(), String> {
    let Ok(v) = std::env::var("EFFMP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("EFFMP_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = threads_from_env() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::ExtractFeatures(a) => extract_features(a),
        Command::Flops(a) => flops(a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

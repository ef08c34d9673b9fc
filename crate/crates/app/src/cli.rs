//! `latentgrade` subcommands. Exit codes: 0 success, 1 domain/runtime error,
//! 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latentgrade::corpus::{generate_corpus, load_corpus, Corpus, Split};
use latentgrade::counterfactual::{CeMode, CeSteps, SweepMode};
use latentgrade::dae::{self, DaeModel, ModelConfig, TrainConfig};
use latentgrade::geometry::{CalibrationMode, Probe, ProbeKind};
use latentgrade::image::Image;
use latentgrade::metrics::render_table;
use latentgrade::par::Execution;
use latentgrade::{json, Error};

use crate::artifacts::{manifest_in, Layout, DEFAULT_HOME, HOME_ENV};
use crate::pipeline::{self, ProbeOptions};
use crate::service::{self, ServeConfig};

#[derive(Debug, Parser)]
#[command(name = "latentgrade", version, about = "Diffusion-autoencoder grading and counterfactual pipeline")]
pub struct Cli {
    /// Artifact directory used for every default path.
    #[arg(long, global = true, env = HOME_ENV, default_value = DEFAULT_HOME)]
    pub home: PathBuf,

    /// Run batch work on one thread (results are identical either way).
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic graded corpus.
    GenerateData(GenerateArgs),
    /// Train the diffusion autoencoder.
    Train(TrainArgs),
    /// Cache semantic latents for corpus splits.
    Embed(EmbedArgs),
    /// Fit a linear probe on train-probe latents.
    FitProbe(FitProbeArgs),
    /// Calibrate probe distance to grades on the calibrate split.
    Calibrate(CalibrateArgs),
    /// Score detection, grading, reconstruction and generation on the test split.
    Evaluate(EvaluateArgs),
    /// Generate counterfactual images for one sample.
    Counterfactual(CounterfactualArgs),
    /// Export a 2-D PCA projection of a split's latents.
    Project(ProjectArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

/// Model and corpus inputs shared by the post-training commands.
#[derive(Debug, Args)]
pub struct Inputs {
    /// Corpus directory or manifest [default: <home>/data].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint [default: <home>/model.daec].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory [default: <home>/data].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Split fractions: train-dae, train-probe, calibrate, test.
    #[arg(long, num_args = 4, value_delimiter = ',', default_values_t = [0.6, 0.2, 0.1, 0.1])]
    pub fractions: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory or manifest [default: <home>/data].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to write [default: <home>/model.daec].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
    /// Also save the checkpoint every N steps (0 = only at the end).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Split to embed (repeatable) [default: all].
    #[arg(long)]
    pub split: Vec<Split>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Svm,
    Logistic,
}

#[derive(Debug, Args)]
pub struct FitProbeArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long, value_enum, default_value = "svm")]
    pub kind: KindArg,
    /// Regularization strength [default: 1e-3 svm, 1e-4 logistic].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Full-batch epochs [default: 200 svm, 500 logistic].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Fit on per-feature standardized latents.
    #[arg(long)]
    pub standardize: bool,
    /// Probe file to write [default: <home>/probe.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CalModeArg {
    MeansOfExtremes,
    LeastSquares,
    Polynomial,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long, value_enum, default_value = "means-of-extremes")]
    pub mode: CalModeArg,
    /// Polynomial degree (polynomial mode only).
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    /// Probe file, updated in place [default: <home>/probe.json].
    #[arg(long)]
    pub probe: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub probe: Option<PathBuf>,
    /// Output directory [default: <home>/eval].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Test images used for the reconstruction round trip (0 skips it)
    /// [default: all].
    #[arg(long)]
    pub recon_limit: Option<usize>,
    /// Skip the generation (latent Fréchet) report.
    #[arg(long)]
    pub skip_generation: bool,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = dae::ENCODE_STEPS)]
    pub encode_steps: usize,
    #[arg(long, default_value_t = dae::DECODE_STEPS)]
    pub decode_steps: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CeModeArg {
    Reflect,
    TargetGrade,
    Sweep,
}

#[derive(Debug, Args)]
pub struct CounterfactualArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub probe: Option<PathBuf>,
    /// Corpus sample id.
    #[arg(long, conflicts_with = "image", required_unless_present = "image")]
    pub id: Option<u64>,
    /// PGM image instead of a corpus sample.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// [default: target-grade with --grade, sweep with --sweep-grades, else reflect]
    #[arg(long, value_enum)]
    pub mode: Option<CeModeArg>,
    /// Target grade for target-grade mode.
    #[arg(long)]
    pub grade: Option<f64>,
    /// Sweep values, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub sweep_grades: Vec<f64>,
    /// Let sweep grades leave [0, gmax] (linear calibrations only).
    #[arg(long)]
    pub allow_extrapolation: bool,
    /// Treat sweep values as raw signed-distance offsets.
    #[arg(long, conflicts_with = "allow_extrapolation")]
    pub uncalibrated: bool,
    /// Output directory [default: <home>/ce].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = dae::ENCODE_STEPS)]
    pub encode_steps: usize,
    #[arg(long, default_value_t = dae::DECODE_STEPS)]
    pub decode_steps: usize,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Output file [default: <home>/projection_<split>.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub probe: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Concurrent generation jobs; further requests queue in arrival order.
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    #[arg(long, default_value_t = dae::ENCODE_STEPS)]
    pub encode_steps: usize,
    #[arg(long, default_value_t = dae::DECODE_STEPS)]
    pub decode_steps: usize,
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<(), Error> {
    let layout = Layout::new(&cli.home);
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::GenerateData(a) => generate(&layout, a),
        Command::Train(a) => train(&layout, a, exec),
        Command::Embed(a) => embed(&layout, a, exec),
        Command::FitProbe(a) => fit_probe(&layout, a, exec),
        Command::Calibrate(a) => calibrate(&layout, a, exec),
        Command::Evaluate(a) => evaluate(&layout, a, exec),
        Command::Counterfactual(a) => counterfactual(&layout, a, exec),
        Command::Project(a) => project(&layout, a, exec),
        Command::Serve(a) => serve(&layout, a, exec),
    }
}

impl Inputs {
    fn corpus(&self, layout: &Layout) -> Result<Corpus, Error> {
        load_corpus(&manifest_in(self.data.as_deref().unwrap_or(&layout.data_dir())))
    }

    fn model(&self, layout: &Layout) -> Result<DaeModel, Error> {
        DaeModel::load(self.checkpoint.as_deref().unwrap_or(&layout.checkpoint()))
    }
}

fn probe_path(layout: &Layout, arg: &Option<PathBuf>) -> PathBuf {
    arg.clone().unwrap_or_else(|| layout.probe())
}

fn steps(encode: usize, decode: usize) -> Result<CeSteps, Error> {
    if encode == 0 || decode == 0 {
        return Err(Error::Domain("encode and decode step counts must be at least 1".into()));
    }
    Ok(CeSteps { encode, decode })
}

fn generate(layout: &Layout, a: GenerateArgs) -> Result<(), Error> {
    let out = a.out.unwrap_or_else(|| layout.data_dir());
    let fractions: [f64; 4] = a
        .fractions
        .try_into()
        .map_err(|_| Error::Domain("exactly four split fractions are required".into()))?;
    let corpus = generate_corpus(&out, a.n, a.seed, fractions)?;
    let counts: Vec<String> = Split::ALL
        .iter()
        .map(|&s| format!("{s}={}", corpus.split(s).count()))
        .collect();
    println!("wrote {} samples to {} ({})", corpus.samples.len(), out.display(), counts.join(", "));
    Ok(())
}

fn train(layout: &Layout, a: TrainArgs, exec: Execution) -> Result<(), Error> {
    if a.steps == 0 {
        return Err(Error::Domain("--steps must be at least 1".into()));
    }
    let manifest = manifest_in(&a.data.unwrap_or_else(|| layout.data_dir()));
    let out = a.out.unwrap_or_else(|| layout.checkpoint());
    let corpus = load_corpus(&manifest)?;
    let images: Vec<_> = corpus.split(Split::TrainDae).map(|s| &s.image).collect();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let config = TrainConfig {
        total_steps: a.steps,
        batch_size: a.batch,
        lr: a.lr,
        seed: a.seed,
        log_every: a.log_every,
        checkpoint_every: a.checkpoint_every,
        checkpoint_path: Some(out.clone()),
        exec,
    };
    let start = Instant::now();
    let (model, report) = dae::train(&images, ModelConfig::default(), &config, |p| {
        eprintln!(
            "step {:>6}  loss {:.5}  ({:.0}s)",
            p.step,
            p.loss,
            start.elapsed().as_secs_f64()
        );
    })?;
    model.save(&out)?;
    json::write(&out.with_extension("report.json"), &report)?;
    if out == layout.checkpoint() {
        pipeline::clear_latents(layout)?;
    }
    eprintln!(
        "trained {} steps on {} images in {:.1} min; checkpoint {}",
        a.steps,
        images.len(),
        start.elapsed().as_secs_f64() / 60.0,
        out.display()
    );
    Ok(())
}

fn embed(layout: &Layout, a: EmbedArgs, exec: Execution) -> Result<(), Error> {
    let corpus = a.inputs.corpus(layout)?;
    let model = a.inputs.model(layout)?;
    let splits = if a.split.is_empty() { Split::ALL.to_vec() } else { a.split };
    for split in splits {
        let records = pipeline::embed(layout, &model, &corpus, split, exec)?;
        println!("{split}: {} latents -> {}", records.len(), layout.latents(split).display());
    }
    Ok(())
}

fn fit_probe(layout: &Layout, a: FitProbeArgs, exec: Execution) -> Result<(), Error> {
    let corpus = a.inputs.corpus(layout)?;
    let model = a.inputs.model(layout)?;
    let records = pipeline::latents_for(layout, &model, &corpus, Split::TrainProbe, exec)?;
    let kind = match a.kind {
        KindArg::Svm => ProbeKind::Svm,
        KindArg::Logistic => ProbeKind::Logistic,
    };
    let probe = pipeline::fit_probe(
        &records,
        &corpus,
        ProbeOptions {
            kind,
            lambda: a.lambda,
            epochs: a.epochs,
            standardize: a.standardize,
        },
    )?;
    let out = probe_path(layout, &a.out);
    probe.save(&out)?;
    let (xs, ys) = pipeline::probe_dataset(&records, &corpus)?;
    let plane = probe.hyperplane()?;
    let correct = xs
        .iter()
        .zip(&ys)
        .filter(|(x, &y)| (plane.decision(x) > 0.0) == (y == 1))
        .count();
    println!(
        "{kind:?} probe on {} samples, training accuracy {:.3}; wrote {}",
        xs.len(),
        correct as f64 / xs.len() as f64,
        out.display()
    );
    Ok(())
}

fn calibrate(layout: &Layout, a: CalibrateArgs, exec: Execution) -> Result<(), Error> {
    let corpus = a.inputs.corpus(layout)?;
    let model = a.inputs.model(layout)?;
    let path = probe_path(layout, &a.probe);
    let mut probe = Probe::load(&path)?;
    let records = pipeline::latents_for(layout, &model, &corpus, Split::Calibrate, exec)?;
    let (mode, degree) = match a.mode {
        CalModeArg::MeansOfExtremes => (CalibrationMode::MeansOfExtremes, 1),
        CalModeArg::LeastSquares => (CalibrationMode::LeastSquares, 1),
        CalModeArg::Polynomial => (CalibrationMode::Polynomial, a.degree),
    };
    let cal = pipeline::calibrate(&records, &corpus, &probe.hyperplane()?, mode, degree)?;
    println!(
        "{} calibration, coefficients {:?}, distance range [{:.4}, {:.4}]",
        pipeline::mode_name(mode),
        cal.coeffs,
        cal.range[0],
        cal.range[1]
    );
    probe.cal = Some(cal);
    probe.save(&path)
}

fn evaluate(layout: &Layout, a: EvaluateArgs, exec: Execution) -> Result<(), Error> {
    let steps = steps(a.encode_steps, a.decode_steps)?;
    let corpus = a.inputs.corpus(layout)?;
    let model = a.inputs.model(layout)?;
    let probe = Probe::load(&probe_path(layout, &a.probe))?;
    let plane = probe.hyperplane()?;
    let test = pipeline::latents_for(layout, &model, &corpus, Split::Test, exec)?;

    let mut reports = vec![pipeline::detection_report(&test, &corpus, &plane)?];
    if let Some(cal) = &probe.cal {
        reports.push(pipeline::grading_report(&test, &corpus, &plane, cal)?);
    } else {
        eprintln!("probe is uncalibrated; skipping the grading report");
    }
    let images: Vec<&Image> = corpus.split(Split::Test).map(|s| &s.image).collect();
    let limit = a.recon_limit.unwrap_or(images.len()).min(images.len());
    if limit > 0 {
        reports.push(pipeline::reconstruction_report(&model, &images[..limit], steps, exec)?);
    }
    if !a.skip_generation {
        match pipeline::generation_report(&model, &test, steps.decode, a.seed, exec) {
            Ok(r) => reports.push(r),
            Err(Error::UndefinedMetric(why)) => eprintln!("skipping the generation report: {why}"),
            Err(e) => return Err(e),
        }
    }

    let dir = a.out.unwrap_or_else(|| layout.eval_dir());
    json::write(&dir.join("report.json"), &reports)?;
    let table = render_table(&reports);
    std::fs::write(dir.join("report.txt"), &table).map_err(|e| Error::Io {
        path: dir.join("report.txt"),
        source: e,
    })?;
    print!("{table}");
    Ok(())
}

fn ce_mode(a: &CounterfactualArgs) -> Result<CeMode, Error> {
    let mode = a.mode.unwrap_or(if a.grade.is_some() {
        CeModeArg::TargetGrade
    } else if !a.sweep_grades.is_empty() {
        CeModeArg::Sweep
    } else {
        CeModeArg::Reflect
    });
    Ok(match mode {
        CeModeArg::Reflect => CeMode::Reflect,
        CeModeArg::TargetGrade => CeMode::TargetGrade {
            target_grade: a
                .grade
                .ok_or_else(|| Error::Domain("target-grade mode needs --grade".into()))?,
        },
        CeModeArg::Sweep => CeMode::Sweep {
            sweep_grades: a.sweep_grades.clone(),
            sweep_mode: if a.uncalibrated {
                SweepMode::Uncalibrated
            } else if a.allow_extrapolation {
                SweepMode::Extrapolate
            } else {
                SweepMode::Calibrated
            },
        },
    })
}

fn counterfactual(layout: &Layout, a: CounterfactualArgs, exec: Execution) -> Result<(), Error> {
    let steps = steps(a.encode_steps, a.decode_steps)?;
    let mode = ce_mode(&a)?;
    let model = a.inputs.model(layout)?;
    let probe = Probe::load(&probe_path(layout, &a.probe))?;
    let image = match (&a.image, a.id) {
        (Some(path), _) => Image::read_pgm(path)?,
        (None, Some(id)) => {
            let corpus = a.inputs.corpus(layout)?;
            corpus
                .get(id)
                .ok_or_else(|| Error::Domain(format!("no sample with id {id}")))?
                .image
                .clone()
        }
        (None, None) => unreachable!("clap requires --id or --image"),
    };
    let export = pipeline::run_counterfactual(&model, &probe, &image, a.id, &mode, steps, exec)?;
    let dir = a.out.unwrap_or_else(|| layout.ce_dir());
    let written = pipeline::write_counterfactual(&dir, &export)?;
    println!(
        "source distance {:.4}, score {:.3}",
        export.result.distance_original, export.result.score_original
    );
    for f in &export.result.frames {
        let label = f.value.map_or_else(|| "reflect".into(), pipeline::value_label);
        println!("  {label:>8}: distance {:.4}, score {:.3}", f.distance, f.score);
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn project(layout: &Layout, a: ProjectArgs, exec: Execution) -> Result<(), Error> {
    let corpus = a.inputs.corpus(layout)?;
    let model = a.inputs.model(layout)?;
    let records = pipeline::latents_for(layout, &model, &corpus, a.split, exec)?;
    let projection = pipeline::projection(&records, &corpus, a.split)?;
    let out = a
        .out
        .unwrap_or_else(|| layout.home.join(format!("projection_{}.json", a.split)));
    json::write(&out, &projection)?;
    println!(
        "{} points, explained variance {:?}; wrote {}",
        projection.points.len(),
        projection.explained_ratio,
        out.display()
    );
    Ok(())
}

fn serve(layout: &Layout, a: ServeArgs, exec: Execution) -> Result<(), Error> {
    let config = ServeConfig {
        manifest: manifest_in(a.inputs.data.as_deref().unwrap_or(&layout.data_dir())),
        checkpoint: a.inputs.checkpoint.clone().unwrap_or_else(|| layout.checkpoint()),
        probe: probe_path(layout, &a.probe),
        workers: a.workers,
        steps: steps(a.encode_steps, a.decode_steps)?,
        exec,
    };
    if a.workers == 0 {
        return Err(Error::Domain("--workers must be at least 1".into()));
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
        path: Path::new("<runtime>").to_path_buf(),
        source: e,
    })?;
    runtime.block_on(service::serve(config, &a.host, a.port))
}

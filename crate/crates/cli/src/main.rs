use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use liftc_core::api::{load_spec_dir, ApiSpec};
use liftc_core::bench::{run_corpus, write_tables};
use liftc_core::classifier::{train_classifier, ClassifierModel};
use liftc_core::corpus::{load_source, Manifest};
use liftc_core::pipeline::{lift_program, PipelineConfig, Status};
use liftc_core::profitability::{
    default_heldout_grid, default_training_grid, evaluate, sample_timings, train_svm, write_csv, BlockedXpu, NaiveCpu,
    SvmHyper, SvmModel, DEFAULT_REPS,
};
use liftc_core::rewriter::write_outputs;

const DEFAULT_SPEC_DIR: &str = "specs";
const DEFAULT_CLASSIFIER: &str = "models/classifier.model.json";
const DEFAULT_PROFITABILITY: &str = "models/profitability.model.json";

#[derive(Parser)]
#[command(name = "liftc", version, about = "Lifts GEMM and convolution kernels to API calls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lift the functions of one source file.
    Lift(LiftArgs),
    /// Run the pipeline over a corpus directory and write summary tables.
    Bench(BenchArgs),
    /// Train a model.
    Train {
        #[command(subcommand)]
        what: TrainCommand,
    },
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// API spec file; repeatable. Defaults to every spec in --spec-dir.
    #[arg(long = "api", value_name = "SPEC.json")]
    apis: Vec<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = DEFAULT_SPEC_DIR)]
    spec_dir: PathBuf,
    /// Classifier model; used when present.
    #[arg(long, value_name = "FILE", default_value = DEFAULT_CLASSIFIER)]
    classifier: PathBuf,
    #[arg(long)]
    no_classifier: bool,
    /// Profitability model for the dispatch stubs; used when present.
    #[arg(long, value_name = "FILE", default_value = DEFAULT_PROFITABILITY)]
    profitability: PathBuf,
    #[arg(long, default_value_t = 100)]
    max_candidates: usize,
    #[arg(long, default_value_t = 600)]
    budget_sec: u64,
    /// Randomized IO tests per candidate.
    #[arg(long, default_value_t = 30)]
    tests: usize,
    #[arg(long, env = "LIFTC_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LiftArgs {
    file: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Ask before substituting each lifted function.
    #[arg(long)]
    require_confirm: bool,
    #[arg(long, value_name = "DIR", default_value = "liftc-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    dir: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, value_name = "DIR", default_value = "liftc-bench")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    Default,
}

#[derive(Subcommand)]
enum TrainCommand {
    /// Fit the classifier on a labelled corpus (needs manifest.json).
    Classifier {
        corpus: PathBuf,
        #[arg(long, default_value = DEFAULT_CLASSIFIER)]
        out: PathBuf,
    },
    /// Time both backends over a size grid and fit the SVM.
    Profitability {
        #[arg(long, value_enum, default_value_t = Grid::Default)]
        grid: Grid,
        #[arg(long, default_value_t = DEFAULT_REPS)]
        reps: usize,
        #[arg(long, default_value = DEFAULT_PROFITABILITY)]
        out: PathBuf,
        /// Training timings; defaults to the model path with a .csv extension.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn load_apis(a: &PipelineArgs) -> Result<Vec<ApiSpec>> {
    if a.apis.is_empty() {
        if !a.spec_dir.is_dir() {
            bail!("no --api given and spec directory {} not found", a.spec_dir.display());
        }
        let specs = load_spec_dir(&a.spec_dir).with_context(|| format!("loading {}", a.spec_dir.display()))?;
        if specs.is_empty() {
            bail!("no API specs in {}", a.spec_dir.display());
        }
        return Ok(specs);
    }
    a.apis.iter().map(|p| ApiSpec::load(p).with_context(|| format!("loading {}", p.display()))).collect()
}

fn pipeline_config(a: &PipelineArgs) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::new(load_apis(a)?);
    if !a.no_classifier && a.classifier.exists() {
        cfg.classifier =
            Some(ClassifierModel::load(&a.classifier).with_context(|| format!("loading {}", a.classifier.display()))?);
    }
    if a.profitability.exists() {
        cfg.profitability =
            Some(SvmModel::load(&a.profitability).with_context(|| format!("loading {}", a.profitability.display()))?);
    }
    cfg.max_candidates = a.max_candidates;
    cfg.budget = Duration::from_secs(a.budget_sec);
    cfg.num_tests = a.tests;
    cfg.seed = a.seed;
    Ok(cfg)
}

fn confirm(function: &str, api: &str) -> bool {
    eprint!("substitute `{function}` with a call to {api}? [y/N] ");
    let _ = std::io::stderr().flush();
    let mut line = String::new();
    std::io::stdin().lock().read_line(&mut line).is_ok() && matches!(line.trim(), "y" | "Y" | "yes")
}

fn lift(args: LiftArgs) -> Result<ExitCode> {
    let cfg = pipeline_config(&args.pipeline)?;
    let program = load_source(&args.file)?;
    let mut out = lift_program(&program, &cfg);
    if args.require_confirm {
        let (keep, drop): (Vec<_>, Vec<_>) = out.manifests.into_iter().partition(|m| confirm(&m.function, &m.api));
        if let Some(p) = out.program.as_mut() {
            for m in &drop {
                let orig = program.function(&m.function).expect("function exists").clone();
                *p.functions.iter_mut().find(|f| f.name == m.function).expect("function exists") = orig;
            }
        }
        for m in &drop {
            if let Some(r) = out.report.functions.iter_mut().find(|r| r.function == m.function) {
                r.warnings.push("rewrite declined".into());
            }
        }
        out.manifests = keep;
    }

    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let stem = args.file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    let report_path = args.out_dir.join(format!("{stem}.report.json"));
    std::fs::write(&report_path, serde_json::to_string_pretty(&out.report)? + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;
    for r in &out.report.functions {
        let detail = match (&r.manifest, &r.reason) {
            (Some(m), _) => format!(" -> {}", m.api),
            (None, Some(reason)) => format!(" ({reason})"),
            _ => String::new(),
        };
        println!("{}: {:?}{}", r.function, r.status, detail);
    }
    println!("report: {}", report_path.display());
    if let (Some(p), false) = (&out.program, out.manifests.is_empty()) {
        let (src, man) = write_outputs(&args.out_dir, &args.file, p, &out.manifests)?;
        println!("lifted source: {}\nmanifest: {}", src.display(), man.display());
    }
    let lifted = out.report.functions.iter().any(|r| r.status == Status::Lifted);
    Ok(if lifted { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn bench(args: BenchArgs) -> Result<ExitCode> {
    if !args.dir.is_dir() {
        bail!("corpus directory {} not found", args.dir.display());
    }
    let cfg = pipeline_config(&args.pipeline)?;
    let report = run_corpus(&args.dir, &cfg)?;
    let files = write_tables(&args.out_dir, &report)?;
    println!("{:<8} {:<16} {:>6} {:>6} {:>6}", "label", "category", "total", "lifted", "rate");
    for c in &report.categories {
        println!("{:<8} {:<16} {:>6} {:>6} {:>6.2}", c.label, c.category, c.total, c.lifted, c.rate);
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn write_model(path: &Path, json: String) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
}

fn train(what: TrainCommand) -> Result<ExitCode> {
    match what {
        TrainCommand::Classifier { corpus, out } => {
            let m = Manifest::load(&corpus)?;
            let data = m.labelled_features(&corpus)?;
            let model = train_classifier(&data)?;
            let correct = data.iter().filter(|(fv, l)| &model.classify(fv).0 == l).count();
            write_model(&out, model.to_json())?;
            println!("classifier: {} examples, training accuracy {:.3}", data.len(), correct as f64 / data.len() as f64);
            println!("wrote {}", out.display());
        }
        TrainCommand::Profitability { grid: Grid::Default, reps, out, csv } => {
            let (cpu, xpu) = (NaiveCpu, BlockedXpu::default());
            let train = sample_timings(&cpu, &xpu, &default_training_grid(), reps)?;
            let model = train_svm(&train, &SvmHyper::default())?;
            let held = sample_timings(&cpu, &xpu, &default_heldout_grid(), reps)?;
            let rep = evaluate(&model, &train, &held);
            write_model(&out, model.to_json())?;
            let csv = csv.unwrap_or_else(|| out.with_extension("csv"));
            write_csv(&csv, &["m", "n", "k"], &train)?;
            println!(
                "profitability: {} samples, training accuracy {:.3}, held-out accuracy {:.3} ({} of {}), median latency {:.4} ms",
                train.len(),
                model.training_accuracy,
                rep.accuracy,
                rep.correct,
                rep.total,
                rep.median_latency_ms
            );
            println!("wrote {}\nwrote {}", out.display(), csv.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let res = match cli.command {
        Command::Lift(a) => lift(a),
        Command::Bench(a) => bench(a),
        Command::Train { what } => train(what),
    };
    res.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use mtaffect::analysis::{emit_contribution_plot, layer_contribution_from_checkpoint};
use mtaffect::data::{expression_distribution, generate_synthetic, load_manifest, merge_datasets, save_manifest, SyntheticSpec};
use mtaffect::distill::{
    build_unified, complete_labels, load_completed, save_completed, train_student, train_teacher, CompletionOptions,
    TeacherModel,
};
use mtaffect::metrics::{evaluate, predict_manifest, read_predictions, write_predictions, EvalOptions};
use mtaffect::model::checkpoint;
use mtaffect::trainer::FitOutcome;
use mtaffect::Task;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "mtaffect", version, about = "Multi-task facial affect toolkit")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a labelled synthetic dataset.
    GenSynthetic {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        mask_rate: Option<f64>,
    },
    /// Concatenate manifests, namespacing ids by source.
    Merge {
        #[arg(long = "input", required = false)]
        inputs: Vec<PathBuf>,
    },
    /// Expression class histogram of a manifest.
    ExprDist {
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train a single-task teacher.
    TrainTeacher {
        #[arg(long)]
        task: Task,
        #[command(flatten)]
        data: TrainData,
    },
    /// Fill missing labels with teacher predictions.
    CompleteLabels {
        #[arg(long)]
        train: Option<PathBuf>,
        /// Teacher directory; give one per task.
        #[arg(long = "teacher")]
        teachers: Vec<PathBuf>,
        /// Store argmax classes and 0/1 AU decisions.
        #[arg(long)]
        hard: bool,
    },
    /// Join ground truth and completed labels into a fully labelled manifest.
    BuildMulti {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        completed: Option<PathBuf>,
    },
    /// Train the multi-task student.
    TrainStudent {
        #[command(flatten)]
        data: TrainData,
    },
    /// Write predictions for every sample of a manifest.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Score predictions (or a checkpoint) against a labelled manifest.
    Evaluate {
        #[arg(long, conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Per-level contribution table and plot for a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainData {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    summary: Vec<(String, String)>,
}

impl Run {
    fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    fn path(&self, flag: Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        flag.or_else(|| configured.clone())
            .with_context(|| format!("no {name} path: pass --{name} or set data.{name} in the config"))
    }

    fn finish(&self) -> Result<()> {
        let mut text = String::new();
        for (k, v) in &self.summary {
            writeln!(text, "{k}={v}")?;
        }
        let path = self.out.join("summary");
        fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
        print!("{text}");
        Ok(())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let category = err
                .chain()
                .find_map(|e| e.downcast_ref::<mtaffect::Error>())
                .map(|e| e.category())
                .or_else(|| err.chain().any(|e| e.is::<toml::de::Error>()).then_some("config"))
                .unwrap_or("error");
            eprintln!("error[{category}]: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut resolved = cfg.resolved();
    resolved.out = Some(out.clone());
    fs::write(out.join("resolved_config.toml"), resolved.to_toml()?)?;

    let mut run = Run {
        cfg: resolved,
        out,
        summary: Vec::new(),
    };
    run.note("seed", run.cfg.seed);
    match cli.command {
        Command::GenSynthetic {
            n,
            image_size,
            noise,
            mask_rate,
        } => gen_synthetic(&mut run, n, image_size, noise, mask_rate)?,
        Command::Merge { inputs } => merge(&mut run, inputs)?,
        Command::ExprDist { labels } => expr_dist(&mut run, labels)?,
        Command::TrainTeacher { task, data } => teacher(&mut run, task, data)?,
        Command::CompleteLabels { train, teachers, hard } => complete(&mut run, train, teachers, hard)?,
        Command::BuildMulti { train, completed } => build_multi(&mut run, train, completed)?,
        Command::TrainStudent { data } => student(&mut run, data)?,
        Command::Predict { checkpoint, labels } => predict(&mut run, checkpoint, labels)?,
        Command::Evaluate {
            predictions,
            checkpoint,
            labels,
        } => eval(&mut run, predictions, checkpoint, labels)?,
        Command::Analyze { checkpoint } => analyze(&mut run, checkpoint)?,
    }
    run.finish()
}

fn gen_synthetic(
    run: &mut Run,
    n: Option<usize>,
    image_size: Option<usize>,
    noise: Option<f64>,
    mask_rate: Option<f64>,
) -> Result<()> {
    let s = &run.cfg.synthetic;
    let spec = SyntheticSpec {
        n: n.unwrap_or(s.n),
        image_size: image_size.unwrap_or(s.image_size),
        noise: noise.unwrap_or(s.noise),
        mask_rate: mask_rate.unwrap_or(s.mask_rate),
        num_aus: s.num_aus,
        seed: run.cfg.seed,
    };
    let m = generate_synthetic(&spec, &run.out)?;
    let (va, expr, au) = m.coverage().as_tuple();
    info!("synthetic samples={} coverage=({va},{expr},{au})", m.len());
    run.note("manifest", run.out.join("manifest.csv").display());
    run.note("samples", m.len());
    run.note("coverage", format!("{va},{expr},{au}"));
    Ok(())
}

fn merge(run: &mut Run, inputs: Vec<PathBuf>) -> Result<()> {
    let inputs = if inputs.is_empty() { run.cfg.data.inputs.clone() } else { inputs };
    if inputs.is_empty() {
        bail!("nothing to merge: pass --input or set data.inputs in the config");
    }
    let manifests = inputs.iter().map(load_manifest).collect::<mtaffect::Result<Vec<_>>>()?;
    let merged = merge_datasets(&manifests)?;
    let path = run.out.join("merged.csv");
    save_manifest(&merged, &path)?;
    run.note("manifest", path.display());
    run.note("samples", merged.len());
    Ok(())
}

fn expr_dist(run: &mut Run, labels: Option<PathBuf>) -> Result<()> {
    let labels = run.path(labels, &run.cfg.data.labels, "labels")?;
    let dist = expression_distribution(&load_manifest(&labels)?);
    let table = run.out.join("expr_distribution.csv");
    fs::write(&table, dist.to_table())?;
    let plot = run.out.join("expr_distribution.png");
    dist.plot(&plot)?;
    run.note("table", table.display());
    run.note("plot", plot.display());
    run.note("labelled", dist.total());
    Ok(())
}

fn note_fit(run: &mut Run, outcome: &FitOutcome) -> Result<()> {
    let history = run.out.join("history.csv");
    outcome.history.save_csv(&history)?;
    run.note("history", history.display());
    if let Some(loss) = outcome.history.losses().last() {
        run.note("final_loss", loss);
    }
    if let (Some(e), Some(s)) = (outcome.best_epoch, outcome.best_score) {
        run.note("best_epoch", e);
        run.note("best_score", s);
    }
    if let Some(p) = &outcome.best_checkpoint {
        run.note("best_checkpoint", p.display());
    }
    Ok(())
}

fn teacher(run: &mut Run, task: Task, data: TrainData) -> Result<()> {
    let train = load_manifest(run.path(data.train, &run.cfg.data.train, "train")?)?;
    let val = data.val.or_else(|| run.cfg.data.val.clone()).map(load_manifest).transpose()?;
    let mut tc = run.cfg.teacher_train();
    tc.checkpoint_dir = Some(run.out.join("checkpoints"));
    let (teacher, outcome) = train_teacher(task, &train, &run.cfg.model_config(), &tc, val.as_ref())?;
    let dir = run.out.join(format!("teacher-{task}"));
    teacher.save(&dir)?;
    run.note("task", task);
    run.note("teacher", dir.display());
    run.note("teacher_id", teacher.id());
    note_fit(run, &outcome)
}

fn complete(run: &mut Run, train: Option<PathBuf>, teachers: Vec<PathBuf>, hard: bool) -> Result<()> {
    let train = load_manifest(run.path(train, &run.cfg.data.train, "train")?)?;
    let dirs = if teachers.is_empty() { run.cfg.data.teachers.clone() } else { teachers };
    let teachers = dirs.iter().map(TeacherModel::load).collect::<mtaffect::Result<Vec<_>>>()?;
    let opts = CompletionOptions {
        hard: hard || run.cfg.completion.hard,
    };
    let completed = complete_labels(&teachers, &train, opts)?;
    let path = run.out.join("completed.csv");
    save_completed(&completed, &path)?;
    run.note("completed", path.display());
    run.note("filled", completed.entries.len());
    run.note("dropped", completed.dropped.len());
    Ok(())
}

fn build_multi(run: &mut Run, train: Option<PathBuf>, completed: Option<PathBuf>) -> Result<()> {
    let train = load_manifest(run.path(train, &run.cfg.data.train, "train")?)?;
    let completed = load_completed(run.path(completed, &run.cfg.data.completed, "completed")?)?;
    let unified = build_unified(&train, &completed)?.with_resolved_paths();
    let path = run.out.join("d_multi.csv");
    save_manifest(&unified, &path)?;
    let (va, expr, au) = unified.coverage().as_tuple();
    run.note("manifest", path.display());
    run.note("samples", unified.len());
    run.note("coverage", format!("{va},{expr},{au}"));
    Ok(())
}

fn student(run: &mut Run, data: TrainData) -> Result<()> {
    let train = load_manifest(run.path(data.train, &run.cfg.data.train, "train")?)?;
    let val = data.val.or_else(|| run.cfg.data.val.clone()).map(load_manifest).transpose()?;
    let mut sc = run.cfg.student_train();
    sc.checkpoint_dir = Some(run.out.join("checkpoints"));
    let (model, outcome) = train_student(&train, &run.cfg.model_config(), &run.cfg.loss, &sc, val.as_ref())?;
    let path = run.out.join("student.ckpt");
    checkpoint::save(&model, &path)?;
    run.note("checkpoint", path.display());
    note_fit(run, &outcome)
}

fn predict(run: &mut Run, ckpt: Option<PathBuf>, labels: Option<PathBuf>) -> Result<()> {
    let model = checkpoint::load(run.path(ckpt, &run.cfg.data.checkpoint, "checkpoint")?)?;
    let manifest = load_manifest(run.path(labels, &run.cfg.data.labels, "labels")?)?;
    let rows = predict_manifest(&model, &manifest)?;
    let path = run.out.join("predictions.csv");
    write_predictions(&rows, fs::File::create(&path)?)?;
    run.note("predictions", path.display());
    run.note("samples", rows.len());
    Ok(())
}

fn eval(run: &mut Run, preds: Option<PathBuf>, ckpt: Option<PathBuf>, labels: Option<PathBuf>) -> Result<()> {
    let manifest = load_manifest(run.path(labels, &run.cfg.data.labels, "labels")?)?;
    let rows = match (preds.or_else(|| run.cfg.data.predictions.clone()), ckpt) {
        (_, Some(c)) => predict_manifest(&checkpoint::load(c)?, &manifest)?,
        (Some(p), None) => read_predictions(
            fs::File::open(&p).with_context(|| format!("opening {}", p.display()))?,
            &p.display().to_string(),
        )?,
        (None, None) => match &run.cfg.data.checkpoint {
            Some(c) => predict_manifest(&checkpoint::load(c)?, &manifest)?,
            None => bail!("nothing to evaluate: pass --predictions or --checkpoint"),
        },
    };
    let opts = EvalOptions {
        au_threshold: run.cfg.eval.au_threshold,
    };
    let report = evaluate(&rows, &manifest, &opts)?;
    eprint!("{}", report.to_text());
    let path = run.out.join("metrics.txt");
    fs::write(&path, report.to_key_value())?;
    for line in report.to_key_value().lines() {
        if let Some((k, v)) = line.split_once('=') {
            run.note(k, v);
        }
    }
    Ok(())
}

fn analyze(run: &mut Run, ckpt: Option<PathBuf>) -> Result<()> {
    let ckpt = run.path(ckpt, &run.cfg.data.checkpoint, "checkpoint")?;
    let report = layer_contribution_from_checkpoint(&ckpt)?;
    let table = run.out.join("contribution.csv");
    let plot = run.out.join("contribution.png");
    emit_contribution_plot(&report, &table, &plot)?;
    run.note("table", table.display());
    run.note("plot", plot.display());
    for h in &report.heads {
        let v: Vec<String> = h.normalized.iter().map(|x| format!("{x:.6}")).collect();
        run.note(&format!("{}.normalized", h.task), v.join(","));
    }
    Ok(())
}

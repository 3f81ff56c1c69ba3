use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use polywsd::data::{
    build_vocab, load_checkpoint, load_corpus, load_gold, load_inventory, load_predictions,
    save_checkpoint, save_corpus, save_gold, save_inventory, save_predictions, CorpusInstance,
};
use polywsd::eval::{compare_costs, run_fingerprint, score_f1, RunMetrics};
use polywsd::model::ModelParams;
use polywsd::predict::{prediction_lines, FirstSensePredictor, MfsPredictor, Predictor, WsdModel};
use polywsd::synthetic::{generate, SyntheticSpec};
use polywsd::train::{bcl_gradcheck, Batch, TrainMode, Trainer};
use polywsd::RunConfig;

/// Failure threshold for `gradcheck`.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "polywsd", version, about = "Poly-encoder word sense disambiguation at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Predict one sense per corpus instance from a checkpoint.
    Predict(PredictArgs),
    /// Score predictions against a gold key.
    Eval(EvalArgs),
    /// Train in both modes and compare their cost.
    Bench(BenchArgs),
    /// Finite-difference check of the contrastive loss gradient.
    Gradcheck(GradcheckArgs),
    /// Write heuristic predictions.
    Baseline(BaselineArgs),
    /// Write a synthetic corpus, inventory, gold key and config.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    inventory: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// TOML run configuration; the desk preset when omitted.
    #[arg(long, conflicts_with = "resume")]
    config: Option<PathBuf>,
    /// Where to write the checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Overrides the configured training seed.
    #[arg(long, conflicts_with = "resume")]
    seed: Option<u64>,
    #[arg(long, default_value_t = TrainMode::Bcl)]
    mode: TrainMode,
    /// JSON Lines log with one record per step.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Stop after this many steps (the checkpoint can be resumed).
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction file, `instance_id<TAB>sense_id` per line.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Corpus used for the per-POS breakdown.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    device_count: u32,
    /// Caps each run at this many steps.
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-4)]
    h: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    /// Most frequent sense in a training corpus.
    Mfs,
    /// First listed sense.
    S1,
}

#[derive(Args)]
struct BaselineArgs {
    kind: BaselineKind,
    #[command(flatten)]
    data: DataArgs,
    /// Sense-annotated corpus for frequency counts (mfs only).
    #[arg(long, required_if_eq("kind", "mfs"))]
    train_corpus: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    lemmas: usize,
    #[arg(long, default_value_t = 3)]
    senses: usize,
    #[arg(long, default_value_t = 50)]
    instances: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Baseline(a) => baseline(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut run = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => RunConfig::desk(),
    };
    if let Some(s) = seed {
        run.train.seed = s;
    }
    Ok(run)
}

fn load_data(d: &DataArgs) -> Result<(Vec<CorpusInstance>, polywsd::data::SenseInventory)> {
    let corpus = load_corpus(&d.corpus).with_context(|| format!("loading corpus {}", d.corpus.display()))?;
    let inventory =
        load_inventory(&d.inventory).with_context(|| format!("loading inventory {}", d.inventory.display()))?;
    Ok((corpus, inventory))
}

fn emit(out: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let (corpus, inventory) = load_data(&a.data)?;
    let mut trainer = match &a.resume {
        Some(p) => Trainer::from_checkpoint(
            load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display()))?,
        )?,
        None => {
            let run = load_config(a.config.as_deref(), a.seed)?;
            let vocab = build_vocab(&corpus, &inventory, run.train.min_freq)?;
            Trainer::new(run.model(), vocab, run.train)?
        }
    };
    let fingerprint = run_fingerprint(&trainer.config, &trainer.train, &corpus, &inventory);
    let mut log = match &a.metrics {
        Some(p) => Some(BufWriter::new(
            OpenOptions::new()
                .create(true)
                .append(a.resume.is_some())
                .write(true)
                .truncate(a.resume.is_none())
                .open(p)
                .with_context(|| format!("opening {}", p.display()))?,
        )),
        None => None,
    };
    let mut log_result: Result<()> = Ok(());
    let summary = trainer.run(&corpus, &inventory, a.mode, a.max_steps, |rec| {
        if let (Some(w), Ok(())) = (log.as_mut(), &log_result) {
            log_result = serde_json::to_writer(&mut *w, rec)
                .map_err(anyhow::Error::from)
                .and_then(|()| Ok(writeln!(w)?));
        }
    })?;
    log_result.context("writing metrics")?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    save_checkpoint(&a.checkpoint, &trainer.checkpoint())
        .with_context(|| format!("writing checkpoint {}", a.checkpoint.display()))?;
    emit(None, &RunMetrics::new(&summary, fingerprint))?;
    Ok(ExitCode::SUCCESS)
}

fn predict(a: PredictArgs) -> Result<ExitCode> {
    let (corpus, inventory) = load_data(&a.data)?;
    let ckpt = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let model = WsdModel::from_checkpoint(ckpt);
    let preds = model.predict_all(&corpus, &inventory)?;
    save_predictions(&a.out, &prediction_lines(&preds))?;
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let preds = load_predictions(&a.predictions)
        .with_context(|| format!("loading predictions {}", a.predictions.display()))?;
    let gold = load_gold(&a.gold).with_context(|| format!("loading gold key {}", a.gold.display()))?;
    let corpus = match &a.corpus {
        Some(p) => Some(load_corpus(p).with_context(|| format!("loading corpus {}", p.display()))?),
        None => None,
    };
    let report = score_f1(&preds, &gold, corpus.as_deref())?;
    emit(a.out.as_deref(), &report)?;
    Ok(ExitCode::SUCCESS)
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    let (corpus, inventory) = load_data(&a.data)?;
    let run = load_config(a.config.as_deref(), a.seed)?;
    let vocab = build_vocab(&corpus, &inventory, run.train.min_freq)?;
    let mut metrics = Vec::with_capacity(2);
    for mode in [TrainMode::Bcl, TrainMode::AllCandidates] {
        let mut t = Trainer::new(run.model(), vocab.clone(), run.train)?;
        let fp = run_fingerprint(&t.config, &t.train, &corpus, &inventory);
        let summary = t.run(&corpus, &inventory, mode, a.max_steps, |_| {})?;
        metrics.push(RunMetrics::new(&summary, fp));
    }
    let cmp = compare_costs(&metrics[0], &metrics[1], a.device_count)?;
    emit(a.out.as_deref(), &cmp)?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let run = load_config(a.config.as_deref(), None)?;
    let b = run.train.batch_size;
    // one distinct sense per instance keeps the batch free of masked pairs
    let data = generate(&SyntheticSpec {
        lemmas: b,
        senses_per_lemma: 2,
        instances: b,
        filler_words: 3,
        seed: a.seed,
    })?;
    let vocab = build_vocab(&data.corpus, &data.inventory, 1)?;
    let size = match run.context_encoder.vocab_size {
        0 => vocab.len(),
        n if n >= vocab.len() => n,
        n => bail!("configured vocab_size {n} is below the {} tokens of the check batch", vocab.len()),
    };
    let config = run.model_for_vocab(size);
    let params = ModelParams::init(&config, a.seed)?;
    let batch = Batch::new(data.corpus.iter().collect(), &data.inventory)?;
    let report = bcl_gradcheck(&config, &params, &vocab, &batch, a.h)?;
    emit(None, &report)?;
    if report.max_rel_error < GRADCHECK_TOLERANCE {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "gradient check failed: max relative error {:.3e} >= {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        );
        Ok(ExitCode::from(2))
    }
}

fn baseline(a: BaselineArgs) -> Result<ExitCode> {
    let (corpus, inventory) = load_data(&a.data)?;
    let preds = match a.kind {
        BaselineKind::S1 => FirstSensePredictor.predict_all(&corpus, &inventory)?,
        BaselineKind::Mfs => {
            let p = a.train_corpus.as_ref().expect("required by clap");
            let train = load_corpus(p).with_context(|| format!("loading corpus {}", p.display()))?;
            MfsPredictor::from_corpus(&train).predict_all(&corpus, &inventory)?
        }
    };
    save_predictions(&a.out, &prediction_lines(&preds))?;
    Ok(ExitCode::SUCCESS)
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let data = generate(&SyntheticSpec {
        lemmas: a.lemmas,
        senses_per_lemma: a.senses,
        instances: a.instances,
        seed: a.seed,
        ..SyntheticSpec::default()
    })?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_corpus(a.out.join("corpus.jsonl"), &data.corpus)?;
    save_inventory(a.out.join("inventory.jsonl"), &data.inventory)?;
    save_gold(a.out.join("gold.key"), &data.gold_key())?;
    let mut run = RunConfig::desk();
    run.train.seed = a.seed;
    let mut f = File::create(a.out.join("config.toml"))?;
    f.write_all(run.to_toml().as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

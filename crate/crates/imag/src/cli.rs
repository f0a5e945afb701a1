//! Command-line surface. Every command checks its flags before reading data.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use imag_core::dataset::{build_pseudo_target, SplitFractions};
use imag_core::evaluation::{acquisition_analysis, normalize, pair_metrics, EvalReport, PairMetrics};
use imag_core::model::{Ablation, ModelKind};
use imag_core::repetition::Variant;
use imag_core::training::{Stage, StepRecord, Trainer};
use imag_core::vocab::Vocabulary;
use log::info;
use rayon::prelude::*;

use crate::checkpoint::{load_model, Checkpoint};
use crate::config::read_config;
use crate::corpus::{read_corpus, write_jsonl};
use crate::error::{Error, Result};
use crate::records::{generate_all, read_generations, GenerationRequest};
use crate::report::{acquisition_table, curve_interval, eval_table, to_json, AcquisitionJson, EvalJson, TrainJson};
use crate::split::{derive_to_dir, stats_table, TRAIN_FILE};

#[derive(Debug, Parser)]
#[command(name = "imag", version, about = "Memory-augmented KB-to-text generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a corpus into train/dev/test and the one-triple pool.
    DeriveData(DeriveDataArgs),
    /// Run both training stages and write a checkpoint.
    Train(TrainArgs),
    /// Generate text from triples or from a bare entity name.
    Generate(GenerateArgs),
    /// Score generations against pseudo-targets.
    Evaluate(EvaluateArgs),
    /// Relate memory-retrieved relations to training co-occurrence.
    Analyze(AnalyzeArgs),
}

fn fraction(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn ablation(s: &str) -> std::result::Result<Ablation, String> {
    Ablation::parse(s).map_err(|e| e.to_string())
}

fn variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::parse(s).map_err(|e| e.to_string())
}

fn model_kind(s: &str) -> std::result::Result<ModelKind, String> {
    ModelKind::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct DeriveDataArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_parser = fraction)]
    pub dev_frac: Option<f64>,
    #[arg(long, value_parser = fraction)]
    pub test_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory written by derive-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_parser = variant)]
    pub variant: Option<Variant>,
    #[arg(long, value_parser = model_kind)]
    pub model_kind: Option<ModelKind>,
    /// Training report path; defaults to `<out>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, conflicts_with = "entity", required_unless_present = "entity")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub entity: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = ablation, default_value = "full")]
    pub ablate: Ablation,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_len: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub generations: PathBuf,
    #[arg(long)]
    pub one_triple_corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub generations: PathBuf,
    #[arg(long)]
    pub one_triple_corpus: PathBuf,
    #[arg(long)]
    pub train_split: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DeriveData(a) => derive_data(a),
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Analyze(a) => analyze(a),
    }
}

pub fn derive_data(a: DeriveDataArgs) -> Result<()> {
    let defaults = SplitFractions::default();
    let fractions = SplitFractions {
        dev: a.dev_frac.unwrap_or(defaults.dev),
        test: a.test_frac.unwrap_or(defaults.test),
    };
    if fractions.dev + fractions.test > 1.0 {
        return Err(Error::Validation("dev and test fractions exceed 1".into()));
    }
    let corpus = read_corpus(&a.corpus)?;
    let split = derive_to_dir(&corpus, a.seed, fractions, &a.out)?;
    print!("{}", stats_table(&split));
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut config = read_config(&a.config)?;
    config.seed = a.seed;
    if let Some(v) = a.variant {
        config.variant = v;
    }
    if let Some(k) = a.model_kind {
        config.model_kind = k;
    }
    config.validate()?;
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".report.json");
        PathBuf::from(p)
    });

    let data = read_corpus(&a.data.join(TRAIN_FILE))?;
    let vocab = Vocabulary::build(&data, 1);
    info!("{} training pairs, vocabulary of {}", data.len(), vocab.len());
    let started = Instant::now();
    let mut trainer = Trainer::new(config, vocab, data.len())?;
    let every = curve_interval(config.stage1_batches + config.stage2_batches);
    let mut log_step = |r: &StepRecord, _: &imag_core::model::Model| {
        if r.step % every == 0 {
            info!(
                "step {} stage {} loss {:.4} nll/token {:.4} grad {:.3}",
                r.step,
                r.stage.number(),
                r.loss,
                r.token_nll,
                r.grad_norm
            );
        }
    };
    trainer.run(&data, Stage::TeacherForced, config.stage1_batches, Some(&mut log_step))?;
    trainer.run(&data, Stage::FreeRunning, config.stage2_batches, Some(&mut log_step))?;
    let elapsed = started.elapsed().as_secs_f64();

    Checkpoint::from_model(config, &trainer.model).save(&a.out)?;
    let report = TrainJson::new(&trainer.report, elapsed, a.out.display().to_string());
    write_text(&report_path, &to_json(&report))?;
    info!("wrote {} after {elapsed:.1}s", a.out.display());
    Ok(())
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let (_, model) = load_model(&a.ckpt)?;
    let requests: Vec<GenerationRequest> = match (&a.input, &a.entity) {
        (_, Some(name)) => vec![GenerationRequest::entity(name)],
        (Some(path), None) => read_corpus(path)?.iter().map(GenerationRequest::from_sample).collect(),
        (None, None) => unreachable!("clap requires --input or --entity"),
    };
    let records = generate_all(&model, &requests, a.ablate, a.max_len as usize)?;
    info!("{} generations ({})", records.len(), a.ablate.name());
    write_jsonl(&a.out, &records)
}

fn eval_report(generations: &Path, one_triple: &Path) -> Result<EvalReport> {
    let records = read_generations(generations)?;
    let pool = read_corpus(one_triple)?;
    let pairs: Vec<PairMetrics> = records
        .par_iter()
        .map(|r| {
            let entities = r.input.entities()?;
            let refs: Vec<&str> = entities.iter().map(String::as_str).collect();
            let target = normalize(&build_pseudo_target(&refs, &pool));
            Ok(pair_metrics(&normalize(&r.output_tokens), &target))
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport::from_pairs(&pairs))
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let report = eval_report(&a.generations, &a.one_triple_corpus)?;
    if report.empty_targets > 0 {
        log::warn!("{} pairs have an empty pseudo-target", report.empty_targets);
    }
    print!("{}", eval_table(&report));
    write_text(&a.out, &to_json(&EvalJson::from(&report)))
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    let records = read_generations(&a.generations)?;
    let pool = read_corpus(&a.one_triple_corpus)?;
    let train = read_corpus(&a.train_split)?;
    let mut generations = Vec::new();
    let mut inputs = Vec::new();
    for r in &records {
        if let Some(set) = r.input.triple_set()? {
            generations.push(r.output_tokens.clone());
            inputs.push(set);
        }
    }
    let skipped = records.len() - inputs.len();
    let report = acquisition_analysis(&generations, &inputs, &pool, &train)?;
    print!("{}", acquisition_table(&report));
    write_text(&a.out, &to_json(&AcquisitionJson::new(&report, skipped)))
}

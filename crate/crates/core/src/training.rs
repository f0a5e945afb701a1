//! Two-stage optimization.
//!
//! Stage 1 minimizes teacher-forced NLL. Stage 2 decodes free-running for
//! exactly as many steps as the gold target, still scores each step against
//! the gold token at the same position, and adds the configured
//! anti-repetition term computed on the emitted tokens up to the first EOS.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, NodeId};
use crate::dataset::{drop_triples, flatten_triples, Sample};
use crate::error::{Error, Result};
use crate::model::{Ablation, Model, ModelConfig, ModelKind, PreparedInput};
use crate::repetition::{self, PenaltyConfig, Variant};
use crate::seq2seq::{self, DecodeOptions, Feed};
use crate::vocab::{Vocabulary, EOS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub e: usize,
    pub k: usize,
    pub l: usize,
    /// Preserving ratio; ignored for [`ModelKind::S2sf`].
    pub zeta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub variant: Variant,
    pub batch_size: usize,
    pub stage1_batches: usize,
    pub stage2_batches: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub model_kind: ModelKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            e: 500,
            k: 3,
            l: 600,
            zeta: 0.5,
            alpha: 0.5,
            gamma: 1.0,
            variant: Variant::Rsp,
            batch_size: 50,
            stage1_batches: 20_000,
            stage2_batches: 40_000,
            learning_rate: 0.1,
            grad_clip: 5.0,
            seed: 0,
            model_kind: ModelKind::Imag,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.e,
            window: self.k,
            slots: self.l,
            kind: self.model_kind,
        }
    }

    pub fn penalty(&self) -> PenaltyConfig {
        PenaltyConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            variant: self.variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.penalty().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        if self.model_kind.drops_triples() && !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return Err(Error::Config("zeta must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One supervised pair as the model consumes it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub input: PreparedInput,
    /// Gold ids with EOS appended.
    pub targets: Vec<u32>,
}

/// Input tokens for a training draw: a fresh subsample of the triples for
/// `imag`/`s2s`, every triple for `s2sf`.
pub fn training_input<R: rand::Rng + ?Sized>(
    sample: &Sample,
    zeta: f64,
    kind: ModelKind,
    rng: &mut R,
) -> Result<Vec<String>> {
    if kind.drops_triples() {
        Ok(flatten_triples(&drop_triples(&sample.triples, zeta, rng)?))
    } else {
        Ok(flatten_triples(&sample.triples))
    }
}

pub fn make_batch<R: rand::Rng + ?Sized>(
    model: &Model,
    samples: &[&Sample],
    zeta: f64,
    rng: &mut R,
) -> Result<Vec<TrainingPair>> {
    if samples.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    samples
        .iter()
        .map(|s| {
            let text = s.text.as_ref().ok_or_else(|| Error::MissingText(s.id.clone()))?;
            let tokens = training_input(s, zeta, model.config.kind, rng)?;
            let input = model.prepare(&tokens)?;
            let targets = model.targets(text, &input);
            Ok(TrainingPair { input, targets })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    TeacherForced,
    FreeRunning,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::TeacherForced => 1,
            Stage::FreeRunning => 2,
        }
    }
}

/// Loss terms of one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLoss {
    pub total: f64,
    pub nll: f64,
    pub tokens: usize,
}

/// Builds the scalar objective of one pair on `graph`.
pub fn pair_loss(
    model: &Model,
    graph: &mut Graph,
    pair: &TrainingPair,
    stage: Stage,
    penalty: &PenaltyConfig,
    rng: &mut dyn rand::RngCore,
) -> Result<(NodeId, PairLoss)> {
    let enc = model.encode(graph, &pair.input, Ablation::Full)?;
    let steps = pair.targets.len();
    let options = DecodeOptions {
        max_len: steps,
        stop_at_eos: false,
    };
    let feed = match (stage, penalty.variant) {
        (Stage::TeacherForced, _) => Feed::Teacher(&pair.targets),
        (Stage::FreeRunning, Variant::Rl) => Feed::Sample(rng),
        (Stage::FreeRunning, _) => Feed::Greedy,
    };
    let decoded = model.decode(graph, &enc, feed, options)?;
    let nll = seq2seq::nll_loss(graph, &decoded.steps, &enc.copy, &pair.targets)?;
    let nll_value = graph.value(nll).item();
    let mut loss = nll;
    if stage == Stage::FreeRunning && penalty.variant != Variant::None {
        let emitted = decoded.tokens.iter().position(|&t| t == EOS).unwrap_or(steps);
        let tokens = &decoded.tokens[..emitted];
        let probs: Vec<NodeId> = decoded.steps[..emitted].iter().map(|s| s.y).collect();
        let term = match penalty.variant {
            Variant::Rsp => Some(repetition::rsp_loss(graph, &probs, tokens)?),
            Variant::Rwp => Some(repetition::rwp_loss(graph, &probs, penalty.gamma)?),
            Variant::Cvg => Some(repetition::coverage_penalty(graph, &decoded.attention())?),
            Variant::Rl if emitted > 0 => {
                let mut step_nll = Vec::with_capacity(emitted);
                for (step, &t) in decoded.steps.iter().zip(tokens) {
                    step_nll.push(seq2seq::step_nll(graph, step, &enc.copy, t)?);
                }
                Some(repetition::rl_loss(graph, &step_nll, tokens)?.0)
            }
            _ => None,
        };
        if let Some(term) = term {
            loss = repetition::combined_loss(graph, loss, term, penalty.alpha)?;
        }
    }
    let total = graph.value(loss).item();
    Ok((
        loss,
        PairLoss {
            total,
            nll: nll_value,
            tokens: steps,
        },
    ))
}

/// Record of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based over the whole run.
    pub step: usize,
    pub stage: Stage,
    /// Batch-mean objective.
    pub loss: f64,
    /// NLL per gold token over the batch.
    pub token_nll: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    /// Number of stage-1 steps completed.
    pub stage_boundary: usize,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    /// Mean loss over consecutive windows of `width` steps.
    pub fn curve(&self, width: usize) -> Vec<f64> {
        self.steps
            .chunks(width.max(1))
            .map(|c| c.iter().map(|s| s.loss).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Resumable training state. Cloning after stage 1 lets several stage-2
/// variants share one stage-1 run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub report: TrainReport,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

/// Called after every optimizer step with the updated model.
pub type Observer<'a> = &'a mut dyn FnMut(&StepRecord, &Model);

impl Trainer {
    pub fn new(config: TrainConfig, vocab: Vocabulary, train_len: usize) -> Result<Self> {
        config.validate()?;
        if train_len == 0 {
            return Err(Error::Config("training split is empty".into()));
        }
        let model = Model::new(config.model_config(), vocab, config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer {
            config,
            model,
            report: TrainReport::default(),
            rng,
            order: (0..train_len).collect(),
            cursor: train_len,
        })
    }

    /// Switches the stage-2 objective.
    pub fn set_penalty(&mut self, penalty: PenaltyConfig) -> Result<()> {
        penalty.validate()?;
        self.config.alpha = penalty.alpha;
        self.config.gamma = penalty.gamma;
        self.config.variant = penalty.variant;
        Ok(())
    }

    fn next_indices(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.config.batch_size);
        while out.len() < self.config.batch_size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// One SGD step on a fresh batch.
    pub fn step(&mut self, data: &[Sample], stage: Stage) -> Result<StepRecord> {
        if data.len() != self.order.len() {
            return Err(Error::Alignment {
                left: data.len(),
                right: self.order.len(),
            });
        }
        let indices = self.next_indices();
        let samples: Vec<&Sample> = indices.iter().map(|&i| &data[i]).collect();
        let batch = make_batch(&self.model, &samples, self.config.zeta, &mut self.rng)?;
        let penalty = self.config.penalty();
        let step = self.report.steps.len() + 1;
        let scale = 1.0 / batch.len() as f64;
        let (mut loss, mut nll, mut tokens) = (0.0, 0.0, 0usize);
        self.model.params.zero_grad();
        for pair in &batch {
            let mut graph = Graph::new();
            let (node, parts) = pair_loss(&self.model, &mut graph, pair, stage, &penalty, &mut self.rng)?;
            if !parts.total.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    stage: stage.number(),
                    loss: parts.total,
                });
            }
            let grads = graph.backward(node)?;
            grads.accumulate_into(&mut self.model.params, scale);
            loss += parts.total * scale;
            nll += parts.nll;
            tokens += parts.tokens;
        }
        let grad_norm = self.model.params.clip_grad_norm(self.config.grad_clip);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                step,
                stage: stage.number(),
                loss: grad_norm,
            });
        }
        self.model.params.sgd_step(self.config.learning_rate);
        let record = StepRecord {
            step,
            stage,
            loss,
            token_nll: nll / tokens as f64,
            grad_norm,
        };
        self.report.steps.push(record);
        if stage == Stage::TeacherForced {
            self.report.stage_boundary = step;
        }
        Ok(record)
    }

    pub fn run(&mut self, data: &[Sample], stage: Stage, batches: usize, observer: Option<Observer<'_>>) -> Result<()> {
        let mut observer = observer;
        for _ in 0..batches {
            let record = self.step(data, stage)?;
            if let Some(obs) = observer.as_mut() {
                obs(&record, &self.model);
            }
        }
        Ok(())
    }

    pub fn run_stage1(&mut self, data: &[Sample], observer: Option<Observer<'_>>) -> Result<()> {
        self.run(data, Stage::TeacherForced, self.config.stage1_batches, observer)
    }

    pub fn run_stage2(&mut self, data: &[Sample], observer: Option<Observer<'_>>) -> Result<()> {
        self.run(data, Stage::FreeRunning, self.config.stage2_batches, observer)
    }
}

/// Runs both stages.
pub fn train(config: TrainConfig, vocab: Vocabulary, data: &[Sample]) -> Result<(Model, TrainReport)> {
    let mut trainer = Trainer::new(config, vocab, data.len())?;
    trainer.run_stage1(data, None)?;
    trainer.run_stage2(data, None)?;
    Ok((trainer.model, trainer.report))
}

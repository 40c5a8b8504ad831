//! Teacher-forced training of the encoder and all three decoders.

use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vstp_core::codec::{
    build_content_sequence, build_hier_sequence, build_region_sequence, build_stage1, CodecLimits, PromptSpec, StructuredSequence,
    TextInstance,
};
use vstp_core::exec::{self, Execution};
use vstp_core::prompting::{filter_by_prefix, filter_by_spatial, sample_prefix_window, sample_spatial_window, PrefixWindow};
use vstp_core::synth::{render_feature_grid, Sample};
use vstp_core::table::{build_table_content_targets, build_table_sequence, TableGrid};
use vstp_core::{Task, Vocabulary};

use crate::error::{ModelError, Result};
use crate::graph::{Graph, NodeId};
use crate::loss::TrainingTarget;
use crate::model::{DecoderKind, Model};
use crate::params::{Grads, Optimizer, OptimizerKind};
use crate::tensor::Mat;

/// Which window prompts the structured decoder sees during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Always the full window.
    Full,
    /// Sampled spatial windows, full prefix window.
    Spatial,
    /// Sampled spatial and prefix windows.
    #[default]
    SpatialPrefix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub seed: u64,
    pub prompt_mode: PromptMode,
    /// Stage-1 targets, each under its own sampled prompt, per sample and step.
    pub prompts_per_sample: usize,
    /// Region / content sequences drawn per sample and step.
    pub regions_per_sample: usize,
    pub contents_per_sample: usize,
    /// Callback period of [`train_with`]; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            lr: 1e-3,
            warmup: 100,
            optimizer: OptimizerKind::default(),
            clip_norm: 1.0,
            seed: 0,
            prompt_mode: PromptMode::default(),
            prompts_per_sample: 1,
            regions_per_sample: 2,
            contents_per_sample: 2,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(ModelError::Config("batch_size and lr must be positive".into()));
        }
        Ok(())
    }

    /// Linear warmup to `lr`, then linear decay to zero at `steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let rest = self.steps.saturating_sub(self.warmup).max(1);
        self.lr * (1.0 - (step - self.warmup) as f64 / rest as f64).max(0.0)
    }
}

/// A training document with its grid already patchified.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub id: String,
    pub patches: Mat,
    pub instances: Vec<TextInstance>,
    pub table: Option<TableGrid>,
}

pub fn prepare(model: &Model, samples: &[Sample]) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .map(|s| {
            if s.task != model.vocab.task() {
                return Err(ModelError::Config(format!("sample {} is {} but the model is {}", s.id, s.task, model.vocab.task())));
            }
            let grid = render_feature_grid(s, model.config.grid as u32);
            Ok(PreparedSample { id: s.id.clone(), patches: model.patchify(&grid)?, instances: s.instances.clone(), table: s.table.clone() })
        })
        .collect()
}

/// Teacher-forcing targets of one sample for one step, per decoder.
#[derive(Debug, Clone, Default)]
pub struct SampleTargets {
    pub structured: Vec<TrainingTarget>,
    pub region: Vec<TrainingTarget>,
    pub content: Vec<TrainingTarget>,
}

impl SampleTargets {
    pub fn get(&self, kind: DecoderKind) -> &[TrainingTarget] {
        match kind {
            DecoderKind::Structured => &self.structured,
            DecoderKind::Region => &self.region,
            DecoderKind::Content => &self.content,
        }
    }

    pub fn scored(&self) -> usize {
        DecoderKind::ALL.into_iter().flat_map(|k| self.get(k)).map(|t| t.scored_positions().count()).sum()
    }
}

fn limits(model: &Model) -> CodecLimits {
    CodecLimits { structured_max: model.max_len(DecoderKind::Structured), content_max: model.max_len(DecoderKind::Content) }
}

/// The stage-1 sequence of a sample under `prompt`, with the instances it
/// mentions. Hierarchical pages and tables ignore the prompt.
pub fn stage1_sequence(model: &Model, s: &PreparedSample, prompt: &PromptSpec) -> Result<StructuredSequence> {
    let vocab = &model.vocab;
    let lim = limits(model);
    Ok(match vocab.task() {
        Task::Spotting | Task::Kie => {
            let kept = filter_by_prefix(&filter_by_spatial(&s.instances, &prompt.window, vocab.quantizer()), &prompt.prefix, vocab);
            build_stage1(&kept, prompt, vocab, &lim)?
        }
        Task::HierText => build_hier_sequence(&s.instances, vocab, &lim)?,
        Task::Table => {
            let t = s.table.as_ref().ok_or_else(|| ModelError::Config(format!("sample {} has no table", s.id)))?;
            build_table_sequence(t, vocab)?
        }
    })
}

fn sample_prompt(rng: &mut impl Rng, mode: PromptMode, vocab: &Vocabulary) -> PromptSpec {
    let q = vocab.quantizer();
    match mode {
        PromptMode::Full => PromptSpec::full(q),
        PromptMode::Spatial => PromptSpec { window: sample_spatial_window(rng, q), prefix: PrefixWindow::full() },
        PromptMode::SpatialPrefix => PromptSpec { window: sample_spatial_window(rng, q), prefix: sample_prefix_window(rng, vocab) },
    }
}

fn content_sequences(model: &Model, s: &PreparedSample) -> Result<Vec<StructuredSequence>> {
    let lim = limits(model);
    match &s.table {
        Some(t) => Ok(build_table_content_targets(t, &model.vocab, &lim)?),
        None => s.instances.iter().map(|i| Ok(build_content_sequence(i, &model.vocab, &lim)?)).collect(),
    }
}

fn pick<T: Clone>(rng: &mut impl Rng, items: Vec<T>, n: usize) -> Vec<T> {
    if n >= items.len() {
        return items;
    }
    let mut idx = index::sample(rng, items.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

/// Draws one step's targets: a sampled prompt for the structured decoder
/// and random subsets of region and content sequences.
pub fn draw_targets(model: &Model, s: &PreparedSample, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<SampleTargets> {
    let vocab = &model.vocab;
    let structured = (0..cfg.prompts_per_sample.max(1))
        .map(|_| {
            let prompt = sample_prompt(rng, cfg.prompt_mode, vocab);
            Ok(TrainingTarget::from_sequence(&stage1_sequence(model, s, &prompt)?, vocab))
        })
        .collect::<Result<Vec<_>>>()?;
    let region = if s.table.is_some() {
        Vec::new()
    } else {
        let all: Vec<_> = s.instances.iter().map(|i| build_region_sequence(i, vocab)).collect();
        pick(rng, all, cfg.regions_per_sample).iter().map(|q| TrainingTarget::from_sequence(q, vocab)).collect()
    };
    let content =
        pick(rng, content_sequences(model, s)?, cfg.contents_per_sample).iter().map(|q| TrainingTarget::from_sequence(q, vocab)).collect();
    Ok(SampleTargets { structured, region, content })
}

/// Every target of a sample with the full prompt: the evaluation view.
pub fn full_targets(model: &Model, s: &PreparedSample) -> Result<SampleTargets> {
    let vocab = &model.vocab;
    let prompt = PromptSpec::full(vocab.quantizer());
    let structured = vec![TrainingTarget::from_sequence(&stage1_sequence(model, s, &prompt)?, vocab)];
    let region = if s.table.is_some() {
        Vec::new()
    } else {
        s.instances.iter().map(|i| TrainingTarget::from_sequence(&build_region_sequence(i, vocab), vocab)).collect()
    };
    let content = content_sequences(model, s)?.iter().map(|q| TrainingTarget::from_sequence(q, vocab)).collect();
    Ok(SampleTargets { structured, region, content })
}

/// Records encoder and decoder passes of one sample; returns the summed
/// weighted loss node and each decoder's logits node.
pub fn sample_graph(
    model: &Model,
    g: &mut Graph,
    s: &PreparedSample,
    targets: &SampleTargets,
) -> Result<(Option<NodeId>, Vec<(DecoderKind, NodeId)>)> {
    let memory = model.encode_graph(g, &s.patches);
    let mut total: Option<NodeId> = None;
    let mut logits_nodes = Vec::new();
    for kind in DecoderKind::ALL {
        let ts = targets.get(kind);
        if ts.is_empty() {
            continue;
        }
        let kv = model.cross_kv(g, kind, memory);
        let inputs: Vec<&[u32]> = ts.iter().map(|t| t.input.as_slice()).collect();
        let logits = model.decode_graph(g, kind, &kv, &inputs, false)?;
        logits_nodes.push((kind, logits));
        let tgt: Vec<usize> = ts.iter().flat_map(|t| t.target.iter().map(|&x| x as usize)).collect();
        let w: Vec<f64> = ts.iter().flat_map(|t| t.effective_weights()).collect();
        let loss = g.weighted_nll(logits, &tgt, &w)?;
        total = Some(match total {
            Some(t) => g.add(t, loss),
            None => loss,
        });
    }
    Ok((total, logits_nodes))
}

/// Summed loss and gradients over a batch, scaled by `scale`. Samples run
/// under `mode`; their gradients are added in batch order.
pub fn batch_gradients(model: &Model, batch: &[(&PreparedSample, SampleTargets)], scale: f64, mode: Execution) -> Result<(f64, Grads)> {
    let per_sample = exec::map(mode, batch, |(s, t)| -> Result<(f64, Grads)> {
        let mut grads = Grads::for_store(&model.params);
        let mut g = Graph::new(&model.params);
        let (loss, _) = sample_graph(model, &mut g, s, t)?;
        let Some(loss) = loss else { return Ok((0.0, grads)) };
        g.backward(loss, scale, &mut grads);
        Ok((g.value(loss).data[0], grads))
    });
    let mut total = Grads::for_store(&model.params);
    let mut loss = 0.0;
    for r in per_sample {
        let (l, gr) = r?;
        loss += l;
        total.accumulate(&gr);
    }
    Ok((loss * scale, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per scored token, one entry per step.
    pub losses: Vec<f64>,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub seconds: f64,
}

/// What a [`train_with`] callback sees.
pub struct Progress<'a> {
    pub step: usize,
    pub model: &'a Model,
    pub losses: &'a [f64],
    pub elapsed: f64,
}

pub fn train(model: &mut Model, corpus: &[PreparedSample], cfg: &TrainConfig, mode: Execution) -> Result<TrainReport> {
    train_with(model, corpus, cfg, mode, |_| false)
}

/// Trains for `cfg.steps` steps; every `cfg.eval_every` steps `on_eval` may
/// stop training by returning `true`.
pub fn train_with(
    model: &mut Model,
    corpus: &[PreparedSample],
    cfg: &TrainConfig,
    mode: Execution,
    mut on_eval: impl FnMut(&Progress) -> bool,
) -> Result<TrainReport> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(ModelError::Config("training corpus is empty".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, &model.params);
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut stopped_early = false;
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size.min(corpus.len()) {
            if order.is_empty() {
                order = (0..corpus.len()).collect();
                order.shuffle(&mut rng);
            }
            let s = &corpus[order.pop().expect("refilled")];
            batch.push((s, draw_targets(model, s, cfg, &mut rng)?));
        }
        let scored: usize = batch.iter().map(|(_, t)| t.scored()).sum();
        let (loss, mut grads) = batch_gradients(model, &batch, 1.0 / scored.max(1) as f64, mode)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(ModelError::Diverged { step, loss });
        }
        if cfg.clip_norm > 0.0 {
            let norm = grads.norm();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
        }
        opt.step(&mut model.params, &grads, cfg.lr_at(step));
        losses.push(loss);
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            let p = Progress { step: step + 1, model, losses: &losses, elapsed: start.elapsed().as_secs_f64() };
            if on_eval(&p) {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainReport { steps_run: losses.len(), losses, stopped_early, seconds: start.elapsed().as_secs_f64() })
}

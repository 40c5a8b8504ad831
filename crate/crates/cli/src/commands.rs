use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use vstp_core::codec::{
    build_content_sequence, build_hier_sequence, build_region_sequence, build_stage1, expected_stage1, kie_fields, parse_content,
    parse_region, parse_stage1, CodecLimits, PromptSpec,
};
use vstp_core::metrics::{
    field_matches, kie_tree, mean_teds, nted_accuracy, spotting_eval, teds as teds_score, teds_scored, EvalReport, LexiconMode, Lexicons,
    Prf, SpottingConfig, SpottingGt, SpottingImage,
};
use vstp_core::synth::{generate_corpus, read_jsonl, render_feature_grid, write_jsonl, Sample, SynthConfig};
use vstp_core::table::{assemble_html, build_table_sequence, grid_to_html, html_to_grid, structure_ids_to_grid, TableGrid};
use vstp_core::{build_vocab, Execution, Task, VocabSpec, Vocabulary};
use vstp_model::eval::teacher_forced_accuracy;
use vstp_model::train::{prepare, train_with, TrainConfig};
use vstp_model::{infer_document, load_checkpoint, save_checkpoint, Model, ModelConfig, ModelError};

use crate::{CodecCheckArgs, EvalArgs, EvalMode, InferArgs, SynthArgs, TedsArgs, TrainArgs, VocabArgs};

/// Environment variable that overrides `--seed`.
pub const SEED_ENV: &str = "VSTP_SEED";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<vstp_core::Error> for CliError {
    fn from(e: vstp_core::Error) -> Self {
        match e {
            vstp_core::Error::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            ModelError::Core(inner) => inner.into(),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

type CmdResult = Result<bool, CliError>;

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Failure(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

/// Vocabulary covering the entity classes and spans that occur in `samples`.
fn corpus_vocab<'a>(task: Task, samples: impl IntoIterator<Item = &'a Sample>) -> Result<Vocabulary, CliError> {
    let mut classes = BTreeSet::new();
    let mut max_span = VocabSpec::new(task).max_span;
    for s in samples {
        classes.extend(s.instances.iter().filter_map(|i| i.entity.clone()));
        if let Some(t) = &s.table {
            max_span = t.cells.iter().map(|c| c.rowspan.max(c.colspan)).fold(max_span, u32::max);
        }
    }
    Ok(build_vocab(&VocabSpec::new(task).with_entities(classes).with_max_span(max_span))?)
}

fn single_task(samples: &[Sample], expected: Option<Task>) -> Result<Task, CliError> {
    let task = expected.or_else(|| samples.first().map(|s| s.task)).ok_or_else(|| CliError::Usage("corpus is empty".into()))?;
    if let Some(s) = samples.iter().find(|s| s.task != task) {
        return Err(CliError::Usage(format!("sample {} is {} but the run is {task}", s.id, s.task)));
    }
    Ok(task)
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = resolve_seed(a.seed)? {
        cfg.seed = seed;
    }
    let corpus = generate_corpus(&cfg, a.task, a.n)?;
    write_jsonl(&a.out, &corpus)?;
    println!("wrote {} {} samples to {}", corpus.len(), a.task, a.out.display());
    Ok(true)
}

/// First mismatch between a sample and its rebuilt form, with the S-TEDS of
/// the reconstruction for tables.
fn check_sample(s: &Sample, vocab: &Vocabulary) -> Result<(Option<String>, Option<f64>), vstp_core::Error> {
    let q = vocab.quantizer();
    let limits = CodecLimits::default();
    if s.task == Task::Table {
        let table = s.table.as_ref().ok_or_else(|| vstp_core::Error::Schema(format!("table sample {} has no table", s.id)))?;
        let html = s.html.clone().unwrap_or_else(|| grid_to_html(table));
        let shape = |g: &TableGrid| {
            let (rows, cols, header, cells) = g.structure_key(q);
            let cells: Vec<_> = cells.into_iter().map(|(r, c, rs, cs, _)| (r, c, rs, cs)).collect();
            (rows, cols, header, cells)
        };
        if shape(&html_to_grid(&html)?) != shape(table) {
            return Ok((Some("html does not describe the annotated grid".into()), None));
        }
        let back = structure_ids_to_grid(&build_table_sequence(table, vocab)?.ids, vocab);
        if let Some(d) = back.diagnostics.first() {
            return Ok((Some(format!("structure tokens: {d:?}")), None));
        }
        let texts: Vec<String> = table.filled_cells().iter().map(|c| c.text.clone()).collect();
        let rebuilt = assemble_html(&back.value, &texts)?;
        let score = teds_score(&rebuilt, &html, true);
        if back.value.structure_key(q) != table.structure_key(q) || score != 1.0 {
            return Ok((Some(format!("grid changed\n  expected {html}\n       got {rebuilt}")), Some(score)));
        }
        return Ok((None, Some(score)));
    }

    let seq = match s.task {
        Task::HierText => build_hier_sequence(&s.instances, vocab, &limits)?,
        _ => build_stage1(&s.instances, &PromptSpec::full(q), vocab, &limits)?,
    };
    let parsed = parse_stage1(&seq, vocab);
    if let Some(d) = parsed.diagnostics.first() {
        return Ok((Some(format!("stage-1 diagnostic: {d:?}")), None));
    }
    let want = expected_stage1(&s.instances, vocab)?;
    if parsed.value != want {
        return Ok((Some(format!("stage 1\n  expected {want:?}\n       got {:?}", parsed.value)), None));
    }
    for (i, inst) in s.instances.iter().enumerate() {
        let region = parse_region(&build_region_sequence(inst, vocab).ids, vocab);
        if !region.is_clean() || region.value != inst.polygon.quantized(q) {
            return Ok((Some(format!("instance {i}: region does not round-trip")), None));
        }
        let content = parse_content(&build_content_sequence(inst, vocab, &limits)?.ids, vocab);
        if !content.is_clean() || content.value != inst.text {
            return Ok((Some(format!("instance {i}: content\n  expected {:?}\n       got {:?}", inst.text, content.value)), None));
        }
    }
    Ok((None, None))
}

pub fn codec_check(a: CodecCheckArgs) -> CmdResult {
    let samples = read_jsonl(&a.input)?;
    let mut vocabs: HashMap<Task, Vocabulary> = HashMap::new();
    for task in Task::ALL {
        if samples.iter().any(|s| s.task == task) {
            vocabs.insert(task, corpus_vocab(task, samples.iter().filter(|s| s.task == task))?);
        }
    }
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut first_failure = None;
    let mut steds = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let entry = counts.entry(s.task.as_str()).or_default();
        entry.1 += 1;
        let failure = match a.task {
            Some(t) if t != s.task => Some(format!("sample is {} but --task is {t}", s.task)),
            _ => match check_sample(s, &vocabs[&s.task]) {
                Ok((f, score)) => {
                    steds.extend(score);
                    f
                }
                Err(e) => Some(e.to_string()),
            },
        };
        match failure {
            None => entry.0 += 1,
            Some(f) => {
                first_failure.get_or_insert_with(|| format!("line {} ({}): {f}", i + 1, s.id));
            }
        }
    }
    for (task, (ok, n)) in &counts {
        println!("{task}: {ok}/{n} round-trip");
    }
    if !steds.is_empty() {
        let min = steds.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = steds.iter().sum::<f64>() / steds.len() as f64;
        println!("table S-TEDS(gt, reconstructed): min {min:.4} mean {mean:.4} over {} rows", steds.len());
    }
    match first_failure {
        Some(f) => {
            println!("first failure: {f}");
            Ok(false)
        }
        None => Ok(true),
    }
}

pub fn vocab(a: VocabArgs) -> CmdResult {
    let v = build_vocab(&VocabSpec::new(a.task).with_entities(a.entities))?;
    v.save(&a.out)?;
    println!("wrote {} tokens to {}", v.len(), a.out.display());
    Ok(true)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    model: ModelConfig,
    train: TrainConfig,
}

pub fn train(a: TrainArgs) -> CmdResult {
    let mut cfg: TrainFile = match &a.config {
        Some(p) => read_config(p)?,
        None => TrainFile::default(),
    };
    if let Some(seed) = resolve_seed(a.seed)? {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    let samples = read_jsonl(&a.input)?;
    let task = single_task(&samples, a.task)?;
    let vocab = corpus_vocab(task, &samples)?;
    let mut model = Model::new(cfg.model, vocab)?;
    let corpus = prepare(&model, &samples)?;
    let mode = Execution::default();
    let report = train_with(&mut model, &corpus, &cfg.train, mode, |p| {
        println!("step {} loss {:.4} ({:.1}s)", p.step, p.losses.last().copied().unwrap_or(f64::NAN), p.elapsed);
        false
    })?;
    let acc = teacher_forced_accuracy(&model, &corpus, mode)?;
    save_checkpoint(&model, &a.out)?;
    let csv_path = a.loss_csv.unwrap_or_else(|| a.out.with_extension("loss.csv"));
    let mut csv = String::from("step,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    write(&csv_path, &csv)?;
    println!(
        "trained {} steps in {:.1}s; token accuracy {:.4}; checkpoint {}; loss curve {}",
        report.steps_run,
        report.seconds,
        acc.overall.rate(),
        a.out.display(),
        csv_path.display()
    );
    Ok(true)
}

pub fn infer(a: InferArgs) -> CmdResult {
    let model = load_checkpoint(&a.model)?;
    let samples = read_jsonl(&a.input)?;
    single_task(&samples, Some(model.vocab.task()))?;
    if let Some(dir) = &a.html_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::Failure(format!("cannot create {}: {e}", dir.display())))?;
    }
    let mut preds = Vec::with_capacity(samples.len());
    let mut truncated = 0;
    for s in &samples {
        let grid = render_feature_grid(s, model.config.grid as u32);
        let doc = infer_document(&model, &grid, None, Execution::default())?;
        truncated += doc.stage1_truncated as usize + doc.instances.iter().filter(|i| i.truncated).count();
        let pred = doc.to_sample(&s.id, s.width, s.height, &model)?;
        if let (Some(dir), Some(html)) = (&a.html_dir, &pred.html) {
            write(&dir.join(format!("{}.html", s.id)), html)?;
        }
        preds.push(pred);
    }
    write_jsonl(&a.out, &preds)?;
    println!("wrote {} predictions to {} ({truncated} truncated sequences)", preds.len(), a.out.display());
    Ok(true)
}

/// Predictions reordered to follow the ground truth ids.
fn align<'a>(preds: &'a [Sample], gts: &[Sample]) -> Result<Vec<&'a Sample>, CliError> {
    let mut by_id: HashMap<&str, &Sample> = HashMap::new();
    let mut duplicates = Vec::new();
    for p in preds {
        if by_id.insert(&p.id, p).is_some() {
            duplicates.push(p.id.clone());
        }
    }
    let gt_ids: BTreeSet<&str> = gts.iter().map(|g| g.id.as_str()).collect();
    let missing: Vec<&str> = gts.iter().map(|g| g.id.as_str()).filter(|id| !by_id.contains_key(id)).collect();
    let unexpected: Vec<&str> = preds.iter().map(|p| p.id.as_str()).filter(|id| !gt_ids.contains(id)).collect();
    if !missing.is_empty() || !unexpected.is_empty() || !duplicates.is_empty() {
        return Err(CliError::Failure(format!(
            "prediction ids do not match ground truth; missing: [{}]; unexpected: [{}]; duplicated: [{}]",
            missing.join(", "),
            unexpected.join(", "),
            duplicates.join(", ")
        )));
    }
    Ok(gts.iter().map(|g| by_id[g.id.as_str()]).collect())
}

fn sample_html(s: &Sample) -> String {
    s.html.clone().or_else(|| s.table.as_ref().map(grid_to_html)).unwrap_or_default()
}

/// Ground-truth words marked `###` are ignored.
const IGNORE_TEXT: &str = "###";

fn uniform(task: Task, mode: &str, score: f64, n: usize, key: &str) -> EvalReport {
    EvalReport {
        task,
        mode: mode.to_string(),
        precision: score,
        recall: score,
        fscore: score,
        n,
        breakdown: BTreeMap::from([(key.to_string(), score)]),
    }
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let preds = read_jsonl(&a.input)?;
    let gts = read_jsonl(&a.gt)?;
    single_task(&gts, Some(a.task))?;
    single_task(&preds, Some(a.task))?;
    let aligned = align(&preds, &gts)?;
    let exec = Execution::default();
    let mode = match (a.task, a.mode) {
        (Task::Table, _) if a.structure_only => EvalMode::Steds,
        (_, Some(m)) => m,
        (Task::Spotting | Task::HierText, None) => EvalMode::None,
        (Task::Kie, None) => EvalMode::F1,
        (Task::Table, None) => EvalMode::Teds,
    };
    let (report, line) = match (a.task, mode) {
        (Task::Spotting | Task::HierText, EvalMode::None | EvalMode::Full | EvalMode::Strong | EvalMode::Weak | EvalMode::Generic) => {
            let lex_mode: LexiconMode = format!("{mode:?}").to_lowercase().parse()?;
            let images: Vec<SpottingImage> = aligned
                .iter()
                .zip(&gts)
                .map(|(p, g)| SpottingImage {
                    preds: p.instances.iter().map(|i| (i.polygon.clone(), i.text.clone())).collect(),
                    gts: g
                        .instances
                        .iter()
                        .map(|i| SpottingGt { polygon: i.polygon.clone(), text: i.text.clone(), ignore: i.text == IGNORE_TEXT })
                        .collect(),
                })
                .collect();
            let lexicons = match &a.lexicon {
                Some(p) => read_config::<Lexicons>(p)?,
                None => Lexicons::from_ground_truth(
                    &gts.iter()
                        .map(|g| g.instances.iter().map(|i| i.text.clone()).filter(|t| t != IGNORE_TEXT).collect())
                        .collect::<Vec<_>>(),
                ),
            };
            let cfg = SpottingConfig { iou_threshold: a.iou, max_edit_distance: a.max_edit_distance };
            let mut r = spotting_eval(&images, lex_mode, &lexicons, &cfg, exec)?;
            r.task = a.task;
            let line = format!("F {:.4} P {:.4} R {:.4} ({} lexicon, {} samples)", r.fscore, r.precision, r.recall, r.mode, r.n);
            (r, line)
        }
        (Task::Kie, EvalMode::F1 | EvalMode::Nted) => {
            let vocab = corpus_vocab(Task::Kie, aligned.iter().copied().chain(&gts))?;
            let mut pairs = Vec::with_capacity(gts.len());
            for (p, g) in aligned.iter().zip(&gts) {
                pairs.push((kie_fields(&p.instances, &vocab)?, kie_fields(&g.instances, &vocab)?));
            }
            if mode == EvalMode::F1 {
                let (mut hits, mut n_pred, mut n_gt) = (0, 0, 0);
                for (p, g) in &pairs {
                    hits += field_matches(p, g);
                    n_pred += p.len();
                    n_gt += g.len();
                }
                let prf = Prf::from_counts(hits, n_pred, n_gt);
                let r = EvalReport {
                    task: Task::Kie,
                    mode: "f1".into(),
                    precision: prf.precision,
                    recall: prf.recall,
                    fscore: prf.fscore,
                    n: pairs.len(),
                    breakdown: BTreeMap::new(),
                };
                let line = format!("F {:.4} P {:.4} R {:.4} (field-level, {} samples)", r.fscore, r.precision, r.recall, r.n);
                (r, line)
            } else {
                let mean = pairs.iter().map(|(p, g)| nted_accuracy(&kie_tree(p), &kie_tree(g))).sum::<f64>() / pairs.len().max(1) as f64;
                let r = uniform(Task::Kie, "nted", mean, pairs.len(), "nted_accuracy");
                (r, format!("nTED accuracy {mean:.4} ({} samples)", pairs.len()))
            }
        }
        (Task::Table, EvalMode::Teds | EvalMode::Steds) => {
            let structure_only = mode == EvalMode::Steds;
            let pairs: Vec<(String, String)> = aligned.iter().zip(&gts).map(|(p, g)| (sample_html(p), sample_html(g))).collect();
            for (i, (p, g)) in pairs.iter().enumerate() {
                if let Some(d) = teds_scored(p, g, structure_only).diagnostic {
                    eprintln!("warning: {}: {d}", gts[i].id);
                }
            }
            let score = mean_teds(&pairs, structure_only, exec);
            let (name, key, label) = if structure_only { ("steds", "s_teds", "S-TEDS") } else { ("teds", "teds", "TEDS") };
            (uniform(Task::Table, name, score, pairs.len(), key), format!("{label} {score:.4} ({} samples)", pairs.len()))
        }
        (task, mode) => {
            return Err(CliError::Usage(format!("mode {mode:?} does not apply to {task}").to_lowercase()));
        }
    };
    println!("{line}");
    if let Some(out) = &a.out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Failure(e.to_string()))?;
        write(out, &json)?;
    }
    Ok(true)
}

pub fn teds(a: TedsArgs) -> CmdResult {
    let pred = read_to_string(&a.pred)?;
    let gt = read_to_string(&a.gt)?;
    let s = teds_scored(&pred, &gt, a.structure_only);
    if let Some(d) = s.diagnostic {
        eprintln!("warning: {d}");
    }
    println!("{:.4}", s.score);
    Ok(true)
}

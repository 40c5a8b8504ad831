//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N ... PASS|FAIL` line with its measurements, then asserts.
//! Run with `--nocapture` to see the lines; tests hold a shared lock so the
//! runtime limits are measured without contention.

#[path = "../../core/tests/support/grids.rs"]
mod grids;
#[path = "../../core/tests/support/ted_oracle.rs"]
mod ted_oracle;

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vstp_core::codec::{build_stage1, kie_fields, parse_stage1, CodecLimits, PromptSpec, Stage1};
use vstp_core::exec::Execution;
use vstp_core::geometry::{Point, QuantizedPoint};
use vstp_core::metrics::{
    field_f1, kie_tree, nted_accuracy, spotting_eval, teds, tree_edit_distance, tree_similarity, LexiconMode, Lexicons, SpottingConfig,
    SpottingGt, SpottingImage, TedsTree,
};
use vstp_core::prompting::{enumerate_fixed_windows, sample_spatial_draw, SpatialDraw, FIXED_LAYOUTS};
use vstp_core::synth::{generate_corpus, generate_sample, Sample, SynthConfig};
use vstp_core::table::{assemble_html, build_table_sequence, grid_to_html, html_to_grid, structure_ids_to_grid};
use vstp_core::{build_vocab, QuantizerConfig, Task, TokenId, VocabSpec};
use vstp_model::eval::{instance_recovery, stage1_exact_match, teacher_forced_accuracy, window_conditioning};
use vstp_model::loss::{weighted_nll_loss, TrainingTarget};
use vstp_model::tensor::Mat;
use vstp_model::train::{batch_gradients, full_targets, prepare, train_with, PromptMode, TrainConfig};
use vstp_model::{Model, ModelConfig};

static SERIAL: Mutex<()> = Mutex::new(());

struct Criterion {
    n: u32,
    name: &'static str,
    limit: Duration,
    start: Instant,
    checks: Vec<(bool, String)>,
}

impl Criterion {
    fn start(n: u32, name: &'static str, limit_secs: u64) -> Self {
        Self { n, name, limit: Duration::from_secs(limit_secs), start: Instant::now(), checks: Vec::new() }
    }

    fn check(&mut self, ok: bool, detail: impl Into<String>) {
        self.checks.push((ok, detail.into()));
    }

    fn finish(mut self) {
        let elapsed = self.start.elapsed();
        self.check(elapsed <= self.limit, format!("runtime {:.2}s <= {}s", elapsed.as_secs_f64(), self.limit.as_secs()));
        let ok = self.checks.iter().all(|(ok, _)| *ok);
        let detail: Vec<String> = self.checks.iter().map(|(ok, d)| if *ok { d.clone() } else { format!("!! {d}") }).collect();
        println!("criterion {} {}: {} [{}]", self.n, self.name, if ok { "PASS" } else { "FAIL" }, detail.join("; "));
        assert!(ok, "criterion {} failed", self.n);
    }
}

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

#[test]
fn criterion_1_quantizer() {
    let _g = lock();
    let mut c = Criterion::start(1, "quantizer round trip and monotonicity", 1);
    let q = QuantizerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut xs: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
    let bound = 0.5 / 1000.0 + 1e-12;
    let mut worst: f64 = 0.0;
    for &x in &xs {
        let p = Point::new(x, 1.0 - x).unwrap();
        let back = q.dequantize_point(q.quantize_point(p)).unwrap();
        worst = worst.max((back.x - p.x).abs()).max((back.y - p.y).abs());
    }
    c.check(worst <= bound, format!("max |dq(q(x)) - x| = {worst:.3e} <= {bound:.3e}"));
    xs.extend((0..=100_000).map(|i| i as f64 / 100_000.0));
    xs.sort_by(f64::total_cmp);
    let bins: Vec<u32> = xs.iter().map(|&x| q.quantize_point(Point::new(x, x).unwrap()).xt).collect();
    let monotone = bins.windows(2).all(|w| w[0] <= w[1]);
    c.check(monotone, format!("monotone over {} sorted coordinates", xs.len()));
    c.finish();
}

#[test]
fn criterion_2_spatial_sampler() {
    let _g = lock();
    let mut c = Criterion::start(2, "spatial window sampler", 5);
    let q = QuantizerConfig::default();
    let fixed = enumerate_fixed_windows(q);
    let expected: usize = FIXED_LAYOUTS.iter().map(|&(x, y)| (x * y) as usize).sum();
    let distinct: std::collections::BTreeSet<_> = fixed.iter().map(|w| w.tokens()).collect();
    c.check(fixed.len() == 35 && expected == 35 && distinct.len() == 35, format!("{} fixed windows", distinct.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws = 100_000;
    let (mut default, mut fixed_ok, mut fixed_n, mut small) = (0usize, 0usize, 0usize, 0usize);
    for _ in 0..draws {
        let d = sample_spatial_draw(&mut rng, q);
        match d {
            SpatialDraw::Default => default += 1,
            SpatialDraw::Fixed { .. } => {
                fixed_n += 1;
                fixed_ok += fixed.contains(&d.window(q)) as usize;
            }
            SpatialDraw::Random { rect_w, rect_h, .. } => small += ((rect_w as u64) * (rect_h as u64) < 333 * 333) as usize,
        }
    }
    let frac = default as f64 / draws as f64;
    c.check((0.39..=0.41).contains(&frac), format!("default fraction {frac:.4}"));
    c.check(fixed_ok == fixed_n, format!("{fixed_ok}/{fixed_n} fixed draws in the enumerated set"));
    c.check(small == 0, format!("{small} random draws below 333^2"));
    c.finish();
}

/// Raster key of a quantized center.
fn raster(p: QuantizedPoint) -> (u32, u32) {
    (p.yt, p.xt)
}

fn sorted(mut v: Vec<QuantizedPoint>) -> Vec<QuantizedPoint> {
    v.sort_by_key(|&p| raster(p));
    v
}

#[test]
fn criterion_3_codec_roundtrips() {
    let _g = lock();
    let mut c = Criterion::start(3, "stage-1 codec round trips", 10);
    let cfg = SynthConfig::default();
    for task in [Task::Spotting, Task::Kie, Task::HierText] {
        let vocab = build_vocab(&VocabSpec::new(task).with_entities(cfg.entity_classes.clone())).unwrap();
        let q = vocab.quantizer();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut ok, mut diagnostics) = (0, 0);
        for i in 0..1000 {
            let s = generate_sample(&mut rng, &cfg, task, format!("{i}")).unwrap();
            let seq = build_stage1(&s.instances, &PromptSpec::full(q), &vocab, &CodecLimits::default()).unwrap();
            let parsed = parse_stage1(&seq, &vocab);
            diagnostics += parsed.diagnostics.len();
            let centers: Vec<QuantizedPoint> = s.instances.iter().map(|i| i.quantized_center(q)).collect();
            let same = match (&parsed.value, task) {
                (Stage1::Points(p), Task::Spotting) => *p == sorted(centers.clone()),
                (Stage1::Entities(groups), Task::Kie) => {
                    let mut want: BTreeMap<(String, u32), Vec<QuantizedPoint>> = BTreeMap::new();
                    for (inst, &p) in s.instances.iter().zip(&centers) {
                        want.entry((inst.entity.clone().unwrap(), inst.line_id.unwrap())).or_default().push(p);
                    }
                    let mut want: Vec<(String, Vec<QuantizedPoint>)> =
                        want.into_iter().map(|((class, _), pts)| (class, sorted(pts))).collect();
                    let mut got: Vec<(String, Vec<QuantizedPoint>)> =
                        groups.iter().map(|g| (g.class.clone(), sorted(g.points.clone()))).collect();
                    want.sort();
                    got.sort();
                    want == got
                }
                (Stage1::Hierarchy(paras), Task::HierText) => {
                    let mut want: BTreeMap<u32, BTreeMap<u32, Vec<QuantizedPoint>>> = BTreeMap::new();
                    for (inst, &p) in s.instances.iter().zip(&centers) {
                        want.entry(inst.para_id.unwrap()).or_default().entry(inst.line_id.unwrap()).or_default().push(p);
                    }
                    let canon = |paras: Vec<Vec<Vec<QuantizedPoint>>>| {
                        let mut out: Vec<Vec<Vec<QuantizedPoint>>> = paras
                            .into_iter()
                            .map(|lines| {
                                let mut lines: Vec<_> = lines.into_iter().map(sorted).collect();
                                lines.sort();
                                lines
                            })
                            .collect();
                        out.sort();
                        out
                    };
                    let want = want.into_values().map(|lines| lines.into_values().collect()).collect();
                    canon(want) == canon(paras.clone())
                }
                _ => false,
            };
            ok += same as usize;
        }
        c.check(ok == 1000, format!("{task}: {ok}/1000 identical"));
        c.check(diagnostics == 0, format!("{task}: {diagnostics} diagnostics"));
    }
    c.finish();
}

#[test]
fn criterion_4_table_fixpoint() {
    let _g = lock();
    let mut c = Criterion::start(4, "table html/token fixpoint", 20);
    let vocab = build_vocab(&VocabSpec::new(Task::Table)).unwrap();
    let q = vocab.quantizer();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut same_html, mut same_grid, mut perfect) = (0, 0, 0);
    let shape = |g: &vstp_core::table::TableGrid| {
        let (r, cl, h, cells) = g.structure_key(q);
        (r, cl, h, cells.into_iter().map(|(a, b, rs, cs, _)| (a, b, rs, cs)).collect::<Vec<_>>())
    };
    for _ in 0..500 {
        let g = grids::random_grid(&mut rng, 6, 6, 3);
        let html = grid_to_html(&g);
        let from_html = html_to_grid(&html).unwrap();
        let parsed = structure_ids_to_grid(&build_table_sequence(&g, &vocab).unwrap().ids, &vocab);
        let texts: Vec<&str> = from_html.filled_cells().iter().map(|c| c.text.as_str()).collect();
        let html2 = assemble_html(&parsed.value, &texts).unwrap();
        same_html += (html2 == html) as usize;
        same_grid += (parsed.is_clean() && parsed.value.structure_key(q) == g.structure_key(q) && shape(&from_html) == shape(&g)) as usize;
        perfect += (teds(&html, &html2, true) == 1.0) as usize;
    }
    c.check(same_grid == 500, format!("{same_grid}/500 grids equal"));
    c.check(same_html == 500, format!("{same_html}/500 html identical"));
    c.check(perfect == 500, format!("{perfect}/500 S-TEDS exactly 1"));
    c.finish();
}

fn random_tree(rng: &mut impl Rng) -> TedsTree {
    let n = rng.gen_range(1..=5);
    let parents: Vec<usize> = (1..n).map(|i| rng.gen_range(0..i)).collect();
    let tags = ["td", "tr"];
    let contents = [None, Some(""), Some("a"), Some("ab"), Some("ba"), Some("abc")];
    let labels: Vec<(String, u32, Option<String>)> = (0..n)
        .map(|_| {
            (tags[rng.gen_range(0..2)].to_string(), rng.gen_range(1..=2), contents[rng.gen_range(0..contents.len())].map(str::to_string))
        })
        .collect();
    ted_oracle::tree_from_parents(&parents, &labels)
}

#[test]
fn criterion_5_teds_oracle() {
    let _g = lock();
    let mut c = Criterion::start(5, "tree edit distance against exhaustive oracle", 30);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut self_ok = 0;
    for _ in 0..200 {
        let (a, b) = (random_tree(&mut rng), random_tree(&mut rng));
        worst = worst.max((tree_edit_distance(&a, &b) - ted_oracle::brute_force_ted(&a, &b)).abs());
        self_ok += (tree_similarity(&a, &a) == 1.0) as usize;
    }
    c.check(worst <= 1e-9, format!("max |fast - oracle| = {worst:.1e} over 200 pairs"));
    c.check(self_ok == 200, format!("{self_ok}/200 trees with similarity 1 to themselves"));
    let two = "<table><tbody><tr><td>a</td><td>b</td></tr></tbody></table>";
    let one = "<table><tbody><tr><td>a</td></tr></tbody></table>";
    c.check(teds(two, two, false) == 1.0, format!("teds(t, t) = {}", teds(two, two, false)));
    c.check(teds(one, two, false) == 0.8, format!("2-cell vs 1-cell = {}", teds(one, two, false)));
    c.finish();
}

fn tiny_model(task: Task) -> Model {
    let config = ModelConfig { d: 8, layers: 1, heads: 2, encoder_layers: 1, seed: 6, ..ModelConfig::default() };
    Model::new(config, build_vocab(&VocabSpec::new(task)).unwrap()).unwrap()
}

#[test]
fn criterion_6_weighted_loss_contract() {
    let _g = lock();
    let mut c = Criterion::start(6, "weighted loss and gradients", 60);
    let vocab = build_vocab(&VocabSpec::new(Task::Table)).unwrap();
    let n = vocab.len();
    let td = vocab.named("<td></td>").unwrap();
    let tr = vocab.named("<tr>").unwrap();
    let ids: Vec<TokenId> = vec![vocab.bos(), 5, tr, td, 40, vocab.eos(), vocab.pad(), vocab.pad()];
    let t = TrainingTarget::from_ids(&ids, 2, &vocab);

    let mut onehot = Mat::zeros(ids.len(), n);
    for (r, &id) in ids.iter().enumerate() {
        onehot.row_mut(r)[id as usize] = 1e4;
    }
    let zero = weighted_nll_loss(&onehot, &t).unwrap();
    c.check(zero == 0.0, format!("one-hot loss {zero}"));

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let random = Mat::from_vec(ids.len(), n, (0..ids.len() * n).map(|_| rng.gen_range(-3.0..3.0)).collect());
    let base = weighted_nll_loss(&random, &t).unwrap();
    let mut shaken = random.clone();
    for r in [0, 1, 6, 7] {
        shaken.row_mut(r).iter_mut().for_each(|x| *x = rng.gen_range(-50.0..50.0));
    }
    let moved = weighted_nll_loss(&shaken, &t).unwrap();
    c.check(moved == base, format!("prompt/PAD perturbation changes loss by {:.1e}", (moved - base).abs()));

    let single = TrainingTarget::from_ids(&[td], 0, &vocab);
    let mut l = Mat::zeros(1, n);
    l.row_mut(0)[td as usize] = 1.5;
    let p = 1.5f64.exp() / (1.5f64.exp() + (n - 1) as f64);
    let err = (weighted_nll_loss(&l, &single).unwrap() - (-4.0 * p.ln())).abs();
    c.check(err <= 1e-9, format!("structural token loss error {err:.1e}"));

    let model = tiny_model(Task::Spotting);
    let synth = SynthConfig { instances: (2, 3), ..SynthConfig::default().with_seed(6) };
    let corpus = prepare(&model, &generate_corpus(&synth, Task::Spotting, 1).unwrap()).unwrap();
    let targets = full_targets(&model, &corpus[0]).unwrap();
    let scale = 1.0 / targets.scored() as f64;
    let batch = [(&corpus[0], targets)];
    let (_, grads) = batch_gradients(&model, &batch, scale, Execution::Sequential).unwrap();
    let h = 1e-5;
    let mut probe = model.clone();
    let (mut worst, mut checked) = (0.0f64, 0);
    for id in model.params.ids() {
        let len = model.params.get(id).data.len();
        for _ in 0..3 {
            let i = rng.gen_range(0..len);
            let orig = model.params.get(id).data[i];
            probe.params.get_mut(id).data[i] = orig + h;
            let plus = batch_gradients(&probe, &batch, scale, Execution::Sequential).unwrap().0;
            probe.params.get_mut(id).data[i] = orig - h;
            let minus = batch_gradients(&probe, &batch, scale, Execution::Sequential).unwrap().0;
            probe.params.get_mut(id).data[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data[i]);
            let denom = numeric.abs().max(analytic.abs());
            if denom > 0.0 {
                worst = worst.max((numeric - analytic).abs() / denom.max(1e-6));
            }
            checked += 1;
        }
    }
    c.check(worst <= 1e-4, format!("gradient relative error {worst:.1e} over {checked} scalars"));
    c.finish();
}

fn desk_model(task: Task, seed: u64) -> Model {
    let config = ModelConfig { d: 64, layers: 2, heads: 4, encoder_layers: 1, seed, ..ModelConfig::default() };
    Model::new(config, build_vocab(&VocabSpec::new(task)).unwrap()).unwrap()
}

#[test]
fn criterion_7_two_stage_reproduction() {
    let _g = lock();
    let mut c = Criterion::start(7, "two-stage overfit on 64 spotting samples", 600);
    let corpus = generate_corpus(&SynthConfig::default().with_seed(7), Task::Spotting, 64).unwrap();
    let mut model = desk_model(Task::Spotting, 7);
    let data = prepare(&model, &corpus).unwrap();
    let mode = Execution::default();
    let cfg = TrainConfig {
        steps: 5000,
        batch_size: 8,
        lr: 3e-3,
        warmup: 50,
        prompt_mode: PromptMode::Full,
        eval_every: 250,
        seed: 7,
        ..TrainConfig::default()
    };
    let report = train_with(&mut model, &data, &cfg, mode, |p| {
        let acc = teacher_forced_accuracy(p.model, &data, mode).unwrap().overall.rate();
        acc >= 0.95
            && stage1_exact_match(p.model, &data, mode).unwrap() >= 0.9
            && instance_recovery(p.model, &data, mode).unwrap().rate() >= 0.9
    })
    .unwrap();
    let acc = teacher_forced_accuracy(&model, &data, mode).unwrap();
    let em = stage1_exact_match(&model, &data, mode).unwrap();
    let rec = instance_recovery(&model, &data, mode).unwrap();
    c.check(report.steps_run <= 5000, format!("{} steps", report.steps_run));
    c.check(acc.overall.rate() >= 0.95, format!("token accuracy {:.4}", acc.overall.rate()));
    c.check(em >= 0.9, format!("stage-1 exact match {em:.4}"));
    c.check(rec.rate() >= 0.9, format!("recovered {}/{} instances ({:.4})", rec.recovered, rec.instances, rec.rate()));
    c.finish();
}

#[test]
fn criterion_8_prompt_conditioning() {
    let _g = lock();
    let mut c = Criterion::start(8, "spatial prompt conditioning on quadrants", 600);
    let corpus = generate_corpus(&SynthConfig::default().with_seed(8), Task::Spotting, 64).unwrap();
    let mut model = desk_model(Task::Spotting, 8);
    let data = prepare(&model, &corpus).unwrap();
    let q = model.vocab.quantizer();
    let offset: usize = FIXED_LAYOUTS.iter().take_while(|&&l| l != (2, 2)).map(|&(x, y)| (x * y) as usize).sum();
    let quadrants: Vec<_> = enumerate_fixed_windows(q)[offset..offset + 4].to_vec();
    let mode = Execution::default();
    let cfg = TrainConfig {
        steps: 2500,
        batch_size: 8,
        lr: 3e-3,
        warmup: 50,
        prompt_mode: PromptMode::Spatial,
        prompts_per_sample: 4,
        regions_per_sample: 0,
        contents_per_sample: 0,
        eval_every: 250,
        seed: 8,
        ..TrainConfig::default()
    };
    let report = train_with(&mut model, &data, &cfg, mode, |p| {
        let w = window_conditioning(p.model, &data, &quadrants, mode).unwrap();
        w.inside_rate() >= 0.9 && w.recovery_rate() >= 0.95
    })
    .unwrap();
    let w = window_conditioning(&model, &data, &quadrants, mode).unwrap();
    c.check(true, format!("{} steps", report.steps_run));
    c.check(w.inside_rate() >= 0.9, format!("{}/{} (image, quadrant) pairs inside ({:.4})", w.pairs_inside, w.pairs, w.inside_rate()));
    c.check(w.recovery_rate() >= 0.95, format!("union recovers {}/{} ({:.4})", w.recovered, w.instances, w.recovery_rate()));
    c.finish();
}

fn spotting_images(samples: &[Sample], empty_preds: bool) -> Vec<SpottingImage> {
    samples
        .iter()
        .map(|s| SpottingImage {
            preds: if empty_preds { Vec::new() } else { s.instances.iter().map(|i| (i.polygon.clone(), i.text.clone())).collect() },
            gts: s.instances.iter().map(|i| SpottingGt { polygon: i.polygon.clone(), text: i.text.clone(), ignore: false }).collect(),
        })
        .collect()
}

#[test]
fn criterion_9_metric_sanity() {
    let _g = lock();
    let mut c = Criterion::start(9, "metric sanity", 5);
    let synth = SynthConfig::default().with_seed(9);
    let spot = generate_corpus(&synth, Task::Spotting, 16).unwrap();
    let words: Vec<Vec<String>> = spot.iter().map(|s| s.instances.iter().map(|i| i.text.clone()).collect()).collect();
    let lex = Lexicons::from_ground_truth(&words);
    let cfg = SpottingConfig::default();
    for m in LexiconMode::ALL {
        let perfect = spotting_eval(&spotting_images(&spot, false), m, &lex, &cfg, Execution::Sequential).unwrap().fscore;
        let empty = spotting_eval(&spotting_images(&spot, true), m, &lex, &cfg, Execution::Sequential).unwrap().fscore;
        c.check(perfect == 1.0 && empty == 0.0, format!("spotting {m}: {perfect} / {empty}"));
    }

    let kie = generate_corpus(&synth, Task::Kie, 16).unwrap();
    let vocab = build_vocab(&VocabSpec::new(Task::Kie).with_entities(synth.entity_classes.clone())).unwrap();
    let (mut f1, mut f1_empty, mut nted, mut nted_empty) = (true, true, true, true);
    for s in &kie {
        let fields = kie_fields(&s.instances, &vocab).unwrap();
        f1 &= field_f1(&fields, &fields).fscore == 1.0;
        f1_empty &= field_f1(&[], &fields).fscore == 0.0;
        nted &= nted_accuracy(&kie_tree(&fields), &kie_tree(&fields)) == 1.0;
        nted_empty &= nted_accuracy(&kie_tree(&[]), &kie_tree(&fields)) == 0.0;
    }
    c.check(f1 && f1_empty, "field F1 1 on perfect, 0 on empty");
    c.check(nted && nted_empty, "nTED accuracy 1 on perfect, 0 on empty");

    let tables = generate_corpus(&synth, Task::Table, 16).unwrap();
    let (mut t_ok, mut t_empty) = (true, true);
    for s in &tables {
        let html = s.html.clone().unwrap_or_else(|| grid_to_html(s.table.as_ref().unwrap()));
        for structure_only in [false, true] {
            t_ok &= teds(&html, &html, structure_only) == 1.0;
            t_empty &= teds("<table></table>", &html, structure_only) == 0.0;
            t_empty &= teds("", &html, structure_only) == 0.0;
        }
    }
    c.check(t_ok && t_empty, "TEDS and S-TEDS 1 on perfect, 0 on empty");
    c.finish();
}

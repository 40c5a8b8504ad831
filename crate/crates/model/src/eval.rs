//! Training-set diagnostics: teacher-forced accuracy, greedy stage-1 exact
//! match and two-stage instance recovery.

use serde::{Deserialize, Serialize};
use vstp_core::codec::{parse_stage1, PromptSpec, StructuredSequence, TextInstance};
use vstp_core::exec::{self, Execution};
use vstp_core::geometry::QuantizedPoint;
use vstp_core::prompting::{PrefixWindow, Window};
use vstp_core::Task;

use crate::decode::{greedy_decode_with, infer_patches};
use crate::error::Result;
use crate::graph::Graph;
use crate::model::{DecoderKind, Model};
use crate::tensor::argmax;
use crate::train::{full_targets, sample_graph, stage1_sequence, PreparedSample};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    fn add(&mut self, o: Accuracy) {
        self.correct += o.correct;
        self.total += o.total;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenAccuracy {
    pub overall: Accuracy,
    pub structured: Accuracy,
    pub region: Accuracy,
    pub content: Accuracy,
}

/// Argmax accuracy on every scored position of every full-prompt target.
pub fn teacher_forced_accuracy(model: &Model, corpus: &[PreparedSample], mode: Execution) -> Result<TokenAccuracy> {
    let per = exec::map(mode, corpus, |s| -> Result<[Accuracy; 3]> {
        let targets = full_targets(model, s)?;
        let mut g = Graph::new(&model.params);
        let (_, logits) = sample_graph(model, &mut g, s, &targets)?;
        let mut acc = [Accuracy::default(); 3];
        for (kind, node) in logits {
            let l = g.value(node);
            let mut row = 0;
            for t in targets.get(kind) {
                for j in t.scored_positions() {
                    acc[kind.index()].total += 1;
                    if argmax(l.row(row + j)) == t.target[j] as usize {
                        acc[kind.index()].correct += 1;
                    }
                }
                row += t.len();
            }
        }
        Ok(acc)
    });
    let mut out = TokenAccuracy::default();
    for r in per {
        let [s, reg, c] = r?;
        out.structured.add(s);
        out.region.add(reg);
        out.content.add(c);
    }
    for a in [out.structured, out.region, out.content] {
        out.overall.add(a);
    }
    Ok(out)
}

/// Fraction of samples whose greedy stage-1 output under the full prompt
/// equals the target sequence exactly.
pub fn stage1_exact_match(model: &Model, corpus: &[PreparedSample], mode: Execution) -> Result<f64> {
    let prompt = PromptSpec::full(model.vocab.quantizer());
    let hits = exec::map(mode, corpus, |s| -> Result<bool> {
        let want = stage1_sequence(model, s, &prompt)?;
        let got = decode_stage1(model, s, &want.ids[..want.k])?;
        Ok(got == want.ids)
    });
    let mut n = 0;
    for h in hits {
        n += h? as usize;
    }
    Ok(n as f64 / corpus.len().max(1) as f64)
}

/// Greedy structured-decoder output for `prompt`.
pub fn decode_stage1(model: &Model, s: &PreparedSample, prompt: &[u32]) -> Result<Vec<u32>> {
    let v = model.encode_patches(&s.patches);
    let ctx = model.decoder_context(DecoderKind::Structured, &v);
    Ok(greedy_decode_with(model, &ctx, prompt, model.max_len(DecoderKind::Structured))?.ids)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub instances: usize,
    /// Center within one bin, every polygon point within one bin, text exact.
    pub recovered: usize,
    pub texts_exact: usize,
    pub polygons_within_bin: usize,
}

impl Recovery {
    pub fn rate(&self) -> f64 {
        if self.instances == 0 {
            1.0
        } else {
            self.recovered as f64 / self.instances as f64
        }
    }
}

fn within_one(a: QuantizedPoint, b: QuantizedPoint) -> bool {
    a.xt.abs_diff(b.xt) <= 1 && a.yt.abs_diff(b.yt) <= 1
}

/// Runs the full pipeline on each sample and matches decoded instances to
/// ground truth one-to-one by center.
pub fn instance_recovery(model: &Model, corpus: &[PreparedSample], mode: Execution) -> Result<Recovery> {
    let q = model.vocab.quantizer();
    let mut total = Recovery::default();
    for s in corpus {
        let doc = infer_patches(model, &s.patches, None, mode)?;
        let mut used = vec![false; doc.instances.len()];
        for gt in &s.instances {
            total.instances += 1;
            let c = gt.quantized_center(q);
            let Some(i) = (0..doc.instances.len()).find(|&i| !used[i] && within_one(doc.instances[i].center, c)) else {
                continue;
            };
            used[i] = true;
            let d = &doc.instances[i];
            let text_ok = d.text == gt.text;
            let poly_ok = model.vocab.task() == Task::Table
                || d.polygon
                    .as_ref()
                    .is_some_and(|p| p.quantized(q).iter().zip(gt.polygon.quantized(q).iter()).all(|(a, b)| within_one(*a, *b)));
            total.texts_exact += text_ok as usize;
            total.polygons_within_bin += poly_ok as usize;
            total.recovered += (text_ok && poly_ok) as usize;
        }
    }
    Ok(total)
}

/// Centers a greedy stage-1 decode of at most `max_len` tokens emits under
/// `prompt`.
pub fn prompted_centers(model: &Model, s: &PreparedSample, prompt: &PromptSpec, max_len: usize) -> Result<Vec<QuantizedPoint>> {
    let v = model.encode_patches(&s.patches);
    let ctx = model.decoder_context(DecoderKind::Structured, &v);
    let ids = greedy_decode_with(model, &ctx, &prompt.tokens(&model.vocab), max_len)?.ids;
    let seq = StructuredSequence { ids, k: PromptSpec::K, task: model.vocab.task() };
    Ok(parse_stage1(&seq, &model.vocab).value.points())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowConditioning {
    /// (sample, window) pairs decoded.
    pub pairs: usize,
    /// Pairs whose emitted centers all lie inside the prompted window.
    pub pairs_inside: usize,
    pub instances: usize,
    /// Ground-truth centers emitted under at least one window.
    pub recovered: usize,
}

impl WindowConditioning {
    pub fn inside_rate(&self) -> f64 {
        self.pairs_inside as f64 / self.pairs.max(1) as f64
    }

    pub fn recovery_rate(&self) -> f64 {
        self.recovered as f64 / self.instances.max(1) as f64
    }
}

/// Prompts every sample with each window (full prefix range). A windowed
/// target never exceeds the full-window one, so decoding stops at that
/// length.
pub fn window_conditioning(model: &Model, corpus: &[PreparedSample], windows: &[Window], mode: Execution) -> Result<WindowConditioning> {
    let full = PromptSpec::full(model.vocab.quantizer());
    let per = exec::map(mode, corpus, |s| -> Result<WindowConditioning> {
        let cap = stage1_sequence(model, s, &full)?.ids.len();
        let truth = centers(&s.instances, model);
        let mut out = WindowConditioning { instances: truth.len(), ..Default::default() };
        let mut emitted = Vec::new();
        for w in windows {
            let prompt = PromptSpec { window: *w, prefix: PrefixWindow::full() };
            let c = prompted_centers(model, s, &prompt, cap)?;
            out.pairs += 1;
            out.pairs_inside += c.iter().all(|p| w.contains(*p)) as usize;
            emitted.extend(c);
        }
        out.recovered = truth.iter().filter(|t| emitted.contains(t)).count();
        Ok(out)
    });
    let mut total = WindowConditioning::default();
    for r in per {
        let r = r?;
        total.pairs += r.pairs;
        total.pairs_inside += r.pairs_inside;
        total.instances += r.instances;
        total.recovered += r.recovered;
    }
    Ok(total)
}

/// Ground-truth centers of a sample.
pub fn centers(instances: &[TextInstance], model: &Model) -> Vec<QuantizedPoint> {
    instances.iter().map(|i| i.quantized_center(model.vocab.quantizer())).collect()
}

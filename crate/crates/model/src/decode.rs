//! Greedy decoding and the two-stage document pipeline.

use serde::{Deserialize, Serialize};
use vstp_core::codec::{parse_content, parse_region, parse_stage1, Diagnostic, PromptSpec, Stage1, StructuredSequence, TextInstance};
use vstp_core::exec::{self, Execution};
use vstp_core::geometry::{Polygon16, QuantizedPoint};
use vstp_core::synth::{ImageGrid, Sample};
use vstp_core::table::{assemble_html, structure_ids_to_grid, TableGrid};
use vstp_core::{Task, TokenId};

use crate::error::{ModelError, Result};
use crate::model::{DecoderCache, DecoderContext, DecoderKind, Model, VisualEmbeddings};
use crate::tensor::{argmax, Mat};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    /// Prompt followed by the generated continuation.
    pub ids: Vec<TokenId>,
    /// `max_len` was reached before EOS.
    pub truncated: bool,
}

/// Argmax continuation of `prompt` until EOS or `max_len` total tokens.
pub fn greedy_decode_with(model: &Model, ctx: &DecoderContext, prompt: &[TokenId], max_len: usize) -> Result<Decoded> {
    let max_len = max_len.min(model.max_len(ctx.kind));
    if prompt.len() >= max_len {
        return Err(ModelError::Config(format!("prompt of {} tokens leaves no room below max_len {max_len}", prompt.len())));
    }
    let eos = model.vocab.eos();
    let mut cache = DecoderCache::new(model);
    let mut ids = Vec::with_capacity(max_len);
    let mut logits = model.decode_step(ctx, &mut cache, model.vocab.bos())?;
    for &t in prompt {
        ids.push(t);
        logits = model.decode_step(ctx, &mut cache, t)?;
    }
    loop {
        let next = argmax(&logits) as TokenId;
        ids.push(next);
        if next == eos {
            return Ok(Decoded { ids, truncated: false });
        }
        if ids.len() >= max_len {
            return Ok(Decoded { ids, truncated: true });
        }
        logits = model.decode_step(ctx, &mut cache, next)?;
    }
}

pub fn greedy_decode(model: &Model, kind: DecoderKind, prompt: &[TokenId], v: &VisualEmbeddings, max_len: usize) -> Result<Decoded> {
    greedy_decode_with(model, &model.decoder_context(kind, v), prompt, max_len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedInstance {
    pub center: QuantizedPoint,
    /// `None` when the region decoder is not used (tables) or failed.
    pub polygon: Option<Polygon16>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub para_id: Option<u32>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDocument {
    pub task: Task,
    pub stage1_ids: Vec<TokenId>,
    pub stage1_truncated: bool,
    pub instances: Vec<DecodedInstance>,
    pub table: Option<TableGrid>,
    pub html: Option<String>,
    /// `(class, value)` per entity, KIE only.
    pub fields: Vec<(String, String)>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Labels attached to a stage-1 point.
#[derive(Debug, Clone, Default)]
struct PointLabel {
    entity: Option<String>,
    line_id: Option<u32>,
    para_id: Option<u32>,
}

struct Stage2 {
    polygon: Option<Polygon16>,
    text: String,
    truncated: bool,
}

fn stage2(model: &Model, region: Option<&DecoderContext>, content: &DecoderContext, p: QuantizedPoint) -> Result<Stage2> {
    let prompt = [p.xt, p.yt];
    let q = model.vocab.quantizer();
    let mut truncated = false;
    let polygon = match region {
        Some(ctx) => {
            let d = greedy_decode_with(model, ctx, &prompt, model.max_len(DecoderKind::Region))?;
            truncated |= d.truncated;
            let pts = parse_region(&d.ids, &model.vocab).value;
            Polygon16::from_quantized(&pts, q).ok()
        }
        None => None,
    };
    let d = greedy_decode_with(model, content, &prompt, model.max_len(DecoderKind::Content))?;
    truncated |= d.truncated;
    Ok(Stage2 { polygon, text: parse_content(&d.ids, &model.vocab).value, truncated })
}

/// Stage 1 with the task prompt (`None` = full window for spotting and KIE),
/// then per-point region and content decoding.
pub fn infer_document(model: &Model, img: &ImageGrid, prompt: Option<&PromptSpec>, mode: Execution) -> Result<ParsedDocument> {
    infer_patches(model, &model.patchify(img)?, prompt, mode)
}

/// [`infer_document`] on an already patchified grid.
pub fn infer_patches(model: &Model, patches: &Mat, prompt: Option<&PromptSpec>, mode: Execution) -> Result<ParsedDocument> {
    let vocab = &model.vocab;
    let task = vocab.task();
    let v = model.encode_patches(patches);
    let structured = model.decoder_context(DecoderKind::Structured, &v);
    let (prompt_ids, k) = match task {
        Task::Spotting | Task::Kie => {
            let p = prompt.copied().unwrap_or_else(|| PromptSpec::full(vocab.quantizer()));
            (p.tokens(vocab), PromptSpec::K)
        }
        Task::HierText | Task::Table => (vec![vocab.bos()], 1),
    };
    let s1 = greedy_decode_with(model, &structured, &prompt_ids, model.max_len(DecoderKind::Structured))?;
    let diagnostics;
    let mut table = None;
    let mut points: Vec<(QuantizedPoint, PointLabel)> = Vec::new();
    if task == Task::Table {
        let parsed = structure_ids_to_grid(&s1.ids, vocab);
        diagnostics = parsed.diagnostics;
        for c in parsed.value.filled_cells() {
            if let Some(center) = c.center {
                points.push((vocab.quantizer().quantize_point(center), PointLabel::default()));
            }
        }
        table = Some(parsed.value);
    } else {
        let seq = StructuredSequence { ids: s1.ids.clone(), k, task };
        let parsed = parse_stage1(&seq, vocab);
        diagnostics = parsed.diagnostics;
        match parsed.value {
            Stage1::Points(ps) => points = ps.into_iter().map(|p| (p, PointLabel::default())).collect(),
            Stage1::Entities(groups) => {
                for (gi, group) in groups.into_iter().enumerate() {
                    for p in group.points {
                        let label = PointLabel { entity: Some(group.class.clone()), line_id: Some(gi as u32), para_id: None };
                        points.push((p, label));
                    }
                }
            }
            Stage1::Hierarchy(paras) => {
                let mut line_id = 0;
                for (pi, para) in paras.into_iter().enumerate() {
                    for line in para {
                        for p in line {
                            let label = PointLabel { entity: None, line_id: Some(line_id), para_id: Some(pi as u32) };
                            points.push((p, label));
                        }
                        line_id += 1;
                    }
                }
            }
        }
    }

    let region = (task != Task::Table).then(|| model.decoder_context(DecoderKind::Region, &v));
    let content = model.decoder_context(DecoderKind::Content, &v);
    let decoded = exec::map(mode, &points, |(p, _)| stage2(model, region.as_ref(), &content, *p));
    let mut instances = Vec::with_capacity(points.len());
    for ((center, label), d) in points.into_iter().zip(decoded) {
        let d = d?;
        instances.push(DecodedInstance {
            center,
            polygon: d.polygon,
            text: d.text,
            entity: label.entity,
            line_id: label.line_id,
            para_id: label.para_id,
            truncated: d.truncated,
        });
    }

    let mut html = None;
    if let Some(grid) = table.as_mut() {
        let q = vocab.quantizer();
        let mut texts = instances.iter().map(|i| i.text.clone());
        for cell in grid.cells.iter_mut() {
            cell.text.clear();
        }
        let mut order: Vec<usize> = (0..grid.cells.len()).collect();
        order.sort_by_key(|&i| (grid.cells[i].row, grid.cells[i].col));
        for i in order {
            let cell = &mut grid.cells[i];
            if cell.center.is_some() {
                cell.text = texts.next().unwrap_or_default();
                if cell.text.is_empty() {
                    cell.center = None;
                } else if let Some(c) = cell.center {
                    cell.center = Some(q.dequantize_point(q.quantize_point(c))?);
                }
            }
        }
        let filled: Vec<String> = grid.filled_cells().iter().map(|c| c.text.clone()).collect();
        html = Some(assemble_html(grid, &filled)?);
    }

    let mut fields: Vec<(String, String)> = Vec::new();
    if task == Task::Kie {
        let mut last_group = None;
        for inst in &instances {
            let (Some(class), Some(group)) = (&inst.entity, inst.line_id) else { continue };
            if last_group == Some(group) {
                let f = fields.last_mut().expect("group started");
                f.1.push(' ');
                f.1.push_str(&inst.text);
            } else {
                fields.push((class.clone(), inst.text.clone()));
                last_group = Some(group);
            }
        }
    }

    Ok(ParsedDocument { task, stage1_ids: s1.ids, stage1_truncated: s1.truncated, instances, table, html, fields, diagnostics })
}

impl ParsedDocument {
    /// The document in the annotation schema, for prediction files.
    pub fn to_sample(&self, id: &str, width: u32, height: u32, model: &Model) -> Result<Sample> {
        let q = model.vocab.quantizer();
        let mut instances = Vec::new();
        if self.task != Task::Table {
            for inst in &self.instances {
                let polygon = match &inst.polygon {
                    Some(p) => p.clone(),
                    None => {
                        let c = q.dequantize_point(inst.center)?;
                        let h = 0.5 / q.n_bins as f64;
                        Polygon16::from_box((c.x - h).max(0.0), (c.y - h).max(0.0), (c.x + h).min(1.0), (c.y + h).min(1.0))?
                    }
                };
                instances.push(TextInstance {
                    polygon,
                    text: inst.text.clone(),
                    entity: inst.entity.clone(),
                    line_id: inst.line_id,
                    para_id: inst.para_id,
                });
            }
        }
        Ok(Sample { id: id.to_string(), task: self.task, width, height, instances, table: self.table.clone(), html: self.html.clone() })
    }
}

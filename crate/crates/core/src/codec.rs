//! Builders and parsers for the three sub-sequences: the structured points
//! sequence (spotting, KIE, hierarchical detection), the 16-point region
//! sequence and the character content sequence.
//!
//! Parsers are total: model output can be anything, so malformed input is
//! repaired with the rules below and every repair is reported as a
//! [`Diagnostic`].
//!
//! - unpaired coordinate tokens are dropped
//! - open tags are closed at EOS (or when a new group opens)
//! - tokens that are not valid for the task are ignored

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{center_of, raster_order_quantized, Point, Polygon16, QuantizedPoint, QuantizerConfig, POLYGON_POINTS};
use crate::prompting::{PrefixWindow, Window};
use crate::vocab::{entity_close_tag, entity_open_tag, Special, Task, TokenId, TokenKind, Vocabulary};

pub const STRUCTURED_MAX_LEN: usize = 1500;
pub const REGION_LEN: usize = 2 + 2 * POLYGON_POINTS + 1;
pub const CONTENT_MAX_LEN: usize = 200;

/// One word or line of text with its contour and optional labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextInstance {
    pub polygon: Polygon16,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub para_id: Option<u32>,
}

impl TextInstance {
    pub fn new(polygon: Polygon16, text: impl Into<String>) -> Self {
        Self { polygon, text: text.into(), entity: None, line_id: None, para_id: None }
    }

    pub fn with_entity(mut self, class: impl Into<String>) -> Self {
        self.entity = Some(class.into());
        self
    }

    pub fn with_hierarchy(mut self, line_id: u32, para_id: u32) -> Self {
        self.line_id = Some(line_id);
        self.para_id = Some(para_id);
        self
    }

    pub fn center(&self) -> Point {
        center_of(&self.polygon)
    }

    pub fn quantized_center(&self, cfg: QuantizerConfig) -> QuantizedPoint {
        cfg.quantize_point(self.center())
    }
}

/// Spatial window followed by prefix window; six prompt tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub window: Window,
    pub prefix: PrefixWindow,
}

impl PromptSpec {
    pub const K: usize = 6;

    pub fn full(cfg: QuantizerConfig) -> Self {
        Self { window: Window::full(cfg), prefix: PrefixWindow::full() }
    }

    pub fn k(&self) -> usize {
        Self::K
    }

    pub fn tokens(&self, vocab: &Vocabulary) -> Vec<TokenId> {
        let mut out: Vec<TokenId> = self.window.tokens().to_vec();
        out.push(vocab.char_to_token(self.prefix.first));
        out.push(vocab.char_to_token(self.prefix.last));
        out
    }

    /// Reads a prompt back from the first six ids of a sequence.
    pub fn from_tokens(ids: &[TokenId], vocab: &Vocabulary) -> Result<Self> {
        if ids.len() < Self::K {
            return Err(Error::Domain("prompt needs 6 tokens".into()));
        }
        let coord = |i: usize| -> Result<u32> {
            match vocab.kind(ids[i])? {
                TokenKind::Coord(t) => Ok(t),
                _ => Err(Error::Domain(format!("prompt token {i} is not a coordinate"))),
            }
        };
        let ch = |i: usize| -> Result<char> {
            match vocab.kind(ids[i])? {
                TokenKind::Char(c) => Ok(c),
                _ => Err(Error::Domain(format!("prompt token {i} is not a character"))),
            }
        };
        let cfg = vocab.quantizer();
        Ok(Self {
            window: Window::new(coord(0)?, coord(1)?, coord(2)?, coord(3)?, cfg)?,
            prefix: PrefixWindow::new(ch(4)?, ch(5)?, vocab)?,
        })
    }
}

/// Token ids with the number of leading prompt tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredSequence {
    pub ids: Vec<TokenId>,
    pub k: usize,
    pub task: Task,
}

impl StructuredSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.ids[..self.k]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub diagnostics: Vec<Diagnostic>,
}

impl<T> Parsed<T> {
    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityGroup {
    pub class: String,
    pub points: Vec<QuantizedPoint>,
}

/// Paragraphs of lines of word centers.
pub type Hierarchy = Vec<Vec<Vec<QuantizedPoint>>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stage1 {
    Points(Vec<QuantizedPoint>),
    Entities(Vec<EntityGroup>),
    Hierarchy(Hierarchy),
}

impl Stage1 {
    /// Every center in sequence order.
    pub fn points(&self) -> Vec<QuantizedPoint> {
        match self {
            Stage1::Points(p) => p.clone(),
            Stage1::Entities(groups) => groups.iter().flat_map(|g| g.points.iter().copied()).collect(),
            Stage1::Hierarchy(h) => h.iter().flatten().flatten().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecLimits {
    pub structured_max: usize,
    pub content_max: usize,
}

impl Default for CodecLimits {
    fn default() -> Self {
        Self { structured_max: STRUCTURED_MAX_LEN, content_max: CONTENT_MAX_LEN }
    }
}

fn centers(instances: &[TextInstance], cfg: QuantizerConfig) -> Vec<QuantizedPoint> {
    instances.iter().map(|i| i.quantized_center(cfg)).collect()
}

fn push_point(ids: &mut Vec<TokenId>, p: QuantizedPoint) {
    ids.push(p.xt);
    ids.push(p.yt);
}

fn check_len(needed: usize, max: usize, fits: usize) -> Result<()> {
    if needed > max {
        return Err(Error::Truncation { needed, max, fits });
    }
    Ok(())
}

/// Prompt, one center per instance in raster order, EOS.
pub fn build_spotting_stage1(
    instances: &[TextInstance],
    prompt: &PromptSpec,
    vocab: &Vocabulary,
    limits: &CodecLimits,
) -> Result<StructuredSequence> {
    let cfg = vocab.quantizer();
    let pts = centers(instances, cfg);
    let needed = PromptSpec::K + 2 * pts.len() + 1;
    check_len(needed, limits.structured_max, limits.structured_max.saturating_sub(PromptSpec::K + 1) / 2)?;
    let mut ids = prompt.tokens(vocab);
    for i in raster_order_quantized(&pts) {
        push_point(&mut ids, pts[i]);
    }
    ids.push(vocab.eos());
    Ok(StructuredSequence { ids, k: PromptSpec::K, task: vocab.task() })
}

/// Center prompt, the 16 polygon points in stored order, EOS; always 35 tokens.
pub fn build_region_sequence(inst: &TextInstance, vocab: &Vocabulary) -> StructuredSequence {
    let cfg = vocab.quantizer();
    let mut ids = Vec::with_capacity(REGION_LEN);
    push_point(&mut ids, inst.quantized_center(cfg));
    for p in inst.polygon.quantized(cfg) {
        push_point(&mut ids, p);
    }
    ids.push(vocab.eos());
    StructuredSequence { ids, k: 2, task: vocab.task() }
}

pub fn build_content_sequence(inst: &TextInstance, vocab: &Vocabulary, limits: &CodecLimits) -> Result<StructuredSequence> {
    content_sequence(inst.quantized_center(vocab.quantizer()), &inst.text, vocab, limits)
}

/// Center prompt, one token per character, EOS.
pub fn content_sequence(center: QuantizedPoint, text: &str, vocab: &Vocabulary, limits: &CodecLimits) -> Result<StructuredSequence> {
    if text.is_empty() {
        return Err(Error::Domain("content text must be non-empty".into()));
    }
    let chars = vocab.text_to_tokens(text);
    check_len(chars.len() + 3, limits.content_max, limits.content_max.saturating_sub(3))?;
    let mut ids = Vec::with_capacity(chars.len() + 3);
    push_point(&mut ids, center);
    ids.extend(chars);
    ids.push(vocab.eos());
    Ok(StructuredSequence { ids, k: 2, task: vocab.task() })
}

/// Groups KIE instances into entities, ordered by the raster position of
/// each entity's first word. Words of one entity share the entity label and
/// `line_id`; a word without `line_id` is an entity on its own.
pub fn group_kie_entities(instances: &[TextInstance], vocab: &Vocabulary) -> Result<Vec<(String, Vec<usize>)>> {
    let classes = &vocab.spec().entity_classes;
    let pts = centers(instances, vocab.quantizer());
    let order = raster_order_quantized(&pts);
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    let mut by_key: HashMap<(String, Option<u32>), usize> = HashMap::new();
    for i in order {
        let inst = &instances[i];
        let class = inst.entity.as_ref().ok_or_else(|| Error::Schema(format!("instance {i} has no entity label")))?;
        if !classes.contains(class) {
            return Err(Error::Schema(format!("unknown entity class {class:?}")));
        }
        match inst.line_id {
            Some(line) => {
                let slot = *by_key.entry((class.clone(), Some(line))).or_insert_with(|| {
                    groups.push((class.clone(), Vec::new()));
                    groups.len() - 1
                });
                groups[slot].1.push(i);
            }
            None => groups.push((class.clone(), vec![i])),
        }
    }
    Ok(groups)
}

pub fn build_kie_sequence(
    instances: &[TextInstance],
    prompt: &PromptSpec,
    vocab: &Vocabulary,
    limits: &CodecLimits,
) -> Result<StructuredSequence> {
    let cfg = vocab.quantizer();
    let groups = group_kie_entities(instances, vocab)?;
    let mut ids = prompt.tokens(vocab);
    let mut fits = 0;
    for (class, members) in &groups {
        let open = vocab.named(&entity_open_tag(class)).expect("class checked against schema");
        let close = vocab.named(&entity_close_tag(class)).expect("class checked against schema");
        ids.push(open);
        for &m in members {
            push_point(&mut ids, instances[m].quantized_center(cfg));
        }
        ids.push(close);
        if ids.len() < limits.structured_max {
            fits += 1;
        }
    }
    ids.push(vocab.eos());
    check_len(ids.len(), limits.structured_max, fits)?;
    Ok(StructuredSequence { ids, k: PromptSpec::K, task: vocab.task() })
}

/// Partitions instances into paragraphs of lines of words, each level in
/// raster order of its first word.
pub fn group_hierarchy(instances: &[TextInstance], cfg: QuantizerConfig) -> Result<Vec<Vec<Vec<usize>>>> {
    let pts = centers(instances, cfg);
    let order = raster_order_quantized(&pts);
    let mut line_para: HashMap<u32, u32> = HashMap::new();
    // para -> line -> words, keyed by raster rank of first member
    let mut paras: Vec<(u32, Vec<(u32, Vec<usize>)>)> = Vec::new();
    for i in order {
        let inst = &instances[i];
        let (line, para) = match (inst.line_id, inst.para_id) {
            (Some(l), Some(p)) => (l, p),
            _ => return Err(Error::Label(format!("instance {i} lacks line_id/para_id"))),
        };
        if let Some(&prev) = line_para.get(&line) {
            if prev != para {
                return Err(Error::Label(format!("line {line} spans paragraphs {prev} and {para}")));
            }
        }
        line_para.insert(line, para);
        let p = match paras.iter().position(|(id, _)| *id == para) {
            Some(p) => p,
            None => {
                paras.push((para, Vec::new()));
                paras.len() - 1
            }
        };
        let lines = &mut paras[p].1;
        match lines.iter_mut().find(|(id, _)| *id == line) {
            Some((_, words)) => words.push(i),
            None => lines.push((line, vec![i])),
        }
    }
    Ok(paras.into_iter().map(|(_, lines)| lines.into_iter().map(|(_, w)| w).collect()).collect())
}

pub fn build_hier_sequence(instances: &[TextInstance], vocab: &Vocabulary, limits: &CodecLimits) -> Result<StructuredSequence> {
    let cfg = vocab.quantizer();
    let tag = |t: &str| vocab.named(t).ok_or_else(|| Error::Config(format!("vocabulary lacks {t}")));
    let (line_open, line_close, para_open, para_close) = (tag("<LINE>")?, tag("</LINE>")?, tag("<PARA>")?, tag("</PARA>")?);
    let mut ids = vec![vocab.bos()];
    let mut fits = 0;
    for para in group_hierarchy(instances, cfg)? {
        ids.push(para_open);
        for line in para {
            ids.push(line_open);
            for w in line {
                push_point(&mut ids, instances[w].quantized_center(cfg));
            }
            ids.push(line_close);
        }
        ids.push(para_close);
        if ids.len() < limits.structured_max {
            fits += 1;
        }
    }
    ids.push(vocab.eos());
    check_len(ids.len(), limits.structured_max, fits)?;
    Ok(StructuredSequence { ids, k: 1, task: vocab.task() })
}

/// Builds the stage-1 sequence of any non-table task.
pub fn build_stage1(
    instances: &[TextInstance],
    prompt: &PromptSpec,
    vocab: &Vocabulary,
    limits: &CodecLimits,
) -> Result<StructuredSequence> {
    match vocab.task() {
        Task::Spotting => build_spotting_stage1(instances, prompt, vocab, limits),
        Task::Kie => build_kie_sequence(instances, prompt, vocab, limits),
        Task::HierText => build_hier_sequence(instances, vocab, limits),
        Task::Table => Err(Error::Config("table sequences are built by the table module".into())),
    }
}

/// The structure a stage-1 sequence of `instances` encodes, as its parse
/// should return it.
pub fn expected_stage1(instances: &[TextInstance], vocab: &Vocabulary) -> Result<Stage1> {
    let cfg = vocab.quantizer();
    let pts = centers(instances, cfg);
    Ok(match vocab.task() {
        Task::Spotting | Task::Table => Stage1::Points(raster_order_quantized(&pts).into_iter().map(|i| pts[i]).collect()),
        Task::Kie => Stage1::Entities(
            group_kie_entities(instances, vocab)?
                .into_iter()
                .map(|(class, members)| EntityGroup { class, points: members.iter().map(|&m| pts[m]).collect() })
                .collect(),
        ),
        Task::HierText => Stage1::Hierarchy(
            group_hierarchy(instances, cfg)?
                .into_iter()
                .map(|para| para.into_iter().map(|line| line.into_iter().map(|w| pts[w]).collect()).collect())
                .collect(),
        ),
    })
}

/// Pairs coordinate tokens; anything else flushes a dangling x.
struct PointReader {
    pending: Option<(usize, u32)>,
}

impl PointReader {
    fn new() -> Self {
        Self { pending: None }
    }

    fn coord(&mut self, t: u32, pos: usize) -> Option<QuantizedPoint> {
        match self.pending.take() {
            Some((_, x)) => Some(QuantizedPoint::new(x, t)),
            None => {
                self.pending = Some((pos, t));
                None
            }
        }
    }

    fn flush(&mut self, diags: &mut Vec<Diagnostic>) {
        if let Some((pos, _)) = self.pending.take() {
            diags.push(Diagnostic { position: pos, message: "unpaired coordinate token dropped".into() });
        }
    }
}

fn diag(diags: &mut Vec<Diagnostic>, position: usize, message: impl Into<String>) {
    diags.push(Diagnostic { position, message: message.into() });
}

/// Walks `ids[start..]` up to EOS, yielding each token's kind.
fn body(ids: &[TokenId], start: usize, vocab: &Vocabulary, diags: &mut Vec<Diagnostic>) -> Vec<(usize, TokenKind)> {
    let mut out = Vec::new();
    let mut saw_eos = false;
    for (pos, &id) in ids.iter().enumerate().skip(start) {
        match vocab.kind(id) {
            Ok(TokenKind::Special(Special::Eos)) => {
                saw_eos = true;
                break;
            }
            Ok(kind) => out.push((pos, kind)),
            Err(_) => diag(diags, pos, format!("unknown token id {id} ignored")),
        }
    }
    if !saw_eos {
        diag(diags, ids.len(), "sequence ended without EOS");
    }
    out
}

fn parse_points(ids: &[TokenId], start: usize, vocab: &Vocabulary) -> Parsed<Vec<QuantizedPoint>> {
    let mut diags = Vec::new();
    let mut reader = PointReader::new();
    let mut points = Vec::new();
    for (pos, kind) in body(ids, start, vocab, &mut diags) {
        match kind {
            TokenKind::Coord(t) => points.extend(reader.coord(t, pos)),
            other => {
                reader.flush(&mut diags);
                diag(&mut diags, pos, format!("token {other:?} ignored"));
            }
        }
    }
    reader.flush(&mut diags);
    Parsed { value: points, diagnostics: diags }
}

fn parse_entities(ids: &[TokenId], start: usize, vocab: &Vocabulary) -> Parsed<Vec<EntityGroup>> {
    let mut diags = Vec::new();
    let mut reader = PointReader::new();
    let mut groups: Vec<EntityGroup> = Vec::new();
    let mut open: Option<EntityGroup> = None;
    for (pos, kind) in body(ids, start, vocab, &mut diags) {
        match kind {
            TokenKind::Coord(t) => {
                if let Some(p) = reader.coord(t, pos) {
                    match open.as_mut() {
                        Some(g) => g.points.push(p),
                        None => diag(&mut diags, pos, "point outside an entity dropped"),
                    }
                }
            }
            TokenKind::Structural(i) => {
                reader.flush(&mut diags);
                let tag = &vocab.structural()[i];
                if let Some(class) = tag.strip_prefix("</").and_then(|t| t.strip_suffix('>')) {
                    match open.take() {
                        Some(g) if g.class == class => groups.push(g),
                        other => {
                            open = other;
                            diag(&mut diags, pos, format!("unmatched {tag} ignored"));
                        }
                    }
                } else if let Some(class) = tag.strip_prefix('<').and_then(|t| t.strip_suffix('>')) {
                    if let Some(g) = open.take() {
                        diag(&mut diags, pos, format!("entity <{}> closed by a new group", g.class));
                        groups.push(g);
                    }
                    open = Some(EntityGroup { class: class.to_string(), points: Vec::new() });
                }
            }
            other => {
                reader.flush(&mut diags);
                diag(&mut diags, pos, format!("token {other:?} ignored"));
            }
        }
    }
    reader.flush(&mut diags);
    if let Some(g) = open.take() {
        diag(&mut diags, ids.len(), format!("entity <{}> closed at end of sequence", g.class));
        groups.push(g);
    }
    Parsed { value: groups, diagnostics: diags }
}

fn parse_hierarchy(ids: &[TokenId], start: usize, vocab: &Vocabulary) -> Parsed<Hierarchy> {
    let mut diags = Vec::new();
    let mut reader = PointReader::new();
    let mut paras: Hierarchy = Vec::new();
    let mut para: Option<Vec<Vec<QuantizedPoint>>> = None;
    let mut line: Option<Vec<QuantizedPoint>> = None;
    for (pos, kind) in body(ids, start, vocab, &mut diags) {
        match kind {
            TokenKind::Coord(t) => {
                if let Some(p) = reader.coord(t, pos) {
                    match line.as_mut() {
                        Some(l) => l.push(p),
                        None => diag(&mut diags, pos, "point outside a line dropped"),
                    }
                }
            }
            TokenKind::Structural(i) => {
                reader.flush(&mut diags);
                match vocab.structural()[i].as_str() {
                    "<PARA>" => {
                        if let Some(l) = line.take() {
                            diag(&mut diags, pos, "open line closed by <PARA>");
                            para.get_or_insert_with(Vec::new).push(l);
                        }
                        if let Some(p) = para.take() {
                            diag(&mut diags, pos, "open paragraph closed by <PARA>");
                            paras.push(p);
                        }
                        para = Some(Vec::new());
                    }
                    "<LINE>" => {
                        if let Some(l) = line.take() {
                            diag(&mut diags, pos, "open line closed by <LINE>");
                            para.get_or_insert_with(Vec::new).push(l);
                        }
                        if para.is_none() {
                            diag(&mut diags, pos, "line outside a paragraph; paragraph opened");
                            para = Some(Vec::new());
                        }
                        line = Some(Vec::new());
                    }
                    "</LINE>" => match line.take() {
                        Some(l) => para.get_or_insert_with(Vec::new).push(l),
                        None => diag(&mut diags, pos, "unmatched </LINE> ignored"),
                    },
                    "</PARA>" => {
                        if let Some(l) = line.take() {
                            diag(&mut diags, pos, "open line closed by </PARA>");
                            para.get_or_insert_with(Vec::new).push(l);
                        }
                        match para.take() {
                            Some(p) => paras.push(p),
                            None => diag(&mut diags, pos, "unmatched </PARA> ignored"),
                        }
                    }
                    other => diag(&mut diags, pos, format!("token {other} ignored")),
                }
            }
            other => {
                reader.flush(&mut diags);
                diag(&mut diags, pos, format!("token {other:?} ignored"));
            }
        }
    }
    reader.flush(&mut diags);
    if let Some(l) = line.take() {
        diag(&mut diags, ids.len(), "line closed at end of sequence");
        para.get_or_insert_with(Vec::new).push(l);
    }
    if let Some(p) = para.take() {
        diag(&mut diags, ids.len(), "paragraph closed at end of sequence");
        paras.push(p);
    }
    Parsed { value: paras, diagnostics: diags }
}

/// Best-effort inverse of the stage-1 builders. Never fails.
pub fn parse_stage1(seq: &StructuredSequence, vocab: &Vocabulary) -> Parsed<Stage1> {
    let start = seq.k.min(seq.ids.len());
    match seq.task {
        Task::Spotting | Task::Table => {
            let p = parse_points(&seq.ids, start, vocab);
            Parsed { value: Stage1::Points(p.value), diagnostics: p.diagnostics }
        }
        Task::Kie => {
            let p = parse_entities(&seq.ids, start, vocab);
            Parsed { value: Stage1::Entities(p.value), diagnostics: p.diagnostics }
        }
        Task::HierText => {
            let p = parse_hierarchy(&seq.ids, start, vocab);
            Parsed { value: Stage1::Hierarchy(p.value), diagnostics: p.diagnostics }
        }
    }
}

/// Reads polygon points after the 2-token center prompt. Missing points are
/// filled by repeating the last recovered one (or the center).
pub fn parse_region(ids: &[TokenId], vocab: &Vocabulary) -> Parsed<Vec<QuantizedPoint>> {
    let start = 2.min(ids.len());
    let mut p = parse_points(ids, start, vocab);
    if p.value.len() != POLYGON_POINTS {
        diag(&mut p.diagnostics, ids.len(), format!("region has {} points, expected {POLYGON_POINTS}", p.value.len()));
        let fill = p.value.last().copied().or_else(|| match (ids.first(), ids.get(1)) {
            (Some(&x), Some(&y)) if vocab.is_coord(x) && vocab.is_coord(y) => Some(QuantizedPoint::new(x, y)),
            _ => None,
        });
        p.value.truncate(POLYGON_POINTS);
        if let Some(f) = fill {
            p.value.resize(POLYGON_POINTS, f);
        }
    }
    p
}

/// Reads characters after the 2-token center prompt; UNK becomes U+FFFD.
pub fn parse_content(ids: &[TokenId], vocab: &Vocabulary) -> Parsed<String> {
    let mut diags = Vec::new();
    let mut text = String::new();
    for (pos, kind) in body(ids, 2.min(ids.len()), vocab, &mut diags) {
        match kind {
            TokenKind::Char(c) => text.push(c),
            TokenKind::Special(Special::Unk) => text.push(char::REPLACEMENT_CHARACTER),
            TokenKind::Structural(i) if vocab.structural()[i] == crate::vocab::SPACE => text.push(' '),
            other => diag(&mut diags, pos, format!("token {other:?} ignored")),
        }
    }
    Parsed { value: text, diagnostics: diags }
}

/// Field view of a KIE annotation: `(class, words joined by spaces)` per entity.
pub fn kie_fields(instances: &[TextInstance], vocab: &Vocabulary) -> Result<Vec<(String, String)>> {
    Ok(group_kie_entities(instances, vocab)?
        .into_iter()
        .map(|(class, members)| {
            let words: Vec<&str> = members.iter().map(|&m| instances[m].text.as_str()).collect();
            (class, words.join(" "))
        })
        .collect())
}

/// Count of built sequences by kind, for reporting.
pub fn token_histogram(seq: &StructuredSequence, vocab: &Vocabulary) -> BTreeMap<&'static str, usize> {
    let mut h = BTreeMap::new();
    for &id in &seq.ids {
        let key = match vocab.kind(id) {
            Ok(TokenKind::Coord(_)) => "coord",
            Ok(TokenKind::Char(_)) => "char",
            Ok(TokenKind::Structural(_)) => "structural",
            Ok(TokenKind::Special(_)) => "special",
            Err(_) => "invalid",
        };
        *h.entry(key).or_insert(0) += 1;
    }
    h
}

//! Evaluation: TEDS / S-TEDS over HTML table trees, KIE field F1 and
//! tree-edit-distance accuracy, and end-to-end spotting with lexicons.
//!
//! All tree metrics share one ordered tree edit distance (Zhang-Shasha
//! keyroot DP) with unit insert/delete costs. Renaming costs 1 when tags or
//! spans differ, and otherwise the normalized Levenshtein distance of the
//! node contents.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::{polygon_iou, Polygon16};
use crate::table::{lex_html, HtmlToken};
use crate::vocab::Task;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TedsTree {
    pub tag: String,
    pub rowspan: u32,
    pub colspan: u32,
    /// Cell text on `td` nodes (value leaves in KIE trees).
    pub content: Option<String>,
    pub children: Vec<TedsTree>,
}

impl TedsTree {
    pub fn node(tag: impl Into<String>, children: Vec<TedsTree>) -> Self {
        Self { tag: tag.into(), rowspan: 1, colspan: 1, content: None, children }
    }

    pub fn leaf(tag: impl Into<String>, content: Option<&str>) -> Self {
        Self { content: content.map(str::to_string), ..Self::node(tag, Vec::new()) }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(TedsTree::size).sum::<usize>()
    }

    fn count_tag(&self, tag: &str) -> usize {
        (self.tag == tag) as usize + self.children.iter().map(|c| c.count_tag(tag)).sum::<usize>()
    }
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + (a[i - 1] != b[j - 1]) as usize;
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let max = a.chars().count().max(b.chars().count());
    if max == 0 {
        0.0
    } else {
        levenshtein(a, b) as f64 / max as f64
    }
}

/// Cost of relabeling node `a` as node `b`.
pub fn rename_cost(a: &TedsTree, b: &TedsTree) -> f64 {
    if a.tag != b.tag || a.rowspan != b.rowspan || a.colspan != b.colspan {
        return 1.0;
    }
    match (&a.content, &b.content) {
        (Some(x), Some(y)) => normalized_levenshtein(x, y),
        (None, None) => 0.0,
        _ => 1.0,
    }
}

struct Flat<'a> {
    nodes: Vec<&'a TedsTree>,
    /// Leftmost leaf descendant, postorder index.
    lld: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a> Flat<'a> {
    fn new(root: &'a TedsTree) -> Self {
        fn walk<'a>(t: &'a TedsTree, nodes: &mut Vec<&'a TedsTree>, lld: &mut Vec<usize>) -> usize {
            let mut first = None;
            for c in &t.children {
                let l = walk(c, nodes, lld);
                first.get_or_insert(l);
            }
            let idx = nodes.len();
            nodes.push(t);
            let l = first.unwrap_or(idx);
            lld.push(l);
            l
        }
        let (mut nodes, mut lld) = (Vec::new(), Vec::new());
        walk(root, &mut nodes, &mut lld);
        // keyroots: highest node for each distinct lld
        let mut seen = HashMap::new();
        for i in (0..nodes.len()).rev() {
            seen.entry(lld[i]).or_insert(i);
        }
        let mut keyroots: Vec<usize> = seen.into_values().collect();
        keyroots.sort_unstable();
        Self { nodes, lld, keyroots }
    }
}

/// Ordered tree edit distance with unit insert/delete and [`rename_cost`].
pub fn tree_edit_distance(a: &TedsTree, b: &TedsTree) -> f64 {
    let fa = Flat::new(a);
    let fb = Flat::new(b);
    let (n, m) = (fa.nodes.len(), fb.nodes.len());
    let mut td = vec![vec![0.0f64; m]; n];
    let mut fd = vec![vec![0.0f64; m + 1]; n + 1];
    for &i in &fa.keyroots {
        for &j in &fb.keyroots {
            let (li, lj) = (fa.lld[i], fb.lld[j]);
            // fd indices are offset by the forest start: fd[x - li + 1][y - lj + 1]
            fd[0][0] = 0.0;
            for x in li..=i {
                fd[x - li + 1][0] = fd[x - li][0] + 1.0;
            }
            for y in lj..=j {
                fd[0][y - lj + 1] = fd[0][y - lj] + 1.0;
            }
            for x in li..=i {
                for y in lj..=j {
                    let (xi, yi) = (x - li + 1, y - lj + 1);
                    let del = fd[xi - 1][yi] + 1.0;
                    let ins = fd[xi][yi - 1] + 1.0;
                    if fa.lld[x] == li && fb.lld[y] == lj {
                        let ren = fd[xi - 1][yi - 1] + rename_cost(fa.nodes[x], fb.nodes[y]);
                        fd[xi][yi] = del.min(ins).min(ren);
                        td[x][y] = fd[xi][yi];
                    } else {
                        let px = fa.lld[x] - li;
                        let py = fb.lld[y] - lj;
                        let sub = fd[px][py] + td[x][y];
                        fd[xi][yi] = del.min(ins).min(sub);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

/// Builds the TEDS tree of an HTML table. Content is dropped when
/// `structure_only`.
pub fn html_to_teds_tree(html: &str, structure_only: bool) -> Result<TedsTree> {
    let tokens = lex_html(html)?;
    let mut stack: Vec<TedsTree> = Vec::new();
    let mut root: Option<TedsTree> = None;
    for tok in tokens {
        match tok {
            HtmlToken::Open { tag, attrs, pos } => {
                if root.is_some() {
                    return Err(Error::Parse { pos, msg: "content after </table>".into() });
                }
                let allowed = match (stack.last().map(|t| t.tag.as_str()), tag.as_str()) {
                    (None, "table") => true,
                    (Some("table"), "thead" | "tbody" | "tr") => true,
                    (Some("thead" | "tbody"), "tr") => true,
                    (Some("tr"), "td") => true,
                    _ => false,
                };
                if !allowed {
                    return Err(Error::Parse { pos, msg: format!("unexpected <{tag}>") });
                }
                let mut node = TedsTree::node(tag.clone(), Vec::new());
                if tag == "td" {
                    for (k, v) in &attrs {
                        let n: u32 = v.trim().parse().map_err(|_| Error::Parse { pos, msg: format!("bad {k}") })?;
                        match k.as_str() {
                            "rowspan" => node.rowspan = n,
                            "colspan" => node.colspan = n,
                            _ => {}
                        }
                    }
                    if !structure_only {
                        node.content = Some(String::new());
                    }
                }
                stack.push(node);
            }
            HtmlToken::Close { tag, pos } => {
                let node = stack.pop().filter(|n| n.tag == tag).ok_or_else(|| Error::Parse { pos, msg: format!("unbalanced </{tag}>") })?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None => root = Some(node),
                }
            }
            HtmlToken::Text { text, pos } => match stack.last_mut() {
                Some(n) if n.tag == "td" => {
                    if let Some(c) = n.content.as_mut() {
                        c.push_str(&text);
                    }
                }
                _ if text.trim().is_empty() => {}
                _ => return Err(Error::Parse { pos, msg: "text outside a cell".into() }),
            },
        }
    }
    if !stack.is_empty() {
        return Err(Error::Parse { pos: html.len(), msg: "unclosed element".into() });
    }
    root.ok_or_else(|| Error::Parse { pos: 0, msg: "no <table> element".into() })
}

/// Similarity between two trees: `1 - TED / max(|a|, |b|)`.
pub fn tree_similarity(pred: &TedsTree, gt: &TedsTree) -> f64 {
    let (p_empty, g_empty) = (pred.count_tag("td") == 0, gt.count_tag("td") == 0);
    match (p_empty, g_empty) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let d = tree_edit_distance(pred, gt);
    (1.0 - d / pred.size().max(gt.size()) as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TedsScore {
    pub score: f64,
    pub diagnostic: Option<String>,
}

/// TEDS (or S-TEDS when `structure_only`). Unparseable HTML scores 0.
pub fn teds_scored(pred_html: &str, gt_html: &str, structure_only: bool) -> TedsScore {
    let gt = match html_to_teds_tree(gt_html, structure_only) {
        Ok(t) => t,
        Err(e) => return TedsScore { score: 0.0, diagnostic: Some(format!("ground truth: {e}")) },
    };
    match html_to_teds_tree(pred_html, structure_only) {
        Ok(pred) => TedsScore { score: tree_similarity(&pred, &gt), diagnostic: None },
        Err(e) => TedsScore { score: 0.0, diagnostic: Some(format!("prediction: {e}")) },
    }
}

pub fn teds(pred_html: &str, gt_html: &str, structure_only: bool) -> f64 {
    teds_scored(pred_html, gt_html, structure_only).score
}

/// Mean TEDS over aligned prediction/ground-truth pairs.
pub fn mean_teds(pairs: &[(String, String)], structure_only: bool, mode: Execution) -> f64 {
    if pairs.is_empty() {
        return 1.0;
    }
    let scores = exec::map(mode, pairs, |(p, g)| teds(p, g, structure_only));
    scores.iter().sum::<f64>() / scores.len() as f64
}

// ---------------------------------------------------------------------------
// KIE

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

impl Prf {
    pub fn from_counts(hits: usize, n_pred: usize, n_gt: usize) -> Self {
        if n_pred == 0 && n_gt == 0 {
            return Self { precision: 1.0, recall: 1.0, fscore: 1.0 };
        }
        let precision = if n_pred == 0 { 0.0 } else { hits as f64 / n_pred as f64 };
        let recall = if n_gt == 0 { 0.0 } else { hits as f64 / n_gt as f64 };
        let fscore = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, fscore }
    }
}

/// Exact-match F1 over `(class, value)` multisets.
pub fn field_f1(pred: &[(String, String)], gt: &[(String, String)]) -> Prf {
    Prf::from_counts(field_matches(pred, gt), pred.len(), gt.len())
}

/// Size of the multiset intersection of predicted and ground-truth fields.
pub fn field_matches(pred: &[(String, String)], gt: &[(String, String)]) -> usize {
    let mut counts: HashMap<&(String, String), usize> = HashMap::new();
    for g in gt {
        *counts.entry(g).or_insert(0) += 1;
    }
    let mut hits = 0;
    for p in pred {
        if let Some(c) = counts.get_mut(p) {
            if *c > 0 {
                *c -= 1;
                hits += 1;
            }
        }
    }
    hits
}

/// Root -> one class node per field -> value leaf.
pub fn kie_tree(fields: &[(String, String)]) -> TedsTree {
    TedsTree::node(
        "root",
        fields.iter().map(|(class, value)| TedsTree::node(class.clone(), vec![TedsTree::leaf("value", Some(value))])).collect(),
    )
}

/// `max(0, 1 - TED(pred, gt) / TED(empty, gt))`.
pub fn nted_accuracy(pred: &TedsTree, gt: &TedsTree) -> f64 {
    let empty = TedsTree::node(gt.tag.clone(), Vec::new());
    let denom = tree_edit_distance(&empty, gt);
    if denom == 0.0 {
        return if tree_edit_distance(pred, gt) == 0.0 { 1.0 } else { 0.0 };
    }
    (1.0 - tree_edit_distance(pred, gt) / denom).max(0.0)
}

// ---------------------------------------------------------------------------
// Spotting

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LexiconMode {
    None,
    Full,
    Strong,
    Weak,
    Generic,
}

impl LexiconMode {
    pub const ALL: [LexiconMode; 5] = [LexiconMode::None, LexiconMode::Full, LexiconMode::Strong, LexiconMode::Weak, LexiconMode::Generic];

    pub fn as_str(&self) -> &'static str {
        match self {
            LexiconMode::None => "none",
            LexiconMode::Full => "full",
            LexiconMode::Strong => "strong",
            LexiconMode::Weak => "weak",
            LexiconMode::Generic => "generic",
        }
    }
}

impl fmt::Display for LexiconMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LexiconMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LexiconMode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| Error::Config(format!("unknown lexicon mode {s:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicons {
    #[serde(default)]
    pub full: Vec<String>,
    #[serde(default)]
    pub weak: Vec<String>,
    #[serde(default)]
    pub generic: Vec<String>,
    /// One list per image.
    #[serde(default)]
    pub strong: Vec<Vec<String>>,
}

impl Lexicons {
    /// Lexicons built from the ground-truth words of each image: the
    /// per-image lists are the strong lexicons and their sorted union serves
    /// as the full, weak and generic lists.
    pub fn from_ground_truth(images: &[Vec<String>]) -> Self {
        let union: Vec<String> = images.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        Self { full: union.clone(), weak: union.clone(), generic: union, strong: images.to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpottingConfig {
    pub iou_threshold: f64,
    /// Maximum edit distance for lexicon correction; `None` is unbounded.
    pub max_edit_distance: Option<usize>,
}

impl Default for SpottingConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5, max_edit_distance: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpottingGt {
    pub polygon: Polygon16,
    pub text: String,
    pub ignore: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpottingImage {
    pub preds: Vec<(Polygon16, String)>,
    pub gts: Vec<SpottingGt>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpottingCounts {
    pub n_pred: usize,
    pub n_gt: usize,
    pub det_hits: usize,
    pub e2e_hits: usize,
}

impl std::ops::Add for SpottingCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            n_pred: self.n_pred + o.n_pred,
            n_gt: self.n_gt + o.n_gt,
            det_hits: self.det_hits + o.det_hits,
            e2e_hits: self.e2e_hits + o.e2e_hits,
        }
    }
}

/// Replaces `text` by its nearest lexicon word (case-insensitive edit
/// distance, first wins on ties).
pub fn correct_with_lexicon(text: &str, lexicon: &[String], max_dist: Option<usize>) -> String {
    let lower = text.to_lowercase();
    let best = lexicon.iter().map(|w| (levenshtein(&lower, &w.to_lowercase()), w)).min_by_key(|(d, _)| *d);
    match best {
        Some((d, w)) if max_dist.is_none_or(|m| d <= m) => w.clone(),
        _ => text.to_string(),
    }
}

/// One-to-one IoU matching: highest IoU first, then lower GT index.
pub fn match_detections(preds: &[Polygon16], gts: &[Polygon16], threshold: f64) -> Vec<(usize, usize)> {
    let mut cands = Vec::new();
    for (p, pp) in preds.iter().enumerate() {
        for (g, gp) in gts.iter().enumerate() {
            let iou = polygon_iou(pp, gp);
            if iou >= threshold && iou > 0.0 {
                cands.push((iou, g, p));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_p, mut used_g) = (vec![false; preds.len()], vec![false; gts.len()]);
    let mut out = Vec::new();
    for (_, g, p) in cands {
        if !used_p[p] && !used_g[g] {
            used_p[p] = true;
            used_g[g] = true;
            out.push((p, g));
        }
    }
    out
}

pub fn spotting_counts(img: &SpottingImage, lexicon: Option<&[String]>, cfg: &SpottingConfig) -> SpottingCounts {
    let pp: Vec<Polygon16> = img.preds.iter().map(|(p, _)| p.clone()).collect();
    let gp: Vec<Polygon16> = img.gts.iter().map(|g| g.polygon.clone()).collect();
    let matches = match_detections(&pp, &gp, cfg.iou_threshold);
    let mut c = SpottingCounts { n_pred: img.preds.len(), n_gt: img.gts.iter().filter(|g| !g.ignore).count(), ..Default::default() };
    for (p, g) in matches {
        let gt = &img.gts[g];
        if gt.ignore {
            c.n_pred -= 1;
            continue;
        }
        c.det_hits += 1;
        let text = match lexicon {
            Some(lex) => correct_with_lexicon(&img.preds[p].1, lex, cfg.max_edit_distance),
            None => img.preds[p].1.clone(),
        };
        if text.to_lowercase() == gt.text.to_lowercase() {
            c.e2e_hits += 1;
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub mode: String,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub breakdown: BTreeMap<String, f64>,
}

/// End-to-end spotting evaluation over a set of images.
pub fn spotting_eval(
    images: &[SpottingImage],
    mode: LexiconMode,
    lexicons: &Lexicons,
    cfg: &SpottingConfig,
    exec_mode: Execution,
) -> Result<EvalReport> {
    let shared: Option<&[String]> = match mode {
        LexiconMode::None | LexiconMode::Strong => None,
        LexiconMode::Full => Some(&lexicons.full),
        LexiconMode::Weak => Some(&lexicons.weak),
        LexiconMode::Generic => Some(&lexicons.generic),
    };
    if mode == LexiconMode::Strong && lexicons.strong.len() != images.len() {
        return Err(Error::Config(format!("strong lexicon mode needs {} per-image lists, got {}", images.len(), lexicons.strong.len())));
    }
    let per_image = exec::map_range(exec_mode, images.len(), |i| {
        let lex = match mode {
            LexiconMode::Strong => Some(lexicons.strong[i].as_slice()),
            _ => shared,
        };
        spotting_counts(&images[i], lex, cfg)
    });
    let total = per_image.into_iter().fold(SpottingCounts::default(), |a, b| a + b);
    let e2e = Prf::from_counts(total.e2e_hits, total.n_pred, total.n_gt);
    let det = Prf::from_counts(total.det_hits, total.n_pred, total.n_gt);
    let mut breakdown = BTreeMap::new();
    breakdown.insert("det_precision".into(), det.precision);
    breakdown.insert("det_recall".into(), det.recall);
    breakdown.insert("det_fscore".into(), det.fscore);
    Ok(EvalReport {
        task: Task::Spotting,
        mode: mode.to_string(),
        precision: e2e.precision,
        recall: e2e.recall,
        fscore: e2e.fscore,
        n: images.len(),
        breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn td(text: &str) -> TedsTree {
        TedsTree::leaf("td", Some(text))
    }

    fn table_html(cells: &[&str]) -> String {
        let tds: String = cells.iter().map(|c| format!("<td>{c}</td>")).collect();
        format!("<table><tbody><tr>{tds}</tr></tbody></table>")
    }

    fn boxed(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon16 {
        Polygon16::from_box(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn ted_examples() {
        let t = TedsTree::node("tr", vec![td("a"), td("b")]);
        assert_eq!(tree_edit_distance(&t, &t), 0.0);
        assert_eq!(tree_edit_distance(&td("ab"), &td("ac")), 0.5);
        assert_eq!(tree_edit_distance(&TedsTree::node("a", vec![]), &TedsTree::node("b", vec![])), 1.0);
        let smaller = TedsTree::node("tr", vec![td("a")]);
        assert_eq!(tree_edit_distance(&t, &smaller), 1.0);
    }

    #[test]
    fn teds_examples() {
        let two = table_html(&["a", "b"]);
        let one = table_html(&["a"]);
        assert_eq!(teds(&two, &two, false), 1.0);
        assert!((teds(&one, &two, false) - 0.8).abs() < 1e-12);
        assert_eq!(teds(&table_html(&["x", "y"]), &two, true), 1.0);
        assert!(teds(&table_html(&["x", "y"]), &two, false) < 1.0);
        let garbage = teds_scored("<table><tr><td>", &two, false);
        assert_eq!(garbage.score, 0.0);
        assert!(garbage.diagnostic.is_some());
        assert_eq!(teds("<table></table>", "<table></table>", false), 1.0);
        assert_eq!(teds("<table></table>", &two, false), 0.0);
    }

    #[test]
    fn teds_sees_spans() {
        let a = r#"<table><tbody><tr><td colspan="2">a</td></tr></tbody></table>"#;
        let b = r#"<table><tbody><tr><td>a</td></tr></tbody></table>"#;
        assert!(teds(a, b, true) < 1.0);
    }

    #[test]
    fn field_f1_examples() {
        let f = |c: &str, v: &str| (c.to_string(), v.to_string());
        let gt = vec![f("a", "1"), f("b", "2")];
        assert_eq!(field_f1(&gt, &gt).fscore, 1.0);
        let p = field_f1(&[f("a", "1")], &gt);
        assert_eq!((p.precision, p.recall), (1.0, 0.5));
        assert!((p.fscore - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(field_f1(&[], &gt).fscore, 0.0);
        assert_eq!(field_f1(&[], &[]).fscore, 1.0);
        // multiset: a duplicate prediction only matches once
        let p = field_f1(&[f("a", "1"), f("a", "1")], &[f("a", "1")]);
        assert_eq!(p.precision, 0.5);
    }

    #[test]
    fn nted_examples() {
        let f = |c: &str, v: &str| (c.to_string(), v.to_string());
        let gt = kie_tree(&[f("total", "1234"), f("date", "0101")]);
        assert_eq!(nted_accuracy(&gt, &gt), 1.0);
        assert_eq!(nted_accuracy(&kie_tree(&[]), &gt), 0.0);
        let one = kie_tree(&[f("total", "1234")]);
        let pred = kie_tree(&[f("total", "1235")]);
        assert!((nted_accuracy(&pred, &one) - 0.875).abs() < 1e-12);
    }

    #[test]
    fn lexicon_correction() {
        assert_eq!(correct_with_lexicon("HeIIo", &["hello".into()], None), "hello");
        assert_eq!(correct_with_lexicon("abc", &["abd".into(), "abe".into()], None), "abd");
        assert_eq!(correct_with_lexicon("zzzz", &["a".into()], Some(1)), "zzzz");
        assert_eq!(correct_with_lexicon("x", &[], None), "x");
    }

    #[test]
    fn spotting_examples() {
        let gts = vec![
            SpottingGt { polygon: boxed(0.1, 0.1, 0.3, 0.2), text: "hello".into(), ignore: false },
            SpottingGt { polygon: boxed(0.5, 0.5, 0.8, 0.6), text: "World".into(), ignore: false },
        ];
        let perfect = SpottingImage { preds: gts.iter().map(|g| (g.polygon.clone(), g.text.clone())).collect(), gts: gts.clone() };
        let lex = Lexicons {
            full: vec!["hello".into(), "world".into()],
            weak: vec!["hello".into(), "world".into()],
            generic: vec!["hello".into(), "world".into(), "other".into()],
            strong: vec![vec!["hello".into(), "world".into()]],
        };
        let cfg = SpottingConfig::default();
        for mode in LexiconMode::ALL {
            let r = spotting_eval(std::slice::from_ref(&perfect), mode, &lex, &cfg, Execution::Sequential).unwrap();
            assert_eq!((r.precision, r.recall, r.fscore), (1.0, 1.0, 1.0), "{mode}");
        }

        let wrong = SpottingImage { preds: vec![(gts[0].polygon.clone(), "HeIIo".into())], gts: gts[..1].to_vec() };
        let r = spotting_eval(std::slice::from_ref(&wrong), LexiconMode::None, &lex, &cfg, Execution::Sequential).unwrap();
        assert_eq!(r.fscore, 0.0);
        assert_eq!(r.breakdown["det_fscore"], 1.0);
        let r = spotting_eval(std::slice::from_ref(&wrong), LexiconMode::Full, &lex, &cfg, Execution::Sequential).unwrap();
        assert_eq!(r.fscore, 1.0);

        let empty = SpottingImage { preds: vec![], gts: gts.clone() };
        let r = spotting_eval(&[empty], LexiconMode::None, &lex, &cfg, Execution::Sequential).unwrap();
        assert_eq!(r.fscore, 0.0);
        assert!(LexiconMode::from_str("bogus").is_err());
    }

    #[test]
    fn ignored_gts_are_excluded() {
        let img = SpottingImage {
            preds: vec![(boxed(0.1, 0.1, 0.3, 0.2), "###".into()), (boxed(0.5, 0.5, 0.7, 0.6), "ok".into())],
            gts: vec![
                SpottingGt { polygon: boxed(0.1, 0.1, 0.3, 0.2), text: "###".into(), ignore: true },
                SpottingGt { polygon: boxed(0.5, 0.5, 0.7, 0.6), text: "ok".into(), ignore: false },
            ],
        };
        let c = spotting_counts(&img, None, &SpottingConfig::default());
        assert_eq!(c, SpottingCounts { n_pred: 1, n_gt: 1, det_hits: 1, e2e_hits: 1 });
    }

    #[test]
    fn matching_is_injective() {
        let g = boxed(0.1, 0.1, 0.5, 0.5);
        let preds = vec![g.clone(), boxed(0.12, 0.1, 0.5, 0.5)];
        let m = match_detections(&preds, &[g], 0.5);
        assert_eq!(m, vec![(0, 0)]);
    }
}

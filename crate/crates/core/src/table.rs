//! Table structure: logical grid <-> merged-label structure tokens with
//! inserted cell points <-> canonical HTML.
//!
//! Non-spanning cells use a single merged token (`<td></td>` when empty,
//! `<td>[]</td>` when filled). Spanning cells use the group
//! `<td`, span attributes (rowspan first), `>`, `</td>`. A filled cell's
//! center point follows its closing token.

use serde::{Deserialize, Serialize};

use crate::codec::{content_sequence, CodecLimits, Diagnostic, Parsed, StructuredSequence};
use crate::error::{Error, Result};
use crate::geometry::{Point, QuantizedPoint, QuantizerConfig};
use crate::vocab::{colspan_token, rowspan_token, Task, TokenId, Vocabulary, BOS, EOS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub row: u32,
    pub col: u32,
    pub rowspan: u32,
    pub colspan: u32,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Point>,
}

impl TableCell {
    pub fn new(row: u32, col: u32, rowspan: u32, colspan: u32) -> Self {
        Self { row, col, rowspan, colspan, text: String::new(), center: None }
    }

    pub fn with_text(mut self, text: impl Into<String>, center: Point) -> Self {
        self.text = text.into();
        self.center = Some(center);
        self
    }

    pub fn is_spanning(&self) -> bool {
        self.rowspan > 1 || self.colspan > 1
    }

    /// A cell carries content when it has text or (in a structure-only grid) a point.
    pub fn is_filled(&self) -> bool {
        !self.text.is_empty() || self.center.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableGrid {
    pub n_rows: u32,
    pub n_cols: u32,
    #[serde(default)]
    pub header_rows: u32,
    pub cells: Vec<TableCell>,
}

/// Per-cell structure used to compare grids: anchor, spans and quantized point.
pub type CellKey = (u32, u32, u32, u32, Option<QuantizedPoint>);

impl TableGrid {
    pub fn empty() -> Self {
        Self { n_rows: 0, n_cols: 0, header_rows: 0, cells: Vec::new() }
    }

    /// Checks that the cells tile the grid exactly.
    pub fn validate(&self) -> Result<()> {
        if self.header_rows > self.n_rows {
            return Err(Error::Domain("header_rows exceeds n_rows".into()));
        }
        let (rows, cols) = (self.n_rows as usize, self.n_cols as usize);
        let mut occ = vec![false; rows * cols];
        for c in &self.cells {
            if c.rowspan == 0 || c.colspan == 0 {
                return Err(Error::Domain(format!("cell ({}, {}) has a zero span", c.row, c.col)));
            }
            if c.row + c.rowspan > self.n_rows || c.col + c.colspan > self.n_cols {
                return Err(Error::Domain(format!("cell ({}, {}) exceeds the grid", c.row, c.col)));
            }
            for r in c.row..c.row + c.rowspan {
                for k in c.col..c.col + c.colspan {
                    let slot = &mut occ[r as usize * cols + k as usize];
                    if *slot {
                        return Err(Error::Domain(format!("cells overlap at ({r}, {k})")));
                    }
                    *slot = true;
                }
            }
        }
        if let Some(i) = occ.iter().position(|o| !o) {
            return Err(Error::Domain(format!("grid slot ({}, {}) uncovered", i / cols, i % cols)));
        }
        Ok(())
    }

    /// Ground-truth invariant: a center is present exactly when text is non-empty.
    pub fn validate_centers(&self) -> Result<()> {
        for c in &self.cells {
            if c.text.is_empty() == c.center.is_some() {
                return Err(Error::Domain(format!("cell ({}, {}): center must be present iff text is non-empty", c.row, c.col)));
            }
        }
        Ok(())
    }

    /// Cells in row-major anchor order.
    pub fn ordered_cells(&self) -> Vec<&TableCell> {
        let mut cells: Vec<&TableCell> = self.cells.iter().collect();
        cells.sort_by_key(|c| (c.row, c.col));
        cells
    }

    pub fn filled_cells(&self) -> Vec<&TableCell> {
        self.ordered_cells().into_iter().filter(|c| c.is_filled()).collect()
    }

    pub fn structure_key(&self, cfg: QuantizerConfig) -> (u32, u32, u32, Vec<CellKey>) {
        let cells = self
            .ordered_cells()
            .into_iter()
            .map(|c| (c.row, c.col, c.rowspan, c.colspan, c.center.map(|p| cfg.quantize_point(p))))
            .collect();
        (self.n_rows, self.n_cols, self.header_rows, cells)
    }
}

// ---------------------------------------------------------------------------
// HTML lexing

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum HtmlToken {
    Open { tag: String, attrs: Vec<(String, String)>, pos: usize },
    Close { tag: String, pos: usize },
    Text { text: String, pos: usize },
}

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
    out
}

pub fn unescape_html(s: &str) -> String {
    s.replace("&lt;", "<").replace("&gt;", ">").replace("&quot;", "\"").replace("&#39;", "'").replace("&amp;", "&")
}

fn parse_attrs(src: &str, pos: usize) -> Result<Vec<(String, String)>> {
    let mut attrs = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i] != b'=' && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let name = src[start..i].to_ascii_lowercase();
        if i >= bytes.len() || bytes[i] != b'=' {
            return Err(Error::Parse { pos: pos + start, msg: format!("attribute {name:?} without value") });
        }
        i += 1;
        let value = match bytes.get(i) {
            Some(&q @ (b'"' | b'\'')) => {
                let end = src[i + 1..]
                    .find(q as char)
                    .ok_or_else(|| Error::Parse { pos: pos + i, msg: "unterminated attribute value".into() })?;
                let v = &src[i + 1..i + 1 + end];
                i += end + 2;
                v
            }
            _ => {
                let s = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                &src[s..i]
            }
        };
        attrs.push((name, value.to_string()));
    }
    Ok(attrs)
}

pub(crate) fn lex_html(html: &str) -> Result<Vec<HtmlToken>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < html.len() {
        if html.as_bytes()[i] == b'<' {
            let end = html[i..].find('>').ok_or_else(|| Error::Parse { pos: i, msg: "unterminated tag".into() })?;
            let inner = &html[i + 1..i + end];
            if let Some(name) = inner.strip_prefix('/') {
                out.push(HtmlToken::Close { tag: name.trim().to_ascii_lowercase(), pos: i });
            } else {
                let inner = inner.trim_end_matches('/');
                let (name, rest) = match inner.find(|c: char| c.is_ascii_whitespace()) {
                    Some(s) => (&inner[..s], &inner[s..]),
                    None => (inner, ""),
                };
                let name_end = i + 1 + name.len();
                out.push(HtmlToken::Open { tag: name.to_ascii_lowercase(), attrs: parse_attrs(rest, name_end)?, pos: i });
            }
            i += end + 1;
        } else {
            let end = html[i..].find('<').map_or(html.len(), |e| i + e);
            out.push(HtmlToken::Text { text: unescape_html(&html[i..end]), pos: i });
            i = end;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Row specs and HTML table flow

#[derive(Debug, Clone, PartialEq)]
struct CellSpec {
    rowspan: u32,
    colspan: u32,
    text: String,
    center: Option<Point>,
    /// Merged `<td>[]</td>` label seen; a point must follow.
    needs_point: bool,
}

impl CellSpec {
    fn plain(rowspan: u32, colspan: u32) -> Self {
        Self { rowspan, colspan, text: String::new(), center: None, needs_point: false }
    }
}

#[derive(Debug, Clone, Default)]
struct RowSpec {
    head: bool,
    cells: Vec<CellSpec>,
}

/// Places cells left-to-right, skipping slots taken by earlier rowspans.
/// In lenient mode conflicts are repaired and reported; otherwise they fail.
fn layout(rows: Vec<RowSpec>, lenient: bool, diags: &mut Vec<Diagnostic>) -> Result<TableGrid> {
    let n_rows = rows.len();
    let header_rows = rows.iter().take_while(|r| r.head).count();
    if rows.iter().skip(header_rows).any(|r| r.head) && !lenient {
        return Err(Error::Parse { pos: 0, msg: "header rows must precede body rows".into() });
    }
    let mut occ: Vec<Vec<bool>> = vec![Vec::new(); n_rows];
    let mut cells = Vec::new();
    let fail = |msg: String| Error::Parse { pos: 0, msg };
    for (r, row) in rows.into_iter().enumerate() {
        let mut c = 0usize;
        for mut spec in row.cells {
            while occ[r].get(c).copied().unwrap_or(false) {
                c += 1;
            }
            let max_rows = n_rows - r;
            if spec.rowspan as usize > max_rows {
                if !lenient {
                    return Err(fail(format!("rowspan {} at row {r} exceeds the table", spec.rowspan)));
                }
                diags.push(Diagnostic { position: r, message: format!("rowspan clipped at row {r}") });
                spec.rowspan = max_rows as u32;
            }
            let free = |occ: &Vec<Vec<bool>>, rr: usize, cc: usize| !occ[rr].get(cc).copied().unwrap_or(false);
            // columns available on the anchor row
            let mut cs = 1;
            while cs < spec.colspan as usize && free(&occ, r, c + cs) {
                cs += 1;
            }
            let mut rs = 1;
            while rs < spec.rowspan as usize && (0..cs).all(|j| free(&occ, r + rs, c + j)) {
                rs += 1;
            }
            if cs != spec.colspan as usize || rs != spec.rowspan as usize {
                if !lenient {
                    return Err(fail(format!("cell at row {r}, column {c} overlaps a spanning cell")));
                }
                diags.push(Diagnostic { position: r, message: format!("span of cell ({r}, {c}) shrunk to avoid overlap") });
            }
            for rr in r..r + rs {
                if occ[rr].len() < c + cs {
                    occ[rr].resize(c + cs, false);
                }
                for slot in &mut occ[rr][c..c + cs] {
                    *slot = true;
                }
            }
            cells.push(TableCell {
                row: r as u32,
                col: c as u32,
                rowspan: rs as u32,
                colspan: cs as u32,
                text: spec.text,
                center: spec.center,
            });
            c += cs;
        }
    }
    let n_cols = occ.iter().map(Vec::len).max().unwrap_or(0);
    for (r, row) in occ.iter().enumerate() {
        for c in 0..n_cols {
            if !row.get(c).copied().unwrap_or(false) {
                if !lenient {
                    return Err(fail(format!("row {r} leaves column {c} uncovered")));
                }
                diags.push(Diagnostic { position: r, message: format!("empty cell inserted at ({r}, {c})") });
                cells.push(TableCell::new(r as u32, c as u32, 1, 1));
            }
        }
    }
    let grid = TableGrid { n_rows: n_rows as u32, n_cols: n_cols as u32, header_rows: header_rows as u32, cells };
    grid.validate()?;
    Ok(grid)
}

fn span_attr(attrs: &[(String, String)], name: &str, pos: usize) -> Result<u32> {
    match attrs.iter().find(|(k, _)| k == name) {
        None => Ok(1),
        Some((_, v)) => {
            v.trim().parse::<u32>().ok().filter(|&n| n >= 1).ok_or_else(|| Error::Parse { pos, msg: format!("invalid {name} value {v:?}") })
        }
    }
}

/// Parses the supported HTML subset (table/thead/tbody/tr/td with
/// rowspan/colspan and plain-text content) into a grid without centers.
pub fn html_to_grid(html: &str) -> Result<TableGrid> {
    let tokens = lex_html(html)?;
    let mut rows: Vec<RowSpec> = Vec::new();
    let mut in_table = false;
    let mut in_head = false;
    let mut row: Option<RowSpec> = None;
    let mut cell: Option<(CellSpec, usize)> = None;
    for tok in tokens {
        match tok {
            HtmlToken::Text { text, pos } => match cell.as_mut() {
                Some((c, _)) => c.text.push_str(&text),
                None if text.trim().is_empty() => {}
                None => return Err(Error::Parse { pos, msg: format!("text {text:?} outside a cell") }),
            },
            HtmlToken::Open { tag, attrs, pos } => {
                if cell.is_some() {
                    return Err(Error::Parse { pos, msg: format!("<{tag}> inside a cell") });
                }
                match tag.as_str() {
                    "table" if !in_table => in_table = true,
                    "thead" | "tbody" if in_table && row.is_none() => in_head = tag == "thead",
                    "tr" if in_table && row.is_none() => row = Some(RowSpec { head: in_head, cells: Vec::new() }),
                    "td" if row.is_some() => {
                        if let Some((k, _)) = attrs.iter().find(|(k, _)| k != "rowspan" && k != "colspan") {
                            return Err(Error::Parse { pos, msg: format!("unsupported attribute {k:?}") });
                        }
                        let spec = CellSpec::plain(span_attr(&attrs, "rowspan", pos)?, span_attr(&attrs, "colspan", pos)?);
                        cell = Some((spec, pos));
                    }
                    _ => return Err(Error::Parse { pos, msg: format!("unexpected <{tag}>") }),
                }
            }
            HtmlToken::Close { tag, pos } => match tag.as_str() {
                "td" if cell.is_some() => {
                    let (spec, _) = cell.take().expect("checked");
                    row.as_mut().expect("cells only open inside rows").cells.push(spec);
                }
                "tr" if cell.is_none() && row.is_some() => rows.push(row.take().expect("checked")),
                "thead" | "tbody" if cell.is_none() && row.is_none() => in_head = false,
                "table" if cell.is_none() && row.is_none() && in_table => in_table = false,
                _ => return Err(Error::Parse { pos, msg: format!("unexpected </{tag}>") }),
            },
        }
    }
    if let Some((_, pos)) = cell {
        return Err(Error::Parse { pos, msg: "unclosed <td>".into() });
    }
    if row.is_some() || in_table {
        return Err(Error::Parse { pos: html.len(), msg: "unclosed table element".into() });
    }
    layout(rows, false, &mut Vec::new())
}

// ---------------------------------------------------------------------------
// Structure tokens

fn check_span(n: u32, vocab: &Vocabulary) -> Result<()> {
    let max = vocab.spec().max_span;
    if n > max {
        return Err(Error::Encode(format!("span {n} exceeds max_span {max}")));
    }
    Ok(())
}

/// Structure-token strings for `g`, framed by BOS/EOS.
pub fn grid_to_structure_tokens(g: &TableGrid, vocab: &Vocabulary) -> Result<Vec<String>> {
    g.validate()?;
    let cfg = vocab.quantizer();
    let mut out = vec![BOS.to_string()];
    let ordered = g.ordered_cells();
    let header = g.header_rows;
    let sections = [("<thead>", "</thead>", 0..header), ("<tbody>", "</tbody>", header..g.n_rows)];
    for (open, close, rows) in sections {
        if rows.is_empty() {
            continue;
        }
        out.push(open.to_string());
        for r in rows {
            out.push("<tr>".into());
            for cell in ordered.iter().filter(|c| c.row == r) {
                if !cell.text.is_empty() && cell.center.is_none() {
                    return Err(Error::Encode(format!("cell ({}, {}) has text but no center", cell.row, cell.col)));
                }
                if cell.is_spanning() {
                    out.push("<td".into());
                    if cell.rowspan > 1 {
                        check_span(cell.rowspan, vocab)?;
                        out.push(rowspan_token(cell.rowspan));
                    }
                    if cell.colspan > 1 {
                        check_span(cell.colspan, vocab)?;
                        out.push(colspan_token(cell.colspan));
                    }
                    out.push(">".into());
                    out.push("</td>".into());
                } else if cell.is_filled() {
                    out.push("<td>[]</td>".into());
                } else {
                    out.push("<td></td>".into());
                }
                if let Some(c) = cell.center {
                    let q = cfg.quantize_point(c);
                    out.push(q.xt.to_string());
                    out.push(q.yt.to_string());
                }
            }
            out.push("</tr>".into());
        }
        out.push(close.to_string());
    }
    out.push(EOS.to_string());
    Ok(out)
}

/// Structure tokens as a structured sequence (prompt is BOS, k = 1).
pub fn build_table_sequence(g: &TableGrid, vocab: &Vocabulary) -> Result<StructuredSequence> {
    let toks = grid_to_structure_tokens(g, vocab)?;
    Ok(StructuredSequence { ids: vocab.encode_strings(&toks)?, k: 1, task: Task::Table })
}

fn parse_span_token(tok: &str) -> Option<(bool, u32)> {
    let (is_row, rest) = if let Some(r) = tok.strip_prefix("rowspan=\"") { (true, r) } else { (false, tok.strip_prefix("colspan=\"")?) };
    rest.strip_suffix('"')?.parse().ok().map(|n| (is_row, n))
}

/// Best-effort inverse of [`grid_to_structure_tokens`]; texts are left
/// empty and centers are filled from the inserted points.
pub fn structure_tokens_to_grid<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Parsed<TableGrid> {
    let cfg = vocab.quantizer();
    let mut diags: Vec<Diagnostic> = Vec::new();
    let mut rows: Vec<RowSpec> = Vec::new();
    let mut in_head = false;
    let mut row: Option<RowSpec> = None;
    // spanning group under construction: (spans, seen '>')
    let mut group: Option<(CellSpec, bool, usize)> = None;
    // index of the last cell in the open row that may take a point
    let mut awaiting: Option<usize> = None;
    let mut pending_x: Option<(usize, u32)> = None;
    let mut saw_eos = false;

    let d = |diags: &mut Vec<Diagnostic>, position: usize, message: String| diags.push(Diagnostic { position, message });

    let mut i = 0;
    while i < tokens.len() {
        let tok = tokens[i].as_ref();
        let pos = i;
        i += 1;
        if let Ok(v) = tok.parse::<u32>() {
            if v >= cfg.n_bins {
                d(&mut diags, pos, format!("coordinate {v} out of range dropped"));
                continue;
            }
            if let Some((spec, _, gpos)) = group.take() {
                d(&mut diags, gpos, "spanning group terminated early".into());
                push_cell(&mut row, spec, &mut awaiting, true, &mut diags, gpos);
            }
            match (pending_x.take(), awaiting) {
                (None, Some(_)) => pending_x = Some((pos, v)),
                (Some((_, x)), Some(idx)) => {
                    let q = QuantizedPoint::new(x, v);
                    if let Some(r) = row.as_mut() {
                        r.cells[idx].center = cfg.dequantize_point(q).ok();
                    }
                    awaiting = None;
                }
                (_, None) => d(&mut diags, pos, "stray coordinate dropped".into()),
            }
            continue;
        }
        if let Some((p, _)) = pending_x.take() {
            d(&mut diags, p, "unpaired coordinate dropped".into());
        }
        if let Some((spec, closed, gpos)) = group.as_mut() {
            if !*closed {
                if let Some((is_row, n)) = parse_span_token(tok) {
                    if is_row {
                        spec.rowspan = n;
                    } else {
                        spec.colspan = n;
                    }
                    continue;
                }
                if tok == ">" {
                    *closed = true;
                    continue;
                }
                d(&mut diags, *gpos, "spanning group missing '>'".into());
            } else if tok == "</td>" {
                let (spec, _, gpos) = group.take().expect("checked");
                push_cell(&mut row, spec, &mut awaiting, true, &mut diags, gpos);
                continue;
            } else {
                d(&mut diags, *gpos, "spanning group missing '</td>'".into());
            }
            let (spec, _, gpos) = group.take().expect("checked");
            push_cell(&mut row, spec, &mut awaiting, true, &mut diags, gpos);
        }
        awaiting = None;
        match tok {
            "<S>" if pos == 0 => {}
            "</S>" => {
                saw_eos = true;
                break;
            }
            "<thead>" => in_head = true,
            "</thead>" | "<tbody>" | "</tbody>" => in_head = false,
            "<tr>" => {
                if let Some(r) = row.take() {
                    d(&mut diags, pos, "row closed by <tr>".into());
                    rows.push(r);
                }
                row = Some(RowSpec { head: in_head, cells: Vec::new() });
            }
            "</tr>" => match row.take() {
                Some(r) => rows.push(r),
                None => d(&mut diags, pos, "unmatched </tr> ignored".into()),
            },
            "<td></td>" | "<td>[]</td>" => {
                let filled = tok == "<td>[]</td>";
                let spec = CellSpec { needs_point: filled, ..CellSpec::plain(1, 1) };
                push_cell(&mut row, spec, &mut awaiting, filled, &mut diags, pos);
            }
            "<td" => {
                group = Some((CellSpec::plain(1, 1), false, pos));
            }
            other => d(&mut diags, pos, format!("token {other:?} ignored")),
        }
    }
    if let Some((p, _)) = pending_x.take() {
        d(&mut diags, p, "unpaired coordinate dropped".into());
    }
    if let Some((spec, _, gpos)) = group.take() {
        d(&mut diags, gpos, "spanning group unterminated".into());
        push_cell(&mut row, spec, &mut awaiting, true, &mut diags, gpos);
    }
    if let Some(r) = row.take() {
        d(&mut diags, tokens.len(), "row closed at end of sequence".into());
        rows.push(r);
    }
    if !saw_eos {
        d(&mut diags, tokens.len(), "sequence ended without EOS".into());
    }
    for (r, row) in rows.iter().enumerate() {
        for c in &row.cells {
            if c.needs_point && c.center.is_none() {
                d(&mut diags, r, "non-empty cell without a point treated as empty".into());
            }
        }
    }
    let grid = match layout(rows, true, &mut diags) {
        Ok(g) => g,
        Err(e) => {
            d(&mut diags, 0, format!("layout failed: {e}"));
            TableGrid::empty()
        }
    };
    Parsed { value: grid, diagnostics: diags }
}

fn push_cell(
    row: &mut Option<RowSpec>,
    spec: CellSpec,
    awaiting: &mut Option<usize>,
    may_take_point: bool,
    diags: &mut Vec<Diagnostic>,
    pos: usize,
) {
    let r = row.get_or_insert_with(|| {
        diags.push(Diagnostic { position: pos, message: "cell outside a row; row opened".into() });
        RowSpec::default()
    });
    r.cells.push(spec);
    *awaiting = may_take_point.then(|| r.cells.len() - 1);
}

/// Parses structure ids (as produced by the structured decoder).
pub fn structure_ids_to_grid(ids: &[TokenId], vocab: &Vocabulary) -> Parsed<TableGrid> {
    let mut diags = Vec::new();
    let toks: Vec<String> = ids
        .iter()
        .enumerate()
        .filter_map(|(pos, &id)| match vocab.token_str(id) {
            Ok(s) if vocab.is_coord(id) || vocab.is_structural(id) || id == vocab.bos() || id == vocab.eos() => Some(s),
            _ => {
                diags.push(Diagnostic { position: pos, message: format!("token id {id} ignored") });
                None
            }
        })
        .collect();
    let mut parsed = structure_tokens_to_grid(&toks, vocab);
    diags.append(&mut parsed.diagnostics);
    parsed.diagnostics = diags;
    parsed
}

// ---------------------------------------------------------------------------
// HTML assembly and content targets

/// Canonical HTML for `g`, taking filled-cell texts from `texts` in
/// structure order.
pub fn assemble_html<S: AsRef<str>>(g: &TableGrid, texts: &[S]) -> Result<String> {
    let filled = g.filled_cells().len();
    if texts.len() != filled {
        return Err(Error::Assembly(format!("{} texts for {filled} non-empty cells", texts.len())));
    }
    let mut texts = texts.iter();
    let ordered = g.ordered_cells();
    let mut html = String::from("<table>");
    let mut emit_rows = |html: &mut String, rows: std::ops::Range<u32>| {
        for r in rows {
            html.push_str("<tr>");
            for cell in ordered.iter().filter(|c| c.row == r) {
                html.push_str("<td");
                if cell.rowspan > 1 {
                    html.push_str(&format!(" rowspan=\"{}\"", cell.rowspan));
                }
                if cell.colspan > 1 {
                    html.push_str(&format!(" colspan=\"{}\"", cell.colspan));
                }
                html.push('>');
                if cell.is_filled() {
                    html.push_str(&escape_html(texts.next().expect("count checked").as_ref()));
                }
                html.push_str("</td>");
            }
            html.push_str("</tr>");
        }
    };
    if g.header_rows > 0 {
        html.push_str("<thead>");
        emit_rows(&mut html, 0..g.header_rows);
        html.push_str("</thead>");
    }
    html.push_str("<tbody>");
    emit_rows(&mut html, g.header_rows..g.n_rows);
    html.push_str("</tbody></table>");
    Ok(html)
}

/// Canonical HTML using the grid's own cell texts.
pub fn grid_to_html(g: &TableGrid) -> String {
    let texts: Vec<&str> = g.filled_cells().iter().map(|c| c.text.as_str()).collect();
    assemble_html(g, &texts).expect("text count matches filled cells")
}

/// One content sequence per non-empty cell, in structure order.
pub fn build_table_content_targets(g: &TableGrid, vocab: &Vocabulary, limits: &CodecLimits) -> Result<Vec<StructuredSequence>> {
    g.validate()?;
    let cfg = vocab.quantizer();
    g.ordered_cells()
        .into_iter()
        .filter(|c| !c.text.is_empty())
        .map(|c| {
            let center = c.center.ok_or_else(|| Error::Encode(format!("cell ({}, {}) has text but no center", c.row, c.col)))?;
            content_sequence(cfg.quantize_point(center), &c.text, vocab, limits)
        })
        .collect()
}

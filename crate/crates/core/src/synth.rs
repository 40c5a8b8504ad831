//! Seeded synthetic corpora and the feature-grid stand-in for images.
//!
//! Words sit on whole grid cells (one cell per character, one cell high),
//! so the rendered grid carries every character identity at a known place.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::TextInstance;
use crate::error::{Error, Result};
use crate::geometry::{Point, Polygon16};
use crate::table::{TableCell, TableGrid};
use crate::vocab::{Task, FIRST_CHAR, LAST_CHAR};

pub const CHAR_FEATURES: usize = 16;
pub const EXTENT_FEATURES: usize = 4;
pub const POSITION_FEATURES: usize = 2;
pub const GRID_CHANNELS: usize = CHAR_FEATURES + EXTENT_FEATURES + POSITION_FEATURES;

const PLACEMENT_RETRIES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Cells per side.
    pub grid: u32,
    /// Words per spotting sample, entities per KIE sample, paragraphs per page.
    pub instances: (u32, u32),
    pub word_len: (u32, u32),
    pub table_rows: (u32, u32),
    pub table_cols: (u32, u32),
    pub max_span: u32,
    pub span_prob: f64,
    pub empty_cell_prob: f64,
    pub entity_classes: Vec<String>,
    pub words_per_entity: (u32, u32),
    pub lines_per_para: (u32, u32),
    pub words_per_line: (u32, u32),
    /// Task drawn per sample by [`generate_mixed_corpus`].
    pub task_mix: Vec<Task>,
    /// Characters texts are drawn from; empty means `'!'..='~'`.
    pub alphabet: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid: 32,
            instances: (3, 6),
            word_len: (2, 5),
            table_rows: (2, 5),
            table_cols: (2, 5),
            max_span: 3,
            span_prob: 0.25,
            empty_cell_prob: 0.2,
            entity_classes: ["company", "date", "address", "total"].map(String::from).to_vec(),
            words_per_entity: (1, 2),
            lines_per_para: (1, 3),
            words_per_line: (1, 3),
            task_mix: Task::ALL.to_vec(),
            alphabet: String::new(),
        }
    }
}

impl SynthConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 8 {
            return Err(Error::Config(format!("grid must be at least 8, got {}", self.grid)));
        }
        let ranges = [
            ("instances", self.instances),
            ("word_len", self.word_len),
            ("table_rows", self.table_rows),
            ("table_cols", self.table_cols),
            ("words_per_entity", self.words_per_entity),
            ("lines_per_para", self.lines_per_para),
            ("words_per_line", self.words_per_line),
        ];
        for (name, (lo, hi)) in ranges {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is empty or starts at 0")));
            }
        }
        if self.word_len.1 + 2 > self.grid {
            return Err(Error::Config("words do not fit in the grid".into()));
        }
        if self.table_cols.1 * 3 > self.grid || self.table_rows.1 * 2 > self.grid {
            return Err(Error::Config("table does not fit in the grid".into()));
        }
        if self.max_span == 0 {
            return Err(Error::Config("max_span must be positive".into()));
        }
        for p in [self.span_prob, self.empty_cell_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        if self.entity_classes.is_empty() {
            return Err(Error::Config("entity schema is empty".into()));
        }
        if self.task_mix.is_empty() {
            return Err(Error::Config("task mix is empty".into()));
        }
        if let Some(c) = self.alphabet.chars().find(|c| !(FIRST_CHAR..=LAST_CHAR).contains(c)) {
            return Err(Error::Config(format!("alphabet character {c:?} is not printable ASCII")));
        }
        Ok(())
    }

    fn alphabet_chars(&self) -> Vec<char> {
        if self.alphabet.is_empty() {
            (FIRST_CHAR..=LAST_CHAR).collect()
        } else {
            self.alphabet.chars().collect()
        }
    }
}

/// One annotated document. Prediction files use the same shape, plus `html`
/// for tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub task: Task,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<TextInstance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub html: Option<String>,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = &self.table {
            t.validate()?;
            t.validate_centers()?;
        }
        if self.task == Task::Table && self.table.is_none() {
            return Err(Error::Schema(format!("table sample {} has no table", self.id)));
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (u32, u32)) -> u32 {
    rng.gen_range(lo..=hi)
}

fn draw_word(rng: &mut impl Rng, alphabet: &[char], len: u32) -> String {
    (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
}

fn cell_box(g: u32, col: u32, row: u32, w: u32, h: u32) -> Result<Polygon16> {
    let g = g as f64;
    Polygon16::from_box(col as f64 / g, row as f64 / g, (col + w) as f64 / g, (row + h) as f64 / g)
}

/// Cell occupancy with a one-cell horizontal margin between items.
struct Occupancy {
    g: u32,
    used: Vec<bool>,
}

impl Occupancy {
    fn new(g: u32) -> Self {
        Self { g, used: vec![false; (g * g) as usize] }
    }

    fn free(&self, col: u32, row: u32, w: u32, h: u32) -> bool {
        let c0 = col.saturating_sub(1);
        let c1 = (col + w + 1).min(self.g);
        (row..row + h).all(|r| (c0..c1).all(|c| !self.used[(r * self.g + c) as usize]))
    }

    fn mark(&mut self, col: u32, row: u32, w: u32, h: u32) {
        for r in row..row + h {
            for c in col..col + w {
                self.used[(r * self.g + c) as usize] = true;
            }
        }
    }

    /// Random free top-left for a `w`×`h` block; extra rows above and below
    /// must also be clear when `row_gap`.
    fn place(&mut self, rng: &mut impl Rng, w: u32, h: u32, row_gap: bool) -> Result<(u32, u32)> {
        if w > self.g || h > self.g {
            return Err(Error::Generation(format!("{w}x{h} block does not fit")));
        }
        for _ in 0..PLACEMENT_RETRIES {
            let col = rng.gen_range(0..=self.g - w);
            let row = rng.gen_range(0..=self.g - h);
            let (r0, r1) = if row_gap { (row.saturating_sub(1), (row + h + 1).min(self.g)) } else { (row, row + h) };
            if self.free(col, r0, w, r1 - r0) {
                self.mark(col, row, w, h);
                return Ok((col, row));
            }
        }
        Err(Error::Generation(format!("could not place a {w}x{h} block after {PLACEMENT_RETRIES} attempts")))
    }
}

pub fn generate_sample(rng: &mut impl Rng, cfg: &SynthConfig, task: Task, id: impl Into<String>) -> Result<Sample> {
    cfg.validate()?;
    let alphabet = cfg.alphabet_chars();
    let g = cfg.grid;
    let mut occ = Occupancy::new(g);
    let mut instances = Vec::new();
    let mut table = None;
    match task {
        Task::Spotting => {
            for _ in 0..draw(rng, cfg.instances) {
                let len = draw(rng, cfg.word_len);
                let (col, row) = occ.place(rng, len, 1, false)?;
                instances.push(TextInstance::new(cell_box(g, col, row, len, 1)?, draw_word(rng, &alphabet, len)));
            }
        }
        Task::Kie => {
            let n = draw(rng, cfg.instances).min(cfg.entity_classes.len() as u32);
            let mut classes = cfg.entity_classes.clone();
            classes.shuffle(rng);
            for (line, class) in classes.into_iter().take(n as usize).enumerate() {
                let lens: Vec<u32> = (0..draw(rng, cfg.words_per_entity)).map(|_| draw(rng, cfg.word_len)).collect();
                let width = lens.iter().sum::<u32>() + lens.len() as u32 - 1;
                let (mut col, row) = occ.place(rng, width, 1, false)?;
                for len in lens {
                    let inst = TextInstance::new(cell_box(g, col, row, len, 1)?, draw_word(rng, &alphabet, len)).with_entity(class.clone());
                    instances.push(TextInstance { line_id: Some(line as u32), ..inst });
                    col += len + 1;
                }
            }
        }
        Task::HierText => {
            let mut line_id = 0;
            for para in 0..draw(rng, cfg.instances) {
                let lines: Vec<Vec<u32>> = (0..draw(rng, cfg.lines_per_para))
                    .map(|_| (0..draw(rng, cfg.words_per_line)).map(|_| draw(rng, cfg.word_len)).collect())
                    .collect();
                let width = lines.iter().map(|l| l.iter().sum::<u32>() + l.len() as u32 - 1).max().unwrap_or(1);
                let (col0, row0) = occ.place(rng, width, lines.len() as u32, true)?;
                for (dy, lens) in lines.iter().enumerate() {
                    let mut col = col0;
                    for &len in lens {
                        let poly = cell_box(g, col, row0 + dy as u32, len, 1)?;
                        instances.push(TextInstance::new(poly, draw_word(rng, &alphabet, len)).with_hierarchy(line_id, para));
                        col += len + 1;
                    }
                    line_id += 1;
                }
            }
        }
        Task::Table => {
            let grid = generate_table(rng, cfg, &alphabet)?;
            for c in grid.ordered_cells() {
                if let Some(center) = c.center {
                    let (x, y) = (center.x * g as f64, center.y * g as f64);
                    let len = c.text.chars().count() as f64;
                    let poly = Polygon16::from_box(
                        (x - len / 2.0) / g as f64,
                        (y - 0.5) / g as f64,
                        (x + len / 2.0) / g as f64,
                        (y + 0.5) / g as f64,
                    )?;
                    instances.push(TextInstance::new(poly, c.text.clone()));
                }
            }
            table = Some(grid);
        }
    }
    let sample = Sample { id: id.into(), task, width: g * 32, height: g * 32, instances, table, html: None };
    sample.validate()?;
    Ok(sample)
}

fn generate_table(rng: &mut impl Rng, cfg: &SynthConfig, alphabet: &[char]) -> Result<TableGrid> {
    let g = cfg.grid;
    let (rows, cols) = (draw(rng, cfg.table_rows), draw(rng, cfg.table_cols));
    let (cw, rh) = (g / cols, g / rows);
    let mut used = vec![false; (rows * cols) as usize];
    let mut cells = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if used[(r * cols + c) as usize] {
                continue;
            }
            let free_run = (c..cols).take_while(|&k| !used[(r * cols + k) as usize]).count() as u32;
            let span = |limit: u32, rng: &mut dyn rand::RngCore| {
                if limit > 1 && cfg.max_span > 1 && rng.gen_bool(cfg.span_prob) {
                    rng.gen_range(2..=limit.min(cfg.max_span))
                } else {
                    1
                }
            };
            let rowspan = span(rows - r, rng);
            let colspan = span(free_run, rng);
            for rr in r..r + rowspan {
                for cc in c..c + colspan {
                    used[(rr * cols + cc) as usize] = true;
                }
            }
            let mut cell = TableCell::new(r, c, rowspan, colspan);
            if !rng.gen_bool(cfg.empty_cell_prob) {
                let room = (cw * colspan).saturating_sub(2).max(1);
                let len = draw(rng, cfg.word_len).min(room);
                let text = draw_word(rng, alphabet, len);
                // word sits one cell in from the left, on the middle row of the span
                let x = (c * cw + 1) as f64 + len as f64 / 2.0;
                let y = (r * rh + rh * rowspan / 2) as f64 + 0.5;
                cell = cell.with_text(text, Point::new(x / g as f64, y / g as f64)?);
            }
            cells.push(cell);
        }
    }
    let header_rows = if rows > 1 && rng.gen_bool(0.5) { 1 } else { 0 };
    Ok(TableGrid { n_rows: rows, n_cols: cols, header_rows, cells })
}

fn corpus_id(task: Task, i: usize) -> String {
    format!("{task}-{i:05}")
}

/// `n` samples of one task; a pure function of `(cfg, task, n)`.
pub fn generate_corpus(cfg: &SynthConfig, task: Task, n: usize) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..n).map(|i| generate_sample(&mut rng, cfg, task, corpus_id(task, i))).collect()
}

/// `n` samples with tasks drawn from `cfg.task_mix`.
pub fn generate_mixed_corpus(cfg: &SynthConfig, n: usize) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..n)
        .map(|i| {
            let task = *cfg.task_mix.choose(&mut rng).unwrap();
            generate_sample(&mut rng, cfg, task, corpus_id(task, i))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Feature grid

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major `height × width × channels`.
    pub data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn at(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    fn set(&mut self, y: usize, x: usize, ch: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + ch] = v;
    }

    /// Whether any non-positional channel of a cell is non-zero.
    pub fn is_marked(&self, y: usize, x: usize) -> bool {
        (0..CHAR_FEATURES + EXTENT_FEATURES).any(|ch| self.at(y, x, ch) != 0.0)
    }
}

/// Deterministic ±1 code of a character.
pub fn char_signature(c: char) -> [f64; CHAR_FEATURES] {
    // splitmix64 finalizer over the code point
    let mut z = (c as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    std::array::from_fn(|i| if z >> i & 1 == 1 { 1.0 } else { -1.0 })
}

/// Stamps every instance onto the cells its box covers: the signature of
/// the character at that offset, then occupancy, start, end and relative
/// offset channels. The last two channels hold the cell position.
pub fn render_feature_grid(sample: &Sample, grid: u32) -> ImageGrid {
    let g = grid as usize;
    let mut img = ImageGrid::zeros(g, g, GRID_CHANNELS);
    for y in 0..g {
        for x in 0..g {
            img.set(y, x, GRID_CHANNELS - 2, (x as f64 + 0.5) / g as f64);
            img.set(y, x, GRID_CHANNELS - 1, (y as f64 + 0.5) / g as f64);
        }
    }
    let to_cells = |a: f64, b: f64| {
        let lo = ((a * g as f64) + 1e-9).floor().max(0.0) as usize;
        let hi = ((b * g as f64) - 1e-9).ceil().min(g as f64) as usize;
        (lo, hi.max(lo + 1).min(g))
    };
    for inst in &sample.instances {
        let (x0, y0, x1, y1) = inst.polygon.bbox();
        let (c0, c1) = to_cells(x0, x1);
        let (r0, r1) = to_cells(y0, y1);
        let chars: Vec<char> = inst.text.chars().collect();
        let w = c1 - c0;
        for y in r0..r1 {
            for (i, x) in (c0..c1).enumerate() {
                if let Some(&ch) = chars.get(i) {
                    for (k, v) in char_signature(ch).into_iter().enumerate() {
                        img.set(y, x, k, v);
                    }
                }
                let base = CHAR_FEATURES;
                img.set(y, x, base, 1.0);
                img.set(y, x, base + 1, (i == 0) as u8 as f64);
                img.set(y, x, base + 2, (i + 1 == w) as u8 as f64);
                img.set(y, x, base + 3, (i as f64 + 0.5) / w as f64);
            }
        }
    }
    img
}

// ---------------------------------------------------------------------------
// JSONL

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads one sample per non-blank line; errors carry the 1-based line number.
pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let jsonl_err = |msg: String| Error::Jsonl { path: path.display().to_string(), line: i + 1, msg };
        let sample: Sample = serde_json::from_str(&line).map_err(|e| jsonl_err(e.to_string()))?;
        sample.validate().map_err(|e| jsonl_err(e.to_string()))?;
        samples.push(sample);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::QuantizerConfig;

    #[test]
    fn deterministic_and_in_range() {
        let cfg = SynthConfig::default().with_seed(11);
        for task in Task::ALL {
            let a = generate_corpus(&cfg, task, 20).unwrap();
            let b = generate_corpus(&cfg, task, 20).unwrap();
            assert_eq!(a, b);
            if task == Task::Spotting {
                for s in &a {
                    let n = s.instances.len() as u32;
                    assert!((cfg.instances.0..=cfg.instances.1).contains(&n));
                }
            }
        }
    }

    #[test]
    fn spotting_boxes_are_disjoint() {
        let cfg = SynthConfig::default().with_seed(3);
        for s in generate_corpus(&cfg, Task::Spotting, 30).unwrap() {
            for (i, a) in s.instances.iter().enumerate() {
                for b in &s.instances[i + 1..] {
                    let (ax0, ay0, ax1, ay1) = a.polygon.bbox();
                    let (bx0, by0, bx1, by1) = b.polygon.bbox();
                    assert!(ax1 <= bx0 || bx1 <= ax0 || ay1 <= by0 || by1 <= ay0);
                }
            }
        }
    }

    #[test]
    fn placement_failure_is_reported() {
        let cfg = SynthConfig {
            grid: 8,
            instances: (60, 60),
            word_len: (5, 6),
            table_cols: (1, 2),
            table_rows: (1, 2),
            ..SynthConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(generate_sample(&mut rng, &cfg, Task::Spotting, "x"), Err(Error::Generation(_))));
    }

    #[test]
    fn empty_sample_grid_has_only_positions() {
        let s = Sample { id: "e".into(), task: Task::Spotting, width: 1024, height: 1024, instances: vec![], table: None, html: None };
        let img = render_feature_grid(&s, 32);
        for y in 0..32 {
            for x in 0..32 {
                assert!(!img.is_marked(y, x));
                assert!(img.at(y, x, GRID_CHANNELS - 1) > 0.0);
            }
        }
    }

    #[test]
    fn disjoint_instances_have_disjoint_support() {
        let a = TextInstance::new(cell_box(32, 2, 3, 4, 1).unwrap(), "abcd");
        let b = TextInstance::new(cell_box(32, 10, 20, 3, 1).unwrap(), "xyz");
        let mk = |instances| Sample { id: "d".into(), task: Task::Spotting, width: 1024, height: 1024, instances, table: None, html: None };
        let ga = render_feature_grid(&mk(vec![a.clone()]), 32);
        let gb = render_feature_grid(&mk(vec![b.clone()]), 32);
        let support = |g: &ImageGrid| -> Vec<(usize, usize)> {
            (0..32).flat_map(|y| (0..32).map(move |x| (y, x))).filter(|&(y, x)| g.is_marked(y, x)).collect()
        };
        let (sa, sb) = (support(&ga), support(&gb));
        assert_eq!(sa.len(), 4);
        assert_eq!(sb.len(), 3);
        assert!(sa.iter().all(|p| !sb.contains(p)));
        let ab = render_feature_grid(&mk(vec![a.clone(), b.clone()]), 32);
        let ba = render_feature_grid(&mk(vec![b, a]), 32);
        assert_eq!(ab, ba);
        assert_eq!(ga.at(3, 2, 0), char_signature('a')[0]);
    }

    #[test]
    fn signatures_are_distinct() {
        let sigs: Vec<_> = (FIRST_CHAR..=LAST_CHAR).map(char_signature).collect();
        for i in 0..sigs.len() {
            for j in i + 1..sigs.len() {
                assert_ne!(sigs[i], sigs[j]);
            }
        }
    }

    #[test]
    fn jsonl_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let cfg = SynthConfig::default().with_seed(5);
        let corpus = generate_mixed_corpus(&cfg, 24).unwrap();
        write_jsonl(&path, &corpus).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back, corpus);
        let q = QuantizerConfig::default();
        for (a, b) in corpus.iter().zip(&back) {
            for (x, y) in a.instances.iter().zip(&b.instances) {
                assert_eq!(x.polygon.quantized(q), y.polygon.quantized(q));
            }
        }

        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = lines[2].replacen("\"instances\"", "\"instancez\"", 1);
        std::fs::write(&path, lines.join("\n")).unwrap();
        let err = read_jsonl(&path).unwrap_err().to_string();
        assert!(err.contains("line 3:"), "{err}");
        assert!(err.contains("instances"), "{err}");
    }
}

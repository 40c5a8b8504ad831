//! Spatial-window and prefix-window prompts, their samplers, and the
//! instance filters that turn a full annotation into a prompted target.
//!
//! The spatial sampler follows the three-mode recipe exactly: 40% full
//! window, 30% a window from a fixed set of grid layouts, 30% a random
//! window whose pre-clamp extent is at least a third of the image per axis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::TextInstance;
use crate::error::{Error, Result};
use crate::geometry::{center_of, QuantizedPoint, QuantizerConfig};
use crate::vocab::{Vocabulary, FIRST_CHAR, LAST_CHAR};

/// Probability of the full-image window.
pub const DEFAULT_WINDOW_PROB: f64 = 0.4;
/// Cumulative probability bound of the fixed-layout mode.
pub const FIXED_MODE_BOUND: f64 = 0.7;
/// Probability of the full-dictionary prefix window.
pub const DEFAULT_PREFIX_PROB: f64 = 0.4;

/// Grid layouts `(blocks along x, blocks along y)` of the fixed mode.
pub const FIXED_LAYOUTS: [(u32, u32); 8] = [(3, 3), (3, 1), (1, 3), (3, 2), (2, 3), (2, 2), (2, 1), (1, 2)];

/// Inclusive rectangle of coordinate tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start_x: u32,
    pub start_y: u32,
    pub end_x: u32,
    pub end_y: u32,
}

impl Window {
    pub fn new(start_x: u32, start_y: u32, end_x: u32, end_y: u32, cfg: QuantizerConfig) -> Result<Self> {
        let max = cfg.max_token();
        if start_x > end_x || start_y > end_y || end_x > max || end_y > max {
            return Err(Error::Domain(format!("invalid window [{start_x}, {start_y}, {end_x}, {end_y}] for n_bins {}", cfg.n_bins)));
        }
        Ok(Self { start_x, start_y, end_x, end_y })
    }

    pub fn full(cfg: QuantizerConfig) -> Self {
        Self { start_x: 0, start_y: 0, end_x: cfg.max_token(), end_y: cfg.max_token() }
    }

    pub fn contains(&self, p: QuantizedPoint) -> bool {
        (self.start_x..=self.end_x).contains(&p.xt) && (self.start_y..=self.end_y).contains(&p.yt)
    }

    pub fn tokens(&self) -> [u32; 4] {
        [self.start_x, self.start_y, self.end_x, self.end_y]
    }
}

/// Inclusive range of the character dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixWindow {
    pub first: char,
    pub last: char,
}

impl PrefixWindow {
    pub fn new(first: char, last: char, vocab: &Vocabulary) -> Result<Self> {
        match (vocab.char_position(first), vocab.char_position(last)) {
            (Some(a), Some(b)) if a <= b => Ok(Self { first, last }),
            _ => Err(Error::Domain(format!("invalid prefix window ({first:?}, {last:?})"))),
        }
    }

    pub fn full() -> Self {
        Self { first: FIRST_CHAR, last: LAST_CHAR }
    }

    pub fn contains(&self, c: char, vocab: &Vocabulary) -> bool {
        match (vocab.char_position(c), vocab.char_position(self.first), vocab.char_position(self.last)) {
            (Some(p), Some(a), Some(b)) => a <= p && p <= b,
            _ => false,
        }
    }
}

/// The raw outcome of one spatial draw, before clamping to a [`Window`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialDraw {
    Default,
    /// Index into [`enumerate_fixed_windows`].
    Fixed {
        index: usize,
    },
    Random {
        start_x: u32,
        start_y: u32,
        rect_w: u32,
        rect_h: u32,
    },
}

impl SpatialDraw {
    pub fn window(&self, cfg: QuantizerConfig) -> Window {
        let max = cfg.max_token();
        match *self {
            SpatialDraw::Default => Window::full(cfg),
            SpatialDraw::Fixed { index } => enumerate_fixed_windows(cfg)[index],
            SpatialDraw::Random { start_x, start_y, rect_w, rect_h } => {
                Window { start_x, start_y, end_x: (start_x + rect_w).min(max), end_y: (start_y + rect_h).min(max) }
            }
        }
    }
}

/// All windows of the fixed mode, layout by layout, x-blocks outer.
pub fn enumerate_fixed_windows(cfg: QuantizerConfig) -> Vec<Window> {
    let n = cfg.n_bins;
    let max = cfg.max_token();
    let mut out = Vec::new();
    for &(num_x, num_y) in &FIXED_LAYOUTS {
        let inter_x = (n / num_x).min(max);
        let inter_y = (n / num_y).min(max);
        for i in 0..num_x {
            for j in 0..num_y {
                let start_x = i * inter_x;
                let start_y = j * inter_y;
                out.push(Window { start_x, start_y, end_x: (start_x + inter_x).min(max), end_y: (start_y + inter_y).min(max) });
            }
        }
    }
    out
}

pub fn sample_spatial_draw<R: Rng + ?Sized>(rng: &mut R, cfg: QuantizerConfig) -> SpatialDraw {
    let u: f64 = rng.gen();
    if u < DEFAULT_WINDOW_PROB {
        SpatialDraw::Default
    } else if u < FIXED_MODE_BOUND {
        let count: usize = FIXED_LAYOUTS.iter().map(|&(x, y)| (x * y) as usize).sum();
        SpatialDraw::Fixed { index: rng.gen_range(0..count) }
    } else {
        let inter = cfg.n_bins / 3;
        let max = cfg.max_token();
        SpatialDraw::Random {
            start_x: rng.gen_range(0..=inter * 2),
            start_y: rng.gen_range(0..=inter * 2),
            rect_w: rng.gen_range(inter..=max),
            rect_h: rng.gen_range(inter..=max),
        }
    }
}

pub fn sample_spatial_window<R: Rng + ?Sized>(rng: &mut R, cfg: QuantizerConfig) -> Window {
    sample_spatial_draw(rng, cfg).window(cfg)
}

pub fn sample_prefix_window<R: Rng + ?Sized>(rng: &mut R, vocab: &Vocabulary) -> PrefixWindow {
    if rng.gen::<f64>() < DEFAULT_PREFIX_PROB {
        return PrefixWindow::full();
    }
    let n = vocab.chars().len();
    let p = rng.gen_range(0..n);
    let q = rng.gen_range(0..n);
    let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
    PrefixWindow { first: vocab.chars()[lo], last: vocab.chars()[hi] }
}

pub fn filter_by_spatial(instances: &[TextInstance], w: &Window, cfg: QuantizerConfig) -> Vec<TextInstance> {
    instances.iter().filter(|inst| w.contains(cfg.quantize_point(center_of(&inst.polygon)))).cloned().collect()
}

pub fn filter_by_prefix(instances: &[TextInstance], pw: &PrefixWindow, vocab: &Vocabulary) -> Vec<TextInstance> {
    instances.iter().filter(|inst| inst.text.chars().next().is_some_and(|c| pw.contains(c, vocab))).cloned().collect()
}

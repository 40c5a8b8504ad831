//! Normalized coordinates, bin quantization, 16-point polygons and polygon IoU.
//!
//! Every coordinate in the toolkit is normalized to the image width/height and
//! quantized into `n_bins` discrete tokens. Dequantization returns bin centers,
//! so `quantize(dequantize(t)) == t` for every token.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_N_BINS: u32 = 1000;
pub const POLYGON_POINTS: usize = 16;

/// Side length of the raster used by [`polygon_iou`].
const IOU_RASTER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub n_bins: u32,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self { n_bins: DEFAULT_N_BINS }
    }
}

impl QuantizerConfig {
    pub fn new(n_bins: u32) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::Config(format!("n_bins must be >= 2, got {n_bins}")));
        }
        Ok(Self { n_bins })
    }

    pub fn max_token(&self) -> u32 {
        self.n_bins - 1
    }

    pub fn quantize(&self, x: f64) -> Result<u32> {
        quantize_coord(x, *self)
    }

    pub fn quantize_point(&self, p: Point) -> QuantizedPoint {
        // Point invariants already hold, so quantization cannot fail.
        QuantizedPoint { xt: clamp_bin(p.x, self.n_bins), yt: clamp_bin(p.y, self.n_bins) }
    }

    pub fn dequantize_point(&self, q: QuantizedPoint) -> Result<Point> {
        Ok(Point { x: dequantize_coord(q.xt, *self)?, y: dequantize_coord(q.yt, *self)? })
    }
}

fn clamp_bin(x: f64, n_bins: u32) -> u32 {
    let t = (x * n_bins as f64).floor();
    t.clamp(0.0, (n_bins - 1) as f64) as u32
}

/// Maps a normalized coordinate to its bin: `clamp(floor(x * n_bins), 0, n_bins - 1)`.
pub fn quantize_coord(x: f64, cfg: QuantizerConfig) -> Result<u32> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("coordinate {x} outside [0, 1]")));
    }
    Ok(clamp_bin(x, cfg.n_bins))
}

/// Bin-center inverse of [`quantize_coord`].
pub fn dequantize_coord(t: u32, cfg: QuantizerConfig) -> Result<f64> {
    if t >= cfg.n_bins {
        return Err(Error::Domain(format!("coordinate token {t} outside [0, {}]", cfg.n_bins - 1)));
    }
    Ok((t as f64 + 0.5) / cfg.n_bins as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!("point ({x}, {y}) outside the unit square")));
        }
        Ok(Self { x, y })
    }
}

impl TryFrom<[f64; 2]> for Point {
    type Error = Error;

    fn try_from([x, y]: [f64; 2]) -> Result<Self> {
        Point::new(x, y)
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuantizedPoint {
    pub xt: u32,
    pub yt: u32,
}

impl QuantizedPoint {
    pub fn new(xt: u32, yt: u32) -> Self {
        Self { xt, yt }
    }
}

/// A text contour traced by exactly sixteen points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Polygon16 {
    points: [Point; POLYGON_POINTS],
}

impl Polygon16 {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let n = points.len();
        let points: [Point; POLYGON_POINTS] =
            points.try_into().map_err(|_| Error::Domain(format!("polygon needs {POLYGON_POINTS} points, got {n}")))?;
        Ok(Self { points })
    }

    /// Samples an axis-aligned box clockwise from its top-left corner, four
    /// points per side.
    pub fn from_box(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if x0 > x1 || y0 > y1 {
            return Err(Error::Domain(format!("inverted box ({x0}, {y0}, {x1}, {y1})")));
        }
        let (w, h) = (x1 - x0, y1 - y0);
        let mut pts = Vec::with_capacity(POLYGON_POINTS);
        for i in 0..4 {
            pts.push(Point::new(x0 + w * i as f64 / 4.0, y0)?);
        }
        for i in 0..4 {
            pts.push(Point::new(x1, y0 + h * i as f64 / 4.0)?);
        }
        for i in 0..4 {
            pts.push(Point::new(x1 - w * i as f64 / 4.0, y1)?);
        }
        for i in 0..4 {
            pts.push(Point::new(x0, y1 - h * i as f64 / 4.0)?);
        }
        Self::new(pts)
    }

    pub fn points(&self) -> &[Point; POLYGON_POINTS] {
        &self.points
    }

    pub fn quantized(&self, cfg: QuantizerConfig) -> [QuantizedPoint; POLYGON_POINTS] {
        self.points.map(|p| cfg.quantize_point(p))
    }

    pub fn from_quantized(q: &[QuantizedPoint], cfg: QuantizerConfig) -> Result<Self> {
        let pts = q.iter().map(|&p| cfg.dequantize_point(p)).collect::<Result<Vec<_>>>()?;
        Self::new(pts)
    }

    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            b.0 = b.0.min(p.x);
            b.1 = b.1.min(p.y);
            b.2 = b.2.max(p.x);
            b.3 = b.3.max(p.y);
        }
        b
    }
}

impl TryFrom<Vec<Point>> for Polygon16 {
    type Error = Error;

    fn try_from(v: Vec<Point>) -> Result<Self> {
        Polygon16::new(v)
    }
}

impl From<Polygon16> for Vec<Point> {
    fn from(p: Polygon16) -> Self {
        p.points.to_vec()
    }
}

/// Bounding-box center of the polygon.
pub fn center_of(poly: &Polygon16) -> Point {
    let (x0, y0, x1, y1) = poly.bbox();
    Point { x: (x0 + x1) / 2.0, y: (y0 + y1) / 2.0 }
}

/// Stable raster-scan permutation: sort by quantized center y, then x, then index.
pub fn raster_order(centers: &[Point], cfg: QuantizerConfig) -> Vec<usize> {
    let keys: Vec<QuantizedPoint> = centers.iter().map(|&c| cfg.quantize_point(c)).collect();
    raster_order_quantized(&keys)
}

pub fn raster_order_quantized(centers: &[QuantizedPoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by_key(|&i| (centers[i].yt, centers[i].xt, i));
    order
}

/// Pixel spans `[lo, hi)` covered on one raster row under even-odd fill.
fn row_spans(poly: &Polygon16, y: f64, out: &mut Vec<(usize, usize)>) {
    out.clear();
    let pts = poly.points();
    let mut xs: Vec<f64> = Vec::with_capacity(POLYGON_POINTS);
    for i in 0..POLYGON_POINTS {
        let a = pts[i];
        let b = pts[(i + 1) % POLYGON_POINTS];
        if (a.y <= y) != (b.y <= y) {
            xs.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
        }
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let g = IOU_RASTER as f64;
    // pixel i is inside when its center (i + 0.5) / g lies in [a, b)
    let to_px = |x: f64| ((x * g - 0.5).ceil().max(0.0) as usize).min(IOU_RASTER);
    for pair in xs.chunks_exact(2) {
        let (lo, hi) = (to_px(pair[0]), to_px(pair[1]));
        if hi > lo {
            out.push((lo, hi));
        }
    }
}

fn span_len(spans: &[(usize, usize)]) -> usize {
    spans.iter().map(|&(a, b)| b - a).sum()
}

fn span_intersection(a: &[(usize, usize)], b: &[(usize, usize)]) -> usize {
    let (mut i, mut j, mut total) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            total += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// Intersection-over-union of two polygons rasterized on a fixed
/// 1000x1000 grid with even-odd fill. Returns 0 when the union is empty.
pub fn polygon_iou(a: &Polygon16, b: &Polygon16) -> f64 {
    let (mut sa, mut sb) = (Vec::new(), Vec::new());
    let (mut inter, mut area_a, mut area_b) = (0usize, 0usize, 0usize);
    for row in 0..IOU_RASTER {
        let y = (row as f64 + 0.5) / IOU_RASTER as f64;
        row_spans(a, y, &mut sa);
        row_spans(b, y, &mut sb);
        area_a += span_len(&sa);
        area_b += span_len(&sb);
        inter += span_intersection(&sa, &sb);
    }
    let union = area_a + area_b - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q() -> QuantizerConfig {
        QuantizerConfig::default()
    }

    fn boxed(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon16 {
        Polygon16::from_box(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_coord(0.0, q()).unwrap(), 0);
        assert_eq!(quantize_coord(1.0, q()).unwrap(), 999);
        assert_eq!(quantize_coord(0.3335, q()).unwrap(), 333);
        assert!(quantize_coord(-0.01, q()).is_err());
        assert!(quantize_coord(1.01, q()).is_err());
        assert!(quantize_coord(f64::NAN, q()).is_err());
    }

    #[test]
    fn dequantize_examples() {
        assert!((dequantize_coord(0, q()).unwrap() - 0.0005).abs() < 1e-15);
        assert!((dequantize_coord(999, q()).unwrap() - 0.9995).abs() < 1e-15);
        assert!(dequantize_coord(1000, q()).is_err());
        for t in 0..1000 {
            let x = dequantize_coord(t, q()).unwrap();
            assert_eq!(quantize_coord(x, q()).unwrap(), t);
        }
    }

    #[test]
    fn n_bins_must_be_at_least_two() {
        assert!(QuantizerConfig::new(1).is_err());
        assert!(QuantizerConfig::new(2).is_ok());
    }

    #[test]
    fn polygon_length_is_checked() {
        let pts = vec![Point::new(0.1, 0.1).unwrap(); 15];
        assert!(Polygon16::new(pts).is_err());
        assert!(Point::new(1.2, 0.0).is_err());
    }

    #[test]
    fn center_examples() {
        let p = Point::new(0.5, 0.5).unwrap();
        let degenerate = Polygon16::new(vec![p; 16]).unwrap();
        assert_eq!(center_of(&degenerate), p);

        let c = center_of(&boxed(0.2, 0.2, 0.4, 0.6));
        assert!((c.x - 0.3).abs() < 1e-12 && (c.y - 0.4).abs() < 1e-12);

        let c = center_of(&boxed(0.0, 0.0, 1.0, 1.0));
        assert_eq!((c.x, c.y), (0.5, 0.5));
    }

    #[test]
    fn from_box_is_clockwise_from_top_left() {
        let poly = boxed(0.0, 0.0, 0.4, 0.8);
        let pts = poly.points();
        assert_eq!((pts[0].x, pts[0].y), (0.0, 0.0));
        assert_eq!((pts[4].x, pts[4].y), (0.4, 0.0));
        assert_eq!((pts[8].x, pts[8].y), (0.4, 0.8));
        assert_eq!((pts[12].x, pts[12].y), (0.0, 0.8));
        assert!((pts[1].x - 0.1).abs() < 1e-12);
    }

    #[test]
    fn raster_examples() {
        let c = |x, y| Point::new(x, y).unwrap();
        assert_eq!(raster_order(&[c(0.9, 0.1), c(0.1, 0.9)], q()), vec![0, 1]);
        assert_eq!(raster_order(&[c(0.5, 0.5), c(0.5, 0.5), c(0.5, 0.5)], q()), vec![0, 1, 2]);
        assert_eq!(raster_order(&[c(0.3, 0.3)], q()), vec![0]);
        assert_eq!(raster_order(&[c(0.6, 0.2), c(0.2, 0.2)], q()), vec![1, 0]);
    }

    #[test]
    fn iou_examples() {
        let a = boxed(0.1, 0.1, 0.6, 0.4);
        assert_eq!(polygon_iou(&a, &a), 1.0);
        assert_eq!(polygon_iou(&boxed(0.0, 0.0, 0.2, 0.2), &boxed(0.5, 0.5, 0.9, 0.9)), 0.0);
        let iou = polygon_iou(&boxed(0.0, 0.0, 0.5, 1.0), &boxed(0.25, 0.0, 0.75, 1.0));
        assert!((iou - 1.0 / 3.0).abs() <= 0.01, "{iou}");
        let p = Point::new(0.5, 0.5).unwrap();
        let d = Polygon16::new(vec![p; 16]).unwrap();
        assert_eq!(polygon_iou(&d, &d), 0.0);
    }

    proptest! {
        #[test]
        fn dequantize_quantize_error_is_half_bin(x in 0.0f64..=1.0) {
            let t = quantize_coord(x, q()).unwrap();
            let back = dequantize_coord(t, q()).unwrap();
            prop_assert!((back - x).abs() <= 0.5 / 1000.0 + 1e-12);
        }

        #[test]
        fn quantize_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize_coord(lo, q()).unwrap() <= quantize_coord(hi, q()).unwrap());
        }

        #[test]
        fn raster_order_is_idempotent_permutation(pts in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 0..20)) {
            let centers: Vec<Point> = pts.iter().map(|&(x, y)| Point::new(x, y).unwrap()).collect();
            let order = raster_order(&centers, q());
            let mut sorted = order.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..centers.len()).collect::<Vec<_>>());
            let reordered: Vec<Point> = order.iter().map(|&i| centers[i]).collect();
            prop_assert_eq!(raster_order(&reordered, q()), (0..centers.len()).collect::<Vec<_>>());
        }

        #[test]
        fn iou_symmetric_and_bounded(
            a in (0.0f64..0.5, 0.0f64..0.5, 0.5f64..=1.0, 0.5f64..=1.0),
            b in (0.0f64..0.5, 0.0f64..0.5, 0.5f64..=1.0, 0.5f64..=1.0),
        ) {
            let pa = boxed(a.0, a.1, a.2, a.3);
            let pb = boxed(b.0, b.1, b.2, b.3);
            let ab = polygon_iou(&pa, &pb);
            prop_assert_eq!(ab, polygon_iou(&pb, &pa));
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}

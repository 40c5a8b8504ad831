//! Random tilings of small tables for pipeline properties.

use rand::Rng;
use vstp_core::table::{TableCell, TableGrid};
use vstp_core::Point;

pub fn random_grid(rng: &mut impl Rng, max_rows: u32, max_cols: u32, max_span: u32) -> TableGrid {
    let rows = rng.gen_range(1..=max_rows);
    let cols = rng.gen_range(1..=max_cols);
    let mut taken = vec![vec![false; cols as usize]; rows as usize];
    let mut cells = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if taken[r as usize][c as usize] {
                continue;
            }
            let run = (c..cols).take_while(|&k| !taken[r as usize][k as usize]).count() as u32;
            let rs = rng.gen_range(1..=(rows - r).min(max_span));
            let cs = rng.gen_range(1..=run.min(max_span));
            for row in taken.iter_mut().skip(r as usize).take(rs as usize) {
                for slot in row.iter_mut().skip(c as usize).take(cs as usize) {
                    *slot = true;
                }
            }
            let mut cell = TableCell::new(r, c, rs, cs);
            if rng.gen_bool(0.7) {
                let len = rng.gen_range(1..=4);
                let text: String = (0..len).map(|_| rng.gen_range('!'..='~')).collect();
                let x = (c as f64 + cs as f64 / 2.0) / cols as f64;
                let y = (r as f64 + rs as f64 / 2.0) / rows as f64;
                cell = cell.with_text(text, Point::new(x.min(0.999), y.min(0.999)).unwrap());
            }
            cells.push(cell);
        }
    }
    TableGrid { n_rows: rows, n_cols: cols, header_rows: rng.gen_range(0..=rows.min(1)), cells }
}

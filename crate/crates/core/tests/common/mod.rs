//! Random table generation shared by the integration tests.
#![allow(dead_code)]

use lattice::table::{Cell, Table};
use rand::Rng;

/// Small alphabet so duplicate cell contents are common.
const WORDS: &[&str] = &["a", "b", "c", "d", "a b", "7"];

/// A valid random table of at most `max_rows x max_cols` with header lines
/// and 1..=4 highlighted non-corner cells.
pub fn random_table<R: Rng>(rng: &mut R, max_rows: usize, max_cols: usize) -> Table {
    loop {
        let n_rows = rng.gen_range(1..=max_rows);
        let n_cols = rng.gen_range(1..=max_cols);
        let hr: Vec<bool> = (0..n_rows).map(|_| rng.gen_bool(0.2)).collect();
        let hc: Vec<bool> = (0..n_cols).map(|_| rng.gen_bool(0.2)).collect();
        let rows: Vec<Vec<Cell>> = (0..n_rows)
            .map(|r| {
                (0..n_cols)
                    .map(|c| {
                        let w = WORDS[rng.gen_range(0..WORDS.len())];
                        match (hr[r], hc[c]) {
                            (true, true) => Cell::data(w),
                            (true, false) => Cell::col_header(w),
                            (false, true) => Cell::row_header(w),
                            (false, false) => Cell::data(w),
                        }
                    })
                    .collect()
            })
            .collect();
        let candidates: Vec<(usize, usize)> = (0..n_rows)
            .flat_map(|r| (0..n_cols).map(move |c| (r, c)))
            .filter(|&(r, c)| !(hr[r] && hc[c]))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let k = rng.gen_range(1..=candidates.len().min(4));
        let hl: Vec<(usize, usize)> = rand::seq::index::sample(rng, candidates.len(), k)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        if let Ok(t) = Table::new("page one", "part two", rows, hl) {
            return t;
        }
    }
}

//! Tables and the content-invariant transformation group.
//!
//! A [`Table`] is a rectangular grid of [`Cell`]s. Header cells are flagged per
//! cell, but the flags have to agree line by line: a row containing a column
//! header is a *header row* and every non-corner cell of it is a column
//! header; symmetrically for header columns. Cells at the intersection of a
//! header row and a header column (corners) carry no flag.
//!
//! Transpose, row shuffle and column shuffle only move data lines around, so
//! the set of (cell, row headers, column headers) associations they produce
//! is the same as the input's. Header lines stay where they are.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(row, col)`.
pub type Coord = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Cell {
    pub content: String,
    #[serde(rename = "rh", default)]
    pub is_row_header: bool,
    #[serde(rename = "ch", default)]
    pub is_col_header: bool,
}

impl Cell {
    pub fn data(content: impl Into<String>) -> Self {
        Cell {
            content: content.into(),
            is_row_header: false,
            is_col_header: false,
        }
    }

    pub fn row_header(content: impl Into<String>) -> Self {
        Cell {
            content: content.into(),
            is_row_header: true,
            is_col_header: false,
        }
    }

    pub fn col_header(content: impl Into<String>) -> Self {
        Cell {
            content: content.into(),
            is_row_header: false,
            is_col_header: true,
        }
    }

    pub fn is_header(&self) -> bool {
        self.is_row_header || self.is_col_header
    }

    fn transposed(&self) -> Self {
        Cell {
            content: self.content.clone(),
            is_row_header: self.is_col_header,
            is_col_header: self.is_row_header,
        }
    }
}

/// A validated table. Construct with [`Table::new`] or deserialize from JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct Table {
    page_title: String,
    section_title: String,
    rows: Vec<Vec<Cell>>,
    highlighted: BTreeSet<Coord>,
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    #[serde(default)]
    page_title: String,
    #[serde(default)]
    section_title: String,
    rows: Vec<Vec<Cell>>,
    #[serde(default)]
    highlighted: Vec<[usize; 2]>,
}

impl TryFrom<RawTable> for Table {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        Table::new(
            raw.page_title,
            raw.section_title,
            raw.rows,
            raw.highlighted.into_iter().map(|[r, c]| (r, c)),
        )
    }
}

impl From<Table> for RawTable {
    fn from(t: Table) -> Self {
        RawTable {
            page_title: t.page_title,
            section_title: t.section_title,
            rows: t.rows,
            highlighted: t.highlighted.into_iter().map(|(r, c)| [r, c]).collect(),
        }
    }
}

impl Table {
    pub fn new(
        page_title: impl Into<String>,
        section_title: impl Into<String>,
        rows: Vec<Vec<Cell>>,
        highlighted: impl IntoIterator<Item = Coord>,
    ) -> Result<Self> {
        let table = Table {
            page_title: page_title.into(),
            section_title: section_title.into(),
            rows,
            highlighted: highlighted.into_iter().collect(),
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        let n_cols = self.rows.first().map_or(0, Vec::len);
        if self.rows.is_empty() || n_cols == 0 {
            return Err(Error::EmptyTable);
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::RaggedRow {
                    row: r,
                    found: row.len(),
                    expected: n_cols,
                });
            }
            for (c, cell) in row.iter().enumerate() {
                if cell.is_row_header && cell.is_col_header {
                    return Err(Error::DoubleHeader((r, c)));
                }
            }
        }
        let header_rows = self.header_row_flags();
        let header_cols = self.header_col_flags();
        for (r, row) in self.rows.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                match (header_rows[r], header_cols[c]) {
                    (true, true) if cell.is_header() => {
                        return Err(Error::InconsistentHeaders(
                            (r, c),
                            "corner cells of a header row and header column carry no flag",
                        ))
                    }
                    (true, false) if !cell.is_col_header => {
                        return Err(Error::InconsistentHeaders(
                            (r, c),
                            "header row contains a non-header cell",
                        ))
                    }
                    (false, true) if !cell.is_row_header => {
                        return Err(Error::InconsistentHeaders(
                            (r, c),
                            "header column contains a non-header cell",
                        ))
                    }
                    _ => {}
                }
            }
        }
        for &coord in &self.highlighted {
            self.check_coord(coord)?;
            if header_rows[coord.0] && header_cols[coord.1] {
                return Err(Error::HighlightOnCorner(coord));
            }
        }
        Ok(())
    }

    pub fn page_title(&self) -> &str {
        &self.page_title
    }

    pub fn section_title(&self) -> &str {
        &self.section_title
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn cell(&self, (r, c): Coord) -> &Cell {
        &self.rows[r][c]
    }

    pub fn highlighted(&self) -> &BTreeSet<Coord> {
        &self.highlighted
    }

    /// Replaces the highlighted set, validating it against the grid.
    pub fn with_highlighted(&self, highlighted: impl IntoIterator<Item = Coord>) -> Result<Self> {
        Table::new(
            self.page_title.clone(),
            self.section_title.clone(),
            self.rows.clone(),
            highlighted,
        )
    }

    pub fn check_coord(&self, coord: Coord) -> Result<()> {
        if coord.0 < self.n_rows() && coord.1 < self.n_cols() {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                coord,
                n_rows: self.n_rows(),
                n_cols: self.n_cols(),
            })
        }
    }

    fn header_row_flags(&self) -> Vec<bool> {
        self.rows
            .iter()
            .map(|row| row.iter().any(|c| c.is_col_header))
            .collect()
    }

    fn header_col_flags(&self) -> Vec<bool> {
        let n_cols = self.rows.first().map_or(0, Vec::len);
        (0..n_cols)
            .map(|c| self.rows.iter().any(|row| row[c].is_row_header))
            .collect()
    }

    pub fn is_header_row(&self, r: usize) -> bool {
        self.rows[r].iter().any(|c| c.is_col_header)
    }

    pub fn is_header_col(&self, c: usize) -> bool {
        self.rows.iter().any(|row| row[c].is_row_header)
    }

    /// Indices of rows holding no column header, ascending.
    pub fn data_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&r| !self.is_header_row(r)).collect()
    }

    /// Indices of columns holding no row header, ascending.
    pub fn data_cols(&self) -> Vec<usize> {
        (0..self.n_cols()).filter(|&c| !self.is_header_col(c)).collect()
    }

    pub fn is_data_cell(&self, (r, c): Coord) -> bool {
        !self.is_header_row(r) && !self.is_header_col(c)
    }

    /// Row headers in the same row as `coord` (excluding `coord` itself).
    pub fn row_headers_of(&self, (r, c): Coord) -> Vec<Coord> {
        (0..self.n_cols())
            .filter(|&cc| cc != c && self.rows[r][cc].is_row_header)
            .map(|cc| (r, cc))
            .collect()
    }

    /// Column headers in the same column as `coord` (excluding `coord` itself).
    pub fn col_headers_of(&self, (r, c): Coord) -> Vec<Coord> {
        (0..self.n_rows())
            .filter(|&rr| rr != r && self.rows[rr][c].is_col_header)
            .map(|rr| (rr, c))
            .collect()
    }

    /// Contents of every header associated with `coord`, sorted. The row/column
    /// distinction is dropped since transposition swaps it.
    pub fn header_contents(&self, coord: Coord) -> Vec<String> {
        let mut out: Vec<String> = self
            .row_headers_of(coord)
            .into_iter()
            .chain(self.col_headers_of(coord))
            .map(|rc| self.cell(rc).content.clone())
            .collect();
        out.sort();
        out
    }
}

/// One element of the content-invariant transformation group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformOp {
    Transpose,
    /// Data row at position `k` of the output is the input's data row `perm[k]`.
    RowShuffle(Vec<usize>),
    /// Data column at position `k` of the output is the input's data column `perm[k]`.
    ColShuffle(Vec<usize>),
}

impl TransformOp {
    pub fn apply(&self, t: &Table) -> Result<Table> {
        match self {
            TransformOp::Transpose => Ok(transpose(t)),
            TransformOp::RowShuffle(p) => shuffle_rows(t, p),
            TransformOp::ColShuffle(p) => shuffle_cols(t, p),
        }
    }

    /// Where a cell at `coord` of `t` ends up after applying `self` to `t`.
    pub fn map_coord(&self, t: &Table, coord: Coord) -> Result<Coord> {
        t.check_coord(coord)?;
        let (r, c) = coord;
        Ok(match self {
            TransformOp::Transpose => (c, r),
            TransformOp::RowShuffle(p) => {
                let lines = t.data_rows();
                check_permutation(p, lines.len())?;
                (line_target(&lines, p, r), c)
            }
            TransformOp::ColShuffle(p) => {
                let lines = t.data_cols();
                check_permutation(p, lines.len())?;
                (r, line_target(&lines, p, c))
            }
        })
    }
}

fn line_target(lines: &[usize], perm: &[usize], line: usize) -> usize {
    match lines.iter().position(|&l| l == line) {
        Some(old_pos) => {
            let new_pos = perm.iter().position(|&p| p == old_pos).expect("bijection");
            lines[new_pos]
        }
        None => line,
    }
}

fn check_permutation(perm: &[usize], expected: usize) -> Result<()> {
    if perm.len() != expected {
        return Err(Error::PermutationSizeMismatch {
            expected,
            found: perm.len(),
        });
    }
    let mut seen = vec![false; expected];
    for &p in perm {
        if p >= expected || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidPermutation(perm.to_vec()));
        }
    }
    Ok(())
}

pub fn transpose(t: &Table) -> Table {
    let rows = (0..t.n_cols())
        .map(|c| (0..t.n_rows()).map(|r| t.rows[r][c].transposed()).collect())
        .collect();
    Table {
        page_title: t.page_title.clone(),
        section_title: t.section_title.clone(),
        rows,
        highlighted: t.highlighted.iter().map(|&(r, c)| (c, r)).collect(),
    }
}

pub fn shuffle_rows(t: &Table, perm: &[usize]) -> Result<Table> {
    let lines = t.data_rows();
    check_permutation(perm, lines.len())?;
    let mut rows = t.rows.clone();
    for (k, &src) in perm.iter().enumerate() {
        rows[lines[k]] = t.rows[lines[src]].clone();
    }
    let highlighted = t
        .highlighted
        .iter()
        .map(|&(r, c)| (line_target(&lines, perm, r), c))
        .collect();
    Ok(Table {
        rows,
        highlighted,
        ..t.clone()
    })
}

pub fn shuffle_cols(t: &Table, perm: &[usize]) -> Result<Table> {
    let lines = t.data_cols();
    check_permutation(perm, lines.len())?;
    let rows = t
        .rows
        .iter()
        .map(|row| {
            let mut out = row.clone();
            for (k, &src) in perm.iter().enumerate() {
                out[lines[k]] = row[lines[src]].clone();
            }
            out
        })
        .collect();
    let highlighted = t
        .highlighted
        .iter()
        .map(|&(r, c)| (r, line_target(&lines, perm, c)))
        .collect();
    Ok(Table {
        rows,
        highlighted,
        ..t.clone()
    })
}

/// Applies `ops` left to right.
pub fn apply_sequence(t: &Table, ops: &[TransformOp]) -> Result<Table> {
    ops.iter().try_fold(t.clone(), |acc, op| op.apply(&acc))
}

/// Uniformly random permutation of `0..n`.
pub fn random_permutation<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// The transform ops for subset `mask` of {Transpose (bit 0), RowShuffle (bit 1),
/// ColShuffle (bit 2)}, applied in that order, with permutations drawn from `rng`.
pub fn subset_ops<R: rand::Rng + ?Sized>(t: &Table, mask: u8, rng: &mut R) -> Vec<TransformOp> {
    let mut ops = Vec::new();
    let transposed = mask & 1 != 0;
    if transposed {
        ops.push(TransformOp::Transpose);
    }
    // line counts after the optional transpose
    let (n_data_rows, n_data_cols) = if transposed {
        (t.data_cols().len(), t.data_rows().len())
    } else {
        (t.data_rows().len(), t.data_cols().len())
    };
    if mask & 2 != 0 {
        ops.push(TransformOp::RowShuffle(random_permutation(n_data_rows, rng)));
    }
    if mask & 4 != 0 {
        ops.push(TransformOp::ColShuffle(random_permutation(n_data_cols, rng)));
    }
    ops
}

/// The eight subsets of {transpose, row shuffle, column shuffle} applied to `t`.
/// Element 0 is `t` itself; element `k` applies the ops whose bits are set in `k`.
pub fn enumerate_augmentations(t: &Table, seed: u64) -> Vec<Table> {
    (0u8..8)
        .map(|mask| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(mask as u64);
            let ops = subset_ops(t, mask, &mut rng);
            apply_sequence(t, &ops).expect("ops are drawn for this table's shape")
        })
        .collect()
}

/// True iff `a` and `b` share a row or a column.
pub fn structurally_related(t: &Table, a: Coord, b: Coord) -> Result<bool> {
    t.check_coord(a)?;
    t.check_coord(b)?;
    Ok(a.0 == b.0 || a.1 == b.1)
}

//! Table linearization: token sequences plus a per-token field map.
//!
//! Every token belongs to exactly one [`Field`]. Metadata fields hold the
//! page title, section title and table delimiters; each cell block (the cell
//! content followed by its headers) is one cell field that remembers the
//! cell's row and column so the structure mask can be rebuilt later.

mod order;
pub mod vocab;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::table::{Coord, Table};

pub use order::canonical_order;
pub use vocab::{split_words, target_ids, tokenize, Vocabulary};
use vocab::*;

/// Default input length limit.
pub const DEFAULT_MAX_LEN: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    Metadata,
    Cell {
        row_ids: BTreeSet<usize>,
        col_ids: BTreeSet<usize>,
        content_hash: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub field_id: usize,
    #[serde(flatten)]
    pub kind: FieldKind,
}

impl Field {
    pub fn is_metadata(&self) -> bool {
        matches!(self.kind, FieldKind::Metadata)
    }

    /// Two cell fields sharing a row or column id. False for metadata.
    pub fn shares_line_with(&self, other: &Field) -> bool {
        match (&self.kind, &other.kind) {
            (
                FieldKind::Cell {
                    row_ids: r1,
                    col_ids: c1,
                    ..
                },
                FieldKind::Cell {
                    row_ids: r2,
                    col_ids: c2,
                    ..
                },
            ) => !r1.is_disjoint(r2) || !c1.is_disjoint(c2),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinearizedSequence {
    pub token_ids: Vec<u32>,
    pub token_texts: Vec<String>,
    pub field_of: Vec<usize>,
    pub fields: Vec<Field>,
}

impl LinearizedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn field_of_token(&self, i: usize) -> &Field {
        &self.fields[self.field_of[i]]
    }

    /// Token index ranges of each field, in field order.
    pub fn field_spans(&self) -> Vec<std::ops::Range<usize>> {
        let mut spans = vec![usize::MAX..0; self.fields.len()];
        for (i, &f) in self.field_of.iter().enumerate() {
            spans[f].start = spans[f].start.min(i);
            spans[f].end = spans[f].end.max(i + 1);
        }
        spans
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        let n = self.token_ids.len();
        if self.token_texts.len() != n || self.field_of.len() != n {
            return Err("token_ids, token_texts and field_of differ in length".into());
        }
        for (i, f) in self.fields.iter().enumerate() {
            if f.field_id != i {
                return Err(format!("field {i} has id {}", f.field_id));
            }
        }
        let mut used = vec![false; self.fields.len()];
        for &f in &self.field_of {
            match used.get_mut(f) {
                Some(u) => *u = true,
                None => return Err(format!("token references missing field {f}")),
            }
        }
        if let Some(f) = used.iter().position(|u| !u) {
            return Err(format!("field {f} has no tokens"));
        }
        Ok(())
    }
}

/// Input format selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    /// Highlighted cells with headers, canonical order.
    Totto,
    /// `[SEP]`-separated cells and headers, canonical order.
    Hitab,
    /// ToTTo surface form with all row/column ids erased.
    Agnostic,
    /// Highlighted cells in row-major order of the current layout.
    Indexed,
}

impl Format {
    /// Whether the token stream is invariant under content-invariant transforms.
    pub fn is_layout_invariant(self) -> bool {
        !matches!(self, Format::Indexed)
    }

    pub fn linearize(self, t: &Table, v: &Vocabulary) -> Result<LinearizedSequence> {
        match self {
            Format::Totto => linearize_totto(t, v),
            Format::Hitab => linearize_hitab(t, v),
            Format::Agnostic => linearize_layout_agnostic(t, v),
            Format::Indexed => linearize_indexed(t, v),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Totto => "totto",
            Format::Hitab => "hitab",
            Format::Agnostic => "agnostic",
            Format::Indexed => "indexed",
        })
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "totto" => Ok(Format::Totto),
            "hitab" => Ok(Format::Hitab),
            "agnostic" => Ok(Format::Agnostic),
            "indexed" => Ok(Format::Indexed),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

struct Builder<'v> {
    vocab: &'v Vocabulary,
    seq: LinearizedSequence,
}

impl<'v> Builder<'v> {
    fn new(vocab: &'v Vocabulary) -> Self {
        Builder {
            vocab,
            seq: LinearizedSequence::default(),
        }
    }

    fn open(&mut self, kind: FieldKind) {
        let field_id = self.seq.fields.len();
        self.seq.fields.push(Field { field_id, kind });
    }

    fn marker(&mut self, m: &str) {
        self.push(m.to_string());
    }

    fn text(&mut self, s: &str) {
        for w in split_words(s) {
            self.push(w);
        }
    }

    fn push(&mut self, tok: String) {
        self.seq.token_ids.push(self.vocab.id(&tok));
        self.seq.token_texts.push(tok);
        self.seq.field_of.push(self.seq.fields.len() - 1);
    }

    fn titles(&mut self, t: &Table) {
        self.open(FieldKind::Metadata);
        self.marker(PAGE_TITLE_OPEN);
        self.text(t.page_title());
        self.marker(PAGE_TITLE_CLOSE);
        self.open(FieldKind::Metadata);
        self.marker(SECTION_TITLE_OPEN);
        self.text(t.section_title());
        self.marker(SECTION_TITLE_CLOSE);
    }

    fn headers(&mut self, headers: &[String]) {
        for h in headers {
            self.marker(HEADER_OPEN);
            self.text(h);
            self.marker(HEADER_CLOSE);
        }
    }

    fn finish(self) -> LinearizedSequence {
        self.seq
    }
}

/// A cell block to be emitted: its coordinate and the text that identifies it.
struct Item {
    coord: Coord,
    content: String,
    headers: Vec<String>,
}

impl Item {
    fn of(t: &Table, coord: Coord, with_headers: bool) -> Self {
        Item {
            coord,
            content: t.cell(coord).content.clone(),
            headers: if with_headers { t.header_contents(coord) } else { Vec::new() },
        }
    }

    fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.content.as_bytes());
        for s in &self.headers {
            h.update([0x1f]);
            h.update(s.as_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    fn field_kind(&self) -> FieldKind {
        FieldKind::Cell {
            row_ids: BTreeSet::from([self.coord.0]),
            col_ids: BTreeSet::from([self.coord.1]),
            content_hash: self.content_hash(),
        }
    }
}

fn canonical_items(mut items: Vec<Item>) -> Vec<Item> {
    let keys: Vec<_> = items.iter().map(|it| (it.content.clone(), it.headers.clone())).collect();
    let coords: Vec<Coord> = items.iter().map(|it| it.coord).collect();
    let order = canonical_order(&keys, |a, b| {
        coords[a].0 == coords[b].0 || coords[a].1 == coords[b].1
    });
    let mut slots: Vec<Option<Item>> = items.drain(..).map(Some).collect();
    order.into_iter().map(|i| slots[i].take().expect("permutation")).collect()
}

fn highlighted_items(t: &Table) -> Result<Vec<Item>> {
    if t.highlighted().is_empty() {
        return Err(Error::NoHighlight);
    }
    Ok(t.highlighted().iter().map(|&rc| Item::of(t, rc, true)).collect())
}

fn emit_cells(t: &Table, v: &Vocabulary, items: &[Item]) -> LinearizedSequence {
    let mut b = Builder::new(v);
    b.titles(t);
    b.open(FieldKind::Metadata);
    b.marker(TABLE_OPEN);
    for it in items {
        b.open(it.field_kind());
        b.marker(CELL_OPEN);
        b.text(&it.content);
        b.headers(&it.headers);
        b.marker(CELL_CLOSE);
    }
    b.open(FieldKind::Metadata);
    b.marker(TABLE_CLOSE);
    b.finish()
}

/// ToTTo-style input: titles, then each highlighted cell with its headers.
///
/// Cell blocks are ordered by `(content, sorted headers)`; identical blocks are
/// ordered from the relatedness structure only, so the output is the same for
/// every layout of the same table.
pub fn linearize_totto(t: &Table, v: &Vocabulary) -> Result<LinearizedSequence> {
    let items = canonical_items(highlighted_items(t)?);
    Ok(emit_cells(t, v, &items))
}

/// Same surface form as [`linearize_totto`] with row and column ids erased.
pub fn linearize_layout_agnostic(t: &Table, v: &Vocabulary) -> Result<LinearizedSequence> {
    let mut seq = linearize_totto(t, v)?;
    for f in &mut seq.fields {
        if let FieldKind::Cell {
            row_ids, col_ids, ..
        } = &mut f.kind
        {
            row_ids.clear();
            col_ids.clear();
        }
    }
    Ok(seq)
}

/// Highlighted cells in row-major order of the given layout. This is the
/// layout-sensitive input of the baseline model.
pub fn linearize_indexed(t: &Table, v: &Vocabulary) -> Result<LinearizedSequence> {
    let items = highlighted_items(t)?;
    Ok(emit_cells(t, v, &items))
}

/// Coordinates that make up a HiTab-style input: highlighted cells, headers of
/// highlighted cells, and data cells in the line of a highlighted header.
/// The flag is true for highlighted coordinates.
pub fn hitab_members(t: &Table) -> BTreeMap<Coord, bool> {
    let mut members: BTreeMap<Coord, bool> = BTreeMap::new();
    for &rc in t.highlighted() {
        members.insert(rc, true);
    }
    for &rc in t.highlighted() {
        for h in t.row_headers_of(rc).into_iter().chain(t.col_headers_of(rc)) {
            members.entry(h).or_insert(false);
        }
        let cell = t.cell(rc);
        if cell.is_col_header {
            for r in t.data_rows() {
                members.entry((r, rc.1)).or_insert(false);
            }
        }
        if cell.is_row_header {
            for c in t.data_cols() {
                members.entry((rc.0, c)).or_insert(false);
            }
        }
    }
    members
}

/// HiTab-style input: titles, then `[SEP]`-prefixed fields for every member
/// from [`hitab_members`]. Highlighted cells carry their header chain.
pub fn linearize_hitab(t: &Table, v: &Vocabulary) -> Result<LinearizedSequence> {
    if t.highlighted().is_empty() {
        return Err(Error::NoHighlight);
    }
    let items: Vec<Item> = hitab_members(t)
        .into_iter()
        .map(|(rc, highlighted)| Item::of(t, rc, highlighted))
        .collect();
    let items = canonical_items(items);
    let mut b = Builder::new(v);
    b.titles(t);
    for it in &items {
        b.open(it.field_kind());
        b.marker(SEP);
        b.text(&it.content);
        b.headers(&it.headers);
    }
    Ok(b.finish())
}

/// Keeps the first `max_len` tokens and drops fields left without tokens.
pub fn truncate(seq: &LinearizedSequence, max_len: usize) -> LinearizedSequence {
    let keep = seq.len().min(max_len);
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    for &f in &seq.field_of[..keep] {
        let next = remap.len();
        remap.entry(f).or_insert(next);
    }
    let mut fields: Vec<Field> = remap
        .iter()
        .map(|(&old, &new)| Field {
            field_id: new,
            kind: seq.fields[old].kind.clone(),
        })
        .collect();
    fields.sort_by_key(|f| f.field_id);
    LinearizedSequence {
        token_ids: seq.token_ids[..keep].to_vec(),
        token_texts: seq.token_texts[..keep].to_vec(),
        field_of: seq.field_of[..keep].iter().map(|f| remap[f]).collect(),
        fields,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{transpose, Cell};

    fn film_table(highlighted: &[Coord]) -> Table {
        Table::new(
            "Tony Leung",
            "Filmography",
            vec![
                vec![Cell::col_header("Year"), Cell::col_header("Film"), Cell::col_header("Role")],
                vec![Cell::data("1992"), Cell::data("Royal Tramp"), Cell::data("Wai Siu-bo")],
                vec![Cell::data("1993"), Cell::data("Lucky Star"), Cell::data("Ouyang")],
            ],
            highlighted.iter().copied(),
        )
        .unwrap()
    }

    fn vocab_for(t: &Table) -> Vocabulary {
        let mut texts = vec![t.page_title().to_string(), t.section_title().to_string()];
        texts.extend(t.rows().iter().flatten().map(|c| c.content.clone()));
        Vocabulary::build(texts.iter().map(String::as_str))
    }

    #[test]
    fn totto_film_example() {
        let t = film_table(&[(1, 1), (1, 2)]);
        let v = vocab_for(&t);
        let seq = linearize_totto(&t, &v).unwrap();
        seq.check().unwrap();
        let text = seq.token_texts.join(" ");
        assert_eq!(
            text,
            "<page_title> tony leung </page_title> <section_title> filmography </section_title> <table> \
             <cell> royal tramp <header> film </header> </cell> \
             <cell> wai siu - bo <header> role </header> </cell> </table>"
        );
        let cells: Vec<&Field> = seq.fields.iter().filter(|f| !f.is_metadata()).collect();
        assert_eq!(cells.len(), 2);
        assert!(!seq.token_ids.contains(&vocab::UNK_ID));
        // second layout of the same table
        let seq_t = linearize_totto(&transpose(&t), &v).unwrap();
        assert_eq!(seq_t.token_ids, seq.token_ids);
        assert_eq!(seq_t.field_of, seq.field_of);
    }

    #[test]
    fn empty_titles_leave_marker_only_metadata() {
        let t = Table::new("", "", vec![vec![Cell::data("x")]], [(0, 0)]).unwrap();
        let v = vocab_for(&t);
        let seq = linearize_totto(&t, &v).unwrap();
        assert_eq!(&seq.token_texts[..4], ["<page_title>", "</page_title>", "<section_title>", "</section_title>"]);
        assert_eq!(seq.field_of[..4], [0, 0, 1, 1]);
    }

    #[test]
    fn no_highlight_is_an_error() {
        let t = film_table(&[]);
        let v = vocab_for(&t);
        for f in [Format::Totto, Format::Hitab, Format::Agnostic, Format::Indexed] {
            assert!(matches!(f.linearize(&t, &v), Err(Error::NoHighlight)));
        }
    }

    #[test]
    fn hitab_single_cell_with_two_headers() {
        let t = Table::new(
            "",
            "",
            vec![
                vec![Cell::default(), Cell::col_header("gold")],
                vec![Cell::row_header("china"), Cell::data("12")],
            ],
            [(1, 1)],
        )
        .unwrap();
        let v = vocab_for(&t);
        let seq = linearize_hitab(&t, &v).unwrap();
        seq.check().unwrap();
        assert_eq!(seq.token_texts.iter().filter(|s| *s == SEP).count(), 3);
        assert_eq!(seq.fields.iter().filter(|f| !f.is_metadata()).count(), 3);
    }

    #[test]
    fn hitab_highlighted_header_pulls_its_column() {
        let t = film_table(&[(0, 1)]);
        let members = hitab_members(&t);
        let coords: Vec<Coord> = members.keys().copied().collect();
        assert_eq!(coords, vec![(0, 1), (1, 1), (2, 1)]);
    }

    #[test]
    fn agnostic_matches_totto_tokens_without_ids() {
        let t = film_table(&[(1, 0), (1, 1), (2, 2)]);
        let v = vocab_for(&t);
        let a = linearize_layout_agnostic(&t, &v).unwrap();
        let b = linearize_totto(&t, &v).unwrap();
        assert_eq!(a.token_texts, b.token_texts);
        assert!(a.fields.iter().all(|f| match &f.kind {
            FieldKind::Cell { row_ids, col_ids, .. } => row_ids.is_empty() && col_ids.is_empty(),
            FieldKind::Metadata => true,
        }));
    }

    #[test]
    fn indexed_follows_layout() {
        let t = film_table(&[(1, 0), (1, 1)]);
        let v = vocab_for(&t);
        let a = linearize_indexed(&t, &v).unwrap();
        let b = linearize_indexed(&transpose(&t), &v).unwrap();
        assert_eq!(a.token_texts, b.token_texts);
        let t2 = film_table(&[(1, 0), (2, 0)]);
        let c = linearize_indexed(&crate::table::shuffle_rows(&t2, &[1, 0]).unwrap(), &v).unwrap();
        let d = linearize_indexed(&t2, &v).unwrap();
        assert_ne!(c.token_texts, d.token_texts);
    }

    #[test]
    fn truncate_mid_cell() {
        let t = film_table(&[(1, 1), (1, 2)]);
        let v = vocab_for(&t);
        let seq = linearize_totto(&t, &v).unwrap();
        assert_eq!(truncate(&seq, 1000), seq);
        // cut inside the "wai siu - bo" block
        let cut = seq.token_texts.iter().position(|s| s == "siu").unwrap();
        let tr = truncate(&seq, cut);
        tr.check().unwrap();
        assert_eq!(tr.len(), cut);
        assert_eq!(tr.fields.len(), 5);
        let last = tr.field_of[cut - 1];
        assert_eq!(tr.field_of.iter().filter(|&&f| f == last).count(), 2); // "<cell> wai"
        assert_eq!(truncate(&seq, 1).fields.len(), 1);
    }
}

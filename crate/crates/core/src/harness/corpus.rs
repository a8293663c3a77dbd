//! Deterministic synthetic table-to-text corpus.
//!
//! Two template families stand in for real data. Every target is rendered
//! from the highlighted cells, their headers and the page title, glued
//! together with words from [`FUNCTION_WORDS`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Example;
use crate::error::{Error, Result};
use crate::table::{Cell, Table};

/// Closed set of words a template may add on top of table content.
pub const FUNCTION_WORDS: &[&str] = &[
    "starred", "in", "as", "directed", "by", "won", "gold", "silver", "bronze", "medals", "and", "total",
    "at", "the", ",", ".",
];

const FIRST_NAMES: &[&str] = &[
    "anna", "boris", "carla", "dmitri", "elena", "felix", "greta", "hugo", "irene", "jonas", "karin", "lukas",
    "maria", "nils", "olga", "pavel", "rosa", "stefan", "tanja", "ulrich", "vera", "walter", "yuki", "zora",
];
const SURNAMES: &[&str] = &[
    "abbott", "brandt", "castillo", "dubois", "eriksen", "fischer", "garcia", "hoffman", "ivanova", "jensen",
    "kowalski", "lindqvist", "moreau", "novak", "okafor", "petrov", "quinn", "rossi", "sato", "tanaka",
    "ueda", "varga", "weber", "young",
];
const FILM_FIRST: &[&str] = &[
    "silent", "broken", "golden", "hidden", "last", "northern", "crimson", "distant", "frozen", "hollow",
    "iron", "lonely", "midnight", "paper", "quiet", "restless", "scarlet", "wild",
];
const FILM_SECOND: &[&str] = &[
    "harbor", "river", "garden", "empire", "station", "summer", "bridge", "letters", "mountain", "orchard",
    "road", "shadows", "tides", "valley", "winter", "voyage", "kingdom", "lantern",
];
const ROLES: &[&str] = &[
    "detective", "nurse", "captain", "teacher", "pilot", "farmer", "singer", "doctor", "soldier", "painter",
    "lawyer", "sailor", "priest", "banker", "miner", "writer", "judge", "baker",
];
const NATIONS: &[&str] = &[
    "austria", "brazil", "canada", "denmark", "egypt", "finland", "ghana", "hungary", "india", "japan",
    "kenya", "latvia", "mexico", "norway", "oman", "peru", "qatar", "romania", "spain", "turkey", "uganda",
    "vietnam", "wales", "zambia",
];
const GAMES: &[&str] = &[
    "summer olympics",
    "winter olympics",
    "asian games",
    "pan american games",
    "commonwealth games",
    "world championships",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Filmography: header row, one line per film.
    Films,
    /// Medal table: header row and a header column of nations.
    Medals,
    /// Both families, chosen per table.
    Mixed,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "films" => Ok(Family::Films),
            "medals" => Ok(Family::Medals),
            "mixed" => Ok(Family::Mixed),
            _ => Err(Error::InvalidConfig(format!("unknown corpus family {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_tables: usize,
    /// Inclusive range of data rows.
    pub rows: (usize, usize),
    /// Inclusive range of data columns.
    pub cols: (usize, usize),
    pub family: Family,
    /// Inclusive range of highlighted cells per table.
    pub highlights: (usize, usize),
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_tables: 100,
            rows: (2, 5),
            cols: (2, 4),
            family: Family::Mixed,
            highlights: (1, 3),
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        let ok = |(lo, hi): (usize, usize)| 1 <= lo && lo <= hi;
        if !ok(self.rows) || !ok(self.cols) || !ok(self.highlights) {
            return bad("ranges must be non-empty and start at 1 or more");
        }
        if self.cols.1 > 4 {
            return bad("the templates provide at most 4 data columns");
        }
        if self.rows.1 > NATIONS.len() {
            return bad("too many data rows for the word lists");
        }
        Ok(())
    }
}

/// Renders `spec.n_tables` examples; output depends only on `spec`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<Example>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.n_tables)
        .map(|_| {
            let family = match spec.family {
                Family::Mixed if rng.gen_bool(0.5) => Family::Films,
                Family::Mixed => Family::Medals,
                f => f,
            };
            let n_rows = rng.gen_range(spec.rows.0..=spec.rows.1);
            let n_cols = rng.gen_range(spec.cols.0..=spec.cols.1);
            let n_hl = rng.gen_range(spec.highlights.0..=spec.highlights.1).min(n_cols);
            match family {
                Family::Films => films(&mut rng, n_rows, n_cols, n_hl),
                _ => medals(&mut rng, n_rows, n_cols, n_hl),
            }
        })
        .collect()
}

fn pick<'a, R: Rng>(rng: &mut R, list: &[&'a str]) -> &'a str {
    list[rng.gen_range(0..list.len())]
}

/// `k` of the indices `0..n`, returned in increasing order.
fn choose_sorted<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut v = rand::seq::index::sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

const FILM_COLUMNS: [&str; 4] = ["year", "film", "role", "director"];

fn films<R: Rng>(rng: &mut R, n_rows: usize, n_cols: usize, n_hl: usize) -> Result<Example> {
    let actor = format!("{} {}", pick(rng, FIRST_NAMES), pick(rng, SURNAMES));
    let cols: Vec<usize> = choose_sorted(rng, FILM_COLUMNS.len(), n_cols);
    let mut years: Vec<u32> = rand::seq::index::sample(rng, 60, n_rows)
        .into_iter()
        .map(|y| 1960 + y as u32)
        .collect();
    years.sort_unstable();
    let mut records = Vec::with_capacity(n_rows);
    for &year in &years {
        records.push([
            year.to_string(),
            format!("{} {}", pick(rng, FILM_FIRST), pick(rng, FILM_SECOND)),
            pick(rng, ROLES).to_string(),
            format!("{} {}", pick(rng, FIRST_NAMES), pick(rng, SURNAMES)),
        ]);
    }
    let mut rows = vec![cols.iter().map(|&c| Cell::col_header(FILM_COLUMNS[c])).collect::<Vec<_>>()];
    rows.extend(
        records
            .iter()
            .map(|rec| cols.iter().map(|&c| Cell::data(rec[c].clone())).collect()),
    );
    let picks = choose_highlights(rng, n_rows, n_cols, n_hl);
    let clauses = picks.iter().map(|(r, hl)| {
        let rec = &records[*r];
        let shown: Vec<usize> = hl.iter().map(|&k| cols[k]).collect();
        let mut words = Vec::new();
        if shown.contains(&1) {
            words.push(format!("starred in {}", rec[1]));
        }
        if shown.contains(&2) {
            words.push(format!("as {}", rec[2]));
        }
        if shown.contains(&3) {
            words.push(format!("directed by {}", rec[3]));
        }
        if shown.contains(&0) {
            words.push(format!("in {}", rec[0]));
        }
        words.join(" ")
    });
    let target = format!("{actor} {} .", join_clauses(clauses));
    let table = Table::new(actor, "filmography", rows, highlight_coords(&picks, 1, 0))?;
    Ok(Example { table, target })
}

const MEDAL_COLUMNS: [&str; 4] = ["gold", "silver", "bronze", "total"];

fn medals<R: Rng>(rng: &mut R, n_rows: usize, n_cols: usize, n_hl: usize) -> Result<Example> {
    let year = rng.gen_range(1960..2020u32);
    let games = pick(rng, GAMES);
    let mut nations: Vec<&str> = NATIONS.to_vec();
    nations.shuffle(rng);
    nations.truncate(n_rows);
    let cols: Vec<usize> = choose_sorted(rng, MEDAL_COLUMNS.len(), n_cols);
    let counts: Vec<[u32; 4]> = (0..n_rows)
        .map(|_| {
            let g = rng.gen_range(0..10);
            let s = rng.gen_range(0..10);
            let b = rng.gen_range(0..10);
            [g, s, b, g + s + b]
        })
        .collect();
    let mut header = vec![Cell::data("nation")];
    header.extend(cols.iter().map(|&c| Cell::col_header(MEDAL_COLUMNS[c])));
    let mut rows = vec![header];
    for (nation, cnt) in nations.iter().zip(&counts) {
        let mut row = vec![Cell::row_header(*nation)];
        row.extend(cols.iter().map(|&c| Cell::data(cnt[c].to_string())));
        rows.push(row);
    }
    let picks = choose_highlights(rng, n_rows, n_cols, n_hl);
    let clauses = picks.iter().map(|(r, hl)| {
        let shown: Vec<usize> = hl.iter().map(|&k| cols[k]).collect();
        let cnt = counts[*r];
        let parts: Vec<String> = shown
            .iter()
            .filter(|&&c| c < 3)
            .map(|&c| format!("{} {}", cnt[c], MEDAL_COLUMNS[c]))
            .collect();
        let mut words = vec![nations[*r].to_string(), "won".into()];
        if let Some((last, init)) = parts.split_last() {
            if !init.is_empty() {
                words.push(init.join(" , "));
                words.push("and".into());
            }
            words.push(last.clone());
            words.push("medals".into());
        }
        if shown.contains(&3) {
            if !parts.is_empty() {
                words.push(",".into());
            }
            words.push(format!("{} in total", cnt[3]));
        }
        words.join(" ")
    });
    let page = format!("{year} {games}");
    let target = format!("{} at the {page} .", join_clauses(clauses));
    let table = Table::new(page, "medal table", rows, highlight_coords(&picks, 1, 1))?;
    Ok(Example { table, target })
}

/// Highlighted cells as `(data row, sorted data-column indices)`.
///
/// All cells sit in one row, or, with at least two cells and a coin flip,
/// are split across two rows.
fn choose_highlights<R: Rng>(rng: &mut R, n_rows: usize, n_cols: usize, n_hl: usize) -> Vec<(usize, Vec<usize>)> {
    if n_hl >= 2 && n_rows >= 2 && rng.gen_bool(0.5) {
        let rows = choose_sorted(rng, n_rows, 2);
        let first = rng.gen_range(1..n_hl);
        vec![
            (rows[0], choose_sorted(rng, n_cols, first)),
            (rows[1], choose_sorted(rng, n_cols, n_hl - first)),
        ]
    } else {
        vec![(rng.gen_range(0..n_rows), choose_sorted(rng, n_cols, n_hl))]
    }
}

fn highlight_coords(picks: &[(usize, Vec<usize>)], row_offset: usize, col_offset: usize) -> Vec<(usize, usize)> {
    picks
        .iter()
        .flat_map(|(r, cols)| cols.iter().map(move |&c| (r + row_offset, c + col_offset)))
        .collect()
}

/// Clauses sorted by their text, so the sentence depends on content only.
fn join_clauses(clauses: impl Iterator<Item = String>) -> String {
    let mut v: Vec<String> = clauses.collect();
    v.sort();
    v.join(" and ")
}

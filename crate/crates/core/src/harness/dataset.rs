//! JSONL datasets of `{"table": .., "target": ..}` lines.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{apply_sequence, enumerate_augmentations, subset_ops, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub table: Table,
    pub target: String,
}

/// Parses JSONL, skipping blank lines; errors carry 1-based line numbers.
pub fn read_jsonl<R: Read>(reader: R) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut writer: W, examples: &[Example]) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut writer, ex)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    read_jsonl(fs::File::open(path)?)
}

pub fn save_jsonl(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    write_jsonl(std::io::BufWriter::new(fs::File::create(path)?), examples)
}

/// Eight layouts per example (identity first), targets copied unchanged.
pub fn augment_dataset(examples: &[Example], seed: u64) -> Vec<Example> {
    examples
        .iter()
        .enumerate()
        .flat_map(|(i, ex)| {
            enumerate_augmentations(&ex.table, example_seed(seed, i))
                .into_iter()
                .map(|table| Example {
                    table,
                    target: ex.target.clone(),
                })
        })
        .collect()
}

/// Transposes, row-shuffles and column-shuffles every table once.
///
/// Permutations are drawn per example from `seed` and the line index.
pub fn perturb_dataset(examples: &[Example], seed: u64) -> Vec<Example> {
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut rng = ChaCha8Rng::seed_from_u64(example_seed(seed, i));
            let ops = subset_ops(&ex.table, 0b111, &mut rng);
            let table = apply_sequence(&ex.table, &ops).expect("ops are generated for this table");
            Example {
                table,
                target: ex.target.clone(),
            }
        })
        .collect()
}

fn example_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Cell;

    fn example(rows: usize, cols: usize) -> Example {
        let mut grid = vec![(0..cols).map(|c| Cell::col_header(format!("h{c}"))).collect::<Vec<_>>()];
        for r in 0..rows {
            grid.push((0..cols).map(|c| Cell::data(format!("v{r}x{c}"))).collect());
        }
        Example {
            table: Table::new("p", "s", grid, [(1, 0)]).unwrap(),
            target: "v0x0 .".into(),
        }
    }

    fn contents(t: &Table) -> Vec<String> {
        let mut v: Vec<String> = t.rows().iter().flatten().map(|c| c.content.clone()).collect();
        v.sort();
        v
    }

    #[test]
    fn roundtrip_and_malformed_line() {
        let data = vec![example(2, 2), example(3, 1)];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &data).unwrap();
        assert_eq!(read_jsonl(&buf[..]).unwrap(), data);
        let mut bad = buf.clone();
        bad.extend_from_slice(b"\n{\"table\": 3}\n");
        match read_jsonl(&bad[..]) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn augmentation_is_eightfold() {
        let data = vec![example(3, 3), example(2, 4)];
        let aug = augment_dataset(&data, 5);
        assert_eq!(aug.len(), 16);
        assert_eq!(aug[0], data[0]);
        assert_eq!(aug[8], data[1]);
        assert!(aug[..8].iter().all(|e| e.target == data[0].target));
    }

    #[test]
    fn perturbation_keeps_content() {
        let data: Vec<Example> = (0..20).map(|k| example(2 + k % 3, 2 + k % 2)).collect();
        let out = perturb_dataset(&data, 1);
        for (a, b) in data.iter().zip(&out) {
            assert_eq!(contents(&a.table), contents(&b.table));
            assert_eq!(a.target, b.target);
            // transposition alone changes a table whose shape is at least 2x2
            assert_ne!(a.table, b.table);
        }
    }

    #[test]
    fn one_by_one_table_is_unchanged() {
        let ex = Example {
            table: Table::new("p", "s", vec![vec![Cell::data("x")]], [(0, 0)]).unwrap(),
            target: "x".into(),
        };
        assert_eq!(perturb_dataset(std::slice::from_ref(&ex), 3), vec![ex]);
    }
}

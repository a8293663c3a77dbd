//! Layout-independent ordering of cell blocks.
//!
//! Blocks are sorted by their text key. Blocks with equal keys are told apart
//! only through the relatedness graph (shared row or column) using colour
//! refinement; remaining ties are settled by an individualisation search that
//! picks the ordering with the smallest adjacency certificate. The result
//! depends on keys and the relation alone, never on coordinates.

use std::collections::BTreeMap;

/// Search leaves explored before settling for the best certificate found.
const LEAF_BUDGET: usize = 4096;

/// Returns item indices in canonical order.
///
/// `keys[i]` is the sort key of item `i`; `related(i, j)` must be symmetric.
pub fn canonical_order<K: Ord>(keys: &[K], related: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let n = keys.len();
    if n <= 1 {
        return (0..n).collect();
    }
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i != j && related(i, j)).collect())
        .collect();

    let mut sorted: Vec<usize> = (0..n).collect();
    sorted.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut colors = vec![0u64; n];
    let mut rank = 0u64;
    for w in 0..n {
        if w > 0 && keys[sorted[w]] != keys[sorted[w - 1]] {
            rank += 1;
        }
        colors[sorted[w]] = rank;
    }

    let colors = refine(&adj, colors);
    let mut search = Search {
        adj: &adj,
        best: None,
        leaves: 0,
    };
    search.explore(colors);
    search.best.expect("at least one leaf").1
}

/// Iterated colour refinement. New colours are ranks of
/// `(old colour, sorted neighbour colours)`, so the order between existing
/// classes is preserved.
fn refine(adj: &[Vec<bool>], mut colors: Vec<u64>) -> Vec<u64> {
    let n = colors.len();
    let mut classes = count_classes(&colors);
    loop {
        let sigs: Vec<(u64, Vec<u64>)> = (0..n)
            .map(|i| {
                let mut nb: Vec<u64> = (0..n).filter(|&j| adj[i][j]).map(|j| colors[j]).collect();
                nb.sort_unstable();
                (colors[i], nb)
            })
            .collect();
        let ranks: BTreeMap<&(u64, Vec<u64>), u64> = {
            let mut uniq: Vec<&(u64, Vec<u64>)> = sigs.iter().collect();
            uniq.sort();
            uniq.dedup();
            uniq.into_iter().enumerate().map(|(r, s)| (s, r as u64)).collect()
        };
        let next: Vec<u64> = sigs.iter().map(|s| ranks[s]).collect();
        let next_classes = count_classes(&next);
        colors = next;
        if next_classes == classes {
            return colors;
        }
        classes = next_classes;
    }
}

fn count_classes(colors: &[u64]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

struct Search<'a> {
    adj: &'a [Vec<bool>],
    best: Option<(Vec<bool>, Vec<usize>)>,
    leaves: usize,
}

impl Search<'_> {
    fn explore(&mut self, colors: Vec<u64>) {
        let n = colors.len();
        // smallest colour shared by more than one item
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for &c in &colors {
            *counts.entry(c).or_default() += 1;
        }
        let target = counts.iter().find(|(_, &k)| k > 1).map(|(&c, _)| c);
        let Some(target) = target else {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| colors[i]);
            let adj = self.adj;
            let cert: Vec<bool> = order
                .iter()
                .flat_map(|&i| order.iter().map(move |&j| adj[i][j]))
                .collect();
            self.leaves += 1;
            if self.best.as_ref().map_or(true, |(b, _)| cert < *b) {
                self.best = Some((cert, order));
            }
            return;
        };
        for v in (0..n).filter(|&i| colors[i] == target) {
            if self.leaves >= LEAF_BUDGET {
                return;
            }
            let split: Vec<u64> = colors
                .iter()
                .enumerate()
                .map(|(i, &c)| if i == v { 2 * c } else { 2 * c + 1 })
                .collect();
            self.explore(refine(self.adj, split));
        }
    }
}

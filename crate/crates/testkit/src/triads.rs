//! Triad census by enumerating every node triple and matching against the
//! canonical arc patterns under all relabelings.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Canonical patterns over nodes a=0, b=1, c=2.
pub const PATTERNS: [(&str, &[(usize, usize)]); 13] = [
    ("021D", &[(1, 0), (1, 2)]),
    ("021U", &[(0, 1), (2, 1)]),
    ("021C", &[(0, 1), (1, 2)]),
    ("111D", &[(0, 1), (1, 0), (2, 1)]),
    ("111U", &[(0, 1), (1, 0), (1, 2)]),
    ("030T", &[(0, 1), (2, 1), (0, 2)]),
    ("030C", &[(1, 0), (2, 1), (0, 2)]),
    ("201", &[(0, 1), (1, 0), (1, 2), (2, 1)]),
    ("120D", &[(1, 0), (1, 2), (0, 2), (2, 0)]),
    ("120U", &[(0, 1), (2, 1), (0, 2), (2, 0)]),
    ("120C", &[(0, 1), (1, 2), (0, 2), (2, 0)]),
    ("210", &[(0, 1), (1, 2), (2, 1), (0, 2), (2, 0)]),
    ("300", &[(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)]),
];

const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

fn matches(pattern: &[(usize, usize)], present: &[[bool; 3]; 3]) -> bool {
    PERMS.iter().any(|p| {
        let mut mapped = [[false; 3]; 3];
        for &(x, y) in pattern {
            mapped[p[x]][p[y]] = true;
        }
        mapped == *present
    })
}

/// Connected-triad counts keyed by class code, over nodes `0..n`.
/// Self-loops and duplicate arcs are dropped first.
pub fn census(n: usize, arcs: &[(usize, usize)]) -> BTreeMap<&'static str, u64> {
    let arcs: HashSet<(usize, usize)> = arcs.iter().copied().filter(|(x, y)| x != y).collect();
    let mut out = BTreeMap::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                let triple = [a, b, c];
                let mut present = [[false; 3]; 3];
                for (i, row) in present.iter_mut().enumerate() {
                    for (j, cell) in row.iter_mut().enumerate() {
                        *cell = arcs.contains(&(triple[i], triple[j]));
                    }
                }
                for (code, pattern) in PATTERNS {
                    if matches(pattern, &present) {
                        *out.entry(code).or_default() += 1;
                        break;
                    }
                }
            }
        }
    }
    out
}

/// Random multigraph on `n` nodes with `m` arcs, including occasional
/// self-loops, duplicates and reciprocated arcs.
pub fn random_multigraph(seed: u64, n: usize, m: usize) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arcs: Vec<(usize, usize)> = Vec::with_capacity(m);
    while arcs.len() < m {
        let roll = rng.gen_range(0..10);
        if roll == 0 && !arcs.is_empty() {
            let &(x, y) = arcs.choose(&mut rng).unwrap();
            arcs.push(if rng.gen_bool(0.5) { (x, y) } else { (y, x) });
        } else {
            arcs.push((rng.gen_range(0..n), rng.gen_range(0..n)));
        }
    }
    arcs
}

/// Uniform simple digraph with exactly `m` distinct arcs and no self-loops.
pub fn uniform_digraph(seed: u64, n: usize, m: usize) -> Vec<(usize, usize)> {
    assert!(m <= n * n.saturating_sub(1), "too many arcs for {n} nodes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(m);
    let mut arcs = Vec::with_capacity(m);
    while arcs.len() < m {
        let (x, y) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if x != y && seen.insert((x, y)) {
            arcs.push((x, y));
        }
    }
    arcs
}

//! Exact solvers for small instances, used as ground truth.

use crate::affinity::AffinityMatrix;
use crate::error::{Error, Result};

/// Largest problem `exact_densest` will enumerate.
pub const DENSEST_LIMIT: usize = 20;

/// Relative slack when comparing enumerated densities.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Optimal vertex set, ascending.
    pub best_set: Vec<usize>,
    /// Density for the densest search, cardinality for the clique search.
    pub best_value: f64,
    pub nodes_explored: u64,
}

/// Exhaustive search for the densest pairwise-connected subset: every
/// nonempty subset is enumerated, infeasible ones (containing an
/// unconnected pair) are skipped, and the density `u'Mu / u'u` of the rest
/// is compared. Ties prefer the smaller set, then the lexicographically
/// smaller one.
pub fn exact_densest(m: &AffinityMatrix) -> Result<OracleResult> {
    let n = m.n();
    if n > DENSEST_LIMIT {
        return Err(Error::SizeLimit {
            n,
            limit: DENSEST_LIMIT,
        });
    }
    if n == 0 {
        return Err(Error::Parameter("matrix has no vertices".into()));
    }
    let adj: Vec<u32> = (0..n)
        .map(|i| m.row(i).0.iter().fold(1u32 << i, |acc, &j| acc | (1 << j)))
        .collect();

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut explored = 0u64;
    for mask in 1u32..(1u32 << n) {
        explored += 1;
        let feasible = (0..n)
            .filter(|&i| mask & (1 << i) != 0)
            .all(|i| mask & !adj[i] == 0);
        if !feasible {
            continue;
        }
        let set: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let mut total = 0.0;
        for (a, &i) in set.iter().enumerate() {
            total += m.diag()[i];
            for &j in &set[a + 1..] {
                total += 2.0 * m.get(i, j);
            }
        }
        let value = total / set.len() as f64;
        let better = match &best {
            None => true,
            Some((bv, bs)) => {
                let tol = TIE_TOL * bv.abs().max(1.0);
                if value > bv + tol {
                    true
                } else if value >= bv - tol {
                    (set.len(), &set) < (bs.len(), bs)
                } else {
                    false
                }
            }
        };
        if better {
            best = Some((value, set));
        }
    }
    let (best_value, best_set) = best.expect("singletons are always feasible");
    Ok(OracleResult {
        best_set,
        best_value,
        nodes_explored: explored,
    })
}

/// Fixed-width bitset over vertex indices.
#[derive(Clone, PartialEq, Eq)]
struct Bits(Vec<u64>);

impl Bits {
    fn empty(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn clear(&mut self, i: usize) {
        self.0[i / 64] &= !(1 << (i % 64));
    }

    fn has(&self, i: usize) -> bool {
        self.0[i / 64] & (1 << (i % 64)) != 0
    }

    fn is_empty(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }

    fn and(&self, other: &Bits) -> Bits {
        Bits(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }
}

struct CliqueSearch<'a> {
    /// Adjacency in search order: vertex `p` is `order[p]` in the matrix.
    adj: Vec<Bits>,
    order: &'a [usize],
    best: Vec<usize>,
    explored: u64,
}

impl CliqueSearch<'_> {
    fn to_original(&self, clique: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = clique.iter().map(|&p| self.order[p]).collect();
        out.sort_unstable();
        out
    }

    /// Greedy sequential colouring of `cand` in search order. Returns the
    /// vertices sorted by colour class and the class number of each; the
    /// class number bounds the clique size reachable from that prefix.
    fn colour(&self, cand: &Bits, n: usize) -> (Vec<usize>, Vec<usize>) {
        let mut remaining = cand.clone();
        let mut verts = Vec::new();
        let mut colours = Vec::new();
        let mut colour = 0;
        while !remaining.is_empty() {
            colour += 1;
            let mut avail = remaining.clone();
            for v in 0..n {
                if avail.has(v) {
                    verts.push(v);
                    colours.push(colour);
                    remaining.clear(v);
                    avail.clear(v);
                    for w in 0..n {
                        if avail.has(w) && self.adj[v].has(w) {
                            avail.clear(w);
                        }
                    }
                }
            }
        }
        (verts, colours)
    }

    fn expand(&mut self, clique: &mut Vec<usize>, mut cand: Bits, n: usize) {
        self.explored += 1;
        let (verts, colours) = self.colour(&cand, n);
        for k in (0..verts.len()).rev() {
            // Equal bounds are still explored so the lexicographic tie-break
            // sees every maximum clique.
            if clique.len() + colours[k] < self.best.len() {
                return;
            }
            let v = verts[k];
            clique.push(v);
            let next = cand.and(&self.adj[v]);
            if next.is_empty() {
                if clique.len() >= self.best.len() {
                    let found = self.to_original(clique);
                    if found.len() > self.best.len() || found < self.best {
                        self.best = found;
                    }
                }
            } else {
                self.expand(clique, next, n);
            }
            clique.pop();
            cand.clear(v);
        }
    }
}

/// Branch-and-bound maximum clique with a greedy colouring bound. Requires
/// every stored off-diagonal weight to be exactly 1. Among maximum cliques
/// the lexicographically smallest is returned.
pub fn exact_max_clique(m: &AffinityMatrix) -> Result<OracleResult> {
    let n = m.n();
    if n == 0 {
        return Err(Error::Parameter("matrix has no vertices".into()));
    }
    if let Some(&(i, j, w)) = m.entries().iter().find(|&&(_, _, w)| w != 1.0) {
        return Err(Error::NonBinary { i, j, w });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m.degree(b).cmp(&m.degree(a)).then(a.cmp(&b)));
    let mut pos = vec![0; n];
    for (p, &v) in order.iter().enumerate() {
        pos[v] = p;
    }
    let adj: Vec<Bits> = order
        .iter()
        .map(|&v| {
            let mut b = Bits::empty(n);
            for &w in m.row(v).0 {
                b.set(pos[w]);
            }
            b
        })
        .collect();
    let mut all = Bits::empty(n);
    (0..n).for_each(|p| all.set(p));

    let mut search = CliqueSearch {
        adj,
        order: &order,
        best: Vec::new(),
        explored: 0,
    };
    search.expand(&mut Vec::new(), all, n);
    debug_assert!(crate::solver::is_clique(m, &search.best));
    Ok(OracleResult {
        best_value: search.best.len() as f64,
        best_set: search.best,
        nodes_explored: search.explored,
    })
}

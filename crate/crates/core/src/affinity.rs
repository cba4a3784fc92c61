//! Sparse symmetric affinity matrices.
//!
//! Off-diagonal consistency scores live in a coordinate list sorted by
//! `(i, j)` with `i < j`; a symmetric compressed-row index is built once at
//! construction so a matrix-vector product costs `O(|E| + n)`. Zero scores
//! are never stored: an absent pair means `M(i, j) = 0`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result, Violation};

/// Smallest admissible diagonal similarity.
pub const MIN_DIAGONAL: f64 = 1e-6;

/// Unvalidated coordinate form of an affinity matrix, as read from a file or
/// assembled by a caller. Entries may be given in either orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct CooMatrix {
    pub n: usize,
    pub diag: Vec<f64>,
    pub entries: Vec<(usize, usize, f64)>,
}

impl CooMatrix {
    /// An `n x n` matrix with unit diagonal and no edges.
    pub fn new(n: usize) -> Self {
        CooMatrix {
            n,
            diag: vec![1.0; n],
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, i: usize, j: usize, w: f64) {
        self.entries.push((i, j, w));
    }

    /// Checks the symmetry, range and diagonal invariants and reports the
    /// first violation found.
    pub fn validate(&self) -> std::result::Result<(), Violation> {
        self.canonical().map(|_| ())
    }

    /// Validated, deduplicated upper-triangular entries with zeros removed.
    fn canonical(&self) -> std::result::Result<Vec<(usize, usize, f64)>, Violation> {
        if self.diag.len() != self.n {
            return Err(Violation::IndexOutOfBounds {
                i: self.diag.len().saturating_sub(1),
                j: self.diag.len().saturating_sub(1),
                n: self.n,
            });
        }
        for (i, &value) in self.diag.iter().enumerate() {
            if !(value.is_finite() && (MIN_DIAGONAL..=1.0).contains(&value)) {
                return Err(Violation::BadDiagonal { i, value });
            }
        }
        let mut seen: HashMap<(usize, usize), f64> = HashMap::with_capacity(self.entries.len());
        for &(i, j, w) in &self.entries {
            if i >= self.n || j >= self.n {
                return Err(Violation::IndexOutOfBounds { i, j, n: self.n });
            }
            if i == j {
                // Diagonal entries belong in `diag`.
                if w != self.diag[i] {
                    return Err(Violation::BadDiagonal { i, value: w });
                }
                continue;
            }
            if !(w.is_finite() && (0.0..=1.0).contains(&w)) {
                return Err(Violation::OutOfRange { i, j, w });
            }
            let key = (i.min(j), i.max(j));
            match seen.get(&key) {
                Some(&prev) if prev != w => return Err(Violation::Asymmetric { i, j }),
                Some(_) => {}
                None => {
                    seen.insert(key, w);
                }
            }
        }
        let mut out: Vec<_> = seen
            .into_iter()
            .filter(|&(_, w)| w > 0.0)
            .map(|((i, j), w)| (i, j, w))
            .collect();
        out.sort_unstable_by_key(|&(i, j, _)| (i, j));
        Ok(out)
    }

    pub fn into_matrix(self) -> Result<AffinityMatrix> {
        AffinityMatrix::try_from(self)
    }
}

/// Immutable `n x n` symmetric affinity matrix with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    diag: Vec<f64>,
    entries: Vec<(usize, usize, f64)>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl TryFrom<CooMatrix> for AffinityMatrix {
    type Error = Error;

    fn try_from(coo: CooMatrix) -> Result<Self> {
        let entries = coo.canonical()?;
        Ok(Self::from_canonical(coo.n, coo.diag, entries))
    }
}

impl AffinityMatrix {
    fn from_canonical(n: usize, diag: Vec<f64>, entries: Vec<(usize, usize, f64)>) -> Self {
        let mut degree = vec![0usize; n];
        for &(i, j, _) in &entries {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        for d in &degree {
            row_ptr.push(row_ptr.last().unwrap() + d);
        }
        let nnz = *row_ptr.last().unwrap();
        let mut cols = vec![0usize; nnz];
        let mut vals = vec![0.0; nnz];
        let mut fill = row_ptr[..n].to_vec();
        // Entries are sorted by (i, j), so each row's columns come out sorted:
        // lower-triangle columns (from earlier rows) are pushed before the
        // row's own upper-triangle columns.
        for &(i, j, w) in &entries {
            cols[fill[i]] = j;
            vals[fill[i]] = w;
            fill[i] += 1;
            cols[fill[j]] = i;
            vals[fill[j]] = w;
            fill[j] += 1;
        }
        for i in 0..n {
            let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
            debug_assert!(cols[lo..hi].windows(2).all(|w| w[0] < w[1]));
        }
        AffinityMatrix {
            n,
            diag,
            entries,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Trusted constructor for builders whose entries are already
    /// upper-triangular, sorted, in range and nonzero.
    pub(crate) fn from_sorted_upper(n: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        debug_assert!(entries
            .windows(2)
            .all(|w| (w[0].0, w[0].1) < (w[1].0, w[1].1)));
        debug_assert!(entries
            .iter()
            .all(|&(i, j, w)| i < j && j < n && w > 0.0 && w <= 1.0));
        Self::from_canonical(n, vec![1.0; n], entries)
    }

    /// Unit diagonal, no edges.
    pub fn identity(n: usize) -> Self {
        Self::from_canonical(n, vec![1.0; n], Vec::new())
    }

    /// Unit diagonal with the given weighted edges.
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut coo = CooMatrix::new(n);
        coo.entries.extend(edges);
        coo.into_matrix()
    }

    /// Builds from a dense row-major matrix; the upper triangle must mirror
    /// the lower one.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut coo = CooMatrix::new(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            coo.diag[i] = row[i];
            for (j, &w) in row.iter().enumerate() {
                if i != j && w != 0.0 {
                    coo.push(i, j, w);
                }
            }
        }
        coo.into_matrix()
    }

    /// Number of vertices `|V|`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored off-diagonal pairs `|E|`.
    pub fn edge_count(&self) -> usize {
        self.entries.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Upper-triangular entries `(i, j, w)`, `i < j`, sorted.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Neighbour indices (sorted) and weights of vertex `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// `M(i, j)`, zero when the pair is absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// True when `i == j` or the pair carries a nonzero score.
    pub fn is_connected(&self, i: usize, j: usize) -> bool {
        i == j || self.row(i).0.binary_search(&j).is_ok()
    }

    /// True when every stored off-diagonal weight is exactly 1.
    pub fn is_binary(&self) -> bool {
        self.entries.iter().all(|&(_, _, w)| w == 1.0)
    }

    /// Always succeeds for a constructed matrix; kept for symmetry with
    /// [`CooMatrix::validate`].
    pub fn validate(&self) -> std::result::Result<(), Violation> {
        self.to_coo().validate()
    }

    pub fn to_coo(&self) -> CooMatrix {
        CooMatrix {
            n: self.n,
            diag: self.diag.clone(),
            entries: self.entries.clone(),
        }
    }

    /// `out = M u`.
    pub fn mul_vec_into(&self, u: &[f64], out: &mut [f64]) {
        assert_eq!(u.len(), self.n);
        assert_eq!(out.len(), self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = self.diag[i] * u[i];
            for (&j, &w) in cols.iter().zip(vals) {
                acc += w * u[j];
            }
            out[i] = acc;
        }
    }

    /// Fused product used by the penalized operator: writes `M u` into
    /// `weighted` and the neighbour sums `N u` (binary adjacency) into
    /// `adjacent`.
    pub(crate) fn mul_vec_with_adjacency(
        &self,
        u: &[f64],
        weighted: &mut [f64],
        adjacent: &mut [f64],
    ) {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = self.diag[i] * u[i];
            let mut nbr = 0.0;
            for (&j, &w) in cols.iter().zip(vals) {
                let uj = u[j];
                acc += w * uj;
                nbr += uj;
            }
            weighted[i] = acc;
            adjacent[i] = nbr;
        }
    }

    /// Serializes to the plain-text matrix format. Diagonal lines are only
    /// written for entries different from 1.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "n {}", self.n).unwrap();
        for (i, &d) in self.diag.iter().enumerate() {
            if d != 1.0 {
                writeln!(s, "{i} {i} {d:?}").unwrap();
            }
        }
        for &(i, j, w) in &self.entries {
            writeln!(s, "{i} {j} {w:?}").unwrap();
        }
        s
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }
}

/// Parses the plain-text matrix format: `n <count>` followed by `i j w`
/// lines (0-based, `i <= j`). Blank lines and `#` comments are skipped.
pub fn read_matrix<R: BufRead>(reader: R) -> Result<CooMatrix> {
    let mut coo: Option<CooMatrix> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let body = line.split('#').next().unwrap().trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        let Some(coo) = coo.as_mut() else {
            match fields.as_slice() {
                ["n", count] => {
                    let n = count.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("bad vertex count '{count}'"),
                    })?;
                    coo = Some(CooMatrix::new(n));
                    continue;
                }
                _ => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "expected header 'n <count>'".into(),
                    })
                }
            }
        };
        let [i, j, w] = fields.as_slice() else {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 'i j w', got '{body}'"),
            });
        };
        let bad = |what: &str| Error::Parse {
            line: lineno,
            msg: format!("bad {what} in '{body}'"),
        };
        let i: usize = i.parse().map_err(|_| bad("row index"))?;
        let j: usize = j.parse().map_err(|_| bad("column index"))?;
        let w: f64 = w.parse().map_err(|_| bad("weight"))?;
        if i > j {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("entry ({i},{j}) must satisfy i <= j"),
            });
        }
        if i == j {
            if i >= coo.n {
                return Err(Error::Violation(Violation::IndexOutOfBounds {
                    i,
                    j,
                    n: coo.n,
                }));
            }
            coo.diag[i] = w;
        } else {
            coo.push(i, j, w);
        }
    }
    coo.ok_or(Error::Parse {
        line: 0,
        msg: "empty matrix file".into(),
    })
}

pub fn parse_matrix(text: &str) -> Result<CooMatrix> {
    read_matrix(text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn eq4() -> AffinityMatrix {
        AffinityMatrix::from_dense(&[
            vec![1.0, 1.0, 0.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.2, 0.2],
            vec![0.0, 0.0, 0.2, 1.0, 0.2],
            vec![0.0, 0.0, 0.2, 0.2, 1.0],
        ])
        .unwrap()
    }

    #[test]
    fn identity_is_valid() {
        let m = AffinityMatrix::identity(3);
        assert_eq!(m.validate(), Ok(()));
        assert_eq!(m.edge_count(), 0);
        assert_eq!(CooMatrix::new(3).validate(), Ok(()));
    }

    #[test]
    fn out_of_range_weight_reported() {
        let mut coo = CooMatrix::new(3);
        coo.push(0, 1, 1.5);
        assert_eq!(
            coo.validate(),
            Err(Violation::OutOfRange { i: 0, j: 1, w: 1.5 })
        );
        let mut coo = CooMatrix::new(3);
        coo.push(0, 2, -0.1);
        assert!(matches!(coo.validate(), Err(Violation::OutOfRange { .. })));
    }

    #[test]
    fn bad_diagonal_reported() {
        let mut coo = CooMatrix::new(3);
        coo.diag[2] = 0.0;
        assert_eq!(
            coo.validate(),
            Err(Violation::BadDiagonal { i: 2, value: 0.0 })
        );
        coo.diag[2] = 1e-7;
        assert!(coo.validate().is_err());
        coo.diag[2] = 1e-6;
        assert!(coo.validate().is_ok());
    }

    #[test]
    fn asymmetric_pair_reported() {
        let mut coo = CooMatrix::new(3);
        coo.push(0, 1, 0.5);
        coo.push(1, 0, 0.6);
        assert_eq!(coo.validate(), Err(Violation::Asymmetric { i: 1, j: 0 }));
        let mut coo = CooMatrix::new(3);
        coo.push(0, 1, 0.5);
        coo.push(1, 0, 0.5);
        let m = coo.into_matrix().unwrap();
        assert_eq!(m.edge_count(), 1);
    }

    #[test]
    fn out_of_bounds_reported() {
        let mut coo = CooMatrix::new(2);
        coo.push(0, 2, 0.5);
        assert!(matches!(
            coo.validate(),
            Err(Violation::IndexOutOfBounds { .. })
        ));
    }

    #[test]
    fn zero_weights_are_not_stored() {
        let m = AffinityMatrix::from_edges(3, [(0, 1, 0.0), (1, 2, 0.3)]).unwrap();
        assert_eq!(m.edge_count(), 1);
        assert!(!m.is_connected(0, 1));
        assert_eq!(m.get(2, 1), 0.3);
    }

    #[test]
    fn csr_rows_are_symmetric() {
        let m = eq4();
        assert_eq!(m.edge_count(), 4);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        assert_eq!(m.row(3).0, &[2, 4]);
    }

    #[test]
    fn matvec_matches_dense() {
        let m = eq4();
        let u = [0.1, 0.2, 0.3, 0.4, 0.5];
        let mut out = [0.0; 5];
        m.mul_vec_into(&u, &mut out);
        for i in 0..5 {
            let dense: f64 = (0..5).map(|j| m.get(i, j) * u[j]).sum();
            assert!((out[i] - dense).abs() < 1e-15);
        }
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_matrix("5\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_matrix("n 2\n1 0 0.5\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_matrix("n 2\n0 1 x\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(parse_matrix(""), Err(Error::Parse { .. })));
    }

    #[test]
    fn parse_with_diagonal_and_comments() {
        let coo = parse_matrix("# affinity\nn 3\n\n0 0 0.5\n0 2 0.25\n").unwrap();
        let m = coo.into_matrix().unwrap();
        assert_eq!(m.diag(), &[0.5, 1.0, 1.0]);
        assert_eq!(m.get(2, 0), 0.25);
    }

    fn arb_matrix() -> impl Strategy<Value = AffinityMatrix> {
        (1usize..12).prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec(MIN_DIAGONAL..=1.0f64, n),
                proptest::collection::vec(((0..n), (0..n), 0.0..=1.0f64), 0..40),
            )
                .prop_map(|(n, diag, raw)| {
                    let mut seen = std::collections::HashSet::new();
                    let mut coo = CooMatrix::new(n);
                    coo.diag = diag;
                    for (i, j, w) in raw {
                        if i != j && seen.insert((i.min(j), i.max(j))) {
                            coo.push(i, j, w);
                        }
                    }
                    coo.into_matrix().unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn text_round_trip_is_bit_exact(m in arb_matrix()) {
            let text = m.to_text();
            let back = parse_matrix(&text).unwrap().into_matrix().unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.to_text(), text);
        }
    }
}

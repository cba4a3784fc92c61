//! Robust data association by densest fully-connected subgraph search.
//!
//! Putative associations between two observation sets become vertices of a
//! consistency graph whose weighted adjacency (the affinity matrix) scores
//! how well pairs of associations preserve a geometric invariant. The solver
//! relaxes the search for the densest pairwise-consistent subset to a
//! penalized quadratic program on the nonnegative unit sphere and rounds the
//! result back to a vertex set.

pub mod affinity;
pub mod benchmark;
pub mod error;
pub mod ingest;
pub mod invariants;
pub mod oracle;
pub mod scoring;
pub mod solver;

pub use affinity::{AffinityMatrix, CooMatrix};
pub use error::{Error, Result, Violation};
pub use invariants::{AssociationSet, LineSet, PlaneSet, PointSet};
pub use oracle::{exact_densest, exact_max_clique, OracleResult};
pub use scoring::{ScoreKind, ScoringConfig};
pub use solver::{solve, Solution, SolverParams};

//! Affinity matrices from putative associations between observation sets.
//!
//! Each association `k = (i, j)` links element `i` of the first set to
//! element `j` of the second. Two associations are scored by comparing a
//! transformation-invariant quantity measured on both sides: the pairwise
//! distance for point clouds, the inter-line angle for lines and the angle
//! between normals for planes. Associations that share a source or a target
//! are mutually inconsistent and are never connected.

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::affinity::AffinityMatrix;
use crate::error::{Error, Result};
use crate::scoring::ScoringConfig;

/// Pairwise scoring is quadratic in the number of associations; larger
/// problems need [`BuildOptions::allow_large`].
pub const MAX_PAIRWISE_ASSOCIATIONS: usize = 20_000;

/// Tolerance on unit-norm directions and normals.
pub const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AssociationSet {
    pairs: Vec<(usize, usize)>,
    inliers: Option<Vec<bool>>,
}

impl AssociationSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            if !seen.insert((i, j)) {
                return Err(Error::DuplicateAssociation(i, j));
            }
        }
        Ok(AssociationSet {
            pairs,
            inliers: None,
        })
    }

    /// Associations with a ground-truth inlier mask.
    pub fn with_truth(pairs: Vec<(usize, usize)>, inliers: Vec<bool>) -> Result<Self> {
        if inliers.len() != pairs.len() {
            return Err(Error::DimensionMismatch {
                expected: pairs.len(),
                got: inliers.len(),
            });
        }
        let mut set = Self::new(pairs)?;
        set.inliers = Some(inliers);
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn truth(&self) -> Option<&[bool]> {
        self.inliers.as_deref()
    }

    /// Indices of the ground-truth inlier associations.
    pub fn inlier_indices(&self) -> Vec<usize> {
        self.inliers
            .as_ref()
            .map(|m| (0..m.len()).filter(|&k| m[k]).collect())
            .unwrap_or_default()
    }

    pub fn check_bounds(&self, n_src: usize, n_dst: usize) -> Result<()> {
        for &(i, j) in &self.pairs {
            if i >= n_src {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: n_src,
                });
            }
            if j >= n_dst {
                return Err(Error::IndexOutOfRange {
                    index: j,
                    len: n_dst,
                });
            }
        }
        Ok(())
    }

    /// True when associations `a` and `b` share a source or a target.
    pub fn conflicts(&self, a: usize, b: usize) -> bool {
        let (p, q) = (self.pairs[a], self.pairs[b]);
        p.0 == q.0 || p.1 == q.1
    }
}

/// Every `(i, j)` with `i < n_src`, `j < n_dst`, in row-major order.
pub fn all_to_all(n_src: usize, n_dst: usize) -> Result<AssociationSet> {
    if n_src == 0 || n_dst == 0 {
        return Err(Error::Parameter("all-to-all needs nonempty sets".into()));
    }
    let total = n_src
        .checked_mul(n_dst)
        .ok_or_else(|| Error::Parameter(format!("{n_src} x {n_dst} associations overflow")))?;
    let mut pairs = Vec::with_capacity(total);
    for i in 0..n_src {
        for j in 0..n_dst {
            pairs.push((i, j));
        }
    }
    Ok(AssociationSet {
        pairs,
        inliers: None,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    pub points: Vec<Vector3<f64>>,
}

impl PointSet {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        PointSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn check_unit(vectors: &[Vector3<f64>]) -> Result<()> {
    for (index, v) in vectors.iter().enumerate() {
        let norm = v.norm();
        if !((norm - 1.0).abs() <= UNIT_TOL) {
            return Err(Error::NonUnit { index, norm });
        }
    }
    Ok(())
}

/// Lines given by a point and a unit direction. The point is carried for
/// callers but does not enter the angle invariant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LineSet {
    points: Vec<Vector3<f64>>,
    directions: Vec<Vector3<f64>>,
}

impl LineSet {
    pub fn new(points: Vec<Vector3<f64>>, directions: Vec<Vector3<f64>>) -> Result<Self> {
        if points.len() != directions.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: directions.len(),
            });
        }
        check_unit(&directions)?;
        Ok(LineSet { points, directions })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn directions(&self) -> &[Vector3<f64>] {
        &self.directions
    }
}

/// Planes `n' x = d` with unit normal `n` and origin distance `d`. Normals
/// are taken as consistently oriented; only they enter the invariant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlaneSet {
    normals: Vec<Vector3<f64>>,
    offsets: Vec<f64>,
}

impl PlaneSet {
    pub fn new(normals: Vec<Vector3<f64>>, offsets: Vec<f64>) -> Result<Self> {
        if normals.len() != offsets.len() {
            return Err(Error::DimensionMismatch {
                expected: normals.len(),
                got: offsets.len(),
            });
        }
        check_unit(&normals)?;
        Ok(PlaneSet { normals, offsets })
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BuildOptions {
    /// Lift the [`MAX_PAIRWISE_ASSOCIATIONS`] guard.
    pub allow_large: bool,
}

/// Angle between unit vectors, with the cosine clamped into `[-1, 1]`.
fn angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

/// Angle between undirected lines, in `[0, pi/2]`.
fn line_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let t = angle(a, b);
    t.min(PI - t)
}

/// Scores every association pair with `residual(k, l)`; pairs sharing an
/// endpoint are left out. Rows are scored in parallel and assembled in
/// index order.
fn build_pairwise<F>(
    assoc: &AssociationSet,
    cfg: &ScoringConfig,
    opts: &BuildOptions,
    residual: F,
) -> Result<AffinityMatrix>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    cfg.check()?;
    let m = assoc.len();
    if m > MAX_PAIRWISE_ASSOCIATIONS && !opts.allow_large {
        return Err(Error::TooManyAssociations {
            m,
            limit: MAX_PAIRWISE_ASSOCIATIONS,
        });
    }
    let rows: Vec<Result<Vec<(usize, usize, f64)>>> = (0..m)
        .into_par_iter()
        .map(|k| {
            let mut row = Vec::new();
            for l in k + 1..m {
                if assoc.conflicts(k, l) {
                    continue;
                }
                let w = cfg.score(residual(k, l))?;
                if w > 0.0 {
                    row.push((k, l, w));
                }
            }
            Ok(row)
        })
        .collect();
    let mut entries = Vec::new();
    for row in rows {
        entries.extend(row?);
    }
    Ok(AffinityMatrix::from_sorted_upper(m, entries))
}

/// Pairwise-distance consistency: `s(||a - b|| - ||a' - b'||)`.
pub fn affinity_points(
    p: &PointSet,
    q: &PointSet,
    assoc: &AssociationSet,
    cfg: &ScoringConfig,
) -> Result<AffinityMatrix> {
    affinity_points_with(p, q, assoc, cfg, &BuildOptions::default())
}

pub fn affinity_points_with(
    p: &PointSet,
    q: &PointSet,
    assoc: &AssociationSet,
    cfg: &ScoringConfig,
    opts: &BuildOptions,
) -> Result<AffinityMatrix> {
    assoc.check_bounds(p.len(), q.len())?;
    let pairs = assoc.pairs();
    build_pairwise(assoc, cfg, opts, |k, l| {
        let (a, a2) = pairs[k];
        let (b, b2) = pairs[l];
        (p.points[a] - p.points[b]).norm() - (q.points[a2] - q.points[b2]).norm()
    })
}

/// Inter-line angle consistency. Directions are sign-free, so each angle is
/// folded into `[0, pi/2]` before differencing.
pub fn affinity_lines(
    l1: &LineSet,
    l2: &LineSet,
    assoc: &AssociationSet,
    cfg: &ScoringConfig,
) -> Result<AffinityMatrix> {
    affinity_lines_with(l1, l2, assoc, cfg, &BuildOptions::default())
}

pub fn affinity_lines_with(
    l1: &LineSet,
    l2: &LineSet,
    assoc: &AssociationSet,
    cfg: &ScoringConfig,
    opts: &BuildOptions,
) -> Result<AffinityMatrix> {
    assoc.check_bounds(l1.len(), l2.len())?;
    let pairs = assoc.pairs();
    let (v, w) = (l1.directions(), l2.directions());
    build_pairwise(assoc, cfg, opts, |k, l| {
        let (a, a2) = pairs[k];
        let (b, b2) = pairs[l];
        line_angle(&v[a], &v[b]) - line_angle(&w[a2], &w[b2])
    })
}

/// Angle-between-normals consistency.
pub fn affinity_planes(
    p1: &PlaneSet,
    p2: &PlaneSet,
    assoc: &AssociationSet,
    cfg: &ScoringConfig,
) -> Result<AffinityMatrix> {
    affinity_planes_with(p1, p2, assoc, cfg, &BuildOptions::default())
}

pub fn affinity_planes_with(
    p1: &PlaneSet,
    p2: &PlaneSet,
    assoc: &AssociationSet,
    cfg: &ScoringConfig,
    opts: &BuildOptions,
) -> Result<AffinityMatrix> {
    assoc.check_bounds(p1.len(), p2.len())?;
    let pairs = assoc.pairs();
    let (n1, n2) = (p1.normals(), p2.normals());
    build_pairwise(assoc, cfg, opts, |k, l| {
        let (a, a2) = pairs[k];
        let (b, b2) = pairs[l];
        angle(&n1[a], &n1[b]) - angle(&n2[a2], &n2[b2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ScoringConfig;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                let v = Vector3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                );
                v.normalize()
            })
            .collect()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
        let axis = Unit::new_normalize(Vector3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        ));
        Rotation3::from_axis_angle(&axis, rng.random::<f64>() * 2.0 * PI)
    }

    #[test]
    fn all_to_all_examples() {
        let a = all_to_all(2, 2).unwrap();
        assert_eq!(a.pairs(), &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(all_to_all(1, 3).unwrap().len(), 3);
        assert_eq!(all_to_all(1000, 1200).unwrap().len(), 1_200_000);
        assert!(all_to_all(0, 3).is_err());
        assert!(all_to_all(usize::MAX, 2).is_err());
    }

    #[test]
    fn scoring_guard_on_large_association_sets() {
        let big = all_to_all(1000, 1200).unwrap();
        let p = PointSet::new(vec![Vector3::zeros(); 1000]);
        let q = PointSet::new(vec![Vector3::zeros(); 1200]);
        let cfg = ScoringConfig::binary(0.1).unwrap();
        assert!(matches!(
            affinity_points(&p, &q, &big, &cfg),
            Err(Error::TooManyAssociations { m: 1_200_000, .. })
        ));
    }

    #[test]
    fn duplicate_associations_rejected() {
        assert!(matches!(
            AssociationSet::new(vec![(0, 1), (0, 1)]),
            Err(Error::DuplicateAssociation(0, 1))
        ));
    }

    #[test]
    fn index_out_of_range_rejected() {
        let p = PointSet::new(vec![Vector3::zeros(); 2]);
        let a = AssociationSet::new(vec![(0, 0), (2, 1)]).unwrap();
        let cfg = ScoringConfig::binary(0.1).unwrap();
        assert!(matches!(
            affinity_points(&p, &p, &a, &cfg),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn rigid_copy_scores_one_except_distinctness() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(6, &mut rng);
        let rot = random_rotation(&mut rng);
        let t = Vector3::new(0.3, -2.0, 1.0);
        let moved: Vec<_> = pts.iter().map(|x| rot * x + t).collect();
        let mut pairs: Vec<(usize, usize)> = (0..6).map(|i| (i, i)).collect();
        pairs.push((0, 1));
        let assoc = AssociationSet::new(pairs).unwrap();
        let cfg = ScoringConfig::weighted(0.08, 0.03).unwrap();
        let m = affinity_points(&PointSet::new(pts), &PointSet::new(moved), &assoc, &cfg).unwrap();
        for k in 0..6 {
            for l in k + 1..6 {
                assert!((m.get(k, l) - 1.0).abs() < 1e-12);
            }
        }
        // (0,1) shares source 0 with (0,0) and target 1 with (1,1).
        assert_eq!(m.get(6, 0), 0.0);
        assert_eq!(m.get(6, 1), 0.0);
        assert_eq!(m.diag(), &[1.0; 7]);
    }

    #[test]
    fn shared_target_is_inconsistent() {
        // a -> a' and b -> a' with equal distances still conflict.
        let p = PointSet::new(vec![Vector3::zeros(), Vector3::x()]);
        let q = PointSet::new(vec![Vector3::zeros(), Vector3::x()]);
        let assoc = AssociationSet::new(vec![(0, 0), (1, 0)]).unwrap();
        let cfg = ScoringConfig::binary(10.0).unwrap();
        let m = affinity_points(&p, &q, &assoc, &cfg).unwrap();
        assert_eq!(m.edge_count(), 0);
    }

    #[test]
    fn line_examples() {
        let dirs = vec![
            Vector3::x(),
            Vector3::y(),
            Vector3::new(1.0, 1.0, 0.0).normalize(),
        ];
        let l = LineSet::new(vec![Vector3::zeros(); 3], dirs).unwrap();
        let assoc = AssociationSet::new(vec![(0, 0), (1, 1), (2, 2)]).unwrap();
        let cfg = ScoringConfig::weighted(0.1, 0.05).unwrap();
        let m = affinity_lines(&l, &l, &assoc, &cfg).unwrap();
        assert_eq!(m.edge_count(), 3);
        assert!(m.entries().iter().all(|e| e.2 == 1.0));

        // Perpendicular on one side, parallel on the other.
        let l2 = LineSet::new(vec![Vector3::zeros(); 2], vec![Vector3::x(), Vector3::x()]).unwrap();
        let a2 = AssociationSet::new(vec![(0, 0), (1, 1)]).unwrap();
        let m = affinity_lines(&l, &l2, &a2, &cfg).unwrap();
        assert_eq!(m.get(0, 1), 0.0);

        // Flipped direction is the same line.
        let l3 =
            LineSet::new(vec![Vector3::zeros(); 2], vec![-Vector3::x(), Vector3::y()]).unwrap();
        let m = affinity_lines(&l, &l3, &a2, &cfg).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
    }

    #[test]
    fn non_unit_direction_rejected() {
        assert!(matches!(
            LineSet::new(vec![Vector3::zeros()], vec![Vector3::new(1.0, 1.0, 0.0)]),
            Err(Error::NonUnit { index: 0, .. })
        ));
        assert!(PlaneSet::new(vec![Vector3::new(0.0, 0.0, 2.0)], vec![0.0]).is_err());
    }

    #[test]
    fn plane_examples() {
        let normals = vec![Vector3::z(), -Vector3::z(), Vector3::x()];
        let planes = PlaneSet::new(normals, vec![1.0, 2.0, 0.5]).unwrap();
        let assoc = AssociationSet::new(vec![(0, 0), (1, 1), (2, 2)]).unwrap();
        let cfg = ScoringConfig::binary(0.05).unwrap();
        let m = affinity_planes(&planes, &planes, &assoc, &cfg).unwrap();
        // Antipodal normals give acos(-1) = pi on both sides.
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.edge_count(), 3);
    }

    #[test]
    fn rotated_lines_and_planes_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dirs = random_unit(12, &mut rng);
        let rot = random_rotation(&mut rng);
        let rotated: Vec<_> = dirs.iter().map(|v| rot * v).collect();
        for k in 0..12 {
            for l in 0..12 {
                let r1 = line_angle(&dirs[k], &dirs[l]) - line_angle(&rotated[k], &rotated[l]);
                let r2 = angle(&dirs[k], &dirs[l]) - angle(&rotated[k], &rotated[l]);
                assert!(r1.abs() < 1e-9 && r2.abs() < 1e-9 || k == l);
            }
        }
        let l1 = LineSet::new(vec![Vector3::zeros(); 12], dirs.clone()).unwrap();
        let l2 = LineSet::new(vec![Vector3::zeros(); 12], rotated.clone()).unwrap();
        let assoc = AssociationSet::new((0..12).map(|i| (i, i)).collect()).unwrap();
        let cfg = ScoringConfig::binary(1e-6).unwrap();
        assert_eq!(
            affinity_lines(&l1, &l2, &assoc, &cfg).unwrap().edge_count(),
            66
        );
        let p1 = PlaneSet::new(dirs, vec![0.0; 12]).unwrap();
        let p2 = PlaneSet::new(rotated, vec![0.0; 12]).unwrap();
        assert_eq!(
            affinity_planes(&p1, &p2, &assoc, &cfg)
                .unwrap()
                .edge_count(),
            66
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn point_affinity_is_transform_invariant(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_points(8, &mut rng);
            let q = random_points(9, &mut rng);
            let pairs: Vec<(usize, usize)> = (0..14)
                .map(|_| (rng.random_range(0..8), rng.random_range(0..9)))
                .collect::<HashSet<_>>()
                .into_iter()
                .collect();
            let assoc = AssociationSet::new(pairs).unwrap();
            let rot = random_rotation(&mut rng);
            let t = Vector3::new(rng.random(), rng.random(), rng.random());
            let q_moved: Vec<_> = q.iter().map(|x| rot * x + t).collect();
            let cfg = ScoringConfig::weighted(0.3, 0.1).unwrap();
            let p = PointSet::new(p);
            let a = affinity_points(&p, &PointSet::new(q), &assoc, &cfg).unwrap();
            let b = affinity_points(&p, &PointSet::new(q_moved), &assoc, &cfg).unwrap();
            for i in 0..assoc.len() {
                for j in 0..assoc.len() {
                    prop_assert!((a.get(i, j) - b.get(i, j)).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn distinctness_holds_and_permutation_is_consistent(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = PointSet::new(random_points(6, &mut rng));
            let q = PointSet::new(random_points(6, &mut rng));
            let assoc = all_to_all(6, 6).unwrap();
            let cfg = ScoringConfig::binary(0.2).unwrap();
            let m = affinity_points(&p, &q, &assoc, &cfg).unwrap();
            for k in 0..assoc.len() {
                for l in 0..assoc.len() {
                    if k != l && assoc.conflicts(k, l) {
                        prop_assert_eq!(m.get(k, l), 0.0);
                    }
                }
            }
            let mut perm: Vec<usize> = (0..assoc.len()).collect();
            perm.shuffle(&mut rng);
            let shuffled = AssociationSet::new(perm.iter().map(|&k| assoc.pairs()[k]).collect()).unwrap();
            let mp = affinity_points(&p, &q, &shuffled, &cfg).unwrap();
            for a in 0..perm.len() {
                for b in 0..perm.len() {
                    prop_assert_eq!(mp.get(a, b), m.get(perm[a], perm[b]));
                }
            }
        }

        #[test]
        fn angles_never_nan(v in proptest::collection::vec(-1.0f64..1.0, 6)) {
            let a = Vector3::new(v[0], v[1], v[2]);
            let b = Vector3::new(v[3], v[4], v[5]);
            if a.norm() > 1e-3 && b.norm() > 1e-3 {
                let (a, b) = (a.normalize(), b.normalize());
                prop_assert!(!angle(&a, &b).is_nan());
                prop_assert!(!angle(&a, &a).is_nan());
                prop_assert!(!angle(&a, &-a).is_nan());
                prop_assert!(!line_angle(&a, &b).is_nan());
            }
        }
    }
}

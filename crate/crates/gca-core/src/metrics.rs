//! Point-cloud evaluation suite: Chamfer distance and the five aggregate
//! metrics over sets of shapes.
//!
//! Chamfer is the unnormalized bidirectional sum of squared nearest-neighbor
//! distances exactly as printed in the definitions here; numbers are
//! comparable within this crate, not to externally normalized variants.
//! Nearest neighbors run through a small exact kd-tree; the brute-force
//! double-loop twins live in [`crate::check`] and every function here must
//! agree with its twin bit-for-bit on small instances.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::State;
use crate::rng::Rng;
use rand::Rng as _;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("point set must be non-empty")]
    EmptyPointSet,
    #[error("point coordinates must be finite")]
    NonFiniteCoordinate,
    #[error("need at least {needed} completions per partial, got {got}")]
    KTooSmall { needed: usize, got: usize },
}

/// A finite, non-empty 3D point cloud with a provenance label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<[f64; 3]>,
    provenance: String,
}

impl PointSet {
    pub fn new(points: Vec<[f64; 3]>, provenance: impl Into<String>) -> Result<Self, MetricsError> {
        if points.is_empty() {
            return Err(MetricsError::EmptyPointSet);
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFiniteCoordinate);
        }
        Ok(PointSet {
            points,
            provenance: provenance.into(),
        })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }
}

/// Occupied-cell coordinates as points, optionally mean-centered, optionally
/// resampled uniformly with replacement to exactly `sample_k` points.
pub fn voxels_to_points(
    s: &State,
    center: bool,
    sample_k: Option<usize>,
    rng: &mut Rng,
    provenance: impl Into<String>,
) -> Result<PointSet, MetricsError> {
    if s.is_empty() {
        return Err(MetricsError::EmptyPointSet);
    }
    let mut points: Vec<[f64; 3]> = s
        .iter()
        .map(|c| [f64::from(c.x), f64::from(c.y), f64::from(c.z)])
        .collect();
    if center {
        let n = points.len() as f64;
        let mut mean = [0.0; 3];
        for p in &points {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        for p in &mut points {
            for (v, m) in p.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
    }
    if let Some(k) = sample_k {
        let sampled: Vec<[f64; 3]> = (0..k)
            .map(|_| points[rng.gen_range(0..points.len())])
            .collect();
        points = sampled;
    }
    PointSet::new(points, provenance)
}

#[inline]
fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Exact 3D kd-tree: points rearranged so each subtree's root sits at the
/// midpoint of its slice, axes cycling with depth.
struct KdTree {
    pts: Vec<[f64; 3]>,
}

impl KdTree {
    fn build(set: &PointSet) -> Self {
        let mut pts = set.points().to_vec();
        Self::arrange(&mut pts, 0);
        KdTree { pts }
    }

    fn arrange(slice: &mut [[f64; 3]], axis: usize) {
        if slice.len() <= 1 {
            return;
        }
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |a, b| {
            a[axis].partial_cmp(&b[axis]).expect("finite coordinates")
        });
        let next = (axis + 1) % 3;
        let (left, rest) = slice.split_at_mut(mid);
        Self::arrange(left, next);
        Self::arrange(&mut rest[1..], next);
    }

    fn nearest_sq(&self, q: [f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        Self::search(&self.pts, 0, q, &mut best);
        best
    }

    fn search(slice: &[[f64; 3]], axis: usize, q: [f64; 3], best: &mut f64) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let d = sq_dist(slice[mid], q);
        if d < *best {
            *best = d;
        }
        let delta = q[axis] - slice[mid][axis];
        let next = (axis + 1) % 3;
        let (near, far) = if delta < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        Self::search(near, next, q, best);
        if delta * delta < *best {
            Self::search(far, next, q, best);
        }
    }
}

/// Chamfer distance: `Σ_x min_y ‖x−y‖² + Σ_y min_x ‖x−y‖²`, unnormalized.
pub fn chamfer(x: &PointSet, y: &PointSet) -> f64 {
    let ty = KdTree::build(y);
    let tx = KdTree::build(x);
    let fwd: f64 = x.points().iter().map(|&p| ty.nearest_sq(p)).sum();
    let bwd: f64 = y.points().iter().map(|&q| tx.nearest_sq(q)).sum();
    fwd + bwd
}

/// All pairwise Chamfer distances, rows = `a`, cols = `b`.
fn chamfer_matrix(a: &[PointSet], b: &[PointSet]) -> Vec<Vec<f64>> {
    a.par_iter()
        .map(|x| b.iter().map(|y| chamfer(x, y)).collect())
        .collect()
}

/// Minimal matching distance: mean over references of the closest generated
/// shape's Chamfer distance. Quality; lower is better.
pub fn mmd(gen: &[PointSet], reference: &[PointSet]) -> f64 {
    assert!(!gen.is_empty() && !reference.is_empty());
    let d = chamfer_matrix(reference, gen);
    let total: f64 = d
        .iter()
        .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
        .sum();
    total / reference.len() as f64
}

/// Coverage: fraction of references matched as some generated shape's
/// nearest neighbor (argmin ties to the lowest reference index). Diversity;
/// higher is better.
pub fn cov(gen: &[PointSet], reference: &[PointSet]) -> f64 {
    assert!(!gen.is_empty() && !reference.is_empty());
    let d = chamfer_matrix(gen, reference);
    let mut matched = vec![false; reference.len()];
    for row in &d {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if v < best_d {
                best_d = v;
                best = j;
            }
        }
        matched[best] = true;
    }
    matched.iter().filter(|&&m| m).count() as f64 / reference.len() as f64
}

/// Leave-one-out 1-NN two-sample classification accuracy over `gen ∪ ref`,
/// as a percentage; 50% means the two sets are indistinguishable.
///
/// Nearest-neighbor ties break deterministically: lower distance first, then
/// generated before reference, then lower index.
pub fn one_nna(gen: &[PointSet], reference: &[PointSet]) -> f64 {
    assert!(!gen.is_empty() && !reference.is_empty());
    let pool: Vec<&PointSet> = gen.iter().chain(reference.iter()).collect();
    let n = pool.len();
    let n_gen = gen.len();
    let d: Vec<Vec<f64>> = pool
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            pool.iter()
                .enumerate()
                .map(|(j, y)| if i == j { f64::INFINITY } else { chamfer(x, y) })
                .collect()
        })
        .collect();
    let mut correct = 0usize;
    for (i, row) in d.iter().enumerate() {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if v < best_d {
                best_d = v;
                best = j;
            }
        }
        if (best < n_gen) == (i < n_gen) {
            correct += 1;
        }
    }
    100.0 * correct as f64 / n as f64
}

/// Total mutual difference: mean over partials of the average pairwise
/// Chamfer distance among each partial's `k` completions. Diversity; higher
/// is better.
pub fn tmd(completions_per_partial: &[Vec<PointSet>]) -> Result<f64, MetricsError> {
    assert!(!completions_per_partial.is_empty());
    for comps in completions_per_partial {
        if comps.len() < 2 {
            return Err(MetricsError::KTooSmall {
                needed: 2,
                got: comps.len(),
            });
        }
    }
    let total: f64 = completions_per_partial
        .iter()
        .map(|comps| {
            let k = comps.len();
            let mut sum = 0.0;
            for i in 0..k {
                for j in (i + 1)..k {
                    sum += chamfer(&comps[i], &comps[j]);
                }
            }
            2.0 * sum / (k as f64 * (k as f64 - 1.0))
        })
        .sum();
    Ok(total / completions_per_partial.len() as f64)
}

/// Unidirectional Hausdorff fidelity: mean over completions of
/// `max_{p∈partial} min_{c∈completion} ‖p−c‖₂` (unsquared). Lower is better.
pub fn uhd(partial: &PointSet, completions: &[PointSet]) -> f64 {
    assert!(!completions.is_empty());
    let total: f64 = completions
        .iter()
        .map(|c| {
            let tree = KdTree::build(c);
            partial
                .points()
                .iter()
                .map(|&p| tree.nearest_sq(p))
                .fold(0.0f64, f64::max)
                .sqrt()
        })
        .sum();
    total / completions.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check;
    use crate::grid::Cell;
    use proptest::prelude::*;

    fn ps(points: &[(f64, f64, f64)]) -> PointSet {
        PointSet::new(points.iter().map(|&(x, y, z)| [x, y, z]).collect(), "t").unwrap()
    }

    #[test]
    fn voxels_to_points_centers() {
        let s = State::new(vec![Cell::new(0, 0, 0), Cell::new(2, 0, 0)], 8).unwrap();
        let mut rng = crate::rng::stream(0, "t", 0);
        let p = voxels_to_points(&s, true, None, &mut rng, "s").unwrap();
        assert_eq!(p.points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn voxels_to_points_identity_without_options() {
        let s = State::new(vec![Cell::new(1, 2, 3), Cell::new(4, 5, 6)], 8).unwrap();
        let mut rng = crate::rng::stream(0, "t", 0);
        let p = voxels_to_points(&s, false, None, &mut rng, "s").unwrap();
        assert_eq!(p.points(), &[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    }

    #[test]
    fn voxels_to_points_samples_members() {
        let cells: Vec<Cell> = (0..50)
            .flat_map(|i| (0..10).map(move |j| Cell::new(i, j, (i + j) % 8)))
            .collect();
        let s = State::new(cells, 64).unwrap();
        let mut rng = crate::rng::stream(3, "t", 0);
        let p = voxels_to_points(&s, false, Some(2048), &mut rng, "s").unwrap();
        assert_eq!(p.len(), 2048);
        for &[x, y, z] in p.points() {
            assert!(s.contains(Cell::new(x as i32, y as i32, z as i32)));
        }
    }

    #[test]
    fn chamfer_identity_and_hand_value() {
        let a = ps(&[(0.0, 0.0, 0.0), (1.0, 2.0, 3.0)]);
        assert_eq!(chamfer(&a, &a), 0.0);
        let x = ps(&[(0.0, 0.0, 0.0)]);
        let y = ps(&[(3.0, 4.0, 0.0)]);
        assert_eq!(chamfer(&x, &y), 50.0);
        assert_eq!(chamfer(&y, &x), 50.0);
    }

    #[test]
    fn mmd_zero_when_gen_covers_ref() {
        let a = ps(&[(0.0, 0.0, 0.0)]);
        let b = ps(&[(5.0, 0.0, 0.0)]);
        let extra = ps(&[(9.0, 9.0, 9.0)]);
        let gen = vec![a.clone(), b.clone(), extra];
        let reference = vec![a, b];
        assert_eq!(mmd(&gen, &reference), 0.0);
    }

    #[test]
    fn mmd_single_reference_is_min() {
        let a = ps(&[(0.0, 0.0, 0.0)]);
        let b = ps(&[(1.0, 0.0, 0.0)]);
        let c = ps(&[(4.0, 0.0, 0.0)]);
        let v = mmd(&[b.clone(), c.clone()], std::slice::from_ref(&a));
        assert_eq!(v, chamfer(&b, &a).min(chamfer(&c, &a)));
    }

    #[test]
    fn cov_identity_and_collapse() {
        let a = ps(&[(0.0, 0.0, 0.0)]);
        let b = ps(&[(5.0, 0.0, 0.0)]);
        let c = ps(&[(0.0, 7.0, 0.0)]);
        let reference = vec![a.clone(), b.clone(), c.clone()];
        assert_eq!(cov(&reference, &reference), 1.0);
        // Every generated shape closest to `a` alone.
        let near_a = vec![ps(&[(0.1, 0.0, 0.0)]), ps(&[(0.0, 0.1, 0.0)])];
        let v = cov(&near_a, &reference);
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn one_nna_separated_clusters_is_100() {
        let gen = vec![ps(&[(0.0, 0.0, 0.0)]), ps(&[(0.5, 0.0, 0.0)])];
        let reference = vec![ps(&[(100.0, 0.0, 0.0)]), ps(&[(100.5, 0.0, 0.0)])];
        assert_eq!(one_nna(&gen, &reference), 100.0);
    }

    #[test]
    fn one_nna_interleaved_is_0() {
        // 1-D interleave: every sample's nearest neighbor is opposite-set.
        let gen = vec![ps(&[(0.0, 0.0, 0.0)]), ps(&[(2.0, 0.0, 0.0)])];
        let reference = vec![ps(&[(1.0, 0.0, 0.0)]), ps(&[(3.0, 0.0, 0.0)])];
        assert_eq!(one_nna(&gen, &reference), 0.0);
    }

    #[test]
    fn tmd_values() {
        let a = ps(&[(0.0, 0.0, 0.0)]);
        assert_eq!(tmd(&[vec![a.clone(), a.clone(), a.clone()]]).unwrap(), 0.0);
        // k = 2 with a single pair at distance 6: coefficient 2/(2·1) = 1.
        let b = ps(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        let c = ps(&[(0.0, 1.0, 0.0), (1.0, 1.0, 0.0)]);
        let d = chamfer(&b, &c);
        assert_eq!(tmd(&[vec![b, c]]).unwrap(), d);
        let short = tmd(&[vec![a]]);
        assert!(matches!(short, Err(MetricsError::KTooSmall { got: 1, .. })));
    }

    #[test]
    fn uhd_values() {
        let p = ps(&[(0.0, 0.0, 0.0), (2.0, 0.0, 0.0)]);
        let superset = ps(&[(0.0, 0.0, 0.0), (2.0, 0.0, 0.0), (9.0, 9.0, 9.0)]);
        assert_eq!(uhd(&p, &[superset]), 0.0);
        let single = ps(&[(0.0, 0.0, 0.0)]);
        assert_eq!(uhd(&p, &[single]), 2.0);
    }

    #[test]
    fn translation_leaves_metrics_unchanged() {
        // Integer coordinates and shifts keep f64 arithmetic exact.
        let gen = vec![
            ps(&[(0.0, 0.0, 0.0), (2.0, 1.0, 0.0)]),
            ps(&[(5.0, 5.0, 5.0)]),
        ];
        let reference = vec![
            ps(&[(1.0, 0.0, 0.0), (2.0, 2.0, 2.0)]),
            ps(&[(4.0, 4.0, 4.0)]),
        ];
        let shift = |sets: &[PointSet]| -> Vec<PointSet> {
            sets.iter()
                .map(|s| {
                    PointSet::new(
                        s.points()
                            .iter()
                            .map(|&[x, y, z]| [x + 10.0, y - 3.0, z + 7.0])
                            .collect(),
                        s.provenance(),
                    )
                    .unwrap()
                })
                .collect()
        };
        let (gs, rs) = (shift(&gen), shift(&reference));
        assert_eq!(mmd(&gen, &reference), mmd(&gs, &rs));
        assert_eq!(cov(&gen, &reference), cov(&gs, &rs));
        assert_eq!(one_nna(&gen, &reference), one_nna(&gs, &rs));
    }

    fn arb_pointset(max_pts: usize) -> impl Strategy<Value = PointSet> {
        prop::collection::vec((0i32..20, 0i32..20, 0i32..20), 1..max_pts).prop_map(|v| {
            PointSet::new(
                v.into_iter()
                    .map(|(x, y, z)| [f64::from(x), f64::from(y), f64::from(z)])
                    .collect(),
                "p",
            )
            .unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn chamfer_matches_brute_and_is_symmetric(
            x in arb_pointset(20),
            y in arb_pointset(20),
        ) {
            let fast = chamfer(&x, &y);
            let brute = check::chamfer_brute(&x, &y);
            prop_assert!((fast - brute).abs() <= 1e-12, "{fast} vs {brute}");
            prop_assert_eq!(chamfer(&x, &y), chamfer(&y, &x));
            prop_assert!(fast >= 0.0);
        }

        #[test]
        fn aggregates_match_brute_twins(
            gen in prop::collection::vec(arb_pointset(10), 1..5),
            reference in prop::collection::vec(arb_pointset(10), 1..5),
        ) {
            prop_assert!((mmd(&gen, &reference) - check::mmd_brute(&gen, &reference)).abs() <= 1e-12);
            prop_assert!((cov(&gen, &reference) - check::cov_brute(&gen, &reference)).abs() <= 1e-12);
            prop_assert!(
                (one_nna(&gen, &reference) - check::one_nna_brute(&gen, &reference)).abs() <= 1e-12
            );
        }

        #[test]
        fn one_nna_symmetric_without_ties(
            gen_pts in prop::collection::vec(
                prop::collection::vec((0.0f64..20.0, 0.0f64..20.0, 0.0f64..20.0), 1..6), 2..5),
            ref_pts in prop::collection::vec(
                prop::collection::vec((0.0f64..20.0, 0.0f64..20.0, 0.0f64..20.0), 1..6), 2..5),
        ) {
            // Continuous coordinates make nearest-neighbor ties measure-zero,
            // which is the regime where swapping roles cannot matter.
            let build = |sets: Vec<Vec<(f64, f64, f64)>>| -> Vec<PointSet> {
                sets.into_iter()
                    .map(|v| {
                        PointSet::new(v.into_iter().map(|(x, y, z)| [x, y, z]).collect(), "p")
                            .unwrap()
                    })
                    .collect()
            };
            let (gen, reference) = (build(gen_pts), build(ref_pts));
            prop_assert_eq!(one_nna(&gen, &reference), one_nna(&reference, &gen));
        }

        #[test]
        fn completion_metrics_match_brute_twins(
            groups in prop::collection::vec(prop::collection::vec(arb_pointset(8), 2..5), 1..4),
            partial in arb_pointset(8),
        ) {
            let fast = tmd(&groups).unwrap();
            prop_assert!((fast - check::tmd_brute(&groups)).abs() <= 1e-12);
            let comps = &groups[0];
            prop_assert!((uhd(&partial, comps) - check::uhd_brute(&partial, comps)).abs() <= 1e-12);
        }
    }
}

//! Independent reference oracles used by the verification suites and tests.
//!
//! Everything here deliberately avoids the production code paths it checks:
//! gradients come from central finite differences over the forward pass only,
//! and the metric twins are plain double loops with no spatial indexing. Keep
//! it that way; these are the second route of every dual-route check.

use rayon::prelude::*;

use crate::grid::{NeighborhoodSpec, State};
use crate::kernel::{ForwardPass, ModelParams, ParamSet};
use crate::metrics::PointSet;

/// Loss at a parameter setting, via the forward path only.
fn loss_at(params: &ModelParams, s: &State, spec: &NeighborhoodSpec, target: &State) -> f64 {
    ForwardPass::run(params, s, spec)
        .expect("forward pass")
        .loss(target)
        .expect("target inside support")
}

fn block_bounds(set: &ParamSet) -> Vec<usize> {
    let mut bounds = vec![0];
    for (_, _, b) in set.blocks() {
        bounds.push(bounds.last().unwrap() + b.len());
    }
    bounds
}

fn perturb(set: &mut ParamSet, bounds: &[usize], flat: usize, delta: f64) {
    let block = bounds.partition_point(|&b| b <= flat) - 1;
    let offset = flat - bounds[block];
    set.blocks_mut()[block][offset] += delta;
}

/// Central finite-difference gradient of the loss w.r.t. every parameter.
pub fn fd_gradients(
    params: &ModelParams,
    s: &State,
    spec: &NeighborhoodSpec,
    target: &State,
    eps: f64,
) -> ParamSet {
    let bounds = block_bounds(&params.tensors);
    let total = *bounds.last().unwrap();
    let flat: Vec<f64> = (0..total)
        .into_par_iter()
        .map_init(
            || params.clone(),
            |local, idx| {
                perturb(&mut local.tensors, &bounds, idx, eps);
                let plus = loss_at(local, s, spec, target);
                perturb(&mut local.tensors, &bounds, idx, -2.0 * eps);
                let minus = loss_at(local, s, spec, target);
                perturb(&mut local.tensors, &bounds, idx, eps);
                (plus - minus) / (2.0 * eps)
            },
        )
        .collect();
    let mut out = params.tensors.zeros_like();
    for (bi, dst) in out.blocks_mut().into_iter().enumerate() {
        dst.copy_from_slice(&flat[bounds[bi]..bounds[bi + 1]]);
    }
    out
}

/// Denominator floor for finite-difference relative errors.
///
/// Central differences carry roundoff noise of about `ulp(|loss|)/eps`; for
/// losses of a few hundred nats at eps = 1e-5 that is ~2e-9 absolute. Pure
/// relative error on a gradient smaller than that noise is meaningless, so
/// gradients below the floor compare on absolute terms at 1e-8 precision
/// while everything larger compares relatively.
pub const FD_REL_FLOOR: f64 = 1e-4;

/// Worst relative disagreement between analytic and finite-difference
/// gradients.
pub fn max_fd_relative_error(
    params: &ModelParams,
    s: &State,
    spec: &NeighborhoodSpec,
    target: &State,
    eps: f64,
) -> f64 {
    let (_, analytic) = crate::kernel::backward(params, s, spec, target).expect("backward");
    let numeric = fd_gradients(params, s, spec, target, eps);
    let mut worst = 0.0f64;
    for ((_, _, a), (_, _, n)) in analytic.blocks().into_iter().zip(numeric.blocks()) {
        for (&ga, &gn) in a.iter().zip(n) {
            let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(FD_REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn min_sq_dist_to(p: [f64; 3], set: &PointSet) -> f64 {
    set.points()
        .iter()
        .map(|&q| sq_dist(p, q))
        .fold(f64::INFINITY, f64::min)
}

/// Chamfer distance by exhaustive double loop.
pub fn chamfer_brute(x: &PointSet, y: &PointSet) -> f64 {
    let forward: f64 = x.points().iter().map(|&p| min_sq_dist_to(p, y)).sum();
    let backward: f64 = y.points().iter().map(|&q| min_sq_dist_to(q, x)).sum();
    forward + backward
}

/// Mean over references of the minimum Chamfer distance to any generated set.
pub fn mmd_brute(gen: &[PointSet], reference: &[PointSet]) -> f64 {
    let total: f64 = reference
        .iter()
        .map(|r| {
            gen.iter()
                .map(|g| chamfer_brute(g, r))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / reference.len() as f64
}

/// Fraction of references that are some generated shape's Chamfer argmin
/// (ties to the lowest reference index).
pub fn cov_brute(gen: &[PointSet], reference: &[PointSet]) -> f64 {
    let mut matched = vec![false; reference.len()];
    for g in gen {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, r) in reference.iter().enumerate() {
            let d = chamfer_brute(g, r);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        matched[best] = true;
    }
    matched.iter().filter(|&&m| m).count() as f64 / reference.len() as f64
}

/// Leave-one-out 1-NN two-sample classification accuracy, as a percentage.
/// Ties broken by lower distance, then generated before reference, then index.
pub fn one_nna_brute(gen: &[PointSet], reference: &[PointSet]) -> f64 {
    // Pool: generated first, then reference; membership = index < gen.len().
    let pool: Vec<&PointSet> = gen.iter().chain(reference.iter()).collect();
    let n_gen = gen.len();
    let mut correct = 0usize;
    for (i, x) in pool.iter().enumerate() {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (j, y) in pool.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = chamfer_brute(x, y);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        if (best < n_gen) == (i < n_gen) {
            correct += 1;
        }
    }
    100.0 * correct as f64 / pool.len() as f64
}

/// Mean over partials of the average pairwise Chamfer distance among each
/// partial's completions: `(2 / k(k-1)) Σ_{i<j} d_CD`.
pub fn tmd_brute(completions_per_partial: &[Vec<PointSet>]) -> f64 {
    let total: f64 = completions_per_partial
        .iter()
        .map(|comps| {
            let k = comps.len();
            assert!(k >= 2, "TMD needs at least two completions per partial");
            let mut sum = 0.0;
            for i in 0..k {
                for j in (i + 1)..k {
                    sum += chamfer_brute(&comps[i], &comps[j]);
                }
            }
            2.0 * sum / (k as f64 * (k as f64 - 1.0))
        })
        .sum();
    total / completions_per_partial.len() as f64
}

/// Mean directed Hausdorff distance (unsquared Euclidean max-min) from the
/// partial to each completion.
pub fn uhd_brute(partial: &PointSet, completions: &[PointSet]) -> f64 {
    let total: f64 = completions
        .iter()
        .map(|c| {
            partial
                .points()
                .iter()
                .map(|&p| min_sq_dist_to(p, c).sqrt())
                .fold(0.0f64, f64::max)
        })
        .sum();
    total / completions.len() as f64
}

//! `gca verify`: runnable verification suites, one pass/fail line each.
//!
//! Suites: `gradcheck` (analytic vs central-finite-difference gradients),
//! `oracle` (convergence iteration reaches the shape within |x| steps),
//! `metrics-oracle` (metric suite vs brute-force twins plus degenerate
//! identities), `equivariance` (occupancy fields shift exactly with the
//! state). A failing suite exits with code 3.

use clap::{Args, Subcommand};
use rand::Rng as _;

use gca_core::check;
use gca_core::data::{generate_family, Family};
use gca_core::grid::{
    is_partially_connected, neighborhood_of_state, oracle_converge, Cell, Metric,
    NeighborhoodSpec, State,
};
use gca_core::kernel::{init_params, ArchDescriptor, ForwardPass};
use gca_core::metrics::{self, PointSet};
use gca_core::rng::{self, Rng};

use crate::CliError;

#[derive(Args)]
pub struct VerifyArgs {
    #[command(subcommand)]
    suite: Suite,
}

#[derive(Subcommand)]
enum Suite {
    /// Analytic gradients vs central finite differences (eps 1e-5)
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Convergence iteration reaches every connected shape within |x| steps
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Metric implementations vs brute-force reference twins
    MetricsOracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        trials: usize,
    },
    /// Occupancy fields shift exactly with the state
    Equivariance {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn run(args: VerifyArgs) -> Result<(), CliError> {
    let passed = match args.suite {
        Suite::Gradcheck { seed, trials } => gradcheck(seed, trials),
        Suite::Oracle { seed, trials } => oracle(seed, trials),
        Suite::MetricsOracle { seed, trials } => metrics_oracle(seed, trials),
        Suite::Equivariance { seed } => equivariance(seed),
    };
    if passed {
        Ok(())
    } else {
        Err(CliError::Runtime("verification suite failed".into()))
    }
}

/// Connected random blob of `n` cells grown by unit random walk from `start`.
fn random_blob(n: usize, start: Cell, d: u32, rng: &mut Rng) -> State {
    let mut cells = vec![start];
    while cells.len() < n {
        let base = cells[rng.gen_range(0..cells.len())];
        let axis = rng.gen_range(0..3usize);
        let step = if rng.gen_range(0..2) == 0 { 1 } else { -1 };
        let mut coords = [base.x, base.y, base.z];
        coords[axis] += step;
        let cell = Cell::new(coords[0], coords[1], coords[2]);
        if cell.in_bounds(d) && !cells.contains(&cell) {
            cells.push(cell);
        }
    }
    State::new(cells, d).unwrap()
}

fn gradcheck(seed: u64, trials: usize) -> bool {
    let arch = ArchDescriptor {
        channels: vec![1, 4, 6, 4],
        kernel_radius: 1,
    };
    let specs = [
        NeighborhoodSpec::new(1, Metric::L1).unwrap(),
        NeighborhoodSpec::new(2, Metric::L1).unwrap(),
        NeighborhoodSpec::new(1, Metric::Linf).unwrap(),
    ];
    let d = 16;
    let mut worst = 0.0f64;
    let mut params_count = 0;
    for trial in 0..trials {
        let spec = &specs[trial % specs.len()];
        let mut trial_rng = rng::stream(seed, "gradcheck", trial as u64);
        let params = init_params(&arch, spec, rng::derive_seed(seed, "gc-params", trial as u64))
            .expect("valid arch");
        params_count = params.tensors.param_count();
        // Redraw states with a hidden unit within 1e-3 of a ReLU kink: the
        // +-1e-5 perturbation would cross it and the two-sided difference
        // stops meaning the derivative.
        let s = loop {
            // Every third trial hugs the corner so some offsets leave the grid.
            let start = if trial % 3 == 0 {
                Cell::new(0, 0, trial_rng.gen_range(0..4))
            } else {
                Cell::new(
                    trial_rng.gen_range(4..10),
                    trial_rng.gen_range(4..10),
                    trial_rng.gen_range(4..10),
                )
            };
            let s = random_blob(trial_rng.gen_range(3..=10), start, d, &mut trial_rng);
            if ForwardPass::run(&params, &s, spec).unwrap().kink_margin() > 1e-3 {
                break s;
            }
        };
        let support = neighborhood_of_state(&s, spec, true);
        let target_cells: Vec<Cell> = support
            .iter()
            .filter(|_| trial_rng.gen_range(0..2) == 0)
            .collect();
        let target = if target_cells.is_empty() {
            State::empty(d)
        } else {
            State::new(target_cells, d).unwrap()
        };
        let rel = check::max_fd_relative_error(&params, &s, spec, &target, 1e-5);
        worst = worst.max(rel);
    }
    let pass = worst < 1e-4;
    println!(
        "{} gradcheck: max relative error {worst:.3e} over {trials} trials ({params_count} params each), threshold 1e-4",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn oracle(seed: u64, trials: usize) -> bool {
    let families = [Family::Ring, Family::BoxShell, Family::Cross, Family::Ell];
    let specs: Vec<NeighborhoodSpec> = [1u32, 2, 3]
        .iter()
        .flat_map(|&r| {
            [Metric::L1, Metric::Linf]
                .iter()
                .map(move |&m| NeighborhoodSpec::new(r, m).unwrap())
        })
        .collect();
    let mut converged = 0;
    let mut worst_ratio = 0.0f64;
    for trial in 0..trials {
        let family = families[trial % families.len()];
        let spec = &specs[trial % specs.len()];
        let mut trial_rng = rng::stream(seed, "oracle", trial as u64);
        let x = generate_family(family, 1, 16, &mut trial_rng)
            .expect("valid resolution")
            .remove(0)
            .state;
        let cell = x.cells()[trial_rng.gen_range(0..x.len())];
        let s0 = State::single(cell, 16).unwrap();
        assert!(is_partially_connected(&s0, &x, spec));
        match oracle_converge(&s0, &x, spec, x.len()) {
            Some(t) if t <= x.len() => {
                converged += 1;
                worst_ratio = worst_ratio.max(t as f64 / x.len() as f64);
            }
            _ => {}
        }
    }
    let pass = converged == trials;
    println!(
        "{} oracle: {converged}/{trials} convergences within |x| steps (worst T'/|x| = {worst_ratio:.2})",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn random_pointset(rng: &mut Rng, max_points: usize) -> PointSet {
    let n = rng.gen_range(1..=max_points);
    let points = (0..n)
        .map(|_| {
            [
                f64::from(rng.gen_range(0..20)),
                f64::from(rng.gen_range(0..20)),
                f64::from(rng.gen_range(0..20)),
            ]
        })
        .collect();
    PointSet::new(points, "verify").unwrap()
}

fn metrics_oracle(seed: u64, trials: usize) -> bool {
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let mut trial_rng = rng::stream(seed, "metrics-oracle", trial as u64);
        let gen: Vec<PointSet> = (0..trial_rng.gen_range(1..=10))
            .map(|_| random_pointset(&mut trial_rng, 50))
            .collect();
        let reference: Vec<PointSet> = (0..trial_rng.gen_range(1..=10))
            .map(|_| random_pointset(&mut trial_rng, 50))
            .collect();
        let diffs = [
            metrics::chamfer(&gen[0], &reference[0]) - check::chamfer_brute(&gen[0], &reference[0]),
            metrics::mmd(&gen, &reference) - check::mmd_brute(&gen, &reference),
            metrics::cov(&gen, &reference) - check::cov_brute(&gen, &reference),
            metrics::one_nna(&gen, &reference) - check::one_nna_brute(&gen, &reference),
        ];
        for d in diffs {
            worst = worst.max(d.abs());
        }
        let groups: Vec<Vec<PointSet>> = (0..trial_rng.gen_range(1..=4))
            .map(|_| {
                (0..trial_rng.gen_range(2..=5))
                    .map(|_| random_pointset(&mut trial_rng, 30))
                    .collect()
            })
            .collect();
        let partial = random_pointset(&mut trial_rng, 30);
        worst = worst
            .max((metrics::tmd(&groups).unwrap() - check::tmd_brute(&groups)).abs())
            .max((metrics::uhd(&partial, &groups[0]) - check::uhd_brute(&partial, &groups[0])).abs());
    }

    // Degenerate identities.
    let mut id_rng = rng::stream(seed, "metrics-ident", 0);
    let shapes: Vec<PointSet> = (0..4).map(|_| random_pointset(&mut id_rng, 30)).collect();
    let identities_hold = metrics::mmd(&shapes, &shapes) == 0.0
        && metrics::cov(&shapes, &shapes) == 1.0
        && metrics::tmd(&[vec![shapes[0].clone(), shapes[0].clone(), shapes[0].clone()]]).unwrap()
            == 0.0
        && metrics::uhd(&shapes[0], &[shapes[0].clone()]) == 0.0;

    let pass = worst <= 1e-12 && identities_hold;
    println!(
        "{} metrics-oracle: max |fast - brute| = {worst:.3e} over {trials} trials, degenerate identities {}",
        if pass { "PASS" } else { "FAIL" },
        if identities_hold { "hold" } else { "VIOLATED" }
    );
    pass
}

fn equivariance(seed: u64) -> bool {
    let spec = NeighborhoodSpec::new(2, Metric::L1).unwrap();
    let arch = ArchDescriptor::default();
    let d = 24;
    let mut worst: f64 = 0.0;
    let mut mismatched_support = 0;
    for trial in 0..20u64 {
        let params =
            init_params(&arch, &spec, rng::derive_seed(seed, "eq-params", trial)).unwrap();
        let mut trial_rng = rng::stream(seed, "equivariance", trial);
        let start = Cell::new(
            trial_rng.gen_range(9..13),
            trial_rng.gen_range(9..13),
            trial_rng.gen_range(9..13),
        );
        let s = random_blob(trial_rng.gen_range(2..=8), start, d, &mut trial_rng);
        let base = ForwardPass::run(&params, &s, &spec).unwrap().into_field();
        for _ in 0..5 {
            let shift = [
                trial_rng.gen_range(-4..=4),
                trial_rng.gen_range(-4..=4),
                trial_rng.gen_range(-4..=4),
            ];
            let shifted = s.translate(shift).unwrap();
            let field = ForwardPass::run(&params, &shifted, &spec).unwrap().into_field();
            let expect: Vec<Cell> = base.support().iter().map(|c| c.offset(shift)).collect();
            if field.support().cells() != expect.as_slice() {
                mismatched_support += 1;
                continue;
            }
            for (a, b) in field.probs().iter().zip(base.probs()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let pass = worst == 0.0 && mismatched_support == 0;
    println!(
        "{} equivariance: max abs probability deviation under shift = {worst:.1e}, support mismatches = {mismatched_support}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

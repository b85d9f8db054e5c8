//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers (run with `--nocapture` to see them).
//!
//! The desk-scale training criteria (5, 6) train real models and take a few
//! minutes each; the bridge probe (9) is logged but non-gating by design.

use std::collections::BTreeMap;

use gca_core::chains::{
    infusion_probs, run_infusion_chain, run_sampling_chain, InfusionSchedule,
};
use gca_core::check;
use gca_core::data::{
    generate_family, generate_two_part_family, make_partial, Dataset, Family, GeneratorInfo,
};
use gca_core::grid::{
    dilate_intersect, is_partially_connected, neighborhood_of_state, oracle_converge, Cell,
    Metric, NeighborhoodSpec, State,
};
use gca_core::kernel::{
    init_params, load_checkpoint, save_checkpoint, ArchDescriptor, ForwardPass,
};
use gca_core::metrics::{self, PointSet};
use gca_core::rng::{self, Rng};
use gca_core::trainer::{Buffer, TrainConfig, TrainMode, Trainer};
use rand::Rng as _;

fn dataset_from(records: Vec<gca_core::data::ShapeRecord>, d: u32, seed: u64) -> Dataset {
    Dataset {
        resolution: d,
        records,
        generator: GeneratorInfo {
            family: "acceptance".into(),
            seed,
            params: BTreeMap::new(),
        },
    }
}

/// Ring + box mix used by the training criteria.
fn bimodal_dataset(count: usize, d: u32, seed: u64) -> Dataset {
    let mut rng_ring = rng::stream(seed, "accept-ring", 0);
    let mut rng_box = rng::stream(seed, "accept-box", 0);
    let rings = generate_family(Family::Ring, count / 2, d, &mut rng_ring).unwrap();
    let boxes = generate_family(Family::BoxShell, count - count / 2, d, &mut rng_box).unwrap();
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let fam = if i % 2 == 0 { &rings } else { &boxes };
        records.push(fam[i / 2].clone());
    }
    dataset_from(records, d, seed)
}

#[test]
fn criterion_1_proposition_oracle_converges() {
    let started = std::time::Instant::now();
    let families = [Family::Ring, Family::BoxShell, Family::Cross, Family::Ell];
    let specs: Vec<NeighborhoodSpec> = [1u32, 2, 3]
        .iter()
        .flat_map(|&r| {
            [Metric::L1, Metric::Linf]
                .iter()
                .map(move |&m| NeighborhoodSpec::new(r, m).unwrap())
        })
        .collect();
    let trials = 200;
    let mut successes = 0;
    for trial in 0..trials {
        let mut trial_rng = rng::stream(11, "c1", trial as u64);
        let family = families[trial % families.len()];
        let spec = &specs[trial % specs.len()];
        let x = generate_family(family, 1, 16, &mut trial_rng)
            .unwrap()
            .remove(0)
            .state;
        let seed_cell = x.cells()[trial_rng.gen_range(0..x.len())];
        let s0 = State::single(seed_cell, 16).unwrap();
        assert!(is_partially_connected(&s0, &x, spec));
        if let Some(t) = oracle_converge(&s0, &x, spec, x.len()) {
            assert!(t <= x.len());
            successes += 1;
        }
    }
    let elapsed = started.elapsed();
    assert_eq!(successes, trials);
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 1 PASS: oracle converged {successes}/{trials} with T' <= |x| in {:.2}s",
        elapsed.as_secs_f64()
    );
}

/// Connected random blob grown by unit random walk.
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

#[test]
fn criterion_2_gradients_match_finite_differences() {
    let started = std::time::Instant::now();
    let arch = ArchDescriptor {
        channels: vec![1, 4, 6, 4],
        kernel_radius: 1,
    };
    let specs = [
        NeighborhoodSpec::new(1, Metric::L1).unwrap(),
        NeighborhoodSpec::new(2, Metric::L1).unwrap(),
        NeighborhoodSpec::new(1, Metric::Linf).unwrap(),
    ];
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let spec = &specs[trial as usize % specs.len()];
        let mut trial_rng = rng::stream(21, "c2", trial);
        let params = init_params(&arch, spec, rng::derive_seed(21, "c2-params", trial)).unwrap();
        // Redraw states whose hidden units sit close enough to a ReLU kink
        // that the +-1e-5 perturbation would cross it; two-sided differences
        // are undefined there while the subgradient is still correct.
        let s = loop {
            let start = if trial % 4 == 0 {
                Cell::new(0, 0, 2) // boundary coverage: some offsets leave the grid
            } else {
                Cell::new(
                    trial_rng.gen_range(4..10),
                    trial_rng.gen_range(4..10),
                    trial_rng.gen_range(4..10),
                )
            };
            let s = random_blob(trial_rng.gen_range(3..=10), start, 16, &mut trial_rng);
            let margin = ForwardPass::run(&params, &s, spec).unwrap().kink_margin();
            if margin > 1e-3 {
                break s;
            }
        };
        let support = neighborhood_of_state(&s, spec, true);
        let target_cells: Vec<Cell> = support
            .iter()
            .filter(|_| trial_rng.gen_range(0..2) == 0)
            .collect();
        let target = if target_cells.is_empty() {
            State::empty(16)
        } else {
            State::new(target_cells, 16).unwrap()
        };
        worst = worst.max(check::max_fd_relative_error(&params, &s, spec, &target, 1e-5));
    }
    let elapsed = started.elapsed();
    assert!(worst < 1e-4, "max relative error {worst:.3e}");
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 2 PASS: gradcheck max relative error {worst:.3e} < 1e-4 over 20 states in {:.1}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_3_translation_equivariance_is_exact() {
    let spec = NeighborhoodSpec::new(2, Metric::L1).unwrap();
    let d = 24;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for trial in 0..20u64 {
        let params = init_params(
            &ArchDescriptor::default(),
            &spec,
            rng::derive_seed(31, "c3-params", trial),
        )
        .unwrap();
        let mut trial_rng = rng::stream(31, "c3", trial);
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
            let field = ForwardPass::run(&params, &shifted, &spec)
                .unwrap()
                .into_field();
            let expect: Vec<Cell> = base.support().iter().map(|c| c.offset(shift)).collect();
            assert_eq!(field.support().cells(), expect.as_slice());
            for (a, b) in field.probs().iter().zip(base.probs()) {
                worst = worst.max((a - b).abs());
            }
            checked += 1;
        }
    }
    assert_eq!(worst, 0.0);
    println!(
        "ACCEPTANCE 3 PASS: {checked} shifted fields identical (max abs deviation = {worst})"
    );
}

#[test]
fn criterion_4_infusion_collapse_identities() {
    let spec = NeighborhoodSpec::new(2, Metric::L1).unwrap();
    let mut max_prob_diff = 0.0f64;
    let mut oracle_matches = 0;
    for trial in 0..10u64 {
        let mut trial_rng = rng::stream(41, "c4", trial);
        let params =
            init_params(&ArchDescriptor::default(), &spec, rng::derive_seed(41, "c4-p", trial))
                .unwrap();
        let x = generate_family(Family::Ring, 1, 16, &mut trial_rng)
            .unwrap()
            .remove(0)
            .state;
        let seed_cell = x.cells()[trial_rng.gen_range(0..x.len())];
        let q0 = State::single(seed_cell, 16).unwrap();

        // alpha = 1 from step 0: the chain must equal the convergence
        // iteration state for state.
        let sched = InfusionSchedule::constant(1.0).unwrap();
        let mut chain_rng = rng::stream(41, "c4-chain", trial);
        let chain = run_infusion_chain(
            &params, &x, &sched, &spec, &mut chain_rng, 200, &q0, 1.0,
        )
        .unwrap();
        let mut oracle_state = q0.intersect(&x);
        for state in chain.states.iter().skip(1) {
            oracle_state = dilate_intersect(&oracle_state, &x, &spec);
            assert_eq!(state, &oracle_state);
        }
        assert_eq!(chain.last_state(), &x, "chain must reach x exactly");
        oracle_matches += 1;

        // alpha = 0: per-cell Bernoulli parameters equal the sampling
        // transition's within 1e-15.
        let field = ForwardPass::run(&params, &q0, &spec).unwrap().into_field();
        let mixed = infusion_probs(&field, &x, 0.0);
        for (a, b) in mixed.iter().zip(field.probs()) {
            max_prob_diff = max_prob_diff.max((a - b).abs());
        }
    }
    assert!(max_prob_diff <= 1e-15);
    println!(
        "ACCEPTANCE 4 PASS: {oracle_matches}/10 full-infusion chains equal the oracle sequence; alpha=0 prob deviation {max_prob_diff:.1e} <= 1e-15"
    );
}

#[test]
fn criterion_5_desk_scale_generation_training() {
    let started = std::time::Instant::now();
    let d = 16;
    let dataset = bimodal_dataset(32, d, 51);
    let config = TrainConfig {
        buffer_budget: 256,
        batch_size: 32,
        extra_steps: 5,
        t_max: 200,
        infusion_speed: 0.005,
        total_steps: TRAIN_STEPS_C5,
        seed: 5,
        mode: TrainMode::Generation,
        spec_radius: 2,
        spec_metric: Metric::L1,
        arch: ArchDescriptor::default(),
        ..TrainConfig::default()
    };
    let spec = config.spec().unwrap();
    let mut trainer = Trainer::new(&dataset, config).unwrap();
    trainer.run(&dataset, TRAIN_STEPS_C5).unwrap();

    // (a) stopping-criterion fraction over all completed chains.
    let fraction = trainer.stopping_fraction();
    assert!(
        fraction >= 0.90,
        "stopping fraction {fraction:.3} < 0.90 ({} of {} chains)",
        trainer.buffer.chains_met_criterion_early,
        trainer.buffer.chains_completed
    );

    // (b) 16 generated samples: occupied fraction and final-step churn.
    let volume = f64::from(d).powi(3);
    let center = Cell::new(7, 7, 7);
    let s0 = State::single(center, d).unwrap();
    let mut churn_sum = 0.0;
    let mut fractions = Vec::new();
    for i in 0..16u64 {
        let mut chain_rng = rng::stream(52, "c5-sample", i);
        let chain = run_sampling_chain(&trainer.params, &s0, 100, &spec, &mut chain_rng).unwrap();
        assert!(!chain.died, "sample {i} died");
        let final_state = chain.last_state();
        let frac = final_state.len() as f64 / volume;
        assert!(
            (0.003..=0.10).contains(&frac),
            "sample {i}: occupied fraction {frac:.4} outside [0.3%, 10%]"
        );
        fractions.push(frac);
        let last = chain.stats.last().unwrap();
        churn_sum += last.flipped_from_prev as f64 / final_state.len() as f64;
    }
    let mean_churn = churn_sum / 16.0;
    assert!(mean_churn < 0.10, "mean final churn {mean_churn:.3} >= 10%");

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 1800.0,
        "training criterion took {elapsed:?}"
    );
    println!(
        "ACCEPTANCE 5 PASS: stopping fraction {fraction:.3} >= 0.90 ({}/{} chains), \
         16/16 samples occupied fraction in [{:.4}, {:.4}] within [0.003, 0.10], \
         mean final churn {mean_churn:.3} < 0.10, {} steps in {:.0}s",
        trainer.buffer.chains_met_criterion_early,
        trainer.buffer.chains_completed,
        fractions.iter().copied().fold(f64::INFINITY, f64::min),
        fractions.iter().copied().fold(0.0f64, f64::max),
        TRAIN_STEPS_C5,
        elapsed.as_secs_f64()
    );
}

/// Training budgets for the desk-scale criteria.
const TRAIN_STEPS_C5: u64 = 8_000;
const TRAIN_STEPS_C6: u64 = 4_000;
const TRAIN_STEPS_C9: u64 = 4_000;

#[test]
fn criterion_6_completion_diversity() {
    let d = 16;
    let dataset = bimodal_dataset(16, d, 61);
    let config = TrainConfig {
        buffer_budget: 128,
        batch_size: 32,
        extra_steps: 5,
        t_max: 150,
        infusion_speed: 0.005,
        total_steps: TRAIN_STEPS_C6,
        seed: 6,
        mode: TrainMode::Completion,
        spec_radius: 2,
        spec_metric: Metric::L1,
        arch: ArchDescriptor::default(),
        ..TrainConfig::default()
    };
    let spec = config.spec().unwrap();
    let mut trainer = Trainer::new(&dataset, config).unwrap();
    trainer.run(&dataset, TRAIN_STEPS_C6).unwrap();

    let k = 10;
    let mut diverse_partials = 0;
    let mut uhd_values = Vec::new();
    for i in 0..8usize {
        let record = &dataset.records[i % dataset.len()];
        let mut partial_rng = rng::stream(62, "c6-partial", i as u64);
        let partial = make_partial(record, &mut partial_rng).unwrap();
        let mut completions = Vec::with_capacity(k);
        for j in 0..k {
            let mut chain_rng = rng::stream(62, "c6-chain", (i * k + j) as u64);
            let chain =
                run_sampling_chain(&trainer.params, &partial, 70, &spec, &mut chain_rng).unwrap();
            assert!(!chain.died, "completion chain died");
            let mut point_rng = rng::stream(62, "c6-points", (i * k + j) as u64);
            completions.push(
                metrics::voxels_to_points(
                    chain.last_state(),
                    false,
                    None,
                    &mut point_rng,
                    format!("c{i}-{j}"),
                )
                .unwrap(),
            );
        }
        let tmd = metrics::tmd(&[completions.clone()]).unwrap();
        if tmd > 0.0 {
            diverse_partials += 1;
        }
        let mut p_rng = rng::stream(62, "c6-p", i as u64);
        let partial_points =
            metrics::voxels_to_points(&partial, false, None, &mut p_rng, "partial").unwrap();
        let uhd = metrics::uhd(&partial_points, &completions);
        assert!(uhd.is_finite(), "UHD not finite for partial {i}");
        uhd_values.push(uhd);
    }
    assert!(
        diverse_partials >= 6,
        "only {diverse_partials}/8 partials had TMD > 0"
    );
    println!(
        "ACCEPTANCE 6 PASS: TMD > 0 for {diverse_partials}/8 partials (need >= 6), \
         UHD finite for all (max {:.2})",
        uhd_values.iter().copied().fold(0.0f64, f64::max)
    );
}

#[test]
fn criterion_7_metric_oracle_equivalence() {
    let mut worst = 0.0f64;
    let rand_set = |rng: &mut Rng, max_pts: usize| -> PointSet {
        let n = rng.gen_range(1..=max_pts);
        PointSet::new(
            (0..n)
                .map(|_| {
                    [
                        f64::from(rng.gen_range(0..20)),
                        f64::from(rng.gen_range(0..20)),
                        f64::from(rng.gen_range(0..20)),
                    ]
                })
                .collect(),
            "c7",
        )
        .unwrap()
    };
    for trial in 0..50u64 {
        let mut trial_rng = rng::stream(71, "c7", trial);
        let gen: Vec<PointSet> = (0..trial_rng.gen_range(1..=10))
            .map(|_| rand_set(&mut trial_rng, 50))
            .collect();
        let reference: Vec<PointSet> = (0..trial_rng.gen_range(1..=10))
            .map(|_| rand_set(&mut trial_rng, 50))
            .collect();
        worst = worst
            .max(
                (metrics::chamfer(&gen[0], &reference[0])
                    - check::chamfer_brute(&gen[0], &reference[0]))
                .abs(),
            )
            .max((metrics::mmd(&gen, &reference) - check::mmd_brute(&gen, &reference)).abs())
            .max((metrics::cov(&gen, &reference) - check::cov_brute(&gen, &reference)).abs())
            .max(
                (metrics::one_nna(&gen, &reference) - check::one_nna_brute(&gen, &reference))
                    .abs(),
            );
        let groups: Vec<Vec<PointSet>> = (0..trial_rng.gen_range(1..=4))
            .map(|_| {
                (0..trial_rng.gen_range(2..=5))
                    .map(|_| rand_set(&mut trial_rng, 30))
                    .collect()
            })
            .collect();
        let partial = rand_set(&mut trial_rng, 30);
        worst = worst
            .max((metrics::tmd(&groups).unwrap() - check::tmd_brute(&groups)).abs())
            .max(
                (metrics::uhd(&partial, &groups[0]) - check::uhd_brute(&partial, &groups[0]))
                    .abs(),
            );
    }
    assert!(worst <= 1e-12, "max deviation {worst:.2e}");

    // Degenerate identities hold exactly.
    let mut id_rng = rng::stream(72, "c7-ident", 0);
    let shapes: Vec<PointSet> = (0..5).map(|_| rand_set(&mut id_rng, 30)).collect();
    assert_eq!(metrics::mmd(&shapes, &shapes), 0.0);
    assert_eq!(metrics::cov(&shapes, &shapes), 1.0);
    assert_eq!(
        metrics::tmd(&[vec![shapes[0].clone(), shapes[0].clone(), shapes[0].clone()]]).unwrap(),
        0.0
    );
    let superset = PointSet::new(
        shapes[0]
            .points()
            .iter()
            .copied()
            .chain([[99.0, 99.0, 99.0]])
            .collect(),
        "sup",
    )
    .unwrap();
    assert_eq!(metrics::uhd(&shapes[0], &[superset]), 0.0);
    println!(
        "ACCEPTANCE 7 PASS: 50 randomized instances match brute-force twins (max |diff| {worst:.1e} <= 1e-12); degenerate identities exact"
    );
}

#[test]
fn criterion_8_determinism_and_resume() {
    let d = 16;
    let dataset = bimodal_dataset(8, d, 81);
    let config = TrainConfig {
        buffer_budget: 16,
        batch_size: 8,
        extra_steps: 2,
        t_max: 80,
        infusion_speed: 0.02,
        total_steps: 60,
        seed: 8,
        mode: TrainMode::Generation,
        spec_radius: 1,
        spec_metric: Metric::L1,
        arch: ArchDescriptor {
            channels: vec![1, 4, 4],
            kernel_radius: 1,
        },
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();

    // Uninterrupted run, twice: identical checkpoint bytes.
    let ckpt_bytes = |tag: &str, trainer: &Trainer| -> Vec<u8> {
        let path = dir.path().join(format!("ckpt_{tag}.txt"));
        save_checkpoint(&path, &trainer.params, &trainer.opt, trainer.spec()).unwrap();
        std::fs::read(&path).unwrap()
    };
    let mut run_a = Trainer::new(&dataset, config.clone()).unwrap();
    run_a.run(&dataset, 60).unwrap();
    let bytes_a = ckpt_bytes("a", &run_a);
    let mut run_b = Trainer::new(&dataset, config.clone()).unwrap();
    run_b.run(&dataset, 60).unwrap();
    let bytes_b = ckpt_bytes("b", &run_b);
    assert_eq!(bytes_a, bytes_b, "identical reruns diverged");

    // Interrupted at 25, serialized, reloaded, resumed to 60.
    let mut run_c = Trainer::new(&dataset, config.clone()).unwrap();
    run_c.run(&dataset, 25).unwrap();
    let ckpt_path = dir.path().join("ckpt_mid.txt");
    save_checkpoint(&ckpt_path, &run_c.params, &run_c.opt, run_c.spec()).unwrap();
    let buf_path = dir.path().join("buffer_mid.json");
    run_c.buffer.save(&buf_path).unwrap();
    drop(run_c);

    let ckpt = load_checkpoint(&ckpt_path).unwrap();
    let buffer = Buffer::load(&buf_path).unwrap();
    let mut resumed = Trainer::resume(ckpt.params, ckpt.opt, buffer, config).unwrap();
    resumed.run(&dataset, 35).unwrap();
    let bytes_resumed = ckpt_bytes("resumed", &resumed);
    assert_eq!(
        bytes_a, bytes_resumed,
        "interrupted+resumed run differs from uninterrupted"
    );

    // Sampling chains: same seed, same chains.
    let spec = resumed.spec().clone();
    let s0 = State::single(Cell::new(7, 7, 7), d).unwrap();
    let mut r1 = rng::stream(82, "c8", 0);
    let mut r2 = rng::stream(82, "c8", 0);
    let chain1 = run_sampling_chain(&resumed.params, &s0, 20, &spec, &mut r1).unwrap();
    let chain2 = run_sampling_chain(&resumed.params, &s0, 20, &spec, &mut r2).unwrap();
    assert_eq!(chain1, chain2);
    println!(
        "ACCEPTANCE 8 PASS: rerun checkpoints byte-identical; interrupted+resumed run byte-identical to uninterrupted; chains reproducible"
    );
}

#[test]
fn criterion_9_bridge_probe_disconnected_completion() {
    // Non-gating probe: train on two-component shapes whose island sits
    // farther than the radius, then ask how many completion chains from the
    // body alone ever touch the island.
    let d = 16;
    let gap = 4;
    let mut gen_rng = rng::stream(91, "c9-data", 0);
    let records = generate_two_part_family(8, d, gap, &mut gen_rng).unwrap();
    let dataset = dataset_from(records, d, 91);
    let config = TrainConfig {
        buffer_budget: 128,
        batch_size: 32,
        extra_steps: 5,
        t_max: 150,
        infusion_speed: 0.01,
        total_steps: TRAIN_STEPS_C9,
        seed: 9,
        mode: TrainMode::Completion,
        spec_radius: 3,
        spec_metric: Metric::L1,
        arch: ArchDescriptor::default(),
        ..TrainConfig::default()
    };
    let spec = config.spec().unwrap();
    let mut trainer = Trainer::new(&dataset, config).unwrap();
    trainer.run(&dataset, TRAIN_STEPS_C9).unwrap();

    let mut reached = 0;
    let trials = 20;
    for i in 0..trials {
        let record = &dataset.records[i % dataset.len()];
        let body = record.part_state(&record.parts[0]);
        let island = record.part_state(&record.parts[1]);
        assert!(!is_partially_connected(&body, &record.state, &spec));
        let mut chain_rng = rng::stream(92, "c9-chain", i as u64);
        let chain = run_sampling_chain(&trainer.params, &body, 70, &spec, &mut chain_rng).unwrap();
        if chain
            .states
            .iter()
            .any(|s| s.intersection_len(&island) > 0)
        {
            reached += 1;
        }
    }
    // Logged, non-gating: report the observed bridge behavior either way.
    println!(
        "ACCEPTANCE 9 {}: {reached}/{trials} completion chains reached the island beyond radius {} (non-gating probe)",
        if reached >= 1 { "PASS" } else { "OBSERVED-FAIL" },
        spec.radius()
    );
}

// Temporary diagnostic - not part of the deliverable.
use gca_core::data::*;
use gca_core::grid::*;
use gca_core::kernel::*;
use gca_core::rng;

fn linf_isolated(cell: Cell, s: &State) -> bool {
    for dx in -1..=1i32 {
        for dy in -1..=1i32 {
            for dz in -1..=1i32 {
                if (dx, dy, dz) == (0, 0, 0) { continue; }
                if s.contains(cell.offset([dx, dy, dz])) { return false; }
            }
        }
    }
    true
}

#[test]
fn probe_many() {
    let paths = std::env::var("GCA_PROBE_PATHS").unwrap_or_default();
    for path in paths.split(':').filter(|p| !p.is_empty()) {
        let ckpt = load_checkpoint(std::path::Path::new(path)).unwrap();
        let spec = ckpt.spec.clone();
        let d = 16;
        // seed response
        let s = State::single(Cell::new(7,7,7), d).unwrap();
        let f = ForwardPass::run(&ckpt.params, &s, &spec).unwrap().into_field();
        let p_self = f.prob_at(Cell::new(7,7,7)).unwrap();
        let sum_p: f64 = f.probs().iter().sum();

        // half-ring context: adjacent vs blind out-x probabilities
        let mut r = rng::stream(1, "probe", 0);
        let ring = generate_family(Family::Ring, 1, d, &mut r).unwrap().remove(0).state;
        let half = State::new(ring.cells()[..ring.len()/2].to_vec(), d).unwrap();
        let f2 = ForwardPass::run(&ckpt.params, &half, &spec).unwrap().into_field();
        let (mut adj_out, mut blind_out, mut dust_rate) = (vec![], vec![], 0.0);
        for (c, &p) in f2.support().cells().iter().zip(f2.probs()) {
            if half.contains(*c) || ring.contains(*c) { continue; }
            if linf_isolated(*c, &half) { blind_out.push(p); dust_rate += p; } else { adj_out.push(p); }
        }
        let mean = |v: &Vec<f64>| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        println!("{path}:\n  seed: p_self={p_self:.3} sum_p={sum_p:.2}\n  half-ring out-x: adj_mean={:.4} ({}) blind_mean={:.5} ({}) E[dust/step]={dust_rate:.2}",
                 mean(&adj_out), adj_out.len(), mean(&blind_out), blind_out.len());
    }
}

#[test]
fn measure_steady_state_isolated_rows() {
    use gca_core::trainer::*;
    let d = 16;
    let mut r = rng::stream(1, "ds", 0);
    let mut records = generate_family(Family::Ring, 4, d, &mut r).unwrap();
    records.extend(generate_family(Family::BoxShell, 4, d, &mut r).unwrap());
    let dataset = Dataset { resolution: d, records, generator: GeneratorInfo { family: "m".into(), seed: 1, params: Default::default() } };
    let ckpt = load_checkpoint(std::path::Path::new("/tmp/sweep/I/3aab3ed4-s1/ckpt_final.txt")).unwrap();
    let buffer = Buffer::load(std::path::Path::new("/tmp/sweep/I/3aab3ed4-s1/buffer_final.json")).unwrap();
    let config = TrainConfig {
        buffer_budget: 64, batch_size: 32, seed: 1,
        adam: AdamConfig { decay_every: 1_000_000, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::resume(ckpt.params, ckpt.opt, buffer, config).unwrap();
    let (mut iso, mut iso_self_pos, mut iso_ball_pos, mut seeds, mut dust_far) = (0usize, 0usize, 0.0f64, 0usize, 0usize);
    for _ in 0..600 {
        for e in trainer.buffer.entries[..32].iter() {
            let x = &dataset.records[e.shape_idx].state;
            for c in e.state.iter() {
                let mut has_nbr = false;
                'n: for dx in -1..=1i32 { for dy in -1..=1i32 { for dz in -1..=1i32 {
                    if (dx,dy,dz) != (0,0,0) && e.state.contains(c.offset([dx,dy,dz])) { has_nbr = true; break 'n; }
                }}}
                if has_nbr { continue; }
                iso += 1;
                if e.state.len() == 1 { seeds += 1; }
                if x.contains(c) { iso_self_pos += 1; }
                let mut ball = 0; 
                for o in NeighborhoodSpec::new(2, Metric::L1).unwrap().offsets() {
                    let t = c.offset(*o);
                    if t.in_bounds(d) && x.contains(t) { ball += 1; }
                }
                iso_ball_pos += ball as f64;
                if ball == 0 { dust_far += 1; }
            }
        }
        trainer.step(&dataset).unwrap();
    }
    println!("steady-state isolated rows: {iso} total | seeds {seeds} | y_self=1: {} ({:.3}) | mean ball y: {:.2} | far-dust(ball=0): {}",
             iso_self_pos, iso_self_pos as f64 / iso as f64, iso_ball_pos / iso as f64, dust_far);
}

//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `QUBO_ACCEPTANCE=1,3,4` restricts the run to the listed criteria
//! (criterion 10 also runs 5 and 6, criterion 7 runs 6).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use qubo_cli::evaluate::{self, exact_count_fraction};
use qubo_cli::inputs::SplitTensors;
use qubo_cli::train::{train, TrainConfig, TrainOutcome};
use qubo_core::data::{build_random_dataset, build_tsp_dataset, Dataset, Split, SplitCounts};
use qubo_core::metrics::{self, Head, DEFAULT_ENERGY_TOL};
use qubo_core::qubo::ValueRange;
use qubo_core::{
    anneal_qubo, brute_force_qubo, random_qubo, tsp_to_qubo, AnnealParams, BitVector,
    PenaltyConfig, Tour, TspInstance,
};
use qubo_nn::io::save_model;
use qubo_nn::zoo::{build_autoencoder, build_cnn_solver, transfer_weights, Arch};
use qubo_nn::{grad_check, LayerSpec, Loss, Model, OptimizerKind, Tensor};

const DATA_SEED: u64 = 2024;
const MODEL_SEED: u64 = 17;
const TRAIN_SEED: u64 = 5;

const TSP_COUNTS: SplitCounts = SplitCounts {
    train: 2000,
    test: 200,
    val: 200,
};

const CAE_EPOCHS: usize = 200;
const CNN_EPOCHS: usize = 40;
const CNN_UNITS: usize = 128;
const CNN_BATCH: usize = 128;

struct Gate {
    only: Option<BTreeSet<u32>>,
    failed: usize,
}

impl Gate {
    fn wants(&self, id: u32) -> bool {
        self.only.as_ref().is_none_or(|s| s.contains(&id))
    }

    fn record(
        &mut self,
        id: u32,
        title: &str,
        start: Instant,
        limit_secs: Option<f64>,
        pass: bool,
        detail: String,
    ) {
        let secs = start.elapsed().as_secs_f64();
        let in_time = limit_secs.is_none_or(|l| secs <= l);
        let ok = pass && in_time;
        if !ok {
            self.failed += 1;
        }
        let limit = limit_secs
            .map(|l| format!(", limit {l:.0} s"))
            .unwrap_or_default();
        println!(
            "criterion {id:>2} {}: {title}: {detail} [{secs:.1} s{limit}]",
            if ok { "PASS" } else { "FAIL" }
        );
    }
}

// ---------------------------------------------------------------------------
// Independent oracles.

fn oracle_tour_length(t: &TspInstance, perm: &[usize]) -> f64 {
    let m = perm.len();
    (0..m).map(|k| t.distance(perm[k], perm[(k + 1) % m])).sum()
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, left: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..left.len() {
            let v = left.remove(i);
            prefix.push(v);
            rec(prefix, left, out);
            prefix.pop();
            left.insert(i, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..m).collect(), &mut out);
    out
}

/// Enumerates every configuration of an `n <= 20` variable QUBO and returns
/// the lowest energy with its bit pattern (bit `i` of the code is `x_i`).
fn oracle_min(q: &qubo_core::QuboMatrix) -> (f64, u64) {
    let n = q.n();
    let mut best = (f64::INFINITY, 0);
    for code in 0..1u64 << n {
        let mut e = 0.0;
        for i in 0..n {
            if code >> i & 1 == 1 {
                for j in i..n {
                    if code >> j & 1 == 1 {
                        e += q.get(i, j);
                    }
                }
            }
        }
        if e < best.0 {
            best = (e, code);
        }
    }
    best
}

/// City order of a one-hot city-major assignment, if it is a permutation.
fn oracle_decode(code: u64, m: usize) -> Option<Vec<usize>> {
    let bit = |v: usize, j: usize| code >> (v * m + j) & 1 == 1;
    let mut order = vec![usize::MAX; m];
    for v in 0..m {
        let pos: Vec<usize> = (0..m).filter(|&j| bit(v, j)).collect();
        if pos.len() != 1 || order[pos[0]] != usize::MAX {
            return None;
        }
        order[pos[0]] = v;
    }
    Some(order)
}

// ---------------------------------------------------------------------------

fn criterion_1(gate: &mut Gate) {
    let start = Instant::now();
    let perms = permutations(4);
    let mut worst: f64 = 0.0;
    let mut brute_ok = 0;
    for k in 0..100u64 {
        let t = TspInstance::random(4, 1000 + k);
        let q = tsp_to_qubo(&t, PenaltyConfig::default_for(&t)).unwrap();
        for p in &perms {
            let x = Tour::new(p.clone()).unwrap().to_bits();
            let cost = q.penalized_cost(&x).unwrap();
            worst = worst.max((cost - oracle_tour_length(&t, p)).abs());
        }
        let optimum = perms
            .iter()
            .map(|p| oracle_tour_length(&t, p))
            .fold(f64::INFINITY, f64::min);
        let (_, code) = oracle_min(&q);
        if let Some(order) = oracle_decode(code, 4) {
            if (oracle_tour_length(&t, &order) - optimum).abs() <= 1e-9 {
                brute_ok += 1;
            }
        }
    }
    gate.record(
        1,
        "encoding correctness",
        start,
        Some(120.0),
        worst <= 1e-9 && brute_ok == 100,
        format!("max |cost - length| = {worst:.1e} over 2400 tours; optimal feasible minimizer on {brute_ok}/100"),
    );
}

fn criterion_2(gate: &mut Gate) {
    let start = Instant::now();
    let mut agree = 0;
    for k in 0..100u64 {
        let q = random_qubo(16, ValueRange::random_qubo_default(), 5000 + k);
        let exact = brute_force_qubo(&q).unwrap();
        let annealed = anneal_qubo(&q, &AnnealParams::default_for(&q, k)).unwrap();
        let (e_exact, e_anneal) = (q.energy(&exact.x).unwrap(), q.energy(&annealed.x).unwrap());
        if (e_exact - e_anneal).abs() <= DEFAULT_ENERGY_TOL {
            agree += 1;
        }
    }
    gate.record(
        2,
        "annealer matches brute force",
        start,
        Some(300.0),
        agree >= 90,
        format!("{agree}/100 minimum energies matched (need >= 90)"),
    );
}

fn test_input(shape: Vec<usize>, salt: u64) -> Tensor {
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|i| (qubo_core::rng::split_mix(salt, i as u64) % 1000) as f64 / 1000.0)
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn criterion_3(gate: &mut Gate) {
    let start = Instant::now();
    let x = test_input(vec![2, 1, 16, 16], 3);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    let mut enough = true;
    for arch in [Arch::VanillaAe, Arch::Mlae, Arch::Cae] {
        let m = build_autoencoder(arch, &[1, 16, 16], 0.25, 11).unwrap();
        let r = grad_check(&m.net, &Loss::Mse, &x, &x, 1e-6, 200, 1).unwrap();
        worst = worst.max(r.max_rel_error);
        enough &= r.checked >= 200;
        parts.push(format!("{} {:.1e}", arch.name(), r.max_rel_error));
    }
    let mut y = vec![0.0; 2 * 16];
    for (b, row) in y.chunks_exact_mut(16).enumerate() {
        for v in 0..4 {
            row[v * 4 + (v + b) % 4] = 1.0;
        }
    }
    let y = Tensor::new(vec![2, 16], y).unwrap();
    let solver = build_cnn_solver(&[1, 16, 16], 16, 8, 0.5, Head::Sigmoid, 12).unwrap();
    let r = grad_check(&solver.net, &Loss::constrained(4), &x, &y, 1e-6, 200, 2).unwrap();
    worst = worst.max(r.max_rel_error);
    enough &= r.checked >= 200;
    parts.push(format!("cnn_solver+constrained {:.1e}", r.max_rel_error));
    gate.record(
        3,
        "gradient integrity",
        start,
        Some(600.0),
        worst <= 1e-5 && enough,
        format!(
            "max relative error {} (limit 1e-5, 200 parameters each)",
            parts.join(", ")
        ),
    );
}

fn criterion_4(gate: &mut Gate) {
    let start = Instant::now();
    let n = 16;
    let mut rng_state = 99u64;
    let mut next = || {
        rng_state = qubo_core::rng::split_mix(rng_state, 1);
        rng_state
    };
    let (mut preds, mut labels, mut qubos) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..1000u64 {
        let q = random_qubo(n, ValueRange::new(-5.0, 5.0).unwrap(), k);
        let label = BitVector::from_index(next() & 0xffff, n);
        let pred = match k % 3 {
            0 => label.clone(),
            1 => BitVector::from_index(next() & 0xffff, n),
            _ => {
                let mut p = label.clone();
                p.flip((next() % n as u64) as usize);
                p
            }
        };
        preds.push(pred);
        labels.push(label);
        qubos.push(q);
    }
    let default = metrics::default_accuracy(&preds, &labels).unwrap();
    let after = metrics::after_eval_accuracy(&preds, &labels, &qubos, DEFAULT_ENERGY_TOL).unwrap();
    let implication = after >= default;

    let mut reversed_ok = 0;
    for k in 0..50u64 {
        let t = TspInstance::random(4, 7000 + k);
        let q = tsp_to_qubo(&t, PenaltyConfig::default_for(&t)).unwrap();
        let tour = vec![
            0,
            1 + (k % 3) as usize,
            1 + ((k + 1) % 3) as usize,
            1 + ((k + 2) % 3) as usize,
        ];
        let mut back = tour.clone();
        back.reverse();
        assert_eq!(oracle_tour_length(&t, &tour), oracle_tour_length(&t, &back));
        let label = vec![Tour::new(tour).unwrap().to_bits()];
        let pred = vec![Tour::new(back).unwrap().to_bits()];
        let d = metrics::default_accuracy(&pred, &label).unwrap();
        let a = metrics::after_eval_accuracy(&pred, &label, &[q], DEFAULT_ENERGY_TOL).unwrap();
        if d == 0.0 && a == 1.0 {
            reversed_ok += 1;
        }
    }
    gate.record(
        4,
        "metric implication",
        start,
        None,
        implication && reversed_ok == 50,
        format!("after-eval {after:.3} >= default {default:.3} on 1000 pairs; reversed tours scored correctly {reversed_ok}/50"),
    );
}

fn tsp_dataset() -> Dataset {
    build_tsp_dataset(4, TSP_COUNTS, DATA_SEED).unwrap()
}

fn adam(epochs: usize, batch_size: usize, loss: Loss) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        optimizer: OptimizerKind::Adam,
        loss,
        seed: TRAIN_SEED,
    }
}

fn quiet(outcome: qubo_cli::Result<TrainOutcome>) -> TrainOutcome {
    outcome.unwrap_or_else(|e| panic!("training failed: {e}"))
}

fn weights_file(model: &Model, dir: &Path, name: &str) -> Vec<u8> {
    let prefix = dir.join(name);
    save_model(model, &prefix).unwrap();
    fs::read(dir.join(format!("{name}.weights.bin"))).unwrap()
}

/// Trains the CAE; returns the final weight file bytes.
fn run_cae(ds: &Dataset, dir: &Path, name: &str) -> (f64, Vec<u8>) {
    let model = build_autoencoder(Arch::Cae, &[1, 16, 16], 0.25, MODEL_SEED).unwrap();
    let out = quiet(train(
        model,
        ds,
        &adam(CAE_EPOCHS, 128, Loss::Mse),
        &mut |_, _, _| Ok(()),
    ));
    let a = evaluate::evaluate(&out.last, ds, Split::Test, TRAIN_SEED).unwrap();
    (
        a.report.after_eval_accuracy(),
        weights_file(&out.last, dir, name),
    )
}

fn criterion_5(gate: &mut Gate, ds: &Dataset, dir: &Path) -> Vec<u8> {
    let start = Instant::now();
    let (acc, bytes) = run_cae(ds, dir, "cae");
    gate.record(
        5,
        "scaled-down CAE after-evaluation accuracy",
        start,
        Some(45.0 * 60.0),
        acc >= 0.85,
        format!(
            "{acc:.3} on {} test samples after {CAE_EPOCHS} epochs (need >= 0.85)",
            TSP_COUNTS.test
        ),
    );
    bytes
}

struct SolverRun {
    test_after_eval: f64,
    /// Fraction of test predictions with exactly `m` bits set, per epoch.
    exact_m: Vec<f64>,
    weights: Vec<u8>,
}

fn run_solver(ds: &Dataset, loss: Loss, epochs: usize, dir: &Path, name: &str) -> SolverRun {
    let n = ds.manifest.n;
    let model =
        build_cnn_solver(&[1, 16, 16], n, CNN_UNITS, 0.5, Head::Sigmoid, MODEL_SEED).unwrap();
    let test = SplitTensors::new(ds, Split::Test).unwrap();
    let m = ds.manifest.m.unwrap_or(4);
    let mut exact_m = Vec::new();
    let out = quiet(train(
        model,
        ds,
        &adam(epochs, CNN_BATCH, loss),
        &mut |_, model, _| {
            let a = evaluate::assess(model, ds, &test, &Loss::Bce, TRAIN_SEED)?;
            exact_m.push(exact_count_fraction(&a.bits, m));
            Ok(())
        },
    ));
    let a = evaluate::assess(&out.last, ds, &test, &Loss::Bce, TRAIN_SEED).unwrap();
    SolverRun {
        weights: weights_file(&out.last, dir, name),
        test_after_eval: a.report.after_eval_accuracy(),
        exact_m,
    }
}

fn criterion_6(gate: &mut Gate, ds: &Dataset, dir: &Path) -> SolverRun {
    let start = Instant::now();
    let run = run_solver(ds, Loss::constrained(4), CNN_EPOCHS, dir, "cnn");
    gate.record(
        6,
        "scaled-down CNN solver after-evaluation accuracy",
        start,
        Some(2.0 * 3600.0),
        run.test_after_eval >= 0.55,
        format!(
            "{:.3} on {} test samples after {CNN_EPOCHS} epochs (need >= 0.55)",
            run.test_after_eval, TSP_COUNTS.test
        ),
    );
    run
}

fn criterion_7(gate: &mut Gate, ds: &Dataset, dir: &Path, constrained: &SolverRun) {
    let start = Instant::now();
    let plain = run_solver(ds, Loss::Bce, CNN_EPOCHS, dir, "cnn_bce");
    let (p, c) = (
        plain.exact_m[CNN_EPOCHS - 1],
        constrained.exact_m[CNN_EPOCHS - 1],
    );
    gate.record(
        7,
        "constrained loss sets m bits",
        start,
        None,
        p < c && c >= 0.9,
        format!("exactly-4-bit fraction after {CNN_EPOCHS} epochs: plain BCE {p:.3}, constrained {c:.3} (need plain < constrained, constrained >= 0.9)"),
    );
}

fn criterion_8(gate: &mut Gate, dir: &Path) {
    let start = Instant::now();
    let ds = build_random_dataset(16, TSP_COUNTS, DATA_SEED).unwrap();
    let untrained =
        build_cnn_solver(&[1, 16, 16], 16, CNN_UNITS, 0.5, Head::Sigmoid, MODEL_SEED).unwrap();
    let baseline = evaluate::evaluate(&untrained, &ds, Split::Test, TRAIN_SEED)
        .unwrap()
        .report
        .after_eval_accuracy();
    let run = run_solver(&ds, Loss::Bce, CNN_EPOCHS, dir, "random");
    let acc = run.test_after_eval;
    gate.record(
        8,
        "random-QUBO learnability",
        start,
        None,
        acc >= 0.2 && acc > baseline,
        format!("after-eval {acc:.3} after {CNN_EPOCHS} epochs vs untrained {baseline:.3} (need >= 0.2 and above untrained)"),
    );
}

fn criterion_9(gate: &mut Gate, ds4: &Dataset) {
    let start = Instant::now();
    let units = 16;
    let src = build_cnn_solver(&[1, 16, 16], 16, units, 0.5, Head::Sigmoid, MODEL_SEED).unwrap();
    let src = quiet(train(
        src,
        ds4,
        &adam(1, 128, Loss::constrained(4)),
        &mut |_, _, _| Ok(()),
    ))
    .last;
    let ds8 = build_tsp_dataset(
        8,
        SplitCounts {
            train: 8,
            test: 2,
            val: 2,
        },
        DATA_SEED,
    )
    .unwrap();
    let dst =
        build_cnn_solver(&[1, 64, 64], 64, units, 0.0, Head::Sigmoid, MODEL_SEED + 1).unwrap();
    let moved = transfer_weights(&src, &dst).unwrap();
    let convs = |m: &Model| -> Vec<usize> {
        m.net
            .layers()
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv2d { .. }))
            .map(|(i, _)| i)
            .collect()
    };
    let (sc, dc) = (convs(&src), convs(&moved));
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let copied = sc.len() == 6
        && dc.len() == 6
        && sc.iter().zip(&dc).all(|(&a, &b)| {
            let (p, q) = (&src.net.params()[a], &moved.net.params()[b]);
            bits(&p.weight) == bits(&q.weight) && bits(&p.bias) == bits(&q.bias)
        });
    let out = quiet(train(
        moved,
        &ds8,
        &adam(1, 4, Loss::constrained(8)),
        &mut |_, _, _| Ok(()),
    ));
    let loss = out.history[0].train_loss;
    gate.record(
        9,
        "transfer plumbing",
        start,
        None,
        copied && loss.is_finite(),
        format!("6 conv layers copied bitwise: {copied}; first 8-TSP epoch loss {loss:.4}"),
    );
}

fn criterion_10(gate: &mut Gate, ds: &Dataset, dir: &Path, cae: &[u8], cnn: &[u8]) {
    let start = Instant::now();
    let (_, cae_again) = run_cae(ds, dir, "cae_again");
    let cnn_again = run_solver(ds, Loss::constrained(4), CNN_EPOCHS, dir, "cnn_again").weights;
    let same_cae = cae == cae_again.as_slice();
    let same_cnn = cnn == cnn_again.as_slice();
    gate.record(
        10,
        "determinism",
        start,
        None,
        same_cae && same_cnn,
        format!(
            "rerun weight files identical: cae {same_cae} ({} bytes), cnn {same_cnn} ({} bytes)",
            cae.len(),
            cnn.len()
        ),
    );
}

fn main() -> ExitCode {
    let only = std::env::var("QUBO_ACCEPTANCE").ok().map(|s| {
        s.split(',')
            .filter_map(|t| t.trim().parse().ok())
            .collect::<BTreeSet<u32>>()
    });
    let mut gate = Gate { only, failed: 0 };
    let dir = tempfile::tempdir().unwrap();

    if gate.wants(1) {
        criterion_1(&mut gate);
    }
    if gate.wants(2) {
        criterion_2(&mut gate);
    }
    if gate.wants(3) {
        criterion_3(&mut gate);
    }
    if gate.wants(4) {
        criterion_4(&mut gate);
    }
    let needs_tsp = [5, 6, 7, 9, 10].iter().any(|&i| gate.wants(i));
    let ds = needs_tsp.then(tsp_dataset);
    let cae = (gate.wants(5) || gate.wants(10))
        .then(|| criterion_5(&mut gate, ds.as_ref().unwrap(), dir.path()));
    let cnn = [6, 7, 10]
        .iter()
        .any(|&i| gate.wants(i))
        .then(|| criterion_6(&mut gate, ds.as_ref().unwrap(), dir.path()));
    if gate.wants(7) {
        criterion_7(
            &mut gate,
            ds.as_ref().unwrap(),
            dir.path(),
            cnn.as_ref().unwrap(),
        );
    }
    if gate.wants(8) {
        criterion_8(&mut gate, dir.path());
    }
    if gate.wants(9) {
        criterion_9(&mut gate, ds.as_ref().unwrap());
    }
    if gate.wants(10) {
        criterion_10(
            &mut gate,
            ds.as_ref().unwrap(),
            dir.path(),
            cae.as_ref().unwrap(),
            &cnn.as_ref().unwrap().weights,
        );
    }
    if gate.failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", gate.failed);
        ExitCode::FAILURE
    }
}

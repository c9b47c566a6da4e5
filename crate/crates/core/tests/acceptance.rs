//! End-to-end acceptance checks. Runs as a plain binary so that every
//! criterion prints its verdict even when the suite passes.

use std::path::Path;
use std::time::{Duration, Instant};

use juggler_core::benchmarks::ObjectiveKind;
use juggler_core::ereps::{
    compute_weights, dual_objective, kl_at_xi, policy_update, sample_kl, solve_dual, CovarianceMode, DualSolution,
    EpisodeBatch,
};
use juggler_core::harness::{run_batch_study, run_learning, ExperimentConfig, ObjectiveSelector};
use juggler_core::policy::kl_divergence;
use juggler_core::sim::{
    ballistic_step, default_mask_spec, pd_gravity_torque, rollout, seed_via_points, ArmModel, BallState, SimConfig,
};
use juggler_core::spline::{spline_coefficients, BoxLimits, ConstraintMask, SlotTag, ViaPoint};
use juggler_core::GaussianPolicy;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Learning seed whose curve is quoted in the README.
const DOCUMENTED_SEED: u64 = 2;

struct Verdict {
    passed: bool,
    detail: String,
}

fn check(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let passed = v.passed && in_time;
    println!(
        "criterion {id} {} {name}: {} ({:.1} s{})",
        if passed { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64(),
        if in_time { String::new() } else { format!(", over the {} s budget", budget.as_secs()) }
    );
    passed
}

fn random_policy(rng: &mut ChaCha8Rng, n: usize) -> GaussianPolicy {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let mean = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let ridge = rng.gen_range(0.05..1.0);
    GaussianPolicy::new(mean, &a * a.transpose() + DMatrix::identity(n, n) * ridge).unwrap()
}

fn random_rewards(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
    loop {
        let r: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { scale * rng.gen_range(-1.0..1.0) })
            .collect();
        if r.iter().any(|x| *x != r[0]) {
            return r;
        }
    }
}

fn kl_constraint_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let (mut trials, mut active, mut worst_over, mut worst_slack) = (0, 0, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut failures = Vec::new();
    for _ in 0..600 {
        let n = rng.gen_range(1..7);
        let count = rng.gen_range(n.max(2)..4 * n + 10);
        let eps = [0.1, 0.5, 2.0][rng.gen_range(0..3)];
        let prior = random_policy(&mut rng, n);
        let samples = prior.sample(&mut rng, count);
        let rewards = random_rewards(&mut rng, count);
        let batch = EpisodeBatch::new(samples.clone(), rewards.clone()).unwrap();
        let (next, _) = match policy_update(&batch, &prior, eps) {
            Ok(r) => r,
            Err(e) => {
                failures.push(e.to_string());
                continue;
            }
        };
        trials += 1;
        let kl = kl_divergence(&prior, &next).unwrap();
        worst_over = worst_over.max(kl - eps);
        if let DualSolution::Optimal { eta } = solve_dual(&rewards, eps).unwrap() {
            let w = compute_weights(&rewards, eta);
            if kl_at_xi(&samples, &w, &prior, 0.0, CovarianceMode::Full) > eps {
                active += 1;
                worst_slack = worst_slack.max(eps - kl);
            }
        }
    }
    let passed = failures.is_empty() && trials >= 500 && worst_over <= 1e-4 && worst_slack <= 1e-3 && active > 0;
    Verdict {
        passed,
        detail: format!(
            "{trials} updates, max KL − ε = {worst_over:.2e}; {active} with an active bound, max ε − KL there = {worst_slack:.2e}; {} errors",
            failures.len()
        ),
    }
}

fn dual_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let (mut simplex, mut shift, mut skl, mut fd) = (0f64, 0f64, f64::NEG_INFINITY, 0f64);
    let mut batches = 0;
    for _ in 0..1200 {
        let n = rng.gen_range(2..60);
        let eps = 10f64.powf(rng.gen_range(-2.0..0.7));
        let rewards = random_rewards(&mut rng, n);
        let DualSolution::Optimal { eta } = solve_dual(&rewards, eps).unwrap() else {
            continue;
        };
        batches += 1;
        let w = compute_weights(&rewards, eta);
        simplex = simplex.max((w.iter().sum::<f64>() - 1.0).abs());
        skl = skl.max(sample_kl(&w) - eps);

        let c = rng.gen_range(-100.0..100.0);
        let shifted: Vec<f64> = rewards.iter().map(|r| r + c).collect();
        if let DualSolution::Optimal { eta: eta_c } = solve_dual(&shifted, eps).unwrap() {
            let wc = compute_weights(&shifted, eta_c);
            shift = shift.max(w.iter().zip(&wc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        } else {
            shift = f64::INFINITY;
        }

        if eta > 1e-7 && eta < 1e7 {
            let h = 1e-5 * eta;
            let d = (dual_objective(&rewards, eps, eta + h) - dual_objective(&rewards, eps, eta - h)) / (2.0 * h);
            fd = fd.max(d.abs() / (1.0 + dual_objective(&rewards, eps, eta).abs()));
        }
    }
    Verdict {
        passed: batches >= 1000 && simplex <= 1e-12 && shift <= 1e-10 && skl <= 1e-6 && fd <= 1e-4,
        detail: format!(
            "{batches} batches: |Σw − 1| ≤ {simplex:.1e}, shift Δw ≤ {shift:.1e}, sample KL − ε ≤ {skl:.1e}, |g'| rel ≤ {fd:.1e}"
        ),
    }
}

fn spline_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let (mut bc, mut periodic) = (0f64, 0f64);
    for _ in 0..1500 {
        let joints = rng.gen_range(1..5);
        let count = rng.gen_range(2..9);
        let vps: Vec<ViaPoint> = (0..count)
            .map(|_| {
                ViaPoint::new(
                    (0..joints).map(|_| rng.gen_range(-2.5..2.5)).collect(),
                    (0..joints).map(|_| rng.gen_range(-8.0..8.0)).collect(),
                    rng.gen_range(0.1..2.0),
                )
            })
            .collect();
        let cycle = rng.gen_bool(0.7).then(|| rng.gen_range(0..count));
        let plan = spline_coefficients(&vps, cycle).unwrap();
        for (i, seg) in plan.segments().iter().enumerate() {
            let to = if i + 1 < count { &vps[i + 1] } else { &vps[cycle.unwrap()] };
            for (j, a) in seg.coeffs.iter().enumerate() {
                let s = seg.duration;
                let ends = [
                    a[0] - vps[i].q[j],
                    a[1] - vps[i].qdot[j],
                    a[0] + a[1] * s + a[2] * s * s + a[3] * s * s * s - to.q[j],
                    a[1] + 2.0 * a[2] * s + 3.0 * a[3] * s * s - to.qdot[j],
                ];
                bc = ends.iter().fold(bc, |m, e| m.max(e.abs()));
            }
        }
        if let Some(t0) = plan.cycle_start_time() {
            for _ in 0..5 {
                let t = t0 + rng.gen_range(0.0..4.0) * plan.period();
                let (q0, v0) = plan.evaluate(t);
                let (q1, v1) = plan.evaluate(t + plan.period());
                for j in 0..joints {
                    periodic = periodic.max((q0[j] - q1[j]).abs()).max((v0[j] - v1[j]).abs());
                }
            }
        }
    }

    let mut tags = Vec::new();
    let mut free = 0;
    for vp in 0..16 {
        tags.push(SlotTag::Free(free));
        free += 1;
        tags.push(if vp % 2 == 0 { SlotTag::Tied { source: vp * 3, sign: -1.0 } } else { SlotTag::Fixed(0.0) });
        if vp < 5 {
            tags.push(SlotTag::Free(free));
            free += 1;
        } else {
            tags.push(SlotTag::Tied { source: 2, sign: 1.0 });
        }
    }
    let mask = ConstraintMask::new(1, 16, tags).unwrap();
    let limits = BoxLimits {
        q_low: vec![-3.0],
        q_high: vec![3.0],
        qdot_max: vec![10.0],
        t_min: 0.1,
        t_max: 2.0,
    };
    let theta = DVector::from_fn(21, |i, _| 0.15 + 0.03 * i as f64);
    let round_trip =
        mask.full_len() == 48 && mask.free_len() == 21 && mask.extract(&mask.expand(&theta, &limits).unwrap()).unwrap() == theta;

    Verdict {
        passed: bc <= 1e-9 && periodic <= 1e-9 && round_trip,
        detail: format!("1500 plans: boundary error ≤ {bc:.1e}, periodicity ≤ {periodic:.1e}; 48/21 round trip {round_trip}"),
    }
}

/// g(q) = ∂V/∂q from link centre-of-mass heights, written out independently.
fn gravity_oracle(m: &ArmModel, q: [f64; 2]) -> [f64; 2] {
    let [l1, l2] = m.link_lengths;
    let [m1, m2] = m.link_masses;
    let (a, b) = (q[0], q[0] + q[1]);
    let g1 = m.gravity * (m1 * 0.5 * l1 * a.cos() + m2 * (l1 * a.cos() + 0.5 * l2 * b.cos()));
    let g2 = m.gravity * m2 * 0.5 * l2 * b.cos();
    [g1, g2]
}

fn energy(m: &ArmModel, q: [f64; 2], qd: [f64; 2]) -> f64 {
    let [l1, l2] = m.link_lengths;
    let [m1, m2] = m.link_masses;
    let [i1, i2] = m.link_inertias;
    let (a, b) = (q[0], q[0] + q[1]);
    let (wa, wb) = (qd[0], qd[0] + qd[1]);
    let v1 = (0.5 * l1 * wa).powi(2);
    let v2x = -l1 * a.sin() * wa - 0.5 * l2 * b.sin() * wb;
    let v2z = l1 * a.cos() * wa + 0.5 * l2 * b.cos() * wb;
    let kinetic = 0.5 * m1 * v1 + 0.5 * m2 * (v2x * v2x + v2z * v2z) + 0.5 * i1 * wa * wa + 0.5 * i2 * wb * wb;
    kinetic + m.gravity * (m1 * 0.5 * l1 * a.sin() + m2 * (l1 * a.sin() + 0.5 * l2 * b.sin()))
}

fn dynamics_suite() -> Verdict {
    let model = ArmModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    let (mut exact, mut gravity_err, mut qdd_max) = (true, 0f64, 0f64);
    for _ in 0..1000 {
        let q = [rng.gen_range(-1.4..0.8), rng.gen_range(0.2..2.6)];
        let qd = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let tau = pd_gravity_torque(&q, &qd, &q, &qd, &model);
        exact &= tau == model.gravity_torque(&q);
        let g = gravity_oracle(&model, q);
        gravity_err = gravity_err.max((tau[0] - g[0]).abs()).max((tau[1] - g[1]).abs());
        let rest = pd_gravity_torque(&q, &[0.0; 2], &q, &[0.0; 2], &model);
        let qdd = model.forward_dynamics(&q, &[0.0; 2], &rest);
        qdd_max = qdd_max.max(qdd[0].abs()).max(qdd[1].abs());
    }

    let mut passive = model.clone();
    passive.friction = [0.0; 2];
    passive.q_low = [-100.0; 2];
    passive.q_high = [100.0; 2];
    let (mut q, mut qd) = ([-1.0, 0.3], [0.0, 0.0]);
    let e0 = energy(&passive, q, qd);
    let mut drift = 0f64;
    for _ in 0..50_000 {
        passive.integrate(&mut q, &mut qd, &[0.0; 2], 2e-4);
        drift = drift.max((energy(&passive, q, qd) - e0).abs() / e0.abs());
    }

    let mut ball = BallState::free([0.1, 2.0], [0.7, 1.3]);
    let mut flight = 0f64;
    for k in 1..=1500u32 {
        ballistic_step(&mut ball, 1e-3, 9.81);
        let t = f64::from(k) * 1e-3;
        flight = flight
            .max((ball.pos[0] - (0.1 + 0.7 * t)).abs())
            .max((ball.pos[1] - (2.0 + 1.3 * t - 0.5 * 9.81 * t * t)).abs());
    }

    Verdict {
        passed: exact && gravity_err <= 1e-9 && qdd_max <= 1e-10 && drift <= 0.01 && flight <= 1e-9,
        detail: format!(
            "τ = g(q) exactly: {exact} (vs oracle {gravity_err:.1e}); rest |q̈| ≤ {qdd_max:.1e}; energy drift {:.3}%; flight error {flight:.1e} m",
            drift * 100.0
        ),
    }
}

fn benchmark_config(kind: ObjectiveKind, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed,
        objective: ObjectiveSelector::Benchmark,
        workers: Some(1),
        ..ExperimentConfig::default()
    };
    c.benchmark.kind = kind;
    match kind {
        ObjectiveKind::BinaryBall => {
            c.episodes = 50;
            c.benchmark.dim = 5;
            c.benchmark.radius = 1.0;
            c.benchmark.start_distance = 1.5;
            c.benchmark.initial_std = 0.5;
        }
        _ => {
            c.episodes = 100;
            c.benchmark.dim = 10;
            c.benchmark.start_distance = 5.0;
            c.benchmark.initial_std = 1.0;
        }
    }
    c
}

fn synthetic_suite() -> Verdict {
    let mut sphere_ok = 0;
    let mut closest = Vec::new();
    for seed in 0..20 {
        let report = run_learning(&benchmark_config(ObjectiveKind::Sphere, seed), None).unwrap();
        let best = report.episodes.iter().filter_map(|e| e.mean_distance).fold(f64::INFINITY, f64::min);
        sphere_ok += usize::from(best < 0.1);
        closest.push(best);
    }
    let mut ball_ok = 0;
    for seed in 0..20 {
        let report = run_learning(&benchmark_config(ObjectiveKind::BinaryBall, seed), None).unwrap();
        ball_ok += usize::from(report.episodes.iter().any(|e| e.hits as f64 >= 0.9 * 25.0));
    }
    closest.sort_by(f64::total_cmp);
    Verdict {
        passed: sphere_ok >= 18 && ball_ok >= 15,
        detail: format!(
            "SPHERE reached ‖μ − θ*‖ < 0.1 on {sphere_ok}/20 seeds (need 18; closest approach median {:.3}, best {:.3}); BINARY_BALL ≥ 0.9 batch success on {ball_ok}/20 (need 15)",
            closest[10], closest[0]
        ),
    }
}

fn batch_study_suite() -> Verdict {
    let config = ExperimentConfig { workers: Some(1), ..ExperimentConfig::default() };
    let report = run_batch_study(&config, &[10, 25], 20, None).unwrap();
    let f10 = report.hit_fraction(10).unwrap();
    let f25 = report.hit_fraction(25).unwrap();
    let failures: usize = report.summary.iter().map(|s| s.failures).sum();
    Verdict {
        passed: f25 > f10 && failures == 0,
        detail: format!("final policies at the 10 s cap: N = 25 {f25:.2}, N = 10 {f10:.2} over 20 seeds; {failures} failed cells"),
    }
}

fn learning_curve_suite() -> Verdict {
    let vps = seed_via_points();
    let mask = ConstraintMask::from_spec(&vps, &default_mask_spec()).unwrap();
    let seed_r = rollout(&mask.extract(&vps).unwrap(), &mask, &SimConfig::default()).unwrap();

    let config = ExperimentConfig { seed: DOCUMENTED_SEED, workers: Some(1), ..ExperimentConfig::default() };
    let report = run_learning(&config, None).unwrap();
    let first = report.episodes.iter().find(|e| e.hits >= 20).map(|e| e.episode);
    let hits: Vec<String> = report.episodes.iter().map(|e| e.hits.to_string()).collect();
    Verdict {
        passed: first.is_some_and(|e| e <= 20),
        detail: format!(
            "seed plan R = {:.3} s ({} catches); seed {DOCUMENTED_SEED} capped rollouts per episode [{}], first ≥ 20/25 at episode {}",
            seed_r.reward,
            seed_r.catches,
            hits.join(" "),
            first.map_or("never".into(), |e| e.to_string())
        ),
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism_suite() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig { seed: 7, episodes: 6, ..ExperimentConfig::default() };
    let mut runs = Vec::new();
    for (i, workers) in [1, 3].into_iter().enumerate() {
        config.workers = Some(workers);
        let learn = tmp.path().join(format!("learn{i}"));
        run_learning(&config, Some(&learn)).unwrap();
        let study = tmp.path().join(format!("study{i}"));
        run_batch_study(&ExperimentConfig { episodes: 3, ..config.clone() }, &[4, 6], 2, Some(&study)).unwrap();
        runs.push((dir_bytes(&learn), dir_bytes(&study)));
    }
    let files = runs[0].0.len() + runs[0].1.len();
    let same = runs[0] == runs[1] && files >= 5;
    Verdict {
        passed: same,
        detail: format!("{files} CSV files byte-identical across two runs (1 vs 3 workers): {same}"),
    }
}

fn main() {
    let mins = |m: u64| Duration::from_secs(60 * m);
    let results = [
        check(1, "KL-constraint suite", Duration::from_secs(60), kl_constraint_suite),
        check(2, "dual/weights suite", Duration::from_secs(30), dual_suite),
        check(3, "spline suite", Duration::from_secs(10), spline_suite),
        check(4, "controller/dynamics suite", Duration::from_secs(30), dynamics_suite),
        check(5, "synthetic convergence", mins(5), synthetic_suite),
        check(6, "batch-size study", mins(120), batch_study_suite),
        check(7, "learning curve", mins(15), learning_curve_suite),
        check(8, "determinism", mins(5), determinism_suite),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

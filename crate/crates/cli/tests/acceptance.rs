//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

// `!(d < 1e-3)` counts NaN as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::time::Instant;

use popgames::closedloop::{convergence_report, integrate, Trajectory};
use popgames::edm::Protocol;
use popgames::equilibria::nash_set;
use popgames::games::{congestion_example, task_allocation_example};
use popgames::passivity::{
    check_delta_antipassivity, check_delta_passivity, check_storage_gradient, lambda_star, memoryless_deficit,
    pbr_surplus_bound, StorageFunction, Theorem,
};
use popgames::simplex::sup_distance;
use popgames_cli::{
    antistorage_for, certify, finite, passivity_surplus, run, sweep, ExperimentConfig, FiniteOverrides, RunContext,
    Setup,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CONGESTION_NE: [f64; 3] = [4.0 / 11.0, 6.0 / 11.0, 1.0 / 11.0];
const RECIPES: [&str; 6] = [
    "congestion_bnn",
    "congestion_bnn_anticipatory",
    "demand_smith",
    "demand_smith_smoothing",
    "tasks_logit_low_noise",
    "tasks_logit_high_noise",
];

fn recipe(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../experiments").join(format!("{name}.toml"));
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn scratch() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

/// Trajectories of every initial condition of a recipe.
fn trajectories(cfg: &ExperimentConfig, step: f64) -> (Setup, Vec<Trajectory>) {
    let setup = Setup::new(cfg).unwrap();
    let trajs = setup
        .initial
        .iter()
        .map(|x0| {
            let q0 = cfg.initial_pdm_state(&setup.pdm, x0).unwrap();
            integrate(&setup.pdm, &setup.protocol, x0, &q0, cfg.integrator.horizon, step).unwrap()
        })
        .collect();
    (setup, trajs)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn c1_congestion_convergence() -> Outcome {
    let cfg = recipe("congestion_bnn");
    let dir = scratch();
    let t0 = Instant::now();
    let report = run(&cfg, &RunContext::new(dir.path(), 1)).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let dists: Vec<f64> = report.runs.iter().map(|r| sup_distance(&r.terminal_state, &CONGESTION_NE)).collect();
    let worst = dists.iter().cloned().fold(0.0, f64::max);
    let failing = dists.iter().filter(|&&d| !(d < 1e-3)).count();
    (
        report.runs.len() == 9 && failing == 0 && elapsed < 10.0,
        format!("{} runs, {failing} at or above 1e-3, worst {worst:.4e}, {elapsed:.2}s", report.runs.len()),
    )
}

fn c2_anticipation_speedup() -> Outcome {
    let memoryless = recipe("congestion_bnn");
    let anticipatory = recipe("congestion_bnn_anticipatory");
    let time_to = |cfg: &ExperimentConfig| -> Vec<f64> {
        let (setup, trajs) = trajectories(cfg, cfg.integrator.step);
        trajs
            .iter()
            .map(|t| {
                convergence_report(t, &setup.equilibria, setup.pdm.stationary_game())
                    .unwrap()
                    .time_to_tolerance(1e-2)
                    .unwrap_or(f64::INFINITY)
            })
            .collect()
    };
    let a = time_to(&memoryless);
    let b = time_to(&anticipatory);
    let wins = a.iter().zip(&b).filter(|(m, q)| q < m).count();
    let pairs: Vec<String> = a.iter().zip(&b).map(|(m, q)| format!("{m:.2}/{q:.2}")).collect();
    (wins >= 8, format!("anticipatory faster in {wins}/9 (memoryless/anticipatory: {})", pairs.join(" ")))
}

fn c3_demand_response() -> Outcome {
    // Equal payoffs on full support: -10 z1 - 0.01 = -5 z2 - 0.1 = -z3 - 1, Σz = 1.
    let c = -(1.0 + 0.1 / 5.0 + 0.01 / 10.0 + 1.0) / (1.0 / 10.0 + 1.0 / 5.0 + 1.0);
    let ne = [(-c - 0.01) / 10.0, (-c - 0.1) / 5.0, -c - 1.0];
    let mut ok = true;
    let mut detail = Vec::new();
    for name in ["demand_smith", "demand_smith_smoothing"] {
        let cfg = recipe(name);
        let (setup, trajs) = trajectories(&cfg, cfg.integrator.step);
        let mut worst_d: f64 = 0.0;
        let mut worst_g: f64 = 0.0;
        for t in &trajs {
            let r = convergence_report(t, &setup.equilibria, setup.pdm.stationary_game()).unwrap();
            worst_d = worst_d.max(sup_distance(t.final_state().entries(), &ne));
            worst_g = worst_g.max(r.terminal_payoff_gap);
        }
        ok &= trajs.len() == 9 && worst_d < 1e-3 && worst_g < 1e-4;
        detail.push(format!("{name}: dist {worst_d:.2e}, gap {worst_g:.2e}"));
    }
    (ok, detail.join("; "))
}

fn c4_task_allocation() -> Outcome {
    let dir = scratch();
    let ctx = RunContext::new(dir.path(), 1);
    let low = sweep(&recipe("tasks_logit_low_noise"), &ctx).unwrap();
    let high = sweep(&recipe("tasks_logit_high_noise"), &ctx).unwrap();
    let nash = nash_set(&task_allocation_example(), 200, 1e-9).unwrap();
    let near_nash = low.limit_points.iter().filter(|lp| nash.distance(&lp.point) < 1e-2).count();
    let high_set = Setup::new(&recipe("tasks_logit_high_noise")).unwrap().equilibria;
    let target = &high_set.points()[0];
    let worst_high = high.terminal_states.iter().map(|z| sup_distance(z, target.entries())).fold(0.0, f64::max);
    let ok = low.terminal_states.len() == 50
        && near_nash >= 2
        && near_nash == low.limit_points.len()
        && high_set.len() == 1
        && worst_high < 1e-3;
    (
        ok,
        format!(
            "eta=0.01: {} limit points, {near_nash} near NE; eta=25: worst distance {worst_high:.2e}",
            low.limit_points.len()
        ),
    )
}

fn c5_certificates() -> Outcome {
    let (m, _) = congestion_example().affine_parts().map(|(m, o)| (m.clone(), o.clone())).unwrap();
    let lambda = lambda_star(&m).unwrap();
    let deficit = memoryless_deficit(&task_allocation_example(), 200).unwrap();
    let surplus = pbr_surplus_bound(25.0, 3, 200).unwrap();
    let theorems: Vec<Theorem> = ["congestion_bnn", "demand_smith_smoothing", "tasks_logit_high_noise"]
        .iter()
        .map(|n| certify(&recipe(n)).unwrap().theorem_applied)
        .collect();
    let ok = lambda.abs() <= 1e-10
        && deficit > 24.5
        && deficit < 25.0
        && surplus >= 25.0
        && theorems == [Theorem::Thm1, Theorem::Thm2, Theorem::Thm3II];
    (ok, format!("lambda* {lambda:.1e}, deficit {deficit:.4}, surplus {surplus:.2}, theorems {theorems:?}"))
}

fn c6_passivity_suites() -> Outcome {
    let mut ok = true;
    let mut passivity_runs = 0;
    let mut antipassivity_runs = 0;
    let mut failures = Vec::new();
    for name in RECIPES {
        let cfg = recipe(name);
        let (setup, trajs) = trajectories(&cfg, cfg.integrator.step);
        let sf = StorageFunction::for_protocol(&setup.protocol).unwrap();
        let surplus = passivity_surplus(&setup.protocol, setup.pdm.game().mass());
        let anti = antistorage_for(&setup.pdm, 200).unwrap();
        let contractive = anti.as_ref().is_some_and(|(_, nu)| *nu == 0.0);
        for (k, t) in trajs.iter().enumerate() {
            let rep = check_delta_passivity(t, &sf, surplus).unwrap();
            passivity_runs += 1;
            if !rep.passed {
                ok = false;
                failures.push(format!("{name}#{k} S {:.2e}>{:.2e}", rep.max_violation, rep.tolerance));
            }
            if let (true, Some((af, nu))) = (contractive, &anti) {
                let rep = check_delta_antipassivity(t, af, *nu).unwrap();
                antipassivity_runs += 1;
                if !rep.passed {
                    ok = false;
                    failures.push(format!("{name}#{k} L {:.2e}>{:.2e}", rep.max_violation, rep.tolerance));
                }
            }
        }
    }
    (
        ok && antipassivity_runs >= 36,
        format!("{passivity_runs} storage checks, {antipassivity_runs} antistorage checks, failures: {failures:?}"),
    )
}

fn c7_gradient_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ok = true;
    let mut detail = Vec::new();
    for protocol in [Protocol::bnn(3).unwrap(), Protocol::smith(3).unwrap(), Protocol::logit(3, 0.5).unwrap()] {
        let sf = StorageFunction::for_protocol(&protocol).unwrap();
        let rep = check_storage_gradient(&sf, &protocol, 200, &mut rng).unwrap();
        ok &= rep.passed && rep.tolerance <= 1e-5 && rep.samples == 200;
        detail.push(format!("{} {:.1e}", protocol.name(), rep.max_violation));
    }
    (ok, detail.join(", "))
}

fn c8_storage_decay() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for name in RECIPES {
        let cfg = recipe(name);
        let theorem = certify(&cfg).unwrap().theorem_applied;
        if !matches!(theorem, Theorem::Thm1 | Theorem::Thm2) {
            continue;
        }
        let (setup, trajs) = trajectories(&cfg, cfg.integrator.step);
        let sf = StorageFunction::for_protocol(&setup.protocol).unwrap();
        let mut worst_rise: f64 = 0.0;
        let mut worst_end: f64 = 0.0;
        for mut t in trajs {
            t.annotate(None, Some(&sf)).unwrap();
            let s = t.storage_series().unwrap();
            worst_rise = s.windows(2).map(|w| w[1] - w[0]).fold(worst_rise, f64::max);
            worst_end = worst_end.max(*s.last().unwrap());
        }
        ok &= worst_rise <= 1e-6 && worst_end < 1e-6;
        detail.push(format!("{name} ({theorem:?}): max rise {worst_rise:.1e}, terminal {worst_end:.1e}"));
    }
    (ok && detail.len() == 4, detail.join("; "))
}

fn c9_mean_field() -> Outcome {
    let cfg = recipe("demand_smith_finite");
    let dir = scratch();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let t0 = Instant::now();
    let overrides = FiniteOverrides { populations: Some(vec![100, 1000, 10000]), seeds: Some(20), horizon: Some(50.0) };
    let report = finite(&cfg, &overrides, &RunContext::new(dir.path(), jobs)).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let medians: Vec<f64> = [100, 1000, 10000]
        .iter()
        .map(|&n| median(report.rows.iter().filter(|r| r.population == n).map(|r| r.sup_deviation).collect()))
        .collect();
    let ok = report.rows.len() == 60
        && medians[0] > medians[1]
        && medians[1] > medians[2]
        && medians[2] < 0.05
        && elapsed < 120.0;
    (ok, format!("medians {medians:.4?}, rho {:.3}, {elapsed:.1}s", report.rho))
}

fn c10_determinism_and_numerics() -> Outcome {
    let mut detail = Vec::new();

    let mut worst_halving: f64 = 0.0;
    let mut worst_projection: f64 = 0.0;
    for name in RECIPES {
        let cfg = recipe(name);
        let (_, coarse) = trajectories(&cfg, cfg.integrator.step);
        let (_, fine) = trajectories(&cfg, cfg.integrator.step / 2.0);
        for (a, b) in coarse.iter().zip(&fine) {
            worst_halving = worst_halving.max(sup_distance(a.final_state().entries(), b.final_state().entries()));
            worst_projection = worst_projection.max(a.projection_correction()).max(b.projection_correction());
        }
    }
    detail.push(format!("step halving {worst_halving:.1e}, projection {worst_projection:.1e}"));

    let read_all = |dir: &std::path::Path| -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
            .collect();
        files.sort();
        files
    };
    let (a, b) = (scratch(), scratch());
    let cfg = recipe("congestion_bnn_anticipatory");
    run(&cfg, &RunContext::new(a.path(), 1)).unwrap();
    run(&cfg, &RunContext::new(b.path(), 2)).unwrap();
    let fin = recipe("demand_smith_finite");
    let small = FiniteOverrides { populations: Some(vec![50, 200]), seeds: Some(3), horizon: Some(10.0) };
    finite(&fin, &small, &RunContext::new(a.path(), 1)).unwrap();
    finite(&fin, &small, &RunContext::new(b.path(), 2)).unwrap();
    let (fa, fb) = (read_all(a.path()), read_all(b.path()));
    let identical = fa.len() == 10 && fa == fb;
    detail.push(format!("{} CSVs byte-identical: {identical}", fa.len()));

    (worst_halving <= 1e-6 && worst_projection < 1e-5 && identical, detail.join("; "))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("C1 congestion convergence", c1_congestion_convergence),
        ("C2 anticipation speedup", c2_anticipation_speedup),
        ("C3 demand response convergence", c3_demand_response),
        ("C4 task allocation bifurcation", c4_task_allocation),
        ("C5 certificates", c5_certificates),
        ("C6 passivity inequality suites", c6_passivity_suites),
        ("C7 gradient identity", c7_gradient_identity),
        ("C8 storage decay", c8_storage_decay),
        ("C9 mean-field validation", c9_mean_field),
        ("C10 determinism and numerics", c10_determinism_and_numerics),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t0 = Instant::now();
        let (passed, detail) = check();
        if !passed {
            failed += 1;
        }
        println!("{} {name} ({:.1}s): {detail}", if passed { "PASS" } else { "FAIL" }, t0.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

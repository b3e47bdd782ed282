//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line per criterion and exits non-zero if any failed. Timings are part of
//! the criteria, so nothing here runs in parallel.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use regmdp::analysis::{check_performance_error, sparsity, uniformity_gap};
use regmdp::io::read_sweep_csv;
use regmdp::mdp::{gridworld, gridworld_coords, gridworld_index, random_mdp, TabularMdp};
use regmdp::projection::{brute_force_project, project};
use regmdp::solver::{bellman_operator, rpi, solve_unregularized, value_iterate, Solution};
use regmdp::Regularizer;

const EPS: f64 = 1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn default_random() -> TabularMdp {
    random_mdp(50, 10, 0.99, 0.95, 7).unwrap()
}

fn sparsemax(z: &[f64]) -> Vec<f64> {
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let (mut cum, mut tau) = (0.0, 0.0);
    for (k, v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            tau = t;
        }
    }
    z.iter().map(|v| (v - tau).max(0.0)).collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn closed_forms() -> Outcome {
    // φ(x) = ½(1−x) has π = sparsemax(Q/λ); Shannon has π = softmax(Q/λ)
    let tsallis = Regularizer::tsallis(0.5, 2.0).unwrap();
    let shannon = Regularizer::shannon();
    let mut rng = StdRng::seed_from_u64(1);
    let (mut worst_t, mut worst_s) = (0.0f64, 0.0f64);
    let mut rows = 0;
    for lambda in [0.01, 1.0, 100.0] {
        for _ in 0..1000 {
            let n = rng.random_range(2..=50);
            let q: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let z: Vec<f64> = q.iter().map(|v| v / lambda).collect();
            worst_t = worst_t.max(sup(&project(&tsallis, &q, lambda).unwrap().pi, &sparsemax(&z)));
            worst_s = worst_s.max(sup(&project(&shannon, &q, lambda).unwrap().pi, &softmax(&z)));
            rows += 1;
        }
    }
    Outcome::new(
        worst_t < 1e-8 && worst_s < 1e-8,
        format!("{rows} rows, tsallis err {worst_t:.1e}, shannon err {worst_s:.1e}"),
    )
}

fn inverse_round_trip() -> Outcome {
    let (lo, hi) = (1e-6f64, 1.0 - 1e-6);
    let grid: Vec<f64> = (0..1000).map(|i| lo * (hi / lo).powf(i as f64 / 999.0)).collect();
    let mut worst = 0.0f64;
    let mut problems = Vec::new();
    for (name, reg) in Regularizer::presets() {
        for &x in &grid {
            match reg.f_prime(x) {
                Ok(y) => worst = worst.max((reg.g(y) - x).abs()),
                Err(e) => problems.push(format!("{name} at {x}: {e}")),
            }
        }
    }
    Outcome::new(
        worst <= 1e-8 && problems.is_empty(),
        format!("7 x 1000 points, worst {worst:.1e}{}", problems.first().map(|p| format!(", {p}")).unwrap_or_default()),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut count = 0;
    for (_, reg) in Regularizer::presets() {
        for i in 0..200 {
            let n = 2 + i % 2;
            let q: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lambda = 10f64.powf(rng.random_range(-1.5..1.0));
            let fast = project(&reg, &q, lambda).unwrap().pi;
            let slow = brute_force_project(&reg, &q, lambda, 200).unwrap();
            worst = worst.max(sup(&fast, &slow));
            count += 1;
        }
    }
    Outcome::new(worst < 1e-3, format!("{count} instances, worst {worst:.1e}"))
}

fn random_values(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-10.0..10.0)).collect()
}

fn operator_lemmas() -> Outcome {
    let m = random_mdp(20, 5, 0.9, 0.5, 11).unwrap();
    let gamma = m.gamma();
    let mut rng = StdRng::seed_from_u64(11);
    let (mut contraction, mut monotone, mut translation) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0f64);
    for (_, reg) in Regularizer::presets() {
        for lambda in [0.01, 1.0] {
            let t = |v: &[f64]| bellman_operator(&m, &reg, lambda, v).unwrap();
            for trial in 0..100 {
                let v1 = random_values(&mut rng, 20);
                // alternate independent pairs with near-parallel ones
                let v2: Vec<f64> = if trial % 2 == 0 {
                    random_values(&mut rng, 20)
                } else {
                    let c = rng.random_range(-10.0..10.0);
                    v1.iter().map(|x| x + c + rng.random_range(-0.1..0.1)).collect()
                };
                contraction = contraction.max(sup(&t(&v1), &t(&v2)) - gamma * sup(&v1, &v2));

                let above: Vec<f64> = v1.iter().map(|x| x + rng.random_range(0.0..5.0)).collect();
                let (t1, t2) = (t(&v1), t(&above));
                monotone = monotone.max(t1.iter().zip(&t2).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max));

                let c = rng.random_range(-10.0..10.0);
                let shifted: Vec<f64> = v1.iter().map(|x| x + c).collect();
                let ts = t(&shifted);
                translation = translation.max(t1.iter().zip(&ts).map(|(a, b)| (b - a - gamma * c).abs()).fold(0.0, f64::max));
            }
        }
    }
    Outcome::new(
        contraction <= 1e-12 && monotone <= 1e-10 && translation <= 1e-10,
        format!(
            "7 regs x 2 lambdas x 100 trials; contraction excess {contraction:.1e}, monotonicity {monotone:.1e}, translation {translation:.1e}"
        ),
    )
}

/// Plain Bellman operator computed directly from the tables.
fn plain_operator(m: &TabularMdp, v: &[f64]) -> Vec<f64> {
    (0..m.n_states())
        .map(|s| {
            (0..m.n_actions())
                .map(|a| m.reward(s, a) + m.gamma() * m.transition_row(s, a).iter().zip(v).map(|(p, x)| p * x).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn sandwich() -> Outcome {
    let m = random_mdp(20, 5, 0.9, 0.5, 11).unwrap();
    let mut rng = StdRng::seed_from_u64(5);
    let (mut lower, mut upper) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (_, reg) in Regularizer::presets() {
        for lambda in [0.01, 1.0] {
            let bonus = lambda * reg.phi(1.0 / 5.0).unwrap();
            for _ in 0..100 {
                let v = random_values(&mut rng, 20);
                let t = plain_operator(&m, &v);
                let tl = bellman_operator(&m, &reg, lambda, &v).unwrap();
                for (a, b) in t.iter().zip(&tl) {
                    lower = lower.max(a - b);
                    upper = upper.max(b - a - bonus);
                }
            }
        }
    }
    Outcome::new(
        lower <= 1e-10 && upper <= 1e-10,
        format!("1400 value functions; worst lower {lower:.1e}, worst upper {upper:.1e}"),
    )
}

fn performance_error() -> Outcome {
    let m = default_random();
    let mut fails = Vec::new();
    let mut tightest = f64::INFINITY;
    for (name, reg) in Regularizer::presets() {
        for lambda in [0.01, 0.1, 1.0] {
            let bound = lambda * reg.phi(0.1).unwrap() / 0.01;
            let p = check_performance_error(&m, &reg, lambda, 1e-9).unwrap();
            tightest = tightest.min(bound - p.err);
            if p.min_diff < 0.0 || p.err > bound + 1e-6 {
                fails.push(format!("{name}@{lambda}: err {:.3e} bound {bound:.3e} min {:.1e}", p.err, p.min_diff));
            }
        }
    }
    let mut order = true;
    for lambda in [0.01, 0.1, 1.0] {
        order &= 0.5 * (1.0 - 0.1) * lambda / 0.01 < 10f64.ln() * lambda / 0.01;
    }
    Outcome::new(
        fails.is_empty() && order,
        format!(
            "21 cases, smallest bound margin {tightest:.3e}, tsallis bound below shannon: {order}{}",
            fails.first().map(|f| format!("; {f}")).unwrap_or_default()
        ),
    )
}

fn no_sparsity() -> Outcome {
    let m = default_random();
    let mut pass = true;
    let mut notes = Vec::new();
    for name in ["shannon", "mix"] {
        let reg = Regularizer::preset(name).unwrap();
        for lambda in [0.01, 0.1, 1.0, 10.0] {
            let sol = rpi(&m, &reg, lambda, 1e-12, 500).unwrap();
            let min = sol.policy.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
            let delta = sparsity(&sol.policy, EPS).unwrap();
            if !(min > 0.0 && delta == 1.0) {
                pass = false;
                notes.push(format!("{name}@{lambda}: min entry {min:.1e}, delta {delta}"));
            }
        }
    }
    let detail = if notes.is_empty() {
        "8 solutions fully supported".to_string()
    } else {
        notes.join("; ")
    };
    Outcome::new(pass, detail)
}

fn unique_argmax(sol: &Solution) -> bool {
    sol.q_star.rows().all(|row| {
        let mut v = row.to_vec();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v[0] - v[1] > 1e-9
    })
}

fn sparsity_endpoints() -> Outcome {
    let m = default_random();
    let unique = unique_argmax(&solve_unregularized(&m, 1e-12, 100_000).unwrap());
    let mut notes = Vec::new();
    for (name, reg) in Regularizer::presets() {
        if reg.induces_sparsity() {
            let lo = rpi(&m, &reg, 1e-6, 1e-12, 500).unwrap();
            let d = sparsity(&lo.policy, EPS).unwrap();
            if d != 0.1 {
                notes.push(format!("{name}@1e-6 delta {d}"));
            }
        }
        let hi = rpi(&m, &reg, 1e6, 1e-12, 500).unwrap();
        let (d, gap) = (sparsity(&hi.policy, EPS).unwrap(), uniformity_gap(&hi.policy));
        if d != 1.0 || gap >= 1e-3 {
            notes.push(format!("{name}@1e6 delta {d} gap {gap:.1e}"));
        }
    }
    Outcome::new(
        unique && notes.is_empty(),
        format!("unique argmax {unique}{}", if notes.is_empty() { String::new() } else { format!("; {}", notes.join("; ")) }),
    )
}

fn solver_cross_validation(gaps: &mut Vec<f64>) -> Outcome {
    let envs = [("random", default_random()), ("gridworld", gridworld(5, 0.99).unwrap())];
    let (mut worst_diff, mut worst_improvement) = (0.0f64, f64::INFINITY);
    let mut fails = Vec::new();
    for (env, m) in &envs {
        for (name, reg) in Regularizer::presets() {
            for lambda in [0.01, 0.1, 1.0, 10.0] {
                let vi = value_iterate(m, &reg, lambda, 1e-9, 100_000).unwrap();
                let pi = rpi(m, &reg, lambda, 1e-12, 500).unwrap();
                let d = sup(&vi.v_star, &pi.v_star);
                let imp = pi.min_q_improvement.unwrap();
                gaps.push(vi.value_form_gap);
                gaps.push(pi.value_form_gap);
                worst_diff = worst_diff.max(d);
                worst_improvement = worst_improvement.min(imp);
                if d >= 1e-6 || imp < -1e-10 {
                    fails.push(format!("{env}/{name}@{lambda}: diff {d:.1e} improvement {imp:.1e}"));
                }
            }
        }
    }
    Outcome::new(
        fails.is_empty(),
        format!(
            "56 cases, worst |V_vi - V_rpi| {worst_diff:.1e}, worst Q improvement {worst_improvement:.1e}{}",
            fails.first().map(|f| format!("; {f}")).unwrap_or_default()
        ),
    )
}

fn value_forms(gaps: &[f64]) -> Outcome {
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    Outcome::new(
        !gaps.is_empty() && worst <= 1e-9,
        format!("{} solver runs, worst gap {worst:.1e}", gaps.len()),
    )
}

fn gridworld_symmetry() -> Outcome {
    let n = 5;
    let g = gridworld(n, 0.99).unwrap();
    let origin = gridworld_index(n, 0, 0);
    let (mut policy_dev, mut orbit_dev) = (0.0f64, 0.0f64);
    for (_, reg) in Regularizer::presets() {
        for lambda in [0.01, 1.0, 10.0] {
            let sol = rpi(&g, &reg, lambda, 1e-12, 500).unwrap();
            policy_dev = policy_dev.max(sol.policy.row(origin).iter().map(|p| (p - 0.25).abs()).fold(0.0, f64::max));
            for s in 0..g.n_states() {
                let (x, y) = gridworld_coords(n, s);
                for (a, b) in [(x, y), (-x, y), (x, -y), (-x, -y), (y, x), (-y, x), (y, -x), (-y, -x)] {
                    orbit_dev = orbit_dev.max((sol.v_star[s] - sol.v_star[gridworld_index(n, a, b)]).abs());
                }
            }
        }
    }
    Outcome::new(
        policy_dev <= 1e-6 && orbit_dev <= 1e-8,
        format!("21 solutions, origin policy deviation {policy_dev:.1e}, orbit spread {orbit_dev:.1e}"),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_regmdp"))
        .current_dir(dir)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// Start of the δ curve, read qualitatively: within a tenth of the possible
/// range `[1/|A|, 1]` of the expected end.
fn near(value: f64, target: f64, n_actions: usize) -> bool {
    (value - target).abs() <= 0.1 * (1.0 - 1.0 / n_actions as f64)
}

fn figure_sweep() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    if !run_cli(dir.path(), &["gen-mdp", "--kind", "random", "--out", "mdp.json"]) {
        return Outcome::new(false, "gen-mdp failed");
    }
    let n_a = 10;
    let uniform = 1.0 / n_a as f64;
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, reg) in Regularizer::presets() {
        let out = format!("{name}.csv");
        if !run_cli(
            dir.path(),
            &["sweep", "--mdp", "mdp.json", "--reg", name, "--lambdas", "logspace(1e-3,1e3,61)", "--out", &out],
        ) {
            pass = false;
            notes.push(format!("{name}: sweep failed"));
            continue;
        }
        let (_, rows) = read_sweep_csv(&dir.path().join(&out)).unwrap();
        let (first, last) = (&rows[0], &rows[rows.len() - 1]);
        let start = if reg.induces_sparsity() { uniform } else { 1.0 };
        let probe_dev = last.probe.iter().map(|p| (p - uniform).abs()).fold(0.0, f64::max);
        let ok = rows.len() == 61
            && rows.iter().all(|r| r.status == "ok")
            && near(first.delta, start, n_a)
            && last.delta == 1.0
            && probe_dev < 1e-3;
        pass &= ok;
        notes.push(format!(
            "{name} {} delta {:.3}->{} probe {probe_dev:.1e}",
            if ok { "ok" } else { "BAD" },
            first.delta,
            last.delta
        ));
    }
    Outcome::new(pass, notes.join("; "))
}

fn main() -> ExitCode {
    let mut gaps = Vec::new();
    type Criterion<'a> = (u32, &'a str, Duration, Box<dyn FnMut() -> Outcome + 'a>);
    let mut criteria: Vec<Criterion> = vec![
        (1, "closed-form projections", Duration::from_secs(5), Box::new(closed_forms)),
        (2, "inverse round trip", Duration::from_secs(1), Box::new(inverse_round_trip)),
        (3, "oracle equivalence", Duration::from_secs(60), Box::new(oracle_equivalence)),
        (4, "contraction, monotonicity, translation", Duration::from_secs(30), Box::new(operator_lemmas)),
        (5, "sandwich bound", Duration::from_secs(30), Box::new(sandwich)),
        (6, "performance error bound", Duration::from_secs(120), Box::new(performance_error)),
        (7, "no sparsity without a finite f'(0+)", Duration::from_secs(60), Box::new(no_sparsity)),
        (8, "sparsity endpoints", Duration::from_secs(120), Box::new(sparsity_endpoints)),
        (9, "solver cross-validation", Duration::from_secs(300), Box::new(|| solver_cross_validation(&mut gaps))),
    ];
    let mut failed = Vec::new();
    let mut report = |id: u32, title: &str, budget: Duration, start: Instant, o: Outcome| {
        let took = start.elapsed();
        let pass = o.pass && took < budget;
        println!(
            "criterion {id:>2} {}: {title}: {} [{:.2}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
        if !pass {
            failed.push(id);
        }
    };
    for (id, title, budget, run) in criteria.iter_mut() {
        let start = Instant::now();
        let o = run();
        report(*id, title, *budget, start, o);
    }
    drop(criteria);
    let start = Instant::now();
    let o = value_forms(&gaps);
    report(10, "value formula consistency", Duration::from_secs(300), start, o);
    let start = Instant::now();
    report(11, "gridworld symmetry", Duration::from_secs(30), start, gridworld_symmetry());
    let start = Instant::now();
    report(12, "lambda sweep shape", Duration::from_secs(600), start, figure_sweep());

    if failed.is_empty() {
        println!("acceptance: all 12 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}

//! `regmdp`: generate MDPs, solve them, sweep λ and audit the operator bounds.

mod grid;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use regmdp::analysis::{self, PropertyReport, SolverChoice, SweepOptions, SweepRecord};
use regmdp::io::{self, LoadedMdp, MdpProvenance, RunProvenance, SolveSettings, SolutionFile};
use regmdp::mdp::{gridworld, random_mdp, TabularMdp};
use regmdp::projection::SUPPORT_EPS;
use regmdp::solver::{self, DEFAULT_TOL};
use regmdp::Regularizer;

#[derive(Parser)]
#[command(name = "regmdp", version, about = "Tabular regularized MDP solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random or gridworld MDP file.
    GenMdp(GenArgs),
    /// Solve one MDP for one regularizer and λ.
    Solve(SolveArgs),
    /// Solve over a λ grid and write a CSV table.
    Sweep(SweepArgs),
    /// Check the operator properties and bounds; exits non-zero on failure.
    Audit(AuditArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Random,
    Gridworld,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Vi,
    Rpi,
}

impl From<Method> for SolverChoice {
    fn from(m: Method) -> Self {
        match m {
            Method::Vi => SolverChoice::Vi,
            Method::Rpi => SolverChoice::Rpi,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Zero,
    Random,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value_t = 50)]
    states: usize,
    #[arg(long, default_value_t = 10)]
    actions: usize,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    /// Probability of zeroing each transition entry (random kind).
    #[arg(long, default_value_t = 0.95)]
    clip: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Grid size; the grid has (2N−1)² cells (gridworld kind).
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SolveArgs {
    #[arg(long)]
    mdp: PathBuf,
    /// Regularizer, e.g. `shannon`, `tsallis:k=0.5,q=2` or a preset name.
    #[arg(long = "reg")]
    reg: String,
    /// Regularization weight; 0 gives the plain greedy solution.
    #[arg(long)]
    lambda: f64,
    #[arg(long, value_enum, default_value = "vi")]
    method: Method,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Starting values for value iteration.
    #[arg(long, value_enum, default_value = "zero")]
    init: Init,
    /// Seed for `--init random`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "solution.json")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long = "reg")]
    reg: String,
    /// `logspace(lo,hi,n)` or a comma list such as `0.1,1,10`.
    #[arg(long, default_value = "logspace(1e-3,1e3,61)")]
    lambdas: String,
    #[arg(long, value_enum, default_value = "rpi")]
    method: Method,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Probe states whose action distributions are recorded. Defaults to
    /// state 0, or three fixed cells for gridworld files.
    #[arg(long = "probe")]
    probes: Vec<usize>,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct AuditArgs {
    #[arg(long)]
    mdp: PathBuf,
    /// Regularizers to audit (repeatable); all presets by default.
    #[arg(long = "reg")]
    regs: Vec<String>,
    #[arg(long, default_value = "0.01,1")]
    lambdas: String,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// Value-iteration tolerance for the performance-error check.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Apply the operator with this discount instead, while still checking
    /// against the file's discount. Fault injection; skips the
    /// performance-error check, whose solvers need a valid discount.
    #[arg(long)]
    perturb_gamma: Option<f64>,
    /// Skip the performance-error check.
    #[arg(long)]
    skip_performance: bool,
    #[arg(long, default_value = "audit.json")]
    out: PathBuf,
}

fn provenance() -> RunProvenance {
    RunProvenance {
        tool: "regmdp".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        args: std::env::args().collect(),
    }
}

fn parse_reg(s: &str) -> Result<Regularizer> {
    s.parse::<Regularizer>().with_context(|| format!("bad regularizer {s:?}"))
}

fn load(path: &Path) -> Result<LoadedMdp> {
    Ok(io::read_mdp(path)?)
}

fn init_threads() -> Result<()> {
    let n = match std::env::var("REGMDP_THREADS") {
        Ok(v) => v.trim().parse::<usize>().with_context(|| format!("REGMDP_THREADS={v:?} is not a count"))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting the thread pool")?;
    Ok(())
}

fn gen_mdp(args: GenArgs) -> Result<ExitCode> {
    let (mdp, mut prov) = match args.kind {
        Kind::Random => (
            random_mdp(args.states, args.actions, args.gamma, args.clip, args.seed)?,
            MdpProvenance {
                generator: "random".into(),
                seed: Some(args.seed),
                clip_prob: Some(args.clip),
                ..Default::default()
            },
        ),
        Kind::Gridworld => (
            gridworld(args.n, args.gamma)?,
            MdpProvenance {
                generator: "gridworld".into(),
                grid_n: Some(args.n),
                ..Default::default()
            },
        ),
    };
    prov.run = Some(provenance());
    let hash = io::write_mdp(&args.out, &mdp, &prov)?;
    println!(
        "wrote {} ({} states, {} actions)\nsha256 {hash}",
        args.out.display(),
        mdp.n_states(),
        mdp.n_actions()
    );
    Ok(ExitCode::SUCCESS)
}

fn solve(args: SolveArgs) -> Result<ExitCode> {
    let loaded = load(&args.mdp)?;
    let reg = parse_reg(&args.reg)?;
    if !(args.lambda.is_finite() && args.lambda >= 0.0) {
        bail!("--lambda must be finite and non-negative, got {}", args.lambda);
    }
    let choice = SolverChoice::from(args.method);
    let max_iter = args.max_iter.unwrap_or(choice.default_max_iter());
    let mdp = &loaded.mdp;
    let sol = match (choice, args.init) {
        (SolverChoice::Vi, Init::Random) => {
            let v0 = solver::random_initial_values(mdp.n_states(), args.seed);
            solver::value_iterate_from(mdp, &reg, args.lambda, &v0, args.tol, max_iter)
        }
        _ => choice.solve(mdp, &reg, args.lambda, args.tol, max_iter),
    }
    .context("solver failed")?;
    let delta = analysis::sparsity(&sol.policy, SUPPORT_EPS)?;
    let solver_name = if args.lambda == 0.0 { "vi" } else { choice.name() };
    println!(
        "delta {delta}\niterations {}\nfinal_residual {:e}",
        sol.iterations, sol.final_residual
    );
    let settings = SolveSettings {
        regularizer: reg.to_string(),
        lambda: args.lambda,
        solver: solver_name.to_string(),
        tol: args.tol,
        max_iter,
        mdp_sha256: loaded.sha256,
    };
    io::write_json(&args.out, &SolutionFile::new(settings, delta, sol, provenance()))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SweepMeta<'a> {
    format: &'static str,
    regularizer: String,
    solver: &'static str,
    tol: f64,
    max_iter: usize,
    epsilon: f64,
    mdp_sha256: &'a str,
    lambdas: &'a [f64],
    probe_states: &'a [usize],
    /// Extra probe tables, one per probe state after the first.
    probe_files: Vec<String>,
    records: &'a [SweepRecord],
    provenance: RunProvenance,
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    out.with_file_name(name)
}

fn sweep(args: SweepArgs) -> Result<ExitCode> {
    let loaded = load(&args.mdp)?;
    let mdp = &loaded.mdp;
    let reg = parse_reg(&args.reg)?;
    let lambdas = grid::parse(&args.lambdas)?;
    analysis::check_grid(&lambdas)?;
    let probes = if args.probes.is_empty() {
        analysis::default_probes(loaded.provenance.grid_n.filter(|_| loaded.provenance.generator == "gridworld"))
    } else {
        args.probes.clone()
    };
    if let Some(s) = probes.iter().find(|&&s| s >= mdp.n_states()) {
        bail!("probe state {s} out of range for {} states", mdp.n_states());
    }
    let choice = SolverChoice::from(args.method);
    let mut opts = SweepOptions::new(choice, args.tol, probes.clone());
    if let Some(m) = args.max_iter {
        opts.max_iter = m;
    }
    let v_star = analysis::sweep_reference(mdp, args.tol).context("plain value iteration failed")?;
    let records: Vec<SweepRecord> = lambdas
        .par_iter()
        .map(|&l| analysis::sweep_point(mdp, &reg, l, &v_star, &opts))
        .collect();

    let n_a = mdp.n_actions();
    io::write_atomic(&args.out, &io::sweep_csv(&args.out, &records, 0, n_a)?)?;
    let mut probe_files = Vec::new();
    for (k, s) in probes.iter().enumerate().skip(1) {
        let path = sidecar(&args.out, &format!(".probe{s}.csv"));
        io::write_atomic(&path, &io::probe_csv(&path, &records, k, n_a)?)?;
        probe_files.push(path.display().to_string());
    }
    let meta = SweepMeta {
        format: "regmdp-sweep-meta/1",
        regularizer: reg.to_string(),
        solver: choice.name(),
        tol: args.tol,
        max_iter: opts.max_iter,
        epsilon: opts.epsilon,
        mdp_sha256: &loaded.sha256,
        lambdas: &lambdas,
        probe_states: &probes,
        probe_files,
        records: &records,
        provenance: provenance(),
    };
    io::write_json(&sidecar(&args.out, ".meta.json"), &meta)?;

    let failed = records.iter().filter(|r| r.status != analysis::SweepStatus::Ok).count();
    println!("wrote {} ({} rows, {failed} failed)", args.out.display(), records.len());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct AuditRow {
    regularizer: String,
    lambda: f64,
    #[serde(flatten)]
    report: PropertyReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Serialize)]
struct AuditReport<'a> {
    format: &'static str,
    mdp_sha256: &'a str,
    gamma: f64,
    operator_gamma: f64,
    pass: bool,
    results: Vec<AuditRow>,
    provenance: RunProvenance,
}

fn audit_one(
    mdp: &TabularMdp,
    operator: &TabularMdp,
    reg: &Regularizer,
    lambda: f64,
    args: &AuditArgs,
    perturbed: bool,
) -> Vec<AuditRow> {
    let name = reg.to_string();
    let gamma = mdp.gamma();
    let (trials, seed) = (args.trials, args.seed);
    let batteries: [(&str, Box<dyn Fn() -> analysis::Result<PropertyReport>>); 4] = [
        ("sandwich", Box::new(|| analysis::sandwich_battery(operator, reg, lambda, trials, seed))),
        ("contraction", Box::new(|| analysis::contraction_battery(operator, reg, lambda, gamma, trials, seed))),
        ("monotonicity", Box::new(|| analysis::monotonicity_battery(operator, reg, lambda, trials, seed))),
        ("translation", Box::new(|| analysis::translation_battery(operator, reg, lambda, gamma, trials, seed))),
    ];
    let failed = |property: &str, message: String| {
        let report = PropertyReport {
            property: property.to_string(),
            trials: 0,
            worst_slack: f64::NAN,
            tolerance: f64::NAN,
            pass: false,
        };
        (report, Some(message))
    };
    let mut rows: Vec<(PropertyReport, Option<String>)> = batteries
        .iter()
        .map(|(property, run)| match run() {
            Ok(r) => (r, None),
            Err(e) => failed(property, e.to_string()),
        })
        .collect();
    if perturbed || args.skip_performance {
        let why = if perturbed { "skipped: operator discount perturbed" } else { "skipped" };
        rows.push((
            PropertyReport {
                property: "performance_error".to_string(),
                trials: 0,
                worst_slack: f64::NAN,
                tolerance: 10.0 * args.tol,
                pass: true,
            },
            Some(why.to_string()),
        ));
    } else {
        rows.push(match analysis::performance_report(mdp, reg, lambda, args.tol) {
            Ok((r, p)) => (r, Some(format!("err {:e}, bound {:e}, min difference {:e}", p.err, p.bound, p.min_diff))),
            Err(e) => failed("performance_error", e.to_string()),
        });
    }
    rows.into_iter()
        .map(|(report, note)| AuditRow {
            regularizer: name.clone(),
            lambda,
            report,
            note,
        })
        .collect()
}

fn audit(args: AuditArgs) -> Result<ExitCode> {
    let loaded = load(&args.mdp)?;
    let mdp = &loaded.mdp;
    let regs: Vec<Regularizer> = if args.regs.is_empty() {
        Regularizer::presets().into_iter().map(|(_, r)| r).collect()
    } else {
        args.regs.iter().map(|s| parse_reg(s)).collect::<Result<_>>()?
    };
    let lambdas = grid::parse(&args.lambdas)?;
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        bail!("audit lambdas must be finite and non-negative");
    }
    let operator = match args.perturb_gamma {
        Some(g) => mdp.with_unchecked_discount(g),
        None => mdp.clone(),
    };
    let perturbed = args.perturb_gamma.is_some();
    let jobs: Vec<(&Regularizer, f64)> = regs.iter().flat_map(|r| lambdas.iter().map(move |&l| (r, l))).collect();
    let results: Vec<AuditRow> = jobs
        .par_iter()
        .flat_map_iter(|&(reg, l)| audit_one(mdp, &operator, reg, l, &args, perturbed))
        .collect();

    let pass = results.iter().all(|r| r.report.pass);
    for r in &results {
        println!(
            "{:<5} {:<40} lambda={:<8} {:<17} trials={:<4} worst_slack={:<12.3e} tol={:.0e}{}",
            if r.report.pass { "PASS" } else { "FAIL" },
            r.regularizer,
            r.lambda,
            r.report.property,
            r.report.trials,
            r.report.worst_slack,
            r.report.tolerance,
            r.note.as_deref().map(|n| format!("  ({n})")).unwrap_or_default()
        );
    }
    let report = AuditReport {
        format: "regmdp-audit/1",
        mdp_sha256: &loaded.sha256,
        gamma: mdp.gamma(),
        operator_gamma: operator.gamma(),
        pass,
        results,
        provenance: provenance(),
    };
    io::write_json(&args.out, &report)?;
    println!("{}", if pass { "audit passed" } else { "audit FAILED" });
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    init_threads()?;
    match cli.command {
        Command::GenMdp(a) => gen_mdp(a),
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Audit(a) => audit(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! `tradepost`: batch front end for the trading post library.
//!
//! Reads JSON instances and bid matrices, runs one command and writes a JSON
//! report to stdout or `--output`. Exit codes: 0 success, 2 bad input,
//! 3 solver failure, 4 failed verification under `--assert`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use tradepost::equilibrium::{
    best_response_dynamics, construct_atp_rho_equilibrium_with, pce_to_tp_with, verify_pce_with,
    verify_tp_ne_swept, verify_tp_ne_with,
};
use tradepost::maxmin::{
    check_strategyproof_m1, demo_all_goods_m2, demo_bad_ne_m1, demo_m2_truthful_ne,
    demo_not_strategyproof_ces, GoodSet,
};
use tradepost::solver::solve_ces_with;
use tradepost::{
    atp_allocate, ces_welfare, solve_maxmin, tp_to_pce, Allocation, BidMatrix, CurveFamily, Instance,
    PowerCurve, Rho, Tolerances,
};

const DEFAULT_SEED: u64 = 0x7470_6f73_7431;

#[derive(Parser)]
#[command(name = "tradepost", version, about = "Bandwidth allocation with the augmented trading post")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every randomized step.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Relative tolerance for equilibrium equalities.
    #[arg(long)]
    tol_eq: Option<f64>,
    /// KKT residual target for the solver.
    #[arg(long)]
    tol_kkt: Option<f64>,
    /// Write the report here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Maximize CES welfare.
    Solve {
        /// `-inf`/`maxmin`, a real below 1, or `1`.
        #[arg(long, allow_hyphen_values = true)]
        rho: String,
        instance: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Construct a welfare-optimal Nash equilibrium of ATP(rho).
    Equilibrium {
        #[arg(long, allow_hyphen_values = true)]
        rho: String,
        instance: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Check a bid profile (or, with --pce, an allocation under price curves).
    Verify {
        /// `atp_rho:<r>`, `linear`, or `@file.json`.
        #[arg(long, allow_hyphen_values = true, default_value = "linear")]
        curves: String,
        /// Treat the first file as an allocation and the curves as price curves.
        #[arg(long)]
        pce: bool,
        /// Also search for profitable deviations.
        #[arg(long)]
        sweep: bool,
        /// Exit with status 4 when the check fails.
        #[arg(long = "assert")]
        assert_ok: bool,
        /// Bid matrix, or allocation with --pce.
        profile: PathBuf,
        instance: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Convert between trading post equilibria and price curve equilibria.
    Reduce {
        #[arg(long, value_enum)]
        direction: Direction,
        /// Constraint curves (tp2pc) or price curves (pc2tp).
        #[arg(long, allow_hyphen_values = true, default_value = "linear")]
        curves: String,
        /// Degree of the curve used for unpriced goods in pc2tp; defaults to
        /// `1 - rho` with --rho, else 1.
        #[arg(long)]
        free_degree: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        rho: Option<String>,
        /// Bid matrix (tp2pc) or allocation (pc2tp).
        profile: PathBuf,
        instance: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Round-robin best-response dynamics from a random feasible profile.
    Dynamics {
        #[arg(long, allow_hyphen_values = true)]
        rho: String,
        #[arg(long, default_value_t = 200)]
        max_rounds: usize,
        /// Minimum gain for an agent to switch.
        #[arg(long, default_value_t = 1e-10)]
        gain_tol: f64,
        instance: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Mechanism demonstrations.
    Demos {
        #[arg(value_enum)]
        demo: Demo,
        /// For not-strategyproof.
        #[arg(long, allow_hyphen_values = true, default_value = "-1")]
        rho: String,
        /// Number of agents for bad-ne-m1 and all-goods-m2.
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Instance for m2-truthful-ne and strategyproof-m1.
        instance: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Tp2pc,
    Pc2tp,
}

#[derive(Clone, Copy, ValueEnum)]
enum Demo {
    NotStrategyproof,
    BadNeM1,
    M2TruthfulNe,
    AllGoodsM2,
    StrategyproofM1,
}

/// Error with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn parse(error: anyhow::Error) -> Self {
        Self { code: 2, error }
    }
    fn solver(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 3, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self::parse(error)
    }
}

type CmdResult = Result<(Value, bool), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (common, result) = match &cli.command {
        Command::Solve { rho, instance, common } => (common, cmd_solve(rho, instance, common)),
        Command::Equilibrium { rho, instance, common } => (common, cmd_equilibrium(rho, instance, common)),
        Command::Verify { curves, pce, sweep, assert_ok, profile, instance, common } => (
            common,
            cmd_verify(curves, *pce, *sweep, profile, instance, common).map(|(v, ok)| (v, ok || !assert_ok)),
        ),
        Command::Reduce { direction, curves, free_degree, rho, profile, instance, common } => (
            common,
            cmd_reduce(*direction, curves, *free_degree, rho.as_deref(), profile, instance, common),
        ),
        Command::Dynamics { rho, max_rounds, gain_tol, instance, common } => {
            (common, cmd_dynamics(rho, *max_rounds, *gain_tol, instance, common))
        }
        Command::Demos { demo, rho, n, instance, common } => {
            (common, cmd_demos(*demo, rho, *n, instance.as_deref(), common))
        }
    };
    let (report, ok) = result?;
    let ok = ok || !matches!(cli.command, Command::Verify { .. });
    write_report(&report, common.output.as_deref())?;
    if ok {
        Ok(())
    } else {
        Err(Failure {
            code: 4,
            error: anyhow!("verification failed"),
        })
    }
}

fn write_report(report: &Value, path: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Failure::parse(e.into()))? + "\n";
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn tolerances(common: &Common) -> anyhow::Result<Tolerances> {
    let mut tol = Tolerances::default();
    for (name, value, slot) in [("--tol-eq", common.tol_eq, &mut tol.eq), ("--tol-kkt", common.tol_kkt, &mut tol.kkt)] {
        if let Some(v) = value {
            if !(v.is_finite() && v >= 1e-12) {
                bail!("{name} must be at least 1e-12, got {v}");
            }
            *slot = v;
        }
    }
    Ok(tol)
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {what} file {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} file {}", path.display()))
}

fn parse_rho(s: &str) -> anyhow::Result<Rho> {
    s.parse::<Rho>().map_err(|e| anyhow!(e))
}

fn parse_finite_rho(s: &str) -> anyhow::Result<f64> {
    match parse_rho(s)? {
        Rho::Finite(r) => Ok(r),
        other => bail!("this command needs a finite rho < 1, got {other}"),
    }
}

fn parse_curves(spec: &str, m: usize) -> anyhow::Result<CurveFamily> {
    if let Some(path) = spec.strip_prefix('@') {
        let f: CurveFamily = read_json(Path::new(path), "curve")?;
        if f.len() != m {
            bail!("curve file has {} curves, instance has {m} goods", f.len());
        }
        return Ok(f);
    }
    if spec == "linear" {
        return Ok(CurveFamily::linear(m));
    }
    if let Some(r) = spec.strip_prefix("atp_rho:") {
        return Ok(CurveFamily::atp_rho(m, parse_finite_rho(r)?));
    }
    bail!("unknown curve spec {spec:?}: expected atp_rho:<r>, linear or @file.json")
}

fn base_report(command: &str, tol: &Tolerances, seed: u64) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command));
    m.insert("tolerances".into(), json!(tol));
    m.insert("seed".into(), json!(seed));
    m
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn cmd_solve(rho: &str, instance: &Path, common: &Common) -> CmdResult {
    let tol = tolerances(common)?;
    let rho = parse_rho(rho)?;
    let inst: Instance = read_json(instance, "instance")?;
    let sol = match rho {
        Rho::NegInfinity => solve_maxmin(&inst),
        r => solve_ces_with(&inst, r, &tol).map_err(Failure::solver)?,
    };
    let mut r = base_report("solve", &tol, common.seed);
    r.insert("rho".into(), to_value(&rho));
    r.insert("utilities".into(), to_value(&sol.u_star));
    r.insert("allocation".into(), to_value(&sol.x_star));
    r.insert("q".into(), to_value(&sol.q));
    r.insert("objective".into(), json!(sol.objective));
    r.insert("kkt_residual".into(), json!(sol.kkt_residual));
    r.insert("iterations".into(), json!(sol.iterations));
    if rho == Rho::NegInfinity {
        r.insert("gamma".into(), json!(sol.objective));
    }
    Ok((Value::Object(r), true))
}

fn cmd_equilibrium(rho: &str, instance: &Path, common: &Common) -> CmdResult {
    let tol = tolerances(common)?;
    let r_val = parse_finite_rho(rho)?;
    let inst: Instance = read_json(instance, "instance")?;
    let (bids, x) = construct_atp_rho_equilibrium_with(&inst, r_val, &tol).map_err(Failure::solver)?;
    let f = CurveFamily::atp_rho(inst.m(), r_val);
    let report = verify_tp_ne_swept(&inst, &f, &bids, &tol, common.seed).map_err(Failure::solver)?;
    let optimum = solve_ces_with(&inst, Rho::Finite(r_val), &tol).map_err(Failure::solver)?.objective;
    let u = x.utilities(&inst);
    let welfare = ces_welfare(Rho::Finite(r_val), &u);
    let mut r = base_report("equilibrium", &tol, common.seed);
    r.insert("rho".into(), json!(r_val));
    r.insert("bids".into(), to_value(&bids));
    r.insert("allocation".into(), to_value(&x));
    r.insert("utilities".into(), to_value(&u));
    r.insert("ne".into(), to_value(&report));
    r.insert("welfare".into(), json!(welfare));
    r.insert("optimum".into(), json!(optimum));
    r.insert("relative_gap".into(), json!((welfare - optimum).abs() / optimum.abs().max(f64::MIN_POSITIVE)));
    Ok((Value::Object(r), report.is_ne))
}

fn cmd_verify(curves: &str, pce: bool, sweep: bool, profile: &Path, instance: &Path, common: &Common) -> CmdResult {
    let tol = tolerances(common)?;
    let inst: Instance = read_json(instance, "instance")?;
    let fam = parse_curves(curves, inst.m())?;
    let mut r = base_report("verify", &tol, common.seed);
    if pce {
        let x: Allocation = read_json(profile, "allocation")?;
        let rep = verify_pce_with(&inst, &fam, &x, &tol);
        let ok = rep.is_pce;
        r.insert("pce".into(), to_value(&rep));
        r.insert("is_pce".into(), json!(ok));
        return Ok((Value::Object(r), ok));
    }
    let bids: BidMatrix = read_json(profile, "bid")?;
    let rep = if sweep {
        verify_tp_ne_swept(&inst, &fam, &bids, &tol, common.seed).map_err(Failure::solver)?
    } else {
        verify_tp_ne_with(&inst, &fam, &bids, &tol)
    };
    if let Ok(x) = atp_allocate(&inst, &fam, &bids) {
        r.insert("allocation".into(), to_value(&x));
        r.insert("utilities".into(), to_value(&x.utilities(&inst)));
    }
    let ok = rep.is_ne;
    r.insert("is_ne".into(), json!(ok));
    r.insert("ne".into(), to_value(&rep));
    Ok((Value::Object(r), ok))
}

fn cmd_reduce(
    direction: Direction,
    curves: &str,
    free_degree: Option<f64>,
    rho: Option<&str>,
    profile: &Path,
    instance: &Path,
    common: &Common,
) -> CmdResult {
    let tol = tolerances(common)?;
    let inst: Instance = read_json(instance, "instance")?;
    let fam = parse_curves(curves, inst.m())?;
    let mut r = base_report("reduce", &tol, common.seed);
    match direction {
        Direction::Tp2pc => {
            let bids: BidMatrix = read_json(profile, "bid")?;
            let (x, g) = tp_to_pce(&inst, &fam, &bids).map_err(|e| Failure { code: 4, error: e.into() })?;
            r.insert("direction".into(), json!("tp2pc"));
            r.insert("allocation".into(), to_value(&x));
            r.insert("price_curves".into(), to_value(&g));
        }
        Direction::Pc2tp => {
            let x: Allocation = read_json(profile, "allocation")?;
            let degree = match (free_degree, rho) {
                (Some(d), _) => d,
                (None, Some(s)) => 1.0 - parse_finite_rho(s)?,
                (None, None) => 1.0,
            };
            let h = PowerCurve::new(1.0, degree);
            let (f, bids) = pce_to_tp_with(&inst, &fam, &x, h, &tol).map_err(|e| Failure { code: 4, error: e.into() })?;
            r.insert("direction".into(), json!("pc2tp"));
            r.insert("constraint_curves".into(), to_value(&f));
            r.insert("bids".into(), to_value(&bids));
        }
    }
    Ok((Value::Object(r), true))
}

fn cmd_dynamics(rho: &str, max_rounds: usize, gain_tol: f64, instance: &Path, common: &Common) -> CmdResult {
    let tol = tolerances(common)?;
    let r_val = parse_finite_rho(rho)?;
    let inst: Instance = read_json(instance, "instance")?;
    let f = CurveFamily::atp_rho(inst.m(), r_val);
    let trace = best_response_dynamics(&inst, &f, Rho::Finite(r_val), common.seed, max_rounds, gain_tol);
    let verdict = verify_tp_ne_with(&inst, &f, &trace.bids, &tol);
    let optimum = solve_ces_with(&inst, Rho::Finite(r_val), &tol).map_err(Failure::solver)?.objective;
    let mut r = base_report("dynamics", &tol, common.seed);
    r.insert("rho".into(), json!(r_val));
    r.insert("trace".into(), to_value(&trace));
    r.insert("ne".into(), to_value(&verdict));
    r.insert("optimum".into(), json!(optimum));
    Ok((Value::Object(r), true))
}

fn cmd_demos(demo: Demo, rho: &str, n: usize, instance: Option<&Path>, common: &Common) -> CmdResult {
    let tol = tolerances(common)?;
    let mut r = base_report("demos", &tol, common.seed);
    let need_instance = || -> anyhow::Result<Instance> {
        let p = instance.ok_or_else(|| anyhow!("this demo needs an instance file"))?;
        read_json(p, "instance")
    };
    let (name, body, ok) = match demo {
        Demo::NotStrategyproof => {
            let rep = demo_not_strategyproof_ces(parse_rho(rho)?).map_err(Failure::solver)?;
            let ok = rep.lie_pays;
            ("not-strategyproof", to_value(&rep), ok)
        }
        Demo::BadNeM1 => {
            if n < 2 {
                return Err(Failure::parse(anyhow!("--n must be at least 2")));
            }
            let rep = demo_bad_ne_m1(n);
            let ok = rep.all_goods_is_ne;
            ("bad-ne-m1", to_value(&rep), ok)
        }
        Demo::M2TruthfulNe => {
            let rep = demo_m2_truthful_ne(&need_instance()?, common.seed);
            let ok = rep.is_ne;
            ("m2-truthful-ne", to_value(&rep), ok)
        }
        Demo::AllGoodsM2 => {
            if n < 2 {
                return Err(Failure::parse(anyhow!("--n must be at least 2")));
            }
            let rep = demo_all_goods_m2(n, common.seed);
            ("all-goods-m2", to_value(&rep), !rep.is_ne)
        }
        Demo::StrategyproofM1 => {
            let inst = need_instance()?;
            if inst.m() > 20 {
                return Err(Failure::parse(anyhow!("exhaustive report search supports at most 20 goods")));
            }
            let sets: Vec<GoodSet> = inst.desired_sets().iter().map(|s| s.iter().copied().collect()).collect();
            let deviations: Vec<_> = (0..inst.n())
                .filter_map(|i| check_strategyproof_m1(inst.supplies(), &sets, i))
                .collect();
            let ok = deviations.is_empty();
            ("strategyproof-m1", json!({ "deviations": deviations, "strategyproof": ok }), ok)
        }
    };
    r.insert("demo".into(), json!(name));
    r.insert("result".into(), body);
    Ok((Value::Object(r), ok))
}

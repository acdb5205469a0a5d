use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rgov_core::bounding::BoundingMethod;
use rgov_core::checks::{self, VerifyBudget, VerifyReport};
use rgov_core::scenario::{Precomputed, Scenario, System};
use rgov_core::sim::{self, SimTrace, TraceSummary};
use rgov_core::RgError;
use serde::Serialize;
use sha2::{Digest, Sha256};

const AUDIT_SAMPLES: usize = 2000;

#[derive(Parser, Debug)]
#[command(name = "rgov", version, about = "Observer-based robust reference governor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build bounding and admissible sequences and store them in the cache.
    Precompute(Common),
    /// Run the closed loop and write trace.csv and summary.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Disturbance seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Apply the reference directly.
        #[arg(long)]
        no_rg: bool,
    },
    /// Run the property checks and print a pass/fail report.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    #[arg(long, value_parser = parse_method)]
    method: Option<BoundingMethod>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value = ".rgov-cache")]
    cache: PathBuf,
}

fn parse_method(s: &str) -> std::result::Result<BoundingMethod, String> {
    s.parse().map_err(|e: RgError| e.to_string())
}

/// Failure carrying its exit status.
#[derive(Debug)]
struct Exit {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Exit {
    fn from(error: anyhow::Error) -> Self {
        let code = error
            .chain()
            .find_map(|c| c.downcast_ref::<RgError>())
            .map_or(1, exit_code);
        Exit { code, error }
    }
}

fn exit_code(e: &RgError) -> u8 {
    match e {
        RgError::EmptySet { .. } | RgError::GovernorInfeasible { .. } | RgError::DeterminationLimit { .. } => 2,
        RgError::AuditFailure { .. } | RgError::TerminalVerification { .. } => 3,
        _ => 1,
    }
}

struct Loaded {
    scenario: Scenario,
    document: String,
    system: System,
    method: BoundingMethod,
}

fn load(common: &Common) -> Result<Loaded> {
    let path = Path::new(&common.scenario);
    let document = if path.exists() {
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
    } else if let Some((_, doc)) = rgov_core::scenario::bundled().into_iter().find(|(n, _)| *n == common.scenario) {
        doc.to_string()
    } else {
        anyhow::bail!("no scenario file or bundled scenario named {}", common.scenario);
    };
    let scenario = Scenario::from_toml_str(&document)?;
    let system = scenario.build_system()?;
    let method = common.method.unwrap_or(scenario.bounding.method);
    Ok(Loaded {
        scenario,
        document,
        system,
        method,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content key of everything the precomputed sets depend on.
fn cache_key(sc: &Scenario, method: BoundingMethod) -> Result<String> {
    let key = serde_json::json!({
        "plant": sc.plant,
        "gains": sc.gains,
        "observer": sc.observer,
        "constraints": sc.constraints,
        "bounding": sc.bounding,
        "tightening": sc.tightening,
        "method": method,
    });
    Ok(sha256_hex(serde_json::to_string(&key)?.as_bytes()))
}

fn cache_path(common: &Common, l: &Loaded) -> Result<PathBuf> {
    Ok(common.cache.join(format!("{}.json", cache_key(&l.scenario, l.method)?)))
}

/// Reads the cache entry, or builds and stores it.
fn precomputed(common: &Common, l: &Loaded) -> Result<(Precomputed, bool)> {
    let path = cache_path(common, l)?;
    if path.exists() {
        let text = fs::read_to_string(&path)?;
        match serde_json::from_str(&text) {
            Ok(pre) => return Ok((pre, true)),
            Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", path.display()),
        }
    }
    log::info!("precomputing {} ({:?})", l.scenario.name, l.method);
    let pre = l.scenario.precompute(&l.system, l.method, AUDIT_SAMPLES)?;
    fs::create_dir_all(&common.cache)?;
    fs::write(&path, serde_json::to_string(&pre)?)?;
    Ok((pre, false))
}

#[derive(Serialize)]
struct PrecomputeSummary {
    scenario: String,
    method: BoundingMethod,
    cache_key: String,
    cache_hit: bool,
    n_bar: usize,
    steady_state_adjusted: bool,
    /// `(n, k*(n), rows)` per stored admissible set.
    admissible: Vec<(usize, usize, usize)>,
    /// `ξ_k` for the ellipsoidal method, largest support level otherwise.
    bounding_extremes: Vec<f64>,
}

fn bounding_extremes(pre: &Precomputed) -> Vec<f64> {
    let b = &pre.bounding;
    match &b.ellipsoidal {
        Some(e) => (0..=b.n_bar).map(|k| e.xi(k)).collect(),
        None => (0..=b.n_bar)
            .map(|k| match b.omega(k) {
                rgov_core::sets::ConvexSet::Polytope(p) => p.offsets().max(),
                _ => f64::NAN,
            })
            .collect(),
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn cmd_precompute(common: &Common) -> Result<()> {
    let l = load(common)?;
    let (pre, hit) = precomputed(common, &l)?;
    let summary = PrecomputeSummary {
        scenario: l.scenario.name.clone(),
        method: l.method,
        cache_key: cache_key(&l.scenario, l.method)?,
        cache_hit: hit,
        n_bar: pre.bounding.n_bar,
        steady_state_adjusted: pre.admissible.steady_state.adjusted,
        admissible: pre.admissible.sets.iter().map(|s| (s.n, s.k_star, s.polytope.len())).collect(),
        bounding_extremes: bounding_extremes(&pre),
    };
    write_json(&common.out, "precompute.json", &summary)?;
    let k: Vec<usize> = summary.admissible.iter().map(|a| a.1).collect();
    println!(
        "{} ({:?}): n_bar = {}, k* in [{}, {}], cache {}",
        summary.scenario,
        l.method,
        summary.n_bar,
        k.iter().min().unwrap_or(&0),
        k.iter().max().unwrap_or(&0),
        if hit { "hit" } else { "written" }
    );
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary {
    scenario: String,
    scenario_sha256: String,
    method: Option<BoundingMethod>,
    governed: bool,
    steps: usize,
    seed: u64,
    #[serde(flatten)]
    summary: TraceSummary,
}

fn cmd_simulate(common: &Common, seed: Option<u64>, steps: Option<usize>, no_rg: bool) -> Result<bool> {
    let l = load(common)?;
    let steps = steps.unwrap_or(l.scenario.simulation.steps);
    let mut profile = l.scenario.disturbance.clone();
    if let Some(s) = seed {
        profile.seed = s;
    }
    let mut trace: SimTrace = if no_rg {
        sim::run_baseline_no_rg(&l.scenario, &l.system, &profile, steps)?
    } else {
        let (pre, _) = precomputed(common, &l)?;
        let mut t = sim::run_closed_loop(&l.scenario, &l.system, &pre.admissible, &profile, steps)?;
        t.method = Some(format!("{:?}", l.method).to_lowercase());
        t
    };
    let hash = sha256_hex(l.document.as_bytes());
    trace.scenario_hash = Some(hash.clone());
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("trace.csv"), trace.to_csv())?;
    let summary = SimulateSummary {
        scenario: l.scenario.name.clone(),
        scenario_sha256: hash,
        method: (!no_rg).then_some(l.method),
        governed: !no_rg,
        steps,
        seed: profile.seed,
        summary: TraceSummary::of(&trace),
    };
    write_json(&common.out, "summary.json", &summary)?;
    println!(
        "{}: {} steps, {} violations, worst margin {:.6}",
        summary.scenario,
        steps,
        summary.summary.violations,
        summary.summary.worst_margin.unwrap_or(f64::INFINITY)
    );
    Ok(no_rg || summary.summary.violations == 0)
}

fn cmd_verify(common: &Common, seed: Option<u64>) -> Result<bool> {
    let l = load(common)?;
    let (pre, _) = precomputed(common, &l)?;
    let budget = VerifyBudget {
        seed: seed.unwrap_or(0),
        ..VerifyBudget::default()
    };
    let cons = &l.scenario.constraints;
    let report: VerifyReport = checks::verify(
        &l.system.observer,
        &l.system.prediction,
        &pre.bounding,
        &pre.admissible,
        &cons.e0,
        &cons.w_tilde,
        budget,
    )?;
    write_json(&common.out, "verify.json", &report)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(report.passed())
}

fn run(cli: Cli) -> std::result::Result<(), Exit> {
    let ok = match &cli.command {
        Command::Precompute(common) => cmd_precompute(common).map(|_| true),
        Command::Simulate {
            common,
            seed,
            steps,
            no_rg,
        } => cmd_simulate(common, *seed, *steps, *no_rg),
        Command::Verify { common, seed } => cmd_verify(common, *seed),
    }?;
    if ok {
        Ok(())
    } else {
        Err(Exit {
            code: 3,
            error: anyhow::anyhow!("property check failed"),
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit { code, error }) => {
            let kind = match code {
                2 => "infeasible",
                3 => "check failed",
                _ => "error",
            };
            eprintln!("rgov: {kind}: {error:#}");
            ExitCode::from(code)
        }
    }
}

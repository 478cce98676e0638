//! Command-line front end. `main.rs` only forwards to [`run_with`], so the
//! whole command surface can be exercised in-process.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use crate::acceptance::{self, CRITERIA};
use crate::config::ExperimentConfig;
use crate::experiments;
use crate::output::{prepare_dir, write_outcome};

/// Simulation and testing of genealogies of critical branching Markov
/// processes and their Brownian CRT scaling limit.
#[derive(Parser)]
#[command(name = "crittree", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "CRITTREE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overwrite an existing run directory.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    params: ExperimentConfig,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one genealogical tree and write its particle records.
    Simulate(RunArgs),
    /// Simulate one tree and write its depth-first height function and
    /// exploration martingale.
    Explore(RunArgs),
    /// Exploration martingale: mean φ(x) and quadratic variation ∫f(ζ).
    Martingale(RunArgs),
    /// Kolmogorov survival asymptotics, t·P(N_t > 0) → 2φ(x)/Σ.
    Kolmogorov(RunArgs),
    /// Yaglom limit: ⟨f, X_t⟩/t given survival is exponential with mean ½⟨f,φ̃⟩Σ.
    Yaglom(RunArgs),
    /// Moment asymptotics of ⟨f, X_t⟩ and of the occupation integral.
    Moments(RunArgs),
    /// Functional CLT for the exploration martingale, M_{n²}/n → N(0, σ²(f)).
    Fclt(RunArgs),
    /// Conditioned trees against the Brownian CRT: total mass and pair distances.
    CrtCompare(RunArgs),
    /// Height and martingale distance matrices, Dᴹ ≈ c·Dʰ with c = Σ/2φ(x).
    DistanceMatrices(RunArgs),
    /// Lower mass function of the rescaled conditioned tree.
    Lowermass(RunArgs),
    /// Fraction of η_R-bad particles along a grid of R.
    Etabad(RunArgs),
    /// Spine occupation against φφ̃ and the Q-process limit of P(A | N_t > 0).
    Qprocess(RunArgs),
    /// Many-to-one formula: branching mean against the spine Feynman-Kac estimator.
    ManyToOne(RunArgs),
    /// Heavy tail of the total length, √t·P(L ≥ t) → const.
    Tails(RunArgs),
    /// Run the acceptance suite A1 to A12.
    Acceptance(AcceptanceArgs),
}

#[derive(Args)]
struct AcceptanceArgs {
    /// Add the larger configurations of the slow tier.
    #[arg(long)]
    slow: bool,
    /// Comma-separated criteria to run (default all).
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<String>>,
    /// Print the manifest and exit.
    #[arg(long)]
    list: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "runs")]
    outdir: PathBuf,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    force: bool,
}

pub const USAGE: u8 = 2;

/// Parses `args` (program name first), runs the command writing its report
/// to `out` and returns the exit code: 0 pass, 1 threshold failure, 2 usage
/// or I/O error. Errors go to stderr.
pub fn run_with<I, T>(args: I, out: &mut (dyn Write + Send)) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { USAGE } else { 0 };
        }
    };
    let result = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(anyhow::Error::from)
            .and_then(|pool| pool.install(|| dispatch(cli.command, out))),
        None => dispatch(cli.command, out),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) if broken_pipe(&e) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            USAGE
        }
    }
}

fn dispatch(command: Command, out: &mut (dyn Write + Send)) -> anyhow::Result<bool> {
    match command {
        Command::Acceptance(a) => run_acceptance(a, out),
        other => {
            let (name, args) = split(other);
            run_experiment(name, args, out)
        }
    }
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe))
}

fn say(out: &mut (dyn Write + Send), text: &str) -> anyhow::Result<()> {
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn split(c: Command) -> (&'static str, RunArgs) {
    match c {
        Command::Simulate(a) => ("simulate", a),
        Command::Explore(a) => ("explore", a),
        Command::Martingale(a) => ("martingale", a),
        Command::Kolmogorov(a) => ("kolmogorov", a),
        Command::Yaglom(a) => ("yaglom", a),
        Command::Moments(a) => ("moments", a),
        Command::Fclt(a) => ("fclt", a),
        Command::CrtCompare(a) => ("crt-compare", a),
        Command::DistanceMatrices(a) => ("distance-matrices", a),
        Command::Lowermass(a) => ("lowermass", a),
        Command::Etabad(a) => ("etabad", a),
        Command::Qprocess(a) => ("qprocess", a),
        Command::ManyToOne(a) => ("many-to-one", a),
        Command::Tails(a) => ("tails", a),
        Command::Acceptance(_) => unreachable!(),
    }
}

fn run_experiment(name: &str, args: RunArgs, out: &mut (dyn Write + Send)) -> anyhow::Result<bool> {
    let base = match &args.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    let cfg = base.overlay(&args.params);
    cfg.seed()?;
    let outdir = cfg.outdir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let dir = prepare_dir(&outdir, name, &cfg.label()?, args.force)?;
    let outcome = experiments::run(name, &cfg)?;
    write_outcome(&dir, &cfg, &outcome)?;
    say(out, &outcome.text())?;
    say(out, &format!("wrote {}\n", dir.display()))?;
    Ok(outcome.passed())
}

fn run_acceptance(a: AcceptanceArgs, out: &mut (dyn Write + Send)) -> anyhow::Result<bool> {
    if a.list {
        say(out, &(serde_json::to_string_pretty(CRITERIA)? + "\n"))?;
        return Ok(true);
    }
    let ids: Vec<String> = match &a.only {
        Some(v) => v.clone(),
        None => CRITERIA.iter().map(|c| c.id.to_string()).collect(),
    };
    let label = a.label.clone().unwrap_or_else(|| format!("seed-{}", a.seed));
    let dir = prepare_dir(&a.outdir, "acceptance", &label, a.force)?;
    let mut results = Vec::new();
    for id in &ids {
        let c = acceptance::criterion(id)?;
        let r = acceptance::run_criterion(c.id, a.seed, a.slow).with_context(|| format!("criterion {}", c.id))?;
        say(out, &(r.line() + "\n"))?;
        std::fs::write(dir.join(format!("{}.json", r.id)), serde_json::to_string_pretty(&r.to_json())? + "\n")?;
        results.push(r);
    }
    let text = acceptance::render(&results);
    std::fs::write(dir.join("summary.txt"), &text)?;
    say(out, &format!("{}\nwrote {}\n", text.lines().last().unwrap_or_default(), dir.display()))?;
    Ok(results.iter().all(|r| r.passed))
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;

    /// Runs the CLI with `--outdir <dir>/o` appended; returns (code, stdout).
    fn cli(dir: &Path, args: &[&str]) -> (u8, String) {
        let outdir = dir.join("o");
        let mut argv: Vec<String> = std::iter::once("crittree".to_string()).chain(args.iter().map(|a| a.to_string())).collect();
        argv.extend(["--outdir".to_string(), outdir.display().to_string()]);
        let mut out = Vec::new();
        let code = run_with(argv, &mut out);
        (code, String::from_utf8(out).unwrap())
    }

    fn json(path: &Path) -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
    }

    #[test]
    fn missing_seed_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(cli(dir.path(), &["kolmogorov"]).0, USAGE);
    }

    #[test]
    fn unknown_config_key_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("c.json");
        std::fs::write(&c, r#"{"seed": 1, "repz": 10}"#).unwrap();
        assert_eq!(cli(dir.path(), &["kolmogorov", "--config", c.to_str().unwrap()]).0, USAGE);
        assert_eq!(cli(dir.path(), &["simulate", "--seed", "1", "--model", "/no/such.json"]).0, USAGE);
        assert_eq!(cli(dir.path(), &["kolmogorov", "--seed", "1", "--bogus"]).0, USAGE);
    }

    #[test]
    fn refuses_to_overwrite_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let args = ["simulate", "--seed", "5", "--horizon", "10"];
        assert_eq!(cli(dir.path(), &args).0, 0);
        assert_eq!(cli(dir.path(), &args).0, USAGE);
        let mut forced = args.to_vec();
        forced.push("--force");
        assert_eq!(cli(dir.path(), &forced).0, 0);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("c.json");
        std::fs::write(&c, r#"{"seed": 2, "reps": 100, "t": [5.0]}"#).unwrap();
        let (code, _) = cli(dir.path(), &["kolmogorov", "--config", c.to_str().unwrap(), "--reps", "300"]);
        assert!(code <= 1);
        let report = json(&dir.path().join("o/kolmogorov/seed-2/report.json"));
        assert_eq!(report["config"]["reps"], 300);
        assert_eq!(report["config"]["seed"], 2);
        assert_eq!(report["config"]["t"][0], 5.0);
    }

    #[test]
    fn same_seed_gives_identical_reports_across_thread_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut outputs = Vec::new();
        for threads in ["1", "3"] {
            let args = ["--threads", threads, "etabad", "--seed", "11", "--reps", "40", "--n", "20", "--r", "5,10", "--force"];
            assert!(cli(dir.path(), &args).0 <= 1);
            let d = dir.path().join("o/etabad/seed-11");
            outputs.push((std::fs::read(d.join("report.json")).unwrap(), std::fs::read(d.join("etabad.csv")).unwrap()));
        }
        assert!(outputs[0] == outputs[1]);
    }

    #[test]
    fn first_moment_passes() {
        let dir = tempfile::tempdir().unwrap();
        let (code, text) = cli(dir.path(), &["moments", "--seed", "3", "--ell", "1", "--reps", "4000", "--t", "10"]);
        assert_eq!(code, 0, "{text}");
        let csv = std::fs::read_to_string(dir.path().join("o/moments/seed-3/reports.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn simulate_writes_one_record_per_particle() {
        let dir = tempfile::tempdir().unwrap();
        let (code, _) = cli(dir.path(), &["simulate", "--seed", "8", "--model", "two-type", "--horizon", "30"]);
        assert_eq!(code, 0);
        let d = dir.path().join("o/simulate/seed-8");
        let report = json(&d.join("report.json"));
        let tree = std::fs::read_to_string(d.join("tree.ndjson")).unwrap();
        let records: Vec<serde_json::Value> = tree.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(records.len() as u64, report["info"]["particles"].as_u64().unwrap());
        for r in &records {
            assert!(r["death_time"].as_f64().unwrap() >= r["birth_time"].as_f64().unwrap());
        }
    }

    #[test]
    fn acceptance_list_and_single_criterion() {
        let dir = tempfile::tempdir().unwrap();
        let (code, text) = cli(dir.path(), &["acceptance", "--list"]);
        assert_eq!(code, 0);
        let list: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(list.as_array().unwrap().len(), 12);

        let (code, text) = cli(dir.path(), &["acceptance", "--only", "A9", "--label", "x"]);
        assert_eq!(code, 0, "{text}");
        assert!(text.starts_with("A9   PASS"));
        assert_eq!(json(&dir.path().join("o/acceptance/x/A9.json"))["passed"], true);
    }
}

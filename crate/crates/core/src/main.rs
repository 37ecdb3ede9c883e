use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use oddflow::config::{parse_config, ConfigError, RunConfig};
use oddflow::littlewood_paley::TimeExponent;
use oddflow::{io, runs, Error};

/// Exit statuses, one per failure class.
mod exit {
    pub const OK: u8 = 0;
    pub const CONFIG_READ: u8 = 3;
    pub const CONFIG_SYNTAX: u8 = 4;
    pub const CONFIG_SCHEMA: u8 = 5;
    pub const CONFIG_INVALID: u8 = 6;
    pub const OUTPUT: u8 = 7;
    pub const NUMERICAL: u8 = 8;
    pub const SNAPSHOT: u8 = 9;
    pub const CHECK_FAILED: u8 = 10;
}

const EXIT_HELP: &str = "\
Exit status:
  0   success
  2   command-line usage error
  3   config file unreadable
  4   config is not valid JSON
  5   config key unknown or of the wrong type
  6   config value out of range
  7   output directory not writable or other I/O failure
  8   numerical failure (vacuum, CFL, elliptic non-convergence, non-finite values)
  9   malformed snapshot file
  10  a checked property did not hold

Environment:
  ODDFLOW_THREADS   caps the worker thread count
";

#[derive(Parser, Debug)]
#[command(name = "oddflow", version, about = "Odd-viscosity variable-density flow simulator and verification harness")]
struct Cli {
    /// JSON run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized initial modes, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one formulation; writes diag.csv and snap_<k>.oddf.
    Simulate,
    /// Original against reduced formulation; writes compare.csv.
    CompareFormulations,
    /// Picard construction and the matching regularized run; writes picard.csv.
    Picard,
    /// Regularization sweep against the unregularized run; writes eps.csv.
    EpsSweep,
    /// Twin runs and Gronwall envelope; writes stability.csv.
    TwinStability {
        /// Perturbation size; repeat for several, defaults to `stability.deltas`.
        #[arg(long)]
        delta: Vec<f64>,
    },
    /// Dyadic analysis of a snapshot directory; writes lp.csv.
    LpAnalyze {
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        s: f64,
        #[arg(long, default_value = "2")]
        q: TimeExponent,
    },
    /// Carried-velocity constraint residual under dt halving; writes elsasser.csv.
    ElsasserConvergence {
        /// Time steps; defaults to 4e-3, 2e-3, 1e-3, 5e-4.
        #[arg(long)]
        dt: Vec<f64>,
    },
    /// Property suite on small grids; writes verify.csv.
    Verify,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => exit::OUTPUT,
            Error::Snapshot(_) | Error::RaggedSeries(_) => exit::SNAPSHOT,
            Error::InvalidConfig(_) | Error::InvalidGrid(_) | Error::InvalidViscosity(_) => exit::CONFIG_INVALID,
            _ => exit::NUMERICAL,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match &e {
            ConfigError::Read { .. } => exit::CONFIG_READ,
            ConfigError::Syntax { .. } => exit::CONFIG_SYNTAX,
            ConfigError::Schema { .. } => exit::CONFIG_SCHEMA,
            ConfigError::Invalid(_) => exit::CONFIG_INVALID,
        };
        Failure { code, message: e.to_string() }
    }
}

fn check_failed(message: String) -> Failure {
    Failure { code: exit::CHECK_FAILED, message }
}

fn prepare_output(dir: &Path) -> Result<(), Failure> {
    let fail = |e: std::io::Error| Failure {
        code: exit::OUTPUT,
        message: format!("output directory {} is not writable: {e}", dir.display()),
    };
    std::fs::create_dir_all(dir).map_err(fail)?;
    let probe = dir.join(".oddflow-write-test");
    std::fs::write(&probe, b"").map_err(fail)?;
    std::fs::remove_file(&probe).map_err(fail)?;
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("ODDFLOW_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&t| t > 0).ok_or_else(|| Failure {
        code: exit::CONFIG_INVALID,
        message: format!("ODDFLOW_THREADS must be a positive integer, got {raw:?}"),
    })?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| Failure {
        code: exit::CONFIG_INVALID,
        message: format!("cannot size the thread pool: {e}"),
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    prepare_output(&out)?;
    let say = |line: String| {
        if !cli.quiet {
            println!("{line}");
        }
    };
    match cli.command {
        Command::Simulate => {
            let s = runs::simulate_from_config(&cfg, Some(&out))?;
            let (eu, ebu) = s.energy_drift();
            let (lo, hi, mean) = s.density_range();
            say(format!("{} rows, {} snapshots in {}", s.records.len(), s.snapshots, out.display()));
            say(format!("max relative drift E_u {eu:.3e}, E_U {ebu:.3e}"));
            say(format!("rho range [{lo:.12}, {hi:.12}], mean drift {mean:.3e}"));
        }
        Command::CompareFormulations => {
            let rows = runs::compare_formulations(&cfg.law()?, &cfg.initial_state()?, cfg.sim_config(), Some(&out))?;
            let last = rows.last().expect("at least the initial row");
            let worst_pi = rows.iter().map(|r| r.dgrad_pi_l2).fold(0.0, f64::max);
            say(format!("t = {}: ||u_orig - u_red|| = {:.3e}", last.t, last.du_l2));
            say(format!("max ||grad pi - grad(Pi + f omega)|| = {worst_pi:.3e}"));
        }
        Command::Picard => {
            let study = runs::picard_study(&cfg, Some(&out))?;
            let rep = &study.report;
            for h in &rep.history {
                say(format!("n = {:3}  d_n = {:.3e}  residual = {:.3e}", h.n, h.distance, h.residual));
            }
            say(format!("agreement with the regularized run: {:.3e}", study.agreement));
            if !rep.converged {
                return Err(check_failed(format!(
                    "Picard iteration {} after {} iterates",
                    if rep.diverged { "diverged" } else { "did not converge" },
                    rep.history.len()
                )));
            }
        }
        Command::EpsSweep => {
            let sw = &cfg.eps_sweep;
            let res = runs::eps_sweep(
                &cfg.law()?,
                &cfg.initial_state()?,
                &sw.epsilons,
                sw.dt,
                sw.t_end,
                cfg.sim_config(),
                Some(&out),
            )?;
            for (e, r) in res.epsilons.iter().zip(&res.errors) {
                say(format!("eps = {e:.1e}  error = {r:.4e}"));
            }
            say(format!("fitted slope {:.3}", res.slope));
        }
        Command::TwinStability { delta } => {
            let deltas = if delta.is_empty() { cfg.stability.deltas.clone() } else { delta };
            if deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return Err(Error::InvalidConfig("--delta must be positive".into()).into());
            }
            let study = runs::twin_stability(
                &cfg.law()?,
                &cfg.initial_state()?,
                cfg.sim_config(),
                &deltas,
                cfg.stability.max_constant,
                Some(&out),
            )?;
            match study.common_constant {
                Some(c) => say(format!("common constant C = {c:.4}")),
                None => say("no constant up to the search limit".to_string()),
            }
            for e in &study.response_errors {
                say(format!("linear response deviation {:.2}%", 100.0 * e));
            }
            if !study.pass {
                return Err(check_failed("Gronwall envelope not satisfied".into()));
            }
        }
        Command::LpAnalyze { snapshots, s, q } => {
            let rows = runs::lp_analyze(&snapshots, s, q, Some(&out))?;
            say(format!("{} rows written to {}", rows.len(), out.join(io::LP_SCHEMA.file).display()));
            for r in rows.iter().filter(|r| r.source == "trajectory") {
                say(format!("{} {} = {:.6e}", r.field, r.quantity, r.value));
            }
        }
        Command::ElsasserConvergence { dt } => {
            let dts = if dt.is_empty() { vec![4e-3, 2e-3, 1e-3, 5e-4] } else { dt };
            let res = runs::elsasser_convergence(
                &cfg.law()?,
                &cfg.initial_state()?,
                &dts,
                cfg.dynamics.t_end,
                cfg.sim_config(),
                Some(&out),
            )?;
            for (d, r) in res.dts.iter().zip(&res.residuals) {
                say(format!("dt = {d:.1e}  residual = {r:.4e}"));
            }
            say(format!("observed orders {:?}", res.orders));
        }
        Command::Verify => {
            let checks = runs::verify(cfg.seed, Some(&out))?;
            for c in &checks {
                say(format!("[{}] {} = {:.3e} (bound {:.1e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.bound));
            }
            let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(check_failed(format!("failed checks: {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let help = format!("{EXIT_HELP}\nOutput columns:\n{}", io::schema_text());
    let matches = Cli::command().after_long_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

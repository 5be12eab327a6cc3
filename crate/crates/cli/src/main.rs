//! `prulab`: runs flatness, verification, suite, distinguisher and class
//! table experiments and writes line-delimited JSON reports.
//!
//! Exit status is 0 when every non-skipped row passes, 1 when any row fails
//! and 2 on configuration errors.

mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use prulab::permcomb::{class_table, factorial};
use prulab::report::{CheckResult, Report};
use prulab::sampling::Backing;
use prulab::targets::{fourier_flat_family, nu_class};
use prulab::verify::{self, CheckOptions};
use prulab::{permcomb, Error};

use config::{parse_seed, Caps, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "prulab", version, about = "Numerical verification of the flat-to-Haar construction")]
struct Cli {
    /// TOML run configuration; flags win on conflict.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Report path (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write a CSV projection of the report rows.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Sizes {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    /// Seed, decimal or 0x-prefixed hex.
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Flattening of basis-state inputs by a random phase and the Hadamard layer.
    Flatness {
        #[command(flatten)]
        sizes: Sizes,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// One registered check.
    Verify {
        /// bintype, structural, bounds, combinatorics, closeness, trend, invariance, haar, mixture
        check: String,
        #[command(flatten)]
        sizes: Sizes,
        #[arg(long)]
        st: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        /// Comma-separated qubit counts for trend checks.
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
    },
    /// A named suite of checks; requires an explicit seed.
    Suite {
        /// default or quick
        name: String,
        #[arg(long, value_parser = parse_seed)]
        seed: Option<u64>,
        /// Record per-check wall time (makes reports run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Keyed versus table-random outcome histograms.
    Distinguish {
        #[command(flatten)]
        sizes: Sizes,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        resamples: Option<usize>,
        /// Backing compared against the Haar baseline: keyed or random.
        #[arg(long)]
        backing: Option<String>,
    },
    /// Congruence classes of S_st, with nu per class when --n is given.
    Classes {
        #[arg(long)]
        s: Option<usize>,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
    },
}

enum Failure {
    Config(String),
    Io(std::io::Error),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

fn config_error(e: Error) -> Failure {
    Failure::Config(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(e)) => {
            eprintln!("i/o error: {e}");
            ExitCode::from(2)
        }
    }
}

fn init_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("PRULAB_THREADS") {
        let threads: usize = v.parse().map_err(|_| Failure::Config(format!("PRULAB_THREADS=`{v}` is not a number")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    Ok(())
}

struct Merged {
    cfg: RunConfig,
    seed: Option<u64>,
}

impl Merged {
    fn new(cfg: RunConfig, flag_seed: Option<u64>) -> Result<Self, Failure> {
        let seed = match flag_seed {
            Some(s) => Some(s),
            None => cfg.seed().map_err(Failure::Config)?,
        };
        Ok(Self { cfg, seed })
    }

    fn seed_or(&self, default: u64) -> u64 {
        self.seed.unwrap_or(default)
    }
}

fn pick<T: Clone>(flag: Option<T>, cfg: &Option<T>, default: T) -> T {
    flag.or_else(|| cfg.clone()).unwrap_or(default)
}

fn timed(rows: Result<Vec<CheckResult>, Error>, label: &str, start: Instant) -> Vec<CheckResult> {
    let elapsed = start.elapsed().as_millis() as u64;
    let mut rows = rows.unwrap_or_else(|e| vec![CheckResult::errored(label, &e)]);
    for r in &mut rows {
        r.runtime_ms = Some(elapsed);
    }
    rows
}

/// Skipped row when the requested sizes exceed the configured caps.
fn cap_violation(caps: &Caps, check: &str, n: usize, st: usize) -> Option<CheckResult> {
    let local = 1u128.checked_shl(n as u32)?;
    let dense = local.checked_pow(st as u32).unwrap_or(u128::MAX);
    let tuples: u128 = (0..st as u128).map(|i| local.saturating_sub(i)).product();
    let perms: u128 = (1..=local.min(40)).product();
    let exceeded = match check {
        "closeness" | "trend" | "mixture" | "haar" if dense > caps.dense_dim as u128 => {
            Some(("dense_dim", dense, caps.dense_dim))
        }
        "structural" | "bounds" if tuples > caps.tuple_budget as u128 => {
            Some(("tuple_budget", tuples, caps.tuple_budget))
        }
        "structural" | "closeness" if perms > caps.pi_enumeration as u128 => {
            Some(("pi_enumeration", perms, caps.pi_enumeration))
        }
        _ => None,
    };
    exceeded.map(|(what, requested, cap)| {
        CheckResult::new(check)
            .param("n", n)
            .param("st", st)
            .details(json!({ "cap": what, "requested": requested.to_string(), "limit": cap }))
            .skip()
    })
}

fn run(cli: Cli) -> Result<bool, Failure> {
    init_threads()?;
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    let out = cli.out.clone().or_else(|| cfg.out.clone());
    let csv_path = cli.csv.clone().or_else(|| cfg.csv.clone());

    let report = match cli.command {
        Command::Flatness { sizes, c, trials } => {
            let m = Merged::new(cfg, sizes.seed)?;
            let n = pick(sizes.n, &m.cfg.n, 14);
            let s = pick(sizes.s, &m.cfg.s, 8);
            let c = pick(c, &m.cfg.c, 8.0);
            let trials = pick(trials, &m.cfg.trials, 100);
            if n > prulab::sampling::TABLE_CAP || s > 1 << n {
                return Err(Failure::Config(format!("need n <= {} and s <= 2^n", prulab::sampling::TABLE_CAP)));
            }
            let start = Instant::now();
            Report::new(timed(
                verify::verify_flatness(n, s, c, trials, m.seed_or(0)).map(|r| vec![r]),
                "flatness",
                start,
            ))
        }
        Command::Verify { check, sizes, st, samples, ns } => {
            if !verify::CHECKS.contains(&check.as_str()) {
                return Err(Failure::Config(format!("unknown check `{check}`; known: {}", verify::CHECKS.join(", "))));
            }
            let m = Merged::new(cfg, sizes.seed)?;
            let opts = CheckOptions {
                seed: m.seed_or(0),
                n: sizes.n.or(m.cfg.n),
                s: sizes.s.or(m.cfg.s),
                t: sizes.t.or(m.cfg.t),
                st: st.or(m.cfg.st),
                samples: samples.or(m.cfg.samples),
                ns,
            };
            let n = opts.n.unwrap_or(2);
            let slots = opts.st.unwrap_or(opts.s.unwrap_or(2) * opts.t.unwrap_or(1));
            if let Some(row) = cap_violation(&m.cfg.caps, &check, n, slots) {
                Report::new(vec![row])
            } else {
                let start = Instant::now();
                Report::new(timed(verify::run_check(&check, &opts), &check, start))
            }
        }
        Command::Suite { name, seed, timing } => {
            let m = Merged::new(cfg, seed)?;
            let seed = m.seed.ok_or_else(|| Failure::Config("suite requires --seed".into()))?;
            if !verify::SUITES.contains(&name.as_str()) {
                return Err(Failure::Config(format!("unknown suite `{name}`; known: {}", verify::SUITES.join(", "))));
            }
            verify::run_suite(&name, seed, timing).map_err(config_error)?
        }
        Command::Distinguish { sizes, shots, resamples, backing } => {
            let m = Merged::new(cfg, sizes.seed)?;
            let backing: Backing = pick(backing, &m.cfg.backing, "keyed".to_string()).parse().map_err(config_error)?;
            let n = pick(sizes.n, &m.cfg.n, 10);
            let s = pick(sizes.s, &m.cfg.s, 2);
            let t = pick(sizes.t, &m.cfg.t, 1);
            let shots = pick(shots, &m.cfg.shots, 100_000);
            let resamples = pick(resamples, &m.cfg.resamples, 200);
            if n > 20 || shots > 1_000_000 || resamples < 2 || s == 0 || t == 0 {
                return Err(Failure::Config("need n <= 20, shots <= 10^6, resamples >= 2, s, t >= 1".into()));
            }
            let start = Instant::now();
            let rows = verify::distinguisher_experiment(n, s, t, shots, resamples, backing, m.seed_or(0));
            Report::new(timed(rows, "distinguisher", start))
        }
        Command::Classes { s, t, n } => {
            let s = pick(s, &cfg.s, 2);
            let t = pick(t, &cfg.t, 2);
            let n = n.or(cfg.n);
            if s * t > permcomb::ENUMERATION_CAP || s == 0 || t == 0 {
                return Err(Failure::Config(format!("need 1 <= st <= {}", permcomb::ENUMERATION_CAP)));
            }
            let start = Instant::now();
            Report::new(timed(classes_rows(s, t, n), "classes", start))
        }
    };

    write_report(&report, out.as_ref(), csv_path.as_ref())?;
    Ok(report.all_pass())
}

fn classes_rows(s: usize, t: usize, n: Option<usize>) -> Result<Vec<CheckResult>, Error> {
    let table = class_table(s, t)?;
    let total: usize = table.iter().map(|r| r.class_size).sum();
    let mut rows: Vec<serde_json::Value> = table.iter().map(|r| serde_json::to_value(r).expect("row")).collect();
    let mut nu_ok = true;
    if let Some(n) = n {
        let family = fourier_flat_family(n, s)?;
        let local = family.local_dim() as f64;
        let eps = family.epsilon();
        let norm = prulab::qcore::falling_factorial(family.local_dim(), s * t);
        let patterns = permcomb::enumerate_classes(s, t)?;
        for (row, pattern) in rows.iter_mut().zip(patterns.keys()) {
            let nu = nu_class(&family, pattern)?.value;
            let k = pattern.crossings() as f64;
            let bound = (((s * t).pow(2)) as f64 * eps * eps * local).powf(k / 2.0) / norm;
            let pass = nu.norm() <= bound * (1.0 + 1e-9);
            nu_ok &= pass;
            row["nu_re"] = json!(nu.re);
            row["nu_im"] = json!(nu.im);
            row["bound"] = json!(bound);
            row["pass"] = json!(pass);
        }
    }
    let sum_ok = total as f64 == factorial(s * t);
    Ok(vec![CheckResult::new("classes")
        .param("s", s)
        .param("t", t)
        .param("n", n)
        .measured(table.len())
        .details(json!({ "total_size": total, "rows": rows }))
        .decide(sum_ok && nu_ok)])
}

#[derive(serde::Serialize)]
struct CsvRow<'a> {
    check: &'a str,
    status: String,
    pass: bool,
    measured: String,
    bound: Option<f64>,
    regime: String,
    seed: Option<u64>,
    runtime_ms: Option<u64>,
    params: String,
}

fn write_report(report: &Report, out: Option<&PathBuf>, csv_path: Option<&PathBuf>) -> Result<(), Failure> {
    let text = report.to_jsonl();
    match out {
        Some(p) => std::fs::write(p, &text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    if let Some(p) = csv_path {
        let mut w = csv::Writer::from_path(p).map_err(|e| Failure::Io(e.into()))?;
        for r in &report.rows {
            let plain = |v: &serde_json::Value| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string());
            w.serialize(CsvRow {
                check: &r.check,
                status: plain(&serde_json::to_value(r.status).expect("status")),
                pass: r.pass,
                measured: r.measured.to_string(),
                bound: r.bound,
                regime: plain(&serde_json::to_value(r.regime).expect("regime")),
                seed: r.seed,
                runtime_ms: r.runtime_ms,
                params: serde_json::to_string(&r.params).expect("params"),
            })
            .map_err(|e| Failure::Io(e.into()))?;
        }
        w.flush()?;
    }
    Ok(())
}

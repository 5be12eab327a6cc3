//! Acceptance criteria, one line each. Exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use prulab::oracles::apply_hadamard_all;
use prulab::permcomb::enumerate_classes;
use prulab::qcore::StateVector;
use prulab::report::{CheckResult, Status};
use prulab::sampling::Backing;
use prulab::targets::{class_representatives, fourier_flat_family, nu_sigma_forms, PermutationAverage, PhaseAverage};
use prulab::verify::{self, distinguisher_experiment};
use prulab::Result;

const SEED: u64 = 20240917;

struct Outcome {
    pass: bool,
    note: String,
}

fn outcome(pass: bool, note: impl Into<String>) -> Outcome {
    Outcome { pass, note: note.into() }
}

fn passed(rows: &[CheckResult]) -> bool {
    !rows.is_empty() && rows.iter().all(|r| r.status == Status::Pass)
}

fn row<'a>(rows: &'a [CheckResult], check: &str) -> &'a CheckResult {
    rows.iter().find(|r| r.check == check).unwrap_or_else(|| panic!("no row {check}"))
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn bintype() -> Result<Outcome> {
    let start = Instant::now();
    let rows = vec![verify::verify_bintype_collapse(2, 2, SEED)?, verify::verify_bintype_collapse(3, 2, SEED)?];
    let exhaustive = rows.iter().all(|r| r.details["sampled"] == false);
    let functions: Vec<u64> = rows.iter().filter_map(|r| r.details["functions"].as_u64()).collect();
    let el = start.elapsed();
    Ok(outcome(
        passed(&rows) && exhaustive && functions == [16, 256] && within(el, 5.0),
        format!("functions {functions:?}, exhaustive pairs {exhaustive}, {el:.2?}"),
    ))
}

fn flatness() -> Result<Outcome> {
    let start = Instant::now();
    let r = verify::verify_flatness(14, 8, 8.0, 100, SEED)?;
    let el = start.elapsed();
    let (lo, hi) = (2f64.powi(-14), 8.0 * 14.0 / 2f64.powi(14));
    let maxima: Vec<f64> = r.details["max_per_trial"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let in_range = maxima.len() == 100 && maxima.iter().all(|&m| m >= lo * (1.0 - 1e-12) && m <= hi);
    let failures = r.details["failed_trials"].as_u64().unwrap();
    Ok(outcome(
        r.pass && failures == 0 && in_range && within(el, 30.0),
        format!("failures {failures}, max eps {}, {el:.2?}", r.measured),
    ))
}

fn combinatorics() -> Result<Outcome> {
    let start = Instant::now();
    let r = verify::verify_combinatorics(6)?;
    let el = start.elapsed();
    Ok(outcome(r.pass && within(el, 60.0), format!("{} (s, t) shapes, {el:.2?}", r.measured)))
}

fn a_norm() -> Result<Outcome> {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for t in [1, 2] {
        let rows = verify::verify_norm_and_count_bounds(&fourier_flat_family(2, 2)?, t)?;
        let r = row(&rows, "bounds.a_norm");
        let all_svd = r.details["svd_classes"].as_u64() == Some(enumerate_classes(2, t)?.len() as u64);
        ok &= r.status == Status::Pass && all_svd;
        notes.push(format!("t={t} max ratio {}", r.measured));
    }
    let el = start.elapsed();
    Ok(outcome(ok && within(el, 120.0), format!("{}, {el:.2?}", notes.join(", "))))
}

fn nu_identities() -> Result<Outcome> {
    let rows = vec![
        verify::verify_structural_identities(&fourier_flat_family(2, 2)?, 1, None, SEED)?,
        verify::verify_structural_identities(&fourier_flat_family(3, 3)?, 1, Some(1000), SEED)?,
        verify::verify_structural_identities(&fourier_flat_family(3, 2)?, 1, Some(1000), SEED)?,
        verify::verify_structural_identities(&fourier_flat_family(3, 1)?, 3, Some(1000), SEED)?,
    ];
    let z_spread = rows[0].details["z_spread"].as_f64().unwrap();
    let rep = rows.iter().map(|r| r.details["representative_spread"].as_f64().unwrap()).fold(0.0, f64::max);
    let gap = rows.iter().map(|r| r.details["form_gap"].as_f64().unwrap()).fold(0.0, f64::max);
    Ok(outcome(
        passed(&rows) && z_spread < 1e-11 && rep < 1e-11 && gap < 1e-12,
        format!("z spread {z_spread:.1e}, class spread {rep:.1e}, form gap {gap:.1e}"),
    ))
}

fn nu_decay() -> Result<Outcome> {
    let start = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for (s, visit_limit) in [(2usize, 2_000_000u64), (3, 2_100_000)] {
        let family = fourier_flat_family(7, s)?;
        ok &= (family.epsilon() - 1.0 / 128.0).abs() < 1e-15;
        let rows = verify::verify_norm_and_count_bounds(&family, 1)?;
        let r = row(&rows, "bounds.nu_decay");
        ok &= r.status == Status::Pass;
        let mut max_visits = 0;
        for pattern in enumerate_classes(s, 1)?.keys() {
            let sigma = &class_representatives(pattern, 1)?[0];
            max_visits = max_visits.max(nu_sigma_forms(&family, sigma)?.visits);
        }
        ok &= max_visits <= visit_limit;
        notes.push(format!("s={s} max |nu|/bound {:.3}, visits {max_visits}", r.measured.as_f64().unwrap()));
    }
    let el = start.elapsed();
    Ok(outcome(ok && within(el, 60.0), format!("{}, {el:.2?}", notes.join(", "))))
}

fn closeness_chain() -> Result<Outcome> {
    let family = fourier_flat_family(2, 2)?;
    let rows = verify::verify_closeness_chain(&family, 1, PhaseAverage::Exhaustive, PermutationAverage::Exhaustive)?;
    let mc = verify::verify_mc_agreement(&family, 1, 10_000, SEED)?;
    let parts = [
        ("a", row(&rows, "closeness.cross_blocks")),
        ("b", row(&rows, "closeness.unique_restriction")),
        ("c", row(&rows, "closeness.rho_star_oracle")),
        ("d", &mc),
    ];
    let ok = parts.iter().all(|(_, r)| r.status == Status::Pass);
    let notes: Vec<String> = parts.iter().map(|(k, r)| format!("({k}) {}", r.measured)).collect();
    Ok(outcome(ok, notes.join(", ")))
}

fn haar_oracle() -> Result<Outcome> {
    let rows = verify::verify_haar_oracle(4, 2, 10_000, SEED)?;
    let notes: Vec<String> = rows.iter().map(|r| format!("{} {}", r.check, r.measured)).collect();
    Ok(outcome(passed(&rows) && rows.len() == 4, notes.join(", ")))
}

fn almost_invariance() -> Result<Outcome> {
    let r = verify::verify_almost_invariance(2, 1, &[2, 3, 4, 5])?;
    Ok(outcome(r.pass, format!("TD {}", r.measured)))
}

fn channel_invariance() -> Result<Outcome> {
    let rows = verify::verify_closeness_chain(
        &fourier_flat_family(2, 2)?,
        1,
        PhaseAverage::Exhaustive,
        PermutationAverage::Exhaustive,
    )?;
    let r = row(&rows, "closeness.channel");
    Ok(outcome(r.status == Status::Pass, format!("lhs {} rhs {:?}", r.measured, r.bound)))
}

fn distinguisher() -> Result<Outcome> {
    let first = distinguisher_experiment(10, 2, 1, 100_000, 200, Backing::Keyed, SEED)?;
    let again = distinguisher_experiment(10, 2, 1, 100_000, 200, Backing::Keyed, SEED)?;
    let bytes = |rows: &[CheckResult]| rows.iter().map(|r| serde_json::to_string(r).unwrap()).collect::<String>();
    let identical = bytes(&first) == bytes(&again);
    let r = row(&first, "distinguisher.keyed_vs_random");
    Ok(outcome(r.status == Status::Pass && identical, format!("null z {}, replay identical {identical}", r.measured)))
}

fn performance() -> Result<Outcome> {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let hadamard = single.install(|| {
        let mut state = StateVector::basis(24, 5).expect("state");
        let start = Instant::now();
        apply_hadamard_all(&mut state);
        start.elapsed()
    });
    let eight = rayon::ThreadPoolBuilder::new().num_threads(8).build().expect("pool");
    let (suite, report) = eight.install(|| {
        let start = Instant::now();
        let report = verify::run_suite("default", SEED, false);
        (start.elapsed(), report)
    });
    let report = report?;
    Ok(outcome(
        within(hadamard, 2.0) && within(suite, 900.0) && report.all_pass(),
        format!("hadamard n=24 {hadamard:.2?}, default suite {suite:.1?} all_pass {}", report.all_pass()),
    ))
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn main() {
    let criteria: [Criterion; 12] = [
        ("binary-type collapse", bintype),
        ("flatness", flatness),
        ("combinatorics", combinatorics),
        ("trace norm of A_p", a_norm),
        ("nu identities", nu_identities),
        ("nu decay in regime", nu_decay),
        ("closeness chain", closeness_chain),
        ("Haar oracle", haar_oracle),
        ("almost invariance", almost_invariance),
        ("channel almost invariance", channel_invariance),
        ("keyed vs random distinguisher", distinguisher),
        ("performance", performance),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = f().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        failures += usize::from(!result.pass);
        println!("criterion {:>2} {:<30} {}  {}", i + 1, name, if result.pass { "PASS" } else { "FAIL" }, result.note);
    }
    println!("{} of {} criteria pass", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}

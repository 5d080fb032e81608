//! Acceptance run: one PASS/FAIL line per criterion on the shipped instances.
//! Every tolerance is pinned here and does not follow the run configuration.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use hilbert_traces::complex::{composition_residual, io};
use hilbert_traces::derham::{boundary_complex, build_instance, build_mesh, incidences, Domain};
use hilbert_traces::regular::{RegularDecomposition, RegularError, RegularSpec};
use hilbert_traces::report::{Check, Report, Status};
use hilbert_traces::surface::check_commuting;
use hilbert_traces::synthetic::{random_pair, SyntheticOptions};
use hilbert_traces::trace::{assemble_all, range_annihilator_residuals};
use hilbert_traces::verify::{self, assemble, Probe, VerifyOptions, Which};
use hilbert_traces::{ComplexPair, Execution, Side, Tolerances};

const SHIPPED: [(Domain, usize); 5] =
    [(Domain::Cube, 1), (Domain::Cube, 2), (Domain::Cube, 3), (Domain::Cavity, 3), (Domain::Hole, 3)];
const SEED: u64 = 20_240_601;

const FLOAT_EXACT: f64 = 1e-12;
const CONTAINMENT: f64 = 1e-12;
const ANNIHILATOR: f64 = 1e-10;
const COMMUTING_DERHAM: f64 = 1e-12;
const COMMUTING_SYNTHETIC: f64 = 1e-10;
const NORM_SLACK: f64 = 1e-12;
const MONOTONE_SLACK: f64 = 1e-6;
const SAMPLES: usize = 10_000;
const SYNTHETIC_PAIRS: u64 = 50;
const SYNTHETIC_MAX_DIM: usize = 60;
const REGULAR: f64 = 1e-10;
const INSTANCE_BUDGET: Duration = Duration::from_secs(5);
const COHOMOLOGY_BUDGET: Duration = Duration::from_secs(30);
const SUITE_BUDGET: Duration = Duration::from_secs(60);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn label(d: Domain, n: usize) -> String {
    format!("{}-{n}", d.name())
}

fn tolerances() -> Tolerances {
    Tolerances { samples: SAMPLES, ..Tolerances::default() }
}

fn synthetic_options(seed: u64) -> SyntheticOptions {
    SyntheticOptions { levels: 4, max_block: 24, max_extra: 6, general_basis: seed % 2 == 0, full_boundary: false }
}

fn checks<'a>(r: &'a Report, name: &'a str) -> impl Iterator<Item = &'a Check> + 'a {
    r.checks.iter().filter(move |c| c.name == name)
}

fn worst(reports: &BTreeMap<String, Report>, names: &[&str]) -> (f64, bool) {
    let mut w: f64 = 0.0;
    let mut all_pass = true;
    for r in reports.values() {
        for n in names {
            for c in checks(r, n) {
                w = w.max(c.value);
                all_pass &= c.status == Status::Pass;
            }
        }
    }
    (w, all_pass)
}

/// Exact complex properties on integer paths, surface squares on float paths.
fn criterion_1() -> Outcome {
    let tol = Tolerances::default();
    let mut notes = Vec::new();
    let mut pass = true;
    for (d, n) in [(Domain::Cube, 1), (Domain::Cube, 2), (Domain::Cube, 3), (Domain::Cavity, 3)] {
        let t = Instant::now();
        let (g, c, dv) = incidences(&build_mesh(d, n).unwrap());
        let integer = c.mul(&g).is_zero() && dv.mul(&c).is_zero();
        let pair = build_instance(d, n, Execution::Parallel).unwrap();
        let lifted = pair.indices().map(|k| composition_residual(&pair.a_lift(k + 1), &pair.a_lift(k))).fold(0.0, f64::max);
        let asm = assemble(&pair, &tol, Execution::Parallel);
        let mut float: f64 = 0.0;
        let mut exact: f64 = 0.0;
        for w in asm.ops.windows(2) {
            float = float.max(composition_residual(&w[1].st, &w[0].st));
            float = float.max(composition_residual(&w[0].sn, &w[1].sn));
            exact = exact.max(composition_residual(&w[1].dt_op, &w[0].dt_op));
        }
        let elapsed = t.elapsed();
        let ok = integer && lifted == 0.0 && exact == 0.0 && float <= FLOAT_EXACT && elapsed <= INSTANCE_BUDGET;
        pass &= ok;
        notes.push(format!("{} integer {} surface {float:.1e} {:.2}s", label(d, n), if integer && lifted == 0.0 && exact == 0.0 { "0" } else { "nonzero" }, elapsed.as_secs_f64()));
    }
    outcome(pass, notes.join("; "))
}

fn excess_summary(r: &Report) -> String {
    let mut parts = Vec::new();
    for k in 0..=2 {
        let get = |side: &str| {
            r.checks
                .iter()
                .find(|c| c.name == format!("interior-kernel-{side}-excess") && c.level == Some(k))
                .map_or(0.0, |c| c.value)
        };
        let (p, d) = (get("primal"), get("dual"));
        if p != 0.0 || d != 0.0 {
            parts.push(format!("k{k} +{p}/+{d}"));
        }
    }
    parts.join(" ")
}

/// Interior degrees of freedom span the trace kernels.
fn criterion_2(reports: &BTreeMap<String, Report>) -> Outcome {
    let (containment, _) = worst(reports, &["interior-kernel-primal-containment", "interior-kernel-dual-containment"]);
    let mut unequal = Vec::new();
    for (name, r) in reports {
        let s = excess_summary(r);
        if !s.is_empty() {
            unequal.push(format!("{name} {s}"));
        }
    }
    let pass = containment <= CONTAINMENT && unequal.is_empty();
    let eq = if unequal.is_empty() { "equality on all meshes".into() } else { format!("kernel excess {}", unequal.join(", ")) };
    outcome(pass, format!("containment {containment:.1e}; {eq}"))
}

fn synthetic_pairs() -> Vec<ComplexPair> {
    (0..SYNTHETIC_PAIRS).map(|s| random_pair(s, &synthetic_options(s))).collect()
}

fn max_dim(pair: &ComplexPair) -> usize {
    pair.levels().iter().map(|l| l.w.dim().max(l.d.dim()).max(l.dt.dim())).max().unwrap_or(0)
}

/// Row and column spaces against annihilators.
fn criterion_3(reports: &BTreeMap<String, Report>, synth: &[ComplexPair]) -> Outcome {
    let (shipped, shipped_ok) = worst(reports, &["range-annihilator"]);
    let policy = Tolerances::default().rank_policy();
    let mut syn: f64 = 0.0;
    let mut dims_ok = true;
    for pair in synth {
        for ts in assemble_all(pair, &policy, Execution::Parallel) {
            let (a, b, ok) = range_annihilator_residuals(&ts, &policy);
            syn = syn.max(a).max(b);
            dims_ok &= ok;
        }
    }
    let largest = synth.iter().map(max_dim).max().unwrap_or(0);
    let pass = shipped_ok && shipped <= ANNIHILATOR && syn <= ANNIHILATOR && dims_ok && largest <= SYNTHETIC_MAX_DIM;
    outcome(pass, format!("shipped {shipped:.1e}; {} synthetic {syn:.1e} (largest dim {largest})", synth.len()))
}

/// The four commuting relations of the surface operators.
fn criterion_4(reports: &BTreeMap<String, Report>, synth: &[ComplexPair]) -> Outcome {
    let names = ["commuting-trace-primal", "commuting-trace-dual", "commuting-quotient-pairing", "commuting-duality-map"];
    let (derham, _) = worst(reports, &names);
    let tol = Tolerances::default();
    let mut syn: f64 = 0.0;
    for pair in synth {
        let asm = assemble(pair, &tol, Execution::Parallel);
        for (i, ops) in asm.ops.iter().enumerate() {
            syn = syn.max(check_commuting(pair, &asm.traces[i], &asm.traces[i + 1], ops).max());
        }
    }
    outcome(derham <= COMMUTING_DERHAM && syn <= COMMUTING_SYNTHETIC, format!("de Rham {derham:.1e}; synthetic {syn:.1e}"))
}

/// The duality map between trace quotients.
fn criterion_5(reports: &BTreeMap<String, Report>) -> Outcome {
    let (_, bijective) = worst(reports, &["duality-bijective"]);
    let (norm, _) = worst(reports, &["duality-norm"]);
    outcome(bijective && norm <= 1.0 + NORM_SLACK, format!("bijective {bijective}; max norm {norm:.15}"))
}

/// Sampled trace bound and the refinement trend.
fn criterion_6(reports: &BTreeMap<String, Report>) -> Outcome {
    let (violations, bound_ok) = worst(reports, &["isometry-bound-primal", "isometry-bound-dual"]);
    let tol = Tolerances { norm_slack: NORM_SLACK, monotone_slack: MONOTONE_SLACK, ..Tolerances::default() };
    let mut notes = vec![format!("{SAMPLES} samples per level and side, {violations} violations")];
    let mut pass = bound_ok && violations == 0.0;
    for probe in Probe::ALL {
        let rows = verify::refine(Domain::Cube, &[1, 2, 3], probe, &tol, SEED, Execution::Parallel).unwrap();
        let bounded = rows.iter().all(|r| r.defect_ratio <= 1.0 + NORM_SLACK);
        let monotone = rows.windows(2).all(|w| w[1].defect_ratio >= w[0].defect_ratio - MONOTONE_SLACK);
        pass &= bounded && monotone;
        let seq: Vec<String> = rows.iter().map(|r| format!("{:.5}", r.defect_ratio)).collect();
        notes.push(format!("{} {}{}", probe.name(), seq.join(">"), if monotone { "" } else { " decreasing" }).replace('>', if monotone { "<=" } else { "," }));
    }
    outcome(pass, notes.join("; "))
}

/// Trace-complex cohomology against the integer boundary complex.
fn criterion_7() -> Outcome {
    let tol = Tolerances::default();
    let mut pass = true;
    let mut notes = Vec::new();
    let t = Instant::now();
    for (d, n) in SHIPPED {
        let pair = build_instance(d, n, Execution::Parallel).unwrap();
        let h = verify::cohomology(&pair, Which::Trace, &tol, Execution::Parallel);
        let smith = boundary_complex(&build_mesh(d, n).unwrap()).unwrap().betti().to_vec();
        let expected = d.boundary_betti().to_vec();
        let ok = h.by_rank == smith && smith == expected && h.agree();
        pass &= ok;
        notes.push(format!("{} {:?}{}", label(d, n), h.by_rank, if ok { String::new() } else { format!(" vs Smith {smith:?}") }));
    }
    let elapsed = t.elapsed();
    pass &= elapsed <= COHOMOLOGY_BUDGET;
    outcome(pass, format!("{} in {:.1}s", notes.join(", "), elapsed.as_secs_f64()))
}

/// Regular decomposition on the cube with full and trivial regular subspaces.
fn criterion_8() -> Outcome {
    let pair = build_instance(Domain::Cube, 2, Execution::Parallel).unwrap();
    let tol = Tolerances { identity: REGULAR, ..tolerances() };
    let policy = tol.rank_policy();
    let mut residual: f64 = 0.0;
    for side in [Side::Primal, Side::Dual] {
        for k in pair.indices() {
            match RegularDecomposition::build(&pair, side, k, &RegularSpec::full(), &policy) {
                Ok(d) => residual = residual.max(d.residual),
                Err(_) => residual = f64::INFINITY,
            }
        }
    }
    let report = verify::verify(&pair, &VerifyOptions { tol, seed: SEED, exec: Execution::Parallel, regular: Some(RegularSpec::full()) });
    let characterizations: Vec<&Check> = report
        .checks
        .iter()
        .filter(|c| c.name.contains("characterization") || c.name.starts_with("regular-") || c.name.starts_with("trace-decomposition") || c.name.starts_with("hat-operator"))
        .collect();
    let char_ok = !characterizations.is_empty() && characterizations.iter().all(|c| c.passed());
    let zero = RegularSpec::zero(pair.indices());
    let refused = [Side::Primal, Side::Dual].iter().all(|&side| {
        pair.indices().all(|k| {
            let res = RegularDecomposition::build(&pair, side, k, &zero, &policy);
            match res {
                Err(RegularError::NoDecomposition { .. }) => true,
                Ok(d) => d.model.y.dim() == 0,
                Err(_) => false,
            }
        })
    });
    outcome(
        residual <= REGULAR && char_ok && refused,
        format!(
            "cube-2 full residual {residual:.1e}; {} characterization checks {}; zero subspace refused {refused}",
            characterizations.len(),
            if char_ok { "pass" } else { "fail" }
        ),
    )
}

fn htrace(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_htrace"))
        .args(args)
        .env_remove("HTRACE_SEED")
        .env_remove("HTRACE_TOL")
        .env_remove("HTRACE_CONFIG")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_default()
}

/// Byte-identical builds, save/load round trips and reproducible reports.
fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let s = |x: &std::path::PathBuf| x.to_str().unwrap().to_string();
    let seed = SEED.to_string();
    let mut ok_cli = true;
    ok_cli &= htrace(&["build", "--domain", "cavity", "--n", "3", "--out", &s(&p("a.json"))]);
    ok_cli &= htrace(&["build", "--domain", "cavity", "--n", "3", "--out", &s(&p("b.json"))]);
    let builds = ok_cli && read(&p("a.json")) == read(&p("b.json"));
    let round = io::load(p("a.json")).map(|pair| io::to_bytes(&pair) == read(&p("a.json"))).unwrap_or(false);
    ok_cli &= htrace(&["build", "--domain", "cube", "--n", "2", "--out", &s(&p("c.json"))]);
    ok_cli &= htrace(&["verify", "--in", &s(&p("c.json")), "--report", &s(&p("r1.json")), "--seed", &seed]);
    ok_cli &= htrace(&["verify", "--in", &s(&p("c.json")), "--report", &s(&p("r2.json")), "--seed", &seed]);
    ok_cli &= htrace(&["--sequential", "verify", "--in", &s(&p("c.json")), "--report", &s(&p("r3.json")), "--seed", &seed]);
    let load = |f: &str| serde_json::from_slice::<Report>(&read(&p(f))).map(|r| r.without_timings()).ok();
    let (r1, r2, r3) = (load("r1.json"), load("r2.json"), load("r3.json"));
    let reports = r1.is_some() && r1 == r2 && r1 == r3;
    let synth = (0..5).all(|s| io::to_bytes(&random_pair(s, &synthetic_options(s))) == io::to_bytes(&random_pair(s, &synthetic_options(s))));
    outcome(
        ok_cli && builds && round && reports && synth,
        format!("builds identical {builds}; save/load identical {round}; reports identical across runs and schedules {reports}; synthetic {synth}"),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();

    // Criterion 10 first: the full battery on every shipped instance, whose
    // reports feed criteria 2 to 6.
    let tol = tolerances();
    let start = Instant::now();
    let mut reports = BTreeMap::new();
    for (d, n) in SHIPPED {
        let pair = build_instance(d, n, Execution::Parallel).unwrap();
        let r = verify::verify(&pair, &VerifyOptions { tol, seed: SEED, exec: Execution::Parallel, regular: None });
        reports.insert(label(d, n), r);
    }
    let suite = start.elapsed();
    let failing: Vec<String> = reports
        .iter()
        .flat_map(|(name, r)| r.failures().map(move |c| format!("{name}:{}", c.name)))
        .collect();
    let synth = synthetic_pairs();

    results.push((1, "exact complex properties", criterion_1()));
    results.push((2, "interior degrees of freedom span the trace kernels", criterion_2(&reports)));
    results.push((3, "range and annihilator agreement", criterion_3(&reports, &synth)));
    results.push((4, "commuting relations", criterion_4(&reports, &synth)));
    results.push((5, "duality map bijective and contractive", criterion_5(&reports)));
    results.push((6, "trace bound and refinement trend", criterion_6(&reports)));
    results.push((7, "trace complex cohomology", criterion_7()));
    results.push((8, "regular decomposition", criterion_8()));
    results.push((9, "determinism", criterion_9()));
    results.push((
        10,
        "full suite runtime",
        outcome(
            suite <= SUITE_BUDGET,
            format!(
                "{} instances in {:.1}s (budget {}s); gating failures: {}",
                SHIPPED.len(),
                suite.as_secs_f64(),
                SUITE_BUDGET.as_secs(),
                if failing.is_empty() { "none".into() } else { failing.join(", ") }
            ),
        ),
    ));

    let mut failed = 0;
    for (id, title, o) in &results {
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {id:>2} {title}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {} criteria pass", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

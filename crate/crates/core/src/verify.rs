//! The full verification battery, cohomology of the associated complexes and
//! the refinement study.

use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::complex::ComplexPair;
use crate::config::Tolerances;
use crate::derham::{self, boundary_complex, build_mesh, Domain, DerhamError, TetMesh};
use crate::exec::Execution;
use crate::linalg::{spectral_norm, Vector};
use crate::regular::{regular_checks, RegularSpec};
use crate::report::{Check, Report};
use crate::sampling;
use crate::surface::{domain_complex, kernel_complex, surface_checks, trace_complex, Cohomology, SurfaceOps};
use crate::trace::{assemble_all, trace_checks, Side, TraceSystem};

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub tol: Tolerances,
    pub seed: u64,
    pub exec: Execution,
    pub regular: Option<RegularSpec>,
}

/// Trace systems and surface operators of every level.
pub struct Assembled {
    pub traces: Vec<TraceSystem>,
    pub ops: Vec<SurfaceOps>,
}

pub fn assemble(pair: &ComplexPair, tol: &Tolerances, exec: Execution) -> Assembled {
    let traces = assemble_all(pair, &tol.rank_policy(), exec);
    let idx: Vec<usize> = (0..traces.len().saturating_sub(1)).collect();
    let ops = exec.map_slice(&idx, |&i| SurfaceOps::build(pair, &traces[i], &traces[i + 1]));
    Assembled { traces, ops }
}

/// The tetrahedral mesh a generated de Rham instance was built from.
pub fn source_mesh(pair: &ComplexPair) -> Option<Result<TetMesh, DerhamError>> {
    if !pair.is_integer_instance() {
        return None;
    }
    let domain = pair.meta.get("domain")?.as_str()?;
    let n = pair.meta.get("n")?.as_u64()? as usize;
    Some(Domain::from_str(domain).and_then(|d| build_mesh(d, n)).map_err(DerhamError::from))
}

fn instance_json(pair: &ComplexPair) -> serde_json::Value {
    serde_json::json!({
        "label": pair.label,
        "k_min": pair.k_min(),
        "k_max": pair.k_max(),
        "meta": pair.meta,
    })
}

/// Runs every check on the pair.
pub fn verify(pair: &ComplexPair, opts: &VerifyOptions) -> Report {
    let tol = &opts.tol;
    let (seed, exec) = (opts.seed, opts.exec);
    let mut checks = pair.validate(tol, seed, exec);
    let asm = assemble(pair, tol, exec);

    let per_level = exec.map_slice(&asm.traces, |ts| trace_checks(pair, ts, tol, seed, Execution::Sequential));
    checks.extend(per_level.into_iter().flatten());

    let idx: Vec<usize> = (0..asm.ops.len()).collect();
    let per_pair = exec.map_slice(&idx, |&i| {
        surface_checks(pair, &asm.traces[i], &asm.traces[i + 1], &asm.ops[i], asm.ops.get(i + 1), tol)
    });
    checks.extend(per_pair.into_iter().flatten());

    checks.extend(cohomology_checks(pair, &asm, tol));

    if let Some(spec) = &opts.regular {
        checks.extend(regular_checks(pair, spec, &asm.traces, tol, seed, exec));
    }
    Report::new(instance_json(pair), seed, tol.to_json(), checks)
}

fn cohomology_checks(pair: &ComplexPair, asm: &Assembled, tol: &Tolerances) -> Vec<Check> {
    let policy = tol.rank_policy();
    let mut out = Vec::new();
    let t = Instant::now();
    let h = trace_complex(&asm.traces, &asm.ops).trimmed().cohomology(&policy);
    out.push(
        Check::verdict("trace-cohomology-agreement", None, "trace-complex-cohomology", h.agree(), 0.0)
            .with_detail(format!("rank {:?}, hodge {:?}", h.by_rank, h.by_hodge))
            .timed(t),
    );
    if h.unstable {
        out.push(Check::info("trace-cohomology-stability", None, "rank-threshold", 1.0).with_detail("a singular value lies near the rank threshold"));
    }
    if let Some(mesh) = source_mesh(pair) {
        let t = Instant::now();
        match mesh.map_err(|e| e.to_string()).and_then(|m| boundary_complex(&m).map_err(|e| e.to_string())) {
            Ok(bc) => {
                let betti = bc.betti().to_vec();
                let ok = h.by_rank == betti;
                out.push(
                    Check::verdict("trace-cohomology-boundary", None, "trace-complex-cohomology", ok, 0.0)
                        .with_detail(format!("trace complex {:?}, boundary Betti numbers {:?}", h.by_rank, betti))
                        .timed(t),
                );
            }
            Err(e) => out.push(
                Check::verdict("trace-cohomology-boundary", None, "trace-complex-cohomology", false, 1.0).with_detail(e),
            ),
        }
    }
    out
}

/// Which complex to take the cohomology of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    /// `D_k --A_k--> D_{k+1}`.
    Domain,
    /// The subcomplex on the trace kernels.
    Bc,
    /// `Q_primal(k) --S^t--> Q_primal(k+1)`.
    Trace,
}

#[derive(Debug, Error)]
#[error("unknown complex {0:?}; expected domain, bc or trace")]
pub struct UnknownWhich(String);

impl FromStr for Which {
    type Err = UnknownWhich;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "domain" => Ok(Which::Domain),
            "bc" => Ok(Which::Bc),
            "trace" => Ok(Which::Trace),
            other => Err(UnknownWhich(other.into())),
        }
    }
}

/// Cohomology of the requested complex, trimmed of zero end spaces.
pub fn cohomology(pair: &ComplexPair, which: Which, tol: &Tolerances, exec: Execution) -> Cohomology {
    let policy = tol.rank_policy();
    let complex = match which {
        Which::Domain => domain_complex(pair),
        Which::Bc => kernel_complex(pair, &assemble_all(pair, &policy, exec), &policy).0,
        Which::Trace => {
            let asm = assemble(pair, tol, exec);
            trace_complex(&asm.traces, &asm.ops)
        }
    };
    complex.trimmed().cohomology(&policy)
}

/// Scalar fields sampled at the vertices for the refinement study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Probe {
    CoordinateX,
    CoordinateZ,
    ConstantOne,
}

#[derive(Debug, Error)]
#[error("unknown probe {0:?}; expected coordinate-x, coordinate-z or constant-one")]
pub struct UnknownProbe(String);

impl FromStr for Probe {
    type Err = UnknownProbe;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coordinate-x" => Ok(Probe::CoordinateX),
            "coordinate-z" => Ok(Probe::CoordinateZ),
            "constant-one" => Ok(Probe::ConstantOne),
            other => Err(UnknownProbe(other.into())),
        }
    }
}

impl Probe {
    pub const ALL: [Probe; 3] = [Probe::CoordinateX, Probe::CoordinateZ, Probe::ConstantOne];

    pub fn name(self) -> &'static str {
        match self {
            Probe::CoordinateX => "coordinate-x",
            Probe::CoordinateZ => "coordinate-z",
            Probe::ConstantOne => "constant-one",
        }
    }

    /// Nodal interpolant in `P1`, the `D_0` model.
    pub fn interpolate(self, mesh: &TetMesh) -> Vector {
        Vector::from_iterator(
            mesh.vertices.len(),
            mesh.vertices.iter().map(|v| match self {
                Probe::CoordinateX => v[0],
                Probe::CoordinateZ => v[2],
                Probe::ConstantOne => 1.0,
            }),
        )
    }
}

/// One row of the refinement table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineRow {
    pub n: usize,
    pub probe: Probe,
    /// `|T^t x|' / |[x]|` at level 0.
    pub defect_ratio: f64,
    /// Power-iteration estimate of the level-1 trace norm.
    pub norm_estimate: f64,
    /// Dense oracle of the level-1 trace norm.
    pub norm_dense: f64,
    pub iterations: usize,
}

/// Largest singular value of the trace of `ts` in the graph and dual norms,
/// by power iteration on `G_D^{-1} B G_Dt^{-1} B^T`.
pub fn trace_norm_power(ts: &TraceSystem, side: Side, seed: u64, max_iter: usize, rtol: f64) -> (f64, usize) {
    let t = ts.trace_matrix(side);
    let (src, dst) = (ts.space(side), ts.target(side));
    if t.nrows() == 0 || t.ncols() == 0 || spectral_norm(&t) == 0.0 {
        return (0.0, 0);
    }
    let mut x: Vector = sampling::gaussian_block(src.dim(), 1, seed, sampling::stream_id("power", ts.k), 0).column(0).into();
    x /= src.norm(&x);
    let mut lambda = 0.0;
    for it in 1..=max_iter {
        let y = src.solve_vec(&(t.transpose() * dst.solve_vec(&(&t * &x))));
        let next = src.norm(&y);
        x = y / next;
        if (next - lambda).abs() <= rtol * next {
            return (next.sqrt(), it);
        }
        lambda = next;
    }
    (lambda.sqrt(), max_iter)
}

/// Refinement study on `domain` for the given subdivisions.
pub fn refine(domain: Domain, ns: &[usize], probe: Probe, tol: &Tolerances, seed: u64, exec: Execution) -> Result<Vec<RefineRow>, DerhamError> {
    let policy = tol.rank_policy();
    ns.iter()
        .map(|&n| {
            let mesh = build_mesh(domain, n)?;
            let pair = derham::build_instance(domain, n, exec)?;
            let ts0 = TraceSystem::assemble(&pair, 0, &policy);
            let x = probe.interpolate(&mesh);
            let (_, _, ratio) = ts0.isometry_defect(Side::Primal, &x).expect("probe has the P1 dimension");
            let ts1 = TraceSystem::assemble(&pair, 1, &policy);
            let (est, iterations) = trace_norm_power(&ts1, Side::Primal, seed, 5000, 1e-12);
            Ok(RefineRow {
                n,
                probe,
                defect_ratio: ratio,
                norm_estimate: est,
                norm_dense: ts1.trace_norm(Side::Primal),
                iterations,
            })
        })
        .collect()
}

/// Bound and trend checks over a refinement table.
pub fn refine_checks(rows: &[RefineRow], tol: &Tolerances) -> Vec<Check> {
    let mut out = Vec::new();
    for r in rows {
        let lv = Some(r.n as i32);
        let tag = "trace-isometry-refinement";
        out.push(Check::bound(&format!("defect-ratio-{}", r.probe.name()), lv, tag, r.defect_ratio, 1.0 + tol.norm_slack));
        out.push(Check::bound("trace-norm-estimate", lv, "trace-norm", r.norm_estimate, 1.0 + tol.norm_slack));
        let gap = (r.norm_estimate - r.norm_dense).abs();
        out.push(Check::bound("trace-norm-oracle", lv, "trace-norm", gap, 1e-6).with_detail(format!(
            "power iteration {:.12} after {} steps, dense {:.12}",
            r.norm_estimate, r.iterations, r.norm_dense
        )));
    }
    for w in rows.windows(2) {
        let drop = w[0].defect_ratio - w[1].defect_ratio;
        out.push(
            Check::bound(
                &format!("defect-monotone-{}", w[1].probe.name()),
                Some(w[1].n as i32),
                "trace-isometry-refinement",
                drop.max(0.0),
                tol.monotone_slack,
            )
            .with_detail(format!("n={} -> n={}: {:.9} -> {:.9}", w[0].n, w[1].n, w[0].defect_ratio, w[1].defect_ratio)),
        );
    }
    out
}

/// The refinement report.
pub fn refine_report(domain: Domain, rows: &[RefineRow], tol: &Tolerances, seed: u64) -> Report {
    let instance = serde_json::json!({ "domain": domain.name(), "rows": rows });
    Report::new(instance, seed, tol.to_json(), refine_checks(rows, tol))
}

/// Dense rank-based kernel dimension excess over interior DOFs, per level.
pub fn kernel_excess(ts: &TraceSystem, interior: Option<&Vec<usize>>) -> Option<isize> {
    interior.map(|i| ts.ker_primal.ncols() as isize - i.len() as isize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{random_pair, SyntheticOptions};

    #[test]
    fn synthetic_pair_verifies() {
        let pair = random_pair(21, &SyntheticOptions::default());
        let opts = VerifyOptions { regular: Some(RegularSpec::full()), ..Default::default() };
        let report = verify(&pair, &opts);
        let failures: Vec<_> = report.failures().map(|c| format!("{} {:?} {:e} {}", c.name, c.level, c.value, c.detail)).collect();
        assert!(failures.is_empty(), "{failures:#?}");
    }

    #[test]
    fn parsing() {
        assert_eq!("bc".parse::<Which>().unwrap(), Which::Bc);
        assert!("surface".parse::<Which>().is_err());
        assert_eq!("constant-one".parse::<Probe>().unwrap(), Probe::ConstantOne);
    }
}

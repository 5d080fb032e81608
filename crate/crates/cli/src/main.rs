//! `htrace`: build instances, verify them, compute cohomology and run
//! refinement studies. Exit status is 0 on PASS, 1 on FAIL and 2 on usage,
//! input or schema errors.

mod config;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use hilbert_traces::complex::io;
use hilbert_traces::derham::{build_instance, Domain};
use hilbert_traces::regular::RegularSpec;
use hilbert_traces::report::{Check, Report};
use hilbert_traces::verify::{self, Probe, RefineRow, VerifyOptions, Which};
use hilbert_traces::Execution;

use config::RunArgs;

#[derive(Debug, Parser)]
#[command(name = "htrace", version, about = "Trace operators and trace complexes of Hilbert complex pairs")]
struct Cli {
    #[command(flatten)]
    run: RunArgs,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Write a de Rham instance of a reference domain.
    Build {
        #[arg(long)]
        domain: Domain,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full verification battery on an instance.
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
        /// Regular-subspace specification enabling the decomposition checks.
        #[arg(long)]
        regular: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Cohomology dimensions of one of the associated complexes.
    Cohomology {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        which: Which,
        #[arg(long)]
        report: PathBuf,
    },
    /// Isometry-defect and trace-norm study over a sequence of meshes.
    Refine {
        #[arg(long)]
        domain: Domain,
        #[arg(long, value_delimiter = ',', required = true, value_parser = clap::value_parser!(u64).range(1..))]
        n_list: Vec<u64>,
        #[arg(long)]
        probe: Probe,
        #[arg(long)]
        report: PathBuf,
        /// CSV destination; standard output when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(verdict)` on a completed run, `Err` on usage or input errors.
fn run(cli: Cli) -> Result<bool> {
    let (tol, seed) = cli.run.resolve()?;
    let exec = if cli.run.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.cmd {
        Cmd::Build { domain, n, out } => {
            let pair = build_instance(domain, n as usize, exec)?;
            io::save(&pair, &out).with_context(|| format!("writing {}", out.display()))?;
            println!("{} -> {}", pair.label, out.display());
            Ok(true)
        }
        Cmd::Verify { input, regular, report } => {
            let pair = io::load(&input).with_context(|| format!("loading {}", input.display()))?;
            let regular = match regular {
                Some(p) => Some(RegularSpec::load(&p).with_context(|| format!("loading {}", p.display()))?),
                None => None,
            };
            let rep = verify::verify(&pair, &VerifyOptions { tol, seed, exec, regular });
            write_report(&rep, &report)?;
            summarize(&rep);
            Ok(rep.passed())
        }
        Cmd::Cohomology { input, which, report } => {
            let pair = io::load(&input).with_context(|| format!("loading {}", input.display()))?;
            let h = verify::cohomology(&pair, which, &tol, exec);
            let dims = h.by_rank.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
            println!("({dims})");
            let mut checks: Vec<Check> = h
                .by_rank
                .iter()
                .enumerate()
                .map(|(i, &d)| Check::info("cohomology-dimension", Some(h.k_min + i as i32), "cohomology", d as f64))
                .collect();
            checks.push(
                Check::verdict("cohomology-agreement", None, "cohomology", h.agree(), 0.0)
                    .with_detail(format!("rank {:?}, hodge {:?}", h.by_rank, h.by_hodge)),
            );
            let instance = serde_json::json!({
                "label": pair.label,
                "which": which,
                "k_min": h.k_min,
                "dimensions": h.by_rank,
                "meta": pair.meta,
            });
            let rep = Report::new(instance, seed, tol.to_json(), checks);
            write_report(&rep, &report)?;
            Ok(rep.passed())
        }
        Cmd::Refine { domain, n_list, probe, report, csv } => {
            let ns: Vec<usize> = n_list.iter().map(|&n| n as usize).collect();
            let rows = verify::refine(domain, &ns, probe, &tol, seed, exec)?;
            match csv {
                Some(p) => write_csv(File::create(&p).with_context(|| format!("writing {}", p.display()))?, &rows)?,
                None => write_csv(std::io::stdout().lock(), &rows)?,
            }
            let rep = verify::refine_report(domain, &rows, &tol, seed);
            write_report(&rep, &report)?;
            Ok(rep.passed())
        }
    }
}

fn write_report(rep: &Report, path: &Path) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    f.write_all(rep.to_json().as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

fn write_csv(w: impl Write, rows: &[RefineRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "probe", "defect_ratio", "norm_estimate", "norm_dense", "iterations"])?;
    for r in rows {
        out.write_record([
            r.n.to_string(),
            r.probe.name().to_string(),
            format!("{:.15e}", r.defect_ratio),
            format!("{:.15e}", r.norm_estimate),
            format!("{:.15e}", r.norm_dense),
            r.iterations.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn summarize(rep: &Report) {
    let fails: Vec<_> = rep.failures().collect();
    println!("{:?}: {} checks, {} failed", rep.verdict, rep.checks.len(), fails.len());
    for c in fails {
        let level = c.level.map(|l| format!(" [k={l}]")).unwrap_or_default();
        println!("  FAIL {}{}: {:e} {}", c.name, level, c.value, c.detail);
    }
}

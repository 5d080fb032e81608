use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hilbert_traces::derham::{build_feec, build_instance, build_mesh, Domain, Reduction};
use hilbert_traces::trace::assemble_all;
use hilbert_traces::verify::assemble;
use hilbert_traces::{Execution, Tolerances};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn feec_assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_feec");
    for n in [2usize, 4] {
        let mesh = build_mesh(Domain::Cube, n).unwrap();
        for (name, exec) in MODES {
            let reduction = match exec {
                Execution::Sequential => Reduction::Sequential,
                Execution::Parallel => Reduction::Parallel,
            };
            group.bench_with_input(BenchmarkId::new(name, n), &mesh, |b, m| {
                b.iter(|| black_box(build_feec(m, exec, reduction)))
            });
        }
    }
    group.finish();
}

fn trace_assembly(c: &mut Criterion) {
    let policy = Tolerances::default().rank_policy();
    let mut group = c.benchmark_group("assemble_all");
    group.sample_size(10);
    let pair = build_instance(Domain::Cube, 2, Execution::Parallel).unwrap();
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| black_box(assemble_all(&pair, &policy, exec))));
    }
    group.finish();
}

fn surface_assembly(c: &mut Criterion) {
    let tol = Tolerances::default();
    let mut group = c.benchmark_group("traces_and_surface_operators");
    group.sample_size(10);
    let pair = build_instance(Domain::Cube, 2, Execution::Parallel).unwrap();
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| black_box(assemble(&pair, &tol, exec).ops.len())));
    }
    group.finish();
}

criterion_group!(benches, feec_assembly, trace_assembly, surface_assembly);
criterion_main!(benches);

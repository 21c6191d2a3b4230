use criterion::{criterion_group, criterion_main, Criterion};
use slabinv::dnmap::{assemble_dn, BoundaryBasis};
use slabinv::fields::{bump_potential, fourier_transform};
use slabinv::forward::{BoundaryMode, HelmholtzOperator};
use slabinv::geometry::{build_domain, BoundaryPatch, Plate, SlabGeometry};
use slabinv::par::Execution;
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn dn_columns(c: &mut Criterion) {
    let geom = SlabGeometry::reference();
    let grid = build_domain(&geom, 1.0 / 12.0).unwrap();
    let basis = BoundaryBasis::source(&geom, &grid, 4).unwrap();
    let target = BoundaryPatch::neumann(&geom, Plate::Bottom);
    let mut g = c.benchmark_group("dn_assembly");
    g.sample_size(10);
    for (name, exec) in MODES {
        let op = HelmholtzOperator::new(&geom, &grid, 0.5, None, BoundaryMode::Truncated).unwrap().with_exec(exec);
        op.require_admissible().unwrap();
        g.bench_function(name, |b| b.iter(|| assemble_dn(black_box(&op), &basis, target).unwrap()));
    }
    g.finish();
}

fn transform_eval(c: &mut Criterion) {
    let geom = SlabGeometry::reference();
    let grid = build_domain(&geom, 1.0 / 12.0).unwrap();
    let ft = fourier_transform(&bump_potential(&grid, &geom, 1.0).unwrap().field);
    let xis: Vec<[f64; 3]> = (0..512).map(|n| [0.1 * (n % 8) as f64, 0.1 * (n / 8 % 8) as f64, 0.1 * (n / 64) as f64]).collect();
    let mut g = c.benchmark_group("fourier_eval");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| ft.eval_many(black_box(&xis), exec)));
    }
    g.finish();
}

criterion_group!(benches, dn_columns, transform_eval);
criterion_main!(benches);

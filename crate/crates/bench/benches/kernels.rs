use criterion::{black_box, criterion_group, criterion_main, Criterion};
use cutrom::darcy::{self, DarcyProblem, Penalties};
use cutrom::pipeline::{darcy_hf, darcy_snapshots, sample_parameters, Case, DarcySetup, RunConfig, StokesSetup, Stream};
use cutrom::pod::{compress, L2Product};
use cutrom::rom::DarcyQuery;
use cutrom::snapshot::{Direction, ExtensionMode, TransportStencil};
use cutrom::stokes::solve_stokes;
use cutrom::{classify_with, ellipse_transport, sym_eig, BackgroundMesh, DenseMatrix, Rect};

const MU: [f64; 4] = [1.3, 0.8, 0.25, -0.4];

fn geometry(c: &mut Criterion) {
    let mesh = BackgroundMesh::structured(Rect::new([-1.2, -1.2], [1.2, 1.2]), 0.05).unwrap();
    let problem = DarcyProblem::ellipse(0.05, Penalties::default());
    c.bench_function("classify ellipse h=0.05", |b| {
        b.iter(|| classify_with(&mesh, &problem.domain, black_box(&MU), 8).unwrap())
    });
    let map = ellipse_transport();
    c.bench_function("transport stencil h=0.05", |b| {
        b.iter(|| TransportStencil::new(&mesh, &map, black_box(&MU), Direction::Inverse))
    });
}

fn high_fidelity(c: &mut Criterion) {
    let mesh = BackgroundMesh::structured(Rect::new([-1.2, -1.2], [1.2, 1.2]), 0.05).unwrap();
    let problem = DarcyProblem::ellipse(0.05, Penalties::default());
    let active = classify_with(&mesh, &problem.domain, &MU, 8).unwrap();
    c.bench_function("darcy solve h=0.05", |b| b.iter(|| darcy::solve(&problem, &mesh, &active).unwrap()));

    let cfg = RunConfig {
        mesh_h: 0.07,
        ..RunConfig::for_case(Case::StokesCylinder)
    };
    let setup = StokesSetup::new(&cfg).unwrap();
    let active = classify_with(&setup.mesh, &setup.problem.domain, &[0.2], 8).unwrap();
    let mut group = c.benchmark_group("stokes");
    group.sample_size(10);
    group.bench_function("solve h=0.07", |b| {
        b.iter(|| solve_stokes(&setup.problem, &setup.mesh, &active).unwrap())
    });
    group.finish();
}

fn reduction(c: &mut Criterion) {
    let a = DenseMatrix::from_fn(100, 100, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
    c.bench_function("jacobi eig 100", |b| b.iter(|| sym_eig(black_box(&a)).unwrap()));

    let cfg = RunConfig {
        train: 60,
        ..RunConfig::for_case(Case::DarcyEllipse)
    };
    let setup = DarcySetup::new(&cfg).unwrap();
    let params = sample_parameters(setup.parameter_space(), cfg.train, cfg.seed, Stream::Train);
    let hf = darcy_hf(&setup, &params).unwrap();
    let set = darcy_snapshots(&setup, &hf, ExtensionMode::Natural, true).unwrap();
    let l2 = L2Product::new(&setup.mesh);
    c.bench_function("pod compress M=60", |b| b.iter(|| compress(&set, 40, &l2).unwrap()));

    let basis = compress(&set, 40, &l2).unwrap();
    c.bench_function("darcy online query N=40", |b| {
        b.iter(|| {
            let q = DarcyQuery::new(&setup.mesh, &setup.problem, &basis, Some(&setup.transport), black_box(&MU)).unwrap();
            q.solve(40).unwrap()
        })
    });
}

criterion_group!(benches, geometry, high_fidelity, reduction);
criterion_main!(benches);

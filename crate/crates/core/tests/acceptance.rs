//! Acceptance criteria 1 to 9. Runs sequentially, prints one PASS/FAIL line
//! per criterion and exits non-zero if any fails. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 1 7`.

use std::collections::HashMap;
use std::fs;
use std::time::Instant;

use cutrom::darcy::{self, DarcyProblem, Penalties, ScalarData};
use cutrom::mesh::barycentric;
use cutrom::pipeline::{
    darcy_error_curve, darcy_hf, darcy_snapshots, run_errors, run_offline, sample_parameters, stokes_compress,
    stokes_error_curve, stokes_hf, stokes_hf_one, stokes_snapshots, Case, DarcySetup, RunConfig, StokesSetup, Stream,
    ELLIPSE_RADIUS,
};
use cutrom::pod::{compress, L2Product, ReducedBasis};
use cutrom::snapshot::{extend, ExtensionContext, ExtensionMode, FieldKind, SnapshotSet};
use cutrom::stokes::edge_flux;
use cutrom::{
    classify_with, cylinder_transport, ellipse_levelset, ellipse_transport, ActiveMesh, BackgroundMesh, Rect, Side,
};

const MU_BAR: [f64; 4] = [1.0, 1.0, 0.0, 0.0];
const SUBDIVISION: usize = cutrom::geometry::DEFAULT_SUBDIVISION;

type Outcome = (bool, String);

fn darcy_box() -> Rect {
    Rect::new([-1.2, -1.2], [1.2, 1.2])
}

/// Area of the discrete domain and length of the discrete interface.
fn measure(mesh: &BackgroundMesh, active: &ActiveMesh) -> (f64, f64) {
    let (mut area, mut length) = (0.0, 0.0);
    for &c in active.active_cells() {
        area += active.bulk_rule(mesh, c, 1).unwrap().weights.iter().sum::<f64>();
    }
    for &c in active.cut_cells() {
        length += active.cut_rules(mesh, c, 1).unwrap().1.weights.iter().sum::<f64>();
    }
    (area, length)
}

fn criterion_1() -> Outcome {
    let domain = ellipse_levelset(ELLIPSE_RADIUS);
    let r = ELLIPSE_RADIUS;
    let (area, length) = (std::f64::consts::PI * r * r, 2.0 * std::f64::consts::PI * r);
    let errs: Vec<(f64, f64)> = [0.05, 0.025]
        .iter()
        .map(|&h| {
            let mesh = BackgroundMesh::structured(darcy_box(), h).unwrap();
            let active = classify_with(&mesh, &domain, &MU_BAR, SUBDIVISION).unwrap();
            let (a, l) = measure(&mesh, &active);
            ((a - area).abs() / area, (l - length).abs() / length)
        })
        .collect();
    let (ra, rl) = (errs[0].0 / errs[1].0, errs[0].1 / errs[1].1);
    let pass = errs[0].0 <= 0.02 && errs[0].1 <= 0.02 && ra >= 3.0 && rl >= 3.0;
    (
        pass,
        format!(
            "area error {:.2e} -> {:.2e} (x{ra:.2}), length error {:.2e} -> {:.2e} (x{rl:.2}); need <= 2% and x3",
            errs[0].0, errs[1].0, errs[0].1, errs[1].1
        ),
    )
}

fn criterion_2() -> Outcome {
    let mesh = BackgroundMesh::structured(darcy_box(), 0.05).unwrap();
    let affine = |p: [f64; 2]| 1.0 + 2.0 * p[0] + 3.0 * p[1];
    let problem = DarcyProblem {
        dirichlet: ScalarData::function(move |p, _| affine(p)),
        ..DarcyProblem::new(ellipse_levelset(ELLIPSE_RADIUS))
    };
    let mut worst: f64 = 0.0;
    for mu in sample_parameters(problem.domain.parameter_space(), 10, 2, Stream::Train) {
        let active = classify_with(&mesh, &problem.domain, &mu, SUBDIVISION).unwrap();
        let u = darcy::solve(&problem, &mesh, &active).unwrap();
        for (d, &v) in active.dof_vertices().iter().enumerate() {
            worst = worst.max((u.values[d] - affine(mesh.vertices()[v])).abs());
        }
    }
    (worst <= 1e-8, format!("max nodal error {worst:.2e} over 10 parameters; need <= 1e-8"))
}

/// L2 distance over the fine discrete domain between a fine solution and a
/// coarse one (evaluated by point location on the coarse mesh).
fn l2_distance(fine: &BackgroundMesh, fa: &ActiveMesh, fu: &[f64], coarse: &BackgroundMesh, cu: &[f64]) -> f64 {
    let mut sum = 0.0;
    for &c in fa.active_cells() {
        let rule = fa.bulk_rule(fine, c, 3).unwrap();
        let t = fine.triangle(c);
        let verts = fine.cells()[c];
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let lam = barycentric(&t, *p);
            let a: f64 = verts.iter().zip(lam).map(|(&v, l)| fu[v] * l).sum();
            let b = coarse.interpolate(cu, *p).expect("point inside the box");
            sum += w * (a - b) * (a - b);
        }
    }
    sum.sqrt()
}

fn criterion_3() -> Outcome {
    let problem = DarcyProblem::ellipse(ELLIPSE_RADIUS, Penalties::default());
    let bbox = Rect::new([-0.1, -0.1], [0.1, 0.1]);
    let h0 = 0.02;
    let solve = |h: f64| {
        let mesh = BackgroundMesh::structured(bbox, h).unwrap();
        let active = classify_with(&mesh, &problem.domain, &MU_BAR, SUBDIVISION).unwrap();
        let u = darcy::solve(&problem, &mesh, &active).unwrap();
        let bg = active.to_background(&u.values, 1, mesh.num_vertices());
        (mesh, active, bg)
    };
    let (rm, ra, ru) = solve(h0 / 8.0);
    let errs: Vec<f64> = [1.0, 2.0, 4.0]
        .iter()
        .map(|k| {
            let (m, _, u) = solve(h0 / k);
            l2_distance(&rm, &ra, &ru, &m, &u)
        })
        .collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let pass = orders.iter().all(|&o| o >= 1.7);
    (
        pass,
        format!(
            "L2 errors {:.2e}, {:.2e}, {:.2e} at h = {h0}, h/2, h/4; orders {:.2}, {:.2}; need >= 1.7",
            errs[0], errs[1], errs[2], orders[0], orders[1]
        ),
    )
}

/// Shared Darcy data of criteria 4 to 6: default configuration, one set of
/// high-fidelity solves reused by every extension variant.
struct DarcyRun {
    cfg: RunConfig,
    setup: DarcySetup,
    train: Vec<cutrom::pipeline::DarcyHf>,
    test: Vec<cutrom::pipeline::DarcyHf>,
    l2: L2Product,
}

impl DarcyRun {
    fn new(gamma_d: f64) -> Self {
        let cfg = RunConfig {
            gamma_d,
            ..RunConfig::for_case(Case::DarcyEllipse)
        };
        let setup = DarcySetup::new(&cfg).unwrap();
        let space = setup.parameter_space().clone();
        let train = darcy_hf(&setup, &sample_parameters(&space, cfg.train, cfg.seed, Stream::Train)).unwrap();
        let test = darcy_hf(&setup, &sample_parameters(&space, cfg.test, cfg.seed, Stream::Test)).unwrap();
        let l2 = L2Product::new(&setup.mesh);
        Self {
            cfg,
            setup,
            train,
            test,
            l2,
        }
    }

    fn basis(&self, extension: ExtensionMode, transported: bool, n: usize) -> ReducedBasis {
        let set = darcy_snapshots(&self.setup, &self.train, extension, transported).unwrap();
        compress(&set, n, &self.l2).unwrap()
    }

    fn mean_error(&self, basis: &ReducedBasis, n: usize) -> f64 {
        darcy_error_curve(&self.setup, basis, &self.test, &[n]).unwrap()[0]
    }
}

fn normalized_at(basis: &ReducedBasis, n: usize) -> f64 {
    basis.normalized_eigenvalues()[n - 1]
}

fn criterion_4_5(run: &DarcyRun) -> (Outcome, Outcome, f64) {
    let n5 = 140;
    let zero = run.basis(ExtensionMode::Zero, false, n5);
    let natural = run.basis(ExtensionMode::Natural, false, n5);
    let harmonic = run.basis(ExtensionMode::Harmonic, false, n5);
    let transported = run.basis(ExtensionMode::Natural, true, n5);

    let tail = normalized_at(&transported, 300);
    let t100 = normalized_at(&transported, 100);
    let ext100: Vec<f64> = [&zero, &natural, &harmonic].iter().map(|b| normalized_at(b, 100)).collect();
    let min_ratio = ext100.iter().map(|e| e / t100.abs().max(f64::MIN_POSITIVE)).fold(f64::INFINITY, f64::min);
    let c4 = (
        tail < 1e-12 && min_ratio >= 100.0,
        format!(
            "transported lambda_300/lambda_1 = {tail:.2e} (need < 1e-12); at N=100 zero/natural/harmonic {:.2e}/{:.2e}/{:.2e} vs transported {t100:.2e}, smallest ratio {min_ratio:.2e} (need >= 100)",
            ext100[0], ext100[1], ext100[2]
        ),
    );

    let ez = run.mean_error(&zero, n5);
    let en = run.mean_error(&natural, n5);
    let et = run.mean_error(&transported, n5);
    let inside = |e: f64, lo: f64, hi: f64| (lo..=hi).contains(&e);
    let c5 = (
        inside(ez, 3e-2, 3e-1) && inside(en, 3e-3, 3e-2) && inside(et, 1e-5, 1e-3),
        format!(
            "N=140 mean errors: zero {ez:.2e} in [3e-2, 3e-1]: {}, natural {en:.2e} in [3e-3, 3e-2]: {}, transported natural {et:.2e} in [1e-5, 1e-3]: {}",
            yes(inside(ez, 3e-2, 3e-1)),
            yes(inside(en, 3e-3, 3e-2)),
            yes(inside(et, 1e-5, 1e-3))
        ),
    );
    let e10 = run.mean_error(&natural, 120);
    (c4, c5, e10)
}

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn criterion_6(e10: f64) -> Outcome {
    let run8 = DarcyRun::new(8.0);
    let b8 = run8.basis(ExtensionMode::Natural, false, 120);
    let e8 = run8.mean_error(&b8, 120);
    let within = |e: f64, target: f64| e <= 3.0 * target && e >= target / 3.0;
    let pass = e8 < e10 && within(e8, 0.0056) && within(e10, 0.0112);
    (
        pass,
        format!(
            "M={} N=120 natural, no transport: gamma_D=8 {e8:.3e}, gamma_D=10 {e10:.3e}; need e8 < e10 ({}), e8 within x3 of 0.0056 ({}), e10 within x3 of 0.0112 ({})",
            run8.cfg.train,
            yes(e8 < e10),
            yes(within(e8, 0.0056)),
            yes(within(e10, 0.0112))
        ),
    )
}

fn criterion_7() -> Outcome {
    let setup = StokesSetup::new(&RunConfig::for_case(Case::StokesCylinder)).unwrap();
    let hf = stokes_hf_one(&setup, &[0.0], false).unwrap();
    let mesh = &setup.mesh;
    let nv = mesh.num_vertices();
    let (vel, p) = hf.background(mesh);
    let key = |q: [f64; 2]| ((q[0] * 1e9).round() as i64, (q[1] * 1e9).round() as i64);
    let index: HashMap<_, _> = mesh.vertices().iter().enumerate().map(|(i, &q)| (key(q), i)).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for (v, &q) in mesh.vertices().iter().enumerate() {
        let m = index[&key([q[0], -q[1]])];
        num += (vel[v] - vel[m]).powi(2) + (vel[nv + v] + vel[nv + m]).powi(2) + (p[v] - p[m]).powi(2);
        den += vel[v].powi(2) + vel[nv + v].powi(2) + p[v].powi(2);
    }
    let sym = (num / den).sqrt();
    let inflow = -edge_flux(mesh, &hf.active, &hf.velocity, Side::Left);
    let outflow = edge_flux(mesh, &hf.active, &hf.velocity, Side::Right);
    let balance = (inflow - outflow).abs() / inflow.abs();
    (
        sym <= 1e-6 && balance <= 0.01,
        format!("mirror residual {sym:.2e} (need <= 1e-6); inflow {inflow:.6}, outflow {outflow:.6}, imbalance {balance:.2e} (need <= 1e-2)"),
    )
}

fn criterion_8() -> Outcome {
    let cfg = RunConfig {
        train: 150,
        test: 30,
        ..RunConfig::for_case(Case::StokesCylinder)
    };
    let setup = StokesSetup::new(&cfg).unwrap();
    let space = setup.parameter_space().clone();
    let train = stokes_hf(&setup, &sample_parameters(&space, cfg.train, cfg.seed, Stream::Train), true).unwrap();
    let test = stokes_hf(&setup, &sample_parameters(&space, cfg.test, cfg.seed, Stream::Test), false).unwrap();
    let l2 = L2Product::new(&setup.mesh);
    let grid: Vec<usize> = (1..=10).map(|k| 5 * k).collect();
    let curve = |transported: bool| {
        let snaps = stokes_snapshots(&setup, &train, cfg.extension, transported, None).unwrap();
        let bases = stokes_compress(&snaps, cfg.n_max, &l2).unwrap();
        stokes_error_curve(&setup, &bases, None, &test, &grid).unwrap()
    };
    let with = curve(true);
    let without = curve(false);
    let worst = with.iter().flat_map(|e| e.iter()).fold(0.0f64, |a, &b| a.max(b));
    let at = |c: &[[f64; 2]], n: usize| c[grid.iter().position(|&g| g == n).unwrap()];
    let (e10, e50) = (at(&with, 10), at(&with, 50));
    let plateau = (0..2).all(|f| e10[f] <= 3.0 * e50[f]);
    let ratio = at(&without, 50)[1] / e50[1];
    let pass = worst <= 5e-2 && plateau && ratio >= 3.0;
    (
        pass,
        format!(
            "M=150, 30 tests. Transported: max error for N >= 5 {worst:.2e} (need <= 5e-2); N=10 u/p {:.2e}/{:.2e}, N=50 u/p {:.2e}/{:.2e}, ratios {:.2}/{:.2} (need <= 3); untransported pressure at N=50 {:.2e}, x{ratio:.2} worse (need >= 3)",
            e10[0],
            e10[1],
            e50[0],
            e50[1],
            e10[0] / e50[0],
            e10[1] / e50[1],
            at(&without, 50)[1]
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    let mut check = |name: &str, ok: bool, value: String| {
        pass &= ok;
        notes.push(format!("{name} {value}{}", if ok { "" } else { " FAILED" }));
    };

    let mesh = BackgroundMesh::structured(darcy_box(), 0.1).unwrap();
    let problem = DarcyProblem::ellipse(0.3, Penalties::default());
    let ctx = ExtensionContext {
        mesh: &mesh,
        domain: &problem.domain,
        penalties: problem.penalties,
    };
    let active = classify_with(&mesh, &problem.domain, &[1.3, 0.7, 0.1, -0.2], 4).unwrap();
    let n = active.num_dofs();
    let f: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
    let g: Vec<f64> = (0..n).map(|i| (i as f64 * 1.1).cos()).collect();
    let combo: Vec<f64> = f.iter().zip(&g).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
    let mut lin: f64 = 0.0;
    for mode in [ExtensionMode::Zero, ExtensionMode::Natural, ExtensionMode::Harmonic] {
        let (ef, eg, ec) = (
            extend(ctx, &active, &f, 1, mode).unwrap(),
            extend(ctx, &active, &g, 1, mode).unwrap(),
            extend(ctx, &active, &combo, 1, mode).unwrap(),
        );
        for i in 0..ec.len() {
            lin = lin.max((ec[i] - 2.0 * ef[i] + 0.5 * eg[i]).abs());
        }
    }
    check("extension linearity", lin <= 1e-10, format!("{lin:.1e}"));

    let mut trip: f64 = 0.0;
    let (em, cm) = (ellipse_transport(), cylinder_transport());
    for k in 0..200 {
        let s = k as f64 / 200.0;
        let mu = [0.3 + 1.5 * s, 1.8 - 1.5 * s, -0.85 + 1.7 * s, 0.85 - 1.7 * (s * 7.0).fract()];
        let p = [2.4 * (s * 3.0).fract() - 1.2, 2.4 * (s * 5.0).fract() - 1.2];
        let q = em.inverse(em.forward(p, &mu), &mu);
        trip = trip.max((q[0] - p[0]).abs().max((q[1] - p[1]).abs()));
        let c = [-0.5 + s];
        let p = [4.0 * s - 2.0, 2.0 * (s * 3.0).fract() - 1.0];
        let q = cm.inverse(cm.forward(p, &c), &c);
        trip = trip.max((q[0] - p[0]).abs().max((q[1] - p[1]).abs()));
    }
    check("transport round trip", trip <= 1e-10, format!("{trip:.1e}"));

    let l2 = L2Product::new(&mesh);
    let mut set = SnapshotSet::new(FieldKind::Scalar, ExtensionMode::Natural, None);
    for k in 0..8 {
        let field: Vec<f64> = mesh
            .vertices()
            .iter()
            .map(|p| ((k + 1) as f64 * p[0]).sin() * (p[1] * (k as f64 + 0.5)).cos() * 0.6f64.powi(k))
            .collect();
        set.push(field, vec![k as f64]).unwrap();
    }
    let basis = compress(&set, 5, &l2).unwrap();
    let mut ortho: f64 = 0.0;
    for (i, a) in basis.modes.iter().enumerate() {
        for (j, b) in basis.modes.iter().enumerate() {
            ortho = ortho.max((l2.inner(a, b) - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    check("POD orthonormality", ortho <= 1e-8, format!("{ortho:.1e}"));

    let proj: f64 = set
        .fields
        .iter()
        .map(|s| {
            let mut r = s.clone();
            for phi in &basis.modes {
                let c = l2.inner(s, phi);
                r.iter_mut().zip(phi).for_each(|(x, p)| *x -= c * p);
            }
            l2.inner(&r, &r)
        })
        .sum();
    let tail: f64 = basis.eigenvalues[basis.len()..].iter().sum();
    let rel = (proj - tail).abs() / tail;
    check("projection identity", rel <= 1e-6, format!("{rel:.1e}"));

    let dir = tempfile::tempdir().unwrap();
    let mut weird = SnapshotSet::new(FieldKind::Scalar, ExtensionMode::Zero, Some(vec![0.1, 1.0 / 3.0]));
    weird
        .push(
            vec![f64::NAN, -0.0, f64::MIN_POSITIVE / 7.0, f64::INFINITY, 1.0 / 3.0, 1e308],
            vec![0.1 + 0.2, -1e-300],
        )
        .unwrap();
    weird.save(&dir.path().join("p")).unwrap();
    let back = SnapshotSet::load(&dir.path().join("p")).unwrap();
    let bits = |s: &SnapshotSet| {
        (
            s.fields.concat().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            s.parameters.concat().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        )
    };
    check("persistence", bits(&back) == bits(&weird), "bit-exact".into());

    let run = |name: &str| {
        let cfg = RunConfig {
            mesh_h: 0.1,
            train: 6,
            test: 3,
            n_max: 3,
            seed: 9,
            output_dir: dir.path().join(name),
            ..RunConfig::for_case(Case::DarcyEllipse)
        };
        run_offline(&cfg).unwrap();
        run_errors(&cfg, &cfg.output_dir).unwrap();
        let read = |f: &str| fs::read(cfg.output_dir.join(f)).unwrap();
        (read("basis/manifest.json"), read("eigenvalues.csv"), read("errors.csv"))
    };
    check("pipeline determinism", run("a") == run("b"), "byte-identical".into());
    (pass, notes.join("; "))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |k: usize| selected.is_empty() || selected.contains(&k);
    let mut results: Vec<(usize, Outcome, f64)> = Vec::new();
    let mut record = |k: usize, start: Instant, o: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {k}: {} ({secs:.1} s) {}", if o.0 { "PASS" } else { "FAIL" }, o.1);
        results.push((k, o, secs));
    };

    for (k, f) in [(1, criterion_1 as fn() -> Outcome), (2, criterion_2), (3, criterion_3)] {
        if want(k) {
            let t = Instant::now();
            record(k, t, f());
        }
    }
    if want(4) || want(5) || want(6) {
        let t = Instant::now();
        let run = DarcyRun::new(10.0);
        let (c4, c5, e10) = criterion_4_5(&run);
        if want(4) {
            record(4, t, c4);
        }
        if want(5) {
            record(5, t, c5);
        }
        if want(6) {
            let t = Instant::now();
            record(6, t, criterion_6(e10));
        }
    }
    for (k, f) in [(7, criterion_7 as fn() -> Outcome), (8, criterion_8), (9, criterion_9)] {
        if want(k) {
            let t = Instant::now();
            record(k, t, f());
        }
    }

    let failed: Vec<usize> = results.iter().filter(|r| !r.1 .0).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

//! Offline and online pipelines of the two test cases, with CSV output.
//!
//! Parameters are drawn with xoshiro256++ seeded through SplitMix64
//! (`seed_from_u64`). Each coordinate takes one `next_u64` draw mapped to
//! `[0, 1)` as `(x >> 11) * 2^-53`, then scaled to the parameter box. The
//! test stream is the same generator advanced by `jump()` (2^128 steps), so
//! training and test samples never overlap.

use std::fs;
use std::path::{Path, PathBuf};

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::darcy::{self, DarcyProblem, Penalties};
use crate::error::{Error, Result};
use crate::geometry::{classify_with, cylinder_transport, ellipse_transport, ActiveMesh, ParameterBox, TransportMap};
use crate::mesh::{BackgroundMesh, DiagonalPattern, Rect};
use crate::pod::{compress, L2Product, ReducedBasis};
use crate::rom::{relative_error, DarcyQuery, Lifting, RomSolution, StokesBases, StokesQuery};
use crate::snapshot::{extend, ExtensionContext, ExtensionMode, FieldKind, SnapshotSet, TransportStencil, Direction};
use crate::stokes::{solve_stokes, solve_supremizer, PressureFaces, PressureSign, StokesPenalties, StokesProblem};

pub const ELLIPSE_RADIUS: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    #[default]
    DarcyEllipse,
    StokesCylinder,
}

impl std::str::FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "darcy-ellipse" => Ok(Case::DarcyEllipse),
            "stokes-cylinder" => Ok(Case::StokesCylinder),
            _ => Err(Error::InvalidArgument(format!("unknown case '{s}'"))),
        }
    }
}

/// Settings of one run. Missing JSON keys take the defaults of the case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub case: Case,
    pub mesh_h: f64,
    pub train: usize,
    pub test: usize,
    pub n_max: usize,
    pub extension: ExtensionMode,
    pub transport: bool,
    pub gamma_d: f64,
    pub gamma_n: f64,
    pub gamma_1: f64,
    pub gamma_1u: f64,
    pub gamma_1p: f64,
    pub paper_faces: bool,
    /// Subtract the pressure jump penalty instead of adding it.
    pub literal_pressure_sign: bool,
    pub lifting: bool,
    pub seed: u64,
    pub workers: Option<usize>,
    pub subdivision: usize,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn for_case(case: Case) -> Self {
        let (mesh_h, train, test, n_max) = match case {
            Case::DarcyEllipse => (0.05, 400, 30, 140),
            Case::StokesCylinder => (0.035, 600, 100, 50),
        };
        Self {
            case,
            mesh_h,
            train,
            test,
            n_max,
            extension: ExtensionMode::Natural,
            transport: true,
            gamma_d: 10.0,
            gamma_n: 0.0,
            gamma_1: 0.1,
            gamma_1u: 0.1,
            gamma_1p: 0.1,
            paper_faces: false,
            literal_pressure_sign: false,
            lifting: false,
            seed: 1,
            workers: None,
            subdivision: crate::geometry::DEFAULT_SUBDIVISION,
            output_dir: PathBuf::from("out"),
        }
    }

    /// Parse JSON, filling missing keys from the defaults of its case.
    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::InvalidArgument(format!("bad config: {e}"));
        let user: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
        let obj = user
            .as_object()
            .ok_or_else(|| Error::InvalidArgument("config must be a JSON object".into()))?;
        let case: Case = match obj.get("case") {
            Some(v) => serde_json::from_value(v.clone()).map_err(bad)?,
            None => Case::default(),
        };
        let mut merged = serde_json::to_value(Self::for_case(case)).expect("config serializes");
        let target = merged.as_object_mut().expect("object");
        for (k, v) in obj {
            if !target.contains_key(k) {
                return Err(Error::InvalidArgument(format!("unknown config key '{k}'")));
            }
            target.insert(k.clone(), v.clone());
        }
        serde_json::from_value(merged).map_err(bad)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes") + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mesh_h > 0.0) {
            return Err(Error::InvalidArgument("mesh_h must be positive".into()));
        }
        if self.n_max == 0 || self.train < self.n_max {
            return Err(Error::InvalidArgument(format!(
                "need train >= n_max >= 1, got train {} and n_max {}",
                self.train, self.n_max
            )));
        }
        if self.subdivision == 0 {
            return Err(Error::InvalidArgument("subdivision must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn darcy_penalties(&self) -> Penalties {
        Penalties {
            gamma_d: self.gamma_d,
            gamma_n: self.gamma_n,
            gamma_1: self.gamma_1,
        }
    }

    pub fn stokes_penalties(&self) -> StokesPenalties {
        StokesPenalties {
            gamma_d: self.gamma_d,
            gamma_1u: self.gamma_1u,
            gamma_1p: self.gamma_1p,
        }
    }

    pub fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.workers {
            b = b.num_threads(w);
        }
        b.build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Train,
    Test,
}

fn unit_interval(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform samples of the parameter box.
pub fn sample_parameters(space: &ParameterBox, count: usize, seed: u64, stream: Stream) -> Vec<Vec<f64>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    if stream == Stream::Test {
        rng.jump();
    }
    (0..count)
        .map(|_| {
            let u: Vec<f64> = (0..space.dim()).map(|_| unit_interval(rng.next_u64())).collect();
            space.scale(&u)
        })
        .collect()
}

/// Grid of basis sizes `1, 5, 10, ...` up to and including `n_max`.
pub fn n_grid(n_max: usize) -> Vec<usize> {
    let mut g = vec![1];
    g.extend((5..=n_max).step_by(5));
    if *g.last().expect("nonempty") != n_max {
        g.push(n_max);
    }
    g.dedup();
    g
}

fn wrap(mu: &[f64]) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        e @ Error::Solve { .. } => e,
        e => Error::Solve {
            parameter: mu.to_vec(),
            source: Box::new(e),
        },
    }
}

/// Mesh, problem and transport of the Darcy case.
#[derive(Clone, Debug)]
pub struct DarcySetup {
    pub mesh: BackgroundMesh,
    pub problem: DarcyProblem,
    pub transport: TransportMap,
    pub subdivision: usize,
}

impl DarcySetup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let mesh = BackgroundMesh::structured(Rect::new([-1.2, -1.2], [1.2, 1.2]), cfg.mesh_h)?;
        Ok(Self {
            mesh,
            problem: DarcyProblem::ellipse(ELLIPSE_RADIUS, cfg.darcy_penalties()),
            transport: ellipse_transport(),
            subdivision: cfg.subdivision,
        })
    }

    pub fn parameter_space(&self) -> &ParameterBox {
        self.problem.domain.parameter_space()
    }

    fn context(&self) -> ExtensionContext<'_> {
        ExtensionContext {
            mesh: &self.mesh,
            domain: &self.problem.domain,
            penalties: self.problem.penalties,
        }
    }
}

/// High-fidelity solution on its active mesh.
#[derive(Clone, Debug)]
pub struct DarcyHf {
    pub active: ActiveMesh,
    pub values: Vec<f64>,
}

impl DarcyHf {
    pub fn background(&self, mesh: &BackgroundMesh) -> Vec<f64> {
        self.active.to_background(&self.values, 1, mesh.num_vertices())
    }
}

pub fn darcy_hf_one(setup: &DarcySetup, mu: &[f64]) -> Result<DarcyHf> {
    setup.parameter_space().check(mu)?;
    let run = || -> Result<DarcyHf> {
        let active = classify_with(&setup.mesh, &setup.problem.domain, mu, setup.subdivision)?;
        let u = darcy::solve(&setup.problem, &setup.mesh, &active)?;
        Ok(DarcyHf {
            active,
            values: u.values,
        })
    };
    run().map_err(wrap(mu))
}

pub fn darcy_hf(setup: &DarcySetup, params: &[Vec<f64>]) -> Result<Vec<DarcyHf>> {
    params.par_iter().map(|mu| darcy_hf_one(setup, mu)).collect()
}

fn transport_forward(mesh: &BackgroundMesh, map: &TransportMap, mu: &[f64], field: &[f64], comps: usize) -> Vec<f64> {
    TransportStencil::new(mesh, map, mu, Direction::Forward).apply(field, comps)
}

/// Extended and optionally transported Darcy snapshots.
pub fn darcy_snapshots(setup: &DarcySetup, hf: &[DarcyHf], extension: ExtensionMode, transported: bool) -> Result<SnapshotSet> {
    let fields: Vec<Result<Vec<f64>>> = hf
        .par_iter()
        .map(|s| {
            let mu = s.active.parameter();
            let ext = extend(setup.context(), &s.active, &s.values, 1, extension).map_err(wrap(mu))?;
            Ok(if transported {
                transport_forward(&setup.mesh, &setup.transport, mu, &ext, 1)
            } else {
                ext
            })
        })
        .collect();
    let reference = transported.then(|| setup.transport.reference().to_vec());
    let mut set = SnapshotSet::new(FieldKind::Scalar, extension, reference);
    for (f, s) in fields.into_iter().zip(hf) {
        set.push(f?, s.active.parameter().to_vec())?;
    }
    Ok(set)
}

/// Mean relative L2 error over the test solutions for each basis size.
pub fn darcy_error_curve(setup: &DarcySetup, basis: &ReducedBasis, tests: &[DarcyHf], grid: &[usize]) -> Result<Vec<f64>> {
    let per_test: Vec<Result<Vec<f64>>> = tests
        .par_iter()
        .map(|t| {
            let mu = t.active.parameter();
            let q = DarcyQuery::with_subdivision(
                &setup.mesh,
                &setup.problem,
                basis,
                Some(&setup.transport),
                mu,
                setup.subdivision,
            )?;
            let hf = t.background(&setup.mesh);
            grid.iter()
                .map(|&n| {
                    let rom = q.solve(n)?;
                    relative_error(&setup.mesh, &t.active, &hf, &rom.fields[0], 1)
                })
                .collect()
        })
        .collect();
    mean_rows(per_test, grid.len())
}

fn mean_rows(rows: Vec<Result<Vec<f64>>>, width: usize) -> Result<Vec<f64>> {
    let count = rows.len();
    let mut sum = vec![0.0; width];
    for r in rows {
        for (s, v) in sum.iter_mut().zip(r?) {
            *s += v;
        }
    }
    Ok(sum.into_iter().map(|s| s / count.max(1) as f64).collect())
}

/// Mesh, problem and transport of the Stokes case.
#[derive(Clone, Debug)]
pub struct StokesSetup {
    pub mesh: BackgroundMesh,
    pub problem: StokesProblem,
    pub transport: TransportMap,
    pub subdivision: usize,
}

impl StokesSetup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let mesh = BackgroundMesh::structured_with(
            Rect::new([-2.0, -1.0], [2.0, 1.0]),
            cfg.mesh_h,
            DiagonalPattern::MirrorY,
        )?;
        let mut problem = StokesProblem::cylinder(cfg.stokes_penalties());
        if cfg.paper_faces {
            problem.pressure_faces = PressureFaces::Ghost;
        }
        if cfg.literal_pressure_sign {
            problem.pressure_sign = PressureSign::Minus;
        }
        Ok(Self {
            mesh,
            problem,
            transport: cylinder_transport(),
            subdivision: cfg.subdivision,
        })
    }

    pub fn parameter_space(&self) -> &ParameterBox {
        self.problem.domain.parameter_space()
    }

    fn context(&self) -> ExtensionContext<'_> {
        ExtensionContext {
            mesh: &self.mesh,
            domain: &self.problem.domain,
            penalties: Penalties {
                gamma_d: self.problem.penalties.gamma_d,
                gamma_n: 0.0,
                gamma_1: self.problem.penalties.gamma_1u,
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct StokesHf {
    pub active: ActiveMesh,
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    pub supremizer: Vec<f64>,
}

impl StokesHf {
    pub fn background(&self, mesh: &BackgroundMesh) -> (Vec<f64>, Vec<f64>) {
        let nv = mesh.num_vertices();
        (
            self.active.to_background(&self.velocity, 2, nv),
            self.active.to_background(&self.pressure, 1, nv),
        )
    }
}

pub fn stokes_hf_one(setup: &StokesSetup, mu: &[f64], with_supremizer: bool) -> Result<StokesHf> {
    setup.parameter_space().check(mu)?;
    let run = || -> Result<StokesHf> {
        let active = classify_with(&setup.mesh, &setup.problem.domain, mu, setup.subdivision)?;
        let s = solve_stokes(&setup.problem, &setup.mesh, &active)?;
        let supremizer = if with_supremizer {
            solve_supremizer(&setup.problem, &s.pressure, &setup.mesh, &active)?
        } else {
            Vec::new()
        };
        Ok(StokesHf {
            active,
            velocity: s.velocity,
            pressure: s.pressure,
            supremizer,
        })
    };
    run().map_err(wrap(mu))
}

pub fn stokes_hf(setup: &StokesSetup, params: &[Vec<f64>], with_supremizer: bool) -> Result<Vec<StokesHf>> {
    params.par_iter().map(|mu| stokes_hf_one(setup, mu, with_supremizer)).collect()
}

/// High-fidelity solution at the reference parameter, extended.
pub fn stokes_lifting(setup: &StokesSetup, extension: ExtensionMode) -> Result<Lifting> {
    let mu = setup.transport.reference().to_vec();
    let hf = stokes_hf_one(setup, &mu, false)?;
    Ok(Lifting {
        velocity: extend(setup.context(), &hf.active, &hf.velocity, 2, extension)?,
        pressure: extend(setup.context(), &hf.active, &hf.pressure, 1, extension)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StokesSnapshots {
    pub velocity: SnapshotSet,
    pub pressure: SnapshotSet,
    pub supremizer: SnapshotSet,
}

pub fn stokes_snapshots(
    setup: &StokesSetup,
    hf: &[StokesHf],
    extension: ExtensionMode,
    transported: bool,
    lifting: Option<&Lifting>,
) -> Result<StokesSnapshots> {
    let fields: Vec<Result<[Vec<f64>; 3]>> = hf
        .par_iter()
        .map(|s| {
            let mu = s.active.parameter();
            let go = |values: &[f64], comps: usize| -> Result<Vec<f64>> {
                let e = extend(setup.context(), &s.active, values, comps, extension).map_err(wrap(mu))?;
                Ok(if transported {
                    transport_forward(&setup.mesh, &setup.transport, mu, &e, comps)
                } else {
                    e
                })
            };
            let mut v = go(&s.velocity, 2)?;
            let mut p = go(&s.pressure, 1)?;
            let sup = go(&s.supremizer, 2)?;
            if let Some(l) = lifting {
                for (x, y) in v.iter_mut().zip(&l.velocity) {
                    *x -= y;
                }
                for (x, y) in p.iter_mut().zip(&l.pressure) {
                    *x -= y;
                }
            }
            Ok([v, p, sup])
        })
        .collect();
    let reference = transported.then(|| setup.transport.reference().to_vec());
    let mut out = StokesSnapshots {
        velocity: SnapshotSet::new(FieldKind::Velocity, extension, reference.clone()),
        pressure: SnapshotSet::new(FieldKind::Pressure, extension, reference.clone()),
        supremizer: SnapshotSet::new(FieldKind::Supremizer, extension, reference),
    };
    for (f, s) in fields.into_iter().zip(hf) {
        let [v, p, sup] = f?;
        let mu = s.active.parameter().to_vec();
        out.velocity.push(v, mu.clone())?;
        out.pressure.push(p, mu.clone())?;
        out.supremizer.push(sup, mu)?;
    }
    Ok(out)
}

/// Velocity, supremizer and pressure bases.
#[derive(Clone, Debug, PartialEq)]
pub struct StokesBasisSet {
    pub velocity: ReducedBasis,
    pub supremizer: ReducedBasis,
    pub pressure: ReducedBasis,
}

impl StokesBasisSet {
    pub fn bases(&self) -> StokesBases<'_> {
        StokesBases {
            velocity: &self.velocity,
            supremizer: &self.supremizer,
            pressure: &self.pressure,
        }
    }
}

pub fn stokes_compress(snaps: &StokesSnapshots, n: usize, l2: &L2Product) -> Result<StokesBasisSet> {
    Ok(StokesBasisSet {
        velocity: compress(&snaps.velocity, n, l2)?,
        supremizer: compress(&snaps.supremizer, n, l2)?,
        pressure: compress(&snaps.pressure, n, l2)?,
    })
}

/// Mean velocity and pressure relative errors for each basis size.
pub fn stokes_error_curve(
    setup: &StokesSetup,
    bases: &StokesBasisSet,
    lifting: Option<&Lifting>,
    tests: &[StokesHf],
    grid: &[usize],
) -> Result<Vec<[f64; 2]>> {
    let per_test: Vec<Result<Vec<f64>>> = tests
        .par_iter()
        .map(|t| {
            let mu = t.active.parameter();
            let q = StokesQuery::new(&setup.mesh, &setup.problem, &bases.bases(), Some(&setup.transport), lifting, mu)?;
            let (hv, hp) = t.background(&setup.mesh);
            let mut row = Vec::with_capacity(2 * grid.len());
            for &n in grid {
                let rom = q.solve(n)?;
                row.push(relative_error(&setup.mesh, &t.active, &hv, &rom.fields[0], 2)?);
                row.push(relative_error(&setup.mesh, &t.active, &hp, &rom.fields[1], 1)?);
            }
            Ok(row)
        })
        .collect();
    let flat = mean_rows(per_test, 2 * grid.len())?;
    Ok(flat.chunks(2).map(|c| [c[0], c[1]]).collect())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

/// `index,lambda,lambda_normalized` with 1-based indices.
pub fn write_eigenvalues(path: &Path, eigenvalues: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["index", "lambda", "lambda_normalized"])?;
    let first = eigenvalues.first().copied().unwrap_or(0.0);
    for (i, &l) in eigenvalues.iter().enumerate() {
        let norm = if first > 0.0 { l / first } else { 0.0 };
        w.write_record([(i + 1).to_string(), fmt(l), fmt(norm)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const DARCY_BASIS: &str = "basis";
const DARCY_SNAPSHOTS: &str = "snapshots";

fn stokes_dirs(field: &str) -> (String, String) {
    (format!("snapshots_{field}"), format!("basis_{field}"))
}

/// Files written by an offline run.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineSummary {
    pub output_dir: PathBuf,
    pub snapshots: usize,
    /// Retained modes per basis, in the order the bases were written.
    pub modes: Vec<(String, usize)>,
}

pub fn run_offline(cfg: &RunConfig) -> Result<OfflineSummary> {
    cfg.validate()?;
    let pool = cfg.pool()?;
    pool.install(|| offline_in_pool(cfg))
}

fn offline_in_pool(cfg: &RunConfig) -> Result<OfflineSummary> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    cfg.save(&dir.join("config.json"))?;
    match cfg.case {
        Case::DarcyEllipse => {
            let setup = DarcySetup::new(cfg)?;
            let params = sample_parameters(setup.parameter_space(), cfg.train, cfg.seed, Stream::Train);
            let hf = darcy_hf(&setup, &params)?;
            let set = darcy_snapshots(&setup, &hf, cfg.extension, cfg.transport)?;
            set.save(&dir.join(DARCY_SNAPSHOTS))?;
            let basis = compress(&set, cfg.n_max, &L2Product::new(&setup.mesh))?;
            basis.save(&dir.join(DARCY_BASIS))?;
            write_eigenvalues(&dir.join("eigenvalues.csv"), &basis.eigenvalues)?;
            Ok(OfflineSummary {
                output_dir: dir.clone(),
                snapshots: set.len(),
                modes: vec![("scalar".into(), basis.len())],
            })
        }
        Case::StokesCylinder => {
            let setup = StokesSetup::new(cfg)?;
            let params = sample_parameters(setup.parameter_space(), cfg.train, cfg.seed, Stream::Train);
            let hf = stokes_hf(&setup, &params, true)?;
            let lifting = if cfg.lifting {
                let l = stokes_lifting(&setup, cfg.extension)?;
                save_lifting(dir, &l, cfg.extension, setup.transport.reference())?;
                Some(l)
            } else {
                None
            };
            let snaps = stokes_snapshots(&setup, &hf, cfg.extension, cfg.transport, lifting.as_ref())?;
            let bases = stokes_compress(&snaps, cfg.n_max, &L2Product::new(&setup.mesh))?;
            let mut modes = Vec::new();
            for (set, basis) in [
                (&snaps.velocity, &bases.velocity),
                (&snaps.pressure, &bases.pressure),
                (&snaps.supremizer, &bases.supremizer),
            ] {
                let name = set.kind.name();
                let (sd, bd) = stokes_dirs(name);
                set.save(&dir.join(sd))?;
                basis.save(&dir.join(bd))?;
                write_eigenvalues(&dir.join(format!("eigenvalues_{name}.csv")), &basis.eigenvalues)?;
                modes.push((name.to_string(), basis.len()));
            }
            Ok(OfflineSummary {
                output_dir: dir.clone(),
                snapshots: snaps.velocity.len(),
                modes,
            })
        }
    }
}

fn save_lifting(dir: &Path, l: &Lifting, extension: ExtensionMode, reference: &[f64]) -> Result<()> {
    let mut v = SnapshotSet::new(FieldKind::Velocity, extension, None);
    v.push(l.velocity.clone(), reference.to_vec())?;
    v.save(&dir.join("lifting_velocity"))?;
    let mut p = SnapshotSet::new(FieldKind::Pressure, extension, None);
    p.push(l.pressure.clone(), reference.to_vec())?;
    p.save(&dir.join("lifting_pressure"))
}

fn load_lifting(dir: &Path) -> Result<Lifting> {
    let v = SnapshotSet::load(&dir.join("lifting_velocity"))?;
    let p = SnapshotSet::load(&dir.join("lifting_pressure"))?;
    Ok(Lifting {
        velocity: v.fields.into_iter().next().expect("one field"),
        pressure: p.fields.into_iter().next().expect("one field"),
    })
}

fn load_stokes_bases(dir: &Path) -> Result<StokesBasisSet> {
    let load = |name: &str| ReducedBasis::load(&dir.join(stokes_dirs(name).1));
    Ok(StokesBasisSet {
        velocity: load("velocity")?,
        supremizer: load("supremizer")?,
        pressure: load("pressure")?,
    })
}

fn check_arity(space: &ParameterBox, mu: &[f64]) -> Result<()> {
    if mu.len() != space.dim() {
        return Err(Error::InvalidArgument(format!(
            "expected {} parameter values, got {}",
            space.dim(),
            mu.len()
        )));
    }
    space.check(mu)
}

/// Online query against the bases of an offline run directory. Writes
/// `solution.csv` and `coefficients.csv` into `out`.
pub fn run_online(run_dir: &Path, mu: &[f64], n: Option<usize>, out: &Path) -> Result<RomSolution> {
    let cfg = RunConfig::load(&run_dir.join("config.json"))?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (mesh, sol) = match cfg.case {
        Case::DarcyEllipse => {
            let setup = DarcySetup::new(&cfg)?;
            check_arity(setup.parameter_space(), mu)?;
            let basis = ReducedBasis::load(&run_dir.join(DARCY_BASIS))?;
            let q = DarcyQuery::with_subdivision(
                &setup.mesh,
                &setup.problem,
                &basis,
                Some(&setup.transport),
                mu,
                setup.subdivision,
            )?;
            let sol = q.solve(n.unwrap_or(basis.len()))?;
            (setup.mesh, sol)
        }
        Case::StokesCylinder => {
            let setup = StokesSetup::new(&cfg)?;
            check_arity(setup.parameter_space(), mu)?;
            let bases = load_stokes_bases(run_dir)?;
            let lifting = if cfg.lifting { Some(load_lifting(run_dir)?) } else { None };
            let q = StokesQuery::new(
                &setup.mesh,
                &setup.problem,
                &bases.bases(),
                Some(&setup.transport),
                lifting.as_ref(),
                mu,
            )?;
            let sol = q.solve(n.unwrap_or(q.max_size()))?;
            (setup.mesh, sol)
        }
    };
    write_nodal(&out.join("solution.csv"), &mesh, &sol.fields, cfg.case)?;
    let rows: Vec<Vec<String>> = sol
        .coefficients
        .iter()
        .enumerate()
        .map(|(i, a)| vec![(i + 1).to_string(), fmt(*a)])
        .collect();
    write_table(&out.join("coefficients.csv"), &["index", "alpha"], &rows)?;
    Ok(sol)
}

fn write_nodal(path: &Path, mesh: &BackgroundMesh, fields: &[Vec<f64>], case: Case) -> Result<()> {
    let nv = mesh.num_vertices();
    let header: &[&str] = match case {
        Case::DarcyEllipse => &["x", "y", "value"],
        Case::StokesCylinder => &["x", "y", "u1", "u2", "p"],
    };
    let rows: Vec<Vec<String>> = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(v, p)| {
            let mut r = vec![fmt(p[0]), fmt(p[1])];
            for f in fields {
                let comps = f.len() / nv;
                for c in 0..comps {
                    r.push(fmt(f[c * nv + v]));
                }
            }
            r
        })
        .collect();
    write_table(path, header, &rows)
}

/// Error analysis over the seeded test set using the bases in `basis_dir`.
/// Writes `errors.csv` into the configured output directory and returns
/// the rows.
pub fn run_errors(cfg: &RunConfig, basis_dir: &Path) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let pool = cfg.pool()?;
    pool.install(|| {
        let dir = &cfg.output_dir;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rows = match cfg.case {
            Case::DarcyEllipse => {
                let setup = DarcySetup::new(cfg)?;
                let basis = ReducedBasis::load(&basis_dir.join(DARCY_BASIS))?;
                let grid = n_grid(cfg.n_max.min(basis.len()));
                let params = sample_parameters(setup.parameter_space(), cfg.test, cfg.seed, Stream::Test);
                let tests = darcy_hf(&setup, &params)?;
                let errs = darcy_error_curve(&setup, &basis, &tests, &grid)?;
                grid.iter().zip(errs).map(|(&n, e)| vec![n as f64, e]).collect::<Vec<_>>()
            }
            Case::StokesCylinder => {
                let setup = StokesSetup::new(cfg)?;
                let bases = load_stokes_bases(basis_dir)?;
                let lifting = if cfg.lifting { Some(load_lifting(basis_dir)?) } else { None };
                let grid = n_grid(cfg.n_max.min(bases.bases().max_size()));
                let params = sample_parameters(setup.parameter_space(), cfg.test, cfg.seed, Stream::Test);
                let tests = stokes_hf(&setup, &params, false)?;
                let errs = stokes_error_curve(&setup, &bases, lifting.as_ref(), &tests, &grid)?;
                grid.iter().zip(errs).map(|(&n, e)| vec![n as f64, e[0], e[1]]).collect()
            }
        };
        let header: &[&str] = match cfg.case {
            Case::DarcyEllipse => &["n", "mean_rel_err"],
            Case::StokesCylinder => &["n", "velocity_mean_rel_err", "pressure_mean_rel_err"],
        };
        let text: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let mut out = vec![(r[0] as usize).to_string()];
                out.extend(r[1..].iter().map(|v| fmt(*v)));
                out
            })
            .collect();
        write_table(&dir.join("errors.csv"), header, &text)?;
        Ok(rows)
    })
}

/// For each Nitsche penalty: offline training and the mean test error at
/// `n_max` modes (Darcy case). Writes `gamma_sweep.csv`.
pub fn run_gamma_sweep(cfg: &RunConfig, gammas: &[f64]) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    if cfg.case != Case::DarcyEllipse {
        return Err(Error::InvalidArgument("the penalty sweep runs on the darcy-ellipse case".into()));
    }
    if gammas.is_empty() {
        return Err(Error::InvalidArgument("empty penalty list".into()));
    }
    let pool = cfg.pool()?;
    let rows = pool.install(|| -> Result<Vec<(f64, f64)>> {
        let mut rows = Vec::with_capacity(gammas.len());
        for &g in gammas {
            let c = RunConfig {
                gamma_d: g,
                ..cfg.clone()
            };
            rows.push((g, darcy_mean_error(&c, cfg.n_max)?));
        }
        Ok(rows)
    })?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text: Vec<Vec<String>> = rows.iter().map(|(g, e)| vec![fmt(*g), fmt(*e)]).collect();
    write_table(&dir.join("gamma_sweep.csv"), &["gamma_d", "mean_rel_err"], &text)?;
    Ok(rows)
}

/// In-memory Darcy train and test at one basis size.
pub fn darcy_mean_error(cfg: &RunConfig, n: usize) -> Result<f64> {
    let setup = DarcySetup::new(cfg)?;
    let train = sample_parameters(setup.parameter_space(), cfg.train, cfg.seed, Stream::Train);
    let hf = darcy_hf(&setup, &train)?;
    let set = darcy_snapshots(&setup, &hf, cfg.extension, cfg.transport)?;
    let basis = compress(&set, n.min(set.len()), &L2Product::new(&setup.mesh))?;
    let test = sample_parameters(setup.parameter_space(), cfg.test, cfg.seed, Stream::Test);
    let tests = darcy_hf(&setup, &test)?;
    Ok(darcy_error_curve(&setup, &basis, &tests, &[n])?[0])
}

/// One high-fidelity solve written as `solution.csv` (natural extension).
pub fn run_hf_solve(cfg: &RunConfig, mu: &[f64]) -> Result<Vec<Vec<f64>>> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (mesh, fields) = match cfg.case {
        Case::DarcyEllipse => {
            let setup = DarcySetup::new(cfg)?;
            check_arity(setup.parameter_space(), mu)?;
            let hf = darcy_hf_one(&setup, mu)?;
            let f = vec![hf.background(&setup.mesh)];
            (setup.mesh, f)
        }
        Case::StokesCylinder => {
            let setup = StokesSetup::new(cfg)?;
            check_arity(setup.parameter_space(), mu)?;
            let hf = stokes_hf_one(&setup, mu, false)?;
            let (v, p) = hf.background(&setup.mesh);
            (setup.mesh, vec![v, p])
        }
    };
    write_nodal(&dir.join("solution.csv"), &mesh, &fields, cfg.case)?;
    Ok(fields)
}

/// Re-export the eigenvalue records of every basis found in `run_dir`.
pub fn run_eigs_export(run_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    let single = run_dir.join(DARCY_BASIS);
    if single.join("manifest.json").exists() {
        let b = ReducedBasis::load(&single)?;
        let path = out.join("eigenvalues.csv");
        write_eigenvalues(&path, &b.eigenvalues)?;
        written.push(path);
    }
    for name in ["velocity", "pressure", "supremizer"] {
        let d = run_dir.join(stokes_dirs(name).1);
        if d.join("manifest.json").exists() {
            let b = ReducedBasis::load(&d)?;
            let path = out.join(format!("eigenvalues_{name}.csv"));
            write_eigenvalues(&path, &b.eigenvalues)?;
            written.push(path);
        }
    }
    if written.is_empty() {
        return Err(Error::io(
            run_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no basis directory found"),
        ));
    }
    Ok(written)
}

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cutrom::pipeline::{self, Case, RunConfig};
use cutrom::snapshot::ExtensionMode;

#[derive(Parser)]
#[command(name = "cutrom", version, about = "Reduced order models for unfitted finite elements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the training set, extend, compress and write the bases.
    Offline(Common),
    /// Evaluate the reduced model of an offline run at one parameter.
    Online {
        /// Offline run directory.
        #[arg(long)]
        basis: PathBuf,
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        mu: Vec<f64>,
        /// Basis size (defaults to all modes).
        #[arg(long)]
        nmax: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean relative errors over the seeded test set.
    Errors {
        #[command(flatten)]
        common: Common,
        /// Offline run directory holding the bases.
        #[arg(long)]
        basis: PathBuf,
    },
    /// Export eigenvalue tables of an offline run.
    EigsExport {
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean error at `nmax` modes for each Nitsche penalty.
    GammaSweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated penalty values.
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
        gammas: Vec<f64>,
    },
    /// One high-fidelity solve.
    HfSolve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        mu: Vec<f64>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, value_parser = ["darcy-ellipse", "stokes-cylinder"])]
    case: Option<String>,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    nmax: Option<usize>,
    #[arg(long, value_parser = ["zero", "natural", "harmonic"])]
    extension: Option<String>,
    /// Transport snapshots to the reference configuration (`--transport`
    /// alone means true).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    transport: Option<bool>,
    #[arg(long)]
    gamma_d: Option<f64>,
    #[arg(long)]
    gamma_n: Option<f64>,
    #[arg(long = "gamma-1")]
    gamma_1: Option<f64>,
    #[arg(long = "gamma-1u")]
    gamma_1u: Option<f64>,
    #[arg(long = "gamma-1p")]
    gamma_1p: Option<f64>,
    /// Pressure stabilization on ghost faces only.
    #[arg(long)]
    paper_faces: bool,
    /// Subtract the reference solution before compression.
    #[arg(long)]
    lifting: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => {
                let case: Case = self.case.as_deref().unwrap_or("darcy-ellipse").parse()?;
                RunConfig::for_case(case)
            }
        };
        if let Some(c) = &self.case {
            let case: Case = c.parse()?;
            if case != cfg.case {
                bail!("--case {c} conflicts with the configuration file");
            }
        }
        if let Some(v) = self.h {
            cfg.mesh_h = v;
        }
        if let Some(v) = self.train {
            cfg.train = v;
        }
        if let Some(v) = self.test {
            cfg.test = v;
        }
        if let Some(v) = self.nmax {
            cfg.n_max = v;
        }
        if let Some(e) = &self.extension {
            cfg.extension = e.parse::<ExtensionMode>()?;
        }
        if let Some(v) = self.transport {
            cfg.transport = v;
        }
        if let Some(v) = self.gamma_d {
            cfg.gamma_d = v;
        }
        if let Some(v) = self.gamma_n {
            cfg.gamma_n = v;
        }
        if let Some(v) = self.gamma_1 {
            cfg.gamma_1 = v;
        }
        if let Some(v) = self.gamma_1u {
            cfg.gamma_1u = v;
        }
        if let Some(v) = self.gamma_1p {
            cfg.gamma_1p = v;
        }
        cfg.paper_faces |= self.paper_faces;
        cfg.lifting |= self.lifting;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Offline(common) => {
            let cfg = common.resolve()?;
            let s = pipeline::run_offline(&cfg)?;
            println!("{} snapshots written to {}", s.snapshots, s.output_dir.display());
            for (name, n) in s.modes {
                println!("{name}: {n} modes");
            }
        }
        Command::Online { basis, mu, nmax, out } => {
            let out = out.unwrap_or_else(|| basis.clone());
            let sol = pipeline::run_online(&basis, &mu, nmax, &out)?;
            println!(
                "{} coefficients, solution written to {}",
                sol.coefficients.len(),
                out.join("solution.csv").display()
            );
        }
        Command::Errors { common, basis } => {
            let cfg = common.resolve()?;
            for row in pipeline::run_errors(&cfg, &basis)? {
                let errs: Vec<String> = row[1..].iter().map(|e| format!("{e:.3e}")).collect();
                println!("N={:<4} {}", row[0] as usize, errs.join(" "));
            }
        }
        Command::EigsExport { basis, out } => {
            let out = out.unwrap_or_else(|| basis.clone());
            for p in pipeline::run_eigs_export(&basis, &out)? {
                println!("{}", p.display());
            }
        }
        Command::GammaSweep { common, gammas } => {
            let cfg = common.resolve()?;
            for (g, e) in pipeline::run_gamma_sweep(&cfg, &gammas)? {
                println!("gamma_d={g:<8} mean_rel_err={e:.3e}");
            }
        }
        Command::HfSolve { common, mu } => {
            let cfg = common.resolve()?;
            pipeline::run_hf_solve(&cfg, &mu)?;
            println!("{}", cfg.output_dir.join("solution.csv").display());
        }
    }
    Ok(())
}

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use tensor_hj::free_energy::{hj_residual_n, mean_free_energy};
use tensor_hj::hj_checker::{convergence_report, residual_grid};
use tensor_hj::hopf::{hopf_diagonal, hopf_lax_1d, hopf_value, layered_reduced};
use tensor_hj::initial_condition::InitialCondition;
use tensor_hj::{Error, Result as CoreResult, SymMatrix};

use config::{invalid, Loaded};
use output::{Format, Row, Table};

#[derive(Parser, Debug)]
#[command(name = "tensor-hj", version, about = "Free energies, sup-inf formulas and Hamilton-Jacobi checks for tensor inference models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Initial condition and its gradient at each field.
    Psi,
    /// Disorder-averaged finite-N free energy at each (N, t, h).
    FreeEnergy,
    /// Sup-inf value on the PSD cone at each (t, h).
    Hopf,
    /// Orthant form at each (t, diag h) for diagonal-only nonlinearities.
    HopfDiagonal,
    /// Layered reduction at each t for the scalar layer priors.
    Layered,
    /// Residual of the sup-inf solution on `[grid]`, and finite-N residuals at
    /// each (N, t, h) when `run.n` is set.
    Residual,
    /// Gap between finite-N free energies and the sup-inf value at each (t, h).
    Converge,
    /// Hopf-Lax formula for |x| against its closed form.
    HopflaxDemo,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Psi => "psi",
            Command::FreeEnergy => "free-energy",
            Command::Hopf => "hopf",
            Command::HopfDiagonal => "hopf-diagonal",
            Command::Layered => "layered",
            Command::Residual => "residual",
            Command::Converge => "converge",
            Command::HopflaxDemo => "hopflax-demo",
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_solver_failure() => 3,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if cli.threads == Some(0) {
        return Err(invalid("threads", "must be positive").into());
    }
    let loaded = Loaded::read(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(loaded.config.run.seed);
    let mut table = Table::new(cli.command.name(), seed, &loaded.hash);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("building the worker pool")?;
    pool.install(|| dispatch(cli.command, &loaded, seed, &mut table))?;
    table.write(&cli.out, cli.format)
}

fn initial_condition(loaded: &Loaded) -> anyhow::Result<InitialCondition> {
    let prior = loaded.model()?.1.clone();
    Ok(InitialCondition::new(prior, loaded.config.psi.mode())?)
}

fn dispatch(command: Command, loaded: &Loaded, seed: u64, table: &mut Table) -> anyhow::Result<()> {
    let cfg = &loaded.config.solver;
    match command {
        Command::Psi => {
            let psi = initial_condition(loaded)?;
            for h in loaded.fields()? {
                let e = psi.evaluate(&h)?;
                table.push(
                    Row::default()
                        .sym("h", &h)
                        .num("psi", e.value)
                        .num("std_error", e.std_error)
                        .sym("grad", &e.grad),
                );
            }
        }
        Command::FreeEnergy => {
            let (spec, prior) = loaded.model()?;
            let n_disorder = loaded.n_disorder()?;
            for n in loaded.sizes()? {
                for (t, h) in loaded.points()? {
                    let e = mean_free_energy(spec, prior, n, t, &h, n_disorder, seed)?;
                    table.push(
                        Row::default()
                            .int("n", n as u64)
                            .num("t", t)
                            .sym("h", &h)
                            .num("value", e.value)
                            .num("std_error", e.std_error)
                            .int("n_disorder", e.n_disorder as u64)
                            .text("method", e.method),
                    );
                }
            }
        }
        Command::Hopf => {
            let spec = &loaded.model()?.0;
            let psi = initial_condition(loaded)?;
            let points = loaded.points()?;
            let results: Vec<_> = points
                .par_iter()
                .map(|(t, h)| hopf_value(&psi, spec, *t, h, cfg))
                .collect::<CoreResult<_>>()?;
            for ((t, h), r) in points.iter().zip(results) {
                table.push(
                    Row::default()
                        .num("t", *t)
                        .sym("h", h)
                        .num("value", r.value)
                        .sym("h_outer", &r.h_outer)
                        .sym("h_inner", &r.h_inner)
                        .num("gap_estimate", r.gap_estimate)
                        .int("outer_starts", r.outer_starts as u64),
                );
            }
        }
        Command::HopfDiagonal => {
            let spec = &loaded.model()?.0;
            let psi = initial_condition(loaded)?;
            let mut points = vec![];
            for (t, h) in loaded.points()? {
                let k = h.dim();
                if (0..k).any(|i| (i + 1..k).any(|j| h.get(i, j) != 0.0)) {
                    return Err(invalid("run.h", "hopf-diagonal needs diagonal fields").into());
                }
                points.push((t, h.diag()));
            }
            let results: Vec<_> = points
                .par_iter()
                .map(|(t, x)| hopf_diagonal(&psi, spec, *t, x, cfg))
                .collect::<CoreResult<_>>()?;
            for ((t, x), r) in points.iter().zip(results) {
                table.push(
                    Row::default()
                        .num("t", *t)
                        .vector("x", x)
                        .num("value", r.value)
                        .vector("x_outer", &r.h_outer)
                        .vector("x_inner", &r.h_inner)
                        .num("gap_estimate", r.gap_estimate),
                );
            }
        }
        Command::Layered => {
            let Some(section) = &loaded.config.layered else {
                return Err(invalid("layered", "missing [layered] section").into());
            };
            let mode = loaded.config.psi.mode();
            let layers = section
                .layers
                .iter()
                .map(|p| InitialCondition::new(p.build(1)?, mode)?.scalar())
                .collect::<CoreResult<Vec<_>>>()?;
            for t in loaded.times()? {
                let r = layered_reduced(t, &layers, cfg)?;
                table.push(
                    Row::default()
                        .num("t", t)
                        .num("value", r.value)
                        .vector("dual", &r.odd_duals)
                        .num("gap_estimate", r.gap_estimate),
                );
            }
        }
        Command::Residual => {
            let (spec, prior) = loaded.model()?;
            let grid = loaded.config.grid.as_ref();
            if grid.is_none() && loaded.config.run.n.is_empty() {
                return Err(invalid("grid", "residual needs a [grid] section or run.n").into());
            }
            if let Some(grid) = grid {
                if grid.k != spec.k() {
                    return Err(invalid("grid.k", format!("must equal the model K = {}", spec.k())).into());
                }
                let psi = initial_condition(loaded)?;
                let f = |t: f64, h: &SymMatrix| -> CoreResult<f64> { Ok(hopf_value(&psi, spec, t, h, cfg)?.value) };
                let report = residual_grid(&f, spec, grid)?;
                for p in &report.points {
                    table.push(
                        Row::default()
                            .text("source", "sup-inf")
                            .num("t", p.t)
                            .sym("h", &p.h)
                            .num("value", p.value)
                            .num("residual", p.residual)
                            .num("residual_half", p.residual_half)
                            .num("richardson", p.richardson)
                            .flag("kink", p.kink)
                            .flag("pass", p.pass),
                    );
                }
                println!(
                    "residual: pass fraction {:.4} over {} non-kink points ({} kinks)",
                    report.pass_fraction,
                    report.points.len() - report.n_kink,
                    report.n_kink
                );
            }
            if !loaded.config.run.n.is_empty() {
                let n_disorder = loaded.n_disorder()?;
                for n in loaded.sizes()? {
                    for (t, h) in loaded.points()? {
                        let r = hj_residual_n(spec, prior, n, t, &h, n_disorder, seed)?;
                        table.push(
                            Row::default()
                                .text("source", "finite-n")
                                .int("n", n as u64)
                                .num("t", t)
                                .sym("h", &h)
                                .num("residual", r.value)
                                .num("std_error", r.std_error),
                        );
                    }
                }
            }
        }
        Command::Converge => {
            let (spec, prior) = loaded.model()?;
            let sizes = loaded.sizes()?;
            let n_disorder = loaded.n_disorder()?;
            for (t, h) in loaded.points()? {
                let report = convergence_report(spec, prior, t, &h, &sizes, n_disorder, seed, cfg)?;
                for row in &report.rows {
                    table.push(
                        Row::default()
                            .num("t", t)
                            .sym("h", &h)
                            .int("n", row.n as u64)
                            .num("free_energy", row.free_energy)
                            .num("std_error", row.std_error)
                            .num("hopf", row.hopf)
                            .num("gap", row.gap)
                            .num("decrease_z", report.decrease_z),
                    );
                }
            }
        }
        Command::HopflaxDemo => {
            for t in [0.25, 1.0] {
                for i in 0..=60 {
                    let x = -3.0 + 0.1 * i as f64;
                    let value = hopf_lax_1d(f64::abs, 1.0, t, x)?;
                    let closed = if x.abs() <= 2.0 * t { x * x / (4.0 * t) } else { x.abs() - t };
                    table.push(
                        Row::default()
                            .num("t", t)
                            .num("x", x)
                            .num("value", value)
                            .num("closed_form", closed)
                            .num("abs_error", (value - closed).abs()),
                    );
                }
            }
        }
    }
    if table.rows.is_empty() {
        bail!("no rows produced");
    }
    Ok(())
}

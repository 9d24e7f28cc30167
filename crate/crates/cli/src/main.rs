//! `sros`: simulate, run convergence studies, print stability tables and
//! solve the Darcy flow problem.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 configuration error.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sros_core::darcy::{darcy_velocity, flux_balance, write_velocity_csv};
use sros_core::harness::{fmt_float, run_study, timing_profile, write_plotdata_csv, write_report_csv, write_timing_csv};
use sros_core::integrators::{integrate, scalar_stability_sweep, Amplification, NoiseInput, SchemeConfig, StepContext};
use sros_core::mesh::{BcLayout, Mesh};
use sros_core::noise::NoisePath;
use sros_core::problem::{noise_spec, Problem, VelocitySpec};

use config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "sros", version, about = "Stochastic Rosenbrock-type solver for semilinear parabolic SPDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "sros-out")]
    out: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Print tables to stdout as CSV.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one trajectory and write the final state and solver diagnostics.
    Simulate(Common),
    /// Monte Carlo strong-convergence study.
    Converge(Common),
    /// Amplification factors of the scalar test equation.
    Stability {
        #[command(flatten)]
        common: Common,
        /// Implicit growth rate.
        #[arg(long, allow_negative_numbers = true)]
        a: Option<f64>,
        /// Rate of the part treated as nonlinear.
        #[arg(long, allow_negative_numbers = true)]
        c: Option<f64>,
        /// Comma-separated step sizes.
        #[arg(long, value_delimiter = ',')]
        dt: Option<Vec<f64>>,
    },
    /// Solve the pressure problem and write the velocity field.
    Darcy(Common),
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerical(#[from] sros_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io { .. } => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Loads, applies flag overrides, validates, creates the output directory and
/// echoes the resolved configuration into it.
fn prepare(common: &Common, tweak: impl FnOnce(&mut RunConfig)) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.workers = Some(w);
    }
    tweak(&mut cfg);
    cfg.validate()?;
    fs::create_dir_all(&common.out).map_err(io_err(&common.out))?;
    let path = common.out.join("resolved_config.json");
    write_file(&path, |w| {
        serde_json::to_writer_pretty(&mut *w, &cfg).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;
    Ok(cfg)
}

fn simulate(common: &Common) -> CliResult<()> {
    let cfg = prepare(common, |_| {})?;
    let problem = Problem::assemble(&cfg.problem, cfg.master_seed)?;
    let x0 = problem.initial_state()?;
    let scheme_cfg = SchemeConfig {
        solver: cfg.solver,
        ..SchemeConfig::new(cfg.time.scheme, cfg.time.dt, cfg.time.t_final)
    };
    let n_steps = scheme_cfg.n_steps()?;
    let ctx = StepContext::for_scheme(&problem.system, cfg.time.scheme, cfg.time.dt, cfg.solver)?;
    let path = if cfg.simulate.deterministic || n_steps == 0 {
        None
    } else {
        let spec = noise_spec(&cfg.problem, cfg.master_seed);
        Some(NoisePath::sample(&spec, cfg.time.t_final, n_steps, cfg.simulate.realization)?)
    };
    let noise = match &path {
        Some(path) => NoiseInput::Path {
            path,
            table: &problem.noise_table,
        },
        None => NoiseInput::None,
    };
    let traj = integrate(&ctx, &x0, &noise, &scheme_cfg)?;
    let full = problem.expand(&traj.final_state);

    let state_path = common.out.join("final_state.csv");
    write_file(&state_path, |w| {
        writeln!(w, "x,y,value")?;
        for (p, v) in problem.mesh.nodes.iter().zip(&full) {
            writeln!(w, "{},{},{}", fmt_float(p[0]), fmt_float(p[1]), fmt_float(*v))?;
        }
        Ok(())
    })?;
    let diag_path = common.out.join("diagnostics.csv");
    write_file(&diag_path, |w| {
        writeln!(w, "step,iterations,residual,converged")?;
        for (m, r) in traj.diagnostics.iter().enumerate() {
            writeln!(w, "{},{},{},{}", m + 1, r.iterations, fmt_float(r.final_residual), r.converged)?;
        }
        Ok(())
    })?;

    let norm = problem.system.norm(&traj.final_state)?;
    let all_converged = traj.diagnostics.iter().all(|r| r.converged);
    println!("scheme          {}", cfg.time.scheme.label());
    println!("free nodes      {}", problem.system.dim());
    println!("steps           {}", traj.diagnostics.len());
    println!("shift c0        {:e}", problem.shift());
    println!("|X(T)| (free)   {norm:.6e}");
    println!("solver reports  {} converged: {all_converged}", traj.diagnostics.len());
    println!("linear iters    {}", traj.total_iterations());
    println!("outputs         {}, {}", state_path.display(), diag_path.display());
    if let Some(step) = traj.diverged_at {
        return Err(CliError::Numerical(sros_core::Error::NumericalDomain(format!(
            "trajectory diverged at step {step}"
        ))));
    }
    Ok(())
}

fn converge(common: &Common) -> CliResult<()> {
    let cfg = prepare(common, |_| {})?;
    let study = cfg.study();
    let report = run_study(&study)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let report_path = common.out.join("report.csv");
    write_file(&report_path, |w| write_report_csv(&report, w))?;
    for s in &report.schemes {
        let p = common.out.join(format!("plotdata_{}.csv", s.scheme));
        write_file(&p, |w| write_plotdata_csv(s, w))?;
    }
    let timing = timing_profile(&report);
    write_file(&common.out.join("timing.csv"), |w| write_timing_csv(&timing, w))?;

    if common.csv {
        write_report_csv(&report, std::io::stdout().lock()).map_err(io_err(Path::new("<stdout>")))?;
    } else {
        println!(
            "{} realizations, dt_ref = {}, {} free nodes",
            report.n_realizations,
            report.dt_reference,
            report.n_free
        );
        for s in &report.schemes {
            println!("{}", s.scheme.label());
            for r in &s.rows {
                println!(
                    "  dt = {:<10.6} rms = {:.4e} ± {:.1e}  ok {:>4}  diverged {:>3}  cpu {:.3e} s",
                    r.dt, r.rms_error, r.std_error, r.n_ok, r.n_diverged, r.mean_cpu_s
                );
            }
        }
    }
    for s in &report.schemes {
        match s.fit {
            Some(f) => println!("fitted order {}: {:.4} (max log residual {:.3})", s.scheme, f.order, f.residual),
            None => println!("fitted order {}: unavailable", s.scheme),
        }
    }
    Ok(())
}

fn factor_cell(a: &Amplification) -> (String, bool) {
    (a.factor.map(fmt_float).unwrap_or_else(|| "pole".into()), a.stable)
}

fn stability(common: &Common, a: Option<f64>, c: Option<f64>, dt: Option<Vec<f64>>) -> CliResult<()> {
    let cfg = prepare(common, |cfg| {
        if let Some(a) = a {
            cfg.stability.a = a;
        }
        if let Some(c) = c {
            cfg.stability.c = c;
        }
        if let Some(dt) = dt {
            cfg.stability.dt_list = dt;
        }
    })?;
    let s = &cfg.stability;
    let rows = scalar_stability_sweep(s.a, s.c, &s.dt_list);
    let render = |w: &mut dyn Write| -> std::io::Result<()> {
        writeln!(
            w,
            "dt,semi_implicit_factor,semi_implicit_stable,rosenbrock_factor,rosenbrock_stable,explicit_factor,explicit_stable"
        )?;
        for r in &rows {
            let (si, si_ok) = factor_cell(&r.semi_implicit);
            let (ro, ro_ok) = factor_cell(&r.rosenbrock);
            let (ex, ex_ok) = factor_cell(&r.explicit);
            writeln!(w, "{},{si},{si_ok},{ro},{ro_ok},{ex},{ex_ok}", fmt_float(r.dt))?;
        }
        Ok(())
    };
    write_file(&common.out.join("stability.csv"), |w| render(w))?;
    let mut out = std::io::stdout().lock();
    if common.csv {
        render(&mut out).map_err(io_err(Path::new("<stdout>")))?;
        return Ok(());
    }
    println!("a = {}, c = {}", s.a, s.c);
    if s.a > s.c {
        println!("semi-implicit threshold 2/(a - c) = {:.6}", 2.0 / (s.a - s.c));
    }
    println!("{:>12} {:>14} {:>8} {:>14} {:>8} {:>14} {:>8}", "dt", "semi-impl", "stable", "rosenbrock", "stable", "explicit", "stable");
    for r in &rows {
        let cell = |a: &Amplification| match a.factor {
            Some(f) => format!("{f:>14.6e} {:>8}", a.stable),
            None => format!("{:>14} {:>8}", "pole", a.stable),
        };
        println!("{:>12.4e} {} {} {}", r.dt, cell(&r.semi_implicit), cell(&r.rosenbrock), cell(&r.explicit));
    }
    Ok(())
}

fn darcy(common: &Common) -> CliResult<()> {
    let cfg = prepare(common, |_| {})?;
    let VelocitySpec::Darcy { mu, permeability } = &cfg.problem.velocity else {
        return Err(ConfigError::Key {
            key: "problem.velocity.kind".into(),
            message: "darcy subcommand needs kind = \"darcy\"".into(),
        }
        .into());
    };
    let d = &cfg.problem.domain;
    let mesh = Mesh::structured(d.l1, d.l2, d.nx, d.ny, BcLayout::DirichletLeftRight)?;
    let (_, _, velocity) = darcy_velocity(&mesh, permeability, *mu, cfg.master_seed)?;
    let balance = flux_balance(&mesh, &velocity)?;
    let path = common.out.join("velocity.csv");
    write_file(&path, |w| write_velocity_csv(&mesh, &velocity, w))?;
    let max_q = velocity.q.iter().map(|q| q[0].hypot(q[1])).fold(0.0, f64::max);
    if common.csv {
        println!("inflow,outflow,relative_mismatch,max_cell_imbalance,max_speed");
        println!(
            "{},{},{},{},{}",
            fmt_float(balance.inflow),
            fmt_float(balance.outflow),
            fmt_float(balance.relative_mismatch()),
            fmt_float(balance.max_cell_imbalance),
            fmt_float(max_q)
        );
    } else {
        println!("inflow              {:.10e}", balance.inflow);
        println!("outflow             {:.10e}", balance.outflow);
        println!("relative mismatch   {:.3e}", balance.relative_mismatch());
        println!("max cell imbalance  {:.3e}", balance.max_cell_imbalance);
        println!("max |q|             {max_q:.10e}");
        println!("velocity written to {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Converge(c) => converge(c),
        Command::Stability { common, a, c, dt } => stability(common, *a, *c, dt.clone()),
        Command::Darcy(c) => darcy(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

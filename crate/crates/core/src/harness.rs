//! Monte Carlo strong-convergence studies.
//!
//! Every realization samples one Brownian path at the reference step. The
//! reference trajectory and every coarse trajectory of every scheme are driven
//! by that same path (coarsened by block sums), so the measured error is the
//! time-discretization error alone.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::{integrate, step_count, NoiseInput, Scheme, SchemeConfig, StepContext, Trajectory};
use crate::linsolve::SolverSettings;
use crate::noise::NoisePath;
use crate::problem::{noise_spec, Problem, ProblemSpec};

/// A study aborts once more than this fraction of realizations fail in any
/// (scheme, dt) cell.
pub const MAX_DIVERGED_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub problem: ProblemSpec,
    pub t_final: f64,
    pub dt_reference: f64,
    pub dt_list: Vec<f64>,
    pub n_realizations: usize,
    pub schemes: Vec<Scheme>,
    pub master_seed: u64,
    pub solver: SolverSettings,
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::default(),
            t_final: 1.0,
            dt_reference: 1.0 / 512.0,
            dt_list: vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0],
            n_realizations: 50,
            schemes: vec![Scheme::Sros],
            master_seed: crate::DEFAULT_MASTER_SEED,
            solver: SolverSettings::default(),
            workers: None,
        }
    }
}

impl StudyConfig {
    /// Checks the grid relations and returns the coarsening factor of every
    /// entry of `dt_list`.
    pub fn validate(&self) -> Result<Vec<usize>> {
        if self.n_realizations == 0 {
            return Err(Error::InvalidArgument("n_realizations must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidArgument("no schemes selected".into()));
        }
        if self.dt_list.is_empty() {
            return Err(Error::InvalidArgument("dt_list is empty".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::InvalidArgument(format!("t_final must be positive, got {}", self.t_final)));
        }
        step_count(self.t_final, self.dt_reference)?;
        self.dt_list
            .iter()
            .map(|&dt| {
                step_count(self.t_final, dt)?;
                let factor = step_count(dt, self.dt_reference).map_err(|_| {
                    Error::InvalidArgument(format!(
                        "dt = {dt} is not an integer multiple of dt_reference = {}",
                        self.dt_reference
                    ))
                })?;
                if factor < 2 || !factor.is_power_of_two() {
                    return Err(Error::InvalidArgument(format!(
                        "dt = {dt} must be a dyadic multiple (2, 4, 8, ...) of dt_reference = {}",
                        self.dt_reference
                    )));
                }
                Ok(factor)
            })
            .collect()
    }
}

/// Least-squares fit of `log rms = order · log dt + const`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub order: f64,
    /// Largest absolute residual of the log-log fit.
    pub residual: f64,
}

pub fn fit_order(points: &[(f64, f64)]) -> Result<OrderFit> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("order fit needs at least two points".into()));
    }
    if points.iter().any(|&(dt, e)| !(dt > 0.0 && e > 0.0)) {
        return Err(Error::InvalidArgument("order fit needs positive step sizes and errors".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(dt, e)| (dt.ln(), e.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("order fit needs distinct step sizes".into()));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let order = sxy / sxx;
    let intercept = my - order * mx;
    let residual = logs
        .iter()
        .map(|p| (p.1 - intercept - order * p.0).abs())
        .fold(0.0, f64::max);
    Ok(OrderFit { order, residual })
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRow {
    pub dt: f64,
    pub n_steps: usize,
    pub rms_error: f64,
    /// Delta-method standard error of `rms_error`.
    pub std_error: f64,
    pub n_ok: usize,
    pub n_diverged: usize,
    pub mean_cpu_s: f64,
    pub total_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeReport {
    pub scheme: Scheme,
    pub rows: Vec<ErrorRow>,
    pub fit: Option<OrderFit>,
    pub reference_mean_cpu_s: f64,
    pub reference_diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub n_realizations: usize,
    pub dt_reference: f64,
    pub n_free: usize,
    pub shift: f64,
    pub schemes: Vec<SchemeReport>,
    pub warnings: Vec<String>,
}

impl ConvergenceReport {
    pub fn scheme(&self, scheme: Scheme) -> Option<&SchemeReport> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }
}

/// Outcome of one realization for one (scheme, dt) cell.
#[derive(Debug, Clone, Copy)]
enum CellOutcome {
    Ok { err_sq: f64, cpu_s: f64, iterations: usize },
    Failed,
}

struct RealizationResult {
    /// `[scheme][dt]`.
    cells: Vec<Vec<CellOutcome>>,
    /// Reference time per scheme, `None` when the reference failed.
    reference: Vec<Option<f64>>,
}

fn run_or_fail(ctx: &StepContext<'_>, x0: &[f64], path: &NoisePath, problem: &Problem, cfg: &SchemeConfig) -> Option<Trajectory> {
    let noise = NoiseInput::Path {
        path,
        table: &problem.noise_table,
    };
    match integrate(ctx, x0, &noise, cfg) {
        Ok(t) if !t.diverged() => Some(t),
        _ => None,
    }
}

fn squared_mass_distance(problem: &Problem, a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    problem.system.mass.bilinear(&diff, &diff).unwrap_or(f64::NAN)
}

/// Reference trajectory of one realization.
pub fn run_realization_reference(
    problem: &Problem,
    config: &StudyConfig,
    scheme: Scheme,
    realization: u64,
) -> Result<Trajectory> {
    let spec = noise_spec(&config.problem, config.master_seed);
    let n_ref = step_count(config.t_final, config.dt_reference)?;
    let path = NoisePath::sample(&spec, config.t_final, n_ref, realization)?;
    let ctx = StepContext::for_scheme(&problem.system, scheme, config.dt_reference, config.solver)?;
    let cfg = SchemeConfig {
        solver: config.solver,
        ..SchemeConfig::new(scheme, config.dt_reference, config.t_final)
    };
    integrate(
        &ctx,
        &problem.initial_state()?,
        &NoiseInput::Path {
            path: &path,
            table: &problem.noise_table,
        },
        &cfg,
    )
}

pub fn run_study(config: &StudyConfig) -> Result<ConvergenceReport> {
    let problem = Problem::assemble(&config.problem, config.master_seed)?;
    run_study_on(&problem, config)
}

/// As [`run_study`] with an already assembled problem.
pub fn run_study_on(problem: &Problem, config: &StudyConfig) -> Result<ConvergenceReport> {
    let factors = config.validate()?;
    let n_ref = step_count(config.t_final, config.dt_reference)?;
    let spec = noise_spec(&config.problem, config.master_seed);
    spec.validate()?;
    let x0 = problem.initial_state()?;

    let mut contexts = Vec::with_capacity(config.schemes.len());
    for &scheme in &config.schemes {
        let reference = StepContext::for_scheme(&problem.system, scheme, config.dt_reference, config.solver)?;
        let coarse = config
            .dt_list
            .iter()
            .map(|&dt| StepContext::for_scheme(&problem.system, scheme, dt, config.solver))
            .collect::<Result<Vec<_>>>()?;
        contexts.push((reference, coarse));
    }
    let scheme_config = |scheme: Scheme, dt: f64| SchemeConfig {
        solver: config.solver,
        ..SchemeConfig::new(scheme, dt, config.t_final)
    };

    let realization = |r: usize| -> Result<RealizationResult> {
        let path = NoisePath::sample(&spec, config.t_final, n_ref, r as u64)?;
        let coarse_paths = factors
            .iter()
            .map(|&f| path.coarsen(f))
            .collect::<Result<Vec<_>>>()?;
        let mut cells = Vec::with_capacity(config.schemes.len());
        let mut reference = Vec::with_capacity(config.schemes.len());
        for (s, &scheme) in config.schemes.iter().enumerate() {
            let (ref_ctx, coarse_ctx) = &contexts[s];
            let fine = run_or_fail(ref_ctx, &x0, &path, problem, &scheme_config(scheme, config.dt_reference));
            reference.push(fine.as_ref().map(|t| t.elapsed_s));
            let row = config
                .dt_list
                .iter()
                .enumerate()
                .map(|(k, &dt)| {
                    let Some(fine) = fine.as_ref() else {
                        return CellOutcome::Failed;
                    };
                    match run_or_fail(&coarse_ctx[k], &x0, &coarse_paths[k], problem, &scheme_config(scheme, dt)) {
                        Some(t) => {
                            let err_sq = squared_mass_distance(problem, &t.final_state, &fine.final_state);
                            if err_sq.is_finite() {
                                CellOutcome::Ok {
                                    err_sq,
                                    cpu_s: t.elapsed_s,
                                    iterations: t.total_iterations(),
                                }
                            } else {
                                CellOutcome::Failed
                            }
                        }
                        None => CellOutcome::Failed,
                    }
                })
                .collect();
            cells.push(row);
        }
        Ok(RealizationResult { cells, reference })
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    // Collecting keeps realization order, so the reduction below does not
    // depend on scheduling.
    let results: Vec<RealizationResult> =
        pool.install(|| (0..config.n_realizations).into_par_iter().map(realization).collect::<Result<_>>())?;

    let r_total = config.n_realizations;
    let mut warnings = Vec::new();
    if r_total < 2 {
        warnings.push(format!(
            "only {r_total} realization(s): Monte Carlo statistics are unreliable"
        ));
    }
    let mut schemes = Vec::with_capacity(config.schemes.len());
    for (s, &scheme) in config.schemes.iter().enumerate() {
        let mut rows = Vec::with_capacity(config.dt_list.len());
        for (k, &dt) in config.dt_list.iter().enumerate() {
            let mut sum = KahanSum::default();
            let mut sum_sq = KahanSum::default();
            let mut cpu = KahanSum::default();
            let mut iterations = 0;
            let mut n_ok = 0;
            for res in &results {
                if let CellOutcome::Ok { err_sq, cpu_s, iterations: it } = res.cells[s][k] {
                    sum.add(err_sq);
                    sum_sq.add(err_sq * err_sq);
                    cpu.add(cpu_s);
                    iterations += it;
                    n_ok += 1;
                }
            }
            let n_diverged = r_total - n_ok;
            if n_diverged as f64 > MAX_DIVERGED_FRACTION * r_total as f64 {
                return Err(Error::StudyAborted(format!(
                    "{scheme} at dt = {dt}: {n_diverged} of {r_total} realizations diverged or failed"
                )));
            }
            if n_diverged > 0 {
                warnings.push(format!(
                    "{scheme} at dt = {dt}: {n_diverged} realization(s) excluded after divergence or solver failure"
                ));
            }
            let n = n_ok as f64;
            let mean = sum.value() / n;
            let rms = mean.sqrt();
            let std_error = if n_ok > 1 && rms > 0.0 {
                let var = ((sum_sq.value() - n * mean * mean) / (n - 1.0)).max(0.0);
                (var / n).sqrt() / (2.0 * rms)
            } else {
                f64::NAN
            };
            rows.push(ErrorRow {
                dt,
                n_steps: step_count(config.t_final, dt)?,
                rms_error: rms,
                std_error,
                n_ok,
                n_diverged,
                mean_cpu_s: cpu.value() / n,
                total_iterations: iterations,
            });
        }
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.dt, r.rms_error)).collect();
        let fit = match fit_order(&points) {
            Ok(f) => Some(f),
            Err(e) => {
                warnings.push(format!("{scheme}: no order fitted ({e})"));
                None
            }
        };
        let ref_times: Vec<f64> = results.iter().filter_map(|r| r.reference[s]).collect();
        schemes.push(SchemeReport {
            scheme,
            rows,
            fit,
            reference_mean_cpu_s: ref_times.iter().sum::<f64>() / ref_times.len().max(1) as f64,
            reference_diverged: r_total - ref_times.len(),
        });
    }

    Ok(ConvergenceReport {
        n_realizations: r_total,
        dt_reference: config.dt_reference,
        n_free: problem.system.dim(),
        shift: problem.shift(),
        schemes,
        warnings,
    })
}

/// Cost against accuracy for every (scheme, dt).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub scheme: Scheme,
    pub dt: f64,
    pub mean_cpu_s: f64,
    pub rms_error: f64,
    /// Mean linear-solver iterations per realization.
    pub mean_iterations: f64,
    /// `free nodes × steps`: the work unit of one dense propagator
    /// application per node per step.
    pub cost_proxy: usize,
}

pub fn timing_profile(report: &ConvergenceReport) -> Vec<TimingRow> {
    report
        .schemes
        .iter()
        .flat_map(|s| {
            s.rows.iter().map(move |r| TimingRow {
                scheme: s.scheme,
                dt: r.dt,
                mean_cpu_s: r.mean_cpu_s,
                rms_error: r.rms_error,
                mean_iterations: r.total_iterations as f64 / r.n_ok.max(1) as f64,
                cost_proxy: report.n_free * r.n_steps,
            })
        })
        .collect()
}

/// 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn note(scheme: Scheme) -> &'static str {
    match scheme {
        Scheme::ExpoRosenbrock => "comparison baseline (interpreted)",
        _ => "",
    }
}

pub fn write_report_csv<W: Write>(report: &ConvergenceReport, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "scheme,dt,rms_error,n_ok,n_diverged,mean_cpu_s,fitted_order,std_error,fit_residual,total_iterations,note"
    )?;
    for s in &report.schemes {
        let (order, residual) = s
            .fit
            .map(|f| (fmt_float(f.order), fmt_float(f.residual)))
            .unwrap_or_else(|| ("NaN".into(), "NaN".into()));
        for r in &s.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                s.scheme,
                fmt_float(r.dt),
                fmt_float(r.rms_error),
                r.n_ok,
                r.n_diverged,
                fmt_float(r.mean_cpu_s),
                order,
                fmt_float(r.std_error),
                residual,
                r.total_iterations,
                note(s.scheme)
            )?;
        }
    }
    Ok(())
}

/// `log10 dt, log10 rms` pairs for one scheme.
pub fn write_plotdata_csv<W: Write>(scheme: &SchemeReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "log10_dt,log10_rms_error")?;
    for r in &scheme.rows {
        writeln!(out, "{},{}", fmt_float(r.dt.log10()), fmt_float(r.rms_error.log10()))?;
    }
    Ok(())
}

pub fn write_timing_csv<W: Write>(rows: &[TimingRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "scheme,dt,mean_cpu_s,rms_error,mean_iterations,cost_proxy")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.scheme,
            fmt_float(r.dt),
            fmt_float(r.mean_cpu_s),
            fmt_float(r.rms_error),
            fmt_float(r.mean_iterations),
            r.cost_proxy
        )?;
    }
    Ok(())
}

//! Acceptance criteria. Each prints one PASS/FAIL line; the binary exits
//! nonzero if any criterion fails.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sros_core::fem::{
    assemble_advection, assemble_mass, assemble_stiffness, coercivity_shift, compose_operator, lumped_mass_diagonal,
    DiffusionTensor,
};
use sros_core::harness::{run_study, timing_profile, ConvergenceReport, SchemeReport, StudyConfig};
use sros_core::integrators::{integrate, scalar_stability_sweep, NoiseInput, SchemeConfig, StepContext};
use sros_core::linsolve::{bicgstab, dense_solve, Ilu0, SolverSettings};
use sros_core::mesh::{BcLayout, Mesh};
use sros_core::noise::{EigenfunctionTable, NoiseKind, NoisePath, NoiseSpec};
use sros_core::operators::Drift;
use sros_core::problem::{DiffusionTensorSpec, DomainSpec, InitialCondition, Problem, ProblemSpec, VelocitySpec};
use sros_core::sparse::CsrMatrix;
use sros_core::Scheme;

const ADDITIVE_BAND: (f64, f64) = (0.8, 1.1);
const MULTIPLICATIVE_BAND: (f64, f64) = (0.45, 0.7);

struct Outcome {
    id: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn in_band(x: f64, band: (f64, f64)) -> bool {
    x >= band.0 && x <= band.1
}

fn study_config(kind: NoiseKind, n: usize, schemes: Vec<Scheme>) -> StudyConfig {
    let mut problem = ProblemSpec::default();
    problem.domain.nx = n;
    problem.domain.ny = n;
    problem.noise.kind = kind;
    StudyConfig {
        problem,
        schemes,
        ..StudyConfig::default()
    }
}

fn rms_table(s: &SchemeReport) -> String {
    s.rows
        .iter()
        .map(|r| format!("dt=1/{:.0}: {:.3e}±{:.1e}", 1.0 / r.dt, r.rms_error, r.std_error))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Nonincreasing as dt decreases, allowing a single inversion within 1.5
/// standard errors.
fn monotone(s: &SchemeReport) -> bool {
    let mut inversions = 0;
    for w in s.rows.windows(2) {
        let (coarse, fine) = (&w[0], &w[1]);
        if fine.rms_error > coarse.rms_error {
            inversions += 1;
            let se = coarse.std_error.max(fine.std_error);
            if inversions > 1 || fine.rms_error - coarse.rms_error > 1.5 * se {
                return false;
            }
        }
    }
    true
}

fn order_outcome(
    id: &'static str,
    name: &'static str,
    report: &ConvergenceReport,
    scheme: Scheme,
    band: (f64, f64),
    elapsed: f64,
) -> Outcome {
    let s = report.scheme(scheme).expect("scheme in report");
    let order = s.fit.map(|f| f.order).unwrap_or(f64::NAN);
    let all_ok = s.rows.iter().all(|r| r.n_diverged == 0);
    let pass = in_band(order, band) && monotone(s) && all_ok;
    Outcome {
        id,
        name,
        pass,
        detail: format!(
            "{scheme} order {order:.3} in [{}, {}], monotone={}, [{}], {:.1}s",
            band.0,
            band.1,
            monotone(s),
            rms_table(s),
            elapsed
        ),
    }
}

fn criterion_additive() -> (Outcome, ConvergenceReport) {
    let start = Instant::now();
    let report = run_study(&study_config(NoiseKind::Additive, 16, vec![Scheme::Sros])).expect("additive study");
    let out = order_outcome(
        "1",
        "additive-noise temporal order",
        &report,
        Scheme::Sros,
        ADDITIVE_BAND,
        start.elapsed().as_secs_f64(),
    );
    (out, report)
}

fn criterion_multiplicative() -> Outcome {
    let start = Instant::now();
    let report =
        run_study(&study_config(NoiseKind::Multiplicative, 16, vec![Scheme::Sros])).expect("multiplicative study");
    order_outcome(
        "2",
        "multiplicative-noise temporal order",
        &report,
        Scheme::Sros,
        MULTIPLICATIVE_BAND,
        start.elapsed().as_secs_f64(),
    )
}

fn criterion_stability() -> Outcome {
    let dts: Vec<f64> = (-3..=1)
        .flat_map(|e| [1.0, 2.0, 5.0].map(|m| m * 10f64.powi(e)))
        .filter(|&dt| dt <= 10.0)
        .collect();
    let mut failures = Vec::new();
    for (a, c) in [(0.01, -100.0), (1.0, -3.0), (0.5, -10.0)] {
        let threshold = 2.0 / (a - c);
        let mut grid = dts.clone();
        // The rounded threshold itself is left out: its flag depends on the last bit.
        grid.extend([threshold * (1.0 - 1e-9), threshold * (1.0 + 1e-9), 1.0 / a]);
        for row in scalar_stability_sweep(a, c, &grid) {
            let closed_form = row.dt < threshold;
            if row.semi_implicit.stable != closed_form {
                failures.push(format!("semi-implicit a={a} c={c} dt={}", row.dt));
            }
            if a + c < 0.0 && !row.rosenbrock.stable {
                failures.push(format!("rosenbrock a={a} c={c} dt={}", row.dt));
            }
        }
    }
    Outcome {
        id: "3",
        name: "scalar stability thresholds",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            "semi-implicit stable iff dt < 2/(a-c); Rosenbrock |R| < 1 on every dt".into()
        } else {
            failures.join("; ")
        },
    }
}

/// One SROS step against a dense fully implicit Euler step assembled here
/// from the unshifted matrices.
fn criterion_affine() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n in 2..=8 {
        for (drift, kind) in [
            (Drift::Linear { c: 3.0 }, NoiseKind::Additive),
            (Drift::Linear { c: -0.7 }, NoiseKind::Multiplicative),
            (Drift::Affine { alpha: 0.4, c: 2.5 }, NoiseKind::Multiplicative),
        ] {
            let spec = ProblemSpec {
                domain: DomainSpec {
                    nx: n,
                    ny: n,
                    ..DomainSpec::default()
                },
                velocity: VelocitySpec::Constant { q: [0.6, -0.2] },
                drift,
                noise: sros_core::problem::NoiseParams {
                    kind,
                    n1: 6,
                    n2: 6,
                    ..Default::default()
                },
                ..ProblemSpec::default()
            };
            let problem = Problem::assemble(&spec, 1).unwrap();
            let dim = problem.system.dim();
            let x0: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..2.0)).collect();
            let dw: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.3..0.3)).collect();
            let dt = 0.05;
            let settings = SolverSettings {
                tol: 1e-14,
                ..SolverSettings::default()
            };
            let ctx = StepContext::new(&problem.system, dt, settings).unwrap();
            let x1 = ctx.sros_step(&x0, &dw).unwrap().0;

            let mesh = &problem.mesh;
            let d = spec.diffusion_tensor.0;
            let q = vec![[0.6, -0.2]; mesh.n_triangles()];
            let k = assemble_stiffness(mesh, &d).to_dense() + assemble_advection(mesh, &q).unwrap().to_dense();
            let m = assemble_mass(mesh, false).to_dense();
            let ml = lumped_mass_diagonal(mesh);
            let (alpha, c) = match drift {
                Drift::Linear { c } => (0.0, c),
                Drift::Affine { alpha, c } => (alpha, c),
                _ => unreachable!(),
            };
            let (free, dir) = (&problem.free, &problem.dirichlet);
            let sub = |a: &DMatrix<f64>, r: &[usize], cl: &[usize]| DMatrix::from_fn(r.len(), cl.len(), |i, j| a[(r[i], cl[j])]);
            let kff = sub(&k, free, free);
            let kfd = sub(&k, free, dir);
            let mff = sub(&m, free, free);
            let mlf = DVector::from_iterator(dim, free.iter().map(|&i| ml[i]));
            let xd = DVector::from_element(dir.len(), 1.0);
            let lhs = &mff + &kff * dt + DMatrix::from_diagonal(&(&mlf * (dt * c)));
            let b_of = |u: f64| if kind == NoiseKind::Additive { 1.0 } else { u };
            let noise = DVector::from_iterator(dim, (0..dim).map(|i| mlf[i] * b_of(x0[i]) * dw[i]));
            let rhs = &mff * DVector::from_column_slice(&x0) - (&kfd * xd) * dt - &mlf * (dt * alpha) + noise;
            let oracle = lhs.lu().solve(&rhs).unwrap();
            let rel = (DVector::from_column_slice(&x1) - &oracle).norm() / oracle.norm();
            worst = worst.max(rel);
            cases += 1;
        }
    }
    Outcome {
        id: "4",
        name: "affine-equivalence oracle",
        pass: worst < 1e-10,
        detail: format!("{cases} cases on 2x2..8x8, worst relative difference {worst:.2e} (tol 1e-10)"),
    }
}

fn criterion_heat_decay() -> Outcome {
    let spec = ProblemSpec {
        domain: DomainSpec {
            nx: 16,
            ny: 16,
            bc: BcLayout::Neumann,
            ..DomainSpec::default()
        },
        diffusion_tensor: DiffusionTensorSpec(DiffusionTensor::identity()),
        velocity: VelocitySpec::None,
        drift: Drift::Zero,
        initial: InitialCondition::Mode { i: 1, j: 1 },
        ..ProblemSpec::default()
    };
    let problem = Problem::assemble(&spec, 0).unwrap();
    let x0 = problem.initial_state().unwrap();
    let (t_final, dt) = (1.0, 1e-3);
    let ctx = StepContext::new(&problem.system, dt, SolverSettings::default()).unwrap();
    let cfg = SchemeConfig::new(Scheme::Sros, dt, t_final);
    let traj = integrate(&ctx, &x0, &NoiseInput::None, &cfg).unwrap();
    let norm = problem.system.norm(&traj.final_state).unwrap();

    // λ_h: generalized eigenpair of (K, M) best aligned with X_0.
    let mesh = &problem.mesh;
    let k = assemble_stiffness(mesh, &DiffusionTensor::identity()).to_dense();
    let m = assemble_mass(mesh, false).to_dense();
    let chol = m.clone().cholesky().unwrap();
    let l_inv = chol.l().try_inverse().unwrap();
    let c = &l_inv * &k * l_inv.transpose();
    let eig = nalgebra::SymmetricEigen::new((&c + c.transpose()) * 0.5);
    let y0 = chol.l().transpose() * DVector::from_column_slice(&x0);
    let (best, _) = (0..eig.eigenvalues.len())
        .map(|i| (i, eig.eigenvectors.column(i).dot(&y0).abs()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let lambda_h = eig.eigenvalues[best];
    let norm0 = problem.system.norm(&x0).unwrap();
    let expected = norm0 * (-lambda_h * t_final).exp();
    let diff = (norm - expected).abs();
    Outcome {
        id: "5",
        name: "deterministic heat decay",
        pass: diff < 1e-3,
        detail: format!(
            "lambda_h={lambda_h:.6} (continuum {:.6}), |X(T)|={norm:.6e}, |X0|e^(-lambda_h T)={expected:.6e}, diff {diff:.2e} (tol 1e-3)",
            2.0 * (std::f64::consts::PI / 2.0).powi(2)
        ),
    }
}

fn criterion_noise() -> Outcome {
    let spec = NoiseSpec {
        beta: 2.0,
        eps: 0.1,
        n1: 32,
        n2: 32,
        l1: 2.0,
        l2: 2.0,
        kind: NoiseKind::Additive,
        seed: 6,
    };
    let mesh = Mesh::structured(2.0, 2.0, 32, 32, BcLayout::Neumann).unwrap();
    let table = EigenfunctionTable::build(&mesh, &spec).unwrap();
    let mass = assemble_mass(&mesh, false);
    let dt = 1e-2;
    let n_samples = 1000;
    let path = NoisePath::sample(&spec, dt * n_samples as f64, n_samples, 0).unwrap();
    let mut mean_sq = 0.0;
    for s in 0..n_samples {
        let field = table.increment_field(&path.step(s)).unwrap();
        mean_sq += mass.bilinear(&field, &field).unwrap();
    }
    mean_sq /= n_samples as f64;
    let target = dt * spec.trace();
    let norm_rel = (mean_sq / target - 1.0).abs();

    let n_steps = 10_000;
    let fine_dt = 1e-4;
    let long = NoisePath::sample(&spec, fine_dt * n_steps as f64, n_steps, 1).unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for k in 0..long.n_modes() {
        let inc = long.mode_increments(k);
        let var = inc.iter().map(|v| v * v).sum::<f64>() / n_steps as f64 / fine_dt;
        lo = lo.min(var);
        hi = hi.max(var);
    }
    let pass = norm_rel < 0.1 && lo >= 0.9 && hi <= 1.1;
    Outcome {
        id: "6",
        name: "noise statistics",
        pass,
        detail: format!(
            "E|dW|^2/(dt tr Q) - 1 = {norm_rel:.3} (tol 0.1); modal variance/dt in [{lo:.3}, {hi:.3}] over {} modes (band [0.9, 1.1])",
            long.n_modes()
        ),
    }
}

fn criterion_truncation() -> Outcome {
    let mut rel = Vec::new();
    let mut base = study_config(NoiseKind::Additive, 16, vec![Scheme::Sros]);
    base.dt_reference = 1.0 / 128.0;
    base.dt_list = vec![1.0 / 16.0, 1.0 / 32.0];
    base.n_realizations = 20;
    let r32 = run_study(&base).unwrap();
    base.problem.noise.n1 = 64;
    base.problem.noise.n2 = 64;
    let r64 = run_study(&base).unwrap();
    for (a, b) in r32.schemes[0].rows.iter().zip(&r64.schemes[0].rows) {
        rel.push((a.rms_error - b.rms_error).abs() / b.rms_error);
    }
    let worst = rel.iter().cloned().fold(0.0, f64::max);
    Outcome {
        id: "6b",
        name: "truncation insensitivity (N=32 vs 64)",
        pass: worst < 0.02,
        detail: format!("worst relative change in RMS error {worst:.4} (tol 0.02)"),
    }
}

fn criterion_solver() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut largest = 0;
    for _ in 0..50 {
        let (nx, ny) = loop {
            let nx = rng.random_range(2..=21);
            let ny = rng.random_range(2..=21);
            if (nx + 1) * (ny + 1) <= 500 {
                break (nx, ny);
            }
        };
        let layout = [BcLayout::Neumann, BcLayout::DirichletLeft, BcLayout::DirichletLeftRight][rng.random_range(0..3)];
        let mesh = Mesh::structured(rng.random_range(0.5..3.0), rng.random_range(0.5..3.0), nx, ny, layout).unwrap();
        let (dx, dy): (f64, f64) = (rng.random_range(0.01..2.0), rng.random_range(0.01..2.0));
        let off = rng.random_range(-0.9..0.9) * (dx * dy).sqrt();
        let d = DiffusionTensor::new([[dx, off], [off, dy]]).unwrap();
        let q = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let velocity = vec![q; mesh.n_triangles()];
        let m = assemble_mass(&mesh, false);
        let lumped = lumped_mass_diagonal(&mesh);
        let kd = assemble_stiffness(&mesh, &d);
        let ka = assemble_advection(&mesh, &velocity).unwrap();
        let free = mesh.free_nodes();
        let unshifted = CsrMatrix::linear_combination(&[(1.0, &kd), (1.0, &ka)]).unwrap();
        let shift = coercivity_shift(
            &unshifted.submatrix(&free, &free),
            &m.submatrix(&free, &free),
            &d,
            Some(&velocity),
        )
        .unwrap();
        let op = compose_operator(m, lumped, &kd, Some(&ka), shift).unwrap();
        let dt = 10f64.powf(rng.random_range(-3.0..0.0));
        let a = CsrMatrix::linear_combination(&[(1.0, &op.mass), (dt, &op.stiffness)])
            .unwrap()
            .submatrix(&free, &free);
        let b: Vec<f64> = (0..a.nrows()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ilu = Ilu0::new(&a).unwrap();
        let (x, _) = bicgstab(&a, &b, Some(&ilu), 1e-12, 1000, None).unwrap();
        let xd = dense_solve(&a.to_dense(), &b).unwrap();
        let num: f64 = x.iter().zip(&xd).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let den: f64 = xd.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(num / den);
        largest = largest.max(a.nrows());
    }
    Outcome {
        id: "7",
        name: "solver oracle equivalence",
        pass: worst < 1e-8,
        detail: format!("50 systems (largest {largest}), worst relative difference {worst:.2e} (tol 1e-8)"),
    }
}

fn criterion_comparison(additive16: &ConvergenceReport) -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for (kind, band) in [(NoiseKind::Additive, ADDITIVE_BAND), (NoiseKind::Multiplicative, MULTIPLICATIVE_BAND)] {
        let report = run_study(&study_config(kind, 8, vec![Scheme::Sros, Scheme::ExpoRosenbrock])).unwrap();
        let timing = timing_profile(&report);
        pass &= timing.len() == 8 && timing.iter().all(|t| t.mean_cpu_s > 0.0);
        for s in &report.schemes {
            let order = s.fit.map(|f| f.order).unwrap_or(f64::NAN);
            pass &= in_band(order, band);
            lines.push(format!("{kind:?} {} order {order:.3}", s.scheme));
        }
    }
    let timing = timing_profile(additive16);
    let proxy_ok = timing
        .iter()
        .filter(|t| t.scheme == Scheme::Sros)
        .all(|t| t.mean_iterations <= t.cost_proxy as f64);
    pass &= proxy_ok;
    Outcome {
        id: "8",
        name: "timing table and SROS vs exponential order class (8x8)",
        pass,
        detail: format!(
            "{}; SROS iterations <= nodes x steps on 16x16: {proxy_ok}; {:.1}s",
            lines.join(", "),
            start.elapsed().as_secs_f64()
        ),
    }
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut outcomes = Vec::new();
    let mut run = |o: Outcome| {
        println!(
            "[{}] criterion {:<3} {}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail
        );
        outcomes.push(o.pass);
    };
    run(criterion_stability());
    run(criterion_affine());
    run(criterion_heat_decay());
    run(criterion_noise());
    run(criterion_solver());
    let (additive, report) = criterion_additive();
    run(additive);
    run(criterion_multiplicative());
    run(criterion_truncation());
    run(criterion_comparison(&report));
    println!("[INFO] criterion 9  spatial order: outside measured scope; spatial machinery covered by criteria 4, 5 and unit tests");
    let failed = outcomes.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

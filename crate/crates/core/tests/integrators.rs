use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sros_core::harness::fit_order;
use sros_core::integrators::{integrate, NoiseInput, SchemeConfig, StepContext};
use sros_core::linsolve::SolverSettings;
use sros_core::noise::{NoiseKind, NoisePath};
use sros_core::operators::Drift;
use sros_core::problem::{noise_spec, DomainSpec, Problem, ProblemSpec};
use sros_core::Scheme;

fn problem(n: usize, drift: Drift, kind: NoiseKind) -> Problem {
    let mut spec = ProblemSpec {
        domain: DomainSpec {
            nx: n,
            ny: n,
            ..DomainSpec::default()
        },
        drift,
        ..ProblemSpec::default()
    };
    spec.noise.kind = kind;
    spec.noise.n1 = 12;
    spec.noise.n2 = 12;
    Problem::assemble(&spec, 3).unwrap()
}

fn tight() -> SolverSettings {
    SolverSettings {
        tol: 1e-14,
        ..SolverSettings::default()
    }
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

#[test]
fn first_step_from_rest_matches_dense_oracle() {
    let p = problem(2, Drift::default(), NoiseKind::Additive);
    let s = &p.system;
    let dt = 0.1;
    let dw: Vec<f64> = (0..s.dim()).map(|i| 0.1 * (i as f64 + 1.0).sin()).collect();
    let ctx = StepContext::new(s, dt, tight()).unwrap();
    let x1 = ctx.sros_step(&vec![0.0; s.dim()], &dw).unwrap().0;

    // J(0) = f'(0) − c0 = 10 − c0 for the reactive drift.
    let jac0 = 10.0 - p.shift();
    let ml = DVector::from_column_slice(&s.lumped_mass);
    let a = s.mass.to_dense() + s.stiffness.to_dense() * dt + DMatrix::from_diagonal(&(&ml * (dt * jac0)));
    // G(0) = −F(0) + J·0 vanishes up to the shift term, which is zero at 0.
    let rhs = DVector::from_iterator(s.dim(), (0..s.dim()).map(|i| dt * s.lifting[i] + ml[i] * dw[i]));
    let oracle = a.lu().solve(&rhs).unwrap();
    assert!(rel_diff(&x1, oracle.as_slice()) < 1e-12);
}

#[test]
fn heat_step_is_shared_by_sros_and_semi_implicit() {
    let p = problem(5, Drift::Zero, NoiseKind::Additive);
    let s = &p.system;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(0.0..1.0)).collect();
    let zero = vec![0.0; s.dim()];
    let ctx = StepContext::new(s, 0.02, tight()).unwrap();
    let a = ctx.sros_step(&x0, &zero).unwrap().0;
    let b = ctx.semi_implicit_step(&x0, &zero).unwrap().0;
    assert!(rel_diff(&a, &b) < 1e-12);

    let mut rhs = s.mass.mul_vec(&x0).unwrap();
    for (r, g) in rhs.iter_mut().zip(&s.lifting) {
        *r += 0.02 * g;
    }
    let ml = DVector::from_column_slice(&s.lumped_mass);
    let unshifted = s.stiffness.to_dense() - DMatrix::from_diagonal(&(ml * p.shift()));
    let dense = s.mass.to_dense() + unshifted * 0.02;
    let oracle = dense.lu().solve(&DVector::from_vec(rhs)).unwrap();
    assert!(rel_diff(&a, oracle.as_slice()) < 1e-12);
}

/// Affine drift: the SROS trajectory is the fully implicit Euler trajectory.
#[test]
fn affine_problems_follow_implicit_euler_trajectory() {
    let p = problem(4, Drift::Affine { alpha: 0.3, c: 2.0 }, NoiseKind::Multiplicative);
    let s = &p.system;
    let dt = 1.0 / 16.0;
    let spec = noise_spec(&p.spec, 8);
    let path = NoisePath::sample(&spec, 0.5, 8, 0).unwrap();
    let ctx = StepContext::new(s, dt, tight()).unwrap();
    let cfg = SchemeConfig {
        solver: tight(),
        keep_history: true,
        ..SchemeConfig::new(Scheme::Sros, dt, 0.5)
    };
    let noise = NoiseInput::Path {
        path: &path,
        table: &p.noise_table,
    };
    let traj = integrate(&ctx, &vec![0.2; s.dim()], &noise, &cfg).unwrap();
    let states = traj.states.unwrap();

    let ml = DVector::from_column_slice(&s.lumped_mass);
    // The shift cancels: K' + M_lump (c − c0) = K + c M_lump.
    let lhs = s.mass.to_dense()
        + s.stiffness.to_dense() * dt
        + DMatrix::from_diagonal(&(&ml * (dt * (2.0 - p.shift()))));
    let lu = lhs.lu();
    let mut x = DVector::from_element(s.dim(), 0.2);
    for (m, state) in states.iter().enumerate().skip(1) {
        let dw = p.noise_table.increment_field(&path.step(m - 1)).unwrap();
        let rhs = s.mass.to_dense() * &x
            + DVector::from_iterator(
                s.dim(),
                (0..s.dim()).map(|i| dt * (s.lifting[i] - ml[i] * 0.3) + ml[i] * x[i] * dw[i]),
            );
        x = lu.solve(&rhs).unwrap();
        assert!(rel_diff(state, x.as_slice()) < 1e-10, "step {m}");
    }
}

#[test]
fn one_solve_per_step_and_bitwise_determinism() {
    let p = problem(6, Drift::default(), NoiseKind::Multiplicative);
    let spec = noise_spec(&p.spec, 21);
    let path = NoisePath::sample(&spec, 1.0, 32, 4).unwrap();
    let ctx = StepContext::new(&p.system, 1.0 / 32.0, SolverSettings::default()).unwrap();
    let cfg = SchemeConfig::new(Scheme::Sros, 1.0 / 32.0, 1.0);
    let noise = NoiseInput::Path {
        path: &path,
        table: &p.noise_table,
    };
    let x0 = p.initial_state().unwrap();
    let a = integrate(&ctx, &x0, &noise, &cfg).unwrap();
    let b = integrate(&ctx, &x0, &noise, &cfg).unwrap();
    assert_eq!(a.diagnostics.len(), 32);
    assert!(a.diagnostics.iter().all(|r| r.converged && r.iterations >= 1));
    assert_eq!(
        a.final_state.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.final_state.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(a.times.len(), 33);
    assert!((a.times[32] - 1.0).abs() < 1e-15);
}

/// The exponential and Rosenbrock steps share their linearization, so they
/// differ by O(dt²) per step.
#[test]
fn exponential_and_sros_steps_agree_to_second_order() {
    let p = problem(4, Drift::default(), NoiseKind::Additive);
    let s = &p.system;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x0: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(0.0..1.0)).collect();
    let zero = vec![0.0; s.dim()];
    let diffs: Vec<f64> = [1e-3, 5e-4, 2.5e-4]
        .iter()
        .map(|&dt| {
            let ctx = StepContext::new(s, dt, tight()).unwrap().with_exponential().unwrap();
            let a = ctx.sros_step(&x0, &zero).unwrap().0;
            let b = ctx.expo_rosenbrock_step(&x0, &zero).unwrap();
            a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    for w in diffs.windows(2) {
        let ratio = w[0] / w[1];
        assert!(ratio > 3.5 && ratio < 4.5, "{diffs:?}");
    }
}

#[test]
fn exponential_scheme_is_capped() {
    let p = problem(48, Drift::default(), NoiseKind::Additive);
    assert!(p.system.dim() > 2000);
    let err = StepContext::new(&p.system, 0.1, SolverSettings::default())
        .unwrap()
        .with_exponential()
        .unwrap_err();
    assert!(matches!(err, sros_core::Error::Unsupported(_)));
}

#[test]
fn step_errors_carry_the_step_index() {
    let p = problem(3, Drift::default(), NoiseKind::Additive);
    let ctx = StepContext::new(&p.system, 0.25, SolverSettings::default()).unwrap();
    let cfg = SchemeConfig::new(Scheme::Sros, 0.25, 1.0);
    // The reactive drift is undefined at u = −1.
    let err = integrate(&ctx, &vec![-1.0; p.system.dim()], &NoiseInput::None, &cfg).unwrap_err();
    assert!(matches!(err, sros_core::Error::Step { step: 0, .. }), "{err}");
}

/// Linear additive problem: successive differences under path coupling decay
/// at a rate of at least 0.9. Steps start where `λ_max Δt` is of order one;
/// coarser steps are still pre-asymptotic on this mesh.
#[test]
fn richardson_rate_on_linear_additive_problem() {
    const FINE: usize = 8192;
    let mut spec = ProblemSpec {
        drift: Drift::Zero,
        ..ProblemSpec::default()
    };
    spec.noise.kind = NoiseKind::Additive;
    let p = Problem::assemble(&spec, 0).unwrap();
    assert_eq!(p.mesh.n_nodes(), 17 * 17);
    let nspec = noise_spec(&spec, 17);
    let dts: Vec<f64> = (9..=13).map(|k| 1.0 / (1u32 << k) as f64).collect();
    let contexts: Vec<_> = dts
        .iter()
        .map(|&dt| StepContext::new(&p.system, dt, SolverSettings::default()).unwrap())
        .collect();
    let x0 = p.initial_state().unwrap();
    let mut sq = vec![0.0; dts.len() - 1];
    for r in 0..10 {
        let fine = NoisePath::sample(&nspec, 1.0, FINE, r).unwrap();
        let finals: Vec<Vec<f64>> = dts
            .iter()
            .zip(&contexts)
            .map(|(&dt, ctx)| {
                let path = fine.coarsen((dt * FINE as f64).round() as usize).unwrap();
                let noise = NoiseInput::Path {
                    path: &path,
                    table: &p.noise_table,
                };
                integrate(ctx, &x0, &noise, &SchemeConfig::new(Scheme::Sros, dt, 1.0))
                    .unwrap()
                    .final_state
            })
            .collect();
        for k in 0..sq.len() {
            let d: Vec<f64> = finals[k].iter().zip(&finals[k + 1]).map(|(a, b)| a - b).collect();
            sq[k] += p.system.mass.bilinear(&d, &d).unwrap();
        }
    }
    let points: Vec<(f64, f64)> = (0..sq.len()).map(|k| (dts[k], (sq[k] / 10.0).sqrt())).collect();
    let fit = fit_order(&points).unwrap();
    assert!(fit.order >= 0.9, "{points:?} -> {}", fit.order);
}

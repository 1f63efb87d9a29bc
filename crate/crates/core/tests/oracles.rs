//! Independent numerical oracles for the QP backend and the spectral radius.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};
use rand::Rng;

use scg_core::control::mpc::{condense, linearize_along};
use scg_core::control::qp::QpProblem;
use scg_core::control::{build_envelope, EnvelopeGeometry, MpcProblem, RoadSpec, SafetyMargins};
use scg_core::dynamics::{ControlInput, PlantParams, VehicleState};
use scg_core::mjls::{mss_operator, spectral_radius, MjlsModel};
use scg_core::rng::{stream, Purpose};

/// Accelerated projected gradient ascent on the dual of
/// `min 1/2 z'Hz + g'z  s.t.  Az <= b`. Requires `H` positive definite.
fn dual_projected_gradient(p: &QpProblem) -> DVector<f64> {
    let h_inv = p.h.clone().try_inverse().expect("H invertible");
    let primal = |lam: &DVector<f64>| -(&h_inv * (&p.g + p.a.transpose() * lam));
    let m = p.b.len();
    if m == 0 {
        return primal(&DVector::zeros(0));
    }
    let gram = &p.a * &h_inv * p.a.transpose();
    let lipschitz = gram.symmetric_eigenvalues().amax().max(1e-12);
    let step = 1.0 / lipschitz;
    let mut lam = DVector::<f64>::zeros(m);
    let mut y = lam.clone();
    let mut t = 1.0f64;
    for _ in 0..2_000_000 {
        let grad = &p.a * primal(&y) - &p.b;
        let next = (&y + grad * step).map(|v| v.max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &lam) * ((t - 1.0) / t_next);
        let moved = (&next - &lam).amax();
        lam = next;
        t = t_next;
        if moved < 1e-15 {
            break;
        }
    }
    primal(&lam)
}

fn assert_close(z: &DVector<f64>, oracle: &DVector<f64>) {
    let scale = oracle.amax().max(1e-3);
    let err = (z - oracle).amax() / scale;
    assert!(err < 1e-6, "relative error {err:.3e}\nsolver {z}\noracle {oracle}");
}

#[test]
fn box_constrained_qp_matches_dual_oracle() {
    let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
    let g = DVector::from_vec(vec![-8.0, 3.0, -1.0]);
    let mut a = DMatrix::zeros(6, 3);
    for i in 0..3 {
        a[(2 * i, i)] = 1.0;
        a[(2 * i + 1, i)] = -1.0;
    }
    let b = DVector::from_element(6, 1.0);
    let p = QpProblem { h, g, a, b };
    let sol = p.solve().unwrap().unwrap();
    assert!(!sol.active.is_empty());
    assert_close(&sol.z, &dual_projected_gradient(&p));
}

#[test]
fn general_inequality_qp_matches_dual_oracle() {
    let mut rng = stream(11, Purpose::Misc, &[100]);
    let n = 5;
    let m = 7;
    let f = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &f * f.transpose() + DMatrix::identity(n, n) * 0.5;
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let b = DVector::from_fn(m, |_, _| rng.gen_range(-0.2..0.5));
    let p = QpProblem { h, g, a, b };
    let sol = p.solve().unwrap().unwrap();
    assert!(!sol.active.is_empty());
    assert!(p.max_violation(&sol.z) < 1e-9);
    assert_close(&sol.z, &dual_projected_gradient(&p));
}

#[test]
fn condensed_mpc_qp_matches_dual_oracle() {
    let plant = PlantParams::default();
    let ts = plant.ts;
    let problem = MpcProblem {
        np: 12,
        nc: 3,
        q: Matrix4::from_diagonal(&Vector4::new(0.0, 1.0, 0.0, 1.0)),
        r: Matrix2::from_diagonal(&Vector2::new(0.1, 0.1)),
        u_max: [f64::INFINITY, f64::INFINITY],
        du_max: [30.0, std::f64::consts::PI / 30.0 * ts],
        x_ref: Vector4::new(0.0, 0.0, 0.0, 15.0),
        u_ref: Vector2::zeros(),
    };
    let x0 = VehicleState::new(30.0, 3.0, 0.0, 14.0);
    let u_prev = ControlInput::ZERO;
    let (_, models) = linearize_along(&x0, &vec![u_prev; problem.np], &plant).unwrap();
    let geometry = EnvelopeGeometry::new(RoadSpec::default(), SafetyMargins::for_plant(&plant), &plant);
    let env = build_envelope(&x0, None, &geometry, problem.np, ts);
    let cond = condense(&x0, &u_prev, &problem, &models, &env).unwrap();
    // Solve in scaled coordinates so the oracle sees a well-conditioned dual.
    let n = cond.qp.dim();
    let scale = DVector::from_fn(n, |i, _| problem.du_max[i % 2]);
    let d = DMatrix::from_diagonal(&scale);
    let scaled = QpProblem {
        h: &d * &cond.qp.h * &d,
        g: &d * &cond.qp.g,
        a: &cond.qp.a * &d,
        b: cond.qp.b.clone(),
    };
    let sol = cond.qp.solve().unwrap().unwrap();
    assert!(!sol.active.is_empty(), "rate limit expected active");
    let oracle = dual_projected_gradient(&scaled).component_mul(&scale);
    let rel = (&sol.z - &oracle).component_div(&scale).amax();
    assert!(rel < 1e-6, "relative error {rel:.3e}");
}

/// Unshifted QR iteration with modified Gram-Schmidt; returns the leading
/// diagonal entry, which converges to the Perron root of a positive matrix.
fn qr_iteration_perron(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut a = m.clone();
    for _ in 0..5000 {
        let mut q = a.clone();
        let mut r = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            for i in 0..j {
                let dot = q.column(i).dot(&q.column(j));
                r[(i, j)] = dot;
                let qi = q.column(i).into_owned();
                q.column_mut(j).axpy(-dot, &qi, 1.0);
            }
            let norm = q.column(j).norm();
            r[(j, j)] = norm;
            q.column_mut(j).scale_mut(1.0 / norm);
        }
        a = r * q;
    }
    a[(0, 0)]
}

#[test]
fn spectral_radius_matches_qr_iteration() {
    let mut rng = stream(5, Purpose::Misc, &[101]);
    for _ in 0..50 {
        let m = DMatrix::from_fn(9, 9, |_, _| rng.gen_range(0.01..1.0));
        let oracle = qr_iteration_perron(&m);
        let rho = spectral_radius(&m).unwrap();
        assert!((rho - oracle).abs() < 1e-8 * oracle, "{rho} vs {oracle}");
    }
}

#[test]
fn matrix_mode_operator_matches_qr_iteration() {
    let mut rng = stream(6, Purpose::Misc, &[102]);
    for _ in 0..20 {
        let modes: Vec<DMatrix<f64>> =
            (0..3).map(|_| DMatrix::from_fn(2, 2, |_, _| rng.gen_range(0.05..0.9))).collect();
        let mut p = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(0.05..1.0));
        for i in 0..3 {
            let s: f64 = p.row(i).sum();
            p.row_mut(i).scale_mut(1.0 / s);
        }
        let op = mss_operator(&MjlsModel::new(modes, p).unwrap());
        assert_eq!(op.nrows(), 12);
        let oracle = qr_iteration_perron(&op);
        let rho = spectral_radius(&op).unwrap();
        assert!((rho - oracle).abs() < 1e-8 * oracle, "{rho} vs {oracle}");
    }
}

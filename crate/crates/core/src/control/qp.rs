//! Dense convex QP `min 1/2 z'Hz + g'z  s.t.  A z <= b`, solved with the
//! Goldfarb-Idnani dual active-set method from the `quadprog` crate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, ScgError};

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub active: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum QpOutcome {
    Infeasible,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }

    /// Largest constraint violation `max(A z - b)`, clipped at zero.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        if self.b.is_empty() {
            return 0.0;
        }
        (&self.a * z - &self.b).max().max(0.0)
    }

    /// `Ok(Err(Infeasible))` when the constraint set is empty.
    pub fn solve(&self) -> Result<std::result::Result<QpSolution, QpOutcome>> {
        let n = self.dim();
        let m = self.b.len();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(ScgError::Dimension { expected: n, got: self.h.nrows() });
        }
        if self.a.nrows() != m || (m > 0 && self.a.ncols() != n) {
            return Err(ScgError::Dimension { expected: m, got: self.a.nrows() });
        }
        let mut qmat: Vec<f64> = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                qmat.push(0.5 * (self.h[(i, j)] + self.h[(j, i)]));
            }
        }
        let mut amat: Vec<f64> = Vec::with_capacity(n * m);
        for i in 0..m {
            for j in 0..n {
                amat.push(self.a[(i, j)]);
            }
        }
        match quadprog::solve_qp(&mut qmat, self.g.as_slice(), &amat, self.b.as_slice(), 0, false) {
            Ok(sol) => {
                let z = DVector::from_vec(sol.sol);
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(ScgError::Solver("QP returned a non-finite iterate".into()));
                }
                let objective = self.objective(&z);
                Ok(Ok(QpSolution { z, objective, active: sol.iact }))
            }
            Err(quadprog::Error::Infeasible) => Ok(Err(QpOutcome::Infeasible)),
            Err(e) => Err(ScgError::Solver(e.to_string())),
        }
    }
}

//! The randomised ODE obtained by replacing `dW` with the derivative of a
//! truncated series:
//!
//! `dX/dt = ã(X) + b(X) Σᵢ Zᵢ φᵢ(t)`,
//!
//! where `ã = a + c` when the Stratonovich correction is applied, so that the
//! Wong–Zakai limit reproduces the Itô law of `dX = a dt + b dW`.

use nalgebra::DMatrix;

use crate::basis::{BasisSpec, CoefficientBlock};
use crate::model::{correction_into, SdeModel};
use crate::ode::{solve_ivp, OdeError, OdeRhs, SolverConfig};

/// Right-hand side of the randomised ODE for one coefficient block.
pub struct DrivenRhs<'a> {
    model: &'a dyn SdeModel,
    basis: &'a BasisSpec,
    coeffs: &'a CoefficientBlock,
    correct: bool,
    b: DMatrix<f64>,
    phi: Vec<f64>,
    wdot: Vec<f64>,
    corr: Vec<f64>,
}

impl<'a> DrivenRhs<'a> {
    pub fn new(model: &'a dyn SdeModel, basis: &'a BasisSpec, coeffs: &'a CoefficientBlock, correct: bool) -> Self {
        let n = model.state_dim();
        let d = model.noise_dim();
        assert_eq!(coeffs.z.ncols(), d, "coefficient block has wrong noise dimension");
        assert_eq!(coeffs.z.nrows(), basis.order(), "coefficient block has wrong order");
        Self {
            model,
            basis,
            coeffs,
            correct,
            b: DMatrix::zeros(n, d),
            phi: vec![0.0; basis.order()],
            wdot: vec![0.0; d],
            corr: vec![0.0; n],
        }
    }
}

impl OdeRhs for DrivenRhs<'_> {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        self.model.drift(y, dy);
        self.model.diffusion(y, &mut self.b);
        if self.correct {
            correction_into(self.model, y, &self.b, &mut self.corr);
            for (o, c) in dy.iter_mut().zip(&self.corr) {
                *o += c;
            }
        }
        self.basis.eval_all(t, &mut self.phi);
        let z = &self.coeffs.z;
        for (k, w) in self.wdot.iter_mut().enumerate() {
            *w = self.phi.iter().enumerate().map(|(i, p)| z[(i, k)] * p).sum();
        }
        let (n, d) = self.b.shape();
        for i in 0..n {
            let mut acc = 0.0;
            for k in 0..d {
                acc += self.b[(i, k)] * self.wdot[k];
            }
            dy[i] += acc;
        }
    }
}

/// Solves the randomised ODE on `[0, T]` (the basis horizon) from `x0`.
pub fn solve_randomised_ode(
    model: &dyn SdeModel,
    basis: &BasisSpec,
    coeffs: &CoefficientBlock,
    x0: &[f64],
    cfg: &SolverConfig,
    correct: bool,
) -> Result<Vec<f64>, OdeError> {
    let mut rhs = DrivenRhs::new(model, basis, coeffs, correct);
    solve_ivp(&mut rhs, x0, 0.0, basis.horizon(), cfg)
}

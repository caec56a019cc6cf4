use crate::activation::ActivationSpec;
use crate::linalg::{norm_inf2, Mat2, Vec2};
use crate::nn::{Evaluator, ForwardPass, WeightStack};
use crate::{Error, Result, Scalar};

use super::{OdeModelConfig, TimeGrid, Trajectory};

/// Right-hand side `F` of an autonomous planar system `ż = F(z)`.
pub trait Dynamics<T: Scalar> {
    fn rhs(&mut self, z: Vec2<T>) -> Vec2<T>;

    /// `(F(z), ∇F(z))`.
    fn rhs_and_jacobian(&mut self, z: Vec2<T>) -> (Vec2<T>, Mat2<T>);
}

/// `F(z) = f − Φ(z) − (0, δw)` for a network reaction term.
///
/// Exact ReLU is accepted here; Newton then uses the `ρ′(0) = 0` element of
/// the generalized Jacobian.
pub struct NetworkDynamics<'a, T: Scalar> {
    eval: Evaluator<'a, T>,
    model: OdeModelConfig<T>,
    pass: ForwardPass<T>,
}

impl<'a, T: Scalar> NetworkDynamics<'a, T> {
    pub fn new(weights: &'a WeightStack<T>, act: ActivationSpec<T>, model: OdeModelConfig<T>) -> Result<Self> {
        model.validate()?;
        let eval = Evaluator::new(weights, act);
        Ok(NetworkDynamics {
            pass: eval.new_pass(),
            eval,
            model,
        })
    }

    fn combine(&self, phi: Vec2<T>, z: Vec2<T>) -> Vec2<T> {
        [self.model.f_v - phi[0], self.model.f_w - self.model.delta * z[1] - phi[1]]
    }
}

impl<T: Scalar> Dynamics<T> for NetworkDynamics<'_, T> {
    fn rhs(&mut self, z: Vec2<T>) -> Vec2<T> {
        let phi = self.eval.forward_into(z, &mut self.pass);
        self.combine(phi, z)
    }

    fn rhs_and_jacobian(&mut self, z: Vec2<T>) -> (Vec2<T>, Mat2<T>) {
        let phi = self.eval.forward_into(z, &mut self.pass);
        let j = self.eval.jacobian(&self.pass);
        let m = Mat2([
            [-j.0[0][0], -j.0[0][1]],
            [-j.0[1][0], -j.0[1][1] - self.model.delta],
        ]);
        (self.combine(phi, z), m)
    }
}

/// Newton stopping rule for the implicit step: `‖residual‖_∞ ≤ tol`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig<T> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for NewtonConfig<T> {
    fn default() -> Self {
        // Keep the tolerance reachable in single precision.
        let floor = T::epsilon() * T::lit(1e3);
        NewtonConfig {
            tol: T::lit(1e-10).max(floor),
            max_iter: 25,
        }
    }
}

/// Convergence record of one time step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonStep<T> {
    pub iterations: usize,
    pub residual: T,
}

/// Trajectory plus per-step Newton diagnostics.
#[derive(Clone, Debug)]
pub struct Simulation<T> {
    pub trajectory: Trajectory<T>,
    pub steps: Vec<NewtonStep<T>>,
}

impl<T: Scalar> Simulation<T> {
    pub fn max_residual(&self) -> T {
        self.steps.iter().fold(T::zero(), |m, s| m.max(s.residual))
    }
}

/// Crank–Nicolson time stepping
/// `z_{k+1} − z_k − dt/2 (F(z_k) + F(z_{k+1})) = 0`, each step solved by
/// Newton from `z_k`.
///
/// After the tolerance is met one further Newton update is tried and kept
/// when it does not increase the residual, so the discrete relation holds to
/// rounding level.
pub fn simulate_cn<T: Scalar, D: Dynamics<T>>(
    dynamics: &mut D,
    z0: Vec2<T>,
    grid: &TimeGrid<T>,
    newton: &NewtonConfig<T>,
) -> Result<Simulation<T>> {
    if !z0.iter().all(|x| x.is_finite()) {
        return Err(Error::Domain("initial condition must be finite".into()));
    }
    let half = grid.dt() * T::lit(0.5);
    let mut states = Vec::with_capacity(grid.n_nodes());
    let mut steps = Vec::with_capacity(grid.n_steps());
    states.push(z0);
    let mut zk = z0;
    let mut f_prev = dynamics.rhs(z0);
    let eye = Mat2::identity();

    for step in 0..grid.n_steps() {
        let base = [zk[0] + half * f_prev[0], zk[1] + half * f_prev[1]];
        let residual = |z: Vec2<T>, f: Vec2<T>| [z[0] - base[0] - half * f[0], z[1] - base[1] - half * f[1]];

        let mut z = zk;
        let (mut f, mut jac) = dynamics.rhs_and_jacobian(z);
        let mut r = residual(z, f);
        let mut res = norm_inf2(r);
        let mut iterations = 0;
        while !(res <= newton.tol) {
            if iterations == newton.max_iter || !res.is_finite() {
                return Err(Error::Newton {
                    step,
                    residual: res.to_f64_lossy(),
                });
            }
            let m = eye.add(&jac.scale(-half));
            let d = m.solve([-r[0], -r[1]]).ok_or(Error::Singular { step })?;
            z = [z[0] + d[0], z[1] + d[1]];
            (f, jac) = dynamics.rhs_and_jacobian(z);
            r = residual(z, f);
            res = norm_inf2(r);
            iterations += 1;
        }
        if res > T::zero() {
            let m = eye.add(&jac.scale(-half));
            if let Some(d) = m.solve([-r[0], -r[1]]) {
                let z2 = [z[0] + d[0], z[1] + d[1]];
                let f2 = dynamics.rhs(z2);
                let res2 = norm_inf2(residual(z2, f2));
                if res2 <= res {
                    z = z2;
                    f = f2;
                    res = res2;
                }
            }
        }
        steps.push(NewtonStep { iterations, residual: res });
        states.push(z);
        zk = z;
        f_prev = f;
    }
    Ok(Simulation {
        trajectory: Trajectory::new(*grid, states)?,
        steps,
    })
}

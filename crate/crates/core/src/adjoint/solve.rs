use rayon::prelude::*;

use crate::activation::ActivationSpec;
use crate::forward::{OdeModelConfig, TimeGrid, Trajectory};
use crate::linalg::{Mat2, Vec2};
use crate::nn::{Evaluator, WeightGradient, WeightStack};
use crate::{Error, Result, Scalar};

use super::Objective;

/// Costates `p_n` and multipliers `μ_n = ∇_zΦ(z_n)ᵀ p_n` at every time node.
///
/// The gradient is `Σ_n dt·ω_n (∂Φ/∂W)(z_n)ᵀ p_n + 2αW` with trapezoidal
/// weights for either adjoint mode.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointTrajectory<T> {
    grid: TimeGrid<T>,
    costates: Vec<Vec2<T>>,
    mu: Vec<Vec2<T>>,
}

impl<T: Scalar> AdjointTrajectory<T> {
    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn costates(&self) -> &[Vec2<T>] {
        &self.costates
    }

    pub fn mu(&self) -> &[Vec2<T>] {
        &self.mu
    }

    /// `max_n |p_n|_∞`.
    pub fn sup_norm(&self) -> T {
        self.costates
            .iter()
            .flatten()
            .fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// `(∫ |μ|² dt)^{1/2}` by the trapezoidal rule.
    pub fn mu_l2(&self) -> T {
        let s: T = self
            .mu
            .iter()
            .enumerate()
            .map(|(n, m)| self.grid.trapezoid_weight(n) * (m[0] * m[0] + m[1] * m[1]))
            .sum();
        (s * self.grid.dt()).sqrt()
    }
}

struct Linearization<T> {
    /// `∇_zΦ(z_n)` per node.
    jac: Vec<Mat2<T>>,
    /// `z_n − d_n` per node.
    misfit: Vec<Vec2<T>>,
}

fn linearize<T: Scalar>(
    traj: &Trajectory<T>,
    data: &Trajectory<T>,
    w: &WeightStack<T>,
    act: &ActivationSpec<T>,
) -> Result<Linearization<T>> {
    if traj.grid() != data.grid() {
        return Err(Error::Shape("state and data trajectories use different grids".into()));
    }
    let eval = Evaluator::differentiable(w, *act)?;
    let mut pass = eval.new_pass();
    let jac = traj
        .states()
        .iter()
        .map(|&z| {
            eval.forward_into(z, &mut pass);
            eval.jacobian(&pass)
        })
        .collect();
    let misfit = traj
        .states()
        .iter()
        .zip(data.states())
        .map(|(z, d)| [z[0] - d[0], z[1] - d[1]])
        .collect();
    Ok(Linearization { jac, misfit })
}

fn finish<T: Scalar>(grid: TimeGrid<T>, costates: Vec<Vec2<T>>, jac: &[Mat2<T>]) -> AdjointTrajectory<T> {
    let mu = costates
        .iter()
        .zip(jac)
        .map(|(p, j)| j.transpose().apply(*p))
        .collect();
    AdjointTrajectory { grid, costates, mu }
}

/// Implicit Euler, backward in time, on the continuous adjoint
/// `−ṗ + Kᵀp = −(z − z_data)`, `K = ∇_zΦ + diag(0, δ)`,
/// `p(T) = −terminal_weight·(z(T) − z_data(T))`:
/// `(I + dt·K_nᵀ) p_n = p_{n+1} − dt·(z_n − d_n)`.
pub fn adjoint_solve_paper<T: Scalar>(
    traj: &Trajectory<T>,
    data: &Trajectory<T>,
    w: &WeightStack<T>,
    act: &ActivationSpec<T>,
    model: &OdeModelConfig<T>,
    obj: &Objective<T>,
) -> Result<AdjointTrajectory<T>> {
    let lin = linearize(traj, data, w, act)?;
    let grid = *traj.grid();
    let n_steps = grid.n_steps();
    let h = grid.dt();
    let delta = Mat2::diag(T::zero(), model.delta);
    let eye = Mat2::identity();

    let mut p = vec![[T::zero(); 2]; grid.n_nodes()];
    let e = lin.misfit[n_steps];
    p[n_steps] = [-obj.terminal_weight * e[0], -obj.terminal_weight * e[1]];
    for n in (0..n_steps).rev() {
        let k = lin.jac[n].add(&delta);
        let m = eye.add(&k.transpose().scale(h));
        let e = lin.misfit[n];
        let rhs = [p[n + 1][0] - h * e[0], p[n + 1][1] - h * e[1]];
        p[n] = m.solve(rhs).ok_or(Error::Singular { step: n })?;
    }
    Ok(finish(grid, p, &lin.jac))
}

/// Exact transpose of the Crank–Nicolson scheme.
///
/// With `M_n = ∇F(z_n) = −∇_zΦ(z_n) − diag(0, δ)` and
/// `r_n = ∂J/∂z_n = dt·ω_n (z_n − d_n)` (plus the terminal cost at `N`), the
/// step multipliers solve
///
/// ```text
/// (I − dt/2·M_N)ᵀ λ_N = −r_N
/// (I − dt/2·M_n)ᵀ λ_n = (I + dt/2·M_n)ᵀ λ_{n+1} − r_n,   n = N−1, …, 1
/// ```
///
/// and the node costates are `p_0 = λ_1`, `p_n = (λ_n + λ_{n+1})/2`,
/// `p_N = λ_N`, which turns the trapezoidal gradient contraction into the
/// exact derivative of the discrete objective.
pub fn adjoint_solve_discrete<T: Scalar>(
    traj: &Trajectory<T>,
    data: &Trajectory<T>,
    w: &WeightStack<T>,
    act: &ActivationSpec<T>,
    model: &OdeModelConfig<T>,
    obj: &Objective<T>,
) -> Result<AdjointTrajectory<T>> {
    let lin = linearize(traj, data, w, act)?;
    let grid = *traj.grid();
    let n_steps = grid.n_steps();
    let h = grid.dt();
    let half = h * T::lit(0.5);
    let eye = Mat2::identity();
    let delta = Mat2::diag(T::zero(), model.delta);

    let r = |n: usize| {
        let e = lin.misfit[n];
        let mut s = h * grid.trapezoid_weight(n);
        if n == n_steps {
            s += obj.terminal_weight;
        }
        [s * e[0], s * e[1]]
    };
    let m = |n: usize| lin.jac[n].add(&delta).scale(-T::one());

    // lambda[n] multiplies the step z_{n−1} → z_n; lambda[0] is unused.
    let mut lambda = vec![[T::zero(); 2]; grid.n_nodes()];
    let rn = r(n_steps);
    let lhs = eye.add(&m(n_steps).scale(-half)).transpose();
    lambda[n_steps] = lhs.solve([-rn[0], -rn[1]]).ok_or(Error::Singular { step: n_steps })?;
    for n in (1..n_steps).rev() {
        let mn = m(n);
        let lhs = eye.add(&mn.scale(-half)).transpose();
        let carry = eye.add(&mn.scale(half)).transpose().apply(lambda[n + 1]);
        let rn = r(n);
        lambda[n] = lhs
            .solve([carry[0] - rn[0], carry[1] - rn[1]])
            .ok_or(Error::Singular { step: n })?;
    }

    let two = T::lit(2.0);
    let p = (0..grid.n_nodes())
        .map(|n| {
            if n == 0 {
                lambda[1]
            } else if n == n_steps {
                lambda[n_steps]
            } else {
                [
                    (lambda[n][0] + lambda[n + 1][0]) / two,
                    (lambda[n][1] + lambda[n + 1][1]) / two,
                ]
            }
        })
        .collect();
    Ok(finish(grid, p, &lin.jac))
}

/// `∂J/∂W = Σ_k Σ_n dt·ω_n (∂Φ/∂W)(z_{k,n})ᵀ p_{k,n} + 2αW`, summed in
/// trajectory order.
pub fn assemble_gradient<T: Scalar>(
    w: &WeightStack<T>,
    act: &ActivationSpec<T>,
    trajs: &[Trajectory<T>],
    adjoints: &[AdjointTrajectory<T>],
    obj: &Objective<T>,
) -> Result<WeightGradient<T>> {
    if trajs.len() != adjoints.len() {
        return Err(Error::Shape(format!(
            "{} trajectories but {} adjoints",
            trajs.len(),
            adjoints.len()
        )));
    }
    for (k, (z, p)) in trajs.iter().zip(adjoints).enumerate() {
        if z.grid() != p.grid() {
            return Err(Error::Shape(format!("trajectory {k}: state and adjoint grids differ")));
        }
    }
    let eval = Evaluator::differentiable(w, *act)?;
    let parts: Vec<WeightGradient<T>> = trajs
        .par_iter()
        .zip(adjoints.par_iter())
        .map(|(z, p)| {
            let grid = z.grid();
            let h = grid.dt();
            let mut g = WeightGradient::zeros(w.arch());
            let mut pass = eval.new_pass();
            for (n, (&zn, &pn)) in z.states().iter().zip(p.costates()).enumerate() {
                if pn == [T::zero(); 2] {
                    continue;
                }
                eval.forward_into(zn, &mut pass);
                eval.accumulate_weight_grad(&pass, pn, h * grid.trapezoid_weight(n), &mut g);
            }
            g
        })
        .collect();
    let mut total = WeightGradient::zeros(w.arch());
    for g in &parts {
        total.add_scaled(T::one(), g);
    }
    total.add_scaled_weights(T::lit(2.0) * obj.alpha, w);
    Ok(total)
}

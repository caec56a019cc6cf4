//! Tracking objective, adjoint solves and weight-gradient assembly.
//!
//! Two adjoints are provided. [`AdjointMode::Paper`] integrates the continuous
//! adjoint `−ṗ + (∇Φ + diag(0, δ))ᵀ p = −(z − z_data)` backward with implicit
//! Euler, so its gradient is only first-order accurate in `dt`.
//! [`AdjointMode::Discrete`] is the exact transpose of the Crank–Nicolson
//! scheme and yields the gradient of the discrete objective.
//!
//! In both cases `∂J/∂W = Σ_k ∫ (∂Φ/∂W)ᵀ p_k dt + 2αW`.

mod kkt;
mod solve;

pub use kkt::{kkt_residual, least_squares_multiplier, KktReport};
pub use solve::{adjoint_solve_discrete, adjoint_solve_paper, assemble_gradient, AdjointTrajectory};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::forward::{simulate_cn, Dataset, NetworkDynamics, NewtonConfig, OdeModelConfig, TimeGrid, Trajectory};
use crate::nn::{weight_norm_sq, WeightGradient, WeightStack};
use crate::{Error, Result, Scalar};

/// `J(W) = ½ Σ_k ∫ |z_k − z_data,k|² dt + α‖W‖² + terminal_weight · ½ Σ_k |z_k(T) − z_data,k(T)|²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective<T> {
    pub alpha: T,
    pub terminal_weight: T,
}

impl<T: Scalar> Objective<T> {
    pub fn new(alpha: T, terminal_weight: T) -> Result<Self> {
        let o = Objective { alpha, terminal_weight };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= T::zero()) || !self.alpha.is_finite() {
            return Err(Error::Domain(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.terminal_weight >= T::zero()) || !self.terminal_weight.is_finite() {
            return Err(Error::Domain(format!(
                "terminal weight must be >= 0, got {}",
                self.terminal_weight
            )));
        }
        Ok(())
    }
}

/// Which adjoint to use for gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjointMode {
    Paper,
    Discrete,
}

impl AdjointMode {
    pub fn name(self) -> &'static str {
        match self {
            AdjointMode::Paper => "paper",
            AdjointMode::Discrete => "discrete",
        }
    }
}

impl std::str::FromStr for AdjointMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(AdjointMode::Paper),
            "discrete" => Ok(AdjointMode::Discrete),
            _ => Err(Error::Usage(format!("unknown adjoint mode '{s}' (expected paper|discrete)"))),
        }
    }
}

/// Objective value with its parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveValue<T> {
    pub value: T,
    /// Tracking plus terminal cost of each trajectory.
    pub per_traj: Vec<T>,
    /// `α‖W‖²`.
    pub regularization: T,
}

impl<T: Scalar> ObjectiveValue<T> {
    pub fn misfit(&self) -> T {
        self.per_traj.iter().copied().sum()
    }
}

/// `½ Σ_n dt·ω_n |z_n − d_n|² + terminal_weight·½|z_N − d_N|²` with
/// trapezoidal weights `ω_0 = ω_N = ½`.
pub fn tracking_cost<T: Scalar>(traj: &Trajectory<T>, data: &Trajectory<T>, obj: &Objective<T>) -> Result<T> {
    if traj.grid() != data.grid() {
        return Err(Error::Shape("state and data trajectories use different grids".into()));
    }
    let grid = traj.grid();
    let half = T::lit(0.5);
    let mut sum = T::zero();
    for (n, (z, d)) in traj.states().iter().zip(data.states()).enumerate() {
        let e = [z[0] - d[0], z[1] - d[1]];
        sum += grid.trapezoid_weight(n) * (e[0] * e[0] + e[1] * e[1]);
    }
    let (z, d) = (traj.terminal(), data.terminal());
    let e = [z[0] - d[0], z[1] - d[1]];
    Ok(half * grid.dt() * sum + obj.terminal_weight * half * (e[0] * e[0] + e[1] * e[1]))
}

/// Everything needed to evaluate `J(W)` and its gradient for one dataset.
#[derive(Clone, Debug)]
pub struct Problem<T: Scalar> {
    dataset: Dataset<T>,
    model: OdeModelConfig<T>,
    act: ActivationSpec<T>,
    obj: Objective<T>,
    grid: TimeGrid<T>,
    newton: NewtonConfig<T>,
}

impl<T: Scalar> Problem<T> {
    /// The dataset is interpolated onto `grid` when it was sampled differently.
    pub fn new(
        dataset: &Dataset<T>,
        model: OdeModelConfig<T>,
        act: ActivationSpec<T>,
        obj: Objective<T>,
        grid: TimeGrid<T>,
        newton: NewtonConfig<T>,
    ) -> Result<Self> {
        model.validate()?;
        obj.validate()?;
        Ok(Problem {
            dataset: dataset.resampled(&grid)?,
            model,
            act,
            obj,
            grid,
            newton,
        })
    }

    pub fn dataset(&self) -> &Dataset<T> {
        &self.dataset
    }

    pub fn model(&self) -> &OdeModelConfig<T> {
        &self.model
    }

    pub fn activation(&self) -> &ActivationSpec<T> {
        &self.act
    }

    pub fn objective_spec(&self) -> &Objective<T> {
        &self.obj
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn newton(&self) -> &NewtonConfig<T> {
        &self.newton
    }

    /// Copy with a different regularization weight.
    pub fn with_objective(&self, obj: Objective<T>) -> Result<Self> {
        obj.validate()?;
        Ok(Problem { obj, ..self.clone() })
    }

    /// Copy on another time grid (data re-interpolated from the original).
    pub fn with_grid(&self, grid: TimeGrid<T>) -> Result<Self> {
        Ok(Problem {
            dataset: self.dataset.resampled(&grid)?,
            grid,
            ..self.clone()
        })
    }

    /// Simulates the network model from every initial condition.
    pub fn simulate(&self, w: &WeightStack<T>) -> Result<Vec<Trajectory<T>>> {
        self.dataset
            .entries()
            .par_iter()
            .map(|e| {
                let mut dynamics = NetworkDynamics::new(w, self.act, self.model)?;
                Ok(simulate_cn(&mut dynamics, e.z0, &self.grid, &self.newton)?.trajectory)
            })
            .collect()
    }

    fn value_from(&self, w: &WeightStack<T>, trajs: &[Trajectory<T>]) -> Result<ObjectiveValue<T>> {
        let per_traj = trajs
            .iter()
            .zip(self.dataset.entries())
            .map(|(z, e)| tracking_cost(z, &e.trajectory, &self.obj))
            .collect::<Result<Vec<_>>>()?;
        let regularization = self.obj.alpha * weight_norm_sq(w);
        let value = per_traj.iter().copied().sum::<T>() + regularization;
        Ok(ObjectiveValue {
            value,
            per_traj,
            regularization,
        })
    }

    pub fn objective(&self, w: &WeightStack<T>) -> Result<ObjectiveValue<T>> {
        let trajs = self.simulate(w)?;
        self.value_from(w, &trajs)
    }

    /// Objective, gradient and the simulated states.
    pub fn gradient(
        &self,
        w: &WeightStack<T>,
        mode: AdjointMode,
    ) -> Result<(ObjectiveValue<T>, WeightGradient<T>, Vec<Trajectory<T>>)> {
        self.act.require_c1()?;
        let trajs = self.simulate(w)?;
        let value = self.value_from(w, &trajs)?;
        let adjoints = self.adjoints(w, &trajs, mode)?;
        let grad = assemble_gradient(w, &self.act, &trajs, &adjoints, &self.obj)?;
        Ok((value, grad, trajs))
    }

    /// Adjoint trajectories for precomputed states.
    pub fn adjoints(
        &self,
        w: &WeightStack<T>,
        trajs: &[Trajectory<T>],
        mode: AdjointMode,
    ) -> Result<Vec<AdjointTrajectory<T>>> {
        if trajs.len() != self.dataset.len() {
            return Err(Error::Shape(format!(
                "{} trajectories for {} dataset entries",
                trajs.len(),
                self.dataset.len()
            )));
        }
        trajs
            .par_iter()
            .zip(self.dataset.entries().par_iter())
            .map(|(z, e)| match mode {
                AdjointMode::Paper => adjoint_solve_paper(z, &e.trajectory, w, &self.act, &self.model, &self.obj),
                AdjointMode::Discrete => {
                    adjoint_solve_discrete(z, &e.trajectory, w, &self.act, &self.model, &self.obj)
                }
            })
            .collect()
    }
}

/// Objective with default Newton settings on `grid`.
pub fn eval_objective<T: Scalar>(
    w: &WeightStack<T>,
    dataset: &Dataset<T>,
    model: &OdeModelConfig<T>,
    act: &ActivationSpec<T>,
    obj: &Objective<T>,
    grid: &TimeGrid<T>,
) -> Result<ObjectiveValue<T>> {
    Problem::new(dataset, *model, *act, *obj, *grid, NewtonConfig::default())?.objective(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{generate_dataset, DatasetEntry, FhParams};
    use crate::nn::NetworkArchitecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn objective_validation() {
        assert!(Objective::new(-1.0, 0.0).is_err());
        assert!(Objective::new(0.0, f64::NAN).is_err());
        assert!(Objective::new(0.01, 0.0).is_ok());
        assert_eq!("paper".parse::<AdjointMode>().unwrap(), AdjointMode::Paper);
        assert!("both".parse::<AdjointMode>().is_err());
    }

    #[test]
    fn zero_everything_gives_zero() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let data = Dataset::new(vec![DatasetEntry {
            z0: [0.0, 0.0],
            trajectory: Trajectory::constant(grid, [0.0, 0.0]),
        }])
        .unwrap();
        let w = WeightStack::zeros(&NetworkArchitecture::uniform(2, 2).unwrap());
        let model = OdeModelConfig { delta: 0.0, f_v: 0.0, f_w: 0.0 };
        let obj = Objective::new(0.0, 0.0).unwrap();
        let v = eval_objective(&w, &data, &model, &ActivationSpec::tanh(), &obj, &grid).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn planted_network_has_zero_misfit() {
        let arch = NetworkArchitecture::uniform(3, 3).unwrap();
        let w = WeightStack::<f64>::random(&arch, 0.5, &mut ChaCha8Rng::seed_from_u64(1));
        let act = ActivationSpec::tanh();
        let model = OdeModelConfig::paper();
        let grid = TimeGrid::new(5.0, 100).unwrap();
        let newton = NewtonConfig::default();
        let entries = [[0.0, 0.0], [1.0, -1.0]]
            .iter()
            .map(|&z0| {
                let mut d = NetworkDynamics::new(&w, act, model).unwrap();
                DatasetEntry {
                    z0,
                    trajectory: simulate_cn(&mut d, z0, &grid, &newton).unwrap().trajectory,
                }
            })
            .collect();
        let data = Dataset::new(entries).unwrap();
        let obj = Objective::new(0.01, 1.0).unwrap();
        let v = eval_objective(&w, &data, &model, &act, &obj, &grid).unwrap();
        assert!(v.misfit() <= 1e-16);
        assert!((v.value - 0.01 * weight_norm_sq(&w)).abs() < 1e-15);
    }

    #[test]
    fn objective_matches_independent_quadrature() {
        let grid = TimeGrid::<f64>::new(4.0, 80).unwrap();
        let newton = NewtonConfig::default();
        let data = generate_dataset(&FhParams::paper(), FhParams::paper_forcing(), &grid, &newton).unwrap();
        let arch = NetworkArchitecture::uniform(4, 2).unwrap();
        let w = WeightStack::random(&arch, 0.5, &mut ChaCha8Rng::seed_from_u64(9));
        let act = ActivationSpec::smoothed_relu(2.0).unwrap();
        let model = OdeModelConfig::paper();
        let obj = Objective::new(0.01, 0.0).unwrap();
        let problem = Problem::new(&data, model, act, obj, grid, newton).unwrap();
        let v = problem.objective(&w).unwrap();
        let trajs = problem.simulate(&w).unwrap();

        // Composite trapezoid as the sum of interval averages.
        let h = grid.dt();
        let mut want = 0.0;
        for (z, e) in trajs.iter().zip(data.entries()) {
            let sq: Vec<f64> = z
                .states()
                .iter()
                .zip(e.trajectory.states())
                .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
                .collect();
            want += 0.5 * sq.windows(2).map(|p| 0.5 * h * (p[0] + p[1])).sum::<f64>();
        }
        want += 0.01 * w.iter().map(|x| x * x).sum::<f64>();
        assert!((v.value - want).abs() <= 1e-12 * want);
        assert_eq!(v.per_traj.len(), 7);
    }

    #[test]
    fn terminal_cost_is_added() {
        let grid = TimeGrid::<f64>::new(1.0, 4).unwrap();
        let a = Trajectory::constant(grid, [1.0, 0.0]);
        let b = Trajectory::constant(grid, [0.0, 0.0]);
        let plain = tracking_cost(&a, &b, &Objective::new(0.0, 0.0).unwrap()).unwrap();
        let with = tracking_cost(&a, &b, &Objective::new(0.0, 2.0).unwrap()).unwrap();
        assert!((plain - 0.5).abs() < 1e-15);
        assert!((with - plain - 1.0).abs() < 1e-15);
    }
}

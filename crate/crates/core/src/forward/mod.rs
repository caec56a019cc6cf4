//! Forward-in-time solvers: the ODE model `ż = f − Φ(z) − (0, δw)` and the
//! FitzHugh–Nagumo reference by Crank–Nicolson with Newton, and the
//! reaction–diffusion PDE by finite differences with the same time stepping.

mod cn;
mod energy;
mod fh;
mod pde;

pub use cn::{simulate_cn, Dynamics, NetworkDynamics, NewtonConfig, NewtonStep, Simulation};
pub use energy::{energy_field, energy_functional, EnergyBound};
pub use fh::{fh_rhs, generate_dataset, generate_from, FhParams, FitzHughNagumo, PAPER_INITIAL_CONDITIONS};
pub use pde::{simulate_pde, FieldTrajectory, PdeModelConfig, SpaceGrid};

use serde::{Deserialize, Serialize};

use crate::linalg::Vec2;
use crate::{Error, Result, Scalar};

/// Uniform grid `t_k = k·dt`, `k = 0..=n_steps`, `dt = T / n_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid<T> {
    t_final: T,
    n_steps: usize,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(t_final: T, n_steps: usize) -> Result<Self> {
        if !(t_final > T::zero()) || !t_final.is_finite() {
            return Err(Error::Domain(format!("final time must be > 0, got {t_final}")));
        }
        if n_steps == 0 {
            return Err(Error::Domain("need at least one time step".into()));
        }
        Ok(TimeGrid { t_final, n_steps })
    }

    /// Grid with step `dt`; `t_final / dt` must be (close to) an integer.
    pub fn from_step(t_final: T, dt: T) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::Domain(format!("time step must be > 0, got {dt}")));
        }
        let ratio = (t_final / dt).to_f64_lossy();
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-6 * n.max(1.0) {
            return Err(Error::Domain(format!(
                "final time {t_final} is not a multiple of dt {dt}"
            )));
        }
        Self::new(t_final, n as usize)
    }

    pub fn t_final(&self) -> T {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> T {
        self.t_final / T::from_usize(self.n_steps).unwrap()
    }

    pub fn time(&self, k: usize) -> T {
        if k == self.n_steps {
            self.t_final
        } else {
            T::from_usize(k).unwrap() * self.dt()
        }
    }

    /// Trapezoidal weight of node k in units of dt.
    pub fn trapezoid_weight(&self, k: usize) -> T {
        if k == 0 || k == self.n_steps {
            T::lit(0.5)
        } else {
            T::one()
        }
    }

    /// Same grid with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        TimeGrid {
            t_final: self.t_final,
            n_steps: self.n_steps * factor,
        }
    }
}

/// Time-sampled state `z_k = (v_k, w_k)` on a [`TimeGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    grid: TimeGrid<T>,
    states: Vec<Vec2<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(grid: TimeGrid<T>, states: Vec<Vec2<T>>) -> Result<Self> {
        if states.len() != grid.n_nodes() {
            return Err(Error::Shape(format!(
                "grid has {} nodes, trajectory has {} states",
                grid.n_nodes(),
                states.len()
            )));
        }
        if states.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Domain("trajectory contains non-finite values".into()));
        }
        Ok(Trajectory { grid, states })
    }

    /// Constant trajectory.
    pub fn constant(grid: TimeGrid<T>, z: Vec2<T>) -> Self {
        Trajectory {
            grid,
            states: vec![z; grid.n_nodes()],
        }
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn states(&self) -> &[Vec2<T>] {
        &self.states
    }

    pub fn initial(&self) -> Vec2<T> {
        self.states[0]
    }

    pub fn terminal(&self) -> Vec2<T> {
        self.states[self.states.len() - 1]
    }

    /// Linear interpolation onto another grid whose interval `[0, T']` lies
    /// within this one's.
    pub fn resample(&self, grid: &TimeGrid<T>) -> Result<Self> {
        if grid == &self.grid {
            return Ok(self.clone());
        }
        let tol = T::lit(1e-9) * self.grid.t_final();
        if grid.t_final() > self.grid.t_final() + tol {
            return Err(Error::Shape(format!(
                "cannot resample a trajectory on [0, {}] onto [0, {}]",
                self.grid.t_final(),
                grid.t_final()
            )));
        }
        let dt = self.grid.dt();
        let last = self.grid.n_steps();
        let states = (0..grid.n_nodes())
            .map(|k| {
                let s = grid.time(k) / dt;
                let i = s.floor().to_usize().unwrap_or(0).min(last - 1);
                let theta = (s - T::from_usize(i).unwrap()).max(T::zero()).min(T::one());
                let (a, b) = (self.states[i], self.states[i + 1]);
                [
                    a[0] + theta * (b[0] - a[0]),
                    a[1] + theta * (b[1] - a[1]),
                ]
            })
            .collect();
        Trajectory::new(*grid, states)
    }

    /// `∫ v² dt` by the trapezoidal rule, used for relative misfits.
    pub fn l2_sq_component(&self, component: usize) -> T {
        let dt = self.grid.dt();
        self.states
            .iter()
            .enumerate()
            .map(|(k, z)| self.grid.trapezoid_weight(k) * z[component] * z[component])
            .sum::<T>()
            * dt
    }
}

/// `‖a_c − b_c‖_{L²(0,T)} / ‖b_c‖_{L²(0,T)}` for state component `c`
/// (0 for `v`, 1 for `w`), trapezoidal in time.
pub fn relative_l2_misfit<T: Scalar>(a: &Trajectory<T>, reference: &Trajectory<T>, component: usize) -> Result<T> {
    if a.grid() != reference.grid() {
        return Err(Error::Shape("trajectories live on different grids".into()));
    }
    let grid = a.grid();
    let mut num = T::zero();
    for (k, (x, y)) in a.states().iter().zip(reference.states()).enumerate() {
        let d = x[component] - y[component];
        num += grid.trapezoid_weight(k) * d * d;
    }
    let den = reference.l2_sq_component(component) / grid.dt();
    if den == T::zero() {
        return Err(Error::Domain("reference trajectory has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// Constant forcings and linear recovery rate of the ODE model
/// `v̇ + φ_v = f_v`, `ẇ + δw + φ_w = f_w`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeModelConfig<T> {
    pub delta: T,
    pub f_v: T,
    pub f_w: T,
}

impl<T: Scalar> OdeModelConfig<T> {
    /// Forcings of the FitzHugh–Nagumo experiment; δ equals the reference
    /// recovery rate η.
    pub fn paper() -> Self {
        OdeModelConfig {
            delta: T::lit(0.064),
            f_v: T::lit(0.5),
            f_w: T::lit(0.056),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= T::zero()) {
            return Err(Error::Domain(format!("delta must be >= 0, got {}", self.delta)));
        }
        if !self.f_v.is_finite() || !self.f_w.is_finite() {
            return Err(Error::Domain("forcings must be finite".into()));
        }
        Ok(())
    }
}

/// One `(z⁰_k, z_data,k)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry<T> {
    pub z0: Vec2<T>,
    pub trajectory: Trajectory<T>,
}

/// K observed trajectories on one shared time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    grid: TimeGrid<T>,
    entries: Vec<DatasetEntry<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(entries: Vec<DatasetEntry<T>>) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::Shape("dataset needs at least one entry".into()))?;
        let grid = *first.trajectory.grid();
        for (k, e) in entries.iter().enumerate() {
            if e.trajectory.grid() != &grid {
                return Err(Error::Shape(format!("entry {k} uses a different time grid")));
            }
            if e.trajectory.initial() != e.z0 {
                return Err(Error::Shape(format!(
                    "entry {k}: trajectory does not start at its initial condition"
                )));
            }
        }
        Ok(Dataset { grid, entries })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn entries(&self) -> &[DatasetEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Copy of the dataset with every trajectory interpolated onto `grid`.
    pub fn resampled(&self, grid: &TimeGrid<T>) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|e| {
                Ok(DatasetEntry {
                    z0: e.z0,
                    trajectory: e.trajectory.resample(grid)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(entries)
    }
}

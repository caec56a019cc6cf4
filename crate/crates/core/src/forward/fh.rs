use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{Mat2, Vec2};
use crate::{Error, Result, Scalar};

use super::cn::{simulate_cn, Dynamics, NewtonConfig};
use super::{Dataset, DatasetEntry, TimeGrid};

/// Initial conditions of the seven training trajectories.
pub const PAPER_INITIAL_CONDITIONS: [[f64; 2]; 7] = [
    [0.0, 0.0],
    [1.0, 1.0],
    [-1.0, -1.0],
    [1.0, 0.0],
    [0.0, 1.0],
    [-1.0, 1.0],
    [1.0, -1.0],
];

/// Coefficients of the FitzHugh–Nagumo reference model
///
/// ```text
/// v̇ = f_v + a v³ + b v² + c v + d w
/// ẇ = f_w − η w + γ v
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FhParams<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
    pub eta: T,
    pub gamma: T,
}

impl<T: Scalar> FhParams<T> {
    /// `a = −1/3, b = 0, c = 1, d = −1, η = 0.064, γ = 0.08`.
    pub fn paper() -> Self {
        FhParams {
            a: T::lit(-1.0 / 3.0),
            b: T::zero(),
            c: T::one(),
            d: T::lit(-1.0),
            eta: T::lit(0.064),
            gamma: T::lit(0.08),
        }
    }

    /// Forcings `(f_v, f_w) = (0.5, 0.056)`.
    pub fn paper_forcing() -> Vec2<T> {
        [T::lit(0.5), T::lit(0.056)]
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.b, self.c, self.d, self.eta, self.gamma];
        if all.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Domain("FitzHugh-Nagumo parameters must be finite".into()))
        }
    }

    /// `∇F(z)`.
    pub fn jacobian(&self, z: Vec2<T>) -> Mat2<T> {
        let v = z[0];
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        Mat2([
            [three * self.a * v * v + two * self.b * v + self.c, self.d],
            [self.gamma, -self.eta],
        ])
    }
}

/// `(v̇, ẇ)` of the FitzHugh–Nagumo reference model.
pub fn fh_rhs<T: Scalar>(z: Vec2<T>, params: &FhParams<T>, f: Vec2<T>) -> Vec2<T> {
    let (v, w) = (z[0], z[1]);
    let cubic = ((params.a * v + params.b) * v + params.c) * v + params.d * w;
    [f[0] + cubic, f[1] - params.eta * w + params.gamma * v]
}

/// [`Dynamics`] adapter for [`fh_rhs`] with its analytic Jacobian.
#[derive(Clone, Copy, Debug)]
pub struct FitzHughNagumo<T> {
    pub params: FhParams<T>,
    pub forcing: Vec2<T>,
}

impl<T: Scalar> Dynamics<T> for FitzHughNagumo<T> {
    fn rhs(&mut self, z: Vec2<T>) -> Vec2<T> {
        fh_rhs(z, &self.params, self.forcing)
    }

    fn rhs_and_jacobian(&mut self, z: Vec2<T>) -> (Vec2<T>, Mat2<T>) {
        (fh_rhs(z, &self.params, self.forcing), self.params.jacobian(z))
    }
}

/// Simulates the reference model from each of the seven training initial
/// conditions.
pub fn generate_dataset<T: Scalar>(
    params: &FhParams<T>,
    f: Vec2<T>,
    grid: &TimeGrid<T>,
    newton: &NewtonConfig<T>,
) -> Result<Dataset<T>> {
    let ics: Vec<Vec2<T>> = PAPER_INITIAL_CONDITIONS
        .iter()
        .map(|z| [T::lit(z[0]), T::lit(z[1])])
        .collect();
    generate_from(params, f, &ics, grid, newton)
}

/// Like [`generate_dataset`] with caller-chosen initial conditions.
pub fn generate_from<T: Scalar>(
    params: &FhParams<T>,
    f: Vec2<T>,
    initial_conditions: &[Vec2<T>],
    grid: &TimeGrid<T>,
    newton: &NewtonConfig<T>,
) -> Result<Dataset<T>> {
    params.validate()?;
    let entries = initial_conditions
        .par_iter()
        .map(|&z0| {
            let mut dynamics = FitzHughNagumo { params: *params, forcing: f };
            let sim = simulate_cn(&mut dynamics, z0, grid, newton)?;
            Ok(DatasetEntry {
                z0,
                trajectory: sim.trajectory,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(entries)
}

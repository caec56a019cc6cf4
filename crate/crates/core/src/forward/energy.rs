use crate::linalg::Vec2;
use crate::Scalar;

use super::pde::SpaceGrid;

/// `½(v² + w²)` for a single state.
pub fn energy_functional<T: Scalar>(z: Vec2<T>) -> T {
    T::lit(0.5) * (z[0] * z[0] + z[1] * z[1])
}

/// `½(‖v‖²_{L²} + ‖w‖²_{L²})` with the grid's trapezoidal quadrature.
pub fn energy_field<T: Scalar>(v: &[T], w: &[T], space: &SpaceGrid<T>) -> T {
    T::lit(0.5) * (space.integrate_sq(v) + space.integrate_sq(w))
}

/// Grönwall envelope `E(t) ≤ e^{Ct}(E(0) + S·t)` with `C = 1 + 2·Lip(Φ)` and
/// `S = ½|f − Φ(0)|²·|Ω|`, from `dE/dt ≤ C·E + S`. Diffusion and the `−δw`
/// term only dissipate, so they are dropped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBound<T> {
    pub rate: T,
    pub source: T,
}

impl<T: Scalar> EnergyBound<T> {
    /// `lipschitz` bounds the Lipschitz constant of Φ, `phi0 = Φ(0)`, and
    /// `volume` is `|Ω|` (1 in ODE mode).
    pub fn new(lipschitz: T, forcing: Vec2<T>, phi0: Vec2<T>, volume: T) -> Self {
        let c = [forcing[0] - phi0[0], forcing[1] - phi0[1]];
        EnergyBound {
            rate: T::one() + T::lit(2.0) * lipschitz,
            source: T::lit(0.5) * (c[0] * c[0] + c[1] * c[1]) * volume,
        }
    }

    pub fn at(&self, t: T, e0: T) -> T {
        (self.rate * t).exp() * (e0 + self.source * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_examples() {
        assert_eq!(energy_functional([0.0, 0.0]), 0.0);
        assert_eq!(energy_functional([1.0, 1.0]), 1.0);
        let space = SpaceGrid::<f64>::new_2d(11, 11, 0.1).unwrap();
        let ones = vec![1.0; space.n_nodes()];
        assert!((energy_field(&ones, &ones, &space) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bound_grows_from_initial_energy() {
        let b = EnergyBound::new(0.5, [1.0, 0.0], [0.0, 0.0], 1.0);
        assert_eq!(b.rate, 2.0);
        assert_eq!(b.source, 0.5);
        assert_eq!(b.at(0.0, 3.0), 3.0);
        assert!((b.at(1.0, 0.0) - 0.5 * 2f64.exp()).abs() < 1e-14);
    }
}

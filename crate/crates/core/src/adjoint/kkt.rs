use serde::{Deserialize, Serialize};

use crate::nn::{weight_norm_sq, WeightGradient, WeightStack};
use crate::{Error, Result, Scalar};

/// First-order optimality residuals of `min J(W)` s.t. `‖W‖² ≤ C`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport<T> {
    /// `‖∇J + 2λW‖` (constraint mode) or `‖∇J‖` (penalty mode).
    pub stationarity: T,
    /// `|λ(‖W‖² − C)|`.
    pub complementarity: T,
    /// `max(0, ‖W‖² − C)`.
    pub feasibility: T,
    pub lambda: T,
    pub ball_c: Option<T>,
}

/// Residuals for a given multiplier; `c = None` means penalty mode, where
/// `λ` is ignored.
pub fn kkt_residual<T: Scalar>(
    w: &WeightStack<T>,
    gradient: &WeightGradient<T>,
    c: Option<T>,
    lambda: T,
) -> Result<KktReport<T>> {
    if !(lambda >= T::zero()) {
        return Err(Error::Domain(format!("multiplier must be >= 0, got {lambda}")));
    }
    if !w.same_shape(gradient.as_stack()) {
        return Err(Error::Shape("gradient and weights have different shapes".into()));
    }
    match c {
        None => Ok(KktReport {
            stationarity: gradient.norm(),
            complementarity: T::zero(),
            feasibility: T::zero(),
            lambda: T::zero(),
            ball_c: None,
        }),
        Some(c) => {
            let two_l = T::lit(2.0) * lambda;
            let stationarity = gradient
                .iter()
                .zip(w.iter())
                .map(|(&g, &x)| {
                    let r = g + two_l * x;
                    r * r
                })
                .sum::<T>()
                .sqrt();
            let gap = weight_norm_sq(w) - c;
            Ok(KktReport {
                stationarity,
                complementarity: (lambda * gap).abs(),
                feasibility: gap.max(T::zero()),
                lambda,
                ball_c: Some(c),
            })
        }
    }
}

/// `λ = max(0, −⟨∇J, W⟩ / (2‖W‖²))`, minimizing `‖∇J + 2λW‖` over `λ ≥ 0`.
pub fn least_squares_multiplier<T: Scalar>(w: &WeightStack<T>, gradient: &WeightGradient<T>) -> T {
    let nsq = weight_norm_sq(w);
    if nsq == T::zero() {
        return T::zero();
    }
    let inner = gradient.as_stack().dot(w);
    (-inner / (T::lit(2.0) * nsq)).max(T::zero())
}

//! Scalar activation functions and the smoothed-ReLU regularization family.
//!
//! `smoothed_relu(ε)` replaces the kink of `max(0, x)` by the quadratic
//! `(x + ε)² / (4ε)` on `[−ε, ε]`. It is C¹, 1-Lipschitz, has derivative in
//! `[0, 1]` and stays within `ε/4` of the ReLU.

use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Relu,
    SmoothedRelu,
    Tanh,
    Identity,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::SmoothedRelu => "smoothed_relu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Identity => "identity",
        }
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(ActivationKind::Relu),
            "smoothed_relu" => Ok(ActivationKind::SmoothedRelu),
            "tanh" => Ok(ActivationKind::Tanh),
            "identity" => Ok(ActivationKind::Identity),
            other => Err(Error::Format(format!("unknown activation `{other}`"))),
        }
    }
}

/// An activation together with its regularization parameter.
///
/// Construct through [`relu`](Self::relu), [`smoothed_relu`](Self::smoothed_relu),
/// [`tanh`](Self::tanh) or [`identity`](Self::identity); the smoothed variant
/// rejects `ε ≤ 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationSpec<T> {
    kind: ActivationKind,
    epsilon: T,
}

impl<T: Scalar> ActivationSpec<T> {
    pub fn relu() -> Self {
        ActivationSpec {
            kind: ActivationKind::Relu,
            epsilon: T::zero(),
        }
    }

    pub fn smoothed_relu(epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero()) || !epsilon.is_finite() {
            return Err(Error::Domain(format!(
                "smoothed_relu needs a finite epsilon > 0, got {epsilon}"
            )));
        }
        Ok(ActivationSpec {
            kind: ActivationKind::SmoothedRelu,
            epsilon,
        })
    }

    pub fn tanh() -> Self {
        ActivationSpec {
            kind: ActivationKind::Tanh,
            epsilon: T::zero(),
        }
    }

    pub fn identity() -> Self {
        ActivationSpec {
            kind: ActivationKind::Identity,
            epsilon: T::zero(),
        }
    }

    pub fn new(kind: ActivationKind, epsilon: T) -> Result<Self> {
        match kind {
            ActivationKind::Relu => Ok(Self::relu()),
            ActivationKind::SmoothedRelu => Self::smoothed_relu(epsilon),
            ActivationKind::Tanh => Ok(Self::tanh()),
            ActivationKind::Identity => Ok(Self::identity()),
        }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    /// Whether the activation is continuously differentiable, i.e. whether
    /// Jacobians and adjoints built on it are well defined.
    pub fn is_c1(&self) -> bool {
        self.kind != ActivationKind::Relu
    }

    /// Errors with a usage error unless the activation is C¹.
    pub fn require_c1(&self) -> Result<()> {
        if self.is_c1() {
            Ok(())
        } else {
            Err(Error::Usage(
                "exact relu is not differentiable; regularize first (smoothed_relu)".into(),
            ))
        }
    }

    /// ρ(x), unchecked.
    #[inline]
    pub fn value(&self, x: T) -> T {
        match self.kind {
            ActivationKind::Relu => x.max(T::zero()),
            ActivationKind::SmoothedRelu => {
                let eps = self.epsilon;
                if x <= -eps {
                    T::zero()
                } else if x >= eps {
                    x
                } else {
                    let s = x + eps;
                    s * s / (T::lit(4.0) * eps)
                }
            }
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Identity => x,
        }
    }

    /// ρ′(x), unchecked. Exact ReLU uses ρ′(0) = 0.
    #[inline]
    pub fn derivative(&self, x: T) -> T {
        match self.kind {
            ActivationKind::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            ActivationKind::SmoothedRelu => {
                let eps = self.epsilon;
                if x <= -eps {
                    T::zero()
                } else if x >= eps {
                    T::one()
                } else {
                    (x + eps) / (T::lit(2.0) * eps)
                }
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            ActivationKind::Identity => T::one(),
        }
    }

    /// Value and derivative in one pass.
    #[inline]
    pub fn value_and_derivative(&self, x: T) -> (T, T) {
        match self.kind {
            ActivationKind::Tanh => {
                let t = x.tanh();
                (t, T::one() - t * t)
            }
            _ => (self.value(x), self.derivative(x)),
        }
    }

    /// `inf ρ′` over the real line.
    pub fn rho_prime_min(&self) -> T {
        match self.kind {
            ActivationKind::Identity => T::one(),
            _ => T::zero(),
        }
    }

    /// `sup ρ′` over the real line.
    pub fn rho_prime_max(&self) -> T {
        T::one()
    }

    /// Global Lipschitz constant C_ρ. Every supported kind is monotone, so
    /// this is `sup ρ′`.
    pub fn lipschitz_constant(&self) -> T {
        self.rho_prime_max()
    }

    /// `sup |ρ_ε − ρ| = ε/4`, attained at the origin.
    pub fn regularization_gap(&self) -> Result<T> {
        match self.kind {
            ActivationKind::SmoothedRelu => Ok(self.epsilon / T::lit(4.0)),
            k => Err(Error::Usage(format!(
                "regularization gap is defined for smoothed_relu only, not {}",
                k.name()
            ))),
        }
    }

    /// The non-smooth activation this one regularizes (itself otherwise).
    pub fn limit(&self) -> Self {
        match self.kind {
            ActivationKind::SmoothedRelu => Self::relu(),
            _ => *self,
        }
    }
}

fn check_finite<T: Scalar>(x: T) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("activation input must be finite, got {x}")))
    }
}

/// ρ(x) with input validation.
pub fn act_value<T: Scalar>(spec: &ActivationSpec<T>, x: T) -> Result<T> {
    check_finite(x)?;
    Ok(spec.value(x))
}

/// ρ′(x) with input validation.
pub fn act_deriv<T: Scalar>(spec: &ActivationSpec<T>, x: T) -> Result<T> {
    check_finite(x)?;
    Ok(spec.derivative(x))
}

pub fn regularization_gap<T: Scalar>(spec: &ActivationSpec<T>) -> Result<T> {
    spec.regularization_gap()
}

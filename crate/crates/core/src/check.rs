//! Finite-difference verification of adjoint gradients.

use serde::{Deserialize, Serialize};

use crate::activation::{ActivationKind, ActivationSpec};
use crate::adjoint::{AdjointMode, Problem};
use crate::nn::WeightStack;
use crate::{Error, Result, Scalar};

/// Error of one layer's gradient block against central differences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerError<T> {
    pub layer: usize,
    /// `‖g_ℓ − fd_ℓ‖ / max(‖fd_ℓ‖, floor·‖fd‖)`.
    pub rel_error: T,
    pub fd_norm: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport<T> {
    pub layers: Vec<LayerError<T>>,
    /// `‖g − fd‖ / ‖fd‖` over all weights.
    pub total_rel_error: T,
    pub tolerance: T,
}

impl<T: Scalar> GradCheckReport<T> {
    pub fn worst(&self) -> T {
        self.layers
            .iter()
            .map(|l| l.rel_error)
            .fold(self.total_rel_error, T::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= self.tolerance
    }
}

/// Layer FD norms below this fraction of the full FD norm are measured
/// against that fraction instead, so near-zero blocks do not amplify FD noise.
const LAYER_FLOOR: f64 = 1e-3;

/// Acceptance threshold for an activation: `1e-7` for tanh and identity,
/// `1e-5` for the smoothed ReLU (whose second derivative jumps).
pub fn default_tolerance<T: Scalar>(act: &ActivationSpec<T>) -> Result<T> {
    act.require_c1()?;
    Ok(match act.kind() {
        ActivationKind::SmoothedRelu => T::lit(1e-5),
        _ => T::lit(1e-7),
    })
}

/// Central-difference gradient of the full objective.
pub fn fd_gradient<T: Scalar>(problem: &Problem<T>, w: &WeightStack<T>, step: T) -> Result<Vec<T>> {
    if !(step > T::zero()) {
        return Err(Error::Domain(format!("FD step must be > 0, got {step}")));
    }
    let flat = w.to_flat();
    let two = T::lit(2.0);
    let mut out = Vec::with_capacity(flat.len());
    let mut p = flat.clone();
    for i in 0..flat.len() {
        p[i] = flat[i] + step;
        let jp = problem.objective(&WeightStack::from_flat(w.arch(), &p)?)?.value;
        p[i] = flat[i] - step;
        let jm = problem.objective(&WeightStack::from_flat(w.arch(), &p)?)?.value;
        p[i] = flat[i];
        out.push((jp - jm) / (two * step));
    }
    Ok(out)
}

/// Compares the adjoint gradient at `w` with central differences of step
/// `step`, layer by layer.
pub fn gradcheck<T: Scalar>(
    problem: &Problem<T>,
    w: &WeightStack<T>,
    mode: AdjointMode,
    step: T,
    tolerance: T,
) -> Result<GradCheckReport<T>> {
    let (_, grad, _) = problem.gradient(w, mode)?;
    let g = grad.to_flat();
    let fd = fd_gradient(problem, w, step)?;
    let norm = |it: &mut dyn Iterator<Item = T>| it.map(|x| x * x).sum::<T>().sqrt();
    let fd_total = norm(&mut fd.iter().copied());
    let diff_total = norm(&mut g.iter().zip(&fd).map(|(a, b)| *a - *b));
    let total_rel_error = if fd_total > T::zero() { diff_total / fd_total } else { diff_total };
    let floor = T::lit(LAYER_FLOOR) * fd_total;

    let mut layers = Vec::with_capacity(w.layers().len());
    let mut offset = 0;
    for (l, layer) in w.layers().iter().enumerate() {
        let len = layer.a.as_slice().len() + layer.b.len();
        let (gs, fs) = (&g[offset..offset + len], &fd[offset..offset + len]);
        offset += len;
        let fd_norm = norm(&mut fs.iter().copied());
        let diff = norm(&mut gs.iter().zip(fs).map(|(a, b)| *a - *b));
        let den = fd_norm.max(floor);
        let rel_error = if den > T::zero() { diff / den } else { diff };
        layers.push(LayerError {
            layer: l + 1,
            rel_error,
            fd_norm,
        });
    }
    Ok(GradCheckReport {
        layers,
        total_rel_error,
        tolerance,
    })
}

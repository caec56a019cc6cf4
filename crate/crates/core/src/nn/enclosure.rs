use crate::activation::ActivationSpec;
use crate::linalg::{Mat2, Vec2};
use crate::{Error, Result, Scalar};

use super::WeightStack;

/// Paths per entry above which enumeration is refused.
const MAX_PATHS: usize = 1 << 22;

/// Entrywise interval `[lo, hi]` of 2×2 matrices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalMatrix2x2<T> {
    pub lo: Mat2<T>,
    pub hi: Mat2<T>,
}

impl<T: Scalar> IntervalMatrix2x2<T> {
    pub fn new(lo: Mat2<T>, hi: Mat2<T>) -> Result<Self> {
        for i in 0..2 {
            for j in 0..2 {
                if !(lo.0[i][j] <= hi.0[i][j]) {
                    return Err(Error::Domain(format!(
                        "interval entry ({i},{j}) has lo {} > hi {}",
                        lo.0[i][j], hi.0[i][j]
                    )));
                }
            }
        }
        Ok(IntervalMatrix2x2 { lo, hi })
    }

    /// Entrywise containment with slack `tol · (1 + |lo| + |hi|)` to absorb
    /// rounding differences between summation orders.
    pub fn contains(&self, m: &Mat2<T>, tol: T) -> bool {
        (0..2).all(|i| {
            (0..2).all(|j| {
                let (lo, hi) = (self.lo.0[i][j], self.hi.0[i][j]);
                let slack = tol * (T::one() + lo.abs() + hi.abs());
                m.0[i][j] >= lo - slack && m.0[i][j] <= hi + slack
            })
        })
    }

    pub fn transpose(&self) -> Self {
        IntervalMatrix2x2 {
            lo: self.lo.transpose(),
            hi: self.hi.transpose(),
        }
    }

    /// Interval hull of `{M p : M ∈ self}` for a fixed vector `p`.
    pub fn apply(&self, p: Vec2<T>) -> [(T, T); 2] {
        let mut out = [(T::zero(), T::zero()); 2];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, &pj) in p.iter().enumerate() {
                let a = self.lo.0[i][j] * pj;
                let b = self.hi.0[i][j] * pj;
                o.0 += a.min(b);
                o.1 += a.max(b);
            }
        }
        out
    }

    pub fn width(&self) -> T {
        (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| self.hi.0[i][j] - self.lo.0[i][j])
            .fold(T::zero(), T::max)
    }
}

/// Interval enclosure of every Jacobian `∇_z Φ` the network can produce when
/// each hidden derivative ranges over `[ρ′_min, ρ′_max]`.
///
/// Entry (i, j) of the Jacobian is a sum over paths `j → k_1 → … → k_{L−1} → i`
/// of the weight monomial times a product of `L−1` derivatives. Each product
/// lies in `[ρ′_min^{L−1}, ρ′_max^{L−1}]`, so each path contributes the interval
/// `m · [ρ′_min^{L−1}, ρ′_max^{L−1}]` and the entry interval is their Minkowski sum.
pub fn jacobian_enclosure<T: Scalar>(w: &WeightStack<T>, act: &ActivationSpec<T>) -> Result<IntervalMatrix2x2<T>> {
    let depth = w.arch().depth();
    let paths: usize = w.arch().dims()[1..depth]
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .unwrap_or(usize::MAX);
    if paths > MAX_PATHS {
        return Err(Error::Usage(format!(
            "{paths} paths per entry exceeds the enumeration limit {MAX_PATHS}"
        )));
    }
    let power = i32::try_from(depth - 1).unwrap_or(i32::MAX);
    let dmin = act.rho_prime_min().powi(power);
    let dmax = act.rho_prime_max().powi(power);
    let layers = w.layers();

    let mut lo = Mat2::zero();
    let mut hi = Mat2::zero();
    for j in 0..2 {
        // Monomials of every partial path from input j to each unit of layer ℓ.
        let mut frontier: Vec<(usize, T)> = (0..layers[0].a.rows())
            .map(|k| (k, layers[0].a[(k, j)]))
            .collect();
        for layer in &layers[1..] {
            let a = &layer.a;
            let mut next = Vec::with_capacity(frontier.len() * a.rows());
            for &(k, m) in &frontier {
                for i in 0..a.rows() {
                    next.push((i, a[(i, k)] * m));
                }
            }
            frontier = next;
        }
        for (i, m) in frontier {
            let (a, b) = (m * dmin, m * dmax);
            lo.0[i][j] += a.min(b);
            hi.0[i][j] += a.max(b);
        }
    }
    IntervalMatrix2x2::new(lo, hi)
}

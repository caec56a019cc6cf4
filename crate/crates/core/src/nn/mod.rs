//! The network nonlinearity `Φ(z) = W_L ∘ ρ ∘ W_{L−1} ∘ … ∘ ρ ∘ W_1 (z)` and
//! the weight-space geometry it is optimized over.

mod enclosure;
mod network;

pub use enclosure::{jacobian_enclosure, IntervalMatrix2x2};
pub use network::{
    lipschitz_bound, nn_forward, nn_jacobian_z, nn_weight_grad, Evaluator, ForwardPass,
};

use rand::Rng;

use crate::linalg::Matrix;
use crate::{Error, Result, Scalar};

/// State dimension: the network maps `(v, w)` to `(φ_v, φ_w)`.
pub const STATE_DIM: usize = 2;

/// Layer widths `n_0, …, n_L` with `n_0 = n_L = 2` and `L ≥ 2`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NetworkArchitecture {
    dims: Vec<usize>,
    hidden_units: usize,
}

impl NetworkArchitecture {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 3 {
            return Err(Error::Shape(format!(
                "need at least two layers (three widths), got {dims:?}"
            )));
        }
        if dims[0] != STATE_DIM || dims[dims.len() - 1] != STATE_DIM {
            return Err(Error::Shape(format!(
                "input and output widths must be {STATE_DIM}, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero-width layer in {dims:?}")));
        }
        let hidden_units = dims[1..dims.len() - 1].iter().sum();
        Ok(NetworkArchitecture { dims, hidden_units })
    }

    /// `depth` layers, every hidden width equal to `width`.
    pub fn uniform(depth: usize, width: usize) -> Result<Self> {
        let mut dims = vec![width; depth + 1];
        dims[0] = STATE_DIM;
        dims[depth] = STATE_DIM;
        Self::new(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of affine layers `L`.
    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    /// `Σ_{ℓ=1}^{L−1} n_ℓ`, the exponent of C_ρ in the Lipschitz bound.
    pub fn hidden_units(&self) -> usize {
        self.hidden_units
    }

    /// Total number of scalar weights.
    pub fn n_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

/// One affine map `x ↦ A x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub a: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            a: Matrix::zeros(outputs, inputs),
            b: vec![T::zero(); outputs],
        }
    }

    fn entries(&self) -> impl Iterator<Item = &T> {
        self.a.as_slice().iter().chain(self.b.iter())
    }

    fn entries_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.a.as_mut_slice().iter_mut().chain(self.b.iter_mut())
    }
}

/// The control variable: one affine layer per network layer.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightStack<T> {
    arch: NetworkArchitecture,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> WeightStack<T> {
    pub fn zeros(arch: &NetworkArchitecture) -> Self {
        let layers = arch
            .dims()
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        WeightStack {
            arch: arch.clone(),
            layers,
        }
    }

    /// Builds a stack from explicit layers, validating shapes and finiteness.
    pub fn from_layers(arch: &NetworkArchitecture, layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.len() != arch.depth() {
            return Err(Error::Shape(format!(
                "architecture has {} layers, got {}",
                arch.depth(),
                layers.len()
            )));
        }
        for (l, (layer, w)) in layers.iter().zip(arch.dims().windows(2)).enumerate() {
            if layer.a.rows() != w[1] || layer.a.cols() != w[0] || layer.b.len() != w[1] {
                return Err(Error::Shape(format!(
                    "layer {} expects A {}x{} and b {}, got A {}x{} and b {}",
                    l + 1,
                    w[1],
                    w[0],
                    w[1],
                    layer.a.rows(),
                    layer.a.cols(),
                    layer.b.len()
                )));
            }
        }
        let stack = WeightStack {
            arch: arch.clone(),
            layers,
        };
        if stack.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("weights must be finite".into()));
        }
        Ok(stack)
    }

    /// Inverse of [`to_flat`](Self::to_flat).
    pub fn from_flat(arch: &NetworkArchitecture, flat: &[T]) -> Result<Self> {
        if flat.len() != arch.n_params() {
            return Err(Error::Shape(format!(
                "architecture has {} parameters, got {}",
                arch.n_params(),
                flat.len()
            )));
        }
        let mut stack = Self::zeros(arch);
        for (dst, &src) in stack.iter_mut().zip(flat) {
            *dst = src;
        }
        Ok(stack)
    }

    /// Seeded uniform entries on `[−scale, scale]`.
    pub fn random<R: Rng>(arch: &NetworkArchitecture, scale: T, rng: &mut R) -> Self {
        let mut stack = Self::zeros(arch);
        for x in stack.iter_mut() {
            let u: f64 = rng.gen_range(-1.0..=1.0);
            *x = T::lit(u) * scale;
        }
        stack
    }

    pub fn arch(&self) -> &NetworkArchitecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// All entries, layer by layer, `A` row-major then `b`.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(Layer::entries)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(Layer::entries_mut)
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.iter().copied().collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.arch == other.arch
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        out.iter_mut().for_each(|x| *x *= s);
        out
    }

    /// `self + s · other`
    pub fn axpy(&self, s: T, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::Shape("weight stacks differ in shape".into()));
        }
        let mut out = self.clone();
        for (x, &y) in out.iter_mut().zip(other.iter()) {
            *x += s * y;
        }
        Ok(out)
    }

    pub fn dot(&self, other: &Self) -> T {
        self.iter().zip(other.iter()).map(|(&a, &b)| a * b).sum()
    }

    pub fn max_abs(&self) -> T {
        self.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }
}

/// Gradient of a scalar function of the weights; same layout as the stack.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightGradient<T>(WeightStack<T>);

impl<T: Scalar> WeightGradient<T> {
    pub fn zeros(arch: &NetworkArchitecture) -> Self {
        WeightGradient(WeightStack::zeros(arch))
    }

    pub fn from_stack(stack: WeightStack<T>) -> Self {
        WeightGradient(stack)
    }

    pub fn from_flat(arch: &NetworkArchitecture, flat: &[T]) -> Result<Self> {
        WeightStack::from_flat(arch, flat).map(WeightGradient)
    }

    pub fn as_stack(&self) -> &WeightStack<T> {
        &self.0
    }

    pub fn into_stack(self) -> WeightStack<T> {
        self.0
    }

    pub fn arch(&self) -> &NetworkArchitecture {
        self.0.arch()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        self.0.layers()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<T>] {
        self.0.layers_mut()
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.0.to_flat()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.0.iter()
    }

    /// Euclidean norm of all entries.
    pub fn norm(&self) -> T {
        self.0.dot(&self.0).sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.0.dot(&other.0)
    }

    /// `self += s · other`, blockwise.
    pub fn add_scaled(&mut self, s: T, other: &Self) {
        for (x, &y) in self.0.iter_mut().zip(other.0.iter()) {
            *x += s * y;
        }
    }

    /// `self += s · W`, e.g. the `2αW` penalty term.
    pub fn add_scaled_weights(&mut self, s: T, w: &WeightStack<T>) {
        for (x, &y) in self.0.iter_mut().zip(w.iter()) {
            *x += s * y;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// `‖W‖² = Σ_ℓ trace(A_ℓᵀ A_ℓ) + |b_ℓ|²`.
pub fn weight_norm_sq<T: Scalar>(w: &WeightStack<T>) -> T {
    w.iter().map(|&x| x * x).sum()
}

/// Radial projection onto `{‖W‖² ≤ C}`.
pub fn project_ball<T: Scalar>(w: &WeightStack<T>, c: T) -> Result<WeightStack<T>> {
    if !(c > T::zero()) {
        return Err(Error::Domain(format!("ball radius C must be > 0, got {c}")));
    }
    let n2 = weight_norm_sq(w);
    if n2 <= c {
        return Ok(w.clone());
    }
    let mut out = w.scaled((c / n2).sqrt());
    // Rounding can leave the scaled stack a few ulps outside; shrink until in.
    while weight_norm_sq(&out) > c {
        out = out.scaled(T::one() - T::epsilon());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn identity_l2() -> WeightStack<f64> {
        let arch = NetworkArchitecture::new(vec![2, 2, 2]).unwrap();
        let mut w = WeightStack::zeros(&arch);
        for layer in w.layers_mut() {
            layer.a = Matrix::identity(2);
        }
        w
    }

    #[test]
    fn architecture_validation() {
        assert!(NetworkArchitecture::new(vec![2, 2]).is_err());
        assert!(NetworkArchitecture::new(vec![3, 2, 2]).is_err());
        assert!(NetworkArchitecture::new(vec![2, 0, 2]).is_err());
        let a = NetworkArchitecture::new(vec![2, 3, 4, 2]).unwrap();
        assert_eq!(a.depth(), 3);
        assert_eq!(a.hidden_units(), 7);
        assert_eq!(a.n_params(), 3 * 3 + 4 * 4 + 2 * 5);
        assert_eq!(NetworkArchitecture::uniform(7, 2).unwrap().n_params(), 42);
    }

    #[test]
    fn from_layers_checks_shapes() {
        let arch = NetworkArchitecture::new(vec![2, 3, 2]).unwrap();
        let bad = vec![
            Layer {
                a: Matrix::<f64>::zeros(3, 2),
                b: vec![0.0; 3],
            },
            Layer {
                a: Matrix::zeros(2, 2),
                b: vec![0.0; 2],
            },
        ];
        assert!(matches!(
            WeightStack::from_layers(&arch, bad),
            Err(Error::Shape(_))
        ));
        let mut nonfinite = WeightStack::<f64>::zeros(&arch).layers().to_vec();
        nonfinite[0].b[1] = f64::NAN;
        assert!(WeightStack::from_layers(&arch, nonfinite).is_err());
    }

    #[test]
    fn norm_examples() {
        let arch = NetworkArchitecture::new(vec![2, 2, 2]).unwrap();
        assert_eq!(weight_norm_sq(&WeightStack::<f64>::zeros(&arch)), 0.0);
        assert_eq!(weight_norm_sq(&identity_l2()), 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = WeightStack::<f64>::random(&NetworkArchitecture::uniform(4, 3).unwrap(), 1.0, &mut rng);
        // Oracle: flatten and sum squares.
        let flat: f64 = w.to_flat().iter().map(|x| x * x).sum();
        assert!((weight_norm_sq(&w) - flat).abs() < 1e-14);
        let trace: f64 = w
            .layers()
            .iter()
            .map(|l| l.a.frobenius().powi(2) + l.b.iter().map(|x| x * x).sum::<f64>())
            .sum();
        assert!((weight_norm_sq(&w) - trace).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let w = identity_l2();
        assert_eq!(project_ball(&w, 10.0).unwrap(), w);
        let p = project_ball(&w, 1.0).unwrap();
        for (a, b) in p.iter().zip(w.iter()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
        assert_eq!(project_ball(&p, 1.0).unwrap(), p);
        assert!(project_ball(&w, 0.0).is_err());
        assert!(project_ball(&w, -1.0).is_err());
    }

    #[test]
    fn flat_roundtrip_and_seeding() {
        let arch = NetworkArchitecture::uniform(3, 4).unwrap();
        let a = WeightStack::<f64>::random(&arch, 0.5, &mut ChaCha8Rng::seed_from_u64(9));
        let b = WeightStack::<f64>::random(&arch, 0.5, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.max_abs() <= 0.5);
        assert_eq!(WeightStack::from_flat(&arch, &a.to_flat()).unwrap(), a);
        assert!(WeightStack::<f64>::from_flat(&arch, &[1.0]).is_err());
        let z = WeightStack::<f64>::random(&arch, 0.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(z, WeightStack::zeros(&arch));
    }

    proptest::proptest! {
        #[test]
        fn projection_is_feasible_and_idempotent(seed in 0u64..500, c in 1e-3f64..10.0, scale in 0.01f64..3.0) {
            let arch = NetworkArchitecture::uniform(3, 2).unwrap();
            let w = WeightStack::<f64>::random(&arch, scale, &mut ChaCha8Rng::seed_from_u64(seed));
            let p = project_ball(&w, c).unwrap();
            proptest::prop_assert!(weight_norm_sq(&p) <= c);
            proptest::prop_assert_eq!(project_ball(&p, c).unwrap(), p);
        }
    }
}

use crate::activation::ActivationSpec;
use crate::linalg::{Mat2, Vec2};
use crate::{Error, Result, Scalar};

use super::{NetworkArchitecture, WeightGradient, WeightStack};

/// Intermediate values of one forward pass, reused by the Jacobian and the
/// weight-gradient backward pass.
///
/// Layer ℓ (1-based) occupies `offsets[ℓ−1]..offsets[ℓ]` of the flat buffers.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    input: Vec2<T>,
    offsets: Vec<usize>,
    /// Pre-activations `Φ_ℓ(z)`, ℓ = 1..L.
    pre: Vec<T>,
    /// `ρ(Φ_ℓ)` for hidden layers (unused slots for ℓ = L).
    post: Vec<T>,
    /// `ρ′(Φ_ℓ)` for hidden layers.
    deriv: Vec<T>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn new(arch: &NetworkArchitecture) -> Self {
        let mut offsets = vec![0];
        for &n in &arch.dims()[1..] {
            offsets.push(offsets.last().unwrap() + n);
        }
        let total = *offsets.last().unwrap();
        ForwardPass {
            input: [T::zero(); 2],
            offsets,
            pre: vec![T::zero(); total],
            post: vec![T::zero(); total],
            deriv: vec![T::zero(); total],
        }
    }

    fn range(&self, layer: usize) -> std::ops::Range<usize> {
        self.offsets[layer - 1]..self.offsets[layer]
    }

    /// `Φ_ℓ(z)` for layer ℓ (1-based).
    pub fn pre_activation(&self, layer: usize) -> &[T] {
        &self.pre[self.range(layer)]
    }

    pub fn output(&self) -> Vec2<T> {
        let l = self.offsets.len() - 1;
        let out = &self.pre[self.range(l)];
        [out[0], out[1]]
    }

    pub fn input(&self) -> Vec2<T> {
        self.input
    }
}

/// A weight stack paired with its activation, checked once so that the hot
/// loops of the solvers do not re-validate.
#[derive(Clone, Copy, Debug)]
pub struct Evaluator<'a, T> {
    weights: &'a WeightStack<T>,
    act: ActivationSpec<T>,
}

impl<'a, T: Scalar> Evaluator<'a, T> {
    /// Forward evaluation only; any activation is allowed.
    pub fn new(weights: &'a WeightStack<T>, act: ActivationSpec<T>) -> Self {
        Evaluator { weights, act }
    }

    /// Evaluator for derivative computations; rejects exact ReLU.
    pub fn differentiable(weights: &'a WeightStack<T>, act: ActivationSpec<T>) -> Result<Self> {
        act.require_c1()?;
        Ok(Evaluator { weights, act })
    }

    pub fn weights(&self) -> &'a WeightStack<T> {
        self.weights
    }

    pub fn activation(&self) -> ActivationSpec<T> {
        self.act
    }

    pub fn new_pass(&self) -> ForwardPass<T> {
        ForwardPass::new(self.weights.arch())
    }

    /// Runs the composition, caching every intermediate value in `pass`.
    pub fn forward_into(&self, z: Vec2<T>, pass: &mut ForwardPass<T>) -> Vec2<T> {
        pass.input = z;
        let layers = self.weights.layers();
        let depth = layers.len();
        for (l, layer) in layers.iter().enumerate() {
            let out = pass.range(l + 1);
            let rows = layer.a.rows();
            let cols = layer.a.cols();
            let a = layer.a.as_slice();
            for i in 0..rows {
                let mut acc = layer.b[i];
                let row = &a[i * cols..(i + 1) * cols];
                if l == 0 {
                    acc += row[0] * z[0] + row[1] * z[1];
                } else {
                    let inp = pass.range(l);
                    for (k, &aik) in row.iter().enumerate() {
                        acc += aik * pass.post[inp.start + k];
                    }
                }
                pass.pre[out.start + i] = acc;
            }
            if l + 1 < depth {
                for idx in out {
                    let (v, d) = self.act.value_and_derivative(pass.pre[idx]);
                    pass.post[idx] = v;
                    pass.deriv[idx] = d;
                }
            }
        }
        pass.output()
    }

    pub fn forward(&self, z: Vec2<T>) -> Vec2<T> {
        let mut pass = self.new_pass();
        self.forward_into(z, &mut pass)
    }

    /// `∇_z Φ = A_L · diag(ρ′(Φ_{L−1})) · A_{L−1} ⋯ diag(ρ′(Φ_1)) · A_1`,
    /// accumulated left-multiplicatively from the cached pass.
    pub fn jacobian(&self, pass: &ForwardPass<T>) -> Mat2<T> {
        let layers = self.weights.layers();
        // Running product J_ℓ (n_ℓ × 2), stored row-major.
        let first = &layers[0].a;
        let mut jac: Vec<T> = first.as_slice().to_vec();
        let mut next = Vec::new();
        for l in 1..layers.len() {
            let d = &pass.deriv[pass.range(l)];
            let a = &layers[l].a;
            next.clear();
            next.resize(a.rows() * 2, T::zero());
            for i in 0..a.rows() {
                for k in 0..a.cols() {
                    let coeff = a[(i, k)] * d[k];
                    next[2 * i] += coeff * jac[2 * k];
                    next[2 * i + 1] += coeff * jac[2 * k + 1];
                }
            }
            std::mem::swap(&mut jac, &mut next);
        }
        Mat2([[jac[0], jac[1]], [jac[2], jac[3]]])
    }

    /// Adds `scale · ∇_W (cotangent · Φ(z))` to `grad`; returns the state
    /// gradient `∇_z Φᵀ · cotangent` as a by-product.
    pub fn accumulate_weight_grad(
        &self,
        pass: &ForwardPass<T>,
        cotangent: Vec2<T>,
        scale: T,
        grad: &mut WeightGradient<T>,
    ) -> Vec2<T> {
        let layers = self.weights.layers();
        let depth = layers.len();
        let mut u: Vec<T> = cotangent.to_vec();
        let mut next = Vec::new();
        let glayers = grad.layers_mut();
        for l in (0..depth).rev() {
            let input: &[T] = if l == 0 {
                &pass.input
            } else {
                &pass.post[pass.range(l)]
            };
            let g = &mut glayers[l];
            let cols = g.a.cols();
            let ga = g.a.as_mut_slice();
            for (i, &ui) in u.iter().enumerate() {
                let su = scale * ui;
                g.b[i] += su;
                for (k, &x) in input.iter().enumerate() {
                    ga[i * cols + k] += su * x;
                }
            }
            let a = &layers[l].a;
            next.clear();
            next.resize(a.cols(), T::zero());
            a.mul_vec_transposed(&u, &mut next);
            if l > 0 {
                let d = &pass.deriv[pass.range(l)];
                for (n, &dk) in next.iter_mut().zip(d) {
                    *n *= dk;
                }
            }
            std::mem::swap(&mut u, &mut next);
        }
        [u[0], u[1]]
    }
}

fn check_input<T: Scalar>(z: Vec2<T>) -> Result<()> {
    if z.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain("network input must be finite".into()))
    }
}

/// `Φ_L(z, W)`.
pub fn nn_forward<T: Scalar>(z: Vec2<T>, w: &WeightStack<T>, act: &ActivationSpec<T>) -> Result<Vec2<T>> {
    check_input(z)?;
    Ok(Evaluator::new(w, *act).forward(z))
}

/// `∇_z Φ_L(z, W)`; requires a C¹ activation.
pub fn nn_jacobian_z<T: Scalar>(z: Vec2<T>, w: &WeightStack<T>, act: &ActivationSpec<T>) -> Result<Mat2<T>> {
    check_input(z)?;
    let ev = Evaluator::differentiable(w, *act)?;
    let mut pass = ev.new_pass();
    ev.forward_into(z, &mut pass);
    Ok(ev.jacobian(&pass))
}

/// `∇_W (cotangent · Φ_L(z, W))`; requires a C¹ activation.
pub fn nn_weight_grad<T: Scalar>(
    z: Vec2<T>,
    w: &WeightStack<T>,
    act: &ActivationSpec<T>,
    cotangent: Vec2<T>,
) -> Result<WeightGradient<T>> {
    check_input(z)?;
    let ev = Evaluator::differentiable(w, *act)?;
    let mut pass = ev.new_pass();
    ev.forward_into(z, &mut pass);
    let mut grad = WeightGradient::zeros(w.arch());
    ev.accumulate_weight_grad(&pass, cotangent, T::one(), &mut grad);
    Ok(grad)
}

/// `(∏_ℓ ‖A_ℓ‖_F) · C_ρ^{Σ n_ℓ}`. Frobenius norms dominate the operator norms,
/// so this bounds the global Lipschitz constant of `z ↦ Φ(z)`.
pub fn lipschitz_bound<T: Scalar>(w: &WeightStack<T>, act: &ActivationSpec<T>) -> T {
    let product = w
        .layers()
        .iter()
        .fold(T::one(), |acc, l| acc * l.a.frobenius());
    let exponent = i32::try_from(w.arch().hidden_units()).unwrap_or(i32::MAX);
    product * act.lipschitz_constant().powi(exponent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::nn::{Layer, NetworkArchitecture};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_l2() -> WeightStack<f64> {
        let arch = NetworkArchitecture::new(vec![2, 2, 2]).unwrap();
        let mut w = WeightStack::zeros(&arch);
        for layer in w.layers_mut() {
            layer.a = Matrix::identity(2);
        }
        w
    }

    fn seeded(depth: usize, width: usize, seed: u64, scale: f64) -> WeightStack<f64> {
        let arch = NetworkArchitecture::uniform(depth, width).unwrap();
        WeightStack::random(&arch, scale, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Reference evaluation written independently of `Evaluator`: explicit
    /// loops over `Layer` with fresh vectors at every step.
    fn reference_forward(z: [f64; 2], w: &WeightStack<f64>, act: &ActivationSpec<f64>) -> [f64; 2] {
        let mut x = z.to_vec();
        let depth = w.layers().len();
        for (l, Layer { a, b }) in w.layers().iter().enumerate() {
            let mut y: Vec<f64> = (0..a.rows())
                .map(|i| b[i] + (0..a.cols()).map(|k| a[(i, k)] * x[k]).sum::<f64>())
                .collect();
            if l + 1 < depth {
                y = y.into_iter().map(|v| act.value(v)).collect();
            }
            x = y;
        }
        [x[0], x[1]]
    }

    fn fd_jacobian(z: [f64; 2], w: &WeightStack<f64>, act: &ActivationSpec<f64>, h: f64) -> Mat2<f64> {
        let mut m = Mat2::zero();
        for j in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[j] += h;
            zm[j] -= h;
            let fp = nn_forward(zp, w, act).unwrap();
            let fm = nn_forward(zm, w, act).unwrap();
            for i in 0..2 {
                m.0[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        m
    }

    fn rel_err(a: Mat2<f64>, b: Mat2<f64>) -> f64 {
        let diff = a.add(&b.scale(-1.0));
        let num = diff.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        let den = b.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    #[test]
    fn identity_weights_reduce_to_activation() {
        let out = nn_forward([1.0, -1.0], &identity_l2(), &ActivationSpec::relu()).unwrap();
        assert_eq!(out, [1.0, 0.0]);
    }

    #[test]
    fn zero_matrices_return_last_bias() {
        let arch = NetworkArchitecture::uniform(4, 3).unwrap();
        let mut w = WeightStack::<f64>::zeros(&arch);
        w.layers_mut()[3].b = vec![3.0, 4.0];
        for z in [[0.0, 0.0], [10.0, -3.0]] {
            assert_eq!(nn_forward(z, &w, &ActivationSpec::tanh()).unwrap(), [3.0, 4.0]);
        }
    }

    #[test]
    fn forward_matches_reference_composition() {
        let w = seeded(3, 2, 17, 1.0);
        let act = ActivationSpec::smoothed_relu(2.0).unwrap();
        let z = [0.3, -0.7];
        let got = nn_forward(z, &w, &act).unwrap();
        let want = reference_forward(z, &w, &act);
        assert!((got[0] - want[0]).abs() < 1e-15 && (got[1] - want[1]).abs() < 1e-15);
        let wide = seeded(5, 4, 2, 0.8);
        let got = nn_forward(z, &wide, &ActivationSpec::tanh()).unwrap();
        let want = reference_forward(z, &wide, &ActivationSpec::tanh());
        assert!((got[0] - want[0]).abs() < 1e-14 && (got[1] - want[1]).abs() < 1e-14);
    }

    #[test]
    fn jacobian_identity_activation_is_matrix_product() {
        let w = seeded(4, 3, 5, 1.0);
        let jac = nn_jacobian_z([0.2, 0.1], &w, &ActivationSpec::identity()).unwrap();
        let mut prod = w.layers()[0].a.clone();
        for l in &w.layers()[1..] {
            prod = l.a.matmul(&prod);
        }
        let want = prod.to_mat2().unwrap();
        assert!(rel_err(jac, want) < 1e-14);
    }

    #[test]
    fn jacobian_smoothed_relu_at_origin() {
        let act = ActivationSpec::smoothed_relu(2.0).unwrap();
        let jac = nn_jacobian_z([0.0, 0.0], &identity_l2(), &act).unwrap();
        assert_eq!(jac, Mat2::diag(0.5, 0.5));
    }

    #[test]
    fn jacobian_rejects_exact_relu() {
        let w = identity_l2();
        assert!(matches!(
            nn_jacobian_z([0.0, 0.0], &w, &ActivationSpec::relu()),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            nn_weight_grad([0.0, 0.0], &w, &ActivationSpec::relu(), [1.0, 0.0]),
            Err(Error::Usage(_))
        ));
        assert!(nn_forward([f64::NAN, 0.0], &w, &ActivationSpec::relu()).is_err());
    }

    #[test]
    fn jacobian_matches_fd_tanh_depth7() {
        let w = seeded(7, 2, 11, 1.0);
        let act = ActivationSpec::tanh();
        let z = [0.1, 0.2];
        let jac = nn_jacobian_z(z, &w, &act).unwrap();
        assert!(rel_err(jac, fd_jacobian(z, &w, &act, 1e-5)) <= 1e-7);
    }

    fn fd_weight_grad(z: [f64; 2], w: &WeightStack<f64>, act: &ActivationSpec<f64>, cot: [f64; 2], h: f64) -> Vec<f64> {
        let flat = w.to_flat();
        (0..flat.len())
            .map(|i| {
                let mut p = flat.clone();
                let mut m = flat.clone();
                p[i] += h;
                m[i] -= h;
                let fp = nn_forward(z, &WeightStack::from_flat(w.arch(), &p).unwrap(), act).unwrap();
                let fm = nn_forward(z, &WeightStack::from_flat(w.arch(), &m).unwrap(), act).unwrap();
                (cot[0] * (fp[0] - fm[0]) + cot[1] * (fp[1] - fm[1])) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn weight_grad_zero_matrices() {
        let arch = NetworkArchitecture::uniform(3, 2).unwrap();
        let mut w = WeightStack::<f64>::zeros(&arch);
        w.layers_mut()[0].b = vec![0.3, -0.2];
        let g = nn_weight_grad([0.5, 0.5], &w, &ActivationSpec::tanh(), [2.0, -1.0]).unwrap();
        for (l, layer) in g.layers().iter().enumerate() {
            if l == 2 {
                assert_eq!(layer.b, vec![2.0, -1.0]);
            } else {
                assert!(layer.b.iter().all(|&x| x == 0.0));
            }
            // A_L sees ρ(Φ_{L−1}) = tanh(0) = 0 as input; the rest sees no signal.
            assert!(layer.a.as_slice().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn weight_grad_identity_example() {
        let w = identity_l2();
        let g = nn_weight_grad([1.0, 2.0], &w, &ActivationSpec::identity(), [1.0, 0.0]).unwrap();
        let l = g.layers();
        assert_eq!(l[1].a.as_slice(), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(l[1].b, vec![1.0, 0.0]);
        assert_eq!(l[0].a.as_slice(), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(l[0].b, vec![1.0, 0.0]);
        let fd = fd_weight_grad([1.0, 2.0], &w, &ActivationSpec::identity(), [1.0, 0.0], 1e-6);
        for (a, b) in g.to_flat().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn weight_grad_matches_fd_smoothed_relu_depth7() {
        let act = ActivationSpec::smoothed_relu(2.0).unwrap();
        for seed in 0..5 {
            let w = seeded(7, 2, 100 + seed, 1.0);
            let z = [0.4, -0.3];
            let cot = [0.7, -1.3];
            let g = nn_weight_grad(z, &w, &act, cot).unwrap().to_flat();
            let fd = fd_weight_grad(z, &w, &act, cot, 1e-6);
            let scale = fd.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * scale.max(1e-12), "seed {seed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn lipschitz_examples() {
        // ‖I₂‖_F = √2 per layer, so two identity layers give 2.
        assert!((lipschitz_bound(&identity_l2(), &ActivationSpec::relu()) - 2.0).abs() < 1e-15);
        let w = seeded(3, 2, 4, 1.0);
        let act = ActivationSpec::smoothed_relu(1.0).unwrap();
        let b1 = lipschitz_bound(&w, &act);
        let mut w2 = w.clone();
        for l in w2.layers_mut() {
            l.a.as_mut_slice().iter_mut().for_each(|x| *x *= 2.0);
        }
        assert!((lipschitz_bound(&w2, &act) - 8.0 * b1).abs() < 1e-12 * b1);
    }

    #[test]
    fn lipschitz_holds_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let w = seeded(4, 3, 8, 1.0);
        let act = ActivationSpec::smoothed_relu(0.5).unwrap();
        let bound = lipschitz_bound(&w, &act);
        for _ in 0..1000 {
            let z1 = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let z2 = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let f1 = nn_forward(z1, &w, &act).unwrap();
            let f2 = nn_forward(z2, &w, &act).unwrap();
            let lhs = ((f1[0] - f2[0]).powi(2) + (f1[1] - f2[1]).powi(2)).sqrt();
            let dz = ((z1[0] - z2[0]).powi(2) + (z1[1] - z2[1]).powi(2)).sqrt();
            assert!(lhs <= bound * dz);
        }
    }

    #[test]
    fn evaluator_is_generic_over_f32() {
        let arch = NetworkArchitecture::uniform(3, 2).unwrap();
        let w = WeightStack::<f32>::random(&arch, 0.5, &mut ChaCha8Rng::seed_from_u64(1));
        let act = ActivationSpec::<f32>::smoothed_relu(2.0).unwrap();
        let j = nn_jacobian_z([0.1f32, 0.2], &w, &act).unwrap();
        assert!(j.0.iter().flatten().all(|x| x.is_finite()));
    }

    proptest::proptest! {
        #[test]
        fn cotangent_linearity(seed in 0u64..200, u0 in -2.0f64..2.0, u1 in -2.0f64..2.0, v0 in -2.0f64..2.0, v1 in -2.0f64..2.0) {
            let w = seeded(4, 2, seed, 1.0);
            let act = ActivationSpec::smoothed_relu(1.0).unwrap();
            let z = [0.3, -0.1];
            let gu = nn_weight_grad(z, &w, &act, [u0, u1]).unwrap();
            let gv = nn_weight_grad(z, &w, &act, [v0, v1]).unwrap();
            let guv = nn_weight_grad(z, &w, &act, [u0 + v0, u1 + v1]).unwrap();
            for ((a, b), c) in gu.iter().zip(gv.iter()).zip(guv.iter()) {
                proptest::prop_assert!((a + b - c).abs() <= 1e-12);
            }
        }

        #[test]
        fn chain_consistency(seed in 0u64..200, c0 in -1.0f64..1.0, c1 in -1.0f64..1.0) {
            // ∇_zΦᵀ·c from the backward pass equals Jᵀc and FD of c·Φ.
            let w = seeded(5, 2, seed, 1.0);
            let act = ActivationSpec::tanh();
            let z = [0.25, -0.4];
            let ev = Evaluator::differentiable(&w, act).unwrap();
            let mut pass = ev.new_pass();
            ev.forward_into(z, &mut pass);
            let jac = ev.jacobian(&pass);
            let mut scratch = WeightGradient::zeros(w.arch());
            let gz = ev.accumulate_weight_grad(&pass, [c0, c1], 1.0, &mut scratch);
            let jt = jac.transpose().apply([c0, c1]);
            let fdj = fd_jacobian(z, &w, &act, 1e-5).transpose().apply([c0, c1]);
            for i in 0..2 {
                proptest::prop_assert!((gz[i] - jt[i]).abs() <= 1e-13);
                proptest::prop_assert!((gz[i] - fdj[i]).abs() <= 1e-8);
            }
        }

        #[test]
        fn jacobian_fd_smoothed_relu(seed in 0u64..300, z0 in -3.0f64..3.0, z1 in -3.0f64..3.0) {
            let w = seeded(4, 2, seed, 1.0);
            let act = ActivationSpec::smoothed_relu(0.5).unwrap();
            let z = [z0, z1];
            // Keep away from branch points, where FD is only first-order accurate.
            let ev = Evaluator::new(&w, act);
            let mut pass = ev.new_pass();
            ev.forward_into(z, &mut pass);
            let near_kink = (1..w.arch().depth())
                .flat_map(|l| pass.pre_activation(l).to_vec())
                .any(|x| (x.abs() - 0.5).abs() < 1e-3);
            proptest::prop_assume!(!near_kink);
            let jac = nn_jacobian_z(z, &w, &act).unwrap();
            let fd = fd_jacobian(z, &w, &act, 1e-6);
            let scale = fd.0.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
            proptest::prop_assume!(scale > 1e-6);
            proptest::prop_assert!(rel_err(jac, fd) <= 1e-5);
        }
    }
}

use crate::activation::ActivationSpec;
use crate::linalg::BandMatrix;
use crate::nn::{Evaluator, WeightStack};
use crate::{Error, Result, Scalar};

use super::cn::{NewtonConfig, NewtonStep};
use super::{TimeGrid, Trajectory};

/// Uniform node-based grid on `[0, (nx−1)h] × [0, (ny−1)h]` (`ny = 1` in one
/// dimension). Node `(i, j)` has flat index `i + nx·j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceGrid<T> {
    dim: usize,
    nx: usize,
    ny: usize,
    h: T,
}

impl<T: Scalar> SpaceGrid<T> {
    pub fn new_1d(nx: usize, h: T) -> Result<Self> {
        Self::new(1, nx, 1, h)
    }

    pub fn new_2d(nx: usize, ny: usize, h: T) -> Result<Self> {
        Self::new(2, nx, ny, h)
    }

    pub fn new(dim: usize, nx: usize, ny: usize, h: T) -> Result<Self> {
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::Domain(format!("grid spacing must be > 0, got {h}")));
        }
        match dim {
            1 if nx >= 2 && ny == 1 => {}
            2 if nx >= 2 && ny >= 2 => {}
            1 | 2 => {
                return Err(Error::Domain(format!(
                    "{dim}-d grid needs at least two nodes per axis, got {nx}x{ny}"
                )))
            }
            _ => return Err(Error::Domain(format!("dimension must be 1 or 2, got {dim}"))),
        }
        Ok(SpaceGrid { dim, nx, ny, h })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    /// Physical coordinates of node `idx`.
    pub fn coords(&self, idx: usize) -> (T, T) {
        let (i, j) = (idx % self.nx, idx / self.nx);
        (T::from_usize(i).unwrap() * self.h, T::from_usize(j).unwrap() * self.h)
    }

    fn axis_weight(i: usize, n: usize) -> T {
        if n == 1 {
            T::one()
        } else if i == 0 || i == n - 1 {
            T::lit(0.5)
        } else {
            T::one()
        }
    }

    /// Trapezoidal quadrature weight of node `idx`.
    pub fn weight(&self, idx: usize) -> T {
        let (i, j) = (idx % self.nx, idx / self.nx);
        Self::axis_weight(i, self.nx) * Self::axis_weight(j, self.ny) * self.h.powi(self.dim as i32)
    }

    /// `|Ω|`.
    pub fn volume(&self) -> T {
        let lx = T::from_usize(self.nx - 1).unwrap() * self.h;
        if self.dim == 1 {
            lx
        } else {
            lx * T::from_usize(self.ny - 1).unwrap() * self.h
        }
    }

    pub fn integrate(&self, u: &[T]) -> T {
        u.iter().enumerate().map(|(k, &x)| self.weight(k) * x).sum()
    }

    pub fn integrate_sq(&self, u: &[T]) -> T {
        u.iter().enumerate().map(|(k, &x)| self.weight(k) * x * x).sum()
    }

    /// Quadrature mean `∫u / |Ω|`.
    pub fn mean(&self, u: &[T]) -> T {
        self.integrate(u) / self.volume()
    }

    /// Neighbours of node `idx` in the Laplacian stencil with their
    /// coefficients (times `h²`). Ghost-node reflection doubles the inward
    /// neighbour at a boundary.
    fn stencil(&self, idx: usize, mut visit: impl FnMut(usize, T)) {
        let two = T::lit(2.0);
        let mut axis = |pos: usize, n: usize, stride: usize| {
            if pos == 0 {
                visit(idx + stride, two);
            } else if pos == n - 1 {
                visit(idx - stride, two);
            } else {
                visit(idx - stride, T::one());
                visit(idx + stride, T::one());
            }
        };
        axis(idx % self.nx, self.nx, 1);
        if self.dim == 2 {
            axis(idx / self.nx, self.ny, self.nx);
        }
    }

    /// `out = Δ_h u` with homogeneous Neumann conditions.
    pub fn laplacian(&self, u: &[T], out: &mut [T]) {
        let inv_h2 = (self.h * self.h).recip();
        let centre = T::lit(2.0 * self.dim as f64);
        for idx in 0..self.n_nodes() {
            let mut acc = -centre * u[idx];
            self.stencil(idx, |j, c| acc += c * u[j]);
            out[idx] = acc * inv_h2;
        }
    }

    fn bandwidth(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            self.nx
        }
    }
}

/// Parameters of the reaction–diffusion model
/// `∂_t v − νΔv + φ_v = f_v`, `∂_t w + δw + φ_w = f_w`, `∂v/∂n = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdeModelConfig<T> {
    pub nu: T,
    pub delta: T,
    pub f_v: T,
    pub f_w: T,
    pub space: SpaceGrid<T>,
}

impl<T: Scalar> PdeModelConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > T::zero()) || !self.nu.is_finite() {
            return Err(Error::Domain(format!("diffusivity must be > 0, got {}", self.nu)));
        }
        if !(self.delta >= T::zero()) || !self.delta.is_finite() {
            return Err(Error::Domain(format!("delta must be >= 0, got {}", self.delta)));
        }
        if !self.f_v.is_finite() || !self.f_w.is_finite() {
            return Err(Error::Domain("forcings must be finite".into()));
        }
        Ok(())
    }
}

/// Snapshots of `(v, w)` on a [`SpaceGrid`] at every time node.
#[derive(Clone, Debug)]
pub struct FieldTrajectory<T> {
    time: TimeGrid<T>,
    space: SpaceGrid<T>,
    v: Vec<Vec<T>>,
    w: Vec<Vec<T>>,
    steps: Vec<NewtonStep<T>>,
}

impl<T: Scalar> FieldTrajectory<T> {
    pub fn new(time: TimeGrid<T>, space: SpaceGrid<T>, v: Vec<Vec<T>>, w: Vec<Vec<T>>) -> Result<Self> {
        if v.len() != time.n_nodes() || w.len() != time.n_nodes() {
            return Err(Error::Shape(format!(
                "expected {} snapshots, got {} and {}",
                time.n_nodes(),
                v.len(),
                w.len()
            )));
        }
        let n = space.n_nodes();
        for (k, (a, b)) in v.iter().zip(&w).enumerate() {
            if a.len() != n || b.len() != n {
                return Err(Error::Shape(format!("snapshot {k} does not match the {n}-node grid")));
            }
            if a.iter().chain(b).any(|x| !x.is_finite()) {
                return Err(Error::Domain(format!("snapshot {k} contains non-finite values")));
            }
        }
        Ok(FieldTrajectory {
            time,
            space,
            v,
            w,
            steps: Vec::new(),
        })
    }

    pub fn time_grid(&self) -> &TimeGrid<T> {
        &self.time
    }

    pub fn space(&self) -> &SpaceGrid<T> {
        &self.space
    }

    pub fn v_fields(&self) -> &[Vec<T>] {
        &self.v
    }

    pub fn w_fields(&self) -> &[Vec<T>] {
        &self.w
    }

    /// Newton diagnostics per time step (empty when loaded from disk).
    pub fn steps(&self) -> &[NewtonStep<T>] {
        &self.steps
    }

    /// Time history at one node.
    pub fn node_trajectory(&self, idx: usize) -> Result<Trajectory<T>> {
        if idx >= self.space.n_nodes() {
            return Err(Error::Shape(format!("node {idx} out of range")));
        }
        let states = self.v.iter().zip(&self.w).map(|(a, b)| [a[idx], b[idx]]).collect();
        Trajectory::new(self.time, states)
    }

    pub fn mean_v(&self, k: usize) -> T {
        self.space.mean(&self.v[k])
    }

    pub fn energy(&self, k: usize) -> T {
        super::energy_field(&self.v[k], &self.w[k], &self.space)
    }
}

/// Crank–Nicolson in time for both diffusion and reaction; each step is
/// solved by Newton. The pointwise `w` unknowns are eliminated by a Schur
/// complement so every Newton update is one banded solve for `v`.
pub fn simulate_pde<T: Scalar>(
    weights: &WeightStack<T>,
    act: &ActivationSpec<T>,
    cfg: &PdeModelConfig<T>,
    v0: &[T],
    w0: &[T],
    grid: &TimeGrid<T>,
    newton: &NewtonConfig<T>,
) -> Result<FieldTrajectory<T>> {
    cfg.validate()?;
    let space = cfg.space;
    let n = space.n_nodes();
    if v0.len() != n || w0.len() != n {
        return Err(Error::Shape(format!(
            "initial fields have {} and {} values, grid has {n} nodes",
            v0.len(),
            w0.len()
        )));
    }
    if v0.iter().chain(w0).any(|x| !x.is_finite()) {
        return Err(Error::Domain("initial fields must be finite".into()));
    }

    let mut reaction = Reaction::new(weights, *act, cfg, n);
    let half = grid.dt() * T::lit(0.5);
    let inv_h2 = (space.h() * space.h()).recip();
    let centre = T::lit(2.0 * space.dim() as f64);
    let band = space.bandwidth();

    let mut vs = Vec::with_capacity(grid.n_nodes());
    let mut ws = Vec::with_capacity(grid.n_nodes());
    let mut steps = Vec::with_capacity(grid.n_steps());
    vs.push(v0.to_vec());
    ws.push(w0.to_vec());

    let mut v = v0.to_vec();
    let mut w = w0.to_vec();
    let mut lap = vec![T::zero(); n];
    let mut base_v = vec![T::zero(); n];
    let mut base_w = vec![T::zero(); n];
    let mut rv = vec![T::zero(); n];
    let mut rw = vec![T::zero(); n];
    let mut rhs = vec![T::zero(); n];

    // R(v, w) with the explicit half-step folded into base_{v,w}.
    let residual = |reaction: &Reaction<T>, v: &[T], lap: &mut [T], base_v: &[T], base_w: &[T], w: &[T], rv: &mut [T], rw: &mut [T]| {
        space.laplacian(v, lap);
        let mut res = T::zero();
        for i in 0..n {
            rv[i] = v[i] - base_v[i] - half * (cfg.nu * lap[i] + reaction.fv[i]);
            rw[i] = w[i] - base_w[i] - half * reaction.fw[i];
            res = res.max(rv[i].abs()).max(rw[i].abs());
        }
        res
    };

    for step in 0..grid.n_steps() {
        reaction.eval(&v, &w, false);
        space.laplacian(&v, &mut lap);
        for i in 0..n {
            base_v[i] = v[i] + half * (cfg.nu * lap[i] + reaction.fv[i]);
            base_w[i] = w[i] + half * reaction.fw[i];
        }

        reaction.eval(&v, &w, true);
        let mut res = residual(&reaction, &v, &mut lap, &base_v, &base_w, &w, &mut rv, &mut rw);
        let mut iterations = 0;
        let mut polished = false;
        loop {
            let converged = res <= newton.tol;
            if converged && (polished || res == T::zero()) {
                break;
            }
            if !converged && (iterations == newton.max_iter || !res.is_finite()) {
                return Err(Error::Newton {
                    step,
                    residual: res.to_f64_lossy(),
                });
            }

            // Schur complement S = P − Q D⁻¹ R on the v unknowns.
            let mut s = BandMatrix::zeros(n, band, band);
            for i in 0..n {
                let j = &reaction.jac[i];
                let d = T::one() - half * j[1][1];
                if d == T::zero() {
                    return Err(Error::Singular { step });
                }
                let diag = T::one() + half * cfg.nu * centre * inv_h2 - half * j[0][0]
                    - half * half * j[0][1] * j[1][0] / d;
                s.add(i, i, diag);
                space.stencil(i, |k, c| s.add(i, k, -half * cfg.nu * c * inv_h2));
                rhs[i] = -rv[i] - half * j[0][1] * rw[i] / d;
            }
            s.factor().map_err(|_| Error::Singular { step })?;
            s.solve(&mut rhs);

            let (v_prev, w_prev) = (v.clone(), w.clone());
            for i in 0..n {
                let j = &reaction.jac[i];
                let d = T::one() - half * j[1][1];
                v[i] += rhs[i];
                w[i] += (-rw[i] + half * j[1][0] * rhs[i]) / d;
            }
            reaction.eval(&v, &w, true);
            let new_res = residual(&reaction, &v, &mut lap, &base_v, &base_w, &w, &mut rv, &mut rw);

            if converged {
                // Polishing update: keep only if it does not hurt.
                polished = true;
                if new_res > res {
                    v = v_prev;
                    w = w_prev;
                    reaction.eval(&v, &w, true);
                    residual(&reaction, &v, &mut lap, &base_v, &base_w, &w, &mut rv, &mut rw);
                } else {
                    res = new_res;
                }
            } else {
                iterations += 1;
                res = new_res;
            }
        }
        steps.push(NewtonStep { iterations, residual: res });
        vs.push(v.clone());
        ws.push(w.clone());
    }

    let mut out = FieldTrajectory::new(*grid, space, vs, ws)?;
    out.steps = steps;
    Ok(out)
}

/// Pointwise reaction `F(z) = f − Φ(z) − (0, δw)` and its Jacobian.
struct Reaction<'a, T: Scalar> {
    eval: Evaluator<'a, T>,
    delta: T,
    f: [T; 2],
    fv: Vec<T>,
    fw: Vec<T>,
    jac: Vec<[[T; 2]; 2]>,
}

impl<'a, T: Scalar> Reaction<'a, T> {
    fn new(weights: &'a WeightStack<T>, act: ActivationSpec<T>, cfg: &PdeModelConfig<T>, n: usize) -> Self {
        Reaction {
            eval: Evaluator::new(weights, act),
            delta: cfg.delta,
            f: [cfg.f_v, cfg.f_w],
            fv: vec![T::zero(); n],
            fw: vec![T::zero(); n],
            jac: vec![[[T::zero(); 2]; 2]; n],
        }
    }

    fn eval(&mut self, v: &[T], w: &[T], with_jacobian: bool) {
        let mut pass = self.eval.new_pass();
        for i in 0..v.len() {
            let phi = self.eval.forward_into([v[i], w[i]], &mut pass);
            self.fv[i] = self.f[0] - phi[0];
            self.fw[i] = self.f[1] - self.delta * w[i] - phi[1];
            if with_jacobian {
                let j = self.eval.jacobian(&pass).0;
                self.jac[i] = [[-j[0][0], -j[0][1]], [-j[1][0], -j[1][1] - self.delta]];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{simulate_cn, NetworkDynamics, OdeModelConfig};
    use crate::nn::NetworkArchitecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_net() -> WeightStack<f64> {
        WeightStack::zeros(&NetworkArchitecture::uniform(3, 3).unwrap())
    }

    #[test]
    fn grid_validation_and_quadrature() {
        assert!(SpaceGrid::<f64>::new_1d(1, 0.1).is_err());
        assert!(SpaceGrid::<f64>::new_2d(4, 1, 0.1).is_err());
        assert!(SpaceGrid::<f64>::new(3, 4, 4, 0.1).is_err());
        assert!(SpaceGrid::<f64>::new_1d(4, 0.0).is_err());
        let g = SpaceGrid::<f64>::new_2d(5, 3, 0.25).unwrap();
        assert!((g.volume() - 0.5).abs() < 1e-15);
        let ones = vec![1.0; g.n_nodes()];
        assert!((g.integrate(&ones) - g.volume()).abs() < 1e-15);
        // x is integrated exactly by the trapezoidal rule.
        let x: Vec<f64> = (0..g.n_nodes()).map(|k| g.coords(k).0).collect();
        assert!((g.mean(&x) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn laplacian_sums_to_zero_and_is_exact_on_quadratics() {
        let g = SpaceGrid::<f64>::new_2d(6, 5, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..g.n_nodes()).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let mut lap = vec![0.0; g.n_nodes()];
        g.laplacian(&u, &mut lap);
        assert!(g.integrate(&lap).abs() < 1e-12);

        // u = x² + y²: Δu = 4 in the interior.
        let q: Vec<f64> = (0..g.n_nodes())
            .map(|k| {
                let (x, y) = g.coords(k);
                x * x + y * y
            })
            .collect();
        g.laplacian(&q, &mut lap);
        for k in 0..g.n_nodes() {
            let (i, j) = (k % 6, k / 6);
            if i > 0 && i < 5 && j > 0 && j < 4 {
                assert!((lap[k] - 4.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_field_is_steady_without_forcing() {
        let space = SpaceGrid::new_1d(9, 0.125).unwrap();
        let cfg = PdeModelConfig { nu: 1.0, delta: 0.0, f_v: 0.0, f_w: 0.0, space };
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let v0 = vec![0.7; 9];
        let w0 = vec![-0.2; 9];
        let out = simulate_pde(&zero_net(), &ActivationSpec::tanh(), &cfg, &v0, &w0, &grid, &NewtonConfig::default()).unwrap();
        for (v, w) in out.v_fields().iter().zip(out.w_fields()) {
            assert!(v.iter().all(|&x| x == 0.7));
            assert!(w.iter().all(|&x| x == -0.2));
        }
    }

    #[test]
    fn diffusion_conserves_mean_and_decays_energy() {
        let space = SpaceGrid::<f64>::new_2d(8, 8, 1.0 / 7.0).unwrap();
        let cfg = PdeModelConfig { nu: 0.1, delta: 0.0, f_v: 0.0, f_w: 0.0, space };
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let v0: Vec<f64> = (0..64)
            .map(|k| {
                let (x, y) = space.coords(k);
                (3.0 * x).sin() + y * y
            })
            .collect();
        let w0 = vec![0.0; 64];
        let out = simulate_pde(&zero_net(), &ActivationSpec::tanh(), &cfg, &v0, &w0, &grid, &NewtonConfig::default()).unwrap();
        let m0 = out.mean_v(0);
        for k in 1..grid.n_nodes() {
            assert!(((out.mean_v(k) - m0) / m0).abs() < 1e-12);
            assert!(out.energy(k) <= out.energy(k - 1) + 1e-15);
        }
    }

    #[test]
    fn uniform_fields_follow_the_ode() {
        let arch = NetworkArchitecture::uniform(4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = WeightStack::random(&arch, 0.8, &mut rng);
        let act = ActivationSpec::smoothed_relu(0.5).unwrap();
        let model = OdeModelConfig { delta: 0.1, f_v: 0.3, f_w: -0.1 };
        let space = SpaceGrid::<f64>::new_2d(5, 4, 0.3).unwrap();
        let cfg = PdeModelConfig { nu: 0.5, delta: model.delta, f_v: model.f_v, f_w: model.f_w, space };
        let grid = TimeGrid::new(2.0, 40).unwrap();
        let newton = NewtonConfig::default();
        let z0 = [0.4, -0.3];
        let field = simulate_pde(&w, &act, &cfg, &vec![z0[0]; 20], &vec![z0[1]; 20], &grid, &newton).unwrap();
        let mut dynamics = NetworkDynamics::new(&w, act, model).unwrap();
        let ode = simulate_cn(&mut dynamics, z0, &grid, &newton).unwrap();
        for idx in 0..20 {
            let node = field.node_trajectory(idx).unwrap();
            for (a, b) in node.states().iter().zip(ode.trajectory.states()) {
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
        }
        assert!(field.steps().iter().all(|s| s.residual <= newton.tol));
    }

    #[test]
    fn shape_errors() {
        let space = SpaceGrid::new_1d(4, 0.5).unwrap();
        let cfg = PdeModelConfig { nu: 1.0, delta: 0.0, f_v: 0.0, f_w: 0.0, space };
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let act = ActivationSpec::tanh();
        let newton = NewtonConfig::default();
        assert!(simulate_pde(&zero_net(), &act, &cfg, &[0.0; 3], &[0.0; 4], &grid, &newton).is_err());
        let bad = PdeModelConfig { nu: 0.0, ..cfg };
        assert!(simulate_pde(&zero_net(), &act, &bad, &[0.0; 4], &[0.0; 4], &grid, &newton).is_err());
    }
}

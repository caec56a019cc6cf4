//! Barzilai–Borwein gradient descent with Armijo backtracking and optional
//! projection onto the ball `‖W‖² ≤ C`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{kkt_residual, least_squares_multiplier, AdjointMode, KktReport, Objective, Problem};
use crate::nn::{project_ball, weight_norm_sq, NetworkArchitecture, WeightGradient, WeightStack};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BbVariant {
    Bb1,
    Bb2,
}

impl std::str::FromStr for BbVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bb1" => Ok(BbVariant::Bb1),
            "bb2" => Ok(BbVariant::Bb2),
            _ => Err(Error::Usage(format!("unknown BB variant '{s}' (expected bb1|bb2)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmijoConfig<T> {
    pub c1: T,
    pub backtrack: T,
    pub max_backtracks: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BbConfig<T> {
    pub variant: BbVariant,
    pub step_min: T,
    pub step_max: T,
    pub initial_step: T,
}

/// Optimizer settings. `alpha` is the penalty weight used by [`train`];
/// `ball_c` switches on projection onto `‖W‖² ≤ C`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    pub alpha: T,
    pub ball_c: Option<T>,
    pub max_iters: usize,
    pub grad_tol: T,
    pub armijo: ArmijoConfig<T>,
    pub bb: BbConfig<T>,
    pub seed: u64,
    pub init_scale: T,
    pub adjoint: AdjointMode,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            alpha: T::lit(0.01),
            ball_c: None,
            max_iters: 1000,
            grad_tol: T::lit(1e-8),
            armijo: ArmijoConfig {
                c1: T::lit(1e-4),
                backtrack: T::lit(0.5),
                max_backtracks: 30,
            },
            bb: BbConfig {
                variant: BbVariant::Bb1,
                step_min: T::lit(1e-8),
                step_max: T::lit(1e2),
                initial_step: T::lit(1e-2),
            },
            seed: 0,
            init_scale: T::lit(0.5),
            adjoint: AdjointMode::Discrete,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Domain(msg));
        if !(self.alpha >= T::zero()) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if let Some(c) = self.ball_c {
            if !(c > T::zero()) {
                return bad(format!("ball C must be > 0, got {c}"));
            }
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        if !(self.grad_tol > T::zero()) {
            return bad(format!("grad_tol must be > 0, got {}", self.grad_tol));
        }
        let a = &self.armijo;
        if !(a.c1 > T::zero() && a.c1 < T::one()) {
            return bad(format!("armijo c1 must lie in (0, 1), got {}", a.c1));
        }
        if !(a.backtrack > T::zero() && a.backtrack < T::one()) {
            return bad(format!("armijo backtrack must lie in (0, 1), got {}", a.backtrack));
        }
        let b = &self.bb;
        if !(b.step_min > T::zero() && b.step_min <= b.initial_step && b.initial_step <= b.step_max) {
            return bad(format!(
                "need 0 < step_min <= initial_step <= step_max, got {} / {} / {}",
                b.step_min, b.initial_step, b.step_max
            ));
        }
        if !(self.init_scale >= T::zero()) || !self.init_scale.is_finite() {
            return bad(format!("init_scale must be >= 0, got {}", self.init_scale));
        }
        Ok(())
    }
}

/// Seeded uniform weights on `[−init_scale, init_scale]`.
pub fn init_weights<T: Scalar>(arch: &NetworkArchitecture, seed: u64, init_scale: T) -> WeightStack<T> {
    WeightStack::random(arch, init_scale, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// BB1 `⟨s,s⟩/⟨s,y⟩` or BB2 `⟨s,y⟩/⟨y,y⟩` for `s = ΔW`, `y = Δ∇J`, clamped to
/// `[step_min, step_max]`; degenerate ratios fall back to `initial_step`.
pub fn bb_step<T: Scalar>(dw: &[T], dg: &[T], bb: &BbConfig<T>) -> T {
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>();
    let sy = dot(dw, dg);
    let ratio = match bb.variant {
        BbVariant::Bb1 => dot(dw, dw) / sy,
        BbVariant::Bb2 => sy / dot(dg, dg),
    };
    if !(ratio > T::zero()) || !ratio.is_finite() {
        return bb.initial_step;
    }
    ratio.max(bb.step_min).min(bb.step_max)
}

/// Accepted line-search step.
#[derive(Clone, Debug)]
pub struct ArmijoStep<T> {
    pub weights: WeightStack<T>,
    pub value: T,
    pub step: T,
    pub backtracks: usize,
}

/// Backtracking from `step0` along `−∇J`:
/// accepts the first `s = step0·backtrackⁿ` with
/// `J(P(W − s∇J)) ≤ J(W) − (c1/s)‖P(W − s∇J) − W‖²`, which reduces to
/// `J(W) − c1·s‖∇J‖²` when there is no projection `P`.
///
/// Solver failures at a trial point count as rejection. Exhausting
/// `max_backtracks` yields [`Error::LineSearch`].
pub fn armijo_search<T: Scalar, F>(
    w: &WeightStack<T>,
    grad: &WeightGradient<T>,
    value: T,
    step0: T,
    armijo: &ArmijoConfig<T>,
    ball_c: Option<T>,
    mut eval: F,
) -> Result<ArmijoStep<T>>
where
    F: FnMut(&WeightStack<T>) -> Result<T>,
{
    let mut step = step0;
    for backtracks in 0..=armijo.max_backtracks {
        let mut trial = w.axpy(-step, grad.as_stack())?;
        if let Some(c) = ball_c {
            trial = project_ball(&trial, c)?;
        }
        let moved: T = trial.iter().zip(w.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let j = match eval(&trial) {
            Ok(j) => j,
            Err(Error::Newton { .. } | Error::Singular { .. } | Error::Domain(_)) => T::infinity(),
            Err(e) => return Err(e),
        };
        if j.is_finite() && j <= value - armijo.c1 / step * moved {
            return Ok(ArmijoStep {
                weights: trial,
                value: j,
                step,
                backtracks,
            });
        }
        if backtracks < armijo.max_backtracks {
            step *= armijo.backtrack;
        }
    }
    Err(Error::LineSearch {
        backtracks: armijo.max_backtracks,
        step: step.to_f64_lossy(),
    })
}

/// One logged iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord<T> {
    pub iter: usize,
    pub objective: T,
    pub grad_norm: T,
    /// Accepted step (0 for the initial record).
    pub step: T,
    pub backtracks: usize,
    pub per_traj: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIters,
    LineSearchFailed,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIters => "max-iters",
            Termination::LineSearchFailed => "line-search-failed",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport<T> {
    pub records: Vec<IterRecord<T>>,
    pub weights: WeightStack<T>,
    pub gradient: WeightGradient<T>,
    pub kkt: KktReport<T>,
    pub termination: Termination,
}

impl<T: Scalar> TrainReport<T> {
    pub fn final_objective(&self) -> T {
        self.records.last().map(|r| r.objective).unwrap_or_else(T::nan)
    }

    pub fn iterations(&self) -> usize {
        self.records.last().map(|r| r.iter).unwrap_or(0)
    }

    pub fn is_monotone(&self) -> bool {
        self.records.windows(2).all(|p| p[1].objective <= p[0].objective)
    }
}

/// KKT residuals for the current iterate. In constraint mode the multiplier
/// is the least-squares one when the constraint is active and 0 otherwise.
pub fn current_kkt<T: Scalar>(w: &WeightStack<T>, grad: &WeightGradient<T>, ball_c: Option<T>) -> Result<KktReport<T>> {
    match ball_c {
        None => kkt_residual(w, grad, None, T::zero()),
        Some(c) => {
            let active = weight_norm_sq(w) >= c * (T::one() - T::lit(1e3) * T::epsilon());
            let lambda = if active { least_squares_multiplier(w, grad) } else { T::zero() };
            kkt_residual(w, grad, Some(c), lambda)
        }
    }
}

/// Trains from `init_weights(arch, cfg.seed, cfg.init_scale)`. The penalty
/// weight of `problem` is replaced by `cfg.alpha`.
pub fn train<T: Scalar>(problem: &Problem<T>, arch: &NetworkArchitecture, cfg: &TrainConfig<T>) -> Result<TrainReport<T>> {
    let init = init_weights(arch, cfg.seed, cfg.init_scale);
    train_from(problem, &init, cfg, |_| {})
}

/// Trains from an explicit starting point, calling `on_iter` after every
/// accepted iterate (and once for the start).
pub fn train_from<T: Scalar>(
    problem: &Problem<T>,
    init: &WeightStack<T>,
    cfg: &TrainConfig<T>,
    mut on_iter: impl FnMut(&IterRecord<T>),
) -> Result<TrainReport<T>> {
    cfg.validate()?;
    problem.activation().require_c1()?;
    let obj = Objective::new(cfg.alpha, problem.objective_spec().terminal_weight)?;
    let problem = problem.with_objective(obj)?;

    let mut w = match cfg.ball_c {
        Some(c) => project_ball(init, c)?,
        None => init.clone(),
    };
    let (mut value, mut grad, _) = problem.gradient(&w, cfg.adjoint)?;
    let mut kkt = current_kkt(&w, &grad, cfg.ball_c)?;
    let mut records = vec![IterRecord {
        iter: 0,
        objective: value.value,
        grad_norm: kkt.stationarity,
        step: T::zero(),
        backtracks: 0,
        per_traj: value.per_traj.clone(),
    }];
    on_iter(&records[0]);

    let mut previous: Option<(Vec<T>, Vec<T>)> = None;
    let mut termination = Termination::MaxIters;
    for iter in 1..=cfg.max_iters {
        if kkt.stationarity <= cfg.grad_tol {
            termination = Termination::Converged;
            break;
        }
        let (w_flat, g_flat) = (w.to_flat(), grad.to_flat());
        let step0 = match &previous {
            Some((pw, pg)) => {
                let dw: Vec<T> = w_flat.iter().zip(pw).map(|(&a, &b)| a - b).collect();
                let dg: Vec<T> = g_flat.iter().zip(pg).map(|(&a, &b)| a - b).collect();
                bb_step(&dw, &dg, &cfg.bb)
            }
            None => cfg.bb.initial_step,
        };
        let accepted = armijo_search(&w, &grad, value.value, step0, &cfg.armijo, cfg.ball_c, |trial| {
            problem.objective(trial).map(|v| v.value)
        });
        let accepted = match accepted {
            Ok(a) => a,
            Err(Error::LineSearch { .. }) => {
                termination = Termination::LineSearchFailed;
                break;
            }
            Err(e) => return Err(e),
        };
        previous = Some((w_flat, g_flat));
        w = accepted.weights;
        (value, grad, _) = problem.gradient(&w, cfg.adjoint)?;
        kkt = current_kkt(&w, &grad, cfg.ball_c)?;
        let record = IterRecord {
            iter,
            objective: value.value,
            grad_norm: kkt.stationarity,
            step: accepted.step,
            backtracks: accepted.backtracks,
            per_traj: value.per_traj.clone(),
        };
        on_iter(&record);
        records.push(record);
    }
    if termination == Termination::MaxIters && kkt.stationarity <= cfg.grad_tol {
        termination = Termination::Converged;
    }
    Ok(TrainReport {
        records,
        weights: w,
        gradient: grad,
        kkt,
        termination,
    })
}

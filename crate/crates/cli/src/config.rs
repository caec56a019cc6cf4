//! The run configuration document and its validation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use monoid_core::activation::{ActivationKind, ActivationSpec};
use monoid_core::adjoint::{AdjointMode, Objective};
use monoid_core::forward::{
    FhParams, NewtonConfig, OdeModelConfig, PdeModelConfig, SpaceGrid, TimeGrid, PAPER_INITIAL_CONDITIONS,
};
use monoid_core::nn::NetworkArchitecture;
use monoid_core::optimize::{ArmijoConfig, BbConfig, BbVariant, TrainConfig};

use crate::failure::Failure;

/// Reaction model the network is embedded in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub delta: f64,
    pub f_v: f64,
    pub f_w: f64,
    /// PDE only.
    pub nu: f64,
    pub space_dim: usize,
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            delta: 0.064,
            f_v: 0.5,
            f_w: 0.056,
            nu: 0.01,
            space_dim: 1,
            nx: 65,
            ny: 1,
            h: 0.015625,
        }
    }
}

/// Reference model used to generate data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FhSection {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub eta: f64,
    pub gamma: f64,
    pub f_v: f64,
    pub f_w: f64,
    pub initial_conditions: Vec<[f64; 2]>,
}

impl Default for FhSection {
    fn default() -> Self {
        let p = FhParams::<f64>::paper();
        let f = FhParams::<f64>::paper_forcing();
        FhSection {
            a: p.a,
            b: p.b,
            c: p.c,
            d: p.d,
            eta: p.eta,
            gamma: p.gamma,
            f_v: f[0],
            f_w: f[1],
            initial_conditions: PAPER_INITIAL_CONDITIONS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub depth: usize,
    pub width: usize,
    pub init_scale: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            depth: 7,
            width: 2,
            init_scale: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivationSection {
    pub kind: String,
    pub epsilon: f64,
}

impl Default for ActivationSection {
    fn default() -> Self {
        ActivationSection {
            kind: "smoothed_relu".into(),
            epsilon: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: f64,
    pub dt: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for TimeSection {
    fn default() -> Self {
        let n = NewtonConfig::<f64>::default();
        TimeSection {
            t_final: 40.0,
            dt: 0.05,
            newton_tol: n.tol,
            newton_max_iter: n.max_iter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub alpha: f64,
    /// Hard constraint `‖W‖² ≤ ball_c`; absent means penalty mode.
    pub ball_c: Option<f64>,
    pub terminal_weight: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub bb_variant: String,
    pub step_min: f64,
    pub step_max: f64,
    pub initial_step: f64,
    pub seed: u64,
    pub adjoint: String,
    /// Training horizons solved in sequence, each warm-started from the
    /// previous; empty means a single stage on `[time].t_final`.
    pub horizons: Vec<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::<f64>::default();
        TrainSection {
            alpha: t.alpha,
            ball_c: t.ball_c,
            terminal_weight: 0.0,
            max_iters: t.max_iters,
            grad_tol: t.grad_tol,
            c1: t.armijo.c1,
            backtrack: t.armijo.backtrack,
            max_backtracks: t.armijo.max_backtracks,
            bb_variant: "bb1".into(),
            step_min: t.bb.step_min,
            step_max: t.bb.step_max,
            initial_step: t.bb.initial_step,
            seed: t.seed,
            adjoint: t.adjoint.name().into(),
            horizons: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub out_dir: PathBuf,
    /// Dataset manifest; defaults to `<out_dir>/data/manifest.toml`.
    pub dataset: Option<PathBuf>,
    /// Weights file; defaults to `<out_dir>/weights.txt`.
    pub weights: Option<PathBuf>,
    pub snapshot_stride: usize,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            out_dir: PathBuf::from("out"),
            dataset: None,
            weights: None,
            snapshot_stride: 20,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub fh: FhSection,
    pub network: NetworkSection,
    pub activation: ActivationSection,
    pub time: TimeSection,
    pub train: TrainSection,
    pub io: IoSection,
}

const SECTIONS: [&str; 7] = ["model", "fh", "network", "activation", "time", "train", "io"];

impl RunConfig {
    /// Reads `path` (or the defaults), applies `key=value` overrides and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::io(format!("{}: {e}", p.display())))?;
                text.parse()
                    .map_err(|e| Failure::schema(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides.iter().flat_map(|s| split_top_level(s)) {
            apply_override(&mut doc, &item)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Failure::schema(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every semantic check, so no computation starts on a bad document.
    pub fn validate(&self) -> Result<()> {
        self.ode_model()?;
        self.fh_params()?;
        self.architecture()?;
        self.activation()?;
        self.time_grid()?;
        self.newton()?;
        self.train_config()?;
        self.objective()?;
        if self.fh.initial_conditions.is_empty() {
            return Err(Failure::schema("fh.initial_conditions must not be empty").into());
        }
        if self.train.horizons.iter().any(|&h| !(h > 0.0 && h <= self.time.t_final)) {
            return Err(Failure::schema("train.horizons must lie in (0, time.t_final]").into());
        }
        if self.io.snapshot_stride == 0 {
            return Err(Failure::schema("io.snapshot_stride must be >= 1").into());
        }
        Ok(())
    }

    pub fn ode_model(&self) -> Result<OdeModelConfig<f64>> {
        let m = OdeModelConfig {
            delta: self.model.delta,
            f_v: self.model.f_v,
            f_w: self.model.f_w,
        };
        m.validate().map_err(Failure::schema_from)?;
        Ok(m)
    }

    pub fn pde_model(&self) -> Result<PdeModelConfig<f64>> {
        let m = &self.model;
        let space = SpaceGrid::new(m.space_dim, m.nx, m.ny, m.h).map_err(Failure::schema_from)?;
        let cfg = PdeModelConfig {
            nu: m.nu,
            delta: m.delta,
            f_v: m.f_v,
            f_w: m.f_w,
            space,
        };
        cfg.validate().map_err(Failure::schema_from)?;
        Ok(cfg)
    }

    pub fn fh_params(&self) -> Result<FhParams<f64>> {
        let f = &self.fh;
        let p = FhParams {
            a: f.a,
            b: f.b,
            c: f.c,
            d: f.d,
            eta: f.eta,
            gamma: f.gamma,
        };
        p.validate().map_err(Failure::schema_from)?;
        if !(f.f_v.is_finite() && f.f_w.is_finite()) {
            bail!(Failure::schema("fh forcing must be finite"));
        }
        Ok(p)
    }

    pub fn fh_forcing(&self) -> [f64; 2] {
        [self.fh.f_v, self.fh.f_w]
    }

    pub fn architecture(&self) -> Result<NetworkArchitecture> {
        let n = &self.network;
        if !(n.init_scale >= 0.0 && n.init_scale.is_finite()) {
            bail!(Failure::schema("network.init_scale must be >= 0"));
        }
        Ok(NetworkArchitecture::uniform(n.depth, n.width).map_err(Failure::schema_from)?)
    }

    pub fn activation(&self) -> Result<ActivationSpec<f64>> {
        let kind: ActivationKind = self.activation.kind.parse().map_err(Failure::schema_from)?;
        Ok(ActivationSpec::new(kind, self.activation.epsilon).map_err(Failure::schema_from)?)
    }

    pub fn time_grid(&self) -> Result<TimeGrid<f64>> {
        Ok(TimeGrid::from_step(self.time.t_final, self.time.dt).map_err(Failure::schema_from)?)
    }

    pub fn grid_for(&self, horizon: f64) -> Result<TimeGrid<f64>> {
        Ok(TimeGrid::from_step(horizon, self.time.dt).map_err(Failure::schema_from)?)
    }

    pub fn newton(&self) -> Result<NewtonConfig<f64>> {
        let t = &self.time;
        if !(t.newton_tol > 0.0) || t.newton_max_iter == 0 {
            bail!(Failure::schema("time.newton_tol must be > 0 and time.newton_max_iter >= 1"));
        }
        Ok(NewtonConfig {
            tol: t.newton_tol,
            max_iter: t.newton_max_iter,
        })
    }

    pub fn adjoint_mode(&self) -> Result<AdjointMode> {
        Ok(self.train.adjoint.parse().map_err(Failure::schema_from)?)
    }

    pub fn objective(&self) -> Result<Objective<f64>> {
        Ok(Objective::new(self.train.alpha, self.train.terminal_weight).map_err(Failure::schema_from)?)
    }

    pub fn train_config(&self) -> Result<TrainConfig<f64>> {
        let t = &self.train;
        let variant = match t.bb_variant.as_str() {
            "bb1" => BbVariant::Bb1,
            "bb2" => BbVariant::Bb2,
            other => bail!(Failure::schema(format!("train.bb_variant must be bb1|bb2, got '{other}'"))),
        };
        let cfg = TrainConfig {
            alpha: t.alpha,
            ball_c: t.ball_c,
            max_iters: t.max_iters,
            grad_tol: t.grad_tol,
            armijo: ArmijoConfig {
                c1: t.c1,
                backtrack: t.backtrack,
                max_backtracks: t.max_backtracks,
            },
            bb: BbConfig {
                variant,
                step_min: t.step_min,
                step_max: t.step_max,
                initial_step: t.initial_step,
            },
            seed: t.seed,
            init_scale: self.network.init_scale,
            adjoint: self.adjoint_mode()?,
        };
        cfg.validate().map_err(Failure::schema_from)?;
        Ok(cfg)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.io
            .dataset
            .clone()
            .unwrap_or_else(|| self.io.out_dir.join("data").join(monoid_core::io::MANIFEST_NAME))
    }

    pub fn weights_path(&self) -> PathBuf {
        self.io.weights.clone().unwrap_or_else(|| self.io.out_dir.join("weights.txt"))
    }
}

/// Splits on commas outside brackets, so array values survive.
fn split_top_level(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let (mut depth, mut cur) = (0i32, String::new());
    for ch in s.chars() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    out.push(cur);
    out.into_iter().filter(|s| !s.trim().is_empty()).collect()
}

/// `section.key=value`, or a bare key naming a field of `[fh]`.
fn apply_override(doc: &mut toml::Table, item: &str) -> Result<()> {
    let (key, value) = item
        .split_once('=')
        .ok_or_else(|| Failure::usage(format!("override '{item}' is not key=value")))?;
    let (section, field) = match key.trim().split_once('.') {
        Some((s, f)) => (s.to_string(), f.to_string()),
        None => ("fh".to_string(), key.trim().to_string()),
    };
    if !SECTIONS.contains(&section.as_str()) {
        bail!(Failure::usage(format!("unknown config section '{section}'")));
    }
    let raw = value.trim();
    let parsed: toml::Value = format!("x = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let table = doc
        .entry(section.clone())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .with_context(|| format!("config entry '{section}' is not a table"))
        .map_err(|e| Failure::schema(e.to_string()))?;
    table.insert(field, parsed);
    Ok(())
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use monoid_core::adjoint::{AdjointMode, Problem};
use monoid_core::check::{default_tolerance, gradcheck};
use monoid_core::forward::{
    generate_from, relative_l2_misfit, simulate_cn, simulate_pde, FitzHughNagumo, NetworkDynamics, TimeGrid,
    Trajectory,
};
use monoid_core::io;
use monoid_core::nn::WeightStack;
use monoid_core::optimize::{init_weights, train_from, Termination, TrainReport};

use crate::config::RunConfig;
use crate::failure::{Failure, EXIT_BREACH, EXIT_LINE_SEARCH};
use crate::plot::{Chart, Series};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Ode,
    Pde,
}

pub fn generate(cfg: &RunConfig) -> Result<()> {
    let grid = cfg.time_grid()?;
    let ics: Vec<[f64; 2]> = cfg.fh.initial_conditions.clone();
    let data = generate_from(&cfg.fh_params()?, cfg.fh_forcing(), &ics, &grid, &cfg.newton()?)?;
    let manifest = cfg.dataset_path();
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let written = io::write_dataset(dir, &data)?;
    println!("wrote {} trajectories ({} nodes each) to {}", data.len(), grid.n_nodes(), written.display());
    Ok(())
}

fn horizons(cfg: &RunConfig) -> Vec<f64> {
    let mut h = cfg.train.horizons.clone();
    if h.last() != Some(&cfg.time.t_final) {
        h.push(cfg.time.t_final);
    }
    h
}

pub fn train(cfg: &RunConfig, init: Option<&Path>, verbose: bool) -> Result<()> {
    let manifest = cfg.dataset_path();
    let data = io::read_dataset::<f64>(&manifest).with_context(|| format!("loading dataset {}", manifest.display()))?;
    let arch = cfg.architecture()?;
    let tc = cfg.train_config()?;
    let out = &cfg.io.out_dir;
    let stages = horizons(cfg);

    let mut w = match init {
        Some(p) => {
            let w: WeightStack<f64> = io::read_weights(p).with_context(|| format!("loading weights {}", p.display()))?;
            if w.arch() != &arch {
                return Err(Failure::schema(format!(
                    "initial weights have layer dims {:?}, config asks for {:?}",
                    w.arch().dims(),
                    arch.dims()
                ))
                .into());
            }
            w
        }
        None => init_weights(&arch, tc.seed, tc.init_scale),
    };
    let mut report: Option<TrainReport<f64>> = None;
    for (k, &h) in stages.iter().enumerate() {
        let problem = Problem::new(
            &data,
            cfg.ode_model()?,
            cfg.activation()?,
            cfg.objective()?,
            cfg.grid_for(h)?,
            cfg.newton()?,
        )?;
        let r = train_from(&problem, &w, &tc, |rec| {
            if verbose && rec.iter % 100 == 0 {
                eprintln!(
                    "T={h} iter {:>5}  J {:.6e}  |g| {:.3e}  step {:.2e}",
                    rec.iter, rec.objective, rec.grad_norm, rec.step
                );
            }
        })
        .with_context(|| format!("training on horizon T={h}"))?;
        let last = k + 1 == stages.len();
        let log = if last { out.join("train.csv") } else { out.join(format!("train_stage{}.csv", k + 1)) };
        io::write_train_csv(&log, &r)?;
        w = r.weights.clone();
        report = Some(r);
    }
    let r = report.expect("at least one stage");
    io::write_weights(&cfg.weights_path(), &r.weights)?;
    io::write_gradient(&out.join("gradient.txt"), &r.gradient)?;
    io::write_kkt(&out.join("kkt.toml"), &r.kkt)?;
    io::write_text(&out.join("config.toml"), &cfg.to_toml())?;
    println!(
        "termination: {}  iterations: {}  objective: {:.9e}  stationarity: {:.3e}  monotone: {}",
        r.termination.name(),
        r.iterations(),
        r.final_objective(),
        r.kkt.stationarity,
        r.is_monotone()
    );
    println!("weights: {}", cfg.weights_path().display());
    if r.termination == Termination::LineSearchFailed {
        return Err(Failure::new(
            EXIT_LINE_SEARCH,
            "line-search",
            format!("Armijo search failed after iteration {}", r.iterations()),
        )
        .into());
    }
    Ok(())
}

/// Network model trajectory from `z0`; in PDE mode, the spatial mean of a
/// run started from uniform fields.
fn simulate_network(
    cfg: &RunConfig,
    w: &WeightStack<f64>,
    z0: [f64; 2],
    mode: Mode,
    field_dir: Option<&Path>,
) -> Result<Trajectory<f64>> {
    let grid = cfg.time_grid()?;
    let act = cfg.activation()?;
    let newton = cfg.newton()?;
    match mode {
        Mode::Ode => {
            let mut d = NetworkDynamics::new(w, act, cfg.ode_model()?)?;
            Ok(simulate_cn(&mut d, z0, &grid, &newton)?.trajectory)
        }
        Mode::Pde => {
            let pde = cfg.pde_model()?;
            let n = pde.space.n_nodes();
            let field = simulate_pde(w, &act, &pde, &vec![z0[0]; n], &vec![z0[1]; n], &grid, &newton)?;
            if let Some(dir) = field_dir {
                io::write_field(dir, &field, cfg.io.snapshot_stride)?;
            }
            let space = field.space();
            let states = field
                .v_fields()
                .iter()
                .zip(field.w_fields())
                .map(|(v, w)| [space.mean(v), space.mean(w)])
                .collect();
            Ok(Trajectory::new(grid, states)?)
        }
    }
}

fn fh_reference(cfg: &RunConfig, z0: [f64; 2], grid: &TimeGrid<f64>) -> Result<Trajectory<f64>> {
    let mut fh = FitzHughNagumo {
        params: cfg.fh_params()?,
        forcing: cfg.fh_forcing(),
    };
    Ok(simulate_cn(&mut fh, z0, grid, &cfg.newton()?)?.trajectory)
}

fn comparison_csv(nn: &Trajectory<f64>, fh: &Trajectory<f64>, with_w: bool) -> String {
    let mut s = String::from(if with_w { "t,v_nn,v_fh,w_nn,w_fh\n" } else { "t,v_nn,v_fh\n" });
    for (k, (a, b)) in nn.states().iter().zip(fh.states()).enumerate() {
        let t = nn.grid().time(k);
        if with_w {
            let _ = writeln!(s, "{t:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", a[0], b[0], a[1], b[1]);
        } else {
            let _ = writeln!(s, "{t:.16e},{:.16e},{:.16e}", a[0], b[0]);
        }
    }
    s
}

pub struct SimulateArgs {
    pub weights: Option<PathBuf>,
    pub z0: [f64; 2],
    pub compare_fh: bool,
    pub out: Option<PathBuf>,
    pub mode: Mode,
}

pub fn simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<()> {
    let path = args.weights.clone().unwrap_or_else(|| cfg.weights_path());
    let w: WeightStack<f64> = io::read_weights(&path).with_context(|| format!("loading weights {}", path.display()))?;
    let out_dir = &cfg.io.out_dir;
    let field_dir = out_dir.join("fields");
    let traj = simulate_network(
        cfg,
        &w,
        args.z0,
        args.mode,
        (args.mode == Mode::Pde).then_some(field_dir.as_path()),
    )?;
    if args.compare_fh {
        let fh = fh_reference(cfg, args.z0, traj.grid())?;
        let out = args.out.clone().unwrap_or_else(|| out_dir.join("comparison.csv"));
        io::write_text(&out, &comparison_csv(&traj, &fh, false))?;
        let misfit = relative_l2_misfit(&traj, &fh, 0)?;
        println!("relative L2 misfit of v: {:.2}%", 100.0 * misfit);
        println!("wrote {}", out.display());
    } else {
        let out = args.out.clone().unwrap_or_else(|| out_dir.join("trajectory.csv"));
        io::write_trajectory_csv(&out, &traj)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

pub struct GradcheckArgs {
    pub horizon: f64,
    pub fd_step: f64,
    pub tolerance: Option<f64>,
}

pub fn gradcheck_cmd(cfg: &RunConfig, args: &GradcheckArgs) -> Result<()> {
    let act = cfg.activation()?;
    let tol = match args.tolerance {
        Some(t) => t,
        None => default_tolerance(&act)?,
    };
    let mode: AdjointMode = cfg.adjoint_mode()?;
    let grid = cfg.grid_for(args.horizon)?;
    let newton = cfg.newton()?;
    let data = generate_from(&cfg.fh_params()?, cfg.fh_forcing(), &cfg.fh.initial_conditions, &grid, &newton)?;
    let problem = Problem::new(&data, cfg.ode_model()?, act, cfg.objective()?, grid, newton)?;
    let arch = cfg.architecture()?;
    let w = init_weights(&arch, cfg.train.seed, cfg.network.init_scale);
    let report = gradcheck(&problem, &w, mode, args.fd_step, tol)?;
    for l in &report.layers {
        println!("layer {}: rel. error {:.3e} (|fd| {:.3e})", l.layer, l.rel_error, l.fd_norm);
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "worst {:.3e} total {:.3e} tolerance {:.1e} activation {} L={} seed {} adjoint {}: {verdict}",
        report.worst(),
        report.total_rel_error,
        tol,
        act.kind().name(),
        arch.depth(),
        cfg.train.seed,
        mode.name()
    );
    if !report.passed() {
        return Err(Failure::new(
            EXIT_BREACH,
            "gradcheck",
            format!("worst relative error {:.3e} exceeds {:.1e}", report.worst(), tol),
        )
        .into());
    }
    Ok(())
}

pub struct PlotArgs {
    pub weights: Option<PathBuf>,
    pub z0: [f64; 2],
    pub mode: Mode,
}

pub fn export_plot(cfg: &RunConfig, args: &PlotArgs) -> Result<()> {
    let path = args.weights.clone().unwrap_or_else(|| cfg.weights_path());
    let w: WeightStack<f64> = io::read_weights(&path).with_context(|| format!("loading weights {}", path.display()))?;
    let out = &cfg.io.out_dir;
    let nn = simulate_network(cfg, &w, args.z0, args.mode, None)?;
    let fh = fh_reference(cfg, args.z0, nn.grid())?;
    let misfit = relative_l2_misfit(&nn, &fh, 0)?;
    io::write_text(&out.join("comparison.csv"), &comparison_csv(&nn, &fh, true))?;

    let times: Vec<f64> = (0..nn.grid().n_nodes()).map(|k| nn.grid().time(k)).collect();
    let curve = |t: &Trajectory<f64>, c: usize| times.iter().zip(t.states()).map(|(&x, z)| (x, z[c])).collect();
    let title = format!(
        "v(t) from ({}, {}): relative L2 misfit {:.1}%",
        args.z0[0],
        args.z0[1],
        100.0 * misfit
    );
    let chart = Chart {
        title: &title,
        x_label: "t",
        y_label: "v",
        log_y: false,
        series: vec![
            Series {
                label: "FitzHugh-Nagumo",
                color: "#1f4e9c",
                dashed: false,
                points: curve(&fh, 0),
            },
            Series {
                label: "network model",
                color: "#c0392b",
                dashed: true,
                points: curve(&nn, 0),
            },
        ],
    };
    io::write_text(&out.join("comparison.svg"), &chart.render())?;

    let log = out.join("train.csv");
    if log.exists() {
        let obj = io::read_train_objectives(&log)?;
        let chart = Chart {
            title: "training objective",
            x_label: "iteration",
            y_label: "J",
            log_y: true,
            series: vec![Series {
                label: "J(W)",
                color: "black",
                dashed: false,
                points: obj.iter().enumerate().map(|(i, &j)| (i as f64, j)).collect(),
            }],
        };
        io::write_text(&out.join("objective.svg"), &chart.render())?;
    }
    println!("relative L2 misfit of v: {:.2}%", 100.0 * misfit);
    println!("wrote {}", out.join("comparison.svg").display());
    Ok(())
}

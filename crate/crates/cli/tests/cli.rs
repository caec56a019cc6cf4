use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use monoid_core::forward::{simulate_cn, Dataset, DatasetEntry, NetworkDynamics, NewtonConfig, OdeModelConfig, TimeGrid};
use monoid_core::io;
use monoid_core::nn::{NetworkArchitecture, WeightStack};
use monoid_core::ActivationSpec64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn monoid(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_monoid"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stdout: {}\nstderr: {}", stdout(o), stderr(o));
}

fn assert_single_line_error(o: &Output, code: i32) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
    let err = stderr(o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error["), "{err}");
}

#[test]
fn generate_writes_seven_trajectories_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&monoid(dir.path(), &["generate"]));
    let data_dir = dir.path().join("out/data");
    let data: Dataset<f64> = io::read_dataset(&data_dir.join("manifest.toml")).unwrap();
    assert_eq!(data.len(), 7);
    let ics = [[0.0, 0.0], [1.0, 1.0], [-1.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 1.0], [1.0, -1.0]];
    for (e, z0) in data.entries().iter().zip(ics) {
        assert_eq!(e.trajectory.initial(), z0);
        assert_eq!(e.trajectory.grid().n_nodes(), 801);
    }
    let first = fs::read(data_dir.join("traj_3.csv")).unwrap();
    assert_ok(&monoid(dir.path(), &["generate"]));
    assert_eq!(fs::read(data_dir.join("traj_3.csv")).unwrap(), first);
}

#[test]
fn zeroed_polynomial_gives_linear_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let o = monoid(dir.path(), &["generate", "--params", "a=0,b=0,c=0,d=0", "--params", "time.t_final=4"]);
    assert_ok(&o);
    let data: Dataset<f64> = io::read_dataset(&dir.path().join("out/data/manifest.toml")).unwrap();
    for e in data.entries() {
        // v' = f_v exactly, which Crank-Nicolson integrates without error.
        let v_end = e.trajectory.terminal()[0];
        assert!((v_end - (e.z0[0] + 0.5 * 4.0)).abs() < 1e-12);
    }
}

#[test]
fn paper_config_train_is_monotone_and_plot_exports() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&monoid(dir.path(), &["generate"]));
    let o = monoid(dir.path(), &["train", "--params", "train.max_iters=8"]);
    assert_ok(&o);
    assert!(stdout(&o).contains("termination: max-iters"));
    let out = dir.path().join("out");
    let obj = io::read_train_objectives(&out.join("train.csv")).unwrap();
    assert_eq!(obj.len(), 9);
    assert!(obj.windows(2).all(|p| p[1] <= p[0]));
    for f in ["weights.txt", "gradient.txt", "kkt.toml", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let first = fs::read(out.join("weights.txt")).unwrap();

    let o = monoid(dir.path(), &["simulate", "--compare-fh", "--z0", "2,0"]);
    assert_ok(&o);
    assert!(stdout(&o).contains("relative L2 misfit of v:"));
    assert!(stdout(&o).contains('%'));
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,v_nn,v_fh"));
    assert_eq!(csv.lines().count(), 802);

    assert_ok(&monoid(dir.path(), &["export-plot"]));
    let svg = fs::read_to_string(out.join("comparison.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    assert!(out.join("objective.svg").exists());

    // Same config, same bytes.
    assert_ok(&monoid(dir.path(), &["train", "--params", "train.max_iters=8"]));
    assert_eq!(fs::read(out.join("weights.txt")).unwrap(), first);
}

#[test]
fn planted_network_converges_immediately() {
    let dir = tempfile::tempdir().unwrap();
    let arch = NetworkArchitecture::uniform(2, 2).unwrap();
    let w = WeightStack::<f64>::random(&arch, 0.5, &mut ChaCha8Rng::seed_from_u64(11));
    let act = ActivationSpec64::smoothed_relu(2.0).unwrap();
    let grid = TimeGrid::new(5.0, 100).unwrap();
    let entries = [[0.0, 0.0], [1.0, -1.0]]
        .iter()
        .map(|&z0| {
            let mut d = NetworkDynamics::new(&w, act, OdeModelConfig::paper()).unwrap();
            DatasetEntry {
                z0,
                trajectory: simulate_cn(&mut d, z0, &grid, &NewtonConfig::default()).unwrap().trajectory,
            }
        })
        .collect();
    let manifest = io::write_dataset(&dir.path().join("planted"), &Dataset::new(entries).unwrap()).unwrap();
    io::write_weights(&dir.path().join("w.txt"), &w).unwrap();
    let o = monoid(
        dir.path(),
        &[
            "train",
            "--dataset",
            manifest.to_str().unwrap(),
            "--init",
            "w.txt",
            "--params",
            "network.depth=2,time.t_final=5,train.alpha=0",
        ],
    );
    assert_ok(&o);
    assert!(stdout(&o).contains("termination: converged  iterations: 0"), "{}", stdout(&o));
}

#[test]
fn corrupt_or_missing_inputs_exit_with_codes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "format = \"monoid-dataset v1\"\nentries = 3\n").unwrap();
    assert_single_line_error(&monoid(dir.path(), &["train", "--dataset", "bad.toml"]), 2);
    assert_single_line_error(&monoid(dir.path(), &["train", "--dataset", "missing.toml"]), 5);
    assert_single_line_error(&monoid(dir.path(), &["simulate", "--weights", "missing.txt"]), 5);
    fs::write(dir.path().join("cfg.toml"), "[train]\nalhpa = 0.1\n").unwrap();
    assert_single_line_error(&monoid(dir.path(), &["generate", "--config", "cfg.toml"]), 2);
    assert_single_line_error(&monoid(dir.path(), &["generate", "--params", "time.dt=-1"]), 2);
    assert_single_line_error(&monoid(dir.path(), &["launch"]), 2);
    assert_single_line_error(&monoid(dir.path(), &["simulate", "--z0", "1"]), 2);
    fs::write(dir.path().join("w.txt"), "monoid-weights v1\nlayer_dims 2 2\nA1 1 2\n").unwrap();
    assert_single_line_error(&monoid(dir.path(), &["simulate", "--weights", "w.txt"]), 2);
}

#[test]
fn zero_network_without_forcing_stays_at_rest() {
    let dir = tempfile::tempdir().unwrap();
    let arch = NetworkArchitecture::uniform(7, 2).unwrap();
    io::write_weights(&dir.path().join("zero.txt"), &WeightStack::<f64>::zeros(&arch)).unwrap();
    let o = monoid(
        dir.path(),
        &["simulate", "--weights", "zero.txt", "--z0", "0,0", "--params", "model.f_v=0,model.f_w=0"],
    );
    assert_ok(&o);
    let t: monoid_core::Trajectory64 = io::read_trajectory_csv(&dir.path().join("out/trajectory.csv")).unwrap();
    assert!(t.states().iter().all(|z| *z == [0.0, 0.0]));
}

#[test]
fn uniform_pde_matches_ode() {
    let dir = tempfile::tempdir().unwrap();
    let arch = NetworkArchitecture::uniform(3, 2).unwrap();
    let w = WeightStack::<f64>::random(&arch, 0.8, &mut ChaCha8Rng::seed_from_u64(4));
    io::write_weights(&dir.path().join("w.txt"), &w).unwrap();
    let common = ["--weights", "w.txt", "--z0", "-1.5,0.25", "--params", "network.depth=3,time.t_final=10"];
    let mut ode = vec!["simulate", "--out", "ode.csv"];
    ode.extend(common);
    let mut pde = vec!["simulate", "--mode", "pde", "--out", "pde.csv", "--params", "model.nx=9,model.h=0.125"];
    pde.extend(common);
    assert_ok(&monoid(dir.path(), &ode));
    assert_ok(&monoid(dir.path(), &pde));
    assert!(dir.path().join("out/fields/grid.toml").exists());
    let a: monoid_core::Trajectory64 = io::read_trajectory_csv(&dir.path().join("ode.csv")).unwrap();
    let b: monoid_core::Trajectory64 = io::read_trajectory_csv(&dir.path().join("pde.csv")).unwrap();
    for (x, y) in a.states().iter().zip(b.states()) {
        assert!((x[0] - y[0]).abs() <= 1e-9 && (x[1] - y[1]).abs() <= 1e-9);
    }
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = monoid(dir.path(), &["gradcheck", "--params", "activation.kind=\"tanh\""]);
    assert_ok(&o);
    assert!(stdout(&o).contains("layer 7:"));
    assert!(stdout(&o).contains("PASS"));
    assert_ok(&monoid(dir.path(), &["gradcheck"]));
    assert_single_line_error(&monoid(dir.path(), &["gradcheck", "--params", "activation.kind=\"relu\""]), 2);
    let o = monoid(dir.path(), &["gradcheck", "--adjoint", "paper"]);
    assert_single_line_error(&o, 1);
    assert!(stderr(&o).starts_with("error[gradcheck]"));
}

//! Text formats for weights, gradients, trajectories, datasets, PDE fields
//! and training logs.
//!
//! Floating-point numbers are written with 17 significant digits, so `f64`
//! values round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adjoint::KktReport;
use crate::forward::{Dataset, DatasetEntry, FieldTrajectory, SpaceGrid, TimeGrid, Trajectory};
use crate::linalg::Matrix;
use crate::nn::{Layer, NetworkArchitecture, WeightGradient, WeightStack};
use crate::optimize::TrainReport;
use crate::{Error, Result, Scalar};

pub const WEIGHTS_HEADER: &str = "monoid-weights v1";
pub const GRADIENT_HEADER: &str = "monoid-grad v1";
pub const DATASET_FORMAT: &str = "monoid-dataset v1";
pub const FIELD_FORMAT: &str = "monoid-field v1";

/// Relative tolerance on the spacing of time columns read from CSV.
const GRID_TOL: f64 = 1e-9;

fn num<T: Scalar>(x: T) -> String {
    format!("{:.16e}", x)
}

fn parse_num<T: Scalar>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse::<T>()
        .map_err(|_| Error::Format(format!("{what}: cannot parse '{}' as a number", s.trim())))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- weights

fn format_stack<T: Scalar>(w: &WeightStack<T>, header: &str) -> String {
    let mut s = String::new();
    let dims: Vec<String> = w.arch().dims().iter().map(|d| d.to_string()).collect();
    let _ = writeln!(s, "{header}");
    let _ = writeln!(s, "layer_dims {}", dims.join(" "));
    for (l, layer) in w.layers().iter().enumerate() {
        let a: Vec<String> = layer.a.as_slice().iter().map(|&x| num(x)).collect();
        let b: Vec<String> = layer.b.iter().map(|&x| num(x)).collect();
        let _ = writeln!(s, "A{} {}", l + 1, a.join(" "));
        let _ = writeln!(s, "b{} {}", l + 1, b.join(" "));
    }
    s
}

fn parse_stack<T: Scalar>(text: &str, header: &str) -> Result<WeightStack<T>> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some(h) if h == header => {}
        Some(h) => return Err(Error::Format(format!("expected header '{header}', found '{h}'"))),
        None => return Err(Error::Format("empty weights file".into())),
    }
    let dims_line = lines
        .next()
        .ok_or_else(|| Error::Format("missing layer_dims line".into()))?;
    let dims = dims_line
        .strip_prefix("layer_dims")
        .ok_or_else(|| Error::Format(format!("expected layer_dims, found '{dims_line}'")))?
        .split_whitespace()
        .map(|d| {
            d.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad layer dimension '{d}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let arch = NetworkArchitecture::new(dims).map_err(|e| Error::Format(e.to_string()))?;

    let mut values = |tag: String, len: usize| -> Result<Vec<T>> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("missing line {tag}")))?;
        let mut it = line.split_whitespace();
        if it.next() != Some(tag.as_str()) {
            return Err(Error::Format(format!("expected line {tag}, found '{line}'")));
        }
        let v = it.map(|x| parse_num(x, &tag)).collect::<Result<Vec<T>>>()?;
        if v.len() != len {
            return Err(Error::Format(format!("{tag}: expected {len} values, found {}", v.len())));
        }
        Ok(v)
    };
    let mut layers = Vec::with_capacity(arch.depth());
    for (l, d) in arch.dims().windows(2).enumerate() {
        let a = values(format!("A{}", l + 1), d[0] * d[1])?;
        let b = values(format!("b{}", l + 1), d[1])?;
        layers.push(Layer {
            a: Matrix::from_row_major(d[1], d[0], a)?,
            b,
        });
    }
    if let Some(extra) = lines.next() {
        return Err(Error::Format(format!("unexpected trailing line '{extra}'")));
    }
    WeightStack::from_layers(&arch, layers).map_err(|e| Error::Format(e.to_string()))
}

pub fn format_weights<T: Scalar>(w: &WeightStack<T>) -> String {
    format_stack(w, WEIGHTS_HEADER)
}

pub fn parse_weights<T: Scalar>(text: &str) -> Result<WeightStack<T>> {
    parse_stack(text, WEIGHTS_HEADER)
}

pub fn write_weights<T: Scalar>(path: &Path, w: &WeightStack<T>) -> Result<()> {
    write_text(path, &format_weights(w))
}

pub fn read_weights<T: Scalar>(path: &Path) -> Result<WeightStack<T>> {
    parse_weights(&read_text(path)?)
}

pub fn format_gradient<T: Scalar>(g: &WeightGradient<T>) -> String {
    format_stack(g.as_stack(), GRADIENT_HEADER)
}

pub fn parse_gradient<T: Scalar>(text: &str) -> Result<WeightGradient<T>> {
    parse_stack(text, GRADIENT_HEADER).map(WeightGradient::from_stack)
}

pub fn write_gradient<T: Scalar>(path: &Path, g: &WeightGradient<T>) -> Result<()> {
    write_text(path, &format_gradient(g))
}

pub fn read_gradient<T: Scalar>(path: &Path) -> Result<WeightGradient<T>> {
    parse_gradient(&read_text(path)?)
}

// ----------------------------------------------------------- trajectories

pub fn format_trajectory_csv<T: Scalar>(traj: &Trajectory<T>) -> String {
    let mut s = String::from("t,v,w\n");
    for (k, z) in traj.states().iter().enumerate() {
        let _ = writeln!(s, "{},{},{}", num(traj.grid().time(k)), num(z[0]), num(z[1]));
    }
    s
}

/// Rebuilds the uniform time grid from a `t` column starting at 0.
fn grid_from_times<T: Scalar>(times: &[T], what: &str) -> Result<TimeGrid<T>> {
    if times.len() < 2 {
        return Err(Error::Format(format!("{what}: need at least two time rows")));
    }
    if times[0] != T::zero() {
        return Err(Error::Format(format!("{what}: first time must be 0, found {}", times[0])));
    }
    let n = times.len() - 1;
    let grid = TimeGrid::new(times[n], n).map_err(|e| Error::Format(format!("{what}: {e}")))?;
    let tol = T::lit(GRID_TOL) * grid.t_final();
    for (k, &t) in times.iter().enumerate() {
        if (t - grid.time(k)).abs() > tol {
            return Err(Error::Format(format!("{what}: time column is not uniformly spaced at row {}", k + 1)));
        }
    }
    Ok(grid)
}

pub fn parse_trajectory_csv<T: Scalar>(text: &str, what: &str) -> Result<Trajectory<T>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next().map(str::trim) {
        Some("t,v,w") => {}
        other => {
            return Err(Error::Format(format!(
                "{what}: expected header 't,v,w', found '{}'",
                other.unwrap_or("")
            )))
        }
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (row, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Format(format!("{what}: row {} has {} columns", row + 1, cols.len())));
        }
        times.push(parse_num(cols[0], what)?);
        states.push([parse_num(cols[1], what)?, parse_num(cols[2], what)?]);
    }
    let grid = grid_from_times(&times, what)?;
    Trajectory::new(grid, states).map_err(|e| Error::Format(format!("{what}: {e}")))
}

pub fn write_trajectory_csv<T: Scalar>(path: &Path, traj: &Trajectory<T>) -> Result<()> {
    write_text(path, &format_trajectory_csv(traj))
}

pub fn read_trajectory_csv<T: Scalar>(path: &Path) -> Result<Trajectory<T>> {
    parse_trajectory_csv(&read_text(path)?, &path.display().to_string())
}

// ---------------------------------------------------------------- dataset

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    z0: [f64; 2],
    path: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    entries: Vec<ManifestEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.toml";

/// Writes `manifest.toml` plus `traj_<k>.csv` per entry into `dir`; returns
/// the manifest path.
pub fn write_dataset<T: Scalar>(dir: &Path, dataset: &Dataset<T>) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.len());
    for (k, e) in dataset.entries().iter().enumerate() {
        let name = format!("traj_{k}.csv");
        write_trajectory_csv(&dir.join(&name), &e.trajectory)?;
        entries.push(ManifestEntry {
            z0: [e.z0[0].to_f64_lossy(), e.z0[1].to_f64_lossy()],
            path: name,
        });
    }
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join(MANIFEST_NAME);
    write_text(&path, &text)?;
    Ok(path)
}

/// Reads a manifest; entry paths are relative to the manifest's directory.
/// Each entry's first row must equal its declared `z0`.
pub fn read_dataset<T: Scalar>(manifest: &Path) -> Result<Dataset<T>> {
    let text = read_text(manifest)?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", manifest.display())))?;
    if m.format != DATASET_FORMAT {
        return Err(Error::Format(format!(
            "{}: expected format '{DATASET_FORMAT}', found '{}'",
            manifest.display(),
            m.format
        )));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::with_capacity(m.entries.len());
    for e in &m.entries {
        let trajectory: Trajectory<T> = read_trajectory_csv(&base.join(&e.path))?;
        let z0 = [T::lit(e.z0[0]), T::lit(e.z0[1])];
        if trajectory.initial() != z0 {
            return Err(Error::Format(format!(
                "{}: first row does not match z0 = ({}, {})",
                e.path, e.z0[0], e.z0[1]
            )));
        }
        entries.push(DatasetEntry { z0, trajectory });
    }
    Dataset::new(entries).map_err(|e| Error::Format(format!("{}: {e}", manifest.display())))
}

// ------------------------------------------------------------- PDE fields

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldDescriptor {
    format: String,
    dim: usize,
    nx: usize,
    ny: usize,
    h: f64,
    t_final: f64,
    n_steps: usize,
    /// Time indices that have a snapshot file, in order.
    snapshots: Vec<usize>,
}

pub const FIELD_DESCRIPTOR_NAME: &str = "grid.toml";

fn snapshot_name(k: usize) -> String {
    format!("snap_{k:06}.csv")
}

/// Writes every `stride`-th time level (and the last) as `x,y,v,w` CSV plus a
/// `grid.toml` descriptor.
pub fn write_field<T: Scalar>(dir: &Path, field: &FieldTrajectory<T>, stride: usize) -> Result<PathBuf> {
    if stride == 0 {
        return Err(Error::Domain("snapshot stride must be >= 1".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let space = field.space();
    let n = field.time_grid().n_steps();
    let mut snapshots: Vec<usize> = (0..=n).step_by(stride).collect();
    if snapshots.last() != Some(&n) {
        snapshots.push(n);
    }
    for &k in &snapshots {
        let mut s = String::from("x,y,v,w\n");
        for i in 0..space.n_nodes() {
            let (x, y) = space.coords(i);
            let _ = writeln!(
                s,
                "{},{},{},{}",
                num(x),
                num(y),
                num(field.v_fields()[k][i]),
                num(field.w_fields()[k][i])
            );
        }
        write_text(&dir.join(snapshot_name(k)), &s)?;
    }
    let desc = FieldDescriptor {
        format: FIELD_FORMAT.into(),
        dim: space.dim(),
        nx: space.nx(),
        ny: space.ny(),
        h: space.h().to_f64_lossy(),
        t_final: field.time_grid().t_final().to_f64_lossy(),
        n_steps: n,
        snapshots,
    };
    let path = dir.join(FIELD_DESCRIPTOR_NAME);
    write_text(&path, &toml::to_string(&desc).map_err(|e| Error::Format(e.to_string()))?)?;
    Ok(path)
}

/// Snapshots read back from [`write_field`] output.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSnapshots<T> {
    pub time: TimeGrid<T>,
    pub space: SpaceGrid<T>,
    pub indices: Vec<usize>,
    pub v: Vec<Vec<T>>,
    pub w: Vec<Vec<T>>,
}

pub fn read_field<T: Scalar>(descriptor: &Path) -> Result<FieldSnapshots<T>> {
    let d: FieldDescriptor =
        toml::from_str(&read_text(descriptor)?).map_err(|e| Error::Format(format!("{}: {e}", descriptor.display())))?;
    if d.format != FIELD_FORMAT {
        return Err(Error::Format(format!("expected format '{FIELD_FORMAT}', found '{}'", d.format)));
    }
    let space = SpaceGrid::new(d.dim, d.nx, d.ny, T::lit(d.h)).map_err(|e| Error::Format(e.to_string()))?;
    let time = TimeGrid::new(T::lit(d.t_final), d.n_steps).map_err(|e| Error::Format(e.to_string()))?;
    let base = descriptor.parent().unwrap_or(Path::new("."));
    let (mut v, mut w) = (Vec::new(), Vec::new());
    for &k in &d.snapshots {
        if k > d.n_steps {
            return Err(Error::Format(format!("snapshot index {k} beyond n_steps {}", d.n_steps)));
        }
        let name = snapshot_name(k);
        let text = read_text(&base.join(&name))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("x,y,v,w") {
            return Err(Error::Format(format!("{name}: expected header 'x,y,v,w'")));
        }
        let (mut vk, mut wk) = (Vec::new(), Vec::new());
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(Error::Format(format!("{name}: expected 4 columns")));
            }
            vk.push(parse_num(cols[2], &name)?);
            wk.push(parse_num(cols[3], &name)?);
        }
        if vk.len() != space.n_nodes() {
            return Err(Error::Format(format!(
                "{name}: {} rows for {} grid nodes",
                vk.len(),
                space.n_nodes()
            )));
        }
        v.push(vk);
        w.push(wk);
    }
    Ok(FieldSnapshots {
        time,
        space,
        indices: d.snapshots,
        v,
        w,
    })
}

// ------------------------------------------------------- reports and logs

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KktRecord {
    stationarity: f64,
    complementarity: f64,
    feasibility: f64,
    lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ball_c: Option<f64>,
}

pub fn format_kkt<T: Scalar>(r: &KktReport<T>) -> String {
    let rec = KktRecord {
        stationarity: r.stationarity.to_f64_lossy(),
        complementarity: r.complementarity.to_f64_lossy(),
        feasibility: r.feasibility.to_f64_lossy(),
        lambda: r.lambda.to_f64_lossy(),
        ball_c: r.ball_c.map(|c| c.to_f64_lossy()),
    };
    toml::to_string(&rec).expect("plain record serializes")
}

pub fn parse_kkt<T: Scalar>(text: &str) -> Result<KktReport<T>> {
    let r: KktRecord = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    Ok(KktReport {
        stationarity: T::lit(r.stationarity),
        complementarity: T::lit(r.complementarity),
        feasibility: T::lit(r.feasibility),
        lambda: T::lit(r.lambda),
        ball_c: r.ball_c.map(T::lit),
    })
}

pub fn write_kkt<T: Scalar>(path: &Path, r: &KktReport<T>) -> Result<()> {
    write_text(path, &format_kkt(r))
}

/// `iter,objective,grad_norm,step,backtracks`, one row per logged iterate.
pub fn format_train_csv<T: Scalar>(report: &TrainReport<T>) -> String {
    let mut s = String::from("iter,objective,grad_norm,step,backtracks\n");
    for r in &report.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.iter,
            num(r.objective),
            num(r.grad_norm),
            num(r.step),
            r.backtracks
        );
    }
    s
}

pub fn write_train_csv<T: Scalar>(path: &Path, report: &TrainReport<T>) -> Result<()> {
    write_text(path, &format_train_csv(report))
}

/// Objective column of a training log.
pub fn read_train_objectives(path: &Path) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("iter,objective,grad_norm,step,backtracks") {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let col = l
                .split(',')
                .nth(1)
                .ok_or_else(|| Error::Format(format!("{}: short row", path.display())))?;
            parse_num(col, "objective")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationSpec;
    use crate::nn::nn_forward;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_round_trip_bit_exact() {
        let arch = NetworkArchitecture::new(vec![2, 3, 4, 2]).unwrap();
        let w = WeightStack::<f64>::random(&arch, 1.3, &mut ChaCha8Rng::seed_from_u64(9));
        let text = format_weights(&w);
        assert!(text.starts_with("monoid-weights v1\nlayer_dims 2 3 4 2\n"));
        let back: WeightStack<f64> = parse_weights(&text).unwrap();
        assert_eq!(back, w);
        let act = ActivationSpec::tanh();
        let z = [0.3, -0.7];
        assert_eq!(nn_forward(z, &back, &act).unwrap(), nn_forward(z, &w, &act).unwrap());
    }

    #[test]
    fn f32_weights_round_trip() {
        let arch = NetworkArchitecture::uniform(2, 2).unwrap();
        let w = WeightStack::<f32>::random(&arch, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(parse_weights::<f32>(&format_weights(&w)).unwrap(), w);
    }

    #[test]
    fn gradient_header_is_distinct() {
        let arch = NetworkArchitecture::uniform(2, 2).unwrap();
        let g = WeightGradient::<f64>::zeros(&arch);
        let text = format_gradient(&g);
        assert!(text.starts_with("monoid-grad v1\n"));
        assert!(parse_weights::<f64>(&text).is_err());
        assert_eq!(parse_gradient::<f64>(&text).unwrap(), g);
    }

    #[test]
    fn malformed_weights_are_format_errors() {
        for bad in [
            "",
            "monoid-weights v2\n",
            "monoid-weights v1\nlayer_dims 2 2\nA1 1 2 3\nb1 0 0\n",
            "monoid-weights v1\nlayer_dims 2 2\nA1 1 2 3 x\nb1 0 0\n",
            "monoid-weights v1\nlayer_dims 2 2\nA1 1 2 3 4\nb1 0 0\nA2 1\n",
            "monoid-weights v1\nlayer_dims 2 3\n",
        ] {
            assert!(matches!(parse_weights::<f64>(bad), Err(Error::Format(_))), "{bad:?}");
        }
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let t = Trajectory::new(grid, vec![[0.1, 0.2], [1.0 / 3.0, -2.0], [1e-300, 5.0], [7.0, 8.0]]).unwrap();
        let text = format_trajectory_csv(&t);
        assert!(text.starts_with("t,v,w\n0.0000000000000000e0,"));
        assert_eq!(parse_trajectory_csv::<f64>(&text, "x").unwrap(), t);
    }

    #[test]
    fn nonuniform_times_are_rejected() {
        let text = "t,v,w\n0,0,0\n0.5,0,0\n2,0,0\n";
        assert!(matches!(parse_trajectory_csv::<f64>(text, "x"), Err(Error::Format(_))));
        let text = "t,v,w\n1,0,0\n2,0,0\n";
        assert!(parse_trajectory_csv::<f64>(text, "x").is_err());
    }

    #[test]
    fn kkt_round_trip() {
        let r = KktReport {
            stationarity: 1e-9,
            complementarity: 0.0,
            feasibility: 0.0,
            lambda: 0.25,
            ball_c: Some(2.0),
        };
        assert_eq!(parse_kkt::<f64>(&format_kkt(&r)).unwrap(), r);
        let r = KktReport { ball_c: None, ..r };
        assert_eq!(parse_kkt::<f64>(&format_kkt(&r)).unwrap(), r);
    }
}

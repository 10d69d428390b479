//! File writers: snapshot CSVs, PGM heatmaps, dispersion reports and manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use phtaxis_core::model::{Grid1D, State};
use phtaxis_core::solver::{Event, Trajectory};
use phtaxis_core::stability::{DispersionPoint, InstabilityReport};

use crate::error::{CliError, CliResult};

/// Largest gray level of the heatmaps.
pub const PGM_MAXVAL: u16 = 65535;

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// `x,u,h` with one row per node.
pub fn snapshot_csv(state: &State, grid: &Grid1D) -> String {
    let mut s = String::with_capacity(64 * (state.len() + 1));
    s.push_str("x,u,h\n");
    for ((x, u), h) in grid.nodes().iter().zip(&state.u).zip(&state.h) {
        let _ = writeln!(s, "{},{},{}", num(*x), num(*u), num(*h));
    }
    s
}

pub fn write_snapshot(state: &State, grid: &Grid1D, path: &Path) -> CliResult<()> {
    write_file(path, snapshot_csv(state, grid).as_bytes())
}

/// Columns `(x, u, h)` of a snapshot file.
pub fn read_snapshot(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("x,u,h") {
        return Err(CliError::Config(format!("{}: missing x,u,h header", path.display())));
    }
    let (mut xs, mut us, mut hs) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == 3 => {
                xs.push(v[0]);
                us.push(v[1]);
                hs.push(v[2]);
            }
            _ => {
                return Err(CliError::Config(format!(
                    "{}: malformed row {}",
                    path.display(),
                    i + 2
                )))
            }
        }
    }
    Ok((xs, us, hs))
}

/// Gray levels of the space-time heatmap, row-major, first snapshot on top,
/// and the u value mapped to white.
pub fn heatmap_pixels(traj: &Trajectory) -> (Vec<u16>, f64) {
    let u_max = traj
        .snapshots
        .iter()
        .flat_map(|s| s.u.iter())
        .fold(0.0f64, |m, &v| if v.is_finite() { m.max(v) } else { m });
    let scale = if u_max > 0.0 { f64::from(PGM_MAXVAL) / u_max } else { 0.0 };
    let pixels = traj
        .snapshots
        .iter()
        .flat_map(|s| s.u.iter())
        .map(|&v| {
            let g = if v.is_finite() { (v.max(0.0) * scale).round() } else { f64::from(PGM_MAXVAL) };
            g.min(f64::from(PGM_MAXVAL)) as u16
        })
        .collect();
    (pixels, u_max)
}

/// Binary 16-bit PGM plus a sidecar CSV with the gray scale.
pub fn write_heatmap(traj: &Trajectory, path: &Path, scale_path: &Path) -> CliResult<()> {
    if traj.snapshots.len() < 2 {
        return Err(CliError::Config("a heatmap needs at least two snapshots".into()));
    }
    let cols = traj.snapshots[0].len();
    let rows = traj.snapshots.len();
    let (pixels, u_max) = heatmap_pixels(traj);
    let mut bytes = format!("P5 {cols} {rows} {PGM_MAXVAL}\n").into_bytes();
    bytes.reserve(2 * pixels.len());
    for p in pixels {
        bytes.extend_from_slice(&p.to_be_bytes());
    }
    write_file(path, &bytes)?;

    let mut scale = String::from("u_black,u_white,maxval,rows,cols,t_first,t_last\n");
    let _ = writeln!(
        scale,
        "{},{},{PGM_MAXVAL},{rows},{cols},{},{}",
        num(0.0),
        num(u_max),
        num(traj.snapshots[0].t),
        num(traj.snapshots[rows - 1].t)
    );
    write_file(scale_path, scale.as_bytes())
}

/// Reads back a binary PGM written by [`write_heatmap`]: `(cols, rows, pixels)`.
pub fn read_heatmap(path: &Path) -> CliResult<(usize, usize, Vec<u16>)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CliError::Config(format!("{}: no PGM header", path.display())))?;
    let header = String::from_utf8_lossy(&bytes[..end]).to_string();
    let parts: Vec<&str> = header.split_whitespace().collect();
    let bad = || CliError::Config(format!("{}: bad PGM header {header:?}", path.display()));
    if parts.len() != 4 || parts[0] != "P5" || parts[3] != PGM_MAXVAL.to_string() {
        return Err(bad());
    }
    let cols: usize = parts[1].parse().map_err(|_| bad())?;
    let rows: usize = parts[2].parse().map_err(|_| bad())?;
    let body = &bytes[end + 1..];
    if body.len() != 2 * cols * rows {
        return Err(bad());
    }
    let pixels = body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((cols, rows, pixels))
}

/// Variance across columns of the time-averaged gray level, scaled to `[0, 1]`.
/// Stationary spatial bands ("columnar streaks") make it large.
pub fn column_variance(cols: usize, rows: usize, pixels: &[u16]) -> f64 {
    let norm = f64::from(PGM_MAXVAL);
    let means: Vec<f64> = (0..cols)
        .map(|c| (0..rows).map(|r| f64::from(pixels[r * cols + c]) / norm).sum::<f64>() / rows as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / cols as f64;
    means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / cols as f64
}

/// Score above which a heatmap counts as showing stationary bands.
pub const STREAK_THRESHOLD: f64 = 1e-3;

/// [`column_variance`] over the later half of the rows, so that a front
/// still sweeping through early on does not register as a band.
pub fn streak_score(cols: usize, rows: usize, pixels: &[u16]) -> f64 {
    let start = rows / 2;
    column_variance(cols, rows - start, &pixels[start * cols..])
}

fn point_row(p: &DispersionPoint) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        num(p.k),
        num(p.trace),
        num(p.determinant),
        num(p.lambda1.re),
        num(p.lambda1.im),
        num(p.lambda2.re),
        num(p.lambda2.im),
        p.class
    )
}

/// Mode table followed by a `#`-prefixed summary block.
pub fn dispersion_report(report: &InstabilityReport, kernel: &str) -> String {
    let mut s = String::from("k,trace,det,re_lambda1,im_lambda1,re_lambda2,im_lambda2,class\n");
    for p in &report.modes {
        s.push_str(&point_row(p));
        s.push('\n');
    }
    let eq = &report.equilibrium;
    let join = |v: Vec<String>| v.join(";");
    let _ = writeln!(s, "# kernel={kernel}");
    let _ = writeln!(s, "# equilibrium u*={} h*={}", num(eq.u_star), num(eq.h_star));
    let _ = writeln!(s, "# verdict={}", report.verdict());
    let _ = writeln!(
        s,
        "# unstable_k={}",
        join(report.unstable_modes().map(|(_, p)| num(p.k)).collect())
    );
    let _ = writeln!(
        s,
        "# critical_k={}",
        join(
            report
                .critical
                .iter()
                .map(|c| format!("{}:{}", num(c.k), match c.kind {
                    phtaxis_core::stability::CrossingKind::Trace => "trace",
                    phtaxis_core::stability::CrossingKind::Determinant => "det",
                }))
                .collect()
        )
    );
    for note in &report.notes {
        let _ = writeln!(s, "# note={note}");
    }
    s
}

pub fn write_dispersion_report(report: &InstabilityReport, kernel: &str, path: &Path) -> CliResult<()> {
    write_file(path, dispersion_report(report, kernel).as_bytes())
}

/// Plain-text run record: config echo, events and invariant checks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub name: String,
    pub mode: String,
    pub config_echo: String,
    pub flags: Vec<String>,
    pub warnings: Vec<String>,
    pub events: Vec<String>,
    pub summary: Vec<(String, String)>,
    pub files: Vec<String>,
    pub wall_clock_seconds: Option<f64>,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "phtaxis {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "run: {}", self.name);
        let _ = writeln!(s, "mode: {}", self.mode);
        if let Some(w) = self.wall_clock_seconds {
            let _ = writeln!(s, "wall_clock_seconds: {w:.3}");
        }
        let list = |v: &[String]| if v.is_empty() { "none".to_string() } else { v.join(", ") };
        let _ = writeln!(s, "flags: {}", list(&self.flags));
        s.push_str("\n[warnings]\n");
        for w in &self.warnings {
            let _ = writeln!(s, "{w}");
        }
        s.push_str("\n[summary]\n");
        for (k, v) in &self.summary {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("\n[events]\n");
        for e in &self.events {
            let _ = writeln!(s, "{e}");
        }
        s.push_str("\n[files]\n");
        for f in &self.files {
            let _ = writeln!(s, "{f}");
        }
        s.push_str("\n[config]\n");
        s.push_str(&self.config_echo);
        s
    }
}

pub fn describe_event(e: &Event) -> String {
    match e {
        Event::BlowUp { t, max_u, reason } => format!("blow-up t={} max_u={} ({reason})", num(*t), num(*max_u)),
        Event::DtRejected { t, dt } => format!("dt-rejected t={} dt={}", num(*t), num(*dt)),
        Event::SteadyState { t } => format!("steady-state t={}", num(*t)),
        Event::StepLimit { t, dt } => format!("step-limit t={} dt={}", num(*t), num(*dt)),
    }
}

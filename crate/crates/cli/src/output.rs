//! Trajectory CSV, long-format plot data and the run manifest.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use dssosm_core::simulator::Trajectory;
use serde::Serialize;

type Series = fn(&Trajectory, usize) -> &nalgebra::DVector<f64>;

const COLUMN_GROUPS: [&str; 8] = ["f", "V", "Pt", "Pg", "theta", "u", "w", "sigma"];

pub fn trajectory_header(n: usize) -> String {
    let mut cols = vec!["t".to_string()];
    for g in COLUMN_GROUPS {
        cols.extend((1..=n).map(|i| format!("{g}_{i}")));
    }
    cols.join(",")
}

fn push(line: &mut String, x: f64) {
    use std::fmt::Write as _;
    // 17 significant digits round-trip every f64
    write!(line, ",{x:.16e}").expect("writing to a String");
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: &mut W) -> io::Result<()> {
    let n = traj.n();
    writeln!(out, "{}", trajectory_header(n))?;
    let mut line = String::new();
    for j in 0..traj.len() {
        let s = &traj.states[j];
        line.clear();
        line.push_str(&format!("{:.16e}", traj.t[j]));
        let groups = [
            &s.physical.f,
            &s.physical.v,
            &s.physical.p_t,
            &s.physical.p_g,
            &s.theta,
            &s.u,
            &traj.w[j],
            &traj.sigma[j],
        ];
        for g in groups {
            for &x in g.iter() {
                push(&mut line, x);
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Long format `panel,area,t,value` for the frequency, generation, voltage
/// and control panels, keeping every `stride`-th recorded sample.
pub fn write_plot_data<W: Write>(traj: &Trajectory, stride: usize, out: &mut W) -> io::Result<()> {
    writeln!(out, "panel,area,t,value")?;
    let panels: [(&str, Series); 4] = [
        ("frequency", |t, j| &t.states[j].physical.f),
        ("generation", |t, j| &t.states[j].physical.p_t),
        ("voltage", |t, j| &t.states[j].physical.v),
        ("control", |t, j| &t.states[j].u),
    ];
    for (panel, get) in panels {
        for j in (0..traj.len()).step_by(stride.max(1)) {
            for (i, x) in get(traj, j).iter().enumerate() {
                writeln!(out, "{panel},{},{:.16e},{x:.16e}", i + 1, traj.t[j])?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub scenario: PathBuf,
    pub output_dir: PathBuf,
    /// File names relative to `output_dir`.
    pub artifacts: Vec<String>,
    pub tool_version: String,
    pub config_hash: String,
}

impl RunManifest {
    pub fn new(scenario: &Path, output_dir: &Path, config_hash: &str) -> Self {
        Self {
            scenario: scenario.to_path_buf(),
            output_dir: output_dir.to_path_buf(),
            artifacts: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
        }
    }

    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }
}

/// Writes `name` inside `dir` through a buffered writer and records it.
pub fn emit(
    dir: &Path,
    name: &str,
    manifest: &mut RunManifest,
    body: impl FnOnce(&mut io::BufWriter<std::fs::File>) -> io::Result<()>,
) -> io::Result<()> {
    let mut w = io::BufWriter::new(std::fs::File::create(dir.join(name))?);
    body(&mut w)?;
    w.flush()?;
    manifest.artifacts.push(name.to_string());
    Ok(())
}

//! Parameter sweeps: the Cartesian product of a grid of dotted-key
//! overrides applied to the scenario file, one independent run per point.
//!
//! Grid file:
//!
//! ```toml
//! [grid]
//! "controller.w_max" = [8.0, 10.0]
//! "controller.variant" = ["ssosm-consensus", "primal-dual"]
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::scenario::{build_scenario, LoadError, ScenarioFile};
use crate::{io_err, say, simulate, verify, write_run, CliError, Exit, RunManifest};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub grid: BTreeMap<String, Vec<toml::Value>>,
}

/// One grid point: the overrides in key order.
pub type Point = Vec<(String, toml::Value)>;

/// Cartesian product of the grid; the last key varies fastest.
pub fn grid_points(grid: &BTreeMap<String, Vec<toml::Value>>) -> Vec<Point> {
    grid.iter().fold(vec![Vec::new()], |acc, (key, values)| {
        acc.iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect()
    })
}

/// Sets `value` at a dotted path such as `controller.w_max` or
/// `demand.events.0.time` (array elements by index).
pub fn apply_override(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), String> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()))
            }
            toml::Value::Array(a) => {
                let i: usize = part
                    .parse()
                    .map_err(|_| format!("{key}: '{part}' is not an array index"))?;
                let len = a.len();
                let slot = a
                    .get_mut(i)
                    .ok_or_else(|| format!("{key}: index {i} out of range (length {len})"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(format!("{key}: '{part}' is below a scalar")),
        };
    }
    Err(format!("{key}: empty key"))
}

struct SweepRow {
    run: String,
    passed: Option<bool>,
    config_hash: String,
    error: Option<String>,
}

pub(crate) fn run_sweep(
    scenario: &Path,
    grid_path: &Path,
    jobs: usize,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<Exit, CliError> {
    let text = std::fs::read_to_string(scenario).map_err(io_err(scenario))?;
    let path = scenario.display().to_string();
    // parse once through the typed schema for positioned errors
    crate::scenario::parse_scenario(&text, &path)?;
    let base: toml::Value = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let grid_text = std::fs::read_to_string(grid_path).map_err(io_err(grid_path))?;
    let grid: GridFile = toml::from_str(&grid_text).map_err(|e| {
        CliError::Config(format!("{}: {}", grid_path.display(), e.message().trim()))
    })?;
    if grid.grid.values().any(Vec::is_empty) {
        return Err(CliError::Config(format!(
            "{}: every grid key needs at least one value",
            grid_path.display()
        )));
    }

    // every point must be a valid scenario before any worker starts
    let points = grid_points(&grid.grid);
    let mut files = Vec::with_capacity(points.len());
    for point in &points {
        let mut doc = base.clone();
        for (k, v) in point {
            apply_override(&mut doc, k, v.clone()).map_err(CliError::Config)?;
        }
        let file: ScenarioFile = doc.try_into().map_err(|e: toml::de::Error| {
            CliError::Load(LoadError::Parse {
                path: path.clone(),
                line: 0,
                column: 0,
                message: format!("{} ({})", e.message().trim(), describe(point)),
            })
        })?;
        files.push(file);
    }
    let loaded = files
        .into_iter()
        .zip(&points)
        .map(|(f, p)| build_scenario(f, &format!("{path} ({})", describe(p))))
        .collect::<Result<Vec<_>, _>>()?;

    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let results: Vec<(String, Result<bool, CliError>)> = pool.install(|| {
        loaded
            .par_iter()
            .enumerate()
            .map(|(k, l)| {
                let run_dir = run_dir(dir, k, loaded.len());
                let name = run_dir
                    .file_name()
                    .expect("run directory name")
                    .to_string_lossy()
                    .into_owned();
                let outcome = simulate(l).and_then(|traj| {
                    let report = verify(l, &traj, &l.thresholds)?;
                    write_run(scenario, &run_dir, l, &traj, Some(&report))?;
                    Ok(report.passed())
                });
                (name, outcome)
            })
            .collect()
    });

    // coordinator output after every worker has finished
    let mut manifest = RunManifest::new(
        scenario,
        dir,
        &crate::scenario::config_hash(&loaded[0].file),
    );
    let mut rows = Vec::new();
    let mut numeric = false;
    for ((name, outcome), (l, point)) in results.iter().zip(loaded.iter().zip(&points)) {
        let (passed, error) = match outcome {
            Ok(p) => (Some(*p), None),
            Err(e) => {
                numeric |= matches!(e, CliError::Numeric(_));
                (None, Some(e.to_string()))
            }
        };
        say(
            out,
            &format!(
                "{name} [{}]: {}",
                describe(point),
                match (&passed, &error) {
                    (Some(true), _) => "all criteria pass".to_string(),
                    (Some(false), _) => "some criteria fail".to_string(),
                    (None, Some(e)) => e.clone(),
                    _ => unreachable!(),
                }
            ),
        );
        if passed.is_some() {
            manifest.artifacts.push(format!("{name}/manifest.json"));
        }
        rows.push((
            point,
            SweepRow {
                run: name.clone(),
                passed,
                config_hash: l.config_hash.clone(),
                error,
            },
        ));
    }
    crate::output::emit(dir, "sweep.csv", &mut manifest, |w| {
        let keys: Vec<&String> = grid.grid.keys().collect();
        let header: Vec<String> = ["run".to_string()]
            .into_iter()
            .chain(keys.iter().map(|k| k.to_string()))
            .chain(["passed".into(), "config_hash".into(), "error".into()])
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (point, row) in &rows {
            let mut fields = vec![row.run.clone()];
            fields.extend(point.iter().map(|(_, v)| csv_field(&bare(v))));
            fields.push(row.passed.map_or(String::new(), |p| p.to_string()));
            fields.push(row.config_hash.clone());
            fields.push(csv_field(row.error.as_deref().unwrap_or("")));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    })
    .map_err(io_err(dir))?;
    manifest.write(dir).map_err(io_err(dir))?;
    Ok(if numeric { Exit::Numeric } else { Exit::Ok })
}

fn describe(point: &Point) -> String {
    point
        .iter()
        .map(|(k, v)| format!("{k}={}", bare(v)))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Strings without TOML quoting; everything else in TOML notation.
fn bare(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Directory of one sweep run.
pub fn run_dir(dir: &Path, index: usize, total: usize) -> PathBuf {
    let width = total.to_string().len().max(4);
    dir.join(format!("run_{:0width$}", index + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cartesian() {
        let mut g = BTreeMap::new();
        g.insert(
            "a".to_string(),
            vec![toml::Value::Integer(1), toml::Value::Integer(2)],
        );
        g.insert(
            "b".to_string(),
            vec![
                toml::Value::Boolean(true),
                toml::Value::Boolean(false),
                toml::Value::Integer(0),
            ],
        );
        let pts = grid_points(&g);
        assert_eq!(pts.len(), 6);
        assert_eq!(
            pts[1],
            vec![
                ("a".into(), toml::Value::Integer(1)),
                ("b".into(), toml::Value::Boolean(false))
            ]
        );
    }

    #[test]
    fn override_nested_and_indexed() {
        let mut doc: toml::Value = toml::from_str("[x]\ny = 1\n[[e]]\nt = 1.0\n").unwrap();
        apply_override(&mut doc, "x.y", toml::Value::Integer(5)).unwrap();
        apply_override(&mut doc, "e.0.t", toml::Value::Float(2.0)).unwrap();
        assert_eq!(doc["x"]["y"].as_integer(), Some(5));
        assert_eq!(doc["e"][0]["t"].as_float(), Some(2.0));
        assert!(apply_override(&mut doc, "e.3.t", toml::Value::Float(2.0)).is_err());
        assert!(apply_override(&mut doc, "x.y.z", toml::Value::Float(2.0)).is_err());
    }

    #[test]
    fn run_dirs_are_zero_padded() {
        assert!(run_dir(Path::new("o"), 0, 12).ends_with("run_0001"));
    }
}

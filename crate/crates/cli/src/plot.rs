//! Backend-neutral plot specifications derived from artifact CSVs.
//!
//! The spec embeds the data, so it is self-contained, and carries no
//! timestamps: the same CSV always yields the same bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    DecayLoglog,
    ProfileOverlay,
    TrajectoryModes,
    WindingMap,
}

impl PlotKind {
    /// Columns the CSV must provide.
    pub fn required(&self) -> &'static [&'static str] {
        match self {
            PlotKind::DecayLoglog => &["quantity", "x", "value", "target_slope"],
            PlotKind::ProfileOverlay => &["label", "z", "value", "f_ref"],
            PlotKind::TrajectoryModes => &["s", "q0", "q1", "q2"],
            PlotKind::WindingMap => &["d0", "d1", "phi_x", "phi_y"],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            PlotKind::DecayLoglog => "decay_loglog",
            PlotKind::ProfileOverlay => "profile_overlay",
            PlotKind::TrajectoryModes => "trajectory_modes",
            PlotKind::WindingMap => "winding_map",
        }
    }
}

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("{path}: missing columns {missing:?}; a {kind} plot needs {expected:?}")]
    Schema { path: String, kind: &'static str, missing: Vec<String>, expected: Vec<String> },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: row {row}: column {column} is not a number")]
    Value { path: String, row: usize, column: String },
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn col(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).expect("checked column")
    }
}

fn read(path: &Path, kind: PlotKind) -> Result<Table, PlotError> {
    let ps = path.display().to_string();
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| PlotError::Csv { path: ps.clone(), source: e })?;
    let header: Vec<String> =
        rd.headers().map_err(|e| PlotError::Csv { path: ps.clone(), source: e })?.iter().map(String::from).collect();
    let missing: Vec<String> = kind.required().iter().filter(|c| !header.iter().any(|h| h == *c)).map(|c| c.to_string()).collect();
    if !missing.is_empty() {
        return Err(PlotError::Schema {
            path: ps,
            kind: kind.name(),
            missing,
            expected: kind.required().iter().map(|c| c.to_string()).collect(),
        });
    }
    let rows = rd
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| PlotError::Csv { path: ps, source: e })?;
    Ok(Table { header, rows })
}

/// Parses a numeric cell; empty cells (e.g. no exit) become `None`.
fn num(t: &Table, path: &Path, row: usize, column: &str) -> Result<Option<f64>, PlotError> {
    let s = t.rows[row][t.col(column)].trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| PlotError::Value { path: path.display().to_string(), row: row + 1, column: column.into() })
}

fn axis(label: &str, scale: &str) -> Value {
    json!({ "label": label, "scale": scale })
}

fn decay(t: &Table, path: &Path) -> Result<Value, PlotError> {
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>, f64)> = BTreeMap::new();
    for i in 0..t.rows.len() {
        let q = t.rows[i][t.col("quantity")].clone();
        let (Some(x), Some(v), Some(slope)) = (num(t, path, i, "x")?, num(t, path, i, "value")?, num(t, path, i, "target_slope")?)
        else {
            continue;
        };
        let g = groups.entry(q).or_insert((Vec::new(), Vec::new(), slope));
        g.0.push(x);
        g.1.push(v.abs());
    }
    let mut series = Vec::new();
    let mut guides = Vec::new();
    for (name, (x, y, slope)) in &groups {
        series.push(json!({ "name": name, "mark": "line+points", "x": x, "y": y }));
        if let (Some(&x0), Some(&y0)) = (x.first(), y.first()) {
            guides.push(json!({
                "name": format!("{name} reference slope {slope}"),
                "kind": "power_law",
                "slope": slope,
                "anchor": [x0, y0],
                "style": "dashed",
            }));
        }
    }
    Ok(json!({ "x_axis": axis("s (or |q|)", "log"), "y_axis": axis("|value|", "log"), "series": series, "guides": guides }))
}

fn overlay(t: &Table, path: &Path) -> Result<Value, PlotError> {
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut reference: BTreeMap<String, f64> = BTreeMap::new();
    for i in 0..t.rows.len() {
        let label = t.rows[i][t.col("label")].clone();
        let (Some(z), Some(v), Some(f)) = (num(t, path, i, "z")?, num(t, path, i, "value")?, num(t, path, i, "f_ref")?) else {
            continue;
        };
        let g = groups.entry(label).or_default();
        g.0.push(z);
        g.1.push(v);
        // keyed by the printed z so repeated samples collapse
        reference.insert(format!("{z:+.12e}"), f);
    }
    let mut pts: Vec<(f64, f64)> = reference.iter().map(|(k, &f)| (k.parse::<f64>().unwrap_or(f64::NAN), f)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let series: Vec<Value> =
        groups.iter().map(|(name, (z, v))| json!({ "name": name, "mark": "line", "x": z, "y": v })).collect();
    Ok(json!({
        "x_axis": axis("z = y / sqrt(|log(T-t)|)", "linear"),
        "y_axis": axis("(T-t)^(1/(p-1)) u", "linear"),
        "series": series,
        "reference_curves": [{
            "name": "f(z) = kappa (1 + c_p z^2)^(-1/(p-1))",
            "x": pts.iter().map(|p| p.0).collect::<Vec<_>>(),
            "y": pts.iter().map(|p| p.1).collect::<Vec<_>>(),
            "style": "dashed",
        }],
    }))
}

fn modes(t: &Table, path: &Path) -> Result<Value, PlotError> {
    let mut s = Vec::new();
    let mut q = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..t.rows.len() {
        let Some(si) = num(t, path, i, "s")? else { continue };
        s.push(si);
        for (m, col) in ["q0", "q1", "q2"].iter().enumerate() {
            q[m].push(num(t, path, i, col)?.unwrap_or(f64::NAN));
        }
    }
    let series: Vec<Value> =
        (0..3).map(|m| json!({ "name": format!("q{m}"), "mark": "line", "x": s, "y": q[m] })).collect();
    Ok(json!({
        "x_axis": axis("s", "linear"),
        "y_axis": axis("mode coefficient", "symlog"),
        "series": series,
        "guides": [
            { "name": "q0 ~ e^s", "kind": "exponential", "rate": 1.0, "style": "dotted" },
            { "name": "q1 ~ e^(s/2)", "kind": "exponential", "rate": 0.5, "style": "dotted" },
        ],
    }))
}

fn winding(t: &Table, path: &Path) -> Result<Value, PlotError> {
    let (mut d0, mut d1, mut angle) = (Vec::new(), Vec::new(), Vec::new());
    let (mut n0, mut n1) = (Vec::new(), Vec::new());
    for i in 0..t.rows.len() {
        let (Some(a), Some(b)) = (num(t, path, i, "d0")?, num(t, path, i, "d1")?) else { continue };
        match (num(t, path, i, "phi_x")?, num(t, path, i, "phi_y")?) {
            (Some(x), Some(y)) => {
                d0.push(a);
                d1.push(b);
                angle.push(y.atan2(x));
            }
            _ => {
                n0.push(a);
                n1.push(b);
            }
        }
    }
    Ok(json!({
        "x_axis": axis("d0", "linear"),
        "y_axis": axis("d1", "linear"),
        "series": [
            { "name": "exit angle", "mark": "points", "x": d0, "y": d1, "color": angle, "colormap": "cyclic", "color_range": [-std::f64::consts::PI, std::f64::consts::PI] },
            { "name": "no exit", "mark": "cross", "x": n0, "y": n1 },
        ],
    }))
}

/// Builds the spec for `csv_path` without writing it.
pub fn plot_spec(csv_path: &Path, kind: PlotKind) -> Result<Value, PlotError> {
    let t = read(csv_path, kind)?;
    let body = match kind {
        PlotKind::DecayLoglog => decay(&t, csv_path)?,
        PlotKind::ProfileOverlay => overlay(&t, csv_path)?,
        PlotKind::TrajectoryModes => modes(&t, csv_path)?,
        PlotKind::WindingMap => winding(&t, csv_path)?,
    };
    let source = csv_path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let mut spec = json!({ "kind": kind.name(), "source": source, "format": "blowuplab-plot/1" });
    if let (Value::Object(a), Value::Object(b)) = (&mut spec, body) {
        a.extend(b);
    }
    Ok(spec)
}

/// Writes `<csv stem>.<kind>.plot.json` next to the CSV and returns its path.
pub fn emit_plot_spec(csv_path: &Path, kind: PlotKind) -> Result<PathBuf, PlotError> {
    let spec = plot_spec(csv_path, kind)?;
    let stem = csv_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "plot".into());
    let out = csv_path.with_file_name(format!("{stem}.{}.plot.json", kind.name()));
    let mut text = serde_json::to_string_pretty(&spec).expect("json");
    text.push('\n');
    std::fs::write(&out, text).map_err(|e| PlotError::Io { path: out.display().to_string(), source: e })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn decay_guide_carries_target_slope() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "decay.csv", "# config_hash=ab\nquantity,x,value,target_slope\nR_2,50,1e-6,-2.5\nR_2,500,1e-9,-2.5\n");
        let spec = plot_spec(&p, PlotKind::DecayLoglog).unwrap();
        assert_eq!(spec["guides"][0]["slope"], json!(-2.5));
        assert_eq!(spec["y_axis"]["scale"], "log");
    }

    #[test]
    fn overlay_has_reference_curve() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "o.csv", "label,z,value,f_ref\na,0,0.7,0.7071\na,1,0.6,0.66\nb,0,0.71,0.7071\n");
        let spec = plot_spec(&p, PlotKind::ProfileOverlay).unwrap();
        assert_eq!(spec["reference_curves"][0]["x"].as_array().unwrap().len(), 2);
        assert_eq!(spec["series"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn missing_columns_are_listed() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "t.csv", "s,q0,q2\n1,2,3\n");
        match plot_spec(&p, PlotKind::TrajectoryModes) {
            Err(PlotError::Schema { missing, .. }) => assert_eq!(missing, vec!["q1".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn emission_is_idempotent() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "w.csv", "d0,d1,s_exit,exit_constraint,phi_x,phi_y\n0,0,,,,\n1,0,20,q0,1,0.5\n");
        let a = std::fs::read(emit_plot_spec(&p, PlotKind::WindingMap).unwrap()).unwrap();
        let b = std::fs::read(emit_plot_spec(&p, PlotKind::WindingMap).unwrap()).unwrap();
        assert_eq!(a, b);
        let v: Value = serde_json::from_slice(&a).unwrap();
        assert_eq!(v["series"][1]["x"].as_array().unwrap().len(), 1);
    }
}

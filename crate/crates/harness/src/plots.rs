//! Static SVG panels rendered from episode CSVs.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HarnessError, Result};
use crate::schema;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Panel {
    /// Roll and pitch traces.
    Tilt,
    /// Target vs executed command, per axis.
    Commands,
    /// Joint offsets with their envelope and limits.
    Joints,
}

impl Panel {
    pub const ALL: [Panel; 3] = [Panel::Tilt, Panel::Commands, Panel::Joints];

    pub fn name(self) -> &'static str {
        match self {
            Panel::Tilt => "tilt",
            Panel::Commands => "commands",
            Panel::Joints => "joints",
        }
    }
}

/// Columns of one CSV, by name.
struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let csv_err = |source| HarnessError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let text = fs::read_to_string(path).map_err(HarnessError::file(path))?;
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let headers: Vec<String> = match r.headers() {
            Ok(h) => h.iter().map(str::to_string).collect(),
            Err(e) => return Err(csv_err(e)),
        };
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            rows.push(rec.iter().map(|v| v.parse().unwrap_or(f64::NAN)).collect());
        }
        if headers.iter().all(|h| h.is_empty()) || rows.is_empty() {
            return Err(HarnessError::invalid(path, "empty CSV: no data rows"));
        }
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::invalid(&self.path, format!("missing column {name}")))?;
        Ok(self
            .rows
            .iter()
            .map(|r| r.get(i).copied().unwrap_or(f64::NAN))
            .collect())
    }

    /// `prefix0, prefix1, …` while present; at least one is required.
    fn indexed(&self, prefix: &str) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![self.column(&format!("{prefix}0"))?];
        while let Ok(c) = self.column(&format!("{prefix}{}", out.len())) {
            out.push(c);
        }
        Ok(out)
    }
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    color: RGBColor,
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn series(label: impl Into<String>, x: &[f64], y: &[f64], color: RGBColor) -> Series {
    Series {
        label: label.into(),
        points: x
            .iter()
            .copied()
            .zip(y.iter().copied())
            .filter(|(_, v)| v.is_finite())
            .collect(),
        color,
    }
}

fn bounds(all: &[Series]) -> (Range<f64>, Range<f64>) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in all.iter().flat_map(|s| &s.points) {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    (x0..x1, y0 - pad..y1 + pad)
}

fn draw(path: &Path, title: &str, y_desc: &str, all: &[Series]) -> Result<()> {
    let plot_err = |e: &dyn std::fmt::Display| HarnessError::Plot {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let (xr, yr) = bounds(all);
    let root = SVGBackend::new(path, (900, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(xr, yr)
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc("step")
        .y_desc(y_desc)
        .draw()
        .map_err(|e| plot_err(&e))?;
    for s in all {
        let color = s.color;
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

fn render(table: &Table, panel: Panel, path: &Path) -> Result<()> {
    let step = table.column("step")?;
    match panel {
        Panel::Tilt => {
            let s = vec![
                series("roll", &step, &table.column("roll")?, PALETTE[0]),
                series("pitch", &step, &table.column("pitch")?, PALETTE[1]),
            ];
            draw(path, "Base tilt", "rad", &s)
        }
        Panel::Commands => {
            let mut s = Vec::new();
            for (i, axis) in ["vx", "vy", "wz"].iter().enumerate() {
                s.push(series(
                    format!("target {axis}"),
                    &step,
                    &table.column(&format!("target_{axis}"))?,
                    PALETTE[i],
                ));
                s.push(series(
                    format!("command {axis}"),
                    &step,
                    &table.column(&format!("command_{axis}"))?,
                    PALETTE[i + 3],
                ));
            }
            draw(path, "Target and executed commands", "m/s, rad/s", &s)
        }
        Panel::Joints => {
            let q = table.indexed("q")?;
            let limits = table.indexed("q_max")?;
            let n = step.len();
            let upper: Vec<f64> = (0..n)
                .map(|t| q.iter().map(|c| c[t]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let lower: Vec<f64> = (0..n)
                .map(|t| q.iter().map(|c| c[t]).fold(f64::INFINITY, f64::min))
                .collect();
            let lim: Vec<f64> = (0..n)
                .map(|t| limits.iter().map(|c| c[t]).fold(f64::INFINITY, f64::min))
                .collect();
            let neg: Vec<f64> = lim.iter().map(|l| -l).collect();
            let grey = RGBColor(90, 90, 90);
            let s = vec![
                series("max offset", &step, &upper, PALETTE[0]),
                series("min offset", &step, &lower, PALETTE[1]),
                series("+limit", &step, &lim, grey),
                series("-limit", &step, &neg, grey),
            ];
            draw(path, "Joint offset envelope vs limits", "rad", &s)
        }
    }
}

/// Renders one SVG per panel from `csv` into `out`, named
/// `<csv stem>_<panel>.svg`, and records them in `out/plots.json`.
pub fn export_plots(csv: &Path, panels: &[Panel], out: &Path) -> Result<Vec<PathBuf>> {
    if panels.is_empty() {
        return Err(HarnessError::Config("no panels declared".into()));
    }
    let table = Table::read(csv)?;
    fs::create_dir_all(out).map_err(HarnessError::file(out))?;
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("episode");
    let mut written = Vec::with_capacity(panels.len());
    for &panel in panels {
        let path = out.join(format!("{stem}_{}.svg", panel.name()));
        render(&table, panel, &path)?;
        written.push(path);
    }
    update_manifest(out, csv, &written)?;
    Ok(written)
}

fn update_manifest(out: &Path, csv: &Path, written: &[PathBuf]) -> Result<()> {
    let path = out.join("plots.json");
    let existing: Value = fs::read(&path)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or(Value::Null);
    let list = |key: &str| -> Vec<String> {
        existing
            .get(key)
            .cloned()
            .and_then(|f| serde_json::from_value(f).ok())
            .unwrap_or_default()
    };
    let (mut files, mut sources) = (list("files"), list("sources"));
    for w in written {
        let name = w.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if !files.contains(&name) {
            files.push(name);
        }
    }
    let src = csv.display().to_string();
    if !sources.contains(&src) {
        sources.push(src);
    }
    let doc = schema::tagged(
        "dreamplan.plots",
        &serde_json::json!({ "files": files, "sources": sources }),
    )?;
    schema::write_json(&path, &doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_csv(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("ep.csv");
        fs::write(&p, format!("{}\n{body}", schema::csv_schema_line(schema::EPISODE_CSV))).unwrap();
        p
    }

    const HEADER: &str =
        "step,target_vx,target_vy,target_wz,command_vx,command_vy,command_wz,roll,pitch,q0,q1,q_max0,q_max1\n";

    #[test]
    fn one_svg_per_declared_panel() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = HEADER.to_string();
        for t in 0..20 {
            let x = t as f64 * 0.05;
            body += &format!(
                "{t},1,0,0,0.9,0,0,{},{},{},{},0.45,0.45\n",
                x.sin() * 0.1,
                x.cos() * 0.05,
                x * 0.2,
                -x * 0.3
            );
        }
        let csv = write_csv(dir.path(), &body);
        for panels in [vec![Panel::Tilt], Panel::ALL.to_vec()] {
            let out = dir.path().join(format!("out{}", panels.len()));
            let files = export_plots(&csv, &panels, &out).unwrap();
            assert_eq!(files.len(), panels.len());
            let svgs = fs::read_dir(&out)
                .unwrap()
                .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
                .count();
            assert_eq!(svgs, panels.len());
            for f in &files {
                assert!(fs::read_to_string(f).unwrap().contains("<svg"));
            }
            assert!(schema::validate_dir(&out).unwrap().ok());
        }
    }

    #[test]
    fn empty_csv_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        for body in ["", HEADER] {
            let csv = write_csv(dir.path(), body);
            let err = export_plots(&csv, &Panel::ALL, &dir.path().join("out")).unwrap_err();
            assert!(err.to_string().contains("ep.csv"), "{err}");
        }
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_csv(dir.path(), "step,roll\n0,0.1\n");
        let err = export_plots(&csv, &[Panel::Tilt], &dir.path().join("out")).unwrap_err();
        assert!(err.to_string().contains("missing column pitch"), "{err}");
    }
}

//! Schema tags for every emitted file, and the directory validator.
//!
//! JSON documents and JSONL lines carry `schema` and `schema_version`
//! fields. CSV files start with a `# schema=<name> version=<n>` line.
//! Checkpoints carry their own binary header and a JSON sidecar. SVG
//! panels are listed in a `plots.json` manifest next to them.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use dreamplan_core::trainer::Checkpoint;
use serde::Serialize;
use serde_json::Value;

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const EPISODE_CSV: &str = "dreamplan.episode_csv";

/// Schemas this build understands, with the newest version of each.
pub const KNOWN: &[(&str, u32)] = &[
    ("dreamplan.train_config", 1),
    ("dreamplan.metrics", 1),
    ("dreamplan.distill", 1),
    ("dreamplan.checkpoint", 1),
    ("dreamplan.train_summary", 1),
    ("dreamplan.run_config", 1),
    ("dreamplan.eval_summary", 1),
    ("dreamplan.plan_step", 1),
    ("dreamplan.bench", 1),
    ("dreamplan.ablation", 1),
    ("dreamplan.plots", 1),
    (EPISODE_CSV, 1),
];

/// Columns every episode CSV must have, whatever the joint count.
pub const EPISODE_REQUIRED: &[&str] = &[
    "step",
    "target_vx",
    "target_vy",
    "target_wz",
    "command_vx",
    "command_vy",
    "command_wz",
    "roll",
    "pitch",
];

pub fn csv_schema_line(name: &str) -> String {
    format!("# schema={name} version={SCHEMA_VERSION}")
}

/// Parses a `# schema=<name> version=<n>` line.
pub fn parse_csv_schema_line(line: &str) -> Option<(String, u32)> {
    let rest = line.strip_prefix('#')?.trim();
    let mut name = None;
    let mut version = None;
    for part in rest.split_whitespace() {
        match part.split_once('=') {
            Some(("schema", v)) => name = Some(v.to_string()),
            Some(("version", v)) => version = v.parse().ok(),
            _ => {}
        }
    }
    Some((name?, version?))
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(doc)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(HarnessError::file(path))
}

/// Wraps `body` as `{schema, schema_version, ...body}`; `body` must
/// serialize to an object.
pub fn tagged<T: Serialize>(schema: &str, body: &T) -> Result<Value> {
    let mut v = serde_json::to_value(body)?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| HarnessError::Config(format!("{schema} body is not an object")))?;
    obj.insert("schema".into(), Value::from(schema));
    obj.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    Ok(v)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub files_checked: usize,
    /// One line per problem, naming the file.
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty() && self.files_checked > 0
    }
}

/// Checks every file under `dir`.
pub fn validate_dir(dir: &Path) -> Result<ValidationReport> {
    if !dir.is_dir() {
        return Err(HarnessError::Missing(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    collect(dir, &mut files)?;
    files.sort();
    let mut report = ValidationReport::default();
    let listed = listed_plots(&files);
    for f in &files {
        report.files_checked += 1;
        if let Err(msg) = check_file(f, &listed) {
            report.problems.push(format!("{}: {msg}", f.display()));
        }
    }
    if files.is_empty() {
        report.problems.push(format!("{}: no output files", dir.display()));
    }
    Ok(report)
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(HarnessError::file(dir))? {
        let path = entry.map_err(HarnessError::file(dir))?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// SVG files named by some `plots.json` manifest.
fn listed_plots(files: &[PathBuf]) -> BTreeSet<PathBuf> {
    let mut set = BTreeSet::new();
    for f in files
        .iter()
        .filter(|f| f.file_name().is_some_and(|n| n == "plots.json"))
    {
        let Ok(v) = fs::read(f)
            .map_err(|_| ())
            .and_then(|b| serde_json::from_slice::<Value>(&b).map_err(|_| ()))
        else {
            continue;
        };
        let base = f.parent().unwrap_or(Path::new("."));
        for p in v.get("files").and_then(Value::as_array).into_iter().flatten() {
            if let Some(name) = p.as_str() {
                set.insert(base.join(name));
            }
        }
    }
    set
}

fn check_tag(v: &Value) -> std::result::Result<(), String> {
    let name = v.get("schema").and_then(Value::as_str).ok_or("missing schema tag")?;
    let version = v
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or("missing schema_version")?;
    check_known(name, version)
}

fn check_known(name: &str, version: u64) -> std::result::Result<(), String> {
    match KNOWN.iter().find(|(n, _)| *n == name) {
        None => Err(format!("unknown schema {name}")),
        Some((_, newest)) if version == 0 || version > u64::from(*newest) => {
            Err(format!("unsupported {name} version {version}"))
        }
        Some(_) => Ok(()),
    }
}

fn check_file(path: &Path, listed: &BTreeSet<PathBuf>) -> std::result::Result<(), String> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let text = || fs::read_to_string(path).map_err(|e| e.to_string());
    match ext {
        "json" => {
            let v: Value = serde_json::from_str(&text()?).map_err(|e| e.to_string())?;
            check_tag(&v)
        }
        "jsonl" => {
            for (i, line) in text()?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let v: Value = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
                check_tag(&v).map_err(|e| format!("line {}: {e}", i + 1))?;
            }
            Ok(())
        }
        "csv" => check_csv(path, &text()?),
        "ckpt" => Checkpoint::load(path).map(|_| ()).map_err(|e| e.to_string()),
        "svg" if listed.contains(path) => {
            let t = text()?;
            if t.contains("<svg") {
                Ok(())
            } else {
                Err("not an SVG document".into())
            }
        }
        "svg" => Err("plot not listed in a plots.json manifest".into()),
        _ => Err("unrecognized file type".into()),
    }
}

fn check_csv(path: &Path, text: &str) -> std::result::Result<(), String> {
    let first = text.lines().next().ok_or("empty file")?;
    let (name, version) = parse_csv_schema_line(first).ok_or("missing schema line")?;
    check_known(&name, u64::from(version))?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| e.to_string())?.clone();
    if name == EPISODE_CSV {
        if let Some(c) = EPISODE_REQUIRED.iter().find(|c| !headers.iter().any(|h| h == **c)) {
            return Err(format!("missing column {c}"));
        }
    }
    for (i, rec) in r.records().enumerate() {
        rec.map_err(|e| format!("{} row {}: {e}", path.display(), i + 1))?;
    }
    Ok(())
}

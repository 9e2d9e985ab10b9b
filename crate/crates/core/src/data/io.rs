//! Dataset file formats: CSV with a declared column order plus a JSON
//! sidecar describing units and sample kinds. Both are plain text so runs
//! can be diffed byte-for-byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CoreError, Result};

use super::types::{Dataset, Sample, SampleKind};

/// Units for every channel the generators can emit, plus the targets.
fn unit_table() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("inj_press", "MPa"),
        ("inj_timing", "deg"),
        ("main_fuel", "mm3/st"),
        ("pre_fuel", "mm3/st"),
        ("torque", "Nm"),
        ("speed", "rpm"),
        ("pim", "kPa"),
        ("pex", "kPa"),
        ("maf", "g/s"),
        ("egr_pos", "%"),
        ("vgt_pos", "%"),
        ("nox", "ppm"),
        ("soot", "%"),
    ])
}

/// JSON sidecar describing a dataset CSV: column order, units, and how many
/// samples of each kind it holds.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetSchema {
    pub columns: Vec<String>,
    pub units: BTreeMap<String, String>,
    pub steady_count: usize,
    pub transient_count: usize,
}

impl DatasetSchema {
    /// Describe a dataset.
    pub fn of(dataset: &Dataset) -> Self {
        let units = unit_table();
        let mut all: Vec<String> = dataset.columns.clone();
        all.push("nox".into());
        all.push("soot".into());
        DatasetSchema {
            columns: dataset.columns.clone(),
            units: all
                .iter()
                .map(|c| {
                    (
                        c.clone(),
                        units.get(c.as_str()).copied().unwrap_or("?").to_string(),
                    )
                })
                .collect(),
            steady_count: dataset
                .samples
                .iter()
                .filter(|s| s.kind == SampleKind::Steady)
                .count(),
            transient_count: dataset
                .samples
                .iter()
                .filter(|s| s.kind == SampleKind::Transient)
                .count(),
        }
    }
}

/// Serialize a dataset to CSV text: `kind,t,<inputs...>,nox,soot`.
pub fn dataset_to_csv(dataset: &Dataset) -> String {
    let mut out = String::new();
    out.push_str("kind,t");
    for c in &dataset.columns {
        out.push(',');
        out.push_str(c);
    }
    out.push_str(",nox,soot\n");
    for s in &dataset.samples {
        let _ = write!(out, "{},{}", s.kind.as_str(), s.t);
        for v in &s.inputs {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{},{}", s.targets[0], s.targets[1]);
    }
    out
}

/// Parse a dataset from CSV text produced by [`dataset_to_csv`].
pub fn dataset_from_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CoreError::invalid("empty dataset CSV"))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() < 5 || fields[0] != "kind" || fields[1] != "t" {
        return Err(CoreError::invalid("dataset CSV must start with kind,t"));
    }
    if fields[fields.len() - 2] != "nox" || fields[fields.len() - 1] != "soot" {
        return Err(CoreError::invalid("dataset CSV must end with nox,soot"));
    }
    let columns: Vec<String> = fields[2..fields.len() - 2]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut dataset = Dataset::new(columns);
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != fields.len() {
            return Err(CoreError::invalid(format!(
                "line {}: expected {} fields, found {}",
                ln + 2,
                fields.len(),
                parts.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| CoreError::invalid(format!("line {}: bad number {s:?}", ln + 2)))
        };
        let kind = SampleKind::parse(parts[0])?;
        let t = parse(parts[1])?;
        let inputs: Vec<f64> = parts[2..parts.len() - 2]
            .iter()
            .map(|s| parse(s))
            .collect::<Result<_>>()?;
        let targets = [
            parse(parts[parts.len() - 2])?,
            parse(parts[parts.len() - 1])?,
        ];
        dataset.samples.push(Sample {
            kind,
            t,
            inputs,
            targets,
        });
    }
    dataset.validate()?;
    Ok(dataset)
}

/// Write `name.csv` plus `name.schema.json` into `dir`.
pub fn write_dataset(dir: &Path, name: &str, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{name}.csv")), dataset_to_csv(dataset))?;
    let schema = DatasetSchema::of(dataset);
    std::fs::write(
        dir.join(format!("{name}.schema.json")),
        serde_json::to_string_pretty(&schema)?,
    )?;
    Ok(())
}

/// Read a dataset back from `dir/name.csv`.
pub fn read_dataset(dir: &Path, name: &str) -> Result<Dataset> {
    let text = std::fs::read_to_string(dir.join(format!("{name}.csv")))?;
    dataset_from_csv(&text)
}

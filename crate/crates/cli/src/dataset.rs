use std::path::{Path, PathBuf};

use groupseg::synth::{mean_shift, planted_blocks, player_fixture};
use groupseg::{grouping::default_variable_names, Window};
use serde::{Deserialize, Serialize};

use crate::config::{read_json, resolve, DatasetSource, SyntheticSpec};
use crate::error::{CliError, CliResult};

/// Window CSV files sharing one `(T, D)` shape. Paths are relative to the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub windows: Vec<PathBuf>,
    /// Windows used for background statistics; defaults to `windows`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<Vec<PathBuf>>,
    pub variable_names: Vec<String>,
    #[serde(rename = "T")]
    pub t_len: usize,
    #[serde(rename = "D")]
    pub d_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub windows: Vec<Window>,
    pub background: Vec<Window>,
    pub variable_names: Vec<String>,
    pub labels: Option<Vec<f64>>,
}

impl Dataset {
    pub fn t_len(&self) -> usize {
        self.windows[0].t_len()
    }

    pub fn d_len(&self) -> usize {
        self.windows[0].d_len()
    }
}

/// Reads one window: a header row of variable names, then one row per time
/// step. Errors name the file, the 1-based data row and the 1-based column.
pub fn read_window_csv(path: &Path, t_len: usize, names: &[String]) -> CliResult<Window> {
    let at = |row: usize, col: usize, msg: String| {
        CliError::validation(format!("{}: row {row}, column {col}: {msg}", path.display()))
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::validation(format!("{}: bad header: {e}", path.display())))?
        .clone();
    let d_len = names.len();
    if header.len() != d_len {
        return Err(CliError::validation(format!(
            "{}: header has {} columns, expected D={d_len}",
            path.display(),
            header.len()
        )));
    }
    if let Some((i, (h, n))) = header.iter().zip(names).enumerate().find(|(_, (h, n))| h.trim() != n.as_str()) {
        return Err(at(0, i + 1, format!("header {h:?} does not match variable name {n:?}")));
    }
    let mut data = Vec::with_capacity(t_len * d_len);
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| at(row, 0, format!("unreadable record: {e}")))?;
        if record.len() != d_len {
            return Err(at(row, record.len().min(d_len) + 1, format!("expected {d_len} columns, found {}", record.len())));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| at(row, c + 1, format!("non-numeric value {cell:?}")))?;
            if !v.is_finite() {
                return Err(at(row, c + 1, format!("non-finite value {cell:?}")));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows != t_len {
        return Err(CliError::validation(format!(
            "{}: {rows} data rows, expected T={t_len}",
            path.display()
        )));
    }
    Ok(Window::new(t_len, d_len, data)?)
}

/// CSV text for one window with a header row.
pub fn window_csv(window: &Window, names: &[String]) -> String {
    let mut out = names.join(",");
    out.push('\n');
    for t in 0..window.t_len() {
        let cells: Vec<String> = window.row(t).iter().map(f64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn load_manifest(path: &Path) -> CliResult<Dataset> {
    let m: DatasetManifest = read_json(path, "dataset manifest")?;
    if m.windows.is_empty() {
        return Err(CliError::validation(format!("{}: manifest lists no windows", path.display())));
    }
    if m.variable_names.len() != m.d_len {
        return Err(CliError::validation(format!(
            "{}: {} variable names for D={}",
            path.display(),
            m.variable_names.len(),
            m.d_len
        )));
    }
    if let Some(l) = &m.labels {
        if l.len() != m.windows.len() {
            return Err(CliError::validation(format!(
                "{}: {} labels for {} windows",
                path.display(),
                l.len(),
                m.windows.len()
            )));
        }
    }
    let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let read_all = |files: &[PathBuf]| -> CliResult<Vec<Window>> {
        files.iter().map(|f| read_window_csv(&resolve(&base, f), m.t_len, &m.variable_names)).collect()
    };
    let windows = read_all(&m.windows)?;
    let background = match &m.background {
        Some(files) if files.is_empty() => {
            return Err(CliError::validation(format!("{}: background list is empty", path.display())))
        }
        Some(files) => read_all(files)?,
        None => windows.clone(),
    };
    Ok(Dataset { windows, background, variable_names: m.variable_names, labels: m.labels })
}

pub fn generate(spec: &SyntheticSpec) -> CliResult<Dataset> {
    Ok(match spec {
        SyntheticSpec::PlantedBlocks(p) => {
            let planted = planted_blocks(p)?;
            Dataset {
                background: planted.windows.clone(),
                windows: planted.windows,
                variable_names: default_variable_names(p.d),
                labels: None,
            }
        }
        SyntheticSpec::MeanShift(p) => {
            let w = mean_shift(p)?;
            Dataset { windows: vec![w.clone()], background: vec![w], variable_names: default_variable_names(p.d), labels: None }
        }
        SyntheticSpec::PlayerFixture(p) => {
            let f = player_fixture(p)?;
            Dataset {
                variable_names: default_variable_names(f.mu.len()),
                windows: f.targets,
                background: f.background,
                labels: None,
            }
        }
    })
}

pub fn load(source: &DatasetSource) -> CliResult<Dataset> {
    match source {
        DatasetSource::Manifest(path) => load_manifest(path),
        DatasetSource::Synthetic(spec) => generate(spec),
    }
}

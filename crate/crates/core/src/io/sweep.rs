//! Grid sweeps: one run directory per cell plus a summary TSV.
//!
//! A grid is a list of axes, each `key=v1,v2,...`. Cells are enumerated with the first axis
//! outermost and the last axis fastest, so the row order depends only on the grid as written.
//!
//! Summary columns, tab separated:
//! `cell`, one column per axis, `status`, `f1_macro`, `f1_all`, `validity_rate`,
//! `avg_selection`, `d_eff`, `rank95`, `silhouette`, `intra_cosine`, `inter_cosine`,
//! `uniformity`, `error`. Missing values are empty.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::config::ExperimentConfig;
use super::experiment::{run_experiment_cached, TeacherCache};
use super::manifest::RunStatus;
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::geometry::GeometryReport;

pub const SUMMARY_FILE: &str = "summary.tsv";

/// Axis names accepted by a sweep, with the config key each one sets.
const AXES: [(&str, &str); 6] = [
    ("mode", "train.mode"),
    ("beta0", "train.beta0"),
    ("r", "train.r"),
    ("epsilon", "train.epsilon"),
    ("lambda_feat", "train.lambda_feat"),
    ("seed", "train.seed"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub name: String,
    pub values: Vec<String>,
}

impl GridAxis {
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, values) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid axis `{spec}` is not `key=v1,v2`")))?;
        let name = name.trim();
        if !AXES.iter().any(|(a, _)| *a == name) {
            return Err(Error::UnknownKey(format!("grid.{name}")));
        }
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(Error::Config(format!(
                "grid axis `{name}` has an empty value"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            values,
        })
    }

    fn config_key(&self) -> &'static str {
        AXES.iter()
            .find(|(a, _)| *a == self.name)
            .map(|(_, k)| *k)
            .expect("checked on parse")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axes: Vec<GridAxis>,
}

impl Grid {
    pub fn parse(specs: &[String]) -> Result<Self> {
        let axes: Vec<GridAxis> = specs
            .iter()
            .map(|s| GridAxis::parse(s))
            .collect::<Result<_>>()?;
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::Config(format!("grid axis `{}` given twice", a.name)));
            }
        }
        Ok(Self { axes })
    }

    /// Every cell as one value per axis, last axis fastest.
    pub fn cells(&self) -> Vec<Vec<String>> {
        let mut cells = vec![Vec::new()];
        for axis in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|prefix| {
                    axis.values.iter().map(move |v| {
                        let mut c = prefix.clone();
                        c.push(v.clone());
                        c
                    })
                })
                .collect();
        }
        cells
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub cell: String,
    pub values: Vec<String>,
    pub status: RunStatus,
    pub report: Option<EvalReport>,
    pub geometry: Option<GeometryReport>,
    pub error: Option<String>,
}

fn cell_name(index: usize, grid: &Grid, values: &[String]) -> String {
    let mut name = format!("{index:03}");
    for (axis, v) in grid.axes.iter().zip(values) {
        let _ = write!(name, "_{}-{}", axis.name, v.replace(['/', '\\'], "_"));
    }
    name
}

/// Runs every cell in order. A failing cell is recorded and the sweep moves on; only
/// configuration errors in the grid itself and IO errors on the summary abort.
pub fn run_sweep(base: &ExperimentConfig, grid: &Grid, out_dir: &Path) -> Result<Vec<SweepRow>> {
    fs::create_dir_all(out_dir)?;
    let cells = grid.cells();
    let mut configs = Vec::with_capacity(cells.len());
    for values in &cells {
        let mut config = base.clone();
        for (axis, v) in grid.axes.iter().zip(values) {
            config.apply_override(axis.config_key(), v)?;
        }
        configs.push(config);
    }

    let mut cache = TeacherCache::default();
    let mut rows = Vec::with_capacity(cells.len());
    for (i, (values, config)) in cells.into_iter().zip(configs).enumerate() {
        let cell = cell_name(i, grid, &values);
        let dir: PathBuf = out_dir.join(&cell);
        let row = match run_experiment_cached(&config, &dir, &mut cache) {
            Ok(result) => SweepRow {
                cell,
                values,
                status: RunStatus::Completed,
                report: Some(result.report),
                geometry: result.geometry,
                error: None,
            },
            Err(e) => {
                warn!("sweep cell {cell} failed: {e}");
                SweepRow {
                    cell,
                    values,
                    status: match e {
                        Error::Divergence { .. } => RunStatus::Diverged,
                        _ => RunStatus::Failed,
                    },
                    report: None,
                    geometry: None,
                    error: Some(e.to_string()),
                }
            }
        };
        rows.push(row);
    }
    fs::write(out_dir.join(SUMMARY_FILE), summary_tsv(grid, &rows))?;
    Ok(rows)
}

pub fn summary_tsv(grid: &Grid, rows: &[SweepRow]) -> String {
    let mut header = vec!["cell".to_string()];
    header.extend(grid.axes.iter().map(|a| a.name.clone()));
    header.extend(
        [
            "status",
            "f1_macro",
            "f1_all",
            "validity_rate",
            "avg_selection",
            "d_eff",
            "rank95",
            "silhouette",
            "intra_cosine",
            "inter_cosine",
            "uniformity",
            "error",
        ]
        .map(String::from),
    );
    let mut out = header.join("\t");
    out.push('\n');
    let num = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    for row in rows {
        let mut fields = vec![row.cell.clone()];
        fields.extend(row.values.iter().cloned());
        fields.push(
            match row.status {
                RunStatus::Completed => "completed",
                RunStatus::Diverged => "diverged",
                RunStatus::Failed => "failed",
            }
            .to_string(),
        );
        let r = row.report.as_ref();
        fields.push(num(r.map(|r| r.f1_macro)));
        fields.push(num(r.map(|r| r.f1_all)));
        fields.push(num(r.map(|r| r.validity_rate)));
        fields.push(num(r.map(|r| r.avg_selection)));
        let g = row.geometry.as_ref();
        fields.push(num(g.map(|g| g.d_eff)));
        fields.push(g.map_or_else(String::new, |g| g.rank95.to_string()));
        fields.push(num(g.map(|g| g.silhouette)));
        fields.push(num(g.map(|g| g.intra_cosine)));
        fields.push(num(g.map(|g| g.inter_cosine)));
        fields.push(num(g.map(|g| g.uniformity)));
        fields.push(
            row.error
                .as_deref()
                .unwrap_or("")
                .replace(['\t', '\n'], " "),
        );
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_run_last_axis_fastest() {
        let g = Grid::parse(&["mode=static,selective".into(), "seed=1,2,3".into()]).unwrap();
        let cells = g.cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0], vec!["static", "1"]);
        assert_eq!(cells[1], vec!["static", "2"]);
        assert_eq!(cells[3], vec!["selective", "1"]);
        assert_eq!(cell_name(3, &g, &cells[3]), "003_mode-selective_seed-1");
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(matches!(
            GridAxis::parse("bete0=1"),
            Err(Error::UnknownKey(_))
        ));
        assert!(matches!(GridAxis::parse("beta0"), Err(Error::Config(_))));
        assert!(matches!(
            GridAxis::parse("beta0=1,,2"),
            Err(Error::Config(_))
        ));
        assert!(Grid::parse(&["seed=1".into(), "seed=2".into()]).is_err());
    }

    #[test]
    fn summary_marks_failures() {
        let g = Grid::parse(&["r=-0.8".into()]).unwrap();
        let rows = vec![SweepRow {
            cell: "000_r--0.8".into(),
            values: vec!["-0.8".into()],
            status: RunStatus::Diverged,
            report: None,
            geometry: None,
            error: Some("loss\tis nan".into()),
        }];
        let tsv = summary_tsv(&g, &rows);
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 2);
        let cols: Vec<&str> = lines[1].split('\t').collect();
        assert_eq!(cols.len(), lines[0].split('\t').count());
        assert_eq!(cols[2], "diverged");
        assert_eq!(cols.last().copied(), Some("loss is nan"));
    }
}

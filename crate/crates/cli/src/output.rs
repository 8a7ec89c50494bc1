//! CSV, SVG and manifest writers. Every float is written with 17
//! significant digits so outputs round-trip exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// In-memory CSV table flushed to disk in one write.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).map_err(io_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(io_err)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Writes files into the output directory and records their hashes.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("cannot create {}: {e}", root.display())))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(OutputFile {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        log::info!("wrote {}", path.display());
        Ok(())
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        self.write(name, &table.to_bytes()?)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(io_err)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub workers: usize,
    pub k_grid: Vec<usize>,
    pub config: &'a crate::config::ExperimentConfig,
    pub wall_clock_seconds: f64,
    pub passed: bool,
    pub outputs: &'a [OutputFile],
}

/// One curve of a line plot.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Minimal SVG line plot; `log` puts both axes on a log10 scale.
pub fn line_plot_svg(title: &str, x_label: &str, series: &[Series<'_>], log: bool) -> String {
    let (w, h, margin) = (640.0, 420.0, 60.0);
    let tf = |v: f64| if log { v.log10() } else { v };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y)| (tf(x), tf(y))))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let bounds = |f: fn(&(f64, f64)) -> f64| {
        let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) }
    };
    let (x0, x1) = bounds(|p| p.0);
    let (y0, y1) = if log { bounds(|p| p.1) } else { (0.0f64.min(bounds(|p| p.1).0), bounds(|p| p.1).1) };
    let sx = |x: f64| margin + (tf(x) - x0) / (x1 - x0) * (w - 2.0 * margin);
    let sy = |y: f64| h - margin - (tf(y) - y0) / (y1 - y0) * (h - 2.0 * margin);
    let axis = if log { "log10 " } else { "" };
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{margin}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{margin}\" y1=\"{margin}\" x2=\"{margin}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{axis}{x_label}</text>\n",
        w / 2.0,
        h - margin,
        w - margin,
        h - margin,
        h - margin,
        w / 2.0,
        h - 20.0,
    );
    for (j, lab) in [x0, x1].iter().enumerate() {
        let x = margin + j as f64 * (w - 2.0 * margin);
        out.push_str(&format!("<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{lab:.3}</text>\n", h - margin + 16.0));
    }
    for (j, lab) in [y0, y1].iter().enumerate() {
        let y = h - margin - j as f64 * (h - 2.0 * margin);
        out.push_str(&format!("<text x=\"{:.1}\" y=\"{y:.1}\" text-anchor=\"end\">{lab:.3}</text>\n", margin - 4.0));
    }
    for (j, s) in series.iter().enumerate() {
        let color = COLORS[j % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| tf(*x).is_finite() && tf(*y).is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>\n",
            w - margin - 120.0,
            margin + 16.0 * j as f64,
            s.name
        ));
    }
    out.push_str("</svg>\n");
    out
}

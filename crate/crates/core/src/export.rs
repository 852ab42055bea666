//! PNG renders and CSV tables.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::analysis::DetectionReport;
use crate::dataset::Labels;
use crate::error::{Error, Result};
use crate::qi2::Shlqi2Grid;

/// Grayscale raster of the grid: k runs left to right, bins bottom to top,
/// each cell `scale × scale` pixels with intensity `round(value · 255)`.
pub fn heatmap_image(grid: &Shlqi2Grid, scale: u32) -> Result<GrayImage> {
    if scale == 0 {
        return Err(Error::Config("scale must be at least 1".into()));
    }
    let (w, h) = (grid.k_max as u32, grid.bins() as u32);
    let mut img = GrayImage::new(w * scale, h * scale);
    for bin in 0..grid.bins() {
        let y0 = (h - 1 - bin as u32) * scale;
        for k in 1..=grid.k_max {
            let px = Luma([intensity(grid.value(bin, k))]);
            let x0 = (k as u32 - 1) * scale;
            for dy in 0..scale {
                for dx in 0..scale {
                    img.put_pixel(x0 + dx, y0 + dy, px);
                }
            }
        }
    }
    Ok(img)
}

pub fn intensity(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn render_heatmap(grid: &Shlqi2Grid, path: impl AsRef<Path>, scale: u32) -> Result<()> {
    let path = path.as_ref();
    let img = heatmap_image(grid, scale)?;
    let bytes = png_bytes(&img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn png_bytes(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// PNG of a row-major image vector, min-max scaled to 0..=255.
pub fn thumbnail_png(values: &[f64], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            actual: values.len(),
        });
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img = GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        let v = values[y as usize * cols + x as usize];
        Luma([intensity((v - lo) / span)])
    });
    png_bytes(&img)
}

/// One row of a detector table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: usize,
    pub label: String,
    pub trigger_k: usize,
    pub trigger_value: f64,
}

pub fn report_rows(report: &DetectionReport, labels: Option<&Labels>) -> Vec<ReportRow> {
    report
        .flagged
        .iter()
        .map(|f| ReportRow {
            id: f.id,
            label: labels.map(|l| l.name(f.id).to_string()).unwrap_or_default(),
            trigger_k: f.trigger.0,
            trigger_value: f.trigger.1,
        })
        .collect()
}

pub fn export_report_csv(
    report: &DetectionReport,
    labels: Option<&Labels>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "label", "trigger_k", "trigger_value"])?;
    for row in report_rows(report, labels) {
        w.write_record([
            row.id.to_string(),
            row.label,
            row.trigger_k.to_string(),
            row.trigger_value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

pub fn export_counts_csv(counts: &[(usize, usize)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "count"])?;
    for (k, c) in counts {
        w.write_record([k.to_string(), c.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

//! CSV tables and PNG panels for analysis results.

use std::path::Path;

use super::{AblationReport, AnalysisError, EvalReport, LagScan, MaskClass, SegmentationReport};
use crate::datagen::INPUT_DIM;
use crate::render::{unit_floats_to_bytes, write_rgb_png};

/// Names of the nine input elements, in input order.
pub const INPUT_NAMES: [&str; INPUT_DIM] = ["x", "y", "theta", "s1", "s2", "s3", "s4", "s5", "s6"];

pub fn write_eval_csv(report: &EvalReport, path: &Path) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["batch", "t", "mse", "contact"])?;
    for f in &report.frames {
        w.write_record([
            f.batch.to_string(),
            f.t.to_string(),
            f.mse.to_string(),
            (f.contact as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ablation_csv(report: &AblationReport, path: &Path) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["input", "delta_mse"])?;
    for (name, d) in INPUT_NAMES.iter().zip(&report.deltas) {
        w.write_record([name.to_string(), d.to_string()])?;
    }
    w.write_record(["all".to_string(), report.all_delta.to_string()])?;
    w.flush()?;
    Ok(())
}

pub fn write_lag_csv(scan: &LagScan, path: &Path) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lag", "mse", "frames"])?;
    for p in &scan.points {
        w.write_record([p.lag.to_string(), p.mse.to_string(), p.frames.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_segmentation_csv(report: &SegmentationReport, path: &Path) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["channel".to_string()];
    header.extend(MaskClass::ALL.iter().map(|c| c.name().to_string()));
    w.write_record(&header)?;
    for (c, row) in report.iou.iter().enumerate() {
        let mut rec = vec![c.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Grid of equally sized RGB float images, one row per entry, separated by 1 px white lines.
pub fn write_panel_png(path: &Path, width: usize, height: usize, rows: &[Vec<Vec<f32>>]) -> Result<(), AnalysisError> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    if cols == 0 {
        return Err(AnalysisError::Shape("panel has no images".into()));
    }
    let gap = 1;
    let pw = cols * width + (cols - 1) * gap;
    let ph = rows.len() * height + (rows.len() - 1) * gap;
    let mut canvas = vec![255u8; pw * ph * 3];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            if img.len() != width * height * 3 {
                return Err(AnalysisError::Shape(format!("panel image {r},{c} has {} values", img.len())));
            }
            let bytes = unit_floats_to_bytes(img);
            for y in 0..height {
                let dst = ((r * (height + gap) + y) * pw + c * (width + gap)) * 3;
                canvas[dst..dst + width * 3].copy_from_slice(&bytes[y * width * 3..(y + 1) * width * 3]);
            }
        }
    }
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_rgb_png(file, pw, ph, &canvas)?;
    Ok(())
}

/// Grayscale channel maps as a panel, `per_row` maps per row.
pub fn write_maps_png(path: &Path, report: &SegmentationReport, per_row: usize) -> Result<(), AnalysisError> {
    let rows: Vec<Vec<Vec<f32>>> = report
        .maps
        .chunks(per_row.max(1))
        .map(|chunk| {
            chunk
                .iter()
                .map(|m| m.iter().flat_map(|&v| [v, v, v]).collect())
                .collect()
        })
        .collect();
    write_panel_png(path, report.width, report.height, &rows)
}

//! Tabular (CSV) and sidecar (JSON) output formats.

use std::io::Write;

use serde::Serialize;

use crate::dataset::{fmt_scalar, Dataset};
use crate::error::Result;
use crate::frame::FrameField;
use crate::inference::ConfidenceSet;
use crate::nbb::{ConstructedData, NormalBundle};
use crate::ridge::RidgePoint;
use crate::scalar::Scalar;

/// `idx, r_1..r_n, lambda_1..lambda_n, converged`.
pub fn write_ridge_csv<T: Scalar, W: Write>(ridge: &[RidgePoint<T>], writer: W) -> Result<()> {
    let n = ridge.first().map_or(0, |r| r.position.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["idx".to_string()];
    header.extend((1..=n).map(|j| format!("r_{j}")));
    header.extend((1..=n).map(|j| format!("lambda_{j}")));
    header.push("converged".into());
    w.write_record(&header)?;
    for (i, r) in ridge.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(r.position.iter().map(|v| fmt_scalar(*v)));
        rec.extend(r.eigenvalues.iter().map(|v| fmt_scalar(*v)));
        rec.push(u8::from(r.converged()).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Frame sidecar: one row-major n x c block per point.
#[derive(Debug, Clone, Serialize)]
pub struct FrameSidecar {
    pub n: usize,
    pub c: usize,
    pub layout: &'static str,
    /// Whether frames are smooth-aligned or raw Hessian eigenvectors.
    pub aligned: bool,
    pub points: Vec<FrameEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameEntry {
    pub idx: usize,
    pub status: crate::ridge::RidgeStatus,
    pub frame: Vec<f64>,
}

fn row_major<T: Scalar>(m: &nalgebra::DMatrix<T>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| m[(i, j)].as_f64()).collect()
}

/// Raw bottom-c eigenframes of every ridge point.
pub fn ridge_frames<T: Scalar>(ridge: &[RidgePoint<T>]) -> FrameSidecar {
    let (n, c) = ridge.first().map_or((0, 0), |r| r.frame_vc.shape());
    FrameSidecar {
        n,
        c,
        layout: "row_major",
        aligned: false,
        points: ridge
            .iter()
            .enumerate()
            .map(|(i, r)| FrameEntry {
                idx: i,
                status: r.status,
                frame: row_major(&r.frame_vc),
            })
            .collect(),
    }
}

/// Aligned frames of the retained points of a bundle.
pub fn bundle_frames<T: Scalar>(bundle: &NormalBundle<T>) -> FrameSidecar {
    let field: &FrameField<T> = &bundle.frames;
    let (n, c) = field.frames.first().map_or((0, 0), |f| f.shape());
    FrameSidecar {
        n,
        c,
        layout: "row_major",
        aligned: true,
        points: bundle
            .retained
            .iter()
            .zip(&field.frames)
            .map(|(&i, f)| FrameEntry {
                idx: i,
                status: bundle.ridge[i].status,
                frame: row_major(f),
            })
            .collect(),
    }
}

/// `x_1..x_n, parent_idx, donor_idx`.
pub fn write_constructed_csv<T: Scalar, W: Write>(data: &ConstructedData<T>, writer: W) -> Result<()> {
    let n = data.points.ncols();
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=n).map(|j| format!("x_{j}")).collect();
    header.push("parent_idx".into());
    header.push("donor_idx".into());
    w.write_record(&header)?;
    for r in 0..data.len() {
        let mut rec: Vec<String> = data.points.row(r).iter().map(|v| fmt_scalar(*v)).collect();
        rec.push(data.parent_ridge_index[r].to_string());
        rec.push(data.donor_index[r].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `ridge_idx, m_1..m_c, radius`.
pub fn write_confidence_csv<T: Scalar, W: Write>(set: &ConfidenceSet<T>, writer: W) -> Result<()> {
    let c = set.disks.first().map_or(0, |d| d.mode.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["ridge_idx".to_string()];
    header.extend((1..=c).map(|j| format!("m_{j}")));
    header.push("radius".into());
    w.write_record(&header)?;
    for d in &set.disks {
        let mut rec = vec![d.ridge_index.to_string()];
        rec.extend(d.mode.iter().map(|v| fmt_scalar(*v)));
        rec.push(fmt_scalar(d.radius));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Original rows followed by constructed rows, with a `provenance` column
/// (`original` or `nbb`).
pub fn write_augmented_csv<T: Scalar, W: Write>(source: &Dataset<T>, constructed: &ConstructedData<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = source.columns().to_vec();
    header.push("provenance".into());
    w.write_record(&header)?;
    for row in source.points().row_iter() {
        let mut rec: Vec<String> = row.iter().map(|v| fmt_scalar(*v)).collect();
        rec.push("original".into());
        w.write_record(&rec)?;
    }
    for row in constructed.points.row_iter() {
        let mut rec: Vec<String> = row.iter().map(|v| fmt_scalar(*v)).collect();
        rec.push("nbb".into());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON followed by a newline.
pub fn write_json<S: Serialize, W: Write>(value: &S, mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}

//! Solution-quality metrics and report/field export helpers.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::FieldTensor;

/// Per-BVP and aggregate error summary. The aggregate is the volume-averaged
/// error: the mean over BVPs of the per-BVP in-domain pixel RMS.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalReport {
    pub per_bvp_rms: Vec<f64>,
    pub per_bvp_range_rms: Vec<f64>,
    pub has_neumann: Vec<bool>,
    pub aggregate: f64,
    pub aggregate_range_normalized: f64,
    pub aggregate_with_neumann: Option<f64>,
    pub aggregate_dirichlet_only: Option<f64>,
}

/// Pixel RMS between prediction and reference over counted pixels (mask
/// entry 1), one entry per BVP, plus the range-normalized variant (RMS
/// divided by the reference field's counted value range).
pub fn eval_l2(
    predictions: &[FieldTensor<f64>],
    references: &[FieldTensor<f64>],
    masks: &[FieldTensor<f64>],
    has_neumann: &[bool],
) -> Result<EvalReport> {
    if predictions.len() != references.len()
        || predictions.len() != masks.len()
        || predictions.len() != has_neumann.len()
    {
        return Err(Error::Dimension("eval_l2 input lists differ in length".into()));
    }
    if predictions.is_empty() {
        return Err(Error::Dimension("eval_l2 needs at least one BVP".into()));
    }
    let mut per_bvp_rms = Vec::with_capacity(predictions.len());
    let mut per_bvp_range = Vec::with_capacity(predictions.len());
    for ((pred, reference), mask) in predictions.iter().zip(references).zip(masks) {
        if pred.shape() != reference.shape() {
            return Err(Error::Dimension(format!(
                "prediction shape {:?} != reference shape {:?}",
                pred.shape(),
                reference.shape()
            )));
        }
        let sh = pred.shape();
        let (n, dof) = (sh[1], sh[3]);
        let mut acc = 0.0;
        let mut count = 0usize;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                for c in 0..dof {
                    if mask.at4(0, i, j, c) < 0.5 {
                        continue;
                    }
                    let r = reference.at4(0, i, j, c);
                    let d = pred.at4(0, i, j, c) - r;
                    acc += d * d;
                    count += 1;
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
            }
        }
        if count == 0 {
            return Err(Error::Dimension("BVP without in-domain pixels".into()));
        }
        let rms = (acc / count as f64).sqrt();
        per_bvp_rms.push(rms);
        let range = (hi - lo).max(1e-30);
        per_bvp_range.push(rms / range);
    }
    let mean = |vals: &[f64]| vals.iter().sum::<f64>() / vals.len() as f64;
    let split = |with: bool| {
        let vals: Vec<f64> = per_bvp_rms
            .iter()
            .zip(has_neumann)
            .filter(|(_, &h)| h == with)
            .map(|(&v, _)| v)
            .collect();
        (!vals.is_empty()).then(|| mean(&vals))
    };
    Ok(EvalReport {
        aggregate: mean(&per_bvp_rms),
        aggregate_range_normalized: mean(&per_bvp_range),
        aggregate_with_neumann: split(true),
        aggregate_dirichlet_only: split(false),
        per_bvp_rms,
        per_bvp_range_rms: per_bvp_range,
        has_neumann: has_neumann.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Pgm,
}

/// Write one component of a field as CSV (row-major with a header) or as a
/// 16-bit min-max scaled grayscale PGM image.
pub fn export_field(
    field: &FieldTensor<f64>,
    component: usize,
    path: &Path,
    format: ExportFormat,
) -> Result<()> {
    let sh = field.shape();
    if sh.len() != 4 || component >= sh[3] {
        return Err(Error::Dimension(format!(
            "export needs a (1, n, n, dof) field and a valid component, got {sh:?} / {component}"
        )));
    }
    let (n, dof) = (sh[1], sh[3]);
    match format {
        ExportFormat::Csv => {
            let mut out = String::new();
            out.push_str(&format!("# n={n} dof={dof} component={component}\n"));
            for i in 0..n {
                let row: Vec<String> = (0..n)
                    .map(|j| format!("{:.17e}", field.at4(0, i, j, component)))
                    .collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            std::fs::write(path, out)?;
        }
        ExportFormat::Pgm => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..n {
                for j in 0..n {
                    let v = field.at4(0, i, j, component);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            let span = (hi - lo).max(1e-30);
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(f, "P5")?;
            writeln!(f, "{n} {n}")?;
            writeln!(f, "65535")?;
            for i in 0..n {
                for j in 0..n {
                    let v = field.at4(0, i, j, component);
                    let g = (((v - lo) / span) * 65535.0).round() as u16;
                    f.write_all(&g.to_be_bytes())?;
                }
            }
        }
    }
    Ok(())
}

/// Parse a CSV written by `export_field` back into a (1, n, n, 1) field.
pub fn import_field_csv(path: &Path) -> Result<FieldTensor<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::BundleFormat(format!("bad CSV number: {e}")))?);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::BundleFormat("CSV field must be square".into()));
    }
    let mut data = Vec::with_capacity(n * n);
    for row in rows {
        data.extend(row);
    }
    FieldTensor::new(vec![1, n, n, 1], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_mask(n: usize) -> FieldTensor<f64> {
        FieldTensor::filled(&[1, n, n, 1], 1.0)
    }

    #[test]
    fn identical_fields_have_zero_error() {
        let f = FieldTensor::from_fn(&[1, 4, 4, 1], |i| i as f64);
        let report = eval_l2(&[f.clone()], &[f], &[full_mask(4)], &[false]).unwrap();
        assert_eq!(report.aggregate, 0.0);
        assert_eq!(report.aggregate_dirichlet_only, Some(0.0));
        assert_eq!(report.aggregate_with_neumann, None);
    }

    #[test]
    fn constant_offset_gives_offset_rms() {
        let f = FieldTensor::from_fn(&[1, 4, 4, 1], |i| i as f64);
        let g = f.map(|v| v + 0.125);
        let report = eval_l2(&[g], &[f], &[full_mask(4)], &[true]).unwrap();
        assert!((report.aggregate - 0.125).abs() < 1e-15);
    }

    #[test]
    fn aggregate_is_mean_of_per_bvp_values() {
        // Hand-computed toy set: deviations of 0.1, 0.2, 0.4 everywhere.
        let base = FieldTensor::from_fn(&[1, 3, 3, 1], |i| (i as f64) * 0.5);
        let preds: Vec<FieldTensor<f64>> = [0.1, 0.2, 0.4]
            .iter()
            .map(|&d| base.map(|v| v + d))
            .collect();
        let refs = vec![base.clone(), base.clone(), base.clone()];
        let dir = vec![full_mask(3), full_mask(3), full_mask(3)];
        let report = eval_l2(&preds, &refs, &dir, &[false, true, true]).unwrap();
        let expected = (0.1 + 0.2 + 0.4) / 3.0;
        assert!((report.aggregate - expected).abs() < 1e-15);
        assert!((report.aggregate_with_neumann.unwrap() - 0.3).abs() < 1e-15);
        assert!((report.aggregate_dirichlet_only.unwrap() - 0.1).abs() < 1e-15);
        // Range of the reference is 4.0: range-normalized per-BVP errors.
        assert!((report.per_bvp_range_rms[0] - 0.1 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn masked_pixels_are_excluded() {
        let mut mask = full_mask(3);
        for j in 0..3 {
            let idx = mask.idx4(0, 0, j, 0);
            mask.data_mut()[idx] = 0.0;
        }
        let reference = FieldTensor::zeros(&[1, 3, 3, 1]);
        let mut pred = FieldTensor::zeros(&[1, 3, 3, 1]);
        // Large error only on the masked row: must not count.
        for j in 0..3 {
            let idx = pred.idx4(0, 0, j, 0);
            pred.data_mut()[idx] = 100.0;
        }
        let report = eval_l2(&[pred], &[reference], &[mask], &[false]).unwrap();
        assert_eq!(report.aggregate, 0.0);
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let dir = std::env::temp_dir().join(format!("eval-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.csv");
        let f = FieldTensor::from_fn(&[1, 5, 5, 1], |i| (i as f64 * 0.731).sin());
        export_field(&f, 0, &path, ExportFormat::Csv).unwrap();
        let g = import_field_csv(&path).unwrap();
        let diff = f.zip(&g, |a, b| a - b).max_abs();
        assert!(diff == 0.0, "round trip error {diff}");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn pgm_preserves_argmax_pixel() {
        let dir = std::env::temp_dir().join(format!("eval-pgm-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.pgm");
        let f = FieldTensor::from_fn(&[1, 4, 4, 1], |i| ((i * 7) % 11) as f64);
        export_field(&f, 0, &path, ExportFormat::Pgm).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Header: "P5\n4 4\n65535\n", then 32 bytes of big-endian u16.
        let header_len = bytes.len() - 32;
        let pix: Vec<u16> = bytes[header_len..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        let argmax_f = (0..16).max_by(|&a, &b| {
            f.data()[a].partial_cmp(&f.data()[b]).unwrap()
        });
        let argmax_p = (0..16).max_by_key(|&i| pix[i]);
        assert_eq!(argmax_f, argmax_p);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn two_by_two_csv_is_deterministic() {
        let dir = std::env::temp_dir().join(format!("eval-csv2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.csv");
        let f = FieldTensor::new(vec![1, 2, 2, 1], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        export_field(&f, 0, &path, ExportFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("# n=2"));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

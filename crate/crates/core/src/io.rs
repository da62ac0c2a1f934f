//! CSV dumps of coefficients, run logs, curves, histograms and datasets.

use std::path::Path;

use nalgebra::DMatrix;

use crate::distill::EpochRecord;
use crate::error::{shape_err, AwdError, Result};
use crate::evalkit::WaveletCurve;
use crate::peakcount::PeakHistogram;
use crate::synth::Dataset;
use crate::transform::{WaveletCoeffs, WaveletCoeffs2d};
use crate::trim::AttributionMap;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// One row per coefficient: `level, band, index, value[, attribution]`.
/// The approximation band is reported at level J.
pub fn write_coeffs(path: impl AsRef<Path>, coeffs: &WaveletCoeffs, attribution: Option<&AttributionMap>) -> Result<()> {
    if let Some(a) = attribution {
        if !coeffs.same_layout(a) {
            return shape_err("attribution map layout differs from its coefficients");
        }
    }
    let mut w = writer(path.as_ref())?;
    let mut header = vec!["level", "band", "index", "value"];
    if attribution.is_some() {
        header.push("attribution");
    }
    w.write_record(&header)?;
    type Band<'a> = (usize, &'a str, &'a [f64], Option<&'a [f64]>);
    let mut bands: Vec<Band> =
        vec![(coeffs.levels(), "approx", &coeffs.approx, attribution.map(|a| a.approx.as_slice()))];
    for j in (0..coeffs.levels()).rev() {
        bands.push((j + 1, "detail", &coeffs.details[j], attribution.map(|a| a.details[j].as_slice())));
    }
    for (level, band, values, attr) in bands {
        for (i, v) in values.iter().enumerate() {
            let mut row = vec![level.to_string(), band.to_string(), i.to_string(), v.to_string()];
            if let Some(a) = attr {
                row.push(a[i].to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per coefficient: `level, band, row, col, value`.
pub fn write_coeffs2d(path: impl AsRef<Path>, coeffs: &WaveletCoeffs2d) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["level", "band", "row", "col", "value"])?;
    let mut bands = vec![(coeffs.levels(), "LL", &coeffs.approx)];
    for j in (0..coeffs.levels()).rev() {
        for (name, m) in ["LH", "HL", "HH"].into_iter().zip(&coeffs.details[j]) {
            bands.push((j + 1, name, m));
        }
    }
    for (level, band, m) in bands {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                w.write_record([level.to_string(), band.to_string(), r.to_string(), c.to_string(), m[(r, c)].to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-epoch loss terms of one distillation run.
pub fn write_run_log(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record([
        "epoch", "reconstruction", "sparsity", "sum_h", "sum_g", "unit_norm", "cmf", "shift_orth", "interpretation", "total",
    ])?;
    for r in history {
        let l = &r.loss;
        let p = &l.wavelet;
        w.write_record([
            r.epoch.to_string(),
            l.reconstruction.to_string(),
            p.sparsity.to_string(),
            p.sum_h.to_string(),
            p.sum_g.to_string(),
            p.unit_norm.to_string(),
            p.cmf.to_string(),
            p.shift_orth.to_string(),
            l.interpretation.to_string(),
            l.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two columns `t, value`.
pub fn write_curve(path: impl AsRef<Path>, curve: &WaveletCurve) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["t", "value"])?;
    for (t, v) in curve.grid.iter().zip(&curve.values) {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per bin: `label, bin_lo, bin_hi, count`.
pub fn write_histograms(path: impl AsRef<Path>, rows: &[(String, PeakHistogram)]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["label", "bin_lo", "bin_hi", "count"])?;
    for (label, h) in rows {
        for (k, c) in h.counts.iter().enumerate() {
            w.write_record([label.clone(), h.bin_edges[k].to_string(), h.bin_edges[k + 1].to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Plain matrix, one CSV row per matrix row, no header.
pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path.as_ref())?;
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `x0 .. x{d-1}, y`.
pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dim = data.xs.first().map_or(0, |x| x.len());
    let mut w = writer(path.as_ref())?;
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (x, y) in data.xs.iter().zip(&data.ys) {
        if x.len() != dim {
            return shape_err("dataset rows differ in length");
        }
        w.write_record(x.iter().chain(std::iter::once(y)).map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let width = r.headers()?.len();
    if width < 2 {
        return shape_err("dataset needs at least one x column and a y column");
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| AwdError::InvalidArgument(format!("bad number {s:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        ys.push(vals[width - 1]);
        xs.push(vals[..width - 1].to_vec());
    }
    Ok(Dataset { xs, ys })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::standard_bank;
    use crate::transform::{dwt1d, TransformConfig};

    #[test]
    fn dataset_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let d = Dataset { xs: vec![vec![0.1, -1.0 / 3.0], vec![1e-300, 2.5]], ys: vec![std::f64::consts::PI, -0.0] };
        write_dataset(&p, &d).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), d);
    }

    #[test]
    fn coeff_dump_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let c = dwt1d(&x, &standard_bank("haar").unwrap(), TransformConfig::new(2).unwrap()).unwrap();
        write_coeffs(&p, &c, None).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "level,band,index,value");
        assert_eq!(lines.len(), 17);
        assert!(lines[1].starts_with("2,approx,0,"));
        assert!(lines[5].starts_with("2,detail,0,"));
        assert!(lines[9].starts_with("1,detail,0,"));
    }
}

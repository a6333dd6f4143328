//! Error metrics and evaluation reports.

use std::fmt::Write as _;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::io::KeyValues;
use crate::recon::reconstruct;
use crate::tensor::{Real, Tensor};

/// Dynamic range of a normalised fringe pattern, used as the PSNR peak.
pub const PSNR_PEAK: f64 = 2.0;
/// Reported PSNR for identical images (finite stand-in for +inf).
pub const PSNR_CAP: f64 = 999.0;
/// Label of the uncorrected-input baseline row.
pub const INPUT_ROW: &str = "x (input)";

fn diffs<'a, T: Real>(a: &'a Tensor<T>, b: &'a Tensor<T>) -> Result<impl Iterator<Item = f64> + 'a> {
    a.check_same_dims(b)?;
    Ok(a.data().iter().zip(b.data()).map(|(&p, &q)| (p - q).to_f64().unwrap_or(f64::NAN)))
}

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(diffs(a, b)?.map(|d| d * d).sum::<f64>() / a.len() as f64)
}

pub fn mae<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(diffs(a, b)?.map(f64::abs).sum::<f64>() / a.len() as f64)
}

/// `10 log10(peak² / mse)`, or [`PSNR_CAP`] when `mse == 0`.
pub fn psnr_from_mse(mse: f64, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::param(format!("PSNR peak must be positive, got {peak}")));
    }
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    psnr_from_mse(mse(a, b)?, peak)
}

/// `(σ / |μ|)²` with the population standard deviation.
pub fn cv_squared(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::param("CV² needs at least two values"));
    }
    let (mean, var) = mean_var(values);
    if mean == 0.0 {
        return Err(Error::UndefinedMetric("CV² of values with zero mean".into()));
    }
    Ok(var / (mean * mean))
}

/// Mean and population variance.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Errors of one image against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMetrics {
    pub mse: f64,
    pub mae: f64,
    pub psnr: f64,
}

pub fn image_metrics(pred: &Tensor<f64>, truth: &Tensor<f64>) -> Result<ImageMetrics> {
    let m = mse(pred, truth)?;
    Ok(ImageMetrics { mse: m, mae: mae(pred, truth)?, psnr: psnr_from_mse(m, PSNR_PEAK)? })
}

/// Mean, population variance and CV² of one metric column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub variance: f64,
    /// `None` when undefined (fewer than two images or zero mean).
    pub cv2: Option<f64>,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Aggregate {
        let (mean, variance) = mean_var(values);
        Aggregate { mean, variance, cv2: cv_squared(values).ok() }
    }
}

/// Per-image metrics of one model (or the input baseline) over the test scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub images: Vec<ImageMetrics>,
}

impl ReportRow {
    fn column(&self, f: impl Fn(&ImageMetrics) -> f64) -> Vec<f64> {
        self.images.iter().map(f).collect()
    }

    pub fn mse(&self) -> Aggregate {
        Aggregate::of(&self.column(|m| m.mse))
    }

    pub fn mae(&self) -> Aggregate {
        Aggregate::of(&self.column(|m| m.mae))
    }

    pub fn psnr(&self) -> Aggregate {
        Aggregate::of(&self.column(|m| m.psnr))
    }
}

/// Accuracy/precision table: the input baseline row followed by one row per model.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub scenario: String,
    pub stride: usize,
    pub peak: f64,
    pub scenes: Vec<String>,
    pub rows: Vec<ReportRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".to_string(), |v| format!("{v:.4}"))
}

fn join(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

fn split_f64(s: &str, key: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|v| v.parse().map_err(|_| Error::Config(format!("bad number '{v}' in '{key}'"))))
        .collect()
}

impl MetricReport {
    /// Tab-separated table; MSE, MAE and PSNR are shown in units of 10⁻², 10⁻¹ and 10¹.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# scenario={} stride={} psnr_peak={} cv=population images={}",
            self.scenario,
            self.stride,
            self.peak,
            self.scenes.len()
        );
        out.push_str("model\tMSE(x1e-2)\tMAE(x1e-1)\tPSNR(x1e1)\tCV2_MSE\tCV2_MAE\n");
        for row in &self.rows {
            let (mse, mae, psnr) = (row.mse(), row.mae(), row.psnr());
            let _ = writeln!(
                out,
                "{}\t{:.3}\t{:.3}\t{:.3}\t{}\t{}",
                row.model,
                mse.mean / 1e-2,
                mae.mean / 1e-1,
                psnr.mean / 1e1,
                fmt_opt(mse.cv2),
                fmt_opt(mae.cv2)
            );
        }
        out
    }

    /// Lossless key=value blocks: a header block, then one block per row.
    pub fn to_key_values(&self) -> String {
        let mut head = KeyValues::new();
        head.set("scenario", &self.scenario);
        head.set("stride", self.stride);
        head.set("psnr_peak", format!("{:?}", self.peak));
        head.set("cv", "population");
        head.set("scenes", self.scenes.join(","));
        head.set("rows", self.rows.len());
        let mut out = head.to_string();
        for row in &self.rows {
            let mut kv = KeyValues::new();
            kv.set("model", &row.model);
            kv.set("mse", join(row.images.iter().map(|m| m.mse)));
            kv.set("mae", join(row.images.iter().map(|m| m.mae)));
            kv.set("psnr", join(row.images.iter().map(|m| m.psnr)));
            let (mse, mae) = (row.mse(), row.mae());
            kv.set("mse_mean", format!("{:?}", mse.mean));
            kv.set("mae_mean", format!("{:?}", mae.mean));
            kv.set("psnr_mean", format!("{:?}", row.psnr().mean));
            kv.set("mse_cv2", fmt_opt(mse.cv2));
            kv.set("mae_cv2", fmt_opt(mae.cv2));
            out.push_str("[row]\n");
            out.push_str(&kv.to_string());
        }
        out
    }

    pub fn parse_key_values(text: &str) -> Result<MetricReport> {
        let mut blocks = text.split("[row]\n");
        let head = KeyValues::parse(blocks.next().unwrap_or(""))?;
        let scenes: Vec<String> = match head.require("scenes")? {
            "" => Vec::new(),
            s => s.split(',').map(str::to_string).collect(),
        };
        let mut rows = Vec::new();
        for block in blocks {
            let kv = KeyValues::parse(block)?;
            let mse = split_f64(kv.require("mse")?, "mse")?;
            let mae = split_f64(kv.require("mae")?, "mae")?;
            let psnr = split_f64(kv.require("psnr")?, "psnr")?;
            if mse.len() != scenes.len() || mae.len() != scenes.len() || psnr.len() != scenes.len() {
                return Err(Error::Config("metric columns do not match the scene list".into()));
            }
            let images = (0..scenes.len())
                .map(|i| ImageMetrics { mse: mse[i], mae: mae[i], psnr: psnr[i] })
                .collect();
            rows.push(ReportRow { model: kv.require("model")?.to_string(), images });
        }
        let expected: usize = head.parsed("rows")?.unwrap_or(rows.len());
        if expected != rows.len() {
            return Err(Error::Config(format!("report announces {expected} rows, found {}", rows.len())));
        }
        Ok(MetricReport {
            scenario: head.require("scenario")?.to_string(),
            stride: head.parsed("stride")?.unwrap_or(0),
            peak: head.parsed("psnr_peak")?.unwrap_or(PSNR_PEAK),
            scenes,
            rows,
        })
    }
}

/// One held-out scene: name, corrupted input and clean ground truth.
#[derive(Debug, Clone)]
pub struct TestScene {
    pub name: String,
    pub input: Tensor<f64>,
    pub truth: Option<Tensor<f64>>,
}

/// Reconstructs every test scene with every model and tabulates the errors
/// against ground truth, preceded by the input baseline row.
pub fn eval_report(models: &[(String, Checkpoint)], scenes: &[TestScene], stride: usize, scenario: &str) -> Result<MetricReport> {
    if let Some((_, first)) = models.first() {
        let dims = first.model.input_dims();
        if let Some((name, _)) = models.iter().find(|(_, c)| c.model.input_dims() != dims) {
            return Err(Error::param(format!("model '{name}' uses a different patch size")));
        }
    }
    let mut truths = Vec::with_capacity(scenes.len());
    for s in scenes {
        let truth = s
            .truth
            .as_ref()
            .ok_or_else(|| Error::param(format!("scene '{}' has no ground truth", s.name)))?;
        truths.push(truth);
    }
    let baseline = scenes
        .iter()
        .zip(&truths)
        .map(|(s, t)| image_metrics(&s.input, t))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = vec![ReportRow { model: INPUT_ROW.to_string(), images: baseline }];
    for (name, ck) in models {
        let images = scenes
            .iter()
            .zip(&truths)
            .map(|(s, t)| image_metrics(&reconstruct(&ck.model, &ck.store, &s.input, stride)?.image, t))
            .collect::<Result<Vec<_>>>()?;
        rows.push(ReportRow { model: name.clone(), images });
    }
    Ok(MetricReport {
        scenario: scenario.to_string(),
        stride,
        peak: PSNR_PEAK,
        scenes: scenes.iter().map(|s| s.name.clone()).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn basic_values() {
        let a = t(&[0.0, 1.0, 2.0]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 0.5);
        assert_eq!(mse(&a, &b).unwrap(), 0.25);
        assert_eq!(mae(&a, &b).unwrap(), 0.5);
        assert!(mse(&a, &t(&[1.0])).is_err());
    }

    #[test]
    fn psnr_identities() {
        assert_eq!(psnr_from_mse(4.0, 2.0).unwrap(), 0.0);
        let d = psnr_from_mse(0.01, 2.0).unwrap() - psnr_from_mse(0.02, 2.0).unwrap();
        assert!((d - 3.0103).abs() < 1e-4);
        assert_eq!(psnr_from_mse(0.0, 2.0).unwrap(), PSNR_CAP);
        assert!(psnr_from_mse(1.0, 0.0).is_err());
    }

    #[test]
    fn cv_examples() {
        assert_eq!(cv_squared(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cv_squared(&[1.0, 3.0]).unwrap(), 0.25);
        assert!(matches!(cv_squared(&[1.0, -1.0]), Err(Error::UndefinedMetric(_))));
        assert!(cv_squared(&[1.0]).is_err());
    }

    #[test]
    fn report_round_trip_and_baseline() {
        let truth = t(&[1.0, 1.5, 0.5, 1.0]);
        let scenes: Vec<TestScene> = (0..3)
            .map(|i| TestScene {
                name: format!("s{i}"),
                input: truth.map(|v| v + 0.1 * i as f64),
                truth: Some(truth.clone()),
            })
            .collect();
        let rep = eval_report(&[], &scenes, 4, "gaussian").unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.rows[0].model, INPUT_ROW);
        assert_eq!(rep.rows[0].images[0].mae, 0.0);
        let maes: Vec<f64> = rep.rows[0].images.iter().map(|m| m.mae).collect();
        assert!((rep.rows[0].mae().mean - maes.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        let back = MetricReport::parse_key_values(&rep.to_key_values()).unwrap();
        assert_eq!(back, rep);
        assert!(rep.to_tsv().contains("x (input)\t"));

        let missing = vec![TestScene { name: "m".into(), input: truth.clone(), truth: None }];
        assert!(matches!(eval_report(&[], &missing, 4, "g"), Err(Error::Parameter(_))));
    }
}

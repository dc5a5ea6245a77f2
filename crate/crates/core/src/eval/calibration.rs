//! Calibration curves and kernel density estimates of predicted
//! probabilities.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_SPAN: f64 = 0.75;
pub const LOESS_POINTS: usize = 101;
pub const KDE_POINTS: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    Binned { bins: usize },
    Loess { span: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub predicted: f64,
    pub observed: f64,
    /// Samples in the bin; for LOESS, samples in the local window.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub method: CalibrationMethod,
    pub points: Vec<CalibrationPoint>,
}

impl CalibrationCurve {
    /// Largest `|predicted − observed|` over the curve.
    pub fn max_deviation(&self) -> f64 {
        self.points
            .iter()
            .map(|p| (p.predicted - p.observed).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["predicted", "observed", "count"])?;
        for p in &self.points {
            w.write_record([p.predicted.to_string(), p.observed.to_string(), p.count.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn check_inputs(y_true: &[u8], probs: &[f64]) -> Result<()> {
    if y_true.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: probs.len(),
        });
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

pub fn calibration_curve(y_true: &[u8], probs: &[f64], method: CalibrationMethod) -> Result<CalibrationCurve> {
    check_inputs(y_true, probs)?;
    let points = match method {
        CalibrationMethod::Binned { bins } => binned(y_true, probs, bins)?,
        CalibrationMethod::Loess { span } => loess(y_true, probs, span)?,
    };
    Ok(CalibrationCurve { method, points })
}

fn binned(y_true: &[u8], probs: &[f64], bins: usize) -> Result<Vec<CalibrationPoint>> {
    if bins == 0 {
        return Err(Error::invalid("bins must be positive"));
    }
    let mut sums = vec![(0.0, 0.0, 0usize); bins];
    for (y, p) in y_true.iter().zip(probs) {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        sums[b].0 += p;
        sums[b].1 += f64::from(*y);
        sums[b].2 += 1;
    }
    Ok(sums
        .into_iter()
        .filter(|s| s.2 > 0)
        .map(|(p, y, n)| CalibrationPoint {
            predicted: p / n as f64,
            observed: y / n as f64,
            count: n,
        })
        .collect())
}

/// Degree-1 local regression with tricube weights, evaluated on an even grid
/// over `[0, 1]`. Each fit uses the `ceil(span · n)` nearest samples.
fn loess(y_true: &[u8], probs: &[f64], span: f64) -> Result<Vec<CalibrationPoint>> {
    if !(span > 0.0 && span <= 1.0) {
        return Err(Error::invalid("LOESS span must lie in (0, 1]"));
    }
    if probs.len() < 2 {
        return Err(Error::invalid("LOESS needs at least two samples"));
    }
    let mut pairs: Vec<(f64, f64)> = probs.iter().zip(y_true).map(|(p, y)| (*p, f64::from(*y))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len();
    let q = ((span * n as f64).ceil() as usize).clamp(2, n);

    let mut points = Vec::with_capacity(LOESS_POINTS);
    for g in 0..LOESS_POINTS {
        let x0 = g as f64 / (LOESS_POINTS - 1) as f64;
        // grow the window [lo, hi) of the q nearest neighbours around x0
        let mut lo = pairs.partition_point(|p| p.0 < x0);
        let mut hi = lo;
        while hi - lo < q {
            let take_left = match (lo > 0, hi < n) {
                (true, true) => x0 - pairs[lo - 1].0 <= pairs[hi].0 - x0,
                (l, _) => l,
            };
            if take_left {
                lo -= 1;
            } else {
                hi += 1;
            }
        }
        let window = &pairs[lo..hi];
        let dmax = window
            .iter()
            .map(|p| (p.0 - x0).abs())
            .fold(0.0, f64::max);
        let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (x, y) in window {
            let w = if dmax > 0.0 {
                let u = (x - x0).abs() / dmax;
                if u < 1.0 {
                    (1.0 - u * u * u).powi(3)
                } else {
                    0.0
                }
            } else {
                1.0
            };
            sw += w;
            sx += w * x;
            sy += w * y;
            sxx += w * x * x;
            sxy += w * x * y;
        }
        if sw <= 0.0 {
            continue;
        }
        let (mx, my) = (sx / sw, sy / sw);
        let var = sxx / sw - mx * mx;
        let fitted = if var > 1e-12 {
            let slope = (sxy / sw - mx * my) / var;
            my + slope * (x0 - mx)
        } else {
            my
        };
        points.push(CalibrationPoint {
            predicted: x0,
            observed: fitted.clamp(0.0, 1.0),
            count: window.len(),
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub bandwidth: f64,
    /// `(x, density)` on the evaluation grid.
    pub points: Vec<(f64, f64)>,
}

impl DensityEstimate {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "density"])?;
        for (x, d) in &self.points {
            w.write_record([x.to_string(), d.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Silverman's rule of thumb, `0.9 · min(σ, IQR/1.34) · n^(-1/5)`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        let pos = q * (sorted.len() - 1) as f64;
        let (i, frac) = (pos.floor() as usize, pos.fract());
        let next = sorted[(i + 1).min(sorted.len() - 1)];
        sorted[i] + frac * (next - sorted[i])
    };
    let iqr = quantile(0.75) - quantile(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-3
    }
}

/// Gaussian KDE evaluated at `x`.
pub fn kde_at(values: &[f64], bandwidth: f64, x: f64) -> f64 {
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    values
        .iter()
        .map(|v| {
            let u = (x - v) / bandwidth;
            (-0.5 * u * u).exp()
        })
        .sum::<f64>()
        * norm
}

/// Gaussian KDE on an even grid of [`KDE_POINTS`] over `[0, 1]`; the
/// bandwidth defaults to Silverman's rule.
pub fn probability_density(probs: &[f64], bandwidth: Option<f64>) -> Result<DensityEstimate> {
    if probs.len() < 2 {
        return Err(Error::invalid("density estimation needs at least two values"));
    }
    let bandwidth = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(_) => return Err(Error::invalid("bandwidth must be positive")),
        None => silverman_bandwidth(probs),
    };
    let points = (0..KDE_POINTS)
        .map(|i| {
            let x = i as f64 / (KDE_POINTS - 1) as f64;
            (x, kde_at(probs, bandwidth, x))
        })
        .collect();
    Ok(DensityEstimate { bandwidth, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_probability_single_bin() {
        let probs = vec![0.7; 10];
        let y = [1, 1, 1, 1, 1, 1, 1, 0, 0, 0];
        let c = calibration_curve(&y, &probs, CalibrationMethod::Binned { bins: 10 }).unwrap();
        assert_eq!(c.points.len(), 1);
        assert!((c.points[0].predicted - 0.7).abs() < 1e-12);
        assert!((c.points[0].observed - 0.7).abs() < 1e-12);
    }

    #[test]
    fn constructed_perfect_calibration() {
        // bin b holds 10 samples at p = (2b+1)/20 with matching positive counts
        let mut probs = Vec::new();
        let mut y = Vec::new();
        for b in 0..10 {
            let p = (2 * b + 1) as f64 / 20.0;
            for i in 0..20 {
                probs.push(p);
                y.push(u8::from((i as f64) < p * 20.0));
            }
        }
        let c = calibration_curve(&y, &probs, CalibrationMethod::Binned { bins: 10 }).unwrap();
        assert_eq!(c.points.len(), 10);
        assert!(c.max_deviation() < 1e-12);
        assert!(c.points.windows(2).all(|w| w[0].predicted < w[1].predicted));
    }

    #[test]
    fn rejects_out_of_range_probabilities() {
        assert!(calibration_curve(&[1], &[1.5], CalibrationMethod::Binned { bins: 10 }).is_err());
    }

    #[test]
    fn loess_is_exact_on_a_line() {
        // at every level p the positive rate is exactly p
        let mut probs = Vec::new();
        let mut y = Vec::new();
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            for k in 0..100 {
                probs.push(p);
                y.push(u8::from(k < i));
            }
        }
        let c = calibration_curve(&y, &probs, CalibrationMethod::Loess { span: 0.75 }).unwrap();
        assert_eq!(c.points.len(), LOESS_POINTS);
        assert!(c.max_deviation() < 0.02, "{}", c.max_deviation());
    }

    #[test]
    fn kde_properties() {
        let values: Vec<f64> = (0..50).map(|i| if i % 2 == 0 { 0.1 } else { 0.9 }).collect();
        let d = probability_density(&values, None).unwrap();
        assert_eq!(d.points.len(), KDE_POINTS);
        assert!(d.points.iter().all(|p| p.1 >= 0.0));
        let maxima: Vec<f64> = d
            .points
            .windows(3)
            .filter(|w| w[1].1 > w[0].1 && w[1].1 > w[2].1)
            .map(|w| w[1].0)
            .collect();
        assert_eq!(maxima.len(), 2);
        assert!((maxima[0] - 0.1).abs() < 0.02 && (maxima[1] - 0.9).abs() < 0.02);

        let (lo, hi, m) = (-2.0, 3.0, 5001);
        let step = (hi - lo) / (m - 1) as f64;
        let ys: Vec<f64> = (0..m).map(|i| kde_at(&values, d.bandwidth, lo + i as f64 * step)).collect();
        let integral: f64 = ys.windows(2).map(|w| 0.5 * (w[0] + w[1]) * step).sum();
        assert!((0.98..=1.02).contains(&integral), "{integral}");
    }
}

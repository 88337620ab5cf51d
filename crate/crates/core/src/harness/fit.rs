//! Least-squares rate fits and stability bands.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitDomain {
    /// `ln y` against `ln x`.
    LogLog,
    /// `y` against `ln x`.
    SemiLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
    pub domain: FitDomain,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, intercept, r2.clamp(0.0, 1.0))
}

fn check_points(points: &[(f64, f64)], need_positive_y: bool) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::Domain(format!("a rate fit needs at least 3 points, got {}", points.len())));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0) || (need_positive_y && !(*y > 0.0))) {
        return Err(Error::Domain(format!("rate fits need positive data, got ({x}, {y})")));
    }
    let x0 = points[0].0;
    if points.iter().all(|p| p.0 == x0) {
        return Err(Error::Domain("rate fit abscissae are all equal".into()));
    }
    Ok(())
}

/// Fits `ln y = slope ln x + intercept`.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<FitResult> {
    check_points(points, true)?;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r2) = least_squares(&xs, &ys);
    Ok(FitResult { slope, intercept, r2, points: points.len(), domain: FitDomain::LogLog })
}

/// Fits `y = slope ln x + intercept`.
pub fn fit_semilog(points: &[(f64, f64)]) -> Result<FitResult> {
    check_points(points, false)?;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (slope, intercept, r2) = least_squares(&xs, &ys);
    Ok(FitResult { slope, intercept, r2, points: points.len(), domain: FitDomain::SemiLog })
}

/// `max_k |v_k / mean(v) - 1|`: the half-width of the tightest relative band
/// around the mean containing every value.
pub fn band_deviation(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v / mean - 1.0).abs()).fold(0.0, f64::max)
}

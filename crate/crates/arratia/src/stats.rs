//! Small statistical helpers shared by the estimators and experiments.

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf;

use crate::error::{Error, Result};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail 2(1 - Phi(x)) evaluated as a complementary error function,
/// accurate far into the tail.
pub fn two_sided_tail(x: f64) -> f64 {
    erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::arg("need at least two samples"));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    let se = (ss / (n - 1.0) / n).sqrt();
    Ok((mean, se))
}

/// Ordinary least-squares line fit.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval on the slope.
    pub slope_ci95: f64,
    pub residual_ss: f64,
}

/// Fits `y = intercept + slope * x` by least squares. With fewer than three
/// points the confidence half-width is reported as infinite.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::arg("line fit needs matching inputs of length >= 2"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    if sxx == 0.0 {
        return Err(Error::arg("degenerate abscissae in line fit"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual_ss: f64 = x
        .iter()
        .zip(y)
        .map(|(u, v)| {
            let r = v - (intercept + slope * u);
            r * r
        })
        .sum();
    let slope_ci95 = if x.len() > 2 {
        let dof = n - 2.0;
        let se = (residual_ss / dof / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, dof)
            .map_err(|e| Error::Internal(format!("t distribution: {e}")))?
            .inverse_cdf(0.975);
        t * se
    } else {
        f64::INFINITY
    };
    Ok(LineFit {
        slope,
        intercept,
        slope_ci95,
        residual_ss,
    })
}

/// Log-log slope of `y` against `x`; every entry must be positive.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.iter().chain(y).any(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(Error::arg("log-log fit needs positive finite data"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}

//! Descriptive statistics, Student t tail probabilities, paired t tests and
//! ordinary least squares with classical standard errors.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Qr};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptives {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); absent for n = 1.
    pub sd: Option<f64>,
}

pub fn describe(values: &[f64]) -> Result<Descriptives> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("describe needs at least one value".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Ok(Descriptives { n, mean, sd })
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The continued fraction converges fast for x < (a + 1)/(a + b + 2).
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Two-sided tail probability `P(|T| ≥ |t|)` of Student's t with `df`
/// degrees of freedom.
pub fn t_tail_p(t: f64, df: f64) -> Result<f64> {
    if !(df >= 1.0) {
        return Err(Error::InvalidArgument(format!("degrees of freedom must be >= 1, got {df}")));
    }
    if t.is_nan() {
        return Err(Error::InvalidArgument("t statistic is NaN".into()));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let x = df / (df + t * t);
    Ok(regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: usize,
    /// Two-sided.
    pub p: f64,
}

/// Paired Student t test on `d = a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let d = describe(&diffs)?;
    let sd = d.sd.unwrap_or(0.0);
    if !(sd > 0.0) {
        return Err(Error::Degenerate("differences have zero variance".into()));
    }
    let t = d.mean / (sd / (n as f64).sqrt());
    let df = n - 1;
    Ok(TTestResult { t, df, p: t_tail_p(t, df as f64)? })
}

/// `*`, `**` or `***` for p below 0.05, 0.01 or 0.001.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    /// Intercept first, then predictors in design order.
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub n: usize,
    /// Residual degrees of freedom, `N − p − 1`.
    pub df: usize,
    pub residuals: Vec<f64>,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    /// CSV table `variable,B,SE,stars,N,R2`.
    pub fn write_table<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["variable", "B", "SE", "stars", "N", "R2"])?;
        for c in &self.coefficients {
            out.write_record([
                c.name.clone(),
                format!("{:.6}", c.estimate),
                format!("{:.6}", c.std_error),
                significance_stars(c.p).to_owned(),
                self.n.to_string(),
                format!("{:.6}", self.r_squared),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// OLS of `y` on the rows of `x` with an intercept prepended.
pub fn ols_fit(x: &[Vec<f64>], y: &[f64], names: &[&str]) -> Result<RegressionResult> {
    let n = y.len();
    if x.len() != n {
        return Err(Error::InvalidArgument(format!("{} design rows for {n} responses", x.len())));
    }
    let p = names.len();
    if let Some(row) = x.iter().find(|r| r.len() != p) {
        return Err(Error::InvalidArgument(format!("design row has {} columns, expected {p}", row.len())));
    }
    if n <= p + 1 {
        return Err(Error::InvalidArgument(format!("{n} observations cannot fit {} parameters", p + 1)));
    }
    let cols = p + 1;
    let mut design = Matrix::zeros(n, cols);
    for (i, row) in x.iter().enumerate() {
        design.set(i, 0, 1.0);
        for (j, v) in row.iter().enumerate() {
            design.set(i, j + 1, *v);
        }
    }
    let all_names: Vec<&str> = std::iter::once(INTERCEPT).chain(names.iter().copied()).collect();

    let qr = Qr::new(&design);
    let col_norms: Vec<f64> = (0..cols)
        .map(|j| (0..n).map(|i| design.get(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    for (j, &r) in qr.r_diag().iter().enumerate() {
        if col_norms[j] == 0.0 || r.abs() <= 1e-10 * col_norms[j] {
            return Err(Error::RankDeficient(all_names[j].to_owned()));
        }
    }

    let beta = qr.solve(y);
    let residuals: Vec<f64> = (0..n)
        .map(|i| y[i] - crate::linalg::dot(design.row(i), &beta))
        .collect();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let r_squared = if sst > 0.0 { (1.0 - sse / sst).clamp(0.0, 1.0) } else { 0.0 };
    let df = n - cols;
    let sigma2 = sse / df as f64;

    let r_inv = qr.r_inverse();
    let coefficients = (0..cols)
        .map(|j| {
            // diag((XᵀX)⁻¹) = row sums of squares of R⁻¹
            let var = (0..cols).map(|k| r_inv.get(j, k).powi(2)).sum::<f64>() * sigma2;
            let std_error = var.sqrt();
            let t = if std_error > 0.0 {
                beta[j] / std_error
            } else if beta[j] == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(beta[j])
            };
            Ok(Coefficient {
                name: all_names[j].to_owned(),
                estimate: beta[j],
                std_error,
                t,
                p: t_tail_p(t, df as f64)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RegressionResult { coefficients, r_squared, n, df, residuals })
}

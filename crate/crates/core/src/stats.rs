//! Small statistics toolkit: compensated sums, means, weighted fits, jackknife.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = NeumaierSum::default();
    for x in xs {
        s.add(x);
    }
    s.value()
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let n = xs.len();
        if n == 0 {
            return Estimate {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mean = sum(xs.iter().copied()) / n as f64;
        let se = if n > 1 {
            let ss = sum(xs.iter().map(|x| (x - mean) * (x - mean)));
            (ss / ((n - 1) as f64 * n as f64)).sqrt()
        } else {
            0.0
        };
        Estimate { mean, se, n }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub r2: f64,
    pub points: usize,
}

/// Weighted least squares of `y` on `x`. `slope_se` uses the weights as
/// inverse variances; `r2` is the weighted coefficient of determination.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n || w.len() != n {
        return None;
    }
    let sw = sum(w.iter().copied());
    let mx = sum((0..n).map(|i| w[i] * x[i])) / sw;
    let my = sum((0..n).map(|i| w[i] * y[i])) / sw;
    let sxx = sum((0..n).map(|i| w[i] * (x[i] - mx) * (x[i] - mx)));
    if sxx <= 0.0 {
        return None;
    }
    let sxy = sum((0..n).map(|i| w[i] * (x[i] - mx) * (y[i] - my)));
    let syy = sum((0..n).map(|i| w[i] * (y[i] - my) * (y[i] - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = sum((0..n).map(|i| {
        let r = y[i] - intercept - slope * x[i];
        w[i] * r * r
    }));
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Some(LineFit {
        slope,
        intercept,
        slope_se: (1.0 / sxx).sqrt(),
        r2,
        points: n,
    })
}

pub fn line_fit(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let w = vec![1.0; x.len()];
    let mut fit = weighted_line_fit(x, y, &w)?;
    let n = x.len();
    if n > 2 {
        let mx = sum(x.iter().copied()) / n as f64;
        let sxx = sum(x.iter().map(|v| (v - mx) * (v - mx)));
        let sse = sum((0..n).map(|i| {
            let r = y[i] - fit.intercept - fit.slope * x[i];
            r * r
        }));
        fit.slope_se = (sse / (n - 2) as f64 / sxx).sqrt();
    } else {
        fit.slope_se = f64::INFINITY;
    }
    Some(fit)
}

/// Delete-one-block jackknife standard error of a statistic.
/// `stat(k)` evaluates the statistic with block `k` removed.
pub fn jackknife_se(blocks: usize, mut stat: impl FnMut(usize) -> f64) -> f64 {
    if blocks < 2 {
        return f64::NAN;
    }
    let vals: Vec<f64> = (0..blocks).map(&mut stat).collect();
    let mean = sum(vals.iter().copied()) / blocks as f64;
    let ss = sum(vals.iter().map(|v| (v - mean) * (v - mean)));
    ((blocks - 1) as f64 / blocks as f64 * ss).sqrt()
}

/// Two-sided standard normal quantile for 95% confidence.
pub const Z95: f64 = 1.959963984540054;

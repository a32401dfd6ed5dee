//! Small statistics toolkit used by the statistical checks and reports.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

/// Running mean/variance (Welford), mergeable across batches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Summary {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut s = Summary::default();
        xs.iter().for_each(|&x| s.push(x));
        s
    }

    pub fn merge(&self, o: &Summary) -> Summary {
        if self.n == 0 {
            return *o;
        }
        if o.n == 0 {
            return *self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        let mean = self.mean + d * o.n as f64 / n as f64;
        let m2 = self.m2 + o.m2 + d * d * (self.n as f64) * (o.n as f64) / n as f64;
        Summary { n, mean, m2 }
    }

    pub fn var(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn sd(&self) -> f64 {
        self.var().sqrt()
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.var() / self.n as f64).sqrt()
        }
    }
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let s = Summary::from_slice(xs);
    (s.mean, s.se())
}

/// Standard normal cdf.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sided p-value of a z statistic.
pub fn z_pvalue(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Kolmogorov distribution tail `P(K > lambda)`.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test: `(D, p)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let s = ne.sqrt();
    (d, kolmogorov_tail((s + 0.12 + 0.11 / s) * d))
}

/// One-sample Kolmogorov-Smirnov test against a continuous cdf.
pub fn ks_one_sample(a: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut x = a.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (k, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((k as f64 + 1.0) / n - f).max(f - k as f64 / n);
    }
    let s = n.sqrt();
    (d, kolmogorov_tail((s + 0.12 + 0.11 / s) * d))
}

/// Kish effective sample size of a weight vector.
pub fn effective_n(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

fn weighted_ecdf(x: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let tot: f64 = w.iter().sum();
    let xs = idx.iter().map(|&i| x[i]).collect();
    let mut acc = 0.0;
    let cs = idx
        .iter()
        .map(|&i| {
            acc += w[i] / tot;
            acc
        })
        .collect();
    (xs, cs)
}

/// Weighted two-sample KS: `(D, p)` with effective sample sizes.
pub fn ks_two_sample_weighted(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> (f64, f64) {
    let (x, fx) = weighted_ecdf(a, wa);
    let (y, fy) = weighted_ecdf(b, wb);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut cx, mut cy) = (0.0, 0.0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            cx = fx[i];
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            cy = fy[j];
            j += 1;
        }
        d = d.max((cx - cy).abs());
    }
    let (n, m) = (effective_n(wa), effective_n(wb));
    let s = (n * m / (n + m)).sqrt();
    (d, kolmogorov_tail((s + 0.12 + 0.11 / s) * d))
}

/// Ordinary least squares `y = a + b x`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub n: usize,
}

pub fn linear_regression(x: &[f64], y: &[f64]) -> Regression {
    let n = x.len().min(y.len());
    let nf = n as f64;
    let mx = x[..n].iter().sum::<f64>() / nf;
    let my = y[..n].iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for k in 0..n {
        sxx += (x[k] - mx) * (x[k] - mx);
        sxy += (x[k] - mx) * (y[k] - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut rss = 0.0;
    for k in 0..n {
        let r = y[k] - intercept - slope * x[k];
        rss += r * r;
    }
    let slope_se = if n > 2 { (rss / (nf - 2.0) / sxx).sqrt() } else { f64::INFINITY };
    Regression { slope, intercept, slope_se, n }
}

/// Sample skewness and excess kurtosis with their normal-theory standard errors.
pub fn skew_kurtosis(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - m;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0, (6.0 / n).sqrt(), (24.0 / n).sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && xs[idx[e + 1]] == xs[idx[k]] {
            e += 1;
        }
        let avg = (k + e) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=e] {
            r[i] = avg;
        }
        k = e + 1;
    }
    r
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with the large-sample two-sided p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> (f64, f64) {
    let rho = pearson(&ranks(x), &ranks(y));
    let z = rho * ((x.len() as f64) - 1.0).sqrt();
    (rho, z_pvalue(z))
}

/// Sample covariance of two equally long series.
pub fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0)
}

/// Covariance estimate with its standard error (delta method on products).
pub fn covariance_se(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let s = Summary::from_slice(&prods);
    (s.mean * n / (n - 1.0), s.se())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_merge_matches_direct() {
        let xs: Vec<f64> = (0..100).map(|k| ((k * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let a = Summary::from_slice(&xs[..40]);
        let b = Summary::from_slice(&xs[40..]);
        let all = Summary::from_slice(&xs);
        let m = a.merge(&b);
        assert_eq!(m.n, 100);
        assert!((m.mean - all.mean).abs() < 1e-12);
        assert!((m.var() - all.var()).abs() < 1e-12);
    }

    #[test]
    fn ks_identical_samples() {
        let xs: Vec<f64> = (0..500).map(|k| (k as f64).sin()).collect();
        let (d, p) = ks_two_sample(&xs, &xs);
        assert_eq!(d, 0.0);
        assert!(p > 0.99);
        let ys: Vec<f64> = xs.iter().map(|x| x + 1.0).collect();
        assert!(ks_two_sample(&xs, &ys).1 < 1e-6);
    }

    #[test]
    fn weighted_ks_unit_weights_match() {
        let xs: Vec<f64> = (0..300).map(|k| (k as f64 * 0.7).sin()).collect();
        let ys: Vec<f64> = (0..200).map(|k| (k as f64 * 1.3).cos() * 0.9).collect();
        let (d0, p0) = ks_two_sample(&xs, &ys);
        let (d1, p1) = ks_two_sample_weighted(&xs, &vec![2.0; 300], &ys, &vec![1.0; 200]);
        assert!((d0 - d1).abs() < 1e-12 && (p0 - p1).abs() < 1e-12);
        assert!((effective_n(&[1.0, 1.0, 0.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_known_values() {
        // classical critical values
        assert!((kolmogorov_tail(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_tail(1.628) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn regression_exact_line() {
        let x: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let r = linear_regression(&x, &y);
        assert!((r.slope - 2.0).abs() < 1e-12 && (r.intercept + 1.0).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-9);
        assert!((z_pvalue(1.959963984540054) - 0.05).abs() < 1e-9);
    }
}

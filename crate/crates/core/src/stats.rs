//! Small summary-statistics helpers for the studies.

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = NeumaierSum::default();
    values.into_iter().for_each(|v| acc.add(v));
    acc.value()
}

/// Sample moments of a set of draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub skewness: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        let nf = count as f64;
        let mean = compensated_sum(values.iter().copied()) / nf;
        let m2 = compensated_sum(values.iter().map(|v| (v - mean).powi(2))) / nf;
        let m3 = compensated_sum(values.iter().map(|v| (v - mean).powi(3))) / nf;
        let variance = if count > 1 { m2 * nf / (nf - 1.0) } else { 0.0 };
        let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
        Self { count, mean, variance, skewness }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        (self.variance / self.count as f64).sqrt()
    }
}

/// Ordinary least squares fit `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub points: usize,
}

impl LinearFit {
    /// Returns `None` for fewer than two points or a degenerate `x`.
    pub fn fit(xs: &[f64], ys: &[f64]) -> Option<Self> {
        let n = xs.len().min(ys.len());
        if n < 2 {
            return None;
        }
        let nf = n as f64;
        let mx = compensated_sum(xs[..n].iter().copied()) / nf;
        let my = compensated_sum(ys[..n].iter().copied()) / nf;
        let sxx = compensated_sum(xs[..n].iter().map(|x| (x - mx).powi(2)));
        if sxx <= 0.0 {
            return None;
        }
        let sxy = compensated_sum(xs[..n].iter().zip(&ys[..n]).map(|(x, y)| (x - mx) * (y - my)));
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let slope_se = if n > 2 {
            let rss = compensated_sum(xs[..n].iter().zip(&ys[..n]).map(|(x, y)| (y - intercept - slope * x).powi(2)));
            (rss / (nf - 2.0) / sxx).sqrt()
        } else {
            0.0
        };
        Some(Self { slope, intercept, slope_se, points: n })
    }

    /// Fit of `ln y` against `ln x`.
    pub fn log_log(xs: &[f64], ys: &[f64]) -> Option<Self> {
        let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
        Self::fit(&lx, &ly)
    }
}

/// Weighted least squares fit `y = a + b·x + c·x²` with known standard
/// errors on `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFit {
    pub coefficients: [f64; 3],
    pub standard_errors: [f64; 3],
}

impl QuadraticFit {
    /// Returns `None` for fewer than three points, a non-positive standard
    /// error or a singular design.
    pub fn weighted(xs: &[f64], ys: &[f64], ses: &[f64]) -> Option<Self> {
        let n = xs.len().min(ys.len()).min(ses.len());
        if n < 3 || ses[..n].iter().any(|s| !(*s > 0.0)) {
            return None;
        }
        let mut a = [[0.0; 3]; 3];
        let mut rhs = [0.0; 3];
        for k in 0..n {
            let w = ses[k].powi(-2);
            let basis = [1.0, xs[k], xs[k] * xs[k]];
            for i in 0..3 {
                rhs[i] += w * basis[i] * ys[k];
                for j in 0..3 {
                    a[i][j] += w * basis[i] * basis[j];
                }
            }
        }
        let inv = invert3(&a)?;
        let mut coefficients = [0.0; 3];
        let mut standard_errors = [0.0; 3];
        for i in 0..3 {
            coefficients[i] = (0..3).map(|j| inv[i][j] * rhs[j]).sum();
            standard_errors[i] = inv[i][i].max(0.0).sqrt();
        }
        Some(Self { coefficients, standard_errors })
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    let det = m[0][0] * adj[0][0] + m[0][1] * adj[1][0] + m[0][2] * adj[2][0];
    if !det.is_normal() {
        return None;
    }
    Some(adj.map(|row| row.map(|v| v / det)))
}

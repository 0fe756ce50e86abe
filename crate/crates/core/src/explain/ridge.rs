use nalgebra::{DMatrix, DVector};

/// Weighted ridge regression with an unpenalized intercept, solved through
/// the centered normal equations
/// `(Xcᵀ W Xc + λI) β = Xcᵀ W yc`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// `|Xcᵀ W (yc − Xc β) − λβ| / max(|Xcᵀ W yc|, 1)` at the solution.
    pub relative_gradient: f64,
}

impl RidgeFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Fits `y ≈ b + xβ` minimizing `Σ wᵢ (yᵢ − b − xᵢβ)² + λ|β|²`.
///
/// Returns `None` when the system is singular (only possible with λ = 0).
pub fn fit_weighted_ridge(x: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> Option<RidgeFit> {
    let d = x.first().map_or(0, Vec::len);
    let total: f64 = w.iter().sum();
    let mut x_mean = vec![0.0; d];
    let mut y_mean = 0.0;
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        for j in 0..d {
            x_mean[j] += wi * row[j];
        }
        y_mean += wi * yi;
    }
    x_mean.iter_mut().for_each(|m| *m /= total);
    y_mean /= total;

    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    let mut centered = vec![0.0; d];
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        for j in 0..d {
            centered[j] = row[j] - x_mean[j];
        }
        let yc = yi - y_mean;
        for j in 0..d {
            let wj = wi * centered[j];
            b[j] += wj * yc;
            for k in j..d {
                a[(j, k)] += wj * centered[k];
            }
        }
    }
    for j in 0..d {
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
        a[(j, j)] += lambda;
    }
    let beta = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a.clone().lu().solve(&b)?,
    };
    let residual = &b - &a * &beta;
    let relative_gradient = residual.norm() / b.norm().max(1.0);
    let intercept = y_mean - x_mean.iter().zip(beta.iter()).map(|(m, c)| m * c).sum::<f64>();
    Some(RidgeFit {
        coefficients: beta.iter().copied().collect(),
        intercept,
        relative_gradient,
    })
}

/// Weighted coefficient of determination of `fit` on the sample, clamped to
/// [0, 1]. A target with no weighted variance is reported as 1.
pub fn weighted_r2(fit: &RidgeFit, x: &[Vec<f64>], y: &[f64], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    let y_mean = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        ss_res += wi * (yi - fit.predict(row)).powi(2);
        ss_tot += wi * (yi - y_mean).powi(2);
    }
    if ss_tot <= 1e-24 * total {
        return 1.0;
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

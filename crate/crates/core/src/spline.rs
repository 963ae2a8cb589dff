//! Weighted cubic smoothing splines with the smoothing parameter chosen by
//! generalized cross-validation.
//!
//! Fitting follows the Reinsch form: with knots `x`, weights `W`, the band
//! matrices `Q` and `R`, the fitted values are `g = (W + λ Q R⁻¹ Qᵀ)⁻¹ W y`.
//! The fitted curve is the natural cubic spline through `g`, continued
//! linearly outside the knot range, and clamped to [0, 1] on evaluation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplinePoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

/// Pointwise band on a fixed grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub confidence: f64,
    pub grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineModel {
    pub knots: Vec<f64>,
    /// Fitted values at the knots.
    pub values: Vec<f64>,
    /// Second derivatives at the knots; zero at both ends.
    pub second_derivatives: Vec<f64>,
    pub smoothing_parameter: f64,
    pub band: Option<ConfidenceBand>,
}

impl SplineModel {
    /// Unclamped spline value.
    pub fn raw(&self, x: f64) -> f64 {
        let (k, g, c) = (&self.knots, &self.values, &self.second_derivatives);
        let n = k.len();
        if x <= k[0] {
            let h = k[1] - k[0];
            let slope = (g[1] - g[0]) / h - h * c[1] / 6.0;
            return g[0] + slope * (x - k[0]);
        }
        if x >= k[n - 1] {
            let h = k[n - 1] - k[n - 2];
            let slope = (g[n - 1] - g[n - 2]) / h + h * c[n - 2] / 6.0;
            return g[n - 1] + slope * (x - k[n - 1]);
        }
        let i = k.partition_point(|&v| v <= x) - 1;
        let h = k[i + 1] - k[i];
        let a = x - k[i];
        let b = k[i + 1] - x;
        (a * g[i + 1] + b * g[i]) / h - a * b / 6.0 * ((1.0 + a / h) * c[i + 1] + (1.0 + b / h) * c[i])
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        self.raw(x).clamp(0.0, 1.0)
    }
}

struct System {
    x: Vec<f64>,
    y: DVector<f64>,
    w: DVector<f64>,
    k: DMatrix<f64>,
    r_inv_qt: DMatrix<f64>,
}

impl System {
    fn new(points: &[SplinePoint]) -> Result<Self> {
        if points.len() < MIN_POINTS {
            return Err(Error::Fit(format!(
                "need at least {MIN_POINTS} points, got {}",
                points.len()
            )));
        }
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.x.total_cmp(&b.x));
        if pts.windows(2).any(|p| p[1].x - p[0].x <= 0.0) {
            return Err(Error::Fit("knot positions must be distinct".into()));
        }
        if pts.iter().any(|p| p.weight.is_nan() || p.weight <= 0.0 || !p.y.is_finite() || !p.x.is_finite()) {
            return Err(Error::Fit("weights must be positive and values finite".into()));
        }
        let n = pts.len();
        let mean_w = pts.iter().map(|p| p.weight).sum::<f64>() / n as f64;
        let x: Vec<f64> = pts.iter().map(|p| p.x).collect();
        let h: Vec<f64> = x.windows(2).map(|p| p[1] - p[0]).collect();
        let m = n - 2;
        let mut q = DMatrix::zeros(n, m);
        let mut r = DMatrix::zeros(m, m);
        for j in 0..m {
            q[(j, j)] = 1.0 / h[j];
            q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
            q[(j + 2, j)] = 1.0 / h[j + 1];
            r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < m {
                r[(j, j + 1)] = h[j + 1] / 6.0;
                r[(j + 1, j)] = h[j + 1] / 6.0;
            }
        }
        let r_inv_qt = r
            .cholesky()
            .ok_or_else(|| Error::Fit("roughness matrix is not positive definite".into()))?
            .solve(&q.transpose());
        let k = &q * &r_inv_qt;
        Ok(Self {
            y: DVector::from_iterator(n, pts.iter().map(|p| p.y)),
            w: DVector::from_iterator(n, pts.iter().map(|p| p.weight / mean_w)),
            x,
            k,
            r_inv_qt,
        })
    }

    fn n(&self) -> usize {
        self.x.len()
    }

    /// Returns the fitted values and the GCV score for `lambda`.
    fn solve(&self, lambda: f64) -> Option<(DVector<f64>, f64)> {
        let n = self.n();
        let mut a = &self.k * lambda;
        for i in 0..n {
            a[(i, i)] += self.w[i];
        }
        let lu = a.lu();
        let wy = self.w.component_mul(&self.y);
        let g = lu.solve(&wy)?;
        let hat = lu.solve(&DMatrix::from_diagonal(&self.w))?;
        let trace = hat.trace();
        let rss: f64 = (0..n).map(|i| self.w[i] * (self.y[i] - g[i]).powi(2)).sum();
        let denom = 1.0 - trace / n as f64;
        let score = if denom.abs() < 1e-9 {
            if rss < 1e-24 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (rss / n as f64) / (denom * denom)
        };
        Some((g, score))
    }

    fn model(&self, lambda: f64, g: DVector<f64>) -> SplineModel {
        let interior = &self.r_inv_qt * &g;
        let mut second = vec![0.0; self.n()];
        second[1..self.n() - 1].copy_from_slice(interior.as_slice());
        SplineModel {
            knots: self.x.clone(),
            values: g.as_slice().to_vec(),
            second_derivatives: second,
            smoothing_parameter: lambda,
            band: None,
        }
    }
}

pub fn fit_with_lambda(points: &[SplinePoint], lambda: f64) -> Result<SplineModel> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Fit(format!("smoothing parameter must be positive, got {lambda}")));
    }
    let sys = System::new(points)?;
    let (g, _) = sys
        .solve(lambda)
        .ok_or_else(|| Error::Fit("singular smoothing system".into()))?;
    Ok(sys.model(lambda, g))
}

const LOG_LAMBDA_MIN: f64 = -12.0;
const LOG_LAMBDA_MAX: f64 = 4.0;
const GRID_STEPS: usize = 64;

/// Fits the spline, choosing λ by minimizing the GCV score over a log grid
/// followed by golden-section refinement.
pub fn fit_smoothing_spline(points: &[SplinePoint]) -> Result<SplineModel> {
    let sys = System::new(points)?;
    let score = |log_l: f64| sys.solve(10f64.powf(log_l)).map_or(f64::INFINITY, |(_, s)| s);
    let step = (LOG_LAMBDA_MAX - LOG_LAMBDA_MIN) / GRID_STEPS as f64;
    let grid: Vec<(f64, f64)> = (0..=GRID_STEPS)
        .map(|i| {
            let l = LOG_LAMBDA_MIN + step * i as f64;
            (l, score(l))
        })
        .collect();
    let (best_i, _) = grid
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &(_, s))| if s < acc.1 { (i, s) } else { acc });
    let mut best = grid[best_i];
    if best.1 > 0.0 {
        let mut lo = LOG_LAMBDA_MIN.max(best.0 - step);
        let mut hi = LOG_LAMBDA_MAX.min(best.0 + step);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - phi * (hi - lo);
        let mut d = lo + phi * (hi - lo);
        let (mut fc, mut fd) = (score(c), score(d));
        for _ in 0..40 {
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - phi * (hi - lo);
                fc = score(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + phi * (hi - lo);
                fd = score(d);
            }
        }
        let mid = (lo + hi) / 2.0;
        let fm = score(mid);
        if fm < best.1 {
            best = (mid, fm);
        }
    }
    let lambda = 10f64.powf(best.0);
    let (g, _) = sys
        .solve(lambda)
        .ok_or_else(|| Error::Fit("singular smoothing system".into()))?;
    Ok(sys.model(lambda, g))
}

/// `n` equally spaced points covering [0, 1].
pub fn unit_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn midpoints(r: usize) -> Vec<f64> {
        (0..r).map(|k| (k as f64 + 0.5) / r as f64).collect()
    }

    fn points(ys: &[f64]) -> Vec<SplinePoint> {
        midpoints(ys.len())
            .into_iter()
            .zip(ys)
            .map(|(x, &y)| SplinePoint { x, y, weight: 50.0 })
            .collect()
    }

    #[test]
    fn constant_rates_give_a_constant_curve() {
        let m = fit_smoothing_spline(&points(&[0.9; 20])).unwrap();
        for x in unit_grid(101) {
            assert!((m.evaluate(x) - 0.9).abs() < 1e-6);
        }
    }

    #[test]
    fn noiseless_logistic_is_tracked() {
        let f = |x: f64| 0.6 + 0.37 / (1.0 + (10.0 * (x - 0.5)).exp());
        let xs = midpoints(20);
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let m = fit_smoothing_spline(&points(&ys)).unwrap();
        let worst = unit_grid(201)
            .into_iter()
            .filter(|&x| x >= xs[0] && x <= xs[19])
            .map(|x| (m.evaluate(x) - f(x)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.02, "max deviation {worst}");
    }

    #[test]
    fn single_outlier_is_damped() {
        let mut ys = vec![0.9; 20];
        ys[10] = 0.5;
        let m = fit_smoothing_spline(&points(&ys)).unwrap();
        let at = m.evaluate(midpoints(20)[10]);
        assert!((at - 0.9).abs() <= 0.1, "smoothed outlier {at}");
    }

    #[test]
    fn linear_data_is_reproduced_for_any_lambda() {
        let xs = midpoints(10);
        let ys: Vec<f64> = xs.iter().map(|x| 0.2 + 0.5 * x).collect();
        for lambda in [1e-6, 1e-2, 10.0] {
            let m = fit_with_lambda(&points(&ys), lambda).unwrap();
            for x in unit_grid(11) {
                assert!((m.raw(x) - (0.2 + 0.5 * x)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn small_lambda_interpolates() {
        let ys = [0.1, 0.5, 0.2, 0.8, 0.4, 0.9];
        let m = fit_with_lambda(&points(&ys), 1e-12).unwrap();
        for (x, y) in midpoints(6).iter().zip(ys) {
            assert!((m.raw(*x) - y).abs() < 1e-6);
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        assert!(matches!(fit_smoothing_spline(&points(&[0.5; 3])), Err(Error::Fit(_))));
    }

    // Reference fits frozen from scipy.interpolate.make_smoothing_spline.
    const REF_Y: [f64; 12] = [0.97, 0.95, 0.99, 0.96, 0.93, 0.97, 0.9, 0.8, 0.7, 0.62, 0.6, 0.63];
    const REF_W: [f64; 12] = [3.0, 1.0, 2.0, 1.0, 1.0, 2.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0];

    fn reference_points(weights: &[f64]) -> Vec<SplinePoint> {
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        midpoints(12)
            .into_iter()
            .zip(REF_Y.iter().zip(weights))
            .map(|(x, (&y, &w))| SplinePoint { x, y, weight: w / mean })
            .collect()
    }

    fn assert_knots(m: &SplineModel, expected: &[f64], tol: f64) {
        for (got, want) in m.values.iter().zip(expected) {
            assert!((got - want).abs() < tol, "{got} vs {want}");
        }
    }

    #[test]
    fn matches_reference_fits_for_fixed_lambda() {
        let unit = reference_points(&[1.0; 12]);
        let m = fit_with_lambda(&unit, 1e-5).unwrap();
        assert_knots(
            &m,
            &[
                0.968424504378, 0.954965402803, 0.984789199877, 0.95987081694, 0.936573492755, 0.963101125905,
                0.901836686508, 0.800206712554, 0.699324234224, 0.621130108221, 0.60074268283, 0.629035033006,
            ],
            1e-9,
        );
        assert!((m.raw(0.3) - 0.955662154174573).abs() < 1e-9);
        let m = fit_with_lambda(&unit, 1e-3).unwrap();
        assert_knots(
            &m,
            &[
                0.967234972388, 0.969844040221, 0.972139269846, 0.967873621787, 0.955017384754, 0.927812920975,
                0.874160378001, 0.798315087927, 0.718732853438, 0.655204972673, 0.617062532124, 0.596601965868,
            ],
            1e-9,
        );
        assert!((m.raw(0.3) - 0.9670081187175449).abs() < 1e-9);
        let m = fit_with_lambda(&reference_points(&REF_W), 1e-4).unwrap();
        assert_knots(
            &m,
            &[
                0.968304901084, 0.969101797138, 0.977666928037, 0.966541782559, 0.957982579881, 0.954172305116,
                0.898186704604, 0.801492234509, 0.70102943654, 0.6295078368, 0.606540853254, 0.619994168618,
            ],
            1e-9,
        );
    }

    #[test]
    fn gcv_scores_match_reference() {
        let sys = System::new(&reference_points(&[1.0; 12])).unwrap();
        for (lambda, want) in [
            (1e-5, 0.0007220461853191505),
            (1e-3, 0.0015139852786098492),
            (1e-1, 0.004567047628515531),
        ] {
            let (_, got) = sys.solve(lambda).unwrap();
            assert!((got / want - 1.0).abs() < 1e-8, "{lambda}: {got} vs {want}");
        }
    }

    #[test]
    fn gcv_choice_is_the_grid_minimum() {
        let pts = reference_points(&REF_W);
        let sys = System::new(&pts).unwrap();
        let m = fit_smoothing_spline(&pts).unwrap();
        let (_, chosen) = sys.solve(m.smoothing_parameter).unwrap();
        for i in 0..=GRID_STEPS {
            let l = 10f64.powf(LOG_LAMBDA_MIN + (LOG_LAMBDA_MAX - LOG_LAMBDA_MIN) * i as f64 / GRID_STEPS as f64);
            assert!(chosen <= sys.solve(l).unwrap().1 * (1.0 + 1e-12));
        }
    }

    proptest! {
        #[test]
        fn evaluations_stay_in_unit_interval(ys in proptest::collection::vec(0.0f64..1.0, 4..25), x in -0.5f64..1.5) {
            let m = fit_smoothing_spline(&points(&ys)).unwrap();
            let v = m.evaluate(x);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

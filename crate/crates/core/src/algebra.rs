//! Finite-dimensional algebra of the mode-wise problem: Kalman matrices
//! `[(lambda D - A)^{n-1} B | ... | B]`, rank certificates, the polynomial
//! `p(lambda) = det(K(lambda) K(lambda)^T)`, the modal ratio bound, resolvent
//! sector sweeps and mode characteristic polynomials.

use std::fmt::Write as _;

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Relative numerical-rank threshold: `sigma_min > RANK_TOLERANCE * sigma_max`.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Slack allowed on the log-det tail slope before it counts as decaying.
pub const TREND_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("polynomial degree exceeds {bound}: trailing coefficient {coefficient} at degree {degree}")]
    DegreeOverflow { bound: usize, degree: usize, coefficient: f64 },
    #[error("ratio test needs k >= (n-1)^2 = {min}, got {k}")]
    ExponentTooSmall { k: u32, min: u32 },
    #[error("sector angle {theta} must exceed max |arg d| = {max_arg} and be at most pi")]
    InvalidSector { theta: f64, max_arg: f64 },
    #[error("z - lambda_{mode} D is numerically singular at z = {re}{im:+}i")]
    SingularResolvent { mode: usize, re: f64, im: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// `[(lambda D - A)^{n-1} B | ... | (lambda D - A) B | B]`, an `n x nm` matrix.
pub fn kalman_matrix(lambda: f64, d: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    let m = b.ncols();
    let shifted = d * lambda - a;
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for p in 0..n {
        // Block p from the right holds (lambda D - A)^p B.
        let col = (n - 1 - p) * m;
        out.view_mut((0, col), (n, m)).copy_from(&block);
        if p + 1 < n {
            block = &shifted * &block;
        }
    }
    out
}

fn det_kkt(k: &DMatrix<f64>) -> f64 {
    (k * k.transpose()).determinant()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanRecord {
    pub mode: usize,
    pub lambda: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub det_kk: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KalmanVerdict {
    Pass,
    Fail { first_failing_mode: usize },
    /// No modes were checked.
    Untested,
}

impl KalmanVerdict {
    pub fn passed(&self) -> bool {
        !matches!(self, KalmanVerdict::Fail { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            KalmanVerdict::Pass => "pass",
            KalmanVerdict::Fail { .. } => "fail",
            KalmanVerdict::Untested => "untested",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanReport {
    pub records: Vec<KalmanRecord>,
    pub verdict: KalmanVerdict,
    /// Minimum of `det(K_i K_i^T)` over the checked modes.
    pub c1_estimate: Option<f64>,
    /// Least-squares slope of `log det(K_i K_i^T)` against `log lambda_i` over the last quartile.
    pub tail_trend: Option<f64>,
    /// True when every record passed but the determinant decays in the tail.
    pub tail_decaying: bool,
}

impl KalmanReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,lambda_i,sigma_min,det_KK,pass\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{}", r.mode, r.lambda, r.sigma_min, r.det_kk, r.pass);
        }
        s
    }
}

/// Empirical certificate of the rank condition on the first `i_max` modes.
pub fn kalman_report(
    eigenvalues: &[f64],
    d: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    i_max: usize,
) -> KalmanReport {
    let i_max = i_max.min(eigenvalues.len());
    let records: Vec<KalmanRecord> = eigenvalues[..i_max]
        .iter()
        .enumerate()
        .map(|(idx, &lambda)| {
            let k = kalman_matrix(lambda, d, a, b);
            let svals = k.clone().svd(false, false).singular_values;
            let sigma_max = svals.max();
            let sigma_min = svals.min();
            let pass = sigma_max > 0.0 && sigma_min > RANK_TOLERANCE * sigma_max && svals.len() >= d.nrows();
            KalmanRecord { mode: idx + 1, lambda, sigma_min, sigma_max, det_kk: det_kkt(&k), pass }
        })
        .collect();
    if records.is_empty() {
        return KalmanReport {
            records,
            verdict: KalmanVerdict::Untested,
            c1_estimate: None,
            tail_trend: None,
            tail_decaying: false,
        };
    }
    let c1_estimate = records.iter().map(|r| r.det_kk).fold(f64::INFINITY, f64::min);
    let tail_trend = tail_slope(&records);
    let first_fail = records.iter().find(|r| !r.pass).map(|r| r.mode);
    let tail_decaying = tail_trend.is_some_and(|t| t < -TREND_TOLERANCE);
    let verdict = match first_fail {
        Some(mode) => KalmanVerdict::Fail { first_failing_mode: mode },
        None if tail_decaying => KalmanVerdict::Fail { first_failing_mode: records.last().unwrap().mode },
        None => KalmanVerdict::Pass,
    };
    KalmanReport { records, verdict, c1_estimate: Some(c1_estimate), tail_trend, tail_decaying }
}

fn tail_slope(records: &[KalmanRecord]) -> Option<f64> {
    if records.len() < 2 {
        return None;
    }
    let count = (records.len() / 4).max(2);
    let tail = &records[records.len() - count..];
    if tail.iter().any(|r| !(r.det_kk > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = tail.iter().map(|r| r.lambda.ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|r| r.det_kk.ln()).collect();
    let mx = xs.iter().sum::<f64>() / count as f64;
    let my = ys.iter().sum::<f64>() / count as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(if sxx > 0.0 { sxy / sxx } else { 0.0 })
}

/// Polynomial in monomial form, coefficients in ascending degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub coefficients: Vec<f64>,
}

impl Polynomial {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn degree_bound(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }
}

/// Fits the monomial coefficients of `f` from Chebyshev samples, assuming
/// `deg f <= max_degree`. Two extra samples detect a degree overflow.
pub fn fit_polynomial(f: impl Fn(f64) -> f64, max_degree: usize) -> Result<Polynomial, AlgebraError> {
    let fit_degree = max_degree + 2;
    let points = fit_degree + 1;
    let xs: Vec<f64> = (0..points)
        .map(|i| (std::f64::consts::PI * (2 * i + 1) as f64 / (2 * points) as f64).cos())
        .collect();
    let vander = DMatrix::from_fn(points, points, |r, c| xs[r].powi(c as i32));
    let rhs = DVector::from_iterator(points, xs.iter().map(|&x| f(x)));
    let coeffs = vander
        .lu()
        .solve(&rhs)
        .ok_or_else(|| AlgebraError::Dimension("singular Chebyshev Vandermonde system".into()))?;
    let scale = coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs())).max(f64::MIN_POSITIVE);
    for degree in (max_degree + 1)..=fit_degree {
        if coeffs[degree].abs() > 1e-8 * scale.max(1.0) {
            return Err(AlgebraError::DegreeOverflow { bound: max_degree, degree, coefficient: coeffs[degree] });
        }
    }
    Ok(Polynomial { coefficients: coeffs.iter().take(max_degree + 1).copied().collect() })
}

/// Coefficients of `p(lambda) = det(K(lambda) K(lambda)^T)`, degree at most `2n(n-1)`.
pub fn kalman_polynomial(
    d: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    degree_check: bool,
) -> Result<Polynomial, AlgebraError> {
    let n = d.nrows();
    let bound = 2 * n * (n - 1);
    let p = |lambda: f64| det_kkt(&kalman_matrix(lambda, d, a, b));
    match fit_polynomial(p, bound) {
        Err(AlgebraError::DegreeOverflow { .. }) if !degree_check => {
            // Refit without the overflow guard by accepting the truncated coefficients.
            let fit = fit_polynomial_unchecked(p, bound);
            Ok(fit)
        }
        other => other,
    }
}

fn fit_polynomial_unchecked(f: impl Fn(f64) -> f64, degree: usize) -> Polynomial {
    let points = degree + 1;
    let xs: Vec<f64> = (0..points)
        .map(|i| (std::f64::consts::PI * (2 * i + 1) as f64 / (2 * points) as f64).cos())
        .collect();
    let vander = DMatrix::from_fn(points, points, |r, c| xs[r].powi(c as i32));
    let rhs = DVector::from_iterator(points, xs.iter().map(|&x| f(x)));
    let coeffs = vander.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(points));
    Polynomial { coefficients: coeffs.iter().copied().collect() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub mode_cap: usize,
    /// Largest sampled `||f||^2 / sum_i lambda_i^{2k} |K_i^T a^i|^2`.
    pub sampled_max: f64,
    /// `max_{i <= cap} 1 / (lambda_i^{2k} sigma_min(K_i)^2)`, the supremum over bundles.
    pub modal_sup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RatioVerdict {
    Bounded,
    /// A nonzero bundle `a w_mode` with `K_mode^T a = 0`.
    UnobservableDirection { mode: usize, direction: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioReport {
    pub k: u32,
    pub rows: Vec<RatioRow>,
    pub verdict: RatioVerdict,
}

impl RatioReport {
    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.sampled_max).fold(0.0, f64::max)
    }

    /// Ratio of the last row's supremum to the first row's.
    pub fn trend(&self) -> Option<f64> {
        let first = self.rows.first()?;
        let last = self.rows.last()?;
        Some(last.modal_sup / first.modal_sup)
    }
}

/// Ratio of a single modal bundle `f = sum_i a^i w_i`; `None` when the
/// denominator vanishes for nonzero `f`.
pub fn bundle_ratio(
    eigenvalues: &[f64],
    kalman: &[DMatrix<f64>],
    bundle: &[Vec<f64>],
    k: u32,
) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((lambda, kmat), a) in eigenvalues.iter().zip(kalman).zip(bundle) {
        let a = DVector::from_column_slice(a);
        num += a.norm_squared();
        den += lambda.powi(2 * k as i32) * (kmat.transpose() * a).norm_squared();
    }
    if num == 0.0 {
        Some(0.0)
    } else if den > 0.0 && den.is_finite() {
        Some(num / den)
    } else {
        None
    }
}

/// Samples the modal ratio bound for each entry of `mode_caps`.
pub fn modal_ratio_test(
    eigenvalues: &[f64],
    d: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: u32,
    samples: usize,
    mode_caps: &[usize],
    seed: u64,
) -> Result<RatioReport, AlgebraError> {
    let n = d.nrows();
    let min = ((n - 1) * (n - 1)) as u32;
    if k < min {
        return Err(AlgebraError::ExponentTooSmall { k, min });
    }
    let cap_max = mode_caps.iter().copied().max().unwrap_or(0);
    if cap_max > eigenvalues.len() {
        return Err(AlgebraError::Dimension(format!(
            "mode cap {cap_max} exceeds {} available eigenvalues",
            eigenvalues.len()
        )));
    }
    let kalman: Vec<DMatrix<f64>> = eigenvalues[..cap_max].iter().map(|&l| kalman_matrix(l, d, a, b)).collect();

    // Kernel of K_i^T: left singular vector of a numerically rank-deficient K_i.
    for (i, kmat) in kalman.iter().enumerate() {
        let svd = kmat.clone().svd(true, false);
        let smax = svd.singular_values.max();
        let (pos, smin) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (p, &s)| if s < acc.1 { (p, s) } else { acc });
        let rank_deficient = svd.singular_values.len() < n || smin <= RANK_TOLERANCE * smax || smax == 0.0;
        if rank_deficient {
            let u = svd.u.expect("left singular vectors requested");
            let direction: Vec<f64> = if svd.singular_values.len() < n || smax == 0.0 {
                // Fewer singular values than rows (m*n < n cannot happen) or K = 0.
                (0..n).map(|r| if r == 0 { 1.0 } else { 0.0 }).collect()
            } else {
                u.column(pos).iter().copied().collect()
            };
            return Ok(RatioReport {
                k,
                rows: Vec::new(),
                verdict: RatioVerdict::UnobservableDirection { mode: i + 1, direction },
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(mode_caps.len());
    for &cap in mode_caps {
        let modal_sup = eigenvalues[..cap]
            .iter()
            .zip(&kalman)
            .map(|(l, kmat)| {
                let smin = kmat.clone().svd(false, false).singular_values.min();
                1.0 / (l.powi(2 * k as i32) * smin * smin)
            })
            .fold(0.0, f64::max);
        let mut sampled_max: f64 = 0.0;
        for _ in 0..samples {
            let bundle: Vec<Vec<f64>> = (0..cap)
                .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            match bundle_ratio(&eigenvalues[..cap], &kalman[..cap], &bundle, k) {
                Some(r) => sampled_max = sampled_max.max(r),
                None => {
                    return Ok(RatioReport {
                        k,
                        rows,
                        verdict: RatioVerdict::UnobservableDirection { mode: 0, direction: bundle.concat() },
                    })
                }
            }
        }
        rows.push(RatioRow { mode_cap: cap, sampled_max, modal_sup });
    }
    Ok(RatioReport { k, rows, verdict: RatioVerdict::Bounded })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolventReport {
    /// `sup |z| ||(z - lambda_j D)^{-1}||_2` over all sampled `z` and modes.
    pub sup: f64,
    pub worst_mode: usize,
    pub worst_z: Complex<f64>,
    pub samples: usize,
}

/// Sweeps `|z| ||(z - lambda_j D)^{-1}||_2` over the rays `arg z = +-theta`
/// and the negative real axis, `|z|` log-spaced in `[1e-2, 1e6]`.
pub fn resolvent_sector_check(
    d: &DMatrix<f64>,
    eigenvalues: &[f64],
    theta_sector: f64,
    z_samples: usize,
) -> Result<ResolventReport, AlgebraError> {
    let n = d.nrows();
    let max_arg = d.complex_eigenvalues().iter().map(|z| z.arg().abs()).fold(0.0, f64::max);
    if !(theta_sector > max_arg && theta_sector <= std::f64::consts::PI) {
        return Err(AlgebraError::InvalidSector { theta: theta_sector, max_arg });
    }
    let per_ray = z_samples.max(2);
    let angles = [theta_sector, -theta_sector, std::f64::consts::PI];
    let dc = d.map(|v| Complex::new(v, 0.0));
    let mut report =
        ResolventReport { sup: 0.0, worst_mode: 0, worst_z: Complex::new(0.0, 0.0), samples: 0 };
    for (j, &lambda) in eigenvalues.iter().enumerate() {
        for &angle in &angles {
            for s in 0..per_ray {
                let r = 10f64.powf(-2.0 + 8.0 * s as f64 / (per_ray - 1) as f64);
                let z = Complex::from_polar(r, angle);
                let mat = DMatrix::<Complex<f64>>::identity(n, n) * z - &dc * Complex::new(lambda, 0.0);
                let svals = mat.svd(false, false).singular_values;
                let (smin, smax) = (svals.min(), svals.max());
                if !(smin > 1e-13 * smax) {
                    return Err(AlgebraError::SingularResolvent { mode: j + 1, re: z.re, im: z.im });
                }
                let value = r / smin;
                report.samples += 1;
                if value > report.sup {
                    report.sup = value;
                    report.worst_mode = j + 1;
                    report.worst_z = z;
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModePolynomial {
    /// Ascending coefficients of `p_j(mu) = det(mu I + lambda_j D^T + A^T)`.
    pub coefficients: Vec<f64>,
    /// `||p_j(-(lambda_j D^T + A^T))||_2`.
    pub residual: f64,
    /// `||lambda_j D^T + A^T||_2`.
    pub operator_norm: f64,
}

impl ModePolynomial {
    /// Residual relative to `||lambda_j D^T + A^T||^n`.
    pub fn relative_residual(&self) -> f64 {
        let n = self.coefficients.len() as i32 - 1;
        let scale = self.operator_norm.powi(n);
        if scale > 0.0 {
            self.residual / scale
        } else {
            self.residual
        }
    }
}

/// Characteristic polynomial of the adjoint mode generator and its
/// Cayley-Hamilton residual.
pub fn mode_char_poly(lambda: f64, d: &DMatrix<f64>, a: &DMatrix<f64>) -> ModePolynomial {
    let n = d.nrows();
    let op = d.transpose() * lambda + a.transpose();
    let x = -&op;
    // Faddeev-LeVerrier for det(mu I - X).
    let mut coefficients = vec![0.0; n + 1];
    coefficients[n] = 1.0;
    let identity = DMatrix::<f64>::identity(n, n);
    let mut mk = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        mk = &x * &mk + &identity * coefficients[n - k + 1];
        coefficients[n - k] = -(&x * &mk).trace() / k as f64;
    }
    let mut horner = &identity * coefficients[n];
    for c in coefficients[..n].iter().rev() {
        horner = &horner * &x + &identity * *c;
    }
    let residual = spectral_norm(&horner);
    ModePolynomial { coefficients, residual, operator_norm: spectral_norm(&op) }
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jordan() -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        )
    }

    fn deficient() -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::identity(2, 2), DMatrix::zeros(2, 2), DMatrix::from_row_slice(2, 1, &[1.0, 0.0]))
    }

    #[test]
    fn jordan_kalman_matrix_at_one() {
        let (d, a, b) = jordan();
        let k = kalman_matrix(1.0, &d, &a, &b);
        assert_eq!(k, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 0.0]));
        assert!((k.determinant() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn deficient_kalman_has_zero_row() {
        let (d, a, b) = deficient();
        for lambda in [0.5, 3.0, 40.0] {
            let k = kalman_matrix(lambda, &d, &a, &b);
            assert_eq!(k, DMatrix::from_row_slice(2, 2, &[lambda, 1.0, 0.0, 0.0]));
        }
    }

    #[test]
    fn scalar_kalman_is_b() {
        let k = kalman_matrix(
            7.0,
            &DMatrix::from_element(1, 1, 2.0),
            &DMatrix::from_element(1, 1, 3.0),
            &DMatrix::from_element(1, 1, 1.0),
        );
        assert_eq!(k, DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn report_verdicts() {
        let lambdas: Vec<f64> = (1..=50).map(|j| (j as f64).powi(2)).collect();
        let (d, a, b) = jordan();
        let r = kalman_report(&lambdas, &d, &a, &b, 50);
        assert_eq!(r.verdict, KalmanVerdict::Pass);
        assert_eq!(r.records.len(), 50);
        for rec in &r.records {
            assert!(rec.det_kk >= rec.sigma_min.powi(4) * (1.0 - 1e-12));
        }
        let (d, a, b) = deficient();
        let r = kalman_report(&lambdas, &d, &a, &b, 50);
        assert_eq!(r.verdict, KalmanVerdict::Fail { first_failing_mode: 1 });
        let r = kalman_report(&lambdas, &d, &a, &b, 0);
        assert_eq!(r.verdict, KalmanVerdict::Untested);
        assert!(r.records.is_empty());
    }

    #[test]
    fn decaying_tail_fails() {
        let records: Vec<KalmanRecord> = (1..=8)
            .map(|i| {
                let lambda = i as f64;
                KalmanRecord { mode: i, lambda, sigma_min: 1.0, sigma_max: 1.0, det_kk: lambda.powi(-2), pass: true }
            })
            .collect();
        let slope = tail_slope(&records).unwrap();
        assert!((slope + 2.0).abs() < 1e-12);
    }

    #[test]
    fn csv_columns() {
        let (d, a, b) = jordan();
        let r = kalman_report(&[1.0, 2.0], &d, &a, &b, 2);
        let csv = r.to_csv();
        assert!(csv.starts_with("i,lambda_i,sigma_min,det_KK,pass\n1,1,"));
        assert!(csv.trim_end().ends_with("true"));
    }

    #[test]
    fn polynomials() {
        let (d, a, b) = jordan();
        let p = kalman_polynomial(&d, &a, &b, true).unwrap();
        assert_eq!(p.coefficients.len(), 5);
        let direct = det_kkt(&kalman_matrix(1.0, &d, &a, &b));
        assert!((p.eval(1.0) - direct).abs() < 1e-10);
        let (d, a, b) = deficient();
        let p = kalman_polynomial(&d, &a, &b, true).unwrap();
        assert!(p.coefficients.iter().all(|c| c.abs() < 1e-12));
        let one = DMatrix::from_element(1, 1, 1.0);
        let p = kalman_polynomial(&one, &DMatrix::zeros(1, 1), &one, true).unwrap();
        assert_eq!(p.coefficients.len(), 1);
        assert!((p.coefficients[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn degree_overflow_detected() {
        let err = fit_polynomial(|x| x.powi(5), 2).unwrap_err();
        assert!(matches!(err, AlgebraError::DegreeOverflow { bound: 2, .. }));
        let ok = fit_polynomial(|x| 3.0 * x * x - 1.0, 2).unwrap();
        assert!((ok.coefficients[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_test_rejects_small_k() {
        let (d, a, b) = jordan();
        let err = modal_ratio_test(&[1.0], &d, &a, &b, 0, 1, &[1], 0).unwrap_err();
        assert_eq!(err, AlgebraError::ExponentTooSmall { k: 0, min: 1 });
    }

    #[test]
    fn ratio_of_zero_bundle_is_zero() {
        let (d, a, b) = jordan();
        let k = vec![kalman_matrix(2.0, &d, &a, &b)];
        assert_eq!(bundle_ratio(&[2.0], &k, &[vec![0.0, 0.0]], 1), Some(0.0));
    }

    #[test]
    fn ratio_test_finds_witness_for_deficient() {
        let (d, a, b) = deficient();
        let r = modal_ratio_test(&[1.5, 4.0, 9.0], &d, &a, &b, 1, 10, &[3], 7).unwrap();
        match r.verdict {
            RatioVerdict::UnobservableDirection { mode, direction } => {
                assert_eq!(mode, 1);
                assert!(direction[0].abs() < 1e-14);
                assert!((direction[1].abs() - 1.0).abs() < 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scalar_resolvent_on_ray() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let theta = std::f64::consts::FRAC_PI_4;
        let r = resolvent_sector_check(&one, &[1.0], theta, 400).unwrap();
        // |z| / |z - 1| on arg z = pi/4 peaks at 1/sin(pi/4), attained at |z| = sqrt(2).
        assert!(r.sup <= std::f64::consts::SQRT_2 + 1e-12);
        assert!(r.sup > std::f64::consts::SQRT_2 - 1e-3);
        assert!(resolvent_sector_check(&one, &[1.0], 0.0, 10).is_err());
    }

    #[test]
    fn resolvent_tends_to_one_far_out() {
        let (d, _, _) = jordan();
        let mat = |r: f64| {
            let z = Complex::new(-r, 0.0);
            let dc = d.map(|v| Complex::new(v, 0.0));
            let m = DMatrix::<Complex<f64>>::identity(2, 2) * z - dc * Complex::new(1.0, 0.0);
            r / m.svd(false, false).singular_values.min()
        };
        assert!((mat(1e8) - 1.0).abs() < 1e-7);
        let r = resolvent_sector_check(&d, &[1.0, 4.0], std::f64::consts::FRAC_PI_2, 100).unwrap();
        assert!(r.sup.is_finite() && r.sup >= 1.0);
    }

    #[test]
    fn mode_polynomial_jordan() {
        let (d, a, _) = jordan();
        for lambda in [0.5, 2.0, 30.0] {
            let p = mode_char_poly(lambda, &d, &a);
            let want = [lambda * lambda - lambda, 2.0 * lambda, 1.0];
            for (c, w) in p.coefficients.iter().zip(want) {
                assert!((c - w).abs() < 1e-12 * (1.0 + w.abs()));
            }
            assert!(p.relative_residual() < 1e-10);
        }
    }

    #[test]
    fn mode_polynomial_scalar() {
        let p = mode_char_poly(3.0, &DMatrix::from_element(1, 1, 2.0), &DMatrix::from_element(1, 1, 0.5));
        assert_eq!(p.coefficients, vec![6.5, 1.0]);
        assert_eq!(p.residual, 0.0);
    }
}

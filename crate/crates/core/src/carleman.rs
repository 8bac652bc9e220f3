//! Weight functions for the one-equation Carleman estimate:
//!
//! `theta(t) = 1 / (t^4 (T - t)^4)`, `psi(x) = lambda (int_0^x y / a(y) dy - c)`,
//! `Psi(x) = exp(rho sigma(x)) - exp(2 rho ||sigma||)`, `phi = theta psi`, `Phi = theta Psi`,
//!
//! with the parameter constraints
//! `c > 4^n c0`, `rho > ln(4^n (c - c0) / (c - 4^n c0)) / ||sigma||` and
//! `exp(2 rho ||sigma||) / (c - c0) < lambda < 4^n / ((4^n - 1) c) (exp(2 rho ||sigma||) - exp(rho ||sigma||))`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{DegeneracyCoefficient, Interval};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CarlemanError {
    #[error("integral of x/a(x) did not settle: partial sums {last} and {previous} after {levels} dyadic levels")]
    IntegralDiverged { levels: usize, last: f64, previous: f64 },
    #[error("c0 must be positive and finite, got {0}")]
    InvalidC0(f64),
    #[error("no feasible (c, rho, lambda) on the search grid; tightest margin {margin}")]
    NoFeasibleParameters { margin: f64 },
    #[error("time {t} outside (0, {horizon})")]
    OutOfDomain { t: f64, horizon: f64 },
    #[error("omega0 = ({lo}, {hi}) must satisfy 0 < lo < hi < 1")]
    InvalidOmega0 { lo: f64, hi: f64 },
}

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

fn gauss_legendre(f: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    GL_NODES.iter().zip(&GL_WEIGHTS).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// Adaptive Gauss-Legendre on `[lo, hi]` (a smooth or piecewise-smooth integrand).
fn adaptive(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64, depth: usize) -> f64 {
    let whole = gauss_legendre(f, lo, hi);
    let mid = 0.5 * (lo + hi);
    let left = gauss_legendre(f, lo, mid);
    let right = gauss_legendre(f, mid, hi);
    if depth == 0 || (left + right - whole).abs() <= tol * (left + right).abs().max(1e-300) {
        left + right
    } else {
        adaptive(f, lo, mid, tol, depth - 1) + adaptive(f, mid, hi, tol, depth - 1)
    }
}

const DYADIC_LEVELS: usize = 400;

/// `int_0^x f` for an integrand that may be singular at 0: geometric pieces
/// `[x 2^{-k-1}, x 2^{-k}]` summed until the partial sums settle.
fn integral_from_zero(f: &impl Fn(f64) -> f64, x: f64) -> Result<f64, CarlemanError> {
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    let mut previous = 0.0;
    let mut hi = x;
    let mut quiet = 0;
    for level in 0..DYADIC_LEVELS {
        let lo = 0.5 * hi;
        let piece = adaptive(f, lo, hi, 1e-12, 30);
        previous = sum;
        sum += piece;
        if piece.abs() <= 1e-14 * sum.abs() {
            quiet += 1;
            if quiet >= 3 {
                return Ok(sum);
            }
        } else {
            quiet = 0;
        }
        hi = lo;
        if hi < f64::MIN_POSITIVE * 1e20 {
            return Err(CarlemanError::IntegralDiverged { levels: level + 1, last: sum, previous });
        }
    }
    Err(CarlemanError::IntegralDiverged { levels: DYADIC_LEVELS, last: sum, previous })
}

/// `c0 = int_0^1 x / a(x) dx`.
pub fn compute_c0(a: &DegeneracyCoefficient) -> Result<f64, CarlemanError> {
    integral_from_zero(&|x: f64| x / a.eval(x), 1.0)
}

/// Cumulative `int_0^x y / a(y) dy` cached on a graded grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeIntegral {
    xs: Vec<f64>,
    values: Vec<f64>,
}

impl CumulativeIntegral {
    pub fn new(a: &DegeneracyCoefficient, cells: usize) -> Result<Self, CarlemanError> {
        let cells = cells.max(2);
        let xs: Vec<f64> = (0..=cells).map(|i| (i as f64 / cells as f64).powi(2)).collect();
        let f = |y: f64| y / a.eval(y);
        let mut values = vec![0.0; cells + 1];
        values[1] = integral_from_zero(&f, xs[1])?;
        for i in 2..=cells {
            values[i] = values[i - 1] + adaptive(&f, xs[i - 1], xs[i], 1e-13, 30);
        }
        Ok(CumulativeIntegral { xs, values })
    }

    pub fn total(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn eval(&self, a: &DegeneracyCoefficient, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let f = |y: f64| y / a.eval(y);
        let i = self.xs.partition_point(|&g| g <= x).saturating_sub(1);
        if i == 0 {
            return integral_from_zero(&f, x).unwrap_or(f64::NAN);
        }
        if x == self.xs[i] {
            return self.values[i];
        }
        self.values[i] + adaptive(&f, self.xs[i], x, 1e-13, 30)
    }
}

/// Piecewise-quintic `C^2` bump on `[0, 1]` peaking at 1 at `peak`.
///
/// Each side is `q(s) = 2s - (2 + k/2) s^3 + (1 + k) s^4 - (k/2) s^5` with `s`
/// the scaled distance from the nearer endpoint; `q(0) = 0`, `q'(0) = 2`,
/// `q''(0) = 0`, `q(1) = 1`, `q'(1) = 0`, `q''(1) = -k`. The curvatures are
/// matched at the peak so the second derivative is continuous.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sigma {
    peak: f64,
    kappa_left: f64,
    kappa_right: f64,
}

fn quintic(k: f64, s: f64) -> [f64; 3] {
    let (c3, c4, c5) = (-2.0 - 0.5 * k, 1.0 + k, -0.5 * k);
    let v = s * (2.0 + s * s * (c3 + s * (c4 + s * c5)));
    let d = 2.0 + s * s * (3.0 * c3 + s * (4.0 * c4 + 5.0 * c5 * s));
    let dd = s * (6.0 * c3 + s * (12.0 * c4 + 20.0 * c5 * s));
    [v, d, dd]
}

impl Sigma {
    pub fn new(peak: f64) -> Self {
        let wide = peak.max(1.0 - peak);
        Sigma {
            peak,
            kappa_left: 2.0 * peak * peak / (wide * wide),
            kappa_right: 2.0 * (1.0 - peak) * (1.0 - peak) / (wide * wide),
        }
    }

    pub fn peak(&self) -> f64 {
        self.peak
    }

    /// `[sigma, sigma_x, sigma_xx]` at `x`.
    pub fn eval_all(&self, x: f64) -> [f64; 3] {
        let m = self.peak;
        if x <= m {
            let [v, d, dd] = quintic(self.kappa_left, x / m);
            [v, d / m, dd / (m * m)]
        } else {
            let w = 1.0 - m;
            let [v, d, dd] = quintic(self.kappa_right, (1.0 - x) / w);
            [v, -d / w, dd / (w * w)]
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_all(x)[0]
    }

    pub fn sup_norm(&self) -> f64 {
        1.0
    }

    pub fn nodal(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaCertificate {
    pub critical_point: f64,
    /// Minimum of `|sigma_x|` on the sampled points outside omega0.
    pub min_slope_outside: f64,
    /// Minimum of `sigma` on `[0.1, 0.9]`.
    pub min_interior: f64,
    pub boundary_values: (f64, f64),
    /// Largest sampled jump of `sigma_xx` across the peak.
    pub curvature_jump: f64,
    pub monotone: bool,
}

/// Builds `sigma` with its single critical point at the midpoint of `omega0`.
pub fn build_sigma(omega0: Interval) -> Result<(Sigma, SigmaCertificate), CarlemanError> {
    if !(omega0.lo > 0.0 && omega0.lo < omega0.hi && omega0.hi < 1.0) {
        return Err(CarlemanError::InvalidOmega0 { lo: omega0.lo, hi: omega0.hi });
    }
    let sigma = Sigma::new(omega0.midpoint());
    let samples = 20_000;
    let mut min_slope_outside = f64::INFINITY;
    let mut min_interior = f64::INFINITY;
    let mut monotone = true;
    let mut prev = sigma.eval(0.0);
    for i in 1..=samples {
        let x = i as f64 / samples as f64;
        let [v, d, _] = sigma.eval_all(x);
        if !omega0.contains(x) {
            min_slope_outside = min_slope_outside.min(d.abs());
        }
        if (0.1..=0.9).contains(&x) {
            min_interior = min_interior.min(v);
        }
        let rising = x <= sigma.peak;
        if (rising && v <= prev) || (!rising && v >= prev && x > sigma.peak + 1.0 / samples as f64) {
            monotone = false;
        }
        prev = v;
    }
    let m = sigma.peak;
    let h = 1e-9;
    let curvature_jump = (sigma.eval_all(m - h)[2] - sigma.eval_all(m + h)[2]).abs();
    let certificate = SigmaCertificate {
        critical_point: m,
        min_slope_outside,
        min_interior,
        boundary_values: (sigma.eval(0.0), sigma.eval(1.0)),
        curvature_jump,
        monotone,
    };
    Ok((sigma, certificate))
}

/// Central half of `omega`, a subinterval compactly contained in it.
pub fn default_omega0(omega: Interval) -> Interval {
    let quarter = 0.25 * omega.len();
    Interval::new(omega.lo + quarter, omega.hi - quarter)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanParams {
    pub n: usize,
    pub c0: f64,
    pub c: f64,
    pub rho: f64,
    pub lambda_w: f64,
    pub sigma: Sigma,
    pub sigma_sup: f64,
}

/// Slacks of the five parameter inequalities, each `> 0` when it holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSlack {
    /// `c - 4^n c0`.
    pub c_above_threshold: f64,
    /// `c - c0`.
    pub c_above_c0: f64,
    /// `rho - ln(4^n (c - c0) / (c - 4^n c0)) / ||sigma||`.
    pub rho_margin: f64,
    /// `lambda - exp(2 rho ||sigma||) / (c - c0)`.
    pub lambda_lower: f64,
    /// `4^n / ((4^n - 1) c) (exp(2 rho ||sigma||) - exp(rho ||sigma||)) - lambda`.
    pub lambda_upper: f64,
}

impl ParamSlack {
    pub fn min(&self) -> f64 {
        [self.c_above_threshold, self.c_above_c0, self.rho_margin, self.lambda_lower, self.lambda_upper]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }
}

fn four_pow(n: usize) -> f64 {
    4f64.powi(n as i32)
}

fn rho_threshold(n: usize, c0: f64, c: f64, sup: f64) -> f64 {
    let q = four_pow(n);
    (q * (c - c0) / (c - q * c0)).ln() / sup
}

fn lambda_bounds(n: usize, c0: f64, c: f64, rho: f64, sup: f64) -> (f64, f64) {
    let q = four_pow(n);
    let e1 = (rho * sup).exp();
    let e2 = (2.0 * rho * sup).exp();
    (e2 / (c - c0), q / ((q - 1.0) * c) * (e2 - e1))
}

impl CarlemanParams {
    pub fn slack(&self) -> ParamSlack {
        let q = four_pow(self.n);
        let (lo, hi) = lambda_bounds(self.n, self.c0, self.c, self.rho, self.sigma_sup);
        ParamSlack {
            c_above_threshold: self.c - q * self.c0,
            c_above_c0: self.c - self.c0,
            rho_margin: self.rho - rho_threshold(self.n, self.c0, self.c, self.sigma_sup),
            lambda_lower: self.lambda_w - lo,
            lambda_upper: hi - self.lambda_w,
        }
    }

    pub fn lambda_interval(&self) -> (f64, f64) {
        lambda_bounds(self.n, self.c0, self.c, self.rho, self.sigma_sup)
    }
}

const C_GRID: usize = 64;
const RHO_MARGIN: f64 = 1.1;

/// Searches `c` over `(4^n c0, 64 4^n c0]`, sets `rho` 10% above its threshold
/// and takes `lambda` at the midpoint of its interval; keeps the candidate with
/// the largest minimum relative slack.
pub fn select_parameters(n: usize, c0: f64, sigma: Sigma) -> Result<CarlemanParams, CarlemanError> {
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(CarlemanError::InvalidC0(c0));
    }
    let q = four_pow(n);
    let sup = sigma.sup_norm();
    let mut best: Option<(f64, CarlemanParams)> = None;
    let mut tightest = f64::NEG_INFINITY;
    for k in 1..=C_GRID {
        let c = q * c0 * (1.0 + 63.0 * k as f64 / C_GRID as f64);
        let rho = RHO_MARGIN * rho_threshold(n, c0, c, sup);
        let (lo, hi) = lambda_bounds(n, c0, c, rho, sup);
        let params = CarlemanParams { n, c0, c, rho, lambda_w: 0.5 * (lo + hi), sigma, sigma_sup: sup };
        let s = params.slack();
        let relative = [
            s.c_above_threshold / (q * c0),
            s.c_above_c0 / c0,
            s.rho_margin / rho.abs().max(1e-300),
            s.lambda_lower / lo,
            s.lambda_upper / hi,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
        tightest = tightest.max(relative);
        if s.min() >= 1e-9 && relative.is_finite() && best.as_ref().is_none_or(|(r, _)| relative > *r) {
            best = Some((relative, params));
        }
    }
    best.map(|(_, p)| p).ok_or(CarlemanError::NoFeasibleParameters { margin: tightest })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub theta: f64,
    pub psi: f64,
    pub phi: f64,
    pub big_psi: f64,
    pub big_phi: f64,
}

/// Evaluator with the cumulative integral cached.
#[derive(Debug, Clone)]
pub struct WeightField<'a> {
    params: &'a CarlemanParams,
    a: &'a DegeneracyCoefficient,
    cumulative: CumulativeIntegral,
    horizon: f64,
}

pub fn theta(t: f64, horizon: f64) -> Result<f64, CarlemanError> {
    if !(t > 0.0 && t < horizon) {
        return Err(CarlemanError::OutOfDomain { t, horizon });
    }
    Ok(1.0 / (t.powi(4) * (horizon - t).powi(4)))
}

impl<'a> WeightField<'a> {
    pub fn new(params: &'a CarlemanParams, a: &'a DegeneracyCoefficient, horizon: f64) -> Result<Self, CarlemanError> {
        Ok(WeightField { params, a, cumulative: CumulativeIntegral::new(a, 512)?, horizon })
    }

    pub fn psi(&self, x: f64) -> f64 {
        self.params.lambda_w * (self.cumulative.eval(self.a, x) - self.params.c)
    }

    /// `psi_x = lambda x / a(x)`.
    pub fn psi_x(&self, x: f64) -> f64 {
        self.params.lambda_w * x / self.a.eval(x)
    }

    pub fn big_psi(&self, x: f64) -> f64 {
        let p = self.params;
        (p.rho * p.sigma.eval(x)).exp() - (2.0 * p.rho * p.sigma_sup).exp()
    }

    pub fn eval(&self, t: f64, x: f64) -> Result<Weights, CarlemanError> {
        let theta = theta(t, self.horizon)?;
        let psi = self.psi(x);
        let big_psi = self.big_psi(x);
        Ok(Weights { theta, psi, phi: theta * psi, big_psi, big_phi: theta * big_psi })
    }

    /// `x,psi,Psi` on a uniform grid.
    pub fn space_csv(&self, points: usize) -> String {
        let mut s = String::from("x,psi,Psi\n");
        for i in 0..=points {
            let x = i as f64 / points as f64;
            let _ = writeln!(s, "{x},{},{}", self.psi(x), self.big_psi(x));
        }
        s
    }

    /// `t,theta` on interior points `T (i + 1/2) / points`.
    pub fn time_csv(&self, points: usize) -> String {
        let mut s = String::from("t,theta\n");
        for t in interior_times(self.horizon, points) {
            let _ = writeln!(s, "{t},{}", theta(t, self.horizon).unwrap_or(f64::NAN));
        }
        s
    }

    /// `phi` sampled on `times x xs` (rows are times).
    pub fn phi_grid(&self, times: &[f64], xs: &[f64]) -> Result<Vec<Vec<f64>>, CarlemanError> {
        let psi: Vec<f64> = xs.iter().map(|&x| self.psi(x)).collect();
        times
            .iter()
            .map(|&t| {
                let th = theta(t, self.horizon)?;
                Ok(psi.iter().map(|p| th * p).collect())
            })
            .collect()
    }
}

pub fn interior_times(horizon: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| horizon * (i as f64 + 0.5) / points as f64).collect()
}

pub fn weights_eval(
    params: &CarlemanParams,
    a: &DegeneracyCoefficient,
    t: f64,
    x: f64,
    horizon: f64,
) -> Result<Weights, CarlemanError> {
    WeightField::new(params, a, horizon)?.eval(t, x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightViolation {
    pub check: &'static str,
    pub t: f64,
    pub x: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightReport {
    pub points: usize,
    pub violations: Vec<WeightViolation>,
    /// `theta(T/4) / theta(T/2)`.
    pub theta_quarter_ratio: f64,
    pub max_phi: f64,
    pub max_big_phi: f64,
}

impl WeightReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Sign and ordering checks on an `nt x nx` grid of interior times and `[0, 1]`.
pub fn verify_weights(
    params: &CarlemanParams,
    a: &DegeneracyCoefficient,
    horizon: f64,
    nt: usize,
    nx: usize,
) -> Result<WeightReport, CarlemanError> {
    let field = WeightField::new(params, a, horizon)?;
    let times = interior_times(horizon, nt);
    let xs: Vec<f64> = (0..nx).map(|i| i as f64 / (nx - 1).max(1) as f64).collect();
    let mid = theta(0.5 * horizon, horizon)?;
    let mut violations = Vec::new();
    let mut max_phi = f64::NEG_INFINITY;
    let mut max_big_phi = f64::NEG_INFINITY;
    let psi: Vec<f64> = xs.iter().map(|&x| field.psi(x)).collect();
    let big_psi: Vec<f64> = xs.iter().map(|&x| field.big_psi(x)).collect();
    for w in xs.windows(2).zip(psi.windows(2)) {
        let ((_, x1), p) = ((w.0[0], w.0[1]), w.1);
        if !(p[1] > p[0]) {
            violations.push(WeightViolation { check: "psi increasing", t: f64::NAN, x: x1, value: p[1] - p[0] });
        }
    }
    for &t in &times {
        let th = theta(t, horizon)?;
        if th < mid * (1.0 - 1e-12) {
            violations.push(WeightViolation { check: "theta >= theta(T/2)", t, x: f64::NAN, value: th - mid });
        }
        for (i, &x) in xs.iter().enumerate() {
            let phi = th * psi[i];
            let big_phi = th * big_psi[i];
            max_phi = max_phi.max(phi);
            max_big_phi = max_big_phi.max(big_phi);
            if !(phi < 0.0) {
                violations.push(WeightViolation { check: "phi < 0", t, x, value: phi });
            }
            if !(big_phi < 0.0) {
                violations.push(WeightViolation { check: "Phi < 0", t, x, value: big_phi });
            }
        }
    }
    let delta = horizon / 100.0;
    for &x in &xs {
        for t in [delta, horizon - delta] {
            let near = field.eval(t, x)?.phi;
            let centre = field.eval(0.5 * horizon, x)?.phi;
            if !(near < centre) {
                violations.push(WeightViolation { check: "phi blows down at endpoints", t, x, value: near - centre });
            }
        }
    }
    Ok(WeightReport {
        points: times.len() * xs.len(),
        violations,
        theta_quarter_ratio: theta(0.25 * horizon, horizon)? / mid,
        max_phi,
        max_big_phi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{classify_degeneracy, CoefficientProfile, CERTIFICATION_GRID};

    fn coefficient(profile: CoefficientProfile) -> DegeneracyCoefficient {
        classify_degeneracy(profile, CERTIFICATION_GRID).unwrap()
    }

    #[test]
    fn c0_examples() {
        let lin = coefficient(CoefficientProfile::power(1.0));
        assert!((compute_c0(&lin).unwrap() - 1.0).abs() < 1e-10);
        let sqrt = coefficient(CoefficientProfile::power(0.5));
        assert!((compute_c0(&sqrt).unwrap() - 2.0 / 3.0).abs() < 1e-10);
        let twice = coefficient(CoefficientProfile::power(1.0).scaled(2.0));
        assert!((compute_c0(&twice).unwrap() - 0.5).abs() < 1e-10);
        let steep = coefficient(CoefficientProfile::power(1.8));
        assert!((compute_c0(&steep).unwrap() - 1.0 / 0.2).abs() < 1e-8);
    }

    #[test]
    fn divergent_integral_reported() {
        let err = integral_from_zero(&|x: f64| 1.0 / x, 1.0).unwrap_err();
        assert!(matches!(err, CarlemanError::IntegralDiverged { .. }));
    }

    #[test]
    fn quintic_conditions() {
        for k in [0.5, 2.0, 4.0] {
            let [v0, d0, dd0] = quintic(k, 0.0);
            let [v1, d1, dd1] = quintic(k, 1.0);
            assert_eq!((v0, d0, dd0), (0.0, 2.0, 0.0));
            assert!((v1 - 1.0).abs() < 1e-15 && d1.abs() < 1e-14 && (dd1 + k).abs() < 1e-13);
        }
    }

    #[test]
    fn sigma_shape() {
        let (sigma, cert) = build_sigma(Interval::new(0.45, 0.55)).unwrap();
        assert_eq!(cert.critical_point, 0.5);
        assert!(sigma.eval_all(0.25)[1] > 0.0);
        assert!(sigma.eval_all(0.75)[1] < 0.0);
        assert_eq!(cert.boundary_values, (0.0, 0.0));
        assert!(cert.min_interior > 0.0);
        assert!(cert.min_slope_outside > 0.0);
        assert!(cert.monotone);
        assert!(cert.curvature_jump < 1e-6);
        assert_eq!(sigma.eval(0.5), 1.0);
    }

    #[test]
    fn sigma_asymmetric_is_c2() {
        let (sigma, cert) = build_sigma(Interval::new(0.6, 0.8)).unwrap();
        assert!(cert.monotone && cert.min_slope_outside > 0.0);
        let m = sigma.peak();
        let h = 1e-10;
        let left = sigma.eval_all(m - h);
        let right = sigma.eval_all(m + h);
        assert!((left[1] - right[1]).abs() < 1e-5);
        assert!((left[2] - right[2]).abs() < 1e-5);
        assert!(build_sigma(Interval::new(0.0, 0.5)).is_err());
    }

    #[test]
    fn parameter_examples() {
        let sigma = Sigma::new(0.5);
        let p = select_parameters(2, 1.0, sigma).unwrap();
        assert!(p.c > 16.0);
        assert!(p.slack().min() >= 1e-9);
        let p = select_parameters(1, 1.0, sigma).unwrap();
        assert!(p.c > 4.0);
        let (lo, hi) = p.lambda_interval();
        assert!(lo < p.lambda_w && p.lambda_w < hi);
        assert_eq!(select_parameters(2, 0.0, sigma).unwrap_err(), CarlemanError::InvalidC0(0.0));
    }

    #[test]
    fn weight_values() {
        let a = coefficient(CoefficientProfile::power(1.0));
        let params = select_parameters(2, compute_c0(&a).unwrap(), Sigma::new(0.55)).unwrap();
        let field = WeightField::new(&params, &a, 0.5).unwrap();
        assert!((field.psi(0.0) + params.lambda_w * params.c).abs() < 1e-9 * params.lambda_w * params.c);
        let psi1 = params.lambda_w * (params.c0 - params.c);
        assert!((field.psi(1.0) - psi1).abs() < 1e-9 * psi1.abs());
        for i in 0..=20 {
            assert!(field.big_psi(i as f64 / 20.0) < 0.0);
        }
        for i in 1..=9 {
            let x = 0.1 * i as f64 + 0.05;
            let h = 1e-5;
            let fd = (field.psi(x + h) - field.psi(x - h)) / (2.0 * h);
            assert!((fd * a.eval(x) / x - params.lambda_w).abs() < 1e-6 * params.lambda_w);
        }
        assert!(matches!(field.eval(0.0, 0.5), Err(CarlemanError::OutOfDomain { .. })));
        assert!(field.eval(0.5, 0.5).is_err());
        let w = weights_eval(&params, &a, 0.25, 0.3, 0.5).unwrap();
        assert!((w.phi - w.theta * w.psi).abs() == 0.0 && w.big_phi < 0.0);
    }

    #[test]
    fn verify_passes_and_detects_tampering() {
        let a = coefficient(CoefficientProfile::power(1.0));
        let params = select_parameters(2, compute_c0(&a).unwrap(), Sigma::new(0.55)).unwrap();
        let report = verify_weights(&params, &a, 0.5, 100, 100).unwrap();
        assert!(report.passed(), "{:?}", report.violations.first());
        assert!(report.theta_quarter_ratio > 1.0);
        let tampered = CarlemanParams { c: 0.5 * params.c0, ..params.clone() };
        let report = verify_weights(&tampered, &a, 0.5, 10, 11).unwrap();
        assert!(report.violations.iter().any(|v| v.check == "phi < 0" && v.x == 1.0));
    }

    #[test]
    fn csv_dumps() {
        let a = coefficient(CoefficientProfile::power(1.0));
        let params = select_parameters(2, 1.0, Sigma::new(0.5)).unwrap();
        let field = WeightField::new(&params, &a, 0.5).unwrap();
        assert!(field.space_csv(4).starts_with("x,psi,Psi\n0,"));
        assert_eq!(field.time_csv(4).lines().count(), 5);
    }
}

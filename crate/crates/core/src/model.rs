//! Problem description: diffusion matrix, degenerate coefficient, coupling and
//! control matrices, control region and horizon.
//!
//! Everything here is validated once at construction and immutable afterwards.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix};
use serde::Deserialize;
use thiserror::Error;

/// Number of points in the geometric certification grid on (0, 1].
pub const CERTIFICATION_GRID: usize = 10_000;
/// Smallest abscissa of the certification grid.
pub const GRID_FLOOR: f64 = 1e-8;
/// Multiplicative safety margin applied to the grid maximum of `x a'(x) / a(x)`.
pub const K_MARGIN: f64 = 1.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("diffusion matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("diffusion matrix is not coercive: symmetric part has minimal eigenvalue {alpha0}")]
    NotCoercive { alpha0: f64 },
    #[error("diffusion matrix has eigenvalue {re}{im:+}i with nonpositive real part")]
    NonPositiveSpectrum { re: f64, im: f64 },
    #[error("coefficient is not degenerate: a(0) = {a0} is not negligible against max a = {a_max}")]
    NotDegenerate { a0: f64, a_max: f64 },
    #[error("coefficient must be positive on (0,1], found a({x}) = {value}")]
    NonPositiveCoefficient { x: f64, value: f64 },
    #[error("coefficient is too degenerate: K = {k} >= 2")]
    TooDegenerate { k: f64 },
    #[error("no admissible theta: a(x)/x^theta is not nondecreasing near 0 for any sampled theta in {lo}..{hi}")]
    NoAdmissibleTheta { lo: f64, hi: f64 },
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
}

impl ModelError {
    fn field(field: &str, reason: impl Into<String>) -> Self {
        ModelError::InvalidField { field: field.to_string(), reason: reason.into() }
    }
}

/// Summary of one eigenvalue cluster of the diffusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBlockInfo {
    pub value: Complex<f64>,
    pub multiplicity: usize,
    pub largest_block: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionMatrix {
    entries: DMatrix<f64>,
    alpha0: f64,
    eigen_info: Vec<EigenBlockInfo>,
    diagonalizable: bool,
}

impl DiffusionMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Coercivity constant: minimal eigenvalue of the symmetric part.
    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn eigen_info(&self) -> &[EigenBlockInfo] {
        &self.eigen_info
    }

    pub fn is_diagonalizable(&self) -> bool {
        self.diagonalizable
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Largest |arg d| over the eigenvalues d.
    pub fn max_abs_arg(&self) -> f64 {
        self.eigen_info.iter().map(|e| e.value.arg().abs()).fold(0.0, f64::max)
    }
}

/// Checks coercivity and the spectrum of `entries`, and records the Jordan structure.
pub fn validate_diffusion(entries: &DMatrix<f64>) -> Result<DiffusionMatrix, ModelError> {
    let (rows, cols) = entries.shape();
    if rows != cols || rows == 0 {
        return Err(ModelError::NotSquare { rows, cols });
    }
    let n = rows;
    let eigenvalues = entries.complex_eigenvalues();
    if let Some(bad) = eigenvalues.iter().find(|z| z.re <= 0.0) {
        return Err(ModelError::NonPositiveSpectrum { re: bad.re, im: bad.im });
    }
    let sym = (entries + entries.transpose()) * 0.5;
    let alpha0 = sym.symmetric_eigenvalues().min();
    if alpha0 <= 0.0 {
        return Err(ModelError::NotCoercive { alpha0 });
    }

    let eigen_info = jordan_summary(entries, eigenvalues.as_slice());
    let diagonalizable = eigen_info.iter().all(|e| e.largest_block == 1);
    debug_assert_eq!(eigen_info.iter().map(|e| e.multiplicity).sum::<usize>(), n);
    Ok(DiffusionMatrix { entries: entries.clone(), alpha0, eigen_info, diagonalizable })
}

fn jordan_summary(entries: &DMatrix<f64>, eigenvalues: &[Complex<f64>]) -> Vec<EigenBlockInfo> {
    let n = entries.nrows();
    let scale = entries.norm().max(1.0);
    // Defective eigenvalues split by O(eps^(1/k)); cluster generously.
    let cluster_tol = 1e-5 * scale;
    let mut clusters: Vec<Vec<Complex<f64>>> = Vec::new();
    for &z in eigenvalues {
        match clusters.iter_mut().find(|c| (c[0] - z).norm() <= cluster_tol) {
            Some(c) => c.push(z),
            None => clusters.push(vec![z]),
        }
    }
    let complex_entries = entries.map(|v| Complex::new(v, 0.0));
    clusters
        .into_iter()
        .map(|c| {
            let k = c.len();
            let value = c.iter().sum::<Complex<f64>>() / k as f64;
            let shifted = &complex_entries - DMatrix::<Complex<f64>>::identity(n, n) * value;
            // Smallest power s with nullity((D - d)^s) = k is the largest block size.
            let mut power = DMatrix::<Complex<f64>>::identity(n, n);
            let mut largest_block = k;
            for s in 1..=k {
                power = &power * &shifted;
                let tol = 1e-6 * scale.powi(s as i32);
                let svals = power.clone().svd(false, false).singular_values;
                let nullity = svals.iter().filter(|&&v| v <= tol).count();
                if nullity >= k {
                    largest_block = s;
                    break;
                }
            }
            EigenBlockInfo { value, multiplicity: k, largest_block }
        })
        .collect()
}

/// Degeneracy class of the coefficient `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegeneracyClass {
    /// Weakly degenerate: Dirichlet conditions at both ends.
    Weak,
    /// Strongly degenerate: Dirichlet at 1, `(a y_x)(0) = 0` at 0.
    Strong,
}

impl fmt::Display for DegeneracyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DegeneracyClass::Weak => write!(f, "WD"),
            DegeneracyClass::Strong => write!(f, "SD"),
        }
    }
}

/// Boundary operator derived from the degeneracy class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    DirichletBoth,
    NaturalAtZero,
}

impl From<DegeneracyClass> for Boundary {
    fn from(class: DegeneracyClass) -> Self {
        match class {
            DegeneracyClass::Weak => Boundary::DirichletBoth,
            DegeneracyClass::Strong => Boundary::NaturalAtZero,
        }
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Pointwise description of a(x).
#[derive(Clone)]
pub enum CoefficientProfile {
    /// `a(x) = scale * x^exponent`.
    Power { scale: f64, exponent: f64 },
    /// Piecewise power law through the breakpoints `(x_i, a_i)`, log-log linear
    /// between them and extended toward 0 with the first segment's exponent.
    Table { x: Vec<f64>, values: Vec<f64> },
    Custom { a: ScalarFn, da: ScalarFn, label: String },
}

impl fmt::Debug for CoefficientProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientProfile::Power { scale, exponent } => {
                write!(f, "Power {{ scale: {scale}, exponent: {exponent} }}")
            }
            CoefficientProfile::Table { x, values } => {
                write!(f, "Table {{ x: {x:?}, values: {values:?} }}")
            }
            CoefficientProfile::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

impl PartialEq for CoefficientProfile {
    fn eq(&self, other: &Self) -> bool {
        use CoefficientProfile::*;
        match (self, other) {
            (Power { scale: s1, exponent: e1 }, Power { scale: s2, exponent: e2 }) => {
                s1 == s2 && e1 == e2
            }
            (Table { x: x1, values: v1 }, Table { x: x2, values: v2 }) => x1 == x2 && v1 == v2,
            (Custom { a: a1, da: d1, .. }, Custom { a: a2, da: d2, .. }) => {
                Arc::ptr_eq(a1, a2) && Arc::ptr_eq(d1, d2)
            }
            _ => false,
        }
    }
}

impl CoefficientProfile {
    pub fn power(exponent: f64) -> Self {
        CoefficientProfile::Power { scale: 1.0, exponent }
    }

    pub fn custom(
        label: impl Into<String>,
        a: impl Fn(f64) -> f64 + Send + Sync + 'static,
        da: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CoefficientProfile::Custom { a: Arc::new(a), da: Arc::new(da), label: label.into() }
    }

    /// Returns a copy multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            CoefficientProfile::Power { scale, exponent } => {
                CoefficientProfile::Power { scale: scale * c, exponent: *exponent }
            }
            CoefficientProfile::Table { x, values } => CoefficientProfile::Table {
                x: x.clone(),
                values: values.iter().map(|v| v * c).collect(),
            },
            CoefficientProfile::Custom { a, da, label } => {
                let (a, da) = (a.clone(), da.clone());
                CoefficientProfile::Custom {
                    a: Arc::new(move |x| c * a(x)),
                    da: Arc::new(move |x| c * da(x)),
                    label: format!("{c}*{label}"),
                }
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            CoefficientProfile::Power { scale, exponent } => {
                if x <= 0.0 {
                    0.0
                } else {
                    scale * x.powf(*exponent)
                }
            }
            CoefficientProfile::Table { x: xs, values } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let (i, p) = table_segment(xs, values, x);
                values[i] * (x / xs[i]).powf(p)
            }
            CoefficientProfile::Custom { a, .. } => a(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            CoefficientProfile::Power { scale, exponent } => {
                if x <= 0.0 {
                    if *exponent > 1.0 {
                        0.0
                    } else if *exponent == 1.0 {
                        *scale
                    } else {
                        f64::INFINITY
                    }
                } else {
                    scale * exponent * x.powf(exponent - 1.0)
                }
            }
            CoefficientProfile::Table { x: xs, values } => {
                let (_, p) = table_segment(xs, values, x.max(f64::MIN_POSITIVE));
                p * self.eval(x) / x
            }
            CoefficientProfile::Custom { da, .. } => da(x),
        }
    }

    /// `x a'(x) / a(x)`, computed in closed form where available.
    pub fn log_slope(&self, x: f64) -> f64 {
        match self {
            CoefficientProfile::Power { exponent, .. } => *exponent,
            CoefficientProfile::Table { x: xs, values } => table_segment(xs, values, x).1,
            CoefficientProfile::Custom { a, da, .. } => x * da(x) / a(x),
        }
    }
}

fn table_segment(xs: &[f64], values: &[f64], x: f64) -> (usize, f64) {
    let last = xs.len() - 2;
    let seg = xs[1..].iter().position(|&b| x < b).unwrap_or(last).min(last);
    let p = (values[seg + 1] / values[seg]).ln() / (xs[seg + 1] / xs[seg]).ln();
    (seg, p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegeneracyCoefficient {
    profile: CoefficientProfile,
    class: DegeneracyClass,
    k_grid: f64,
    k: f64,
    theta: Option<f64>,
    grid: CertificationGrid,
}

/// Geometric grid on which the pointwise conditions were certified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificationGrid {
    pub points: usize,
    pub floor: f64,
}

impl CertificationGrid {
    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.points.max(2);
        let lf = self.floor.ln();
        (0..n).map(move |i| (lf * (1.0 - i as f64 / (n - 1) as f64)).exp())
    }
}

impl DegeneracyCoefficient {
    pub fn profile(&self) -> &CoefficientProfile {
        &self.profile
    }
    pub fn class(&self) -> DegeneracyClass {
        self.class
    }
    /// K with the safety margin applied (used for class assignment).
    pub fn k(&self) -> f64 {
        self.k
    }
    /// Raw grid maximum of `x a'(x) / a(x)`.
    pub fn k_grid(&self) -> f64 {
        self.k_grid
    }
    pub fn theta(&self) -> Option<f64> {
        self.theta
    }
    pub fn grid(&self) -> CertificationGrid {
        self.grid
    }
    pub fn boundary(&self) -> Boundary {
        self.class.into()
    }
    pub fn eval(&self, x: f64) -> f64 {
        self.profile.eval(x)
    }
    pub fn derivative(&self, x: f64) -> f64 {
        self.profile.derivative(x)
    }
}

/// Certifies the degeneracy conditions on a geometric grid clustered at 0.
pub fn classify_degeneracy(
    profile: CoefficientProfile,
    grid_density: usize,
) -> Result<DegeneracyCoefficient, ModelError> {
    let grid = CertificationGrid { points: grid_density.max(16), floor: GRID_FLOOR };
    let mut a_max: f64 = 0.0;
    let mut k_grid = f64::NEG_INFINITY;
    for x in grid.nodes() {
        let ax = profile.eval(x);
        if !(ax > 0.0) || !ax.is_finite() {
            return Err(ModelError::NonPositiveCoefficient { x, value: ax });
        }
        a_max = a_max.max(ax);
        k_grid = k_grid.max(profile.log_slope(x));
    }
    let a0 = match profile.eval(0.0) {
        v if v.is_finite() => v,
        _ => profile.eval(f64::MIN_POSITIVE),
    };
    if !(a0.abs() <= 1e-10 * a_max) {
        return Err(ModelError::NotDegenerate { a0, a_max });
    }
    let k = if k_grid > 0.0 { k_grid * K_MARGIN } else { k_grid };
    if k >= 2.0 {
        return Err(ModelError::TooDegenerate { k });
    }
    let (class, theta) = if k < 1.0 {
        (DegeneracyClass::Weak, None)
    } else {
        (DegeneracyClass::Strong, Some(find_theta(&profile, &grid, k_grid)?))
    };
    Ok(DegeneracyCoefficient { profile, class, k_grid, k, theta, grid })
}

fn find_theta(
    profile: &CoefficientProfile,
    grid: &CertificationGrid,
    k_grid: f64,
) -> Result<f64, ModelError> {
    // K = 1 (up to the margin) asks for theta in (0,1); K > 1 asks for theta in (1, K].
    let (lo, hi) = if k_grid <= 1.0 + 1e-9 { (0.0, 1.0) } else { (1.0, k_grid) };
    let near_zero: Vec<f64> = grid.nodes().filter(|&x| x <= 0.1).collect();
    let samples = 64;
    let mid = 0.5 * (lo + hi);
    let mut candidates: Vec<f64> = (1..samples)
        .map(|i| lo + (hi - lo) * i as f64 / samples as f64)
        .chain(std::iter::once(hi).filter(|_| lo >= 1.0))
        .collect();
    candidates.sort_by(|a, b| (a - mid).abs().total_cmp(&(b - mid).abs()));
    for theta in candidates {
        let nondecreasing = near_zero.windows(2).all(|w| {
            let f0 = profile.eval(w[0]) / w[0].powf(theta);
            let f1 = profile.eval(w[1]) / w[1].powf(theta);
            f1 >= f0 * (1.0 - 1e-12)
        });
        if nondecreasing {
            return Ok(theta);
        }
    }
    Err(ModelError::NoAdmissibleTheta { lo, hi })
}

/// Open control region `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub name: String,
    pub diffusion: DiffusionMatrix,
    pub coupling: DMatrix<f64>,
    pub control: DMatrix<f64>,
    pub coefficient: DegeneracyCoefficient,
    pub omega: Interval,
    pub horizon: f64,
}

impl ProblemSpec {
    pub fn n(&self) -> usize {
        self.diffusion.dim()
    }
    pub fn m(&self) -> usize {
        self.control.ncols()
    }
    pub fn boundary(&self) -> Boundary {
        self.coefficient.boundary()
    }
    /// Same problem with the coupling matrix replaced.
    pub fn with_coupling(&self, coupling: DMatrix<f64>) -> Self {
        ProblemSpec { coupling, ..self.clone() }
    }

    pub fn new(
        name: impl Into<String>,
        diffusion: DiffusionMatrix,
        coupling: DMatrix<f64>,
        control: DMatrix<f64>,
        coefficient: DegeneracyCoefficient,
        omega: Interval,
        horizon: f64,
    ) -> Result<Self, ModelError> {
        let n = diffusion.dim();
        if coupling.shape() != (n, n) {
            return Err(ModelError::field("A", format!("expected {n}x{n}, got {:?}", coupling.shape())));
        }
        if control.nrows() != n || control.ncols() == 0 {
            return Err(ModelError::field(
                "B",
                format!("expected {n} rows and at least one column, got {:?}", control.shape()),
            ));
        }
        if !(omega.lo > 0.0 && omega.lo < omega.hi && omega.hi < 1.0) {
            return Err(ModelError::field(
                "omega",
                format!("need 0 < lo < hi < 1, got ({}, {})", omega.lo, omega.hi),
            ));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(ModelError::field("T", format!("final time must be positive, got {horizon}")));
        }
        Ok(ProblemSpec { name: name.into(), diffusion, coupling, control, coefficient, omega, horizon })
    }
}

pub const PRESETS: [&str; 2] = ["jordan-cascade", "rank-deficient"];

/// Builds one of the named presets.
pub fn preset(name: &str) -> Result<ProblemSpec, ModelError> {
    let config = match name {
        "jordan-cascade" | "rank-deficient" => ProblemConfig { preset: Some(name.to_string()), ..Default::default() },
        other => return Err(ModelError::field("preset", format!("unknown preset `{other}`"))),
    };
    config.build()
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    pub family: String,
    pub exponent: Option<f64>,
    pub scale: Option<f64>,
    pub x: Option<Vec<f64>>,
    pub values: Option<Vec<f64>>,
}

/// Parsed form of the key = value configuration document.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    #[serde(rename = "D")]
    pub d: Option<Vec<f64>>,
    #[serde(rename = "A")]
    pub a_matrix: Option<Vec<f64>>,
    #[serde(rename = "B")]
    pub b_matrix: Option<Vec<f64>>,
    pub omega: Option<[f64; 2]>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub a: Option<CoefficientConfig>,
}

impl ProblemConfig {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))
    }

    fn preset_defaults(name: &str) -> Result<ProblemConfig, ModelError> {
        let base = ProblemConfig {
            preset: None,
            name: Some(name.to_string()),
            n: Some(2),
            m: Some(1),
            d: None,
            a_matrix: None,
            b_matrix: Some(vec![1.0, 0.0]),
            omega: Some([0.3, 0.8]),
            horizon: Some(0.5),
            a: Some(CoefficientConfig {
                family: "power".into(),
                exponent: Some(1.0),
                scale: Some(1.0),
                ..Default::default()
            }),
        };
        match name {
            "jordan-cascade" => Ok(ProblemConfig {
                d: Some(vec![1.0, 1.0, 0.0, 1.0]),
                a_matrix: Some(vec![0.0, 0.0, 1.0, 0.0]),
                ..base
            }),
            "rank-deficient" => Ok(ProblemConfig {
                d: Some(vec![1.0, 0.0, 0.0, 1.0]),
                a_matrix: Some(vec![0.0; 4]),
                ..base
            }),
            other => Err(ModelError::field("preset", format!("unknown preset `{other}`"))),
        }
    }

    /// Resolves presets, then validates every field.
    pub fn build(&self) -> Result<ProblemSpec, ModelError> {
        let base = match &self.preset {
            Some(p) => Self::preset_defaults(p)?,
            None => ProblemConfig::default(),
        };
        let pick = |own: &Option<Vec<f64>>, fallback: &Option<Vec<f64>>| own.clone().or_else(|| fallback.clone());
        let n = self.n.or(base.n).ok_or_else(|| ModelError::field("n", "missing"))?;
        let m = self.m.or(base.m).ok_or_else(|| ModelError::field("m", "missing"))?;
        if n == 0 {
            return Err(ModelError::field("n", "must be at least 1"));
        }
        if m == 0 {
            return Err(ModelError::field("m", "must be at least 1"));
        }
        let d = pick(&self.d, &base.d).ok_or_else(|| ModelError::field("D", "missing"))?;
        let a_mat = pick(&self.a_matrix, &base.a_matrix).ok_or_else(|| ModelError::field("A", "missing"))?;
        let b_mat = pick(&self.b_matrix, &base.b_matrix).ok_or_else(|| ModelError::field("B", "missing"))?;
        let d = row_major("D", &d, n, n)?;
        let a_mat = row_major("A", &a_mat, n, n)?;
        let b_mat = row_major("B", &b_mat, n, m)?;
        let omega = self.omega.or(base.omega).ok_or_else(|| ModelError::field("omega", "missing"))?;
        let horizon = self.horizon.or(base.horizon).ok_or_else(|| ModelError::field("T", "missing"))?;
        let coeff_cfg = self.a.clone().or(base.a).ok_or_else(|| ModelError::field("a", "missing"))?;

        let diffusion = validate_diffusion(&d).map_err(|e| ModelError::field("D", e.to_string()))?;
        let profile = coeff_cfg.profile()?;
        let coefficient = classify_degeneracy(profile, CERTIFICATION_GRID)
            .map_err(|e| ModelError::field("a", e.to_string()))?;
        let name = self
            .name
            .clone()
            .or(base.name)
            .or_else(|| self.preset.clone())
            .unwrap_or_else(|| "custom".to_string());
        ProblemSpec::new(name, diffusion, a_mat, b_mat, coefficient, Interval::new(omega[0], omega[1]), horizon)
    }
}

impl CoefficientConfig {
    fn profile(&self) -> Result<CoefficientProfile, ModelError> {
        match self.family.as_str() {
            "power" => {
                let exponent = self.exponent.ok_or_else(|| ModelError::field("a.exponent", "missing"))?;
                let scale = self.scale.unwrap_or(1.0);
                if !(scale > 0.0) {
                    return Err(ModelError::field("a.scale", "must be positive"));
                }
                if !(exponent > 0.0) {
                    return Err(ModelError::field("a.exponent", "must be positive for a(0) = 0"));
                }
                Ok(CoefficientProfile::Power { scale, exponent })
            }
            "table" => {
                let x = self.x.clone().ok_or_else(|| ModelError::field("a.x", "missing"))?;
                let values = self.values.clone().ok_or_else(|| ModelError::field("a.values", "missing"))?;
                if x.len() < 2 || x.len() != values.len() {
                    return Err(ModelError::field("a.x", "need at least two breakpoints matching a.values"));
                }
                if x[0] <= 0.0 || x.windows(2).any(|w| w[1] <= w[0]) || *x.last().unwrap() < 1.0 {
                    return Err(ModelError::field("a.x", "breakpoints must increase from >0 and reach 1"));
                }
                if values.iter().any(|&v| !(v > 0.0)) {
                    return Err(ModelError::field("a.values", "must be positive"));
                }
                Ok(CoefficientProfile::Table { x, values })
            }
            other => Err(ModelError::field("a.family", format!("unknown family `{other}`"))),
        }
    }
}

fn row_major(field: &str, data: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>, ModelError> {
    if data.len() != rows * cols {
        return Err(ModelError::field(field, format!("expected {} entries, got {}", rows * cols, data.len())));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::field(field, "entries must be finite"));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

/// Parses and validates a configuration document.
pub fn build_problem(config: &str) -> Result<ProblemSpec, ModelError> {
    ProblemConfig::parse(config)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_diffusion() {
        let d = validate_diffusion(&DMatrix::identity(2, 2)).unwrap();
        assert!((d.alpha0() - 1.0).abs() < 1e-14);
        assert!(d.is_diagonalizable());
        assert_eq!(d.eigen_info().len(), 1);
        assert_eq!(d.eigen_info()[0].multiplicity, 2);
    }

    #[test]
    fn jordan_block_diffusion() {
        // Symmetric part [[1, .5], [.5, 1]] has eigenvalues 1/2 and 3/2.
        let d = validate_diffusion(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])).unwrap();
        assert!((d.alpha0() - 0.5).abs() < 1e-14);
        assert!(!d.is_diagonalizable());
        let info = &d.eigen_info()[0];
        assert_eq!((info.multiplicity, info.largest_block), (2, 2));
        assert!((info.value.re - 1.0).abs() < 1e-6);
    }

    #[test]
    fn three_by_three_jordan_block() {
        let d = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 2.0, 1.0, 0.0, 0.0, 2.0]);
        let d = validate_diffusion(&d).unwrap();
        assert_eq!(d.eigen_info()[0].largest_block, 3);
    }

    #[test]
    fn non_coercive_diffusion() {
        let err = validate_diffusion(&DMatrix::from_row_slice(2, 2, &[1.0, -3.0, 0.0, 1.0])).unwrap_err();
        match err {
            ModelError::NotCoercive { alpha0 } => assert!((alpha0 + 0.5).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_spectrum_rejected() {
        let err = validate_diffusion(&DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0])).unwrap_err();
        assert!(matches!(err, ModelError::NonPositiveSpectrum { .. }));
    }

    #[test]
    fn classify_sqrt_is_weak() {
        let c = classify_degeneracy(CoefficientProfile::power(0.5), CERTIFICATION_GRID).unwrap();
        assert_eq!(c.class(), DegeneracyClass::Weak);
        assert!((c.k_grid() - 0.5).abs() < 1e-12);
        assert!((c.k() - 0.505).abs() < 1e-12);
        assert_eq!(c.boundary(), Boundary::DirichletBoth);
    }

    #[test]
    fn classify_linear_is_strong_with_half_theta() {
        let c = classify_degeneracy(CoefficientProfile::power(1.0), CERTIFICATION_GRID).unwrap();
        assert_eq!(c.class(), DegeneracyClass::Strong);
        assert!((c.k_grid() - 1.0).abs() < 1e-12);
        assert_eq!(c.theta(), Some(0.5));
    }

    #[test]
    fn classify_square_too_degenerate() {
        let err = classify_degeneracy(CoefficientProfile::power(2.0), CERTIFICATION_GRID).unwrap_err();
        assert!(matches!(err, ModelError::TooDegenerate { .. }));
    }

    #[test]
    fn classify_nondegenerate_rejected() {
        let p = CoefficientProfile::custom("1+x", |x| 1.0 + x, |_| 1.0);
        let err = classify_degeneracy(p, 1000).unwrap_err();
        assert!(matches!(err, ModelError::NotDegenerate { .. }));
    }

    #[test]
    fn classify_strong_with_theta_above_one() {
        let c = classify_degeneracy(CoefficientProfile::power(1.5), CERTIFICATION_GRID).unwrap();
        assert_eq!(c.class(), DegeneracyClass::Strong);
        let theta = c.theta().unwrap();
        assert!(theta > 1.0 && theta <= 1.5);
    }

    #[test]
    fn no_admissible_theta() {
        // log slope 1 + 0.3 cos(ln x) / (1 + 0.3 sin(ln x)) oscillates around 1, so
        // a/x^theta has an oscillating log slope for every theta in (1, K].
        let p = CoefficientProfile::custom(
            "x (1 + 0.3 sin(ln x))",
            |x: f64| x * (1.0 + 0.3 * x.ln().sin()),
            |x: f64| 1.0 + 0.3 * x.ln().sin() + 0.3 * x.ln().cos(),
        );
        let err = classify_degeneracy(p, CERTIFICATION_GRID).unwrap_err();
        assert!(matches!(err, ModelError::NoAdmissibleTheta { .. }), "{err:?}");
    }

    #[test]
    fn table_profile_log_slopes() {
        let p = CoefficientProfile::Table { x: vec![0.5, 1.0], values: vec![0.25_f64.sqrt(), 1.0] };
        // log-log slope between (0.5, 0.5) and (1, 1) is 1.
        let c = classify_degeneracy(p.clone(), 2000).unwrap();
        assert!((c.k_grid() - 1.0).abs() < 1e-12);
        assert!((p.eval(0.25) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn presets_build() {
        let jc = preset("jordan-cascade").unwrap();
        assert!((jc.diffusion.alpha0() - 0.5).abs() < 1e-14);
        assert_eq!(jc.coefficient.class(), DegeneracyClass::Strong);
        assert_eq!((jc.n(), jc.m()), (2, 1));
        let rd = preset("rank-deficient").unwrap();
        assert!(rd.diffusion.is_diagonalizable());
        assert_eq!(rd.coupling, DMatrix::zeros(2, 2));
    }

    #[test]
    fn inverted_omega_names_field() {
        let err = build_problem("preset = \"jordan-cascade\"\nomega = [0.9, 0.8]\n").unwrap_err();
        match err {
            ModelError::InvalidField { field, .. } => assert_eq!(field, "omega"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn full_config_document() {
        let text = r#"
            name = "scalar"
            n = 1
            m = 1
            D = [2.0]
            A = [3.0]
            B = [1.0]
            omega = [0.2, 0.4]
            T = 1.0
            [a]
            family = "power"
            exponent = 0.5
        "#;
        let p = build_problem(text).unwrap();
        assert_eq!(p.name, "scalar");
        assert_eq!(p.coefficient.class(), DegeneracyClass::Weak);
    }

    #[test]
    fn bad_diffusion_names_field() {
        let err = build_problem("preset = \"jordan-cascade\"\nD = [1.0, -3.0, 0.0, 1.0]\n").unwrap_err();
        assert!(matches!(err, ModelError::InvalidField { ref field, .. } if field == "D"));
    }

    #[test]
    fn parse_errors_surface() {
        assert!(matches!(build_problem("n = = 2"), Err(ModelError::Parse(_))));
        assert!(matches!(build_problem("bogus = 1"), Err(ModelError::Parse(_))));
    }
}

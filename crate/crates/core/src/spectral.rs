//! P1 finite-element discretization of `-(a y_x)_x` on a graded mesh and its
//! generalized eigendecomposition.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{Boundary, CoefficientProfile, DegeneracyCoefficient};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("mesh needs at least 16 intervals, got {0}")]
    TooFewNodes(usize),
    #[error("element {index} on [{left}, {right}] has nonpositive midpoint coefficient {value}")]
    SingularElement { index: usize, left: f64, right: f64, value: f64 },
    #[error("requested {requested} modes but only {available} are available")]
    TooManyModes { requested: usize, available: usize },
    #[error("eigensolver failed for mode {mode}: {reason}")]
    SolverFailure { mode: usize, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<f64>,
    grading: f64,
}

impl Mesh {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn grading(&self) -> f64 {
        self.grading
    }
    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Grading exponent `max(1, 2 / (2 - K))`.
pub fn grading_exponent(k: f64) -> f64 {
    (2.0 / (2.0 - k)).max(1.0)
}

/// Nodes `x_i = (i/N)^gamma`, clustered at the degeneracy point.
pub fn build_graded_mesh(intervals: usize, k: f64) -> Result<Mesh, SpectralError> {
    if intervals < 16 {
        return Err(SpectralError::TooFewNodes(intervals));
    }
    Ok(graded_nodes(intervals, grading_exponent(k)))
}

fn graded_nodes(intervals: usize, grading: f64) -> Mesh {
    let nodes = (0..=intervals)
        .map(|i| {
            if i == intervals {
                1.0
            } else {
                (i as f64 / intervals as f64).powf(grading)
            }
        })
        .collect();
    Mesh { nodes, grading }
}

/// Symmetric tridiagonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    /// `off[i]` couples rows `i` and `i + 1`.
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn zeros(n: usize) -> Self {
        SymTridiagonal { diag: vec![0.0; n], off: vec![0.0; n.saturating_sub(1)] }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y: Vec<f64> = self.diag.iter().zip(x).map(|(d, v)| d * v).collect();
        for i in 0..n.saturating_sub(1) {
            y[i] += self.off[i] * x[i + 1];
            y[i + 1] += self.off[i] * x[i];
        }
        y
    }

    pub fn dot(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(y).map(|(a, b)| a * b).sum()
    }

    /// Principal submatrix on rows/columns `range`.
    pub fn restrict(&self, range: std::ops::Range<usize>) -> Self {
        let off_end = range.end.saturating_sub(1).max(range.start);
        SymTridiagonal { diag: self.diag[range.clone()].to_vec(), off: self.off[range.start..off_end].to_vec() }
    }

    /// `self - shift * other`.
    fn shifted(&self, other: &SymTridiagonal, shift: f64) -> SymTridiagonal {
        SymTridiagonal {
            diag: self.diag.iter().zip(&other.diag).map(|(a, b)| a - shift * b).collect(),
            off: self.off.iter().zip(&other.off).map(|(a, b)| a - shift * b).collect(),
        }
    }

    /// Number of negative pivots of the LDL^T factorization (Sylvester inertia).
    fn negative_count(&self) -> usize {
        let mut count = 0;
        let mut d = 0.0_f64;
        for i in 0..self.dim() {
            d = if i == 0 { self.diag[0] } else { self.diag[i] - self.off[i - 1] * self.off[i - 1] / d };
            if d == 0.0 {
                d = f64::EPSILON * (self.diag[i].abs() + 1e-300);
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Solves `self * x = b` by Gaussian elimination without pivoting
    /// (Thomas algorithm), guarding exact zero pivots.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let scale = self.diag.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut piv = self.diag[0];
        if piv.abs() < 1e-300 {
            piv = f64::EPSILON * scale;
        }
        if n > 1 {
            c[0] = self.off[0] / piv;
        }
        d[0] = b[0] / piv;
        for i in 1..n {
            piv = self.diag[i] - self.off[i - 1] * c[i - 1];
            if piv.abs() < f64::EPSILON * f64::EPSILON * scale {
                piv = f64::EPSILON * f64::EPSILON * scale;
            }
            if i < n - 1 {
                c[i] = self.off[i] / piv;
            }
            d[i] = (b[i] - self.off[i - 1] * d[i - 1]) / piv;
        }
        let mut x = d;
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        x
    }
}

/// Stiffness and mass forms on all mesh nodes, with the free (unconstrained) range.
#[derive(Debug, Clone, PartialEq)]
pub struct Forms {
    pub stiffness: SymTridiagonal,
    pub mass: SymTridiagonal,
    pub free: std::ops::Range<usize>,
    pub boundary: Boundary,
    pub mesh: Mesh,
}

impl Forms {
    pub fn free_stiffness(&self) -> SymTridiagonal {
        self.stiffness.restrict(self.free.clone())
    }
    pub fn free_mass(&self) -> SymTridiagonal {
        self.mass.restrict(self.free.clone())
    }
}

/// Assembles P1 forms with midpoint coefficient quadrature.
pub fn assemble_forms(
    mesh: &Mesh,
    coefficient: &DegeneracyCoefficient,
    boundary: Boundary,
) -> Result<Forms, SpectralError> {
    assemble_with(mesh, |x| coefficient.eval(x), boundary)
}

pub(crate) fn assemble_with(
    mesh: &Mesh,
    a: impl Fn(f64) -> f64,
    boundary: Boundary,
) -> Result<Forms, SpectralError> {
    let nodes = mesh.nodes();
    let count = nodes.len();
    let mut stiffness = SymTridiagonal::zeros(count);
    let mut mass = SymTridiagonal::zeros(count);
    for (e, w) in nodes.windows(2).enumerate() {
        let (left, right) = (w[0], w[1]);
        let h = right - left;
        let value = a(0.5 * (left + right));
        if !(value > 0.0) || !value.is_finite() {
            return Err(SpectralError::SingularElement { index: e, left, right, value });
        }
        let k = value / h;
        stiffness.diag[e] += k;
        stiffness.diag[e + 1] += k;
        stiffness.off[e] -= k;
        mass.diag[e] += h / 3.0;
        mass.diag[e + 1] += h / 3.0;
        mass.off[e] += h / 6.0;
    }
    let free = match boundary {
        Boundary::DirichletBoth => 1..count - 1,
        Boundary::NaturalAtZero => 0..count - 1,
    };
    Ok(Forms { stiffness, mass, free, boundary, mesh: mesh.clone() })
}

/// First `M` eigenpairs of `stiffness w = lambda mass w`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    eigenvalues: Vec<f64>,
    /// Eigenvectors on all mesh nodes (zero on constrained nodes).
    eigenvectors: Vec<Vec<f64>>,
    forms: Forms,
}

impl SpectralBasis {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
    pub fn eigenvectors(&self) -> &[Vec<f64>] {
        &self.eigenvectors
    }
    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }
    pub fn mass(&self) -> &SymTridiagonal {
        &self.forms.mass
    }
    pub fn stiffness(&self) -> &SymTridiagonal {
        &self.forms.stiffness
    }
    pub fn forms(&self) -> &Forms {
        &self.forms
    }
    pub fn mesh(&self) -> &Mesh {
        &self.forms.mesh
    }
    pub fn boundary(&self) -> Boundary {
        self.forms.boundary
    }

    /// Basis restricted to its first `modes` eigenpairs.
    pub fn truncated(&self, modes: usize) -> SpectralBasis {
        let modes = modes.min(self.modes());
        SpectralBasis {
            eigenvalues: self.eigenvalues[..modes].to_vec(),
            eigenvectors: self.eigenvectors[..modes].to_vec(),
            forms: self.forms.clone(),
        }
    }

    /// Mass-form Gram matrix deviation from the identity, max entry.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, wi) in self.eigenvectors.iter().enumerate() {
            let mwi = self.forms.mass.mul_vec(wi);
            for (j, wj) in self.eigenvectors.iter().enumerate() {
                let g: f64 = mwi.iter().zip(wj).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// `||K w_j - lambda_j M w_j||` in the mass-dual norm of the free block,
    /// divided by `lambda_j`.
    pub fn relative_residuals(&self) -> Vec<f64> {
        let k = self.forms.free_stiffness();
        let m = self.forms.free_mass();
        self.eigenvalues
            .iter()
            .zip(&self.eigenvectors)
            .map(|(&lambda, w)| {
                let w = &w[self.forms.free.clone()];
                let kw = k.mul_vec(w);
                let mw = m.mul_vec(w);
                let r: Vec<f64> = kw.iter().zip(&mw).map(|(a, b)| a - lambda * b).collect();
                let minv_r = m.solve(&r);
                let dual: f64 = r.iter().zip(&minv_r).map(|(a, b)| a * b).sum();
                dual.max(0.0).sqrt() / lambda
            })
            .collect()
    }

    /// Modal coefficients `<u, w_j>_mass`.
    pub fn project(&self, nodal: &[f64]) -> Result<Vec<f64>, SpectralError> {
        let count = self.mesh().nodes().len();
        if nodal.len() != count {
            return Err(SpectralError::DimensionMismatch { expected: count, got: nodal.len() });
        }
        let mu = self.forms.mass.mul_vec(nodal);
        Ok(self.eigenvectors.iter().map(|w| w.iter().zip(&mu).map(|(a, b)| a * b).sum()).collect())
    }

    pub fn reconstruct(&self, modal: &[f64]) -> Result<Vec<f64>, SpectralError> {
        if modal.len() != self.modes() {
            return Err(SpectralError::DimensionMismatch { expected: self.modes(), got: modal.len() });
        }
        let mut out = vec![0.0; self.mesh().nodes().len()];
        for (c, w) in modal.iter().zip(&self.eigenvectors) {
            if *c != 0.0 {
                for (o, v) in out.iter_mut().zip(w) {
                    *o += c * v;
                }
            }
        }
        Ok(out)
    }

    /// Mass norm of a nodal vector.
    pub fn mass_norm(&self, nodal: &[f64]) -> f64 {
        self.forms.mass.dot(nodal, nodal).max(0.0).sqrt()
    }

    /// Eigenvalue table `j,lambda_j`.
    pub fn eigenvalue_csv(&self) -> String {
        let mut s = String::from("j,lambda_j\n");
        for (j, l) in self.eigenvalues.iter().enumerate() {
            let _ = writeln!(s, "{},{}", j + 1, l);
        }
        s
    }

    /// Nodal eigenvector values: `x,w_1,...,w_M`.
    pub fn eigenvector_csv(&self) -> String {
        let mut s = String::from("x");
        for j in 0..self.modes() {
            let _ = write!(s, ",w_{}", j + 1);
        }
        s.push('\n');
        for (i, x) in self.mesh().nodes().iter().enumerate() {
            let _ = write!(s, "{x}");
            for w in &self.eigenvectors {
                let _ = write!(s, ",{}", w[i]);
            }
            s.push('\n');
        }
        s
    }
}

/// Computes the first `modes` generalized eigenpairs.
///
/// Each eigenvalue is bracketed by Sturm bisection on the inertia of
/// `K - s M`, then the eigenvector is obtained by shifted inverse iteration
/// with full mass-reorthogonalization against the previously accepted modes.
pub fn eigensolve(forms: &Forms, modes: usize) -> Result<SpectralBasis, SpectralError> {
    let k = forms.free_stiffness();
    let m = forms.free_mass();
    let dim = k.dim();
    if modes + 1 > dim {
        return Err(SpectralError::TooManyModes { requested: modes, available: dim.saturating_sub(1) });
    }
    // Gershgorin-type upper bound for the pencil: lambda <= max row sum |K| / min diag-dominance of M.
    let k_bound = (0..dim)
        .map(|i| {
            k.diag[i].abs()
                + if i > 0 { k.off[i - 1].abs() } else { 0.0 }
                + if i + 1 < dim { k.off[i].abs() } else { 0.0 }
        })
        .fold(0.0_f64, f64::max);
    let m_floor = (0..dim)
        .map(|i| {
            m.diag[i] - if i > 0 { m.off[i - 1].abs() } else { 0.0 } - if i + 1 < dim { m.off[i].abs() } else { 0.0 }
        })
        .fold(f64::INFINITY, f64::min);
    // P1 mass is diagonally dominant with margin h/3 - ... >= 0; fall back to a
    // doubling search if the bound degenerates.
    let mut upper = if m_floor > 0.0 { k_bound / m_floor } else { 1.0 };
    while k.shifted(&m, upper).negative_count() < modes {
        upper *= 2.0;
        if !upper.is_finite() {
            return Err(SpectralError::SolverFailure { mode: modes, reason: "no upper bracket".into() });
        }
    }

    let mut eigenvalues = Vec::with_capacity(modes);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(modes);
    let mut mass_vectors: Vec<Vec<f64>> = Vec::with_capacity(modes);
    let mut lower = 0.0;
    for j in 0..modes {
        let lambda = bisect_eigenvalue(&k, &m, j, lower, upper)
            .ok_or_else(|| SpectralError::SolverFailure { mode: j + 1, reason: "bisection lost bracket".into() })?;
        let w = inverse_iteration(&k, &m, lambda, j, &vectors, &mass_vectors)
            .ok_or_else(|| SpectralError::SolverFailure { mode: j + 1, reason: "inverse iteration stalled".into() })?;
        let lambda = {
            let kw = k.dot(&w, &w);
            let mw = m.dot(&w, &w);
            kw / mw
        };
        if !(lambda > 0.0) {
            return Err(SpectralError::SolverFailure { mode: j + 1, reason: format!("nonpositive eigenvalue {lambda}") });
        }
        lower = lambda * (1.0 - 1e-14);
        eigenvalues.push(lambda);
        mass_vectors.push(m.mul_vec(&w));
        vectors.push(w);
    }

    let count = forms.mesh.nodes().len();
    let eigenvectors = vectors
        .into_iter()
        .map(|w| {
            let mut full = vec![0.0; count];
            full[forms.free.clone()].copy_from_slice(&w);
            // Deterministic sign: first significant entry positive.
            let pivot = full.iter().copied().find(|v| v.abs() > 1e-8).unwrap_or(1.0);
            if pivot < 0.0 {
                full.iter_mut().for_each(|v| *v = -*v);
            }
            full
        })
        .collect();
    Ok(SpectralBasis { eigenvalues, eigenvectors, forms: forms.clone() })
}

/// Finds the `(index+1)`-th smallest eigenvalue in `(lower, upper)` by bisection.
fn bisect_eigenvalue(k: &SymTridiagonal, m: &SymTridiagonal, index: usize, lower: f64, upper: f64) -> Option<f64> {
    let count = |s: f64| k.shifted(m, s).negative_count();
    let (mut lo, mut hi) = (lower, upper);
    if count(hi) <= index {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count(mid) > index {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

fn inverse_iteration(
    k: &SymTridiagonal,
    m: &SymTridiagonal,
    shift: f64,
    index: usize,
    previous: &[Vec<f64>],
    previous_mass: &[Vec<f64>],
) -> Option<Vec<f64>> {
    let dim = k.dim();
    let op = k.shifted(m, shift);
    // Deterministic start seeded from the mode index.
    let mut x: Vec<f64> = (0..dim)
        .map(|i| {
            let t = (i as f64 + 0.5) / dim as f64;
            1.0 + 0.5 * ((index as f64 + 1.0) * 7.3 * t).sin() + 0.25 * (13.1 * t + index as f64).cos()
        })
        .collect();
    let mut last = f64::NAN;
    for _ in 0..8 {
        reorthogonalize(&mut x, previous, previous_mass);
        let norm = m.dot(&x, &x).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        x.iter_mut().for_each(|v| *v /= norm);
        let y = op.solve(&m.mul_vec(&x));
        let growth = m.dot(&y, &y).sqrt();
        x = y;
        if (growth - last).abs() <= 1e-10 * growth {
            break;
        }
        last = growth;
    }
    // Two passes of reorthogonalization keep the mass-orthogonality at round-off level.
    reorthogonalize(&mut x, previous, previous_mass);
    reorthogonalize(&mut x, previous, previous_mass);
    let norm = m.dot(&x, &x).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    x.iter_mut().for_each(|v| *v /= norm);
    Some(x)
}

fn reorthogonalize(x: &mut [f64], previous: &[Vec<f64>], previous_mass: &[Vec<f64>]) {
    for (w, mw) in previous.iter().zip(previous_mass) {
        let c: f64 = x.iter().zip(mw).map(|(a, b)| a * b).sum();
        for (xi, wi) in x.iter_mut().zip(w) {
            *xi -= c * wi;
        }
    }
}

/// Mesh, forms and eigendecomposition in one call.
pub fn build_basis(
    coefficient: &DegeneracyCoefficient,
    intervals: usize,
    modes: usize,
) -> Result<SpectralBasis, SpectralError> {
    let mesh = build_graded_mesh(intervals, coefficient.k_grid())?;
    let forms = assemble_forms(&mesh, coefficient, coefficient.boundary())?;
    eigensolve(&forms, modes)
}

/// `J_0(x)` and `J_1(x)` from the Bessel integrals, trapezoid in `theta`
/// (spectrally accurate for a periodic integrand).
fn bessel_j0_j1(x: f64) -> (f64, f64) {
    let points = 64 + (2.0 * x.abs()) as usize;
    let h = std::f64::consts::PI / points as f64;
    let (mut j0, mut j1) = (0.0, 0.0);
    for i in 0..=points {
        let th = i as f64 * h;
        let w = if i == 0 || i == points { 0.5 } else { 1.0 };
        j0 += w * (x * th.sin()).cos();
        j1 += w * (th - x * th.sin()).cos();
    }
    (j0 * h / std::f64::consts::PI, j1 * h / std::f64::consts::PI)
}

/// `k`-th positive zero of `J_0` (1-based), McMahon start plus Newton.
pub fn bessel_j0_zero(k: usize) -> f64 {
    let beta = (k as f64 - 0.25) * std::f64::consts::PI;
    let mut x = beta + 1.0 / (8.0 * beta) - 31.0 / (384.0 * beta.powi(3));
    for _ in 0..50 {
        let (j0, j1) = bessel_j0_j1(x);
        let step = j0 / -j1;
        x -= step;
        if step.abs() < 1e-15 * x {
            break;
        }
    }
    x
}

/// Exact eigenvalues `c (j_{0,k} / 2)^2` when `a(x) = c x` with the natural
/// condition at 0 and Dirichlet at 1; `None` for any other coefficient.
pub fn linear_coefficient_benchmark(coefficient: &DegeneracyCoefficient, modes: usize) -> Option<Vec<f64>> {
    match coefficient.profile() {
        CoefficientProfile::Power { scale, exponent } if *exponent == 1.0 => {
            Some((1..=modes).map(|k| scale * (0.5 * bessel_j0_zero(k)).powi(2)).collect())
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{classify_degeneracy, CERTIFICATION_GRID};

    fn linear() -> DegeneracyCoefficient {
        classify_degeneracy(CoefficientProfile::power(1.0), CERTIFICATION_GRID).unwrap()
    }

    #[test]
    fn bessel_zeros() {
        assert!((bessel_j0_zero(1) - 2.404_825_557_695_773).abs() < 1e-13);
        assert!((bessel_j0_zero(2) - 5.520_078_110_286_311).abs() < 1e-13);
        assert!((bessel_j0_zero(10) - 30.634_606_468_431_98).abs() < 1e-11);
        let bench = linear_coefficient_benchmark(&linear(), 1).unwrap();
        assert!((bench[0] - 1.445_796).abs() < 1e-6);
    }

    #[test]
    fn uniform_mesh_for_k_zero() {
        let mesh = graded_nodes(4, grading_exponent(0.0));
        assert_eq!(mesh.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(build_graded_mesh(4, 0.0).is_err());
    }

    #[test]
    fn grading_formula() {
        let mesh = build_graded_mesh(100, 1.0).unwrap();
        assert_eq!(mesh.grading(), 2.0);
        assert!((mesh.nodes()[1] - 1e-4).abs() < 1e-18);
        assert_eq!(grading_exponent(1.5), 4.0);
        let mesh = build_graded_mesh(100, 1.5).unwrap();
        assert!(mesh.nodes()[1] <= (0.01f64).powf(4.0) * (1.0 + 1e-9));
        assert!(mesh.nodes().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn two_element_forms_match_hand_integration() {
        let mesh = Mesh { nodes: vec![0.0, 0.5, 1.0], grading: 1.0 };
        let forms = assemble_with(&mesh, |x| x, Boundary::NaturalAtZero).unwrap();
        // Element 0: a(0.25)/0.5 = 0.5; element 1: a(0.75)/0.5 = 1.5.
        assert_eq!(forms.stiffness.diag, vec![0.5, 2.0, 1.5]);
        assert_eq!(forms.stiffness.off, vec![-0.5, -1.5]);
        let free = forms.free_stiffness();
        assert_eq!(free.dim(), 2);
        let wd = assemble_with(&mesh, |x| x, Boundary::DirichletBoth).unwrap();
        assert_eq!(wd.free_stiffness().dim(), 1);
        assert_eq!(wd.free_stiffness().diag, vec![2.0]);
    }

    #[test]
    fn mass_row_sums_are_element_lengths() {
        let mesh = build_graded_mesh(32, 1.0).unwrap();
        let forms = assemble_forms(&mesh, &linear(), Boundary::NaturalAtZero).unwrap();
        let ones = vec![1.0; mesh.nodes().len()];
        let row_sums = forms.mass.mul_vec(&ones);
        let x = mesh.nodes();
        for i in 0..x.len() {
            let left = if i > 0 { x[i] - x[i - 1] } else { 0.0 };
            let right = if i + 1 < x.len() { x[i + 1] - x[i] } else { 0.0 };
            assert!((row_sums[i] - 0.5 * (left + right)).abs() < 1e-15);
        }
        // Stiffness annihilates constants before the essential condition.
        let k1 = forms.stiffness.mul_vec(&ones);
        assert!(k1.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn singular_element_detected() {
        let mesh = build_graded_mesh(16, 0.0).unwrap();
        let err = assemble_with(&mesh, |x| x - 0.5, Boundary::DirichletBoth).unwrap_err();
        assert!(matches!(err, SpectralError::SingularElement { index: 0, .. }));
    }

    #[test]
    fn eigenpairs_are_orthonormal_with_small_residual() {
        let basis = build_basis(&linear(), 400, 12).unwrap();
        assert!(basis.orthonormality_defect() < 1e-10);
        assert!(basis.relative_residuals().iter().all(|&r| r < 1e-8));
        assert!(basis.eigenvalues().windows(2).all(|w| w[1] > w[0]));
        assert!(basis.eigenvalues()[0] > 0.0);
    }

    #[test]
    fn too_many_modes() {
        let mesh = build_graded_mesh(16, 1.0).unwrap();
        let forms = assemble_forms(&mesh, &linear(), Boundary::NaturalAtZero).unwrap();
        assert!(matches!(eigensolve(&forms, 16), Err(SpectralError::TooManyModes { .. })));
        assert!(eigensolve(&forms, 15).is_ok());
    }

    #[test]
    fn project_reconstruct_roundtrip() {
        let basis = build_basis(&linear(), 200, 8).unwrap();
        let e3 = basis.project(&basis.eigenvectors()[2]).unwrap();
        for (j, c) in e3.iter().enumerate() {
            let want = if j == 2 { 1.0 } else { 0.0 };
            assert!((c - want).abs() < 1e-10);
        }
        let zero = basis.reconstruct(&[0.0; 8]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        assert!(matches!(basis.project(&[1.0, 2.0]), Err(SpectralError::DimensionMismatch { .. })));
        assert!(matches!(basis.reconstruct(&[1.0]), Err(SpectralError::DimensionMismatch { .. })));
    }

    #[test]
    fn csv_exports_have_headers() {
        let basis = build_basis(&linear(), 64, 3).unwrap();
        let ev = basis.eigenvalue_csv();
        assert!(ev.starts_with("j,lambda_j\n1,"));
        assert_eq!(ev.lines().count(), 4);
        let vecs = basis.eigenvector_csv();
        assert!(vecs.starts_with("x,w_1,w_2,w_3\n"));
        assert_eq!(vecs.lines().count(), 66);
    }
}

//! Semi-discrete forward and adjoint solvers.
//!
//! Modal states are flat vectors indexed `j * n + c` (mode `j`, component `c`).
//! Time stepping is the exact exponential integrator for piecewise-constant
//! forcing: `Y_{k+1} = E_j Y_k + Phi_j g_j(t_k)` with `E_j = exp(M_j dt)` and
//! `Phi_j = int_0^dt exp(M_j s) ds`. The adjoint runs backward from `T` with the
//! transposed blocks, so the discrete duality identity holds to rounding.
//!
//! The discrete observation on `[t_k, t_{k+1})` is the interval average of
//! `B^T z`, i.e. `B^T Phi_j^T z_j(t_{k+1}) / dt` reconstructed on the nodes of `omega`.

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::algebra::spectral_norm;
use crate::model::{Interval, ProblemSpec};
use crate::spectral::{SpectralBasis, SpectralError, SymTridiagonal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("no mesh element lies inside omega = ({lo}, {hi})")]
    EmptySupport { lo: f64, hi: f64 },
    #[error("step matrix of mode {mode} has norm {norm}, above the bound {bound}")]
    UnstableStep { mode: usize, norm: f64, bound: f64 },
    #[error("time grid needs at least one step and an increasing interval, got {steps} steps on [{start}, {end}]")]
    InvalidGrid { start: f64, end: f64, steps: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Uniform grid `start = t_0 < ... < t_L = end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    start: f64,
    end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, DynamicsError> {
        Self::on(0.0, horizon, steps)
    }

    pub fn on(start: f64, end: f64, steps: usize) -> Result<Self, DynamicsError> {
        if steps == 0 || !(end > start) || !start.is_finite() || !end.is_finite() {
            return Err(DynamicsError::InvalidGrid { start, end, steps });
        }
        Ok(TimeGrid { start, end, steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn start(&self) -> f64 {
        self.start
    }
    pub fn end(&self) -> f64 {
        self.end
    }
    pub fn dt(&self) -> f64 {
        (self.end - self.start) / self.steps as f64
    }
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.end
        } else {
            self.start + k as f64 * self.dt()
        }
    }
    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Grid on `[t_range.start, t_range.end]` sharing this grid's nodes.
    pub fn sub(&self, range: Range<usize>) -> Result<Self, DynamicsError> {
        if range.end > self.steps || range.start >= range.end {
            return Err(DynamicsError::Dimension(format!("step range {range:?} outside 0..{}", self.steps)));
        }
        Ok(TimeGrid { start: self.time(range.start), end: self.time(range.end), steps: range.len() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    State,
    Adjoint,
}

/// Modal coefficients at every grid time, `(L + 1) x M x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    direction: Direction,
    modes: usize,
    n: usize,
    grid: TimeGrid,
    data: Vec<f64>,
}

impl TrajectorySet {
    pub(crate) fn from_parts(direction: Direction, modes: usize, n: usize, grid: TimeGrid, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), (grid.steps() + 1) * modes * n);
        TrajectorySet { direction, modes, n, grid, data }
    }

    /// Joins `self` on `[t_0, t_k]` with `next` on `[t_k, t_L]`; the shared
    /// time slice is taken from `next`.
    pub fn concat(&self, next: &TrajectorySet) -> Result<TrajectorySet, DynamicsError> {
        if self.modes != next.modes || self.n != next.n || self.grid.end() != next.grid.start() {
            return Err(DynamicsError::Dimension("trajectories do not join".into()));
        }
        let len = self.modes * self.n;
        let mut data = self.data[..self.grid.steps() * len].to_vec();
        data.extend_from_slice(&next.data);
        let steps = self.grid.steps() + next.grid.steps();
        let grid = TimeGrid::on(self.grid.start(), next.grid.end(), steps)?;
        Ok(TrajectorySet { direction: self.direction, modes: self.modes, n: self.n, grid, data })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }
    pub fn modes(&self) -> usize {
        self.modes
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    /// Flat modal state at time index `k`.
    pub fn at(&self, k: usize) -> &[f64] {
        let len = self.modes * self.n;
        &self.data[k * len..(k + 1) * len]
    }
    pub fn mode(&self, k: usize, j: usize) -> &[f64] {
        &self.at(k)[j * self.n..(j + 1) * self.n]
    }
    pub fn initial(&self) -> &[f64] {
        self.at(0)
    }
    pub fn terminal(&self) -> &[f64] {
        self.at(self.grid.steps)
    }

    /// `t,j,component,value` with 1-based mode and component indices.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,j,component,value\n");
        for k in 0..=self.grid.steps {
            let t = self.grid.time(k);
            for j in 0..self.modes {
                for (c, v) in self.mode(k, j).iter().enumerate() {
                    let _ = writeln!(s, "{t},{},{},{v}", j + 1, c + 1);
                }
            }
        }
        s
    }

    /// Nodal reconstruction at the requested time indices: `t,x,y_1,...,y_n`.
    pub fn snapshot_csv(&self, basis: &SpectralBasis, indices: &[usize]) -> Result<String, DynamicsError> {
        let mut s = String::from("t,x");
        for c in 0..self.n {
            let _ = write!(s, ",y_{}", c + 1);
        }
        s.push('\n');
        for &k in indices {
            if k > self.grid.steps {
                return Err(DynamicsError::Dimension(format!("time index {k} beyond {}", self.grid.steps)));
            }
            let fields = nodal_from_modal(basis, self.at(k), self.n)?;
            let t = self.grid.time(k);
            for (i, x) in basis.mesh().nodes().iter().enumerate() {
                let _ = write!(s, "{t},{x}");
                for field in &fields {
                    let _ = write!(s, ",{}", field[i]);
                }
                s.push('\n');
            }
        }
        Ok(s)
    }
}

/// Projects `n` nodal component fields onto the basis.
pub fn modal_from_nodal(basis: &SpectralBasis, fields: &[Vec<f64>]) -> Result<Vec<f64>, DynamicsError> {
    let n = fields.len();
    let mut out = vec![0.0; basis.modes() * n];
    for (c, field) in fields.iter().enumerate() {
        for (j, coef) in basis.project(field)?.into_iter().enumerate() {
            out[j * n + c] = coef;
        }
    }
    Ok(out)
}

/// Nodal component fields of a flat modal state.
pub fn nodal_from_modal(basis: &SpectralBasis, modal: &[f64], n: usize) -> Result<Vec<Vec<f64>>, DynamicsError> {
    check_len(modal, basis.modes() * n, "modal state")?;
    (0..n)
        .map(|c| {
            let coefs: Vec<f64> = (0..basis.modes()).map(|j| modal[j * n + c]).collect();
            Ok(basis.reconstruct(&coefs)?)
        })
        .collect()
}

/// Modal state `w_j e_c`-weighted: coefficient vector `u` placed on mode `j`.
pub fn single_mode(modes: usize, j: usize, u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let mut out = vec![0.0; modes * n];
    out[j * n..(j + 1) * n].copy_from_slice(u);
    out
}

fn check_len(v: &[f64], expected: usize, what: &str) -> Result<(), DynamicsError> {
    if v.len() != expected {
        return Err(DynamicsError::Dimension(format!("{what}: expected length {expected}, got {}", v.len())));
    }
    Ok(())
}

/// Control values on the nodes of `omega`, constant on each `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    steps: usize,
    nodes: usize,
    m: usize,
    values: Vec<f64>,
}

impl ControlSignal {
    pub fn zeros(steps: usize, nodes: usize, m: usize) -> Self {
        ControlSignal { steps, nodes, m, values: vec![0.0; steps * nodes * m] }
    }

    /// Values indexed `(k * nodes + p) * m + c`.
    pub fn from_values(steps: usize, nodes: usize, m: usize, values: Vec<f64>) -> Result<Self, DynamicsError> {
        check_len(&values, steps * nodes * m, "control values")?;
        Ok(ControlSignal { steps, nodes, m, values })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn nodes(&self) -> usize {
        self.nodes
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    /// Values on interval `k`, indexed `p * m + c`.
    pub fn step(&self, k: usize) -> &[f64] {
        let len = self.nodes * self.m;
        &self.values[k * len..(k + 1) * len]
    }
    pub fn step_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.nodes * self.m;
        &mut self.values[k * len..(k + 1) * len]
    }

    pub fn slice(&self, range: Range<usize>) -> ControlSignal {
        let len = self.nodes * self.m;
        ControlSignal {
            steps: range.len(),
            nodes: self.nodes,
            m: self.m,
            values: self.values[range.start * len..range.end * len].to_vec(),
        }
    }

    /// `self` on the first intervals followed by `next`.
    pub fn concat(&self, next: &ControlSignal) -> Result<ControlSignal, DynamicsError> {
        if self.nodes != next.nodes || self.m != next.m {
            return Err(DynamicsError::Dimension("control signals do not join".into()));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&next.values);
        Ok(ControlSignal { steps: self.steps + next.steps, nodes: self.nodes, m: self.m, values })
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn scaled_add(&mut self, alpha: f64, other: &ControlSignal) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }
}

/// The pair `v -> g_j = B int_omega v w_j` and its transpose
/// `z -> B^T (sum_j z_j w_j)` on the nodes of `omega`.
///
/// `omega` is realized at mesh resolution: the masked mass form integrates
/// over the elements whose endpoints both lie in the closed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInjection {
    node_range: Range<usize>,
    n: usize,
    m: usize,
    b: DMatrix<f64>,
    mass_omega: SymTridiagonal,
    /// `W` rows restricted to omega nodes: `modes x nodes`.
    w: Vec<Vec<f64>>,
    /// `W^T M_omega`, `modes x nodes`.
    pairing: Vec<Vec<f64>>,
    /// Modal Gram matrix `W^T M_omega W`.
    gram: DMatrix<f64>,
}

impl ControlInjection {
    pub fn new(basis: &SpectralBasis, omega: Interval, b: &DMatrix<f64>) -> Result<Self, DynamicsError> {
        let nodes = basis.mesh().nodes();
        let first = nodes.iter().position(|&x| x >= omega.lo);
        let last = nodes.iter().rposition(|&x| x <= omega.hi);
        let node_range = match (first, last) {
            (Some(f), Some(l)) if l > f => f..l + 1,
            _ => return Err(DynamicsError::EmptySupport { lo: omega.lo, hi: omega.hi }),
        };
        let count = node_range.len();
        let mut mass_omega = SymTridiagonal::zeros(count);
        for e in 0..count - 1 {
            let h = nodes[node_range.start + e + 1] - nodes[node_range.start + e];
            mass_omega.diag[e] += h / 3.0;
            mass_omega.diag[e + 1] += h / 3.0;
            mass_omega.off[e] += h / 6.0;
        }
        let w: Vec<Vec<f64>> = basis.eigenvectors().iter().map(|v| v[node_range.clone()].to_vec()).collect();
        let pairing: Vec<Vec<f64>> = w.iter().map(|row| mass_omega.mul_vec(row)).collect();
        let modes = basis.modes();
        let mut gram = DMatrix::from_fn(modes, modes, |i, j| dot(&pairing[i], &w[j]));
        gram = (&gram + gram.transpose()) * 0.5;
        Ok(ControlInjection { node_range, n: b.nrows(), m: b.ncols(), b: b.clone(), mass_omega, w, pairing, gram })
    }

    /// Mesh node indices carrying control values.
    pub fn node_range(&self) -> Range<usize> {
        self.node_range.clone()
    }
    pub fn nodes(&self) -> usize {
        self.node_range.len()
    }
    pub fn modes(&self) -> usize {
        self.w.len()
    }
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
    pub fn zero_signal(&self, steps: usize) -> ControlSignal {
        ControlSignal::zeros(steps, self.nodes(), self.m)
    }

    /// Modal forcing for one interval's nodal values (`p * m + c`).
    pub fn inject(&self, values: &[f64]) -> Vec<f64> {
        let (n, m, p_count) = (self.n, self.m, self.nodes());
        let mut out = vec![0.0; self.modes() * n];
        let mut u = vec![0.0; m];
        for (j, row) in self.pairing.iter().enumerate() {
            u.iter_mut().for_each(|x| *x = 0.0);
            for p in 0..p_count {
                let coef = row[p];
                for c in 0..m {
                    u[c] += coef * values[p * m + c];
                }
            }
            for r in 0..n {
                out[j * n + r] = (0..m).map(|c| self.b[(r, c)] * u[c]).sum();
            }
        }
        out
    }

    /// Nodal values of `B^T sum_j z_j w_j` on omega.
    pub fn observe(&self, modal: &[f64]) -> Vec<f64> {
        let (n, m, p_count) = (self.n, self.m, self.nodes());
        let mut out = vec![0.0; p_count * m];
        for (j, row) in self.w.iter().enumerate() {
            let zj = &modal[j * n..(j + 1) * n];
            for c in 0..m {
                let btz: f64 = (0..n).map(|r| self.b[(r, c)] * zj[r]).sum();
                if btz != 0.0 {
                    for p in 0..p_count {
                        out[p * m + c] += btz * row[p];
                    }
                }
            }
        }
        out
    }

    /// `B (W^T M_omega W) B^T z`, the composition `inject . observe` in modal form.
    pub fn gram_apply(&self, modal: &[f64]) -> Vec<f64> {
        let (n, m, modes) = (self.n, self.m, self.modes());
        let btz: Vec<f64> = (0..modes)
            .flat_map(|j| {
                let zj = &modal[j * n..(j + 1) * n];
                (0..m).map(move |c| (0..n).map(|r| self.b[(r, c)] * zj[r]).sum::<f64>())
            })
            .collect();
        let mut out = vec![0.0; modes * n];
        for j in 0..modes {
            for c in 0..m {
                let s: f64 = (0..modes).map(|i| self.gram[(j, i)] * btz[i * m + c]).sum();
                for r in 0..n {
                    out[j * n + r] += self.b[(r, c)] * s;
                }
            }
        }
        out
    }

    /// `<u, v>_omega` summed over control components.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let m = self.m;
        (0..m)
            .map(|c| {
                let uc: Vec<f64> = u.iter().skip(c).step_by(m).copied().collect();
                let vc: Vec<f64> = v.iter().skip(c).step_by(m).copied().collect();
                self.mass_omega.dot(&uc, &vc)
            })
            .sum()
    }

    /// `sum_k dt ||v_k||^2_omega`.
    pub fn signal_norm_squared(&self, v: &ControlSignal, dt: f64) -> f64 {
        (0..v.steps()).map(|k| dt * self.inner(v.step(k), v.step(k))).sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `M_j = -lambda_j D + A`.
pub fn modal_generator(lambda: f64, d: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    a - d * lambda
}

/// Per-mode step blocks `E_j` and `Phi_j` for a fixed `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    n: usize,
    dt: f64,
    e: Vec<DMatrix<f64>>,
    phi: Vec<DMatrix<f64>>,
}

impl Propagator {
    pub fn new(spec: &ProblemSpec, eigenvalues: &[f64], dt: f64) -> Result<Self, DynamicsError> {
        let n = spec.n();
        let d = spec.diffusion.entries();
        let a = &spec.coupling;
        let bound = (spectral_norm(a) * dt).exp() * (1.0 + 1e-6);
        let blocks: Vec<(DMatrix<f64>, DMatrix<f64>)> = eigenvalues
            .par_iter()
            .map(|&lambda| {
                let mj = modal_generator(lambda, d, a);
                let mut aug = DMatrix::zeros(2 * n, 2 * n);
                aug.view_mut((0, 0), (n, n)).copy_from(&(mj * dt));
                aug.view_mut((0, n), (n, n)).fill_with_identity();
                aug.view_mut((0, n), (n, n)).scale_mut(dt);
                let ex = aug.exp();
                (ex.view((0, 0), (n, n)).into_owned(), ex.view((0, n), (n, n)).into_owned())
            })
            .collect();
        for (j, (e, _)) in blocks.iter().enumerate() {
            let norm = spectral_norm(e);
            if !(norm <= bound) {
                return Err(DynamicsError::UnstableStep { mode: j + 1, norm, bound });
            }
        }
        let (e, phi) = blocks.into_iter().unzip();
        Ok(Propagator { n, dt, e, phi })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn step_matrix(&self, j: usize) -> &DMatrix<f64> {
        &self.e[j]
    }
    pub fn forcing_matrix(&self, j: usize) -> &DMatrix<f64> {
        &self.phi[j]
    }

    /// `out_j = E_j y_j + Phi_j g_j`.
    pub fn step(&self, y: &[f64], g: Option<&[f64]>, out: &mut [f64]) {
        let n = self.n;
        for (j, (e, phi)) in self.e.iter().zip(&self.phi).enumerate() {
            let yj = &y[j * n..(j + 1) * n];
            for r in 0..n {
                let mut s = 0.0;
                for c in 0..n {
                    s += e[(r, c)] * yj[c];
                }
                if let Some(g) = g {
                    let gj = &g[j * n..(j + 1) * n];
                    for c in 0..n {
                        s += phi[(r, c)] * gj[c];
                    }
                }
                out[j * n + r] = s;
            }
        }
    }

    /// `out_j = E_j^T z_j`.
    pub fn step_back(&self, z: &[f64], out: &mut [f64]) {
        self.apply_transposed(&self.e, z, out);
    }

    /// `out_j = Phi_j^T z_j / dt`, the interval average of the adjoint.
    pub fn average_back(&self, z: &[f64], out: &mut [f64]) {
        self.apply_transposed(&self.phi, z, out);
        out.iter_mut().for_each(|v| *v /= self.dt);
    }

    fn apply_transposed(&self, blocks: &[DMatrix<f64>], z: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (j, blk) in blocks.iter().enumerate() {
            let zj = &z[j * n..(j + 1) * n];
            for c in 0..n {
                let mut s = 0.0;
                for r in 0..n {
                    s += blk[(r, c)] * zj[r];
                }
                out[j * n + c] = s;
            }
        }
    }
}

/// Forward trajectory from a modal initial state.
pub fn solve_forward(
    spec: &ProblemSpec,
    basis: &SpectralBasis,
    v: Option<&ControlSignal>,
    y0: &[f64],
    grid: &TimeGrid,
) -> Result<TrajectorySet, DynamicsError> {
    let prop = Propagator::new(spec, basis.eigenvalues(), grid.dt())?;
    let injection = match v {
        Some(v) if !v.is_zero() => Some(ControlInjection::new(basis, spec.omega, &spec.control)?),
        _ => None,
    };
    forward_with(&prop, injection.as_ref(), v, y0, grid)
}

/// Forward stepping with precomputed blocks.
pub fn forward_with(
    prop: &Propagator,
    injection: Option<&ControlInjection>,
    v: Option<&ControlSignal>,
    y0: &[f64],
    grid: &TimeGrid,
) -> Result<TrajectorySet, DynamicsError> {
    let modes = prop.e.len();
    let n = prop.n;
    let len = modes * n;
    check_len(y0, len, "initial state")?;
    if let Some(v) = v {
        if v.steps() != grid.steps() {
            return Err(DynamicsError::Dimension(format!(
                "control has {} steps, grid has {}",
                v.steps(),
                grid.steps()
            )));
        }
        if let Some(inj) = injection {
            if v.nodes() != inj.nodes() || v.m() != inj.m {
                return Err(DynamicsError::Dimension("control signal does not match omega nodes".into()));
            }
        }
    }
    let mut data = vec![0.0; (grid.steps() + 1) * len];
    data[..len].copy_from_slice(y0);
    for k in 0..grid.steps() {
        let g = match (v, injection) {
            (Some(v), Some(inj)) => Some(inj.inject(v.step(k))),
            _ => None,
        };
        let (head, tail) = data.split_at_mut((k + 1) * len);
        prop.step(&head[k * len..], g.as_deref(), &mut tail[..len]);
    }
    Ok(TrajectorySet { direction: Direction::State, modes, n, grid: *grid, data })
}

/// Backward adjoint trajectory from the modal datum `z_T` at the final time.
pub fn solve_adjoint(
    spec: &ProblemSpec,
    basis: &SpectralBasis,
    z_t: &[f64],
    grid: &TimeGrid,
) -> Result<TrajectorySet, DynamicsError> {
    let prop = Propagator::new(spec, basis.eigenvalues(), grid.dt())?;
    adjoint_with(&prop, z_t, grid)
}

pub fn adjoint_with(prop: &Propagator, z_t: &[f64], grid: &TimeGrid) -> Result<TrajectorySet, DynamicsError> {
    let modes = prop.e.len();
    let n = prop.n;
    let len = modes * n;
    check_len(z_t, len, "adjoint datum")?;
    let steps = grid.steps();
    let mut data = vec![0.0; (steps + 1) * len];
    data[steps * len..].copy_from_slice(z_t);
    for k in (0..steps).rev() {
        let (head, tail) = data.split_at_mut((k + 1) * len);
        prop.step_back(&tail[..len], &mut head[k * len..]);
    }
    Ok(TrajectorySet { direction: Direction::Adjoint, modes, n, grid: *grid, data })
}

/// How the adjoint is sampled on each interval when forming `B^T z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationRule {
    /// Interval average, the exact transpose of the forcing.
    IntervalAverage,
    /// `B^T z(t_k)` at the left endpoint; not the transpose, used to show
    /// that the duality check detects a mismatched quadrature.
    LeftEndpoint,
}

/// Observation `B^T z` on omega for every interval of the adjoint's grid.
pub fn observation(
    prop: &Propagator,
    injection: &ControlInjection,
    adjoint: &TrajectorySet,
    rule: ObservationRule,
) -> ControlSignal {
    let steps = adjoint.grid().steps();
    let mut out = injection.zero_signal(steps);
    let mut avg = vec![0.0; adjoint.modes() * adjoint.n()];
    for k in 0..steps {
        let values = match rule {
            ObservationRule::IntervalAverage => {
                prop.average_back(adjoint.at(k + 1), &mut avg);
                injection.observe(&avg)
            }
            ObservationRule::LeftEndpoint => injection.observe(adjoint.at(k)),
        };
        out.step_mut(k).copy_from_slice(&values);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityTerms {
    pub terminal: f64,
    pub initial: f64,
    pub control: f64,
}

impl DualityTerms {
    pub fn residual(&self) -> f64 {
        (self.terminal - self.initial - self.control).abs()
    }
    pub fn scale(&self) -> f64 {
        self.terminal.abs().max(self.initial.abs()).max(self.control.abs())
    }
    pub fn relative(&self) -> f64 {
        let s = self.scale();
        if s > 0.0 {
            self.residual() / s
        } else {
            self.residual()
        }
    }
}

/// `<Y(T), z_T>`, `<Y0, z(0)>` and `sum_k dt <v_k, B^T z>_omega`.
pub fn duality_terms(
    spec: &ProblemSpec,
    basis: &SpectralBasis,
    v: &ControlSignal,
    y0: &[f64],
    z_t: &[f64],
    grid: &TimeGrid,
    rule: ObservationRule,
) -> Result<DualityTerms, DynamicsError> {
    let prop = Propagator::new(spec, basis.eigenvalues(), grid.dt())?;
    let injection = ControlInjection::new(basis, spec.omega, &spec.control)?;
    let forward = forward_with(&prop, Some(&injection), Some(v), y0, grid)?;
    let adjoint = adjoint_with(&prop, z_t, grid)?;
    let obs = observation(&prop, &injection, &adjoint, rule);
    let dt = grid.dt();
    let control = (0..grid.steps()).map(|k| dt * injection.inner(v.step(k), obs.step(k))).sum();
    Ok(DualityTerms { terminal: dot(forward.terminal(), z_t), initial: dot(y0, adjoint.initial()), control })
}

/// Absolute duality residual with the transposed observation.
pub fn duality_residual(
    spec: &ProblemSpec,
    basis: &SpectralBasis,
    v: &ControlSignal,
    y0: &[f64],
    z_t: &[f64],
    grid: &TimeGrid,
) -> Result<f64, DynamicsError> {
    Ok(duality_terms(spec, basis, v, y0, z_t, grid, ObservationRule::IntervalAverage)?.residual())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    /// `sup_k ||Y(t_k)||^2`.
    pub sup_norm_squared: f64,
    /// Trapezoid sum of `sum_j lambda_j |Y_j(t_k)|^2 = ||sqrt(a) Y_x||^2`.
    pub dissipation: f64,
    pub initial_norm_squared: f64,
    pub control_norm_squared: f64,
    /// `(sup + dissipation) / (||Y0||^2 + ||v||^2)`, zero when both vanish.
    pub ratio: f64,
}

pub fn energy_report(
    traj: &TrajectorySet,
    basis: &SpectralBasis,
    spec: &ProblemSpec,
    v: Option<&ControlSignal>,
) -> Result<EnergyReport, DynamicsError> {
    let n = traj.n();
    let lambdas = basis.eigenvalues();
    let grid = traj.grid();
    let dt = grid.dt();
    let mut sup: f64 = 0.0;
    let mut dissipation = 0.0;
    for k in 0..=grid.steps() {
        let y = traj.at(k);
        sup = sup.max(dot(y, y));
        let energy: f64 =
            lambdas.iter().enumerate().map(|(j, l)| l * dot(&y[j * n..(j + 1) * n], &y[j * n..(j + 1) * n])).sum();
        let weight = if k == 0 || k == grid.steps() { 0.5 } else { 1.0 };
        dissipation += weight * dt * energy;
    }
    let control_norm_squared = match v {
        Some(v) if !v.is_zero() => {
            ControlInjection::new(basis, spec.omega, &spec.control)?.signal_norm_squared(v, dt)
        }
        _ => 0.0,
    };
    let initial_norm_squared = dot(traj.initial(), traj.initial());
    let denom = initial_norm_squared + control_norm_squared;
    let ratio = if denom > 0.0 { (sup + dissipation) / denom } else { 0.0 };
    Ok(EnergyReport { sup_norm_squared: sup, dissipation, initial_norm_squared, control_norm_squared, ratio })
}

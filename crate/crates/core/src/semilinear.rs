//! Linearize-and-control fixed point for `Y_t = D M Y + A Y + F(Y) + B v 1_omega`.
//!
//! With `F(0) = 0`, `F(Y) = A_Y Y` where `A_Y = int_0^1 DF(tau Y) dtau`. Each
//! outer iterate freezes `A + A_Y` at its space-time average over the previous
//! trajectory and solves the penalized linear control problem with that
//! constant coupling.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::algebra::{kalman_report, KalmanVerdict};
use crate::dynamics::{
    forward_with, modal_from_nodal, nodal_from_modal, ControlSignal, Direction, DynamicsError, Propagator, TimeGrid,
    TrajectorySet,
};
use crate::hum::{CgOptions, HumError, HumResult, HumSolver};
use crate::model::ProblemSpec;
use crate::spectral::SpectralBasis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemilinearError {
    #[error("fixed point did not converge in {iterations} outer iterations (last residual {last_residual}, increased {increases} times)")]
    NoConvergence { iterations: usize, last_residual: f64, increases: usize, history: Vec<IterateRecord> },
    #[error("frozen coupling at iterate {iterate} fails the rank condition at mode {mode}")]
    RankLostAtIterate { iterate: usize, mode: usize, history: Vec<IterateRecord> },
    #[error("nonlinearity check failed: {0}")]
    InvalidNonlinearity(String),
    #[error("split time {t0} must be a grid time in (0, T/2)")]
    InvalidSplit { t0: f64 },
    #[error(transparent)]
    Hum(#[from] HumError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type JacobianField = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// `F: R^n -> R^n` with its Jacobian and a Lipschitz bound.
#[derive(Clone)]
pub struct NonlinearitySpec {
    n: usize,
    f: VectorField,
    jacobian: JacobianField,
    lipschitz: f64,
    label: String,
}

impl std::fmt::Debug for NonlinearitySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NonlinearitySpec").field("n", &self.n).field("label", &self.label).finish()
    }
}

impl NonlinearitySpec {
    pub fn new(
        n: usize,
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        lipschitz: f64,
        label: impl Into<String>,
    ) -> Self {
        NonlinearitySpec { n, f: Arc::new(f), jacobian: Arc::new(jacobian), lipschitz, label: label.into() }
    }

    pub fn zero(n: usize) -> Self {
        Self::new(n, move |_| vec![0.0; n], move |_| DMatrix::zeros(n, n), 0.0, "zero")
    }

    pub fn linear(a0: DMatrix<f64>) -> Self {
        let n = a0.nrows();
        let lip = crate::algebra::spectral_norm(&a0);
        let (fa, ja) = (a0.clone(), a0);
        Self::new(
            n,
            move |y| (&fa * nalgebra::DVector::from_column_slice(y)).iter().copied().collect(),
            move |_| ja.clone(),
            lip,
            "linear",
        )
    }

    /// `F_i(y) = scale sin(y_{n-1-i})`.
    pub fn reversed_sine(n: usize, scale: f64) -> Self {
        Self::new(
            n,
            move |y| (0..n).map(|i| scale * y[n - 1 - i].sin()).collect(),
            move |y| DMatrix::from_fn(n, n, |i, j| if j == n - 1 - i { scale * y[j].cos() } else { 0.0 }),
            scale.abs(),
            format!("{scale}*sin(reversed)"),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    pub fn label(&self) -> &str {
        &self.label
    }
    pub fn eval(&self, y: &[f64]) -> Vec<f64> {
        (self.f)(y)
    }
    pub fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        (self.jacobian)(y)
    }

    /// `F(0) = 0` and the Jacobian against central differences at random points.
    pub fn validate(&self, seed: u64) -> Result<(), SemilinearError> {
        let n = self.n;
        let f0 = self.eval(&vec![0.0; n]);
        if let Some(v) = f0.iter().find(|v| v.abs() > 1e-12) {
            return Err(SemilinearError::InvalidNonlinearity(format!("F(0) has entry {v}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-6;
        for _ in 0..10 {
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let jac = self.jacobian(&y);
            for j in 0..n {
                let mut up = y.clone();
                let mut down = y.clone();
                up[j] += h;
                down[j] -= h;
                let (fu, fd) = (self.eval(&up), self.eval(&down));
                for i in 0..n {
                    let fdiff = (fu[i] - fd[i]) / (2.0 * h);
                    if (fdiff - jac[(i, j)]).abs() > 1e-5 * (1.0 + jac[(i, j)].abs()) {
                        return Err(SemilinearError::InvalidNonlinearity(format!(
                            "Jacobian entry ({i}, {j}) = {} but finite difference gives {fdiff}",
                            jac[(i, j)]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

const TAU_NODES: [f64; 8] = [
    0.019_855_071_751_231_9,
    0.101_666_761_293_186_6,
    0.237_233_795_041_835_5,
    0.408_282_678_752_175_1,
    0.591_717_321_247_824_9,
    0.762_766_204_958_164_5,
    0.898_333_238_706_813_4,
    0.980_144_928_248_768_1,
];
const TAU_WEIGHTS: [f64; 8] = [
    0.050_614_268_145_188_1,
    0.111_190_517_226_687_2,
    0.156_853_322_938_943_6,
    0.181_341_891_689_181_0,
    0.181_341_891_689_181_0,
    0.156_853_322_938_943_6,
    0.111_190_517_226_687_2,
    0.050_614_268_145_188_1,
];

/// `A_Y = int_0^1 DF(tau Y) dtau` at a single point (8-point Gauss-Legendre in `tau`).
pub fn mean_jacobian(f: &NonlinearitySpec, y: &[f64]) -> DMatrix<f64> {
    let n = f.n();
    let mut out = DMatrix::zeros(n, n);
    let mut scaled = vec![0.0; n];
    for (tau, w) in TAU_NODES.iter().zip(&TAU_WEIGHTS) {
        for (s, v) in scaled.iter_mut().zip(y) {
            *s = tau * v;
        }
        out += f.jacobian(&scaled) * *w;
    }
    out
}

/// `A_Y(x)` at every node of a nodal state given as `n` component fields.
pub fn linearize(f: &NonlinearitySpec, fields: &[Vec<f64>]) -> Vec<DMatrix<f64>> {
    let nodes = fields.first().map_or(0, |c| c.len());
    (0..nodes)
        .map(|i| {
            let y: Vec<f64> = fields.iter().map(|c| c[i]).collect();
            mean_jacobian(f, &y)
        })
        .collect()
}

/// Largest `|A_Y(x) Y(x) - F(Y(x))|` over the nodes.
pub fn mean_value_defect(f: &NonlinearitySpec, fields: &[Vec<f64>], a_y: &[DMatrix<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in a_y.iter().enumerate() {
        let y: Vec<f64> = fields.iter().map(|c| c[i]).collect();
        let fy = f.eval(&y);
        for r in 0..y.len() {
            let ay: f64 = (0..y.len()).map(|c| a[(r, c)] * y[c]).sum();
            worst = worst.max((ay - fy[r]).abs());
        }
    }
    worst
}

/// Space-time average of `A_Y` along a trajectory and the RMS Frobenius
/// distance of the pointwise field from that average.
pub fn frozen_coupling(
    f: &NonlinearitySpec,
    basis: &SpectralBasis,
    traj: &TrajectorySet,
) -> Result<(DMatrix<f64>, f64), SemilinearError> {
    let n = traj.n();
    let nodes = basis.mesh().nodes();
    let grid = traj.grid();
    let steps = grid.steps();
    let span = grid.end() - grid.start();
    let weights_x: Vec<f64> = (0..nodes.len())
        .map(|i| {
            let left = if i > 0 { nodes[i] - nodes[i - 1] } else { 0.0 };
            let right = if i + 1 < nodes.len() { nodes[i + 1] - nodes[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect();
    let fields_at = |k: usize| nodal_from_modal(basis, traj.at(k), n);
    let time_weight = |k: usize| if k == 0 || k == steps { 0.5 * grid.dt() } else { grid.dt() };
    let mut fields_cache = Vec::with_capacity(steps + 1);
    let mut avg = DMatrix::zeros(n, n);
    for k in 0..=steps {
        let fields = fields_at(k)?;
        let field = linearize(f, &fields);
        for (a, wx) in field.iter().zip(&weights_x) {
            avg += a * (wx * time_weight(k));
        }
        fields_cache.push(field);
    }
    avg /= span;
    let mut dev = 0.0;
    for (k, field) in fields_cache.iter().enumerate() {
        for (a, wx) in field.iter().zip(&weights_x) {
            dev += (a - &avg).norm_squared() * wx * time_weight(k);
        }
    }
    Ok((avg, (dev / span).sqrt()))
}

/// `sqrt(sup_k |Y_k|^2 + sum_k dt sum_j lambda_j |Y_{j,k}|^2)` of `a - b`
/// (trapezoid in time), a surrogate of the `C(L^2) cap L^2(H^1_a)` norm.
pub fn xt_distance(a: &TrajectorySet, b: &TrajectorySet, eigenvalues: &[f64]) -> f64 {
    let n = a.n();
    let grid = a.grid();
    let steps = grid.steps();
    let mut sup: f64 = 0.0;
    let mut energy = 0.0;
    for k in 0..=steps {
        let (ya, yb) = (a.at(k), b.at(k));
        let mut norm = 0.0;
        let mut weighted = 0.0;
        for (i, (p, q)) in ya.iter().zip(yb).enumerate() {
            let d = (p - q) * (p - q);
            norm += d;
            weighted += eigenvalues[i / n] * d;
        }
        sup = sup.max(norm);
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
        energy += w * grid.dt() * weighted;
    }
    (sup + energy).sqrt()
}

fn zero_like(traj: &TrajectorySet) -> TrajectorySet {
    let len = (traj.grid().steps() + 1) * traj.modes() * traj.n();
    TrajectorySet::from_parts(Direction::State, traj.modes(), traj.n(), *traj.grid(), vec![0.0; len])
}

/// Uncontrolled-or-controlled semilinear flow: per step the nonlinear forcing
/// is frozen at the midpoint state and refined by Picard sub-iterations.
pub fn semilinear_forward(
    spec: &ProblemSpec,
    basis: &SpectralBasis,
    f: &NonlinearitySpec,
    control: Option<(&HumSolver, &ControlSignal)>,
    y0: &[f64],
    grid: &TimeGrid,
) -> Result<TrajectorySet, SemilinearError> {
    let n = spec.n();
    let len = basis.modes() * n;
    let prop = Propagator::new(spec, basis.eigenvalues(), grid.dt())?;
    let linear = forward_with(&prop, None, None, y0, grid)?;
    let mut data = Vec::with_capacity((grid.steps() + 1) * len);
    data.extend_from_slice(linear.initial());
    let force = |state: &[f64]| -> Result<Vec<f64>, SemilinearError> {
        let fields = nodal_from_modal(basis, state, n)?;
        let nodes = fields[0].len();
        let mut out: Vec<Vec<f64>> = vec![vec![0.0; nodes]; n];
        let mut y = vec![0.0; n];
        for i in 0..nodes {
            for c in 0..n {
                y[c] = fields[c][i];
            }
            for (c, v) in f.eval(&y).into_iter().enumerate() {
                out[c][i] = v;
            }
        }
        Ok(modal_from_nodal(basis, &out)?)
    };
    let mut current = y0.to_vec();
    let mut next = vec![0.0; len];
    for k in 0..grid.steps() {
        let mut g = force(&current)?;
        if let Some((solver, v)) = control {
            let inj = solver.injection().inject(v.step(k));
            for (a, b) in g.iter_mut().zip(inj) {
                *a += b;
            }
        }
        let injected: Vec<f64> = match control {
            Some((solver, v)) => solver.injection().inject(v.step(k)),
            None => vec![0.0; len],
        };
        for _ in 0..20 {
            prop.step(&current, Some(&g), &mut next);
            let mid: Vec<f64> = current.iter().zip(&next).map(|(a, b)| 0.5 * (a + b)).collect();
            let mut g_new = force(&mid)?;
            for (a, b) in g_new.iter_mut().zip(&injected) {
                *a += b;
            }
            let change = g_new.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = g_new.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            g = g_new;
            if change <= 1e-13 * scale.max(1e-300) {
                break;
            }
        }
        prop.step(&current, Some(&g), &mut next);
        data.extend_from_slice(&next);
        std::mem::swap(&mut current, &mut next);
    }
    Ok(TrajectorySet::from_parts(Direction::State, basis.modes(), n, *grid, data))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub max_outer: usize,
    /// Relative `X_T` Cauchy tolerance.
    pub tolerance: f64,
    pub cg: CgOptions,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions { max_outer: 20, tolerance: 1e-6, cg: CgOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    /// `||Y^{k+1} - Y^k||_X / ||Y^{k+1}||_X`.
    pub fixed_point_residual: f64,
    pub terminal_norm: f64,
    pub control_cost: f64,
    pub kalman_verdict: KalmanVerdict,
    /// RMS distance of the pointwise `A + A_Y` from the frozen coupling.
    pub frozen_coupling_discrepancy: f64,
}

pub fn history_csv(history: &[IterateRecord]) -> String {
    let mut s = String::from(
        "k,fixed_point_residual,terminal_norm,control_cost,kalman_verdict,frozen_coupling_discrepancy\n",
    );
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.k,
            r.fixed_point_residual,
            r.terminal_norm,
            r.control_cost,
            r.kalman_verdict.label(),
            r.frozen_coupling_discrepancy
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointOutcome {
    pub history: Vec<IterateRecord>,
    pub result: HumResult,
    pub coupling: DMatrix<f64>,
    /// Terminal norm of the semilinear flow driven by the final control.
    pub semilinear_terminal_norm: f64,
}

impl FixedPointOutcome {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

pub fn fixed_point_control(
    spec: &ProblemSpec,
    basis: &SpectralBasis,
    f: &NonlinearitySpec,
    y0: &[f64],
    epsilon: f64,
    grid: &TimeGrid,
    options: &FixedPointOptions,
) -> Result<FixedPointOutcome, SemilinearError> {
    let eigenvalues = basis.eigenvalues();
    let base = spec.coupling.clone();
    let free_solver = HumSolver::new(spec, basis, grid)?;
    let mut previous = free_solver.forward(&free_solver.injection().zero_signal(grid.steps()), y0)?;
    let mut previous_coupling: Option<DMatrix<f64>> = None;
    let mut last: Option<(HumResult, DMatrix<f64>, HumSolver)> = None;
    let mut history: Vec<IterateRecord> = Vec::new();
    let mut increases = 0;
    for k in 0..options.max_outer {
        let (avg, discrepancy) = frozen_coupling(f, basis, &previous)?;
        let coupling = &base + avg;
        if let (Some(prev), Some((result, _, solver))) = (&previous_coupling, &last) {
            if *prev == coupling {
                // Identical frozen problem: the next iterate would repeat the last one.
                if let Some(rec) = history.last_mut() {
                    rec.fixed_point_residual = 0.0;
                }
                let semilinear = semilinear_forward(spec, basis, f, Some((solver, &result.control)), y0, grid)?;
                let norm = semilinear.terminal().iter().map(|v| v * v).sum::<f64>().sqrt();
                let (result, coupling, _) = last.unwrap();
                return Ok(FixedPointOutcome { history, result, coupling, semilinear_terminal_norm: norm });
            }
        }
        let report = kalman_report(eigenvalues, spec.diffusion.entries(), &coupling, &spec.control, eigenvalues.len());
        if let KalmanVerdict::Fail { first_failing_mode } = report.verdict {
            return Err(SemilinearError::RankLostAtIterate { iterate: k, mode: first_failing_mode, history });
        }
        let frozen = spec.with_coupling(coupling.clone());
        let solver = HumSolver::new(&frozen, basis, grid)?;
        let result = solver.solve(epsilon, y0, &options.cg)?;
        let state = result.state.clone();
        let zero = zero_like(&state);
        let scale = xt_distance(&state, &zero, eigenvalues).max(f64::MIN_POSITIVE);
        let residual = xt_distance(&state, &previous, eigenvalues) / scale;
        if history.last().is_some_and(|r| residual > r.fixed_point_residual) {
            increases += 1;
        }
        history.push(IterateRecord {
            k,
            fixed_point_residual: residual,
            terminal_norm: result.terminal_norm,
            control_cost: result.control_cost,
            kalman_verdict: report.verdict,
            frozen_coupling_discrepancy: discrepancy,
        });
        previous = state;
        previous_coupling = Some(coupling.clone());
        if residual <= options.tolerance {
            let semilinear = semilinear_forward(spec, basis, f, Some((&solver, &result.control)), y0, grid)?;
            let norm = semilinear.terminal().iter().map(|v| v * v).sum::<f64>().sqrt();
            return Ok(FixedPointOutcome { history, result, coupling, semilinear_terminal_norm: norm });
        }
        last = Some((result, coupling, solver));
    }
    let last_residual = history.last().map_or(f64::NAN, |r| r.fixed_point_residual);
    Err(SemilinearError::NoConvergence { iterations: history.len(), last_residual, increases, history })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseOutcome {
    pub trajectory: TrajectorySet,
    pub control: ControlSignal,
    pub split_index: usize,
    pub phase_one_terminal: Vec<f64>,
    pub phase_two: FixedPointOutcome,
    pub terminal_norm: f64,
}

/// `v = 0` on `[0, t0]` for the semilinear flow, then the fixed-point control on `[t0, T]`.
pub fn two_phase_control(
    spec: &ProblemSpec,
    basis: &SpectralBasis,
    f: &NonlinearitySpec,
    y0: &[f64],
    t0: f64,
    epsilon: f64,
    grid: &TimeGrid,
    options: &FixedPointOptions,
) -> Result<TwoPhaseOutcome, SemilinearError> {
    let steps = grid.steps();
    let span = grid.end() - grid.start();
    let split = (0..=steps).find(|&k| (grid.time(k) - t0).abs() <= 1e-12 * span);
    let split = match split {
        Some(k) if k > 0 && grid.time(k) - grid.start() < 0.5 * span => k,
        _ => return Err(SemilinearError::InvalidSplit { t0 }),
    };
    let first = grid.sub(0..split)?;
    let second = grid.sub(split..steps)?;
    let phase_one = semilinear_forward(spec, basis, f, None, y0, &first)?;
    let datum = phase_one.terminal().to_vec();
    let phase_two = fixed_point_control(spec, basis, f, &datum, epsilon, &second, options)?;
    let trajectory = phase_one.concat(&phase_two.result.state)?;
    let control = phase_two.result.control.clone();
    let zeros = ControlSignal::zeros(split, control.nodes(), control.m());
    let control = zeros.concat(&control)?;
    let terminal_norm = phase_two.result.terminal_norm;
    Ok(TwoPhaseOutcome {
        trajectory,
        control,
        split_index: split,
        phase_one_terminal: datum,
        phase_two,
        terminal_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::single_mode;
    use crate::hum::minimize_dual;
    use crate::model::preset;
    use crate::spectral::build_basis;

    fn setup(modes: usize, steps: usize) -> (ProblemSpec, SpectralBasis, TimeGrid) {
        let spec = preset("jordan-cascade").unwrap();
        let basis = build_basis(&spec.coefficient, 200, modes).unwrap();
        let grid = TimeGrid::new(spec.horizon, steps).unwrap();
        (spec, basis, grid)
    }

    #[test]
    fn nonlinearity_checks() {
        NonlinearitySpec::reversed_sine(2, 0.1).validate(1).unwrap();
        NonlinearitySpec::zero(3).validate(1).unwrap();
        let bad = NonlinearitySpec::new(1, |y| vec![y[0] + 1.0], |_| DMatrix::from_element(1, 1, 1.0), 1.0, "shift");
        assert!(bad.validate(1).is_err());
        let wrong = NonlinearitySpec::new(1, |y| vec![y[0].sin()], |_| DMatrix::from_element(1, 1, 1.0), 1.0, "sin");
        assert!(wrong.validate(1).is_err());
    }

    #[test]
    fn linearize_examples() {
        let a0 = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let lin = NonlinearitySpec::linear(a0.clone());
        let field = linearize(&lin, &[vec![0.3, -1.0], vec![2.0, 0.7]]);
        assert!(field.iter().all(|a| (a - &a0).amax() < 1e-14));
        let sine = NonlinearitySpec::reversed_sine(2, 1.0);
        let a = mean_jacobian(&sine, &[0.0, std::f64::consts::PI]);
        assert!(a[(0, 1)].abs() < 1e-12);
        // a_21 = int_0^1 cos(0) = 1.
        assert!((a[(1, 0)] - 1.0).abs() < 1e-15);
        assert!((mean_jacobian(&sine, &[0.0, 0.0]) - sine.jacobian(&[0.0, 0.0])).amax() < 1e-15);
        let fields = vec![vec![0.1, 1.3, -2.2], vec![0.9, -0.4, 3.0]];
        let a_y = linearize(&sine, &fields);
        assert!(mean_value_defect(&sine, &fields, &a_y) < 1e-8);
    }

    #[test]
    fn zero_nonlinearity_is_linear_bitwise() {
        let (spec, basis, grid) = setup(6, 32);
        let y0 = single_mode(6, 0, &[1.0, 1.0]);
        let linear = minimize_dual(&spec, &basis, 1e-3, &y0, &grid, &CgOptions::default()).unwrap();
        let out = fixed_point_control(
            &spec,
            &basis,
            &NonlinearitySpec::zero(2),
            &y0,
            1e-3,
            &grid,
            &FixedPointOptions::default(),
        )
        .unwrap();
        assert_eq!(out.iterations(), 1);
        assert_eq!(out.result.z_t, linear.z_t);
        assert_eq!(out.result.state, linear.state);
        assert_eq!(out.result.terminal_norm, linear.terminal_norm);
        assert_eq!(out.history[0].frozen_coupling_discrepancy, 0.0);
    }

    #[test]
    fn semilinear_forward_with_zero_f_matches_linear() {
        let (spec, basis, grid) = setup(5, 16);
        let y0: Vec<f64> = (0..10).map(|i| (i as f64 * 0.9).cos()).collect();
        let solver = HumSolver::new(&spec, &basis, &grid).unwrap();
        let lin = solver.forward(&solver.injection().zero_signal(16), &y0).unwrap();
        let semi = semilinear_forward(&spec, &basis, &NonlinearitySpec::zero(2), None, &y0, &grid).unwrap();
        for (a, b) in lin.terminal().iter().zip(semi.terminal()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn two_phase_zero_and_gluing() {
        let (spec, basis, grid) = setup(4, 32);
        let f = NonlinearitySpec::reversed_sine(2, 0.1);
        let opts = FixedPointOptions::default();
        let zero = two_phase_control(&spec, &basis, &f, &[0.0; 8], 0.125, 1e-3, &grid, &opts).unwrap();
        assert_eq!(zero.terminal_norm, 0.0);
        assert!(zero.control.is_zero());
        let y0 = single_mode(4, 0, &[1.0, 1.0]);
        let out = two_phase_control(&spec, &basis, &f, &y0, 0.125, 1e-3, &grid, &opts).unwrap();
        assert_eq!(out.split_index, 8);
        assert_eq!(out.trajectory.at(8), out.phase_one_terminal.as_slice());
        assert_eq!(out.control.steps(), 32);
        assert!((0..8).all(|k| out.control.step(k).iter().all(|v| *v == 0.0)));
        let linear = minimize_dual(&spec, &basis, 1e-3, &y0, &grid, &CgOptions::default()).unwrap();
        let zero_f = NonlinearitySpec::zero(2);
        let split = two_phase_control(&spec, &basis, &zero_f, &y0, 0.125, 1e-3, &grid, &opts).unwrap();
        assert!(split.terminal_norm <= 2.0 * linear.terminal_norm);
        assert!(two_phase_control(&spec, &basis, &f, &y0, 0.3, 1e-3, &grid, &opts).is_err());
        assert!(two_phase_control(&spec, &basis, &f, &y0, 0.1, 1e-3, &grid, &opts).is_err());
    }

    #[test]
    fn history_csv_header() {
        let rec = IterateRecord {
            k: 0,
            fixed_point_residual: 0.5,
            terminal_norm: 0.1,
            control_cost: 2.0,
            kalman_verdict: KalmanVerdict::Pass,
            frozen_coupling_discrepancy: 0.0,
        };
        let csv = history_csv(&[rec]);
        assert_eq!(
            csv,
            "k,fixed_point_residual,terminal_norm,control_cost,kalman_verdict,frozen_coupling_discrepancy\n0,0.5,0.1,2,pass,0\n"
        );
    }

    #[test]
    fn sine_converges_and_large_scaling_diverges() {
        let (spec, basis, grid) = setup(8, 64);
        let y0 = single_mode(8, 0, &[1.0, 1.0]);
        let opts = FixedPointOptions::default();
        let out =
            fixed_point_control(&spec, &basis, &NonlinearitySpec::reversed_sine(2, 0.1), &y0, 1e-3, &grid, &opts)
                .unwrap();
        assert!(out.iterations() <= 20);
        let res: Vec<f64> = out.history.iter().map(|r| r.fixed_point_residual).collect();
        assert!(res.windows(2).rev().take(4).all(|w| w[1] <= w[0]));
        let err = fixed_point_control(&spec, &basis, &NonlinearitySpec::reversed_sine(2, 50.0), &y0, 1e-3, &grid, &opts)
            .unwrap_err();
        match err {
            SemilinearError::NoConvergence { iterations, increases, history, .. } => {
                assert_eq!(iterations, 20);
                assert_eq!(history.len(), 20);
                assert!(increases > 0);
            }
            other => panic!("unexpected {other}"),
        }
    }
}

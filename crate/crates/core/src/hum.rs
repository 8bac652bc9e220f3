//! Penalized Hilbert Uniqueness Method on the semi-discrete system.
//!
//! The Gramian `Lambda` maps an adjoint datum `Z` (at time `T`) to the terminal
//! state driven from rest by the control `v = B^T z` on omega. The penalized dual
//! functional
//!
//! `J*(Z) = 1/2 <Lambda Z, Z> + eps/2 |Z|^2 + <Z, b>`,  `b = Y(T)` of the free flow,
//!
//! is minimized by conjugate gradient on `(Lambda + eps I) Z = -b`. The optimal
//! control is `v = B^T z` and its terminal state is `Y(T) = -eps Z`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::algebra::{kalman_matrix, RANK_TOLERANCE};
use crate::dynamics::{
    adjoint_with, forward_with, observation, ControlInjection, ControlSignal, DynamicsError, ObservationRule,
    Propagator, TimeGrid, TrajectorySet,
};
use crate::model::{Interval, ProblemSpec};
use crate::spectral::SpectralBasis;

/// Relative decrease of the terminal norm below which a sweep row is on the floor.
pub const FLOOR_DECREASE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HumError {
    #[error("conjugate gradient stalled after {iterations} iterations at relative residual {residual}")]
    CgStalled { iterations: usize, residual: f64, trace: Vec<CgStep> },
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("epsilons must be positive and strictly decreasing")]
    UnorderedEpsilons,
    #[error("observability estimate needs samples or power iterations")]
    NothingToEstimate,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions { tolerance: 1e-8, max_iter: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStep {
    pub iteration: usize,
    /// `||r|| / ||b||`.
    pub residual: f64,
    /// `||r|| / ||eps x + r||`, relative to the current terminal-state estimate.
    pub terminal_relative: f64,
    pub dual_value: f64,
}

/// Propagator, injection and grid shared by every Gramian application.
#[derive(Debug, Clone)]
pub struct HumSolver {
    prop: Propagator,
    injection: ControlInjection,
    grid: TimeGrid,
    modes: usize,
    n: usize,
    eigenvalues: Vec<f64>,
    d: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl HumSolver {
    pub fn new(spec: &ProblemSpec, basis: &SpectralBasis, grid: &TimeGrid) -> Result<Self, HumError> {
        Self::with_omega(spec, basis, grid, spec.omega)
    }

    /// Same as [`HumSolver::new`] with the control region overridden.
    pub fn with_omega(
        spec: &ProblemSpec,
        basis: &SpectralBasis,
        grid: &TimeGrid,
        omega: Interval,
    ) -> Result<Self, HumError> {
        let prop = Propagator::new(spec, basis.eigenvalues(), grid.dt())?;
        let injection = ControlInjection::new(basis, omega, &spec.control)?;
        Ok(HumSolver {
            prop,
            injection,
            grid: *grid,
            modes: basis.modes(),
            n: spec.n(),
            eigenvalues: basis.eigenvalues().to_vec(),
            d: spec.diffusion.entries().clone(),
            a: spec.coupling.clone(),
            b: spec.control.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.modes * self.n
    }
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn injection(&self) -> &ControlInjection {
        &self.injection
    }

    /// `Lambda z_t`.
    pub fn gramian_apply(&self, z_t: &[f64]) -> Result<Vec<f64>, HumError> {
        let len = self.dim();
        let adjoint = adjoint_with(&self.prop, z_t, &self.grid)?;
        let mut y = vec![0.0; len];
        let mut next = vec![0.0; len];
        let mut avg = vec![0.0; len];
        for k in 0..self.grid.steps() {
            self.prop.average_back(adjoint.at(k + 1), &mut avg);
            let g = self.injection.gram_apply(&avg);
            self.prop.step(&y, Some(&g), &mut next);
            std::mem::swap(&mut y, &mut next);
        }
        Ok(y)
    }

    /// Dense `Lambda`, column by column.
    pub fn assemble_gramian(&self) -> Result<DMatrix<f64>, HumError> {
        let len = self.dim();
        let columns: Result<Vec<Vec<f64>>, HumError> = (0..len)
            .into_par_iter()
            .map(|i| {
                let mut e = vec![0.0; len];
                e[i] = 1.0;
                self.gramian_apply(&e)
            })
            .collect();
        let columns = columns?;
        Ok(DMatrix::from_fn(len, len, |r, c| columns[c][r]))
    }

    /// Terminal state of the uncontrolled flow from `y0`.
    pub fn free_terminal(&self, y0: &[f64]) -> Result<Vec<f64>, HumError> {
        Ok(forward_with(&self.prop, None, None, y0, &self.grid)?.terminal().to_vec())
    }

    pub fn adjoint(&self, z_t: &[f64]) -> Result<TrajectorySet, HumError> {
        Ok(adjoint_with(&self.prop, z_t, &self.grid)?)
    }

    /// Control `v = B^T z` on omega generated by the datum `z_t`.
    pub fn control_from(&self, z_t: &[f64]) -> Result<ControlSignal, HumError> {
        let adjoint = self.adjoint(z_t)?;
        Ok(observation(&self.prop, &self.injection, &adjoint, ObservationRule::IntervalAverage))
    }

    pub fn forward(&self, v: &ControlSignal, y0: &[f64]) -> Result<TrajectorySet, HumError> {
        Ok(forward_with(&self.prop, Some(&self.injection), Some(v), y0, &self.grid)?)
    }

    /// `1/2 sum_k dt ||v_k||^2_omega`.
    pub fn control_cost(&self, v: &ControlSignal) -> f64 {
        0.5 * self.injection.signal_norm_squared(v, self.grid.dt())
    }

    /// Conjugate gradient on `(Lambda + eps I) x = -b` from `x = 0`.
    ///
    /// Stops once `||r|| <= tol ||Y(T)||` with `Y(T) = b + Lambda x = -(eps x + r)`,
    /// which bounds the optimality residual `||x + Y(T) / eps|| = ||r|| / eps`.
    fn conjugate_gradient(&self, epsilon: f64, b: &[f64], options: &CgOptions) -> Result<CgOutcome, HumError> {
        let len = b.len();
        let b_norm = norm(b);
        let mut x = vec![0.0; len];
        let mut trace = Vec::new();
        if b_norm == 0.0 {
            return Ok(CgOutcome { x, trace, converged: true, residual: 0.0 });
        }
        let mut r: Vec<f64> = b.iter().map(|v| -v).collect();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let mut residual = rr.sqrt() / b_norm;
        for iteration in 1..=options.max_iter {
            let mut ap = self.gramian_apply(&p)?;
            for (a, pi) in ap.iter_mut().zip(&p) {
                *a += epsilon * pi;
            }
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rr / pap;
            for i in 0..len {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            residual = rr_new.sqrt() / b_norm;
            // With r = -b - A x, J(x) = 1/2 x^T A x + b^T x = 1/2 x^T (b - r).
            let dual_value = 0.5 * x.iter().zip(b.iter().zip(&r)).map(|(xi, (bi, ri))| xi * (bi - ri)).sum::<f64>();
            let r_norm = rr_new.sqrt();
            let terminal = x.iter().zip(&r).map(|(xi, ri)| (epsilon * xi + ri).powi(2)).sum::<f64>().sqrt();
            let terminal_relative = if terminal > 0.0 { r_norm / terminal } else { f64::INFINITY };
            trace.push(CgStep { iteration, residual, terminal_relative, dual_value });
            if terminal_relative <= options.tolerance || r_norm == 0.0 {
                return Ok(CgOutcome { x, trace, converged: true, residual });
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..len {
                p[i] = r[i] + beta * p[i];
            }
        }
        Ok(CgOutcome { x, trace, converged: false, residual })
    }
}

struct CgOutcome {
    x: Vec<f64>,
    trace: Vec<CgStep>,
    converged: bool,
    residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `Lambda z_t` for a single datum.
pub fn gramian_apply(
    spec: &ProblemSpec,
    basis: &SpectralBasis,
    z_t: &[f64],
    grid: &TimeGrid,
) -> Result<Vec<f64>, HumError> {
    HumSolver::new(spec, basis, grid)?.gramian_apply(z_t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumResult {
    pub epsilon: f64,
    /// Optimal adjoint datum at `T`, modal.
    pub z_t: Vec<f64>,
    pub control: ControlSignal,
    pub state: TrajectorySet,
    pub terminal_norm: f64,
    /// `1/2 sum_k dt ||v_k||^2_omega`.
    pub control_cost: f64,
    pub dual_value: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub cg_trace: Vec<CgStep>,
    pub converged: bool,
    /// `||Z + Y(T) / eps||`.
    pub optimality_residual: f64,
    /// `control_cost + ||Y(T)||^2 / (2 eps)`.
    pub ledger_lhs: f64,
    /// `||z(0)|| ||Y0||`.
    pub ledger_rhs: f64,
}

impl HumResult {
    pub fn ledger_holds(&self) -> bool {
        self.ledger_lhs <= self.ledger_rhs * (1.0 + 1e-6) + 1e-300
    }
}

impl HumSolver {
    /// Full minimization; returns the result even when CG did not converge.
    pub fn solve(&self, epsilon: f64, y0: &[f64], options: &CgOptions) -> Result<HumResult, HumError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(HumError::InvalidEpsilon(epsilon));
        }
        let b = self.free_terminal(y0)?;
        let outcome = self.conjugate_gradient(epsilon, &b, options)?;
        let z_t = outcome.x;
        let adjoint = self.adjoint(&z_t)?;
        let control = observation(&self.prop, &self.injection, &adjoint, ObservationRule::IntervalAverage);
        let state = self.forward(&control, y0)?;
        let y_t = state.terminal();
        let terminal_norm = norm(y_t);
        let control_cost = self.control_cost(&control);
        let z_norm_sq = dot(&z_t, &z_t);
        let dual_value = control_cost + 0.5 * epsilon * z_norm_sq + dot(&z_t, &b);
        let optimality_residual =
            z_t.iter().zip(y_t).map(|(z, y)| (z + y / epsilon).powi(2)).sum::<f64>().sqrt();
        let ledger_lhs = control_cost + terminal_norm * terminal_norm / (2.0 * epsilon);
        let ledger_rhs = norm(adjoint.initial()) * norm(y0);
        Ok(HumResult {
            epsilon,
            z_t,
            control,
            state,
            terminal_norm,
            control_cost,
            dual_value,
            cg_iterations: outcome.trace.len(),
            cg_residual: outcome.residual,
            cg_trace: outcome.trace,
            converged: outcome.converged,
            optimality_residual,
            ledger_lhs,
            ledger_rhs,
        })
    }
}

/// Minimizes `J*_eps`; a non-converged CG run is reported as `CgStalled`.
pub fn minimize_dual(
    spec: &ProblemSpec,
    basis: &SpectralBasis,
    epsilon: f64,
    y0: &[f64],
    grid: &TimeGrid,
    options: &CgOptions,
) -> Result<HumResult, HumError> {
    let result = HumSolver::new(spec, basis, grid)?.solve(epsilon, y0, options)?;
    if !result.converged {
        return Err(HumError::CgStalled {
            iterations: result.cg_iterations,
            residual: result.cg_residual,
            trace: result.cg_trace,
        });
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowVerdict {
    Ok,
    /// Terminal norm decreased by less than [`FLOOR_DECREASE`]: discretization floor.
    Floor,
    CgStalled,
}

impl RowVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            RowVerdict::Ok => "ok",
            RowVerdict::Floor => "floor",
            RowVerdict::CgStalled => "cg-stalled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub terminal_norm: f64,
    pub control_cost: f64,
    pub dual_value: f64,
    pub cg_iterations: usize,
    pub verdict: RowVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,terminal_norm,control_cost,dual_value,cg_iters,verdict\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epsilon,
                r.terminal_norm,
                r.control_cost,
                r.dual_value,
                r.cg_iterations,
                r.verdict.label()
            );
        }
        s
    }

    /// Consecutive ratios `||Y(T)||_{i} / ||Y(T)||_{i+1}` over rows before the floor.
    pub fn terminal_ratios(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .take_while(|w| w[1].verdict == RowVerdict::Ok)
            .map(|w| w[0].terminal_norm / w[1].terminal_norm)
            .collect()
    }
}

/// Solves each `eps` independently (rows run concurrently, output keeps input order).
pub fn epsilon_sweep(
    spec: &ProblemSpec,
    basis: &SpectralBasis,
    y0: &[f64],
    epsilons: &[f64],
    grid: &TimeGrid,
    options: &CgOptions,
) -> Result<SweepTable, HumError> {
    if epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) || epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(HumError::UnorderedEpsilons);
    }
    let solver = HumSolver::new(spec, basis, grid)?;
    let results: Result<Vec<HumResult>, HumError> =
        epsilons.par_iter().map(|&eps| solver.solve(eps, y0, options)).collect();
    let mut rows: Vec<SweepRow> = results?
        .into_iter()
        .map(|r| SweepRow {
            epsilon: r.epsilon,
            terminal_norm: r.terminal_norm,
            control_cost: r.control_cost,
            dual_value: r.dual_value,
            cg_iterations: r.cg_iterations,
            verdict: if r.converged { RowVerdict::Ok } else { RowVerdict::CgStalled },
        })
        .collect();
    let mut on_floor = false;
    for i in 1..rows.len() {
        let (prev, cur) = (rows[i - 1].terminal_norm, rows[i].terminal_norm);
        if prev > 0.0 && cur > (1.0 - FLOOR_DECREASE) * prev {
            on_floor = true;
        }
        if on_floor && rows[i].verdict == RowVerdict::Ok {
            rows[i].verdict = RowVerdict::Floor;
        }
    }
    Ok(SweepTable { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroObservationWitness {
    /// 1-based mode carrying the witness.
    pub mode: usize,
    /// Modal datum `a w_mode` at time `T`.
    pub z_t: Vec<f64>,
    /// `sum_k dt ||B^T z||^2_omega` for the witness.
    pub observation: f64,
    /// `||z(0)||^2` for the witness.
    pub initial_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityEstimate {
    /// Lower estimate of the constant; infinite when a witness was found.
    pub estimate: f64,
    /// Best ratio among the random samples.
    pub sampled: f64,
    /// Refined value from power iteration on the whitened pencil.
    pub refined: Option<f64>,
    /// Sampled running maximum followed by the power-iteration Rayleigh quotients.
    pub trace: Vec<f64>,
    pub witness: Option<ZeroObservationWitness>,
}

impl HumSolver {
    /// Returns `(||z(0)||^2, sum_k dt ||B^T z||^2_omega)` for the datum.
    pub fn observation_pair(&self, z_t: &[f64]) -> Result<(f64, f64), HumError> {
        let adjoint = self.adjoint(z_t)?;
        let lam = self.gramian_apply(z_t)?;
        let z0 = adjoint.initial();
        Ok((dot(z0, z0), dot(&lam, z_t)))
    }

    /// Kernel direction of some `K_j^T`, checked to be unobserved numerically.
    fn kalman_witness(&self) -> Result<Option<ZeroObservationWitness>, HumError> {
        for (j, &lambda) in self.eigenvalues.iter().enumerate() {
            let k = kalman_matrix(lambda, &self.d, &self.a, &self.b);
            let svd = k.svd(true, false);
            let smax = svd.singular_values.max();
            let (pos, smin) = svd
                .singular_values
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (p, &s)| if s < acc.1 { (p, s) } else { acc });
            if smin > RANK_TOLERANCE * smax {
                continue;
            }
            let u = svd.u.expect("left singular vectors requested");
            let mut z_t = vec![0.0; self.dim()];
            for r in 0..self.n {
                z_t[j * self.n + r] = u[(r, pos)];
            }
            let (initial_energy, obs) = self.observation_pair(&z_t)?;
            if obs <= 1e-20 * initial_energy {
                return Ok(Some(ZeroObservationWitness { mode: j + 1, z_t, observation: obs, initial_energy }));
            }
        }
        Ok(None)
    }

    /// Randomized lower bound of `sup ||z(0)||^2 / sum_k dt ||B^T z||^2_omega`,
    /// optionally refined by power iteration.
    pub fn observability_estimate(
        &self,
        samples: usize,
        power_iterations: usize,
        seed: u64,
    ) -> Result<ObservabilityEstimate, HumError> {
        if samples == 0 && power_iterations == 0 {
            return Err(HumError::NothingToEstimate);
        }
        if let Some(witness) = self.kalman_witness()? {
            return Ok(ObservabilityEstimate {
                estimate: f64::INFINITY,
                sampled: f64::INFINITY,
                refined: None,
                trace: Vec::new(),
                witness: Some(witness),
            });
        }
        let len = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sampled: f64 = 0.0;
        let mut trace = Vec::new();
        for _ in 0..samples {
            let z_t: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (energy, obs) = self.observation_pair(&z_t)?;
            if obs <= 1e-20 * energy {
                return Ok(ObservabilityEstimate {
                    estimate: f64::INFINITY,
                    sampled: f64::INFINITY,
                    refined: None,
                    trace,
                    witness: Some(ZeroObservationWitness { mode: 0, z_t, observation: obs, initial_energy: energy }),
                });
            }
            sampled = sampled.max(energy / obs);
            trace.push(sampled);
        }
        let refined = if power_iterations > 0 {
            Some(self.power_refinement(power_iterations, &mut rng, &mut trace)?)
        } else {
            None
        };
        let estimate = refined.map_or(sampled, |r| r.max(sampled));
        Ok(ObservabilityEstimate { estimate, sampled, refined, trace, witness: None })
    }

    /// Power iteration on `S = W^T F W` where `Lambda = Q diag(s) Q^T`,
    /// `W = Q_k diag(s_k)^{-1/2}` over the numerically nonzero spectrum and
    /// `F` is the Gram matrix of `z_t -> z(0)`.
    fn power_refinement(
        &self,
        iterations: usize,
        rng: &mut ChaCha8Rng,
        trace: &mut Vec<f64>,
    ) -> Result<f64, HumError> {
        let len = self.dim();
        let lambda = self.assemble_gramian()?;
        let lambda = (&lambda + lambda.transpose()) * 0.5;
        let eig = lambda.symmetric_eigen();
        let smax = eig.eigenvalues.max();
        let kept: Vec<usize> = (0..len).filter(|&i| eig.eigenvalues[i] > 1e-12 * smax).collect();
        let whiten = DMatrix::from_fn(len, kept.len(), |r, c| {
            eig.eigenvectors[(r, kept[c])] / eig.eigenvalues[kept[c]].sqrt()
        });
        // z(0) = P z_t with P block-diagonal (E_j^T)^L.
        let initial_map = |x: &DVector<f64>| -> Result<DVector<f64>, HumError> {
            let z_t: Vec<f64> = x.iter().copied().collect();
            Ok(DVector::from_vec(self.adjoint(&z_t)?.initial().to_vec()))
        };
        let mut x = DVector::from_fn(kept.len(), |_, _| StandardNormal.sample(rng));
        x /= x.norm();
        let mut value = 0.0;
        for _ in 0..iterations {
            let pz = initial_map(&(&whiten * &x))?;
            value = pz.norm_squared();
            trace.push(value);
            // S x = W^T P^T P W x; P^T is the forward free flow over [0, T].
            let back = self.free_terminal(pz.as_slice())?;
            let mut y = whiten.transpose() * DVector::from_vec(back);
            let ny = y.norm();
            if ny == 0.0 {
                break;
            }
            y /= ny;
            x = y;
        }
        Ok(value)
    }
}

pub fn observability_estimate(
    spec: &ProblemSpec,
    basis: &SpectralBasis,
    grid: &TimeGrid,
    samples: usize,
    power_iterations: usize,
    seed: u64,
) -> Result<ObservabilityEstimate, HumError> {
    HumSolver::new(spec, basis, grid)?.observability_estimate(samples, power_iterations, seed)
}

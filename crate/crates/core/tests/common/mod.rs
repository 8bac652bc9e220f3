//! Reference computations that share no code with the library.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use degen_control::dynamics::{observation, ControlInjection, ObservationRule, Propagator, TimeGrid};
use degen_control::dynamics::{adjoint_with, forward_with};
use degen_control::{ProblemSpec, SpectralBasis};

/// `u(1)` for `-(x u')' = lambda u`, `u` bounded at 0 with `u(0) = 1`.
/// Integrated in `s = sqrt(x)` with RK4 from a short series start.
pub fn shooting_end_value(lambda: f64) -> f64 {
    let s0: f64 = 1e-3;
    let x0 = s0 * s0;
    // u = 1 - lambda x + lambda^2 x^2 / 4, p = x u'.
    let mut u = 1.0 - lambda * x0 + lambda * lambda * x0 * x0 / 4.0;
    let mut p = -lambda * x0 + lambda * lambda * x0 * x0 / 2.0;
    let rhs = |s: f64, u: f64, p: f64| (2.0 * p / s, -2.0 * s * lambda * u);
    let steps = 4000;
    let h = (1.0 - s0) / steps as f64;
    let mut s = s0;
    for _ in 0..steps {
        let (k1u, k1p) = rhs(s, u, p);
        let (k2u, k2p) = rhs(s + 0.5 * h, u + 0.5 * h * k1u, p + 0.5 * h * k1p);
        let (k3u, k3p) = rhs(s + 0.5 * h, u + 0.5 * h * k2u, p + 0.5 * h * k2p);
        let (k4u, k4p) = rhs(s + h, u + h * k3u, p + h * k3p);
        u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        p += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        s += h;
    }
    u
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// First `count` eigenvalues of `-(x u')'` on (0, 1), natural at 0, Dirichlet at 1.
pub fn shooting_eigenvalues(count: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let step = 0.25;
    let mut lo = 0.05;
    let mut flo = shooting_end_value(lo);
    while out.len() < count {
        let hi = lo + step;
        let fhi = shooting_end_value(hi);
        if (flo < 0.0) != (fhi < 0.0) {
            out.push(bisect(shooting_end_value, lo, hi));
        }
        lo = hi;
        flo = fhi;
    }
    out
}

/// `J_0` by its power series (fine for `x < 20`).
pub fn j0_series(x: f64) -> f64 {
    let q = -(x * x) / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..80 {
        term *= q / (k * k) as f64;
        sum += term;
    }
    sum
}

pub fn j0_zero(k: usize) -> f64 {
    let centre = std::f64::consts::PI * (k as f64 - 0.25);
    bisect(j0_series, centre - 0.5, centre + 0.5)
}

/// Dormand-Prince 5(4) with error control, for `y' = f(t, y)`.
pub fn rk45(f: impl Fn(f64, &[f64]) -> Vec<f64>, t0: f64, t1: f64, y0: &[f64], tol: f64) -> Vec<f64> {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = (t1 - t0) / 100.0;
    while t < t1 {
        if t + h > t1 {
            h = t1 - t;
        }
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        for stage in 0..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                for i in 0..n {
                    ys[i] += h * A[stage][j] * kj[i];
                }
            }
            k.push(f(t + C[stage] * h, &ys));
        }
        let mut y5 = y.clone();
        let mut err: f64 = 0.0;
        for i in 0..n {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for s in 0..7 {
                d5 += B5[s] * k[s][i];
                d4 += B4[s] * k[s][i];
            }
            y5[i] += h * d5;
            err = err.max((h * (d5 - d4)).abs() / (1.0 + y5[i].abs()));
        }
        if err <= tol {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    y
}

/// `Lambda` assembled column by column through explicit adjoint, observation
/// and forward solves with a zero initial state.
pub fn dense_gramian(spec: &ProblemSpec, basis: &SpectralBasis, grid: &TimeGrid) -> DMatrix<f64> {
    let prop = Propagator::new(spec, basis.eigenvalues(), grid.dt()).unwrap();
    let inj = ControlInjection::new(basis, spec.omega, &spec.control).unwrap();
    let dim = basis.modes() * spec.n();
    let zero = vec![0.0; dim];
    let mut out = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        let mut e = vec![0.0; dim];
        e[c] = 1.0;
        let adj = adjoint_with(&prop, &e, grid).unwrap();
        let v = observation(&prop, &inj, &adj, ObservationRule::IntervalAverage);
        let y = forward_with(&prop, Some(&inj), Some(&v), &zero, grid).unwrap();
        for (r, val) in y.terminal().iter().enumerate() {
            out[(r, c)] = *val;
        }
    }
    out
}

/// Direct LU solve of `(Lambda + eps I) z = -b`.
pub fn dense_penalized_solve(lambda: &DMatrix<f64>, eps: f64, b: &[f64]) -> Vec<f64> {
    let dim = lambda.nrows();
    let system = lambda + DMatrix::identity(dim, dim) * eps;
    let rhs = -DVector::from_column_slice(b);
    system.lu().solve(&rhs).expect("nonsingular").iter().copied().collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Deterministic pseudo-random vector in [-1, 1).
pub fn lcg_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..len)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

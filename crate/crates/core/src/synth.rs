//! Synthetic LTI error dynamics: ground-truth trajectories for tests and the
//! CLI generator, plus the closed-form Lyapunov-equation oracle.
//!
//! Trajectories integrate `xidot = A xi` with classical fixed-step RK4 and
//! are emitted in the reference-tracking framing: `r = 0` and `x = -e`, so
//! the pipeline's `e = r - x` reproduces the simulated error.

use crate::lyapunov::QuadraticForm;
use crate::timeseries::{RawSample, RawTrajectory, TimeseriesError};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("system matrix must be square with even dimension >= 2, got {rows}x{cols}")]
    BadDimensions { rows: usize, cols: usize },
    #[error("non-finite entry in system matrix")]
    NonFiniteMatrix,
    #[error("step must satisfy 0 < h <= t_end, got h = {h}, t_end = {t_end}")]
    BadStep { h: f64, t_end: f64 },
    #[error("initial state has length {got}, expected {expected}")]
    BadInitialState { expected: usize, got: usize },
    #[error("noise sigma must be finite and non-negative, got {sigma}")]
    BadSigma { sigma: f64 },
    #[error("matrix is not Hurwitz (trace {trace}, det {det})")]
    NotHurwitz { trace: f64, det: f64 },
    #[error("lyapunov solve expects a 2x2 matrix, got {rows}x{cols}")]
    NotTwoByTwo { rows: usize, cols: usize },
    #[error("singular system while solving the lyapunov equation")]
    SingularSolve,
    #[error(transparent)]
    Timeseries(#[from] TimeseriesError),
}

/// Classification of an LTI system by the real parts of its eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityLabel {
    /// All eigenvalues have strictly negative real part.
    Hurwitz,
    /// At least one eigenvalue with non-negative real part.
    Unstable,
}

/// Error-state dynamics `xidot = A xi` with `A` of size `2m x 2m`, labeled at
/// construction from its eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    label: StabilityLabel,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>) -> Result<Self, SynthError> {
        let (rows, cols) = (a.nrows(), a.ncols());
        if rows != cols || rows < 2 || rows % 2 != 0 {
            return Err(SynthError::BadDimensions { rows, cols });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(SynthError::NonFiniteMatrix);
        }
        let max_re = a
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max);
        let label = if max_re < 0.0 {
            StabilityLabel::Hurwitz
        } else {
            StabilityLabel::Unstable
        };
        Ok(Self { a, label })
    }

    /// Second-order error dynamics `eddot = -omega^2 e - 2 zeta omega edot`
    /// in companion form. Hurwitz for `omega > 0`, `zeta > 0`.
    pub fn damped_oscillator(omega: f64, zeta: f64) -> Result<Self, SynthError> {
        Self::new(DMatrix::from_row_slice(
            2,
            2,
            &[0.0, 1.0, -omega * omega, -2.0 * zeta * omega],
        ))
    }

    /// Companion dynamics whose error component grows like `e0 * exp(rate t)`
    /// when started from `xi0 = [e0, rate * e0]`.
    pub fn exponential_growth(rate: f64) -> Result<Self, SynthError> {
        Self::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, rate]))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn label(&self) -> StabilityLabel {
        self.label
    }

    /// State dimension `2m`.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

/// RK4 integration of the full state, returned as `(t_k, xi_k)` pairs on the
/// grid `t_k = k h` up to `t_end`.
pub fn simulate_states(
    sys: &LtiSystem,
    xi0: &DVector<f64>,
    t_end: f64,
    h: f64,
) -> Result<Vec<(f64, DVector<f64>)>, SynthError> {
    if !(h.is_finite() && h > 0.0 && t_end.is_finite() && t_end >= h) {
        return Err(SynthError::BadStep { h, t_end });
    }
    if xi0.len() != sys.n() {
        return Err(SynthError::BadInitialState {
            expected: sys.n(),
            got: xi0.len(),
        });
    }
    let a = &sys.a;
    let steps = ((t_end / h) + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = xi0.clone();
    out.push((0.0, y.clone()));
    for k in 1..=steps {
        let k1 = a * &y;
        let k2 = a * (&y + &k1 * (h / 2.0));
        let k3 = a * (&y + &k2 * (h / 2.0));
        let k4 = a * (&y + &k3 * h);
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push((k as f64 * h, y.clone()));
    }
    Ok(out)
}

/// Simulate and emit the reference-tracking trajectory: `r = 0`, `x = -e`
/// where `e` is the leading `m` components of the state.
pub fn simulate(
    sys: &LtiSystem,
    xi0: &DVector<f64>,
    t_end: f64,
    h: f64,
) -> Result<RawTrajectory, SynthError> {
    let states = simulate_states(sys, xi0, t_end, h)?;
    let m = sys.n() / 2;
    let samples = states
        .into_iter()
        .map(|(t, xi)| RawSample {
            t,
            r: DVector::zeros(m),
            x: -xi.rows(0, m).into_owned(),
        })
        .collect();
    Ok(RawTrajectory::new(samples)?)
}

/// Additive measurement noise on the observed state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

/// Add i.i.d. Gaussian noise `N(0, sigma^2)` to every component of `x`,
/// leaving `r` and the time stamps untouched. Deterministic per seed.
pub fn add_noise(raw: &RawTrajectory, spec: &NoiseSpec) -> Result<RawTrajectory, SynthError> {
    if !(spec.sigma.is_finite() && spec.sigma >= 0.0) {
        return Err(SynthError::BadSigma { sigma: spec.sigma });
    }
    if spec.sigma == 0.0 {
        return Ok(raw.clone());
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.sigma).expect("sigma validated");
    let samples = raw
        .samples()
        .iter()
        .map(|s| {
            let mut x = s.x.clone();
            for v in x.iter_mut() {
                *v += normal.sample(&mut rng);
            }
            RawSample {
                t: s.t,
                r: s.r.clone(),
                x,
            }
        })
        .collect();
    Ok(RawTrajectory::new(samples)?)
}

/// Solve `A'Q + QA = -I` for the unique symmetric `Q`, 2x2 Hurwitz `A`.
///
/// Writing `Q = [[q1, q2], [q2, q3]]` reduces the equation to a 3x3 linear
/// system in `(q1, q2, q3)`, solved here by Gaussian elimination with partial
/// pivoting. The result is positive definite whenever `A` is Hurwitz, which
/// certifies that the learner's zero-loss set is non-empty on exact flows.
pub fn solve_lyapunov_2x2(a: &DMatrix<f64>) -> Result<QuadraticForm, SynthError> {
    if a.nrows() != 2 || a.ncols() != 2 {
        return Err(SynthError::NotTwoByTwo {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let trace = a[(0, 0)] + a[(1, 1)];
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    // Hurwitz for 2x2: trace < 0 and det > 0.
    if !(trace < 0.0 && det > 0.0) {
        return Err(SynthError::NotHurwitz { trace, det });
    }
    let (a11, a12, a21, a22) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    // Rows: d/d(q1,q2,q3) of the (0,0), (0,1), (1,1) components.
    let mut sys = [
        [2.0 * a11, 2.0 * a21, 0.0, -1.0],
        [a12, a11 + a22, a21, 0.0],
        [0.0, 2.0 * a12, 2.0 * a22, -1.0],
    ];
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| {
                sys[i][col]
                    .abs()
                    .partial_cmp(&sys[j][col].abs())
                    .expect("finite pivots")
            })
            .unwrap();
        if sys[pivot][col].abs() < 1e-300 {
            return Err(SynthError::SingularSolve);
        }
        sys.swap(col, pivot);
        let pivot_row = sys[col];
        for (row, coeffs) in sys.iter_mut().enumerate() {
            if row != col {
                let f = coeffs[col] / pivot_row[col];
                for (k, value) in coeffs.iter_mut().enumerate().skip(col) {
                    *value -= f * pivot_row[k];
                }
            }
        }
    }
    let q1 = sys[0][3] / sys[0][0];
    let q2 = sys[1][3] / sys[1][1];
    let q3 = sys[2][3] / sys[2][2];
    Ok(
        QuadraticForm::from_matrix(DMatrix::from_row_slice(2, 2, &[q1, q2, q2, q3]))
            .expect("constructed symmetric"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn undamped_oscillator_matches_cosine() {
        // Step ~0.01 chosen to land exactly on t = pi, where e(t) = cos t = -1.
        let sys = LtiSystem::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        let h = std::f64::consts::PI / 314.0;
        let states = simulate_states(
            &sys,
            &DVector::from_row_slice(&[1.0, 0.0]),
            std::f64::consts::PI,
            h,
        )
        .unwrap();
        let (t_last, xi_last) = states.last().unwrap();
        assert!((t_last - std::f64::consts::PI).abs() < 1e-12);
        assert!((xi_last[0] - (-1.0)).abs() < 1e-6, "e(pi) = {}", xi_last[0]);
    }

    #[test]
    fn pure_decay_matches_exponential() {
        let sys = LtiSystem::new(-DMatrix::identity(2, 2)).unwrap();
        let states =
            simulate_states(&sys, &DVector::from_row_slice(&[1.0, 1.0]), 1.0, 0.01).unwrap();
        let (_, xi_last) = states.last().unwrap();
        let want = (-1.0f64).exp();
        assert!((xi_last[0] - want).abs() < 1e-8);
        assert!((xi_last[1] - want).abs() < 1e-8);
    }

    #[test]
    fn step_halving_shows_fourth_order_convergence() {
        let sys = LtiSystem::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        let xi0 = DVector::from_row_slice(&[1.0, 0.0]);
        let t_end = 2.0;
        let max_err = |h: f64| {
            simulate_states(&sys, &xi0, t_end, h)
                .unwrap()
                .iter()
                .map(|(t, xi)| (xi[0] - t.cos()).abs())
                .fold(0.0f64, f64::max)
        };
        let e1 = max_err(0.1);
        let e2 = max_err(0.05);
        let ratio = e1 / e2;
        assert!(
            (12.0..20.0).contains(&ratio),
            "expected ~16x error reduction, got {ratio}"
        );
    }

    #[test]
    fn backward_integration_returns_to_start() {
        let sys = LtiSystem::damped_oscillator(1.2, 0.3).unwrap();
        let xi0 = DVector::from_row_slice(&[0.8, -0.4]);
        let fwd = simulate_states(&sys, &xi0, 2.0, 0.01).unwrap();
        let (_, end) = fwd.last().unwrap();
        let rev = LtiSystem::new(-sys.matrix().clone()).unwrap();
        let back = simulate_states(&rev, end, 2.0, 0.01).unwrap();
        let (_, start) = back.last().unwrap();
        for i in 0..2 {
            assert!((start[i] - xi0[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn simulate_emits_reference_tracking_framing() {
        let sys = LtiSystem::damped_oscillator(1.0, 0.2).unwrap();
        let raw = simulate(&sys, &DVector::from_row_slice(&[1.0, 0.0]), 1.0, 0.1).unwrap();
        assert_eq!(raw.len(), 11);
        for s in raw.samples() {
            assert_eq!(s.r[0], 0.0);
        }
        // e = r - x reproduces the simulated error component.
        assert_eq!(raw.samples()[0].x[0], -1.0);
    }

    #[test]
    fn labels_follow_eigenvalues() {
        assert_eq!(
            LtiSystem::damped_oscillator(1.0, 0.5).unwrap().label(),
            StabilityLabel::Hurwitz
        );
        assert_eq!(
            LtiSystem::exponential_growth(0.5).unwrap().label(),
            StabilityLabel::Unstable
        );
        let marginal =
            LtiSystem::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        assert_eq!(marginal.label(), StabilityLabel::Unstable);
    }

    #[test]
    fn rejects_bad_steps() {
        let sys = LtiSystem::damped_oscillator(1.0, 0.5).unwrap();
        let xi0 = DVector::from_row_slice(&[1.0, 0.0]);
        assert!(matches!(
            simulate(&sys, &xi0, 1.0, 0.0),
            Err(SynthError::BadStep { .. })
        ));
        assert!(matches!(
            simulate(&sys, &xi0, 0.05, 0.1),
            Err(SynthError::BadStep { .. })
        ));
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let sys = LtiSystem::damped_oscillator(1.0, 0.2).unwrap();
        let raw = simulate(&sys, &DVector::from_row_slice(&[1.0, 0.0]), 2.0, 0.1).unwrap();
        let noisy = add_noise(
            &raw,
            &NoiseSpec {
                sigma: 0.0,
                seed: 7,
            },
        )
        .unwrap();
        assert_eq!(noisy, raw);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let sys = LtiSystem::damped_oscillator(1.0, 0.2).unwrap();
        let raw = simulate(&sys, &DVector::from_row_slice(&[1.0, 0.0]), 2.0, 0.1).unwrap();
        let spec = NoiseSpec {
            sigma: 0.05,
            seed: 99,
        };
        let a = add_noise(&raw, &spec).unwrap();
        let b = add_noise(&raw, &spec).unwrap();
        assert_eq!(a, b);
        let c = add_noise(
            &raw,
            &NoiseSpec {
                sigma: 0.05,
                seed: 100,
            },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_sample_std_matches_sigma() {
        let sys = LtiSystem::new(-DMatrix::identity(2, 2)).unwrap();
        let raw = simulate(&sys, &DVector::from_row_slice(&[1.0, 0.0]), 100.0, 0.01).unwrap();
        let sigma = 0.2;
        let noisy = add_noise(&raw, &NoiseSpec { sigma, seed: 17 }).unwrap();
        let diffs: Vec<f64> = raw
            .samples()
            .iter()
            .zip(noisy.samples())
            .map(|(a, b)| b.x[0] - a.x[0])
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!(
            (std - sigma).abs() / sigma < 0.05,
            "sample std {std} vs sigma {sigma} over {n} points"
        );
    }

    #[test]
    fn lyapunov_solution_for_pure_decay() {
        let q = solve_lyapunov_2x2(&(-DMatrix::identity(2, 2))).unwrap();
        assert_eq!(q.row_major(), vec![0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn lyapunov_solution_matches_hand_solve() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]);
        let q = solve_lyapunov_2x2(&a).unwrap();
        let want = [1.5, 0.5, 0.5, 1.0];
        for (got, want) in q.row_major().iter().zip(want) {
            assert_relative_eq!(got, &want, max_relative = 1e-14);
        }
    }

    #[test]
    fn lyapunov_rejects_non_hurwitz() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.5]);
        assert!(matches!(
            solve_lyapunov_2x2(&a),
            Err(SynthError::NotHurwitz { .. })
        ));
    }

    #[test]
    fn lyapunov_residual_vanishes_on_random_hurwitz_systems() {
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        let mut checked = 0;
        while checked < 100 {
            let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-3.0..3.0));
            let trace = a[(0, 0)] + a[(1, 1)];
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            if !(trace < -0.05 && det > 0.05) {
                continue;
            }
            checked += 1;
            let q = solve_lyapunov_2x2(&a).unwrap();
            let residual = a.transpose() * q.matrix() + q.matrix() * &a + DMatrix::identity(2, 2);
            assert!(
                residual.amax() <= 1e-12,
                "residual {} for A = {a}",
                residual.amax()
            );
            let lambda_min = q
                .matrix()
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            assert!(lambda_min > 0.0);
        }
    }

    #[test]
    fn oracle_certifies_exact_flows() {
        // With Q* solving A'Q + QA = -I, Vdot along exact flows is -|xi|^2,
        // so the zero-loss set is non-empty for small margins.
        let sys = LtiSystem::damped_oscillator(1.1, 0.4).unwrap();
        let q = solve_lyapunov_2x2(sys.matrix()).unwrap();
        let states =
            simulate_states(&sys, &DVector::from_row_slice(&[1.0, 0.0]), 10.0, 0.01).unwrap();
        for (_, xi) in states.iter().step_by(50) {
            let xidot = sys.matrix() * xi;
            let vdot = q.eval_vdot(xi, &xidot).unwrap();
            let norm2 = xi.dot(xi);
            assert_relative_eq!(vdot, -norm2, max_relative = 1e-10);
        }
    }
}

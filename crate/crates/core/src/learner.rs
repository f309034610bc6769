//! Candidate learning: Cholesky parameterization, hinge loss, and full-batch
//! gradient descent with divergence detection.
//!
//! The free parameter vector `theta` holds `n` raw diagonal pre-activations
//! followed by the `n(n-1)/2` off-diagonal entries of the factor in row-major
//! order. Softplus maps the pre-activations to strictly positive diagonal
//! entries, so every parameter vector assembles to a valid factor and every
//! assembled `Q = L L'` is positive definite by construction.
//!
//! Two parameterizations are available:
//!
//! - `Constant`: `theta` is optimized directly. This is the default and the
//!   certificate-bearing path, equivalent to a network with zero weights and
//!   a trainable output bias.
//! - `Mlp`: `theta` is produced per sample by a tanh network fed with `xi`.
//!   The certificate is then extracted as the sample mean of `Q(xi_k)` with a
//!   non-constancy diagnostic (see the certifier).
//!
//! Gradients are analytic: `dVdot/dL = 2 (xi xidot' + xidot xi') L` restricted
//! to the lower triangle, chained through softplus on the diagonal and, in
//! `Mlp` mode, backpropagated through the network. At the hinge kink the
//! subgradient 0 is used: a satisfied constraint never pushes the parameters.

use crate::lyapunov::QuadraticForm;
use crate::lyapunov::{tri_len, LowerTriangularFactor};
use crate::timeseries::UniformTrajectory;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("parameter dimension {params_n} does not match trajectory state dimension {traj_n}")]
    DimensionMismatch { params_n: usize, traj_n: usize },
    #[error("config field `{name}` must be {requirement}, got {value}")]
    InvalidConfig {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("flat parameter vector has length {got}, expected {expected}")]
    FlatLength { expected: usize, got: usize },
    #[error("theta has length {got}, expected {expected} for dimension {n}")]
    ThetaLength {
        n: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite parameter at index {index}")]
    NonFiniteParam { index: usize },
    #[error("mlp layer sizes must chain from 2m to n(n+1)/2, got {0:?}")]
    BadLayerSizes(Vec<usize>),
}

/// Numerically stable `ln(1 + exp(x))`.
///
/// Uses the branch `softplus(x) = max(x, 0) + ln(1 + exp(-|x|))`, exact in the
/// limits: `softplus(20) = 20 + ln(1 + e^-20) ~ 20.0000000021`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`].
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `softplus` underflows to exactly 0 for very negative inputs; the diagonal
/// is floored at the smallest positive normal to keep the factor valid.
const DIAG_FLOOR: f64 = f64::MIN_POSITIVE;

/// Hinge penalty on the decrease condition: `max(0, Vdot + gamma)`.
pub fn hinge_loss(vdot: f64, gamma: f64) -> f64 {
    (vdot + gamma).max(0.0)
}

/// Free parameters of the constant candidate.
///
/// Layout: `theta[0..n]` are raw diagonal pre-activations, `theta[n..]` the
/// off-diagonal factor entries in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyParams {
    n: usize,
    theta: DVector<f64>,
}

impl CholeskyParams {
    pub fn new(n: usize, theta: DVector<f64>) -> Result<Self, LearnerError> {
        if theta.len() != tri_len(n) || n == 0 {
            return Err(LearnerError::ThetaLength {
                n,
                expected: tri_len(n),
                got: theta.len(),
            });
        }
        if let Some(index) = theta.iter().position(|v| !v.is_finite()) {
            return Err(LearnerError::NonFiniteParam { index });
        }
        Ok(Self { n, theta })
    }

    fn from_flat_unchecked(n: usize, theta: DVector<f64>) -> Self {
        Self { n, theta }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    /// Assemble the factor: softplus on the diagonal pre-activations,
    /// off-diagonals passed through verbatim. Total on finite input.
    pub fn assemble_factor(&self) -> LowerTriangularFactor {
        let entries = factor_entries(self.n, self.theta.as_slice());
        LowerTriangularFactor::new(self.n, entries).expect("softplus diagonal is strictly positive")
    }

    pub fn quadratic_form(&self) -> QuadraticForm {
        QuadraticForm::from_factor(&self.assemble_factor())
    }
}

/// Row-major lower-triangle entries assembled from a theta-layout slice.
fn factor_entries(n: usize, theta: &[f64]) -> Vec<f64> {
    let mut entries = Vec::with_capacity(tri_len(n));
    for i in 0..n {
        for j in 0..=i {
            if i == j {
                entries.push(softplus(theta[i]).max(DIAG_FLOOR));
            } else {
                entries.push(theta[off_index(n, i, j)]);
            }
        }
    }
    entries
}

fn factor_matrix(n: usize, theta: &[f64]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        l[(i, i)] = softplus(theta[i]).max(DIAG_FLOOR);
        debug_assert!(l[(i, i)] > 0.0);
        for j in 0..i {
            l[(i, j)] = theta[off_index(n, i, j)];
        }
    }
    l
}

/// Index of off-diagonal entry `(i, j)`, `i > j`, in the theta layout.
fn off_index(n: usize, i: usize, j: usize) -> usize {
    n + i * (i - 1) / 2 + j
}

/// A tanh multilayer perceptron producing theta-layout output from `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    sizes: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

impl MlpParams {
    pub fn new(
        sizes: Vec<usize>,
        weights: Vec<DMatrix<f64>>,
        biases: Vec<DVector<f64>>,
    ) -> Result<Self, LearnerError> {
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().unwrap() != tri_len(sizes[0]) {
            return Err(LearnerError::BadLayerSizes(sizes));
        }
        if weights.len() != sizes.len() - 1 || biases.len() != sizes.len() - 1 {
            return Err(LearnerError::BadLayerSizes(sizes));
        }
        for l in 0..weights.len() {
            if weights[l].nrows() != sizes[l + 1]
                || weights[l].ncols() != sizes[l]
                || biases[l].len() != sizes[l + 1]
            {
                return Err(LearnerError::BadLayerSizes(sizes));
            }
        }
        Ok(Self {
            sizes,
            weights,
            biases,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Input dimension `2m`.
    pub fn n(&self) -> usize {
        self.sizes[0]
    }

    /// Forward pass: tanh hidden layers, affine output interpreted in the
    /// theta layout.
    pub fn forward(&self, xi: &DVector<f64>) -> Result<DVector<f64>, LearnerError> {
        if xi.len() != self.sizes[0] {
            return Err(LearnerError::DimensionMismatch {
                params_n: self.sizes[0],
                traj_n: xi.len(),
            });
        }
        let mut a = xi.clone();
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let mut z = &self.weights[l] * &a + &self.biases[l];
            if l < last {
                z.apply(|v| *v = v.tanh());
            }
            a = z;
        }
        Ok(a)
    }

    fn flat_len(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.nrows() * w.ncols() + b.len())
            .sum()
    }
}

/// Parameterization mode of the learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Constant,
    Mlp,
}

/// Trainable parameters in either mode, with a flat-vector view used by the
/// optimizer and by finite-difference checks.
///
/// Flat layout: `Constant` is `theta` itself; `Mlp` concatenates, layer by
/// layer, the weight matrix in row-major order followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnerParams {
    Constant(CholeskyParams),
    Mlp(MlpParams),
}

impl LearnerParams {
    /// Seeded initialization: zero base (softplus diagonal starts at `ln 2`)
    /// plus uniform noise in `[-0.01, 0.01]` on every free parameter.
    pub fn init(mode: Mode, n: usize, hidden: &[usize], seed: u64) -> Result<Self, LearnerError> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut noise = move || rng.random_range(-0.01..=0.01);
        match mode {
            Mode::Constant => {
                let theta = DVector::from_iterator(tri_len(n), (0..tri_len(n)).map(|_| noise()));
                Ok(Self::Constant(CholeskyParams::new(n, theta)?))
            }
            Mode::Mlp => {
                let mut sizes = Vec::with_capacity(hidden.len() + 2);
                sizes.push(n);
                sizes.extend_from_slice(hidden);
                sizes.push(tri_len(n));
                let mut weights = Vec::new();
                let mut biases = Vec::new();
                for l in 0..sizes.len() - 1 {
                    let (rows, cols) = (sizes[l + 1], sizes[l]);
                    let mut w = DMatrix::zeros(rows, cols);
                    for i in 0..rows {
                        for j in 0..cols {
                            w[(i, j)] = noise();
                        }
                    }
                    let b = DVector::from_iterator(rows, (0..rows).map(|_| noise()));
                    weights.push(w);
                    biases.push(b);
                }
                Ok(Self::Mlp(MlpParams::new(sizes, weights, biases)?))
            }
        }
    }

    /// Candidate dimension `n = 2m`.
    pub fn n(&self) -> usize {
        match self {
            Self::Constant(p) => p.n(),
            Self::Mlp(p) => p.n(),
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Self::Constant(_) => Mode::Constant,
            Self::Mlp(_) => Mode::Mlp,
        }
    }

    pub fn flat_len(&self) -> usize {
        match self {
            Self::Constant(p) => p.theta.len(),
            Self::Mlp(p) => p.flat_len(),
        }
    }

    pub fn flat(&self) -> DVector<f64> {
        match self {
            Self::Constant(p) => p.theta.clone(),
            Self::Mlp(p) => {
                let mut out = Vec::with_capacity(p.flat_len());
                for (w, b) in p.weights.iter().zip(&p.biases) {
                    for i in 0..w.nrows() {
                        for j in 0..w.ncols() {
                            out.push(w[(i, j)]);
                        }
                    }
                    out.extend(b.iter().copied());
                }
                DVector::from_vec(out)
            }
        }
    }

    /// Same shapes, new values.
    pub fn with_flat(&self, flat: &DVector<f64>) -> Result<Self, LearnerError> {
        if flat.len() != self.flat_len() {
            return Err(LearnerError::FlatLength {
                expected: self.flat_len(),
                got: flat.len(),
            });
        }
        match self {
            Self::Constant(p) => Ok(Self::Constant(CholeskyParams::from_flat_unchecked(
                p.n,
                flat.clone(),
            ))),
            Self::Mlp(p) => {
                let mut weights = Vec::with_capacity(p.weights.len());
                let mut biases = Vec::with_capacity(p.biases.len());
                let mut at = 0;
                for (w, b) in p.weights.iter().zip(&p.biases) {
                    let mut nw = DMatrix::zeros(w.nrows(), w.ncols());
                    for i in 0..w.nrows() {
                        for j in 0..w.ncols() {
                            nw[(i, j)] = flat[at];
                            at += 1;
                        }
                    }
                    let nb = DVector::from_iterator(b.len(), (at..at + b.len()).map(|k| flat[k]));
                    at += b.len();
                    weights.push(nw);
                    biases.push(nb);
                }
                Ok(Self::Mlp(MlpParams::new(p.sizes.clone(), weights, biases)?))
            }
        }
    }
}

/// Full training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Decrease margin `gamma > 0`: the trained condition is `Vdot <= -gamma`.
    pub gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Drives parameter initialization only.
    pub seed: u64,
    /// Divergence threshold on the max-norm of the flat parameter vector.
    pub theta_max: f64,
    /// Convergence threshold on the batch loss.
    pub tol_loss: f64,
    pub mode: Mode,
    /// Hidden layer widths (`Mlp` mode only).
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 1e-3,
            learning_rate: 0.05,
            epochs: 5000,
            seed: 0,
            theta_max: 1e6,
            tol_loss: 1e-9,
            mode: Mode::Constant,
            hidden: vec![16],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(LearnerError::InvalidConfig {
                name: "gamma",
                requirement: "positive and finite",
                value: self.gamma,
            });
        }
        // A zero learning rate is allowed: it trains nothing and terminates
        // at the epoch limit, which is occasionally useful for probing.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(LearnerError::InvalidConfig {
                name: "learning_rate",
                requirement: "non-negative and finite",
                value: self.learning_rate,
            });
        }
        if self.epochs == 0 {
            return Err(LearnerError::InvalidConfig {
                name: "epochs",
                requirement: "at least 1",
                value: 0.0,
            });
        }
        if !(self.theta_max.is_finite() && self.theta_max > 0.0) {
            return Err(LearnerError::InvalidConfig {
                name: "theta_max",
                requirement: "positive and finite",
                value: self.theta_max,
            });
        }
        if !(self.tol_loss.is_finite() && self.tol_loss >= 0.0) {
            return Err(LearnerError::InvalidConfig {
                name: "tol_loss",
                requirement: "non-negative and finite",
                value: self.tol_loss,
            });
        }
        if self.mode == Mode::Mlp && self.hidden.contains(&0) {
            return Err(LearnerError::InvalidConfig {
                name: "hidden",
                requirement: "layer widths of at least 1",
                value: 0.0,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    EpochLimit,
    Diverged,
}

/// Result of a training run. Histories have one entry per epoch actually run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub loss_history: Vec<f64>,
    pub param_norm_history: Vec<f64>,
    pub termination: Termination,
    pub final_params: LearnerParams,
}

impl TrainOutcome {
    /// Last evaluated batch loss.
    pub fn final_loss(&self) -> f64 {
        self.loss_history.last().copied().unwrap_or(f64::NAN)
    }

    pub fn epochs_run(&self) -> usize {
        self.loss_history.len()
    }

    /// Max-norm of the final parameters (not the per-epoch history, which
    /// records pre-update norms and so lags a divergent last step).
    pub fn final_param_norm(&self) -> f64 {
        self.final_params.flat().amax()
    }
}

/// Mean hinge loss over the trajectory samples.
pub fn batch_loss(
    params: &LearnerParams,
    traj: &UniformTrajectory,
    config: &TrainConfig,
) -> Result<f64, LearnerError> {
    loss_and_grad(params, traj, config.gamma, false).map(|(loss, _)| loss)
}

/// Exact gradient of [`batch_loss`] with respect to the flat parameters.
pub fn batch_grad(
    params: &LearnerParams,
    traj: &UniformTrajectory,
    config: &TrainConfig,
) -> Result<DVector<f64>, LearnerError> {
    loss_and_grad(params, traj, config.gamma, true).map(|(_, grad)| grad.unwrap())
}

/// One pass over the samples computing the mean hinge loss and, optionally,
/// its gradient. The reduction runs in sample-index order so results are
/// reproducible bit for bit.
fn loss_and_grad(
    params: &LearnerParams,
    traj: &UniformTrajectory,
    gamma: f64,
    want_grad: bool,
) -> Result<(f64, Option<DVector<f64>>), LearnerError> {
    let n = traj.n();
    if params.n() != n {
        return Err(LearnerError::DimensionMismatch {
            params_n: params.n(),
            traj_n: n,
        });
    }
    let count = traj.len() as f64;
    match params {
        LearnerParams::Constant(p) => {
            let l_mat = factor_matrix(n, p.theta.as_slice());
            let q = &l_mat * l_mat.transpose();
            let mut loss_sum = 0.0;
            let mut m_acc = DMatrix::zeros(n, n);
            let mut qxd = DVector::zeros(n);
            for (xi, xidot) in traj.xi().iter().zip(traj.xidot()) {
                qxd.gemv(1.0, &q, xidot, 0.0);
                let vdot = 2.0 * xi.dot(&qxd);
                let h = vdot + gamma;
                if h > 0.0 {
                    loss_sum += h;
                    if want_grad {
                        m_acc.ger(1.0, xi, xidot, 1.0);
                        m_acc.ger(1.0, xidot, xi, 1.0);
                    }
                }
            }
            let loss = loss_sum / count;
            let grad = want_grad.then(|| {
                let gl = (&m_acc * &l_mat) * (2.0 / count);
                let mut grad = DVector::zeros(tri_len(n));
                for i in 0..n {
                    grad[i] = gl[(i, i)] * sigmoid(p.theta[i]);
                }
                for i in 1..n {
                    for j in 0..i {
                        grad[off_index(n, i, j)] = gl[(i, j)];
                    }
                }
                grad
            });
            Ok((loss, grad))
        }
        LearnerParams::Mlp(p) => {
            let layers = p.weights.len();
            let mut gw: Vec<DMatrix<f64>> = p
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect();
            let mut gb: Vec<DVector<f64>> =
                p.biases.iter().map(|b| DVector::zeros(b.len())).collect();
            let mut loss_sum = 0.0;
            let mut acts: Vec<DVector<f64>> = Vec::with_capacity(layers + 1);
            for (xi, xidot) in traj.xi().iter().zip(traj.xidot()) {
                acts.clear();
                acts.push(xi.clone());
                for l in 0..layers {
                    let mut z = &p.weights[l] * &acts[l] + &p.biases[l];
                    if l + 1 < layers {
                        z.apply(|v| *v = v.tanh());
                    }
                    acts.push(z);
                }
                let out = &acts[layers];
                let l_mat = factor_matrix(n, out.as_slice());
                let q = &l_mat * l_mat.transpose();
                let vdot = 2.0 * xi.dot(&(&q * xidot));
                let h = vdot + gamma;
                if h > 0.0 {
                    loss_sum += h;
                    if want_grad {
                        let mut s = DMatrix::zeros(n, n);
                        s.ger(2.0, xi, xidot, 1.0);
                        s.ger(2.0, xidot, xi, 1.0);
                        let gl = &s * &l_mat;
                        let mut delta = DVector::zeros(tri_len(n));
                        for i in 0..n {
                            delta[i] = gl[(i, i)] * sigmoid(out[i]);
                        }
                        for i in 1..n {
                            for j in 0..i {
                                delta[off_index(n, i, j)] = gl[(i, j)];
                            }
                        }
                        for l in (0..layers).rev() {
                            gw[l].ger(1.0, &delta, &acts[l], 1.0);
                            gb[l] += &delta;
                            if l > 0 {
                                let mut back = p.weights[l].tr_mul(&delta);
                                for (i, v) in back.iter_mut().enumerate() {
                                    *v *= 1.0 - acts[l][i] * acts[l][i];
                                }
                                delta = back;
                            }
                        }
                    }
                }
            }
            let loss = loss_sum / count;
            let grad = want_grad.then(|| {
                let mut out = Vec::with_capacity(p.flat_len());
                for (w, b) in gw.iter().zip(&gb) {
                    for i in 0..w.nrows() {
                        for j in 0..w.ncols() {
                            out.push(w[(i, j)] / count);
                        }
                    }
                    out.extend(b.iter().map(|v| v / count));
                }
                DVector::from_vec(out)
            });
            Ok((loss, grad))
        }
    }
}

/// Full-batch gradient descent on the hinge loss.
///
/// Per epoch: evaluate the loss and gradient at the current parameters, then
/// step `theta <- theta - lr * grad`. Terminates `Converged` when the loss
/// drops to `tol_loss`, `Diverged` when the parameter max-norm exceeds
/// `theta_max` or anything turns non-finite, and `EpochLimit` otherwise.
/// Deterministic for a fixed seed, config, and data.
pub fn train(traj: &UniformTrajectory, config: &TrainConfig) -> Result<TrainOutcome, LearnerError> {
    config.validate()?;
    let n = traj.n();
    let template = LearnerParams::init(config.mode, n, &config.hidden, config.seed)?;
    let mut flat = template.flat();
    let mut loss_history = Vec::new();
    let mut param_norm_history = Vec::new();

    let mut termination = None;
    for _epoch in 0..config.epochs {
        let norm = flat.amax();
        if !norm.is_finite() || norm > config.theta_max {
            termination = Some(Termination::Diverged);
            break;
        }
        let params = template.with_flat(&flat)?;
        let (loss, grad) = loss_and_grad(&params, traj, config.gamma, true)?;
        loss_history.push(loss);
        param_norm_history.push(norm);
        if !loss.is_finite() {
            termination = Some(Termination::Diverged);
            break;
        }
        if loss <= config.tol_loss {
            termination = Some(Termination::Converged);
            break;
        }
        let grad = grad.expect("gradient requested");
        let next = &flat - grad * config.learning_rate;
        if next.iter().any(|v| !v.is_finite()) {
            termination = Some(Termination::Diverged);
            break;
        }
        flat = next;
    }
    let termination = termination.unwrap_or({
        if flat.amax() > config.theta_max {
            Termination::Diverged
        } else {
            Termination::EpochLimit
        }
    });
    Ok(TrainOutcome {
        loss_history,
        param_norm_history,
        termination,
        final_params: template.with_flat(&flat)?,
    })
}

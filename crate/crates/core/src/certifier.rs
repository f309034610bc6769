//! Pipeline orchestration: resample, differentiate, train, estimate the noise
//! bound, and return a tri-state verdict.
//!
//! A failed search is never reported as instability. `NotFound` (the search
//! plateaued or a gate rejected the candidate) is kept distinct from
//! `Diverged` (the parameters blew up) so callers can react differently to a
//! plateau and a blow-up.

use crate::learner::{
    self, LearnerError, LearnerParams, Mode, Termination, TrainConfig, TrainOutcome,
};
use crate::lyapunov::{LyapunovError, QuadraticForm};
use crate::timeseries::{self, RawTrajectory, TimeseriesError, UniformTrajectory};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error(transparent)]
    Timeseries(#[from] TimeseriesError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
    #[error("config field `{name}` is invalid: {message}")]
    InvalidConfig { name: &'static str, message: String },
    #[error("trajectory has no samples")]
    EmptyTrajectory,
    #[error("cannot reconstruct verdict: {0}")]
    BadDocument(String),
}

/// Full pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    /// Uniform resampling step in seconds. Defaults to the 30 s grid used for
    /// flight-style data; always override for faster dynamics.
    pub dt: f64,
    /// Optional odd moving-average width applied before differentiation.
    pub smooth_window: Option<usize>,
    pub train: TrainConfig,
    /// Reject certificates whose noise bound exceeds this value. `None`
    /// leaves the bound unchecked, so the gate is convergence alone.
    pub eps_max: Option<f64>,
    /// Mlp mode only: relative tolerance on `max_k |Q(xi_k) - Qbar|` before
    /// the sample-mean candidate is refused as non-constant.
    pub non_constancy_tol: f64,
    /// Fraction of trailing samples excluded from training. The noise bound
    /// is still estimated over all samples, so it remains valid for the
    /// training set while being stressed on data the learner never saw.
    pub holdout: Option<f64>,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            dt: 30.0,
            smooth_window: None,
            train: TrainConfig::default(),
            eps_max: None,
            non_constancy_tol: 1e-6,
            holdout: None,
        }
    }
}

impl CertifyConfig {
    pub fn validate(&self) -> Result<(), CertifyError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(CertifyError::InvalidConfig {
                name: "dt",
                message: format!("must be positive and finite, got {}", self.dt),
            });
        }
        if let Some(w) = self.smooth_window {
            if w % 2 == 0 {
                return Err(CertifyError::InvalidConfig {
                    name: "smooth_window",
                    message: format!("must be odd, got {w}"),
                });
            }
        }
        if let Some(e) = self.eps_max {
            if !(e.is_finite() && e >= 0.0) {
                return Err(CertifyError::InvalidConfig {
                    name: "eps_max",
                    message: format!("must be non-negative and finite, got {e}"),
                });
            }
        }
        if !(self.non_constancy_tol.is_finite() && self.non_constancy_tol >= 0.0) {
            return Err(CertifyError::InvalidConfig {
                name: "non_constancy_tol",
                message: format!("must be non-negative, got {}", self.non_constancy_tol),
            });
        }
        if let Some(h) = self.holdout {
            if !(h > 0.0 && h < 1.0) {
                return Err(CertifyError::InvalidConfig {
                    name: "holdout",
                    message: format!("must lie in (0, 1), got {h}"),
                });
            }
        }
        self.train.validate()?;
        Ok(())
    }
}

/// A certified quadratic candidate: `V(xi) = xi'Q xi` decreasing with margin
/// `gamma` up to the noise bound `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCertificate {
    pub q: QuadraticForm,
    pub gamma: f64,
    pub epsilon: f64,
    /// Mlp mode only: worst entrywise deviation of the per-sample `Q(xi_k)`
    /// from the extracted mean candidate.
    pub non_constancy: Option<f64>,
}

impl QuadraticCertificate {
    /// Scalar-error coefficient view `(q_ee, q_cross, q_edot)` with
    /// `q_cross = 2 Q[0,1]`, available when `m = 1`.
    pub fn coefficients(&self) -> Option<(f64, f64, f64)> {
        if self.q.n() == 2 {
            let m = self.q.matrix();
            Some((m[(0, 0)], 2.0 * m[(0, 1)], m[(1, 1)]))
        } else {
            None
        }
    }
}

/// The pipeline's tri-state answer.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Certified(QuadraticCertificate, TrainOutcome),
    NotFound(String, TrainOutcome),
    Diverged(String, TrainOutcome),
}

impl Verdict {
    pub fn outcome(&self) -> &TrainOutcome {
        match self {
            Self::Certified(_, o) | Self::NotFound(_, o) | Self::Diverged(_, o) => o,
        }
    }

    pub fn certificate(&self) -> Option<&QuadraticCertificate> {
        match self {
            Self::Certified(c, _) => Some(c),
            _ => None,
        }
    }

    pub fn is_certified(&self) -> bool {
        matches!(self, Self::Certified(..))
    }

    /// Stable one-line summary. Certified verdicts carry epsilon and gamma;
    /// everything else carries the reason and the reminder that a failed
    /// search does not imply instability.
    pub fn reason(&self) -> String {
        match self {
            Self::Certified(c, _) => {
                let mut line = format!(
                    "certified: quadratic candidate found with epsilon = {:.4} and gamma = {:.4}",
                    c.epsilon, c.gamma
                );
                if let Some(dev) = c.non_constancy {
                    line.push_str(&format!(" (non-constancy {dev:.3e})"));
                }
                line
            }
            Self::NotFound(why, _) => format!("no certificate found: {why}"),
            Self::Diverged(why, _) => format!("diverged: {why}"),
        }
    }
}

/// One-line human-readable verdict summary.
pub fn verdict_reason(verdict: &Verdict) -> String {
    verdict.reason()
}

const NO_INSTABILITY_CAVEAT: &str = "this does not imply instability";

/// Smallest non-negative bound `epsilon` with `Vdot(xi_k) <= epsilon` over
/// all samples: `max(0, max_k Vdot_k)`.
pub fn estimate_epsilon(q: &QuadraticForm, traj: &UniformTrajectory) -> Result<f64, CertifyError> {
    if traj.is_empty() {
        return Err(CertifyError::EmptyTrajectory);
    }
    let mut max_vdot = f64::NEG_INFINITY;
    for (xi, xidot) in traj.xi().iter().zip(traj.xidot()) {
        let vdot = q.eval_vdot(xi, xidot)?;
        if vdot > max_vdot {
            max_vdot = vdot;
        }
    }
    Ok(max_vdot.max(0.0))
}

/// Extract the certificate-bearing `Q` from trained parameters.
///
/// Constant mode takes `Q(theta)` directly. Mlp mode averages `Q(xi_k)` over
/// the training samples and reports the worst entrywise deviation from that
/// mean; a deviation beyond `non_constancy_tol * |Qbar|_max` refuses
/// certification, since the candidate must be a single constant form.
fn extract_candidate(
    params: &LearnerParams,
    traj: &UniformTrajectory,
    non_constancy_tol: f64,
) -> Result<(QuadraticForm, f64), String> {
    match params {
        LearnerParams::Constant(p) => Ok((p.quadratic_form(), 0.0)),
        LearnerParams::Mlp(p) => {
            let n = p.n();
            let count = traj.len() as f64;
            let mut qs = Vec::with_capacity(traj.len());
            let mut mean = DMatrix::zeros(n, n);
            for xi in traj.xi() {
                let theta = p.forward(xi).map_err(|e| e.to_string())?;
                let c = crate::learner::CholeskyParams::new(n, theta).map_err(|e| e.to_string())?;
                let q = c.quadratic_form().matrix().clone();
                mean += &q;
                qs.push(q);
            }
            mean /= count;
            let deviation = qs.iter().map(|q| (q - &mean).amax()).fold(0.0f64, f64::max);
            let tol = non_constancy_tol * mean.amax();
            if deviation > tol {
                return Err(format!(
                    "network output is not a constant candidate: max deviation {deviation:.3e} exceeds {tol:.3e}"
                ));
            }
            let q = QuadraticForm::from_matrix(mean).map_err(|e| e.to_string())?;
            Ok((q, deviation))
        }
    }
}

/// The preprocessing front of the pipeline: resample onto the configured
/// grid, optionally smooth, and differentiate.
pub fn preprocess(
    raw: &RawTrajectory,
    config: &CertifyConfig,
) -> Result<UniformTrajectory, CertifyError> {
    config.validate()?;
    let mut resampled = timeseries::resample(raw, config.dt)?;
    if let Some(w) = config.smooth_window {
        resampled = timeseries::smooth(&resampled, w)?;
    }
    Ok(timeseries::differentiate(&resampled, config.dt)?)
}

/// Run the full pipeline: resample, optionally smooth, differentiate, train,
/// and on convergence estimate the noise bound and emit the verdict.
pub fn certify(raw: &RawTrajectory, config: &CertifyConfig) -> Result<Verdict, CertifyError> {
    let uniform = preprocess(raw, config)?;
    let train_traj = match config.holdout {
        Some(f) => {
            let keep =
                (((uniform.len() as f64) * (1.0 - f)).ceil() as usize).clamp(1, uniform.len());
            uniform.head(keep)?
        }
        None => uniform.clone(),
    };
    let outcome = learner::train(&train_traj, &config.train)?;
    let verdict = match outcome.termination {
        Termination::Diverged => Verdict::Diverged(
            format!(
                "parameter max-norm reached {:.3e} after {} epochs; {NO_INSTABILITY_CAVEAT}",
                outcome.final_param_norm(),
                outcome.epochs_run(),
            ),
            outcome,
        ),
        Termination::EpochLimit => Verdict::NotFound(
            format!(
                "training stopped at loss {:.6e} after {} epochs without reaching tolerance {:.1e}; {NO_INSTABILITY_CAVEAT}",
                outcome.final_loss(),
                outcome.epochs_run(),
                config.train.tol_loss,
            ),
            outcome,
        ),
        Termination::Converged => {
            match extract_candidate(&outcome.final_params, &train_traj, config.non_constancy_tol)
            {
                Err(why) => {
                    Verdict::NotFound(format!("{why}; {NO_INSTABILITY_CAVEAT}"), outcome)
                }
                Ok((q, deviation)) => {
                    // The bound is estimated over every sample, including any
                    // held-out tail the learner never saw.
                    let epsilon = estimate_epsilon(&q, &uniform)?;
                    match config.eps_max {
                        Some(cap) if epsilon > cap => Verdict::NotFound(
                            format!(
                                "noise bound epsilon = {epsilon:.4} exceeds eps_max = {cap:.4}; {NO_INSTABILITY_CAVEAT}"
                            ),
                            outcome,
                        ),
                        _ => Verdict::Certified(
                            QuadraticCertificate {
                                q,
                                gamma: config.train.gamma,
                                epsilon,
                                non_constancy: (config.train.mode == Mode::Mlp)
                                    .then_some(deviation),
                            },
                            outcome,
                        ),
                    }
                }
            }
        }
    };
    Ok(verdict)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Certified,
    NotFound,
    Diverged,
}

/// Serialized form of trained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FinalParamsDoc {
    Constant { n: usize, theta: Vec<f64> },
    Mlp { sizes: Vec<usize>, flat: Vec<f64> },
}

/// The stable verdict/certificate document.
///
/// The leading field names (`mode`, `m`, `dt`, `gamma`, `Q`, `epsilon`,
/// `termination`, `loss_final`, `seed`, `config`) are a cross-version
/// contract; `Q` holds the row-major candidate matrix and is null unless
/// certified. The remaining fields make the verdict fully reconstructible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictDocument {
    pub mode: Mode,
    pub m: usize,
    pub dt: f64,
    pub gamma: f64,
    #[serde(rename = "Q")]
    pub q: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub termination: Termination,
    pub loss_final: f64,
    pub seed: u64,
    pub config: CertifyConfig,
    pub verdict: VerdictKind,
    pub reason: Option<String>,
    pub non_constancy: Option<f64>,
    pub loss_history: Vec<f64>,
    pub param_norm_history: Vec<f64>,
    pub final_params: FinalParamsDoc,
}

impl VerdictDocument {
    pub fn new(verdict: &Verdict, config: &CertifyConfig, m: usize) -> Self {
        let outcome = verdict.outcome();
        let final_params = match &outcome.final_params {
            LearnerParams::Constant(p) => FinalParamsDoc::Constant {
                n: p.n(),
                theta: p.theta().iter().copied().collect(),
            },
            LearnerParams::Mlp(p) => FinalParamsDoc::Mlp {
                sizes: p.sizes().to_vec(),
                flat: outcome.final_params.flat().iter().copied().collect(),
            },
        };
        let (kind, reason, q, epsilon, non_constancy) = match verdict {
            Verdict::Certified(c, _) => (
                VerdictKind::Certified,
                None,
                Some(c.q.row_major()),
                Some(c.epsilon),
                c.non_constancy,
            ),
            Verdict::NotFound(why, _) => {
                (VerdictKind::NotFound, Some(why.clone()), None, None, None)
            }
            Verdict::Diverged(why, _) => {
                (VerdictKind::Diverged, Some(why.clone()), None, None, None)
            }
        };
        Self {
            mode: config.train.mode,
            m,
            dt: config.dt,
            gamma: config.train.gamma,
            q,
            epsilon,
            termination: outcome.termination,
            loss_final: outcome.final_loss(),
            seed: config.train.seed,
            config: config.clone(),
            verdict: kind,
            reason,
            non_constancy,
            loss_history: outcome.loss_history.clone(),
            param_norm_history: outcome.param_norm_history.clone(),
            final_params,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("document serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CertifyError> {
        serde_json::from_str(text).map_err(|e| CertifyError::BadDocument(e.to_string()))
    }

    /// Rebuild the in-memory verdict.
    pub fn to_verdict(&self) -> Result<Verdict, CertifyError> {
        let final_params = match &self.final_params {
            FinalParamsDoc::Constant { n, theta } => LearnerParams::Constant(
                crate::learner::CholeskyParams::new(*n, nalgebra::DVector::from_row_slice(theta))
                    .map_err(|e| CertifyError::BadDocument(e.to_string()))?,
            ),
            FinalParamsDoc::Mlp { sizes, flat } => {
                let template =
                    LearnerParams::init(Mode::Mlp, sizes[0], &sizes[1..sizes.len() - 1], 0)
                        .map_err(|e| CertifyError::BadDocument(e.to_string()))?;
                template
                    .with_flat(&nalgebra::DVector::from_row_slice(flat))
                    .map_err(|e| CertifyError::BadDocument(e.to_string()))?
            }
        };
        let outcome = TrainOutcome {
            loss_history: self.loss_history.clone(),
            param_norm_history: self.param_norm_history.clone(),
            termination: self.termination,
            final_params,
        };
        match self.verdict {
            VerdictKind::Certified => {
                let flat = self
                    .q
                    .as_ref()
                    .ok_or_else(|| CertifyError::BadDocument("certified without Q".into()))?;
                let n = 2 * self.m;
                let q = QuadraticForm::from_row_major(n, flat)?;
                let epsilon = self
                    .epsilon
                    .ok_or_else(|| CertifyError::BadDocument("certified without epsilon".into()))?;
                Ok(Verdict::Certified(
                    QuadraticCertificate {
                        q,
                        gamma: self.gamma,
                        epsilon,
                        non_constancy: self.non_constancy,
                    },
                    outcome,
                ))
            }
            VerdictKind::NotFound => Ok(Verdict::NotFound(
                self.reason.clone().unwrap_or_default(),
                outcome,
            )),
            VerdictKind::Diverged => Ok(Verdict::Diverged(
                self.reason.clone().unwrap_or_default(),
                outcome,
            )),
        }
    }
}

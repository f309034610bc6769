//! Learn quadratic stability certificates from sampled trajectory data.
//!
//! The pipeline ingests time-stamped reference/state trajectories, resamples
//! them onto a uniform grid, recovers the tracking-error state by central
//! differences, fits a positive-definite quadratic candidate `V(xi) = xi'Qxi`
//! by hinge-loss gradient descent on the decrease condition, estimates the
//! smallest noise bound `epsilon` with `Vdot <= epsilon` over all samples,
//! and renders the result as a self-contained HTML report.
//!
//! Modules follow the pipeline stages:
//!
//! - [`timeseries`]: ingestion, resampling, numerical differentiation
//! - [`lyapunov`]: the quadratic candidate and its evaluation
//! - [`learner`]: Cholesky parameterization, hinge loss, gradient descent
//! - [`certifier`]: pipeline orchestration, noise-bound estimation, verdicts
//! - [`synth`]: synthetic LTI trajectory generation and test oracles
//! - [`report`]: self-contained HTML/SVG report rendering

pub mod certifier;
pub mod learner;
pub mod lyapunov;
pub mod report;
pub mod synth;
pub mod timeseries;

pub use certifier::{
    certify, estimate_epsilon, preprocess, verdict_reason, CertifyConfig, CertifyError,
    QuadraticCertificate, Verdict, VerdictDocument,
};
pub use learner::{
    batch_grad, batch_loss, hinge_loss, softplus, train, CholeskyParams, LearnerParams, MlpParams,
    Mode, Termination, TrainConfig, TrainOutcome,
};
pub use lyapunov::{LowerTriangularFactor, QuadraticForm};
pub use report::{
    format_candidate, render_report, render_to_string, surface_grid, Provenance, ReportBundle,
    SurfaceSpec, TraceData,
};
pub use synth::{add_noise, simulate, solve_lyapunov_2x2, LtiSystem, NoiseSpec, StabilityLabel};
pub use timeseries::{
    differentiate, resample, smooth, tracking_error, RawSample, RawTrajectory, UniformTrajectory,
};

pub use nalgebra;

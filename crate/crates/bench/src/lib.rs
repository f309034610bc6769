//! Shared fixtures for the pipeline benchmarks.

use lyacert_core::nalgebra::DVector;
use lyacert_core::{synth, timeseries, LtiSystem, NoiseSpec, RawTrajectory, UniformTrajectory};

/// A damped-oscillator trajectory matching the pipeline's usual test shape.
pub fn oscillator_raw(sigma: f64) -> RawTrajectory {
    let sys = LtiSystem::damped_oscillator(1.0, 0.05).expect("hurwitz");
    let raw = synth::simulate(&sys, &DVector::from_row_slice(&[1.0, 0.0]), 30.0, 0.01)
        .expect("simulation");
    synth::add_noise(&raw, &NoiseSpec { sigma, seed: 7 }).expect("noise")
}

/// The same trajectory resampled and differentiated, ready for training.
pub fn oscillator_training_data(sigma: f64) -> UniformTrajectory {
    let raw = oscillator_raw(sigma);
    let resampled = timeseries::resample(&raw, 0.1).expect("resample");
    timeseries::differentiate(&resampled, 0.1).expect("differentiate")
}

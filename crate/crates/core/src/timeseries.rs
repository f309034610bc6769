//! Trajectory ingestion, resampling, and numerical differentiation.
//!
//! Raw trajectories are time-stamped pairs of reference and observed state.
//! The pipeline resamples them onto a uniform grid (linear interpolation),
//! forms the tracking error `e = r - x`, and recovers `edot` and `eddot` by
//! second-order central differences. The first and last grid samples are
//! dropped so every retained derivative uses the full interior stencil.

use nalgebra::DVector;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Relative tolerance on grid spacing when checking uniformity.
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TimeseriesError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("trajectory needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample times must be strictly increasing (violated at sample {index})")]
    NonIncreasingTime { index: usize },
    #[error("non-finite value in sample {index}")]
    NonFiniteValue { index: usize },
    #[error("step must be positive and finite, got {dt}")]
    InvalidStep { dt: f64 },
    #[error("step {dt} exceeds trajectory span {span}")]
    StepExceedsSpan { dt: f64, span: f64 },
    #[error("grid is not uniform with spacing {dt} at sample {index}")]
    NonUniformGrid { dt: f64, index: usize },
    #[error("smoothing window must be odd, got {window}")]
    InvalidWindow { window: usize },
    #[error("xidot must share its leading block with xi (violated at sample {index})")]
    SharedDerivativeMismatch { index: usize },
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One time-stamped sample: reference `r` and observed state `x`, both of
/// dimension `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub t: f64,
    pub r: DVector<f64>,
    pub x: DVector<f64>,
}

/// A validated raw trajectory: strictly increasing times, at least 3 samples,
/// finite entries, and a single shared dimension `m >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrajectory {
    samples: Vec<RawSample>,
}

impl RawTrajectory {
    pub fn new(samples: Vec<RawSample>) -> Result<Self, TimeseriesError> {
        if samples.len() < 3 {
            return Err(TimeseriesError::TooFewSamples {
                needed: 3,
                got: samples.len(),
            });
        }
        let m = samples[0].r.len();
        if m == 0 {
            return Err(TimeseriesError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        for (i, s) in samples.iter().enumerate() {
            if s.r.len() != m {
                return Err(TimeseriesError::DimensionMismatch {
                    expected: m,
                    got: s.r.len(),
                });
            }
            if s.x.len() != m {
                return Err(TimeseriesError::DimensionMismatch {
                    expected: m,
                    got: s.x.len(),
                });
            }
            let finite = s.t.is_finite()
                && s.r.iter().all(|v| v.is_finite())
                && s.x.iter().all(|v| v.is_finite());
            if !finite {
                return Err(TimeseriesError::NonFiniteValue { index: i });
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(TimeseriesError::NonIncreasingTime { index: i });
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[RawSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // at least 3 samples by construction
    }

    /// State dimension `m`.
    pub fn dim(&self) -> usize {
        self.samples[0].r.len()
    }

    pub fn t_first(&self) -> f64 {
        self.samples[0].t
    }

    pub fn t_last(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    pub fn span(&self) -> f64 {
        self.t_last() - self.t_first()
    }

    /// Parse the CSV trajectory format.
    ///
    /// Header `t,r_0,...,r_{m-1},x_0,...,x_{m-1}` (scalar shorthand `t,r,x`
    /// accepted), one sample per row in increasing `t`. Blank lines and lines
    /// starting with `#` are ignored. Errors carry 1-based line numbers.
    pub fn from_csv_str(text: &str) -> Result<Self, TimeseriesError> {
        let mut rows = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (header_line, header) = rows.next().ok_or(TimeseriesError::Csv {
            line: 1,
            message: "missing header row".into(),
        })?;
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        let m = parse_header(&columns).ok_or_else(|| TimeseriesError::Csv {
            line: header_line,
            message: format!("expected header `t,r_0,...,x_0,...` or `t,r,x`, got `{header}`"),
        })?;

        let mut samples = Vec::new();
        let mut last_t = f64::NEG_INFINITY;
        for (line, row) in rows {
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if fields.len() != 1 + 2 * m {
                return Err(TimeseriesError::Csv {
                    line,
                    message: format!("expected {} fields, got {}", 1 + 2 * m, fields.len()),
                });
            }
            let mut values = Vec::with_capacity(fields.len());
            for field in &fields {
                let v: f64 = field.parse().map_err(|_| TimeseriesError::Csv {
                    line,
                    message: format!("invalid number `{field}`"),
                })?;
                if !v.is_finite() {
                    return Err(TimeseriesError::Csv {
                        line,
                        message: format!("non-finite value `{field}`"),
                    });
                }
                values.push(v);
            }
            let t = values[0];
            if t <= last_t {
                return Err(TimeseriesError::Csv {
                    line,
                    message: format!("time {t} does not increase past {last_t}"),
                });
            }
            last_t = t;
            samples.push(RawSample {
                t,
                r: DVector::from_row_slice(&values[1..1 + m]),
                x: DVector::from_row_slice(&values[1 + m..]),
            });
        }
        if samples.len() < 3 {
            return Err(TimeseriesError::Csv {
                line: header_line,
                message: format!("need at least 3 data rows, got {}", samples.len()),
            });
        }
        Self::new(samples)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, TimeseriesError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }

    /// Serialize in the CSV trajectory format. Floats use the shortest
    /// round-trip representation so write/read is lossless.
    pub fn to_csv_string(&self) -> String {
        let m = self.dim();
        let mut out = String::new();
        out.push('t');
        for i in 0..m {
            let _ = write!(out, ",r_{i}");
        }
        for i in 0..m {
            let _ = write!(out, ",x_{i}");
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{}", s.t);
            for v in s.r.iter() {
                let _ = write!(out, ",{v}");
            }
            for v in s.x.iter() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TimeseriesError> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

fn parse_header(columns: &[&str]) -> Option<usize> {
    if columns == ["t", "r", "x"] {
        return Some(1);
    }
    if columns.len() < 3 || columns[0] != "t" || columns.len().is_multiple_of(2) {
        return None;
    }
    let m = (columns.len() - 1) / 2;
    for i in 0..m {
        if columns[1 + i] != format!("r_{i}") || columns[1 + m + i] != format!("x_{i}") {
            return None;
        }
    }
    Some(m)
}

/// A uniform-grid trajectory carrying the error state and its derivative.
///
/// `e` covers the full grid; `xi_k = [e; edot]` and `xidot_k = [edot; eddot]`
/// cover the interior (the two boundary samples are dropped by
/// [`differentiate`]). The `edot` block is shared: the first `m` components
/// of `xidot_k` equal the last `m` components of `xi_k` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformTrajectory {
    dt: f64,
    m: usize,
    t0: f64,
    e: Vec<DVector<f64>>,
    xi: Vec<DVector<f64>>,
    xidot: Vec<DVector<f64>>,
}

impl UniformTrajectory {
    /// Assemble from parts, validating the structural invariants.
    pub fn from_parts(
        dt: f64,
        m: usize,
        t0: f64,
        e: Vec<DVector<f64>>,
        xi: Vec<DVector<f64>>,
        xidot: Vec<DVector<f64>>,
    ) -> Result<Self, TimeseriesError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(TimeseriesError::InvalidStep { dt });
        }
        if m == 0 {
            return Err(TimeseriesError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if xi.is_empty() || xi.len() != xidot.len() || e.len() != xi.len() + 2 {
            return Err(TimeseriesError::TooFewSamples {
                needed: xi.len().max(1) + 2,
                got: e.len(),
            });
        }
        for v in &e {
            if v.len() != m {
                return Err(TimeseriesError::DimensionMismatch {
                    expected: m,
                    got: v.len(),
                });
            }
        }
        for (k, (a, b)) in xi.iter().zip(&xidot).enumerate() {
            if a.len() != 2 * m || b.len() != 2 * m {
                return Err(TimeseriesError::DimensionMismatch {
                    expected: 2 * m,
                    got: a.len().min(b.len()),
                });
            }
            // edot is shared between xi and xidot, bit for bit.
            for i in 0..m {
                if a[m + i] != b[i] {
                    return Err(TimeseriesError::SharedDerivativeMismatch { index: k });
                }
            }
        }
        Ok(Self {
            dt,
            m,
            t0,
            e,
            xi,
            xidot,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// State dimension `m`.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Error-state dimension `2m`.
    pub fn n(&self) -> usize {
        2 * self.m
    }

    /// Number of retained interior samples.
    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Time of `e[0]` (one grid step before the first retained `xi`).
    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Time of the k-th retained sample.
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + (k + 1) as f64 * self.dt
    }

    pub fn e(&self) -> &[DVector<f64>] {
        &self.e
    }

    pub fn xi(&self) -> &[DVector<f64>] {
        &self.xi
    }

    pub fn xidot(&self) -> &[DVector<f64>] {
        &self.xidot
    }

    /// The leading `len` samples as a trajectory of their own (used for
    /// held-out noise-bound estimation).
    pub fn head(&self, len: usize) -> Result<Self, TimeseriesError> {
        Self::from_parts(
            self.dt,
            self.m,
            self.t0,
            self.e[..(len + 2).min(self.e.len())].to_vec(),
            self.xi[..len.min(self.xi.len())].to_vec(),
            self.xidot[..len.min(self.xidot.len())].to_vec(),
        )
    }
}

/// Tracking error `e = r - x`, componentwise.
pub fn tracking_error(r: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>, TimeseriesError> {
    if r.len() != x.len() {
        return Err(TimeseriesError::DimensionMismatch {
            expected: r.len(),
            got: x.len(),
        });
    }
    Ok(r - x)
}

/// Resample onto the uniform grid `t_first, t_first + dt, ...` up to the
/// largest grid point not past `t_last`, by linear interpolation between
/// bracketing raw samples.
pub fn resample(raw: &RawTrajectory, dt: f64) -> Result<RawTrajectory, TimeseriesError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(TimeseriesError::InvalidStep { dt });
    }
    let span = raw.span();
    if dt > span * (1.0 + GRID_TOL) {
        return Err(TimeseriesError::StepExceedsSpan { dt, span });
    }
    let t0 = raw.t_first();
    // Grid points are t0 + k*dt, never accumulated sums.
    let count = ((span / dt) + GRID_TOL).floor() as usize + 1;
    let samples = raw.samples();
    let mut seg = 0usize;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let tau = t0 + k as f64 * dt;
        while seg + 2 < samples.len() && samples[seg + 1].t < tau {
            seg += 1;
        }
        let (lo, hi) = (&samples[seg], &samples[seg + 1]);
        let lambda = ((tau - lo.t) / (hi.t - lo.t)).clamp(0.0, 1.0);
        let (r, x) = if lambda == 0.0 {
            (lo.r.clone(), lo.x.clone())
        } else if lambda == 1.0 {
            (hi.r.clone(), hi.x.clone())
        } else {
            (
                &lo.r * (1.0 - lambda) + &hi.r * lambda,
                &lo.x * (1.0 - lambda) + &hi.x * lambda,
            )
        };
        out.push(RawSample { t: tau, r, x });
    }
    RawTrajectory::new(out)
}

/// Centered moving average of width `window` (odd) over `r` and `x`.
///
/// Only positions where the full window fits are kept, so `(window-1)/2`
/// samples are trimmed from each end. This is opt-in: noisy second
/// differences amplify measurement noise by `1/dt^2`, and smoothing trades
/// that against signal distortion.
pub fn smooth(raw: &RawTrajectory, window: usize) -> Result<RawTrajectory, TimeseriesError> {
    if window.is_multiple_of(2) || window == 0 {
        return Err(TimeseriesError::InvalidWindow { window });
    }
    if window == 1 {
        return Ok(raw.clone());
    }
    let h = (window - 1) / 2;
    let samples = raw.samples();
    if samples.len() < window + 2 {
        return Err(TimeseriesError::TooFewSamples {
            needed: window + 2,
            got: samples.len(),
        });
    }
    let scale = 1.0 / window as f64;
    let mut out = Vec::with_capacity(samples.len() - 2 * h);
    for k in h..samples.len() - h {
        let mut r = DVector::zeros(raw.dim());
        let mut x = DVector::zeros(raw.dim());
        for s in &samples[k - h..=k + h] {
            r += &s.r;
            x += &s.x;
        }
        out.push(RawSample {
            t: samples[k].t,
            r: r * scale,
            x: x * scale,
        });
    }
    RawTrajectory::new(out)
}

/// Differentiate a uniform-grid trajectory into the error state `xi = [e; edot]`
/// and its derivative `xidot = [edot; eddot]`.
///
/// Interior stencils: `edot_k = (e_{k+1} - e_{k-1}) / 2dt` and
/// `eddot_k = (e_{k+1} - 2 e_k + e_{k-1}) / dt^2`, both second-order accurate.
/// The boundary samples are dropped rather than approximated one-sided.
pub fn differentiate(raw: &RawTrajectory, dt: f64) -> Result<UniformTrajectory, TimeseriesError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(TimeseriesError::InvalidStep { dt });
    }
    let samples = raw.samples();
    if samples.len() < 3 {
        return Err(TimeseriesError::TooFewSamples {
            needed: 3,
            got: samples.len(),
        });
    }
    for k in 0..samples.len() - 1 {
        if ((samples[k + 1].t - samples[k].t) - dt).abs() > GRID_TOL * dt {
            return Err(TimeseriesError::NonUniformGrid { dt, index: k + 1 });
        }
    }
    let m = raw.dim();
    let e: Vec<DVector<f64>> = samples
        .iter()
        .map(|s| tracking_error(&s.r, &s.x))
        .collect::<Result<_, _>>()?;

    let mut xi = Vec::with_capacity(e.len() - 2);
    let mut xidot = Vec::with_capacity(e.len() - 2);
    let inv_2dt = 1.0 / (2.0 * dt);
    let inv_dt2 = 1.0 / (dt * dt);
    for k in 1..e.len() - 1 {
        let edot = (&e[k + 1] - &e[k - 1]) * inv_2dt;
        let eddot = (&e[k + 1] - &e[k] * 2.0 + &e[k - 1]) * inv_dt2;
        let mut xi_k = DVector::zeros(2 * m);
        let mut xidot_k = DVector::zeros(2 * m);
        xi_k.rows_mut(0, m).copy_from(&e[k]);
        xi_k.rows_mut(m, m).copy_from(&edot);
        xidot_k.rows_mut(0, m).copy_from(&edot);
        xidot_k.rows_mut(m, m).copy_from(&eddot);
        xi.push(xi_k);
        xidot.push(xidot_k);
    }
    UniformTrajectory::from_parts(dt, m, samples[0].t, e, xi, xidot)
}

//! Self-contained stability report: verdict banner, candidate formula,
//! Lyapunov surface, tracking-error traces, loss history, and provenance in
//! one HTML file with embedded SVG. No scripts, no external resources.
//!
//! Rendering is a pure function of the [`ReportBundle`]: timestamps, hashes,
//! and versions all come from the bundle, never from the clock or the
//! filesystem, so fixed bundles render byte-identically.

mod svg;

use crate::certifier::{CertifyConfig, QuadraticCertificate, Verdict, VerdictDocument};
use crate::timeseries::UniformTrajectory;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("surface rendering needs a scalar error (candidate dimension 2), got {n}")]
    SurfaceDimension { n: usize },
    #[error("invalid surface range [{lo}, {hi}]")]
    BadRange { lo: f64, hi: f64 },
    #[error("surface resolution must be at least 2, got {res}")]
    BadResolution { res: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Time series extracted from the trajectory for plotting: one row per error
/// component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceData {
    pub m: usize,
    pub dt: f64,
    pub sample_count: usize,
    pub t: Vec<f64>,
    pub e: Vec<Vec<f64>>,
    pub edot: Vec<Vec<f64>>,
}

impl TraceData {
    pub fn from_trajectory(traj: &UniformTrajectory) -> Self {
        let m = traj.m();
        let t: Vec<f64> = (0..traj.len()).map(|k| traj.time(k)).collect();
        let e = (0..m)
            .map(|c| traj.xi().iter().map(|xi| xi[c]).collect())
            .collect();
        let edot = (0..m)
            .map(|c| traj.xi().iter().map(|xi| xi[m + c]).collect())
            .collect();
        Self {
            m,
            dt: traj.dt(),
            sample_count: traj.len(),
            t,
            e,
            edot,
        }
    }
}

/// Evaluation window and resolution of the candidate surface plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub e_range: (f64, f64),
    pub edot_range: (f64, f64),
    pub resolution: usize,
}

impl SurfaceSpec {
    /// Symmetric window covering the observed error range with 20% headroom.
    pub fn covering(trace: &TraceData) -> Self {
        let half = |rows: &[Vec<f64>]| {
            let peak = rows
                .iter()
                .flat_map(|r| r.iter().map(|v| v.abs()))
                .fold(0.0f64, f64::max);
            if peak > 0.0 {
                1.2 * peak
            } else {
                1.0
            }
        };
        let he = half(&trace.e);
        let hd = half(&trace.edot);
        Self {
            e_range: (-he, he),
            edot_range: (-hd, hd),
            resolution: 25,
        }
    }
}

/// Everything needed to render a report, including provenance so any result
/// can be reproduced from the report alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub input: String,
    pub input_sha256: String,
    pub seed: u64,
    pub tool_version: String,
    pub config: CertifyConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub verdict: Verdict,
    pub trace: TraceData,
    pub surface: SurfaceSpec,
    pub provenance: Provenance,
}

impl ReportBundle {
    pub fn new(verdict: Verdict, traj: &UniformTrajectory, provenance: Provenance) -> Self {
        let trace = TraceData::from_trajectory(traj);
        let surface = SurfaceSpec::covering(&trace);
        Self {
            verdict,
            trace,
            surface,
            provenance,
        }
    }

    pub fn to_document(&self) -> BundleDocument {
        BundleDocument {
            verdict: VerdictDocument::new(&self.verdict, &self.provenance.config, self.trace.m),
            trace: self.trace.clone(),
            surface: self.surface.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Serialized bundle; the `verdict` field is the certificate document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleDocument {
    pub verdict: VerdictDocument,
    pub trace: TraceData,
    pub surface: SurfaceSpec,
    pub provenance: Provenance,
}

impl BundleDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
        s.push('\n');
        s
    }
}

/// Scalar-error candidate as a polynomial string, coefficients to 4 decimal
/// places; higher-dimensional candidates fall back to a matrix table.
pub fn format_candidate(cert: &QuadraticCertificate) -> String {
    match cert.coefficients() {
        Some((a, cross, c)) => {
            let sign = if cross < 0.0 { "\u{2212}" } else { "+" };
            format!(
                "V = {a:.4}\u{00b7}e^2 {sign} {b:.4}\u{00b7}e\u{00b7}e_dot + {c:.4}\u{00b7}e_dot^2",
                b = cross.abs()
            )
        }
        None => {
            let q = cert.q.matrix();
            let mut out = String::from("V = xi'Qxi with Q =\n");
            for i in 0..q.nrows() {
                out.push_str(if i == 0 { "[ " } else { "  " });
                for j in 0..q.ncols() {
                    let _ = write!(out, "{:>10.4}", q[(i, j)]);
                }
                out.push_str(if i + 1 == q.nrows() { " ]" } else { "\n" });
            }
            out
        }
    }
}

/// The candidate evaluated on a Cartesian grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub e: Vec<f64>,
    pub edot: Vec<f64>,
    /// `v[i][j] = V([e[i], edot[j]])`.
    pub v: Vec<Vec<f64>>,
}

pub fn surface_grid(
    cert: &QuadraticCertificate,
    e_range: (f64, f64),
    edot_range: (f64, f64),
    resolution: usize,
) -> Result<SurfaceGrid, ReportError> {
    if cert.q.n() != 2 {
        return Err(ReportError::SurfaceDimension { n: cert.q.n() });
    }
    if resolution < 2 {
        return Err(ReportError::BadResolution { res: resolution });
    }
    for (lo, hi) in [e_range, edot_range] {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ReportError::BadRange { lo, hi });
        }
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        (0..resolution)
            .map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64)
            .collect()
    };
    let e = axis(e_range);
    let edot = axis(edot_range);
    let q = cert.q.matrix();
    let v = e
        .iter()
        .map(|&ei| {
            edot.iter()
                .map(|&dj| q[(0, 0)] * ei * ei + 2.0 * q[(0, 1)] * ei * dj + q[(1, 1)] * dj * dj)
                .collect()
        })
        .collect();
    Ok(SurfaceGrid { e, edot, v })
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const CAVEAT: &str =
    "Failing to identify a Lyapunov candidate does not, in itself, imply that the system is unstable.";

const STYLE: &str = r#"
body { font-family: -apple-system, 'Segoe UI', Helvetica, Arial, sans-serif; margin: 0; background: #f4f5f7; color: #1c2733; }
main { max-width: 920px; margin: 0 auto; padding: 18px 24px 48px; }
.banner { padding: 14px 18px; border-radius: 6px; font-size: 1.05rem; font-weight: 600; margin: 14px 0; }
.banner.certified { background: #e2f3e5; border: 1px solid #3f9142; }
.banner.not_found { background: #fdf3dc; border: 1px solid #c9942a; }
.banner.diverged { background: #fbe4e4; border: 1px solid #c0392b; }
section { background: #ffffff; border: 1px solid #d9dee4; border-radius: 6px; padding: 14px 18px; margin: 14px 0; }
h1 { font-size: 1.35rem; margin: 18px 0 4px; }
h2 { font-size: 1.02rem; margin: 0 0 10px; color: #32414f; }
.formula { font-family: 'SFMono-Regular', Consolas, monospace; font-size: 1.04rem; white-space: pre; padding: 8px 10px; background: #f0f3f6; border-radius: 4px; display: inline-block; }
table.kv { border-collapse: collapse; }
table.kv th { text-align: left; padding: 2px 14px 2px 0; font-weight: 600; color: #44535f; }
table.kv td { font-family: 'SFMono-Regular', Consolas, monospace; padding: 2px 0; }
.caveat { border-left: 4px solid #c9942a; }
pre.config { background: #f0f3f6; padding: 10px; border-radius: 4px; overflow-x: auto; font-size: 0.8rem; }
svg { max-width: 100%; height: auto; }
svg .chart-title { font-size: 13px; font-weight: 600; fill: #1c2733; }
svg .tick { font-size: 10px; fill: #44535f; }
svg .axis { font-size: 11px; fill: #32414f; }
@media print { body { background: #ffffff; } section { border: none; padding: 6px 0; } }
"#;

/// Render the report to a single self-contained HTML string.
pub fn render_to_string(bundle: &ReportBundle) -> Result<String, ReportError> {
    let verdict = &bundle.verdict;
    let trace = &bundle.trace;
    let (banner_class, banner_label) = match verdict {
        Verdict::Certified(..) => ("certified", "CERTIFIED"),
        Verdict::NotFound(..) => ("not_found", "NO CERTIFICATE FOUND"),
        Verdict::Diverged(..) => ("diverged", "TRAINING DIVERGED"),
    };

    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    html.push_str("<title>Stability analysis report</title>\n<style>");
    html.push_str(STYLE);
    html.push_str("</style>\n</head>\n<body>\n<main>\n");
    let _ = writeln!(html, "<h1>Stability analysis report</h1>");
    let _ = writeln!(
        html,
        "<div class=\"banner {banner_class}\">{banner_label} &mdash; {}</div>",
        escape_html(&verdict.reason())
    );

    // Candidate and constants.
    html.push_str("<section>\n<h2>Lyapunov candidate</h2>\n");
    match verdict.certificate() {
        Some(cert) => {
            let _ = writeln!(
                html,
                "<p class=\"formula\">{}</p>",
                escape_html(&format_candidate(cert))
            );
            let _ = write!(
                html,
                "<table class=\"kv\">\n<tr><th>noise bound epsilon</th><td>{:.4}</td></tr>\n<tr><th>decrease margin gamma</th><td>{:.4}</td></tr>\n<tr><th>condition</th><td>Vdot(xi) &le; epsilon over all samples</td></tr>\n",
                cert.epsilon, cert.gamma
            );
            if let Some(dev) = cert.non_constancy {
                let _ = writeln!(
                    html,
                    "<tr><th>non-constancy</th><td>{}</td></tr>",
                    svg::fmt_num(dev)
                );
            }
            html.push_str("</table>\n");
        }
        None => {
            html.push_str("<p>No candidate was certified for this window.</p>\n");
        }
    }
    html.push_str("</section>\n");

    // Surface plot for scalar errors.
    if let Some(cert) = verdict.certificate() {
        if trace.m == 1 {
            let grid = surface_grid(
                cert,
                bundle.surface.e_range,
                bundle.surface.edot_range,
                bundle.surface.resolution,
            )?;
            html.push_str("<section>\n<h2>Lyapunov candidate surface</h2>\n");
            html.push_str(&svg::surface_isometric(
                "V over the error state",
                &grid,
                640.0,
                430.0,
            ));
            html.push_str("\n</section>\n");
        }
    }

    // Input traces.
    html.push_str("<section>\n<h2>Tracking error input</h2>\n");
    let colors = ["#315496", "#c0392b", "#3f9142", "#8e44ad"];
    let mut e_series = Vec::new();
    let mut labels = Vec::new();
    for c in 0..trace.m {
        labels.push(if trace.m == 1 {
            ("e".to_string(), "e_dot".to_string())
        } else {
            (format!("e_{c}"), format!("e_dot_{c}"))
        });
    }
    for c in 0..trace.m {
        e_series.push(svg::Series {
            label: &labels[c].0,
            color: colors[c % colors.len()],
            points: trace
                .t
                .iter()
                .copied()
                .zip(trace.e[c].iter().copied())
                .collect(),
        });
    }
    html.push_str(&svg::line_chart(
        "Tracking error",
        "t [s]",
        "e",
        &e_series,
        false,
        640.0,
        280.0,
    ));
    let mut d_series = Vec::new();
    for c in 0..trace.m {
        d_series.push(svg::Series {
            label: &labels[c].1,
            color: colors[c % colors.len()],
            points: trace
                .t
                .iter()
                .copied()
                .zip(trace.edot[c].iter().copied())
                .collect(),
        });
    }
    html.push_str(&svg::line_chart(
        "Error derivative",
        "t [s]",
        "e_dot",
        &d_series,
        false,
        640.0,
        280.0,
    ));
    html.push_str("\n</section>\n");

    // Loss history.
    let outcome = verdict.outcome();
    html.push_str("<section>\n<h2>Training loss history</h2>\n");
    let loss_series = svg::Series {
        label: "batch loss",
        color: "#315496",
        points: outcome
            .loss_history
            .iter()
            .enumerate()
            .map(|(k, &l)| (k as f64, l))
            .collect(),
    };
    html.push_str(&svg::line_chart(
        "Hinge loss per epoch (log scale)",
        "epoch",
        "loss",
        &[loss_series],
        true,
        640.0,
        280.0,
    ));
    let _ = write!(
        html,
        "<table class=\"kv\">\n<tr><th>epochs run</th><td>{}</td></tr>\n<tr><th>final loss</th><td>{}</td></tr>\n<tr><th>termination</th><td>{:?}</td></tr>\n</table>\n",
        outcome.epochs_run(),
        svg::fmt_num(outcome.final_loss()),
        outcome.termination
    );
    html.push_str("</section>\n");

    // Caveat for anything short of certification.
    if verdict.certificate().is_none() {
        let _ = writeln!(html, "<section class=\"caveat\"><p>{CAVEAT}</p></section>");
    }

    // Provenance.
    let p = &bundle.provenance;
    html.push_str("<section>\n<h2>Provenance</h2>\n<table class=\"kv\">\n");
    let _ = write!(
        html,
        "<tr><th>input</th><td>{}</td></tr>\n<tr><th>input sha256</th><td>{}</td></tr>\n<tr><th>seed</th><td>{}</td></tr>\n<tr><th>grid step dt</th><td>{} s</td></tr>\n<tr><th>samples</th><td>{}</td></tr>\n<tr><th>error dimension m</th><td>{}</td></tr>\n<tr><th>tool version</th><td>{}</td></tr>\n</table>\n",
        escape_html(&p.input),
        escape_html(&p.input_sha256),
        p.seed,
        svg::fmt_num(trace.dt),
        trace.sample_count,
        trace.m,
        escape_html(&p.tool_version),
    );
    let config_json = serde_json::to_string_pretty(&p.config).expect("config serializes");
    let _ = writeln!(
        html,
        "<pre class=\"config\">{}</pre>",
        escape_html(&config_json)
    );
    html.push_str("</section>\n</main>\n</body>\n</html>\n");
    Ok(html)
}

/// Render and write the report file.
pub fn render_report(bundle: &ReportBundle, path: &Path) -> Result<(), ReportError> {
    let html = render_to_string(bundle)?;
    std::fs::write(path, html)?;
    Ok(())
}

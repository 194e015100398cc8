//! Emission of the run artifacts: CSV time series, JSON summaries,
//! verification reports and the human-readable identity table.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::flow::{SeriesRow, SingularityReport, Trajectory};
use crate::verify::IdentityReport;

/// Fixed CSV columns, documented in the header comment line.
pub fn series_csv(rows: &[SeriesRow]) -> String {
    let mut out = String::from("# t,vol,r,max_abs_R,min_eig_g,mean_phi\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.t, r.vol, r.avg_scalar, r.max_abs_scalar, r.min_eig, r.mean_phi
        );
    }
    out
}

#[derive(Serialize)]
pub struct RunSummary<'a> {
    pub schema_version: u32,
    pub config: &'a crate::config::RunConfig,
    pub threads: usize,
    pub steps_taken: u64,
    pub snapshots: usize,
    pub final_t: f64,
    pub singular: bool,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| crate::error::HkError::Io(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_singularity(path: &Path, report: &SingularityReport) -> Result<()> {
    write_json(path, report)
}

/// Renders the identity table printed by the verify command.
pub fn identity_table(reports: &[IdentityReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<32} {:>12} {:>8} {:>6}",
        "identity", "residual", "order", "pass"
    );
    let _ = writeln!(out, "{}", "-".repeat(62));
    for rep in reports {
        let finest = rep
            .levels
            .iter()
            .min_by(|a, b| a.dt_s.partial_cmp(&b.dt_s).unwrap())
            .map(|l| l.max_residual)
            .unwrap_or(f64::NAN);
        let order = rep
            .order
            .map(|p| format!("{p:.2}"))
            .unwrap_or_else(|| "-".to_string());
        let _ = writeln!(
            out,
            "{:<32} {:>12.3e} {:>8} {:>6}",
            rep.name,
            finest,
            order,
            if rep.pass { "pass" } else { "FAIL" }
        );
    }
    out
}

#[derive(Serialize)]
pub struct VerifyBundle<'a> {
    pub schema_version: u32,
    pub config: &'a crate::config::RunConfig,
    pub identities: &'a [IdentityReport],
    pub all_pass: bool,
}

/// Scalar series extracted from a trajectory for plotting.
pub fn plot_series(traj: &Trajectory) -> Vec<(&'static str, Vec<(f64, f64)>)> {
    let take = |f: fn(&SeriesRow) -> f64| -> Vec<(f64, f64)> {
        traj.series.iter().map(|r| (r.t, f(r))).collect()
    };
    vec![
        ("vol", take(|r| r.vol)),
        ("avg_scalar", take(|r| r.avg_scalar)),
        ("max_abs_scalar", take(|r| r.max_abs_scalar)),
        ("min_eig", take(|r| r.min_eig)),
        ("mean_phi", take(|r| r.mean_phi)),
    ]
}

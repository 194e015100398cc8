//! Command orchestration: run, verify, converge and curvature.
//!
//! One command owns one output directory, protected by a lockfile so two
//! processes never interleave writes. All artifacts are deterministic
//! functions of the configuration (no timestamps, no machine identifiers),
//! so identical configs produce bit-identical outputs.

use std::path::{Path, PathBuf};

use crate::config::{MetricSpec, RunConfig};
use crate::error::{HkError, Result};
use crate::flow::{integrate_flow, integrate_flow_resumed, FlowKind, Sample, Trajectory};
use crate::geometry::{HermitianField, MetricField};
use crate::report;
use crate::snapshot::{read_snapshot, write_snapshot, SnapshotData};
use crate::spectral::{ScalarField, C64};
use crate::verify::{run_identity_suite, SuiteOptions};

/// Removes the lockfile when the command finishes.
struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(dir: &Path) -> Result<LockGuard> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".hkflow.lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(HkError::ConfigInvalid(format!(
                    "output directory {} is locked by another run",
                    dir.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Resolves the worker-count setting (flag, then HKFLOW_THREADS, then 1).
/// Field arithmetic is sequential with a fixed reduction order either way,
/// so results do not depend on this value.
pub fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("HKFLOW_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(1)
    .max(1)
}

fn snapshot_name(step: u64) -> String {
    format!("snap_{step:010}.hkrf")
}

fn persist_trajectory(
    out: &Path,
    cfg: &RunConfig,
    traj: &Trajectory,
    threads: usize,
) -> Result<()> {
    for s in &traj.samples {
        let snap = SnapshotData {
            t: s.t,
            step: s.step,
            phi: s.phi.clone().expect("potential run"),
            psi: s.psi.clone().expect("potential run"),
        };
        write_snapshot(&out.join(snapshot_name(s.step)), &snap, cfg)?;
    }
    std::fs::write(out.join("series.csv"), report::series_csv(&traj.series))?;
    let summary = report::RunSummary {
        schema_version: crate::config::SCHEMA_VERSION,
        config: cfg,
        threads,
        steps_taken: traj.samples.last().map(|s| s.step).unwrap_or(0),
        snapshots: traj.samples.len(),
        final_t: traj.samples.last().map(|s| s.t).unwrap_or(0.0),
        singular: traj.singularity.is_some(),
    };
    report::write_json(&out.join("summary.json"), &summary)?;
    for (name, series) in report::plot_series(traj) {
        crate::plot::write_line_chart(&out.join(format!("{name}.svg")), name, &series);
    }
    Ok(())
}

/// `run`: integrate per config, persist snapshots/series/summary/plots.
/// A singularity is persisted and then reported as the corresponding error
/// so the process exits with the singular status.
pub fn cmd_run(
    config_path: &Path,
    out: &Path,
    resume: Option<&Path>,
    threads: usize,
) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let _lock = LockGuard::acquire(out)?;
    let built = cfg.build()?;
    let total_steps = (cfg.t_end / built.dt).round() as u64;

    let traj = match resume {
        None => integrate_flow(
            &built.setup,
            &built.phi0,
            &built.psi0,
            built.dt,
            cfg.t_end,
            built.snapshot_every,
        )?,
        Some(snap_path) => {
            let (snap, sidecar) = read_snapshot(snap_path)?;
            if serde_json::to_string(&sidecar.config).unwrap()
                != serde_json::to_string(&cfg).unwrap()
            {
                return Err(HkError::ConfigInvalid(
                    "snapshot was produced by a different configuration".into(),
                ));
            }
            integrate_flow_resumed(
                &built.setup,
                &snap.phi,
                &snap.psi,
                built.dt,
                snap.step,
                total_steps,
                built.snapshot_every,
            )?
        }
    };

    persist_trajectory(out, &cfg, &traj, threads)?;
    if let Some(rep) = traj.singularity {
        report::write_singularity(&out.join("singularity.json"), &rep)?;
        return Err(HkError::MetricDegenerate {
            t: rep.t_blowup,
            location: rep.location,
            min_eig: rep.min_eig,
        });
    }
    Ok(())
}

/// Rebuilds a trajectory from the snapshot files in a run directory.
pub fn load_trajectory(dir: &Path) -> Result<(RunConfig, Trajectory)> {
    let mut snaps = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path
            .file_name()
            .and_then(|s| s.to_str())
            .map(|s| s.starts_with("snap_") && s.ends_with(".hkrf"))
            .unwrap_or(false)
        {
            snaps.push(path);
        }
    }
    if snaps.is_empty() {
        return Err(HkError::ConfigInvalid(format!(
            "no snapshots found in {}",
            dir.display()
        )));
    }
    snaps.sort();
    let mut cfg: Option<RunConfig> = None;
    let mut cfg_text = String::new();
    let mut samples = Vec::new();
    let mut g0: Option<MetricField> = None;
    for path in &snaps {
        let (snap, sidecar) = read_snapshot(path)?;
        let this_text = serde_json::to_string(&sidecar.config).unwrap();
        if g0.is_none() {
            let built = sidecar.config.build()?;
            g0 = Some(built.setup.g0.clone());
            cfg = Some(sidecar.config.clone());
            cfg_text = this_text;
        } else if this_text != cfg_text {
            return Err(HkError::ConfigInvalid(format!(
                "snapshot {} belongs to a different configuration",
                path.display()
            )));
        }
        let phi = snap.phi;
        let psi = snap.psi;
        let m = MetricField::from_potential(g0.as_ref().unwrap(), &phi)?;
        let g_dot = HermitianField::potential_hessian(&psi)?;
        samples.push(Sample {
            t: snap.t,
            step: snap.step,
            phi: Some(phi),
            psi: Some(psi),
            g: m.hermitian.clone(),
            g_dot,
        });
    }
    let traj = Trajectory::from_samples(FlowKind::Potential, g0.unwrap(), samples)?;
    Ok((cfg.unwrap(), traj))
}

/// `verify`: run the identity suite over a fresh or stored trajectory.
/// Returns whether every identity passed.
pub fn cmd_verify(input: &Path, out: &Path, threads: usize) -> Result<bool> {
    let (cfg, traj) = if input.is_dir() {
        load_trajectory(input)?
    } else {
        let cfg = RunConfig::load(input)?;
        let built = cfg.build()?;
        let traj = integrate_flow(
            &built.setup,
            &built.phi0,
            &built.psi0,
            built.dt,
            cfg.t_end,
            built.snapshot_every,
        )?;
        if let Some(rep) = traj.singularity {
            return Err(HkError::MetricDegenerate {
                t: rep.t_blowup,
                location: rep.location,
                min_eig: rep.min_eig,
            });
        }
        (cfg, traj)
    };
    let _ = threads;
    let opts = SuiteOptions {
        factors: cfg.ladder.clone().unwrap_or_else(|| vec![4, 2, 1]),
        tolerances: cfg.tolerances.resolve(),
        fd_order4: cfg.fd_order4,
    };
    let reports = run_identity_suite(&traj, &opts)?;
    let all_pass = reports.iter().all(|r| r.pass);
    print!("{}", report::identity_table(&reports));
    std::fs::create_dir_all(out)?;
    let bundle = report::VerifyBundle {
        schema_version: crate::config::SCHEMA_VERSION,
        config: &cfg,
        identities: &reports,
        all_pass,
    };
    report::write_json(&out.join("verify.json"), &bundle)?;
    Ok(all_pass)
}

#[derive(serde::Serialize)]
struct ConvergeLevel {
    dt: f64,
    error: f64,
}

#[derive(serde::Serialize)]
struct ResolutionLevel {
    points_per_axis: usize,
    error: f64,
}

#[derive(serde::Serialize)]
struct ConvergeOutput {
    dt_levels: Vec<ConvergeLevel>,
    temporal_slope: Option<f64>,
    resolution_levels: Vec<ResolutionLevel>,
    /// Log-log slope of the resolution errors; strongly negative or
    /// meaningless once the levels sit on the spectral floor.
    resolution_slope: Option<f64>,
}

fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.0 > 0.0 && p.1 > 0.0)
        .map(|p| (p.0.ln(), p.1.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let nx = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nx;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nx;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(num / den)
}

/// `converge`: self-convergence in the time step against a finer reference
/// run, plus (for conformal backgrounds) a spatial-resolution ladder
/// against the closed-form curvature.
pub fn cmd_converge(config_path: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let _lock = LockGuard::acquire(out)?;
    let ladder = cfg.dt_ladder.clone().ok_or_else(|| {
        HkError::ConfigInvalid("converge requires dt_ladder in the config".into())
    })?;
    if ladder.len() < 3 {
        return Err(HkError::ConfigInvalid(
            "dt_ladder needs at least three levels".into(),
        ));
    }

    let final_phi = |dt: f64| -> Result<ScalarField> {
        let mut c = cfg.clone();
        c.dt = Some(dt);
        c.snapshot_dt = cfg.t_end;
        let built = c.build()?;
        let traj = integrate_flow(
            &built.setup,
            &built.phi0,
            &built.psi0,
            built.dt,
            c.t_end,
            built.snapshot_every,
        )?;
        if traj.singularity.is_some() {
            return Err(HkError::ConfigInvalid(
                "convergence run hit a singularity".into(),
            ));
        }
        Ok(traj.samples.last().unwrap().phi.clone().unwrap())
    };

    let dt_min = ladder.iter().cloned().fold(f64::INFINITY, f64::min);
    let reference = final_phi(dt_min / 4.0)?;
    let mut dt_levels = Vec::new();
    for &dt in &ladder {
        let phi = final_phi(dt)?;
        dt_levels.push(ConvergeLevel {
            dt,
            error: phi.sub(&reference).max_abs(),
        });
    }
    let temporal_slope = loglog_slope(
        &dt_levels
            .iter()
            .map(|l| (l.dt, l.error))
            .collect::<Vec<_>>(),
    );

    // Resolution ladder against the closed-form curvature of conformal
    // backgrounds.
    let mut resolution_levels = Vec::new();
    if let (Some(ns), MetricSpec::ConformalExp { modes }) = (&cfg.n_ladder, &cfg.initial_metric) {
        for &np in ns {
            let mut c = cfg.clone();
            c.points_per_axis = np;
            let grid = crate::spectral::Grid::new(c.n, np, c.length)?;
            let m = c.build_metric(&grid)?;
            let ric = m.ricci()?;
            // Closed form: Ric = -(d dbar u) for g = exp(u), u a cosine sum.
            let length = c.length;
            let modes = modes.clone();
            let oracle = ScalarField::from_fn(&grid, move |x| {
                let mut v = 0.0;
                for mode in &modes {
                    let mut phase = 0.0;
                    let mut ksq = 0.0;
                    for (a, &k) in mode.wavevector.iter().enumerate() {
                        phase += k as f64 * x[a];
                        ksq += (k as f64) * (k as f64);
                    }
                    let w = 2.0 * std::f64::consts::PI / length;
                    // d dbar of a cosine: -(1/4)(w^2 ksq) cos, negated.
                    v += mode.amplitude * 0.25 * w * w * ksq * (w * phase * length).cos();
                }
                C64::new(v, 0.0)
            });
            resolution_levels.push(ResolutionLevel {
                points_per_axis: np,
                error: ric.comp(0, 0).sub(&oracle).max_abs(),
            });
        }
    }

    let resolution_slope = loglog_slope(
        &resolution_levels
            .iter()
            .map(|l| (l.points_per_axis as f64, l.error))
            .collect::<Vec<_>>(),
    );
    let output = ConvergeOutput {
        dt_levels,
        temporal_slope,
        resolution_levels,
        resolution_slope,
    };
    report::write_json(&out.join("converge.json"), &output)?;
    let mut csv = String::from("# dt,error\n");
    for l in &output.dt_levels {
        csv.push_str(&format!("{:.17e},{:.17e}\n", l.dt, l.error));
    }
    std::fs::write(out.join("converge.csv"), csv)?;
    if let Some(s) = output.temporal_slope {
        println!("temporal slope: {s:.3}");
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct CurvatureReport {
    scalar_min: f64,
    scalar_max: f64,
    ricci_eig_min: f64,
    ricci_eig_max: f64,
    vol: f64,
    avg_scalar: f64,
    total_scalar: f64,
    kahler_identity_residual: f64,
    curvature_symmetry_residual: f64,
}

/// `curvature`: static geometry report of the initial metric.
pub fn cmd_curvature(config_path: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let _lock = LockGuard::acquire(out)?;
    let built = cfg.build()?;
    let m = MetricField::from_potential(&built.setup.g0, &built.phi0)?;
    let ric = m.ricci()?;
    let r = m.scalar_curvature(&ric)?;
    let (_, vol, avg) = m.volume_and_average()?;
    let one = ScalarField::constant(m.grid(), C64::new(1.0, 0.0));
    let total = r.integrate(&m.det.clone())?.re;
    let _ = one;

    let n = m.grid().n;
    let npts = m.grid().num_points();
    let (mut rmin, mut rmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in &r.data {
        rmin = rmin.min(v.re);
        rmax = rmax.max(v.re);
    }
    let (mut emin, mut emax) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in 0..npts {
        match n {
            1 => {
                let v = ric.comp(0, 0).data[p].re;
                emin = emin.min(v);
                emax = emax.max(v);
            }
            2 => {
                let a = ric.comp(0, 0).data[p].re;
                let d = ric.comp(1, 1).data[p].re;
                let b = ric.comp(0, 1).data[p];
                let half = 0.5 * (a + d);
                let disc = (half * half - (a * d - b.norm_sqr())).max(0.0).sqrt();
                emin = emin.min(half - disc);
                emax = emax.max(half + disc);
            }
            _ => unreachable!(),
        }
    }

    let rep = CurvatureReport {
        scalar_min: rmin,
        scalar_max: rmax,
        ricci_eig_min: emin,
        ricci_eig_max: emax,
        vol,
        avg_scalar: avg,
        total_scalar: total,
        kahler_identity_residual: m.kahler_identity_residual()?,
        curvature_symmetry_residual: m.riemann()?.symmetry_residual(),
    };
    report::write_json(&out.join("curvature.json"), &rep)?;
    println!(
        "R in [{:.6e}, {:.6e}], vol = {:.9}, r = {:.3e}, total = {:.3e}",
        rep.scalar_min, rep.scalar_max, rep.vol, rep.avg_scalar, rep.total_scalar
    );
    Ok(())
}

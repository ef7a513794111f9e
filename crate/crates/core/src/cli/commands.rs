use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{AuditMode, ProfileSpec, RunConfig};
use super::io::{read_time_series, write_json, write_sweep, write_time_series};
use super::CliError;
use crate::analysis::{detailed_balance_residual, equilibrium_from_mass, truncation_convergence_gated, BalanceResidual, ConvergenceFailure, SweepSetup};
use crate::fluxes::{flux_breakdown_with, rhs_into, Parallelism};
use crate::integrate::{integrate_with, Diagnostics, MomentReport, StepStats};
use crate::kernels::{audit_structure, certify_bound, AuditReport, RateKernel};
use crate::state::{build_initial, InitialSpec, Variant};

fn prepare_dir(config: &RunConfig, out: Option<&Path>) -> Result<PathBuf, CliError> {
    let dir = config.output_dir(out);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn describe_violations(report: &AuditReport) -> String {
    let shown: Vec<String> = report
        .violations
        .iter()
        .take(10)
        .map(|v| format!("{:?} at {:?} (value {}, bound {})", v.kind, v.indices, v.value, v.bound))
        .collect();
    let more = report.violations.len().saturating_sub(shown.len());
    let mut s = format!("kernel {} fails the structural audit at cap {}: {}", report.kernel, report.cap, shown.join("; "));
    if more > 0 {
        s.push_str(&format!("; and {more} more"));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovPoint {
    pub t: f64,
    pub v: f64,
}

/// Quantities of a run summary that depend only on the sampled states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub p0_drift: f64,
    pub p1_drift: f64,
    pub final_moments: MomentReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_moment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov_series: Option<Vec<LyapunovPoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub kernel: String,
    pub bath: Option<f64>,
    pub step_stats: StepStats,
    pub drift_flagged: bool,
    /// Structural-audit violations tolerated under `audit = "warn"`.
    pub audit_violations: usize,
    #[serde(flatten)]
    pub series: SeriesSummary,
}

/// Summary of sampled rows `c_0..c_N` at `times`.
pub fn summarize_series(times: &[f64], rows: &[Vec<f64>], diagnostics: &Diagnostics) -> Result<SeriesSummary, CliError> {
    let reports: Vec<MomentReport> = rows.iter().map(|r| MomentReport::of(r, diagnostics)).collect();
    let (first, last) = match (reports.first(), reports.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(CliError::Config("time series has no samples".into())),
    };
    let p0_drift = reports.iter().fold(0.0_f64, |d, m| d.max((m.p0 - first.p0).abs()));
    let p1_drift = reports.iter().fold(0.0_f64, |d, m| d.max((m.p1 - first.p1).abs()));
    let lyapunov_series = diagnostics.lyapunov_profile.as_ref().map(|_| {
        times
            .iter()
            .zip(&reports)
            .map(|(&t, m)| LyapunovPoint {
                t,
                v: m.lyapunov.expect("profile configured"),
            })
            .collect()
    });
    Ok(SeriesSummary {
        p0_drift,
        p1_drift,
        sigma_moment: last.sigma,
        final_moments: last.clone(),
        lyapunov_series,
    })
}

/// Recomputes the sampled-state part of a run summary from its time-series CSV.
pub fn resummarize(csv: &Path, config: &RunConfig) -> Result<SeriesSummary, CliError> {
    let (times, rows) = read_time_series(csv)?;
    summarize_series(&times, &rows, &config.diagnostics()?)
}

fn drift_flagged(variant: Variant, series: &SeriesSummary, threshold: f64) -> bool {
    match variant {
        Variant::Isolated => series.p0_drift > threshold || series.p1_drift > threshold,
        Variant::NonIsolated => series.p1_drift > threshold,
    }
}

/// Runs the structural audit at `cap`; in strict mode a failure is an error.
fn gate_audit(kernel: &RateKernel, cap: usize, mode: AuditMode) -> Result<AuditReport, CliError> {
    let report = audit_structure(kernel, cap);
    if !report.passed() && mode == AuditMode::Strict {
        return Err(CliError::Audit(describe_violations(&report)));
    }
    Ok(report)
}

pub fn simulate(config_path: &Path, out: Option<&Path>) -> Result<RunSummary, CliError> {
    let config = RunConfig::load(config_path)?;
    let kernel = config.kernel.build()?;
    let bath = config.resolve_bath(&kernel)?;
    let diagnostics = config.diagnostics()?;
    let state0 = build_initial(&InitialSpec::new(config.initial.clone(), config.n), config.variant, bath)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let dir = prepare_dir(&config, out)?;

    let audit = audit_structure(&kernel, config.n);
    if !audit.passed() {
        if config.diagnostics.audit == AuditMode::Strict {
            write_json(&dir.join(&config.outputs.audit), &audit)?;
            return Err(CliError::Audit(describe_violations(&audit)));
        }
        eprintln!("warning: {}", describe_violations(&audit));
    }

    let trajectory = integrate_with(&kernel, &state0, &config.integrator, &diagnostics).map_err(|e| CliError::Integrator(e.to_string()))?;
    write_time_series(&dir.join(&config.outputs.time_series), &trajectory)?;

    let times = trajectory.times();
    let rows: Vec<Vec<f64>> = trajectory.samples.iter().map(|s| s.state.values().to_vec()).collect();
    let series = summarize_series(&times, &rows, &diagnostics)?;
    let flagged = drift_flagged(config.variant, &series, config.diagnostics.drift_threshold);
    if flagged {
        eprintln!(
            "warning: conservation drift above {} (p0 {}, p1 {})",
            config.diagnostics.drift_threshold, series.p0_drift, series.p1_drift
        );
    }
    let summary = RunSummary {
        kernel: kernel.name().to_string(),
        bath,
        step_stats: trajectory.stats,
        drift_flagged: flagged,
        audit_violations: audit.violations.len(),
        series,
        config,
    };
    write_json(&dir.join(&summary.config.outputs.summary), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutput {
    pub kernel: String,
    pub cap: usize,
    pub passed: bool,
    pub structure: AuditReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<AuditReport>,
}

/// Structural audit plus, when the config carries one, certificate verification.
/// Violations produce an `Audit` error after the report is written.
pub fn audit_kernel(config_path: &Path, cap: Option<usize>, out: Option<&Path>) -> Result<AuditOutput, CliError> {
    let config = RunConfig::load(config_path)?;
    let cap = cap.unwrap_or(config.n);
    if cap < 2 {
        return Err(CliError::Config(format!("cap must be at least 2, got {cap}")));
    }
    let kernel = config.kernel.build()?;
    let dir = prepare_dir(&config, out)?;
    let structure = audit_structure(&kernel, cap);
    let certificate = config.diagnostics.certificate.as_ref().map(|c| certify_bound(&kernel, c, cap));
    let passed = structure.passed() && certificate.as_ref().is_none_or(AuditReport::passed);
    let output = AuditOutput {
        kernel: kernel.name().to_string(),
        cap,
        passed,
        structure,
        certificate,
    };
    write_json(&dir.join(&config.outputs.audit), &output)?;
    if !passed {
        let count = output.structure.violations.len() + output.certificate.as_ref().map_or(0, |c| c.violations.len());
        return Err(CliError::Audit(format!(
            "kernel {} has {count} violation(s) at cap {cap}; see {}",
            output.kernel,
            dir.join(&config.outputs.audit).display()
        )));
    }
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub rows: usize,
    pub failures: Vec<ConvergenceFailure>,
}

/// Integrates at every `N` in `n_list` and writes the convergence table.
/// Failed truncations are listed and turn the result into a `PartialSweep` error.
pub fn sweep(config_path: &Path, n_list: &[usize], out: Option<&Path>) -> Result<SweepOutcome, CliError> {
    let config = RunConfig::load(config_path)?;
    let kernel = config.kernel.build()?;
    let bath = config.resolve_bath(&kernel)?;
    let dir = prepare_dir(&config, out)?;
    let setup = SweepSetup {
        shape: config.initial.clone(),
        variant: config.variant,
        bath,
    };
    let mode = config.diagnostics.audit;
    let table = truncation_convergence_gated(&kernel, &setup, n_list, &config.integrator, |n| {
        gate_audit(&kernel, n, mode).map(|_| ()).map_err(|e| e.to_string())
    })
    .map_err(|e| CliError::Config(e.to_string()))?;
    write_sweep(&dir.join(&config.outputs.sweep), &table)?;
    let outcome = SweepOutcome {
        rows: table.rows.len(),
        failures: table.failures,
    };
    if !outcome.failures.is_empty() {
        let listed: Vec<String> = outcome.failures.iter().map(|f| format!("N={}: {}", f.n, f.reason)).collect();
        return Err(CliError::PartialSweep(listed.join("; ")));
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumOutput {
    pub kernel: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub rho: f64,
    pub z: f64,
    pub mass: f64,
    pub profile: Vec<f64>,
    pub induced_state: Vec<f64>,
    pub detailed_balance_residual: BalanceResidual,
    /// `max_i |rhs_i|` at the induced state.
    pub rhs_max_norm: f64,
    /// Largest single flux-family magnitude at the induced state.
    pub flux_scale: f64,
}

/// Equilibrium `O_i z^i` with mass `rho` for the configured profile (default `O = 1`).
pub fn equilibrium(config_path: &Path, rho: f64, out: Option<&Path>) -> Result<EquilibriumOutput, CliError> {
    let config = RunConfig::load(config_path)?;
    let kernel = config.kernel.build()?;
    let dir = prepare_dir(&config, out)?;
    let profile = config
        .diagnostics
        .lyapunov_profile
        .as_ref()
        .unwrap_or(&ProfileSpec::Ones)
        .build(config.n)?;
    let spec = equilibrium_from_mass(&profile, rho).map_err(|e| CliError::Config(e.to_string()))?;
    let induced = spec.induced_values();
    let mut d = vec![0.0; induced.len()];
    rhs_into(&kernel, &induced, config.variant, &mut d, Parallelism::Auto);
    let flux_scale = flux_breakdown_with(&kernel, &induced, config.variant, Parallelism::Auto).max_magnitude();
    let output = EquilibriumOutput {
        kernel: kernel.name().to_string(),
        n: config.n,
        rho,
        z: spec.z,
        mass: spec.mass(),
        profile: profile.values().to_vec(),
        detailed_balance_residual: detailed_balance_residual(&kernel, &profile),
        rhs_max_norm: d.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
        flux_scale,
        induced_state: induced,
    };
    write_json(&dir.join(&config.outputs.equilibrium), &output)?;
    Ok(output)
}

//! σ-moment tools, detailed-balance equilibria, the entropy-type functional
//! `V(c) = sum c_i (ln(c_i/O_i) - 1)` and truncation-convergence studies.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fluxes::net_rate;
use crate::integrate::{integrate, IntegratorConfig, Trajectory};
use crate::kernels::{BoundCertificate, RateKernel};
use crate::state::{build_initial, ConcentrationState, InitialShape, InitialSpec, Variant};
use crate::sum::{compensated, CompensatedSum};

/// Relative slack for inequality scans evaluated in floating point.
const SCAN_SLACK: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid σ function: {0}")]
    Sigma(String),
    #[error("invalid balance profile: {0}")]
    Profile(String),
    #[error("mass {rho} cannot be bracketed: the mass sum is not finite at z = {z}")]
    Bracket { rho: f64, z: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("length mismatch: state has N = {state}, profile has N = {profile}")]
    Length { state: usize, profile: usize },
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum SigmaFamily {
    /// `σ(x) = x^p` with `p > 1`.
    Power(f64),
    Custom { name: String, f: ScalarFn, df: ScalarFn },
}

impl fmt::Debug for SigmaFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaFamily::Power(p) => write!(f, "Power({p})"),
            SigmaFamily::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// Convex superlinear weight used for σ-moments `sum σ(i) c_i`.
#[derive(Debug, Clone)]
pub struct SigmaFunction {
    family: SigmaFamily,
    m_sigma: f64,
}

impl SigmaFunction {
    /// `σ(x) = x^p`. `m_σ = 2` for `p <= 2` and `2^p - 2` above.
    pub fn power(p: f64) -> Result<Self, AnalysisError> {
        if !(p.is_finite() && p > 1.0) {
            return Err(AnalysisError::Sigma(format!("power must be finite and > 1, got {p}")));
        }
        let m_sigma = if p <= 2.0 { 2.0 } else { 2f64.powf(p) - 2.0 };
        Ok(Self {
            family: SigmaFamily::Power(p),
            m_sigma,
        })
    }

    /// User-supplied σ with derivative; `σ(0) = 0` is checked.
    pub fn custom(name: impl Into<String>, f: ScalarFn, df: ScalarFn, m_sigma: f64) -> Result<Self, AnalysisError> {
        if f(0.0) != 0.0 {
            return Err(AnalysisError::Sigma("σ(0) must be 0".into()));
        }
        let s = Self {
            family: SigmaFamily::Custom { name: name.into(), f, df },
            m_sigma: 1.0,
        };
        s.with_m_sigma(m_sigma)
    }

    pub fn with_m_sigma(mut self, m_sigma: f64) -> Result<Self, AnalysisError> {
        if !(m_sigma.is_finite() && m_sigma > 0.0) {
            return Err(AnalysisError::Sigma(format!("m_sigma must be positive, got {m_sigma}")));
        }
        self.m_sigma = m_sigma;
        Ok(self)
    }

    pub fn family(&self) -> &SigmaFamily {
        &self.family
    }

    pub fn m_sigma(&self) -> f64 {
        self.m_sigma
    }

    pub fn name(&self) -> String {
        match &self.family {
            SigmaFamily::Power(p) => format!("x^{p}"),
            SigmaFamily::Custom { name, .. } => name.clone(),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match &self.family {
            SigmaFamily::Power(p) => x.powf(*p),
            SigmaFamily::Custom { f, .. } => f(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match &self.family {
            SigmaFamily::Power(p) => p * x.powf(p - 1.0),
            SigmaFamily::Custom { df, .. } => df(x),
        }
    }

    /// Powers `1 < p <= 2`.
    pub fn is_class_e(&self) -> bool {
        matches!(self.family, SigmaFamily::Power(p) if p <= 2.0)
    }

    /// Powers `p >= 2`.
    pub fn is_class_e1(&self) -> bool {
        matches!(self.family, SigmaFamily::Power(p) if p >= 2.0)
    }

    /// Checks convexity, nonnegativity and (for class ℰ) monotonicity of
    /// `σ(r)/r` on `0..=cap`. Returns the first offending point.
    pub fn audit_grid(&self, cap: usize) -> Result<(), usize> {
        let s: Vec<f64> = (0..=cap).map(|x| self.value(x as f64)).collect();
        for x in 0..=cap {
            if !(s[x] >= 0.0) {
                return Err(x);
            }
            if x >= 1 && x < cap && s[x + 1] - 2.0 * s[x] + s[x - 1] < -SCAN_SLACK * s[x + 1] {
                return Err(x);
            }
            if self.is_class_e() && x >= 2 && s[x] / (x as f64) < s[x - 1] / ((x - 1) as f64) {
                return Err(x);
            }
        }
        Ok(())
    }
}

/// `σ(j+k) + σ(i-k) - σ(j) - σ(i)` for `1 <= k <= i`.
pub fn sigma_tilde(sigma: &SigmaFunction, i: usize, j: usize, k: usize) -> f64 {
    assert!(k >= 1 && k <= i, "sigma_tilde needs 1 <= k <= i, got ({i},{j},{k})");
    let s = |x: usize| sigma.value(x as f64);
    (s(j + k) - s(j)) + (s(i - k) - s(i))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityViolation {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaInequalityReport {
    pub sigma: String,
    pub m_sigma: f64,
    pub max_index: usize,
    pub checked: usize,
    pub violations: Vec<InequalityViolation>,
}

impl SigmaInequalityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Exhaustive check of `(j+k) σ̃(i,j,k) <= m_σ (j σ(k) + k σ(j))` over
/// `1 <= k <= i <= max_index`, `0 <= j <= max_index`.
pub fn audit_sigma_inequality(sigma: &SigmaFunction, max_index: usize) -> SigmaInequalityReport {
    let m = sigma.m_sigma();
    let per_i: Vec<(usize, Vec<InequalityViolation>)> = (1..=max_index)
        .into_par_iter()
        .map(|i| {
            let mut checked = 0;
            let mut found = Vec::new();
            for k in 1..=i {
                for j in 0..=max_index {
                    let lhs = (j + k) as f64 * sigma_tilde(sigma, i, j, k);
                    let rhs = m * (j as f64 * sigma.value(k as f64) + k as f64 * sigma.value(j as f64));
                    checked += 1;
                    if lhs > rhs + SCAN_SLACK * (lhs.abs() + rhs.abs()) {
                        found.push(InequalityViolation { i, j, k, lhs, rhs });
                    }
                }
            }
            (checked, found)
        })
        .collect();
    let mut report = SigmaInequalityReport {
        sigma: sigma.name(),
        m_sigma: m,
        max_index,
        checked: 0,
        violations: Vec::new(),
    };
    for (checked, found) in per_i {
        report.checked += checked;
        report.violations.extend(found);
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperadditivityScan {
    pub eta: f64,
    pub p_max: usize,
    /// Smallest `M0 >= 2` from which the bound holds up to `p_max`.
    pub m0: usize,
    /// Values of `p` at which the bound fails.
    pub failing: Vec<usize>,
}

/// Scans `σ(p) - σ(p-k) - σ(k) >= η σ(p-1)/(p-1)` over `2 <= p <= p_max`,
/// `1 <= k <= p-1`, and reports the threshold `M0` beyond which it always holds.
pub fn scan_superadditivity(sigma: &SigmaFunction, eta: f64, p_max: usize) -> SuperadditivityScan {
    let s: Vec<f64> = (0..=p_max).map(|x| sigma.value(x as f64)).collect();
    let failing: Vec<usize> = (2..=p_max)
        .filter(|&p| {
            let bound = eta * s[p - 1] / (p - 1) as f64;
            (1..p).any(|k| s[p] - s[p - k] - s[k] < bound * (1.0 - SCAN_SLACK))
        })
        .collect();
    let m0 = failing.last().map_or(2, |&p| p + 1);
    SuperadditivityScan { eta, p_max, m0, failing }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentBoundReport {
    /// `K = 2 C Q m_σ P_1(0)`.
    pub growth_constant: f64,
    pub horizon: f64,
    /// `exp(K T)`.
    pub gamma: f64,
    pub max_ratio: f64,
    /// Sample times at which the ratio exceeded `gamma`.
    pub violations: Vec<f64>,
}

impl MomentBoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `sum σ(i) c_i(t) <= exp(K T) sum σ(i) c_i(0)` at every sample, with
/// `T` the last sample time.
pub fn check_moment_bound(trajectory: &Trajectory, sigma: &SigmaFunction, cert: &BoundCertificate) -> MomentBoundReport {
    let first = &trajectory.samples[0].state;
    let m0 = first.sigma_moment(sigma);
    let growth_constant = 2.0 * cert.c * cert.q * sigma.m_sigma() * first.moment(1.0);
    let horizon = trajectory.samples.last().map_or(0.0, |s| s.state.time()) - first.time();
    let gamma = (growth_constant * horizon).exp();
    let mut max_ratio: f64 = 1.0;
    let mut violations = Vec::new();
    for sample in &trajectory.samples {
        let m = sample.state.sigma_moment(sigma);
        let ratio = if m0 == 0.0 {
            if m == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            m / m0
        };
        max_ratio = max_ratio.max(ratio);
        if ratio > gamma * (1.0 + SCAN_SLACK) {
            violations.push(sample.state.time());
        }
    }
    MomentBoundReport {
        growth_constant,
        horizon,
        gamma,
        max_ratio,
        violations,
    }
}

/// Positive weights `O_0..O_N` with `O_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BalanceProfile(Vec<f64>);

impl BalanceProfile {
    pub fn new(values: Vec<f64>) -> Result<Self, AnalysisError> {
        match values.first() {
            None => return Err(AnalysisError::Profile("empty profile".into())),
            Some(&o0) if o0 != 1.0 => return Err(AnalysisError::Profile(format!("O_0 must be 1, got {o0}"))),
            _ => {}
        }
        if let Some((i, o)) = values.iter().enumerate().find(|(_, o)| !(o.is_finite() && **o > 0.0)) {
            return Err(AnalysisError::Profile(format!("O_{i} = {o} is not positive")));
        }
        Ok(Self(values))
    }

    /// `O_i = 1` for `0 <= i <= n`.
    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n + 1])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.len() - 1
    }
}

impl TryFrom<Vec<f64>> for BalanceProfile {
    type Error = AnalysisError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<BalanceProfile> for Vec<f64> {
    fn from(p: BalanceProfile) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceResidual {
    pub max: f64,
    /// `(q, p, k)` attaining the maximum; `None` when every residual is zero.
    pub argmax: Option<(usize, usize, usize)>,
    pub checked: usize,
}

/// Largest `|a(q,p;k) O_q O_p - a(p+k,q-k;k) O_{p+k} O_{q-k}|` over
/// `1 <= k <= q <= N`, `0 <= p <= N-k`. Ties keep the first triple in that order.
pub fn detailed_balance_residual(kernel: &RateKernel, profile: &BalanceProfile) -> BalanceResidual {
    let o = profile.values();
    let n = profile.n();
    let mut out = BalanceResidual {
        max: 0.0,
        argmax: None,
        checked: 0,
    };
    for q in 1..=n {
        for k in 1..=q {
            for p in 0..=n - k {
                let r = net_rate(kernel, o, q, p, k).abs();
                out.checked += 1;
                if r > out.max || (r.is_nan() && !out.max.is_nan()) {
                    out.max = r;
                    out.argmax = Some((q, p, k));
                }
            }
        }
    }
    out
}

/// Detailed-balance equilibrium `c̄_i = O_i z^i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSpec {
    pub profile: BalanceProfile,
    pub z: f64,
}

impl EquilibriumSpec {
    pub fn induced_values(&self) -> Vec<f64> {
        self.profile
            .values()
            .iter()
            .enumerate()
            .map(|(i, o)| o * self.z.powi(i as i32))
            .collect()
    }

    pub fn induced_state(&self, variant: Variant) -> ConcentrationState {
        ConcentrationState::from_parts(self.induced_values(), 0.0, variant)
    }

    /// `sum_{i>=1} i O_i z^i`.
    pub fn mass(&self) -> f64 {
        equilibrium_mass(self.profile.values(), self.z)
    }
}

fn equilibrium_mass(o: &[f64], z: f64) -> f64 {
    compensated(o.iter().enumerate().skip(1).map(|(i, oi)| i as f64 * oi * z.powi(i as i32)))
}

/// Solves `sum_{i=1}^N i O_i z^i = rho` for `z` by bisection.
pub fn equilibrium_from_mass(profile: &BalanceProfile, rho: f64) -> Result<EquilibriumSpec, AnalysisError> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(AnalysisError::Parameter(format!("mass must be positive and finite, got {rho}")));
    }
    if profile.n() == 0 {
        return Err(AnalysisError::Parameter("profile has no cluster sizes >= 1".into()));
    }
    let o = profile.values();
    let mass = |z: f64| equilibrium_mass(o, z);
    let mut hi = 1.0_f64;
    loop {
        let m = mass(hi);
        if !m.is_finite() || !hi.is_finite() {
            return Err(AnalysisError::Bracket { rho, z: hi });
        }
        if m >= rho {
            break;
        }
        hi *= 2.0;
    }
    let mut lo = 0.0_f64;
    let tol = 1e-12 * rho;
    let mut z = hi;
    for _ in 0..2000 {
        let m_hi = mass(hi);
        if (m_hi - rho).abs() <= tol {
            z = hi;
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            z = if (mass(lo) - rho).abs() < (m_hi - rho).abs() { lo } else { hi };
            break;
        }
        let m = mass(mid);
        if (m - rho).abs() <= tol {
            z = mid;
            break;
        }
        if m < rho {
            lo = mid;
        } else {
            hi = mid;
        }
        z = mid;
    }
    Ok(EquilibriumSpec {
        profile: profile.clone(),
        z,
    })
}

fn check_lengths(state: &ConcentrationState, profile: &BalanceProfile) -> Result<(), AnalysisError> {
    if state.n() != profile.n() {
        return Err(AnalysisError::Length {
            state: state.n(),
            profile: profile.n(),
        });
    }
    Ok(())
}

/// `V(c) = sum c_i (ln(c_i/O_i) - 1)` with `0 ln 0 = 0`.
pub fn lyapunov_v(state: &ConcentrationState, profile: &BalanceProfile) -> Result<f64, AnalysisError> {
    check_lengths(state, profile)?;
    Ok(lyapunov_values(state.values(), profile.values()))
}

pub(crate) fn lyapunov_values(c: &[f64], o: &[f64]) -> f64 {
    compensated(
        c.iter()
            .zip(o)
            .map(|(&ci, &oi)| if ci == 0.0 { 0.0 } else { ci * ((ci / oi).ln() - 1.0) }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LyapunovRate {
    Finite { value: f64 },
    /// A participating reaction pair touches a zero concentration at `(i, j, k)`.
    Singular { i: usize, j: usize, k: usize },
}

impl LyapunovRate {
    pub fn value(&self) -> Option<f64> {
        match self {
            LyapunovRate::Finite { value } => Some(*value),
            LyapunovRate::Singular { .. } => None,
        }
    }
}

/// `sum ω(i,j;k) ln(c_{j+k} O_j / (c_j O_{j+k}))` over `1 <= k <= i <= N`,
/// `0 <= j <= N-k`.
pub fn lyapunov_rate(kernel: &RateKernel, state: &ConcentrationState, profile: &BalanceProfile) -> Result<LyapunovRate, AnalysisError> {
    check_lengths(state, profile)?;
    let c = state.values();
    let o = profile.values();
    let n = state.n();
    let mut acc = CompensatedSum::new();
    for k in 1..=n {
        for i in k..=n {
            for j in 0..=n - k {
                let forward = kernel.rate(i, j, k);
                let backward = kernel.rate(j + k, i - k, k);
                if forward == 0.0 && backward == 0.0 {
                    continue;
                }
                if c[j] == 0.0 || c[j + k] == 0.0 {
                    return Ok(LyapunovRate::Singular { i, j, k });
                }
                let omega = forward * c[i] * c[j] - backward * c[j + k] * c[i - k];
                acc.add(omega * ((c[j + k] * o[j]) / (c[j] * o[j + k])).ln());
            }
        }
    }
    Ok(LyapunovRate::Finite { value: acc.value() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub i: usize,
    pub t: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub c: f64,
    /// `|c_i^N(t) - c_i^{N'}(t)|` with `N'` the previous truncation in the list.
    pub delta_prev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceFailure {
    #[serde(rename = "N")]
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub failures: Vec<ConvergenceFailure>,
}

impl ConvergenceTable {
    pub fn value(&self, i: usize, t: f64, n: usize) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.i == i && r.t == t && r.n == n)
    }
}

/// Initial data and variant shared by every truncation in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSetup {
    pub shape: InitialShape,
    pub variant: Variant,
    pub bath: Option<f64>,
}

/// Integrates at each truncation in `n_list` and tabulates `c_i^N(t)` for
/// `i <= min(n_list)` at every sample time.
pub fn truncation_convergence(
    kernel: &RateKernel,
    setup: &SweepSetup,
    n_list: &[usize],
    config: &IntegratorConfig,
) -> Result<ConvergenceTable, AnalysisError> {
    truncation_convergence_gated(kernel, setup, n_list, config, |_| Ok(()))
}

/// As [`truncation_convergence`], running `gate(N)` before each integration;
/// a gate error is recorded as a failure of that truncation.
pub fn truncation_convergence_gated<G>(
    kernel: &RateKernel,
    setup: &SweepSetup,
    n_list: &[usize],
    config: &IntegratorConfig,
    gate: G,
) -> Result<ConvergenceTable, AnalysisError>
where
    G: Fn(usize) -> Result<(), String> + Sync,
{
    if n_list.is_empty() {
        return Err(AnalysisError::Parameter("empty truncation list".into()));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return Err(AnalysisError::Parameter("truncation list must be positive and strictly increasing".into()));
    }
    let i_max = n_list[0];
    let runs: Vec<Result<Trajectory, String>> = n_list
        .par_iter()
        .map(|&n| {
            gate(n)?;
            let state = build_initial(&InitialSpec::new(setup.shape.clone(), n), setup.variant, setup.bath).map_err(|e| e.to_string())?;
            integrate(kernel, &state, config).map_err(|e| e.to_string())
        })
        .collect();

    let mut table = ConvergenceTable {
        rows: Vec::new(),
        failures: Vec::new(),
    };
    let mut previous: Option<&Trajectory> = None;
    for (&n, run) in n_list.iter().zip(&runs) {
        match run {
            Ok(traj) => {
                for (s, sample) in traj.samples.iter().enumerate() {
                    let c = sample.state.values();
                    for (i, &ci) in c.iter().enumerate().take(i_max + 1) {
                        let delta_prev = previous.map(|p| (ci - p.samples[s].state.values()[i]).abs());
                        table.rows.push(ConvergenceRow {
                            i,
                            t: sample.state.time(),
                            n,
                            c: ci,
                            delta_prev,
                        });
                    }
                }
                previous = Some(traj);
            }
            Err(reason) => {
                table.failures.push(ConvergenceFailure { n, reason: reason.clone() });
                previous = None;
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluxes::rhs;
    use crate::kernels::make_edg_kernel;

    #[test]
    fn sigma_tilde_examples() {
        let s2 = SigmaFunction::power(2.0).unwrap();
        assert_eq!(sigma_tilde(&s2, 2, 0, 1), -2.0);
        let s15 = SigmaFunction::power(1.5).unwrap();
        for i in 1..10 {
            assert_eq!(sigma_tilde(&s15, i, 0, i), 0.0);
        }
        let t = sigma_tilde(&s15, 3, 2, 1);
        assert!(3.0 * t <= 2.0 * (2.0 * s15.value(1.0) + s15.value(2.0)));
    }

    #[test]
    fn sigma_classes_and_constants() {
        let s = SigmaFunction::power(1.5).unwrap();
        assert!(s.is_class_e() && !s.is_class_e1());
        assert_eq!(s.m_sigma(), 2.0);
        let s = SigmaFunction::power(2.0).unwrap();
        assert!(s.is_class_e() && s.is_class_e1());
        let s = SigmaFunction::power(3.0).unwrap();
        assert!(s.is_class_e1() && !s.is_class_e());
        assert_eq!(s.m_sigma(), 6.0);
        assert!(SigmaFunction::power(1.0).is_err());
        assert!(SigmaFunction::power(f64::NAN).is_err());
        assert_eq!(s.derivative(2.0), 12.0);
    }

    #[test]
    fn sigma_grid_audit() {
        for p in [1.5, 2.0, 3.0] {
            assert_eq!(SigmaFunction::power(p).unwrap().audit_grid(50), Ok(()));
        }
        let concave = SigmaFunction::custom("concave", Arc::new(|x: f64| x.sqrt()), Arc::new(|x: f64| 0.5 / x.sqrt()), 2.0).unwrap();
        assert_eq!(concave.audit_grid(10), Err(1));
        assert!(SigmaFunction::custom("shifted", Arc::new(|x: f64| x + 1.0), Arc::new(|_| 1.0), 2.0).is_err());
    }

    #[test]
    fn sigma_inequality_holds_for_x_cubed_with_its_constant() {
        let s = SigmaFunction::power(3.0).unwrap();
        assert!(audit_sigma_inequality(&s, 25).passed());
        // m_σ = 2 is too small for p = 3 (i = j = k = 1 gives 2·6 > 2·2).
        let tight = s.with_m_sigma(2.0).unwrap();
        let r = audit_sigma_inequality(&tight, 5);
        assert!(!r.passed());
    }

    #[test]
    fn superadditivity_scan_reports_threshold() {
        let r = scan_superadditivity(&SigmaFunction::power(1.5).unwrap(), 0.5, 256);
        assert_eq!(r.m0, 2);
        assert!(r.failing.is_empty());
        // a huge η fails everywhere
        let r = scan_superadditivity(&SigmaFunction::power(1.5).unwrap(), 100.0, 20);
        assert_eq!(r.m0, 21);
    }

    #[test]
    fn balance_profile_validation() {
        assert!(BalanceProfile::new(vec![]).is_err());
        assert!(BalanceProfile::new(vec![2.0, 1.0]).is_err());
        assert!(BalanceProfile::new(vec![1.0, 0.0]).is_err());
        assert!(BalanceProfile::new(vec![1.0, f64::INFINITY]).is_err());
        assert_eq!(BalanceProfile::new(vec![1.0, 3.0]).unwrap().n(), 1);
        let parsed: Result<BalanceProfile, _> = serde_json::from_str("[1.0, -1.0]");
        assert!(parsed.is_err());
    }

    #[test]
    fn residual_constant_kernel_is_zero() {
        let r = detailed_balance_residual(&RateKernel::constant(1.0), &BalanceProfile::ones(10));
        assert_eq!(r.max, 0.0);
        assert_eq!(r.argmax, None);
    }

    #[test]
    fn residual_edg_matches_enumeration() {
        let k = make_edg_kernel(|_, _| 1.0);
        let n = 4;
        let mut expected: f64 = 0.0;
        for q in 1..=n {
            for kk in 1..=q {
                for p in 0..=n - kk {
                    let fwd: f64 = if kk == 1 && !(p == 0 && q == 1) { 1.0 } else { 0.0 };
                    let bwd = if kk == 1 && !(q == 1 && p + 1 == 1) { 1.0 } else { 0.0 };
                    expected = expected.max((fwd - bwd).abs());
                }
            }
        }
        assert_eq!(detailed_balance_residual(&k, &BalanceProfile::ones(n)).max, expected);
    }

    #[test]
    fn residual_reports_first_argmax() {
        let k = RateKernel::closed("skew", |i, _, _| i as f64);
        let r = detailed_balance_residual(&k, &BalanceProfile::ones(3));
        // residual |q - (p+k)| off the null pairs; the value 2 is first reached at
        // q = 1, k = 1, p = 2 and again at q = 3, k = 1, p = 0
        assert_eq!(r.max, 2.0);
        assert_eq!(r.argmax, Some((1, 2, 1)));
    }

    #[test]
    fn equilibrium_examples() {
        let e = equilibrium_from_mass(&BalanceProfile::ones(1), 0.5).unwrap();
        assert_eq!(e.z, 0.5);
        let e = equilibrium_from_mass(&BalanceProfile::ones(2), 3.0).unwrap();
        assert!((e.z - 1.0).abs() <= 1e-12);
        for rho in [1e-3, 1e-8, 1e-14] {
            let profile = BalanceProfile::new(vec![1.0, 2.0, 0.5, 3.0]).unwrap();
            let e = equilibrium_from_mass(&profile, rho).unwrap();
            assert!(e.z > 0.0);
            assert!((e.mass() - rho).abs() <= 1e-12 * rho);
        }
        assert!(equilibrium_from_mass(&BalanceProfile::ones(2), 0.0).is_err());
        assert!(matches!(
            equilibrium_from_mass(&BalanceProfile::ones(400), 1e300),
            Err(AnalysisError::Bracket { .. })
        ));
    }

    #[test]
    fn lyapunov_v_examples() {
        let o = BalanceProfile::ones(1);
        let s = |v: Vec<f64>| ConcentrationState::new(v, 0.0, Variant::Isolated).unwrap();
        assert_eq!(lyapunov_v(&s(vec![1.0, 1.0]), &o).unwrap(), -2.0);
        assert_eq!(lyapunov_v(&s(vec![0.0, 0.0]), &o).unwrap(), 0.0);
        assert_eq!(lyapunov_v(&s(vec![1.0, std::f64::consts::E]), &o).unwrap(), -1.0);
        assert!(lyapunov_v(&s(vec![1.0, 1.0, 1.0]), &o).is_err());
    }

    #[test]
    fn lyapunov_rate_at_equilibrium_and_singular() {
        let k = RateKernel::constant(1.0);
        let e = equilibrium_from_mass(&BalanceProfile::ones(6), 1.3).unwrap();
        let rate = lyapunov_rate(&k, &e.induced_state(Variant::Isolated), &e.profile).unwrap();
        assert!(rate.value().unwrap().abs() <= 1e-12);

        let s = ConcentrationState::new(vec![1.0, 0.0, 2.0, 1.0], 0.0, Variant::Isolated).unwrap();
        assert!(matches!(
            lyapunov_rate(&k, &s, &BalanceProfile::ones(3)).unwrap(),
            LyapunovRate::Singular { .. }
        ));
    }

    #[test]
    fn lyapunov_rate_matches_rhs_projection() {
        let k = RateKernel::constant(1.0);
        let values = vec![0.3, 1.2, 0.7, 0.05, 0.4, 0.9, 0.11, 0.6, 0.2];
        let s = ConcentrationState::new(values.clone(), 0.0, Variant::Isolated).unwrap();
        let o = BalanceProfile::ones(8);
        let rate = lyapunov_rate(&k, &s, &o).unwrap().value().unwrap();
        let d = rhs(&k, &s);
        let projected: f64 = d.iter().zip(&values).map(|(di, ci)| di * ci.ln()).sum();
        assert!((rate - projected).abs() <= 1e-12 * (1.0 + projected.abs()));
        assert!(rate <= 0.0);
    }
}

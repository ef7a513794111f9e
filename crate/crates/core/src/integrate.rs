//! Time integration of the truncated system.
//!
//! Two explicit schemes are available: the adaptive Dormand–Prince 5(4) pair
//! and classical fixed-step RK4. Steps are shortened so that every sample time
//! is hit exactly. A step that drives a component to `<= -negativity_floor` is
//! rejected and halved; components in `(-negativity_floor, 0)` after an
//! accepted step are set to zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{lyapunov_values, BalanceProfile, SigmaFunction};
use crate::fluxes::{FluxPlan, Parallelism};
use crate::kernels::{RateKernel, DEFAULT_TABLE_BUDGET_BYTES};
use crate::state::{moment, ConcentrationState};

#[derive(Debug, Error, PartialEq)]
pub enum IntegrateError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("step size underflow at t = {t}: h = {h}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite derivative at t = {t} (component {index})")]
    NonFinite { t: f64, index: usize },
    #[error("balance profile has N = {profile}, state has N = {state}")]
    ProfileLength { profile: usize, state: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    DormandPrince45,
    ClassicalRk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// Initial step for the adaptive method, the step for RK4.
    pub h_init: f64,
    pub h_max: f64,
    pub negativity_floor: f64,
    pub sample_times: Vec<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::DormandPrince45,
            rtol: 1e-9,
            atol: 1e-12,
            h_init: 1e-3,
            h_max: 0.5,
            negativity_floor: 1e-14,
            sample_times: vec![0.0, 1.0],
        }
    }
}

impl IntegratorConfig {
    pub fn with_samples(sample_times: Vec<f64>) -> Self {
        Self {
            sample_times,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        let bad = |msg: String| Err(IntegrateError::InvalidConfig(msg));
        if !(self.rtol.is_finite() && self.rtol >= 1e-14) {
            return bad(format!("rtol must be >= 1e-14, got {}", self.rtol));
        }
        if !(self.atol.is_finite() && self.atol > 0.0) {
            return bad(format!("atol must be positive, got {}", self.atol));
        }
        if !(self.h_init.is_finite() && self.h_init > 0.0) {
            return bad(format!("h_init must be positive, got {}", self.h_init));
        }
        if !(self.h_max.is_finite() && self.h_max > 0.0) {
            return bad(format!("h_max must be positive, got {}", self.h_max));
        }
        if !(self.negativity_floor.is_finite() && self.negativity_floor >= 0.0) {
            return bad(format!("negativity_floor must be nonnegative, got {}", self.negativity_floor));
        }
        match self.sample_times.first() {
            None => return bad("sample_times is empty".into()),
            Some(&t) if !(t.is_finite() && t >= 0.0) => return bad(format!("first sample time {t} is negative")),
            _ => {}
        }
        if self.sample_times.iter().any(|t| !t.is_finite()) || self.sample_times.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sample_times must be finite and strictly increasing".into());
        }
        Ok(())
    }
}

/// Optional quantities recorded with every sample.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub sigma: Option<SigmaFunction>,
    pub lyapunov_profile: Option<BalanceProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<f64>,
}

impl MomentReport {
    pub fn of(values: &[f64], diagnostics: &Diagnostics) -> Self {
        let sigma = diagnostics.sigma.as_ref().map(|s| {
            crate::sum::compensated(values.iter().enumerate().map(|(i, c)| s.value(i as f64) * c))
        });
        let lyapunov = diagnostics
            .lyapunov_profile
            .as_ref()
            .map(|o| lyapunov_values(values, o.values()));
        Self {
            p0: moment(values, 0.0),
            p1: moment(values, 1.0),
            p2: moment(values, 2.0),
            sigma,
            lyapunov,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: ConcentrationState,
    pub moments: MomentReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Smallest and largest accepted step; steps shortened to hit a sample time
    /// are excluded. Both are 0 when no full step was taken.
    pub min_step: f64,
    pub max_step: f64,
    pub rhs_evaluations: usize,
}

impl Default for StepStats {
    fn default() -> Self {
        Self {
            accepted: 0,
            rejected: 0,
            min_step: 0.0,
            max_step: 0.0,
            rhs_evaluations: 0,
        }
    }
}

impl StepStats {
    fn record(&mut self, h: f64, clipped: bool) {
        self.accepted += 1;
        if !clipped {
            self.min_step = if self.max_step == 0.0 { h } else { self.min_step.min(h) };
            self.max_step = self.max_step.max(h);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub config: IntegratorConfig,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn final_state(&self) -> &ConcentrationState {
        &self.samples.last().expect("trajectory is nonempty").state
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.state.time()).collect()
    }
}

pub fn integrate(kernel: &RateKernel, state0: &ConcentrationState, config: &IntegratorConfig) -> Result<Trajectory, IntegrateError> {
    integrate_with(kernel, state0, config, &Diagnostics::default())
}

pub fn integrate_with(
    kernel: &RateKernel,
    state0: &ConcentrationState,
    config: &IntegratorConfig,
    diagnostics: &Diagnostics,
) -> Result<Trajectory, IntegrateError> {
    config.validate()?;
    if let Some(o) = &diagnostics.lyapunov_profile {
        if o.n() != state0.n() {
            return Err(IntegrateError::ProfileLength {
                profile: o.n(),
                state: state0.n(),
            });
        }
    }
    if config.sample_times[0] < state0.time() {
        return Err(IntegrateError::InvalidConfig(format!(
            "first sample time {} precedes the initial time {}",
            config.sample_times[0],
            state0.time()
        )));
    }
    let kernel = kernel.tabulate(state0.n(), DEFAULT_TABLE_BUDGET_BYTES);
    let mut stepper = Stepper::new(&kernel, state0, config);
    let mut samples = Vec::with_capacity(config.sample_times.len());
    for &ts in &config.sample_times {
        match config.method {
            Method::DormandPrince45 => stepper.advance_adaptive(ts)?,
            Method::ClassicalRk4 => stepper.advance_fixed(ts)?,
        }
        let moments = MomentReport::of(&stepper.y, diagnostics);
        let state = ConcentrationState::from_parts(stepper.y.clone(), ts, state0.variant());
        samples.push(Sample { state, moments });
    }
    Ok(Trajectory {
        samples,
        config: config.clone(),
        stats: stepper.stats,
    })
}

/// Largest `|P0(t) - P0(0)|` and `|P1(t) - P1(0)|` over the samples.
pub fn conservation_drift(trajectory: &Trajectory) -> (f64, f64) {
    let first = &trajectory.samples[0].moments;
    trajectory.samples.iter().fold((0.0_f64, 0.0_f64), |(d0, d1), s| {
        (d0.max((s.moments.p0 - first.p0).abs()), d1.max((s.moments.p1 - first.p1).abs()))
    })
}

// Dormand–Prince 5(4) tableau; the system is autonomous so the nodes c_i are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b* (fifth minus fourth order weights)
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const UNDERFLOW_RATIO: f64 = 1e-12;

struct Stepper<'a> {
    plan: FluxPlan<'a>,
    variant: crate::state::Variant,
    config: &'a IntegratorConfig,
    t: f64,
    y: Vec<f64>,
    h: f64,
    /// Whether `k[0]` holds the derivative at `(t, y)`.
    k0_valid: bool,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    stats: StepStats,
}

impl<'a> Stepper<'a> {
    fn new(kernel: &'a RateKernel, state0: &ConcentrationState, config: &'a IntegratorConfig) -> Self {
        let len = state0.values().len();
        let zeros = || vec![0.0; len];
        Self {
            plan: FluxPlan::new(kernel, state0.n(), DEFAULT_TABLE_BUDGET_BYTES),
            variant: state0.variant(),
            config,
            t: state0.time(),
            y: state0.values().to_vec(),
            h: config.h_init.min(config.h_max),
            k0_valid: false,
            k: [zeros(), zeros(), zeros(), zeros(), zeros(), zeros(), zeros()],
            ytmp: zeros(),
            ynew: zeros(),
            stats: StepStats::default(),
        }
    }

    /// Derivative at the current state; a non-finite value aborts the run.
    fn eval_current(&mut self) -> Result<(), IntegrateError> {
        self.plan.rhs_into(&self.y, self.variant, &mut self.k[0], Parallelism::Auto);
        self.stats.rhs_evaluations += 1;
        if let Some(index) = self.k[0].iter().position(|d| !d.is_finite()) {
            return Err(IntegrateError::NonFinite { t: self.t, index });
        }
        Ok(())
    }

    /// Derivative at the trial point `ytmp`; returns whether it is finite.
    fn eval_trial(&mut self, stage: usize) -> bool {
        self.plan.rhs_into(&self.ytmp, self.variant, &mut self.k[stage], Parallelism::Auto);
        self.stats.rhs_evaluations += 1;
        self.k[stage].iter().all(|d| d.is_finite())
    }

    fn combine(&mut self, h: f64, weights: &[(usize, f64)]) {
        for (idx, out) in self.ytmp.iter_mut().enumerate() {
            let mut inc = 0.0;
            for &(s, w) in weights {
                inc += w * self.k[s][idx];
            }
            *out = self.y[idx] + h * inc;
        }
    }

    fn underflow_check(&self, h: f64) -> Result<(), IntegrateError> {
        if h < UNDERFLOW_RATIO * self.config.h_init {
            return Err(IntegrateError::StepUnderflow { t: self.t, h });
        }
        Ok(())
    }

    /// Accepts `ynew` after clamping tiny negatives; returns whether any were clamped.
    fn accept(&mut self, t_new: f64) -> bool {
        let floor = self.config.negativity_floor;
        let mut clamped = false;
        for v in self.ynew.iter_mut() {
            if *v < 0.0 && *v > -floor {
                *v = 0.0;
                clamped = true;
            }
        }
        std::mem::swap(&mut self.y, &mut self.ynew);
        self.t = t_new;
        clamped
    }

    fn has_negative(&self) -> bool {
        let floor = self.config.negativity_floor;
        self.ynew.iter().any(|&v| v <= -floor && v < 0.0)
    }

    /// Stages 2..7 of a step of size `h`; `ynew` receives the fifth-order
    /// solution. Returns false if a trial derivative is not finite.
    fn dormand_prince_stages(&mut self, h: f64) -> bool {
        self.combine(h, &[(0, A21)]);
        if !self.eval_trial(1) {
            return false;
        }
        self.combine(h, &[(0, A31), (1, A32)]);
        if !self.eval_trial(2) {
            return false;
        }
        self.combine(h, &[(0, A41), (1, A42), (2, A43)]);
        if !self.eval_trial(3) {
            return false;
        }
        self.combine(h, &[(0, A51), (1, A52), (2, A53), (3, A54)]);
        if !self.eval_trial(4) {
            return false;
        }
        self.combine(h, &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)]);
        if !self.eval_trial(5) {
            return false;
        }
        self.combine(h, &[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)]);
        self.ynew.copy_from_slice(&self.ytmp);
        self.eval_trial(6)
    }

    /// RMS of the embedded error estimate, scaled by `atol + rtol max(|y|, |ynew|)`.
    fn error_norm(&self, h: f64) -> f64 {
        let cfg = self.config;
        let mut sq = 0.0;
        for idx in 0..self.y.len() {
            let e = h
                * (E1 * self.k[0][idx]
                    + E3 * self.k[2][idx]
                    + E4 * self.k[3][idx]
                    + E5 * self.k[4][idx]
                    + E6 * self.k[5][idx]
                    + E7 * self.k[6][idx]);
            let scale = cfg.atol + cfg.rtol * self.y[idx].abs().max(self.ynew[idx].abs());
            sq += (e / scale).powi(2);
        }
        (sq / self.y.len() as f64).sqrt()
    }

    fn advance_adaptive(&mut self, target: f64) -> Result<(), IntegrateError> {
        let cfg = self.config;
        while self.t < target {
            let remaining = target - self.t;
            let clipped = remaining <= self.h;
            let h = if clipped { remaining } else { self.h };

            if !self.k0_valid {
                self.eval_current()?;
                self.k0_valid = true;
            }
            let err = if self.dormand_prince_stages(h) { self.error_norm(h) } else { f64::INFINITY };
            let factor = if err == 0.0 {
                MAX_FACTOR
            } else if !err.is_finite() {
                MIN_FACTOR
            } else {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };

            if !(err <= 1.0) {
                self.stats.rejected += 1;
                self.h = h * factor;
                self.underflow_check(self.h)?;
                continue;
            }
            if self.has_negative() {
                self.stats.rejected += 1;
                self.h = 0.5 * h;
                self.underflow_check(self.h)?;
                continue;
            }
            let t_new = if clipped { target } else { self.t + h };
            let clamped = self.accept(t_new);
            self.stats.record(h, clipped);
            // First-same-as-last, unless clamping moved the state.
            if clamped {
                self.k0_valid = false;
            } else {
                self.k.swap(0, 6);
            }
            let proposal = h * factor;
            self.h = if clipped { proposal.max(self.h) } else { proposal }.min(cfg.h_max);
        }
        Ok(())
    }

    /// One RK4 step into `ynew`; returns false if a trial derivative is not finite.
    fn rk4_step(&mut self, h: f64) -> Result<bool, IntegrateError> {
        self.eval_current()?;
        self.combine(h, &[(0, 0.5)]);
        if !self.eval_trial(1) {
            return Ok(false);
        }
        self.combine(h, &[(1, 0.5)]);
        if !self.eval_trial(2) {
            return Ok(false);
        }
        self.combine(h, &[(2, 1.0)]);
        if !self.eval_trial(3) {
            return Ok(false);
        }
        self.combine(h, &[(0, 1.0 / 6.0), (1, 1.0 / 3.0), (2, 1.0 / 3.0), (3, 1.0 / 6.0)]);
        self.ynew.copy_from_slice(&self.ytmp);
        Ok(self.ynew.iter().all(|v| v.is_finite()))
    }

    fn advance_fixed(&mut self, target: f64) -> Result<(), IntegrateError> {
        let h_nominal = self.config.h_init;
        while self.t < target {
            let remaining = target - self.t;
            let clipped = remaining <= h_nominal;
            let h_outer = if clipped { remaining } else { h_nominal };
            let end = if clipped { target } else { self.t + h_outer };
            // Sub-steps inside one nominal step, halved on negativity.
            let mut sub = h_outer;
            while self.t < end {
                let left = end - self.t;
                let last = left <= sub;
                let h = if last { left } else { sub };
                if !self.rk4_step(h)? || self.has_negative() {
                    self.stats.rejected += 1;
                    sub = 0.5 * h;
                    self.underflow_check(sub)?;
                    continue;
                }
                let t_new = if last { end } else { self.t + h };
                self.accept(t_new);
                self.stats.record(h, clipped || h < h_outer);
            }
        }
        Ok(())
    }
}

//! Truncated concentration vectors `(c_0, ..., c_N)`, initial data and moments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::SigmaFunction;
use crate::sum::compensated;

/// How the void-cluster concentration `c_0` behaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `c_0` evolves so that the total number of clusters is conserved.
    #[default]
    Isolated,
    /// `c_0` is held at a bath value.
    NonIsolated,
}

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("truncation size N must be at least 1")]
    EmptyTruncation,
    #[error("concentration c_{index} = {value} is negative or not finite")]
    InvalidEntry { index: usize, value: f64 },
    #[error("monodisperse size {size} exceeds the truncation N = {n}")]
    SizeBeyondTruncation { size: usize, n: usize },
    #[error("explicit initial data has {got} entries, expected N+1 = {expected}")]
    Length { got: usize, expected: usize },
    #[error("invalid initial parameter: {0}")]
    Parameter(String),
    #[error("non-isolated runs need a nonnegative bath concentration")]
    MissingBath,
}

/// Concentrations `c_0..c_N` at a time `t`. Entries are nonnegative and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationState {
    values: Vec<f64>,
    time: f64,
    variant: Variant,
}

impl ConcentrationState {
    pub fn new(values: Vec<f64>, time: f64, variant: Variant) -> Result<Self, StateError> {
        if values.len() < 2 {
            return Err(StateError::EmptyTruncation);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(StateError::InvalidEntry { index, value });
        }
        Ok(Self { values, time, variant })
    }

    /// Skips validation; the integrator only produces nonnegative states.
    pub(crate) fn from_parts(values: Vec<f64>, time: f64, variant: Variant) -> Self {
        debug_assert!(values.len() >= 2);
        Self { values, time, variant }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Truncation size `N` (the state has `N+1` entries).
    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    /// `sum_i i^r c_i` with `0^0 = 1`, so `moment(0)` counts void clusters too.
    pub fn moment(&self, r: f64) -> f64 {
        moment(&self.values, r)
    }

    pub fn sigma_moment(&self, sigma: &SigmaFunction) -> f64 {
        compensated(self.values.iter().enumerate().map(|(i, c)| sigma.value(i as f64) * c))
    }

    /// `sum |c_i| + sum i |c_i|`.
    pub fn norm_x01(&self) -> f64 {
        compensated(self.values.iter().enumerate().map(|(i, c)| (1.0 + i as f64) * c.abs()))
    }
}

pub fn moment(values: &[f64], r: f64) -> f64 {
    if r == 0.0 {
        return compensated(values.iter().copied());
    }
    compensated(values.iter().enumerate().map(|(i, c)| (i as f64).powf(r) * c))
}

/// Shape of the initial distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum InitialShape {
    /// Amount `amount` of clusters of size `size`.
    Monodisperse { size: usize, amount: f64 },
    /// `c_i` proportional to `ratio^i`, scaled so the mass `sum i c_i` equals `amount`.
    Geometric { ratio: f64, amount: f64 },
    /// Explicit concentrations; entries beyond `N` are dropped, missing ones are zero.
    Explicit { values: Vec<f64> },
}

impl Default for InitialShape {
    fn default() -> Self {
        InitialShape::Monodisperse { size: 1, amount: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSpec {
    pub shape: InitialShape,
    pub n: usize,
}

impl InitialSpec {
    pub fn new(shape: InitialShape, n: usize) -> Self {
        Self { shape, n }
    }
}

fn nonnegative(name: &str, x: f64) -> Result<f64, StateError> {
    if x.is_finite() && x >= 0.0 {
        Ok(x)
    } else {
        Err(StateError::Parameter(format!("{name} must be finite and nonnegative, got {x}")))
    }
}

/// Builds the state at `t = 0`. In the non-isolated variant `c_0` is set to `bath`.
pub fn build_initial(spec: &InitialSpec, variant: Variant, bath: Option<f64>) -> Result<ConcentrationState, StateError> {
    let n = spec.n;
    if n == 0 {
        return Err(StateError::EmptyTruncation);
    }
    let mut values = vec![0.0; n + 1];
    match &spec.shape {
        InitialShape::Monodisperse { size, amount } => {
            if *size > n {
                return Err(StateError::SizeBeyondTruncation { size: *size, n });
            }
            values[*size] = nonnegative("amount", *amount)?;
        }
        InitialShape::Geometric { ratio, amount } => {
            let ratio = nonnegative("ratio", *ratio)?;
            let amount = nonnegative("amount", *amount)?;
            let raw: Vec<f64> = (0..=n).map(|i| ratio.powi(i as i32)).collect();
            let mass = moment(&raw, 1.0);
            if !(mass > 0.0 && mass.is_finite()) {
                return Err(StateError::Parameter(format!("geometric ratio {ratio} gives no normalizable mass")));
            }
            let scale = amount / mass;
            for (v, r) in values.iter_mut().zip(raw) {
                *v = r * scale;
            }
        }
        InitialShape::Explicit { values: given } => {
            for (index, (v, &g)) in values.iter_mut().zip(given.iter()).enumerate() {
                if !(g.is_finite() && g >= 0.0) {
                    return Err(StateError::InvalidEntry { index, value: g });
                }
                *v = g;
            }
        }
    }
    if variant == Variant::NonIsolated {
        let bath = bath.ok_or(StateError::MissingBath)?;
        values[0] = nonnegative("bath", bath)?;
    }
    ConcentrationState::new(values, 0.0, variant)
}

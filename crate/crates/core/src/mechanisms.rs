//! Local differential privacy primitives.
//!
//! * [`bounded_laplace`]: Laplace noise centred on the (clamped) true value,
//!   re-sampled until the output lands inside the attribute's semantic bounds.
//! * [`randomized_response`]: the two-coin protocol for Boolean attributes.
//! * [`BudgetLedger`]: sequential composition of per-attribute epsilons.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomSource;

/// Maximum number of rejection-sampling redraws before falling back to a clamp.
pub const MAX_REDRAWS: u32 = 1000;

/// Output grid is `2^-32 * sensitivity`.
const SNAP_BITS: i32 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid privacy parameters: {0}")]
    InvalidParams(String),
}

/// Epsilon and semantic bounds for one attribute. Sensitivity is the full range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyParams {
    epsilon: f64,
    lower: f64,
    upper: f64,
    sensitivity: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, lower: f64, upper: f64) -> Result<Self, MechanismError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(MechanismError::InvalidParams(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(MechanismError::InvalidParams(format!(
                "bounds must satisfy lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self {
            epsilon,
            lower,
            upper,
            sensitivity: upper - lower,
        })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, MechanismError> {
        Self::new(epsilon, self.lower, self.upper)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    /// Laplace scale `b = sensitivity / epsilon`.
    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.lower, self.upper)
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower && value <= self.upper
    }
}

/// One Laplace(0, scale) draw by inverse CDF on an open-interval uniform.
pub fn laplace_noise(scale: f64, rng: &mut RandomSource) -> f64 {
    let u = rng.uniform_open() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Bounded Laplace sampler with a redraw counter.
///
/// [`BoundedLaplace::new`] is the only constructor production code uses.
/// [`BoundedLaplace::with_injected_noise`] replaces the random draw with a
/// fixed value so tests can pin the output exactly.
#[derive(Debug, Clone, Default)]
pub struct BoundedLaplace {
    injected: Option<f64>,
    fallbacks: u64,
}

impl BoundedLaplace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_injected_noise(noise: f64) -> Self {
        Self {
            injected: Some(noise),
            fallbacks: 0,
        }
    }

    /// Number of draws that exhausted [`MAX_REDRAWS`] and were clamped.
    pub fn fallback_count(&self) -> u64 {
        self.fallbacks
    }

    pub fn sample(
        &mut self,
        value: f64,
        params: &PrivacyParams,
        rng: &mut RandomSource,
    ) -> Result<f64, MechanismError> {
        if !value.is_finite() {
            return Err(MechanismError::InvalidInput(format!(
                "value must be finite, got {value}"
            )));
        }
        let center = params.clamp(value);

        if let Some(noise) = self.injected {
            let y = center + noise;
            if params.contains(y) {
                return Ok(y);
            }
            self.fallbacks += 1;
            return Ok(params.clamp(y));
        }

        let scale = params.scale();
        let mut last = center;
        for _ in 0..MAX_REDRAWS {
            let y = center + laplace_noise(scale, rng);
            if params.contains(y) {
                return Ok(snap(y, params));
            }
            last = y;
        }
        self.fallbacks += 1;
        Ok(snap(params.clamp(last), params))
    }
}

/// Round onto the `2^-32 * sensitivity` grid anchored at the lower bound.
fn snap(y: f64, params: &PrivacyParams) -> f64 {
    let step = params.sensitivity() * 2f64.powi(-SNAP_BITS);
    let k = ((y - params.lower()) / step).round();
    params.clamp(params.lower() + k * step)
}

/// Convenience wrapper around a fresh [`BoundedLaplace`].
pub fn bounded_laplace(
    value: f64,
    params: &PrivacyParams,
    rng: &mut RandomSource,
) -> Result<f64, MechanismError> {
    BoundedLaplace::new().sample(value, params, rng)
}

/// Warner's randomized response: with probability `bias` answer truthfully,
/// otherwise answer with a fair coin.
pub fn randomized_response(
    truth: bool,
    bias: f64,
    rng: &mut RandomSource,
) -> Result<bool, MechanismError> {
    if !(0.0..=1.0).contains(&bias) {
        return Err(MechanismError::InvalidParams(format!(
            "bias must lie in [0, 1], got {bias}"
        )));
    }
    if rng.uniform_open() <= bias {
        Ok(truth)
    } else {
        Ok(rng.uniform_open() <= 0.5)
    }
}

/// First-coin bias `p` giving `epsilon`-LDP: `p = (e^eps - 1) / (e^eps + 1)`.
pub fn rr_bias_for_epsilon(epsilon: f64) -> Result<f64, MechanismError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(MechanismError::InvalidParams(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    // (e^x - 1)/(e^x + 1) == tanh(x/2), better conditioned near 0
    Ok((epsilon / 2.0).tanh())
}

/// Probability that randomized response reports the truth for bias `p`.
pub fn rr_truth_probability(bias: f64) -> f64 {
    bias + (1.0 - bias) / 2.0
}

/// `ln(q / (1 - q))` for truthful-output probability `q`.
pub fn epsilon_for_truth_probability(q: f64) -> f64 {
    q.ln() - (-q).ln_1p()
}

/// Inverse of [`rr_bias_for_epsilon`]: `ln((1 + p) / (1 - p))`.
pub fn epsilon_for_bias(bias: f64) -> f64 {
    bias.ln_1p() - (-bias).ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetEntry {
    pub attribute: String,
    pub epsilon: f64,
}

/// Per-session record of epsilons spent; total is the plain sum.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    entries: Vec<BudgetEntry>,
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, attribute: impl Into<String>, epsilon: f64) {
        self.entries.push(BudgetEntry {
            attribute: attribute.into(),
            epsilon,
        });
    }

    pub fn entries(&self) -> &[BudgetEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn epsilon_of(&self, attribute: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.attribute == attribute)
            .map(|e| e.epsilon)
    }

    pub fn total(&self) -> f64 {
        budget_total(self)
    }
}

pub fn budget_total(ledger: &BudgetLedger) -> f64 {
    ledger.entries.iter().fold(0.0, |acc, e| acc + e.epsilon)
}

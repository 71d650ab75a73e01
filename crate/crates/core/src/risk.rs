//! Empirical risks (plain, importance-weighted, doubly robust) under the
//! source sample and population risks under the target law.
//!
//! The doubly robust empirical risk is computed exactly as the two-sum
//! expression
//!
//! (1/n_P) sum_i rho(x_i) [(y_i - f(x_i))^2 - (f0(x_i) - f(x_i))^2]
//!   + (1/n_Q) sum_j (f0(x_j) - f(x_j))^2,
//!
//! with no variance-reduction reorderings. The first sum can outweigh the
//! second, so the value may be negative; callers must not assume
//! nonnegativity.
//!
//! Population quantities use closed forms whenever the predictor is
//! linear with the identity link and its range stays inside [-1, 1] on
//! the truncation ball; otherwise they fall back to Monte Carlo and
//! report the standard error alongside the point value.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::pilots::{RatioEstimate, RegressionEstimate};
use crate::rng::derive_rng;
use crate::scenario::{LawSide, Link, NoiseModel, PairedSample, ShiftScenario};
use crate::Result;

type EvalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

enum PredictorKind {
    LinearIdentity { theta: Vec<f64> },
    General { eval: EvalFn },
}

/// A candidate regression function with outputs clamped to [-1, 1].
#[derive(Clone)]
pub struct Predictor {
    kind: Arc<PredictorKind>,
    description: String,
}

impl std::fmt::Debug for Predictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Predictor")
            .field("description", &self.description)
            .finish()
    }
}

impl Predictor {
    /// x -> theta' x, clamped to [-1, 1]. When |theta| times the
    /// truncation radius is at most 1 the clamp never fires and
    /// population risks admit closed forms.
    pub fn linear_identity(theta: Vec<f64>, description: impl Into<String>) -> Self {
        Self {
            kind: Arc::new(PredictorKind::LinearIdentity { theta }),
            description: description.into(),
        }
    }

    /// Arbitrary predictor; output clamped to [-1, 1].
    pub fn from_fn(
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        description: impl Into<String>,
    ) -> Self {
        Self {
            kind: Arc::new(PredictorKind::General { eval: Arc::new(f) }),
            description: description.into(),
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let raw = match self.kind.as_ref() {
            PredictorKind::LinearIdentity { theta } => {
                theta.iter().zip(x).map(|(t, v)| t * v).sum()
            }
            PredictorKind::General { eval } => eval(x),
        };
        raw.clamp(-1.0, 1.0)
    }

    /// The coefficient vector when this is a linear-identity predictor.
    pub fn theta(&self) -> Option<&[f64]> {
        match self.kind.as_ref() {
            PredictorKind::LinearIdentity { theta } => Some(theta),
            PredictorKind::General { .. } => None,
        }
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

/// Mean squared error over the labeled source pairs.
pub fn erm_empirical_risk(sample: &PairedSample, f: &Predictor) -> f64 {
    debug_assert!(!sample.source_x.is_empty());
    sample
        .source_x
        .iter()
        .zip(&sample.source_y)
        .map(|(x, y)| {
            let d = y - f.evaluate(x);
            d * d
        })
        .sum::<f64>()
        / sample.n_source() as f64
}

/// Ratio-weighted mean squared error over the labeled source pairs.
pub fn iw_empirical_risk(sample: &PairedSample, rho: &RatioEstimate, f: &Predictor) -> f64 {
    debug_assert!(!sample.source_x.is_empty());
    sample
        .source_x
        .iter()
        .zip(&sample.source_y)
        .map(|(x, y)| {
            let d = y - f.evaluate(x);
            rho.evaluate(x) * d * d
        })
        .sum::<f64>()
        / sample.n_source() as f64
}

/// Doubly robust empirical risk; see the module docs for the exact
/// expression. May be negative.
pub fn dr_empirical_risk(
    sample: &PairedSample,
    rho: &RatioEstimate,
    f0: &RegressionEstimate,
    f: &Predictor,
) -> f64 {
    debug_assert!(!sample.source_x.is_empty());
    debug_assert!(!sample.target_x.is_empty());
    let source_term = sample
        .source_x
        .iter()
        .zip(&sample.source_y)
        .map(|(x, y)| {
            let fv = f.evaluate(x);
            let dy = y - fv;
            let d0 = f0.evaluate(x) - fv;
            rho.evaluate(x) * (dy * dy - d0 * d0)
        })
        .sum::<f64>()
        / sample.n_source() as f64;
    let target_term = sample
        .target_x
        .iter()
        .map(|x| {
            let d0 = f0.evaluate(x) - f.evaluate(x);
            d0 * d0
        })
        .sum::<f64>()
        / sample.n_target() as f64;
    source_term + target_term
}

/// A population risk value, with the Monte Carlo standard error when the
/// value was estimated rather than computed in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskValue {
    pub value: f64,
    pub std_error: Option<f64>,
}

impl RiskValue {
    fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: None,
        }
    }
}

/// Monte Carlo settings for population risk evaluation.
#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub draws: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            draws: 100_000,
            seed: 0,
        }
    }
}

pub(crate) fn quadratic_form(delta: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (m * delta).dot(delta)
}

/// Whether the closed-form path applies: linear predictor, identity
/// link, and a range certificate keeping the clamp inactive on the ball.
fn closed_form_theta(sc: &ShiftScenario, f: &Predictor) -> Option<DVector<f64>> {
    if sc.link() != Link::Identity {
        return None;
    }
    let theta = f.theta()?;
    let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm * sc.trunc_radius() <= 1.0 {
        Some(DVector::from_column_slice(theta))
    } else {
        None
    }
}

fn mean_and_se(values: &[f64]) -> RiskValue {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    RiskValue {
        value: mean,
        std_error: Some((var / n).sqrt()),
    }
}

/// E[(Y - f(X))^2] with (X, Y) drawn under the target law.
pub fn population_q_risk(sc: &ShiftScenario, f: &Predictor, mc: &McConfig) -> Result<RiskValue> {
    if let Some(theta) = closed_form_theta(sc, f) {
        let m_q = sc.target_second_moment();
        let delta = &theta - sc.theta_star();
        let noise = match sc.noise() {
            NoiseModel::BernoulliSign => 1.0 - quadratic_form(sc.theta_star(), m_q),
            NoiseModel::UniformAdditive { half_width } => half_width * half_width / 3.0,
        };
        return Ok(RiskValue::exact(quadratic_form(&delta, m_q) + noise));
    }
    let mut rng = derive_rng(mc.seed, &format!("{}/population-risk", sc.seed_domain()), &[]);
    let xs = sc.sample_x(LawSide::Target, mc.draws, &mut rng)?;
    let sq: Vec<f64> = xs
        .iter()
        .map(|x| {
            let y = sc.draw_label(x, &mut rng);
            let d = y - f.evaluate(x);
            d * d
        })
        .collect();
    Ok(mean_and_se(&sq))
}

/// E[(f(X) - f*(X))^2] with X drawn under the target law; zero exactly
/// when f matches the Bayes function on the target support.
pub fn excess_q_risk(sc: &ShiftScenario, f: &Predictor, mc: &McConfig) -> Result<RiskValue> {
    if let Some(theta) = closed_form_theta(sc, f) {
        let delta = &theta - sc.theta_star();
        return Ok(RiskValue::exact(quadratic_form(
            &delta,
            sc.target_second_moment(),
        )));
    }
    let mut rng = derive_rng(mc.seed, &format!("{}/excess-risk", sc.seed_domain()), &[]);
    let xs = sc.sample_x(LawSide::Target, mc.draws, &mut rng)?;
    let sq: Vec<f64> = xs
        .iter()
        .map(|x| {
            let d = f.evaluate(x) - sc.oracle_bayes(x);
            d * d
        })
        .collect();
    let mut out = mean_and_se(&sq);
    out.value = out.value.max(0.0);
    Ok(out)
}

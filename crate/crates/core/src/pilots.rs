//! Pilot estimators for the density ratio and the regression function.
//!
//! Both pilots are plain function objects after fitting: immutable,
//! cheaply clonable, and safe to evaluate concurrently. Clipping is part
//! of the estimate itself; every ratio evaluation lands in [0, c_dr] and
//! every regression evaluation in [-c_rf, c_rf], no matter how the
//! underlying fit misbehaves. Oracle pilots wrap the scenario's true
//! density ratio and Bayes function, and [`corrupted`](RatioEstimate::corrupted)
//! adds a controlled perturbation with unit L2(P) norm, which is how the
//! harness realizes pilot-error grids.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg::sym_solve;
use crate::rng::derive_rng;
use crate::scenario::{LawSide, PairedSample, ShiftScenario};
use crate::{Error, Result};

type EvalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Density-ratio pilot; evaluations are clipped to [0, clip_max].
#[derive(Clone)]
pub struct RatioEstimate {
    raw: EvalFn,
    clip_max: f64,
    method: String,
}

impl std::fmt::Debug for RatioEstimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RatioEstimate")
            .field("method", &self.method)
            .field("clip_max", &self.clip_max)
            .finish()
    }
}

/// Regression pilot; evaluations are clipped to [-clip_abs, clip_abs].
#[derive(Clone)]
pub struct RegressionEstimate {
    raw: EvalFn,
    clip_abs: f64,
    method: String,
}

impl std::fmt::Debug for RegressionEstimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegressionEstimate")
            .field("method", &self.method)
            .field("clip_abs", &self.clip_abs)
            .finish()
    }
}

fn check_clip(name: &str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::InvalidParam {
            name: name.into(),
            reason: format!("clip level must be a positive real, got {value}"),
        })
    }
}

impl RatioEstimate {
    pub fn from_fn(
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        clip_max: f64,
        method: impl Into<String>,
    ) -> Result<Self> {
        Ok(Self {
            raw: Arc::new(f),
            clip_max: check_clip("c_dr", clip_max)?,
            method: method.into(),
        })
    }

    /// The constant pilot x -> value (clipped).
    pub fn constant(value: f64, clip_max: f64) -> Result<Self> {
        Self::from_fn(move |_| value, clip_max, format!("constant({value})"))
    }

    /// The true density ratio of the scenario, clipped to [0, clip_max].
    pub fn oracle(sc: &Arc<ShiftScenario>, clip_max: f64) -> Result<Self> {
        let sc = Arc::clone(sc);
        Self::from_fn(
            move |x| sc.density_ratio_formula(x),
            clip_max,
            "oracle",
        )
    }

    /// Clipped evaluation.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        (self.raw)(x).clamp(0.0, self.clip_max)
    }

    pub fn clip_max(&self) -> f64 {
        self.clip_max
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    /// Shift the pilot by eps times a unit-L2(P) direction, keeping the
    /// clip level. eps = 0 returns a pointwise-identical pilot.
    pub fn corrupted(
        &self,
        eps: f64,
        direction: &CorruptionDirection,
        sc: &ShiftScenario,
    ) -> Result<Self> {
        if eps == 0.0 {
            return Ok(self.clone());
        }
        let g = direction.realize(sc)?;
        let base = self.clone();
        Ok(Self {
            raw: Arc::new(move |x: &[f64]| base.evaluate(x) + eps * g(x)),
            clip_max: self.clip_max,
            method: format!("corrupted({}, eps={eps}, dir={direction})", self.method),
        })
    }
}

impl RegressionEstimate {
    pub fn from_fn(
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        clip_abs: f64,
        method: impl Into<String>,
    ) -> Result<Self> {
        Ok(Self {
            raw: Arc::new(f),
            clip_abs: check_clip("c_rf", clip_abs)?,
            method: method.into(),
        })
    }

    pub fn constant(value: f64, clip_abs: f64) -> Result<Self> {
        Self::from_fn(move |_| value, clip_abs, format!("constant({value})"))
    }

    /// The true Bayes regression function, clipped to [-clip_abs, clip_abs].
    pub fn oracle(sc: &Arc<ShiftScenario>, clip_abs: f64) -> Result<Self> {
        let sc = Arc::clone(sc);
        Self::from_fn(move |x| sc.oracle_bayes(x), clip_abs, "oracle")
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        (self.raw)(x).clamp(-self.clip_abs, self.clip_abs)
    }

    pub fn clip_abs(&self) -> f64 {
        self.clip_abs
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn corrupted(
        &self,
        eps: f64,
        direction: &CorruptionDirection,
        sc: &ShiftScenario,
    ) -> Result<Self> {
        if eps == 0.0 {
            return Ok(self.clone());
        }
        let g = direction.realize(sc)?;
        let base = self.clone();
        Ok(Self {
            raw: Arc::new(move |x: &[f64]| base.evaluate(x) + eps * g(x)),
            clip_abs: self.clip_abs,
            method: format!("corrupted({}, eps={eps}, dir={direction})", self.method),
        })
    }
}

/// Perturbation directions with unit L2(P) norm, used to corrupt oracle
/// pilots by a prescribed amount.
#[derive(Debug, Clone, PartialEq)]
pub enum CorruptionDirection {
    /// g(x) = 1. Exactly unit norm under any law.
    Constant,
    /// g(x) = x_i / sqrt(E_P[x_i^2]), normalized with the exact truncated
    /// second moment.
    Coordinate(usize),
    /// g(x) = 1{|x| >= r_q} / sqrt(P(|x| >= r_q)) with r_q the q-quantile
    /// of |X| under the source law, both estimated once from a fixed-seed
    /// Monte Carlo pass. Models pilots that go wrong in the source's
    /// low-density tail.
    RadialTail { quantile: f64 },
}

impl std::fmt::Display for CorruptionDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorruptionDirection::Constant => write!(f, "constant"),
            CorruptionDirection::Coordinate(i) => write!(f, "coordinate:{i}"),
            CorruptionDirection::RadialTail { quantile } => {
                write!(f, "radial-tail:{quantile}")
            }
        }
    }
}

const DIRECTION_MC_DRAWS: usize = 20_000;

impl CorruptionDirection {
    /// Build the direction as a concrete function for this scenario.
    fn realize(&self, sc: &ShiftScenario) -> Result<EvalFn> {
        match self {
            CorruptionDirection::Constant => Ok(Arc::new(|_: &[f64]| 1.0)),
            CorruptionDirection::Coordinate(i) => {
                let i = *i;
                if i >= sc.dim() {
                    return Err(Error::InvalidParam {
                        name: "corruption direction".into(),
                        reason: format!(
                            "coordinate {i} out of range for dimension {}",
                            sc.dim()
                        ),
                    });
                }
                let norm = sc.source_second_moment()[(i, i)].sqrt();
                Ok(Arc::new(move |x: &[f64]| x[i] / norm))
            }
            CorruptionDirection::RadialTail { quantile } => {
                let q = *quantile;
                if !(0.0 < q && q < 1.0) {
                    return Err(Error::InvalidParam {
                        name: "corruption direction".into(),
                        reason: format!("radial-tail quantile must be in (0,1), got {q}"),
                    });
                }
                let mut rng = derive_rng(0, "corrupt-direction", &[sc.dim() as u64]);
                let draws = sc.sample_x(LawSide::Source, DIRECTION_MC_DRAWS, &mut rng)?;
                let mut norms: Vec<f64> = draws
                    .iter()
                    .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .collect();
                norms.sort_by(f64::total_cmp);
                let ix = ((norms.len() as f64 - 1.0) * q).round() as usize;
                let threshold = norms[ix];
                let tail = norms.iter().filter(|&&n| n >= threshold).count();
                let p_tail = tail as f64 / norms.len() as f64;
                let scale = 1.0 / p_tail.sqrt();
                Ok(Arc::new(move |x: &[f64]| {
                    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n >= threshold {
                        scale
                    } else {
                        0.0
                    }
                }))
            }
        }
    }
}

/// Root-mean-square error of a pilot against its oracle over draws from
/// the source law. Generic over the two pilot kinds.
pub trait Pilot {
    fn pilot_value(&self, x: &[f64]) -> f64;
    fn oracle_value(sc: &ShiftScenario, x: &[f64]) -> f64;
}

impl Pilot for RatioEstimate {
    fn pilot_value(&self, x: &[f64]) -> f64 {
        self.evaluate(x)
    }
    fn oracle_value(sc: &ShiftScenario, x: &[f64]) -> f64 {
        sc.density_ratio_formula(x)
    }
}

impl Pilot for RegressionEstimate {
    fn pilot_value(&self, x: &[f64]) -> f64 {
        self.evaluate(x)
    }
    fn oracle_value(sc: &ShiftScenario, x: &[f64]) -> f64 {
        sc.oracle_bayes(x)
    }
}

/// Monte Carlo estimate of the L2(P_X) distance between a pilot and the
/// truth, sqrt of mean squared difference over mc_n source draws.
pub fn pilot_l2_error<P: Pilot>(
    est: &P,
    sc: &ShiftScenario,
    mc_n: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = derive_rng(seed, &format!("{}/pilot-l2", sc.seed_domain()), &[]);
    let xs = sc.sample_x(LawSide::Source, mc_n, &mut rng)?;
    let mse = xs
        .iter()
        .map(|x| {
            let d = est.pilot_value(x) - P::oracle_value(sc, x);
            d * d
        })
        .sum::<f64>()
        / mc_n as f64;
    Ok(mse.sqrt())
}

/// Basis choice for uLSIF.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UlsifBasis {
    /// Gaussian RBF kernels centered on target points.
    GaussianRbf,
    /// The single constant function 1; degenerate basis used in tests.
    ConstantOnly,
}

/// Configuration for [`fit_ulsif`].
#[derive(Debug, Clone)]
pub struct UlsifConfig {
    /// Ridge parameter of the least-squares system.
    pub lambda: f64,
    /// Upper bound on the number of RBF centers.
    pub max_centers: usize,
    pub basis: UlsifBasis,
    /// Kernel bandwidth; `None` selects the median heuristic over pooled
    /// covariates.
    pub bandwidth: Option<f64>,
    /// Seed for center selection and the bandwidth subsample.
    pub seed: u64,
}

impl Default for UlsifConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            max_centers: 100,
            basis: UlsifBasis::GaussianRbf,
            bandwidth: None,
            seed: 0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median_heuristic_bandwidth(sample: &PairedSample, seed: u64) -> Result<f64> {
    let pool: Vec<&Vec<f64>> = sample.source_x.iter().chain(&sample.target_x).collect();
    let mut ix: Vec<usize> = (0..pool.len()).collect();
    let mut rng = derive_rng(seed, "ulsif-bandwidth", &[]);
    for i in (1..ix.len()).rev() {
        let j = rng.gen_range(0..=i);
        ix.swap(i, j);
    }
    ix.truncate(400);
    let mut dists = Vec::with_capacity(ix.len() * (ix.len() - 1) / 2);
    for (a, &i) in ix.iter().enumerate() {
        for &j in &ix[a + 1..] {
            let d = sq_dist(pool[i], pool[j]).sqrt();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return Err(Error::InvalidParam {
            name: "ulsif bandwidth".into(),
            reason: "all pooled covariates are identical; median heuristic undefined".into(),
        });
    }
    dists.sort_by(f64::total_cmp);
    Ok(dists[dists.len() / 2])
}

/// Fit a least-squares density-ratio model: minimize the quadratic
/// surrogate of the L2 distance between alpha' k(x) and the true ratio,
/// which reduces to solving (H + lambda I) alpha = h with H the source
/// Gram mean of the basis and h the target mean.
pub fn fit_ulsif(
    sample: &PairedSample,
    cfg: &UlsifConfig,
    clip_max: f64,
) -> Result<RatioEstimate> {
    if sample.source_x.is_empty() {
        return Err(Error::EmptySample {
            which: "source".into(),
        });
    }
    if sample.target_x.is_empty() {
        return Err(Error::EmptySample {
            which: "target".into(),
        });
    }
    if !(cfg.lambda >= 0.0) {
        return Err(Error::InvalidParam {
            name: "pilot.ratio.lambda".into(),
            reason: format!("must be nonnegative, got {}", cfg.lambda),
        });
    }

    let (centers, bandwidth): (Vec<Vec<f64>>, f64) = match cfg.basis {
        UlsifBasis::ConstantOnly => (Vec::new(), 1.0),
        UlsifBasis::GaussianRbf => {
            let bw = match cfg.bandwidth {
                Some(b) if b > 0.0 => b,
                Some(b) => {
                    return Err(Error::InvalidParam {
                        name: "pilot.ratio.bandwidth".into(),
                        reason: format!("must be positive, got {b}"),
                    })
                }
                None => median_heuristic_bandwidth(sample, cfg.seed)?,
            };
            let mut ix: Vec<usize> = (0..sample.target_x.len()).collect();
            let mut rng = derive_rng(cfg.seed, "ulsif-centers", &[]);
            for i in (1..ix.len()).rev() {
                let j = rng.gen_range(0..=i);
                ix.swap(i, j);
            }
            ix.truncate(cfg.max_centers.min(sample.target_x.len()));
            (
                ix.iter().map(|&i| sample.target_x[i].clone()).collect(),
                bw,
            )
        }
    };

    let basis = move |x: &[f64], out: &mut DVector<f64>, centers: &[Vec<f64>], bw: f64| {
        if centers.is_empty() {
            out[0] = 1.0;
        } else {
            for (l, c) in centers.iter().enumerate() {
                out[l] = (-sq_dist(x, c) / (2.0 * bw * bw)).exp();
            }
        }
    };

    let b = if centers.is_empty() { 1 } else { centers.len() };
    let mut gram = DMatrix::zeros(b, b);
    let mut phi = DVector::zeros(b);
    for x in &sample.source_x {
        basis(x, &mut phi, &centers, bandwidth);
        gram.syger(1.0, &phi, &phi, 1.0);
    }
    gram /= sample.source_x.len() as f64;
    for i in 0..b {
        for j in (i + 1)..b {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let mut target_mean = DVector::zeros(b);
    for x in &sample.target_x {
        basis(x, &mut phi, &centers, bandwidth);
        target_mean += &phi;
    }
    target_mean /= sample.target_x.len() as f64;

    let system = &gram + DMatrix::identity(b, b) * cfg.lambda;
    let alpha = sym_solve(
        &system,
        &target_mean,
        "uLSIF normal equations",
        "increase pilot.ratio.lambda",
    )?;
    let residual = (&system * &alpha - &target_mean).norm();
    if residual > 1e-8 * target_mean.norm().max(1.0) {
        return Err(Error::SingularSystem {
            context: "uLSIF normal equations".into(),
            hint: format!("solve residual {residual:.2e} exceeds tolerance"),
        });
    }

    let alpha: Vec<f64> = alpha.iter().cloned().collect();
    RatioEstimate::from_fn(
        move |x: &[f64]| {
            if centers.is_empty() {
                alpha[0]
            } else {
                centers
                    .iter()
                    .zip(&alpha)
                    .map(|(c, a)| a * (-sq_dist(x, c) / (2.0 * bandwidth * bandwidth)).exp())
                    .sum()
            }
        },
        clip_max,
        "ulsif",
    )
}

/// Configuration for [`fit_logistic_ratio`].
#[derive(Debug, Clone)]
pub struct LogisticConfig {
    /// L2 penalty on all coefficients.
    pub l2_penalty: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Restrict the discriminator to the intercept; diagnostic mode.
    pub intercept_only: bool,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2_penalty: 1e-4,
            max_iters: 200,
            grad_tol: 1e-8,
            intercept_only: false,
        }
    }
}

/// Fit a density ratio through a regularized logistic discriminator of
/// target (label 1) against source (label 0) and convert its odds:
/// rho(x) = (n_P / n_Q) * p(x) / (1 - p(x)), clipped.
pub fn fit_logistic_ratio(
    sample: &PairedSample,
    cfg: &LogisticConfig,
    clip_max: f64,
) -> Result<RatioEstimate> {
    if sample.source_x.is_empty() {
        return Err(Error::EmptySample {
            which: "source".into(),
        });
    }
    if sample.target_x.is_empty() {
        return Err(Error::EmptySample {
            which: "target".into(),
        });
    }
    let dim = if cfg.intercept_only { 0 } else { sample.dim };
    let p_feat = dim + 1;
    let n = sample.source_x.len() + sample.target_x.len();

    let fill = |x: &[f64], out: &mut DVector<f64>| {
        out[0] = 1.0;
        for j in 0..dim {
            out[j + 1] = x[j];
        }
    };

    let rows: Vec<(&Vec<f64>, f64)> = sample
        .source_x
        .iter()
        .map(|x| (x, 0.0))
        .chain(sample.target_x.iter().map(|x| (x, 1.0)))
        .collect();

    let objective = |beta: &DVector<f64>| -> f64 {
        let mut phi = DVector::zeros(p_feat);
        let mut nll = 0.0;
        for (x, t) in &rows {
            fill(x, &mut phi);
            let s = beta.dot(&phi);
            // ln(1 + e^s) - t s, computed stably.
            nll += if s > 0.0 { s + (-s).exp().ln_1p() } else { s.exp().ln_1p() } - t * s;
        }
        nll / n as f64 + cfg.l2_penalty * beta.norm_squared()
    };

    let mut beta = DVector::zeros(p_feat);
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    for iter in 0..cfg.max_iters {
        iterations = iter + 1;
        let mut grad = DVector::zeros(p_feat);
        let mut hess = DMatrix::zeros(p_feat, p_feat);
        let mut phi = DVector::zeros(p_feat);
        for (x, t) in &rows {
            fill(x, &mut phi);
            let s = beta.dot(&phi);
            let p = 1.0 / (1.0 + (-s).exp());
            grad.axpy(p - t, &phi, 1.0);
            hess.syger((p * (1.0 - p)).max(1e-12), &phi, &phi, 1.0);
        }
        grad /= n as f64;
        grad.axpy(2.0 * cfg.l2_penalty, &beta, 1.0);
        hess /= n as f64;
        for i in 0..p_feat {
            for j in (i + 1)..p_feat {
                hess[(i, j)] = hess[(j, i)];
            }
            hess[(i, i)] += 2.0 * cfg.l2_penalty + 1e-12;
        }
        grad_norm = grad.norm();
        if grad_norm <= cfg.grad_tol {
            converged = true;
            break;
        }
        let step = sym_solve(
            &hess,
            &grad,
            "logistic Newton system",
            "increase pilot.ratio.l2_penalty",
        )?;
        let f0 = objective(&beta);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &beta - &step * t;
            if objective(&cand) < f0 {
                beta = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !converged && grad_norm > cfg.grad_tol {
        return Err(Error::NonConvergence {
            iterations,
            grad_norm,
        });
    }

    let prior = sample.source_x.len() as f64 / sample.target_x.len() as f64;
    let beta: Vec<f64> = beta.iter().cloned().collect();
    RatioEstimate::from_fn(
        move |x: &[f64]| {
            let mut s = beta[0];
            for j in 0..dim {
                s += beta[j + 1] * x[j];
            }
            prior * s.exp()
        },
        clip_max,
        "logistic",
    )
}

/// Feature map for the ridge regression pilot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionFeatures {
    /// phi(x) = x.
    Identity,
    /// phi(x) = (1, x).
    Affine,
}

/// Configuration for [`fit_pilot_regression`].
#[derive(Debug, Clone)]
pub struct RidgeConfig {
    pub lambda: f64,
    pub features: RegressionFeatures,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            features: RegressionFeatures::Identity,
        }
    }
}

/// Ridge regression of labels on features over the source sample.
pub fn fit_pilot_regression(
    sample: &PairedSample,
    cfg: &RidgeConfig,
    clip_abs: f64,
) -> Result<RegressionEstimate> {
    if sample.source_x.is_empty() {
        return Err(Error::EmptySample {
            which: "source".into(),
        });
    }
    if !(cfg.lambda >= 0.0) {
        return Err(Error::InvalidParam {
            name: "pilot.reg.lambda".into(),
            reason: format!("must be nonnegative, got {}", cfg.lambda),
        });
    }
    let dim = sample.dim;
    let offset = match cfg.features {
        RegressionFeatures::Identity => 0,
        RegressionFeatures::Affine => 1,
    };
    let p_feat = dim + offset;
    let n = sample.source_x.len() as f64;
    let mut gram = DMatrix::zeros(p_feat, p_feat);
    let mut moment = DVector::zeros(p_feat);
    let mut phi = DVector::zeros(p_feat);
    for (x, y) in sample.source_x.iter().zip(&sample.source_y) {
        if offset == 1 {
            phi[0] = 1.0;
        }
        for j in 0..dim {
            phi[j + offset] = x[j];
        }
        gram.syger(1.0, &phi, &phi, 1.0);
        moment.axpy(*y, &phi, 1.0);
    }
    gram /= n;
    moment /= n;
    for i in 0..p_feat {
        for j in (i + 1)..p_feat {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let system = &gram + DMatrix::identity(p_feat, p_feat) * cfg.lambda;
    let beta = sym_solve(
        &system,
        &moment,
        "ridge normal equations",
        "increase pilot.reg.lambda or add source data",
    )?;
    let beta: Vec<f64> = beta.iter().cloned().collect();
    let features = cfg.features;
    RegressionEstimate::from_fn(
        move |x: &[f64]| {
            let offset = match features {
                RegressionFeatures::Identity => 0,
                RegressionFeatures::Affine => 1,
            };
            let mut v = if offset == 1 { beta[0] } else { 0.0 };
            for j in 0..x.len() {
                v += beta[j + offset] * x[j];
            }
            v
        },
        clip_abs,
        "ridge",
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{isotropic_scenario, Link, NoiseModel};

    fn scenario_1d(target_var: f64) -> Arc<ShiftScenario> {
        Arc::new(
            isotropic_scenario(
                1,
                vec![0.0],
                1.0,
                vec![0.0],
                target_var,
                vec![0.2],
                Link::Identity,
                NoiseModel::BernoulliSign,
                3.0,
                "pilot-test",
            )
            .unwrap(),
        )
    }

    fn scenario_2d_shift() -> Arc<ShiftScenario> {
        Arc::new(
            isotropic_scenario(
                2,
                vec![0.0, 0.0],
                1.0,
                vec![0.5, 0.0],
                1.0,
                vec![0.1, 0.1],
                Link::Identity,
                NoiseModel::BernoulliSign,
                3.5,
                "pilot-test-2d",
            )
            .unwrap(),
        )
    }

    #[test]
    fn ulsif_constant_basis_gives_ridged_constant() {
        let sc = scenario_1d(1.0);
        let data = sc.sample_dataset(50, 50, 1).unwrap();
        let cfg = UlsifConfig {
            lambda: 0.1,
            basis: UlsifBasis::ConstantOnly,
            ..UlsifConfig::default()
        };
        let est = fit_ulsif(&data, &cfg, 30.0).unwrap();
        for x in [[-1.0], [0.0], [2.0]] {
            assert!((est.evaluate(&x) - 1.0 / 1.1).abs() < 1e-12);
        }
    }

    #[test]
    fn ulsif_recovers_flat_ratio_without_shift() {
        let sc = scenario_1d(1.0);
        let data = sc.sample_dataset(2000, 2000, 3).unwrap();
        let est = fit_ulsif(&data, &UlsifConfig::default(), 30.0).unwrap();
        let held_out = sc.sample_dataset(1, 500, 99).unwrap();
        let inside = held_out
            .target_x
            .iter()
            .filter(|x| {
                let r = est.evaluate(x);
                (0.5..=2.0).contains(&r)
            })
            .count();
        assert!(
            inside as f64 >= 0.9 * 500.0,
            "only {inside}/500 held-out ratios in [0.5, 2]"
        );
    }

    #[test]
    fn ulsif_tracks_true_ratio_under_shift() {
        let sc = scenario_2d_shift();
        let data = sc.sample_dataset(4000, 4000, 5).unwrap();
        let est = fit_ulsif(&data, &UlsifConfig::default(), 30.0).unwrap();
        let err = pilot_l2_error(&est, &sc, 20_000, 7).unwrap();
        assert!(err < 0.35, "uLSIF L2 error {err} too large");
    }

    #[test]
    fn ulsif_zero_lambda_on_degenerate_basis_errors() {
        let sc = scenario_1d(1.0);
        let mut data = sc.sample_dataset(30, 30, 1).unwrap();
        // Duplicate target points so two RBF centers coincide exactly.
        let first = data.target_x[0].clone();
        for x in data.target_x.iter_mut() {
            *x = first.clone();
        }
        let cfg = UlsifConfig {
            lambda: 0.0,
            ..UlsifConfig::default()
        };
        let err = fit_ulsif(&data, &cfg, 30.0).unwrap_err();
        assert!(err.to_string().contains("uLSIF"), "{err}");
    }

    #[test]
    fn logistic_balanced_intercept_only_is_flat() {
        let sc = scenario_1d(4.0);
        let data = sc.sample_dataset(800, 800, 2).unwrap();
        let cfg = LogisticConfig {
            intercept_only: true,
            ..LogisticConfig::default()
        };
        let est = fit_logistic_ratio(&data, &cfg, 30.0).unwrap();
        assert!((est.evaluate(&[0.3]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn logistic_flat_ratio_without_shift() {
        let sc = scenario_1d(1.0);
        let data = sc.sample_dataset(4000, 4000, 4).unwrap();
        let est = fit_logistic_ratio(&data, &LogisticConfig::default(), 30.0).unwrap();
        let held_out = sc.sample_dataset(1, 501, 98).unwrap();
        let mut vals: Vec<f64> = held_out
            .target_x
            .iter()
            .map(|x| est.evaluate(x))
            .collect();
        vals.sort_by(f64::total_cmp);
        let median = vals[vals.len() / 2];
        assert!(
            (0.8..=1.25).contains(&median),
            "median held-out ratio {median}"
        );
    }

    #[test]
    fn logistic_separated_supports_saturate_at_ceiling() {
        let data = PairedSample {
            dim: 1,
            source_x: vec![vec![-2.0], vec![-1.5], vec![-1.0]],
            source_y: vec![0.0, 0.0, 0.0],
            target_x: vec![vec![1.0], vec![1.5], vec![2.0]],
        };
        let est = fit_logistic_ratio(&data, &LogisticConfig::default(), 30.0).unwrap();
        for x in &data.target_x {
            assert_eq!(est.evaluate(x), 30.0);
        }
    }

    #[test]
    fn logistic_iteration_cap_reports_non_convergence() {
        let sc = scenario_2d_shift();
        let data = sc.sample_dataset(200, 200, 11).unwrap();
        let cfg = LogisticConfig {
            max_iters: 1,
            grad_tol: 1e-14,
            ..LogisticConfig::default()
        };
        let err = fit_logistic_ratio(&data, &cfg, 30.0).unwrap_err();
        match err {
            Error::NonConvergence {
                iterations,
                grad_norm,
            } => {
                assert_eq!(iterations, 1);
                assert!(grad_norm > 1e-14);
            }
            other => panic!("expected non-convergence, got {other}"),
        }
    }

    #[test]
    fn ridge_interpolates_two_points_without_penalty() {
        let data = PairedSample {
            dim: 1,
            source_x: vec![vec![1.0], vec![-1.0]],
            source_y: vec![1.0, -1.0],
            target_x: vec![vec![0.0]],
        };
        let cfg = RidgeConfig {
            lambda: 0.0,
            features: RegressionFeatures::Identity,
        };
        let est = fit_pilot_regression(&data, &cfg, 1.0).unwrap();
        for x in [-0.5_f64, 0.25, 0.9] {
            assert!((est.evaluate(&[x]) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn ridge_underdetermined_without_penalty_errors() {
        let data = PairedSample {
            dim: 2,
            source_x: vec![vec![1.0, 0.5]],
            source_y: vec![0.5],
            target_x: vec![vec![0.0, 0.0]],
        };
        let cfg = RidgeConfig {
            lambda: 0.0,
            features: RegressionFeatures::Identity,
        };
        let err = fit_pilot_regression(&data, &cfg, 1.0).unwrap_err();
        assert!(err.to_string().contains("ridge normal equations"));
    }

    #[test]
    fn ridge_approaches_bayes_on_large_samples() {
        let sc = scenario_2d_shift();
        let data = sc.sample_dataset(20_000, 10, 6).unwrap();
        let est = fit_pilot_regression(&data, &RidgeConfig::default(), 1.0).unwrap();
        let err = pilot_l2_error(&est, &sc, 20_000, 8).unwrap();
        assert!(err < 0.05, "ridge pilot L2 error {err}");
    }

    #[test]
    fn oracle_pilots_have_zero_error() {
        let sc = scenario_1d(2.25);
        let ratio = RatioEstimate::oracle(&sc, 30.0).unwrap();
        let reg = RegressionEstimate::oracle(&sc, 1.0).unwrap();
        assert_eq!(pilot_l2_error(&ratio, &sc, 5000, 1).unwrap(), 0.0);
        assert_eq!(pilot_l2_error(&reg, &sc, 5000, 1).unwrap(), 0.0);
    }

    #[test]
    fn corruption_with_zero_eps_is_identity() {
        let sc = scenario_1d(2.25);
        let base = RatioEstimate::oracle(&sc, 30.0).unwrap();
        let same = base
            .corrupted(0.0, &CorruptionDirection::Constant, &sc)
            .unwrap();
        for x in [[-2.0], [0.1], [1.7]] {
            assert_eq!(base.evaluate(&x), same.evaluate(&x));
        }
    }

    #[test]
    fn constant_corruption_realizes_requested_l2_error() {
        let sc = scenario_1d(2.25);
        let base = RatioEstimate::oracle(&sc, 30.0).unwrap();
        let corrupted = base
            .corrupted(0.3, &CorruptionDirection::Constant, &sc)
            .unwrap();
        let realized = pilot_l2_error(&corrupted, &sc, 50_000, 2).unwrap();
        assert!(
            (realized - 0.3).abs() <= 0.02 * 0.3,
            "realized error {realized}"
        );
    }

    #[test]
    fn coordinate_and_tail_directions_have_unit_norm() {
        let sc = scenario_2d_shift();
        let base = RegressionEstimate::oracle(&sc, 2.0).unwrap();
        for dir in [
            CorruptionDirection::Coordinate(1),
            CorruptionDirection::RadialTail { quantile: 0.9 },
        ] {
            let corrupted = base.corrupted(0.25, &dir, &sc).unwrap();
            let realized = pilot_l2_error(&corrupted, &sc, 200_000, 3).unwrap();
            assert!(
                (realized - 0.25).abs() <= 0.02 * 0.25,
                "direction {dir}: realized {realized}"
            );
        }
    }

    #[test]
    fn clipping_is_always_active() {
        let sc = scenario_1d(2.25);
        let ratio = RatioEstimate::oracle(&sc, 1.5)
            .unwrap()
            .corrupted(100.0, &CorruptionDirection::Constant, &sc)
            .unwrap();
        let reg = RegressionEstimate::oracle(&sc, 1.0)
            .unwrap()
            .corrupted(-50.0, &CorruptionDirection::Constant, &sc)
            .unwrap();
        for x in [[-2.5], [0.0], [2.5]] {
            // The huge offsets saturate both clips exactly.
            assert_eq!(ratio.evaluate(&x), 1.5);
            assert_eq!(reg.evaluate(&x), -1.0);
        }
    }

    #[test]
    fn ulsif_error_shrinks_with_sample_size() {
        let sc = scenario_1d(2.25);
        let mut small = Vec::new();
        let mut large = Vec::new();
        for seed in 0..20 {
            for (n, out) in [(200, &mut small), (3200, &mut large)] {
                let data = sc.sample_dataset(n, n, 1000 + seed).unwrap();
                let cfg = UlsifConfig {
                    seed: 1000 + seed,
                    ..UlsifConfig::default()
                };
                let est = fit_ulsif(&data, &cfg, 30.0).unwrap();
                out.push(pilot_l2_error(&est, &sc, 4000, seed).unwrap());
            }
        }
        small.sort_by(f64::total_cmp);
        large.sort_by(f64::total_cmp);
        assert!(
            large[10] < small[10],
            "median error did not shrink: n=200 -> {}, n=3200 -> {}",
            small[10],
            large[10]
        );
    }

    #[test]
    fn invalid_clip_levels_rejected() {
        assert!(RatioEstimate::constant(1.0, 0.0).is_err());
        assert!(RegressionEstimate::constant(0.0, -1.0).is_err());
    }

    #[test]
    fn coordinate_direction_out_of_range_errors() {
        let sc = scenario_1d(2.25);
        let base = RatioEstimate::oracle(&sc, 30.0).unwrap();
        let err = base
            .corrupted(0.1, &CorruptionDirection::Coordinate(3), &sc)
            .unwrap_err();
        assert!(err.to_string().contains("coordinate 3"));
    }
}

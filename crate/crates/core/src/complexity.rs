//! Rademacher complexity estimation and the complexity-based excess-risk
//! bound formulas.
//!
//! The empirical Rademacher complexity of a class G at points x_1..x_n is
//! E_sigma sup_g |(1/n) sum_i sigma_i g(x_i)|, the expectation over
//! uniform sign vectors. Three class kinds are supported:
//!
//! - finite classes (inner supremum by enumeration, exact),
//! - linear balls {x -> w' phi(x) : |w|_2 <= r} (inner supremum by
//!   duality: r |(1/n) sum sigma_i phi(x_i)|_2, exact),
//! - Frobenius-norm-bounded neural networks with ReLU hidden layers and
//!   a bounded Lipschitz output link (inner supremum by multi-start
//!   projected gradient ascent, reported as a lower bound).
//!
//! The sign expectation is enumerated exactly for small n and otherwise
//! sampled. Estimates for a shifted class {g + o : g in G} attach the
//! offset o (for the centered class take o = -f_bayes); each estimator
//! folds the offset into the evaluated functions.
//!
//! Closed-form evaluators: the finite-class bound 2B sqrt(log(2M)/n),
//! the network-class bound, and the six-term structure-agnostic
//! excess-risk bound with its per-term breakdown.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::risk::Predictor;
use crate::rng::derive_rng;
use crate::scenario::{LawSide, Link, ShiftScenario};
use crate::{Error, Result};

/// Feature map for linear-ball classes.
pub type FeatureMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// The supported function-class structures.
#[derive(Clone)]
pub enum ClassKind {
    /// An explicit finite list of functions.
    Finite(Vec<Predictor>),
    /// {x -> w' phi(x) : |w|_2 <= radius}.
    LinearBall { feature_map: FeatureMap, radius: f64 },
    /// Depth-d networks x -> link(W_d relu(W_{d-1} ... relu(W_1 x)))
    /// with |W_j|_F <= frobenius_caps[j-1]; widths = [n_0, ..., n_d]
    /// with n_d = 1.
    NnFrobenius {
        widths: Vec<usize>,
        frobenius_caps: Vec<f64>,
        output_link: Link,
        input_radius: f64,
    },
}

impl std::fmt::Debug for ClassKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClassKind::Finite(members) => f
                .debug_struct("Finite")
                .field("size", &members.len())
                .finish(),
            ClassKind::LinearBall { radius, .. } => f
                .debug_struct("LinearBall")
                .field("radius", radius)
                .finish(),
            ClassKind::NnFrobenius {
                widths,
                frobenius_caps,
                output_link,
                input_radius,
            } => f
                .debug_struct("NnFrobenius")
                .field("widths", widths)
                .field("frobenius_caps", frobenius_caps)
                .field("output_link", output_link)
                .field("input_radius", input_radius)
                .finish(),
        }
    }
}

/// A function class together with its uniform range bound and an
/// optional additive offset shared by every member.
#[derive(Debug, Clone)]
pub struct FunctionClassSpec {
    kind: ClassKind,
    bound_b: f64,
    offset: Option<Predictor>,
}

const MAX_NN_DEPTH: usize = 3;

impl FunctionClassSpec {
    pub fn finite(members: Vec<Predictor>, bound_b: f64) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidParam {
                name: "function class".into(),
                reason: "finite class must have at least one member".into(),
            });
        }
        check_bound_b(bound_b)?;
        Ok(Self {
            kind: ClassKind::Finite(members),
            bound_b,
            offset: None,
        })
    }

    pub fn linear_ball(feature_map: FeatureMap, radius: f64, bound_b: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParam {
                name: "linear-ball radius".into(),
                reason: format!("must be a positive real, got {radius}"),
            });
        }
        check_bound_b(bound_b)?;
        Ok(Self {
            kind: ClassKind::LinearBall {
                feature_map,
                radius,
            },
            bound_b,
            offset: None,
        })
    }

    /// Linear ball with the identity feature map phi(x) = x.
    pub fn linear_ball_identity(radius: f64, bound_b: f64) -> Result<Self> {
        Self::linear_ball(Arc::new(|x: &[f64]| x.to_vec()), radius, bound_b)
    }

    pub fn nn_frobenius(
        widths: Vec<usize>,
        frobenius_caps: Vec<f64>,
        output_link: Link,
        input_radius: f64,
        bound_b: f64,
    ) -> Result<Self> {
        let depth = frobenius_caps.len();
        if depth == 0 || depth > MAX_NN_DEPTH {
            return Err(Error::InvalidParam {
                name: "network depth".into(),
                reason: format!("must be between 1 and {MAX_NN_DEPTH}, got {depth}"),
            });
        }
        if widths.len() != depth + 1 {
            return Err(Error::DimensionMismatch {
                context: "network widths".into(),
                expected: depth + 1,
                got: widths.len(),
            });
        }
        if *widths.last().expect("nonempty widths") != 1 {
            return Err(Error::InvalidParam {
                name: "network widths".into(),
                reason: "output width must be 1".into(),
            });
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParam {
                name: "network widths".into(),
                reason: "all layer widths must be at least 1".into(),
            });
        }
        if frobenius_caps.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidParam {
                name: "frobenius caps".into(),
                reason: "all caps must be positive reals".into(),
            });
        }
        if !(input_radius > 0.0 && input_radius.is_finite()) {
            return Err(Error::InvalidParam {
                name: "input radius".into(),
                reason: format!("must be a positive real, got {input_radius}"),
            });
        }
        check_bound_b(bound_b)?;
        Ok(Self {
            kind: ClassKind::NnFrobenius {
                widths,
                frobenius_caps,
                output_link,
                input_radius,
            },
            bound_b,
            offset: None,
        })
    }

    /// Attach an additive offset o, turning the class into
    /// {g + o : g in G}. For the centered class take o = -f_bayes.
    pub fn with_offset(mut self, offset: Predictor) -> Self {
        self.offset = Some(offset);
        self
    }

    pub fn kind(&self) -> &ClassKind {
        &self.kind
    }

    pub fn bound_b(&self) -> f64 {
        self.bound_b
    }

    pub fn offset(&self) -> Option<&Predictor> {
        self.offset.as_ref()
    }

    /// Lipschitz constant of the output link (network classes).
    pub fn output_lipschitz(&self) -> Option<f64> {
        match &self.kind {
            ClassKind::NnFrobenius { output_link, .. } => Some(link_lipschitz(*output_link)),
            _ => None,
        }
    }
}

fn check_bound_b(bound_b: f64) -> Result<()> {
    if !(bound_b >= 0.0 && bound_b.is_finite()) {
        return Err(Error::InvalidParam {
            name: "bound_b".into(),
            reason: format!("uniform range bound must be a nonnegative real, got {bound_b}"),
        });
    }
    Ok(())
}

fn link_lipschitz(link: Link) -> f64 {
    match link {
        Link::Identity => 1.0,
        Link::BoundedArctan => 2.0 / std::f64::consts::PI,
    }
}

/// How a Rademacher estimate was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadMode {
    /// All 2^n sign vectors, inner supremum exact.
    ExactEnumeration,
    /// Sampled sign vectors, inner supremum exact.
    MonteCarlo,
    /// Inner supremum by projected gradient ascent; the value is a
    /// lower bound on the true complexity.
    InnerMaximizationLowerBound,
}

impl std::fmt::Display for RadMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RadMode::ExactEnumeration => "exact-enumeration",
            RadMode::MonteCarlo => "monte-carlo",
            RadMode::InnerMaximizationLowerBound => "inner-maximization-lower-bound",
        };
        f.write_str(s)
    }
}

/// A Rademacher complexity estimate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RadEstimate {
    pub value: f64,
    pub n_points: usize,
    pub n_sign_draws: usize,
    pub mode: RadMode,
    /// Monte Carlo standard error; 0 when every average involved is
    /// exact or has a single replicate.
    pub std_error: f64,
}

/// Sign-vector averaging settings.
#[derive(Debug, Clone, Copy)]
pub struct SignConfig {
    /// Monte Carlo sign draws used above the exact threshold.
    pub n_signs: usize,
    /// Enumerate all 2^n sign vectors when n_points <= this (at most 20).
    pub exact_threshold: usize,
}

impl Default for SignConfig {
    fn default() -> Self {
        Self {
            n_signs: 2000,
            exact_threshold: 12,
        }
    }
}

const EXACT_THRESHOLD_CAP: usize = 20;

impl SignConfig {
    fn validate(&self) -> Result<()> {
        if self.n_signs == 0 {
            return Err(Error::InvalidParam {
                name: "rad.n_signs".into(),
                reason: "must be at least 1".into(),
            });
        }
        if self.exact_threshold > EXACT_THRESHOLD_CAP {
            return Err(Error::InvalidParam {
                name: "rad.exact_threshold".into(),
                reason: format!(
                    "enumeration above 2^{EXACT_THRESHOLD_CAP} sign vectors is not supported, got {}",
                    self.exact_threshold
                ),
            });
        }
        Ok(())
    }
}

/// Per-class data precomputed once per point set.
enum PreparedClass {
    /// values[m][i] = g_m(x_i) + o(x_i).
    Finite { values: Vec<Vec<f64>> },
    /// phis[i] = phi(x_i); offs[i] = o(x_i).
    LinearBall {
        radius: f64,
        phis: Vec<Vec<f64>>,
        offs: Vec<f64>,
    },
    Nn {
        widths: Vec<usize>,
        caps: Vec<f64>,
        link: Link,
        xs: Vec<DVector<f64>>,
        offs: Vec<f64>,
    },
}

fn prepare_class(spec: &FunctionClassSpec, points: &[Vec<f64>]) -> Result<PreparedClass> {
    let offs: Vec<f64> = points
        .iter()
        .map(|x| spec.offset.as_ref().map_or(0.0, |o| o.evaluate(x)))
        .collect();
    match &spec.kind {
        ClassKind::Finite(members) => {
            let values = members
                .iter()
                .map(|g| {
                    points
                        .iter()
                        .zip(&offs)
                        .map(|(x, o)| g.evaluate(x) + o)
                        .collect()
                })
                .collect();
            Ok(PreparedClass::Finite { values })
        }
        ClassKind::LinearBall {
            feature_map,
            radius,
        } => {
            let phis: Vec<Vec<f64>> = points.iter().map(|x| feature_map(x)).collect();
            let d = phis[0].len();
            if let Some(bad) = phis.iter().find(|p| p.len() != d) {
                return Err(Error::DimensionMismatch {
                    context: "linear-ball feature map".into(),
                    expected: d,
                    got: bad.len(),
                });
            }
            Ok(PreparedClass::LinearBall {
                radius: *radius,
                phis,
                offs,
            })
        }
        ClassKind::NnFrobenius {
            widths,
            frobenius_caps,
            output_link,
            ..
        } => {
            if let Some(bad) = points.iter().find(|x| x.len() != widths[0]) {
                return Err(Error::DimensionMismatch {
                    context: "network input width".into(),
                    expected: widths[0],
                    got: bad.len(),
                });
            }
            Ok(PreparedClass::Nn {
                widths: widths.clone(),
                caps: frobenius_caps.clone(),
                link: *output_link,
                xs: points
                    .iter()
                    .map(|x| DVector::from_column_slice(x))
                    .collect(),
                offs,
            })
        }
    }
}

const NN_STARTS: usize = 16;
const NN_PGA_ITERS: usize = 120;

impl PreparedClass {
    /// sup_g |(1/n) sum_i sigma_i (g(x_i) + o(x_i))| for one sign vector
    /// (exact for finite and linear-ball, ascent lower bound for nets).
    fn inner_sup(&self, signs: &[f64], seed: u64, sign_idx: u64) -> f64 {
        let n = signs.len() as f64;
        match self {
            PreparedClass::Finite { values } => values
                .iter()
                .map(|row| {
                    let s: f64 = row.iter().zip(signs).map(|(v, sg)| sg * v).sum();
                    (s / n).abs()
                })
                .fold(0.0, f64::max),
            PreparedClass::LinearBall { radius, phis, offs } => {
                // By duality sup_{|w| <= r} |w'v + c| = r|v| + |c| with
                // v = (1/n) sum sigma_i phi(x_i), c = (1/n) sum sigma_i o_i.
                let d = phis[0].len();
                let mut v = vec![0.0; d];
                let mut c = 0.0;
                for ((phi, o), sg) in phis.iter().zip(offs).zip(signs) {
                    for (vj, pj) in v.iter_mut().zip(phi) {
                        *vj += sg * pj;
                    }
                    c += sg * o;
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                radius * (norm / n) + (c / n).abs()
            }
            PreparedClass::Nn {
                widths,
                caps,
                link,
                xs,
                offs,
            } => {
                // The class is symmetric (negating the output layer
                // negates every member and both links are odd), so
                // sup |T + c| = sup T + |c| with T the signed average of
                // the network outputs; sup T is lower-bounded by ascent.
                let c: f64 = offs.iter().zip(signs).map(|(o, sg)| sg * o).sum::<f64>() / n;
                let best = best_ascent_value(widths, caps, *link, xs, signs, seed, sign_idx);
                best + c.abs()
            }
        }
    }

    fn exactly_solvable(&self) -> bool {
        !matches!(self, PreparedClass::Nn { .. })
    }
}

/// Multi-start projected gradient ascent on
/// T(theta) = (1/n) sum_i sigma_i link(NN(x_i; theta)). Returns the best
/// value found, floored at T(0) = 0.
fn best_ascent_value(
    widths: &[usize],
    caps: &[f64],
    link: Link,
    xs: &[DVector<f64>],
    signs: &[f64],
    seed: u64,
    sign_idx: u64,
) -> f64 {
    let depth = caps.len();
    let mut best = 0.0_f64;
    for start in 0..NN_STARTS {
        let mut rng = derive_rng(seed, "rad/nn-start", &[sign_idx, start as u64]);
        let mut weights: Vec<DMatrix<f64>> = (0..depth)
            .map(|j| {
                let mut w = DMatrix::from_fn(widths[j + 1], widths[j], |_, _| {
                    rng.gen_range(-1.0..1.0)
                });
                project_frobenius(&mut w, caps[j]);
                // Start on the cap boundary; ReLU layers are positive
                // homogeneous, so the supremum pushes the norms outward.
                let norm = w.norm();
                if norm > 1e-300 {
                    w *= caps[j] / norm;
                }
                w
            })
            .collect();
        if start == 0 && depth == 1 {
            // Aligned start: for one layer the pre-link objective is
            // linear in the weights with gradient sum sigma_i x_i.
            let mut v = DVector::zeros(widths[0]);
            for (x, sg) in xs.iter().zip(signs) {
                v.axpy(*sg, x, 1.0);
            }
            let norm = v.norm();
            if norm > 1e-300 {
                let scaled = v * (caps[0] / norm);
                weights[0] = DMatrix::from_row_slice(1, widths[0], scaled.as_slice());
            }
        }
        let mut value = nn_objective(&weights, link, xs, signs);
        let mut step = 0.25 * caps.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        for _ in 0..NN_PGA_ITERS {
            let grads = nn_objective_gradient(&weights, link, xs, signs);
            let mut cand = weights.clone();
            for (w, g) in cand.iter_mut().zip(&grads) {
                *w += g * step;
            }
            for (w, cap) in cand.iter_mut().zip(caps) {
                project_frobenius(w, *cap);
            }
            let cand_value = nn_objective(&cand, link, xs, signs);
            if cand_value > value {
                weights = cand;
                value = cand_value;
                step *= 1.5;
            } else {
                step *= 0.5;
                if step < 1e-12 {
                    break;
                }
            }
        }
        best = best.max(value);
    }
    best
}

fn project_frobenius(w: &mut DMatrix<f64>, cap: f64) {
    let norm = w.norm();
    if norm > cap {
        *w *= cap / norm;
    }
}

fn nn_forward(weights: &[DMatrix<f64>], x: &DVector<f64>) -> (Vec<DVector<f64>>, f64) {
    let depth = weights.len();
    let mut activations = Vec::with_capacity(depth);
    let mut a = x.clone();
    for (j, w) in weights.iter().enumerate() {
        let z = w * &a;
        if j + 1 < depth {
            a = z.map(|t| t.max(0.0));
            activations.push(a.clone());
        } else {
            return (activations, z[0]);
        }
    }
    unreachable!("depth >= 1")
}

fn nn_objective(weights: &[DMatrix<f64>], link: Link, xs: &[DVector<f64>], signs: &[f64]) -> f64 {
    let n = signs.len() as f64;
    xs.iter()
        .zip(signs)
        .map(|(x, sg)| sg * link.apply(nn_forward(weights, x).1))
        .sum::<f64>()
        / n
}

fn nn_objective_gradient(
    weights: &[DMatrix<f64>],
    link: Link,
    xs: &[DVector<f64>],
    signs: &[f64],
) -> Vec<DMatrix<f64>> {
    let depth = weights.len();
    let n = signs.len() as f64;
    let mut grads: Vec<DMatrix<f64>> = weights
        .iter()
        .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
        .collect();
    for (x, sg) in xs.iter().zip(signs) {
        // Forward pass keeping pre-activations for the ReLU mask.
        let mut pre: Vec<DVector<f64>> = Vec::with_capacity(depth);
        let mut acts: Vec<DVector<f64>> = Vec::with_capacity(depth);
        let mut a = x.clone();
        for (j, w) in weights.iter().enumerate() {
            let z = w * &a;
            pre.push(z.clone());
            if j + 1 < depth {
                a = z.map(|t| t.max(0.0));
                acts.push(a.clone());
            }
        }
        let u = pre[depth - 1][0];
        // d/du of sg/n * link(u).
        let mut delta = DVector::from_element(1, sg / n * link.derivative(u));
        for j in (0..depth).rev() {
            let input = if j == 0 { x } else { &acts[j - 1] };
            grads[j] += &delta * input.transpose();
            if j > 0 {
                let back = weights[j].transpose() * &delta;
                delta = back.zip_map(&pre[j - 1], |b, z| if z > 0.0 { b } else { 0.0 });
            }
        }
    }
    grads
}

/// Empirical Rademacher complexity of the class at the given points:
/// the sign expectation is enumerated exactly when
/// n <= exact threshold, otherwise averaged over seeded sign draws.
pub fn empirical_rademacher(
    spec: &FunctionClassSpec,
    points: &[Vec<f64>],
    cfg: &SignConfig,
    seed: u64,
) -> Result<RadEstimate> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::EmptySample {
            which: "rademacher evaluation point".into(),
        });
    }
    let prepared = prepare_class(spec, points)?;
    let n = points.len();
    let exact_signs = n <= cfg.exact_threshold;
    let sign_vectors: Vec<Vec<f64>> = if exact_signs {
        (0..(1_usize << n))
            .map(|pattern| {
                (0..n)
                    .map(|i| if pattern >> i & 1 == 1 { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect()
    } else {
        let mut rng = derive_rng(seed, "rad/mc-signs", &[]);
        (0..cfg.n_signs)
            .map(|_| {
                (0..n)
                    .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect()
    };
    let sups: Vec<f64> = sign_vectors
        .par_iter()
        .enumerate()
        .map(|(idx, signs)| prepared.inner_sup(signs, seed, idx as u64))
        .collect();
    let draws = sups.len();
    let value = sups.iter().sum::<f64>() / draws as f64;
    let std_error = if exact_signs || draws < 2 {
        0.0
    } else {
        let var = sups
            .iter()
            .map(|s| {
                let d = s - value;
                d * d
            })
            .sum::<f64>()
            / (draws as f64 - 1.0);
        (var / draws as f64).sqrt()
    };
    let mode = if !prepared.exactly_solvable() {
        RadMode::InnerMaximizationLowerBound
    } else if exact_signs {
        RadMode::ExactEnumeration
    } else {
        RadMode::MonteCarlo
    };
    Ok(RadEstimate {
        value,
        n_points: n,
        n_sign_draws: draws,
        mode,
        std_error,
    })
}

/// Rademacher complexity under a scenario law: the outer expectation
/// over point draws is averaged over n_outer fresh samples, and the
/// reported standard error is the spread of that outer average.
pub fn rademacher_under_law(
    spec: &FunctionClassSpec,
    sc: &ShiftScenario,
    side: LawSide,
    n: usize,
    n_outer: usize,
    cfg: &SignConfig,
    seed: u64,
) -> Result<RadEstimate> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidParam {
            name: "rad sample size".into(),
            reason: "must be at least 1".into(),
        });
    }
    if n_outer == 0 {
        return Err(Error::InvalidParam {
            name: "rad.n_outer".into(),
            reason: "must be at least 1".into(),
        });
    }
    let inner: Vec<RadEstimate> = (0..n_outer)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(
                seed,
                &format!("{}/rad-points", sc.seed_domain()),
                &[i as u64],
            );
            let xs = sc.sample_x(side, n, &mut rng)?;
            let inner_seed = rng.gen::<u64>();
            empirical_rademacher(spec, &xs, cfg, inner_seed)
        })
        .collect::<Result<_>>()?;
    let value = inner.iter().map(|e| e.value).sum::<f64>() / n_outer as f64;
    let std_error = if n_outer < 2 {
        0.0
    } else {
        let var = inner
            .iter()
            .map(|e| {
                let d = e.value - value;
                d * d
            })
            .sum::<f64>()
            / (n_outer as f64 - 1.0);
        (var / n_outer as f64).sqrt()
    };
    Ok(RadEstimate {
        value,
        n_points: n,
        n_sign_draws: inner[0].n_sign_draws,
        mode: inner[0].mode,
        std_error,
    })
}

/// Rademacher bound for a finite class of size M with range bound B:
/// 2B sqrt(log(2M)/n).
pub fn finite_class_bound(bound_b: f64, class_size: usize, n: usize) -> Result<f64> {
    check_bound_b(bound_b)?;
    if class_size == 0 {
        return Err(Error::InvalidParam {
            name: "class_size".into(),
            reason: "must be at least 1".into(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidParam {
            name: "n".into(),
            reason: "must be at least 1".into(),
        });
    }
    Ok(2.0 * bound_b * ((2.0 * class_size as f64).ln() / n as f64).sqrt())
}

/// Rademacher bound for the centered network class:
/// (2/sqrt(n)) { L R (1 + sqrt((2 log 2) d)) prod_j M_F(j) + sqrt(log 2) }.
pub fn nn_class_bound(
    lipschitz: f64,
    input_radius: f64,
    depth: usize,
    frobenius_caps: &[f64],
    n: usize,
) -> Result<f64> {
    for (name, v) in [("lipschitz", lipschitz), ("input_radius", input_radius)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParam {
                name: name.into(),
                reason: format!("must be a positive real, got {v}"),
            });
        }
    }
    if depth == 0 || n == 0 {
        return Err(Error::InvalidParam {
            name: if depth == 0 { "depth" } else { "n" }.into(),
            reason: "must be at least 1".into(),
        });
    }
    if frobenius_caps.len() != depth {
        return Err(Error::DimensionMismatch {
            context: "frobenius caps".into(),
            expected: depth,
            got: frobenius_caps.len(),
        });
    }
    if frobenius_caps.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(Error::InvalidParam {
            name: "frobenius caps".into(),
            reason: "all caps must be positive reals".into(),
        });
    }
    let log2 = 2.0_f64.ln();
    let prod: f64 = frobenius_caps.iter().product();
    Ok(2.0 / (n as f64).sqrt()
        * (lipschitz * input_radius * (1.0 + (2.0 * log2 * depth as f64).sqrt()) * prod
            + log2.sqrt()))
}

/// Inputs of the structure-agnostic excess-risk bound. Sample sizes are
/// reals so limiting regimes (n -> infinity) can be evaluated directly.
#[derive(Debug, Clone, Copy)]
pub struct StructureAgnosticInputs {
    /// P-weighted L2 error of the density-ratio pilot.
    pub err_rho: f64,
    /// P-weighted L2 error of the regression pilot.
    pub err_f: f64,
    pub c_dr: f64,
    pub c_rf: f64,
    /// Rademacher complexity of the centered class under the source law.
    pub rad_p: f64,
    /// Rademacher complexity of the centered class under the target law.
    pub rad_q: f64,
    pub n_p: f64,
    pub n_q: f64,
    pub delta: f64,
}

/// Per-term breakdown of the structure-agnostic bound, in the order the
/// terms appear in the bound.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StructureAgnosticBound {
    /// 4 err_rho err_f.
    pub pilot_product: f64,
    /// 12 (2+C_rf) log(3/delta) (C_dr/n_P + 1/n_Q).
    pub fast_rate: f64,
    /// 4 (1+C_dr)(2+C_rf) sqrt(2 log(3/delta)) (n_P^{-1/2} + n_Q^{-1/2}).
    pub slow_rate: f64,
    /// 8 (1+C_dr)(2+C_rf) sqrt(log(3/delta)) (rad_P/sqrt(n_P) + rad_Q/sqrt(n_Q)).
    pub complexity_rate: f64,
    /// 8 C_dr (1+C_rf) rad_P.
    pub complexity_p: f64,
    /// 8 (3+C_rf) rad_Q.
    pub complexity_q: f64,
}

impl StructureAgnosticBound {
    pub fn total(&self) -> f64 {
        self.pilot_product
            + self.fast_rate
            + self.slow_rate
            + self.complexity_rate
            + self.complexity_p
            + self.complexity_q
    }

    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("pilot product", self.pilot_product),
            ("fast rate", self.fast_rate),
            ("slow rate", self.slow_rate),
            ("complexity rate", self.complexity_rate),
            ("complexity (source)", self.complexity_p),
            ("complexity (target)", self.complexity_q),
        ]
    }
}

/// Evaluate the six-term structure-agnostic excess-risk bound.
pub fn structure_agnostic_bound(inputs: &StructureAgnosticInputs) -> Result<StructureAgnosticBound> {
    // delta < 3 keeps log(3/delta) positive so every term stays real
    // and nonnegative; values of at least 1 are tolerated because they
    // arise in convention checks like delta = 3/e (unit log factor).
    if !(inputs.delta > 0.0 && inputs.delta < 3.0) {
        return Err(Error::InvalidParam {
            name: "theorem.delta".into(),
            reason: format!("must lie in (0, 3), got {}", inputs.delta),
        });
    }
    for (name, v) in [
        ("err_rho", inputs.err_rho),
        ("err_f", inputs.err_f),
        ("c_dr", inputs.c_dr),
        ("c_rf", inputs.c_rf),
        ("rad_p", inputs.rad_p),
        ("rad_q", inputs.rad_q),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidParam {
                name: name.into(),
                reason: format!("must be a nonnegative real, got {v}"),
            });
        }
    }
    for (name, v) in [("n_p", inputs.n_p), ("n_q", inputs.n_q)] {
        // Infinite sample sizes are allowed for limiting regimes.
        if !(v >= 1.0) {
            return Err(Error::InvalidParam {
                name: name.into(),
                reason: format!("must be at least 1, got {v}"),
            });
        }
    }
    let log_term = (3.0 / inputs.delta).ln();
    let c_dr = inputs.c_dr;
    let c_rf = inputs.c_rf;
    Ok(StructureAgnosticBound {
        pilot_product: 4.0 * inputs.err_rho * inputs.err_f,
        fast_rate: 12.0 * (2.0 + c_rf) * log_term * (c_dr / inputs.n_p + 1.0 / inputs.n_q),
        slow_rate: 4.0
            * (1.0 + c_dr)
            * (2.0 + c_rf)
            * (2.0 * log_term).sqrt()
            * (inputs.n_p.powf(-0.5) + inputs.n_q.powf(-0.5)),
        complexity_rate: 8.0
            * (1.0 + c_dr)
            * (2.0 + c_rf)
            * log_term.sqrt()
            * (inputs.rad_p / inputs.n_p.sqrt() + inputs.rad_q / inputs.n_q.sqrt()),
        complexity_p: 8.0 * c_dr * (1.0 + c_rf) * inputs.rad_p,
        complexity_q: 8.0 * (3.0 + c_rf) * inputs.rad_q,
    })
}

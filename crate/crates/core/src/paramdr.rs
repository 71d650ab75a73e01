//! Parametric doubly robust estimation: analytic derivatives of the DR
//! empirical risk, closed-form and iterative minimizers, Fisher
//! information machinery, and the bound/threshold formula evaluators.
//!
//! The model is f(x; theta) = link(theta' x) with the identity feature
//! map, either the identity link or the bounded arctan link. For the
//! identity link the DR risk is a quadratic in theta, so its minimizer
//! has a closed form [`solve_linear_dr`]; the iterative path
//! [`minimize_dr`] covers both links and doubles as a cross-check.
//!
//! Formula evaluators ([`parametric_bound`], [`confidence_radius`],
//! [`sample_size_thresholds`], [`b_constants`]) are pure, deterministic
//! functions of their inputs; the unspecified absolute constant K is a
//! configuration knob defaulting to 1, and nothing downstream relies on
//! its value beyond overall scale.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{checked_cholesky, min_eigenvalue, sym_solve, sym_solve_matrix};
use crate::pilots::{RatioEstimate, RegressionEstimate};
use crate::risk::Predictor;
use crate::rng::derive_rng;
use crate::scenario::{LawSide, Link, PairedSample, ShiftScenario};
use crate::{Error, Result};

/// Uniform bounds on the parameter derivatives of f(x; theta):
/// b1 >= sup |grad_theta f|_2, b2 >= sup |hess_theta f|_op,
/// b3 >= sup |third derivative|_op over the ball and parameter domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothness {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
}

const FEATURE_CAP_DRAWS: usize = 100_000;

/// The parametric hypothesis class f(x; theta) = link(theta' x).
#[derive(Debug, Clone)]
pub struct ParametricModel {
    dim: usize,
    link: Link,
    feature_cap: f64,
    smoothness: Smoothness,
}

impl ParametricModel {
    /// Build a model from an explicit bound on the feature norm
    /// sup |x|_2 over the evaluation region.
    pub fn new(dim: usize, link: Link, feature_cap: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParam {
                name: "model dimension".into(),
                reason: "must be at least 1".into(),
            });
        }
        if !(feature_cap > 0.0 && feature_cap.is_finite()) {
            return Err(Error::InvalidParam {
                name: "feature cap".into(),
                reason: format!("must be a positive real, got {feature_cap}"),
            });
        }
        let smoothness = match link {
            // Linear in theta: first derivative is the feature itself,
            // higher derivatives vanish.
            Link::Identity => Smoothness {
                b1: feature_cap,
                b2: 0.0,
                b3: 0.0,
            },
            // Chain rule through zeta(u) = (2/pi) arctan(u), whose first
            // three derivatives are maximized at u = 0, 1/sqrt(3), 0 with
            // values 1, 3 sqrt(3)/8, 2 (up to the 2/pi factor).
            Link::BoundedArctan => {
                let two_over_pi = 2.0 / std::f64::consts::PI;
                Smoothness {
                    b1: two_over_pi * feature_cap,
                    b2: two_over_pi * (3.0 * 3.0_f64.sqrt() / 8.0) * feature_cap * feature_cap,
                    b3: two_over_pi * 2.0 * feature_cap.powi(3),
                }
            }
        };
        Ok(Self {
            dim,
            link,
            feature_cap,
            smoothness,
        })
    }

    /// Build a model for a scenario, estimating the feature-norm cap as
    /// the maximum of |X|_2 over a fixed-stream sample from both laws
    /// (the truncation radius is an upper bound; the sampled cap tracks
    /// where the laws actually put mass).
    pub fn for_scenario(sc: &ShiftScenario) -> Result<Self> {
        let mut rng = derive_rng(0, &format!("{}/feature-cap", sc.seed_domain()), &[]);
        let mut cap = 0.0_f64;
        for side in [LawSide::Source, LawSide::Target] {
            let xs = sc.sample_x(side, FEATURE_CAP_DRAWS / 2, &mut rng)?;
            for x in &xs {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                cap = cap.max(norm);
            }
        }
        Self::new(sc.dim(), sc.link(), cap)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn feature_cap(&self) -> f64 {
        self.feature_cap
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// Model output f(x; theta), without the [-1, 1] clamp of
    /// [`Predictor`]; the calculus here needs the smooth, unclamped map.
    pub fn value(&self, x: &[f64], theta: &DVector<f64>) -> f64 {
        self.link.apply(dot(theta, x))
    }

    /// Wrap fixed parameters as a [`Predictor`] for risk evaluation. The
    /// identity link produces a linear predictor so population risks can
    /// take their closed-form path.
    pub fn predictor(&self, theta: &DVector<f64>, description: impl Into<String>) -> Predictor {
        match self.link {
            Link::Identity => {
                Predictor::linear_identity(theta.iter().cloned().collect(), description)
            }
            Link::BoundedArctan => {
                let theta = theta.clone();
                Predictor::from_fn(
                    move |x| Link::BoundedArctan.apply(dot(&theta, x)),
                    description,
                )
            }
        }
    }

    fn check_theta(&self, theta: &DVector<f64>, context: &str) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: context.into(),
                expected: self.dim,
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn check_sample(&self, sample: &PairedSample, context: &str) -> Result<()> {
        if sample.dim != self.dim {
            return Err(Error::DimensionMismatch {
                context: context.into(),
                expected: self.dim,
                got: sample.dim,
            });
        }
        Ok(())
    }
}

fn dot(theta: &DVector<f64>, x: &[f64]) -> f64 {
    theta.iter().zip(x).map(|(t, v)| t * v).sum()
}

/// G_Q = (1/n_Q) sum x x' over the target covariates.
pub fn target_gram(sample: &PairedSample) -> DMatrix<f64> {
    let d = sample.dim;
    let mut gram = DMatrix::zeros(d, d);
    let mut xv = DVector::zeros(d);
    for x in &sample.target_x {
        xv.copy_from_slice(x);
        gram.syger(1.0, &xv, &xv, 1.0);
    }
    gram /= sample.n_target() as f64;
    for i in 0..d {
        for j in (i + 1)..d {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    gram
}

/// Gradient of the DR empirical risk in theta:
/// (2/n_P) sum rho(x)(f0(x) - y) grad f + (2/n_Q) sum (f - f0(x)) grad f.
pub fn dr_gradient(
    sample: &PairedSample,
    rho: &RatioEstimate,
    f0: &RegressionEstimate,
    model: &ParametricModel,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    model.check_theta(theta, "dr_gradient")?;
    model.check_sample(sample, "dr_gradient")?;
    let d = model.dim;
    let mut grad = DVector::zeros(d);
    let mut xv = DVector::zeros(d);
    for (x, y) in sample.source_x.iter().zip(&sample.source_y) {
        let u = dot(theta, x);
        let w = rho.evaluate(x) * (f0.evaluate(x) - y) * model.link.derivative(u);
        xv.copy_from_slice(x);
        grad.axpy(w, &xv, 1.0);
    }
    grad *= 2.0 / sample.n_source() as f64;
    let mut tgt = DVector::zeros(d);
    for x in &sample.target_x {
        let u = dot(theta, x);
        let w = (model.link.apply(u) - f0.evaluate(x)) * model.link.derivative(u);
        xv.copy_from_slice(x);
        tgt.axpy(w, &xv, 1.0);
    }
    grad.axpy(2.0 / sample.n_target() as f64, &tgt, 1.0);
    Ok(grad)
}

/// Hessian of the DR empirical risk in theta. For the identity link the
/// source contribution cancels and the result is exactly 2 G_Q,
/// assembled from the same target Gram as [`solve_linear_dr`].
pub fn dr_hessian(
    sample: &PairedSample,
    rho: &RatioEstimate,
    f0: &RegressionEstimate,
    model: &ParametricModel,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    model.check_theta(theta, "dr_hessian")?;
    model.check_sample(sample, "dr_hessian")?;
    if model.link == Link::Identity {
        return Ok(target_gram(sample) * 2.0);
    }
    let d = model.dim;
    let mut hess = DMatrix::zeros(d, d);
    let mut xv = DVector::zeros(d);
    for (x, y) in sample.source_x.iter().zip(&sample.source_y) {
        let u = dot(theta, x);
        let w = rho.evaluate(x) * (f0.evaluate(x) - y) * model.link.second_derivative(u);
        xv.copy_from_slice(x);
        hess.syger(2.0 * w / sample.n_source() as f64, &xv, &xv, 1.0);
    }
    for x in &sample.target_x {
        let u = dot(theta, x);
        let d1 = model.link.derivative(u);
        let w = d1 * d1 + (model.link.apply(u) - f0.evaluate(x)) * model.link.second_derivative(u);
        xv.copy_from_slice(x);
        hess.syger(2.0 * w / sample.n_target() as f64, &xv, &xv, 1.0);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            hess[(i, j)] = hess[(j, i)];
        }
    }
    Ok(hess)
}

/// Exact minimizer of the DR empirical risk for the identity link:
/// theta = (G_Q + ridge_eps I)^{-1} [(1/n_Q) sum f0(x) x
///   - (1/n_P) sum rho(x)(f0(x) - y) x].
pub fn solve_linear_dr(
    sample: &PairedSample,
    rho: &RatioEstimate,
    f0: &RegressionEstimate,
    model: &ParametricModel,
    ridge_eps: f64,
) -> Result<DVector<f64>> {
    if model.link != Link::Identity {
        return Err(Error::InvalidParam {
            name: "model.link".into(),
            reason: "closed-form solver requires the identity link".into(),
        });
    }
    model.check_sample(sample, "solve_linear_dr")?;
    if !(ridge_eps >= 0.0) {
        return Err(Error::InvalidParam {
            name: "model.ridge_eps".into(),
            reason: format!("must be nonnegative, got {ridge_eps}"),
        });
    }
    let d = model.dim;
    let system = target_gram(sample) + DMatrix::identity(d, d) * ridge_eps;
    let mut rhs = DVector::zeros(d);
    let mut xv = DVector::zeros(d);
    for x in &sample.target_x {
        xv.copy_from_slice(x);
        rhs.axpy(f0.evaluate(x) / sample.n_target() as f64, &xv, 1.0);
    }
    for (x, y) in sample.source_x.iter().zip(&sample.source_y) {
        let w = rho.evaluate(x) * (f0.evaluate(x) - y) / sample.n_source() as f64;
        xv.copy_from_slice(x);
        rhs.axpy(-w, &xv, 1.0);
    }
    sym_solve(
        &system,
        &rhs,
        "target Gram",
        "singular; need n_Q >= d or ridge_eps > 0",
    )
}

/// Settings for [`minimize_dr`].
#[derive(Debug, Clone, Copy)]
pub struct OptConfig {
    /// Terminate when the gradient norm falls to this level.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 10_000,
        }
    }
}

/// Termination record of an iterative minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    pub iterations: usize,
    pub grad_norm: f64,
    /// DR empirical risk at the returned parameters.
    pub risk: f64,
}

/// DR empirical risk of the raw model output f(x; theta), mirroring the
/// accumulation of [`crate::risk::dr_empirical_risk`] but without the
/// [-1, 1] range clamp of [`Predictor`]: the line search must descend
/// the same smooth objective that [`dr_gradient`] differentiates (and
/// that [`solve_linear_dr`] minimizes in closed form).
fn dr_risk_unclamped(
    sample: &PairedSample,
    rho: &RatioEstimate,
    f0: &RegressionEstimate,
    model: &ParametricModel,
    theta: &DVector<f64>,
) -> f64 {
    let source_term = sample
        .source_x
        .iter()
        .zip(&sample.source_y)
        .map(|(x, y)| {
            let fv = model.value(x, theta);
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
            let d0 = f0.evaluate(x) - model.value(x, theta);
            d0 * d0
        })
        .sum::<f64>()
        / sample.n_target() as f64;
    source_term + target_term
}

/// Gradient descent with backtracking line search on the DR empirical
/// risk. Fails with the convergence record when max_iters is exhausted
/// and the gradient norm still exceeds 100 tol.
pub fn minimize_dr(
    sample: &PairedSample,
    rho: &RatioEstimate,
    f0: &RegressionEstimate,
    model: &ParametricModel,
    theta0: &DVector<f64>,
    opt: &OptConfig,
) -> Result<(DVector<f64>, Convergence)> {
    model.check_theta(theta0, "minimize_dr")?;
    model.check_sample(sample, "minimize_dr")?;
    let risk_at = |theta: &DVector<f64>| -> f64 { dr_risk_unclamped(sample, rho, f0, model, theta) };
    let mut theta = theta0.clone();
    let mut risk = risk_at(&theta);
    let mut step = 1.0_f64;
    let mut iterations = 0;
    let mut grad_norm;
    loop {
        let grad = dr_gradient(sample, rho, f0, model, &theta)?;
        grad_norm = grad.norm();
        if grad_norm <= opt.tol {
            return Ok((
                theta,
                Convergence {
                    iterations,
                    grad_norm,
                    risk,
                },
            ));
        }
        if iterations >= opt.max_iters {
            break;
        }
        iterations += 1;
        // Backtracking line search with the Armijo decrease condition;
        // the accepted step is reused (doubled) as the next trial. The
        // decrease fraction 1/2 caps accepted steps near the optimal
        // 1/L for quadratic risks, avoiding boundary oscillation.
        let mut t = step * 2.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &theta - &grad * t;
            let cand_risk = risk_at(&cand);
            if cand_risk <= risk - 0.5 * t * grad_norm * grad_norm {
                theta = cand;
                risk = cand_risk;
                step = t;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Descent direction exhausted in double precision.
            break;
        }
    }
    if grad_norm > 100.0 * opt.tol {
        return Err(Error::NonConvergence {
            iterations,
            grad_norm,
        });
    }
    Ok((
        theta,
        Convergence {
            iterations,
            grad_norm,
            risk,
        },
    ))
}

/// Empirical Fisher information 2 (1/n) sum grad f grad f' at theta.
pub fn empirical_fisher(
    points: &[Vec<f64>],
    model: &ParametricModel,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    model.check_theta(theta, "empirical_fisher")?;
    if points.is_empty() {
        return Err(Error::EmptySample {
            which: "fisher evaluation".into(),
        });
    }
    let d = model.dim;
    let mut fisher = DMatrix::zeros(d, d);
    let mut xv = DVector::zeros(d);
    for x in points {
        let d1 = model.link.derivative(dot(theta, x));
        xv.copy_from_slice(x);
        fisher.syger(2.0 * d1 * d1 / points.len() as f64, &xv, &xv, 1.0);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            fisher[(i, j)] = fisher[(j, i)];
        }
    }
    Ok(fisher)
}

/// How a Fisher matrix was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FisherProvenance {
    ClosedForm,
    MonteCarlo { draws: usize, seed: u64 },
}

/// The pair (I_P(theta*), I_Q(theta*)) with its provenance.
#[derive(Debug, Clone)]
pub struct FisherPair {
    i_p: DMatrix<f64>,
    i_q: DMatrix<f64>,
    provenance: FisherProvenance,
}

const FISHER_SYMMETRY_TOL: f64 = 1e-10;

impl FisherPair {
    /// Validates symmetry (to 1e-10, relative to the largest entry) and
    /// positive definiteness of the target information.
    pub fn new(i_p: DMatrix<f64>, i_q: DMatrix<f64>, provenance: FisherProvenance) -> Result<Self> {
        if i_p.nrows() != i_p.ncols() || i_q.nrows() != i_q.ncols() || i_p.nrows() != i_q.nrows() {
            return Err(Error::DimensionMismatch {
                context: "FisherPair".into(),
                expected: i_p.nrows(),
                got: i_q.nrows(),
            });
        }
        for (name, m) in [("source", &i_p), ("target", &i_q)] {
            let scale = m.amax().max(1e-300);
            if (m - m.transpose()).amax() > FISHER_SYMMETRY_TOL * scale {
                return Err(Error::InvalidParam {
                    name: format!("{name} Fisher information"),
                    reason: "matrix is not symmetric".into(),
                });
            }
        }
        let min_eig = min_eigenvalue(&i_q);
        if min_eig <= 0.0 {
            return Err(Error::TargetFisherSingular { min_eig });
        }
        Ok(Self {
            i_p,
            i_q,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.i_q.nrows()
    }

    pub fn source_information(&self) -> &DMatrix<f64> {
        &self.i_p
    }

    pub fn target_information(&self) -> &DMatrix<f64> {
        &self.i_q
    }

    pub fn provenance(&self) -> FisherProvenance {
        self.provenance
    }
}

const FISHER_MC_DRAWS: usize = 200_000;

/// Population Fisher informations of the scenario at theta*: closed form
/// 2 E[X X'] for the identity link, Monte Carlo otherwise.
pub fn oracle_fisher_pair(sc: &ShiftScenario, model: &ParametricModel) -> Result<FisherPair> {
    model.check_theta(sc.theta_star(), "oracle_fisher_pair")?;
    match model.link {
        Link::Identity => FisherPair::new(
            sc.source_second_moment() * 2.0,
            sc.target_second_moment() * 2.0,
            FisherProvenance::ClosedForm,
        ),
        Link::BoundedArctan => {
            let mut matrices = Vec::with_capacity(2);
            for (ix, side) in [LawSide::Source, LawSide::Target].into_iter().enumerate() {
                let mut rng =
                    derive_rng(0, &format!("{}/oracle-fisher", sc.seed_domain()), &[ix as u64]);
                let xs = sc.sample_x(side, FISHER_MC_DRAWS, &mut rng)?;
                matrices.push(empirical_fisher(&xs, model, sc.theta_star())?);
            }
            let i_q = matrices.pop().expect("two matrices pushed");
            let i_p = matrices.pop().expect("two matrices pushed");
            FisherPair::new(
                i_p,
                i_q,
                FisherProvenance::MonteCarlo {
                    draws: FISHER_MC_DRAWS,
                    seed: 0,
                },
            )
        }
    }
}

const FISHER_SOLVE_CONTEXT: &str = "target Fisher information";
const FISHER_SOLVE_HINT: &str = "target law too degenerate for the model dimension";

/// Trace{ I_P I_Q^{-1} }, the Fisher information mismatch. Computed via a
/// symmetric solve; returns d exactly when the two matrices are equal.
pub fn fisher_mismatch_trace(fp: &FisherPair) -> Result<f64> {
    if fp.i_p == fp.i_q {
        return Ok(fp.dim() as f64);
    }
    let solved = sym_solve_matrix(&fp.i_q, &fp.i_p, FISHER_SOLVE_CONTEXT, FISHER_SOLVE_HINT)?;
    Ok(solved.trace())
}

/// Scalar functionals of a Fisher pair used by the bound formulas.
struct FisherFunctionals {
    /// Trace{ I_P I_Q^{-1} }.
    trace_mismatch: f64,
    /// Trace{ I_P I_Q^{-2} }.
    trace_p_qq: f64,
    /// Trace{ I_Q^{-1} }.
    trace_q_inv: f64,
    /// |I_Q^{-1}|_op.
    op_q_inv: f64,
}

fn fisher_functionals(fp: &FisherPair) -> Result<FisherFunctionals> {
    let chol = checked_cholesky(&fp.i_q, FISHER_SOLVE_CONTEXT, FISHER_SOLVE_HINT)?;
    // W = I_Q^{-1} I_P; V = I_Q^{-1} I_P I_Q^{-1} = I_Q^{-1} W'.
    let w = chol.solve(&fp.i_p);
    let v = chol.solve(&w.transpose());
    let q_inv = chol.inverse();
    let min_eig = min_eigenvalue(&fp.i_q);
    if min_eig <= 0.0 {
        return Err(Error::TargetFisherSingular { min_eig });
    }
    Ok(FisherFunctionals {
        trace_mismatch: w.trace(),
        trace_p_qq: v.trace(),
        trace_q_inv: q_inv.trace(),
        op_q_inv: 1.0 / min_eig,
    })
}

/// The constants of the parametric theorems: the absolute constant K,
/// the failure probability delta, the pilot clip levels, and the
/// smoothness-derived (B1, B2, B3).
#[derive(Debug, Clone, Copy)]
pub struct TheoremConstants {
    k_abs: f64,
    delta: f64,
    c_dr: f64,
    c_rf: f64,
    smoothness: Smoothness,
    big_b: (f64, f64, f64),
}

impl TheoremConstants {
    pub fn new(
        k_abs: f64,
        delta: f64,
        c_dr: f64,
        c_rf: f64,
        smoothness: Smoothness,
    ) -> Result<Self> {
        if !(k_abs > 0.0 && k_abs.is_finite()) {
            return Err(Error::InvalidParam {
                name: "theorem.k_abs".into(),
                reason: format!("must be a positive real, got {k_abs}"),
            });
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParam {
                name: "theorem.delta".into(),
                reason: format!("must lie in (0, 1), got {delta}"),
            });
        }
        for (name, v) in [("c_dr", c_dr), ("c_rf", c_rf)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam {
                    name: format!("pilot.clip.{name}"),
                    reason: format!("must be a positive real, got {v}"),
                });
            }
        }
        for (name, v) in [
            ("b1", smoothness.b1),
            ("b2", smoothness.b2),
            ("b3", smoothness.b3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam {
                    name: format!("model smoothness {name}"),
                    reason: format!("must be a nonnegative real, got {v}"),
                });
            }
        }
        let big_b = b_constants(smoothness.b1, smoothness.b2, smoothness.b3, c_dr, c_rf);
        Ok(Self {
            k_abs,
            delta,
            c_dr,
            c_rf,
            smoothness,
            big_b,
        })
    }

    pub fn k_abs(&self) -> f64 {
        self.k_abs
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn c_dr(&self) -> f64 {
        self.c_dr
    }

    pub fn c_rf(&self) -> f64 {
        self.c_rf
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// (B1, B2, B3) derived from the smoothness and clip levels.
    pub fn b_consts(&self) -> (f64, f64, f64) {
        self.big_b
    }

    /// The sample-size constant kappa.
    pub fn kappa(&self) -> f64 {
        let (b1, b2, b3) = self.big_b;
        let cc = (1.0 + self.c_dr) * (1.0 + self.c_rf);
        let cc2 = cc * cc;
        [
            (260.0 * b2).powi(2),
            (860.0 * b3 / 3.0 * self.k_abs * cc).powi(2),
            (160.0 * b1 * b1 * b2 / cc2).powf(2.0 / 3.0),
            (640.0 * b1.powi(3) * b3 / (3.0 * cc2)).sqrt(),
            80.0 * b1 * b1 / cc2,
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
    }

    /// The enlarged sample-size constant kappa-bar >= kappa.
    pub fn kappa_bar(&self) -> f64 {
        let (_, _, b3) = self.big_b;
        let kcc = self.k_abs * (1.0 + self.c_dr) * (1.0 + self.c_rf);
        [self.kappa(), (2.0 * b3 * kcc).powi(2), 18.0 * kcc * kcc]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// B1 = 4(1+C_dr)(1+C_rf) b1;
/// B2 = 8 sqrt(2) max{ C_dr (1+C_rf) b2, b1^2 + (1+C_rf)^2 b2 };
/// B3 = max{ 2(1+C_dr)(1+C_rf), 4 } b3 + 6 b1 b2.
pub fn b_constants(b1: f64, b2: f64, b3: f64, c_dr: f64, c_rf: f64) -> (f64, f64, f64) {
    let rf1 = 1.0 + c_rf;
    let big1 = 4.0 * (1.0 + c_dr) * rf1 * b1;
    let big2 = 8.0 * 2.0_f64.sqrt() * (c_dr * rf1 * b2).max(b1 * b1 + rf1 * rf1 * b2);
    let big3 = (2.0 * (1.0 + c_dr) * rf1).max(4.0) * b3 + 6.0 * b1 * b2;
    (big1, big2, big3)
}

/// The sample-size thresholds of the detailed parametric theorem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSizeThresholds {
    pub n1: f64,
    pub n2: f64,
    pub n_star: f64,
    pub kappa: f64,
    pub kappa_bar: f64,
}

/// Evaluate N1, N2, N* = max(N1, N2) together with kappa and kappa-bar.
/// The guarantee requires min(n_P, n_Q) >= kappa_bar N* log(d/delta).
pub fn sample_size_thresholds(
    fp: &FisherPair,
    tc: &TheoremConstants,
) -> Result<SampleSizeThresholds> {
    let f = fisher_functionals(fp)?;
    let d = fp.dim() as f64;
    let sum_traces = f.trace_p_qq + f.trace_q_inv;
    let min_traces = f.trace_p_qq.min(f.trace_q_inv);
    let n1 = f.op_q_inv
        * f.op_q_inv
        * [
            1.0,
            sum_traces,
            min_traces.powf(-2.0 / 3.0),
            min_traces.powf(-0.5),
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let denom = f.trace_mismatch.min(d);
    let n2 = [
        (sum_traces / denom).powi(2),
        sum_traces.powi(3) / (denom * denom),
        (f.op_q_inv * f.op_q_inv / denom).powf(2.0 / 3.0),
        (f.op_q_inv.powi(3) / denom).sqrt(),
        f.op_q_inv / denom,
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);
    Ok(SampleSizeThresholds {
        n1,
        n2,
        n_star: n1.max(n2),
        kappa: tc.kappa(),
        kappa_bar: tc.kappa_bar(),
    })
}

fn check_sample_sizes(n_p: usize, n_q: usize) -> Result<()> {
    for (name, n) in [("n_P", n_p), ("n_Q", n_q)] {
        if n == 0 {
            return Err(Error::InvalidParam {
                name: name.into(),
                reason: "must be at least 1".into(),
            });
        }
    }
    Ok(())
}

/// The instance-dependent parametric excess-risk bound:
/// 18 K^2 (1+C_dr)^2 (1+C_rf)^2 log(d/delta)
///   [Trace{I_P I_Q^{-1}}/n_P + d/n_Q].
pub fn parametric_bound(
    fp: &FisherPair,
    tc: &TheoremConstants,
    n_p: usize,
    n_q: usize,
) -> Result<f64> {
    check_sample_sizes(n_p, n_q)?;
    let d = fp.dim() as f64;
    let trace = fisher_mismatch_trace(fp)?;
    let lead = 18.0
        * tc.k_abs
        * tc.k_abs
        * (1.0 + tc.c_dr).powi(2)
        * (1.0 + tc.c_rf).powi(2)
        * (d / tc.delta).ln();
    Ok(lead * (trace / n_p as f64 + d / n_q as f64))
}

/// The localization radius around theta*:
/// r(delta) = 3 K (1+C_dr)(1+C_rf) sqrt(log(d/delta))
///   [sqrt(Trace{I_P I_Q^{-2}}/n_P) + sqrt(Trace{I_Q^{-1}}/n_Q)].
pub fn confidence_radius(
    fp: &FisherPair,
    tc: &TheoremConstants,
    n_p: usize,
    n_q: usize,
) -> Result<f64> {
    check_sample_sizes(n_p, n_q)?;
    let f = fisher_functionals(fp)?;
    let d = fp.dim() as f64;
    Ok(3.0
        * tc.k_abs
        * (1.0 + tc.c_dr)
        * (1.0 + tc.c_rf)
        * (d / tc.delta).ln().sqrt()
        * ((f.trace_p_qq / n_p as f64).sqrt() + (f.trace_q_inv / n_q as f64).sqrt()))
}

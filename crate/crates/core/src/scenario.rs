//! Synthetic covariate-shift scenarios with exact oracles.
//!
//! A scenario holds a source law P and a target law Q for the covariates,
//! both Gaussians truncated to the same centered ball, plus a shared
//! regression function f*(x) = link(theta*' x) and a label noise model.
//! Truncation keeps the density ratio q(x)/p(x) finite on the support,
//! which is what makes oracle pilots and closed-form population risks
//! possible. Labels always live in [-1, 1]; constructors reject parameter
//! combinations that could violate that.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_lr;

use crate::config::ConfigMap;
use crate::rng::derive_rng;
use crate::{Error, Result};

/// Maximum rejection-sampling attempts for a single truncated draw.
const REJECTION_CAP: usize = 10_000;

/// Draw count for the one-time Monte Carlo moment pass used when no closed
/// form applies.
const MOMENT_MC_DRAWS: usize = 1_000_000;

/// Response link applied to the linear index theta' x.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// f(x; theta) = theta' x.
    Identity,
    /// f(x; theta) = (2/pi) atan(theta' x), bounded in (-1, 1).
    BoundedArctan,
}

impl Link {
    /// Link value at index u.
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Link::Identity => u,
            Link::BoundedArctan => std::f64::consts::FRAC_2_PI * u.atan(),
        }
    }

    /// First derivative with respect to the index.
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::BoundedArctan => std::f64::consts::FRAC_2_PI / (1.0 + u * u),
        }
    }

    /// Second derivative with respect to the index.
    pub fn second_derivative(self, u: f64) -> f64 {
        match self {
            Link::Identity => 0.0,
            Link::BoundedArctan => {
                let s = 1.0 + u * u;
                std::f64::consts::FRAC_2_PI * (-2.0 * u) / (s * s)
            }
        }
    }
}

/// Label noise given the regression value f = f*(x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// Y in {-1, +1} with P(Y = 1 | x) = (1 + f*(x)) / 2, so E[Y | x] = f*(x)
    /// and Var(Y | x) = 1 - f*(x)^2.
    BernoulliSign,
    /// Y = f*(x) + U with U uniform on [-half_width, half_width], so
    /// Var(Y | x) = half_width^2 / 3.
    UniformAdditive { half_width: f64 },
}

/// Which marginal law of a scenario to draw covariates from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawSide {
    Source,
    Target,
}

/// How the cached truncation constants were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentProvenance {
    /// One-dimensional interval truncation, normal CDF formulas.
    ClosedForm1d,
    /// Centered isotropic law, chi-square partial-expectation identity.
    ClosedFormIsotropic,
    /// Fixed-seed Monte Carlo pass with the given draw count.
    MonteCarlo { draws: usize },
}

/// A Gaussian law conditioned on the centered ball of a fixed radius.
#[derive(Debug)]
pub struct TruncatedGaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    radius: f64,
    chol_l: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_gauss_const: f64,
    mass: f64,
    second_moment: DMatrix<f64>,
    provenance: MomentProvenance,
}

/// Standard normal CDF.
fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Chi-square CDF with k degrees of freedom.
fn chi_square_cdf(k: f64, t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        gamma_lr(k / 2.0, t / 2.0)
    }
}

impl TruncatedGaussian {
    /// Build the law N(mean, cov) conditioned on the ball of `radius`.
    /// The covariance must be symmetric positive definite. The ball mass
    /// and the truncated second-moment matrix are computed here once:
    /// exactly for dim 1 and for centered isotropic laws, otherwise by a
    /// fixed-seed Monte Carlo pass.
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>, radius: f64) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 {
            return Err(Error::InvalidParam {
                name: "dim".into(),
                reason: "dimension must be at least 1".into(),
            });
        }
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::DimensionMismatch {
                context: "covariance".into(),
                expected: dim,
                got: cov.nrows(),
            });
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-12 * (1.0 + cov.abs().max()) {
            return Err(Error::NonPsdCovariance {
                which: "law".into(),
            });
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParam {
                name: "trunc_radius".into(),
                reason: format!("must be a positive real, got {radius}"),
            });
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NonPsdCovariance {
                which: "law".into(),
            })?;
        let chol_l = chol.l();
        let precision = chol.inverse();
        let log_det: f64 = (0..dim).map(|i| chol_l[(i, i)].ln() * 2.0).sum();
        let log_gauss_const =
            -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        let mean = DVector::from_vec(mean);

        let (mass, second_moment, provenance) =
            Self::truncation_stats(&mean, &cov, &chol_l, radius);
        if mass < 1e-3 {
            return Err(Error::InvalidParam {
                name: "trunc_radius".into(),
                reason: format!(
                    "ball of radius {radius} carries mass {mass:.2e}; rejection sampling impractical"
                ),
            });
        }
        Ok(Self {
            mean,
            cov,
            radius,
            chol_l,
            precision,
            log_gauss_const,
            mass,
            second_moment,
            provenance,
        })
    }

    fn truncation_stats(
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        chol_l: &DMatrix<f64>,
        radius: f64,
    ) -> (f64, DMatrix<f64>, MomentProvenance) {
        let dim = mean.len();
        if dim == 1 {
            let mu = mean[0];
            let sigma = cov[(0, 0)].sqrt();
            let alpha = (-radius - mu) / sigma;
            let beta = (radius - mu) / sigma;
            let mass = normal_cdf(beta) - normal_cdf(alpha);
            let (pa, pb) = (normal_pdf(alpha), normal_pdf(beta));
            let second = mu * mu
                + sigma * sigma
                + 2.0 * mu * sigma * (pa - pb) / mass
                + sigma * sigma * (alpha * pa - beta * pb) / mass;
            return (
                mass,
                DMatrix::from_element(1, 1, second),
                MomentProvenance::ClosedForm1d,
            );
        }

        let centered = mean.iter().all(|&m| m == 0.0);
        let sigma2 = cov[(0, 0)];
        let isotropic = centered
            && (0..dim).all(|i| cov[(i, i)] == sigma2)
            && (0..dim).all(|i| (0..dim).all(|j| i == j || cov[(i, j)] == 0.0));
        if isotropic {
            // For W = |X|^2 / sigma^2 ~ chi-square(d): E[W 1{W <= t}] = d F_{d+2}(t),
            // so E[X X' | ball] = sigma^2 F_{d+2}(t) / F_d(t) * I.
            let t = radius * radius / sigma2;
            let mass = chi_square_cdf(dim as f64, t);
            let scale = sigma2 * chi_square_cdf(dim as f64 + 2.0, t) / mass;
            return (
                mass,
                DMatrix::identity(dim, dim) * scale,
                MomentProvenance::ClosedFormIsotropic,
            );
        }

        let mut rng = derive_rng(0, "trunc-moments", &[dim as u64]);
        let mut inside = 0usize;
        let mut acc = DMatrix::zeros(dim, dim);
        let mut z = DVector::zeros(dim);
        for _ in 0..MOMENT_MC_DRAWS {
            for zi in z.iter_mut() {
                *zi = rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            let x = mean + chol_l * &z;
            if x.norm() <= radius {
                inside += 1;
                acc.syger(1.0, &x, &x, 1.0);
            }
        }
        let mass = inside as f64 / MOMENT_MC_DRAWS as f64;
        let m = if inside > 0 {
            acc / inside as f64
        } else {
            DMatrix::zeros(dim, dim)
        };
        // syger fills the lower triangle; mirror it.
        let mut full = m.clone();
        for i in 0..dim {
            for j in (i + 1)..dim {
                full[(i, j)] = m[(j, i)];
            }
        }
        (
            mass,
            full,
            MomentProvenance::MonteCarlo {
                draws: MOMENT_MC_DRAWS,
            },
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Probability mass the untruncated Gaussian puts on the ball.
    pub fn ball_mass(&self) -> f64 {
        self.mass
    }

    /// E[X X'] under the truncated law.
    pub fn second_moment(&self) -> &DMatrix<f64> {
        &self.second_moment
    }

    pub fn moment_provenance(&self) -> MomentProvenance {
        self.provenance
    }

    /// Log density of the *untruncated* Gaussian at x.
    pub fn log_gaussian_density(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.mean;
        let q = (&self.precision * &d).dot(&d);
        self.log_gauss_const - 0.5 * q
    }

    /// Whether x lies inside the truncation ball.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().map(|v| v * v).sum::<f64>().sqrt() <= self.radius
    }

    /// One draw from the truncated law by rejection.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let dim = self.dim();
        let mut z = DVector::zeros(dim);
        for _ in 0..REJECTION_CAP {
            for zi in z.iter_mut() {
                *zi = rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            let x = &self.mean + &self.chol_l * &z;
            if x.norm() <= self.radius {
                return Ok(x.iter().cloned().collect());
            }
        }
        Err(Error::TruncationCapExceeded {
            attempts: REJECTION_CAP,
        })
    }
}

/// A paired dataset: labeled source points and unlabeled target covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub dim: usize,
    pub source_x: Vec<Vec<f64>>,
    pub source_y: Vec<f64>,
    pub target_x: Vec<Vec<f64>>,
}

impl PairedSample {
    pub fn n_source(&self) -> usize {
        self.source_x.len()
    }

    pub fn n_target(&self) -> usize {
        self.target_x.len()
    }

    /// Split source and target each into two parts by a seeded permutation.
    /// The first part receives floor(n/2) points, the second the rest.
    pub fn split_half(&self, seed: u64) -> (PairedSample, PairedSample) {
        let mut rng = derive_rng(seed, "split-half", &[]);
        let shuffle = |n: usize, rng: &mut ChaCha8Rng| {
            let mut ix: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                ix.swap(i, j);
            }
            ix
        };
        let src_ix = shuffle(self.n_source(), &mut rng);
        let tgt_ix = shuffle(self.n_target(), &mut rng);
        let (s1, s2) = src_ix.split_at(self.n_source() / 2);
        let (t1, t2) = tgt_ix.split_at(self.n_target() / 2);
        let pick = |ix: &[usize]| PairedSample {
            dim: self.dim,
            source_x: Vec::new(),
            source_y: Vec::new(),
            target_x: ix.iter().map(|&i| self.target_x[i].clone()).collect(),
        };
        let mut first = pick(t1);
        first.source_x = s1.iter().map(|&i| self.source_x[i].clone()).collect();
        first.source_y = s1.iter().map(|&i| self.source_y[i]).collect();
        let mut second = pick(t2);
        second.source_x = s2.iter().map(|&i| self.source_x[i].clone()).collect();
        second.source_y = s2.iter().map(|&i| self.source_y[i]).collect();
        (first, second)
    }

    /// Write the sample as two CSV files with headers
    /// (`x1,...,xd,y` and `x1,...,xd`). Floats use shortest
    /// round-trip formatting, so `load_csv` reproduces the sample exactly.
    pub fn save_csv(&self, source_path: &Path, target_path: &Path) -> Result<()> {
        let mut src = std::io::BufWriter::new(std::fs::File::create(source_path)?);
        let header: Vec<String> = (1..=self.dim).map(|j| format!("x{j}")).collect();
        writeln!(src, "{},y", header.join(","))?;
        for (x, y) in self.source_x.iter().zip(&self.source_y) {
            let row: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
            writeln!(src, "{},{y}", row.join(","))?;
        }
        let mut tgt = std::io::BufWriter::new(std::fs::File::create(target_path)?);
        writeln!(tgt, "{}", header.join(","))?;
        for x in &self.target_x {
            let row: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
            writeln!(tgt, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// What to do with labels outside [-1, 1] when ingesting CSV data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelPolicy {
    /// Fail with the offending line number.
    Reject,
    /// Divide every label by max |y| when that max exceeds 1.
    Rescale,
}

/// Schema for CSV ingestion.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub dim: usize,
    pub has_header: bool,
    pub label_policy: LabelPolicy,
}

fn parse_csv_row(
    path: &str,
    lineno: usize,
    line: &str,
    expected: usize,
) -> Result<Vec<f64>> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expected {
        return Err(Error::Csv {
            path: path.into(),
            line: lineno,
            reason: format!("expected {expected} fields, got {}", fields.len()),
        });
    }
    fields
        .iter()
        .enumerate()
        .map(|(j, tok)| {
            let v: f64 = tok.trim().parse().map_err(|_| Error::Csv {
                path: path.into(),
                line: lineno,
                reason: format!("field {}: invalid number `{}`", j + 1, tok.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    path: path.into(),
                    line: lineno,
                    reason: format!("field {}: non-finite value", j + 1),
                });
            }
            Ok(v)
        })
        .collect()
}

/// Load a paired sample from a labeled source CSV (`x1..xd,y` per row) and
/// an unlabeled target CSV (`x1..xd` per row). Line numbers in errors are
/// 1-based file line numbers (the header, when present, is line 1).
pub fn load_csv(
    source_path: &Path,
    target_path: &Path,
    schema: &CsvSchema,
) -> Result<PairedSample> {
    let read_rows = |path: &Path, width: usize| -> Result<Vec<Vec<f64>>> {
        let name = path.display().to_string();
        let file = std::fs::File::open(path)?;
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if schema.has_header && i == 0 {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            rows.push(parse_csv_row(&name, i + 1, &line, width)?);
        }
        Ok(rows)
    };
    let src_rows = read_rows(source_path, schema.dim + 1)?;
    let tgt_rows = read_rows(target_path, schema.dim)?;
    if src_rows.is_empty() {
        return Err(Error::EmptySample {
            which: "source".into(),
        });
    }
    if tgt_rows.is_empty() {
        return Err(Error::EmptySample {
            which: "target".into(),
        });
    }
    let mut source_x = Vec::with_capacity(src_rows.len());
    let mut source_y = Vec::with_capacity(src_rows.len());
    for mut row in src_rows {
        let y = row.pop().expect("row width checked above");
        source_x.push(row);
        source_y.push(y);
    }
    let max_abs = source_y.iter().fold(0.0_f64, |m, y| m.max(y.abs()));
    if max_abs > 1.0 {
        match schema.label_policy {
            LabelPolicy::Rescale => {
                for y in &mut source_y {
                    *y /= max_abs;
                }
            }
            LabelPolicy::Reject => {
                // Recover the first offending file line for the message.
                let offender = source_y.iter().position(|y| y.abs() > 1.0).unwrap_or(0);
                let line = offender + if schema.has_header { 2 } else { 1 };
                return Err(Error::Csv {
                    path: source_path.display().to_string(),
                    line,
                    reason: format!(
                        "label {} outside [-1, 1] (policy: reject)",
                        source_y[offender]
                    ),
                });
            }
        }
    }
    Ok(PairedSample {
        dim: schema.dim,
        source_x,
        source_y,
        target_x: tgt_rows,
    })
}

/// A complete covariate-shift scenario: truncated Gaussian source and
/// target laws over a shared ball, the regression parameter, the link, and
/// the label noise model.
#[derive(Debug)]
pub struct ShiftScenario {
    source: TruncatedGaussian,
    target: TruncatedGaussian,
    theta_star: DVector<f64>,
    link: Link,
    noise: NoiseModel,
    seed_domain: String,
    max_ratio: OnceLock<f64>,
}

impl ShiftScenario {
    pub fn new(
        source: TruncatedGaussian,
        target: TruncatedGaussian,
        theta_star: Vec<f64>,
        link: Link,
        noise: NoiseModel,
        seed_domain: impl Into<String>,
    ) -> Result<Self> {
        let dim = source.dim();
        if target.dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "target law".into(),
                expected: dim,
                got: target.dim(),
            });
        }
        if theta_star.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "theta_star".into(),
                expected: dim,
                got: theta_star.len(),
            });
        }
        if source.radius() != target.radius() {
            return Err(Error::InvalidParam {
                name: "trunc_radius".into(),
                reason: "source and target must share the truncation ball".into(),
            });
        }
        let theta_star = DVector::from_vec(theta_star);
        let radius = source.radius();
        let sup_index = theta_star.norm() * radius;
        let sup_bayes = match link {
            Link::Identity => sup_index,
            Link::BoundedArctan => Link::BoundedArctan.apply(sup_index).abs(),
        };
        if link == Link::Identity && sup_index > 1.0 {
            return Err(Error::BoundednessViolated {
                detail: format!(
                    "identity link needs |theta*| * radius <= 1, got {sup_index:.6}"
                ),
            });
        }
        match noise {
            NoiseModel::BernoulliSign => {}
            NoiseModel::UniformAdditive { half_width } => {
                if !(half_width >= 0.0) {
                    return Err(Error::InvalidParam {
                        name: "noise.half_width".into(),
                        reason: "must be nonnegative".into(),
                    });
                }
                if sup_bayes + half_width > 1.0 {
                    return Err(Error::BoundednessViolated {
                        detail: format!(
                            "uniform-additive noise needs sup |f*| + half_width <= 1, got {:.6}",
                            sup_bayes + half_width
                        ),
                    });
                }
            }
        }
        Ok(Self {
            source,
            target,
            theta_star,
            link,
            noise,
            seed_domain: seed_domain.into(),
            max_ratio: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn trunc_radius(&self) -> f64 {
        self.source.radius()
    }

    pub fn source_law(&self) -> &TruncatedGaussian {
        &self.source
    }

    pub fn target_law(&self) -> &TruncatedGaussian {
        &self.target
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn seed_domain(&self) -> &str {
        &self.seed_domain
    }

    /// Largest |f*| over the truncation ball.
    pub fn sup_bayes(&self) -> f64 {
        self.link
            .apply(self.theta_star.norm() * self.trunc_radius())
            .abs()
    }

    fn purpose(&self, tag: &str) -> String {
        format!("{}/{}", self.seed_domain, tag)
    }

    /// True density ratio q(x)/p(x) of the truncated laws. Errors for
    /// points outside the shared ball, where the ratio is undefined.
    pub fn oracle_density_ratio(&self, x: &[f64]) -> Result<f64> {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > self.trunc_radius() {
            return Err(Error::OutsideSupport {
                norm,
                radius: self.trunc_radius(),
            });
        }
        Ok(self.density_ratio_formula(x))
    }

    /// The ratio formula without the support check; used by oracle pilots,
    /// which must be total functions.
    pub(crate) fn density_ratio_formula(&self, x: &[f64]) -> f64 {
        let log_ratio =
            self.target.log_gaussian_density(x) - self.source.log_gaussian_density(x);
        log_ratio.exp() * self.source.ball_mass() / self.target.ball_mass()
    }

    /// Largest density-ratio value over the ball, estimated once by a
    /// fixed-seed scan of draws from both laws plus the ball boundary in
    /// the mean-difference direction. Used for validating clip levels.
    pub fn max_density_ratio(&self) -> f64 {
        *self.max_ratio.get_or_init(|| {
            let mut rng = derive_rng(0, "max-ratio-scan", &[self.dim() as u64]);
            let mut best: f64 = 0.0;
            for side in [LawSide::Source, LawSide::Target] {
                let law = match side {
                    LawSide::Source => &self.source,
                    LawSide::Target => &self.target,
                };
                for _ in 0..4000 {
                    if let Ok(x) = law.sample(&mut rng) {
                        best = best.max(self.density_ratio_formula(&x));
                    }
                }
            }
            let diff = self.target.mean() - self.source.mean();
            let dir = if diff.norm() > 0.0 {
                diff.normalize()
            } else {
                DVector::from_element(self.dim(), 1.0 / (self.dim() as f64).sqrt())
            };
            for t in [-1.0, -0.5, 0.5, 1.0] {
                let x = &dir * (t * self.trunc_radius());
                let x: Vec<f64> = x.iter().cloned().collect();
                best = best.max(self.density_ratio_formula(&x));
            }
            best
        })
    }

    /// Bayes regression function f*(x).
    pub fn oracle_bayes(&self, x: &[f64]) -> f64 {
        let u: f64 = self
            .theta_star
            .iter()
            .zip(x)
            .map(|(t, v)| t * v)
            .sum();
        self.link.apply(u)
    }

    /// Conditional label variance Var(Y | X = x).
    pub fn noise_variance_at(&self, x: &[f64]) -> f64 {
        match self.noise {
            NoiseModel::BernoulliSign => {
                let f = self.oracle_bayes(x);
                1.0 - f * f
            }
            NoiseModel::UniformAdditive { half_width } => half_width * half_width / 3.0,
        }
    }

    /// Draw a label for covariate x.
    pub fn draw_label(&self, x: &[f64], rng: &mut ChaCha8Rng) -> f64 {
        let f = self.oracle_bayes(x);
        match self.noise {
            NoiseModel::BernoulliSign => {
                let u: f64 = rng.gen();
                if u < 0.5 * (1.0 + f) {
                    1.0
                } else {
                    -1.0
                }
            }
            NoiseModel::UniformAdditive { half_width } => {
                let u: f64 = rng.gen();
                f + (2.0 * u - 1.0) * half_width
            }
        }
    }

    /// Draw covariates from one of the marginal laws.
    pub fn sample_x(
        &self,
        side: LawSide,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let law = match side {
            LawSide::Source => &self.source,
            LawSide::Target => &self.target,
        };
        (0..n).map(|_| law.sample(rng)).collect()
    }

    /// Draw a full paired dataset: n_p labeled source points, then n_q
    /// target covariates, from the stream
    /// `(seed, "<seed_domain>/sample", [n_p, n_q])`.
    pub fn sample_dataset(&self, n_p: usize, n_q: usize, seed: u64) -> Result<PairedSample> {
        if n_p == 0 {
            return Err(Error::EmptySample {
                which: "source".into(),
            });
        }
        if n_q == 0 {
            return Err(Error::EmptySample {
                which: "target".into(),
            });
        }
        let mut rng = derive_rng(seed, &self.purpose("sample"), &[n_p as u64, n_q as u64]);
        let mut source_x = Vec::with_capacity(n_p);
        let mut source_y = Vec::with_capacity(n_p);
        for _ in 0..n_p {
            let x = self.source.sample(&mut rng)?;
            let y = self.draw_label(&x, &mut rng);
            source_x.push(x);
            source_y.push(y);
        }
        let target_x = self.sample_x(LawSide::Target, n_q, &mut rng)?;
        Ok(PairedSample {
            dim: self.dim(),
            source_x,
            source_y,
            target_x,
        })
    }

    /// E[X X'] under the truncated source law.
    pub fn source_second_moment(&self) -> &DMatrix<f64> {
        self.source.second_moment()
    }

    /// E[X X'] under the truncated target law.
    pub fn target_second_moment(&self) -> &DMatrix<f64> {
        self.target.second_moment()
    }
}

/// Convenience constructor for isotropic-covariance scenarios, the common
/// case in tests and demos.
pub fn isotropic_scenario(
    dim: usize,
    source_mean: Vec<f64>,
    source_var: f64,
    target_mean: Vec<f64>,
    target_var: f64,
    theta_star: Vec<f64>,
    link: Link,
    noise: NoiseModel,
    radius: f64,
    seed_domain: &str,
) -> Result<ShiftScenario> {
    let source = TruncatedGaussian::new(
        source_mean,
        DMatrix::identity(dim, dim) * source_var,
        radius,
    )?;
    let target = TruncatedGaussian::new(
        target_mean,
        DMatrix::identity(dim, dim) * target_var,
        radius,
    )?;
    ShiftScenario::new(source, target, theta_star, link, noise, seed_domain)
}

fn law_from_config(cfg: &ConfigMap, side: &str, dim: usize, radius: f64) -> Result<TruncatedGaussian> {
    let mean_key = format!("scenario.{side}_mean");
    let mean = if cfg.contains(&mean_key) {
        let v = cfg.get_f64_list(&mean_key)?;
        if v.len() != dim {
            return Err(Error::Config {
                key: mean_key,
                reason: format!("expected {dim} entries, got {}", v.len()),
            });
        }
        v
    } else {
        vec![0.0; dim]
    };
    let cov_key = format!("scenario.{side}_cov");
    let cov = if cfg.contains(&cov_key) {
        let entries = cfg.get_f64_list(&cov_key)?;
        if entries.len() != dim * dim {
            return Err(Error::Config {
                key: cov_key,
                reason: format!(
                    "expected {} row-major entries for dimension {dim}, got {}",
                    dim * dim,
                    entries.len()
                ),
            });
        }
        DMatrix::from_row_slice(dim, dim, &entries)
    } else {
        let var = cfg.get_f64_or(&format!("scenario.{side}_var"), 1.0)?;
        DMatrix::identity(dim, dim) * var
    };
    TruncatedGaussian::new(mean, cov, radius)
}

/// Build a scenario from flat config keys: `scenario.dim`,
/// `scenario.trunc_radius`, `scenario.theta_star`, per-side
/// `scenario.{source,target}_mean` and either `..._cov` (row-major) or
/// the isotropic shorthand `..._var`, plus `scenario.link`,
/// `scenario.noise` (with `scenario.noise.half_width`), and
/// `scenario.seed_domain`.
pub fn make_gaussian_shift_scenario(cfg: &ConfigMap) -> Result<ShiftScenario> {
    let dim = cfg.get_usize("scenario.dim")?;
    let radius = cfg.get_f64("scenario.trunc_radius")?;
    let theta_star = cfg.get_f64_list("scenario.theta_star")?;
    if theta_star.len() != dim {
        return Err(Error::Config {
            key: "scenario.theta_star".into(),
            reason: format!("expected {dim} entries, got {}", theta_star.len()),
        });
    }
    let link = match cfg.get_str_or("scenario.link", "identity") {
        "identity" => Link::Identity,
        "bounded-arctan" => Link::BoundedArctan,
        other => {
            return Err(Error::Config {
                key: "scenario.link".into(),
                reason: format!("expected identity or bounded-arctan, got `{other}`"),
            })
        }
    };
    let noise = match cfg.get_str_or("scenario.noise", "bernoulli-sign") {
        "bernoulli-sign" => NoiseModel::BernoulliSign,
        "uniform-additive" => NoiseModel::UniformAdditive {
            half_width: cfg.get_f64("scenario.noise.half_width")?,
        },
        other => {
            return Err(Error::Config {
                key: "scenario.noise".into(),
                reason: format!("expected bernoulli-sign or uniform-additive, got `{other}`"),
            })
        }
    };
    let source = law_from_config(cfg, "source", dim, radius)?;
    let target = law_from_config(cfg, "target", dim, radius)?;
    ShiftScenario::new(
        source,
        target,
        theta_star,
        link,
        noise,
        cfg.get_str_or("scenario.seed_domain", "scenario").to_string(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_1d_scenario(target_var: f64) -> ShiftScenario {
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
            "test",
        )
        .unwrap()
    }

    #[test]
    fn truncated_1d_moments_match_known_values() {
        // Standard normal truncated to [-3, 3].
        let law = TruncatedGaussian::new(vec![0.0], DMatrix::identity(1, 1), 3.0).unwrap();
        let z = 2.0 * normal_cdf(3.0) - 1.0;
        assert!((law.ball_mass() - z).abs() < 1e-14);
        // E[X^2] = 1 - 2 * 3 * phi(3) / Z for the symmetric interval.
        let expected = 1.0 - 2.0 * 3.0 * normal_pdf(3.0) / z;
        assert!((law.second_moment()[(0, 0)] - expected).abs() < 1e-14);
        assert_eq!(law.moment_provenance(), MomentProvenance::ClosedForm1d);
    }

    #[test]
    fn shifted_1d_moments_match_quadrature() {
        // N(0.5, 2^2) truncated to [-4, 4]; compare against a fine Riemann sum.
        let law =
            TruncatedGaussian::new(vec![0.5], DMatrix::from_element(1, 1, 4.0), 4.0).unwrap();
        let n = 400_000;
        let (mut z, mut m2) = (0.0, 0.0);
        for i in 0..n {
            let x = -4.0 + 8.0 * (i as f64 + 0.5) / n as f64;
            let p = normal_pdf((x - 0.5) / 2.0) / 2.0;
            z += p;
            m2 += x * x * p;
        }
        let h = 8.0 / n as f64;
        let (z, m2) = (z * h, m2 * h);
        assert!((law.ball_mass() - z).abs() < 1e-8);
        assert!((law.second_moment()[(0, 0)] - m2 / z).abs() < 1e-6);
    }

    #[test]
    fn isotropic_moments_match_chi_square_identity() {
        let law =
            TruncatedGaussian::new(vec![0.0; 3], DMatrix::identity(3, 3) * 2.0, 2.5).unwrap();
        assert_eq!(
            law.moment_provenance(),
            MomentProvenance::ClosedFormIsotropic
        );
        let t = 2.5 * 2.5 / 2.0;
        let mass = chi_square_cdf(3.0, t);
        assert!((law.ball_mass() - mass).abs() < 1e-12);
        let scale = 2.0 * chi_square_cdf(5.0, t) / mass;
        for i in 0..3 {
            assert!((law.second_moment()[(i, i)] - scale).abs() < 1e-12);
        }
    }

    #[test]
    fn monte_carlo_moments_agree_with_isotropic_closed_form() {
        // Same law built two ways: exactly isotropic (closed form) and with a
        // cosmetically perturbed mean entry that forces the MC path.
        let exact =
            TruncatedGaussian::new(vec![0.0, 0.0], DMatrix::identity(2, 2), 2.0).unwrap();
        let mc = TruncatedGaussian::new(vec![1e-300, 0.0], DMatrix::identity(2, 2), 2.0)
            .unwrap();
        assert!(matches!(
            mc.moment_provenance(),
            MomentProvenance::MonteCarlo { .. }
        ));
        assert!((exact.ball_mass() - mc.ball_mass()).abs() < 5e-3);
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (exact.second_moment()[(i, j)] - mc.second_moment()[(i, j)]).abs() < 5e-3
                );
            }
        }
    }

    #[test]
    fn oracle_ratio_matches_hand_formula_in_1d() {
        let sc = unit_1d_scenario(4.0);
        // ratio = (1/2) exp(x^2 (1/2 - 1/8)) * Z_P / Z_Q on [-3, 3].
        let zp = sc.source_law().ball_mass();
        let zq = sc.target_law().ball_mass();
        for x in [-2.5_f64, -1.0, 0.0, 0.7, 2.9] {
            let expected = 0.5 * (x * x * (0.5 - 0.125)).exp() * zp / zq;
            let got = sc.oracle_density_ratio(&[x]).unwrap();
            assert!(
                (got - expected).abs() <= 1e-12 * expected.max(1.0),
                "x = {x}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn oracle_ratio_rejects_points_outside_ball() {
        let sc = unit_1d_scenario(4.0);
        let err = sc.oracle_density_ratio(&[3.5]).unwrap_err();
        assert!(matches!(err, Error::OutsideSupport { .. }));
    }

    #[test]
    fn ratio_transfers_source_means_to_target_means() {
        // E_P[rho(X) g(X)] = E_Q[g(X)] for g in {1, x, x^2}, within 4 MC
        // standard errors.
        let sc = unit_1d_scenario(2.25);
        let n = 100_000;
        let mut rng = derive_rng(11, "ratio-consistency", &[]);
        let xs_p = sc.sample_x(LawSide::Source, n, &mut rng).unwrap();
        let xs_q = sc.sample_x(LawSide::Target, n, &mut rng).unwrap();
        let gs: [fn(f64) -> f64; 3] = [|_| 1.0, |x| x, |x| x * x];
        for g in gs {
            let wp: Vec<f64> = xs_p
                .iter()
                .map(|x| sc.oracle_density_ratio(x).unwrap() * g(x[0]))
                .collect();
            let wq: Vec<f64> = xs_q.iter().map(|x| g(x[0])).collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let var = |v: &[f64], m: f64| {
                v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
            };
            let (mp, mq) = (mean(&wp), mean(&wq));
            let se = (var(&wp, mp) / n as f64 + var(&wq, mq) / n as f64).sqrt();
            assert!(
                (mp - mq).abs() <= 4.0 * se,
                "transfer failed: {mp} vs {mq} (se {se})"
            );
        }
    }

    #[test]
    fn labels_have_conditional_mean_f_star() {
        // Regressing y on f*(x) should give slope ~ 1 for both noise models.
        for noise in [
            NoiseModel::BernoulliSign,
            NoiseModel::UniformAdditive { half_width: 0.3 },
        ] {
            let sc = isotropic_scenario(
                1,
                vec![0.0],
                1.0,
                vec![0.5],
                1.0,
                vec![0.25],
                Link::Identity,
                noise,
                2.5,
                "label-test",
            )
            .unwrap();
            let data = sc.sample_dataset(100_000, 1, 5).unwrap();
            let f: Vec<f64> = data.source_x.iter().map(|x| sc.oracle_bayes(x)).collect();
            let fm = f.iter().sum::<f64>() / f.len() as f64;
            let ym = data.source_y.iter().sum::<f64>() / f.len() as f64;
            let mut sxy = 0.0;
            let mut sxx = 0.0;
            for (fi, yi) in f.iter().zip(&data.source_y) {
                sxy += (fi - fm) * (yi - ym);
                sxx += (fi - fm) * (fi - fm);
            }
            let slope = sxy / sxx;
            assert!(
                (slope - 1.0).abs() < 0.05,
                "slope {slope} for {noise:?}"
            );
        }
    }

    #[test]
    fn labels_stay_in_unit_interval() {
        let sc = isotropic_scenario(
            2,
            vec![0.0, 0.0],
            1.0,
            vec![0.3, 0.0],
            1.0,
            vec![0.2, 0.1],
            Link::BoundedArctan,
            NoiseModel::UniformAdditive { half_width: 0.5 },
            3.0,
            "bounds-test",
        )
        .unwrap();
        let data = sc.sample_dataset(5000, 10, 9).unwrap();
        assert!(data.source_y.iter().all(|y| (-1.0..=1.0).contains(y)));
    }

    #[test]
    fn samples_stay_inside_ball_and_are_reproducible() {
        let sc = unit_1d_scenario(4.0);
        let a = sc.sample_dataset(500, 300, 17).unwrap();
        let b = sc.sample_dataset(500, 300, 17).unwrap();
        assert_eq!(a, b);
        let c = sc.sample_dataset(500, 300, 18).unwrap();
        assert_ne!(a, c);
        let r = sc.trunc_radius();
        assert!(a
            .source_x
            .iter()
            .chain(a.target_x.iter())
            .all(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt() <= r));
    }

    #[test]
    fn identity_link_enforces_index_bound() {
        let err = isotropic_scenario(
            1,
            vec![0.0],
            1.0,
            vec![0.0],
            1.0,
            vec![0.5],
            Link::Identity,
            NoiseModel::BernoulliSign,
            3.0,
            "bad",
        )
        .unwrap_err();
        assert!(err.to_string().contains("boundedness violated"));
    }

    #[test]
    fn uniform_noise_enforces_total_amplitude() {
        let err = isotropic_scenario(
            1,
            vec![0.0],
            1.0,
            vec![0.0],
            1.0,
            vec![0.2],
            Link::Identity,
            NoiseModel::UniformAdditive { half_width: 0.5 },
            3.0,
            "bad",
        )
        .unwrap_err();
        assert!(err.to_string().contains("boundedness violated"));
    }

    #[test]
    fn mismatched_radii_rejected() {
        let source =
            TruncatedGaussian::new(vec![0.0], DMatrix::identity(1, 1), 3.0).unwrap();
        let target =
            TruncatedGaussian::new(vec![0.0], DMatrix::identity(1, 1), 2.0).unwrap();
        let err = ShiftScenario::new(
            source,
            target,
            vec![0.1],
            Link::Identity,
            NoiseModel::BernoulliSign,
            "test",
        )
        .unwrap_err();
        assert!(err.to_string().contains("truncation ball"));
    }

    #[test]
    fn non_psd_covariance_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = TruncatedGaussian::new(vec![0.0, 0.0], cov, 3.0).unwrap_err();
        assert!(matches!(err, Error::NonPsdCovariance { .. }));
    }

    #[test]
    fn split_half_partitions_points() {
        let sc = unit_1d_scenario(4.0);
        let data = sc.sample_dataset(101, 50, 3).unwrap();
        let (d1, d2) = data.split_half(7);
        assert_eq!(d1.n_source(), 50);
        assert_eq!(d2.n_source(), 51);
        assert_eq!(d1.n_target() + d2.n_target(), 50);
        let mut all: Vec<f64> = d1
            .source_y
            .iter()
            .chain(d2.source_y.iter())
            .cloned()
            .collect();
        let mut orig = data.source_y.clone();
        all.sort_by(f64::total_cmp);
        orig.sort_by(f64::total_cmp);
        assert_eq!(all, orig);
        // Same seed, same split.
        let (e1, _) = data.split_half(7);
        assert_eq!(d1, e1);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let sc = unit_1d_scenario(4.0);
        let data = sc.sample_dataset(40, 25, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("source.csv");
        let tp = dir.path().join("target.csv");
        data.save_csv(&sp, &tp).unwrap();
        let schema = CsvSchema {
            dim: 1,
            has_header: true,
            label_policy: LabelPolicy::Reject,
        };
        let back = load_csv(&sp, &tp, &schema).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn csv_errors_name_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("source.csv");
        let tp = dir.path().join("target.csv");
        std::fs::write(&sp, "0.5,1.5\n").unwrap();
        std::fs::write(&tp, "0.1\n").unwrap();
        let schema = CsvSchema {
            dim: 1,
            has_header: false,
            label_policy: LabelPolicy::Reject,
        };
        let err = load_csv(&sp, &tp, &schema).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":1:") && msg.contains("label 1.5"), "{msg}");

        std::fs::write(&sp, "0.5,0.5\nnot,a\n").unwrap();
        let err = load_csv(&sp, &tp, &schema).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");

        std::fs::write(&sp, "0.5,0.5,0.5\n").unwrap();
        let err = load_csv(&sp, &tp, &schema).unwrap_err();
        assert!(err.to_string().contains("expected 2 fields"), "{err}");
    }

    #[test]
    fn csv_rescale_policy_scales_labels() {
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("source.csv");
        let tp = dir.path().join("target.csv");
        std::fs::write(&sp, "1.0,2.0\n-1.0,-4.0\n").unwrap();
        std::fs::write(&tp, "0.0\n").unwrap();
        let schema = CsvSchema {
            dim: 1,
            has_header: false,
            label_policy: LabelPolicy::Rescale,
        };
        let data = load_csv(&sp, &tp, &schema).unwrap();
        assert_eq!(data.source_y, vec![0.5, -1.0]);
    }

    #[test]
    fn empty_target_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("source.csv");
        let tp = dir.path().join("target.csv");
        std::fs::write(&sp, "0.5,0.5\n").unwrap();
        std::fs::write(&tp, "").unwrap();
        let schema = CsvSchema {
            dim: 1,
            has_header: false,
            label_policy: LabelPolicy::Reject,
        };
        let err = load_csv(&sp, &tp, &schema).unwrap_err();
        assert!(err.to_string().contains("target"));
    }

    #[test]
    fn scenario_from_config_zero_shift() {
        let cfg = ConfigMap::parse(
            "scenario.dim = 1\nscenario.trunc_radius = 3.0\nscenario.theta_star = 0.0\n",
        )
        .unwrap();
        let sc = make_gaussian_shift_scenario(&cfg).unwrap();
        assert_eq!(sc.oracle_density_ratio(&[0.7]).unwrap(), 1.0);
        assert_eq!(sc.oracle_bayes(&[0.7]), 0.0);
        assert_eq!(sc.link(), Link::Identity);
    }

    #[test]
    fn scenario_from_config_full_keys() {
        let text = "scenario.dim = 2\n\
                    scenario.trunc_radius = 2.5\n\
                    scenario.theta_star = 0.2, -0.1\n\
                    scenario.source_mean = 0.0, 0.0\n\
                    scenario.source_cov = 1.0, 0.2, 0.2, 1.0\n\
                    scenario.target_mean = 0.5, 0.0\n\
                    scenario.target_var = 1.5\n\
                    scenario.link = bounded-arctan\n\
                    scenario.noise = uniform-additive\n\
                    scenario.noise.half_width = 0.1\n\
                    scenario.seed_domain = demo\n";
        let sc = make_gaussian_shift_scenario(&ConfigMap::parse(text).unwrap()).unwrap();
        assert_eq!(sc.dim(), 2);
        assert_eq!(sc.trunc_radius(), 2.5);
        assert_eq!(sc.link(), Link::BoundedArctan);
        assert_eq!(sc.seed_domain(), "demo");
        assert_eq!(sc.source_law().covariance()[(0, 1)], 0.2);
        assert_eq!(sc.target_law().covariance()[(0, 0)], 1.5);
    }

    #[test]
    fn scenario_from_config_rejects_bad_values() {
        let base = "scenario.dim = 1\nscenario.trunc_radius = 3.0\n";
        // Boundedness violated: |theta*| * radius = 1.5 under identity.
        let cfg = ConfigMap::parse(&format!("{base}scenario.theta_star = 0.5\n")).unwrap();
        let err = make_gaussian_shift_scenario(&cfg).unwrap_err();
        assert!(err.to_string().contains("boundedness"), "{err}");

        let cfg =
            ConfigMap::parse(&format!("{base}scenario.theta_star = 0.1\nscenario.link = probit\n"))
                .unwrap();
        let err = make_gaussian_shift_scenario(&cfg).unwrap_err();
        assert!(err.to_string().contains("scenario.link"), "{err}");

        let cfg = ConfigMap::parse(
            "scenario.dim = 2\nscenario.trunc_radius = 3.0\nscenario.theta_star = 0.1\n",
        )
        .unwrap();
        let err = make_gaussian_shift_scenario(&cfg).unwrap_err();
        assert!(err.to_string().contains("theta_star"), "{err}");
    }
}

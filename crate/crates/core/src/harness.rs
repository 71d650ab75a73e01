//! Replicated simulation studies for the DR covariate shift estimator:
//! rate studies over an n-grid, double-robustness corruption sweeps,
//! cross-fitted estimation, estimator comparisons, excess-risk bound
//! dominance checks, and least-squares slope estimation, together with
//! deterministic persistence of results.
//!
//! Every replication derives its RNG stream from (master seed, cell
//! index, replication index), so results do not depend on scheduling and
//! are identical across serial and parallel execution. Replication
//! summaries use medians and interquartile ranges rather than means:
//! excess risks at small n are heavy-tailed and means would corrupt the
//! fitted rate slopes.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::complexity::{
    rademacher_under_law, structure_agnostic_bound, FunctionClassSpec, SignConfig,
    StructureAgnosticInputs,
};
use crate::config::ConfigMap;
use crate::error::Error;
use crate::linalg::sym_solve;
use crate::paramdr::{minimize_dr, solve_linear_dr, OptConfig, ParametricModel};
use crate::pilots::{
    fit_logistic_ratio, fit_pilot_regression, fit_ulsif, pilot_l2_error, CorruptionDirection,
    LogisticConfig, RatioEstimate, RegressionEstimate, RegressionFeatures, RidgeConfig,
    UlsifConfig,
};
use crate::risk::{excess_q_risk, McConfig, Predictor};
use crate::rng::derive_rng;
use crate::scenario::{make_gaussian_shift_scenario, LawSide, Link, PairedSample, ShiftScenario};
use crate::Result;

/// How the density-ratio pilot is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioMethod {
    /// The true ratio q_X/p_X, clipped.
    Oracle,
    /// Least-squares importance fitting on an RBF basis.
    Ulsif,
    /// Odds of a regularized logistic source/target discriminator.
    Logistic,
}

/// How the regression pilot is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegMethod {
    /// The true Bayes regression function, clipped.
    Oracle,
    /// Ridge regression on the source sample.
    Ridge,
}

/// Pilot construction settings shared by all harness studies.
#[derive(Debug, Clone)]
pub struct PilotRecipe {
    pub ratio_method: RatioMethod,
    /// Ridge level of the uLSIF system, or the L2 penalty of the
    /// logistic discriminator.
    pub ratio_lambda: f64,
    pub reg_method: RegMethod,
    pub reg_lambda: f64,
    /// Feature map of the ridge regression pilot.
    pub reg_features: RegressionFeatures,
    /// Clip level C_dr for the ratio pilot.
    pub c_dr: f64,
    /// Clip level C_rf for the regression pilot.
    pub c_rf: f64,
}

impl PilotRecipe {
    /// Read the `pilot.*` keys. Defaults: oracle pilots, ratio lambda
    /// 0.1, regression lambda 1e-3, identity regression features, clips
    /// c_dr = 30 and c_rf = 1.
    pub fn from_config(cfg: &ConfigMap) -> Result<Self> {
        let ratio_method = match cfg.get_str_or("pilot.ratio.method", "oracle") {
            "oracle" => RatioMethod::Oracle,
            "ulsif" => RatioMethod::Ulsif,
            "logistic" => RatioMethod::Logistic,
            other => {
                return Err(Error::Config {
                    key: "pilot.ratio.method".into(),
                    reason: format!("expected oracle, ulsif, or logistic, got `{other}`"),
                })
            }
        };
        let reg_method = match cfg.get_str_or("pilot.reg.method", "oracle") {
            "oracle" => RegMethod::Oracle,
            "ridge" => RegMethod::Ridge,
            other => {
                return Err(Error::Config {
                    key: "pilot.reg.method".into(),
                    reason: format!("expected oracle or ridge, got `{other}`"),
                })
            }
        };
        let reg_features = match cfg.get_str_or("pilot.reg.features", "identity") {
            "identity" => RegressionFeatures::Identity,
            "affine" => RegressionFeatures::Affine,
            other => {
                return Err(Error::Config {
                    key: "pilot.reg.features".into(),
                    reason: format!("expected identity or affine, got `{other}`"),
                })
            }
        };
        Ok(Self {
            ratio_method,
            ratio_lambda: cfg.get_f64_or("pilot.ratio.lambda", 0.1)?,
            reg_method,
            reg_lambda: cfg.get_f64_or("pilot.reg.lambda", 1e-3)?,
            reg_features,
            c_dr: cfg.get_f64_or("pilot.clip.c_dr", 30.0)?,
            c_rf: cfg.get_f64_or("pilot.clip.c_rf", 1.0)?,
        })
    }

    /// Fit both pilots on `sample`. Oracle pilots ignore the sample, so
    /// cross-fitting with oracle pilots reproduces the full-sample
    /// oracle fit on the estimation half exactly.
    pub fn fit(
        &self,
        sc: &Arc<ShiftScenario>,
        sample: &PairedSample,
        seed: u64,
    ) -> Result<(RatioEstimate, RegressionEstimate)> {
        let rho = match self.ratio_method {
            RatioMethod::Oracle => RatioEstimate::oracle(sc, self.c_dr)?,
            RatioMethod::Ulsif => fit_ulsif(
                sample,
                &UlsifConfig {
                    lambda: self.ratio_lambda,
                    seed,
                    ..UlsifConfig::default()
                },
                self.c_dr,
            )?,
            RatioMethod::Logistic => fit_logistic_ratio(
                sample,
                &LogisticConfig {
                    l2_penalty: self.ratio_lambda,
                    ..LogisticConfig::default()
                },
                self.c_dr,
            )?,
        };
        let f0 = match self.reg_method {
            RegMethod::Oracle => RegressionEstimate::oracle(sc, self.c_rf)?,
            RegMethod::Ridge => fit_pilot_regression(
                sample,
                &RidgeConfig {
                    lambda: self.reg_lambda,
                    features: self.reg_features,
                },
                self.c_rf,
            )?,
        };
        Ok((rho, f0))
    }
}

/// Parse a corruption direction of the form `constant`, `coordinate:i`,
/// or `radial-tail:q`; `key` names the config key in error messages.
pub fn parse_direction(text: &str, key: &str) -> Result<CorruptionDirection> {
    if text == "constant" {
        return Ok(CorruptionDirection::Constant);
    }
    if let Some(rest) = text.strip_prefix("coordinate:") {
        let i = rest.parse::<usize>().map_err(|_| Error::Config {
            key: key.into(),
            reason: format!("bad coordinate index `{rest}`"),
        })?;
        return Ok(CorruptionDirection::Coordinate(i));
    }
    if let Some(rest) = text.strip_prefix("radial-tail:") {
        let q = rest.parse::<f64>().map_err(|_| Error::Config {
            key: key.into(),
            reason: format!("bad quantile `{rest}`"),
        })?;
        return Ok(CorruptionDirection::RadialTail { quantile: q });
    }
    Err(Error::Config {
        key: key.into(),
        reason: format!("expected constant, coordinate:i, or radial-tail:q, got `{text}`"),
    })
}

/// Model and solver settings shared by all harness fits.
#[derive(Debug)]
struct ModelSettings {
    model: ParametricModel,
    ridge_eps: f64,
    opt: OptConfig,
}

fn model_settings(cfg: &ConfigMap, sc: &ShiftScenario) -> Result<ModelSettings> {
    let base = ParametricModel::for_scenario(sc)?;
    let default_link = match sc.link() {
        Link::Identity => "identity",
        Link::BoundedArctan => "bounded-arctan",
    };
    let model = match cfg.get_str_or("model.link", default_link) {
        "identity" => {
            if sc.link() == Link::Identity {
                base
            } else {
                ParametricModel::new(sc.dim(), Link::Identity, base.feature_cap())?
            }
        }
        "bounded-arctan" => {
            if sc.link() == Link::BoundedArctan {
                base
            } else {
                ParametricModel::new(sc.dim(), Link::BoundedArctan, base.feature_cap())?
            }
        }
        other => {
            return Err(Error::Config {
                key: "model.link".into(),
                reason: format!("expected identity or bounded-arctan, got `{other}`"),
            })
        }
    };
    let ridge_eps = cfg.get_f64_or("model.ridge_eps", 0.0)?;
    let opt = OptConfig {
        tol: cfg.get_f64_or("opt.tol", OptConfig::default().tol)?,
        max_iters: cfg.get_usize_or("opt.max_iters", OptConfig::default().max_iters)?,
    };
    Ok(ModelSettings {
        model,
        ridge_eps,
        opt,
    })
}

/// Fit the DR estimator: closed form for the identity link, gradient
/// descent from zero otherwise.
fn fit_dr_theta(
    ms: &ModelSettings,
    sample: &PairedSample,
    rho: &RatioEstimate,
    f0: &RegressionEstimate,
) -> Result<DVector<f64>> {
    match ms.model.link() {
        Link::Identity => solve_linear_dr(sample, rho, f0, &ms.model, ms.ridge_eps),
        Link::BoundedArctan => {
            let theta0 = DVector::zeros(ms.model.dim());
            minimize_dr(sample, rho, f0, &ms.model, &theta0, &ms.opt).map(|(theta, _)| theta)
        }
    }
}

/// Weighted least squares on the source sample: minimizes the mean of
/// w(x) (y - theta'x)^2 plus a ridge term. With `rho = None` the weights
/// are one (source ERM); with the oracle or an estimated ratio this is
/// the importance-weighted estimator.
fn solve_weighted_ls(
    sample: &PairedSample,
    rho: Option<&RatioEstimate>,
    ridge_eps: f64,
) -> Result<DVector<f64>> {
    if sample.source_x.is_empty() {
        return Err(Error::EmptySample {
            which: "source".into(),
        });
    }
    let d = sample.dim;
    let n = sample.n_source() as f64;
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    let mut xv = DVector::zeros(d);
    for (x, y) in sample.source_x.iter().zip(&sample.source_y) {
        let w = rho.map_or(1.0, |r| r.evaluate(x));
        xv.copy_from_slice(x);
        gram.syger(w / n, &xv, &xv, 1.0);
        rhs.axpy(w * y / n, &xv, 1.0);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let system = gram + DMatrix::identity(d, d) * ridge_eps;
    sym_solve(
        &system,
        &rhs,
        "weighted source Gram",
        "singular; need n_P >= d or ridge_eps > 0",
    )
}

/// Median of a nonempty slice (average of the two central order
/// statistics for even lengths).
pub fn median(values: &[f64]) -> f64 {
    quantile_of(values, 0.5)
}

/// Interquartile range: the 0.75 quantile minus the 0.25 quantile, with
/// linear interpolation between order statistics.
pub fn interquartile_range(values: &[f64]) -> f64 {
    quantile_of(values, 0.75) - quantile_of(values, 0.25)
}

fn quantile_of(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty(), "quantile of an empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let w = h - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Ordinary least squares line through `points`, returned as (slope,
/// intercept). Needs at least two points and at least two distinct
/// abscissae.
pub fn estimate_slope(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::GridTooShort { got: points.len() });
    }
    let n = points.len() as f64;
    let x_bar = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let y_bar = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let s_xx = points.iter().map(|(x, _)| (x - x_bar) * (x - x_bar)).sum::<f64>();
    if s_xx == 0.0 {
        return Err(Error::DegenerateAbscissae);
    }
    let s_xy = points
        .iter()
        .map(|(x, y)| (x - x_bar) * (y - y_bar))
        .sum::<f64>();
    let slope = s_xy / s_xx;
    Ok((slope, y_bar - slope * x_bar))
}

/// Fit a line to (log n, log median), excluding cells whose median is
/// not strictly positive. Returns (slope, intercept, excluded count).
fn slope_from_log_medians(cells: &[(f64, f64)]) -> Result<(f64, f64, usize)> {
    let usable: Vec<(f64, f64)> = cells
        .iter()
        .filter(|(_, m)| *m > 0.0)
        .map(|(n, m)| (n.ln(), m.ln()))
        .collect();
    let excluded = cells.len() - usable.len();
    if usable.len() < 2 {
        return Err(Error::GridTooShort { got: usable.len() });
    }
    let (slope, intercept) = estimate_slope(&usable)?;
    Ok((slope, intercept, excluded))
}

/// First 12 hex digits of the SHA-256 hash of a config echo; identifies
/// the run's scenario and settings in persisted records.
pub fn scenario_hash(config_echo: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_echo.as_bytes());
    let digest = hasher.finalize();
    digest
        .iter()
        .take(6)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// One JSON-lines record per replication and estimator.
#[derive(Debug, Clone, Serialize)]
struct ReplicationRecord<'a> {
    scenario: &'a str,
    study: &'a str,
    n_p: usize,
    n_q: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_reg: Option<f64>,
    estimator: &'a str,
    rep: usize,
    excess_risk: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    err_rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    err_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bound: Option<f64>,
}

fn record_line(record: &ReplicationRecord<'_>) -> String {
    let mut line = serde_json::to_string(record).expect("replication record serializes");
    line.push('\n');
    line
}

/// The four deterministic files a harness run persists. Wall-clock
/// timings are intentionally kept out of these and written to a separate
/// sidecar, so that reruns under the same seed are byte-identical.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    /// One JSON object per line, one line per replication and estimator.
    pub results_jsonl: String,
    /// Pretty-printed summary of the run result.
    pub summary_json: String,
    /// Plot-ready `series,x,y` rows.
    pub series_csv: String,
    /// The exact configuration the run used; parses back to the same map.
    pub config_echo: String,
}

/// Write artifacts into `dir` (created if absent): results.jsonl,
/// summary.json, series.csv, config_echo.txt, and optionally a
/// timings.json sidecar. Refuses to overwrite an existing summary.json
/// unless `force` is set.
pub fn write_run(
    dir: &Path,
    artifacts: &RunArtifacts,
    timings_json: Option<&str>,
    force: bool,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let summary_path = dir.join("summary.json");
    if summary_path.exists() && !force {
        return Err(Error::OutputExists {
            path: summary_path.display().to_string(),
        });
    }
    std::fs::write(dir.join("results.jsonl"), &artifacts.results_jsonl)?;
    std::fs::write(&summary_path, &artifacts.summary_json)?;
    std::fs::write(dir.join("series.csv"), &artifacts.series_csv)?;
    std::fs::write(dir.join("config_echo.txt"), &artifacts.config_echo)?;
    if let Some(timings) = timings_json {
        std::fs::write(dir.join("timings.json"), timings)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TimingEntry {
    label: String,
    secs: f64,
}

#[derive(Debug, Serialize)]
struct Timings {
    total_secs: f64,
    cells: Vec<TimingEntry>,
}

fn timings_to_json(total_secs: f64, cells: Vec<TimingEntry>) -> String {
    let mut text = serde_json::to_string_pretty(&Timings { total_secs, cells })
        .expect("timings serialize");
    text.push('\n');
    text
}

fn summary_to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    text
}

fn collect_cell<T>(outcomes: Vec<std::result::Result<T, Error>>) -> Result<(Vec<T>, usize)> {
    let total = outcomes.len();
    let mut kept = Vec::with_capacity(total);
    let mut first_err = None;
    for outcome in outcomes {
        match outcome {
            Ok(v) => kept.push(v),
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match (kept.is_empty(), first_err) {
        (true, Some(e)) => Err(e),
        _ => {
            let failed = total - kept.len();
            Ok((kept, failed))
        }
    }
}

fn sample_sizes(cfg: &ConfigMap) -> Result<(usize, usize)> {
    let n_p = if cfg.contains("run.n_p") {
        cfg.get_usize("run.n_p")?
    } else {
        cfg.get_usize("run.n")?
    };
    let n_q = if cfg.contains("run.n_q") {
        cfg.get_usize("run.n_q")?
    } else {
        cfg.get_usize("run.n")?
    };
    for (key, n) in [("run.n_p", n_p), ("run.n_q", n_q)] {
        if n == 0 {
            return Err(Error::Config {
                key: key.into(),
                reason: "sample size must be at least 1".into(),
            });
        }
    }
    Ok((n_p, n_q))
}

fn replication_count(cfg: &ConfigMap, default: usize) -> Result<usize> {
    let reps = cfg.get_usize_or("run.replications", default)?;
    if reps == 0 {
        return Err(Error::Config {
            key: "run.replications".into(),
            reason: "need at least one replication".into(),
        });
    }
    Ok(reps)
}

fn mc_config(cfg: &ConfigMap, seed: u64) -> Result<McConfig> {
    Ok(McConfig {
        draws: cfg.get_usize_or("run.mc_draws", 50_000)?,
        seed,
    })
}

/// One grid cell of a rate study.
#[derive(Debug, Clone, Serialize)]
pub struct RateCell {
    pub n: usize,
    /// Excess Q-risk per surviving replication, in replication order.
    pub excess_risks: Vec<f64>,
    /// Realized pilot L2 errors (ratio, regression) per replication.
    pub pilot_errors: Vec<(f64, f64)>,
    pub median: f64,
    pub failed_replications: usize,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Result of [`run_rate_study`]: per-cell excess risks and the fitted
/// log-log rate line.
#[derive(Debug, Clone, Serialize)]
pub struct RateStudyResult {
    pub scenario: String,
    pub estimator: String,
    pub cells: Vec<RateCell>,
    /// Slope of the least-squares line through (log n, log median).
    pub slope: f64,
    pub intercept: f64,
    /// Cells with a zero median excess risk, excluded from the fit.
    pub zero_median_warnings: usize,
    #[serde(skip)]
    pub config_echo: String,
}

impl RateStudyResult {
    /// Fraction of adjacent grid pairs whose median does not increase.
    pub fn monotone_fraction(&self) -> f64 {
        if self.cells.len() < 2 {
            return 1.0;
        }
        let good = self
            .cells
            .windows(2)
            .filter(|w| w[1].median <= w[0].median)
            .count();
        good as f64 / (self.cells.len() - 1) as f64
    }

    pub fn artifacts(&self) -> RunArtifacts {
        let mut jsonl = String::new();
        for cell in &self.cells {
            for (rep, (excess, errs)) in cell
                .excess_risks
                .iter()
                .zip(&cell.pilot_errors)
                .enumerate()
            {
                jsonl.push_str(&record_line(&ReplicationRecord {
                    scenario: &self.scenario,
                    study: "rate",
                    n_p: cell.n,
                    n_q: cell.n,
                    eps_ratio: None,
                    eps_reg: None,
                    estimator: &self.estimator,
                    rep,
                    excess_risk: *excess,
                    err_rho: Some(errs.0),
                    err_f: Some(errs.1),
                    bound: None,
                }));
            }
        }
        let mut csv = String::from("series,x,y\n");
        for cell in &self.cells {
            csv.push_str(&format!("median-excess,{},{}\n", cell.n, cell.median));
        }
        RunArtifacts {
            results_jsonl: jsonl,
            summary_json: summary_to_json(self),
            series_csv: csv,
            config_echo: self.config_echo.clone(),
        }
    }

    pub fn timings_json(&self) -> String {
        let cells: Vec<TimingEntry> = self
            .cells
            .iter()
            .map(|c| TimingEntry {
                label: format!("n={}", c.n),
                secs: c.wall_time_secs,
            })
            .collect();
        let total = cells.iter().map(|c| c.secs).sum();
        timings_to_json(total, cells)
    }
}

#[derive(Clone, Copy)]
struct RepSeeds {
    data: u64,
    pilot: u64,
    split: u64,
    err: u64,
}

fn rep_seeds(master: u64, purpose: &str, indices: &[u64]) -> RepSeeds {
    let mut rng = derive_rng(master, purpose, indices);
    RepSeeds {
        data: rng.gen(),
        pilot: rng.gen(),
        split: rng.gen(),
        err: rng.gen(),
    }
}

/// Run a rate study: for each n in `run.n_grid`, draw `run.replications`
/// paired samples with n_P = n_Q = n, fit pilots (on a held-out half
/// when `run.cross_fit` is on) and the DR estimator, record the excess
/// Q-risk, and fit a line through (log n, log median excess risk).
pub fn run_rate_study(cfg: &ConfigMap) -> Result<RateStudyResult> {
    let sc = Arc::new(make_gaussian_shift_scenario(cfg)?);
    let recipe = PilotRecipe::from_config(cfg)?;
    let ms = model_settings(cfg, &sc)?;
    let n_grid = cfg.get_usize_list("run.n_grid")?;
    if n_grid.len() < 2 {
        return Err(Error::GridTooShort { got: n_grid.len() });
    }
    if let Some(&n) = n_grid.iter().find(|&&n| n == 0) {
        return Err(Error::Config {
            key: "run.n_grid".into(),
            reason: format!("grid entries must be at least 1, got {n}"),
        });
    }
    let replications = replication_count(cfg, 50)?;
    let master = cfg.get_u64_or("run.master_seed", 0)?;
    let cross_fit = cfg.get_bool_or("run.cross_fit", false)?;
    let mc_draws = cfg.get_usize_or("run.mc_draws", 50_000)?;
    let config_echo = cfg.emit();
    let scenario = scenario_hash(&config_echo);
    let estimator = if cross_fit { "dr-crossfit" } else { "dr" };

    let mut cells = Vec::with_capacity(n_grid.len());
    for (ci, &n) in n_grid.iter().enumerate() {
        let start = Instant::now();
        let seeds: Vec<RepSeeds> = (0..replications)
            .map(|ri| rep_seeds(master, "harness/rate", &[ci as u64, ri as u64]))
            .collect();
        let outcomes: Vec<Result<(f64, (f64, f64))>> = seeds
            .into_par_iter()
            .map(|seeds| {
                rate_replication(&sc, &recipe, &ms, n, cross_fit, mc_draws, seeds)
            })
            .collect();
        let (rows, failed) = collect_cell(outcomes)?;
        let excess_risks: Vec<f64> = rows.iter().map(|(e, _)| *e).collect();
        let pilot_errors: Vec<(f64, f64)> = rows.iter().map(|(_, p)| *p).collect();
        let median = median(&excess_risks);
        cells.push(RateCell {
            n,
            excess_risks,
            pilot_errors,
            median,
            failed_replications: failed,
            wall_time_secs: start.elapsed().as_secs_f64(),
        });
    }

    let med_pairs: Vec<(f64, f64)> = cells.iter().map(|c| (c.n as f64, c.median)).collect();
    let (slope, intercept, zero_median_warnings) = slope_from_log_medians(&med_pairs)?;
    Ok(RateStudyResult {
        scenario,
        estimator: estimator.into(),
        cells,
        slope,
        intercept,
        zero_median_warnings,
        config_echo,
    })
}

fn rate_replication(
    sc: &Arc<ShiftScenario>,
    recipe: &PilotRecipe,
    ms: &ModelSettings,
    n: usize,
    cross_fit: bool,
    mc_draws: usize,
    seeds: RepSeeds,
) -> Result<(f64, (f64, f64))> {
    let sample = sc.sample_dataset(n, n, seeds.data)?;
    let (rho, f0, theta) = if cross_fit {
        let (pilot_half, fit_half) = sample.split_half(seeds.split);
        let (rho, f0) = recipe.fit(sc, &pilot_half, seeds.pilot)?;
        let theta = fit_dr_theta(ms, &fit_half, &rho, &f0)?;
        (rho, f0, theta)
    } else {
        let (rho, f0) = recipe.fit(sc, &sample, seeds.pilot)?;
        let theta = fit_dr_theta(ms, &sample, &rho, &f0)?;
        (rho, f0, theta)
    };
    let err_rho = pilot_l2_error(&rho, sc, 20_000, seeds.err)?;
    let err_f = pilot_l2_error(&f0, sc, 20_000, seeds.err)?;
    let predictor = ms.model.predictor(&theta, "dr");
    let mc = McConfig {
        draws: mc_draws,
        seed: seeds.data,
    };
    let excess = excess_q_risk(sc, &predictor, &mc)?.value;
    Ok((excess, (err_rho, err_f)))
}

/// One cell of a double-robustness sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub eps_ratio: f64,
    pub eps_reg: f64,
    /// Realized L2(P) error of the corrupted ratio pilot.
    pub realized_err_rho: f64,
    /// Realized L2(P) error of the corrupted regression pilot.
    pub realized_err_f: f64,
    pub dr_excess: Vec<f64>,
    pub iw_excess: Vec<f64>,
    pub dr_median: f64,
    pub dr_iqr: f64,
    pub iw_median: f64,
    pub iw_iqr: f64,
    /// Median excess risk minus the (0, 0) baseline median.
    pub dr_bias: f64,
    pub iw_bias: f64,
    pub failed_replications: usize,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Result of [`run_double_robustness_sweep`]: a rectangular grid over
/// (eps_ratio, eps_reg) corruption levels of the oracle pilots, with DR
/// and IW excess risks per cell.
#[derive(Debug, Clone, Serialize)]
pub struct DRSweepResult {
    pub scenario: String,
    pub eps_ratio_grid: Vec<f64>,
    pub eps_reg_grid: Vec<f64>,
    pub n_p: usize,
    pub n_q: usize,
    /// Row-major over (eps_ratio index, eps_reg index).
    pub cells: Vec<SweepCell>,
    #[serde(skip)]
    pub config_echo: String,
}

impl DRSweepResult {
    /// The cell at the given grid values, if present.
    pub fn cell(&self, eps_ratio: f64, eps_reg: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.eps_ratio == eps_ratio && c.eps_reg == eps_reg)
    }

    pub fn artifacts(&self) -> RunArtifacts {
        let mut jsonl = String::new();
        for cell in &self.cells {
            for (estimator, excess) in [("dr", &cell.dr_excess), ("iw", &cell.iw_excess)] {
                for (rep, value) in excess.iter().enumerate() {
                    jsonl.push_str(&record_line(&ReplicationRecord {
                        scenario: &self.scenario,
                        study: "dr-sweep",
                        n_p: self.n_p,
                        n_q: self.n_q,
                        eps_ratio: Some(cell.eps_ratio),
                        eps_reg: Some(cell.eps_reg),
                        estimator,
                        rep,
                        excess_risk: *value,
                        err_rho: Some(cell.realized_err_rho),
                        err_f: Some(cell.realized_err_f),
                        bound: None,
                    }));
                }
            }
        }
        let mut csv = String::from("series,x,y\n");
        for cell in &self.cells {
            csv.push_str(&format!(
                "dr eps_f={},{},{}\n",
                cell.eps_reg, cell.eps_ratio, cell.dr_median
            ));
            csv.push_str(&format!(
                "iw eps_f={},{},{}\n",
                cell.eps_reg, cell.eps_ratio, cell.iw_median
            ));
        }
        RunArtifacts {
            results_jsonl: jsonl,
            summary_json: summary_to_json(self),
            series_csv: csv,
            config_echo: self.config_echo.clone(),
        }
    }

    pub fn timings_json(&self) -> String {
        let cells: Vec<TimingEntry> = self
            .cells
            .iter()
            .map(|c| TimingEntry {
                label: format!("eps_ratio={} eps_reg={}", c.eps_ratio, c.eps_reg),
                secs: c.wall_time_secs,
            })
            .collect();
        let total = cells.iter().map(|c| c.secs).sum();
        timings_to_json(total, cells)
    }
}

fn corruption_grid(cfg: &ConfigMap, key: &str) -> Result<Vec<f64>> {
    let grid = cfg.get_f64_list(key)?;
    if grid.is_empty() {
        return Err(Error::Config {
            key: key.into(),
            reason: "corruption grid must be nonempty".into(),
        });
    }
    if !grid.iter().any(|&e| e == 0.0) {
        return Err(Error::Config {
            key: key.into(),
            reason: "corruption grid must contain 0 (the bias baseline)".into(),
        });
    }
    if let Some(&bad) = grid.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::Config {
            key: key.into(),
            reason: format!("corruption levels must be nonnegative reals, got {bad}"),
        });
    }
    Ok(grid)
}

/// Sweep corruption levels of the oracle pilots over a rectangular
/// (eps_ratio, eps_reg) grid. Each cell perturbs the oracle ratio pilot
/// by eps_ratio along `pilot.corrupt.ratio_dir` and the oracle
/// regression pilot by eps_reg along `pilot.corrupt.reg_dir`, fits DR
/// and IW on `run.replications` fresh samples, and records realized
/// pilot errors, medians, IQRs, and bias against the (0, 0) cell.
pub fn run_double_robustness_sweep(cfg: &ConfigMap) -> Result<DRSweepResult> {
    let sc = Arc::new(make_gaussian_shift_scenario(cfg)?);
    let ms = model_settings(cfg, &sc)?;
    if ms.model.link() != Link::Identity {
        return Err(Error::InvalidParam {
            name: "model.link".into(),
            reason: "the double-robustness sweep compares against the importance-weighted \
                     estimator and requires the identity link"
                .into(),
        });
    }
    let recipe = PilotRecipe::from_config(cfg)?;
    let (n_p, n_q) = sample_sizes(cfg)?;
    let replications = replication_count(cfg, 50)?;
    let master = cfg.get_u64_or("run.master_seed", 0)?;
    let eps_ratio_grid = corruption_grid(cfg, "pilot.corrupt.eps_ratio")?;
    let eps_reg_grid = corruption_grid(cfg, "pilot.corrupt.eps_reg")?;
    let ratio_dir = parse_direction(
        cfg.get_str_or("pilot.corrupt.ratio_dir", "constant"),
        "pilot.corrupt.ratio_dir",
    )?;
    let reg_dir = parse_direction(
        cfg.get_str_or("pilot.corrupt.reg_dir", "constant"),
        "pilot.corrupt.reg_dir",
    )?;
    let config_echo = cfg.emit();
    let scenario = scenario_hash(&config_echo);

    let rho_oracle = RatioEstimate::oracle(&sc, recipe.c_dr)?;
    let f0_oracle = RegressionEstimate::oracle(&sc, recipe.c_rf)?;

    let mut cells = Vec::with_capacity(eps_ratio_grid.len() * eps_reg_grid.len());
    for (i, &eps_ratio) in eps_ratio_grid.iter().enumerate() {
        for (j, &eps_reg) in eps_reg_grid.iter().enumerate() {
            let start = Instant::now();
            let rho = rho_oracle.corrupted(eps_ratio, &ratio_dir, &sc)?;
            let f0 = f0_oracle.corrupted(eps_reg, &reg_dir, &sc)?;
            let realized_err_rho = pilot_l2_error(&rho, &sc, 20_000, master)?;
            let realized_err_f = pilot_l2_error(&f0, &sc, 20_000, master)?;
            let seeds: Vec<RepSeeds> = (0..replications)
                .map(|r| rep_seeds(master, "harness/sweep", &[i as u64, j as u64, r as u64]))
                .collect();
            let outcomes: Vec<Result<(f64, f64)>> = seeds
                .into_par_iter()
                .map(|seeds| {
                    let sample = sc.sample_dataset(n_p, n_q, seeds.data)?;
                    let theta_dr = fit_dr_theta(&ms, &sample, &rho, &f0)?;
                    let theta_iw = solve_weighted_ls(&sample, Some(&rho), ms.ridge_eps)?;
                    let mc = McConfig {
                        draws: 50_000,
                        seed: seeds.data,
                    };
                    let dr = excess_q_risk(&sc, &ms.model.predictor(&theta_dr, "dr"), &mc)?.value;
                    let iw = excess_q_risk(&sc, &ms.model.predictor(&theta_iw, "iw"), &mc)?.value;
                    Ok((dr, iw))
                })
                .collect();
            let (rows, failed) = collect_cell(outcomes)?;
            let dr_excess: Vec<f64> = rows.iter().map(|(d, _)| *d).collect();
            let iw_excess: Vec<f64> = rows.iter().map(|(_, w)| *w).collect();
            cells.push(SweepCell {
                eps_ratio,
                eps_reg,
                realized_err_rho,
                realized_err_f,
                dr_median: median(&dr_excess),
                dr_iqr: interquartile_range(&dr_excess),
                iw_median: median(&iw_excess),
                iw_iqr: interquartile_range(&iw_excess),
                dr_excess,
                iw_excess,
                dr_bias: 0.0,
                iw_bias: 0.0,
                failed_replications: failed,
                wall_time_secs: start.elapsed().as_secs_f64(),
            });
        }
    }

    let baseline = cells
        .iter()
        .find(|c| c.eps_ratio == 0.0 && c.eps_reg == 0.0)
        .map(|c| (c.dr_median, c.iw_median))
        .expect("grids validated to contain 0");
    for cell in &mut cells {
        cell.dr_bias = cell.dr_median - baseline.0;
        cell.iw_bias = cell.iw_median - baseline.1;
    }

    Ok(DRSweepResult {
        scenario,
        eps_ratio_grid,
        eps_reg_grid,
        n_p,
        n_q,
        cells,
        config_echo,
    })
}

/// A cross-fitted DR fit: pilots from one half of the data, estimator
/// from the other.
#[derive(Debug, Clone)]
pub struct CrossfitFit {
    pub theta: DVector<f64>,
    pub predictor: Predictor,
    /// (source, target) sizes of the pilot half.
    pub pilot_split: (usize, usize),
    /// (source, target) sizes of the estimation half.
    pub fit_split: (usize, usize),
    /// Realized L2(P) error of the fitted ratio pilot.
    pub err_rho: f64,
    /// Realized L2(P) error of the fitted regression pilot.
    pub err_f: f64,
}

/// Split `sample` into halves by a seeded permutation (`run.split_seed`,
/// default 0), fit the pilots of `pilot.*` on the first half, and fit
/// the DR estimator on the second half.
pub fn run_crossfit_dr(
    sc: &Arc<ShiftScenario>,
    sample: &PairedSample,
    cfg: &ConfigMap,
) -> Result<CrossfitFit> {
    if sample.n_source() < 2 || sample.n_target() < 2 {
        return Err(Error::InvalidParam {
            name: "sample".into(),
            reason: format!(
                "cross-fitting needs n_P >= 2 and n_Q >= 2, got ({}, {})",
                sample.n_source(),
                sample.n_target()
            ),
        });
    }
    let recipe = PilotRecipe::from_config(cfg)?;
    let ms = model_settings(cfg, sc)?;
    let split_seed = cfg.get_u64_or("run.split_seed", 0)?;
    let pilot_seed = derive_rng(split_seed, "harness/crossfit", &[]).gen::<u64>();
    let (pilot_half, fit_half) = sample.split_half(split_seed);
    let (rho, f0) = recipe.fit(sc, &pilot_half, pilot_seed)?;
    let theta = fit_dr_theta(&ms, &fit_half, &rho, &f0)?;
    let err_rho = pilot_l2_error(&rho, sc, 20_000, split_seed)?;
    let err_f = pilot_l2_error(&f0, sc, 20_000, split_seed)?;
    let predictor = ms.model.predictor(&theta, "dr-crossfit");
    Ok(CrossfitFit {
        theta,
        predictor,
        pilot_split: (pilot_half.n_source(), pilot_half.n_target()),
        fit_split: (fit_half.n_source(), fit_half.n_target()),
        err_rho,
        err_f,
    })
}

/// Result of [`run_crossfit_study`]: one sampled dataset, one cross-fit.
#[derive(Debug, Clone, Serialize)]
pub struct CrossfitStudyResult {
    pub scenario: String,
    pub theta: Vec<f64>,
    pub excess_risk: f64,
    pub pilot_split: (usize, usize),
    pub fit_split: (usize, usize),
    pub err_rho: f64,
    pub err_f: f64,
    #[serde(skip)]
    pub config_echo: String,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl CrossfitStudyResult {
    pub fn artifacts(&self) -> RunArtifacts {
        let jsonl = record_line(&ReplicationRecord {
            scenario: &self.scenario,
            study: "crossfit",
            n_p: self.pilot_split.0 + self.fit_split.0,
            n_q: self.pilot_split.1 + self.fit_split.1,
            eps_ratio: None,
            eps_reg: None,
            estimator: "dr-crossfit",
            rep: 0,
            excess_risk: self.excess_risk,
            err_rho: Some(self.err_rho),
            err_f: Some(self.err_f),
            bound: None,
        });
        let csv = format!("series,x,y\nexcess,0,{}\n", self.excess_risk);
        RunArtifacts {
            results_jsonl: jsonl,
            summary_json: summary_to_json(self),
            series_csv: csv,
            config_echo: self.config_echo.clone(),
        }
    }

    pub fn timings_json(&self) -> String {
        timings_to_json(self.wall_time_secs, Vec::new())
    }
}

/// Sample one dataset of `run.n` (or `run.n_p`/`run.n_q`) points under
/// the configured scenario, cross-fit the DR estimator, and report its
/// excess Q-risk.
pub fn run_crossfit_study(cfg: &ConfigMap) -> Result<CrossfitStudyResult> {
    let start = Instant::now();
    let sc = Arc::new(make_gaussian_shift_scenario(cfg)?);
    let (n_p, n_q) = sample_sizes(cfg)?;
    let master = cfg.get_u64_or("run.master_seed", 0)?;
    let sample = sc.sample_dataset(n_p, n_q, master)?;
    let fit = run_crossfit_dr(&sc, &sample, cfg)?;
    let mc = mc_config(cfg, master)?;
    let excess_risk = excess_q_risk(&sc, &fit.predictor, &mc)?.value;
    let config_echo = cfg.emit();
    Ok(CrossfitStudyResult {
        scenario: scenario_hash(&config_echo),
        theta: fit.theta.iter().cloned().collect(),
        excess_risk,
        pilot_split: fit.pilot_split,
        fit_split: fit.fit_split,
        err_rho: fit.err_rho,
        err_f: fit.err_f,
        config_echo,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Result of [`run_fit_study`]: one sampled dataset, one DR fit
/// (full-sample pilots, or cross-fitted when `run.cross_fit` is on).
#[derive(Debug, Clone, Serialize)]
pub struct FitStudyResult {
    pub scenario: String,
    pub estimator: String,
    pub theta: Vec<f64>,
    pub excess_risk: f64,
    pub n_p: usize,
    pub n_q: usize,
    pub err_rho: f64,
    pub err_f: f64,
    #[serde(skip)]
    pub config_echo: String,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl FitStudyResult {
    pub fn artifacts(&self) -> RunArtifacts {
        let jsonl = record_line(&ReplicationRecord {
            scenario: &self.scenario,
            study: "fit",
            n_p: self.n_p,
            n_q: self.n_q,
            eps_ratio: None,
            eps_reg: None,
            estimator: &self.estimator,
            rep: 0,
            excess_risk: self.excess_risk,
            err_rho: Some(self.err_rho),
            err_f: Some(self.err_f),
            bound: None,
        });
        let csv = format!("series,x,y\nexcess,0,{}\n", self.excess_risk);
        RunArtifacts {
            results_jsonl: jsonl,
            summary_json: summary_to_json(self),
            series_csv: csv,
            config_echo: self.config_echo.clone(),
        }
    }

    pub fn timings_json(&self) -> String {
        timings_to_json(self.wall_time_secs, Vec::new())
    }
}

/// Sample one dataset, fit the pilots of `pilot.*` and the DR estimator
/// on it (cross-fitted when `run.cross_fit` is on), and report the
/// coefficients, realized pilot errors, and excess Q-risk.
pub fn run_fit_study(cfg: &ConfigMap) -> Result<FitStudyResult> {
    let start = Instant::now();
    let sc = Arc::new(make_gaussian_shift_scenario(cfg)?);
    let (n_p, n_q) = sample_sizes(cfg)?;
    let master = cfg.get_u64_or("run.master_seed", 0)?;
    let cross_fit = cfg.get_bool_or("run.cross_fit", false)?;
    let sample = sc.sample_dataset(n_p, n_q, master)?;
    let (estimator, theta, predictor, err_rho, err_f) = if cross_fit {
        let fit = run_crossfit_dr(&sc, &sample, cfg)?;
        (
            "dr-crossfit",
            fit.theta,
            fit.predictor,
            fit.err_rho,
            fit.err_f,
        )
    } else {
        let recipe = PilotRecipe::from_config(cfg)?;
        let ms = model_settings(cfg, &sc)?;
        let pilot_seed = derive_rng(master, "harness/fit", &[]).gen::<u64>();
        let (rho, f0) = recipe.fit(&sc, &sample, pilot_seed)?;
        let theta = fit_dr_theta(&ms, &sample, &rho, &f0)?;
        let err_rho = pilot_l2_error(&rho, &sc, 20_000, master)?;
        let err_f = pilot_l2_error(&f0, &sc, 20_000, master)?;
        let predictor = ms.model.predictor(&theta, "dr");
        ("dr", theta, predictor, err_rho, err_f)
    };
    let mc = mc_config(cfg, master)?;
    let excess_risk = excess_q_risk(&sc, &predictor, &mc)?.value;
    let config_echo = cfg.emit();
    Ok(FitStudyResult {
        scenario: scenario_hash(&config_echo),
        estimator: estimator.into(),
        theta: theta.iter().cloned().collect(),
        excess_risk,
        n_p,
        n_q,
        err_rho,
        err_f,
        config_echo,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Result of [`run_rad_study`]: plug-in Rademacher complexities of the
/// configured linear class under the source and target laws.
#[derive(Debug, Clone, Serialize)]
pub struct RadStudyResult {
    pub scenario: String,
    pub rad_p: crate::complexity::RadEstimate,
    pub rad_q: crate::complexity::RadEstimate,
    /// Points per empirical complexity under P and Q.
    pub n_p: usize,
    pub n_q: usize,
    pub class_radius: f64,
    #[serde(skip)]
    pub config_echo: String,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl RadStudyResult {
    pub fn artifacts(&self) -> RunArtifacts {
        let csv = format!(
            "series,x,y\nrad-p,{},{}\nrad-q,{},{}\n",
            self.n_p, self.rad_p.value, self.n_q, self.rad_q.value
        );
        RunArtifacts {
            results_jsonl: String::new(),
            summary_json: summary_to_json(self),
            series_csv: csv,
            config_echo: self.config_echo.clone(),
        }
    }

    pub fn timings_json(&self) -> String {
        timings_to_json(self.wall_time_secs, Vec::new())
    }
}

/// Estimate the Rademacher complexity of the norm-constrained linear
/// class (radius `class.radius`, default 1/R, centered at the Bayes
/// function unless `class.center_bayes` is off) under both laws, at
/// `run.n` (or `run.n_p`/`run.n_q`) points.
pub fn run_rad_study(cfg: &ConfigMap) -> Result<RadStudyResult> {
    let start = Instant::now();
    let sc = Arc::new(make_gaussian_shift_scenario(cfg)?);
    let (n_p, n_q) = sample_sizes(cfg)?;
    let master = cfg.get_u64_or("run.master_seed", 0)?;
    let class_radius = cfg.get_f64_or("class.radius", 1.0 / sc.trunc_radius())?;
    let bound_b = cfg.get_f64_or("class.bound_b", 1.0)?;
    let mut spec = FunctionClassSpec::linear_ball_identity(class_radius, bound_b)?;
    if cfg.get_bool_or("class.center_bayes", true)? {
        let offset_sc = Arc::clone(&sc);
        spec = spec.with_offset(Predictor::from_fn(
            move |x: &[f64]| -offset_sc.oracle_bayes(x),
            "negated-bayes",
        ));
    }
    let sign_cfg = SignConfig {
        n_signs: cfg.get_usize_or("rad.n_signs", SignConfig::default().n_signs)?,
        exact_threshold: cfg
            .get_usize_or("rad.exact_threshold", SignConfig::default().exact_threshold)?,
    };
    let n_outer = cfg.get_usize_or("rad.n_outer", 5)?;
    let seed_p = derive_rng(master, "harness/rad", &[0]).gen::<u64>();
    let seed_q = derive_rng(master, "harness/rad", &[1]).gen::<u64>();
    let rad_p = rademacher_under_law(&spec, &sc, LawSide::Source, n_p, n_outer, &sign_cfg, seed_p)?;
    let rad_q = rademacher_under_law(&spec, &sc, LawSide::Target, n_q, n_outer, &sign_cfg, seed_q)?;
    let config_echo = cfg.emit();
    Ok(RadStudyResult {
        scenario: scenario_hash(&config_echo),
        rad_p,
        rad_q,
        n_p,
        n_q,
        class_radius,
        config_echo,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// The estimators [`compare_estimators`] knows how to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Unweighted least squares on the source sample.
    ErmSource,
    /// Importance weighting with the clipped oracle ratio.
    IwOracle,
    /// Importance weighting with the ratio pilot of `pilot.ratio.*`.
    IwEstimated,
    /// DR with both oracle pilots.
    DrOracle,
    /// DR with the pilots of `pilot.*` fitted on the full sample.
    DrEstimated,
    /// DR with pilots fitted on one half, estimator on the other.
    DrCrossfit,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::ErmSource,
        EstimatorKind::IwOracle,
        EstimatorKind::IwEstimated,
        EstimatorKind::DrOracle,
        EstimatorKind::DrEstimated,
        EstimatorKind::DrCrossfit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::ErmSource => "erm-source",
            EstimatorKind::IwOracle => "iw-oracle",
            EstimatorKind::IwEstimated => "iw-estimated",
            EstimatorKind::DrOracle => "dr-oracle",
            EstimatorKind::DrEstimated => "dr-estimated",
            EstimatorKind::DrCrossfit => "dr-crossfit",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == text)
            .ok_or_else(|| Error::UnknownEstimator {
                name: text.into(),
                valid: Self::ALL
                    .iter()
                    .map(|k| k.name())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }
}

/// One row of a [`CompareResult`].
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub excess_risks: Vec<f64>,
    pub median: f64,
    pub iqr: f64,
    pub failed_replications: usize,
}

/// Result of [`compare_estimators`]: one row per requested estimator,
/// all estimators fit on the same replicated datasets.
#[derive(Debug, Clone, Serialize)]
pub struct CompareResult {
    pub scenario: String,
    pub n_p: usize,
    pub n_q: usize,
    pub rows: Vec<EstimatorSummary>,
    #[serde(skip)]
    pub config_echo: String,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl CompareResult {
    pub fn row(&self, name: &str) -> Option<&EstimatorSummary> {
        self.rows.iter().find(|r| r.estimator == name)
    }

    pub fn artifacts(&self) -> RunArtifacts {
        let mut jsonl = String::new();
        for row in &self.rows {
            for (rep, value) in row.excess_risks.iter().enumerate() {
                jsonl.push_str(&record_line(&ReplicationRecord {
                    scenario: &self.scenario,
                    study: "compare",
                    n_p: self.n_p,
                    n_q: self.n_q,
                    eps_ratio: None,
                    eps_reg: None,
                    estimator: &row.estimator,
                    rep,
                    excess_risk: *value,
                    err_rho: None,
                    err_f: None,
                    bound: None,
                }));
            }
        }
        let mut csv = String::from("series,x,y\n");
        for (ix, row) in self.rows.iter().enumerate() {
            csv.push_str(&format!("{},{},{}\n", row.estimator, ix, row.median));
        }
        RunArtifacts {
            results_jsonl: jsonl,
            summary_json: summary_to_json(self),
            series_csv: csv,
            config_echo: self.config_echo.clone(),
        }
    }

    pub fn timings_json(&self) -> String {
        timings_to_json(self.wall_time_secs, Vec::new())
    }
}

/// Fit every estimator in `run.estimators` (comma-separated names from
/// [`EstimatorKind`]) on the same `run.replications` datasets and
/// summarize excess Q-risks per estimator with median and IQR.
pub fn compare_estimators(cfg: &ConfigMap) -> Result<CompareResult> {
    let start = Instant::now();
    let sc = Arc::new(make_gaussian_shift_scenario(cfg)?);
    let recipe = PilotRecipe::from_config(cfg)?;
    let ms = model_settings(cfg, &sc)?;
    let list = cfg.get_str("run.estimators")?;
    let kinds: Vec<EstimatorKind> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(EstimatorKind::parse)
        .collect::<Result<_>>()?;
    if kinds.is_empty() {
        return Err(Error::Config {
            key: "run.estimators".into(),
            reason: "estimator list is empty".into(),
        });
    }
    let needs_weighted_ls = kinds.iter().any(|k| {
        matches!(
            k,
            EstimatorKind::ErmSource | EstimatorKind::IwOracle | EstimatorKind::IwEstimated
        )
    });
    if needs_weighted_ls && ms.model.link() != Link::Identity {
        return Err(Error::InvalidParam {
            name: "model.link".into(),
            reason: "erm and iw estimators require the identity link".into(),
        });
    }
    let (n_p, n_q) = sample_sizes(cfg)?;
    let replications = replication_count(cfg, 50)?;
    let master = cfg.get_u64_or("run.master_seed", 0)?;
    let mc_draws = cfg.get_usize_or("run.mc_draws", 50_000)?;
    let config_echo = cfg.emit();
    let scenario = scenario_hash(&config_echo);

    let rho_oracle = RatioEstimate::oracle(&sc, recipe.c_dr)?;
    let f0_oracle = RegressionEstimate::oracle(&sc, recipe.c_rf)?;

    let seeds: Vec<RepSeeds> = (0..replications)
        .map(|r| rep_seeds(master, "harness/compare", &[r as u64]))
        .collect();
    let outcomes: Vec<Result<Vec<f64>>> = seeds
        .into_par_iter()
        .map(|seeds| {
            compare_replication(
                &sc,
                &recipe,
                &ms,
                &kinds,
                &rho_oracle,
                &f0_oracle,
                n_p,
                n_q,
                mc_draws,
                seeds,
            )
        })
        .collect();
    let (rows, failed) = collect_cell(outcomes)?;

    let summaries = kinds
        .iter()
        .enumerate()
        .map(|(ki, kind)| {
            let excess_risks: Vec<f64> = rows.iter().map(|row| row[ki]).collect();
            EstimatorSummary {
                estimator: kind.name().into(),
                median: median(&excess_risks),
                iqr: interquartile_range(&excess_risks),
                excess_risks,
                failed_replications: failed,
            }
        })
        .collect();

    Ok(CompareResult {
        scenario,
        n_p,
        n_q,
        rows: summaries,
        config_echo,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[allow(clippy::too_many_arguments)]
fn compare_replication(
    sc: &Arc<ShiftScenario>,
    recipe: &PilotRecipe,
    ms: &ModelSettings,
    kinds: &[EstimatorKind],
    rho_oracle: &RatioEstimate,
    f0_oracle: &RegressionEstimate,
    n_p: usize,
    n_q: usize,
    mc_draws: usize,
    seeds: RepSeeds,
) -> Result<Vec<f64>> {
    let sample = sc.sample_dataset(n_p, n_q, seeds.data)?;
    let needs_estimated = kinds.iter().any(|k| {
        matches!(k, EstimatorKind::IwEstimated | EstimatorKind::DrEstimated)
    });
    let estimated = if needs_estimated {
        Some(recipe.fit(sc, &sample, seeds.pilot)?)
    } else {
        None
    };
    let mut excess = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let theta = match kind {
            EstimatorKind::ErmSource => solve_weighted_ls(&sample, None, ms.ridge_eps)?,
            EstimatorKind::IwOracle => {
                solve_weighted_ls(&sample, Some(rho_oracle), ms.ridge_eps)?
            }
            EstimatorKind::IwEstimated => {
                let (rho, _) = estimated.as_ref().expect("estimated pilots prepared");
                solve_weighted_ls(&sample, Some(rho), ms.ridge_eps)?
            }
            EstimatorKind::DrOracle => fit_dr_theta(ms, &sample, rho_oracle, f0_oracle)?,
            EstimatorKind::DrEstimated => {
                let (rho, f0) = estimated.as_ref().expect("estimated pilots prepared");
                fit_dr_theta(ms, &sample, rho, f0)?
            }
            EstimatorKind::DrCrossfit => {
                let (pilot_half, fit_half) = sample.split_half(seeds.split);
                let (rho, f0) = recipe.fit(sc, &pilot_half, seeds.pilot)?;
                fit_dr_theta(ms, &fit_half, &rho, &f0)?
            }
        };
        let predictor = ms.model.predictor(&theta, kind.name());
        let mc = McConfig {
            draws: mc_draws,
            seed: seeds.data,
        };
        excess.push(excess_q_risk(sc, &predictor, &mc)?.value);
    }
    Ok(excess)
}

/// Result of [`run_bound_dominance`]: how often the realized excess risk
/// stayed below the structure-agnostic bound.
#[derive(Debug, Clone, Serialize)]
pub struct DominanceReport {
    pub scenario: String,
    pub replications: usize,
    pub satisfied: usize,
    pub fraction: f64,
    pub excess_median: f64,
    pub bound_median: f64,
    /// Plug-in Rademacher complexity of the linear class under P.
    pub rad_p: f64,
    /// Plug-in Rademacher complexity of the linear class under Q.
    pub rad_q: f64,
    pub delta: f64,
    /// (excess risk, bound) per replication.
    pub pairs: Vec<(f64, f64)>,
    #[serde(skip)]
    pub config_echo: String,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl DominanceReport {
    pub fn artifacts(&self) -> RunArtifacts {
        let mut jsonl = String::new();
        for (rep, (excess, bound)) in self.pairs.iter().enumerate() {
            jsonl.push_str(&record_line(&ReplicationRecord {
                scenario: &self.scenario,
                study: "dominance",
                n_p: 0,
                n_q: 0,
                eps_ratio: None,
                eps_reg: None,
                estimator: "dr",
                rep,
                excess_risk: *excess,
                err_rho: None,
                err_f: None,
                bound: Some(*bound),
            }));
        }
        let mut csv = String::from("series,x,y\n");
        for (rep, (excess, bound)) in self.pairs.iter().enumerate() {
            csv.push_str(&format!("excess,{rep},{excess}\n"));
            csv.push_str(&format!("bound,{rep},{bound}\n"));
        }
        RunArtifacts {
            results_jsonl: jsonl,
            summary_json: summary_to_json(self),
            series_csv: csv,
            config_echo: self.config_echo.clone(),
        }
    }

    pub fn timings_json(&self) -> String {
        timings_to_json(self.wall_time_secs, Vec::new())
    }
}

/// Check the structure-agnostic excess-risk bound against realized
/// excess risks: per replication, fit pilots and the DR estimator,
/// measure the pilot errors, evaluate the bound with plug-in Rademacher
/// complexities of the norm-constrained linear class centered at the
/// Bayes function, and count how often excess <= bound.
pub fn run_bound_dominance(cfg: &ConfigMap) -> Result<DominanceReport> {
    let start = Instant::now();
    let sc = Arc::new(make_gaussian_shift_scenario(cfg)?);
    let recipe = PilotRecipe::from_config(cfg)?;
    let ms = model_settings(cfg, &sc)?;
    let (n_p, n_q) = sample_sizes(cfg)?;
    let replications = replication_count(cfg, 200)?;
    let master = cfg.get_u64_or("run.master_seed", 0)?;
    let cross_fit = cfg.get_bool_or("run.cross_fit", false)?;
    let delta = cfg.get_f64_or("theorem.delta", 0.05)?;
    let mc_draws = cfg.get_usize_or("run.mc_draws", 50_000)?;
    let config_echo = cfg.emit();
    let scenario = scenario_hash(&config_echo);

    // The comparison class: linear predictors with |theta| <= 1/R, whose
    // outputs stay in [-1, 1] on the truncation ball, centered at the
    // Bayes function.
    let radius = 1.0 / sc.trunc_radius();
    let offset_sc = Arc::clone(&sc);
    let offset = Predictor::from_fn(
        move |x: &[f64]| -offset_sc.oracle_bayes(x),
        "negated-bayes",
    );
    let spec = FunctionClassSpec::linear_ball_identity(radius, 1.0)?.with_offset(offset);
    let sign_cfg = SignConfig {
        n_signs: cfg.get_usize_or("rad.n_signs", SignConfig::default().n_signs)?,
        exact_threshold: cfg
            .get_usize_or("rad.exact_threshold", SignConfig::default().exact_threshold)?,
    };
    let n_outer = cfg.get_usize_or("rad.n_outer", 5)?;
    // The bound applies to the sample sizes the estimator actually sees;
    // cross-fitting halves them.
    let (bound_n_p, bound_n_q) = if cross_fit {
        (n_p - n_p / 2, n_q - n_q / 2)
    } else {
        (n_p, n_q)
    };
    let rad_seed_p = derive_rng(master, "harness/dominance/rad", &[0]).gen::<u64>();
    let rad_seed_q = derive_rng(master, "harness/dominance/rad", &[1]).gen::<u64>();
    let rad_p =
        rademacher_under_law(&spec, &sc, LawSide::Source, bound_n_p, n_outer, &sign_cfg, rad_seed_p)?
            .value;
    let rad_q =
        rademacher_under_law(&spec, &sc, LawSide::Target, bound_n_q, n_outer, &sign_cfg, rad_seed_q)?
            .value;

    let seeds: Vec<RepSeeds> = (0..replications)
        .map(|r| rep_seeds(master, "harness/dominance", &[r as u64]))
        .collect();
    let outcomes: Vec<Result<(f64, f64)>> = seeds
        .into_par_iter()
        .map(|seeds| {
            let sample = sc.sample_dataset(n_p, n_q, seeds.data)?;
            let (rho, f0, theta) = if cross_fit {
                let (pilot_half, fit_half) = sample.split_half(seeds.split);
                let (rho, f0) = recipe.fit(&sc, &pilot_half, seeds.pilot)?;
                let theta = fit_dr_theta(&ms, &fit_half, &rho, &f0)?;
                (rho, f0, theta)
            } else {
                let (rho, f0) = recipe.fit(&sc, &sample, seeds.pilot)?;
                let theta = fit_dr_theta(&ms, &sample, &rho, &f0)?;
                (rho, f0, theta)
            };
            let err_rho = pilot_l2_error(&rho, &sc, 20_000, seeds.err)?;
            let err_f = pilot_l2_error(&f0, &sc, 20_000, seeds.err)?;
            let mc = McConfig {
                draws: mc_draws,
                seed: seeds.data,
            };
            let excess = excess_q_risk(&sc, &ms.model.predictor(&theta, "dr"), &mc)?.value;
            let bound = structure_agnostic_bound(&StructureAgnosticInputs {
                err_rho,
                err_f,
                c_dr: recipe.c_dr,
                c_rf: recipe.c_rf,
                rad_p,
                rad_q,
                n_p: bound_n_p as f64,
                n_q: bound_n_q as f64,
                delta,
            })?
            .total();
            Ok((excess, bound))
        })
        .collect();
    let (pairs, _failed) = collect_cell(outcomes)?;

    let satisfied = pairs.iter().filter(|(e, b)| e <= b).count();
    let excess: Vec<f64> = pairs.iter().map(|(e, _)| *e).collect();
    let bounds: Vec<f64> = pairs.iter().map(|(_, b)| *b).collect();
    Ok(DominanceReport {
        scenario,
        replications: pairs.len(),
        satisfied,
        fraction: satisfied as f64 / pairs.len() as f64,
        excess_median: median(&excess),
        bound_median: median(&bounds),
        rad_p,
        rad_q,
        delta,
        pairs,
        config_echo,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

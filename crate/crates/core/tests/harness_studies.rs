//! End-to-end studies exercising the harness the way the CLI does:
//! estimator comparisons under zero and strong shift, cross-fitting
//! against importance weighting under a misspecified model, and the
//! oracle-pilot convergence rate.

use covshift::config::ConfigMap;
use covshift::harness::{compare_estimators, run_rate_study};

/// Under a misspecified identity-link model of a bounded-arctan truth,
/// with a heavily smoothed ratio pilot whose error aligns with the
/// misspecification residual, IW inherits a first-order bias while
/// cross-fitted DR only pays the product of two pilot errors: DR wins
/// most head-to-head replications.
#[test]
fn crossfit_dr_beats_iw_under_misspecification() {
    let cfg = ConfigMap::parse(
        "scenario.dim = 2\n\
         scenario.trunc_radius = 3\n\
         scenario.theta_star = 1.0,0.7\n\
         scenario.source_mean = 0,0\n\
         scenario.target_mean = 1.5,0.9\n\
         scenario.link = bounded-arctan\n\
         scenario.seed_domain = cf-vs-iw\n\
         model.link = identity\n\
         pilot.ratio.method = ulsif\n\
         pilot.ratio.lambda = 1.0\n\
         pilot.reg.method = ridge\n\
         pilot.reg.features = affine\n\
         run.estimators = iw-estimated,dr-crossfit\n\
         run.n = 4000\n\
         run.replications = 40\n\
         run.master_seed = 42\n",
    )
    .expect("valid config");
    let result = compare_estimators(&cfg).expect("comparison");
    let iw = result.row("iw-estimated").expect("iw row");
    let dr = result.row("dr-crossfit").expect("dr row");
    assert_eq!(iw.excess_risks.len(), 40);
    assert_eq!(dr.excess_risks.len(), 40);
    // Rows are aligned: both estimators fit the same replicated dataset.
    let wins = dr
        .excess_risks
        .iter()
        .zip(&iw.excess_risks)
        .filter(|(d, i)| d < i)
        .count();
    assert!(
        wins >= 24,
        "dr-crossfit won only {wins}/40 replications against iw-estimated \
         (dr median {:.4e}, iw median {:.4e})",
        dr.median,
        iw.median
    );
}

/// With no covariate shift every estimator targets the same minimizer:
/// all medians agree within sampling noise, and importance weighting
/// with the oracle ratio (identically one) reproduces source ERM
/// replication by replication.
#[test]
fn estimators_coincide_without_shift() {
    let cfg = ConfigMap::parse(
        "scenario.dim = 2\n\
         scenario.trunc_radius = 3\n\
         scenario.theta_star = 0.15,-0.1\n\
         scenario.seed_domain = cmp-zero\n\
         pilot.ratio.method = ulsif\n\
         pilot.reg.method = ridge\n\
         run.estimators = erm-source,iw-oracle,iw-estimated,dr-oracle,dr-estimated,dr-crossfit\n\
         run.n = 2000\n\
         run.replications = 60\n\
         run.master_seed = 42\n",
    )
    .expect("valid config");
    let result = compare_estimators(&cfg).expect("comparison");
    assert_eq!(result.rows.len(), 6);
    for a in &result.rows {
        for b in &result.rows {
            let gap = (a.median - b.median).abs();
            let scale = a.iqr.min(b.iqr);
            assert!(
                gap <= 3.0 * scale,
                "median gap between {} ({:.4e}) and {} ({:.4e}) exceeds 3 IQRs ({:.4e})",
                a.estimator,
                a.median,
                b.estimator,
                b.median,
                scale
            );
        }
    }
    let erm = result.row("erm-source").expect("erm row");
    let iw = result.row("iw-oracle").expect("iw row");
    assert_eq!(
        erm.excess_risks, iw.excess_risks,
        "unit oracle weights must reproduce unweighted ERM exactly"
    );
}

/// Under a strong shift of a bounded-arctan truth fitted by an identity
/// link, reweighting toward the target law strictly improves on source
/// ERM: the projection under P differs from the projection under Q.
#[test]
fn reweighting_beats_source_erm_under_strong_shift() {
    let cfg = ConfigMap::parse(
        "scenario.dim = 2\n\
         scenario.trunc_radius = 3\n\
         scenario.theta_star = 0.6,0.4\n\
         scenario.source_mean = 0,0\n\
         scenario.target_mean = 1.0,0.6\n\
         scenario.link = bounded-arctan\n\
         scenario.seed_domain = cmp-strong\n\
         model.link = identity\n\
         run.estimators = erm-source,iw-oracle,dr-oracle\n\
         run.n = 4000\n\
         run.replications = 80\n\
         run.master_seed = 42\n",
    )
    .expect("valid config");
    let result = compare_estimators(&cfg).expect("comparison");
    let erm = result.row("erm-source").expect("erm row").median;
    let iw = result.row("iw-oracle").expect("iw row").median;
    let dr = result.row("dr-oracle").expect("dr row").median;
    assert!(
        iw < erm,
        "oracle importance weighting ({iw:.4e}) should beat source ERM ({erm:.4e})"
    );
    assert!(
        dr < erm,
        "oracle DR ({dr:.4e}) should beat source ERM ({erm:.4e})"
    );
}

/// With oracle pilots the DR excess risk decays at the parametric rate
/// and the median excess is monotone along the sample-size grid.
#[test]
fn oracle_pilot_rate_is_parametric_and_monotone() {
    let cfg = ConfigMap::parse(
        "scenario.dim = 3\n\
         scenario.trunc_radius = 3\n\
         scenario.theta_star = 0.15,-0.1,0.12\n\
         scenario.seed_domain = rate-oracle\n\
         run.n_grid = 250,500,1000,2000\n\
         run.replications = 50\n\
         run.master_seed = 42\n",
    )
    .expect("valid config");
    let result = run_rate_study(&cfg).expect("rate study");
    assert!(
        (-1.25..=-0.75).contains(&result.slope),
        "slope {} outside [-1.25, -0.75]",
        result.slope
    );
    assert!(
        result.monotone_fraction() >= 0.9,
        "monotone fraction {} below 0.9",
        result.monotone_fraction()
    );
    assert_eq!(result.zero_median_warnings, 0);
}

//! Command-line surface for the covshift laboratory: binds flat
//! key-value config files to harness runs, and exposes the closed-form
//! bound evaluators as direct subcommands.
//!
//! Exit codes: 0 on success, 1 on configuration errors (bad flags,
//! unreadable config, bad key values; the message names the offender),
//! 2 on runtime failures (solver breakdowns, singular systems). Run
//! outputs are a pure function of (config file, seed override, command);
//! wall-clock timings go only to a timings.json sidecar.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use covshift::complexity::{
    finite_class_bound, nn_class_bound, structure_agnostic_bound, StructureAgnosticInputs,
};
use covshift::config::ConfigMap;
use covshift::error::ErrorClass;
use covshift::harness::{
    compare_estimators, run_bound_dominance, run_crossfit_study, run_double_robustness_sweep,
    run_fit_study, run_rad_study, run_rate_study, write_run, RunArtifacts,
};
use covshift::paramdr::{
    confidence_radius, parametric_bound, sample_size_thresholds, FisherPair, FisherProvenance,
    Smoothness, TheoremConstants,
};
use covshift::scenario::make_gaussian_shift_scenario;
use covshift::{Error, Result};

#[derive(Parser)]
#[command(
    name = "covshift",
    version,
    about = "Doubly-robust covariate shift studies and bound evaluators",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a paired dataset and write source/target CSV files.
    Generate(RunArgs),
    /// Fit the DR estimator on one dataset and report coefficients.
    Fit(RunArgs),
    /// Median excess risk over an n-grid with a fitted log-log slope.
    RateStudy(RunArgs),
    /// Pilot-corruption grid comparing DR against importance weighting.
    DrSweep(RunArgs),
    /// Median and IQR of excess risk for the configured estimators.
    Compare(RunArgs),
    /// Plug-in Rademacher complexity under the source and target laws.
    Rad(RunArgs),
    /// Check the excess-risk bound against realized excess risks.
    Dominance(RunArgs),
    /// Cross-fitted DR on a single dataset.
    Crossfit(RunArgs),
    /// Closed-form bound evaluators (printed, no files written).
    Bounds(BoundsArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `dotted.key = value` lines.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Override run.master_seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite an existing run in the output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(subcommand)]
    formula: BoundsCmd,
}

#[derive(Subcommand)]
enum BoundsCmd {
    /// Rademacher bound for a finite class: 2B sqrt(log(2M)/n).
    Finite {
        /// Range bound B of the class members.
        #[arg(long = "B")]
        bound_b: f64,
        /// Class size M.
        #[arg(long)]
        size: usize,
        /// Sample size n.
        #[arg(long)]
        n: usize,
    },
    /// Rademacher bound for the centered norm-capped network class.
    Nn {
        /// Activation Lipschitz constant.
        #[arg(long = "L")]
        lipschitz: f64,
        /// Input radius.
        #[arg(long = "R")]
        radius: f64,
        /// Network depth.
        #[arg(long)]
        depth: usize,
        /// Per-layer Frobenius caps, comma-separated, one per layer.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        mf: Vec<f64>,
        /// Sample size n.
        #[arg(long)]
        n: usize,
    },
    /// Instance-dependent parametric excess-risk bound.
    Parametric {
        #[command(flatten)]
        fisher: FisherArgs,
        #[arg(long = "n-p")]
        n_p: usize,
        #[arg(long = "n-q")]
        n_q: usize,
    },
    /// Localization radius around the population minimizer.
    Confidence {
        #[command(flatten)]
        fisher: FisherArgs,
        #[arg(long = "n-p")]
        n_p: usize,
        #[arg(long = "n-q")]
        n_q: usize,
    },
    /// Sample-size thresholds N1, N2, N* with kappa and kappa-bar.
    Thresholds {
        #[command(flatten)]
        fisher: FisherArgs,
    },
    /// Six-term structure-agnostic excess-risk bound.
    Agnostic {
        /// L2(P) error of the density-ratio pilot.
        #[arg(long = "err-rho")]
        err_rho: f64,
        /// L2(P) error of the regression pilot.
        #[arg(long = "err-f")]
        err_f: f64,
        #[arg(long = "c-dr")]
        c_dr: f64,
        #[arg(long = "c-rf")]
        c_rf: f64,
        /// Rademacher complexity of the centered class under P.
        #[arg(long = "rad-p")]
        rad_p: f64,
        /// Rademacher complexity of the centered class under Q.
        #[arg(long = "rad-q")]
        rad_q: f64,
        #[arg(long = "n-p")]
        n_p: f64,
        #[arg(long = "n-q")]
        n_q: f64,
        /// Failure probability.
        #[arg(long)]
        delta: f64,
    },
}

/// Fisher pair and theorem constants shared by the parametric formulas.
#[derive(Args)]
struct FisherArgs {
    /// Dimension d of the Fisher matrices.
    #[arg(long)]
    dim: usize,
    /// Row-major entries of I_P, comma-separated, d*d values.
    #[arg(long = "i-p", value_delimiter = ',', num_args = 1..)]
    i_p: Vec<f64>,
    /// Row-major entries of I_Q, comma-separated, d*d values.
    #[arg(long = "i-q", value_delimiter = ',', num_args = 1..)]
    i_q: Vec<f64>,
    /// Absolute constant K.
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    /// Failure probability.
    #[arg(long)]
    delta: f64,
    #[arg(long = "c-dr", default_value_t = 1.0)]
    c_dr: f64,
    #[arg(long = "c-rf", default_value_t = 1.0)]
    c_rf: f64,
    /// Gradient bound B1 of the model.
    #[arg(long, default_value_t = 1.0)]
    b1: f64,
    /// Hessian bound B2 of the model.
    #[arg(long, default_value_t = 0.0)]
    b2: f64,
    /// Third-derivative bound B3 of the model.
    #[arg(long, default_value_t = 0.0)]
    b3: f64,
}

impl FisherArgs {
    fn build(&self) -> Result<(FisherPair, TheoremConstants)> {
        let fp = FisherPair::new(
            parse_matrix(self.dim, &self.i_p, "--i-p")?,
            parse_matrix(self.dim, &self.i_q, "--i-q")?,
            FisherProvenance::ClosedForm,
        )?;
        let tc = TheoremConstants::new(
            self.k,
            self.delta,
            self.c_dr,
            self.c_rf,
            Smoothness {
                b1: self.b1,
                b2: self.b2,
                b3: self.b3,
            },
        )?;
        Ok((fp, tc))
    }
}

fn parse_matrix(dim: usize, entries: &[f64], flag: &str) -> Result<DMatrix<f64>> {
    if entries.len() != dim * dim {
        return Err(Error::DimensionMismatch {
            context: format!("{flag} entries for a {dim}x{dim} matrix"),
            expected: dim * dim,
            got: entries.len(),
        });
    }
    Ok(DMatrix::from_row_slice(dim, dim, entries))
}

/// Format with 9 significant digits in plain decimal notation.
fn sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exponent = v.abs().log10().floor() as i32;
    let decimals = (8 - exponent).max(0) as usize;
    format!("{v:.decimals$}")
}

fn load_config(args: &RunArgs) -> Result<ConfigMap> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| Error::Config {
        key: "config".into(),
        reason: format!("cannot read `{}`: {e}", args.config.display()),
    })?;
    let mut cfg = ConfigMap::parse(&text)?;
    if let Some(seed) = args.seed {
        cfg.set("run.master_seed", seed);
    }
    Ok(cfg)
}

fn persist(args: &RunArgs, artifacts: &RunArtifacts, timings: &str) -> Result<()> {
    write_run(&args.out, artifacts, Some(timings), args.force)?;
    println!("wrote {}", args.out.join("summary.json").display());
    Ok(())
}

fn generate(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let sc = make_gaussian_shift_scenario(&cfg)?;
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
    let master = cfg.get_u64_or("run.master_seed", 0)?;
    let sample = sc.sample_dataset(n_p, n_q, master)?;
    std::fs::create_dir_all(&args.out)?;
    let source = args.out.join("source.csv");
    let target = args.out.join("target.csv");
    if source.exists() && !args.force {
        return Err(Error::OutputExists {
            path: source.display().to_string(),
        });
    }
    sample.save_csv(&source, &target)?;
    std::fs::write(args.out.join("config_echo.txt"), cfg.emit())?;
    println!(
        "wrote {} ({} rows) and {} ({} rows)",
        source.display(),
        n_p,
        target.display(),
        n_q
    );
    Ok(())
}

fn fit(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let result = run_fit_study(&cfg)?;
    persist(args, &result.artifacts(), &result.timings_json())?;
    let theta: Vec<String> = result.theta.iter().map(|t| sig9(*t)).collect();
    println!("estimator {}", result.estimator);
    println!("theta = [{}]", theta.join(", "));
    println!("excess risk = {}", sig9(result.excess_risk));
    println!(
        "pilot errors: rho {} / f {}",
        sig9(result.err_rho),
        sig9(result.err_f)
    );
    Ok(())
}

fn rate_study(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let result = run_rate_study(&cfg)?;
    persist(args, &result.artifacts(), &result.timings_json())?;
    for cell in &result.cells {
        println!(
            "n = {:>7}: median excess = {} ({} replications, {} failed)",
            cell.n,
            sig9(cell.median),
            cell.excess_risks.len(),
            cell.failed_replications
        );
    }
    if result.zero_median_warnings > 0 {
        println!(
            "warning: {} cell(s) with zero median excluded from the fit",
            result.zero_median_warnings
        );
    }
    println!(
        "slope = {} (intercept {})",
        sig9(result.slope),
        sig9(result.intercept)
    );
    Ok(())
}

fn dr_sweep(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let result = run_double_robustness_sweep(&cfg)?;
    persist(args, &result.artifacts(), &result.timings_json())?;
    for cell in &result.cells {
        println!(
            "eps_rho = {} eps_f = {}: dr median {} (iqr {}), iw median {} (iqr {}), \
             dr bias {}, iw bias {}",
            cell.eps_ratio,
            cell.eps_reg,
            sig9(cell.dr_median),
            sig9(cell.dr_iqr),
            sig9(cell.iw_median),
            sig9(cell.iw_iqr),
            sig9(cell.dr_bias),
            sig9(cell.iw_bias)
        );
    }
    Ok(())
}

fn compare(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let result = compare_estimators(&cfg)?;
    persist(args, &result.artifacts(), &result.timings_json())?;
    for row in &result.rows {
        println!(
            "{:<13} median {} (iqr {}, {} failed)",
            row.estimator,
            sig9(row.median),
            sig9(row.iqr),
            row.failed_replications
        );
    }
    Ok(())
}

fn rad(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let result = run_rad_study(&cfg)?;
    persist(args, &result.artifacts(), &result.timings_json())?;
    println!(
        "rad_P = {} (se {}, {} points, {})",
        sig9(result.rad_p.value),
        sig9(result.rad_p.std_error),
        result.n_p,
        result.rad_p.mode
    );
    println!(
        "rad_Q = {} (se {}, {} points, {})",
        sig9(result.rad_q.value),
        sig9(result.rad_q.std_error),
        result.n_q,
        result.rad_q.mode
    );
    Ok(())
}

fn dominance(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let result = run_bound_dominance(&cfg)?;
    persist(args, &result.artifacts(), &result.timings_json())?;
    println!(
        "bound satisfied in {}/{} replications ({})",
        result.satisfied,
        result.replications,
        sig9(result.fraction)
    );
    println!(
        "median excess = {}, median bound = {}",
        sig9(result.excess_median),
        sig9(result.bound_median)
    );
    Ok(())
}

fn crossfit(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let result = run_crossfit_study(&cfg)?;
    persist(args, &result.artifacts(), &result.timings_json())?;
    let theta: Vec<String> = result.theta.iter().map(|t| sig9(*t)).collect();
    println!(
        "pilot half: {} source / {} target; estimation half: {} source / {} target",
        result.pilot_split.0, result.pilot_split.1, result.fit_split.0, result.fit_split.1
    );
    println!("theta = [{}]", theta.join(", "));
    println!("excess risk = {}", sig9(result.excess_risk));
    println!(
        "pilot errors: rho {} / f {}",
        sig9(result.err_rho),
        sig9(result.err_f)
    );
    Ok(())
}

fn bounds(args: &BoundsArgs) -> Result<()> {
    match &args.formula {
        BoundsCmd::Finite { bound_b, size, n } => {
            let value = finite_class_bound(*bound_b, *size, *n)?;
            println!("finite class bound = {}", sig9(value));
            println!("  deviation term = {}", sig9(value));
        }
        BoundsCmd::Nn {
            lipschitz,
            radius,
            depth,
            mf,
            n,
        } => {
            let value = nn_class_bound(*lipschitz, *radius, *depth, mf, *n)?;
            // Split the two addends inside the braces for the breakdown.
            let scale = 2.0 / (*n as f64).sqrt();
            let center_term = scale * (2.0_f64.ln()).sqrt();
            println!("nn class bound = {}", sig9(value));
            println!("  network term = {}", sig9(value - center_term));
            println!("  centering term = {}", sig9(center_term));
        }
        BoundsCmd::Parametric { fisher, n_p, n_q } => {
            let (fp, tc) = fisher.build()?;
            let value = parametric_bound(&fp, &tc, *n_p, *n_q)?;
            // The bound is lead * (trace/n_P + d/n_Q); recover the split
            // by evaluating the source share at an astronomically large
            // n_Q, which zeroes the target term without rounding.
            let source_term = parametric_bound(&fp, &tc, *n_p, usize::MAX)?;
            println!("parametric bound = {}", sig9(value));
            println!("  source term = {}", sig9(source_term));
            println!("  target term = {}", sig9(value - source_term));
        }
        BoundsCmd::Confidence { fisher, n_p, n_q } => {
            let (fp, tc) = fisher.build()?;
            let value = confidence_radius(&fp, &tc, *n_p, *n_q)?;
            let source_term = confidence_radius(&fp, &tc, *n_p, usize::MAX)?;
            println!("confidence radius = {}", sig9(value));
            println!("  source term = {}", sig9(source_term));
            println!("  target term = {}", sig9(value - source_term));
        }
        BoundsCmd::Thresholds { fisher } => {
            let (fp, tc) = fisher.build()?;
            let th = sample_size_thresholds(&fp, &tc)?;
            println!("N* = {}", sig9(th.n_star));
            println!("  N1 = {}", sig9(th.n1));
            println!("  N2 = {}", sig9(th.n2));
            println!("  kappa = {}", sig9(th.kappa));
            println!("  kappa-bar = {}", sig9(th.kappa_bar));
        }
        BoundsCmd::Agnostic {
            err_rho,
            err_f,
            c_dr,
            c_rf,
            rad_p,
            rad_q,
            n_p,
            n_q,
            delta,
        } => {
            let bound = structure_agnostic_bound(&StructureAgnosticInputs {
                err_rho: *err_rho,
                err_f: *err_f,
                c_dr: *c_dr,
                c_rf: *c_rf,
                rad_p: *rad_p,
                rad_q: *rad_q,
                n_p: *n_p,
                n_q: *n_q,
                delta: *delta,
            })?;
            println!("structure-agnostic bound = {}", sig9(bound.total()));
            for (name, value) in bound.terms() {
                println!("  {name} = {}", sig9(value));
            }
        }
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(args) => generate(args),
        Command::Fit(args) => fit(args),
        Command::RateStudy(args) => rate_study(args),
        Command::DrSweep(args) => dr_sweep(args),
        Command::Compare(args) => compare(args),
        Command::Rad(args) => rad(args),
        Command::Dominance(args) => dominance(args),
        Command::Crossfit(args) => crossfit(args),
        Command::Bounds(args) => bounds(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive here as "errors" but are
            // successful outcomes; everything else is a usage problem.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (label, code) = match e.class() {
                ErrorClass::Config => ("config", 1),
                ErrorClass::Runtime => ("runtime", 2),
            };
            eprintln!("error[{label}]: {e}");
            ExitCode::from(code)
        }
    }
}

//! Command-line interface: fit, simulate, evaluate, infer, select.
//!
//! Panels are long-format CSV with header `time,id,y,x1..xd`. Fit artifacts
//! are plain-text matrices plus a JSON manifest; metric reports are CSV
//! tables keyed by (model, tau, N, T, metric). Exit codes: 0 ok, 2 input
//! error, 3 estimation degeneracy. `QCF_THREADS` caps the worker pool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qcf::artifacts::{load_fit, save_fit};
use qcf::error::{Error, Result};
use qcf::inference::{theta_confidence_intervals, theta_covariance, wald_test, InferenceConfig};
use qcf::metrics::{metric_bundle, rolling_oos, write_metric_rows, MetricRow, QuantileFit};
use qcf::panel::Panel;
use qcf::pipeline::{fit_qcf, FitConfig};
use qcf::select::{select_hyperparams, HyperGrid};
use qcf::sim::{
    run_benchmark, BenchmarkSpec, HyperSpec, ModelSpec, Setting,
};

#[derive(Parser)]
#[command(name = "qcf", about = "Characteristics-augmented quantile factor models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the three-step estimator on a panel, one fit per quantile level.
    Fit(FitArgs),
    /// Data-driven selection of (r, m, a) by held-out last-period loss.
    Select(SelectArgs),
    /// Evaluate a saved fit on a panel, or run the rolling out-of-sample
    /// protocol.
    Evaluate(EvaluateArgs),
    /// Confidence intervals and Wald tests for index parameters of a saved
    /// fit.
    Infer(InferArgs),
    /// Run a simulation benchmark from a key-value experiment file.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Long-format CSV panel.
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated quantile levels.
    #[arg(long, value_delimiter = ',', required = true)]
    tau: Vec<f64>,
    /// Number of factors (fixed-hyperparameter mode).
    #[arg(long)]
    r: Option<usize>,
    /// Sieve truncation order (fixed-hyperparameter mode).
    #[arg(long)]
    m: Option<usize>,
    /// Ridge weight for step 1.
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Selection grid, e.g. "r=1,2,3;m=2,3;a=0,1e-3" (overrides --r/--m).
    #[arg(long)]
    grid: Option<String>,
    /// Standardize characteristics to zero mean, unit variance.
    #[arg(long)]
    standardize: bool,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Recorded in the manifest for provenance.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    tau: f64,
    /// Grid, e.g. "r=1,2,3;m=2,3;a=0,1e-3,1e-2"; defaults to the built-in
    /// grid.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    standardize: bool,
    /// Optional directory for the score table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Saved fit directory (metric recomputation mode).
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Rolling window length in periods (rolling out-of-sample mode).
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    fit: PathBuf,
    /// Factor index (1-based).
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Components (1-based) for the joint Wald test; default tests each
    /// component separately.
    #[arg(long, value_delimiter = ',')]
    components: Option<Vec<usize>>,
    /// Confidence level for the intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Powell bandwidth rule constant.
    #[arg(long, default_value_t = 1.06)]
    bandwidth_const: f64,
    /// Explicit bandwidth override.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Flat key-value experiment description.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the replication count.
    #[arg(long)]
    reps: Option<usize>,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("QCF_THREADS") {
        if let Ok(n) = threads.trim().parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Select(args) => cmd_select(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_input(path: &Path, standardize: bool) -> Result<Panel> {
    let mut panel = Panel::from_csv_path(path)?;
    if standardize {
        panel.standardize()?;
    }
    Ok(panel)
}

fn parse_grid(spec: &str) -> Result<HyperGrid> {
    let mut grid = HyperGrid {
        r: vec![],
        m: vec![],
        ridge: vec![],
    };
    for part in spec.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (key, values) = part.split_once('=').ok_or_else(|| {
            Error::InvalidInput(format!("grid component '{part}' is not key=values"))
        })?;
        let values: Vec<&str> = values.split(',').map(str::trim).collect();
        match key.trim() {
            "r" => {
                for v in values {
                    grid.r.push(parse_usize(v, "grid r")?);
                }
            }
            "m" => {
                for v in values {
                    grid.m.push(parse_usize(v, "grid m")?);
                }
            }
            "a" | "ridge" => {
                for v in values {
                    grid.ridge.push(parse_f64(v, "grid ridge")?);
                }
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown grid component '{other}' (expected r, m, a)"
                )))
            }
        }
    }
    if grid.r.is_empty() {
        grid.r = HyperGrid::default().r;
    }
    if grid.m.is_empty() {
        grid.m = HyperGrid::default().m;
    }
    if grid.ridge.is_empty() {
        grid.ridge = HyperGrid::default().ridge;
    }
    Ok(grid)
}

fn parse_usize(v: &str, what: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| Error::InvalidInput(format!("{what}: cannot parse '{v}'")))
}

fn parse_f64(v: &str, what: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| Error::InvalidInput(format!("{what}: cannot parse '{v}'")))
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let panel = load_input(&args.input, args.standardize)?;
    std::fs::create_dir_all(&args.out)?;
    let mut rows: Vec<MetricRow> = Vec::new();
    let mut degenerate = false;
    let mut error_records = Vec::new();

    for &tau in &args.tau {
        let (r, m, ridge) = if let Some(grid_spec) = &args.grid {
            let grid = parse_grid(grid_spec)?;
            let report = select_hyperparams(&panel, &grid, tau)?;
            (report.best.r, report.best.m, report.best.ridge)
        } else {
            let r = args.r.ok_or_else(|| {
                Error::InvalidInput("either --grid or both --r and --m are required".into())
            })?;
            let m = args.m.ok_or_else(|| {
                Error::InvalidInput("either --grid or both --r and --m are required".into())
            })?;
            (r, m, args.ridge)
        };
        let config = FitConfig { tau, r, m, ridge };
        let fit = fit_qcf(&panel, &config)?;
        let fitted = fit.fitted_on(&panel)?;
        let bundle = metric_bundle(&QuantileFit::full(tau, fitted), &panel)?;

        let tau_dir = args.out.join(format!("tau_{tau}"));
        save_fit(&tau_dir, &fit, panel.standardization(), args.seed)?;
        for (metric, value) in [
            ("qhe", bundle.qhe),
            ("aqe", bundle.aqe),
            ("r1_total", bundle.r1_total),
            ("r1_time_series", bundle.r1_time_series),
            ("r1_cross_section", bundle.r1_cross_section),
        ] {
            rows.push(MetricRow {
                model: "qcf".into(),
                tau,
                n: panel.n_units(),
                t: panel.n_periods(),
                phase: "in_sample".into(),
                metric: metric.into(),
                value,
            });
        }
        if fit.flags.is_degenerate() {
            degenerate = true;
            error_records.push(serde_json::json!({
                "tau": tau,
                "kind": "estimation_degeneracy",
                "flags": fit.flags,
            }));
        }
        println!(
            "tau={tau}: r={r} m={m} a={ridge} qhe={:.6} aqe={:.6} r1_total={:.6}",
            bundle.qhe, bundle.aqe, bundle.r1_total
        );
    }

    let file = std::fs::File::create(args.out.join("metrics.csv"))?;
    write_metric_rows(file, &rows)?;
    if degenerate {
        let record = serde_json::to_string_pretty(&error_records)?;
        std::fs::write(args.out.join("errors.json"), record)?;
        return Err(Error::Degenerate(
            "one or more fits degenerated; see errors.json".into(),
        ));
    }
    Ok(())
}

fn cmd_select(args: SelectArgs) -> Result<()> {
    let panel = load_input(&args.input, args.standardize)?;
    let grid = match &args.grid {
        Some(spec) => parse_grid(spec)?,
        None => HyperGrid::default(),
    };
    let report = select_hyperparams(&panel, &grid, args.tau)?;
    println!(
        "selected r={} m={} a={} (held-out loss {:.6})",
        report.best.r, report.best.m, report.best.ridge, report.best.score
    );
    for skip in &report.skipped {
        eprintln!(
            "skipped r={} m={} a={}: {}",
            skip.r, skip.m, skip.ridge, skip.reason
        );
    }
    if let Some(out) = args.out {
        std::fs::create_dir_all(&out)?;
        let mut csv = csv::Writer::from_path(out.join("selection.csv"))?;
        csv.write_record(["r", "m", "ridge", "score"])?;
        for s in &report.scored {
            csv.write_record([
                s.r.to_string(),
                s.m.to_string(),
                s.ridge.to_string(),
                s.score.to_string(),
            ])?;
        }
        csv.flush()?;
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let panel = load_input(&args.input, args.standardize)?;
    match (&args.fit, args.window) {
        (Some(fit_dir), None) => {
            let (fit, _) = load_fit(fit_dir)?;
            let fitted = fit.fitted_on(&panel)?;
            let bundle = metric_bundle(&QuantileFit::full(fit.config.tau, fitted), &panel)?;
            println!(
                "tau={}: qhe={:.6} aqe={:.6} r1_total={:.6} r1_ts={:.6} r1_cs={:.6}",
                fit.config.tau,
                bundle.qhe,
                bundle.aqe,
                bundle.r1_total,
                bundle.r1_time_series,
                bundle.r1_cross_section
            );
            if let Some(out) = args.out {
                std::fs::create_dir_all(&out)?;
                let rows = bundle_rows("qcf", fit.config.tau, &panel, "in_sample", &bundle);
                let file = std::fs::File::create(out.join("metrics.csv"))?;
                write_metric_rows(file, &rows)?;
            }
            Ok(())
        }
        (None, Some(window)) => {
            let tau = args
                .tau
                .ok_or_else(|| Error::InvalidInput("rolling mode needs --tau".into()))?;
            let r = args
                .r
                .ok_or_else(|| Error::InvalidInput("rolling mode needs --r".into()))?;
            let m = args
                .m
                .ok_or_else(|| Error::InvalidInput("rolling mode needs --m".into()))?;
            let config = FitConfig {
                tau,
                r,
                m,
                ridge: args.ridge,
            };
            let report = rolling_oos(&panel, window, &config)?;
            let bundle = metric_bundle(&report.fit, &panel)?;
            println!(
                "rolling window={window}: qhe={:.6} aqe={:.6} r1_total={:.6} r1_ts={:.6} r1_cs={:.6} (skipped {} periods)",
                bundle.qhe,
                bundle.aqe,
                bundle.r1_total,
                bundle.r1_time_series,
                bundle.r1_cross_section,
                report.skipped.len()
            );
            for (t, reason) in &report.skipped {
                eprintln!("skipped period {}: {reason}", panel.period_key(*t));
            }
            if let Some(out) = args.out {
                std::fs::create_dir_all(&out)?;
                let rows = bundle_rows("qcf", tau, &panel, "out_of_sample", &bundle);
                let file = std::fs::File::create(out.join("metrics.csv"))?;
                write_metric_rows(file, &rows)?;
            }
            Ok(())
        }
        _ => Err(Error::InvalidInput(
            "evaluate needs exactly one of --fit (saved-fit mode) or --window (rolling mode)"
                .into(),
        )),
    }
}

fn bundle_rows(
    model: &str,
    tau: f64,
    panel: &Panel,
    phase: &str,
    bundle: &qcf::metrics::MetricBundle,
) -> Vec<MetricRow> {
    [
        ("qhe", bundle.qhe),
        ("aqe", bundle.aqe),
        ("r1_total", bundle.r1_total),
        ("r1_time_series", bundle.r1_time_series),
        ("r1_cross_section", bundle.r1_cross_section),
    ]
    .into_iter()
    .map(|(metric, value)| MetricRow {
        model: model.into(),
        tau,
        n: panel.n_units(),
        t: panel.n_periods(),
        phase: phase.into(),
        metric: metric.into(),
        value,
    })
    .collect()
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let panel = load_input(&args.input, false)?;
    let (fit, standardization) = load_fit(&args.fit)?;
    let mut panel = panel;
    if standardization.is_some() && panel.standardization().is_none() {
        // The fit was produced on standardized characteristics.
        panel.standardize()?;
    }
    if args.k == 0 || args.k > fit.config.r {
        return Err(Error::InvalidInput(format!(
            "--k must be in 1..={}",
            fit.config.r
        )));
    }
    let k = args.k - 1;
    let config = InferenceConfig {
        bandwidth_const: args.bandwidth_const,
        bandwidth: args.bandwidth,
    };
    let cov = theta_covariance(&panel, &fit, k, &config)?;
    let theta_k = fit.thetas.column(k);
    let intervals = theta_confidence_intervals(theta_k, &cov, args.level)?;

    println!(
        "factor {}: bandwidth={:.6}, effective NT={}",
        args.k, cov.bandwidth, cov.nt_effective
    );
    let mut out_rows: Vec<(String, f64, f64, f64, f64, f64)> = Vec::new();
    for j in 0..theta_k.len() {
        let se = (cov.matrix[[j, j]] / cov.nt_effective).max(0.0).sqrt();
        let wald = wald_test(theta_k, cov.matrix.view(), &[j], cov.nt_effective)?;
        println!(
            "theta[{}] = {:+.6}  se = {:.6}  ci = [{:+.6}, {:+.6}]  t-type W = {:.4} (p = {:.4})",
            j + 1,
            theta_k[j],
            se,
            intervals[j].0,
            intervals[j].1,
            wald.statistic,
            wald.p_value
        );
        out_rows.push((
            format!("x{}", j + 1),
            theta_k[j],
            se,
            intervals[j].0,
            intervals[j].1,
            wald.p_value,
        ));
    }
    if let Some(components) = &args.components {
        let idx: Vec<usize> = components
            .iter()
            .map(|&c| {
                if c == 0 || c > theta_k.len() {
                    Err(Error::InvalidInput(format!(
                        "component {c} out of range 1..={}",
                        theta_k.len()
                    )))
                } else {
                    Ok(c - 1)
                }
            })
            .collect::<Result<_>>()?;
        let wald = wald_test(theta_k, cov.matrix.view(), &idx, cov.nt_effective)?;
        println!(
            "joint H0 (components {:?}): W = {:.4}, dof = {}, p = {:.6}",
            components, wald.statistic, wald.dof, wald.p_value
        );
    }
    if let Some(out) = args.out {
        std::fs::create_dir_all(&out)?;
        let mut csv = csv::Writer::from_path(out.join("infer.csv"))?;
        csv.write_record(["component", "estimate", "se", "ci_lo", "ci_hi", "p_value"])?;
        for (name, est, se, lo, hi, p) in out_rows {
            csv.write_record([
                name,
                est.to_string(),
                se.to_string(),
                lo.to_string(),
                hi.to_string(),
                p.to_string(),
            ])?;
        }
        csv.flush()?;
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        Error::InvalidInput(format!("cannot read {}: {e}", args.config.display()))
    })?;
    let mut spec = parse_benchmark_config(&text)?;
    if let Some(reps) = args.reps {
        spec.reps = reps;
    }
    let report = run_benchmark(&spec)?;
    std::fs::create_dir_all(&args.out)?;
    let file = std::fs::File::create(args.out.join("metrics.csv"))?;
    write_metric_rows(file, &report.rows)?;
    let mut per_rep = csv::Writer::from_path(args.out.join("per_rep.csv"))?;
    for rec in &report.per_rep {
        per_rep.serialize(rec)?;
    }
    per_rep.flush()?;
    let summary = serde_json::to_string_pretty(&report)?;
    std::fs::write(args.out.join("summary.json"), summary)?;
    for row in &report.rows {
        println!(
            "{} tau={} N={} T={} {} {} = {:.6}",
            row.model, row.tau, row.n, row.t, row.phase, row.metric, row.value
        );
    }
    if !report.failures.is_empty() {
        eprintln!("{} replication failures recorded", report.failures.len());
    }
    Ok(())
}

/// Parse the flat key-value experiment format:
///
/// ```text
/// setting = 2
/// cells = 200x50, 400x100
/// taus = 0.05, 0.5
/// reps = 50
/// seed = 17
/// error_scale = 0.70710678118654757
/// qfm_max_iter = 60
/// model.qcf = r=2 m=4 a=1e-3
/// model.qcf_nopen = r=2 m=4 a=0
/// model.qcf_sel = select reps=8 r=1,2,3 m=2,3 a=0,1e-3
/// model.qfm = qfm rank=auto rmax=4
/// ```
fn parse_benchmark_config(text: &str) -> Result<BenchmarkSpec> {
    let mut setting = None;
    let mut cells = Vec::new();
    let mut taus = Vec::new();
    let mut reps = None;
    let mut seed = 0u64;
    let mut error_scale = 0.5f64.sqrt();
    let mut qfm_max_iter = 60usize;
    let mut models = Vec::new();

    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: "config".into(),
            line: line_no as u64 + 1,
            msg: "expected key = value".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "setting" => {
                setting = Some(match value {
                    "1" => Setting::One,
                    "2" => Setting::Two,
                    other => {
                        return Err(Error::InvalidInput(format!(
                            "setting must be 1 or 2, got '{other}'"
                        )))
                    }
                });
            }
            "cells" => {
                for cell in value.split(',') {
                    let cell = cell.trim();
                    let (n, t) = cell.split_once('x').ok_or_else(|| {
                        Error::InvalidInput(format!("cell '{cell}' is not NxT"))
                    })?;
                    cells.push((parse_usize(n.trim(), "cell N")?, parse_usize(t.trim(), "cell T")?));
                }
            }
            "taus" => {
                for tau in value.split(',') {
                    taus.push(parse_f64(tau.trim(), "tau")?);
                }
            }
            "reps" => reps = Some(parse_usize(value, "reps")?),
            "seed" => seed = value.parse::<u64>().map_err(|_| {
                Error::InvalidInput(format!("seed: cannot parse '{value}'"))
            })?,
            "error_scale" => error_scale = parse_f64(value, "error_scale")?,
            "qfm_max_iter" => qfm_max_iter = parse_usize(value, "qfm_max_iter")?,
            k if k.starts_with("model.") => {
                let label = k.trim_start_matches("model.").to_string();
                models.push(parse_model_spec(&label, value)?);
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown config key '{other}'"
                )))
            }
        }
    }
    Ok(BenchmarkSpec {
        setting: setting
            .ok_or_else(|| Error::InvalidInput("config needs 'setting'".into()))?,
        cells: if cells.is_empty() {
            return Err(Error::InvalidInput("config needs 'cells'".into()));
        } else {
            cells
        },
        taus: if taus.is_empty() {
            return Err(Error::InvalidInput("config needs 'taus'".into()));
        } else {
            taus
        },
        reps: reps.ok_or_else(|| Error::InvalidInput("config needs 'reps'".into()))?,
        seed,
        error_scale,
        models: if models.is_empty() {
            return Err(Error::InvalidInput(
                "config needs at least one 'model.<label>' entry".into(),
            ));
        } else {
            models
        },
        qfm_max_iter,
    })
}

fn parse_model_spec(label: &str, value: &str) -> Result<ModelSpec> {
    let tokens: Vec<&str> = value.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::InvalidInput(format!(
            "model.{label}: empty specification"
        )));
    }
    if tokens[0] == "qfm" {
        let mut rank = None;
        let mut r_max = 4usize;
        for tok in &tokens[1..] {
            let (k, v) = tok.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("model.{label}: bad token '{tok}'"))
            })?;
            match k {
                "rank" => {
                    rank = if v == "auto" {
                        None
                    } else {
                        Some(parse_usize(v, "qfm rank")?)
                    }
                }
                "rmax" => r_max = parse_usize(v, "qfm rmax")?,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "model.{label}: unknown qfm key '{other}'"
                    )))
                }
            }
        }
        return Ok(ModelSpec::Qfm {
            label: label.to_string(),
            rank,
            r_max,
        });
    }
    if tokens[0] == "select" {
        let mut select_reps = 8usize;
        let mut grid = HyperGrid {
            r: vec![],
            m: vec![],
            ridge: vec![],
        };
        for tok in &tokens[1..] {
            let (k, v) = tok.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("model.{label}: bad token '{tok}'"))
            })?;
            match k {
                "reps" => select_reps = parse_usize(v, "select reps")?,
                "r" => {
                    for item in v.split(',') {
                        grid.r.push(parse_usize(item, "grid r")?);
                    }
                }
                "m" => {
                    for item in v.split(',') {
                        grid.m.push(parse_usize(item, "grid m")?);
                    }
                }
                "a" => {
                    for item in v.split(',') {
                        grid.ridge.push(parse_f64(item, "grid a")?);
                    }
                }
                other => {
                    return Err(Error::InvalidInput(format!(
                        "model.{label}: unknown select key '{other}'"
                    )))
                }
            }
        }
        let defaults = HyperGrid::default();
        if grid.r.is_empty() {
            grid.r = defaults.r.clone();
        }
        if grid.m.is_empty() {
            grid.m = defaults.m.clone();
        }
        if grid.ridge.is_empty() {
            grid.ridge = defaults.ridge.clone();
        }
        return Ok(ModelSpec::Qcf {
            label: label.to_string(),
            hyper: HyperSpec::Selected {
                grid,
                select_reps,
            },
        });
    }
    // Fixed hyperparameters: r=.. m=.. a=..
    let mut r = None;
    let mut m = None;
    let mut ridge = 0.0;
    for tok in &tokens {
        let (k, v) = tok.split_once('=').ok_or_else(|| {
            Error::InvalidInput(format!("model.{label}: bad token '{tok}'"))
        })?;
        match k {
            "r" => r = Some(parse_usize(v, "model r")?),
            "m" => m = Some(parse_usize(v, "model m")?),
            "a" | "ridge" => ridge = parse_f64(v, "model ridge")?,
            other => {
                return Err(Error::InvalidInput(format!(
                    "model.{label}: unknown key '{other}'"
                )))
            }
        }
    }
    Ok(ModelSpec::Qcf {
        label: label.to_string(),
        hyper: HyperSpec::Fixed {
            r: r.ok_or_else(|| Error::InvalidInput(format!("model.{label}: needs r=")))?,
            m: m.ok_or_else(|| Error::InvalidInput(format!("model.{label}: needs m=")))?,
            ridge,
        },
    })
}

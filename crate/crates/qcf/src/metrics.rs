//! Quantile fit metrics and the rolling out-of-sample protocol.
//!
//! Three families of measures:
//!
//! - `QHE(τ) = |mean 1{y < Q̂} − τ|` — calibration of the hitting frequency;
//!   ties `y = Q̂` count as non-hits.
//! - `AQE(τ) = mean ρ_τ(y − Q̂)` — accuracy under the check loss.
//! - `R¹` — quantile goodness of fit `1 − Σρ_τ(y−Q̂)/Σρ_τ(y)`, reported in
//!   total form, as a `T_i`-weighted average of per-unit time-series ratios,
//!   and as a simple average of per-period cross-sectional ratios. Slices
//!   whose raw loss is zero are excluded and counted. Missing cells are
//!   equivalent to the `y = Q̂ = 0` fill: they add nothing to either sum.
//!
//! The total form is computed as `1 − AQE(fit)/AQE(zero)`, which is the same
//! ratio and keeps the identity with the AQE exact in floating point.

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::pipeline::{fit_qcf, FitConfig};
use crate::qr::quantile_loss;

/// Fitted conditional quantiles aligned to (a subset of) panel rows.
#[derive(Debug, Clone)]
pub struct QuantileFit {
    pub tau: f64,
    /// Global panel row indices that were scored.
    pub rows: Vec<usize>,
    /// Fitted quantile per scored row.
    pub fitted: Vec<f64>,
}

impl QuantileFit {
    /// Fit covering every row of `panel`, in row order.
    pub fn full(tau: f64, fitted: Array1<f64>) -> Self {
        QuantileFit {
            tau,
            rows: (0..fitted.len()).collect(),
            fitted: fitted.to_vec(),
        }
    }

    fn check(&self, panel: &Panel) -> Result<()> {
        if self.rows.len() != self.fitted.len() {
            return Err(Error::Dimension(
                "quantile fit rows/fitted length mismatch".into(),
            ));
        }
        if self.rows.is_empty() {
            return Err(Error::InvalidInput("quantile fit scored no rows".into()));
        }
        if self.rows.iter().any(|&r| r >= panel.n_total()) {
            return Err(Error::Dimension(
                "quantile fit references rows outside the panel".into(),
            ));
        }
        Ok(())
    }
}

/// Quantile hitting error.
pub fn qhe(fit: &QuantileFit, panel: &Panel) -> Result<f64> {
    fit.check(panel)?;
    let hits = fit
        .rows
        .iter()
        .zip(&fit.fitted)
        .filter(|(&row, &q)| panel.y_row(row) < q)
        .count();
    Ok((hits as f64 / fit.rows.len() as f64 - fit.tau).abs())
}

/// Average quantile empirical error.
pub fn aqe(fit: &QuantileFit, panel: &Panel) -> Result<f64> {
    fit.check(panel)?;
    let total: f64 = fit
        .rows
        .iter()
        .zip(&fit.fitted)
        .map(|(&row, &q)| quantile_loss(panel.y_row(row) - q, fit.tau))
        .sum();
    Ok(total / fit.rows.len() as f64)
}

/// The three goodness-of-fit ratios plus slice-exclusion counters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R1Metrics {
    pub total: f64,
    pub time_series: f64,
    pub cross_section: f64,
    /// Units whose raw time-series loss was zero (excluded from the
    /// weighted average).
    pub excluded_units: usize,
    /// Periods whose raw cross-sectional loss was zero (excluded from the
    /// simple average).
    pub excluded_periods: usize,
}

pub fn r1_metrics(fit: &QuantileFit, panel: &Panel) -> Result<R1Metrics> {
    fit.check(panel)?;
    let tau = fit.tau;

    let fit_loss = aqe(fit, panel)?;
    let zero_fit = QuantileFit {
        tau,
        rows: fit.rows.clone(),
        fitted: vec![0.0; fit.rows.len()],
    };
    let raw_loss = aqe(&zero_fit, panel)?;
    if raw_loss == 0.0 {
        return Err(Error::Degenerate(
            "all scored outcomes are zero: total R1 undefined".into(),
        ));
    }
    let total = 1.0 - fit_loss / raw_loss;

    // Per-unit and per-period loss accumulators over scored rows only.
    let n_units = panel.n_units();
    let n_periods = panel.n_periods();
    let mut unit_fit = vec![0.0f64; n_units];
    let mut unit_raw = vec![0.0f64; n_units];
    let mut unit_count = vec![0usize; n_units];
    let mut period_fit = vec![0.0f64; n_periods];
    let mut period_raw = vec![0.0f64; n_periods];
    let mut period_count = vec![0usize; n_periods];

    let mut period_of_row = vec![0usize; panel.n_total()];
    for t in 0..n_periods {
        for row in panel.rows(t) {
            period_of_row[row] = t;
        }
    }
    for (&row, &q) in fit.rows.iter().zip(&fit.fitted) {
        let y = panel.y_row(row);
        let u = panel.unit_of_row(row) as usize;
        let t = period_of_row[row];
        unit_fit[u] += quantile_loss(y - q, tau);
        unit_raw[u] += quantile_loss(y, tau);
        unit_count[u] += 1;
        period_fit[t] += quantile_loss(y - q, tau);
        period_raw[t] += quantile_loss(y, tau);
        period_count[t] += 1;
    }

    let mut weighted = 0.0f64;
    let mut weight = 0.0f64;
    let mut excluded_units = 0usize;
    for u in 0..n_units {
        if unit_count[u] == 0 {
            continue;
        }
        if unit_raw[u] == 0.0 {
            excluded_units += 1;
            continue;
        }
        let r1 = 1.0 - unit_fit[u] / unit_raw[u];
        weighted += unit_count[u] as f64 * r1;
        weight += unit_count[u] as f64;
    }
    if weight == 0.0 {
        return Err(Error::Degenerate(
            "every unit slice has zero raw loss: time-series R1 undefined".into(),
        ));
    }
    let time_series = weighted / weight;

    let mut cs_sum = 0.0f64;
    let mut cs_count = 0usize;
    let mut excluded_periods = 0usize;
    for t in 0..n_periods {
        if period_count[t] == 0 {
            continue;
        }
        if period_raw[t] == 0.0 {
            excluded_periods += 1;
            continue;
        }
        cs_sum += 1.0 - period_fit[t] / period_raw[t];
        cs_count += 1;
    }
    if cs_count == 0 {
        return Err(Error::Degenerate(
            "every period slice has zero raw loss: cross-section R1 undefined".into(),
        ));
    }
    let cross_section = cs_sum / cs_count as f64;

    Ok(R1Metrics {
        total,
        time_series,
        cross_section,
        excluded_units,
        excluded_periods,
    })
}

/// Bundle of every metric for one fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub qhe: f64,
    pub aqe: f64,
    pub r1_total: f64,
    pub r1_time_series: f64,
    pub r1_cross_section: f64,
}

pub fn metric_bundle(fit: &QuantileFit, panel: &Panel) -> Result<MetricBundle> {
    let r1 = r1_metrics(fit, panel)?;
    Ok(MetricBundle {
        qhe: qhe(fit, panel)?,
        aqe: aqe(fit, panel)?,
        r1_total: r1.total,
        r1_time_series: r1.time_series,
        r1_cross_section: r1.cross_section,
    })
}

/// One row of the comma-separated metric report keyed by
/// `(model, tau, N, T, metric)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub tau: f64,
    pub n: usize,
    pub t: usize,
    pub phase: String,
    pub metric: String,
    pub value: f64,
}

/// Write metric rows as a CSV table.
pub fn write_metric_rows<W: std::io::Write>(writer: W, rows: &[MetricRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(())
}

/// Report of one rolling out-of-sample run.
#[derive(Debug, Clone)]
pub struct RollingReport {
    pub fit: QuantileFit,
    /// Period indices that were skipped (degenerate window fit or empty
    /// scoring cross-section), with reasons.
    pub skipped: Vec<(usize, String)>,
    /// Realized factor vectors per scored period.
    pub realized_factors: Vec<(usize, Vec<f64>)>,
}

/// Rolling out-of-sample protocol: for every period `s >= window_len`
/// (0-based), estimate on the trailing `window_len` periods, evaluate the
/// loadings on period `s`'s characteristics, realize `f̂_s` by a
/// cross-sectional quantile regression of period `s` outcomes on those
/// loadings (a post-hoc realization, not a forecast), and score
/// `Q̂ = f̂_s'λ̂`.
pub fn rolling_oos(
    panel: &Panel,
    window_len: usize,
    config: &FitConfig,
) -> Result<RollingReport> {
    let t_len = panel.n_periods();
    if window_len < 2 {
        return Err(Error::InvalidInput("window length must be at least 2".into()));
    }
    if t_len <= window_len {
        return Err(Error::InvalidInput(format!(
            "panel has {t_len} periods; need more than window_len = {window_len}"
        )));
    }

    type PeriodOutcome = (usize, std::result::Result<(Vec<usize>, Vec<f64>, Vec<f64>), String>);
    let outcomes: Vec<PeriodOutcome> = (window_len..t_len)
            .into_par_iter()
            .map(|s| {
                let window = panel.window(s - window_len..s);
                let fit = match fit_qcf(&window, config) {
                    Ok(f) => f,
                    Err(e) => return (s, Err(format!("window fit failed: {e}"))),
                };
                if fit.flags.is_degenerate() {
                    return (s, Err("window fit degenerate".into()));
                }
                let rows: Vec<usize> = panel.rows(s).collect();
                if rows.len() < config.r {
                    return (
                        s,
                        Err(format!(
                            "period has {} observations for {} factors",
                            rows.len(),
                            config.r
                        )),
                    );
                }
                match fit.realize_factors(panel, s) {
                    Ok((f_hat, fitted)) => (s, Ok((rows, fitted.to_vec(), f_hat.to_vec()))),
                    Err(e) => (s, Err(format!("factor realization failed: {e}"))),
                }
            })
            .collect();

    let mut rows = Vec::new();
    let mut fitted = Vec::new();
    let mut skipped = Vec::new();
    let mut realized = Vec::new();
    for (s, outcome) in outcomes {
        match outcome {
            Ok((r, f, f_hat)) => {
                rows.extend(r);
                fitted.extend(f);
                realized.push((s, f_hat));
            }
            Err(reason) => skipped.push((s, reason)),
        }
    }
    if rows.is_empty() {
        return Err(Error::Degenerate(
            "rolling out-of-sample produced no scored periods".into(),
        ));
    }
    Ok(RollingReport {
        fit: QuantileFit {
            tau: config.tau,
            rows,
            fitted,
        },
        skipped,
        realized_factors: realized,
    })
}

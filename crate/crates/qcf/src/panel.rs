//! Long-format panel container and CSV ingestion.
//!
//! Observations are `(time, unit, y, x ∈ ℝ^d)` tuples; per-period
//! cross-section sizes `n_t` may differ (unbalanced panel). Estimation
//! normalizers use `Σ_t n_t` throughout, so the container keeps rows grouped
//! by period and exposes per-period slices.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation in long format.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub time: String,
    pub unit: String,
    pub y: f64,
    pub x: Vec<f64>,
}

/// Column standardization transform (applied to characteristics).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Unbalanced panel stored grouped by period.
#[derive(Debug, Clone)]
pub struct Panel {
    d: usize,
    /// Response, grouped by period.
    y: Vec<f64>,
    /// Characteristics, row-major `n_total × d`, same order as `y`.
    x: Vec<f64>,
    /// Interned unit index per row.
    unit: Vec<u32>,
    /// Offsets of each period's rows; `period_start[T] == n_total`.
    period_start: Vec<usize>,
    period_keys: Vec<String>,
    unit_names: Vec<String>,
    standardization: Option<Standardization>,
}

impl Panel {
    /// Build a panel from unordered observations.
    ///
    /// Periods are sorted numerically when every time key parses as an
    /// integer, lexicographically otherwise (ISO dates order correctly
    /// either way). Duplicate `(unit, time)` pairs are rejected.
    pub fn from_observations(observations: Vec<Observation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidInput("panel has no observations".into()));
        }
        let d = observations[0].x.len();
        if d == 0 {
            return Err(Error::InvalidInput(
                "panel needs at least one characteristic column".into(),
            ));
        }

        let mut period_keys: Vec<String> = observations.iter().map(|o| o.time.clone()).collect();
        period_keys.sort();
        period_keys.dedup();
        let all_numeric = period_keys.iter().all(|k| k.parse::<i64>().is_ok());
        if all_numeric {
            period_keys.sort_by_key(|k| k.parse::<i64>().unwrap());
        }
        let period_index: HashMap<&str, usize> = period_keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.as_str(), i))
            .collect();

        let mut unit_names: Vec<String> = Vec::new();
        let mut unit_index: HashMap<String, u32> = HashMap::new();
        let mut rows: Vec<(usize, u32, f64, Vec<f64>)> = Vec::with_capacity(observations.len());
        for obs in observations {
            if obs.x.len() != d {
                return Err(Error::Dimension(format!(
                    "unit {} at time {} has {} characteristics, expected {}",
                    obs.unit,
                    obs.time,
                    obs.x.len(),
                    d
                )));
            }
            if !obs.y.is_finite() || obs.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "unit {} at time {} has non-finite values",
                    obs.unit, obs.time
                )));
            }
            let t = period_index[obs.time.as_str()];
            let u = *unit_index.entry(obs.unit.clone()).or_insert_with(|| {
                unit_names.push(obs.unit.clone());
                (unit_names.len() - 1) as u32
            });
            rows.push((t, u, obs.y, obs.x));
        }

        rows.sort_by_key(|row| (row.0, row.1));
        for pair in rows.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(Error::InvalidInput(format!(
                    "duplicate observation for unit {} at time {}",
                    unit_names[pair[0].1 as usize], period_keys[pair[0].0]
                )));
            }
        }

        let n_total = rows.len();
        let mut y = Vec::with_capacity(n_total);
        let mut x = Vec::with_capacity(n_total * d);
        let mut unit = Vec::with_capacity(n_total);
        let mut period_start = vec![0usize; period_keys.len() + 1];
        for (t, u, yi, xi) in rows {
            period_start[t + 1] += 1;
            y.push(yi);
            unit.push(u);
            x.extend_from_slice(&xi);
        }
        for t in 0..period_keys.len() {
            period_start[t + 1] += period_start[t];
        }

        Ok(Panel {
            d,
            y,
            x,
            unit,
            period_start,
            period_keys,
            unit_names,
            standardization: None,
        })
    }

    /// Read a long-format CSV with header columns `time,id,y,x1..xd`
    /// (any column order).
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            Error::InvalidInput(format!("cannot open {}: {e}", path.display()))
        })?;
        Self::from_csv_reader(file, &path.display().to_string())
    }

    pub fn from_csv_reader<R: Read>(reader: R, source: &str) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = csv.headers()?.clone();
        let find = |name: &str| -> Option<usize> {
            headers.iter().position(|h| h.eq_ignore_ascii_case(name))
        };
        let time_col = find("time").ok_or_else(|| Error::InvalidInput(
            format!("{source}: header must declare a 'time' column"),
        ))?;
        let id_col = find("id").ok_or_else(|| Error::InvalidInput(
            format!("{source}: header must declare an 'id' column"),
        ))?;
        let y_col = find("y").ok_or_else(|| Error::InvalidInput(
            format!("{source}: header must declare a 'y' column"),
        ))?;
        let mut x_cols = Vec::new();
        for j in 1.. {
            match find(&format!("x{j}")) {
                Some(c) => x_cols.push(c),
                None => break,
            }
        }
        if x_cols.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{source}: header must declare x1..xd columns"
            )));
        }

        let mut observations = Vec::new();
        for record in csv.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let parse_field = |col: usize, what: &str| -> Result<f64> {
                let raw = record.get(col).ok_or_else(|| Error::Parse {
                    path: source.into(),
                    line,
                    msg: format!("missing {what} field"),
                })?;
                raw.parse::<f64>().map_err(|_| Error::Parse {
                    path: source.into(),
                    line,
                    msg: format!("cannot parse {what} value '{raw}'"),
                })
            };
            let time = record.get(time_col).unwrap_or("").to_string();
            let unit = record.get(id_col).unwrap_or("").to_string();
            if time.is_empty() || unit.is_empty() {
                return Err(Error::Parse {
                    path: source.into(),
                    line,
                    msg: "empty time or id field".into(),
                });
            }
            let y = parse_field(y_col, "y")?;
            let mut x = Vec::with_capacity(x_cols.len());
            for (j, &c) in x_cols.iter().enumerate() {
                x.push(parse_field(c, &format!("x{}", j + 1))?);
            }
            observations.push(Observation { time, unit, y, x });
        }
        Self::from_observations(observations)
    }

    /// Standardize every characteristic column to zero mean, unit variance;
    /// records and returns the transform. Errors on constant columns.
    pub fn standardize(&mut self) -> Result<Standardization> {
        let n = self.y.len() as f64;
        let mut mean = vec![0.0; self.d];
        let mut sd = vec![0.0; self.d];
        for row in self.x.chunks_exact(self.d) {
            for (j, v) in row.iter().enumerate() {
                mean[j] += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for row in self.x.chunks_exact(self.d) {
            for (j, v) in row.iter().enumerate() {
                sd[j] += (v - mean[j]).powi(2);
            }
        }
        for (j, s) in sd.iter_mut().enumerate() {
            *s = (*s / (n - 1.0)).sqrt();
            if !s.is_finite() || *s <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "characteristic x{} is constant; cannot standardize",
                    j + 1
                )));
            }
        }
        for row in self.x.chunks_exact_mut(self.d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[j]) / sd[j];
            }
        }
        let transform = Standardization { mean, sd };
        self.standardization = Some(transform.clone());
        Ok(transform)
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_periods(&self) -> usize {
        self.period_keys.len()
    }

    pub fn n_total(&self) -> usize {
        self.y.len()
    }

    pub fn n_units(&self) -> usize {
        self.unit_names.len()
    }

    pub fn n_at(&self, t: usize) -> usize {
        self.period_start[t + 1] - self.period_start[t]
    }

    pub fn period_key(&self, t: usize) -> &str {
        &self.period_keys[t]
    }

    pub fn period_keys(&self) -> &[String] {
        &self.period_keys
    }

    pub fn unit_names(&self) -> &[String] {
        &self.unit_names
    }

    /// Global row range of period `t`.
    pub fn rows(&self, t: usize) -> std::ops::Range<usize> {
        self.period_start[t]..self.period_start[t + 1]
    }

    pub fn y_row(&self, row: usize) -> f64 {
        self.y[row]
    }

    pub fn x_row(&self, row: usize) -> &[f64] {
        &self.x[row * self.d..(row + 1) * self.d]
    }

    pub fn unit_of_row(&self, row: usize) -> u32 {
        self.unit[row]
    }

    /// Copy of the periods `range` as a standalone panel (unit interning and
    /// standardization metadata preserved).
    pub fn window(&self, range: std::ops::Range<usize>) -> Panel {
        let row_range = self.period_start[range.start]..self.period_start[range.end];
        let mut period_start = vec![0usize];
        for t in range.clone() {
            period_start.push(self.period_start[t + 1] - self.period_start[range.start]);
        }
        Panel {
            d: self.d,
            y: self.y[row_range.clone()].to_vec(),
            x: self.x[row_range.start * self.d..row_range.end * self.d].to_vec(),
            unit: self.unit[row_range].to_vec(),
            period_start,
            period_keys: self.period_keys[range].to_vec(),
            unit_names: self.unit_names.clone(),
            standardization: self.standardization.clone(),
        }
    }

    pub fn is_balanced(&self) -> bool {
        let t = self.n_periods();
        let n = self.n_units();
        self.n_total() == n * t && (0..t).all(|ti| self.n_at(ti) == n)
    }

    /// Response as an `N × T` matrix for balanced panels (row = unit in
    /// interning order).
    pub fn balanced_response(&self) -> Result<Array2<f64>> {
        if !self.is_balanced() {
            return Err(Error::InvalidInput(
                "panel is unbalanced; balanced response matrix undefined".into(),
            ));
        }
        let n = self.n_units();
        let t = self.n_periods();
        let mut out = Array2::zeros((n, t));
        let mut seen = vec![false; n * t];
        for ti in 0..t {
            for row in self.rows(ti) {
                let u = self.unit[row] as usize;
                out[[u, ti]] = self.y[row];
                seen[u * t + ti] = true;
            }
        }
        if seen.iter().all(|&s| s) {
            Ok(out)
        } else {
            Err(Error::InvalidInput(
                "panel is unbalanced; some unit-period cells missing".into(),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(time: &str, unit: &str, y: f64, x: Vec<f64>) -> Observation {
        Observation {
            time: time.into(),
            unit: unit.into(),
            y,
            x,
        }
    }

    #[test]
    fn builds_and_orders_periods_numerically() {
        let panel = Panel::from_observations(vec![
            obs("10", "b", 2.0, vec![0.5]),
            obs("2", "a", 1.0, vec![-0.5]),
            obs("10", "a", 3.0, vec![1.5]),
        ])
        .unwrap();
        assert_eq!(panel.n_periods(), 2);
        assert_eq!(panel.period_key(0), "2");
        assert_eq!(panel.period_key(1), "10");
        assert_eq!(panel.n_at(0), 1);
        assert_eq!(panel.n_at(1), 2);
        assert!(!panel.is_balanced());
    }

    #[test]
    fn three_row_toy_csv() {
        let csv = "time,id,y,x1,x2\n1,a,0.1,1.0,2.0\n1,b,0.2,0.0,1.0\n1,c,0.3,2.0,0.5\n";
        let panel = Panel::from_csv_reader(csv.as_bytes(), "toy").unwrap();
        assert_eq!(panel.n_periods(), 1);
        assert_eq!(panel.n_total(), 3);
        assert_eq!(panel.dim(), 2);

        let csv = "time,id,y,x1\n1,a,0.1,1.0\n2,a,0.2,0.0\n3,a,0.3,2.0\n";
        let panel = Panel::from_csv_reader(csv.as_bytes(), "toy").unwrap();
        assert_eq!(panel.n_periods(), 3);
    }

    #[test]
    fn missing_x_value_rejected_with_line() {
        let csv = "time,id,y,x1,x2\n1,a,0.1,1.0,2.0\n1,b,0.2,,1.0\n";
        let err = Panel::from_csv_reader(csv.as_bytes(), "toy").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("toy:3"), "got {msg}");
        assert!(msg.contains("x1"), "got {msg}");
    }

    #[test]
    fn duplicate_unit_time_rejected() {
        let err = Panel::from_observations(vec![
            obs("1", "a", 1.0, vec![0.0]),
            obs("1", "a", 2.0, vec![1.0]),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn standardization_centers_and_scales() {
        let mut panel = Panel::from_observations(
            (0..50)
                .map(|i| obs("1", &format!("u{i}"), 0.0, vec![i as f64, 3.0 * i as f64 - 7.0]))
                .collect(),
        )
        .unwrap();
        panel.standardize().unwrap();
        let n = panel.n_total() as f64;
        for j in 0..2 {
            let mean: f64 = (0..panel.n_total()).map(|r| panel.x_row(r)[j]).sum::<f64>() / n;
            let var: f64 = (0..panel.n_total())
                .map(|r| (panel.x_row(r)[j] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            assert!(mean.abs() < 1e-12, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-12, "var {var}");
        }
    }

    #[test]
    fn window_slices_periods() {
        let panel = Panel::from_observations(vec![
            obs("1", "a", 1.0, vec![0.1]),
            obs("2", "a", 2.0, vec![0.2]),
            obs("2", "b", 2.5, vec![0.25]),
            obs("3", "a", 3.0, vec![0.3]),
        ])
        .unwrap();
        let w = panel.window(1..3);
        assert_eq!(w.n_periods(), 2);
        assert_eq!(w.period_key(0), "2");
        assert_eq!(w.n_total(), 3);
        assert_eq!(w.y_row(0), 2.0);
    }

    #[test]
    fn balanced_matrix_roundtrip() {
        let panel = Panel::from_observations(vec![
            obs("1", "a", 1.0, vec![0.0]),
            obs("1", "b", 2.0, vec![0.0]),
            obs("2", "a", 3.0, vec![0.0]),
            obs("2", "b", 4.0, vec![0.0]),
        ])
        .unwrap();
        assert!(panel.is_balanced());
        let y = panel.balanced_response().unwrap();
        assert_eq!(y[[0, 0]], 1.0);
        assert_eq!(y[[1, 1]], 4.0);
    }
}

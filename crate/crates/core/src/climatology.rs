//! Monthly climatology, regional anomalies, the Oceanic Niño Index and the
//! five-quarter event rule.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{mean_skip_missing, GeoBounds, GridAxes, SpatioTemporalGrid, TimeStamp};

/// Anomaly threshold for El Niño conditions, °C.
pub const EVENT_THRESHOLD: f64 = 0.5;

/// Number of overlapping quarters per evaluation row.
pub const QUARTERS: usize = 5;

/// Months consumed by one row of five overlapping 3-month quarters.
pub const ROW_SPAN: usize = QUARTERS + 2;

/// Per-cell mean field for each calendar month over a base period.
#[derive(Debug, Clone, PartialEq)]
pub struct ClimatologyTable {
    axes: GridAxes,
    base_period: (TimeStamp, TimeStamp),
    /// `[month][lat][lon]`, January first. NaN where a cell never had data.
    means: Vec<f64>,
}

impl ClimatologyTable {
    pub fn axes(&self) -> &GridAxes {
        &self.axes
    }

    pub fn base_period(&self) -> (TimeStamp, TimeStamp) {
        self.base_period
    }

    /// Mean field for a calendar month (1..=12).
    pub fn month_field(&self, month: u32) -> &[f64] {
        let n = self.axes.n_cells();
        let m = (month - 1) as usize;
        &self.means[m * n..(m + 1) * n]
    }
}

/// The complete calendar years (January through December) inside the grid.
pub fn default_base_period(grid: &SpatioTemporalGrid) -> Result<(TimeStamp, TimeStamp)> {
    let (start, end) = (grid.start(), grid.end());
    let first = if start.month() == 1 { start.year() } else { start.year() + 1 };
    let last = if end.month() == 12 { end.year() } else { end.year() - 1 };
    if last < first {
        return Err(Error::InsufficientData(format!(
            "no complete calendar year between {start} and {end}"
        )));
    }
    Ok((TimeStamp::new(first, 1)?, TimeStamp::new(last, 12)?))
}

/// Per-cell monthly means over `base_period` (inclusive), skipping missing
/// values.
pub fn compute_climatology(
    grid: &SpatioTemporalGrid,
    base_period: (TimeStamp, TimeStamp),
) -> Result<ClimatologyTable> {
    let (from, to) = base_period;
    if to < from {
        return Err(Error::InsufficientData(format!("empty base period {from}..{to}")));
    }
    let a = grid.time_index(from).ok_or(Error::OutOfRange(from))?;
    let b = grid.time_index(to).ok_or(Error::OutOfRange(to))?;
    let n = grid.axes().n_cells();
    let mut sums = vec![0.0; 12 * n];
    let mut counts = vec![0usize; 12 * n];
    let mut months_seen = [false; 12];
    for t in a..=b {
        let m = grid.time_at(t).month0();
        months_seen[m] = true;
        for (c, &v) in grid.field(t).iter().enumerate() {
            if !v.is_nan() {
                sums[m * n + c] += v;
                counts[m * n + c] += 1;
            }
        }
    }
    if let Some(m) = months_seen.iter().position(|s| !s) {
        return Err(Error::InsufficientData(format!(
            "calendar month {} has no samples in {from}..{to}",
            m + 1
        )));
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &k)| if k == 0 { f64::NAN } else { s / k as f64 })
        .collect();
    Ok(ClimatologyTable {
        axes: grid.axes().clone(),
        base_period,
        means,
    })
}

/// Climatology over the 30-year window `year-15 ..= year+14` centred on
/// `year`. The grid must cover the whole window.
pub fn centered_climatology(grid: &SpatioTemporalGrid, year: i32) -> Result<ClimatologyTable> {
    let from = TimeStamp::new(year - 15, 1)?;
    let to = TimeStamp::new(year + 14, 12)?;
    if grid.time_index(from).is_none() || grid.time_index(to).is_none() {
        return Err(Error::InsufficientData(format!(
            "centred 30-year window {from}..{to} not covered by {}..{}",
            grid.start(),
            grid.end()
        )));
    }
    compute_climatology(grid, (from, to))
}

/// One value per consecutive month, °C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySeries {
    pub start: TimeStamp,
    pub values: Vec<f64>,
}

/// Running 3-month mean, labelled by the last month of each window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OniSeries {
    pub start: TimeStamp,
    pub values: Vec<f64>,
}

/// `n_steps` rows of five overlapping quarter means; row `t` covers months
/// `start + t ..= start + t + 6`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterMatrix {
    pub start: TimeStamp,
    pub rows: Vec<[f64; QUARTERS]>,
}

impl QuarterMatrix {
    pub fn n_steps(&self) -> usize {
        self.rows.len()
    }

    /// First month of row `t`.
    pub fn row_time(&self, t: usize) -> TimeStamp {
        self.start.add_months(t as i64)
    }

    pub fn event_flags(&self, threshold: f64) -> Vec<bool> {
        self.rows.iter().map(|r| classify_event(r, threshold)).collect()
    }
}

/// Regional anomaly per month: per-cell anomaly against the matching
/// calendar month, then the mean over in-bounds non-missing cells.
pub fn regional_anomaly(
    grid: &SpatioTemporalGrid,
    clim: &ClimatologyTable,
    bounds: &GeoBounds,
) -> Result<AnomalySeries> {
    if !grid.axes().approx_eq(clim.axes()) {
        return Err(Error::AxesMismatch);
    }
    let cells = grid.axes().cells_within(bounds);
    if cells.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let values = (0..grid.n_times())
        .map(|t| {
            let time = grid.time_at(t);
            let field = grid.field(t);
            let normal = clim.month_field(time.month());
            mean_skip_missing(cells.iter().map(|&c| field[c] - normal[c]))
                .ok_or_else(|| Error::AllMissing(time.to_string()))
        })
        .collect::<Result<_>>()?;
    Ok(AnomalySeries {
        start: grid.start(),
        values,
    })
}

#[inline]
fn mean3(a: f64, b: f64, c: f64) -> f64 {
    (a + b + c) / 3.0
}

pub fn oni(a: &AnomalySeries) -> Result<OniSeries> {
    if a.values.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: a.values.len(),
        });
    }
    Ok(OniSeries {
        start: a.start.add_months(2),
        values: a.values.windows(3).map(|w| mean3(w[0], w[1], w[2])).collect(),
    })
}

/// The five overlapping 3-month means of a 7-month span.
pub fn quarters_of(months: &[f64]) -> Result<[f64; QUARTERS]> {
    if months.len() != ROW_SPAN {
        return Err(Error::LengthMismatch(months.len(), ROW_SPAN));
    }
    Ok(std::array::from_fn(|i| mean3(months[i], months[i + 1], months[i + 2])))
}

pub fn quarter_matrix(a: &AnomalySeries, n_steps: usize) -> Result<QuarterMatrix> {
    let needed = n_steps + ROW_SPAN - 1;
    if a.values.len() < needed {
        return Err(Error::TooShort {
            needed,
            got: a.values.len(),
        });
    }
    let rows = (0..n_steps)
        .map(|t| quarters_of(&a.values[t..t + ROW_SPAN]))
        .collect::<Result<_>>()?;
    Ok(QuarterMatrix { start: a.start, rows })
}

/// True iff every quarter meets or exceeds `threshold`.
pub fn classify_event(quarters: &[f64; QUARTERS], threshold: f64) -> bool {
    quarters.iter().all(|&q| q >= threshold)
}

fn create(path: &Path) -> Result<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    Ok(csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(path)?)))
}

fn write_time_value<W: Write>(w: &mut csv::Writer<W>, start: TimeStamp, values: &[f64]) -> Result<()> {
    w.write_record(["time", "value"])?;
    for (k, v) in values.iter().enumerate() {
        w.write_record([start.add_months(k as i64).to_string(), format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_anomaly_csv(series: &AnomalySeries, path: impl AsRef<Path>) -> Result<()> {
    write_time_value(&mut create(path.as_ref())?, series.start, &series.values)
}

pub fn write_oni_csv(series: &OniSeries, path: impl AsRef<Path>) -> Result<()> {
    write_time_value(&mut create(path.as_ref())?, series.start, &series.values)
}

/// `t,q0..q4`, with `t` the first month of the row.
pub fn write_quarter_csv(q: &QuarterMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = create(path.as_ref())?;
    w.write_record(["t", "q0", "q1", "q2", "q3", "q4"])?;
    for (t, row) in q.rows.iter().enumerate() {
        let mut rec = vec![q.row_time(t).to_string()];
        rec.extend(row.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_event_flags_csv(q: &QuarterMatrix, threshold: f64, path: impl AsRef<Path>) -> Result<()> {
    let mut w = create(path.as_ref())?;
    w.write_record(["t", "event"])?;
    for (t, flag) in q.event_flags(threshold).into_iter().enumerate() {
        w.write_record([q.row_time(t).to_string(), flag.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Variable;
    use proptest::prelude::*;

    fn ts(y: i32, m: u32) -> TimeStamp {
        TimeStamp::new(y, m).unwrap()
    }

    fn series(values: Vec<f64>) -> AnomalySeries {
        AnomalySeries {
            start: ts(2000, 1),
            values,
        }
    }

    /// 2x2 grid whose value at month index t and cell c is f(t, c).
    fn grid_from(n_times: usize, f: impl Fn(usize, usize) -> f64) -> SpatioTemporalGrid {
        let axes = GridAxes::regular(-2.0, 4.0, 2, -160.0, 4.0, 2).unwrap();
        let vals = (0..n_times).flat_map(|t| (0..4).map(move |c| (t, c))).map(|(t, c)| f(t, c)).collect();
        SpatioTemporalGrid::new(Variable::Sst, axes, ts(2000, 1), vals).unwrap()
    }

    #[test]
    fn climatology_examples() {
        let g = grid_from(24, |t, _| if t % 12 == 0 { 25.0 } else { 20.0 + (t % 12) as f64 * 0.1 });
        let c = compute_climatology(&g, default_base_period(&g).unwrap()).unwrap();
        assert!(c.month_field(1).iter().all(|&v| v == 25.0));

        let g2 = grid_from(24, |t, _| match t {
            0 => 24.0,
            12 => 26.0,
            _ => 22.0,
        });
        let c2 = compute_climatology(&g2, (ts(2000, 1), ts(2001, 12))).unwrap();
        assert!(c2.month_field(1).iter().all(|&v| v == 25.0));

        let g3 = grid_from(36, |t, c| 20.0 + t as f64 * 0.2 + c as f64);
        let c3 = compute_climatology(&g3, (ts(2001, 1), ts(2001, 12))).unwrap();
        for m in 1..=12u32 {
            assert_eq!(c3.month_field(m), g3.field(12 + m as usize - 1));
        }
    }

    #[test]
    fn climatology_needs_every_month() {
        let g = grid_from(24, |_, _| 25.0);
        assert!(matches!(
            compute_climatology(&g, (ts(2000, 1), ts(2000, 6))),
            Err(Error::InsufficientData(_))
        ));
        let short = grid_from(8, |_, _| 25.0);
        assert!(default_base_period(&short).is_err());
    }

    #[test]
    fn climatology_skips_missing() {
        let g = grid_from(24, |t, c| if t == 0 && c == 0 { f64::NAN } else { 26.0 + (t / 12) as f64 });
        let c = compute_climatology(&g, (ts(2000, 1), ts(2001, 12))).unwrap();
        assert_eq!(c.month_field(1)[0], 27.0);
        assert_eq!(c.month_field(1)[1], 26.5);
    }

    #[test]
    fn centered_window_requires_thirty_years() {
        let g = grid_from(24 * 12, |_, _| 25.0);
        assert!(matches!(centered_climatology(&g, 2010), Err(Error::InsufficientData(_))));
        let long = grid_from(31 * 12, |t, _| 25.0 + (t / 12) as f64 * 0.01);
        let c = centered_climatology(&long, 2015).unwrap();
        assert_eq!(c.base_period(), (ts(2000, 1), ts(2029, 12)));
        // mean of 25.00 .. 25.29
        assert!((c.month_field(3)[0] - 25.145).abs() < 1e-12);
    }

    #[test]
    fn anomaly_examples() {
        let base = grid_from(24, |t, c| 26.0 + ((t % 12) as f64).sin() + c as f64 * 0.3);
        let clim = compute_climatology(&base, (ts(2000, 1), ts(2001, 12))).unwrap();
        let all = GeoBounds::new(-90.0, 90.0, -180.0, 179.0).unwrap();

        let a = regional_anomaly(&base, &clim, &all).unwrap();
        assert!(a.values.iter().all(|v| v.abs() < 1e-12));

        let plus = base.map_values(|v| v + 1.0).unwrap();
        let a1 = regional_anomaly(&plus, &clim, &all).unwrap();
        assert!(a1.values.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let half = grid_from(24, |t, c| {
            26.0 + ((t % 12) as f64).sin() + c as f64 * 0.3 + if c < 2 { 2.0 } else { 0.0 }
        });
        let ah = regional_anomaly(&half, &clim, &all).unwrap();
        assert!(ah.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn anomaly_errors() {
        let g = grid_from(24, |_, _| 25.0);
        let clim = compute_climatology(&g, (ts(2000, 1), ts(2001, 12))).unwrap();
        let far = GeoBounds::new(40.0, 50.0, 0.0, 10.0).unwrap();
        assert!(matches!(regional_anomaly(&g, &clim, &far), Err(Error::EmptyRegion)));
        let other_axes = GridAxes::regular(0.0, 1.0, 2, 0.0, 1.0, 2).unwrap();
        let g2 = SpatioTemporalGrid::new(Variable::Sst, other_axes, ts(2000, 1), vec![25.0; 24 * 4]).unwrap();
        assert!(matches!(
            regional_anomaly(&g2, &clim, &GeoBounds::NINO34),
            Err(Error::AxesMismatch)
        ));
    }

    #[test]
    fn oni_examples() {
        let c = oni(&series(vec![1.0; 6])).unwrap();
        assert_eq!(c.values, vec![1.0; 4]);
        assert_eq!(c.start, ts(2000, 3));

        let o = oni(&series(vec![0.3, 0.6, 0.9])).unwrap();
        assert_eq!(o.values.len(), 1);
        assert!((o.values[0] - 0.6).abs() < 1e-15);

        let p = oni(&series(vec![0.0, 0.0, 0.0, 3.0])).unwrap();
        assert_eq!(p.values, vec![0.0, 1.0]);

        assert!(matches!(oni(&series(vec![1.0, 2.0])), Err(Error::TooShort { .. })));
    }

    #[test]
    fn quarter_examples() {
        let q = quarter_matrix(&series(vec![0.7; 20]), 14).unwrap();
        assert!(q.rows.iter().flatten().all(|&v| (v - 0.7).abs() < 1e-15));

        let ramp: Vec<f64> = (0..10).map(|k| k as f64 * 0.1).collect();
        let r = quarter_matrix(&series(ramp), 1).unwrap();
        for (i, &v) in r.rows[0].iter().enumerate() {
            assert!((v - 0.1 * (i + 1) as f64).abs() < 1e-12);
        }

        assert!(quarter_matrix(&series(vec![0.0; 58]), 52).is_ok());
        assert!(matches!(
            quarter_matrix(&series(vec![0.0; 57]), 52),
            Err(Error::TooShort { needed: 58, got: 57 })
        ));
    }

    #[test]
    fn event_rule() {
        assert!(classify_event(&[0.6, 0.7, 0.8, 0.9, 1.0], 0.5));
        assert!(!classify_event(&[0.6, 0.4, 0.8, 0.9, 1.0], 0.5));
        assert!(classify_event(&[0.5; 5], 0.5));
    }

    proptest! {
        #[test]
        fn oni_is_linear(a in prop::collection::vec(-3.0f64..3.0, 3..40), alpha in -2.0f64..2.0, beta in -2.0f64..2.0, seed in 0u64..1000) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| (v * 1.7 + (i as u64 ^ seed) as f64 * 0.01).sin()).collect();
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
            let lhs = oni(&series(combo)).unwrap();
            let (oa, ob) = (oni(&series(a.clone())).unwrap(), oni(&series(b)).unwrap());
            for k in 0..lhs.values.len() {
                let rhs = alpha * oa.values[k] + beta * ob.values[k];
                prop_assert!((lhs.values[k] - rhs).abs() < 1e-12);
            }
        }

        #[test]
        fn oni_within_window_range(a in prop::collection::vec(-3.0f64..3.0, 3..40)) {
            let o = oni(&series(a.clone())).unwrap();
            prop_assert_eq!(o.values.len(), a.len() - 2);
            for (k, v) in o.values.iter().enumerate() {
                let w = &a[k..k + 3];
                let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo - 1e-12 <= *v && *v <= hi + 1e-12);
            }
        }

        #[test]
        fn quarter_row_zero_matches_oni(a in prop::collection::vec(-3.0f64..3.0, 7..30)) {
            let s = series(a);
            let q = quarter_matrix(&s, 1).unwrap();
            let o = oni(&s).unwrap();
            for i in 0..QUARTERS {
                prop_assert_eq!(q.rows[0][i], o.values[i]);
            }
        }

        #[test]
        fn classify_is_monotone(q in prop::array::uniform5(-1.0f64..2.0), idx in 0usize..5, bump in 0.0f64..2.0, tau in 0.1f64..1.0) {
            let mut raised = q;
            raised[idx] += bump;
            if classify_event(&q, tau) {
                prop_assert!(classify_event(&raised, tau));
            }
        }

        #[test]
        fn anomaly_shift_invariant(c in -10.0f64..10.0, seed in 0u64..500) {
            let g = grid_from(36, |t, k| 24.0 + ((t * 7 + k * 3) as f64 + seed as f64).sin() * 2.0);
            let shifted = g.map_values(|v| v + c).unwrap();
            let all = GeoBounds::new(-90.0, 90.0, -180.0, 179.0).unwrap();
            let base = default_base_period(&g).unwrap();
            let a = regional_anomaly(&g, &compute_climatology(&g, base).unwrap(), &all).unwrap();
            let b = regional_anomaly(&shifted, &compute_climatology(&shifted, base).unwrap(), &all).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

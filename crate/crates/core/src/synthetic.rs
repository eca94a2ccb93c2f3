//! Seeded ENSO-like SST/OHC scenarios with planted warm events and their
//! analytic ground truth.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::climatology::{classify_event, AnomalySeries, OniSeries, EVENT_THRESHOLD, QUARTERS, ROW_SPAN};
use crate::error::{Error, Result};
use crate::grid::{GridAxes, SpatioTemporalGrid, TimeStamp, Variable};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedEvent {
    /// Month index of the first affected month.
    pub start: usize,
    pub duration: usize,
    /// Anomaly at the top of the hump, °C.
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub axes: GridAxes,
    pub start: TimeStamp,
    pub months: usize,
    pub base_temp: f64,
    pub seasonal_amplitude: f64,
    pub noise_sigma: f64,
    pub events: Vec<PlantedEvent>,
    /// Months by which OHC anomalies lead SST anomalies.
    pub ohc_lag: usize,
    #[serde(default = "default_ohc_base")]
    pub ohc_base: f64,
    /// OHC units per °C of SST event signal.
    #[serde(default = "default_ohc_gain")]
    pub ohc_gain: f64,
    pub seed: u64,
}

fn default_ohc_base() -> f64 {
    1.0e9
}

fn default_ohc_gain() -> f64 {
    1.0e8
}

impl SynthSpec {
    /// Twenty years from January 2000 on a 5-degree Niño 3.4 grid, three
    /// warm events, noise 0.1 °C and a 3-month OHC lead.
    pub fn scenario(seed: u64) -> Self {
        Self {
            axes: GridAxes::regular(-5.0, 5.0, 3, -170.0, 5.0, 11).expect("static axes"),
            start: TimeStamp::new(2000, 1).expect("static date"),
            months: 240,
            base_temp: 27.0,
            seasonal_amplitude: 1.0,
            noise_sigma: 0.1,
            events: vec![
                PlantedEvent {
                    start: 30,
                    duration: 14,
                    peak: 2.0,
                },
                PlantedEvent {
                    start: 110,
                    duration: 12,
                    peak: 1.5,
                },
                PlantedEvent {
                    start: 200,
                    duration: 16,
                    peak: 2.5,
                },
            ],
            ohc_lag: 3,
            ohc_base: default_ohc_base(),
            ohc_gain: default_ohc_gain(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadSpec(msg));
        GridAxes::new(self.axes.lats().to_vec(), self.axes.lons().to_vec()).map_err(|e| Error::BadSpec(e.to_string()))?;
        if self.months == 0 {
            return bad("months must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {}", self.noise_sigma));
        }
        if ![self.base_temp, self.seasonal_amplitude, self.ohc_base, self.ohc_gain].iter().all(|v| v.is_finite()) {
            return bad("non-finite base, amplitude or OHC parameter".into());
        }
        for e in &self.events {
            if e.duration == 0 {
                return bad(format!("event at month {} has zero duration", e.start));
            }
            if e.start + e.duration > self.months {
                return bad(format!(
                    "event {}..{} runs past month {}",
                    e.start,
                    e.start + e.duration,
                    self.months
                ));
            }
            if !e.peak.is_finite() {
                return bad(format!("event peak {}", e.peak));
            }
        }
        Ok(())
    }

    /// Summed event humps at month index `t`; zero outside the series.
    pub fn event_signal(&self, t: i64) -> f64 {
        self.events
            .iter()
            .map(|e| {
                let dt = t - e.start as i64;
                if dt < 0 || dt >= e.duration as i64 {
                    0.0
                } else {
                    e.peak * (PI * dt as f64 / e.duration as f64).sin().powi(2)
                }
            })
            .sum()
    }

    fn seasonal(&self, t: usize) -> f64 {
        let m = self.start.add_months(t as i64).month0();
        self.seasonal_amplitude * (2.0 * PI * m as f64 / 12.0).sin()
    }
}

/// Noise-free reference values for a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Planted event signal per month, °C.
    pub signal: Vec<f64>,
    /// Regional anomaly the climatology pipeline should find on a noise-free
    /// grid: the signal minus its own calendar-month mean over the base
    /// years.
    pub anomaly: AnomalySeries,
    pub oni: OniSeries,
    /// Event rule applied to every complete 7-month row of `anomaly`.
    pub event_rows: Vec<bool>,
}

const SST_TAG: u64 = 0x557;
const OHC_TAG: u64 = 0x04c;

pub fn generate(spec: &SynthSpec) -> Result<(SpatioTemporalGrid, SpatioTemporalGrid, GroundTruth)> {
    spec.validate()?;
    let (n_lat, n_lon) = (spec.axes.n_lat(), spec.axes.n_lon());
    let noise = |tag: u64, t: usize, i: usize, j: usize| -> f64 {
        if spec.noise_sigma == 0.0 {
            return 0.0;
        }
        let z: f64 = StandardNormal.sample(&mut rng::stream(&[spec.seed, tag, t as u64, i as u64, j as u64]));
        spec.noise_sigma * z
    };
    let mut sst = Vec::with_capacity(spec.months * n_lat * n_lon);
    let mut ohc = Vec::with_capacity(spec.months * n_lat * n_lon);
    for t in 0..spec.months {
        let level = spec.base_temp + spec.seasonal(t) + spec.event_signal(t as i64);
        let lead = spec.event_signal((t + spec.ohc_lag) as i64);
        for i in 0..n_lat {
            for j in 0..n_lon {
                sst.push(level + noise(SST_TAG, t, i, j));
                ohc.push(spec.ohc_base + spec.ohc_gain * (lead + noise(OHC_TAG, t, i, j)));
            }
        }
    }
    let sst = SpatioTemporalGrid::new(Variable::Sst, spec.axes.clone(), spec.start, sst)
        .map_err(|e| Error::BadSpec(e.to_string()))?;
    let ohc = SpatioTemporalGrid::new(Variable::Ohc, spec.axes.clone(), spec.start, ohc)?;
    Ok((sst, ohc, ground_truth(spec)?))
}

fn ground_truth(spec: &SynthSpec) -> Result<GroundTruth> {
    let signal: Vec<f64> = (0..spec.months).map(|t| spec.event_signal(t as i64)).collect();
    // base years: every January..December fully inside the series
    let first = (12 - spec.start.month0()) % 12;
    let n_years = (spec.months - first.min(spec.months)) / 12;
    if n_years == 0 {
        return Err(Error::BadSpec("scenario has no complete calendar year".into()));
    }
    let mut normal = [0.0; 12];
    for (k, n) in normal.iter_mut().enumerate() {
        let total: f64 = (0..n_years).map(|y| signal[first + 12 * y + k]).sum();
        *n = total / n_years as f64;
    }
    let anomaly: Vec<f64> = signal
        .iter()
        .enumerate()
        .map(|(t, s)| s - normal[spec.start.add_months(t as i64).month0()])
        .collect();
    let anomaly = AnomalySeries {
        start: spec.start,
        values: anomaly,
    };
    let event_rows = (0..anomaly.values.len().saturating_sub(ROW_SPAN - 1))
        .map(|t| {
            let w = &anomaly.values[t..t + ROW_SPAN];
            let q: [f64; QUARTERS] = std::array::from_fn(|i| (w[i] + w[i + 1] + w[i + 2]) / 3.0);
            classify_event(&q, EVENT_THRESHOLD)
        })
        .collect();
    Ok(GroundTruth {
        oni: running_mean3(&anomaly),
        signal,
        anomaly,
        event_rows,
    })
}

/// ONI of the analytic anomaly, computed without the climatology module.
pub fn oracle_oni(truth: &GroundTruth) -> OniSeries {
    running_mean3(&truth.anomaly)
}

/// Three-month running mean by a direct scalar loop, labelled by the last
/// month of each window.
fn running_mean3(anomaly: &AnomalySeries) -> OniSeries {
    let a = &anomaly.values;
    let mut values = Vec::with_capacity(a.len().saturating_sub(2));
    let mut k = 2;
    while k < a.len() {
        let mut s = 0.0;
        for v in &a[k - 2..=k] {
            s += v;
        }
        values.push(s / 3.0);
        k += 1;
    }
    OniSeries {
        start: anomaly.start.add_months(2),
        values,
    }
}

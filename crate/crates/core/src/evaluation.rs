//! Observed/forecast quarter blending, El Niño event confusion matrices and
//! accuracy across forecast configurations 0 to 5.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::climatology::{classify_event, QuarterMatrix, QUARTERS};
use crate::error::{Error, Result};

/// Configuration `k` takes `5 - k` observed quarters followed by `k`
/// forecast quarters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForecastConfiguration(usize);

impl ForecastConfiguration {
    pub fn new(k: usize) -> Result<Self> {
        if k > QUARTERS {
            return Err(Error::BadK(k));
        }
        Ok(Self(k))
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (0..=QUARTERS).map(Self)
    }

    pub fn k(self) -> usize {
        self.0
    }

    /// Number of leading columns taken from the observations.
    pub fn observed_columns(self) -> usize {
        QUARTERS - self.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn correct(&self) -> usize {
        self.tp + self.tn
    }

    fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

/// Accuracy as a percentage, keeping the exact counts for display.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub percent: f64,
    correct: usize,
    total: usize,
}

impl Accuracy {
    /// Hundredths of a percent, rounded half up, computed on the integer
    /// counts so that no binary rounding leaks into the display.
    pub fn hundredths(&self) -> u64 {
        let (c, n) = (self.correct as u64, self.total as u64);
        (20_000 * c + n) / (2 * n)
    }
}

impl std::fmt::Display for Accuracy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let h = self.hundredths();
        write!(f, "{}.{:02}", h / 100, h % 100)
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<Accuracy> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(Accuracy {
        percent: 100.0 * cm.correct() as f64 / total as f64,
        correct: cm.correct(),
        total,
    })
}

fn check_aligned(a: &QuarterMatrix, b: &QuarterMatrix) -> Result<()> {
    if a.n_steps() != b.n_steps() {
        return Err(Error::ShapeMismatch(format!(
            "quarter matrices with {} and {} rows",
            a.n_steps(),
            b.n_steps()
        )));
    }
    Ok(())
}

pub fn blend(observed: &QuarterMatrix, forecast: &QuarterMatrix, k: usize) -> Result<QuarterMatrix> {
    let cfg = ForecastConfiguration::new(k)?;
    check_aligned(observed, forecast)?;
    let split = cfg.observed_columns();
    let rows = observed
        .rows
        .iter()
        .zip(&forecast.rows)
        .map(|(o, f)| std::array::from_fn(|i| if i < split { o[i] } else { f[i] }))
        .collect();
    Ok(QuarterMatrix {
        start: observed.start,
        rows,
    })
}

pub fn evaluate_config(blended: &QuarterMatrix, observed: &QuarterMatrix, threshold: f64) -> Result<ConfusionMatrix> {
    check_aligned(blended, observed)?;
    let mut cm = ConfusionMatrix::default();
    for (b, o) in blended.rows.iter().zip(&observed.rows) {
        cm.record(classify_event(b, threshold), classify_event(o, threshold));
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub config: ForecastConfiguration,
    pub confusion: ConfusionMatrix,
    pub accuracy: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_steps: usize,
    pub threshold: f64,
    pub configs: Vec<ConfigResult>,
}

pub fn run_all_configs(observed: &QuarterMatrix, forecast: &QuarterMatrix, threshold: f64) -> Result<EvalReport> {
    let configs = ForecastConfiguration::all()
        .map(|cfg| {
            let blended = blend(observed, forecast, cfg.k())?;
            let confusion = evaluate_config(&blended, observed, threshold)?;
            Ok(ConfigResult {
                config: cfg,
                accuracy: accuracy(&confusion)?,
                confusion,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        n_steps: observed.n_steps(),
        threshold,
        configs,
    })
}

impl EvalReport {
    pub fn get(&self, k: usize) -> Option<&ConfigResult> {
        self.configs.iter().find(|c| c.config.k() == k)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["config", "tp", "tn", "fp", "fn", "accuracy"])?;
        for r in &self.configs {
            let c = r.confusion;
            w.write_record([
                r.config.k().to_string(),
                c.tp.to_string(),
                c.tn.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                r.accuracy.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Plain-text table, one row per configuration.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{:<40} {:>12}\n",
            format!("Forecast configuration (n = {})", self.n_steps),
            "Accuracy (%)"
        );
        for r in &self.configs {
            let k = r.config.k();
            let label = match k {
                0 => "0: 5 observed quarters".to_string(),
                5 => "5: 5 forecast quarters".to_string(),
                _ => format!("{k}: {} observed + {k} forecast", QUARTERS - k),
            };
            let _ = writeln!(out, "{label:<40} {:>12}", r.accuracy.to_string());
        }
        out
    }
}

//! End-to-end experiment: climatology, normalization, sample construction,
//! training of both forecasters, and observed/forecast quarter matrices at
//! the evaluation anchors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::climatology::{
    compute_climatology, default_base_period, quarters_of, regional_anomaly, AnomalySeries, ClimatologyTable,
    QuarterMatrix, EVENT_THRESHOLD, QUARTERS, ROW_SPAN,
};
use crate::error::{Error, Result};
use crate::evaluation::{run_all_configs, EvalReport};
use crate::grid::{align, GeoBounds, SpatioTemporalGrid, TimeStamp};
use crate::model::{
    ensemble, fit, predict_quarter_anomalies, BlockConfig, CnnForecaster, CnnForecasterConfig, CnnSample,
    ConvLayerSpec, ConvLstmXt, ConvLstmXtConfig, TrainConfig, TrainReport, Trainable,
};
use crate::preprocess::{build_windows, fit_minmax_range, NormalizationParams, WindowSample, WindowSpec};
use crate::rng;
use crate::tensor::{read_checkpoint, write_checkpoint, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvLstmSettings {
    pub blocks: [BlockConfig; 2],
    pub dropout_rate: f64,
}

impl Default for ConvLstmSettings {
    fn default() -> Self {
        let c = ConvLstmXtConfig::new(1, 1);
        Self {
            blocks: c.blocks,
            dropout_rate: c.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnSettings {
    pub conv: Vec<ConvLayerSpec>,
    pub head_hidden: usize,
}

impl Default for CnnSettings {
    fn default() -> Self {
        let c = CnnForecasterConfig::new(1, 1, 1);
        Self {
            conv: c.conv,
            head_hidden: c.head_hidden,
        }
    }
}

/// Everything that shapes an experiment apart from the input data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub bounds: GeoBounds,
    /// Climatology base period; all complete calendar years when absent.
    pub base_period: Option<(TimeStamp, TimeStamp)>,
    pub window: WindowSpec,
    pub convlstm: ConvLstmSettings,
    pub cnn: CnnSettings,
    pub train: TrainConfig,
    pub n_steps: usize,
    pub threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            bounds: GeoBounds::NINO34,
            base_period: None,
            window: WindowSpec::default(),
            convlstm: ConvLstmSettings::default(),
            cnn: CnnSettings::default(),
            train: TrainConfig::default(),
            n_steps: 53,
            threshold: EVENT_THRESHOLD,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window.horizon != ROW_SPAN {
            return Err(Error::Config(format!(
                "forecast horizon must be {ROW_SPAN} months to cover one quarter row, got {}",
                self.window.horizon
            )));
        }
        if self.window.stride != 1 {
            return Err(Error::Config("evaluation anchors need stride 1".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Config(format!("threshold {} must be positive", self.threshold)));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be positive".into()));
        }
        self.train.validate()
    }

    pub fn convlstm_config(&self, n_lat: usize, n_lon: usize) -> ConvLstmXtConfig {
        ConvLstmXtConfig {
            blocks: self.convlstm.blocks,
            dropout_rate: self.convlstm.dropout_rate,
            horizon: self.window.horizon,
            ..ConvLstmXtConfig::new(n_lat, n_lon)
        }
    }

    pub fn cnn_config(&self, n_lat: usize, n_lon: usize) -> CnnForecasterConfig {
        CnnForecasterConfig {
            conv: self.cnn.conv.clone(),
            head_hidden: self.cnn.head_hidden,
            ..CnnForecasterConfig::new(self.window.window_len, n_lat, n_lon)
        }
    }
}

/// Aligned inputs turned into training samples for both models.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub sst: SpatioTemporalGrid,
    pub ohc: SpatioTemporalGrid,
    pub clim: ClimatologyTable,
    pub sst_norm: NormalizationParams,
    pub ohc_norm: NormalizationParams,
    /// Regional SST anomaly over the whole record.
    pub anomaly: AnomalySeries,
    /// Normalized `[time][lat][lon]` SST and OHC, missing values as 0.
    pub normalized: [Vec<f64>; 2],
    /// Per-cell SST anomaly `[time][lat][lon]`, missing values as 0.
    pub field_anomaly: Vec<f64>,
    pub lstm_samples: Vec<WindowSample>,
    pub cnn_samples: Vec<CnnSample>,
    /// Leading samples used for training; the rest are held out.
    pub n_train: usize,
}

impl PreparedData {
    pub fn n_lat(&self) -> usize {
        self.sst.axes().n_lat()
    }

    pub fn n_lon(&self) -> usize {
        self.sst.axes().n_lon()
    }
}

pub fn prepare(sst: &SpatioTemporalGrid, ohc: &SpatioTemporalGrid, cfg: &ExperimentConfig) -> Result<PreparedData> {
    prepare_with(sst, ohc, cfg, None)
}

/// Like `prepare`, but reuses frozen `(sst, ohc)` normalization instead of
/// fitting it on the training months.
pub fn prepare_with(
    sst: &SpatioTemporalGrid,
    ohc: &SpatioTemporalGrid,
    cfg: &ExperimentConfig,
    frozen: Option<(NormalizationParams, NormalizationParams)>,
) -> Result<PreparedData> {
    cfg.validate()?;
    let (sst, ohc) = align(sst, ohc)?;
    let base = match cfg.base_period {
        Some(p) => p,
        None => default_base_period(&sst)?,
    };
    let clim = compute_climatology(&sst, base)?;
    let anomaly = regional_anomaly(&sst, &clim, &cfg.bounds)?;

    let n_times = sst.n_times();
    let n_samples = cfg.window.count(n_times);
    if n_samples < 2 {
        return Err(Error::TooShort {
            needed: cfg.window.window_len + cfg.window.horizon + 1,
            got: n_times,
        });
    }
    let n_train = (n_samples as f64 * cfg.train.train_fraction).round() as usize;
    if n_train == 0 {
        return Err(Error::EmptySplit("train"));
    }
    if n_train == n_samples {
        return Err(Error::EmptySplit("test"));
    }
    // months touched by training inputs and targets
    let train_months = (n_train - 1) * cfg.window.stride + cfg.window.window_len + cfg.window.horizon;
    let (sst_norm, ohc_norm) = match frozen {
        Some(p) => p,
        None => (fit_minmax_range(&sst, 0, train_months)?, fit_minmax_range(&ohc, 0, train_months)?),
    };
    let (mut sst_n, clamped_sst) = sst_norm.normalize_grid(&sst)?;
    let (mut ohc_n, clamped_ohc) = ohc_norm.normalize_grid(&ohc)?;
    log::info!("normalization clamped {clamped_sst} SST and {clamped_ohc} OHC values outside the training range");

    let (n_lat, n_lon) = (sst.axes().n_lat(), sst.axes().n_lon());
    let lstm_samples = build_windows(&[&sst_n, &ohc_n], n_lat, n_lon, sst.start(), cfg.window)?;

    for v in sst_n.iter_mut().chain(ohc_n.iter_mut()).filter(|v| v.is_nan()) {
        *v = 0.0;
    }
    let cells = n_lat * n_lon;
    let mut field_anomaly = Vec::with_capacity(sst.values().len());
    for t in 0..n_times {
        let normal = clim.month_field(sst.time_at(t).month());
        field_anomaly.extend(sst.field(t).iter().zip(normal).map(|(v, c)| {
            let a = v - c;
            if a.is_nan() {
                0.0
            } else {
                a
            }
        }));
    }
    let w = cfg.window.window_len;
    let cnn_samples = lstm_samples
        .iter()
        .map(|s| {
            let first = s.origin - w;
            Ok(CnnSample {
                inputs: Tensor::new(vec![w, n_lat, n_lon], field_anomaly[first * cells..s.origin * cells].to_vec())?,
                targets: Tensor::new(vec![5], quarters_of(&anomaly.values[s.origin..s.origin + ROW_SPAN])?.to_vec())?,
                anchor: s.anchor,
                origin: s.origin,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PreparedData {
        sst,
        ohc,
        clim,
        sst_norm,
        ohc_norm,
        anomaly,
        normalized: [sst_n, ohc_n],
        field_anomaly,
        lstm_samples,
        cnn_samples,
        n_train,
    })
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub convlstm: ConvLstmXt,
    pub cnn: CnnForecaster,
    pub convlstm_report: TrainReport,
    pub cnn_report: TrainReport,
}

/// Initializes both models from `cfg.train.seed` and trains them on the
/// chronological training split.
pub fn train_models(data: &PreparedData, cfg: &ExperimentConfig) -> Result<TrainedModels> {
    let seed = cfg.train.seed;
    let (n_lat, n_lon) = (data.n_lat(), data.n_lon());
    let mut convlstm = ConvLstmXt::init(cfg.convlstm_config(n_lat, n_lon), rng::mix(&[seed, 1]))?;
    let mut cnn = CnnForecaster::init(cfg.cnn_config(n_lat, n_lon), rng::mix(&[seed, 2]))?;
    let k = data.n_train;
    log::info!("training ConvLSTM-XT on {k} windows");
    let convlstm_report = fit(&mut convlstm, &data.lstm_samples[..k], &data.lstm_samples[k..], &cfg.train)?;
    log::info!("training CNN on {k} windows");
    let cnn_tc = TrainConfig {
        seed: rng::mix(&[seed, 3]),
        ..cfg.train
    };
    let cnn_report = fit(&mut cnn, &data.cnn_samples[..k], &data.cnn_samples[k..], &cnn_tc)?;
    Ok(TrainedModels {
        convlstm,
        cnn,
        convlstm_report,
        cnn_report,
    })
}

/// Observed and ensemble-forecast quarter matrices over the last `n_steps`
/// anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecasts {
    pub observed: QuarterMatrix,
    pub forecast: QuarterMatrix,
    pub convlstm: QuarterMatrix,
    pub cnn: QuarterMatrix,
}

/// One forecast from the `window_len` months before month index `origin`
/// (which may lie one past the end of the record).
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorForecast {
    pub anchor: TimeStamp,
    /// ConvLSTM-XT grids denormalized to °C, `[7][lat][lon]`.
    pub sst: Tensor,
    pub convlstm: [f64; QUARTERS],
    pub cnn: [f64; QUARTERS],
    pub ensemble: [f64; QUARTERS],
}

pub fn forecast_at(
    data: &PreparedData,
    convlstm: &ConvLstmXt,
    cnn: &CnnForecaster,
    origin: usize,
    bounds: &GeoBounds,
) -> Result<AnchorForecast> {
    let w = cnn.config.window_len;
    let (n_lat, n_lon) = (data.n_lat(), data.n_lon());
    let cells = n_lat * n_lon;
    if origin < w || origin > data.sst.n_times() {
        return Err(Error::OutOfRange(data.sst.time_at(origin)));
    }
    let mut lstm_in = Vec::with_capacity(2 * w * cells);
    for t in origin - w..origin {
        for ch in &data.normalized {
            lstm_in.extend_from_slice(&ch[t * cells..(t + 1) * cells]);
        }
    }
    let lstm_in = Tensor::new(vec![w, 2, n_lat, n_lon], lstm_in)?;
    let cnn_in = Tensor::new(vec![w, n_lat, n_lon], data.field_anomaly[(origin - w) * cells..origin * cells].to_vec())?;
    let anchor = data.sst.time_at(origin);
    let grids = convlstm.forward(&lstm_in)?;
    let lq = predict_quarter_anomalies(&grids, anchor, &data.sst_norm, &data.clim, bounds)?;
    let cq = cnn.forward(&cnn_in)?;
    let sst = Tensor::new(
        grids.shape().to_vec(),
        grids.data().iter().map(|&y| data.sst_norm.denormalize(y)).collect(),
    )?;
    Ok(AnchorForecast {
        anchor,
        sst,
        convlstm: lq,
        cnn: cq,
        ensemble: ensemble(&cq, &lq)?,
    })
}

pub fn forecast_anchors(
    data: &PreparedData,
    convlstm: &ConvLstmXt,
    cnn: &CnnForecaster,
    cfg: &ExperimentConfig,
) -> Result<Forecasts> {
    let n = data.lstm_samples.len();
    if n < cfg.n_steps {
        return Err(Error::TooShort {
            needed: cfg.n_steps,
            got: n,
        });
    }
    let first = n - cfg.n_steps;
    if first < data.n_train {
        log::warn!(
            "{} of {} evaluation anchors fall inside the training split",
            data.n_train - first,
            cfg.n_steps
        );
    }
    let start = data.lstm_samples[first].anchor;
    let mut observed = Vec::with_capacity(cfg.n_steps);
    let mut lstm_rows = Vec::with_capacity(cfg.n_steps);
    let mut cnn_rows = Vec::with_capacity(cfg.n_steps);
    let mut forecast = Vec::with_capacity(cfg.n_steps);
    for s in &data.lstm_samples[first..] {
        observed.push(quarters_of(&data.anomaly.values[s.origin..s.origin + ROW_SPAN])?);
        let f = forecast_at(data, convlstm, cnn, s.origin, &cfg.bounds)?;
        forecast.push(f.ensemble);
        lstm_rows.push(f.convlstm);
        cnn_rows.push(f.cnn);
    }
    let qm = |rows| QuarterMatrix { start, rows };
    Ok(Forecasts {
        observed: qm(observed),
        forecast: qm(forecast),
        convlstm: qm(lstm_rows),
        cnn: qm(cnn_rows),
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub data: PreparedData,
    pub models: TrainedModels,
    pub forecasts: Forecasts,
    pub report: EvalReport,
}

pub fn run_experiment(
    sst: &SpatioTemporalGrid,
    ohc: &SpatioTemporalGrid,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult> {
    let data = prepare(sst, ohc, cfg)?;
    let models = train_models(&data, cfg)?;
    let forecasts = forecast_anchors(&data, &models.convlstm, &models.cnn, cfg)?;
    let report = run_all_configs(&forecasts.observed, &forecasts.forecast, cfg.threshold)?;
    Ok(ExperimentResult {
        data,
        models,
        forecasts,
        report,
    })
}

/// Writes a model's parameters as a checkpoint with its config in the
/// manifest.
pub fn save_model<M: Trainable>(model: &M, config: &impl Serialize, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(path, &model.named_parameters(), serde_json::to_value(config)?)
}

/// Loads parameters into a model built from the matching config; names and
/// shapes must agree exactly.
pub fn load_parameters<M: Trainable>(model: &mut M, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let stored = read_checkpoint(path)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_parameters()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if stored.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{} holds {} tensors, model has {}",
            path.display(),
            stored.len(),
            expected.len()
        )));
    }
    for ((name, shape), (sname, st)) in expected.iter().zip(&stored) {
        if name != sname || shape.as_slice() != st.shape() {
            return Err(Error::Checkpoint(format!(
                "expected {name} {shape:?}, found {sname} {:?}",
                st.shape()
            )));
        }
    }
    for (dst, (_, src)) in model.parameters_mut().into_iter().zip(stored) {
        *dst = src;
    }
    Ok(())
}

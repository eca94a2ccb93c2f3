//! The `nino` command line: ONI computation, synthetic data, training,
//! prediction, evaluation and heatmap rendering.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::climatology::{
    classify_event, compute_climatology, default_base_period, oni, quarter_matrix, regional_anomaly, write_anomaly_csv,
    write_event_flags_csv, write_oni_csv, write_quarter_csv, ClimatologyTable, QuarterMatrix, ROW_SPAN,
};
use crate::error::{Error, Result};
use crate::evaluation::run_all_configs;
use crate::grid::{mean_skip_missing, read_grid_csv, write_grid_csv, GeoBounds, SpatioTemporalGrid, TimeStamp, Variable};
use crate::model::{CnnForecaster, ConvLstmXt};
use crate::pipeline::{
    forecast_anchors, forecast_at, load_parameters, prepare, prepare_with, save_model, train_models, ExperimentConfig,
};
use crate::preprocess::{render_heatmap, NormalizationParams};
use crate::synthetic::{generate, SynthSpec};

#[derive(Debug, Parser)]
#[command(name = "nino", version, about = "Niño 3.4 index computation and El Niño forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Regional anomaly, ONI, quarter matrix and event flags from an SST CSV.
    Oni(CommonArgs),
    /// Write a synthetic SST/OHC scenario and its ground truth.
    Synth(CommonArgs),
    /// Train ConvLSTM-XT and the CNN forecaster.
    Train(CommonArgs),
    /// Forecast the 7 months after the end of the record.
    Predict(CommonArgs),
    /// Forecast at every evaluation anchor and score configurations 0 to 5.
    Evaluate(EvaluateArgs),
    /// Render monthly, 3-month and whole-period heatmaps of a grid CSV.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sst: Option<PathBuf>,
    #[arg(long)]
    pub ohc: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory written by `train`.
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    /// Seed for initialization, shuffling, dropout and synthesis.
    #[arg(long)]
    pub seed: Option<u64>,
    /// latmin,latmax,lonmin,lonmax
    #[arg(long)]
    pub bounds: Option<GeoBounds>,
    /// Climatology base period, YYYY-MM:YYYY-MM.
    #[arg(long, value_parser = parse_period)]
    pub base_period: Option<(TimeStamp, TimeStamp)>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Use the observed quarters as the forecast; every configuration must
    /// score 100%.
    #[arg(long)]
    pub self_test: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImageFormat {
    Png,
    Ppm,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    /// Grid CSV to draw.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Subtract the monthly climatology of this SST CSV before drawing.
    #[arg(long)]
    pub climatology_from: Option<PathBuf>,
    /// First month to draw (default: first month of the grid).
    #[arg(long)]
    pub from: Option<TimeStamp>,
    /// Number of months to draw (default: to the end of the grid).
    #[arg(long)]
    pub months: Option<usize>,
    /// Colour scale lo,hi; lo maps to violet, hi to red.
    #[arg(long, default_value = "-3,3", value_parser = parse_scale)]
    pub scale: (f64, f64),
    #[arg(long, default_value_t = 16)]
    pub cell_px: usize,
    #[arg(long, value_enum, default_value_t = ImageFormat::Png)]
    pub format: ImageFormat,
}

fn parse_period(s: &str) -> std::result::Result<(TimeStamp, TimeStamp), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected YYYY-MM:YYYY-MM, got {s:?}"))?;
    let a: TimeStamp = a.parse().map_err(|e: Error| e.to_string())?;
    let b: TimeStamp = b.parse().map_err(|e: Error| e.to_string())?;
    Ok((a, b))
}

fn parse_scale(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected lo,hi, got {s:?}"))?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

/// Serializable run configuration, echoed into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sst: Option<PathBuf>,
    pub ohc: Option<PathBuf>,
    pub out: PathBuf,
    pub model_dir: Option<PathBuf>,
    pub seed: u64,
    pub experiment: ExperimentConfig,
    /// Scenario for `synth`; the built-in 20-year scenario when absent.
    pub synth: Option<SynthSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sst: None,
            ohc: None,
            out: PathBuf::from("out"),
            model_dir: None,
            seed: 0,
            experiment: ExperimentConfig::default(),
            synth: None,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

impl RunConfig {
    /// Defaults, then the `--config` file (or, for commands that load a
    /// trained model, the model directory's echoed config), then flags.
    /// `sub_out` names the default output subdirectory of the model
    /// directory for such commands.
    pub fn resolve(args: &CommonArgs, sub_out: Option<&str>) -> Result<Self> {
        let use_model_config = sub_out.is_some();
        let mut cfg = match (&args.config, &args.model_dir) {
            (Some(path), _) => read_json(path)?,
            (None, Some(dir)) if use_model_config && dir.join("config.json").exists() => {
                read_json::<RunConfig>(&dir.join("config.json"))?
            }
            _ => RunConfig::default(),
        };
        if let (Some(sub), Some(dir), None) = (sub_out, &args.model_dir, &args.config) {
            // never write over the training run's own files
            cfg.out = dir.join(sub);
        }
        let e = &mut cfg.experiment;
        if let Some(v) = &args.sst {
            cfg.sst = Some(v.clone());
        }
        if let Some(v) = &args.ohc {
            cfg.ohc = Some(v.clone());
        }
        if let Some(v) = &args.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &args.model_dir {
            cfg.model_dir = Some(v.clone());
        }
        if let Some(v) = args.bounds {
            e.bounds = v;
        }
        if let Some(v) = args.base_period {
            e.base_period = Some(v);
        }
        if let Some(v) = args.window {
            e.window.window_len = v;
        }
        if let Some(v) = args.epochs {
            e.train.epochs = v;
        }
        if let Some(v) = args.lr {
            e.train.learning_rate = v;
        }
        if let Some(v) = args.batch_size {
            e.train.batch_size = v;
        }
        if let Some(v) = args.n_steps {
            e.n_steps = v;
        }
        if let Some(v) = args.threshold {
            e.threshold = v;
        }
        if let Some(v) = args.seed {
            cfg.seed = v;
        }
        e.train.seed = cfg.seed;
        if !(e.threshold > 0.0) {
            return Err(Error::Config(format!("threshold {} must be positive", e.threshold)));
        }
        Ok(cfg)
    }

    fn input(&self, which: &'static str, path: &Option<PathBuf>) -> Result<SpatioTemporalGrid> {
        let path = path
            .as_ref()
            .ok_or_else(|| Error::Config(format!("no {which} CSV given (--{which} or config)")))?;
        let grid = read_grid_csv(path)?;
        let want = if which == "sst" { Variable::Sst } else { Variable::Ohc };
        if grid.variable() != want {
            return Err(Error::Config(format!(
                "{} holds {}, expected {want}",
                path.display(),
                grid.variable()
            )));
        }
        Ok(grid)
    }

    fn model_dir(&self) -> Result<&Path> {
        let dir = self
            .model_dir
            .as_deref()
            .ok_or_else(|| Error::Config("no model directory given (--model-dir)".into()))?;
        if !dir.is_dir() {
            return Err(Error::FileNotFound(dir.to_path_buf()));
        }
        Ok(dir)
    }

    fn create_out(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out)?;
        write_json(&self.out.join("config.json"), self)?;
        Ok(&self.out)
    }
}

fn climatology_for(sst: &SpatioTemporalGrid, e: &ExperimentConfig) -> Result<ClimatologyTable> {
    let base = match e.base_period {
        Some(p) => p,
        None => default_base_period(sst)?,
    };
    compute_climatology(sst, base)
}

pub fn cmd_oni(cfg: &RunConfig) -> Result<()> {
    let sst = cfg.input("sst", &cfg.sst)?;
    let e = &cfg.experiment;
    let clim = climatology_for(&sst, e)?;
    let anomaly = regional_anomaly(&sst, &clim, &e.bounds)?;
    let index = oni(&anomaly)?;
    let rows = anomaly.values.len().checked_sub(ROW_SPAN - 1).filter(|&n| n > 0).ok_or(Error::TooShort {
        needed: ROW_SPAN,
        got: anomaly.values.len(),
    })?;
    let q = quarter_matrix(&anomaly, rows)?;

    let out = cfg.create_out()?;
    write_anomaly_csv(&anomaly, out.join("anomaly.csv"))?;
    write_oni_csv(&index, out.join("oni.csv"))?;
    write_quarter_csv(&q, out.join("quarters.csv"))?;
    write_event_flags_csv(&q, e.threshold, out.join("events.csv"))?;

    let flags = q.event_flags(e.threshold);
    let (peak_i, peak) = index
        .values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    println!(
        "{} months {}..{}, ONI max {peak:.3} at {}, {} of {} rows meet the event rule",
        anomaly.values.len(),
        sst.start(),
        sst.end(),
        index.start.add_months(peak_i as i64),
        flags.iter().filter(|&&f| f).count(),
        flags.len()
    );
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let mut spec = cfg.synth.clone().unwrap_or_else(|| SynthSpec::scenario(cfg.seed));
    spec.seed = cfg.seed;
    let (sst, ohc, truth) = generate(&spec)?;
    let out = cfg.create_out()?;
    write_grid_csv(&sst, out.join("sst.csv"))?;
    write_grid_csv(&ohc, out.join("ohc.csv"))?;
    write_json(&out.join("spec.json"), &spec)?;
    write_json(&out.join("truth.json"), &truth)?;
    println!(
        "wrote {} months on {}x{} cells, {} planted events",
        spec.months,
        spec.axes.n_lat(),
        spec.axes.n_lon(),
        spec.events.len()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let sst = cfg.input("sst", &cfg.sst)?;
    let ohc = cfg.input("ohc", &cfg.ohc)?;
    let e = &cfg.experiment;
    let data = prepare(&sst, &ohc, e)?;
    let models = train_models(&data, e)?;

    let out = cfg.create_out()?;
    data.sst_norm.save(out.join("sst_norm.json"))?;
    data.ohc_norm.save(out.join("ohc_norm.json"))?;
    for (name, report) in [("convlstm", &models.convlstm_report), ("cnn", &models.cnn_report)] {
        std::fs::create_dir_all(out.join(name))?;
        report.write_loss_csv(out.join(name).join("loss_curve.csv"))?;
    }
    save_model(&models.convlstm, &models.convlstm.config, out.join("convlstm").join("model.ckpt"))?;
    save_model(&models.cnn, &models.cnn.config, out.join("cnn").join("model.ckpt"))?;

    for (name, report) in [("ConvLSTM-XT", &models.convlstm_report), ("CNN", &models.cnn_report)] {
        match report.loss_curve.last() {
            Some(l) => println!(
                "{name}: {} epochs on {} windows, final train MSE {:.6}, test MSE {:.6}",
                l.epoch, report.n_train, l.train_mse, l.test_mse
            ),
            None => println!("{name}: 0 epochs, checkpoint holds the initialization"),
        }
    }
    Ok(())
}

struct Loaded {
    data: crate::pipeline::PreparedData,
    convlstm: ConvLstmXt,
    cnn: CnnForecaster,
}

fn load_trained(cfg: &RunConfig) -> Result<Loaded> {
    let dir = cfg.model_dir()?;
    let sst = cfg.input("sst", &cfg.sst)?;
    let ohc = cfg.input("ohc", &cfg.ohc)?;
    let norms = (
        NormalizationParams::load(dir.join("sst_norm.json"))?,
        NormalizationParams::load(dir.join("ohc_norm.json"))?,
    );
    let e = &cfg.experiment;
    let data = prepare_with(&sst, &ohc, e, Some(norms))?;
    let mut convlstm = ConvLstmXt::zeros(e.convlstm_config(data.n_lat(), data.n_lon()))?;
    load_parameters(&mut convlstm, dir.join("convlstm").join("model.ckpt"))?;
    let mut cnn = CnnForecaster::zeros(e.cnn_config(data.n_lat(), data.n_lon()))?;
    load_parameters(&mut cnn, dir.join("cnn").join("model.ckpt"))?;
    Ok(Loaded { data, convlstm, cnn })
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<()> {
    let m = load_trained(cfg)?;
    let e = &cfg.experiment;
    let origin = m.data.sst.n_times();
    let f = forecast_at(&m.data, &m.convlstm, &m.cnn, origin, &e.bounds)?;
    let grid = SpatioTemporalGrid::unchecked(Variable::Sst, m.data.sst.axes().clone(), f.anchor, f.sst.data().to_vec())?;

    let out = cfg.create_out()?;
    write_grid_csv(&grid, out.join("prediction.csv"))?;
    let mut w = csv::Writer::from_path(out.join("prediction_quarters.csv"))?;
    w.write_record(["model", "q0", "q1", "q2", "q3", "q4"])?;
    for (name, q) in [("convlstm", f.convlstm), ("cnn", f.cnn), ("ensemble", f.ensemble)] {
        let mut rec = vec![name.to_string()];
        rec.extend(q.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let event = classify_event(&f.ensemble, e.threshold);
    println!(
        "forecast from {}: quarters {:?} -> {}",
        f.anchor,
        f.ensemble.map(|v| (v * 1000.0).round() / 1000.0),
        if event { "El Niño conditions" } else { "no event" }
    );
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, self_test: bool) -> Result<()> {
    let m = load_trained(cfg)?;
    let e = &cfg.experiment;
    let f = forecast_anchors(&m.data, &m.convlstm, &m.cnn, e)?;
    let forecast: &QuarterMatrix = if self_test { &f.observed } else { &f.forecast };
    let report = run_all_configs(&f.observed, forecast, e.threshold)?;

    let out = cfg.create_out()?;
    report.write_csv(out.join("report.csv"))?;
    report.write_json(out.join("report.json"))?;
    write_quarter_csv(&f.observed, out.join("observed_quarters.csv"))?;
    write_quarter_csv(forecast, out.join("forecast_quarters.csv"))?;
    write_quarter_csv(&f.convlstm, out.join("convlstm_quarters.csv"))?;
    write_quarter_csv(&f.cnn, out.join("cnn_quarters.csv"))?;
    print!("{}", report.summary());
    Ok(())
}

pub fn cmd_render(args: &RenderArgs) -> Result<()> {
    let grid = read_grid_csv(&args.grid)?;
    let values = match &args.climatology_from {
        Some(path) => {
            let base = read_grid_csv(path)?;
            let clim = compute_climatology(&base, default_base_period(&base)?)?;
            if !clim.axes().approx_eq(grid.axes()) {
                return Err(Error::AxesMismatch);
            }
            let mut v = Vec::with_capacity(grid.values().len());
            for t in 0..grid.n_times() {
                let normal = clim.month_field(grid.time_at(t).month());
                v.extend(grid.field(t).iter().zip(normal).map(|(a, c)| a - c));
            }
            v
        }
        None => grid.values().to_vec(),
    };
    let from = args.from.unwrap_or(grid.start());
    let first = grid.time_index(from).ok_or(Error::OutOfRange(from))?;
    let months = args.months.unwrap_or(grid.n_times() - first);
    if months == 0 || first + months > grid.n_times() {
        return Err(Error::OutOfRange(from.add_months(months as i64)));
    }
    let (n_lat, n_lon) = (grid.axes().n_lat(), grid.axes().n_lon());
    let cells = n_lat * n_lon;
    let field = |t: usize| &values[(first + t) * cells..(first + t + 1) * cells];
    let average = |from: usize, len: usize| -> Vec<f64> {
        (0..cells)
            .map(|c| mean_skip_missing((from..from + len).map(|t| field(t)[c])).unwrap_or(f64::NAN))
            .collect()
    };

    let mut images = Vec::new();
    for t in 0..months {
        images.push((format!("month_{}", from.add_months(t as i64)), field(t).to_vec()));
    }
    for t in 0..months.saturating_sub(2) {
        let (a, b) = (from.add_months(t as i64), from.add_months(t as i64 + 2));
        images.push((format!("period_{a}_to_{b}"), average(t, 3)));
    }
    let last = from.add_months(months as i64 - 1);
    images.push((format!("average_{from}_to_{last}"), average(0, months)));
    let rendered = images
        .iter()
        .map(|(name, f)| Ok((name, render_heatmap(f, n_lat, n_lon, args.scale, args.cell_px)?)))
        .collect::<Result<Vec<_>>>()?;

    std::fs::create_dir_all(&args.out)?;
    for (name, img) in &rendered {
        match args.format {
            ImageFormat::Png => img.write_png(args.out.join(format!("{name}.png")))?,
            ImageFormat::Ppm => img.write_ppm(args.out.join(format!("{name}.ppm")))?,
        }
    }
    println!("wrote {} images to {}", rendered.len(), args.out.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Oni(a) => cmd_oni(&RunConfig::resolve(&a, None)?),
        Command::Synth(a) => cmd_synth(&RunConfig::resolve(&a, None)?),
        Command::Train(a) => cmd_train(&RunConfig::resolve(&a, None)?),
        Command::Predict(a) => cmd_predict(&RunConfig::resolve(&a, Some("predict"))?),
        Command::Evaluate(a) => cmd_evaluate(&RunConfig::resolve(&a.common, Some("evaluate"))?, a.self_test),
        Command::Render(a) => cmd_render(&a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

use crate::climatology::{quarters_of, regional_anomaly, ClimatologyTable, QUARTERS, ROW_SPAN};
use crate::error::{Error, Result};
use crate::grid::{GeoBounds, SpatioTemporalGrid, TimeStamp, Variable};
use crate::preprocess::NormalizationParams;
use crate::tensor::Tensor;

/// Turns 7 normalized predicted SST grids starting at `anchor` into the
/// five overlapping quarter anomalies (°C) of the region.
pub fn predict_quarter_anomalies(
    pred: &Tensor,
    anchor: TimeStamp,
    norm: &NormalizationParams,
    clim: &ClimatologyTable,
    bounds: &GeoBounds,
) -> Result<[f64; QUARTERS]> {
    let axes = clim.axes();
    if pred.shape() != [ROW_SPAN, axes.n_lat(), axes.n_lon()] {
        return Err(Error::ShapeMismatch(format!(
            "expected {ROW_SPAN} grids of {}x{}, got {:?}",
            axes.n_lat(),
            axes.n_lon(),
            pred.shape()
        )));
    }
    let celsius = pred.data().iter().map(|&y| norm.denormalize(y)).collect();
    let grid = SpatioTemporalGrid::unchecked(Variable::Sst, axes.clone(), anchor, celsius)?;
    let series = regional_anomaly(&grid, clim, bounds)?;
    quarters_of(&series.values)
}

/// Elementwise mean of two quarter forecasts.
pub fn ensemble(a: &[f64], b: &[f64]) -> Result<[f64; QUARTERS]> {
    if a.len() != QUARTERS || b.len() != QUARTERS {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(std::array::from_fn(|i| (a[i] + b[i]) / 2.0))
}

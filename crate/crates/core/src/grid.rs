//! Gridded monthly fields: timestamps, geographic bounds, axes, the dense
//! `[time][lat][lon]` container, and the canonical CSV exchange format.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical CSV header, byte-exact.
pub const CSV_HEADER: [&str; 6] = ["variable", "units", "lat", "lon", "time", "value"];

/// Plausible range for sea surface temperature values in °C.
pub const SST_RANGE: (f64, f64) = (-5.0, 45.0);

const AXIS_TOLERANCE: f64 = 1e-9;

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeStamp {
    year: i32,
    month: u32,
}

impl TimeStamp {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Config(format!("month {month} outside 1..=12")));
        }
        Ok(Self { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month
    }

    /// Zero-based calendar month index, January = 0.
    pub fn month0(self) -> usize {
        (self.month - 1) as usize
    }

    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    fn from_ordinal(ord: i64) -> Self {
        Self {
            year: ord.div_euclid(12) as i32,
            month: ord.rem_euclid(12) as u32 + 1,
        }
    }

    pub fn succ(self) -> Self {
        self.add_months(1)
    }

    pub fn add_months(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }

    /// Signed number of months from `earlier` to `self`.
    pub fn months_since(self, earlier: TimeStamp) -> i64 {
        self.ordinal() - earlier.ordinal()
    }
}

impl fmt::Display for TimeStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for TimeStamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad timestamp {s:?}, expected YYYY-MM"));
        let (y, m) = s.trim().rsplit_once('-').ok_or_else(bad)?;
        if m.len() != 2 || y.is_empty() {
            return Err(bad());
        }
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        TimeStamp::new(year, month)
    }
}

impl Serialize for TimeStamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimeStamp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Normalizes a longitude to `[-180, 180)`.
pub fn normalize_lon(lon: f64) -> f64 {
    let l = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if l >= 180.0 {
        l - 360.0
    } else {
        l
    }
}

/// Inclusive latitude/longitude box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeoBounds {
    /// The Niño 3.4 box: 5°S–5°N, 170°W–120°W.
    pub const NINO34: GeoBounds = GeoBounds {
        lat_min: -5.0,
        lat_max: 5.0,
        lon_min: -170.0,
        lon_max: -120.0,
    };

    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let (lon_min, lon_max) = (normalize_lon(lon_min), normalize_lon(lon_max));
        if !(lat_min <= lat_max) || !(lon_min <= lon_max) {
            return Err(Error::Config(format!(
                "invalid bounds lat {lat_min}..{lat_max}, lon {lon_min}..{lon_max}"
            )));
        }
        Ok(Self {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        })
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let lon = normalize_lon(lon);
        self.lat_min <= lat && lat <= self.lat_max && self.lon_min <= lon && lon <= self.lon_max
    }
}

impl FromStr for GeoBounds {
    type Err = Error;

    /// Parses `latmin,latmax,lonmin,lonmax`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad bounds {s:?}: {e}")))?;
        match parts[..] {
            [a, b, c, d] => GeoBounds::new(a, b, c, d),
            _ => Err(Error::Config(format!("bounds need 4 values, got {s:?}"))),
        }
    }
}

/// Ascending, uniformly spaced latitude and longitude cell centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    lats: Vec<f64>,
    lons: Vec<f64>,
}

fn check_axis(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InconsistentAxes(format!("{name} axis is empty")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InconsistentAxes(format!("{name} axis has non-finite values")));
    }
    if let [a, b, ..] = values {
        let step = b - a;
        for (i, w) in values.windows(2).enumerate() {
            let d = w[1] - w[0];
            if d <= 0.0 {
                return Err(Error::InconsistentAxes(format!(
                    "{name} axis not strictly ascending at index {}",
                    i + 1
                )));
            }
            if (d - step).abs() > AXIS_TOLERANCE {
                return Err(Error::InconsistentAxes(format!(
                    "{name} axis not uniformly spaced at index {} ({d} vs {step})",
                    i + 1
                )));
            }
        }
    }
    Ok(())
}

impl GridAxes {
    pub fn new(lats: Vec<f64>, lons: Vec<f64>) -> Result<Self> {
        check_axis("lat", &lats)?;
        check_axis("lon", &lons)?;
        Ok(Self { lats, lons })
    }

    /// `n` evenly spaced points from `first` with the given step.
    pub fn regular(lat0: f64, dlat: f64, nlat: usize, lon0: f64, dlon: f64, nlon: usize) -> Result<Self> {
        let lats = (0..nlat).map(|i| lat0 + dlat * i as f64).collect();
        let lons = (0..nlon).map(|i| lon0 + dlon * i as f64).collect();
        Self::new(lats, lons)
    }

    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    pub fn n_lat(&self) -> usize {
        self.lats.len()
    }

    pub fn n_lon(&self) -> usize {
        self.lons.len()
    }

    pub fn n_cells(&self) -> usize {
        self.lats.len() * self.lons.len()
    }

    /// Cell spacing per axis; `None` for a single-point axis.
    pub fn spacing(&self) -> (Option<f64>, Option<f64>) {
        let step = |v: &[f64]| (v.len() > 1).then(|| v[1] - v[0]);
        (step(&self.lats), step(&self.lons))
    }

    pub fn approx_eq(&self, other: &GridAxes) -> bool {
        let close = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= AXIS_TOLERANCE)
        };
        close(&self.lats, &other.lats) && close(&self.lons, &other.lons)
    }

    /// Indices of the cells whose centers fall inside `bounds`, row-major.
    pub fn cells_within(&self, bounds: &GeoBounds) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, &lat) in self.lats.iter().enumerate() {
            for (j, &lon) in self.lons.iter().enumerate() {
                if bounds.contains(lat, lon) {
                    out.push(i * self.lons.len() + j);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variable {
    #[serde(rename = "SST")]
    Sst,
    #[serde(rename = "OHC")]
    Ohc,
}

impl Variable {
    pub fn default_units(self) -> &'static str {
        match self {
            Variable::Sst => "degC",
            Variable::Ohc => "J m-2",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variable::Sst => "SST",
            Variable::Ohc => "OHC",
        })
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "SST" | "sst" => Ok(Variable::Sst),
            "OHC" | "ohc" => Ok(Variable::Ohc),
            other => Err(Error::Config(format!("unknown variable {other:?}"))),
        }
    }
}

/// Consecutive monthly 2D fields of one variable. Missing cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalGrid {
    variable: Variable,
    units: String,
    axes: GridAxes,
    start: TimeStamp,
    n_times: usize,
    values: Vec<f64>,
}

impl SpatioTemporalGrid {
    /// Builds a grid from `[time][lat][lon]` row-major values.
    pub fn new(variable: Variable, axes: GridAxes, start: TimeStamp, values: Vec<f64>) -> Result<Self> {
        Self::with_units(variable, variable.default_units().to_string(), axes, start, values)
    }

    pub fn with_units(
        variable: Variable,
        units: String,
        axes: GridAxes,
        start: TimeStamp,
        values: Vec<f64>,
    ) -> Result<Self> {
        let cells = axes.n_cells();
        if values.is_empty() || values.len() % cells != 0 {
            return Err(Error::InvalidGrid(format!(
                "{} values do not fill whole {}x{} fields",
                values.len(),
                axes.n_lat(),
                axes.n_lon()
            )));
        }
        if variable == Variable::Sst {
            if let Some(v) = values
                .iter()
                .find(|v| !v.is_nan() && !(SST_RANGE.0..=SST_RANGE.1).contains(*v))
            {
                return Err(Error::InvalidGrid(format!(
                    "SST value {v} outside [{}, {}] °C",
                    SST_RANGE.0, SST_RANGE.1
                )));
            }
        }
        Ok(Self {
            variable,
            units,
            n_times: values.len() / cells,
            axes,
            start,
            values,
        })
    }

    /// Skips the plausibility range check; model output may leave it.
    pub(crate) fn unchecked(variable: Variable, axes: GridAxes, start: TimeStamp, values: Vec<f64>) -> Result<Self> {
        let cells = axes.n_cells();
        if values.is_empty() || values.len() % cells != 0 {
            return Err(Error::InvalidGrid(format!("{} values for {cells} cells", values.len())));
        }
        Ok(Self {
            variable,
            units: variable.default_units().to_string(),
            n_times: values.len() / cells,
            axes,
            start,
            values,
        })
    }

    pub fn variable(&self) -> Variable {
        self.variable
    }

    pub fn units(&self) -> &str {
        &self.units
    }

    pub fn axes(&self) -> &GridAxes {
        &self.axes
    }

    pub fn start(&self) -> TimeStamp {
        self.start
    }

    /// Last month covered (inclusive).
    pub fn end(&self) -> TimeStamp {
        self.start.add_months(self.n_times as i64 - 1)
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time_at(&self, index: usize) -> TimeStamp {
        self.start.add_months(index as i64)
    }

    pub fn time_index(&self, t: TimeStamp) -> Option<usize> {
        let k = t.months_since(self.start);
        (0..self.n_times as i64).contains(&k).then_some(k as usize)
    }

    /// The field at time index `t`, row-major `[lat][lon]`.
    pub fn field(&self, t: usize) -> &[f64] {
        let n = self.axes.n_cells();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn value(&self, t: usize, lat: usize, lon: usize) -> f64 {
        self.values[(t * self.axes.n_lat() + lat) * self.axes.n_lon() + lon]
    }

    /// Applies `f` to every value, keeping the layout.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::with_units(
            self.variable,
            self.units.clone(),
            self.axes.clone(),
            self.start,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Sub-range of months `from..=to`.
    pub fn slice_time(&self, from: TimeStamp, to: TimeStamp) -> Result<Self> {
        let a = self.time_index(from).ok_or(Error::OutOfRange(from))?;
        let b = self.time_index(to).ok_or(Error::OutOfRange(to))?;
        if b < a {
            return Err(Error::NoOverlap);
        }
        let n = self.axes.n_cells();
        Ok(Self {
            variable: self.variable,
            units: self.units.clone(),
            axes: self.axes.clone(),
            start: from,
            n_times: b - a + 1,
            values: self.values[a * n..(b + 1) * n].to_vec(),
        })
    }
}

/// Keeps exactly the cells whose centers lie inside `bounds` (inclusive).
pub fn extract_region(grid: &SpatioTemporalGrid, bounds: &GeoBounds) -> Result<SpatioTemporalGrid> {
    let axes = grid.axes();
    let lat_idx: Vec<usize> = (0..axes.n_lat())
        .filter(|&i| bounds.lat_min <= axes.lats[i] && axes.lats[i] <= bounds.lat_max)
        .collect();
    let lon_idx: Vec<usize> = (0..axes.n_lon())
        .filter(|&j| {
            let lon = normalize_lon(axes.lons[j]);
            bounds.lon_min <= lon && lon <= bounds.lon_max
        })
        .collect();
    if lat_idx.is_empty() || lon_idx.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let new_axes = GridAxes::new(
        lat_idx.iter().map(|&i| axes.lats[i]).collect(),
        lon_idx.iter().map(|&j| axes.lons[j]).collect(),
    )?;
    let mut values = Vec::with_capacity(grid.n_times * new_axes.n_cells());
    for t in 0..grid.n_times {
        for &i in &lat_idx {
            for &j in &lon_idx {
                values.push(grid.value(t, i, j));
            }
        }
    }
    SpatioTemporalGrid::with_units(grid.variable, grid.units.clone(), new_axes, grid.start, values)
}

/// Mean over non-missing cells of one field, fixed summation order.
pub(crate) fn mean_skip_missing(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        if !v.is_nan() {
            sum += v;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Arithmetic mean of the non-missing cells at month `t`.
pub fn regional_mean(grid: &SpatioTemporalGrid, t: TimeStamp) -> Result<f64> {
    let k = grid.time_index(t).ok_or(Error::OutOfRange(t))?;
    mean_skip_missing(grid.field(k).iter().copied()).ok_or_else(|| Error::AllMissing(t.to_string()))
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Writes the canonical CSV, rows ordered by time, lat, lon.
pub fn write_grid_csv_to<W: Write>(grid: &SpatioTemporalGrid, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(CSV_HEADER)?;
    let var = grid.variable.to_string();
    let lats: Vec<String> = grid.axes.lats.iter().map(|v| format!("{v}")).collect();
    let lons: Vec<String> = grid.axes.lons.iter().map(|v| format!("{v}")).collect();
    for t in 0..grid.n_times {
        let time = grid.time_at(t).to_string();
        for (i, lat) in lats.iter().enumerate() {
            for (j, lon) in lons.iter().enumerate() {
                let value = format_value(grid.value(t, i, j));
                w.write_record([var.as_str(), grid.units.as_str(), lat, lon, &time, &value])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_grid_csv(grid: &SpatioTemporalGrid, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_grid_csv_to(grid, std::io::BufWriter::new(file))
}

struct Row {
    line: u64,
    time: TimeStamp,
    lat: f64,
    lon: f64,
    value: f64,
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Parses the canonical CSV. Rows may come in any order; absent
/// `(time, lat, lon)` rows become missing cells.
pub fn read_grid_csv_from<R: Read>(input: R) -> Result<SpatioTemporalGrid> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(CSV_HEADER) {
        return Err(Error::Format {
            line: 1,
            msg: format!("expected header {:?}", CSV_HEADER.join(",")),
        });
    }

    let mut variable: Option<(Variable, String)> = None;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let fail = |msg: String| Error::Format { line, msg };
        if record.len() != CSV_HEADER.len() {
            return Err(fail(format!("expected 6 fields, got {}", record.len())));
        }
        let var: Variable = record[0].parse().map_err(|e: Error| fail(e.to_string()))?;
        let units = record[1].trim().to_string();
        match &variable {
            None => variable = Some((var, units)),
            Some((v, u)) if *v != var || *u != units => {
                return Err(fail(format!("mixed variables/units: {var} [{units}] after {v} [{u}]")))
            }
            Some(_) => {}
        }
        let num = |idx: usize, name: &str| -> Result<f64> {
            record[idx]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| fail(format!("bad {name} {:?}", &record[idx])))
        };
        let lat = num(2, "lat")?;
        let lon = num(3, "lon")?;
        let time: TimeStamp = record[4].parse().map_err(|e: Error| fail(e.to_string()))?;
        let value = if record[5].trim().is_empty() {
            f64::NAN
        } else {
            num(5, "value")?
        };
        rows.push(Row {
            line,
            time,
            lat,
            lon,
            value,
        });
    }
    let Some((variable, units)) = variable else {
        return Err(Error::Format {
            line: 1,
            msg: "no data rows".into(),
        });
    };

    let axes = GridAxes::new(
        sorted_unique(rows.iter().map(|r| r.lat).collect()),
        sorted_unique(rows.iter().map(|r| r.lon).collect()),
    )?;
    let mut times: Vec<TimeStamp> = rows.iter().map(|r| r.time).collect();
    times.sort();
    times.dedup();
    for w in times.windows(2) {
        if w[1] != w[0].succ() {
            return Err(Error::GapInTime {
                after: w[0],
                found: w[1],
            });
        }
    }
    let start = times[0];
    let (n_lat, n_lon) = (axes.n_lat(), axes.n_lon());
    let mut values = vec![f64::NAN; times.len() * n_lat * n_lon];
    let mut seen = vec![false; values.len()];
    let position = |axis: &[f64], v: f64| axis.binary_search_by(|a| a.total_cmp(&v)).ok();
    for r in &rows {
        // Both lookups succeed: the axes were built from these rows.
        let i = position(&axes.lats, r.lat).expect("lat on axis");
        let j = position(&axes.lons, r.lon).expect("lon on axis");
        let t = r.time.months_since(start) as usize;
        let k = (t * n_lat + i) * n_lon + j;
        if seen[k] {
            return Err(Error::DuplicateRow {
                line: r.line,
                time: r.time,
                lat: r.lat,
                lon: r.lon,
            });
        }
        seen[k] = true;
        values[k] = r.value;
    }
    SpatioTemporalGrid::with_units(variable, units, axes, start, values)
}

pub fn read_grid_csv(path: impl AsRef<Path>) -> Result<SpatioTemporalGrid> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_grid_csv_from(std::io::BufReader::new(file))
}

/// Index of the nearest axis value; ties resolve to the lower index.
fn nearest(axis: &[f64], v: f64) -> usize {
    let p = axis.partition_point(|&a| a < v);
    if p == 0 {
        0
    } else if p == axis.len() {
        axis.len() - 1
    } else if v - axis[p - 1] <= axis[p] - v {
        p - 1
    } else {
        p
    }
}

fn resample(grid: &SpatioTemporalGrid, target: &GridAxes) -> Result<SpatioTemporalGrid> {
    let li: Vec<usize> = target.lats.iter().map(|&v| nearest(&grid.axes.lats, v)).collect();
    let lj: Vec<usize> = target.lons.iter().map(|&v| nearest(&grid.axes.lons, v)).collect();
    let mut values = Vec::with_capacity(grid.n_times * target.n_cells());
    for t in 0..grid.n_times {
        for &i in &li {
            for &j in &lj {
                values.push(grid.value(t, i, j));
            }
        }
    }
    SpatioTemporalGrid::with_units(grid.variable, grid.units.clone(), target.clone(), grid.start, values)
}

fn cell_area(axes: &GridAxes) -> f64 {
    let (a, b) = axes.spacing();
    a.unwrap_or(0.0) * b.unwrap_or(0.0)
}

/// Puts two grids on the intersected time range and a shared cell set.
///
/// When the axes differ, the coarser grid's cells inside the overlap of
/// both bounding boxes become the shared cell set and both grids are
/// resampled onto it by nearest neighbour.
pub fn align(
    a: &SpatioTemporalGrid,
    b: &SpatioTemporalGrid,
) -> Result<(SpatioTemporalGrid, SpatioTemporalGrid)> {
    let from = a.start.max(b.start);
    let to = a.end().min(b.end());
    if to < from {
        return Err(Error::NoOverlap);
    }
    let (a, b) = (a.slice_time(from, to)?, b.slice_time(from, to)?);
    if a.axes.approx_eq(&b.axes) {
        return Ok((a, b));
    }
    let coarse = if cell_area(&a.axes) >= cell_area(&b.axes) {
        &a.axes
    } else {
        &b.axes
    };
    let span = |v: &[f64]| (v[0], v[v.len() - 1]);
    let (alat, blat) = (span(&a.axes.lats), span(&b.axes.lats));
    let (alon, blon) = (span(&a.axes.lons), span(&b.axes.lons));
    let lat_range = (alat.0.max(blat.0), alat.1.min(blat.1));
    let lon_range = (alon.0.max(blon.0), alon.1.min(blon.1));
    let within = |v: f64, r: (f64, f64)| r.0 - AXIS_TOLERANCE <= v && v <= r.1 + AXIS_TOLERANCE;
    let lats: Vec<f64> = coarse.lats.iter().copied().filter(|&v| within(v, lat_range)).collect();
    let lons: Vec<f64> = coarse.lons.iter().copied().filter(|&v| within(v, lon_range)).collect();
    if lats.is_empty() || lons.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let target = GridAxes::new(lats, lons)?;
    Ok((resample(&a, &target)?, resample(&b, &target)?))
}

//! Min-max scaling, heatmap rendering, and sliding-window samples.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpatioTemporalGrid, TimeStamp, Variable};
use crate::tensor::Tensor;

/// Frozen min-max scaling for one variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub variable: Variable,
    pub min: f64,
    pub max: f64,
}

/// Fits min/max over the non-missing values of months `from..to` (indices).
pub fn fit_minmax_range(grid: &SpatioTemporalGrid, from: usize, to: usize) -> Result<NormalizationParams> {
    let n = grid.axes().n_cells();
    let to = to.min(grid.n_times());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &grid.values()[from * n..to * n] {
        if !v.is_nan() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        return Err(Error::AllMissing(format!("{} months {from}..{to}", grid.variable())));
    }
    if lo == hi {
        log::warn!("{} is constant ({lo}); normalized values will be 0", grid.variable());
    }
    Ok(NormalizationParams {
        variable: grid.variable(),
        min: lo,
        max: hi,
    })
}

pub fn fit_minmax(grid: &SpatioTemporalGrid) -> Result<NormalizationParams> {
    fit_minmax_range(grid, 0, grid.n_times())
}

impl NormalizationParams {
    pub fn is_degenerate(&self) -> bool {
        self.max <= self.min
    }

    /// Maps to `[0, 1]`, clamping out-of-range inputs. A degenerate range
    /// maps everything to 0.
    pub fn normalize(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        self.min + y * (self.max - self.min)
    }

    /// Normalizes in place, leaving NaN untouched; returns how many values
    /// had to be clamped.
    pub fn normalize_slice(&self, values: &mut [f64]) -> usize {
        let mut clamped = 0;
        for v in values.iter_mut().filter(|v| !v.is_nan()) {
            if *v < self.min || *v > self.max {
                clamped += 1;
            }
            *v = self.normalize(*v);
        }
        if clamped > 0 {
            log::info!("{}: clamped {clamped} values outside [{}, {}]", self.variable, self.min, self.max);
        }
        clamped
    }

    pub fn normalize_grid(&self, grid: &SpatioTemporalGrid) -> Result<(Vec<f64>, usize)> {
        if grid.variable() != self.variable {
            return Err(Error::Config(format!(
                "normalization fitted on {} applied to {}",
                self.variable,
                grid.variable()
            )));
        }
        let mut v = grid.values().to_vec();
        let clamped = self.normalize_slice(&mut v);
        Ok((v, clamped))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub type Rgb = [u8; 3];

pub const MISSING_COLOR: Rgb = [128, 128, 128];

/// Diverging colormap anchors: parameter position and colour, from violet
/// through blue, white and yellow to red.
pub const COLORMAP_ANCHORS: [(f64, Rgb); 5] = [
    (0.0, [48, 0, 96]),
    (0.25, [0, 0, 255]),
    (0.5, [255, 255, 255]),
    (0.75, [255, 220, 0]),
    (1.0, [200, 0, 0]),
];

/// Colour at parameter `s` in `[0, 1]` (clamped), piecewise linear in RGB.
pub fn colormap(s: f64) -> Rgb {
    let s = s.clamp(0.0, 1.0);
    let seg = COLORMAP_ANCHORS
        .windows(2)
        .find(|w| s <= w[1].0)
        .unwrap_or(&COLORMAP_ANCHORS[3..5]);
    let ((s0, c0), (s1, c1)) = (seg[0], seg[1]);
    let f = (s - s0) / (s1 - s0);
    std::array::from_fn(|i| {
        let v = c0[i] as f64 + f * (c1[i] as f64 - c0[i] as f64);
        v.round().clamp(0.0, 255.0) as u8
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatmapImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<Rgb>,
}

impl HeatmapImage {
    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    /// Binary PPM (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_ppm())?;
        Ok(())
    }

    pub fn write_png_to<W: Write>(&self, out: W) -> Result<()> {
        let mut enc = png::Encoder::new(out, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        w.write_image_data(&raw)?;
        w.finish()?;
        Ok(())
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_png_to(std::io::BufWriter::new(file))
    }
}

/// Renders a `[lat][lon]` field (ascending latitude) with north at the top.
/// Each cell becomes a `cell_px` square block.
pub fn render_heatmap(
    field: &[f64],
    n_lat: usize,
    n_lon: usize,
    scale: (f64, f64),
    cell_px: usize,
) -> Result<HeatmapImage> {
    let (lo, hi) = scale;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::BadScale(lo, hi));
    }
    if field.len() != n_lat * n_lon || field.is_empty() || cell_px == 0 {
        return Err(Error::ShapeMismatch(format!(
            "heatmap field of {} values for {n_lat}x{n_lon} cells at {cell_px}px",
            field.len()
        )));
    }
    let (width, height) = (n_lon * cell_px, n_lat * cell_px);
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let lat = n_lat - 1 - y / cell_px;
        for x in 0..width {
            let v = field[lat * n_lon + x / cell_px];
            pixels.push(if v.is_nan() {
                MISSING_COLOR
            } else {
                colormap((v - lo) / (hi - lo))
            });
        }
    }
    Ok(HeatmapImage { width, height, pixels })
}

/// Window lengths for sample construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_len: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window_len: 12,
            horizon: 7,
            stride: 1,
        }
    }
}

impl WindowSpec {
    /// Number of samples a series of `n_months` yields.
    pub fn count(&self, n_months: usize) -> usize {
        let span = self.window_len + self.horizon;
        if n_months < span || self.stride == 0 {
            0
        } else {
            (n_months - span) / self.stride + 1
        }
    }
}

/// One training example: `window_len` months of inputs and the following
/// `horizon` months of SST.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `[window_len][channels][lat][lon]`.
    pub inputs: Tensor,
    /// `[horizon][lat][lon]`.
    pub targets: Tensor,
    /// First forecast month.
    pub anchor: TimeStamp,
    /// Month index of `anchor` within the source grids.
    pub origin: usize,
}

fn missing_as_zero(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v
    }
}

/// Slides a window over already-normalized `[time][lat][lon]` arrays.
///
/// `channels[0]` must be SST; it also supplies the targets. Missing values
/// enter the samples as 0.
pub fn build_windows(
    channels: &[&[f64]],
    n_lat: usize,
    n_lon: usize,
    start: TimeStamp,
    spec: WindowSpec,
) -> Result<Vec<WindowSample>> {
    if channels.is_empty() || channels.len() > 2 {
        return Err(Error::ShapeMismatch(format!("{} input channels, expected 1 or 2", channels.len())));
    }
    if spec.window_len == 0 || spec.horizon == 0 || spec.stride == 0 {
        return Err(Error::Config(format!("invalid window spec {spec:?}")));
    }
    let cells = n_lat * n_lon;
    let n_times = channels[0].len() / cells;
    if channels.iter().any(|c| c.len() != n_times * cells) || n_times * cells != channels[0].len() {
        return Err(Error::ShapeMismatch("channels differ in length".into()));
    }
    let needed = spec.window_len + spec.horizon;
    if n_times < needed {
        return Err(Error::TooShort {
            needed,
            got: n_times,
        });
    }
    let n_ch = channels.len();
    (0..spec.count(n_times))
        .map(|s| {
            let first = s * spec.stride;
            let origin = first + spec.window_len;
            let mut inputs = Vec::with_capacity(spec.window_len * n_ch * cells);
            for t in first..origin {
                for ch in channels {
                    inputs.extend(ch[t * cells..(t + 1) * cells].iter().map(|&v| missing_as_zero(v)));
                }
            }
            let targets = channels[0][origin * cells..(origin + spec.horizon) * cells]
                .iter()
                .map(|&v| missing_as_zero(v))
                .collect();
            Ok(WindowSample {
                inputs: Tensor::new(vec![spec.window_len, n_ch, n_lat, n_lon], inputs)?,
                targets: Tensor::new(vec![spec.horizon, n_lat, n_lon], targets)?,
                anchor: start.add_months(origin as i64),
                origin,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridAxes;
    use proptest::prelude::*;

    fn grid(values: Vec<f64>) -> SpatioTemporalGrid {
        let axes = GridAxes::regular(0.0, 1.0, 1, 0.0, 1.0, values.len()).unwrap();
        SpatioTemporalGrid::new(Variable::Sst, axes, TimeStamp::new(2000, 1).unwrap(), values).unwrap()
    }

    #[test]
    fn fit_examples() {
        let p = fit_minmax(&grid(vec![2.0, 3.0, 4.0])).unwrap();
        assert_eq!((p.min, p.max), (2.0, 4.0));
        let c = fit_minmax(&grid(vec![5.0; 3])).unwrap();
        assert_eq!((c.min, c.max), (5.0, 5.0));
        let h = fit_minmax(&grid(vec![f64::NAN, 3.0, f64::NAN, 1.0])).unwrap();
        assert_eq!((h.min, h.max), (1.0, 3.0));
        assert!(matches!(fit_minmax(&grid(vec![f64::NAN; 2])), Err(Error::AllMissing(_))));
    }

    #[test]
    fn normalize_examples() {
        let p = NormalizationParams {
            variable: Variable::Sst,
            min: 2.0,
            max: 4.0,
        };
        assert_eq!(p.normalize(2.0), 0.0);
        assert_eq!(p.normalize(4.0), 1.0);
        assert_eq!(p.normalize(3.0), 0.5);
        let d = NormalizationParams { min: 5.0, max: 5.0, ..p };
        assert_eq!(d.normalize(7.0), 0.0);
        assert_eq!(d.normalize(5.0), 0.0);

        let mut v = vec![1.0, 3.0, 5.0, f64::NAN];
        assert_eq!(p.normalize_slice(&mut v), 2);
        assert_eq!(&v[..3], &[0.0, 0.5, 1.0]);
        assert!(v[3].is_nan());
    }

    #[test]
    fn colormap_anchors_exact() {
        for (s, c) in COLORMAP_ANCHORS {
            assert_eq!(colormap(s), c);
        }
    }

    #[test]
    fn heatmap_examples() {
        let mid = render_heatmap(&[0.0; 6], 2, 3, (-2.0, 2.0), 3).unwrap();
        assert_eq!((mid.width, mid.height), (9, 6));
        assert!(mid.pixels.iter().all(|&p| p == [255, 255, 255]));

        let top = render_heatmap(&[2.0, f64::NAN], 2, 1, (-2.0, 2.0), 1).unwrap();
        // north (second latitude row) is drawn first
        assert_eq!(top.pixel(0, 0), MISSING_COLOR);
        assert_eq!(top.pixel(0, 1), [200, 0, 0]);

        assert!(matches!(render_heatmap(&[0.0], 1, 1, (1.0, 1.0), 1), Err(Error::BadScale(..))));
        assert!(render_heatmap(&[0.0; 3], 2, 2, (0.0, 1.0), 1).is_err());
    }

    #[test]
    fn ppm_and_png_encoding() {
        let img = render_heatmap(&[-1.0, 1.0], 1, 2, (-1.0, 1.0), 1).unwrap();
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&ppm[ppm.len() - 6..], &[48, 0, 96, 200, 0, 0]);
        let mut png_bytes = Vec::new();
        img.write_png_to(&mut png_bytes).unwrap();
        assert_eq!(&png_bytes[1..4], b"PNG");
    }

    #[test]
    fn window_counts() {
        let spec = WindowSpec::default();
        assert_eq!(spec.count(24), 6);
        assert_eq!(spec.count(19), 1);
        assert_eq!(WindowSpec { stride: 24, ..spec }.count(24), 1);
        assert_eq!(WindowSpec { window_len: 12, horizon: 7, stride: 19 }.count(19), 1);
    }

    #[test]
    fn windows_layout() {
        // 24 months, 1x2 cells, value encodes (t, cell)
        let sst: Vec<f64> = (0..48).map(|k| k as f64).collect();
        let ohc: Vec<f64> = (0..48).map(|k| -(k as f64)).collect();
        let start = TimeStamp::new(2000, 1).unwrap();
        let w = build_windows(&[&sst, &ohc], 1, 2, start, WindowSpec::default()).unwrap();
        assert_eq!(w.len(), 6);
        let s = &w[2];
        assert_eq!(s.inputs.shape(), &[12, 2, 1, 2]);
        assert_eq!(s.targets.shape(), &[7, 1, 2]);
        assert_eq!(s.origin, 14);
        assert_eq!(s.anchor, TimeStamp::new(2001, 3).unwrap());
        // first input month is t = 2: SST cells then OHC cells
        assert_eq!(&s.inputs.data()[..4], &[4.0, 5.0, -4.0, -5.0]);
        assert_eq!(&s.targets.data()[..2], &[28.0, 29.0]);

        assert!(matches!(
            build_windows(&[&sst[..36]], 1, 2, start, WindowSpec::default()),
            Err(Error::TooShort { needed: 19, got: 18 })
        ));
    }

    proptest! {
        #[test]
        fn denormalize_inverts(min in -50.0f64..50.0, width in 1e-3f64..100.0, frac in 0.0f64..=1.0) {
            let p = NormalizationParams { variable: Variable::Sst, min, max: min + width };
            let x = min + frac * width;
            let back = p.denormalize(p.normalize(x));
            prop_assert!((back - x).abs() <= 1e-12 * (1.0 + x.abs().max(width)));
        }

        #[test]
        fn colormap_upper_half_monotone(a in 0.5f64..=1.0, b in 0.5f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (c1, c2) = (colormap(lo), colormap(hi));
            // white -> yellow -> red: every channel is non-increasing
            for ch in 0..3 {
                prop_assert!(c1[ch] >= c2[ch]);
            }
        }

        #[test]
        fn colormap_lower_half_monotone(a in 0.0f64..=0.5, b in 0.0f64..=0.5) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (c1, c2) = (colormap(lo), colormap(hi));
            // violet -> blue -> white: green and blue never decrease
            prop_assert!(c1[1] <= c2[1] && c1[2] <= c2[2]);
        }

        #[test]
        fn windows_inputs_precede_targets(n in 19usize..40, w in 1usize..12, h in 1usize..8, stride in 1usize..5) {
            let spec = WindowSpec { window_len: w, horizon: h, stride };
            let v: Vec<f64> = (0..n).map(|k| k as f64).collect();
            let start = TimeStamp::new(2000, 1).unwrap();
            let samples = build_windows(&[&v], 1, 1, start, spec).unwrap();
            prop_assert_eq!(samples.len(), (n - w - h) / stride + 1);
            for s in &samples {
                let last_in = s.inputs.data().iter().copied().fold(f64::MIN, f64::max);
                let first_out = s.targets.data()[0];
                prop_assert!(last_in < first_out);
                prop_assert_eq!(first_out as usize, s.origin);
            }
        }
    }
}

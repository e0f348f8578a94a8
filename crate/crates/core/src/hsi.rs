//! Hyperspectral pixel clustering.
//!
//! Every pixel becomes a view: the span of the spectra in its `s_r×s_r`
//! neighborhood. Views are clustered with the scale-invariant formulation
//! whose orthogonality term and smoothness term act on spatially averaged
//! assignments `W_normᵀ C_norm`.
//!
//! On-disk cube format: a text header of `key=value` lines
//!
//! ```text
//! height=<H>
//! width=<W>
//! bands=<N>
//! dtype=f32le
//! layout=pixel-interleaved
//! data=<raw path relative to the header>
//! labels=<optional CSV path relative to the header>
//! ```
//!
//! The raw file holds `H·W·N` little-endian `f32` values, all bands of pixel
//! `(0,0)` first, then `(0,1)`, and so on. The label CSV has `H` rows of `W`
//! integers; `0` marks unlabeled pixels.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Result, ScosError};
use crate::eval::MetricsReport;
use crate::io::{read_bytes, read_text};
use crate::solver::{
    fit_with, ClusterModel, DualState, FitExtras, FitTrace, Formulation, Reg, SolverConfig,
    SpatialMix,
};
use crate::subspace::{truncated_basis, ViewBasis};

/// Relative singular-value threshold for pixel views.
pub const PIXEL_RANK_TOL: f64 = 1e-5;

/// `H×W×N` image with an optional label grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Pixel-interleaved values, length `H·W·N`.
    pub data: Vec<f32>,
    /// Row-major `H·W` labels, `0` for unlabeled.
    pub labels: Option<Vec<usize>>,
}

impl HyperCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * bands {
            return Err(ScosError::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{bands} cube",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ScosError::FormatError {
                offset: 4 * i as u64,
                msg: "non-finite sample".into(),
            });
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n_pixels() {
            return Err(ScosError::ShapeMismatch(format!(
                "{} labels for {} pixels",
                labels.len(),
                self.n_pixels()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let at = (row * self.width + col) * self.bands;
        &self.data[at..at + self.bands]
    }

    /// Copy with every sample multiplied by `s`.
    pub fn scaled(&self, s: f32) -> HyperCube {
        HyperCube {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }
}

fn header_value<'a>(text: &'a str, key: &str) -> Result<(&'a str, u64)> {
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if let Some((k, v)) = trimmed.split_once('=') {
            if k.trim() == key {
                return Ok((v.trim(), offset));
            }
        }
        offset += line.len() as u64;
    }
    Err(ScosError::FormatError {
        offset: text.len() as u64,
        msg: format!("header lacks `{key}`"),
    })
}

fn header_usize(text: &str, key: &str) -> Result<usize> {
    let (v, offset) = header_value(text, key)?;
    v.parse().map_err(|_| ScosError::FormatError {
        offset,
        msg: format!("`{key}` is not a nonnegative integer: {v:?}"),
    })
}

fn header_fixed(text: &str, key: &str, expected: &str) -> Result<()> {
    let (v, offset) = header_value(text, key)?;
    if v != expected {
        return Err(ScosError::FormatError {
            offset,
            msg: format!("`{key}` must be {expected}, got {v:?}"),
        });
    }
    Ok(())
}

fn sibling(header: &Path, rel: &str) -> PathBuf {
    header.parent().unwrap_or(Path::new(".")).join(rel)
}

/// Reads a cube (and its label grid, when the header names one).
pub fn load_cube(header_path: &Path) -> Result<HyperCube> {
    let text = read_text(header_path)?;
    let height = header_usize(&text, "height")?;
    let width = header_usize(&text, "width")?;
    let bands = header_usize(&text, "bands")?;
    header_fixed(&text, "dtype", "f32le")?;
    header_fixed(&text, "layout", "pixel-interleaved")?;
    let (data_rel, _) = header_value(&text, "data")?;
    let bytes = read_bytes(&sibling(header_path, data_rel))?;
    let expected = 4 * height * width * bands;
    if bytes.len() != expected {
        return Err(ScosError::FormatError {
            offset: bytes.len().min(expected) as u64,
            msg: format!("raw file has {} bytes, header implies {expected}", bytes.len()),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let cube = HyperCube::new(height, width, bands, data)?;
    match header_value(&text, "labels") {
        Ok((rel, _)) => {
            let grid = read_label_grid(&sibling(header_path, rel))?;
            if grid.height != height || grid.width != width {
                return Err(ScosError::ShapeMismatch(format!(
                    "label grid is {}x{}, cube is {height}x{width}",
                    grid.height, grid.width
                )));
            }
            cube.with_labels(grid.labels)
        }
        Err(_) => Ok(cube),
    }
}

/// Writes `<stem>.hdr`-style header at `header_path`, the raw samples next to
/// it as `<stem>.raw`, and labels as `<stem>_labels.csv` when present.
pub fn save_cube(header_path: &Path, cube: &HyperCube) -> Result<()> {
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| ScosError::InvalidArgument(format!("bad header path {header_path:?}")))?;
    let raw_name = format!("{stem}.raw");
    let mut header = format!(
        "height={}\nwidth={}\nbands={}\ndtype=f32le\nlayout=pixel-interleaved\ndata={raw_name}\n",
        cube.height, cube.width, cube.bands
    );
    let mut raw = Vec::with_capacity(4 * cube.data.len());
    for v in &cube.data {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(sibling(header_path, &raw_name), raw)?;
    if let Some(labels) = &cube.labels {
        let name = format!("{stem}_labels.csv");
        let grid = LabelGrid {
            height: cube.height,
            width: cube.width,
            labels: labels.clone(),
        };
        grid.write_csv(&sibling(header_path, &name))?;
        let _ = writeln!(header, "labels={name}");
    }
    std::fs::write(header_path, header)?;
    Ok(())
}

/// Row-major `H×W` grid of labels; `0` is unlabeled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
}

impl LabelGrid {
    pub fn get(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.labels.chunks(self.width.max(1)) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub fn read_label_grid(path: &Path) -> Result<LabelGrid> {
    let text = read_text(path)?;
    let mut labels = Vec::new();
    let mut width = None;
    let mut height = 0;
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let row: Vec<usize> = trimmed
                .split(',')
                .map(|c| c.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| ScosError::FormatError {
                    offset,
                    msg: "label grid entries must be nonnegative integers".into(),
                })?;
            if *width.get_or_insert(row.len()) != row.len() {
                return Err(ScosError::ShapeMismatch(format!(
                    "label row {height} has {} entries, expected {}",
                    row.len(),
                    width.unwrap_or(0)
                )));
            }
            labels.extend(row);
            height += 1;
        }
        offset += line.len() as u64;
    }
    Ok(LabelGrid {
        height,
        width: width.unwrap_or(0),
        labels,
    })
}

fn window(center: usize, len: usize, half: usize) -> std::ops::Range<usize> {
    center.saturating_sub(half)..(center + half + 1).min(len)
}

/// One view per pixel, in row-major order: the basis of the spectra in its
/// `s_r×s_r` window, truncated at the image border and to numerical rank.
pub fn pixel_views(cube: &HyperCube, s_r: usize) -> Result<Vec<ViewBasis>> {
    if s_r == 0 || s_r % 2 == 0 {
        return Err(ScosError::InvalidArgument(format!("s_r = {s_r} must be odd")));
    }
    if s_r * s_r >= cube.bands {
        return Err(ScosError::InvalidArgument(format!(
            "s_r^2 = {} must be below the band count {}",
            s_r * s_r,
            cube.bands
        )));
    }
    let half = s_r / 2;
    let views: Vec<(ViewBasis, usize)> = (0..cube.n_pixels())
        .into_par_iter()
        .map(|p| {
            let (row, col) = (p / cube.width, p % cube.width);
            let rows = window(row, cube.height, half);
            let cols = window(col, cube.width, half);
            let mut x = DMatrix::zeros(cube.bands, rows.len() * cols.len());
            let mut j = 0;
            for r in rows {
                for c in cols.clone() {
                    for (b, v) in cube.spectrum(r, c).iter().enumerate() {
                        x[(b, j)] = f64::from(*v);
                    }
                    j += 1;
                }
            }
            truncated_basis(&x, PIXEL_RANK_TOL)
        })
        .collect::<Result<_>>()?;
    let truncated = views.iter().filter(|(_, d)| *d > 0).count();
    if truncated > 0 {
        log::warn!("{truncated} pixel views truncated to their numerical rank");
    }
    Ok(views.into_iter().map(|(v, _)| v).collect())
}

/// Pixel neighborhoods on an `H×W` grid: pixel `i` is adjacent to `j` when it
/// lies in the `s_a×s_a` window centered at `j` (itself included).
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialAdjacency {
    pub height: usize,
    pub width: usize,
    /// `neighbors[j]`: row-major indices with `W_adj(i, j) = 1`, ascending.
    pub neighbors: Vec<Vec<usize>>,
    /// Column-stochastic `W_norm`.
    pub mix: SpatialMix,
}

impl SpatialAdjacency {
    pub fn n_pixels(&self) -> usize {
        self.neighbors.len()
    }

    pub fn nnz(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbors[j].binary_search(&i).is_ok()
    }
}

pub fn build_adjacency(height: usize, width: usize, s_a: usize) -> Result<SpatialAdjacency> {
    if s_a < 3 || s_a % 2 == 0 {
        return Err(ScosError::InvalidArgument(format!(
            "s_a = {s_a} must be odd and at least 3"
        )));
    }
    let half = s_a / 2;
    let mut neighbors = Vec::with_capacity(height * width);
    let mut cols = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            let mut idx = Vec::with_capacity(s_a * s_a);
            for r in window(row, height, half) {
                for c in window(col, width, half) {
                    idx.push(r * width + c);
                }
            }
            let w = 1.0 / idx.len() as f64;
            cols.push(idx.iter().map(|&i| (i, w)).collect());
            neighbors.push(idx);
        }
    }
    Ok(SpatialAdjacency {
        height,
        width,
        neighbors,
        mix: SpatialMix { cols },
    })
}

/// Value and gradient in `C` of the spatially mixed regularizer selected by
/// `config.formulation`. Under AugLagPsi the smoothness term
/// `⟨Λ_h, C_norm − W_normᵀC_norm⟩ + (ν/2)‖C_norm − W_normᵀC_norm‖_F²` is
/// included when `dual` carries `Λ_h` and `ν`.
pub fn hsi_regularizers(
    c: &DMatrix<f64>,
    adjacency: &SpatialAdjacency,
    dual: &DualState,
    config: &SolverConfig,
) -> Result<(f64, DMatrix<f64>)> {
    if c.nrows() != adjacency.n_pixels() {
        return Err(ScosError::DimensionMismatch(format!(
            "assignment has {} rows, adjacency has {} pixels",
            c.nrows(),
            adjacency.n_pixels()
        )));
    }
    Ok(Reg {
        formulation: config.formulation,
        epsilon: config.epsilon_psi,
        spatial: Some(&adjacency.mix),
    }
    .value_and_grad(c, dual))
}

#[derive(Clone, Debug)]
pub struct HsiFit {
    pub model: ClusterModel,
    /// Labels `1..=R` per pixel.
    pub grid: LabelGrid,
    pub trace: FitTrace,
}

/// Clusters the pixels of `cube` into `n_clusters` classes with subspace
/// dimensions `dims`. The formulation is always AugLagPsi.
pub fn fit_hsi(
    cube: &HyperCube,
    n_clusters: usize,
    dims: &[usize],
    s_r: usize,
    s_a: usize,
    config: &SolverConfig,
) -> Result<HsiFit> {
    let views = pixel_views(cube, s_r)?;
    let adjacency = build_adjacency(cube.height, cube.width, s_a)?;
    let config = SolverConfig {
        formulation: Formulation::AugLagPsi,
        ..config.clone()
    };
    let extras = FitExtras {
        spatial: Some(&adjacency.mix),
    };
    let (model, trace) = fit_with(&views, n_clusters, dims, &config, None, extras)?;
    let grid = LabelGrid {
        height: cube.height,
        width: cube.width,
        labels: model.labels().into_iter().map(|l| l + 1).collect(),
    };
    Ok(HsiFit { model, grid, trace })
}

/// Scores a predicted grid against ground truth on labeled pixels only.
pub fn score_grid(pred: &LabelGrid, truth: &[usize], wall_seconds: f64) -> Result<MetricsReport> {
    if truth.len() != pred.labels.len() {
        return Err(ScosError::LengthMismatch {
            left: pred.labels.len(),
            right: truth.len(),
        });
    }
    let (p, t): (Vec<usize>, Vec<usize>) = pred
        .labels
        .iter()
        .zip(truth)
        .filter(|(_, &t)| t != 0)
        .map(|(&p, &t)| (p, t))
        .unzip();
    MetricsReport::compute(&p, &t, wall_seconds)
}

/// `n_classes` vertical stripes of near-equal width, labeled `1..=n_classes`.
pub fn stripe_map(height: usize, width: usize, n_classes: usize) -> LabelGrid {
    let labels = (0..height * width)
        .map(|p| (p % width) * n_classes / width.max(1) + 1)
        .collect();
    LabelGrid {
        height,
        width,
        labels,
    }
}

/// Linear-mixing cube plus its clean signal and noise, in `f64`.
#[derive(Clone, Debug)]
pub struct SynthCube {
    pub cube: HyperCube,
    pub signal: Vec<f64>,
    pub noise: Vec<f64>,
}

/// Every pixel is a convex combination of its class's endmember spectra (drawn
/// uniformly from `[0, 1]` per band) plus Gaussian noise scaled to exactly
/// `noise_db` per-pixel SNR. `f64::INFINITY` disables noise.
pub fn synth_cube(
    class_map: &LabelGrid,
    endmembers_per_class: usize,
    bands: usize,
    noise_db: f64,
    seed: u64,
) -> Result<SynthCube> {
    if endmembers_per_class == 0 || bands == 0 {
        return Err(ScosError::InvalidArgument(
            "need at least one endmember and one band".into(),
        ));
    }
    if class_map.labels.len() != class_map.height * class_map.width {
        return Err(ScosError::ShapeMismatch("class map size".into()));
    }
    if noise_db.is_nan() || noise_db == f64::NEG_INFINITY {
        return Err(ScosError::InvalidArgument(format!("noise_db = {noise_db}")));
    }
    let n_classes = class_map.labels.iter().copied().max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let endmembers: Vec<DMatrix<f64>> = (0..n_classes)
        .map(|_| DMatrix::from_fn(bands, endmembers_per_class, |_, _| rng.random::<f64>()))
        .collect();
    let snr = 10f64.powf(noise_db / 10.0);
    let n_px = class_map.labels.len();
    let mut signal = Vec::with_capacity(n_px * bands);
    let mut noise = Vec::with_capacity(n_px * bands);
    for &label in &class_map.labels {
        if label == 0 {
            signal.extend(std::iter::repeat_n(0.0, bands));
            noise.extend(std::iter::repeat_n(0.0, bands));
            continue;
        }
        let weights: Vec<f64> = (0..endmembers_per_class)
            .map(|_| rng.random::<f64>() + 1e-3)
            .collect();
        let total: f64 = weights.iter().sum();
        let m = &endmembers[label - 1];
        let x: Vec<f64> = (0..bands)
            .map(|b| (0..endmembers_per_class).map(|e| m[(b, e)] * weights[e] / total).sum())
            .collect();
        let v: Vec<f64> = (0..bands).map(|_| StandardNormal.sample(&mut rng)).collect();
        let scale = if snr.is_infinite() {
            0.0
        } else {
            let px: f64 = x.iter().map(|a| a * a).sum();
            let pv: f64 = v.iter().map(|a| a * a).sum();
            (px / (snr * pv)).sqrt()
        };
        signal.extend_from_slice(&x);
        noise.extend(v.iter().map(|a| a * scale));
    }
    let data = signal.iter().zip(&noise).map(|(s, n)| (s + n) as f32).collect();
    let cube = HyperCube::new(class_map.height, class_map.width, bands, data)?
        .with_labels(class_map.labels.clone())?;
    Ok(SynthCube {
        cube,
        signal,
        noise,
    })
}

/// Fixed map palette; label `0` is black and label `l ≥ 1` uses entry
/// `1 + (l − 1) mod 15`.
pub const PALETTE: [[u8; 3]; 16] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [128, 0, 0],
    [255, 255, 255],
];

fn color_of(label: usize, palette: &[[u8; 3]]) -> [u8; 3] {
    if label == 0 {
        palette[0]
    } else {
        palette[1 + (label - 1) % (palette.len() - 1)]
    }
}

/// Binary PPM (P6) bytes of the grid.
pub fn render_map(grid: &LabelGrid, palette: &[[u8; 3]]) -> Result<Vec<u8>> {
    if palette.len() < 2 {
        return Err(ScosError::InvalidArgument("palette needs at least two colors".into()));
    }
    let mut out = format!("P6\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    for &l in &grid.labels {
        out.extend_from_slice(&color_of(l, palette));
    }
    Ok(out)
}

pub fn write_map(path: &Path, grid: &LabelGrid, palette: &[[u8; 3]]) -> Result<()> {
    std::fs::write(path, render_map(grid, palette)?)?;
    Ok(())
}

/// Inverse of [`render_map`] for grids whose labels do not exceed the
/// palette length.
pub fn parse_map(bytes: &[u8], palette: &[[u8; 3]]) -> Result<LabelGrid> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ScosError::FormatError {
                offset: pos as u64,
                msg: "truncated PPM header".into(),
            });
        }
        fields.push((std::str::from_utf8(&bytes[start..pos]).unwrap_or(""), start));
    }
    pos += 1;
    if fields[0].0 != "P6" || fields[3].0 != "255" {
        return Err(ScosError::FormatError {
            offset: 0,
            msg: "expected a P6 pixmap with maxval 255".into(),
        });
    }
    let dim = |i: usize| -> Result<usize> {
        fields[i].0.parse().map_err(|_| ScosError::FormatError {
            offset: fields[i].1 as u64,
            msg: "bad PPM dimension".into(),
        })
    };
    let (width, height) = (dim(1)?, dim(2)?);
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != 3 * width * height {
        return Err(ScosError::FormatError {
            offset: (pos + body.len().min(3 * width * height)) as u64,
            msg: format!("{} pixel bytes for a {width}x{height} map", body.len()),
        });
    }
    let labels = body
        .chunks_exact(3)
        .enumerate()
        .map(|(i, px)| {
            palette
                .iter()
                .position(|c| c == px)
                .ok_or_else(|| ScosError::FormatError {
                    offset: (pos + 3 * i) as u64,
                    msg: "color not in palette".into(),
                })
        })
        .collect::<Result<_>>()?;
    Ok(LabelGrid {
        height,
        width,
        labels,
    })
}

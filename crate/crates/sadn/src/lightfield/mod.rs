//! Light-field containers and the transforms between them.
//!
//! A lenslet image interleaves an `A x A` grid of viewpoints pixel by
//! pixel: each micro-image holds one spatial position seen from every
//! angle. The sub-aperture stack is the opposite grouping, one full image
//! per viewpoint. The two are connected by the index bijection
//! `view(u, v)[s, t] = lenslet[s*A + u, t*A + v]`, so converting either
//! way moves samples without touching their values. Epipolar-plane slices
//! cut across one angular and one spatial axis; scene depth shows up there
//! as the slope of lines, which [`estimate_epi_slope`] recovers.

pub mod synth;

pub use synth::{generate_lightfield, LayerSpec, MaskSpec, SceneSpec, TextureSpec};

use crate::autodiff::Tensor;
use crate::{Error, Result};

/// Raw plenoptic capture: micro-images tiled on the sensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LensletImage {
    a: usize,
    /// `[1, channels, height, width]`; both spatial extents divisible by `a`.
    data: Tensor,
}

impl LensletImage {
    pub fn new(a: usize, data: Tensor) -> Result<Self> {
        let [n, _, h, w] = data.shape();
        if a == 0 {
            return Err(Error::Config("angular resolution must be >= 1".into()));
        }
        if n != 1 {
            return Err(Error::Shape(format!("lenslet image wants batch 1, got {n}")));
        }
        if h % a != 0 || w % a != 0 {
            return Err(Error::Shape(format!(
                "lenslet extents {h}x{w} not divisible by angular resolution {a}"
            )));
        }
        Ok(LensletImage { a, data })
    }

    pub fn a(&self) -> usize {
        self.a
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    /// Regroups the interleaved viewpoints into a sub-aperture stack.
    pub fn to_views(&self) -> SaiStack {
        let a = self.a;
        let [_, c, h, w] = self.data.shape();
        let (vh, vw) = (h / a, w / a);
        let mut out = Tensor::zeros([a * a, c, vh, vw]);
        for u in 0..a {
            for v in 0..a {
                for ch in 0..c {
                    for s in 0..vh {
                        let src = self.data.row(0, ch, s * a + u);
                        let dst = out.row_mut(u * a + v, ch, s);
                        for (t, d) in dst.iter_mut().enumerate() {
                            *d = src[t * a + v];
                        }
                    }
                }
            }
        }
        SaiStack { a, data: out }
    }

    /// Keeps only the central `a_keep x a_keep` viewpoints, trimming the
    /// same number of angular rows and columns from each border.
    pub fn crop_central(&self, a_keep: usize) -> Result<LensletImage> {
        if a_keep == 0 || a_keep > self.a {
            return Err(Error::Config(format!(
                "cannot keep {a_keep} of {} angular samples",
                self.a
            )));
        }
        let off = (self.a - a_keep) / 2;
        let [_, c, h, w] = self.data.shape();
        let (vh, vw) = (h / self.a, w / self.a);
        let mut out = Tensor::zeros([1, c, vh * a_keep, vw * a_keep]);
        for ch in 0..c {
            for s in 0..vh {
                for u in 0..a_keep {
                    let src = self.data.row(0, ch, s * self.a + u + off);
                    let dst = out.row_mut(0, ch, s * a_keep + u);
                    for t in 0..vw {
                        for v in 0..a_keep {
                            dst[t * a_keep + v] = src[t * self.a + v + off];
                        }
                    }
                }
            }
        }
        LensletImage::new(a_keep, out)
    }

    /// Cuts the image into non-overlapping square tiles, row-major,
    /// discarding any ragged border. The tile edge must be a multiple of
    /// the angular resolution so each tile stays a valid lenslet image.
    pub fn extract_patches(&self, patch: usize) -> Result<Vec<LensletImage>> {
        if patch == 0 || patch % self.a != 0 {
            return Err(Error::Config(format!(
                "patch edge {patch} must be a positive multiple of a={}",
                self.a
            )));
        }
        let [_, c, h, w] = self.data.shape();
        let (rows, cols) = (h / patch, w / patch);
        let mut out = Vec::with_capacity(rows * cols);
        for pi in 0..rows {
            for pj in 0..cols {
                let mut t = Tensor::zeros([1, c, patch, patch]);
                for ch in 0..c {
                    for i in 0..patch {
                        let src = self.data.row(0, ch, pi * patch + i);
                        t.row_mut(0, ch, i)
                            .copy_from_slice(&src[pj * patch..(pj + 1) * patch]);
                    }
                }
                out.push(LensletImage::new(self.a, t)?);
            }
        }
        Ok(out)
    }
}

/// One full image per viewpoint, batch index `u*A + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaiStack {
    a: usize,
    /// `[a*a, channels, view_height, view_width]`
    data: Tensor,
}

impl SaiStack {
    pub fn new(a: usize, data: Tensor) -> Result<Self> {
        if a == 0 {
            return Err(Error::Config("angular resolution must be >= 1".into()));
        }
        let n = data.shape()[0];
        if n != a * a {
            return Err(Error::Shape(format!("stack wants {} views, got {n}", a * a)));
        }
        Ok(SaiStack { a, data })
    }

    pub fn a(&self) -> usize {
        self.a
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn view_height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn view_width(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    /// Copies out the view at angular position `(u, v)` as `[1, c, h, w]`.
    pub fn view(&self, u: usize, v: usize) -> Result<Tensor> {
        if u >= self.a || v >= self.a {
            return Err(Error::Index(format!("view ({u}, {v}) outside {0}x{0} grid", self.a)));
        }
        let [_, c, h, w] = self.data.shape();
        let mut out = Tensor::zeros([1, c, h, w]);
        for ch in 0..c {
            for s in 0..h {
                out.row_mut(0, ch, s)
                    .copy_from_slice(self.data.row(u * self.a + v, ch, s));
            }
        }
        Ok(out)
    }

    /// Interleaves the views back into a lenslet image; exact inverse of
    /// [`LensletImage::to_views`].
    pub fn to_lenslet(&self) -> LensletImage {
        let a = self.a;
        let [_, c, vh, vw] = self.data.shape();
        let mut out = Tensor::zeros([1, c, vh * a, vw * a]);
        for u in 0..a {
            for v in 0..a {
                for ch in 0..c {
                    for s in 0..vh {
                        let src = self.data.row(u * a + v, ch, s);
                        let dst = out.row_mut(0, ch, s * a + u);
                        for (t, &x) in src.iter().enumerate() {
                            dst[t * a + v] = x;
                        }
                    }
                }
            }
        }
        LensletImage { a, data: out }
    }

    /// Slice across the horizontal axes: rows run over the angular column
    /// `v`, columns over the spatial column `t`, at fixed `(u, s)`.
    pub fn epi_horizontal(&self, u: usize, s: usize, channel: usize) -> Result<Epi> {
        let [_, c, h, w] = self.data.shape();
        if u >= self.a || s >= h || channel >= c {
            return Err(Error::Index(format!("EPI slice (u={u}, s={s}, ch={channel}) out of range")));
        }
        let mut rows = Vec::with_capacity(self.a);
        for v in 0..self.a {
            rows.extend_from_slice(self.data.row(u * self.a + v, channel, s));
        }
        Epi::new(self.a, w, rows)
    }

    /// Slice across the vertical axes: rows run over the angular row `u`,
    /// columns over the spatial row `s`, at fixed `(v, t)`.
    pub fn epi_vertical(&self, v: usize, t: usize, channel: usize) -> Result<Epi> {
        let [_, c, h, w] = self.data.shape();
        if v >= self.a || t >= w || channel >= c {
            return Err(Error::Index(format!("EPI slice (v={v}, t={t}, ch={channel}) out of range")));
        }
        let mut rows = Vec::with_capacity(self.a * h);
        for u in 0..self.a {
            for s in 0..h {
                rows.push(self.data[[u * self.a + v, channel, s, t]]);
            }
        }
        Epi::new(self.a, h, rows)
    }
}

/// A single epipolar-plane slice: `rows` angular positions by `cols`
/// spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Epi {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Epi {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "EPI wants {rows}x{cols} = {} samples, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Epi { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Best integer alignment of `next` against `prev` within `[-max_lag,
/// max_lag]`, by cosine similarity over the overlapping span. Ties prefer
/// the smaller magnitude. `None` when either row has no energy.
fn best_lag(prev: &[f64], next: &[f64], max_lag: usize) -> Option<i64> {
    let n = prev.len() as i64;
    let mut best: Option<(f64, i64)> = None;
    for lag in -(max_lag as i64)..=max_lag as i64 {
        // next[t] pairs with prev[t + lag]
        let t0 = (-lag).max(0);
        let t1 = (n - lag).min(n);
        if t1 - t0 < 2 {
            continue;
        }
        let (mut dot, mut ea, mut eb) = (0.0, 0.0, 0.0);
        for t in t0..t1 {
            let x = next[t as usize];
            let y = prev[(t + lag) as usize];
            dot += x * y;
            ea += x * x;
            eb += y * y;
        }
        if ea <= 0.0 || eb <= 0.0 {
            continue;
        }
        let score = dot / (ea.sqrt() * eb.sqrt());
        let better = match best {
            None => true,
            Some((s, l)) => {
                score > s + 1e-12 || (score > s - 1e-12 && lag.abs() < l.abs())
            }
        };
        if better {
            best = Some((score, lag));
        }
    }
    best.map(|(_, lag)| lag)
}

/// Recovers the dominant line slope of an EPI, in pixels of spatial shift
/// per angular step, as the median over consecutive-row correlation peaks.
pub fn estimate_epi_slope(epi: &Epi, max_lag: usize) -> Result<i64> {
    if epi.rows() < 2 {
        return Err(Error::Shape("EPI slope needs at least two angular rows".into()));
    }
    let mut lags = Vec::new();
    for r in 0..epi.rows() - 1 {
        if let Some(lag) = best_lag(epi.row(r), epi.row(r + 1), max_lag) {
            lags.push(lag);
        }
    }
    if lags.is_empty() {
        return Err(Error::Numeric("EPI carries no texture to correlate".into()));
    }
    lags.sort_unstable();
    Ok(lags[lags.len() / 2])
}

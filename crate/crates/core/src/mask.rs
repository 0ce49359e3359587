//! 2-D truth masks and the spatial kernels that operate on them.
//!
//! A [`TruthMask`] is a row-major `H×W` grid of truth degrees. Pixel indices
//! `(i, j)` map to the point `(i + 0.5, j + 0.5)`, i.e. coordinates refer to
//! pixel centers. All kernels are pure functions of immutable masks.

use crate::logic::{ExistsMode, LogicError, LogicSystem, TruthValue};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask shape {0}x{1} must have positive area")]
    EmptyShape(usize, usize),
    #[error("data length {len} does not match shape {height}x{width}")]
    DataLength {
        len: usize,
        height: usize,
        width: usize,
    },
    #[error("cell ({row}, {col}) holds {value} outside [0, 1]")]
    CellOutOfRange { row: usize, col: usize, value: f64 },
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("upscale target {th}x{tw} is smaller than source {sh}x{sw}; use downscale_maxpool")]
    UpscaleShrinks {
        sh: usize,
        sw: usize,
        th: usize,
        tw: usize,
    },
    #[error("downscale {sh}x{sw} -> {th}x{tw} has non-integer block size; upscale the other mask instead")]
    NonIntegerBlock {
        sh: usize,
        sw: usize,
        th: usize,
        tw: usize,
    },
    #[error("kernel size {0} must be odd and positive")]
    BadKernelSize(usize),
    #[error("gaussian close-by needs sigma > 0 and finite, got {0}")]
    BadSigma(f64),
    #[error("gaussian close-by without a window radius has unbounded support")]
    UnboundedSupport,
    #[error("resolution mismatch {0}x{1} vs {2}x{3}: insert an explicit scaling step")]
    ResolutionMismatch(usize, usize, usize, usize),
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error(transparent)]
    Logic(#[from] LogicError),
}

/// Axis-aligned box in pixel coordinates with an objectness score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub score: TruthValue,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64, score: TruthValue) -> Result<Self, MaskError> {
        if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) {
            return Err(MaskError::InvalidBox("non-finite coordinate".into()));
        }
        if x0 >= x1 || y0 >= y1 {
            return Err(MaskError::InvalidBox(format!(
                "requires x0 < x1 and y0 < y1, got ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        Ok(BoundingBox { x0, y0, x1, y1, score })
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Box with coordinates multiplied by `(sy, sx)`.
    pub fn scaled(&self, sy: f64, sx: f64) -> BoundingBox {
        BoundingBox {
            x0: self.x0 * sx,
            y0: self.y0 * sy,
            x1: self.x1 * sx,
            y1: self.y1 * sy,
            score: self.score,
        }
    }

    /// Half-open pixel index ranges `(rows, cols)` of the centers inside the
    /// box, clipped to `shape`.
    pub fn pixel_ranges(&self, shape: (usize, usize)) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (h, w) = shape;
        // Center i + 0.5 lies in [y0, y1) iff ceil(y0 - 0.5) <= i < ceil(y1 - 0.5).
        let clamp = |v: f64, hi: usize| -> usize {
            if v <= 0.0 {
                0
            } else if v >= hi as f64 {
                hi
            } else {
                v as usize
            }
        };
        let r0 = clamp((self.y0 - 0.5).ceil(), h);
        let r1 = clamp((self.y1 - 0.5).ceil(), h);
        let c0 = clamp((self.x0 - 0.5).ceil(), w);
        let c1 = clamp((self.x1 - 0.5).ceil(), w);
        (r0..r1.max(r0), c0..c1.max(c0))
    }
}

/// Row-major grid of truth values.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthMask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl TruthMask {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, MaskError> {
        if height == 0 || width == 0 {
            return Err(MaskError::EmptyShape(height, width));
        }
        if data.len() != height * width {
            return Err(MaskError::DataLength {
                len: data.len(),
                height,
                width,
            });
        }
        for (idx, &v) in data.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(MaskError::CellOutOfRange {
                    row: idx / width,
                    col: idx % width,
                    value: v,
                });
            }
        }
        Ok(TruthMask {
            height,
            width,
            data,
        })
    }

    /// Skips validation; callers must guarantee values in [0, 1].
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        TruthMask {
            height,
            width,
            data,
        }
    }

    pub fn constant(height: usize, width: usize, value: TruthValue) -> Result<Self, MaskError> {
        if height == 0 || width == 0 {
            return Err(MaskError::EmptyShape(height, width));
        }
        Ok(TruthMask::from_raw(
            height,
            width,
            vec![value.value(); height * width],
        ))
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self, MaskError> {
        TruthMask::constant(height, width, TruthValue::FALSE)
    }

    pub fn ones(height: usize, width: usize) -> Result<Self, MaskError> {
        TruthMask::constant(height, width, TruthValue::TRUE)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, MaskError> {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        TruthMask::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // area is always positive by construction
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn get(&self, row: usize, col: usize) -> TruthValue {
        TruthValue::new(self.at(row, col)).expect("mask invariant")
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> TruthMask {
        TruthMask::from_raw(
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub(crate) fn zip_map(
        &self,
        other: &TruthMask,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<TruthMask, MaskError> {
        if self.shape() != other.shape() {
            return Err(MaskError::ShapeMismatch(
                self.height,
                self.width,
                other.height,
                other.width,
            ));
        }
        Ok(TruthMask::from_raw(
            self.height,
            self.width,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// Elementwise negation.
    pub fn neg(&self, logic: &LogicSystem) -> TruthMask {
        self.map(|v| logic.neg_raw(v))
    }

    /// Elementwise conjunction.
    pub fn conj(&self, other: &TruthMask, logic: &LogicSystem) -> Result<TruthMask, MaskError> {
        self.zip_map(other, |a, b| logic.conj_raw(a, b))
    }

    /// Elementwise disjunction.
    pub fn disj(&self, other: &TruthMask, logic: &LogicSystem) -> Result<TruthMask, MaskError> {
        self.zip_map(other, |a, b| logic.disj_raw(a, b))
    }

    /// Elementwise implication in the logic's configured style.
    pub fn implies(&self, other: &TruthMask, logic: &LogicSystem) -> Result<TruthMask, MaskError> {
        self.zip_map(other, |a, b| logic.implies_raw(a, b))
    }

    /// ∀ reduction over every cell.
    pub fn reduce_forall(&self, logic: &LogicSystem) -> TruthValue {
        TruthValue::new(logic.reduce_forall_raw(self.data.iter().copied())).expect("in range")
    }

    /// ∃ reduction over every cell.
    pub fn reduce_exists(&self, logic: &LogicSystem) -> TruthValue {
        TruthValue::new(logic.reduce_exists_raw(self.data.iter().copied())).expect("in range")
    }

    pub fn count(&self, pred: impl Fn(f64) -> bool) -> usize {
        self.data.iter().filter(|&&v| pred(v)).count()
    }
}

/// Cell ← 1 if cell ≥ t else 0.
pub fn binarize(m: &TruthMask, t: TruthValue) -> TruthMask {
    let t = t.value();
    m.map(|v| if v >= t { 1.0 } else { 0.0 })
}

/// Cells strictly below the threshold become 0; others are unchanged.
pub fn denoise(m: &TruthMask, t_denoise: TruthValue) -> TruthMask {
    let t = t_denoise.value();
    m.map(|v| if v < t { 0.0 } else { v })
}

/// Rasterizes boxes into a mask: pixels whose centers fall inside a box get
/// the box score (or `constant_score` when given, e.g. 1 for ground truth);
/// overlaps are combined with the family's disjunction.
pub fn boxes_to_mask(
    boxes: &[BoundingBox],
    shape: (usize, usize),
    logic: &LogicSystem,
    constant_score: Option<TruthValue>,
) -> Result<TruthMask, MaskError> {
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(MaskError::EmptyShape(h, w));
    }
    let mut data = vec![0.0f64; h * w];
    let mut covered = vec![false; h * w];
    for b in boxes {
        let score = constant_score.unwrap_or(b.score).value();
        let (rows, cols) = b.pixel_ranges(shape);
        for i in rows {
            for j in cols.clone() {
                let idx = i * w + j;
                if covered[idx] {
                    data[idx] = logic.disj_raw(data[idx], score);
                } else {
                    data[idx] = score;
                    covered[idx] = true;
                }
            }
        }
    }
    Ok(TruthMask::from_raw(h, w, data))
}

/// Bilinear interpolation on pixel-center coordinates, clamped at borders.
/// Constants are preserved exactly.
pub fn upscale_bilinear(m: &TruthMask, shape: (usize, usize)) -> Result<TruthMask, MaskError> {
    let (th, tw) = shape;
    let (sh, sw) = m.shape();
    if th == 0 || tw == 0 {
        return Err(MaskError::EmptyShape(th, tw));
    }
    if th < sh || tw < sw {
        return Err(MaskError::UpscaleShrinks { sh, sw, th, tw });
    }
    if (th, tw) == (sh, sw) {
        return Ok(m.clone());
    }
    let scale_y = sh as f64 / th as f64;
    let scale_x = sw as f64 / tw as f64;
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let mut data = Vec::with_capacity(th * tw);
    for ti in 0..th {
        let y = (ti as f64 + 0.5) * scale_y - 0.5;
        let y0 = y.floor();
        let ty = y - y0;
        let r0 = (y0.max(0.0) as usize).min(sh - 1);
        let r1 = ((y0 + 1.0).max(0.0) as usize).min(sh - 1);
        for tj in 0..tw {
            let x = (tj as f64 + 0.5) * scale_x - 0.5;
            let x0 = x.floor();
            let tx = x - x0;
            let c0 = (x0.max(0.0) as usize).min(sw - 1);
            let c1 = ((x0 + 1.0).max(0.0) as usize).min(sw - 1);
            let top = lerp(m.at(r0, c0), m.at(r0, c1), tx);
            let bottom = lerp(m.at(r1, c0), m.at(r1, c1), tx);
            data.push(lerp(top, bottom, ty).clamp(0.0, 1.0));
        }
    }
    Ok(TruthMask::from_raw(th, tw, data))
}

/// Block maximum; requires source dims to be integer multiples of the target.
pub fn downscale_maxpool(m: &TruthMask, shape: (usize, usize)) -> Result<TruthMask, MaskError> {
    let (th, tw) = shape;
    let (sh, sw) = m.shape();
    if th == 0 || tw == 0 {
        return Err(MaskError::EmptyShape(th, tw));
    }
    if th > sh || tw > sw || sh % th != 0 || sw % tw != 0 {
        return Err(MaskError::NonIntegerBlock { sh, sw, th, tw });
    }
    let by = sh / th;
    let bx = sw / tw;
    let mut data = Vec::with_capacity(th * tw);
    for ti in 0..th {
        for tj in 0..tw {
            let mut acc = 0.0f64;
            for i in ti * by..(ti + 1) * by {
                for j in tj * bx..(tj + 1) * bx {
                    acc = acc.max(m.at(i, j));
                }
            }
            data.push(acc);
        }
    }
    Ok(TruthMask::from_raw(th, tw, data))
}

/// Spatial close-by relation between pixel centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CloseByParams {
    /// `CloseBy(a, b) = 1` iff `a ≡ b` (the σ = 0 case).
    Trivial,
    /// Gaussian radial falloff `exp(-‖Δ‖₂²/(2σ²))` inside the L1 window of
    /// half-size `r`, with values below `low_cut` set to 0. Without `r` the
    /// support is unbounded and the relation cannot be windowed.
    Gaussian {
        sigma: f64,
        r: Option<usize>,
        low_cut: f64,
    },
    /// Binary L1 proximity: 1 iff `‖Δ‖₁ ≤ r`.
    L1Window { r: usize },
}

impl CloseByParams {
    pub const DEFAULT_LOW_CUT: f64 = 0.1;

    pub fn gaussian(sigma: f64, r: Option<usize>, low_cut: f64) -> Result<Self, MaskError> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(MaskError::BadSigma(sigma));
        }
        if sigma == 0.0 {
            return Ok(CloseByParams::Trivial);
        }
        Ok(CloseByParams::Gaussian { sigma, r, low_cut })
    }

    /// Derives `r = (ksize - 1) / 2` from an odd kernel size.
    pub fn l1_from_ksize(ksize: usize) -> Result<Self, MaskError> {
        if ksize == 0 || ksize % 2 == 0 {
            return Err(MaskError::BadKernelSize(ksize));
        }
        Ok(CloseByParams::L1Window { r: (ksize - 1) / 2 })
    }

    /// Window half-size outside which the relation vanishes, when finite.
    pub fn window_radius(&self) -> Option<usize> {
        match self {
            CloseByParams::Trivial => Some(0),
            CloseByParams::Gaussian { r, .. } => *r,
            CloseByParams::L1Window { r } => Some(*r),
        }
    }

    /// Whether the relation only takes values in {0, 1}.
    pub fn is_binary(&self) -> bool {
        !matches!(self, CloseByParams::Gaussian { .. })
    }

    /// Relation value for the center offset `(dy, dx)`.
    pub fn weight(&self, dy: f64, dx: f64) -> f64 {
        match *self {
            CloseByParams::Trivial => {
                if dy == 0.0 && dx == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            CloseByParams::Gaussian { sigma, r, low_cut } => {
                if let Some(r) = r {
                    if dy.abs() + dx.abs() > r as f64 {
                        return 0.0;
                    }
                }
                let w = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
                if w < low_cut {
                    0.0
                } else {
                    w
                }
            }
            CloseByParams::L1Window { r } => {
                if dy.abs() + dx.abs() <= r as f64 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Dense `(2r+1)×(2r+1)` window of close-by weights around the center.
#[derive(Debug, Clone, PartialEq)]
pub struct CloseByKernel {
    r: usize,
    weights: Vec<f64>,
}

impl CloseByKernel {
    pub fn radius(&self) -> usize {
        self.r
    }

    pub fn size(&self) -> usize {
        2 * self.r + 1
    }

    #[inline]
    pub fn weight_at(&self, dy: isize, dx: isize) -> f64 {
        let k = self.size() as isize;
        let i = dy + self.r as isize;
        let j = dx + self.r as isize;
        self.weights[(i * k + j) as usize]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Materializes the close-by window; errors if the support is unbounded.
pub fn closeby_kernel(params: &CloseByParams) -> Result<CloseByKernel, MaskError> {
    if let CloseByParams::Gaussian { sigma, .. } = params {
        if !sigma.is_finite() || *sigma <= 0.0 {
            return Err(MaskError::BadSigma(*sigma));
        }
    }
    let r = params.window_radius().ok_or(MaskError::UnboundedSupport)?;
    let k = 2 * r + 1;
    let mut weights = Vec::with_capacity(k * k);
    for dy in -(r as isize)..=(r as isize) {
        for dx in -(r as isize)..=(r as isize) {
            weights.push(params.weight(dy as f64, dx as f64));
        }
    }
    Ok(CloseByKernel { r, weights })
}

/// Windowed evaluation of `p ↦ ∃q: mask(q) ∧ CloseBy(p, q)`.
///
/// With an exists mode defined from max or a t-conorm, cells outside the
/// window contribute the neutral 0 and the reduction runs over the window
/// alone. With the mean mode, the reduction divides by the number of pixels
/// in the whole mask, matching the all-pairs definition exactly.
pub fn close_to_a(
    q_mask: &TruthMask,
    params: &CloseByParams,
    logic: &LogicSystem,
    out_shape: (usize, usize),
) -> Result<TruthMask, MaskError> {
    if out_shape != q_mask.shape() {
        return Err(MaskError::ResolutionMismatch(
            out_shape.0,
            out_shape.1,
            q_mask.height(),
            q_mask.width(),
        ));
    }
    let kernel = closeby_kernel(params)?;
    Ok(close_to_a_windowed(q_mask, &kernel, logic))
}

pub(crate) fn close_to_a_windowed(
    q_mask: &TruthMask,
    kernel: &CloseByKernel,
    logic: &LogicSystem,
) -> TruthMask {
    let (h, w) = q_mask.shape();
    let r = kernel.radius() as isize;
    let n_q = q_mask.len() as f64;
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0f64;
            for dy in -r..=r {
                let qi = i + dy;
                if qi < 0 || qi >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let qj = j + dx;
                    if qj < 0 || qj >= w as isize {
                        continue;
                    }
                    let wgt = kernel.weight_at(dy, dx);
                    let f = logic.conj_raw(q_mask.at(qi as usize, qj as usize), wgt);
                    acc = match logic.exists_mode {
                        ExistsMode::GoedelMax => acc.max(f),
                        ExistsMode::TconormReduce => logic.disj_raw(acc, f),
                        ExistsMode::Mean => acc + f,
                    };
                }
            }
            if logic.exists_mode == ExistsMode::Mean {
                acc /= n_q;
            }
            data.push(acc);
        }
    }
    TruthMask::from_raw(h, w, data)
}

/// All-pairs evaluation of `p ↦ ∃q: mask(q) ∧ CloseBy(p, q)`; the fallback
/// when the relation has no finite window. Quadratic in the pixel count.
pub fn close_to_a_all_pairs(
    q_mask: &TruthMask,
    params: &CloseByParams,
    logic: &LogicSystem,
    out_shape: (usize, usize),
) -> Result<TruthMask, MaskError> {
    if out_shape != q_mask.shape() {
        return Err(MaskError::ResolutionMismatch(
            out_shape.0,
            out_shape.1,
            q_mask.height(),
            q_mask.width(),
        ));
    }
    let (h, w) = q_mask.shape();
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let values = (0..h).flat_map(|qi| {
                (0..w).map(move |qj| {
                    let wgt = params.weight(qi as f64 - i as f64, qj as f64 - j as f64);
                    logic.conj_raw(q_mask.at(qi, qj), wgt)
                })
            });
            data.push(logic.reduce_exists_raw(values));
        }
    }
    Ok(TruthMask::from_raw(h, w, data))
}

/// Stride-1 mean over a `ksize×ksize` window, averaging over in-bounds cells
/// only so border scores are not spuriously lowered by padding.
pub fn avg_pool(m: &TruthMask, ksize: usize) -> Result<TruthMask, MaskError> {
    if ksize == 0 || ksize % 2 == 0 {
        return Err(MaskError::BadKernelSize(ksize));
    }
    let (h, w) = m.shape();
    let r = (ksize - 1) / 2;
    // Summed-area table with a zero border row/column.
    let mut integral = vec![0.0f64; (h + 1) * (w + 1)];
    for i in 0..h {
        for j in 0..w {
            integral[(i + 1) * (w + 1) + (j + 1)] = m.at(i, j)
                + integral[i * (w + 1) + (j + 1)]
                + integral[(i + 1) * (w + 1) + j]
                - integral[i * (w + 1) + j];
        }
    }
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h {
        let r0 = i.saturating_sub(r);
        let r1 = (i + r).min(h - 1);
        for j in 0..w {
            let c0 = j.saturating_sub(r);
            let c1 = (j + r).min(w - 1);
            let sum = integral[(r1 + 1) * (w + 1) + (c1 + 1)]
                - integral[r0 * (w + 1) + (c1 + 1)]
                - integral[(r1 + 1) * (w + 1) + c0]
                + integral[r0 * (w + 1) + c0];
            let count = ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
            data.push((sum / count).clamp(0.0, 1.0));
        }
    }
    Ok(TruthMask::from_raw(h, w, data))
}

/// Neighborhood-condition variants for down-weighting isolated pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NbCondMode {
    /// `∀q ∈ Nbh(p): M(q)`; with a mean ∀ and a binary window this is
    /// exactly [`avg_pool`].
    AllNeighbors,
    /// `M(p) ∧ ∃q ≠ p close by: M(q)`.
    AnyOtherNeighbor,
}

/// Applies the neighborhood condition per pixel.
///
/// For `AllNeighbors` with a binary relation, the neighborhood is the full
/// square window of size `2r+1` (the square `Nbh` that makes the mean-∀ form
/// an average pooling); with a gaussian relation the body is the implication
/// `CloseBy(p, q) → M(q)` over the relation's support. For
/// `AnyOtherNeighbor` with a mean ∃, the division is by `#P − 1`, the size
/// of the punctured all-pairs domain.
pub fn nb_cond(
    m: &TruthMask,
    mode: NbCondMode,
    params: &CloseByParams,
    logic: &LogicSystem,
) -> Result<TruthMask, MaskError> {
    let kernel = closeby_kernel(params)?;
    let binary = params.is_binary();
    let (h, w) = m.shape();
    let r = kernel.radius() as isize;
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h as isize {
        for j in 0..w as isize {
            let center = m.at(i as usize, j as usize);
            let out = match mode {
                NbCondMode::AllNeighbors => {
                    let values = window_cells(h, w, i, j, r).filter_map(|(qi, qj, dy, dx)| {
                        if binary {
                            return Some(m.at(qi, qj));
                        }
                        let wgt = kernel.weight_at(dy, dx);
                        if wgt == 0.0 {
                            return None;
                        }
                        Some(logic.implies_raw(wgt, m.at(qi, qj)))
                    });
                    logic.reduce_forall_raw(values)
                }
                NbCondMode::AnyOtherNeighbor => {
                    let values = window_cells(h, w, i, j, r).filter_map(|(qi, qj, dy, dx)| {
                        if dy == 0 && dx == 0 {
                            return None;
                        }
                        let wgt = kernel.weight_at(dy, dx);
                        Some(logic.conj_raw(wgt, m.at(qi, qj)))
                    });
                    let exists = match logic.exists_mode {
                        ExistsMode::Mean => {
                            let sum: f64 = values.sum();
                            sum / (m.len() as f64 - 1.0).max(1.0)
                        }
                        _ => logic.reduce_exists_raw(values),
                    };
                    logic.conj_raw(center, exists)
                }
            };
            data.push(out);
        }
    }
    Ok(TruthMask::from_raw(h, w, data))
}

fn window_cells(
    h: usize,
    w: usize,
    i: isize,
    j: isize,
    r: isize,
) -> impl Iterator<Item = (usize, usize, isize, isize)> {
    (-r..=r).flat_map(move |dy| {
        (-r..=r).filter_map(move |dx| {
            let qi = i + dy;
            let qj = j + dx;
            if qi < 0 || qi >= h as isize || qj < 0 || qj >= w as isize {
                None
            } else {
                Some((qi as usize, qj as usize, dy, dx))
            }
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{ForallMode, LogicFamily, TruthValue};

    fn tv(v: f64) -> TruthValue {
        TruthValue::new(v).unwrap()
    }

    fn mask(h: usize, w: usize, data: &[f64]) -> TruthMask {
        TruthMask::new(h, w, data.to_vec()).unwrap()
    }

    #[test]
    fn construction_validates() {
        assert!(matches!(
            TruthMask::new(0, 3, vec![]),
            Err(MaskError::EmptyShape(0, 3))
        ));
        assert!(matches!(
            TruthMask::new(1, 2, vec![0.5]),
            Err(MaskError::DataLength { .. })
        ));
        assert!(matches!(
            TruthMask::new(1, 2, vec![0.5, 1.2]),
            Err(MaskError::CellOutOfRange { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn binarize_uses_geq() {
        let m = mask(1, 3, &[0.4, 0.5, 0.6]);
        let b = binarize(&m, tv(0.5));
        assert_eq!(b.values(), &[0.0, 1.0, 1.0]);
        assert_eq!(binarize(&mask(1, 1, &[0.9]), tv(0.9)).values(), &[1.0]);
        let zeros = TruthMask::zeros(2, 2).unwrap();
        assert_eq!(binarize(&zeros, tv(0.1)).values(), &[0.0; 4]);
    }

    #[test]
    fn denoise_zeroes_strictly_below() {
        let m = mask(1, 3, &[0.004, 0.005, 0.9]);
        let d = denoise(&m, tv(0.005));
        assert_eq!(d.values(), &[0.0, 0.005, 0.9]);
        // Idempotent, identity at zero threshold, no-op on binary masks.
        assert_eq!(denoise(&d, tv(0.005)).values(), d.values());
        assert_eq!(denoise(&mask(1, 1, &[0.001]), tv(0.0)).values(), &[0.001]);
        let binary = mask(1, 2, &[0.0, 1.0]);
        assert_eq!(denoise(&binary, tv(0.005)).values(), binary.values());
    }

    #[test]
    fn boxes_to_mask_single_and_overlap() {
        let g = LogicSystem::new(LogicFamily::Goedel);
        let b = BoundingBox::new(0.0, 0.0, 2.0, 1.0, tv(0.8)).unwrap();
        let m = boxes_to_mask(&[b], (2, 2), &g, None).unwrap();
        assert_eq!(m.values(), &[0.8, 0.8, 0.0, 0.0]);

        let p = LogicSystem::new(LogicFamily::Product);
        let b5 = BoundingBox::new(0.0, 0.0, 2.0, 2.0, tv(0.5)).unwrap();
        let m2 = boxes_to_mask(&[b5, b5], (2, 2), &p, None).unwrap();
        assert!(m2.values().iter().all(|&v| (v - 0.75).abs() < 1e-15));

        let empty = boxes_to_mask(&[], (2, 2), &g, None).unwrap();
        assert_eq!(empty.values(), &[0.0; 4]);

        // Constant score overrides and Goedel disj is idempotent.
        let m3 = boxes_to_mask(&[b, b], (2, 2), &g, Some(tv(1.0))).unwrap();
        assert_eq!(m3.values(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn box_clipped_to_shape_and_degenerate() {
        let g = LogicSystem::new(LogicFamily::Goedel);
        let b = BoundingBox::new(-5.0, -5.0, 50.0, 50.0, tv(1.0)).unwrap();
        let m = boxes_to_mask(&[b], (2, 2), &g, None).unwrap();
        assert_eq!(m.values(), &[1.0; 4]);
        // Zero-area after clipping contributes nothing.
        let off = BoundingBox::new(10.0, 10.0, 12.0, 12.0, tv(1.0)).unwrap();
        let m2 = boxes_to_mask(&[off], (2, 2), &g, None).unwrap();
        assert_eq!(m2.values(), &[0.0; 4]);
    }

    #[test]
    fn upscale_bilinear_pixel_centers() {
        let m = mask(2, 1, &[0.0, 1.0]);
        let up = upscale_bilinear(&m, (4, 1)).unwrap();
        let expect = [0.0, 0.25, 0.75, 1.0];
        for (a, b) in up.values().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{:?}", up.values());
        }

        let c = TruthMask::constant(1, 1, tv(0.37)).unwrap();
        let up = upscale_bilinear(&c, (5, 7)).unwrap();
        assert!(up.values().iter().all(|&v| v == 0.37));

        let same = upscale_bilinear(&m, (2, 1)).unwrap();
        assert_eq!(same.values(), m.values());

        assert!(matches!(
            upscale_bilinear(&m, (1, 1)),
            Err(MaskError::UpscaleShrinks { .. })
        ));
    }

    #[test]
    fn downscale_maxpool_blocks() {
        let mut data = vec![0.0; 16];
        data[5] = 1.0; // row 1, col 1 -> top-left quadrant
        let m = mask(4, 4, &data);
        let d = downscale_maxpool(&m, (2, 2)).unwrap();
        assert_eq!(d.values(), &[1.0, 0.0, 0.0, 0.0]);

        let m2 = mask(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(downscale_maxpool(&m2, (1, 1)).unwrap().values(), &[0.4]);

        let c = TruthMask::constant(4, 4, tv(0.5)).unwrap();
        assert!(downscale_maxpool(&c, (2, 2))
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.5));

        assert!(matches!(
            downscale_maxpool(&m, (3, 3)),
            Err(MaskError::NonIntegerBlock { .. })
        ));
    }

    #[test]
    fn closeby_kernels() {
        let k = closeby_kernel(&CloseByParams::Trivial).unwrap();
        assert_eq!(k.size(), 1);
        assert_eq!(k.weights(), &[1.0]);

        let g = closeby_kernel(&CloseByParams::gaussian(2.0, Some(2), 0.1).unwrap()).unwrap();
        assert!((g.weight_at(0, 1) - (-1.0f64 / 8.0).exp()).abs() < 1e-12);
        assert!((g.weight_at(0, 1) - 0.8825).abs() < 1e-4);
        assert_eq!(g.weight_at(2, 2), 0.0); // outside the L1 ball
        assert_eq!(g.weight_at(0, 0), 1.0); // not renormalized

        let l1 = closeby_kernel(&CloseByParams::l1_from_ksize(3).unwrap()).unwrap();
        assert_eq!(l1.weight_at(-1, -1), 0.0);
        assert_eq!(l1.weight_at(-1, 0), 1.0);
        assert_eq!(l1.weight_at(0, 0), 1.0);

        assert!(matches!(
            closeby_kernel(&CloseByParams::Gaussian {
                sigma: 2.0,
                r: None,
                low_cut: 0.1
            }),
            Err(MaskError::UnboundedSupport)
        ));
        assert!(CloseByParams::l1_from_ksize(4).is_err());
        // sigma = 0 collapses to the trivial relation
        assert_eq!(
            CloseByParams::gaussian(0.0, Some(3), 0.1).unwrap(),
            CloseByParams::Trivial
        );
    }

    #[test]
    fn close_to_a_trivial_is_identity_for_max() {
        let logic = LogicSystem::new(LogicFamily::Goedel);
        let m = mask(2, 3, &[0.1, 0.9, 0.4, 0.0, 1.0, 0.3]);
        let out = close_to_a(&m, &CloseByParams::Trivial, &logic, (2, 3)).unwrap();
        assert_eq!(out.values(), m.values());
        // and for t-conorm folds of any fuzzy family
        for fam in LogicFamily::FUZZY {
            let l = LogicSystem::new(fam).with_exists(ExistsMode::TconormReduce);
            let out = close_to_a(&m, &CloseByParams::Trivial, &l, (2, 3)).unwrap();
            for (a, b) in out.values().iter().zip(m.values()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn close_to_a_binary_window_is_max_filter() {
        let logic = LogicSystem::new(LogicFamily::Goedel);
        let mut data = vec![0.0; 25];
        data[12] = 1.0;
        let m = mask(5, 5, &data);
        let out = close_to_a(
            &m,
            &CloseByParams::l1_from_ksize(3).unwrap(),
            &logic,
            (5, 5),
        )
        .unwrap();
        // L1 ball of radius 1 -> diamond dilation
        let expect = [
            0.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, 0.0, //
            0.0, 1.0, 1.0, 1.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(out.values(), &expect);
    }

    #[test]
    fn close_to_a_requires_matching_shapes() {
        let logic = LogicSystem::default();
        let m = mask(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            close_to_a(&m, &CloseByParams::Trivial, &logic, (4, 4)),
            Err(MaskError::ResolutionMismatch(..))
        ));
    }

    #[test]
    fn avg_pool_in_bounds_mean() {
        let mut data = vec![0.0; 9];
        data[4] = 1.0;
        let m = mask(3, 3, &data);
        let out = avg_pool(&m, 3).unwrap();
        assert!((out.at(1, 1) - 1.0 / 9.0).abs() < 1e-12);
        assert!((out.at(0, 0) - 0.25).abs() < 1e-12);

        let c = TruthMask::constant(4, 5, tv(0.6)).unwrap();
        assert!(avg_pool(&c, 3)
            .unwrap()
            .values()
            .iter()
            .all(|&v| (v - 0.6).abs() < 1e-12));

        assert_eq!(avg_pool(&m, 1).unwrap().values(), m.values());
        assert!(matches!(avg_pool(&m, 4), Err(MaskError::BadKernelSize(4))));
    }

    #[test]
    fn nb_cond_all_neighbors_mean_is_avg_pool() {
        let logic = LogicSystem::new(LogicFamily::Product).with_forall(ForallMode::Mean);
        let data: Vec<f64> = (0..35).map(|i| (i as f64 * 0.027) % 1.0).collect();
        let m = mask(5, 7, &data);
        let nb = nb_cond(
            &m,
            NbCondMode::AllNeighbors,
            &CloseByParams::l1_from_ksize(3).unwrap(),
            &logic,
        )
        .unwrap();
        let ap = avg_pool(&m, 3).unwrap();
        for (a, b) in nb.values().iter().zip(ap.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nb_cond_any_other_neighbor() {
        for fam in LogicFamily::FUZZY {
            let logic = LogicSystem::new(fam);
            let mut data = vec![0.0; 25];
            data[12] = 1.0;
            let m = mask(5, 5, &data);
            let out = nb_cond(
                &m,
                NbCondMode::AnyOtherNeighbor,
                &CloseByParams::l1_from_ksize(3).unwrap(),
                &logic,
            )
            .unwrap();
            assert_eq!(out.at(2, 2), 0.0, "isolated pixel keeps no support");

            let ones = TruthMask::ones(4, 4).unwrap();
            let out = nb_cond(
                &ones,
                NbCondMode::AnyOtherNeighbor,
                &CloseByParams::l1_from_ksize(3).unwrap(),
                &logic,
            )
            .unwrap();
            assert!(out.values().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn pixel_ranges_center_test() {
        let b = BoundingBox::new(0.6, 0.0, 1.4, 1.0, tv(1.0)).unwrap();
        // Only the center (0.5+?, ...) with x in [0.6, 1.4): center x=1.5 is out, x=0.5 is out
        let (rows, cols) = b.pixel_ranges((2, 3));
        assert_eq!(rows, 0..1);
        assert_eq!(cols, 1..1); // no center inside: 0.5 < 0.6, 1.5 > 1.4
        let b2 = BoundingBox::new(0.4, 0.0, 1.6, 1.0, tv(1.0)).unwrap();
        let (_, cols2) = b2.pixel_ranges((2, 3));
        assert_eq!(cols2, 0..2);
    }
}

//! Raster grids, reflection padding and patch tiling.
//!
//! Grids are stored planar (channel-major), row-major within each plane:
//! `data[c * height * width + y * width + x]`.

mod io;

pub use io::{read_grid, read_grid_bytes, write_flood_ppm, write_grid, AnyGrid, Cell, DType};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidDims(format!(
                "{width}x{height}x{channels}: every extent must be at least 1"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidDims(format!(
                "{width}x{height}x{channels} grid needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    /// Single-channel grid holding plane `c`.
    pub fn channel(&self, c: usize) -> Grid<T> {
        Grid {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.plane(c).to_vec(),
        }
    }

    /// Stacks the planes of `self` and `other` (same spatial extent).
    pub fn stack(&self, other: &Grid<T>) -> Result<Grid<T>> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::InvalidDims(format!(
                "cannot stack {}x{} with {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Grid::new(self.width, self.height, self.channels + other.channels, data)
    }

    /// Copies the window `[x0, x0 + w) × [y0, y0 + h)` of every channel.
    pub fn window(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Grid<T>> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::OutOfBounds(format!(
                "window {w}x{h} at ({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            for y in y0..y0 + h {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
            }
        }
        Grid::new(w, h, self.channels, data)
    }
}

/// Single-channel float32 elevation raster in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct ElevationMap(Grid<f32>);

impl ElevationMap {
    pub fn new(grid: Grid<f32>) -> Result<Self> {
        if grid.channels() != 1 {
            return Err(Error::InvalidDims(format!(
                "elevation map must have 1 channel, got {}",
                grid.channels()
            )));
        }
        if let Some(i) = grid.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(ElevationMap(grid))
    }

    pub fn from_vec(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        Self::new(Grid::new(width, height, 1, values)?)
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<f32> {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn values(&self) -> &[f32] {
        self.0.data()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.0.get(0, y, x)
    }
}

pub const DRY: i8 = -1;
pub const UNLABELED: i8 = 0;
pub const FLOOD: i8 = 1;

/// Per-pixel ground truth: -1 dry, 0 unlabeled, +1 flooded.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap(Grid<i8>);

impl LabelMap {
    pub fn new(grid: Grid<i8>) -> Result<Self> {
        if grid.channels() != 1 {
            return Err(Error::InvalidDims(format!(
                "label map must have 1 channel, got {}",
                grid.channels()
            )));
        }
        if let Some(&v) = grid.data().iter().find(|v| !(-1..=1).contains(*v)) {
            return Err(Error::InvalidLabel(v));
        }
        Ok(LabelMap(grid))
    }

    pub fn from_vec(width: usize, height: usize, values: Vec<i8>) -> Result<Self> {
        Self::new(Grid::new(width, height, 1, values)?)
    }

    pub fn filled(width: usize, height: usize, value: i8) -> Result<Self> {
        Self::new(Grid::filled(width, height, 1, value)?)
    }

    pub fn grid(&self) -> &Grid<i8> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<i8> {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn values(&self) -> &[i8] {
        self.0.data()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> i8 {
        self.0.get(0, y, x)
    }

    pub fn labeled_count(&self) -> usize {
        self.values().iter().filter(|&&v| v != UNLABELED).count()
    }
}

/// Reflection padding that makes a `width × height` raster tile exactly into
/// `patch_size`-square patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchLayout {
    pub patch_size: usize,
    pub width: usize,
    pub height: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub pad_top: usize,
    pub pad_bottom: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchLayout {
    /// Minimal padding, split evenly with the odd pixel on the right/bottom.
    pub fn new(width: usize, height: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 || width == 0 || height == 0 {
            return Err(Error::InvalidDims(format!(
                "layout {width}x{height} with patch size {patch_size}"
            )));
        }
        let split = |dim: usize| {
            let total = (patch_size - dim % patch_size) % patch_size;
            (total / 2, total - total / 2)
        };
        let (pad_left, pad_right) = split(width);
        let (pad_top, pad_bottom) = split(height);
        Ok(PatchLayout {
            patch_size,
            width,
            height,
            pad_left,
            pad_right,
            pad_top,
            pad_bottom,
            rows: (height + pad_top + pad_bottom) / patch_size,
            cols: (width + pad_left + pad_right) / patch_size,
        })
    }

    pub fn padded_width(&self) -> usize {
        self.width + self.pad_left + self.pad_right
    }

    pub fn padded_height(&self) -> usize {
        self.height + self.pad_top + self.pad_bottom
    }

    pub fn patch_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Top-left corner (x, y) of patch `idx` in padded coordinates.
    pub fn patch_origin(&self, idx: usize) -> (usize, usize) {
        ((idx % self.cols) * self.patch_size, (idx / self.cols) * self.patch_size)
    }
}

/// Mirror index about the borders without repeating the edge sample:
/// `-1 -> 1`, `n -> n - 2`. Valid for `-(n-1) <= i <= 2n - 2`.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    debug_assert!((0..n).contains(&r), "reflection of {i} outside extent {n}");
    r as usize
}

fn reflect_pad_sides<T: Copy>(
    g: &Grid<T>,
    left: usize,
    right: usize,
    top: usize,
    bottom: usize,
) -> Result<Grid<T>> {
    for (pad, dim) in [
        (left, g.width),
        (right, g.width),
        (top, g.height),
        (bottom, g.height),
    ] {
        if pad > 0 && pad >= dim {
            return Err(Error::ReflectionExceedsExtent { pad, dim });
        }
    }
    let w = g.width + left + right;
    let h = g.height + top + bottom;
    Grid::from_fn(w, h, g.channels, |c, y, x| {
        let sy = reflect_index(y as isize - top as isize, g.height);
        let sx = reflect_index(x as isize - left as isize, g.width);
        g.get(c, sy, sx)
    })
}

/// Pads `g` to the layout's padded extent by mirroring interior cells.
pub fn reflect_pad<T: Copy>(g: &Grid<T>, layout: &PatchLayout) -> Result<Grid<T>> {
    check_layout_extent(g, layout)?;
    reflect_pad_sides(
        g,
        layout.pad_left,
        layout.pad_right,
        layout.pad_top,
        layout.pad_bottom,
    )
}

/// One-pixel reflection border so every interior pixel has 8 neighbors.
pub fn neighbor_pad_1<T: Copy>(g: &Grid<T>) -> Result<Grid<T>> {
    if g.width < 2 || g.height < 2 {
        return Err(Error::ReflectionExceedsExtent {
            pad: 1,
            dim: g.width.min(g.height),
        });
    }
    reflect_pad_sides(g, 1, 1, 1, 1)
}

fn check_layout_extent<T>(g: &Grid<T>, layout: &PatchLayout) -> Result<()> {
    if g.width != layout.width || g.height != layout.height {
        return Err(Error::InvalidDims(format!(
            "grid is {}x{} but layout expects {}x{}",
            g.width, g.height, layout.width, layout.height
        )));
    }
    Ok(())
}

/// Partitions a padded grid into row-major `patch_size²` tiles.
pub fn split_patches<T: Copy>(g: &Grid<T>, layout: &PatchLayout) -> Result<Vec<Grid<T>>> {
    let ps = layout.patch_size;
    if !g.width.is_multiple_of(ps) || !g.height.is_multiple_of(ps) {
        return Err(Error::InvalidDims(format!(
            "{}x{} is not divisible by patch size {ps}",
            g.width, g.height
        )));
    }
    if g.width != layout.padded_width() || g.height != layout.padded_height() {
        return Err(Error::InvalidDims(format!(
            "grid is {}x{} but padded layout is {}x{}",
            g.width,
            g.height,
            layout.padded_width(),
            layout.padded_height()
        )));
    }
    (0..layout.patch_count())
        .map(|idx| {
            let (x0, y0) = layout.patch_origin(idx);
            g.window(x0, y0, ps, ps)
        })
        .collect()
}

/// Reassembles patches and crops the padding, recovering the original extent.
pub fn stitch_patches<T: Copy + Default>(patches: &[Grid<T>], layout: &PatchLayout) -> Result<Grid<T>> {
    if patches.len() != layout.patch_count() {
        return Err(Error::InvalidDims(format!(
            "expected {} patches, got {}",
            layout.patch_count(),
            patches.len()
        )));
    }
    let ps = layout.patch_size;
    let channels = patches[0].channels;
    if let Some(p) = patches
        .iter()
        .find(|p| p.width != ps || p.height != ps || p.channels != channels)
    {
        return Err(Error::InvalidDims(format!(
            "patch {}x{}x{} does not match {ps}x{ps}x{channels}",
            p.width, p.height, p.channels
        )));
    }
    let (w, h) = (layout.width, layout.height);
    let mut out = Grid::filled(w, h, channels, T::default())?;
    for (idx, patch) in patches.iter().enumerate() {
        let (px0, py0) = layout.patch_origin(idx);
        for c in 0..channels {
            for py in 0..ps {
                let y = (py0 + py) as isize - layout.pad_top as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for px in 0..ps {
                    let x = (px0 + px) as isize - layout.pad_left as isize;
                    if x < 0 || x >= w as isize {
                        continue;
                    }
                    out.set(c, y as usize, x as usize, patch.get(c, py, px));
                }
            }
        }
    }
    Ok(out)
}

/// `(h - min) / (max - min)`; a constant map normalizes to zeros.
pub fn minmax_normalize(e: &ElevationMap) -> Grid<f32> {
    let (lo, hi) = e
        .values()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if range > 0.0 {
        e.grid().map(|v| ((v - lo) / range).clamp(0.0, 1.0))
    } else {
        e.grid().map(|_| 0.0)
    }
}

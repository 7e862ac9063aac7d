use super::{InputMode, NormalizeScope};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::raster::{minmax_normalize, reflect_pad, ElevationMap, Grid, LabelMap, PatchLayout};
use crate::terrain::Region;

/// Everything one training or prediction step needs for a patch.
#[derive(Clone, Debug)]
pub struct PatchInput {
    /// `[C, P, P]` network bands.
    pub spectral: Tensor<f32>,
    /// Normalized `[1, P, P]` elevation, present when the mode uses it.
    pub elevation: Option<Tensor<f32>>,
    pub labels: LabelMap,
    /// Raw elevations, which the loss needs for height differences.
    pub raw_h: ElevationMap,
}

/// A region reflect-padded to whole patches, ready for slicing.
#[derive(Clone, Debug)]
pub struct PreparedRegion {
    layout: PatchLayout,
    mode: InputMode,
    spectral: Grid<f32>,
    raw_h: Grid<f32>,
    region_norm_h: Option<Grid<f32>>,
    labels: Grid<i8>,
}

impl PreparedRegion {
    pub fn new(region: &Region, patch_size: usize, mode: InputMode, scope: NormalizeScope) -> Result<Self> {
        let layout = PatchLayout::new(region.width(), region.height(), patch_size)?;
        let bands = match mode {
            InputMode::C3 | InputMode::C4 => region.disaster_rgb.clone(),
            InputMode::C7 => region.disaster_rgb.stack(&region.normal_rgb)?,
        };
        let region_norm_h = match (mode.uses_elevation(), scope) {
            (true, NormalizeScope::Region) => Some(reflect_pad(&minmax_normalize(&region.elevation), &layout)?),
            _ => None,
        };
        Ok(PreparedRegion {
            spectral: reflect_pad(&bands, &layout)?,
            raw_h: reflect_pad(region.elevation.grid(), &layout)?,
            labels: reflect_pad(region.labels.grid(), &layout)?,
            region_norm_h,
            layout,
            mode,
        })
    }

    pub fn layout(&self) -> &PatchLayout {
        &self.layout
    }

    pub fn patch_count(&self) -> usize {
        self.layout.patch_count()
    }

    pub fn patch(&self, idx: usize) -> Result<PatchInput> {
        if idx >= self.layout.patch_count() {
            return Err(Error::OutOfBounds(format!(
                "patch {idx} of {}",
                self.layout.patch_count()
            )));
        }
        let (x0, y0) = self.layout.patch_origin(idx);
        let p = self.layout.patch_size;
        let spectral = self.spectral.window(x0, y0, p, p)?;
        let raw_h = ElevationMap::new(self.raw_h.window(x0, y0, p, p)?)?;
        let elevation = if self.mode.uses_elevation() {
            let norm = match &self.region_norm_h {
                Some(g) => g.window(x0, y0, p, p)?,
                None => minmax_normalize(&raw_h),
            };
            Some(Tensor::chw(1, p, p, norm.into_data())?)
        } else {
            None
        };
        Ok(PatchInput {
            spectral: Tensor::chw(spectral.channels(), p, p, spectral.into_data())?,
            elevation,
            labels: LabelMap::new(self.labels.window(x0, y0, p, p)?)?,
            raw_h,
        })
    }
}

/// One patch of `region` under `mode`, with per-patch elevation normalization.
pub fn assemble_input(region: &Region, patch_idx: usize, mode: InputMode, patch_size: usize) -> Result<PatchInput> {
    PreparedRegion::new(region, patch_size, mode, NormalizeScope::Patch)?.patch(patch_idx)
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::Model;
use crate::autodiff::Graph;
use crate::error::Result;
use crate::loss::FLOOD_CHANNEL;
use crate::raster::{stitch_patches, Grid, LabelMap, PatchLayout, DRY, FLOOD};
use crate::terrain::Region;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Softmax probabilities, channel 0 dry and channel 1 flood.
    pub prob: Grid<f32>,
    /// Flood where `p_flood ≥ 0.5`, dry elsewhere.
    pub hard: LabelMap,
    pub layout: PatchLayout,
}

impl Prediction {
    pub fn flood_prob(&self) -> Grid<f32> {
        self.prob.channel(FLOOD_CHANNEL)
    }
}

/// Runs every patch of `region` through the model and stitches the softmax
/// outputs back to the region extent.
pub fn predict_region(model: &Model, region: &Region) -> Result<Prediction> {
    let prepared = model.prepare(region)?;
    let p = model.patch_size();
    let patches: Vec<Grid<f32>> = (0..prepared.patch_count())
        .into_par_iter()
        .map(|idx| {
            let input = prepared.patch(idx)?;
            let mut g = Graph::new();
            let scores = model.scores(&mut g, &input)?;
            let prob = g.softmax_channels(scores)?;
            Grid::new(p, p, 2, g.value(prob).to_vec())
        })
        .collect::<Result<_>>()?;
    let layout = *prepared.layout();
    let prob = stitch_patches(&patches, &layout)?;
    let hard = LabelMap::new(prob.channel(FLOOD_CHANNEL).map(|v| if v >= 0.5 { FLOOD } else { DRY }))?;
    Ok(Prediction { prob, hard, layout })
}

/// Mean absolute flood-probability step between 4-neighbors, split by whether
/// the pair straddles a patch seam.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeamStats {
    pub seam_pairs: u64,
    pub interior_pairs: u64,
    pub seam_mean: f64,
    pub interior_mean: f64,
}

impl SeamStats {
    /// `seam_mean / interior_mean`; 0 when both are 0.
    pub fn ratio(&self) -> f64 {
        if self.seam_mean == 0.0 {
            0.0
        } else {
            self.seam_mean / self.interior_mean
        }
    }
}

pub fn seam_continuity(flood_prob: &Grid<f32>, layout: &PatchLayout) -> SeamStats {
    let (w, h) = (flood_prob.width(), flood_prob.height());
    let ps = layout.patch_size;
    let plane = flood_prob.plane(0);
    let (mut seam, mut interior) = ((0u64, 0.0f64), (0u64, 0.0f64));
    let mut visit = |a: usize, b: usize, crosses: bool| {
        let d = (plane[a] as f64 - plane[b] as f64).abs();
        let acc = if crosses { &mut seam } else { &mut interior };
        acc.0 += 1;
        acc.1 += d;
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                visit(i, i + 1, (x + 1 + layout.pad_left).is_multiple_of(ps));
            }
            if y + 1 < h {
                visit(i, i + w, (y + 1 + layout.pad_top).is_multiple_of(ps));
            }
        }
    }
    let mean = |(n, s): (u64, f64)| if n == 0 { 0.0 } else { s / n as f64 };
    SeamStats {
        seam_pairs: seam.0,
        interior_pairs: interior.0,
        seam_mean: mean(seam),
        interior_mean: mean(interior),
    }
}

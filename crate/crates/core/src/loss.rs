//! Masked cross-entropy and the elevation-guided pairwise loss.
//!
//! Score maps are `[2, H, W]` tensors with channel 0 = dry score and channel 1 =
//! flood score. Every labeled pixel `p` is paired with its 8 neighbors `n`
//! (reflected at the border). With `dh = h(p) - h(n)` the pair is *active* when
//! `-gt(n) · dh > 0`: either a flooded neighbor sits higher than `p`, so `p` must
//! be flooded too, or a dry neighbor sits lower, so `p` must be dry too.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Scalar, Var};
use crate::error::{Error, Result};
use crate::raster::{reflect_index, ElevationMap, Grid, LabelMap, DRY, FLOOD, UNLABELED};

/// Neighbor offsets `(dy, dx)` in row-major order, center excluded.
pub const NEIGHBOR_OFFSETS: [(isize, isize); 8] =
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Score channel holding the dry score.
pub const DRY_CHANNEL: usize = 0;
/// Score channel holding the flood score.
pub const FLOOD_CHANNEL: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairCase {
    /// Case 1: `gt(n) = 0`.
    UnlabeledNeighbor,
    /// Case 2.1: flooded neighbor strictly higher (active).
    FloodedNeighborHigher,
    /// Case 2.2: flooded neighbor not higher.
    FloodedNeighborNotHigher,
    /// Case 3.1: dry neighbor strictly lower (active).
    DryNeighborLower,
    /// Case 3.2: dry neighbor not lower.
    DryNeighborNotLower,
}

impl PairCase {
    pub const ALL: [PairCase; 5] = [
        PairCase::UnlabeledNeighbor,
        PairCase::FloodedNeighborHigher,
        PairCase::FloodedNeighborNotHigher,
        PairCase::DryNeighborLower,
        PairCase::DryNeighborNotLower,
    ];

    pub fn is_active(self) -> bool {
        matches!(self, PairCase::FloodedNeighborHigher | PairCase::DryNeighborLower)
    }

    pub fn key(self) -> &'static str {
        match self {
            PairCase::UnlabeledNeighbor => "case1",
            PairCase::FloodedNeighborHigher => "case2_1",
            PairCase::FloodedNeighborNotHigher => "case2_2",
            PairCase::DryNeighborLower => "case3_1",
            PairCase::DryNeighborNotLower => "case3_2",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Classifies a pair by the neighbor label, then by the sign of `h(p) - h(n)`.
pub fn classify_pair(gt_n: i8, dh: f64) -> PairCase {
    match gt_n {
        FLOOD if dh < 0.0 => PairCase::FloodedNeighborHigher,
        FLOOD => PairCase::FloodedNeighborNotHigher,
        DRY if dh > 0.0 => PairCase::DryNeighborLower,
        DRY => PairCase::DryNeighborNotLower,
        _ => PairCase::UnlabeledNeighbor,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Indicator of an active pair.
    #[default]
    Binary,
    /// `max(-gt(n)·dh, 0)`.
    EvaDiff,
    /// `ln(1 + max(-gt(n)·dh, 0))`.
    LogEvaDiff,
}

pub fn weight(gt_n: i8, dh: f64, scheme: Weighting) -> f64 {
    let push = -(gt_n as f64) * dh;
    if push.is_nan() || push <= 0.0 {
        return 0.0;
    }
    match scheme {
        Weighting::Binary => 1.0,
        Weighting::EvaDiff => push,
        Weighting::LogEvaDiff => push.ln_1p(),
    }
}

/// Signed confidence in `(-1, 1)`: `sigmoid(s_flood)` when the flood score wins
/// (ties included), otherwise `-sigmoid(s_dry)`.
pub fn f_value(s_flood: f64, s_dry: f64) -> f64 {
    if s_flood >= s_dry {
        crate::autodiff::sigmoid(s_flood)
    } else {
        -crate::autodiff::sigmoid(s_dry)
    }
}

/// Pair deviation `1 - gt(n)·f(p)`.
pub fn delta_term(gt_n: i8, f_p: f64) -> f64 {
    1.0 - gt_n as f64 * f_p
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScheme {
    /// Cross-entropy only.
    Ce,
    /// `L_CE + λ·L_eva`.
    CeEva,
    /// Elevation-guided loss only.
    #[default]
    Eva,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduce {
    #[default]
    Sum,
    /// Divide by the number of labeled pixels in the patch.
    MeanPerLabeled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorderPairs {
    /// Reflected border neighbors inherit the mirrored pixel's label and height.
    #[default]
    Include,
    Exclude,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub scheme: LossScheme,
    pub lambda: f64,
    pub weighting: Weighting,
    pub reduce: Reduce,
    pub border_pairs: BorderPairs,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            scheme: LossScheme::Eva,
            lambda: 1.0,
            weighting: Weighting::Binary,
            reduce: Reduce::Sum,
            border_pairs: BorderPairs::Include,
        }
    }
}

/// 3×3 neighborhood expansion of a single-channel grid: 8 planes ordered as
/// [`NEIGHBOR_OFFSETS`], plus a validity mask that is `false` for reflected
/// border neighbors when they are excluded.
pub fn unfold_neighbors<T: Copy>(g: &Grid<T>, border: BorderPairs) -> (Vec<T>, Vec<bool>) {
    let (w, h) = (g.width(), g.height());
    let hw = w * h;
    let mut values = Vec::with_capacity(8 * hw);
    let mut valid = Vec::with_capacity(8 * hw);
    for &(dy, dx) in &NEIGHBOR_OFFSETS {
        for y in 0..h {
            for x in 0..w {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                let inside = (0..h as isize).contains(&ny) && (0..w as isize).contains(&nx);
                values.push(g.get(0, reflect_index(ny, h), reflect_index(nx, w)));
                valid.push(inside || border == BorderPairs::Include);
            }
        }
    }
    (values, valid)
}

/// `h(p) - h(n)` for each of the 8 neighbors, as an 8-channel grid.
pub fn delta_h(h: &ElevationMap) -> Grid<f64> {
    let (nbr, _) = unfold_neighbors(h.grid(), BorderPairs::Include);
    let hw = h.width() * h.height();
    let data = nbr
        .iter()
        .enumerate()
        .map(|(i, &hn)| h.values()[i % hw] as f64 - hn as f64)
        .collect();
    Grid::new(h.width(), h.height(), 8, data).expect("8 planes of the input extent")
}

/// Constant per-pair planes of the elevation-guided loss: weights (zeroed for
/// unlabeled centers and excluded border pairs) and neighbor labels.
pub struct PairPlanes {
    pub weights: Vec<f64>,
    pub gt_n: Vec<f64>,
}

pub fn pair_planes(gt: &LabelMap, h: &ElevationMap, weighting: Weighting, border: BorderPairs) -> Result<PairPlanes> {
    check_same_extent(gt, h)?;
    let (nbr_gt, valid) = unfold_neighbors(gt.grid(), border);
    let dh = delta_h(h);
    let hw = gt.width() * gt.height();
    let weights = (0..8 * hw)
        .map(|i| {
            if !valid[i] || gt.values()[i % hw] == UNLABELED {
                0.0
            } else {
                weight(nbr_gt[i], dh.data()[i], weighting)
            }
        })
        .collect();
    let gt_n = nbr_gt.iter().map(|&v| v as f64).collect();
    Ok(PairPlanes { weights, gt_n })
}

fn check_same_extent(gt: &LabelMap, h: &ElevationMap) -> Result<()> {
    if (gt.width(), gt.height()) != (h.width(), h.height()) {
        return Err(Error::shape(
            "loss",
            format!(
                "labels {}x{} vs elevation {}x{}",
                gt.width(),
                gt.height(),
                h.width(),
                h.height()
            ),
        ));
    }
    Ok(())
}

fn check_scores<T: Scalar>(g: &Graph<T>, scores: Var, gt: &LabelMap) -> Result<()> {
    if g.dims(scores) != [2, gt.height(), gt.width()] {
        return Err(Error::shape(
            "loss",
            format!("scores {:?} vs labels {}x{}", g.dims(scores), gt.width(), gt.height()),
        ));
    }
    Ok(())
}

fn reduce<T: Scalar>(g: &mut Graph<T>, total: Var, gt: &LabelMap, mode: Reduce) -> Var {
    match mode {
        Reduce::Sum => total,
        Reduce::MeanPerLabeled => {
            let n = gt.labeled_count().max(1);
            g.affine(total, T::of(1.0 / n as f64), T::zero())
        }
    }
}

/// `f(p)` as a `[1, H, W]` graph node; the gradient follows the selected branch.
pub fn flood_confidence<T: Scalar>(g: &mut Graph<T>, scores: Var) -> Result<Var> {
    let s_dry = g.channel(scores, DRY_CHANNEL)?;
    let s_flood = g.channel(scores, FLOOD_CHANNEL)?;
    let mask = g
        .value(s_flood)
        .iter()
        .zip(g.value(s_dry))
        .map(|(f, d)| f >= d)
        .collect();
    let flood_branch = g.sigmoid(s_flood);
    let dry_sig = g.sigmoid(s_dry);
    let dry_branch = g.affine(dry_sig, -T::one(), T::zero());
    g.select(mask, flood_branch, dry_branch)
}

/// `-Σ_{gt=1} ln p_flood - Σ_{gt=-1} ln p_dry`; unlabeled pixels contribute nothing.
pub fn loss_ce<T: Scalar>(g: &mut Graph<T>, scores: Var, gt: &LabelMap, mode: Reduce) -> Result<Var> {
    check_scores(g, scores, gt)?;
    let hw = gt.width() * gt.height();
    let mut coef = vec![T::zero(); 2 * hw];
    for (i, &l) in gt.values().iter().enumerate() {
        match l {
            DRY => coef[DRY_CHANNEL * hw + i] = T::one(),
            FLOOD => coef[FLOOD_CHANNEL * hw + i] = T::one(),
            _ => {}
        }
    }
    let log_p = g.log_softmax_channels(scores)?;
    let picked = g.mul_const(log_p, coef)?;
    let s = g.sum(picked);
    let ce = g.affine(s, -T::one(), T::zero());
    Ok(reduce(g, ce, gt, mode))
}

/// `Σ_{gt(p)≠0} Σ_{n∈N(p)} w(p, n) · (1 - gt(n)·f(p))`, computed on the unfolded
/// 8-plane neighborhood. `h` must hold raw (unnormalized) elevations.
pub fn loss_eva<T: Scalar>(
    g: &mut Graph<T>,
    scores: Var,
    gt: &LabelMap,
    h: &ElevationMap,
    cfg: &LossConfig,
) -> Result<Var> {
    check_scores(g, scores, gt)?;
    let planes = pair_planes(gt, h, cfg.weighting, cfg.border_pairs)?;
    let f = flood_confidence(g, scores)?;
    let f8 = g.repeat_channels(f, 8)?;
    let agree = g.mul_const(f8, planes.gt_n.iter().map(|&v| T::of(v)).collect())?;
    let delta = g.affine(agree, -T::one(), T::one());
    let weighted = g.mul_const(delta, planes.weights.iter().map(|&v| T::of(v)).collect())?;
    let total = g.sum(weighted);
    Ok(reduce(g, total, gt, cfg.reduce))
}

/// `L_CE`, `L_CE + λ·L_eva` or `L_eva` according to the scheme.
pub fn loss_total<T: Scalar>(
    g: &mut Graph<T>,
    scores: Var,
    gt: &LabelMap,
    h: &ElevationMap,
    cfg: &LossConfig,
) -> Result<Var> {
    if cfg.lambda.is_nan() || cfg.lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be non-negative, got {}", cfg.lambda)));
    }
    match cfg.scheme {
        LossScheme::Ce => loss_ce(g, scores, gt, cfg.reduce),
        LossScheme::Eva => loss_eva(g, scores, gt, h, cfg),
        LossScheme::CeEva => {
            let ce = loss_ce(g, scores, gt, cfg.reduce)?;
            let eva = loss_eva(g, scores, gt, h, cfg)?;
            let scaled = g.affine(eva, T::of(cfg.lambda), T::zero());
            g.add(ce, scaled)
        }
    }
}

/// Counts of ordered pairs (labeled `p`, neighbor `n`) per case.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseHistogram {
    pub case1: u64,
    pub case2_1: u64,
    pub case2_2: u64,
    pub case3_1: u64,
    pub case3_2: u64,
}

impl CaseHistogram {
    pub fn get(&self, case: PairCase) -> u64 {
        self.as_array()[case.slot()]
    }

    pub fn as_array(&self) -> [u64; 5] {
        [self.case1, self.case2_1, self.case2_2, self.case3_1, self.case3_2]
    }

    pub fn total(&self) -> u64 {
        self.as_array().iter().sum()
    }

    fn bump(&mut self, case: PairCase) {
        let slot = match case {
            PairCase::UnlabeledNeighbor => &mut self.case1,
            PairCase::FloodedNeighborHigher => &mut self.case2_1,
            PairCase::FloodedNeighborNotHigher => &mut self.case2_2,
            PairCase::DryNeighborLower => &mut self.case3_1,
            PairCase::DryNeighborNotLower => &mut self.case3_2,
        };
        *slot += 1;
    }
}

pub fn case_histogram(gt: &LabelMap, h: &ElevationMap, border: BorderPairs) -> Result<CaseHistogram> {
    check_same_extent(gt, h)?;
    let (nbr_gt, valid) = unfold_neighbors(gt.grid(), border);
    let dh = delta_h(h);
    let hw = gt.width() * gt.height();
    let mut hist = CaseHistogram::default();
    for i in 0..8 * hw {
        if valid[i] && gt.values()[i % hw] != UNLABELED {
            hist.bump(classify_pair(nbr_gt[i], dh.data()[i]));
        }
    }
    Ok(hist)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationStats {
    pub active_pairs: u64,
    pub violations: u64,
    pub rate: f64,
}

/// Share of active pairs whose hard prediction at `p` contradicts the
/// neighbor-implied label. Pairs are those of the loss: labeled `p` in `gt`, so
/// `active_pairs` equals the active buckets of [`case_histogram`]. `0/0` is reported as 0.
pub fn violation_rate(pred: &LabelMap, gt: &LabelMap, h: &ElevationMap, border: BorderPairs) -> Result<ViolationStats> {
    check_same_extent(gt, h)?;
    check_same_extent(pred, h)?;
    if let Some(&v) = pred.values().iter().find(|&&v| v == UNLABELED) {
        return Err(Error::InvalidLabel(v));
    }
    let (nbr_gt, valid) = unfold_neighbors(gt.grid(), border);
    let dh = delta_h(h);
    let hw = gt.width() * gt.height();
    let (mut active, mut bad) = (0u64, 0u64);
    for i in 0..8 * hw {
        if !valid[i] || gt.values()[i % hw] == UNLABELED {
            continue;
        }
        let case = classify_pair(nbr_gt[i], dh.data()[i]);
        if case.is_active() {
            active += 1;
            let p = pred.values()[i % hw];
            if (case == PairCase::FloodedNeighborHigher && p == DRY) || (case == PairCase::DryNeighborLower && p == FLOOD) {
                bad += 1;
            }
        }
    }
    Ok(ViolationStats {
        active_pairs: active,
        violations: bad,
        rate: if active == 0 { 0.0 } else { bad as f64 / active as f64 },
    })
}

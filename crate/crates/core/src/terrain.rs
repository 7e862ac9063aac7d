//! Synthetic flood scenes and elevation-guided label propagation.
//!
//! A scene is a diamond-square heightmap flooded up to a water level. Flooded
//! cells are the 8-connected parts of `{h <= level}` reachable from the chosen
//! sources, so no lower cell next to a flooded one can be dry. Colors follow
//! the truth except inside "ambiguity" blobs, and "canopy" blobs hide labels.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{read_grid, write_grid, ElevationMap, Grid, LabelMap, DRY, FLOOD, UNLABELED};

/// Mean disaster-time color of open water.
pub const WATER_RGB: [f32; 3] = [0.10, 0.20, 0.40];
/// Mean color of dry land (and of everything in the normal-time image).
pub const LAND_RGB: [f32; 3] = [0.40, 0.45, 0.25];

// Independent random streams derived from one seed.
const STREAM_TERRAIN: u64 = 1;
const STREAM_AMBIGUITY: u64 = 2;
const STREAM_CANOPY: u64 = 3;
const STREAM_DISASTER_NOISE: u64 = 4;
const STREAM_NORMAL_NOISE: u64 = 5;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaterLevel {
    Meters(f64),
    /// Quantile of the region's own elevations.
    Quantile(f64),
}

impl WaterLevel {
    pub fn resolve(&self, h: &ElevationMap) -> f64 {
        match *self {
            WaterLevel::Meters(m) => m,
            WaterLevel::Quantile(q) => {
                let mut v: Vec<f32> = h.values().to_vec();
                v.sort_by(f32::total_cmp);
                let idx = (q.clamp(0.0, 1.0) * (v.len() - 1) as f64).round() as usize;
                v[idx] as f64
            }
        }
    }
}

impl fmt::Display for WaterLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaterLevel::Meters(m) => write!(f, "meters:{m}"),
            WaterLevel::Quantile(q) => write!(f, "quantile:{q}"),
        }
    }
}

/// Accepts `quantile:0.35`, `meters:12.5` or a bare number of meters.
impl FromStr for WaterLevel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
        match s.split_once(':') {
            Some(("quantile", v)) => Ok(WaterLevel::Quantile(num(v)?)),
            Some(("meters", v)) => Ok(WaterLevel::Meters(num(v)?)),
            Some((kind, _)) => Err(format!("unknown water level kind `{kind}`")),
            None => Ok(WaterLevel::Meters(num(s)?)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Per-level decay of the midpoint displacement; 0 gives a bilinear ramp.
    pub roughness: f64,
    /// Height range of the seeded corners and scale of the displacements, in meters.
    pub relief: f64,
    pub water_level: WaterLevel,
    pub canopy_fraction: f64,
    pub ambiguity_fraction: f64,
    pub noise_sigma: f64,
    /// Mean radius of canopy and ambiguity blobs, in pixels.
    pub blob_radius: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 256,
            height: 256,
            seed: 0,
            roughness: 0.55,
            relief: 50.0,
            water_level: WaterLevel::Quantile(0.35),
            canopy_fraction: 0.2,
            ambiguity_fraction: 0.1,
            noise_sigma: 0.05,
            blob_radius: 6.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config(format!(
                "synthetic regions need at least 16x16 pixels, got {}x{}",
                self.width, self.height
            )));
        }
        for (name, v) in [
            ("canopy_fraction", self.canopy_fraction),
            ("ambiguity_fraction", self.ambiguity_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if let WaterLevel::Quantile(q) = self.water_level {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Config(format!("water level quantile must lie in [0, 1], got {q}")));
            }
        }
        let finite_nonneg = [self.roughness, self.relief, self.noise_sigma, self.blob_radius];
        if finite_nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.blob_radius == 0.0 {
            return Err(Error::Config(
                "roughness, relief and noise_sigma must be finite and non-negative, blob_radius positive".into(),
            ));
        }
        Ok(())
    }
}

/// Diamond-square heightmap on the smallest `2^k + 1` square covering the
/// requested extent, cropped to `width × height`.
pub fn gen_terrain(cfg: &SynthConfig) -> Result<ElevationMap> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, STREAM_TERRAIN);
    let n = cfg.width.max(cfg.height).next_power_of_two() + 1;
    let mut z = vec![0.0f64; n * n];
    let corner = Uniform::new(0.0, cfg.relief.max(f64::MIN_POSITIVE));
    for &(y, x) in &[(0, 0), (0, n - 1), (n - 1, 0), (n - 1, n - 1)] {
        z[y * n + x] = corner.sample(&mut rng);
    }
    let unit = Uniform::new_inclusive(-1.0, 1.0);
    let mut amp = cfg.relief * cfg.roughness;
    let mut step = n - 1;
    while step > 1 {
        let half = step / 2;
        for y in (half..n).step_by(step) {
            for x in (half..n).step_by(step) {
                let avg = (z[(y - half) * n + x - half]
                    + z[(y - half) * n + x + half]
                    + z[(y + half) * n + x - half]
                    + z[(y + half) * n + x + half])
                    / 4.0;
                z[y * n + x] = avg + amp * unit.sample(&mut rng);
            }
        }
        for y in (0..n).step_by(half) {
            let x0 = if (y / half).is_multiple_of(2) { half } else { 0 };
            for x in (x0..n).step_by(step) {
                // Edge points average the two edge endpoints only, which keeps
                // roughness 0 exactly bilinear.
                let avg = if y == 0 || y == n - 1 {
                    (z[y * n + x - half] + z[y * n + x + half]) / 2.0
                } else if x == 0 || x == n - 1 {
                    (z[(y - half) * n + x] + z[(y + half) * n + x]) / 2.0
                } else {
                    (z[(y - half) * n + x] + z[(y + half) * n + x] + z[y * n + x - half] + z[y * n + x + half]) / 4.0
                };
                z[y * n + x] = avg + amp * unit.sample(&mut rng);
            }
        }
        amp *= cfg.roughness;
        step = half;
    }
    let values = (0..cfg.height)
        .flat_map(|y| z[y * n..y * n + cfg.width].iter().map(|&v| v as f32).collect::<Vec<_>>())
        .collect();
    ElevationMap::from_vec(cfg.width, cfg.height, values)
}

/// Where flood water enters the terrain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloodSources {
    /// Every local minimum below the level; floods all of `{h <= level}`.
    AllMinima,
    /// Cells on the region boundary.
    Boundary,
    /// Explicit `(row, col)` cells.
    Pixels(Vec<(usize, usize)>),
}

fn neighbors8(y: usize, x: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1isize..=1)
        .flat_map(move |dy| (-1isize..=1).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| dy != 0 || dx != 0)
        .filter_map(move |(dy, dx)| {
            let (ny, nx) = (y as isize + dy, x as isize + dx);
            ((0..h as isize).contains(&ny) && (0..w as isize).contains(&nx)).then_some((ny as usize, nx as usize))
        })
}

/// 8-connected breadth-first search from `seeds`, stepping `c → q` when
/// `admit(c, q)` holds. Returns the visited mask.
fn bfs(w: usize, h: usize, seeds: impl IntoIterator<Item = usize>, admit: impl Fn(usize, usize) -> bool) -> Vec<bool> {
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for s in seeds {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(c) = queue.pop_front() {
        for (ny, nx) in neighbors8(c / w, c % w, w, h) {
            let q = ny * w + nx;
            if !seen[q] && admit(c, q) {
                seen[q] = true;
                queue.push_back(q);
            }
        }
    }
    seen
}

/// Fully labeled truth flooded from every minimum below `level`.
pub fn flood_truth(h: &ElevationMap, level: f64) -> LabelMap {
    flood_truth_from(h, level, &FloodSources::AllMinima).expect("all-minima sources are always in bounds")
}

/// A cell is flooded iff a below-level source reaches it through cells with
/// `h <= level`; every other cell is dry.
pub fn flood_truth_from(h: &ElevationMap, level: f64, sources: &FloodSources) -> Result<LabelMap> {
    let (w, ht) = (h.width(), h.height());
    let vals = h.values();
    let wet = |i: usize| vals[i] as f64 <= level;
    let seeds: Vec<usize> = match sources {
        FloodSources::AllMinima => (0..w * ht).filter(|&i| wet(i)).collect(),
        FloodSources::Boundary => (0..w * ht)
            .filter(|&i| {
                let (y, x) = (i / w, i % w);
                (y == 0 || x == 0 || y == ht - 1 || x == w - 1) && wet(i)
            })
            .collect(),
        FloodSources::Pixels(px) => {
            let mut out = Vec::with_capacity(px.len());
            for &(y, x) in px {
                check_bounds(h, (y, x))?;
                if wet(y * w + x) {
                    out.push(y * w + x);
                }
            }
            out
        }
    };
    let flooded = bfs(w, ht, seeds, |_, q| wet(q));
    LabelMap::from_vec(w, ht, flooded.iter().map(|&f| if f { FLOOD } else { DRY }).collect())
}

fn check_bounds(h: &ElevationMap, (y, x): (usize, usize)) -> Result<()> {
    if y >= h.height() || x >= h.width() {
        return Err(Error::OutOfBounds(format!(
            "pixel ({y}, {x}) outside {}x{} grid",
            h.width(),
            h.height()
        )));
    }
    Ok(())
}

/// Admission rule of the flood-propagating search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PitfillThreshold {
    /// Admit `q` iff `h(q) <= h(seed)`: a water-level fill.
    #[default]
    Seed,
    /// Admit `c → q` iff `h(q) <= h(c)`: flow strictly downhill or level.
    PathMonotone,
}

/// Cells that inherit a flood label from `seed` (`(row, col)`).
pub fn propagate_flood(h: &ElevationMap, seed: (usize, usize), threshold: PitfillThreshold) -> Result<Vec<bool>> {
    check_bounds(h, seed)?;
    let v = h.values();
    let s = seed.0 * h.width() + seed.1;
    Ok(match threshold {
        PitfillThreshold::Seed => bfs(h.width(), h.height(), [s], |_, q| v[q] <= v[s]),
        PitfillThreshold::PathMonotone => bfs(h.width(), h.height(), [s], |c, q| v[q] <= v[c]),
    })
}

/// Cells that inherit a dry label from `seed`: paths never descend.
pub fn propagate_dry(h: &ElevationMap, seed: (usize, usize)) -> Result<Vec<bool>> {
    check_bounds(h, seed)?;
    let v = h.values();
    Ok(bfs(h.width(), h.height(), [seed.0 * h.width() + seed.1], |c, q| v[q] >= v[c]))
}

/// Covers exactly `round(fraction · w · h)` cells with random disks and returns
/// the covering disk index per cell.
fn blob_cover(w: usize, h: usize, fraction: f64, radius: f64, rng: &mut ChaCha8Rng) -> Vec<Option<u32>> {
    let n = w * h;
    let target = (fraction * n as f64).round() as usize;
    let mut cover = vec![None; n];
    let mut covered = 0;
    let mut id = 0u32;
    let max_disks = 64 * n / (radius * radius).ceil().max(1.0) as usize + 1024;
    while covered < target && (id as usize) < max_disks {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let r = radius * rng.gen_range(0.5..1.5);
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h));
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w));
        for y in y0..y1 {
            for x in x0..x1 {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let cell = &mut cover[y * w + x];
                if covered < target && cell.is_none() && dy * dy + dx * dx <= r * r {
                    *cell = Some(id);
                    covered += 1;
                }
            }
        }
        id += 1;
    }
    if covered < target {
        let mut rest: Vec<usize> = (0..n).filter(|&i| cover[i].is_none()).collect();
        rest.shuffle(rng);
        for i in rest.into_iter().take(target - covered) {
            cover[i] = Some(id);
            id += 1;
        }
    }
    cover
}

/// Disaster-time and normal-time RGB images. Inside ambiguity blobs each blob
/// takes the colors of a coin-flipped class, independent of the truth.
pub fn render_spectra(truth: &LabelMap, cfg: &SynthConfig) -> Result<(Grid<f32>, Grid<f32>)> {
    let (w, h) = (truth.width(), truth.height());
    let hw = w * h;
    let mut amb_rng = rng_for(cfg.seed, STREAM_AMBIGUITY);
    let blobs = blob_cover(w, h, cfg.ambiguity_fraction, cfg.blob_radius, &mut amb_rng);
    let n_blobs = blobs.iter().flatten().max().map_or(0, |&m| m as usize + 1);
    let blob_wet: Vec<bool> = (0..n_blobs).map(|_| amb_rng.gen_bool(0.5)).collect();

    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(format!("noise_sigma: {e}")))?;
    let mut rng = rng_for(cfg.seed, STREAM_DISASTER_NOISE);
    let mut disaster = vec![0.0f32; 3 * hw];
    for i in 0..hw {
        let wet = match blobs[i] {
            Some(b) => blob_wet[b as usize],
            None => truth.values()[i] == FLOOD,
        };
        let mean = if wet { WATER_RGB } else { LAND_RGB };
        for c in 0..3 {
            disaster[c * hw + i] = mean[c] + noise.sample(&mut rng) as f32;
        }
    }
    let mut rng = rng_for(cfg.seed, STREAM_NORMAL_NOISE);
    let mut normal = vec![0.0f32; 3 * hw];
    for i in 0..hw {
        for c in 0..3 {
            normal[c * hw + i] = LAND_RGB[c] + noise.sample(&mut rng) as f32;
        }
    }
    Ok((Grid::new(w, h, 3, disaster)?, Grid::new(w, h, 3, normal)?))
}

/// Copies `truth` and unlabels canopy blobs covering `canopy_fraction` of the cells.
pub fn mask_canopy(truth: &LabelMap, cfg: &SynthConfig) -> LabelMap {
    let mut rng = rng_for(cfg.seed, STREAM_CANOPY);
    let cover = blob_cover(truth.width(), truth.height(), cfg.canopy_fraction, cfg.blob_radius, &mut rng);
    let values = truth
        .values()
        .iter()
        .zip(&cover)
        .map(|(&t, c)| if c.is_some() { UNLABELED } else { t })
        .collect();
    LabelMap::from_vec(truth.width(), truth.height(), values).expect("same extent as truth")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub elevation: ElevationMap,
    pub disaster_rgb: Grid<f32>,
    pub normal_rgb: Grid<f32>,
    /// Training labels; canopy cells are unlabeled.
    pub labels: LabelMap,
    /// Complete ground truth, for evaluation only.
    pub truth: LabelMap,
}

pub const ELEVATION_FILE: &str = "elev.fgrd";
pub const DISASTER_FILE: &str = "disaster.fgrd";
pub const NORMAL_FILE: &str = "normal.fgrd";
pub const LABELS_FILE: &str = "labels.fgrd";
pub const TRUTH_FILE: &str = "truth.fgrd";
pub const MANIFEST_FILE: &str = "manifest.json";

impl Region {
    pub fn width(&self) -> usize {
        self.elevation.width()
    }

    pub fn height(&self) -> usize {
        self.elevation.height()
    }

    pub fn flood_fraction(&self) -> f64 {
        let n = self.truth.values().iter().filter(|&&v| v == FLOOD).count();
        n as f64 / self.truth.values().len() as f64
    }

    pub fn labeled_fraction(&self) -> f64 {
        self.labels.labeled_count() as f64 / self.labels.values().len() as f64
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_grid(self.elevation.grid(), dir.join(ELEVATION_FILE))?;
        write_grid(&self.disaster_rgb, dir.join(DISASTER_FILE))?;
        write_grid(&self.normal_rgb, dir.join(NORMAL_FILE))?;
        write_grid(self.labels.grid(), dir.join(LABELS_FILE))?;
        write_grid(self.truth.grid(), dir.join(TRUTH_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Region> {
        let dir = dir.as_ref();
        let rgb = |name: &str| -> Result<Grid<f32>> {
            let g: Grid<f32> = read_grid(dir.join(name))?.into_typed()?;
            if g.channels() != 3 {
                return Err(Error::InvalidDims(format!("{name} has {} channels, expected 3", g.channels())));
            }
            Ok(g)
        };
        let region = Region {
            elevation: ElevationMap::new(read_grid(dir.join(ELEVATION_FILE))?.into_typed()?)?,
            disaster_rgb: rgb(DISASTER_FILE)?,
            normal_rgb: rgb(NORMAL_FILE)?,
            labels: LabelMap::new(read_grid(dir.join(LABELS_FILE))?.into_typed()?)?,
            truth: LabelMap::new(read_grid(dir.join(TRUTH_FILE))?.into_typed()?)?,
        };
        let (w, h) = (region.width(), region.height());
        let extents = [
            (region.disaster_rgb.width(), region.disaster_rgb.height()),
            (region.normal_rgb.width(), region.normal_rgb.height()),
            (region.labels.width(), region.labels.height()),
            (region.truth.width(), region.truth.height()),
        ];
        if extents.iter().any(|&e| e != (w, h)) {
            return Err(Error::InvalidDims(format!("region {} mixes grid extents", dir.display())));
        }
        Ok(region)
    }
}

/// One complete synthetic scene.
pub fn gen_region(cfg: &SynthConfig) -> Result<Region> {
    let elevation = gen_terrain(cfg)?;
    let truth = flood_truth(&elevation, cfg.water_level.resolve(&elevation));
    let (disaster_rgb, normal_rgb) = render_spectra(&truth, cfg)?;
    let labels = mask_canopy(&truth, cfg);
    Ok(Region {
        elevation,
        disaster_rgb,
        normal_rgb,
        labels,
        truth,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub name: String,
    pub role: Role,
    pub seed: u64,
    pub flood_fraction: f64,
    pub labeled_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: SynthConfig,
    pub regions: Vec<RegionEntry>,
}

pub const MANIFEST_FORMAT: &str = "evanet-synth-1";

impl Manifest {
    pub fn load(root: impl AsRef<Path>) -> Result<Manifest> {
        let path = root.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Malformed(format!("unsupported manifest format `{}`", m.format)));
        }
        Ok(m)
    }

    pub fn region_dir(root: impl AsRef<Path>, entry: &RegionEntry) -> PathBuf {
        root.as_ref().join(&entry.name)
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &RegionEntry> {
        self.regions.iter().filter(move |r| r.role == role)
    }
}

/// Seed of the `k`-th region of a dataset generated from `seed`.
pub fn region_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64)
}

/// Generates `n_train + n_test` regions into `out/region_k` (train first) and
/// writes `out/manifest.json`.
pub fn gen_dataset(cfg: &SynthConfig, n_train: usize, n_test: usize, out: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out = out.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let regions = (0..n_train + n_test)
        .into_par_iter()
        .map(|k| -> Result<RegionEntry> {
            let seed = region_seed(cfg.seed, k);
            let region = gen_region(&SynthConfig { seed, ..cfg.clone() })?;
            let name = format!("region_{k}");
            region.save(out.join(&name))?;
            Ok(RegionEntry {
                name,
                role: if k < n_train { Role::Train } else { Role::Test },
                seed,
                flood_fraction: region.flood_fraction(),
                labeled_fraction: region.labeled_fraction(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        config: cfg.clone(),
        regions,
    };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

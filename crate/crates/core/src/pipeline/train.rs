use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::KeyValueConfig;
use super::input::{PatchInput, PreparedRegion};
use super::optim::OptimizerState;
use super::{InputMode, NormalizeScope, TrainConfig};
use crate::autodiff::{read_checkpoint, write_checkpoint, Checkpoint, Graph, ParamStore, Scalar, Var};
use crate::error::{Error, Result};
use crate::loss::{loss_total, LossConfig};
use crate::model::EvaNet;
use crate::terrain::{Manifest, Region, Role};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "final.evaw";

const EPOCH_KEY: &str = "meta.epoch";

/// A network together with its parameters and the input conventions it was trained under.
#[derive(Clone, Debug)]
pub struct Model {
    pub net: EvaNet,
    pub params: ParamStore<f32>,
    pub input_mode: InputMode,
    pub normalize_scope: NormalizeScope,
}

impl Model {
    /// Freshly initialized from `cfg.seed`.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (net, params) = EvaNet::new::<f32>(cfg.model_config(), cfg.seed)?;
        Ok(Model {
            net,
            params,
            input_mode: cfg.input_mode,
            normalize_scope: cfg.normalize_scope,
        })
    }

    /// The architecture of `cfg` with weights taken from `ckpt`.
    pub fn from_checkpoint(cfg: &TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Model::new(cfg)?;
        model.params.load_checkpoint(ckpt)?;
        Ok(model)
    }

    pub fn patch_size(&self) -> usize {
        self.net.config.patch_size
    }

    pub fn prepare(&self, region: &Region) -> Result<PreparedRegion> {
        PreparedRegion::new(region, self.patch_size(), self.input_mode, self.normalize_scope)
    }

    /// Binds the parameters and the patch into `g` and returns the `[2, P, P]` scores.
    pub(crate) fn scores(&self, g: &mut Graph<f32>, input: &PatchInput) -> Result<Var> {
        let params = self.params.bind(g);
        let spectral = g.input(input.spectral.clone());
        let elevation = input.elevation.clone().map(|e| g.input(e));
        self.net.forward(g, &params, spectral, elevation)
    }

    /// Loss of one patch and its parameter gradients.
    pub fn patch_gradients(&self, input: &PatchInput, loss: &LossConfig) -> Result<(f64, Vec<Vec<f32>>)> {
        let mut g = Graph::new();
        let scores = self.scores(&mut g, input)?;
        let l = loss_total(&mut g, scores, &input.labels, &input.raw_h, loss)?;
        let value = g.scalar_value(l).as_f64();
        g.backward(l)?;
        let mut grads = self.params.zero_grads();
        g.accumulate_param_grads(&mut grads);
        Ok((value, grads))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Sum of patch losses divided by the number of patches trained on.
    pub mean_loss: f64,
    pub patches: usize,
}

/// Mini-batch training over every labeled patch of a set of regions.
pub struct Trainer {
    cfg: TrainConfig,
    model: Model,
    opt: OptimizerState,
    epoch: usize,
    patches: Vec<PatchInput>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, regions: &[Region]) -> Result<Self> {
        let model = Model::new(&cfg)?;
        let opt = OptimizerState::new(cfg.optimizer, &model.params);
        Self::assemble(cfg, model, opt, 0, regions)
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(cfg: TrainConfig, regions: &[Region], ckpt: &Checkpoint) -> Result<Self> {
        let model = Model::from_checkpoint(&cfg, ckpt)?;
        let opt = OptimizerState::load(cfg.optimizer, &model.params, ckpt)?;
        let epoch = ckpt
            .get(EPOCH_KEY)
            .and_then(|t| t.data.first())
            .map_or(0, |&e| e as usize);
        Self::assemble(cfg, model, opt, epoch, regions)
    }

    fn assemble(cfg: TrainConfig, model: Model, opt: OptimizerState, epoch: usize, regions: &[Region]) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::Config("training needs at least one region".into()));
        }
        let mut patches = Vec::new();
        for region in regions {
            let prepared = model.prepare(region)?;
            for idx in 0..prepared.patch_count() {
                let p = prepared.patch(idx)?;
                // No labeled pixel means no loss term and no gradient under any scheme.
                if p.labels.labeled_count() > 0 {
                    patches.push(p);
                }
            }
        }
        if patches.is_empty() {
            return Err(Error::NoLabeledPixels);
        }
        Ok(Trainer {
            cfg,
            model,
            opt,
            epoch,
            patches,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn patch_count(&self) -> usize {
        self.patches.len()
    }

    /// Patch visiting order of epoch `epoch`, fixed by the seed.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..self.patches.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// One pass over all patches. Batch gradients are summed in visiting order,
    /// then one optimizer step is taken per batch.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let epoch = self.epoch + 1;
        let order = self.epoch_order(epoch);
        let mut total = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            let results: Vec<(f64, Vec<Vec<f32>>)> = batch
                .par_iter()
                .map(|&i| self.model.patch_gradients(&self.patches[i], &self.cfg.loss))
                .collect::<Result<_>>()?;
            let mut grads = self.model.params.zero_grads();
            for (&i, (loss, g)) in batch.iter().zip(&results) {
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("loss {loss} on patch {i} in epoch {epoch}")));
                }
                total += loss;
                for (acc, part) in grads.iter_mut().zip(g) {
                    for (a, &v) in acc.iter_mut().zip(part) {
                        *a += v;
                    }
                }
            }
            if let Some(bad) = grads.iter().flatten().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient entry {bad} in epoch {epoch}")));
            }
            self.opt.step(&mut self.model.params, &grads, self.cfg.lr);
        }
        self.epoch = epoch;
        Ok(EpochStats {
            epoch,
            mean_loss: total / self.patches.len() as f64,
            patches: self.patches.len(),
        })
    }

    /// Parameters, optimizer state and the completed epoch count.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.model.params.to_checkpoint();
        ckpt.insert(EPOCH_KEY, vec![1], vec![self.epoch as f32]);
        self.opt.save(&self.model.params, &mut ckpt);
        ckpt
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Epochs run by this call, in order.
    pub history: Vec<EpochStats>,
    pub final_checkpoint: PathBuf,
    pub model: Model,
}

fn read_loss_rows(path: &Path, up_to: usize) -> Result<Vec<String>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let epoch: usize = line
            .split(',')
            .next()
            .and_then(|e| e.parse().ok())
            .ok_or_else(|| Error::Malformed(format!("{}: bad row `{line}`", path.display())))?;
        if epoch <= up_to {
            rows.push(line.to_owned());
        }
    }
    Ok(rows)
}

/// Trains until `cfg.epochs` epochs are complete, writing into `out`:
/// the config, `loss.csv` (`epoch,mean_loss`), `epoch_NNNN.evaw` every
/// `checkpoint_every` epochs and `final.evaw`.
///
/// With `resume`, epoch numbering and optimizer state continue from that
/// checkpoint and earlier rows of an existing `loss.csv` are kept.
pub fn train(cfg: &TrainConfig, regions: &[Region], out: impl AsRef<Path>, resume: Option<&Path>) -> Result<TrainOutcome> {
    let out = out.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(cfg.clone(), regions, &read_checkpoint(path)?)?,
        None => Trainer::new(cfg.clone(), regions)?,
    };
    let config_path = out.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_text()).map_err(|e| Error::io(&config_path, e))?;

    let loss_path = out.join(LOSS_FILE);
    let mut rows = match resume {
        Some(_) => read_loss_rows(&loss_path, trainer.epoch())?,
        None => Vec::new(),
    };
    let write_rows = |rows: &[String]| {
        let mut text = String::from("epoch,mean_loss\n");
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        fs::write(&loss_path, text).map_err(|e| Error::io(&loss_path, e))
    };
    write_rows(&rows)?;

    let mut history = Vec::new();
    while trainer.epoch() < cfg.epochs {
        let stats = trainer.run_epoch()?;
        rows.push(format!("{},{}", stats.epoch, stats.mean_loss));
        write_rows(&rows)?;
        if cfg.checkpoint_every > 0 && stats.epoch % cfg.checkpoint_every == 0 {
            write_checkpoint(&trainer.checkpoint(), out.join(format!("epoch_{:04}.evaw", stats.epoch)))?;
        }
        history.push(stats);
    }
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    write_checkpoint(&trainer.checkpoint(), &final_checkpoint)?;
    Ok(TrainOutcome {
        history,
        final_checkpoint,
        model: trainer.into_model(),
    })
}

/// Loads every region of `role` listed in the dataset manifest under `root`.
pub fn load_regions(root: impl AsRef<Path>, role: Role) -> Result<Vec<Region>> {
    let root = root.as_ref();
    let manifest = Manifest::load(root)?;
    manifest
        .with_role(role)
        .map(|entry| Region::load(Manifest::region_dir(root, entry)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossScheme;
    use crate::pipeline::{sgd_step, OptimizerKind};
    use crate::terrain::{gen_region, SynthConfig};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            lr: 1e-3,
            batch_size: 2,
            patch_size: 16,
            blocks: 2,
            base_channels: 4,
            seed: 5,
            checkpoint_every: 0,
            ..TrainConfig::default()
        }
    }

    fn tiny_region(seed: u64) -> Region {
        gen_region(&SynthConfig {
            width: 32,
            height: 24,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = TrainConfig { lr: 0.0, ..tiny_cfg() };
        let mut t = Trainer::new(cfg, &[tiny_region(1)]).unwrap();
        let before = t.model().params.clone();
        for _ in 0..2 {
            t.run_epoch().unwrap();
        }
        assert_eq!(t.model().params, before);
    }

    #[test]
    fn single_sgd_step_matches_hand_update() {
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            batch_size: 64,
            lr: 0.05,
            loss: LossConfig {
                scheme: LossScheme::CeEva,
                ..LossConfig::default()
            },
            ..tiny_cfg()
        };
        let region = tiny_region(2);
        let mut t = Trainer::new(cfg.clone(), std::slice::from_ref(&region)).unwrap();
        let model = t.model().clone();
        // Hand oracle: sum the per-patch gradients in visiting order, one SGD step.
        let mut want = model.params.clone();
        let mut grads = model.params.zero_grads();
        for i in t.epoch_order(1) {
            let (_, g) = model.patch_gradients(&t.patches[i], &cfg.loss).unwrap();
            for (a, p) in grads.iter_mut().zip(&g) {
                for (x, &v) in a.iter_mut().zip(p) {
                    *x += v;
                }
            }
        }
        for (w, g) in want.tensors_mut().iter_mut().zip(&grads) {
            sgd_step(w.data_mut(), g, cfg.lr);
        }
        t.run_epoch().unwrap();
        assert_eq!(t.model().params, want);
        assert_ne!(want, model.params);
    }

    #[test]
    fn same_seed_same_curve() {
        let regions = [tiny_region(3), tiny_region(4)];
        let run = || {
            let mut t = Trainer::new(tiny_cfg(), &regions).unwrap();
            let curve: Vec<f64> = (0..2).map(|_| t.run_epoch().unwrap().mean_loss).collect();
            (curve, t.checkpoint().to_bytes())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn epoch_orders_differ_but_repeat() {
        let t = Trainer::new(tiny_cfg(), &[tiny_region(6), tiny_region(7)]).unwrap();
        assert!(t.patch_count() > 2);
        assert_eq!(t.epoch_order(1), t.epoch_order(1));
        let mut sorted = t.epoch_order(2);
        sorted.sort_unstable();
        assert_eq!(sorted, (0..t.patch_count()).collect::<Vec<_>>());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let regions = [tiny_region(8)];
        let dir = tempfile::tempdir().unwrap();
        let full = train(&TrainConfig { epochs: 3, ..tiny_cfg() }, &regions, dir.path().join("full"), None).unwrap();

        let part = dir.path().join("part");
        let first = train(&TrainConfig { epochs: 1, ..tiny_cfg() }, &regions, &part, None).unwrap();
        let rest = train(
            &TrainConfig { epochs: 3, ..tiny_cfg() },
            &regions,
            &part,
            Some(&first.final_checkpoint),
        )
        .unwrap();
        assert_eq!(rest.history.iter().map(|s| s.epoch).collect::<Vec<_>>(), [2, 3]);
        assert_eq!(rest.model.params, full.model.params);
        let read = |d: &Path| fs::read_to_string(d.join(LOSS_FILE)).unwrap();
        assert_eq!(read(&part), read(&dir.path().join("full")));
        assert!(read(&part).starts_with("epoch,mean_loss\n1,"));
    }

    #[test]
    fn rejects_unlabeled_data_and_empty_sets() {
        let mut region = tiny_region(9);
        region.labels = crate::raster::LabelMap::filled(region.width(), region.height(), 0).unwrap();
        assert!(matches!(Trainer::new(tiny_cfg(), &[region]), Err(Error::NoLabeledPixels)));
        assert!(matches!(Trainer::new(tiny_cfg(), &[]), Err(Error::Config(_))));
    }
}

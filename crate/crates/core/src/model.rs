//! EvaNet: a U-shaped encoder-decoder whose convolutions are elevation-regulated.
//!
//! An ERC layer runs two parallel convolutions. The elevation branch becomes a
//! gate `y_e = sigmoid(conv(x_e))` and the spectral branch is multiplied by it,
//! `y = conv(x) ⊗ y_e`. The gate itself is the elevation input of the next layer.
//!
//! Output scores are `[2, P, P]` with channel 0 = dry score, channel 1 = flood score.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Max,
    Avg,
}

/// How the elevation branch modulates the spectral branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Glu,
}

/// Nonlinearity applied to the gated spectral output inside blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaNetConfig {
    pub blocks: usize,
    pub base_channels: usize,
    pub spectral_channels: usize,
    /// Without the elevation path every gate is the constant 1.
    pub use_elevation: bool,
    pub patch_size: usize,
    pub fusion: Fusion,
    pub pooling_spectral: Pooling,
    pub pooling_elevation: Pooling,
    pub skip_connections: bool,
    pub spectral_activation: Activation,
}

impl Default for EvaNetConfig {
    fn default() -> Self {
        EvaNetConfig {
            blocks: 3,
            base_channels: 8,
            spectral_channels: 6,
            use_elevation: true,
            patch_size: 128,
            fusion: Fusion::Glu,
            pooling_spectral: Pooling::Max,
            pooling_elevation: Pooling::Avg,
            skip_connections: true,
            spectral_activation: Activation::Relu,
        }
    }
}

impl EvaNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.base_channels == 0 || self.spectral_channels == 0 {
            return Err(Error::Config("blocks, base_channels and spectral_channels must be positive".into()));
        }
        let factor = 1usize
            .checked_shl(self.blocks as u32)
            .filter(|f| *f <= self.patch_size)
            .ok_or_else(|| Error::Config(format!("{} blocks is too deep for patch {}", self.blocks, self.patch_size)))?;
        if !self.patch_size.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "patch size {} is not divisible by 2^{}",
                self.patch_size, self.blocks
            )));
        }
        Ok(())
    }

    /// Channel width of block `b`.
    pub fn width(&self, b: usize) -> usize {
        self.base_channels << b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ErcLayer {
    pub spectral_conv: ConvParams,
    /// Absent when the model has no elevation path.
    pub elevation_conv: Option<ConvParams>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderBlock {
    pub up_spectral: ConvParams,
    pub up_elevation: Option<ConvParams>,
    pub layers: [ErcLayer; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaNet {
    pub config: EvaNetConfig,
    pub encoder: Vec<[ErcLayer; 2]>,
    /// Deepest block first.
    pub decoder: Vec<DecoderBlock>,
    pub head: ConvParams,
}

fn add_conv<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, w_dims: [usize; 4], bias: usize) -> ConvParams {
    ConvParams {
        w: store.push(format!("{prefix}.w"), Tensor::zeros(w_dims.to_vec())),
        b: store.push(format!("{prefix}.b"), Tensor::zeros(vec![bias])),
    }
}

fn add_erc<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cin: usize,
    cin_elev: usize,
    cout: usize,
    elevation: bool,
) -> ErcLayer {
    ErcLayer {
        spectral_conv: add_conv(store, &format!("{prefix}.spec"), [cout, cin, 3, 3], cout),
        elevation_conv: elevation.then(|| add_conv(store, &format!("{prefix}.elev"), [cout, cin_elev, 3, 3], cout)),
    }
}

impl EvaNet {
    /// Lays out every parameter (zero-filled) in `store` and returns the wiring.
    pub fn build<T: Scalar>(config: EvaNetConfig, store: &mut ParamStore<T>) -> Result<EvaNet> {
        config.validate()?;
        let elev = config.use_elevation;
        let mut encoder = Vec::with_capacity(config.blocks);
        let (mut cin, mut cin_e) = (config.spectral_channels, 1);
        for b in 0..config.blocks {
            let c = config.width(b);
            encoder.push([
                add_erc(store, &format!("enc.{b}.0"), cin, cin_e, c, elev),
                add_erc(store, &format!("enc.{b}.1"), c, c, c, elev),
            ]);
            cin = c;
            cin_e = c;
        }
        let mut decoder = Vec::with_capacity(config.blocks);
        for b in (0..config.blocks).rev() {
            let c = config.width(b);
            let up_spectral = add_conv(store, &format!("dec.{b}.up.spec"), [cin, c, 3, 3], c);
            let up_elevation = elev.then(|| add_conv(store, &format!("dec.{b}.up.elev"), [cin, c, 3, 3], c));
            let merged = if config.skip_connections { 2 * c } else { c };
            decoder.push(DecoderBlock {
                up_spectral,
                up_elevation,
                layers: [
                    add_erc(store, &format!("dec.{b}.0"), merged, c, c, elev),
                    add_erc(store, &format!("dec.{b}.1"), c, c, c, elev),
                ],
            });
            cin = c;
        }
        let head = add_conv(store, "head", [2, cin, 1, 1], 2);
        Ok(EvaNet {
            config,
            encoder,
            decoder,
            head,
        })
    }

    /// Fresh model with seeded initialization.
    pub fn new<T: Scalar>(config: EvaNetConfig, seed: u64) -> Result<(EvaNet, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let net = EvaNet::build(config, &mut store)?;
        init_params(&mut store, seed);
        Ok((net, store))
    }

    /// Scores `[2, P, P]` for one patch. `params` are the store's tensors bound
    /// into `g` (see [`ParamStore::bind`]); `elevation` is the normalized `[1, P, P]`
    /// elevation and is required exactly when the elevation path exists.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, params: &[Var], spectral: Var, elevation: Option<Var>) -> Result<Var> {
        self.forward_traced(g, params, spectral, elevation, &mut |_, _| {})
    }

    /// [`EvaNet::forward`] that reports `(stage, dims)` after every block.
    pub fn forward_traced<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        spectral: Var,
        elevation: Option<Var>,
        trace: &mut dyn FnMut(&str, &[usize]),
    ) -> Result<Var> {
        let cfg = &self.config;
        let p = cfg.patch_size;
        if g.dims(spectral) != [cfg.spectral_channels, p, p] {
            return Err(Error::shape(
                "evanet",
                format!("spectral {:?}, expected [{}, {p}, {p}]", g.dims(spectral), cfg.spectral_channels),
            ));
        }
        match (cfg.use_elevation, elevation) {
            (true, Some(e)) if g.dims(e) == [1, p, p] => {}
            (false, None) => {}
            (true, Some(e)) => {
                return Err(Error::shape("evanet", format!("elevation {:?}, expected [1, {p}, {p}]", g.dims(e))))
            }
            (true, None) => return Err(Error::shape("evanet", "model needs an elevation input")),
            (false, Some(_)) => return Err(Error::shape("evanet", "model has no elevation path")),
        }

        let (mut x, mut xe) = (spectral, elevation);
        let mut skips = Vec::with_capacity(cfg.blocks);
        for (b, layers) in self.encoder.iter().enumerate() {
            for layer in layers {
                (x, xe) = self.block_layer(g, params, layer, x, xe)?;
            }
            skips.push(x);
            x = pool(g, x, cfg.pooling_spectral)?;
            xe = xe.map(|e| pool(g, e, cfg.pooling_elevation)).transpose()?;
            trace(&format!("enc.{b}"), g.dims(x));
        }
        for (i, (block, skip)) in self.decoder.iter().zip(skips.into_iter().rev()).enumerate() {
            x = conv_t(g, params, block.up_spectral, x)?;
            xe = match (block.up_elevation, xe) {
                (Some(up), Some(e)) => Some(conv_t(g, params, up, e)?),
                _ => None,
            };
            if cfg.skip_connections {
                x = g.concat_channels(x, skip)?;
            }
            for layer in &block.layers {
                (x, xe) = self.block_layer(g, params, layer, x, xe)?;
            }
            trace(&format!("dec.{}", cfg.blocks - 1 - i), g.dims(x));
        }
        let scores = conv(g, params, self.head, x)?;
        trace("head", g.dims(scores));
        Ok(scores)
    }

    fn block_layer<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        layer: &ErcLayer,
        x: Var,
        xe: Option<Var>,
    ) -> Result<(Var, Option<Var>)> {
        let (y, ye) = erc_forward(g, params, layer, x, xe)?;
        let y = match self.config.spectral_activation {
            Activation::Relu => g.relu(y),
            Activation::None => y,
        };
        Ok((y, ye))
    }
}

fn conv<T: Scalar>(g: &mut Graph<T>, params: &[Var], c: ConvParams, x: Var) -> Result<Var> {
    g.conv2d(x, params[c.w.index()], params[c.b.index()])
}

fn conv_t<T: Scalar>(g: &mut Graph<T>, params: &[Var], c: ConvParams, x: Var) -> Result<Var> {
    g.conv_transpose2d(x, params[c.w.index()], params[c.b.index()])
}

fn pool<T: Scalar>(g: &mut Graph<T>, x: Var, kind: Pooling) -> Result<Var> {
    match kind {
        Pooling::Max => g.max_pool2(x),
        Pooling::Avg => g.avg_pool2(x),
    }
}

/// One ERC layer: `y_e = sigmoid(conv(x_e))`, `y = conv(x) ⊗ y_e`. Without an
/// elevation branch the gate is 1 and `y = conv(x)`.
pub fn erc_forward<T: Scalar>(
    g: &mut Graph<T>,
    params: &[Var],
    layer: &ErcLayer,
    x: Var,
    x_e: Option<Var>,
) -> Result<(Var, Option<Var>)> {
    let spec = conv(g, params, layer.spectral_conv, x)?;
    match (layer.elevation_conv, x_e) {
        (Some(ec), Some(xe)) => {
            if g.dims(x)[1..] != g.dims(xe)[1..] {
                return Err(Error::shape(
                    "erc",
                    format!("spectral {:?} vs elevation {:?}", g.dims(x), g.dims(xe)),
                ));
            }
            let pre = conv(g, params, ec, xe)?;
            let gate = g.sigmoid(pre);
            Ok((g.mul(spec, gate)?, Some(gate)))
        }
        (None, None) => Ok((spec, None)),
        _ => Err(Error::shape("erc", "elevation input and elevation branch must both be present")),
    }
}

/// Kaiming-uniform fan-in initialization (`U(±sqrt(6 / fan_in))`) for every
/// kernel, zero biases. Kernels are recognized by rank 4; fan-in is
/// `dims[1]·k·k`.
pub fn init_params<T: Scalar>(store: &mut ParamStore<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in store.tensors_mut() {
        if let &[_, fan, kh, kw] = t.dims() {
            let bound = (6.0 / (fan * kh * kw) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for v in t.data_mut() {
                *v = T::of(dist.sample(&mut rng));
            }
        } else {
            t.data_mut().fill(T::zero());
        }
    }
}

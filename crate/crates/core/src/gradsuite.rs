//! Named finite-difference checks covering every graph operator, the ERC
//! layer, a small full network and the three loss schemes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, GradCheckConfig, GradCheckReport, Graph, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::loss::{loss_ce, loss_total, LossConfig, LossScheme, Reduce, Weighting};
use crate::model::{erc_forward, ConvParams, ErcLayer, EvaNet, EvaNetConfig};
use crate::raster::{ElevationMap, LabelMap};

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: String,
    pub report: GradCheckReport,
}

fn rand_tensor(rng: &mut ChaCha8Rng, dims: Vec<usize>) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("dims match data")
}

/// `Σ c ⊙ v` with fixed random `c`, so every output entry reaches the root.
fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (0..g.value(v).len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let p = g.mul_const(v, c)?;
    Ok(g.sum(p))
}

type Case = (String, Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>);

fn unary(name: &str, x: &Tensor<f64>, seed: u64, op: fn(&mut Graph<f64>, Var) -> Result<Var>) -> Case {
    (
        name.to_owned(),
        vec![x.clone()],
        Box::new(move |g, v| {
            let y = op(g, v[0])?;
            project(g, y, seed)
        }),
    )
}

fn binary(name: &str, a: &Tensor<f64>, b: &Tensor<f64>, seed: u64, op: fn(&mut Graph<f64>, Var, Var) -> Result<Var>) -> Case {
    (
        name.to_owned(),
        vec![a.clone(), b.clone()],
        Box::new(move |g, v| {
            let y = op(g, v[0], v[1])?;
            project(g, y, seed)
        }),
    )
}

fn operator_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let x = rand_tensor(rng, vec![2, 4, 6]);
    let pos = Tensor::new(x.dims().to_vec(), x.data().iter().map(|v| v.abs() + 0.5).collect()).expect("same dims");
    let a = rand_tensor(rng, vec![2, 3, 4]);
    let b = rand_tensor(rng, vec![2, 3, 4]);
    let mask: Vec<bool> = (0..a.len()).map(|i| i % 3 == 0).collect();
    let conv = vec![rand_tensor(rng, vec![2, 5, 6]), rand_tensor(rng, vec![3, 2, 3, 3]), rand_tensor(rng, vec![3])];
    let convt = vec![rand_tensor(rng, vec![2, 4, 3]), rand_tensor(rng, vec![2, 3, 3, 3]), rand_tensor(rng, vec![3])];
    let scale: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

    vec![
        (
            "conv2d".into(),
            conv,
            Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], v[2])?;
                project(g, y, 1)
            }),
        ),
        (
            "conv_transpose2d".into(),
            convt,
            Box::new(|g, v| {
                let y = g.conv_transpose2d(v[0], v[1], v[2])?;
                project(g, y, 2)
            }),
        ),
        unary("max_pool2", &x, 3, |g, v| g.max_pool2(v)),
        unary("avg_pool2", &x, 4, |g, v| g.avg_pool2(v)),
        unary("sigmoid", &x, 5, |g, v| Ok(g.sigmoid(v))),
        unary("relu", &x, 6, |g, v| Ok(g.relu(v))),
        unary("log", &pos, 7, |g, v| Ok(g.log(v))),
        unary("affine", &x, 8, |g, v| Ok(g.affine(v, -1.5, 0.25))),
        unary("softmax_channels", &x, 9, |g, v| g.softmax_channels(v)),
        unary("log_softmax_channels", &x, 10, |g, v| g.log_softmax_channels(v)),
        unary("channel+repeat_channels", &x, 11, |g, v| {
            let c = g.channel(v, 1)?;
            g.repeat_channels(c, 3)
        }),
        (
            "mul_const+sum".into(),
            vec![x.clone()],
            Box::new(move |g, v| {
                let y = g.mul_const(v[0], scale.clone())?;
                Ok(g.sum(y))
            }),
        ),
        binary("mul", &a, &b, 12, |g, x, y| g.mul(x, y)),
        binary("add", &a, &b, 13, |g, x, y| g.add(x, y)),
        binary("concat_channels", &a, &b, 14, |g, x, y| g.concat_channels(x, y)),
        (
            "select".into(),
            vec![a, b],
            Box::new(move |g, v| {
                let y = g.select(mask.clone(), v[0], v[1])?;
                project(g, y, 15)
            }),
        ),
    ]
}

fn erc_case(rng: &mut ChaCha8Rng) -> Case {
    let mut store = ParamStore::<f64>::new();
    let mut conv = |store: &mut ParamStore<f64>, name: &str, cout: usize, cin: usize| ConvParams {
        w: store.push(format!("{name}.w"), rand_tensor(rng, vec![cout, cin, 3, 3])),
        b: store.push(format!("{name}.b"), rand_tensor(rng, vec![cout])),
    };
    let layer = ErcLayer {
        spectral_conv: conv(&mut store, "spec", 3, 2),
        elevation_conv: Some(conv(&mut store, "elev", 3, 1)),
    };
    let mut inputs = store.tensors().to_vec();
    inputs.push(rand_tensor(rng, vec![2, 5, 6]));
    inputs.push(rand_tensor(rng, vec![1, 5, 6]));
    (
        "erc_layer".into(),
        inputs,
        Box::new(move |g, v| {
            let (y, gate) = erc_forward(g, &v[..4], &layer, v[4], Some(v[5]))?;
            let py = project(g, y, 16)?;
            let pg = project(g, gate.expect("elevation branch present"), 17)?;
            g.add(py, pg)
        }),
    )
}

fn model_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let cfg = EvaNetConfig {
        blocks: 2,
        base_channels: 4,
        spectral_channels: 3,
        patch_size: 16,
        ..EvaNetConfig::default()
    };
    let (net, store) = EvaNet::new::<f64>(cfg, 21)?;
    let mut inputs: Vec<Tensor<f64>> = store.tensors().to_vec();
    // Non-zero biases so every bias path is exercised away from its initial value.
    for t in inputs.iter_mut().filter(|t| t.dims().len() == 1) {
        for v in t.data_mut() {
            *v = 0.1 * rng.gen_range(-1.0..1.0);
        }
    }
    inputs.push(Tensor::chw(3, 16, 16, (0..768).map(|_| rng.gen()).collect())?);
    inputs.push(Tensor::chw(1, 16, 16, (0..256).map(|_| rng.gen()).collect())?);
    let np = store.len();
    Ok((
        "evanet_2block_p16".into(),
        inputs,
        Box::new(move |g, v| {
            let scores = net.forward(g, &v[..np], v[np], Some(v[np + 1]))?;
            project(g, scores, 18)
        }),
    ))
}

fn loss_cases(rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let (w, h) = (5, 4);
    let scores = rand_tensor(rng, vec![2, h, w]);
    let gt = LabelMap::from_vec(w, h, (0..w * h).map(|_| rng.gen_range(-1..=1)).collect())?;
    let elev = ElevationMap::from_vec(w, h, (0..w * h).map(|_| rng.gen_range(0.0..5.0)).collect())?;
    let mut cases: Vec<Case> = Vec::new();
    let gt_ce = gt.clone();
    cases.push((
        "loss_ce".into(),
        vec![scores.clone()],
        Box::new(move |g, v| loss_ce(g, v[0], &gt_ce, Reduce::MeanPerLabeled)),
    ));
    let schemes = [
        (LossScheme::Eva, Weighting::Binary, "loss_eva/binary"),
        (LossScheme::Eva, Weighting::EvaDiff, "loss_eva/eva_diff"),
        (LossScheme::Eva, Weighting::LogEvaDiff, "loss_eva/log_eva_diff"),
        (LossScheme::CeEva, Weighting::Binary, "loss_hybrid"),
    ];
    for (scheme, weighting, name) in schemes {
        let cfg = LossConfig {
            scheme,
            weighting,
            lambda: 0.7,
            ..LossConfig::default()
        };
        let (gt, elev) = (gt.clone(), elev.clone());
        cases.push((
            name.into(),
            vec![scores.clone()],
            Box::new(move |g, v| loss_total(g, v[0], &gt, &elev, &cfg)),
        ));
    }
    Ok(cases)
}

/// Runs every case at float64. `samples_per_input` in `cfg` caps the entries
/// checked per tensor; the full network always samples 3 per tensor.
pub fn run_suite(cfg: &GradCheckConfig) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cases = operator_cases(&mut rng);
    cases.push(erc_case(&mut rng));
    let model = model_case(&mut rng)?;
    cases.extend(loss_cases(&mut rng)?);

    let mut out = Vec::new();
    for (name, inputs, f) in cases {
        let report = grad_check(&inputs, cfg, f)?;
        out.push(SuiteResult { name, report });
    }
    let (name, inputs, f) = model;
    let model_cfg = GradCheckConfig {
        samples_per_input: Some(cfg.samples_per_input.unwrap_or(3).min(3)),
        ..cfg.clone()
    };
    let report = grad_check(&inputs, &model_cfg, f)?;
    out.push(SuiteResult { name, report });
    Ok(out)
}

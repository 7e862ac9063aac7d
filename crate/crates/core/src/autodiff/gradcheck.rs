//! Central finite-difference gradient checking.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Entries checked per input tensor; `None` checks every entry.
    pub samples_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-3,
            tol: 1e-4,
            samples_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Pass,
    Fail,
    /// One-sided derivatives disagree at the sample (pool tie, relu zero,
    /// branch switch); the sample is reported and skipped.
    Kink,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub status: SampleStatus,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tol: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.status != SampleStatus::Fail)
    }

    pub fn checked(&self) -> usize {
        self.entries.iter().filter(|e| e.status != SampleStatus::Kink).count()
    }

    pub fn kinks(&self) -> usize {
        self.entries.len() - self.checked()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.status != SampleStatus::Kink)
            .map(|e| e.rel_err)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>5} {:>7} {:>14} {:>14} {:>10}  status", "input", "index", "analytic", "numeric", "rel_err")?;
        for e in &self.entries {
            writeln!(
                f,
                "{:>5} {:>7} {:>14.6e} {:>14.6e} {:>10.2e}  {:?}",
                e.input, e.index, e.analytic, e.numeric, e.rel_err, e.status
            )?;
        }
        write!(
            f,
            "checked {} (kinks skipped {}), max rel err {:.3e}, tol {:.1e}: {}",
            self.checked(),
            self.kinks(),
            self.max_rel_err(),
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences, for every input (or a seeded sample of entries per input).
///
/// Differences are taken at `eps`, `eps / 10` and `eps / 100`. If the gap between
/// the one-sided slopes persists as the step shrinks, the function has a kink at
/// the sample and the entry is marked [`SampleStatus::Kink`]. Otherwise the widest
/// step whose central difference agrees with the next narrower one is used; when
/// no pair agrees, a kink lies too close to the sample and it is also skipped.
pub fn grad_check<F>(inputs: &[Tensor<f64>], cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    let f0 = g.scalar_value(root);
    drop(g);

    let eval = |work: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = work.iter().map(|t| g.input(t.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok(g.scalar_value(root))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = inputs.to_vec();
    let mut entries = Vec::new();
    let noise = 1e-10 * (1.0 + f0.abs());
    for (ti, t) in inputs.iter().enumerate() {
        let mut idxs: Vec<usize> = match cfg.samples_per_input {
            Some(n) if n < t.len() => sample(&mut rng, t.len(), n).into_vec(),
            _ => (0..t.len()).collect(),
        };
        idxs.sort_unstable();
        for idx in idxs {
            let orig = t.data()[idx];
            let mut at = |delta: f64| -> Result<f64> {
                work[ti].data_mut()[idx] = orig + delta;
                let v = eval(&work);
                work[ti].data_mut()[idx] = orig;
                v
            };
            let steps = [cfg.eps, cfg.eps / 10.0, cfg.eps / 100.0];
            let mut central = [0.0; 3];
            let mut jump = [0.0; 3];
            for (i, &h) in steps.iter().enumerate() {
                let (fp, fm) = (at(h)?, at(-h)?);
                central[i] = (fp - fm) / (2.0 * h);
                jump[i] = ((fp - f0) / h - (f0 - fm) / h).abs();
            }
            let at_sample = jump[1] > noise / steps[1] && jump[2] > 0.5 * jump[1];
            let agree = |a: f64, b: f64| relative_error(a, b) <= cfg.tol / 10.0;

            let a = analytic[ti][idx];
            let (numeric, kink) = if at_sample {
                (central[2], true)
            } else if agree(central[0], central[1]) {
                (central[0], false)
            } else if agree(central[1], central[2]) {
                (central[2], false)
            } else {
                (central[2], true)
            };
            let rel_err = relative_error(a, numeric);
            let status = if kink {
                SampleStatus::Kink
            } else if rel_err <= cfg.tol {
                SampleStatus::Pass
            } else {
                SampleStatus::Fail
            };
            entries.push(GradCheckEntry {
                input: ti,
                index: idx,
                analytic: a,
                numeric,
                rel_err,
                status,
            });
        }
    }
    Ok(GradCheckReport { tol: cfg.tol, entries })
}

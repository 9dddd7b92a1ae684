//! Rate-distortion training: loss assembly, Adam, deterministic
//! stepping, and bit-exact checkpoint/resume.
//!
//! Every source of randomness is derived from explicit seeds, so two
//! runs with the same inputs produce byte-identical parameters.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tensor};
use crate::model::{fnv1a64, Forward, ForwardMode, SadnModel};
use crate::{Error, Result};

/// Trade-off weights each trained operating point targets. The stream
/// header records the index into this grid.
pub const LAMBDA_GRID: [f64; 4] = [0.01, 0.05, 0.25, 1.0];

/// Grid index of an exactly matching weight, if any.
pub fn lambda_index_of(lambda: f64) -> Option<u8> {
    LAMBDA_GRID.iter().position(|&l| l == lambda).map(|i| i as u8)
}

/// Grid weight for a stream header index.
pub fn lambda_of_index(index: u8) -> Option<f64> {
    LAMBDA_GRID.get(index as usize).copied()
}

/// Loss and its two reported components, as graph nodes.
pub struct LossNodes {
    pub loss: NodeId,
    /// Estimated bits per lenslet pixel.
    pub bpp: NodeId,
    /// Mean squared reconstruction error over all samples.
    pub mse: NodeId,
}

/// Appends `rate + lambda * distortion` to a forward pass. Rate is
/// normalized by lenslet pixels (height times width, not channels).
pub fn rd_loss(f: &mut Forward, lambda: f64) -> Result<LossNodes> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive and finite, got {lambda}")));
    }
    let [_, _, h, w] = f.graph.value(f.input).shape();
    let g = &mut f.graph;
    let bpp = g.scale(f.rate_bits, 1.0 / (h * w) as f64)?;
    let diff = g.sub(f.reconstruction, f.input)?;
    let sq = g.square(diff)?;
    let mse = g.mean(sq)?;
    let weighted = g.scale(mse, lambda)?;
    let loss = g.add(bpp, weighted)?;
    Ok(LossNodes { loss, bpp, mse })
}

/// Adam optimizer state. Serialized into checkpoints so a resumed run
/// continues bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

impl AdamState {
    /// Fresh state with zero moments for every model parameter.
    pub fn new(model: &SadnModel, lr: f64) -> Self {
        let zeros: BTreeMap<String, Tensor> = model
            .params
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// One bias-corrected update of every parameter in place.
    pub fn apply(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, param) in params.iter_mut() {
            let grad = grads
                .get(name)
                .ok_or_else(|| Error::Config(format!("no gradient for parameter {name}")))?;
            if grad.shape() != param.shape() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} for parameter {name} of shape {:?}",
                    grad.shape(),
                    param.shape()
                )));
            }
            let m = self
                .first
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("no first moment for {name}")))?;
            let v = self
                .second
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("no second moment for {name}")))?;
            let (pd, gd) = (param.data_mut(), grad.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                pd[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// What one optimization step observed, before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub bpp: f64,
    pub mse: f64,
}

/// Deterministic per-purpose seed stream.
pub fn derive_seed(seed: u64, purpose: &str, counter: u64) -> u64 {
    let mut bytes = Vec::with_capacity(purpose.len() + 16);
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(purpose.as_bytes());
    bytes.extend_from_slice(&counter.to_le_bytes());
    fnv1a64(&bytes)
}

/// One noise-quantized forward/backward pass and Adam update on a single
/// lenslet patch.
pub fn train_step(
    model: &mut SadnModel,
    adam: &mut AdamState,
    patch: &Tensor,
    lambda: f64,
    noise_seed: u64,
) -> Result<StepStats> {
    let mut fwd = model.forward(patch, ForwardMode::Train { noise_seed })?;
    let nodes = rd_loss(&mut fwd, lambda)?;
    let stats = StepStats {
        loss: fwd.graph.value(nodes.loss).item()?,
        bpp: fwd.graph.value(nodes.bpp).item()?,
        mse: fwd.graph.value(nodes.mse).item()?,
    };
    if !stats.loss.is_finite() {
        return Err(Error::Numeric(format!("loss diverged: {}", stats.loss)));
    }
    fwd.graph.backward(nodes.loss)?;
    let mut grads = BTreeMap::new();
    for (name, id) in &fwd.param_ids {
        let g = fwd
            .graph
            .grad(*id)
            .ok_or_else(|| Error::Numeric(format!("no gradient reached parameter {name}")))?;
        if !g.is_finite() {
            return Err(Error::Numeric(format!("gradient for {name} is not finite")));
        }
        grads.insert(name.clone(), g.clone());
    }
    adam.apply(&mut model.params, &grads)?;
    Ok(stats)
}

/// Schedule for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub lambda: f64,
    pub steps: u64,
    pub lr: f64,
    pub seed: u64,
}

/// Outcome of a [`fit`] run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub steps_run: u64,
    pub last: StepStats,
}

/// Optimizes the model over shuffled patch epochs for a fixed number of
/// steps, reporting every step to `log`. Resumes cleanly: the step
/// counter in `adam` decides which seeds and patch order come next.
pub fn fit(
    model: &mut SadnModel,
    adam: &mut AdamState,
    patches: &[Tensor],
    cfg: &FitConfig,
    mut log: impl FnMut(u64, &StepStats),
) -> Result<FitReport> {
    if patches.is_empty() {
        return Err(Error::Config("no training patches".into()));
    }
    if cfg.steps == 0 {
        return Err(Error::Config("zero training steps".into()));
    }
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(Error::Config(format!("learning rate {} must be positive", cfg.lr)));
    }
    adam.lr = cfg.lr; // the schedule owns the rate, even across resumes
    let per_epoch = patches.len() as u64;
    let mut last = StepStats { loss: f64::NAN, bpp: f64::NAN, mse: f64::NAN };
    let mut steps_run = 0;
    while steps_run < cfg.steps {
        let step = adam.step; // global position, survives resume
        let epoch = step / per_epoch;
        let within = (step % per_epoch) as usize;
        let mut order: Vec<usize> = (0..patches.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "epoch", epoch));
        order.shuffle(&mut rng);
        let patch = &patches[order[within]];
        let noise_seed = derive_seed(cfg.seed, "noise", step);
        last = train_step(model, adam, patch, cfg.lambda, noise_seed)?;
        log(step, &last);
        steps_run += 1;
    }
    Ok(FitReport { steps_run, last })
}

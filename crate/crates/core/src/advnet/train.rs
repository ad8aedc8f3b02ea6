//! Adversarial training: the discriminator head learns to separate real
//! normal patches from generated ones, the generator learns to fool it.
//! The frozen extractor receives no updates, so the discriminator step
//! never has to backpropagate below the head.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::patches::Patch;
use crate::tensor::Tensor;

use super::{
    disc_input, extractor_backward, extractor_forward_cached, generator_backward,
    generator_forward_cached, head_backward, head_forward_cached, init_discriminator,
    init_generator, ops, DiscriminatorSpec, GeneratorSpec, Gradients, NetworkParams,
};

/// One-sided label smoothing for the real class; keeps the discriminator
/// from saturating early and stalling the generator.
const REAL_LABEL: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 16000,
            batch_size: 64,
            learning_rate: 2e-4,
            seed: 0,
            optimizer: OptimizerKind::default(),
        }
    }
}

/// Per-iteration training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Fraction of the iteration's real/fake samples the discriminator
    /// classified correctly at threshold 0.5.
    pub d_accuracy: f64,
}

pub struct TrainOutput {
    pub generator: NetworkParams,
    pub discriminator: NetworkParams,
    pub trace: Vec<TraceRow>,
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    fn apply(&mut self, params: &mut NetworkParams, grads: &Gradients) -> Result<()> {
        self.step += 1;
        for (name, g) in grads.iter() {
            if params.is_frozen(name) {
                continue;
            }
            let theta = params.get_mut(name)?;
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, &gv) in theta.data_mut().iter_mut().zip(g.data()) {
                        *p -= self.lr * gv;
                    }
                }
                OptimizerKind::Adam {
                    beta1,
                    beta2,
                    epsilon,
                } => {
                    let m = self
                        .m
                        .entry(String::from(name))
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    let v = self
                        .v
                        .entry(String::from(name))
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    let bc1 = 1.0 - beta1.powi(self.step as i32);
                    let bc2 = 1.0 - beta2.powi(self.step as i32);
                    for (((p, &gv), mv), vv) in theta
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *p -= self.lr * mhat / (vhat.sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Binary cross-entropy of a sigmoid logit against a target in `[0, 1]`,
/// computed in the stable softplus form.
fn bce(logit: f64, target: f64) -> f64 {
    target * ops::softplus(-logit) + (1.0 - target) * ops::softplus(logit)
}

/// Trains the adversarial pair on normal patches.
///
/// Each iteration updates the discriminator head on a half-real half-fake
/// batch (binary cross-entropy) and then the generator on a fresh noise
/// batch against `-ln D(G(z))`. Frozen tensors are never touched; the
/// entire run is determined by `cfg.seed`.
pub fn train(
    patches: &[Patch],
    gspec: &GeneratorSpec,
    dspec: &DiscriminatorSpec,
    pretrained_extractor: Option<&NetworkParams>,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    gspec.validate()?;
    dspec.validate()?;
    if cfg.iterations == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidParam("iterations and batch_size must be >= 1"));
    }
    if cfg.learning_rate < 0.0 {
        return Err(Error::InvalidParam("learning_rate must be non-negative"));
    }
    if patches.is_empty() {
        return Err(Error::EmptyInput("training patches"));
    }
    if patches.len() < cfg.batch_size {
        return Err(Error::InvalidParam("fewer patches than batch_size"));
    }
    for p in patches {
        if p.patch_size != gspec.patch_size || p.data.len() != 3 * p.patch_size * p.patch_size {
            return Err(Error::ShapeMismatch {
                name: String::from("training patch"),
                expected: alloc::vec![3, gspec.patch_size, gspec.patch_size],
                got: alloc::vec![p.data.len()],
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gen = init_generator(gspec, &mut rng)?;
    let mut disc = init_discriminator(dspec, pretrained_extractor, &mut rng)?;

    // discriminator inputs for the real patches, resized once
    let reals: Vec<Vec<f64>> = patches
        .iter()
        .map(|p| disc_input(&p.data, p.patch_size, dspec))
        .collect();

    let mut opt_d = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut opt_g = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let b = cfg.batch_size;

    for iteration in 0..cfg.iterations {
        // --- discriminator step ---
        let mut dgrads = Gradients::new();
        let mut d_loss = 0.0;
        let mut correct = 0usize;
        let denom = (2 * b) as f64;
        for _ in 0..b {
            let idx = rng.gen_range(0..reals.len());
            let ext = extractor_forward_cached(reals[idx].clone(), &dspec.extractor, &disc)?;
            let head = head_forward_cached(ext.features().to_vec(), &disc)?;
            d_loss += bce(head.logit, REAL_LABEL) / denom;
            if head.score > 0.5 {
                correct += 1;
            }
            head_backward((head.score - REAL_LABEL) / denom, &head, &disc, &mut dgrads, false)?;
        }
        for _ in 0..b {
            let z: Vec<f64> = (0..gspec.noise_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let (fake, _) = generator_forward_cached(&z, gspec, &gen)?;
            let x = disc_input(&fake, gspec.patch_size, dspec);
            let ext = extractor_forward_cached(x, &dspec.extractor, &disc)?;
            let head = head_forward_cached(ext.features().to_vec(), &disc)?;
            d_loss += bce(head.logit, 0.0) / denom;
            if head.score <= 0.5 {
                correct += 1;
            }
            head_backward(head.score / denom, &head, &disc, &mut dgrads, false)?;
        }
        opt_d.apply(&mut disc, &dgrads)?;

        // --- generator step ---
        let mut ggrads = Gradients::new();
        let mut g_loss = 0.0;
        for _ in 0..b {
            let z: Vec<f64> = (0..gspec.noise_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let (fake, gcache) = generator_forward_cached(&z, gspec, &gen)?;
            let x = disc_input(&fake, gspec.patch_size, dspec);
            let ext = extractor_forward_cached(x, &dspec.extractor, &disc)?;
            let head = head_forward_cached(ext.features().to_vec(), &disc)?;
            g_loss += ops::softplus(-head.logit) / b as f64;
            let mut scratch = Gradients::new(); // head grads discarded: G step must not move the head
            let dfeat = head_backward((head.score - 1.0) / b as f64, &head, &disc, &mut scratch, true)?
                .expect("feature gradient requested");
            let dx = extractor_backward(dfeat, &ext, &dspec.extractor, &disc, None)?;
            let dpatch = if gspec.patch_size == dspec.extractor.input_size {
                dx
            } else {
                let s = dspec.extractor.input_size;
                ops::resize_bilinear_bwd(&dx, (3, gspec.patch_size, gspec.patch_size), (s, s))
            };
            generator_backward(&dpatch, &gcache, gspec, &gen, &mut ggrads)?;
        }
        opt_g.apply(&mut gen, &ggrads)?;

        if !d_loss.is_finite() || !g_loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        trace.push(TraceRow {
            iteration,
            d_loss,
            g_loss,
            d_accuracy: correct as f64 / denom,
        });
    }

    Ok(TrainOutput {
        generator: gen,
        discriminator: disc,
        trace,
    })
}

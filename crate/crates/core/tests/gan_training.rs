//! Desk-scale adversarial training on synthetic pedestrian-like patches:
//! training dynamics stay healthy and the trained discriminator separates
//! normal from abnormal patches on held-out data.

use aed_core::advnet::{
    score_patches, train, Activation, DiscriminatorSpec, ExtLayer, ExtractorSpec, GenStage,
    GeneratorSpec, TrainConfig,
};
use aed_core::eval::roc;
use aed_core::patches::{extract, GridSpec, Patch};
use aed_core::preprocess;
use aed_core::synth::{synthesize, AgentSpec, AnomalySpec, Background, SceneSpec, ShapeKind};
use aed_core::{FrameSequence, GrayImage, GroundTruth};

const PATCH: usize = 16;

fn gen_spec() -> GeneratorSpec {
    let stage = |out_channels| GenStage {
        out_channels,
        kernel: 3,
        upsample: 2,
        activation: Activation::LeakyRelu,
    };
    GeneratorSpec {
        noise_dim: 32,
        patch_size: PATCH,
        project_channels: 16,
        stages: [
            stage(12),
            stage(10),
            stage(8),
            GenStage {
                out_channels: 3,
                kernel: 3,
                upsample: 2,
                activation: Activation::Sigmoid,
            },
        ],
    }
}

fn disc_spec() -> DiscriminatorSpec {
    DiscriminatorSpec {
        extractor: ExtractorSpec {
            input_size: PATCH,
            layers: vec![
                ExtLayer::Conv {
                    name: "conv1".into(),
                    in_channels: 3,
                    out_channels: 8,
                    kernel: 3,
                },
                ExtLayer::Relu,
                ExtLayer::MaxPool2,
                ExtLayer::Conv {
                    name: "conv2".into(),
                    in_channels: 8,
                    out_channels: 16,
                    kernel: 3,
                },
                ExtLayer::Relu,
                ExtLayer::MaxPool2,
            ],
        },
        head_hidden: 32,
    }
}

fn walker(x: f64, y: f64, speed: f64, size: usize, intensity: u8) -> AgentSpec {
    AgentSpec {
        shape: ShapeKind::Disk,
        size,
        speed,
        direction: 0.0,
        start: (x, y),
        intensity,
    }
}

fn scene(seed: u64, frames: usize) -> SceneSpec {
    SceneSpec {
        width: 96,
        height: 64,
        background: Background::Noise { seed: seed ^ 0xbead },
        agents: vec![
            walker(10.0, 14.0, 1.0, 10, 225),
            walker(45.0, 30.0, 1.0, 9, 195),
            walker(70.0, 48.0, 1.0, 11, 245),
        ],
        anomalies: vec![],
        num_frames: frames,
        seed,
    }
}

/// Full appearance-path front end: equalize, median background, foreground,
/// gated edges, stacks, grid patches.
fn pipeline_patches(seq: &FrameSequence, stride: usize) -> Vec<Patch> {
    let equalized: Vec<GrayImage> = seq.frames().iter().map(preprocess::equalize).collect();
    let eq_seq = FrameSequence::new("eq".into(), equalized.clone()).unwrap();
    let bg = preprocess::background_model(&eq_seq).unwrap();
    let masks: Vec<_> = equalized
        .iter()
        .map(|f| preprocess::foreground(f, &bg, preprocess::DEFAULT_TAU_FG).unwrap())
        .collect();
    let edges: Vec<_> = equalized
        .iter()
        .zip(&masks)
        .map(|(f, m)| preprocess::edges(f, m).unwrap())
        .collect();
    let grid = GridSpec::new(PATCH, stride).unwrap();
    let mut out = Vec::new();
    for t in 4..seq.len() {
        let stack = preprocess::stack(&edges, t).unwrap();
        out.extend(extract(&stack, &masks[t], &grid, 0.05).unwrap());
    }
    out
}

/// Fraction of a patch covered by the ground-truth mask at its frame.
fn mask_overlap(p: &Patch, gt: &GroundTruth) -> f64 {
    let Some(mask) = gt.mask(p.t) else {
        return 0.0;
    };
    let mut hit = 0usize;
    for y in p.origin.1..p.origin.1 + p.patch_size {
        for x in p.origin.0..p.origin.0 + p.patch_size {
            if mask.get(x, y) {
                hit += 1;
            }
        }
    }
    hit as f64 / (p.patch_size * p.patch_size) as f64
}

#[test]
fn adversarial_training_separates_abnormal_patches() {
    // train on normal walkers
    let (train_seq, _) = synthesize(&scene(1, 150)).unwrap();
    let train_patches = pipeline_patches(&train_seq, PATCH);
    assert!(
        train_patches.len() >= 200,
        "only {} training patches",
        train_patches.len()
    );

    let gspec = gen_spec();
    let dspec = disc_spec();
    let cfg = TrainConfig {
        iterations: 2000,
        batch_size: 32,
        seed: 7,
        ..Default::default()
    };
    let out = train(&train_patches, &gspec, &dspec, None, &cfg).unwrap();
    for r in out.trace.iter().step_by(100) {
        eprintln!("it={} d_loss={:.4} g_loss={:.4} d_acc={:.3}", r.iteration, r.d_loss, r.g_loss, r.d_accuracy);
    }

    // training dynamics: over the last 10% of iterations the discriminator
    // neither collapses to chance nor saturates, and the generator ends up
    // better than where it started
    let tail = &out.trace[cfg.iterations - cfg.iterations / 10..];
    let mean_acc: f64 = tail.iter().map(|r| r.d_accuracy).sum::<f64>() / tail.len() as f64;
    assert!(
        mean_acc > 0.5 && mean_acc < 1.0,
        "discriminator accuracy {mean_acc} left the (0.5, 1.0) band"
    );
    let mean_g: f64 = tail.iter().map(|r| r.g_loss).sum::<f64>() / tail.len() as f64;
    assert!(
        mean_g < out.trace[0].g_loss,
        "generator loss did not improve: {} -> {mean_g}",
        out.trace[0].g_loss
    );

    // held-out normal scene
    let (normal_seq, _) = synthesize(&scene(2, 60)).unwrap();
    let normal_patches = pipeline_patches(&normal_seq, PATCH);

    // abnormal scene: one walker goes 5x too fast, one cuts across
    let mut ab_scene = scene(3, 60);
    ab_scene.agents.push(walker(20.0, 40.0, 1.0, 10, 235));
    ab_scene.agents.push(walker(60.0, 20.0, 1.0, 10, 215));
    ab_scene.anomalies.push(AnomalySpec {
        agent: 3,
        start_frame: 0,
        end_frame: 59,
        speed: Some(5.0),
        direction: None,
        intensity: None,
    });
    ab_scene.anomalies.push(AnomalySpec {
        agent: 4,
        start_frame: 0,
        end_frame: 59,
        speed: Some(2.0),
        direction: Some(core::f64::consts::FRAC_PI_2),
        intensity: None,
    });
    let (ab_seq, ab_gt) = synthesize(&ab_scene).unwrap();
    let ab_patches: Vec<Patch> = pipeline_patches(&ab_seq, PATCH)
        .into_iter()
        .filter(|p| mask_overlap(p, &ab_gt) >= 0.25)
        .collect();
    assert!(
        normal_patches.len() >= 50 && ab_patches.len() >= 50,
        "{} normal / {} abnormal held-out patches",
        normal_patches.len(),
        ab_patches.len()
    );

    let normal_scores = score_patches(&normal_patches, &dspec, &out.discriminator).unwrap();
    let ab_scores = score_patches(&ab_patches, &dspec, &out.discriminator).unwrap();
    let mean = |v: &[(usize, f64)]| v.iter().map(|(_, s)| s).sum::<f64>() / v.len() as f64;
    let (mn, ma) = (mean(&normal_scores), mean(&ab_scores));
    eprintln!(
        "scores: normal mean {mn:.3}, abnormal mean {ma:.3} ({} vs {} patches)",
        normal_scores.len(),
        ab_scores.len()
    );
    assert!(
        mn - ma > 0.2,
        "mean normal-abnormal score gap {:.3} too small",
        mn - ma
    );

    // appearance-path separation: AUC of abnormality = 1 - score
    let mut scores: Vec<f64> = Vec::new();
    let mut labels: Vec<bool> = Vec::new();
    for (_, s) in &normal_scores {
        scores.push(1.0 - s);
        labels.push(false);
    }
    for (_, s) in &ab_scores {
        scores.push(1.0 - s);
        labels.push(true);
    }
    let curve = roc(&scores, &labels).unwrap();
    eprintln!("appearance-path AUC {:.3}", curve.auc);
    assert!(
        curve.auc >= 0.85,
        "appearance-path AUC {:.3} below 0.85",
        curve.auc
    );
}

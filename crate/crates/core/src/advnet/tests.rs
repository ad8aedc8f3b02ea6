use super::*;
use crate::patches::Patch;
use rand::SeedableRng;

fn tiny_gen_spec() -> GeneratorSpec {
    let stage = |out_channels, activation| GenStage {
        out_channels,
        kernel: 3,
        upsample: 2,
        activation,
    };
    GeneratorSpec {
        noise_dim: 8,
        patch_size: 16,
        project_channels: 4,
        stages: [
            stage(4, Activation::LeakyRelu),
            stage(4, Activation::LeakyRelu),
            stage(4, Activation::LeakyRelu),
            stage(3, Activation::Sigmoid),
        ],
    }
}

fn tiny_disc_spec() -> DiscriminatorSpec {
    DiscriminatorSpec {
        extractor: ExtractorSpec {
            input_size: 16,
            layers: alloc::vec![
                ExtLayer::Conv {
                    name: String::from("conv1"),
                    in_channels: 3,
                    out_channels: 4,
                    kernel: 3,
                },
                ExtLayer::Relu,
                ExtLayer::MaxPool2,
            ],
        },
        head_hidden: 8,
    }
}

fn random_patch(rng: &mut ChaCha8Rng, p: usize, t: usize) -> Patch {
    Patch {
        data: (0..3 * p * p).map(|_| rng.gen_range(0.0..1.0)).collect(),
        patch_size: p,
        origin: (0, 0),
        t,
        fg_ratio: 1.0,
    }
}

fn random_patch_tensor(rng: &mut ChaCha8Rng, p: usize) -> Tensor {
    Tensor::from_vec(
        &[3, p, p],
        (0..3 * p * p).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn generator_output_has_contract_shape_and_range() {
    let spec = GeneratorSpec::compact(32);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = init_generator(&spec, &mut rng).unwrap();
    let z: Vec<f64> = (0..spec.noise_dim).map(|i| (i as f64 / 32.0) - 1.0).collect();
    let out = generator_forward(&z, &spec, &params).unwrap();
    assert_eq!(out.shape(), &[3, 32, 32]);
    assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    // purity: same inputs, same outputs
    let again = generator_forward(&z, &spec, &params).unwrap();
    assert_eq!(out, again);
}

#[test]
fn generator_rejects_wrong_noise_length() {
    let spec = tiny_gen_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = init_generator(&spec, &mut rng).unwrap();
    assert!(generator_forward(&[0.0; 3], &spec, &params).is_err());
}

#[test]
fn discriminator_scores_are_pure_and_bounded() {
    let dspec = tiny_disc_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = init_discriminator(&dspec, None, &mut rng).unwrap();
    let patch = random_patch_tensor(&mut rng, 16);
    let s1 = discriminator_forward(&patch, &dspec, &params).unwrap();
    let s2 = discriminator_forward(&patch, &dspec, &params).unwrap();
    assert_eq!(s1, s2);
    assert!(s1 > 0.0 && s1 < 1.0);
}

#[test]
fn zeroed_extractor_kernels_propagate_only_biases() {
    let dspec = tiny_disc_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = init_discriminator(&dspec, None, &mut rng).unwrap();
    for v in params.get_mut("ext.conv1.weight").unwrap().data_mut() {
        *v = 0.0;
    }
    for v in params.get_mut("ext.conv1.bias").unwrap().data_mut() {
        *v = 0.7;
    }
    let patch = random_patch_tensor(&mut rng, 16);
    let x = disc_input(patch.data(), 16, &dspec);
    let cache = extractor_forward_cached(x, &dspec.extractor, &params).unwrap();
    assert!(cache.features().iter().all(|&v| v == 0.7));
}

#[test]
fn extractor_param_counting_matches_the_truncated_vgg16() {
    let spec = ExtractorSpec::vgg16_through_block4(32);
    // ten 3x3 convolutions up to the fourth pooling layer
    assert_eq!(spec.param_count(), 7_635_264);
    assert_eq!(spec.feature_len().unwrap(), 512 * 2 * 2);
    assert_eq!(ExtractorSpec::compact(32).feature_len().unwrap(), 32 * 4 * 4);
}

#[test]
fn extractor_validation_reports_missing_and_misshaped_tensors() {
    let dspec = tiny_disc_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let good = init_discriminator(&dspec, None, &mut rng).unwrap();
    assert!(validate_extractor(&dspec.extractor, &good).is_ok());

    let empty = NetworkParams::new();
    assert_eq!(
        validate_extractor(&dspec.extractor, &empty),
        Err(Error::MissingParam(String::from("ext.conv1.weight")))
    );

    let mut wrong = NetworkParams::new();
    wrong.insert_frozen("ext.conv1.weight", Tensor::zeros(&[4, 3, 5, 5]));
    wrong.insert_frozen("ext.conv1.bias", Tensor::zeros(&[4]));
    assert!(matches!(
        validate_extractor(&dspec.extractor, &wrong),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn pretrained_extractor_tensors_are_adopted_and_frozen() {
    let dspec = tiny_disc_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let donor = init_discriminator(&dspec, None, &mut rng).unwrap();
    let loaded = init_discriminator(&dspec, Some(&donor), &mut rng).unwrap();
    assert_eq!(
        loaded.get("ext.conv1.weight").unwrap(),
        donor.get("ext.conv1.weight").unwrap()
    );
    assert!(loaded.is_frozen("ext.conv1.weight"));
    assert!(loaded.is_frozen("ext.conv1.bias"));
    assert!(!loaded.is_frozen("head.fc1.weight"));
    assert_eq!(loaded.frozen_count(), dspec.extractor.param_count());
}

#[test]
fn grad_check_linear_head_is_essentially_exact() {
    // no extractor layers: the head sees the raw flattened patch
    let dspec = DiscriminatorSpec {
        extractor: ExtractorSpec {
            input_size: 8,
            layers: alloc::vec![],
        },
        head_hidden: 4,
    };
    let gspec = tiny_gen_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gen = init_generator(&gspec, &mut rng).unwrap();
    let disc = init_discriminator(&dspec, None, &mut rng).unwrap();
    let patches: Vec<Tensor> = (0..3).map(|_| random_patch_tensor(&mut rng, 8)).collect();
    let err = grad_check(&gspec, &dspec, &gen, &disc, &patches, 1e-4).unwrap();
    assert!(err < 1e-6, "max relative error {err}");
}

#[test]
fn grad_check_full_small_network() {
    let gspec = tiny_gen_spec();
    let dspec = tiny_disc_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let gen = init_generator(&gspec, &mut rng).unwrap();
    let disc = init_discriminator(&dspec, None, &mut rng).unwrap();
    let patches: Vec<Tensor> = (0..2).map(|_| random_patch_tensor(&mut rng, 16)).collect();
    let err = grad_check(&gspec, &dspec, &gen, &disc, &patches, 1e-4).unwrap();
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn zero_input_batch_leaves_first_kernel_gradient_zero() {
    let dspec = tiny_disc_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut disc = init_discriminator(&dspec, None, &mut rng).unwrap();
    // positive bias keeps the relu open so the bias gradient can flow
    for v in disc.get_mut("ext.conv1.bias").unwrap().data_mut() {
        *v = 0.1;
    }
    let zero = Tensor::zeros(&[3, 16, 16]);
    let mut grads = Gradients::new();
    let ext = extractor_forward_cached(zero.data().to_vec(), &dspec.extractor, &disc).unwrap();
    let head = head_forward_cached(ext.features().to_vec(), &disc).unwrap();
    let dfeat = head_backward(head.score - 1.0, &head, &disc, &mut grads, true)
        .unwrap()
        .unwrap();
    extractor_backward(dfeat, &ext, &dspec.extractor, &disc, Some(&mut grads)).unwrap();
    let dw = grads.get("ext.conv1.weight").unwrap();
    assert!(dw.data().iter().all(|&v| v == 0.0));
    let db = grads.get("ext.conv1.bias").unwrap();
    assert!(db.data().iter().any(|&v| v != 0.0));
}

fn train_setup(n_patches: usize) -> (Vec<Patch>, GeneratorSpec, DiscriminatorSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let patches: Vec<Patch> = (0..n_patches)
        .map(|t| random_patch(&mut rng, 16, t))
        .collect();
    (patches, tiny_gen_spec(), tiny_disc_spec())
}

/// Re-creates the parameters `train` starts from (same seed, same order).
fn initial_params(
    gspec: &GeneratorSpec,
    dspec: &DiscriminatorSpec,
    seed: u64,
) -> (NetworkParams, NetworkParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = init_generator(gspec, &mut rng).unwrap();
    let disc = init_discriminator(dspec, None, &mut rng).unwrap();
    (gen, disc)
}

#[test]
fn frozen_extractor_is_bit_identical_after_training() {
    let (patches, gspec, dspec) = train_setup(8);
    let cfg = TrainConfig {
        iterations: 3,
        batch_size: 4,
        seed: 42,
        ..Default::default()
    };
    let out = train(&patches, &gspec, &dspec, None, &cfg).unwrap();
    let (_, disc0) = initial_params(&gspec, &dspec, 42);
    for name in ["ext.conv1.weight", "ext.conv1.bias"] {
        assert_eq!(out.discriminator.get(name).unwrap(), disc0.get(name).unwrap());
        assert!(out.discriminator.is_frozen(name));
    }
    // the head did move
    assert_ne!(
        out.discriminator.get("head.fc1.weight").unwrap(),
        disc0.get("head.fc1.weight").unwrap()
    );
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let (patches, gspec, dspec) = train_setup(8);
    let cfg = TrainConfig {
        iterations: 1,
        batch_size: 4,
        learning_rate: 0.0,
        seed: 9,
        ..Default::default()
    };
    let out = train(&patches, &gspec, &dspec, None, &cfg).unwrap();
    let (gen0, disc0) = initial_params(&gspec, &dspec, 9);
    for (name, tensor) in out.generator.iter() {
        assert_eq!(tensor, gen0.get(name).unwrap(), "{name}");
    }
    for (name, tensor) in out.discriminator.iter() {
        assert_eq!(tensor, disc0.get(name).unwrap(), "{name}");
    }
}

#[test]
fn identical_seeds_give_identical_traces() {
    let (patches, gspec, dspec) = train_setup(10);
    let cfg = TrainConfig {
        iterations: 5,
        batch_size: 4,
        seed: 1234,
        ..Default::default()
    };
    let a = train(&patches, &gspec, &dspec, None, &cfg).unwrap();
    let b = train(&patches, &gspec, &dspec, None, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    for (name, tensor) in a.generator.iter() {
        assert_eq!(tensor, b.generator.get(name).unwrap());
    }
    let cfg2 = TrainConfig { seed: 4321, ..cfg };
    let c = train(&patches, &gspec, &dspec, None, &cfg2).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn training_rejects_undersized_patch_sets() {
    let (patches, gspec, dspec) = train_setup(2);
    let cfg = TrainConfig {
        iterations: 1,
        batch_size: 4,
        ..Default::default()
    };
    assert!(train(&patches, &gspec, &dspec, None, &cfg).is_err());
    assert!(matches!(
        train(&[], &gspec, &dspec, None, &cfg),
        Err(Error::EmptyInput(_))
    ));
}

#[test]
fn score_patches_is_bounded_and_ordered() {
    let (patches, _, dspec) = train_setup(6);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let disc = init_discriminator(&dspec, None, &mut rng).unwrap();
    let scores = score_patches(&patches, &dspec, &disc).unwrap();
    assert_eq!(scores.len(), 6);
    for (i, (idx, s)) in scores.iter().enumerate() {
        assert_eq!(*idx, i);
        assert!(*s > 0.0 && *s < 1.0);
    }
    let again = score_patches(&patches, &dspec, &disc).unwrap();
    assert_eq!(scores, again);
}

#[test]
fn spec_validation_catches_bad_geometry() {
    let mut g = tiny_gen_spec();
    g.stages[3].out_channels = 4;
    assert!(g.validate().is_err());
    let mut g = tiny_gen_spec();
    g.stages[3].activation = Activation::LeakyRelu;
    assert!(g.validate().is_err());
    let mut g = tiny_gen_spec();
    g.patch_size = 20; // not divisible by the upsample product
    assert!(g.validate().is_err());

    let mut d = tiny_disc_spec();
    d.extractor.input_size = 15; // odd side cannot pool
    assert!(d.validate().is_err());
}


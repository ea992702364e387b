use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spanlab::models::{
    load_checkpoint, save_checkpoint, Checkpoint, DeepSetsModel, Dims, FcStack, JanossyModel, Model, ModelConfig,
    ModelKind, Network, Pooling, SequenceLearner,
};
use spanlab::nn::Binder;
use spanlab::tensor::finite_difference_check;
use spanlab::{Tape, Tensor};

fn small(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        hidden: 6,
        width: 5,
        temperature: 1.0,
        sinkhorn_iterations: 20,
        ..ModelConfig::of_kind(kind)
    }
}

fn dims(n: usize, d: usize, l: usize) -> Dims {
    Dims {
        set_size: n,
        input_dim: d,
        output_dim: l,
    }
}

fn random_set(n: usize, d: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn shuffled(x: &Tensor, rng: &mut impl Rng) -> Tensor {
    let mut idx: Vec<usize> = (0..x.rows()).collect();
    idx.shuffle(rng);
    x.select_rows(&idx).unwrap()
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn zero_pn(model: &mut Model) {
    let w = model.pn_mut().unwrap();
    w.weight = Tensor::zeros(w.weight.shape());
}

#[test]
fn structural_invariance_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut models = vec![
        Model::new(small(ModelKind::Deepsets), dims(7, 3, 2), 1).unwrap(),
        Model::new(
            ModelConfig {
                pooling: Pooling::Max,
                ..small(ModelKind::Deepsets)
            },
            dims(7, 3, 2),
            2,
        )
        .unwrap(),
        Model::new(small(ModelKind::Janossy), dims(7, 3, 2), 3).unwrap(),
        Model::new(
            ModelConfig {
                arity: 3,
                ..small(ModelKind::Janossy)
            },
            dims(7, 3, 2),
            4,
        )
        .unwrap(),
    ];
    let mut span = Model::new(small(ModelKind::Span), dims(7, 3, 2), 5).unwrap();
    zero_pn(&mut span);
    models.push(span);
    let mut fc = Model::new(small(ModelKind::SpanFc), dims(7, 3, 2), 6).unwrap();
    zero_pn(&mut fc);
    models.push(fc);
    for model in &models {
        for _ in 0..5 {
            let x = random_set(7, 3, &mut rng);
            let base = bits(&model.predict_one(&x, &mut rng).unwrap());
            for _ in 0..20 {
                let y = model.predict_one(&shuffled(&x, &mut rng), &mut rng).unwrap();
                assert_eq!(bits(&y), base, "{}", model.kind());
            }
        }
    }
}

#[test]
fn deepsets_with_identity_stacks_sums_elements() {
    let model = DeepSetsModel {
        phi: FcStack::identity(),
        pooling: Pooling::Sum,
        rho: FcStack::identity(),
    };
    let x = Tensor::new(vec![1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap();
    let tape = Tape::new();
    let bound = model.bind(&mut Binder::new(&tape, false), 0.0);
    let y = bound.forward(&tape.constant(x), false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(y.value().data(), &[9.0, 12.5]);
}

#[test]
fn janossy_arity_one_matches_deepsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let deepsets = Model::new(small(ModelKind::Deepsets), dims(6, 2, 1), 11).unwrap();
    let Network::DeepSets(inner) = deepsets.net.clone() else {
        unreachable!()
    };
    let mut janossy = Model::new(
        ModelConfig {
            arity: 1,
            ..small(ModelKind::Janossy)
        },
        dims(6, 2, 1),
        0,
    )
    .unwrap();
    janossy.net = Network::Janossy(JanossyModel { arity: 1, inner });
    for _ in 0..20 {
        let x = random_set(6, 2, &mut rng);
        let a = deepsets.predict_one(&x, &mut rng).unwrap().item().unwrap();
        let b = janossy.predict_one(&x, &mut rng).unwrap().item().unwrap();
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn janossy_rejects_small_sets() {
    let err = Model::new(
        ModelConfig {
            arity: 3,
            ..small(ModelKind::Janossy)
        },
        dims(2, 1, 1),
        0,
    );
    assert!(err.is_err());
}

#[test]
fn span_on_singleton_reads_the_element() {
    let model = Model::new(small(ModelKind::Span), dims(1, 3, 2), 4).unwrap();
    let Network::Span(span) = &model.net else { unreachable!() };
    let SequenceLearner::Lstm(head) = &span.learner else { unreachable!() };
    let x = Tensor::from_rows(&[vec![0.3, -1.2, 2.0]]).unwrap();
    let h = head.cell.forward(&x).unwrap();
    let expected = h
        .reshape(&[1, 6])
        .unwrap()
        .matmul(&head.readout.weight)
        .unwrap()
        .reshape(&[2])
        .unwrap()
        .add(&head.readout.bias)
        .unwrap();
    let got = model.predict_one(&x, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for (a, b) in got.data().iter().zip(expected.data()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn span_gradient_reaches_the_permutation_network() {
    let model = Model::new(small(ModelKind::Span), dims(6, 3, 1), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_set(6, 3, &mut rng).map(f64::abs);
    let batch = x.reshape(&[1, 6, 3]).unwrap();
    let w = model.pn().unwrap().weight.clone();
    let tape = Tape::new();
    let mut learner = Binder::new(&tape, false);
    let mut adversary = Binder::new(&tape, true);
    let bound = model.bind(&mut learner, &mut adversary).unwrap();
    let out = bound.forward(&tape.constant(batch.clone()), false, &mut rng).unwrap();
    let g = tape.backward(out.sum_all()).unwrap().wrt(adversary.leaves()[0]).unwrap();
    assert!(g.max_abs() > 1e-8);

    let err = finite_difference_check(
        |v| {
            let tape = v[0].tape();
            let Network::Span(span) = &model.net else { unreachable!() };
            let pn = span.pn.as_ref().unwrap();
            let SequenceLearner::Lstm(head) = &span.learner else { unreachable!() };
            let mut fixed = Binder::new(tape, false);
            let head = head.bind(&mut fixed)?;
            let bx = tape.constant(batch.clone());
            let wv = v[0].reshape(&[pn.dim(), pn.set_size()])?;
            let scores = bx.reshape(&[6, 3])?.matmul(&wv)?.relu().reshape(&[1, 6, 6])?;
            let p = spanlab::perm::sinkhorn(&scores, pn.temperature, pn.iterations)?;
            Ok(head.forward(&p.contract_rows(&bx)?)?.sum_all())
        },
        &[w],
        1e-6,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn no_apn_is_order_sensitive_and_equals_identity_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::new(small(ModelKind::SpanNoApn), dims(5, 2, 1), 8).unwrap();
    let x = random_set(5, 2, &mut rng);
    let rev = x.select_rows(&[4, 3, 2, 1, 0]).unwrap();
    let a = model.predict_one(&x, &mut rng).unwrap();
    let b = model.predict_one(&rev, &mut rng).unwrap();
    assert_ne!(a, b);
    let Network::Span(span) = &model.net else { unreachable!() };
    assert_eq!(span.forward_with_permutation(&Tensor::eye(5), &x).unwrap(), a);
}

#[test]
fn pisgd_trivial_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let single = Model::new(small(ModelKind::PiSgd), dims(1, 2, 1), 3).unwrap();
    let Network::PiSgd(p) = &single.net else { unreachable!() };
    let x = random_set(1, 2, &mut rng);
    let h = p.head.cell.forward(&x).unwrap();
    let direct = h.reshape(&[1, 6]).unwrap().matmul(&p.head.readout.weight).unwrap().data()[0]
        + p.head.readout.bias.data()[0];
    let got = single.predict_one(&x, &mut rng).unwrap().item().unwrap();
    assert!((got - direct).abs() <= 1e-12);

    let model = Model::new(small(ModelKind::PiSgd), dims(4, 2, 1), 3).unwrap();
    let constant = Tensor::from_rows(&vec![vec![0.7, -0.2]; 4]).unwrap();
    let avg = model.predict_one(&constant, &mut rng).unwrap().item().unwrap();
    let one = model.predict_one_sampled(&constant, &mut rng).unwrap().item().unwrap();
    assert!((avg - one).abs() <= 1e-12);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (i, kind) in ModelKind::ALL.into_iter().enumerate() {
        let mut model = Model::new(small(kind), dims(4, 3, 2), 40 + i as u64).unwrap();
        model.normalizer.input_scale = vec![0.5, 1.0 / 3.0, 2.0];
        model.normalizer.label_mean = vec![0.1, -7.25];
        model.normalizer.label_std = vec![3.0, 0.7];
        let dir = tempfile::tempdir().unwrap();
        let mut extra = std::collections::BTreeMap::new();
        extra.insert("optim.m.0".to_string(), Tensor::vector(vec![1e-300, -0.1]));
        let ckpt = Checkpoint {
            model: model.clone(),
            seed: 40 + i as u64,
            extra,
            meta: serde_json::json!({"step": 3}),
        };
        save_checkpoint(dir.path(), &ckpt).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, ckpt);
        let x = random_set(4, 3, &mut rng);
        let seed = rng.random::<u64>();
        let a = model.predict_one(&x, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = back.model.predict_one(&x, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(bits(&a), bits(&b), "{kind}");
    }
}

#[test]
fn checkpoint_rejects_shape_tampering() {
    let model = Model::new(small(ModelKind::Deepsets), dims(4, 3, 1), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = Checkpoint {
        model,
        seed: 1,
        extra: Default::default(),
        meta: serde_json::Value::Null,
    };
    save_checkpoint(dir.path(), &ckpt).unwrap();
    spanlab::tensor::write_tensor_file(&dir.path().join("phi.0.weight.sptn"), &Tensor::zeros(&[2, 2]))
        .unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}

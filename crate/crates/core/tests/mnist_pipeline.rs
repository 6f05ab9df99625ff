//! End-to-end checks on the real digits. Each test returns early (with a note)
//! when the dataset is not available.

use std::sync::OnceLock;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hoprbm::baselines::{hopfield_init, InitKind};
use hoprbm::data_io::{load_mnist, mnist_dir, read_idx, BinaryDataset, Split};
use hoprbm::forward_map::{hn_to_rbm, FactorizationMethod};
use hoprbm::patterns::{class_mean_patterns, PatternMatrix};
use hoprbm::poe::{feature_map, features, test_error, train_experts, train_head, HeadConfig};
use hoprbm::rbm::{self, generate_samples, TrainConfig};
use hoprbm::reverse_map::{binarize_descent, random_x0, BinarizeConfig};
use hoprbm::Rbm;

fn data() -> Option<&'static (BinaryDataset, BinaryDataset)> {
    static DATA: OnceLock<Option<(BinaryDataset, BinaryDataset)>> = OnceLock::new();
    let d = DATA
        .get_or_init(|| {
            let dir = mnist_dir()?;
            Some((load_mnist(&dir, Split::Train).ok()?, load_mnist(&dir, Split::Test).ok()?))
        })
        .as_ref();
    if d.is_none() {
        eprintln!("MNIST not found; skipping");
    }
    d
}

#[test]
fn files_have_the_expected_shapes() {
    let Some((train, test)) = data() else { return };
    let raw = read_idx(mnist_dir().unwrap().join("train-images-idx3-ubyte")).unwrap();
    assert_eq!(raw.dims, vec![60_000, 28, 28]);
    assert_eq!((train.len(), train.n_visible(), train.n_classes()), (60_000, 784, 10));
    assert_eq!((test.len(), test.n_visible()), (10_000, 784));
    assert!(train.samples().iter().all(|&v| v == 1 || v == -1));
}

#[test]
fn each_expert_responds_most_to_its_own_pattern() {
    let Some((train, _)) = data() else { return };
    let xi = class_mean_patterns(train).unwrap();
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let experts = train_experts::<f64>(train, InitKind::HopfieldQr, 1, &cfg, Some(&xi)).unwrap();
    for mu in 0..10 {
        let f = feature_map(&experts, xi.column(mu));
        assert_eq!(f.argmax().0, mu, "features {f}");
    }
}

#[test]
fn gibbs_samples_from_a_pattern_stay_near_it() {
    let Some((train, _)) = data() else { return };
    let xi = class_mean_patterns(train).unwrap();
    let rbm = hn_to_rbm::<f64>(&xi, 2.0, None, FactorizationMethod::Qr).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = xi.as_matrix::<f64>();
    for mu in 0..10 {
        let s = generate_samples(&rbm, xi.column(mu), 20, &mut rng);
        let sv = DVector::from_iterator(784, s.iter().map(|&v| v as f64));
        let overlaps = x.tr_mul(&sv);
        assert_eq!(overlaps.argmax().0, mu, "overlaps {overlaps}");
    }
}

#[test]
fn hopfield_experts_classify_better_than_untrained_random_ones() {
    let Some((train, test)) = data() else { return };
    let (train, test) = (train.head(10_000), test.head(2_000));
    let head_cfg = HeadConfig::default();
    let error = |init: InitKind, epochs: usize| {
        let cfg = TrainConfig { epochs, seed: 4, ..TrainConfig::default() };
        let experts = train_experts::<f64>(&train, init, 10, &cfg, None).unwrap();
        let head = train_head(&features(&experts, &train), train.labels(), 10, &head_cfg).unwrap();
        test_error(&experts, &head, &test)
    };
    let hopfield = error(InitKind::HopfieldQr, 1);
    let random = error(InitKind::Random, 0);
    assert!(hopfield < random, "hopfield {hopfield} vs random {random}");
    assert!(hopfield < 0.15);
}

#[test]
fn hopfield_initialized_weights_move_little_in_five_epochs() {
    let Some((train, _)) = data() else { return };
    let train = train.head(10_000);
    let xi: PatternMatrix = class_mean_patterns(&train).unwrap();
    let (q, _) = hopfield_init::<f64>(&xi).unwrap();
    // the non-random generative curves train with mini-batches of 1000
    let cfg = TrainConfig { epochs: 5, seed: 2, batch_size: 1000, ..TrainConfig::default() };
    let (_, reports) = rbm::train(Rbm::from_weights(q, 2.0).unwrap(), &train, &cfg, |_, _| Ok(())).unwrap();
    let last = reports.last().unwrap();
    assert_eq!(last.epoch, 5);
    assert!(last.relative_change < 0.3, "relative change {}", last.relative_change);
}

#[test]
fn binarizing_random_weights_fails_gracefully() {
    let Some(_) = data() else { return };
    let w = hoprbm::baselines::random_init::<f64>(784, 10, 3);
    let x0 = random_x0(&w, &mut ChaCha8Rng::seed_from_u64(5));
    let cfg = BinarizeConfig { max_iters: 2_000, require_convergence: false, ..BinarizeConfig::default() };
    let sol = binarize_descent(&w, &x0, &cfg).unwrap();
    assert!(sol.objective.is_finite());
    // nothing close to a ±1 matrix lies in the span of small random columns
    assert!(sol.objective > 1.0, "objective {}", sol.objective);
}

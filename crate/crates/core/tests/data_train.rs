use modcnn::arch::{build_model, plan_architecture, weights, ArchSpec, BlockKind, Network, Placement, StemKind};
use modcnn::data::{cifar, cifar_like, load_cifar10, normalize_byte, synth_classification_sized, Dataset, Split};
use modcnn::nn::{ForwardCtx, Module, Visitor};
use modcnn::train::{evaluate, evaluate_loss, predict_labels, train, TrainConfig};
use modcnn::Result;
use modcnn_tensor::Tensor;

fn tiny(classes: usize, hw: usize, placement: Placement) -> ArchSpec {
    let mut s = ArchSpec::resnet("tiny", BlockKind::Basic, &[1, 2, 1, 1]);
    s.widths = vec![16, 16, 32, 32];
    s.stem = StemKind::Cifar;
    s.stem_width = 16;
    s.classes = classes;
    s.input_size = hw;
    s.c = 4;
    s.placement = placement;
    s
}

fn net(spec: &ArchSpec, seed: u64) -> Network<f32> {
    build_model(&plan_architecture(spec).unwrap(), seed).unwrap()
}

fn cfg(epochs: usize, batch: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: batch,
        lr,
        lr_step: 1000,
        augment: false,
        weight_decay: 0.0,
        ..TrainConfig::default()
    }
}

#[test]
fn all_mod_network_fits_small_task() {
    let spec = tiny(2, 16, Placement::All);
    assert!(plan_architecture(&spec).unwrap().mod_blocks().count() >= 2);
    let data = synth_classification_sized(64, 2, 16, 3).unwrap();
    let mut m = net(&spec, 0);
    // 4 steps per epoch, 400 steps in all.
    train(&mut m, 2, &data, None, &cfg(100, 16, 0.05)).unwrap();
    let loss = evaluate_loss(&mut m, &data, 64).unwrap();
    assert!(loss < 0.05, "loss {loss}");
    assert_eq!(evaluate(&mut m, &data, 64).unwrap(), 1.0);
}

#[test]
fn one_epoch_reduces_loss_for_both_selectors() {
    let data = synth_classification_sized(96, 4, 16, 5).unwrap();
    for selector in ["learned", "randomized"] {
        let mut spec = tiny(4, 16, Placement::Alternating);
        spec.selector = selector.into();
        let mut m = net(&spec, 1);
        let before = evaluate_loss(&mut m, &data, 32).unwrap();
        let out = train(&mut m, 4, &data, None, &cfg(3, 16, 0.05)).unwrap();
        let after = evaluate_loss(&mut m, &data, 32).unwrap();
        assert!(after < before, "{selector}: {before} -> {after}");
        assert!(out.log.rows.iter().all(|r| r.train_loss.is_finite()));
    }
}

#[test]
fn training_is_bitwise_reproducible() {
    let data = synth_classification_sized(40, 4, 8, 2).unwrap();
    let spec = tiny(4, 8, Placement::Alternating);
    let run = || {
        let mut m = net(&spec, 9);
        let mut c = cfg(2, 8, 0.05);
        c.augment = true;
        let out = train(&mut m, 4, &data, Some(&data), &c).unwrap();
        let losses: Vec<u64> = out.log.rows.iter().map(|r| r.train_loss.to_bits()).collect();
        (losses, weights::collect(&mut m))
    };
    assert_eq!(run(), run());
}

#[test]
fn evaluation_matches_per_sample_loop() {
    let data = synth_classification_sized(23, 4, 8, 4).unwrap();
    let mut m = net(&tiny(4, 8, Placement::Alternating), 2);
    let pred = predict_labels(&mut m, &data, 100).unwrap();
    for (i, &p) in pred.iter().enumerate() {
        let x = Tensor::from_vec(data.image(i).to_vec(), &[1, 3, 8, 8]).unwrap();
        let logits = m.predict(&x).unwrap();
        let row = logits.data();
        let best = (0..4).fold(0, |b, j| if row[j] > row[b] { j } else { b });
        assert_eq!(p, best, "sample {i}");
    }
    let want = pred.iter().zip(data.labels()).filter(|(p, l)| p == l).count() as f64 / 23.0;
    for batch in [1, 5, 7, 23, 100] {
        assert_eq!(evaluate(&mut m, &data, batch).unwrap(), want);
    }
}

struct Constant(usize);

impl Module<f32> for Constant {
    fn forward(&mut self, x: &Tensor<f32>, _: &mut ForwardCtx<'_>) -> Result<Tensor<f32>> {
        Ok(Tensor::zeros(&[x.shape()[0], self.0]))
    }
    fn visit(&mut self, _: &mut dyn Visitor<f32>) {}
}

#[test]
fn constant_predictor_scores_one_in_ten() {
    let data = synth_classification_sized(200, 10, 4, 0).unwrap();
    assert_eq!(evaluate(&mut Constant(10), &data, 32).unwrap(), 0.1);
    let empty: Dataset = data.select(&[]);
    assert!(evaluate(&mut Constant(10), &empty, 32).is_err());
}

#[test]
fn stand_in_round_trips_through_loader() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, te) = cifar_like(dir.path(), 50, 20, 1).unwrap();
    assert_eq!((tr.len(), te.len()), (50, 20));
    assert_eq!(tr.sample_shape, [3, 32, 32]);
    let bytes = std::fs::read(dir.path().join("data_batch_1.bin")).unwrap();
    assert_eq!(bytes.len(), 50 * 3073);
    assert_eq!(tr.labels()[0], bytes[0] as usize);
    assert_eq!(tr.image(0)[0], normalize_byte(bytes[1], 0));
    assert_eq!(tr.image(0)[1024], normalize_byte(bytes[1 + 1024], 1));
    let again = cifar::load_files(dir.path(), &cifar::TRAIN_FILES[..1], "again").unwrap();
    assert_eq!(again.labels(), tr.labels());
    assert!(load_cifar10(dir.path(), Split::Train).is_err());
}

#[test]
fn real_cifar_when_available() {
    let Some(root) = cifar::resolve_root(None) else {
        eprintln!("MODCNN_DATA not set; skipping");
        return;
    };
    let tr = load_cifar10(&root, Split::Train).unwrap();
    let te = load_cifar10(&root, Split::Test).unwrap();
    assert_eq!((tr.len(), te.len()), (50_000, 10_000));
    for c in 0..10 {
        assert_eq!(te.labels().iter().filter(|&&l| l == c).count(), 1000);
    }
}

use changerwkv::encoder::ModelConfig;
use changerwkv::numerics::Tensor;
use changerwkv::pipeline::io::{read_dataset, write_dataset};
use changerwkv::pipeline::{checkpoint, predict_tiled, synth_generate, ChangeRwkv, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pair(side_h: usize, side_w: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (Tensor::uniform(vec![3, side_h, side_w], 0.0, 1.0, &mut r), Tensor::uniform(vec![3, side_h, side_w], 0.0, 1.0, &mut r))
}

#[test]
fn forward_is_finite_and_in_range_across_seeds() {
    for seed in 0..10 {
        let model = ChangeRwkv::<f32>::new(ModelConfig::nano(), seed).unwrap();
        let (a, b) = pair(32, 32, 100 + seed);
        let p = model.predict(&a, &b).unwrap();
        assert_eq!(p.shape(), &[32, 32]);
        assert!(p.data().iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x)), "seed {seed}");
    }
}

#[test]
fn published_variants_predict_full_resolution_maps() {
    let (a, b) = pair(256, 256, 1);
    for cfg in [ModelConfig::tiny(), ModelConfig::small(), ModelConfig::base()] {
        let name = cfg.variant.clone();
        let p = ChangeRwkv::<f32>::new(cfg, 0).unwrap().predict(&a, &b).unwrap();
        assert_eq!(p.shape(), &[256, 256], "{name}");
        assert!(p.all_finite(), "{name}");
    }
}

#[test]
fn loss_falls_during_early_training_on_easy_scenes() {
    let mut drops = Vec::new();
    for seed in 0..3u64 {
        let data = synth_generate::<f32>(16, 32, 32, 0, 500 + seed).unwrap();
        let cfg = TrainConfig { batch_size: 2, epochs: 25, warmup_epochs: 0, cosine: false, seed, ..TrainConfig::desk() };
        let model = ChangeRwkv::<f32>::new(ModelConfig::nano(), seed).unwrap();
        let mut t = Trainer::new(model, cfg, data.len() / 2).unwrap();
        let mut losses = Vec::new();
        for step in 0..200 {
            let i = (step * 2) % data.len();
            let batch = [&data[i], &data[i + 1]];
            losses.push(t.step(&batch, step).unwrap().loss);
        }
        let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = losses[180..].iter().sum::<f64>() / 20.0;
        drops.push(tail / head);
    }
    drops.sort_by(f64::total_cmp);
    assert!(drops[1] < 0.8, "median tail/head loss ratio {:?}", drops);
}

#[test]
fn datasets_and_checkpoints_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_generate::<f32>(3, 32, 48, 1, 9).unwrap();
    write_dataset(&tmp.path().join("ds"), &data).unwrap();
    let back = read_dataset::<f32>(&tmp.path().join("ds")).unwrap();
    assert_eq!(back.len(), 3);
    for (x, y) in data.iter().zip(&back) {
        assert!(x.mask.bit_eq(&y.mask));
        assert_eq!(x.a.shape(), y.a.shape());
        let worst = x.a.data().iter().zip(y.a.data()).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
        assert!(worst <= 0.5 / 255.0 + 1e-6, "8-bit quantisation error {worst}");
    }

    let model = ChangeRwkv::<f32>::new(ModelConfig::probe(), 4).unwrap();
    checkpoint::save(&model, &tmp.path().join("ck")).unwrap();
    let loaded = checkpoint::load::<f32>(&tmp.path().join("ck")).unwrap();
    let (a, b) = pair(32, 32, 2);
    assert!(model.predict(&a, &b).unwrap().bit_eq(&loaded.predict(&a, &b).unwrap()));
}

#[test]
fn tiled_inference_covers_ragged_images() {
    let model = ChangeRwkv::<f32>::new(ModelConfig::probe(), 3).unwrap();
    let (a, b) = pair(48, 80, 5);
    let p = predict_tiled(&model, &a, &b, 32).unwrap();
    assert_eq!(p.shape(), &[48, 80]);
    assert!(p.data().iter().all(|x| (0.0..=1.0).contains(x)));
    let (a, b) = pair(32, 32, 6);
    assert!(predict_tiled(&model, &a, &b, 32).unwrap().bit_eq(&model.predict(&a, &b).unwrap()));
}

use super::*;
use crate::dataio::{generate_synthetic, PixelSample, SyntheticWorldConfig};
use crate::model::ModelConfig;

fn small_world(n: usize, seed: u64) -> (Checkpoint, Dataset) {
    let cfg = SyntheticWorldConfig { phase_jitter: 0.0, ..SyntheticWorldConfig::new(n, 3, 0.05, 0.0, seed) };
    let raw = generate_synthetic(&cfg).unwrap();
    let stats = NormStats::compute_dataset(&raw).unwrap();
    let ds = stats.normalize_dataset(&raw).unwrap();
    let ckpt = Checkpoint::init(ModelConfig::symmetric(1, 32, 4), stats, 1).unwrap();
    (ckpt, ds)
}

#[test]
fn embed_dataset_requires_matching_stats() {
    let (ckpt, ds) = small_world(6, 0);
    let emb = embed_dataset(&ckpt, &ds, &ckpt.norm).unwrap();
    assert_eq!(emb.len(), 6);
    assert!(emb.iter().all(|e| e.len() == 32));
    let other = NormStats::identity();
    assert!(matches!(embed_dataset(&ckpt, &ds, &other), Err(DownstreamError::StatsMismatch)));
}

#[test]
fn finetune_rejects_empty_validation() {
    let (ckpt, ds) = small_world(6, 0);
    let empty = ds.subset(&[]);
    let e = finetune(&ckpt, &ds, &empty, &FinetuneConfig::default()).unwrap_err();
    assert!(matches!(e, DownstreamError::Invalid(_)), "{e}");
}

#[test]
fn finetune_improves_and_keeps_best() {
    let (ckpt, ds) = small_world(90, 3);
    let (train, val) = ds.split_at(60);
    let cfg = FinetuneConfig { lr: 1e-2, max_epochs: 15, batch_size: 8, patience: 6, ..FinetuneConfig::default() };
    let res = finetune(&ckpt, &train, &val, &cfg).unwrap();
    let best = res.history.iter().map(|h| h.val_accuracy).fold(0.0, f64::max);
    assert!(res.best_val_accuracy >= best);
    let refs: Vec<&PixelSample> = val.samples.iter().collect();
    let pred = predict_classes(&res.checkpoint, &refs).unwrap();
    assert_eq!(accuracy(&val.class_labels().unwrap(), &pred), res.best_val_accuracy);
    assert!(res.best_val_accuracy > 0.5, "{:?}", res.history);
}

#[test]
fn frozen_encoder_is_untouched() {
    let (ckpt, ds) = small_world(30, 4);
    let (train, val) = ds.split_at(20);
    let cfg = FinetuneConfig { lr: 1e-2, max_epochs: 2, batch_size: 8, freeze_encoder: true, patience: 10, ..FinetuneConfig::default() };
    let res = finetune(&ckpt, &train, &val, &cfg).unwrap();
    for (_, name, t) in ckpt.params.iter() {
        assert_eq!(res.checkpoint.params.get(name).unwrap(), t, "{name}");
    }
}

#[test]
fn image_aggregate_of_identical_pixels() {
    let (ckpt, ds) = small_world(3, 5);
    let raw = ckpt.norm.denormalize(&ds.samples[0]).unwrap();
    let image = ImageSample::new(vec![raw.clone(); 4]).unwrap();
    let agg = aggregate_image(&ckpt, &image).unwrap();
    let single = ckpt.embed(&[raw]).unwrap().remove(0);
    assert_eq!(agg.len(), 64);
    for (a, b) in agg[..32].iter().zip(&single) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(agg[32..].iter().all(|s| s.abs() < 1e-6));
}

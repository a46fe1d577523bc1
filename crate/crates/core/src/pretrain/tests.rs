use super::*;
use crate::dataio::{generate_synthetic, SyntheticWorldConfig};
use crate::model::head_name;

fn tiny_config() -> PretrainConfig {
    PretrainConfig { epochs: 2, batch_size: 8, micro_batch: 4, model: ModelConfig::symmetric(1, 32, 4), ..PretrainConfig::default() }
}

fn world(n: usize, seed: u64) -> (Dataset, NormStats) {
    let raw = generate_synthetic(&SyntheticWorldConfig::new(n, 4, 0.05, 0.05, seed)).unwrap();
    let stats = NormStats::compute_dataset(&raw).unwrap();
    (stats.normalize_dataset(&raw).unwrap(), stats)
}

fn draw_batch<'a>(ds: &'a Dataset, cfg: &PretrainConfig, salt: u64) -> Vec<MaskedInstance<'a>> {
    ds.samples
        .iter()
        .enumerate()
        .map(|(i, s)| MaskedInstance::draw(s, cfg.mask_ratio, &cfg.strategies, SeedTree::new(salt).child(i as u64)).unwrap())
        .collect()
}

#[test]
fn defaults_match_reference_schedule() {
    let c = PretrainConfig::default();
    assert_eq!((c.mask_ratio, c.lambda, c.lr_max, c.weight_decay, c.betas), (0.75, 2.0, 1e-3, 0.05, (0.9, 0.95)));
    assert_eq!(c.strategies.len(), 4);
    c.validate().unwrap();
}

#[test]
fn zero_lambda_leaves_dw_head_without_gradient() {
    let (ds, norm) = world(12, 1);
    let cfg = PretrainConfig { lambda: 0.0, ..tiny_config() };
    let mut ckpt = Checkpoint::init(cfg.model, norm, 0).unwrap();
    let model = ckpt.model().unwrap();
    let mut opt = OptimizerState::new(&ckpt.params, cfg.adamw());
    let dw = [ckpt.params.id(&format!("{}.weight", head_name(ChannelGroup::Dw))).unwrap(), ckpt.params.id(&format!("{}.bias", head_name(ChannelGroup::Dw))).unwrap()];
    let mut saw_dw = false;
    for step in 0..3 {
        let batch = draw_batch(&ds, &cfg, step);
        let (grads, rep) = batch_gradients(&model, &ckpt.params, &batch, 0.0, 4).unwrap();
        saw_dw |= rep.n_cat > 0;
        for id in dw {
            if let Some(g) = grads.get(id) {
                assert!(g.data().iter().all(|&x| x == 0.0), "step {step}");
            }
        }
        adamw_step(&mut ckpt.params, &grads, &mut opt, 1e-3).unwrap();
    }
    assert!(saw_dw);
}

#[test]
fn only_masked_values_carry_gradient() {
    let (ds, norm) = world(4, 2);
    let ckpt = Checkpoint::init(ModelConfig::symmetric(1, 32, 4), norm, 0).unwrap();
    let model = ckpt.model().unwrap();
    let batch: Vec<MaskedInstance> = ds
        .samples
        .iter()
        .map(|s| {
            let slots = token_slots(s);
            let masked = slots.iter().enumerate().filter(|(_, t)| t.group == ChannelGroup::Dw).map(|(i, _)| i).collect();
            MaskedInstance { sample: s, slots, plan: MaskPlan { masked, ..MaskPlan::empty(MaskStrategy::ChannelGroups) } }
        })
        .collect();
    let (grads, rep) = batch_gradients(&model, &ckpt.params, &batch, 0.0, 2).unwrap();
    assert_eq!(rep.n_cont, 0);
    assert!(rep.n_cat > 0);
    assert_eq!(rep.total, 0.0);
    for (_, g) in grads.iter() {
        assert!(g.data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn micro_batching_does_not_change_the_loss() {
    let (ds, norm) = world(10, 3);
    let cfg = tiny_config();
    let ckpt = Checkpoint::init(cfg.model, norm, 0).unwrap();
    let model = ckpt.model().unwrap();
    let batch = draw_batch(&ds, &cfg, 9);
    let (g1, r1) = batch_gradients(&model, &ckpt.params, &batch, 2.0, 10).unwrap();
    let (g3, r3) = batch_gradients(&model, &ckpt.params, &batch, 2.0, 3).unwrap();
    assert_eq!((r1.n_cont, r1.n_cat), (r3.n_cont, r3.n_cat));
    assert!((r1.total - r3.total).abs() < 1e-5 * r1.total);
    assert!((r1.total - r1.recomputed_total(2.0)).abs() < 1e-6);
    for ((_, a), (_, b)) in g1.iter().zip(g3.iter()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-5 + 1e-3 * x.abs());
        }
    }
}

#[test]
fn runs_are_deterministic_and_checkpointed() {
    let (ds, norm) = world(24, 4);
    let raw_val = generate_synthetic(&SyntheticWorldConfig::new(16, 4, 0.05, 0.05, 5)).unwrap();
    let val = norm.normalize_dataset(&raw_val).unwrap();
    let cfg = PretrainConfig { epochs: 4, ..tiny_config() };
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { validation: Some(&val), out_dir: Some(dir.path().to_path_buf()), keep_last: 3, ..Default::default() };
    let a = pretrain_with(&ds, norm.clone(), &cfg, &opts).unwrap();
    let b = pretrain(&ds, norm, &cfg).unwrap();
    let strip = |h: &[EpochReport]| h.iter().map(|e| (e.loss, e.lr_last)).collect::<Vec<_>>();
    assert_eq!(strip(&a.history), strip(&b.history));
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert!(a.history.iter().all(|e| e.val_f1.is_some()));
    assert!(!epoch_checkpoint_path(dir.path(), 0).exists());
    for e in 1..4 {
        assert!(epoch_checkpoint_path(dir.path(), e).exists());
    }
    assert!(dir.path().join("best.ckpt").exists());
    let hist = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(hist.starts_with("epoch,mse,ce,n_cont,n_cat,total,lr_last,val_f1"));
    assert_eq!(hist.lines().count(), 5);

    let prefix_dir = tempfile::tempdir().unwrap();
    let prefix = RunOptions { out_dir: Some(prefix_dir.path().to_path_buf()), keep_last: 3, stop_after: Some(2), ..Default::default() };
    let p = pretrain_with(&ds, a.checkpoint.norm.clone(), &cfg, &prefix).unwrap();
    assert_eq!(p.history.len(), 2);
    assert_eq!(strip(&p.history), strip(&a.history[..2]));
    assert_eq!(
        std::fs::read(epoch_checkpoint_path(prefix_dir.path(), 1)).unwrap(),
        std::fs::read(epoch_checkpoint_path(dir.path(), 1)).unwrap()
    );
}

#[test]
fn loss_falls_on_a_small_world() {
    let (ds, norm) = world(64, 6);
    let cfg = PretrainConfig { epochs: 6, lr_max: 3e-3, ..tiny_config() };
    let r = pretrain(&ds, norm, &cfg).unwrap();
    let first = r.history[0].loss.mse;
    let last = r.history.last().unwrap().loss.mse;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn divergence_is_reported_with_its_batch() {
    let (ds, norm) = world(16, 7);
    let cfg = PretrainConfig { lr_max: 1e30, warmup_steps: Some(0), ..tiny_config() };
    match pretrain(&ds, norm, &cfg) {
        Err(TrainError::NonFiniteLoss { epoch, batch }) => assert!(epoch < 2 && batch < 2),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.history)),
    }
}

#[test]
fn config_and_probe_errors() {
    assert!(matches!(PretrainConfig { mask_ratio: 1.0, ..tiny_config() }.validate(), Err(TrainError::Mask(_))));
    assert!(PretrainConfig { strategies: vec![], ..tiny_config() }.validate().is_err());
    let (ds, norm) = world(8, 8);
    let one_class = Dataset::new(ds.samples.clone(), vec![Some(1); 8]).unwrap();
    let ckpt = Checkpoint::init(ModelConfig::symmetric(1, 32, 4), norm, 0).unwrap();
    assert!(matches!(validate_probe(&ckpt, &one_class), Err(TrainError::Downstream(DownstreamError::SingleClass))));
}

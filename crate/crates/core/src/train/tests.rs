use super::*;
use crate::synthdata::{generate, GenConfig};

fn small_data() -> Dataset {
    generate(&GenConfig {
        instances: 24,
        image_folds: 3,
        text_folds: 2,
        image_dim: 6,
        text_dim: 5,
        latent_dim: 3,
        ..GenConfig::default()
    })
    .unwrap()
}

fn small_cfg(loss: LossKind) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 6,
        loss,
        encoder: EncoderConfig {
            hidden: 8,
            embed_dim: 4,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn encode_zero_params_gives_zero_rows() {
    let mut enc = EncoderPair::<f64>::init(
        3,
        2,
        &EncoderConfig {
            hidden: 0,
            embed_dim: 3,
        },
        0,
    );
    for t in enc.tensors_mut() {
        *t = Tensor::zeros(t.rows(), t.cols());
    }
    let out = enc.embed_images(&Tensor::full(2, 3, 1.0)).unwrap();
    assert_eq!(out, Tensor::zeros(2, 3));
}

#[test]
fn encode_identity_on_unit_input() {
    let mut enc = EncoderPair::<f64>::init(
        3,
        2,
        &EncoderConfig {
            hidden: 0,
            embed_dim: 3,
        },
        0,
    );
    enc.tensors_mut()[0] = Tensor::identity(3);
    enc.tensors_mut()[1] = Tensor::zeros(1, 3);
    let x = Tensor::from_rows(&[vec![0.6, 0.8, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    assert_eq!(enc.embed_images(&x).unwrap(), x);
    assert!(matches!(enc.embed_texts(&x), Err(Error::Contract(_))));
}

#[test]
fn encode_rows_are_unit() {
    let enc = EncoderPair::<f64>::init(6, 5, &EncoderConfig::default(), 9);
    let d = small_data();
    let batch = MultifoldBatch::from_ids(&d, &[0, 1, 2]).unwrap();
    let out = enc.embed_images(&batch.image_matrix()).unwrap();
    for n in out.row_norms().data() {
        assert!((n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn adam_zero_grad_is_noop_and_quadratic_descends() {
    let cfg = OptimConfig {
        weight_decay: 0.0,
        ..OptimConfig::default()
    };
    let mut p = vec![Tensor::<f64>::scalar(1.0)];
    let mut opt = OptimState::new(cfg, &p);
    opt.step(&mut p, &[Tensor::scalar(0.0)], 0.1).unwrap();
    assert_eq!(p[0].item(), 1.0);

    let mut opt = OptimState::new(cfg, &p);
    let mut prev = 1.0;
    for _ in 0..100 {
        let g = Tensor::scalar(2.0 * p[0].item());
        opt.step(&mut p, &[g], 1e-2).unwrap();
        let f = p[0].item() * p[0].item();
        assert!(f < prev);
        prev = f;
    }
    let err = opt.step(&mut p, &[Tensor::scalar(f64::NAN)], 1e-2);
    assert!(matches!(err, Err(Error::Numeric(_))));
}

#[test]
fn cosine_schedule_points() {
    assert_eq!(cosine_lr(0, 10, 1.0, 0.1), 1.0);
    assert_eq!(cosine_lr(10, 10, 1.0, 0.1), 0.1);
    assert_eq!(cosine_lr(50, 10, 1.0, 0.1), 0.1);
    assert!((cosine_lr(5, 10, 1.0, 0.1) - 0.55).abs() < 1e-15);
}

#[test]
fn batches_cover_ids_once() {
    let ids: Vec<usize> = (0..13).collect();
    let b = batches(&ids, 4);
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 5]);
    assert_eq!(b.concat(), ids);
}

#[test]
fn zero_lr_keeps_parameters() {
    let d = small_data();
    let mut cfg = small_cfg(LossKind::Mfh);
    cfg.optim.lr = 0.0;
    let out = train_run::<f64>(&d, &cfg).unwrap();
    let init = EncoderPair::<f64>::init(6, 5, &cfg.encoder, cfg.seeds.init);
    assert_eq!(out.student, init);
    assert_eq!(out.history[0].val_r1, out.history[1].val_r1);
}

#[test]
fn runs_are_deterministic_for_every_loss() {
    let d = small_data();
    for kind in LossKind::ALL {
        let cfg = small_cfg(kind);
        let a = train_run::<f64>(&d, &cfg).unwrap();
        let b = train_run::<f64>(&d, &cfg).unwrap();
        assert!(a.abort.is_none(), "{kind}");
        assert_eq!(a.history, b.history, "{kind}");
        assert_eq!(a.student, b.student, "{kind}");
    }
}

#[test]
fn teacher_lags_student() {
    let d = small_data();
    let out = train_run::<f64>(&d, &small_cfg(LossKind::Hard)).unwrap();
    assert_ne!(out.teacher.encoders, out.student);
}

#[test]
fn checkpoint_round_trip() {
    let d = small_data();
    let cfg = small_cfg(LossKind::All);
    let out = train_run::<f64>(&d, &cfg).unwrap();
    let ck = Checkpoint::from_outcome(&d, &cfg, &out);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.student::<f64>().unwrap(), out.student);
    assert_eq!(back.teacher::<f64>().unwrap(), out.teacher);
}

#[test]
fn config_validation() {
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    assert!(cfg.validate().is_err());
    let cfg = TrainConfig {
        batch_size: 1,
        ..TrainConfig::default()
    };
    assert!(cfg.validate().is_err());
    let text = "epochs = 3\nloss = \"hard\"\n[mfh]\nalpha = 0.5\nrepetitions = \"ncol\"\n";
    let cfg: TrainConfig = toml::from_str(text).unwrap();
    assert_eq!(cfg.mfh.repetitions, crate::grouping::Repetitions::Ncol);
    assert!(toml::from_str::<TrainConfig>("epoch = 3").is_err());
}

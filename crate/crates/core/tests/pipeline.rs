use ddm_core::config::RunConfig;
use ddm_core::eval::boundary_error;
use ddm_core::forward::Aperture;
use ddm_core::io::{load_checkpoint, load_dataset, save_checkpoint, save_dataset};
use ddm_core::physics::LossWeights;
use ddm_core::train::{generate_dataset, invert, terr, train_ddm};

fn small() -> RunConfig {
    RunConfig { m: 4, n_t: 16, n_lambda: 3, n_samples: 20, epochs: 6, batch_size: 4, learning_rate: 1e-3, sigma: 0.01, ..Default::default() }
}

#[test]
fn generate_train_save_load_invert() {
    let config = small();
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(&config).unwrap();
    assert_eq!(data.samples.len(), 20);
    assert_eq!((data.train().len(), data.test().len()), (16, 4));

    let path = dir.path().join("data.ddm");
    save_dataset(&path, &data).unwrap();
    let data = load_dataset(&path).unwrap();

    let ck = train_ddm(&data, &config).unwrap();
    assert_eq!(ck.history.len(), config.epochs);
    assert!(ck.history.iter().all(|r| r.l_ddm.is_finite() && r.err.is_finite()));
    let best = ck.history.iter().map(|r| r.l_ddm).fold(f64::INFINITY, f64::min);
    assert_eq!(ck.history[ck.best_epoch - 1].l_ddm, best);

    let ck_path = dir.path().join("model.ckpt");
    save_checkpoint(&ck_path, &ck).unwrap();
    let ck = load_checkpoint(&ck_path).unwrap();
    assert!(ck.best.dcnet.is_some());

    let sample = &data.test()[0];
    let inv = invert(&ck.best, &config, &sample.limited).unwrap();
    assert_eq!(inv.curve.n_lambda(), 3);
    assert_eq!(inv.kernel.len(), 8);
    assert_eq!((inv.completed.rows, inv.completed.cols), (8, 8));
    let e = boundary_error(&sample.curve.clone().into(), &inv.curve, 64).unwrap();
    assert!(e.value.is_finite());
    assert!(terr(&ck.best, data.test()).unwrap().is_finite());

    // identical seeds give identical training
    let again = train_ddm(&data, &config).unwrap();
    assert_eq!(again.history, ck.history);
}

#[test]
fn physics_loss_trends_down_without_data_completion() {
    let config = RunConfig {
        aperture: Aperture::full(),
        weights: LossWeights { beta_dc: 0.0, ..Default::default() },
        n_samples: 40,
        epochs: 60,
        batch_size: 8,
        learning_rate: 1e-4,
        ..small()
    };
    let data = generate_dataset(&config).unwrap();
    let ck = train_ddm(&data, &config).unwrap();
    assert!(ck.best.dcnet.is_none());
    let l_phy: Vec<f64> = ck.history.iter().map(|r| r.l_phy).collect();
    let smooth = median_filter(&l_phy, 10);
    for t in 0..smooth.len() - 20 {
        assert!(smooth[t + 20] <= smooth[t], "smoothed L_phy rose from {} to {} after epoch {}", smooth[t], smooth[t + 20], t + 1);
    }
}

/// Running median over `[i - half, i + half]`, truncated at the ends.
fn median_filter(v: &[f64], half: usize) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let mut w = v[i.saturating_sub(half)..(i + half + 1).min(v.len())].to_vec();
            w.sort_by(f64::total_cmp);
            w[w.len() / 2]
        })
        .collect()
}

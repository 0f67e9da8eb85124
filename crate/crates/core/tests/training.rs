use fairfl::datagen::{
    dirichlet_partition, gaussian_mixture_data, split_train_test, ClientDataset, FederatedDataset,
};
use fairfl::fedsim::{rng_stream, run_training, Algorithm, TrainConfig};
use fairfl::model::{loss_and_gradient, norm, Arch};
use fairfl::{ModelParams, ScalarizerSpec};

fn config(
    algorithm: Algorithm,
    arch: Arch,
    rounds: usize,
    batch_size: usize,
    lr: f64,
) -> TrainConfig {
    TrainConfig {
        algorithm,
        arch,
        rounds,
        local_epochs: 1,
        batch_size,
        lr,
        participation_frac: 1.0,
        seed: 42,
        eval_every: rounds,
    }
}

/// Two clients with overlapping classes, so the logistic objective has a
/// finite minimizer.
fn overlapping_clients() -> FederatedDataset {
    let mut rng = rng_stream(8, 0, 0);
    let pool = gaussian_mixture_data(30, 2, 2, 1.0, &mut rng).unwrap();
    // class-major pool: the first client sees mostly class 0
    let (a, b) = (pool[..22].to_vec(), pool[22..].to_vec());
    FederatedDataset {
        clients: vec![
            ClientDataset {
                train: a,
                test: vec![],
            },
            ClientDataset {
                train: b,
                test: vec![],
            },
        ],
        global_test: None,
    }
}

fn propfair_gradient(fd: &FederatedDataset, model: &ModelParams, m: f64) -> Vec<f64> {
    let p = fd.weights();
    let mut g = vec![0.0; model.theta().len()];
    for (c, w) in fd.clients.iter().zip(&p) {
        let (f, gi) = loss_and_gradient(model, &c.train).unwrap();
        for (acc, x) in g.iter_mut().zip(&gi) {
            *acc += w * x / (m - f);
        }
    }
    g
}

#[test]
fn propfair_reaches_centralized_minimizer() {
    let fd = overlapping_clients();
    let arch = Arch::LinearSoftmax { d: 2, classes: 2 };
    let m = 5.0;
    let spec = ScalarizerSpec::PropFair {
        baseline: m,
        epsilon: 0.2,
    };
    let h = run_training(
        &fd,
        &config(Algorithm::Scalarized(spec), arch, 3000, 64, 1.0),
        None,
    )
    .unwrap();

    let mut central = ModelParams::zeros(arch).unwrap();
    for _ in 0..20_000 {
        let g = propfair_gradient(&fd, &central, m);
        central = central.stepped(1.0, &g).unwrap();
    }
    assert!(norm(&propfair_gradient(&fd, &central, m)) < 1e-10);
    let gap = h
        .final_model
        .theta()
        .iter()
        .zip(central.theta())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(gap < 1e-4, "distance to centralized minimizer {gap}");
}

#[test]
fn qffl_with_zero_exponent_trains_like_fedavg() {
    let mut rng = rng_stream(9, 0, 0);
    let pool = gaussian_mixture_data(40, 3, 3, 2.0, &mut rng).unwrap();
    let fd = dirichlet_partition(&pool, 4, 0.5, 8, 50, &mut rng).unwrap();
    let fd = split_train_test(&fd, 0.75, &mut rng).unwrap();
    let arch = Arch::Mlp1 {
        d: 3,
        hidden: 5,
        classes: 3,
    };
    let a = run_training(
        &fd,
        &config(
            Algorithm::Scalarized(ScalarizerSpec::FedAvg),
            arch,
            10,
            8,
            0.1,
        ),
        None,
    )
    .unwrap();
    let q0 = Algorithm::Scalarized(ScalarizerSpec::QFfl { q: 0.0 });
    let b = run_training(&fd, &config(q0, arch, 10, 8, 0.1), None).unwrap();
    assert_eq!(a.final_model, b.final_model);
    assert_eq!(
        a.records.last().unwrap().test_accuracy,
        b.records.last().unwrap().test_accuracy
    );
}

#[test]
fn term_lowers_the_worst_client_loss() {
    let mut rng = rng_stream(10, 0, 0);
    let pool = gaussian_mixture_data(60, 3, 2, 1.5, &mut rng).unwrap();
    let fd = dirichlet_partition(&pool, 5, 0.2, 10, 100, &mut rng).unwrap();
    let arch = Arch::LinearSoftmax { d: 2, classes: 3 };
    let worst = |alg: Algorithm| {
        let h = run_training(&fd, &config(alg, arch, 400, 256, 0.05), None).unwrap();
        let f = &h.records.last().unwrap().train_loss;
        f.iter().cloned().fold(f64::MIN, f64::max)
    };
    let fedavg = worst(Algorithm::Scalarized(ScalarizerSpec::FedAvg));
    let term = worst(Algorithm::Scalarized(ScalarizerSpec::Term { alpha: 1.0 }));
    assert!(
        term <= fedavg + 1e-9,
        "worst client loss TERM {term} vs FedAvg {fedavg}"
    );
}

#[test]
fn partial_participation_records_every_evaluation() {
    let mut rng = rng_stream(11, 0, 0);
    let pool = gaussian_mixture_data(30, 2, 2, 2.0, &mut rng).unwrap();
    let fd = split_train_test(
        &dirichlet_partition(&pool, 6, 1.0, 5, 50, &mut rng).unwrap(),
        0.8,
        &mut rng,
    )
    .unwrap();
    let mut cfg = config(
        Algorithm::Scalarized(ScalarizerSpec::FedAvg),
        Arch::LinearSoftmax { d: 2, classes: 2 },
        9,
        4,
        0.1,
    );
    cfg.participation_frac = 0.4;
    cfg.eval_every = 4;
    let h = run_training(&fd, &cfg, None).unwrap();
    assert_eq!(
        h.records.iter().map(|r| r.round).collect::<Vec<_>>(),
        vec![0, 4, 8, 9]
    );
    for r in &h.records {
        assert_eq!(r.participants.len(), 3);
        assert_eq!(r.train_loss.len(), 6);
    }
}

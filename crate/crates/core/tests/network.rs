use ndarray::Array2;
use pbit_dbn::checkpoint;
use pbit_dbn::dbn::{greedy_train, DbnConfig, DbnModel, ReadoutConfig};
use pbit_dbn::rbm::{CdConfig, HardwareConfig, Mode};
use pbit_dbn::Error;
use proptest::prelude::*;

/// Four 8-pixel prototypes with one flipped pixel per copy.
fn noisy_patterns(copies: usize) -> (Array2<f64>, Vec<u8>) {
    let protos: [[u8; 8]; 4] =
        [[1, 1, 1, 1, 0, 0, 0, 0], [0, 0, 0, 0, 1, 1, 1, 1], [1, 1, 0, 0, 1, 1, 0, 0], [0, 0, 1, 1, 0, 0, 1, 1]];
    let n = copies * 4;
    let mut x = Array2::zeros((n, 8));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 4;
        for j in 0..8 {
            let flip = (i / 4) % 9 == j + 1;
            x[[i, j]] = (protos[c][j] ^ flip as u8) as f64;
        }
        labels.push(c as u8);
    }
    (x, labels)
}

fn config(seed: u64, hardware: Option<HardwareConfig>) -> DbnConfig {
    DbnConfig {
        cd: CdConfig { learning_rate: 0.1, batch_size: 4, epochs: 20, seed, ..CdConfig::default() },
        readout: ReadoutConfig { learning_rate: 0.5, epochs: 60, batch_size: 4 },
        sampled_propagation: false,
        hardware,
    }
}

#[test]
fn stacked_network_learns_prototypes() {
    let (x, labels) = noisy_patterns(20);
    let (model, log) = greedy_train(&[8, 12, 6, 4], x.view(), &labels, &config(3, None)).unwrap();
    assert_eq!(model.topology(), &[8, 12, 6, 4]);
    assert_eq!(log.layers.len(), 2);
    assert_eq!(log.readout.len(), 60);
    let report = model.evaluate(x.view(), &labels, 1, 0).unwrap();
    assert!(report.err() <= 0.05, "err {}", report.err());
}

#[test]
fn hardware_network_learns_prototypes() {
    let (x, labels) = noisy_patterns(20);
    let mut cfg = config(3, Some(HardwareConfig::default()));
    cfg.cd.batch_size = 1;
    cfg.readout.batch_size = 1;
    cfg.readout.learning_rate = 0.1;
    let (model, _) = greedy_train(&[8, 16, 4], x.view(), &labels, &cfg).unwrap();
    assert_eq!(model.mode(), Mode::Hardware);
    let report = model.evaluate(x.view(), &labels, 1, 0).unwrap();
    assert!(report.err() <= 0.25, "err {}", report.err());
}

#[test]
fn evaluation_is_pure() {
    let (x, labels) = noisy_patterns(8);
    let (model, _) = greedy_train(&[8, 6, 4], x.view(), &labels, &config(9, Some(HardwareConfig::default()))).unwrap();
    let a = model.evaluate(x.view(), &labels, 5, 42).unwrap();
    let b = model.evaluate(x.view(), &labels, 5, 42).unwrap();
    assert_eq!(a, b);
    let total: usize = a.confusion.iter().flatten().sum();
    assert_eq!(total, labels.len());
    let correct: usize = (0..4).map(|c| a.confusion[c][c]).sum();
    assert_eq!(correct + a.n_false, a.n);
}

#[test]
fn zero_epochs_keep_initialization() {
    let (x, labels) = noisy_patterns(4);
    let mut cfg = config(5, None);
    cfg.cd.epochs = 0;
    cfg.readout.epochs = 0;
    let (model, _) = greedy_train(&[8, 5, 4], x.view(), &labels, &cfg).unwrap();
    assert_eq!(model, DbnModel::init(&[8, 5, 4], &cfg).unwrap());
}

#[test]
fn training_is_reproducible_per_seed() {
    let (x, labels) = noisy_patterns(6);
    let run = |seed| greedy_train(&[8, 6, 4], x.view(), &labels, &config(seed, None)).unwrap().0;
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn checkpoint_file_round_trip() {
    let (x, labels) = noisy_patterns(4);
    let dir = tempfile::tempdir().unwrap();
    for hardware in [None, Some(HardwareConfig::calibrated(Some(16), 65, 0.5).unwrap())] {
        let (model, _) = greedy_train(&[8, 6, 4], x.view(), &labels, &config(4, hardware)).unwrap();
        let path = dir.path().join("model.ckpt");
        checkpoint::save(&model, &path).unwrap();
        assert_eq!(checkpoint::load(&path).unwrap(), model);
    }
}

#[test]
fn missing_checkpoint_is_io_error() {
    let err = checkpoint::load(std::path::Path::new("/nonexistent/model.ckpt")).unwrap_err();
    assert!(matches!(err, Error::Io(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>(), hidden in 1usize..6, hardware in any::<bool>()) {
        let (x, labels) = noisy_patterns(2);
        let hw = hardware.then(HardwareConfig::default);
        let mut cfg = config(seed, hw);
        cfg.cd.epochs = 2;
        cfg.readout.epochs = 2;
        let (model, _) = greedy_train(&[8, hidden, 4], x.view(), &labels, &cfg).unwrap();
        let bytes = checkpoint::to_bytes(&model);
        prop_assert_eq!(checkpoint::from_bytes(&bytes).unwrap(), model);
    }

    #[test]
    fn damaged_checkpoints_never_load_silently(cut in 1usize..64, flip in 0usize..4) {
        let (x, labels) = noisy_patterns(2);
        let mut cfg = config(1, None);
        cfg.cd.epochs = 1;
        cfg.readout.epochs = 1;
        let (model, _) = greedy_train(&[8, 3, 4], x.view(), &labels, &cfg).unwrap();
        let mut bytes = checkpoint::to_bytes(&model);
        let truncated = &bytes[..bytes.len() - cut.min(bytes.len())];
        let damaged = matches!(checkpoint::from_bytes(truncated), Err(Error::Parse { .. }));
        prop_assert!(damaged);
        bytes[flip] ^= 0xff;
        let flipped = matches!(checkpoint::from_bytes(&bytes), Err(Error::Parse { .. }));
        prop_assert!(flipped);
    }
}

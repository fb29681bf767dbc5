use ndarray::{Array1, Array2};
use pbit_dbn::rbm::{sigmoid, CdConfig, HardwareConfig, Mode, RbmModel};
use pbit_dbn::rng::seeded;
use proptest::prelude::*;
use rand::Rng;

fn random_model(nv: usize, nh: usize, scale: f64, seed: u64) -> RbmModel {
    let mut rng = seeded(seed);
    let w = Array2::from_shape_fn((nv, nh), |_| rng.random_range(-scale..scale));
    let bv = Array1::from_shape_fn(nv, |_| rng.random_range(-scale..scale));
    let bh = Array1::from_shape_fn(nh, |_| rng.random_range(-scale..scale));
    RbmModel::from_parts(w, bv, bh).unwrap()
}

fn bits(n: usize, mask: u64) -> Vec<u8> {
    (0..n).map(|i| ((mask >> i) & 1) as u8).collect()
}

fn to_f64(v: &[u8]) -> Vec<f64> {
    v.iter().map(|&b| b as f64).collect()
}

#[test]
fn two_unit_distribution() {
    let model = RbmModel::from_parts(Array2::from_elem((1, 1), 1.0), Array1::zeros(1), Array1::zeros(1)).unwrap();
    let p = model.exact_distribution().unwrap();
    let e = std::f64::consts::E;
    assert!((p[3] - e / (3.0 + e)).abs() < 1e-12);
    assert!((p[3] - 0.47536).abs() < 1e-5);
}

#[test]
fn midpoint_hardware_is_unbiased() {
    let model = RbmModel::hardware(32, 8, HardwareConfig::default());
    assert_eq!(model.mode(), Mode::Hardware);
    for mask in [0u64, u64::MAX, 0xF0F0_F0F0, 0x1234_5678] {
        for p in model.hidden_probabilities(&to_f64(&bits(32, mask))).unwrap() {
            assert!((p - 0.5).abs() <= 0.01);
        }
    }
}

#[test]
fn coarse_cells_ignore_small_updates() {
    let cfg = HardwareConfig::calibrated(None, 3, 1.0).unwrap();
    let mut model = RbmModel::hardware(6, 3, cfg);
    let before = model.clone();
    let data = Array2::from_shape_fn((4, 6), |(i, j)| ((i + j) % 2) as f64);
    let cd = CdConfig { learning_rate: 0.01, batch_size: 4, epochs: 3, ..CdConfig::default() };
    model.train(data.view(), &cd, &mut seeded(3)).unwrap();
    assert_eq!(model, before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_distribution_follows_energy(nv in 1usize..5, nh in 1usize..5, seed in any::<u64>()) {
        let model = random_model(nv, nh, 2.0, seed);
        let p = model.exact_distribution().unwrap();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let z_ratio = |s: usize| {
            let v = bits(nv, s as u64);
            let h = bits(nh, (s >> nv) as u64);
            p[s] / (-model.energy(&v, &h).unwrap()).exp()
        };
        let reference = z_ratio(0);
        for s in 1..p.len() {
            prop_assert!((z_ratio(s) / reference - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn hidden_units_are_conditionally_independent(nv in 1usize..8, nh in 2usize..8, seed in any::<u64>(), mask in any::<u64>()) {
        let model = random_model(nv, nh, 3.0, seed);
        let perm: Vec<usize> = (0..nh).rev().collect();
        let w = Array2::from_shape_fn((nv, nh), |(i, j)| model.weights()[[i, perm[j]]]);
        let bh = Array1::from_shape_fn(nh, |j| model.hidden_bias()[perm[j]]);
        let permuted = RbmModel::from_parts(w, model.visible_bias().clone(), bh).unwrap();
        let v = to_f64(&bits(nv, mask));
        let p = model.hidden_probabilities(&v).unwrap();
        let q = permuted.hidden_probabilities(&v).unwrap();
        for j in 0..nh {
            prop_assert_eq!(q[j], p[perm[j]]);
        }
    }

    #[test]
    fn logistic_probabilities(nv in 1usize..10, nh in 1usize..6, seed in any::<u64>(), mask in any::<u64>()) {
        let model = random_model(nv, nh, 2.0, seed);
        let v = bits(nv, mask);
        let p = model.hidden_probabilities(&to_f64(&v)).unwrap();
        for (j, pj) in p.iter().enumerate() {
            let x = model.hidden_bias()[j] + (0..nv).map(|i| model.weights()[[i, j]] * v[i] as f64).sum::<f64>();
            prop_assert!((pj - sigmoid(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn hardware_probabilities_stay_in_envelope(
        nv in 1usize..40, nh in 1usize..6, seed in any::<u64>(), mask in any::<u64>(), rows in proptest::option::of(1usize..64),
    ) {
        let ideal = random_model(nv, nh, 5.0, seed);
        let cfg = HardwareConfig::calibrated(rows, 33, 1.0).unwrap();
        let pbit_dbn::rbm::Activation::PBit(act) = cfg.activation.clone() else { unreachable!() };
        let model = ideal.quantized(cfg);
        let (lo, hi) = act.envelope(nv);
        for p in model.hidden_probabilities(&to_f64(&bits(nv, mask))).unwrap() {
            prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12, "{} outside [{}, {}]", p, lo, hi);
        }
        let (lo, hi) = act.envelope(nh);
        for p in model.visible_probabilities(&to_f64(&bits(nh, mask >> 40))).unwrap() {
            prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
        }
    }

    #[test]
    fn fine_logistic_hardware_tracks_ideal(nv in 1usize..32, nh in 1usize..8, seed in any::<u64>(), mask in any::<u64>()) {
        let ideal = random_model(nv, nh, 1.0, seed);
        let hw = ideal.quantized(HardwareConfig::logistic(1025, 1.0).unwrap());
        let v = to_f64(&bits(nv, mask));
        let p = ideal.hidden_probabilities(&v).unwrap();
        let q = hw.hidden_probabilities(&v).unwrap();
        // each of the nv + 1 terms moves by at most half a step; the logistic slope is at most 1/4
        let bound = 0.25 * (nv + 1) as f64 * (1.0 / 1024.0) + 1e-12;
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= bound);
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op(seed in any::<u64>(), hardware in any::<bool>()) {
        let ideal = random_model(6, 4, 1.0, seed);
        let model = if hardware { ideal.quantized(HardwareConfig::default()) } else { ideal };
        let data = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 3 + j) % 2) as f64);
        let cfg = CdConfig { learning_rate: 0.0, batch_size: 5, ..CdConfig::default() };
        let (next, _) = model.cd_update(data.view(), &cfg, &mut seeded(seed)).unwrap();
        prop_assert_eq!(next, model);
    }

    #[test]
    fn gibbs_trajectories_repeat_per_seed(seed in any::<u64>(), start in any::<u64>()) {
        let model = random_model(5, 4, 1.5, seed);
        let run = || {
            let mut rng = seeded(seed ^ 0x5a5a);
            let mut v = bits(5, start);
            let mut path = Vec::new();
            for _ in 0..50 {
                let (nv, h) = model.gibbs_step(&v, &mut rng).unwrap();
                path.push((nv.clone(), h));
                v = nv;
            }
            path
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn repeated_pattern_lowers_reconstruction_error() {
    let mut model = RbmModel::ideal(4, 2, &mut seeded(11));
    let data = Array2::from_shape_vec((8, 4), [1.0, 0.0, 1.0, 0.0].repeat(8)).unwrap();
    let cfg = CdConfig { learning_rate: 0.1, batch_size: 8, epochs: 1, ..CdConfig::default() };
    let mut rng = seeded(12);
    let start = model.reconstruction_rmse(data.view()).unwrap();
    let mut checkpoints = vec![start];
    for _ in 0..5 {
        for _ in 0..40 {
            model.train(data.view(), &cfg, &mut rng).unwrap();
        }
        checkpoints.push(model.reconstruction_rmse(data.view()).unwrap());
    }
    assert!(checkpoints.windows(2).all(|w| w[1] < w[0]), "{checkpoints:?}");
}

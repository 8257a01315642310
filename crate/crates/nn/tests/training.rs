use qubo_core::metrics::Head;
use qubo_nn::io::{load_model, save_model, weight_bytes};
use qubo_nn::zoo::{build_autoencoder, build_cnn_solver, build_combined, Arch};
use qubo_nn::{Loss, Mode, Optimizer, Tensor};

fn input(shape: Vec<usize>, salt: u64) -> Tensor {
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|i| (qubo_core::rng::split_mix(salt, i as u64) % 1000) as f64 / 1000.0)
        .collect();
    Tensor::new(shape, data).unwrap()
}

#[test]
fn frozen_encoder_survives_training() {
    let ae = build_autoencoder(Arch::Cae, &[1, 8, 8], 0.25, 1).unwrap();
    let solver = build_cnn_solver(&[4, 2, 2], 16, 4, 0.5, Head::Sigmoid, 2).unwrap();
    let mut c = build_combined(&ae, &solver).unwrap();
    let frozen = c.net.frozen_prefix();
    let before: Vec<_> = c.net.params()[..frozen].to_vec();
    let head_before = c.net.params()[frozen].clone();
    let x = input(vec![4, 1, 8, 8], 3);
    let y = Tensor::new(
        vec![4, 16],
        (0..64).map(|i| (i % 4 == 0) as u8 as f64).collect(),
    )
    .unwrap();
    let mut opt = Optimizer::adam();
    let mut rng = qubo_core::rng::stream(9, 0);
    for _ in 0..5 {
        let pred = c.net.forward(&x, Mode::Train(&mut rng)).unwrap();
        let (_, g) = Loss::constrained(4).evaluate(&pred, &y).unwrap();
        let grads = c.net.backward(&g).unwrap();
        opt.step(&mut c.net, &grads).unwrap();
    }
    assert_eq!(&c.net.params()[..frozen], before.as_slice());
    assert_ne!(c.net.params()[frozen], head_before);
}

#[test]
fn adam_reduces_reconstruction_loss() {
    let mut m = build_autoencoder(Arch::VanillaAe, &[1, 4, 4], 0.5, 3).unwrap();
    let x = input(vec![8, 1, 4, 4], 5);
    let mut opt = Optimizer::adam();
    let first = Loss::Mse
        .evaluate(&m.net.predict(&x).unwrap(), &x)
        .unwrap()
        .0;
    for _ in 0..300 {
        let pred = m.net.forward(&x, Mode::Eval).unwrap();
        let (_, g) = Loss::Mse.evaluate(&pred, &x).unwrap();
        let grads = m.net.backward(&g).unwrap();
        opt.step(&mut m.net, &grads).unwrap();
    }
    let last = Loss::Mse
        .evaluate(&m.net.predict(&x).unwrap(), &x)
        .unwrap()
        .0;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn saved_model_reproduces_predictions() {
    let m = build_cnn_solver(&[1, 8, 8], 16, 3, 0.5, Head::RowwiseSoftmax, 4).unwrap();
    let dir = std::env::temp_dir().join(format!("qubo-nn-training-{}", std::process::id()));
    let path = dir.join("solver");
    save_model(&m, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(weight_bytes(&back.net), weight_bytes(&m.net));
    let x = input(vec![3, 1, 8, 8], 8);
    assert_eq!(back.net.predict(&x).unwrap(), m.net.predict(&x).unwrap());
    std::fs::remove_dir_all(dir).ok();
}

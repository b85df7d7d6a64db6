use ginv_core::metrics::integrated_gradients;
use ginv_core::network::{FirstLayerMode, Mlp, NetSpec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn integrated_gradients_are_complete() {
    for seed in 0..10 {
        let net = Mlp::init(
            &NetSpec {
                input_side: 6,
                hidden: vec![16, 16],
                classes: 9,
                first_layer: FirstLayerMode::Plain,
            },
            seed,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((4, 36), || rng.random_range(-1.0..1.0));
        let labels: Vec<u8> = (0..4).map(|_| rng.random_range(0..9)).collect();
        let ig = integrated_gradients(&net, x.view(), &labels, 128).unwrap();
        let fx = net.logits(x.view()).unwrap();
        let f0 = net.logits(Array2::zeros((1, 36)).view()).unwrap();
        for i in 0..4 {
            let k = labels[i] as usize;
            let target = fx[[i, k]] - f0[[0, k]];
            let total: f64 = ig.row(i).sum();
            let err = (total - target).abs() / target.abs().max(1e-3);
            assert!(err <= 1e-2, "seed {seed} row {i}: {total} vs {target}");
        }
    }
}

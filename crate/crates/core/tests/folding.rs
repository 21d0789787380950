use adsnn::graph::{build, fold_batchnorm, parse_arch, LayerSpec, NetworkGraph};
use adsnn::neuron::NeuronParams;
use adsnn::transfer::normalized;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randomized(arch: &str, seed: u64) -> NetworkGraph {
    let p = normalized(&NeuronParams::default()).unwrap();
    let mut g = build(&parse_arch(arch).unwrap(), p, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for layer in &mut g.layers {
        match layer {
            LayerSpec::BatchNorm(bn) => {
                for c in 0..bn.channels() {
                    bn.gamma[c] = rng.gen_range(0.5..2.0);
                    bn.beta[c] = rng.gen_range(-0.5..0.5);
                    bn.running_mean[c] = rng.gen_range(-1.0..1.0);
                    bn.running_var[c] = rng.gen_range(0.1..3.0);
                }
            }
            LayerSpec::Dense(d) => d
                .bias
                .iter_mut()
                .for_each(|b| *b = rng.gen_range(-0.3..0.3)),
            LayerSpec::Conv2d(c) => c
                .bias
                .iter_mut()
                .for_each(|b| *b = rng.gen_range(-0.3..0.3)),
            _ => {}
        }
    }
    g
}

fn assert_equivalent(arch: &str, seed: u64) {
    let g = randomized(arch, seed);
    let folded = fold_batchnorm(&g).unwrap();
    assert!(!folded.has_batchnorm());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.input_shape.len();
    for _ in 0..100 {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a = g.analog_forward(&x).unwrap();
        let b = folded.analog_forward(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-5, "{arch}: {u} vs {v}");
        }
    }
}

#[test]
fn folded_dense_graphs_match() {
    for seed in 0..3 {
        assert_equivalent("4-16-16-3", seed);
        assert_equivalent("20-12-5", seed + 10);
    }
}

#[test]
fn folded_conv_graphs_match() {
    for seed in 0..3 {
        assert_equivalent("8x8x2-c4x3-m2-d10-3", seed);
        assert_equivalent("6x6-c3x3-a2-c5x3-4", seed + 7);
    }
}

#[test]
fn folding_is_idempotent() {
    let once = fold_batchnorm(&randomized("4-8-3", 1)).unwrap();
    assert_eq!(fold_batchnorm(&once).unwrap(), once);
}

use adsnn::data::Dataset;
use adsnn::graph::{build, fold_batchnorm, parse_arch, LayerSpec, NetworkGraph, Shape};
use adsnn::neuron::NeuronParams;
use adsnn::sim::{classify, evaluate, present, sweep_precision, SimConfig};
use adsnn::spiking::{convert_to_spiking, SpikingNetwork};
use adsnn::transfer::normalized;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph(arch: &str, seed: u64) -> NetworkGraph {
    let p = normalized(&NeuronParams::default()).unwrap();
    fold_batchnorm(&build(&parse_arch(arch).unwrap(), p, seed).unwrap()).unwrap()
}

fn network(arch: &str, seed: u64) -> SpikingNetwork {
    convert_to_spiking(&graph(arch, seed)).unwrap()
}

fn random_data(n: usize, dims: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = (0..n)
        .map(|_| (0..dims).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let ys = (0..n).map(|i| i % classes).collect();
    let names = (0..classes).map(|c| c.to_string()).collect();
    Dataset::new(Shape::Flat(dims), xs, ys, names).unwrap()
}

#[test]
fn zero_input_is_silent_and_abstains() {
    let mut g = graph("4-10-3", 1);
    for layer in &mut g.layers {
        if let LayerSpec::Dense(d) = layer {
            d.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }
    let mut net = convert_to_spiking(&g).unwrap();
    let cfg = SimConfig::default();
    cfg.configure(&mut net).unwrap();
    let trace = present(&mut net, &[0.0; 4], &cfg).unwrap();
    assert_eq!(trace.total_spikes(), 0);
    assert_eq!(trace.final_prediction(), None);
    assert_eq!(classify(&[0.5, 0.5, 0.5]), None);
    assert_eq!(classify(&[0.5, 0.7, 0.7]), Some(1));
}

#[test]
fn reset_restores_a_fresh_network() {
    let mut used = network("4-12-3", 2);
    let mut fresh = used.clone();
    let cfg = SimConfig {
        duration: 200.0,
        ..SimConfig::default()
    };
    cfg.configure(&mut used).unwrap();
    cfg.configure(&mut fresh).unwrap();
    present(&mut used, &[0.9, 0.1, 0.4, 0.7], &cfg).unwrap();
    used.reset();
    assert!(used.is_fresh());
    assert_eq!(used.total_spikes(), 0);
    let input = [0.2, 0.8, 0.6, 0.3];
    let a = present(&mut used, &input, &cfg).unwrap();
    let b = present(&mut fresh, &input, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn firing_rate_is_spikes_per_neuron_second() {
    let net = network("4-12-3", 3);
    let data = random_data(9, 4, 3, 4);
    let cfg = SimConfig {
        duration: 250.0,
        ..SimConfig::default()
    };
    let (m, samples) = evaluate(&net, &data, &cfg).unwrap();
    let spikes: u64 = samples.iter().map(|s| s.spikes).sum();
    assert_eq!(m.neurons, 4 + 12 + 3);
    assert_eq!(m.duration, 250.0);
    let expected = spikes as f64 / (m.neurons as f64 * 9.0 * 0.25);
    assert!((m.firing_rate - expected).abs() <= 1e-12 * expected.max(1.0));
    assert_eq!(m.accuracy_trace.len(), 250);
}

#[test]
fn evaluation_is_deterministic() {
    let net = network("4-8-3", 5);
    let data = random_data(12, 4, 3, 6);
    let cfg = SimConfig {
        duration: 150.0,
        ..SimConfig::default()
    };
    assert_eq!(
        evaluate(&net, &data, &cfg).unwrap(),
        evaluate(&net, &data, &cfg).unwrap()
    );
}

#[test]
fn readout_tracks_analog_logits_at_high_precision() {
    let g = graph("4-20-3", 7);
    let mut net = convert_to_spiking(&g).unwrap();
    let cfg = SimConfig {
        duration: 1500.0,
        precision: Some(0.03),
        ..SimConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.2..1.0)).collect();
        let mut analog_graph = g.clone();
        analog_graph
            .set_neuron_params(
                normalized(&g.neuron_params().unwrap().with_precision(0.03)).unwrap(),
            )
            .unwrap();
        let logits = analog_graph.analog_forward(&x).unwrap();
        cfg.configure(&mut net).unwrap();
        let trace = present(&mut net, &x, &cfg).unwrap();
        let mean = trace.mean_scores(500);
        let scale = logits.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(0.1);
        for (s, a) in mean.iter().zip(&logits) {
            assert!(
                (s - a).abs() <= 0.1 * scale,
                "spiking {mean:?} analog {logits:?}"
            );
        }
    }
}

#[test]
fn firing_rate_rises_as_precision_increases() {
    let net = network("4-16-3", 9);
    let data = random_data(6, 4, 3, 10);
    let cfg = SimConfig {
        duration: 300.0,
        ..SimConfig::default()
    };
    let grid = [1.0, 0.5, 0.2, 0.1, 0.05];
    let sorted = sweep_precision(&net, &data, &grid, &cfg).unwrap();
    let thetas: Vec<f64> = sorted.iter().map(|m| m.theta0).collect();
    assert_eq!(thetas, vec![1.0, 0.5, 0.2, 0.1, 0.05]);
    assert!(sorted
        .windows(2)
        .all(|w| w[1].firing_rate > w[0].firing_rate));
}

#[test]
fn empty_dataset_is_rejected() {
    let net = network("4-8-3", 1);
    let empty = random_data(3, 4, 3, 0).subset(&[]);
    assert!(evaluate(&net, &empty, &SimConfig::default()).is_err());
}

use std::fs;
use std::path::Path;

use adsnn::graph::{build, fold_batchnorm, parse_arch, LayerSpec, Shape};
use adsnn::io::exchange::{export, import, Dtype, MANIFEST_FILE};
use adsnn::neuron::NeuronParams;
use adsnn::spiking::convert_to_spiking;
use adsnn::transfer::normalized;
use adsnn::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn params() -> NeuronParams {
    normalized(&NeuronParams::default()).unwrap()
}

#[test]
fn float64_round_trip_is_bit_exact() {
    let g = build(&parse_arch("8x8x2-c4x3-m2-d10-3").unwrap(), params(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export(&g, dir.path(), Dtype::Float64).unwrap();
    assert_eq!(import(dir.path()).unwrap(), g);
}

#[test]
fn float32_round_trip_preserves_representable_values() {
    let mut g = build(&parse_arch("4-6-3").unwrap(), params(), 1).unwrap();
    for layer in &mut g.layers {
        if let LayerSpec::Dense(d) = layer {
            for w in d.weights.iter_mut().chain(d.bias.iter_mut()) {
                *w = *w as f32 as f64;
            }
        }
        if let LayerSpec::BatchNorm(bn) = layer {
            bn.eps = 1e-3f32 as f64;
        }
    }
    let dir = tempfile::tempdir().unwrap();
    export(&g, dir.path(), Dtype::Float32).unwrap();
    assert_eq!(import(dir.path()).unwrap(), g);
}

fn write_f32(path: &Path, values: &[f32]) {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).unwrap();
}

fn random(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// A small externally produced CNN: 1x12x12 -> conv 4x3 (pad 1) -> BN ->
/// transfer -> maxpool 2 -> conv 6x3 -> transfer -> avgpool 2 -> dense 10.
fn write_synthetic_cnn(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = serde_json::to_value(params()).unwrap();
    write_f32(&dir.join("layer_000.bin"), &[1.0, 0.0, 1.0, 1.0 - 1e-3]);
    let mut conv1 = random(&mut rng, 4 * 9, 0.5);
    conv1.extend(random(&mut rng, 4, 0.1));
    write_f32(&dir.join("layer_002.bin"), &conv1);
    let mut bn = vec![1.2, 0.8, 1.0, 0.9, 0.1, 0.0, -0.1, 0.2];
    bn.extend([0.05, -0.02, 0.0, 0.1, 1.5, 0.7, 1.0, 2.0]);
    write_f32(&dir.join("layer_003.bin"), &bn);
    let mut conv2 = random(&mut rng, 6 * 4 * 9, 0.3);
    conv2.extend(random(&mut rng, 6, 0.1));
    write_f32(&dir.join("layer_006.bin"), &conv2);
    let mut dense = random(&mut rng, 10 * 24, 0.4);
    dense.extend(random(&mut rng, 10, 0.1));
    write_f32(&dir.join("layer_009.bin"), &dense);
    let t = |name: &str, shape: &[usize]| json!({"name": name, "shape": shape});
    let manifest = json!({
        "format": "adsnn-exchange",
        "version": 1,
        "dtype": "float32",
        "byte_order": "little",
        "input_shape": [1, 12, 12],
        "layers": [
            {"kind": "batch_norm", "eps": 0.0, "blob": "layer_000.bin", "tensors": [
                t("gamma", &[1]), t("beta", &[1]), t("running_mean", &[1]), t("running_var", &[1])]},
            {"kind": "transfer", "params": p},
            {"kind": "conv2d", "stride": 1, "padding": 1, "blob": "layer_002.bin", "tensors": [
                t("kernels", &[4, 1, 3, 3]), t("bias", &[4])]},
            {"kind": "batch_norm", "eps": 0.001, "blob": "layer_003.bin", "tensors": [
                t("gamma", &[4]), t("beta", &[4]), t("running_mean", &[4]), t("running_var", &[4])]},
            {"kind": "transfer", "params": p},
            {"kind": "max_pool", "size": 2},
            {"kind": "conv2d", "stride": 1, "padding": 0, "blob": "layer_006.bin", "tensors": [
                t("kernels", &[6, 4, 3, 3]), t("bias", &[6])]},
            {"kind": "transfer", "params": p},
            {"kind": "avg_pool", "size": 2},
            {"kind": "dense", "blob": "layer_009.bin", "tensors": [
                t("weights", &[10, 24]), t("bias", &[10])]},
            {"kind": "transfer", "params": p},
            {"kind": "softmax_readout"}
        ]
    });
    fs::write(dir.join(MANIFEST_FILE), manifest.to_string()).unwrap();
}

#[test]
fn synthetic_cnn_manifest_is_ingested_and_converted() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_cnn(dir.path());
    let g = import(dir.path()).unwrap();
    let shapes = g.shapes().unwrap();
    assert_eq!(
        shapes[0],
        Shape::Image {
            channels: 1,
            height: 12,
            width: 12
        }
    );
    assert_eq!(
        shapes[3],
        Shape::Image {
            channels: 4,
            height: 12,
            width: 12
        }
    );
    assert_eq!(
        shapes[6],
        Shape::Image {
            channels: 4,
            height: 6,
            width: 6
        }
    );
    assert_eq!(
        shapes[7],
        Shape::Image {
            channels: 6,
            height: 4,
            width: 4
        }
    );
    assert_eq!(
        shapes[9],
        Shape::Image {
            channels: 6,
            height: 2,
            width: 2
        }
    );
    assert_eq!(g.output_shape().unwrap(), Shape::Flat(10));

    let again = tempfile::tempdir().unwrap();
    export(&g, again.path(), Dtype::Float32).unwrap();
    assert_eq!(import(again.path()).unwrap(), g);

    let folded = fold_batchnorm(&g).unwrap();
    let net = convert_to_spiking(&folded).unwrap();
    assert_eq!(net.layer_sizes(), vec![144, 4 * 36, 6 * 16, 10]);
    assert_eq!(net.num_classes(), 10);
}

#[test]
fn malformed_manifests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_cnn(dir.path());
    let path = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).unwrap();

    fs::write(&path, text.replace("[6,4,3,3]", "[6,4,3,2]")).unwrap();
    assert!(import(dir.path()).is_err());

    fs::write(&path, text.replace("layer_009.bin", "../layer_009.bin")).unwrap();
    assert!(import(dir.path()).is_err());

    let skipped = text.replace(
        "\"layers\"",
        "\"skip\": [{\"from\": 1, \"to\": 4}], \"layers\"",
    );
    fs::write(&path, skipped).unwrap();
    assert!(matches!(import(dir.path()), Err(Error::Unsupported(_))));

    fs::write(&path, &text).unwrap();
    let blob = dir.path().join("layer_009.bin");
    let mut bytes = fs::read(&blob).unwrap();
    bytes.pop();
    fs::write(&blob, bytes).unwrap();
    assert!(import(dir.path()).is_err());
}

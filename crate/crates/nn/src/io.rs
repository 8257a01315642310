//! Model container: `<prefix>.manifest.json` plus `<prefix>.weights.bin`
//! holding every weight then bias array, layer by layer, as little-endian
//! f64 values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};
use crate::layer::{LayerSpec, Params};
use crate::network::Network;
use crate::zoo::{Arch, Hyperparams, Model};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MANIFEST_SUFFIX: &str = ".manifest.json";
const WEIGHTS_SUFFIX: &str = ".weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    #[serde(flatten)]
    pub spec: LayerSpec,
    pub output_shape: Vec<usize>,
    pub weights: usize,
    pub biases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub arch: Arch,
    pub hyperparameters: Hyperparams,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerEntry>,
    pub rng_seed: u64,
    pub frozen_prefix: usize,
    pub weights_file: String,
    pub weights_sha256: String,
}

/// Manifest and weight paths for a model prefix; a path that already ends
/// in `.manifest.json` is accepted too.
pub fn model_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let prefix = s.strip_suffix(MANIFEST_SUFFIX).unwrap_or(&s).to_string();
    (
        PathBuf::from(format!("{prefix}{MANIFEST_SUFFIX}")),
        PathBuf::from(format!("{prefix}{WEIGHTS_SUFFIX}")),
    )
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn weight_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(net.parameter_count() * 8);
    for p in net.params() {
        for v in p.weight.iter().chain(&p.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let (manifest_path, weights_path) = model_paths(path);
    if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| NnError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let bytes = weight_bytes(&model.net);
    let net = &model.net;
    let manifest = ModelManifest {
        format_version: MODEL_FORMAT_VERSION,
        arch: model.arch,
        hyperparameters: model.hyper.clone(),
        input_shape: net.input_shape().to_vec(),
        layers: net
            .layers()
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let (w, b) = spec.param_shape();
                LayerEntry {
                    spec: spec.clone(),
                    output_shape: net.layer_output_shape(i).to_vec(),
                    weights: w,
                    biases: b,
                }
            })
            .collect(),
        rng_seed: net.rng_seed(),
        frozen_prefix: net.frozen_prefix(),
        weights_file: weights_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        weights_sha256: hex(&Sha256::digest(&bytes)),
    };
    fs::write(&weights_path, &bytes).map_err(|e| NnError::Io {
        path: weights_path.clone(),
        source: e,
    })?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(|e| NnError::Io {
        path: manifest_path,
        source: e,
    })
}

pub fn read_manifest(path: &Path) -> Result<ModelManifest> {
    let (manifest_path, _) = model_paths(path);
    let text = fs::read_to_string(&manifest_path).map_err(|e| NnError::Io {
        path: manifest_path.clone(),
        source: e,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| NnError::Corrupt(format!("{}: {e}", manifest_path.display())))?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(MODEL_FORMAT_VERSION) => {}
        Some(v) => return Err(NnError::UnsupportedFormat(format!("format version {v}"))),
        None => return Err(NnError::Corrupt("manifest lacks format_version".into())),
    }
    match value.get("arch").and_then(|v| v.as_str()) {
        Some(a) if Arch::ALL.iter().any(|k| k.name() == a) => {}
        Some(a) => return Err(NnError::UnsupportedFormat(format!("architecture {a:?}"))),
        None => return Err(NnError::Corrupt("manifest lacks arch".into())),
    }
    serde_json::from_value(value)
        .map_err(|e| NnError::Corrupt(format!("{}: {e}", manifest_path.display())))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let manifest = read_manifest(path)?;
    let (manifest_path, _) = model_paths(path);
    let weights_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new(""))
        .join(&manifest.weights_file);
    let bytes = fs::read(&weights_path).map_err(|e| NnError::Io {
        path: weights_path.clone(),
        source: e,
    })?;
    if hex(&Sha256::digest(&bytes)) != manifest.weights_sha256 {
        return Err(NnError::Corrupt(format!(
            "{}: digest does not match manifest",
            weights_path.display()
        )));
    }
    let needed: usize = manifest.layers.iter().map(|l| l.weights + l.biases).sum();
    if bytes.len() != needed * 8 {
        return Err(NnError::Corrupt(format!(
            "{}: {} bytes for {needed} values",
            weights_path.display(),
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
    let params = manifest
        .layers
        .iter()
        .map(|l| Params {
            weight: take(l.weights),
            bias: take(l.biases),
        })
        .collect();
    let layers: Vec<LayerSpec> = manifest.layers.iter().map(|l| l.spec.clone()).collect();
    let net = Network::from_parts(
        manifest.input_shape.clone(),
        layers,
        params,
        manifest.rng_seed,
        manifest.frozen_prefix,
    )
    .map_err(|e| NnError::Corrupt(e.to_string()))?;
    for (i, l) in manifest.layers.iter().enumerate() {
        if net.layer_output_shape(i) != l.output_shape.as_slice() {
            return Err(NnError::Corrupt(format!(
                "layer {i} output shape disagrees with manifest"
            )));
        }
    }
    Ok(Model {
        arch: manifest.arch,
        hyper: manifest.hyperparameters,
        net,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::zoo::build_autoencoder;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("qubo-nn-io-{}-{name}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join("model")
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let m = build_autoencoder(Arch::Cae, &[1, 8, 8], 0.25, 5).unwrap();
        let p = tmp("roundtrip");
        save_model(&m, &p).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!(weight_bytes(&back.net), weight_bytes(&m.net));
        assert_eq!(back.hyper, m.hyper);
        let x = Tensor::new(vec![1, 1, 8, 8], (0..64).map(|i| i as f64 / 64.0).collect()).unwrap();
        let (a, b) = (m.net.predict(&x).unwrap(), back.net.predict(&x).unwrap());
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(u, v)| u.to_bits() == v.to_bits()));
        let via_manifest = load_model(&model_paths(&p).0).unwrap();
        assert_eq!(weight_bytes(&via_manifest.net), weight_bytes(&m.net));
    }

    #[test]
    fn truncated_weights_are_corrupt() {
        let m = build_autoencoder(Arch::VanillaAe, &[1, 4, 4], 0.5, 1).unwrap();
        let p = tmp("truncated");
        save_model(&m, &p).unwrap();
        let (_, w) = model_paths(&p);
        let bytes = fs::read(&w).unwrap();
        fs::write(&w, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_model(&p), Err(NnError::Corrupt(_))));
    }

    #[test]
    fn unknown_arch_and_version_are_unsupported() {
        let m = build_autoencoder(Arch::VanillaAe, &[1, 4, 4], 0.5, 1).unwrap();
        let p = tmp("unsupported");
        save_model(&m, &p).unwrap();
        let (mp, _) = model_paths(&p);
        let text = fs::read_to_string(&mp).unwrap();
        fs::write(&mp, text.replace("\"vanilla_ae\"", "\"transformer\"")).unwrap();
        assert!(matches!(load_model(&p), Err(NnError::UnsupportedFormat(_))));
        save_model(&m, &p).unwrap();
        let text = fs::read_to_string(&mp).unwrap();
        fs::write(
            &mp,
            text.replace("\"format_version\": 1", "\"format_version\": 99"),
        )
        .unwrap();
        assert!(matches!(load_model(&p), Err(NnError::UnsupportedFormat(_))));
    }
}

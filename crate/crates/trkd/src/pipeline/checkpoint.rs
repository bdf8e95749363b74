//! Bit-exact model checkpoints.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic  b"TRKD"                    4 bytes
//! version u32 = 1                   4 bytes
//! layer_count L u32                 4 bytes
//! widths u32 * (L + 1)              [input, hidden..., embedding]
//! num_classes C u32                 4 bytes
//! per layer: weights f64 * out*in   row-major, then biases f64 * out
//! class weights f64 * C*embedding   row-major
//! ```

use std::path::Path;

use super::mlp::{DenseLayer, Mlp, MlpSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TRKD";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained embedding network together with its margin-softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub mlp: Mlp,
    pub class_weights: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn num_classes(&self) -> usize {
        self.class_weights.len()
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let spec = ckpt.mlp.spec();
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.num_layers() as u32).to_le_bytes());
    for &w in spec.widths() {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(ckpt.class_weights.len() as u32).to_le_bytes());
    for layer in ckpt.mlp.layers() {
        for &v in layer.weights.iter().chain(&layer.biases) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for row in &ckpt.class_weights {
        if row.len() != spec.embedding_dim() {
            return Err(Error::Shape(format!(
                "class weight row has {} entries but embedding dim is {}",
                row.len(),
                spec.embedding_dim()
            )));
        }
        for &v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::Truncated { expected: 12, found: bytes.len() as u64 });
    }
    if bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:02x?}, expected \"TRKD\"",
            &bytes[0..4]
        )));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let layer_count = u32_at(8) as usize;
    if layer_count == 0 || layer_count > 64 {
        return Err(Error::Format(format!("implausible layer count {layer_count}")));
    }
    let header_len = 12 + 4 * (layer_count + 1) + 4;
    if bytes.len() < header_len {
        return Err(Error::Truncated {
            expected: header_len as u64,
            found: bytes.len() as u64,
        });
    }
    let widths: Vec<usize> = (0..=layer_count)
        .map(|i| u32_at(12 + 4 * i) as usize)
        .collect();
    let num_classes = u32_at(12 + 4 * (layer_count + 1)) as usize;

    let param_count: usize = widths
        .windows(2)
        .map(|w| w[0] * w[1] + w[1])
        .sum::<usize>()
        + num_classes * widths[layer_count];
    let expected = (header_len + 8 * param_count) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated { expected, found: bytes.len() as u64 });
    }

    let mut off = header_len;
    let mut f64_at = || {
        let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        off += 8;
        v
    };
    let spec = MlpSpec::new(widths.clone())?;
    let mut layers = Vec::with_capacity(layer_count);
    for w in widths.windows(2) {
        let (in_dim, out_dim) = (w[0], w[1]);
        let weights: Vec<f64> = (0..in_dim * out_dim).map(|_| f64_at()).collect();
        let biases: Vec<f64> = (0..out_dim).map(|_| f64_at()).collect();
        layers.push(DenseLayer { in_dim, out_dim, weights, biases });
    }
    let emb = widths[layer_count];
    let class_weights: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..emb).map(|_| f64_at()).collect())
        .collect();
    for (j, row) in class_weights.iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite class weight in row {j}"
            )));
        }
    }
    let mlp = Mlp::from_layers(spec, layers)?;
    Ok(Checkpoint { mlp, class_weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn sample_checkpoint(seed: u64) -> Checkpoint {
        let spec = MlpSpec::new(vec![5, 7, 3]).unwrap();
        let mlp = Mlp::init(&spec, seed);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 1);
        let class_weights: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let row: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() - 0.5).collect();
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                row.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        Checkpoint { mlp, class_weights }
    }

    #[test]
    fn round_trip_bitwise() {
        let ckpt = sample_checkpoint(4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn magic_and_truncation_detected() {
        let ckpt = sample_checkpoint(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Truncated { .. })));

        save_checkpoint(&ckpt, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[1] = b'?';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_detected() {
        let ckpt = sample_checkpoint(6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 7;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Version { .. })));
    }
}

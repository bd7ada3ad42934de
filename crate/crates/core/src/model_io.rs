//! Binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"LMDP"
//! u16    format version (currently 1)
//! u32    layer count
//! per layer: u32 in_dim, u32 out_dim, u8 activation code
//! per layer: out_dim*in_dim f64 weights (row-major), out_dim f64 bias
//! ```
//!
//! Save followed by load reproduces the model bit for bit.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, LayeredModel};
use crate::tensor::{Tensor1, Tensor2};

pub const MODEL_MAGIC: &[u8; 4] = b"LMDP";
pub const MODEL_FORMAT_VERSION: u16 = 1;

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Tanh => 1,
        Activation::Identity => 2,
        Activation::SoftmaxOutput => 3,
    }
}

fn activation_from_code(code: u8) -> Option<Activation> {
    match code {
        0 => Some(Activation::Relu),
        1 => Some(Activation::Tanh),
        2 => Some(Activation::Identity),
        3 => Some(Activation::SoftmaxOutput),
        _ => None,
    }
}

/// Serializes the model into the container layout.
pub fn encode_model(model: &LayeredModel) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(16 + model.param_count() * 8);
    bytes.extend_from_slice(MODEL_MAGIC);
    bytes.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(model.layer_count() as u32).to_le_bytes());
    for spec in model.specs() {
        bytes.extend_from_slice(&(spec.in_dim as u32).to_le_bytes());
        bytes.extend_from_slice(&(spec.out_dim as u32).to_le_bytes());
        bytes.push(activation_code(spec.activation));
    }
    for params in model.params() {
        for v in params.weights.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in params.bias.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.offset + n;
        if end > self.bytes.len() {
            return Err(Error::format(self.path, "truncated container"));
        }
        let slice = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a container produced by [`encode_model`].
pub fn decode_model(bytes: &[u8], path_for_errors: &str) -> Result<LayeredModel> {
    let mut r = Reader {
        bytes,
        offset: 0,
        path: path_for_errors,
    };
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::format(path_for_errors, "bad magic, not a model container"));
    }
    let version = r.u16()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::format(
            path_for_errors,
            format!("unsupported format version {}", version),
        ));
    }
    let layer_count = r.u32()? as usize;
    if layer_count == 0 {
        return Err(Error::format(path_for_errors, "zero layers"));
    }
    let mut specs = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let code = r.u8()?;
        let activation = activation_from_code(code)
            .ok_or_else(|| Error::format(path_for_errors, format!("unknown activation {}", code)))?;
        specs.push(LayerSpec::new(in_dim, out_dim, activation));
    }
    let mut model = LayeredModel::new(specs.clone())
        .map_err(|e| Error::format(path_for_errors, format!("invalid layer specs: {}", e)))?;
    for (l, spec) in specs.iter().enumerate() {
        let mut weights = Vec::with_capacity(spec.out_dim * spec.in_dim);
        for _ in 0..spec.out_dim * spec.in_dim {
            weights.push(r.f64()?);
        }
        let mut bias = Vec::with_capacity(spec.out_dim);
        for _ in 0..spec.out_dim {
            bias.push(r.f64()?);
        }
        let weights = Tensor2::new(spec.out_dim, spec.in_dim, weights)
            .map_err(|e| Error::format(path_for_errors, format!("layer {}: {}", l, e)))?;
        let bias = Tensor1::new(bias)
            .map_err(|e| Error::format(path_for_errors, format!("layer {}: {}", l, e)))?;
        model
            .set_layer_params(l, weights, bias)
            .map_err(|e| Error::format(path_for_errors, format!("layer {}: {}", l, e)))?;
    }
    if r.offset != bytes.len() {
        return Err(Error::format(path_for_errors, "trailing bytes after parameters"));
    }
    Ok(model)
}

pub fn save_model(model: &LayeredModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_model(path: &Path) -> Result<LayeredModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_model(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn sample_model() -> LayeredModel {
        let mut rng = seed::derive_rng(99, "model-io/test");
        LayeredModel::init_random(
            vec![
                LayerSpec::new(3, 5, Activation::Relu),
                LayerSpec::new(5, 4, Activation::Tanh),
                LayerSpec::new(4, 2, Activation::SoftmaxOutput),
            ],
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let model = sample_model();
        let decoded = decode_model(&encode_model(&model), "mem").unwrap();
        let a: Vec<u64> = model.flatten_params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = decoded
            .flatten_params()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(a, b);
        assert_eq!(model.specs(), decoded.specs());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lmdp");
        let model = sample_model();
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let model = sample_model();
        let bytes = encode_model(&model);

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            decode_model(&bad_magic, "mem"),
            Err(Error::Format { .. })
        ));

        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(
            decode_model(truncated, "mem"),
            Err(Error::Format { .. })
        ));

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(
            decode_model(&trailing, "mem"),
            Err(Error::Format { .. })
        ));

        let mut bad_version = bytes;
        bad_version[4] = 9;
        assert!(matches!(
            decode_model(&bad_version, "mem"),
            Err(Error::Format { .. })
        ));
    }
}

//! Model file: magic "LCM1", u32 version, u32 N, Z, lambda, u32 layer
//! count, then per layer a u8 kind code, u32 ndims, u32 dims, f32 weights
//! and f32 biases. Little-endian, no padding.

use std::path::Path;

use crate::binio::{dims_product, read_file, write_atomic, Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::numerics::LayerKind;

use super::{ModelConfig, SurfaceRegressionNet, LAYER_KINDS};

pub const MODEL_MAGIC: &[u8; 4] = b"LCM1";
pub const MODEL_VERSION: u32 = 1;

pub fn model_to_bytes(net: &SurfaceRegressionNet<f32>) -> Vec<u8> {
    let mut w = Writer::new();
    w.magic(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.u32(net.config.n as u32);
    w.u32(net.config.z as u32);
    w.u32(net.config.lambda as u32);
    w.u32(net.layers.len() as u32);
    for layer in &net.layers {
        w.u8(layer.kind.code());
        if layer.has_params() {
            let dims = layer.weights.shape();
            w.u32(dims.len() as u32);
            for d in dims {
                w.u32(*d as u32);
            }
            w.f32s(layer.weights.data());
            w.f32s(layer.bias.data());
        } else {
            w.u32(0);
        }
    }
    w.into_bytes()
}

fn shape_err(msg: String) -> FormatError {
    FormatError::ShapeInconsistency(msg)
}

pub fn model_from_bytes(bytes: &[u8]) -> std::result::Result<SurfaceRegressionNet<f32>, FormatError> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MODEL_MAGIC)?;
    r.expect_version(MODEL_VERSION)?;
    let n = r.u32()? as usize;
    let z = r.u32()? as usize;
    let lambda = r.u32()? as usize;
    let count = r.u32()? as usize;
    if count != LAYER_KINDS.len() {
        return Err(shape_err(format!(
            "expected {} layers, file has {count}",
            LAYER_KINDS.len()
        )));
    }

    let mut parsed = Vec::with_capacity(count);
    for (i, want) in LAYER_KINDS.iter().enumerate() {
        let code = r.u8()?;
        let kind = LayerKind::from_code(code)
            .ok_or_else(|| shape_err(format!("layer {i}: unknown kind code {code}")))?;
        if kind != *want {
            return Err(shape_err(format!("layer {i}: expected {want:?}, found {kind:?}")));
        }
        let ndims = r.u32()? as usize;
        if ndims > 4 {
            return Err(shape_err(format!("layer {i}: {ndims} dimensions")));
        }
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(r.u32()? as usize);
        }
        let (weights, biases) = if ndims == 0 {
            (Vec::new(), Vec::new())
        } else {
            let count = dims_product(&dims)?;
            (r.f32s(count)?, r.f32s(dims[0])?)
        };
        parsed.push((kind, dims, weights, biases));
    }
    r.finish()?;

    let conv = |i: usize| -> std::result::Result<&Vec<usize>, FormatError> {
        let dims = &parsed[i].1;
        if dims.len() != 4 {
            return Err(shape_err(format!("conv layer {i} has dims {dims:?}")));
        }
        Ok(dims)
    };
    let (c1, c2, c3) = (conv(0)?, conv(3)?, conv(6)?);
    let fc1 = &parsed[9].1;
    if fc1.len() != 2 {
        return Err(shape_err(format!("fc layer 9 has dims {fc1:?}")));
    }
    let config = ModelConfig {
        n,
        z,
        lambda,
        conv_channels: [c1[0], c2[0], c3[0]],
        kernel: (c1[2], c1[3]),
        fc_hidden: fc1[0],
    };
    let mut net = SurfaceRegressionNet::<f32>::zeroed(config).map_err(|e| shape_err(e.to_string()))?;
    for (i, (layer, (_, dims, weights, biases))) in net.layers.iter_mut().zip(parsed).enumerate() {
        if !layer.has_params() {
            if !dims.is_empty() {
                return Err(shape_err(format!("layer {i} should carry no parameters")));
            }
            continue;
        }
        if layer.weights.shape() != dims.as_slice() {
            return Err(shape_err(format!(
                "layer {i}: dims {dims:?} do not chain, expected {:?}",
                layer.weights.shape()
            )));
        }
        layer.weights.data_mut().copy_from_slice(&weights);
        layer.bias.data_mut().copy_from_slice(&biases);
    }
    Ok(net)
}

pub fn save_model(net: &SurfaceRegressionNet<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &model_to_bytes(net))
}

pub fn load_model(path: &Path) -> Result<SurfaceRegressionNet<f32>> {
    let bytes = read_file(path)?;
    model_from_bytes(&bytes).map_err(|e| Error::format(path, e))
}

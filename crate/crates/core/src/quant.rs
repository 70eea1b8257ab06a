//! Symmetric-range fake quantization around a mid-range zero point.
//!
//! Given a tensor, the zero point is `z = (max + min) / 2` and the scale is
//! `s = max|x - z| / (2^(B-1) - 1)` with a 1e-12 floor, so every in-range
//! value round-trips within `s / 2`. Integers live in
//! `[-(2^(B-1) - 1), 2^(B-1) - 1]`; rounding is half-away-from-zero.
//! Quantization here is simulation only: values are dequantized back to f32
//! before any matmul ("fake quant"), which reproduces the numerics of a
//! low-bit kernel without one.

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Bit widths the toolchain supports for weights and activations.
pub const SUPPORTED_BITS: [u8; 3] = [4, 6, 8];

const SCALE_FLOOR: f32 = 1e-12;

/// Largest representable magnitude at `bits`: `2^(bits-1) - 1`.
pub fn int_range(bits: u8) -> i32 {
    (1i32 << (bits - 1)) - 1
}

pub fn check_bits(bits: u8) -> Result<()> {
    if !SUPPORTED_BITS.contains(&bits) {
        return Err(Error::Config(format!(
            "unsupported bit width {bits} (expected one of {SUPPORTED_BITS:?})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub scale: f32,
    pub zero: f32,
    pub bits: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub values: Vec<i8>,
    pub params: QuantParams,
    pub rows: usize,
    pub cols: usize,
}

/// Per-tensor parameters from the data itself.
pub fn calc_params(x: &Mat, bits: u8) -> Result<QuantParams> {
    check_bits(bits)?;
    if x.data().is_empty() {
        return Err(Error::Numeric("cannot derive parameters from an empty tensor".into()));
    }
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in x.data() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite value {v} in tensor")));
        }
        min = min.min(v);
        max = max.max(v);
    }
    let zero = (max + min) / 2.0;
    let mut radius = 0.0f32;
    for &v in x.data() {
        radius = radius.max((v - zero).abs());
    }
    let scale = (radius / int_range(bits) as f32).max(SCALE_FLOOR);
    Ok(QuantParams { scale, zero, bits })
}

/// Quantize with the given parameters. Out-of-range values clamp to the
/// integer limits; values from the tensor the parameters were derived
/// from never clamp.
pub fn quantize(x: &Mat, params: QuantParams) -> Result<QuantTensor> {
    check_bits(params.bits)?;
    let m = int_range(params.bits) as f32;
    let values = x
        .data()
        .iter()
        .map(|&v| ((v - params.zero) / params.scale).clamp(-m, m).round() as i8)
        .collect();
    Ok(QuantTensor { values, params, rows: x.rows(), cols: x.cols() })
}

pub fn dequantize(q: &QuantTensor) -> Result<Mat> {
    let data = q
        .values
        .iter()
        .map(|&v| v as f32 * q.params.scale + q.params.zero)
        .collect();
    Mat::from_vec(data, q.rows, q.cols)
}

/// Dynamic per-tensor fake quantization: derive parameters from the live
/// tensor, quantize, dequantize.
pub fn fake_quant(x: &Mat, bits: u8) -> Result<Mat> {
    let params = calc_params(x, bits)?;
    dequantize(&quantize(x, params)?)
}

/// Fake-quantize the Q/K/V tensors entering one attention call. `None`
/// bits is the FP path and returns the inputs untouched, bit for bit.
pub fn quantize_qkv(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    bits: Option<u8>,
) -> Result<(Mat, Mat, Mat)> {
    match bits {
        None => Ok((q.clone(), k.clone(), v.clone())),
        Some(b) => Ok((fake_quant(q, b)?, fake_quant(k, b)?, fake_quant(v, b)?)),
    }
}

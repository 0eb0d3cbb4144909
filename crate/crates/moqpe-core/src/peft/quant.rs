//! Symmetric per-tensor int8 quantization of frozen base weights.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Int8 matrix with one scale for the whole tensor.
///
/// `dequantize` reproduces the original matrix within `scale / 2` per entry;
/// `scale = max|w| / 127`, or 1.0 for the degenerate all-zero matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    q: Vec<i8>,
    scale: f64,
    shape: [usize; 2],
}

impl QuantizedMatrix {
    pub fn quantize(w: &Tensor) -> Result<Self> {
        let (d_in, d_out) = w.dims2()?;
        let max_abs = w.max_abs();
        let scale = if max_abs == 0.0 { 1.0 } else { max_abs / 127.0 };
        let q = w
            .data()
            .iter()
            .map(|&v| (v / scale).round().clamp(-127.0, 127.0) as i8)
            .collect();
        Ok(Self { q, scale, shape: [d_in, d_out] })
    }

    pub fn dequantize(&self) -> Tensor {
        let data = self.q.iter().map(|&qi| qi as f64 * self.scale).collect();
        Tensor::from_parts(vec![self.shape[0], self.shape[1]], data)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.shape[0], self.shape[1])
    }

    pub fn q(&self) -> &[i8] {
        &self.q
    }

    pub(crate) fn from_raw(q: Vec<i8>, scale: f64, shape: [usize; 2]) -> Result<Self> {
        if q.len() != shape[0] * shape[1] {
            return Err(Error::Shape(format!(
                "quantized payload length {} does not match shape {shape:?}",
                q.len()
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Numeric(format!("quantization scale {scale} must be positive")));
        }
        Ok(Self { q, scale, shape })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_computed_example() {
        let w = Tensor::new(vec![1, 3], vec![-1.0, 0.5, 1.0]).unwrap();
        let qm = QuantizedMatrix::quantize(&w).unwrap();
        assert!((qm.scale() - 1.0 / 127.0).abs() < 1e-15);
        assert_eq!(qm.q(), &[-127, 64, 127]);
        let d = qm.dequantize();
        assert!((d.data()[0] + 1.0).abs() < 1e-12);
        assert!((d.data()[1] - 0.503_937_007_874_015_7).abs() < 1e-12);
        assert!((d.data()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_error_bounded_by_half_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let w = Tensor::randn(&[5, 7], 2.5, &mut rng);
            let qm = QuantizedMatrix::quantize(&w).unwrap();
            let d = qm.dequantize();
            let bound = qm.scale() / 2.0 + 1e-12;
            for (a, b) in w.data().iter().zip(d.data()) {
                assert!((a - b).abs() <= bound, "|{a} - {b}| > {bound}");
            }
        }
    }

    #[test]
    fn lattice_points_round_trip_exactly() {
        // values already on the int8 grid survive bit-exactly
        let scale = 0.25;
        let vals: Vec<f64> = [-127i32, -3, 0, 64, 127].iter().map(|&q| q as f64 * scale).collect();
        let w = Tensor::new(vec![1, 5], vals.clone()).unwrap();
        let qm = QuantizedMatrix::quantize(&w).unwrap();
        assert_eq!(qm.dequantize().data(), &vals[..]);
    }

    #[test]
    fn all_zero_matrix_uses_unit_scale() {
        let qm = QuantizedMatrix::quantize(&Tensor::zeros(&[3, 3])).unwrap();
        assert_eq!(qm.scale(), 1.0);
        assert!(qm.q().iter().all(|&v| v == 0));
        assert!(qm.dequantize().data().iter().all(|&v| v == 0.0));
    }
}

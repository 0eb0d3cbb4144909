//! Adapter checkpoint container.
//!
//! Layout: magic `MQA1`, u32 r_min/r_max/K/top_k, u8 alpha-rule tag
//! (0 = inverse of the sampled rank), then the projection-down matrix, the K
//! expert matrices and the router weights as embedded tensor records, and
//! finally the quantized base (u64 d_in, u64 d_out, f64 scale, i8 payload).

use super::quant::QuantizedMatrix;
use super::{DyaMoqpeConfig, DyaMoqpeLayer};
use crate::error::{Error, Result};
use crate::tensor::io::{read_tensor, read_u32, read_u64, write_tensor};
use std::io::{Read, Write};
use std::path::Path;

pub const ADAPTER_MAGIC: &[u8; 4] = b"MQA1";
pub const ALPHA_RULE_INVERSE_RANK: u8 = 0;

pub fn write_adapter<W: Write>(w: &mut W, layer: &DyaMoqpeLayer) -> Result<()> {
    let cfg = layer.config();
    w.write_all(ADAPTER_MAGIC)?;
    w.write_all(&(cfg.r_min as u32).to_le_bytes())?;
    w.write_all(&(cfg.r_max as u32).to_le_bytes())?;
    w.write_all(&(cfg.num_experts as u32).to_le_bytes())?;
    w.write_all(&(cfg.top_k as u32).to_le_bytes())?;
    w.write_all(&[ALPHA_RULE_INVERSE_RANK])?;
    write_tensor(w, &layer.a)?;
    for e in &layer.experts {
        write_tensor(w, e)?;
    }
    write_tensor(w, &layer.router_w)?;
    let base = layer.base();
    let (d_in, d_out) = base.shape();
    w.write_all(&(d_in as u64).to_le_bytes())?;
    w.write_all(&(d_out as u64).to_le_bytes())?;
    w.write_all(&base.scale().to_le_bytes())?;
    let bytes: Vec<u8> = base.q().iter().map(|&v| v as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_adapter<R: Read>(r: &mut R, lora_dropout: f64) -> Result<DyaMoqpeLayer> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != ADAPTER_MAGIC {
        return Err(Error::Parse(format!(
            "bad adapter magic {magic:?}, expected {ADAPTER_MAGIC:?}"
        )));
    }
    let r_min = read_u32(r)? as usize;
    let r_max = read_u32(r)? as usize;
    let num_experts = read_u32(r)? as usize;
    let top_k = read_u32(r)? as usize;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    if tag[0] != ALPHA_RULE_INVERSE_RANK {
        return Err(Error::Parse(format!("unknown alpha rule tag {}", tag[0])));
    }
    let a = read_tensor(r)?;
    let mut experts = Vec::with_capacity(num_experts);
    for _ in 0..num_experts {
        experts.push(read_tensor(r)?);
    }
    let router_w = read_tensor(r)?;
    let d_in = read_u64(r)? as usize;
    let d_out = read_u64(r)? as usize;
    let mut scale_buf = [0u8; 8];
    r.read_exact(&mut scale_buf)?;
    let scale = f64::from_le_bytes(scale_buf);
    let mut q_bytes = vec![0u8; d_in * d_out];
    r.read_exact(&mut q_bytes)?;
    let q: Vec<i8> = q_bytes.into_iter().map(|b| b as i8).collect();
    let base = QuantizedMatrix::from_raw(q, scale, [d_in, d_out])?;

    let cfg = DyaMoqpeConfig { d_in, d_out, r_min, r_max, num_experts, top_k, lora_dropout };
    DyaMoqpeLayer::from_parts(cfg, base, a, experts, router_w)
}

pub fn save_adapter<P: AsRef<Path>>(path: P, layer: &DyaMoqpeLayer) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_adapter(&mut f, layer)
}

pub fn load_adapter<P: AsRef<Path>>(path: P, lora_dropout: f64) -> Result<DyaMoqpeLayer> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_adapter(&mut f, lora_dropout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer_with_state(seed: u64) -> DyaMoqpeLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = DyaMoqpeConfig {
            d_in: 6,
            d_out: 5,
            r_min: 2,
            r_max: 4,
            num_experts: 3,
            top_k: 2,
            lora_dropout: 0.05,
        };
        let base = Tensor::randn(&[6, 5], 0.5, &mut rng);
        let mut layer = DyaMoqpeLayer::new(cfg, &base, &mut rng).unwrap();
        for e in &mut layer.experts {
            *e = Tensor::randn(&[4, 5], 0.3, &mut rng).with_grad();
        }
        layer
    }

    #[test]
    fn round_trip_preserves_everything_bitwise() {
        let layer = layer_with_state(13);
        let mut buf = Vec::new();
        write_adapter(&mut buf, &layer).unwrap();
        let back = read_adapter(&mut buf.as_slice(), 0.05).unwrap();

        assert_eq!(back.config(), layer.config());
        assert_eq!(back.a.data(), layer.a.data());
        for (e1, e2) in layer.experts.iter().zip(&back.experts) {
            assert_eq!(e1.data(), e2.data());
        }
        assert_eq!(back.router_w.data(), layer.router_w.data());
        assert_eq!(back.base().q(), layer.base().q());
        assert_eq!(back.base().scale(), layer.base().scale());
        assert_eq!(back.base_dense().data(), layer.base_dense().data());
    }

    #[test]
    fn merged_export_is_stable_across_save_load() {
        let layer = layer_with_state(29);
        let probs = [0.5, 0.25, 0.25];
        let merged_before = layer.merge_to_dense(4, &probs).unwrap();

        let mut buf = Vec::new();
        write_adapter(&mut buf, &layer).unwrap();
        let back = read_adapter(&mut buf.as_slice(), 0.05).unwrap();
        let merged_after = back.merge_to_dense(4, &probs).unwrap();
        assert_eq!(merged_before.data(), merged_after.data());
    }

    #[test]
    fn header_layout_is_as_documented() {
        let layer = layer_with_state(3);
        let mut buf = Vec::new();
        write_adapter(&mut buf, &layer).unwrap();
        assert_eq!(&buf[0..4], b"MQA1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 2); // r_min
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 4); // r_max
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 3); // K
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 2); // top_k
        assert_eq!(buf[20], ALPHA_RULE_INVERSE_RANK);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let layer = layer_with_state(5);
        let mut buf = Vec::new();
        write_adapter(&mut buf, &layer).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(read_adapter(&mut buf.as_slice(), 0.0).is_err());
    }
}

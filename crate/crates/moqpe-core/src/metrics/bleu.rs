//! Modified n-gram precision BLEU with brevity penalty.

use super::ngram_counts;
use crate::error::{Error, Result};

/// Geometric mean of clipped modified precisions for orders `1..=n`, times
/// the brevity penalty `min(1, exp(1 - |ref| / |cand|))`. Zero if any order
/// has zero precision (unless `plus_one_smoothing`), zero for an empty
/// candidate.
pub fn bleu_n_tokens(
    candidate: &[String],
    reference: &[String],
    n: usize,
    plus_one_smoothing: bool,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::Contract("BLEU order must be >= 1".into()));
    }
    if candidate.is_empty() {
        log::warn!("BLEU scored an empty candidate; returning 0");
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let cand_counts = ngram_counts(candidate, order);
        let total: u64 = cand_counts.values().sum();
        if total == 0 {
            // candidate shorter than the order
            return Ok(0.0);
        }
        let ref_counts = ngram_counts(reference, order);
        let mut clipped = 0u64;
        for (gram, &c) in &cand_counts {
            clipped += c.min(*ref_counts.get(gram).unwrap_or(&0));
        }
        let (num, den) = if plus_one_smoothing {
            (clipped + 1, total + 1)
        } else {
            (clipped, total)
        };
        if num == 0 {
            return Ok(0.0);
        }
        log_sum += (num as f64 / den as f64).ln();
    }
    let precision_term = (log_sum / n as f64).exp();
    let bp = brevity_penalty(candidate.len(), reference.len());
    Ok(bp * precision_term)
}

pub fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 {
        return 0.0;
    }
    (1.0 - ref_len as f64 / cand_len as f64).exp().min(1.0)
}

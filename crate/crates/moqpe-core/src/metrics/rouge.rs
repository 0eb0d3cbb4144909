//! Recall-oriented n-gram and longest-common-subsequence overlap.

use super::ngram_counts;
use crate::error::{Error, Result};

/// F1 of clipped n-gram overlap.
pub fn rouge_n_tokens(candidate: &[String], reference: &[String], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Contract("ROUGE order must be >= 1".into()));
    }
    let cand = ngram_counts(candidate, n);
    let refr = ngram_counts(reference, n);
    let cand_total: u64 = cand.values().sum();
    let ref_total: u64 = refr.values().sum();
    if cand_total == 0 || ref_total == 0 {
        return Ok(0.0);
    }
    let mut overlap = 0u64;
    for (gram, &c) in &cand {
        overlap += c.min(*refr.get(gram).unwrap_or(&0));
    }
    let p = overlap as f64 / cand_total as f64;
    let r = overlap as f64 / ref_total as f64;
    Ok(f1(p, r))
}

/// F1 with precision `LCS/|cand|` and recall `LCS/|ref|`.
pub fn rouge_l_tokens(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(candidate, reference) as f64;
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    f1(p, r)
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub(crate) fn lcs_len(a: &[String], b: &[String]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut prev = vec![0usize; m + 1];
    let mut cur = vec![0usize; m + 1];
    for i in 0..n {
        for j in 0..m {
            cur[j + 1] = if a[i] == b[j] { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

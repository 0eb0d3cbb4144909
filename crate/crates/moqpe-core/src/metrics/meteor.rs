//! Unigram-alignment metric with a fragmentation penalty.
//!
//! Stages: exact surface match, then an optional suffix-stripping stem stage
//! (off by default; there is no external synonym database here). Constants
//! follow the standard formulation: F_mean = 10PR / (R + 9P),
//! penalty = 0.5 * (chunks / matches)^3.

/// Candidate/reference alignment as (candidate index, reference index) pairs.
fn align(candidate: &[String], reference: &[String], stem: bool) -> Vec<(usize, usize)> {
    let mut used_ref = vec![false; reference.len()];
    let mut used_cand = vec![false; candidate.len()];
    let mut pairs = Vec::new();

    let run_stage = |key: &dyn Fn(&str) -> String,
                         used_cand: &mut Vec<bool>,
                         used_ref: &mut Vec<bool>,
                         pairs: &mut Vec<(usize, usize)>| {
        let mut prev_ref: isize = -2;
        for (i, w) in candidate.iter().enumerate() {
            if used_cand[i] {
                continue;
            }
            let kw = key(w);
            let matching: Vec<usize> = reference
                .iter()
                .enumerate()
                .filter(|(j, rw)| !used_ref[*j] && key(rw) == kw)
                .map(|(j, _)| j)
                .collect();
            if matching.is_empty() {
                continue;
            }
            // Prefer contiguity with the previous match to minimize chunks.
            let j = *matching
                .iter()
                .find(|&&j| j as isize == prev_ref + 1)
                .unwrap_or(&matching[0]);
            used_ref[j] = true;
            used_cand[i] = true;
            pairs.push((i, j));
            prev_ref = j as isize;
        }
    };

    run_stage(&|w: &str| w.to_string(), &mut used_cand, &mut used_ref, &mut pairs);
    if stem {
        run_stage(&|w: &str| strip_suffix(w), &mut used_cand, &mut used_ref, &mut pairs);
    }
    pairs.sort_unstable();
    pairs
}

/// Crude English suffix stripper for the optional stem stage.
fn strip_suffix(w: &str) -> String {
    for (suf, min_len) in [("ing", 6), ("ed", 5), ("es", 5), ("ly", 5), ("s", 4)] {
        if w.len() >= min_len {
            if let Some(stripped) = w.strip_suffix(suf) {
                return stripped.to_string();
            }
        }
    }
    w.to_string()
}

pub fn meteor_tokens(candidate: &[String], reference: &[String], stem: bool) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let pairs = align(candidate, reference, stem);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let mut chunks = 1usize;
    for w in pairs.windows(2) {
        let ((i0, j0), (i1, j1)) = (w[0], w[1]);
        if !(i1 == i0 + 1 && j1 == j0 + 1) {
            chunks += 1;
        }
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identity_four_tokens() {
        // matches = 4 in one chunk: 1 * (1 - 0.5 / 64) = 0.9921875
        let t = toks("a b c d");
        assert_eq!(meteor_tokens(&t, &t, false), 0.9921875);
    }

    #[test]
    fn disjoint_vocabularies_score_zero() {
        assert_eq!(meteor_tokens(&toks("x y"), &toks("a b"), false), 0.0);
    }

    #[test]
    fn fragmented_alignment_is_penalized() {
        let contiguous = meteor_tokens(&toks("a b c d"), &toks("a b c d e"), false);
        let scattered = meteor_tokens(&toks("a c b d"), &toks("a b c d e"), false);
        assert!(contiguous > scattered);
    }

    #[test]
    fn duplicate_words_align_one_to_one() {
        // Candidate repeats "a" three times; reference has it once.
        let score = meteor_tokens(&toks("a a a"), &toks("a"), false);
        // m = 1, chunks = 1, P = 1/3, R = 1
        let f = 10.0 * (1.0 / 3.0) / (1.0 + 3.0);
        assert!((score - f * 0.5).abs() < 1e-12);
    }

    #[test]
    fn stem_stage_recovers_inflections() {
        let no_stem = meteor_tokens(&toks("magnified"), &toks("magnify"), false);
        assert_eq!(no_stem, 0.0);
        let plural = meteor_tokens(&toks("connections"), &toks("connection"), true);
        assert!(plural > 0.0);
    }
}

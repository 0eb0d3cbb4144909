//! Caption and VQA scoring: BLEU-N, ROUGE-1/2/L, and METEOR over shared
//! tokenization presets, with per-pair and corpus-level reporting.

pub mod bleu;
pub mod meteor;
pub mod rouge;
pub mod tokenize;

pub use tokenize::Tokenization;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    /// +1 smoothing on BLEU n-gram counts.
    pub bleu_smoothing: bool,
    /// Tokenization for BLEU and METEOR.
    pub surface_tok: Tokenization,
    /// Tokenization for the ROUGE family.
    pub rouge_tok: Tokenization,
    /// Enable METEOR's suffix-stripping stem stage.
    pub meteor_stem: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            bleu_smoothing: false,
            surface_tok: Tokenization::Surface,
            rouge_tok: Tokenization::AlnumSplit,
            meteor_stem: false,
        }
    }
}

impl ScoreOptions {
    /// One tokenizer for every metric (the normalized preset).
    pub fn uniform(tok: Tokenization) -> Self {
        Self { surface_tok: tok, rouge_tok: tok, ..Self::default() }
    }
}

pub fn bleu_n(candidate: &str, reference: &str, n: usize) -> Result<f64> {
    bleu_n_with(candidate, reference, n, &ScoreOptions::default())
}

pub fn bleu_n_with(candidate: &str, reference: &str, n: usize, opts: &ScoreOptions) -> Result<f64> {
    let c = opts.surface_tok.tokenize(candidate);
    let r = opts.surface_tok.tokenize(reference);
    bleu::bleu_n_tokens(&c, &r, n, opts.bleu_smoothing)
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<f64> {
    rouge_n_with(candidate, reference, n, &ScoreOptions::default())
}

pub fn rouge_n_with(candidate: &str, reference: &str, n: usize, opts: &ScoreOptions) -> Result<f64> {
    let c = opts.rouge_tok.tokenize(candidate);
    let r = opts.rouge_tok.tokenize(reference);
    rouge::rouge_n_tokens(&c, &r, n)
}

pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    rouge_l_with(candidate, reference, &ScoreOptions::default())
}

pub fn rouge_l_with(candidate: &str, reference: &str, opts: &ScoreOptions) -> f64 {
    let c = opts.rouge_tok.tokenize(candidate);
    let r = opts.rouge_tok.tokenize(reference);
    rouge::rouge_l_tokens(&c, &r)
}

pub fn meteor(candidate: &str, reference: &str) -> f64 {
    meteor_with(candidate, reference, &ScoreOptions::default())
}

pub fn meteor_with(candidate: &str, reference: &str, opts: &ScoreOptions) -> f64 {
    let c = opts.surface_tok.tokenize(candidate);
    let r = opts.surface_tok.tokenize(reference);
    meteor::meteor_tokens(&c, &r, opts.meteor_stem)
}

/// All six caption metrics for one candidate/reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptionScore {
    pub bleu2: f64,
    pub bleu4: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub meteor: f64,
}

impl CaptionScore {
    pub fn fields(&self) -> [(&'static str, f64); 6] {
        [
            ("bleu2", self.bleu2),
            ("bleu4", self.bleu4),
            ("rouge1", self.rouge1),
            ("rouge2", self.rouge2),
            ("rouge_l", self.rouge_l),
            ("meteor", self.meteor),
        ]
    }
}

pub fn score_pair(candidate: &str, reference: &str) -> Result<CaptionScore> {
    score_pair_with(candidate, reference, &ScoreOptions::default())
}

pub fn score_pair_with(candidate: &str, reference: &str, opts: &ScoreOptions) -> Result<CaptionScore> {
    Ok(CaptionScore {
        bleu2: bleu_n_with(candidate, reference, 2, opts)?,
        bleu4: bleu_n_with(candidate, reference, 4, opts)?,
        rouge1: rouge_n_with(candidate, reference, 1, opts)?,
        rouge2: rouge_n_with(candidate, reference, 2, opts)?,
        rouge_l: rouge_l_with(candidate, reference, opts),
        meteor: meteor_with(candidate, reference, opts),
    })
}

/// Mean and sample standard deviation (0 for a single pair) per metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusReport {
    pub pairs: Vec<CaptionScore>,
    pub mean: CaptionScore,
    pub std: CaptionScore,
}

pub fn score_corpus(pairs: &[(String, String)]) -> Result<CorpusReport> {
    score_corpus_with(pairs, &ScoreOptions::default())
}

pub fn score_corpus_with(pairs: &[(String, String)], opts: &ScoreOptions) -> Result<CorpusReport> {
    if pairs.is_empty() {
        return Err(Error::Contract("corpus scoring needs at least one pair".into()));
    }
    let scores: Vec<CaptionScore> = pairs
        .iter()
        .map(|(c, r)| score_pair_with(c, r, opts))
        .collect::<Result<_>>()?;
    let n = scores.len() as f64;
    let mean_of = |f: fn(&CaptionScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
    let std_of = |f: fn(&CaptionScore) -> f64, mean: f64| {
        if scores.len() < 2 {
            0.0
        } else {
            (scores.iter().map(|s| (f(s) - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        }
    };
    macro_rules! stats {
        ($field:ident) => {{
            let m = mean_of(|s| s.$field);
            (m, std_of(|s| s.$field, m))
        }};
    }
    let (b2m, b2s) = stats!(bleu2);
    let (b4m, b4s) = stats!(bleu4);
    let (r1m, r1s) = stats!(rouge1);
    let (r2m, r2s) = stats!(rouge2);
    let (rlm, rls) = stats!(rouge_l);
    let (mtm, mts) = stats!(meteor);
    Ok(CorpusReport {
        pairs: scores,
        mean: CaptionScore { bleu2: b2m, bleu4: b4m, rouge1: r1m, rouge2: r2m, rouge_l: rlm, meteor: mtm },
        std: CaptionScore { bleu2: b2s, bleu4: b4s, rouge1: r1s, rouge2: r2s, rouge_l: rls, meteor: mts },
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Contract("spearman needs two equal-length samples of size >= 2".into()));
    }
    let rx = mid_ranks(xs);
    let ry = mid_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        num += (a - mx) * (b - my);
        dx += (a - mx) * (a - mx);
        dy += (b - my) * (b - my);
    }
    if dx == 0.0 || dy == 0.0 {
        return Err(Error::Contract("spearman undefined for constant samples".into()));
    }
    Ok(num / (dx * dy).sqrt())
}

fn mid_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Table row: ground truth, generated answer, printed BLEU-2/ROUGE-L/METEOR.
    const NEURON_GT: &str = "This electron microscopy image displays a neuron with its dendritic tree and synaptic connections, magnified 10,000 times.";
    const NEURON_ANSWER: &str = "This electron microscopy image shows a neuron with its dendritic tree and synaptic connections magnified 10000 times";

    #[test]
    fn published_neuron_caption_scores_reproduce() {
        let b2 = bleu_n(NEURON_ANSWER, NEURON_GT, 2).unwrap();
        assert!((b2 - 0.717).abs() < 0.05, "BLEU-2 {b2}");
        let rl = rouge_l(NEURON_ANSWER, NEURON_GT);
        assert!((rl - 0.857).abs() < 0.05, "ROUGE-L {rl}");
        let mt = meteor(NEURON_ANSWER, NEURON_GT);
        assert!((mt - 0.879).abs() < 0.07, "METEOR {mt}");
    }

    #[test]
    fn identity_pair_maxes_ngram_metrics() {
        let s = score_pair(NEURON_GT, NEURON_GT).unwrap();
        assert_eq!(s.bleu2, 1.0);
        assert_eq!(s.bleu4, 1.0);
        assert_eq!(s.rouge1, 1.0);
        assert_eq!(s.rouge2, 1.0);
        assert_eq!(s.rouge_l, 1.0);
        let m = Tokenization::Surface.tokenize(NEURON_GT).len() as f64;
        let expected_meteor = 1.0 - 0.5 / (m * m * m);
        assert!((s.meteor - expected_meteor).abs() < 1e-12);
    }

    #[test]
    fn corpus_stats_degenerate_cases() {
        let one = vec![("a b".to_string(), "a b".to_string())];
        let rep = score_corpus(&one).unwrap();
        assert_eq!(rep.std.bleu2, 0.0);
        assert_eq!(rep.mean.bleu2, rep.pairs[0].bleu2);

        let same = vec![
            ("the cat sat".to_string(), "the cat sat down".to_string());
            4
        ];
        let rep = score_corpus(&same).unwrap();
        assert_eq!(rep.mean.bleu2, rep.pairs[0].bleu2);
        assert_eq!(rep.std.rouge_l, 0.0);

        assert!(score_corpus(&[]).is_err());
    }

    #[test]
    fn spearman_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [10.0, 20.0, 30.0, 40.0];
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let y_rev = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&x, &y_rev).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&x, &[1.0, 1.0, 1.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn metrics_stay_in_unit_interval(
            c in proptest::collection::vec("[a-d]{1,3}", 0..8),
            r in proptest::collection::vec("[a-d]{1,3}", 0..8),
        ) {
            let cand = c.join(" ");
            let refr = r.join(" ");
            for n in 1..=4usize {
                let b = bleu_n(&cand, &refr, n).unwrap();
                prop_assert!((0.0..=1.0).contains(&b));
                let rn = rouge_n(&cand, &refr, n).unwrap();
                prop_assert!((0.0..=1.0).contains(&rn));
            }
            let rl = rouge_l(&cand, &refr);
            prop_assert!((0.0..=1.0).contains(&rl));
            let mt = meteor(&cand, &refr);
            prop_assert!((0.0..=1.0).contains(&mt));
        }

        #[test]
        fn shortening_a_perfect_candidate_never_raises_bleu(
            tokens in proptest::collection::vec("[a-c]{1,2}", 2..10),
            cut in 1usize..5,
        ) {
            let reference = tokens.join(" ");
            let keep = tokens.len().saturating_sub(cut).max(1);
            let shortened = tokens[..keep].join(" ");
            let full = bleu_n(&reference, &reference, 2).unwrap();
            let shorter = bleu_n(&shortened, &reference, 2).unwrap();
            prop_assert!(shorter <= full + 1e-12);
        }
    }
}

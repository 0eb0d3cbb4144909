//! Metric tokenization presets.
//!
//! Caption metrics are tokenizer-sensitive. `Surface` (whitespace tokens,
//! trailing sentence punctuation stripped) reproduces published BLEU/METEOR
//! caption scores in this domain; `AlnumSplit` (split on non-alphanumeric
//! runs) reproduces published ROUGE scores. `Normalized` additionally merges
//! digit-group commas ("10,000" -> "10000") and drops all other punctuation.
//! All presets lowercase and are pure functions of the input string.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tokenization {
    /// Whitespace split; trailing `.!?;:` stripped; commas kept.
    Surface,
    /// Split on any run of non-alphanumeric characters.
    AlnumSplit,
    /// Whitespace split; digit-comma merge; all non-alphanumerics removed.
    Normalized,
}

impl Tokenization {
    pub fn tokenize(&self, s: &str) -> Vec<String> {
        match self {
            Tokenization::Surface => s
                .split_whitespace()
                .map(|w| w.trim_end_matches(['.', '!', '?', ';', ':']).to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
            Tokenization::AlnumSplit => s
                .to_lowercase()
                .split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty())
                .map(str::to_string)
                .collect(),
            Tokenization::Normalized => s
                .split_whitespace()
                .map(|w| {
                    let merged = merge_digit_commas(w);
                    merged
                        .chars()
                        .filter(|c| c.is_alphanumeric())
                        .collect::<String>()
                        .to_lowercase()
                })
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }
}

/// Removes commas sitting between two digits: "10,000" -> "10000".
fn merge_digit_commas(w: &str) -> String {
    let chars: Vec<char> = w.chars().collect();
    let mut out = String::with_capacity(w.len());
    for (i, &c) in chars.iter().enumerate() {
        if c == ','
            && i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_ascii_digit()
            && chars[i + 1].is_ascii_digit()
        {
            continue;
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_strips_trailing_sentence_punctuation_only() {
        let toks = Tokenization::Surface.tokenize("Magnified 10,000 times.");
        assert_eq!(toks, vec!["magnified", "10,000", "times"]);
        let toks = Tokenization::Surface.tokenize("connections, magnified");
        assert_eq!(toks, vec!["connections,", "magnified"]);
    }

    #[test]
    fn alnum_split_breaks_numbers_at_commas() {
        let toks = Tokenization::AlnumSplit.tokenize("Magnified 10,000 times (MEMS).");
        assert_eq!(toks, vec!["magnified", "10", "000", "times", "mems"]);
    }

    #[test]
    fn normalized_merges_digit_commas() {
        let toks = Tokenization::Normalized.tokenize("Magnified 10,000 times.");
        assert_eq!(toks, vec!["magnified", "10000", "times"]);
        let toks = Tokenization::Normalized.tokenize("sponge-like (MEMS)");
        assert_eq!(toks, vec!["spongelike", "mems"]);
    }

    #[test]
    fn tokenization_is_deterministic() {
        let s = "This SEM image shows a test, magnified 1,234 times.";
        for t in [Tokenization::Surface, Tokenization::AlnumSplit, Tokenization::Normalized] {
            assert_eq!(t.tokenize(s), t.tokenize(s));
        }
    }
}

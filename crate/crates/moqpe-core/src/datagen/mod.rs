//! Instruction-dataset tooling: the JSONL record schema with validation, the
//! embedded question templates, a chat-completions teacher client with an
//! offline canned mode, a procedural desk-scale corpus, and the 70/10/20
//! split.

pub mod synth;
pub mod teacher;
pub mod templates;

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

pub const TASK_TAGS: [&str; 7] = [
    "classification_zero",
    "classification_few",
    "captioning",
    "vqa_open",
    "vqa_intra",
    "vqa_inter",
    "vqa_spatial",
];
pub const ANSWER_STYLES: [&str; 2] = ["concise", "detailed"];
pub const PROVENANCES: [&str; 3] = ["teacher", "synthetic", "human"];

/// One image-question-answer instruction-tuning example.
///
/// `class_label` is an optional extension carrying the generating class for
/// synthetic data; the classifier and retrieval tooling consume it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    pub image_path: String,
    pub task: String,
    pub question: String,
    pub answer: String,
    pub answer_style: String,
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<String>,
}

/// Checks every record invariant; returns the list of violations instead of
/// failing on the first. `image_root`, when given, is the directory
/// `image_path` must resolve under (absolute paths resolve as themselves).
pub fn validate(rec: &InstructionRecord, image_root: Option<&Path>) -> Vec<String> {
    let mut violations = Vec::new();
    if rec.id.is_empty() {
        violations.push("id empty".to_string());
    }
    if rec.question.trim().is_empty() {
        violations.push("question empty".to_string());
    }
    if rec.answer.trim().is_empty() {
        violations.push("answer empty".to_string());
    }
    if !TASK_TAGS.contains(&rec.task.as_str()) {
        violations.push(format!("unknown task tag `{}`", rec.task));
    }
    if !ANSWER_STYLES.contains(&rec.answer_style.as_str()) {
        violations.push(format!("unknown answer_style `{}`", rec.answer_style));
    }
    if !PROVENANCES.contains(&rec.provenance.as_str()) {
        violations.push(format!("unknown provenance `{}`", rec.provenance));
    }
    if rec.image_path.is_empty() {
        violations.push("image_path empty".to_string());
    } else if let Some(root) = image_root {
        let p = Path::new(&rec.image_path);
        let resolved = if p.is_absolute() { p.to_path_buf() } else { root.join(p) };
        if !resolved.is_file() {
            violations.push(format!("image not resolvable: {}", resolved.display()));
        }
    }
    violations
}

pub fn read_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<InstructionRecord>> {
    let f = std::fs::File::open(&path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.as_ref().display())))?;
    let mut records = Vec::new();
    for (lineno, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstructionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_jsonl<P: AsRef<Path>>(path: P, records: &[InstructionRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut f, rec).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(f)?;
    }
    Ok(())
}

/// Seeded shuffle into disjoint, exhaustive 70/10/20 train/val/test portions
/// (sizes rounded, within one record of exact).
pub fn split<T: Clone>(records: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if records.len() < 10 {
        return Err(Error::Contract(format!(
            "split needs at least 10 records, got {}",
            records.len()
        )));
    }
    let n = records.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = (0.7 * n as f64).round() as usize;
    let n_val = (0.1 * n as f64).round() as usize;
    let take = |range: &[usize]| range.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((
        take(&idx[..n_train]),
        take(&idx[n_train..n_train + n_val]),
        take(&idx[n_train + n_val..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> InstructionRecord {
        InstructionRecord {
            id: "r1".into(),
            image_path: "img.pgm".into(),
            task: "captioning".into(),
            question: "Describe the electron micrograph.".into(),
            answer: "A test answer.".into(),
            answer_style: "concise".into(),
            provenance: "synthetic".into(),
            class_label: Some("fibers".into()),
        }
    }

    #[test]
    fn valid_record_passes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("img.pgm"), b"P5\n1 1\n255\n\0").unwrap();
        assert!(validate(&sample_record(), Some(dir.path())).is_empty());
    }

    #[test]
    fn violations_are_collected_not_thrown() {
        let mut rec = sample_record();
        rec.answer = "   ".into();
        rec.task = "poetry".into();
        let v = validate(&rec, None);
        assert!(v.iter().any(|m| m == "answer empty"), "{v:?}");
        assert!(v.iter().any(|m| m.contains("`poetry`")), "{v:?}");
    }

    #[test]
    fn missing_image_is_a_violation() {
        let dir = tempfile::tempdir().unwrap();
        let v = validate(&sample_record(), Some(dir.path()));
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("image not resolvable"));
    }

    #[test]
    fn jsonl_round_trip_revalidates_clean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let records = vec![sample_record(), {
            let mut r = sample_record();
            r.id = "r2".into();
            r.class_label = None;
            r
        }];
        write_jsonl(&path, &records).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back, records);
        for rec in &back {
            assert!(validate(rec, None).is_empty());
        }
    }

    #[test]
    fn split_100_is_exactly_70_10_20() {
        let records: Vec<u32> = (0..100).collect();
        let (train, val, test) = split(&records, 0).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (70, 10, 20));
    }

    #[test]
    fn split_partitions_disjoint_and_exhaustive() {
        use std::collections::BTreeSet;
        for n in [10usize, 11, 37, 100, 101, 999] {
            let records: Vec<usize> = (0..n).collect();
            let (train, val, test) = split(&records, 7).unwrap();
            assert_eq!(train.len() + val.len() + test.len(), n);
            let all: BTreeSet<usize> =
                train.iter().chain(&val).chain(&test).copied().collect();
            assert_eq!(all.len(), n, "n = {n}: overlap detected");
            // sizes within one of the exact fractions
            assert!((train.len() as f64 - 0.7 * n as f64).abs() <= 1.0);
            assert!((val.len() as f64 - 0.1 * n as f64).abs() <= 1.0);
            assert!((test.len() as f64 - 0.2 * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn split_is_seed_reproducible_and_seed_sensitive() {
        let records: Vec<u32> = (0..50).collect();
        let a = split(&records, 5).unwrap();
        let b = split(&records, 5).unwrap();
        assert_eq!(a, b);
        let c = split(&records, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_tiny_corpora() {
        let records: Vec<u32> = (0..9).collect();
        assert!(split(&records, 0).is_err());
    }
}

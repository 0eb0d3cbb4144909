//! Expert routing, soft merging, rank sampling, and truncation — the
//! value-level forms used for inference, export, and tests. Training goes
//! through the tape-building path in [`super::DyaMoqpeLayer`], which computes
//! the same functions.

use crate::error::{Error, Result};
use crate::tensor::graph::softmax_row;
use crate::tensor::Tensor;
use rand::Rng;

/// Indices of the `k` largest entries, descending by value, ties broken by
/// the lower index.
pub fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Per-example routing probabilities: softmax over `K` logits with entries
/// outside the top-k zeroed and the survivors renormalized to sum to 1.
pub fn route(x: &Tensor, router_w: &Tensor, top_k: usize) -> Result<Tensor> {
    let logits = x.matmul(router_w)?;
    let (b, k_experts) = logits.dims2()?;
    if !(1 <= top_k && top_k <= k_experts) {
        return Err(Error::Config(format!(
            "top_k = {top_k} outside 1..={k_experts}"
        )));
    }
    let mut probs = vec![0.0; b * k_experts];
    let mut row_buf = vec![0.0; k_experts];
    for i in 0..b {
        let row = &logits.data()[i * k_experts..(i + 1) * k_experts];
        softmax_row(row, &mut row_buf);
        let kept = top_k_indices(row, top_k);
        let mass: f64 = kept.iter().map(|&j| row_buf[j]).sum();
        for &j in &kept {
            probs[i * k_experts + j] = row_buf[j] / mass;
        }
    }
    Ok(Tensor::from_parts(vec![b, k_experts], probs))
}

/// Soft merge: one composite matrix per example, `B_i = sum_k probs[i,k] B_k`.
pub fn merge_experts(probs: &Tensor, experts: &[Tensor]) -> Result<Vec<Tensor>> {
    let (b, k) = probs.dims2()?;
    if k != experts.len() {
        return Err(Error::Shape(format!(
            "{k} routing columns for {} experts",
            experts.len()
        )));
    }
    let (r, d_out) = experts[0].dims2()?;
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let mut merged = vec![0.0; r * d_out];
        for (kx, e) in experts.iter().enumerate() {
            let p = probs.at2(i, kx);
            if p == 0.0 {
                continue;
            }
            for (m, v) in merged.iter_mut().zip(e.data()) {
                *m += p * v;
            }
        }
        out.push(Tensor::from_parts(vec![r, d_out], merged));
    }
    Ok(out)
}

/// Draws a rank from a categorical distribution over `r_min..=r_max`
/// (uniform by default). Consumes exactly one RNG draw.
pub fn sample_rank<R: Rng>(
    rng: &mut R,
    r_min: usize,
    r_max: usize,
    dist: Option<&[f64]>,
) -> Result<usize> {
    if r_min == 0 || r_min > r_max {
        return Err(Error::Config(format!("empty rank range [{r_min}, {r_max}]")));
    }
    let n = r_max - r_min + 1;
    let u: f64 = rng.gen();
    match dist {
        None => Ok(r_min + ((u * n as f64) as usize).min(n - 1)),
        Some(p) => {
            if p.len() != n {
                return Err(Error::Config(format!(
                    "rank distribution has {} weights for {n} ranks",
                    p.len()
                )));
            }
            if p.iter().any(|&w| w < 0.0) || p.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config("rank distribution weights must be nonnegative and sum > 0".into()));
            }
            let total: f64 = p.iter().sum();
            let mut acc = 0.0;
            for (i, &w) in p.iter().enumerate() {
                acc += w / total;
                if u < acc {
                    return Ok(r_min + i);
                }
            }
            Ok(r_max)
        }
    }
}

/// Keeps the first `b` columns of the projection-down matrix and the first
/// `b` rows of the merged projection-up matrix.
pub fn truncate(a: &Tensor, b_merged: &Tensor, rank: usize) -> Result<(Tensor, Tensor)> {
    let (_, r_max) = a.dims2()?;
    if rank == 0 || rank > r_max {
        return Err(Error::Contract(format!("rank {rank} outside 1..={r_max}")));
    }
    Ok((a.slice_cols(0, rank)?, b_merged.slice_rows(0, rank)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_expert_routes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 1], 1.0, &mut rng);
        let probs = route(&x, &w, 1).unwrap();
        assert!(probs.data().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn two_expert_closed_form() {
        // logits [ln 3, 0] -> [0.75, 0.25]
        let x = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![3.0_f64.ln(), 0.0, 0.0, 0.0]).unwrap();
        let probs = route(&x, &w, 2).unwrap();
        assert!((probs.at2(0, 0) - 0.75).abs() < 1e-12);
        assert!((probs.at2(0, 1) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn hard_routing_picks_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn(&[6, 4], 1.0, &mut rng);
        let w = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let logits = x.matmul(&w).unwrap();
        let probs = route(&x, &w, 1).unwrap();
        for i in 0..6 {
            let row: Vec<f64> = (0..3).map(|j| logits.at2(i, j)).collect();
            let argmax = top_k_indices(&row, 1)[0];
            for j in 0..3 {
                let expected = if j == argmax { 1.0 } else { 0.0 };
                assert_eq!(probs.at2(i, j), expected, "example {i} expert {j}");
            }
        }
    }

    #[test]
    fn routing_stays_on_simplex_with_small_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::randn(&[10, 5], 2.0, &mut rng);
        let w = Tensor::randn(&[5, 6], 2.0, &mut rng);
        let probs = route(&x, &w, 2).unwrap();
        for i in 0..10 {
            let row: Vec<f64> = (0..6).map(|j| probs.at2(i, j)).collect();
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!(row.iter().filter(|&&p| p > 0.0).count() <= 2);
        }
    }

    #[test]
    fn merge_degenerate_and_convex() {
        let b1 = Tensor::new(vec![1, 2], vec![4.0, 0.0]).unwrap();
        let b2 = Tensor::new(vec![1, 2], vec![0.0, 8.0]).unwrap();
        let experts = vec![b1, b2];

        let hard = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let merged = merge_experts(&hard, &experts).unwrap();
        assert_eq!(merged[0].data(), &[4.0, 0.0]);

        let soft = Tensor::new(vec![1, 2], vec![0.75, 0.25]).unwrap();
        let merged = merge_experts(&soft, &experts).unwrap();
        assert_eq!(merged[0].data(), &[3.0, 2.0]);
    }

    #[test]
    fn merge_of_identical_experts_is_that_expert() {
        let e = Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let experts = vec![e.clone(), e.clone(), e.clone()];
        let probs = Tensor::new(vec![1, 3], vec![0.2, 0.5, 0.3]).unwrap();
        let merged = merge_experts(&probs, &experts).unwrap();
        for (a, b) in merged[0].data().iter().zip(e.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_rank_range_always_returns_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(sample_rank(&mut rng, 8, 8, None).unwrap(), 8);
        }
        assert!(sample_rank(&mut rng, 9, 8, None).is_err());
        assert!(sample_rank(&mut rng, 0, 4, None).is_err());
    }

    #[test]
    fn uniform_rank_frequencies_within_one_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let (lo, hi) = (4usize, 16usize);
        let n = hi - lo + 1;
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            let b = sample_rank(&mut rng, lo, hi, None).unwrap();
            counts[b - lo] += 1;
        }
        let expected = 1.0 / n as f64;
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - expected).abs() < 0.01,
                "rank {}: frequency {freq} vs {expected}",
                lo + i
            );
        }
    }

    #[test]
    fn fixed_seed_reproduces_rank_sequence() {
        let seq = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| sample_rank(&mut rng, 4, 16, None).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(seq(77), seq(77));
        assert_ne!(seq(77), seq(78));
    }

    #[test]
    fn truncate_slices_first_block() {
        let a = Tensor::new(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let b = Tensor::new(vec![4, 2], vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]).unwrap();
        let (a2, b2) = truncate(&a, &b, 2).unwrap();
        assert_eq!(a2.shape(), &[2, 2]);
        assert_eq!(a2.data(), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(b2.shape(), &[2, 2]);
        assert_eq!(b2.data(), &[1.0, 1.0, 2.0, 2.0]);
        assert!(truncate(&a, &b, 5).is_err());
        assert!(truncate(&a, &b, 0).is_err());
    }
}

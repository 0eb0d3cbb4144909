//! Gradient accumulation across micro-batches.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Accumulates per-parameter gradients over micro-batches; after
/// `target_steps` micro-batches the mean gradient is handed to the optimizer
/// and the sums reset.
#[derive(Debug)]
pub struct GradAccumulator {
    sums: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    micro_steps: usize,
    target_steps: usize,
}

impl GradAccumulator {
    pub fn new(target_steps: usize) -> Result<Self> {
        if target_steps == 0 {
            return Err(Error::Config("target_steps must be >= 1".into()));
        }
        Ok(Self { sums: BTreeMap::new(), micro_steps: 0, target_steps })
    }

    pub fn target_steps(&self) -> usize {
        self.target_steps
    }

    pub fn micro_steps(&self) -> usize {
        self.micro_steps
    }

    /// Adds one parameter's micro-gradient to the running sum.
    pub fn add(&mut self, name: &str, shape: &[usize], grad: &[f64]) -> Result<()> {
        match self.sums.get_mut(name) {
            None => {
                self.sums
                    .insert(name.to_string(), (shape.to_vec(), grad.to_vec()));
            }
            Some((stored_shape, sum)) => {
                if stored_shape.as_slice() != shape || sum.len() != grad.len() {
                    return Err(Error::Contract(format!(
                        "parameter {name} changed shape between micro-steps: {stored_shape:?} vs {shape:?}"
                    )));
                }
                for (s, g) in sum.iter_mut().zip(grad) {
                    *s += g;
                }
            }
        }
        Ok(())
    }

    /// Marks the end of one micro-batch.
    pub fn finish_micro_step(&mut self) {
        self.micro_steps += 1;
    }

    pub fn is_full(&self) -> bool {
        self.micro_steps >= self.target_steps
    }

    /// When full, invokes `apply(name, mean_grad)` for every accumulated
    /// parameter, resets, and reports whether an update happened.
    pub fn apply_if_full(
        &mut self,
        mut apply: impl FnMut(&str, &[f64]) -> Result<()>,
    ) -> Result<bool> {
        if !self.is_full() {
            return Ok(false);
        }
        let inv = 1.0 / self.micro_steps as f64;
        for (name, (_, sum)) in &self.sums {
            let mean: Vec<f64> = sum.iter().map(|s| s * inv).collect();
            apply(name, &mean)?;
        }
        self.sums.clear();
        self.micro_steps = 0;
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_target_is_direct_stepping() {
        let mut acc = GradAccumulator::new(1).unwrap();
        acc.add("w", &[2], &[1.0, -2.0]).unwrap();
        acc.finish_micro_step();
        let mut seen = Vec::new();
        let applied = acc
            .apply_if_full(|name, g| {
                seen.push((name.to_string(), g.to_vec()));
                Ok(())
            })
            .unwrap();
        assert!(applied);
        assert_eq!(seen, vec![("w".to_string(), vec![1.0, -2.0])]);
        assert_eq!(acc.micro_steps(), 0);
    }

    #[test]
    fn opposite_micro_grads_cancel() {
        let mut acc = GradAccumulator::new(2).unwrap();
        acc.add("w", &[2], &[3.0, -1.0]).unwrap();
        acc.finish_micro_step();
        assert!(!acc.apply_if_full(|_, _| Ok(())).unwrap());
        acc.add("w", &[2], &[-3.0, 1.0]).unwrap();
        acc.finish_micro_step();
        let mut mean = Vec::new();
        acc.apply_if_full(|_, g| {
            mean = g.to_vec();
            Ok(())
        })
        .unwrap();
        assert_eq!(mean, vec![0.0, 0.0]);
    }

    #[test]
    fn shape_drift_is_rejected() {
        let mut acc = GradAccumulator::new(4).unwrap();
        acc.add("w", &[2], &[1.0, 1.0]).unwrap();
        assert!(acc.add("w", &[1, 2], &[1.0, 1.0]).is_err());
        assert!(acc.add("w", &[3], &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn zero_target_rejected() {
        assert!(GradAccumulator::new(0).is_err());
    }
}

//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, NodeId};
use super::Tensor;
use crate::error::{Error, Result};

/// Compares the tape gradient of `f` at `x` against central differences.
///
/// `f` must build a scalar loss node from the given input node and be
/// deterministic (fix dropout masks and routing before checking). Returns the
/// max over entries of `|analytic - central| / (|central| + 1e-12)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::Contract(format!("step size h = {h} outside (0, 1e-2]")));
    }
    let mut probe = x.clone();
    probe.requires_grad = true;

    let mut g = Graph::new();
    let xid = g.param(&probe)?;
    let loss = f(&mut g, xid)?;
    if g.shape(loss) != (1, 1) {
        return Err(Error::Contract(format!(
            "grad_check target must be scalar, got {:?}",
            g.shape(loss)
        )));
    }
    g.backward(loss)?;
    let analytic = g
        .grad(xid)
        .ok_or_else(|| Error::Contract("no gradient reached the probed input".into()))?
        .to_vec();

    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let xid = g.constant(t)?;
        let loss = f(&mut g, xid)?;
        Ok(g.scalar(loss))
    };

    let mut worst = 0.0_f64;
    for i in 0..probe.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let central = (fp - fm) / (2.0 * h);
        let rel = (analytic[i] - central).abs() / (central.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

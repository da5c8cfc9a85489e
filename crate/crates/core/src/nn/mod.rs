//! Layers with hand-written backward passes.

mod batchnorm;
mod conv;
mod gdn;
mod linear;
mod loss;
mod pool;
mod prelu;
mod upsample;

pub use batchnorm::{batch_norm, BatchNorm2d, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d, conv_output_size, Conv2d};
pub use gdn::{gdn, igdn, GdnParams, BETA_FLOOR};
pub use linear::{linear, Linear};
pub use loss::{cross_entropy, l1_loss, softmax_rows};
pub use pool::maxpool2d;
pub use prelu::{prelu, PreluParams, PRELU_INIT};
pub use upsample::upsample_nearest2x;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Forward-pass mode. Only batch norm distinguishes them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running estimates updated.
    Train,
    /// Batch statistics, running estimates left untouched (saliency probes).
    BatchStats,
    /// Running estimates.
    Eval,
}

/// Multiplies channel `c` (axis 1) of `x` by `gate[c]`; differentiable in both.
pub fn scale_channels(x: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() < 2 || gate.shape() != [s[1]] {
        return Err(Error::shapes("scale_channels", s, gate.shape()));
    }
    let c = s[1];
    let inner: usize = s[2..].iter().product();
    let gd = gate.to_vec();
    let out: Vec<f64> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v * gd[(i / inner) % c])
        .collect();
    Ok(Tensor::from_op(s.to_vec(), out, "scale_channels", vec![x.clone(), gate.clone()], move |g, p| {
        if p[0].requires_grad() {
            let gx: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * gd[(i / inner) % c]).collect();
            p[0].accumulate_grad(&gx);
        }
        if p[1].requires_grad() {
            let xd = p[0].data();
            let mut gg = vec![0.0; c];
            for (i, v) in g.iter().enumerate() {
                gg[(i / inner) % c] += v * xd[i];
            }
            drop(xd);
            p[1].accumulate_grad(&gg);
        }
    }))
}

/// Flattens everything after the batch axis.
pub fn flatten(x: &Tensor) -> Result<Tensor> {
    let n = x.shape()[0];
    x.reshape(&[n, x.numel() / n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, init, InitScheme, Rng};

    #[test]
    fn gate_gradients() {
        let mut rng = Rng::new(3);
        let x = init(&[2, 3, 2, 2], InitScheme::Normal { mean: 0.0, std: 1.0 }, &mut rng).unwrap();
        let gate = Tensor::param(&[3], vec![1.0, 0.5, -2.0]).unwrap();
        assert!(grad_check(|x| Ok(scale_channels(x, &gate)?.square().sum()), &x, 1e-5).unwrap() < 1e-8);
        let xd = x.detach();
        assert!(grad_check(|g| Ok(scale_channels(&xd, g)?.square().sum()), &gate, 1e-5).unwrap() < 1e-8);
    }
}

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PRELU_INIT: f64 = 0.25;

/// One learnable negative slope per channel (axis 1).
#[derive(Clone, Debug)]
pub struct PreluParams {
    pub slope: Tensor,
}

impl PreluParams {
    pub fn new(channels: usize) -> Self {
        PreluParams {
            slope: Tensor::param(&[channels], vec![PRELU_INIT; channels]).expect("nonzero channels"),
        }
    }

    pub fn deep_clone(&self) -> Self {
        PreluParams {
            slope: self.slope.deep_copy(),
        }
    }

    pub fn channels(&self) -> usize {
        self.slope.numel()
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.slope.clone()]
    }
}

/// `x` where `x >= 0`, `slope[c] * x` otherwise.
pub fn prelu(x: &Tensor, p: &PreluParams) -> Result<Tensor> {
    let s = x.shape();
    if s.len() < 2 || s[1] != p.channels() {
        return Err(Error::dim("prelu", format!("input {s:?} vs {} slopes", p.channels())));
    }
    let c = s[1];
    let inner: usize = s[2..].iter().product();
    let slope = p.slope.to_vec();
    let out: Vec<f64> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if v >= 0.0 { v } else { slope[(i / inner) % c] * v })
        .collect();
    Ok(Tensor::from_op(s.to_vec(), out, "prelu", vec![x.clone(), p.slope.clone()], move |g, parents| {
        let xd = parents[0].data();
        let mut gx = vec![0.0; g.len()];
        let mut gs = vec![0.0; c];
        for i in 0..g.len() {
            let ch = (i / inner) % c;
            if xd[i] >= 0.0 {
                gx[i] = g[i];
            } else {
                gx[i] = slope[ch] * g[i];
                gs[ch] += g[i] * xd[i];
            }
        }
        drop(xd);
        parents[0].accumulate_grad(&gx);
        parents[1].accumulate_grad(&gs);
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Rng};

    #[test]
    fn positive_passes_negative_scales() {
        let p = PreluParams::new(1);
        let x = Tensor::from_vec(&[2, 1], vec![5.0, -4.0]).unwrap();
        assert_eq!(prelu(&x, &p).unwrap().to_vec(), vec![5.0, -1.0]);
    }

    #[test]
    fn unit_slope_identity_and_slope_grad() {
        let p = PreluParams::new(1);
        p.slope.set_data(vec![1.0]).unwrap();
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![-2.0]).unwrap();
        let y = prelu(&x, &p).unwrap();
        assert_eq!(y.to_vec(), vec![-2.0]);
        y.sum().backward().unwrap();
        assert_eq!(p.slope.grad(), vec![-2.0]);
    }

    #[test]
    fn gradient_checks() {
        let mut rng = Rng::new(5);
        let p = PreluParams::new(3);
        p.slope.set_data(vec![0.1, 0.4, -0.2]).unwrap();
        // keep |x| > 1e-3 away from the kink
        let v: Vec<f64> = (0..24)
            .map(|_| {
                let u = rng.normal();
                u + 0.01 * u.signum()
            })
            .collect();
        let x = Tensor::param(&[2, 3, 2, 2], v).unwrap();
        assert!(grad_check(|x| Ok(prelu(x, &p)?.square().sum()), &x, 1e-6).unwrap() < 1e-6);
        let xd = x.detach();
        assert!(grad_check(|_| Ok(prelu(&xd, &p)?.square().sum()), &p.slope, 1e-6).unwrap() < 1e-6);
    }
}

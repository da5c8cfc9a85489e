//! Generalized divisive normalization and its approximate inverse.
//!
//! At every spatial position (m, n), with input channels w_j:
//!
//!   GDN:  u_i = w_i / sqrt(beta_i + sum_j gamma_ij * w_j^2)
//!   IGDN: w_i = u_i * sqrt(beta_i + sum_j gamma_ij * u_j^2)
//!
//! Positivity is kept by reparameterization: the stored tensors are
//! unconstrained and the effective parameters are
//! `beta = max(beta_raw, BETA_FLOOR)^2` and `gamma = gamma_raw^2`.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor, Transpose};

pub const BETA_FLOOR: f64 = 1e-6;
const GAMMA_INIT: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct GdnParams {
    /// (C)
    pub beta_raw: Tensor,
    /// (C, C)
    pub gamma_raw: Tensor,
}

impl GdnParams {
    /// beta = 1, gamma = 0.1 * I.
    pub fn new(channels: usize) -> Self {
        let mut gamma = vec![0.0; channels * channels];
        for i in 0..channels {
            gamma[i * channels + i] = GAMMA_INIT;
        }
        GdnParams::from_effective(&vec![1.0; channels], &gamma).expect("valid default")
    }

    /// Builds the raw surrogates from effective (beta, gamma) values.
    pub fn from_effective(beta: &[f64], gamma: &[f64]) -> Result<Self> {
        let c = beta.len();
        if c == 0 || gamma.len() != c * c {
            return Err(Error::dim("gdn params", format!("beta {c}, gamma {}", gamma.len())));
        }
        if beta.iter().any(|&b| b <= 0.0) || gamma.iter().any(|&g| g < 0.0) {
            return Err(Error::Input("gdn needs beta > 0 and gamma >= 0".into()));
        }
        Ok(GdnParams {
            beta_raw: Tensor::param(&[c], beta.iter().map(|b| b.sqrt()).collect())?,
            gamma_raw: Tensor::param(&[c, c], gamma.iter().map(|g| g.sqrt()).collect())?,
        })
    }

    pub fn from_raw(beta_raw: Tensor, gamma_raw: Tensor) -> Result<Self> {
        let c = beta_raw.numel();
        if beta_raw.shape() != [c] || gamma_raw.shape() != [c, c] {
            return Err(Error::shapes("gdn params", beta_raw.shape(), gamma_raw.shape()));
        }
        Ok(GdnParams { beta_raw, gamma_raw })
    }

    pub fn deep_clone(&self) -> Self {
        GdnParams {
            beta_raw: self.beta_raw.deep_copy(),
            gamma_raw: self.gamma_raw.deep_copy(),
        }
    }

    pub fn channels(&self) -> usize {
        self.beta_raw.numel()
    }

    pub fn effective_beta(&self) -> Vec<f64> {
        self.beta_raw.data().iter().map(|b| b.max(BETA_FLOOR).powi(2)).collect()
    }

    pub fn effective_gamma(&self) -> Vec<f64> {
        self.gamma_raw.data().iter().map(|g| g * g).collect()
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.beta_raw.clone(), self.gamma_raw.clone()]
    }
}

pub fn gdn(x: &Tensor, p: &GdnParams) -> Result<Tensor> {
    divisive(x, p, false)
}

pub fn igdn(x: &Tensor, p: &GdnParams) -> Result<Tensor> {
    divisive(x, p, true)
}

fn divisive(x: &Tensor, p: &GdnParams, inverse: bool) -> Result<Tensor> {
    let op = if inverse { "igdn" } else { "gdn" };
    let s = x.shape();
    if s.len() < 2 || s[1] != p.channels() {
        return Err(Error::dim(op, format!("input {s:?} vs {} channels", p.channels())));
    }
    let (n, c) = (s[0], s[1]);
    let hw: usize = s[2..].iter().product();
    let plane = c * hw;
    let beta = p.effective_beta();
    let gamma = p.effective_gamma();

    // r = beta + gamma * x^2, per sample as (C x HW) matrices.
    let mut sq = vec![0.0; x.numel()];
    let mut r = vec![0.0; x.numel()];
    let mut out = vec![0.0; x.numel()];
    {
        let xd = x.data();
        sq.iter_mut().zip(xd.iter()).for_each(|(q, v)| *q = v * v);
        for b in 0..n {
            let rs = &mut r[b * plane..(b + 1) * plane];
            for (ch, row) in rs.chunks_mut(hw).enumerate() {
                row.fill(beta[ch]);
            }
            gemm(c, c, hw, 1.0, &gamma, Transpose::No, &sq[b * plane..(b + 1) * plane], Transpose::No, 1.0, rs);
        }
        for i in 0..out.len() {
            let root = r[i].sqrt();
            out[i] = if inverse { xd[i] * root } else { xd[i] / root };
        }
    }

    Ok(Tensor::from_op(
        s.to_vec(),
        out,
        op,
        vec![x.clone(), p.beta_raw.clone(), p.gamma_raw.clone()],
        move |g, parents| {
            let xd = parents[0].data();
            // q = dL/dr
            let q: Vec<f64> = (0..g.len())
                .map(|i| {
                    if inverse {
                        0.5 * g[i] * xd[i] / r[i].sqrt()
                    } else {
                        -0.5 * g[i] * xd[i] / (r[i] * r[i].sqrt())
                    }
                })
                .collect();
            if parents[0].requires_grad() {
                let mut gx = vec![0.0; g.len()];
                // gx = 2 x * (gamma^T q)
                for b in 0..n {
                    gemm(
                        c,
                        c,
                        hw,
                        1.0,
                        &gamma,
                        Transpose::Yes,
                        &q[b * plane..(b + 1) * plane],
                        Transpose::No,
                        0.0,
                        &mut gx[b * plane..(b + 1) * plane],
                    );
                }
                for i in 0..g.len() {
                    let root = r[i].sqrt();
                    let direct = if inverse { g[i] * root } else { g[i] / root };
                    gx[i] = direct + 2.0 * xd[i] * gx[i];
                }
                drop(xd);
                parents[0].accumulate_grad(&gx);
            } else {
                drop(xd);
            }
            if parents[1].requires_grad() {
                let raw = parents[1].to_vec();
                let mut gb = vec![0.0; c];
                for b in 0..n {
                    for (ch, row) in q[b * plane..(b + 1) * plane].chunks(hw).enumerate() {
                        gb[ch] += row.iter().sum::<f64>();
                    }
                }
                for (gv, rv) in gb.iter_mut().zip(&raw) {
                    *gv *= if *rv > BETA_FLOOR { 2.0 * rv } else { 0.0 };
                }
                parents[1].accumulate_grad(&gb);
            }
            if parents[2].requires_grad() {
                let raw = parents[2].to_vec();
                let mut gg = vec![0.0; c * c];
                for b in 0..n {
                    let range = b * plane..(b + 1) * plane;
                    gemm(c, hw, c, 1.0, &q[range.clone()], Transpose::No, &sq[range], Transpose::Yes, 1.0, &mut gg);
                }
                gg.iter_mut().zip(&raw).for_each(|(gv, rv)| *gv *= 2.0 * rv);
                parents[2].accumulate_grad(&gg);
            }
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, init, InitScheme, Rng};

    fn identity_gamma(c: usize, v: f64) -> Vec<f64> {
        let mut g = vec![0.0; c * c];
        for i in 0..c {
            g[i * c + i] = v;
        }
        g
    }

    #[test]
    fn zero_gamma_unit_beta_is_identity() {
        let p = GdnParams::from_effective(&[1.0, 1.0], &[0.0; 4]).unwrap();
        let x = Tensor::from_vec(&[1, 2, 1, 2], vec![0.3, -1.2, 4.0, 2.5]).unwrap();
        assert_eq!(gdn(&x, &p).unwrap().to_vec(), x.to_vec());
        assert_eq!(igdn(&x, &p).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn hand_values() {
        let p = GdnParams::from_effective(&[1.0], &[3.0]).unwrap();
        let u = gdn(&Tensor::ones(&[1, 1, 1, 1]), &p).unwrap().item();
        assert!((u - 0.5).abs() < 1e-12, "{u}");
        let w = igdn(&Tensor::full(&[1, 1, 1, 1], 0.5), &p).unwrap().item();
        assert!((w - 0.5 * 1.75f64.sqrt()).abs() < 1e-12, "{w}");
        assert!((w - 0.6614).abs() < 1e-4);
    }

    #[test]
    fn beta_four_halves() {
        let p = GdnParams::from_effective(&[4.0, 4.0], &[0.0; 4]).unwrap();
        let x = Tensor::from_vec(&[1, 2, 1, 1], vec![3.0, -5.0]).unwrap();
        assert_eq!(gdn(&x, &p).unwrap().to_vec(), vec![1.5, -2.5]);
    }

    #[test]
    fn inverse_exact_without_coupling() {
        let mut rng = Rng::new(2);
        let beta: Vec<f64> = (0..3).map(|_| 0.5 + rng.uniform()).collect();
        let p = GdnParams::from_effective(&beta, &[0.0; 9]).unwrap();
        let x = init(&[2, 3, 4, 4], InitScheme::Normal { mean: 0.0, std: 1.0 }, &mut rng).unwrap();
        let back = igdn(&gdn(&x, &p).unwrap(), &p).unwrap();
        for (a, b) in back.to_vec().iter().zip(x.to_vec()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn channel_coupling_matches_formula() {
        let beta = [0.5, 2.0];
        let gamma = [0.1, 0.3, 0.2, 0.05];
        let p = GdnParams::from_effective(&beta, &gamma).unwrap();
        let x = Tensor::from_vec(&[1, 2, 1, 1], vec![1.5, -0.7]).unwrap();
        let y = gdn(&x, &p).unwrap().to_vec();
        let w = [1.5f64, -0.7];
        for i in 0..2 {
            let r = beta[i] + gamma[i * 2] * w[0] * w[0] + gamma[i * 2 + 1] * w[1] * w[1];
            assert!((y[i] - w[i] / r.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn default_init() {
        let p = GdnParams::new(3);
        assert_eq!(p.effective_beta(), vec![1.0; 3]);
        let g = p.effective_gamma();
        for (a, b) in g.iter().zip(identity_gamma(3, 0.1)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_checks() {
        let mut rng = Rng::new(8);
        let beta: Vec<f64> = (0..3).map(|_| 0.5 + rng.uniform()).collect();
        let gamma: Vec<f64> = (0..9).map(|_| 0.05 + 0.3 * rng.uniform()).collect();
        let p = GdnParams::from_effective(&beta, &gamma).unwrap();
        let x = init(&[2, 3, 2, 2], InitScheme::Normal { mean: 0.0, std: 1.0 }, &mut rng).unwrap();
        let probe = init(&[2, 3, 2, 2], InitScheme::Normal { mean: 0.0, std: 1.0 }, &mut rng)
            .unwrap()
            .detach();
        for f in [gdn, igdn] {
            let obj = |x: &Tensor| Ok(f(x, &p)?.mul(&probe)?.sum());
            assert!(grad_check(obj, &x, 1e-5).unwrap() < 1e-7);
            let xd = x.detach();
            let obj = |_: &Tensor| Ok(f(&xd, &p)?.mul(&probe)?.sum());
            assert!(grad_check(obj, &p.beta_raw, 1e-5).unwrap() < 1e-7);
            assert!(grad_check(obj, &p.gamma_raw, 1e-5).unwrap() < 1e-7);
        }
    }
}

use std::cell::Cell;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization over (N, H, W).
///
/// Train mode normalizes with the population variance of the batch and folds
/// the batch statistics into the running estimates; eval mode uses the
/// running estimates.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
    stats_ready: Cell<bool>,
}

impl BatchNorm2d {
    /// gamma = 1, beta = 0, running statistics (0, 1).
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::param(&[channels], vec![1.0; channels]).expect("nonzero channels"),
            beta: Tensor::param(&[channels], vec![0.0; channels]).expect("nonzero channels"),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            stats_ready: Cell::new(true),
        }
    }

    /// A layer whose running statistics have never been estimated; eval-mode
    /// forward fails until a train-mode pass has run.
    pub fn without_running_stats(channels: usize) -> Self {
        let bn = BatchNorm2d::new(channels);
        bn.stats_ready.set(false);
        bn
    }

    pub fn from_parts(gamma: Tensor, beta: Tensor, running_mean: Tensor, running_var: Tensor) -> Result<Self> {
        let c = gamma.shape();
        if c.len() != 1 || beta.shape() != c || running_mean.shape() != c || running_var.shape() != c {
            return Err(Error::shapes("batch_norm params", gamma.shape(), beta.shape()));
        }
        if running_var.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Input("running_var must be non-negative".into()));
        }
        Ok(BatchNorm2d {
            gamma,
            beta,
            running_mean,
            running_var,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            stats_ready: Cell::new(true),
        })
    }

    /// Copy with independent storage.
    pub fn deep_clone(&self) -> Self {
        BatchNorm2d {
            gamma: self.gamma.deep_copy(),
            beta: self.beta.deep_copy(),
            running_mean: self.running_mean.deep_copy(),
            running_var: self.running_var.deep_copy(),
            momentum: self.momentum,
            eps: self.eps,
            stats_ready: Cell::new(self.stats_ready.get()),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn stats_ready(&self) -> bool {
        self.stats_ready.get()
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.gamma.clone(), self.beta.clone()]
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        batch_norm(x, self, mode)
    }
}

pub fn batch_norm(x: &Tensor, p: &BatchNorm2d, mode: Mode) -> Result<Tensor> {
    let s = x.shape();
    if s.len() < 2 || s[1] != p.channels() {
        return Err(Error::dim(
            "batch_norm",
            format!("input {s:?} vs {} channels", p.channels()),
        ));
    }
    let (n, c) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    let m = (n * inner) as f64;
    let eps = p.eps;

    let (mean, var) = match mode {
        Mode::Eval => {
            if !p.stats_ready.get() {
                return Err(Error::State("batch_norm eval with uninitialized running statistics".into()));
            }
            (p.running_mean.to_vec(), p.running_var.to_vec())
        }
        Mode::Train | Mode::BatchStats => {
            let xd = x.data();
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * inner;
                    mean[ch] += xd[off..off + inner].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * inner;
                    var[ch] += xd[off..off + inner].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
            (mean, var)
        }
    };

    if mode == Mode::Train {
        let mom = p.momentum;
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        p.running_mean
            .update_data(|rm| rm.iter_mut().zip(&mean).for_each(|(r, v)| *r = (1.0 - mom) * *r + mom * v));
        p.running_var
            .update_data(|rv| rv.iter_mut().zip(&var).for_each(|(r, v)| *r = (1.0 - mom) * *r + mom * v * unbias));
        p.stats_ready.set(true);
    }

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let gamma = p.gamma.to_vec();
    let beta = p.beta.to_vec();
    let mut xhat = vec![0.0; x.numel()];
    let mut out = vec![0.0; x.numel()];
    {
        let xd = x.data();
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * inner;
                for i in off..off + inner {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gamma[ch] * h + beta[ch];
                }
            }
        }
    }

    let batch_stats = mode != Mode::Eval;
    Ok(Tensor::from_op(
        s.to_vec(),
        out,
        "batch_norm",
        vec![x.clone(), p.gamma.clone(), p.beta.clone()],
        move |g, parents| {
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * inner;
                    for i in off..off + inner {
                        sum_g[ch] += g[i];
                        sum_gx[ch] += g[i] * xhat[i];
                    }
                }
            }
            if parents[0].requires_grad() {
                let mut gx = vec![0.0; g.len()];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * inner;
                        let k = gamma[ch] * inv_std[ch];
                        for i in off..off + inner {
                            gx[i] = if batch_stats {
                                k * (g[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m)
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
                parents[0].accumulate_grad(&gx);
            }
            parents[1].accumulate_grad(&sum_gx);
            parents[2].accumulate_grad(&sum_g);
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, init, InitScheme, Rng};

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let bn = BatchNorm2d::new(2);
        bn.running_var.set_data(vec![1.0 - BN_EPS; 2]).unwrap();
        let x = Tensor::from_vec(&[1, 2, 1, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let y = bn.forward(&x, Mode::Eval).unwrap();
        for (a, b) in y.to_vec().iter().zip(x.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn train_two_values_normalize_to_pm_one() {
        let bn = BatchNorm2d::new(1);
        let x = Tensor::from_vec(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap().to_vec();
        // population variance 1 -> (x - 2) / sqrt(1 + eps)
        let d = 1.0 / (1.0 + BN_EPS).sqrt();
        assert!((y[0] + d).abs() < 1e-12 && (y[1] - d).abs() < 1e-12);
        assert!((y[0] + 1.0).abs() < 1e-5);
        // running stats moved by momentum 0.1 with unbiased variance 2
        assert!((bn.running_mean.to_vec()[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var.to_vec()[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let bn = BatchNorm2d::new(2);
        bn.gamma.set_data(vec![0.0, 0.0]).unwrap();
        bn.beta.set_data(vec![0.5, -1.5]).unwrap();
        let x = init(&[3, 2, 2, 2], InitScheme::Normal { mean: 0.0, std: 2.0 }, &mut Rng::new(1)).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let y = bn.forward(&x, mode).unwrap().to_vec();
            for (i, v) in y.iter().enumerate() {
                let ch = (i / 4) % 2;
                assert_eq!(*v, [0.5, -1.5][ch]);
            }
        }
    }

    #[test]
    fn eval_without_stats_is_state_error() {
        let bn = BatchNorm2d::without_running_stats(1);
        let err = bn.forward(&Tensor::ones(&[1, 1, 2, 2]), Mode::Eval).unwrap_err();
        assert!(matches!(err, Error::State(_)));
        bn.forward(&Tensor::ones(&[1, 1, 2, 2]), Mode::Train).unwrap();
        assert!(bn.forward(&Tensor::ones(&[1, 1, 2, 2]), Mode::Eval).is_ok());
    }

    #[test]
    fn batch_stats_mode_leaves_running_stats() {
        let bn = BatchNorm2d::new(1);
        let x = Tensor::from_vec(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        bn.forward(&x, Mode::BatchStats).unwrap();
        assert_eq!(bn.running_mean.to_vec(), vec![0.0]);
    }

    #[test]
    fn gradient_checks_both_modes() {
        let mut rng = Rng::new(21);
        let bn = BatchNorm2d::new(3);
        bn.gamma.set_data(vec![0.7, 1.4, -0.3]).unwrap();
        bn.beta.set_data(vec![0.1, -0.2, 0.3]).unwrap();
        let x = init(&[4, 3, 2, 3], InitScheme::Normal { mean: 0.5, std: 1.5 }, &mut rng).unwrap();
        let probe = init(&[4, 3, 2, 3], InitScheme::Normal { mean: 0.0, std: 1.0 }, &mut rng)
            .unwrap()
            .detach();
        for mode in [Mode::BatchStats, Mode::Eval] {
            let f = |x: &Tensor| Ok(batch_norm(x, &bn, mode)?.mul(&probe)?.sum());
            assert!(grad_check(f, &x, 1e-5).unwrap() < 1e-7);
            let xg = x.detach();
            let f = |_: &Tensor| Ok(batch_norm(&xg, &bn, mode)?.mul(&probe)?.sum());
            assert!(grad_check(f, &bn.gamma, 1e-5).unwrap() < 1e-7);
            assert!(grad_check(f, &bn.beta, 1e-5).unwrap() < 1e-7);
        }
    }
}

//! Real-valued AWGN channel with a unit average power constraint.
//!
//! A block of `B` real symbols `x` is sent as `y = x + z` with
//! `z ~ N(0, sigma2)` i.i.d., where `sigma2 = P / 10^(snr_db / 10)` and `P = 1`.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{Rng, RngState, Tensor};

/// Average transmit power.
pub const POWER: f64 = 1.0;

pub fn snr_to_sigma2(snr_db: f64, power: f64) -> f64 {
    power / 10f64.powf(snr_db / 10.0)
}

/// Shannon capacity `0.5 * log2(1 + P / sigma2)` in bits per real symbol (P = 1).
pub fn capacity(snr_db: f64) -> f64 {
    0.5 * (1.0 + 1.0 / snr_to_sigma2(snr_db, POWER)).log2()
}

/// Bits a capacity-achieving digital scheme could carry in `bandwidth` symbols.
pub fn digital_bits(snr_db: f64, bandwidth: usize) -> f64 {
    capacity(snr_db) * bandwidth as f64
}

#[derive(Debug)]
pub struct Normalized {
    pub symbols: Tensor,
    /// Rows that were all zero and passed through unscaled.
    pub zero_rows: Vec<usize>,
}

/// Scales each row of an (N, B) tensor (or a single length-B vector) so that
/// `(1/B) * sum x_i^2 == power`. All-zero rows are returned unchanged and
/// reported in [`Normalized::zero_rows`].
pub fn power_normalize(x: &Tensor, power: f64) -> Result<Normalized> {
    let (n, b) = match x.shape() {
        [b] => (1, *b),
        [n, b] => (*n, *b),
        s => return Err(Error::dim("power_normalize", format!("expected (N, B) or (B), got {s:?}"))),
    };
    let target = (power * b as f64).sqrt();
    let mut out = x.to_vec();
    let mut norms = vec![0.0; n];
    let mut zero_rows = Vec::new();
    for (r, row) in out.chunks_mut(b).enumerate() {
        let energy: f64 = row.iter().map(|v| v * v).sum();
        if energy == 0.0 {
            zero_rows.push(r);
            continue;
        }
        let norm = energy.sqrt();
        norms[r] = norm;
        row.iter_mut().for_each(|v| *v *= target / norm);
    }
    let symbols = Tensor::from_op(x.shape().to_vec(), out, "power_normalize", vec![x.clone()], move |g, p| {
        let xd = p[0].data();
        let mut gx = vec![0.0; g.len()];
        for r in 0..n {
            let norm = norms[r];
            let range = r * b..(r + 1) * b;
            if norm == 0.0 {
                // passthrough rows
                gx[range.clone()].copy_from_slice(&g[range]);
                continue;
            }
            let (gr, xr) = (&g[range.clone()], &xd[range.clone()]);
            let dot: f64 = gr.iter().zip(xr).map(|(a, c)| a * c).sum();
            let k = target / norm;
            let k3 = target * dot / (norm * norm * norm);
            for (o, (gv, xv)) in gx[range].iter_mut().zip(gr.iter().zip(xr)) {
                *o = k * gv - k3 * xv;
            }
        }
        drop(xd);
        p[0].accumulate_grad(&gx);
    });
    Ok(Normalized { symbols, zero_rows })
}

/// Anything that maps transmitted symbols to received symbols.
pub trait Channel {
    fn transmit(&self, x: &Tensor) -> Result<Tensor>;
}

/// Additive white Gaussian noise at a fixed SNR. `snr_db = +inf` is noiseless.
#[derive(Debug)]
pub struct AwgnChannel {
    snr_db: f64,
    power: f64,
    rng: RefCell<Rng>,
}

impl AwgnChannel {
    pub fn new(snr_db: f64, seed: u64) -> Self {
        AwgnChannel {
            snr_db,
            power: POWER,
            rng: RefCell::new(Rng::new(seed)),
        }
    }

    pub fn noiseless() -> Self {
        AwgnChannel::new(f64::INFINITY, 0)
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn sigma2(&self) -> f64 {
        snr_to_sigma2(self.snr_db, self.power)
    }

    pub fn set_snr_db(&mut self, snr_db: f64) {
        self.snr_db = snr_db;
    }

    /// Restarts the noise stream.
    pub fn reseed(&self, seed: u64) {
        *self.rng.borrow_mut() = Rng::new(seed);
    }

    pub fn rng_state(&self) -> RngState {
        self.rng.borrow().state()
    }

    pub fn restore_rng(&self, state: RngState) {
        *self.rng.borrow_mut() = Rng::from_state(state);
    }

    /// Draws a noise realization of the given shape.
    pub fn sample_noise(&self, shape: &[usize]) -> Result<Tensor> {
        let std = self.sigma2().sqrt();
        let n: usize = shape.iter().product();
        let mut rng = self.rng.borrow_mut();
        Tensor::from_vec(shape, (0..n).map(|_| std * rng.normal()).collect())
    }
}

impl Channel for AwgnChannel {
    /// `y = x + z`; `z` is a constant for differentiation.
    fn transmit(&self, x: &Tensor) -> Result<Tensor> {
        if self.sigma2() == 0.0 {
            return Ok(x.clone());
        }
        let z = self.sample_noise(x.shape())?;
        x.add(&z)
    }
}

/// Transmission with a noise realization fixed in advance (gradient checks).
#[derive(Debug)]
pub struct FrozenNoise(pub Tensor);

impl Channel for FrozenNoise {
    fn transmit(&self, x: &Tensor) -> Result<Tensor> {
        x.add(&self.0)
    }
}

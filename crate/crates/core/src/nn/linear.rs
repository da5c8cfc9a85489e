use crate::error::{Error, Result};
use crate::tensor::{gemm, init, InitScheme, Rng, Tensor, Transpose};

/// Fully connected layer, `y = x W^T + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    /// (dout, din)
    pub weight: Tensor,
    /// (dout)
    pub bias: Tensor,
}

impl Linear {
    pub fn new(din: usize, dout: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Linear {
            weight: init(&[dout, din], InitScheme::KaimingNormal, rng)?,
            bias: init(&[dout], InitScheme::Constant(0.0), rng)?,
        })
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.ndim() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shapes("linear params", weight.shape(), bias.shape()));
        }
        Ok(Linear { weight, bias })
    }

    pub fn deep_clone(&self) -> Self {
        Linear {
            weight: self.weight.deep_copy(),
            bias: self.bias.deep_copy(),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear(x, &self.weight, &self.bias)
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || b.shape() != [ws[0]] {
        return Err(Error::dim("linear", format!("x {xs:?}, W {ws:?}, b {:?}", b.shape())));
    }
    let (n, din, dout) = (xs[0], xs[1], ws[0]);
    let mut out = vec![0.0; n * dout];
    {
        let bd = b.data();
        out.chunks_mut(dout).for_each(|row| row.copy_from_slice(&bd));
        gemm(n, din, dout, 1.0, &x.data(), Transpose::No, &w.data(), Transpose::Yes, 1.0, &mut out);
    }
    Ok(Tensor::from_op(
        vec![n, dout],
        out,
        "linear",
        vec![x.clone(), w.clone(), b.clone()],
        move |g, p| {
            if p[0].requires_grad() {
                let mut gx = vec![0.0; n * din];
                gemm(n, dout, din, 1.0, g, Transpose::No, &p[1].data(), Transpose::No, 0.0, &mut gx);
                p[0].accumulate_grad(&gx);
            }
            if p[1].requires_grad() {
                let mut gw = vec![0.0; dout * din];
                gemm(dout, n, din, 1.0, g, Transpose::Yes, &p[0].data(), Transpose::No, 0.0, &mut gw);
                p[1].accumulate_grad(&gw);
            }
            if p[2].requires_grad() {
                let mut gb = vec![0.0; dout];
                for row in g.chunks(dout) {
                    gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                p[2].accumulate_grad(&gb);
            }
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    #[test]
    fn identity_weights() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(linear(&x, &w, &Tensor::zeros(&[2])).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn hand_value() {
        let y = linear(
            &Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap(),
            &Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap(),
            &Tensor::from_vec(&[1], vec![3.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(y.to_vec(), vec![6.0]);
    }

    #[test]
    fn head_shape() {
        let l = Linear::new(512, 100, &mut Rng::new(0)).unwrap();
        assert_eq!(l.forward(&Tensor::ones(&[3, 512])).unwrap().shape(), &[3, 100]);
        assert!(l.forward(&Tensor::ones(&[3, 511])).is_err());
    }

    #[test]
    fn gradient_checks() {
        let mut rng = Rng::new(3);
        let l = Linear::new(4, 3, &mut rng).unwrap();
        let x = init(&[5, 4], InitScheme::Normal { mean: 0.0, std: 1.0 }, &mut rng).unwrap();
        let f = |x: &Tensor| Ok(l.forward(x)?.square().sum());
        assert!(grad_check(f, &x, 1e-5).unwrap() < 1e-7);
        let xd = x.detach();
        let f = |_: &Tensor| Ok(l.forward(&xd)?.square().sum());
        assert!(grad_check(f, &l.weight, 1e-5).unwrap() < 1e-7);
        assert!(grad_check(f, &l.bias, 1e-5).unwrap() < 1e-7);
    }
}

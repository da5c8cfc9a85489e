use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 2×2 max pooling with stride 2. The gradient goes to the first maximal
/// element of each window in row-major order.
pub fn maxpool2d(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dim("maxpool2d", format!("expected NCHW, got {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim("maxpool2d", format!("odd spatial dims {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * oh * ow];
    let mut arg = vec![0usize; out.len()];
    {
        let xd = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out[o] = xd[best];
                    arg[o] = best;
                }
            }
        }
    }
    let in_len = x.numel();
    Ok(Tensor::from_op(vec![n, c, oh, ow], out, "maxpool2d", vec![x.clone()], move |g, p| {
        let mut gx = vec![0.0; in_len];
        for (o, &i) in arg.iter().enumerate() {
            gx[i] += g[o];
        }
        p[0].accumulate_grad(&gx);
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, init, InitScheme, Rng};

    #[test]
    fn picks_max() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2d(&x).unwrap().to_vec(), vec![4.0]);
    }

    #[test]
    fn ties_route_to_first() {
        let x = Tensor::param(&[1, 1, 4, 4], vec![2.0; 16]).unwrap();
        let y = maxpool2d(&x).unwrap();
        assert_eq!(y.to_vec(), vec![2.0; 4]);
        y.sum().backward().unwrap();
        let g = x.grad();
        assert_eq!(g.iter().filter(|&&v| v == 1.0).count(), 4);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[2], 1.0);
        assert_eq!(g[8], 1.0);
        assert_eq!(g[10], 1.0);
    }

    #[test]
    fn five_pools_reach_one_by_one() {
        let mut t = Tensor::ones(&[1, 2, 32, 32]);
        for _ in 0..5 {
            t = maxpool2d(&t).unwrap();
        }
        assert_eq!(t.shape(), &[1, 2, 1, 1]);
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(maxpool2d(&Tensor::ones(&[1, 1, 3, 4])).is_err());
    }

    #[test]
    fn gradient_check() {
        let x = init(&[2, 2, 4, 6], InitScheme::Normal { mean: 0.0, std: 1.0 }, &mut Rng::new(4)).unwrap();
        let err = grad_check(|x| Ok(maxpool2d(x)?.square().sum()), &x, 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
    }
}

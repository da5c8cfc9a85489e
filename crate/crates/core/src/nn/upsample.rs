use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Nearest-neighbour 2× upsampling: each pixel becomes a 2×2 block.
pub fn upsample_nearest2x(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dim("upsample_nearest2x", format!("expected NCHW, got {s:?}")));
    }
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * oh * ow];
    {
        let xd = x.data();
        for p in 0..planes {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(p * oh + y) * ow + xx] = xd[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
    }
    let in_len = x.numel();
    Ok(Tensor::from_op(
        vec![s[0], s[1], oh, ow],
        out,
        "upsample_nearest2x",
        vec![x.clone()],
        move |g, p| {
            let mut gx = vec![0.0; in_len];
            for pl in 0..planes {
                for y in 0..oh {
                    for xx in 0..ow {
                        gx[(pl * h + y / 2) * w + xx / 2] += g[(pl * oh + y) * ow + xx];
                    }
                }
            }
            p[0].accumulate_grad(&gx);
        },
    ))
}

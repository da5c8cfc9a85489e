use crate::error::{Error, Result};
use crate::tensor::{gemm, init, InitScheme, Rng, Tensor, Transpose};

/// 2-D cross-correlation layer with square kernel, stride and zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    /// (out_ch, in_ch, k, k)
    pub weight: Tensor,
    /// (out_ch)
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Kaiming-normal weights, zero bias.
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "conv needs positive sizes, got in={in_ch} out={out_ch} k={kernel} s={stride}"
            )));
        }
        Ok(Conv2d {
            weight: init(&[out_ch, in_ch, kernel, kernel], InitScheme::KaimingNormal, rng)?,
            bias: init(&[out_ch], InitScheme::Constant(0.0), rng)?,
            stride,
            padding,
        })
    }

    pub fn from_params(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 4 || ws[2] != ws[3] || bias.shape() != [ws[0]] {
            return Err(Error::shapes("conv2d params", ws, bias.shape()));
        }
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// Copy with independent storage.
    pub fn deep_clone(&self) -> Self {
        Conv2d {
            weight: self.weight.deep_copy(),
            bias: self.bias.deep_copy(),
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            conv_output_size(h, k, self.stride, self.padding),
            conv_output_size(w, k, self.stride, self.padding),
        )
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, &self.bias, self.stride, self.padding)
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding).saturating_sub(kernel) / stride + 1
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn src(&self, oy: usize, ox: usize, i: usize, j: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + i).checked_sub(self.pad)?;
        let x = (ox * self.stride + j).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then_some((y, x))
    }

    fn im2col(&self, img: &[f64], col: &mut [f64]) {
        let cols = self.cols();
        for c in 0..self.c {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.k {
                for j in 0..self.k {
                    let row = ((c * self.k + i) * self.k + j) * cols;
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            col[row + oy * self.ow + ox] = match self.src(oy, ox, i, j) {
                                Some((y, x)) => plane[y * self.w + x],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], img: &mut [f64]) {
        let cols = self.cols();
        for c in 0..self.c {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.k {
                for j in 0..self.k {
                    let row = ((c * self.k + i) * self.k + j) * cols;
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some((y, x)) = self.src(oy, ox, i, j) {
                                plane[y * self.w + x] += col[row + oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of an NCHW input with (out, in, k, k) weights plus bias.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::shapes("conv2d", xs, ws));
    }
    if xs[1] != ws[1] {
        return Err(Error::dim(
            "conv2d",
            format!("input has {} channels, weights expect {} ({xs:?} vs {ws:?})", xs[1], ws[1]),
        ));
    }
    if bias.shape() != [ws[0]] {
        return Err(Error::shapes("conv2d bias", bias.shape(), &ws[..1]));
    }
    if stride == 0 || xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
        return Err(Error::dim("conv2d", format!("kernel {ws:?} does not fit input {xs:?} with pad {pad}")));
    }
    let (n, cout) = (xs[0], ws[0]);
    let g = Geometry {
        c: xs[1],
        h: xs[2],
        w: xs[3],
        k: ws[2],
        stride,
        pad,
        oh: conv_output_size(xs[2], ws[2], stride, pad),
        ow: conv_output_size(xs[3], ws[3], stride, pad),
    };
    let (rows, cols) = (g.rows(), g.cols());
    let in_len = g.c * g.h * g.w;
    let out_len = cout * cols;

    let mut out = vec![0.0; n * out_len];
    {
        let xd = x.data();
        let wd = weight.data();
        let bd = bias.data();
        let mut col = vec![0.0; rows * cols];
        for s in 0..n {
            g.im2col(&xd[s * in_len..(s + 1) * in_len], &mut col);
            let o = &mut out[s * out_len..(s + 1) * out_len];
            for (co, chunk) in o.chunks_mut(cols).enumerate() {
                chunk.fill(bd[co]);
            }
            gemm(cout, rows, cols, 1.0, &wd, Transpose::No, &col, Transpose::No, 1.0, o);
        }
    }

    Ok(Tensor::from_op(
        vec![n, cout, g.oh, g.ow],
        out,
        "conv2d",
        vec![x.clone(), weight.clone(), bias.clone()],
        move |grad, p| {
            let (xp, wp, bp) = (&p[0], &p[1], &p[2]);
            if bp.requires_grad() {
                let mut gb = vec![0.0; cout];
                for s in 0..n {
                    for (co, chunk) in grad[s * out_len..(s + 1) * out_len].chunks(cols).enumerate() {
                        gb[co] += chunk.iter().sum::<f64>();
                    }
                }
                bp.accumulate_grad(&gb);
            }
            let need_w = wp.requires_grad();
            let need_x = xp.requires_grad();
            if !need_w && !need_x {
                return;
            }
            let mut gw = vec![0.0; if need_w { cout * rows } else { 0 }];
            let mut gx = vec![0.0; if need_x { n * in_len } else { 0 }];
            let mut col = vec![0.0; rows * cols];
            {
                let xd = xp.data();
                let wd = wp.data();
                for s in 0..n {
                    let go = &grad[s * out_len..(s + 1) * out_len];
                    if need_w {
                        g.im2col(&xd[s * in_len..(s + 1) * in_len], &mut col);
                        gemm(cout, cols, rows, 1.0, go, Transpose::No, &col, Transpose::Yes, 1.0, &mut gw);
                    }
                    if need_x {
                        gemm(rows, cout, cols, 1.0, &wd, Transpose::Yes, go, Transpose::No, 0.0, &mut col);
                        g.col2im(&col, &mut gx[s * in_len..(s + 1) * in_len]);
                    }
                }
            }
            if need_w {
                wp.accumulate_grad(&gw);
            }
            if need_x {
                xp.accumulate_grad(&gx);
            }
        },
    ))
}

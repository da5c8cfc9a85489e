//! Elementwise arithmetic, axis reductions and reshapes.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// How the two operands line up: same shape, or one side is a single value.
#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
}

impl Tensor {
    pub fn elementwise(&self, op: BinaryOp, other: &Tensor) -> Result<Tensor> {
        let bc = if self.shape() == other.shape() {
            Broadcast::Same
        } else if other.numel() == 1 {
            Broadcast::RhsScalar
        } else if self.numel() == 1 {
            Broadcast::LhsScalar
        } else {
            return Err(Error::shapes(op.name(), self.shape(), other.shape()));
        };
        let out_shape = match bc {
            Broadcast::LhsScalar => other.shape().to_vec(),
            _ => self.shape().to_vec(),
        };
        let (a, b) = (self.data(), other.data());
        let n = out_shape.iter().product::<usize>();
        let at = |i: usize| match bc {
            Broadcast::LhsScalar => a[0],
            _ => a[i],
        };
        let bt = |i: usize| match bc {
            Broadcast::RhsScalar => b[0],
            _ => b[i],
        };
        let out: Vec<f64> = (0..n).map(|i| op.apply(at(i), bt(i))).collect();
        drop((a, b));

        Ok(Tensor::from_op(
            out_shape,
            out,
            op.name(),
            vec![self.clone(), other.clone()],
            move |g, p| {
                let (a, b) = (p[0].data(), p[1].data());
                let at = |i: usize| match bc {
                    Broadcast::LhsScalar => a[0],
                    _ => a[i],
                };
                let bt = |i: usize| match bc {
                    Broadcast::RhsScalar => b[0],
                    _ => b[i],
                };
                let (mut ga, mut gb) = (vec![0.0; g.len()], vec![0.0; g.len()]);
                for i in 0..g.len() {
                    let (da, db) = op.partials(at(i), bt(i));
                    ga[i] = g[i] * da;
                    gb[i] = g[i] * db;
                }
                drop((a, b));
                let fold = |v: Vec<f64>, scalar: bool| {
                    if scalar {
                        vec![v.iter().sum()]
                    } else {
                        v
                    }
                };
                p[0].accumulate_grad(&fold(ga, matches!(bc, Broadcast::LhsScalar)));
                p[1].accumulate_grad(&fold(gb, matches!(bc, Broadcast::RhsScalar)));
            },
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Mul, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Div, other)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary("add_scalar", |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.unary("mul_scalar", |x| x * c, move |_, _| c)
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    /// Subgradient 0 at the kink.
    pub fn abs(&self) -> Tensor {
        self.unary("abs", f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Pointwise map with derivative `d(x, y)` given input and output value.
    fn unary(
        &self,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        d: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let saved = if self.requires_grad() { out.clone() } else { Vec::new() };
        Tensor::from_op(self.shape().to_vec(), out, name, vec![self.clone()], move |g, p| {
            let x = p[0].data();
            let gx: Vec<f64> = g
                .iter()
                .zip(x.iter().zip(&saved))
                .map(|(g, (&x, &y))| g * d(x, y))
                .collect();
            drop(x);
            p[0].accumulate_grad(&gx);
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() || shape.contains(&0) {
            return Err(Error::shapes("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            "reshape",
            vec![self.clone()],
            |g, p| p[0].accumulate_grad(g),
        ))
    }

    /// Reduce over `axes`, dropping them from the shape. Reducing every axis
    /// yields shape `[1]`. Max routes its gradient to the first maximal entry.
    pub fn reduce(&self, op: ReduceOp, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        let nd = shape.len();
        let mut reduced = vec![false; nd];
        for &ax in axes {
            if ax >= nd {
                return Err(Error::dim(
                    "reduce",
                    format!("axis {ax} out of range for shape {shape:?}"),
                ));
            }
            reduced[ax] = true;
        }
        let mut out_shape: Vec<usize> = (0..nd).filter(|&d| !reduced[d]).map(|d| shape[d]).collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out_n: usize = out_shape.iter().product();
        let group = self.numel() / out_n;

        // Map each input offset to its output offset.
        let mut map = vec![0usize; self.numel()];
        let mut idx = vec![0usize; nd];
        for m in map.iter_mut() {
            let mut o = 0;
            for d in 0..nd {
                if !reduced[d] {
                    o = o * shape[d] + idx[d];
                }
            }
            *m = o;
            for d in (0..nd).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }

        let x = self.data();
        let mut out = match op {
            ReduceOp::Max => vec![f64::NEG_INFINITY; out_n],
            _ => vec![0.0; out_n],
        };
        let mut arg = vec![usize::MAX; out_n];
        for (i, (&v, &o)) in x.iter().zip(&map).enumerate() {
            match op {
                ReduceOp::Sum | ReduceOp::Mean => out[o] += v,
                ReduceOp::Max => {
                    if v > out[o] || arg[o] == usize::MAX {
                        out[o] = v;
                        arg[o] = i;
                    }
                }
            }
        }
        drop(x);
        if op == ReduceOp::Mean {
            out.iter_mut().for_each(|v| *v /= group as f64);
        }

        Ok(Tensor::from_op(out_shape, out, op.name(), vec![self.clone()], move |g, p| {
            let mut gx = vec![0.0; map.len()];
            match op {
                ReduceOp::Sum => map.iter().zip(gx.iter_mut()).for_each(|(&o, gi)| *gi = g[o]),
                ReduceOp::Mean => {
                    let s = 1.0 / group as f64;
                    map.iter().zip(gx.iter_mut()).for_each(|(&o, gi)| *gi = g[o] * s)
                }
                ReduceOp::Max => {
                    for (o, &i) in arg.iter().enumerate() {
                        gx[i] += g[o];
                    }
                }
            }
            p[0].accumulate_grad(&gx);
        }))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor {
        self.reduce_all(ReduceOp::Sum)
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&self) -> Tensor {
        self.reduce_all(ReduceOp::Mean)
    }

    fn reduce_all(&self, op: ReduceOp) -> Tensor {
        let axes: Vec<usize> = (0..self.ndim()).collect();
        self.reduce(op, &axes).expect("all axes are valid")
    }
}

impl BinaryOp {
    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }

    fn partials(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            BinaryOp::Add => (1.0, 1.0),
            BinaryOp::Sub => (1.0, -1.0),
            BinaryOp::Mul => (b, a),
            BinaryOp::Div => (1.0 / b, -a / (b * b)),
        }
    }
}

impl ReduceOp {
    fn name(self) -> &'static str {
        match self {
            ReduceOp::Sum => "sum",
            ReduceOp::Mean => "mean",
            ReduceOp::Max => "max",
        }
    }
}

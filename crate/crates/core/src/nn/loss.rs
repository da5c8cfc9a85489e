use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of an (N, K) array with max subtraction.
pub fn softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, o) in logits.chunks(k).zip(out.chunks_mut(k)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (oi, &v) in o.iter_mut().zip(row) {
            *oi = (v - max).exp();
            z += *oi;
        }
        o.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::dim(
            "cross_entropy",
            format!("logits {s:?} vs {} labels", labels.len()),
        ));
    }
    let (n, k) = (s[0], s[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Input(format!("label {bad} outside [0, {k})")));
    }
    let probs = {
        let ld = logits.data();
        softmax_rows(&ld, k)
    };
    let mut loss = 0.0;
    {
        let ld = logits.data();
        for (i, &l) in labels.iter().enumerate() {
            let row = &ld[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[l];
        }
    }
    loss /= n as f64;
    let labels = labels.to_vec();
    Ok(Tensor::from_op(vec![1], vec![loss], "cross_entropy", vec![logits.clone()], move |g, p| {
        let scale = g[0] / n as f64;
        let mut gl = probs.clone();
        for (i, &l) in labels.iter().enumerate() {
            gl[i * k + l] -= 1.0;
        }
        gl.iter_mut().for_each(|v| *v *= scale);
        p[0].accumulate_grad(&gl);
    }))
}

/// Mean absolute difference. The subgradient at `a == b` is 0.
pub fn l1_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shapes("l1_loss", a.shape(), b.shape()));
    }
    let n = a.numel() as f64;
    let diff: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
    let loss = diff.iter().map(|d| d.abs()).sum::<f64>() / n;
    Ok(Tensor::from_op(vec![1], vec![loss], "l1_loss", vec![a.clone(), b.clone()], move |g, p| {
        let ga: Vec<f64> = diff
            .iter()
            .map(|&d| {
                let s = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                g[0] * s / n
            })
            .collect();
        if p[1].requires_grad() {
            let gb: Vec<f64> = ga.iter().map(|v| -v).collect();
            p[1].accumulate_grad(&gb);
        }
        p[0].accumulate_grad(&ga);
    }))
}

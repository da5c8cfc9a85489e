use super::{Rng, Tensor};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// N(0, 2 / fan_in); fan_in is the product of all but the first dimension.
    KaimingNormal,
    Normal { mean: f64, std: f64 },
    Constant(f64),
}

/// Learnable tensor drawn from `scheme`.
pub fn init(shape: &[usize], scheme: InitScheme, rng: &mut Rng) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data = match scheme {
        InitScheme::Constant(c) => vec![c; n],
        InitScheme::Normal { mean, std } => (0..n).map(|_| mean + std * rng.normal()).collect(),
        InitScheme::KaimingNormal => {
            let fan_in: usize = shape.iter().skip(1).product::<usize>().max(1);
            let std = (2.0 / fan_in as f64).sqrt();
            (0..n).map(|_| std * rng.normal()).collect()
        }
    };
    Tensor::param(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_zero() {
        let t = init(&[2, 2], InitScheme::Constant(0.0), &mut Rng::new(0)).unwrap();
        assert_eq!(t.to_vec(), vec![0.0; 4]);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = init(&[4, 3, 3, 3], InitScheme::KaimingNormal, &mut Rng::new(9)).unwrap();
        let b = init(&[4, 3, 3, 3], InitScheme::KaimingNormal, &mut Rng::new(9)).unwrap();
        let bits = |t: &Tensor| t.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn kaiming_std() {
        // fan_in = 200 -> std = 0.1
        let t = init(&[500, 200], InitScheme::KaimingNormal, &mut Rng::new(1)).unwrap();
        let v = t.to_vec();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!((var.sqrt() - 0.1).abs() < 0.002, "{}", var.sqrt());
    }
}

//! Initialization, gradient clipping and the Adam update.

use crate::error::{Error, Result};
use crate::graph::ParamStore;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Glorot-uniform draw for a `fan_out x fan_in` matrix: `U(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<T: Scalar>(shape: &[usize], rng: &mut Rng) -> Result<Tensor<T>> {
    let [rows, cols] = shape else {
        return Err(Error::Contract(format!(
            "xavier init needs a 2-D shape, got {shape:?}"
        )));
    };
    let bound = xavier_bound(*rows, *cols);
    let data = (0..rows * cols)
        .map(|_| T::lit(rng.uniform_in(-bound, bound)))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Initializes every matrix in the store with Xavier draws and every vector with zeros.
pub fn init_params<T: Scalar>(store: &mut ParamStore<T>, rng: &mut Rng) -> Result<()> {
    for t in store.tensors_mut() {
        let shape = t.shape().to_vec();
        *t = if shape.len() == 2 {
            xavier_init(&shape, rng)?
        } else {
            Tensor::zeros(&shape)
        };
    }
    Ok(())
}

/// L2 norm over all gradient tensors jointly.
pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> T {
    grads.iter().map(Tensor::sq_norm).sum::<T>().sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: T) -> Result<T> {
    if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient in tensor {i}")));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    /// Coupled L2 coefficient, added to the gradient as `l2 * param`.
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, l2: f64) -> Self {
        AdamConfig {
            lr,
            l2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, shaped like the parameters.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = store.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} moments",
            store.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in store.tensors().iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Dimension(format!(
                "adam: param {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.t += 1;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let l2 = T::lit(cfg.l2);
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    let c1 = one - b1.powi(state.t as i32);
    let c2 = one - b2.powi(state.t as i32);

    for ((p, g), (m, v)) in store
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            let grad = gv + l2 * *pv;
            *mv = b1 * *mv + (one - b1) * grad;
            *vv = b2 * *vv + (one - b2) * grad * grad;
            let mhat = *mv / c1;
            let vhat = *vv / c2;
            *pv -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_bound_and_moments() {
        let mut rng = Rng::new(3);
        let t: Tensor<f64> = xavier_init(&[640, 512], &mut rng).unwrap();
        let a = xavier_bound(640, 512);
        assert!(t.data().iter().all(|v| v.abs() <= a));
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let target: f64 = 2.0 / (640.0 + 512.0);
        assert!(mean.abs() < 3.0 * target.sqrt() / n.sqrt());
        assert!((var - target).abs() < 0.1 * target);
        assert!(matches!(xavier_init::<f64>(&[3], &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn clip_examples() {
        let mut g = vec![Tensor::vector(&[0.3, 0.4])];
        clip_global_norm(&mut g, 1.0).unwrap();
        assert_eq!(g[0].data(), &[0.3, 0.4]);
        let mut g = vec![Tensor::<f64>::vector(&[3.0, 4.0])];
        let n = clip_global_norm(&mut g, 1.0).unwrap();
        assert_eq!(n, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[0].data()[1] - 0.8).abs() < 1e-15);
        let mut g = vec![Tensor::<f64>::zeros(&[3])];
        clip_global_norm(&mut g, 1.0).unwrap();
        assert_eq!(g[0].data(), &[0.0; 3]);
        let mut g = vec![Tensor::vector(&[f64::NAN])];
        assert!(matches!(clip_global_norm(&mut g, 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn adam_examples() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(0.0));
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[Tensor::scalar(0.0)], &mut st, &AdamConfig::new(5e-4, 0.0)).unwrap();
        assert_eq!(s.tensors()[0].item().unwrap(), 0.0);

        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[Tensor::scalar(1.0)], &mut st, &AdamConfig::new(5e-4, 0.0)).unwrap();
        let w: f64 = s.tensors()[0].item().unwrap();
        assert!((w + 5e-4 / (1.0 + 1e-8)).abs() < 1e-15);

        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(1.0));
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[Tensor::scalar(0.0)], &mut st, &AdamConfig::new(5e-4, 1e-5)).unwrap();
        assert!(s.tensors()[0].item().unwrap() < 1.0);

        assert!(adam_step(&mut s, &[Tensor::zeros(&[2])], &mut st, &AdamConfig::new(1e-3, 0.0)).is_err());
    }
}

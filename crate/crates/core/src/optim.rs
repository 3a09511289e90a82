//! Adam and the learning-rate schedules used by the two training recipes.

use alloc::vec::Vec;

use crate::nn::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update; parameters without a gradient are left untouched.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) {
        self.step += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let c1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        let step_size = T::of(lr * libm::sqrt(c2) / c1);
        let eps = T::of(self.eps * libm::sqrt(c2));
        for id in params.ids() {
            let Some(g) = grads.get(id.index()).and_then(Option::as_ref) else {
                continue;
            };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = params.get_mut(id);
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                *pv -= step_size * *mv / (vv.sqrt() + eps);
            }
        }
    }
}

/// Per-epoch learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    /// Straight line from `start` at epoch 0 to `end` at epoch `epochs - 1`.
    Linear { start: f64, end: f64, epochs: usize },
    /// `start` for the first `hold` epochs, then multiplied by `rate` each epoch.
    HoldThenDecay { start: f64, hold: usize, rate: f64 },
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Linear { start, end, epochs } => {
                if epochs <= 1 {
                    return start;
                }
                let f = (epoch.min(epochs - 1)) as f64 / (epochs - 1) as f64;
                start + (end - start) * f
            }
            LrSchedule::HoldThenDecay { start, hold, rate } => {
                if epoch < hold {
                    start
                } else {
                    start * libm::pow(rate, (epoch + 1 - hold) as f64)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trimap_schedule_endpoints() {
        let s = LrSchedule::Linear { start: 1e-3, end: 1e-4, epochs: 75 };
        assert_eq!(s.at(0), 1e-3);
        assert!((s.at(74) - 1e-4).abs() < 1e-15);
        assert!(s.at(30) < s.at(29));
    }

    #[test]
    fn matting_schedule_holds_then_decays() {
        let s = LrSchedule::HoldThenDecay { start: 5e-5, hold: 20, rate: 0.98 };
        assert_eq!(s.at(0), 5e-5);
        assert_eq!(s.at(19), 5e-5);
        assert!((s.at(20) - 5e-5 * 0.98).abs() < 1e-18);
        assert!((s.at(21) - 5e-5 * 0.98 * 0.98).abs() < 1e-18);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Tensor::from_vec(&[2], alloc::vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(&store);
        for _ in 0..2000 {
            let g = store.get(id).map(|x| 2.0 * x);
            opt.update(&mut store, &[Some(g)], 0.05);
        }
        assert!(store.get(id).data().iter().all(|x| x.abs() < 1e-3));
    }
}

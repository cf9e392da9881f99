use std::collections::BTreeMap;

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// Plain gradient descent: `param -= lr * grad` for every supplied gradient.
pub fn sgd_step(params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
    check_lr(lr)?;
    for (name, g) in grads {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter '{name}'")))?;
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * d;
        }
    }
    Ok(())
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    Ok(())
}

/// Gradient descent with optional heavy-ball momentum. With `momentum == 0`
/// this is exactly [`sgd_step`].
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_step(params, grads, self.lr);
        }
        check_lr(self.lr)?;
        let mut effective = Gradients::new();
        for (name, g) in grads {
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.numel()]);
            if v.len() != g.numel() {
                return Err(Error::invalid(format!("momentum buffer for '{name}' changed size")));
            }
            for (vi, gi) in v.iter_mut().zip(g.data()) {
                *vi = self.momentum * *vi + gi;
            }
            let mut t = g.clone();
            t.data_mut().copy_from_slice(v);
            effective.insert(name.clone(), t);
        }
        sgd_step(params, &effective, self.lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn one(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(vec![v]));
        p
    }

    fn grad(v: f64) -> Gradients {
        Gradients::from([("w".to_string(), Tensor::vector(vec![v]))])
    }

    #[test]
    fn descends_by_lr_times_grad() {
        let mut p = one(1.0);
        sgd_step(&mut p, &grad(0.5), 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.95]);
    }

    #[test]
    fn zero_grad_or_zero_lr_is_a_no_op() {
        let mut p = one(1.0);
        sgd_step(&mut p, &grad(0.0), 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.0]);
        sgd_step(&mut p, &grad(3.0), 0.0).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = one(1.0);
        let g = Gradients::from([("w".to_string(), Tensor::vector(vec![1.0, 2.0]))]);
        assert!(matches!(sgd_step(&mut p, &g, 0.1), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = one(0.0);
        let mut opt = Sgd::new(1.0, 0.5);
        opt.step(&mut p, &grad(1.0)).unwrap();
        opt.step(&mut p, &grad(1.0)).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[-2.5]);
    }
}

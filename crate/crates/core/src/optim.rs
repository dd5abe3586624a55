use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent with a fixed step.
    #[default]
    Sgd,
    Adam,
}

/// Optimizer state for a fixed list of parameter arrays.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&s| Array2::zeros(s)).collect::<Vec<_>>();
        Self {
            kind,
            lr,
            step: 0,
            first: if kind == OptimizerKind::Adam { zeros() } else { Vec::new() },
            second: if kind == OptimizerKind::Adam { zeros() } else { Vec::new() },
        }
    }

    /// Applies one descent step; `params[i]` pairs with `grads[i]`.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) {
        debug_assert_eq!(params.len(), grads.len());
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.scaled_add(-lr, g);
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - BETA1.powi(self.step);
                let c2 = 1.0 - BETA2.powi(self.step);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    Zip::from(&mut **p)
                        .and(&mut self.first[i])
                        .and(&mut self.second[i])
                        .and(g)
                        .for_each(|p, m, v, &g| {
                            *m = BETA1 * *m + (1.0 - BETA1) * g;
                            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                        });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_rate_leaves_params_bitwise() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = array![[0.1, -2.5], [3.0, 1e-9]];
            let before = p.clone();
            let mut opt = Optimizer::new(kind, 0.0, &[(2, 2)]);
            for _ in 0..5 {
                opt.step(&mut [&mut p], &[array![[1.0, -3.0], [0.5, 2.0]]]);
            }
            assert_eq!(p, before);
        }
    }

    #[test]
    fn descends_a_quadratic() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = array![[3.0, -2.0]];
            let mut opt = Optimizer::new(kind, 0.1, &[(1, 2)]);
            for _ in 0..200 {
                let g = p.mapv(|x| 2.0 * x);
                opt.step(&mut [&mut p], &[g]);
            }
            assert!(p.iter().all(|x| x.abs() < 1e-2), "{kind:?}: {p}");
        }
    }
}

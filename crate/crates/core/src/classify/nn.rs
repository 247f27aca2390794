//! One-hidden-layer perceptron: ReLU hidden units, sigmoid output, binary
//! cross-entropy, per-sample gradient descent.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::FEATURE_DIM;

type Row = [f64; FEATURE_DIM];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Hidden weights, one row of `FEATURE_DIM` inputs per unit.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    fn hidden(&self, x: &Row) -> Vec<f64> {
        self.w1
            .iter()
            .zip(&self.b1)
            .map(|(w, b)| (w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b).max(0.0))
            .collect()
    }

    pub fn output(&self, x: &Row) -> f64 {
        let h = self.hidden(x);
        sigmoid(h.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>() + self.b2)
    }
}

pub(crate) fn train(x: &[Row], positive: &[bool], hidden: usize, lr: f64, epochs: usize, init: f64, seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng| init * (2.0 * rng.random::<f64>() - 1.0);
    let w1 = (0..hidden)
        .map(|_| (0..FEATURE_DIM).map(|_| uniform(&mut rng)).collect())
        .collect();
    let w2 = (0..hidden).map(|_| uniform(&mut rng)).collect();
    let mut m = Mlp {
        w1,
        b1: vec![0.0; hidden],
        w2,
        b2: 0.0,
    };
    let mut order: Vec<usize> = (0..x.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let h = m.hidden(&x[i]);
            let p = sigmoid(h.iter().zip(&m.w2).map(|(a, w)| a * w).sum::<f64>() + m.b2);
            let t = if positive[i] { 1.0 } else { 0.0 };
            // dL/dz of cross-entropy through the sigmoid.
            let dz = p - t;
            for u in 0..hidden {
                let dh = if h[u] > 0.0 { dz * m.w2[u] } else { 0.0 };
                m.w2[u] -= lr * dz * h[u];
                if dh != 0.0 {
                    for (w, v) in m.w1[u].iter_mut().zip(&x[i]) {
                        *w -= lr * dh * v;
                    }
                    m.b1[u] -= lr * dh;
                }
            }
            m.b2 -= lr * dz;
        }
    }
    m
}

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use sha2::{Digest, Sha256};

use super::{Mat, Tape, Var};
use crate::error::{Error, Result};

/// Named parameter matrices in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub values: Vec<Rc<Mat>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> usize {
        self.names.push(name.into());
        self.values.push(Rc::new(value));
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.index(name).map(|i| &*self.values[i])
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Tape handles for every parameter; `trainable = false` binds them as
    /// constants so no gradient flows into them.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| if trainable { tape.param(i, v.clone()) } else { tape.constant_rc(v.clone()) })
            .collect()
    }

    /// Rounds every value to the nearest f32 so checkpoints round-trip exactly.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            Rc::make_mut(v).mapv_inplace(|x| x as f32 as f64);
        }
    }

    /// Little-endian f32 blob in parameter order.
    pub fn to_f32_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.n_scalars() * 4);
        for v in &self.values {
            for x in v.iter() {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        out
    }

    /// SHA-256 over names, shapes and the exact f64 values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            h.update(n.as_bytes());
            h.update((v.nrows() as u64).to_le_bytes());
            h.update((v.ncols() as u64).to_le_bytes());
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// U(−a, a) with a = sqrt(6 / (fan_in + fan_out)); shape [fan_in × fan_out].
pub fn xavier_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Mat {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-a..a))
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Option<Mat>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| g.mapv_inplace(|x| x * s));
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
            v: store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Mat>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::numerical("gradient count does not match the parameter store"));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = Rc::make_mut(&mut store.values[i]);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derived_rng;

    #[test]
    fn xavier_bounds_and_variance() {
        let mut rng = derived_rng(1, &[0]);
        let w = xavier_uniform(&mut rng, 100, 60);
        let a = (6.0f64 / 160.0).sqrt();
        assert!(w.iter().all(|x| x.abs() < a));
        let var = w.mapv(|x| x * x).mean().unwrap();
        let target = 2.0 / 160.0;
        assert!(var > 0.8 * target && var < 1.2 * target, "{var} vs {target}");
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = vec![Some(Array2::from_elem((2, 2), 3.0)), None, Some(Array2::from_elem((1, 1), 4.0))];
        let n = clip_grad_norm(&mut g, 1.0);
        assert!((n - (36.0f64 + 16.0).sqrt()).abs() < 1e-12);
        let after: f64 = g.iter().flatten().map(|m| m.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = ParamStore::new();
        store.add("w", Array2::from_elem((1, 2), 5.0));
        let mut opt = Adam::new(&store, 0.1);
        for _ in 0..500 {
            let w = store.values[0].clone();
            let g = vec![Some(w.mapv(|x| 2.0 * (x - 1.0)))];
            opt.step(&mut store, &g).unwrap();
        }
        assert!(store.values[0].iter().all(|x| (x - 1.0).abs() < 1e-2));
    }

    #[test]
    fn checksum_sees_tiny_changes() {
        let mut s = ParamStore::new();
        s.add("a", Array2::from_elem((2, 2), 0.5));
        let c = s.checksum();
        Rc::make_mut(&mut s.values[0])[[0, 0]] += 1e-15;
        assert_ne!(c, s.checksum());
    }
}

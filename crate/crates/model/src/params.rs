//! Named parameter tensors and the Adam optimizer.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::tape::{cast, Scalar};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Array2<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: usize) -> &Array2<T> {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Array2<T> {
        &mut self.values[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| NamedTensor {
                name: n.clone(),
                shape: [v.nrows(), v.ncols()],
                data: v.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect(),
            })
            .collect()
    }

    /// Overwrites every parameter from `tensors`, which must match names and
    /// shapes exactly.
    pub fn load_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        if tensors.len() != self.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} tensors for {} parameters",
                tensors.len(),
                self.len()
            )));
        }
        for (i, t) in tensors.iter().enumerate() {
            let v = &mut self.values[i];
            if t.name != self.names[i] || t.shape != [v.nrows(), v.ncols()] || t.data.len() != v.len() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor `{}` {:?} does not match parameter `{}` {:?}",
                    t.name,
                    t.shape,
                    self.names[i],
                    v.shape()
                )));
            }
            for (dst, &src) in v.iter_mut().zip(&t.data) {
                *dst = cast(src as f64);
            }
        }
        Ok(())
    }

    /// Same parameters in another precision.
    pub fn convert<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.mapv(|x| cast::<U>(x.to_f64().unwrap())))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f32>,
}

/// Glorot-uniform `rows x cols` matrix.
pub fn xavier<T: Scalar>(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, rows, cols, a)
}

pub fn uniform<T: Scalar>(rng: &mut impl Rng, rows: usize, cols: usize, a: f64) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || cast(rng.gen_range(-a..=a)))
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, lr: f64) -> Self {
        let zeros = || (0..params.len()).map(|i| Array2::zeros(params.get(i).raw_dim())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update; each gradient is first clipped elementwise to `±clip`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<Array2<T>>], clip: f64) {
        self.step += 1;
        let (b1, b2): (T, T) = (cast(self.beta1), cast(self.beta2));
        let one = T::one();
        let c1: T = cast(1.0 - self.beta1.powi(self.step));
        let c2: T = cast(1.0 - self.beta2.powi(self.step));
        let lr: T = cast(self.lr);
        let eps: T = cast(self.eps);
        let clip: T = cast(clip);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.get_mut(i);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g.max(-clip).min(clip);
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            });
        }
    }
}

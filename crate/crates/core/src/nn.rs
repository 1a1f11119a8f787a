//! Parameter storage, convolution layers and the Adam optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::autograd::{Gradients, Graph, Var};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named `f32` arrays. Always stored in single precision; graphs cast on bind.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Shape>,
    values: Vec<Vec<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Shape, values: Vec<f32>) -> ParamId {
        assert_eq!(shape.numel(), values.len());
        self.names.push(name.into());
        self.shapes.push(shape);
        self.values.push(values);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> Shape {
        self.shapes[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[f32] {
        &self.values[id.0]
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// SHA-256 over names, shapes and little-endian values, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for id in self.ids() {
            h.update(self.names[id.0].as_bytes());
            h.update([0u8]);
            let s = self.shapes[id.0];
            for d in [s.n, s.c, s.h, s.w] {
                h.update((d as u64).to_le_bytes());
            }
            for v in &self.values[id.0] {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Places every parameter on the tape. Trainable params become gradient leaves.
    pub fn bind<T: Real>(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .ids()
            .map(|id| {
                let t = Tensor::from_f32(self.shapes[id.0], &self.values[id.0]);
                if trainable {
                    g.leaf(t)
                } else {
                    g.constant(t)
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Collects per-parameter gradients (zeros where a parameter did not participate).
    pub fn grads<T: Real>(&self, store: &ParamStore, grads: &mut Gradients<T>) -> Vec<Vec<f32>> {
        store
            .ids()
            .map(|id| match grads.take(self.vars[id.0]) {
                Some(g) => g.iter().map(|v| v.as_f64() as f32).collect(),
                None => vec![0.0; store.shape(id).numel()],
            })
            .collect()
    }
}

/// Square-kernel convolution with bias.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// He-normal weights, zero bias. `gain` scales the weight standard deviation.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (cin * k * k) as f64;
        let std = gain * (2.0 / fan_in).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let w: Vec<f32> = (0..cout * cin * k * k)
            .map(|_| normal.sample(rng) as f32)
            .collect();
        let weight = store.add(format!("{name}.weight"), Shape::new(cout, cin, k, k), w);
        let bias = store.add(format!("{name}.bias"), Shape::new(1, cout, 1, 1), vec![0.0; cout]);
        Self {
            weight,
            bias,
            stride,
            pad: k / 2,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        g.conv2d(x, p.var(self.weight), Some(p.var(self.bias)), self.stride, self.pad)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f32>> = store.ids().map(|id| vec![0.0; store.values(id).len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f32>]) {
        assert_eq!(grads.len(), store.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let lr = (self.lr * bc2.sqrt() / bc1) as f32;
        let eps = (self.eps * bc2.sqrt()) as f32;
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &g), m), v) in store
                .values_mut(id)
                .iter_mut()
                .zip(&grads[i])
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * *m / (v.sqrt() + eps);
            }
        }
    }
}

/// Deterministic generator for a `(seed, stream)` pair.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Standard-normal samples.
pub fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len)
        .map(|_| rng.sample::<f32, _>(rand_distr::StandardNormal))
        .collect()
}

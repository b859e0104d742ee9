//! Parameter containers and the two layer types every head and block uses.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Real, Result, Tensor};

/// Named access to the trainable tensors of a module, in a fixed order.
pub trait Parameterized<F: Real> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>);

    fn named_params(&self) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn params(&self) -> Vec<Tensor<F>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Copies values between two modules with identical parameter names and
/// shapes, converting the element type if needed.
pub fn copy_params<F: Real, G: Real>(src: &impl Parameterized<F>, dst: &impl Parameterized<G>) {
    let src = src.named_params();
    let dst = dst.named_params();
    assert_eq!(src.len(), dst.len(), "parameter lists differ in length");
    for ((sn, st), (dn, dt)) in src.iter().zip(&dst) {
        assert_eq!(sn, dn, "parameter order differs");
        assert_eq!(st.shape(), dt.shape(), "shape of {sn} differs");
        let values = st.data();
        dt.update(|d| d.iter_mut().zip(values.iter()).for_each(|(d, s)| *d = G::of(s.f64())));
    }
}

/// Parameter factory: truncated normal (sigma 0.02, cut at two sigma) for
/// weights, zeros for biases, ones for norm gains.
pub struct Init<'a> {
    rng: &'a mut ChaCha8Rng,
    trainable: bool,
}

impl<'a> Init<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng, trainable: bool) -> Self {
        Self { rng, trainable }
    }

    fn make<F: Real>(&self, data: Vec<F>, shape: &[usize]) -> Tensor<F> {
        let t = if self.trainable {
            Tensor::param(data, shape)
        } else {
            Tensor::from_vec(data, shape)
        };
        t.expect("parameter shapes are non-empty")
    }

    pub fn trunc_normal<F: Real>(&mut self, shape: &[usize], std: f64) -> Tensor<F> {
        let normal = Normal::new(0.0, std).unwrap();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let v: f64 = normal.sample(self.rng);
                if v.abs() <= 2.0 * std {
                    break F::of(v);
                }
            })
            .collect();
        self.make(data, shape)
    }

    pub fn weight<F: Real>(&mut self, shape: &[usize]) -> Tensor<F> {
        self.trunc_normal(shape, 0.02)
    }

    pub fn zeros<F: Real>(&mut self, shape: &[usize]) -> Tensor<F> {
        self.make(vec![F::zero(); shape.iter().product()], shape)
    }

    pub fn ones<F: Real>(&mut self, shape: &[usize]) -> Tensor<F> {
        self.make(vec![F::one(); shape.iter().product()], shape)
    }

    pub fn uniform_u64(&mut self) -> u64 {
        self.rng.random()
    }
}

/// `y = x W + b` with `W` stored as `[in, out]`.
pub struct Linear<F: Real> {
    pub weight: Tensor<F>,
    pub bias: Option<Tensor<F>>,
}

impl<F: Real> Linear<F> {
    pub fn new(init: &mut Init<'_>, inputs: usize, outputs: usize, bias: bool) -> Self {
        Self {
            weight: init.weight(&[inputs, outputs]),
            bias: bias.then(|| init.zeros(&[outputs])),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl<F: Real> Parameterized<F> for Linear<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
    }
}

pub struct LayerNorm<F: Real> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
}

impl<F: Real> LayerNorm<F> {
    pub const EPS: f64 = 1e-5;

    pub fn new(init: &mut Init<'_>, dim: usize) -> Self {
        Self {
            gamma: init.ones(&[dim]),
            beta: init.zeros(&[dim]),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        x.layer_norm(&self.gamma, &self.beta, Self::EPS)
    }
}

impl<F: Real> Parameterized<F> for LayerNorm<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
    }
}

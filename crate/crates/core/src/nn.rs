//! Parameters and small trainable layers shared across the model.

use crate::error::TensorError;
use crate::rng::SeedRng;
use crate::scalar::Scalar;
use crate::tensor::{conv3d, Tensor};

/// Named trainable tensor. Names are hierarchical paths ("blocks.0.m2f.proj.weight")
/// and unique within a model; `decay` marks weight-decay eligibility
/// (matrices and kernels yes, biases / norm gains / tokens no).
#[derive(Clone)]
pub struct Parameter<S: Scalar> {
    pub name: String,
    pub tensor: Tensor<S>,
    pub decay: bool,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(name: impl Into<String>, tensor: Tensor<S>, decay: bool) -> Self {
        Parameter {
            name: name.into(),
            tensor,
            decay,
        }
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }
}

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Normal(0, std^2).
    Normal(f64),
    /// Normal(0, sqrt(2 / fan_in)^2), the ReLU-family default.
    KaimingNormal { fan_in: usize },
    /// Normal(0, sqrt(1 / fan_in)^2), for linear/attention projections.
    XavierNormal { fan_in: usize },
    Zeros,
}

pub fn init_vec<S: Scalar>(n: usize, init: Init, rng: &mut SeedRng) -> Vec<S> {
    match init {
        Init::Zeros => vec![S::zero(); n],
        Init::Normal(std) => (0..n).map(|_| S::from_f64(rng.normal() * std)).collect(),
        Init::KaimingNormal { fan_in } => {
            let std = (2.0 / fan_in.max(1) as f64).sqrt();
            (0..n).map(|_| S::from_f64(rng.normal() * std)).collect()
        }
        Init::XavierNormal { fan_in } => {
            let std = (1.0 / fan_in.max(1) as f64).sqrt();
            (0..n).map(|_| S::from_f64(rng.normal() * std)).collect()
        }
    }
}

pub fn param<S: Scalar>(
    name: impl Into<String>,
    shape: Vec<usize>,
    init: Init,
    decay: bool,
    rng: &mut SeedRng,
) -> Parameter<S> {
    let n: usize = shape.iter().product();
    let data = init_vec(n, init, rng);
    Parameter::new(
        name,
        Tensor::with_grad(shape, data).expect("shape/data agree by construction"),
        decay,
    )
}

/// Fully connected layer: `y = x @ weight + bias`, weight shape (in, out).
pub struct Dense<S: Scalar> {
    pub weight: Parameter<S>,
    pub bias: Parameter<S>,
}

impl<S: Scalar> Dense<S> {
    pub fn new(path: &str, inp: usize, out: usize, init: Init, rng: &mut SeedRng) -> Self {
        Dense {
            weight: param(format!("{path}.weight"), vec![inp, out], init, true, rng),
            bias: param(format!("{path}.bias"), vec![out], Init::Zeros, false, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        x.matmul(&self.weight.tensor)?.add(&self.bias.tensor)
    }

    pub fn collect(&self, out: &mut Vec<Parameter<S>>) {
        out.push(self.weight.clone());
        out.push(self.bias.clone());
    }
}

/// Layer normalization over the trailing axis, with learned gain and bias.
pub struct LayerNorm<S: Scalar> {
    pub gain: Parameter<S>,
    pub bias: Parameter<S>,
    pub eps: S,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(path: &str, dim: usize) -> Self {
        LayerNorm {
            gain: Parameter::new(
                format!("{path}.gain"),
                Tensor::with_grad(vec![dim], vec![S::one(); dim]).expect("valid"),
                false,
            ),
            bias: Parameter::new(
                format!("{path}.bias"),
                Tensor::with_grad(vec![dim], vec![S::zero(); dim]).expect("valid"),
                false,
            ),
            eps: S::from_f64(1e-5),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        let last = x.rank() - 1;
        let mu = x.mean_axis(last, true)?;
        let centered = x.sub(&mu)?;
        let var = centered.mul(&centered)?.mean_axis(last, true)?;
        let inv_std = var.add_scalar(self.eps).rsqrt();
        centered
            .mul(&inv_std)?
            .mul(&self.gain.tensor)?
            .add(&self.bias.tensor)
    }

    pub fn collect(&self, out: &mut Vec<Parameter<S>>) {
        out.push(self.gain.clone());
        out.push(self.bias.clone());
    }
}

/// 3D convolution layer wrapping [`conv3d`].
pub struct Conv3d<S: Scalar> {
    pub weight: Parameter<S>,
    pub bias: Option<Parameter<S>>,
    pub stride: (usize, usize, usize),
    pub groups: usize,
}

impl<S: Scalar> Conv3d<S> {
    pub fn new(
        path: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: (usize, usize, usize),
        groups: usize,
        with_bias: bool,
        rng: &mut SeedRng,
    ) -> Self {
        let fan_in = (cin / groups) * kernel * kernel * kernel;
        let weight = param(
            format!("{path}.weight"),
            vec![cout, cin / groups, kernel, kernel, kernel],
            Init::KaimingNormal { fan_in },
            true,
            rng,
        );
        let bias = with_bias.then(|| {
            param(
                format!("{path}.bias"),
                vec![cout],
                Init::Zeros,
                false,
                rng,
            )
        });
        Conv3d {
            weight,
            bias,
            stride,
            groups,
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        conv3d(
            x,
            &self.weight.tensor,
            self.bias.as_ref().map(|b| &b.tensor),
            self.stride,
            self.groups,
        )
    }

    pub fn collect(&self, out: &mut Vec<Parameter<S>>) {
        out.push(self.weight.clone());
        if let Some(b) = &self.bias {
            out.push(b.clone());
        }
    }
}

//! Parameters and the layers built from them.
//!
//! Layers hold [`ParamId`]s into a [`ParamStore`]; their forward passes take
//! a [`Graph`] and are generic over the element type.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::kernels::ConvGeometry;
use crate::rng::normal;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(Tensor::cast).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// He normal, fan-in.
    VarianceScaling,
    /// Glorot uniform.
    Xavier,
    Zeros,
}

fn init_tensor<T: Real, R: Rng + ?Sized>(shape: &[usize], init: Init, rng: &mut R) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product();
    let fan_out = shape[0] * shape[2..].iter().product::<usize>();
    let n: usize = shape.iter().product();
    let data = match init {
        Init::Zeros => alloc::vec![T::zero(); n],
        Init::VarianceScaling => {
            let std = libm::sqrt(2.0 / fan_in as f64);
            (0..n).map(|_| T::of(normal(rng) * std)).collect()
        }
        Init::Xavier => {
            let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            (0..n).map(|_| T::of(rng.gen_range(-a..a))).collect()
        }
    };
    Tensor::from_vec(shape, data).expect("init shape")
}

/// Convolution layer with optional bias (bias is zero-initialised).
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
}

pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub bias: bool,
    pub init: Init,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, k: usize) -> Self {
        Self { in_channels, out_channels, kernel: (k, k), stride: 1, bias: true, init: Init::VarianceScaling }
    }

    pub fn rect(mut self, kh: usize, kw: usize) -> Self {
        self.kernel = (kh, kw);
        self
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn build<T: Real, R: Rng + ?Sized>(self, store: &mut ParamStore<T>, name: &str, rng: &mut R) -> Conv2d {
        let (kh, kw) = self.kernel;
        let weight = store.add(format!("{name}.weight"), init_tensor(&[self.out_channels, self.in_channels, kh, kw], self.init, rng));
        let bias = self.bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[self.out_channels])));
        Conv2d {
            weight,
            bias,
            geom: ConvGeometry { stride: self.stride, pad_h: kh / 2, pad_w: kw / 2 },
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
        }
    }
}

impl Conv2d {
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, self.geom)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.weight_and_bias().collect()
    }

    fn weight_and_bias(&self) -> impl Iterator<Item = ParamId> {
        core::iter::once(self.weight).chain(self.bias)
    }

    /// Sets the weight to pass input channels `offset..offset+out` straight
    /// through at the kernel centre, and zeroes the bias.
    pub fn set_identity<T: Real>(&self, store: &mut ParamStore<T>, offset: usize) {
        let (kh, kw) = self.kernel;
        let w = store.get_mut(self.weight);
        w.data_mut().fill(T::zero());
        for o in 0..self.out_channels {
            let i = o + offset;
            if i < self.in_channels {
                w.data_mut()[((o * self.in_channels + i) * kh + kh / 2) * kw + kw / 2] = T::one();
            }
        }
        if let Some(b) = self.bias {
            store.get_mut(b).data_mut().fill(T::zero());
        }
    }
}

/// `relu(x + conv2(relu(conv1(x))))`, with a strided projection on the
/// shortcut when the block changes resolution or width.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl ResidualBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        let conv1 = ConvSpec::new(cin, cout, 3).stride(stride).build(store, &format!("{name}.conv1"), rng);
        let conv2 = ConvSpec::new(cout, cout, 3).build(store, &format!("{name}.conv2"), rng);
        // Start each branch near the identity so deep stacks train without normalisation.
        scale_param(store, conv2.weight, 0.5);
        let shortcut = (stride != 1 || cin != cout)
            .then(|| ConvSpec::new(cin, cout, 1).stride(stride).no_bias().build(store, &format!("{name}.shortcut"), rng));
        Self { conv1, conv2, shortcut }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = self.conv1.forward(g, x);
        let h = g.relu(h);
        let h = self.conv2.forward(g, h);
        let s = match &self.shortcut {
            Some(c) => c.forward(g, x),
            None => x,
        };
        let y = g.add(h, s);
        g.relu(y)
    }
}

/// Bottleneck residual block (1×1 → 3×3 → 1×1), used by the large encoder preset.
#[derive(Clone, Debug)]
pub struct BottleneckBlock {
    reduce: Conv2d,
    spatial: Conv2d,
    expand: Conv2d,
    shortcut: Option<Conv2d>,
}

impl BottleneckBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        let mid = cout / 4;
        let reduce = ConvSpec::new(cin, mid, 1).build(store, &format!("{name}.reduce"), rng);
        let spatial = ConvSpec::new(mid, mid, 3).stride(stride).build(store, &format!("{name}.spatial"), rng);
        let expand = ConvSpec::new(mid, cout, 1).build(store, &format!("{name}.expand"), rng);
        scale_param(store, expand.weight, 0.5);
        let shortcut = (stride != 1 || cin != cout)
            .then(|| ConvSpec::new(cin, cout, 1).stride(stride).no_bias().build(store, &format!("{name}.shortcut"), rng));
        Self { reduce, spatial, expand, shortcut }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = self.reduce.forward(g, x);
        let h = g.relu(h);
        let h = self.spatial.forward(g, h);
        let h = g.relu(h);
        let h = self.expand.forward(g, h);
        let s = match &self.shortcut {
            Some(c) => c.forward(g, x),
            None => x,
        };
        let y = g.add(h, s);
        g.relu(y)
    }
}

pub fn scale_param<T: Real>(store: &mut ParamStore<T>, id: ParamId, s: f64) {
    let s = T::of(s);
    store.get_mut(id).data_mut().iter_mut().for_each(|v| *v *= s);
}

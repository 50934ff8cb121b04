//! VGG-style architecture description, construction and surgery.
//!
//! A network is a stack of blocks, each `convs × (conv3x3 + ReLU)` followed
//! by one 2x2 max pool, then a fully connected head over the flattened
//! feature map.

mod checkpoint;
mod surgery;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    backward_through, forward, forward_cached, softmax_rows, Layer, LayerParams, ParamGrads,
    Scalar, Tensor4,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use surgery::{progressive_surgery, replace_head, surgery_spec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub convs: usize,
    pub out_channels: usize,
}

impl BlockSpec {
    pub fn new(convs: usize, out_channels: usize) -> Self {
        BlockSpec {
            convs,
            out_channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_side: usize,
    pub input_channels: usize,
    pub head: HeadSpec,
    pub blocks: Vec<BlockSpec>,
}

/// `(channels, side)` after a block.
pub type BlockShape = (usize, usize);

impl NetworkSpec {
    /// Blocks of `convs` convolutions each with the given widths.
    pub fn vgg(
        widths: &[usize],
        convs: usize,
        hidden: Vec<usize>,
        num_classes: usize,
        input_side: usize,
        input_channels: usize,
    ) -> Self {
        NetworkSpec {
            input_side,
            input_channels,
            head: HeadSpec {
                hidden,
                num_classes,
            },
            blocks: widths.iter().map(|&w| BlockSpec::new(convs, w)).collect(),
        }
    }

    /// Full-size VGG19 convolutional layout with its two 4096-unit FC layers.
    pub fn vgg19(num_classes: usize, input_side: usize) -> Self {
        let mut spec = NetworkSpec::vgg(
            &[64, 128, 256, 512, 512],
            4,
            vec![4096, 4096],
            num_classes,
            input_side,
            3,
        );
        spec.blocks[0].convs = 2;
        spec.blocks[1].convs = 2;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Validation("network needs at least one block".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::Validation("input_channels must be >= 1".into()));
        }
        if let Some((i, b)) = self
            .blocks
            .iter()
            .enumerate()
            .find(|(_, b)| b.convs == 0 || b.out_channels == 0)
        {
            return Err(Error::Validation(format!(
                "block {i} must have convs >= 1 and out_channels >= 1, got {b:?}"
            )));
        }
        if self.head.num_classes < 2 {
            return Err(Error::Validation(format!(
                "head needs at least 2 classes, got {}",
                self.head.num_classes
            )));
        }
        if self.head.hidden.contains(&0) {
            return Err(Error::Validation("hidden layer widths must be >= 1".into()));
        }
        infer_shapes(self, self.input_side)?;
        Ok(())
    }

    /// Width of the flattened feature map entering the head.
    pub fn flat_features(&self) -> Result<usize> {
        let (c, s) = *infer_shapes(self, self.input_side)?
            .last()
            .expect("validated non-empty");
        Ok(c * s * s)
    }

    /// Shapes of every parameter array in storage order (weight then bias
    /// for each parametric layer; biases as `(n, 1, 1, 1)`).
    pub fn param_shapes(&self) -> Result<Vec<[usize; 4]>> {
        let mut shapes = Vec::new();
        let mut in_c = self.input_channels;
        for b in &self.blocks {
            for _ in 0..b.convs {
                shapes.push([b.out_channels, in_c, 3, 3]);
                shapes.push([b.out_channels, 1, 1, 1]);
                in_c = b.out_channels;
            }
        }
        let mut fin = self.flat_features()?;
        for &h in self.head.hidden.iter().chain(std::iter::once(&self.head.num_classes)) {
            shapes.push([h, fin, 1, 1]);
            shapes.push([h, 1, 1, 1]);
            fin = h;
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .iter()
            .map(|d| d.iter().product::<usize>())
            .sum())
    }

    /// Number of layers (conv, relu, pool) a block expands to.
    pub(crate) fn block_layer_count(b: &BlockSpec) -> usize {
        2 * b.convs + 1
    }


    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: NetworkSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("network spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Trace of `(channels, side)` after each block for a square input of
/// `input_side` pixels.
pub fn infer_shapes(spec: &NetworkSpec, input_side: usize) -> Result<Vec<BlockShape>> {
    let mut side = input_side;
    let mut out = Vec::with_capacity(spec.blocks.len());
    for (i, b) in spec.blocks.iter().enumerate() {
        if side == 0 || !side.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "block {i} receives side {side}, which cannot be halved \
                 (input side {input_side} must be divisible by {})",
                1usize << spec.blocks.len()
            )));
        }
        side /= 2;
        out.push((b.out_channels, side));
    }
    Ok(out)
}

/// A sequential network instantiated from a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    layers: Vec<Layer<T>>,
}

fn block_layers<T: Scalar>(b: &BlockSpec, in_c: usize, rng: &mut ChaCha8Rng) -> Vec<Layer<T>> {
    let mut layers = Vec::with_capacity(NetworkSpec::block_layer_count(b));
    let mut c = in_c;
    for _ in 0..b.convs {
        layers.push(Layer::Conv(LayerParams::he_uniform(
            [b.out_channels, c, 3, 3],
            rng,
        )));
        layers.push(Layer::Relu);
        c = b.out_channels;
    }
    layers.push(Layer::MaxPool2);
    layers
}

fn head_layers<T: Scalar>(head: &HeadSpec, flat: usize, rng: &mut ChaCha8Rng) -> Vec<Layer<T>> {
    let mut layers = Vec::new();
    let mut fin = flat;
    for &h in &head.hidden {
        layers.push(Layer::Linear(LayerParams::he_uniform([h, fin, 1, 1], rng)));
        layers.push(Layer::Relu);
        fin = h;
    }
    layers.push(classifier_layer(head.num_classes, fin, rng));
    layers
}

pub(crate) fn classifier_layer<T: Scalar>(classes: usize, fin: usize, rng: &mut ChaCha8Rng) -> Layer<T> {
    Layer::Linear(LayerParams::he_uniform([classes, fin, 1, 1], rng))
}

/// Builds a freshly He-uniform initialized network. Deterministic in
/// `(spec, seed)`.
pub fn build_network<T: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<Network<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut in_c = spec.input_channels;
    for b in &spec.blocks {
        layers.extend(block_layers(b, in_c, &mut rng));
        in_c = b.out_channels;
    }
    layers.extend(head_layers(&spec.head, spec.flat_features()?, &mut rng));
    Ok(Network {
        spec: spec.clone(),
        layers,
    })
}

impl<T: Scalar> Network<T> {
    /// Assembles a network from explicit layers, checking they match `spec`.
    pub fn from_parts(spec: NetworkSpec, layers: Vec<Layer<T>>) -> Result<Self> {
        spec.validate()?;
        let net = Network { spec, layers };
        let expected = net.spec.param_shapes()?;
        let actual = net.param_shapes();
        if expected != actual {
            return Err(Error::Shape(format!(
                "layers do not match spec: expected parameter shapes {expected:?}, got {actual:?}"
            )));
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.spec.head.num_classes
    }

    pub fn input_side(&self) -> usize {
        self.spec.input_side
    }

    /// Parameter arrays in storage order: weight then bias per parametric layer.
    pub fn param_arrays(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .flat_map(|p| [p.weight.data(), p.bias.as_slice()])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<[usize; 4]> {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .flat_map(|p| [p.weight.dims(), [p.bias.len(), 1, 1, 1]])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .map(LayerParams::param_count)
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = self.spec.input_side;
        let want = [x.n(), self.spec.input_channels, s, s];
        if x.dims() != want {
            return Err(Error::Shape(format!(
                "network expects input {want:?}, got {:?}",
                x.dims()
            )));
        }
        Ok(())
    }

    /// Logits `(n, classes, 1, 1)`.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        forward(&self.layers, x)
    }

    /// Class probabilities for each batch item.
    pub fn predict_proba(&self, x: &Tensor4<T>) -> Result<Vec<Vec<T>>> {
        Ok(softmax_rows(&self.forward(x)?))
    }

    /// Mean cross-entropy loss and per-layer parameter gradients.
    pub fn loss_and_grads(
        &self,
        x: Tensor4<T>,
        labels: &[usize],
    ) -> Result<(T, Vec<Option<ParamGrads<T>>>)> {
        self.check_input(&x)?;
        let acts = forward_cached(&self.layers, x)?;
        let (loss, grad) =
            crate::tensor::softmax_cross_entropy(acts.last().expect("output"), labels)?;
        let (_, grads) = backward_through(&self.layers, &acts, grad)?;
        Ok((loss, grads))
    }

    pub fn reset_velocity(&mut self) {
        for p in self.layers.iter_mut().filter_map(Layer::params_mut) {
            p.reset_velocity();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> NetworkSpec {
        NetworkSpec::vgg(&[16, 32, 64], 1, vec![], 5, 32, 1)
    }

    #[test]
    fn shapes_halve_per_block() {
        assert_eq!(
            infer_shapes(&desk(), 32).unwrap(),
            vec![(16, 16), (32, 8), (64, 4)]
        );
    }

    #[test]
    fn vgg19_shapes_at_256() {
        let spec = NetworkSpec::vgg19(5, 256);
        assert_eq!(*infer_shapes(&spec, 256).unwrap().last().unwrap(), (512, 8));
    }

    #[test]
    fn non_divisible_input_is_a_shape_error() {
        let err = infer_shapes(&desk(), 30).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(err.to_string().contains("block 1"), "{err}");
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a: Network<f32> = build_network(&desk(), 7).unwrap();
        let b: Network<f32> = build_network(&desk(), 7).unwrap();
        let c: Network<f32> = build_network(&desk(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.param_arrays(), c.param_arrays());
    }

    #[test]
    fn parameter_count_closed_form() {
        let spec = NetworkSpec::vgg(&[16, 32], 1, vec![], 5, 16, 3);
        let net: Network<f64> = build_network(&spec, 0).unwrap();
        let expected = (16 * 3 * 9 + 16) + (32 * 16 * 9 + 32) + (5 * (32 * 4 * 4) + 5);
        assert_eq!(net.param_count(), expected);
        assert_eq!(spec.param_count().unwrap(), expected);
    }

    #[test]
    fn logits_have_class_width() {
        let net: Network<f64> = build_network(&desk(), 1).unwrap();
        let x = Tensor4::zeros([3, 1, 32, 32]);
        assert_eq!(net.forward(&x).unwrap().dims(), [3, 5, 1, 1]);
        assert!(net.forward(&Tensor4::zeros([1, 1, 16, 16])).is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = NetworkSpec::vgg19(5, 256);
        assert_eq!(NetworkSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        assert!(NetworkSpec::from_toml("input_side = 4\nbogus = 1").is_err());
    }

    #[test]
    fn validation_rejects_degenerate_specs() {
        let mut s = desk();
        s.head.num_classes = 1;
        assert!(s.validate().is_err());
        let mut s = desk();
        s.blocks.clear();
        assert!(s.validate().is_err());
    }
}

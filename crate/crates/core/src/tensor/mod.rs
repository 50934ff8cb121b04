//! Dense 4-D tensors and the layer math used by the VGG-style networks.
//!
//! Everything here is generic over [`Scalar`] so the same code path runs in
//! `f64` for gradient checks and in `f32` for training.

mod gradcheck;
mod layers;
mod loss;
mod optim;
mod sequential;

use std::fmt::Debug;

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};

pub use gradcheck::{gradcheck_layer, gradcheck_network, GradcheckOptions, GradcheckReport};
pub use layers::{
    conv2d_backward, conv2d_forward, layer_backward, linear_backward, linear_forward,
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, Layer, LayerKind,
    ParamGrads,
};
pub use loss::softmax_cross_entropy;
pub use optim::{sgd_momentum_step, Sgd};
pub use sequential::{backward_through, forward, forward_cached};
pub(crate) use loss::softmax_rows;

/// Floating point element type with a matching GEMM kernel.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a·b + beta * c` with arbitrary row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;

    fn to_f64(self) -> f64;
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[allow(clippy::too_many_arguments)]
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let last = |r: usize, cc: usize, rs: isize, cs: isize| {
                    (r as isize - 1) * rs + (cc as isize - 1) * cs
                };
                if k > 0 {
                    assert!(last(m, k, rsa, csa) < a.len() as isize, "gemm: a too short");
                    assert!(last(k, n, rsb, csb) < b.len() as isize, "gemm: b too short");
                }
                assert!(last(m, n, rsc, csc) < c.len() as isize, "gemm: c too short");
                // SAFETY: the asserts above bound every index the kernel touches
                // (all strides used here are non-negative).
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn to_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense `(n, c, h, w)` array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 {
            dims,
            data: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn full(dims: [usize; 4], value: T) -> Self {
        Tensor4 {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {:?} (expected {})",
                data.len(),
                dims,
                expected
            )));
        }
        Ok(Tensor4 { dims, data })
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn random_uniform<R: Rng + ?Sized>(dims: [usize; 4], lo: f64, hi: f64, rng: &mut R) -> Self {
        let len = dims.iter().product();
        let data = (0..len)
            .map(|_| T::from_f64(rng.random_range(lo..hi)))
            .collect();
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn n(&self) -> usize {
        self.dims[0]
    }

    pub fn c(&self) -> usize {
        self.dims[1]
    }

    pub fn h(&self) -> usize {
        self.dims[2]
    }

    pub fn w(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of elements per batch item.
    pub fn item_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self, i: usize) -> &[T] {
        let len = self.item_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let [_, cc, h, w] = self.dims;
        self.data[((n * cc + c) * h + y) * w + x]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let [_, cc, h, w] = self.dims;
        self.data[((n * cc + c) * h + y) * w + x] = v;
    }

    /// Same data viewed with different dims of equal total size.
    pub fn reshape(mut self, dims: [usize; 4]) -> Result<Self> {
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.dims, dims
            )));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// Stack single-item tensors of identical shape along the batch axis.
    pub fn stack(items: &[&[T]], item_dims: [usize; 3]) -> Result<Self> {
        let len = item_dims.iter().product::<usize>();
        let mut data = Vec::with_capacity(len * items.len());
        for item in items {
            if item.len() != len {
                return Err(Error::Shape(format!(
                    "stack: item of length {} does not match {:?}",
                    item.len(),
                    item_dims
                )));
            }
            data.extend_from_slice(item);
        }
        Ok(Tensor4 {
            dims: [items.len(), item_dims[0], item_dims[1], item_dims[2]],
            data,
        })
    }
}

/// Parameters of a convolution or fully connected layer, plus the momentum
/// buffers the optimizer keeps for them.
///
/// Convolution weights are `(out, in, k, k)`; linear weights are stored as
/// `(out, in, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
    pub weight_velocity: Tensor4<T>,
    pub bias_velocity: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(weight: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.n() {
            return Err(Error::Shape(format!(
                "bias length {} does not match {} output units",
                bias.len(),
                weight.n()
            )));
        }
        Ok(LayerParams {
            weight_velocity: Tensor4::zeros(weight.dims()),
            bias_velocity: vec![T::zero(); bias.len()],
            weight,
            bias,
        })
    }

    /// He-uniform initialization: `U(-sqrt(6/fan_in), sqrt(6/fan_in))` for
    /// weights, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(dims: [usize; 4], rng: &mut R) -> Self {
        let fan_in = dims[1] * dims[2] * dims[3];
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = Tensor4::random_uniform(dims, -bound, bound, rng);
        LayerParams {
            weight_velocity: Tensor4::zeros(dims),
            bias: vec![T::zero(); dims[0]],
            bias_velocity: vec![T::zero(); dims[0]],
            weight,
        }
    }

    pub fn out_units(&self) -> usize {
        self.weight.n()
    }

    pub fn in_units(&self) -> usize {
        self.weight.c()
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
            weight_velocity: self.weight_velocity.cast(),
            bias_velocity: self
                .bias_velocity
                .iter()
                .map(|&v| U::from_f64(v.to_f64()))
                .collect(),
        }
    }

    pub fn reset_velocity(&mut self) {
        self.weight_velocity = Tensor4::zeros(self.weight.dims());
        self.bias_velocity = vec![T::zero(); self.bias.len()];
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor4::<f64>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        let t = Tensor4::<f64>::from_vec([1, 2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(t.at(0, 1, 1, 0), 6.0);
        assert_eq!(t.item_len(), 8);
    }

    #[test]
    fn gemm_matches_naive_product() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, 3, 1, &b, 2, 1, 0.0, &mut c, 2, 1);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn he_uniform_respects_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = LayerParams::<f64>::he_uniform([8, 4, 3, 3], &mut rng);
        let bound = (6.0f64 / 36.0).sqrt();
        assert!(p.weight.data().iter().all(|w| w.abs() < bound));
        assert!(p.bias.iter().all(|&b| b == 0.0));
    }

    use rand::SeedableRng;
}

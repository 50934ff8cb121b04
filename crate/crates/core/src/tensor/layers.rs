use super::{LayerParams, Scalar, Tensor4};
use crate::error::{Error, Result};

const K: usize = 3;
const K2: usize = K * K;

/// Kinds of layer the engine knows how to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Relu,
    MaxPool2,
    Linear,
}

/// One stage of a sequential network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    /// 3x3 convolution, padding 1, stride 1.
    Conv(LayerParams<T>),
    Relu,
    /// 2x2 max pool, stride 2.
    MaxPool2,
    /// Fully connected; flattens `(c, h, w)` of its input.
    Linear(LayerParams<T>),
}

/// Gradients with respect to a layer's weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(params: &LayerParams<T>) -> Self {
        ParamGrads {
            weight: Tensor4::zeros(params.weight.dims()),
            bias: vec![T::zero(); params.bias.len()],
        }
    }
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2 => LayerKind::MaxPool2,
            Layer::Linear(_) => LayerKind::Linear,
        }
    }

    pub fn params(&self) -> Option<&LayerParams<T>> {
        match self {
            Layer::Conv(p) | Layer::Linear(p) => Some(p),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut LayerParams<T>> {
        match self {
            Layer::Conv(p) | Layer::Linear(p) => Some(p),
            _ => None,
        }
    }

    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self {
            Layer::Conv(p) => conv2d_forward(input, p, 1, 1),
            Layer::Relu => Ok(relu_forward(input)),
            Layer::MaxPool2 => maxpool2_forward(input),
            Layer::Linear(p) => linear_forward(input, p),
        }
    }

    pub fn backward(
        &self,
        cached_input: &Tensor4<T>,
        grad_out: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, Option<ParamGrads<T>>)> {
        layer_backward(self.kind(), cached_input, grad_out, self.params())
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv(p) => Layer::Conv(p.cast()),
            Layer::Relu => Layer::Relu,
            Layer::MaxPool2 => Layer::MaxPool2,
            Layer::Linear(p) => Layer::Linear(p.cast()),
        }
    }
}

/// Backward pass for any layer kind given the input it saw on the way
/// forward. Parametric kinds need `params` and also return their gradients.
pub fn layer_backward<T: Scalar>(
    kind: LayerKind,
    cached_input: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    params: Option<&LayerParams<T>>,
) -> Result<(Tensor4<T>, Option<ParamGrads<T>>)> {
    let need = |name: &str| {
        params.ok_or_else(|| Error::Usage(format!("{name} backward requires layer parameters")))
    };
    match kind {
        LayerKind::Conv => {
            let (gi, gp) = conv2d_backward(cached_input, grad_out, need("conv")?)?;
            Ok((gi, Some(gp)))
        }
        LayerKind::Linear => {
            let (gi, gp) = linear_backward(cached_input, grad_out, need("linear")?)?;
            Ok((gi, Some(gp)))
        }
        LayerKind::Relu => Ok((relu_backward(cached_input, grad_out)?, None)),
        LayerKind::MaxPool2 => Ok((maxpool2_backward(cached_input, grad_out)?, None)),
    }
}

fn check_conv<T: Scalar>(input: &Tensor4<T>, params: &LayerParams<T>) -> Result<()> {
    let wd = params.weight.dims();
    if wd[2] != K || wd[3] != K {
        return Err(Error::Shape(format!(
            "conv kernel must be {K}x{K}, weights are {wd:?}"
        )));
    }
    if input.c() != wd[1] {
        return Err(Error::Shape(format!(
            "conv input {:?} has {} channels but weights {:?} expect {}",
            input.dims(),
            input.c(),
            wd,
            wd[1]
        )));
    }
    Ok(())
}

/// Unfolds one `(c, h, w)` item into a `(c*9, h*w)` patch matrix.
fn im2col<T: Scalar>(item: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &item[ch * hw..(ch + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut cols[(ch * K2 + ky * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            out[0] = T::zero();
                            out[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => out.copy_from_slice(src),
                        _ => {
                            out[..w - 1].copy_from_slice(&src[1..]);
                            out[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Folds a `(c*9, h*w)` patch-gradient matrix back onto one `(c, h, w)` item.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, item: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut item[ch * hw..(ch + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &cols[(ch * K2 + ky * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    match kx {
                        0 => {
                            for x in 1..w {
                                dst[x - 1] = dst[x - 1] + src[x];
                            }
                        }
                        1 => {
                            for x in 0..w {
                                dst[x] = dst[x] + src[x];
                            }
                        }
                        _ => {
                            for x in 0..w - 1 {
                                dst[x + 1] = dst[x + 1] + src[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 same-padding convolution. Only `pad = 1, stride = 1` is supported.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor4<T>,
    params: &LayerParams<T>,
    pad: usize,
    stride: usize,
) -> Result<Tensor4<T>> {
    if pad != 1 || stride != 1 {
        return Err(Error::Usage(format!(
            "conv supports pad 1 and stride 1 only (got pad {pad}, stride {stride})"
        )));
    }
    check_conv(input, params)?;
    let [n, c, h, w] = input.dims();
    let out_c = params.out_units();
    let hw = h * w;
    let mut out = Tensor4::zeros([n, out_c, h, w]);
    if hw == 0 {
        return Ok(out);
    }
    let mut cols = vec![T::zero(); c * K2 * hw];
    let weight = params.weight.data();
    for i in 0..n {
        im2col(input.item(i), c, h, w, &mut cols);
        let dst = &mut out.data_mut()[i * out_c * hw..(i + 1) * out_c * hw];
        for (o, &b) in params.bias.iter().enumerate() {
            dst[o * hw..(o + 1) * hw].fill(b);
        }
        T::gemm(
            out_c,
            c * K2,
            hw,
            T::one(),
            weight,
            (c * K2) as isize,
            1,
            &cols,
            hw as isize,
            1,
            T::one(),
            dst,
            hw as isize,
            1,
        );
    }
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    cached_input: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    params: &LayerParams<T>,
) -> Result<(Tensor4<T>, ParamGrads<T>)> {
    check_conv(cached_input, params)?;
    let [n, c, h, w] = cached_input.dims();
    let out_c = params.out_units();
    expect_dims("conv", grad_out, [n, out_c, h, w])?;
    let hw = h * w;
    let ck = c * K2;
    let mut grad_in = Tensor4::zeros([n, c, h, w]);
    let mut grads = ParamGrads::zeros_like(params);
    if hw == 0 {
        return Ok((grad_in, grads));
    }
    let mut cols = vec![T::zero(); ck * hw];
    let mut dcols = vec![T::zero(); ck * hw];
    let weight = params.weight.data();
    for i in 0..n {
        let go = &grad_out.data()[i * out_c * hw..(i + 1) * out_c * hw];
        im2col(cached_input.item(i), c, h, w, &mut cols);
        // dW += dY · colsᵀ
        T::gemm(
            out_c,
            hw,
            ck,
            T::one(),
            go,
            hw as isize,
            1,
            &cols,
            1,
            hw as isize,
            T::one(),
            grads.weight.data_mut(),
            ck as isize,
            1,
        );
        // dcols = Wᵀ · dY
        T::gemm(
            ck,
            out_c,
            hw,
            T::one(),
            weight,
            1,
            ck as isize,
            go,
            hw as isize,
            1,
            T::zero(),
            &mut dcols,
            hw as isize,
            1,
        );
        let gi = &mut grad_in.data_mut()[i * c * hw..(i + 1) * c * hw];
        col2im(&dcols, c, h, w, gi);
        for (o, gb) in grads.bias.iter_mut().enumerate() {
            *gb = go[o * hw..(o + 1) * hw].iter().fold(*gb, |acc, &v| acc + v);
        }
    }
    Ok((grad_in, grads))
}

pub fn relu_forward<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    let data = input
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    Tensor4 {
        dims: input.dims(),
        data,
    }
}

pub fn relu_backward<T: Scalar>(cached_input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    expect_dims("relu", grad_out, cached_input.dims())?;
    let data = cached_input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Ok(Tensor4 {
        dims: cached_input.dims(),
        data,
    })
}

/// Index (within the 2x2 window, scan order) of the first maximal element.
#[inline]
pub(crate) fn window_argmax<T: Scalar>(plane: &[T], w: usize, y: usize, x: usize) -> usize {
    let base = 2 * y * w + 2 * x;
    let offsets = [base, base + 1, base + w, base + w + 1];
    let mut best = offsets[0];
    for &o in &offsets[1..] {
        if plane[o] > plane[best] {
            best = o;
        }
    }
    best
}

fn pool_dims<T: Scalar>(input: &Tensor4<T>) -> Result<[usize; 4]> {
    let [n, c, h, w] = input.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2 needs even spatial dims, got {:?}",
            input.dims()
        )));
    }
    Ok([n, c, h / 2, w / 2])
}

pub fn maxpool2_forward<T: Scalar>(input: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, c, oh, ow] = pool_dims(input)?;
    let (h, w) = (input.h(), input.w());
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    for p in 0..n * c {
        let plane = &input.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                dst[y * ow + x] = plane[window_argmax(plane, w, y, x)];
            }
        }
    }
    Ok(out)
}

/// Routes each output gradient to the first maximal input of its window.
pub fn maxpool2_backward<T: Scalar>(cached_input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let out_dims = pool_dims(cached_input)?;
    expect_dims("maxpool2", grad_out, out_dims)?;
    let [_, _, oh, ow] = out_dims;
    let (h, w) = (cached_input.h(), cached_input.w());
    let mut grad_in = Tensor4::zeros(cached_input.dims());
    for p in 0..out_dims[0] * out_dims[1] {
        let plane = &cached_input.data()[p * h * w..(p + 1) * h * w];
        let go = &grad_out.data()[p * oh * ow..(p + 1) * oh * ow];
        let gi = &mut grad_in.data_mut()[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let idx = window_argmax(plane, w, y, x);
                gi[idx] = gi[idx] + go[y * ow + x];
            }
        }
    }
    Ok(grad_in)
}

fn check_linear<T: Scalar>(input: &Tensor4<T>, params: &LayerParams<T>) -> Result<()> {
    if input.item_len() != params.in_units() {
        return Err(Error::Shape(format!(
            "linear input {:?} flattens to {} features but weights {:?} expect {}",
            input.dims(),
            input.item_len(),
            params.weight.dims(),
            params.in_units()
        )));
    }
    Ok(())
}

/// Fully connected layer over the flattened `(c, h, w)` of each item.
/// Output dims are `(n, out, 1, 1)`.
pub fn linear_forward<T: Scalar>(input: &Tensor4<T>, params: &LayerParams<T>) -> Result<Tensor4<T>> {
    check_linear(input, params)?;
    let n = input.n();
    let (fin, fout) = (params.in_units(), params.out_units());
    let mut out = Tensor4::zeros([n, fout, 1, 1]);
    for row in out.data_mut().chunks_mut(fout) {
        row.copy_from_slice(&params.bias);
    }
    T::gemm(
        n,
        fin,
        fout,
        T::one(),
        input.data(),
        fin as isize,
        1,
        params.weight.data(),
        1,
        fin as isize,
        T::one(),
        out.data_mut(),
        fout as isize,
        1,
    );
    Ok(out)
}

pub fn linear_backward<T: Scalar>(
    cached_input: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    params: &LayerParams<T>,
) -> Result<(Tensor4<T>, ParamGrads<T>)> {
    check_linear(cached_input, params)?;
    let n = cached_input.n();
    let (fin, fout) = (params.in_units(), params.out_units());
    expect_dims("linear", grad_out, [n, fout, 1, 1])?;
    let mut grads = ParamGrads::zeros_like(params);
    // dW = dYᵀ · X
    T::gemm(
        fout,
        n,
        fin,
        T::one(),
        grad_out.data(),
        1,
        fout as isize,
        cached_input.data(),
        fin as isize,
        1,
        T::zero(),
        grads.weight.data_mut(),
        fin as isize,
        1,
    );
    for row in grad_out.data().chunks(fout) {
        for (gb, &g) in grads.bias.iter_mut().zip(row) {
            *gb = *gb + g;
        }
    }
    let mut grad_in = Tensor4::zeros(cached_input.dims());
    // dX = dY · W
    T::gemm(
        n,
        fout,
        fin,
        T::one(),
        grad_out.data(),
        fout as isize,
        1,
        params.weight.data(),
        fin as isize,
        1,
        T::zero(),
        grad_in.data_mut(),
        fin as isize,
        1,
    );
    Ok((grad_in, grads))
}

fn expect_dims<T: Scalar>(what: &str, t: &Tensor4<T>, dims: [usize; 4]) -> Result<()> {
    if t.dims() != dims {
        return Err(Error::Shape(format!(
            "{what} backward: grad_out {:?} does not match forward output {:?}",
            t.dims(),
            dims
        )));
    }
    Ok(())
}

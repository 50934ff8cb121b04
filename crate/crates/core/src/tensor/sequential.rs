use super::{Layer, ParamGrads, Scalar, Tensor4};
use crate::error::Result;

/// Runs `layers` in order. Returns every intermediate: `acts[0]` is the
/// input and `acts[i + 1]` the output of layer `i`.
pub fn forward_cached<T: Scalar>(layers: &[Layer<T>], input: Tensor4<T>) -> Result<Vec<Tensor4<T>>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input);
    for layer in layers {
        let next = layer.forward(acts.last().expect("non-empty"))?;
        acts.push(next);
    }
    Ok(acts)
}

pub fn forward<T: Scalar>(layers: &[Layer<T>], input: &Tensor4<T>) -> Result<Tensor4<T>> {
    let mut x = input.clone();
    for layer in layers {
        x = layer.forward(&x)?;
    }
    Ok(x)
}

/// Backpropagates `grad_out` through `layers` given the cached activations
/// from [`forward_cached`]. Returns the gradient at the input and one entry
/// per layer (`Some` for parametric layers).
pub fn backward_through<T: Scalar>(
    layers: &[Layer<T>],
    acts: &[Tensor4<T>],
    grad_out: Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<Option<ParamGrads<T>>>)> {
    let mut grads = vec![None; layers.len()];
    let mut g = grad_out;
    for (i, layer) in layers.iter().enumerate().rev() {
        let (gi, gp) = layer.backward(&acts[i], &g)?;
        grads[i] = gp;
        g = gi;
    }
    Ok((g, grads))
}

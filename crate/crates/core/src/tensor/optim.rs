use super::{LayerParams, ParamGrads, Scalar};
use crate::error::{Error, Result};

/// SGD with classical momentum: `v <- momentum * v + g; p <- p - lr * v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Validation(format!("learning rate must be > 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Validation(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Sgd { lr, momentum })
    }

    pub fn step<T: Scalar>(
        &self,
        params: &mut [&mut LayerParams<T>],
        grads: &[ParamGrads<T>],
    ) -> Result<()> {
        sgd_momentum_step(params, grads, self.lr, self.momentum)
    }
}

/// Applies one momentum step to every layer. Gradients are checked for
/// finiteness before anything is modified; `layer` in the divergence error
/// is the index into `params`.
pub fn sgd_momentum_step<T: Scalar>(
    params: &mut [&mut LayerParams<T>],
    grads: &[ParamGrads<T>],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    Sgd::new(lr, momentum)?;
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameter sets but {} gradient sets",
            params.len(),
            grads.len()
        )));
    }
    for (layer, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.weight.dims() != g.weight.dims() || p.bias.len() != g.bias.len() {
            return Err(Error::Shape(format!(
                "layer {layer}: gradient {:?} does not match parameters {:?}",
                g.weight.dims(),
                p.weight.dims()
            )));
        }
        if !g.weight.all_finite() || g.bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                layer,
                detail: format!("weights {:?}", g.weight.dims()),
            });
        }
    }
    let lr = T::from_f64(lr);
    let mu = T::from_f64(momentum);
    for (p, g) in params.iter_mut().zip(grads) {
        let p = &mut **p;
        update(p.weight.data_mut(), p.weight_velocity.data_mut(), g.weight.data(), lr, mu);
        update(&mut p.bias, &mut p.bias_velocity, &g.bias, lr, mu);
    }
    Ok(())
}

fn update<T: Scalar>(p: &mut [T], v: &mut [T], g: &[T], lr: T, mu: T) {
    for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = mu * *v + g;
        *p = *p - lr * *v;
    }
}

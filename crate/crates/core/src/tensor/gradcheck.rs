use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sequential::{backward_through, forward_cached};
use super::layers::window_argmax;
use super::{softmax_cross_entropy, Layer, Tensor4};
use crate::error::{Error, Result};

/// Parameter count above which a subsample must be requested explicitly.
const EXHAUSTIVE_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    /// Base step; the step for parameter `p` is `eps * max(1, |p|)`.
    pub eps: f64,
    /// Check a seeded random subsample of this many parameters.
    pub max_params: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            eps: 1e-5,
            max_params: None,
            seed: 0,
        }
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Copy)]
struct ParamRef {
    layer: usize,
    bias: bool,
    index: usize,
}

fn param_refs(layers: &[Layer<f64>]) -> Vec<ParamRef> {
    let mut refs = Vec::new();
    for (layer, l) in layers.iter().enumerate() {
        if let Some(p) = l.params() {
            refs.extend((0..p.weight.len()).map(|index| ParamRef {
                layer,
                bias: false,
                index,
            }));
            refs.extend((0..p.bias.len()).map(|index| ParamRef {
                layer,
                bias: true,
                index,
            }));
        }
    }
    refs
}

fn param_mut(layers: &mut [Layer<f64>], r: ParamRef) -> &mut f64 {
    let p = layers[r.layer].params_mut().expect("parametric layer");
    if r.bias {
        &mut p.bias[r.index]
    } else {
        &mut p.weight.data_mut()[r.index]
    }
}

fn select(refs: Vec<ParamRef>, opts: &GradcheckOptions) -> Result<Vec<ParamRef>> {
    match opts.max_params {
        Some(m) if m < refs.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, refs.len(), m).into_vec();
            idx.sort_unstable();
            Ok(idx.into_iter().map(|i| refs[i]).collect())
        }
        None if refs.len() >= EXHAUSTIVE_LIMIT => Err(Error::Usage(format!(
            "{} parameters is too many to perturb exhaustively; set max_params",
            refs.len()
        ))),
        _ => Ok(refs),
    }
}

/// Outcome of [`gradcheck_network`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    /// Largest relative disagreement over the parameters that were compared.
    pub max_rel_err: f64,
    /// Parameters compared against central differences.
    pub checked: usize,
    /// Parameters whose ±step moved some ReLU input across zero or changed a
    /// max-pool winner. The loss is not differentiable along such a step, so
    /// the central difference does not estimate the gradient and they are
    /// left out of `max_rel_err`.
    pub skipped_kinks: usize,
}

/// Which side of every ReLU kink and which max-pool window element each
/// nonsmooth unit sits on, given the cached inputs of every layer.
fn kink_pattern(layers: &[Layer<f64>], acts: &[Tensor4<f64>]) -> Vec<u8> {
    let mut pattern = Vec::new();
    for (layer, x) in layers.iter().zip(acts) {
        match layer {
            Layer::Relu => pattern.extend(x.data().iter().map(|&v| u8::from(v > 0.0))),
            Layer::MaxPool2 => {
                let [n, c, h, w] = x.dims();
                for p in 0..n * c {
                    let plane = &x.data()[p * h * w..(p + 1) * h * w];
                    for y in 0..h / 2 {
                        for xx in 0..w / 2 {
                            pattern.push((window_argmax(plane, w, y, xx) - (2 * y * w + 2 * xx)) as u8);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    pattern
}

/// Compares backprop with central differences of the mean cross-entropy
/// loss over the selected parameters, skipping steps that cross a kink.
pub fn gradcheck_network(
    layers: &[Layer<f64>],
    input: &Tensor4<f64>,
    labels: &[usize],
    opts: GradcheckOptions,
) -> Result<GradcheckReport> {
    let acts = forward_cached(layers, input.clone())?;
    let (loss, grad) = softmax_cross_entropy(acts.last().expect("output"), labels)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    let base_pattern = kink_pattern(layers, &acts);
    let (_, grads) = backward_through(layers, &acts, grad)?;

    let mut work = layers.to_vec();
    // loss and whether the kink pattern matches the unperturbed one
    let loss_at = |work: &[Layer<f64>]| -> Result<(f64, bool)> {
        let acts = forward_cached(work, input.clone())?;
        let (l, _) = softmax_cross_entropy(acts.last().expect("output"), labels)?;
        if l.is_finite() {
            Ok((l, kink_pattern(work, &acts) == base_pattern))
        } else {
            Err(Error::Numeric(format!("non-finite loss {l}")))
        }
    };
    let mut report = GradcheckReport { max_rel_err: 0.0, checked: 0, skipped_kinks: 0 };
    for r in select(param_refs(layers), &opts)? {
        let g = grads[r.layer].as_ref().expect("parametric layer");
        let analytic = if r.bias {
            g.bias[r.index]
        } else {
            g.weight.data()[r.index]
        };
        let orig = *param_mut(&mut work, r);
        let h = opts.eps * orig.abs().max(1.0);
        *param_mut(&mut work, r) = orig + h;
        let (plus, plus_smooth) = loss_at(&work)?;
        *param_mut(&mut work, r) = orig - h;
        let (minus, minus_smooth) = loss_at(&work)?;
        *param_mut(&mut work, r) = orig;
        if plus_smooth && minus_smooth {
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel_err(analytic, (plus - minus) / (2.0 * h)));
        } else {
            report.skipped_kinks += 1;
        }
    }
    Ok(report)
}

/// Checks one layer in isolation against central differences of the scalar
/// objective `sum(r * layer(x))` for a fixed random `r`. Covers the input
/// gradient and, for parametric layers, every parameter.
pub fn gradcheck_layer(layer: &Layer<f64>, input: &Tensor4<f64>, eps: f64, seed: u64) -> Result<f64> {
    let out = layer.forward(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj: Vec<f64> = (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |l: &Layer<f64>, x: &Tensor4<f64>| -> Result<f64> {
        Ok(l.forward(x)?.data().iter().zip(&proj).map(|(a, b)| a * b).sum())
    };
    let grad_out = Tensor4::from_vec(out.dims(), proj.clone())?;
    let (grad_in, grad_params) = layer.backward(input, &grad_out)?;

    let mut worst = 0.0f64;
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        let h = eps * orig.abs().max(1.0);
        x.data_mut()[i] = orig + h;
        let plus = objective(layer, &x)?;
        x.data_mut()[i] = orig - h;
        let minus = objective(layer, &x)?;
        x.data_mut()[i] = orig;
        worst = worst.max(rel_err(grad_in.data()[i], (plus - minus) / (2.0 * h)));
    }
    if let Some(gp) = grad_params {
        let mut work = vec![layer.clone()];
        for r in param_refs(&work) {
            let analytic = if r.bias {
                gp.bias[r.index]
            } else {
                gp.weight.data()[r.index]
            };
            let orig = *param_mut(&mut work, r);
            let h = eps * orig.abs().max(1.0);
            *param_mut(&mut work, r) = orig + h;
            let plus = objective(&work[0], input)?;
            *param_mut(&mut work, r) = orig - h;
            let minus = objective(&work[0], input)?;
            *param_mut(&mut work, r) = orig;
            worst = worst.max(rel_err(analytic, (plus - minus) / (2.0 * h)));
        }
    }
    Ok(worst)
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{block_layers, classifier_layer, BlockSpec, Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Swaps the final classifier for a freshly initialized one with
/// `num_classes` outputs. Every other layer, hidden FC layers included, is
/// carried over unchanged. The classifier is re-initialized even when the
/// class count does not change.
pub fn replace_head<T: Scalar>(model: &Network<T>, num_classes: usize, seed: u64) -> Result<Network<T>> {
    if num_classes < 2 {
        return Err(Error::Validation(format!(
            "classifier needs at least 2 classes, got {num_classes}"
        )));
    }
    let mut spec = model.spec.clone();
    spec.head.num_classes = num_classes;
    let mut layers = model.layers.clone();
    let last = layers.pop().expect("network has a classifier");
    let fin = last.params().expect("classifier is linear").in_units();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    layers.push(classifier_layer(num_classes, fin, &mut rng));
    Network::from_parts(spec, layers)
}

/// The network spec that [`progressive_surgery`] produces from `stage1`:
/// first block replaced by `new_blocks`, input side doubled.
pub fn surgery_spec(stage1: &NetworkSpec, new_blocks: &[BlockSpec]) -> Result<NetworkSpec> {
    if stage1.blocks.len() < 2 {
        return Err(Error::Surgery(format!(
            "need at least 2 blocks to remove the first, network has {}",
            stage1.blocks.len()
        )));
    }
    let [first_new, second_new] = new_blocks else {
        return Err(Error::Surgery(format!(
            "exactly 2 new blocks are prepended, got {}",
            new_blocks.len()
        )));
    };
    let removed = stage1.blocks[0];
    if second_new.out_channels != removed.out_channels {
        return Err(Error::Surgery(format!(
            "second new block outputs {} channels but the removed first block output {}",
            second_new.out_channels, removed.out_channels
        )));
    }
    let mut blocks = vec![*first_new, *second_new];
    blocks.extend_from_slice(&stage1.blocks[1..]);
    let spec = NetworkSpec {
        input_side: stage1.input_side * 2,
        input_channels: stage1.input_channels,
        head: stage1.head.clone(),
        blocks,
    };
    spec.validate()?;
    Ok(spec)
}

/// Removes the first block of a trained network and prepends two freshly
/// initialized blocks, so the result accepts inputs twice as large.
///
/// `new_blocks[1]` must produce as many channels as the removed block did so
/// the retained second block sees the channel count it was trained on.
/// Retained blocks and the head keep their parameters bit for bit.
pub fn progressive_surgery<T: Scalar>(
    stage1: &Network<T>,
    new_blocks: &[BlockSpec],
    seed: u64,
) -> Result<Network<T>> {
    let spec = surgery_spec(&stage1.spec, new_blocks)?;
    let (first_new, second_new) = (&spec.blocks[0], &spec.blocks[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = block_layers(first_new, spec.input_channels, &mut rng);
    layers.extend(block_layers(second_new, first_new.out_channels, &mut rng));
    let skip = NetworkSpec::block_layer_count(&stage1.spec.blocks[0]);
    layers.extend(stage1.layers[skip..].iter().cloned());
    Network::from_parts(spec, layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_network, infer_shapes};

    fn stage1() -> Network<f32> {
        build_network(&NetworkSpec::vgg(&[16, 32, 64], 1, vec![], 5, 32, 1), 3).unwrap()
    }

    #[test]
    fn head_replacement_keeps_backbone() {
        let spec = NetworkSpec::vgg(&[8, 16], 1, vec![12], 1000, 16, 3);
        let net: Network<f32> = build_network(&spec, 1).unwrap();
        let out = replace_head(&net, 5, 2).unwrap();
        let before = net.param_arrays();
        let after = out.param_arrays();
        assert_eq!(before.len(), after.len());
        for (a, b) in before.iter().zip(&after).take(before.len() - 2) {
            assert_eq!(a, b);
        }
        assert_eq!(out.param_shapes().last().unwrap(), &[5, 1, 1, 1]);
        let x = crate::tensor::Tensor4::zeros([2, 3, 16, 16]);
        assert_eq!(out.forward(&x).unwrap().dims(), [2, 5, 1, 1]);
    }

    #[test]
    fn same_class_count_still_reinitializes() {
        let net = stage1();
        let a = replace_head(&net, 5, 10).unwrap();
        let b = replace_head(&net, 5, 11).unwrap();
        // classifier weight is the second-to-last array (bias is zero-initialized)
        let w = |n: &Network<f32>| n.param_arrays()[n.param_arrays().len() - 2].to_vec();
        assert_ne!(w(&a), w(&net));
        assert_ne!(w(&a), w(&b));
        assert!(replace_head(&net, 1, 0).is_err());
    }

    #[test]
    fn desk_scale_surgery_junction() {
        let s1 = stage1();
        let s2 = progressive_surgery(&s1, &[BlockSpec::new(1, 8), BlockSpec::new(1, 16)], 4).unwrap();
        let widths: Vec<_> = s2.spec().blocks.iter().map(|b| b.out_channels).collect();
        assert_eq!(widths, vec![8, 16, 32, 64]);
        assert_eq!(s2.input_side(), 64);
        let t1 = infer_shapes(s1.spec(), 32).unwrap();
        let t2 = infer_shapes(s2.spec(), 64).unwrap();
        assert_eq!(t2[1], (16, 16));
        assert_eq!(t2[1], t1[0]);
        assert_eq!(&t2[1..], &t1[..]);
        // retained arrays: everything after block 1 of stage 1
        let a1 = s1.param_arrays();
        let a2 = s2.param_arrays();
        assert_eq!(&a1[2..], &a2[4..]);
    }

    #[test]
    fn vgg19_surgery_junction() {
        let spec = NetworkSpec::vgg19(5, 256);
        let trace1 = infer_shapes(&spec, 256).unwrap();
        let mut s2 = spec.clone();
        s2.blocks.remove(0);
        s2.blocks.insert(0, BlockSpec::new(2, 64));
        s2.blocks.insert(0, BlockSpec::new(2, 32));
        let trace2 = infer_shapes(&s2, 512).unwrap();
        assert_eq!(trace2[1], (64, 128));
        assert_eq!(trace2[1], trace1[0]);
        assert_eq!(&trace2[1..], &trace1[..]);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let err = progressive_surgery(&stage1(), &[BlockSpec::new(1, 8), BlockSpec::new(1, 99)], 0)
            .unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Surgery(_)));
        assert!(msg.contains("99") && msg.contains("16"), "{msg}");
    }

    #[test]
    fn single_block_network_cannot_be_operated_on() {
        let net: Network<f32> =
            build_network(&NetworkSpec::vgg(&[16], 1, vec![], 5, 8, 1), 0).unwrap();
        assert!(matches!(
            progressive_surgery(&net, &[BlockSpec::new(1, 8), BlockSpec::new(1, 16)], 0),
            Err(Error::Surgery(_))
        ));
    }
}

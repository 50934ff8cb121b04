//! Checks backpropagation against central finite differences, first for
//! every layer type in isolation, then for a small VGG-style network.

use prorez::net::{build_network, NetworkSpec};
use prorez::tensor::{gradcheck_layer, gradcheck_network, GradcheckOptions, Layer, LayerParams, Tensor4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor4::<f64>::random_uniform([2, 3, 6, 6], -1.0, 1.0, &mut rng);
    let layers = [
        ("conv3x3", Layer::Conv(LayerParams::he_uniform([4, 3, 3, 3], &mut rng))),
        ("relu", Layer::Relu),
        ("maxpool2", Layer::MaxPool2),
        ("linear", Layer::Linear(LayerParams::he_uniform([5, 3 * 6 * 6, 1, 1], &mut rng))),
    ];
    for (name, layer) in &layers {
        let err = gradcheck_layer(layer, &x, 1e-6, 1)?;
        println!("{name:>9}: max relative error {err:.2e}");
    }

    // Two blocks of two convolutions, one hidden FC layer, 5 classes.
    let spec = NetworkSpec::vgg(&[4, 8], 2, vec![16], 5, 8, 1);
    let net = build_network::<f64>(&spec, 3)?;
    let input = Tensor4::<f64>::random_uniform([3, 1, 8, 8], -1.0, 1.0, &mut rng);
    let report = gradcheck_network(net.layers(), &input, &[0, 3, 4], GradcheckOptions::default())?;
    println!(
        "network ({} parameters): max relative error {:.2e} over {} parameters, {} skipped at kinks",
        net.param_count(),
        report.max_rel_err,
        report.checked,
        report.skipped_kinks
    );
    Ok(())
}

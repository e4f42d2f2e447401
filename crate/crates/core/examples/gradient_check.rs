//! Compare backpropagation against central finite differences on a small
//! network with live dropout masks and both penalty terms switched on.

use ndarray::Array2;
use rand::Rng;

use connlab::network::{DropoutMasks, Network, NetworkSpec, Regularization};
use connlab::rng::stream;

fn main() -> connlab::Result<()> {
    let spec = NetworkSpec::new(6, vec![5, 4], 2, 0.3);
    let net = Network::init(spec.clone(), 1)?;
    let mut rng = stream(1, &[]);
    let x = Array2::from_shape_simple_fn((8, 6), || rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
    let masks = DropoutMasks::sample(&spec, 8, &mut rng);
    let reg = Regularization { l1: 1e-3, l2: 1e-2 };

    let (loss, grads) = net.gradients(x.view(), &labels, &masks, reg)?;
    println!(
        "loss {:.6} = data {:.6} + l1 {:.2e} + l2 {:.2e}",
        loss.total, loss.data_loss, loss.l1_term, loss.l2_term
    );

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for l in 0..net.weights().len() {
        let (rows, cols) = net.weights()[l].dim();
        for (r, c) in (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))) {
            let at = |d: f64| -> connlab::Result<f64> {
                let mut w = net.weights().to_vec();
                w[l][[r, c]] += d;
                let moved = Network::from_parts(spec.clone(), w, net.biases().to_vec())?;
                Ok(moved.loss_with(x.view(), &labels, &masks, reg)?.total)
            };
            let numeric = (at(h)? - at(-h)?) / (2.0 * h);
            let analytic = grads.weights[l][[r, c]];
            worst =
                worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8));
        }
        println!("layer {l}: {rows}x{cols} weights checked");
    }
    println!("max relative error {worst:.2e}");
    Ok(())
}

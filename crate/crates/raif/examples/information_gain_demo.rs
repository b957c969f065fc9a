//! Trains the ensemble on transitions from one region of a toy latent space,
//! then shows the information gain on seen vs unseen inputs.
//!
//!     cargo run --release -p raif --example information_gain_demo

use raif::autodiff::Tape;
use raif::ensemble::{EnsembleConfig, IgEnsemble};
use raif::nn::Adam;
use raif::rng::Rng;

fn main() {
    let mut store = raif::autodiff::ParamStore::new();
    let mut rng = Rng::from_seed(0);
    let d = 8;
    let ens = IgEnsemble::new(
        &mut store,
        EnsembleConfig {
            n_members: 5,
            in_dim: d,
            out_dim: d,
            hidden: 32,
            bias_correction: true,
        },
        &mut rng,
    );
    // transitions: next = rotate(x) + small noise, with x drawn near +1
    let gen_batch = |rng: &mut Rng, n: usize, center: f64| -> (Vec<f64>, Vec<f64>) {
        let mut x = vec![0.0; n * d];
        let mut y = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                x[i * d + j] = center + 0.3 * rng.normal();
            }
            for j in 0..d {
                y[i * d + j] = x[i * d + (j + 1) % d] + 0.01 * rng.normal();
            }
        }
        (x, y)
    };
    let mut opt = Adam::new(&store, ens.params().to_vec(), 1e-3, 100.0);
    for step in 0..600 {
        let (x, y) = gen_batch(&mut rng, 32, 1.0);
        let grads = {
            let mut t = Tape::new(&store);
            let xi = t.constant(&[32, d], x);
            let loss = ens.nll_loss_on_tape(&mut t, xi, &y);
            if step % 200 == 0 {
                println!("step {step}: ensemble NLL {:.3}", t.scalar_value(loss));
            }
            t.backward(loss)
        };
        opt.step(&mut store, &grads);
    }
    let ig_at = |center: f64, rng: &mut Rng| -> f64 {
        let mut acc = 0.0;
        let n = 200;
        for _ in 0..n {
            let (x, _) = gen_batch(rng, 1, center);
            let mut t = Tape::new(&store);
            let xi = t.constant(&[1, d], x);
            let mut noise = vec![0.0; 5 * d];
            rng.fill_normal(&mut noise);
            let ig = ens.information_gain_on_tape(&mut t, xi, &noise);
            acc += t.value(ig)[0];
        }
        acc / n as f64
    };
    println!("mean IG near the training region (+1):   {:+.3}", ig_at(1.0, &mut rng));
    println!("mean IG far from the training data (-3): {:+.3}", ig_at(-3.0, &mut rng));
    println!("(unfamiliar inputs should carry clearly higher information gain)");
}

//! Fits a small SiLU MLP to `sin(3x)` on [-1, 1] with Adam, then checks its
//! gradients against finite differences.

use coop_nn::{grad_check, Activation, Adam, GradCheckConfig, Mlp, ParameterStore, Tape, Tensor};

fn main() -> coop_nn::Result<()> {
    let mut store = ParameterStore::new(0);
    let mlp = Mlp::new(&mut store, "mlp", &[1, 32, 32, 1], Activation::Silu)?;
    let xs: Vec<f64> = (0..64).map(|k| -1.0 + 2.0 * k as f64 / 63.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();
    let x = Tensor::matrix(xs.len(), 1, xs.clone())?;
    let y = Tensor::matrix(ys.len(), 1, ys)?;

    let loss = |t: &mut Tape| -> coop_nn::Result<_> {
        let (xi, yi) = (t.input(&x), t.input(&y));
        let out = mlp.forward(t, xi)?;
        let diff = t.sub(out, yi)?;
        let sq = t.square(diff);
        Ok(t.mean_all(sq))
    };

    let mut opt = Adam::new(&store, 1e-2);
    for step in 0..=600 {
        let grads = {
            let mut t = Tape::new(&store);
            let l = loss(&mut t)?;
            if step % 100 == 0 {
                println!("step {step:>3} mse {:.5}", t.scalar(l));
            }
            t.backward(l)?
        };
        opt.step(&mut store, &grads)?;
    }

    let report = grad_check(&store, &GradCheckConfig::default(), |t| loss(t))?;
    println!("gradient check: {} coords, max relative error {:.1e}", report.checked, report.max_rel_error);
    Ok(())
}

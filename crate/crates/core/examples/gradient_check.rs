//! Central finite-difference check of the full SegResNet backward pass in f64.

use fibcap::tensornet::{build_segresnet, Mode, SegModelConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fibcap::Result<()> {
    let cfg = SegModelConfig {
        init_filters: 8,
        levels: 2,
        groups: 4,
        ..SegModelConfig::default()
    };
    let model = build_segresnet::<f64>(cfg, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::from_vec([1, 1, 6, 8], (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let fwd = |x: Tensor<f64>| model.forward(x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0));
    let trace = fwd(x.clone())?;
    let w: Vec<f64> = (0..trace.output().numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, dx) = model.backward_full(&trace, &Tensor::from_vec(trace.output().shape(), w.clone())?)?;
    let loss = |x: Tensor<f64>| -> fibcap::Result<f64> {
        Ok(fwd(x)?.output().data().iter().zip(&w).map(|(a, b)| a * b).sum())
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut up = x.data().to_vec();
        let mut down = up.clone();
        up[i] += h;
        down[i] -= h;
        let num = (loss(Tensor::from_vec(x.shape(), up)?)? - loss(Tensor::from_vec(x.shape(), down)?)?) / (2.0 * h);
        let ana = dx.data()[i];
        worst = worst.max((ana - num).abs() / ana.abs().max(num.abs()).max(1e-6));
    }
    println!("input gradient: max relative error {worst:.2e} over {} entries", x.numel());
    Ok(())
}

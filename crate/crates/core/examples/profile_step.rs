use mxa_core::model::{ForwardOpts, Model, ModelConfig};
use mxa_core::tensor::{Tape, Tensor};
use mxa_core::distill::bcewl;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let model = Model::build(ModelConfig::m5_nano(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let imgs = Tensor::new(vec![8, 1, 64, 64], (0..8*64*64).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let targets: Vec<f64> = (0..8*14).map(|_| f64::from(rng.gen_bool(0.5))).collect();

    // forward only (eval mode)
    let t0 = Instant::now();
    for _ in 0..20 {
        let t = Tape::new();
        let _ = model.forward(&t, &imgs, ForwardOpts::default()).unwrap();
    }
    println!("forward eval: {:.1} ms", t0.elapsed().as_secs_f64() * 50.0);

    // forward train
    let t0 = Instant::now();
    for _ in 0..20 {
        let t = Tape::new();
        let _ = model.forward(&t, &imgs, ForwardOpts { train: true, ..Default::default() }).unwrap();
    }
    println!("forward train: {:.1} ms", t0.elapsed().as_secs_f64() * 50.0);

    // forward + backward
    let t0 = Instant::now();
    for _ in 0..20 {
        let t = Tape::new();
        let res = model.forward(&t, &imgs, ForwardOpts { train: true, ..Default::default() }).unwrap();
        let y = t.constant(vec![8, 14], targets.clone()).unwrap();
        let l = bcewl(&t, res.logits, y).unwrap();
        t.backward(l).unwrap();
    }
    println!("forward+backward: {:.1} ms", t0.elapsed().as_secs_f64() * 50.0);

    // grads readout
    let t = Tape::new();
    let res = model.forward(&t, &imgs, ForwardOpts { train: true, ..Default::default() }).unwrap();
    println!("tape nodes: {}", t.len());
    let t0 = Instant::now();
    for _ in 0..20 {
        for (_, var) in &res.param_vars {
            let _ = t.grad_vec(*var);
        }
    }
    println!("grad readout: {:.2} ms", t0.elapsed().as_secs_f64() * 50.0);
}

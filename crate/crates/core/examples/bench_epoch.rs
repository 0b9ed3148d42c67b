use mxa_core::model::{Model, ModelConfig};
use mxa_core::train::{train, TrainConfig};
use mxa_core::train::data::Dataset;
use mxa_core::train::synth::{synth_dataset, SyntheticSpec};
use std::time::Instant;

fn main() {
    let spec = SyntheticSpec::default_desk();
    let samples = synth_dataset(&spec, 500, 1).unwrap();
    let ds = Dataset::from_synth(&samples, 64);
    let val_samples = synth_dataset(&spec, 100, 2).unwrap();
    let val = Dataset::from_synth(&val_samples, 64);
    let mut model = Model::build(ModelConfig::m5_nano(), 1).unwrap();
    let cfg = TrainConfig { total_epochs: 1, warmup_epochs: 0, ..TrainConfig::default() };
    let t0 = Instant::now();
    let out = train(&mut model, &ds, Some(&val), None, None, &cfg).unwrap();
    let dt = t0.elapsed();
    println!("1 epoch (63 steps, batch 8, n=500 train + 100 val eval x2): {:.2?}", dt);
    println!("per-step estimate incl eval: {:.1} ms", dt.as_secs_f64() * 1000.0 / out.steps as f64);
    println!("val auc_macro: {:?}", out.reports_raw[0].auc_macro);
}

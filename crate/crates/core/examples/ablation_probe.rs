use mxa_core::model::{Model, ModelConfig};
use mxa_core::train::data::Dataset;
use mxa_core::train::synth::{synth_dataset, SyntheticSpec};
use mxa_core::train::{train, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let spec = SyntheticSpec::default_desk();
    let train_samples = synth_dataset(&spec, 500, 100).unwrap();
    let ds = Dataset::from_synth(&train_samples, spec.image_size);
    let val_samples = synth_dataset(&spec, 500, 200).unwrap();
    let val = Dataset::from_synth(&val_samples, spec.image_size);

    for mxa in [true, false] {
        for seed in [0u64, 1] {
            let mut cfg_model = ModelConfig::m5_nano();
            cfg_model.mxa_enabled = mxa;
            let mut model = Model::build(cfg_model, seed).unwrap();
            let cfg = TrainConfig { total_epochs: epochs, seed, ..TrainConfig::default() };
            let t0 = Instant::now();
            let out = train(&mut model, &ds, Some(&val), None, None, &cfg).unwrap();
            let final_raw = out.reports_raw.last().unwrap();
            let final_ema = out.reports_ema.last().unwrap();
            println!(
                "mxa={mxa} seed={seed}: val macro-AUC raw={:?} ema={:?} acc={:.3} ({:.1?})",
                final_raw.auc_macro.map(|a| (a * 1e4).round() / 1e4),
                final_ema.auc_macro.map(|a| (a * 1e4).round() / 1e4),
                final_raw.acc,
                t0.elapsed()
            );
        }
    }
}

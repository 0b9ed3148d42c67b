use mxa_core::model::{Model, ModelConfig};
use mxa_core::train::data::Dataset;
use mxa_core::train::synth::{synth_dataset, SignalKind, SyntheticSpec};
use mxa_core::train::{train, TrainConfig};

fn spec_with(size: f64, intensity: f64, noise: f64) -> SyntheticSpec {
    let mut spec = SyntheticSpec::default_desk();
    spec.noise_sigma = noise;
    for s in spec.signals.iter_mut() {
        if let SignalKind::Rect { w, h, .. } = &mut s.kind {
            *w = size;
            *h = size;
            s.intensity = intensity;
        }
    }
    spec
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let size: f64 = args[1].parse().unwrap();
    let intensity: f64 = args[2].parse().unwrap();
    let noise: f64 = args[3].parse().unwrap();
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(30);
    let seed: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = spec_with(size, intensity, noise);
    let ds = Dataset::from_synth(&synth_dataset(&spec, 500, 1000).unwrap(), spec.image_size);
    let val = Dataset::from_synth(&synth_dataset(&spec, 500, 2000).unwrap(), spec.image_size);
    for mxa in [false, true] {
        let mut cfg_model = ModelConfig::m5_nano();
        cfg_model.mxa_enabled = mxa;
        let mut model = Model::build(cfg_model, seed).unwrap();
        let cfg = TrainConfig { total_epochs: epochs, seed, ..TrainConfig::default() };
        let out = train(&mut model, &ds, Some(&val), None, None, &cfg).unwrap();
        let hist: Vec<String> = out.reports_raw.iter().step_by(6)
            .map(|r| format!("{:.3}", r.auc_macro.unwrap_or(f64::NAN))).collect();
        println!("sz{size} int{intensity} n{noise} mxa={mxa} seed={seed}: final={:.4} hist=[{}]",
            out.reports_raw.last().unwrap().auc_macro.unwrap_or(f64::NAN), hist.join(","));
    }
}

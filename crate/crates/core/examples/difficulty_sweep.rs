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
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let cases = [
        ("A sz.10 int.15 n.15", spec_with(0.10, 0.15, 0.15)),
        ("B sz.08 int.12 n.20", spec_with(0.08, 0.12, 0.20)),
        ("C sz.10 int.10 n.25", spec_with(0.10, 0.10, 0.25)),
        ("D sz.12 int.18 n.20", spec_with(0.12, 0.18, 0.20)),
    ];
    for (name, spec) in &cases {
        let ds = Dataset::from_synth(&synth_dataset(spec, 500, 100).unwrap(), spec.image_size);
        let val = Dataset::from_synth(&synth_dataset(spec, 500, 200).unwrap(), spec.image_size);
        let mut row = format!("{name}:");
        for mxa in [false, true] {
            let mut cfg_model = ModelConfig::m5_nano();
            cfg_model.mxa_enabled = mxa;
            let mut model = Model::build(cfg_model, 0).unwrap();
            let cfg = TrainConfig { total_epochs: epochs, seed: 0, ..TrainConfig::default() };
            let out = train(&mut model, &ds, Some(&val), None, None, &cfg).unwrap();
            let auc = out.reports_raw.last().unwrap().auc_macro.unwrap_or(f64::NAN);
            row += &format!("  mxa={mxa}: {auc:.4}");
        }
        println!("{row}");
    }
}

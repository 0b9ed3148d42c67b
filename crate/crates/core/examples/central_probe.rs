use mxa_core::model::{Model, ModelConfig};
use mxa_core::train::data::Dataset;
use mxa_core::train::synth::{synth_dataset, SyntheticSpec};
use mxa_core::train::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = SyntheticSpec::default_desk();
    let ds = Dataset::from_synth(&synth_dataset(&spec, 500, 1000).unwrap(), spec.image_size);
    let val = Dataset::from_synth(&synth_dataset(&spec, 500, 2000).unwrap(), spec.image_size);
    for mxa in [false, true] {
        let mut cfg_model = ModelConfig::m5_nano();
        cfg_model.mxa_enabled = mxa;
        let mut model = Model::build(cfg_model, seed).unwrap();
        let cfg = TrainConfig { total_epochs: epochs, seed, ..TrainConfig::default() };
        let out = train(&mut model, &ds, Some(&val), None, None, &cfg).unwrap();
        let rep = out.reports_raw.last().unwrap();
        let per: Vec<String> = rep.auc_per_label.iter()
            .map(|a| a.map(|v| format!("{v:.2}")).unwrap_or("NaN".into())).collect();
        println!("mxa={mxa} seed={seed} epochs={epochs}: macro={:.4} per-label=[{}]",
            rep.auc_macro.unwrap_or(f64::NAN), per.join(","));
    }
}

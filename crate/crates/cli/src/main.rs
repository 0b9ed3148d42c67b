//! `mxa`: train, evaluate, gradient-check, and inspect the multi-label
//! X-ray models. Exit codes: 0 success, 1 usage/config error, 2 numeric
//! failure, 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use mxa_core::checks;
use mxa_core::distill::{
    adapt_teacher, dynamic_weights, read_teacher_csv, teacher_probs, write_adapted_csv,
    TeacherAdapterSpec, LABEL_ABBREV,
};
use mxa_core::error::Error;
use mxa_core::model::{attention_scores, Checkpoint, ForwardOpts, Model, ModelConfig};
use mxa_core::tensor::{Tape, Tensor};
use mxa_core::train::data::{load_dataset, read_pgm, write_pgm, write_synth_dataset, Dataset};
use mxa_core::train::metrics::MetricsReport;
use mxa_core::train::synth::SyntheticSpec;
use mxa_core::train::{align_teacher, evaluate, train, TeacherData, TrainConfig};

#[derive(Parser)]
#[command(name = "mxa", version, about = "Multi-label X-ray attention models: training, evaluation, and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic planted-signal dataset on disk.
    Synth(SynthArgs),
    /// Train a model from a JSON config over a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint over a dataset and print the per-label table.
    Eval(EvalArgs),
    /// Adapt raw 18-logit teacher outputs to the 14-label student space.
    AdaptTeacher(AdaptArgs),
    /// Export per-stage normalized attention heatmaps as PGM files.
    AttnMaps(AttnMapsArgs),
}

#[derive(Args)]
struct GradcheckArgs {
    /// What to check: ops, mxa, or model.
    #[arg(long, default_value = "ops")]
    scope: String,
    /// Number of random seeds per check.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Relative-error tolerance (model scope defaults to 1e-3).
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator spec JSON; the built-in desk-scale spec when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Number of samples.
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (images/ + labels.csv + spec.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config: {"model": {...}, "train": {...}, "teacher_map": {...}?}.
    #[arg(long)]
    config: PathBuf,
    /// Training dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset directory; training data is evaluated when absent.
    #[arg(long)]
    val_data: Option<PathBuf>,
    /// Raw teacher logits CSV (sample_id,o0..o17) for the training set.
    #[arg(long)]
    teacher_logits: Option<PathBuf>,
    /// Teacher logits CSV for the validation set.
    #[arg(long)]
    val_teacher_logits: Option<PathBuf>,
    /// Output directory for checkpoints, metrics, and the run manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Export predicted ROI boxes (sample_id,x1,y1,x2,y2).
    #[arg(long)]
    roi_csv: Option<PathBuf>,
}

#[derive(Args)]
struct AdaptArgs {
    /// Raw teacher logits CSV (sample_id,o0..o17).
    #[arg(long)]
    logits: PathBuf,
    /// Index map JSON ({"map": {"0": "SYNTHESIZE_NF", ...}}).
    #[arg(long)]
    map: PathBuf,
    /// Output CSV (sample_id,a0..a13 plus a dynamic-weights summary line).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttnMapsArgs {
    #[arg(long)]
    checkpoint_a: PathBuf,
    /// Second checkpoint for the comparison/delta maps.
    #[arg(long)]
    checkpoint_b: Option<PathBuf>,
    /// Input image (PGM) matching the model input size.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    model: ModelConfig,
    train: TrainConfig,
    /// Student-slot → teacher-index map; the documented default when null.
    teacher_map: Option<serde_json::Map<String, serde_json::Value>>,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig { model: ModelConfig::default(), train: TrainConfig::default(), teacher_map: None }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::Shape(_) => 1,
        Error::NonFinite(_) => 2,
        Error::Io(_) => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Ok(threads) = std::env::var("MXA_THREADS") {
        // ops execute sequentially; any cap ≥ 0 is honored trivially
        if threads.parse::<usize>().is_err() {
            eprintln!("error: MXA_THREADS must be an integer, got '{threads}'");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::AdaptTeacher(a) => cmd_adapt_teacher(a),
        Command::AttnMaps(a) => cmd_attn_maps(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<ExitCode, Error> {
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let outcomes = match a.scope.as_str() {
        "ops" => checks::ops_suite(&seeds, a.tol.unwrap_or(1e-4))?,
        "mxa" => checks::mxa_suite(&seeds, a.tol.unwrap_or(1e-4))?,
        "model" => checks::model_suite(&seeds, a.tol.unwrap_or(1e-3))?,
        other => return Err(Error::Config(format!("unknown gradcheck scope '{other}'"))),
    };
    let mut all_pass = true;
    for o in &outcomes {
        println!(
            "{} {:24} worst rel err {:.3e} (tol {:.0e})",
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.worst,
            o.tol
        );
        if let Some(d) = &o.detail {
            println!("     {d}");
        }
        all_pass &= o.pass;
    }
    if all_pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Error::NonFinite("gradient check failed".into()))
    }
}

fn cmd_synth(a: SynthArgs) -> Result<ExitCode, Error> {
    let spec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<SyntheticSpec>(&text)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        }
        None => SyntheticSpec::default_desk(),
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io(format!("{}: {e}", a.out.display())))?;
    write_synth_dataset(&a.out, &spec, a.n, a.seed)?;
    println!("wrote {} samples to {}", a.n, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn load_teacher(
    path: &Path,
    dataset: &Dataset,
    spec: &TeacherAdapterSpec,
) -> Result<TeacherData, Error> {
    let rows = read_teacher_csv(path)?;
    align_teacher(&rows, &dataset.sample_ids, spec)
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode, Error> {
    let config_text = std::fs::read_to_string(&a.config)
        .map_err(|e| Error::Io(format!("{}: {e}", a.config.display())))?;
    let cfg: FileConfig = serde_json::from_str(&config_text)
        .map_err(|e| Error::Parse(format!("{}: {e}", a.config.display())))?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    if cfg.train.alpha > 0.0 && a.teacher_logits.is_none() {
        return Err(Error::Config(
            "config has alpha > 0: teacher logits are required (--teacher-logits)".into(),
        ));
    }
    let map_spec = match &cfg.teacher_map {
        Some(map) => {
            let doc = serde_json::json!({ "map": map }).to_string();
            TeacherAdapterSpec::from_json(&doc)?
        }
        None => TeacherAdapterSpec::default_chex(),
    };

    let dataset = load_dataset(&a.data)?;
    let val = a.val_data.as_ref().map(|d| load_dataset(d)).transpose()?;
    let teacher = a
        .teacher_logits
        .as_ref()
        .map(|p| load_teacher(p, &dataset, &map_spec))
        .transpose()?;
    let val_teacher = match (&a.val_teacher_logits, &val) {
        (Some(p), Some(v)) => Some(load_teacher(p, v, &map_spec)?),
        (Some(_), None) => {
            return Err(Error::Config("--val-teacher-logits given without --val-data".into()))
        }
        _ => None,
    };

    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io(format!("{}: {e}", a.out.display())))?;
    let mut model = Model::build(cfg.model.clone(), cfg.train.seed)?;
    let out = train(
        &mut model,
        &dataset,
        val.as_ref(),
        teacher.as_ref(),
        val_teacher.as_ref(),
        &cfg.train,
    )?;

    std::fs::write(a.out.join("metrics.jsonl"), out.lines_ema.join("\n") + "\n")?;
    std::fs::write(a.out.join("metrics_raw.jsonl"), out.lines_raw.join("\n") + "\n")?;
    let ck = Checkpoint {
        config: cfg.model.clone(),
        epoch: cfg.train.total_epochs,
        params: model.params.clone(),
        ema: Some(out.ema.clone()),
        opt: Some(out.adam.to_snapshot()),
    };
    ck.save(&a.out.join("checkpoint.mxz"))?;
    let ck_ema = Checkpoint {
        config: cfg.model.clone(),
        epoch: cfg.train.total_epochs,
        params: out.ema,
        ema: None,
        opt: None,
    };
    ck_ema.save(&a.out.join("checkpoint_ema.mxz"))?;

    // run manifest: the fully resolved config plus its content hash
    let resolved = serde_json::json!({
        "model": cfg.model,
        "train": cfg.train,
        "teacher_map": map_spec.to_json(),
    });
    let canonical = serde_json::to_string(&resolved).map_err(|e| Error::Io(e.to_string()))?;
    let hash = hex_digest(canonical.as_bytes());
    let manifest = serde_json::json!({
        "config": resolved,
        "config_hash": hash,
        "seed": cfg.train.seed,
        "data": a.data.display().to_string(),
        "val_data": a.val_data.as_ref().map(|p| p.display().to_string()),
        "outputs": {
            "checkpoint": "checkpoint.mxz",
            "checkpoint_ema": "checkpoint_ema.mxz",
            "metrics": "metrics.jsonl",
            "metrics_raw": "metrics_raw.jsonl",
        },
        "steps": out.steps,
    });
    std::fs::write(
        a.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))? + "\n",
    )?;

    if let Some(last) = out.reports_ema.last() {
        print_report(last);
    }
    println!("run artifacts in {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn fmt_auc(a: Option<f64>) -> String {
    match a {
        Some(v) => format!("{v:.4}"),
        None => "NaN".to_string(),
    }
}

fn print_report(rep: &MetricsReport) {
    println!("pathology  AUC");
    for (abbrev, auc) in LABEL_ABBREV.iter().zip(&rep.auc_per_label) {
        println!("{abbrev:<9}  {}", fmt_auc(*auc));
    }
    println!(
        "macro AUC {}  micro AUC {}  acc {:.4}  F1 {:.4}  loss {:.4}",
        fmt_auc(rep.auc_macro),
        fmt_auc(rep.auc_micro),
        rep.acc,
        rep.f1,
        rep.loss
    );
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode, Error> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let dataset = load_dataset(&a.data)?;
    if dataset.image_size != ck.config.image_size {
        return Err(Error::Config(format!(
            "dataset images are {}px, checkpoint expects {}px",
            dataset.image_size, ck.config.image_size
        )));
    }
    let model = Model { cfg: ck.config.clone(), params: ck.params };
    let rep = evaluate(&model, &model.params, &dataset, None, &Default::default())?;
    print_report(&rep);
    if let Some(path) = &a.json {
        std::fs::write(
            path,
            serde_json::to_string_pretty(&rep).map_err(|e| Error::Io(e.to_string()))? + "\n",
        )?;
    }
    if let Some(path) = &a.roi_csv {
        export_roi_boxes(&model, &dataset, path)?;
    }
    Ok(ExitCode::SUCCESS)
}

/// Boxes predicted by the first MXA block, one CSV row per sample.
fn export_roi_boxes(model: &Model, dataset: &Dataset, path: &Path) -> Result<(), Error> {
    if !model.cfg.mxa_enabled {
        return Err(Error::Config("checkpoint has no MXA blocks: nothing to export".into()));
    }
    use std::io::Write;
    let mut f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    writeln!(f, "sample_id,x1,y1,x2,y2")?;
    let batch = 16;
    let mut i = 0;
    while i < dataset.len() {
        let indices: Vec<usize> = (i..(i + batch).min(dataset.len())).collect();
        let (images, _) = dataset.batch(&indices)?;
        let t = Tape::new();
        let res = model.forward(&t, &images, ForwardOpts { capture: true, ..Default::default() })?;
        for (k, &idx) in indices.iter().enumerate() {
            let b = &res.roi_boxes[k];
            writeln!(f, "{},{},{},{},{}", dataset.sample_ids[idx], b.x1, b.y1, b.x2, b.y2)?;
        }
        i += batch;
    }
    Ok(())
}

fn cmd_adapt_teacher(a: AdaptArgs) -> Result<ExitCode, Error> {
    let map_text = std::fs::read_to_string(&a.map)
        .map_err(|e| Error::Io(format!("{}: {e}", a.map.display())))?;
    let spec = TeacherAdapterSpec::from_json(&map_text)?;
    let rows = read_teacher_csv(&a.logits)?;
    let ids: Vec<String> = rows.iter().map(|(id, _)| id.clone()).collect();
    let mut flat = Vec::with_capacity(rows.len() * mxa_core::distill::TEACHER_DIM);
    for (_, row) in &rows {
        flat.extend_from_slice(row);
    }
    let raw = Tensor::new(vec![rows.len(), mxa_core::distill::TEACHER_DIM], flat)?;
    let adapted = adapt_teacher(&raw, &spec)?;
    let probs = teacher_probs(&adapted.logits, 1.0);
    let weights = dynamic_weights(&probs, &adapted.active)?;
    write_adapted_csv(&a.out, &ids, &adapted, &weights)?;
    println!("adapted {} rows to {}", rows.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_attn_maps(a: AttnMapsArgs) -> Result<ExitCode, Error> {
    let ck_a = Checkpoint::load(&a.checkpoint_a)?;
    let (w, h, pixels) = read_pgm(&a.image)?;
    if w != ck_a.config.image_size || h != ck_a.config.image_size {
        return Err(Error::Config(format!(
            "image is {w}x{h}, model expects {0}x{0}",
            ck_a.config.image_size
        )));
    }
    let image = Tensor::new(vec![1, 1, h, w], pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io(format!("{}: {e}", a.out.display())))?;

    let model_a = Model { cfg: ck_a.config.clone(), params: ck_a.params };
    let (grids_a, maps_a) = attention_scores(&model_a, &model_a.params, &image)?;
    let to_bytes = |m: &[f64]| -> Vec<u8> { m.iter().map(|&v| (v * 255.0).round() as u8).collect() };
    for (i, ((gh, gw), stage)) in grids_a.iter().zip(&maps_a).enumerate() {
        write_pgm(&a.out.join(format!("a_stage{i}.pgm")), *gw, *gh, &to_bytes(&stage[0]))?;
    }

    if let Some(path_b) = &a.checkpoint_b {
        let ck_b = Checkpoint::load(path_b)?;
        if ck_b.config.image_size != ck_a.config.image_size {
            return Err(Error::Config("checkpoints have different input sizes".into()));
        }
        let model_b = Model { cfg: ck_b.config.clone(), params: ck_b.params };
        let (grids_b, maps_b) = attention_scores(&model_b, &model_b.params, &image)?;
        if grids_b != grids_a {
            return Err(Error::Config("checkpoints have different stage grids".into()));
        }
        for (i, ((gh, gw), stage)) in grids_b.iter().zip(&maps_b).enumerate() {
            write_pgm(&a.out.join(format!("b_stage{i}.pgm")), *gw, *gh, &to_bytes(&stage[0]))?;
            // signed difference, 128 = no change
            let delta: Vec<u8> = maps_a[i][0]
                .iter()
                .zip(&stage[0])
                .map(|(&av, &bv)| (128.0 + (av - bv) * 127.0).round().clamp(0.0, 255.0) as u8)
                .collect();
            write_pgm(&a.out.join(format!("delta_stage{i}.pgm")), *gw, *gh, &delta)?;
        }
    }
    println!("attention maps written to {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

//! Miniature EfficientViT-style multi-label backbone: patch embedding,
//! three stages of windowed attention fused in parallel with the MXA block,
//! strided-conv downsampling between stages, and a 14-logit linear head.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{parallel_fuse, received_mass, windowed_mhsa, AttentionConfig, TokenGrid};
use crate::error::{Error, Result};
use crate::mxa::{mxa_forward, CbamVars, RoiBox, RoiPredictorVars};
use crate::tensor::{serial, Tape, Tensor, VarId};

/// Smallest grid side the ROI predictor accepts; stages below this run
/// attention-only.
pub const MIN_MXA_GRID: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub widths: [usize; 3],
    pub depths: [usize; 3],
    pub heads: [usize; 3],
    pub patch_size: usize,
    pub window: usize,
    pub image_size: usize,
    pub num_labels: usize,
    pub mxa_enabled: bool,
    pub cbam_reduction: usize,
    pub cbam_spatial_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::m5_nano()
    }
}

impl ModelConfig {
    /// Desk-scale default.
    pub fn m5_nano() -> Self {
        ModelConfig {
            widths: [16, 24, 32],
            depths: [1, 3, 4],
            heads: [2, 2, 4],
            patch_size: 8,
            window: 7,
            image_size: 64,
            num_labels: 14,
            mxa_enabled: true,
            cbam_reduction: 4,
            cbam_spatial_kernel: 7,
        }
    }

    /// Full-size M5 preset; kept for shape tests and documentation.
    pub fn m5() -> Self {
        Self::m_variant(5).expect("M5 exists")
    }

    /// Full-size design-space variants M0–M5 (224px input, patch 16).
    pub fn m_variant(index: usize) -> Option<Self> {
        let (widths, depths, heads) = match index {
            0 => ([64, 128, 192], [1, 2, 3], [4, 4, 4]),
            1 => ([128, 144, 192], [1, 2, 3], [2, 3, 3]),
            2 => ([128, 192, 224], [1, 2, 3], [4, 3, 2]),
            3 => ([128, 240, 320], [1, 2, 3], [4, 3, 4]),
            4 => ([128, 256, 384], [1, 2, 3], [4, 4, 4]),
            5 => ([192, 288, 384], [1, 3, 4], [3, 3, 4]),
            _ => return None,
        };
        Some(ModelConfig {
            widths,
            depths,
            heads,
            patch_size: 16,
            window: 7,
            image_size: 224,
            num_labels: 14,
            mxa_enabled: true,
            cbam_reduction: 4,
            cbam_spatial_kernel: 7,
        })
    }

    /// Tiny configuration for whole-model gradient checks. Patch 2 keeps the
    /// first stage grid at 4×4 so one MXA block participates.
    pub fn toy_8x8() -> Self {
        ModelConfig {
            widths: [4, 6, 8],
            depths: [1, 1, 1],
            heads: [2, 2, 2],
            patch_size: 2,
            window: 7,
            image_size: 8,
            num_labels: 14,
            mxa_enabled: true,
            cbam_reduction: 2,
            cbam_spatial_kernel: 7,
        }
    }

    /// Stages that carry an MXA block: the ROI predictor needs a feature map
    /// of at least [`MIN_MXA_GRID`]×[`MIN_MXA_GRID`].
    pub fn mxa_stages(&self) -> [bool; 3] {
        let grids = self.grid_sides();
        [
            self.mxa_enabled && grids[0] >= MIN_MXA_GRID,
            self.mxa_enabled && grids[1] >= MIN_MXA_GRID,
            self.mxa_enabled && grids[2] >= MIN_MXA_GRID,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be ≥ 1".into()));
        }
        if self.num_labels == 0 {
            return Err(Error::Config("num_labels must be ≥ 1".into()));
        }
        if self.cbam_spatial_kernel % 2 == 0 {
            return Err(Error::Config("cbam_spatial_kernel must be odd".into()));
        }
        for i in 0..3 {
            if self.heads[i] == 0 || self.widths[i] % self.heads[i] != 0 {
                return Err(Error::Config(format!(
                    "stage {i}: width {} not divisible by heads {}",
                    self.widths[i], self.heads[i]
                )));
            }
            if self.depths[i] == 0 {
                return Err(Error::Config(format!("stage {i}: depth must be ≥ 1")));
            }
            if self.mxa_enabled
                && (self.cbam_reduction == 0 || self.widths[i] % self.cbam_reduction != 0)
            {
                return Err(Error::Config(format!(
                    "stage {i}: width {} not divisible by cbam reduction {}",
                    self.widths[i], self.cbam_reduction
                )));
            }
        }
        for (i, g) in self.grid_sides().iter().enumerate() {
            if *g == 0 {
                return Err(Error::Config(format!("stage {i}: token grid collapses to zero")));
            }
        }
        Ok(())
    }

    /// Token-grid side length per stage: patch grid, then ceil-halved twice.
    pub fn grid_sides(&self) -> [usize; 3] {
        let g1 = self.image_size / self.patch_size.max(1);
        let g2 = g1.div_ceil(2);
        [g1, g2, g2.div_ceil(2)]
    }
}

/// Named parameter tensors in deterministic (sorted) order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.map.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.map.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }
}

fn name_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOpts {
    /// Register parameters as differentiable leaves.
    pub train: bool,
    /// Collect per-stage attention masses and ROI boxes.
    pub capture: bool,
    /// Keep MXA parameters out of the fusion (zeroed-branch ablation).
    pub ablate_mxa: bool,
}

pub struct ForwardResult {
    pub logits: VarId,
    /// Tape leaves for every parameter, keyed by name.
    pub param_vars: BTreeMap<String, VarId>,
    /// When captured: per stage, per batch element, raw received attention
    /// mass on the stage grid (row-major).
    pub stage_mass: Vec<Vec<Vec<f64>>>,
    pub stage_grids: Vec<(usize, usize)>,
    /// When captured and MXA is active: boxes of the first MXA block.
    pub roi_boxes: Vec<RoiBox>,
}

impl Model {
    /// Deterministic build. Each tensor is initialized from a stream keyed
    /// by (seed, name), so shared submodules are identical across configs
    /// that differ only in unrelated parts.
    pub fn build(cfg: ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut params = ParamStore::default();
        let mut add = |name: String, shape: Vec<usize>, fan_in: usize| {
            let n: usize = shape.iter().product();
            let mut rng = name_rng(seed, &name);
            let bound = (1.0 / fan_in.max(1) as f64).sqrt();
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            params.insert(&name, Tensor::new(shape, values).expect("shape/value mismatch"));
        };
        let zeros = |params: &mut ParamStore, name: String, shape: Vec<usize>| {
            params.insert(&name, Tensor::zeros(shape));
        };

        let p2 = cfg.patch_size * cfg.patch_size;
        let g1 = cfg.image_size / cfg.patch_size;
        let mxa_stages = cfg.mxa_stages();
        add("patch.weight".into(), vec![p2, cfg.widths[0]], p2);
        add("patch.pos".into(), vec![g1 * g1, cfg.widths[0]], cfg.widths[0]);

        for i in 0..3 {
            let c = cfg.widths[i];
            for j in 0..cfg.depths[i] {
                let p = format!("s{i}.b{j}");
                for w in ["wq", "wk", "wv", "wo"] {
                    add(format!("{p}.attn.{w}"), vec![c, c], c);
                }
                add(format!("{p}.mlp.w1"), vec![c, 2 * c], c);
                add(format!("{p}.mlp.w2"), vec![2 * c, c], 2 * c);
                if mxa_stages[i] {
                    add(format!("{p}.mxa.conv1"), vec![c, c, 3, 3], c * 9);
                    add(format!("{p}.mxa.conv2"), vec![c, c, 3, 3], c * 9);
                    add(format!("{p}.mxa.fc_w"), vec![c, 4], c);
                    let r = cfg.cbam_reduction;
                    add(format!("{p}.mxa.w1"), vec![c, c / r], c);
                    add(format!("{p}.mxa.w2"), vec![c / r, c], c / r);
                    let k = cfg.cbam_spatial_kernel;
                    add(format!("{p}.mxa.spatial"), vec![1, 2, k, k], 2 * k * k);
                }
            }
            if i < 2 {
                add(format!("down{i}.weight"), vec![cfg.widths[i + 1], c, 3, 3], c * 9);
            }
        }
        add("head.weight".into(), vec![cfg.widths[2], cfg.num_labels], cfg.widths[2]);

        // biases start at zero
        zeros(&mut params, "patch.bias".into(), vec![cfg.widths[0]]);
        for i in 0..3 {
            let c = cfg.widths[i];
            for j in 0..cfg.depths[i] {
                let p = format!("s{i}.b{j}");
                for b in ["bq", "bk", "bv", "bo"] {
                    zeros(&mut params, format!("{p}.attn.{b}"), vec![c]);
                }
                zeros(&mut params, format!("{p}.mlp.b1"), vec![2 * c]);
                zeros(&mut params, format!("{p}.mlp.b2"), vec![c]);
                if mxa_stages[i] {
                    zeros(&mut params, format!("{p}.mxa.fc_b"), vec![4]);
                }
            }
            if i < 2 {
                zeros(&mut params, format!("down{i}.bias"), vec![cfg.widths[i + 1]]);
            }
        }
        zeros(&mut params, "head.bias".into(), vec![cfg.num_labels]);

        Ok(Model { cfg, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    pub fn forward(&self, t: &Tape, images: &Tensor, opts: ForwardOpts) -> Result<ForwardResult> {
        self.forward_with(t, &self.params, images, opts)
    }

    /// Forward pass with an explicit parameter store (e.g. EMA shadows).
    /// The store must match this model's architecture.
    pub fn forward_with(
        &self,
        t: &Tape,
        params: &ParamStore,
        images: &Tensor,
        opts: ForwardOpts,
    ) -> Result<ForwardResult> {
        let cfg = &self.cfg;
        let s = images.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != cfg.image_size || s[3] != cfg.image_size {
            return Err(Error::Shape(format!(
                "forward: images {s:?}, expected [B,1,{0},{0}]",
                cfg.image_size
            )));
        }
        if images.values().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Config("forward: pixel values must lie in [0,1]".into()));
        }
        let b = s[0];

        let mut vars: BTreeMap<String, VarId> = BTreeMap::new();
        for (name, tensor) in params.iter() {
            let mut leaf = tensor.clone();
            leaf.zero_grad();
            let v = if opts.train { t.var(leaf) } else { t.leaf(leaf) };
            vars.insert(name.clone(), v);
        }
        let v = |name: &str| -> Result<VarId> {
            vars.get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
        };

        // patch embedding: non-overlapping patches → linear projection,
        // plus a learned per-position table
        let p = cfg.patch_size;
        let mut gh = cfg.image_size / p;
        let mut gw = gh;
        let img = t.leaf(images.clone());
        let split = t.reshape(img, vec![b, 1, gh, p, gw, p])?;
        let patches = t.permute(split, &[0, 2, 4, 1, 3, 5])?;
        let flat = t.reshape(patches, vec![b, gh * gw, p * p])?;
        let proj = t.matmul(flat, v("patch.weight")?)?;
        let proj = t.add_bias(proj, v("patch.bias")?)?;
        let mut tokens = t.add_bias(proj, v("patch.pos")?)?;

        let mut stage_mass: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut stage_grids: Vec<(usize, usize)> = Vec::new();
        let mut roi_boxes: Vec<RoiBox> = Vec::new();
        let mxa_stages = cfg.mxa_stages();

        for i in 0..3 {
            let c = cfg.widths[i];
            let mut mass_acc: Vec<Vec<f64>> = vec![vec![0.0; gh * gw]; if opts.capture { b } else { 0 }];
            for j in 0..cfg.depths[i] {
                let pfx = format!("s{i}.b{j}");
                let grid = TokenGrid::new(t, tokens, gh, gw)?;
                let attn_cfg = AttentionConfig::new(c, cfg.heads[i])?
                    .with_window(cfg.window.min(gh).min(gw))?;
                let attn_params = crate::attention::AttentionParams {
                    wq: v(&format!("{pfx}.attn.wq"))?,
                    bq: v(&format!("{pfx}.attn.bq"))?,
                    wk: v(&format!("{pfx}.attn.wk"))?,
                    bk: v(&format!("{pfx}.attn.bk"))?,
                    wv: v(&format!("{pfx}.attn.wv"))?,
                    bv: v(&format!("{pfx}.attn.bv"))?,
                    wo: v(&format!("{pfx}.attn.wo"))?,
                    bo: v(&format!("{pfx}.attn.bo"))?,
                };
                let (attn_out, info) = windowed_mhsa(t, &grid, &attn_cfg, &attn_params)?;
                if opts.capture {
                    let m = received_mass(t, &info, b);
                    for (acc, row) in mass_acc.iter_mut().zip(m) {
                        for (a, x) in acc.iter_mut().zip(row) {
                            *a += x;
                        }
                    }
                }
                let f_mhsa = attn_out.to_map(t)?;
                let fused = if mxa_stages[i] && !opts.ablate_mxa {
                    let x_map = grid.to_map(t)?;
                    let roi = RoiPredictorVars {
                        conv1: v(&format!("{pfx}.mxa.conv1"))?,
                        conv2: v(&format!("{pfx}.mxa.conv2"))?,
                        fc_w: v(&format!("{pfx}.mxa.fc_w"))?,
                        fc_b: v(&format!("{pfx}.mxa.fc_b"))?,
                    };
                    let cbam = CbamVars {
                        w1: v(&format!("{pfx}.mxa.w1"))?,
                        w2: v(&format!("{pfx}.mxa.w2"))?,
                        spatial: v(&format!("{pfx}.mxa.spatial"))?,
                    };
                    let out = mxa_forward(t, x_map, &roi, &cbam)?;
                    if opts.capture && roi_boxes.is_empty() {
                        roi_boxes = crate::mxa::boxes_to_list(t, out.boxes)?;
                    }
                    parallel_fuse(t, f_mhsa, out.out)?
                } else {
                    f_mhsa
                };
                let fused_tokens = TokenGrid::from_map(t, fused)?.tokens;
                let x1 = t.add(tokens, fused_tokens)?;
                let h = t.relu(t.add_bias(t.matmul(x1, v(&format!("{pfx}.mlp.w1"))?)?, v(&format!("{pfx}.mlp.b1"))?)?)?;
                let m = t.add_bias(t.matmul(h, v(&format!("{pfx}.mlp.w2"))?)?, v(&format!("{pfx}.mlp.b2"))?)?;
                tokens = t.add(x1, m)?;
                t.assert_finite(tokens, &format!("{pfx} output"))?;
            }
            if opts.capture {
                let blocks = cfg.depths[i] as f64;
                for row in mass_acc.iter_mut() {
                    row.iter_mut().for_each(|x| *x /= blocks);
                }
                stage_mass.push(mass_acc);
                stage_grids.push((gh, gw));
            }

            if i < 2 {
                // 3×3 stride-2 downsample with exact output size: even grids
                // get one zero row/col of asymmetric padding, odd grids use
                // symmetric padding 1; both produce ceil(g/2)
                let grid = TokenGrid::new(t, tokens, gh, gw)?;
                let mut map = grid.to_map(t)?;
                let pad_sym;
                if gh % 2 == 0 {
                    let z_row = t.constant(vec![b, c, 1, gw], vec![0.0; b * c * gw])?;
                    map = t.concat(&[map, z_row], 2)?;
                    let z_col = t.constant(vec![b, c, gh + 1, 1], vec![0.0; b * c * (gh + 1)])?;
                    map = t.concat(&[map, z_col], 3)?;
                    pad_sym = 0;
                } else {
                    pad_sym = 1;
                }
                let down = t.conv2d(map, v(&format!("down{i}.weight"))?, 2, pad_sym)?;
                let down = t.add_channel(down, v(&format!("down{i}.bias"))?)?;
                let g2 = TokenGrid::from_map(t, down)?;
                tokens = g2.tokens;
                gh = g2.grid_h;
                gw = g2.grid_w;
            }
        }

        let pooled = t.mean_axes(tokens, &[1])?; // [B, C3]
        let logits = t.add_bias(t.matmul(pooled, v("head.weight")?)?, v("head.bias")?)?;
        t.assert_finite(logits, "head logits")?;

        Ok(ForwardResult { logits, param_vars: vars, stage_mass, stage_grids, roi_boxes })
    }
}

/// Min-max normalize a mass map to [0,1]; a flat map normalizes to all-ones.
pub fn normalize_mass(mass: &[f64]) -> Vec<f64> {
    let mn = mass.iter().copied().fold(f64::INFINITY, f64::min);
    let mx = mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(mx - mn).is_finite() || mx - mn < 1e-12 {
        return vec![1.0; mass.len()];
    }
    mass.iter().map(|&m| (m - mn) / (mx - mn)).collect()
}

/// Per-stage normalized attention maps for a batch of images.
pub fn attention_scores(
    model: &Model,
    params: &ParamStore,
    images: &Tensor,
) -> Result<(Vec<(usize, usize)>, Vec<Vec<Vec<f64>>>)> {
    let t = Tape::new();
    let res = model.forward_with(&t, params, images, ForwardOpts { capture: true, ..Default::default() })?;
    let normalized = res
        .stage_mass
        .iter()
        .map(|per_batch| per_batch.iter().map(|m| normalize_mass(m)).collect())
        .collect();
    Ok((res.stage_grids, normalized))
}

// ── checkpoint archive ──────────────────────────────────────────────────

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MXAZ";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    key: String,
    offset: u64,
    len: u64,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    epoch: usize,
    config: ModelConfig,
    entries: Vec<ManifestEntry>,
    opt_step: Option<u64>,
    opt_rejected: Option<u64>,
}

/// Optimizer moments snapshot stored alongside parameters.
#[derive(Debug, Clone, Default)]
pub struct OptSnapshot {
    pub m: ParamStore,
    pub v: ParamStore,
    pub step: u64,
    pub rejected: u64,
}

/// Everything needed to resume or evaluate a run: parameters, EMA shadows,
/// optimizer state, epoch counter, and the config echo. Values are stored
/// through the f32 tensor container, so save→load→save is byte-stable.
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub params: ParamStore,
    pub ema: Option<ParamStore>,
    pub opt: Option<OptSnapshot>,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut entries = Vec::new();
        let mut blobs: Vec<u8> = Vec::new();
        let push_store = |prefix: &str, store: &ParamStore, entries: &mut Vec<ManifestEntry>, blobs: &mut Vec<u8>| {
            for (name, tensor) in store.iter() {
                let bytes = serial::tensor_to_bytes(tensor);
                entries.push(ManifestEntry {
                    key: format!("{prefix}/{name}"),
                    offset: blobs.len() as u64,
                    len: bytes.len() as u64,
                    shape: tensor.shape().to_vec(),
                });
                blobs.extend_from_slice(&bytes);
            }
        };
        push_store("param", &self.params, &mut entries, &mut blobs);
        if let Some(ema) = &self.ema {
            push_store("ema", ema, &mut entries, &mut blobs);
        }
        if let Some(opt) = &self.opt {
            push_store("opt_m", &opt.m, &mut entries, &mut blobs);
            push_store("opt_v", &opt.v, &mut entries, &mut blobs);
        }
        let manifest = Manifest {
            version: 1,
            epoch: self.epoch,
            config: self.config.clone(),
            entries,
            opt_step: self.opt.as_ref().map(|o| o.step),
            opt_rejected: self.opt.as_ref().map(|o| o.rejected),
        };
        let mjson = serde_json::to_vec(&manifest).map_err(|e| Error::Io(e.to_string()))?;
        let mut out: Vec<u8> = Vec::with_capacity(16 + mjson.len() + blobs.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(mjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&mjson);
        out.extend_from_slice(&blobs);
        std::fs::write(path, out).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        let data = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        if data.len() < 12 || &data[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Parse(format!("{}: not a checkpoint archive", path.display())));
        }
        let mlen = u64::from_le_bytes(data[4..12].try_into().unwrap()) as usize;
        if data.len() < 12 + mlen {
            return Err(Error::Parse(format!("{}: truncated manifest", path.display())));
        }
        let manifest: Manifest = serde_json::from_slice(&data[12..12 + mlen])
            .map_err(|e| Error::Parse(format!("{}: manifest: {e}", path.display())))?;
        if manifest.version != 1 {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", manifest.version)));
        }
        let blobs = &data[12 + mlen..];
        let mut params = ParamStore::default();
        let mut ema = ParamStore::default();
        let mut opt_m = ParamStore::default();
        let mut opt_v = ParamStore::default();
        for e in &manifest.entries {
            let (start, end) = (e.offset as usize, (e.offset + e.len) as usize);
            if end > blobs.len() {
                return Err(Error::Parse(format!("entry '{}' out of bounds", e.key)));
            }
            let tensor = serial::tensor_from_bytes(&blobs[start..end])?;
            if tensor.shape() != e.shape.as_slice() {
                return Err(Error::Parse(format!("entry '{}' shape mismatch", e.key)));
            }
            let (prefix, name) = e
                .key
                .split_once('/')
                .ok_or_else(|| Error::Parse(format!("bad entry key '{}'", e.key)))?;
            match prefix {
                "param" => params.insert(name, tensor),
                "ema" => ema.insert(name, tensor),
                "opt_m" => opt_m.insert(name, tensor),
                "opt_v" => opt_v.insert(name, tensor),
                other => return Err(Error::Parse(format!("unknown entry prefix '{other}'"))),
            }
        }
        let opt = manifest.opt_step.map(|step| OptSnapshot {
            m: opt_m,
            v: opt_v,
            step,
            rejected: manifest.opt_rejected.unwrap_or(0),
        });
        Ok(Checkpoint {
            config: manifest.config,
            epoch: manifest.epoch,
            params,
            ema: if ema.is_empty() { None } else { Some(ema) },
            opt,
        })
    }
}

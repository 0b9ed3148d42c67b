//! Label handling and the loss stack: U-1 target construction, stable
//! BCE-with-logits, the 18→14 teacher adapter with No-Finding synthesis,
//! dynamic per-label weights, and the blended training objective.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, softplus, Tape, Tensor, VarId};

pub const NUM_LABELS: usize = 14;
pub const TEACHER_DIM: usize = 18;

/// Student label order (CheXpert column order).
pub const LABEL_ABBREV: [&str; NUM_LABELS] =
    ["NF", "ECM", "CM", "LO", "LL", "ED", "CON", "PNA", "ATL", "PTX", "PE", "PO", "FX", "SD"];

pub const LABEL_NAMES: [&str; NUM_LABELS] = [
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
];

/// One raw label cell: 1, 0, −1, or blank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawLabel {
    Positive,
    Negative,
    Uncertain,
    Blank,
}

/// Parse a CheXpert-style label cell. Accepts integer and float spellings.
pub fn parse_label_cell(cell: &str) -> Result<RawLabel> {
    match cell.trim() {
        "" => Ok(RawLabel::Blank),
        "1" | "1.0" => Ok(RawLabel::Positive),
        "0" | "0.0" => Ok(RawLabel::Negative),
        "-1" | "-1.0" => Ok(RawLabel::Uncertain),
        other => Err(Error::Parse(format!("unknown label symbol '{other}'"))),
    }
}

/// U-1 protocol: 1 and −1 (uncertain) map to 1, everything else to 0.
pub fn u1_map(row: &[RawLabel]) -> Vec<f64> {
    row.iter()
        .map(|l| match l {
            RawLabel::Positive | RawLabel::Uncertain => 1.0,
            RawLabel::Negative | RawLabel::Blank => 0.0,
        })
        .collect()
}

/// How one student slot is filled from the teacher output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotMap {
    /// Copy the teacher logit at this index verbatim.
    Teacher(usize),
    /// Synthesize the No-Finding logit from all teacher probabilities.
    SynthesizeNf,
    /// No teacher counterpart: logit 0 and excluded from the KD loss.
    Zero,
}

/// The 18→14 index map. Loaded from JSON of the form
/// `{"map": {"0": "SYNTHESIZE_NF", "1": 17, ..., "13": "ZERO"}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeacherAdapterSpec {
    slots: [SlotMap; NUM_LABELS],
}

impl TeacherAdapterSpec {
    pub fn new(slots: [SlotMap; NUM_LABELS]) -> Result<Self> {
        let mut nf = 0;
        let mut used = [false; TEACHER_DIM];
        for (i, s) in slots.iter().enumerate() {
            match s {
                SlotMap::SynthesizeNf => nf += 1,
                SlotMap::Teacher(t) => {
                    if *t >= TEACHER_DIM {
                        return Err(Error::Config(format!(
                            "adapter: teacher index {t} out of range for slot {i}"
                        )));
                    }
                    if used[*t] {
                        return Err(Error::Config(format!("adapter: teacher index {t} used twice")));
                    }
                    used[*t] = true;
                }
                SlotMap::Zero => {}
            }
        }
        if nf != 1 {
            return Err(Error::Config(format!(
                "adapter: exactly one SYNTHESIZE_NF slot required, found {nf}"
            )));
        }
        Ok(TeacherAdapterSpec { slots })
    }

    pub fn slots(&self) -> &[SlotMap; NUM_LABELS] {
        &self.slots
    }

    /// True for slots that carry teacher signal into the KD loss.
    pub fn kd_active(&self) -> [bool; NUM_LABELS] {
        let mut a = [false; NUM_LABELS];
        for (i, s) in self.slots.iter().enumerate() {
            a[i] = !matches!(s, SlotMap::Zero);
        }
        a
    }

    pub fn from_json(json: &str) -> Result<Self> {
        #[derive(serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            map: BTreeMap<String, serde_json::Value>,
        }
        let doc: Doc =
            serde_json::from_str(json).map_err(|e| Error::Parse(format!("adapter map: {e}")))?;
        let mut slots = [SlotMap::Zero; NUM_LABELS];
        let mut seen = [false; NUM_LABELS];
        for (k, v) in &doc.map {
            let idx: usize = k
                .parse()
                .map_err(|_| Error::Parse(format!("adapter map: bad student index '{k}'")))?;
            if idx >= NUM_LABELS {
                return Err(Error::Parse(format!("adapter map: student index {idx} out of range")));
            }
            if seen[idx] {
                return Err(Error::Parse(format!("adapter map: student index {idx} repeated")));
            }
            seen[idx] = true;
            slots[idx] = match v {
                serde_json::Value::String(s) if s == "SYNTHESIZE_NF" => SlotMap::SynthesizeNf,
                serde_json::Value::String(s) if s == "ZERO" => SlotMap::Zero,
                serde_json::Value::Number(n) => {
                    let t = n
                        .as_u64()
                        .ok_or_else(|| Error::Parse(format!("adapter map: bad teacher index {n}")))?;
                    SlotMap::Teacher(t as usize)
                }
                other => {
                    return Err(Error::Parse(format!("adapter map: bad entry {other} for slot {idx}")))
                }
            };
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Parse("adapter map: every student index 0..13 must appear".into()));
        }
        Self::new(slots)
    }

    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        for (i, s) in self.slots.iter().enumerate() {
            let v = match s {
                SlotMap::Teacher(t) => serde_json::json!(t),
                SlotMap::SynthesizeNf => serde_json::json!("SYNTHESIZE_NF"),
                SlotMap::Zero => serde_json::json!("ZERO"),
            };
            map.insert(i.to_string(), v);
        }
        serde_json::json!({ "map": map }).to_string()
    }

    /// Default map aligned to the TorchXRayVision 18-label order
    /// (ATL, CON, INF, PTX, ED, EMP, FIB, PE, PNA, PT, CM, NOD, MASS,
    /// HERNIA, LL, FX, LO, ECM). Pleural Other and Support Devices have no
    /// teacher counterpart and map to ZERO.
    pub fn default_chex() -> Self {
        use SlotMap::*;
        TeacherAdapterSpec {
            slots: [
                SynthesizeNf, // NF
                Teacher(17),  // ECM
                Teacher(10),  // CM
                Teacher(16),  // LO
                Teacher(14),  // LL
                Teacher(4),   // ED
                Teacher(1),   // CON
                Teacher(8),   // PNA
                Teacher(0),   // ATL
                Teacher(3),   // PTX
                Teacher(7),   // PE
                Zero,         // PO
                Teacher(15),  // FX
                Zero,         // SD
            ],
        }
    }
}

/// Synthesized No-Finding logit for one teacher row, with its log-probability.
///
/// log p_NF = Σᵢ log(1 − σ(oᵢ)) = Σᵢ −softplus(oᵢ), and
/// logit = log p_NF − log(1 − p_NF), clamped to ±30 (σ⁻¹ diverges as
/// p_NF → {0,1}).
pub fn synthesize_nf(row: &[f64]) -> (f64, f64, bool) {
    let log_p: f64 = row.iter().map(|&o| -softplus(o)).sum();
    // log(1−p) via expm1 for p close to 0 or 1
    let log_1mp = (-log_p.exp_m1()).ln();
    let logit = log_p - log_1mp;
    let clamped = !(-30.0..=30.0).contains(&logit) || !logit.is_finite();
    (logit.clamp(-30.0, 30.0), log_p, clamped)
}

pub struct AdaptedTeacher {
    /// [B,14] adapted logits.
    pub logits: Tensor,
    /// Which student labels carry teacher signal (ZERO slots are false).
    pub active: [bool; NUM_LABELS],
    /// Number of rows whose synthesized NF logit hit the ±30 clamp.
    pub clamped: usize,
}

/// Map raw [B,18] teacher logits into the student's 14-label space.
pub fn adapt_teacher(o_t: &Tensor, spec: &TeacherAdapterSpec) -> Result<AdaptedTeacher> {
    let s = o_t.shape();
    if s.len() != 2 || s[1] != TEACHER_DIM {
        return Err(Error::Shape(format!("adapt_teacher: expected [B,{TEACHER_DIM}], got {s:?}")));
    }
    if !o_t.all_finite() {
        return Err(Error::NonFinite("adapt_teacher: teacher logits".into()));
    }
    let b = s[0];
    let mut out = vec![0.0; b * NUM_LABELS];
    let mut clamped = 0;
    for bi in 0..b {
        let row = &o_t.values()[bi * TEACHER_DIM..(bi + 1) * TEACHER_DIM];
        for (k, slot) in spec.slots.iter().enumerate() {
            out[bi * NUM_LABELS + k] = match slot {
                SlotMap::Teacher(t) => row[*t],
                SlotMap::Zero => 0.0,
                SlotMap::SynthesizeNf => {
                    let (logit, _, was_clamped) = synthesize_nf(row);
                    if was_clamped {
                        clamped += 1;
                    }
                    logit
                }
            };
        }
    }
    if clamped > 0 {
        log::warn!("adapt_teacher: NF logit clamped to ±30 on {clamped} rows");
    }
    Ok(AdaptedTeacher {
        logits: Tensor::new(vec![b, NUM_LABELS], out)?,
        active: spec.kd_active(),
        clamped,
    })
}

/// Teacher probabilities σ(adapted / τ) as a plain tensor.
pub fn teacher_probs(adapted: &Tensor, tau: f64) -> Tensor {
    let vals = adapted.values().iter().map(|&o| sigmoid(o / tau)).collect();
    Tensor::new(adapted.shape().to_vec(), vals).expect("same shape")
}

/// Dynamic label weights w_j = 1 − (1/B) Σᵢ p_t[i,j]; labels without teacher
/// signal get weight 0 regardless.
pub fn dynamic_weights(p_t: &Tensor, active: &[bool; NUM_LABELS]) -> Result<Vec<f64>> {
    let s = p_t.shape();
    if s.len() != 2 || s[1] != NUM_LABELS {
        return Err(Error::Shape(format!("dynamic_weights: expected [B,{NUM_LABELS}], got {s:?}")));
    }
    if p_t.values().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Config("dynamic_weights: probabilities must lie in [0,1]".into()));
    }
    let b = s[0];
    let mut w = vec![0.0; NUM_LABELS];
    for j in 0..NUM_LABELS {
        if !active[j] {
            continue;
        }
        let mean: f64 = (0..b).map(|i| p_t.values()[i * NUM_LABELS + j]).sum::<f64>() / b as f64;
        w[j] = 1.0 - mean;
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub temperature: f64,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.0, temperature: 1.0 }
    }
}

/// Ground-truth loss: elementwise stable BCE on logits, summed over classes
/// and averaged over the batch.
pub fn bcewl(t: &Tape, logits: VarId, targets: VarId) -> Result<VarId> {
    let s = t.shape_of(logits);
    if s.len() != 2 {
        return Err(Error::Shape(format!("bcewl: expected [B,C] logits, got {s:?}")));
    }
    let bad = t.with_values(targets, |y| y.iter().any(|v| !(0.0..=1.0).contains(v)));
    if bad {
        return Err(Error::Config("bcewl: targets must lie in [0,1]".into()));
    }
    let elem = t.bce_with_logits(logits, targets)?;
    let total = t.sum_all(elem)?;
    t.scale(total, 1.0 / s[0] as f64)
}

/// Soft distillation: per-label BCE against teacher probabilities
/// (batch-mean within each label), scaled by the dynamic weight, averaged
/// over the label count. Weight-0 labels contribute exactly nothing.
pub fn kd_soft_loss(t: &Tape, o_s: VarId, p_t: VarId, w: &[f64]) -> Result<VarId> {
    let s = t.shape_of(o_s);
    if s.len() != 2 || s[1] != w.len() {
        return Err(Error::Shape(format!(
            "kd_soft_loss: logits {s:?} incompatible with {} weights",
            w.len()
        )));
    }
    let elem = t.bce_with_logits(o_s, p_t)?;
    let per_label = t.mean_axes(elem, &[0])?; // [C]
    let wv = t.constant(vec![w.len()], w.to_vec())?;
    let weighted = t.mul(per_label, wv)?;
    let total = t.sum_all(weighted)?;
    t.scale(total, 1.0 / w.len() as f64)
}

/// L_total = (1−α)·BCEWL(o_s, y) + α·KD(o_s, p_t). The endpoints α ∈ {0,1}
/// evaluate exactly one term. τ divides both student and teacher logits
/// inside the KD term only (a no-op at τ = 1; the caller builds `p_t` from
/// σ(adapted/τ), see [`teacher_probs`]).
pub fn total_loss(
    t: &Tape,
    o_s: VarId,
    y: VarId,
    teacher: Option<(VarId, &[f64])>,
    cfg: &LossConfig,
) -> Result<VarId> {
    cfg.validate()?;
    let kd_term = |t: &Tape| -> Result<VarId> {
        let (p_t, w) = teacher
            .ok_or_else(|| Error::Config("total_loss: alpha > 0 requires teacher inputs".into()))?;
        let o_kd = if cfg.temperature == 1.0 { o_s } else { t.scale(o_s, 1.0 / cfg.temperature)? };
        kd_soft_loss(t, o_kd, p_t, w)
    };
    if cfg.alpha == 0.0 {
        bcewl(t, o_s, y)
    } else if cfg.alpha == 1.0 {
        kd_term(t)
    } else {
        let lhs = t.scale(bcewl(t, o_s, y)?, 1.0 - cfg.alpha)?;
        let rhs = t.scale(kd_term(t)?, cfg.alpha)?;
        t.add(lhs, rhs)
    }
}

// ── teacher logits CSV ────────────────────────────────────────────────────

/// Read a `sample_id,o0..o17` CSV. Order is preserved; duplicate ids are
/// rejected.
pub fn read_teacher_csv(path: &std::path::Path) -> Result<Vec<(String, [f64; TEACHER_DIM])>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut out: Vec<(String, [f64; TEACHER_DIM])> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if rec.len() != TEACHER_DIM + 1 {
            return Err(Error::Parse(format!(
                "{}: expected {} columns, got {}",
                path.display(),
                TEACHER_DIM + 1,
                rec.len()
            )));
        }
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Parse(format!("{}: duplicate sample id '{id}'", path.display())));
        }
        let mut row = [0.0; TEACHER_DIM];
        for (i, r) in row.iter_mut().enumerate() {
            *r = rec[i + 1]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("{}: bad logit '{}'", path.display(), &rec[i + 1])))?;
        }
        out.push((id, row));
    }
    Ok(out)
}

pub fn write_teacher_csv(
    path: &std::path::Path,
    rows: &[(String, [f64; TEACHER_DIM])],
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let header: Vec<String> = (0..TEACHER_DIM).map(|i| format!("o{i}")).collect();
    writeln!(f, "sample_id,{}", header.join(","))?;
    for (id, row) in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{id},{}", cells.join(","))?;
    }
    Ok(())
}

/// Write adapted logits as `sample_id,a0..a13` plus a trailing summary line
/// with the dynamic weights computed over the whole file.
pub fn write_adapted_csv(
    path: &std::path::Path,
    ids: &[String],
    adapted: &AdaptedTeacher,
    weights: &[f64],
) -> Result<()> {
    let b = adapted.logits.shape()[0];
    if ids.len() != b {
        return Err(Error::Shape(format!("adapted csv: {} ids for {} rows", ids.len(), b)));
    }
    let mut f = std::fs::File::create(path)?;
    let header: Vec<String> = (0..NUM_LABELS).map(|i| format!("a{i}")).collect();
    writeln!(f, "sample_id,{}", header.join(","))?;
    for (bi, id) in ids.iter().enumerate() {
        let row = &adapted.logits.values()[bi * NUM_LABELS..(bi + 1) * NUM_LABELS];
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{id},{}", cells.join(","))?;
    }
    let cells: Vec<String> = weights.iter().map(|v| format!("{v}")).collect();
    writeln!(f, "# dynamic_weights,{}", cells.join(","))?;
    Ok(())
}

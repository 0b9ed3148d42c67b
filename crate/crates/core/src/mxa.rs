//! The MXA block: a learnable ROI predictor, dynamic ROI pooling with
//! bilinear resampling back to the input size, and CBAM-style channel and
//! spatial gating applied to the pooled map.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, VarId};

/// Smallest box side length the predictor can emit. Roughly one patch on a
/// 7-token grid; makes the box invariants structural for any parameters.
pub const EPS_MIN: f64 = 0.1;

/// Normalized box, top-left (x1,y1) to bottom-right (x2,y2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl RoiBox {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.x1)
            && (0.0..=1.0).contains(&self.x2)
            && (0.0..=1.0).contains(&self.y1)
            && (0.0..=1.0).contains(&self.y2)
            && self.x2 - self.x1 >= EPS_MIN - 1e-12
            && self.y2 - self.y1 >= EPS_MIN - 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("invalid roi box {self:?}")))
        }
    }
}

/// ROI predictor parameters on a tape: two 3×3 conv layers with ReLU, global
/// average pooling, then a linear map to 4 raw box outputs.
#[derive(Debug, Clone, Copy)]
pub struct RoiPredictorVars {
    pub conv1: VarId, // [C,C,3,3]
    pub conv2: VarId, // [C,C,3,3]
    pub fc_w: VarId,  // [C,4]
    pub fc_b: VarId,  // [4]
}

/// CBAM parameters on a tape. The shared MLP has no bias terms; the spatial
/// kernel is [1,2,k,k] with odd k (7 by default, configurable to 3).
#[derive(Debug, Clone, Copy)]
pub struct CbamVars {
    pub w1: VarId,      // [C, C/r]
    pub w2: VarId,      // [C/r, C]
    pub spatial: VarId, // [1,2,k,k]
}

/// min(max(x, 0), upper) out of relu primitives, elementwise.
fn clamp_between(t: &Tape, x: VarId, upper: VarId) -> Result<VarId> {
    let lo = t.relu(x)?;
    let over = t.relu(t.sub(upper, lo)?)?;
    t.sub(upper, over)
}

/// Predict one normalized box per batch element from the feature map.
///
/// Raw outputs (t_cx,t_cy,t_w,t_h) map to center c = σ(t_c) and size
/// s = ε + (1−ε)·σ(t_s); corners are x1 = clip(c − s/2, 0, 1−s), x2 = x1+s,
/// so the box invariants hold for any parameter values and the whole map is
/// differentiable (sub-differentiable at the clips).
pub fn predict_roi(t: &Tape, f: VarId, p: &RoiPredictorVars) -> Result<VarId> {
    let s = t.shape_of(f);
    if s.len() != 4 || s[2] < 4 || s[3] < 4 {
        return Err(Error::Shape(format!("predict_roi: feature map {s:?} must be [B,C,H,W] with H,W ≥ 4")));
    }
    let (b, c) = (s[0], s[1]);
    let h1 = t.relu(t.conv2d(f, p.conv1, 1, 1)?)?;
    let h2 = t.relu(t.conv2d(h1, p.conv2, 1, 1)?)?;
    let pooled = t.pool(h2, crate::tensor::PoolKind::GlobalAvg)?;
    let flat = t.reshape(pooled, vec![b, c])?;
    let raw = t.add_bias(t.matmul(flat, p.fc_w)?, p.fc_b)?; // [B,4]

    let col = |i: usize| t.slice(raw, 1, i, i + 1);
    let cx = t.sigmoid(col(0)?)?;
    let cy = t.sigmoid(col(1)?)?;
    let size = |tc: VarId| -> Result<VarId> {
        let sg = t.sigmoid(tc)?;
        t.add_const(t.scale(sg, 1.0 - EPS_MIN)?, EPS_MIN)
    };
    let sw = size(col(2)?)?;
    let sh = size(col(3)?)?;

    let corner = |center: VarId, side: VarId| -> Result<(VarId, VarId)> {
        let half = t.scale(side, 0.5)?;
        let lo = t.sub(center, half)?;
        let upper = t.add_const(t.scale(side, -1.0)?, 1.0)?; // 1 − s
        let c1 = clamp_between(t, lo, upper)?;
        let c2 = t.add(c1, side)?;
        Ok((c1, c2))
    };
    let (x1, x2) = corner(cx, sw)?;
    let (y1, y2) = corner(cy, sh)?;
    t.concat(&[x1, y1, x2, y2], 1)
}

/// Read a [B,4] boxes node out as checked `RoiBox` values.
pub fn boxes_to_list(t: &Tape, boxes: VarId) -> Result<Vec<RoiBox>> {
    let s = t.shape_of(boxes);
    if s.len() != 2 || s[1] != 4 {
        return Err(Error::Shape(format!("boxes_to_list: expected [B,4], got {s:?}")));
    }
    let v = t.value_vec(boxes);
    v.chunks(4)
        .map(|c| {
            let b = RoiBox { x1: c[0], y1: c[1], x2: c[2], y2: c[3] };
            b.validate()?;
            Ok(b)
        })
        .collect()
}

/// Crop each sample's box and bilinearly resample it back to the input's
/// spatial size, so downstream shapes are unchanged.
pub fn roi_pool(t: &Tape, f: VarId, boxes: VarId) -> Result<VarId> {
    let s = t.shape_of(f);
    if s.len() != 4 {
        return Err(Error::Shape(format!("roi_pool: feature map {s:?} must be 4-D")));
    }
    t.crop_resize(f, boxes, s[2], s[3])
}

/// Channel gate M_C = σ(W2·relu(W1·GAP(F)) + W2·relu(W1·GMP(F))), one value
/// per (batch, channel), strictly inside (0,1).
pub fn channel_attention(t: &Tape, f_pooled: VarId, p: &CbamVars) -> Result<VarId> {
    let s = t.shape_of(f_pooled);
    if s.len() != 4 {
        return Err(Error::Shape(format!("channel_attention: map {s:?} must be 4-D")));
    }
    let (b, c) = (s[0], s[1]);
    let branch = |kind: crate::tensor::PoolKind| -> Result<VarId> {
        let g = t.pool(f_pooled, kind)?;
        let flat = t.reshape(g, vec![b, c])?;
        t.matmul(t.relu(t.matmul(flat, p.w1)?)?, p.w2)
    };
    let avg = branch(crate::tensor::PoolKind::GlobalAvg)?;
    let max = branch(crate::tensor::PoolKind::GlobalMax)?;
    t.sigmoid(t.add(avg, max)?)
}

/// Spatial gate M_S = σ(Conv2D([channel-max, channel-avg])), one value per
/// spatial position, shape [B,1,H,W].
pub fn spatial_attention(t: &Tape, f_chan: VarId, p: &CbamVars) -> Result<VarId> {
    let sk = t.shape_of(p.spatial);
    if sk.len() != 4 || sk[0] != 1 || sk[1] != 2 || sk[2] != sk[3] || sk[2] % 2 == 0 {
        return Err(Error::Shape(format!(
            "spatial_attention: kernel {sk:?} must be [1,2,k,k] with odd k"
        )));
    }
    let pad = (sk[2] - 1) / 2;
    let mx = t.pool(f_chan, crate::tensor::PoolKind::ChannelMax)?;
    let av = t.pool(f_chan, crate::tensor::PoolKind::ChannelAvg)?;
    let desc = t.concat(&[mx, av], 1)?;
    t.sigmoid(t.conv2d(desc, p.spatial, 1, pad)?)
}

pub struct MxaOutput {
    pub out: VarId,
    pub boxes: VarId,
}

/// Full block: predict ROI → pool → channel gate → spatial gate.
/// Differentiable end-to-end, including through the box coordinates.
pub fn mxa_forward(t: &Tape, f: VarId, roi: &RoiPredictorVars, cbam: &CbamVars) -> Result<MxaOutput> {
    let boxes = predict_roi(t, f, roi)?;
    let pooled = roi_pool(t, f, boxes)?;
    let m_c = channel_attention(t, pooled, cbam)?;
    let f_chan = t.mul_channel(pooled, m_c)?;
    let m_s = spatial_attention(t, f_chan, cbam)?;
    let out = t.mul_spatial(f_chan, m_s)?;
    Ok(MxaOutput { out, boxes })
}

/// Zero-initialized predictor parameters (raw outputs identically 0).
pub fn zero_roi_vars(t: &Tape, c: usize) -> RoiPredictorVars {
    RoiPredictorVars {
        conv1: t.leaf(Tensor::zeros(vec![c, c, 3, 3])),
        conv2: t.leaf(Tensor::zeros(vec![c, c, 3, 3])),
        fc_w: t.leaf(Tensor::zeros(vec![c, 4])),
        fc_b: t.leaf(Tensor::zeros(vec![4])),
    }
}

/// Zero-initialized CBAM parameters: both gates evaluate to exactly σ(0)=0.5.
pub fn zero_cbam_vars(t: &Tape, c: usize, r: usize, k: usize) -> Result<CbamVars> {
    if r == 0 || c % r != 0 {
        return Err(Error::Config(format!("cbam: channels {c} not divisible by reduction {r}")));
    }
    Ok(CbamVars {
        w1: t.leaf(Tensor::zeros(vec![c, c / r])),
        w2: t.leaf(Tensor::zeros(vec![c / r, c])),
        spatial: t.leaf(Tensor::zeros(vec![1, 2, k, k])),
    })
}

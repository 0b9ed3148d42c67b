//! Multi-head self-attention, its local-window variant, and the parallel
//! branch fusion used by the backbone blocks.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, VarId};

/// Additive pre-softmax mask value for padded window positions. Kept finite
/// so the softmax stays well-defined.
pub const MASK_NEG: f64 = -1e9;

#[derive(Debug, Clone, Copy)]
pub struct AttentionConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    /// Side length of the local attention window; `None` means global.
    pub window: Option<usize>,
}

impl AttentionConfig {
    pub fn new(embed_dim: usize, num_heads: usize) -> Result<Self> {
        if num_heads == 0 || embed_dim == 0 {
            return Err(Error::Config("attention: embed_dim and num_heads must be positive".into()));
        }
        if embed_dim % num_heads != 0 {
            return Err(Error::Config(format!(
                "attention: embed_dim {embed_dim} not divisible by num_heads {num_heads}"
            )));
        }
        Ok(AttentionConfig { embed_dim, num_heads, window: None })
    }

    pub fn with_window(mut self, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("attention: window must be ≥ 1".into()));
        }
        self.window = Some(window);
        Ok(self)
    }
}

/// Token sequence with its 2-D grid layout. `tokens` is [B,N,D] with
/// N == grid_h·grid_w; the grid form is [B,D,grid_h,grid_w].
#[derive(Debug, Clone, Copy)]
pub struct TokenGrid {
    pub tokens: VarId,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl TokenGrid {
    pub fn new(tape: &Tape, tokens: VarId, grid_h: usize, grid_w: usize) -> Result<Self> {
        let s = tape.shape_of(tokens);
        if s.len() != 3 || s[1] != grid_h * grid_w {
            return Err(Error::Shape(format!(
                "token grid: tokens {s:?} incompatible with grid {grid_h}x{grid_w}"
            )));
        }
        Ok(TokenGrid { tokens, grid_h, grid_w })
    }

    /// [B,N,D] → [B,D,grid_h,grid_w]
    pub fn to_map(&self, t: &Tape) -> Result<VarId> {
        let s = t.shape_of(self.tokens);
        let (b, d) = (s[0], s[2]);
        let g = t.reshape(self.tokens, vec![b, self.grid_h, self.grid_w, d])?;
        t.permute(g, &[0, 3, 1, 2])
    }

    /// [B,D,grid_h,grid_w] → token grid
    pub fn from_map(t: &Tape, map: VarId) -> Result<Self> {
        let s = t.shape_of(map);
        if s.len() != 4 {
            return Err(Error::Shape(format!("token grid: map {s:?} must be 4-D")));
        }
        let (b, d, gh, gw) = (s[0], s[1], s[2], s[3]);
        let p = t.permute(map, &[0, 2, 3, 1])?;
        let tokens = t.reshape(p, vec![b, gh * gw, d])?;
        Ok(TokenGrid { tokens, grid_h: gh, grid_w: gw })
    }
}

/// Projection weights for one attention layer. Weights are [D,D], biases [D].
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: VarId,
    pub bq: VarId,
    pub wk: VarId,
    pub bk: VarId,
    pub wv: VarId,
    pub bv: VarId,
    pub wo: VarId,
    pub bo: VarId,
}

/// Attention probabilities captured during a forward pass, in the layout the
/// attention ran in.
#[derive(Debug, Clone, Copy)]
pub enum AttnInfo {
    /// probs: [B, heads, N, N]
    Global { probs: VarId },
    /// probs: [B·nh·nw, heads, w², w²] over a padded nh×nw window partition
    Windowed { probs: VarId, nh: usize, nw: usize, window: usize, grid_h: usize, grid_w: usize },
}

fn project(t: &Tape, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
    let y = t.matmul(x, w)?;
    t.add_bias(y, b)
}

/// Scaled dot-product attention over projected [Bq,N,D] queries/keys/values
/// with an optional additive pre-softmax mask of shape [Bq,heads,N,N].
/// Returns the merged context and the attention probabilities.
fn scaled_attention(
    t: &Tape,
    q: VarId,
    k: VarId,
    v: VarId,
    cfg: &AttentionConfig,
    mask: Option<VarId>,
) -> Result<(VarId, VarId)> {
    let s = t.shape_of(q);
    let (bq, n, d) = (s[0], s[1], s[2]);
    let heads = cfg.num_heads;
    let dh = d / heads;
    let split = |v: VarId| -> Result<VarId> {
        let r = t.reshape(v, vec![bq, n, heads, dh])?;
        t.permute(r, &[0, 2, 1, 3])
    };
    let qh = split(q)?;
    let kh = split(k)?;
    let vh = split(v)?;
    let kt = t.permute(kh, &[0, 1, 3, 2])?;
    let mut scores = t.scale(t.matmul(qh, kt)?, 1.0 / (dh as f64).sqrt())?;
    if let Some(m) = mask {
        scores = t.add(scores, m)?;
    }
    let probs = t.softmax(scores)?;
    let ctx = t.matmul(probs, vh)?;
    let merged = t.reshape(t.permute(ctx, &[0, 2, 1, 3])?, vec![bq, n, d])?;
    Ok((merged, probs))
}

/// Project, attend, and output-project [Bq,N,D] tokens.
fn attention_core(
    t: &Tape,
    tokens: VarId,
    cfg: &AttentionConfig,
    params: &AttentionParams,
    mask: Option<VarId>,
) -> Result<(VarId, VarId)> {
    let s = t.shape_of(tokens);
    if s.len() != 3 || s[2] != cfg.embed_dim {
        return Err(Error::Shape(format!(
            "attention: tokens {s:?} do not end in embed_dim {}",
            cfg.embed_dim
        )));
    }
    let q = project(t, tokens, params.wq, params.bq)?;
    let k = project(t, tokens, params.wk, params.bk)?;
    let v = project(t, tokens, params.wv, params.bv)?;
    let (merged, probs) = scaled_attention(t, q, k, v, cfg, mask)?;
    let out = project(t, merged, params.wo, params.bo)?;
    Ok((out, probs))
}

/// Global multi-head self-attention.
pub fn mhsa(
    t: &Tape,
    x: &TokenGrid,
    cfg: &AttentionConfig,
    params: &AttentionParams,
) -> Result<(TokenGrid, AttnInfo)> {
    let (out, probs) = attention_core(t, x.tokens, cfg, params, None)?;
    Ok((
        TokenGrid { tokens: out, grid_h: x.grid_h, grid_w: x.grid_w },
        AttnInfo::Global { probs },
    ))
}

/// Local-window attention. Ragged edges are padded with masked tokens that
/// receive zero attention weight; a window covering the whole grid falls
/// back to [`mhsa`] and is bit-identical to it.
pub fn windowed_mhsa(
    t: &Tape,
    x: &TokenGrid,
    cfg: &AttentionConfig,
    params: &AttentionParams,
) -> Result<(TokenGrid, AttnInfo)> {
    let w = cfg
        .window
        .ok_or_else(|| Error::Config("windowed_mhsa: config has no window".into()))?;
    let (gh, gw) = (x.grid_h, x.grid_w);
    if w >= gh && w >= gw {
        return mhsa(t, x, cfg, params);
    }
    let s = t.shape_of(x.tokens);
    if s[2] != cfg.embed_dim {
        return Err(Error::Shape(format!(
            "attention: tokens {s:?} do not end in embed_dim {}",
            cfg.embed_dim
        )));
    }
    let (b, d) = (s[0], s[2]);
    let nh = gh.div_ceil(w);
    let nw = gw.div_ceil(w);
    let (full_h, full_w) = (nh * w, nw * w);

    // project on the real tokens, then partition q/k/v; padded slots hold
    // zeros and are masked out of the softmax below
    let partition = |tokens: VarId| -> Result<VarId> {
        let mut grid = t.reshape(tokens, vec![b, gh, gw, d])?;
        if full_h > gh {
            let pad = t.constant(vec![b, full_h - gh, gw, d], vec![0.0; b * (full_h - gh) * gw * d])?;
            grid = t.concat(&[grid, pad], 1)?;
        }
        if full_w > gw {
            let pad =
                t.constant(vec![b, full_h, full_w - gw, d], vec![0.0; b * full_h * (full_w - gw) * d])?;
            grid = t.concat(&[grid, pad], 2)?;
        }
        let windows = t.reshape(grid, vec![b, nh, w, nw, w, d])?;
        let windows = t.permute(windows, &[0, 1, 3, 2, 4, 5])?;
        t.reshape(windows, vec![b * nh * nw, w * w, d])
    };
    let qw = partition(project(t, x.tokens, params.wq, params.bq)?)?;
    let kw = partition(project(t, x.tokens, params.wk, params.bk)?)?;
    let vw = partition(project(t, x.tokens, params.wv, params.bv)?)?;

    let mask = if full_h > gh || full_w > gw {
        let ww = w * w;
        let heads = cfg.num_heads;
        let mut m = vec![0.0; b * nh * nw * heads * ww * ww];
        for bi in 0..b {
            for wy in 0..nh {
                for wx in 0..nw {
                    let widx = (bi * nh + wy) * nw + wx;
                    for kk in 0..ww {
                        let (r, c) = (kk / w, kk % w);
                        if wy * w + r < gh && wx * w + c < gw {
                            continue;
                        }
                        for hi in 0..heads {
                            for q in 0..ww {
                                m[((widx * heads + hi) * ww + q) * ww + kk] = MASK_NEG;
                            }
                        }
                    }
                }
            }
        }
        Some(t.constant(vec![b * nh * nw, heads, ww, ww], m)?)
    } else {
        None
    };

    let (ctx, probs) = scaled_attention(t, qw, kw, vw, cfg, mask)?;

    let back = t.reshape(ctx, vec![b, nh, nw, w, w, d])?;
    let back = t.permute(back, &[0, 1, 3, 2, 4, 5])?;
    let back = t.reshape(back, vec![b, full_h, full_w, d])?;
    let back = t.slice(back, 1, 0, gh)?;
    let back = if full_w > gw { t.slice(back, 2, 0, gw)? } else { back };
    let merged = t.reshape(back, vec![b, gh * gw, d])?;
    let tokens = project(t, merged, params.wo, params.bo)?;
    Ok((
        TokenGrid { tokens, grid_h: gh, grid_w: gw },
        AttnInfo::Windowed { probs, nh, nw, window: w, grid_h: gh, grid_w: gw },
    ))
}

/// F_output = F_MHSA + F_MXA: elementwise sum of two same-shape feature
/// maps; backward hands the full upstream gradient to both branches.
pub fn parallel_fuse(t: &Tape, f_mhsa: VarId, f_mxa: VarId) -> Result<VarId> {
    t.add(f_mhsa, f_mxa)
}

/// Attention mass received by each grid cell: sum over queries of the
/// attention paid to the cell, averaged over heads. Padded window positions
/// contribute nothing. Returns one grid_h·grid_w row per batch element.
pub fn received_mass(t: &Tape, info: &AttnInfo, batch: usize) -> Vec<Vec<f64>> {
    match *info {
        AttnInfo::Global { probs } => {
            let s = t.shape_of(probs);
            let (heads, n) = (s[1], s[3]);
            t.with_values(probs, |p| {
                (0..batch)
                    .map(|bi| {
                        let mut mass = vec![0.0; n];
                        for hi in 0..heads {
                            let base = (bi * heads + hi) * n * n;
                            for q in 0..n {
                                for (k, m) in mass.iter_mut().enumerate() {
                                    *m += p[base + q * n + k];
                                }
                            }
                        }
                        mass.iter_mut().for_each(|m| *m /= heads as f64);
                        mass
                    })
                    .collect()
            })
        }
        AttnInfo::Windowed { probs, nh, nw, window: w, grid_h, grid_w } => {
            let s = t.shape_of(probs);
            let heads = s[1];
            let ww = w * w;
            t.with_values(probs, |p| {
                (0..batch)
                    .map(|bi| {
                        let mut mass = vec![0.0; grid_h * grid_w];
                        for wy in 0..nh {
                            for wx in 0..nw {
                                let widx = (bi * nh + wy) * nw + wx;
                                for kk in 0..ww {
                                    let (gy, gx) = (wy * w + kk / w, wx * w + kk % w);
                                    if gy >= grid_h || gx >= grid_w {
                                        continue;
                                    }
                                    let mut acc = 0.0;
                                    for hi in 0..heads {
                                        let base = (widx * heads + hi) * ww * ww;
                                        for q in 0..ww {
                                            // skip padded queries
                                            let (qy, qx) = (wy * w + q / w, wx * w + q % w);
                                            if qy >= grid_h || qx >= grid_w {
                                                continue;
                                            }
                                            acc += p[base + q * ww + kk];
                                        }
                                    }
                                    mass[gy * grid_w + gx] = acc / heads as f64;
                                }
                            }
                        }
                        mass
                    })
                    .collect()
            })
        }
    }
}

/// Test/bring-up helper: random projection parameters on the tape.
pub fn random_params(t: &Tape, d: usize, rng: &mut impl rand::Rng) -> AttentionParams {
    let mut w = |n: usize| {
        let bound = (1.0 / d as f64).sqrt();
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        t.var(Tensor::new(if n == d { vec![d] } else { vec![d, d] }, vals).unwrap())
    };
    AttentionParams {
        wq: w(d * d),
        bq: w(d),
        wk: w(d * d),
        bk: w(d),
        wv: w(d * d),
        bv: w(d),
        wo: w(d * d),
        bo: w(d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::gradient_check;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_tokens(t: &Tape, b: usize, n: usize, d: usize, r: &mut ChaCha8Rng) -> VarId {
        let vals: Vec<f64> = (0..b * n * d).map(|_| r.gen_range(-1.0..1.0)).collect();
        t.var(Tensor::new(vec![b, n, d], vals).unwrap())
    }

    #[test]
    fn single_token_attention_weight_is_one() {
        let t = Tape::new();
        let mut r = rng(1);
        let d = 6;
        let params = random_params(&t, d, &mut r);
        let x = rand_tokens(&t, 1, 1, d, &mut r);
        let grid = TokenGrid::new(&t, x, 1, 1).unwrap();
        let cfg = AttentionConfig::new(d, 2).unwrap();
        let (out, info) = mhsa(&t, &grid, &cfg, &params).unwrap();
        let AttnInfo::Global { probs } = info else { panic!() };
        assert_eq!(t.value_vec(probs), vec![1.0, 1.0]);

        // output is exactly the value+output projection of the token
        let v = project(&t, x, params.wv, params.bv).unwrap();
        let expect = project(&t, v, params.wo, params.bo).unwrap();
        assert_eq!(t.value_vec(out.tokens), t.value_vec(expect));
    }

    #[test]
    fn identical_tokens_attend_uniformly() {
        let t = Tape::new();
        let mut r = rng(2);
        let d = 4;
        let n = 5;
        let params = random_params(&t, d, &mut r);
        let row: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let vals: Vec<f64> = (0..n).flat_map(|_| row.clone()).collect();
        let x = t.var(Tensor::new(vec![1, n, d], vals).unwrap());
        let grid = TokenGrid::new(&t, x, 1, n).unwrap();
        let cfg = AttentionConfig::new(d, 2).unwrap();
        let (_, info) = mhsa(&t, &grid, &cfg, &params).unwrap();
        let AttnInfo::Global { probs } = info else { panic!() };
        for p in t.value_vec(probs) {
            assert!((p - 1.0 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let t = Tape::new();
        let mut r = rng(3);
        let d = 8;
        let params = random_params(&t, d, &mut r);
        let x = rand_tokens(&t, 2, 9, d, &mut r);
        let grid = TokenGrid::new(&t, x, 3, 3).unwrap();
        let cfg = AttentionConfig::new(d, 2).unwrap();
        let (_, info) = mhsa(&t, &grid, &cfg, &params).unwrap();
        let AttnInfo::Global { probs } = info else { panic!() };
        let v = t.value_vec(probs);
        for row in v.chunks(9) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn window_covering_grid_equals_global_attention_bitwise() {
        let t = Tape::new();
        let mut r = rng(4);
        let d = 8;
        let params = random_params(&t, d, &mut r);
        let x = rand_tokens(&t, 2, 16, d, &mut r);
        let grid = TokenGrid::new(&t, x, 4, 4).unwrap();
        let cfg = AttentionConfig::new(d, 2).unwrap();
        let (global, _) = mhsa(&t, &grid, &cfg, &params).unwrap();
        for w in [4, 7] {
            let wcfg = cfg.with_window(w).unwrap();
            let (local, _) = windowed_mhsa(&t, &grid, &wcfg, &params).unwrap();
            assert_eq!(t.value_vec(local.tokens), t.value_vec(global.tokens));
        }
    }

    #[test]
    fn unit_window_is_per_token_projection() {
        let t = Tape::new();
        let mut r = rng(5);
        let d = 4;
        let params = random_params(&t, d, &mut r);
        let x = rand_tokens(&t, 1, 9, d, &mut r);
        let grid = TokenGrid::new(&t, x, 3, 3).unwrap();
        let cfg = AttentionConfig::new(d, 2).unwrap().with_window(1).unwrap();
        let (out, _) = windowed_mhsa(&t, &grid, &cfg, &params).unwrap();

        let v = project(&t, x, params.wv, params.bv).unwrap();
        let expect = project(&t, v, params.wo, params.bo).unwrap();
        let (a, b) = (t.value_vec(out.tokens), t.value_vec(expect));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn windows_are_gradient_isolated() {
        // token (0,0) lives in window A, token (3,3) in window B; the output
        // at (0,0) must have exactly zero gradient w.r.t. (3,3).
        let d = 4;
        let mut r = rng(6);
        let vals: Vec<f64> = (0..16 * d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let tokens = Tensor::new(vec![1, 16, d], vals).unwrap();

        let t = Tape::new();
        let params = random_params(&t, d, &mut r);
        let x = t.var(tokens.clone());
        let grid = TokenGrid::new(&t, x, 4, 4).unwrap();
        let cfg = AttentionConfig::new(d, 2).unwrap().with_window(2).unwrap();
        let (out, _) = windowed_mhsa(&t, &grid, &cfg, &params).unwrap();
        let first = t.slice(out.tokens, 1, 0, 1).unwrap();
        let s = t.sum_all(first).unwrap();
        t.backward(s).unwrap();
        let g = t.grad_vec(x);
        let other = 15 * d; // grid position (3,3)
        assert_eq!(&g[other..other + d], &[0.0; 4]);
        // and nonzero inside the same window, grid position (1,1) = token 5
        assert!(g[5 * d..6 * d].iter().any(|&v| v != 0.0));

        // finite differences agree on the isolation
        let h = 1e-5;
        let eval = |tok: &Tensor| -> f64 {
            let t = Tape::new();
            let mut r2 = rng(6);
            let params = random_params(&t, d, &mut r2);
            let x = t.var(tok.clone());
            let grid = TokenGrid::new(&t, x, 4, 4).unwrap();
            let (out, _) = windowed_mhsa(&t, &grid, &cfg, &params).unwrap();
            let first = t.slice(out.tokens, 1, 0, 1).unwrap();
            let s = t.sum_all(first).unwrap();
            t.value_vec(s)[0]
        };
        let mut plus = tokens.clone();
        plus.values_mut()[other] += h;
        let mut minus = tokens.clone();
        minus.values_mut()[other] -= h;
        assert_eq!(eval(&plus), eval(&minus));
    }

    #[test]
    fn windowed_attention_gradients_match_finite_differences() {
        let d = 4;
        let mut r = rng(7);
        let vals: Vec<f64> = (0..9 * d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let tokens = Tensor::new(vec![1, 9, d], vals).unwrap();
        // ragged 3x3 grid under a 2x2 window exercises the padded mask path
        let report = gradient_check(
            |t, vars| {
                let mut r2 = rng(8);
                let params = random_params(t, d, &mut r2);
                let grid = TokenGrid::new(t, vars[0], 3, 3)?;
                let cfg = AttentionConfig::new(d, 2)?.with_window(2)?;
                let (out, _) = windowed_mhsa(t, &grid, &cfg, &params)?;
                t.sum_all(out.tokens)
            },
            &[tokens],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass(), "worst {}", report.worst());
    }

    #[test]
    fn mhsa_is_permutation_equivariant() {
        let t = Tape::new();
        let mut r = rng(9);
        let d = 6;
        let n = 8;
        let params = random_params(&t, d, &mut r);
        let vals: Vec<f64> = (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let perm = [3usize, 1, 7, 0, 5, 2, 6, 4];
        let permuted: Vec<f64> = perm.iter().flat_map(|&p| vals[p * d..(p + 1) * d].to_vec()).collect();

        let cfg = AttentionConfig::new(d, 3).unwrap();
        let x = t.var(Tensor::new(vec![1, n, d], vals).unwrap());
        let xp = t.var(Tensor::new(vec![1, n, d], permuted).unwrap());
        let (out, _) = mhsa(&t, &TokenGrid::new(&t, x, 1, n).unwrap(), &cfg, &params).unwrap();
        let (outp, _) = mhsa(&t, &TokenGrid::new(&t, xp, 1, n).unwrap(), &cfg, &params).unwrap();
        let (a, b) = (t.value_vec(out.tokens), t.value_vec(outp.tokens));
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..d {
                assert!((b[i * d + c] - a[p * d + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parallel_fuse_identities_and_gradient_symmetry() {
        let t = Tape::new();
        let mut r = rng(10);
        let vals: Vec<f64> = (0..2 * 3 * 4 * 4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let a = t.var(Tensor::new(vec![2, 3, 4, 4], vals.clone()).unwrap());
        let zero = t.leaf(Tensor::zeros(vec![2, 3, 4, 4]));
        let fused = parallel_fuse(&t, a, zero).unwrap();
        assert_eq!(t.value_vec(fused), vals);
        let fused2 = parallel_fuse(&t, zero, a).unwrap();
        assert_eq!(t.value_vec(fused2), vals);

        let b = t.var(Tensor::new(vec![2, 3, 4, 4], vals.clone()).unwrap());
        let f = parallel_fuse(&t, a, b).unwrap();
        let seed: Vec<f64> = (0..vals.len()).map(|i| (i % 7) as f64 - 3.0).collect();
        t.zero_grad();
        t.backward_seeded(f, &seed).unwrap();
        assert_eq!(t.grad_vec(a), seed);
        assert_eq!(t.grad_vec(b), seed);

        let bad = t.leaf(Tensor::zeros(vec![1, 3, 4, 4]));
        assert!(parallel_fuse(&t, a, bad).is_err());
    }

    #[test]
    fn config_rejects_indivisible_heads_and_zero_window() {
        assert!(AttentionConfig::new(10, 3).is_err());
        assert!(AttentionConfig::new(8, 2).unwrap().with_window(0).is_err());
    }

    #[test]
    fn received_mass_sums_to_query_count_per_window() {
        let t = Tape::new();
        let mut r = rng(11);
        let d = 4;
        let params = random_params(&t, d, &mut r);
        let x = rand_tokens(&t, 1, 16, d, &mut r);
        let grid = TokenGrid::new(&t, x, 4, 4).unwrap();
        let cfg = AttentionConfig::new(d, 2).unwrap().with_window(2).unwrap();
        let (_, info) = windowed_mhsa(&t, &grid, &cfg, &params).unwrap();
        let mass = received_mass(&t, &info, 1);
        // 4 windows of 4 tokens: each window's received mass sums to 4
        let m = &mass[0];
        for (wy, wx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let mut acc = 0.0;
            for r2 in 0..2 {
                for c in 0..2 {
                    acc += m[(wy * 2 + r2) * 4 + wx * 2 + c];
                }
            }
            assert!((acc - 4.0).abs() < 1e-9, "window ({wy},{wx}) mass {acc}");
        }
    }
}

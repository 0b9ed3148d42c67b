//! Reverse sweep over a recorded tape.
//!
//! Each backward pass works in its own adjoint buffers and adds the result
//! into the persistent `grad` fields at the end, so running the same tape
//! backward twice without zeroing doubles every gradient.

use super::{for_each_mapped, sigmoid, strides, Op, PoolKind, Tape, VarId};
use crate::error::{Error, Result};

pub(super) fn run(tape: &Tape, out: VarId, seed: &[f64]) -> Result<()> {
    let mut nodes = tape.nodes().borrow_mut();
    let n = nodes.len();
    let mut adj: Vec<Vec<f64>> = (0..n).map(|_| Vec::new()).collect();
    adj[out.0] = seed.to_vec();

    // Reverse recorded order visits every op exactly once. `adj` lives apart
    // from the node arena, so operand values can be read by reference while
    // adjoints are written.
    for i in (0..n).rev() {
        if adj[i].is_empty() || !nodes[i].t.requires_grad {
            continue;
        }
        let g = std::mem::take(&mut adj[i]);
        let op = nodes[i].op.clone();
        macro_rules! acc {
            ($id:expr, $len:expr) => {{
                let id: VarId = $id;
                if nodes[id.0].t.requires_grad {
                    if adj[id.0].is_empty() {
                        adj[id.0] = vec![0.0; $len];
                    }
                    Some(id)
                } else {
                    None
                }
            }};
        }
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(a) = acc!(a, g.len()) {
                    for (d, &x) in adj[a.0].iter_mut().zip(&g) {
                        *d += x;
                    }
                }
                if let Some(b) = acc!(b, g.len()) {
                    for (d, &x) in adj[b.0].iter_mut().zip(&g) {
                        *d += x;
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(a) = acc!(a, g.len()) {
                    for (d, &x) in adj[a.0].iter_mut().zip(&g) {
                        *d += x;
                    }
                }
                if let Some(b) = acc!(b, g.len()) {
                    for (d, &x) in adj[b.0].iter_mut().zip(&g) {
                        *d -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(aa) = acc!(a, g.len()) {
                    let bv = &nodes[b.0].t.values;
                    for ((d, &x), &y) in adj[aa.0].iter_mut().zip(&g).zip(bv) {
                        *d += x * y;
                    }
                }
                if let Some(bb) = acc!(b, g.len()) {
                    let av = &nodes[a.0].t.values;
                    for ((d, &x), &y) in adj[bb.0].iter_mut().zip(&g).zip(av) {
                        *d += x * y;
                    }
                }
            }
            Op::MulChannel { map, gate } => {
                let sm = &nodes[map.0].t.shape;
                let (b, c, hw) = (sm[0], sm[1], sm[2] * sm[3]);
                if let Some(m) = acc!(map, b * c * hw) {
                    let gv = &nodes[gate.0].t.values;
                    let dm = &mut adj[m.0];
                    for bi in 0..b {
                        for ci in 0..c {
                            let gg = gv[bi * c + ci];
                            let base = (bi * c + ci) * hw;
                            for p in 0..hw {
                                dm[base + p] += g[base + p] * gg;
                            }
                        }
                    }
                }
                if let Some(gt) = acc!(gate, b * c) {
                    let mv = &nodes[map.0].t.values;
                    let dg = &mut adj[gt.0];
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * hw;
                            let mut acc = 0.0;
                            for p in 0..hw {
                                acc += g[base + p] * mv[base + p];
                            }
                            dg[bi * c + ci] += acc;
                        }
                    }
                }
            }
            Op::MulSpatial { map, gate } => {
                let sm = &nodes[map.0].t.shape;
                let (b, c, hw) = (sm[0], sm[1], sm[2] * sm[3]);
                if let Some(m) = acc!(map, b * c * hw) {
                    let gv = &nodes[gate.0].t.values;
                    let dm = &mut adj[m.0];
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * hw;
                            for p in 0..hw {
                                dm[base + p] += g[base + p] * gv[bi * hw + p];
                            }
                        }
                    }
                }
                if let Some(gt) = acc!(gate, b * hw) {
                    let mv = &nodes[map.0].t.values;
                    let dg = &mut adj[gt.0];
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * hw;
                            for p in 0..hw {
                                dg[bi * hw + p] += g[base + p] * mv[base + p];
                            }
                        }
                    }
                }
            }
            Op::AddBias { a, bias } => {
                if let Some(a) = acc!(a, g.len()) {
                    for (d, &x) in adj[a.0].iter_mut().zip(&g) {
                        *d += x;
                    }
                }
                let bn = nodes[bias.0].t.values.len();
                if let Some(bb) = acc!(bias, bn) {
                    let db = &mut adj[bb.0];
                    for (i, &x) in g.iter().enumerate() {
                        db[i % bn] += x;
                    }
                }
            }
            Op::AddChannel { map, bias } => {
                let sm = &nodes[map.0].t.shape;
                let (b, c, hw) = (sm[0], sm[1], sm[2] * sm[3]);
                if let Some(m) = acc!(map, g.len()) {
                    for (d, &x) in adj[m.0].iter_mut().zip(&g) {
                        *d += x;
                    }
                }
                if let Some(bb) = acc!(bias, c) {
                    let db = &mut adj[bb.0];
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * hw;
                            db[ci] += g[base..base + hw].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::Scale { a, c } => {
                if let Some(a) = acc!(a, g.len()) {
                    for (d, &x) in adj[a.0].iter_mut().zip(&g) {
                        *d += c * x;
                    }
                }
            }
            Op::AddConst { a } => {
                if let Some(a) = acc!(a, g.len()) {
                    for (d, &x) in adj[a.0].iter_mut().zip(&g) {
                        *d += x;
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(aa) = acc!(a, g.len()) {
                    let (dst, nodes_ref) = (&mut adj[aa.0], &nodes[i].t.values);
                    for ((d, &x), &y) in dst.iter_mut().zip(&g).zip(nodes_ref) {
                        *d += x * y * (1.0 - y);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(aa) = acc!(a, g.len()) {
                    let xv = &nodes[a.0].t.values;
                    for ((d, &gx), &x) in adj[aa.0].iter_mut().zip(&g).zip(xv) {
                        if x > 0.0 {
                            *d += gx;
                        }
                    }
                }
            }
            Op::Softplus(a) => {
                if let Some(aa) = acc!(a, g.len()) {
                    let xv = &nodes[a.0].t.values;
                    for ((d, &gx), &x) in adj[aa.0].iter_mut().zip(&g).zip(xv) {
                        *d += gx * sigmoid(x);
                    }
                }
            }
            Op::Matmul { a, b, batch, m, k, n, b_is_2d } => {
                // dA = dC·Bᵀ, dB = Aᵀ·dC (summed over the batch when shared)
                if let Some(aa) = acc!(a, batch * m * k) {
                    let bv = &nodes[b.0].t.values;
                    let da = &mut adj[aa.0];
                    for t in 0..batch {
                        let bo = if b_is_2d { 0 } else { t * k * n };
                        for i2 in 0..m {
                            let grow = &g[(t * m + i2) * n..(t * m + i2 + 1) * n];
                            let darow = &mut da[(t * m + i2) * k..(t * m + i2 + 1) * k];
                            for (p, d) in darow.iter_mut().enumerate() {
                                let brow = &bv[bo + p * n..bo + (p + 1) * n];
                                let mut acc = 0.0;
                                for (&gx, &bx) in grow.iter().zip(brow) {
                                    acc += gx * bx;
                                }
                                *d += acc;
                            }
                        }
                    }
                }
                let bn = if b_is_2d { k * n } else { batch * k * n };
                if let Some(bb) = acc!(b, bn) {
                    let av = &nodes[a.0].t.values;
                    let db = &mut adj[bb.0];
                    for t in 0..batch {
                        let bo = if b_is_2d { 0 } else { t * k * n };
                        for i2 in 0..m {
                            let arow = &av[(t * m + i2) * k..(t * m + i2 + 1) * k];
                            let grow = &g[(t * m + i2) * n..(t * m + i2 + 1) * n];
                            for (p, &ax) in arow.iter().enumerate() {
                                if ax == 0.0 {
                                    continue;
                                }
                                let drow = &mut db[bo + p * n..bo + (p + 1) * n];
                                for (d, &gx) in drow.iter_mut().zip(grow) {
                                    *d += ax * gx;
                                }
                            }
                        }
                    }
                }
            }
            Op::Conv2d { input, kernel, stride, padding } => {
                let si = nodes[input.0].t.shape.clone();
                let sk = nodes[kernel.0].t.shape.clone();
                let (b, cin, h, w) = (si[0], si[1], si[2], si[3]);
                let (cout, kk) = (sk[0], sk[2]);
                let oh = (h + 2 * padding - kk) / stride + 1;
                let ow = (w + 2 * padding - kk) / stride + 1;
                let want_in = nodes[input.0].t.requires_grad;
                let want_k = nodes[kernel.0].t.requires_grad;
                let iv = &nodes[input.0].t.values;
                let kv = &nodes[kernel.0].t.values;
                let mut din = vec![0.0; if want_in { iv.len() } else { 0 }];
                let mut dk = vec![0.0; if want_k { kv.len() } else { 0 }];
                if stride == 1 {
                    // tap-major mirror of the forward fast path
                    for bi in 0..b {
                        for co in 0..cout {
                            let obase = (bi * cout + co) * oh * ow;
                            for ci in 0..cin {
                                let ibase = (bi * cin + ci) * h * w;
                                let kbase = (co * cin + ci) * kk * kk;
                                for u in 0..kk {
                                    let oy_lo = padding.saturating_sub(u);
                                    let oy_hi = oh.min((h + padding).saturating_sub(u));
                                    for v in 0..kk {
                                        let ox_lo = padding.saturating_sub(v);
                                        let ox_hi = ow.min((w + padding).saturating_sub(v));
                                        if ox_lo >= ox_hi {
                                            continue;
                                        }
                                        let len = ox_hi - ox_lo;
                                        let kvv = kv[kbase + u * kk + v];
                                        let mut kacc = 0.0;
                                        for oy in oy_lo..oy_hi {
                                            let iy = oy + u - padding;
                                            let ioff = ibase + iy * w + (ox_lo + v - padding);
                                            let grow = &g[obase + oy * ow + ox_lo..obase + oy * ow + ox_hi];
                                            if want_in {
                                                for (d, &gx) in din[ioff..ioff + len].iter_mut().zip(grow) {
                                                    *d += gx * kvv;
                                                }
                                            }
                                            if want_k {
                                                let irow = &iv[ioff..ioff + len];
                                                for (&gx, &ivv) in grow.iter().zip(irow) {
                                                    kacc += gx * ivv;
                                                }
                                            }
                                        }
                                        if want_k {
                                            dk[kbase + u * kk + v] += kacc;
                                        }
                                    }
                                }
                            }
                        }
                    }
                } else {
                    for bi in 0..b {
                        for co in 0..cout {
                            for oy in 0..oh {
                                let y0 = oy * stride;
                                let u_lo = padding.saturating_sub(y0);
                                let u_hi = kk.min((h + padding).saturating_sub(y0));
                                for ox in 0..ow {
                                    let gx = g[((bi * cout + co) * oh + oy) * ow + ox];
                                    if gx == 0.0 {
                                        continue;
                                    }
                                    let x0 = ox * stride;
                                    let v_lo = padding.saturating_sub(x0);
                                    let v_hi = kk.min((w + padding).saturating_sub(x0));
                                    if v_lo >= v_hi || u_lo >= u_hi {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        let ibase = (bi * cin + ci) * h * w;
                                        let kbase = (co * cin + ci) * kk * kk;
                                        for u in u_lo..u_hi {
                                            let iy = y0 + u - padding;
                                            let ioff = ibase + iy * w + (x0 + v_lo - padding);
                                            let koff = kbase + u * kk + v_lo;
                                            let taps = v_hi - v_lo;
                                            if want_in {
                                                let krow = &kv[koff..koff + taps];
                                                for (d, kvv) in din[ioff..ioff + taps].iter_mut().zip(krow) {
                                                    *d += gx * kvv;
                                                }
                                            }
                                            if want_k {
                                                let irow = &iv[ioff..ioff + taps];
                                                for (d, ivv) in dk[koff..koff + taps].iter_mut().zip(irow) {
                                                    *d += gx * ivv;
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if want_in {
                    if let Some(id) = acc!(input, iv.len()) {
                        for (d, x) in adj[id.0].iter_mut().zip(din) {
                            *d += x;
                        }
                    }
                }
                if want_k {
                    if let Some(id) = acc!(kernel, kv.len()) {
                        for (d, x) in adj[id.0].iter_mut().zip(dk) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Pool { input, kind } => {
                let s = nodes[input.0].t.shape.clone();
                let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
                if let Some(id) = acc!(input, b * c * h * w) {
                    let iv = &nodes[input.0].t.values;
                    let din = &mut adj[id.0];
                    match kind {
                        PoolKind::GlobalAvg => {
                            let hw = (h * w) as f64;
                            for i2 in 0..b * c {
                                let gx = g[i2] / hw;
                                for d in din[i2 * h * w..(i2 + 1) * h * w].iter_mut() {
                                    *d += gx;
                                }
                            }
                        }
                        PoolKind::GlobalMax => {
                            // gradient routes to the first max in scan order
                            for i2 in 0..b * c {
                                let plane = &iv[i2 * h * w..(i2 + 1) * h * w];
                                let mut best = f64::NEG_INFINITY;
                                let mut arg = 0;
                                for (p, &x) in plane.iter().enumerate() {
                                    if x > best {
                                        best = x;
                                        arg = p;
                                    }
                                }
                                din[i2 * h * w + arg] += g[i2];
                            }
                        }
                        PoolKind::ChannelAvg => {
                            for bi in 0..b {
                                for p in 0..h * w {
                                    let gx = g[bi * h * w + p] / c as f64;
                                    for ci in 0..c {
                                        din[(bi * c + ci) * h * w + p] += gx;
                                    }
                                }
                            }
                        }
                        PoolKind::ChannelMax => {
                            for bi in 0..b {
                                for p in 0..h * w {
                                    let mut best = f64::NEG_INFINITY;
                                    let mut arg = 0;
                                    for ci in 0..c {
                                        let x = iv[(bi * c + ci) * h * w + p];
                                        if x > best {
                                            best = x;
                                            arg = ci;
                                        }
                                    }
                                    din[(bi * c + arg) * h * w + p] += g[bi * h * w + p];
                                }
                            }
                        }
                        PoolKind::WindowAvg { k, stride } => {
                            let oh = (h - k) / stride + 1;
                            let ow = (w - k) / stride + 1;
                            let kk = (k * k) as f64;
                            for i2 in 0..b * c {
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        let gx = g[(i2 * oh + oy) * ow + ox] / kk;
                                        for u in 0..k {
                                            for t in 0..k {
                                                din[i2 * h * w + (oy * stride + u) * w + ox * stride + t] += gx;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::CropResize { input, boxes, out_h, out_w } => {
                let si = nodes[input.0].t.shape.clone();
                let (b, c, h, w) = (si[0], si[1], si[2], si[3]);
                let iv = &nodes[input.0].t.values;
                let bv = &nodes[boxes.0].t.values;
                let want_in = nodes[input.0].t.requires_grad;
                let want_box = nodes[boxes.0].t.requires_grad;
                let mut din = vec![0.0; if want_in { iv.len() } else { 0 }];
                let mut dbox = vec![0.0; if want_box { bv.len() } else { 0 }];
                for bi in 0..b {
                    let (x1, y1, x2, y2) = (bv[bi * 4], bv[bi * 4 + 1], bv[bi * 4 + 2], bv[bi * 4 + 3]);
                    for oy in 0..out_h {
                        let ry = oy as f64 / (out_h - 1) as f64;
                        let sy_raw = (y1 + (y2 - y1) * ry) * (h - 1) as f64;
                        let y_in = (0.0..=(h - 1) as f64).contains(&sy_raw);
                        let sy = sy_raw.clamp(0.0, (h - 1) as f64);
                        let y0 = (sy.floor() as usize).min(h - 2);
                        let fy = sy - y0 as f64;
                        for ox in 0..out_w {
                            let rx = ox as f64 / (out_w - 1) as f64;
                            let sx_raw = (x1 + (x2 - x1) * rx) * (w - 1) as f64;
                            let x_in = (0.0..=(w - 1) as f64).contains(&sx_raw);
                            let sx = sx_raw.clamp(0.0, (w - 1) as f64);
                            let x0 = (sx.floor() as usize).min(w - 2);
                            let fx = sx - x0 as f64;
                            for ci in 0..c {
                                let gx = g[((bi * c + ci) * out_h + oy) * out_w + ox];
                                if gx == 0.0 {
                                    continue;
                                }
                                let base = (bi * c + ci) * h * w;
                                let i00 = base + y0 * w + x0;
                                let i01 = i00 + 1;
                                let i10 = base + (y0 + 1) * w + x0;
                                let i11 = i10 + 1;
                                if want_in {
                                    din[i00] += gx * (1.0 - fy) * (1.0 - fx);
                                    din[i01] += gx * (1.0 - fy) * fx;
                                    din[i10] += gx * fy * (1.0 - fx);
                                    din[i11] += gx * fy * fx;
                                }
                                if want_box {
                                    let dv_dfy = (1.0 - fx) * (iv[i10] - iv[i00]) + fx * (iv[i11] - iv[i01]);
                                    let dv_dfx = (1.0 - fy) * (iv[i01] - iv[i00]) + fy * (iv[i11] - iv[i10]);
                                    if y_in {
                                        let dsy = gx * dv_dfy * (h - 1) as f64;
                                        dbox[bi * 4 + 1] += dsy * (1.0 - ry);
                                        dbox[bi * 4 + 3] += dsy * ry;
                                    }
                                    if x_in {
                                        let dsx = gx * dv_dfx * (w - 1) as f64;
                                        dbox[bi * 4] += dsx * (1.0 - rx);
                                        dbox[bi * 4 + 2] += dsx * rx;
                                    }
                                }
                            }
                        }
                    }
                }
                if want_in {
                    if let Some(id) = acc!(input, iv.len()) {
                        for (d, x) in adj[id.0].iter_mut().zip(din) {
                            *d += x;
                        }
                    }
                }
                if want_box {
                    if let Some(id) = acc!(boxes, bv.len()) {
                        for (d, x) in adj[id.0].iter_mut().zip(dbox) {
                            *d += x;
                        }
                    }
                }
            }
            Op::ReduceSum { input, ref axes } | Op::ReduceMean { input, ref axes } => {
                let mean = matches!(op, Op::ReduceMean { .. });
                let s = nodes[input.0].t.shape.clone();
                if let Some(id) = acc!(input, nodes[input.0].t.values.len()) {
                    let keep: Vec<usize> = (0..s.len()).filter(|d| !axes.contains(d)).collect();
                    let out_shape: Vec<usize> = keep.iter().map(|&d| s[d]).collect();
                    let out_strides = strides(&out_shape);
                    let mut map_strides = vec![0usize; s.len()];
                    for (ki, &dim) in keep.iter().enumerate() {
                        map_strides[dim] = out_strides[ki];
                    }
                    let count: f64 = if mean { axes.iter().map(|&a| s[a] as f64).product() } else { 1.0 };
                    let din = &mut adj[id.0];
                    for_each_mapped(&s, &map_strides, |flat, oi| {
                        din[flat] += g[oi] / count;
                    });
                }
            }
            Op::Concat { ref inputs, axis } => {
                let first = nodes[inputs[0].0].t.shape.clone();
                let outer: usize = first[..axis].iter().product();
                let inner: usize = first[axis + 1..].iter().product();
                let axis_total: usize = inputs.iter().map(|v| nodes[v.0].t.shape[axis]).sum();
                let mut offset = 0;
                for v in inputs.clone() {
                    let len = nodes[v.0].t.shape[axis];
                    if let Some(id) = acc!(v, nodes[v.0].t.values.len()) {
                        let din = &mut adj[id.0];
                        for o in 0..outer {
                            let src = (o * axis_total + offset) * inner;
                            let dst = o * len * inner;
                            for t in 0..len * inner {
                                din[dst + t] += g[src + t];
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Reshape { input } => {
                if let Some(id) = acc!(input, g.len()) {
                    for (d, &x) in adj[id.0].iter_mut().zip(&g) {
                        *d += x;
                    }
                }
            }
            Op::Permute { input, ref perm } => {
                let s_in = nodes[input.0].t.shape.clone();
                if let Some(id) = acc!(input, nodes[input.0].t.values.len()) {
                    let out_shape: Vec<usize> = perm.iter().map(|&p| s_in[p]).collect();
                    let out_strides = strides(&out_shape);
                    let mut map_strides = vec![0usize; s_in.len()];
                    for (od, &src_dim) in perm.iter().enumerate() {
                        map_strides[src_dim] = out_strides[od];
                    }
                    let din = &mut adj[id.0];
                    for_each_mapped(&s_in, &map_strides, |flat, oi| {
                        din[flat] += g[oi];
                    });
                }
            }
            Op::Slice { input, axis, start, end } => {
                let s = nodes[input.0].t.shape.clone();
                if let Some(id) = acc!(input, nodes[input.0].t.values.len()) {
                    let outer: usize = s[..axis].iter().product();
                    let inner: usize = s[axis + 1..].iter().product();
                    let len = end - start;
                    let din = &mut adj[id.0];
                    for o in 0..outer {
                        let dst = (o * s[axis] + start) * inner;
                        let src = o * len * inner;
                        for t in 0..len * inner {
                            din[dst + t] += g[src + t];
                        }
                    }
                }
            }
            Op::Softmax { input } => {
                if let Some(id) = acc!(input, g.len()) {
                    let yv = &nodes[i].t.values;
                    let last = *nodes[i].t.shape.last().unwrap();
                    let rows = yv.len() / last;
                    let din = &mut adj[id.0];
                    for r in 0..rows {
                        let y = &yv[r * last..(r + 1) * last];
                        let gr = &g[r * last..(r + 1) * last];
                        let dot: f64 = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((d, &yy), &gg) in
                            din[r * last..(r + 1) * last].iter_mut().zip(y).zip(gr)
                        {
                            *d += yy * (gg - dot);
                        }
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                if let Some(id) = acc!(logits, g.len()) {
                    let ov = &nodes[logits.0].t.values;
                    let yv = &nodes[targets.0].t.values;
                    for (((d, &gx), &o), &y) in adj[id.0].iter_mut().zip(&g).zip(ov).zip(yv) {
                        *d += gx * (sigmoid(o) - y);
                    }
                }
                if let Some(id) = acc!(targets, g.len()) {
                    let ov = &nodes[logits.0].t.values;
                    for ((d, &gx), &o) in adj[id.0].iter_mut().zip(&g).zip(ov) {
                        *d += gx * (-o);
                    }
                }
            }
        }
        // restore the output adjoint so it folds into grads below
        adj[i] = g;
    }

    let mut nonfinite = None;
    for (i, a) in adj.iter().enumerate() {
        if a.is_empty() {
            continue;
        }
        if nonfinite.is_none() && !a.iter().all(|x| x.is_finite()) {
            nonfinite = Some(nodes[i].op.name());
        }
        let node = &mut nodes[i];
        if node.t.grad.len() != a.len() {
            node.t.grad = vec![0.0; a.len()];
        }
        for (d, &x) in node.t.grad.iter_mut().zip(a) {
            *d += x;
        }
    }
    match nonfinite {
        Some(name) => Err(Error::NonFinite(format!("gradient of op '{name}'"))),
        None => Ok(()),
    }
}

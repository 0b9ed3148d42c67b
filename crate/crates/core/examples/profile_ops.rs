use mxa_core::attention::{windowed_mhsa, random_params, AttentionConfig, TokenGrid};
use mxa_core::mxa::{mxa_forward, CbamVars, RoiPredictorVars};
use mxa_core::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn rt(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn main() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    // stage-0 shaped attention: B8, 8x8 grid, C16, window 7 (ragged)
    let reps = 50;
    let t0 = Instant::now();
    for _ in 0..reps {
        let t = Tape::new();
        let params = random_params(&t, 16, &mut r);
        let x = t.var(rt(&[8, 64, 16], &mut r));
        let grid = TokenGrid::new(&t, x, 8, 8).unwrap();
        let cfg = AttentionConfig::new(16, 2).unwrap().with_window(7).unwrap();
        let _ = windowed_mhsa(&t, &grid, &cfg, &params).unwrap();
    }
    println!("windowed attn stage0 fwd: {:.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    let t0 = Instant::now();
    for _ in 0..reps {
        let t = Tape::new();
        let f = t.var(rt(&[8, 16, 8, 8], &mut r));
        let roi = RoiPredictorVars {
            conv1: t.var(rt(&[16, 16, 3, 3], &mut r)),
            conv2: t.var(rt(&[16, 16, 3, 3], &mut r)),
            fc_w: t.var(rt(&[16, 4], &mut r)),
            fc_b: t.var(rt(&[4], &mut r)),
        };
        let cbam = CbamVars {
            w1: t.var(rt(&[16, 4], &mut r)),
            w2: t.var(rt(&[4, 16], &mut r)),
            spatial: t.var(rt(&[1, 2, 7, 7], &mut r)),
        };
        let _ = mxa_forward(&t, f, &roi, &cbam).unwrap();
    }
    println!("mxa stage0 fwd: {:.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // bare conv timing
    let t0 = Instant::now();
    for _ in 0..reps {
        let t = Tape::new();
        let f = t.var(rt(&[8, 16, 8, 8], &mut r));
        let k = t.var(rt(&[16, 16, 3, 3], &mut r));
        let _ = t.conv2d(f, k, 1, 1).unwrap();
    }
    println!("conv 3x3 16->16 on 8x8 B8: {:.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // bare softmax-sized exp volume
    let t0 = Instant::now();
    for _ in 0..reps {
        let t = Tape::new();
        let s = t.var(rt(&[32, 2, 49, 49], &mut r));
        let _ = t.softmax(s).unwrap();
    }
    println!("softmax 32x2x49x49: {:.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // batched matmul attention-shaped
    let t0 = Instant::now();
    for _ in 0..reps {
        let t = Tape::new();
        let a = t.var(rt(&[32, 2, 49, 8], &mut r));
        let b = t.var(rt(&[32, 2, 8, 49], &mut r));
        let _ = t.matmul(a, b).unwrap();
    }
    println!("matmul 32x2 49x8x49: {:.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
}

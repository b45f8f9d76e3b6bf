use detkit::attention::{Tensor, WindowAttnWeights};

fn row(w: &Tensor, r: usize) -> &[f64] {
    let cols = w.shape()[1];
    &w.data()[r * cols..(r + 1) * cols]
}

fn apply(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.shape()[0])
        .map(|r| row(w, r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn norm(x: &[f64], scale: &Tensor, shift: &Tensor) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
    x.iter()
        .enumerate()
        .map(|(c, v)| (v - mean) / (var + 1e-5).sqrt() * scale.data()[c] + shift.data()[c])
        .collect()
}

fn gelu(x: f64) -> f64 {
    x * 0.5 * (1.0 + libm::erf(x / 2f64.sqrt()))
}

/// Whether token `a` may attend to token `b` (grid coordinates).
///
/// Both must land in the same window of the grid rolled by `-s`; with a
/// shift, the rows (and columns) that wrapped around (`i < s`) never mix
/// with rows that did not.
pub fn may_attend(
    a: (usize, usize),
    b: (usize, usize),
    h: usize,
    w: usize,
    m: usize,
    s: usize,
) -> bool {
    let win = |(i, j): (usize, usize)| (((i + h - s) % h) / m, ((j + w - s) % w) / m);
    if win(a) != win(b) {
        return false;
    }
    s == 0 || ((a.0 < s) == (b.0 < s) && (a.1 < s) == (b.1 < s))
}

/// Dense token-by-token transcription of the block: every pair of tokens
/// is considered and disallowed pairs are skipped outright.
pub fn naive_swin_block(x: &Tensor, wt: &WindowAttnWeights) -> Tensor {
    let (h, w, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = h * w;
    let token = |p: usize| &x.data()[p * d..(p + 1) * d];
    let dh = d / wt.heads;

    let t: Vec<Vec<f64>> = (0..n)
        .map(|p| norm(token(p), &wt.ln1_scale, &wt.ln1_shift))
        .collect();
    let q: Vec<Vec<f64>> = t.iter().map(|v| apply(&wt.wq, v)).collect();
    let k: Vec<Vec<f64>> = t.iter().map(|v| apply(&wt.wk, v)).collect();
    let v: Vec<Vec<f64>> = t.iter().map(|v| apply(&wt.wv, v)).collect();

    let mut out = Vec::with_capacity(n * d);
    for p in 0..n {
        let pa = (p / w, p % w);
        let mut heads = vec![0.0; d];
        for head in 0..wt.heads {
            let cols = head * dh..(head + 1) * dh;
            let allowed: Vec<usize> = (0..n)
                .filter(|&r| may_attend(pa, (r / w, r % w), h, w, wt.window, wt.shift))
                .collect();
            let logits: Vec<f64> = allowed
                .iter()
                .map(|&r| cols.clone().map(|c| q[p][c] * k[r][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = e.iter().sum();
            for (&r, ev) in allowed.iter().zip(&e) {
                for c in cols.clone() {
                    heads[c] += ev / z * v[r][c];
                }
            }
        }
        let attn = apply(&wt.wo, &heads);
        let y: Vec<f64> = token(p).iter().zip(&attn).map(|(a, b)| a + b).collect();
        let u = norm(&y, &wt.ln2_scale, &wt.ln2_shift);
        let hidden: Vec<f64> = apply(&wt.mlp_in, &u).into_iter().map(gelu).collect();
        let m = apply(&wt.mlp_out, &hidden);
        out.extend(y.iter().zip(&m).map(|(a, b)| a + b));
    }
    Tensor::new(vec![h, w, d], out).expect("same shape as input")
}

//! Window partitioning, cyclic shifts and masked scaled dot-product
//! attention on `H x W x d` token grids.

use super::tensor::Tensor;
use crate::{Error, Result};

/// Splits an `H x W x d` grid into `(H/M)(W/M)` windows of `M^2` tokens.
///
/// Output shape is `[windows, M*M, d]`; windows and the tokens inside each
/// window are in row-major order.
pub fn window_partition(x: &Tensor, m: usize) -> Result<Tensor> {
    let (h, w, d) = x.dims3()?;
    check_divisible(h, w, m)?;
    let (nh, nw) = (h / m, w / m);
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    for wi in 0..nh {
        for wj in 0..nw {
            for ti in 0..m {
                let row = (wi * m + ti) * w + wj * m;
                out.extend_from_slice(&src[row * d..(row + m) * d]);
            }
        }
    }
    Tensor::new(vec![nh * nw, m * m, d], out)
}

/// Inverse of [`window_partition`].
pub fn window_merge(windows: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (count, tokens, d) = windows.dims3()?;
    let m = (tokens as f64).sqrt().round() as usize;
    if m * m != tokens {
        return Err(Error::Shape(format!(
            "{tokens} tokens per window is not a square"
        )));
    }
    check_divisible(h, w, m)?;
    let nw = w / m;
    if count != (h / m) * nw {
        return Err(Error::Shape(format!(
            "{count} windows do not tile {h}x{w} with M={m}"
        )));
    }
    let src = windows.data();
    let mut out = vec![0.0; h * w * d];
    for (win, chunk) in src.chunks(tokens * d).enumerate() {
        let (wi, wj) = (win / nw, win % nw);
        for ti in 0..m {
            let row = (wi * m + ti) * w + wj * m;
            out[row * d..(row + m) * d].copy_from_slice(&chunk[ti * m * d..(ti + 1) * m * d]);
        }
    }
    Tensor::new(vec![h, w, d], out)
}

fn check_divisible(h: usize, w: usize, m: usize) -> Result<()> {
    if m == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(Error::Shape(format!("window {m} does not divide {h}x{w}")));
    }
    Ok(())
}

fn roll(x: &Tensor, s: usize, forward: bool) -> Result<Tensor> {
    let (h, w, d) = x.dims3()?;
    if s >= h.min(w) {
        return Err(Error::Shape(format!(
            "shift {s} must be below min({h}, {w})"
        )));
    }
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for i in 0..h {
        for j in 0..w {
            let (si, sj) = if forward {
                ((i + s) % h, (j + s) % w)
            } else {
                ((i + h - s) % h, (j + w - s) % w)
            };
            let (to, from) = ((i * w + j) * d, (si * w + sj) * d);
            out[to..to + d].copy_from_slice(&src[from..from + d]);
        }
    }
    Tensor::new(vec![h, w, d], out)
}

/// Rotates rows and columns by `-s`: the token at `(i, j)` moves to
/// `(i - s, j - s)` modulo the grid.
pub fn cyclic_shift(x: &Tensor, s: usize) -> Result<Tensor> {
    roll(x, s, true)
}

/// Undoes [`cyclic_shift`].
pub fn inverse_shift(x: &Tensor, s: usize) -> Result<Tensor> {
    roll(x, s, false)
}

/// Region label of every position of the shifted grid. Tokens in the same
/// window but different regions were not neighbours before the shift.
pub fn shift_regions(h: usize, w: usize, m: usize, s: usize) -> Vec<usize> {
    let band = |i: usize, n: usize| {
        if i < n - m {
            0
        } else if i < n - s {
            1
        } else {
            2
        }
    };
    (0..h * w)
        .map(|p| 3 * band(p / w, h) + band(p % w, w))
        .collect()
}

/// Additive attention masks (`0` or `-inf`), one `[M^2, M^2]` tensor per
/// window, for a grid shifted by `s`. `None` when `s == 0`.
pub fn shift_masks(h: usize, w: usize, m: usize, s: usize) -> Result<Option<Vec<Tensor>>> {
    check_divisible(h, w, m)?;
    if s == 0 {
        return Ok(None);
    }
    let labels = Tensor::new(
        vec![h, w, 1],
        shift_regions(h, w, m, s)
            .into_iter()
            .map(|r| r as f64)
            .collect(),
    )?;
    let parts = window_partition(&labels, m)?;
    let n = m * m;
    Ok(Some(
        parts
            .data()
            .chunks(n)
            .map(|ids| {
                Tensor::from_fn(&[n, n], |k| {
                    if ids[k / n] == ids[k % n] {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                })
            })
            .collect(),
    ))
}

/// Row-stochastic weights `softmax(q k^T / sqrt(dk) + mask)`.
pub fn attention_weights(q: &Tensor, k: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let (n, dk) = q.dims2()?;
    let (nk, dk2) = k.dims2()?;
    if dk != dk2 {
        return Err(Error::Shape(format!("query width {dk} vs key width {dk2}")));
    }
    if let Some(m) = mask {
        m.expect_shape(&[n, nk])?;
    }
    let scale = 1.0 / (dk as f64).sqrt();
    let (qd, kd) = (q.data(), k.data());
    let mut out = vec![0.0; n * nk];
    for i in 0..n {
        let row = &mut out[i * nk..(i + 1) * nk];
        for (j, r) in row.iter_mut().enumerate() {
            let dot: f64 = qd[i * dk..(i + 1) * dk]
                .iter()
                .zip(&kd[j * dk..(j + 1) * dk])
                .map(|(a, b)| a * b)
                .sum();
            *r = dot * scale + mask.map_or(0.0, |m| m.data()[i * nk + j]);
        }
        softmax_in_place(row).ok_or(Error::FullyMasked(i))?;
    }
    Tensor::new(vec![n, nk], out)
}

fn softmax_in_place(row: &mut [f64]) -> Option<()> {
    let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return None;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - top).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    Some(())
}

/// `softmax(q k^T / sqrt(dk) + mask) v` for one head of one window.
pub fn scaled_softmax_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    let p = attention_weights(q, k, mask)?;
    let (n, nk) = p.dims2()?;
    let (nv, dv) = v.dims2()?;
    if nv != nk {
        return Err(Error::Shape(format!("{nk} keys vs {nv} values")));
    }
    Ok(weighted_sum(&p, v, n, dv))
}

fn weighted_sum(p: &Tensor, v: &Tensor, n: usize, dv: usize) -> Tensor {
    let nk = p.shape()[1];
    let (pd, vd) = (p.data(), v.data());
    Tensor::from_fn(&[n, dv], |idx| {
        let (i, c) = (idx / dv, idx % dv);
        (0..nk).map(|j| pd[i * nk + j] * vd[j * dv + c]).sum()
    })
}

/// Gradients of [`scaled_softmax_attention`] with respect to `q`, `k` and
/// `v`, given the forward weights `p`.
pub(crate) fn attention_vjp(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    p: &Tensor,
    g_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, dk) = (q.shape()[0], q.shape()[1]);
    let nk = k.shape()[0];
    let dv = v.shape()[1];
    let scale = 1.0 / (dk as f64).sqrt();
    let (pd, vd, gd, qd, kd) = (p.data(), v.data(), g_out.data(), q.data(), k.data());

    let mut g_v = vec![0.0; nk * dv];
    let mut g_logits = vec![0.0; n * nk];
    for i in 0..n {
        let go = &gd[i * dv..(i + 1) * dv];
        let mut g_p = vec![0.0; nk];
        for j in 0..nk {
            let pij = pd[i * nk + j];
            let vj = &vd[j * dv..(j + 1) * dv];
            g_p[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
            for (gv, &g) in g_v[j * dv..(j + 1) * dv].iter_mut().zip(go) {
                *gv += pij * g;
            }
        }
        let inner: f64 = (0..nk).map(|j| g_p[j] * pd[i * nk + j]).sum();
        for j in 0..nk {
            g_logits[i * nk + j] = pd[i * nk + j] * (g_p[j] - inner) * scale;
        }
    }

    let mut g_q = vec![0.0; n * dk];
    let mut g_k = vec![0.0; nk * dk];
    for i in 0..n {
        for j in 0..nk {
            let gl = g_logits[i * nk + j];
            if gl == 0.0 {
                continue;
            }
            for c in 0..dk {
                g_q[i * dk + c] += gl * kd[j * dk + c];
                g_k[j * dk + c] += gl * qd[i * dk + c];
            }
        }
    }
    (
        Tensor::from_fn(&[n, dk], |i| g_q[i]),
        Tensor::from_fn(&[nk, dk], |i| g_k[i]),
        Tensor::from_fn(&[nk, dv], |i| g_v[i]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, d: usize) -> Tensor {
        Tensor::from_fn(&[h, w, d], |i| i as f64)
    }

    #[test]
    fn partition_fixtures() {
        let p = window_partition(&grid(4, 4, 3), 2).unwrap();
        assert_eq!(p.shape(), &[4, 4, 3]);
        // second window holds tokens (0,2),(0,3),(1,2),(1,3)
        let first_tokens: Vec<f64> = p.data()[12..24].chunks(3).map(|t| t[0] / 3.0).collect();
        assert_eq!(first_tokens, vec![2.0, 3.0, 6.0, 7.0]);

        let x = grid(2, 2, 1);
        let one = window_partition(&x, 2).unwrap();
        assert_eq!(one.shape(), &[1, 4, 1]);
        assert_eq!(one.data(), x.data());
        assert!(window_partition(&grid(4, 6, 1), 4).is_err());
    }

    #[test]
    fn merge_inverts_partition() {
        let x = Tensor::seeded_uniform(&[6, 4, 3], 2);
        let back = window_merge(&window_partition(&x, 2).unwrap(), 6, 4).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn shift_fixtures() {
        let x = grid(2, 2, 1);
        assert_eq!(cyclic_shift(&x, 0).unwrap(), x);
        // [a b; c d] -> [d c; b a]
        assert_eq!(cyclic_shift(&x, 1).unwrap().data(), &[3.0, 2.0, 1.0, 0.0]);
        let y = Tensor::seeded_uniform(&[5, 7, 2], 4);
        assert_eq!(inverse_shift(&cyclic_shift(&y, 3).unwrap(), 3).unwrap(), y);
        assert!(cyclic_shift(&y, 5).is_err());
    }

    #[test]
    fn attention_fixtures() {
        let q = Tensor::new(vec![1, 2], vec![0.3, -1.0]).unwrap();
        let v = Tensor::new(vec![1, 2], vec![4.0, 5.0]).unwrap();
        assert_eq!(scaled_softmax_attention(&q, &q, &v, None).unwrap(), v);

        let q = Tensor::seeded_uniform(&[4, 3], 1);
        let k = Tensor::full(&[4, 3], 0.25);
        let p = attention_weights(&q, &k, None).unwrap();
        assert!(p.data().iter().all(|&w| (w - 0.25).abs() < 1e-15));

        let mut mask = Tensor::zeros(&[4, 4]);
        mask.data_mut()[2] = f64::NEG_INFINITY;
        let p = attention_weights(&q, &Tensor::seeded_uniform(&[4, 3], 2), Some(&mask)).unwrap();
        assert_eq!(p.data()[2], 0.0);
        for row in p.data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        let all = Tensor::full(&[4, 4], f64::NEG_INFINITY);
        assert!(matches!(
            attention_weights(&q, &q, Some(&all)),
            Err(Error::FullyMasked(0))
        ));
    }

    #[test]
    fn masks_only_join_same_region() {
        let masks = shift_masks(4, 4, 2, 1).unwrap().unwrap();
        assert_eq!(masks.len(), 4);
        // the last window straddles the wrap-around in both axes
        let open = masks[3].data().iter().filter(|v| **v == 0.0).count();
        assert_eq!(open, 4);
        assert!(shift_masks(4, 4, 2, 0).unwrap().is_none());
        assert!(masks[0].data().iter().all(|v| *v == 0.0));
    }
}

use detkit::attention::gradcheck::{check_cbam, check_swin_block, DEFAULT_STEP, DEFAULT_TOLERANCE};
use detkit::attention::swin::WindowAttnWeights;
use detkit::attention::{swin_attention_maps, swin_block_forward, Tensor};
use detkit_oracles::swin::{may_attend, naive_swin_block};

fn fixtures() -> Vec<(usize, usize, usize, usize, usize, usize)> {
    // (H, W, d, M, shift, heads)
    let mut out = Vec::new();
    for &(h, w) in &[(2, 2), (4, 4), (4, 8), (8, 4), (6, 6), (8, 8)] {
        for &d in &[2, 4, 8] {
            for m in [1, 2, 4, 8] {
                if h % m != 0 || w % m != 0 {
                    continue;
                }
                for shift in [0, m / 2] {
                    for heads in [1, 2] {
                        if d % heads == 0 {
                            out.push((h, w, d, m, shift, heads));
                        }
                    }
                }
            }
        }
    }
    out.dedup();
    out
}

#[test]
fn block_matches_dense_reference() {
    let cases = fixtures();
    assert!(cases.len() > 50);
    for (n, &(h, w, d, m, s, heads)) in cases.iter().enumerate() {
        let seed = n as u64;
        let weights = WindowAttnWeights::seeded(d, m, s, heads, seed)
            .unwrap()
            .with_random_norms(seed + 1);
        let x = Tensor::seeded_uniform(&[h, w, d], seed + 2).map(|v| 4.0 * v);
        let got = swin_block_forward(&x, &weights).unwrap();
        let want = naive_swin_block(&x, &weights);
        let err = got.max_abs_diff(&want).unwrap();
        assert!(
            err <= 1e-10,
            "H={h} W={w} d={d} M={m} s={s} heads={heads}: {err:e}"
        );
    }
}

#[test]
fn softmax_rows_and_cross_region_zeros() {
    for &(h, w, d, m, s, heads) in &fixtures() {
        let weights = WindowAttnWeights::seeded(d, m, s, heads, 3).unwrap();
        let x = Tensor::seeded_uniform(&[h, w, d], 4);
        for win in swin_attention_maps(&x, &weights).unwrap() {
            for p in &win.weights {
                let n = win.tokens.len();
                for i in 0..n {
                    let row = &p.data()[i * n..(i + 1) * n];
                    assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    for (j, &v) in row.iter().enumerate() {
                        let a = (win.tokens[i] / w, win.tokens[i] % w);
                        let b = (win.tokens[j] / w, win.tokens[j] % w);
                        if !may_attend(a, b, h, w, m, s) {
                            assert_eq!(v, 0.0);
                        } else {
                            assert!(v > 0.0);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn gradient_checks_over_seeds() {
    for seed in 0..5 {
        for report in [
            check_cbam(seed, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap(),
            check_swin_block(seed, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap(),
        ] {
            assert!(
                report.pass,
                "{} seed {seed}: {:e}",
                report.module, report.max_rel_error
            );
        }
    }
}

//! Grouped convolution checked against an independent nested-loop
//! reference in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmambair::tensor::conv::conv2d_grouped;
use vmambair::Tensor;

struct Case {
    b: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
}

/// Direct definition: zero-padded cross-correlation, channels split into
/// contiguous groups.
fn reference(x: &[f64], wt: &[f64], bias: &[f64], c: &Case) -> Vec<f64> {
    let oh = (c.h + 2 * c.pad - c.k) / c.stride + 1;
    let ow = (c.w + 2 * c.pad - c.k) / c.stride + 1;
    let cin_g = c.cin / c.groups;
    let cout_g = c.cout / c.groups;
    let mut out = vec![0.0; c.b * c.cout * oh * ow];
    for b in 0..c.b {
        for co in 0..c.cout {
            let g = co / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin_g {
                        let cin_abs = g * cin_g + ci;
                        for ky in 0..c.k {
                            for kx in 0..c.k {
                                let iy = oy * c.stride + ky;
                                let ix = ox * c.stride + kx;
                                if iy < c.pad || ix < c.pad {
                                    continue;
                                }
                                let (iy, ix) = (iy - c.pad, ix - c.pad);
                                if iy >= c.h || ix >= c.w {
                                    continue;
                                }
                                acc += x[((b * c.cin + cin_abs) * c.h + iy) * c.w + ix]
                                    * wt[((co * cin_g + ci) * c.k + ky) * c.k + kx];
                            }
                        }
                    }
                    out[((b * c.cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

fn run_case(rng: &mut ChaCha8Rng, c: &Case) {
    let xv: Vec<f64> = (0..c.b * c.cin * c.h * c.w)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let cin_g = c.cin / c.groups;
    let wv: Vec<f64> = (0..c.cout * cin_g * c.k * c.k)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let bv: Vec<f64> = (0..c.cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::new(xv.clone(), &[c.b, c.cin, c.h, c.w]).unwrap();
    let w = Tensor::new(wv.clone(), &[c.cout, cin_g, c.k, c.k]).unwrap();
    let bias = Tensor::new(bv.clone(), &[c.cout]).unwrap();
    let y = conv2d_grouped(&x, &w, &bias, c.stride, c.pad, c.groups).unwrap();
    let want = reference(&xv, &wv, &bv, c);
    let got = y.to_vec();
    assert_eq!(got.len(), want.len());
    for (i, (g, r)) in got.iter().zip(&want).enumerate() {
        assert!(
            (g - r).abs() < 1e-12,
            "b{} cin{} cout{} k{} s{} p{} g{}: element {i}: {g} vs {r}",
            c.b, c.cin, c.cout, c.k, c.stride, c.pad, c.groups
        );
    }
}

#[test]
fn matches_nested_loop_reference_across_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cases = [
        Case { b: 1, cin: 1, cout: 1, h: 5, w: 5, k: 3, stride: 1, pad: 1, groups: 1 },
        Case { b: 2, cin: 3, cout: 8, h: 6, w: 7, k: 3, stride: 1, pad: 1, groups: 1 },
        Case { b: 1, cin: 4, cout: 4, h: 8, w: 8, k: 3, stride: 1, pad: 1, groups: 4 },
        Case { b: 2, cin: 6, cout: 4, h: 5, w: 9, k: 1, stride: 1, pad: 0, groups: 2 },
        Case { b: 1, cin: 8, cout: 8, h: 9, w: 9, k: 5, stride: 1, pad: 2, groups: 8 },
        Case { b: 1, cin: 3, cout: 5, h: 8, w: 8, k: 3, stride: 2, pad: 1, groups: 1 },
        Case { b: 2, cin: 2, cout: 6, h: 7, w: 7, k: 3, stride: 1, pad: 0, groups: 2 },
        Case { b: 1, cin: 4, cout: 12, h: 4, w: 4, k: 1, stride: 1, pad: 0, groups: 1 },
    ];
    for c in &cases {
        run_case(&mut rng, c);
    }
}

#[test]
fn random_shape_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let groups = [1usize, 2][rng.gen_range(0..2)];
        let cin = groups * rng.gen_range(1..=3usize);
        let cout = groups * rng.gen_range(1..=3usize);
        let k = 2 * rng.gen_range(0..=2usize) + 1;
        let c = Case {
            b: rng.gen_range(1..=2),
            cin,
            cout,
            h: rng.gen_range(k..=k + 6),
            w: rng.gen_range(k..=k + 6),
            k,
            stride: rng.gen_range(1..=2),
            pad: rng.gen_range(0..=k / 2 + 1),
            groups,
        };
        run_case(&mut rng, &c);
    }
}

//! Independent gradient and forward-pass verification. The convolution
//! oracle here is a plain quadruple loop nest written without reference to
//! the graph implementation; matmul gradients are checked against central
//! finite differences computed directly in this file.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use merw_core::gradcheck::{run_suite, FD_STEP, FD_TOL};
use merw_core::{Graph, Tensor};

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Zero-padded cross-correlation, written as the textbook loop nest.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    input: &[f64],
    kernels: &[f64],
    bias: &[f64],
    (b, cin, h, w): (usize, usize, usize, usize),
    (cout, kh, kw): (usize, usize, usize),
    padding: usize,
    stride: usize,
) -> Vec<f64> {
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; b * cout * oh * ow];
    for bi in 0..b {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let iv = input
                                    [((bi * cin + ci) * h + iy as usize) * w + ix as usize];
                                let kv = kernels[((co * cin + ci) * kh + ky) * kw + kx];
                                acc += iv * kv;
                            }
                        }
                    }
                    out[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_forward_matches_loop_nest_oracle() {
    let cases = [
        ((1, 1, 5, 6), (2, 3, 3), 1, 1),
        ((2, 3, 4, 4), (4, 3, 3), 1, 1),
        ((1, 2, 7, 5), (3, 2, 2), 0, 1),
        ((2, 2, 8, 8), (2, 3, 3), 1, 2),
        ((1, 1, 4, 4), (1, 1, 1), 0, 1),
    ];
    for (seed, &((b, cin, h, w), (cout, kh, kw), padding, stride)) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let input = random_vec(&mut rng, b * cin * h * w);
        let kernels = random_vec(&mut rng, cout * cin * kh * kw);
        let bias = random_vec(&mut rng, cout);
        let expected =
            conv_oracle(&input, &kernels, &bias, (b, cin, h, w), (cout, kh, kw), padding, stride);

        let mut g: Graph<f64> = Graph::new();
        let xi = g.leaf(Tensor::new(vec![b, cin, h, w], input).unwrap(), false);
        let ki = g.leaf(Tensor::new(vec![cout, cin, kh, kw], kernels).unwrap(), false);
        let bi = g.leaf(Tensor::new(vec![cout], bias).unwrap(), false);
        let out = g.conv2d(xi, ki, bi, padding, stride).unwrap();
        let got = g.value(out).data();
        assert_eq!(got.len(), expected.len());
        for (a, e) in got.iter().zip(&expected) {
            assert!((a - e).abs() <= 1e-12 * e.abs().max(1.0), "{a} vs {e}");
        }
    }
}

/// Scalar loss of a matmul as a function of one flattened parameter vector;
/// used for the in-file finite-difference check below.
fn matmul_loss(a: &[f64], b: &[f64], (m, k, n): (usize, usize, usize)) -> f64 {
    let mut g: Graph<f64> = Graph::new();
    let ai = g.leaf(Tensor::new(vec![m, k], a.to_vec()).unwrap(), false);
    let bi = g.leaf(Tensor::new(vec![k, n], b.to_vec()).unwrap(), false);
    let c = g.matmul(ai, bi).unwrap();
    // mean of squares keeps the loss curvature nontrivial in every entry
    let zero = g.leaf(Tensor::new(vec![m, n], vec![0.0; m * n]).unwrap(), false);
    let loss = g.mse_loss(c, zero).unwrap();
    g.value(loss).item().unwrap()
}

#[test]
fn matmul_gradients_match_central_differences() {
    let (m, k, n) = (4, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_vec(&mut rng, m * k);
    let b = random_vec(&mut rng, k * n);

    let mut g: Graph<f64> = Graph::new();
    let ai = g.leaf(Tensor::new(vec![m, k], a.clone()).unwrap(), true);
    let bi = g.leaf(Tensor::new(vec![k, n], b.clone()).unwrap(), true);
    let c = g.matmul(ai, bi).unwrap();
    let zero = g.leaf(Tensor::new(vec![m, n], vec![0.0; m * n]).unwrap(), false);
    let loss = g.mse_loss(c, zero).unwrap();
    g.backward(loss).unwrap();
    let ga = g.grad(ai).unwrap().to_vec();
    let gb = g.grad(bi).unwrap().to_vec();

    let h = 1e-5;
    for i in 0..a.len() {
        let mut ap = a.clone();
        let mut am = a.clone();
        ap[i] += h;
        am[i] -= h;
        let fd = (matmul_loss(&ap, &b, (m, k, n)) - matmul_loss(&am, &b, (m, k, n))) / (2.0 * h);
        let scale = fd.abs().max(ga[i].abs()).max(1.0);
        assert!((fd - ga[i]).abs() / scale <= 1e-6, "dA[{i}]: {fd} vs {}", ga[i]);
    }
    for i in 0..b.len() {
        let mut bp = b.clone();
        let mut bm = b.clone();
        bp[i] += h;
        bm[i] -= h;
        let fd = (matmul_loss(&a, &bp, (m, k, n)) - matmul_loss(&a, &bm, (m, k, n))) / (2.0 * h);
        let scale = fd.abs().max(gb[i].abs()).max(1.0);
        assert!((fd - gb[i]).abs() / scale <= 1e-6, "dB[{i}]: {fd} vs {}", gb[i]);
    }
}

#[test]
fn full_suite_passes_ten_seeds_within_budget() {
    let start = std::time::Instant::now();
    let results = run_suite(0..10, FD_STEP, FD_TOL).unwrap();
    for r in &results {
        assert!(r.passed(), "{}: max rel err {} (tol {})", r.name, r.max_rel_err, r.tol);
    }
    assert!(results.iter().any(|r| r.name.contains("a2m2e")));
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "suite took {elapsed:?}, budget is 60 s");
}

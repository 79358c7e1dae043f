//! Test-side reference computations. None of these call into the code under
//! test except to obtain the value being checked.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vispgan::blend::{poisson_blend_frame, BlendRegion, Frame};
use vispgan::chargrid::{expand_characters, Alphabet};
use vispgan::eval::{compute_feature_stats, fid_score};
use vispgan::losses::gradient_penalty;
use vispgan::Tensor;

pub const LAMBDA_GP: f64 = 10.0;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Run lengths of a label sequence as (label, length) pairs.
pub fn runs(labels: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &l in labels {
        match out.last_mut() {
            Some((v, n)) if *v == l => *n += 1,
            _ => out.push((l, 1)),
        }
    }
    out
}

/// The "around" example: six runs of four frames, in spelling order.
pub fn around_is_six_runs_of_four() -> bool {
    let a = Alphabet::english();
    let seq = expand_characters("around", 24, &a).unwrap();
    let expected: Vec<(usize, usize)> = "around"
        .chars()
        .map(|c| (a.index_of(c).unwrap(), 4))
        .collect();
    seq.labels.len() == 24 && runs(&seq.labels) == expected
}

/// Checks the expansion of one word against the structural properties:
/// characters in spelling order, each held for a contiguous block, block
/// sizes summing to `frames`, differing by at most one, longer blocks first.
pub fn expansion_violation(word: &str, frames: usize, a: &Alphabet) -> Option<String> {
    let seq = match expand_characters(word, frames, a) {
        Ok(s) => s,
        Err(e) => return Some(format!("{word}/{frames}: {e}")),
    };
    let lengths = seq.run_lengths();
    if seq.labels.len() != frames || lengths.iter().sum::<usize>() != frames {
        return Some(format!("{word}/{frames}: lengths {lengths:?}"));
    }
    let (lo, hi) = (lengths.iter().min().unwrap(), lengths.iter().max().unwrap());
    if hi - lo > 1 || *lo != frames / word.len() || lengths.windows(2).any(|w| w[0] < w[1]) {
        return Some(format!("{word}/{frames}: unbalanced {lengths:?}"));
    }
    let mut t = 0;
    for (c, &len) in word.chars().zip(&lengths) {
        let idx = a.index_of(c).unwrap();
        if seq.labels[t..t + len].iter().any(|&l| l != idx) {
            return Some(format!("{word}/{frames}: block at {t} is not {c}"));
        }
        t += len;
    }
    None
}

/// Count of violations over `pairs` random (word, T) draws.
pub fn expansion_property_failures(pairs: usize, seed: u64) -> Vec<String> {
    let a = Alphabet::english();
    let mut r = rng(seed);
    let mut failures = Vec::new();
    for _ in 0..pairs {
        let n = r.random_range(1..=12);
        let word: String = (0..n)
            .map(|_| a.symbol(r.random_range(0..a.len())).unwrap())
            .collect();
        let frames = r.random_range(n..=64);
        failures.extend(expansion_violation(&word, frames, &a));
    }
    failures
}

fn penalty_of(
    critic: &dyn Fn(&Tensor<f64>) -> vispgan::Result<Tensor<f64>>,
    n: usize,
    d: usize,
    seed: u64,
) -> f64 {
    let mut r = rng(seed);
    let points: Vec<f64> = (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect();
    gradient_penalty(critic, &Tensor::from_vec(points, &[n, d]))
        .unwrap()
        .item()
}

/// `λ · GP` for a linear critic with a unit-norm weight vector (expected 0).
pub fn unit_linear_penalty(d: usize, seed: u64) -> f64 {
    let mut r = rng(seed ^ 0x55);
    let mut w: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v /= norm);
    let w = Tensor::from_vec(w, &[d, 1]);
    LAMBDA_GP * penalty_of(&|x: &Tensor<f64>| Ok(x.matmul(&w)), 5, d, seed)
}

/// `(λ · GP, λ (2√d − 1)²)` for the critic `2 Σ x`.
pub fn doubled_sum_penalty(d: usize, seed: u64) -> (f64, f64) {
    let got = LAMBDA_GP
        * penalty_of(
            &|x: &Tensor<f64>| Ok(x.sum_axes_keepdim(&[1]).mul_scalar(2.0)),
            5,
            d,
            seed,
        );
    let expected = LAMBDA_GP * (2.0 * (d as f64).sqrt() - 1.0).powi(2);
    (got, expected)
}

fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fid_score(
        &compute_feature_stats(a).unwrap(),
        &compute_feature_stats(b).unwrap(),
    )
    .unwrap()
}

fn random_features(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    // correlated columns so the covariance is far from diagonal
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
            (0..d)
                .map(|j| z[j] + 0.5 * z[(j + 1) % d] + 0.1 * j as f64)
                .collect()
        })
        .collect()
}

pub fn fid_self_distance() -> f64 {
    let a = random_features(40, 5, 1);
    fid(&a, &a)
}

/// One-dimensional sets with equal variance and means two apart: 4.0.
pub fn fid_one_dimensional() -> (f64, f64) {
    let a: Vec<Vec<f64>> = [0.0, 2.0, 1.0, 3.0].iter().map(|&v| vec![v]).collect();
    let b: Vec<Vec<f64>> = a.iter().map(|v| vec![v[0] + 2.0]).collect();
    (fid(&a, &b), 4.0)
}

/// Two-level factorial point sets have exactly diagonal sample covariance,
/// so the distance decomposes into `‖Δμ‖² + Σ (σa − σb)²`.
pub fn fid_diagonal() -> (f64, f64) {
    let design = |mu: &[f64], s: &[f64]| -> Vec<Vec<f64>> {
        let d = mu.len();
        (0..1usize << d)
            .map(|k| {
                (0..d)
                    .map(|j| mu[j] + if k >> j & 1 == 1 { s[j] } else { -s[j] })
                    .collect()
            })
            .collect()
    };
    let (mu_a, s_a) = ([0.5, -1.0, 2.0], [1.0, 0.3, 2.0]);
    let (mu_b, s_b) = ([0.0, 1.0, 2.5], [0.5, 0.9, 2.0]);
    let a = design(&mu_a, &s_a);
    let b = design(&mu_b, &s_b);
    // unbiased variance of ±s over 2^d points
    let scale = |n: usize| (n as f64 / (n - 1) as f64).sqrt();
    let (ka, kb) = (scale(a.len()), scale(b.len()));
    let mut expected = 0.0;
    for j in 0..3 {
        expected += (mu_a[j] - mu_b[j]).powi(2) + (ka * s_a[j] - kb * s_b[j]).powi(2);
    }
    (fid(&a, &b), expected)
}

/// `(FID(a, b), FID(Qa, Qb))` for a random orthogonal `Q`.
pub fn fid_rotation() -> (f64, f64) {
    let d = 4;
    let a = random_features(60, d, 2);
    let b: Vec<Vec<f64>> = random_features(50, d, 3)
        .into_iter()
        .map(|v| v.iter().map(|x| 1.3 * x - 0.2).collect())
        .collect();
    let mut r = rng(4);
    let m = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
    let q = m.qr().q();
    let rotate = |s: &[Vec<f64>]| -> Vec<Vec<f64>> {
        s.iter()
            .map(|v| {
                (&q * DVector::from_column_slice(v))
                    .iter()
                    .copied()
                    .collect()
            })
            .collect()
    };
    (fid(&a, &b), fid(&rotate(&a), &rotate(&b)))
}

fn wavy(h: usize, w: usize, c: usize, phase: f64) -> Frame {
    let data = (0..h * w * c)
        .map(|i| (i as f64 * 0.61 + phase).sin() * 0.7)
        .collect();
    Frame::new(h, w, c, data).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Scrambles the unknown pixels of `frame` inside `region`, so the solver
/// cannot succeed by leaving its starting point alone.
fn scramble_interior(frame: &mut Frame, top: usize, left: usize, h: usize, w: usize) {
    let c = frame.channels;
    for y in top + 1..top + h - 1 {
        for x in left + 1..left + w - 1 {
            for ch in 0..c {
                frame.data[(y * frame.width + x) * c + ch] = ((y * 31 + x * 17 + ch) as f64).sin();
            }
        }
    }
}

/// Constant boundary and constant source: the region fills with the
/// boundary constant. Also a linear ramp boundary with a ramp source
/// (harmonic, so it is reproduced exactly).
pub fn blend_harmonic_error() -> f64 {
    let mut target = Frame::filled(9, 8, 3, -0.25);
    scramble_interior(&mut target, 1, 2, 7, 5);
    let (out, _) = poisson_blend_frame(
        &target,
        &Frame::filled(7, 5, 3, 0.8),
        &BlendRegion::rect(1, 2, 7, 5),
        1e-12,
    )
    .unwrap();
    let flat = max_abs_diff(&out.data, &Frame::filled(9, 8, 3, -0.25).data);
    let ramp = |y: usize, x: usize| 0.05 * y as f64 - 0.03 * x as f64 + 0.1;
    let (h, w) = (10, 9);
    let exact = Frame::new(h, w, 1, (0..h * w).map(|i| ramp(i / w, i % w)).collect()).unwrap();
    let mut target = exact.clone();
    scramble_interior(&mut target, 2, 1, 6, 6);
    let source = Frame::new(
        6,
        6,
        1,
        (0..36).map(|i| ramp(i / 6 + 2, i % 6 + 1) + 0.4).collect(),
    )
    .unwrap();
    let (out, _) =
        poisson_blend_frame(&target, &source, &BlendRegion::rect(2, 1, 6, 6), 1e-12).unwrap();
    flat.max(max_abs_diff(&out.data, &exact.data))
}

/// Source equal to the target crop: nothing to correct.
pub fn blend_zero_correction_error() -> f64 {
    let target = wavy(10, 11, 3, 0.3);
    let region = BlendRegion::rect(2, 1, 7, 8);
    let source = target.crop(2, 1, 7, 8).unwrap();
    let (out, _) = poisson_blend_frame(&target, &source, &region, 1e-12).unwrap();
    max_abs_diff(&out.data, &target.data)
}

/// A 6x6 region (4x4 unknowns) solved densely with the 5-point Laplacian
/// and compared with the iterative solver.
pub fn blend_dense_error() -> f64 {
    let (h, w, c) = (8, 9, 2);
    let (top, left, rh, rw) = (1, 2, 6, 6);
    let target = wavy(h, w, c, 1.1);
    let source = wavy(rh, rw, c, 2.7);
    let (out, _) = poisson_blend_frame(
        &target,
        &source,
        &BlendRegion::rect(top, left, rh, rw),
        1e-13,
    )
    .unwrap();
    let inside = |y: usize, x: usize| y > top && y < top + rh - 1 && x > left && x < left + rw - 1;
    let cells: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| inside(y, x))
        .collect();
    assert_eq!(cells.len(), 16);
    let index = |y: usize, x: usize| cells.iter().position(|&p| p == (y, x));
    let mut worst: f64 = 0.0;
    for ch in 0..c {
        let g = |y: usize, x: usize| source.get(y - top, x - left, ch);
        let mut a = DMatrix::<f64>::zeros(16, 16);
        let mut b = DVector::<f64>::zeros(16);
        for (i, &(y, x)) in cells.iter().enumerate() {
            for (ny, nx) in [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)] {
                a[(i, i)] += 1.0;
                b[i] += g(y, x) - g(ny, nx);
                match index(ny, nx) {
                    Some(j) => a[(i, j)] -= 1.0,
                    None => b[i] += target.get(ny, nx, ch),
                }
            }
        }
        let f = a.lu().solve(&b).unwrap();
        for (i, &(y, x)) in cells.iter().enumerate() {
            worst = worst.max((f[i] - out.get(y, x, ch)).abs());
        }
    }
    // pixels outside the unknown set are untouched
    for y in 0..h {
        for x in 0..w {
            if !inside(y, x) {
                for ch in 0..c {
                    worst = worst.max((out.get(y, x, ch) - target.get(y, x, ch)).abs());
                }
            }
        }
    }
    worst
}

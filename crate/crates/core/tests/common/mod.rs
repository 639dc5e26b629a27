//! Checks shared by the numerics tests and the acceptance report. Each
//! function returns the measured quantity; callers decide what passes.
#![allow(dead_code)]

use classunlearn::linalg::{cg_solve, DenseMat, FeatureMatrix};
use classunlearn::metrics::ks_two_sample;
use classunlearn::privacy::roc_auc;
use classunlearn::softmax::{self, ModelParams, TrainConfig};
use classunlearn::unlearn::{hessian_downweight, newton_downweight, CgConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Instance {
    pub x: FeatureMatrix,
    pub y: Vec<usize>,
    pub model: ModelParams,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMat {
    let data = (0..rows * cols).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect();
    DenseMat::from_vec(rows, cols, data).unwrap()
}

/// Sparse-ish non-negative features, random labels covering every class.
pub fn random_data(r: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> (FeatureMatrix, Vec<usize>) {
    let mut m = DenseMat::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            if r.random::<f64>() < 0.6 {
                m.set(i, j, r.random::<f64>());
            }
        }
    }
    let mut y: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
    for (i, yi) in y.iter_mut().enumerate().take(k.min(n)) {
        *yi = i;
    }
    (FeatureMatrix::from_dense(&m), y)
}

/// Random instance with `n ≤ 30`, `d ≤ 8`, `K ≤ 5` and random weights.
pub fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let n = r.random_range(5..=30);
    let d = r.random_range(2..=8);
    let k = r.random_range(2..=5);
    let (x, y) = random_data(&mut r, n, d, k);
    let lambda = r.random_range(0.05..1.0);
    let model = ModelParams::new(normal_mat(&mut r, k, d, 0.7), lambda).unwrap();
    Instance { x, y, model }
}

/// Largest deviation of the analytic gradient from central differences (step 1e-6).
pub fn gradient_fd_error(inst: &Instance) -> f64 {
    let g = softmax::gradient(&inst.model, &inst.x, &inst.y).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let w = inst.model.weights();
    for idx in 0..w.as_slice().len() {
        let mut wp = w.clone();
        wp.as_mut_slice()[idx] += h;
        let mut wm = w.clone();
        wm.as_mut_slice()[idx] -= h;
        let lp = softmax::loss(&inst.model.with_weights(wp).unwrap(), &inst.x, &inst.y).unwrap();
        let lm = softmax::loss(&inst.model.with_weights(wm).unwrap(), &inst.x, &inst.y).unwrap();
        worst = worst.max(((lp - lm) / (2.0 * h) - g.as_slice()[idx]).abs());
    }
    worst
}

/// Largest deviation of the HVP from central differences of the gradient (ε = 1e-5).
pub fn hvp_fd_error(inst: &Instance, seed: u64) -> f64 {
    let mut r = rng(seed);
    let (k, d) = (inst.model.num_classes(), inst.model.dim());
    let v = normal_mat(&mut r, k, d, 1.0);
    let hv = softmax::hvp(&inst.model, &inst.x, &v).unwrap();
    let eps = 1e-5;
    let shifted = |sign: f64| {
        let mut w = inst.model.weights().clone();
        for (a, b) in w.as_mut_slice().iter_mut().zip(v.as_slice()) {
            *a += sign * eps * b;
        }
        softmax::gradient(&inst.model.with_weights(w).unwrap(), &inst.x, &inst.y).unwrap()
    };
    let (gp, gm) = (shifted(1.0), shifted(-1.0));
    gp.as_slice()
        .iter()
        .zip(gm.as_slice())
        .zip(hv.as_slice())
        .map(|((p, m), h)| ((p - m) / (2.0 * eps) - h).abs())
        .fold(0.0, f64::max)
}

/// `(linearity error, symmetry error)` of the HVP, both relative to the
/// magnitude of the terms involved.
pub fn hvp_linearity_symmetry(inst: &Instance, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let (k, d) = (inst.model.num_classes(), inst.model.dim());
    let u = normal_mat(&mut r, k, d, 1.0);
    let v = normal_mat(&mut r, k, d, 1.0);
    let (a, b) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
    let mut comb = DenseMat::zeros(k, d);
    for ((c, x), y) in comb.as_mut_slice().iter_mut().zip(u.as_slice()).zip(v.as_slice()) {
        *c = a * x + b * y;
    }
    let hu = softmax::hvp(&inst.model, &inst.x, &u).unwrap();
    let hv = softmax::hvp(&inst.model, &inst.x, &v).unwrap();
    let hc = softmax::hvp(&inst.model, &inst.x, &comb).unwrap();
    let lin = hc
        .as_slice()
        .iter()
        .zip(hu.as_slice().iter().zip(hv.as_slice()))
        .map(|(c, (x, y))| (c - (a * x + b * y)).abs() / (1.0 + c.abs()))
        .fold(0.0, f64::max);
    let dot = |p: &DenseMat, q: &DenseMat| p.as_slice().iter().zip(q.as_slice()).map(|(s, t)| s * t).sum::<f64>();
    let (uhv, vhu) = (dot(&u, &hv), dot(&v, &hu));
    let sym = (uhv - vhu).abs() / (1.0 + uhv.abs());
    (lin, sym)
}

/// Softmax probabilities computed directly from dense features, for oracles.
fn dense_probs(w: &DenseMat, x: &DenseMat) -> Vec<Vec<f64>> {
    (0..x.rows())
        .map(|i| {
            let s: Vec<f64> = (0..w.rows())
                .map(|k| w.row(k).iter().zip(x.row(i)).map(|(a, b)| a * b).sum())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

/// The full Hessian, assembled sample by sample. Index `k·d + j` is `W[k, j]`.
pub fn dense_hessian(model: &ModelParams, x: &FeatureMatrix) -> DMatrix<f64> {
    let (k, d) = (model.num_classes(), model.dim());
    let xd = x.to_dense();
    let p = dense_probs(model.weights(), &xd);
    let mut h = DMatrix::<f64>::identity(k * d, k * d) * model.lambda();
    for (i, pi) in p.iter().enumerate() {
        let xi = xd.row(i);
        for a in 0..k {
            for b in 0..k {
                let coef = if a == b { pi[a] - pi[a] * pi[b] } else { -pi[a] * pi[b] };
                for j in 0..d {
                    for m in 0..d {
                        h[(a * d + j, b * d + m)] += coef * xi[j] * xi[m];
                    }
                }
            }
        }
    }
    h
}

/// `‖Δ_CG − Δ_dense‖∞` on a trained random instance with `K·d ≤ 60`.
pub fn dense_oracle_gap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let k = r.random_range(3..=5);
    let d = r.random_range(2..=60 / k).min(12);
    let n = r.random_range(20..=40);
    let (x, y) = random_data(&mut r, n, d, k);
    let cfg = TrainConfig { c: 10.0, ..Default::default() };
    let model = softmax::train(&x, &y, k, &cfg).unwrap();
    let c = r.random_range(0..k);
    let (_, upd) = hessian_downweight(&model, &x, &y, c, &CgConfig::default()).unwrap();

    let xd = x.to_dense();
    let p = dense_probs(model.weights(), &xd);
    let mut g = DVector::<f64>::zeros(k * d);
    for i in (0..n).filter(|&i| y[i] == c) {
        for a in 0..k {
            let coef = p[i][a] - if a == c { 1.0 } else { 0.0 };
            for j in 0..d {
                g[a * d + j] += coef * xd.get(i, j);
            }
        }
    }
    let h = dense_hessian(&model, &x);
    let delta = h.cholesky().expect("Hessian is SPD").solve(&(-g));
    upd.delta
        .as_slice()
        .iter()
        .zip(delta.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Ridge fixture `½‖A w − b‖² + ½λ‖w‖²` with rows split into a deleted group.
/// Returns `(‖H(w' − w*_ret)‖ / (tol·max(1,‖rhs‖)), ‖w' − w*_ret‖∞)` where `w'`
/// is the downweight output and the residual ratio must be ≤ 1.
pub fn quadratic_exactness(seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let (n, d) = (40, 6);
    let lambda = 0.5;
    let a = DMatrix::<f64>::from_fn(n, d, |_, _| r.sample::<f64, _>(StandardNormal));
    let b = DVector::<f64>::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
    let deleted: Vec<bool> = (0..n).map(|i| i % 4 == 0).collect();
    let solve = |keep: &dyn Fn(usize) -> bool| {
        let mut h = DMatrix::<f64>::identity(d, d) * lambda;
        let mut rhs = DVector::<f64>::zeros(d);
        for i in (0..n).filter(|&i| keep(i)) {
            let row = a.row(i).transpose();
            h += &row * row.transpose();
            rhs += &row * b[i];
        }
        (h.clone().cholesky().unwrap().solve(&rhs), h)
    };
    let (w_full, _) = solve(&|_| true);
    let (w_ret, h_ret) = solve(&|i| !deleted[i]);
    // gradient contribution of the deleted rows at the full optimum
    let mut g_c = DVector::<f64>::zeros(d);
    for i in (0..n).filter(|&i| deleted[i]) {
        let row = a.row(i).transpose();
        g_c += &row * (row.dot(&w_full) - b[i]);
    }
    let rhs: Vec<f64> = (-&g_c).iter().copied().collect();
    let cg = CgConfig::default();
    let hop = h_ret.clone();
    let res = newton_downweight(
        &rhs,
        |v| Ok((&hop * DVector::from_column_slice(v)).iter().copied().collect()),
        &cg,
    )
    .unwrap();
    let w_new = &w_full - DVector::from_vec(res.solution);
    let err = &w_new - &w_ret;
    let bound = cg.tol * DVector::from_vec(rhs).norm().max(1.0);
    ((&h_ret * &err).norm() / bound, err.amax())
}

/// `D` from `ks_two_sample` minus `D` from a brute-force ECDF sweep over the
/// pooled points, for two samples of 1000 uniforms.
pub fn ks_bruteforce_gap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let a: Vec<f64> = (0..1000).map(|_| r.random()).collect();
    let b: Vec<f64> = (0..1000).map(|_| r.random()).collect();
    let ecdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
    let brute = a
        .iter()
        .chain(&b)
        .map(|&t| (ecdf(&a, t) - ecdf(&b, t)).abs())
        .fold(0.0, f64::max);
    (ks_two_sample(&a, &b).unwrap().statistic - brute).abs()
}

/// How many of `reps` seeded same-distribution repetitions give `p > 0.05`.
pub fn ks_null_passes(reps: u64) -> usize {
    (0..reps)
        .filter(|&s| {
            let mut r = rng(10_000 + s);
            let a: Vec<f64> = (0..1000).map(|_| r.random()).collect();
            let b: Vec<f64> = (0..1000).map(|_| r.random()).collect();
            ks_two_sample(&a, &b).unwrap().p_value > 0.05
        })
        .count()
}

/// Compares `roc_auc` with exhaustive pair counting on every score vector over
/// `{0, 1, 2}` and every label pattern with both classes, for sizes 2 to 6.
/// Returns `(cases, mismatches)`.
pub fn auc_exhaustive() -> (usize, usize) {
    let mut cases = 0;
    let mut bad = 0;
    for n in 2..=6u32 {
        for code in 0..3usize.pow(n) {
            let scores: Vec<f64> = (0..n).map(|i| ((code / 3usize.pow(i)) % 3) as f64).collect();
            for mask in 1..(1usize << n) - 1 {
                let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                let (mut num, mut den) = (0.0, 0.0);
                for i in 0..n as usize {
                    for j in 0..n as usize {
                        if labels[i] && !labels[j] {
                            den += 1.0;
                            num += if scores[i] > scores[j] {
                                1.0
                            } else if scores[i] == scores[j] {
                                0.5
                            } else {
                                0.0
                            };
                        }
                    }
                }
                cases += 1;
                if roc_auc(&scores, &labels).unwrap() != num / den {
                    bad += 1;
                }
            }
        }
    }
    (cases, bad)
}

/// Runs CG on `AᵀA + I` for a random `m × m` matrix `A` with entries in
/// `(-1, 1)`, capped at `m` iterations. Returns `(converged, true relative residual)`.
pub fn cg_random_spd(seed: u64, m: usize) -> (bool, f64) {
    let mut r = rng(seed);
    let a = DMatrix::<f64>::from_fn(m, m, |_, _| r.random_range(-1.0..1.0));
    let spd = a.transpose() * &a + DMatrix::<f64>::identity(m, m);
    let b = DVector::<f64>::from_fn(m, |_, _| r.sample::<f64, _>(StandardNormal));
    let tol = 1e-4;
    let res = cg_solve(
        |v| Ok((&spd * DVector::from_column_slice(v)).iter().copied().collect()),
        b.as_slice(),
        tol,
        m,
    )
    .unwrap();
    let x = DVector::from_vec(res.solution);
    let rel = (&b - &spd * x).norm() / b.norm().max(1.0);
    (res.converged, rel)
}

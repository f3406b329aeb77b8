//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod criteria;
pub mod gradcheck;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

/// Ensemble CRPS straight from the kernel form.
pub fn brute_crps(members: &[f64], y: f64) -> f64 {
    let k = members.len() as f64;
    let mut a = 0.0;
    for x in members {
        a += (x - y).abs();
    }
    let mut b = 0.0;
    for x in members {
        for z in members {
            b += (x - z).abs();
        }
    }
    a / k - b / (2.0 * k * k)
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|d| d * d).sum::<f64>().sqrt()
}

/// Energy score over all ordered member pairs.
pub fn brute_es(f: &Array2<f64>, y: &Array1<f64>) -> f64 {
    let (d, k) = f.dim();
    let kf = k as f64;
    let mut a = 0.0;
    for m in 0..k {
        a += norm((0..d).map(|i| f[[i, m]] - y[i]));
    }
    let mut b = 0.0;
    for m in 0..k {
        for n in 0..k {
            b += norm((0..d).map(|i| f[[i, m]] - f[[i, n]]));
        }
    }
    a / kf - b / (2.0 * kf * kf)
}

/// Variogram score summed over every ordered station pair.
pub fn brute_vs(f: &Array2<f64>, y: &Array1<f64>, omega: Option<&Array2<f64>>, p: f64) -> f64 {
    let (d, k) = f.dim();
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            let w = omega.map_or(1.0, |o| o[[i, j]]);
            let mut e = 0.0;
            for m in 0..k {
                e += (f[[i, m]] - f[[j, m]]).abs().powf(p);
            }
            e /= k as f64;
            let obs = (y[i] - y[j]).abs().powf(p);
            total += w * (obs - e).powi(2);
        }
    }
    total
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// CRPS of a normal left-censored at zero by integrating
/// `(F(z) - 1{z >= y})^2` over the support.
pub fn censored_crps_quadrature(mu: f64, sigma: f64, y: f64) -> f64 {
    let n = Normal::new(mu, sigma).unwrap();
    let cdf = |z: f64| n.cdf(z);
    let upper = (mu + 40.0 * sigma).max(y) + 1.0;
    let mut cuts = vec![0.0, y, upper];
    for c in [mu - 3.0 * sigma, mu, mu + 3.0 * sigma] {
        if c > 0.0 && c < upper {
            cuts.push(c);
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= y {
            total += integrate(&|z| cdf(z).powi(2), a, b, 1e-13);
        } else {
            total += integrate(&|z| (1.0 - cdf(z)).powi(2), a, b, 1e-13);
        }
    }
    total
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = norm(a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(a.iter().copied()).max(norm(b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Lower Cholesky factor of `exp(-|i - j| / length)` on a line of points.
pub fn ar_factor(d: usize, length: f64) -> Array2<f64> {
    let c = Array2::from_shape_fn((d, d), |(i, j)| (-(i as f64 - j as f64).abs() / length).exp());
    let mut l = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|m| l[[i, m]] * l[[j, m]]).sum();
            if i == j {
                l[[i, i]] = (c[[i, i]] - s).sqrt();
            } else {
                l[[i, j]] = (c[[i, j]] - s) / l[[j, j]];
            }
        }
    }
    l
}

/// Observation and `k` members drawn i.i.d. from one correlated Gaussian
/// law, so the observation is exchangeable with the members.
pub fn exchangeable_case<R: Rng>(rng: &mut R, l: &Array2<f64>, k: usize) -> (Array2<f64>, Array1<f64>) {
    let d = l.nrows();
    let centre: Vec<f64> = (0..d).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut draw = || {
        let z: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        l.dot(&z) + Array1::from(centre.clone())
    };
    let y = draw();
    let mut f = Array2::zeros((d, k));
    for m in 0..k {
        f.column_mut(m).assign(&draw());
    }
    (f, y)
}

pub fn random_matrix<R: Rng>(rng: &mut R, d: usize, k: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((d, k), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

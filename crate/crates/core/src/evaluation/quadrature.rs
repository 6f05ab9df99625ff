use nalgebra::DVector;

use super::{ContinuousModel, LnZEstimate, LnZMethod};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest hidden dimension integrated numerically.
pub const MAX_QUADRATURE_DIM: usize = 3;

const REL_TOL: f64 = 1e-11;
const ABS_TOL: f64 = 1e-15;
const MAX_INTERVALS: usize = 400;

// 15-point Kronrod nodes on [-1, 1] (non-negative half) with Kronrod and embedded 7-point Gauss weights.
const XK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(mid);
    let mut k = WK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XK[j];
        let s = f(mid - dx) + f(mid + dx);
        k += WK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * half, ((k - g) * half).abs())
}

/// Globally adaptive 1-D integration: bisects the interval with the largest error estimate.
fn adaptive(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
    let (v, e) = gauss_kronrod(f, a, b);
    let mut parts = vec![(a, b, v, e)];
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= (REL_TOL * total.abs()).max(ABS_TOL) || parts.len() >= MAX_INTERVALS {
            return total;
        }
        let worst = parts
            .iter()
            .enumerate()
            .fold(0, |w, (i, p)| if p.3 > parts[w].3 { i } else { w });
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let m = 0.5 * (lo + hi);
        let (v1, e1) = gauss_kronrod(f, lo, m);
        let (v2, e2) = gauss_kronrod(f, m, hi);
        parts.push((lo, m, v1, e1));
        parts.push((m, hi, v2, e2));
    }
}

fn nested(f: &dyn Fn(&[f64]) -> f64, point: &mut Vec<f64>, dim: usize, lo: &[f64], hi: &[f64]) -> f64 {
    if dim == lo.len() {
        return f(point);
    }
    adaptive(
        &mut |x| {
            point[dim] = x;
            nested(f, point, dim + 1, lo, hi)
        },
        lo[dim],
        hi[dim],
    )
}

/// Approximate maximizer of the log kernel: best point of a coarse grid, then gradient ascent.
fn log_kernel_peak<T: Real, M: ContinuousModel<T> + ?Sized>(model: &M, lo: &[f64], hi: &[f64]) -> f64 {
    let p = lo.len();
    let eval = |x: &[f64]| model.log_kernel(&DVector::from_iterator(p, x.iter().map(|&v| T::lit(v)))).as_f64();
    const GRID: usize = 17;
    let mut best = (f64::NEG_INFINITY, vec![0.0; p]);
    for code in 0..GRID.pow(p as u32) {
        let x: Vec<f64> = (0..p)
            .map(|d| {
                let k = code / GRID.pow(d as u32) % GRID;
                lo[d] + (hi[d] - lo[d]) * k as f64 / (GRID - 1) as f64
            })
            .collect();
        let v = eval(&x);
        if v > best.0 {
            best = (v, x);
        }
    }
    let (mut fx, mut x) = best;
    let mut step = 1.0;
    for _ in 0..500 {
        let g = model.f0_gradient(&DVector::from_iterator(p, x.iter().map(|&v| T::lit(v))));
        let trial: Vec<f64> = x.iter().zip(g.iter()).map(|(&xi, &gi)| xi - step * gi.as_f64()).collect();
        let ft = eval(&trial);
        if ft > fx {
            fx = ft;
            x = trial;
            step *= 1.5;
        } else {
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
    }
    fx
}

/// `ln ∫_box e^{log_target(λ)} dλ` by nested adaptive Gauss–Kronrod (7/15) quadrature.
pub fn ln_integral_box<T: Real, M: ContinuousModel<T> + ?Sized>(model: &M, lo: &[f64], hi: &[f64]) -> Result<f64> {
    let p = model.n_hidden();
    if p > MAX_QUADRATURE_DIM {
        return Err(Error::TooLarge { method: "quadrature", limit: MAX_QUADRATURE_DIM, actual: p });
    }
    if lo.len() != p || hi.len() != p {
        return Err(Error::DimensionMismatch(format!("integration box must have {p} dimensions")));
    }
    let shift = log_kernel_peak(model, lo, hi);
    let f = |x: &[f64]| {
        let lambda = DVector::from_iterator(p, x.iter().map(|&v| T::lit(v)));
        (model.log_kernel(&lambda).as_f64() - shift).exp()
    };
    let integral = nested(&f, &mut vec![0.0; p], 0, lo, hi);
    Ok(model.log_norm().as_f64() + shift + integral.ln())
}

/// `ln Z` by quadrature over the model's bounding box (`p ≤ 3`).
pub fn ln_z_quadrature<T: Real, M: ContinuousModel<T> + ?Sized>(model: &M) -> Result<LnZEstimate> {
    let p = model.n_hidden();
    if p > MAX_QUADRATURE_DIM {
        return Err(Error::TooLarge { method: "quadrature", limit: MAX_QUADRATURE_DIM, actual: p });
    }
    let (centre, half) = model.bounding_box();
    let lo: Vec<f64> = centre.iter().zip(half.iter()).map(|(c, h)| (*c - *h).as_f64()).collect();
    let hi: Vec<f64> = centre.iter().zip(half.iter()).map(|(c, h)| (*c + *h).as_f64()).collect();
    Ok(LnZEstimate::exact(ln_integral_box(model, &lo, &hi)?, LnZMethod::Quadrature))
}

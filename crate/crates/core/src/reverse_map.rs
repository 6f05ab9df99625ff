//! RBM → Hopfield direction: marginalizing the hidden layer, approximate
//! binarization of the weights, and reconstruction of pattern couplings.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data_io::BinaryDataset;
use crate::error::{Error, Result};
use crate::hopfield::{projection_couplings, projection_matrix, retrieval_table, HopfieldNetwork, RetrievalConfig, RetrievalTable};
use crate::linalg;
use crate::patterns::PatternMatrix;
use crate::rbm::GaussBernRbm;
use crate::scalar::{sgn_plus, Real};

/// Ising model `J = WWᵀ`, `b` unchanged, obtained by integrating out the gaussian hidden layer.
pub fn integrate_out_hidden<T: Real>(rbm: &GaussBernRbm<T>) -> Result<HopfieldNetwork<T>> {
    HopfieldNetwork::from_factor(rbm.w.clone(), rbm.b.clone(), rbm.beta)
}

fn sech2<T: Real>(x: T) -> T {
    let c = x.cosh();
    if c.as_f64().is_finite() {
        T::one() / (c * c)
    } else {
        T::zero()
    }
}

/// Softened binarization error `‖WX − tanh(αWX)‖²_F`.
pub fn binarization_objective<T: Real>(w: &DMatrix<T>, x: &DMatrix<T>, alpha: T) -> T {
    let bp = w * x;
    bp.iter().fold(T::zero(), |acc, &v| {
        let e = v - (alpha * v).tanh();
        acc + e * e
    })
}

/// Gradient of [`binarization_objective`]: `2Wᵀ(E ⊙ (1 − α sech²(αWX)))` with `E = WX − tanh(αWX)`.
pub fn binarization_gradient<T: Real>(w: &DMatrix<T>, x: &DMatrix<T>, alpha: T) -> DMatrix<T> {
    let bp = w * x;
    let inner = bp.map(|v| {
        let u = alpha * v;
        (v - u.tanh()) * (T::one() - alpha * sech2(u))
    });
    w.tr_mul(&inner) * T::lit(2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarizeConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Error with `NoConvergence` when `max_iters` is reached.
    pub require_convergence: bool,
    pub condition_check_every: usize,
    pub max_condition: f64,
}

impl Default for BinarizeConfig {
    fn default() -> Self {
        Self {
            alpha: 200.0,
            gamma: 0.05,
            tol: 1e-8,
            max_iters: 50_000,
            require_convergence: true,
            condition_check_every: 100,
            max_condition: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarizationSolution<T: Real> {
    pub x: DMatrix<T>,
    /// `B_p = WX`.
    pub bp: DMatrix<T>,
    /// `E = B_p − sgn(B_p)`.
    pub e: DMatrix<T>,
    /// `‖E‖_F`.
    pub objective: f64,
    /// Softened objective before each iteration and at the end.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Iterations at which the softened objective increased.
    pub increases: usize,
}

impl<T: Real> BinarizationSolution<T> {
    fn from_x(w: &DMatrix<T>, x: DMatrix<T>) -> Self {
        let bp = w * &x;
        let e = bp.map(|v| v - T::from_spin(sgn_plus(v)));
        let objective = e.norm().as_f64();
        Self { x, bp, e, objective, trace: Vec::new(), iterations: 0, grad_norm: 0.0, converged: false, increases: 0 }
    }

    /// `B = sgn(B_p)` with ties at `+1`.
    pub fn binary(&self) -> DMatrix<T> {
        self.bp.map(|v| T::from_spin(sgn_plus(v)))
    }

    pub fn patterns(&self, class_of_column: Vec<u8>) -> Result<PatternMatrix> {
        PatternMatrix::from_signs(&self.bp, class_of_column)
    }
}

/// Plain gradient descent `X ← X − γ G(X)` on the softened binarization error.
pub fn binarize_descent<T: Real>(w: &DMatrix<T>, x0: &DMatrix<T>, cfg: &BinarizeConfig) -> Result<BinarizationSolution<T>> {
    let p = w.ncols();
    if x0.shape() != (p, p) {
        return Err(Error::DimensionMismatch(format!("X0 must be {p}x{p}, got {}x{}", x0.nrows(), x0.ncols())));
    }
    if !(cfg.alpha > 0.0 && cfg.gamma > 0.0) {
        return Err(Error::InvalidConfig("alpha and gamma must be positive".into()));
    }
    let condition = linalg::condition_number(x0);
    if !(condition <= cfg.max_condition) {
        return Err(Error::SingularX { condition, iteration: 0 });
    }
    let alpha = T::lit(cfg.alpha);
    let gamma = T::lit(cfg.gamma);
    let mut x = x0.clone();
    let mut trace = vec![binarization_objective(w, &x, alpha).as_f64()];
    let mut increases = 0;
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let g = binarization_gradient(w, &x, alpha);
        grad_norm = g.norm().as_f64();
        if grad_norm < cfg.tol {
            converged = true;
            break;
        }
        x -= g * gamma;
        iterations += 1;
        let f = binarization_objective(w, &x, alpha).as_f64();
        if f > trace[trace.len() - 1] {
            increases += 1;
        }
        trace.push(f);
        if cfg.condition_check_every > 0 && iterations % cfg.condition_check_every == 0 {
            let condition = linalg::condition_number(&x);
            if !(condition <= cfg.max_condition) {
                return Err(Error::SingularX { condition, iteration: iterations });
            }
        }
    }
    if !converged {
        if cfg.require_convergence {
            return Err(Error::NoConvergence { iterations, grad_norm });
        }
        log::warn!("binarization stopped after {iterations} iterations with |G| = {grad_norm:.3e}");
    }
    if increases > 0 {
        log::warn!("softened binarization objective increased on {increases} iterations");
    }
    let condition = linalg::condition_number(&x);
    if !(condition <= cfg.max_condition) {
        return Err(Error::SingularX { condition, iteration: iterations });
    }
    let mut sol = BinarizationSolution::from_x(w, x);
    sol.trace = trace;
    sol.iterations = iterations;
    sol.grad_norm = grad_norm;
    sol.converged = converged;
    sol.increases = increases;
    Ok(sol)
}

/// Gaussian `X0` scaled so that `W X0` has entries of order one.
pub fn random_x0<T: Real, R: Rng + ?Sized>(w: &DMatrix<T>, rng: &mut R) -> DMatrix<T> {
    let p = w.ncols();
    let rms = (w.norm_squared() / T::count(w.len())).sqrt().as_f64();
    let scale = 1.0 / (rms * (p as f64).sqrt()).max(f64::MIN_POSITIVE);
    DMatrix::from_fn(p, p, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(scale * z)
    })
}

/// Descends from every start and keeps the lowest binarization error; failed starts are skipped.
pub fn binarize_multistart<T: Real>(
    w: &DMatrix<T>,
    starts: &[DMatrix<T>],
    cfg: &BinarizeConfig,
) -> Result<BinarizationSolution<T>> {
    let results: Vec<Result<BinarizationSolution<T>>> = starts.par_iter().map(|x0| binarize_descent(w, x0, cfg)).collect();
    let mut best: Option<BinarizationSolution<T>> = None;
    let mut last_err = None;
    for r in results {
        match r {
            Ok(sol) if best.as_ref().is_none_or(|b| sol.objective < b.objective) => best = Some(sol),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::InvalidConfig("no starting points".into())))
}

/// Nearest matrix with orthonormal columns: `L = UVᵀ` from `W = UΣVᵀ`.
pub fn lowdin_orthogonalize<T: Real>(w: &DMatrix<T>) -> Result<DMatrix<T>> {
    linalg::check_full_column_rank(w, linalg::PATTERN_RANK_TOL)?;
    let svd = w.clone().svd(true, true);
    Ok(svd.u.expect("requested U") * svd.v_t.expect("requested Vᵀ"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructionCase {
    /// Orthonormal `W`: `J = B_p(B_pᵀB_p)⁻¹B_pᵀ`.
    Case1,
    /// General `W`: `J = B_p(B_pᵀCB_p)⁻¹B_pᵀ`, `C = (W†)ᵀW†`.
    Case2,
}

/// Entry-wise fixed-point conditions for the candidate patterns `B = sgn(B_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointDiagnostics {
    /// Fraction of entries with `|(JE)_{iμ}| < |(B_p)_{iμ}|`.
    pub small_error: f64,
    /// Fraction with `(JE)_{iμ} (B_p)_{iμ} < 0`.
    pub compatible_sign: f64,
    /// Fraction satisfying either condition.
    pub either: f64,
    /// Per pattern, whether `sgn(J B^μ) = B^μ`.
    pub pattern_fixed: Vec<bool>,
    pub all_fixed: bool,
}

#[derive(Debug, Clone)]
pub struct Reconstruction<T: Real> {
    pub network: HopfieldNetwork<T>,
    pub diagnostics: FixedPointDiagnostics,
}

pub fn reconstruct_hn<T: Real>(
    w: &DMatrix<T>,
    sol: &BinarizationSolution<T>,
    case: ReconstructionCase,
    beta: T,
) -> Result<Reconstruction<T>> {
    let n = w.nrows();
    let j = match case {
        ReconstructionCase::Case1 => {
            let deviation = linalg::orthogonality_defect(w).as_f64();
            if deviation > 1e-6 {
                return Err(Error::NotOrthogonal { deviation });
            }
            projection_matrix(&sol.bp)?
        }
        ReconstructionCase::Case2 => {
            linalg::check_full_column_rank(w, linalg::PATTERN_RANK_TOL)?;
            let pinv = linalg::inv_spd(&w.tr_mul(w))? * w.transpose();
            let c = pinv.tr_mul(&pinv);
            let core = linalg::inv_spd(&(sol.bp.tr_mul(&(c * &sol.bp))))?;
            let j = &sol.bp * core * sol.bp.transpose();
            (&j + j.transpose()) * T::lit(0.5)
        }
    };
    let je = &j * &sol.e;
    let total = je.len() as f64;
    let (mut small, mut compatible, mut either) = (0usize, 0usize, 0usize);
    for (&a, &b) in je.iter().zip(sol.bp.iter()) {
        let s = a.abs() < b.abs();
        let c = a * b < T::zero();
        small += s as usize;
        compatible += c as usize;
        either += (s || c) as usize;
    }
    let binary = sol.binary();
    let jb = &j * &binary;
    let pattern_fixed: Vec<bool> = (0..binary.ncols())
        .map(|mu| jb.column(mu).iter().zip(binary.column(mu).iter()).all(|(&v, &b)| T::from_spin(sgn_plus(v)) == b))
        .collect();
    let diagnostics = FixedPointDiagnostics {
        small_error: small as f64 / total,
        compatible_sign: compatible as f64 / total,
        either: either as f64 / total,
        all_fixed: pattern_fixed.iter().all(|&f| f),
        pattern_fixed,
    };
    Ok(Reconstruction { network: HopfieldNetwork::new(j, DVector::zeros(n), beta)?, diagnostics })
}

/// Result of binarizing a trained RBM and using the candidate patterns as an associative memory.
#[derive(Debug, Clone)]
pub struct ReverseReport<T: Real> {
    pub solution: BinarizationSolution<T>,
    pub patterns: PatternMatrix,
    pub network: HopfieldNetwork<T>,
    pub table: RetrievalTable,
}

/// Binarize `W` from `X0`, threshold to `B = sgn(WX*)`, store `B` with the
/// projection rule and tabulate retrieval on `heldout`.
pub fn reverse_pipeline<T: Real>(
    rbm: &GaussBernRbm<T>,
    x0: &DMatrix<T>,
    class_of_column: Vec<u8>,
    binarize: &BinarizeConfig,
    heldout: &BinaryDataset,
    retrieval: &RetrievalConfig,
) -> Result<ReverseReport<T>> {
    let solution = binarize_descent(&rbm.w, x0, binarize)?;
    let patterns = solution.patterns(class_of_column)?;
    let network = projection_couplings::<T>(&patterns)?;
    let table = retrieval_table(&network, &patterns, heldout, retrieval);
    Ok(ReverseReport { solution, patterns, network, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward_map::{hn_to_rbm, qr_orthogonalize, Companion, FactorizationMethod};
    use crate::hopfield::spins_from_code;
    use crate::scalar::log_sum_exp;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_patterns(n: usize, p: usize, seed: u64) -> PatternMatrix {
        let mut r = rng(seed);
        loop {
            let cols: Vec<Vec<i8>> = (0..p).map(|_| (0..n).map(|_| if r.random::<f64>() < 0.6 { 1 } else { -1 }).collect()).collect();
            let xi = PatternMatrix::new(cols, (0..p as u8).collect()).unwrap();
            if xi.check_rank().is_ok() {
                return xi;
            }
        }
    }

    #[test]
    fn integrating_out_recovers_projection_couplings() {
        let xi = random_patterns(15, 4, 1);
        let rbm = hn_to_rbm::<f64>(&xi, 2.0, None, FactorizationMethod::Qr).unwrap();
        let j = integrate_out_hidden(&rbm).unwrap();
        let proj = projection_couplings::<f64>(&xi).unwrap();
        assert!((j.couplings() - proj.couplings()).norm() < 1e-10);

        let w = xi.as_matrix::<f64>();
        let hebb = integrate_out_hidden(&GaussBernRbm::from_weights(w.clone(), 1.0).unwrap()).unwrap();
        assert_eq!(hebb.couplings(), &(&w * w.transpose()));
    }

    #[test]
    fn marginal_of_rbm_is_ising_boltzmann() {
        let mut r = rng(2);
        let w = DMatrix::from_fn(6, 2, |_, _| r.random::<f64>() - 0.5);
        let mut rbm = GaussBernRbm::from_weights(w, 1.3).unwrap();
        rbm.b = DVector::from_fn(6, |i, _| 0.1 * i as f64 - 0.2);
        let net = integrate_out_hidden(&rbm).unwrap();
        let rbm_w: Vec<f64> = (0..64).map(|c| rbm.visible_log_weight(&spins_from_code(c, 6))).collect();
        let hn_w: Vec<f64> = (0..64).map(|c| -1.3 * crate::hopfield::energy(&net, &spins_from_code(c, 6))).collect();
        let (zr, zh) = (log_sum_exp(&rbm_w), log_sum_exp(&hn_w));
        for c in 0..64 {
            assert!(((rbm_w[c] - zr).exp() - (hn_w[c] - zh).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(3);
        let w = DMatrix::from_fn(7, 3, |_, _| r.random::<f64>() - 0.5);
        let x = DMatrix::from_fn(3, 3, |_, _| r.random::<f64>() * 2.0 - 1.0);
        let g = binarization_gradient(&w, &x, 5.0);
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut up = x.clone();
                up[(i, j)] += h;
                let mut dn = x.clone();
                dn[(i, j)] -= h;
                let fd = (binarization_objective(&w, &up, 5.0) - binarization_objective(&w, &dn, 5.0)) / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() <= 1e-5 * g[(i, j)].abs().max(1e-3), "{fd} vs {}", g[(i, j)]);
            }
        }
        // α → 0: tanh(αWX) vanishes and G → 2WᵀWX
        let g0 = binarization_gradient(&w, &x, 1e-12);
        assert!((g0 - w.transpose() * &w * &x * 2.0).norm() < 1e-9);
    }

    #[test]
    fn exact_binarization_is_stationary() {
        let xi = random_patterns(20, 3, 4);
        let f = qr_orthogonalize::<f64>(&xi).unwrap();
        let Companion::Qr { r } = f.companion else { unreachable!() };
        assert!(binarization_gradient(&f.u, &r, 200.0).norm() < 1e-8);
        let sol = binarize_descent(&f.u, &r, &BinarizeConfig::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.e.norm() < 1e-12);
        assert!((sol.objective - sol.e.norm()).abs() < 1e-10);
        assert_eq!(sol.patterns(vec![0, 1, 2]).unwrap(), xi);

        let rec = reconstruct_hn(&f.u, &sol, ReconstructionCase::Case1, 1.0).unwrap();
        assert!((rec.network.couplings() - &f.u * f.u.transpose()).norm() < 1e-10);
        assert!(rec.diagnostics.all_fixed);
    }

    #[test]
    fn planted_binarization_recovered() {
        let (n, p) = (40, 4);
        let mut r = rng(5);
        let b = DMatrix::from_fn(n, p, |_, _| if r.random::<bool>() { 1.0 } else { -1.0 });
        let x = (DMatrix::identity(p, p) + DMatrix::from_fn(p, p, |_, _| 0.2 * (r.random::<f64>() - 0.5))) * (n as f64).sqrt();
        let w = &b * x.clone().try_inverse().unwrap();
        let x0 = &x + DMatrix::from_fn(p, p, |_, _| 0.2 * (r.random::<f64>() - 0.5));
        let sol = binarize_descent(&w, &x0, &BinarizeConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.binary(), b);
        assert!(sol.objective < 1e-6);
        assert_eq!(sol.increases, 0);
    }

    #[test]
    fn singular_start_rejected_and_nonconvergence_reported() {
        let w = DMatrix::<f64>::identity(4, 2);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(binarize_descent(&w, &singular, &BinarizeConfig::default()), Err(Error::SingularX { .. })));
        let cfg = BinarizeConfig { max_iters: 1, alpha: 2.0, ..Default::default() };
        let x0 = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, -0.2, 0.5]);
        assert!(matches!(binarize_descent(&w, &x0, &cfg), Err(Error::NoConvergence { .. })));
        let relaxed = BinarizeConfig { require_convergence: false, ..cfg };
        assert!(!binarize_descent(&w, &x0, &relaxed).unwrap().converged);
    }

    #[test]
    fn lowdin_properties() {
        let q = qr_orthogonalize::<f64>(&random_patterns(10, 3, 6)).unwrap().u;
        assert!((lowdin_orthogonalize(&q).unwrap() - &q).norm() < 1e-12);

        let mut r = rng(7);
        let u = qr_orthogonalize::<f64>(&random_patterns(8, 2, 8)).unwrap().u;
        let theta: f64 = 0.7;
        let v = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        let w = &u * DMatrix::from_diagonal(&DVector::from_vec(vec![1.1, 0.9])) * v.transpose();
        let l = lowdin_orthogonalize(&w).unwrap();
        assert!((&l - &u * v.transpose()).norm() < 1e-12);
        assert!(((&w - &l).norm() - 0.02f64.sqrt()).abs() < 1e-12);

        let w = DMatrix::from_fn(9, 3, |_, _| r.random::<f64>() - 0.5);
        let l = lowdin_orthogonalize(&w).unwrap();
        let best = (&w - &l).norm();
        for _ in 0..100 {
            let other = lowdin_orthogonalize(&DMatrix::from_fn(9, 3, |_, _| r.random::<f64>() - 0.5)).unwrap();
            assert!(best <= (&w - other).norm() + 1e-12);
        }
    }

    #[test]
    fn reconstruction_cases() {
        let q = qr_orthogonalize::<f64>(&random_patterns(12, 2, 9)).unwrap().u;
        let x = DMatrix::from_row_slice(2, 2, &[3.0, 0.5, -0.2, 3.1]);
        let sol = BinarizationSolution::from_x(&q, x);
        let skew = &q * DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        assert!(matches!(reconstruct_hn(&skew, &sol, ReconstructionCase::Case1, 1.0), Err(Error::NotOrthogonal { .. })));
        let sol2 = BinarizationSolution::from_x(&skew, DMatrix::identity(2, 2));
        let rec = reconstruct_hn(&skew, &sol2, ReconstructionCase::Case2, 1.0).unwrap();
        assert!((rec.network.couplings() - &skew * skew.transpose()).norm() < 1e-10);
        assert!((0.0..=1.0).contains(&rec.diagnostics.either));
    }

    #[test]
    fn conditions_imply_fixed_points() {
        // orthogonal W whose WX is a binary matrix plus a small planted error
        let xi = random_patterns(16, 3, 10);
        let f = qr_orthogonalize::<f64>(&xi).unwrap();
        let Companion::Qr { r } = f.companion else { unreachable!() };
        let mut g = rng(11);
        let x = &r + DMatrix::from_fn(3, 3, |_, _| 0.05 * (g.random::<f64>() - 0.5));
        let sol = BinarizationSolution::from_x(&f.u, x);
        let rec = reconstruct_hn(&f.u, &sol, ReconstructionCase::Case1, 1.0).unwrap();
        assert_eq!(rec.diagnostics.either, 1.0);
        assert!(rec.diagnostics.all_fixed);
    }
}

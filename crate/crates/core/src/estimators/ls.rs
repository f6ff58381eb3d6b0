//! Observation systems `Y = W chi + rho` and their least-squares solutions.

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{regressor, BaseParameters, JointState, SmoothSign, NUM_PARAMS};
use crate::error::{Error, Result};
use crate::signal::{parallel_decimate, DecimationSpec};

/// Above this condition number the trajectory is reported as poorly exciting.
pub const CONDITION_WARN: f64 = 200.0;
/// Above this condition number the system is treated as rank deficient.
pub const CONDITION_CAP: f64 = 1e8;

/// Stacked torques and regressor rows, grouped per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSystem {
    pub y: DVector<f64>,
    pub w: DMatrix<f64>,
    /// Row range of each joint block.
    pub joint_blocks: Vec<Range<usize>>,
    pub condition_number: f64,
}

impl ObservationSystem {
    pub fn new(y: DVector<f64>, w: DMatrix<f64>, joint_blocks: Vec<Range<usize>>) -> Result<Self> {
        if y.len() != w.nrows() {
            return Err(Error::DimensionMismatch(format!("Y has {} rows, W has {}", y.len(), w.nrows())));
        }
        let mut next = 0;
        for b in &joint_blocks {
            if b.start != next {
                return Err(Error::DimensionMismatch("joint blocks must be contiguous".into()));
            }
            next = b.end;
        }
        if next != y.len() {
            return Err(Error::DimensionMismatch("joint blocks do not cover every row".into()));
        }
        let condition_number = condition_number(&w);
        Ok(Self { y, w, joint_blocks, condition_number })
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn params(&self) -> usize {
        self.w.ncols()
    }

    /// Rows of one joint block restricted to the columns that are not identically zero there.
    fn block(&self, j: usize) -> (DVector<f64>, DMatrix<f64>, Vec<usize>) {
        let b = &self.joint_blocks[j];
        let rows = self.w.rows(b.start, b.len());
        let cols: Vec<usize> = (0..self.w.ncols()).filter(|&c| rows.column(c).iter().any(|&v| v != 0.0)).collect();
        let wb = DMatrix::from_fn(b.len(), cols.len(), |r, c| rows[(r, cols[c])]);
        (self.y.rows(b.start, b.len()).into_owned(), wb, cols)
    }

    /// Keeps the rows whose in-block index lies in `keep` for every joint.
    pub fn select_block_rows(&self, keep: Range<usize>) -> Result<Self> {
        let mut idx = Vec::new();
        let mut blocks = Vec::new();
        for b in &self.joint_blocks {
            if keep.end > b.len() {
                return Err(Error::DimensionMismatch(format!("row window {keep:?} exceeds block of {}", b.len())));
            }
            let start = idx.len();
            idx.extend(keep.clone().map(|k| b.start + k));
            blocks.push(start..idx.len());
        }
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i]));
        let w = self.w.select_rows(idx.iter());
        Self::new(y, w, blocks)
    }
}

/// Ratio of extreme singular values. Infinite for a rank-deficient matrix.
pub fn condition_number(w: &DMatrix<f64>) -> f64 {
    if w.nrows() == 0 || w.ncols() == 0 {
        return f64::INFINITY;
    }
    // The singular values of W equal those of R in W = QR, which is much smaller.
    let small = if w.nrows() > w.ncols() { w.clone().qr().r() } else { w.clone() };
    let sv = small.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 && max.is_finite() {
        max / min
    } else {
        f64::INFINITY
    }
}

fn check_conditioning(cond: f64) -> Result<()> {
    if !(cond <= CONDITION_CAP) {
        return Err(Error::RankDeficient { condition_number: cond });
    }
    if cond > CONDITION_WARN {
        log::warn!("observation matrix condition number {cond:.1} exceeds {CONDITION_WARN}");
    }
    Ok(())
}

/// Stacks regressor rows (joint 1 block, then joint 2 block) and the matching
/// torques, optionally followed by parallel decimation of each joint block.
pub fn build_observation(
    q: &[[f64; 2]],
    qd: &[[f64; 2]],
    qdd: &[[f64; 2]],
    tau: &[[f64; 2]],
    fm: f64,
    decimation: Option<&DecimationSpec>,
    ssign: &SmoothSign,
) -> Result<ObservationSystem> {
    let n = q.len();
    if qd.len() != n || qdd.len() != n || tau.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "series lengths differ: q {n}, qd {}, qdd {}, tau {}",
            qd.len(),
            qdd.len(),
            tau.len()
        )));
    }
    let mut w = DMatrix::zeros(2 * n, NUM_PARAMS);
    let mut y = DVector::zeros(2 * n);
    for k in 0..n {
        let reg = regressor(&JointState::new(q[k], qd[k], qdd[k]), ssign);
        for j in 0..2 {
            w.row_mut(j * n + k).copy_from(&reg.row(j));
            y[j * n + k] = tau[k][j];
        }
    }
    let blocks = vec![0..n, n..2 * n];
    let sys = match decimation {
        Some(spec) => {
            let (y, w, blocks) = parallel_decimate(&y, &w, &blocks, fm, spec)?;
            ObservationSystem::new(y, w, blocks)?
        }
        None => ObservationSystem::new(y, w, blocks)?,
    };
    check_conditioning(sys.condition_number)?;
    Ok(sys)
}

/// Least-squares solution with its statistics, for any number of columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution {
    pub theta: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub sigma_rho: f64,
    pub residual: DVector<f64>,
}

/// QR least squares with the unbiased residual variance `|rho|^2 / (r - b)`
/// and covariance `sigma_rho^2 (W^T W)^-1`. With `r == b` the residual has
/// no degrees of freedom and `sigma_rho` is reported as 0.
pub fn least_squares(y: &DVector<f64>, w: &DMatrix<f64>) -> Result<LsSolution> {
    let (r, b) = w.shape();
    if y.len() != r {
        return Err(Error::DimensionMismatch(format!("Y has {} rows, W has {r}", y.len())));
    }
    if r < b {
        return Err(Error::RankDeficient { condition_number: f64::INFINITY });
    }
    let cond = condition_number(w);
    if !(cond <= CONDITION_CAP) {
        return Err(Error::RankDeficient { condition_number: cond });
    }
    let qr = w.clone().qr();
    let rmat = qr.r();
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, b).into_owned();
    let theta = rmat.solve_upper_triangular(&rhs).ok_or(Error::RankDeficient { condition_number: cond })?;
    let residual = y - w * &theta;
    let sigma_rho = if r > b { (residual.norm_squared() / (r - b) as f64).sqrt() } else { 0.0 };
    let rinv =
        rmat.solve_upper_triangular(&DMatrix::identity(b, b)).ok_or(Error::RankDeficient { condition_number: cond })?;
    let covariance = (&rinv * rinv.transpose()) * sigma_rho * sigma_rho;
    Ok(LsSolution { theta, covariance, sigma_rho, residual })
}

/// Parameter estimate with the usual least-squares statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub method: String,
    pub chi_hat: BaseParameters,
    /// Standard deviation of each estimate.
    pub sigma: [f64; NUM_PARAMS],
    /// `100 sigma_i / |chi_i|`, absent when the estimate is exactly zero.
    pub rel_sigma_pct: [Option<f64>; NUM_PARAMS],
    /// Residual standard deviation, in torque units.
    pub sigma_rho: f64,
    /// `|Y - W chi_hat| / |Y|`.
    pub rel_error: f64,
    pub condition_number: f64,
    pub rows: usize,
    /// Residual standard deviation of each joint block (WLS only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_sigma_rho: Option<[f64; 2]>,
}

impl EstimationReport {
    fn from_solution(method: &str, sol: &LsSolution, y: &DVector<f64>, w: &DMatrix<f64>, cond: f64) -> Result<Self> {
        if sol.theta.len() != NUM_PARAMS {
            return Err(Error::DimensionMismatch(format!(
                "expected {NUM_PARAMS} parameter columns, got {}",
                sol.theta.len()
            )));
        }
        let chi_hat = BaseParameters::from_slice(sol.theta.as_slice())?;
        let sigma: [f64; NUM_PARAMS] = std::array::from_fn(|i| sol.covariance[(i, i)].max(0.0).sqrt());
        let resid = y - w * &sol.theta;
        let ynorm = y.norm();
        let (r, b) = w.shape();
        Ok(Self {
            method: method.to_string(),
            chi_hat,
            sigma,
            rel_sigma_pct: rel_sigma_pct(&chi_hat, &sigma),
            sigma_rho: if r > b { (resid.norm_squared() / (r - b) as f64).sqrt() } else { 0.0 },
            rel_error: if ynorm > 0.0 { resid.norm() / ynorm } else { resid.norm() },
            condition_number: cond,
            rows: r,
            joint_sigma_rho: None,
        })
    }

    /// `(parameter, value, 2sigma, pct_sigma)` rows with `n/a` for undefined percentages.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("parameter,value,two_sigma,pct_sigma\n");
        let chi = self.chi_hat.to_array();
        for i in 0..NUM_PARAMS {
            let pct = self.rel_sigma_pct[i].map_or("n/a".to_string(), |p| format!("{p:.6}"));
            writeln!(s, "{},{:.10e},{:.10e},{pct}", BaseParameters::NAMES[i], chi[i], 2.0 * self.sigma[i]).unwrap();
        }
        writeln!(s, "sigma_rho,{:.10e},,", self.sigma_rho).unwrap();
        writeln!(s, "rel_error,{:.10e},,", self.rel_error).unwrap();
        writeln!(s, "condition_number,{:.10e},,", self.condition_number).unwrap();
        s
    }
}

pub fn rel_sigma_pct(chi: &BaseParameters, sigma: &[f64; NUM_PARAMS]) -> [Option<f64>; NUM_PARAMS] {
    let c = chi.to_array();
    std::array::from_fn(|i| (c[i] != 0.0).then(|| 100.0 * sigma[i] / c[i].abs()))
}

/// Ordinary least squares on the whole system.
pub fn ols_solve(sys: &ObservationSystem) -> Result<EstimationReport> {
    let sol = least_squares(&sys.y, &sys.w)?;
    EstimationReport::from_solution("OLS", &sol, &sys.y, &sys.w, sys.condition_number)
}

/// Per-joint OLS gives each block's residual deviation; rows are then
/// weighted by its inverse and the whole system solved again.
pub fn wls_solve(sys: &ObservationSystem) -> Result<EstimationReport> {
    let weights = joint_weights(sys)?;
    let mut y = sys.y.clone();
    let mut w = sys.w.clone();
    for (b, &s) in sys.joint_blocks.iter().zip(&weights) {
        y.rows_mut(b.start, b.len()).scale_mut(1.0 / s);
        w.rows_mut(b.start, b.len()).scale_mut(1.0 / s);
    }
    let sol = least_squares(&y, &w)?;
    let mut report = EstimationReport::from_solution("WLS", &sol, &sys.y, &sys.w, sys.condition_number)?;
    if let [a, b] = weights[..] {
        report.joint_sigma_rho = Some([a, b]);
    }
    Ok(report)
}

/// Residual deviation of each joint block from its own OLS fit, floored so
/// that weights stay finite on noise-free data.
pub fn joint_weights(sys: &ObservationSystem) -> Result<Vec<f64>> {
    (0..sys.joint_blocks.len())
        .map(|j| {
            let (yb, wb, _) = sys.block(j);
            let sol = least_squares(&yb, &wb)?;
            let floor = 1e-12 * (yb.norm() / (yb.len().max(1) as f64).sqrt()).max(f64::MIN_POSITIVE);
            Ok(sol.sigma_rho.max(floor))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Normal-equations solve written independently of the QR path.
    fn normal_equations(y: &DVector<f64>, w: &DMatrix<f64>) -> DVector<f64> {
        let a = w.transpose() * w;
        let rhs = w.transpose() * y;
        a.lu().solve(&rhs).unwrap()
    }

    #[test]
    fn identity_system_returns_y() {
        let y = DVector::from_vec(vec![3.44, 0.03, 0.82, 0.062, 0.121, 0.007, 0.013, 0.137]);
        let sys = ObservationSystem::new(y.clone(), DMatrix::identity(8, 8), vec![0..4, 4..8]).unwrap();
        let rep = ols_solve(&sys).unwrap();
        for i in 0..8 {
            assert!((rep.chi_hat.to_array()[i] - y[i]).abs() < 1e-15);
        }
        assert_eq!(rep.sigma_rho, 0.0);
        assert_eq!(rep.condition_number, 1.0);
    }

    #[test]
    fn matches_normal_equations_on_small_system() {
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let y = DVector::from_vec(vec![1.0, 0.3, -2.0]);
        let sol = least_squares(&y, &w).unwrap();
        let oracle = normal_equations(&y, &w);
        assert!((&sol.theta - &oracle).amax() < 1e-12);
        let resid = &y - &w * &oracle;
        let s2 = resid.norm_squared() / 1.0;
        let cov = (w.transpose() * &w).try_inverse().unwrap() * s2;
        assert!((sol.sigma_rho.powi(2) - s2).abs() < 1e-12);
        assert!((&sol.covariance - cov).amax() < 1e-12);
    }

    #[test]
    fn consistent_system_has_zero_residual() {
        let chi = [3.44, 0.03, 0.82, 0.062, 0.121, 0.007, 0.013, 0.137];
        let ss = SmoothSign::default();
        let n = 400;
        let (mut q, mut qd, mut qdd, mut tau) = (vec![], vec![], vec![], vec![]);
        for k in 0..n {
            let t = k as f64 / 200.0;
            let s = JointState::new(
                [(1.3 * t).sin() * 2.0, (2.1 * t).cos()],
                [2.6 * (1.3 * t).cos(), -2.1 * (2.1 * t).sin()],
                [-3.38 * (1.3 * t).sin() + 0.4, -4.41 * (2.1 * t).cos()],
            );
            let reg = regressor(&s, &ss);
            let t2 = reg * BaseParameters::from_array(chi).to_vector();
            q.push(s.q);
            qd.push(s.qd);
            qdd.push(s.qdd);
            tau.push([t2[0], t2[1]]);
        }
        let sys = build_observation(&q, &qd, &qdd, &tau, 200.0, None, &ss).unwrap();
        assert_eq!(sys.rows(), 2 * n);
        assert_eq!(sys.joint_blocks, vec![0..n, n..2 * n]);
        let rep = ols_solve(&sys).unwrap();
        assert!(rep.rel_error < 1e-12);
        for (a, b) in rep.chi_hat.to_array().iter().zip(chi) {
            assert!((a - b).abs() < 1e-9);
        }

        let dec = build_observation(&q, &qd, &qdd, &tau, 200.0, Some(&DecimationSpec::new(20)), &ss).unwrap();
        assert_eq!(dec.rows(), 2 * n / 20);

        let err = build_observation(&q[..10], &qd, &qdd, &tau, 200.0, None, &ss).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn rank_deficient_system_is_rejected() {
        let w = DMatrix::from_fn(20, 3, |r, c| if c == 2 { 2.0 * r as f64 } else { (r + c) as f64 });
        let y = DVector::from_element(20, 1.0);
        let sys = ObservationSystem::new(y, w, vec![0..20]).unwrap();
        assert!(sys.condition_number > CONDITION_CAP);
        assert!(matches!(least_squares(&sys.y, &sys.w), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn rel_sigma_undefined_for_zero_estimate() {
        let chi = BaseParameters::from_array([1.0, 0.0, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let p = rel_sigma_pct(&chi, &[0.1; 8]);
        assert!((p[0].unwrap() - 10.0).abs() < 1e-12);
        assert!((p[2].unwrap() - 5.0).abs() < 1e-12);
        assert!(p[1].is_none());
    }

    fn block_system(sigmas: [f64; 2], seed: u64, n: usize) -> ObservationSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = DMatrix::from_fn(2 * n, 8, |r, c| ((r * (c + 3)) as f64 * 0.013).sin() + 0.2 * c as f64);
        let chi = DVector::from_vec(vec![3.0, 0.1, 0.8, 0.06, 0.12, 0.01, 0.02, 0.14]);
        let mut y = &w * chi;
        for r in 0..2 * n {
            let e: f64 = StandardNormal.sample(&mut rng);
            y[r] += sigmas[r / n] * e;
        }
        ObservationSystem::new(y, w, vec![0..n, n..2 * n]).unwrap()
    }

    #[test]
    fn wls_equals_ols_for_equal_block_noise() {
        // Residuals with identical norms in both blocks give identical weights.
        let n = 50;
        let w = DMatrix::from_fn(2 * n, 8, |r, c| ((r % n) as f64 * 0.1 * (c + 1) as f64).cos());
        let chi = DVector::from_fn(8, |i, _| i as f64 + 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let wb = w.rows(0, n).into_owned();
        let proj = &wb * (wb.transpose() * &wb).try_inverse().unwrap() * wb.transpose();
        let e = (DMatrix::identity(n, n) - proj) * z * 0.01;
        let mut y = &w * chi;
        for r in 0..2 * n {
            y[r] += e[r % n];
        }
        let sys = ObservationSystem::new(y, w, vec![0..n, n..2 * n]).unwrap();
        let weights = joint_weights(&sys).unwrap();
        assert!((weights[0] - weights[1]).abs() < 1e-14 * weights[0]);
        let a = ols_solve(&sys).unwrap();
        let b = wls_solve(&sys).unwrap();
        for (x, y) in a.chi_hat.to_array().iter().zip(b.chi_hat.to_array()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn wls_does_not_lose_to_ols_under_unequal_noise() {
        let (mut ols, mut wls) = (vec![], vec![]);
        for seed in 0..100 {
            let sys = block_system([0.01, 0.1], seed, 200);
            ols.push(ols_solve(&sys).unwrap().chi_hat.to_array());
            let rep = wls_solve(&sys).unwrap();
            let js = rep.joint_sigma_rho.unwrap();
            assert!(js[0] > 0.0 && js[1] > 0.0);
            wls.push(rep.chi_hat.to_array());
        }
        let var = |v: &[[f64; 8]], i: usize| {
            let m = v.iter().map(|x| x[i]).sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x[i] - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        for i in 0..8 {
            assert!(var(&wls, i) <= var(&ols, i) * 1.05, "param {i}");
        }
    }

    #[test]
    fn sigma_rho_matches_injected_noise() {
        let sys = block_system([0.05, 0.05], 4, 2000);
        let rep = ols_solve(&sys).unwrap();
        assert!((rep.sigma_rho / 0.05 - 1.0).abs() < 0.1, "{}", rep.sigma_rho);
    }

    #[test]
    fn noise_free_wls_stays_finite() {
        let sys = block_system([0.0, 0.0], 1, 100);
        let rep = wls_solve(&sys).unwrap();
        assert!(rep.chi_hat.is_finite());
        assert!(rep.rel_error < 1e-10);
    }

    #[test]
    fn csv_marks_undefined_percentages() {
        let y = DVector::from_vec(vec![1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.5, 1.0]);
        let mut w = DMatrix::identity(9, 8);
        w[(8, 0)] = 1.0;
        let sys = ObservationSystem::new(y, w, vec![0..9]).unwrap();
        let mut rep = ols_solve(&sys).unwrap();
        rep.chi_hat.fv1 = 0.0;
        rep.rel_sigma_pct = rel_sigma_pct(&rep.chi_hat, &rep.sigma);
        let csv = rep.to_csv();
        assert!(csv.starts_with("parameter,value,two_sigma,pct_sigma\nZZ1R,"));
        assert!(csv.lines().nth(2).unwrap().ends_with(",n/a"));
    }
}

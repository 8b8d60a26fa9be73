//! Spectral analysis of fitted models: explained-variance reporting,
//! Eckart-Young sandwich bounds on the two-level kernel approximation, and
//! the closed-form variance-advantage predictions of the full-decomposition
//! two-level linear architecture.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{level_matrix, ArchitectureSpec, DeepState};
use crate::numerics::{orthonormality_error, sym_eig_desc};

/// Explained-variance breakdown of one level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceReport {
    pub level: usize,
    pub eigenvalues: Vec<f64>,
    pub per_component_pct: Vec<f64>,
    pub cumulative_pct: Vec<f64>,
    /// Sum over the full spectrum used as the percentage denominator.
    pub denominator: f64,
    /// True when negative denominator eigenvalues were clamped to zero.
    pub clamped: bool,
}

/// Eckart-Young style bracket for the level-1 kernel approximation error of
/// a two-level model with linear second-level kernel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsReport {
    pub lower: f64,
    pub upper: f64,
    /// ||K_1 - H_1 Lambda_1 H_1^T||_F
    pub actual: f64,
    /// Numerical rank of the regularized level-1 matrix.
    pub r1: usize,
    /// Sign of eta_2 (selects the upper-bound branch).
    pub regime: i8,
}

/// Percentage breakdown of `eigs` against the (clamped) denominator
/// spectrum.
pub fn explained_variance(
    eigs: &DVector<f64>,
    denominator_spectrum: &DVector<f64>,
) -> Result<VarianceReport> {
    let mut clamped = false;
    let denominator: f64 = denominator_spectrum
        .iter()
        .map(|&v| {
            if v < 0.0 {
                clamped = true;
                0.0
            } else {
                v
            }
        })
        .sum();
    if denominator <= 0.0 {
        return Err(Error::invalid("denominator spectrum must have positive sum"));
    }
    let per_component_pct: Vec<f64> = eigs.iter().map(|&v| 100.0 * v / denominator).collect();
    let mut cumulative_pct = Vec::with_capacity(per_component_pct.len());
    let mut acc = 0.0;
    for &p in &per_component_pct {
        acc += p;
        cumulative_pct.push(acc);
    }
    Ok(VarianceReport {
        level: 0,
        eigenvalues: eigs.iter().copied().collect(),
        per_component_pct,
        cumulative_pct,
        denominator,
        clamped,
    })
}

/// Explained variance of one level of a fitted model: component eigenvalues
/// are the deep eigenvalues, the denominator is the full spectrum of the
/// level matrix at the fitted state (negatives clamped to zero).
pub fn level_variance_report(
    arch: &ArchitectureSpec,
    state: &DeepState,
    k1: &DMatrix<f64>,
    level: usize,
) -> Result<VarianceReport> {
    let m = level_matrix(arch, state, k1, level)?;
    // The level matrix is exactly symmetric only at a stationary point;
    // an approximately-converged state leaves a small skew part, which the
    // spectrum computation discards.
    let m = (&m + m.transpose()) * 0.5;
    let spectrum = sym_eig_desc(&m)?.values;
    let mut report = explained_variance(&state.lambda[level], &spectrum)?;
    report.level = level;
    Ok(report)
}

/// Sandwich bounds on ||K_1 - H_1 Lambda_1 H_1^T||_F for a two-level state
/// with linear second-level kernel and eta_1 = 1.
pub fn bounds_lemma1(k1: &DMatrix<f64>, state: &DeepState, eta2: f64) -> Result<BoundsReport> {
    if state.h.len() != 2 {
        return Err(Error::invalid("bounds require a two-level state"));
    }
    if eta2 == 0.0 {
        return Err(Error::invalid("eta2 must be nonzero"));
    }
    let h1 = &state.h[0];
    let h2 = &state.h[1];
    if orthonormality_error(h1) > 1e-6 || orthonormality_error(h2) > 1e-6 {
        return Err(Error::invalid("H_1 and H_2 must have orthonormal columns"));
    }
    let (s1, s2) = (h1.ncols(), h2.ncols());

    // spectrum of the regularized level-1 matrix K_1 + (1/eta_2) H_2 H_2^T
    let m_reg = k1 + h2 * h2.transpose() * (1.0 / eta2);
    let lam1 = sym_eig_desc(&m_reg)?.values;
    let max_abs = lam1.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let r1 = lam1.iter().filter(|&&v| v.abs() > 1e-10 * max_abs).count();

    let tail: f64 = (s1..r1.max(s1)).map(|i| lam1[i] * lam1[i]).sum();
    let lower = tail.sqrt() - (s2 as f64).sqrt() / eta2.abs();

    let actual = (k1 - h1 * DMatrix::from_diagonal(&state.lambda[0]) * h1.transpose()).norm();

    let radicand = if eta2 < 0.0 {
        let lam_tilde = sym_eig_desc(k1)?.values;
        let head: f64 = (0..s2).map(|i| lam_tilde[i]).sum();
        tail - (s2 as f64 / eta2 + 2.0 * head) / eta2
    } else {
        let head: f64 = (0..s1).map(|i| lam1[i]).sum();
        tail - (1.0 / eta2 - 2.0 * s1 as f64 * head) * s2 as f64 / eta2
    };
    let upper = radicand.max(0.0).sqrt();

    Ok(BoundsReport {
        lower,
        upper,
        actual,
        r1,
        regime: if eta2 < 0.0 { -1 } else { 1 },
    })
}

fn shifted_spectrum(k1: &DMatrix<f64>, eta2: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    if eta2 == 0.0 {
        return Err(Error::invalid("eta2 must be nonzero"));
    }
    let lam_tilde = sym_eig_desc(k1)?.values;
    let n = lam_tilde.len();
    if lam_tilde[n - 1] <= 0.0 {
        return Err(Error::invalid("K1 must be positive definite"));
    }
    let shifted = DVector::from_fn(n, |i, _| lam_tilde[i] + 1.0 / eta2);
    if shifted.iter().any(|&v| v < -1e-10) {
        return Err(Error::ConditionViolated(format!(
            "eigenvalue shift 1/eta2 = {} drives the deep spectrum negative",
            1.0 / eta2
        )));
    }
    Ok((lam_tilde, shifted.map(|v| v.max(0.0))))
}

/// Cumulative explained variance of the leading `n` components for the
/// full-decomposition two-level linear model (deep spectrum = shifted data
/// spectrum) versus shallow KPCA, plus whether the deep value is strictly
/// larger. The strict advantage is guaranteed whenever
/// eta_2 < -1/lambda_min(K_1).
pub fn variance_advantage(k1: &DMatrix<f64>, eta2: f64, n: usize) -> Result<(f64, f64, bool)> {
    let big_n = k1.nrows();
    if n == 0 || n >= big_n {
        return Err(Error::invalid(format!("n must lie in 1..{}", big_n - 1)));
    }
    let (lam_tilde, shifted) = shifted_spectrum(k1, eta2)?;
    let shallow_total: f64 = lam_tilde.iter().sum();
    let deep_total: f64 = shifted.iter().sum();
    if deep_total <= 0.0 {
        return Err(Error::invalid("shifted spectrum has nonpositive sum"));
    }
    let shallow_cum: f64 = (0..n).map(|i| lam_tilde[i]).sum::<f64>() / shallow_total;
    let deep_cum: f64 = (0..n).map(|i| shifted[i]).sum::<f64>() / deep_total;
    Ok((deep_cum, shallow_cum, deep_cum > shallow_cum))
}

/// Closed-form gain deep_cum - shallow_cum from the descending data spectrum:
/// (n - N * sum_n / trace) / (eta2 * trace + N).
pub fn predicted_variance_gain(spectrum: &DVector<f64>, eta2: f64, n: usize) -> Result<f64> {
    let big_n = spectrum.len();
    if n == 0 || n >= big_n {
        return Err(Error::invalid(format!("n must lie in 1..{}", big_n - 1)));
    }
    let trace: f64 = spectrum.iter().sum();
    let denom = eta2 * trace + big_n as f64;
    if denom == 0.0 || trace == 0.0 {
        return Err(Error::invalid("degenerate spectrum/eta2 combination"));
    }
    let head: f64 = (0..n).map(|i| spectrum[i]).sum();
    Ok((n as f64 - big_n as f64 * head / trace) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Kernel;
    use crate::model::{analytic_two_level_linear, LevelSpec};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd_matrix(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn explained_variance_examples() {
        let eigs = DVector::from_vec(vec![2.0, 1.0, 1.0]);
        let denom = DVector::from_vec(vec![2.0, 1.0, 1.0]);
        let r = explained_variance(&eigs, &denom).unwrap();
        assert_eq!(r.per_component_pct, vec![50.0, 25.0, 25.0]);
        assert_eq!(r.cumulative_pct, vec![50.0, 75.0, 100.0]);
        assert!(!r.clamped);

        let one = DVector::from_vec(vec![4.0]);
        let denom = DVector::from_vec(vec![4.0]);
        let r = explained_variance(&one, &denom).unwrap();
        assert_abs_diff_eq!(r.cumulative_pct[0], 100.0, epsilon = 1e-9);

        let denom = DVector::from_vec(vec![3.0, 1.0, -2.0]);
        let r = explained_variance(&one, &denom).unwrap();
        assert!(r.clamped);
        assert_abs_diff_eq!(r.denominator, 4.0, epsilon = 1e-14);

        let denom = DVector::from_vec(vec![-1.0, -2.0]);
        assert!(explained_variance(&one, &denom).is_err());
    }

    #[test]
    fn level_report_full_decomposition_sums_to_100() {
        let k1 = spd_matrix(6, 5);
        let arch = ArchitectureSpec::new(vec![
            LevelSpec::new(Kernel::Linear, 6, 1.0),
            LevelSpec::new(Kernel::Linear, 6, 2.0),
        ])
        .unwrap();
        let state = analytic_two_level_linear(&k1, 6, 6, 1.0, 2.0).unwrap();
        let r = level_variance_report(&arch, &state, &k1, 0).unwrap();
        assert_abs_diff_eq!(*r.cumulative_pct.last().unwrap(), 100.0, epsilon = 1e-9);
        for w in r.cumulative_pct.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn bounds_sandwich_on_analytic_states() {
        let k1 = spd_matrix(12, 7);
        for &eta2 in &[-10.0, -5.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 5.0, 10.0] {
            for &(s1, s2) in &[(12usize, 12usize), (6, 3), (8, 2), (4, 4)] {
                let state = analytic_two_level_linear(&k1, s1, s2, 1.0, eta2).unwrap();
                let b = bounds_lemma1(&k1, &state, eta2).unwrap();
                assert!(
                    b.lower <= b.actual + 1e-8,
                    "lower {} > actual {} at eta2={eta2} s1={s1} s2={s2}",
                    b.lower,
                    b.actual
                );
                assert!(
                    b.actual <= b.upper + 1e-8,
                    "actual {} > upper {} at eta2={eta2} s1={s1} s2={s2}",
                    b.actual,
                    b.upper
                );
            }
        }
    }

    #[test]
    fn bounds_empty_tail_is_trivially_low() {
        // s_1 = r_1: the tail sum vanishes and lower = -sqrt(s2)/|eta2|.
        let k1 = spd_matrix(5, 9);
        let state = analytic_two_level_linear(&k1, 5, 2, 1.0, 2.0).unwrap();
        let b = bounds_lemma1(&k1, &state, 2.0).unwrap();
        assert_eq!(b.r1, 5);
        assert_abs_diff_eq!(b.lower, -(2.0f64).sqrt() / 2.0, epsilon = 1e-9);
        assert!(b.lower <= b.actual);
    }

    #[test]
    fn bounds_rejects_bad_input() {
        let k1 = spd_matrix(5, 11);
        let state = analytic_two_level_linear(&k1, 3, 2, 1.0, 1.0).unwrap();
        let one_level = DeepState {
            h: vec![state.h[0].clone()],
            lambda: vec![state.lambda[0].clone()],
        };
        assert!(bounds_lemma1(&k1, &one_level, 1.0).is_err());
        assert!(bounds_lemma1(&k1, &state, 0.0).is_err());
    }

    #[test]
    fn shift_identity_full_decomposition() {
        let k1 = spd_matrix(7, 13);
        let lam_tilde = sym_eig_desc(&k1).unwrap().values;
        for &eta2 in &[-5.0, -2.0, 2.0, 5.0] {
            let state = analytic_two_level_linear(&k1, 7, 7, 1.0, eta2).unwrap();
            let m_reg = &k1 + &state.h[1] * state.h[1].transpose() * (1.0 / eta2);
            let lam1 = sym_eig_desc(&m_reg).unwrap().values;
            for i in 0..7 {
                assert_abs_diff_eq!(lam1[i], lam_tilde[i] + 1.0 / eta2, epsilon = 1e-9);
                assert_abs_diff_eq!(state.lambda[1][i], 1.0 / eta2, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn variance_advantage_hand_example() {
        // spectrum (3,1), eta2 = -2: deep 2.5/3 vs shallow 3/4
        let k1 = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let (deep, shallow, holds) = variance_advantage(&k1, -2.0, 1).unwrap();
        assert_abs_diff_eq!(shallow, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(deep, 2.5 / 3.0, epsilon = 1e-12);
        assert!(holds);

        let gain = predicted_variance_gain(&DVector::from_vec(vec![3.0, 1.0]), -2.0, 1).unwrap();
        assert_abs_diff_eq!(gain, (1.0 - 2.0 * 0.75) / (-8.0 + 2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(gain, deep - shallow, epsilon = 1e-12);
    }

    #[test]
    fn variance_advantage_limits_and_errors() {
        let k1 = spd_matrix(6, 17);
        // eta2 -> -inf: shift vanishes and the two curves coincide
        let (deep, shallow, _) = variance_advantage(&k1, -1e12, 2).unwrap();
        assert_abs_diff_eq!(deep, shallow, epsilon = 1e-9);

        // not PD
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(variance_advantage(&bad, -2.0, 1).is_err());

        // negative shifted spectrum: eta2 negative but above the -1/lambda_min
        // boundary in magnitude
        let lam_min = sym_eig_desc(&k1).unwrap().values[5];
        let eta2 = -0.5 / lam_min;
        assert!(matches!(
            variance_advantage(&k1, eta2, 2),
            Err(Error::ConditionViolated(_))
        ));
    }

    #[test]
    fn lemma2_region_all_n() {
        let k1 = spd_matrix(10, 19);
        let lam = sym_eig_desc(&k1).unwrap().values;
        let eta2 = 1.01 * (-1.0 / lam[9]);
        for n in 1..10 {
            let (deep, shallow, holds) = variance_advantage(&k1, eta2, n).unwrap();
            assert!(holds, "n={n}: deep {deep} <= shallow {shallow}");
        }
    }

    #[test]
    fn gain_matches_advantage_on_seeded_spectra() {
        for seed in 0..50u64 {
            let k1 = spd_matrix(8, 100 + seed);
            let lam = sym_eig_desc(&k1).unwrap().values;
            let eta2 = if seed % 2 == 0 {
                1.5 + seed as f64 * 0.1
            } else {
                1.05 * (-1.0 / lam[7])
            };
            let n = 1 + (seed as usize % 7);
            let (deep, shallow, _) = variance_advantage(&k1, eta2, n).unwrap();
            let gain = predicted_variance_gain(&lam, eta2, n).unwrap();
            assert!(
                (gain - (deep - shallow)).abs() <= 1e-12,
                "seed {seed}: {gain} vs {}",
                deep - shallow
            );
        }
    }

    #[test]
    fn gain_zero_on_flat_spectrum() {
        let lam = DVector::from_element(6, 2.0);
        let gain = predicted_variance_gain(&lam, 3.0, 3).unwrap();
        assert_abs_diff_eq!(gain, 0.0, epsilon = 1e-14);
    }
}

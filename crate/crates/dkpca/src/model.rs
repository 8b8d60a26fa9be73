//! The deep KPCA model: architecture configuration, the coupled residual
//! objective, its gradients, projected-gradient training on the Stiefel
//! manifold, and the closed-form two-level linear solution.
//!
//! Levels are indexed from 0 in code; level 0 consumes the data kernel
//! matrix, level j >= 1 consumes the hidden features of level j-1.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::DataMatrix;
use crate::error::{Error, Result};
use crate::kernels::{
    coupling_matrix, coupling_self_grad, kernel_grad_contraction, kernel_grad_inner,
    kernel_matrix, Kernel,
};
use crate::numerics::{normalize_signs, orthonormality_error, stiefel_project, sym_eig_desc};

/// One KPCA level: kernel, number of components, and the eta regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub kernel: Kernel,
    pub s: usize,
    pub eta: f64,
}

impl LevelSpec {
    pub fn new(kernel: Kernel, s: usize, eta: f64) -> Self {
        LevelSpec { kernel, s, eta }
    }
}

/// Ordered per-level configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub levels: Vec<LevelSpec>,
}

impl ArchitectureSpec {
    pub fn new(levels: Vec<LevelSpec>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("architecture needs at least one level"));
        }
        for (j, l) in levels.iter().enumerate() {
            l.kernel.validate()?;
            if l.s == 0 {
                return Err(Error::invalid(format!("level {j}: s must be >= 1")));
            }
            if l.eta == 0.0 || !l.eta.is_finite() {
                return Err(Error::invalid(format!("level {j}: eta must be finite and nonzero")));
            }
        }
        Ok(ArchitectureSpec { levels })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    fn check_fit_shapes(&self, n: usize) -> Result<()> {
        for (j, l) in self.levels.iter().enumerate() {
            if l.s > n {
                return Err(Error::invalid(format!(
                    "level {j}: s = {} exceeds sample count N = {n}",
                    l.s
                )));
            }
        }
        Ok(())
    }
}

/// The optimization variables: hidden-feature matrices H_j (N x s_j) and the
/// deep-eigenvalue vectors Lambda_j.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepState {
    pub h: Vec<DMatrix<f64>>,
    pub lambda: Vec<DVector<f64>>,
}

impl DeepState {
    pub fn check_shapes(&self, arch: &ArchitectureSpec, n: usize) -> Result<()> {
        if self.h.len() != arch.n_levels() || self.lambda.len() != arch.n_levels() {
            return Err(Error::invalid("state level count does not match architecture"));
        }
        for (j, (h, l)) in self.h.iter().zip(&self.lambda).enumerate() {
            let s = arch.levels[j].s;
            if h.nrows() != n || h.ncols() != s || l.len() != s {
                return Err(Error::invalid(format!("level {j}: state shape mismatch")));
            }
        }
        Ok(())
    }

    /// Largest deviation of any H_j^T H_j from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        self.h
            .iter()
            .map(orthonormality_error)
            .fold(0.0, f64::max)
    }
}

/// Initialization strategy for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitStrategy {
    /// Level-wise top eigenpairs of the (recursively built) kernel matrices.
    ShallowWarmStart,
    /// Seeded Gaussian matrices projected to the Stiefel manifold.
    RandomOrthonormal,
}

/// Training hyperparameters for the projected gradient descent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub alpha0: f64,
    pub shrink: f64,
    pub armijo_c: f64,
    pub seed: u64,
    pub init: InitStrategy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epsilon: 1e-5,
            max_iters: 20_000,
            alpha0: 1.0,
            shrink: 0.5,
            armijo_c: 1e-4,
            seed: 0,
            init: InitStrategy::ShallowWarmStart,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be > 0"));
        }
        if !(self.alpha0 > 0.0) {
            return Err(Error::invalid("alpha0 must be > 0"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::invalid("shrink must lie in (0,1)"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::invalid("armijo_c must lie in (0,1)"));
        }
        Ok(())
    }
}

const MAX_HALVINGS: usize = 40;

/// Outcome of a [`fit`] run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// Objective value after each accepted iteration (index 0 is the initial
    /// value). Non-increasing across accepted steps.
    pub objective_trace: Vec<f64>,
    /// Final unsquared Frobenius residual of each level.
    pub level_residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Max over iterations and levels of ||H_j^T H_j - I||_max.
    pub max_orthonormality_error: f64,
    /// Levels that ended with at least one negative deep eigenvalue.
    pub negative_eigenvalue_levels: Vec<usize>,
}

/// Weight of level j in the objective: 1/2 for the first level, 1 otherwise.
fn level_weight(j: usize) -> f64 {
    if j == 0 {
        0.5
    } else {
        1.0
    }
}

/// Top-s eigenpairs of (1/eta) K under the deterministic sign convention.
pub fn shallow_kpca(
    k: &DMatrix<f64>,
    s: usize,
    eta: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if s > k.nrows() {
        return Err(Error::invalid(format!(
            "s = {s} exceeds kernel size N = {}",
            k.nrows()
        )));
    }
    if eta == 0.0 {
        return Err(Error::invalid("eta must be nonzero"));
    }
    let scaled = k * (1.0 / eta);
    let eig = sym_eig_desc(&scaled)?;
    let h = eig.vectors.columns(0, s).into_owned();
    let lambdas = DVector::from_fn(s, |i, _| eig.values[i]);
    Ok((h, lambdas))
}

/// Per-level kernel matrices K_j at the current state (K_1 passed in).
fn level_kernels(
    arch: &ArchitectureSpec,
    state: &DeepState,
    k1: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let mut ks = Vec::with_capacity(arch.n_levels());
    ks.push(k1.clone());
    for j in 1..arch.n_levels() {
        ks.push(kernel_matrix(
            arch.levels[j].kernel,
            &state.h[j - 1],
            &state.h[j - 1],
        )?);
    }
    Ok(ks)
}

/// Per-level coupling matrices G_j (empty for the last level).
fn level_couplings(arch: &ArchitectureSpec, state: &DeepState) -> Result<Vec<DMatrix<f64>>> {
    let n = arch.n_levels();
    let mut gs = Vec::with_capacity(n.saturating_sub(1));
    for j in 0..n.saturating_sub(1) {
        gs.push(coupling_matrix(
            arch.levels[j + 1].kernel,
            &state.h[j],
            &state.h[j + 1],
        )?);
    }
    Ok(gs)
}

fn level_residuals(
    arch: &ArchitectureSpec,
    state: &DeepState,
    ks: &[DMatrix<f64>],
    gs: &[DMatrix<f64>],
) -> Vec<DMatrix<f64>> {
    let n = arch.n_levels();
    (0..n)
        .map(|j| {
            let eta = arch.levels[j].eta;
            let mut r = &ks[j] * &state.h[j] * (1.0 / eta);
            if j + 1 < n {
                r += &gs[j] * (1.0 / arch.levels[j + 1].eta);
            }
            r -= &state.h[j] * DMatrix::from_diagonal(&state.lambda[j]);
            r
        })
        .collect()
}

/// The effective level matrix M_j whose eigendecomposition level j resembles.
/// `level` is 0-based.
pub fn level_matrix(
    arch: &ArchitectureSpec,
    state: &DeepState,
    k1: &DMatrix<f64>,
    level: usize,
) -> Result<DMatrix<f64>> {
    let n = arch.n_levels();
    if level >= n {
        return Err(Error::invalid(format!("level {level} out of range (n = {n})")));
    }
    state.check_shapes(arch, k1.nrows())?;
    let ks = level_kernels(arch, state, k1)?;
    let mut m = &ks[level] * (1.0 / arch.levels[level].eta);
    if level + 1 < n {
        let g = coupling_matrix(
            arch.levels[level + 1].kernel,
            &state.h[level],
            &state.h[level + 1],
        )?;
        m += g * state.h[level].transpose() * (1.0 / arch.levels[level + 1].eta);
    }
    Ok(m)
}

/// The residual objective and the unsquared per-level residual norms.
pub fn objective(
    arch: &ArchitectureSpec,
    state: &DeepState,
    k1: &DMatrix<f64>,
) -> Result<(f64, Vec<f64>)> {
    state.check_shapes(arch, k1.nrows())?;
    let ks = level_kernels(arch, state, k1)?;
    let gs = level_couplings(arch, state)?;
    let rs = level_residuals(arch, state, &ks, &gs);
    let mut j_tilde = 0.0;
    let mut norms = Vec::with_capacity(rs.len());
    for (j, r) in rs.iter().enumerate() {
        let n2 = r.norm_squared();
        j_tilde += level_weight(j) * n2;
        norms.push(n2.sqrt());
    }
    Ok((j_tilde, norms))
}

/// Euclidean (ambient-space) gradients of the objective with respect to every
/// H_j and Lambda_j.
pub fn gradient(
    arch: &ArchitectureSpec,
    state: &DeepState,
    k1: &DMatrix<f64>,
) -> Result<(Vec<DMatrix<f64>>, Vec<DVector<f64>>)> {
    state.check_shapes(arch, k1.nrows())?;
    let n = arch.n_levels();
    let ks = level_kernels(arch, state, k1)?;
    let gs = level_couplings(arch, state)?;
    let rs = level_residuals(arch, state, &ks, &gs);

    let mut grad_h = Vec::with_capacity(n);
    let mut grad_l = Vec::with_capacity(n);
    for m in 0..n {
        let w_m = level_weight(m);
        let eta_m = arch.levels[m].eta;
        // direct dependence of R_m on H_m through K_m H_m and H_m Lambda_m
        let mut g = (&ks[m] * &rs[m] * (1.0 / eta_m)
            - &rs[m] * DMatrix::from_diagonal(&state.lambda[m]))
            * (2.0 * w_m);

        if m + 1 < n {
            let kernel_next = arch.levels[m + 1].kernel;
            let eta_next = arch.levels[m + 1].eta;
            // R_m depends on H_m through the kernel gradients inside G_m
            let c_next = &state.h[m + 1] * state.h[m + 1].transpose();
            g += coupling_self_grad(kernel_next, &state.h[m], &c_next, &rs[m])?
                * (2.0 * w_m / eta_next);
            // R_{m+1} depends on H_m through K_{m+1}(H_m)
            let s_mat = &rs[m + 1] * state.h[m + 1].transpose();
            let s_sym = &s_mat + s_mat.transpose();
            g += kernel_grad_contraction(kernel_next, &state.h[m], &s_sym)?
                * (2.0 * level_weight(m + 1) / eta_next);
        }
        if m >= 1 {
            // R_{m-1} depends on H_m through the coupling coefficients
            // H_m H_m^T inside G_{m-1}
            let t = kernel_grad_inner(arch.levels[m].kernel, &state.h[m - 1], &rs[m - 1])?;
            let t_sym = &t + t.transpose();
            g += t_sym * &state.h[m] * (2.0 * level_weight(m - 1) / eta_m);
        }
        grad_h.push(g);

        let ht_r = state.h[m].transpose() * &rs[m];
        grad_l.push(DVector::from_fn(arch.levels[m].s, |a, _| {
            -2.0 * w_m * ht_r[(a, a)]
        }));
    }
    Ok((grad_h, grad_l))
}

fn random_orthonormal(n: usize, s: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    for _ in 0..4 {
        let a = DMatrix::from_fn(n, s, |_, _| {
            rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)
        });
        match stiefel_project(&a) {
            Ok(q) => return Ok(q),
            Err(Error::DegenerateInput(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NumericalFailure(
        "could not draw a full-rank random initialization".into(),
    ))
}

/// Initial state for [`fit`].
pub fn init_state(
    arch: &ArchitectureSpec,
    k1: &DMatrix<f64>,
    config: &TrainConfig,
) -> Result<DeepState> {
    let n = k1.nrows();
    arch.check_fit_shapes(n)?;
    match config.init {
        InitStrategy::ShallowWarmStart => match warm_start(arch, k1) {
            Ok(state) => Ok(state),
            Err(Error::DegenerateInput(msg)) => {
                eprintln!("warning: warm start degenerate ({msg}); falling back to random init");
                random_state(arch, n, config.seed)
            }
            Err(e) => Err(e),
        },
        InitStrategy::RandomOrthonormal => random_state(arch, n, config.seed),
    }
}

fn warm_start(arch: &ArchitectureSpec, k1: &DMatrix<f64>) -> Result<DeepState> {
    let mut h = Vec::new();
    let mut lambda = Vec::new();
    let mut current_k = k1.clone();
    for (j, l) in arch.levels.iter().enumerate() {
        if j > 0 {
            current_k = kernel_matrix(l.kernel, &h[j - 1], &h[j - 1])?;
        }
        let (hj, lj) = shallow_kpca(&current_k, l.s, l.eta)?;
        if orthonormality_error(&hj) > 1e-8 {
            return Err(Error::DegenerateInput(format!(
                "warm-start eigenvectors of level {j} lost orthonormality"
            )));
        }
        h.push(hj);
        lambda.push(lj);
    }
    Ok(DeepState { h, lambda })
}

fn random_state(arch: &ArchitectureSpec, n: usize, seed: u64) -> Result<DeepState> {
    let mut h = Vec::new();
    let mut lambda = Vec::new();
    for (j, l) in arch.levels.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(100 + j as u64);
        h.push(random_orthonormal(n, l.s, &mut rng)?);
        lambda.push(DVector::from_element(l.s, 1.0));
    }
    Ok(DeepState { h, lambda })
}

/// Fits the model on a data matrix (the level-1 kernel matrix is computed
/// internally). See [`fit_with_kernel`].
pub fn fit(
    arch: &ArchitectureSpec,
    data: &DataMatrix,
    config: &TrainConfig,
) -> Result<(DeepState, FitReport)> {
    let k1 = kernel_matrix(arch.levels[0].kernel, data.matrix(), data.matrix())?;
    fit_with_kernel(arch, &k1, config)
}

/// Projected gradient descent with per-block Armijo backtracking: every
/// iteration steps all H_j and Lambda_j simultaneously, projects each H_j
/// back onto the Stiefel manifold, and stops once the max-norm change over
/// stepsize falls below epsilon for every block.
pub fn fit_with_kernel(
    arch: &ArchitectureSpec,
    k1: &DMatrix<f64>,
    config: &TrainConfig,
) -> Result<(DeepState, FitReport)> {
    config.validate()?;
    let n_samples = k1.nrows();
    if k1.ncols() != n_samples {
        return Err(Error::invalid("kernel matrix must be square"));
    }
    if (k1 - k1.transpose()).amax() > 1e-8 {
        return Err(Error::invalid("kernel matrix must be symmetric"));
    }
    arch.check_fit_shapes(n_samples)?;

    let n = arch.n_levels();
    let mut state = init_state(arch, k1, config)?;
    let (mut j_cur, _) = objective(arch, &state, k1)?;
    let mut trace = vec![j_cur];
    let mut max_orth = state.orthonormality_error();
    let mut converged = false;
    let mut iterations = 0;

    for _iter in 0..config.max_iters {
        iterations += 1;
        let (grad_h, grad_l) = gradient(arch, &state, k1)?;

        // Per-block backtracking: each block's stepsize is tuned on the
        // objective with only that block moved, then all blocks are applied
        // simultaneously (with a joint safeguard below).
        let mut alpha_h = vec![config.alpha0; n];
        let mut alpha_l = vec![config.alpha0; n];
        let mut new_h: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        let mut new_l: Vec<DVector<f64>> = Vec::with_capacity(n);

        for j in 0..n {
            let (hj, alpha) =
                backtrack_h(arch, &state, k1, j, &grad_h[j], j_cur, config)?;
            alpha_h[j] = alpha;
            new_h.push(hj);
        }
        for j in 0..n {
            let (lj, alpha) = backtrack_l(arch, &state, k1, j, &grad_l[j], j_cur, config)?;
            alpha_l[j] = alpha;
            new_l.push(lj);
        }

        let mut candidate = DeepState {
            h: new_h,
            lambda: new_l,
        };
        let (mut j_new, _) = objective(arch, &candidate, k1)?;

        // Joint safeguard: the simultaneous step must not increase the
        // objective; otherwise shrink all stepsizes together.
        let mut halvings = 0;
        while j_new > j_cur && halvings < MAX_HALVINGS {
            halvings += 1;
            for j in 0..n {
                alpha_h[j] *= config.shrink;
                alpha_l[j] *= config.shrink;
                candidate.h[j] = project_step(&state.h[j], &grad_h[j], alpha_h[j], config.seed)?;
                candidate.lambda[j] = &state.lambda[j] - &grad_l[j] * alpha_l[j];
            }
            j_new = objective(arch, &candidate, k1)?.0;
        }
        if j_new > j_cur {
            // No progress possible at the smallest stepsize; treat as stalled.
            candidate = state.clone();
            j_new = j_cur;
        }

        let mut all_small = true;
        for j in 0..n {
            let dh = (&candidate.h[j] - &state.h[j]).amax() / alpha_h[j];
            let dl = (&candidate.lambda[j] - &state.lambda[j]).amax() / alpha_l[j];
            if dh > config.epsilon || dl > config.epsilon {
                all_small = false;
            }
        }

        state = candidate;
        j_cur = j_new;
        trace.push(j_cur);
        max_orth = max_orth.max(state.orthonormality_error());

        if all_small {
            converged = true;
            break;
        }
    }

    sort_state(arch, &mut state);
    let (j_final, residuals) = objective(arch, &state, k1)?;
    trace.push(j_final);
    let negative_eigenvalue_levels = state
        .lambda
        .iter()
        .enumerate()
        .filter(|(_, l)| l.iter().any(|&v| v < 0.0))
        .map(|(j, _)| j)
        .collect();
    let report = FitReport {
        objective_trace: trace,
        level_residuals: residuals,
        iterations,
        converged,
        max_orthonormality_error: max_orth,
        negative_eigenvalue_levels,
    };
    Ok((state, report))
}

fn project_step(
    h: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    alpha: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let stepped = h - grad * alpha;
    match stiefel_project(&stepped) {
        Ok(q) => Ok(q),
        Err(Error::DegenerateInput(_)) => {
            // One seeded re-randomization of the offending block.
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b10c);
            let jitter = DMatrix::from_fn(h.nrows(), h.ncols(), |_, _| {
                rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng)
            });
            stiefel_project(&(stepped + jitter * 1e-6)).map_err(|_| {
                Error::NumericalFailure("Stiefel projection input stayed rank-deficient".into())
            })
        }
        Err(e) => Err(e),
    }
}

fn backtrack_h(
    arch: &ArchitectureSpec,
    state: &DeepState,
    k1: &DMatrix<f64>,
    j: usize,
    grad: &DMatrix<f64>,
    j_cur: f64,
    config: &TrainConfig,
) -> Result<(DMatrix<f64>, f64)> {
    let mut alpha = config.alpha0;
    let mut trial = state.clone();
    for _ in 0..=MAX_HALVINGS {
        let candidate = project_step(&state.h[j], grad, alpha, config.seed)?;
        let delta2 = (&candidate - &state.h[j]).norm_squared();
        trial.h[j] = candidate;
        let (val, _) = objective(arch, &trial, k1)?;
        if val <= j_cur - config.armijo_c / alpha * delta2 {
            return Ok((trial.h[j].clone(), alpha));
        }
        alpha *= config.shrink;
    }
    // No acceptable step for this block; leave it in place.
    Ok((state.h[j].clone(), alpha))
}

fn backtrack_l(
    arch: &ArchitectureSpec,
    state: &DeepState,
    k1: &DMatrix<f64>,
    j: usize,
    grad: &DVector<f64>,
    j_cur: f64,
    config: &TrainConfig,
) -> Result<(DVector<f64>, f64)> {
    let mut alpha = config.alpha0;
    let mut trial = state.clone();
    for _ in 0..=MAX_HALVINGS {
        let candidate = &state.lambda[j] - grad * alpha;
        let delta2 = (&candidate - &state.lambda[j]).norm_squared();
        trial.lambda[j] = candidate;
        let (val, _) = objective(arch, &trial, k1)?;
        if val <= j_cur - config.armijo_c / alpha * delta2 {
            return Ok((trial.lambda[j].clone(), alpha));
        }
        alpha *= config.shrink;
    }
    Ok((state.lambda[j].clone(), alpha))
}

/// Within each level, sorts components by Lambda descending and applies the
/// eigenvector sign convention. Column permutations and sign flips within a
/// level leave the objective unchanged.
fn sort_state(arch: &ArchitectureSpec, state: &mut DeepState) {
    for j in 0..arch.n_levels() {
        let s = arch.levels[j].s;
        let mut order: Vec<usize> = (0..s).collect();
        let lam = state.lambda[j].clone();
        order.sort_by(|&a, &b| lam[b].partial_cmp(&lam[a]).unwrap());
        let mut h_sorted = DMatrix::zeros(state.h[j].nrows(), s);
        for (dst, &src) in order.iter().enumerate() {
            h_sorted.set_column(dst, &state.h[j].column(src));
        }
        normalize_signs(&mut h_sorted);
        state.h[j] = h_sorted;
        state.lambda[j] = DVector::from_fn(s, |i, _| lam[order[i]]);
    }
}

/// Closed-form zero-residual state of the two-level architecture with linear
/// second-level kernel: H_1 holds the top s_1 eigenvectors of K_1, H_2 its
/// first s_2 columns, with the eigenvalue shift 1/eta_2 on the shared
/// components. Requires s_2 <= s_1.
pub fn analytic_two_level_linear(
    k1: &DMatrix<f64>,
    s1: usize,
    s2: usize,
    eta1: f64,
    eta2: f64,
) -> Result<DeepState> {
    if s2 > s1 {
        return Err(Error::invalid(format!("s2 = {s2} must not exceed s1 = {s1}")));
    }
    analytic_two_level_linear_general(k1, s1, s2, eta1, eta2)
}

/// Extension of [`analytic_two_level_linear`] that also admits s_2 > s_1:
/// the extra H_2 columns are the next eigenvectors of K_1, which lie in the
/// null space of H_1 H_1^T and carry zero deep eigenvalue.
pub fn analytic_two_level_linear_general(
    k1: &DMatrix<f64>,
    s1: usize,
    s2: usize,
    eta1: f64,
    eta2: f64,
) -> Result<DeepState> {
    let n = k1.nrows();
    if s1 > n || s2 > n {
        return Err(Error::invalid("component counts must not exceed N"));
    }
    if eta1 == 0.0 || eta2 == 0.0 {
        return Err(Error::invalid("eta must be nonzero"));
    }
    let eig = sym_eig_desc(k1)?;
    let h1 = eig.vectors.columns(0, s1).into_owned();
    let h2 = eig.vectors.columns(0, s2).into_owned();
    let shared = s1.min(s2);
    let lambda1 = DVector::from_fn(s1, |i, _| {
        eig.values[i] / eta1 + if i < s2 { 1.0 / eta2 } else { 0.0 }
    });
    let lambda2 = DVector::from_fn(s2, |i, _| if i < shared || i < s1 { 1.0 / eta2 } else { 0.0 });
    Ok(DeepState {
        h: vec![h1, h2],
        lambda: vec![lambda1, lambda2],
    })
}

//! Levenberg–Marquardt for residual systems with pairwise-chained structure.
//!
//! A [`ResidualBlockSystem`] stacks residual blocks `ρ_t(x_t, x_{t+1})`. The
//! Gauss–Newton matrix `JᵀJ` of such a system is block-tridiagonal, so the
//! damped normal equations are solved in `O(T·b³)` by block Cholesky
//! elimination.

mod bench;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use bench::{solver_benchmark, write_benchmark_csv, BenchRow, SolverKind};

/// One residual block: `ρ_t` with `A_t = ∂ρ_t/∂x_t` and `B_t = ∂ρ_t/∂x_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub residual: DVector<f64>,
    pub a: DMatrix<f64>,
    /// Absent for the last block (and optional elsewhere).
    pub b: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlockSystem {
    pub block_sizes: Vec<usize>,
    pub blocks: Vec<ResidualBlock>,
}

impl ResidualBlockSystem {
    pub fn new(block_sizes: Vec<usize>, blocks: Vec<ResidualBlock>) -> Result<Self> {
        let sys = Self { block_sizes, blocks };
        sys.validate()?;
        Ok(sys)
    }

    pub fn horizon(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn num_vars(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    pub fn num_residuals(&self) -> usize {
        self.blocks.iter().map(|b| b.residual.len()).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.blocks.iter().map(|b| b.residual.norm_squared()).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.block_sizes.len() + 1);
        let mut acc = 0;
        off.push(0);
        for s in &self.block_sizes {
            acc += s;
            off.push(acc);
        }
        off
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.block_sizes.len();
        if self.blocks.len() != t {
            return Err(Error::Dimension {
                context: "residual block count",
                expected: t,
                actual: self.blocks.len(),
            });
        }
        for (i, blk) in self.blocks.iter().enumerate() {
            let m = blk.residual.len();
            if blk.a.shape() != (m, self.block_sizes[i]) {
                return Err(Error::InvalidArgument(format!(
                    "block {i}: A has shape {:?}, expected ({m}, {})",
                    blk.a.shape(),
                    self.block_sizes[i]
                )));
            }
            if let Some(b) = &blk.b {
                if i + 1 == t {
                    return Err(Error::InvalidArgument(format!(
                        "block {i}: last block cannot couple to a following block"
                    )));
                }
                if b.shape() != (m, self.block_sizes[i + 1]) {
                    return Err(Error::InvalidArgument(format!(
                        "block {i}: B has shape {:?}, expected ({m}, {})",
                        b.shape(),
                        self.block_sizes[i + 1]
                    )));
                }
            }
            let finite = blk.residual.iter().chain(blk.a.iter()).all(|v| v.is_finite())
                && blk.b.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::NonFinite("residual system"));
            }
        }
        Ok(())
    }

    /// Stacked dense Jacobian, rows ordered by block.
    pub fn dense_jacobian(&self) -> DMatrix<f64> {
        let off = self.offsets();
        let mut j = DMatrix::zeros(self.num_residuals(), self.num_vars());
        let mut row = 0;
        for (t, blk) in self.blocks.iter().enumerate() {
            let m = blk.residual.len();
            j.view_mut((row, off[t]), (m, self.block_sizes[t])).copy_from(&blk.a);
            if let Some(b) = &blk.b {
                j.view_mut((row, off[t + 1]), (m, self.block_sizes[t + 1])).copy_from(b);
            }
            row += m;
        }
        j
    }

    pub fn stacked_residual(&self) -> DVector<f64> {
        let mut r = DVector::zeros(self.num_residuals());
        let mut row = 0;
        for blk in &self.blocks {
            r.rows_mut(row, blk.residual.len()).copy_from(&blk.residual);
            row += blk.residual.len();
        }
        r
    }
}

/// Symmetric block-tridiagonal matrix. `sub[t]` is the `(t+1, t)` block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTridiag {
    pub diag: Vec<DMatrix<f64>>,
    pub sub: Vec<DMatrix<f64>>,
}

impl BlockTridiag {
    pub fn block_sizes(&self) -> Vec<usize> {
        self.diag.iter().map(|d| d.nrows()).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let sizes = self.block_sizes();
        let n: usize = sizes.iter().sum();
        let mut m = DMatrix::zeros(n, n);
        let mut off = 0;
        for (t, d) in self.diag.iter().enumerate() {
            m.view_mut((off, off), d.shape()).copy_from(d);
            if let Some(e) = self.sub.get(t) {
                let next = off + sizes[t];
                m.view_mut((next, off), e.shape()).copy_from(e);
                m.view_mut((off, next), (e.ncols(), e.nrows())).copy_from(&e.transpose());
            }
            off += sizes[t];
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            damping: crate::defaults::LM_DAMPING,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0) || !self.damping.is_finite() {
            return Err(Error::InvalidArgument(format!("LM damping must be positive, got {}", self.damping)));
        }
        Ok(())
    }
}

/// Normal equations `JᵀJ` and gradient `Jᵀρ` of a block system.
pub fn assemble(system: &ResidualBlockSystem) -> Result<(BlockTridiag, DVector<f64>)> {
    system.validate()?;
    let sizes = &system.block_sizes;
    let t = sizes.len();
    let mut diag: Vec<DMatrix<f64>> = sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
    let mut sub: Vec<DMatrix<f64>> = (1..t).map(|i| DMatrix::zeros(sizes[i], sizes[i - 1])).collect();
    let mut g = DVector::zeros(system.num_vars());
    let off = system.offsets();

    for (i, blk) in system.blocks.iter().enumerate() {
        let at = blk.a.transpose();
        diag[i] += &at * &blk.a;
        let gi = &at * &blk.residual;
        let mut gv = g.rows_mut(off[i], sizes[i]);
        gv += &gi;
        if let Some(b) = &blk.b {
            let bt = b.transpose();
            diag[i + 1] += &bt * b;
            sub[i] += &bt * &blk.a;
            let gn = &bt * &blk.residual;
            let mut gv = g.rows_mut(off[i + 1], sizes[i + 1]);
            gv += &gn;
        }
    }
    // Exact symmetry regardless of rounding in the products.
    for d in &mut diag {
        let sym = (&*d + d.transpose()) * 0.5;
        *d = sym;
    }
    Ok((BlockTridiag { diag, sub }, g))
}

/// `Jᵀρ` without forming the normal equations.
pub fn gradient(system: &ResidualBlockSystem) -> Result<DVector<f64>> {
    system.validate()?;
    let off = system.offsets();
    let mut g = DVector::zeros(system.num_vars());
    for (i, blk) in system.blocks.iter().enumerate() {
        let mut gv = g.rows_mut(off[i], system.block_sizes[i]);
        gv.gemv_tr(1.0, &blk.a, &blk.residual, 1.0);
        if let Some(b) = &blk.b {
            let mut gv = g.rows_mut(off[i + 1], system.block_sizes[i + 1]);
            gv.gemv_tr(1.0, b, &blk.residual, 1.0);
        }
    }
    Ok(g)
}

/// Solves `(M + damping·I) x = g` by block forward elimination and back
/// substitution with a Cholesky factorization of each Schur complement.
pub fn solve_block_tridiag(m: &BlockTridiag, damping: f64, g: &DVector<f64>) -> Result<DVector<f64>> {
    let sizes = m.block_sizes();
    let n: usize = sizes.iter().sum();
    if g.len() != n {
        return Err(Error::Dimension {
            context: "block tridiagonal right-hand side",
            expected: n,
            actual: g.len(),
        });
    }
    if m.sub.len() + 1 != m.diag.len().max(1) {
        return Err(Error::InvalidArgument("sub-diagonal block count must be T-1".into()));
    }
    if !(damping >= 0.0) {
        return Err(Error::InvalidArgument(format!("damping must be nonnegative, got {damping}")));
    }
    let t = sizes.len();
    let mut offsets = vec![0; t + 1];
    for i in 0..t {
        offsets[i + 1] = offsets[i] + sizes[i];
    }

    let mut factors: Vec<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>> = Vec::with_capacity(t);
    let mut y: Vec<DVector<f64>> = Vec::with_capacity(t);
    for i in 0..t {
        let mut s = m.diag[i].clone();
        for k in 0..sizes[i] {
            s[(k, k)] += damping;
        }
        let mut rhs: DVector<f64> = g.rows(offsets[i], sizes[i]).into_owned();
        if i > 0 {
            let e = &m.sub[i - 1];
            let prev = &factors[i - 1];
            // S_i -= E S_{i-1}^{-1} Eᵀ ; y_i -= E S_{i-1}^{-1} y_{i-1}
            let w = prev.solve(&e.transpose());
            s -= e * w;
            rhs -= e * prev.solve(&y[i - 1]);
        }
        let s = (&s + s.transpose()) * 0.5;
        let chol = s.cholesky().ok_or(Error::Factorization { block: i })?;
        factors.push(chol);
        y.push(rhs);
    }

    let mut x = DVector::zeros(n);
    let mut next: Option<DVector<f64>> = None;
    for i in (0..t).rev() {
        let mut rhs = y[i].clone();
        if let Some(xn) = &next {
            rhs -= m.sub[i].transpose() * xn;
        }
        let xi = factors[i].solve(&rhs);
        x.rows_mut(offsets[i], sizes[i]).copy_from(&xi);
        next = Some(xi);
    }
    Ok(x)
}

/// Same step as [`assemble`] + [`solve_block_tridiag`], through the explicit
/// dense `JᵀJ` and an LU factorization.
pub fn dense_reference_solve(system: &ResidualBlockSystem, damping: f64) -> Result<DVector<f64>> {
    system.validate()?;
    let j = system.dense_jacobian();
    let r = system.stacked_residual();
    let jt = j.transpose();
    let mut h = &jt * &j;
    for k in 0..h.nrows() {
        h[(k, k)] += damping;
    }
    let g = jt * r;
    h.lu().solve(&g).ok_or(Error::Singular)
}

/// One fixed-damping LM step: `vars ← vars − (JᵀJ + λI)⁻¹ Jᵀρ`.
///
/// Returns the new variables and `Σρ²` evaluated at the input variables.
pub fn lm_step<F>(vars: &DVector<f64>, mut build: F, cfg: &LmConfig) -> Result<(DVector<f64>, f64)>
where
    F: FnMut(&DVector<f64>) -> Result<ResidualBlockSystem>,
{
    let system = build(vars)?;
    if system.num_vars() != vars.len() {
        return Err(Error::Dimension {
            context: "LM variables",
            expected: system.num_vars(),
            actual: vars.len(),
        });
    }
    let step = solve_system(&system, cfg.damping)?;
    Ok((vars - step, system.sum_squares()))
}

/// `(JᵀJ + damping·I)⁻¹ Jᵀρ` through the block path.
pub fn solve_system(system: &ResidualBlockSystem, damping: f64) -> Result<DVector<f64>> {
    let (m, g) = assemble(system)?;
    let step = solve_block_tridiag(&m, damping, &g)?;
    if step.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LM step"));
    }
    Ok(step)
}

/// Random pairwise system, used by tests and the benchmark.
pub fn random_system<R: rand::Rng + ?Sized>(
    block_sizes: &[usize],
    residuals_per_block: usize,
    rng: &mut R,
) -> ResidualBlockSystem {
    let t = block_sizes.len();
    let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let blocks = (0..t)
        .map(|i| ResidualBlock {
            residual: draw(residuals_per_block, 1).column(0).into_owned(),
            a: draw(residuals_per_block, block_sizes[i]),
            b: (i + 1 < t).then(|| draw(residuals_per_block, block_sizes[i + 1])),
        })
        .collect();
    ResidualBlockSystem {
        block_sizes: block_sizes.to_vec(),
        blocks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn identity_system() -> ResidualBlockSystem {
        ResidualBlockSystem::new(
            vec![2],
            vec![ResidualBlock {
                residual: vec(&[2.0, 4.0]),
                a: DMatrix::identity(2, 2),
                b: None,
            }],
        )
        .unwrap()
    }

    #[test]
    fn assemble_identity_block() {
        let (m, g) = assemble(&identity_system()).unwrap();
        assert_eq!(m.diag[0], DMatrix::identity(2, 2));
        assert_eq!(g, vec(&[2.0, 4.0]));
    }

    #[test]
    fn assemble_matches_dense_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sys = random_system(&[3, 2], 4, &mut rng);
        let (m, g) = assemble(&sys).unwrap();
        let j = sys.dense_jacobian();
        let dense = j.transpose() * &j;
        assert!((m.to_dense() - dense).abs().max() < 1e-12);
        assert!((g - j.transpose() * sys.stacked_residual()).abs().max() < 1e-12);
    }

    #[test]
    fn gradient_matches_assembled_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sys = random_system(&[2, 3, 1], 3, &mut rng);
        let (_, g) = assemble(&sys).unwrap();
        assert!((gradient(&sys).unwrap() - g).abs().max() < 1e-13);
    }

    #[test]
    fn zero_coupling_gives_zero_subdiagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sys = random_system(&[2, 2, 2], 3, &mut rng);
        for b in &mut sys.blocks {
            if let Some(m) = &mut b.b {
                m.fill(0.0);
            }
        }
        let (m, _) = assemble(&sys).unwrap();
        assert!(m.sub.iter().all(|e| e.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn assemble_rejects_bad_shapes() {
        let sys = ResidualBlockSystem {
            block_sizes: vec![2],
            blocks: vec![ResidualBlock {
                residual: vec(&[1.0]),
                a: DMatrix::zeros(1, 3),
                b: None,
            }],
        };
        assert!(assemble(&sys).is_err());
    }

    #[test]
    fn solve_scaled_identity() {
        let m = BlockTridiag {
            diag: vec![DMatrix::identity(2, 2) * 2.0],
            sub: vec![],
        };
        let x = solve_block_tridiag(&m, 0.0, &vec(&[2.0, 4.0])).unwrap();
        assert_relative_eq!(x, vec(&[1.0, 2.0]), epsilon = 1e-15);
    }

    #[test]
    fn pure_damping_on_zero_matrix() {
        let m = BlockTridiag {
            diag: vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)],
            sub: vec![DMatrix::zeros(2, 2)],
        };
        let g = vec(&[1.0, -2.0, 3.0, 0.5]);
        let x = solve_block_tridiag(&m, 1e-3, &g).unwrap();
        assert_relative_eq!(x, &g / 1e-3, max_relative = 1e-12);
    }

    #[test]
    fn factorization_failure_reports_block() {
        let m = BlockTridiag {
            diag: vec![DMatrix::identity(1, 1), DMatrix::from_element(1, 1, -5.0)],
            sub: vec![DMatrix::zeros(1, 1)],
        };
        let err = solve_block_tridiag(&m, 0.0, &vec(&[1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::Factorization { block: 1 }));
    }

    #[test]
    fn block_solve_matches_dense_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sys = random_system(&[4; 5], 6, &mut rng);
        let x_block = solve_system(&sys, 1e-3).unwrap();
        let x_dense = dense_reference_solve(&sys, 1e-3).unwrap();
        assert!((&x_block - &x_dense).norm() <= 1e-8 * x_dense.norm());
    }

    #[test]
    fn dense_reference_identity_case() {
        let x = dense_reference_solve(&identity_system(), 0.0).unwrap();
        assert_relative_eq!(x, vec(&[2.0, 4.0]), epsilon = 1e-15);
    }

    #[test]
    fn block_and_dense_agree_on_ill_conditioned_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut sys = random_system(&[3, 3, 3], 3, &mut rng);
        // Nearly rank-deficient: scale one column of every A by 1e-7.
        for b in &mut sys.blocks {
            b.a.column_mut(0).scale_mut(1e-7);
        }
        let x_block = solve_system(&sys, 1e-3).unwrap();
        let x_dense = dense_reference_solve(&sys, 1e-3).unwrap();
        assert!((&x_block - &x_dense).norm() <= 1e-6 * x_dense.norm().max(1.0));
    }

    fn linear_system(c: &DVector<f64>) -> impl Fn(&DVector<f64>) -> Result<ResidualBlockSystem> + '_ {
        move |x: &DVector<f64>| {
            ResidualBlockSystem::new(
                vec![x.len()],
                vec![ResidualBlock {
                    residual: x - c,
                    a: DMatrix::identity(x.len(), x.len()),
                    b: None,
                }],
            )
        }
    }

    #[test]
    fn lm_step_on_linear_residual_lands_on_target() {
        let c = vec(&[0.3, -1.2]);
        let cfg = LmConfig { damping: 1e-300 };
        let (x, cost) = lm_step(&vec(&[5.0, 5.0]), linear_system(&c), &cfg).unwrap();
        assert_relative_eq!(x, c, epsilon = 1e-12);
        assert_relative_eq!(cost, 4.7f64.powi(2) + 6.2f64.powi(2), epsilon = 1e-12);
    }

    #[test]
    fn lm_step_damped_linear_residual() {
        let c = vec(&[1.0]);
        let x0 = vec(&[3.0]);
        let lambda = 0.25;
        let (x, _) = lm_step(&x0, linear_system(&c), &LmConfig { damping: lambda }).unwrap();
        // step = (x - c) / (1 + λ)
        assert_relative_eq!(x0[0] - x[0], 2.0 / 1.25, epsilon = 1e-14);
    }

    #[test]
    fn lm_step_quadratic_residual_decreases() {
        let build = |x: &DVector<f64>| {
            ResidualBlockSystem::new(
                vec![1],
                vec![ResidualBlock {
                    residual: vec(&[x[0] * x[0]]),
                    a: DMatrix::from_element(1, 1, 2.0 * x[0]),
                    b: None,
                }],
            )
        };
        let mut x = vec(&[1.0]);
        let cfg = LmConfig::default();
        for _ in 0..20 {
            let (next, _) = lm_step(&x, build, &cfg).unwrap();
            assert!(next[0].abs() < x[0].abs());
            x = next;
        }
    }

    #[test]
    fn lm_step_rejects_nan_residual() {
        let build = |_: &DVector<f64>| {
            ResidualBlockSystem::new(
                vec![1],
                vec![ResidualBlock {
                    residual: vec(&[f64::NAN]),
                    a: DMatrix::identity(1, 1),
                    b: None,
                }],
            )
        };
        assert!(lm_step(&vec(&[0.0]), build, &LmConfig::default()).is_err());
    }

    #[test]
    fn lm_config_rejects_nonpositive_damping() {
        assert!(LmConfig { damping: 0.0 }.validate().is_err());
        assert!(LmConfig::default().validate().is_ok());
    }

    #[test]
    fn random_sizes_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let t = rng.random_range(1..=8);
            let sizes: Vec<usize> = (0..t).map(|_| rng.random_range(1..=6)).collect();
            let m = rng.random_range(1..=8);
            let sys = random_system(&sizes, m, &mut rng);
            let a = solve_system(&sys, 1e-3).unwrap();
            let b = dense_reference_solve(&sys, 1e-3).unwrap();
            assert!((&a - &b).norm() <= 1e-8 * b.norm().max(1e-300));
        }
    }
}

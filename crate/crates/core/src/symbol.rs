//! Principal-symbol analysis for quasilinear first-order systems.
//!
//! A system `∂_t u + Aⁱ(t,x,u) ∂_i u = R(t,x,u)` is described by a
//! [`SystemDef`]: numeric evaluators for the coefficient matrices `Aⁱ` and
//! the source `R`, together with the admissible state region `U`. The
//! operations here assemble the symbol `A(t,x,ζ,ξ) = Aⁱ(t,x,ζ)ξᵢ`, compute
//! its clustered real eigendecomposition, build the diagonalizer `S`, the
//! symmetrizer `P = SᵀS`, and the spectral projections, and scan sampled
//! points for strong hyperbolicity.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Evaluator failure inside a [`SystemDef`] callback.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("time-direction matrix A^0 is singular at the requested state")]
    SingularTimeMatrix,
    #[error("state violates admissibility: {0}")]
    AdmissibilityViolation(String),
}

/// Errors produced by symbol-level operations.
#[derive(Debug, Clone, Error)]
pub enum SymbolError {
    #[error("state outside admissible region U")]
    EvaluationOutsideDomain,
    #[error("spectrum not real: max |Im λ| = {max_imag:.3e} relative to ‖A‖")]
    ComplexSpectrum { max_imag: f64 },
    #[error("symbol is defective: {reason}")]
    Defective { reason: String },
    #[error("spectral projection ill-conditioned: ‖P_i‖ = {norm:.3e}")]
    IllConditionedProjection { norm: f64 },
    #[error("sample plan has an empty sample set: {0}")]
    EmptyPlan(&'static str),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Coefficient-matrix evaluator: `(t, x, ζ, i) ↦ Aⁱ(t,x,ζ)` with `i` in
/// `0..N` naming the spatial direction.
pub type CoeffFn = dyn Fn(f64, &[f64], &[f64], usize) -> Result<DMatrix<f64>, EvalError> + Send + Sync;
/// Source evaluator: `(t, x, ζ) ↦ R(t,x,ζ)`.
pub type SourceFn = dyn Fn(f64, &[f64], &[f64]) -> Result<DVector<f64>, EvalError> + Send + Sync;

/// Open admissible state region `U ⊂ ℝᵐ`.
///
/// `margin` is a 1-Lipschitz lower estimate of `dist(ζ, Uᶜ)`; it is zero on
/// and outside the boundary, and `margin(ζ) > 0` implies `contains(ζ)`.
#[derive(Clone)]
pub struct AdmissibleRegion {
    contains: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>,
    margin: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl AdmissibleRegion {
    pub fn new(
        contains: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>,
        margin: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    ) -> Self {
        Self { contains, margin }
    }

    /// The whole space `ℝᵐ`.
    pub fn whole_space() -> Self {
        Self {
            contains: Arc::new(|_| true),
            margin: Arc::new(|_| f64::INFINITY),
        }
    }

    pub fn contains(&self, zeta: &[f64]) -> bool {
        (self.contains)(zeta)
    }

    pub fn margin(&self, zeta: &[f64]) -> f64 {
        (self.margin)(zeta)
    }
}

impl std::fmt::Debug for AdmissibleRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("AdmissibleRegion {..}")
    }
}

/// A quasilinear first-order system `∂_t u + Aⁱ(t,x,u)∂_i u = R(t,x,u)` on
/// `𝕋ᴺ` with state dimension `m`.
#[derive(Clone)]
pub struct SystemDef {
    pub m: usize,
    pub n_space: usize,
    coeff: Arc<CoeffFn>,
    source: Arc<SourceFn>,
    pub domain: AdmissibleRegion,
}

impl SystemDef {
    pub fn new(
        m: usize,
        n_space: usize,
        coeff: Arc<CoeffFn>,
        source: Arc<SourceFn>,
        domain: AdmissibleRegion,
    ) -> Self {
        Self { m, n_space, coeff, source, domain }
    }

    /// Evaluates `Aⁱ(t,x,ζ)` for direction `i ∈ 0..N`.
    pub fn coeff(&self, t: f64, x: &[f64], zeta: &[f64], i: usize) -> Result<DMatrix<f64>, EvalError> {
        debug_assert!(i < self.n_space);
        (self.coeff)(t, x, zeta, i)
    }

    /// Evaluates the source `R(t,x,ζ)`.
    pub fn source(&self, t: f64, x: &[f64], zeta: &[f64]) -> Result<DVector<f64>, EvalError> {
        (self.source)(t, x, zeta)
    }
}

impl std::fmt::Debug for SystemDef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SystemDef {{ m: {}, n_space: {} }}", self.m, self.n_space)
    }
}

/// Numerical tolerances for the eigenstructure computation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ToleranceSet {
    /// Eigenvalues closer than `cluster·max(1,‖A‖)` are merged.
    pub cluster: f64,
    /// Relative bound on |Im λ| before declaring a complex spectrum.
    pub real: f64,
    /// Numerical rank threshold for per-cluster eigenvector blocks.
    pub rank: f64,
    /// Cap on cond(S) before declaring defectiveness.
    pub cond: f64,
    /// Relative residual allowed in `‖SA − DS‖ ≤ resid·‖A‖`.
    pub resid: f64,
}

impl Default for ToleranceSet {
    fn default() -> Self {
        Self { cluster: 1e-8, real: 1e-9, rank: 1e-8, cond: 1e8, resid: 1e-8 }
    }
}

/// Clustered real eigendecomposition of a symbol sample.
///
/// `S` holds unit-norm left eigenvectors as rows ordered by ascending
/// eigenvalue, `D` is the diagonal of cluster eigenvalues repeated by
/// multiplicity, and `P = SᵀS` is the symmetrizer.
#[derive(Debug, Clone)]
pub struct EigenStructure {
    /// Distinct cluster eigenvalues, strictly ascending.
    pub lambdas: Vec<f64>,
    /// Multiplicity of each cluster; sums to `m`.
    pub multiplicities: Vec<usize>,
    pub s: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Smallest distance between distinct clusters (`∞` for a single cluster).
    pub gap: f64,
    pub cond_s: f64,
}

impl EigenStructure {
    pub fn m(&self) -> usize {
        self.s.nrows()
    }

    /// The trivial structure used by the ξ = 0 convention: S = I, D = 0, P = I.
    pub fn identity(m: usize) -> Self {
        Self {
            lambdas: vec![0.0],
            multiplicities: vec![m],
            s: DMatrix::identity(m, m),
            d: DMatrix::zeros(m, m),
            p: DMatrix::identity(m, m),
            gap: f64::INFINITY,
            cond_s: 1.0,
        }
    }

    /// All `m` eigenvalues with multiplicity, ascending.
    pub fn eigenvalues_with_multiplicity(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.m());
        for (lam, mult) in self.lambdas.iter().zip(&self.multiplicities) {
            out.extend(std::iter::repeat(*lam).take(*mult));
        }
        out
    }
}

/// Assembles the principal symbol `A(t,x,ζ,ξ) = Σᵢ Aⁱ(t,x,ζ)ξᵢ`.
///
/// Fails with [`SymbolError::EvaluationOutsideDomain`] when `ζ ∉ U` unless
/// `closure` is set, which permits evaluation on the closure `Ū`.
pub fn assemble_symbol(
    sys: &SystemDef,
    t: f64,
    x: &[f64],
    zeta: &[f64],
    xi: &[f64],
    closure: bool,
) -> Result<DMatrix<f64>, SymbolError> {
    assert_eq!(xi.len(), sys.n_space, "frequency vector dimension mismatch");
    if !closure && !sys.domain.contains(zeta) {
        return Err(SymbolError::EvaluationOutsideDomain);
    }
    let mut a = DMatrix::zeros(sys.m, sys.m);
    for (i, &xi_i) in xi.iter().enumerate() {
        if xi_i != 0.0 {
            a += sys.coeff(t, x, zeta, i)? * xi_i;
        }
    }
    Ok(a)
}

/// Convergence threshold and iteration cap for the QR (Schur) eigenvalue
/// iteration and the SVD. nalgebra's convenience methods iterate without
/// bound at machine epsilon, which stalls on symbols with high-multiplicity
/// eigenvalues; a relative threshold of 1e−12 converges quickly and is far
/// below every tolerance in [`ToleranceSet`].
const ITER_EPS: f64 = 1e-12;
const ITER_MAX: usize = 10_000;

/// Eigenvalues of a general real matrix via the real Schur form, with
/// bounded iteration. `None` means the QR iteration did not converge.
pub(crate) fn bounded_eigenvalues(a: &DMatrix<f64>) -> Option<Vec<Complex64>> {
    a.clone()
        .try_schur(ITER_EPS, ITER_MAX)
        .map(|s| s.complex_eigenvalues().iter().copied().collect())
}

/// Outcome of [`eigendecompose`] together with scan diagnostics.
#[derive(Debug, Clone)]
pub struct EigenDiagnostics {
    /// `max |Im λ| / max(‖A‖, tiny)` over the raw spectrum.
    pub max_imag_rel: f64,
}

fn fix_row_sign(row: &mut [f64]) {
    let mut best = 0usize;
    let mut best_mag = -1.0f64;
    for (j, &v) in row.iter().enumerate() {
        if v.abs() > best_mag {
            best_mag = v.abs();
            best = j;
        }
    }
    if row[best] < 0.0 {
        for v in row.iter_mut() {
            *v = -*v;
        }
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Clustered real eigendecomposition of a general real matrix.
///
/// Eigenvalues are computed by the real Schur form, clustered at
/// `tols.cluster·max(1,‖A‖)`, and for each cluster the left eigenvector
/// block is extracted from an SVD of `A − λ̄I`. Row order and signs follow a
/// fixed convention (ascending eigenvalue, lexicographic tie-break, first
/// largest-magnitude entry positive) so results are deterministic.
pub fn eigendecompose(a: &DMatrix<f64>, tols: &ToleranceSet) -> Result<EigenStructure, SymbolError> {
    eigendecompose_full(a, tols).map(|(es, _)| es)
}

pub fn eigendecompose_full(
    a: &DMatrix<f64>,
    tols: &ToleranceSet,
) -> Result<(EigenStructure, EigenDiagnostics), SymbolError> {
    let m = a.nrows();
    assert_eq!(m, a.ncols(), "symbol must be square");
    assert!(a.iter().all(|v| v.is_finite()), "symbol has non-finite entries");

    let norm_a = a.norm();
    let scale = norm_a.max(1.0);

    let eig = bounded_eigenvalues(a).ok_or(SymbolError::Defective {
        reason: "eigenvalue (QR) iteration did not converge".into(),
    })?;
    let max_imag = eig.iter().map(|z| z.im.abs()).fold(0.0f64, f64::max);
    let max_imag_rel = max_imag / norm_a.max(f64::MIN_POSITIVE);
    if max_imag > tols.real * scale {
        return Err(SymbolError::ComplexSpectrum { max_imag: max_imag_rel });
    }
    let mut re: Vec<f64> = eig.iter().map(|z| z.re).collect();
    re.sort_by(|x, y| x.partial_cmp(y).unwrap());

    // Merge roundoff-level splittings into clusters.
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for lam in re {
        match clusters.last_mut() {
            Some(c) if lam - *c.last().unwrap() <= tols.cluster * scale => c.push(lam),
            _ => clusters.push(vec![lam]),
        }
    }

    let mut lambdas = Vec::with_capacity(clusters.len());
    let mut multiplicities = Vec::with_capacity(clusters.len());
    let mut s = DMatrix::zeros(m, m);
    let mut row = 0usize;
    for c in &clusters {
        let mult = c.len();
        let lam = c.iter().sum::<f64>() / mult as f64;
        lambdas.push(lam);
        multiplicities.push(mult);

        let mut b = a.clone();
        for j in 0..m {
            b[(j, j)] -= lam;
        }
        let svd = b.try_svd(true, false, ITER_EPS, ITER_MAX).ok_or(SymbolError::Defective {
            reason: "singular-value iteration did not converge".into(),
        })?;
        let u = svd.u.as_ref().expect("svd with u requested");
        let sv = &svd.singular_values;
        // Left eigenvectors are the left-singular vectors of A − λI with
        // vanishing singular value; fewer than `mult` of them means the
        // eigenvalue is defective.
        let nullity = sv.iter().filter(|&&sig| sig <= tols.rank * scale).count();
        if nullity < mult {
            return Err(SymbolError::Defective {
                reason: format!(
                    "eigenvalue {lam:.6e} has multiplicity {mult} but eigenvector rank {}",
                    nullity.min(mult)
                ),
            });
        }
        // Singular values are descending, so the null vectors are the last columns.
        let mut rows: Vec<Vec<f64>> = (0..mult)
            .map(|k| u.column(m - 1 - k).iter().copied().collect())
            .collect();
        for r in rows.iter_mut() {
            fix_row_sign(r);
        }
        rows.sort_by(|x, y| {
            if lex_less(x, y) {
                std::cmp::Ordering::Less
            } else if lex_less(y, x) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        });
        for r in rows {
            for (j, v) in r.iter().enumerate() {
                s[(row, j)] = *v;
            }
            row += 1;
        }
    }

    let d = DMatrix::from_diagonal(&DVector::from_vec(
        lambdas
            .iter()
            .zip(&multiplicities)
            .flat_map(|(lam, mult)| std::iter::repeat(*lam).take(*mult))
            .collect::<Vec<_>>(),
    ));

    let sv_s = s
        .clone()
        .try_svd(false, false, ITER_EPS, ITER_MAX)
        .ok_or(SymbolError::Defective {
            reason: "singular-value iteration did not converge".into(),
        })?
        .singular_values;
    let sig_max = sv_s.iter().cloned().fold(0.0f64, f64::max);
    let sig_min = sv_s.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond_s = if sig_min > 0.0 { sig_max / sig_min } else { f64::INFINITY };
    if cond_s > tols.cond {
        return Err(SymbolError::Defective {
            reason: format!("cond(S) = {cond_s:.3e} exceeds cap {:.1e}", tols.cond),
        });
    }

    let resid = (&s * a - &d * &s).norm();
    if resid > tols.resid * scale {
        return Err(SymbolError::Defective {
            reason: format!("diagonalization residual {resid:.3e} exceeds {:.1e}·‖A‖", tols.resid),
        });
    }

    let gap = if lambdas.len() < 2 {
        f64::INFINITY
    } else {
        lambdas.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    };
    let p = s.transpose() * &s;

    Ok((
        EigenStructure { lambdas, multiplicities, s, d, p, gap, cond_s },
        EigenDiagnostics { max_imag_rel },
    ))
}

/// Eigenstructure of the symbol at one sample point, honoring the
/// `ξ = 0 ↦ (S, D, P) = (I, 0, I)` convention.
pub fn symbol_structure(
    sys: &SystemDef,
    t: f64,
    x: &[f64],
    zeta: &[f64],
    xi: &[f64],
    tols: &ToleranceSet,
) -> Result<EigenStructure, SymbolError> {
    if xi.iter().all(|&v| v == 0.0) {
        return Ok(EigenStructure::identity(sys.m));
    }
    let a = assemble_symbol(sys, t, x, zeta, xi, true)?;
    eigendecompose(&a, tols)
}

/// Symmetrizer `P = SᵀS` of a valid eigenstructure.
///
/// `P` is symmetric positive definite and `PA` is symmetric at the sample
/// point, since `SAS⁻¹ = D`.
pub fn build_symmetrizer(es: &EigenStructure) -> DMatrix<f64> {
    es.p.clone()
}

/// Algebraic spectral projections `P_i` onto the cluster eigenspaces.
///
/// Uses the right/left eigenvector blocks through `S⁻¹`: columns of `S⁻¹`
/// are right eigenvectors, so `P_i = Σ_{j∈cluster i} (S⁻¹)·e_j·e_jᵀ·S`.
pub fn build_projections(
    es: &EigenStructure,
    tols: &ToleranceSet,
) -> Result<Vec<DMatrix<f64>>, SymbolError> {
    let m = es.m();
    let s_inv = es
        .s
        .clone()
        .lu()
        .try_inverse()
        .ok_or(SymbolError::Defective { reason: "S not invertible".into() })?;
    let mut out = Vec::with_capacity(es.lambdas.len());
    let mut offset = 0usize;
    for &mult in &es.multiplicities {
        let mut p_i = DMatrix::zeros(m, m);
        for j in offset..offset + mult {
            // Rank-one update: right eigenvector ⊗ left eigenvector.
            let col = s_inv.column(j);
            let row = es.s.row(j);
            for r in 0..m {
                for c in 0..m {
                    p_i[(r, c)] += col[r] * row[c];
                }
            }
        }
        if p_i.norm() > 1.0 / tols.rank {
            return Err(SymbolError::IllConditionedProjection { norm: p_i.norm() });
        }
        out.push(p_i);
        offset += mult;
    }
    Ok(out)
}

/// Contour-integral form of the spectral projection for cluster `i`,
/// trapezoid rule on a circle around the cluster eigenvalue. Cross-check
/// only; the algebraic route in [`build_projections`] is better conditioned.
pub fn contour_projection(
    a: &DMatrix<f64>,
    es: &EigenStructure,
    cluster: usize,
    nodes: usize,
) -> DMatrix<f64> {
    let m = a.nrows();
    let lam = es.lambdas[cluster];
    let radius = if es.lambdas.len() < 2 { a.norm() + 1.0 } else { 0.5 * es.gap };
    let ac: DMatrix<Complex64> = a.map(|v| Complex64::new(v, 0.0));
    let mut acc: DMatrix<Complex64> = DMatrix::zeros(m, m);
    for k in 0..nodes {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / nodes as f64;
        let z = Complex64::new(lam, 0.0) + Complex64::from_polar(radius, theta);
        let mut zi_a = -ac.clone();
        for j in 0..m {
            zi_a[(j, j)] += z;
        }
        let resolvent = zi_a.lu().try_inverse().expect("resolvent singular on contour");
        // (1/2πi)∮(z−A)⁻¹dz with z = λ + re^{iθ} gives weight re^{iθ}/nodes.
        acc += resolvent * Complex64::from_polar(radius / nodes as f64, theta);
    }
    acc.map(|v| v.re)
}

/// Finite sample sets for a hyperbolicity scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplePlan {
    pub schema_version: u32,
    pub t_samples: Vec<f64>,
    pub x_samples: Vec<Vec<f64>>,
    pub zeta_samples: Vec<Vec<f64>>,
    /// Unit frequency directions; |ξ| = 1 suffices by homogeneity.
    pub xi_samples: Vec<Vec<f64>>,
    pub max_witnesses: usize,
    pub seed: u64,
}

impl SamplePlan {
    /// Quasi-uniform directions on `S^{N-1}` from a seeded generator.
    /// For `N = 1` this is just `{+1, −1}`.
    pub fn unit_directions(n_space: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
        if n_space == 1 {
            return vec![vec![1.0], vec![-1.0]];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let v: Vec<f64> = (0..n_space)
                .map(|_| {
                    // Box-Muller for a rotation-invariant direction law.
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                out.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub enum FailureKind {
    ComplexSpectrum,
    Defective,
    EvaluationFailed,
}

/// A failing sample point recorded by the scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    pub zeta: Vec<f64>,
    pub xi: Vec<f64>,
    pub failure_kind: FailureKind,
    pub detail: String,
}

/// Aggregated verdict of [`scan_hyperbolicity`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperbolicityReport {
    pub schema_version: u32,
    pub samples: usize,
    /// Worst `max|Im λ|/‖A‖` over passing samples.
    pub worst_imag: f64,
    pub worst_cond_s: f64,
    /// Smallest eigenvalue gap over samples, normalized by |ξ| = 1.
    pub min_gap: f64,
    /// Sampled lower estimate of Λ₀(R): min eigenvalue of P over samples.
    pub lambda0: f64,
    /// Sampled upper estimate of Λ₁: max eigenvalue of P over samples.
    pub lambda1: f64,
    pub pass: bool,
    pub witnesses: Vec<Witness>,
}

/// Scans sampled `(t, x, ζ, ξ)` points for assumptions (A3)/(A4) and
/// estimates the norm-equivalence constants Λ₀(R), Λ₁ of the symmetrizer.
///
/// The scan is a sampled surrogate: Λ₀ is a lower estimate over the plan's
/// finite sample set, not a certified bound.
pub fn scan_hyperbolicity(
    sys: &SystemDef,
    plan: &SamplePlan,
    tols: &ToleranceSet,
) -> Result<HyperbolicityReport, SymbolError> {
    if plan.t_samples.is_empty() {
        return Err(SymbolError::EmptyPlan("t_samples"));
    }
    if plan.x_samples.is_empty() {
        return Err(SymbolError::EmptyPlan("x_samples"));
    }
    if plan.zeta_samples.is_empty() {
        return Err(SymbolError::EmptyPlan("zeta_samples"));
    }
    if plan.xi_samples.is_empty() {
        return Err(SymbolError::EmptyPlan("xi_samples"));
    }

    let mut report = HyperbolicityReport {
        schema_version: 1,
        samples: 0,
        worst_imag: 0.0,
        worst_cond_s: 0.0,
        min_gap: f64::INFINITY,
        lambda0: f64::INFINITY,
        lambda1: 0.0,
        pass: true,
        witnesses: Vec::new(),
    };

    'outer: for t in &plan.t_samples {
        for x in &plan.x_samples {
            for zeta in &plan.zeta_samples {
                for xi in &plan.xi_samples {
                    report.samples += 1;
                    let record = |kind: FailureKind, detail: String, report: &mut HyperbolicityReport| {
                        report.pass = false;
                        if report.witnesses.len() < plan.max_witnesses {
                            report.witnesses.push(Witness {
                                t: *t,
                                x: x.clone(),
                                zeta: zeta.clone(),
                                xi: xi.clone(),
                                failure_kind: kind,
                                detail,
                            });
                        }
                    };
                    let a = match assemble_symbol(sys, *t, x, zeta, xi, true) {
                        Ok(a) => a,
                        Err(e) => {
                            record(FailureKind::EvaluationFailed, e.to_string(), &mut report);
                            if report.witnesses.len() >= plan.max_witnesses {
                                break 'outer;
                            }
                            continue;
                        }
                    };
                    match eigendecompose_full(&a, tols) {
                        Ok((es, diag)) => {
                            report.worst_imag = report.worst_imag.max(diag.max_imag_rel);
                            report.worst_cond_s = report.worst_cond_s.max(es.cond_s);
                            report.min_gap = report.min_gap.min(es.gap);
                            let p_eigs = es
                                .p
                                .clone()
                                .symmetric_eigen()
                                .eigenvalues;
                            report.lambda0 = report.lambda0.min(p_eigs.min());
                            report.lambda1 = report.lambda1.max(p_eigs.max());
                        }
                        Err(e) => {
                            let kind = match e {
                                SymbolError::ComplexSpectrum { .. } => FailureKind::ComplexSpectrum,
                                SymbolError::Defective { .. } => FailureKind::Defective,
                                _ => FailureKind::EvaluationFailed,
                            };
                            record(kind, e.to_string(), &mut report);
                            if report.witnesses.len() >= plan.max_witnesses {
                                break 'outer;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn constant_system(mats: Vec<DMatrix<f64>>) -> SystemDef {
        let m = mats[0].nrows();
        let n = mats.len();
        SystemDef::new(
            m,
            n,
            Arc::new(move |_t, _x, _z, i| Ok(mats[i].clone())),
            Arc::new(move |_t, _x, _z| Ok(DVector::zeros(m))),
            AdmissibleRegion::whole_space(),
        )
    }

    #[test]
    fn assemble_constant_diag() {
        let sys = constant_system(vec![DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))]);
        let a = assemble_symbol(&sys, 0.0, &[0.0], &[0.0, 0.0], &[1.0], false).unwrap();
        assert_eq!(a, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])));
    }

    #[test]
    fn assemble_zero_frequency() {
        let sys = constant_system(vec![DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 7.0]))]);
        let a = assemble_symbol(&sys, 0.0, &[0.0], &[0.0, 0.0], &[0.0], false).unwrap();
        assert_eq!(a, DMatrix::zeros(2, 2));
    }

    #[test]
    fn assemble_linear_in_xi() {
        let a1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.5, -1.0]);
        let a2 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 3.0]);
        let sys = constant_system(vec![a1.clone(), a2.clone()]);
        let a = assemble_symbol(&sys, 0.0, &[0.0, 0.0], &[0.0, 0.0], &[2.0, -3.0], false).unwrap();
        assert_relative_eq!((a - (a1 * 2.0 + a2 * -3.0)).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn outside_domain_rejected() {
        let mats = vec![DMatrix::identity(1, 1)];
        let sys = SystemDef::new(
            1,
            1,
            Arc::new(move |_t, _x, _z, i| Ok(mats[i].clone())),
            Arc::new(|_t, _x, _z| Ok(DVector::zeros(1))),
            AdmissibleRegion::new(
                Arc::new(|z: &[f64]| z[0] > 0.0),
                Arc::new(|z: &[f64]| z[0].max(0.0)),
            ),
        );
        assert!(matches!(
            assemble_symbol(&sys, 0.0, &[0.0], &[-1.0], &[1.0], false),
            Err(SymbolError::EvaluationOutsideDomain)
        ));
        assert!(assemble_symbol(&sys, 0.0, &[0.0], &[-1.0], &[1.0], true).is_ok());
    }

    #[test]
    fn eigendecompose_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let es = eigendecompose(&a, &ToleranceSet::default()).unwrap();
        assert_eq!(es.lambdas, vec![1.0, 3.0]);
        assert_eq!(es.multiplicities, vec![1, 1]);
        assert_relative_eq!(es.gap, 2.0);
        assert_relative_eq!((es.p.clone() - DMatrix::identity(2, 2)).norm(), 0.0, epsilon = 1e-12);
        // Rows are unit left eigenvectors up to permutation/sign.
        assert_relative_eq!(es.s[(0, 1)].abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(es.s[(1, 0)].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eigendecompose_jordan_block_defective() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            eigendecompose(&a, &ToleranceSet::default()),
            Err(SymbolError::Defective { .. })
        ));
    }

    #[test]
    fn eigendecompose_rotation_complex() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(
            eigendecompose(&a, &ToleranceSet::default()),
            Err(SymbolError::ComplexSpectrum { .. })
        ));
    }

    #[test]
    fn residual_invariant_random_diagonalizable() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tols = ToleranceSet::default();
        for _ in 0..50 {
            let m = rng.gen_range(2..6);
            let d = DMatrix::from_diagonal(&DVector::from_iterator(
                m,
                (0..m).map(|_| rng.gen_range(-3.0..3.0)),
            ));
            let q = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0f64));
            if q.clone().lu().try_inverse().is_none() {
                continue;
            }
            let a = &q * d * q.clone().lu().try_inverse().unwrap();
            match eigendecompose(&a, &tols) {
                Ok(es) => {
                    let resid = (&es.s * &a - &es.d * &es.s).norm();
                    assert!(resid <= tols.resid * a.norm().max(1.0), "resid {resid}");
                    // P positive definite.
                    let p_eigs = es.p.clone().symmetric_eigen().eigenvalues;
                    assert!(p_eigs.min() > 0.0);
                    // lambdas strictly ascending, multiplicities sum to m.
                    assert!(es.lambdas.windows(2).all(|w| w[0] < w[1]));
                    assert_eq!(es.multiplicities.iter().sum::<usize>(), m);
                    for r in 0..m {
                        assert_relative_eq!(es.s.row(r).norm(), 1.0, epsilon = 1e-10);
                    }
                }
                // Random eigenvalues may nearly collide; ill conditioning is a
                // legitimate rejection, not a test failure.
                Err(SymbolError::Defective { .. }) => {}
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }

    #[test]
    fn projections_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let es = eigendecompose(&a, &ToleranceSet::default()).unwrap();
        let projs = build_projections(&es, &ToleranceSet::default()).unwrap();
        assert_eq!(projs.len(), 2);
        // Ascending eigenvalue order: P for λ=1 first.
        assert_relative_eq!(
            (projs[0].clone() - DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]))).norm(),
            0.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            (projs[1].clone() - DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn projections_symmetric_oracle() {
        // A = QΛQᵀ with a known orthogonal Q; projections must be the
        // outer products of Q's columns.
        let theta: f64 = 0.3;
        let (s, c) = theta.sin_cos();
        // Rotation in the (0,1) plane embedded in 3×3.
        let q = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        let lam = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 0.5, 2.0]));
        let a = &q * lam * q.transpose();
        let es = eigendecompose(&a, &ToleranceSet::default()).unwrap();
        let projs = build_projections(&es, &ToleranceSet::default()).unwrap();
        for (i, proj) in projs.iter().enumerate() {
            let col = q.column(i);
            let expected = DMatrix::from_fn(3, 3, |r, c2| col[r] * col[c2]);
            assert_relative_eq!((proj - expected).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn projection_algebra() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.1, -1.0, 0.3, 0.0, 0.2, 2.0]);
        let tols = ToleranceSet::default();
        let es = eigendecompose(&a, &tols).unwrap();
        let projs = build_projections(&es, &tols).unwrap();
        let mut sum = DMatrix::zeros(3, 3);
        for p in &projs {
            sum += p;
            // Idempotent and commutes with A.
            assert!((p * p - p).norm() <= tols.resid);
            assert!((p * &a - &a * p).norm() <= tols.resid * a.norm());
        }
        assert!((sum - DMatrix::identity(3, 3)).norm() <= tols.resid);
        for (i, pi) in projs.iter().enumerate() {
            for (j, pj) in projs.iter().enumerate() {
                if i != j {
                    assert!((pi * pj).norm() <= tols.resid);
                }
            }
        }
    }

    #[test]
    fn contour_projection_matches_algebraic() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        let tols = ToleranceSet::default();
        let es = eigendecompose(&a, &tols).unwrap();
        let projs = build_projections(&es, &tols).unwrap();
        for i in 0..es.lambdas.len() {
            let pc = contour_projection(&a, &es, i, 64);
            assert!((pc - &projs[i]).norm() < 1e-10, "cluster {i}");
        }
    }

    #[test]
    fn symmetrizer_symmetrizes() {
        // Real eigenvalues ±√2; hand diagonalizer rows ∝ (√2, 1), (√2, −1).
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        let es = eigendecompose(&a, &ToleranceSet::default()).unwrap();
        let p = build_symmetrizer(&es);
        let pa = &p * &a;
        assert!((pa.clone() - pa.transpose()).norm() < 1e-12);
        assert_relative_eq!(es.lambdas[0], -(2.0f64.sqrt()), epsilon = 1e-12);
        assert_relative_eq!(es.lambdas[1], 2.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn symmetrizer_identity_for_symmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, -2.0]);
        let es = eigendecompose(&a, &ToleranceSet::default()).unwrap();
        let p = build_symmetrizer(&es);
        let pa = &p * &a;
        assert!((pa.clone() - pa.transpose()).norm() < 1e-12 * a.norm());
    }

    #[test]
    fn homogeneity_degree_one_and_zero() {
        let a1 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        let a2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let sys = constant_system(vec![a1, a2]);
        let tols = ToleranceSet::default();
        let xi = [0.6, 0.8];
        let c = 3.7;
        let cxi = [c * xi[0], c * xi[1]];
        let es1 = symbol_structure(&sys, 0.0, &[0.0, 0.0], &[0.0, 0.0], &xi, &tols).unwrap();
        let es2 = symbol_structure(&sys, 0.0, &[0.0, 0.0], &[0.0, 0.0], &cxi, &tols).unwrap();
        for (l1, l2) in es1.lambdas.iter().zip(&es2.lambdas) {
            assert_relative_eq!(c * l1, *l2, epsilon = 1e-10);
        }
        // P homogeneous of degree zero.
        assert!((es1.p - es2.p).norm() < 1e-8);
    }

    #[test]
    fn xi_zero_convention() {
        let sys = constant_system(vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0])]);
        let es = symbol_structure(&sys, 0.0, &[0.0], &[0.0, 0.0], &[0.0], &ToleranceSet::default())
            .unwrap();
        assert_eq!(es.s, DMatrix::identity(2, 2));
        assert_eq!(es.d, DMatrix::zeros(2, 2));
        assert_eq!(es.p, DMatrix::identity(2, 2));
    }

    #[test]
    fn scan_constant_advection() {
        let sys = constant_system(vec![DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))]);
        let plan = SamplePlan {
            schema_version: 1,
            t_samples: vec![0.0],
            x_samples: vec![vec![0.0]],
            zeta_samples: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            xi_samples: SamplePlan::unit_directions(1, 2, 1),
            max_witnesses: 4,
            seed: 1,
        };
        let report = scan_hyperbolicity(&sys, &plan, &ToleranceSet::default()).unwrap();
        assert!(report.pass);
        assert_relative_eq!(report.min_gap, 2.0, epsilon = 1e-12);
        assert_relative_eq!(report.lambda0, 1.0, epsilon = 1e-12);
        assert_relative_eq!(report.lambda1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scan_fail_carries_witness() {
        let sys = constant_system(vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])]);
        let plan = SamplePlan {
            schema_version: 1,
            t_samples: vec![0.0],
            x_samples: vec![vec![0.0]],
            zeta_samples: vec![vec![0.0, 0.0]],
            xi_samples: vec![vec![1.0]],
            max_witnesses: 4,
            seed: 1,
        };
        let report = scan_hyperbolicity(&sys, &plan, &ToleranceSet::default()).unwrap();
        assert!(!report.pass);
        assert!(!report.witnesses.is_empty());
        assert_eq!(report.witnesses[0].failure_kind, FailureKind::ComplexSpectrum);
    }

    #[test]
    fn scan_empty_plan_rejected() {
        let sys = constant_system(vec![DMatrix::identity(1, 1)]);
        let plan = SamplePlan {
            schema_version: 1,
            t_samples: vec![],
            x_samples: vec![vec![0.0]],
            zeta_samples: vec![vec![0.0]],
            xi_samples: vec![vec![1.0]],
            max_witnesses: 1,
            seed: 0,
        };
        assert!(matches!(
            scan_hyperbolicity(&sys, &plan, &ToleranceSet::default()),
            Err(SymbolError::EmptyPlan("t_samples"))
        ));
    }

    #[test]
    fn scan_deterministic() {
        let sys = constant_system(vec![
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
        ]);
        let plan = SamplePlan {
            schema_version: 1,
            t_samples: vec![0.0, 1.0],
            x_samples: vec![vec![0.0, 0.0]],
            zeta_samples: vec![vec![0.1, 0.2]],
            xi_samples: SamplePlan::unit_directions(2, 16, 99),
            max_witnesses: 4,
            seed: 99,
        };
        let r1 = scan_hyperbolicity(&sys, &plan, &ToleranceSet::default()).unwrap();
        let r2 = scan_hyperbolicity(&sys, &plan, &ToleranceSet::default()).unwrap();
        assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
    }

    #[test]
    fn garding_sandwich_sampled() {
        let sys = constant_system(vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0])]);
        let plan = SamplePlan {
            schema_version: 1,
            t_samples: vec![0.0],
            x_samples: vec![vec![0.0]],
            zeta_samples: vec![vec![0.0, 0.0]],
            xi_samples: vec![vec![1.0], vec![-1.0]],
            max_witnesses: 1,
            seed: 5,
        };
        let tols = ToleranceSet::default();
        let report = scan_hyperbolicity(&sys, &plan, &tols).unwrap();
        assert!(report.pass && report.lambda0 > 0.0);
        let es = symbol_structure(&sys, 0.0, &[0.0], &[0.0, 0.0], &[1.0], &tols).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let v = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0f64)).normalize();
            let q = (v.transpose() * &es.p * &v)[(0, 0)];
            assert!(q >= report.lambda0 - 1e-12 && q <= report.lambda1 + 1e-12);
        }
    }
}

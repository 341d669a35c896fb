//! Built-in systems: toy oracles (advection, Burgers, a margin-decay model)
//! and two relativistic fluids — the perfect fluid (relativistic Euler) and a
//! bulk-viscous fluid with relaxation-type viscosity.
//!
//! Both fluids are posed on Minkowski space with mostly-plus signature
//! `η = diag(−1,1,1,1)` and evolve the full four-velocity with the
//! normalization `u_μ u^μ = −1` carried as an invariant. The spacetime
//! matrices `A^α` come from decomposing stress-energy conservation into the
//! directions parallel and orthogonal to `u`; the evolution form passed to
//! the rest of the crate is `Â^j = (A^0)^{−1} A^j`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::symbol::{
    assemble_symbol, AdmissibleRegion, EvalError, SymbolError, SystemDef, ToleranceSet,
};

/// Mostly-plus Minkowski metric diagonal.
pub const ETA_DIAG: [f64; 4] = [-1.0, 1.0, 1.0, 1.0];

/// Tolerated deviation from the velocity normalization `u_μu^μ = −1` inside
/// the perfect-fluid admissible region.
pub const VELOCITY_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad equation-of-state table: {0}")]
    BadTable(String),
}

/// Transport-coefficient evaluator `(ϱ, n, Π) ↦ value`.
pub type TransportFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Constant transport coefficient.
pub fn constant_transport(value: f64) -> TransportFn {
    Arc::new(move |_, _, _| value)
}

/// Minkowski inner product `η_{μν} a^μ b^ν` of four-vectors.
pub fn minkowski_dot(a: &[f64], b: &[f64]) -> f64 {
    -a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

/// Relativistic velocity addition `(v + w)/(1 + vw)`.
pub fn velocity_addition(v: f64, w: f64) -> f64 {
    (v + w) / (1.0 + v * w)
}

/// Normalized four-velocity `γ(1, v)` of a 3-velocity `v`, `|v| < 1`.
pub fn four_velocity(v3: &[f64]) -> [f64; 4] {
    assert_eq!(v3.len(), 3);
    let v2: f64 = v3.iter().map(|v| v * v).sum();
    assert!(v2 < 1.0, "3-velocity must be subluminal");
    let gamma = 1.0 / (1.0 - v2).sqrt();
    [gamma, gamma * v3[0], gamma * v3[1], gamma * v3[2]]
}

/// Pressure law `p(ϱ, aux)` with both partial derivatives; `aux` is the
/// entropy for the perfect fluid and the particle density for the
/// bulk-viscous fluid.
#[derive(Clone)]
pub struct EquationOfState {
    pub aux_label: String,
    p: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    dp_drho: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    dp_daux: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for EquationOfState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "EquationOfState {{ aux: {} }}", self.aux_label)
    }
}

impl EquationOfState {
    pub fn new(
        aux_label: impl Into<String>,
        p: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
        dp_drho: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
        dp_daux: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    ) -> Self {
        Self { aux_label: aux_label.into(), p, dp_drho, dp_daux }
    }

    /// Barotropic power law `p = Kϱ^Γ`; the aux variable is passively
    /// advected and does not feed back into the pressure.
    pub fn barotropic(k: f64, gamma: f64) -> Self {
        assert!(k > 0.0 && gamma > 0.0);
        Self::new(
            "aux",
            Arc::new(move |rho, _| k * rho.powf(gamma)),
            Arc::new(move |rho, _| k * gamma * rho.powf(gamma - 1.0)),
            Arc::new(|_, _| 0.0),
        )
    }

    /// Pressure depending on both ϱ and the aux variable through
    /// `p = Kϱ^Γ + c·aux` (a minimal two-argument law for tests).
    pub fn barotropic_plus_aux(k: f64, gamma: f64, c: f64) -> Self {
        assert!(k > 0.0 && gamma > 0.0);
        Self::new(
            "aux",
            Arc::new(move |rho, aux| k * rho.powf(gamma) + c * aux),
            Arc::new(move |rho, _| k * gamma * rho.powf(gamma - 1.0)),
            Arc::new(move |_, _| c),
        )
    }

    /// Tabulated barotropic law: monotone cubic (Fritsch–Carlson)
    /// interpolation of `(ϱ, p)` samples, with the interpolant's derivative
    /// as `∂p/∂ϱ`. Samples must have strictly increasing ϱ and p.
    pub fn tabulated(points: &[(f64, f64)]) -> Result<Self, ModelError> {
        let pchip = Pchip::new(points)?;
        let pchip2 = pchip.clone();
        Ok(Self::new(
            "aux",
            Arc::new(move |rho, _| pchip.value(rho)),
            Arc::new(move |rho, _| pchip2.derivative(rho)),
            Arc::new(|_, _| 0.0),
        ))
    }

    pub fn pressure(&self, rho: f64, aux: f64) -> f64 {
        (self.p)(rho, aux)
    }

    pub fn dp_drho(&self, rho: f64, aux: f64) -> f64 {
        (self.dp_drho)(rho, aux)
    }

    pub fn dp_daux(&self, rho: f64, aux: f64) -> f64 {
        (self.dp_daux)(rho, aux)
    }
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson slopes).
#[derive(Clone, Debug)]
struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    fn new(points: &[(f64, f64)]) -> Result<Self, ModelError> {
        if points.len() < 3 {
            return Err(ModelError::BadTable("need at least 3 samples".into()));
        }
        let x: Vec<f64> = points.iter().map(|p| p.0).collect();
        let y: Vec<f64> = points.iter().map(|p| p.1).collect();
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::BadTable("abscissae must be strictly increasing".into()));
        }
        if y.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::BadTable("pressure samples must be strictly increasing".into()));
        }
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                d[i] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        // One-sided three-point endpoint slopes, clamped for monotonicity.
        let end_slope = |h0: f64, h1: f64, d0: f64, d1: f64| {
            let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if s * d0 <= 0.0 {
                0.0
            } else if d0 * d1 < 0.0 && s.abs() > 3.0 * d0.abs() {
                3.0 * d0
            } else {
                s
            }
        };
        d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        Ok(Self { x, y, d })
    }

    fn segment(&self, xq: f64) -> usize {
        match self.x.binary_search_by(|v| v.partial_cmp(&xq).unwrap()) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(i) => i.clamp(1, self.x.len() - 1) - 1,
        }
    }

    fn value(&self, xq: f64) -> f64 {
        let i = self.segment(xq);
        let h = self.x[i + 1] - self.x[i];
        let t = (xq - self.x[i]) / h;
        let (h00, h10, h01, h11) = hermite_basis(t);
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }

    fn derivative(&self, xq: f64) -> f64 {
        let i = self.segment(xq);
        let h = self.x[i + 1] - self.x[i];
        let t = (xq - self.x[i]) / h;
        let dh00 = 6.0 * t * t - 6.0 * t;
        let dh10 = 3.0 * t * t - 4.0 * t + 1.0;
        let dh01 = -dh00;
        let dh11 = 3.0 * t * t - 2.0 * t;
        (dh00 * self.y[i] + dh01 * self.y[i + 1]) / h + dh10 * self.d[i] + dh11 * self.d[i + 1]
    }
}

fn hermite_basis(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    )
}

/// Constant-speed advection in one space dimension: `A¹ = diag(speeds)`,
/// no source, whole-space admissibility. Test oracle with exact translation
/// solutions.
pub fn make_advection(speeds: &[f64]) -> SystemDef {
    assert!(!speeds.is_empty());
    let m = speeds.len();
    let diag = DMatrix::from_diagonal(&DVector::from_row_slice(speeds));
    SystemDef::new(
        m,
        1,
        Arc::new(move |_t, _x, _z, _i| Ok(diag.clone())),
        Arc::new(move |_t, _x, _z| Ok(DVector::zeros(m))),
        AdmissibleRegion::whole_space(),
    )
}

/// Inviscid Burgers in convective form: `m = 1`, `A¹(ζ) = ζ`, no source.
pub fn make_burgers() -> SystemDef {
    SystemDef::new(
        1,
        1,
        Arc::new(|_t, _x, z: &[f64], _i| Ok(DMatrix::from_element(1, 1, z[0]))),
        Arc::new(|_t, _x, _z| Ok(DVector::zeros(1))),
        AdmissibleRegion::whole_space(),
    )
}

/// Margin-decay toy: `∂_t u = −1` pointwise on `U = {ζ > 0}`, so a datum at
/// height `a` reaches the boundary of the admissible region at `t = a`.
pub fn make_margin_toy() -> SystemDef {
    SystemDef::new(
        1,
        1,
        Arc::new(|_t, _x, _z, _i| Ok(DMatrix::zeros(1, 1))),
        Arc::new(|_t, _x, _z| Ok(DVector::from_element(1, -1.0))),
        AdmissibleRegion::new(
            Arc::new(|z: &[f64]| z[0] > 0.0),
            Arc::new(|z: &[f64]| z[0].max(0.0)),
        ),
    )
}

/// Perfect-fluid state `Φ = (u^0..u^3, ϱ, s)` with 3-velocity `v3`.
pub fn euler_state(v3: &[f64], rho: f64, s: f64) -> Vec<f64> {
    let u = four_velocity(v3);
    vec![u[0], u[1], u[2], u[3], rho, s]
}

pub fn euler_rest_state(rho: f64, s: f64) -> Vec<f64> {
    euler_state(&[0.0, 0.0, 0.0], rho, s)
}

/// Bulk-viscous state `Φ = (u^0..u^3, ϱ, n, Π)` with 3-velocity `v3`.
pub fn bulk_state(v3: &[f64], rho: f64, n: f64, pi: f64) -> Vec<f64> {
    let u = four_velocity(v3);
    vec![u[0], u[1], u[2], u[3], rho, n, pi]
}

/// Projector `𝖯^{αβ} = η^{αβ} + u^α u^β` orthogonal to `u`.
fn projector(u: &[f64]) -> [[f64; 4]; 4] {
    let mut p = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            p[a][b] = u[a] * u[b];
        }
        p[a][a] += ETA_DIAG[a];
    }
    p
}

/// Spacetime coefficient matrices `A^α`, α = 0..3, of the perfect fluid.
///
/// Rows 0–3 are stress-energy conservation projected orthogonal to `u`,
/// row 4 is the `u`-parallel contraction, row 5 is entropy advection:
///
/// ```text
/// rows β:  (p+ϱ) u^α δ^β_λ │ 𝖯^{βα} ∂p/∂ϱ │ 𝖯^{βα} ∂p/∂s
/// row 4:   (p+ϱ) δ^α_λ     │ u^α          │ 0
/// row 5:   0               │ 0            │ u^α
/// ```
pub fn euler_spacetime_matrices(eos: &EquationOfState, phi: &[f64]) -> [DMatrix<f64>; 4] {
    assert_eq!(phi.len(), 6);
    let u = &phi[0..4];
    let (rho, s) = (phi[4], phi[5]);
    let p = eos.pressure(rho, s);
    let p_rho = eos.dp_drho(rho, s);
    let p_s = eos.dp_daux(rho, s);
    let w = p + rho;
    let proj = projector(u);
    std::array::from_fn(|alpha| {
        let mut a = DMatrix::zeros(6, 6);
        for beta in 0..4 {
            a[(beta, beta)] = w * u[alpha];
            a[(beta, 4)] = proj[beta][alpha] * p_rho;
            a[(beta, 5)] = proj[beta][alpha] * p_s;
        }
        a[(4, alpha)] = w;
        a[(4, 4)] = u[alpha];
        a[(5, 5)] = u[alpha];
        a
    })
}

/// Spacetime coefficient matrices `A^α` of the bulk-viscous fluid.
///
/// Stress energy is `T^α_ν = (ϱ+p+Π) u^α u_ν + (p+Π) δ^α_ν`; its
/// conservation is split along and orthogonal to `u`, joined by particle
/// conservation and the relaxation law `τ u^μ∂_μΠ + Π + ζ ∂_μu^μ = 0`:
///
/// ```text
/// rows β:  (ϱ+p+Π) u^α δ^β_λ │ 𝖯^{βα} ∂p/∂ϱ │ 𝖯^{βα} ∂p/∂n │ 𝖯^{βα}
/// row 4:   (ϱ+p+Π) δ^α_λ     │ u^α          │ 0            │ 0
/// row 5:   n δ^α_λ           │ 0            │ u^α          │ 0
/// row 6:   ζ δ^α_λ           │ 0            │ 0            │ τ u^α
/// ```
///
/// The source, before moving to evolution form, is `(0,…,0, −Π)`.
pub fn bulk_spacetime_matrices(
    eos: &EquationOfState,
    tau: &TransportFn,
    zeta: &TransportFn,
    phi: &[f64],
) -> [DMatrix<f64>; 4] {
    assert_eq!(phi.len(), 7);
    let u = &phi[0..4];
    let (rho, n, pi) = (phi[4], phi[5], phi[6]);
    let p = eos.pressure(rho, n);
    let p_rho = eos.dp_drho(rho, n);
    let p_n = eos.dp_daux(rho, n);
    let w = rho + p + pi;
    let tau_v = tau(rho, n, pi);
    let zeta_v = zeta(rho, n, pi);
    let proj = projector(u);
    std::array::from_fn(|alpha| {
        let mut a = DMatrix::zeros(7, 7);
        for beta in 0..4 {
            a[(beta, beta)] = w * u[alpha];
            a[(beta, 4)] = proj[beta][alpha] * p_rho;
            a[(beta, 5)] = proj[beta][alpha] * p_n;
            a[(beta, 6)] = proj[beta][alpha];
        }
        a[(4, alpha)] = w;
        a[(4, 4)] = u[alpha];
        a[(5, alpha)] = n;
        a[(5, 5)] = u[alpha];
        a[(6, alpha)] = zeta_v;
        a[(6, 6)] = tau_v * u[alpha];
        a
    })
}

/// First violated bulk-viscous admissibility inequality, by name; `None`
/// for admissible states.
pub fn bulk_violation(
    eos: &EquationOfState,
    tau: &TransportFn,
    zeta: &TransportFn,
    phi: &[f64],
) -> Option<String> {
    let (rho, n, pi) = (phi[4], phi[5], phi[6]);
    let p = eos.pressure(rho, n);
    let p_rho = eos.dp_drho(rho, n);
    let p_n = eos.dp_daux(rho, n);
    let w = rho + p + pi;
    let tau_v = tau(rho, n, pi);
    let zeta_v = zeta(rho, n, pi);
    let checks: [(&str, f64); 8] = [
        ("rho + p + Pi > 0", w),
        ("n > 0", n),
        ("dp/drho > 0", p_rho),
        ("dp/dn > 0", p_n),
        ("tau > 0", tau_v),
        ("zeta > 0", zeta_v),
        ("dp/drho + (n/(rho+p+Pi))·dp/dn >= 0", p_rho + n / w * p_n),
        (
            "(n·dp/dn + zeta/tau)/(rho+p+Pi) <= 1 - dp/drho",
            1.0 - p_rho - (n * p_n + zeta_v / tau_v) / w,
        ),
    ];
    for (name, slack) in checks {
        if !(slack > 0.0) || !slack.is_finite() {
            return Some(name.to_string());
        }
    }
    None
}

fn bulk_margin(eos: &EquationOfState, tau: &TransportFn, zeta: &TransportFn, phi: &[f64]) -> f64 {
    let (rho, n, pi) = (phi[4], phi[5], phi[6]);
    let p = eos.pressure(rho, n);
    let p_rho = eos.dp_drho(rho, n);
    let p_n = eos.dp_daux(rho, n);
    let w = rho + p + pi;
    let tau_v = tau(rho, n, pi);
    let zeta_v = zeta(rho, n, pi);
    if !(w > 0.0 && tau_v > 0.0) {
        return 0.0;
    }
    let slacks = [
        w,
        n,
        p_rho,
        p_n,
        zeta_v,
        p_rho + n / w * p_n,
        1.0 - p_rho - (n * p_n + zeta_v / tau_v) / w,
    ];
    slacks.into_iter().fold(f64::INFINITY, f64::min).max(0.0)
}

/// Relativistic Euler equations as a 6×6 evolution system on `𝕋³`:
/// `∂_tΦ + Â^j ∂_jΦ = 0` with `Â^j = (A^0)^{−1}A^j` built pointwise from
/// [`euler_spacetime_matrices`].
///
/// The admissible region asks for `|u_μu^μ + 1| ≤` [`VELOCITY_SLACK`],
/// `p + ϱ > 0`, and `0 < ∂p/∂ϱ ≤ 1` (subluminal sound).
pub fn make_relativistic_euler(eos: EquationOfState) -> SystemDef {
    let eos_coeff = eos.clone();
    let coeff = Arc::new(move |_t: f64, _x: &[f64], z: &[f64], i: usize| {
        let mats = euler_spacetime_matrices(&eos_coeff, z);
        let a0_inv = mats[0].clone().lu().try_inverse().ok_or(EvalError::SingularTimeMatrix)?;
        Ok(a0_inv * &mats[i + 1])
    });
    let eos_contains = eos.clone();
    let eos_margin = eos;
    let contains = Arc::new(move |z: &[f64]| {
        let norm_dev = (minkowski_dot(&z[0..4], &z[0..4]) + 1.0).abs();
        let p = eos_contains.pressure(z[4], z[5]);
        let p_rho = eos_contains.dp_drho(z[4], z[5]);
        norm_dev <= VELOCITY_SLACK && p + z[4] > 0.0 && p_rho > 0.0 && p_rho <= 1.0
    });
    let margin = Arc::new(move |z: &[f64]| {
        let norm_dev = (minkowski_dot(&z[0..4], &z[0..4]) + 1.0).abs();
        let p = eos_margin.pressure(z[4], z[5]);
        let p_rho = eos_margin.dp_drho(z[4], z[5]);
        [VELOCITY_SLACK - norm_dev, p + z[4], p_rho, 1.0 - p_rho]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    });
    SystemDef::new(
        6,
        3,
        coeff,
        Arc::new(|_t, _x, _z| Ok(DVector::zeros(6))),
        AdmissibleRegion::new(contains, margin),
    )
}

/// Bulk-viscous relativistic fluid as a 7×7 evolution system on `𝕋³` with
/// relaxation source `−Π/τ` folded through `(A^0)^{−1}`.
///
/// Coefficient evaluation rejects inadmissible states with the first
/// violated inequality named, so bad data fail before any solve.
pub fn make_bulk_viscous(eos: EquationOfState, tau: TransportFn, zeta: TransportFn) -> SystemDef {
    let eval = {
        let eos = eos.clone();
        let tau = tau.clone();
        let zeta = zeta.clone();
        move |z: &[f64]| -> Result<(DMatrix<f64>, [DMatrix<f64>; 4]), EvalError> {
            if let Some(name) = bulk_violation(&eos, &tau, &zeta, z) {
                return Err(EvalError::AdmissibilityViolation(name));
            }
            let mats = bulk_spacetime_matrices(&eos, &tau, &zeta, z);
            let a0_inv =
                mats[0].clone().lu().try_inverse().ok_or(EvalError::SingularTimeMatrix)?;
            Ok((a0_inv, mats))
        }
    };
    let eval_src = eval.clone();
    let coeff = Arc::new(move |_t: f64, _x: &[f64], z: &[f64], i: usize| {
        let (a0_inv, mats) = eval(z)?;
        Ok(a0_inv * &mats[i + 1])
    });
    let source = Arc::new(move |_t: f64, _x: &[f64], z: &[f64]| {
        let (a0_inv, _) = eval_src(z)?;
        let mut r = DVector::zeros(7);
        r[6] = -z[6];
        Ok(a0_inv * r)
    });
    let eos_c = eos.clone();
    let (tau_c, zeta_c) = (tau.clone(), zeta.clone());
    let contains = Arc::new(move |z: &[f64]| bulk_violation(&eos_c, &tau_c, &zeta_c, z).is_none());
    let margin = Arc::new(move |z: &[f64]| bulk_margin(&eos, &tau, &zeta, z));
    SystemDef::new(7, 3, coeff, source, AdmissibleRegion::new(contains, margin))
}

/// Characteristic speeds of the symbol in a unit spatial `direction`:
/// eigenvalues of `Aⁱ(t,x,ζ)·direction_i`, ascending with multiplicity.
pub fn characteristic_speeds(
    sys: &SystemDef,
    t: f64,
    x: &[f64],
    zeta: &[f64],
    direction: &[f64],
    tols: &ToleranceSet,
) -> Result<Vec<f64>, SymbolError> {
    let a = assemble_symbol(sys, t, x, zeta, direction, true)?;
    let norm = a.norm();
    let eig = crate::symbol::bounded_eigenvalues(&a).ok_or(SymbolError::Defective {
        reason: "eigenvalue (QR) iteration did not converge".into(),
    })?;
    let max_imag = eig.iter().map(|z| z.im.abs()).fold(0.0f64, f64::max);
    if max_imag > tols.real * norm.max(1.0) {
        return Err(SymbolError::ComplexSpectrum {
            max_imag: max_imag / norm.max(f64::MIN_POSITIVE),
        });
    }
    let mut speeds: Vec<f64> = eig.iter().map(|z| z.re).collect();
    speeds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(speeds)
}

//! Periodic grids, discrete Fourier analysis, Sobolev norms, and the
//! variable-coefficient quantization `Op(SᵀS)`.
//!
//! Conventions follow the unnormalized forward transform
//! `f̂(ξ) = ∫ e^{−ix·ξ} f(x) dx`, discretized with quadrature weight
//! `spacing^N`; the inverse carries the `(2π)^{−N}` factor. Mode sets are
//! symmetric under `ξ → −ξ` (the Nyquist line is dropped), and the 2/3-rule
//! dealiasing mask keeps `|ξ_i| ≤ n/3`.

use std::io::{Read, Write};
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::symbol::{self, SymbolError, SystemDef, ToleranceSet};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"THYP";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("field contains non-finite values")]
    NonFiniteField,
    #[error("state leaves admissible region at grid point x = {x:?}")]
    StateOutsideDomain { x: Vec<f64> },
    #[error("symbol failure at x = {x:?}, ξ = {xi:?}: {source}")]
    SymbolFailure { x: Vec<f64>, xi: Vec<i64>, source: SymbolError },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("quantization output not real: |Im| = {0:.3e}")]
    NonRealOutput(f64),
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot format: {0}")]
    BadSnapshot(String),
}

/// Uniform periodic grid on `𝕋ᴺ` with `n` points per dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TorusGrid {
    n_space: usize,
    n: usize,
}

impl TorusGrid {
    /// `n` must be a power of two.
    pub fn new(n_space: usize, n: usize) -> Self {
        assert!(n_space >= 1, "need at least one space dimension");
        assert!(n >= 4 && n.is_power_of_two(), "grid size must be a power of two ≥ 4");
        Self { n_space, n }
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n as f64
    }

    pub fn num_points(&self) -> usize {
        self.n.pow(self.n_space as u32)
    }

    /// Coordinates of the grid point with C-order linear index `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut coords = vec![0.0; self.n_space];
        let mut rem = idx;
        for d in (0..self.n_space).rev() {
            coords[d] = (rem % self.n) as f64 * self.spacing();
            rem /= self.n;
        }
        coords
    }

    /// Integer frequency of FFT bin `k` along one axis.
    pub fn freq_of_bin(&self, k: usize) -> i64 {
        if k <= self.n / 2 - 1 {
            k as i64
        } else {
            k as i64 - self.n as i64
        }
    }

    /// Frequency vector of the C-order linear mode index.
    pub fn mode_of_index(&self, idx: usize) -> Vec<i64> {
        let mut mode = vec![0i64; self.n_space];
        let mut rem = idx;
        for d in (0..self.n_space).rev() {
            mode[d] = self.freq_of_bin(rem % self.n);
            rem /= self.n;
        }
        mode
    }

    /// True when the bin sits on a Nyquist line `ξ_i = −n/2`; those modes
    /// have no mirror partner and are excluded from the retained mode set.
    pub fn is_nyquist(&self, mode: &[i64]) -> bool {
        mode.iter().any(|&m| m == -(self.n as i64) / 2)
    }

    /// 2/3-rule dealiasing test: `|ξ_i| ≤ ⌊n/3⌋` on every axis.
    pub fn in_dealias_band(&self, mode: &[i64]) -> bool {
        let cut = (self.n / 3) as i64;
        mode.iter().all(|&m| m.abs() <= cut)
    }

    /// Retained (non-Nyquist) modes, as (linear index, frequency vector).
    pub fn mode_set(&self) -> Vec<(usize, Vec<i64>)> {
        (0..self.num_points())
            .map(|idx| (idx, self.mode_of_index(idx)))
            .filter(|(_, m)| !self.is_nyquist(m))
            .collect()
    }

    /// Modes inside the dealias band, as (linear index, frequency vector).
    pub fn dealias_modes(&self) -> Vec<(usize, Vec<i64>)> {
        (0..self.num_points())
            .map(|idx| (idx, self.mode_of_index(idx)))
            .filter(|(_, m)| self.in_dealias_band(m))
            .collect()
    }
}

fn fft_all_axes(grid: &TorusGrid, data: &mut [Complex64], inverse: bool) {
    let n = grid.n;
    let total = grid.num_points();
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut line = vec![Complex64::default(); n];
    // One axis at a time; stride arithmetic over the C-order layout.
    let mut stride = 1usize;
    for _axis in 0..grid.n_space {
        let lines = total / n;
        for l in 0..lines {
            // Base index of this line: positions with the axis coordinate 0.
            let block = l / stride;
            let offset = l % stride;
            let base = block * stride * n + offset;
            for j in 0..n {
                line[j] = data[base + j * stride];
            }
            fft.process(&mut line);
            for j in 0..n {
                data[base + j * stride] = line[j];
            }
        }
        stride *= n;
    }
}

/// Real `m`-component field on a [`TorusGrid`] with lazily synchronized
/// physical samples and Fourier coefficients.
///
/// Layout is component-major: component `c` occupies a contiguous C-order
/// block of `n^N` entries.
pub struct TorusField {
    grid: TorusGrid,
    m: usize,
    values: OnceLock<Vec<f64>>,
    coeffs: OnceLock<Vec<Complex64>>,
}

impl Clone for TorusField {
    fn clone(&self) -> Self {
        let f = Self::empty(self.grid.clone(), self.m);
        if let Some(v) = self.values.get() {
            let _ = f.values.set(v.clone());
        }
        if let Some(c) = self.coeffs.get() {
            let _ = f.coeffs.set(c.clone());
        }
        f
    }
}

impl std::fmt::Debug for TorusField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TorusField {{ N: {}, n: {}, m: {} }}", self.grid.n_space, self.grid.n, self.m)
    }
}

impl TorusField {
    fn empty(grid: TorusGrid, m: usize) -> Self {
        Self { grid, m, values: OnceLock::new(), coeffs: OnceLock::new() }
    }

    pub fn from_values(grid: TorusGrid, m: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), m * grid.num_points());
        let f = Self::empty(grid, m);
        f.values.set(values).unwrap();
        f
    }

    pub fn from_coeffs(grid: TorusGrid, m: usize, coeffs: Vec<Complex64>) -> Self {
        assert_eq!(coeffs.len(), m * grid.num_points());
        let f = Self::empty(grid, m);
        f.coeffs.set(coeffs).unwrap();
        f
    }

    pub fn zeros(grid: TorusGrid, m: usize) -> Self {
        let len = m * grid.num_points();
        Self::from_values(grid, m, vec![0.0; len])
    }

    /// Builds a field by evaluating `f(x)` (one value per component) at
    /// every grid point.
    pub fn from_fn(grid: TorusGrid, m: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let pts = grid.num_points();
        let mut values = vec![0.0; m * pts];
        for idx in 0..pts {
            let x = grid.point(idx);
            let v = f(&x);
            assert_eq!(v.len(), m);
            for (c, val) in v.into_iter().enumerate() {
                values[c * pts + idx] = val;
            }
        }
        Self::from_values(grid, m, values)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Physical samples, component-major.
    pub fn values(&self) -> &[f64] {
        self.values.get_or_init(|| {
            let coeffs = self.coeffs.get().expect("field has neither values nor coeffs");
            let pts = self.grid.num_points();
            let norm = (2.0 * std::f64::consts::PI).powi(self.grid.n_space as i32);
            let mut out = vec![0.0; self.m * pts];
            let mut buf = vec![Complex64::default(); pts];
            for c in 0..self.m {
                buf.copy_from_slice(&coeffs[c * pts..(c + 1) * pts]);
                fft_all_axes(&self.grid, &mut buf, true);
                for (j, z) in buf.iter().enumerate() {
                    out[c * pts + j] = z.re / norm;
                }
            }
            out
        })
    }

    /// Fourier coefficients `f̂(ξ)`, component-major over FFT bins.
    pub fn coeffs(&self) -> &[Complex64] {
        self.coeffs.get_or_init(|| {
            let values = self.values.get().expect("field has neither values nor coeffs");
            let pts = self.grid.num_points();
            let weight = self.grid.spacing().powi(self.grid.n_space as i32);
            let mut out = vec![Complex64::default(); self.m * pts];
            for c in 0..self.m {
                for j in 0..pts {
                    out[c * pts + j] = Complex64::new(values[c * pts + j] * weight, 0.0);
                }
                fft_all_axes(&self.grid, &mut out[c * pts..(c + 1) * pts], false);
            }
            out
        })
    }

    pub fn value(&self, component: usize, idx: usize) -> f64 {
        self.values()[component * self.grid.num_points() + idx]
    }

    /// State vector (all components) at one grid point.
    pub fn state_at(&self, idx: usize) -> Vec<f64> {
        let pts = self.grid.num_points();
        let v = self.values();
        (0..self.m).map(|c| v[c * pts + idx]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// Applies a real Fourier multiplier `σ(ξ)`; Nyquist modes are dropped.
    pub fn fourier_multiplier(&self, sigma: impl Fn(&[i64]) -> f64) -> TorusField {
        let pts = self.grid.num_points();
        let coeffs = self.coeffs();
        let mut out = vec![Complex64::default(); self.m * pts];
        for idx in 0..pts {
            let mode = self.grid.mode_of_index(idx);
            if self.grid.is_nyquist(&mode) {
                continue;
            }
            let fac = sigma(&mode);
            for c in 0..self.m {
                out[c * pts + idx] = coeffs[c * pts + idx] * fac;
            }
        }
        TorusField::from_coeffs(self.grid.clone(), self.m, out)
    }

    /// Complex multiplier variant (used for `iξ_i` derivatives).
    pub fn fourier_multiplier_complex(&self, sigma: impl Fn(&[i64]) -> Complex64) -> TorusField {
        let pts = self.grid.num_points();
        let coeffs = self.coeffs();
        let mut out = vec![Complex64::default(); self.m * pts];
        for idx in 0..pts {
            let mode = self.grid.mode_of_index(idx);
            if self.grid.is_nyquist(&mode) {
                continue;
            }
            let fac = sigma(&mode);
            for c in 0..self.m {
                out[c * pts + idx] = coeffs[c * pts + idx] * fac;
            }
        }
        TorusField::from_coeffs(self.grid.clone(), self.m, out)
    }

    /// Zeroes everything outside the 2/3-rule band.
    pub fn dealias(&self) -> TorusField {
        let grid = self.grid.clone();
        self.fourier_multiplier(move |mode| if grid.in_dealias_band(mode) { 1.0 } else { 0.0 })
    }

    /// L² norm from grid quadrature.
    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.spacing().powi(self.grid.n_space as i32);
        (self.values().iter().map(|v| v * v).sum::<f64>() * w).sqrt()
    }

    /// L² norm from the mode sum (Plancherel route).
    pub fn l2_norm_modes(&self) -> f64 {
        let norm = (2.0 * std::f64::consts::PI).powi(self.grid.n_space as i32);
        (self.coeffs().iter().map(|z| z.norm_sqr()).sum::<f64>() / norm).sqrt()
    }

    /// Relative Plancherel defect between quadrature and mode-sum norms.
    pub fn plancherel_residual(&self) -> f64 {
        let a = self.l2_norm();
        let b = self.l2_norm_modes();
        (a - b).abs() / a.max(b).max(f64::MIN_POSITIVE)
    }

    /// Max Hermitian-symmetry violation `|f̂(−ξ) − conj f̂(ξ)|`, relative.
    pub fn hermitian_residual(&self) -> f64 {
        let pts = self.grid.num_points();
        let coeffs = self.coeffs();
        let max_mag = coeffs.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        if max_mag == 0.0 {
            return 0.0;
        }
        let n = self.grid.n;
        let mut worst = 0.0f64;
        for idx in 0..pts {
            let mode = self.grid.mode_of_index(idx);
            if self.grid.is_nyquist(&mode) {
                continue;
            }
            // Linear index of −ξ.
            let mut midx = 0usize;
            let mut rem = idx;
            let mut stride = 1usize;
            for _ in 0..self.grid.n_space {
                let k = rem % n;
                let mk = (n - k) % n;
                midx += mk * stride;
                rem /= n;
                stride *= n;
            }
            for c in 0..self.m {
                let d = (coeffs[c * pts + midx] - coeffs[c * pts + idx].conj()).norm();
                worst = worst.max(d / max_mag);
            }
        }
        worst
    }

    pub fn linear_combination(a: f64, fa: &TorusField, b: f64, fb: &TorusField) -> TorusField {
        assert_eq!(fa.grid, fb.grid);
        assert_eq!(fa.m, fb.m);
        let va = fa.values();
        let vb = fb.values();
        let out: Vec<f64> = va.iter().zip(vb).map(|(x, y)| a * x + b * y).collect();
        TorusField::from_values(fa.grid.clone(), fa.m, out)
    }

    /// Max pointwise magnitude over all components.
    pub fn max_abs(&self) -> f64 {
        self.values().iter().map(|v| v.abs()).fold(0.0f64, f64::max)
    }
}

/// Bessel potential `⟨∇⟩ˢ f`: multiplies `f̂(ξ)` by `(1+|ξ|²)^{s/2}`.
pub fn bessel_potential(f: &TorusField, s: f64) -> TorusField {
    if s == 0.0 {
        return f.clone();
    }
    f.fourier_multiplier(|mode| {
        let k2: f64 = mode.iter().map(|&m| (m * m) as f64).sum();
        (1.0 + k2).powf(s / 2.0)
    })
}

/// Sobolev norm `‖f‖_s = ‖⟨∇⟩ˢ f‖₀`, computed as a mode sum.
pub fn sobolev_norm(f: &TorusField, s: f64) -> f64 {
    let grid = f.grid();
    let pts = grid.num_points();
    let norm = (2.0 * std::f64::consts::PI).powi(grid.n_space() as i32);
    let coeffs = f.coeffs();
    let mut acc = 0.0;
    for idx in 0..pts {
        let mode = grid.mode_of_index(idx);
        if grid.is_nyquist(&mode) {
            continue;
        }
        let k2: f64 = mode.iter().map(|&m| (m * m) as f64).sum();
        let w = (1.0 + k2).powf(s);
        for c in 0..f.m() {
            acc += w * coeffs[c * pts + idx].norm_sqr();
        }
    }
    (acc / norm).sqrt()
}

/// Spectral derivative `∂_i f` with the dealiasing mask applied.
pub fn spectral_derivative(f: &TorusField, axis: usize) -> TorusField {
    assert!(axis < f.grid().n_space());
    let grid = f.grid().clone();
    f.fourier_multiplier_complex(move |mode| {
        if grid.in_dealias_band(mode) {
            Complex64::new(0.0, mode[axis] as f64)
        } else {
            Complex64::default()
        }
    })
}

/// Energy fraction of `u` outside the dealias band, `‖(1−mask)u‖_s/‖u‖_s`.
pub fn tail_fraction(u: &TorusField, s: f64) -> f64 {
    let total = sobolev_norm(u, s);
    if total == 0.0 {
        return 0.0;
    }
    let grid = u.grid().clone();
    let tail = u.fourier_multiplier(move |mode| if grid.in_dealias_band(mode) { 0.0 } else { 1.0 });
    sobolev_norm(&tail, s) / total
}

/// Evaluates the coefficient matrices `Aⁱ(t,x,v(x))` at every grid point.
fn coeff_tables(
    v: &TorusField,
    sys: &SystemDef,
    t: f64,
) -> Result<Vec<Vec<DMatrix<f64>>>, SpectralError> {
    let grid = v.grid();
    let pts = grid.num_points();
    let mut tables = Vec::with_capacity(pts);
    for j in 0..pts {
        let x = grid.point(j);
        let state = v.state_at(j);
        if !sys.domain.contains(&state) {
            return Err(SpectralError::StateOutsideDomain { x });
        }
        let mut per_dir = Vec::with_capacity(sys.n_space);
        for i in 0..sys.n_space {
            let a = sys
                .coeff(t, &x, &state, i)
                .map_err(|e| SpectralError::SymbolFailure { x: x.clone(), xi: vec![], source: e.into() })?;
            per_dir.push(a);
        }
        tables.push(per_dir);
    }
    Ok(tables)
}

fn symmetrizer_at(
    coeffs_at_point: &[DMatrix<f64>],
    m: usize,
    mode: &[i64],
    tols: &ToleranceSet,
) -> Result<DMatrix<f64>, SymbolError> {
    if mode.iter().all(|&k| k == 0) {
        return Ok(DMatrix::identity(m, m));
    }
    let mut a = DMatrix::zeros(m, m);
    for (i, &k) in mode.iter().enumerate() {
        if k != 0 {
            a += &coeffs_at_point[i] * k as f64;
        }
    }
    let es = symbol::eigendecompose(&a, tols)?;
    Ok(symbol::build_symmetrizer(&es))
}

/// Direct and adjoint quantizations computed in one sweep over modes.
struct QuantizationPass {
    direct: Vec<f64>,
    adjoint: Vec<f64>,
}

fn quantization_pass(
    v: &TorusField,
    f: &TorusField,
    sys: &SystemDef,
    t: f64,
    tols: &ToleranceSet,
) -> Result<QuantizationPass, SpectralError> {
    let grid = f.grid();
    if v.grid() != grid {
        return Err(SpectralError::GridMismatch);
    }
    if !f.is_finite() || !v.is_finite() {
        return Err(SpectralError::NonFiniteField);
    }
    let m = f.m();
    let pts = grid.num_points();
    let nsp = grid.n_space();
    let two_pi_n = (2.0 * std::f64::consts::PI).powi(nsp as i32);
    let weight = grid.spacing().powi(nsp as i32);
    let tables = coeff_tables(v, sys, t)?;

    let fc = f.coeffs();
    let fv = f.values();
    let modes = grid.dealias_modes();

    let mut direct_acc = vec![Complex64::default(); m * pts];
    // ĝ(ξ) for the adjoint: forward transform with P applied at the source point.
    let mut adjoint_hat = vec![Complex64::default(); m * modes.len()];

    let points: Vec<Vec<f64>> = (0..pts).map(|j| grid.point(j)).collect();

    for (mi, (midx, mode)) in modes.iter().enumerate() {
        let fhat: Vec<Complex64> = (0..m).map(|c| fc[c * pts + midx]).collect();
        let fhat_zero = fhat.iter().all(|z| z.norm_sqr() == 0.0);
        for j in 0..pts {
            let p = symmetrizer_at(&tables[j], m, mode, tols).map_err(|e| {
                SpectralError::SymbolFailure { x: points[j].clone(), xi: mode.clone(), source: e }
            })?;
            let phase: f64 = points[j]
                .iter()
                .zip(mode.iter())
                .map(|(x, &k)| x * k as f64)
                .sum();
            let e_plus = Complex64::from_polar(1.0, phase);
            if !fhat_zero {
                for r in 0..m {
                    let mut acc = Complex64::default();
                    for c in 0..m {
                        acc += p[(r, c)] * fhat[c];
                    }
                    direct_acc[r * pts + j] += e_plus * acc;
                }
            }
            // Adjoint accumulates P(x_k, ξ) f(x_k) inside the forward transform.
            let e_minus = e_plus.conj();
            for r in 0..m {
                let mut acc = 0.0;
                for c in 0..m {
                    acc += p[(r, c)] * fv[c * pts + j];
                }
                adjoint_hat[r * modes.len() + mi] += e_minus * (acc * weight);
            }
        }
    }

    // Inverse transform of the adjoint accumulator.
    let mut adjoint_acc = vec![Complex64::default(); m * pts];
    for (mi, (_, mode)) in modes.iter().enumerate() {
        for j in 0..pts {
            let phase: f64 = points[j].iter().zip(mode.iter()).map(|(x, &k)| x * k as f64).sum();
            let e_plus = Complex64::from_polar(1.0, phase);
            for r in 0..m {
                adjoint_acc[r * pts + j] += e_plus * adjoint_hat[r * modes.len() + mi];
            }
        }
    }

    let ref_mag = fv.iter().map(|x| x.abs()).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let mut max_imag = 0.0f64;
    let mut direct = vec![0.0; m * pts];
    let mut adjoint = vec![0.0; m * pts];
    for i in 0..m * pts {
        let zd = direct_acc[i] / two_pi_n;
        let za = adjoint_acc[i] / two_pi_n;
        max_imag = max_imag.max(zd.im.abs()).max(za.im.abs());
        direct[i] = zd.re;
        adjoint[i] = za.re;
    }
    let max_imag_rel = max_imag / ref_mag;
    if max_imag_rel > 1e-10 {
        return Err(SpectralError::NonRealOutput(max_imag_rel));
    }
    Ok(QuantizationPass { direct, adjoint })
}

/// The quantization `Op(SᵀS)f(x) = (2π)^{−N} Σ_ξ e^{ix·ξ} P(t,x,v(x),ξ) f̂(ξ)`
/// over retained (dealias-band) modes, with the `ξ = 0 ↦ I` convention.
pub fn apply_quantized_symmetrizer(
    v: &TorusField,
    f: &TorusField,
    sys: &SystemDef,
    t: f64,
    tols: &ToleranceSet,
) -> Result<TorusField, SpectralError> {
    let pass = quantization_pass(v, f, sys, t, tols)?;
    Ok(TorusField::from_values(f.grid().clone(), f.m(), pass.direct))
}

/// Discrete adjoint of [`apply_quantized_symmetrizer`] with respect to the
/// grid-quadrature L² inner product.
pub fn apply_quantized_symmetrizer_adjoint(
    v: &TorusField,
    f: &TorusField,
    sys: &SystemDef,
    t: f64,
    tols: &ToleranceSet,
) -> Result<TorusField, SpectralError> {
    let pass = quantization_pass(v, f, sys, t, tols)?;
    Ok(TorusField::from_values(f.grid().clone(), f.m(), pass.adjoint))
}

/// Symmetrized quantization `(Q + Q*)/2`, the self-adjoint operator used
/// inside the energy functional.
pub fn apply_symmetrized_quantization(
    v: &TorusField,
    f: &TorusField,
    sys: &SystemDef,
    t: f64,
    tols: &ToleranceSet,
) -> Result<TorusField, SpectralError> {
    let pass = quantization_pass(v, f, sys, t, tols)?;
    let out: Vec<f64> =
        pass.direct.iter().zip(&pass.adjoint).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(TorusField::from_values(f.grid().clone(), f.m(), out))
}

/// Grid-quadrature L² inner product of two fields.
pub fn inner_product(f: &TorusField, g: &TorusField) -> f64 {
    assert_eq!(f.grid(), g.grid());
    assert_eq!(f.m(), g.m());
    let w = f.grid().spacing().powi(f.grid().n_space() as i32);
    f.values().iter().zip(g.values()).map(|(a, b)| a * b).sum::<f64>() * w
}

/// Energy functional `(N_s u, u)` with `N_s = ⟨∇⟩ˢ 𝔖(v) ⟨∇⟩ˢ`, using the
/// symmetrized quantization so the value is a genuine quadratic form.
pub fn energy_functional(
    v: &TorusField,
    u: &TorusField,
    sys: &SystemDef,
    s: f64,
    t: f64,
    tols: &ToleranceSet,
) -> Result<f64, SpectralError> {
    let u_tilde = bessel_potential(u, s);
    let qu = apply_symmetrized_quantization(v, &u_tilde, sys, t, tols)?;
    Ok(inner_product(&qu, &u_tilde))
}

/// Writes a field snapshot in the flat binary layout:
/// magic `THYP`, version, N, n, m (u32 LE), time (f64 LE), then components
/// in C order as f64 LE.
pub fn write_snapshot(f: &TorusField, time: f64, w: &mut impl Write) -> Result<(), SpectralError> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(f.grid().n_space() as u32).to_le_bytes())?;
    w.write_all(&(f.grid().n() as u32).to_le_bytes())?;
    w.write_all(&(f.m() as u32).to_le_bytes())?;
    w.write_all(&time.to_le_bytes())?;
    for v in f.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot(r: &mut impl Read) -> Result<(TorusField, f64), SpectralError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(SpectralError::BadSnapshot("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != SNAPSHOT_VERSION {
        return Err(SpectralError::BadSnapshot(format!("unsupported version {version}")));
    }
    r.read_exact(&mut b4)?;
    let n_space = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let m = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let time = f64::from_le_bytes(b8);
    if n_space == 0 || !n.is_power_of_two() || n < 4 || m == 0 {
        return Err(SpectralError::BadSnapshot("bad dimensions".into()));
    }
    let grid = TorusGrid::new(n_space, n);
    let len = m * grid.num_points();
    let mut values = vec![0.0; len];
    for v in values.iter_mut() {
        r.read_exact(&mut b8)?;
        *v = f64::from_le_bytes(b8);
    }
    Ok((TorusField::from_values(grid, m, values), time))
}

/// Writes grid coordinates and component values as CSV with round-trip
/// exact (17 significant digit) floats.
pub fn write_field_csv(f: &TorusField, w: &mut impl Write) -> Result<(), SpectralError> {
    let nsp = f.grid().n_space();
    let mut header: Vec<String> = (0..nsp).map(|d| format!("x{d}")).collect();
    header.extend((0..f.m()).map(|c| format!("c{c}")));
    writeln!(w, "{}", header.join(","))?;
    let pts = f.grid().num_points();
    for j in 0..pts {
        let x = f.grid().point(j);
        let mut row: Vec<String> = x.iter().map(|v| format_float(*v)).collect();
        for c in 0..f.m() {
            row.push(format_float(f.value(c, j)));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// 17 significant digits: round-trip exact for f64.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

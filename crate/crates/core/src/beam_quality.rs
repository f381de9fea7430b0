//! Beam propagation factor M² of a sampled complex field, by two
//! independent routes:
//!
//! * **direct**: second moments of the field and of its transverse
//!   derivative in the source plane;
//! * **virtual caustic**: angular-spectrum propagation to a set of planes,
//!   a least-squares quadratic fit of the second moments against distance,
//!   and `M² = (4π/λ)·√(p0·p2 − p1²/4)`.
//!
//! In the direct route the bracket `E·∂E*/∂k − c.c.` is purely imaginary.
//! `A_k` is stored as the real number `Im{2∬(k−⟨k⟩) E ∂E*/∂k}` and the
//! mean-tilt term of `B_k` enters with a negative sign, so that
//! `M_k² = √(4 B_k σ_k² − A_k²)`. A Gaussian gives exactly 1 and a linear
//! phase tilt leaves every moment unchanged.
//!
//! All integrals are Riemann sums on the sampling grid.

use std::f64::consts::PI;
use std::ops::Add;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{frequencies, transpose, SquareFft};
use crate::field::ComplexField;

/// Largest admissible border-to-peak intensity ratio.
pub const CONTAINMENT_LIMIT: f64 = 1e-6;
/// Linear zero-padding factor applied before free-space propagation.
pub const VCM_PADDING: usize = 2;
/// Default number of caustic planes.
pub const VCM_PLANES: usize = 21;
pub const MIN_VCM_PLANES: usize = 10;
/// Largest admissible RMS fit residual relative to the mean second moment.
pub const FIT_RESIDUAL_LIMIT: f64 = 1e-4;
const RADICAND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    fn name(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
        }
    }
}

/// Second-moment quantities along one transverse axis of a unit-power field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisMoments {
    /// ⟨k⟩ in μm.
    pub centroid: f64,
    /// σ_k² in μm².
    pub sigma2: f64,
    /// Dimensionless, the imaginary part of the twist integral.
    pub a: f64,
    /// μm⁻², after the mean-tilt correction.
    pub b: f64,
}

impl AxisMoments {
    pub fn radicand(&self) -> f64 {
        4.0 * self.b * self.sigma2 - self.a * self.a
    }

    pub fn m2(&self, axis: Axis) -> Result<f64> {
        let r = self.radicand();
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("M² radicand on axis {}", axis.name())));
        }
        if r < -RADICAND_SLACK {
            return Err(Error::NegativeRadicand {
                axis: axis.name(),
                radicand: r,
            });
        }
        Ok(r.max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub x: AxisMoments,
    pub y: AxisMoments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum M2Method {
    Direct,
    Vcm,
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct M2Result {
    pub m2_x: f64,
    pub m2_y: f64,
    pub m2_eff: f64,
    pub method: M2Method,
}

impl M2Result {
    pub fn new(m2_x: f64, m2_y: f64, method: M2Method) -> Result<Self> {
        Ok(M2Result {
            m2_x,
            m2_y,
            m2_eff: m2_effective(m2_x, m2_y)?,
            method,
        })
    }
}

/// Quadratic fit `σ²(z) = p0 + p1 z + p2 z²` of a caustic scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausticFit {
    pub z: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    /// RMS residual divided by the mean of `sigma2`.
    pub relative_residual: f64,
}

impl CausticFit {
    pub fn discriminant(&self) -> f64 {
        self.p0 * self.p2 - 0.25 * self.p1 * self.p1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcmResult {
    pub m2: M2Result,
    pub fit_x: CausticFit,
    pub fit_y: CausticFit,
}

/// Brightest border pixel divided by the brightest pixel, in intensity.
pub fn edge_ratio(field: &ComplexField) -> f64 {
    let n = field.grid.n;
    let v = &field.values;
    let peak = v.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let mut edge = 0.0_f64;
    for i in 0..n {
        for idx in [i, (n - 1) * n + i, i * n, i * n + n - 1] {
            edge = edge.max(v[idx].norm_sqr());
        }
    }
    edge / peak
}

fn check_contained(field: &ComplexField) -> Result<()> {
    let ratio = edge_ratio(field);
    if !(ratio < CONTAINMENT_LIMIT) {
        return Err(Error::FieldNotContained { ratio });
    }
    Ok(())
}

/// `∂E/∂k` by frequency-domain differentiation. The field must have
/// decayed to below [`CONTAINMENT_LIMIT`] of its peak intensity on the
/// window border.
pub fn spectral_derivative(field: &ComplexField, axis: Axis) -> Result<ComplexField> {
    check_contained(field)?;
    Ok(derivative_unchecked(field, axis))
}

pub(crate) fn derivative_unchecked(field: &ComplexField, axis: Axis) -> ComplexField {
    let n = field.grid.n;
    let h = field.grid.spacing();
    let values = match axis {
        Axis::X => row_derivative(&field.values, n, h),
        Axis::Y => {
            let mut t = field.values.clone();
            transpose(&mut t, n);
            let mut d = row_derivative(&t, n, h);
            transpose(&mut d, n);
            d
        }
    };
    ComplexField {
        grid: field.grid,
        values,
    }
}

/// Derivative along every row. The transform is taken of each row and of
/// its mirror image and the two results are averaged, so mirroring the
/// input mirrors the output with its sign flipped, bit for bit.
fn row_derivative(values: &[Complex64], n: usize, spacing: f64) -> Vec<Complex64> {
    let mut mult: Vec<Complex64> = frequencies(n, spacing)
        .into_iter()
        .map(|f| Complex64::new(0.0, 2.0 * PI * f))
        .collect();
    if n.is_multiple_of(2) {
        // The Nyquist bin has no odd-symmetric partner.
        mult[n / 2] = Complex64::default();
    }
    let fft = SquareFft::new(n);
    let mut fwd = values.to_vec();
    let mut rev: Vec<Complex64> = values
        .chunks_exact(n)
        .flat_map(|row| row.iter().rev().copied())
        .collect();
    for data in [&mut fwd, &mut rev] {
        fft.rows_forward(data);
        for row in data.chunks_exact_mut(n) {
            row.iter_mut().zip(&mult).for_each(|(v, m)| *v *= m);
        }
        fft.rows_inverse(data);
    }
    for (row, mirrored) in fwd.chunks_exact_mut(n).zip(rev.chunks_exact(n)) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mirrored[n - 1 - j]) * 0.5;
        }
    }
    fwd
}

/// Sum of `f(r, c)` over an `n × n` array, adding mirrored rows and
/// mirrored columns pairwise. Reversing the row or the column order leaves
/// the result unchanged, or negates it exactly when `f` is odd under that
/// reversal.
fn mirrored_sum<T, F>(n: usize, f: F) -> T
where
    T: Copy + Default + Add<Output = T>,
    F: Fn(usize, usize) -> T,
{
    let row = |r: usize| {
        let mut s = T::default();
        for c in 0..n / 2 {
            s = s + (f(r, c) + f(r, n - 1 - c));
        }
        if n % 2 == 1 {
            s = s + f(r, n / 2);
        }
        s
    };
    let mut s = T::default();
    for r in 0..n / 2 {
        s = s + (row(r) + row(n - 1 - r));
    }
    if n % 2 == 1 {
        s = s + row(n / 2);
    }
    s
}

#[derive(Debug, Clone, Copy, Default)]
struct RowSums {
    sigma2: f64,
    twist: Complex64,
    tilt: Complex64,
    grad2: f64,
}

impl Add for RowSums {
    type Output = RowSums;

    fn add(self, o: RowSums) -> RowSums {
        RowSums {
            sigma2: self.sigma2 + o.sigma2,
            twist: self.twist + o.twist,
            tilt: self.tilt + o.tilt,
            grad2: self.grad2 + o.grad2,
        }
    }
}

/// Moments along the row direction of `e` with row derivative `d`, scaled
/// to unit power. The cell area cancels.
fn row_moments(e: &[Complex64], d: &[Complex64], coords: &[f64]) -> Result<AxisMoments> {
    let n = coords.len();
    let at = |r: usize, c: usize| r * n + c;
    let power = mirrored_sum(n, |r, c| e[at(r, c)].norm_sqr());
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::ZeroField);
    }
    let centroid = mirrored_sum(n, |r, c| coords[c] * e[at(r, c)].norm_sqr()) / power;
    let s = mirrored_sum(n, |r, c| {
        let (ev, dv) = (e[at(r, c)], d[at(r, c)]);
        let k = coords[c] - centroid;
        let cross = ev * dv.conj();
        RowSums {
            sigma2: k * k * ev.norm_sqr(),
            twist: cross * k,
            tilt: cross,
            grad2: dv.norm_sqr(),
        }
    });
    let tilt_im = s.tilt.im / power;
    Ok(AxisMoments {
        centroid,
        sigma2: s.sigma2 / power,
        a: 2.0 * s.twist.im / power,
        b: s.grad2 / power - tilt_im * tilt_im,
    })
}

/// Centroids, second moments and the twist/divergence integrals of the
/// field after scaling it to unit power.
///
/// The y quantities are the x quantities of the transposed array, and all
/// sums are mirror-paired, so a quarter turn of the array swaps the two
/// axes exactly.
pub fn moments(field: &ComplexField) -> Result<MomentSet> {
    check_contained(field)?;
    let n = field.grid.n;
    let h = field.grid.spacing();
    let coords = field.grid.coords();
    let dx = row_derivative(&field.values, n, h);
    let x = row_moments(&field.values, &dx, &coords)?;
    let mut t = field.values.clone();
    transpose(&mut t, n);
    let dy = row_derivative(&t, n, h);
    let y = row_moments(&t, &dy, &coords)?;
    Ok(MomentSet { x, y })
}

/// M² from the source-plane field alone.
pub fn m2_direct(field: &ComplexField) -> Result<M2Result> {
    let m = moments(field)?;
    M2Result::new(m.x.m2(Axis::X)?, m.y.m2(Axis::Y)?, M2Method::Direct)
}

/// Spectrum of a field together with its longitudinal wavenumbers.
struct AngularSpectrum {
    n: usize,
    spectrum: Vec<Complex64>,
    /// `k_z` for propagating components, `None` for evanescent ones.
    kz: Vec<Option<f64>>,
    fx: Vec<f64>,
    fft: SquareFft,
}

impl AngularSpectrum {
    fn new(field: &ComplexField, wavelength: f64) -> Result<Self> {
        if !(wavelength > 0.0) || !wavelength.is_finite() {
            return Err(Error::InvalidInput(format!("wavelength must be positive (got {wavelength})")));
        }
        let n = field.grid.n;
        let fx = frequencies(n, field.grid.spacing());
        let k = 2.0 * PI / wavelength;
        let mut kz = Vec::with_capacity(n * n);
        for &fy in &fx {
            for &fxv in &fx {
                let kt2 = (2.0 * PI) * (2.0 * PI) * (fxv * fxv + fy * fy);
                let kz2 = k * k - kt2;
                kz.push(if kz2 > 0.0 { Some(kz2.sqrt()) } else { None });
            }
        }
        let fft = SquareFft::new(n);
        let mut spectrum = field.values.clone();
        fft.forward_2d(&mut spectrum);
        Ok(AngularSpectrum {
            n,
            spectrum,
            kz,
            fx,
            fft,
        })
    }

    fn field_at(&self, dz: f64) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = self
            .spectrum
            .iter()
            .zip(&self.kz)
            .map(|(s, kz)| match kz {
                Some(kz) => s * Complex64::from_polar(1.0, kz * dz),
                None => Complex64::default(),
            })
            .collect();
        self.fft.inverse_2d(&mut data);
        data
    }

    /// Paraxial far-field growth rate `λ²·Var(f_k)` of σ_k²(z), per axis.
    fn spread_rates(&self, wavelength: f64) -> (f64, f64) {
        let n = self.n;
        let (mut w, mut mx, mut my, mut mxx, mut myy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, (s, kz)) in self.spectrum.iter().zip(&self.kz).enumerate() {
            if kz.is_none() {
                continue;
            }
            let p = s.norm_sqr();
            let (fx, fy) = (self.fx[i % n], self.fx[i / n]);
            w += p;
            mx += p * fx;
            my += p * fy;
            mxx += p * fx * fx;
            myy += p * fy * fy;
        }
        if w == 0.0 {
            return (0.0, 0.0);
        }
        let var_x = mxx / w - (mx / w).powi(2);
        let var_y = myy / w - (my / w).powi(2);
        let l2 = wavelength * wavelength;
        (l2 * var_x, l2 * var_y)
    }
}

/// Angular-spectrum propagation by `dz` (μm): the spectrum is multiplied
/// by `exp(i·dz·√(k² − k_x² − k_y²))` and evanescent components are
/// dropped. The caller pads the window; a propagated beam whose border
/// intensity exceeds [`CONTAINMENT_LIMIT`] of its peak is rejected.
pub fn propagate(field: &ComplexField, dz: f64, wavelength: f64) -> Result<ComplexField> {
    if dz == 0.0 {
        return Ok(field.clone());
    }
    if !dz.is_finite() {
        return Err(Error::InvalidInput(format!("propagation distance {dz}")));
    }
    let spectrum = AngularSpectrum::new(field, wavelength)?;
    let out = ComplexField {
        grid: field.grid,
        values: spectrum.field_at(dz),
    };
    let ratio = edge_ratio(&out);
    if !(ratio < CONTAINMENT_LIMIT) {
        return Err(Error::WindowOverflow { z: dz, ratio });
    }
    Ok(out)
}

fn second_moments(values: &[Complex64], coords: &[f64]) -> (f64, f64) {
    let n = coords.len();
    let (mut w, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (i, v) in values.iter().enumerate() {
        let p = v.norm_sqr();
        w += p;
        sx += p * coords[i % n];
        sy += p * coords[i / n];
    }
    let (cx, cy) = (sx / w, sy / w);
    let (mut vx, mut vy) = (0.0, 0.0);
    for (i, v) in values.iter().enumerate() {
        let p = v.norm_sqr();
        vx += p * (coords[i % n] - cx).powi(2);
        vy += p * (coords[i / n] - cy).powi(2);
    }
    (vx / w, vy / w)
}

fn padded_spectrum(field: &ComplexField, wavelength: f64) -> Result<(ComplexField, AngularSpectrum)> {
    let padded = field.normalized()?.zero_pad(VCM_PADDING)?;
    let spectrum = AngularSpectrum::new(&padded, wavelength)?;
    Ok((padded, spectrum))
}

fn planes_for(padded: &ComplexField, spectrum: &AngularSpectrum, wavelength: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::InvalidInput("need at least two caustic planes".into()));
    }
    let (sx, sy) = second_moments(&padded.values, &padded.grid.coords());
    let (rx, ry) = spectrum.spread_rates(wavelength);
    // Distance over which σ_k² doubles, for the faster-spreading axis.
    let span = [(sx, rx), (sy, ry)]
        .iter()
        .filter(|(_, r)| *r > 0.0)
        .map(|(s, r)| (s / r).sqrt())
        .fold(f64::INFINITY, f64::min);
    if !span.is_finite() || span <= 0.0 {
        return Err(Error::InvalidInput("field has no measurable divergence".into()));
    }
    let step = 2.0 * span / (count - 1) as f64;
    Ok((0..count).map(|j| -span + j as f64 * step).collect())
}

/// Caustic scan positions: `count` planes spread uniformly over ± one
/// Rayleigh range, estimated from the source-plane width and the
/// spatial-frequency spread of the field.
pub fn caustic_planes(field: &ComplexField, wavelength: f64, count: usize) -> Result<Vec<f64>> {
    let (padded, spectrum) = padded_spectrum(field, wavelength)?;
    planes_for(&padded, &spectrum, wavelength, count)
}

/// Virtual caustic measurement over the given plane offsets (μm).
pub fn m2_vcm(field: &ComplexField, wavelength: f64, planes: &[f64]) -> Result<VcmResult> {
    let (padded, spectrum) = padded_spectrum(field, wavelength)?;
    vcm_scan(&padded, &spectrum, wavelength, planes)
}

/// Virtual caustic measurement with [`VCM_PLANES`] automatically placed
/// planes.
pub fn m2_vcm_auto(field: &ComplexField, wavelength: f64) -> Result<VcmResult> {
    let (padded, spectrum) = padded_spectrum(field, wavelength)?;
    let planes = planes_for(&padded, &spectrum, wavelength, VCM_PLANES)?;
    vcm_scan(&padded, &spectrum, wavelength, &planes)
}

fn vcm_scan(
    padded: &ComplexField,
    spectrum: &AngularSpectrum,
    wavelength: f64,
    planes: &[f64],
) -> Result<VcmResult> {
    if planes.len() < MIN_VCM_PLANES {
        return Err(Error::InvalidInput(format!(
            "caustic scan needs at least {MIN_VCM_PLANES} planes (got {})",
            planes.len()
        )));
    }
    if planes.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidInput("non-finite plane position".into()));
    }
    let coords = padded.grid.coords();
    let n = padded.grid.n;
    let per_plane: Vec<Result<(f64, f64)>> = planes
        .par_iter()
        .map(|&z| {
            let values = spectrum.field_at(z);
            let plane = ComplexField {
                grid: padded.grid,
                values,
            };
            let ratio = edge_ratio(&plane);
            if !(ratio < CONTAINMENT_LIMIT) {
                return Err(Error::WindowOverflow { z, ratio });
            }
            debug_assert_eq!(plane.values.len(), n * n);
            Ok(second_moments(&plane.values, &coords))
        })
        .collect();
    let mut sx = Vec::with_capacity(planes.len());
    let mut sy = Vec::with_capacity(planes.len());
    for r in per_plane {
        let (x, y) = r?;
        sx.push(x);
        sy.push(y);
    }
    let fit_x = fit_caustic(planes, &sx, Axis::X)?;
    let fit_y = fit_caustic(planes, &sy, Axis::Y)?;
    let scale = 4.0 * PI / wavelength;
    let m2 = M2Result::new(
        scale * fit_x.discriminant().sqrt(),
        scale * fit_y.discriminant().sqrt(),
        M2Method::Vcm,
    )?;
    Ok(VcmResult { m2, fit_x, fit_y })
}

/// Least-squares quadratic through `(z_j, σ²_j)`.
fn fit_caustic(z: &[f64], sigma2: &[f64], axis: Axis) -> Result<CausticFit> {
    let fail = |reason: String| Error::CausticFit {
        axis: axis.name(),
        reason,
    };
    let zscale = z.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if zscale == 0.0 {
        return Err(fail("all planes coincide".into()));
    }
    // Normal equations in t = z / zscale.
    let mut moments = [0.0_f64; 5];
    let mut rhs = [0.0_f64; 3];
    for (&zj, &sj) in z.iter().zip(sigma2) {
        let t = zj / zscale;
        let mut tp = 1.0;
        for (k, m) in moments.iter_mut().enumerate() {
            *m += tp;
            if k < 3 {
                rhs[k] += sj * tp;
            }
            tp *= t;
        }
    }
    let mut a = [[0.0_f64; 3]; 3];
    for (r, row) in a.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = moments[r + c];
        }
    }
    let q = solve3(a, rhs).ok_or_else(|| fail("singular normal equations".into()))?;
    let (p0, p1, p2) = (q[0], q[1] / zscale, q[2] / (zscale * zscale));

    let mean = sigma2.iter().sum::<f64>() / sigma2.len() as f64;
    let rms = (z
        .iter()
        .zip(sigma2)
        .map(|(&zj, &sj)| (sj - (p0 + p1 * zj + p2 * zj * zj)).powi(2))
        .sum::<f64>()
        / z.len() as f64)
        .sqrt();
    let fit = CausticFit {
        z: z.to_vec(),
        sigma2: sigma2.to_vec(),
        p0,
        p1,
        p2,
        relative_residual: rms / mean,
    };
    if !(fit.p2 > 0.0) {
        return Err(fail(format!("non-diverging caustic (p2 = {p2:e})")));
    }
    if !(fit.discriminant() > 0.0) {
        return Err(fail(format!("discriminant {:e} <= 0", fit.discriminant())));
    }
    if !(fit.relative_residual < FIT_RESIDUAL_LIMIT) {
        return Err(fail(format!(
            "relative residual {:e} exceeds {FIT_RESIDUAL_LIMIT:e}; propagation window too small",
            fit.relative_residual
        )));
    }
    Ok(fit)
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = ((row + 1)..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Geometric mean `√(M_x² · M_y²)`.
pub fn m2_effective(m2_x: f64, m2_y: f64) -> Result<f64> {
    if !(m2_x > 0.0 && m2_y > 0.0) || !m2_x.is_finite() || !m2_y.is_finite() {
        return Err(Error::InvalidInput(format!(
            "M² components must be positive (got {m2_x}, {m2_y})"
        )));
    }
    Ok((m2_x * m2_y).sqrt())
}

/// `|predicted − label| / label`.
pub fn prediction_error(predicted: f64, label: f64) -> Result<f64> {
    if !(label > 0.0) || !label.is_finite() {
        return Err(Error::InvalidInput(format!("label must be positive (got {label})")));
    }
    if !predicted.is_finite() {
        return Err(Error::NonFinite("predicted M²".into()));
    }
    Ok((predicted - label).abs() / label)
}

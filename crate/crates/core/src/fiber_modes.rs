//! Weakly guiding LP modes of a step-index fiber.
//!
//! Modes are returned sorted by the core eigenvalue `u` (largest effective
//! index first), with each `l >= 1` solution split into an even (`cos lφ`)
//! and an odd (`sin lφ`) member. For the 25 μm / NA 0.08 fiber at 1064 nm
//! this gives LP01, LP11e, LP11o, LP21e, LP21o, LP02, LP31e, LP31o, LP12e,
//! LP12o. The azimuth φ is measured from the +x axis.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{bessel_j_orders, bessel_k_orders};

const SCAN_STEP: f64 = 0.005;
const BISECT_TOL: f64 = 1e-13;
const RESIDUAL_TOL: f64 = 1e-8;

/// Physical fiber and source parameters. Lengths are in micrometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberSpec {
    pub core_radius_um: f64,
    pub numerical_aperture: f64,
    pub wavelength_um: f64,
}

impl FiberSpec {
    pub fn new(core_radius_um: f64, numerical_aperture: f64, wavelength_um: f64) -> Result<Self> {
        let spec = FiberSpec {
            core_radius_um,
            numerical_aperture,
            wavelength_um,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The large-mode-area fiber used for all synthetic data: 25 μm core
    /// diameter, NA 0.08, 1064 nm. Supports ten LP modes.
    pub fn reference() -> Self {
        FiberSpec {
            core_radius_um: 12.5,
            numerical_aperture: 0.08,
            wavelength_um: 1.064,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.core_radius_um > 0.0
            && self.core_radius_um.is_finite()
            && self.numerical_aperture > 0.0
            && self.numerical_aperture < 1.0
            && self.wavelength_um > 0.0
            && self.wavelength_um.is_finite();
        if !ok {
            return Err(Error::InvalidInput(format!(
                "fiber spec requires a > 0, 0 < NA < 1, λ > 0 (got a = {}, NA = {}, λ = {})",
                self.core_radius_um, self.numerical_aperture, self.wavelength_um
            )));
        }
        Ok(())
    }

    pub fn v_number(&self) -> f64 {
        v_number(self)
    }
}

/// Normalized frequency `V = 2π a NA / λ`.
pub fn v_number(spec: &FiberSpec) -> f64 {
    2.0 * PI * spec.core_radius_um * spec.numerical_aperture / spec.wavelength_um
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

/// A solved guided mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpMode {
    pub l: usize,
    pub m: usize,
    pub parity: Parity,
    pub u: f64,
    pub w: f64,
}

impl LpMode {
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for LpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.l, self.parity) {
            (0, _) => write!(f, "LP0{}", self.m),
            (l, Parity::Even) => write!(f, "LP{}{}e", l, self.m),
            (l, Parity::Odd) => write!(f, "LP{}{}o", l, self.m),
        }
    }
}

/// Square, uniform, cell-centred sampling grid centred on the fiber axis.
///
/// Sample `i` sits at `(i + 1/2)·Δ − half_width`, so the grid is symmetric
/// under `x → −x` and under 90° rotation. Fields are stored row-major with
/// rows along y and columns along x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub half_width: f64,
}

impl Grid {
    pub const MIN_SAMPLES: usize = 32;

    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < Self::MIN_SAMPLES || !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::InvalidInput(format!(
                "grid needs n >= {} and a positive half width (got n = {n}, half width = {half_width})",
                Self::MIN_SAMPLES
            )));
        }
        Ok(Grid { n, half_width })
    }

    /// Grid for rendered intensity images: the window spans three core radii
    /// on each side of the axis.
    pub fn image(spec: &FiberSpec, n: usize) -> Result<Self> {
        Grid::new(n, 3.0 * spec.core_radius_um)
    }

    /// Grid for M² evaluation. Five core radii keep the evanescent tail of
    /// the highest mode of the reference fiber below 1e-6 of the peak
    /// intensity at the window edge.
    pub fn physics(spec: &FiberSpec) -> Result<Self> {
        Grid::new(128, 5.0 * spec.core_radius_um)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        let d = self.spacing();
        d * d
    }

    /// Cell-centre coordinate; `coord(n - 1 - i) == -coord(i)` exactly.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - (self.n as f64 - 1.0) / 2.0) * self.spacing()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub(crate) fn same_as(&self, other: &Grid) -> bool {
        self.n == other.n && (self.half_width - other.half_width).abs() <= 1e-12 * self.half_width
    }
}

/// Pole-free form of the weak-guidance dispersion relation,
/// `u J_{l+1}(u) K_l(w) − w K_{l+1}(w) J_l(u)`. Its zeros coincide with
/// those of `u J_{l+1}/J_l − w K_{l+1}/K_l`.
fn dispersion(l: usize, u: f64, v: f64) -> (f64, f64, f64) {
    let w = (v * v - u * u).max(0.0).sqrt();
    let j = bessel_j_orders(l + 1, u);
    let k = bessel_k_orders(l + 1, w);
    let core = u * j[l + 1] * k[l];
    let clad = w * k[l + 1] * j[l];
    (core - clad, core, clad)
}

/// Relative mismatch of the two sides of the dispersion relation,
/// normalized by the larger side.
pub fn dispersion_residual(l: usize, u: f64, v: f64) -> f64 {
    let (g, core, clad) = dispersion(l, u, v);
    let scale = core.abs().max(clad.abs());
    if scale == 0.0 {
        return 0.0;
    }
    g.abs() / scale
}

fn radial_roots(l: usize, v: f64) -> Result<Vec<f64>> {
    let steps = (v / SCAN_STEP).ceil() as usize;
    let h = v / steps as f64;
    // Stay strictly inside (0, V): w must remain positive.
    let top = v * (1.0 - 1e-10);
    let lattice = (1..=steps).map(|j| if j == steps { top } else { j as f64 * h });

    let mut roots = Vec::new();
    let mut prev_u = h * 1e-3;
    let mut prev_g = dispersion(l, prev_u, v).0;
    for u in lattice {
        let g = dispersion(l, u, v).0;
        if g == 0.0 {
            roots.push(u);
        } else if prev_g != 0.0 && g.signum() != prev_g.signum() {
            let root = bisect(l, prev_u, u, prev_g, v)?;
            roots.push(root);
        }
        prev_u = u;
        prev_g = g;
    }
    Ok(roots)
}

fn bisect(l: usize, mut lo: f64, mut hi: f64, mut g_lo: f64, v: f64) -> Result<f64> {
    for _ in 0..200 {
        if hi - lo < BISECT_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let g_mid = dispersion(l, mid, v).0;
        if g_mid == 0.0 {
            return Ok(mid);
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    if hi - lo > 1e-10 {
        return Err(Error::RootRefinement {
            l,
            m: 0,
            reason: format!("bracket [{lo}, {hi}] did not shrink below 1e-10"),
        });
    }
    let residual = dispersion_residual(l, root, v);
    if !residual.is_finite() || residual > RESIDUAL_TOL {
        return Err(Error::RootRefinement {
            l,
            m: 0,
            reason: format!("sign change at u = {root} is not a root (residual {residual:e})"),
        });
    }
    Ok(root)
}

/// Finds every guided LP mode and returns them in canonical order.
pub fn solve_modes(spec: &FiberSpec) -> Result<Vec<LpMode>> {
    spec.validate()?;
    let v = spec.v_number();
    let mut found: Vec<(f64, usize, usize)> = Vec::new();
    for l in 0.. {
        let roots = radial_roots(l, v).map_err(|e| match e {
            Error::RootRefinement { reason, .. } => Error::RootRefinement {
                l,
                m: found.iter().filter(|r| r.1 == l).count() + 1,
                reason,
            },
            other => other,
        })?;
        if roots.is_empty() {
            // Cutoffs increase with l, so no higher order can be guided.
            break;
        }
        for (i, u) in roots.into_iter().enumerate() {
            found.push((u, l, i + 1));
        }
    }
    if found.is_empty() {
        return Err(Error::NoGuidedMode { v });
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut modes = Vec::with_capacity(2 * found.len());
    for (u, l, m) in found {
        let w = (v * v - u * u).sqrt();
        modes.push(LpMode {
            l,
            m,
            parity: Parity::Even,
            u,
            w,
        });
        if l > 0 {
            modes.push(LpMode {
                l,
                m,
                parity: Parity::Odd,
                u,
                w,
            });
        }
    }
    Ok(modes)
}

/// A mode sampled on a grid, normalized to unit discrete power.
#[derive(Debug, Clone)]
pub struct ModeField {
    pub mode: LpMode,
    pub grid: Grid,
    pub values: Vec<f64>,
}

fn check_mode(mode: &LpMode, spec: &FiberSpec) -> Result<()> {
    let v = spec.v_number();
    let consistent = mode.u > 0.0
        && mode.u < v
        && mode.w > 0.0
        && (mode.u * mode.u + mode.w * mode.w - v * v).abs() <= 1e-8 * v * v
        && !(mode.l == 0 && mode.parity == Parity::Odd)
        && mode.m >= 1
        && dispersion_residual(mode.l, mode.u, v) < RESIDUAL_TOL;
    if consistent {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{mode} (u = {}, w = {}) is not a solved mode of a fiber with V = {v:.6}",
            mode.u, mode.w
        )))
    }
}

/// Unnormalized transverse profile, continuous at the core boundary.
fn raw_profile(mode: &LpMode, spec: &FiberSpec, grid: &Grid) -> Vec<f64> {
    let a = spec.core_radius_um;
    let l = mode.l;
    let j_edge = bessel_j_orders(l, mode.u)[l];
    let k_edge = bessel_k_orders(l, mode.w)[l];
    let coords = grid.coords();
    let mut out = Vec::with_capacity(grid.len());
    for &y in &coords {
        for &x in &coords {
            let r = x.hypot(y) / a;
            let radial = if r <= 1.0 {
                bessel_j_orders(l, mode.u * r)[l] / j_edge
            } else {
                bessel_k_orders(l, mode.w * r)[l] / k_edge
            };
            let phi = y.atan2(x);
            let angular = match mode.parity {
                Parity::Even => (l as f64 * phi).cos(),
                Parity::Odd => (l as f64 * phi).sin(),
            };
            out.push(radial * angular);
        }
    }
    out
}

/// Samples `mode` on `grid` and scales it to `Σ ψ² ΔxΔy = 1`.
pub fn mode_field(mode: &LpMode, spec: &FiberSpec, grid: &Grid) -> Result<ModeField> {
    spec.validate()?;
    check_mode(mode, spec)?;
    if grid.half_width < spec.core_radius_um {
        return Err(Error::InvalidInput(format!(
            "grid half width {} is smaller than the core radius {}",
            grid.half_width, spec.core_radius_um
        )));
    }
    let mut values = raw_profile(mode, spec, grid);
    let power: f64 = values.iter().map(|v| v * v).sum::<f64>() * grid.cell_area();
    let scale = 1.0 / power.sqrt();
    values.iter_mut().for_each(|v| *v *= scale);
    Ok(ModeField {
        mode: *mode,
        grid: *grid,
        values,
    })
}

/// Discrete power of the unnormalized profile (used for quadrature
/// convergence and power-capture checks).
pub fn raw_power(mode: &LpMode, spec: &FiberSpec, grid: &Grid) -> f64 {
    raw_profile(mode, spec, grid).iter().map(|v| v * v).sum::<f64>() * grid.cell_area()
}

/// Gram matrix of discrete inner products `Σ ψ_i ψ_j ΔxΔy`.
pub fn mode_orthogonality_check(fields: &[ModeField]) -> Result<Vec<Vec<f64>>> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidInput("no mode fields given".into()))?;
    if let Some(bad) = fields.iter().find(|f| !f.grid.same_as(&first.grid)) {
        return Err(Error::ShapeMismatch(format!(
            "{} is sampled on a different grid",
            bad.mode
        )));
    }
    let da = first.grid.cell_area();
    let k = fields.len();
    let mut gram = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let dot: f64 = fields[i]
                .values
                .iter()
                .zip(&fields[j].values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * da;
            gram[i][j] = dot;
            gram[j][i] = dot;
        }
    }
    Ok(gram)
}

/// The first `count` modes of a fiber sampled on a common grid.
#[derive(Debug, Clone)]
pub struct ModeBasis {
    pub grid: Grid,
    pub fields: Vec<ModeField>,
}

impl ModeBasis {
    pub fn new(spec: &FiberSpec, grid: Grid, count: usize) -> Result<Self> {
        let modes = solve_modes(spec)?;
        if count == 0 || count > modes.len() {
            return Err(Error::InvalidInput(format!(
                "requested {count} modes but the fiber guides {}",
                modes.len()
            )));
        }
        let fields = modes[..count]
            .iter()
            .map(|m| mode_field(m, spec, &grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModeBasis { grid, fields })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

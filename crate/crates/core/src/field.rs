//! Modal superposition, intensity rendering, modal-vector sampling and the
//! multiplicative detector-noise model.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::case::ModeCase;
use crate::error::{Error, Result};
use crate::fiber_modes::{Grid, ModeField};

const UNIT_POWER_TOL: f64 = 1e-9;

/// Modal amplitudes `ρ_n` and phases `θ_n`, with `Σ ρ_n² = 1` and
/// `θ_n ∈ [−π, π]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalVector {
    pub rho: Vec<f64>,
    pub theta: Vec<f64>,
}

impl ModalVector {
    pub fn new(rho: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        let mv = ModalVector { rho, theta };
        mv.validate()?;
        Ok(mv)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho.len() != self.theta.len() || self.rho.is_empty() {
            return Err(Error::InvalidInput(format!(
                "modal vector has {} amplitudes and {} phases",
                self.rho.len(),
                self.theta.len()
            )));
        }
        if self.rho.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidInput("amplitudes must be finite and >= 0".into()));
        }
        if self.theta.iter().any(|t| !(t.abs() <= PI)) {
            return Err(Error::InvalidInput("phases must lie in [-π, π]".into()));
        }
        let power: f64 = self.rho.iter().map(|r| r * r).sum();
        if (power - 1.0).abs() > UNIT_POWER_TOL {
            return Err(Error::InvalidInput(format!(
                "Σρ² = {power}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// Complex weights `ρ_n e^{iθ_n}`.
    pub fn coefficients(&self) -> Vec<Complex64> {
        self.rho
            .iter()
            .zip(&self.theta)
            .map(|(&r, &t)| Complex64::from_polar(r, t))
            .collect()
    }
}

/// Sampled complex scalar field on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub grid: Grid,
    pub values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {}×{} grid",
                values.len(),
                grid.n,
                grid.n
            )));
        }
        Ok(ComplexField { grid, values })
    }

    /// Samples `f(x, y)` at every grid point.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let coords = grid.coords();
        let mut values = Vec::with_capacity(grid.len());
        for &y in &coords {
            for &x in &coords {
                values.push(f(x, y));
            }
        }
        ComplexField { grid, values }
    }

    /// Discrete power `Σ |E|² ΔxΔy`.
    pub fn power(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_area()
    }

    pub fn normalized(&self) -> Result<Self> {
        let p = self.power();
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::ZeroField);
        }
        let s = 1.0 / p.sqrt();
        Ok(ComplexField {
            grid: self.grid,
            values: self.values.iter().map(|v| v * s).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Circular shift by whole cells (`dx` columns, `dy` rows).
    pub fn roll(&self, dx: isize, dy: isize) -> Self {
        let n = self.grid.n as isize;
        let mut values = vec![Complex64::default(); self.values.len()];
        for r in 0..n {
            for c in 0..n {
                let rr = (r + dy).rem_euclid(n);
                let cc = (c + dx).rem_euclid(n);
                values[(rr * n + cc) as usize] = self.values[(r * n + c) as usize];
            }
        }
        ComplexField {
            grid: self.grid,
            values,
        }
    }

    /// Rotation by +90° about the grid centre: `E'(x, y) = E(y, −x)`.
    pub fn rotate90(&self) -> Self {
        let n = self.grid.n;
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..n {
            for c in 0..n {
                values.push(self.values[(n - 1 - c) * n + r]);
            }
        }
        ComplexField {
            grid: self.grid,
            values,
        }
    }

    /// Centres the field in a window `factor` times wider, padding with zeros.
    pub fn zero_pad(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidInput("padding factor must be >= 1".into()));
        }
        let n = self.grid.n;
        let big = n * factor;
        let offset = (big - n) / 2;
        let grid = Grid::new(big, self.grid.half_width * factor as f64)?;
        let mut values = vec![Complex64::default(); big * big];
        for r in 0..n {
            let dst = (r + offset) * big + offset;
            values[dst..dst + n].copy_from_slice(&self.values[r * n..(r + 1) * n]);
        }
        Ok(ComplexField { grid, values })
    }
}

/// Nonnegative intensity raster on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl IntensityImage {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {}×{} grid",
                values.len(),
                grid.n,
                grid.n
            )));
        }
        Ok(IntensityImage { grid, values })
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// `E = Σ ρ_n e^{iθ_n} ψ_n`.
pub fn superpose(modes: &[ModeField], mv: &ModalVector) -> Result<ComplexField> {
    mv.validate()?;
    if modes.len() != mv.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} modes but {} modal coefficients",
            modes.len(),
            mv.len()
        )));
    }
    let grid = modes[0].grid;
    if let Some(bad) = modes.iter().find(|m| !m.grid.same_as(&grid)) {
        return Err(Error::ShapeMismatch(format!("{} is on a different grid", bad.mode)));
    }
    let mut values = vec![Complex64::default(); grid.len()];
    for (mode, coeff) in modes.iter().zip(mv.coefficients()) {
        for (acc, &psi) in values.iter_mut().zip(&mode.values) {
            *acc += coeff * psi;
        }
    }
    Ok(ComplexField { grid, values })
}

/// `I = |E|²`.
pub fn intensity(field: &ComplexField) -> IntensityImage {
    IntensityImage {
        grid: field.grid,
        values: field.values.iter().map(|v| v.norm_sqr()).collect(),
    }
}

/// Draws `a_n ~ U[0, 1)`, sets `ρ_n = a_n / ‖a‖`, and draws
/// `θ_n ~ U[−π, π)`. Amplitudes are drawn first, then phases.
pub fn sample_modal_vector<R: Rng + ?Sized>(case: ModeCase, rng: &mut R) -> ModalVector {
    let n = case.count();
    let rho = loop {
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            break a.into_iter().map(|v| v / norm).collect::<Vec<_>>();
        }
    };
    let theta = (0..n).map(|_| -PI + 2.0 * PI * rng.random::<f64>()).collect();
    ModalVector { rho, theta }
}

/// Multiplies each pixel by an independent `1 + σ·N(0, 1)` and clamps
/// negative results to zero.
pub fn add_noise<R: Rng + ?Sized>(
    img: &IntensityImage,
    sigma: f64,
    rng: &mut R,
) -> Result<IntensityImage> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("noise sigma must be >= 0 (got {sigma})")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let values = img
        .values
        .iter()
        .map(|&v| {
            let g: f64 = rng.sample(StandardNormal);
            (v * (1.0 + sigma * g)).max(0.0)
        })
        .collect();
    Ok(IntensityImage {
        grid: img.grid,
        values,
    })
}

/// Scales the image so its brightest pixel is 1.
pub fn normalize_for_input(img: &IntensityImage) -> Result<IntensityImage> {
    let peak = img.peak();
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::InvalidInput("image has no positive pixel".into()));
    }
    Ok(IntensityImage {
        grid: img.grid,
        values: img.values.iter().map(|v| (v / peak).clamp(0.0, 1.0)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber_modes::{FiberSpec, ModeBasis};
    use crate::seed::sample_rng;
    use proptest::prelude::{any, ProptestConfig};
    use proptest::{prop_assert, prop_assert_eq, proptest};

    fn basis(count: usize, n: usize) -> ModeBasis {
        let spec = FiberSpec::reference();
        ModeBasis::new(&spec, Grid::image(&spec, n).unwrap(), count).unwrap()
    }

    #[test]
    fn single_mode_superposition() {
        let b = basis(3, 64);
        let mv = ModalVector::new(vec![1.0, 0.0, 0.0], vec![2.1, -0.3, 1.0]).unwrap();
        let img = intensity(&superpose(&b.fields, &mv).unwrap());
        for (i, p) in img.values.iter().enumerate() {
            assert!((p - b.fields[0].values[i].powi(2)).abs() < 1e-15);
        }
    }

    #[test]
    fn phase_flip_mirrors_through_y_axis() {
        let b = basis(2, 64);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let plus = intensity(
            &superpose(&b.fields, &ModalVector::new(vec![r, r], vec![0.0, 0.0]).unwrap()).unwrap(),
        );
        let minus = intensity(
            &superpose(&b.fields, &ModalVector::new(vec![r, r], vec![0.0, PI]).unwrap()).unwrap(),
        );
        // Brute force: evaluate (ψ01 ± ψ11e)²/2 directly and compare x → −x.
        let n = 64;
        let (p01, p11) = (&b.fields[0].values, &b.fields[1].values);
        for row in 0..n {
            for col in 0..n {
                let i = row * n + col;
                let mirrored = row * n + (n - 1 - col);
                let brute_minus = 0.5 * (p01[i] - p11[i]).powi(2);
                assert!((minus.values[i] - brute_minus).abs() < 1e-12);
                assert!((plus.values[mirrored] - minus.values[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn intensity_basics() {
        let grid = Grid::new(32, 10.0).unwrap();
        let zero = ComplexField::new(grid, vec![Complex64::default(); grid.len()]).unwrap();
        assert!(intensity(&zero).values.iter().all(|&v| v == 0.0));

        let f = ComplexField::from_fn(grid, |x, y| Complex64::new((-(x * x + y * y) / 9.0).exp(), 0.0))
            .normalized()
            .unwrap();
        let sum: f64 = intensity(&f).values.iter().sum();
        assert!((sum - 1.0 / grid.cell_area()).abs() < 1e-9 * sum);

        let i_psi = ComplexField {
            grid,
            values: f.values.iter().map(|v| v * Complex64::i()).collect(),
        };
        assert_eq!(intensity(&i_psi), intensity(&f));
    }

    #[test]
    fn superpose_rejects_mismatch() {
        let b = basis(3, 32);
        let mv = ModalVector::new(vec![0.6, 0.8], vec![0.0, 0.0]).unwrap();
        assert!(superpose(&b.fields, &mv).is_err());
        let other = basis(1, 64);
        let mixed = vec![b.fields[0].clone(), other.fields[0].clone()];
        assert!(superpose(&mixed, &mv).is_err());
    }

    #[test]
    fn modal_vector_validation() {
        assert!(ModalVector::new(vec![0.6, 0.8], vec![0.0]).is_err());
        assert!(ModalVector::new(vec![0.6, 0.6], vec![0.0, 0.0]).is_err());
        assert!(ModalVector::new(vec![0.6, 0.8], vec![0.0, 3.2]).is_err());
        assert!(ModalVector::new(vec![-0.6, 0.8], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn sampler_is_deterministic() {
        let a = sample_modal_vector(ModeCase::Ten, &mut sample_rng(5, 0, 3));
        let b = sample_modal_vector(ModeCase::Ten, &mut sample_rng(5, 0, 3));
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
    }

    #[test]
    fn sampler_mean_matches_monte_carlo_oracle() {
        // Oracle: the same law written out directly on a different generator.
        use rand::SeedableRng;
        let mut oracle_rng = rand::rngs::StdRng::seed_from_u64(99);
        let draws = 100_000;
        let mut oracle = Vec::with_capacity(draws);
        for _ in 0..draws {
            let a: [f64; 3] = [oracle_rng.random(), oracle_rng.random(), oracle_rng.random()];
            let s: f64 = a.iter().map(|v| v * v).sum();
            oracle.push(a[0] * a[0] / s);
        }
        let o_mean = oracle.iter().sum::<f64>() / draws as f64;
        let o_var = oracle.iter().map(|v| (v - o_mean).powi(2)).sum::<f64>() / (draws - 1) as f64;

        let mut rng = sample_rng(1, 0, 0);
        let mean = (0..draws)
            .map(|_| sample_modal_vector(ModeCase::Three, &mut rng).rho[0].powi(2))
            .sum::<f64>()
            / draws as f64;
        // Both estimates carry independent error.
        let se = (2.0 * o_var / draws as f64).sqrt();
        assert!((mean - o_mean).abs() < 3.0 * se, "{mean} vs {o_mean} (se {se})");
        // By symmetry the exact mean is 1/3.
        assert!((mean - 1.0 / 3.0).abs() < 3.0 * se);
    }

    #[test]
    fn noise_statistics() {
        let grid = Grid::new(128, 10.0).unwrap();
        let img = IntensityImage::new(grid, vec![2.5; grid.len()]).unwrap();
        let noisy = add_noise(&img, 0.08, &mut sample_rng(3, 0, 0)).unwrap();
        let rms = (noisy
            .values
            .iter()
            .map(|v| (v / 2.5 - 1.0).powi(2))
            .sum::<f64>()
            / grid.len() as f64)
            .sqrt();
        assert!((rms - 0.08).abs() < 0.008, "{rms}");

        assert_eq!(add_noise(&img, 0.0, &mut sample_rng(3, 0, 0)).unwrap(), img);
        assert!(add_noise(&img, -0.1, &mut sample_rng(3, 0, 0)).is_err());

        let heavy = add_noise(&img, 1.5, &mut sample_rng(3, 0, 0)).unwrap();
        assert!(heavy.values.iter().all(|&v| v >= 0.0));
        assert!(heavy.values.contains(&0.0));
        let again = add_noise(&img, 1.5, &mut sample_rng(3, 0, 0)).unwrap();
        assert_eq!(heavy, again);
        let other = add_noise(&img, 1.5, &mut sample_rng(4, 0, 0)).unwrap();
        assert_ne!(heavy, other);
    }

    #[test]
    fn input_normalization() {
        let grid = Grid::new(32, 1.0).unwrap();
        let mut values = vec![0.5; grid.len()];
        values[7] = 7.3;
        let img = IntensityImage::new(grid, values).unwrap();
        let out = normalize_for_input(&img).unwrap();
        assert_eq!(out.peak(), 1.0);
        assert_eq!(normalize_for_input(&out).unwrap(), out);
        let noisy = add_noise(&img, 0.9, &mut sample_rng(1, 1, 1)).unwrap();
        let out = normalize_for_input(&noisy).unwrap();
        assert!(out.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let zero = IntensityImage::new(grid, vec![0.0; grid.len()]).unwrap();
        assert!(normalize_for_input(&zero).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sampled_vectors_satisfy_constraint(seed in any::<u64>(), which in 0usize..5) {
            let case = ModeCase::ALL[which];
            let mv = sample_modal_vector(case, &mut sample_rng(seed, 0, 0));
            prop_assert!(mv.validate().is_ok());
            prop_assert_eq!(mv.len(), case.count());
        }

        #[test]
        fn global_phase_leaves_intensity_unchanged(seed in any::<u64>(), phi in -PI..PI) {
            let b = basis(5, 32);
            let mv = sample_modal_vector(ModeCase::Five, &mut sample_rng(seed, 0, 0));
            let shifted = ModalVector {
                rho: mv.rho.clone(),
                theta: mv.theta.iter().map(|t| t + phi).collect(),
            };
            // Bypass the [−π, π] range check: the invariance holds for any shift.
            let a = intensity(&superpose(&b.fields, &mv).unwrap());
            let field_b = superpose_unchecked(&b.fields, &shifted);
            let b_img = intensity(&field_b);
            for (x, y) in a.values.iter().zip(&b_img.values) {
                prop_assert!((x - y).abs() <= 1e-12 * a.peak());
            }
        }

        #[test]
        fn superposition_conserves_power(seed in any::<u64>()) {
            let spec = FiberSpec::reference();
            let b = ModeBasis::new(&spec, Grid::physics(&spec).unwrap(), 10).unwrap();
            let mv = sample_modal_vector(ModeCase::Ten, &mut sample_rng(seed, 0, 0));
            let p = superpose(&b.fields, &mv).unwrap().power();
            prop_assert!((p - 1.0).abs() < 1e-3, "{}", p);
        }
    }

    fn superpose_unchecked(modes: &[ModeField], mv: &ModalVector) -> ComplexField {
        let grid = modes[0].grid;
        let mut values = vec![Complex64::default(); grid.len()];
        for (mode, coeff) in modes.iter().zip(mv.coefficients()) {
            for (acc, &psi) in values.iter_mut().zip(&mode.values) {
                *acc += coeff * psi;
            }
        }
        ComplexField { grid, values }
    }
}

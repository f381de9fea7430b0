//! Labeled sample sets: generation, label scaling and the on-disk format.
//!
//! A dataset directory holds
//!
//! * `manifest.json`: generation parameters, file layout and the SHA-256 of
//!   every data file;
//! * `images.f32`: little-endian `f32` rasters, sample-major, row-major;
//! * `labels.f64`: little-endian `(M_x², M_y²)` pairs;
//! * `modal.f64`: per sample, the N amplitudes followed by the N phases.
//!
//! Labels are physical (unscaled). Sample `i` is fully determined by
//! `(master_seed, stream, i)`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beam_quality::m2_direct;
use crate::case::ModeCase;
use crate::error::{Error, Result};
use crate::fiber_modes::{FiberSpec, Grid, ModeBasis};
use crate::field::{add_noise, intensity, normalize_for_input, sample_modal_vector, superpose, ModalVector};
use crate::seed::{sample_rng, HELD_OUT_STREAM};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_FILE: &str = "images.f32";
pub const LABELS_FILE: &str = "labels.f64";
pub const MODAL_FILE: &str = "modal.f64";
pub const DEFAULT_RESOLUTION: usize = 64;
pub const SAMPLES_PER_EPOCH: usize = 10_000;
/// No physical beam has `M² < 1`.
pub const PHYSICAL_FLOOR: f64 = 1.0;
/// Exact step-index modes sit slightly above the idealized M² values the
/// case constants are derived from (LP11 gives M_x² ≈ 3.09, LP21 ≈ 3.06),
/// so single-axis labels and a few M_eff² values exceed the constant.
/// Only an effective M² beyond the constant by more than this fraction is
/// treated as a solver or case error.
pub const LABEL_MARGIN: f64 = 0.05;

/// Divides both components by the case constant `c`.
pub fn scale_label(m2: [f64; 2], c: f64) -> Result<[f64; 2]> {
    check_constant(c)?;
    for v in m2 {
        if !v.is_finite() {
            return Err(Error::NonFinite("label".into()));
        }
        if v < 0.0 {
            return Err(Error::InvalidInput(format!("negative label {v}")));
        }
        if v > c {
            return Err(Error::LabelOutOfRange { value: v, constant: c });
        }
    }
    Ok([m2[0] / c, m2[1] / c])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnscaledLabel {
    pub m2: [f64; 2],
    /// Set when a component lies below [`PHYSICAL_FLOOR`].
    pub below_floor: bool,
}

/// Multiplies both components by the case constant `c`.
pub fn unscale_label(scaled: [f64; 2], c: f64) -> Result<UnscaledLabel> {
    check_constant(c)?;
    for v in scaled {
        if !v.is_finite() {
            return Err(Error::NonFinite("scaled label".into()));
        }
        if v < 0.0 {
            return Err(Error::InvalidInput(format!("negative scaled label {v}")));
        }
        if v > 1.0 {
            return Err(Error::LabelOutOfRange {
                value: v * c,
                constant: c,
            });
        }
    }
    let m2 = [scaled[0] * c, scaled[1] * c];
    Ok(UnscaledLabel {
        m2,
        below_floor: m2.iter().any(|&v| v < PHYSICAL_FLOOR),
    })
}

/// Network target for a physical label: `m2 / c`, saturated at 1 since
/// the output sigmoid cannot exceed it.
pub fn training_target(m2: [f64; 2], c: f64) -> Result<[f64; 2]> {
    check_constant(c)?;
    if m2.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput(format!("label {m2:?}")));
    }
    Ok([(m2[0] / c).min(1.0), (m2[1] / c).min(1.0)])
}

fn check_label(label: [f64; 2], c: f64) -> Result<()> {
    if label.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::NonFinite(format!("label {label:?}")));
    }
    let eff = (label[0] * label[1]).sqrt();
    if eff > c * (1.0 + LABEL_MARGIN) {
        return Err(Error::LabelOutOfRange { value: eff, constant: c });
    }
    Ok(())
}

fn check_constant(c: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidInput(format!("scaling constant must be positive (got {c})")));
    }
    Ok(())
}

/// One training or test pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub case: ModeCase,
    pub seed_index: u64,
    pub resolution: usize,
    /// Peak-normalized intensity, row-major, values in `[0, 1]`.
    pub image: Vec<f32>,
    /// `(M_x², M_y²)` from the direct route on the label grid.
    pub label: [f64; 2],
    pub modal: ModalVector,
}

impl SampleRecord {
    pub fn m2_eff(&self) -> f64 {
        (self.label[0] * self.label[1]).sqrt()
    }
}

/// Mode bases for one fiber, case and image resolution.
///
/// Labels are computed on [`Grid::physics`], images are rendered on
/// [`Grid::image`]. Both bases are built once and shared by every sample.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: FiberSpec,
    case: ModeCase,
    image_basis: ModeBasis,
    label_basis: ModeBasis,
}

impl Generator {
    pub fn new(spec: &FiberSpec, case: ModeCase, resolution: usize) -> Result<Self> {
        spec.validate()?;
        let image_basis = ModeBasis::new(spec, Grid::image(spec, resolution)?, case.count())?;
        let label_basis = ModeBasis::new(spec, Grid::physics(spec)?, case.count())?;
        Ok(Generator {
            spec: *spec,
            case,
            image_basis,
            label_basis,
        })
    }

    pub fn spec(&self) -> &FiberSpec {
        &self.spec
    }

    pub fn case(&self) -> ModeCase {
        self.case
    }

    pub fn resolution(&self) -> usize {
        self.image_basis.grid.n
    }

    pub fn image_grid(&self) -> Grid {
        self.image_basis.grid
    }

    pub fn label_grid(&self) -> Grid {
        self.label_basis.grid
    }

    /// `(M_x², M_y²)` of the beam with this modal vector. Fails when the
    /// effective value is implausible for the case (see [`LABEL_MARGIN`]).
    pub fn label_for(&self, mv: &ModalVector) -> Result<[f64; 2]> {
        let field = superpose(&self.label_basis.fields, mv)?;
        let m = m2_direct(&field)?;
        let label = [m.m2_x, m.m2_y];
        check_label(label, self.case.scaling_constant())?;
        Ok(label)
    }

    /// Peak-normalized intensity of the beam, optionally noised.
    pub fn render<R: Rng + ?Sized>(&self, mv: &ModalVector, noise_sigma: f64, rng: &mut R) -> Result<Vec<f32>> {
        let field = superpose(&self.image_basis.fields, mv)?;
        let noisy = add_noise(&intensity(&field), noise_sigma, rng)?;
        let img = normalize_for_input(&noisy)?;
        Ok(img.values.iter().map(|&v| v as f32).collect())
    }

    /// Modal vector and label of sample `index`, without rendering.
    pub fn label_only(&self, master_seed: u64, stream: u64, index: u64) -> Result<(ModalVector, [f64; 2])> {
        let mut rng = sample_rng(master_seed, stream, index);
        let mv = sample_modal_vector(self.case, &mut rng);
        let label = self.label_for(&mv)?;
        Ok((mv, label))
    }

    pub fn sample(&self, master_seed: u64, stream: u64, index: u64, noise_sigma: f64) -> Result<SampleRecord> {
        let mut rng = sample_rng(master_seed, stream, index);
        let mv = sample_modal_vector(self.case, &mut rng);
        let label = self.label_for(&mv)?;
        let image = self.render(&mv, noise_sigma, &mut rng)?;
        Ok(SampleRecord {
            case: self.case,
            seed_index: index,
            resolution: self.resolution(),
            image,
            label,
            modal: mv,
        })
    }

    /// Samples `0..count` of a stream, in index order.
    pub fn samples(&self, master_seed: u64, stream: u64, count: usize, noise_sigma: f64) -> Result<Vec<SampleRecord>> {
        (0..count as u64)
            .into_par_iter()
            .map(|i| self.sample(master_seed, stream, i, noise_sigma))
            .collect()
    }
}

/// Fresh samples for one training epoch. Epoch `e` uses seed stream `e`,
/// so epoch 0 reproduces a dataset generated on stream 0.
pub fn stream_online(
    generator: &Generator,
    master_seed: u64,
    epoch: u64,
    count: usize,
) -> impl Iterator<Item = Result<SampleRecord>> + '_ {
    (0..count as u64).map(move |i| generator.sample(master_seed, epoch, i, 0.0))
}

/// The fixed evaluation set of a master seed, drawn from a stream that no
/// training epoch can reach.
pub fn held_out_set(generator: &Generator, master_seed: u64, count: usize) -> Result<Vec<SampleRecord>> {
    generator.samples(master_seed, HELD_OUT_STREAM, count, 0.0)
}

/// Inputs that fully determine a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub case: ModeCase,
    pub count: usize,
    pub master_seed: u64,
    pub stream: u64,
    pub resolution: usize,
    pub noise_sigma: f64,
    pub fiber: FiberSpec,
}

impl DatasetParams {
    pub fn new(case: ModeCase, count: usize, master_seed: u64) -> Self {
        DatasetParams {
            case,
            count,
            master_seed,
            stream: 0,
            resolution: DEFAULT_RESOLUTION,
            noise_sigma: 0.0,
            fiber: FiberSpec::reference(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub half_width_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFiles {
    pub images: FileEntry,
    pub labels: FileEntry,
    pub modal: FileEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub case: ModeCase,
    pub count: usize,
    pub resolution: usize,
    pub image_grid: GridSpec,
    pub label_grid: GridSpec,
    pub fiber: FiberSpec,
    pub noise_sigma: f64,
    pub master_seed: u64,
    pub stream: u64,
    pub scaling_constant: f64,
    /// Image convention; always `"peak"` (brightest pixel = 1).
    pub normalization: String,
    pub byte_order: String,
    pub files: DataFiles,
}

impl DatasetManifest {
    pub fn params(&self) -> DatasetParams {
        DatasetParams {
            case: self.case,
            count: self.count,
            master_seed: self.master_seed,
            stream: self.stream,
            resolution: self.resolution,
            noise_sigma: self.noise_sigma,
            fiber: self.fiber,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a manifest. An unknown `format_version` is
    /// reported before any other field is interpreted.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(bytes)?;
        let version = value
            .get("format_version")
            .ok_or_else(|| Error::format("manifest", "missing format_version"))?;
        if version.as_u64() != Some(u64::from(FORMAT_VERSION)) {
            return Err(Error::UnsupportedVersion {
                found: version.to_string(),
                supported: FORMAT_VERSION.to_string(),
            });
        }
        let manifest: DatasetManifest = serde_json::from_value(value)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::format("manifest", reason));
        self.fiber.validate()?;
        if self.resolution < 32 || self.image_grid.n != self.resolution {
            return bad(format!("resolution {} / image grid {}", self.resolution, self.image_grid.n));
        }
        for g in [self.image_grid, self.label_grid] {
            Grid::new(g.n, g.half_width_um)?;
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise sigma {}", self.noise_sigma));
        }
        if self.scaling_constant != self.case.scaling_constant() {
            return bad(format!(
                "scaling constant {} does not belong to the {}-mode case",
                self.scaling_constant, self.case
            ));
        }
        if self.normalization != "peak" {
            return bad(format!("unknown normalization {:?}", self.normalization));
        }
        if self.byte_order != "little" {
            return bad(format!("unsupported byte order {:?}", self.byte_order));
        }
        let expected = expected_entries(self.count, self.resolution, self.case)?;
        for (entry, (name, dtype, shape)) in [&self.files.images, &self.files.labels, &self.files.modal]
            .into_iter()
            .zip(expected)
        {
            if entry.name != name || entry.dtype != dtype || entry.shape != shape {
                return bad(format!("file entry {:?} does not match layout {name} {dtype} {shape:?}", entry.name));
            }
            if entry.sha256.len() != 64 || !entry.sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
                return bad(format!("checksum of {name} is not a SHA-256 hex digest"));
            }
        }
        Ok(())
    }

    fn byte_len(entry: &FileEntry) -> Result<usize> {
        let width = match entry.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::format("manifest", format!("dtype {other}"))),
        };
        entry
            .shape
            .iter()
            .try_fold(width, |acc: usize, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("manifest", "file size overflows"))
    }
}

fn expected_entries(count: usize, n: usize, case: ModeCase) -> Result<[(&'static str, &'static str, Vec<usize>); 3]> {
    Ok([
        (IMAGES_FILE, "f32", vec![count, n, n]),
        (LABELS_FILE, "f64", vec![count, 2]),
        (MODAL_FILE, "f64", vec![count, 2 * case.count()]),
    ])
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serialized form of a dataset: manifest plus the three data blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub modal: Vec<u8>,
}

pub fn encode_dataset(params: &DatasetParams, records: &[SampleRecord]) -> Result<EncodedDataset> {
    let n = params.resolution;
    let nm = params.case.count();
    if records.len() != params.count {
        return Err(Error::ShapeMismatch(format!("{} records for count {}", records.len(), params.count)));
    }
    let mut images = Vec::with_capacity(params.count * n * n * 4);
    let mut labels = Vec::with_capacity(params.count * 16);
    let mut modal = Vec::with_capacity(params.count * nm * 16);
    for r in records {
        if r.case != params.case || r.resolution != n || r.image.len() != n * n || r.modal.len() != nm {
            return Err(Error::ShapeMismatch(format!("record {} does not match the dataset layout", r.seed_index)));
        }
        r.image.iter().for_each(|v| images.extend_from_slice(&v.to_le_bytes()));
        r.label.iter().for_each(|v| labels.extend_from_slice(&v.to_le_bytes()));
        r.modal
            .rho
            .iter()
            .chain(&r.modal.theta)
            .for_each(|v| modal.extend_from_slice(&v.to_le_bytes()));
    }
    let [ie, le, me] = expected_entries(params.count, n, params.case)?;
    let entry = |(name, dtype, shape): (&str, &str, Vec<usize>), bytes: &[u8]| FileEntry {
        name: name.into(),
        dtype: dtype.into(),
        shape,
        sha256: sha256_hex(bytes),
    };
    let spec = &params.fiber;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        case: params.case,
        count: params.count,
        resolution: n,
        image_grid: grid_spec(Grid::image(spec, n)?),
        label_grid: grid_spec(Grid::physics(spec)?),
        fiber: *spec,
        noise_sigma: params.noise_sigma,
        master_seed: params.master_seed,
        stream: params.stream,
        scaling_constant: params.case.scaling_constant(),
        normalization: "peak".into(),
        byte_order: "little".into(),
        files: DataFiles {
            images: entry(ie, &images),
            labels: entry(le, &labels),
            modal: entry(me, &modal),
        },
    };
    Ok(EncodedDataset {
        manifest,
        images,
        labels,
        modal,
    })
}

fn grid_spec(g: Grid) -> GridSpec {
    GridSpec {
        n: g.n,
        half_width_um: g.half_width,
    }
}

/// Checks sizes and checksums, then decodes every record. Nothing is
/// returned unless every file verifies.
pub fn decode_dataset(manifest_json: &[u8], images: &[u8], labels: &[u8], modal: &[u8]) -> Result<Dataset> {
    let manifest = DatasetManifest::from_json(manifest_json)?;
    let files = &manifest.files;
    for (entry, bytes) in [(&files.images, images), (&files.labels, labels), (&files.modal, modal)] {
        let expected = DatasetManifest::byte_len(entry)?;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                file: entry.name.clone(),
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::format(
                "data file",
                format!("{} has {} trailing bytes", entry.name, bytes.len() - expected),
            ));
        }
        let found = sha256_hex(bytes);
        if !found.eq_ignore_ascii_case(&entry.sha256) {
            return Err(Error::Checksum {
                file: entry.name.clone(),
                expected: entry.sha256.clone(),
                found,
            });
        }
    }

    let n = manifest.resolution;
    let nm = manifest.case.count();
    let c = manifest.scaling_constant;
    let f32s = |b: &[u8]| -> Vec<f32> { b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect() };
    let f64s = |b: &[u8]| -> Vec<f64> { b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect() };
    let (images, labels, modal) = (f32s(images), f64s(labels), f64s(modal));
    let mut records = Vec::with_capacity(manifest.count);
    for i in 0..manifest.count {
        let image = images[i * n * n..(i + 1) * n * n].to_vec();
        if let Some(bad) = image.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::format("image", format!("sample {i} has pixel {bad} outside [0, 1]")));
        }
        let label = [labels[2 * i], labels[2 * i + 1]];
        check_label(label, c).map_err(|e| Error::format("label", format!("sample {i}: {e}")))?;
        let m = &modal[i * 2 * nm..(i + 1) * 2 * nm];
        let mv = ModalVector::new(m[..nm].to_vec(), m[nm..].to_vec())
            .map_err(|e| Error::format("modal vector", format!("sample {i}: {e}")))?;
        records.push(SampleRecord {
            case: manifest.case,
            seed_index: i as u64,
            resolution: n,
            image,
            label,
            modal: mv,
        });
    }
    Ok(Dataset { manifest, records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: PathBuf) -> Result<Vec<u8>> {
    fs::read(&path).map_err(|e| Error::io(path, e))
}

/// Writes the encoded files into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, encoded: &EncodedDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(dir.join(IMAGES_FILE), &encoded.images)?;
    write_file(dir.join(LABELS_FILE), &encoded.labels)?;
    write_file(dir.join(MODAL_FILE), &encoded.modal)?;
    write_file(dir.join(MANIFEST_FILE), encoded.manifest.to_json()?.as_bytes())
}

/// Generates `params.count` samples and writes them to `dir`.
pub fn generate_dataset(params: &DatasetParams, dir: &Path) -> Result<DatasetManifest> {
    let generator = Generator::new(&params.fiber, params.case, params.resolution)?;
    let records = generator.samples(params.master_seed, params.stream, params.count, params.noise_sigma)?;
    let encoded = encode_dataset(params, &records)?;
    write_dataset(dir, &encoded)?;
    Ok(encoded.manifest)
}

/// Loads a dataset from its directory or from the path of its manifest.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let dir = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let manifest_path = if path.is_dir() { dir.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let manifest = read_file(manifest_path)?;
    let images = read_file(dir.join(IMAGES_FILE))?;
    let labels = read_file(dir.join(LABELS_FILE))?;
    let modal = read_file(dir.join(MODAL_FILE))?;
    decode_dataset(&manifest, &images, &labels, &modal)
}

//! Labeled sample assembly and dataset serialization.
//!
//! Each sample is a pure function of `(base_seed, index)`, so the order in which
//! workers finish never shows up in the output.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspline::{self, FieldError, GridConfig};
use crate::grid::{DisplacementField, Grid};
use crate::io::{self, IoError};
use crate::seed;
use crate::speckle::{self, SpeckleError, SpeckleSpec};
use crate::warp::{self, WarpError};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARTIAL_MARKER: &str = ".partial";
pub const SAMPLES_DIR: &str = "samples";
pub const FIELD_CONVENTION: &str =
    "backward warp: deformed(x, y) = reference(x - u(x, y), y - v(x, y)); u along columns, v along rows, pixels";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("sample {index}: speckle stage: {source}")]
    Speckle { index: u64, source: SpeckleError },
    #[error("sample {index}: field stage: {source}")]
    Field { index: u64, source: FieldError },
    #[error("sample {index}: warp stage: {source}")]
    Warp { index: u64, source: WarpError },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("output directory {0} is not empty; pass overwrite to replace it")]
    OutputExists(PathBuf),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("checksum mismatch for {path}")]
    ChecksumMismatch { path: String },
}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(IoError::Io(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub speckle: SpeckleSpec,
    pub field: GridConfig,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            speckle: SpeckleSpec::default(),
            field: GridConfig::default(),
        }
    }
}

impl GenerationParams {
    /// Side of the stored sample, equal to half the speckle frame.
    pub fn sample_size(&self) -> usize {
        self.speckle.frame_size / 2
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let n = self.speckle.frame_size;
        if n % 2 != 0 {
            return Err(DatasetError::Config(format!("frame size {n} must be even")));
        }
        if self.field.domain != (n / 2, n / 2) {
            return Err(DatasetError::Config(format!(
                "field domain {:?} must be half the frame ({n})",
                self.field.domain
            )));
        }
        self.speckle
            .validate()
            .map_err(|e| DatasetError::Config(e.to_string()))?;
        self.field
            .validate()
            .map_err(|e| DatasetError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub reference: Grid,
    pub deformed: Grid,
    pub field: DisplacementField,
    pub seed: u64,
    pub index: u64,
}

impl Sample {
    /// Central `size x size` window of every image and field channel.
    pub fn center_window(&self, size: usize) -> Sample {
        Sample {
            reference: self.reference.center_window(size),
            deformed: self.deformed.center_window(size),
            field: self.field.center_window(size),
            seed: self.seed,
            index: self.index,
        }
    }
}

pub fn sample_seed(base_seed: u64, index: u64) -> u64 {
    seed::mix(base_seed, index)
}

pub fn make_sample(base_seed: u64, index: u64, params: &GenerationParams) -> Result<Sample, DatasetError> {
    params.validate()?;
    let s = sample_seed(base_seed, index);
    let pattern = speckle::generate_speckle(&params.speckle, s).map_err(|source| DatasetError::Speckle { index, source })?;
    let field_err = |source| DatasetError::Field { index, source };
    let field = bspline::make_displacement_field(s, &params.field).map_err(field_err)?;
    let wide = DisplacementField::new(
        bspline::mirror_extend(&field.u).map_err(field_err)?,
        bspline::mirror_extend(&field.v).map_err(field_err)?,
    );
    let warp_err = |source| DatasetError::Warp { index, source };
    let deformed = warp::warp_image(&pattern.pixels, &wide).map_err(warp_err)?;
    Ok(Sample {
        reference: warp::center_crop(&pattern.pixels).map_err(warp_err)?,
        deformed: warp::center_crop(&deformed).map_err(warp_err)?,
        field,
        seed: s,
        index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: u64,
    pub seed: u64,
    pub split: Split,
    pub reference: String,
    pub deformed: String,
    pub field: String,
    pub reference_fnv: String,
    pub deformed_fnv: String,
    pub field_fnv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub sample_count: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub base_seed: u64,
    pub params: GenerationParams,
    pub convention: String,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.version != MANIFEST_VERSION {
            return Err(DatasetError::Manifest(format!("unsupported version {}", self.version)));
        }
        if self.sample_count != self.train_count + self.test_count || self.samples.len() != self.sample_count {
            return Err(DatasetError::Manifest(format!(
                "counts disagree: {} samples, {} train + {} test, {} entries",
                self.sample_count,
                self.train_count,
                self.test_count,
                self.samples.len()
            )));
        }
        Ok(())
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub out_dir: PathBuf,
    pub count: usize,
    pub train: usize,
    pub base_seed: u64,
    pub params: GenerationParams,
    pub workers: usize,
    pub overwrite: bool,
}

impl DatasetConfig {
    /// 12,500 pairs split 10,000 / 2,500.
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            count: 12_500,
            train: 10_000,
            base_seed: 0,
            params: GenerationParams::default(),
            workers: 1,
            overwrite: false,
        }
    }
}

fn hex(v: u64) -> String {
    format!("{v:016x}")
}

fn sample_rel(index: u64) -> String {
    format!("{SAMPLES_DIR}/{index:06}")
}

/// Write the three sample files into `dir`, returning their checksums in order
/// reference, deformed, field.
pub fn write_sample(dir: &Path, sample: &Sample) -> Result<[u64; 3], IoError> {
    fs::create_dir_all(dir)?;
    let reference = io::encode_png16(&sample.reference)?;
    let deformed = io::encode_png16(&sample.deformed)?;
    let field = io::encode_dfld(&sample.field);
    fs::write(dir.join("reference.png"), &reference)?;
    fs::write(dir.join("deformed.png"), &deformed)?;
    fs::write(dir.join("field.dfld"), &field)?;
    Ok([io::fnv1a64(&reference), io::fnv1a64(&deformed), io::fnv1a64(&field)])
}

/// Images come back quantized to 16 bits; the field is bit-exact.
pub fn read_sample(dir: &Path, seed: u64, index: u64) -> Result<Sample, IoError> {
    Ok(Sample {
        reference: io::read_png16(&dir.join("reference.png"))?,
        deformed: io::read_png16(&dir.join("deformed.png"))?,
        field: io::read_dfld(&dir.join("field.dfld"))?,
        seed,
        index,
    })
}

fn prepare_output(cfg: &DatasetConfig) -> Result<(), DatasetError> {
    let dir = &cfg.out_dir;
    if dir.exists() {
        let nonempty = fs::read_dir(dir)?.next().is_some();
        if nonempty && !cfg.overwrite {
            return Err(DatasetError::OutputExists(dir.clone()));
        }
        // only remove what a previous run could have produced
        for name in [MANIFEST_FILE, PARTIAL_MARKER, "manifest.json.tmp"] {
            let p = dir.join(name);
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        let samples = dir.join(SAMPLES_DIR);
        if samples.exists() {
            fs::remove_dir_all(samples)?;
        }
    }
    fs::create_dir_all(dir.join(SAMPLES_DIR))?;
    Ok(())
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<DatasetManifest, DatasetError> {
    if cfg.train > cfg.count {
        return Err(DatasetError::Config(format!("train {} exceeds count {}", cfg.train, cfg.count)));
    }
    if cfg.workers == 0 {
        return Err(DatasetError::Config("workers must be at least 1".into()));
    }
    cfg.params.validate()?;
    prepare_output(cfg)?;
    let dir = &cfg.out_dir;
    fs::write(dir.join(PARTIAL_MARKER), b"generation in progress\n")?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| DatasetError::Config(e.to_string()))?;
    let entries: Result<Vec<ManifestEntry>, DatasetError> = pool.install(|| {
        (0..cfg.count as u64)
            .into_par_iter()
            .map(|index| {
                let sample = make_sample(cfg.base_seed, index, &cfg.params)?;
                let rel = sample_rel(index);
                let sums = write_sample(&dir.join(&rel), &sample)?;
                Ok(ManifestEntry {
                    index,
                    seed: sample.seed,
                    split: if (index as usize) < cfg.train { Split::Train } else { Split::Test },
                    reference: format!("{rel}/reference.png"),
                    deformed: format!("{rel}/deformed.png"),
                    field: format!("{rel}/field.dfld"),
                    reference_fnv: hex(sums[0]),
                    deformed_fnv: hex(sums[1]),
                    field_fnv: hex(sums[2]),
                })
            })
            .collect()
    });
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        sample_count: cfg.count,
        train_count: cfg.train,
        test_count: cfg.count - cfg.train,
        base_seed: cfg.base_seed,
        params: cfg.params.clone(),
        convention: FIELD_CONVENTION.into(),
        samples: entries?,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    let tmp = dir.join("manifest.json.tmp");
    fs::write(&tmp, json + "\n")?;
    fs::rename(&tmp, dir.join(MANIFEST_FILE))?;
    fs::remove_file(dir.join(PARTIAL_MARKER))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, DatasetError> {
    if dir.join(PARTIAL_MARKER).exists() {
        return Err(DatasetError::Manifest(format!("{} holds an incomplete dataset", dir.display())));
    }
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    m.validate()?;
    Ok(m)
}

/// Recompute every file checksum listed in the manifest.
pub fn verify_dataset(dir: &Path, manifest: &DatasetManifest) -> Result<(), DatasetError> {
    for e in &manifest.samples {
        for (rel, sum) in [
            (&e.reference, &e.reference_fnv),
            (&e.deformed, &e.deformed_fnv),
            (&e.field, &e.field_fnv),
        ] {
            if hex(io::checksum_file(&dir.join(rel))?) != *sum {
                return Err(DatasetError::ChecksumMismatch { path: rel.clone() });
            }
        }
    }
    Ok(())
}

pub fn load_entry(dir: &Path, entry: &ManifestEntry) -> Result<Sample, DatasetError> {
    Ok(Sample {
        reference: io::read_png16(&dir.join(&entry.reference))?,
        deformed: io::read_png16(&dir.join(&entry.deformed))?,
        field: io::read_dfld(&dir.join(&entry.field))?,
        seed: entry.seed,
        index: entry.index,
    })
}

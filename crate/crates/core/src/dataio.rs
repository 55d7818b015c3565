//! Tensor blobs, PGM images and dataset emission.
//!
//! Blob layout: `"UTB1"`, dtype code (u8), ndim (u8), ndim little-endian u32
//! dims, then the row-major little-endian payload.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayD, Dimension, IxDyn};
use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aberration::{sample_profile, SIGMA_LEVELS};
use crate::beamform::{das_all, DasTensor};
use crate::compound::{cpc, cpc_all, select_subset, CompoundImage};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::postproc::{bmode, log_compress, BmodeImage};
use crate::rfsim::{covering_duration, make_phantom, simulate, Phantom, PhantomGeometry, PhantomKind, RfCube};

pub const MAGIC: [u8; 4] = *b"UTB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    C32,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
            Dtype::C32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            2 => Ok(Dtype::C32),
            other => Err(Error::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::C32 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
            Dtype::C32 => "complex f32",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlobData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    C32(Vec<Complex32>),
}

impl BlobData {
    pub fn dtype(&self) -> Dtype {
        match self {
            BlobData::F32(_) => Dtype::F32,
            BlobData::F64(_) => Dtype::F64,
            BlobData::C32(_) => Dtype::C32,
        }
    }

    fn len(&self) -> usize {
        match self {
            BlobData::F32(v) => v.len(),
            BlobData::F64(v) => v.len(),
            BlobData::C32(v) => v.len(),
        }
    }
}

/// N-dimensional tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlob {
    dims: Vec<usize>,
    data: BlobData,
}

impl TensorBlob {
    pub fn new(dims: Vec<usize>, data: BlobData) -> Result<Self> {
        if dims.is_empty() || dims.len() > u8::MAX as usize {
            return Err(Error::InvalidArgument(format!("blob rank {} not in 1..=255", dims.len())));
        }
        if dims.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
            return Err(Error::InvalidArgument(format!("blob dims {dims:?} must be nonzero u32")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch(format!("dims {dims:?} hold {n} values, got {}", data.len())));
        }
        Ok(TensorBlob { dims, data })
    }

    pub fn from_f64<D: Dimension>(a: &ndarray::Array<f64, D>) -> Result<Self> {
        Self::new(a.shape().to_vec(), BlobData::F64(a.iter().copied().collect()))
    }

    pub fn from_f32<D: Dimension>(a: &ndarray::Array<f32, D>) -> Result<Self> {
        Self::new(a.shape().to_vec(), BlobData::F32(a.iter().copied().collect()))
    }

    /// Stores complex values at single precision.
    pub fn from_complex<D: Dimension>(a: &ndarray::Array<Complex64, D>) -> Result<Self> {
        let data = a.iter().map(|c| Complex32::new(c.re as f32, c.im as f32)).collect();
        Self::new(a.shape().to_vec(), BlobData::C32(data))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn data(&self) -> &BlobData {
        &self.data
    }

    /// Real values widened to f64; complex blobs are rejected.
    pub fn to_f64(&self) -> Result<ArrayD<f64>> {
        let v = match &self.data {
            BlobData::F64(v) => v.clone(),
            BlobData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            BlobData::C32(_) => {
                return Err(Error::DtypeMismatch {
                    expected: "real",
                    found: Dtype::C32.name(),
                })
            }
        };
        Ok(ArrayD::from_shape_vec(IxDyn(&self.dims), v).expect("dims checked on construction"))
    }

    pub fn to_complex(&self) -> Result<ArrayD<Complex64>> {
        match &self.data {
            BlobData::C32(v) => {
                let v = v.iter().map(|c| Complex64::new(c.re as f64, c.im as f64)).collect();
                Ok(ArrayD::from_shape_vec(IxDyn(&self.dims), v).expect("dims checked on construction"))
            }
            other => Err(Error::DtypeMismatch {
                expected: Dtype::C32.name(),
                found: other.dtype().name(),
            }),
        }
    }

    pub fn to_array2(&self) -> Result<Array2<f64>> {
        self.to_f64()?
            .into_dimensionality()
            .map_err(|_| Error::DimensionMismatch(format!("expected a 2-D blob, got dims {:?}", self.dims)))
    }

    pub fn to_array3(&self) -> Result<Array3<f64>> {
        self.to_f64()?
            .into_dimensionality()
            .map_err(|_| Error::DimensionMismatch(format!("expected a 3-D blob, got dims {:?}", self.dims)))
    }

    pub fn encoded_len(&self) -> usize {
        6 + 4 * self.dims.len() + self.data.len() * self.dtype().size()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(self.dtype().code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            BlobData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            BlobData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            BlobData::C32(v) => v.iter().for_each(|c| {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = |expected: usize| Error::Truncated {
            expected,
            found: bytes.len(),
        };
        if bytes.len() < 6 {
            return Err(short(6));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let dtype = Dtype::from_code(bytes[4])?;
        let ndim = bytes[5] as usize;
        let header = 6 + 4 * ndim;
        if bytes.len() < header {
            return Err(short(header));
        }
        let dims: Vec<usize> = bytes[6..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let expected = count
            .and_then(|n| n.checked_mul(dtype.size()))
            .and_then(|n| n.checked_add(header))
            .ok_or_else(|| Error::InvalidArgument(format!("blob dims {dims:?} overflow")))?;
        if bytes.len() != expected {
            return Err(short(expected));
        }
        let payload = &bytes[header..];
        let data = match dtype {
            Dtype::F32 => BlobData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            Dtype::F64 => BlobData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            Dtype::C32 => BlobData::C32(
                payload
                    .chunks_exact(8)
                    .map(|c| {
                        Complex32::new(
                            f32::from_le_bytes(c[..4].try_into().unwrap()),
                            f32::from_le_bytes(c[4..].try_into().unwrap()),
                        )
                    })
                    .collect(),
            ),
        };
        Self::new(dims, data)
    }
}

pub fn write_blob(path: impl AsRef<Path>, blob: &TensorBlob) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, blob.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_blob(path: impl AsRef<Path>) -> Result<TensorBlob> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorBlob::from_bytes(&bytes)
}

/// Channel data as an `Nt x Ne x K` f64 blob. Timing and geometry are not
/// stored; [`cube_from_blob`] takes them from the configuration.
pub fn cube_to_blob(cube: &RfCube) -> Result<TensorBlob> {
    TensorBlob::new(
        cube.samples().shape().to_vec(),
        BlobData::F64(cube.samples().iter().copied().collect()),
    )
}

pub fn cube_from_blob(blob: &TensorBlob, cfg: &SystemConfig) -> Result<RfCube> {
    let samples = blob.to_array3()?;
    let k = samples.dim().2;
    let angles = cfg.angle_set(k)?.angles;
    RfCube::new(samples, cfg.probe.sampling_frequency, 0.0, cfg.probe.element_positions(), angles)
}

pub fn tensor_from_blob(blob: &TensorBlob, cfg: &SystemConfig) -> Result<DasTensor> {
    let data = blob.to_array3()?;
    let k = data.dim().2;
    let angles = cfg
        .angle_set(k)
        .map(|a| a.angles)
        .unwrap_or_else(|_| vec![0.0; k]);
    DasTensor::new(data, angles)
}

/// B-mode of a stored image: a real compounded RF image goes through
/// envelope detection, a complex IQ image is log-compressed directly.
pub fn blob_bmode(blob: &TensorBlob, dynamic_range: f64) -> Result<BmodeImage> {
    if blob.dtype() == Dtype::C32 {
        let iq: Array2<Complex64> = blob
            .to_complex()?
            .into_dimensionality()
            .map_err(|_| Error::DimensionMismatch(format!("expected a 2-D image, got dims {:?}", blob.dims)))?;
        log_compress(&iq.mapv(|z| z.norm()), dynamic_range)
    } else {
        bmode(&CompoundImage { v: blob.to_array2()? }, dynamic_range)
    }
}

/// 8-bit grey level of a dB value.
fn grey(db: f64, dr: f64) -> u8 {
    (255.0 * (db + dr) / dr).round().clamp(0.0, 255.0) as u8
}

/// Binary PGM, one column per scanline, `-dynamic_range` dB black and 0 dB white.
pub fn encode_pgm(img: &BmodeImage) -> Vec<u8> {
    let (rows, cols) = img.db.dim();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(img.db.iter().map(|&d| grey(d, img.dynamic_range)));
    out
}

pub fn write_pgm(path: impl AsRef<Path>, img: &BmodeImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

/// Inverse of [`encode_pgm`] up to 8-bit quantization.
pub fn decode_pgm(bytes: &[u8], dynamic_range: f64) -> Result<BmodeImage> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Pgm("header ended early".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace byte before the raster
    if fields[0] != "P5" {
        return Err(Error::Pgm(format!("unsupported magic {:?}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Pgm(format!("bad header field {s:?}")));
    let (cols, rows, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Pgm(format!("unsupported maxval {maxval}")));
    }
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != rows * cols {
        return Err(Error::Pgm(format!("expected {} raster bytes, found {}", rows * cols, raster.len())));
    }
    let db = Array2::from_shape_fn((rows, cols), |(a, l)| {
        raster[a * cols + l] as f64 * dynamic_range / 255.0 - dynamic_range
    });
    Ok(BmodeImage { db, dynamic_range })
}

pub fn read_pgm(path: impl AsRef<Path>, dynamic_range: f64) -> Result<BmodeImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, dynamic_range)
}

/// One training pair. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub input_path: String,
    pub target_path: String,
    pub sigma: f64,
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub phantom: PhantomKind,
    /// Joint max |value| over input and target.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest and checks that every referenced blob exists, every
    /// sigma is a known level and each scene has a single target.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: ManifestRecord =
                serde_json::from_str(&line).map_err(|e| Error::Manifest(format!("line {}: {e}", n + 1)))?;
            records.push(r);
        }
        let m = DatasetManifest { records };
        m.validate(path.parent().unwrap_or(Path::new(".")))?;
        Ok(m)
    }

    pub fn validate(&self, base: &Path) -> Result<()> {
        let mut targets = std::collections::HashMap::new();
        for r in &self.records {
            if !SIGMA_LEVELS.contains(&r.sigma) {
                return Err(Error::Manifest(format!("sigma {} is not a known level", r.sigma)));
            }
            if !(r.scale > 0.0) {
                return Err(Error::Manifest(format!("{}: scale must be positive", r.input_path)));
            }
            for p in [&r.input_path, &r.target_path] {
                if !base.join(p).is_file() {
                    return Err(Error::Manifest(format!("missing file {}", base.join(p).display())));
                }
            }
            let prev = targets.entry(r.seed).or_insert(&r.target_path);
            if *prev != &r.target_path {
                return Err(Error::Manifest(format!("seed {} has more than one target", r.seed)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub system: SystemConfig,
    /// Cycled over scenes.
    pub kinds: Vec<PhantomKind>,
    pub geometry: PhantomGeometry,
    pub subset_sizes: Vec<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            system: SystemConfig::default(),
            kinds: vec![PhantomKind::Hypoechoic, PhantomKind::Hyperechoic],
            geometry: PhantomGeometry::default(),
            subset_sizes: vec![31, 25, 15],
        }
    }
}

/// Seed of the speed-of-sound draw for one scene. Every sigma level reuses
/// it, so the levels differ only in amplitude.
pub fn aberration_seed(scene_seed: u64) -> u64 {
    scene_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 1
}

/// Full plane-wave acquisition of `phantom`, long enough for the deepest
/// echo at the slowest speed any sigma level can assign.
pub fn acquire(phantom: &Phantom, sys: &SystemConfig) -> Result<RfCube> {
    let angles = sys.full_angle_set()?;
    let depth = phantom.max_depth().max(sys.imaging.depth_end);
    let slowest = (sys.imaging.assumed_sos - SIGMA_LEVELS[SIGMA_LEVELS.len() - 1]).min(phantom.true_sos);
    let duration = covering_duration(&sys.probe, &angles, depth, slowest);
    simulate(phantom, &sys.probe, &angles, duration)
}

fn max_abs<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    values.fold(0.0, |m, v| m.max(v.abs()))
}

fn emit_scene(index: usize, seed: u64, out_dir: &Path, cfg: &DatasetConfig) -> Result<Vec<ManifestRecord>> {
    let sys = &cfg.system;
    let kind = cfg.kinds[index % cfg.kinds.len()];
    let phantom = make_phantom(kind, seed, &cfg.geometry)?;
    let cube = acquire(&phantom, sys)?;
    let k_full = cube.num_planewaves();
    let lines = sys.imaging.num_scanlines;

    let target_name = format!("scene{index:04}_target.utb");
    let mut target = None;
    let mut records = Vec::new();
    for (si, &sigma) in SIGMA_LEVELS.iter().enumerate() {
        let profile = sample_profile(sys.imaging.assumed_sos, sigma, lines, k_full, aberration_seed(seed))?;
        let tensor = das_all(&cube, &profile, &sys.apodization, &sys.imaging)?;
        if si == 0 {
            let v = cpc_all(&tensor)?.v;
            write_blob(out_dir.join(&target_name), &TensorBlob::from_f64(&v)?)?;
            target = Some(v);
        }
        let target = target.as_ref().expect("sigma levels start at zero");
        for &k in &cfg.subset_sizes {
            let subset = tensor.select(&select_subset(k_full, k)?)?;
            let name = format!("scene{index:04}_s{si}_k{k}.utb");
            write_blob(out_dir.join(&name), &TensorBlob::from_f64(&subset.data)?)?;
            records.push(ManifestRecord {
                input_path: name,
                target_path: target_name.clone(),
                sigma,
                seed,
                k,
                phantom: kind,
                scale: max_abs(subset.data.iter().chain(target.iter())),
            });
        }
    }
    Ok(records)
}

/// Simulates `num_scenes` phantoms and writes noisy-input / clean-target pairs
/// plus `manifest.jsonl` into `out_dir`.
pub fn emit_dataset(num_scenes: usize, out_dir: impl AsRef<Path>, seeds: &[u64], cfg: &DatasetConfig) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    if seeds.len() != num_scenes {
        return Err(Error::InvalidArgument(format!("{} seeds for {num_scenes} scenes", seeds.len())));
    }
    if cfg.kinds.is_empty() || cfg.subset_sizes.is_empty() {
        return Err(Error::InvalidArgument("dataset needs phantom kinds and subset sizes".into()));
    }
    cfg.system.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let per_scene = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| emit_scene(i, seed, out_dir, cfg))
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        records: per_scene.into_iter().flatten().collect(),
    };
    manifest.write(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Paths of a manifest record resolved against the manifest directory.
pub fn record_paths(base: &Path, r: &ManifestRecord) -> (PathBuf, PathBuf) {
    (base.join(&r.input_path), base.join(&r.target_path))
}

/// CPC of a stored input blob, used to check inputs against their target.
pub fn compound_blob(blob: &TensorBlob) -> Result<Array2<f64>> {
    let data = blob.to_array3()?;
    let k = data.dim().2;
    let t = DasTensor::new(data, vec![0.0; k])?;
    Ok(cpc(&t, &(0..k).collect::<Vec<_>>())?.v)
}

//! Binary containers for datasets and checkpoints.
//!
//! All integers and floats are little-endian. A dataset file is
//!
//! ```text
//! magic "DDMDATA\0"            8 bytes
//! version                      u32
//! config length L              u64
//! config                       L bytes of JSON
//! sample count N_s             u64
//! rejected draws               u64
//! N_s records of
//!     Q                        (2 N_lambda + 1) f64
//!     full matrix              2 (2m)^2 f64, row-major, (re, im) pairs
//!     obs_lo obs_hi inc_lo inc_hi   4 u32
//!     observed block           2 R C f64, row-major, (re, im) pairs
//! ```
//!
//! so its size is `36 + L + N_s (8 (2 N_lambda + 1) + 16 (2m)^2 + 16 + 16 R C)`
//! bytes, with `R x C` the aperture block shape.
//!
//! A checkpoint is the magic "DDMCKPT\0", a version, a length-prefixed JSON
//! header (configuration, network specifications, optimizer scalars and the
//! epoch history) and then every tensor as raw f64 in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::forward::{ApertureBounds, CMatrix, LimitedAperture, Msrm};
use crate::geometry::FourierCurve;
use crate::nn::{Adam, DdmModel, Layer, Network, NetworkSpec, RunningStats, Tensor};
use crate::train::{Checkpoint, Dataset, EpochRecord, Sample};

pub const DATASET_MAGIC: &[u8; 8] = b"DDMDATA\0";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DDMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64s<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn put_complex<W: Write>(w: &mut W, v: &[Complex64]) -> Result<()> {
    for z in v {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Format("file is truncated".into()),
        _ => Error::Io(e),
    })
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    fill(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    fill(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    fill(r, &mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn get_complex<R: Read>(r: &mut R, n: usize) -> Result<Vec<Complex64>> {
    Ok(get_f64s(r, 2 * n)?.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<()> {
    let mut b = [0u8; 8];
    fill(r, &mut b)?;
    if &b != magic {
        return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(&b))));
    }
    let version = get_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    Ok(())
}

fn put_json<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec(value).map_err(|e| Error::Format(e.to_string()))?;
    put_u64(w, bytes.len() as u64)?;
    Ok(w.write_all(&bytes)?)
}

fn get_json<R: Read, T: for<'de> Deserialize<'de>>(r: &mut R) -> Result<T> {
    let len = get_u64(r)?;
    if len > 1 << 30 {
        return Err(Error::Format(format!("header length {len} is implausible")));
    }
    let mut bytes = vec![0u8; len as usize];
    fill(r, &mut bytes)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("header: {e}")))
}

fn expect_end<R: Read>(r: &mut R) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after the last record".into())),
    }
}

/// Bytes per sample record.
pub fn dataset_record_size(m: usize, n_lambda: usize, bounds: &ApertureBounds) -> u64 {
    let side = 2 * m as u64;
    8 * (2 * n_lambda as u64 + 1) + 16 * side * side + 16 + 16 * (bounds.rows() * bounds.cols()) as u64
}

/// Total file size for `config` holding `n_samples` records.
pub fn dataset_file_size(config: &RunConfig, n_samples: usize) -> Result<u64> {
    let json = serde_json::to_vec(config).map_err(|e| Error::Format(e.to_string()))?;
    Ok(36 + json.len() as u64 + n_samples as u64 * dataset_record_size(config.m, config.n_lambda, &config.bounds()?))
}

pub fn write_dataset<W: Write>(w: &mut W, data: &Dataset) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_json(w, &data.config)?;
    put_u64(w, data.samples.len() as u64)?;
    put_u64(w, data.retries as u64)?;
    for s in &data.samples {
        put_f64s(w, &s.curve.to_vec())?;
        put_complex(w, &s.full.matrix.data)?;
        let b = s.limited.bounds;
        for v in [b.obs_lo, b.obs_hi, b.inc_lo, b.inc_hi] {
            put_u32(w, v as u32)?;
        }
        put_complex(w, &s.limited.matrix.data)?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(r: &mut R) -> Result<Dataset> {
    expect_magic(r, DATASET_MAGIC)?;
    let config: RunConfig = get_json(r)?;
    config.validate()?;
    let expected = config.bounds()?;
    let n = get_u64(r)? as usize;
    let retries = get_u64(r)? as usize;
    let side = 2 * config.m;
    let mut samples = Vec::with_capacity(n.min(1 << 20));
    for i in 0..n {
        let curve = FourierCurve::from_slice(&get_f64s(r, 2 * config.n_lambda + 1)?, config.s)?;
        let full = Msrm::new(config.m, CMatrix { rows: side, cols: side, data: get_complex(r, side * side)? })?;
        let raw = [get_u32(r)?, get_u32(r)?, get_u32(r)?, get_u32(r)?].map(|v| v as usize);
        let bounds = ApertureBounds { m: config.m, obs_lo: raw[0], obs_hi: raw[1], inc_lo: raw[2], inc_hi: raw[3] };
        if bounds != expected {
            return Err(Error::Format(format!("record {i} has aperture {raw:?}, header says {expected:?}")));
        }
        let matrix = CMatrix { rows: bounds.rows(), cols: bounds.cols(), data: get_complex(r, bounds.rows() * bounds.cols())? };
        samples.push(Sample { limited: LimitedAperture { bounds, matrix }, full, curve });
    }
    expect_end(r)?;
    Ok(Dataset { config, samples, retries })
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, data)?;
    Ok(w.flush()?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(&mut BufReader::new(File::open(path)?))
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    m: usize,
    n_lambda: usize,
    networks: Vec<NetworkSpec>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: RunConfig,
    best_epoch: usize,
    best: ModelHeader,
    last: ModelHeader,
    adam: AdamHeader,
    history: Vec<EpochRecord>,
}

fn model_header(model: &DdmModel) -> ModelHeader {
    ModelHeader { m: model.m, n_lambda: model.n_lambda, networks: model.networks().iter().map(|n| n.spec.clone()).collect() }
}

fn write_model<W: Write>(w: &mut W, model: &DdmModel) -> Result<()> {
    for net in model.networks() {
        for p in &net.params {
            put_f64s(w, p.data())?;
        }
        for rs in &net.running {
            put_f64s(w, &rs.mean)?;
            put_f64s(w, &rs.var)?;
        }
    }
    Ok(())
}

fn read_network<R: Read>(r: &mut R, spec: NetworkSpec) -> Result<Network> {
    let params = spec
        .param_shapes()
        .iter()
        .map(|s| Tensor::new(s, get_f64s(r, s.iter().product())?))
        .collect::<Result<Vec<_>>>()?;
    let mut running = Vec::new();
    for layer in &spec.layers {
        if let Layer::BatchNorm { channels } = *layer {
            running.push(RunningStats { mean: get_f64s(r, channels)?, var: get_f64s(r, channels)? });
        }
    }
    Network::from_parts(spec, params, running)
}

fn read_model<R: Read>(r: &mut R, header: ModelHeader) -> Result<DdmModel> {
    let mut nets = header.networks.into_iter().map(|s| read_network(r, s)).collect::<Result<Vec<_>>>()?;
    let dcnet = match nets.len() {
        3 => Some(nets.remove(0)),
        2 => None,
        n => return Err(Error::Format(format!("a model has two or three networks, found {n}"))),
    };
    let brnet = nets.pop().expect("two networks left");
    let hknet = nets.pop().expect("one network left");
    let model = DdmModel { m: header.m, n_lambda: header.n_lambda, dcnet, hknet, brnet };
    let expected = [Some(NetworkSpec::hknet(model.m)), Some(NetworkSpec::brnet(model.m, model.n_lambda))];
    if [Some(model.hknet.spec.clone()), Some(model.brnet.spec.clone())] != expected
        || model.dcnet.as_ref().is_some_and(|d| d.spec != NetworkSpec::dcnet(model.m))
    {
        return Err(Error::Format("stored architecture differs from this build".into()));
    }
    Ok(model)
}

pub fn write_checkpoint<W: Write>(w: &mut W, ck: &Checkpoint) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    let a = &ck.adam;
    let header = CheckpointHeader {
        config: ck.config.clone(),
        best_epoch: ck.best_epoch,
        best: model_header(&ck.best),
        last: model_header(&ck.last),
        adam: AdamHeader { lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps, step: a.step },
        history: ck.history.clone(),
    };
    put_json(w, &header)?;
    write_model(w, &ck.best)?;
    write_model(w, &ck.last)?;
    for t in a.first.iter().chain(&a.second) {
        put_f64s(w, t.data())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    expect_magic(r, CHECKPOINT_MAGIC)?;
    let header: CheckpointHeader = get_json(r)?;
    header.config.validate()?;
    let best = read_model(r, header.best)?;
    let last = read_model(r, header.last)?;
    let shapes: Vec<Vec<usize>> = last.params().iter().map(|p| p.shape().to_vec()).collect();
    let mut moments = || -> Result<Vec<Tensor>> {
        shapes.iter().map(|s| Tensor::new(s, get_f64s(r, s.iter().product())?)).collect()
    };
    let first = moments()?;
    let second = moments()?;
    expect_end(r)?;
    let h = header.adam;
    let adam = Adam { lr: h.lr, beta1: h.beta1, beta2: h.beta2, eps: h.eps, step: h.step, first, second };
    Ok(Checkpoint { config: header.config, best, best_epoch: header.best_epoch, last, adam, history: header.history })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ck)?;
    Ok(w.flush()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

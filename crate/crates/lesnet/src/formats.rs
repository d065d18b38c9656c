//! Binary file formats: DHITSNAP solution snapshots, CLOSETRN closure datasets
//! and NNCHKPT network checkpoints. All little-endian, all CRC32-protected.

use std::path::Path;

use lesnet_core::basis::{CartesianMesh, NodalBasis};
use lesnet_core::field::{field_len, SolutionField};
use lesnet_core::filter::{ClosureSample, FEATURE_CHANNELS, LABEL_CHANNELS};
use lesnet_core::gas::GasModel;
use lesnet_core::nn::{Arch, NetShape, Network};

use crate::error::{CliError, CliResult};
use crate::io::{read_file, write_atomic};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"DHITSNAP";
pub const DATASET_MAGIC: &[u8; 8] = b"CLOSETRN";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NNCHKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    fn f64(&mut self, v: f64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    fn f64s(&mut self, v: &[f64]) -> &mut Self {
        self.0.reserve(8 * v.len());
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
        self
    }
    /// Length-prefixed vector.
    fn vec(&mut self, v: &[f64]) -> &mut Self {
        self.u64(v.len() as u64).f64s(v)
    }
    fn str(&mut self, s: &str) -> &mut Self {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
        self
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Dec<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, pos: 0, path }
    }
    fn err(&self, msg: impl Into<String>) -> CliError {
        CliError::Format { path: self.path.to_path_buf(), msg: msg.into() }
    }
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> CliResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> CliResult<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.err("length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn len(&mut self) -> CliResult<usize> {
        let n = self.u64()?;
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(self.err("length prefix exceeds file size"));
        }
        Ok(n as usize)
    }
    fn vec(&mut self) -> CliResult<Vec<f64>> {
        let n = self.u64()?;
        if n.saturating_mul(8) > (self.buf.len() - self.pos) as u64 {
            return Err(self.err("length prefix exceeds file size"));
        }
        self.f64s(n as usize)
    }
    fn str(&mut self) -> CliResult<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.err("string is not UTF-8"))
    }
    fn magic(&mut self, magic: &[u8; 8]) -> CliResult<()> {
        if self.take(8)? != magic {
            return Err(self.err(format!("not a {} file", String::from_utf8_lossy(magic).trim_end_matches('\0'))));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(self.err(format!("unsupported format version {v}")));
        }
        Ok(())
    }
    /// Checks the CRC32 of everything read so far against the next stored word.
    fn header_crc(&mut self) -> CliResult<()> {
        let computed = crc32fast::hash(&self.buf[..self.pos]);
        if self.u32()? != computed {
            return Err(self.err("header checksum mismatch"));
        }
        Ok(())
    }
    fn finish(&self) -> CliResult<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Header, body CRC and body: the layout shared by the three formats.
fn seal(mut header: Enc, body: &[u8]) -> Vec<u8> {
    header.u32(crc32fast::hash(body));
    let crc = crc32fast::hash(&header.0);
    header.u32(crc);
    header.0.extend_from_slice(body);
    header.0
}

fn check_body(dec: &Dec<'_>, body_crc: u32) -> CliResult<()> {
    if crc32fast::hash(&dec.buf[dec.pos..]) != body_crc {
        return Err(dec.err("payload checksum mismatch"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    State,
    Tendency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotHeader {
    pub elements_per_dir: u32,
    pub degree: u32,
    pub domain_length: f64,
    pub gas: GasModel,
    pub time: f64,
    pub seed: u64,
    pub kind: PayloadKind,
}

/// One nodal solution or tendency field.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub data: Vec<f64>,
}

impl Snapshot {
    pub fn from_field(field: &SolutionField, gas: GasModel, seed: u64, kind: PayloadKind) -> Self {
        Self {
            header: SnapshotHeader {
                elements_per_dir: field.mesh.elements_per_dir as u32,
                degree: field.basis.degree as u32,
                domain_length: field.mesh.domain_length,
                gas,
                time: field.time,
                seed,
                kind,
            },
            data: field.data.clone(),
        }
    }

    pub fn to_field(&self) -> CliResult<SolutionField> {
        let h = &self.header;
        let mesh = CartesianMesh::new(h.elements_per_dir as usize, h.domain_length)?;
        let basis = NodalBasis::new(h.degree as usize)?;
        Ok(SolutionField::from_data(mesh, basis, self.data.clone(), h.time)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut head = Enc::default();
        head.0.extend_from_slice(SNAPSHOT_MAGIC);
        head.u32(FORMAT_VERSION)
            .u32(match h.kind {
                PayloadKind::State => 0,
                PayloadKind::Tendency => 1,
            })
            .u32(h.elements_per_dir)
            .u32(h.degree)
            .f64(h.domain_length)
            .f64(h.gas.gamma)
            .f64(h.gas.gas_constant)
            .f64(h.gas.prandtl)
            .f64(h.gas.mu0)
            .f64(h.time)
            .u64(h.seed)
            .u64(self.data.len() as u64);
        let mut body = Enc::default();
        body.f64s(&self.data);
        seal(head, &body.0)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> CliResult<Self> {
        let mut d = Dec::new(bytes, path);
        d.magic(SNAPSHOT_MAGIC)?;
        let kind = match d.u32()? {
            0 => PayloadKind::State,
            1 => PayloadKind::Tendency,
            k => return Err(d.err(format!("unknown payload kind {k}"))),
        };
        let (ne, deg) = (d.u32()?, d.u32()?);
        let domain_length = d.f64()?;
        let gas = GasModel { gamma: d.f64()?, gas_constant: d.f64()?, prandtl: d.f64()?, mu0: d.f64()? };
        let (time, seed, n) = (d.f64()?, d.u64()?, d.u64()?);
        let body_crc = d.u32()?;
        d.header_crc()?;
        let mesh = CartesianMesh::new(ne as usize, domain_length).map_err(|e| d.err(e.to_string()))?;
        let basis = NodalBasis::new(deg as usize).map_err(|e| d.err(e.to_string()))?;
        let expected = field_len(&mesh, &basis);
        if n as usize != expected || bytes.len() - d.pos != 8 * expected {
            return Err(d.err(format!("payload holds {n} values, mesh needs {expected}")));
        }
        check_body(&d, body_crc)?;
        let data = d.f64s(expected)?;
        d.finish()?;
        let header = SnapshotHeader { elements_per_dir: ne, degree: deg, domain_length, gas, time, seed, kind };
        Ok(Self { header, data })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

/// Closure samples of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub p: usize,
    pub samples: Vec<ClosureSample>,
}

impl Dataset {
    pub fn run_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.run).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p3 = self.p * self.p * self.p;
        let mut head = Enc::default();
        head.0.extend_from_slice(DATASET_MAGIC);
        head.u32(FORMAT_VERSION)
            .u32(self.p as u32)
            .u32(FEATURE_CHANNELS as u32)
            .u32(LABEL_CHANNELS as u32)
            .u64(self.samples.len() as u64);
        let mut body = Enc::default();
        for s in &self.samples {
            body.u32(s.run).u32(s.element).f64(s.time);
        }
        for s in &self.samples {
            debug_assert_eq!(s.features.len(), FEATURE_CHANNELS * p3);
            body.f64s(&s.features).f64s(&s.labels);
        }
        seal(head, &body.0)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> CliResult<Self> {
        let mut d = Dec::new(bytes, path);
        d.magic(DATASET_MAGIC)?;
        let p = d.u32()? as usize;
        let (nf, nl) = (d.u32()? as usize, d.u32()? as usize);
        let count = d.u64()?;
        let body_crc = d.u32()?;
        d.header_crc()?;
        if nf != FEATURE_CHANNELS || nl != LABEL_CHANNELS {
            return Err(d.err(format!("expected {FEATURE_CHANNELS} feature and {LABEL_CHANNELS} label channels, got {nf} and {nl}")));
        }
        let p3 = p * p * p;
        let per_sample = 16 + 8 * (nf + nl) * p3;
        if p == 0 || (bytes.len() - d.pos) as u64 != count.saturating_mul(per_sample as u64) {
            return Err(d.err(format!("payload size does not match {count} samples of {p}^3 sites")));
        }
        check_body(&d, body_crc)?;
        let count = count as usize;
        let mut meta = Vec::with_capacity(count);
        for _ in 0..count {
            meta.push((d.u32()?, d.u32()?, d.f64()?));
        }
        let mut samples = Vec::with_capacity(count);
        for (run, element, time) in meta {
            let features = d.f64s(nf * p3)?;
            let labels = d.f64s(nl * p3)?;
            samples.push(ClosureSample { features, labels, run, time, element });
        }
        d.finish()?;
        Ok(Self { p, samples })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

/// Trained network with its training settings and the state needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    /// Effective training config as `key = value` lines.
    pub config_echo: String,
    pub seed: u64,
    /// Epochs completed; with `seed` this fixes the next shuffle order.
    pub epochs_done: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.network;
        let sh = &net.shape;
        let mut body = Enc::default();
        body.str(&sh.arch.name())
            .u32(sh.in_channels as u32)
            .u32(sh.out_channels as u32)
            .u32(sh.nf1 as u32)
            .u32(sh.nf2 as u32)
            .vec(&net.params);
        let bns = net.batch_norms();
        body.u32(bns.len() as u32);
        for bn in bns {
            body.f64(bn.momentum).f64(bn.eps).vec(&bn.running_mean).vec(&bn.running_var);
        }
        let a = &net.adam;
        body.f64(a.beta1).f64(a.beta2).f64(a.eps).u64(a.step).vec(&a.m).vec(&a.v);
        body.vec(&net.scaling.input).vec(&net.scaling.output);
        body.str(&self.config_echo).u64(self.seed).u64(self.epochs_done);
        let mut head = Enc::default();
        head.0.extend_from_slice(CHECKPOINT_MAGIC);
        head.u32(FORMAT_VERSION).u64(body.0.len() as u64);
        seal(head, &body.0)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> CliResult<Self> {
        let mut d = Dec::new(bytes, path);
        d.magic(CHECKPOINT_MAGIC)?;
        let body_len = d.u64()?;
        let body_crc = d.u32()?;
        d.header_crc()?;
        if (bytes.len() - d.pos) as u64 != body_len {
            return Err(d.err("body length mismatch"));
        }
        check_body(&d, body_crc)?;
        let tag = d.str()?;
        let arch = Arch::parse(&tag).map_err(|e| d.err(e.to_string()))?;
        let (cin, cout, nf1, nf2) = (d.u32()? as usize, d.u32()? as usize, d.u32()? as usize, d.u32()? as usize);
        let shape = NetShape::new(arch, nf1, nf2).with_channels(cin, cout);
        let mut net = Network::build(shape, 0).map_err(|e| d.err(e.to_string()))?;
        let params = d.vec()?;
        if params.len() != net.params.len() {
            return Err(d.err(format!("{} parameters stored, {tag} needs {}", params.len(), net.params.len())));
        }
        net.params = params;
        let nbn = d.u32()? as usize;
        if nbn != net.batch_norms().len() {
            return Err(d.err("batch-norm layer count mismatch"));
        }
        for bn in net.batch_norms_mut() {
            bn.momentum = d.f64()?;
            bn.eps = d.f64()?;
            let (mean, var) = (d.vec()?, d.vec()?);
            if mean.len() != bn.channels || var.len() != bn.channels {
                return Err(d.err("batch-norm statistics have the wrong width"));
            }
            bn.running_mean = mean;
            bn.running_var = var;
        }
        let a = &mut net.adam;
        a.beta1 = d.f64()?;
        a.beta2 = d.f64()?;
        a.eps = d.f64()?;
        a.step = d.u64()?;
        a.m = d.vec()?;
        a.v = d.vec()?;
        if a.m.len() != net.params.len() || a.v.len() != net.params.len() {
            return Err(d.err("optimizer moments have the wrong length"));
        }
        net.scaling.input = d.vec()?;
        net.scaling.output = d.vec()?;
        if net.scaling.input.len() != cin || net.scaling.output.len() != cout {
            return Err(d.err("scaling vectors have the wrong length"));
        }
        let config_echo = d.str()?;
        let (seed, epochs_done) = (d.u64()?, d.u64()?);
        d.finish()?;
        Ok(Self { network: net, config_echo, seed, epochs_done })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot() -> Snapshot {
        let mesh = CartesianMesh::periodic_box(2).unwrap();
        let basis = NodalBasis::new(1).unwrap();
        let n = field_len(&mesh, &basis);
        let data = (0..n).map(|i| 1.0 + (i as f64 * 0.37).sin()).collect();
        let field = SolutionField::from_data(mesh, basis, data, 1.25).unwrap();
        Snapshot::from_field(&field, GasModel { mu0: 0.05, ..GasModel::default() }, 9, PayloadKind::Tendency)
    }

    #[test]
    fn snapshot_rejects_corruption() {
        let bytes = snapshot().to_bytes();
        let p = Path::new("x.dhit");
        assert_eq!(Snapshot::from_bytes(&bytes, p).unwrap(), snapshot());
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(Snapshot::from_bytes(&bad, p).unwrap_err().to_string().contains("header checksum"));
        let mut bad = bytes.clone();
        *bad.last_mut().unwrap() ^= 1;
        assert!(Snapshot::from_bytes(&bad, p).unwrap_err().to_string().contains("payload checksum"));
        assert!(Snapshot::from_bytes(&bytes[..bytes.len() - 8], p).is_err());
        assert!(Snapshot::from_bytes(b"CLOSETRN\x01\0\0\0", p).unwrap_err().to_string().contains("not a DHITSNAP"));
    }

    #[test]
    fn snapshot_payload_length_matches_mesh() {
        let s = snapshot();
        // header: magic, four u32, six f64, seed, length, two CRCs = 96 bytes
        assert_eq!(s.to_bytes().len(), 96 + 2 * 2 * 2 * 8 * 5 * 8);
    }
}

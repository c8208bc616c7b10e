//! Versioned binary sample store: a self-describing JSON header followed by
//! fixed-width little-endian records and a trailing SHA-256 checksum.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distributions::OutcomeFamily;
use crate::error::{Error, Result};
use crate::inference::MixtureSnapshot;
use crate::kernel::{KernelAtom, VariableLayout};

pub const STORE_MAGIC: &[u8; 8] = b"DPCSTORE";
pub const STORE_VERSION: u32 = 1;

/// Store header: everything needed to interpret the records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub family: OutcomeFamily,
    pub p_binary: usize,
    pub p_continuous: usize,
    pub n_observations: u64,
    pub mode: String,
    pub truncation: u32,
    pub iterations: u64,
    pub burnin: u64,
    pub thin: u64,
    pub seed: u64,
}

impl StoreMeta {
    pub fn layout(&self) -> VariableLayout {
        VariableLayout::new(self.family, self.p_binary, self.p_continuous)
    }
}

/// One cluster inside a retained draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub count: u32,
    pub weight: f64,
    pub xi: Vec<f64>,
    /// Full mean vector (response entry structurally zero).
    pub mu_star: Vec<f64>,
    /// Row-major `q x q` covariance.
    pub sigma_star: Vec<f64>,
    /// Latent-position expansion variances.
    pub d_latent: Vec<f64>,
}

/// One retained posterior draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub sweep: u64,
    pub alpha: f64,
    pub clusters: Vec<ClusterRecord>,
}

impl DrawRecord {
    /// Reconstruct a weight/atom snapshot for conditional-pmf evaluation.
    pub fn snapshot(&self, layout: VariableLayout) -> Result<MixtureSnapshot> {
        let q = layout.q();
        let mut weights = Vec::with_capacity(self.clusters.len());
        let mut atoms = Vec::with_capacity(self.clusters.len());
        for c in &self.clusters {
            let mu = nalgebra::DVector::from_column_slice(&c.mu_star);
            let sigma = nalgebra::DMatrix::from_row_slice(q, q, &c.sigma_star);
            atoms.push(KernelAtom::new(layout, c.xi.clone(), mu, sigma)?);
            weights.push(c.weight);
        }
        Ok(MixtureSnapshot { weights, atoms })
    }
}

/// In-memory posterior sample store.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleStore {
    pub meta: StoreMeta,
    pub draws: Vec<DrawRecord>,
}

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        ByteWriter { buf: Vec::new() }
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Store("truncated store file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.f64()?);
        }
        Ok(v)
    }
}

/// Serialize the store to bytes (header + records + checksum).
pub fn store_to_bytes(store: &SampleStore) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(STORE_MAGIC);
    w.u32(STORE_VERSION);
    let header =
        serde_json::to_vec(&store.meta).map_err(|e| Error::Store(format!("header: {e}")))?;
    w.u32(header.len() as u32);
    w.buf.extend_from_slice(&header);

    let layout = store.meta.layout();
    let q = layout.q();
    let xi_dim = layout.family.xi_dim();
    let ld = layout.latent_dim();

    w.u64(store.draws.len() as u64);
    for draw in &store.draws {
        w.u64(draw.sweep);
        w.f64(draw.alpha);
        w.u32(draw.clusters.len() as u32);
        for c in &draw.clusters {
            if c.xi.len() != xi_dim
                || c.mu_star.len() != q
                || c.sigma_star.len() != q * q
                || c.d_latent.len() != ld
            {
                return Err(Error::Store("record shape mismatch".into()));
            }
            w.u32(c.count);
            w.f64(c.weight);
            w.f64s(&c.xi);
            w.f64s(&c.mu_star);
            w.f64s(&c.sigma_star);
            w.f64s(&c.d_latent);
        }
    }
    let digest = Sha256::digest(&w.buf);
    w.buf.extend_from_slice(&digest);
    Ok(w.buf)
}

/// Parse a store from bytes, verifying the version and checksum.
pub fn store_from_bytes(bytes: &[u8]) -> Result<SampleStore> {
    if bytes.len() < 8 + 4 + 4 + 32 {
        return Err(Error::Store("file too short to be a sample store".into()));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != checksum {
        return Err(Error::Store("checksum mismatch (corrupt store)".into()));
    }
    let mut r = ByteReader { buf: body, pos: 0 };
    if r.take(8)? != STORE_MAGIC {
        return Err(Error::Store("bad magic (not a sample store)".into()));
    }
    let version = r.u32()?;
    if version != STORE_VERSION {
        return Err(Error::Store(format!(
            "store version {version} unsupported (expected {STORE_VERSION})"
        )));
    }
    let header_len = r.u32()? as usize;
    let meta: StoreMeta = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::Store(format!("header: {e}")))?;
    let layout = meta.layout();
    let q = layout.q();
    let xi_dim = layout.family.xi_dim();
    let ld = layout.latent_dim();

    let n_draws = r.u64()? as usize;
    let mut draws = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let sweep = r.u64()?;
        let alpha = r.f64()?;
        let t = r.u32()? as usize;
        let mut clusters = Vec::with_capacity(t);
        for _ in 0..t {
            let count = r.u32()?;
            let weight = r.f64()?;
            let xi = r.f64s(xi_dim)?;
            let mu_star = r.f64s(q)?;
            let sigma_star = r.f64s(q * q)?;
            let d_latent = r.f64s(ld)?;
            clusters.push(ClusterRecord {
                count,
                weight,
                xi,
                mu_star,
                sigma_star,
                d_latent,
            });
        }
        draws.push(DrawRecord {
            sweep,
            alpha,
            clusters,
        });
    }
    if r.pos != body.len() {
        return Err(Error::Store("trailing bytes after records".into()));
    }
    Ok(SampleStore { meta, draws })
}

pub fn persist_sample_store(store: &SampleStore, path: &Path) -> Result<()> {
    let bytes = store_to_bytes(store)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_sample_store(path: &Path) -> Result<SampleStore> {
    let bytes = std::fs::read(path)?;
    store_from_bytes(&bytes)
}

/// SHA-256 hex digest, used for data checksums in run manifests.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_store() -> SampleStore {
        let meta = StoreMeta {
            family: OutcomeFamily::Poisson,
            p_binary: 0,
            p_continuous: 1,
            n_observations: 10,
            mode: "truncated".into(),
            truncation: 3,
            iterations: 100,
            burnin: 50,
            thin: 5,
            seed: 7,
        };
        let cluster = ClusterRecord {
            count: 4,
            weight: 0.5,
            xi: vec![2.0],
            mu_star: vec![0.0, 1.5],
            sigma_star: vec![1.0, 0.3, 0.3, 2.0],
            d_latent: vec![1.7],
        };
        SampleStore {
            meta,
            draws: vec![DrawRecord {
                sweep: 50,
                alpha: 1.2,
                clusters: vec![cluster.clone(), cluster],
            }],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let store = toy_store();
        let bytes = store_to_bytes(&store).unwrap();
        let back = store_from_bytes(&bytes).unwrap();
        assert_eq!(store, back);
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = store_to_bytes(&toy_store()).unwrap();
        let cut = &bytes[..bytes.len() - 10];
        assert!(matches!(store_from_bytes(cut), Err(Error::Store(_))));
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = store_to_bytes(&toy_store()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        let err = store_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = store_to_bytes(&toy_store()).unwrap();
        bytes[8] = 99; // version field
        let body_len = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..body_len]);
        let n = bytes.len();
        bytes[n - 32..].copy_from_slice(&digest);
        let err = store_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn snapshot_reconstructs_atoms() {
        let store = toy_store();
        let snap = store.draws[0].snapshot(store.meta.layout()).unwrap();
        assert_eq!(snap.atoms.len(), 2);
        assert_eq!(snap.weights, vec![0.5, 0.5]);
        assert_eq!(snap.atoms[0].xi(), &[2.0]);
    }
}

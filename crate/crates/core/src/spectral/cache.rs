//! Binary sidecar cache of decompositions keyed by (surface id, content hash, q).
//!
//! Layout (little endian): magic `SPDC`, u32 version, u32 id length, id bytes,
//! 32-byte content hash, u64 q, u64 n, (q+1) eigenvalues, n·(q+1)
//! eigenfunction entries column-major, 32-byte SHA-256 of everything before.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use super::decomposition::SpectralDecomposition;
use crate::error::{Error, Result};
use crate::geometry::{LaplacianPair, Surface};

const MAGIC: &[u8; 4] = b"SPDC";
const VERSION: u32 = 1;

/// SHA-256 over vertex coordinates and face indices.
pub fn content_hash(surface: &Surface) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in surface.vertices() {
        for c in v.iter() {
            h.update(c.to_le_bytes());
        }
    }
    for f in surface.faces() {
        for &i in f {
            h.update((i as u64).to_le_bytes());
        }
    }
    h.finalize().into()
}

pub fn save_cached(path: impl AsRef<Path>, surface: &Surface, decomp: &SpectralDecomposition) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let id = surface.id().as_bytes();
    buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
    buf.extend_from_slice(id);
    buf.extend_from_slice(&content_hash(surface));
    let phi = decomp.eigenfunctions();
    buf.extend_from_slice(&(decomp.q() as u64).to_le_bytes());
    buf.extend_from_slice(&(phi.nrows() as u64).to_le_bytes());
    for v in decomp.eigenvalues() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in phi.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest: [u8; 32] = Sha256::digest(&buf).into();
    buf.extend_from_slice(&digest);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Returns the cached decomposition when the key matches, `None` otherwise.
pub fn load_cached(
    path: impl AsRef<Path>,
    surface: &Surface,
    laplacian: impl Into<Arc<LaplacianPair>>,
    q: usize,
) -> Result<Option<SpectralDecomposition>> {
    let path = path.as_ref();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    if bytes.len() < 32 + 4 {
        return Err(Error::Format("decomposition cache truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Format("decomposition cache checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a decomposition cache".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let id_len = r.u32()? as usize;
    let id = r.take(id_len)?;
    let hash = r.take(32)?;
    let cached_q = r.u64()? as usize;
    let n = r.u64()? as usize;
    if id != surface.id().as_bytes() || hash != content_hash(surface) || cached_q != q || n != surface.n_vertices() {
        return Ok(None);
    }
    let values = (0..=q).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let data = (0..n * (q + 1)).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let phi = DMatrix::from_vec(n, q + 1, data);
    Ok(Some(SpectralDecomposition::from_parts(values, phi, laplacian.into())?))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.buf.len() {
            return Err(Error::Format("decomposition cache truncated".into()));
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
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
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cotangent_laplacian, primitives::icosphere};
    use crate::spectral::eigendecompose;

    #[test]
    fn cache_round_trip_and_key_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.spdc");
        let s = icosphere(2, 1.0);
        let lap = Arc::new(cotangent_laplacian(&s).unwrap());
        let d = eigendecompose(lap.clone(), 8).unwrap();
        save_cached(&path, &s, &d).unwrap();
        let back = load_cached(&path, &s, lap.clone(), 8).unwrap().unwrap();
        assert_eq!(back.eigenvalues(), d.eigenvalues());
        assert_eq!(back.eigenfunctions(), d.eigenfunctions());
        assert!(load_cached(&path, &s, lap.clone(), 7).unwrap().is_none());
        let moved = s.with_vertices(s.vertices().iter().map(|v| v * 1.01).collect()).unwrap();
        assert!(load_cached(&path, &moved, lap.clone(), 8).unwrap().is_none());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_cached(&path, &s, lap, 8).is_err());
    }
}

//! `.hkrn` binary container.
//!
//! Little-endian throughout; f64 as IEEE-754.
//!
//! ```text
//! magic      4 bytes "HKRN"
//! version    u32
//! flags      u32   bit 0: Y present, bit 1: snapshot matrix instead of kernel
//! N, r, s    u64 × 3   (snapshot matrix: r = s)
//! vessels    u32
//! m          u32
//! period     f64
//! threshold  f64   (NaN for snapshot matrices)
//! per vessel: id u32, n u32, length f64, x[n] f64
//! t[m]       f64
//! σ[s]       f64   (kernel only)
//! λ[r]       f64   (kernel only)
//! Φ          N × r f64, row-major (snapshot matrix: U, N × s)
//! Y          s × r f64, row-major (when bit 0 set)
//! crc32      u32 over every preceding byte
//! ```

use std::path::Path;

use nalgebra::DMatrix;

use super::LowRankKernel;
use crate::ensemble::{EnsembleManifest, SnapshotMatrix};
use crate::error::{Error, Result};
use crate::grid::{SpaceTimeGrid, VesselGrid};

pub const MAGIC: &[u8; 4] = b"HKRN";
pub const FORMAT_VERSION: u32 = 1;

const HAS_RIGHT_VECTORS: u32 = 1;
const SNAPSHOTS: u32 = 2;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
    fn row_major(&mut self, m: &DMatrix<f64>) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)]);
            }
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    artifact: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::format(self.artifact, "file is truncated"));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::format(self.artifact, "dimension overflows usize"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.artifact, "dimension overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn row_major(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format(self.artifact, "dimension overflow"))?;
        let v = self.f64s(n)?;
        Ok(DMatrix::from_row_slice(rows, cols, &v))
    }
}

struct Header {
    flags: u32,
    n: usize,
    r: usize,
    s: usize,
    threshold: f64,
    grid: SpaceTimeGrid,
}

fn encode(flags: u32, n: usize, r: usize, s: usize, threshold: f64, grid: &SpaceTimeGrid) -> Writer {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(flags);
    w.u64(n as u64);
    w.u64(r as u64);
    w.u64(s as u64);
    w.u32(grid.vessels.len() as u32);
    w.u32(grid.m() as u32);
    w.f64(grid.period);
    w.f64(threshold);
    for v in &grid.vessels {
        w.u32(v.id);
        w.u32(v.x.len() as u32);
        w.f64(v.length);
        w.f64s(&v.x);
    }
    w.f64s(&grid.times);
    w
}

fn finish(mut w: Writer, path: &Path) -> Result<()> {
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    std::fs::write(path, &w.0).map_err(|e| Error::io(path, e))
}

fn decode<'a>(data: &'a [u8], artifact: &'a str) -> Result<(Header, Reader<'a>)> {
    if data.len() < 12 {
        return Err(Error::format(artifact, "file is truncated"));
    }
    if &data[..4] != MAGIC {
        return Err(Error::format(artifact, "bad magic bytes; not an .hkrn container"));
    }
    let version = u32::from_le_bytes(data[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::format(
            artifact,
            format!("incompatible format version {version}; this build reads version {FORMAT_VERSION}"),
        ));
    }
    let body = &data[..data.len() - 4];
    let stored = u32::from_le_bytes(data[data.len() - 4..].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::format(artifact, "checksum mismatch (file corrupt or truncated)"));
    }
    let mut rd = Reader {
        data: body,
        pos: 8,
        artifact,
    };
    let flags = rd.u32()?;
    let (n, r, s) = (rd.u64()?, rd.u64()?, rd.u64()?);
    let nv = rd.u32()? as usize;
    let m = rd.u32()? as usize;
    let period = rd.f64()?;
    let threshold = rd.f64()?;
    let mut vessels = Vec::with_capacity(nv.min(1 << 16));
    for _ in 0..nv {
        let id = rd.u32()?;
        let count = rd.u32()? as usize;
        let length = rd.f64()?;
        let x = rd.f64s(count)?;
        vessels.push(VesselGrid { id, length, x });
    }
    let times = rd.f64s(m)?;
    let grid = SpaceTimeGrid::new(vessels, period, m).map_err(|e| Error::format(artifact, e.to_string()))?;
    if grid.times != times {
        return Err(Error::format(artifact, "time grid does not match period and m"));
    }
    if grid.len() != n {
        return Err(Error::format(artifact, format!("N = {n} but the grid has {} points", grid.len())));
    }
    Ok((
        Header {
            flags,
            n,
            r,
            s,
            threshold,
            grid,
        },
        rd,
    ))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn done(rd: &Reader) -> Result<()> {
    if rd.pos != rd.data.len() {
        return Err(Error::format(rd.artifact, "trailing bytes after payload"));
    }
    Ok(())
}

pub fn save_kernel(k: &LowRankKernel, path: &Path) -> Result<()> {
    let flags = if k.right_vectors.is_some() { HAS_RIGHT_VECTORS } else { 0 };
    let mut w = encode(flags, k.grid.len(), k.rank(), k.samples, k.energy_threshold, &k.grid);
    w.f64s(&k.singular_values);
    w.f64s(&k.eigenvalues);
    w.row_major(&k.basis);
    if let Some(y) = &k.right_vectors {
        w.row_major(y);
    }
    finish(w, path)
}

pub fn load_kernel(path: &Path) -> Result<LowRankKernel> {
    let data = read(path)?;
    let artifact = path.display().to_string();
    let (h, mut rd) = decode(&data, &artifact)?;
    if h.flags & SNAPSHOTS != 0 {
        return Err(Error::format(&artifact, "container holds a snapshot matrix, not a kernel"));
    }
    let sigma = rd.f64s(h.s)?;
    let lambda = rd.f64s(h.r)?;
    let basis = rd.row_major(h.n, h.r)?;
    let y = if h.flags & HAS_RIGHT_VECTORS != 0 {
        Some(rd.row_major(h.s, h.r)?)
    } else {
        None
    };
    done(&rd)?;
    LowRankKernel::from_parts(h.grid, basis, lambda, sigma, h.s, h.threshold, y).map_err(|e| Error::format(&artifact, e.to_string()))
}

/// Snapshot values and grid; the manifest is stored separately.
pub fn save_snapshots(u: &SnapshotMatrix, path: &Path) -> Result<()> {
    let s = u.values.ncols();
    let mut w = encode(SNAPSHOTS, u.grid.len(), s, s, f64::NAN, &u.grid);
    w.row_major(&u.values);
    finish(w, path)
}

pub fn load_snapshots(path: &Path, manifest: EnsembleManifest) -> Result<SnapshotMatrix> {
    let data = read(path)?;
    let artifact = path.display().to_string();
    let (h, mut rd) = decode(&data, &artifact)?;
    if h.flags & SNAPSHOTS == 0 {
        return Err(Error::format(&artifact, "container holds a kernel, not a snapshot matrix"));
    }
    let values = rd.row_major(h.n, h.s)?;
    done(&rd)?;
    if manifest.samples.len() != h.s {
        return Err(Error::format(
            &artifact,
            format!("{} columns but the manifest lists {} samples", h.s, manifest.samples.len()),
        ));
    }
    Ok(SnapshotMatrix {
        values,
        grid: h.grid,
        manifest,
    })
}

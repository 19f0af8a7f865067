//! Wavefield data cube and its `WVC1` binary representation.
//!
//! A [`DataCube`] stores the deflection `w(x, y, t)` sampled on an
//! `n1 × n2` node grid at `t_len` instants. Samples are laid out time-major;
//! within a time slice the x index runs fastest, so
//! `value(l, m, t) = values[t·n1·n2 + m·n1 + l]`.
//!
//! The on-disk layout is little-endian throughout:
//!
//! | offset | size | content                      |
//! |--------|------|------------------------------|
//! | 0      | 4    | magic `WVC1`                 |
//! | 4      | 4    | version (`u32`, always 1)    |
//! | 8      | 12   | `n1`, `n2`, `t_len` (`u32`)  |
//! | 20     | 16   | `dx`, `dt` (`f64`)           |
//! | 36     | 8·N  | payload (`f64`)              |
//!
//! Anything else (material constants, excitation, defects) goes into a
//! `.meta` sidecar of `key = value` lines, see [`Metadata`].

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WVC1";
pub const VERSION: u32 = 1;
/// Magic + version + three `u32` dims + two `f64` spacings.
pub const HEADER_LEN: u64 = 8 + 3 * 4 + 2 * 8;

/// Node index on the measurement grid, `l` along x and `m` along y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridPoint {
    pub l: usize,
    pub m: usize,
}

impl GridPoint {
    pub fn new(l: usize, m: usize) -> Self {
        Self { l, m }
    }

    pub fn check_bounds(&self, n1: usize, n2: usize) -> Result<()> {
        if self.l >= n1 {
            return Err(Error::Bounds {
                what: "l",
                index: self.l,
                limit: n1,
            });
        }
        if self.m >= n2 {
            return Err(Error::Bounds {
                what: "m",
                index: self.m,
                limit: n2,
            });
        }
        Ok(())
    }
}

/// A single `n1 × n2` time slice (x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Field2 {
    n1: usize,
    n2: usize,
    values: Vec<f64>,
}

impl Field2 {
    pub fn new(n1: usize, n2: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n1 * n2 {
            return Err(Error::Shape {
                expected: format!("{} values", n1 * n2),
                got: format!("{} values", values.len()),
            });
        }
        Ok(Self { n1, n2, values })
    }

    pub fn zeros(n1: usize, n2: usize) -> Self {
        Self {
            n1,
            n2,
            values: vec![0.0; n1 * n2],
        }
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    #[inline]
    pub fn get(&self, l: usize, m: usize) -> f64 {
        self.values[m * self.n1 + l]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Deflection history on a regular grid. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCube {
    n1: usize,
    n2: usize,
    t_len: usize,
    dx: f64,
    dt: f64,
    values: Vec<f64>,
}

impl DataCube {
    /// Validates every invariant: `n1, n2 ≥ 2`, `t_len ≥ 1`, positive finite
    /// spacings, exact payload length and finite samples.
    pub fn new(n1: usize, n2: usize, t_len: usize, dx: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        validate(n1, n2, t_len, dx, dt, &values)?;
        Ok(Self {
            n1,
            n2,
            t_len,
            dx,
            dt,
            values,
        })
    }

    /// Builds a cube by evaluating `f(l, m, t)` at every sample.
    pub fn from_fn(
        n1: usize,
        n2: usize,
        t_len: usize,
        dx: f64,
        dt: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(n1 * n2 * t_len);
        for t in 0..t_len {
            for m in 0..n2 {
                for l in 0..n1 {
                    values.push(f(l, m, t));
                }
            }
        }
        Self::new(n1, n2, t_len, dx, dt, values)
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, l: usize, m: usize, t: usize) -> f64 {
        self.values[(t * self.n2 + m) * self.n1 + l]
    }

    /// Contiguous samples of time slice `t`.
    pub fn slice_values(&self, t: usize) -> &[f64] {
        let n = self.n1 * self.n2;
        &self.values[t * n..(t + 1) * n]
    }

    pub fn slice_at(&self, t_index: usize) -> Result<Field2> {
        if t_index >= self.t_len {
            return Err(Error::Bounds {
                what: "t_index",
                index: t_index,
                limit: self.t_len,
            });
        }
        Ok(Field2 {
            n1: self.n1,
            n2: self.n2,
            values: self.slice_values(t_index).to_vec(),
        })
    }

    /// Time history of a single node.
    pub fn history(&self, p: GridPoint) -> Result<Vec<f64>> {
        p.check_bounds(self.n1, self.n2)?;
        Ok((0..self.t_len).map(|t| self.get(p.l, p.m, t)).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// Byte size of the `WVC1` encoding.
    pub fn encoded_len(&self) -> u64 {
        HEADER_LEN + 8 * self.values.len() as u64
    }
}

fn validate(n1: usize, n2: usize, t_len: usize, dx: f64, dt: f64, values: &[f64]) -> Result<()> {
    if n1 < 2 || n2 < 2 {
        return Err(Error::Data(format!("grid must be at least 2x2, got {n1}x{n2}")));
    }
    if t_len < 1 {
        return Err(Error::Data("t_len must be at least 1".into()));
    }
    if !(dx.is_finite() && dx > 0.0) || !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Data(format!(
            "spacings must be positive and finite (dx={dx}, dt={dt})"
        )));
    }
    for dim in [n1, n2, t_len] {
        if u32::try_from(dim).is_err() {
            return Err(Error::Data(format!("dimension {dim} does not fit in u32")));
        }
    }
    let expected = n1 as u64 * n2 as u64 * t_len as u64;
    if values.len() as u64 != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: values.len() as u64,
        });
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite sample at payload index {k}")));
    }
    Ok(())
}

struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes).map_err(|source| Error::Io {
            offset: self.written,
            source,
        })?;
        self.written += bytes.len() as u64;
        Ok(())
    }
}

/// Serializes `cube` as `WVC1` and returns the number of bytes written.
pub fn write_cube<W: Write>(cube: &DataCube, destination: W) -> Result<u64> {
    validate(cube.n1, cube.n2, cube.t_len, cube.dx, cube.dt, &cube.values)?;
    let mut out = CountingWriter {
        inner: destination,
        written: 0,
    };
    out.put(MAGIC)?;
    out.put(&VERSION.to_le_bytes())?;
    for dim in [cube.n1, cube.n2, cube.t_len] {
        out.put(&(dim as u32).to_le_bytes())?;
    }
    out.put(&cube.dx.to_le_bytes())?;
    out.put(&cube.dt.to_le_bytes())?;
    // Chunked so large cubes don't need a second full-size buffer.
    let mut buf = Vec::with_capacity(8 * 4096);
    for chunk in cube.values.chunks(4096) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.put(&buf)?;
    }
    out.inner.flush().map_err(|source| Error::Io {
        offset: out.written,
        source,
    })?;
    Ok(out.written)
}

fn read_exact_at<R: Read>(src: &mut R, buf: &mut [u8], offset: &mut u64) -> Result<()> {
    src.read_exact(buf).map_err(|source| {
        if source.kind() == io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated header at byte {offset}"))
        } else {
            Error::Io {
                offset: *offset,
                source,
            }
        }
    })?;
    *offset += buf.len() as u64;
    Ok(())
}

/// Parses a `WVC1` stream, validating the header, the payload length and
/// every sample.
pub fn read_cube<R: Read>(mut source: R) -> Result<DataCube> {
    let mut offset = 0u64;
    let mut magic = [0u8; 4];
    read_exact_at(&mut source, &mut magic, &mut offset)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"WVC1\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut word = [0u8; 4];
    read_exact_at(&mut source, &mut word, &mut offset)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        read_exact_at(&mut source, &mut word, &mut offset)?;
        *d = u32::from_le_bytes(word) as usize;
    }
    let mut dword = [0u8; 8];
    read_exact_at(&mut source, &mut dword, &mut offset)?;
    let dx = f64::from_le_bytes(dword);
    read_exact_at(&mut source, &mut dword, &mut offset)?;
    let dt = f64::from_le_bytes(dword);

    let [n1, n2, t_len] = dims;
    let expected = n1 as u64 * n2 as u64 * t_len as u64;
    let mut payload = Vec::new();
    source
        .read_to_end(&mut payload)
        .map_err(|source| Error::Io { offset, source })?;
    if payload.len() % 8 != 0 || payload.len() as u64 / 8 != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: payload.len() as u64 / 8,
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    DataCube::new(n1, n2, t_len, dx, dt, values)
}

pub fn save_cube(cube: &DataCube, path: &Path) -> Result<u64> {
    let file = fs::File::create(path).map_err(|source| Error::Io { offset: 0, source })?;
    write_cube(cube, io::BufWriter::new(file))
}

pub fn load_cube(path: &Path) -> Result<DataCube> {
    let file = fs::File::open(path).map_err(|source| Error::Io { offset: 0, source })?;
    read_cube(io::BufReader::new(file))
}

/// Ordered `key = value` sidecar.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (k, v) = trimmed
                .split_once('=')
                .ok_or_else(|| Error::config(i + 1, 1, "expected `key = value`"))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }
}

/// `cube.wvc` → `cube.wvc.meta`.
pub fn meta_path(cube_path: &Path) -> PathBuf {
    let mut s = cube_path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

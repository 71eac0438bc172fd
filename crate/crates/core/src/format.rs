//! Binary ensemble container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic "PGUE" | version u16 | n_real u32 | n_vars u16 | nx u32 | ny u32 | nz u32
//! per variable: name length u8, UTF-8 name bytes
//! payload: f32, realization-major, then variable-major, then x-fastest blocks
//! optional trailing auxiliary sections: tag [u8; 4] | length u64 | bytes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const MAGIC: &[u8; 4] = b"PGUE";
pub const FORMAT_VERSION: u16 = 1;

/// Opaque tagged blob stored after the payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuxSection {
    pub tag: [u8; 4],
    pub bytes: Vec<u8>,
}

pub fn write_ensemble(path: &Path, ens: &Ensemble) -> Result<()> {
    write_ensemble_with_aux(path, ens, &[])
}

pub fn write_ensemble_with_aux(path: &Path, ens: &Ensemble, aux: &[AuxSection]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(&mut w, ens, aux).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn encode<W: Write>(w: &mut W, ens: &Ensemble, aux: &[AuxSection]) -> std::io::Result<()> {
    let bad = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidInput, m);
    let n_vars = u16::try_from(ens.n_vars()).map_err(|_| bad("too many variables".into()))?;
    let n_real = u32::try_from(ens.n_real()).map_err(|_| bad("too many realizations".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&n_real.to_le_bytes())?;
    w.write_all(&n_vars.to_le_bytes())?;
    for d in ens.dims() {
        let d = u32::try_from(d).map_err(|_| bad("grid dimension too large".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for name in ens.var_names() {
        let len = u8::try_from(name.len()).map_err(|_| bad(format!("variable name too long: {name}")))?;
        w.write_all(&[len])?;
        w.write_all(name.as_bytes())?;
    }
    let mut buf = Vec::with_capacity(ens.n_blocks() * 4);
    for real in ens.realizations() {
        for var in real {
            buf.clear();
            for &x in var {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
    }
    for s in aux {
        w.write_all(&s.tag)?;
        w.write_all(&(s.bytes.len() as u64).to_le_bytes())?;
        w.write_all(&s.bytes)?;
    }
    Ok(())
}

pub fn read_ensemble(path: &Path) -> Result<Ensemble> {
    read_ensemble_with_aux(path).map(|(e, _)| e)
}

/// Reads an ensemble and checks its dimensions against `grid`.
pub fn read_ensemble_for_grid(path: &Path, grid: &GridSpec) -> Result<Ensemble> {
    let e = read_ensemble(path)?;
    e.check_grid(grid)?;
    Ok(e)
}

pub fn read_ensemble_with_aux(path: &Path) -> Result<(Ensemble, Vec<AuxSection>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated file: needed {n} bytes for {what} at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Ensemble, Vec<AuxSection>)> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic bytes {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = c.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let n_real = c.u32("n_real")? as usize;
    let n_vars = c.u16("n_vars")? as usize;
    let dims = [
        c.u32("nx")? as usize,
        c.u32("ny")? as usize,
        c.u32("nz")? as usize,
    ];
    let mut names = Vec::with_capacity(n_vars);
    for _ in 0..n_vars {
        let len = c.take(1, "name length")?[0] as usize;
        let raw = c.take(len, "variable name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::Format("variable name is not UTF-8".into()))?;
        names.push(name.to_string());
    }
    let n_blocks: usize = dims.iter().product();
    let payload_len = n_real
        .checked_mul(n_vars)
        .and_then(|v| v.checked_mul(n_blocks))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let payload = c.take(payload_len, "payload")?;
    let mut chunks = payload.chunks_exact(4);
    let realizations = (0..n_real)
        .map(|_| {
            (0..n_vars)
                .map(|_| {
                    (&mut chunks)
                        .take(n_blocks)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut aux = Vec::new();
    while c.pos < bytes.len() {
        let tag: [u8; 4] = c.take(4, "aux tag")?.try_into().unwrap();
        let len = u64::from_le_bytes(c.take(8, "aux length")?.try_into().unwrap()) as usize;
        let body = c.take(len, "aux section")?;
        aux.push(AuxSection {
            tag,
            bytes: body.to_vec(),
        });
    }
    let ens = Ensemble::from_realizations(dims, names, realizations)?;
    Ok((ens, aux))
}

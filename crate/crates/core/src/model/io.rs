//! Ensemble serialization.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size      field
//! 0       8         magic "ENLENSEM"
//! 8       4         format version (u32, currently 1)
//! 12      1         storage kind: 0 = diagonal H, 1 = dense H
//! 13      1         flags: bit 0 = basis present, bit 1 = approximate match
//! 14      2         reserved, zero
//! 16      8         d (u64)
//! 24      8         N (u64)
//! 32      ...       H: d f64 (diagonal) or d*d f64 row-major (dense)
//!         N*d f64   εₙ, row-major (example n occupies one row)
//!         d*d f64   basis, row-major, only when flag bit 0 is set
//! ```
//!
//! The text layout carries the same fields line by line:
//!
//! ```text
//! enl-ensemble 1
//! dim <d>
//! examples <N>
//! storage diagonal|dense
//! basis none|present
//! approximate false|true
//! hessian
//! <1 line of d values (diagonal) or d lines of d values (dense)>
//! noise
//! <N lines of d values>
//! [basis
//! <d lines of d values>]
//! end
//! ```
//!
//! Floats are written with the shortest round-trip exponent form, so both
//! formats round-trip bit for bit.

use std::fmt::Write as _;
use std::io::{Cursor, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use super::{Hessian, QuadraticEnsemble};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ENLENSEM";
pub const VERSION: u32 = 1;
const TEXT_TAG: &str = "enl-ensemble";
const FLAG_BASIS: u8 = 1;
const FLAG_APPROX: u8 = 2;
/// Refuse to decode ensembles above this many stored floats.
pub const MAX_VALUES: u64 = 1 << 28;

fn decode_err(msg: impl Into<String>) -> Error {
    Error::Decode(msg.into())
}

pub fn encode_binary(e: &QuadraticEnsemble) -> Vec<u8> {
    let d = e.dim();
    let mut out = Vec::with_capacity(32 + 8 * (d * d + e.num_examples() * d + d * d));
    out.extend_from_slice(MAGIC);
    let mut flags = 0u8;
    if e.basis().is_some() {
        flags |= FLAG_BASIS;
    }
    if e.is_approximate() {
        flags |= FLAG_APPROX;
    }
    let kind = match e.hessian() {
        Hessian::Diagonal(_) => 0u8,
        Hessian::Dense(_) => 1u8,
    };
    // writes into a Vec cannot fail
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    out.write_u8(kind).unwrap();
    out.write_u8(flags).unwrap();
    out.write_u16::<LittleEndian>(0).unwrap();
    out.write_u64::<LittleEndian>(d as u64).unwrap();
    out.write_u64::<LittleEndian>(e.num_examples() as u64).unwrap();
    match e.hessian() {
        Hessian::Diagonal(h) => h.iter().for_each(|x| out.write_f64::<LittleEndian>(*x).unwrap()),
        Hessian::Dense(m) => write_row_major(&mut out, m),
    }
    e.noise_flat().iter().for_each(|x| out.write_f64::<LittleEndian>(*x).unwrap());
    if let Some(p) = e.basis() {
        write_row_major(&mut out, p);
    }
    out
}

fn write_row_major(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.write_f64::<LittleEndian>(m[(r, c)]).unwrap();
        }
    }
}

fn read_f64s(cur: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    cur.read_f64_into::<LittleEndian>(&mut v)
        .map_err(|_| decode_err("truncated value block"))?;
    Ok(v)
}

pub fn decode_binary(bytes: &[u8]) -> Result<QuadraticEnsemble> {
    if bytes.len() < 32 {
        return Err(decode_err("header shorter than 32 bytes"));
    }
    if &bytes[..8] != MAGIC {
        return Err(decode_err("bad magic"));
    }
    let mut cur = Cursor::new(bytes);
    cur.set_position(8);
    let io = |_| decode_err("truncated header");
    let version = cur.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(decode_err(format!("unsupported version {version}")));
    }
    let kind = cur.read_u8().map_err(io)?;
    let flags = cur.read_u8().map_err(io)?;
    let reserved = cur.read_u16::<LittleEndian>().map_err(io)?;
    if reserved != 0 || flags & !(FLAG_BASIS | FLAG_APPROX) != 0 {
        return Err(decode_err("reserved bits set"));
    }
    let d = cur.read_u64::<LittleEndian>().map_err(io)?;
    let n = cur.read_u64::<LittleEndian>().map_err(io)?;
    let h_count = match kind {
        0 => Some(d),
        1 => d.checked_mul(d),
        k => return Err(decode_err(format!("unknown storage kind {k}"))),
    };
    let has_basis = flags & FLAG_BASIS != 0;
    let total = h_count
        .and_then(|h| n.checked_mul(d).and_then(|x| x.checked_add(h)))
        .and_then(|t| if has_basis { d.checked_mul(d).and_then(|b| b.checked_add(t)) } else { Some(t) })
        .ok_or_else(|| decode_err("size overflow"))?;
    if total > MAX_VALUES {
        return Err(decode_err(format!("ensemble too large ({total} values)")));
    }
    let expected_len = total
        .checked_mul(8)
        .and_then(|b| b.checked_add(32))
        .ok_or_else(|| decode_err("size overflow"))?;
    if bytes.len() as u64 != expected_len {
        return Err(decode_err(format!("expected {expected_len} bytes, found {}", bytes.len())));
    }
    let (d, n) = (d as usize, n as usize);
    let hessian = if kind == 0 {
        Hessian::Diagonal(read_f64s(&mut cur, d)?)
    } else {
        Hessian::Dense(DMatrix::from_row_slice(d, d, &read_f64s(&mut cur, d * d)?))
    };
    let noise = read_f64s(&mut cur, n * d)?;
    let basis = if has_basis {
        Some(DMatrix::from_row_slice(d, d, &read_f64s(&mut cur, d * d)?))
    } else {
        None
    };
    QuadraticEnsemble::from_parts(hessian, noise, n, basis, flags & FLAG_APPROX != 0)
}

pub fn encode_text(e: &QuadraticEnsemble) -> String {
    let d = e.dim();
    let mut s = String::new();
    let storage = match e.hessian() {
        Hessian::Diagonal(_) => "diagonal",
        Hessian::Dense(_) => "dense",
    };
    // writes into a String cannot fail
    writeln!(s, "{TEXT_TAG} {VERSION}").unwrap();
    writeln!(s, "dim {d}").unwrap();
    writeln!(s, "examples {}", e.num_examples()).unwrap();
    writeln!(s, "storage {storage}").unwrap();
    writeln!(s, "basis {}", if e.basis().is_some() { "present" } else { "none" }).unwrap();
    writeln!(s, "approximate {}", e.is_approximate()).unwrap();
    s.push_str("hessian\n");
    match e.hessian() {
        Hessian::Diagonal(h) => push_row(&mut s, h.iter().copied()),
        Hessian::Dense(m) => (0..d).for_each(|r| push_row(&mut s, m.row(r).iter().copied())),
    }
    s.push_str("noise\n");
    for n in 0..e.num_examples() {
        push_row(&mut s, e.example_noise(n).iter().copied());
    }
    if let Some(p) = e.basis() {
        s.push_str("basis\n");
        (0..d).for_each(|r| push_row(&mut s, p.row(r).iter().copied()));
    }
    s.push_str("end\n");
    s
}

fn push_row(s: &mut String, row: impl Iterator<Item = f64>) {
    let mut first = true;
    for x in row {
        if !first {
            s.push(' ');
        }
        first = false;
        write!(s, "{x:e}").unwrap();
    }
    s.push('\n');
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| decode_err("unexpected end of input"))
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let (no, line) = self.next_line()?;
        let mut parts = line.splitn(2, ' ');
        match (parts.next(), parts.next()) {
            (Some(k), Some(v)) if k == key => Ok(v.trim()),
            _ => Err(decode_err(format!("line {no}: expected `{key} <value>`"))),
        }
    }

    fn keyword(&mut self, key: &str) -> Result<()> {
        let (no, line) = self.next_line()?;
        if line == key {
            Ok(())
        } else {
            Err(decode_err(format!("line {no}: expected `{key}`")))
        }
    }

    fn row(&mut self, width: usize, out: &mut Vec<f64>) -> Result<()> {
        let (no, line) = self.next_line()?;
        let before = out.len();
        for tok in line.split_ascii_whitespace() {
            if out.len() - before == width {
                return Err(decode_err(format!("line {no}: more than {width} values")));
            }
            let x: f64 = tok
                .parse()
                .map_err(|_| decode_err(format!("line {no}: bad number `{tok}`")))?;
            out.push(x);
        }
        if out.len() - before != width {
            return Err(decode_err(format!("line {no}: expected {width} values")));
        }
        Ok(())
    }
}

fn parse_count(v: &str, what: &str) -> Result<usize> {
    v.parse::<usize>().map_err(|_| decode_err(format!("bad {what} `{v}`")))
}

pub fn decode_text(text: &str) -> Result<QuadraticEnsemble> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    let (_, head) = lines.next_line()?;
    match head.split_once(' ') {
        Some((TEXT_TAG, v)) if v.trim() == VERSION.to_string() => {}
        _ => return Err(decode_err("line 1: expected `enl-ensemble 1`")),
    }
    let d = parse_count(lines.field("dim")?, "dim")?;
    let n = parse_count(lines.field("examples")?, "examples")?;
    let dense = match lines.field("storage")? {
        "diagonal" => false,
        "dense" => true,
        other => return Err(decode_err(format!("unknown storage `{other}`"))),
    };
    let has_basis = match lines.field("basis")? {
        "none" => false,
        "present" => true,
        other => return Err(decode_err(format!("unknown basis flag `{other}`"))),
    };
    let approximate = match lines.field("approximate")? {
        "false" => false,
        "true" => true,
        other => return Err(decode_err(format!("unknown approximate flag `{other}`"))),
    };
    // Rows are parsed one at a time against the real input, so a huge
    // declared size fails on missing lines rather than allocating up front.
    let declared = (d as u128) * (n as u128 + if dense { d as u128 } else { 1 });
    if declared > MAX_VALUES as u128 || d == 0 {
        return Err(decode_err("declared size out of range"));
    }
    lines.keyword("hessian")?;
    let mut h = Vec::new();
    let hessian = if dense {
        for _ in 0..d {
            lines.row(d, &mut h)?;
        }
        Hessian::Dense(DMatrix::from_row_slice(d, d, &h))
    } else {
        lines.row(d, &mut h)?;
        Hessian::Diagonal(h)
    };
    lines.keyword("noise")?;
    let mut noise = Vec::new();
    for _ in 0..n {
        lines.row(d, &mut noise)?;
    }
    let basis = if has_basis {
        lines.keyword("basis")?;
        let mut b = Vec::new();
        for _ in 0..d {
            lines.row(d, &mut b)?;
        }
        Some(DMatrix::from_row_slice(d, d, &b))
    } else {
        None
    };
    lines.keyword("end")?;
    if let Some((no, extra)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(decode_err(format!("line {}: trailing content `{}`", no + 1, extra.trim())));
    }
    QuadraticEnsemble::from_parts(hessian, noise, n, basis, approximate)
}

/// Hex SHA-256 of the binary encoding; identifies an ensemble in output headers.
pub fn content_hash(e: &QuadraticEnsemble) -> String {
    hex::encode(Sha256::digest(encode_binary(e)))
}

pub fn write_binary<W: Write>(e: &QuadraticEnsemble, mut w: W) -> Result<()> {
    w.write_all(&encode_binary(e))?;
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<QuadraticEnsemble> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode_binary(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_commuting_ensemble, build_noncommuting_ensemble, Hyperparams, Spectrum};

    fn diag_ensemble() -> QuadraticEnsemble {
        let s = Spectrum::log_spaced(1e-3, 2.0, 4, 0.7).unwrap();
        build_commuting_ensemble(&s, &Hyperparams::new(0.1, 0.9, 2, 10).unwrap(), 5).unwrap()
    }

    fn dense_ensemble() -> QuadraticEnsemble {
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]);
        build_noncommuting_ensemble(&h, &DMatrix::identity(3, 3), 12, 8).unwrap()
    }

    #[test]
    fn binary_roundtrip() {
        for e in [diag_ensemble(), dense_ensemble()] {
            let bytes = encode_binary(&e);
            assert_eq!(decode_binary(&bytes).unwrap(), e);
        }
    }

    #[test]
    fn text_roundtrip() {
        for e in [diag_ensemble(), dense_ensemble()] {
            let t = encode_text(&e);
            assert_eq!(decode_text(&t).unwrap(), e);
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = diag_ensemble();
        assert_eq!(content_hash(&a), content_hash(&diag_ensemble()));
        assert_ne!(content_hash(&a), content_hash(&dense_ensemble()));
        assert_eq!(content_hash(&a).len(), 64);
    }

    #[test]
    fn binary_rejects_corruption() {
        let bytes = encode_binary(&diag_ensemble());
        assert!(decode_binary(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_binary(&bad).is_err());
        let mut bad = bytes.clone();
        bad[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_binary(&bad).is_err());
        let mut bad = bytes;
        bad[12] = 7;
        assert!(decode_binary(&bad).is_err());
    }

    #[test]
    fn text_rejects_malformed() {
        let t = encode_text(&diag_ensemble());
        assert!(decode_text(&t.replace("storage diagonal", "storage sparse")).is_err());
        assert!(decode_text(&t.replace("end\n", "")).is_err());
        assert!(decode_text(&format!("{t}junk\n")).is_err());
        assert!(decode_text("enl-ensemble 1\ndim 99999999999\nexamples 99999999\n").is_err());
    }
}

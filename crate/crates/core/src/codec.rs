//! Login rows and the length-prefixed cell encoding shared by the canonical
//! store dump and the vault payload.
//!
//! A cell is written as a 4-byte big-endian length followed by that many raw
//! bytes; SQL `NULL` is the sentinel length `0xFFFF_FFFF` with no body. The raw
//! bytes of a non-null cell start with a one-byte storage-class tag so that
//! `5` (integer) and `"5"` (text) never encode the same way.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

/// Version byte that opens every canonical dump.
pub const DUMP_VERSION: u8 = 0x01;

/// Length sentinel for a NULL cell.
pub const NULL_LEN: u32 = 0xFFFF_FFFF;

const TAG_INTEGER: u8 = 0x01;
const TAG_REAL: u8 = 0x02;
const TAG_TEXT: u8 = 0x03;
const TAG_BLOB: u8 = 0x04;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("unknown cell tag {tag:#04x} at offset {offset}")]
    BadTag { tag: u8, offset: usize },
    #[error("malformed cell of {len} bytes at offset {offset}")]
    BadCell { len: usize, offset: usize },
    #[error("invalid UTF-8 in string field at offset {0}")]
    BadUtf8(usize),
    #[error("{0} trailing bytes after the last record")]
    Trailing(usize),
    #[error("value out of range: {0}")]
    Range(&'static str),
}

/// One SQL value, kept in its original storage class.
///
/// Text is held as bytes: the store does not guarantee valid UTF-8 and the
/// value must come back exactly as it was read.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(Vec<u8>),
    Blob(Vec<u8>),
}

impl Value {
    pub fn text(s: &str) -> Self {
        Value::Text(s.as_bytes().to_vec())
    }

    pub fn as_text(&self) -> Option<&[u8]> {
        match self {
            Value::Text(b) => Some(b),
            _ => None,
        }
    }

    fn encoded_body_len(&self) -> Option<usize> {
        match self {
            Value::Null => None,
            Value::Integer(_) | Value::Real(_) => Some(9),
            Value::Text(b) | Value::Blob(b) => Some(1 + b.len()),
        }
    }
}

/// A complete `moz_logins` row: every column, verbatim, in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct LoginRow {
    pub row_id: i64,
    pub hostname: String,
    pub cells: Vec<(String, Value)>,
}

impl LoginRow {
    pub fn cell(&self, column: &str) -> Option<&Value> {
        self.cells.iter().find(|(c, _)| c == column).map(|(_, v)| v)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.cells.iter().map(|(c, _)| c.as_str())
    }
}

/// Append-only big-endian writer.
#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    pub fn raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// u32 length prefix + bytes.
    pub fn bytes(&mut self, bytes: &[u8]) -> Result<(), CodecError> {
        let len = u32::try_from(bytes.len())
            .ok()
            .filter(|&l| l != NULL_LEN)
            .ok_or(CodecError::Range("byte string longer than 4 GiB"))?;
        self.u32(len);
        self.raw(bytes);
        Ok(())
    }

    pub fn str(&mut self, s: &str) -> Result<(), CodecError> {
        self.bytes(s.as_bytes())
    }

    pub fn cell(&mut self, value: &Value) -> Result<(), CodecError> {
        let Some(len) = value.encoded_body_len() else {
            self.u32(NULL_LEN);
            return Ok(());
        };
        let len = u32::try_from(len)
            .ok()
            .filter(|&l| l != NULL_LEN)
            .ok_or(CodecError::Range("cell longer than 4 GiB"))?;
        self.u32(len);
        match value {
            Value::Null => unreachable!(),
            Value::Integer(i) => {
                self.u8(TAG_INTEGER);
                self.i64(*i);
            }
            Value::Real(r) => {
                self.u8(TAG_REAL);
                self.f64(*r);
            }
            Value::Text(b) => {
                self.u8(TAG_TEXT);
                self.raw(b);
            }
            Value::Blob(b) => {
                self.u8(TAG_BLOB);
                self.raw(b);
            }
        }
        Ok(())
    }
}

/// Cursor over a big-endian byte slice; every read is bounds-checked.
#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::Trailing(n)),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Truncated(self.pos));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn i64(&mut self) -> Result<i64, CodecError> {
        Ok(i64::from_be_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let len = self.u32()?;
        if len == NULL_LEN {
            return Err(CodecError::BadCell { len: 0, offset: self.pos - 4 });
        }
        self.take(len as usize)
    }

    pub fn string(&mut self) -> Result<String, CodecError> {
        let at = self.pos;
        let raw = self.bytes()?;
        core::str::from_utf8(raw)
            .map(String::from)
            .map_err(|_| CodecError::BadUtf8(at))
    }

    pub fn cell(&mut self) -> Result<Value, CodecError> {
        let offset = self.pos;
        let len = self.u32()?;
        if len == NULL_LEN {
            return Ok(Value::Null);
        }
        let body = self.take(len as usize)?;
        let (&tag, rest) = body
            .split_first()
            .ok_or(CodecError::BadCell { len: 0, offset })?;
        let fixed = |rest: &[u8]| -> Result<[u8; 8], CodecError> {
            rest.try_into()
                .map_err(|_| CodecError::BadCell { len: body.len(), offset })
        };
        Ok(match tag {
            TAG_INTEGER => Value::Integer(i64::from_be_bytes(fixed(rest)?)),
            TAG_REAL => Value::Real(f64::from_bits(u64::from_be_bytes(fixed(rest)?))),
            TAG_TEXT => Value::Text(rest.to_vec()),
            TAG_BLOB => Value::Blob(rest.to_vec()),
            tag => return Err(CodecError::BadTag { tag, offset }),
        })
    }
}

/// Row body as it appears in dumps and vault entries: row id, column count,
/// then one cell per column. Column names are not part of this encoding.
pub fn write_row_cells(w: &mut Writer, row: &LoginRow) -> Result<(), CodecError> {
    let count = u16::try_from(row.cells.len()).map_err(|_| CodecError::Range("more than 65535 columns"))?;
    w.i64(row.row_id);
    w.u16(count);
    for (_, value) in &row.cells {
        w.cell(value)?;
    }
    Ok(())
}

/// Deterministic serialization of a table: version byte, then rows in
/// ascending `row_id` order. Equal contents give equal bytes.
pub fn canonical_dump(rows: &[LoginRow]) -> Result<Vec<u8>, CodecError> {
    let mut sorted: Vec<&LoginRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.row_id);
    let mut w = Writer::new();
    w.u8(DUMP_VERSION);
    for row in sorted {
        write_row_cells(&mut w, row)?;
    }
    Ok(w.into_bytes())
}

/// A dump decoded back to `(row_id, cells)` pairs.
pub type DumpRow = (i64, Vec<Value>);

pub fn parse_dump(bytes: &[u8]) -> Result<Vec<DumpRow>, CodecError> {
    let mut r = Reader::new(bytes);
    let version = r.u8()?;
    if version != DUMP_VERSION {
        return Err(CodecError::BadTag { tag: version, offset: 0 });
    }
    let mut rows = Vec::new();
    while r.remaining() > 0 {
        let id = r.i64()?;
        let n = r.u16()?;
        let cells = (0..n).map(|_| r.cell()).collect::<Result<Vec<_>, _>>()?;
        rows.push((id, cells));
    }
    Ok(rows)
}

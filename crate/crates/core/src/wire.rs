//! Length-prefixed field sequences: every field is a big-endian `u32`
//! length followed by its bytes. Messages prepend a one-byte type tag.

use thiserror::Error;

pub const LEN_PREFIX: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated input: wanted {wanted} bytes, {left} left")]
    Truncated { wanted: usize, left: usize },
    #[error("trailing {0} bytes after last field")]
    Trailing(usize),
    #[error("unexpected message tag {found:#04x} (expected {expected:#04x})")]
    Tag { expected: u8, found: u8 },
    #[error("malformed field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
}

impl WireError {
    pub fn field(field: &'static str, reason: impl ToString) -> Self {
        WireError::Field {
            field,
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tag(tag: u8) -> Self {
        Self { buf: vec![tag] }
    }

    pub fn field(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf
            .extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.field(&v.to_be_bytes())
    }

    /// Bytes without a length prefix.
    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

#[derive(Debug, Clone)]
pub struct Reader<'a> {
    data: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data }
    }

    pub fn tagged(data: &'a [u8], expected: u8) -> Result<Self, WireError> {
        match data.first() {
            None => Err(WireError::Truncated { wanted: 1, left: 0 }),
            Some(&t) if t != expected => Err(WireError::Tag { expected, found: t }),
            Some(_) => Ok(Self { data: &data[1..] }),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.data.len() < n {
            return Err(WireError::Truncated {
                wanted: n,
                left: self.data.len(),
            });
        }
        let (head, rest) = self.data.split_at(n);
        self.data = rest;
        Ok(head)
    }

    pub fn field(&mut self) -> Result<&'a [u8], WireError> {
        let len = self.take(LEN_PREFIX)?;
        let len = u32::from_be_bytes(len.try_into().expect("4 bytes")) as usize;
        self.take(len)
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        let f = self.field()?;
        let arr: [u8; 8] = f
            .try_into()
            .map_err(|_| WireError::field("u64", format!("length {}", f.len())))?;
        Ok(u64::from_be_bytes(arr))
    }

    /// Exactly `N` bytes without a length prefix.
    pub fn fixed<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn finish(self) -> Result<(), WireError> {
        if self.data.is_empty() {
            Ok(())
        } else {
            Err(WireError::Trailing(self.data.len()))
        }
    }
}

/// Encoded size of a field sequence with the given payload lengths.
pub fn framed_len(field_lens: &[usize]) -> usize {
    field_lens.iter().map(|l| l + LEN_PREFIX).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_errors() {
        let bytes = Writer::with_tag(7).field(b"abc").u64(42).finish();
        assert_eq!(bytes.len(), 1 + framed_len(&[3, 8]));
        let mut r = Reader::tagged(&bytes, 7).unwrap();
        assert_eq!(r.field().unwrap(), b"abc");
        assert_eq!(r.u64().unwrap(), 42);
        r.finish().unwrap();

        assert!(matches!(
            Reader::tagged(&bytes, 8),
            Err(WireError::Tag { .. })
        ));
        let mut r = Reader::tagged(&bytes[..6], 7).unwrap();
        assert!(matches!(r.field(), Err(WireError::Truncated { .. })));
    }
}

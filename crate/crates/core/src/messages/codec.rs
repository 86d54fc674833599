//! Strict length-prefixed framing shared by every encoding in the crate.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed packet: {0}")]
pub struct CodecError(pub &'static str);

/// Upper bound on a single length-prefixed field.
pub const MAX_FIELD_LEN: usize = 1 << 24;

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    /// `u32` big-endian length followed by the bytes.
    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        let len = u32::try_from(v.len()).expect("field longer than u32::MAX");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(v);
        self
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        let v = *self.buf.get(self.pos).ok_or(CodecError("truncated"))?;
        self.pos += 1;
        Ok(v)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let head = self.buf.get(self.pos..self.pos + 4).ok_or(CodecError("truncated length prefix"))?;
        let len = u32::from_be_bytes(head.try_into().expect("4 bytes")) as usize;
        if len > MAX_FIELD_LEN {
            return Err(CodecError("field too long"));
        }
        let start = self.pos + 4;
        let field = self.buf.get(start..start + len).ok_or(CodecError("truncated field"))?;
        self.pos = start + len;
        Ok(field)
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn finish(self) -> Result<(), CodecError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(CodecError("trailing bytes"))
        }
    }
}

/// Encodes an ordered tuple of byte fields: a count byte, then each field
/// length-prefixed. This is the plaintext layout inside every encryption.
pub fn encode_tuple<T: AsRef<[u8]>>(fields: &[T]) -> Vec<u8> {
    let count = u8::try_from(fields.len()).expect("tuple arity fits in a byte");
    let mut w = Writer::new();
    w.u8(count);
    for f in fields {
        w.bytes(f.as_ref());
    }
    w.finish()
}

pub fn decode_tuple_any(bytes: &[u8]) -> Result<Vec<Vec<u8>>, CodecError> {
    let mut r = Reader::new(bytes);
    let count = r.u8()?;
    let fields = (0..count).map(|_| r.bytes().map(<[u8]>::to_vec)).collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    Ok(fields)
}

pub fn decode_tuple(bytes: &[u8], arity: usize) -> Result<Vec<Vec<u8>>, CodecError> {
    let fields = decode_tuple_any(bytes)?;
    if fields.len() != arity {
        return Err(CodecError("unexpected tuple arity"));
    }
    Ok(fields)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tuple_round_trip_and_strictness() {
        let enc = encode_tuple(&[b"a".as_slice(), b"", b"ccc"]);
        assert_eq!(decode_tuple(&enc, 3).unwrap(), vec![b"a".to_vec(), vec![], b"ccc".to_vec()]);
        assert!(decode_tuple(&enc, 2).is_err());
        let mut trailing = enc.clone();
        trailing.push(0);
        assert_eq!(decode_tuple_any(&trailing), Err(CodecError("trailing bytes")));
        assert!(decode_tuple_any(&enc[..enc.len() - 1]).is_err());
    }

    #[test]
    fn oversized_length_prefix_is_rejected() {
        let bytes = [0xFF, 0xFF, 0xFF, 0xFF];
        assert_eq!(Reader::new(&bytes).bytes(), Err(CodecError("field too long")));
    }
}

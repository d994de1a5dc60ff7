//! Binary tensor (`KIUT` v1) and checkpoint (`KIUC` v1) files.
//!
//! KIUT v1 layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "KIUT"
//! 4       1     version = 0x01
//! 5       1     dtype   = 0x00 (f32)
//! 6       1     ndim (1..=5)
//! 7       5     reserved, zero
//! 12      4*n   dims as u32
//! ..      4*N   payload, row-major f32
//! ```
//!
//! KIUC v1 is `"KIUC"`, version `0x01`, a u32 entry count, then per entry a
//! u32 name length, the UTF-8 name and an embedded KIUT record.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{check_shape, Tensor, MAX_RANK};

pub const TENSOR_MAGIC: &[u8; 4] = b"KIUT";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KIUC";
pub const VERSION: u8 = 0x01;
pub const DTYPE_F32: u8 = 0x00;
/// Fixed part of the KIUT header preceding the dims.
pub const TENSOR_PREFIX_LEN: usize = 12;

/// Writer that counts bytes so failures can report their offset.
struct Counting<W> {
    inner: W,
    pos: u64,
}

impl<W: Write> Counting<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes).map_err(|source| Error::Io {
            offset: self.pos,
            source,
        })?;
        self.pos += bytes.len() as u64;
        Ok(())
    }
}

/// Reader that tracks its offset.
struct Tracking<R> {
    inner: R,
    pos: u64,
}

impl<R: Read> Tracking<R> {
    /// Reads exactly `buf.len()` bytes, or reports how many were available.
    fn fill(&mut self, buf: &mut [u8]) -> Result<usize> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(source) => {
                    return Err(Error::Io {
                        offset: self.pos + got as u64,
                        source,
                    })
                }
            }
        }
        self.pos += got as u64;
        Ok(got)
    }

    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let start = self.pos;
        let got = self.fill(buf)?;
        if got < buf.len() {
            return Err(Error::Format {
                offset: start,
                msg: format!("truncated {what}: needed {} bytes, found {got}", buf.len()),
            });
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
}

fn write_tensor_to<W: Write>(t: &Tensor, out: &mut Counting<W>) -> Result<()> {
    let shape = t.shape();
    check_shape(shape)?;
    let mut header = [0u8; TENSOR_PREFIX_LEN];
    header[..4].copy_from_slice(TENSOR_MAGIC);
    header[4] = VERSION;
    header[5] = DTYPE_F32;
    header[6] = shape.len() as u8;
    out.put(&header)?;
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::validation(format!("dimension {d} does not fit in u32")))?;
        out.put(&d.to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.put(&payload)
}

fn read_tensor_from<R: Read>(src: &mut Tracking<R>) -> Result<Tensor> {
    let start = src.pos;
    let mut header = [0u8; TENSOR_PREFIX_LEN];
    src.exact(&mut header, "tensor header")?;
    if &header[..4] != TENSOR_MAGIC {
        return Err(Error::Format {
            offset: start,
            msg: format!(
                "bad magic {:?}, expected \"KIUT\"",
                String::from_utf8_lossy(&header[..4])
            ),
        });
    }
    if header[4] != VERSION {
        return Err(Error::Format {
            offset: start + 4,
            msg: format!("unsupported version {}", header[4]),
        });
    }
    if header[5] != DTYPE_F32 {
        return Err(Error::UnsupportedDtype {
            offset: start + 5,
            dtype: header[5],
        });
    }
    let ndim = header[6] as usize;
    if ndim == 0 || ndim > MAX_RANK {
        return Err(Error::Format {
            offset: start + 6,
            msg: format!("dimension count {ndim} outside [1, {MAX_RANK}]"),
        });
    }
    if header[7..].iter().any(|&b| b != 0) {
        return Err(Error::Format {
            offset: start + 7,
            msg: "reserved header bytes are not zero".into(),
        });
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let at = src.pos;
        let d = src.u32("dimension")? as usize;
        if d == 0 {
            return Err(Error::Format {
                offset: at,
                msg: "zero-sized dimension".into(),
            });
        }
        shape.push(d);
    }
    let count: usize = shape.iter().product();
    let expected = count as u64 * 4;
    let payload_start = src.pos;
    let mut payload = vec![0u8; count * 4];
    let got = src.fill(&mut payload)?;
    if got < payload.len() {
        return Err(Error::LengthMismatch {
            offset: payload_start,
            expected,
            actual: got as u64,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(&shape, data)
}

/// Writes one KIUT record and returns the number of bytes written.
pub fn write_tensor<W: Write>(t: &Tensor, sink: W) -> Result<u64> {
    let mut out = Counting { inner: sink, pos: 0 };
    write_tensor_to(t, &mut out)?;
    out.inner.flush().map_err(|source| Error::Io {
        offset: out.pos,
        source,
    })?;
    Ok(out.pos)
}

pub fn read_tensor<R: Read>(source: R) -> Result<Tensor> {
    read_tensor_from(&mut Tracking { inner: source, pos: 0 })
}

pub fn tensor_to_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_tensor(t, &mut buf)?;
    Ok(buf)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<u64> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io { offset: 0, source }.in_file(path))?;
    write_tensor(t, BufWriter::new(file)).map_err(|e| e.in_file(path))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io { offset: 0, source }.in_file(path))?;
    read_tensor(BufReader::new(file)).map_err(|e| e.in_file(path))
}

/// Writes a KIUC checkpoint. Names must be unique.
pub fn write_checkpoint<W: Write>(entries: &[(String, Tensor)], sink: W) -> Result<u64> {
    let mut seen = HashSet::new();
    for (name, _) in entries {
        if !seen.insert(name.as_str()) {
            return Err(Error::validation(format!("duplicate checkpoint entry '{name}'")));
        }
    }
    let count = u32::try_from(entries.len()).map_err(|_| Error::validation("too many checkpoint entries"))?;
    let mut out = Counting { inner: sink, pos: 0 };
    out.put(CHECKPOINT_MAGIC)?;
    out.put(&[VERSION])?;
    out.put(&count.to_le_bytes())?;
    for (name, t) in entries {
        let len = u32::try_from(name.len()).map_err(|_| Error::validation(format!("entry name too long: {name}")))?;
        out.put(&len.to_le_bytes())?;
        out.put(name.as_bytes())?;
        write_tensor_to(t, &mut out).map_err(|e| Error::Entry {
            name: name.clone(),
            source: Box::new(e),
        })?;
    }
    out.inner.flush().map_err(|source| Error::Io {
        offset: out.pos,
        source,
    })?;
    Ok(out.pos)
}

/// Reads a KIUC checkpoint, preserving entry order.
pub fn read_checkpoint<R: Read>(source: R) -> Result<Vec<(String, Tensor)>> {
    let mut src = Tracking { inner: source, pos: 0 };
    let mut magic = [0u8; 5];
    src.exact(&mut magic, "checkpoint header")?;
    if &magic[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!(
                "bad magic {:?}, expected \"KIUC\"",
                String::from_utf8_lossy(&magic[..4])
            ),
        });
    }
    if magic[4] != VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported checkpoint version {}", magic[4]),
        });
    }
    let count = src.u32("entry count")?;
    let mut entries = Vec::with_capacity(count.min(4096) as usize);
    let mut seen = HashSet::new();
    for _ in 0..count {
        let at = src.pos;
        let len = src.u32("name length")? as usize;
        let mut name = vec![0u8; len];
        src.exact(&mut name, "entry name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Format {
            offset: at + 4,
            msg: "entry name is not UTF-8".into(),
        })?;
        if !seen.insert(name.clone()) {
            return Err(Error::validation(format!("duplicate checkpoint entry '{name}'")));
        }
        let t = read_tensor_from(&mut src).map_err(|e| Error::Entry {
            name: name.clone(),
            source: Box::new(e),
        })?;
        entries.push((name, t));
    }
    Ok(entries)
}

pub fn save_checkpoint(path: impl AsRef<Path>, entries: &[(String, Tensor)]) -> Result<u64> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io { offset: 0, source }.in_file(path))?;
    write_checkpoint(entries, BufWriter::new(file)).map_err(|e| e.in_file(path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io { offset: 0, source }.in_file(path))?;
    read_checkpoint(BufReader::new(file)).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t23() -> Tensor {
        Tensor::new(&[2, 3], (1..=6).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn single_zero_element_layout() {
        let bytes = tensor_to_bytes(&Tensor::zeros(&[1]).unwrap()).unwrap();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"KIUT");
        assert_eq!(&bytes[4..12], &[1, 0, 1, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..], &[0, 0, 0, 0]);
    }

    #[test]
    fn payload_is_row_major_le() {
        let bytes = tensor_to_bytes(&t23()).unwrap();
        let payload: Vec<u8> = (1..=6).flat_map(|v| (v as f32).to_le_bytes()).collect();
        assert_eq!(&bytes[12 + 8..], payload.as_slice());
        assert_eq!(read_tensor(bytes.as_slice()).unwrap(), t23());
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let mut bytes = tensor_to_bytes(&t23()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            read_tensor(bytes.as_slice()),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn nonzero_dtype_is_rejected() {
        let mut bytes = tensor_to_bytes(&t23()).unwrap();
        bytes[5] = 1;
        assert!(matches!(
            read_tensor(bytes.as_slice()),
            Err(Error::UnsupportedDtype { dtype: 1, .. })
        ));
    }

    #[test]
    fn truncated_payload_reports_both_lengths() {
        let t = Tensor::zeros(&[4, 6]).unwrap();
        let bytes = tensor_to_bytes(&t).unwrap();
        let cut = &bytes[..bytes.len() - 16];
        match read_tensor(cut) {
            Err(Error::LengthMismatch {
                expected,
                actual,
                offset,
            }) => {
                assert_eq!(expected, 96);
                assert_eq!(actual, 80);
                assert_eq!(offset, 20);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_checkpoint_is_nine_bytes() {
        let mut buf = Vec::new();
        assert_eq!(write_checkpoint(&[], &mut buf).unwrap(), 9);
        assert_eq!(&buf, b"KIUC\x01\0\0\0\0");
        assert!(read_checkpoint(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_names_rejected() {
        let e = vec![("a".to_string(), t23()), ("a".to_string(), t23())];
        assert!(matches!(write_checkpoint(&e, Vec::new()), Err(Error::Validation(_))));
    }

    #[test]
    fn entry_errors_name_the_entry() {
        let e = vec![("enc1.w".to_string(), t23())];
        let mut buf = Vec::new();
        write_checkpoint(&e, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        let err = read_checkpoint(buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("enc1.w"), "{err}");
        assert!(matches!(err.root(), Error::LengthMismatch { .. }));
    }
}

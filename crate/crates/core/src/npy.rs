//! Minimal reader and writer for the `.npy` array format.
//!
//! Supports versions 1.0 and 2.0, little-endian C-order arrays of `f4`, `f8`,
//! `u1` and `b1`. Arrays keep their raw bytes so a read followed by a write
//! reproduces the input exactly (NaN payloads included) when the input was
//! produced by this writer.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Error)]
pub enum NpyError {
    #[error("not an npy file (bad magic)")]
    BadMagic,
    #[error("unsupported npy version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("fortran-ordered arrays are not supported")]
    FortranOrder,
    #[error("truncated data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("expected dtype {expected}, found {found}")]
    WrongDtype { expected: &'static str, found: &'static str },
    #[error("shape {shape:?} does not hold {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
    U1,
    Bool,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
            Dtype::U1 => "|u1",
            Dtype::Bool => "|b1",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
            Dtype::U1 | Dtype::Bool => 1,
        }
    }

    fn parse(descr: &str) -> Result<Self, NpyError> {
        match descr {
            "<f4" => Ok(Dtype::F4),
            "<f8" => Ok(Dtype::F8),
            "|u1" | "<u1" | "u1" => Ok(Dtype::U1),
            "|b1" | "<b1" | "b1" | "?" => Ok(Dtype::Bool),
            other => Err(NpyError::UnsupportedDtype(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    dtype: Dtype,
    shape: Vec<usize>,
    data: Vec<u8>,
}

fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl NpyArray {
    pub fn from_raw(dtype: Dtype, shape: Vec<usize>, data: Vec<u8>) -> Result<Self, NpyError> {
        let expected = element_count(&shape) * dtype.size();
        if data.len() != expected {
            return Err(NpyError::Truncated {
                expected,
                found: data.len(),
            });
        }
        Ok(Self { dtype, shape, data })
    }

    fn checked_shape(shape: Vec<usize>, len: usize) -> Result<Vec<usize>, NpyError> {
        if element_count(&shape) != len {
            return Err(NpyError::BadShape { shape, len });
        }
        Ok(shape)
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self, NpyError> {
        let shape = Self::checked_shape(shape, values.len())?;
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Ok(Self { dtype: Dtype::F8, shape, data })
    }

    /// Narrows each value to `f32`.
    pub fn from_f32(shape: Vec<usize>, values: &[f64]) -> Result<Self, NpyError> {
        let shape = Self::checked_shape(shape, values.len())?;
        let data = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        Ok(Self { dtype: Dtype::F4, shape, data })
    }

    pub fn from_bool(shape: Vec<usize>, values: &[bool]) -> Result<Self, NpyError> {
        let shape = Self::checked_shape(shape, values.len())?;
        let data = values.iter().map(|&b| b as u8).collect();
        Ok(Self { dtype: Dtype::Bool, shape, data })
    }

    pub fn from_u8(shape: Vec<usize>, values: Vec<u8>) -> Result<Self, NpyError> {
        let shape = Self::checked_shape(shape, values.len())?;
        Ok(Self { dtype: Dtype::U1, shape, data: values })
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        element_count(&self.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    /// Values widened to `f64`. Integer and boolean arrays convert as 0/1.
    pub fn to_f64(&self) -> Vec<f64> {
        match self.dtype {
            Dtype::F8 => self
                .data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Dtype::F4 => self
                .data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Dtype::U1 | Dtype::Bool => self.data.iter().map(|&b| b as f64).collect(),
        }
    }

    /// Boolean view: any nonzero byte is true; floats are true above 0.5.
    pub fn to_bool(&self) -> Vec<bool> {
        match self.dtype {
            Dtype::U1 | Dtype::Bool => self.data.iter().map(|&b| b != 0).collect(),
            Dtype::F4 | Dtype::F8 => self.to_f64().into_iter().map(|v| v > 0.5).collect(),
        }
    }

    pub fn to_u8(&self) -> Result<Vec<u8>, NpyError> {
        match self.dtype {
            Dtype::U1 | Dtype::Bool => Ok(self.data.clone()),
            other => Err(NpyError::WrongDtype {
                expected: "|u1",
                found: other.descr(),
            }),
        }
    }

    pub fn read_from(mut reader: impl Read) -> Result<Self, NpyError> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NpyError> {
        if bytes.len() < 8 || &bytes[..6] != MAGIC {
            return Err(NpyError::BadMagic);
        }
        let (major, minor) = (bytes[6], bytes[7]);
        let (header_len, start) = match major {
            1 => {
                let b = bytes.get(8..10).ok_or(NpyError::Truncated { expected: 10, found: bytes.len() })?;
                (u16::from_le_bytes([b[0], b[1]]) as usize, 10)
            }
            2 => {
                let b = bytes.get(8..12).ok_or(NpyError::Truncated { expected: 12, found: bytes.len() })?;
                (u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize, 12)
            }
            _ => return Err(NpyError::UnsupportedVersion(major, minor)),
        };
        let header = bytes.get(start..start + header_len).ok_or(NpyError::Truncated {
            expected: start + header_len,
            found: bytes.len(),
        })?;
        let header = std::str::from_utf8(header).map_err(|_| NpyError::MalformedHeader("not ASCII".into()))?;
        let (dtype, fortran, shape) = parse_header(header)?;
        if fortran && shape.iter().filter(|&&d| d > 1).count() > 1 {
            return Err(NpyError::FortranOrder);
        }
        let body = &bytes[start + header_len..];
        let expected = element_count(&shape) * dtype.size();
        if body.len() < expected {
            return Err(NpyError::Truncated {
                expected,
                found: body.len(),
            });
        }
        Ok(Self {
            dtype,
            shape,
            data: body[..expected].to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = match self.shape.as_slice() {
            [one] => format!("({one},)"),
            dims => format!("({})", dims.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")),
        };
        let mut header = format!(
            "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
            self.dtype.descr(),
            shape
        );
        let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
        let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
        header.extend(std::iter::repeat(' ').take(padding));
        header.push('\n');

        let mut out = Vec::with_capacity(unpadded + padding + self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_to(&self, mut writer: impl Write) -> Result<(), NpyError> {
        writer.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, NpyError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), NpyError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

fn dict_value<'a>(header: &'a str, key: &str) -> Result<&'a str, NpyError> {
    let quoted = [format!("'{key}'"), format!("\"{key}\"")];
    let pos = quoted
        .iter()
        .find_map(|k| header.find(k.as_str()).map(|p| p + k.len()))
        .ok_or_else(|| NpyError::MalformedHeader(format!("missing key {key}")))?;
    let rest = header[pos..].trim_start();
    let rest = rest
        .strip_prefix(':')
        .ok_or_else(|| NpyError::MalformedHeader(format!("no ':' after {key}")))?
        .trim_start();
    Ok(rest)
}

fn parse_header(header: &str) -> Result<(Dtype, bool, Vec<usize>), NpyError> {
    let header = header.trim();
    if !(header.starts_with('{') && header.ends_with('}')) {
        return Err(NpyError::MalformedHeader(header.to_string()));
    }

    let descr = dict_value(header, "descr")?;
    let quote = descr
        .chars()
        .next()
        .filter(|c| *c == '\'' || *c == '"')
        .ok_or_else(|| NpyError::MalformedHeader("descr is not a string".into()))?;
    let end = descr[1..]
        .find(quote)
        .ok_or_else(|| NpyError::MalformedHeader("unterminated descr".into()))?;
    let dtype = Dtype::parse(&descr[1..1 + end])?;

    let fortran = dict_value(header, "fortran_order")?;
    let fortran = if fortran.starts_with("True") {
        true
    } else if fortran.starts_with("False") {
        false
    } else {
        return Err(NpyError::MalformedHeader("fortran_order".into()));
    };

    let shape = dict_value(header, "shape")?;
    let shape = shape
        .strip_prefix('(')
        .and_then(|s| s.find(')').map(|e| &s[..e]))
        .ok_or_else(|| NpyError::MalformedHeader("shape is not a tuple".into()))?;
    let dims = shape
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| NpyError::MalformedHeader(format!("bad dimension {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((dtype, fortran, dims))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Bytes numpy 1.26 writes for np.save(f, np.arange(6, dtype='<f8').reshape(2, 3)).
    fn numpy_reference() -> Vec<u8> {
        let mut header = b"{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3), }".to_vec();
        while (10 + header.len() + 1) % 64 != 0 {
            header.push(b' ');
        }
        header.push(b'\n');
        let mut out = b"\x93NUMPY\x01\x00".to_vec();
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(&header);
        for v in 0..6 {
            out.extend_from_slice(&(v as f64).to_le_bytes());
        }
        out
    }

    #[test]
    fn reads_numpy_layout_and_writes_it_back() {
        let bytes = numpy_reference();
        assert_eq!(bytes.len(), 128 + 48);
        let arr = NpyArray::from_bytes(&bytes).unwrap();
        assert_eq!(arr.shape(), &[2, 3]);
        assert_eq!(arr.to_f64(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(arr.to_bytes(), bytes);
    }

    #[test]
    fn version_two_header() {
        let header = b"{'descr': '|b1', 'fortran_order': False, 'shape': (3,), }\n";
        let mut bytes = b"\x93NUMPY\x02\x00".to_vec();
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[1, 0, 7]);
        let arr = NpyArray::from_bytes(&bytes).unwrap();
        assert_eq!(arr.to_bool(), vec![true, false, true]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(NpyArray::from_bytes(b"hello world"), Err(NpyError::BadMagic)));
        let mut v3 = numpy_reference();
        v3[6] = 3;
        assert!(matches!(NpyArray::from_bytes(&v3), Err(NpyError::UnsupportedVersion(3, 0))));
        let short = numpy_reference();
        assert!(matches!(
            NpyArray::from_bytes(&short[..short.len() - 1]),
            Err(NpyError::Truncated { .. })
        ));
        let mut be = numpy_reference();
        let pos = be.windows(3).position(|w| w == b"<f8").unwrap();
        be[pos] = b'>';
        assert!(matches!(NpyArray::from_bytes(&be), Err(NpyError::UnsupportedDtype(_))));
        let mut fortran = numpy_reference();
        let pos = fortran.windows(5).position(|w| w == b"False").unwrap();
        fortran[pos..pos + 5].copy_from_slice(b"True ");
        assert!(matches!(NpyArray::from_bytes(&fortran), Err(NpyError::FortranOrder)));
    }

    #[test]
    fn scalar_and_empty_shapes() {
        let scalar = NpyArray::from_f64(vec![], &[2.5]).unwrap();
        let back = NpyArray::from_bytes(&scalar.to_bytes()).unwrap();
        assert_eq!(back.shape(), &[] as &[usize]);
        assert_eq!(back.to_f64(), vec![2.5]);
        let empty = NpyArray::from_f64(vec![0, 3], &[]).unwrap();
        assert_eq!(NpyArray::from_bytes(&empty.to_bytes()).unwrap(), empty);
    }

    #[test]
    fn nan_payload_survives() {
        let weird = f64::from_bits(0x7ff8_0000_dead_beef);
        let arr = NpyArray::from_f64(vec![1], &[weird]).unwrap();
        let back = NpyArray::from_bytes(&arr.to_bytes()).unwrap();
        assert_eq!(back.to_f64()[0].to_bits(), weird.to_bits());
    }

    proptest! {
        #[test]
        fn header_is_aligned_and_round_trips(
            values in prop::collection::vec(any::<f64>(), 0..40),
            f32_storage in any::<bool>(),
        ) {
            let shape = vec![values.len()];
            let arr = if f32_storage {
                NpyArray::from_f32(shape, &values).unwrap()
            } else {
                NpyArray::from_f64(shape, &values).unwrap()
            };
            let bytes = arr.to_bytes();
            prop_assert_eq!((bytes.len() - arr.raw().len()) % 64, 0);
            let back = NpyArray::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}

//! `RTEN` binary tensor files and named-tensor archives.
//!
//! Record layout: magic `RTEN`, `u8` version (1), `u8` dtype (0 = f32,
//! 1 = f64), `u8` ndim, `ndim` little-endian `u64` extents, then the values
//! as little-endian floats in row-major order.
//!
//! An archive is a directory holding `tensors.rten` (records back to back)
//! and `index.txt`, one `name<TAB>file<TAB>offset` line per tensor in
//! insertion order.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::{Tensor, TensorError};

pub const MAGIC: &[u8; 4] = b"RTEN";
pub const VERSION: u8 = 1;
pub const INDEX_FILE: &str = "index.txt";
pub const DATA_FILE: &str = "tensors.rten";
const INDEX_HEADER: &str = "# rten-archive v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor, dtype: DType) -> Result<(), TensorError> {
    if t.ndim() > u8::MAX as usize {
        return Err(TensorError::Format(format!("rank {} too large", t.ndim())));
    }
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, dtype as u8, t.ndim() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    match dtype {
        DType::F32 => {
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        DType::F64 => {
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor, TensorError> {
    let mut head = [0u8; 7];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(TensorError::Format("bad magic".into()));
    }
    if head[4] != VERSION {
        return Err(TensorError::Format(format!("unsupported version {}", head[4])));
    }
    let dtype = match head[5] {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(TensorError::Format(format!("unknown dtype {other}"))),
    };
    let ndim = head[6] as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    match dtype {
        DType::F32 => {
            let mut b = [0u8; 4];
            for _ in 0..numel {
                r.read_exact(&mut b)?;
                data.push(f32::from_le_bytes(b) as f64);
            }
        }
        DType::F64 => {
            let mut b = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
        }
    }
    Tensor::new(&shape, data)
}

pub fn save(path: &Path, t: &Tensor, dtype: DType) -> Result<(), TensorError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t, dtype)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Tensor, TensorError> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

/// Write an ordered list of named tensors as an archive directory.
pub fn save_archive(dir: &Path, tensors: &[(String, Tensor)]) -> Result<(), TensorError> {
    fs::create_dir_all(dir)?;
    let mut data = BufWriter::new(File::create(dir.join(DATA_FILE))?);
    let mut index = String::from(INDEX_HEADER);
    index.push('\n');
    let mut offset = 0u64;
    for (name, t) in tensors {
        if name.is_empty() || name.contains(['\t', '\n', '\r']) {
            return Err(TensorError::Format(format!("invalid tensor name {name:?}")));
        }
        let mut buf = Vec::new();
        write_tensor(&mut buf, t, DType::F64)?;
        data.write_all(&buf)?;
        index.push_str(&format!("{name}\t{DATA_FILE}\t{offset}\n"));
        offset += buf.len() as u64;
    }
    data.flush()?;
    fs::write(dir.join(INDEX_FILE), index)?;
    Ok(())
}

/// Read an archive written by [`save_archive`], preserving order.
pub fn load_archive(dir: &Path) -> Result<Vec<(String, Tensor)>, TensorError> {
    let index = fs::read_to_string(dir.join(INDEX_FILE))?;
    let mut out = Vec::new();
    for (lineno, line) in index.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, file, offset] = fields[..] else {
            return Err(TensorError::Format(format!(
                "{}: line {}: expected name, file, offset",
                INDEX_FILE,
                lineno + 1
            )));
        };
        if file.contains(['/', '\\']) {
            return Err(TensorError::Format(format!("data file {file:?} outside archive")));
        }
        let offset: u64 = offset
            .parse()
            .map_err(|_| TensorError::Format(format!("line {}: bad offset", lineno + 1)))?;
        let mut f = BufReader::new(File::open(dir.join(file))?);
        f.seek(SeekFrom::Start(offset))?;
        out.push((name.to_string(), read_tensor(&mut f)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2, 1], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, DType::F64).unwrap();
        assert_eq!(&buf[..4], b"RTEN");
        assert_eq!(buf[4..7], [1, 1, 2]);
        assert_eq!(buf[7..15], 2u64.to_le_bytes());
        assert_eq!(buf[15..23], 1u64.to_le_bytes());
        assert_eq!(buf[23..31], 1.0f64.to_le_bytes());
        assert_eq!(buf.len(), 7 + 16 + 16);
    }

    #[test]
    fn f32_records_widen_on_read() {
        let t = Tensor::new(&[3], vec![0.5, 1.0, -0.25]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, DType::F32).unwrap();
        assert_eq!(buf[5], 0);
        assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let t = Tensor::ones(&[4]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, DType::F64).unwrap();
        assert!(read_tensor(&mut &buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(matches!(read_tensor(&mut buf.as_slice()), Err(TensorError::Format(_))));
    }

    #[test]
    fn archive_keeps_order_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let items = vec![
            ("b.weight".to_string(), Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()),
            ("a.bias".to_string(), Tensor::scalar(0.125)),
        ];
        save_archive(dir.path(), &items).unwrap();
        assert_eq!(load_archive(dir.path()).unwrap(), items);
        let index = fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        assert!(index.contains("a.bias\ttensors.rten\t"));
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_bitwise(shape in prop::collection::vec(1usize..4, 1..4), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2)).collect();
            let t = Tensor::new(&shape, data).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t, DType::F64).unwrap();
            let back = read_tensor(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}

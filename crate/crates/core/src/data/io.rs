//! Dataset and matrix file formats.
//!
//! CSV: a header row with a response column named `y` and covariate columns
//! `X1..Xp`, one observation per line. Written with `y` first; on read the `y`
//! column may appear anywhere and the remaining columns are taken in order.
//!
//! Binary: 16-byte little-endian header (`b"RHDI"`, `u32 n`, `u32 p`,
//! `u32 flags`) followed by the `n × p` matrix in row-major `f64`, then, when
//! `flags & FLAG_RESPONSE` is set, `n` response values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::Dataset;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RHDI";
pub const FLAG_RESPONSE: u32 = 1;

pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.p()).map(|j| format!("X{j}")));
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(data.p() + 1);
    for i in 0..data.n() {
        rec.clear();
        rec.push(format!("{}", data.y()[i]));
        rec.extend((0..data.p()).map(|j| format!("{}", data.x()[(i, j)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let ycol = header
        .iter()
        .position(|h| h.trim() == "y")
        .ok_or_else(|| Error::Format("CSV header has no `y` column".into()))?;
    let p = header.len() - 1;
    if p == 0 {
        return Err(Error::Format("CSV has no covariate columns".into()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Format(format!("row {} has {} fields", line + 1, rec.len())));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("row {} column {}: bad number {field:?}", line + 1, c + 1)))?;
            if c == ycol {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    Dataset::new(DMatrix::from_row_slice(n, p, &xs), DVector::from_vec(ys))
}

pub fn write_binary<W: Write>(x: &DMatrix<f64>, y: Option<&DVector<f64>>, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let (n, p) = x.shape();
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")));
    w.write_all(MAGIC)?;
    w.write_all(&to_u32(n)?.to_le_bytes())?;
    w.write_all(&to_u32(p)?.to_le_bytes())?;
    let flags = if y.is_some() { FLAG_RESPONSE } else { 0 };
    w.write_all(&flags.to_le_bytes())?;
    for i in 0..n {
        for j in 0..p {
            w.write_all(&x[(i, j)].to_le_bytes())?;
        }
    }
    if let Some(y) = y {
        if y.len() != n {
            return Err(Error::dim("response length differs from row count"));
        }
        for v in y.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(reader: R) -> Result<(DMatrix<f64>, Option<DVector<f64>>)> {
    let mut r = BufReader::new(reader);
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    if &head[0..4] != MAGIC {
        return Err(Error::Format("bad magic, expected RHDI".into()));
    }
    let word = |k: usize| u32::from_le_bytes(head[k..k + 4].try_into().expect("4 bytes")) as usize;
    let (n, p, flags) = (word(4), word(8), word(12) as u32);
    if flags & !FLAG_RESPONSE != 0 {
        return Err(Error::Format(format!("unknown flags {flags:#x}")));
    }
    let mut buf = [0u8; 8];
    let mut next = |r: &mut BufReader<R>| -> Result<f64> {
        r.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    };
    let mut vals = Vec::with_capacity(n * p);
    for _ in 0..n * p {
        vals.push(next(&mut r)?);
    }
    let x = DMatrix::from_row_slice(n, p, &vals);
    let y = if flags & FLAG_RESPONSE != 0 {
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            ys.push(next(&mut r)?);
        }
        Some(DVector::from_vec(ys))
    } else {
        None
    };
    Ok((x, y))
}

impl Dataset {
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(self, File::create(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        read_csv(File::open(path)?)
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        write_binary(self.x(), Some(self.y()), File::create(path)?)
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Dataset> {
        match read_binary(File::open(path)?)? {
            (x, Some(y)) => Dataset::new(x, y),
            (_, None) => Err(Error::Format("binary file carries no response vector".into())),
        }
    }

    /// Picks the format from the extension: `.csv` or anything else as binary.
    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            Self::load_csv(path)
        } else {
            Self::load_binary(path)
        }
    }
}

pub fn save_matrix(m: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    write_binary(m, None, File::create(path)?)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    Ok(read_binary(File::open(path)?)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Dataset {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 3.0, 0.125, 1e-9, -7.0]);
        Dataset::new(x, DVector::from_vec(vec![0.5, -1.5])).unwrap()
    }

    #[test]
    fn csv_header_and_columns() {
        let mut buf = Vec::new();
        write_csv(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("y,X1,X2,X3\n"));
        assert_eq!(read_csv(&buf[..]).unwrap(), sample());
    }

    #[test]
    fn csv_with_response_last() {
        let text = "X1,X2,y\n1,2,3\n4,5,6\n";
        let d = read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.y().as_slice(), &[3.0, 6.0]);
        assert_eq!(d.x()[(1, 1)], 5.0);
        assert!(read_csv("X1,X2\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn binary_header_layout() {
        let mut buf = Vec::new();
        let d = sample();
        write_binary(d.x(), Some(d.y()), &mut buf).unwrap();
        assert_eq!(&buf[0..4], b"RHDI");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), FLAG_RESPONSE);
        assert_eq!(buf.len(), 16 + 8 * (6 + 2));
        // First payload value is X[0,0] (row-major).
        assert_eq!(f64::from_le_bytes(buf[16..24].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), -2.5);
        let (x, y) = read_binary(&buf[..]).unwrap();
        assert_eq!(&x, d.x());
        assert_eq!(y.as_ref(), Some(d.y()));
    }

    #[test]
    fn binary_rejects_bad_magic() {
        let mut buf = Vec::new();
        write_binary(&DMatrix::zeros(1, 1), None, &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_binary(&buf[..]), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn binary_roundtrip_is_exact(n in 1usize..6, p in 1usize..6, seed in any::<u64>()) {
            let x = DMatrix::from_fn(n, p, |i, j| ((seed.wrapping_mul(31 + i as u64 * 7 + j as u64)) as f64).sin() * 1e3);
            let mut buf = Vec::new();
            write_binary(&x, None, &mut buf).unwrap();
            let (back, y) = read_binary(&buf[..]).unwrap();
            prop_assert_eq!(back, x);
            prop_assert!(y.is_none());
        }
    }
}

//! Snapshot files: the `APND` binary container and interleaved text CSV.
//!
//! Binary layout, little-endian: magic `APND`, `u32` version, `u32` M, `u32` N,
//! then M·N complex values in row-major order, each as an `f32` real part
//! followed by an `f32` imaginary part.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::array::SnapshotMatrix;
use crate::linalg::CMat;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"APND";
pub const VERSION: u32 = 1;

pub fn write_apnd<W: Write>(mut out: W, z: &SnapshotMatrix) -> Result<()> {
    let d = z.data();
    let (m, n) = d.shape();
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} too large")));
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&dim(m)?.to_le_bytes())?;
    out.write_all(&dim(n)?.to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * m * n);
    for i in 0..m {
        for j in 0..n {
            let v = d[(i, j)];
            buf.extend_from_slice(&(v.re as f32).to_le_bytes());
            buf.extend_from_slice(&(v.im as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_apnd<R: Read>(mut input: R) -> Result<SnapshotMatrix> {
    let mut head = [0u8; 16];
    input.read_exact(&mut head).map_err(|_| Error::Format("truncated APND header".into()))?;
    if &head[0..4] != MAGIC {
        return Err(Error::Format("bad magic, not an APND file".into()));
    }
    let word = |i: usize| u32::from_le_bytes([head[i], head[i + 1], head[i + 2], head[i + 3]]);
    let version = word(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported APND version {version}")));
    }
    let (m, n) = (word(8) as usize, word(12) as usize);
    if m == 0 || n == 0 {
        return Err(Error::Format(format!("empty APND payload ({m}x{n})")));
    }
    let len = m.checked_mul(n).and_then(|c| c.checked_mul(8)).ok_or_else(|| Error::Format("APND size overflow".into()))?;
    let mut body = vec![0u8; len];
    input.read_exact(&mut body).map_err(|_| Error::Format(format!("truncated APND payload, expected {len} bytes")))?;
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after APND payload".into()));
    }
    let f = |o: usize| f32::from_le_bytes([body[o], body[o + 1], body[o + 2], body[o + 3]]) as f64;
    let z = CMat::from_fn(m, n, |i, j| {
        let o = 8 * (i * n + j);
        Complex64::new(f(o), f(o + 4))
    });
    SnapshotMatrix::new(z)
}

/// One sensor per line: `re,im,re,im,...` across snapshots.
pub fn write_text<W: Write>(mut out: W, z: &SnapshotMatrix) -> Result<()> {
    let d = z.data();
    for i in 0..d.nrows() {
        let line: Vec<String> = d.row(i).iter().flat_map(|v| [v.re.to_string(), v.im.to_string()]).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Parses the interleaved text layout. Blank lines and `#` comments are skipped.
pub fn read_text<R: Read>(input: R) -> Result<SnapshotMatrix> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("row {}: '{s}': {e}", line + 1))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() % 2 != 0 {
            return Err(Error::Format(format!("row {} has an odd number of values", line + 1)));
        }
        rows.push(vals.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect());
    }
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Format("rows have differing snapshot counts".into()));
    }
    if m == 0 || n == 0 {
        return Err(Error::Format("no snapshot data".into()));
    }
    SnapshotMatrix::new(CMat::from_fn(m, n, |i, j| rows[i][j]))
}

/// Reads either format, choosing by magic bytes.
pub fn load_snapshots(path: &Path) -> Result<SnapshotMatrix> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        read_apnd(bytes.as_slice())
    } else {
        read_text(bytes.as_slice())
    }
}

/// Writes APND unless the extension is `.csv` or `.txt`.
pub fn save_snapshots(path: &Path, z: &SnapshotMatrix) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("txt") => write_text(file, z),
        _ => write_apnd(file, z),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SnapshotMatrix {
        let z = CMat::from_fn(3, 4, |i, j| Complex64::new(i as f64 - 0.25 * j as f64, 0.5 + j as f64 / 3.0));
        SnapshotMatrix::new(z).unwrap()
    }

    #[test]
    fn apnd_round_trip_is_f32_exact() {
        let z = sample();
        let mut buf = Vec::new();
        write_apnd(&mut buf, &z).unwrap();
        assert_eq!(&buf[..4], MAGIC);
        assert_eq!(buf.len(), 16 + 3 * 4 * 8);
        let back = read_apnd(buf.as_slice()).unwrap();
        for (a, b) in z.data().iter().zip(back.data().iter()) {
            assert_eq!(a.re as f32 as f64, b.re);
            assert_eq!(a.im as f32 as f64, b.im);
        }
        let mut again = Vec::new();
        write_apnd(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn apnd_rejects_garbage() {
        assert!(read_apnd(&b"NOPE\x01\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_apnd(&mut buf, &sample()).unwrap();
        buf.pop();
        assert!(read_apnd(buf.as_slice()).is_err());
    }

    #[test]
    fn text_round_trip() {
        let z = sample();
        let mut buf = Vec::new();
        write_text(&mut buf, &z).unwrap();
        assert_eq!(read_text(buf.as_slice()).unwrap(), z);
        assert!(read_text(&b"1,2,3\n"[..]).is_err());
    }
}

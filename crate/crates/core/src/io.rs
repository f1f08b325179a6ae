//! Binary containers for kernels and network checkpoints, plus CSV export.
//!
//! Kernel files: magic `WNTK1`, `u32` rows, `u32` cols, `u8` dtype, then the
//! row-major `f64` payload. Checkpoints: magic `WMLP1`, `u32` width count,
//! the widths as `u32`, `u8` parameterization, `u8` activation, `f64` κ,
//! `f64` σ_w, then each layer's weights row-major. Integers and floats are
//! little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::activation::ActivationKind;
use crate::error::{Result, WntkError};
use crate::network::{Mlp, Parameterization};

pub const KERNEL_MAGIC: &[u8; 5] = b"WNTK1";
pub const MLP_MAGIC: &[u8; 5] = b"WMLP1";
pub const DTYPE_F64: u8 = 1;

fn read_exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => WntkError::Format("truncated container".into()),
        _ => WntkError::Io(e),
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4, _>(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<8, _>(r)?))
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| WntkError::InvalidArgument(format!("{what} {v} does not fit in u32")))
}

fn write_row_major<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_row_major<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        values.push(read_f64(r)?);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn expect_end<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(WntkError::Format("trailing bytes after payload".into())),
    }
}

pub fn write_kernel<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    w.write_all(KERNEL_MAGIC)?;
    w.write_all(&to_u32(m.nrows(), "row count")?.to_le_bytes())?;
    w.write_all(&to_u32(m.ncols(), "column count")?.to_le_bytes())?;
    w.write_all(&[DTYPE_F64])?;
    write_row_major(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn read_kernel<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    if &read_exact::<5, _>(&mut r)? != KERNEL_MAGIC {
        return Err(WntkError::Format("not a WNTK1 kernel file".into()));
    }
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let [dtype] = read_exact::<1, _>(&mut r)?;
    if dtype != DTYPE_F64 {
        return Err(WntkError::Format(format!("unsupported dtype code {dtype}")));
    }
    let m = read_row_major(&mut r, rows, cols)?;
    expect_end(&mut r)?;
    Ok(m)
}

pub fn save_kernel(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_kernel(BufWriter::new(File::create(path)?), m)
}

pub fn load_kernel(path: &Path) -> Result<DMatrix<f64>> {
    read_kernel(BufReader::new(File::open(path)?))
}

/// One CSV row per matrix row, no header, shortest round-trip formatting.
pub fn write_matrix_csv<W: Write>(w: W, m: &DMatrix<f64>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for i in 0..m.nrows() {
        out.write_record(m.row(i).iter().map(|v| format!("{v:?}")))?;
    }
    out.flush()?;
    Ok(())
}

fn activation_code(a: ActivationKind) -> Result<u8> {
    match a {
        ActivationKind::Relu => Ok(0),
        ActivationKind::Tanh => Ok(1),
        ActivationKind::Identity => Ok(2),
        ActivationKind::Smooth(s) => Err(WntkError::InvalidArgument(format!(
            "custom activation '{}' cannot be stored in a checkpoint",
            s.name
        ))),
    }
}

pub fn write_mlp<W: Write>(mut w: W, m: &Mlp) -> Result<()> {
    w.write_all(MLP_MAGIC)?;
    w.write_all(&to_u32(m.widths().len(), "width count")?.to_le_bytes())?;
    for &d in m.widths() {
        w.write_all(&to_u32(d, "width")?.to_le_bytes())?;
    }
    let p = match m.parameterization() {
        Parameterization::Ntk => 0u8,
        Parameterization::Standard => 1u8,
    };
    w.write_all(&[p, activation_code(m.activation())?])?;
    w.write_all(&m.kappa().to_le_bytes())?;
    w.write_all(&m.sigma_w().to_le_bytes())?;
    for layer in m.weights() {
        write_row_major(&mut w, layer)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mlp<R: Read>(mut r: R) -> Result<Mlp> {
    if &read_exact::<5, _>(&mut r)? != MLP_MAGIC {
        return Err(WntkError::Format("not a WMLP1 checkpoint".into()));
    }
    let count = read_u32(&mut r)? as usize;
    if !(2..=1 << 16).contains(&count) {
        return Err(WntkError::Format(format!("implausible width count {count}")));
    }
    let widths = (0..count).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let [p, a] = read_exact::<2, _>(&mut r)?;
    let parameterization = match p {
        0 => Parameterization::Ntk,
        1 => Parameterization::Standard,
        other => return Err(WntkError::Format(format!("unknown parameterization code {other}"))),
    };
    let activation = match a {
        0 => ActivationKind::Relu,
        1 => ActivationKind::Tanh,
        2 => ActivationKind::Identity,
        other => return Err(WntkError::Format(format!("unknown activation code {other}"))),
    };
    let kappa = read_f64(&mut r)?;
    let sigma_w = read_f64(&mut r)?;
    let weights = widths
        .windows(2)
        .map(|w| read_row_major(&mut r, w[1], w[0]))
        .collect::<Result<Vec<_>>>()?;
    expect_end(&mut r)?;
    Mlp::from_parts(widths, weights, parameterization, activation, kappa, sigma_w)
        .map_err(|e| WntkError::Format(e.to_string()))
}

pub fn save_mlp(path: &Path, m: &Mlp) -> Result<()> {
    write_mlp(BufWriter::new(File::create(path)?), m)
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    read_mlp(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_mlp;

    #[test]
    fn kernel_layout() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut buf = Vec::new();
        write_kernel(&mut buf, &m).unwrap();
        assert_eq!(&buf[..5], b"WNTK1");
        assert_eq!(buf.len(), 5 + 4 + 4 + 1 + 6 * 8);
        assert_eq!(&buf[22..30], &2.0f64.to_le_bytes()[..]);
        assert_eq!(read_kernel(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn kernel_rejects_bad_input() {
        assert!(matches!(read_kernel(&b"WNTK2"[..]), Err(WntkError::Format(_))));
        let mut buf = Vec::new();
        write_kernel(&mut buf, &DMatrix::<f64>::identity(2, 2)).unwrap();
        assert!(matches!(read_kernel(&buf[..buf.len() - 1]), Err(WntkError::Format(_))));
        buf.push(0);
        assert!(matches!(read_kernel(buf.as_slice()), Err(WntkError::Format(_))));
    }

    #[test]
    fn mlp_round_trip() {
        let m = init_mlp(&[3, 5, 1], Parameterization::Standard, ActivationKind::Tanh, 0.5, 9).unwrap();
        let mut buf = Vec::new();
        write_mlp(&mut buf, &m).unwrap();
        assert_eq!(read_mlp(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn csv_is_row_major() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 2.0, -3.5, 4.0]);
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &m).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0.1,2.0\n-3.5,4.0\n");
    }
}

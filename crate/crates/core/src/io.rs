//! File formats: the `SSLAB001` binary matrix, CSV atom tables, the
//! `SSIMG001` raw tensor and binary PGM/PPM images.
//!
//! Binary matrix layout: 8-byte magic, `P` and `M` as little-endian `u64`,
//! then `P * M` little-endian `f64` in column-major order. Signals are
//! stored as `P x 1` matrices.
//!
//! Raw tensor layout: 8-byte magic, three little-endian `u64` dims
//! `(d0, d1, d2)`, then `d0 * d1 * d2` little-endian `f64` in row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ShapeBuilder};

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"SSLAB001";
pub const TENSOR_MAGIC: &[u8; 8] = b"SSIMG001";

pub fn write_matrix<W: Write>(mut out: W, matrix: &Array2<f64>) -> Result<()> {
    out.write_all(MATRIX_MAGIC)?;
    out.write_all(&(matrix.nrows() as u64).to_le_bytes())?;
    out.write_all(&(matrix.ncols() as u64).to_le_bytes())?;
    for col in matrix.columns() {
        for v in col {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix<R: Read>(mut input: R) -> Result<Array2<f64>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::Format("bad matrix magic".into()));
    }
    let rows = read_u64(&mut input)? as usize;
    let cols = read_u64(&mut input)? as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("matrix dims overflow".into()))?;
    let data = read_f64s(&mut input, len)?;
    let matrix = Array2::from_shape_vec((rows, cols).f(), data).map_err(|e| Error::Format(e.to_string()))?;
    // standard layout keeps downstream products bitwise reproducible
    Ok(matrix.as_standard_layout().into_owned())
}

pub fn save_matrix(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_matrix(&mut out, matrix)?;
    out.flush()?;
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    read_matrix(BufReader::new(File::open(path)?))
}

/// One column per atom, header `atom_0,...,atom_{M-1}`, one row per signal
/// coordinate.
pub fn write_matrix_csv<W: Write>(mut out: W, matrix: &Array2<f64>) -> Result<()> {
    let header: Vec<String> = (0..matrix.ncols()).map(|m| format!("atom_{m}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for row in matrix.rows() {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv<R: BufRead>(input: R) -> Result<Array2<f64>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty csv".into()))??;
    let cols = header.split(',').count();
    for (m, name) in header.split(',').enumerate() {
        if name.trim() != format!("atom_{m}") {
            return Err(Error::Format(format!("unexpected header field {name:?}")));
        }
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for cell in line.split(',') {
            data.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("{cell:?}: {e}")))?,
            );
        }
        if data.len() - before != cols {
            return Err(Error::Format(format!("row {rows} has wrong arity")));
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_tensor<W: Write>(mut out: W, tensor: &Array3<f64>) -> Result<()> {
    out.write_all(TENSOR_MAGIC)?;
    let (a, b, c) = tensor.dim();
    for d in [a, b, c] {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in tensor.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(mut input: R) -> Result<Array3<f64>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format("bad tensor magic".into()));
    }
    let a = read_u64(&mut input)? as usize;
    let b = read_u64(&mut input)? as usize;
    let c = read_u64(&mut input)? as usize;
    let len = a
        .checked_mul(b)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| Error::Format("tensor dims overflow".into()))?;
    let data = read_f64s(&mut input, len)?;
    Array3::from_shape_vec((a, b, c), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_tensor(path: &Path, tensor: &Array3<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_tensor(&mut out, tensor)?;
    out.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Array3<f64>> {
    read_tensor(BufReader::new(File::open(path)?))
}

/// Reads a binary PGM (`P5`) or PPM (`P6`) into a `(colors, H, W)` tensor
/// with values scaled to `[0, 1]`.
pub fn read_pnm<R: Read>(input: R) -> Result<Array3<f64>> {
    let mut reader = BufReader::new(input);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let magic = next_token(&bytes, &mut pos)?;
    let colors = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported pnm magic {other:?}"))),
    };
    let width: usize = parse_token(&bytes, &mut pos)?;
    let height: usize = parse_token(&bytes, &mut pos)?;
    let maxval: usize = parse_token(&bytes, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("bad maxval {maxval}")));
    }
    // exactly one whitespace byte after maxval
    pos += 1;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let needed = width * height * colors * sample_bytes;
    let raster = bytes
        .get(pos..pos + needed)
        .ok_or_else(|| Error::Format("truncated pnm raster".into()))?;
    let mut image = Array3::zeros((colors, height, width));
    for y in 0..height {
        for x in 0..width {
            for c in 0..colors {
                let idx = ((y * width + x) * colors + c) * sample_bytes;
                let raw = if sample_bytes == 1 {
                    raster[idx] as usize
                } else {
                    ((raster[idx] as usize) << 8) | raster[idx + 1] as usize
                };
                image[[c, y, x]] = raw as f64 / maxval as f64;
            }
        }
    }
    Ok(image)
}

/// Writes a `(colors, H, W)` tensor in `[0, 1]` as 8-bit PGM or PPM.
pub fn write_pnm<W: Write>(mut out: W, image: &Array3<f64>) -> Result<()> {
    let (colors, height, width) = image.dim();
    let magic = match colors {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::shape("1 or 3 colors", colors)),
    };
    write!(out, "{magic}\n{width} {height}\n255\n")?;
    let mut raster = Vec::with_capacity(colors * height * width);
    for y in 0..height {
        for x in 0..width {
            for c in 0..colors {
                raster.push((image[[c, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out.write_all(&raster)?;
    Ok(())
}

pub fn load_image(path: &Path) -> Result<Array3<f64>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 8];
    let n = file.read(&mut magic)?;
    drop(file);
    if n == 8 && &magic == TENSOR_MAGIC {
        load_tensor(path)
    } else {
        read_pnm(File::open(path)?)
    }
}

/// Round-trippable formatting with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated pnm header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_token<T: std::str::FromStr>(bytes: &[u8], pos: &mut usize) -> Result<T> {
    let token = next_token(bytes, pos)?;
    token
        .parse()
        .map_err(|_| Error::Format(format!("bad pnm header field {token:?}")))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s<R: Read>(input: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut data = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        input.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn matrix_layout_is_column_major() {
        let m = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(&buf[..8], b"SSLAB001");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 2);
        let second = f64::from_le_bytes(buf[32..40].try_into().unwrap());
        assert_eq!(second, 3.0);
        assert_eq!(buf.len(), 24 + 6 * 8);
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"SSLAB002\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0".to_vec();
        assert!(matches!(read_matrix(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn csv_header_and_rows() {
        let m = array![[0.5, -1.0], [0.25, 2.0]];
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &m).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("atom_0,atom_1\n"));
        assert_eq!(read_matrix_csv(&buf[..]).unwrap(), m);
    }

    #[test]
    fn pgm_roundtrip_8bit() {
        let img = Array3::from_shape_fn((1, 3, 4), |(_, y, x)| ((y * 4 + x) * 20) as f64 / 255.0);
        let mut buf = Vec::new();
        write_pnm(&mut buf, &img).unwrap();
        let back = read_pnm(&buf[..]).unwrap();
        assert!(back.iter().zip(img.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn ppm_with_comment_header() {
        let mut buf = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        buf.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        let img = read_pnm(&buf[..]).unwrap();
        assert_eq!(img.dim(), (3, 1, 2));
        assert_eq!(img[[0, 0, 0]], 1.0);
        assert_eq!(img[[2, 0, 1]], 1.0);
        assert_eq!(img[[1, 0, 0]], 0.0);
    }

    proptest! {
        #[test]
        fn binary_roundtrips_bit_exact(
            rows in 1usize..5, cols in 1usize..5,
            data in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 25),
        ) {
            let m = Array2::from_shape_fn((rows, cols), |(i, j)| data[i * 5 + j]);
            let mut buf = Vec::new();
            write_matrix(&mut buf, &m).unwrap();
            let back = read_matrix(&buf[..]).unwrap();
            prop_assert!(back.iter().zip(m.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
            let t = m.clone().into_shape_with_order((rows, cols, 1)).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            prop_assert_eq!(read_tensor(&buf[..]).unwrap(), t);
        }
    }
}

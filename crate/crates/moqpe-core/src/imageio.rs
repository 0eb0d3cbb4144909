//! Binary PGM (P5) / PPM (P6) image files, plus the raw tensor container as
//! an image source. Images load as `[H x W x C]` tensors with values in
//! [0, 1].

use crate::error::{Error, Result};
use crate::tensor::io::{read_tensor, TENSOR_MAGIC};
use crate::tensor::Tensor;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub fn write_pgm<P: AsRef<Path>>(path: P, img: &Tensor) -> Result<()> {
    let (h, w, c) = image_dims(img)?;
    if c != 1 {
        return Err(Error::Shape(format!("PGM wants 1 channel, image has {c}")));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{w} {h}\n255\n")?;
    f.write_all(&to_bytes(img))?;
    Ok(())
}

pub fn write_ppm<P: AsRef<Path>>(path: P, img: &Tensor) -> Result<()> {
    let (h, w, c) = image_dims(img)?;
    if c != 3 {
        return Err(Error::Shape(format!("PPM wants 3 channels, image has {c}")));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P6\n{w} {h}\n255\n")?;
    f.write_all(&to_bytes(img))?;
    Ok(())
}

/// Reads a P5/P6 image or an `MQT1` tensor file, sniffed by magic bytes.
pub fn read_image<P: AsRef<Path>>(path: P) -> Result<Tensor> {
    let mut r = BufReader::new(std::fs::File::open(&path)?);
    let head = r.fill_buf()?;
    if head.len() >= 4 && &head[..4] == TENSOR_MAGIC {
        let t = read_tensor(&mut r)?;
        image_dims(&t)?;
        return Ok(t);
    }
    read_pnm(&mut r)
}

fn read_pnm<R: BufRead>(r: &mut R) -> Result<Tensor> {
    let magic = next_header_token(r)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Parse(format!("unsupported image magic {other:?}"))),
    };
    let w: usize = parse_header_num(r, "width")?;
    let h: usize = parse_header_num(r, "height")?;
    let maxval: usize = parse_header_num(r, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("unsupported maxval {maxval}")));
    }
    let mut buf = vec![0u8; h * w * channels];
    r.read_exact(&mut buf)?;
    let data = buf.iter().map(|&b| b as f64 / maxval as f64).collect();
    Tensor::new(vec![h, w, channels], data)
}

fn next_header_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut in_comment = false;
    loop {
        let mut byte = [0u8; 1];
        if r.read(&mut byte)? == 0 {
            if tok.is_empty() {
                return Err(Error::Parse("truncated image header".into()));
            }
            return Ok(tok);
        }
        let c = byte[0] as char;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if c == '#' {
            in_comment = true;
            continue;
        }
        if c.is_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c);
    }
}

fn parse_header_num<R: BufRead>(r: &mut R, what: &str) -> Result<usize> {
    let tok = next_header_token(r)?;
    tok.parse()
        .map_err(|_| Error::Parse(format!("bad {what} {tok:?} in image header")))
}

fn image_dims(img: &Tensor) -> Result<(usize, usize, usize)> {
    match img.shape() {
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(Error::Shape(format!("image must be [H, W, C], got {other:?}"))),
    }
}

fn to_bytes(img: &Tensor) -> Vec<u8> {
    img.data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Maps [0, 1] pixel values to mean/variance-0.5 standardized values in
/// [-1, 1].
pub fn standardize(img: &Tensor) -> Tensor {
    Tensor::from_parts(
        img.shape().to_vec(),
        img.data().iter().map(|&v| (v - 0.5) / 0.5).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_on_byte_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let data: Vec<f64> = (0..12).map(|i| (i * 20) as f64 / 255.0).collect();
        let img = Tensor::new(vec![3, 4, 1], data.clone()).unwrap();
        write_pgm(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.shape(), &[3, 4, 1]);
        for (a, b) in back.data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ppm_and_comments_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let img = Tensor::new(vec![1, 2, 3], vec![0.0, 0.5, 1.0, 1.0, 0.5, 0.0]).unwrap();
        write_ppm(&path, &img).unwrap();
        // Inject a comment line into the header.
        let bytes = std::fs::read(&path).unwrap();
        let mut with_comment = b"P6\n# comment line\n".to_vec();
        with_comment.extend_from_slice(&bytes[3..]);
        std::fs::write(&path, with_comment).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.shape(), &[1, 2, 3]);
    }

    #[test]
    fn tensor_container_is_accepted_as_image() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.mqt");
        let img = Tensor::new(vec![2, 2, 1], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        crate::tensor::io::save_tensor(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.data(), img.data());
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"JUNKJUNK").unwrap();
        assert!(read_image(&path).is_err());
    }

    #[test]
    fn standardize_hits_unit_range() {
        let img = Tensor::new(vec![1, 1, 3], vec![0.0, 0.5, 1.0]).unwrap();
        let s = standardize(&img);
        assert_eq!(s.data(), &[-1.0, 0.0, 1.0]);
    }
}

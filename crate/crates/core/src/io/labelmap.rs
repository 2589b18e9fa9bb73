//! Instance label maps as 16-bit grayscale PNGs (0 = background).

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::mask::{GridDims, InstanceLabelMap};

pub fn encode_labelmap_png(lm: &InstanceLabelMap) -> Result<Vec<u8>> {
    let d = lm.dims();
    let mut px = Vec::with_capacity(d.len());
    for &l in lm.labels() {
        px.push(u16::try_from(l).map_err(|_| Error::InvalidLabel(l as u64))?);
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(d.width() as u32, d.height() as u32, px).expect("buffer sized to dims");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(|e| Error::Format(e.to_string()))?;
    Ok(out.into_inner())
}

/// Accepts 16-bit or 8-bit grayscale; values are taken as labels verbatim.
pub fn decode_labelmap_png(bytes: &[u8]) -> Result<InstanceLabelMap> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| Error::Format(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels: Vec<u32> = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
        other => return Err(Error::Format(format!("label map must be single-channel grayscale, found {:?}", other.color()))),
    };
    InstanceLabelMap::new(GridDims::new(h, w)?, labels)
}

pub fn write_labelmap_png(lm: &InstanceLabelMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_labelmap_png(lm)?)
}

pub fn read_labelmap_png(path: &Path) -> Result<InstanceLabelMap> {
    decode_labelmap_png(&read_bytes(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Stream;

    #[test]
    fn lossless_round_trip() {
        let mut s = Stream::new(4);
        let d = GridDims::new(9, 13).unwrap();
        let labels: Vec<u32> = (0..d.len()).map(|_| if s.unit() < 0.3 { 0 } else { s.range_inclusive(1, 65535) as u32 }).collect();
        let lm = InstanceLabelMap::new(d, labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lm.png");
        write_labelmap_png(&lm, &p).unwrap();
        assert_eq!(read_labelmap_png(&p).unwrap(), lm);
        assert_eq!(encode_labelmap_png(&lm).unwrap(), std::fs::read(&p).unwrap());
    }

    #[test]
    fn rejects_wide_ids_and_color() {
        let d = GridDims::new(1, 2).unwrap();
        let lm = InstanceLabelMap::new(d, vec![0, 70000]).unwrap();
        assert!(matches!(encode_labelmap_png(&lm), Err(Error::InvalidLabel(70000))));
        let rgb = image::RgbImage::new(2, 2);
        let mut buf = Cursor::new(Vec::new());
        rgb.write_to(&mut buf, ImageFormat::Png).unwrap();
        assert!(decode_labelmap_png(buf.get_ref()).is_err());
    }
}

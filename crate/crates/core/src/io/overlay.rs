//! Region overlays: translucent fill per region plus a one-pixel outline,
//! colour derived from a hash of the region id.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::mask::{boundary_pixels, BinaryMask, GridDims};
use crate::seed::splitmix64;

const FILL_ALPHA: f64 = 0.45;
const BLANK: Rgb<u8> = Rgb([24, 24, 24]);

/// Stable colour for a region id.
pub fn region_color(id: u64) -> Rgb<u8> {
    let h = splitmix64(id ^ 0x6f76_6572_6c61_7921).to_le_bytes();
    Rgb([64 + h[0] % 192, 64 + h[1] % 192, 64 + h[2] % 192])
}

pub fn blank_canvas(dims: GridDims) -> RgbImage {
    RgbImage::from_pixel(dims.width() as u32, dims.height() as u32, BLANK)
}

pub fn load_canvas(path: &Path) -> Result<RgbImage> {
    let bytes = read_bytes(path)?;
    image::load_from_memory(&bytes)
        .map(|i| i.to_rgb8())
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Paints the regions in order onto `canvas`.
pub fn render_overlay<'a>(
    mut canvas: RgbImage,
    regions: impl IntoIterator<Item = (u64, &'a BinaryMask)>,
) -> Result<RgbImage> {
    let dims = GridDims::new(canvas.height() as usize, canvas.width() as usize)?;
    for (id, mask) in regions {
        dims.check_same(&mask.dims())?;
        let color = region_color(id);
        for (r, c) in mask.pixels() {
            let px = canvas.get_pixel_mut(c as u32, r as u32);
            for k in 0..3 {
                let v = (1.0 - FILL_ALPHA) * px[k] as f64 + FILL_ALPHA * color[k] as f64;
                px[k] = v.round() as u8;
            }
        }
        for (r, c) in boundary_pixels(mask).pixels() {
            canvas.put_pixel(c as u32, r as u32, color);
        }
    }
    Ok(canvas)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(|e| Error::Format(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn write_png(img: &RgbImage, path: &Path) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}

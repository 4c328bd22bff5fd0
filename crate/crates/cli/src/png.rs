//! Panoramas as 8-bit RGB PNG files.

use std::path::Path;

use image::{ImageFormat, RgbImage};
use omniloc::Panorama;

use crate::ply::quantize;
use crate::CliError;

/// Decodes any 8-bit PNG; alpha and grayscale are converted to RGB.
pub fn decode_png(bytes: &[u8]) -> Result<Panorama, CliError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| CliError::Input(format!("PNG: {e}")))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Panorama::new(h as usize, w as usize, data).map_err(|e| CliError::Input(format!("PNG: {e}")))
}

pub fn read_png(path: &Path) -> Result<Panorama, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    decode_png(&bytes).map_err(|e| match e {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn encode_png(pano: &Panorama) -> Result<Vec<u8>, CliError> {
    let bytes = pano.data().iter().map(|v| quantize(*v)).collect();
    let img = RgbImage::from_raw(pano.width() as u32, pano.height() as u32, bytes)
        .expect("buffer length matches the panorama shape");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| CliError::Output(format!("PNG encoding: {e}")))?;
    Ok(out.into_inner())
}

pub fn write_png(path: &Path, pano: &Panorama) -> Result<(), CliError> {
    std::fs::write(path, encode_png(pano)?).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

/// Warning text for panoramas that are not twice as wide as tall.
pub fn aspect_warning(pano: &Panorama) -> Option<String> {
    (pano.width() != 2 * pano.height()).then(|| {
        format!(
            "warning: panorama is {}x{} (HxW); equirectangular images are usually W = 2H",
            pano.height(),
            pano.width()
        )
    })
}

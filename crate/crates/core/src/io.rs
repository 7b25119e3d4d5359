//! Mask and pose files on disk.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{GrayImage, Luma};

use crate::contour_pose::PoseFile;
use crate::error::{Error, Result};
use crate::geometry::SilhouetteFrame;

/// Loads an 8-bit grayscale PGM or PNG mask; values above 127 are foreground.
pub fn read_mask(path: &Path) -> Result<SilhouetteFrame> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let mask = img.pixels().map(|p| (p.0[0] > 127) as u8).collect();
    SilhouetteFrame::new(h as usize, w as usize, mask)
}

/// Writes a binary PGM (P5) with foreground 255 and background 0.
pub fn write_pgm(path: &Path, frame: &SilhouetteFrame) -> Result<()> {
    let img = GrayImage::from_fn(frame.width() as u32, frame.height() as u32, |x, y| {
        Luma([if frame.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let encoder = PnmEncoder::new(BufWriter::new(file)).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
    img.write_with_encoder(encoder)?;
    Ok(())
}

/// Mask files (`.pgm` / `.png`) of a sequence directory in file-name order.
pub fn list_mask_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_mask_dir(dir: &Path) -> Result<Vec<SilhouetteFrame>> {
    list_mask_files(dir)?.iter().map(|p| read_mask(p)).collect()
}

pub fn read_pose_file(path: &Path) -> Result<PoseFile> {
    read_json(path)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_dir_all(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = SilhouetteFrame::from_fn(7, 9, |x, y| (x * y) % 3 == 1);
        let pgm = dir.path().join("000001.pgm");
        write_pgm(&pgm, &f).unwrap();
        assert_eq!(&fs::read(&pgm).unwrap()[..2], b"P5");
        assert_eq!(read_mask(&pgm).unwrap(), f);

        let png = dir.path().join("000002.png");
        let img = GrayImage::from_fn(9, 7, |x, y| Luma([if (x * y) % 3 == 1 { 200 } else { 100 }]));
        img.save(&png).unwrap();
        assert_eq!(read_mask(&png).unwrap(), f);

        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        assert_eq!(list_mask_files(dir.path()).unwrap(), vec![pgm, png]);
    }
}

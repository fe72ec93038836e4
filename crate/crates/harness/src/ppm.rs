//! Binary PPM (P6) frame export.

use std::path::Path;

use vino_core::Video;

use crate::error::{HarnessError, Result};

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Frame `f` as an 8-bit P6 image. RGB comes from the first three channels;
/// single-channel input is written as gray.
pub fn frame_ppm(video: &Video, f: usize) -> Result<Vec<u8>> {
    let d = video.dims();
    if f >= d.frames {
        return Err(HarnessError::Config(format!(
            "frame {f} out of range for {d}"
        )));
    }
    if d.channels != 1 && d.channels < 3 {
        return Err(HarnessError::Format(format!(
            "cannot export {} channels as RGB",
            d.channels
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", d.width, d.height).into_bytes();
    for y in 0..d.height {
        for x in 0..d.width {
            for c in 0..3 {
                let ch = if d.channels == 1 { 0 } else { c };
                out.push(to_byte(video.get(f, ch, y, x)));
            }
        }
    }
    Ok(out)
}

/// Writes `frame_000.ppm`, `frame_001.ppm`, ... into `dir`.
pub fn write_frames(video: &Video, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for f in 0..video.dims().frames {
        std::fs::write(dir.join(format!("frame_{f:03}.ppm")), frame_ppm(video, f)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use vino_core::{Dims, VideoLatent};

    #[test]
    fn header_and_clamping() {
        let v =
            VideoLatent::new(Dims::new(1, 3, 1, 2), vec![0.0, 1.5, 0.5, -1.0, 1.0, 0.2]).unwrap();
        let bytes = frame_ppm(&v, 0).unwrap();
        let header = b"P6\n2 1\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 128, 255, 255, 0, 51]);
        assert!(frame_ppm(&v, 1).is_err());
    }

    #[test]
    fn gray_input() {
        let v = VideoLatent::filled(Dims::new(1, 1, 1, 1), 1.0).unwrap();
        assert_eq!(&frame_ppm(&v, 0).unwrap()[11..], &[255, 255, 255]);
    }
}

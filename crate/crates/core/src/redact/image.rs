use std::collections::BTreeMap;
use std::io::Cursor;

use image::{DynamicImage, ImageBuffer, ImageFormat, Pixel};

use super::detector::{Region, RegionDetector};
use super::{check_applicable, RedactError, Redacted, Result};
use crate::policy::{Datatype, RedactionOp};

/// Replaces every `block` x `block` cell of `region` with its per-channel
/// mean (rounded half up). Cells on the region's right and bottom edges may
/// be smaller. Pixels outside `region` are untouched.
pub fn pixelate<P>(img: &mut ImageBuffer<P, Vec<P::Subpixel>>, region: Region, block: u32)
where
    P: Pixel,
    P::Subpixel: Into<u64> + TryFrom<u64>,
{
    let Some(region) = region.clip(img.width(), img.height()) else {
        return;
    };
    let block = block.max(1);
    let channels = P::CHANNEL_COUNT as usize;
    let (x_end, y_end) = (region.x + region.w, region.y + region.h);

    for by in (region.y..y_end).step_by(block as usize) {
        for bx in (region.x..x_end).step_by(block as usize) {
            let cx = bx..(bx + block).min(x_end);
            let cy = by..(by + block).min(y_end);
            let n = u64::from(cx.len() as u32 * cy.len() as u32);

            let mut sums = [0u64; 4];
            for y in cy.clone() {
                for x in cx.clone() {
                    for (s, c) in sums.iter_mut().zip(img.get_pixel(x, y).channels()) {
                        *s += (*c).into();
                    }
                }
            }
            let mut mean = *img.get_pixel(bx, by);
            for (c, s) in mean.channels_mut().iter_mut().zip(&sums[..channels]) {
                *c = P::Subpixel::try_from((s + n / 2) / n)
                    .unwrap_or_else(|_| unreachable!("mean of subpixels fits a subpixel"));
            }
            for y in cy.clone() {
                for x in cx.clone() {
                    img.put_pixel(x, y, mean);
                }
            }
        }
    }
}

fn pixelate_dynamic(img: &mut DynamicImage, region: Region, block: u32) -> Result<()> {
    match img {
        DynamicImage::ImageLuma8(b) => pixelate(b, region, block),
        DynamicImage::ImageLumaA8(b) => pixelate(b, region, block),
        DynamicImage::ImageRgb8(b) => pixelate(b, region, block),
        DynamicImage::ImageRgba8(b) => pixelate(b, region, block),
        DynamicImage::ImageLuma16(b) => pixelate(b, region, block),
        DynamicImage::ImageLumaA16(b) => pixelate(b, region, block),
        DynamicImage::ImageRgb16(b) => pixelate(b, region, block),
        DynamicImage::ImageRgba16(b) => pixelate(b, region, block),
        other => {
            return Err(RedactError::datatype(
                Datatype::Image,
                format!("unsupported pixel layout {:?}", other.color()),
            ))
        }
    }
    Ok(())
}

pub fn redact_image(
    content: &[u8],
    ops: &[RedactionOp],
    detectors: &BTreeMap<String, RegionDetector>,
) -> Result<Redacted> {
    for op in ops {
        check_applicable(Datatype::Image, op)?;
    }
    let bad = |e: &dyn std::fmt::Display| RedactError::datatype(Datatype::Image, e);
    let format = image::guess_format(content).map_err(|e| bad(&e))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(bad(&format!("{format:?} is not PNG or JPEG")));
    }
    let mut img = image::load_from_memory_with_format(content, format).map_err(|e| bad(&e))?;

    let mut warnings = Vec::new();
    for op in ops {
        let detector = detectors
            .get(&op.target)
            .ok_or_else(|| RedactError::Configuration(format!("no detector named {:?}", op.target)))?;
        let regions = detector.detect(content)?;
        if regions.is_empty() {
            warnings.push(format!("{op}: detector found no regions"));
        }
        for region in regions {
            pixelate_dynamic(&mut img, region, op.block_size())?;
        }
    }

    let mut out = Cursor::new(Vec::with_capacity(content.len()));
    img.write_to(&mut out, format).map_err(|e| bad(&e))?;
    Ok(Redacted {
        content: out.into_inner(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Action;
    use image::{Rgb, RgbImage, Rgba, RgbaImage};

    fn png(img: DynamicImage) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).unwrap();
        out.into_inner()
    }

    fn detectors(regions: &[Region]) -> BTreeMap<String, RegionDetector> {
        BTreeMap::from([("faces".to_owned(), RegionDetector::fixed("faces", regions))])
    }

    fn op(block: u32) -> RedactionOp {
        RedactionOp::new(Action::PixelateRegions, "faces").with_param("block", block.to_string())
    }

    #[test]
    fn solid_region_is_unchanged() {
        let red = RgbImage::from_pixel(64, 64, Rgb([255, 0, 0]));
        let input = png(DynamicImage::ImageRgb8(red.clone()));
        let out = redact_image(&input, &[op(16)], &detectors(&[Region::new(0, 0, 32, 32)])).unwrap();
        let decoded = image::load_from_memory(&out.content).unwrap().to_rgb8();
        assert_eq!(decoded, red);
    }

    #[test]
    fn two_tone_full_block_mean() {
        // Left half (255, 0, 0), right half (0, 0, 255): the mean of each
        // channel is 127.5, which rounds half up to 128.
        let img = RgbImage::from_fn(64, 64, |x, _| if x < 32 { Rgb([255, 0, 0]) } else { Rgb([0, 0, 255]) });
        let input = png(DynamicImage::ImageRgb8(img));
        let out = redact_image(&input, &[op(64)], &detectors(&[Region::new(0, 0, 64, 64)])).unwrap();
        let decoded = image::load_from_memory(&out.content).unwrap().to_rgb8();
        assert!(decoded.pixels().all(|p| *p == Rgb([128, 0, 128])));
    }

    #[test]
    fn clipped_region_and_outside_pixels() {
        let img = RgbaImage::from_fn(64, 64, |x, y| Rgba([x as u8 * 4, y as u8 * 4, (x ^ y) as u8, 255]));
        let input = png(DynamicImage::ImageRgba8(img.clone()));
        let region = Region::new(60, 60, 20, 20);
        let out = redact_image(&input, &[op(2)], &detectors(&[region])).unwrap();
        let decoded = image::load_from_memory(&out.content).unwrap().to_rgba8();
        let clipped = region.clip(64, 64).unwrap();
        assert_eq!(clipped, Region::new(60, 60, 4, 4));
        for (x, y, p) in decoded.enumerate_pixels() {
            if !clipped.contains(x, y) {
                assert_eq!(p, img.get_pixel(x, y));
            }
        }
        assert_ne!(decoded, img);
    }

    #[test]
    fn partial_edge_blocks_average_their_own_pixels() {
        let mut img = ImageBuffer::<image::Luma<u8>, _>::from_fn(5, 1, |x, _| image::Luma([x as u8 * 10]));
        pixelate(&mut img, Region::new(0, 0, 5, 1), 4);
        let got: Vec<u8> = img.pixels().map(|p| p.0[0]).collect();
        // (0+10+20+30)/4 = 15; the lone edge pixel keeps 40.
        assert_eq!(got, vec![15, 15, 15, 15, 40]);
    }

    #[test]
    fn sixteen_bit_png_preserved() {
        let img = ImageBuffer::<Rgb<u16>, _>::from_fn(8, 8, |x, y| Rgb([x as u16 * 1000, y as u16 * 1000, 65535]));
        let input = png(DynamicImage::ImageRgb16(img.clone()));
        let out = redact_image(&input, &[op(4)], &detectors(&[Region::new(0, 0, 4, 4)])).unwrap();
        let decoded = image::load_from_memory(&out.content).unwrap();
        let decoded = decoded.as_rgb16().expect("still 16-bit");
        assert_eq!(decoded.get_pixel(7, 7), img.get_pixel(7, 7));
        assert_eq!(decoded.get_pixel(0, 0), &Rgb([1500, 1500, 65535]));
    }

    #[test]
    fn jpeg_round_trips_as_jpeg() {
        let img = RgbImage::from_pixel(32, 32, Rgb([10, 200, 30]));
        let mut buf = Cursor::new(Vec::new());
        DynamicImage::ImageRgb8(img)
            .write_to(&mut buf, ImageFormat::Jpeg)
            .unwrap();
        let out = redact_image(buf.get_ref(), &[op(8)], &detectors(&[Region::new(0, 0, 16, 16)])).unwrap();
        assert_eq!(image::guess_format(&out.content).unwrap(), ImageFormat::Jpeg);
    }

    #[test]
    fn errors() {
        let input = png(DynamicImage::ImageRgb8(RgbImage::new(4, 4)));
        assert!(matches!(
            redact_image(b"not an image", &[op(2)], &detectors(&[])),
            Err(RedactError::Datatype { .. })
        ));
        assert!(matches!(
            redact_image(&input, &[op(2)], &BTreeMap::new()),
            Err(RedactError::Configuration(_))
        ));
        assert!(matches!(
            redact_image(&input, &[RedactionOp::new(Action::MaskField, "a")], &detectors(&[])),
            Err(RedactError::Validation(_))
        ));
    }
}

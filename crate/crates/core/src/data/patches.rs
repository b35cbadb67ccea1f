//! Aligned LQ/HQ patch sampling with dihedral augmentation.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

use super::degrade::{degrade, Degradation, DegradationSpec};
use super::image::ImageBuffer;

/// Crops `hq` to a multiple of `scale` in both extents.
pub fn modcrop(hq: &ImageBuffer, scale: usize) -> Result<ImageBuffer> {
    let (h, w) = (hq.height() / scale * scale, hq.width() / scale * scale);
    if h == 0 || w == 0 {
        return Err(Error::invalid(format!(
            "{}x{} image is smaller than the scale {scale}",
            hq.height(),
            hq.width()
        )));
    }
    if (h, w) == (hq.height(), hq.width()) {
        Ok(hq.clone())
    } else {
        hq.crop(0, 0, h, w)
    }
}

/// Crops the same region from a pre-degraded pair, `lq` being `scale`
/// times smaller, then applies one random dihedral transform to both.
pub fn crop_pair(
    lq: &ImageBuffer,
    hq: &ImageBuffer,
    scale: usize,
    patch: usize,
    rng: &mut SeededRng,
) -> Result<(ImageBuffer, ImageBuffer)> {
    if patch == 0 || lq.height() < patch || lq.width() < patch {
        return Err(Error::invalid(format!(
            "LQ image {}x{} is smaller than the patch {patch}",
            lq.height(),
            lq.width()
        )));
    }
    if hq.height() < lq.height() * scale || hq.width() < lq.width() * scale {
        return Err(Error::invalid("HQ image does not cover the LQ image"));
    }
    let top = rng.below(lq.height() - patch + 1);
    let left = rng.below(lq.width() - patch + 1);
    let mode = rng.below(8) as u8;
    let lq_patch = lq.crop(top, left, patch, patch)?.dihedral(mode);
    let hq_patch = hq
        .crop(top * scale, left * scale, patch * scale, patch * scale)?
        .dihedral(mode);
    Ok((lq_patch, hq_patch))
}

/// Samples an `(LQ, HQ)` pair with LQ side `patch` and HQ side
/// `patch * scale`. Bicubic LQ is computed from the whole image before
/// cropping; noise and quantization are applied to the HQ crop.
pub fn sample_patch_pair(
    hq: &ImageBuffer,
    spec: &DegradationSpec,
    patch: usize,
    seed: u64,
) -> Result<(ImageBuffer, ImageBuffer)> {
    spec.validate()?;
    let r = spec.scale();
    if patch == 0 || hq.height() < patch * r || hq.width() < patch * r {
        let side = patch * r;
        return Err(Error::invalid(format!(
            "{}x{} image is too small for a {side}x{side} patch",
            hq.height(),
            hq.width()
        )));
    }
    let mut rng = SeededRng::new(seed);
    match spec.kind {
        Degradation::Bicubic { .. } => {
            let hq = modcrop(hq, r)?;
            let lq = degrade(&hq, spec)?;
            crop_pair(&lq, &hq, r, patch, &mut rng)
        }
        _ => {
            let (_, hq_patch) = crop_pair(hq, hq, 1, patch, &mut rng)?;
            let mut local = *spec;
            local.seed = SeededRng::derived(seed, &[1]).next_u64();
            Ok((degrade(&hq_patch, &local)?, hq_patch))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::resize::bicubic_resize;

    fn texture(h: usize, w: usize, c: usize) -> ImageBuffer {
        let data = (0..h * w * c)
            .map(|i| {
                let p = i / c;
                let (y, x) = ((p / w) as f64, (p % w) as f64);
                (128.0 + 80.0 * (x * 0.31 + (i % c) as f64).sin() * (y * 0.17).cos()) as u8
            })
            .collect();
        ImageBuffer::from_u8(h, w, c, data).unwrap()
    }

    #[test]
    fn unit_scale_shares_coordinates() {
        let hq = texture(20, 24, 3);
        let spec = DegradationSpec::noise(0.0, 9);
        let (lq, hqp) = sample_patch_pair(&hq, &spec, 8, 4).unwrap();
        assert_eq!(lq, hqp);
        assert_eq!((lq.height(), lq.width()), (8, 8));
    }

    #[test]
    fn reproducible() {
        let hq = texture(32, 32, 1);
        for spec in [
            DegradationSpec::bicubic(2),
            DegradationSpec::noise(25.0, 3),
            DegradationSpec::dct(20),
        ] {
            let a = sample_patch_pair(&hq, &spec, 8, 42).unwrap();
            assert_eq!(a, sample_patch_pair(&hq, &spec, 8, 42).unwrap());
        }
    }

    #[test]
    fn bicubic_patch_matches_degraded_region() {
        let hq = texture(48, 48, 1);
        let lq = bicubic_resize(&hq, 24, 24).unwrap();
        let mut rng = SeededRng::new(1);
        let mut probe = SeededRng::new(1);
        for _ in 0..10 {
            let (lp, hp) = crop_pair(&lq, &hq, 2, 8, &mut rng).unwrap();
            let top = probe.below(17);
            let left = probe.below(17);
            let mode = probe.below(8) as u8;
            assert_eq!(lp, lq.crop(top, left, 8, 8).unwrap().dihedral(mode));
            assert_eq!(hp, hq.crop(2 * top, 2 * left, 16, 16).unwrap().dihedral(mode));
        }
    }

    #[test]
    fn interior_patch_commutes_with_degradation() {
        let hq = texture(64, 64, 1);
        let full = bicubic_resize(&hq, 32, 32).unwrap();
        // degrade a region with a margin, then compare the interior
        let region = hq.crop(16, 16, 32, 32).unwrap();
        let local = bicubic_resize(&region, 16, 16).unwrap();
        let a = full.crop(12, 12, 8, 8).unwrap();
        let b = local.crop(4, 4, 8, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_small_rejected() {
        let hq = texture(10, 10, 1);
        assert!(sample_patch_pair(&hq, &DegradationSpec::bicubic(2), 8, 0).is_err());
        assert!(sample_patch_pair(&hq, &DegradationSpec::dct(10), 11, 0).is_err());
    }
}

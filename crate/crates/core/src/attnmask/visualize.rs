//! Image renderings of score maps and masks.

use crate::attnmask::ScoreMap;
use crate::dataio::Image;

/// Grayscale heatmap of `map` at `height x width`, scaled so the largest
/// score is white. Nearest-cell lookup keeps patch borders visible.
pub fn heatmap(map: &ScoreMap, height: usize, width: usize) -> Image {
    let max = map.scores.iter().copied().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let mut out = Image::filled(height, width, [0.0; 3]);
    for y in 0..height {
        let r = y * map.rows / height;
        for x in 0..width {
            let c = x * map.cols / width;
            let v = map.at(r, c) * scale;
            for ch in 0..Image::CHANNELS {
                out.set(ch, y, x, v);
            }
        }
    }
    out
}

/// Copy of `img` with every patch outside `kept` painted mid-gray.
pub fn masked_composite(img: &Image, kept: &[usize], patch: usize) -> Image {
    let cols = img.width() / patch;
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let idx = (y / patch) * cols + x / patch;
            if kept.binary_search(&idx).is_err() {
                for ch in 0..Image::CHANNELS {
                    out.set(ch, y, x, 0.5);
                }
            }
        }
    }
    out
}

/// Panels placed left to right with a 1-pixel black separator.
pub fn side_by_side(panels: &[Image]) -> Image {
    let height = panels.iter().map(Image::height).max().unwrap_or(1);
    let width = panels.iter().map(Image::width).sum::<usize>() + panels.len().saturating_sub(1);
    let mut out = Image::filled(height, width.max(1), [0.0; 3]);
    let mut x0 = 0;
    for p in panels {
        for ch in 0..Image::CHANNELS {
            for y in 0..p.height() {
                for x in 0..p.width() {
                    out.set(ch, y, x0 + x, p.get(ch, y, x));
                }
            }
        }
        x0 += p.width() + 1;
    }
    out
}

/// Original, heatmap and masked composite in one image.
pub fn triptych(img: &Image, map: &ScoreMap, kept: &[usize], patch: usize) -> Image {
    let heat = heatmap(map, img.height(), img.width());
    let masked = masked_composite(img, kept, patch);
    side_by_side(&[img.clone(), heat, masked])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CropRect;

    #[test]
    fn composite_grays_dropped_patches() {
        let img = Image::filled(4, 4, [1.0, 0.0, 0.0]);
        let out = masked_composite(&img, &[0, 3], 2);
        assert_eq!(out.get(0, 0, 0), 1.0);
        assert_eq!(out.get(0, 0, 3), 0.5);
        assert_eq!(out.get(1, 3, 3), 0.0);
    }

    #[test]
    fn triptych_geometry() {
        let img = Image::filled(4, 4, [0.2; 3]);
        let map = ScoreMap::new(2, 2, vec![0.1, 0.2, 0.3, 0.4], CropRect::FULL).unwrap();
        let t = triptych(&img, &map, &[3], 2);
        assert_eq!((t.height(), t.width()), (4, 14));
        assert_eq!(t.get(0, 3, 8), 1.0);
    }
}

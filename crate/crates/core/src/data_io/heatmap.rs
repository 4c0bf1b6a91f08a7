//! Anomaly-map rendering: colormapped heatmap, 50% overlay, binarized
//! regions. Visualization only; metrics always use the raw scores.

use crate::msssim::AnomalyMap;
use crate::tensor::Scalar;

/// 8-bit interleaved RGB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

pub struct HeatmapPanels {
    pub heatmap: RawImage,
    pub overlay: RawImage,
    /// White where the score exceeds mean + 3 std of the map.
    pub binary: RawImage,
}

/// Blue -> cyan -> yellow -> red, piecewise linear.
fn colormap(t: f32) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let stops: [(f32, [f32; 3]); 4] = [
        (0.0, [0.0, 0.0, 1.0]),
        (1.0 / 3.0, [0.0, 1.0, 1.0]),
        (2.0 / 3.0, [1.0, 1.0, 0.0]),
        (1.0, [1.0, 0.0, 0.0]),
    ];
    for w in stops.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if t <= t1 {
            let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
            return [
                ((c0[0] + f * (c1[0] - c0[0])) * 255.0).round() as u8,
                ((c0[1] + f * (c1[1] - c0[1])) * 255.0).round() as u8,
                ((c0[2] + f * (c1[2] - c0[2])) * 255.0).round() as u8,
            ];
        }
    }
    [255, 0, 0]
}

/// Renders the three panels for one anomaly map over its source image.
/// The map is min-max normalized per image (degenerate maps render all-low)
/// and the overlay alpha-blends the heatmap at 0.5.
pub fn render_heatmap<T: Scalar>(map: &AnomalyMap<T>, underlay: &RawImage) -> HeatmapPanels {
    let s = map.map.shape();
    let (h, w) = (s.h, s.w);
    debug_assert_eq!(underlay.width, w);
    debug_assert_eq!(underlay.height, h);

    let values: Vec<f64> = map.map.data().iter().map(|v| v.to_f64()).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let normalized: Vec<f32> = if span < 1e-12 {
        vec![0.0; values.len()]
    } else {
        values.iter().map(|&v| ((v - lo) / span) as f32).collect()
    };

    let mut heat = Vec::with_capacity(w * h * 3);
    for &t in &normalized {
        heat.extend_from_slice(&colormap(t));
    }
    let heatmap = RawImage {
        width: w,
        height: h,
        data: heat,
    };

    let overlay_data: Vec<u8> = underlay
        .data
        .iter()
        .zip(&heatmap.data)
        .map(|(&u, &hm)| (((u as u16) + (hm as u16)) / 2) as u8)
        .collect();
    let overlay = RawImage {
        width: w,
        height: h,
        data: overlay_data,
    };

    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let thr = mean + 3.0 * var.sqrt();
    let mut binary = Vec::with_capacity(w * h * 3);
    for &v in &values {
        let b = if v > thr { 255 } else { 0 };
        binary.extend_from_slice(&[b, b, b]);
    }
    HeatmapPanels {
        heatmap,
        overlay,
        binary: RawImage {
            width: w,
            height: h,
            data: binary,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msssim::AnomalyMap;
    use crate::tensor::{Shape, Tensor};

    fn map_from(vals: Vec<f32>, side: usize) -> AnomalyMap<f32> {
        let map = Tensor::from_vec(Shape::new(1, 1, side, side), vals).unwrap();
        let image_score = map.max_value().unwrap();
        AnomalyMap { map, image_score }
    }

    fn gray_underlay(side: usize, v: u8) -> RawImage {
        RawImage {
            width: side,
            height: side,
            data: vec![v; side * side * 3],
        }
    }

    #[test]
    fn zero_map_renders_all_low() {
        let panels = render_heatmap(&map_from(vec![0.0; 16], 4), &gray_underlay(4, 100));
        let lowest = colormap(0.0);
        for px in panels.heatmap.data.chunks(3) {
            assert_eq!(px, lowest);
        }
    }

    #[test]
    fn hot_pixel_gets_the_top_color() {
        let mut vals = vec![0.1f32; 16];
        vals[5] = 0.9;
        let panels = render_heatmap(&map_from(vals, 4), &gray_underlay(4, 0));
        assert_eq!(&panels.heatmap.data[5 * 3..5 * 3 + 3], &colormap(1.0));
        // and it is the one the binary panel keeps
        assert_eq!(panels.binary.data[5 * 3], 255);
        assert_eq!(panels.binary.data.iter().filter(|&&b| b == 255).count(), 3);
    }

    #[test]
    fn overlay_is_half_blend() {
        let panels = render_heatmap(&map_from(vec![0.0; 16], 4), &gray_underlay(4, 200));
        let low = colormap(0.0);
        for px in panels.overlay.data.chunks(3) {
            for c in 0..3 {
                assert_eq!(px[c], ((200u16 + low[c] as u16) / 2) as u8);
            }
        }
    }
}

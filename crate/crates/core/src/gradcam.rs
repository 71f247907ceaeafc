//! Gradient-weighted class activation maps over the spatial CNN.
//!
//! For a target class `c`, the gradient of the pre-softmax score with respect
//! to each final-conv activation map `A^k` is spatially averaged into a
//! channel weight `alpha_k`; the map is `ReLU(sum_k alpha_k A^k)`, bilinearly
//! upsampled to image resolution and normalized by its maximum (an all-zero
//! map stays zero). Pre-softmax scores are used throughout; post-softmax
//! gradients saturate.
//!
//! The overlay colormap is a fixed five-stop lookup table from blue to red
//! (values in [0, 1], linear interpolation between stops):
//!
//! | value | r    | g    | b    |
//! |-------|------|------|------|
//! | 0.00  | 0.00 | 0.00 | 0.50 |
//! | 0.25  | 0.00 | 0.50 | 1.00 |
//! | 0.50  | 1.00 | 1.00 | 0.00 |
//! | 0.75  | 1.00 | 0.50 | 0.00 |
//! | 1.00  | 1.00 | 0.00 | 0.00 |

use crate::cnn::{cnn_backward, cnn_forward, ConvNetModel};
use crate::error::{Error, Result};
use crate::image::{bilinear_resize_plane, image_dims, to_rgb};
use crate::tensor::Tensor;

/// Class-specific localization map: `values` in [0, 1] at image resolution,
/// plus the raw conv-resolution map before upsampling and normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Normalized map, `H x W`, min >= 0, max == 1 unless identically zero.
    pub values: Tensor,
    /// Pre-normalization map at final-conv resolution, `h x w`.
    pub raw: Tensor,
    pub source_class: usize,
    /// Blended visualization, filled by [`render_overlay`] callers.
    pub overlay: Option<Tensor>,
}

impl Heatmap {
    /// CSV dump of the raw conv-resolution map.
    pub fn raw_csv(&self) -> String {
        let (h, w) = (self.raw.rows(), self.raw.cols());
        let mut s = String::new();
        for y in 0..h {
            let row: Vec<String> = (0..w).map(|x| format!("{}", self.raw.get2(y, x))).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// Compute the class activation map of `target_class` for one image.
pub fn grad_cam(model: &ConvNetModel, image: &Tensor, target_class: usize) -> Result<Heatmap> {
    if target_class >= model.num_classes {
        return Err(Error::ClassOutOfRange {
            class: target_class,
            classes: model.num_classes,
        });
    }
    let trace = cnn_forward(model, image)?;
    // Pre-softmax score gradient: one-hot at the target class.
    let mut dscore = vec![0.0; model.num_classes];
    dscore[target_class] = 1.0;
    let (_, d_maps) = cnn_backward(model, image, &trace, &dscore)?;
    let maps = trace.final_conv_maps();
    let (k_ch, mh, mw) = (maps.channels, maps.h, maps.w);
    let plane_len = (mh * mw) as f64;
    // alpha_k: spatial mean of the score gradient over channel k.
    let mut raw = vec![0.0; mh * mw];
    for k in 0..k_ch {
        let alpha = d_maps.plane(k).iter().sum::<f64>() / plane_len;
        let a_plane = maps.plane(k);
        for (r, &a) in raw.iter_mut().zip(a_plane) {
            *r += alpha * a;
        }
    }
    for r in raw.iter_mut() {
        *r = r.max(0.0);
    }
    let (img_h, img_w, _) = image_dims(image)?;
    let upsampled = bilinear_resize_plane(&raw, mh, mw, img_h, img_w);
    let max = upsampled.iter().fold(0.0f64, |m, &v| m.max(v));
    let values = if max > 0.0 {
        upsampled.iter().map(|&v| v / max).collect()
    } else {
        upsampled.clone()
    };
    Ok(Heatmap {
        values: Tensor::new(vec![img_h, img_w], values)?,
        raw: Tensor::new(vec![mh, mw], raw)?,
        source_class: target_class,
        overlay: None,
    })
}

/// Five-stop blue-to-red lookup, linear between stops; input clamped to
/// [0, 1].
pub fn colormap(v: f64) -> [f64; 3] {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.00, [0.0, 0.0, 0.5]),
        (0.25, [0.0, 0.5, 1.0]),
        (0.50, [1.0, 1.0, 0.0]),
        (0.75, [1.0, 0.5, 0.0]),
        (1.00, [1.0, 0.0, 0.0]),
    ];
    let v = v.clamp(0.0, 1.0);
    let mut lo = STOPS[0];
    for hi in STOPS.iter().skip(1) {
        if v <= hi.0 {
            let t = (v - lo.0) / (hi.0 - lo.0);
            return [
                lo.1[0] + t * (hi.1[0] - lo.1[0]),
                lo.1[1] + t * (hi.1[1] - lo.1[1]),
                lo.1[2] + t * (hi.1[2] - lo.1[2]),
            ];
        }
        lo = *hi;
    }
    lo.1
}

/// Alpha-blend the colormapped heatmap onto the input:
/// `out = (1 - alpha) * base_rgb + alpha * colormap(value)`. With `alpha = 0`
/// the original image comes back bitwise.
pub fn render_overlay(heatmap: &Heatmap, image: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "overlay alpha {alpha} outside [0, 1]"
        )));
    }
    let (h, w, _) = image_dims(image)?;
    if heatmap.values.rows() != h || heatmap.values.cols() != w {
        return Err(Error::Dimension {
            what: "overlay heatmap".into(),
            expected: format!("{h}x{w}"),
            got: format!("{}x{}", heatmap.values.rows(), heatmap.values.cols()),
        });
    }
    let base = to_rgb(image)?;
    let mut out = vec![0.0; h * w * 3];
    for i in 0..h * w {
        let color = colormap(heatmap.values.data()[i]);
        for c in 0..3 {
            out[i * 3 + c] = (1.0 - alpha) * base.data()[i * 3 + c] + alpha * color[c];
        }
    }
    Tensor::new(vec![h, w, 3], out)
}

/// Standalone SVG raster: one 1x1 rect per pixel (no binary image formats).
pub fn image_to_svg(image: &Tensor) -> Result<String> {
    let (h, w, _) = image_dims(image)?;
    let rgb = to_rgb(image)?;
    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         viewBox=\"0 0 {w} {h}\" width=\"{}\" height=\"{}\" \
         shape-rendering=\"crispEdges\">\n",
        w * 8,
        h * 8
    ));
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * 3;
            let px = |c: usize| (rgb.data()[i + c].clamp(0.0, 1.0) * 255.0).round() as u8;
            svg.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"1\" height=\"1\" fill=\"#{:02x}{:02x}{:02x}\"/>\n",
                px(0),
                px(1),
                px(2)
            ));
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{BlockSpec, CnnConfig};
    use crate::image::to_pnm_bytes;
    use crate::rng::Rng;

    fn one_block_model(rng: &mut Rng) -> ConvNetModel {
        let cfg = CnnConfig {
            input_height: 2,
            input_width: 2,
            input_channels: 1,
            blocks: vec![BlockSpec {
                channels: 1,
                convs: 1,
            }],
            feature_dim: 1,
            num_classes: 2,
        };
        ConvNetModel::init(&cfg, rng).unwrap()
    }

    // Identity conv (center tap), unit feature and head weights: the class-0
    // score is the max pixel value, so the score gradient reaches exactly one
    // map cell and alpha = 1/4. The raw map is then img/4 and the normalized
    // map is img / max(img). All derived by hand for this construction.
    fn toy_identity_model(rng: &mut Rng) -> ConvNetModel {
        let mut model = one_block_model(rng);
        let mut k = Tensor::zeros(vec![1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        model.blocks[0].convs[0].kernels = k;
        model.blocks[0].convs[0].bias = Tensor::zeros(vec![1]);
        model.fc1_w = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        model.fc1_b = Tensor::zeros(vec![1]);
        model.head_w = Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap();
        model.head_b = Tensor::zeros(vec![2]);
        model
    }

    #[test]
    fn toy_net_matches_closed_form() {
        let mut rng = Rng::new(100);
        let model = toy_identity_model(&mut rng);
        let image = Tensor::new(vec![2, 2, 1], vec![0.2, 0.8, 0.4, 0.6]).unwrap();
        let map = grad_cam(&model, &image, 0).unwrap();
        // Raw map is exactly img / 4 (alpha = 1/4 is a power of two).
        for (r, v) in map.raw.data().iter().zip(image.data()) {
            assert_eq!(r.to_bits(), (v / 4.0).to_bits());
        }
        // Normalized map is img / max(img).
        for (m, v) in map.values.data().iter().zip(image.data()) {
            assert!((m - v / 0.8).abs() < 1e-15);
        }
        assert_eq!(map.source_class, 0);
    }

    #[test]
    fn constant_score_gives_exactly_zero_map() {
        let mut rng = Rng::new(101);
        // Class 1's head weight is zero: its score ignores all activations.
        let model = toy_identity_model(&mut rng);
        let image = Tensor::new(vec![2, 2, 1], vec![0.3, 0.9, 0.1, 0.5]).unwrap();
        let map = grad_cam(&model, &image, 1).unwrap();
        assert!(map.raw.data().iter().all(|&v| v == 0.0));
        assert!(map.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maps_are_nonnegative_and_peak_at_one() {
        let mut rng = Rng::new(102);
        let cfg = CnnConfig {
            input_height: 16,
            input_width: 16,
            input_channels: 1,
            blocks: vec![
                BlockSpec {
                    channels: 4,
                    convs: 1,
                },
                BlockSpec {
                    channels: 6,
                    convs: 1,
                },
            ],
            feature_dim: 8,
            num_classes: 3,
        };
        for _ in 0..5 {
            let model = ConvNetModel::init(&cfg, &mut rng).unwrap();
            let image =
                Tensor::new(vec![16, 16, 1], (0..256).map(|_| rng.next_f64()).collect()).unwrap();
            let map = grad_cam(&model, &image, rng.below(3)).unwrap();
            let max = map.values.data().iter().fold(0.0f64, |m, &v| m.max(v));
            assert!(map.values.data().iter().all(|&v| v >= 0.0));
            assert!(max == 1.0 || map.values.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn normalized_map_invariant_to_positive_head_rescale() {
        let mut rng = Rng::new(103);
        let cfg = CnnConfig {
            input_height: 8,
            input_width: 8,
            input_channels: 1,
            blocks: vec![BlockSpec {
                channels: 3,
                convs: 1,
            }],
            feature_dim: 4,
            num_classes: 2,
        };
        let model = ConvNetModel::init(&cfg, &mut rng).unwrap();
        let image = Tensor::new(vec![8, 8, 1], (0..64).map(|_| rng.next_f64()).collect()).unwrap();
        let base = grad_cam(&model, &image, 0).unwrap();
        // Power-of-two rescale: bitwise identical normalized map.
        let mut scaled2 = model.clone();
        for v in scaled2.head_w.row_mut(0) {
            *v *= 2.0;
        }
        let map2 = grad_cam(&scaled2, &image, 0).unwrap();
        assert_eq!(map2.values, base.values);
        // Arbitrary positive rescale: identical within rounding.
        let mut scaled3 = model.clone();
        for v in scaled3.head_w.row_mut(0) {
            *v *= 3.0;
        }
        let map3 = grad_cam(&scaled3, &image, 0).unwrap();
        for (a, b) in map3.values.data().iter().zip(base.values.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn upsampled_argmax_stays_in_the_dominant_cell_footprint() {
        let mut rng = Rng::new(104);
        for _ in 0..50 {
            let (mh, mw) = (4usize, 4usize);
            let mut raw: Vec<f64> = (0..mh * mw).map(|_| rng.next_f64()).collect();
            // Boost a unique dominant cell.
            let peak = rng.below(mh * mw);
            raw[peak] += 2.0;
            let up = bilinear_resize_plane(&raw, mh, mw, 32, 32);
            let argmax_up = up
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let (oy, ox) = (argmax_up / 32, argmax_up % 32);
            // Source coordinates of the output argmax.
            let sy = oy as f64 * (mh - 1) as f64 / 31.0;
            let sx = ox as f64 * (mw - 1) as f64 / 31.0;
            let (py, px) = (peak / mw, peak % mw);
            // The interpolation stencil of the argmax pixel must include the
            // dominant raw cell.
            assert!(
                (sy - py as f64).abs() < 1.0 + 1e-9 && (sx - px as f64).abs() < 1.0 + 1e-9,
                "argmax ({oy},{ox}) maps to ({sy:.2},{sx:.2}), peak at ({py},{px})"
            );
        }
    }

    #[test]
    fn class_out_of_range_is_rejected() {
        let mut rng = Rng::new(105);
        let model = one_block_model(&mut rng);
        let image = Tensor::zeros(vec![2, 2, 1]);
        assert!(matches!(
            grad_cam(&model, &image, 5),
            Err(Error::ClassOutOfRange { class: 5, .. })
        ));
    }

    #[test]
    fn overlay_alpha_zero_returns_base_bitwise() {
        let mut rng = Rng::new(106);
        let model = toy_identity_model(&mut rng);
        let image = Tensor::new(vec![2, 2, 1], vec![0.2, 0.8, 0.4, 0.6]).unwrap();
        let map = grad_cam(&model, &image, 0).unwrap();
        let overlay = render_overlay(&map, &image, 0.0).unwrap();
        assert_eq!(overlay, to_rgb(&image).unwrap());
    }

    #[test]
    fn overlay_alpha_one_on_zero_map_is_constant_colormap_zero() {
        let mut rng = Rng::new(107);
        let model = toy_identity_model(&mut rng);
        let image = Tensor::new(vec![2, 2, 1], vec![0.3, 0.9, 0.1, 0.5]).unwrap();
        let map = grad_cam(&model, &image, 1).unwrap();
        let overlay = render_overlay(&map, &image, 1.0).unwrap();
        let zero_color = colormap(0.0);
        for px in overlay.data().chunks(3) {
            assert_eq!(px, zero_color);
        }
    }

    #[test]
    fn overlay_rejects_bad_alpha() {
        let mut rng = Rng::new(108);
        let model = toy_identity_model(&mut rng);
        let image = Tensor::zeros(vec![2, 2, 1]);
        let map = grad_cam(&model, &image, 0).unwrap();
        assert!(render_overlay(&map, &image, 1.5).is_err());
        assert!(render_overlay(&map, &image, -0.1).is_err());
    }

    #[test]
    fn colormap_endpoints_and_monotone_red() {
        assert_eq!(colormap(0.0), [0.0, 0.0, 0.5]);
        assert_eq!(colormap(1.0), [1.0, 0.0, 0.0]);
        assert_eq!(colormap(0.5), [1.0, 1.0, 0.0]);
        // Red channel never decreases with intensity.
        let mut last = 0.0;
        for i in 0..=100 {
            let r = colormap(i as f64 / 100.0)[0];
            assert!(r + 1e-12 >= last);
            last = r;
        }
    }

    // Golden overlay for fixed toy inputs (2x2 ramp image, identity toy net,
    // alpha 0.5), generated once by this code and reviewed pixel by pixel.
    #[test]
    fn overlay_matches_golden_bytes() {
        let mut rng = Rng::new(109);
        let model = toy_identity_model(&mut rng);
        let image = Tensor::new(vec![2, 2, 1], vec![0.2, 0.8, 0.4, 0.6]).unwrap();
        let map = grad_cam(&model, &image, 0).unwrap();
        let overlay = render_overlay(&map, &image, 0.5).unwrap();
        let bytes = to_pnm_bytes(&overlay).unwrap();
        let golden = include_bytes!("../tests/data/golden_overlay.ppm");
        assert_eq!(bytes, golden);
    }

    #[test]
    fn svg_raster_has_one_rect_per_pixel() {
        let image = Tensor::new(vec![2, 3, 1], vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]).unwrap();
        let svg = image_to_svg(&image).unwrap();
        assert_eq!(svg.matches("<rect").count(), 6);
        assert!(svg.contains("fill=\"#ffffff\""));
        let again = image_to_svg(&image).unwrap();
        assert_eq!(svg, again);
    }

    #[test]
    fn raw_csv_shape() {
        let map = Heatmap {
            values: Tensor::zeros(vec![2, 2]),
            raw: Tensor::from_rows(&[vec![0.0, 0.5], vec![1.0, 0.25]]).unwrap(),
            source_class: 0,
            overlay: None,
        };
        assert_eq!(map.raw_csv(), "0,0.5\n1,0.25\n");
    }
}

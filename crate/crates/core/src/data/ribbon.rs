//! Color-coded ribbon plots: two horizontal bars (ground truth on top,
//! prediction below) where each contiguous run of equal labels becomes a
//! single rectangle. Emitted as standalone SVG 1.1 with frame-unit
//! coordinates, so rectangle boundaries equal run-length boundaries exactly.

use crate::error::{Error, Result};

/// Fixed ten-color palette (hex), one color per gesture class; labels beyond
/// ten wrap around.
pub const RIBBON_PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Run-length encoding: (start, length, label) per maximal run.
pub fn rle(labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0usize;
    for i in 1..=labels.len() {
        if i == labels.len() || labels[i] != labels[start] {
            runs.push((start, i - start, labels[start]));
            start = i;
        }
    }
    runs
}

fn bar(labels: &[usize], y: f64, palette: &[&str], out: &mut String) {
    for (start, len, label) in rle(labels) {
        let color = palette[label % palette.len()];
        out.push_str(&format!(
            "  <rect x=\"{start}\" y=\"{y}\" width=\"{len}\" height=\"1\" fill=\"{color}\"/>\n"
        ));
    }
}

/// Build the ribbon SVG for a ground-truth/prediction pair.
pub fn emit_ribbon(y_true: &[usize], y_pred: &[usize], palette: &[&str]) -> Result<String> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension {
            what: "ribbon label sequences".into(),
            expected: format!("{} predictions", y_true.len()),
            got: format!("{}", y_pred.len()),
        });
    }
    if y_true.is_empty() {
        return Err(Error::Dimension {
            what: "ribbon label sequences".into(),
            expected: "at least one frame".into(),
            got: "0".into(),
        });
    }
    let t = y_true.len();
    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         viewBox=\"0 0 {t} 2.4\" width=\"{}\" height=\"96\" \
         preserveAspectRatio=\"none\">\n",
        t * 4
    ));
    svg.push_str("  <!-- top bar: ground truth -->\n");
    bar(y_true, 0.0, palette, &mut svg);
    svg.push_str("  <!-- bottom bar: prediction -->\n");
    bar(y_pred, 1.4, palette, &mut svg);
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn rect_count(svg: &str) -> usize {
        svg.matches("<rect").count()
    }

    // Parse back (x, width) of every rect at the given bar y.
    fn bar_rects(svg: &str, y: &str) -> Vec<(usize, usize)> {
        svg.lines()
            .filter(|l| l.contains("<rect") && l.contains(&format!("y=\"{y}\"")))
            .map(|l| {
                let grab = |attr: &str| {
                    let tail = l.split(&format!("{attr}=\"")).nth(1).unwrap();
                    tail.split('"').next().unwrap().parse::<usize>().unwrap()
                };
                (grab("x"), grab("width"))
            })
            .collect()
    }

    #[test]
    fn identical_sequences_give_identical_bars() {
        let labels = vec![0, 0, 1, 2, 2, 2];
        let svg = emit_ribbon(&labels, &labels, &RIBBON_PALETTE).unwrap();
        assert_eq!(bar_rects(&svg, "0"), bar_rects(&svg, "1.4"));
    }

    #[test]
    fn run_lengths_become_rect_widths() {
        let svg = emit_ribbon(&[0, 0, 1], &[0, 0, 1], &RIBBON_PALETTE).unwrap();
        // Top bar has exactly two rectangles with widths 2:1.
        assert_eq!(bar_rects(&svg, "0"), vec![(0, 2), (2, 1)]);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(emit_ribbon(&[0, 1], &[0], &RIBBON_PALETTE).is_err());
        assert!(emit_ribbon(&[], &[], &RIBBON_PALETTE).is_err());
    }

    #[test]
    fn rle_hand_cases() {
        assert_eq!(rle(&[]), vec![]);
        assert_eq!(rle(&[5]), vec![(0, 1, 5)]);
        assert_eq!(rle(&[1, 1, 1]), vec![(0, 3, 1)]);
        assert_eq!(rle(&[0, 0, 1]), vec![(0, 2, 0), (2, 1, 1)]);
    }

    #[test]
    fn emitted_svg_is_deterministic() {
        let mut rng = Rng::new(1);
        let labels: Vec<usize> = (0..50).map(|_| rng.below(10)).collect();
        let preds: Vec<usize> = (0..50).map(|_| rng.below(10)).collect();
        let a = emit_ribbon(&labels, &preds, &RIBBON_PALETTE).unwrap();
        let b = emit_ribbon(&labels, &preds, &RIBBON_PALETTE).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        // Brute-force RLE oracle: boundaries and counts must match exactly.
        #[test]
        fn rect_boundaries_equal_rle_boundaries(
            labels in proptest::collection::vec(0usize..10, 1..60)
        ) {
            let mut expected = Vec::new();
            let mut i = 0;
            while i < labels.len() {
                let mut j = i;
                while j < labels.len() && labels[j] == labels[i] {
                    j += 1;
                }
                expected.push((i, j - i));
                i = j;
            }
            let runs = rle(&labels);
            prop_assert_eq!(runs.len(), expected.len());
            for (run, exp) in runs.iter().zip(&expected) {
                prop_assert_eq!((run.0, run.1), *exp);
            }
            let svg = emit_ribbon(&labels, &labels, &RIBBON_PALETTE).unwrap();
            prop_assert_eq!(rect_count(&svg), 2 * expected.len());
            let parsed = bar_rects(&svg, "0");
            prop_assert_eq!(parsed, expected);
        }
    }
}

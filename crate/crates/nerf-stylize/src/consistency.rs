//! Quantitative multi-view consistency evaluation: masked warped perceptual
//! error between view pairs at configured index gaps, reported as a
//! per-gap table.
//!
//! The perceptual distance uses the frozen encoder backbone: per layer, the
//! masked mean squared feature difference is divided by the masked mean
//! feature energy of the pair, and the relative errors are averaged over
//! layers. The spatial mean runs over the valid mask only, eroded to each
//! layer's resolution. Both frames are zeroed outside the mask before
//! encoding, so the result cannot depend on the sentinel values stored
//! there.

use ndarray::{Array2, Array3};

use crate::camera::{compute_warp_field, CameraPose, WarpField};
use crate::error::{Error, Result};
use crate::stylizer::Encoder;

/// An ordered sequence of stylized frames with the geometry needed for
/// warping.
#[derive(Clone, Debug)]
pub struct EvalSequence {
    pub frames: Vec<Array3<f32>>,
    pub depths: Vec<Array2<f32>>,
    pub cameras: Vec<CameraPose>,
    pub style_id: String,
}

impl EvalSequence {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.depths.len() || self.frames.len() != self.cameras.len() {
            return Err(Error::ShapeMismatch(format!(
                "sequence lengths differ: {} frames, {} depths, {} cameras",
                self.frames.len(),
                self.depths.len(),
                self.cameras.len()
            )));
        }
        if self.frames.is_empty() {
            return Err(Error::InvalidArgument("empty evaluation sequence".into()));
        }
        let dim = self.frames[0].dim();
        if self.frames.iter().any(|f| f.dim() != dim) {
            return Err(Error::ShapeMismatch(
                "frames in a sequence must share one resolution".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// One evaluated view pair.
#[derive(Clone, Debug)]
pub struct PairRecord {
    pub target: usize,
    pub source: usize,
    pub error: f64,
    pub valid_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct GapReport {
    pub gap: usize,
    pub mean_error: f64,
    pub pairs: Vec<PairRecord>,
    /// Pairs dropped because their warp mask was empty.
    pub excluded: usize,
}

/// Per-gap consistency results plus the protocol snapshot.
#[derive(Clone, Debug)]
pub struct ConsistencyReport {
    pub style_id: String,
    pub depth_tolerance: f32,
    pub gaps: Vec<GapReport>,
}

/// Masked perceptual distance between a target frame and a source frame
/// warped into it. Returns `None` when the warp mask is empty (the pair is
/// excluded from means); otherwise `(error, valid_fraction)`.
pub fn warped_perceptual_error(
    encoder: &Encoder<f32>,
    target: &Array3<f32>,
    source: &Array3<f32>,
    field: &WarpField,
) -> Result<Option<(f64, f64)>> {
    if target.dim() != source.dim() {
        return Err(Error::ShapeMismatch(format!(
            "frame shapes differ: {:?} vs {:?}",
            target.dim(),
            source.dim()
        )));
    }
    let valid_fraction = field.valid_fraction();
    if valid_fraction == 0.0 {
        return Ok(None);
    }
    let warped = field.apply(source);
    // force a fixed sentinel (zero) on both sides before encoding
    let mask = &field.mask;
    let apply_mask = |img: &Array3<f32>| -> Array3<f32> {
        let mut out = img.clone();
        let (c, h, w) = out.dim();
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    if !mask[(r, col)] {
                        out[(ch, r, col)] = 0.0;
                    }
                }
            }
        }
        out
    };
    let a = encoder.encode(&apply_mask(target))?;
    let b = encoder.encode(&apply_mask(&warped))?;

    let mut level_mask = mask.mapv(|m| m);
    let mut total = 0.0;
    let mut levels = 0usize;
    for (l, (fa, fb)) in a.layers.iter().zip(&b.layers).enumerate() {
        if l > 0 {
            level_mask = erode_half(&level_mask);
        }
        let (c, h, w) = fa.dim();
        let mut diff = 0.0f64;
        let mut energy = 0.0f64;
        let mut count = 0usize;
        for r in 0..h {
            for col in 0..w {
                if !level_mask[(r, col)] {
                    continue;
                }
                for ch in 0..c {
                    let va = fa[(ch, r, col)] as f64;
                    let vb = fb[(ch, r, col)] as f64;
                    diff += (va - vb).powi(2);
                    energy += 0.5 * (va * va + vb * vb);
                }
                count += 1;
            }
        }
        if count > 0 {
            total += diff / (energy + 1e-10);
            levels += 1;
        }
    }
    if levels == 0 {
        return Ok(None);
    }
    Ok(Some((total / levels as f64, valid_fraction)))
}

/// Mask erosion to half resolution: a low-res cell is valid only if all
/// four covered pixels are valid.
fn erode_half(mask: &Array2<bool>) -> Array2<bool> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h / 2, w / 2), |(r, c)| {
        mask[(2 * r, 2 * c)]
            && mask[(2 * r, 2 * c + 1)]
            && mask[(2 * r + 1, 2 * c)]
            && mask[(2 * r + 1, 2 * c + 1)]
    })
}

/// Evaluates warped perceptual error over all `(i, i+gap)` pairs for each
/// configured gap. `pair_limit == 0` means all available pairs.
pub fn evaluate_sequence(
    encoder: &Encoder<f32>,
    seq: &EvalSequence,
    gaps: &[usize],
    pair_limit: usize,
    depth_tolerance: f32,
) -> Result<ConsistencyReport> {
    seq.validate()?;
    let t = seq.len();
    let mut reports = Vec::with_capacity(gaps.len());
    for &gap in gaps {
        if gap == 0 || gap >= t {
            return Err(Error::InvalidArgument(format!(
                "gap {gap} out of range for a {t}-frame sequence"
            )));
        }
        let mut pairs = Vec::new();
        let mut excluded = 0usize;
        let available = t - gap;
        let take = if pair_limit == 0 {
            available
        } else {
            pair_limit.min(available)
        };
        for i in 0..take {
            let j = i + gap;
            let field = compute_warp_field(
                &seq.cameras[j],
                &seq.cameras[i],
                &seq.depths[i],
                &seq.depths[j],
                depth_tolerance,
            )?;
            match warped_perceptual_error(encoder, &seq.frames[i], &seq.frames[j], &field)? {
                Some((error, valid_fraction)) => pairs.push(PairRecord {
                    target: i,
                    source: j,
                    error,
                    valid_fraction,
                }),
                None => excluded += 1,
            }
        }
        let mean_error = if pairs.is_empty() {
            f64::NAN
        } else {
            pairs.iter().map(|p| p.error).sum::<f64>() / pairs.len() as f64
        };
        reports.push(GapReport {
            gap,
            mean_error,
            pairs,
            excluded,
        });
    }
    Ok(ConsistencyReport {
        style_id: seq.style_id.clone(),
        depth_tolerance,
        gaps: reports,
    })
}

impl ConsistencyReport {
    pub fn mean_for_gap(&self, gap: usize) -> Option<f64> {
        self.gaps.iter().find(|g| g.gap == gap).map(|g| g.mean_error)
    }

    /// Machine-readable CSV: `gap,target,source,error,valid_fraction` rows
    /// plus `gap,mean,,value,` summary rows.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut out =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        writeln!(out, "gap,target,source,error,valid_fraction").map_err(io)?;
        for gap in &self.gaps {
            for p in &gap.pairs {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    gap.gap, p.target, p.source, p.error, p.valid_fraction
                )
                .map_err(io)?;
            }
            writeln!(out, "{},mean,,{},", gap.gap, gap.mean_error).map_err(io)?;
        }
        Ok(())
    }

    /// Human-readable per-gap table.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "consistency report (style {})", self.style_id);
        let _ = writeln!(s, "depth tolerance: {}", self.depth_tolerance);
        let _ = writeln!(s, "{:>5} {:>10} {:>7} {:>9}", "gap", "mean", "pairs", "excluded");
        for gap in &self.gaps {
            let _ = writeln!(
                s,
                "{:>5} {:>10.5} {:>7} {:>9}",
                gap.gap,
                gap.mean_error,
                gap.pairs.len(),
                gap.excluded
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stylizer::default_encoder;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn static_sequence(n: usize) -> EvalSequence {
        let cam = CameraPose::identity(30.0, 16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frame = Array3::from_shape_fn((3, 16, 16), |_| rng.gen_range(0.0..1.0f32));
        EvalSequence {
            frames: vec![frame; n],
            depths: vec![Array2::from_elem((16, 16), 3.0); n],
            cameras: vec![cam; n],
            style_id: "s".into(),
        }
    }

    #[test]
    fn identical_frames_static_camera_is_zero_at_all_gaps() {
        let encoder = default_encoder::<f32>();
        let seq = static_sequence(8);
        let report = evaluate_sequence(&encoder, &seq, &[1, 3], 0, 0.1).unwrap();
        for gap in &report.gaps {
            assert!(gap.mean_error.abs() < 1e-4, "gap {}: {}", gap.gap, gap.mean_error);
            assert_eq!(gap.excluded, 0);
        }
    }

    #[test]
    fn noise_increases_the_error() {
        let encoder = default_encoder::<f32>();
        let mut seq = static_sequence(4);
        let base = evaluate_sequence(&encoder, &seq, &[1], 0, 0.1)
            .unwrap()
            .mean_for_gap(1)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for frame in seq.frames.iter_mut().skip(1) {
            frame.mapv_inplace(|v| (v + rng.gen_range(-0.4..0.4f32)).clamp(0.0, 1.0));
        }
        let noisy = evaluate_sequence(&encoder, &seq, &[1], 0, 0.1)
            .unwrap()
            .mean_for_gap(1)
            .unwrap();
        assert!(noisy > base, "noisy {noisy} <= base {base}");
    }

    #[test]
    fn fully_masked_pair_is_excluded() {
        let encoder = default_encoder::<f32>();
        let mut seq = static_sequence(3);
        // invalid target depths kill every correspondence
        seq.depths[0].fill(-1.0);
        let report = evaluate_sequence(&encoder, &seq, &[2], 0, 0.1).unwrap();
        assert_eq!(report.gaps[0].excluded, 1);
        assert!(report.gaps[0].pairs.is_empty());
        assert!(report.gaps[0].mean_error.is_nan());
    }

    #[test]
    fn metric_ignores_the_sentinel_value() {
        let encoder = default_encoder::<f32>();
        let seq = static_sequence(2);
        let cam = &seq.cameras[0];
        let mut field =
            compute_warp_field(cam, cam, &seq.depths[0], &seq.depths[1], 0.1).unwrap();
        // mask out a block; stored values there must not matter
        for r in 0..6 {
            for c in 0..6 {
                field.mask[(r, c)] = false;
            }
        }
        let (base, _) =
            warped_perceptual_error(&encoder, &seq.frames[0], &seq.frames[1], &field)
                .unwrap()
                .unwrap();
        let mut poisoned = seq.frames[0].clone();
        for r in 0..6 {
            for c in 0..6 {
                for ch in 0..3 {
                    poisoned[(ch, r, c)] = 123.0;
                }
            }
        }
        let (after, _) = warped_perceptual_error(&encoder, &poisoned, &seq.frames[1], &field)
            .unwrap()
            .unwrap();
        assert_eq!(base, after);
    }

    #[test]
    fn report_mean_matches_hand_average_and_gap_bounds() {
        let encoder = default_encoder::<f32>();
        let mut seq = static_sequence(6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for frame in seq.frames.iter_mut() {
            frame.mapv_inplace(|v| (v + rng.gen_range(-0.1..0.1f32)).clamp(0.0, 1.0));
        }
        let report = evaluate_sequence(&encoder, &seq, &[2], 0, 0.1).unwrap();
        let gap = &report.gaps[0];
        let hand: f64 = gap.pairs.iter().map(|p| p.error).sum::<f64>() / gap.pairs.len() as f64;
        assert!((gap.mean_error - hand).abs() < 1e-12);
        // gap must be smaller than the sequence
        assert!(evaluate_sequence(&encoder, &seq, &[6], 0, 0.1).is_err());
    }

    #[test]
    fn pair_limit_caps_the_evaluation() {
        let encoder = default_encoder::<f32>();
        let seq = static_sequence(8);
        let report = evaluate_sequence(&encoder, &seq, &[1], 3, 0.1).unwrap();
        assert_eq!(report.gaps[0].pairs.len(), 3);
    }
}

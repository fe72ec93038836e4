//! Synthetic moving-object videos with exact ground-truth masks.

use serde::{Deserialize, Serialize};
use vino_core::{BinaryMask, Dims, ImageDescriptor, SeedStream, SegmentTarget, Video, VideoLatent};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned square, `size` is the half side.
    Square,
    /// Disc, `size` is the radius.
    Circle,
}

impl Shape {
    fn contains(self, dy: f64, dx: f64, size: f64) -> bool {
        match self {
            Shape::Square => dy.abs() <= size && dx.abs() <= size,
            Shape::Circle => dy * dy + dx * dx <= size * size,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
        }
    }
}

/// Object moving on a straight line, `center(f) = start + f * velocity` as `(y, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: [f64; 3],
    pub size: f64,
    pub start: [f64; 2],
    pub velocity: [f64; 2],
}

impl ObjectSpec {
    pub fn center(&self, f: usize) -> (f64, f64) {
        (
            self.start[0] + f as f64 * self.velocity[0],
            self.start[1] + f as f64 * self.velocity[1],
        )
    }
}

/// Replacement object; follows the source path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub shape: Shape,
    pub color: [f64; 3],
    /// Defaults to the source size.
    #[serde(default)]
    pub size: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Append a fourth channel holding the RGB mean.
    #[serde(default)]
    pub luminance: bool,
    pub background: [f64; 3],
    /// Amplitude of seeded background texture; 0 gives a flat background.
    #[serde(default)]
    pub texture: f64,
    pub source: ObjectSpec,
    pub target: TargetSpec,
    #[serde(default)]
    pub seed: u64,
}

pub const SOURCE_SEGMENT_RADIUS: f64 = 0.1;
pub const TARGET_SEGMENT_RADIUS: f64 = 0.25;

impl ScenarioSpec {
    /// 8 frames of a red square gliding right, to be replaced by a blue circle.
    pub fn canonical() -> Self {
        Self {
            frames: 8,
            height: 32,
            width: 32,
            luminance: false,
            background: [0.15, 0.15, 0.15],
            texture: 0.0,
            source: ObjectSpec {
                shape: Shape::Square,
                color: [0.9, 0.2, 0.2],
                size: 4.0,
                start: [16.0, 10.0],
                velocity: [0.0, 1.0],
            },
            target: TargetSpec {
                shape: Shape::Circle,
                color: [0.2, 0.4, 0.9],
                size: None,
            },
            seed: 0,
        }
    }

    /// The canonical edit at 16 x 4 x 64 x 64.
    pub fn runtime() -> Self {
        let mut s = Self::canonical();
        s.frames = 16;
        s.height = 64;
        s.width = 64;
        s.luminance = true;
        s.source.size = 8.0;
        s.source.start = [32.0, 20.0];
        s
    }

    pub fn channels(&self) -> usize {
        if self.luminance {
            4
        } else {
            3
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.frames, self.channels(), self.height, self.width)
    }

    pub fn target_size(&self) -> f64 {
        self.target.size.unwrap_or(self.source.size)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.frames != 8 && self.frames != 16 {
            return bad(format!("frames must be 8 or 16, got {}", self.frames));
        }
        if self.height == 0 || self.width == 0 {
            return bad("resolution must be positive".into());
        }
        let colors = [self.background, self.source.color, self.target.color];
        if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("colors must lie in [0, 1]".into());
        }
        if !(self.texture >= 0.0 && self.texture <= 1.0) {
            return bad(format!("texture {} outside [0, 1]", self.texture));
        }
        let values = self.source.start.iter().chain(&self.source.velocity);
        if values.chain([&self.source.size]).any(|v| !v.is_finite()) {
            return bad("object geometry must be finite".into());
        }
        let extent = self.source.size.max(self.target_size());
        if !(self.source.size > 0.0 && self.target_size() > 0.0) {
            return bad("object sizes must be positive".into());
        }
        for f in 0..self.frames {
            let (cy, cx) = self.source.center(f);
            let inside = cy - extent >= 0.0
                && cx - extent >= 0.0
                && cy + extent <= (self.height - 1) as f64
                && cx + extent <= (self.width - 1) as f64;
            if !inside {
                return bad(format!(
                    "object leaves the frame at frame {f} (center {cy}, {cx})"
                ));
            }
        }
        Ok(())
    }

    /// Segmentation query for the source object.
    pub fn source_segment(&self) -> SegmentTarget {
        SegmentTarget::new(self.source.color, SOURCE_SEGMENT_RADIUS)
    }

    /// Segmentation query for the target object in the rough edit.
    pub fn target_segment(&self) -> SegmentTarget {
        SegmentTarget::new(self.target.color, TARGET_SEGMENT_RADIUS)
    }

    /// Reference image naming the target object.
    pub fn target_image(&self) -> ImageDescriptor {
        let [r, g, b] = self.target.color;
        ImageDescriptor::named(format!("{}:{r},{g},{b}", self.target.shape.name()))
    }

    fn render(&self, shape: Shape, color: [f64; 3], size: f64) -> Result<(Video, BinaryMask)> {
        self.validate()?;
        let mask = BinaryMask::from_fn(self.frames, self.height, self.width, |f, y, x| {
            let (cy, cx) = self.source.center(f);
            shape.contains(y as f64 - cy, x as f64 - cx, size)
        })?;
        let plane = self.height * self.width;
        let texture = if self.texture > 0.0 {
            SeedStream::new(self.seed, "scenario.texture").normals(plane)
        } else {
            vec![0.0; plane]
        };
        let rgb = |f: usize, c: usize, y: usize, x: usize| {
            if mask.get(f, y, x) {
                color[c]
            } else {
                (self.background[c] + self.texture * texture[y * self.width + x]).clamp(0.0, 1.0)
            }
        };
        let video = VideoLatent::from_fn(self.dims(), |f, c, y, x| {
            if c < 3 {
                rgb(f, c, y, x)
            } else {
                (rgb(f, 0, y, x) + rgb(f, 1, y, x) + rgb(f, 2, y, x)) / 3.0
            }
        })?;
        Ok((video, mask))
    }
}

/// Source video and the exact per-frame object support.
pub fn synth_video(spec: &ScenarioSpec) -> Result<(Video, BinaryMask)> {
    spec.render(spec.source.shape, spec.source.color, spec.source.size)
}

/// The source video with the object replaced by the target, and its support.
pub fn render_target(spec: &ScenarioSpec) -> Result<(Video, BinaryMask)> {
    spec.render(spec.target.shape, spec.target.color, spec.target_size())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centroid(m: &BinaryMask, f: usize) -> (f64, f64) {
        let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
        for y in 0..m.height() {
            for x in 0..m.width() {
                if m.get(f, y, x) {
                    sy += y as f64;
                    sx += x as f64;
                    n += 1.0;
                }
            }
        }
        (sy / n, sx / n)
    }

    #[test]
    fn static_object_gives_identical_frames() {
        let mut s = ScenarioSpec::canonical();
        s.source.velocity = [0.0, 0.0];
        let (v, m) = synth_video(&s).unwrap();
        assert_eq!(v.dims().frames, 8);
        for f in 1..8 {
            assert_eq!(v.frame(f), v.frame(0));
        }
        assert_eq!(m.count_ones(), 8 * 81);
    }

    #[test]
    fn centroid_advances_one_pixel_per_frame() {
        let (_, m) = synth_video(&ScenarioSpec::canonical()).unwrap();
        for f in 0..8 {
            let (cy, cx) = centroid(&m, f);
            assert_eq!((cy, cx), (16.0, 10.0 + f as f64));
        }
    }

    #[test]
    fn mask_is_object_support() {
        let s = ScenarioSpec::canonical();
        let (v, m) = synth_video(&s).unwrap();
        for f in 0..8 {
            for y in 0..32 {
                for x in 0..32 {
                    let red = v.get(f, 0, y, x) == 0.9;
                    assert_eq!(red, m.get(f, y, x));
                }
            }
        }
        let (t, tm) = render_target(&s).unwrap();
        assert_eq!(tm.count_ones(), 8 * 49);
        assert!(tm.is_subset_of(&m));
        assert_eq!(t.get(3, 2, 16, 13), 0.9);
    }

    #[test]
    fn luminance_channel() {
        let s = ScenarioSpec::runtime();
        let (v, _) = synth_video(&s).unwrap();
        assert_eq!(v.dims(), Dims::new(16, 4, 64, 64));
        let (y, x) = (32, 25);
        let want = (v.get(5, 0, y, x) + v.get(5, 1, y, x) + v.get(5, 2, y, x)) / 3.0;
        assert_eq!(v.get(5, 3, y, x), want);
    }

    #[test]
    fn object_leaving_frame_is_rejected() {
        let mut s = ScenarioSpec::canonical();
        s.source.velocity = [0.0, 3.0];
        assert!(matches!(synth_video(&s), Err(HarnessError::Config(_))));
        let mut s = ScenarioSpec::canonical();
        s.frames = 5;
        assert!(synth_video(&s).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = ScenarioSpec::canonical();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<ScenarioSpec>(&text).unwrap(), s);
    }
}

//! Procedural image families used as the two classes of each synthetic task.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    Stripes,
    Checkerboard,
    Blobs,
    RadialGradient,
    ColorField,
    NoiseTexture,
}

/// Closed interval `[lo, hi]` sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn within(&self, lo: f64, hi: f64) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi && self.lo >= lo && self.hi <= hi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbRange {
    pub r: Interval,
    pub g: Interval,
    pub b: Interval,
}

impl RgbRange {
    pub const fn gray(lo: f64, hi: f64) -> Self {
        let i = Interval::new(lo, hi);
        RgbRange { r: i, g: i, b: i }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> [f64; 3] {
        [self.r.sample(rng), self.g.sample(rng), self.b.sample(rng)]
    }

    fn channels(&self) -> [Interval; 3] {
        [self.r, self.g, self.b]
    }
}

/// A class of images: a pattern kind plus the ranges its parameters are drawn from.
///
/// `angle_deg` is the stripe orientation (0 = horizontal lines). `scale` is
/// the stripe period, checker cell size, blob radius, gradient radius or
/// noise cell size in pixels depending on `kind`; color fields ignore it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternFamily {
    pub name: String,
    pub kind: PatternKind,
    pub angle_deg: Interval,
    pub scale: Interval,
    pub foreground: RgbRange,
    pub background: RgbRange,
}

impl PatternFamily {
    pub fn validate(&self) -> Result<()> {
        let geometric_ok = self.angle_deg.within(-180.0, 360.0) && self.scale.within(0.5, 64.0);
        let colors_ok = self
            .foreground
            .channels()
            .iter()
            .chain(self.background.channels().iter())
            .all(|i| i.within(0.0, 1.0));
        if geometric_ok && colors_ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "pattern family {} has an empty or out-of-bounds parameter interval",
                self.name
            )))
        }
    }

    /// Renders one `(3, size, size)` image in row-major channel planes, values in [0,1].
    pub fn render<R: Rng>(&self, size: usize, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), 3 * size * size);
        let fg = self.foreground.sample(rng);
        let bg = self.background.sample(rng);
        let plane = size * size;
        let s = size as f64;
        let mut mask = vec![0.0; plane];
        match self.kind {
            PatternKind::Stripes => {
                let theta = self.angle_deg.sample(rng).to_radians();
                let period = self.scale.sample(rng);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let (sn, cs) = theta.sin_cos();
                for y in 0..size {
                    for x in 0..size {
                        let t = -(x as f64) * sn + (y as f64) * cs;
                        mask[y * size + x] =
                            0.5 + 0.5 * (std::f64::consts::TAU * t / period + phase).sin();
                    }
                }
            }
            PatternKind::Checkerboard => {
                let cell = self.scale.sample(rng);
                let ox = rng.random_range(0.0..2.0 * cell);
                let oy = rng.random_range(0.0..2.0 * cell);
                for y in 0..size {
                    for x in 0..size {
                        let cx = ((x as f64 + ox) / cell).floor() as i64;
                        let cy = ((y as f64 + oy) / cell).floor() as i64;
                        mask[y * size + x] = ((cx + cy).rem_euclid(2)) as f64;
                    }
                }
            }
            PatternKind::Blobs => {
                let count = rng.random_range(2..=4);
                let blobs: Vec<(f64, f64, f64)> = (0..count)
                    .map(|_| {
                        (
                            rng.random_range(0.0..s),
                            rng.random_range(0.0..s),
                            self.scale.sample(rng),
                        )
                    })
                    .collect();
                for y in 0..size {
                    for x in 0..size {
                        let v: f64 = blobs
                            .iter()
                            .map(|&(bx, by, r)| {
                                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                                (-d2 / (2.0 * r * r)).exp()
                            })
                            .sum();
                        mask[y * size + x] = v.min(1.0);
                    }
                }
            }
            PatternKind::RadialGradient => {
                let cx = rng.random_range(0.25 * s..0.75 * s);
                let cy = rng.random_range(0.25 * s..0.75 * s);
                let radius = self.scale.sample(rng);
                for y in 0..size {
                    for x in 0..size {
                        let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                        mask[y * size + x] = (1.0 - d / radius).clamp(0.0, 1.0);
                    }
                }
            }
            PatternKind::ColorField => {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let (sn, cs) = theta.sin_cos();
                for y in 0..size {
                    for x in 0..size {
                        let ramp = ((x as f64) * cs + (y as f64) * sn) / s;
                        mask[y * size + x] = (0.9 + 0.1 * ramp).clamp(0.0, 1.0);
                    }
                }
            }
            PatternKind::NoiseTexture => {
                let cell = self.scale.sample(rng).round().max(1.0) as usize;
                let cells = size.div_ceil(cell);
                let values: Vec<f64> = (0..cells * cells).map(|_| rng.random::<f64>()).collect();
                for y in 0..size {
                    for x in 0..size {
                        mask[y * size + x] = values[(y / cell) * cells + x / cell];
                    }
                }
            }
        }
        for c in 0..3 {
            let dst = &mut out[c * plane..(c + 1) * plane];
            for (o, m) in dst.iter_mut().zip(&mask) {
                *o = bg[c] + m * (fg[c] - bg[c]);
            }
        }
    }
}

fn family(
    name: &str,
    kind: PatternKind,
    angle: (f64, f64),
    scale: (f64, f64),
    fg: RgbRange,
    bg: RgbRange,
) -> PatternFamily {
    PatternFamily {
        name: name.to_string(),
        kind,
        angle_deg: Interval::new(angle.0, angle.1),
        scale: Interval::new(scale.0, scale.1),
        foreground: fg,
        background: bg,
    }
}

struct Palette {
    name: &'static str,
    light: RgbRange,
    dark: RgbRange,
}

fn rgb(r: (f64, f64), g: (f64, f64), b: (f64, f64)) -> RgbRange {
    RgbRange {
        r: Interval::new(r.0, r.1),
        g: Interval::new(g.0, g.1),
        b: Interval::new(b.0, b.1),
    }
}

fn palettes() -> Vec<Palette> {
    let hi = (0.7, 1.0);
    let lo = (0.0, 0.3);
    let dim = (0.1, 0.35);
    let off = (0.0, 0.12);
    vec![
        Palette { name: "gray", light: RgbRange::gray(0.55, 1.0), dark: RgbRange::gray(0.0, 0.45) },
        Palette { name: "red", light: rgb(hi, lo, lo), dark: rgb(dim, off, off) },
        Palette { name: "green", light: rgb(lo, hi, lo), dark: rgb(off, dim, off) },
        Palette { name: "blue", light: rgb(lo, lo, hi), dark: rgb(off, off, dim) },
        Palette { name: "yellow", light: rgb(hi, hi, lo), dark: rgb(dim, dim, off) },
    ]
}

/// The fixed family catalog tasks are drawn from: every spatial layout in
/// every palette, plus a handful of flat color fields.
pub fn catalog() -> Vec<PatternFamily> {
    use PatternKind::*;
    let layouts = [
        ("stripes-horizontal", Stripes, (-15.0, 15.0), (3.0, 5.0)),
        ("stripes-vertical", Stripes, (75.0, 105.0), (3.0, 5.0)),
        ("stripes-diagonal", Stripes, (35.0, 55.0), (3.0, 5.0)),
        ("stripes-antidiagonal", Stripes, (125.0, 145.0), (3.0, 5.0)),
        ("checkerboard", Checkerboard, (0.0, 0.0), (2.0, 4.0)),
        ("blobs", Blobs, (0.0, 0.0), (2.5, 4.0)),
        ("radial-gradient", RadialGradient, (0.0, 0.0), (5.0, 10.0)),
        ("noise-texture", NoiseTexture, (0.0, 0.0), (1.0, 2.0)),
    ];
    let mut out = Vec::new();
    for p in palettes() {
        for &(name, kind, angle, scale) in &layouts {
            out.push(family(&format!("{}-{}", name, p.name), kind, angle, scale, p.light, p.dark));
        }
    }
    let fields = [
        ("color-field-orange", rgb((0.8, 1.0), (0.4, 0.6), (0.0, 0.2))),
        ("color-field-teal", rgb((0.0, 0.2), (0.5, 0.7), (0.5, 0.7))),
        ("color-field-purple", rgb((0.4, 0.6), (0.0, 0.2), (0.6, 0.9))),
        ("color-field-pink", rgb((0.9, 1.0), (0.5, 0.7), (0.7, 0.9))),
    ];
    for (name, color) in fields {
        out.push(family(name, ColorField, (0.0, 0.0), (1.0, 1.0), color, color));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn catalog_is_valid_and_named_uniquely() {
        let cat = catalog();
        for f in &cat {
            f.validate().unwrap();
        }
        let mut names: Vec<_> = cat.iter().map(|f| f.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), cat.len());
    }

    #[test]
    fn renders_stay_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = vec![0.0; 3 * 16 * 16];
        for f in catalog() {
            for _ in 0..5 {
                f.render(16, &mut rng, &mut buf);
                assert!(buf.iter().all(|v| (0.0..=1.0).contains(v)), "{}", f.name);
            }
        }
    }

    #[test]
    fn invalid_interval_rejected() {
        let mut f = catalog().remove(0);
        f.scale = Interval::new(5.0, 3.0);
        assert!(f.validate().is_err());
        let mut g = catalog().remove(0);
        g.foreground.r = Interval::new(0.5, 1.5);
        assert!(g.validate().is_err());
    }
}

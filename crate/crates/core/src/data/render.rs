//! Procedural white-on-black sprite renderer for dSprites-like grids.

use super::spec::{FactorSpec, FactorTuple};
use crate::error::{Error, Result};

/// Sprite half-extent as a fraction of the image side at scale 1.
const HALF_EXTENT: f64 = 0.12;
/// Positions map onto `[INSET, 1 - INSET]` of the frame so sprites stay visible.
const INSET: f64 = 0.18;
const SUPERSAMPLE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Square,
    Ellipse,
    Heart,
}

impl Shape {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(Shape::Square),
            "ellipse" => Ok(Shape::Ellipse),
            "heart" => Ok(Shape::Heart),
            other => Err(Error::InvalidSpec(format!("unknown shape symbol {other:?}"))),
        }
    }

    /// Inside-test in shape-local coordinates (unit half-extent, v up).
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Square => u.abs() <= 0.85 && v.abs() <= 0.85,
            Shape::Ellipse => u * u + (v * v) / 0.25 <= 1.0,
            Shape::Heart => {
                let (u, v) = (1.2 * u, 1.2 * v + 0.1);
                let a = u * u + v * v - 1.0;
                a * a * a - u * u * v * v * v <= 0.0
            }
        }
    }
}

/// Resolved geometry of one grid point.
#[derive(Debug, Clone, Copy)]
struct Sprite {
    shape: Shape,
    scale: f64,
    rotation: f64,
    x: f64,
    y: f64,
}

fn lookup(spec: &FactorSpec, name: &str) -> Result<usize> {
    spec.factor_index(name)
        .ok_or_else(|| Error::InvalidSpec(format!("renderer needs a factor named {name:?}")))
}

fn sprite(spec: &FactorSpec, tuple: &FactorTuple) -> Result<Sprite> {
    if tuple.0.len() != spec.n_factors() {
        return Err(Error::InvalidArgument("tuple length does not match spec".into()));
    }
    let num = |name: &str| -> Result<f64> {
        let k = lookup(spec, name)?;
        spec.factors[k].values[tuple.0[k]]
            .as_number()
            .ok_or_else(|| Error::InvalidSpec(format!("factor {name:?} must be numeric")))
    };
    let k = lookup(spec, "shape")?;
    let sym = spec.factors[k].values[tuple.0[k]]
        .as_symbol()
        .ok_or_else(|| Error::InvalidSpec("factor \"shape\" must be categorical".into()))?;
    let xk = lookup(spec, "x")?;
    let yk = lookup(spec, "y")?;
    Ok(Sprite {
        shape: Shape::parse(sym)?,
        scale: num("scale")?,
        rotation: num("rotation")?,
        x: spec.factors[xk].normalized(tuple.0[xk]),
        y: spec.factors[yk].normalized(tuple.0[yk]),
    })
}

/// Renders one grid point as a `resolution × resolution` grayscale image.
pub fn render(spec: &FactorSpec, tuple: &FactorTuple, resolution: usize) -> Result<Vec<u8>> {
    if resolution != 32 && resolution != 64 {
        return Err(Error::InvalidArgument(format!("resolution must be 32 or 64, got {resolution}")));
    }
    let s = sprite(spec, tuple)?;
    let side = resolution as f64;
    let cx = (INSET + (1.0 - 2.0 * INSET) * s.x) * side;
    // Image rows grow downward; y = 0 is the bottom of the frame.
    let cy = (1.0 - INSET - (1.0 - 2.0 * INSET) * s.y) * side;
    let half = HALF_EXTENT * s.scale * side;
    let (sin, cos) = s.rotation.sin_cos();
    let mut img = vec![0u8; resolution * resolution];
    let ss = SUPERSAMPLE as f64;
    for py in 0..resolution {
        for px in 0..resolution {
            let mut hits = 0u32;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 + (sx as f64 + 0.5) / ss - cx;
                    let y = cy - (py as f64 + (sy as f64 + 0.5) / ss);
                    // Rotate the sample into the sprite frame.
                    let u = (cos * x + sin * y) / half;
                    let v = (-sin * x + cos * y) / half;
                    if s.shape.contains(u, v) {
                        hits += 1;
                    }
                }
            }
            let total = (SUPERSAMPLE * SUPERSAMPLE) as u32;
            img[py * resolution + px] = ((hits * 255 + total / 2) / total) as u8;
        }
    }
    Ok(img)
}

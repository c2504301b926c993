//! Geometry phase: vertex transform, clipping, viewport mapping, 16.8
//! fixed-point snapping and bounding-box binning into per-tile lists.
//!
//! Clip space follows the `0 <= z <= w` depth convention. Triangles are
//! clipped against the near and far planes and against a wide guard band that
//! keeps snapped coordinates well inside `i32`; everything between the screen
//! edges and the guard band is left to the per-tile scissor of the rasterizer.

use thiserror::Error;

use crate::grid::TileGrid;
use crate::scene::{DrawCommand, ShaderId};

pub const SUBPIXEL_BITS: u32 = 8;
pub const SUBPIXEL_ONE: i32 = 1 << SUBPIXEL_BITS;
const SUBPIXEL_HALF: i64 = (SUBPIXEL_ONE / 2) as i64;

/// Largest screen coordinate magnitude, in pixels, allowed after clipping.
const GUARD_BAND_PIXELS: f64 = (1 << 19) as f64;
const MIN_W: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenVertex {
    /// Pixels in 16.8 fixed point, origin top-left, y down.
    pub x: i32,
    pub y: i32,
    /// Depth in `[0, 1]`.
    pub z: f32,
    pub inv_w: f32,
    pub color: [u8; 4],
    pub uv: [f32; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScreenTriangle {
    /// Position of the owning draw within its frame.
    pub draw_index: u32,
    pub draw_id: u32,
    pub shader: ShaderId,
    /// Output triangle sequence number within the draw.
    pub tri_index: u32,
    pub vertices: [ScreenVertex; 3],
}

/// Inclusive fixed-point bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedBounds {
    pub min_x: i32,
    pub min_y: i32,
    pub max_x: i32,
    pub max_y: i32,
}

impl ScreenTriangle {
    pub fn bounds(&self) -> FixedBounds {
        let [a, b, c] = &self.vertices;
        FixedBounds {
            min_x: a.x.min(b.x).min(c.x),
            min_y: a.y.min(b.y).min(c.y),
            max_x: a.x.max(b.x).max(c.x),
            max_y: a.y.max(b.y).max(c.y),
        }
    }

    /// Twice the signed area in 1/65536 pixel units; positive when the
    /// vertices run clockwise on screen (y down).
    pub fn doubled_area(&self) -> i64 {
        let [a, b, c] = &self.vertices;
        edge_function((a.x, a.y), (b.x, b.y), (i64::from(c.x), i64::from(c.y)))
    }
}

/// Signed edge function of `p` against the directed edge `a -> b`.
#[inline]
pub fn edge_function(a: (i32, i32), b: (i32, i32), p: (i64, i64)) -> i64 {
    let (ax, ay) = (i64::from(a.0), i64::from(a.1));
    let (bx, by) = (i64::from(b.0), i64::from(b.1));
    (bx - ax) * (p.1 - ay) - (by - ay) * (p.0 - ax)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("draw {draw_id}: non-finite {what}")]
    NonFinite { draw_id: u32, what: &'static str },
}

#[derive(Clone, Copy, Debug)]
struct ClipVertex {
    pos: [f64; 4],
    color: [f64; 4],
    uv: [f64; 2],
}

impl ClipVertex {
    fn lerp(&self, other: &ClipVertex, t: f64) -> ClipVertex {
        let mix = |a: f64, b: f64| a + (b - a) * t;
        ClipVertex {
            pos: std::array::from_fn(|i| mix(self.pos[i], other.pos[i])),
            color: std::array::from_fn(|i| mix(self.color[i], other.color[i])),
            uv: std::array::from_fn(|i| mix(self.uv[i], other.uv[i])),
        }
    }
}

#[derive(Clone, Copy)]
enum Plane {
    Near,
    Far,
    MinW,
    Left(f64),
    Right(f64),
    Top(f64),
    Bottom(f64),
}

impl Plane {
    /// Signed distance; inside when `>= 0`.
    fn distance(self, p: &[f64; 4]) -> f64 {
        let [x, y, z, w] = *p;
        match self {
            Plane::Near => z,
            Plane::Far => w - z,
            Plane::MinW => w - MIN_W,
            Plane::Left(g) => g * w + x,
            Plane::Right(g) => g * w - x,
            Plane::Top(g) => g * w - y,
            Plane::Bottom(g) => g * w + y,
        }
    }
}

fn clip_polygon(poly: Vec<ClipVertex>, plane: Plane) -> Vec<ClipVertex> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..n {
        let cur = &poly[i];
        let next = &poly[(i + 1) % n];
        let dc = plane.distance(&cur.pos);
        let dn = plane.distance(&next.pos);
        if dc >= 0.0 {
            out.push(*cur);
        }
        if (dc >= 0.0) != (dn >= 0.0) {
            out.push(cur.lerp(next, dc / (dc - dn)));
        }
    }
    out
}

fn snap(v: f64) -> i32 {
    (v * f64::from(SUBPIXEL_ONE)).round() as i32
}

/// Transforms one draw into snapped, clipped screen-space triangles.
///
/// `draw_index` is the draw's position within its frame. Triangles entirely
/// outside the clip volume and triangles with zero snapped area are dropped.
pub fn transform_and_assemble(
    draw: &DrawCommand,
    draw_index: u32,
    grid: &TileGrid,
) -> Result<Vec<ScreenTriangle>, GeometryError> {
    let m = &draw.uniforms.matrix;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite {
            draw_id: draw.draw_id,
            what: "matrix element",
        });
    }
    let mut clip = Vec::with_capacity(draw.vertices.len());
    for v in &draw.vertices {
        if v.position.iter().chain(&v.uv).any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite {
                draw_id: draw.draw_id,
                what: "vertex attribute",
            });
        }
        let p = [
            f64::from(v.position[0]),
            f64::from(v.position[1]),
            f64::from(v.position[2]),
            1.0,
        ];
        let pos = std::array::from_fn(|r| (0..4).map(|c| f64::from(m[r * 4 + c]) * p[c]).sum());
        clip.push(ClipVertex {
            pos,
            color: v.color.map(f64::from),
            uv: v.uv.map(f64::from),
        });
    }

    let (width, height) = (f64::from(grid.width), f64::from(grid.height));
    let gx = GUARD_BAND_PIXELS / (width * 0.5);
    let gy = GUARD_BAND_PIXELS / (height * 0.5);
    let planes = [
        Plane::Near,
        Plane::Far,
        Plane::MinW,
        Plane::Left(gx),
        Plane::Right(gx),
        Plane::Top(gy),
        Plane::Bottom(gy),
    ];
    let reject_planes = [
        Plane::Near,
        Plane::Far,
        Plane::MinW,
        Plane::Left(1.0),
        Plane::Right(1.0),
        Plane::Top(1.0),
        Plane::Bottom(1.0),
    ];

    let project = |cv: &ClipVertex| -> ScreenVertex {
        let inv_w = 1.0 / cv.pos[3];
        let ndc_x = cv.pos[0] * inv_w;
        let ndc_y = cv.pos[1] * inv_w;
        ScreenVertex {
            x: snap((ndc_x + 1.0) * 0.5 * width),
            y: snap((1.0 - ndc_y) * 0.5 * height),
            z: (cv.pos[2] * inv_w).clamp(0.0, 1.0) as f32,
            inv_w: inv_w as f32,
            color: cv.color.map(|c| c.round().clamp(0.0, 255.0) as u8),
            uv: cv.uv.map(|c| c as f32),
        }
    };

    let mut out = Vec::new();
    for tri in clip.chunks_exact(3) {
        if reject_planes
            .iter()
            .any(|p| tri.iter().all(|v| p.distance(&v.pos) < 0.0))
        {
            continue;
        }
        let mut poly = tri.to_vec();
        for plane in planes {
            if poly.iter().any(|v| plane.distance(&v.pos) < 0.0) {
                poly = clip_polygon(poly, plane);
                if poly.len() < 3 {
                    break;
                }
            }
        }
        if poly.len() < 3 {
            continue;
        }
        let projected: Vec<ScreenVertex> = poly.iter().map(project).collect();
        for i in 1..projected.len() - 1 {
            let t = ScreenTriangle {
                draw_index,
                draw_id: draw.draw_id,
                shader: draw.shader,
                tri_index: out.len() as u32,
                vertices: [projected[0], projected[i], projected[i + 1]],
            };
            if t.doubled_area() != 0 {
                out.push(t);
            }
        }
    }
    Ok(out)
}

/// Per-tile ordered triangle lists. Entries index the frame's triangle array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileBinList {
    pub tiles_x: u32,
    pub tiles_y: u32,
    bins: Vec<Vec<u32>>,
}

impl TileBinList {
    pub fn tile(&self, index: usize) -> &[u32] {
        &self.bins[index]
    }

    pub fn tile_count(&self) -> usize {
        self.bins.len()
    }

    /// Total number of (triangle, tile) entries.
    pub fn entry_count(&self) -> usize {
        self.bins.iter().map(Vec::len).sum()
    }
}

/// Inclusive tile range whose pixel centers fall inside the triangle's bounding box.
pub fn tile_span(bounds: &FixedBounds, grid: &TileGrid) -> Option<(u32, u32, u32, u32)> {
    let one = i64::from(SUBPIXEL_ONE);
    // Pixel p has its center at p * one + one / 2.
    let first = |min: i32| -((-(i64::from(min) - SUBPIXEL_HALF)).div_euclid(one));
    let last = |max: i32| (i64::from(max) - SUBPIXEL_HALF).div_euclid(one);
    let px0 = first(bounds.min_x).max(0);
    let py0 = first(bounds.min_y).max(0);
    let px1 = last(bounds.max_x).min(i64::from(grid.width) - 1);
    let py1 = last(bounds.max_y).min(i64::from(grid.height) - 1);
    if px0 > px1 || py0 > py1 {
        return None;
    }
    let ts = i64::from(grid.tile_size);
    Some((
        (px0 / ts) as u32,
        (py0 / ts) as u32,
        (px1 / ts) as u32,
        (py1 / ts) as u32,
    ))
}

/// Bins triangles by bounding box, preserving submission order within each tile.
///
/// A triangle lands in a tile iff its snapped bounding box contains the
/// center of at least one of the tile's on-screen pixels.
pub fn bin_triangles(tris: &[ScreenTriangle], grid: &TileGrid) -> TileBinList {
    let mut bins = vec![Vec::new(); grid.tile_count()];
    for (i, tri) in tris.iter().enumerate() {
        if let Some((tx0, ty0, tx1, ty1)) = tile_span(&tri.bounds(), grid) {
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    bins[grid.index(tx, ty)].push(i as u32);
                }
            }
        }
    }
    TileBinList {
        tiles_x: grid.tiles_x,
        tiles_y: grid.tiles_y,
        bins,
    }
}

/// Output of the geometry phase for one frame.
#[derive(Clone, Debug)]
pub struct FrameGeometry {
    pub triangles: Vec<ScreenTriangle>,
    pub bins: TileBinList,
    pub vertices_transformed: u64,
}

pub fn process_frame(
    draws: &[DrawCommand],
    grid: &TileGrid,
) -> Result<FrameGeometry, GeometryError> {
    let mut triangles = Vec::new();
    let mut vertices_transformed = 0u64;
    for (i, draw) in draws.iter().enumerate() {
        vertices_transformed += draw.vertices.len() as u64;
        triangles.extend(transform_and_assemble(draw, i as u32, grid)?);
    }
    let bins = bin_triangles(&triangles, grid);
    Ok(FrameGeometry {
        triangles,
        bins,
        vertices_transformed,
    })
}

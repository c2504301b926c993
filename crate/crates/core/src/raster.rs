//! Raster phase: per-tile rasterization into an on-chip tile buffer, depth
//! testing, fragment shading and writeback to the persistent framebuffer.

use std::fs;
use std::io;
use std::path::Path;

use crate::cost::FrameStats;
use crate::geometry::{edge_function, ScreenTriangle, ScreenVertex, TileBinList, SUBPIXEL_ONE};
use crate::grid::{PixelRect, TileGrid};
use crate::scene::{DrawCommand, ShaderId, Texture, TextureSet, Uniforms};

pub const CLEAR_COLOR: [u8; 4] = [0, 0, 0, 255];
pub const CLEAR_DEPTH: f32 = 1.0;

/// Off-chip color and depth store. Never cleared between frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Framebuffer {
    pub width: u32,
    pub height: u32,
    pub color: Vec<[u8; 4]>,
    pub depth: Vec<f32>,
}

impl Framebuffer {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Framebuffer {
            width,
            height,
            color: vec![CLEAR_COLOR; n],
            depth: vec![CLEAR_DEPTH; n],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        self.color[y as usize * self.width as usize + x as usize]
    }

    /// Color bytes of a rectangle, row by row.
    pub fn rect_color_bytes(&self, rect: &PixelRect) -> Vec<u8> {
        let mut out = Vec::with_capacity(rect.area() as usize * 4);
        for y in rect.y0..rect.y1 {
            let row = y as usize * self.width as usize;
            for x in rect.x0..rect.x1 {
                out.extend_from_slice(&self.color[row + x as usize]);
            }
        }
        out
    }

    /// Binary PPM (P6) of the color planes; alpha is dropped.
    pub fn encode_ppm(&self) -> Vec<u8> {
        encode_ppm(self.width, self.height, self.color.iter())
    }

    pub fn write_ppm(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.encode_ppm())
    }

    /// Binary PPM of one rectangle.
    pub fn encode_rect_ppm(&self, rect: &PixelRect) -> Vec<u8> {
        let w = self.width as usize;
        let pixels = (rect.y0..rect.y1).flat_map(|y| {
            self.color[y as usize * w + rect.x0 as usize..y as usize * w + rect.x1 as usize].iter()
        });
        encode_ppm(rect.width(), rect.height(), pixels)
    }
}

fn encode_ppm<'a>(width: u32, height: u32, pixels: impl Iterator<Item = &'a [u8; 4]>) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for p in pixels {
        out.extend_from_slice(&p[..3]);
    }
    out
}

/// On-chip working buffer for one tile's on-screen pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct TileBuffer {
    pub tile_index: usize,
    pub rect: PixelRect,
    pub color: Vec<[u8; 4]>,
    pub depth: Vec<f32>,
}

impl TileBuffer {
    pub fn cleared(tile_index: usize, rect: PixelRect) -> Self {
        let n = rect.area() as usize;
        TileBuffer {
            tile_index,
            rect,
            color: vec![CLEAR_COLOR; n],
            depth: vec![CLEAR_DEPTH; n],
        }
    }

    pub fn color_bytes(&self) -> Vec<u8> {
        self.color.iter().flatten().copied().collect()
    }

    /// Stores color and depth into the framebuffer; returns color bytes written.
    pub fn write_back(&self, fb: &mut Framebuffer) -> u64 {
        let w = self.rect.width() as usize;
        for (row, y) in (self.rect.y0..self.rect.y1).enumerate() {
            let dst = y as usize * fb.width as usize + self.rect.x0 as usize;
            let src = row * w;
            fb.color[dst..dst + w].copy_from_slice(&self.color[src..src + w]);
            fb.depth[dst..dst + w].copy_from_slice(&self.depth[src..src + w]);
        }
        self.color.len() as u64 * 4
    }

    /// True when the framebuffer already holds exactly this tile's colors.
    pub fn matches_framebuffer(&self, fb: &Framebuffer) -> bool {
        let w = self.rect.width() as usize;
        (self.rect.y0..self.rect.y1).enumerate().all(|(row, y)| {
            let dst = y as usize * fb.width as usize + self.rect.x0 as usize;
            fb.color[dst..dst + w] == self.color[row * w..(row + 1) * w]
        })
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        encode_ppm(self.rect.width(), self.rect.height(), self.color.iter())
    }
}

/// Perspective-correct interpolated fragment attributes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Varyings {
    /// RGBA on a 0..=255 scale.
    pub color: [f32; 4],
    pub uv: [f32; 2],
}

/// Texel at `(floor(u*w) mod w, floor(v*h) mod h)`, wrapping negative coordinates.
pub fn sample_texture(tex: &Texture, u: f32, v: f32) -> [u8; 4] {
    let wrap = |t: f32, size: u32| -> u32 {
        let i = (f64::from(t) * f64::from(size)).floor();
        (i.rem_euclid(f64::from(size))) as u32
    };
    tex.texel(wrap(u, tex.width), wrap(v, tex.height))
}

/// `round(a * b / 255)` with halves rounded up.
#[inline]
pub fn modulate(a: u8, b: u8) -> u8 {
    ((u32::from(a) * u32::from(b) * 2 + 255) / 510) as u8
}

#[inline]
fn to_u8(c: f32) -> u8 {
    (c + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// The fixed shader family.
///
/// FLAT returns the tint; GOURAUD modulates the interpolated color by the
/// tint; TEXTURED additionally modulates by a nearest-neighbor texel. A
/// textured draw without a bound texture samples opaque white.
pub fn shade_fragment(
    shader: ShaderId,
    uniforms: &Uniforms,
    varyings: &Varyings,
    texture: Option<&Texture>,
) -> [u8; 4] {
    let tint = uniforms.tint;
    match shader {
        ShaderId::Flat => tint,
        ShaderId::Gouraud => {
            let c = varyings.color.map(to_u8);
            std::array::from_fn(|i| modulate(c[i], tint[i]))
        }
        ShaderId::Textured => {
            let c = varyings.color.map(to_u8);
            let texel = texture
                .map(|t| sample_texture(t, varyings.uv[0], varyings.uv[1]))
                .unwrap_or([255; 4]);
            std::array::from_fn(|i| modulate(modulate(texel[i], c[i]), tint[i]))
        }
    }
}

/// Everything a tile needs to rasterize, shared read-only across tiles.
#[derive(Clone, Copy)]
pub struct RasterContext<'a> {
    pub grid: &'a TileGrid,
    pub draws: &'a [DrawCommand],
    pub triangles: &'a [ScreenTriangle],
    pub bins: &'a TileBinList,
    pub textures: &'a TextureSet,
}

/// Produces the color of a depth-passing fragment and accounts for the work.
pub trait FragmentShading {
    fn shade(
        &mut self,
        draw_index: u32,
        draw: &DrawCommand,
        varyings: &Varyings,
        texture: Option<&Texture>,
        stats: &mut FrameStats,
    ) -> [u8; 4];
}

/// Invokes the shader for every fragment.
#[derive(Clone, Copy, Debug, Default)]
pub struct DirectShading;

/// Shades one fragment and charges the shader work to `stats`.
pub fn shade_counted(
    draw: &DrawCommand,
    varyings: &Varyings,
    texture: Option<&Texture>,
    stats: &mut FrameStats,
) -> [u8; 4] {
    stats.fragments_shaded += 1;
    if draw.shader == ShaderId::Textured {
        stats.texels_fetched += 1;
        stats.bytes_read += 4;
    }
    shade_fragment(draw.shader, &draw.uniforms, varyings, texture)
}

impl FragmentShading for DirectShading {
    fn shade(
        &mut self,
        _draw_index: u32,
        draw: &DrawCommand,
        varyings: &Varyings,
        texture: Option<&Texture>,
        stats: &mut FrameStats,
    ) -> [u8; 4] {
        shade_counted(draw, varyings, texture, stats)
    }
}

#[inline]
fn is_top_left(a: &ScreenVertex, b: &ScreenVertex) -> bool {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    (dy == 0 && dx > 0) || dy < 0
}

/// Rasterizes one triangle into the tile buffer.
fn raster_triangle(
    tile: &mut TileBuffer,
    tri: &ScreenTriangle,
    draw: &DrawCommand,
    texture: Option<&Texture>,
    shading: &mut dyn FragmentShading,
    stats: &mut FrameStats,
) {
    let mut v = tri.vertices;
    let mut area = tri.doubled_area();
    if area < 0 {
        v.swap(1, 2);
        area = -area;
    }
    if area == 0 {
        return;
    }
    let one = i64::from(SUBPIXEL_ONE);
    let half = one / 2;
    let b = tri.bounds();
    let first = |min: i32| -((-(i64::from(min) - half)).div_euclid(one));
    let last = |max: i32| (i64::from(max) - half).div_euclid(one);
    let r = tile.rect;
    let x0 = first(b.min_x).max(i64::from(r.x0));
    let y0 = first(b.min_y).max(i64::from(r.y0));
    let x1 = last(b.max_x).min(i64::from(r.x1) - 1);
    let y1 = last(b.max_y).min(i64::from(r.y1) - 1);
    if x0 > x1 || y0 > y1 {
        return;
    }

    // Edge k is opposite vertex k.
    let edges = [(v[1], v[2]), (v[2], v[0]), (v[0], v[1])];
    let top_left = edges.map(|(a, b)| is_top_left(&a, &b));
    let inv_area = 1.0 / area as f64;
    let tile_w = r.width() as usize;

    for py in y0..=y1 {
        let cy = py * one + half;
        for px in x0..=x1 {
            let cx = px * one + half;
            let mut e = [0i64; 3];
            let mut inside = true;
            for k in 0..3 {
                let (a, b) = edges[k];
                e[k] = edge_function((a.x, a.y), (b.x, b.y), (cx, cy));
                if e[k] < 0 || (e[k] == 0 && !top_left[k]) {
                    inside = false;
                    break;
                }
            }
            if !inside {
                continue;
            }
            let bary = e.map(|w| w as f64 * inv_area);
            let z: f64 = (0..3).map(|k| bary[k] * f64::from(v[k].z)).sum();
            let z = z as f32;
            let idx = (py as usize - r.y0 as usize) * tile_w + (px as usize - r.x0 as usize);
            if z >= tile.depth[idx] {
                continue;
            }
            let pw = [0, 1, 2].map(|k| bary[k] * f64::from(v[k].inv_w));
            let denom: f64 = pw.iter().sum();
            let interp = |f: &dyn Fn(&ScreenVertex) -> f64| -> f32 {
                ((0..3).map(|k| pw[k] * f(&v[k])).sum::<f64>() / denom) as f32
            };
            let varyings = Varyings {
                color: std::array::from_fn(|c| interp(&|s: &ScreenVertex| f64::from(s.color[c]))),
                uv: std::array::from_fn(|c| interp(&|s: &ScreenVertex| f64::from(s.uv[c]))),
            };
            let color = shading.shade(tri.draw_index, draw, &varyings, texture, stats);
            tile.depth[idx] = z;
            tile.color[idx] = color;
        }
    }
}

/// Renders one tile from its bin list into a freshly cleared tile buffer.
pub fn render_tile(
    ctx: &RasterContext<'_>,
    tile_index: usize,
    shading: &mut dyn FragmentShading,
    stats: &mut FrameStats,
) -> TileBuffer {
    let mut tile = TileBuffer::cleared(tile_index, ctx.grid.tile_rect(tile_index));
    for &t in ctx.bins.tile(tile_index) {
        let tri = &ctx.triangles[t as usize];
        let draw = &ctx.draws[tri.draw_index as usize];
        let texture = draw.uniforms.texture_id.and_then(|id| ctx.textures.get(id));
        raster_triangle(&mut tile, tri, draw, texture, shading, stats);
    }
    tile
}

/// Renders every tile with direct shading and writes all of them back.
pub fn render_frame(ctx: &RasterContext<'_>, fb: &mut Framebuffer, stats: &mut FrameStats) {
    for t in 0..ctx.grid.tile_count() {
        let tile = render_tile(ctx, t, &mut DirectShading, stats);
        stats.bytes_written += tile.write_back(fb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{bin_triangles, process_frame};
    use crate::scene::{TextureIdentity, TextureSource, Vertex, IDENTITY};

    fn draw(
        shader: ShaderId,
        tint: [u8; 4],
        texture_id: Option<u32>,
        verts: Vec<Vertex>,
    ) -> DrawCommand {
        DrawCommand {
            draw_id: 0,
            shader,
            uniforms: Uniforms {
                matrix: IDENTITY,
                tint,
                texture_id,
            },
            vertices: verts,
        }
    }

    /// Pixel coordinates to NDC for a `w x h` viewport.
    fn px(w: f32, h: f32, x: f32, y: f32, z: f32) -> [f32; 3] {
        [2.0 * x / w - 1.0, 1.0 - 2.0 * y / h, z]
    }

    fn quad(w: f32, h: f32, r: [f32; 4], z: f32, color: [u8; 4], uv: bool) -> Vec<Vertex> {
        let [x0, y0, x1, y1] = r;
        let c = [
            (x0, y0, 0.0, 0.0),
            (x1, y0, 1.0, 0.0),
            (x1, y1, 1.0, 1.0),
            (x0, y1, 0.0, 1.0),
        ];
        [0, 1, 2, 0, 2, 3]
            .into_iter()
            .map(|i| {
                let (x, y, u, v) = c[i];
                let vert = Vertex::new(px(w, h, x, y, z), color);
                if uv {
                    vert.with_uv(u, v)
                } else {
                    vert
                }
            })
            .collect()
    }

    fn render(
        grid: &TileGrid,
        draws: &[DrawCommand],
        textures: &TextureSet,
    ) -> (Framebuffer, FrameStats) {
        let geo = process_frame(draws, grid).unwrap();
        let ctx = RasterContext {
            grid,
            draws,
            triangles: &geo.triangles,
            bins: &geo.bins,
            textures,
        };
        let mut fb = Framebuffer::new(grid.width, grid.height);
        let mut stats = FrameStats::default();
        render_frame(&ctx, &mut fb, &mut stats);
        (fb, stats)
    }

    #[test]
    fn empty_tile_is_cleared() {
        let grid = TileGrid::new(16, 16, 16);
        let (fb, stats) = render(&grid, &[], &TextureSet::default());
        assert!(fb.color.iter().all(|&c| c == CLEAR_COLOR));
        assert!(fb.depth.iter().all(|&d| d == CLEAR_DEPTH));
        assert_eq!(stats.fragments_shaded, 0);
        assert_eq!(stats.bytes_written, 16 * 16 * 4);
    }

    #[test]
    fn flat_tint_everywhere() {
        let grid = TileGrid::new(32, 32, 16);
        let d = draw(
            ShaderId::Flat,
            [255, 0, 0, 255],
            None,
            quad(32.0, 32.0, [0.0, 0.0, 32.0, 32.0], 0.5, [9; 4], false),
        );
        let (fb, stats) = render(&grid, &[d], &TextureSet::default());
        assert!(fb.color.iter().all(|&c| c == [255, 0, 0, 255]));
        assert_eq!(stats.fragments_shaded, 32 * 32);
    }

    #[test]
    fn gouraud_constant_color() {
        let grid = TileGrid::new(32, 32, 8);
        let c = [17, 130, 201, 255];
        let d = draw(
            ShaderId::Gouraud,
            [255; 4],
            None,
            quad(32.0, 32.0, [0.0, 0.0, 32.0, 32.0], 0.5, c, false),
        );
        let (fb, _) = render(&grid, &[d], &TextureSet::default());
        assert!(fb.color.iter().all(|&p| p == c));
    }

    #[test]
    fn depth_test_keeps_front_triangle() {
        // Per-pixel depth oracle: with strictly-less testing and equal
        // coverage, the nearer surface wins in either submission order.
        let grid = TileGrid::new(32, 32, 16);
        let r = [4.0, 4.0, 28.0, 28.0];
        let near = draw(
            ShaderId::Flat,
            [0, 255, 0, 255],
            None,
            quad(32.0, 32.0, r, 0.3, [255; 4], false),
        );
        let far = draw(
            ShaderId::Flat,
            [0, 0, 255, 255],
            None,
            quad(32.0, 32.0, r, 0.7, [255; 4], false),
        );
        for order in [[near.clone(), far.clone()], [far.clone(), near.clone()]] {
            let (fb, _) = render(&grid, &order, &TextureSet::default());
            for y in 0..32 {
                for x in 0..32 {
                    let inside = (4..28).contains(&x) && (4..28).contains(&y);
                    let want = if inside {
                        [0, 255, 0, 255]
                    } else {
                        CLEAR_COLOR
                    };
                    assert_eq!(fb.pixel(x, y), want, "({x},{y})");
                    let d = fb.depth[(y * 32 + x) as usize];
                    assert_eq!(d, if inside { 0.3 } else { 1.0 });
                }
            }
        }
    }

    #[test]
    fn shared_edges_cover_each_pixel_once() {
        // Coverage-count oracle: a fan of triangles around an interior point,
        // rendered one at a time; counts must be exactly one inside the hull.
        let grid = TileGrid::new(64, 64, 16);
        let center = (31.3f32, 29.7f32);
        let ring: Vec<(f32, f32)> = (0..11)
            .map(|i| {
                let a = i as f32 / 11.0 * std::f32::consts::TAU;
                (32.0 + 60.0 * a.cos(), 32.0 + 60.0 * a.sin())
            })
            .collect();
        let mut counts = vec![0u32; 64 * 64];
        let textures = TextureSet::default();
        for i in 0..ring.len() {
            let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
            let verts = vec![
                Vertex::new(px(64.0, 64.0, center.0, center.1, 0.5), [255; 4]),
                Vertex::new(px(64.0, 64.0, a.0, a.1, 0.5), [255; 4]),
                Vertex::new(px(64.0, 64.0, b.0, b.1, 0.5), [255; 4]),
            ];
            let d = draw(ShaderId::Flat, [255; 4], None, verts);
            let (_, stats) = render(&grid, std::slice::from_ref(&d), &textures);
            let geo = process_frame(std::slice::from_ref(&d), &grid).unwrap();
            let bins = bin_triangles(&geo.triangles, &grid);
            let ctx = RasterContext {
                grid: &grid,
                draws: std::slice::from_ref(&d),
                triangles: &geo.triangles,
                bins: &bins,
                textures: &textures,
            };
            let mut covered = 0;
            for t in 0..grid.tile_count() {
                let mut s = FrameStats::default();
                let tile = render_tile(&ctx, t, &mut DirectShading, &mut s);
                for (k, d) in tile.depth.iter().enumerate() {
                    if *d < 1.0 {
                        let x = tile.rect.x0 as usize + k % tile.rect.width() as usize;
                        let y = tile.rect.y0 as usize + k / tile.rect.width() as usize;
                        counts[y * 64 + x] += 1;
                        covered += 1;
                    }
                }
            }
            assert_eq!(covered, stats.fragments_shaded);
        }
        // The ring circumscribes the screen, so every pixel is inside the hull.
        assert!(counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn sample_texture_wraps() {
        let texels = (0..16).map(|i| [i as u8, 0, 0, 255]).collect();
        let t = Texture::inline(0, 4, 4, texels);
        assert_eq!(sample_texture(&t, 0.0, 0.0), t.texel(0, 0));
        assert_eq!(sample_texture(&t, 1.25, -0.25), t.texel(1, 3));
        assert_eq!(sample_texture(&t, -1.0, 2.0), t.texel(0, 0));
        let flat = Texture::inline(1, 2, 2, vec![[7, 8, 9, 255]; 4]);
        for (u, v) in [(0.3, 0.9), (-7.1, 3.3), (100.0, -0.01)] {
            assert_eq!(sample_texture(&flat, u, v), [7, 8, 9, 255]);
        }
    }

    #[test]
    fn modulate_rounds_half_up() {
        assert_eq!(modulate(255, 255), 255);
        assert_eq!(modulate(0, 255), 0);
        assert_eq!(modulate(200, 255), 200);
        // 1 * 128 / 255 = 0.502 -> 1
        assert_eq!(modulate(1, 128), 1);
        // 1 * 127 / 255 = 0.498 -> 0
        assert_eq!(modulate(1, 127), 0);
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                let exact = f64::from(a) * f64::from(b) / 255.0;
                assert_eq!(modulate(a, b), (exact + 0.5).floor() as u8);
            }
        }
    }

    #[test]
    fn textured_checker_quadrants() {
        // Nearest-neighbor oracle on a screen-aligned quad with uv over [0,1]^2.
        let grid = TileGrid::new(32, 32, 16);
        let mut textures = TextureSet::new(TextureIdentity::Version);
        let tex = Texture::from_pattern(5, 2, 2, TextureSource::Checker);
        textures.insert(tex.clone());
        let d = draw(
            ShaderId::Textured,
            [255; 4],
            Some(5),
            quad(32.0, 32.0, [0.0, 0.0, 32.0, 32.0], 0.5, [255; 4], true),
        );
        let (fb, stats) = render(&grid, &[d], &textures);
        for y in 0..32u32 {
            for x in 0..32u32 {
                let u = (x as f32 + 0.5) / 32.0;
                let v = (y as f32 + 0.5) / 32.0;
                let want = tex.texel((u * 2.0).floor() as u32, (v * 2.0).floor() as u32);
                assert_eq!(fb.pixel(x, y), want);
            }
        }
        assert_eq!(stats.texels_fetched, 32 * 32);
        assert_eq!(stats.bytes_read, 32 * 32 * 4);
    }

    #[test]
    fn tile_order_does_not_matter() {
        let grid = TileGrid::new(48, 40, 8);
        let draws = vec![
            draw(
                ShaderId::Gouraud,
                [255; 4],
                None,
                quad(
                    48.0,
                    40.0,
                    [3.0, 2.0, 40.0, 33.0],
                    0.4,
                    [90, 180, 30, 255],
                    false,
                ),
            ),
            draw(
                ShaderId::Flat,
                [10, 20, 30, 255],
                None,
                quad(48.0, 40.0, [10.0, 7.0, 47.0, 39.5], 0.6, [255; 4], false),
            ),
        ];
        let textures = TextureSet::default();
        let geo = process_frame(&draws, &grid).unwrap();
        let ctx = RasterContext {
            grid: &grid,
            draws: &draws,
            triangles: &geo.triangles,
            bins: &geo.bins,
            textures: &textures,
        };
        let mut forward = Framebuffer::new(48, 40);
        let mut backward = Framebuffer::new(48, 40);
        let mut s = FrameStats::default();
        for t in 0..grid.tile_count() {
            render_tile(&ctx, t, &mut DirectShading, &mut s).write_back(&mut forward);
        }
        for t in (0..grid.tile_count()).rev() {
            render_tile(&ctx, t, &mut DirectShading, &mut s).write_back(&mut backward);
        }
        assert_eq!(forward, backward);
    }

    #[test]
    fn ppm_layout() {
        let fb = Framebuffer::new(3, 2);
        let ppm = fb.encode_ppm();
        assert!(ppm.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(ppm.len(), b"P6\n3 2\n255\n".len() + 3 * 2 * 3);
        let mut fb = Framebuffer::new(4, 4);
        fb.color[2 * 4 + 3] = [1, 2, 3, 255];
        let rect = PixelRect {
            x0: 2,
            y0: 2,
            x1: 4,
            y1: 4,
        };
        let tile = fb.encode_rect_ppm(&rect);
        assert_eq!(&tile[..11], b"P6\n2 2\n255\n");
        assert_eq!(&tile[11..], &[0, 0, 0, 1, 2, 3, 0, 0, 0, 0, 0, 0]);
    }
}

//! Procedural animated scenes with closed-form redundancy ground truth.
//!
//! Every generator places its geometry so that the set of tiles whose inputs
//! repeat the previous frame is known exactly, and so that every tile whose
//! inputs change also changes at least one pixel. The expectation sidecar
//! therefore describes both signature equality and pixel equality.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{
    DrawCommand, Expectation, ExpectedFrame, Frame, FrameTrace, Matrix, ShaderId, Texture,
    TextureSource, Uniforms, Vertex, IDENTITY,
};
use crate::grid::TileGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SceneKind {
    Static,
    MovingQuad,
    Scroll,
    CameraPan,
    UniformChange,
}

impl SceneKind {
    pub const ALL: [SceneKind; 5] = [
        SceneKind::Static,
        SceneKind::MovingQuad,
        SceneKind::Scroll,
        SceneKind::CameraPan,
        SceneKind::UniformChange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SceneKind::Static => "static",
            SceneKind::MovingQuad => "moving_quad",
            SceneKind::Scroll => "scroll",
            SceneKind::CameraPan => "camera_pan",
            SceneKind::UniformChange => "uniform_change",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneKind {
    type Err = GenerateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| GenerateError::Spec(format!("unknown scene kind '{s}'")))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenerateError {
    #[error("a scene needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("{kind} scene does not fit a {tiles_x}x{tiles_y} tile grid")]
    GridTooSmall {
        kind: SceneKind,
        tiles_x: u32,
        tiles_y: u32,
    },
    #[error("invalid scene dimensions {width}x{height} with tile size {tile_size}")]
    Dimensions {
        width: u32,
        height: u32,
        tile_size: u32,
    },
    #[error("invalid generator spec: {0}")]
    Spec(String),
}

/// Parameters of a generated scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub frames: usize,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, frames: usize, seed: u64) -> Self {
        SceneSpec {
            kind,
            frames,
            seed,
            width: 256,
            height: 256,
            tile_size: 16,
        }
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn with_tile_size(mut self, tile_size: u32) -> Self {
        self.tile_size = tile_size;
        self
    }
}

/// `kind:frames[:seed=N][:size=WxH]`, e.g. `moving_quad:30:seed=7`.
impl FromStr for SceneSpec {
    type Err = GenerateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        let kind: SceneKind = parts.next().unwrap_or_default().parse()?;
        let frames = parts
            .next()
            .ok_or_else(|| GenerateError::Spec(format!("'{s}' lacks a frame count")))?;
        let frames: usize = frames
            .parse()
            .map_err(|_| GenerateError::Spec(format!("invalid frame count '{frames}'")))?;
        let mut spec = SceneSpec::new(kind, frames, 0);
        for part in parts {
            let bad = || GenerateError::Spec(format!("invalid generator option '{part}'"));
            let (key, value) = part.split_once('=').ok_or_else(bad)?;
            match key {
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                "size" => {
                    let (w, h) = value.split_once('x').ok_or_else(bad)?;
                    spec.width = w.parse().map_err(|_| bad())?;
                    spec.height = h.parse().map_err(|_| bad())?;
                }
                _ => return Err(bad()),
            }
        }
        Ok(spec)
    }
}

impl fmt::Display for SceneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:seed={}:size={}x{}",
            self.kind, self.frames, self.seed, self.width, self.height
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedScene {
    pub trace: FrameTrace,
    pub expectation: Expectation,
}

/// Pixel-space geometry helpers for a fixed viewport.
struct Canvas {
    width: f32,
    height: f32,
    grid: TileGrid,
}

impl Canvas {
    fn ndc(&self, px: f32, py: f32) -> (f32, f32) {
        (2.0 * px / self.width - 1.0, 1.0 - 2.0 * py / self.height)
    }

    /// Two triangles covering `[x0, x1) x [y0, y1)`, corner colors in
    /// (top-left, top-right, bottom-right, bottom-left) order.
    fn rect(
        &self,
        r: [u32; 4],
        z: f32,
        colors: [[u8; 4]; 4],
        uvs: Option<[[f32; 2]; 4]>,
    ) -> Vec<Vertex> {
        let [x0, y0, x1, y1] = r.map(|v| v as f32);
        let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
        let uvs = uvs.unwrap_or([[0.0; 2]; 4]);
        let vert = |i: usize| {
            let (x, y) = self.ndc(corners[i].0, corners[i].1);
            Vertex {
                position: [x, y, z],
                color: colors[i],
                uv: uvs[i],
            }
        };
        [0, 1, 2, 0, 2, 3].into_iter().map(vert).collect()
    }

    fn translate(&self, dx: f32, dy: f32) -> Matrix {
        let mut m = IDENTITY;
        m[3] = 2.0 * dx / self.width;
        m[7] = -2.0 * dy / self.height;
        m
    }

    /// Tiles containing at least one pixel of the integer rectangle.
    fn tiles_of(&self, r: [u32; 4]) -> impl Iterator<Item = usize> + '_ {
        let ts = self.grid.tile_size;
        let [x0, y0, x1, y1] = r;
        (y0 / ts..=(y1 - 1) / ts)
            .flat_map(move |ty| (x0 / ts..=(x1 - 1) / ts).map(move |tx| self.grid.index(tx, ty)))
    }
}

fn solid(c: [u8; 4]) -> [[u8; 4]; 4] {
    [c; 4]
}

fn draw(
    shader: ShaderId,
    matrix: Matrix,
    tint: [u8; 4],
    texture_id: Option<u32>,
    vertices: Vec<Vertex>,
) -> DrawCommand {
    DrawCommand {
        draw_id: 0,
        shader,
        uniforms: Uniforms {
            matrix,
            tint,
            texture_id,
        },
        vertices,
    }
}

fn frame_of(draws: Vec<DrawCommand>) -> Frame {
    let draws = draws
        .into_iter()
        .enumerate()
        .map(|(i, mut d)| {
            d.draw_id = i as u32;
            d
        })
        .collect();
    Frame {
        texture_updates: Vec::new(),
        draws,
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [u8; 4] {
    [rng.random(), rng.random(), rng.random(), 255]
}

/// Random integer rectangle of at least `min` pixels per side, inside the screen.
fn random_rect(rng: &mut ChaCha8Rng, w: u32, h: u32, min: u32, max: u32) -> [u32; 4] {
    let side = |rng: &mut ChaCha8Rng, limit: u32| {
        let hi = max.max(min).min(limit);
        rng.random_range(min.min(hi)..=hi)
    };
    let rw = side(rng, w);
    let rh = side(rng, h);
    let x0 = rng.random_range(0..=w - rw);
    let y0 = rng.random_range(0..=h - rh);
    [x0, y0, x0 + rw, y0 + rh]
}

/// Builds the scene and its redundancy expectation; a pure function of `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<GeneratedScene, GenerateError> {
    if spec.frames < 2 {
        return Err(GenerateError::TooFewFrames(spec.frames));
    }
    if spec.tile_size < 4 || spec.width < spec.tile_size || spec.height < spec.tile_size {
        return Err(GenerateError::Dimensions {
            width: spec.width,
            height: spec.height,
            tile_size: spec.tile_size,
        });
    }
    let grid = TileGrid::new(spec.width, spec.height, spec.tile_size);
    let canvas = Canvas {
        width: spec.width as f32,
        height: spec.height as f32,
        grid,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(
        spec.seed ^ (spec.kind as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let (textures, frames, non_redundant) = match spec.kind {
        SceneKind::Static => static_scene(spec, &canvas, &mut rng),
        SceneKind::MovingQuad => moving_quad(spec, &canvas, &mut rng)?,
        SceneKind::Scroll => scroll(spec, &canvas, &mut rng)?,
        SceneKind::CameraPan => camera_pan(spec, &canvas, &mut rng)?,
        SceneKind::UniformChange => uniform_change(spec, &canvas, &mut rng),
    };
    let expectation = Expectation {
        frames: non_redundant
            .into_iter()
            .enumerate()
            .map(|(i, changed)| ExpectedFrame {
                frame: i + 1,
                redundant: (0..grid.tile_count())
                    .filter(|t| !changed.contains(t))
                    .collect(),
            })
            .collect(),
    };
    Ok(GeneratedScene {
        trace: FrameTrace {
            width: spec.width,
            height: spec.height,
            tile_size: spec.tile_size,
            textures,
            frames,
        },
        expectation,
    })
}

/// Textures, frames, and for every frame after the first the set of tiles
/// that differ from the preceding frame.
type Built = (Vec<Texture>, Vec<Frame>, Vec<BTreeSet<usize>>);

/// A UI-like screen: flat background and panels, one gradient bar, one icon.
fn static_scene(spec: &SceneSpec, c: &Canvas, rng: &mut ChaCha8Rng) -> Built {
    let (w, h) = (spec.width, spec.height);
    let white = [255; 4];
    let mut draws = vec![draw(
        ShaderId::Flat,
        IDENTITY,
        [24, 28, 36, 255],
        None,
        c.rect([0, 0, w, h], 0.9, solid(white), None),
    )];
    let panels = rng.random_range(3..=5);
    for i in 0..panels {
        let r = random_rect(rng, w, h, 8, (w.min(h) / 2).max(8));
        let tint = random_color(rng);
        let z = 0.5 + 0.02 * i as f32;
        draws.push(draw(
            ShaderId::Flat,
            IDENTITY,
            tint,
            None,
            c.rect(r, z, solid(white), None),
        ));
    }
    let bar = random_rect(rng, w, h, 4, (w.min(h) / 4).max(4));
    draws.push(draw(
        ShaderId::Gouraud,
        IDENTITY,
        white,
        None,
        c.rect(
            bar,
            0.3,
            [
                [200, 40, 40, 255],
                [40, 200, 40, 255],
                [40, 40, 200, 255],
                [200, 200, 40, 255],
            ],
            None,
        ),
    ));
    let icon = random_rect(rng, w, h, 4, (w.min(h) / 8).max(4));
    draws.push(draw(
        ShaderId::Textured,
        IDENTITY,
        white,
        Some(0),
        c.rect(
            icon,
            0.2,
            solid(white),
            Some([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        ),
    ));
    let texture = Texture::from_pattern(0, 16, 16, TextureSource::Checker);
    let frame = frame_of(draws);
    (
        vec![texture],
        vec![frame; spec.frames],
        vec![BTreeSet::new(); spec.frames - 1],
    )
}

/// Ping-pong tile positions along one axis, moving one tile per frame.
fn ping_pong(rng: &mut ChaCha8Rng, frames: usize, max_pos: u32) -> Vec<u32> {
    let mut pos = rng.random_range(0..=max_pos) as i64;
    let mut dir: i64 = if rng.random_bool(0.5) { 1 } else { -1 };
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        out.push(pos as u32);
        if pos + dir < 0 || pos + dir > i64::from(max_pos) {
            dir = -dir;
        }
        pos += dir;
    }
    out
}

/// A gradient quad of about a tenth of the screen sliding over a flat background.
fn moving_quad(spec: &SceneSpec, c: &Canvas, rng: &mut ChaCha8Rng) -> Result<Built, GenerateError> {
    let g = c.grid;
    let side = ((f64::from(g.tiles_x.min(g.tiles_y)) * 0.1f64.sqrt()).round() as u32).max(1);
    if g.tiles_x <= side || g.tiles_y < side {
        return Err(GenerateError::GridTooSmall {
            kind: spec.kind,
            tiles_x: g.tiles_x,
            tiles_y: g.tiles_y,
        });
    }
    let ts = g.tile_size;
    let inset = (ts / 8).max(1);
    let row = rng.random_range(0..=g.tiles_y - side);
    let cols = ping_pong(rng, spec.frames, g.tiles_x - side);
    // Inset keeps edges off tile boundaries; the gradient makes any shift visible.
    let local = [
        inset,
        row * ts + inset,
        side * ts - inset,
        (row + side) * ts - inset,
    ];
    let left = [40, 200, 60, 255];
    let right = [240, 60, 200, 255];
    let quad_vertices = c.rect(local, 0.5, [left, right, right, left], None);
    let background = c.rect([0, 0, spec.width, spec.height], 0.9, solid([255; 4]), None);

    let frames = cols
        .iter()
        .map(|&col| {
            frame_of(vec![
                draw(
                    ShaderId::Flat,
                    IDENTITY,
                    [20, 20, 40, 255],
                    None,
                    background.clone(),
                ),
                draw(
                    ShaderId::Gouraud,
                    c.translate((col * ts) as f32, 0.0),
                    [255; 4],
                    None,
                    quad_vertices.clone(),
                ),
            ])
        })
        .collect();
    let footprint = |col: u32| [col * ts, row * ts, (col + side) * ts, (row + side) * ts];
    let changed = cols
        .windows(2)
        .map(|pair| {
            c.tiles_of(footprint(pair[0]))
                .chain(c.tiles_of(footprint(pair[1])))
                .collect()
        })
        .collect();
    Ok((Vec::new(), frames, changed))
}

/// A static header over a list that scrolls up by whole tile rows on some frames.
fn scroll(spec: &SceneSpec, c: &Canvas, rng: &mut ChaCha8Rng) -> Result<Built, GenerateError> {
    let g = c.grid;
    if g.tiles_y < 2
        || !g.width.is_multiple_of(g.tile_size)
        || !g.height.is_multiple_of(g.tile_size)
    {
        return Err(GenerateError::GridTooSmall {
            kind: spec.kind,
            tiles_x: g.tiles_x,
            tiles_y: g.tiles_y,
        });
    }
    let ts = g.tile_size;
    let header_rows = (g.tiles_y / 8).max(1);
    let list_rows = g.tiles_y - header_rows;
    let width = spec.width;

    let mut offsets = vec![0u32];
    for n in 1..spec.frames {
        let step = n == 1 || rng.random_bool(0.6);
        offsets.push(offsets[n - 1] + u32::from(step));
    }
    let item_count = list_rows + offsets[spec.frames - 1];
    // Consecutive items sit in disjoint red bands so every scrolled pixel changes.
    let items: Vec<([u8; 4], [u8; 4])> = (0..item_count)
        .map(|i| {
            let band = if i % 2 == 0 { 0u8..=100 } else { 155u8..=255 };
            let l = [
                rng.random_range(band.clone()),
                rng.random(),
                rng.random(),
                255,
            ];
            let r = [rng.random_range(band), rng.random(), rng.random(), 255];
            (l, r)
        })
        .collect();

    let header = c.rect([0, 0, width, header_rows * ts], 0.5, solid([255; 4]), None);
    let logo_size = (header_rows * ts / 2).max(2);
    let logo_x = rng.random_range(0..=width - logo_size);
    let logo = c.rect(
        [
            logo_x,
            (header_rows * ts - logo_size) / 2,
            logo_x + logo_size,
            (header_rows * ts + logo_size) / 2,
        ],
        0.4,
        solid([255; 4]),
        Some([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
    );
    let header_tint = random_color(rng);

    let frames = offsets
        .iter()
        .map(|&offset| {
            let mut draws = vec![
                draw(ShaderId::Flat, IDENTITY, header_tint, None, header.clone()),
                draw(
                    ShaderId::Textured,
                    IDENTITY,
                    [255; 4],
                    Some(0),
                    logo.clone(),
                ),
            ];
            let m = c.translate(0.0, -((offset * ts) as f32));
            for i in offset..offset + list_rows {
                let (l, r) = items[i as usize];
                let y0 = (header_rows + i) * ts;
                draws.push(draw(
                    ShaderId::Gouraud,
                    m,
                    [255; 4],
                    None,
                    c.rect([0, y0, width, y0 + ts], 0.5, [l, r, r, l], None),
                ));
            }
            frame_of(draws)
        })
        .collect();
    let list_tiles: BTreeSet<usize> = c
        .tiles_of([0, header_rows * ts, width, spec.height])
        .collect();
    let changed = offsets
        .windows(2)
        .map(|pair| {
            if pair[0] == pair[1] {
                BTreeSet::new()
            } else {
                list_tiles.clone()
            }
        })
        .collect();
    let texture = Texture::from_pattern(0, 8, 8, TextureSource::Gradient);
    Ok((vec![texture], frames, changed))
}

const PAN_NEAR: f64 = 0.1;
const PAN_FAR: f64 = 100.0;
const PAN_EYE_HEIGHT: f64 = 1.0;
const PAN_GROUND_DEPTH: f64 = 40.0;

/// A perspective camera translating sideways over a textured ground plane
/// that reaches behind the eye; the sky above the far edge is left untouched.
fn camera_pan(spec: &SceneSpec, c: &Canvas, rng: &mut ChaCha8Rng) -> Result<Built, GenerateError> {
    let g = c.grid;
    let aspect = f64::from(spec.width) / f64::from(spec.height);
    // 90 degree vertical field of view: focal factor 1.
    let focal = 1.0;
    let far_edge_y =
        f64::from(spec.height) * 0.5 * (1.0 + focal * PAN_EYE_HEIGHT / PAN_GROUND_DEPTH);
    // First pixel row whose center lies on or below the far edge.
    let first_ground_row = (far_edge_y - 0.5).ceil() as u32;
    let ground_tile_row = first_ground_row / g.tile_size;
    if ground_tile_row == 0 || first_ground_row >= spec.height {
        return Err(GenerateError::GridTooSmall {
            kind: spec.kind,
            tiles_x: g.tiles_x,
            tiles_y: g.tiles_y,
        });
    }

    let projection = |cam_x: f64| -> Matrix {
        let a = PAN_FAR / (PAN_NEAR - PAN_FAR);
        let b = PAN_NEAR * PAN_FAR / (PAN_NEAR - PAN_FAR);
        let sx = focal / aspect;
        let m: [f64; 16] = [
            sx,
            0.0,
            0.0,
            -sx * cam_x, //
            0.0,
            focal,
            0.0,
            0.0, //
            0.0,
            0.0,
            a,
            b, //
            0.0,
            0.0,
            -1.0,
            0.0,
        ];
        m.map(|v| v as f32)
    };

    let half_width = 1000.0f32;
    let (near_z, far_z) = (10.0f32, -(PAN_GROUND_DEPTH as f32));
    let y = -(PAN_EYE_HEIGHT as f32);
    // Eight texels per world unit on a 64-texel texture.
    let uv = |x: f32, z: f32| [x / 8.0, z / 8.0];
    let corner = |x: f32, z: f32| Vertex {
        position: [x, y, z],
        color: [255; 4],
        uv: uv(x, z),
    };
    let (nl, nr, fr, fl) = (
        corner(-half_width, near_z),
        corner(half_width, near_z),
        corner(half_width, far_z),
        corner(-half_width, far_z),
    );
    let ground = vec![nl, nr, fr, nl, fr, fl];
    let sky = c.rect(
        [0, 0, spec.width, ground_tile_row * g.tile_size],
        0.99,
        [
            [90, 140, 220, 255],
            [90, 140, 220, 255],
            [200, 220, 250, 255],
            [200, 220, 250, 255],
        ],
        None,
    );

    let mut cam_x = rng.random_range(-5.0..5.0f64);
    let mut frames = Vec::with_capacity(spec.frames);
    for _ in 0..spec.frames {
        frames.push(frame_of(vec![
            draw(ShaderId::Gouraud, IDENTITY, [255; 4], None, sky.clone()),
            draw(
                ShaderId::Textured,
                projection(cam_x),
                [255; 4],
                Some(0),
                ground.clone(),
            ),
        ]));
        cam_x += rng.random_range(0.3..0.7f64);
    }
    let ground_tiles: BTreeSet<usize> = c
        .tiles_of([0, first_ground_row, spec.width, spec.height])
        .collect();
    let texture = Texture::from_pattern(0, 64, 64, TextureSource::Noise(rng.random()));
    Ok((vec![texture], frames, vec![ground_tiles; spec.frames - 1]))
}

/// Fixed rectangles whose tint uniforms change every frame over empty space.
fn uniform_change(spec: &SceneSpec, c: &Canvas, rng: &mut ChaCha8Rng) -> Built {
    let (w, h) = (spec.width, spec.height);
    let count = rng.random_range(3..=5);
    let mut shapes = Vec::new();
    for _ in 0..count {
        let r = random_rect(rng, w, h, 4, (w.min(h) / 3).max(4));
        let shader = if rng.random_bool(0.5) {
            ShaderId::Flat
        } else {
            ShaderId::Gouraud
        };
        // Vertex colors >= 128 so any tint step is visible after modulation.
        let mut colors = [[255u8; 4]; 4];
        if shader == ShaderId::Gouraud {
            for col in &mut colors {
                *col = [
                    rng.random_range(128..=255),
                    rng.random_range(128..=255),
                    rng.random_range(128..=255),
                    255,
                ];
            }
        }
        let base: [u8; 3] = [
            rng.random_range(0..192),
            rng.random_range(0..192),
            rng.random_range(0..192),
        ];
        shapes.push((r, shader, colors, base));
    }
    let tint_at = |base: [u8; 3], n: usize| -> [u8; 4] {
        let ch = |b: u8| (64 + (u32::from(b) + 37 * n as u32) % 192) as u8;
        [ch(base[0]), ch(base[1]), ch(base[2]), 255]
    };
    let frames = (0..spec.frames)
        .map(|n| {
            frame_of(
                shapes
                    .iter()
                    .enumerate()
                    .map(|(i, (r, shader, colors, base))| {
                        draw(
                            *shader,
                            IDENTITY,
                            tint_at(*base, n),
                            None,
                            c.rect(*r, 0.3 + 0.1 * i as f32, *colors, None),
                        )
                    })
                    .collect(),
            )
        })
        .collect();
    let covered: BTreeSet<usize> = shapes.iter().flat_map(|(r, ..)| c.tiles_of(*r)).collect();
    (Vec::new(), frames, vec![covered; spec.frames - 1])
}

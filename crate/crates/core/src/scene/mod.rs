//! Animated workloads: the trace data model, its text format, synthetic
//! scene generators and the redundant-tile expectation sidecar.

mod expect;
mod generate;
mod trace;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crc::{crc32_sliced, CrcTables};
use crate::grid::TileGrid;

pub use expect::{Expectation, ExpectationError, ExpectedFrame};
pub use generate::{generate_scene, GenerateError, GeneratedScene, SceneKind, SceneSpec};
pub use trace::{parse_trace, TraceError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum ShaderId {
    Flat = 0,
    Gouraud = 1,
    Textured = 2,
}

impl ShaderId {
    pub fn as_str(self) -> &'static str {
        match self {
            ShaderId::Flat => "flat",
            ShaderId::Gouraud => "gouraud",
            ShaderId::Textured => "textured",
        }
    }
}

impl FromStr for ShaderId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "flat" => Ok(ShaderId::Flat),
            "gouraud" => Ok(ShaderId::Gouraud),
            "textured" => Ok(ShaderId::Textured),
            _ => Err(format!("unknown shader '{s}'")),
        }
    }
}

impl fmt::Display for ShaderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Row-major 4x4 matrix; clip position = `M * [x, y, z, 1]^T`.
pub type Matrix = [f32; 16];

pub const IDENTITY: Matrix = [
    1.0, 0.0, 0.0, 0.0, //
    0.0, 1.0, 0.0, 0.0, //
    0.0, 0.0, 1.0, 0.0, //
    0.0, 0.0, 0.0, 1.0,
];

#[derive(Clone, Debug, PartialEq)]
pub struct Uniforms {
    pub matrix: Matrix,
    pub tint: [u8; 4],
    pub texture_id: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vertex {
    pub position: [f32; 3],
    pub color: [u8; 4],
    pub uv: [f32; 2],
}

impl Vertex {
    pub fn new(position: [f32; 3], color: [u8; 4]) -> Self {
        Vertex {
            position,
            color,
            uv: [0.0, 0.0],
        }
    }

    pub fn with_uv(mut self, u: f32, v: f32) -> Self {
        self.uv = [u, v];
        self
    }
}

/// One draw call: a triangle list under a single shader and uniform set.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawCommand {
    /// Submission sequence number within the frame.
    pub draw_id: u32,
    pub shader: ShaderId,
    pub uniforms: Uniforms,
    pub vertices: Vec<Vertex>,
}

impl DrawCommand {
    pub fn triangle_count(&self) -> usize {
        self.vertices.len() / 3
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextureSource {
    Checker,
    Gradient,
    Noise(u64),
    Inline,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Texture {
    pub id: u32,
    pub width: u32,
    pub height: u32,
    pub source: TextureSource,
    /// RGBA8, row-major.
    pub texels: Vec<[u8; 4]>,
    /// Bumped whenever the texel content changes between frames.
    pub version: u32,
}

impl Texture {
    /// Generates texels for a named pattern.
    pub fn from_pattern(id: u32, width: u32, height: u32, source: TextureSource) -> Self {
        let (w, h) = (width as usize, height as usize);
        let texels = match source {
            TextureSource::Checker => {
                let cell_w = (w / 8).max(1);
                let cell_h = (h / 8).max(1);
                (0..w * h)
                    .map(|i| {
                        let (x, y) = (i % w, i / w);
                        if (x / cell_w + y / cell_h) % 2 == 0 {
                            [255, 255, 255, 255]
                        } else {
                            [0, 0, 0, 255]
                        }
                    })
                    .collect()
            }
            TextureSource::Gradient => (0..w * h)
                .map(|i| {
                    let (x, y) = (i % w, i / w);
                    let r = if w > 1 { x * 255 / (w - 1) } else { 0 };
                    let g = if h > 1 { y * 255 / (h - 1) } else { 0 };
                    [r as u8, g as u8, 128, 255]
                })
                .collect(),
            TextureSource::Noise(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..w * h)
                    .map(|_| {
                        let v: u32 = rng.random();
                        let [r, g, b, _] = v.to_le_bytes();
                        [r, g, b, 255]
                    })
                    .collect()
            }
            TextureSource::Inline => vec![[0, 0, 0, 255]; w * h],
        };
        Texture {
            id,
            width,
            height,
            source,
            texels,
            version: 1,
        }
    }

    pub fn inline(id: u32, width: u32, height: u32, texels: Vec<[u8; 4]>) -> Self {
        assert_eq!(texels.len(), width as usize * height as usize);
        Texture {
            id,
            width,
            height,
            source: TextureSource::Inline,
            texels,
            version: 1,
        }
    }

    pub fn texel(&self, x: u32, y: u32) -> [u8; 4] {
        self.texels[y as usize * self.width as usize + x as usize]
    }

    pub fn texel_bytes(&self) -> Vec<u8> {
        self.texels.iter().flatten().copied().collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Frame {
    /// Textures (re)defined at the start of this frame.
    pub texture_updates: Vec<Texture>,
    pub draws: Vec<DrawCommand>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameTrace {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub textures: Vec<Texture>,
    pub frames: Vec<Frame>,
}

impl FrameTrace {
    pub fn grid(&self) -> TileGrid {
        TileGrid::new(self.width, self.height, self.tile_size)
    }
}

/// How a texture's identity is folded into tile signatures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TextureIdentity {
    /// Texture id plus its version counter.
    #[default]
    Version,
    /// Texture id plus a CRC of the texel content.
    Content,
}

/// The textures live during one frame of a trace.
#[derive(Clone, Debug, Default)]
pub struct TextureSet {
    mode: TextureIdentity,
    entries: BTreeMap<u32, (Arc<Texture>, u32)>,
}

impl TextureSet {
    pub fn new(mode: TextureIdentity) -> Self {
        TextureSet {
            mode,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, texture: Texture) {
        let tag = match self.mode {
            TextureIdentity::Version => texture.version,
            TextureIdentity::Content => crc32_sliced(&texture.texel_bytes(), content_tables()).0,
        };
        self.entries.insert(texture.id, (Arc::new(texture), tag));
    }

    pub fn get(&self, id: u32) -> Option<&Texture> {
        self.entries.get(&id).map(|(t, _)| t.as_ref())
    }

    /// `(id, tag)` words serialized into tile inputs.
    pub fn identity(&self, id: u32) -> Option<(u32, u32)> {
        self.entries.get(&id).map(|(_, tag)| (id, *tag))
    }
}

fn content_tables() -> &'static CrcTables {
    static TABLES: std::sync::OnceLock<CrcTables> = std::sync::OnceLock::new();
    TABLES.get_or_init(|| crate::crc::build_tables(8).expect("slice-by-8"))
}

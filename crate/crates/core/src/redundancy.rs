//! Frame orchestration for the redundancy-elimination techniques.
//!
//! * `None` renders and writes back every tile.
//! * `Re` (Rendering Elimination) signs each tile's inputs after binning and
//!   skips raster, shading and writeback for tiles whose signature matches the
//!   previous frame.
//! * `Te` (Transaction Elimination) renders everything but suppresses the
//!   writeback of tiles whose output CRC matches the previous frame.
//! * `Memo` renders everything, looking fragments up in an LRU cache keyed by
//!   their exact shading inputs.
//! * `ReTe` applies the RE skip first and TE to the tiles that still render.

use std::collections::BTreeSet;
use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;

use lru::LruCache;
use rayon::prelude::*;
use thiserror::Error;

use crate::cost::FrameStats;
use crate::crc::{CrcEngine, CrcImpl, CrcValue};
use crate::geometry::{process_frame, GeometryError};
use crate::grid::TileGrid;
use crate::raster::{
    render_tile, shade_counted, DirectShading, FragmentShading, Framebuffer, RasterContext,
    TileBuffer, Varyings,
};
use crate::scene::{
    DrawCommand, Frame, FrameTrace, ShaderId, Texture, TextureIdentity, TextureSet,
};
use crate::signature::SignatureUnit;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Technique {
    #[default]
    None,
    Re,
    Te,
    Memo,
    ReTe,
}

impl Technique {
    pub const ALL: [Technique; 5] = [
        Technique::None,
        Technique::Re,
        Technique::Te,
        Technique::Memo,
        Technique::ReTe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Technique::None => "none",
            Technique::Re => "re",
            Technique::Te => "te",
            Technique::Memo => "memo",
            Technique::ReTe => "re+te",
        }
    }

    pub fn uses_signatures(self) -> bool {
        matches!(self, Technique::Re | Technique::ReTe)
    }

    pub fn uses_te(self) -> bool {
        matches!(self, Technique::Te | Technique::ReTe)
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Technique {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Technique::None),
            "re" => Ok(Technique::Re),
            "te" => Ok(Technique::Te),
            "memo" => Ok(Technique::Memo),
            "re+te" | "re_te" => Ok(Technique::ReTe),
            other => Err(format!(
                "unknown technique '{other}' (expected none, re, te, memo or re+te)"
            )),
        }
    }
}

pub const DEFAULT_MEMO_CAPACITY: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TechniqueConfig {
    pub mode: Technique,
    pub verify: bool,
    pub memo_capacity: usize,
}

impl TechniqueConfig {
    pub fn new(mode: Technique) -> Self {
        TechniqueConfig {
            mode,
            verify: false,
            memo_capacity: DEFAULT_MEMO_CAPACITY,
        }
    }

    pub fn with_verify(mut self, verify: bool) -> Self {
        self.verify = verify;
        self
    }
}

/// Implementation knobs that must not change any output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimOptions {
    pub crc: CrcImpl,
    pub threads: usize,
    pub texture_identity: TextureIdentity,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            crc: CrcImpl::default(),
            threads: 1,
            texture_identity: TextureIdentity::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("memo capacity must be at least 1")]
    MemoCapacity,
    #[error("thread count must be at least 1")]
    Threads,
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("frame {frame}: {source}")]
    Geometry {
        frame: usize,
        #[source]
        source: GeometryError,
    },
}

/// Per-tile CRC of the last written color bytes.
#[derive(Clone, Debug)]
pub struct TeState {
    crcs: Vec<CrcValue>,
    valid: Vec<bool>,
}

impl TeState {
    pub fn new(tile_count: usize) -> Self {
        TeState {
            crcs: vec![CrcValue(0); tile_count],
            valid: vec![false; tile_count],
        }
    }

    /// Records `crc` for the tile and reports whether it repeats the stored one.
    pub fn check_and_update(&mut self, tile: usize, crc: CrcValue) -> bool {
        let same = self.valid[tile] && self.crcs[tile] == crc;
        self.crcs[tile] = crc;
        self.valid[tile] = true;
        same
    }
}

/// Exact fragment shading inputs, varyings as raw bit patterns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MemoKey {
    pub shader: u8,
    pub matrix: [u32; 16],
    pub tint: [u8; 4],
    pub texture: (u32, u32),
    pub varyings: [u32; 6],
}

/// Bytes hashed per fragment: the full interpolated color and uv set.
pub const MEMO_FRAGMENT_BYTES: u64 = 24;

/// Per-draw prefix hashed once per frame: shader, matrix, tint, texture identity.
pub const MEMO_DRAW_BYTES: u64 = 1 + 64 + 4 + 8;

impl MemoKey {
    pub fn new(draw: &DrawCommand, textures: &TextureSet, varyings: &Varyings) -> Self {
        let texture = match (draw.shader, draw.uniforms.texture_id) {
            (ShaderId::Textured, Some(id)) => textures.identity(id).unwrap_or((id, 0)),
            _ => (0, 0),
        };
        let [r, g, b, a] = varyings.color.map(f32::to_bits);
        let [u, v] = varyings.uv.map(f32::to_bits);
        MemoKey {
            shader: draw.shader as u8,
            matrix: draw.uniforms.matrix.map(f32::to_bits),
            tint: draw.uniforms.tint,
            texture,
            varyings: [r, g, b, a, u, v],
        }
    }
}

/// Fixed-capacity LRU map from fragment inputs to shaded color.
pub struct MemoCache {
    entries: LruCache<MemoKey, [u8; 4]>,
}

impl MemoCache {
    pub fn new(capacity: usize) -> Result<Self, SimError> {
        let cap = NonZeroUsize::new(capacity).ok_or(SimError::MemoCapacity)?;
        Ok(MemoCache {
            entries: LruCache::new(cap),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.entries.cap().get()
    }
}

/// Returns the cached color on a hit; otherwise shades, inserts and evicts
/// the least recently used entry if the cache is full.
pub fn memo_lookup_or_shade(
    cache: &mut MemoCache,
    key: MemoKey,
    shade: impl FnOnce() -> [u8; 4],
) -> ([u8; 4], bool) {
    if let Some(&c) = cache.entries.get(&key) {
        return (c, true);
    }
    let c = shade();
    cache.entries.put(key, c);
    (c, false)
}

struct MemoShading<'a> {
    cache: &'a mut MemoCache,
    textures: &'a TextureSet,
    draw_hashed: &'a mut [bool],
}

impl FragmentShading for MemoShading<'_> {
    fn shade(
        &mut self,
        draw_index: u32,
        draw: &DrawCommand,
        varyings: &Varyings,
        texture: Option<&Texture>,
        stats: &mut FrameStats,
    ) -> [u8; 4] {
        let hashed = &mut self.draw_hashed[draw_index as usize];
        if !*hashed {
            *hashed = true;
            stats.crc_bytes_hashed += MEMO_DRAW_BYTES;
        }
        stats.crc_bytes_hashed += MEMO_FRAGMENT_BYTES;
        stats.memo_lookups += 1;
        let key = MemoKey::new(draw, self.textures, varyings);
        let (color, hit) = memo_lookup_or_shade(self.cache, key, || {
            shade_counted(draw, varyings, texture, stats)
        });
        if hit {
            stats.memo_hits += 1;
        }
        color
    }
}

/// Pixel comparison of a technique's frame against the baseline.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub frame: usize,
    /// Skipped tiles whose pixels differ from the baseline.
    pub collisions: Vec<usize>,
    /// Rendered tiles whose pixels differ from the baseline.
    pub mismatches: Vec<usize>,
    /// Skipped tiles whose shadow render differs from the retained pixels.
    pub containment_failures: Vec<usize>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.collisions.is_empty()
            && self.mismatches.is_empty()
            && self.containment_failures.is_empty()
    }
}

/// Compares two images tile by tile; differing tiles are collisions when skipped.
pub fn verify_frame(
    frame: usize,
    grid: &TileGrid,
    output: &Framebuffer,
    baseline: &Framebuffer,
    skipped: &[bool],
) -> VerifyReport {
    let mut report = VerifyReport {
        frame,
        ..VerifyReport::default()
    };
    if output.color == baseline.color {
        return report;
    }
    for t in 0..grid.tile_count() {
        let rect = grid.tile_rect(t);
        if output.rect_color_bytes(&rect) != baseline.rect_color_bytes(&rect) {
            if skipped.get(t).copied().unwrap_or(false) {
                report.collisions.push(t);
            } else {
                report.mismatches.push(t);
            }
        }
    }
    report
}

/// What happened in one frame.
#[derive(Clone, Debug, Default)]
pub struct FrameOutcome {
    pub frame: usize,
    pub stats: FrameStats,
    /// Per-tile RE skip decisions; all false for techniques without signatures.
    pub skipped: Vec<bool>,
    /// Per-tile input signatures and lengths; empty without signatures.
    pub signatures: Vec<(CrcValue, u64)>,
    pub verify: Option<VerifyReport>,
}

impl FrameOutcome {
    pub fn fully_skipped(&self) -> bool {
        !self.skipped.is_empty() && self.skipped.iter().all(|&s| s)
    }
}

/// Runs a trace frame by frame under one technique.
pub struct Simulator {
    grid: TileGrid,
    config: TechniqueConfig,
    engine: CrcEngine,
    textures: TextureSet,
    framebuffer: Framebuffer,
    baseline: Option<Framebuffer>,
    signatures: Option<SignatureUnit>,
    te: Option<TeState>,
    memo: Option<MemoCache>,
    pool: rayon::ThreadPool,
    frame: usize,
    tamper: BTreeSet<(usize, usize)>,
}

impl Simulator {
    pub fn new(
        grid: TileGrid,
        textures: &[Texture],
        config: TechniqueConfig,
        options: SimOptions,
    ) -> Result<Self, SimError> {
        if options.threads == 0 {
            return Err(SimError::Threads);
        }
        let engine = CrcEngine::new(options.crc);
        let mut set = TextureSet::new(options.texture_identity);
        for t in textures {
            set.insert(t.clone());
        }
        let tiles = grid.tile_count();
        let memo = match config.mode {
            Technique::Memo => Some(MemoCache::new(config.memo_capacity)?),
            _ => None,
        };
        Ok(Simulator {
            grid,
            config,
            textures: set,
            framebuffer: Framebuffer::new(grid.width, grid.height),
            baseline: config
                .verify
                .then(|| Framebuffer::new(grid.width, grid.height)),
            signatures: config
                .mode
                .uses_signatures()
                .then(|| SignatureUnit::new(engine.clone(), tiles)),
            te: config.mode.uses_te().then(|| TeState::new(tiles)),
            memo,
            pool: rayon::ThreadPoolBuilder::new()
                .num_threads(options.threads)
                .build()?,
            engine,
            frame: 0,
            tamper: BTreeSet::new(),
        })
    }

    pub fn for_trace(
        trace: &FrameTrace,
        config: TechniqueConfig,
        options: SimOptions,
    ) -> Result<Self, SimError> {
        Simulator::new(trace.grid(), &trace.textures, config, options)
    }

    pub fn grid(&self) -> &TileGrid {
        &self.grid
    }

    pub fn config(&self) -> &TechniqueConfig {
        &self.config
    }

    pub fn framebuffer(&self) -> &Framebuffer {
        &self.framebuffer
    }

    /// The NONE-mode reference image, present in verify mode.
    pub fn baseline(&self) -> Option<&Framebuffer> {
        self.baseline.as_ref()
    }

    pub fn memo(&self) -> Option<&MemoCache> {
        self.memo.as_ref()
    }

    /// Signature storage in bytes, zero without RE.
    pub fn signature_footprint(&self) -> u64 {
        self.signatures
            .as_ref()
            .map_or(0, |s| s.buffer().footprint_bytes())
    }

    /// Test hook: forces `tile` to be skipped in `frame` whatever its inputs.
    pub fn force_skip(&mut self, frame: usize, tile: usize) {
        self.tamper.insert((frame, tile));
    }

    fn render_parallel(
        pool: &rayon::ThreadPool,
        ctx: &RasterContext<'_>,
        tiles: &[usize],
    ) -> Vec<(TileBuffer, FrameStats)> {
        pool.install(|| {
            tiles
                .par_iter()
                .map(|&t| {
                    let mut s = FrameStats::default();
                    let tile = render_tile(ctx, t, &mut DirectShading, &mut s);
                    (tile, s)
                })
                .collect()
        })
    }

    pub fn run_frame(&mut self, frame: &Frame) -> Result<FrameOutcome, SimError> {
        let index = self.frame;
        for t in &frame.texture_updates {
            self.textures.insert(t.clone());
        }
        let tiles = self.grid.tile_count();
        let geo = process_frame(&frame.draws, &self.grid).map_err(|source| SimError::Geometry {
            frame: index,
            source,
        })?;
        let mut stats = FrameStats {
            tiles_total: tiles as u64,
            vertices_transformed: geo.vertices_transformed,
            triangles_binned: geo.triangles.len() as u64,
            ..FrameStats::default()
        };

        let mut skipped = vec![false; tiles];
        let mut signatures = Vec::new();
        if let Some(unit) = self.signatures.as_mut() {
            unit.sign_frame(
                &frame.draws,
                &geo.triangles,
                &geo.bins,
                &self.textures,
                &mut stats,
            );
            for &(_, t) in self.tamper.range((index, 0)..(index + 1, 0)) {
                unit.buffer_mut()
                    .force_match_previous(t)
                    .expect("tampered tile in range");
            }
            signatures = unit.buffer().current_all();
            skipped = unit.buffer_mut().compare_and_mark();
            unit.buffer_mut().end_frame().expect("signatures compared");
        }
        stats.tiles_skipped = skipped.iter().filter(|&&s| s).count() as u64;

        let ctx = RasterContext {
            grid: &self.grid,
            draws: &frame.draws,
            triangles: &geo.triangles,
            bins: &geo.bins,
            textures: &self.textures,
        };
        let active: Vec<usize> = (0..tiles).filter(|&t| !skipped[t]).collect();
        let rendered: Vec<(TileBuffer, FrameStats)> = match self.memo.as_mut() {
            Some(cache) => {
                let mut draw_hashed = vec![false; frame.draws.len()];
                let mut shading = MemoShading {
                    cache,
                    textures: &self.textures,
                    draw_hashed: &mut draw_hashed,
                };
                active
                    .iter()
                    .map(|&t| {
                        let mut s = FrameStats::default();
                        let tile = render_tile(&ctx, t, &mut shading, &mut s);
                        (tile, s)
                    })
                    .collect()
            }
            None => Self::render_parallel(&self.pool, &ctx, &active),
        };

        for (tile, s) in &rendered {
            stats += *s;
            let suppress = match self.te.as_mut() {
                Some(te) => {
                    let bytes = tile.color_bytes();
                    stats.crc_bytes_hashed += bytes.len() as u64;
                    te.check_and_update(tile.tile_index, self.engine.checksum(&bytes))
                }
                None => false,
            };
            if suppress {
                stats.writebacks_suppressed += 1;
            } else {
                stats.bytes_written += tile.write_back(&mut self.framebuffer);
            }
        }

        let verify = match self.baseline.as_mut() {
            Some(base) => {
                let all: Vec<usize> = (0..tiles).collect();
                for (tile, _) in Self::render_parallel(&self.pool, &ctx, &all) {
                    tile.write_back(base);
                }
                let mut report = verify_frame(index, &self.grid, &self.framebuffer, base, &skipped);
                let skipped_tiles: Vec<usize> = (0..tiles).filter(|&t| skipped[t]).collect();
                for (tile, _) in Self::render_parallel(&self.pool, &ctx, &skipped_tiles) {
                    if !tile.matches_framebuffer(&self.framebuffer) {
                        report.containment_failures.push(tile.tile_index);
                    }
                }
                Some(report)
            }
            None => None,
        };

        self.frame += 1;
        Ok(FrameOutcome {
            frame: index,
            stats,
            skipped,
            signatures,
            verify,
        })
    }
}

/// Runs every frame of `trace`, handing each outcome and image to `on_frame`.
pub fn run_trace(
    trace: &FrameTrace,
    config: TechniqueConfig,
    options: SimOptions,
    mut on_frame: impl FnMut(&FrameOutcome, &Framebuffer),
) -> Result<Vec<FrameOutcome>, SimError> {
    let mut sim = Simulator::for_trace(trace, config, options)?;
    let mut outcomes = Vec::with_capacity(trace.frames.len());
    for frame in &trace.frames {
        let outcome = sim.run_frame(frame)?;
        on_frame(&outcome, sim.framebuffer());
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

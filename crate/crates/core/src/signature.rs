//! Tile input signatures.
//!
//! Every binned triangle is serialized once into a fixed-size record holding
//! everything that can influence its pixels. A tile's signature is the CRC of
//! the concatenation of the records binned to it, in submission order. Since
//! records do not depend on the tile, each record is hashed once and the
//! per-tile values are assembled with CRC concatenation.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::cost::FrameStats;
use crate::crc::{CrcEngine, CrcValue, ZeroShift, EMPTY_CRC};
use crate::geometry::{ScreenTriangle, TileBinList};
use crate::grid::TileGrid;
use crate::scene::{DrawCommand, ShaderId, TextureSet};

pub const RECORD_LEN: usize = 161;

/// Serialized per-primitive input: shader, matrix, tint, texture identity and
/// the three post-snap vertices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileInputRecord(pub [u8; RECORD_LEN]);

impl TileInputRecord {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

pub fn serialize_record(
    tri: &ScreenTriangle,
    draw: &DrawCommand,
    textures: &TextureSet,
) -> TileInputRecord {
    let mut buf = [0u8; RECORD_LEN];
    let mut at = 0usize;
    let mut put = |bytes: &[u8]| {
        buf[at..at + bytes.len()].copy_from_slice(bytes);
        at += bytes.len();
    };
    put(&[draw.shader as u8]);
    for m in draw.uniforms.matrix {
        put(&m.to_le_bytes());
    }
    put(&draw.uniforms.tint);
    let (id, tag) = match (draw.shader, draw.uniforms.texture_id) {
        (ShaderId::Textured, Some(id)) => textures.identity(id).unwrap_or((id, 0)),
        _ => (0, 0),
    };
    put(&id.to_le_bytes());
    put(&tag.to_le_bytes());
    for v in &tri.vertices {
        put(&v.x.to_le_bytes());
        put(&v.y.to_le_bytes());
        put(&v.z.to_le_bytes());
        put(&v.inv_w.to_le_bytes());
        put(&v.color);
        put(&v.uv[0].to_le_bytes());
        put(&v.uv[1].to_le_bytes());
    }
    debug_assert_eq!(at, RECORD_LEN);
    TileInputRecord(buf)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignatureError {
    #[error("tile {tile} out of range ({tile_count} tiles)")]
    TileOutOfRange { tile: usize, tile_count: usize },
    #[error("frame ended before signatures were compared")]
    NotCompared,
}

/// Current and previous per-tile signatures with their input lengths.
#[derive(Clone, Debug)]
pub struct TileSignatureBuffer {
    current: Vec<CrcValue>,
    current_len: Vec<u64>,
    previous: Vec<CrcValue>,
    previous_len: Vec<u64>,
    previous_valid: bool,
    compared: bool,
}

impl TileSignatureBuffer {
    pub fn new(tile_count: usize) -> Self {
        TileSignatureBuffer {
            current: vec![EMPTY_CRC; tile_count],
            current_len: vec![0; tile_count],
            previous: vec![EMPTY_CRC; tile_count],
            previous_len: vec![0; tile_count],
            previous_valid: false,
            compared: false,
        }
    }

    pub fn tile_count(&self) -> usize {
        self.current.len()
    }

    /// Forgets all history, e.g. after a resolution change.
    pub fn reset(&mut self, tile_count: usize) {
        *self = TileSignatureBuffer::new(tile_count);
    }

    fn check(&self, tile: usize) -> Result<(), SignatureError> {
        if tile < self.current.len() {
            Ok(())
        } else {
            Err(SignatureError::TileOutOfRange {
                tile,
                tile_count: self.current.len(),
            })
        }
    }

    /// Appends a `len`-byte block with checksum `crc` to a tile's input.
    pub fn accumulate(
        &mut self,
        tile: usize,
        crc: CrcValue,
        len: u64,
    ) -> Result<(), SignatureError> {
        self.check(tile)?;
        self.current[tile] = ZeroShift::bytes(len).concat(self.current[tile], crc);
        self.current_len[tile] += len;
        Ok(())
    }

    pub fn set_current(
        &mut self,
        tile: usize,
        crc: CrcValue,
        len: u64,
    ) -> Result<(), SignatureError> {
        self.check(tile)?;
        self.current[tile] = crc;
        self.current_len[tile] = len;
        Ok(())
    }

    pub fn current(&self, tile: usize) -> (CrcValue, u64) {
        (self.current[tile], self.current_len[tile])
    }

    pub fn current_all(&self) -> Vec<(CrcValue, u64)> {
        self.current
            .iter()
            .copied()
            .zip(self.current_len.iter().copied())
            .collect()
    }

    pub fn previous(&self, tile: usize) -> Option<(CrcValue, u64)> {
        self.previous_valid
            .then(|| (self.previous[tile], self.previous_len[tile]))
    }

    pub fn previous_valid(&self) -> bool {
        self.previous_valid
    }

    /// Per-tile skip decisions: previous frame valid and signature and length equal.
    pub fn compare_and_mark(&mut self) -> Vec<bool> {
        self.compared = true;
        (0..self.current.len())
            .map(|t| {
                self.previous_valid
                    && self.current[t] == self.previous[t]
                    && self.current_len[t] == self.previous_len[t]
            })
            .collect()
    }

    /// Rotates current into previous and clears current.
    pub fn end_frame(&mut self) -> Result<(), SignatureError> {
        if !self.compared {
            return Err(SignatureError::NotCompared);
        }
        std::mem::swap(&mut self.current, &mut self.previous);
        std::mem::swap(&mut self.current_len, &mut self.previous_len);
        self.current.fill(EMPTY_CRC);
        self.current_len.fill(0);
        self.previous_valid = true;
        self.compared = false;
        Ok(())
    }

    /// Storage for both signature and both length arrays.
    pub fn footprint_bytes(&self) -> u64 {
        let tiles = self.current.len() as u64;
        2 * tiles * 4 + 2 * tiles * 8
    }

    /// Test hook: makes a tile's current signature equal the previous one so
    /// it is skipped regardless of its real inputs.
    pub fn force_match_previous(&mut self, tile: usize) -> Result<(), SignatureError> {
        self.check(tile)?;
        self.current[tile] = self.previous[tile];
        self.current_len[tile] = self.previous_len[tile];
        Ok(())
    }
}

/// Hashes binned primitives and builds per-tile signatures.
#[derive(Clone, Debug)]
pub struct SignatureUnit {
    engine: CrcEngine,
    record_shift: ZeroShift,
    buffer: TileSignatureBuffer,
}

impl SignatureUnit {
    pub fn new(engine: CrcEngine, tile_count: usize) -> Self {
        SignatureUnit {
            engine,
            record_shift: ZeroShift::bytes(RECORD_LEN as u64),
            buffer: TileSignatureBuffer::new(tile_count),
        }
    }

    pub fn engine(&self) -> &CrcEngine {
        &self.engine
    }

    pub fn buffer(&self) -> &TileSignatureBuffer {
        &self.buffer
    }

    pub fn buffer_mut(&mut self) -> &mut TileSignatureBuffer {
        &mut self.buffer
    }

    /// Fills the current signatures for a binned frame.
    ///
    /// Each triangle that landed in at least one bin is hashed exactly once;
    /// those bytes are charged to `crc_bytes_hashed`.
    pub fn sign_frame(
        &mut self,
        draws: &[DrawCommand],
        triangles: &[ScreenTriangle],
        bins: &TileBinList,
        textures: &TextureSet,
        stats: &mut FrameStats,
    ) {
        let mut binned = vec![false; triangles.len()];
        for t in 0..bins.tile_count() {
            for &i in bins.tile(t) {
                binned[i as usize] = true;
            }
        }
        let crcs: Vec<CrcValue> = triangles
            .iter()
            .zip(&binned)
            .map(|(tri, &b)| {
                if !b {
                    return EMPTY_CRC;
                }
                stats.crc_bytes_hashed += RECORD_LEN as u64;
                let rec = serialize_record(tri, &draws[tri.draw_index as usize], textures);
                self.engine.checksum(rec.as_bytes())
            })
            .collect();
        for t in 0..bins.tile_count() {
            let list = bins.tile(t);
            let crc = list.iter().fold(EMPTY_CRC, |acc, &i| {
                self.record_shift.concat(acc, crcs[i as usize])
            });
            self.buffer
                .set_current(t, crc, (list.len() * RECORD_LEN) as u64)
                .expect("bin count matches grid");
        }
    }
}

#[derive(Serialize)]
struct SignatureRow {
    frame: usize,
    tile_x: u32,
    tile_y: u32,
    signature_hex: String,
    len: u64,
    skipped: bool,
}

/// Writes a `frame,tile_x,tile_y,signature_hex,len,skipped` table.
pub struct SignatureDump<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> SignatureDump<W> {
    pub fn new(out: W) -> Self {
        SignatureDump {
            writer: csv::Writer::from_writer(out),
        }
    }

    pub fn write_frame(
        &mut self,
        frame: usize,
        grid: &TileGrid,
        signatures: &[(CrcValue, u64)],
        skipped: &[bool],
    ) -> Result<(), csv::Error> {
        for (t, &(crc, len)) in signatures.iter().enumerate().take(grid.tile_count()) {
            let (tile_x, tile_y) = grid.coords(t);
            self.writer.serialize(SignatureRow {
                frame,
                tile_x,
                tile_y,
                signature_hex: crc.to_string(),
                len,
                skipped: skipped.get(t).copied().unwrap_or(false),
            })?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, csv::Error> {
        self.writer.flush()?;
        self.writer
            .into_inner()
            .map_err(|e| csv::Error::from(e.into_error()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crc::{crc32_bitwise, CrcImpl};
    use crate::geometry::process_frame;
    use crate::scene::{generate_scene, SceneKind, SceneSpec, Uniforms, Vertex, IDENTITY};
    use proptest::prelude::*;

    fn tri_draw(tint: [u8; 4], offset: f32) -> DrawCommand {
        DrawCommand {
            draw_id: 3,
            shader: ShaderId::Gouraud,
            uniforms: Uniforms {
                matrix: IDENTITY,
                tint,
                texture_id: None,
            },
            vertices: vec![
                Vertex::new([-0.9 + offset, -0.9, 0.5], [255, 0, 0, 255]),
                Vertex::new([0.9 + offset, -0.9, 0.5], [0, 255, 0, 255]),
                Vertex::new([0.0 + offset, 0.9, 0.5], [0, 0, 255, 255]),
            ],
        }
    }

    fn signed(grid: &TileGrid, draws: &[DrawCommand], unit: &mut SignatureUnit) -> FrameStats {
        let geo = process_frame(draws, grid).unwrap();
        let mut stats = FrameStats::default();
        unit.sign_frame(
            draws,
            &geo.triangles,
            &geo.bins,
            &TextureSet::default(),
            &mut stats,
        );
        stats
    }

    #[test]
    fn record_layout() {
        let grid = TileGrid::new(64, 64, 16);
        let d = tri_draw([1, 2, 3, 4], 0.0);
        let geo = process_frame(std::slice::from_ref(&d), &grid).unwrap();
        let rec = serialize_record(&geo.triangles[0], &d, &TextureSet::default());
        assert_eq!(rec.0.len(), 161);
        assert_eq!(rec.0[0], ShaderId::Gouraud as u8);
        assert_eq!(&rec.0[1..5], &1.0f32.to_le_bytes());
        assert_eq!(&rec.0[65..69], &[1, 2, 3, 4]);
        assert_eq!(&rec.0[69..77], &[0; 8]);
        let v0 = &geo.triangles[0].vertices[0];
        assert_eq!(&rec.0[77..81], &v0.x.to_le_bytes());
        assert_eq!(&rec.0[93..97], &v0.color);
    }

    #[test]
    fn tint_bit_flip_changes_signature() {
        let grid = TileGrid::new(64, 64, 16);
        let mut a = SignatureUnit::new(CrcEngine::new(CrcImpl::Sliced8), grid.tile_count());
        let mut b = a.clone();
        signed(&grid, &[tri_draw([200, 10, 10, 255], 0.0)], &mut a);
        signed(&grid, &[tri_draw([200, 10, 11, 255], 0.0)], &mut b);
        for t in 0..grid.tile_count() {
            let (ca, la) = a.buffer().current(t);
            let (cb, lb) = b.buffer().current(t);
            assert_eq!(la, lb);
            if la > 0 {
                assert_ne!(ca, cb, "tile {t}");
            } else {
                assert_eq!(ca, cb);
            }
        }
    }

    #[test]
    fn tile_signature_is_crc_of_concatenated_records() {
        // Oracle: bitwise CRC over the explicit concatenation of records.
        let grid = TileGrid::new(64, 64, 16);
        let draws = vec![tri_draw([255; 4], 0.0), tri_draw([9, 9, 9, 255], 0.3)];
        let geo = process_frame(&draws, &grid).unwrap();
        let mut unit = SignatureUnit::new(CrcEngine::new(CrcImpl::Sliced4), grid.tile_count());
        let mut stats = FrameStats::default();
        let textures = TextureSet::default();
        unit.sign_frame(&draws, &geo.triangles, &geo.bins, &textures, &mut stats);
        for t in 0..grid.tile_count() {
            let mut bytes = Vec::new();
            for &i in geo.bins.tile(t) {
                let tri = &geo.triangles[i as usize];
                bytes.extend_from_slice(
                    serialize_record(tri, &draws[tri.draw_index as usize], &textures).as_bytes(),
                );
            }
            assert_eq!(
                unit.buffer().current(t),
                (crc32_bitwise(&bytes), bytes.len() as u64)
            );
        }
        let binned = geo.triangles.len() as u64;
        assert_eq!(stats.crc_bytes_hashed, binned * 161);
    }

    #[test]
    fn zero_record_crc() {
        // Empty tile vs a tile holding one all-zero record differ by length and value.
        let mut buf = TileSignatureBuffer::new(2);
        buf.accumulate(1, crc32_bitwise(&[0u8; 161]), 161).unwrap();
        assert_eq!(buf.current(0), (EMPTY_CRC, 0));
        assert_eq!(buf.current(1), (crc32_bitwise(&[0u8; 161]), 161));
        assert_ne!(buf.current(1).0, EMPTY_CRC);
    }

    #[test]
    fn order_matters() {
        let r1 = [1u8; 161];
        let mut r2 = [0u8; 161];
        r2[7] = 0x55;
        let mut a = TileSignatureBuffer::new(1);
        let mut b = TileSignatureBuffer::new(1);
        a.accumulate(0, crc32_bitwise(&r1), 161).unwrap();
        a.accumulate(0, crc32_bitwise(&r2), 161).unwrap();
        b.accumulate(0, crc32_bitwise(&r2), 161).unwrap();
        b.accumulate(0, crc32_bitwise(&r1), 161).unwrap();
        let joined: Vec<u8> = r1.iter().chain(&r2).copied().collect();
        assert_eq!(a.current(0).0, crc32_bitwise(&joined));
        assert_ne!(a.current(0), b.current(0));
    }

    #[test]
    fn first_frame_never_skips_then_identical_frames_do() {
        let grid = TileGrid::new(64, 48, 16);
        let draws = [tri_draw([255; 4], 0.0)];
        let mut unit = SignatureUnit::new(CrcEngine::default(), grid.tile_count());
        signed(&grid, &draws, &mut unit);
        assert!(unit.buffer_mut().compare_and_mark().iter().all(|&s| !s));
        unit.buffer_mut().end_frame().unwrap();
        signed(&grid, &draws, &mut unit);
        assert!(unit.buffer_mut().compare_and_mark().iter().all(|&s| s));
        unit.buffer_mut().end_frame().unwrap();
    }

    #[test]
    fn sequencing_and_range_errors() {
        let mut buf = TileSignatureBuffer::new(4);
        assert_eq!(buf.end_frame(), Err(SignatureError::NotCompared));
        assert_eq!(
            buf.accumulate(4, EMPTY_CRC, 0),
            Err(SignatureError::TileOutOfRange {
                tile: 4,
                tile_count: 4
            })
        );
        assert!(buf.previous(0).is_none());
        buf.compare_and_mark();
        buf.end_frame().unwrap();
        assert_eq!(buf.previous(0), Some((EMPTY_CRC, 0)));
    }

    #[test]
    fn footprint() {
        assert_eq!(TileSignatureBuffer::new(256).footprint_bytes(), 256 * 24);
    }

    #[test]
    fn moving_quad_mask_matches_sidecar() {
        let spec = SceneSpec::new(SceneKind::MovingQuad, 8, 3);
        let scene = generate_scene(&spec).unwrap();
        let grid = scene.trace.grid();
        let mut unit = SignatureUnit::new(CrcEngine::default(), grid.tile_count());
        let mut textures = TextureSet::default();
        for t in &scene.trace.textures {
            textures.insert(t.clone());
        }
        for (n, frame) in scene.trace.frames.iter().enumerate() {
            let geo = process_frame(&frame.draws, &grid).unwrap();
            let mut stats = FrameStats::default();
            unit.sign_frame(
                &frame.draws,
                &geo.triangles,
                &geo.bins,
                &textures,
                &mut stats,
            );
            let mask = unit.buffer_mut().compare_and_mark();
            if n >= 1 {
                assert_eq!(
                    Some(mask),
                    scene.expectation.mask(n, grid.tile_count()),
                    "frame {n}"
                );
            }
            unit.buffer_mut().end_frame().unwrap();
        }
    }

    #[test]
    fn dump_format() {
        let grid = TileGrid::new(32, 16, 16);
        let mut buf = TileSignatureBuffer::new(2);
        buf.set_current(1, CrcValue(0xCBF4_3926), 161).unwrap();
        let mut dump = SignatureDump::new(Vec::new());
        dump.write_frame(4, &grid, &buf.current_all(), &[true, false])
            .unwrap();
        let text = String::from_utf8(dump.finish().unwrap()).unwrap();
        assert_eq!(
            text,
            "frame,tile_x,tile_y,signature_hex,len,skipped\n4,0,0,00000000,0,true\n4,1,0,cbf43926,161,false\n"
        );
    }

    proptest! {
        #[test]
        fn accumulate_equals_concatenation(blocks in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..300), 0..6)) {
            let mut buf = TileSignatureBuffer::new(1);
            let mut all = Vec::new();
            for b in &blocks {
                buf.accumulate(0, crc32_bitwise(b), b.len() as u64).unwrap();
                all.extend_from_slice(b);
            }
            prop_assert_eq!(buf.current(0), (crc32_bitwise(&all), all.len() as u64));
        }
    }
}

//! Line-oriented trace text format.
//!
//! ```text
//! trace <width> <height> <tile_size>
//! texture <id> <w> <h> (pattern checker|gradient|noise <seed> | inline <w*h RGBA8 hex texels>)
//! frame
//! draw <shader> matrix <16 floats> tint <RRGGBBAA> [tex <id>]
//! v <x> <y> <z> <r> <g> <b> <a> [<u> <v>]
//! ```
//!
//! `texture` lines before the first `frame` define the initial textures; inside
//! a frame they redefine a texture from that frame on. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{DrawCommand, Frame, FrameTrace, ShaderId, Texture, TextureSource, Uniforms, Vertex};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: unknown texture {id}")]
    UnknownTexture { line: usize, id: u32 },
    #[error("line {line}: draw has {count} vertices, not a multiple of 3")]
    VertexCount { line: usize, count: usize },
}

fn schema(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::Schema {
        line,
        message: message.into(),
    }
}

struct Tokens<'a> {
    line: usize,
    iter: std::str::SplitWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str, TraceError> {
        self.iter
            .next()
            .ok_or_else(|| schema(self.line, format!("missing {what}")))
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, TraceError> {
        let tok = self.next(what)?;
        tok.parse()
            .map_err(|_| schema(self.line, format!("invalid {what} '{tok}'")))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), TraceError> {
        let tok = self.next(kw)?;
        if tok == kw {
            Ok(())
        } else {
            Err(schema(self.line, format!("expected '{kw}', found '{tok}'")))
        }
    }

    fn finish(&mut self) -> Result<(), TraceError> {
        match self.iter.next() {
            None => Ok(()),
            Some(tok) => Err(schema(self.line, format!("unexpected token '{tok}'"))),
        }
    }
}

fn parse_rgba_hex(tok: &str, line: usize) -> Result<[u8; 4], TraceError> {
    if tok.len() != 8 || !tok.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(schema(line, format!("invalid RGBA8 hex '{tok}'")));
    }
    let v = u32::from_str_radix(tok, 16).map_err(|_| schema(line, "invalid hex"))?;
    Ok(v.to_be_bytes())
}

fn rgba_hex(c: [u8; 4]) -> String {
    format!("{:02x}{:02x}{:02x}{:02x}", c[0], c[1], c[2], c[3])
}

struct OpenDraw {
    line: usize,
    draw: DrawCommand,
}

struct Parser {
    trace: FrameTrace,
    /// Latest definition of every texture id seen so far.
    live: BTreeMap<u32, Texture>,
    open: Option<OpenDraw>,
}

impl Parser {
    fn close_draw(&mut self) -> Result<(), TraceError> {
        if let Some(open) = self.open.take() {
            let count = open.draw.vertices.len();
            if count % 3 != 0 {
                return Err(TraceError::VertexCount {
                    line: open.line,
                    count,
                });
            }
            self.trace
                .frames
                .last_mut()
                .expect("draws only open inside a frame")
                .draws
                .push(open.draw);
        }
        Ok(())
    }

    fn texture(&mut self, t: &mut Tokens<'_>) -> Result<(), TraceError> {
        let line = t.line;
        let id: u32 = t.parse("texture id")?;
        let width: u32 = t.parse("texture width")?;
        let height: u32 = t.parse("texture height")?;
        for dim in [width, height] {
            if !dim.is_power_of_two() || dim > 256 {
                return Err(schema(
                    line,
                    format!("texture dimension {dim} is not a power of two <= 256"),
                ));
            }
        }
        let mut texture = match t.next("texture source")? {
            "pattern" => {
                let source = match t.next("pattern name")? {
                    "checker" => TextureSource::Checker,
                    "gradient" => TextureSource::Gradient,
                    "noise" => TextureSource::Noise(t.parse("noise seed")?),
                    other => return Err(schema(line, format!("unknown pattern '{other}'"))),
                };
                Texture::from_pattern(id, width, height, source)
            }
            "inline" => {
                let count = width as usize * height as usize;
                let mut texels = Vec::with_capacity(count);
                for _ in 0..count {
                    texels.push(parse_rgba_hex(t.next("inline texel")?, line)?);
                }
                Texture::inline(id, width, height, texels)
            }
            other => return Err(schema(line, format!("unknown texture source '{other}'"))),
        };
        t.finish()?;

        if let Some(prev) = self.live.get(&id) {
            texture.version = if prev.texels == texture.texels && prev.width == texture.width {
                prev.version
            } else {
                prev.version + 1
            };
        }
        self.live.insert(id, texture.clone());
        match self.trace.frames.last_mut() {
            Some(frame) => frame.texture_updates.push(texture),
            None => self.trace.textures.push(texture),
        }
        Ok(())
    }

    fn draw(&mut self, t: &mut Tokens<'_>) -> Result<(), TraceError> {
        let line = t.line;
        let Some(frame) = self.trace.frames.last() else {
            return Err(schema(line, "draw outside of a frame"));
        };
        let draw_id = frame.draws.len() as u32;
        let shader: ShaderId = {
            let tok = t.next("shader")?;
            tok.parse().map_err(|e: String| schema(line, e))?
        };
        t.keyword("matrix")?;
        let mut matrix = [0f32; 16];
        for m in &mut matrix {
            *m = t.parse("matrix element")?;
        }
        t.keyword("tint")?;
        let tint = parse_rgba_hex(t.next("tint")?, line)?;
        let texture_id = match t.iter.next() {
            None => None,
            Some("tex") => Some(t.parse::<u32>("texture id")?),
            Some(tok) => return Err(schema(line, format!("unexpected token '{tok}'"))),
        };
        t.finish()?;
        match (shader, texture_id) {
            (ShaderId::Textured, None) => {
                return Err(schema(line, "textured draw without 'tex <id>'"));
            }
            (ShaderId::Flat | ShaderId::Gouraud, Some(_)) => {
                return Err(schema(line, "untextured draw references a texture"));
            }
            (_, Some(id)) if !self.live.contains_key(&id) => {
                return Err(TraceError::UnknownTexture { line, id });
            }
            _ => {}
        }
        self.open = Some(OpenDraw {
            line,
            draw: DrawCommand {
                draw_id,
                shader,
                uniforms: Uniforms {
                    matrix,
                    tint,
                    texture_id,
                },
                vertices: Vec::new(),
            },
        });
        Ok(())
    }

    fn vertex(&mut self, t: &mut Tokens<'_>) -> Result<(), TraceError> {
        let line = t.line;
        let Some(open) = self.open.as_mut() else {
            return Err(schema(line, "vertex outside of a draw"));
        };
        let mut position = [0f32; 3];
        for p in &mut position {
            *p = t.parse("vertex coordinate")?;
        }
        let mut color = [0u8; 4];
        for c in &mut color {
            *c = t.parse("vertex color channel")?;
        }
        let uv = match t.iter.next() {
            None => [0.0, 0.0],
            Some(tok) => {
                let u = tok
                    .parse()
                    .map_err(|_| schema(line, format!("invalid texture coordinate '{tok}'")))?;
                [u, t.parse("texture coordinate")?]
            }
        };
        t.finish()?;
        open.draw.vertices.push(Vertex {
            position,
            color,
            uv,
        });
        Ok(())
    }
}

/// Parses and validates a trace document.
pub fn parse_trace(text: &str) -> Result<FrameTrace, TraceError> {
    let mut parser: Option<Parser> = None;
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let mut t = Tokens {
            line,
            iter: content.split_whitespace(),
        };
        let keyword = t.next("keyword")?;
        let Some(p) = parser.as_mut() else {
            if keyword != "trace" {
                return Err(schema(line, "document must start with a 'trace' header"));
            }
            let width: u32 = t.parse("width")?;
            let height: u32 = t.parse("height")?;
            let tile_size: u32 = t.parse("tile size")?;
            t.finish()?;
            if tile_size < 4 || width < tile_size || height < tile_size {
                return Err(schema(
                    line,
                    format!("need width, height >= tile size >= 4 (got {width}x{height}, tile {tile_size})"),
                ));
            }
            parser = Some(Parser {
                trace: FrameTrace {
                    width,
                    height,
                    tile_size,
                    textures: Vec::new(),
                    frames: Vec::new(),
                },
                live: BTreeMap::new(),
                open: None,
            });
            continue;
        };
        match keyword {
            "trace" => return Err(schema(line, "duplicate 'trace' header")),
            "texture" => {
                p.close_draw()?;
                p.texture(&mut t)?;
            }
            "frame" => {
                p.close_draw()?;
                t.finish()?;
                p.trace.frames.push(Frame::default());
            }
            "draw" => {
                p.close_draw()?;
                p.draw(&mut t)?;
            }
            "v" => p.vertex(&mut t)?,
            other => return Err(schema(line, format!("unknown keyword '{other}'"))),
        }
    }
    let mut p = parser.ok_or_else(|| schema(last_line.max(1), "missing 'trace' header"))?;
    p.close_draw()?;
    Ok(p.trace)
}

fn write_texture(out: &mut String, t: &Texture) {
    let _ = write!(out, "texture {} {} {} ", t.id, t.width, t.height);
    match t.source {
        TextureSource::Checker => out.push_str("pattern checker"),
        TextureSource::Gradient => out.push_str("pattern gradient"),
        TextureSource::Noise(seed) => {
            let _ = write!(out, "pattern noise {seed}");
        }
        TextureSource::Inline => {
            out.push_str("inline");
            for texel in &t.texels {
                out.push(' ');
                out.push_str(&rgba_hex(*texel));
            }
        }
    }
    out.push('\n');
}

impl FrameTrace {
    /// Canonical text form; `parse_trace(t.to_text()) == t` for parsed traces.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "trace {} {} {}",
            self.width, self.height, self.tile_size
        );
        for t in &self.textures {
            write_texture(&mut out, t);
        }
        for frame in &self.frames {
            out.push_str("frame\n");
            for t in &frame.texture_updates {
                write_texture(&mut out, t);
            }
            for draw in &frame.draws {
                let _ = write!(out, "draw {} matrix", draw.shader);
                for m in draw.uniforms.matrix {
                    let _ = write!(out, " {m}");
                }
                let _ = write!(out, " tint {}", rgba_hex(draw.uniforms.tint));
                if let Some(id) = draw.uniforms.texture_id {
                    let _ = write!(out, " tex {id}");
                }
                out.push('\n');
                let with_uv = draw.shader == ShaderId::Textured
                    || draw.vertices.iter().any(|v| v.uv != [0.0, 0.0]);
                for v in &draw.vertices {
                    let [x, y, z] = v.position;
                    let [r, g, b, a] = v.color;
                    let _ = write!(out, "v {x} {y} {z} {r} {g} {b} {a}");
                    if with_uv {
                        let _ = write!(out, " {} {}", v.uv[0], v.uv[1]);
                    }
                    out.push('\n');
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
trace 64 64 16
frame
draw flat matrix 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1 tint ff0000ff
v -0.5 -0.5 0.5 255 255 255 255
v 0.5 -0.5 0.5 255 255 255 255
v 0 0.5 0.5 255 255 255 255
";

    #[test]
    fn minimal_trace() {
        let t = parse_trace(MINIMAL).unwrap();
        assert_eq!(t.frames.len(), 1);
        assert_eq!(t.grid().tile_count(), 16);
        let d = &t.frames[0].draws[0];
        assert_eq!(d.shader, ShaderId::Flat);
        assert_eq!(d.uniforms.tint, [255, 0, 0, 255]);
        assert_eq!(d.vertices.len(), 3);
    }

    #[test]
    fn unknown_texture() {
        let text = "trace 64 64 16\nframe\ndraw textured matrix 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1 tint ffffffff tex 9\n";
        let err = parse_trace(text).unwrap_err();
        assert_eq!(err, TraceError::UnknownTexture { line: 3, id: 9 });
        assert!(err.to_string().contains("unknown texture"));
    }

    #[test]
    fn vertex_count_must_be_triangles() {
        let text = format!("{}v 0 0 0 0 0 0 0\n", MINIMAL);
        assert_eq!(
            parse_trace(&text).unwrap_err(),
            TraceError::VertexCount { line: 3, count: 4 }
        );
    }

    #[test]
    fn schema_errors_carry_line() {
        let cases = [
            ("frame\n", 1),
            ("trace 64 64 2\n", 1),
            ("trace 8 64 16\n", 1),
            ("trace 64 64 16\nframe\nbogus\n", 3),
            ("trace 64 64 16\nv 0 0 0 0 0 0 0\n", 2),
            ("trace 64 64 16\ntexture 0 3 4 pattern checker\n", 2),
            ("trace 64 64 16\ntexture 0 2 2 inline ffffffff\n", 2),
            ("trace 64 64 16\nframe\ndraw flat matrix 1 0 0 tint ffffffff\n", 3),
            ("trace 64 64 16\nframe\ndraw flat matrix 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1 tint fff\n", 3),
            ("trace 64 64 16\ntexture 0 2 2 pattern checker\nframe\ndraw flat matrix 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1 tint ffffffff tex 0\n", 4),
            ("trace 64 64 16\nframe\ndraw textured matrix 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1 tint ffffffff\n", 3),
        ];
        for (text, line) in cases {
            match parse_trace(text) {
                Err(TraceError::Schema { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("expected schema error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn texture_versions_follow_content() {
        let text = "\
trace 32 32 16
texture 1 2 2 inline ff0000ff 00ff00ff 0000ffff ffffffff
frame
frame
texture 1 2 2 inline ff0000ff 00ff00ff 0000ffff ffffffff
frame
texture 1 2 2 pattern checker
";
        let t = parse_trace(text).unwrap();
        assert_eq!(t.textures[0].version, 1);
        assert_eq!(t.frames[1].texture_updates[0].version, 1);
        assert_eq!(t.frames[2].texture_updates[0].version, 2);
    }

    #[test]
    fn canonical_round_trip() {
        let text = "\
# comment
trace 48 32 16

texture 0 4 4 pattern noise 42
texture 1 2 1 inline 01020304 a0b0c0d0
frame
draw GOURAUD matrix 1 0 0 0.1 0 1 0 0 0 0 1 0 0 0 0 1 tint 80ff80ff
v -1 -1 0.25 1 2 3 4
v 1 -1 0.25 5 6 7 8
v 0 1 0.25 9 10 11 12
frame
texture 1 2 1 inline 01020304 a0b0c0d1
draw textured matrix 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1 tint ffffffff tex 1
v -1 -1 0.5 255 255 255 255 0 0
v 1 -1 0.5 255 255 255 255 1.5 0
v 0 1 0.5 255 255 255 255 0.5 -2.25
";
        let parsed = parse_trace(text).unwrap();
        let canonical = parsed.to_text();
        let reparsed = parse_trace(&canonical).unwrap();
        assert_eq!(reparsed, parsed);
        assert_eq!(reparsed.to_text(), canonical);
        assert!(canonical.contains("draw gouraud matrix 1 0 0 0.1"));
    }
}

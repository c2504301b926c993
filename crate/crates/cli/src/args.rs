use std::path::PathBuf;

use clap::Parser;
use tbr_core::crc::CrcImpl;
use tbr_core::redundancy::{Technique, DEFAULT_MEMO_CAPACITY};
use tbr_core::scene::{SceneSpec, TextureIdentity};

#[derive(Parser, Debug)]
#[command(
    name = "tbrsim",
    version,
    about = "Tile-based GPU pipeline simulator with rendering elimination"
)]
pub struct Cli {
    /// Frame trace file to replay
    #[arg(
        long,
        value_name = "PATH",
        required_unless_present = "gen",
        conflicts_with = "gen"
    )]
    pub trace: Option<PathBuf>,

    /// Synthetic scene, e.g. `moving_quad:30:seed=7`
    #[arg(long, value_name = "SPEC")]
    pub gen: Option<SceneSpec>,

    /// none, re, te, memo or re+te
    #[arg(long, default_value = "re")]
    pub technique: Technique,

    /// Tile edge in pixels (power of two, 4 to 64)
    #[arg(long, value_name = "N", value_parser = parse_tile_size)]
    pub tile_size: Option<u32>,

    /// bitwise, sliced4 or sliced8
    #[arg(long, default_value = "sliced4")]
    pub crc: CrcImpl,

    /// Render a NONE reference alongside and compare every frame
    #[arg(long)]
    pub verify: bool,

    /// Write one PPM per frame into DIR
    #[arg(long, value_name = "DIR")]
    pub dump_frames: Option<PathBuf>,

    /// Also write a PPM for every rendered tile
    #[arg(long, requires = "dump_frames")]
    pub dump_tiles: bool,

    /// Per-frame counters as CSV
    #[arg(long, value_name = "PATH")]
    pub stats: Option<PathBuf>,

    /// Cost weights as TOML
    #[arg(long, value_name = "PATH")]
    pub cost: Option<PathBuf>,

    /// Tile rendering workers [default: available cores]
    #[arg(long, value_name = "N", value_parser = parse_positive)]
    pub threads: Option<usize>,

    /// Fragment memoization cache entries
    #[arg(long, value_name = "N", default_value_t = DEFAULT_MEMO_CAPACITY, value_parser = parse_positive)]
    pub memo_capacity: usize,

    /// Run every technique on the same input and print a comparison
    #[arg(long)]
    pub compare: bool,

    /// Debug: write the CRC lookup tables as hex, one entry per line
    #[arg(long, value_name = "PATH")]
    pub dump_crc_tables: Option<PathBuf>,

    /// Debug: write per-tile signatures as CSV
    #[arg(long, value_name = "PATH")]
    pub dump_signatures: Option<PathBuf>,

    /// Debug: write the input as a trace file
    #[arg(long, value_name = "PATH")]
    pub emit_trace: Option<PathBuf>,

    /// Debug: write the generator's expectation sidecar
    #[arg(long, value_name = "PATH", requires = "gen")]
    pub emit_expect: Option<PathBuf>,

    /// How textures enter tile signatures: version or content
    #[arg(long, value_name = "MODE", default_value = "version", value_parser = parse_texture_identity)]
    pub texture_signature: TextureIdentity,

    /// Debug: force RE to skip a tile, e.g. `3:17` for frame 3 tile 17
    #[arg(long, value_name = "FRAME:TILE", value_parser = parse_frame_tile, hide = true)]
    pub force_skip: Vec<(usize, usize)>,
}

fn parse_frame_tile(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("expected FRAME:TILE, got '{s}'");
    let (f, t) = s.split_once(':').ok_or_else(bad)?;
    Ok((f.parse().map_err(|_| bad())?, t.parse().map_err(|_| bad())?))
}

fn parse_tile_size(s: &str) -> Result<u32, String> {
    let n: u32 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if n.is_power_of_two() && (4..=64).contains(&n) {
        Ok(n)
    } else {
        Err(format!(
            "tile size must be a power of two between 4 and 64, got {n}"
        ))
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("expected a positive integer, got '{s}'")),
    }
}

fn parse_texture_identity(s: &str) -> Result<TextureIdentity, String> {
    match s {
        "version" => Ok(TextureIdentity::Version),
        "content" => Ok(TextureIdentity::Content),
        _ => Err(format!("expected version or content, got '{s}'")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("tbrsim").chain(args.iter().copied()))
    }

    #[test]
    fn exactly_one_input() {
        assert!(parse(&[]).is_err());
        assert!(parse(&["--trace", "a", "--gen", "static:3"]).is_err());
        let cli = parse(&["--gen", "static:3"]).unwrap();
        assert_eq!(cli.technique, Technique::Re);
        assert_eq!(cli.crc, CrcImpl::Sliced4);
    }

    #[test]
    fn tile_size_bounds() {
        for ok in ["4", "8", "16", "32", "64"] {
            assert!(parse(&["--gen", "static:3", "--tile-size", ok]).is_ok());
        }
        for bad in ["2", "12", "128", "x"] {
            assert!(
                parse(&["--gen", "static:3", "--tile-size", bad]).is_err(),
                "{bad}"
            );
        }
    }

    #[test]
    fn numeric_flags_must_be_positive() {
        assert!(parse(&["--gen", "static:3", "--threads", "0"]).is_err());
        assert!(parse(&["--gen", "static:3", "--memo-capacity", "0"]).is_err());
        assert_eq!(
            parse(&["--gen", "static:3", "--threads", "8"])
                .unwrap()
                .threads,
            Some(8)
        );
    }

    #[test]
    fn enumerated_flags() {
        let cli = parse(&[
            "--gen",
            "scroll:4:seed=2",
            "--technique",
            "re+te",
            "--crc",
            "bitwise",
            "--texture-signature",
            "content",
        ])
        .unwrap();
        assert_eq!(cli.technique, Technique::ReTe);
        assert_eq!(cli.crc, CrcImpl::Bitwise);
        assert_eq!(cli.texture_signature, TextureIdentity::Content);
        assert!(parse(&["--gen", "static:3", "--technique", "magic"]).is_err());
        assert!(parse(&["--gen", "nonsense:3"]).is_err());
        assert!(parse(&["--gen", "static:3", "--dump-tiles"]).is_err());
        let cli = parse(&[
            "--gen",
            "static:3",
            "--force-skip",
            "2:5",
            "--force-skip",
            "1:0",
        ])
        .unwrap();
        assert_eq!(cli.force_skip, vec![(2, 5), (1, 0)]);
        assert!(parse(&["--gen", "static:3", "--force-skip", "2"]).is_err());
    }
}

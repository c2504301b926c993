//! Work counters and the linear cost model that turns them into modeled
//! cycles, energy and DRAM traffic.
//!
//! All outputs are model-relative: the weights are knobs, not a calibrated
//! power model, and only ratios between techniques are meaningful.

use std::fs::File;
use std::io::{self, Read, Write};
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Counters of work performed during one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct FrameStats {
    pub tiles_total: u64,
    /// Tiles whose raster phase was skipped.
    pub tiles_skipped: u64,
    /// Fragments that reached the shader (memoization hits excluded).
    pub fragments_shaded: u64,
    pub texels_fetched: u64,
    /// Texture bytes read from memory.
    pub bytes_read: u64,
    /// Color bytes written back to the framebuffer.
    pub bytes_written: u64,
    pub crc_bytes_hashed: u64,
    pub memo_hits: u64,
    pub memo_lookups: u64,
    pub vertices_transformed: u64,
    /// (triangle, tile) bin entries.
    pub triangles_binned: u64,
    /// Rendered tiles whose writeback was suppressed by an output CRC match.
    pub writebacks_suppressed: u64,
}

impl FrameStats {
    pub fn dram_bytes(&self) -> u64 {
        self.bytes_read + self.bytes_written
    }
}

impl AddAssign for FrameStats {
    fn add_assign(&mut self, o: FrameStats) {
        self.tiles_total += o.tiles_total;
        self.tiles_skipped += o.tiles_skipped;
        self.fragments_shaded += o.fragments_shaded;
        self.texels_fetched += o.texels_fetched;
        self.bytes_read += o.bytes_read;
        self.bytes_written += o.bytes_written;
        self.crc_bytes_hashed += o.crc_bytes_hashed;
        self.memo_hits += o.memo_hits;
        self.memo_lookups += o.memo_lookups;
        self.vertices_transformed += o.vertices_transformed;
        self.triangles_binned += o.triangles_binned;
        self.writebacks_suppressed += o.writebacks_suppressed;
    }
}

impl Add for FrameStats {
    type Output = FrameStats;

    fn add(mut self, o: FrameStats) -> FrameStats {
        self += o;
        self
    }
}

impl Sum for FrameStats {
    fn sum<I: Iterator<Item = FrameStats>>(iter: I) -> FrameStats {
        iter.fold(FrameStats::default(), Add::add)
    }
}

impl<'a> Sum<&'a FrameStats> for FrameStats {
    fn sum<I: Iterator<Item = &'a FrameStats>>(iter: I) -> FrameStats {
        iter.copied().sum()
    }
}

/// Per-event weights of the cost model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub cycles_per_vertex: f64,
    pub cycles_per_fragment: f64,
    pub cycles_per_texel: f64,
    pub cycles_per_crc_byte: f64,
    pub energy_per_fragment: f64,
    pub energy_per_texel: f64,
    pub energy_per_crc_byte: f64,
    pub energy_per_dram_byte: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            cycles_per_vertex: 8.0,
            cycles_per_fragment: 16.0,
            cycles_per_texel: 4.0,
            cycles_per_crc_byte: 0.25,
            energy_per_fragment: 40.0,
            energy_per_texel: 12.0,
            energy_per_crc_byte: 0.05,
            energy_per_dram_byte: 20.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum CostError {
    #[error("cost parameters: {0}")]
    Parse(String),
    #[error("cost parameter {0} is negative or not finite")]
    InvalidWeight(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CostParams {
    /// Reads a TOML table of weights; missing keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self, CostError> {
        let params: CostParams =
            toml::from_str(text).map_err(|e| CostError::Parse(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn from_file(path: &Path) -> Result<Self, CostError> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let weights = [
            ("cycles_per_vertex", self.cycles_per_vertex),
            ("cycles_per_fragment", self.cycles_per_fragment),
            ("cycles_per_texel", self.cycles_per_texel),
            ("cycles_per_crc_byte", self.cycles_per_crc_byte),
            ("energy_per_fragment", self.energy_per_fragment),
            ("energy_per_texel", self.energy_per_texel),
            ("energy_per_crc_byte", self.energy_per_crc_byte),
            ("energy_per_dram_byte", self.energy_per_dram_byte),
        ];
        match weights.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            Some((name, _)) => Err(CostError::InvalidWeight(name)),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModeledCost {
    pub cycles: f64,
    pub energy: f64,
}

impl Add for ModeledCost {
    type Output = ModeledCost;

    fn add(self, o: ModeledCost) -> ModeledCost {
        ModeledCost {
            cycles: self.cycles + o.cycles,
            energy: self.energy + o.energy,
        }
    }
}

pub fn estimate(stats: &FrameStats, params: &CostParams) -> ModeledCost {
    let n = |v: u64| v as f64;
    let cycles = n(stats.vertices_transformed) * params.cycles_per_vertex
        + n(stats.fragments_shaded) * params.cycles_per_fragment
        + n(stats.texels_fetched) * params.cycles_per_texel
        + n(stats.crc_bytes_hashed) * params.cycles_per_crc_byte;
    let energy = n(stats.fragments_shaded) * params.energy_per_fragment
        + n(stats.texels_fetched) * params.energy_per_texel
        + n(stats.crc_bytes_hashed) * params.energy_per_crc_byte
        + n(stats.dram_bytes()) * params.energy_per_dram_byte;
    ModeledCost { cycles, energy }
}

pub const CSV_HEADER: [&str; 13] = [
    "technique",
    "frame",
    "tiles_total",
    "tiles_skipped",
    "fragments_shaded",
    "texels_fetched",
    "bytes_read",
    "bytes_written",
    "crc_bytes_hashed",
    "memo_hits",
    "memo_lookups",
    "modeled_cycles",
    "modeled_energy",
];

/// One CSV row: a technique's counters and modeled cost for one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub technique: String,
    pub frame: usize,
    pub tiles_total: u64,
    pub tiles_skipped: u64,
    pub fragments_shaded: u64,
    pub texels_fetched: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub crc_bytes_hashed: u64,
    pub memo_hits: u64,
    pub memo_lookups: u64,
    pub modeled_cycles: f64,
    pub modeled_energy: f64,
}

impl ReportRow {
    pub fn new(technique: &str, frame: usize, stats: &FrameStats, params: &CostParams) -> Self {
        let cost = estimate(stats, params);
        ReportRow {
            technique: technique.to_string(),
            frame,
            tiles_total: stats.tiles_total,
            tiles_skipped: stats.tiles_skipped,
            fragments_shaded: stats.fragments_shaded,
            texels_fetched: stats.texels_fetched,
            bytes_read: stats.bytes_read,
            bytes_written: stats.bytes_written,
            crc_bytes_hashed: stats.crc_bytes_hashed,
            memo_hits: stats.memo_hits,
            memo_lookups: stats.memo_lookups,
            modeled_cycles: cost.cycles,
            modeled_energy: cost.energy,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write report to {path}: {source}")]
    Path { path: String, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_report<W: Write>(rows: &[ReportRow], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_file(rows: &[ReportRow], path: &Path) -> Result<(), ReportError> {
    let file = File::create(path).map_err(|source| ReportError::Path {
        path: path.display().to_string(),
        source,
    })?;
    write_report(rows, io::BufWriter::new(file))
}

pub fn read_report<R: Read>(input: R) -> Result<Vec<ReportRow>, ReportError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(ReportError::Io(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unexpected report header {header:?}"),
        )));
    }
    Ok(r.deserialize().collect::<Result<Vec<ReportRow>, _>>()?)
}

/// Whole-run comparison of one technique against the baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct TechniqueSummary {
    pub technique: String,
    pub totals: FrameStats,
    pub cost: ModeledCost,
    /// Baseline cycles over technique cycles, whole run.
    pub speedup: f64,
    /// Geometric mean of per-frame speedups.
    pub geomean_speedup: f64,
    /// Technique energy over baseline energy, whole run.
    pub energy_ratio: f64,
    pub skip_rate: f64,
    /// DRAM bytes avoided relative to the baseline.
    pub bytes_saved: i64,
}

pub fn summarize(
    technique: &str,
    frames: &[FrameStats],
    baseline: &[FrameStats],
    params: &CostParams,
) -> TechniqueSummary {
    assert_eq!(
        frames.len(),
        baseline.len(),
        "runs cover different frame counts"
    );
    let totals: FrameStats = frames.iter().sum();
    let base_totals: FrameStats = baseline.iter().sum();
    let cost = estimate(&totals, params);
    let base_cost = estimate(&base_totals, params);
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 1.0 };
    let log_sum: f64 = frames
        .iter()
        .zip(baseline)
        .map(|(f, b)| {
            let c = estimate(f, params).cycles;
            let bc = estimate(b, params).cycles;
            ratio(bc, c).max(f64::MIN_POSITIVE).ln()
        })
        .sum();
    TechniqueSummary {
        technique: technique.to_string(),
        totals,
        cost,
        speedup: ratio(base_cost.cycles, cost.cycles),
        geomean_speedup: if frames.is_empty() {
            1.0
        } else {
            (log_sum / frames.len() as f64).exp()
        },
        energy_ratio: ratio(cost.energy, base_cost.energy),
        skip_rate: ratio(totals.tiles_skipped as f64, totals.tiles_total as f64),
        bytes_saved: base_totals.dram_bytes() as i64 - totals.dram_bytes() as i64,
    }
}

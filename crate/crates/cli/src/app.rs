use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use tbr_core::cost::{
    summarize, write_report_file, CostParams, FrameStats, ReportRow, TechniqueSummary,
};
use tbr_core::crc::{build_tables, CrcImpl};
use tbr_core::redundancy::{
    FrameOutcome, SimOptions, Simulator, Technique, TechniqueConfig, VerifyReport,
};
use tbr_core::scene::{generate_scene, parse_trace, Expectation, FrameTrace};
use tbr_core::signature::SignatureDump;

use crate::args::Cli;

#[derive(Debug)]
pub struct AppError(pub String);

impl<E: std::fmt::Display> From<E> for AppError {
    fn from(e: E) -> Self {
        AppError(e.to_string())
    }
}

fn context<T, E: std::fmt::Display>(
    r: Result<T, E>,
    what: impl FnOnce() -> String,
) -> Result<T, AppError> {
    r.map_err(|e| AppError(format!("{}: {e}", what())))
}

struct Input {
    label: String,
    trace: FrameTrace,
    expectation: Option<Expectation>,
}

fn load_input(cli: &Cli) -> Result<Input, AppError> {
    if let Some(spec) = &cli.gen {
        let mut spec = *spec;
        if let Some(ts) = cli.tile_size {
            spec = spec.with_tile_size(ts);
        }
        let scene = generate_scene(&spec)?;
        return Ok(Input {
            label: format!("gen {spec}"),
            trace: scene.trace,
            expectation: Some(scene.expectation),
        });
    }
    let path = cli.trace.as_ref().expect("clap enforces one input");
    let text = context(fs::read_to_string(path), || {
        format!("cannot read {}", path.display())
    })?;
    let mut trace = context(parse_trace(&text), || path.display().to_string())?;
    if let Some(ts) = cli.tile_size {
        if trace.width < ts || trace.height < ts {
            return Err(AppError(format!(
                "tile size {ts} exceeds the {}x{} frame",
                trace.width, trace.height
            )));
        }
        trace.tile_size = ts;
    }
    Ok(Input {
        label: format!("trace {}", path.display()),
        trace,
        expectation: None,
    })
}

struct TechniqueRun {
    technique: Technique,
    stats: Vec<FrameStats>,
    fully_skipped: usize,
    expectation_agreement: Option<(usize, usize)>,
    reports: Vec<VerifyReport>,
    footprint: u64,
}

struct Dumps<'a> {
    frames: Option<PathBuf>,
    tiles: bool,
    signatures: Option<&'a mut SignatureDump<fs::File>>,
}

fn run_technique(
    input: &Input,
    technique: Technique,
    cli: &Cli,
    options: SimOptions,
    mut dumps: Dumps<'_>,
) -> Result<TechniqueRun, AppError> {
    let config = TechniqueConfig {
        mode: technique,
        verify: cli.verify,
        memo_capacity: cli.memo_capacity,
    };
    let mut sim = Simulator::for_trace(&input.trace, config, options)?;
    let grid = *sim.grid();
    for &(frame, tile) in &cli.force_skip {
        if tile >= grid.tile_count() {
            return Err(AppError(format!(
                "tile {tile} out of range ({} tiles)",
                grid.tile_count()
            )));
        }
        sim.force_skip(frame, tile);
    }
    if let Some(dir) = &dumps.frames {
        context(fs::create_dir_all(dir), || {
            format!("cannot create {}", dir.display())
        })?;
        if dumps.tiles {
            let tiles = dir.join("tiles");
            context(fs::create_dir_all(&tiles), || {
                format!("cannot create {}", tiles.display())
            })?;
        }
    }
    let mut run = TechniqueRun {
        technique,
        stats: Vec::new(),
        fully_skipped: 0,
        expectation_agreement: None,
        reports: Vec::new(),
        footprint: sim.signature_footprint(),
    };
    let check_expectation = technique.uses_signatures() && input.expectation.is_some();
    let mut agree = (0, 0);
    for frame in &input.trace.frames {
        let outcome: FrameOutcome = sim.run_frame(frame)?;
        let fb = sim.framebuffer();
        let n = outcome.frame;
        if let Some(dir) = &dumps.frames {
            let path = dir.join(format!("frame_{n:04}.ppm"));
            context(fb.write_ppm(&path), || {
                format!("cannot write {}", path.display())
            })?;
            if dumps.tiles {
                for t in (0..grid.tile_count()).filter(|&t| !outcome.skipped[t]) {
                    let path = dir
                        .join("tiles")
                        .join(format!("frame_{n:04}_tile_{t:04}.ppm"));
                    let bytes = fb.encode_rect_ppm(&grid.tile_rect(t));
                    context(fs::write(&path, bytes), || {
                        format!("cannot write {}", path.display())
                    })?;
                }
            }
        }
        if let Some(dump) = dumps.signatures.as_deref_mut() {
            if !outcome.signatures.is_empty() {
                dump.write_frame(n, &grid, &outcome.signatures, &outcome.skipped)?;
            }
        }
        if check_expectation && n >= 1 {
            let exp = input.expectation.as_ref().expect("checked above");
            if let Some(mask) = exp.mask(n, grid.tile_count()) {
                agree.1 += 1;
                agree.0 += usize::from(mask == outcome.skipped);
            }
        }
        run.fully_skipped += usize::from(outcome.fully_skipped());
        if let Some(report) = outcome.verify {
            run.reports.push(report);
        }
        run.stats.push(outcome.stats);
    }
    if check_expectation {
        run.expectation_agreement = Some(agree);
    }
    Ok(run)
}

fn write_crc_tables(kind: CrcImpl, path: &Path) -> Result<(), AppError> {
    let slices = match kind {
        CrcImpl::Bitwise => 1,
        CrcImpl::Sliced4 => 4,
        CrcImpl::Sliced8 => 8,
    };
    let tables = build_tables(slices)?;
    let file = context(fs::File::create(path), || {
        format!("cannot create {}", path.display())
    })?;
    let mut w = io::BufWriter::new(file);
    context(tables.write_hex_dump(&mut w), || {
        format!("cannot write {}", path.display())
    })?;
    context(w.flush(), || format!("cannot write {}", path.display()))
}

fn pct(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn print_run(
    out: &mut dyn Write,
    run: &TechniqueRun,
    summary: &TechniqueSummary,
) -> io::Result<()> {
    let t = &summary.totals;
    writeln!(out, "technique {}", run.technique)?;
    writeln!(
        out,
        "  tiles skipped: {}/{} ({:.1}%)",
        t.tiles_skipped,
        t.tiles_total,
        pct(t.tiles_skipped, t.tiles_total)
    )?;
    writeln!(
        out,
        "  frames fully skipped: {}/{}",
        run.fully_skipped,
        run.stats.len()
    )?;
    writeln!(out, "  fragments shaded: {}", t.fragments_shaded)?;
    writeln!(out, "  texels fetched: {}", t.texels_fetched)?;
    writeln!(
        out,
        "  dram bytes: {} read, {} written",
        t.bytes_read, t.bytes_written
    )?;
    writeln!(out, "  crc bytes hashed: {}", t.crc_bytes_hashed)?;
    if run.technique.uses_te() {
        writeln!(out, "  writebacks suppressed: {}", t.writebacks_suppressed)?;
    }
    if run.technique == Technique::Memo {
        writeln!(
            out,
            "  memo hits: {}/{} ({:.1}%)",
            t.memo_hits,
            t.memo_lookups,
            pct(t.memo_hits, t.memo_lookups)
        )?;
    }
    if run.footprint > 0 {
        writeln!(out, "  signature storage: {} bytes", run.footprint)?;
    }
    writeln!(
        out,
        "  modeled cycles: {:.0}, modeled energy: {:.0}",
        summary.cost.cycles, summary.cost.energy
    )?;
    writeln!(
        out,
        "  speedup vs none (model-dependent): {:.2}x whole run, {:.2}x geometric mean",
        summary.speedup, summary.geomean_speedup
    )?;
    writeln!(
        out,
        "  energy ratio vs none (model-dependent): {:.3}",
        summary.energy_ratio
    )?;
    if let Some((ok, total)) = run.expectation_agreement {
        writeln!(
            out,
            "  skip masks matching expectation: {ok}/{total} frames"
        )?;
    }
    Ok(())
}

fn print_comparison(out: &mut dyn Write, summaries: &[TechniqueSummary]) -> io::Result<()> {
    writeln!(out, "comparison (modeled, model-dependent ratios vs none)")?;
    writeln!(
        out,
        "  {:<8} {:>9} {:>9} {:>12} {:>10} {:>14}",
        "technique", "speedup", "geomean", "energy_ratio", "skip_rate", "bytes_saved"
    )?;
    for s in summaries {
        writeln!(
            out,
            "  {:<8} {:>8.2}x {:>8.2}x {:>12.3} {:>9.1}% {:>14}",
            s.technique,
            s.speedup,
            s.geomean_speedup,
            s.energy_ratio,
            100.0 * s.skip_rate,
            s.bytes_saved
        )?;
    }
    Ok(())
}

/// Runs the simulator; `Ok(false)` means verification found mismatches.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<bool, AppError> {
    let params = match &cli.cost {
        Some(path) => context(CostParams::from_file(path), || path.display().to_string())?,
        None => CostParams::default(),
    };
    let input = load_input(cli)?;
    if let Some(path) = &cli.dump_crc_tables {
        write_crc_tables(cli.crc, path)?;
    }
    if let Some(path) = &cli.emit_trace {
        context(fs::write(path, input.trace.to_text()), || {
            format!("cannot write {}", path.display())
        })?;
    }
    if let (Some(path), Some(exp)) = (&cli.emit_expect, &input.expectation) {
        context(fs::write(path, exp.to_text()), || {
            format!("cannot write {}", path.display())
        })?;
    }

    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let options = SimOptions {
        crc: cli.crc,
        threads,
        texture_identity: cli.texture_signature,
    };
    let techniques: Vec<Technique> = if cli.compare {
        Technique::ALL.to_vec()
    } else {
        vec![cli.technique]
    };

    let mut sig_dump = match &cli.dump_signatures {
        Some(path) => {
            let file = context(fs::File::create(path), || {
                format!("cannot create {}", path.display())
            })?;
            Some(SignatureDump::new(file))
        }
        None => None,
    };
    let mut runs = Vec::new();
    for &t in &techniques {
        let frames = cli.dump_frames.as_ref().map(|dir| {
            if cli.compare {
                dir.join(t.as_str())
            } else {
                dir.clone()
            }
        });
        let signatures = if t.uses_signatures()
            && !runs
                .iter()
                .any(|r: &TechniqueRun| r.technique.uses_signatures())
        {
            sig_dump.as_mut()
        } else {
            None
        };
        let dumps = Dumps {
            frames,
            tiles: cli.dump_tiles,
            signatures,
        };
        runs.push(run_technique(&input, t, cli, options, dumps)?);
    }
    if let Some(dump) = sig_dump {
        dump.finish()?;
    }

    let baseline = match runs.iter().find(|r| r.technique == Technique::None) {
        Some(r) => r.stats.clone(),
        None => {
            let quiet = TechniqueConfig::new(Technique::None);
            let mut sim = Simulator::for_trace(&input.trace, quiet, options)?;
            input
                .trace
                .frames
                .iter()
                .map(|f| sim.run_frame(f).map(|o| o.stats))
                .collect::<Result<Vec<_>, _>>()?
        }
    };

    if let Some(path) = &cli.stats {
        let rows: Vec<ReportRow> = runs
            .iter()
            .flat_map(|r| {
                r.stats
                    .iter()
                    .enumerate()
                    .map(|(n, s)| ReportRow::new(r.technique.as_str(), n, s, &params))
            })
            .collect();
        write_report_file(&rows, path)?;
    }

    let grid = input.trace.grid();
    writeln!(out, "input: {}", input.label)?;
    writeln!(
        out,
        "grid: {}x{}, tile {} ({} tiles), {} frames",
        grid.width,
        grid.height,
        grid.tile_size,
        grid.tile_count(),
        input.trace.frames.len()
    )?;
    writeln!(out, "crc: {}, threads: {threads}", cli.crc)?;
    let summaries: Vec<TechniqueSummary> = runs
        .iter()
        .map(|r| summarize(r.technique.as_str(), &r.stats, &baseline, &params))
        .collect();
    for (r, s) in runs.iter().zip(&summaries) {
        print_run(out, r, s)?;
    }
    if cli.compare {
        print_comparison(out, &summaries)?;
    }

    if !cli.verify {
        return Ok(true);
    }
    let mut clean = true;
    for r in &runs {
        for rep in r.reports.iter().filter(|rep| !rep.is_clean()) {
            clean = false;
            let tiles = |v: &[usize]| {
                v.iter()
                    .map(|t| t.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            if !rep.collisions.is_empty() {
                writeln!(
                    out,
                    "verify {} frame {}: signature collision in tiles {}",
                    r.technique,
                    rep.frame,
                    tiles(&rep.collisions)
                )?;
            }
            if !rep.mismatches.is_empty() {
                writeln!(
                    out,
                    "verify {} frame {}: pixel mismatch in tiles {}",
                    r.technique,
                    rep.frame,
                    tiles(&rep.mismatches)
                )?;
            }
            if !rep.containment_failures.is_empty() {
                writeln!(
                    out,
                    "verify {} frame {}: skipped tiles differ when rendered: {}",
                    r.technique,
                    rep.frame,
                    tiles(&rep.containment_failures)
                )?;
            }
        }
    }
    writeln!(out, "verify: {}", if clean { "clean" } else { "FAILED" })?;
    Ok(clean)
}

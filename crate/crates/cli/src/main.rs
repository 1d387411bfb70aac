use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use gifstream_core::container::{GIFS_MAGIC, GIFU_MAGIC};
use gifstream_core::{
    decode_gop_with, encode_gop_with_report, export_ply, generate_synthetic, read_model, size_breakdown,
    write_model, DecodeOptions, Error, FrameDecoder, GopConfig, GopModel,
};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "gifstream", version, about = "Encode, decode and inspect 4D Gaussian GOP models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic model (GIFU).
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        anchors: usize,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        /// Time-independent feature channels (C).
        #[arg(long, default_value_t = 24)]
        channels: usize,
        /// Feature stream channels per frame (P).
        #[arg(long, default_value_t = 4)]
        stream_channels: usize,
        /// Gaussians per anchor (K).
        #[arg(long, default_value_t = 5)]
        gaussians: usize,
        /// Fraction of anchors that keep their feature stream.
        #[arg(long, default_value_t = 0.3)]
        sparsity: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Compress a GIFU model into a GIFS bitstream.
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed of the grid sort.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Reconstruct the quantized model from a GIFS bitstream.
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write the Gaussian primitives of one frame as PLY.
    Expand {
        /// GIFS bitstream or GIFU model.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        time_index: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print the size breakdown of a GIFS bitstream.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

/// Marks an error as the caller's fault (exit 1) rather than the data's (exit 2).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Lifts library errors caused by bad flags into usage errors.
fn classify(e: Error) -> anyhow::Error {
    match e {
        Error::InvalidConfig(_) | Error::TimeIndex { .. } => usage(e.to_string()),
        other => other.into(),
    }
}

fn read_input(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Writes through a temporary file in the target directory so a failed run
/// never leaves partial output behind.
fn write_output(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot create a file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn load_any(path: &Path) -> anyhow::Result<GopModel> {
    let bytes = read_input(path)?;
    if bytes.starts_with(GIFS_MAGIC) {
        Ok(decode_gop_with(&bytes, &DecodeOptions::default())?.0)
    } else if bytes.starts_with(GIFU_MAGIC) {
        Ok(read_model(&bytes)?)
    } else {
        Err(anyhow!("{} is neither a GIFS bitstream nor a GIFU model", path.display()))
    }
}

fn emit(json: bool, fields: Map<String, Value>, text: String) {
    if json {
        println!("{}", Value::Object(fields));
    } else {
        print!("{text}");
    }
}

fn synth(
    seed: u64,
    config: GopConfig,
    sparsity: f64,
    out: &Path,
    json: bool,
) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(usage(format!("--sparsity must lie in [0, 1], got {sparsity}")));
    }
    config.check().map_err(classify)?;
    let model = generate_synthetic(seed, &config, sparsity).map_err(classify)?;
    write_output(out, &write_model(&model)?)?;
    let present = model.present_streams();
    let mut f = Map::new();
    f.insert("anchors".into(), json!(config.n_anchors));
    f.insert("gaussians_per_anchor".into(), json!(config.gaussians_per_anchor));
    f.insert("frames".into(), json!(config.frames));
    f.insert("present_streams".into(), json!(present));
    f.insert("pruned_streams".into(), json!(config.n_anchors - present));
    let text = format!(
        "wrote {}: {} anchors x {} Gaussians, {} frames, {} of {} streams present\n",
        out.display(),
        config.n_anchors,
        config.gaussians_per_anchor,
        config.frames,
        present,
        config.n_anchors
    );
    emit(json, f, text);
    Ok(())
}

fn encode(input: &Path, out: &Path, seed: u64, json: bool) -> anyhow::Result<()> {
    let model = read_model(&read_input(input)?)?;
    let (bytes, report) = encode_gop_with_report(&model, seed)?;
    write_output(out, &bytes)?;
    let breakdown = size_breakdown(&bytes)?;

    let mut f = Map::new();
    let mut text = format!("wrote {}: {} bytes ({} header)\n", out.display(), bytes.len(), report.header_bytes);
    f.insert("total_bytes".into(), json!(report.total_bytes));
    f.insert("header_bytes".into(), json!(report.header_bytes));
    f.insert("present_streams".into(), json!(report.present_streams));
    f.insert("vgf_pixels".into(), json!(report.vgf_pixels));
    text.push_str("section        bytes    estimate  ratio\n");
    let (mut est_total, mut coded_total) = (0.0, 0usize);
    for s in &report.sections {
        let name = s.id.name();
        f.insert(format!("{}_bytes", name.to_lowercase()), json!(s.bytes));
        match s.estimated_bits {
            Some(bits) => {
                let est = bits / 8.0;
                est_total += est;
                coded_total += s.bytes;
                f.insert(format!("{}_estimate_bytes", name.to_lowercase()), json!(est));
                let ratio = if s.bytes > 0 { est / s.bytes as f64 } else { 1.0 };
                text.push_str(&format!("{name:<12} {:>9} {est:>11.1}  {ratio:.4}\n", s.bytes));
            }
            None => text.push_str(&format!("{name:<12} {:>9}           -\n", s.bytes)),
        }
    }
    let ratio = if coded_total > 0 { est_total / coded_total as f64 } else { 1.0 };
    f.insert("coded_bytes".into(), json!(coded_total));
    f.insert("estimate_bytes".into(), json!(est_total));
    f.insert("estimate_ratio".into(), json!(ratio));
    text.push_str(&format!(
        "entropy-coded sections: {coded_total} bytes, estimate {est_total:.1} bytes, ratio {ratio:.4}\n"
    ));
    for (label, b) in breakdown.categories() {
        f.insert(label.into(), json!(b));
        text.push_str(&format!("{label}: {b} bytes\n"));
    }
    f.insert("bits_per_anchor_per_frame".into(), json!(breakdown.bits_per_anchor_per_frame()));
    text.push_str(&format!(
        "bits per anchor per frame: {:.2}\n",
        breakdown.bits_per_anchor_per_frame()
    ));
    emit(json, f, text);
    Ok(())
}

fn decode(input: &Path, out: &Path, json: bool) -> anyhow::Result<()> {
    let bytes = read_input(input)?;
    let (model, stats) = decode_gop_with(&bytes, &DecodeOptions::default())?;
    write_output(out, &write_model(&model)?)?;
    let (p, e, t) = (
        stats.prediction.as_secs_f64(),
        stats.entropy.as_secs_f64(),
        stats.total.as_secs_f64(),
    );
    let mut f = Map::new();
    f.insert("anchors".into(), json!(model.config.n_anchors));
    f.insert("frames".into(), json!(model.config.frames));
    f.insert("prediction_seconds".into(), json!(p));
    f.insert("entropy_seconds".into(), json!(e));
    f.insert("total_seconds".into(), json!(t));
    let text = format!(
        "wrote {}: {} anchors, {} frames\ndistribution prediction: {p:.3} s\nentropy decoding: {e:.3} s\ntotal: {t:.3} s\n",
        out.display(),
        model.config.n_anchors,
        model.config.frames
    );
    emit(json, f, text);
    Ok(())
}

fn expand(input: &Path, t: usize, out: &Path, json: bool) -> anyhow::Result<()> {
    let model = load_any(input)?;
    if t >= model.config.frames {
        return Err(usage(format!(
            "--time-index {t} is out of range, the GOP has {} frames",
            model.config.frames
        )));
    }
    let frame = FrameDecoder::new(&model)?.decode(t).map_err(classify)?;
    write_output(out, &export_ply(&frame))?;
    let mut f = Map::new();
    f.insert("time_index".into(), json!(t));
    f.insert("timestamp".into(), json!(frame.timestamp));
    f.insert("vertices".into(), json!(frame.primitives.len()));
    let text = format!(
        "wrote {}: {} Gaussians at frame {t} (t = {})\n",
        out.display(),
        frame.primitives.len(),
        frame.timestamp
    );
    emit(json, f, text);
    Ok(())
}

fn stats(input: &Path, json: bool) -> anyhow::Result<()> {
    let b = size_breakdown(&read_input(input)?)?;
    let mut f = Map::new();
    f.insert("total_bytes".into(), json!(b.total_bytes));
    f.insert("header_bytes".into(), json!(b.header_bytes));
    let mut text = format!("total: {} bytes ({} header)\n", b.total_bytes, b.header_bytes);
    for (label, bytes) in b.categories() {
        f.insert(label.into(), json!(bytes));
        let pct = 100.0 * bytes as f64 / (b.total_bytes - b.header_bytes).max(1) as f64;
        text.push_str(&format!("{label:<26} {bytes:>10} bytes {pct:>6.2}%\n"));
    }
    f.insert("bits_per_anchor_per_frame".into(), json!(b.bits_per_anchor_per_frame()));
    text.push_str(&format!("bits per anchor per frame: {:.2}\n", b.bits_per_anchor_per_frame()));
    emit(json, f, text);
    Ok(())
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("GIFSTREAM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| usage(format!("GIFSTREAM_THREADS must be a non-negative integer, got {raw:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth {
            seed,
            anchors,
            frames,
            channels,
            stream_channels,
            gaussians,
            sparsity,
            out,
            json,
        } => synth(
            seed,
            GopConfig::new(anchors, gaussians, channels, stream_channels, frames),
            sparsity,
            &out,
            json,
        ),
        Command::Encode { input, out, seed, json } => encode(&input, &out, seed, json),
        Command::Decode { input, out, json } => decode(&input, &out, json),
        Command::Expand {
            input,
            time_index,
            out,
            json,
        } => expand(&input, time_index, &out, json),
        Command::Stats { input, json } => stats(&input, json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

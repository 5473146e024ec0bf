//! Subcommand implementations. Each returns the library `Result`; exit-code
//! mapping happens in main.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{Rgb, RgbImage};

use amnet_core::checkpoint;
use amnet_core::eval::ope_evaluate;
use amnet_core::sequence::{load_dataset, load_otb_sequence, save_otb_sequence};
use amnet_core::synth::synth_dataset;
use amnet_core::tracker::{track_sequence, TrackStats};
use amnet_core::train::train;
use amnet_core::{AmNet, AmNetModel, BBox, Error, Result, SequenceRecord};

use crate::config::RunConfig;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source: e }
}

fn ensure_parent_dir(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    Ok(())
}

/// `model.amnt` gets its loss history next to it as `model.amnt.loss.csv`.
fn loss_csv_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".loss.csv");
    ckpt.with_file_name(name)
}

pub fn cmd_train(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }

    let net = AmNet::new(cfg.model.clone())?;
    let mut store = net.init_params::<f32>(cfg.train.seed);
    let corpus = synth_dataset(&cfg.synth)?;
    let logs = train(&net, &mut store, &corpus, &cfg.train)?;

    ensure_parent_dir(out)?;
    checkpoint::save(&store, out)?;

    let mut csv = String::from("step,lr,loss\n");
    for log in &logs {
        writeln!(csv, "{},{},{}", log.step, log.lr, log.loss).expect("string write");
    }
    let csv_path = loss_csv_path(out);
    fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;

    let first = logs.first().map(|l| l.loss).unwrap_or(f64::NAN);
    let last = logs.last().map(|l| l.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} steps on {} sequences: loss {first:.6} -> {last:.6}",
        logs.len(),
        corpus.len(),
    );
    println!("checkpoint: {}", out.display());
    println!("loss log:   {}", csv_path.display());
    Ok(())
}

fn draw_box(img: &mut RgbImage, b: &BBox, rgb: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = b.x.round() as i64;
    let y0 = b.y.round() as i64;
    let x1 = x0 + (b.w.round() as i64).max(1) - 1;
    let y1 = y0 + (b.h.round() as i64).max(1) - 1;
    let mut put = |x: i64, y: i64| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, Rgb(rgb));
        }
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

fn render_sequence(dir: &Path, seq: &SequenceRecord, boxes: &[BBox]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (i, b) in boxes.iter().enumerate() {
        let mut frame = seq.frame(i)?;
        draw_box(&mut frame, b, [255, 32, 32]);
        let path = dir.join(format!("{:04}.png", i + 1));
        frame
            .save(&path)
            .map_err(|e| Error::Image { path: path.display().to_string(), reason: e.to_string() })?;
    }
    Ok(())
}

pub fn cmd_track(
    ckpt: &Path,
    seq_dir: &Path,
    out: &Path,
    render: Option<&Path>,
    config: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let net = AmNet::new(cfg.model.clone())?;
    let store = checkpoint::load(ckpt)?;
    let model = AmNetModel::new(net, store)?;
    let seq = load_otb_sequence(seq_dir)?;

    let (boxes, stats) = track_sequence(&model, &seq)?;

    ensure_parent_dir(out)?;
    let mut csv = String::from("frame_index,x,y,w,h\n");
    for (i, b) in boxes.iter().enumerate() {
        writeln!(csv, "{},{},{},{},{}", i, b.x, b.y, b.w, b.h).expect("string write");
    }
    fs::write(out, csv).map_err(|e| io_err(out, e))?;

    if let Some(dir) = render {
        render_sequence(dir, &seq, &boxes)?;
    }

    println!(
        "tracked '{}': {} frames ({} after init) at {:.2} fps",
        seq.name,
        seq.len(),
        stats.tracked_frames,
        stats.fps,
    );
    println!("boxes: {}", out.display());
    Ok(())
}

pub struct EvalArgs<'a> {
    pub ckpt: Option<&'a Path>,
    pub dataset: Option<&'a Path>,
    pub out: &'a Path,
    pub ablation: bool,
    pub ablation_ckpt: Option<&'a Path>,
    pub oracle: bool,
    pub config: Option<&'a Path>,
}

/// Ground-truth echo: a perfect-by-construction tracker used to sanity-check
/// the metric pipeline (precision must pin at 1, success AUC at 50/51).
fn oracle_track(seq: &SequenceRecord) -> Result<(Vec<BBox>, TrackStats)> {
    let start = Instant::now();
    let boxes = seq.boxes.clone();
    let seconds = start.elapsed().as_secs_f64();
    let tracked = seq.len().saturating_sub(1);
    let fps = if tracked > 0 && seconds > 0.0 { tracked as f64 / seconds } else { 0.0 };
    Ok((boxes, TrackStats { tracked_frames: tracked, seconds, fps }))
}

pub fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = RunConfig::load_or_default(args.config)?;
    let root = args
        .dataset
        .map(Path::to_path_buf)
        .or_else(|| cfg.eval.dataset.clone())
        .ok_or_else(|| Error::Config {
            field: "eval.dataset".to_string(),
            reason: "no dataset root given (--dataset flag or config field)".to_string(),
        })?;
    let names = if cfg.eval.sequences.is_empty() { None } else { Some(&cfg.eval.sequences[..]) };
    let seqs = load_dataset(&root, names)?;

    let report = if args.oracle {
        ope_evaluate(oracle_track, &seqs)?
    } else {
        let ckpt = args.ckpt.ok_or_else(|| Error::Config {
            field: "--ckpt".to_string(),
            reason: "checkpoint required unless --oracle".to_string(),
        })?;
        let net = AmNet::new(cfg.model.clone())?;
        let model = AmNetModel::new(net, checkpoint::load(ckpt)?)?;
        ope_evaluate(|seq| track_sequence(&model, seq), &seqs)?
    };
    report.write(args.out)?;

    let label = if args.oracle { "oracle" } else { "amnet" };
    println!(
        "{label}: {} sequences, success AUC {:.4}, precision@20 {:.4}, mean fps {:.2}",
        report.per_sequence.len(),
        report.success_auc,
        report.precision_at_20,
        report.fps,
    );

    if args.ablation {
        let net = AmNet::new(cfg.model.clone())?;
        // Either a separately trained appearance-only checkpoint, or the
        // main checkpoint with the motion channel of the fusion conv zeroed.
        let mut store = match args.ablation_ckpt.or(args.ckpt) {
            Some(p) => checkpoint::load(p)?,
            None => {
                return Err(Error::Config {
                    field: "--ablation-ckpt".to_string(),
                    reason: "ablation needs a checkpoint".to_string(),
                })
            }
        };
        net.ablate_motion(&mut store)?;
        let model = AmNetModel::new(net, store)?;
        let ablated = ope_evaluate(|seq| track_sequence(&model, seq), &seqs)?;
        let abl_dir = args.out.join("ablation");
        ablated.write(&abl_dir)?;
        println!(
            "anet-only: {} sequences, success AUC {:.4}, precision@20 {:.4}, mean fps {:.2}",
            ablated.per_sequence.len(),
            ablated.success_auc,
            ablated.precision_at_20,
            ablated.fps,
        );
        println!("ablation report: {}", abl_dir.display());
    }

    println!("report: {}", args.out.display());
    Ok(())
}

pub fn cmd_synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.synth.base_seed = s;
    }
    let dataset = synth_dataset(&cfg.synth)?;
    for seq in &dataset {
        save_otb_sequence(out.join(&seq.name), seq)?;
    }
    println!(
        "wrote {} sequences x {} frames under {}",
        dataset.len(),
        cfg.synth.frames,
        out.display(),
    );
    Ok(())
}

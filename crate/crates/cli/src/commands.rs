//! Subcommand bodies. Each one resolves its run directory first, so the
//! configuration that produced an output always sits next to it.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subaru_core::audio::{degrade, load_wav, resample, save_wav};
use subaru_core::metrics::{evaluate_clip, lsd, MetricReport};
use subaru_core::power::{fit_power_model, parse_setting, savings_ratio, POWER_TABLE};
use subaru_core::synth::{utterance, write_corpus, CorpusSpec, Speaker};
use subaru_core::{AudioClip, DegradationSpec, Manifest, Split};
use subaru_model::checkpoint::restore_model;
use subaru_model::data::{load_examples, noise_pool, Batches};
use subaru_model::stream::{latency_report, simulate_stream, slice_frames, Injection};
use subaru_model::trainer::{train_loop, Trainer};
use subaru_model::{Plans, Subaru};
use subaru_nn::ParamStore;

use crate::config::RunConfig;
use crate::plot::{loss_svg, sweep_svg, SweepPoint};
use crate::Command;

/// Bad arguments discovered after parsing; reported with the usage exit code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(command: Command, mut cfg: RunConfig) -> Result<()> {
    let name = command.name();
    match command {
        Command::Degrade {
            input,
            output,
            rate,
            bits,
            snr,
            noise,
        } => {
            let d = &mut cfg.degrade;
            d.rate = rate.unwrap_or(d.rate);
            d.bits = bits.unwrap_or(d.bits);
            d.snr_db = snr.or(d.snr_db);
            d.noise = noise.or(d.noise.take());
            let dir = cfg.prepare_run_dir(name)?;
            degrade_cmd(&cfg, &input, &output)?;
            println!("wrote {} (config in {})", output.display(), dir.display());
        }
        Command::Train { manifest, resume } => {
            if manifest.is_some() {
                cfg.corpus.manifest = manifest;
            }
            let dir = cfg.prepare_run_dir(name)?;
            train_cmd(&cfg, &dir, resume.as_deref())?;
        }
        Command::Enhance {
            checkpoint,
            acm,
            output,
            bcm,
        } => {
            let dir = cfg.prepare_run_dir(name)?;
            enhance_cmd(&checkpoint, &acm, bcm.as_deref(), &output)?;
            println!("wrote {} (config in {})", output.display(), dir.display());
        }
        Command::StreamSim {
            acm,
            bcm,
            checkpoint,
            inference_ms,
            transport_ms,
            frame_s,
        } => {
            let s = &mut cfg.stream;
            s.inference_ms = inference_ms.or(s.inference_ms);
            s.transport_ms = transport_ms.unwrap_or(s.transport_ms);
            s.frame_s = frame_s.unwrap_or(s.frame_s);
            let dir = cfg.prepare_run_dir(name)?;
            stream_cmd(&cfg, &dir, &acm, bcm.as_deref(), checkpoint.as_deref())?;
        }
        Command::Evaluate { reference, est } => {
            let dir = cfg.prepare_run_dir(name)?;
            evaluate_cmd(&dir, &reference, &est)?;
        }
        Command::PowerReport { from, to } => {
            let high = parse_setting(&from).map_err(|e| usage(format!("--from: {e}")))?;
            let low = parse_setting(&to).map_err(|e| usage(format!("--to: {e}")))?;
            let dir = cfg.prepare_run_dir(name)?;
            power_cmd(&dir, high, low)?;
        }
        Command::Sweep { input } => {
            let dir = cfg.prepare_run_dir(name)?;
            sweep_cmd(&cfg, &dir, input.as_deref())?;
        }
        Command::Plot { sweep, metrics } => {
            if sweep.is_none() && metrics.is_none() {
                return Err(usage("plot needs --sweep and/or --metrics"));
            }
            let dir = cfg.prepare_run_dir(name)?;
            plot_cmd(&dir, sweep.as_deref(), metrics.as_deref())?;
        }
        Command::SynthCorpus { out } => {
            let dir = cfg.prepare_run_dir(name)?;
            let corpus = write_corpus(&out, &corpus_spec(&cfg))?;
            println!(
                "wrote {} clips, manifest {} (config in {})",
                corpus.manifest.entries.len(),
                corpus.manifest_path.display(),
                dir.display()
            );
        }
    }
    Ok(())
}

/// Loads a WAV file and resamples it to `rate` when needed.
fn load_at(path: &Path, rate: u32) -> Result<AudioClip> {
    let clip = load_wav(path).with_context(|| format!("loading {}", path.display()))?;
    if clip.sample_rate == rate {
        Ok(clip)
    } else {
        Ok(resample(&clip, rate as i64)?)
    }
}

fn degrade_cmd(cfg: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let clip = load_wav(input).with_context(|| format!("loading {}", input.display()))?;
    let noise = match (&cfg.degrade.noise, cfg.degrade.snr_db) {
        (Some(p), Some(_)) => Some(load_at(p, clip.sample_rate)?),
        (None, Some(_)) => return Err(usage("--snr needs --noise")),
        _ => None,
    };
    let spec = cfg.degrade.spec();
    spec.validate(&clip).map_err(|e| usage(e.to_string()))?;
    let out = degrade(&clip, &spec, noise.as_ref())?;
    save_wav(&out, output)?;
    Ok(())
}

fn corpus_spec(cfg: &RunConfig) -> CorpusSpec {
    let c = &cfg.corpus;
    CorpusSpec {
        speakers: c.speakers,
        clips_per_speaker: c.clips_per_speaker,
        seconds: c.seconds,
        rate: cfg.network.target_rate,
        val_fraction: c.val_fraction,
        test_fraction: c.test_fraction,
        noise_clips: c.noise_clips,
        seed: cfg.run.seed,
    }
}

fn train_cmd(cfg: &RunConfig, dir: &Path, resume: Option<&Path>) -> Result<()> {
    if cfg.data.source_rate != cfg.network.source_rate {
        return Err(usage(format!(
            "data.source_rate {} differs from network.source_rate {}",
            cfg.data.source_rate, cfg.network.source_rate
        )));
    }
    let rate = cfg.network.target_rate;
    let (manifest, corpus_noise) = match &cfg.corpus.manifest {
        Some(p) => (Manifest::load(p)?, None),
        None => {
            let corpus = write_corpus(&dir.join("corpus"), &corpus_spec(cfg))?;
            println!("synthesised corpus at {}", corpus.manifest_path.display());
            (corpus.manifest, Some(corpus.noise_dir))
        }
    };
    let slice = cfg.data.slice_seconds;
    let train_ex = load_examples(&manifest, Split::Train, slice, rate)?;
    let val_ex = load_examples(&manifest, Split::Val, slice, rate)?;
    if train_ex.is_empty() {
        bail!("no training examples in the manifest");
    }
    let noise_dir = cfg.data.noise_dir.clone().or(corpus_noise);
    let noises = noise_pool(noise_dir.as_deref(), rate, cfg.run.seed)?;
    let train = Batches::new(train_ex, noises.clone(), cfg.data.clone(), cfg.train.clone(), rate)?;
    let val = if val_ex.is_empty() {
        Vec::new()
    } else {
        Batches::new(val_ex, noises, cfg.data.clone(), cfg.train.clone(), rate)?.fixed()?
    };
    let mut trainer = Trainer::new(cfg.network.clone(), cfg.train.clone())?;
    if let Some(p) = resume {
        trainer.resume(p)?;
        println!("resumed from {} at epoch {}", p.display(), trainer.epoch);
    }
    println!(
        "training on {} batches per epoch, {} validation clips",
        train.len(),
        val.len()
    );
    let summary = train_loop(&mut trainer, &train, &val, dir)?;
    for e in &summary.epochs {
        let n = e.epoch + 1;
        match &e.val {
            Some(v) => println!(
                "epoch {:>3}  step {:>6}  loss {:.4}  val LSD {:.3} (input {:.3})  SI-SDR {:.2} (input {:.2})",
                n, e.step, e.mean_total, v.enhanced.lsd, v.baseline.lsd, v.enhanced.si_sdr, v.baseline.si_sdr
            ),
            None => println!("epoch {n:>3}  step {:>6}  loss {:.4}", e.step, e.mean_total),
        }
    }
    serde_json::to_writer_pretty(File::create(dir.join("summary.json"))?, &summary)?;
    println!("outputs in {}", dir.display());
    Ok(())
}

fn enhance_cmd(checkpoint: &Path, acm: &Path, bcm: Option<&Path>, output: &Path) -> Result<()> {
    let (model, store, _) = restore_model::<f32>(checkpoint)?;
    let plans = Plans::new(&model.config)?;
    let a = load_at(acm, model.config.source_rate)?;
    let b = bcm.map(load_wav).transpose()?;
    let out = model.enhance(&store, &plans, &a, b.as_ref())?;
    save_wav(&out, output)?;
    Ok(())
}

fn stream_cmd(cfg: &RunConfig, dir: &Path, acm: &Path, bcm: Option<&Path>, checkpoint: Option<&Path>) -> Result<()> {
    let (model, store) = match checkpoint {
        Some(p) => {
            let (m, s, _) = restore_model::<f32>(p)?;
            (m, s)
        }
        None => {
            let mut store = ParamStore::<f32>::new();
            let m = Subaru::new(cfg.network.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(cfg.run.seed))?;
            (m, store)
        }
    };
    let plans = Plans::new(&model.config)?;
    let a = load_at(acm, model.config.source_rate)?;
    let b = bcm.map(load_wav).transpose()?;
    let frames = slice_frames(&a, b.as_ref(), cfg.stream.frame_s)?;
    if frames.is_empty() {
        return Err(usage(format!("capture shorter than one {} s frame", cfg.stream.frame_s)));
    }
    let injection = cfg.stream.inference_ms.map(|ms| Injection::constant(cfg.stream.transport_ms, ms));
    let (clips, report) = simulate_stream(&model, &store, &plans, &frames, injection.as_ref())?;
    let samples: Vec<f64> = clips.iter().flat_map(|c| c.samples.iter().copied()).collect();
    save_wav(&AudioClip::new(samples, model.config.target_rate), dir.join("enhanced.wav"))?;
    report.write_records(BufWriter::new(File::create(dir.join("frames.jsonl"))?))?;
    let text = latency_report(&report);
    std::fs::write(dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

fn evaluate_cmd(dir: &Path, reference: &Path, est: &Path) -> Result<()> {
    let refs = wav_files(reference)?;
    if refs.is_empty() {
        return Err(usage(format!("no WAV files in {}", reference.display())));
    }
    let mut report = MetricReport::default();
    for r in refs {
        let name = r.file_name().expect("listed files have names");
        let e = est.join(name);
        if !e.is_file() {
            bail!("no estimate for {}", name.to_string_lossy());
        }
        let mut rc = load_wav(&r)?;
        let mut ec = load_at(&e, rc.sample_rate)?;
        let n = rc.len().min(ec.len());
        rc.samples.truncate(n);
        ec.samples.truncate(n);
        let id = r.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        report.records.push(evaluate_clip(&id, &rc, &ec)?);
    }
    report.write_records(File::create(dir.join("records.csv"))?)?;
    let table = report.table();
    std::fs::write(dir.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(serde::Serialize)]
struct PowerRow {
    rate: u32,
    bits: u32,
    current_ua: f64,
    power_mw: f64,
}

fn power_cmd(dir: &Path, high: (u32, u32), low: (u32, u32)) -> Result<()> {
    let ratio = savings_ratio(high, low).map_err(|e| usage(e.to_string()))?;
    let mut text = format!("{:>7} {:>5} {:>11} {:>9}\n", "rate", "bits", "current_uA", "power_mW");
    let mut w = csv::Writer::from_path(dir.join("power.csv"))?;
    for r in &POWER_TABLE {
        text += &format!("{:>7} {:>5} {:>11.0} {:>9.3}\n", r.rate, r.bits, r.current_ua, r.power_mw);
        w.serialize(PowerRow {
            rate: r.rate,
            bits: r.bits,
            current_ua: r.current_ua,
            power_mw: r.power_mw,
        })?;
    }
    w.flush()?;
    text += &format!(
        "savings {} Hz/{}-bit over {} Hz/{}-bit: {:.2}x\n\n",
        high.0, high.1, low.0, low.1, ratio
    );
    text += &fit_power_model().report();
    std::fs::write(dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn sweep_cmd(cfg: &RunConfig, dir: &Path, input: Option<&Path>) -> Result<()> {
    let s = &cfg.sweep;
    let clips: Vec<AudioClip> = match input {
        Some(d) => wav_files(d)?.iter().map(load_wav).collect::<subaru_core::Result<_>>()?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
            (0..s.clips)
                .map(|i| {
                    let spk = Speaker::random(format!("s{i}"), &mut rng);
                    utterance(&spk, s.seconds, s.source_rate, &mut rng)
                })
                .collect()
        }
    };
    if clips.is_empty() {
        return Err(usage("no clips to sweep"));
    }
    let mut points = Vec::new();
    for &bits in &s.bits {
        for &rate in &s.rates {
            let mut sum = 0.0;
            for c in &clips {
                let spec = DegradationSpec {
                    hpf_cutoff: cfg.degrade.hpf_cutoff,
                    ..DegradationSpec::new(rate, bits)
                };
                spec.validate(c).map_err(|e| usage(e.to_string()))?;
                let d = degrade(c, &spec, None)?;
                let mut up = resample(&d, c.sample_rate as i64)?.samples;
                up.resize(c.len(), 0.0);
                sum += lsd(&c.samples, &up)?;
            }
            points.push(SweepPoint {
                rate,
                bits,
                mean_lsd: sum / clips.len() as f64,
                clips: clips.len(),
            });
        }
    }
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    for p in &points {
        w.serialize(p)?;
    }
    w.flush()?;
    let mut text = format!("{:>8}", "rate");
    for b in &s.bits {
        text += &format!(" {:>8}", format!("{b}-bit"));
    }
    text.push('\n');
    for &rate in &s.rates {
        text += &format!("{rate:>8}");
        for &b in &s.bits {
            let p = points.iter().find(|p| p.rate == rate && p.bits == b).expect("every cell computed");
            text += &format!(" {:>8.3}", p.mean_lsd);
        }
        text.push('\n');
    }
    std::fs::write(dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

#[derive(serde::Deserialize)]
struct LossRow {
    batch: f64,
    total: f64,
}

fn plot_cmd(dir: &Path, sweep: Option<&Path>, metrics: Option<&Path>) -> Result<()> {
    if let Some(p) = sweep {
        let points: Vec<SweepPoint> = csv::Reader::from_path(p)
            .with_context(|| format!("reading {}", p.display()))?
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        let out = dir.join("sweep.svg");
        sweep_svg(&points, &out)?;
        println!("wrote {}", out.display());
    }
    if let Some(p) = metrics {
        let rows: Vec<LossRow> = csv::Reader::from_path(p)
            .with_context(|| format!("reading {}", p.display()))?
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.batch, r.total)).collect();
        let out = dir.join("loss.svg");
        loss_svg(&points, &out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

//! Subcommand implementations. Every command that writes a directory also
//! writes its resolved [`RunConfig`] there.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ndarray::{Array2, Axis, Ix2, Ix3};
use serde::Serialize;
use tamt_core::cqt::{energy_normalize, CqtKernelBank};
use tamt_core::dataset::{self, manifest_path, read_manifest, song_score, write_dataset};
use tamt_core::eval::{pit_match, PitResult, DEFAULT_THRESHOLD};
use tamt_core::rng::derive_seed;
use tamt_core::separation::{analyze, extract_note_events, separate_analysis, Level, SeparationResult};
use tamt_core::synth::{mix_tracks, read_wav, render_track_with, score_to_pianoroll, write_wav, Timbre};
use tamt_core::tensor::{read_tensor, write_tensor, Tensor};
use tamt_core::{GridConfig, Pianoroll, Score};

use crate::config::RunConfig;
use crate::plot::{roll_image, spectrogram_image};
use crate::{selftest, Command, Common, PlotKind, Switch};

/// Resolve the configuration: defaults, then the `--config` file, then
/// `--seed`.
fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

/// Run one subcommand; `Ok(false)` means it ran but a contract failed.
pub fn run(command: Command) -> Result<bool> {
    match command {
        Command::Gen { common, mix } => {
            let mut cfg = resolve(&common)?;
            if let Some(m) = mix {
                cfg.dataset.mix_sizes = vec![m];
            }
            cfg.validate()?;
            let dir = out_dir(&common, "dataset");
            let summary = write_dataset(&cfg.dataset, &cfg.grid, cfg.seed, &dir)?;
            cfg.save_into(&dir)?;
            println!(
                "{} tracks from {} instruments, {:.2} min of audio in {}",
                summary.tracks,
                summary.instruments,
                summary.total_seconds / 60.0,
                dir.display()
            );
            for (m, rows) in summary.manifests {
                println!("manifest m={m}: {rows} mixtures");
            }
            Ok(true)
        }
        Command::Mix { common, mix, snr_db, dataset, row } => {
            let mut cfg = resolve(&common)?;
            if let Some(m) = mix {
                cfg.mix.sources = m;
            }
            if snr_db.is_some() {
                cfg.mix.snr_db = snr_db;
            }
            cfg.validate()?;
            let dir = out_dir(&common, "mix");
            let sources = match (&dataset, row) {
                (Some(ds), Some(row)) => load_manifest_row(ds, cfg.mix.sources, row, &cfg.grid)?,
                _ => fresh_sources(&cfg)?,
            };
            write_mixture(&cfg, &sources, &dir)?;
            println!("{}-source mixture written to {}", sources.len(), dir.display());
            Ok(true)
        }
        Command::Cqt { common, input } => {
            let cfg = resolve(&common)?;
            cfg.validate()?;
            let dir = out_dir(&common, "cqt");
            let audio = load_audio(&input, &cfg.grid)?;
            let q = CqtKernelBank::new(&cfg.grid)?.forward(&audio)?;
            fs::create_dir_all(&dir)?;
            let (t, meta) = q.to_tensor();
            write_tensor(dir.join("cqt.tensor"), &t, &meta)?;
            let (t, meta) = energy_normalize(&q)?.to_tensor();
            write_tensor(dir.join("cqt_norm.tensor"), &t, &meta)?;
            cfg.save_into(&dir)?;
            println!("{} bins x {} frames written to {}", q.data.nrows(), q.frames(), dir.display());
            Ok(true)
        }
        Command::Transcribe { common, input } => {
            let cfg = resolve(&common)?;
            cfg.validate()?;
            let dir = out_dir(&common, "transcription");
            let audio = load_audio(&input, &cfg.grid)?;
            let analysis = analyze(&audio, &cfg.grid, &cfg.separation)?;
            fs::create_dir_all(&dir)?;
            save_roll(&analysis.transcription, &dir.join("transcription.roll"))?;
            let notes = extract_note_events(&analysis.transcription, &cfg.separation.notes)?;
            save_score(&Score::new(notes.clone()), &dir.join("transcription.jsonl"))?;
            cfg.save_into(&dir)?;
            println!("{} notes written to {}", notes.len(), dir.display());
            Ok(true)
        }
        Command::Separate { common, input, mix, threshold, associate, frame_level, refs } => {
            let mut cfg = resolve(&common)?;
            if let Some(m) = mix {
                cfg.mix.sources = m;
            }
            if let Some(t) = threshold {
                cfg.separation.threshold = t;
            }
            if let Some(a) = associate {
                cfg.separation.associate = a == Switch::On;
            }
            if frame_level {
                cfg.separation.level = Level::Frame;
            }
            cfg.validate()?;
            let dir = out_dir(&common, "separation");
            separate(&cfg, &input, refs.as_deref(), &dir)
        }
        Command::Eval { common, refs, ests, threshold } => {
            let cfg = resolve(&common)?;
            let threshold = threshold.unwrap_or(DEFAULT_THRESHOLD);
            let refs = refs.iter().map(|p| load_roll(p).map(|r| r.notes)).collect::<Result<Vec<_>>>()?;
            let ests = ests.iter().map(|p| load_roll(p).map(|r| r.notes)).collect::<Result<Vec<_>>>()?;
            let pit = pit_match(&refs, &ests, threshold)?;
            let table = metrics_table(&pit);
            print!("{table}");
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("metrics.tsv"), &table)?;
                cfg.save_into(dir)?;
            }
            Ok(true)
        }
        Command::Plot { common, input, kind } => {
            let (tensor, meta) = read_tensor(&input).with_context(|| format!("reading {}", input.display()))?;
            let matrix = plot_matrix(&tensor, &meta, kind)?;
            let image = match kind {
                PlotKind::Spectrogram => spectrogram_image(&matrix),
                PlotKind::Roll => roll_image(&matrix),
            };
            let out = common.out.clone().unwrap_or_else(|| input.with_extension("ppm"));
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(&out, image.to_ppm())?;
            println!("{}x{} image written to {}", image.width, image.height, out.display());
            Ok(true)
        }
        Command::Selftest { common } => {
            let cfg = resolve(&common)?;
            let results = selftest::run_all(cfg.seed);
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

/// One source of a mixture: its audio and ground truth.
struct Source {
    name: String,
    audio: Vec<f64>,
    score: Score,
    roll: Pianoroll,
}

fn load_audio(path: &Path, grid: &GridConfig) -> Result<Vec<f64>> {
    let (audio, sr) = read_wav(path).with_context(|| format!("reading {}", path.display()))?;
    ensure!(sr == grid.sample_rate, "{} is sampled at {sr} Hz, expected {} Hz", path.display(), grid.sample_rate);
    Ok(audio)
}

fn load_roll(path: &Path) -> Result<Pianoroll> {
    let (t, meta) = read_tensor(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Pianoroll::from_tensor(&t, &meta)?)
}

fn save_roll(roll: &Pianoroll, path: &Path) -> Result<()> {
    let (t, meta) = roll.to_tensor();
    Ok(write_tensor(path, &t, &meta)?)
}

fn save_score(score: &Score, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    score.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

/// `m` sources with distinct random timbres and fresh scores from `cfg.seed`.
fn fresh_sources(cfg: &RunConfig) -> Result<Vec<Source>> {
    let song_cfg = dataset::DatasetConfig { frames: cfg.mix.frames, ..cfg.dataset.clone() };
    let n = song_cfg.song_samples(&cfg.grid);
    (0..cfg.mix.sources)
        .map(|k| {
            let seed = derive_seed(cfg.seed, k as u64);
            let score = song_score(&song_cfg, &cfg.grid, seed)?.with_track(k);
            let timbre = Timbre::random(derive_seed(seed, 0x7157));
            let audio = render_track_with(&score, &timbre, &cfg.grid, n, seed, &song_cfg.render)?;
            let roll = score_to_pianoroll(&score, &cfg.grid, cfg.mix.frames);
            Ok(Source { name: format!("source {k}"), audio, score, roll })
        })
        .collect()
}

fn load_manifest_row(dir: &Path, m: usize, row: usize, grid: &GridConfig) -> Result<Vec<Source>> {
    let path = manifest_path(dir, m);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let rows = read_manifest(&text)?;
    let Some(stems) = rows.get(row) else { bail!("{} has {} rows, asked for row {row}", path.display(), rows.len()) };
    stems
        .iter()
        .map(|stem| {
            let base = dir.join("tracks").join(stem);
            let audio = load_audio(&base.with_extension("wav"), grid)?;
            let file = fs::File::open(base.with_extension("jsonl")).with_context(|| format!("reading {stem}.jsonl"))?;
            let score = Score::read_jsonl(BufReader::new(file))?;
            let roll = load_roll(&base.with_extension("roll"))?;
            Ok(Source { name: stem.clone(), audio, score, roll })
        })
        .collect()
}

/// `mix.wav`, and per source `source_<k>.wav`, `ref_<k>.roll` and
/// `ref_<k>.jsonl`.
fn write_mixture(cfg: &RunConfig, sources: &[Source], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tracks: Vec<Vec<f64>> = sources.iter().map(|s| s.audio.clone()).collect();
    let mix = mix_tracks(&tracks, cfg.mix.snr_db, cfg.seed)?;
    write_wav(dir.join("mix.wav"), &mix, cfg.grid.sample_rate)?;
    let mut names = String::new();
    for (k, s) in sources.iter().enumerate() {
        write_wav(dir.join(format!("source_{k}.wav")), &s.audio, cfg.grid.sample_rate)?;
        save_roll(&s.roll, &dir.join(format!("ref_{k}.roll")))?;
        save_score(&s.score, &dir.join(format!("ref_{k}.jsonl")))?;
        names.push_str(&format!("{k}\t{}\n", s.name));
    }
    fs::write(dir.join("sources.tsv"), names)?;
    cfg.save_into(dir)
}

/// Reference rolls `ref_0.roll, ref_1.roll, ...` in index order.
fn load_refs(dir: &Path) -> Result<Vec<Pianoroll>> {
    let mut refs = Vec::new();
    while let Ok(true) = dir.join(format!("ref_{}.roll", refs.len())).try_exists() {
        refs.push(load_roll(&dir.join(format!("ref_{}.roll", refs.len())))?);
    }
    ensure!(!refs.is_empty(), "no ref_<k>.roll files in {}", dir.display());
    Ok(refs)
}

#[derive(Serialize)]
struct SeparationSummary<'a> {
    level: Level,
    associate: bool,
    sources: usize,
    items_clustered: usize,
    eigengap_estimate: usize,
    notes_per_source: Vec<usize>,
    permutation: &'a Option<Vec<usize>>,
}

fn separate(cfg: &RunConfig, input: &Path, refs: Option<&Path>, dir: &Path) -> Result<bool> {
    let audio = load_audio(input, &cfg.grid)?;
    let analysis = analyze(&audio, &cfg.grid, &cfg.separation)?;
    let mut result = separate_analysis(&analysis, cfg.mix.sources, &cfg.separation, cfg.seed)?;
    fs::create_dir_all(dir)?;
    save_roll(&analysis.transcription, &dir.join("transcription.roll"))?;
    write_sources(&result, dir)?;
    if let Some(refs_dir) = refs {
        let refs: Vec<Array2<f64>> = load_refs(refs_dir)?.into_iter().map(|r| r.notes).collect();
        ensure!(
            refs.len() == result.sources.len(),
            "{} references for {} separated sources",
            refs.len(),
            result.sources.len()
        );
        let ests = result.note_rolls();
        let frames = refs[0].ncols().min(ests[0].ncols());
        let trim = |v: Vec<Array2<f64>>| -> Vec<Array2<f64>> {
            v.into_iter().map(|a| a.slice_axis(Axis(1), (0..frames).into()).to_owned()).collect()
        };
        let pit = pit_match(&trim(refs), &trim(ests), DEFAULT_THRESHOLD)?;
        fs::write(dir.join("metrics.tsv"), metrics_table(&pit))?;
        println!("mean frame F1 {:.4} after assignment {:?}", pit.mean.f1, pit.permutation);
        result.permutation = Some(pit.permutation);
    }
    let summary = SeparationSummary {
        level: result.level,
        associate: cfg.separation.associate,
        sources: result.sources.len(),
        items_clustered: result.labels.len(),
        eigengap_estimate: result.eigengap_estimate,
        notes_per_source: result.events.iter().map(Vec::len).collect(),
        permutation: &result.permutation,
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    cfg.save_into(dir)?;
    println!("{} sources ({:?} level) written to {}", result.sources.len(), result.level, dir.display());
    Ok(true)
}

fn write_sources(result: &SeparationResult, dir: &Path) -> Result<()> {
    for (k, (roll, events)) in result.sources.iter().zip(&result.events).enumerate() {
        save_roll(roll, &dir.join(format!("source_{k}.roll")))?;
        save_score(&Score::new(events.clone()), &dir.join(format!("source_{k}.jsonl")))?;
    }
    let labels: String = result.labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(dir.join("labels.txt"), labels)?;
    Ok(())
}

/// Tab-separated scores: one row per reference (with the estimate assigned
/// to it), then the micro-averaged `mean` row.
pub fn metrics_table(pit: &PitResult) -> String {
    let mut out = String::from("source\testimate\ttp\tfp\tfn\tacc\tprecision\trecall\tf1\n");
    let mut estimate_of = vec![0; pit.permutation.len()];
    for (i, &j) in pit.permutation.iter().enumerate() {
        estimate_of[j] = i;
    }
    let row = |name: String, est: String, s: &tamt_core::eval::FrameScores| {
        format!("{name}\t{est}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n", s.tp, s.fp, s.fn_, s.acc, s.precision, s.recall, s.f1)
    };
    for (j, s) in pit.per_source.iter().enumerate() {
        out.push_str(&row(j.to_string(), estimate_of[j].to_string(), s));
    }
    out.push_str(&row("mean".into(), "-".into(), &pit.mean));
    out
}

/// The matrix a tensor file shows: the note channel of a pianoroll, the
/// magnitude of a complex spectrogram, or a real 2-D matrix as is.
fn plot_matrix(tensor: &Tensor, meta: &tamt_core::tensor::Meta, kind: PlotKind) -> Result<Array2<f64>> {
    if meta.get("kind").and_then(|k| k.as_str()) == Some("pianoroll") {
        return Ok(Pianoroll::from_tensor(tensor, meta)?.notes);
    }
    match tensor {
        Tensor::Complex(a) => {
            ensure!(kind == PlotKind::Spectrogram, "complex tensors can only be plotted as spectrograms");
            Ok(a.mapv(|c| c.norm() as f64).into_dimensionality::<Ix2>().context("spectrogram tensor must be 2-D")?)
        }
        Tensor::Real(a) => match a.ndim() {
            2 => Ok(a.mapv(f64::from).into_dimensionality::<Ix2>()?),
            3 => Ok(a.mapv(f64::from).into_dimensionality::<Ix3>()?.index_axis(Axis(0), 0).to_owned()),
            n => bail!("cannot plot a {n}-D tensor"),
        },
    }
}

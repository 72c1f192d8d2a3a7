mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use resprate::audio::{load_wav_at, load_wav_native, AudioSegment, ChannelSel};
use resprate::labels::{parse_labels, reference_rates, LabelTrack, WindowSpec};
use resprate::metrics::{self, paired_rates, score_samples, timed, AgreementReport};
use resprate::pipeline::{
    calibrate_gate, detect_sp, detect_tcn, model_input, post_config_for, reference_mask, run_loo, LooConfig, LooEvent,
    LooSubject,
};
use resprate::postprocess::{events_to_csv, PostprocessConfig};
use resprate::sp::SpConfig;
use resprate::synth::{self, CorpusVariation, SynthScenario};
use resprate::tcn::{load_model, save_model, train_with, LabelledSequence, ModelInfo, TcnConfig, TcnModel, TrainSpec};
use resprate::Error;

const RATES: [f64; 4] = [490.0, 1050.0, 2100.0, 4410.0];

#[derive(Parser)]
#[command(
    name = "resprate",
    version,
    about = "Exhalation detection and respiratory rate estimation from exercise audio"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic breathing audio with labels and true rates.
    Synth(SynthArgs),
    /// Signal-processing rate estimator.
    DetectSp(DetectSpArgs),
    /// Train a TCN detector on a manifest.
    TrainTcn(TrainArgs),
    /// Run a trained TCN detector on a recording.
    DetectTcn(DetectTcnArgs),
    /// Leave-one-subject-out evaluation.
    EvalLoo(EvalArgs),
    /// Reference respiratory rates from a label file.
    RrFromLabels(RrArgs),
    /// Calibrate the postprocessing variance gate on labelled data.
    CalibrateGate(CalibrateArgs),
}

#[derive(Args, Clone, Copy)]
struct WindowArgs {
    /// Analysis window length, seconds.
    #[arg(long, default_value_t = 10.0)]
    window_s: f64,
    /// Analysis window hop, seconds.
    #[arg(long, default_value_t = 5.0)]
    hop_s: f64,
}

impl WindowArgs {
    fn spec(self) -> WindowSpec {
        WindowSpec {
            length: self.window_s,
            hop: self.hop_s,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario file (TOML); defaults apply to missing keys.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario sample rate, Hz.
    #[arg(long)]
    rate: Option<f64>,
    /// Overrides the scenario duration, seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Generate a corpus of N subjects and a manifest instead of one segment.
    #[arg(long, value_name = "N")]
    corpus: Option<usize>,
    /// Total corpus duration, seconds, split evenly between subjects.
    #[arg(long)]
    corpus_duration: Option<f64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DetectSpArgs {
    #[arg(long)]
    audio: PathBuf,
    /// Reference labels; adds an agreement report.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// c1, c2, or both (each channel estimated separately).
    #[arg(long, default_value = "c2")]
    channel: ChannelSel,
    /// Downsample to this rate before processing.
    #[arg(long)]
    rate: Option<f64>,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct TcnArgs {
    #[arg(long, default_value_t = 8, value_parser = parse_depth)]
    depth: usize,
    #[arg(long, default_value = "both")]
    channel: ChannelSel,
    /// Downsample the corpus to this rate; default is the native rate.
    #[arg(long)]
    rate: Option<f64>,
    /// Filters per convolution.
    #[arg(long, default_value_t = 32)]
    channels_per_block: usize,
    #[arg(long)]
    causal: bool,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    #[arg(long, default_value_t = 8)]
    minibatch: usize,
    /// Training chunk length, seconds.
    #[arg(long, default_value_t = 2.0)]
    chunk_s: f64,
    /// Loss weight of the exhalation class; plain cross-entropy when omitted.
    #[arg(long)]
    positive_weight: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TcnArgs {
    fn tcn_config(&self) -> TcnConfig {
        let mut c = TcnConfig::new(self.depth, self.channel.input_channels()).with_channels(self.channels_per_block);
        c.causal = self.causal;
        c
    }

    fn train_spec(&self) -> TrainSpec {
        TrainSpec {
            minibatch: self.minibatch,
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            chunk_seconds: self.chunk_s,
            class_weights: self.positive_weight.map(|w| [1.0, w]),
            ..Default::default()
        }
    }

    fn tag(&self) -> String {
        format!("d{}_{}_seed{}", self.depth, self.channel, self.seed)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    tcn: TcnArgs,
    /// Leave this subject out entirely, as in one leave-one-out fold.
    #[arg(long)]
    holdout: Option<String>,
    /// Validation subject; drawn with the seed when omitted.
    #[arg(long)]
    val_subject: Option<String>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DetectTcnArgs {
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Defaults to the channel the model was trained on.
    #[arg(long)]
    channel: Option<ChannelSel>,
    /// Defaults to the rate the model was trained at.
    #[arg(long)]
    rate: Option<f64>,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    tcn: TcnArgs,
    /// Skip the signal-processing comparison.
    #[arg(long)]
    no_sp: bool,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RrArgs {
    #[arg(long)]
    labels: PathBuf,
    /// Segment duration, seconds; taken from --audio or the last label when omitted.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    audio: Option<PathBuf>,
    #[command(flatten)]
    window: WindowArgs,
    /// Write `<labels stem>_reference_rates.csv` here instead of printing.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "both")]
    channel: ChannelSel,
    #[arg(long)]
    rate: Option<f64>,
    /// Store the threshold in this model file.
    #[arg(long)]
    model: Option<PathBuf>,
}

fn parse_depth(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(d) if resprate::tcn::DEPTHS.contains(&d) => Ok(d),
        _ => Err(format!("depth must be one of {:?}", resprate::tcn::DEPTHS)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::DetectSp(a) => cmd_detect_sp(a),
        Command::TrainTcn(a) => cmd_train_tcn(a),
        Command::DetectTcn(a) => cmd_detect_tcn(a),
        Command::EvalLoo(a) => cmd_eval_loo(a),
        Command::RrFromLabels(a) => cmd_rr_from_labels(a),
        Command::CalibrateGate(a) => cmd_calibrate_gate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for unreadable or malformed inputs, 2 for configuration and validation failures.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return if err.is_input_error() { 1 } else { 2 };
        }
        if cause.is::<std::io::Error>() {
            return 1;
        }
    }
    2
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

fn check_rate(rate: f64) -> Result<(), Error> {
    if RATES.iter().any(|&r| (r - rate).abs() < 1e-6) {
        Ok(())
    } else {
        Err(Error::UnsupportedRate(rate))
    }
}

fn load_audio(path: &Path, rate: Option<f64>) -> Result<AudioSegment, Error> {
    match rate {
        Some(r) => load_wav_at(path, r),
        None => load_wav_native(path),
    }
}

fn load_track(path: &Path, horse_id: &str) -> Result<LabelTrack, Error> {
    let mut t = parse_labels(path)?;
    t.horse_id = horse_id.to_string();
    Ok(t)
}

/// Agreement of one recording's estimates with its labels.
fn agreement_files(
    dir: &Path,
    prefix: &str,
    track: &LabelTrack,
    est: &resprate::labels::RateSeries,
    win: WindowSpec,
    duration: f64,
) -> Result<AgreementReport> {
    let reference = reference_rates(track, &win.grid(duration)?);
    let pairs = paired_rates(&reference, est)?;
    let report = AgreementReport::from_iterations(&[pairs]);
    write_file(dir, &format!("{prefix}_reference_rates.csv"), &reference.to_csv())?;
    write_file(
        dir,
        &format!("{prefix}_pairs.csv"),
        &metrics::pairs_to_csv(&report.pairs),
    )?;
    if let Some(ba) = &report.bland_altman {
        write_file(dir, &format!("{prefix}_bland_altman.csv"), &ba.to_csv())?;
    }
    Ok(report)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut scn = match &a.scenario {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            toml::from_str::<SynthScenario>(&text).with_context(|| format!("scenario {}", path.display()))?
        }
        None => SynthScenario::default(),
    };
    if let Some(s) = a.seed {
        scn.seed = s;
    }
    if let Some(r) = a.rate {
        scn.rate = r;
    }
    if let Some(d) = a.duration {
        scn.duration = d;
    }
    scn.validate()?;
    let seed = scn.seed;
    match a.corpus {
        None => {
            let out = synth::generate(&scn)?;
            let files = synth::write_output(&out, &a.out_dir, &format!("{}_seed{seed}", scn.horse_id))?;
            println!("{}", files.wav.display());
        }
        Some(n) => {
            let var = CorpusVariation {
                total_duration: a.corpus_duration,
                ..Default::default()
            };
            let mut entries = Vec::new();
            for subject in synth::loso_corpus(n, &scn, &var)? {
                let stem = format!("{}_seed{seed}", subject.id);
                let files = synth::write_output(&subject.data, &a.out_dir, &stem)?;
                let name = |p: &Path| PathBuf::from(p.file_name().expect("written file has a name"));
                entries.push(manifest::Entry {
                    subject_id: subject.id,
                    wav: name(&files.wav),
                    labels: name(&files.labels),
                    segment_kind: "synthetic".into(),
                });
            }
            let path = write_file(
                &a.out_dir,
                &format!("manifest_seed{seed}.tsv"),
                &manifest::render(&entries),
            )?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn cmd_detect_sp(a: DetectSpArgs) -> Result<()> {
    let seg = load_audio(&a.audio, a.rate)?;
    let cfg = SpConfig::default();
    cfg.input_filter(seg.sample_rate())?;
    let track = a
        .labels
        .as_deref()
        .map(|p| load_track(p, &stem(&a.audio)))
        .transpose()?;
    let channels: &[usize] = match a.channel {
        ChannelSel::C1 => &[0],
        ChannelSel::C2 => &[1],
        ChannelSel::Both => &[0, 1],
    };
    let win = a.window.spec();
    for &ch in channels {
        let prefix = format!("{}_sp_c{}", stem(&a.audio), ch + 1);
        let (res, elapsed) = timed(|| detect_sp(&seg, ch, &cfg, win));
        let (rates, events) = res?;
        write_file(&a.out_dir, &format!("{prefix}_rates.csv"), &rates.to_csv())?;
        write_file(&a.out_dir, &format!("{prefix}_events.csv"), &events_to_csv(&events))?;
        let mut run = format!(
            "audio={}\nchannel=c{}\nsample_rate={}\nduration_s={:.3}\n",
            a.audio.display(),
            ch + 1,
            seg.sample_rate(),
            seg.duration()
        );
        if let Some(track) = &track {
            let report = agreement_files(&a.out_dir, &prefix, track, &rates, win, seg.duration())?;
            write_file(&a.out_dir, &format!("{prefix}_agreement.txt"), &report.summary_text())?;
            let _ = writeln!(run, "mae_bpm={}", report.mae_ci_text());
            println!("c{}: MAE {}", ch + 1, report.mae_ci_text());
        }
        let _ = writeln!(run, "detect_s={:.6}", elapsed.as_secs_f64());
        let _ = writeln!(run, "timing_pct={:.3}", metrics::timing_ratio(elapsed, seg.duration()));
        write_file(&a.out_dir, &format!("{prefix}_run.txt"), &run)?;
    }
    Ok(())
}

fn cmd_train_tcn(a: TrainArgs) -> Result<()> {
    let t = &a.tcn;
    let subjects = manifest::load_subjects(&a.manifest, t.rate, 3)?;
    let rate = subjects[0].audio.sample_rate();
    check_rate(rate)?;
    if subjects.iter().any(|s| (s.audio.sample_rate() - rate).abs() > 1e-6) {
        bail!(Error::Validation("subjects have different sample rates".into()));
    }
    let mut pool: Vec<&LooSubject> = subjects.iter().collect();
    pool.sort_by(|x, y| x.id.cmp(&y.id));
    if let Some(h) = &a.holdout {
        let before = pool.len();
        pool.retain(|s| &s.id != h);
        if pool.len() == before {
            bail!(Error::Validation(format!("holdout subject {h} is not in the manifest")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
    let val = match &a.val_subject {
        Some(v) => *pool
            .iter()
            .find(|s| &s.id == v)
            .ok_or_else(|| Error::Validation(format!("validation subject {v} is not available")))?,
        None => *pool.choose(&mut rng).expect("manifest has subjects"),
    };
    let train: Vec<&LooSubject> = pool.iter().copied().filter(|s| s.id != val.id).collect();
    if train.is_empty() {
        bail!(Error::Validation("no subjects left for training".into()));
    }
    let seq = |s: &LooSubject| -> Result<LabelledSequence, Error> {
        Ok(LabelledSequence {
            input: model_input(&s.audio, t.channel)?,
            labels: reference_mask(&s.audio, &s.labels)?,
        })
    };
    let train_set = train.iter().map(|s| seq(s)).collect::<Result<Vec<_>, _>>()?;
    let val_set = vec![seq(val)?];
    eprintln!("training on {} subjects, validating on {}", train.len(), val.id);
    let init = TcnModel::new(t.tcn_config(), t.seed)?;
    let (mut model, log) = train_with(
        &init,
        &train_set,
        &val_set,
        &t.train_spec(),
        rate,
        t.seed.wrapping_add(1000),
        |e| eprintln!("epoch {:3}  train {:.5}  val {:.5}", e.epoch, e.train_loss, e.val_loss),
    )?;
    let gate_data: Vec<_> = train.iter().map(|s| (&s.audio, &s.labels)).collect();
    let gate = calibrate_gate(&gate_data, t.channel, PostprocessConfig::default().variance_window)?;
    model.info = ModelInfo {
        sample_rate: Some(rate),
        channel: Some(t.channel),
        gate_threshold: Some(gate),
    };
    let tag = t.tag();
    let model_path = a.out_dir.join(format!("model_{tag}.tcn"));
    fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    save_model(&model, &model_path)?;
    write_file(&a.out_dir, &format!("train_log_{tag}.csv"), &log.to_csv())?;
    let mut split = String::from("role,subject\n");
    for s in &train {
        let _ = writeln!(split, "train,{}", s.id);
    }
    let _ = writeln!(split, "val,{}", val.id);
    if let Some(h) = &a.holdout {
        let _ = writeln!(split, "test,{h}");
    }
    write_file(&a.out_dir, &format!("split_{tag}.csv"), &split)?;
    if log.stopped_early {
        eprintln!("stopped early after {} epochs", log.epochs.len());
    }
    println!(
        "{}  best epoch {}  val loss {:.5}  gate {:.6}",
        model_path.display(),
        log.best_epoch,
        log.epochs[log.best_epoch.max(1) - 1].val_loss,
        gate
    );
    Ok(())
}

fn cmd_detect_tcn(a: DetectTcnArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let info = model.info;
    let channel = match (a.channel, info.channel) {
        (Some(c), Some(m)) if c != m => {
            bail!(Error::Validation(format!(
                "model was trained on --channel {m}, not {c}"
            )))
        }
        (Some(c), _) => c,
        (None, Some(m)) => m,
        (None, None) => bail!(Error::Validation(
            "model does not record its channel; pass --channel".into()
        )),
    };
    let rate = match (a.rate, info.sample_rate) {
        (Some(r), Some(m)) if (r - m).abs() > 1e-6 => {
            bail!(Error::Validation(format!("model was trained at {m} Hz, not {r} Hz")))
        }
        (Some(r), _) => Some(r),
        (None, m) => m,
    };
    let seg = load_audio(&a.audio, rate)?;
    check_rate(seg.sample_rate())?;
    let win = a.window.spec();
    let post = post_config_for(&model);
    let (det, elapsed) = timed(|| detect_tcn(&model, &seg, channel, &post, win));
    let det = det?;
    let prefix = format!("{}_tcn", stem(&a.audio));
    write_file(&a.out_dir, &format!("{prefix}_rates.csv"), &det.post.rates.to_csv())?;
    write_file(
        &a.out_dir,
        &format!("{prefix}_events.csv"),
        &events_to_csv(&det.post.series),
    )?;
    let c = det.post.counts;
    let mut run = format!(
        "audio={}\nmodel={}\nchannel={channel}\nsample_rate={}\nduration_s={:.3}\ndepth={}\n\
         gate_threshold={}\nruns_smoothed={}\nruns_gated={}\nruns_confirmed={}\nevents={}\n",
        a.audio.display(),
        a.model.display(),
        seg.sample_rate(),
        seg.duration(),
        model.config().depth,
        post.variance_threshold,
        c.smoothed,
        c.gated,
        c.confirmed,
        det.post.series.iter().map(|s| s.events.len()).sum::<usize>(),
    );
    if let Some(path) = &a.labels {
        let track = load_track(path, &stem(&a.audio))?;
        let counts = score_samples(&det.labels, &reference_mask(&seg, &track)?)?;
        let report = agreement_files(&a.out_dir, &prefix, &track, &det.post.rates, win, seg.duration())?;
        let mut text = format!(
            "F1 {:.4}  precision {:.4}  recall {:.4}\n",
            counts.f1(),
            counts.precision(),
            counts.recall()
        );
        text.push_str(&report.summary_text());
        write_file(&a.out_dir, &format!("{prefix}_agreement.txt"), &text)?;
        let _ = writeln!(run, "f1={:.4}\nmae_bpm={}", counts.f1(), report.mae_ci_text());
        print!("{text}");
    }
    let pct = metrics::timing_ratio(elapsed, seg.duration());
    let _ = writeln!(run, "detect_s={:.6}\ntiming_pct={pct:.3}", elapsed.as_secs_f64());
    write_file(&a.out_dir, &format!("{prefix}_run.txt"), &run)?;
    println!(
        "computed in {:.3} s ({pct:.2}% of segment duration)",
        elapsed.as_secs_f64()
    );
    Ok(())
}

fn cmd_eval_loo(a: EvalArgs) -> Result<()> {
    let t = &a.tcn;
    let subjects = manifest::load_subjects(&a.manifest, t.rate, 3)?;
    check_rate(subjects[0].audio.sample_rate())?;
    let cfg = LooConfig {
        tcn: t.tcn_config(),
        train: t.train_spec(),
        channel: t.channel,
        seed: t.seed,
        sp: SpConfig::default(),
        window: a.window.spec(),
        with_sp: !a.no_sp,
    };
    let mut assignment = Vec::new();
    let report = run_loo(&subjects, &cfg, |ev| match ev {
        LooEvent::FoldStart { test, val } => {
            eprintln!("fold: test {test}, validation {val}");
            assignment.push((test.to_string(), val.to_string()));
        }
        LooEvent::Epoch(e) => eprintln!(
            "  epoch {:3}  train {:.5}  val {:.5}",
            e.epoch, e.train_loss, e.val_loss
        ),
        LooEvent::FoldDone(f) => eprintln!("  F1 {:.4}  MAE {:?}", f.f1, f.mae()),
    })?;
    let tag = format!("loo_{}", t.tag());
    assignment.sort();
    let mut text = String::from("test_subject,val_subject\n");
    for (test, val) in &assignment {
        let _ = writeln!(text, "{test},{val}");
    }
    write_file(&a.out_dir, &format!("{tag}_assignment.csv"), &text)?;
    write_file(&a.out_dir, &format!("{tag}_folds.csv"), &report.folds_csv())?;
    let mut folds: Vec<_> = report.folds.iter().collect();
    folds.sort_by(|x, y| x.test_subject.cmp(&y.test_subject));
    for f in folds {
        write_file(
            &a.out_dir,
            &format!("{tag}_{}_train_log.csv", f.test_subject),
            &f.log.to_csv(),
        )?;
    }
    let tcn = report.tcn_agreement();
    write_file(
        &a.out_dir,
        &format!("{tag}_tcn_pairs.csv"),
        &metrics::pairs_to_csv(&tcn.pairs),
    )?;
    if let Some(ba) = &tcn.bland_altman {
        write_file(&a.out_dir, &format!("{tag}_tcn_bland_altman.csv"), &ba.to_csv())?;
    }
    if cfg.with_sp {
        for ch in 0..2 {
            let sp = report.sp_agreement(ch);
            write_file(
                &a.out_dir,
                &format!("{tag}_sp_c{}_pairs.csv", ch + 1),
                &metrics::pairs_to_csv(&sp.pairs),
            )?;
        }
    }
    let summary = report.summary_text();
    write_file(&a.out_dir, &format!("{tag}_summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_rr_from_labels(a: RrArgs) -> Result<()> {
    let track = load_track(&a.labels, &stem(&a.labels))?;
    let duration = match (a.duration, &a.audio) {
        (Some(d), _) => d,
        (None, Some(p)) => load_wav_native(p)?.duration(),
        (None, None) => track.intervals.iter().map(|i| i.end).fold(0.0, f64::max),
    };
    let rates = reference_rates(&track, &a.window.spec().grid(duration)?);
    let csv = rates.to_csv();
    match &a.out_dir {
        Some(dir) => {
            let path = write_file(dir, &format!("{}_reference_rates.csv", stem(&a.labels)), &csv)?;
            println!("{}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_calibrate_gate(a: CalibrateArgs) -> Result<()> {
    let subjects = manifest::load_subjects(&a.manifest, a.rate, 1)?;
    let data: Vec<_> = subjects.iter().map(|s| (&s.audio, &s.labels)).collect();
    let gate = calibrate_gate(&data, a.channel, PostprocessConfig::default().variance_window)?;
    if let Some(path) = &a.model {
        let mut model = load_model(path)?;
        if let Some(m) = model.info.channel.filter(|&m| m != a.channel) {
            bail!(Error::Validation(format!(
                "model was trained on --channel {m}, not {}",
                a.channel
            )));
        }
        model.info.gate_threshold = Some(gate);
        save_model(&model, path)?;
    }
    println!("{gate:.6}");
    Ok(())
}

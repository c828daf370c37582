//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data or
//! validation error.

use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::calibration::{roc_curve, select_threshold, ThresholdPolicy};
use crate::classifier::ClassifierHandle;
use crate::detectors::{
    md_fit, Combiner, EdConfig, MdOptions, SingleImageDetector, Verdict, VgConfig,
};
use crate::imaging::{load_ppm, BrightnessMode, BrightnessSpec, Image};
use crate::pipeline::{
    generate_synthetic, load_profile, run_sequence, save_profile, CalibrationProfile,
    DetectorSettings, GroundTruth, OperatingPoint, SequenceManifest, SynthSpec,
};
use crate::theory::{exact_majority_accuracy, min_window_length, sig6, simulate_majority};
use crate::timeseries::{Capacity, WindowState};

#[derive(Debug, Parser)]
#[command(
    name = "streamguard",
    version,
    about = "Adversarial-input detection over image streams"
)]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for files written by `calibrate`, `synth` and `detect`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DetectorKind {
    Vg,
    Md,
    Ed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Side {
    Adversarial,
    Clean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CombinerArg {
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BrightnessArg {
    Set,
    Add,
}

impl From<Side> for Verdict {
    fn from(side: Side) -> Self {
        match side {
            Side::Adversarial => Verdict::Adversarial,
            Side::Clean => Verdict::Clean,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimum window length for a single-image accuracy.
    Bound {
        #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
        p_hat: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Monte-Carlo check of the majority-vote accuracy against the exact value.
    Simulate {
        #[arg(long, default_value_t = 0.9)]
        p_hat: f64,
        /// Past frames in the window; the vote uses window + 1 outputs.
        #[arg(long, default_value_t = 10)]
        window: u64,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, value_enum, default_value_t = Side::Adversarial)]
        side: Side,
    },
    /// Fit a detector threshold from labeled clean and adversarial sequences.
    Calibrate(CalibrateArgs),
    /// Run a calibrated detector over one sequence.
    Detect {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "all")]
        window: Capacity,
    },
    /// Generate a synthetic clean/adversarial sequence pair.
    Synth {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Latency of single-image detection and of one majority-vote step.
    Bench {
        #[arg(long, value_enum)]
        detector: DetectorKind,
        #[arg(long)]
        model: String,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        iters: u64,
        /// Calibrated profile; required for `md`, optional otherwise.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long, value_enum)]
    detector: DetectorKind,
    #[arg(long)]
    model: String,
    #[arg(long, num_args = 0..)]
    clean: Vec<PathBuf>,
    #[arg(long, num_args = 0..)]
    adv: Vec<PathBuf>,
    #[arg(long, default_value = "youden")]
    policy: ThresholdPolicy,
    /// Sequences whose present frames fit the Mahalanobis statistics
    /// (default: the clean sequences).
    #[arg(long, num_args = 1..)]
    fit: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = CombinerArg::Min)]
    combiner: CombinerArg,
    #[arg(long, value_enum, default_value_t = BrightnessArg::Set)]
    brightness_mode: BrightnessArg,
    #[arg(long, default_value_t = 200)]
    brightness: u8,
    #[arg(long, default_value_t = MdOptions::default().eps)]
    eps: f64,
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
}

/// Error carrying its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    fn data(e: impl Display) -> Self {
        Self::Data(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Reports go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            1
        }
        Err(Failure::Data(m)) => {
            let _ = writeln!(err, "error: {m}");
            2
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let text = match &cli.command {
        Command::Bound { p_hat, grid } => {
            let grid = match (p_hat, grid) {
                (Some(p), _) => vec![*p],
                (None, Some(g)) => g.clone(),
                (None, None) => return Err(Failure::Usage("pass --p-hat or --grid".into())),
            };
            cmd_bound(&grid, cli.format)?
        }
        Command::Simulate {
            p_hat,
            window,
            trials,
            side,
        } => cmd_simulate(
            *p_hat,
            *window,
            *trials,
            (*side).into(),
            cli.seed,
            cli.format,
        )?,
        Command::Calibrate(args) => cmd_calibrate(
            args,
            cli.output.as_deref().unwrap_or(Path::new(".")),
            cli.format,
        )?,
        Command::Detect {
            profile,
            model,
            manifest,
            window,
        } => cmd_detect(
            profile,
            model,
            manifest,
            *window,
            cli.output.as_deref(),
            cli.format,
        )?,
        Command::Synth { spec } => cmd_synth(
            spec,
            cli.seed,
            cli.output.as_deref().unwrap_or(Path::new(".")),
            cli.format,
        )?,
        Command::Bench {
            detector,
            model,
            image,
            iters,
            profile,
        } => cmd_bench(
            *detector,
            model,
            image,
            *iters,
            profile.as_deref(),
            cli.format,
        )?,
    };
    out.write_all(text.as_bytes()).map_err(Failure::data)
}

fn json_text(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json value serializes");
    s.push('\n');
    s
}

fn cmd_bound(grid: &[f64], format: Format) -> CliResult<String> {
    let reports = grid
        .iter()
        .map(|&p| min_window_length(p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::data)?;
    Ok(match format {
        Format::Csv => {
            let mut s = String::from("p_hat,raw_bound,min_L,misclassification_bound\n");
            for r in &reports {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    sig6(r.p_hat),
                    sig6(r.raw_bound),
                    r.min_l,
                    sig6(r.misclassification_at_min_l)
                ));
            }
            s
        }
        Format::Json => json_text(&json!(reports
            .iter()
            .map(|r| json!({
                "p_hat": r.p_hat,
                "raw_bound": r.raw_bound,
                "min_L": r.min_l,
                "misclassification_bound": r.misclassification_at_min_l,
            }))
            .collect::<Vec<_>>())),
    })
}

fn cmd_simulate(
    p_hat: f64,
    window: u64,
    trials: u64,
    truth: Verdict,
    seed: u64,
    format: Format,
) -> CliResult<String> {
    let sim = simulate_majority(p_hat, window, trials, seed, truth).map_err(Failure::data)?;
    let exact = exact_majority_accuracy(p_hat, window, truth).map_err(Failure::data)?;
    let se = (exact * (1.0 - exact) / trials as f64).sqrt();
    let deviation = (sim.estimate - exact).abs();
    let pass = deviation <= 3.0 * se + 1e-12;
    let verdict = if pass { "PASS" } else { "FAIL" };
    Ok(match format {
        Format::Csv => format!(
            "p_hat,window,votes,trials,seed,estimate,exact,half_width\n{},{},{},{},{},{},{},{}\n\
             {verdict} |estimate - exact| = {} within 3 standard errors = {}\n",
            p_hat,
            window,
            window + 1,
            trials,
            seed,
            sim.estimate,
            exact,
            sim.half_width,
            sig6(deviation),
            sig6(3.0 * se)
        ),
        Format::Json => json_text(&json!({
            "p_hat": p_hat,
            "window": window,
            "votes": window + 1,
            "trials": trials,
            "seed": seed,
            "estimate": sim.estimate,
            "exact": exact,
            "half_width": sim.half_width,
            "pass": pass,
        })),
    })
}

fn load_manifests(paths: &[PathBuf]) -> CliResult<Vec<SequenceManifest>> {
    paths
        .iter()
        .map(|p| SequenceManifest::load(p).map_err(Failure::data))
        .collect()
}

/// Present frames of the given manifests.
fn present_frames(manifests: &[SequenceManifest]) -> CliResult<Vec<(Image, Option<String>)>> {
    let mut frames = Vec::new();
    for m in manifests {
        for (i, f) in m.frames.iter().enumerate() {
            if f.present {
                let img = load_ppm(m.frame_path(i)).map_err(Failure::data)?;
                frames.push((img, f.label.clone()));
            }
        }
    }
    Ok(frames)
}

fn cmd_calibrate(args: &CalibrateArgs, dir: &Path, format: Format) -> CliResult<String> {
    if args.clean.is_empty() {
        return Err(Failure::Data("no clean manifests given".into()));
    }
    if args.adv.is_empty() {
        return Err(Failure::Data("no adversarial manifests given".into()));
    }
    let clean = load_manifests(&args.clean)?;
    let adv = load_manifests(&args.adv)?;
    let clf = ClassifierHandle::open(&args.model).map_err(Failure::data)?;

    let mut stats_json = None;
    let provisional = match args.detector {
        DetectorKind::Vg => SingleImageDetector::Vg(VgConfig {
            transform: BrightnessSpec {
                mode: match args.brightness_mode {
                    BrightnessArg::Set => BrightnessMode::Set,
                    BrightnessArg::Add => BrightnessMode::Add,
                },
                value: args.brightness,
            },
            combiner: match args.combiner {
                CombinerArg::Min => Combiner::Min,
                CombinerArg::Max => Combiner::Max,
            },
            threshold: 0.0,
        }),
        DetectorKind::Ed => SingleImageDetector::Ed(EdConfig::default()),
        DetectorKind::Md => {
            let fit = if args.fit.is_empty() {
                clean.clone()
            } else {
                load_manifests(&args.fit)?
            };
            let labeled = present_frames(&fit)?
                .into_iter()
                .map(|(img, label)| {
                    let y = match label {
                        Some(l) => clf.labels().iter().position(|c| *c == l).ok_or_else(|| {
                            Failure::Data(format!("frame label {l:?} is not a classifier label"))
                        })?,
                        None => clf.softmax_of(&img).map_err(Failure::data)?.argmax(),
                    };
                    Ok((img, y))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let opts = MdOptions {
                layers: args.layers.clone(),
                eps: args.eps,
                ..MdOptions::default()
            };
            let stats = md_fit(&clf, &labeled, &opts).map_err(Failure::data)?;
            stats_json = Some(serde_json::to_string_pretty(&stats).expect("stats serialize"));
            SingleImageDetector::Md {
                stats,
                threshold: 0.0,
            }
        }
    };
    let score_all = |manifests: &[SequenceManifest]| -> CliResult<Vec<f64>> {
        present_frames(manifests)?
            .iter()
            .map(|(img, _)| {
                provisional
                    .detect(&clf, img)
                    .map(|d| d.score)
                    .map_err(Failure::data)
            })
            .collect()
    };
    let clean_scores = score_all(&clean)?;
    let adv_scores = score_all(&adv)?;
    let curve = roc_curve(&clean_scores, &adv_scores).map_err(Failure::data)?;
    let selection = select_threshold(&curve, args.policy);
    if !selection.feasible {
        return Err(Failure::Data(format!(
            "policy {} has no finite operating point on this data",
            args.policy
        )));
    }
    let threshold = selection.point.threshold;
    let settings = match provisional {
        SingleImageDetector::Vg(mut cfg) => {
            cfg.threshold = threshold;
            DetectorSettings::Vg { config: cfg }
        }
        SingleImageDetector::Md { .. } => DetectorSettings::Md {
            stats: "stats.json".into(),
            threshold,
        },
        SingleImageDetector::Ed(config) => DetectorSettings::Ed { config },
    };
    let mut profile = CalibrationProfile::new(settings, clf.fingerprint());
    profile.operating_point = Some(OperatingPoint {
        policy: args.policy.to_string(),
        tpr: selection.point.tpr,
        fpr: selection.point.fpr,
        auroc: curve.auroc,
    });
    profile.provenance.dataset = clean
        .iter()
        .chain(&adv)
        .map(|m| m.object_id.as_str())
        .collect::<Vec<_>>()
        .join(",");

    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    let write = |name: &str, text: &str| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
    };
    if let Some(stats) = &stats_json {
        write("stats.json", &format!("{stats}\n"))?;
    }
    write("roc.csv", &curve.to_csv())?;
    save_profile(&profile, &dir.join("profile.json")).map_err(Failure::data)?;

    let kind = profile.detector.kind();
    Ok(match format {
        Format::Csv => format!(
            "detector,policy,threshold,tpr,fpr,auroc\n{kind},{},{threshold},{},{},{}\n",
            args.policy, selection.point.tpr, selection.point.fpr, curve.auroc
        ),
        Format::Json => json_text(&json!({
            "detector": kind,
            "policy": args.policy.to_string(),
            "threshold": threshold,
            "tpr": selection.point.tpr,
            "fpr": selection.point.fpr,
            "auroc": curve.auroc,
        })),
    })
}

fn cmd_detect(
    profile: &Path,
    model: &str,
    manifest: &Path,
    window: Capacity,
    dir: Option<&Path>,
    format: Format,
) -> CliResult<String> {
    let loaded = load_profile(profile).map_err(Failure::data)?;
    let clf = ClassifierHandle::open(model).map_err(Failure::data)?;
    let manifest = SequenceManifest::load(manifest).map_err(Failure::data)?;
    let report = run_sequence(&manifest, &loaded, &clf, window).map_err(Failure::data)?;
    let text = match format {
        Format::Csv => report.to_csv(),
        Format::Json => json_text(&report.to_json()),
    };
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
        let name = match format {
            Format::Csv => "report.csv",
            Format::Json => "report.json",
        };
        let path = dir.join(name);
        std::fs::write(&path, &text)
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(text)
}

fn cmd_synth(spec: &Path, seed: u64, dir: &Path, format: Format) -> CliResult<String> {
    let text = std::fs::read_to_string(spec)
        .map_err(|e| Failure::Data(format!("{}: {e}", spec.display())))?;
    let spec: SynthSpec = serde_json::from_str(&text)
        .map_err(|e| Failure::Data(format!("{}: {e}", spec.display())))?;
    let pair = generate_synthetic(&spec, seed, dir).map_err(Failure::data)?;
    let rows = [
        (&pair.clean, dir.join("clean.json")),
        (&pair.adversarial, dir.join("adversarial.json")),
    ];
    Ok(match format {
        Format::Csv => {
            let mut s = String::from("ground_truth,frames,manifest\n");
            for (m, path) in &rows {
                let truth = match m.ground_truth {
                    GroundTruth::Clean => "clean",
                    GroundTruth::Adversarial => "adversarial",
                    GroundTruth::Unknown => "unknown",
                };
                s.push_str(&format!("{truth},{},{}\n", m.frames.len(), path.display()));
            }
            s
        }
        Format::Json => json_text(&json!({
            "clean": rows[0].1.display().to_string(),
            "adversarial": rows[1].1.display().to_string(),
            "frames": spec.frames,
        })),
    })
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn cmd_bench(
    kind: DetectorKind,
    model: &str,
    image: &Path,
    iters: u64,
    profile: Option<&Path>,
    format: Format,
) -> CliResult<String> {
    let clf = ClassifierHandle::open(model).map_err(Failure::data)?;
    let img = load_ppm(image).map_err(Failure::data)?;
    let detector = match profile {
        Some(path) => load_profile(path).map_err(Failure::data)?.detector,
        None => match kind {
            DetectorKind::Vg => SingleImageDetector::Vg(VgConfig::default()),
            DetectorKind::Ed => SingleImageDetector::Ed(EdConfig::default()),
            DetectorKind::Md => {
                return Err(Failure::Usage("the md detector needs --profile".into()));
            }
        },
    };
    let micros = |mut f: Box<dyn FnMut() -> CliResult<()> + '_>| -> CliResult<Vec<f64>> {
        let mut samples = Vec::with_capacity(iters as usize);
        for _ in 0..iters {
            let start = Instant::now();
            f()?;
            samples.push(start.elapsed().as_secs_f64() * 1e6);
        }
        samples.sort_by(f64::total_cmp);
        Ok(samples)
    };
    let detect = micros(Box::new(|| {
        detector
            .detect(&clf, &img)
            .map(|_| ())
            .map_err(Failure::data)
    }))?;
    let mut window = WindowState::new(Capacity::Frames(10));
    let mut i = 0u64;
    let vote = micros(Box::new(|| {
        i += 1;
        window
            .step(Some(Verdict::from_flag(i.is_multiple_of(3))), None)
            .map(|_| ())
            .map_err(Failure::data)
    }))?;
    let rows = [("detect", &detect), ("vote", &vote)];
    Ok(match format {
        Format::Csv => {
            let mut s = String::from("stage,iters,p50_us,p95_us\n");
            for (stage, v) in rows {
                s.push_str(&format!(
                    "{stage},{iters},{},{}\n",
                    sig6(percentile(v, 0.5)),
                    sig6(percentile(v, 0.95))
                ));
            }
            s
        }
        Format::Json => json_text(&json!(rows
            .iter()
            .map(|(stage, v)| json!({
                "stage": stage,
                "iters": iters,
                "p50_us": percentile(v, 0.5),
                "p95_us": percentile(v, 0.95),
            }))
            .collect::<Vec<_>>())),
    })
}

//! `printqc` command-line front end.
//!
//! Every subcommand prints one `key=value` summary line on success. Exit
//! status: 0 success, 1 operational error, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use printqc::align::{align, AlignConfig};
use printqc::classify::{load_model, save_model, train, ClassifierConfig, ClassifierKind};
use printqc::eval::{loocv, write_per_sample, write_roc, write_summary};
use printqc::features::{extract_corpus, read_feature_table, write_feature_table, ExtractConfig, ReferenceBank};
use printqc::filters::FilterId;
use printqc::imgcore::{load_gray, save_gray, GrayMode, Roi};
use printqc::iqm::MetricId;
use printqc::monitor::{
    detect_anomalies, fit_sinusoid_auto, fit_trailing, read_series, write_flags, write_series, RotationSample,
    DEFAULT_TRAILING_WINDOW,
};
use printqc::preselect::{preselect, write_preselect, Partition, PreselectConfig};
use printqc::synth::{generate_corpus, read_corpus_info, read_manifest, CorpusConfig, MANIFEST_FILE};
use printqc::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "printqc", version, about = "Quality control for printed glass bottles")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML file overriding defaults; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus.
    GenCorpus(GenCorpusArgs),
    /// Partition unlabeled images for labeling.
    Preselect(PreselectArgs),
    /// Register one test image onto the reference.
    Align(AlignArgs),
    /// Compute the 24-feature table of a corpus.
    ExtractFeatures(ExtractArgs),
    /// Train a classifier on a feature table.
    Train(TrainArgs),
    /// Leave-one-out evaluation of a classifier on a feature table.
    Eval(EvalArgs),
    /// Classify one image with a trained model.
    Classify(ClassifyArgs),
    /// Fit the rotation drift and flag anomalies.
    Monitor(MonitorArgs),
}

/// Reference image and comparison window, given directly or taken from a
/// generated corpus.
#[derive(Args, Debug)]
struct RefArgs {
    #[arg(long)]
    r#ref: Option<PathBuf>,
    /// Comparison window `x,y,w,h`.
    #[arg(long)]
    window: Option<Roi>,
    /// Corpus directory supplying the default reference and window.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Use only the green channel of color inputs.
    #[arg(long)]
    green: bool,
}

#[derive(Args, Debug)]
struct GenCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    acceptable: Option<usize>,
    #[arg(long)]
    unacceptable: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
}

#[derive(Args, Debug)]
struct PreselectArgs {
    /// Directory of unlabeled images (PNG/PGM/PPM).
    #[arg(long)]
    images: PathBuf,
    #[command(flatten)]
    reference: RefArgs,
    #[arg(long)]
    filter: Option<FilterId>,
    #[arg(long)]
    metric: Option<MetricId>,
    #[arg(long)]
    hi: Option<f64>,
    #[arg(long)]
    lo: Option<f64>,
    #[arg(long)]
    no_align: bool,
    /// Report table (id,score,partition).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long)]
    r#ref: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Write the warped test image here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    green: bool,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    window: Option<Roi>,
    #[arg(long)]
    no_align: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write the estimated rotations (timestamp,rotation_deg) here.
    #[arg(long)]
    rotations: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    kind: ClassifierKind,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    kind: ClassifierKind,
    /// Directory for summary.json, per_sample.csv and roc.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[command(flatten)]
    reference: RefArgs,
    #[arg(long)]
    no_align: bool,
}

#[derive(Args, Debug)]
struct MonitorArgs {
    /// Rotation series (timestamp,rotation_deg).
    #[arg(long)]
    series: PathBuf,
    /// Flag residuals above k residual standard deviations.
    #[arg(long)]
    k: Option<f64>,
    /// Fit only the most recent N samples.
    #[arg(long)]
    window: Option<usize>,
    /// Flag table (timestamp,residual,threshold).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default, Debug)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    jobs: Option<usize>,
    align: AlignConfig,
    classifier: ClassifierConfig,
    corpus: CorpusConfig,
    preselect: PreselectFile,
    monitor: MonitorFile,
}

#[derive(Deserialize, Default, Debug)]
#[serde(default, deny_unknown_fields)]
struct PreselectFile {
    filter: Option<FilterId>,
    metric: Option<MetricId>,
    hi: Option<f64>,
    lo: Option<f64>,
}

#[derive(Deserialize, Default, Debug)]
#[serde(default, deny_unknown_fields)]
struct MonitorFile {
    k: Option<f64>,
    window: Option<usize>,
}

struct Ctx {
    seed: u64,
    file: FileConfig,
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}

fn run(args: impl IntoIterator<Item = OsString>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<String> {
    let file: FileConfig = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::FileNotFound(p.clone()),
                _ => Error::Io(e),
            })?;
            toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let ctx = Ctx {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        file,
    };
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(&ctx, a),
        Command::Preselect(a) => preselect_cmd(&ctx, a),
        Command::Align(a) => align_cmd(&ctx, a),
        Command::ExtractFeatures(a) => extract(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Classify(a) => classify(&ctx, a),
        Command::Monitor(a) => monitor(&ctx, a),
    }
}

fn gray_mode(green: bool) -> GrayMode {
    if green {
        GrayMode::GreenOnly
    } else {
        GrayMode::WeightedSum
    }
}

fn resolve_reference(r: &RefArgs) -> Result<(PathBuf, Roi)> {
    let info = r.corpus.as_ref().map(|d| read_corpus_info(d).map(|i| (d, i))).transpose()?;
    let reference = match (&r.r#ref, &info) {
        (Some(p), _) => p.clone(),
        (None, Some((d, i))) => d.join(&i.reference),
        (None, None) => return Err(Error::InvalidArgument("--ref or --corpus is required".into())),
    };
    let window = match (r.window, &info) {
        (Some(w), _) => w,
        (None, Some((_, i))) => i.window,
        (None, None) => return Err(Error::InvalidArgument("--window or --corpus is required".into())),
    };
    Ok((reference, window))
}

fn gen_corpus(ctx: &Ctx, a: GenCorpusArgs) -> Result<String> {
    let mut cfg = ctx.file.corpus.clone();
    cfg.master_seed = ctx.seed;
    cfg.acceptable = a.acceptable.unwrap_or(cfg.acceptable);
    cfg.unacceptable = a.unacceptable.unwrap_or(cfg.unacceptable);
    cfg.width = a.width.unwrap_or(cfg.width);
    cfg.height = a.height.unwrap_or(cfg.height);
    let entries = generate_corpus(&cfg, &a.out)?;
    let bad = entries.iter().filter(|e| e.label.is_positive()).count();
    Ok(format!(
        "gen-corpus images={} acceptable={} unacceptable={} seed={} out={}",
        entries.len(),
        entries.len() - bad,
        bad,
        ctx.seed,
        a.out.display()
    ))
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "pgm" | "ppm" | "pnm")
    )
}

fn preselect_cmd(ctx: &Ctx, a: PreselectArgs) -> Result<String> {
    let (ref_path, window) = resolve_reference(&a.reference)?;
    let mode = gray_mode(a.reference.green);
    let reference = load_gray(&ref_path, mode)?;
    if !a.images.is_dir() {
        return Err(Error::FileNotFound(a.images.clone()));
    }
    let ref_canon = fs::canonicalize(&ref_path)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(&a.images)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| is_image(p) && fs::canonicalize(p).map(|c| c != ref_canon).unwrap_or(true));
    paths.sort();
    let images = paths
        .iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((id, load_gray(p, mode)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let f = &ctx.file.preselect;
    let cfg = PreselectConfig {
        metric: a.metric.or(f.metric).unwrap_or(MetricId::Mse),
        filter: a.filter.or(f.filter).unwrap_or(FilterId::NoFilter),
        hi: a.hi.or(f.hi).unwrap_or(0.8),
        lo: a.lo.or(f.lo).unwrap_or(0.2),
        use_alignment: !a.no_align,
        align: ctx.file.align.clone(),
    };
    let report = preselect(&images, &reference, window, &cfg, ctx.seed)?;
    if let Some(out) = &a.out {
        write_preselect(&report, out)?;
    }
    Ok(format!(
        "preselect images={} mean_score={} potential_unacceptable={} potential_acceptable={} excluded={}",
        report.entries.len(),
        report.mean_score,
        report.count(Partition::PotentialUnacceptable),
        report.count(Partition::PotentialAcceptable),
        report.count(Partition::Excluded)
    ))
}

fn align_cmd(ctx: &Ctx, a: AlignArgs) -> Result<String> {
    let mode = gray_mode(a.green);
    let reference = load_gray(&a.r#ref, mode)?;
    let test = load_gray(&a.test, mode)?;
    let r = align(&test, &reference, &ctx.file.align, ctx.seed);
    if let Some(out) = &a.out {
        save_gray(&r.warped, out)?;
    }
    Ok(format!(
        "align succeeded={} rotation_deg={:.4} inliers={} matches={}",
        r.succeeded, r.rotation_deg, r.inlier_count, r.total_matches
    ))
}

fn extract(ctx: &Ctx, a: ExtractArgs) -> Result<String> {
    let cfg = ExtractConfig {
        align: ctx.file.align.clone(),
        use_alignment: !a.no_align,
        gray_mode: GrayMode::WeightedSum,
    };
    let rows = extract_corpus(&a.corpus, a.window, &cfg, ctx.seed)?;
    let samples: Vec<_> = rows.iter().map(|(s, _)| s.clone()).collect();
    write_feature_table(&samples, &a.out)?;
    let aligned = rows.iter().filter(|(_, r)| r.succeeded).count();
    if let Some(path) = &a.rotations {
        let entries = read_manifest(a.corpus.join(MANIFEST_FILE))?;
        let series = rows
            .iter()
            .zip(&entries)
            .filter(|((_, r), _)| r.succeeded)
            .map(|((s, r), e)| {
                debug_assert_eq!(s.id, e.id);
                Ok(RotationSample {
                    timestamp: e.timestamp_secs()?,
                    angle: r.rotation_deg,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_series(&series, path)?;
    }
    Ok(format!(
        "extract-features samples={} aligned={} out={}",
        samples.len(),
        aligned,
        a.out.display()
    ))
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> Result<String> {
    let samples = read_feature_table(&a.features)?;
    let model = train(a.kind, &samples, &ctx.file.classifier, ctx.seed)?;
    save_model(&model, &a.out)?;
    Ok(format!(
        "train kind={} samples={} seed={} out={}",
        a.kind,
        samples.len(),
        ctx.seed,
        a.out.display()
    ))
}

fn eval_cmd(ctx: &Ctx, a: EvalArgs) -> Result<String> {
    let samples = read_feature_table(&a.features)?;
    let report = loocv(&samples, a.kind, &ctx.file.classifier, ctx.seed)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        write_summary(&report, dir.join("summary.json"))?;
        write_per_sample(&report, dir.join("per_sample.csv"))?;
        write_roc(&report, dir.join("roc.csv"))?;
    }
    Ok(format!("eval {}", report.summary_line()))
}

fn classify(ctx: &Ctx, a: ClassifyArgs) -> Result<String> {
    let model = load_model(&a.model)?;
    let (ref_path, window) = resolve_reference(&a.reference)?;
    let mode = gray_mode(a.reference.green);
    let cfg = ExtractConfig {
        align: ctx.file.align.clone(),
        use_alignment: !a.no_align,
        gray_mode: mode,
    };
    let bank = ReferenceBank::new(load_gray(&ref_path, mode)?, window, &cfg)?;
    let image = load_gray(&a.image, mode)?;
    let (fv, alignment) = bank.extract(&image, &cfg, ctx.seed)?;
    let score = model.score(&fv);
    Ok(format!(
        "classify label={} score={:.6} kind={} aligned={} rotation_deg={:.4}",
        model.predict(&fv),
        score,
        model.kind,
        alignment.succeeded,
        alignment.rotation_deg
    ))
}

fn monitor(ctx: &Ctx, a: MonitorArgs) -> Result<String> {
    let series = read_series(&a.series)?;
    let k = a.k.or(ctx.file.monitor.k).unwrap_or(3.0);
    let window = a.window.or(ctx.file.monitor.window);
    let fit = match window {
        Some(w) => fit_trailing(&series, w),
        None if series.len() > DEFAULT_TRAILING_WINDOW => fit_trailing(&series, DEFAULT_TRAILING_WINDOW),
        None => fit_sinusoid_auto(&series),
    }?;
    let flags = detect_anomalies(&series, &fit, k);
    if let Some(out) = &a.out {
        write_flags(&flags, out)?;
    }
    Ok(format!(
        "monitor samples={} amplitude={:.6} omega={:.8} phase={:.6} offset={:.6} residual_sigma={:.6} flagged={}",
        series.len(),
        fit.amplitude,
        fit.omega,
        fit.phase,
        fit.offset,
        fit.residual_sigma,
        flags.len()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<OsString> {
        s.split_whitespace().map(OsString::from).collect()
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(args("printqc --bogus")), 2);
        assert_eq!(run(args("printqc train --features f.csv")), 2);
        assert_eq!(run(args("printqc eval --features f.csv --kind forest")), 2);
        assert_eq!(run(args("printqc")), 2);
    }

    #[test]
    fn operational_errors_exit_one() {
        assert_eq!(run(args("printqc train --features /nonexistent/f.csv --kind svm --out m.json")), 1);
        assert_eq!(run(args("printqc monitor --series /nonexistent/s.csv")), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(args("printqc --help")), 0);
    }

    #[test]
    fn config_file_parses() {
        let text = "seed = 3\n[align]\nmax_kp = 100\n[classifier]\nknn_k = 3\n[classifier.svm]\nc = 2.0\n[monitor]\nk = 4.0\n";
        let f: FileConfig = toml::from_str(text).unwrap();
        assert_eq!(f.seed, Some(3));
        assert_eq!(f.align.max_kp, 100);
        assert_eq!(f.align.ratio, 0.75);
        assert_eq!(f.classifier.knn_k, 3);
        assert_eq!(f.classifier.svm.c, 2.0);
        assert_eq!(f.monitor.k, Some(4.0));
        assert!(toml::from_str::<FileConfig>("nonsense = 1").is_err());
    }
}

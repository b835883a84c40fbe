use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lnrm_core::eval::{self, Column, Variant, DEFAULT_QPS};
use lnrm_core::imageio::{load_frame, save_frame, write_gradient};
use lnrm_core::metrics::{ExternalMetric, Metric, TvScore};
use lnrm_core::synth::{self, UgcParams};
use lnrm_core::{decode, encode, EncodeReport, EncoderConfig, Frame, RdoMode};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

#[derive(Parser)]
#[command(
    name = "lnrm",
    version,
    about = "Block-transform codec with metric-driven RDO"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a PGM/PPM image; prints a JSON report on stdout.
    Encode {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        enc: EncodeArgs,
        #[arg(long, default_value_t = 28)]
        qp: i32,
        /// Also write the encoder's reconstruction as PGM/PPM.
        #[arg(long)]
        recon: Option<PathBuf>,
    },
    /// Decode a bitstream to PGM/PPM.
    Decode { input: PathBuf, output: PathBuf },
    /// Write the built-in metric's gradient as an LNRMG1 file.
    Grad {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        /// Score the first plane only; chroma gradients are zero.
        #[arg(long)]
        luma_only: bool,
    },
    /// Encode at several QPs and write one CSV row per point.
    Sweep {
        input: PathBuf,
        #[command(flatten)]
        enc: EncodeArgs,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_QPS)]
        qps: Vec<i32>,
        /// Value of the image column; defaults to the file stem.
        #[arg(long)]
        image: Option<String>,
        /// Value of the variant column; defaults to the mode.
        #[arg(long)]
        variant: Option<String>,
        /// CSV destination; stdout when absent.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Bjøntegaard delta rate of one sweep CSV against another.
    Bdrate {
        anchor: PathBuf,
        test: PathBuf,
        #[arg(long, default_value = "nrm_score")]
        column: String,
        /// Pick this image when a file holds several curves.
        #[arg(long)]
        image: Option<String>,
    },
    /// Sweep every PGM/PPM in a directory under several variants and print
    /// per-image BD-rates against the first variant with corpus mean and
    /// standard error.
    Report {
        corpus: PathBuf,
        /// `sse` or `lnrm:<alpha>`; the first one is the anchor.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "sse,lnrm:2,lnrm:1,lnrm:0.5"
        )]
        variants: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_QPS)]
        qps: Vec<i32>,
        #[arg(long, value_delimiter = ',', default_value = "psnr_db,nrm_score")]
        columns: Vec<String>,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.85)]
        c: f64,
        /// Also write all sweep points here.
        #[arg(long)]
        curves: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write a seeded synthetic test corpus as PGM/PPM files.
    Corpus {
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long, default_value_t = 3)]
        planes: usize,
        #[arg(long, default_value_t = UgcParams::default().noise_sigma)]
        noise: f64,
        #[arg(long, default_value_t = UgcParams::default().banding_step)]
        banding: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sse,
    Lnrm,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long, value_enum, default_value_t = Mode::Sse)]
    mode: Mode,
    /// `tv` or `external:<gradient file>`.
    #[arg(long, default_value = "tv")]
    metric: String,
    /// Regularization weight: tau = alpha * tau_tilde.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Fixed tau; overrides --alpha.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 0.85)]
    c: f64,
    /// Charbonnier epsilon of the built-in metric.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 3)]
    chroma_qp_offset: i32,
    #[arg(long)]
    threads: Option<usize>,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<lnrm_core::Error> for Failure {
    fn from(e: lnrm_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn positive(name: &str, v: f64) -> Result<(), Failure> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("--{name} must be positive, got {v}")))
    }
}

fn check_qp(qp: i32) -> Result<(), Failure> {
    if (0..=51).contains(&qp) {
        Ok(())
    } else {
        Err(usage(format!("qp {qp} outside [0, 51]")))
    }
}

fn check_threads(threads: Option<usize>) -> Result<(), Failure> {
    match threads {
        Some(0) => Err(usage("--threads must be at least 1")),
        _ => Ok(()),
    }
}

enum MetricChoice {
    Tv(TvScore),
    External(PathBuf),
}

impl EncodeArgs {
    fn validate(&self) -> Result<MetricChoice, Failure> {
        positive("alpha", self.alpha)?;
        positive("c", self.c)?;
        positive("epsilon", self.epsilon)?;
        if let Some(t) = self.tau {
            positive("tau", t)?;
        }
        if !(0..=255).contains(&self.chroma_qp_offset) {
            return Err(usage("--chroma-qp-offset must be in [0, 255]"));
        }
        check_threads(self.threads)?;
        parse_metric(&self.metric, self.epsilon)
    }

    fn config(&self, qp: i32) -> EncoderConfig {
        let mode = match (self.mode, self.tau) {
            (Mode::Sse, _) => RdoMode::Sse,
            (Mode::Lnrm, Some(tau)) => RdoMode::LnrmTau { tau },
            (Mode::Lnrm, None) => RdoMode::Lnrm { alpha: self.alpha },
        };
        let mut cfg = EncoderConfig::new(qp, mode);
        cfg.c = self.c;
        cfg.chroma_qp_offset = self.chroma_qp_offset;
        cfg.threads = self.threads;
        cfg
    }

    fn variant_name(&self) -> String {
        match (self.mode, self.tau) {
            (Mode::Sse, _) => "sse".into(),
            (Mode::Lnrm, Some(tau)) => format!("lnrm_tau{tau}"),
            (Mode::Lnrm, None) => format!("lnrm_a{}", self.alpha),
        }
    }
}

fn parse_metric(spec: &str, epsilon: f64) -> Result<MetricChoice, Failure> {
    if spec == "tv" {
        return Ok(MetricChoice::Tv(TvScore::new(epsilon)?));
    }
    match spec.strip_prefix("external:") {
        Some(path) if !path.is_empty() => Ok(MetricChoice::External(PathBuf::from(path))),
        _ => Err(usage(format!(
            "--metric must be `tv` or `external:<path>`, got {spec:?}"
        ))),
    }
}

/// Builds the metric that steers the encoder. An external gradient is bound
/// to the input so the report can state the input score.
fn build_metric(choice: &MetricChoice, frame: &Frame) -> Result<Box<dyn Metric>, Failure> {
    Ok(match choice {
        MetricChoice::Tv(tv) => Box::new(*tv),
        MetricChoice::External(path) => {
            Box::new(ExternalMetric::from_file(path)?.bind(frame.to_float())?)
        }
    })
}

fn parse_variant(spec: &str) -> Result<Variant, Failure> {
    if spec == "sse" {
        return Ok(Variant::new("sse", EncoderConfig::new(0, RdoMode::Sse)));
    }
    let alpha: f64 = spec
        .strip_prefix("lnrm:")
        .and_then(|a| a.parse().ok())
        .ok_or_else(|| {
            usage(format!(
                "variant must be `sse` or `lnrm:<alpha>`, got {spec:?}"
            ))
        })?;
    positive("variants alpha", alpha)?;
    Ok(Variant::new(
        format!("lnrm_a{alpha}"),
        EncoderConfig::new(0, RdoMode::Lnrm { alpha }),
    ))
}

fn parse_column(s: &str) -> Result<Column, Failure> {
    s.parse()
        .map_err(|_| usage(format!("unknown column {s:?}")))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn json_report(value: &EncodeReport) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.to_string()))
}

fn pick_curve(
    curves: Vec<eval::RdCurve>,
    image: Option<&str>,
    path: &Path,
) -> Result<eval::RdCurve, Failure> {
    let mut matching: Vec<_> = curves
        .into_iter()
        .filter(|c| image.is_none_or(|i| c.image == i))
        .collect();
    match matching.len() {
        1 => Ok(matching.remove(0)),
        0 => Err(Failure::Data(format!(
            "{}: no matching curve",
            path.display()
        ))),
        n => Err(usage(format!(
            "{}: {n} curves; select one with --image",
            path.display()
        ))),
    }
}

fn load_corpus(dir: &Path) -> Result<Vec<(String, Frame)>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm" | "ppm" | "pnm")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::Data(format!(
            "{}: no PGM/PPM files",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| Ok((stem(p), load_frame(p)?)))
        .collect()
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, Failure> {
    match threads {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Data(e.to_string()))?
            .install(f)),
        None => Ok(f()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Encode {
            input,
            output,
            enc,
            qp,
            recon,
        } => {
            let choice = enc.validate()?;
            check_qp(qp)?;
            let frame = load_frame(&input)?;
            let metric = build_metric(&choice, &frame)?;
            let encoded = encode(&frame, Some(metric.as_ref()), &enc.config(qp))?;
            fs::write(&output, &encoded.bitstream)?;
            if let Some(path) = recon {
                save_frame(path, &encoded.reconstruction)?;
            }
            writeln!(stdout, "{}", json_report(&encoded.report)?)?;
        }
        Command::Decode { input, output } => {
            let frame = decode(&fs::read(&input)?)?;
            save_frame(&output, &frame)?;
        }
        Command::Grad {
            input,
            output,
            epsilon,
            luma_only,
        } => {
            positive("epsilon", epsilon)?;
            let mut tv = TvScore::new(epsilon)?;
            if luma_only {
                tv = tv.luma_only();
            }
            let frame = load_frame(&input)?;
            write_gradient(&output, &tv.gradient(&frame.to_float())?)?;
        }
        Command::Sweep {
            input,
            enc,
            qps,
            image,
            variant,
            output,
        } => {
            let choice = enc.validate()?;
            for &qp in &qps {
                check_qp(qp)?;
            }
            let frame = load_frame(&input)?;
            let eval_metric = TvScore::new(enc.epsilon)?;
            let rdo_metric = match enc.mode {
                Mode::Sse => None,
                Mode::Lnrm => Some(build_metric(&choice, &frame)?),
            };
            let mut curve = eval::rd_sweep(
                &frame,
                rdo_metric.as_deref(),
                &eval_metric,
                &enc.config(0),
                &qps,
            )?;
            curve.image = image.unwrap_or_else(|| stem(&input));
            curve.variant = variant.unwrap_or_else(|| enc.variant_name());
            match output {
                Some(path) => eval::write_curves_csv(&[curve], fs::File::create(path)?)?,
                None => eval::write_curves_csv(&[curve], &mut stdout)?,
            }
        }
        Command::Bdrate {
            anchor,
            test,
            column,
            image,
        } => {
            let column = parse_column(&column)?;
            let a = pick_curve(
                eval::read_curves_csv(fs::File::open(&anchor)?)?,
                image.as_deref(),
                &anchor,
            )?;
            let t = pick_curve(
                eval::read_curves_csv(fs::File::open(&test)?)?,
                image.as_deref(),
                &test,
            )?;
            let r = eval::bd_rate(&a, &t, column)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            writeln!(stdout, "anchor,test,column,bd_rate_pct,restricted")?;
            writeln!(
                stdout,
                "{},{},{},{},{}",
                r.anchor, r.test, column, r.bd_rate, r.restricted
            )?;
        }
        Command::Report {
            corpus,
            variants,
            qps,
            columns,
            epsilon,
            c,
            curves,
            threads,
        } => {
            positive("epsilon", epsilon)?;
            positive("c", c)?;
            check_threads(threads)?;
            for &qp in &qps {
                check_qp(qp)?;
            }
            let mut variants = variants
                .iter()
                .map(|v| parse_variant(v))
                .collect::<Result<Vec<_>, _>>()?;
            if variants.len() < 2 {
                return Err(usage("--variants needs an anchor and at least one more"));
            }
            for v in &mut variants {
                v.config.c = c;
            }
            let columns = columns
                .iter()
                .map(|c| parse_column(c))
                .collect::<Result<Vec<_>, _>>()?;
            let images = load_corpus(&corpus)?;
            let tv = TvScore::new(epsilon)?;
            let all = with_threads(threads, || {
                eval::sweep_corpus(&images, &variants, &tv, &qps)
            })??;
            if let Some(path) = curves {
                eval::write_curves_csv(&all, fs::File::create(path)?)?;
            }
            let rep = eval::report(&all, &variants[0].name, &columns)?;
            rep.write_csv(&mut stdout)?;
        }
        Command::Corpus {
            dir,
            count,
            seed,
            width,
            height,
            planes,
            noise,
            banding,
        } => {
            if noise < 0.0 || banding < 0.0 {
                return Err(usage("--noise and --banding must be non-negative"));
            }
            let params = UgcParams {
                noise_sigma: noise,
                banding_step: banding,
            };
            let frames = synth::ugc_corpus(count, seed, width, height, planes, params)
                .map_err(|e| usage(e.to_string()))?;
            fs::create_dir_all(&dir)?;
            let ext = if planes == 1 { "pgm" } else { "ppm" };
            for (name, frame) in &frames {
                save_frame(dir.join(format!("{name}.{ext}")), frame)?;
            }
        }
    }
    stdout.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

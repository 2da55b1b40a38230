//! Command-line interface: argument parsing and one handler per subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use resotok_core::config::{GenConfig, TokenizerConfig};
use resotok_core::flops::{
    count_generator_sample, emit_curves, ArBaselineConfig, Component, CurveRow, CurveSet,
};
use resotok_core::generator::GenCondition;
use resotok_core::imaging::Image;
use resotok_core::sampling::{sample_with, Guidance, SamplerConfig};
use resotok_core::tokenizer::Tokenizer;
use resotok_core::tokens::TokenSeq;
use resotok_core::training::{encode_corpus, procedural_corpus, train_generator, train_tokenizer, GenExample};
use resotok_core::generator::Generator;
use resotok_core::seeded_rng;
use serde::Serialize;

use crate::config::{RunConfig, RunConfigFile, Stage};
use crate::error::{Error, Result};
use crate::io::{self, ModelConfig, TokenSidecar};
use crate::metrics::MetricsLog;

#[derive(Debug, Parser)]
#[command(name = "resotok", version, about = "Resolution-agnostic image tokenizer and autoregressive generator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Train a tokenizer on an image directory or a procedural corpus.
    TrainTok(TrainTokArgs),
    /// Train a generator on token files or on images encoded by a tokenizer.
    TrainGen(TrainGenArgs),
    /// Encode an image into a token file.
    Encode(EncodeArgs),
    /// Decode a token file into an image of any size.
    Decode(DecodeArgs),
    /// Sample tokens for a class and target size, then decode them.
    Generate(GenerateArgs),
    /// Print analytic compute counts and optionally write the curves CSV.
    Flops(FlopsArgs),
    /// Run gradient, quantizer and compute self-checks.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct RunArgs {
    /// JSON file with preset, model/training overrides, paths and seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model preset: micro, desk-sl or desk-ll.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the number of optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON-lines file receiving one record per logged step.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CorpusArgs {
    /// Directory of PNG/PPM images; a procedural corpus is used when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Size of the procedural corpus.
    #[arg(long, default_value_t = 8)]
    pub procedural: usize,
    /// Height of procedural images.
    #[arg(long, default_value_t = 32)]
    pub image_height: usize,
    #[arg(long, default_value_t = 32)]
    pub image_width: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainTokArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainGenArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Directory of `.vtok` files with `.vtok.json` condition sidecars.
    #[arg(long, conflicts_with = "tokenizer")]
    pub tokens: Option<PathBuf>,
    /// Tokenizer checkpoint used to encode the image corpus.
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Token count per encoded image.
    #[arg(long, default_value_t = 16)]
    pub length: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeArgs {
    /// Tokenizer checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Patch size; the capacity rule picks one when absent.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of latent tokens L.
    #[arg(long)]
    pub tokens: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Class label recorded in a JSON sidecar for generator training.
    #[arg(long)]
    pub class: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeArgs {
    /// Tokenizer checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Token file.
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerPreset {
    /// Guidance 1.75, temperature 1, no truncation.
    Quantitative,
    /// Guidance 4, temperature 0.9, top-k 500.
    Qualitative,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Generator checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Tokenizer checkpoint used to decode the sample.
    #[arg(long)]
    pub tokenizer: PathBuf,
    /// Class label; unconditional when absent.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    /// Number of tokens L to sample.
    #[arg(long)]
    pub tokens: usize,
    /// Patch size written to the token header; the capacity rule picks one when absent.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value_t = SamplerPreset::Quantitative)]
    pub preset: SamplerPreset,
    /// Guidance scale; overrides the preset.
    #[arg(long)]
    pub cfg: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// 0 disables top-k truncation.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Decode only the conditional row, without guidance.
    #[arg(long)]
    pub conditional_only: bool,
    /// Decoded image; the token file and its sidecar are written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FlopsArgs {
    #[arg(long, default_value = "reference-ll")]
    pub tokenizer_preset: String,
    #[arg(long, default_value = "reference-xxl")]
    pub generator_preset: String,
    /// Target resolutions as HxW.
    #[arg(long, value_delimiter = ',', default_value = "256x256,512x512,768x1024,1024x1024,2048x2048")]
    pub resolutions: Vec<String>,
    /// Token counts L.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256")]
    pub lengths: Vec<usize>,
    /// Downsampling factors of the 2D autoregressive baseline.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub factors: Vec<usize>,
    /// Also write the rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Add rows summing KV-cached per-step costs of a full sample.
    #[arg(long)]
    pub total_sample: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Worker threads for parallel IO: `RESOTOK_THREADS` or the core count.
pub fn threads() -> Result<usize> {
    match std::env::var("RESOTOK_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("RESOTOK_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn log_config<S: Serialize>(name: &str, value: &S) {
    eprintln!("{name}: {}", serde_json::to_string(value).expect("config serializes"));
}

fn resolve(run: &RunArgs, stage: Stage) -> Result<RunConfig> {
    let file = match &run.config {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::default(),
    };
    let mut cfg = RunConfig::resolve(file, run.preset.as_deref(), stage, run.seed)?;
    if let Some(steps) = run.steps {
        cfg.train.training_steps = steps;
        cfg.train.validate()?;
    }
    if run.out.is_some() {
        cfg.output.clone_from(&run.out);
    }
    Ok(cfg)
}

fn output(cfg: &RunConfig) -> Result<&Path> {
    cfg.output.as_deref().ok_or_else(|| Error::Config("an output checkpoint is required (--out)".into()))
}

fn load_corpus(args: &CorpusArgs, fallback: Option<&Path>, seed: u64) -> Result<Vec<Image>> {
    match args.corpus.as_deref().or(fallback) {
        Some(dir) => io::load_image_dir(dir, threads()?),
        None => Ok(procedural_corpus(args.procedural, args.image_height, args.image_width, seed)?),
    }
}

fn metrics_log(path: &Option<PathBuf>) -> Result<Option<MetricsLog>> {
    path.as_deref().map(MetricsLog::create).transpose()
}

fn train_tok(args: &TrainTokArgs) -> Result<String> {
    let cfg = resolve(&args.run, Stage::Tokenizer)?;
    log_config("config", &cfg);
    let out = output(&cfg)?;
    let corpus = load_corpus(&args.corpus, cfg.corpus.as_deref(), cfg.seed)?;
    let mut tok = Tokenizer::<f32>::new(cfg.tokenizer.clone(), &mut seeded_rng(cfg.seed))?;
    let mut log = metrics_log(&args.run.metrics)?;
    let mut failed = None;
    let losses = train_tokenizer(&mut tok, &corpus, &cfg.train, |m| {
        eprintln!("step {} loss {:.6} recon {:.6} lr {:.3e}", m.step, m.loss, m.recon, m.lr);
        if let Some(Err(e)) = log.as_mut().map(|l| l.write(m)) {
            failed.get_or_insert(e);
        }
    })?;
    failed.map_or(Ok(()), Err)?;
    log.map(MetricsLog::finish).transpose()?;
    io::save_checkpoint(&tok, &ModelConfig::Tokenizer(cfg.tokenizer.clone()), out)?;
    Ok(format!("final loss {:.6}; wrote {}", losses.last().copied().unwrap_or(f64::NAN), out.display()))
}

fn token_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "vtok"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::format(dir, "no .vtok files"));
    }
    Ok(paths)
}

/// Token files with their sidecar conditions; a missing sidecar means the
/// unconditional class at the header's source size.
fn load_token_corpus(dir: &Path, gen: &GenConfig) -> Result<Vec<GenExample>> {
    token_files(dir)?
        .iter()
        .map(|p| {
            let tokens = io::read_tokens(p, gen.codebook.m)?;
            if tokens.n_cb as usize != gen.codebook.n_cb {
                return Err(Error::format(p, format!("{} codebooks, generator expects {}", tokens.n_cb, gen.codebook.n_cb)));
            }
            let side = io::sidecar_path(p);
            let cond = if side.exists() {
                io::read_json::<TokenSidecar>(&side)?.cond.into()
            } else {
                GenCondition::new(None, tokens.height as usize, tokens.width as usize)
            };
            Ok(GenExample { tokens, cond })
        })
        .collect()
}

fn train_gen(args: &TrainGenArgs) -> Result<String> {
    let cfg = resolve(&args.run, Stage::Generator)?;
    log_config("config", &cfg);
    let out = output(&cfg)?;
    let examples = match (&args.tokens, &args.tokenizer) {
        (Some(dir), _) => load_token_corpus(dir, &cfg.generator)?,
        (None, Some(ckpt)) => {
            let tok = io::load_tokenizer(ckpt, Some(cfg.tokenizer.clone()))?;
            let images = load_corpus(&args.corpus, cfg.corpus.as_deref(), cfg.seed)?;
            let classes: Vec<usize> = (0..images.len()).map(|i| i % cfg.generator.num_classes).collect();
            encode_corpus(&tok, &images, &classes, None, args.length)?
        }
        (None, None) => return Err(Error::Config("train-gen needs --tokens DIR or --tokenizer CKPT".into())),
    };
    let mut gen = Generator::<f32>::new(cfg.generator.clone(), &mut seeded_rng(cfg.seed))?;
    let mut log = metrics_log(&args.run.metrics)?;
    let mut failed = None;
    let losses = train_generator(&mut gen, &examples, &cfg.train, |m| {
        eprintln!("step {} loss {:.6} lr {:.3e}", m.step, m.loss, m.lr);
        if let Some(Err(e)) = log.as_mut().map(|l| l.write(m)) {
            failed.get_or_insert(e);
        }
    })?;
    failed.map_or(Ok(()), Err)?;
    log.map(MetricsLog::finish).transpose()?;
    io::save_checkpoint(&gen, &ModelConfig::Generator(cfg.generator.clone()), out)?;
    Ok(format!("final loss {:.6}; wrote {}", losses.last().copied().unwrap_or(f64::NAN), out.display()))
}

fn encode(args: &EncodeArgs) -> Result<String> {
    let tok = io::load_tokenizer(&args.checkpoint, None)?;
    log_config("tokenizer", &tok.cfg);
    let img = io::load_image(&args.image)?;
    let tokens = tok.encode(&img, args.k, args.tokens)?;
    io::write_tokens(&tokens, &args.out)?;
    if let Some(class) = args.class {
        let side = TokenSidecar {
            cond: GenCondition::new(Some(class), img.height(), img.width()).into(),
            sampler: None,
            stopped_at_eos: None,
            source: Some(args.image.clone()),
        };
        io::write_json(&side, &io::sidecar_path(&args.out))?;
    }
    Ok(format!("{} tokens at k={} written to {}", tokens.len(), tokens.k, args.out.display()))
}

fn decode(args: &DecodeArgs) -> Result<String> {
    let tok = io::load_tokenizer(&args.checkpoint, None)?;
    log_config("tokenizer", &tok.cfg);
    let tokens = io::read_tokens(&args.tokens, tok.cfg.codebook.m)?;
    let img = tok.decode(&tokens, args.height, args.width)?;
    io::save_image(&img, &args.out)?;
    Ok(format!("{}x{} image written to {}", img.height(), img.width(), args.out.display()))
}

/// Sampler settings from the preset with explicit flags taking precedence.
pub fn sampler_config(args: &GenerateArgs) -> SamplerConfig {
    let base = match args.preset {
        SamplerPreset::Quantitative => SamplerConfig::default(),
        SamplerPreset::Qualitative => SamplerConfig::qualitative(),
    };
    SamplerConfig {
        cfg_scale: args.cfg.unwrap_or(base.cfg_scale),
        temperature: args.temperature.unwrap_or(base.temperature),
        top_k: args.top_k.unwrap_or(base.top_k),
        top_p: args.top_p.unwrap_or(base.top_p),
        seed: args.seed,
    }
}

/// Samples a token sequence; `None` when end-of-sequence came before any token.
pub fn generate_tokens(
    gen: &Generator<f32>,
    tok: &Tokenizer<f32>,
    cond: GenCondition,
    l: usize,
    k: Option<usize>,
    sampler: &SamplerConfig,
    guidance: Guidance,
) -> Result<(Option<TokenSeq>, bool)> {
    let (gcb, tcb) = (gen.cfg.codebook, tok.cfg.codebook);
    if (gcb.n_cb, gcb.m) != (tcb.n_cb, tcb.m) {
        return Err(Error::Config(format!(
            "generator codebooks {}x{} do not match tokenizer codebooks {}x{}",
            gcb.n_cb, gcb.m, tcb.n_cb, tcb.m
        )));
    }
    let k = match k {
        Some(k) => k,
        None => tok.plan(cond.height, cond.width, None)?.k,
    };
    let out = sample_with(gen, cond, l, sampler, guidance, |_, _| {})?;
    if out.codes.is_empty() {
        return Ok((None, out.stopped_at_eos));
    }
    let tokens = TokenSeq::from_indices(cond.height, cond.width, k, gcb.n_cb, gcb.m, &out.codes)?;
    Ok((Some(tokens), out.stopped_at_eos))
}

fn generate(args: &GenerateArgs) -> Result<String> {
    let gen = io::load_generator(&args.checkpoint, None)?;
    let tok = io::load_tokenizer(&args.tokenizer, None)?;
    let sampler = sampler_config(args);
    log_config("sampler", &sampler);
    log_config("generator", &gen.cfg);
    log_config("tokenizer", &tok.cfg);
    let cond = GenCondition::new(args.class, args.height, args.width);
    let guidance = if args.conditional_only { Guidance::ConditionalOnly } else { Guidance::Classifier };
    let (tokens, stopped) = generate_tokens(&gen, &tok, cond, args.tokens, args.k, &sampler, guidance)?;
    let tokens = tokens.ok_or_else(|| Error::Config("sampling ended before the first token".into()))?;
    let vtok = args.out.with_extension("vtok");
    io::write_tokens(&tokens, &vtok)?;
    let side = TokenSidecar { cond: cond.into(), sampler: Some(sampler), stopped_at_eos: Some(stopped), source: None };
    io::write_json(&side, &io::sidecar_path(&vtok))?;
    let img = tok.decode(&tokens, args.height, args.width)?;
    io::save_image(&img, &args.out)?;
    Ok(format!(
        "{} tokens written to {}; {}x{} image written to {}",
        tokens.len(),
        vtok.display(),
        img.height(),
        img.width(),
        args.out.display()
    ))
}

fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("resolution {s:?} is not HxW"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    match (h.trim().parse(), w.trim().parse()) {
        (Ok(h), Ok(w)) if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(bad()),
    }
}

/// Curve rows for the `flops` command, plus cached-sample totals when asked.
pub fn flops_rows(args: &FlopsArgs) -> Result<Vec<CurveRow>> {
    let resolutions = args.resolutions.iter().map(|s| parse_resolution(s)).collect::<Result<Vec<_>>>()?;
    let tokenizer = TokenizerConfig::preset(&args.tokenizer_preset)?;
    let generator = GenConfig::preset(&args.generator_preset)?;
    let baseline = ArBaselineConfig::matching(&generator);
    let set = CurveSet {
        tokenizer,
        generator: generator.clone(),
        baseline,
        lengths: args.lengths.clone(),
        factors: args.factors.clone(),
    };
    let mut rows = emit_curves(&resolutions, &set)?;
    if args.total_sample {
        for &(h, w) in &resolutions {
            for &l in &args.lengths {
                rows.push(CurveRow {
                    resolution: format!("{h}x{w}"),
                    component: Component::GeneratorSampleTotal,
                    param: l,
                    flops: count_generator_sample(&generator, l, (h, w), 1).total,
                });
            }
        }
    }
    Ok(rows)
}

fn flops(args: &FlopsArgs) -> Result<String> {
    log_config("flops", args);
    let rows = flops_rows(args)?;
    let mut table = format!("{:<12} {:<24} {:>6} {:>16}\n", "resolution", "component", "param", "GFLOPs");
    for r in &rows {
        let _ = writeln!(table, "{:<12} {:<24} {:>6} {:>16.3}", r.resolution, r.component.as_str(), r.param, r.flops as f64 / 1e9);
    }
    if let Some(path) = &args.csv {
        crate::curves::write_csv(&rows, path)?;
        let _ = writeln!(table, "wrote {}", path.display());
    }
    Ok(table.trim_end().to_owned())
}

fn selfcheck(args: &SelfcheckArgs) -> Result<(String, bool)> {
    log_config("selfcheck", args);
    let lines = crate::selfcheck::run(args.seed)?;
    let mut report = String::new();
    for l in &lines {
        let _ = writeln!(report, "{} {}: {}", if l.passed { "PASS" } else { "FAIL" }, l.name, l.detail);
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    let _ = write!(report, "{} checks, {failed} failed", lines.len());
    Ok((report, failed == 0))
}

/// Runs one parsed command; `Ok(false)` means it completed but reported failures.
pub fn run(cli: &Cli) -> Result<(String, bool)> {
    match &cli.command {
        Command::TrainTok(a) => train_tok(a).map(|s| (s, true)),
        Command::TrainGen(a) => train_gen(a).map(|s| (s, true)),
        Command::Encode(a) => encode(a).map(|s| (s, true)),
        Command::Decode(a) => decode(a).map(|s| (s, true)),
        Command::Generate(a) => generate(a).map(|s| (s, true)),
        Command::Flops(a) => flops(a).map(|s| (s, true)),
        Command::Selfcheck(a) => selfcheck(a),
    }
}

/// Parses `argv` and runs it: 0 on success, 1 on runtime failure, 2 on bad usage.
pub fn main_with<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok((report, ok)) => {
            println!("{report}");
            if ok {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolutions_parse() {
        assert_eq!(parse_resolution("768x1024").unwrap(), (768, 1024));
        for bad in ["768", "0x4", "ax4", "4x"] {
            assert!(parse_resolution(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn bad_usage_exits_2() {
        assert_eq!(main_with(["resotok", "nope"]), 2);
        assert_eq!(main_with(["resotok", "decode", "--height", "x"]), 2);
    }

    #[test]
    fn runtime_failure_exits_1() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.vtck");
        let args = ["resotok", "decode", "--checkpoint", missing.to_str().unwrap(), "--tokens", "t.vtok"];
        let args: Vec<&str> = args.into_iter().chain(["--height", "8", "--width", "8", "--out", "o.png"]).collect();
        assert_eq!(main_with(args), 1);
    }

    #[test]
    fn sampler_flags_override_the_preset() {
        let cli = Cli::try_parse_from([
            "resotok", "generate", "--checkpoint", "g", "--tokenizer", "t", "--height", "8", "--width", "8",
            "--tokens", "4", "--out", "o.png", "--preset", "qualitative", "--top-k", "7",
        ])
        .unwrap();
        let Command::Generate(a) = cli.command else { panic!("parsed {:?}", cli.command) };
        let s = sampler_config(&a);
        assert_eq!((s.cfg_scale, s.temperature, s.top_k, s.top_p), (4.0, 0.9, 7, 1.0));
        let d = SamplerConfig::default();
        assert_eq!((d.cfg_scale, d.temperature, d.top_k, d.top_p), (1.75, 1.0, 0, 1.0));
    }

    #[test]
    fn flops_rows_show_flat_generator_and_rising_baseline() {
        let cli = Cli::try_parse_from(["resotok", "flops", "--total-sample"]).unwrap();
        let Command::Flops(a) = cli.command else { panic!() };
        let rows = flops_rows(&a).unwrap();
        let series = |c: Component, p: usize| -> Vec<u64> {
            rows.iter().filter(|r| r.component == c && r.param == p).map(|r| r.flops).collect()
        };
        let g = series(Component::GeneratorForward, 64);
        assert_eq!(g.len(), 5);
        assert!(g.windows(2).all(|w| w[0] == w[1]));
        let s = series(Component::GeneratorSampleTotal, 64);
        assert!(s.windows(2).all(|w| w[0] == w[1]));
        let b = series(Component::Baseline2dAr, 16);
        assert!(b.windows(2).all(|w| w[0] < w[1]), "{b:?}");
    }
}

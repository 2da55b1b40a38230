//! Files: PNG and binary PPM images, `VTOK` token streams, `VTCK`
//! checkpoints, and the JSON sidecars that travel with them.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};
use resotok_core::config::{GenConfig, TokenizerConfig};
use resotok_core::generator::{GenCondition, Generator};
use resotok_core::imaging::Image;
use resotok_core::numerics::{decode_checkpoint, encode_checkpoint, load_module, module_entries, Module, Scalar};
use resotok_core::sampling::SamplerConfig;
use resotok_core::tokenizer::Tokenizer;
use resotok_core::tokens::TokenSeq;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Byte `p` to `2 p / 255 - 1`.
pub fn byte_to_value(p: u8) -> f32 {
    2.0 * p as f32 / 255.0 - 1.0
}

/// Inverse of [`byte_to_value`] with round-half-up and clamping.
pub fn value_to_byte(v: f32) -> u8 {
    let x = (v as f64 + 1.0) * 0.5 * 255.0;
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Reads an 8-bit PNG or binary PPM as RGB.
pub fn load_image(path: &Path) -> Result<Image> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::format(path, e.to_string()))?;
    match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => {}
        other => return Err(Error::format(path, format!("unsupported pixel format {other:?}; 8-bit images only"))),
    }
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = byte_to_value(px[c]);
        }
    }
    Ok(Image::new(h, w, data)?)
}

fn interleaved(img: &Image) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(value_to_byte(img.get(c, y, x)));
            }
        }
    }
    out
}

/// Writes PNG, or binary PPM when the extension is `ppm`.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let ppm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let out = BufWriter::new(file);
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes = interleaved(img);
    let res = if ppm {
        PnmEncoder::new(out)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(&bytes, w, h, ExtendedColorType::Rgb8)
    } else {
        image::codecs::png::PngEncoder::new(out).write_image(&bytes, w, h, ExtendedColorType::Rgb8)
    };
    res.map_err(|e| Error::format(path, e.to_string()))
}

/// Whether `path` names a format [`load_image`] reads.
pub fn is_image_path(path: &Path) -> bool {
    matches!(ImageFormat::from_path(path), Ok(ImageFormat::Png | ImageFormat::Pnm))
}

/// Every image in `dir`, in file-name order, loaded on up to `threads` workers.
pub fn load_image_dir(dir: &Path, threads: usize) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| is_image_path(p))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::format(dir, "no PNG or PPM images"));
    }
    let chunk = paths.len().div_ceil(threads.max(1));
    std::thread::scope(|s| {
        let workers: Vec<_> = paths
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(paths.len());
        for w in workers {
            out.extend(w.join().expect("image loader panicked")?);
        }
        Ok(out)
    })
}

pub fn write_tokens(tokens: &TokenSeq, path: &Path) -> Result<()> {
    fs::write(path, tokens.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a `VTOK` file whose codebooks hold `m` entries.
pub fn read_tokens(path: &Path, m: usize) -> Result<TokenSeq> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TokenSeq::from_bytes(&bytes, m as u32).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.into(), source: e })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

/// `<path>.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Geometry stored beside a checkpoint so it can be rebuilt without flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Tokenizer(TokenizerConfig),
    Generator(GenConfig),
}

pub fn save_checkpoint<T: Scalar, M: Module<T>>(model: &M, config: &ModelConfig, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(&module_entries(model))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    write_json(config, &sidecar_path(path))
}

fn read_checkpoint_into<T: Scalar, M: Module<T>>(model: &mut M, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let entries = decode_checkpoint(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    load_module(model, &entries).map_err(|e| Error::format(path, e.to_string()))
}

fn model_config(path: &Path, fallback: Option<ModelConfig>) -> Result<ModelConfig> {
    let side = sidecar_path(path);
    if side.exists() {
        read_json(&side)
    } else {
        fallback.ok_or_else(|| Error::format(path, "no config sidecar and no preset given"))
    }
}

/// Tokenizer from a checkpoint, its geometry from the sidecar or `fallback`.
pub fn load_tokenizer(path: &Path, fallback: Option<TokenizerConfig>) -> Result<Tokenizer<f32>> {
    match model_config(path, fallback.map(ModelConfig::Tokenizer))? {
        ModelConfig::Tokenizer(cfg) => {
            let mut tok = Tokenizer::new(cfg, &mut resotok_core::seeded_rng(0))?;
            read_checkpoint_into(&mut tok, path)?;
            Ok(tok)
        }
        ModelConfig::Generator(_) => Err(Error::format(path, "checkpoint holds a generator, expected a tokenizer")),
    }
}

/// Generator from a checkpoint, its geometry from the sidecar or `fallback`.
pub fn load_generator(path: &Path, fallback: Option<GenConfig>) -> Result<Generator<f32>> {
    match model_config(path, fallback.map(ModelConfig::Generator))? {
        ModelConfig::Generator(cfg) => {
            let mut gen = Generator::new(cfg, &mut resotok_core::seeded_rng(0))?;
            read_checkpoint_into(&mut gen, path)?;
            Ok(gen)
        }
        ModelConfig::Tokenizer(_) => Err(Error::format(path, "checkpoint holds a tokenizer, expected a generator")),
    }
}

/// Condition of a token file in JSON form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionRecord {
    /// `None` is the unconditional class.
    pub class: Option<usize>,
    pub height: usize,
    pub width: usize,
}

impl From<GenCondition> for ConditionRecord {
    fn from(c: GenCondition) -> Self {
        ConditionRecord { class: c.class, height: c.height, width: c.width }
    }
}

impl From<ConditionRecord> for GenCondition {
    fn from(c: ConditionRecord) -> Self {
        GenCondition::new(c.class, c.height, c.width)
    }
}

/// Metadata written beside a `VTOK` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenSidecar {
    pub cond: ConditionRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopped_at_eos: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
}

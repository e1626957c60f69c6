use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rirkit::codec::{train_rvq, Codegram, RvqCodebooks, RvqConfig};
use rirkit::dsp::{conform, noise_floor_db, read_wav, speech_like, write_wav, AcousticParams, Waveform};
use rirkit::eval::{evaluate_set, reports_to_csv, EvalOptions};
use rirkit::manifest::{Manifest, ManifestRow};
use rirkit::params::{default_grids, QuantizedParams};
use rirkit::sampling::{
    ar_generate, euler_sample, gaussian_latent, maskgit_generate, CodegramShape, Guidance, MaskSchedule, NgramModel,
    OracleClassifier, OracleMaskedModel, OracleVelocity,
};
use rirkit::synth::{coherent_grid_target, synth_rir, SynthTarget};
use serde_json::{json, Value};

use crate::config::Config;
use crate::SampleMode;

/// Number of generated dry signals when no dry directory is given.
const DEFAULT_DRY_COUNT: u64 = 4;

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// `file` relative to `base`, so manifests can move together with their data.
fn manifest_path(file: &Path, base: &Path) -> String {
    let file = fs::canonicalize(file).unwrap_or_else(|_| file.to_path_buf());
    let base = fs::canonicalize(base).unwrap_or_else(|_| base.to_path_buf());
    let common = file.components().zip(base.components()).take_while(|(a, b)| a == b).count();
    let mut rel = PathBuf::new();
    for _ in base.components().skip(common) {
        rel.push("..");
    }
    rel.extend(file.components().skip(common));
    rel.to_string_lossy().into_owned()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_session_wave(path: &Path, cfg: &Config, rate: u32) -> Result<Waveform> {
    let raw = read_wav(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(conform(&raw, rate, cfg.clip_seconds)?)
}

/// Seeded generator for item `index` of a batch.
fn item_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn ingest_one(path: &Path, base: &Path, cfg: &Config, rate: u32) -> ManifestRow {
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let wav_path = manifest_path(path, base);
    let invalid = |reason: String| ManifestRow::invalid(id.clone(), wav_path.clone(), reason);

    let w = match read_wav(path).map_err(|e| e.to_string()).and_then(|r| conform(&r, rate, cfg.clip_seconds).map_err(|e| e.to_string())) {
        Ok(w) => w,
        Err(e) => return invalid(format!("unreadable: {e}")),
    };
    if w.is_silent() {
        return invalid("degenerate-signal".into());
    }
    match noise_floor_db(&w) {
        Ok(nf) if nf > cfg.ingest.noise_floor_max_db => return invalid(format!("noise-floor: {nf:.1} dB")),
        Ok(_) => {}
        Err(_) => return invalid("degenerate-signal".into()),
    }
    let params = match rirkit::dsp::analyze(&w) {
        Ok(p) => p,
        Err(_) => return invalid("degenerate-signal".into()),
    };
    if params.broadband.t30_s.is_none() {
        return ManifestRow { params: Some(params), ..invalid("t30-fit-failed".into()) };
    }
    if params.broadband.c80_db.is_none() {
        return ManifestRow { params: Some(params), ..invalid("c80-infinite".into()) };
    }
    let quantized = QuantizedParams::from_params(&params, &default_grids()).ok();
    ManifestRow { params: Some(params), quantized, ..ManifestRow::valid(id, wav_path) }
}

pub fn ingest(cfg: &Config, dir: &Path, out: &Path, rate: u32) -> Result<Value> {
    let files = wav_files(dir)?;
    if files.is_empty() {
        bail!("no WAV files in {}", dir.display());
    }
    let base = parent_dir(out);
    fs::create_dir_all(&base)?;
    let rows: Vec<ManifestRow> = files.par_iter().map(|f| ingest_one(f, &base, cfg, rate)).collect();
    let manifest = Manifest::new(rows)?;
    manifest.save(out)?;
    let valid = manifest.rows().iter().filter(|r| r.valid).count();
    Ok(json!({
        "command": "ingest",
        "rows": manifest.len(),
        "valid": valid,
        "invalid": manifest.len() - valid,
        "manifest": out,
    }))
}

pub fn analyze(wav: &Path, out: Option<&Path>) -> Result<Value> {
    let w = read_wav(wav).with_context(|| format!("reading {}", wav.display()))?;
    let params = rirkit::dsp::analyze(&w)?;
    if let Some(out) = out {
        write_json(out, &params)?;
    }
    Ok(json!({ "command": "analyze", "wav": wav, "params": params }))
}

pub fn quantize(params: &Path, out: Option<&Path>) -> Result<Value> {
    let p: AcousticParams = read_json(params)?;
    let q = QuantizedParams::from_params(&p, &default_grids())?;
    if let Some(out) = out {
        write_json(out, &q)?;
    }
    Ok(json!({ "command": "quantize", "indices": q.indices() }))
}

pub enum SynthInput {
    Params(PathBuf),
    Manifest(PathBuf),
    Random(usize),
}

pub fn synth(cfg: &Config, source: SynthInput, out_dir: &Path, seed: u64) -> Result<Value> {
    let jobs: Vec<(String, Option<AcousticParams>)> = match source {
        SynthInput::Params(p) => vec![("synth".into(), Some(read_json(&p)?))],
        SynthInput::Manifest(m) => Manifest::load(&m)?
            .rows()
            .iter()
            .map(|r| (r.id.clone(), r.params.clone().filter(|_| r.valid)))
            .collect(),
        SynthInput::Random(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|i| (format!("rir_{i:04}"), Some(coherent_grid_target(&mut rng)))).collect()
        }
    };
    fs::create_dir_all(out_dir)?;
    let results: Vec<(ManifestRow, bool)> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, (id, params))| -> Result<_> {
            let name = format!("{id}.wav");
            let Some(params) = params else {
                return Ok((ManifestRow::invalid(id.clone(), name, "no-target"), false));
            };
            let mut target = SynthTarget::filled(params, seed.wrapping_add(i as u64))?;
            target.sample_rate_hz = cfg.session_rate;
            target.duration_s = cfg.clip_seconds;
            let (w, report) = synth_rir(&target).with_context(|| format!("synthesising {id}"))?;
            write_wav(out_dir.join(&name), &w)?;
            Ok((ManifestRow::valid(id.clone(), name), report.converged))
        })
        .collect::<Result<_>>()?;
    let converged = results.iter().filter(|r| r.1).count();
    let manifest = Manifest::new(results.into_iter().map(|r| r.0).collect())?;
    let path = out_dir.join("manifest.jsonl");
    manifest.save(&path)?;
    Ok(json!({ "command": "synth", "count": manifest.len(), "converged": converged, "manifest": path }))
}

fn valid_waves(manifest: &Manifest, cfg: &Config, rate: u32) -> Result<Vec<Waveform>> {
    manifest
        .rows()
        .par_iter()
        .filter(|r| r.valid)
        .map(|r| load_session_wave(&manifest.wav_path(r), cfg, rate))
        .collect()
}

pub fn codec_train(cfg: &Config, manifest: &Path, out: &Path, seed: u64) -> Result<Value> {
    let m = Manifest::load(manifest)?;
    let corpus = valid_waves(&m, cfg, cfg.session_rate)?;
    let rvq = RvqConfig { seed, ..cfg.codec };
    let codec = train_rvq(&corpus, &rvq)?;
    codec.save(out)?;
    Ok(json!({
        "command": "codec-train",
        "clips": corpus.len(),
        "num_stages": codec.num_stages(),
        "codebook_size": codec.codebook_size(),
        "frame_len": codec.frame_len(),
        "trained_on": codec.trained_on(),
        "codec": out,
    }))
}

pub fn codec_encode(cfg: &Config, codec: &Path, wav: &Path, out: &Path) -> Result<Value> {
    let codec = RvqCodebooks::load(codec)?;
    let w = load_session_wave(wav, cfg, codec.sample_rate())?;
    let c = codec.encode(&w)?;
    c.save(out)?;
    Ok(json!({ "command": "codec-encode", "frames": c.frames(), "num_stages": c.num_stages, "codegram": out }))
}

pub fn codec_decode(codec: &Path, codegram: &Path, out: &Path) -> Result<Value> {
    let codec = RvqCodebooks::load(codec)?;
    let c = Codegram::load(codegram)?;
    let w = codec.decode(&c)?;
    write_wav(out, &w)?;
    Ok(json!({ "command": "codec-decode", "samples": w.len(), "wav": out }))
}

fn condition_of(row: &ManifestRow) -> Option<QuantizedParams> {
    row.quantized
        .clone()
        .or_else(|| row.params.as_ref().and_then(|p| QuantizedParams::from_params(p, &default_grids()).ok()))
}

pub fn sample(
    cfg: &Config,
    mode: SampleMode,
    codec: &Path,
    manifest: &Path,
    train: Option<&Path>,
    out_dir: &Path,
    seed: u64,
) -> Result<Value> {
    let codec = RvqCodebooks::load(codec)?;
    let rate = codec.sample_rate();
    if rate != cfg.session_rate {
        bail!("codec sample rate {rate} Hz differs from the session rate {} Hz", cfg.session_rate);
    }
    let refs = Manifest::load(manifest)?;
    let (l, k) = (codec.num_stages(), codec.codebook_size());
    let frames = codec.frames_for((cfg.clip_seconds * rate as f64).round() as usize);
    let sc = &cfg.sample;

    let ngram = match mode {
        SampleMode::ArCfg | SampleMode::ArCg => {
            let corpus_manifest = match train {
                Some(t) => Manifest::load(t)?,
                None => refs.clone(),
            };
            let corpus: Vec<Vec<u16>> = valid_waves(&corpus_manifest, cfg, rate)?
                .par_iter()
                .map(|w| codec.encode(w).map(|c| c.flatten()))
                .collect::<Result<_, _>>()?;
            Some(NgramModel::train(&corpus, sc.ngram_order, k, l, sc.ngram_alpha)?)
        }
        _ => None,
    };
    let classifier = OracleClassifier { grids: default_grids(), sharpness: sc.classifier_sharpness };

    fs::create_dir_all(out_dir)?;
    let rows: Vec<ManifestRow> = refs
        .rows()
        .par_iter()
        .enumerate()
        .map(|(i, r)| -> Result<ManifestRow> {
            let name = format!("{}.wav", r.id);
            if !r.valid {
                return Ok(ManifestRow::invalid(r.id.clone(), name, "reference-invalid"));
            }
            let mut rng = item_rng(seed, i);
            let condition = condition_of(r);
            let reference = || load_session_wave(&refs.wav_path(r), cfg, rate);
            let wave = match mode {
                SampleMode::ArCfg | SampleMode::ArCg => {
                    let model = ngram.as_ref().expect("trained above");
                    let guidance = match (mode, &condition) {
                        (SampleMode::ArCg, Some(target)) => {
                            Guidance::Cg { classifier: &classifier, codec: &codec, target }
                        }
                        (SampleMode::ArCg, None) => {
                            return Ok(ManifestRow::invalid(r.id.clone(), name, "no-target"));
                        }
                        _ => Guidance::Cfg,
                    };
                    let tokens = ar_generate(model, condition.as_ref(), &sc.guidance, &guidance, frames * l, &mut rng)?;
                    let c = Codegram::unflatten(&tokens, l, k)?;
                    c.save(out_dir.join(format!("{}.cgr", r.id)))?;
                    codec.decode(&c)?
                }
                SampleMode::Maskgit => {
                    let model = OracleMaskedModel { target: codec.encode(&reference()?)? };
                    let shape = CodegramShape { num_stages: l, codebook_size: k, frames };
                    let schedule = MaskSchedule { total_steps: sc.maskgit_steps };
                    let c = maskgit_generate(
                        &model,
                        condition.as_ref(),
                        shape,
                        &schedule,
                        sc.guidance.cfg_weight,
                        sc.guidance.temperature,
                        &mut rng,
                    )?;
                    c.save(out_dir.join(format!("{}.cgr", r.id)))?;
                    codec.decode(&c)?
                }
                SampleMode::Flow => {
                    let model = OracleVelocity { target: codec.frames_as_latent(&reference()?) };
                    let x0 = gaussian_latent(frames, codec.frame_len(), &mut rng);
                    let z = euler_sample(&model, x0, condition.as_ref(), sc.flow_steps, sc.guidance.cfg_weight)?;
                    codec.latent_to_waveform(&z)?
                }
            };
            write_wav(out_dir.join(&name), &wave)?;
            Ok(ManifestRow::valid(r.id.clone(), name))
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest::new(rows)?;
    let path = out_dir.join("manifest.jsonl");
    manifest.save(&path)?;
    let mode_name = clap::ValueEnum::to_possible_value(&mode).map(|v| v.get_name().to_string());
    Ok(json!({
        "command": "sample",
        "mode": mode_name,
        "count": manifest.rows().iter().filter(|r| r.valid).count(),
        "frames": frames,
        "manifest": path,
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    cfg: &Config,
    generated: &Path,
    reference: &Path,
    dry_dir: Option<&Path>,
    out: &Path,
    csv: Option<&Path>,
    method: &str,
    seed: u64,
) -> Result<Value> {
    let generated = Manifest::load(generated)?;
    let reference = Manifest::load(reference)?;
    let dry: Vec<Waveform> = match dry_dir {
        Some(d) => {
            let files = wav_files(d)?;
            if files.is_empty() {
                bail!("no dry WAV files in {}", d.display());
            }
            files.iter().map(|f| read_wav(f).with_context(|| format!("reading {}", f.display()))).collect::<Result<_>>()?
        }
        None => (1..=DEFAULT_DRY_COUNT)
            .map(|s| speech_like(cfg.eval.dry_seconds, cfg.session_rate, s))
            .collect::<Result<_, _>>()?,
    };
    let opts = EvalOptions {
        n_resamples: cfg.eval.n_resamples,
        level: cfg.eval.level,
        seed,
        session_rate: cfg.session_rate,
        clip_seconds: cfg.clip_seconds,
    };
    let report = evaluate_set(method, &generated, &reference, &dry, &opts)?;
    fs::write(out, report.to_json() + "\n").with_context(|| format!("writing {}", out.display()))?;
    if let Some(csv) = csv {
        fs::write(csv, reports_to_csv(std::slice::from_ref(&report)))?;
    }
    let t30 = report.metric("t30").and_then(|m| m.interval).map(|i| i.mean);
    Ok(json!({
        "command": "eval",
        "method": method,
        "samples": report.samples,
        "excluded_samples": report.excluded_samples,
        "t30_mean": t30,
        "report": out,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_paths_are_relative() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data/a.wav");
        fs::create_dir_all(data.parent().unwrap()).unwrap();
        fs::write(&data, b"").unwrap();
        fs::create_dir_all(tmp.path().join("out/ref")).unwrap();
        assert_eq!(manifest_path(&data, &tmp.path().join("out/ref")), "../../data/a.wav");
        assert_eq!(manifest_path(&data, &tmp.path().join("data")), "a.wav");
    }
}

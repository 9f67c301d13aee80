use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use hvdecode::dataio::{save_embeddings, SyntheticSpec};
use hvdecode::decomposition::providers::{embedder_from_spec, saliency_from_spec};
use hvdecode::decomposition::{decompose as split_views, embed_triplet, BinaryMask, EmbeddingCache, EmbeddingTable, Image, StimulusTriplet, View};
use hvdecode::evaluation::{compute_rsm, count_parameters, estimate_flops, per_view_retrieval, AblationTable, Protocol, RetrievalReport, SubjectResult};
use hvdecode::experiment::{
    class_labels, evaluate_model, run_ablation, sweep_attention, test_queries, train_loso, train_subject, Dataset, Gallery, RunConfig,
};
use hvdecode::objective::ViewSet;
use hvdecode::tensor_file::{read_tensor, write_tensor, Tensor};
use hvdecode::training::{load_checkpoint, save_checkpoint};
use hvdecode::{Model32, ModelConfig};

use crate::plot::write_heatmap;
use crate::CACHE_ENV;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: Option<&Path>, data: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = data {
        cfg.data.root = Some(d.to_path_buf());
        cfg.data.synthetic = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    Dep,
    Loso,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Dep => Protocol::SubjectDependent,
            ProtocolArg::Loso => Protocol::Loso,
        }
    }
}

// ---------------------------------------------------------------- decompose

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Directory of PNG/JPEG stimuli; the file stem becomes the image id.
    #[arg(long)]
    images: PathBuf,
    /// `center-surround[:radius]`, `dir:<path>` or `cmd:<program> [args]`.
    #[arg(long, default_value = "center-surround")]
    saliency_provider: String,
    /// Mask threshold; pixels with saliency strictly above it are kept.
    #[arg(long, default_value_t = 0.5)]
    tau: f32,
    /// Square working resolution.
    #[arg(long, default_value_t = 512)]
    resolution: usize,
    /// Output directory (one sub-directory per image plus manifest.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct TripletRecord {
    id: String,
    source: String,
    coverage: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TripletManifest {
    provider: String,
    tau: f32,
    resolution: usize,
    images: Vec<TripletRecord>,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    out.sort();
    if out.is_empty() {
        bail!(hvdecode::Error::MissingFile(dir.join("*.png")));
    }
    Ok(out)
}

fn read_image(path: &Path) -> Result<Image<f32>> {
    let img = image::open(path).with_context(|| format!("decoding {}", path.display()))?.to_rgb32f();
    let (w, h) = img.dimensions();
    Ok(Image::new(h as usize, w as usize, 3, img.into_raw())?)
}

pub fn decompose(a: DecomposeArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.tau) {
        bail!(hvdecode::Error::InvalidArgument(format!("tau = {} outside [0, 1]", a.tau)));
    }
    let provider = saliency_from_spec(&a.saliency_provider)?;
    let mut records = Vec::new();
    for path in image_files(&a.images)? {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let t = split_views(&id, &read_image(&path)?, provider.as_ref(), a.tau, a.resolution)?;
        let dir = a.out.join(&id);
        let d = a.resolution;
        let mask: Vec<f32> = t.mask.values.iter().map(|&v| v as f32).collect();
        write_tensor(&dir.join("mask.tensor"), &Tensor::new("mask", vec![d, d], mask)?)?;
        write_tensor(&dir.join("foreground.tensor"), &Tensor::new("foreground", vec![d, d, t.raw.channels], t.foreground.data.clone())?)?;
        write_tensor(&dir.join("raw.tensor"), &Tensor::new("raw", vec![d, d, t.raw.channels], t.raw.data.clone())?)?;
        image::GrayImage::from_raw(d as u32, d as u32, t.mask.values.iter().map(|&v| v * 255).collect())
            .context("mask buffer size")?
            .save(dir.join("mask.png"))
            .context("writing mask.png")?;
        records.push(TripletRecord {
            id,
            source: path.display().to_string(),
            coverage: t.mask.coverage(),
        });
    }
    log::info!("decomposed {} images", records.len());
    write_json(
        &a.out.join("manifest.json"),
        &TripletManifest {
            provider: provider.provider_id(),
            tau: a.tau,
            resolution: a.resolution,
            images: records,
        },
    )
}

// -------------------------------------------------------------------- embed

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Output directory of `decompose`.
    #[arg(long)]
    triplets: PathBuf,
    /// `meanpool:<dim>`, `randproj:<dim>[:seed]` or `cmd:<dim>:<program> [args]`.
    #[arg(long, default_value = "meanpool:1024")]
    provider: String,
    /// Embedding cache root [default: $HVDECODE_CACHE, else .hvdecode-cache].
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Directory receiving embeddings.tensor and embedding_index.json.
    #[arg(long)]
    out: PathBuf,
}

fn load_triplet(dir: &Path, tau: f32) -> Result<StimulusTriplet> {
    let m = read_tensor(&dir.join("mask.tensor"))?;
    let f = read_tensor(&dir.join("foreground.tensor"))?;
    let r = read_tensor(&dir.join("raw.tensor"))?;
    if m.shape.len() != 2 || r.shape.len() != 3 || f.shape != r.shape {
        bail!(hvdecode::Error::Shape(format!("{}: inconsistent triplet tensors", dir.display())));
    }
    let (h, w, c) = (r.shape[0], r.shape[1], r.shape[2]);
    Ok(StimulusTriplet {
        mask: BinaryMask::new(m.shape[0], m.shape[1], m.data.iter().map(|&v| (v > 0.5) as u8).collect())?,
        foreground: Image::new(h, w, c, f.data)?,
        raw: Image::new(h, w, c, r.data)?,
        tau,
    })
}

pub fn embed(a: EmbedArgs) -> Result<()> {
    let manifest: TripletManifest = serde_json::from_slice(&fs::read(a.triplets.join("manifest.json")).context("reading triplet manifest")?)?;
    let provider = embedder_from_spec(&a.provider)?;
    let root = a
        .cache
        .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(".hvdecode-cache"));
    let cache = EmbeddingCache::new(root);
    let mut rows = Vec::new();
    for rec in &manifest.images {
        let t = load_triplet(&a.triplets.join(&rec.id), manifest.tau)?;
        t.check_invariant()?;
        rows.push(embed_triplet(&rec.id, &t, provider.as_ref(), Some(&cache))?);
    }
    let table = EmbeddingTable::from_triplets(&rows)?;
    save_embeddings(&a.out, &table)?;
    let ids: Vec<&str> = manifest.images.iter().map(|r| r.id.as_str()).collect();
    write_json(
        &a.out.join("embedding_index.json"),
        &serde_json::json!({ "provider": provider.provider_id(), "dim": table.dim(), "images": ids }),
    )
}

// -------------------------------------------------------------------- synth

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthetic spec; omitted keys take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &a.spec {
        Some(p) => serde_json::from_slice(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)
            .map_err(|e| hvdecode::Error::Config(format!("{}: {e}", p.display())))?,
        None => SyntheticSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let ds = hvdecode::dataio::generate_synthetic(&spec)?;
    ds.write(&a.out)?;
    log::info!("wrote {} subjects to {}", ds.subjects.len(), a.out.display());
    Ok(())
}

// -------------------------------------------------------------------- train

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; overrides the config's data source.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Subject to train on (dep) or hold out (loso) [default: first].
    #[arg(long)]
    subject: Option<String>,
    /// Overrides eval.protocol.
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    /// Overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory: checkpoint/, train_log.jsonl, report.json, report.csv, config.json.
    #[arg(long)]
    out: PathBuf,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), a.data.as_deref())?;
    if let Some(p) = a.protocol {
        cfg.eval.protocol = p.into();
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let ds = Dataset::resolve(&cfg.data)?;
    let subject = match &a.subject {
        Some(s) => ds.subject_index(s)?,
        None => 0,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut log_lines = String::new();
    let mut on_epoch = |r: &hvdecode::training::EpochRecord| {
        log::info!("epoch {} train {:.5} val {:?}", r.epoch, r.train_loss, r.val_loss);
        log_lines.push_str(&serde_json::to_string(r).expect("record serializes"));
        log_lines.push('\n');
    };
    let seed = cfg.train.seed;
    let run = match cfg.eval.protocol {
        Protocol::SubjectDependent => train_subject::<f32>(&ds, subject, &cfg, seed, &mut on_epoch)?,
        Protocol::Loso => train_loso::<f32>(&ds, subject, &cfg, seed, &mut on_epoch)?,
    };
    write_text(&a.out.join("train_log.jsonl"), &log_lines)?;
    for w in &run.outcome.warnings {
        log::warn!("{w}");
    }
    save_checkpoint(
        &a.out.join("checkpoint"),
        &run.outcome.best,
        &cfg.train,
        run.outcome.best_epoch,
        run.outcome.best_val_loss,
        &run.outcome.rng_digest,
    )?;
    let report = RetrievalReport::new(cfg.eval.protocol, vec![run.result], cfg.echo())?;
    write_json(&a.out.join("report.json"), &report)?;
    write_text(&a.out.join("report.csv"), &report.to_csv()?)?;
    write_json(&a.out.join("config.json"), &cfg)
}

// --------------------------------------------------------------------- eval

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Protocol label recorded in the report.
    #[arg(long, value_enum, default_value = "dep")]
    protocol: ProtocolArg,
    /// Evaluate only this subject [default: all].
    #[arg(long)]
    subject: Option<String>,
    /// Report path (JSON); a CSV sibling is written next to it.
    #[arg(long)]
    report: PathBuf,
    /// Also dump per-view Top-N ranked concept lists to this JSON file.
    #[arg(long)]
    lists: Option<PathBuf>,
    /// Length of the dumped lists.
    #[arg(long, default_value_t = 10)]
    top_n: usize,
}

#[derive(Debug, Serialize)]
struct RankedDump {
    subject: String,
    view: String,
    query_concept: String,
    ranked_concepts: Vec<String>,
}

fn eval_dataset(data: &Path, subject: &Option<String>) -> Result<Dataset> {
    let subjects = subject.iter().cloned().collect::<Vec<_>>();
    Ok(Dataset::load(data, &subjects)?)
}

fn checkpoint_config(model: &Model32, train: &hvdecode::training::TrainConfig, data: &Path, protocol: Protocol) -> RunConfig {
    let mut cfg = RunConfig {
        model: model.config.clone(),
        train: train.clone(),
        ..Default::default()
    };
    cfg.data.root = Some(data.to_path_buf());
    cfg.eval.protocol = protocol;
    cfg
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (model, meta) = load_checkpoint::<f32>(&a.checkpoint)?;
    let ds = eval_dataset(&a.data, &a.subject)?;
    let protocol: Protocol = a.protocol.into();
    let cfg = checkpoint_config(&model, &meta.train, &a.data, protocol);
    let gallery = Gallery::<f32>::new(&ds)?;
    let name = |g: usize| {
        ds.catalog
            .concept(gallery.concept_ids[g])
            .map(|c| c.name.clone())
            .unwrap_or_default()
    };
    let mut runs = Vec::new();
    let mut dumps = Vec::new();
    for s in &ds.subjects {
        let q = test_queries(&s.test, cfg.data.average_test_repeats);
        let (feats, views) = evaluate_model(&model, &q, &gallery)?;
        if a.lists.is_some() {
            let truth = gallery.truth(&q.concept_ids)?;
            let sets = View::ALL.iter().map(|&v| ViewSet::new(&[v]).expect("nonempty")).chain([ViewSet::TRIPLE]);
            for vs in sets {
                let r = per_view_retrieval(&feats, &gallery.embeddings, gallery.dim, vs, &truth, a.top_n)?;
                dumps.extend(r.queries.iter().map(|rq| RankedDump {
                    subject: s.name.clone(),
                    view: r.views.clone(),
                    query_concept: name(rq.truth),
                    ranked_concepts: rq.ranked.iter().map(|&g| name(g)).collect(),
                }));
            }
        }
        runs.push(SubjectResult {
            subject: s.name.clone(),
            seed: meta.train.seed,
            views,
        });
    }
    let report = RetrievalReport::new(protocol, runs, cfg.echo())?;
    write_json(&a.report, &report)?;
    write_text(&a.report.with_extension("csv"), &report.to_csv()?)?;
    if let Some(p) = &a.lists {
        write_json(p, &dumps)?;
    }
    Ok(())
}

// ------------------------------------------------------------------- ablate

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; overrides the config's data source.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory: ablation.json, ablation.csv, ablation.md.
    #[arg(long)]
    out: PathBuf,
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), a.data.as_deref())?;
    let ds = Dataset::resolve(&cfg.data)?;
    let table = run_ablation::<f32>(&ds, &cfg)?;
    write_json(&a.out.join("ablation.json"), &table)?;
    write_text(&a.out.join("ablation.csv"), &table.to_csv()?)?;
    write_text(&a.out.join("ablation.md"), &table.to_markdown())
}

// ---------------------------------------------------------------------- rsm

#[derive(Debug, Args)]
pub struct RsmArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Subject whose test trials are used [default: first].
    #[arg(long)]
    subject: Option<String>,
    /// Output TensorFile; category blocks go to a `.json` sibling.
    #[arg(long)]
    out: PathBuf,
    /// Optional PNG heatmap.
    #[arg(long)]
    plot: Option<PathBuf>,
}

pub fn rsm(a: RsmArgs) -> Result<()> {
    let (model, _) = load_checkpoint::<f32>(&a.checkpoint)?;
    let ds = eval_dataset(&a.data, &a.subject)?;
    let s = &ds.subjects[0];
    let q = test_queries(&s.test, true);
    let feats = model.encode(&q.data, q.n_trials)?;
    let labels = class_labels(&ds.catalog, &q.concept_ids)?;
    let m = compute_rsm(&feats, 3 * model.embed_dim(), &labels)?;
    write_tensor(&a.out, &m.to_tensor("rsm")?)?;
    let concepts: Vec<usize> = m.order.iter().map(|&i| q.concept_ids[i]).collect();
    write_json(
        &a.out.with_extension("json"),
        &serde_json::json!({ "subject": s.name, "size": m.size, "concepts": concepts, "blocks": m.blocks }),
    )?;
    if let Some(p) = &a.plot {
        write_heatmap(p, &m)?;
    }
    Ok(())
}

// --------------------------------------------------------------- sweep-attn

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Integration depths: inclusive range `a..b` or a list `1,2,3`.
    #[arg(long, default_value = "0..5")]
    layers: String,
    /// Head counts: inclusive range or list.
    #[arg(long, default_value = "1,2,3,4,6")]
    heads: String,
    /// Output directory: sweep.json, sweep.csv.
    #[arg(long)]
    out: PathBuf,
}

pub(crate) fn parse_grid(s: &str) -> Result<Vec<usize>> {
    let bad = || hvdecode::Error::InvalidArgument(format!("cannot parse `{s}` as a range `a..b` or list `x,y`"));
    if let Some((lo, hi)) = s.split_once("..") {
        let (lo, hi): (usize, usize) = (lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
        if lo > hi {
            bail!(bad());
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad().into())).collect()
}

pub fn sweep_attn(a: SweepArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), a.data.as_deref())?;
    let ds = Dataset::resolve(&cfg.data)?;
    let points = sweep_attention::<f32>(&ds, &cfg, &parse_grid(&a.layers)?, &parse_grid(&a.heads)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n_layers", "heads", "parameters", "top1_mean", "top1_std", "top5_mean", "top5_std"])?;
    for p in &points {
        w.write_record([
            p.n_layers.to_string(),
            p.heads.to_string(),
            p.parameters.to_string(),
            format!("{:.6}", p.mean.top1),
            format!("{:.6}", p.std.top1),
            format!("{:.6}", p.mean.top5),
            format!("{:.6}", p.std.top5),
        ])?;
    }
    write_json(&a.out.join("sweep.json"), &serde_json::json!({ "points": points, "config": cfg.echo() }))?;
    write_text(&a.out.join("sweep.csv"), &String::from_utf8(w.into_inner()?)?)
}

// ------------------------------------------------------------------- report

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON files from `train`, `eval` or `ablate`.
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Output file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum AnyReport {
    Retrieval(RetrievalReport),
    Ablation(AblationTable),
}

fn read_report(path: &Path) -> Result<AnyReport> {
    let raw = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(r) = serde_json::from_slice::<RetrievalReport>(&raw) {
        return Ok(AnyReport::Retrieval(r));
    }
    match serde_json::from_slice::<AblationTable>(&raw) {
        Ok(t) => Ok(AnyReport::Ablation(t)),
        Err(e) => bail!(hvdecode::Error::Config(format!("{} is neither a retrieval report nor an ablation table: {e}", path.display()))),
    }
}

pub fn report(a: ReportArgs) -> Result<()> {
    let reports = a.inputs.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
    let text = match a.format {
        Format::Json => serde_json::to_string_pretty(&reports)? + "\n",
        Format::Csv => {
            let mut out = String::new();
            let mut header: Option<String> = None;
            for r in &reports {
                let csv = match r {
                    AnyReport::Retrieval(r) => r.to_csv()?,
                    AnyReport::Ablation(t) => t.to_csv()?,
                };
                let mut lines = csv.lines();
                let h = lines.next().unwrap_or_default().to_string();
                match &header {
                    Some(prev) if *prev != h => bail!(hvdecode::Error::InvalidArgument("cannot merge retrieval reports and ablation tables into one CSV".into())),
                    Some(_) => {}
                    None => {
                        out.push_str(&h);
                        out.push('\n');
                        header = Some(h);
                    }
                }
                for l in lines {
                    out.push_str(l);
                    out.push('\n');
                }
            }
            out
        }
    };
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

// --------------------------------------------------------------- accounting

#[derive(Debug, Args)]
pub struct AccountingArgs {
    /// Run configuration whose `model` section is accounted [default: defaults].
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn accounting(a: AccountingArgs) -> Result<()> {
    let model_cfg: ModelConfig = match &a.config {
        Some(p) => RunConfig::load(p)?.model,
        None => ModelConfig::default(),
    };
    let model = Model32::new(&model_cfg, 0)?;
    let value = serde_json::json!({
        "parameters": count_parameters(&model)?,
        "flops": estimate_flops(&model_cfg)?,
    });
    match &a.out {
        Some(p) => write_json(p, &value),
        None => {
            println!("{}", serde_json::to_string_pretty(&value)?);
            Ok(())
        }
    }
}

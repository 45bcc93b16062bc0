//! Command-line front end. [`run`] parses arguments, dispatches the
//! subcommand and maps failures to exit codes: 0 success, 1 usage or
//! configuration error, 2 data error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, Sample};
use crate::codec::{decode, GaussianSpec, DEFAULT_CONFIDENCE_FLOOR};
use crate::data::checkpoint::{load_depth, load_fan, save_checkpoint, CheckpointMeta, ModelConfig};
use crate::data::image::{batch_tensor, Image};
use crate::data::manifest::{load_manifest, read_records, write_manifest, Entry, Record};
use crate::data::scheme::{Scheme, SchemeRegistry};
use crate::data::synth::{synth_generate, write_corpus};
use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;
use crate::metrics::{
    common_subset, evaluate, parse_ced_csv, threshold_grid, SchemeMap, DEFAULT_CED_MAX,
    DEFAULT_CED_STEP,
};
use crate::nn::{heatmaps_to_image_resolution, DepthNet, DepthNetConfig, Fan, FanConfig};
use crate::tensor::Tensor;
use crate::training::{train_depth, train_fan, CheckpointSink, TrainConfig};

/// Everything a run can be configured with. Missing sections take their
/// defaults; command-line flags override file values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: FanConfig,
    /// Depth network; derived from the alignment model when absent.
    pub depth_model: Option<DepthNetConfig>,
    pub train: TrainConfig,
    /// Fields missing from this section come from the depth preset, not
    /// from the alignment defaults.
    #[serde(deserialize_with = "depth_section")]
    pub depth_train: TrainConfig,
    pub augment: AugmentConfig,
    pub codec: GaussianSpec,
    pub confidence_floor: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: FanConfig::default(),
            depth_model: None,
            train: TrainConfig::fan(),
            depth_train: TrainConfig::depth(),
            augment: AugmentConfig::default(),
            codec: GaussianSpec::default(),
            confidence_floor: DEFAULT_CONFIDENCE_FLOOR,
            seed: 0,
        }
    }
}

fn depth_section<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<TrainConfig, D::Error> {
    use serde::de::Error as _;
    let given = serde_json::Value::deserialize(d)?;
    let mut merged = serde_json::to_value(TrainConfig::depth()).map_err(D::Error::custom)?;
    match (given, &mut merged) {
        (serde_json::Value::Object(fields), serde_json::Value::Object(base)) => base.extend(fields),
        (other, _) => return Err(D::Error::custom(format!("depth_train must be an object, got {other}"))),
    }
    serde_json::from_value(merged).map_err(D::Error::custom)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn depth_config(&self) -> DepthNetConfig {
        self.depth_model.clone().unwrap_or_else(|| {
            DepthNetConfig::for_landmarks(self.model.m_landmarks, self.model.input_hw)
        })
    }

    /// Applies `--seed`: initialisation, shuffling and augmentation all
    /// follow it.
    fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
            self.augment.seed = s;
        }
        self
    }
}

#[derive(Debug, Parser)]
#[command(name = "stackface", version, about = "Stacked hourglass facial landmark localisation")]
pub struct Cli {
    /// Print progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic face corpus with exact landmarks.
    Synth(SynthArgs),
    /// Train the alignment network (or, with --depth, the depth network).
    Train(TrainArgs),
    /// Predict landmarks for every image of a manifest.
    Predict(PredictArgs),
    /// Compare predictions with ground truth and write the error report.
    Eval(EvalArgs),
    /// Draw cumulative error distribution curves as SVG.
    PlotCed(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Droop strength in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub asymmetry: f64,
    /// Square image side; defaults to the configured model input.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train the depth network instead of the alignment network.
    #[arg(long)]
    pub depth: bool,
    /// Additional scheme file(s).
    #[arg(long)]
    pub scheme: Vec<PathBuf>,
    /// Output directory for checkpoints, the loss log and the effective config.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Depth network checkpoint; adds z to every predicted landmark.
    #[arg(long)]
    pub depth: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scheme: Vec<PathBuf>,
    /// Output prediction manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Upper limit of the AUC integral.
    #[arg(long, default_value_t = DEFAULT_CED_MAX)]
    pub ced_cutoff: f64,
    /// Largest CED threshold.
    #[arg(long, default_value_t = DEFAULT_CED_MAX)]
    pub ced_max: f64,
    #[arg(long, default_value_t = DEFAULT_CED_STEP)]
    pub ced_step: f64,
    /// Scheme correspondence table (JSON) for predictions and ground truth
    /// in different schemes.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub scheme: Vec<PathBuf>,
    /// Output directory for report.json, ced.csv and per_landmark.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// `ced.csv` files, one curve each.
    #[arg(required = true)]
    pub csv: Vec<PathBuf>,
    /// Legend labels in input order; defaults to names derived from paths.
    #[arg(long)]
    pub label: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let log = Logger(cli.verbose);
    match &cli.command {
        Command::Synth(a) => synth(a, log),
        Command::Train(a) => train(a, log),
        Command::Predict(a) => predict(a, log),
        Command::Eval(a) => eval(a, log),
        Command::PlotCed(a) => plot(a),
    }
}

#[derive(Clone, Copy)]
struct Logger(u8);

impl Logger {
    fn info(&self, msg: impl FnOnce() -> String) {
        if self.0 > 0 {
            eprintln!("{}", msg());
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Built-in schemes, a `scheme.json` beside the manifest when present, then
/// explicitly listed files.
fn registry(manifest: Option<&Path>, extra: &[PathBuf]) -> Result<SchemeRegistry> {
    let mut reg = SchemeRegistry::with_builtins();
    if let Some(dir) = manifest.and_then(Path::parent) {
        let beside = dir.join("scheme.json");
        if beside.is_file() {
            reg.load_file(&beside)?;
        }
    }
    for p in extra {
        reg.load_file(p)?;
    }
    Ok(reg)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Data(format!("{} does not exist", path.display())))
    }
}

fn synth(a: &SynthArgs, log: Logger) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?.with_seed(a.seed);
    if a.count == 0 {
        return Err(Error::Config("--count must be at least 1".into()));
    }
    let hw = a.size.map_or(cfg.model.input_hw, |s| (s, s));
    let samples = synth_generate(a.count, hw, a.asymmetry, cfg.seed)?;
    write_corpus(&a.out, &samples)?;
    log.info(|| format!("wrote {} samples to {}", samples.len(), a.out.display()));
    Ok(())
}

fn load_samples(entries: &[Entry]) -> Result<Vec<Sample>> {
    entries
        .iter()
        .map(|e| {
            Ok(Sample {
                image: e.load_image()?,
                landmarks: e.landmarks.clone(),
            })
        })
        .collect()
}

fn single_scheme<'a>(entries: &[Entry], reg: &'a SchemeRegistry) -> Result<&'a Scheme> {
    let id = &entries[0].landmarks.scheme;
    if let Some(e) = entries.iter().find(|e| &e.landmarks.scheme != id) {
        return Err(Error::Data(format!(
            "manifest mixes schemes {id} and {}",
            e.landmarks.scheme
        )));
    }
    reg.require(id)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train(a: &TrainArgs, log: Logger) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?.with_seed(a.seed);
    require_file(&a.manifest)?;
    let reg = registry(Some(&a.manifest), &a.scheme)?;
    let entries = load_manifest(&a.manifest, &reg)?;
    let scheme = single_scheme(&entries, &reg)?;
    let samples = load_samples(&entries)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_text(&a.out.join("config.json"), &(serde_json::to_string_pretty(&cfg)? + "\n"))?;
    let sink = Some(CheckpointSink {
        dir: &a.out,
        scheme: &scheme.id,
    });

    let (report, loss_file) = if a.depth {
        let dc = cfg.depth_config();
        let mut net = DepthNet::<f32>::new(dc.clone(), cfg.seed)?;
        log.info(|| format!("training depth network on {} samples", samples.len()));
        let report = train_depth(
            &mut net,
            &samples,
            scheme,
            cfg.model.heatmap_hw,
            &cfg.depth_train,
            &cfg.augment,
            &cfg.codec,
            cfg.seed,
            sink,
        )?;
        let meta = CheckpointMeta {
            model: ModelConfig::Depth(dc),
            scheme: scheme.id.clone(),
            epoch: report.epoch_mean_loss.len(),
        };
        save_checkpoint(&net.params, &meta, &a.out.join("depth.ckpt"))?;
        (report, "depth_loss.csv")
    } else {
        let mut fan = Fan::<f32>::new(cfg.model.clone(), cfg.seed)?;
        log.info(|| format!("training alignment network on {} samples", samples.len()));
        let report = train_fan(
            &mut fan,
            &samples,
            scheme,
            &cfg.train,
            &cfg.augment,
            &cfg.codec,
            cfg.seed,
            sink,
        )?;
        let meta = CheckpointMeta {
            model: ModelConfig::Fan(cfg.model.clone()),
            scheme: scheme.id.clone(),
            epoch: report.epoch_mean_loss.len(),
        };
        save_checkpoint(&fan.params, &meta, &a.out.join("model.ckpt"))?;
        (report, "loss.csv")
    };
    write_text(&a.out.join(loss_file), &report.loss_csv())?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    log.info(|| {
        format!(
            "{} steps, final loss {:.6}",
            report.steps,
            report.log.last().map_or(f64::NAN, |r| r.loss)
        )
    });
    Ok(())
}

const PREDICT_BATCH: usize = 8;

/// Landmarks and optional depths for every entry, in manifest order.
pub fn predict_entries(
    fan: &Fan<f32>,
    depth: Option<&DepthNet<f32>>,
    images: &[Image],
    scheme: &str,
    confidence_floor: f64,
) -> Result<Vec<LandmarkSet>> {
    let fc = fan.config();
    let (m, (hh, hw)) = (fc.m_landmarks, fc.heatmap_hw);
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(PREDICT_BATCH) {
        for (i, img) in chunk.iter().enumerate() {
            if img.hw() != fc.input_hw {
                return Err(Error::Data(format!(
                    "image {} is {:?} but the network expects {:?}",
                    out.len() + i,
                    img.hw(),
                    fc.input_hw
                )));
            }
        }
        let refs: Vec<&Image> = chunk.iter().collect();
        let batch = batch_tensor::<f32>(&refs)?;
        let heat = fan.predict(&batch)?.pop().expect("at least one stack");
        let depths = match depth {
            Some(net) => {
                let up = heatmaps_to_image_resolution(&heat, fc.input_hw)?;
                Some(net.predict(&batch, &up)?)
            }
            None => None,
        };
        for n in 0..chunk.len() {
            let plane = m * hh * hw;
            let h = Tensor::new(vec![m, hh, hw], heat.data()[n * plane..(n + 1) * plane].to_vec())?;
            let mut set = decode(&h, fc.input_hw, scheme, confidence_floor)?;
            if let Some(d) = &depths {
                let z = d.data()[n * m..(n + 1) * m].iter().map(|&v| v as f64).collect();
                set = set.with_depth(z)?;
            }
            out.push(set);
        }
    }
    Ok(out)
}

fn predict(a: &PredictArgs, log: Logger) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    require_file(&a.checkpoint)?;
    require_file(&a.manifest)?;
    if let Some(d) = &a.depth {
        require_file(d)?;
    }
    let reg = registry(Some(&a.manifest), &a.scheme)?;
    let entries = load_manifest(&a.manifest, &reg)?;
    let (fan, meta) = load_fan(&a.checkpoint, None)?;
    let depth = match &a.depth {
        Some(p) => {
            let (net, dmeta) = load_depth(p, None)?;
            if dmeta.scheme != meta.scheme || net.config().n_landmarks != fan.config().m_landmarks {
                return Err(Error::Data(format!(
                    "depth checkpoint ({}, {} landmarks) does not match alignment checkpoint ({}, {})",
                    dmeta.scheme,
                    net.config().n_landmarks,
                    meta.scheme,
                    fan.config().m_landmarks
                )));
            }
            Some(net)
        }
        None => None,
    };
    if let Some(e) = entries.iter().find(|e| e.landmarks.scheme != meta.scheme) {
        return Err(Error::Data(format!(
            "manifest uses scheme {} but the checkpoint was trained on {}",
            e.landmarks.scheme, meta.scheme
        )));
    }
    let images = entries.iter().map(Entry::load_image).collect::<Result<Vec<_>>>()?;
    let preds = predict_entries(&fan, depth.as_ref(), &images, &meta.scheme, cfg.confidence_floor)?;
    let originals = read_records(&a.manifest)?;
    let records: Vec<Record> = preds
        .iter()
        .zip(&originals)
        .map(|(p, r)| Record::from_landmarks(r.image.clone(), p, r.bbox))
        .collect();
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_manifest(&a.out, &records)?;
    log.info(|| format!("wrote {} predictions to {}", records.len(), a.out.display()));
    Ok(())
}

fn eval(a: &EvalArgs, log: Logger) -> Result<()> {
    if !(a.ced_step > 0.0 && a.ced_max > 0.0) {
        return Err(Error::Config("--ced-max and --ced-step must be positive".into()));
    }
    if !(a.ced_cutoff > 0.0 && a.ced_cutoff <= a.ced_max + 1e-12) {
        return Err(Error::Config(format!(
            "--ced-cutoff must lie in (0, {}], got {}",
            a.ced_max, a.ced_cutoff
        )));
    }
    require_file(&a.pred)?;
    require_file(&a.gt)?;
    let reg = registry(Some(&a.gt), &a.scheme)?;
    let parse = |path: &Path| -> Result<Vec<(String, LandmarkSet)>> {
        read_records(path)?
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let l = r.to_landmarks().map_err(|e| {
                    Error::Data(format!("{}: record at line {}: {e}", path.display(), i + 1))
                })?;
                Ok((r.image, l))
            })
            .collect()
    };
    let preds = parse(&a.pred)?;
    let gts = parse(&a.gt)?;
    if preds.len() != gts.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} ground-truth records",
            preds.len(),
            gts.len()
        )));
    }
    for (i, ((pi, _), (gi, _))) in preds.iter().zip(&gts).enumerate() {
        if pi != gi {
            return Err(Error::Data(format!(
                "record {}: prediction for `{pi}` paired with ground truth for `{gi}`",
                i + 1
            )));
        }
    }
    let map = match &a.map {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(serde_json::from_str::<SchemeMap>(&text)?)
        }
        None => None,
    };
    let mut p_sets = Vec::with_capacity(preds.len());
    let mut g_sets = Vec::with_capacity(gts.len());
    for ((_, p), (_, g)) in preds.into_iter().zip(gts) {
        let same = p.scheme == g.scheme;
        let map = match (&map, same) {
            (Some(m), _) => Some(m.clone()),
            (None, true) => None,
            (None, false) => Some(
                reg.get(&p.scheme)
                    .and_then(|s| s.correspondence(&g.scheme))
                    .cloned()
                    .ok_or_else(|| {
                        Error::Data(format!(
                            "no correspondence from scheme {} to {}; pass --map",
                            p.scheme, g.scheme
                        ))
                    })?,
            ),
        };
        let (p, g) = match map {
            Some(m) => common_subset(&m, &p, &g)?,
            None => (p, g),
        };
        p_sets.push(p);
        g_sets.push(g);
    }
    let grid = threshold_grid(a.ced_max, a.ced_step);
    let report = evaluate(&p_sets, &g_sets, None, &grid, a.ced_cutoff)?;
    report.write(&a.out)?;
    log.info(|| format!("mean NME {:.6}, AUC {:.6}", report.mean_nme, report.auc));
    Ok(())
}

fn plot(a: &PlotArgs) -> Result<()> {
    if !a.label.is_empty() && a.label.len() != a.csv.len() {
        return Err(Error::Config(format!(
            "{} labels for {} curves",
            a.label.len(),
            a.csv.len()
        )));
    }
    let mut curves = Vec::with_capacity(a.csv.len());
    for p in &a.csv {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let curve = parse_ced_csv(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
        if curve.is_empty() {
            return Err(Error::Data(format!("{}: no CED rows", p.display())));
        }
        curves.push(curve);
    }
    let labels = if a.label.is_empty() {
        default_labels(&a.csv)
    } else {
        a.label.clone()
    };
    let svg = ced_svg(&curves, &labels);
    let mut f = fs::File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    f.write_all(svg.as_bytes()).map_err(|e| Error::io(&a.out, e))
}

/// File stem, or the parent directory name for files called `ced.csv`;
/// repeated names get a numeric suffix.
fn default_labels(paths: &[PathBuf]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::with_capacity(paths.len());
    for p in paths {
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let base = if stem == "ced" {
            p.parent()
                .and_then(Path::file_name)
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or(stem)
        } else {
            stem
        };
        let mut label = base.clone();
        let mut k = 2;
        while labels.contains(&label) {
            label = format!("{base} ({k})");
            k += 1;
        }
        labels.push(label);
    }
    labels
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders CED curves: x is the NME threshold over the union of the curves'
/// threshold ranges, y is the fraction of images on [0, 1].
pub fn ced_svg(curves: &[Vec<(f64, f64)>], labels: &[String]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 20.0;
    const BOTTOM: f64 = 60.0;
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let xs = curves.iter().flatten().map(|p| p.0);
    let x0 = xs.clone().fold(f64::INFINITY, f64::min);
    let mut x1 = xs.fold(f64::NEG_INFINITY, f64::max);
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - y.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str(&format!("<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    s.push_str(&format!(
        "<rect class=\"plot-box\" x=\"{LEFT:.2}\" y=\"{TOP:.2}\" width=\"{pw:.2}\" height=\"{ph:.2}\" fill=\"none\" stroke=\"black\"/>\n"
    ));
    for k in 0..=5 {
        let f = k as f64 / 5.0;
        let (gx, gy) = (LEFT + f * pw, TOP + (1.0 - f) * ph);
        s.push_str(&format!(
            "<line x1=\"{gx:.2}\" y1=\"{TOP:.2}\" x2=\"{gx:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\"/>\n",
            TOP + ph
        ));
        s.push_str(&format!(
            "<line x1=\"{LEFT:.2}\" y1=\"{gy:.2}\" x2=\"{:.2}\" y2=\"{gy:.2}\" stroke=\"#dddddd\"/>\n",
            LEFT + pw
        ));
        s.push_str(&format!(
            "<text x=\"{gx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{:.3}</text>\n",
            TOP + ph + 16.0,
            x0 + f * (x1 - x0)
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{f:.1}</text>\n",
            LEFT - 6.0,
            gy + 4.0
        ));
    }
    s.push_str(&format!(
        "<text class=\"x-label\" x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">NME</text>\n",
        LEFT + pw / 2.0,
        H - 16.0
    ));
    s.push_str(&format!(
        "<text class=\"y-label\" x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">fraction of images</text>\n",
        TOP + ph / 2.0,
        TOP + ph / 2.0
    ));
    for (i, (curve, label)) in curves.iter().zip(labels).enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = curve
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        let ly = TOP + ph - 12.0 - 18.0 * (curves.len() - 1 - i) as f64;
        let lx = LEFT + pw - 170.0;
        s.push_str(&format!(
            "<g class=\"legend\"><line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{colour}\" stroke-width=\"2\"/><text x=\"{:.2}\" y=\"{:.2}\">{}</text></g>\n",
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            xml_escape(label)
        ));
    }
    s.push_str("</svg>\n");
    s
}

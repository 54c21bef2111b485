use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use frk_core::calibration::{
    calibrate_detections, detect_fiducials, inpaint_fiducials, paired_qa, CalibrationReport, DetectOptions,
    FiducialSet, Polarity, DEFAULT_GATE_PX, NOMINAL_MAGNIFICATION,
};
use frk_core::carve::{CarveMode, OccupancyGrid, OriginMode, DEFAULT_TAU};
use frk_core::drr::LabelGrid;
use frk_core::geometry::{CameraFile, CameraMatrix, DEFAULT_PIXEL_PITCH_MM};
use frk_core::hash::{content_hash, volume_hash};
use frk_core::image::{decode_pgm, encode_mask_pgm, encode_pgm16, read_pgm, Gray16, Image};
use frk_core::localize::{localize_all, localize_mask, CropRecord};
use frk_core::metrics::{distance_map, evaluate, DEFAULT_CLIP_MM, DEFAULT_TAU_MM};
use frk_core::pipeline::{
    reconstruct_images, resample_grid, CarveSource, PoseSpec, ReconstructOptions, RenderKind, RenderSpec, Scene,
    Scorer, DEFAULT_PHANTOM_SPACING_MM,
};
use frk_core::volume::{load_volume, rasterize_phantom, save_volume, Phantom, Volume};
use frk_harness::dataset::MANIFEST_FILE;
use frk_harness::experiments::{summarize, to_csv, ExperimentSummary, Harness, DEFAULT_SEED, DEFAULT_TRIALS};
use frk_harness::heatmap::sensitivity_heatmap;
use frk_harness::qa::{load_reports, synthetic_reports};
use frk_harness::{gen_dataset, DatasetOptions, ExperimentConfig, Manifest, ViewBank, ViewPlan};
use serde::Serialize;
use serde_json::json;

use crate::config::FileConfig;
use crate::{
    AblateArgs, CalibrateArgs, Cli, Command, DetectorArgs, EvaluateArgs, GenDatasetArgs, HeatmapArgs, KindArg,
    LocalizeArgs, ModeArg, OriginArg, PairedQaArgs, PhantomKind, PolarityArg, ReconstructArgs, RenderArgs, SceneArgs,
    ServeArgs, SourceArg,
};

/// HU of the sphere and L-shape phantoms.
const SOLID_HU: i16 = 800;

struct Ctx {
    seed: u64,
    out: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    config: FileConfig,
}

impl Ctx {
    /// `--out`, else the config's `out`, else `default` under the data root.
    fn out(&self, default: &str) -> PathBuf {
        self.out
            .clone()
            .or_else(|| self.config.out.clone())
            .unwrap_or_else(|| match &self.data_dir {
                Some(d) => d.join(default),
                None => PathBuf::from(default),
            })
    }

    fn recon(&self) -> ReconstructOptions {
        self.config.recon.unwrap_or_default()
    }

    fn spacing(&self, args: &SceneArgs) -> f64 {
        args.spacing_mm
            .or(self.config.phantom_spacing_mm)
            .unwrap_or(DEFAULT_PHANTOM_SPACING_MM)
    }

    fn dataset(&self, d: &DetectorArgs) -> DatasetOptions {
        let mut o = self.config.dataset.unwrap_or_default();
        o.seed = self.seed;
        if let Some(px) = d.detector_px {
            o.detector_px = [px, px];
        }
        if let Some(p) = d.pitch_mm {
            o.pixel_pitch_mm = p;
        }
        if let Some(f) = d.focal_mm {
            o.focal_len_mm = f;
        }
        if d.step_mm.is_some() {
            o.step_mm = d.step_mm;
        }
        if let Some(t) = d.hu_threshold {
            o.hu_threshold = t;
        }
        o
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads.or(config.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    let ctx = Ctx {
        seed: cli.seed.or(config.seed).unwrap_or(DEFAULT_SEED),
        out: cli.out,
        data_dir: cli.data_dir,
        config,
    };
    match cli.command {
        Command::GenDataset(a) => gen_dataset_cmd(&ctx, a),
        Command::Render(a) => render_cmd(&ctx, a),
        Command::Calibrate(a) => calibrate_cmd(&ctx, a),
        Command::Localize(a) => localize_cmd(&ctx, a),
        Command::Reconstruct(a) => reconstruct_cmd(&ctx, a),
        Command::Evaluate(a) => evaluate_cmd(&ctx, a),
        Command::AblateViews(a) => ablate_cmd(&ctx, a, false),
        Command::AblateCombos(a) => ablate_cmd(&ctx, a, true),
        Command::Heatmap(a) => heatmap_cmd(&ctx, a),
        Command::PairedQa(a) => paired_qa_cmd(&ctx, a),
        Command::Serve(a) => serve_cmd(&ctx, a),
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_camera(path: &Path) -> Result<CameraMatrix<f64>> {
    Ok(CameraFile::load(path)?.to_camera()?)
}

fn phantom_volumes(ctx: &Ctx, args: &SceneArgs) -> Result<(Volume, Volume)> {
    let ph = match args.phantom.unwrap_or(PhantomKind::Lumbar) {
        PhantomKind::Lumbar => Phantom::lumbar(args.levels),
        PhantomKind::Sphere => Phantom::sphere(args.radius_mm, SOLID_HU),
        PhantomKind::LShape => Phantom::l_shape(SOLID_HU),
    };
    ph.validate()?;
    let s = ctx.spacing(args);
    Ok(rasterize_phantom(&ph, &ph.fitted_lattice(s, 2.0 * s))?)
}

/// HU and label volumes from files or a phantom.
fn volumes(ctx: &Ctx, args: &SceneArgs) -> Result<(Option<Volume>, Volume)> {
    match (&args.hu, &args.labels) {
        (hu, Some(labels)) => {
            let hu = hu.as_deref().map(load_volume).transpose()?;
            Ok((hu, load_volume(labels)?))
        }
        (Some(_), None) => bail!("--hu needs --labels"),
        (None, None) => {
            let (hu, labels) = phantom_volumes(ctx, args)?;
            Ok((Some(hu), labels))
        }
    }
}

fn manifest_at(dir: &Path) -> Result<Manifest> {
    Ok(Manifest::load(&dir.join(MANIFEST_FILE))?)
}

fn gen_dataset_cmd(ctx: &Ctx, a: GenDatasetArgs) -> Result<()> {
    if a.scene.manifest.is_some() {
        bail!("gen-dataset takes a phantom or --hu/--labels, not --manifest");
    }
    let (hu, labels) = volumes(ctx, &a.scene)?;
    let hu = hu.context("gen-dataset needs an HU volume (--hu)")?;
    let out = ctx.out("dataset");
    let m = gen_dataset(&hu, &labels, &out, &ctx.dataset(&a.detector))?;
    print_json(&json!({
        "manifest": out.join(MANIFEST_FILE),
        "labels": m.labels(),
        "items": m.items.len(),
        "seed": m.seed,
        "warnings": m.warnings,
    }))
}

pub fn render_spec(a: &RenderArgs) -> Result<RenderSpec> {
    let mut spec = RenderSpec {
        width: a.width,
        height: a.height,
        step_mm: a.step_mm,
        pixel_pitch_mm: a.pitch_mm,
        kind: match a.kind {
            KindArg::Drr => RenderKind::Drr,
            KindArg::Mask => RenderKind::Mask,
        },
        label: a.label,
        hu_threshold: a.hu_threshold,
        ..RenderSpec::default()
    };
    match &a.camera {
        Some(path) => spec.p = Some(CameraFile::load(path)?.p),
        None => {
            let mut pose = PoseSpec::default();
            if let Some(v) = a.orbit_deg {
                pose.orbit_deg = v;
            }
            if let Some(v) = a.tilt_deg {
                pose.tilt_deg = v;
            }
            if let Some(v) = a.focal_mm {
                pose.focal_len_mm = v;
            }
            if let Some(v) = a.source_to_center_mm {
                pose.source_to_center_mm = v;
            }
            if let Some(c) = a.center_mm {
                pose.center_mm = c;
            }
            if let Some(c) = &a.view_class {
                pose.view_class = c.parse()?;
            }
            spec.pose = Some(pose);
        }
    }
    Ok(spec)
}

fn render_cmd(ctx: &Ctx, a: RenderArgs) -> Result<()> {
    let vol = load_volume(&a.volume)?;
    let (cam, img) = render_spec(&a)?.render(&vol)?;
    let out = ctx.out("render.pgm");
    write(&out, &img.pgm)?;
    let cam_path = out.with_extension("json");
    CameraFile::from_camera(&cam).save(&cam_path)?;
    print_json(&json!({
        "image_id": content_hash(&img.pgm),
        "path": out,
        "camera": cam_path,
        "width": img.width,
        "height": img.height,
        "raw_min": img.raw_min,
        "raw_max": img.raw_max,
    }))
}

fn calibrate_cmd(ctx: &Ctx, a: CalibrateArgs) -> Result<()> {
    let pgm = read_pgm(&a.image)?;
    let fiducials = FiducialSet::load(&a.fiducials)?;
    let mut opts = match &a.radii_px {
        Some(r) => DetectOptions::new(r[0], r[1]),
        None => DetectOptions::for_geometry(a.pitch_mm, a.magnification.unwrap_or(NOMINAL_MAGNIFICATION)),
    };
    if let Some(p) = a.polarity {
        opts = opts.with_polarity(match p {
            PolarityArg::Bright => Polarity::Bright,
            PolarityArg::Dark => Polarity::Dark,
        });
    }
    let detections = detect_fiducials(&pgm.image, &opts);
    let res = calibrate_detections(
        &detections,
        &fiducials,
        a.pitch_mm,
        a.gate_px.unwrap_or(DEFAULT_GATE_PX),
    )?;
    let report = CalibrationReport::from_result(&res);
    let out = ctx.out("calibration.json");
    write(&out, report.to_json().as_bytes())?;
    if let Some(path) = &a.inpainted {
        write(path, &encode_pgm16(&inpaint_fiducials(&pgm.image, &detections, 1.5)))?;
    }
    print_json(&json!({
        "report": out,
        "detections": detections.len(),
        "matches": report.residuals.len(),
        "mean_px": report.mean_px,
        "median_px": report.median_px,
        "mean_mm": report.mean_mm,
        "X_o": report.x_o,
    }))
}

fn to_gray16(img: &Image<f64>) -> Gray16 {
    img.map(|v| v.round().clamp(0.0, u16::MAX as f64) as u16)
}

fn localize_cmd(ctx: &Ctx, a: LocalizeArgs) -> Result<()> {
    let img = read_pgm(&a.image)?.image;
    let cam = load_camera(&a.camera)?;
    let windows = match (&a.labels, &a.mask) {
        (Some(labels), _) => {
            let grid = LabelGrid::<f64>::new(&load_volume(labels)?)?;
            let ids = match a.label {
                Some(l) => vec![l],
                None => grid.label_ids(),
            };
            localize_all(&img, &cam, &grid, &ids, a.pitch_mm.unwrap_or(DEFAULT_PIXEL_PITCH_MM))?
        }
        (None, Some(mask)) => {
            let mask = read_pgm(mask)?.to_mask();
            let label = a.label.expect("clap requires --label with --mask");
            localize_mask(&img, &mask, &cam, label)?.into_iter().collect()
        }
        (None, None) => bail!("localize needs --labels or --mask"),
    };
    let dir = ctx.out("crops");
    let mut records: Vec<CropRecord> = Vec::new();
    for w in &windows {
        let stem = format!("crop_L{}", w.label);
        write(&dir.join(format!("{stem}.pgm")), &encode_pgm16(&to_gray16(&w.image)))?;
        write(&dir.join(format!("{stem}_mask.pgm")), &encode_mask_pgm(&w.mask))?;
        CameraFile::from_camera(&w.camera).save(&dir.join(format!("{stem}.json")))?;
        records.push(w.record());
    }
    let text = serde_json::to_string_pretty(&records)? + "\n";
    write(&dir.join("crops.json"), text.as_bytes())?;
    print_json(
        &json!({"dir": dir, "crops": records.len(), "labels": records.iter().map(|r| r.label).collect::<Vec<_>>()}),
    )
}

fn reconstruct_cmd(ctx: &Ctx, a: ReconstructArgs) -> Result<()> {
    let mut images = Vec::new();
    let mut cams = Vec::new();
    match &a.manifest {
        Some(dir) => {
            let m = manifest_at(dir)?;
            for id in &a.items {
                let item = m
                    .items
                    .iter()
                    .find(|i| &i.id == id)
                    .with_context(|| format!("manifest has no item `{id}`"))?;
                let r = match a.source.unwrap_or(SourceArg::Mask) {
                    SourceArg::Mask => &item.mask,
                    SourceArg::Drr => &item.drr,
                };
                images.push(decode_pgm(&m.read_verified(dir, r)?)?.image.map(f64::from));
                let cam_text = String::from_utf8(m.read_verified(dir, &item.camera)?).context("camera is not UTF-8")?;
                cams.push(CameraFile::from_json(&cam_text)?.to_camera()?);
            }
        }
        None => {
            if a.views.len() != a.cams.len() {
                bail!("{} views but {} cameras", a.views.len(), a.cams.len());
            }
            for (v, c) in a.views.iter().zip(&a.cams) {
                images.push(read_pgm(v)?.image.map(f64::from));
                cams.push(load_camera(c)?);
            }
        }
    }
    let mut opts = ctx.recon();
    if let Some(m) = a.mode {
        opts.mode = match m {
            ModeArg::Hull => CarveMode::Hull,
            ModeArg::MeanThresh => CarveMode::MeanThresh {
                tau: a.tau.unwrap_or(DEFAULT_TAU),
                k: a.k,
            },
        };
    }
    if let Some(s) = a.source {
        opts.source = match s {
            SourceArg::Mask => CarveSource::Mask,
            SourceArg::Drr => CarveSource::Drr,
        };
    }
    if let Some(o) = a.origin {
        opts.origin = match o {
            OriginArg::Triangulated => OriginMode::Triangulated,
            OriginArg::GroundTruth => OriginMode::GroundTruth,
        };
    }
    if let Some(t) = a.tau_mm {
        opts.tau_mm = t;
    }
    let scorer = match (&a.labels, a.label) {
        (Some(path), Some(label)) => {
            let scene = Scene::new(None, load_volume(path)?)?;
            Some(Scorer::new(&scene, label, opts.grid)?)
        }
        (Some(_), None) => bail!("--labels needs --label"),
        _ => None,
    };
    let (rec, metrics) = reconstruct_images(&images, &cams, &opts, scorer.as_ref())?;
    let vol = rec.grid.to_volume()?;
    let out = ctx.out("grid.vjson");
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_volume(&vol, &out)?;
    print_json(&json!({
        "grid_id": volume_hash(&vol),
        "path": out,
        "center_mm": rec.center_mm,
        "occupied_fraction": rec.grid.occupied_fraction(),
        "views": cams.len(),
        "metrics": metrics,
        "timing": rec.timing,
    }))
}

fn evaluate_cmd(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let pred = OccupancyGrid::from_volume(&load_volume(&a.pred)?, OriginMode::Triangulated)?;
    let gt = match (&a.gt, &a.labels, a.label) {
        (Some(path), _, _) => OccupancyGrid::from_volume(&load_volume(path)?, OriginMode::GroundTruth)?,
        (None, Some(path), Some(label)) => {
            let scene = Scene::new(None, load_volume(path)?)?;
            let spec = frk_core::carve::GridSpec {
                dim: pred.dims[0],
                voxel_size_mm: pred.voxel_size_mm,
            };
            Scorer::new(&scene, label, spec)?.gt
        }
        _ => bail!("evaluate needs --gt or --labels with --label"),
    };
    let pred = resample_grid(&pred, &gt);
    let report = evaluate(&pred, &gt, a.tau_mm.unwrap_or(DEFAULT_TAU_MM))?;
    let dmap = distance_map(&pred, &gt, a.clip_mm.unwrap_or(DEFAULT_CLIP_MM))?;
    let dir = ctx.out("evaluation");
    write(&dir.join("metrics.json"), (report.to_json() + "\n").as_bytes())?;
    write(&dir.join("distance_map.csv"), dmap.to_csv().as_bytes())?;
    save_volume(&dmap.display_volume(&pred)?, &dir.join("distance_display.vjson"))?;
    print_json(&report)
}

fn ablate_cmd(ctx: &Ctx, a: AblateArgs, combos: bool) -> Result<()> {
    let (scene, bank) = match &a.scene.manifest {
        Some(dir) => {
            if a.label.is_some() {
                bail!("--label is not supported with --manifest");
            }
            let m = manifest_at(dir)?;
            (m.scene(dir)?, ViewBank::from_manifest(&m, dir)?)
        }
        None => {
            let (hu, labels) = volumes(ctx, &a.scene)?;
            let scene = Scene::new(hu.as_ref(), labels)?;
            let ids = match a.label {
                Some(l) => vec![l],
                None => scene.label_ids(),
            };
            let bank = ViewBank::from_scene(&scene, &ids, &ctx.dataset(&a.detector))?;
            (scene, bank)
        }
    };
    let cfg = ExperimentConfig {
        trials: a.trials.or(ctx.config.trials).unwrap_or(DEFAULT_TRIALS),
        seed: ctx.seed,
        recon: ctx.recon(),
    };
    let harness = Harness::new(&bank, &scene, cfg.recon.grid)?;
    let (name, details) = if combos {
        ("ablate-combos", harness.ablate_combinations(&cfg)?)
    } else {
        ("ablate-views", harness.ablate_num_views(&cfg)?)
    };
    let dir = ctx.out(name);
    write(&dir.join("trials.csv"), to_csv(&details)?.as_bytes())?;
    let summary = ExperimentSummary::new(name, cfg, details);
    write(&dir.join("summary.json"), summary.to_json().as_bytes())?;
    let mut plans = summary.plans.clone();
    if let Some(text) = &a.compare_origin {
        let origin = harness.origin_comparison(&ViewPlan::parse(text)?, &cfg)?;
        write(&dir.join("origin.csv"), to_csv(&origin)?.as_bytes())?;
        plans.extend(summarize(&origin));
        let s = ExperimentSummary::new("origin", cfg, origin);
        write(&dir.join("origin.json"), s.to_json().as_bytes())?;
    }
    print_json(&json!({"dir": dir, "seed": cfg.seed, "trials": cfg.trials, "plans": plans}))
}

fn heatmap_cmd(ctx: &Ctx, a: HeatmapArgs) -> Result<()> {
    let scene = match &a.scene.manifest {
        Some(dir) => manifest_at(dir)?.scene(dir)?,
        None => {
            let (hu, labels) = volumes(ctx, &a.scene)?;
            Scene::new(hu.as_ref(), labels)?
        }
    };
    let mut spec = ctx.config.heatmap.clone().unwrap_or_default();
    if ctx.config.heatmap.is_none() {
        spec.recon = ctx.recon();
    }
    if a.label.is_some() {
        spec.label = a.label;
    }
    if let Some(v) = a.varied {
        spec.varied = v;
    }
    if let Some(u) = a.upsample {
        spec.upsample = u;
    }
    let res = sensitivity_heatmap(&scene, &spec)?;
    let dir = ctx.out("heatmap");
    write(&dir.join("heatmap.csv"), res.to_csv()?.as_bytes())?;
    write(&dir.join("heatmap.pgm"), &res.display_pgm(spec.upsample))?;
    let peak = *res.peak();
    let summary = json!({
        "seed": ctx.seed,
        "label": res.label,
        "nodes": res.nodes.len(),
        "peak": peak,
        "peak_distance": res.peak_distance(),
        "range": res.range(),
        "ray_monotone_fraction": res.ray_monotone_fraction(),
        "spec": spec,
    });
    write(
        &dir.join("heatmap.json"),
        (serde_json::to_string_pretty(&summary)? + "\n").as_bytes(),
    )?;
    print_json(&summary)
}

fn paired_qa_cmd(ctx: &Ctx, a: PairedQaArgs) -> Result<()> {
    let reports = match a.synthetic {
        Some(n) => synthetic_reports(n, a.points, a.noise_px, a.pitch_mm, ctx.seed),
        None => load_reports(&a.reports)?,
    };
    let summary = paired_qa(&reports)?;
    if let Some(out) = ctx.out.clone().or_else(|| ctx.config.out.clone()) {
        write(&out, (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    }
    print_json(&summary)
}

fn serve_cmd(ctx: &Ctx, a: ServeArgs) -> Result<()> {
    let cfg = frk_service::Config {
        data_dir: a.data_dir.or_else(|| ctx.data_dir.clone()),
        workers: a.workers,
    };
    let state = if a.no_demo {
        frk_service::AppState::new(cfg)
    } else {
        frk_service::AppState::with_demo(cfg)?
    };
    let addr: std::net::SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .with_context(|| format!("bad address {}:{}", a.host, a.port))?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(frk_service::serve(addr, state))?;
    Ok(())
}

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Serialize;
use wspan::boxgt::{fabricate_box_gt, BoxGtConfig};
use wspan::instcrf::{add_stuff_dummies, partition, score_instances, InstanceCrfConfig, ScoreMode};
use wspan::io::{
    list_files, read_annotations, read_detections, read_label_png, read_mask_png,
    read_proposal_dir, read_ptf, read_rgb_png, read_tags, stem, write_json, write_label_png,
    write_mask_png, write_ptf, write_rgb_png,
};
use wspan::metrics::{report, EvalOptions, ScoreSidecar};
use wspan::proposals::generate_proposals;
use wspan::refine::{combine_fabrications, run_refinement, RefineDataset};
use wspan::render::render_colorized;
use wspan::synth::{synth_dataset, write_dataset};
use wspan::taggt::{fabricate_tag_gt, heatmaps_from_stack, DEFAULT_TAU};
use wspan::{ClassTable, Error, LabelMap, PanopticMap, Result, IGNORE};

use crate::cli::*;
use crate::manifest::RunManifest;

/// Seed and config-file settings shared by every subcommand.
pub struct Context {
    pub seed: u64,
    pub file: FileConfig,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn png_in(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.png"))
}

fn required(path: PathBuf, name: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingPair(format!(
            "{name}: {} not found",
            path.display()
        )))
    }
}

fn load_classes(dataset: &Path, custom: &Option<PathBuf>) -> Result<(PathBuf, ClassTable)> {
    let path = under(dataset, custom, "classes.json");
    let table = ClassTable::load(&path)?;
    Ok((path, table))
}

fn finish(out: &Path, manifest: &RunManifest) -> Result<()> {
    manifest.write(&out.join("manifest.json"))
}

pub fn synth(ctx: &Context, a: &SynthArgs) -> Result<()> {
    let mut cfg = ctx.file.synth.clone().unwrap_or_default();
    if let Some(v) = a.images {
        cfg.images = v;
    }
    if let Some(v) = a.height {
        cfg.height = v;
    }
    if let Some(v) = a.width {
        cfg.width = v;
    }
    if let Some(v) = a.noise {
        cfg.noise_sigma = v;
    }
    let scenes = synth_dataset(ctx.seed, &cfg)?;
    write_dataset(&a.out, &scenes)?;
    info!("wrote {} scenes to {}", scenes.len(), a.out.display());
    finish(&a.out, &RunManifest::new("synth", ctx.seed, &cfg))
}

#[derive(Serialize)]
struct FabricateBoxSettings<'a> {
    #[serde(flatten)]
    box_gt: &'a BoxGtConfig,
    proposals: &'a wspan::proposals::ProposalParams,
}

pub fn fabricate_box(ctx: &Context, a: &FabricateBoxArgs) -> Result<()> {
    let (classes_path, classes) = load_classes(&a.dataset, &a.classes)?;
    let mut cfg = BoxGtConfig {
        grabcut: ctx.file.grabcut.clone().unwrap_or_default(),
        unclaimed: a.unclaimed.or(ctx.file.unclaimed).unwrap_or_default(),
    };
    cfg.grabcut.seed = ctx.seed;
    let params = ctx.file.proposals.clone().unwrap_or_default();
    let out = under(&a.dataset, &a.out, "box_gt");
    for sub in ["semantic", "instances", "claimed"] {
        create_dir(&out.join(sub))?;
    }
    let images = list_files(&a.dataset.join("images"), "png")?;
    let boxes_dir = a.dataset.join("boxes");
    let proposals_dir = a.dataset.join("proposals");
    images.par_iter().try_for_each(|img_path| {
        let name = stem(img_path);
        let image = read_rgb_png(img_path)?;
        let anns = read_annotations(&required(boxes_dir.join(format!("{name}.json")), &name)?)?;
        let own = proposals_dir.join(&name);
        let props = if own.is_dir() {
            read_proposal_dir(&own)?
        } else {
            generate_proposals(&image, &params)
        };
        let lists: Vec<&[wspan::BinaryMask]> = anns.iter().map(|_| props.as_slice()).collect();
        let gt = fabricate_box_gt(&image, &anns, &lists, &classes, &cfg)?;
        write_label_png(&gt.semantic, &png_in(&out.join("semantic"), &name))?;
        write_label_png(
            gt.instances.raster(),
            &png_in(&out.join("instances"), &name),
        )?;
        write_mask_png(&gt.claimed, &png_in(&out.join("claimed"), &name))
    })?;
    let mut m = RunManifest::new(
        "fabricate-box",
        ctx.seed,
        &FabricateBoxSettings {
            box_gt: &cfg,
            proposals: &params,
        },
    );
    m.add_file("classes", &classes_path)?;
    m.add_files("images", images.iter().map(PathBuf::as_path))?;
    m.add_files(
        "boxes",
        list_files(&boxes_dir, "json")?.iter().map(PathBuf::as_path),
    )?;
    finish(&out, &m)
}

pub fn fabricate_tags(ctx: &Context, a: &FabricateTagsArgs) -> Result<()> {
    let tau = a.tau.or(ctx.file.tau).unwrap_or(DEFAULT_TAU);
    let out = under(&a.dataset, &a.out, "tag_gt");
    create_dir(&out)?;
    let heat_dir = a.dataset.join("heatmaps");
    let tags_dir = a.dataset.join("tags");
    let images = list_files(&a.dataset.join("images"), "png")?;
    images.par_iter().try_for_each(|img_path| {
        let name = stem(img_path);
        let tags = read_tags(&required(tags_dir.join(format!("{name}.json")), &name)?)?;
        let labels = if tags.is_empty() {
            let image = read_rgb_png(img_path)?;
            LabelMap::filled(image.height() as usize, image.width() as usize, IGNORE)
        } else {
            let stack = read_ptf(&required(heat_dir.join(format!("{name}.ptf")), &name)?)?;
            fabricate_tag_gt(&heatmaps_from_stack(&stack, &tags)?, &tags, tau)?
        };
        write_label_png(&labels, &png_in(&out, &name))
    })?;
    let mut m = RunManifest::new(
        "fabricate-tags",
        ctx.seed,
        &serde_json::json!({ "tau": tau }),
    );
    m.add_files(
        "tags",
        list_files(&tags_dir, "json")?.iter().map(PathBuf::as_path),
    )?;
    m.add_files(
        "heatmaps",
        list_files(&heat_dir, "ptf")?.iter().map(PathBuf::as_path),
    )?;
    finish(&out, &m)
}

pub fn refine(ctx: &Context, a: &RefineArgs) -> Result<()> {
    let (classes_path, classes) = load_classes(&a.dataset, &a.classes)?;
    let mut cfg = ctx.file.refine.clone().unwrap_or_default();
    if let Some(r) = a.rounds {
        cfg.rounds = r;
    }
    if let Some(c) = a.clamp_mode {
        cfg.clamp = c;
    }
    cfg.validate()?;
    let box_dir = under(&a.dataset, &a.box_gt, "box_gt");
    let tag_dir = under(&a.dataset, &a.tag_gt, "tag_gt");
    if !box_dir.is_dir() && !tag_dir.is_dir() {
        return Err(Error::MissingPair(format!(
            "neither {} nor {} exists",
            box_dir.display(),
            tag_dir.display()
        )));
    }
    let truth_dir = a.dataset.join("truth");
    let image_paths = list_files(&a.dataset.join("images"), "png")?;
    let names: Vec<String> = image_paths.iter().map(|p| stem(p)).collect();

    type Loaded = (
        wspan::RgbImage,
        Vec<wspan::boxgt::BoxAnnotation>,
        LabelMap,
        Option<PanopticMap>,
    );
    let loaded: Vec<Loaded> = image_paths
        .par_iter()
        .zip(names.par_iter())
        .map(|(p, name)| {
            let image = read_rgb_png(p)?;
            let (h, w) = (image.height() as usize, image.width() as usize);
            let boxes_path = a.dataset.join("boxes").join(format!("{name}.json"));
            let anns = if boxes_path.exists() {
                read_annotations(&boxes_path)?
            } else {
                Vec::new()
            };
            let (semantic, claimed) = if box_dir.is_dir() {
                (
                    read_label_png(&required(png_in(&box_dir.join("semantic"), name), name)?)?,
                    read_mask_png(&required(png_in(&box_dir.join("claimed"), name), name)?)?,
                )
            } else {
                (LabelMap::filled(h, w, IGNORE), wspan::BinaryMask::new(h, w))
            };
            let tags = if tag_dir.is_dir() {
                Some(read_label_png(&required(png_in(&tag_dir, name), name)?)?)
            } else {
                None
            };
            let initial = combine_fabrications(&semantic, &claimed, tags.as_ref())?;
            let truth = if truth_dir.is_dir() {
                Some(PanopticMap::new(read_label_png(&required(
                    png_in(&truth_dir, name),
                    name,
                )?)?)?)
            } else {
                None
            };
            Ok((image, anns, initial, truth))
        })
        .collect::<Result<_>>()?;

    let have_truth = loaded.iter().all(|l| l.3.is_some());
    let mut images = Vec::with_capacity(loaded.len());
    let mut annotations = Vec::with_capacity(loaded.len());
    let mut initial = Vec::with_capacity(loaded.len());
    let mut truth = Vec::with_capacity(loaded.len());
    for (img, ann, init, t) in loaded {
        images.push(img);
        annotations.push(ann);
        initial.push(init);
        truth.extend(t);
    }
    let data = RefineDataset {
        images,
        annotations,
        initial,
        truth: have_truth.then_some(truth),
    };
    let result = run_refinement(&data, &classes, &cfg)?;

    let out = under(&a.dataset, &a.out, "refined");
    for (r, snapshot) in result.snapshots.iter().enumerate() {
        let dir = out.join(format!("round_{r}"));
        create_dir(&dir)?;
        snapshot
            .par_iter()
            .zip(names.par_iter())
            .try_for_each(|(l, name)| write_label_png(l, &png_in(&dir, name)))?;
    }
    let final_labels = result
        .snapshots
        .last()
        .expect("at least the initial snapshot");
    let mut predictor = cfg.predictor.build(classes.len());
    predictor.fit(&data.images, final_labels)?;
    let probs_dir = out.join("probs");
    create_dir(&probs_dir)?;
    data.images
        .par_iter()
        .zip(names.par_iter())
        .try_for_each(|(img, name)| {
            write_ptf(
                &predictor.predict(img)?,
                &probs_dir.join(format!("{name}.ptf")),
            )
        })?;
    if !result.metrics.is_empty() {
        write_json(&result.metrics, &out.join("metrics.json"))?;
    }

    let mut m = RunManifest::new("refine", ctx.seed, &cfg);
    m.add_file("classes", &classes_path)?;
    m.add_files("images", image_paths.iter().map(PathBuf::as_path))?;
    if box_dir.is_dir() {
        m.add_files(
            "box_gt",
            list_files(&box_dir.join("semantic"), "png")?
                .iter()
                .map(PathBuf::as_path),
        )?;
    }
    if tag_dir.is_dir() {
        m.add_files(
            "tag_gt",
            list_files(&tag_dir, "png")?.iter().map(PathBuf::as_path),
        )?;
    }
    finish(&out, &m)
}

pub fn partition_cmd(ctx: &Context, a: &PartitionArgs) -> Result<()> {
    let (classes_path, classes) = load_classes(&a.dataset, &a.classes)?;
    let mut cfg: InstanceCrfConfig = ctx.file.instance_crf.clone().unwrap_or_default();
    if let Some(i) = a.iters {
        cfg.iters = i;
    }
    cfg.validate()?;
    let probs_dir = a
        .probs
        .clone()
        .unwrap_or_else(|| a.dataset.join("refined").join("probs"));
    let det_dir = under(&a.dataset, &a.detections, "detections");
    let tags_dir = a.dataset.join("tags");
    let out = under(&a.dataset, &a.out, "panoptic");
    create_dir(&out)?;
    let image_paths = list_files(&a.dataset.join("images"), "png")?;
    image_paths.par_iter().try_for_each(|p| {
        let name = stem(p);
        let image = read_rgb_png(p)?;
        let q = read_ptf(&required(probs_dir.join(format!("{name}.ptf")), &name)?)?.cast::<f64>();
        let dets = read_detections(&required(det_dir.join(format!("{name}.json")), &name)?)?;
        let tags_path = tags_dir.join(format!("{name}.json"));
        let stuff: Vec<u16> = if tags_path.exists() {
            read_tags(&tags_path)?
                .into_iter()
                .filter(|&c| classes.is_stuff(c))
                .collect()
        } else {
            classes.stuff_ids()
        };
        let all = add_stuff_dummies(&dets, &stuff, image.width(), image.height());
        let part = partition(&q, &all, &image, &classes, &cfg)?;
        let by_det = score_instances(&part, &all, ScoreMode::Detection, None)?;
        let by_conf = score_instances(&part, &all, ScoreMode::MeanConfidence, None)?;
        write_label_png(part.panoptic.raster(), &png_in(&out, &name))?;
        write_json(
            &ScoreSidecar::from_scored(&by_det, &by_conf),
            &out.join(format!("{name}.json")),
        )
    })?;
    let mut m = RunManifest::new("partition", ctx.seed, &cfg);
    m.add_file("classes", &classes_path)?;
    m.add_files("images", image_paths.iter().map(PathBuf::as_path))?;
    m.add_files(
        "probs",
        list_files(&probs_dir, "ptf")?.iter().map(PathBuf::as_path),
    )?;
    m.add_files(
        "detections",
        list_files(&det_dir, "json")?.iter().map(PathBuf::as_path),
    )?;
    finish(&out, &m)
}

pub fn evaluate(ctx: &Context, a: &EvaluateArgs) -> Result<()> {
    let classes = ClassTable::load(&a.classes)?;
    let base = ctx.file.eval.unwrap_or_default();
    let opts = EvalOptions {
        metrics: a.metrics.unwrap_or(base.metrics),
        regime: a.regime.unwrap_or(base.regime),
        score_mode: a.score_mode.unwrap_or(base.score_mode),
    };
    let rep = report(&a.pred, &a.gt, &classes, &opts)?;
    match &a.out {
        Some(path) => {
            write_json(&rep, path)?;
            let mut m = RunManifest::new("evaluate", ctx.seed, &opts);
            m.add_file("classes", &a.classes)?;
            m.add_files(
                "pred",
                list_files(&a.pred, "png")?.iter().map(PathBuf::as_path),
            )?;
            m.add_files("gt", list_files(&a.gt, "png")?.iter().map(PathBuf::as_path))?;
            m.write(&path.with_extension("manifest.json"))
        }
        None => {
            println!(
                "{}",
                serde_json::to_string_pretty(&rep).expect("report serializes")
            );
            Ok(())
        }
    }
}

pub fn render(ctx: &Context, a: &RenderArgs) -> Result<()> {
    let classes = ClassTable::load(&a.classes)?;
    let one = |input: &Path, output: &Path| -> Result<()> {
        let map = PanopticMap::new(read_label_png(input)?)?;
        write_rgb_png(&render_colorized(&map, &classes)?, output)
    };
    if a.input.is_dir() {
        create_dir(&a.out)?;
        let files = list_files(&a.input, "png")?;
        files
            .par_iter()
            .try_for_each(|p| one(p, &png_in(&a.out, &stem(p))))?;
        let mut m = RunManifest::new("render", ctx.seed, &serde_json::Value::Null);
        m.add_file("classes", &a.classes)?;
        m.add_files("input", files.iter().map(PathBuf::as_path))?;
        finish(&a.out, &m)
    } else {
        one(&a.input, &a.out)
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use pagroup::affinity::{build_supervision, masked_weighted_bce, pos_weight as dataset_pos_weight, SupervisionTarget};
use pagroup::config::PipelineConfig;
use pagroup::evalkit::{evaluate, ImageEval, IoUThresholdGrid};
use pagroup::io::afm::{afm_read, afm_write_affinity};
use pagroup::io::dataset::{dataset_read, dataset_write, AnnotationRecord, Dataset, ImageRecord, RleRecord, Role};
use pagroup::io::labelmap::write_labelmap_png;
use pagroup::io::overlay::{blank_canvas, load_canvas, render_overlay, write_png};
use pagroup::io::scores::read_scores;
use pagroup::io::write_atomic;
use pagroup::mask::{instances_to_labelmap, rle_decode, rle_encode, OverlapPolicy, RunLengthMask};
use pagroup::objectness::{ExternalRegionScores, ScoredRegion};
use pagroup::pipeline;
use pagroup::seed::derive_seed;
use pagroup::synth::{generate_scene, SceneSpec};
use pagroup::{AffinityMap, BinaryMask, GridDims, InstanceSet, Provenance};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{affinity_inputs, thread_pool};

/// Per-image companion of an encoded target: validity planes and the
/// positive weight. Weights follow from them (`pos_weight` on valid
/// positives, 1 on valid negatives).
#[derive(Debug, Serialize, Deserialize)]
struct SupervisionSidecar {
    image_id: u64,
    height: usize,
    width: usize,
    pos_weight: f64,
    positives: u64,
    negatives: u64,
    /// One run-length plane per neighbour channel.
    valid: Vec<RleRecord>,
}

#[derive(Debug, Serialize)]
struct LossRow {
    image_id: u64,
    loss: f64,
    valid_entries: usize,
}

#[derive(Debug, Serialize)]
struct LossReport {
    eps: f64,
    images: Vec<LossRow>,
    mean_loss: Option<f64>,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("{}: cannot create directory", dir.display()))
}

fn read_affinity(path: &Path) -> Result<AffinityMap<f32>> {
    afm_read::<f32>(path)?.into_affinity().with_context(|| format!("{}: expected an 8-channel affinity map", path.display()))
}

fn affinity_for(map: &BTreeMap<u64, PathBuf>, image: &ImageRecord) -> Result<AffinityMap<f32>> {
    let path = map.get(&image.id).ok_or_else(|| anyhow!("no affinity map given for image {}", image.id))?;
    let aff = read_affinity(path)?;
    if aff.dims() != image.dims()? {
        bail!("{}: affinity is {} but image {} is {}x{}", path.display(), aff.dims(), image.id, image.height, image.width);
    }
    Ok(aff)
}

fn oln_scores(path: Option<&Path>, use_oln: bool) -> Result<Option<ExternalRegionScores>> {
    match path {
        Some(p) => Ok(Some(read_scores(p)?)),
        None if use_oln => bail!("selection.use_oln is set but no --oln-scores file was given"),
        None => Ok(None),
    }
}

/// Candidate regions of one image as `(annotation id, mask, provenance)`.
fn candidates(ds: &Dataset, image_id: u64) -> Result<Vec<(u64, BinaryMask, Provenance)>> {
    ds.annotations_for(image_id, None)
        .map(|a| {
            let prov: Provenance = a.provenance.as_deref().unwrap_or("").parse().expect("infallible");
            Ok((a.id, a.mask()?, prov))
        })
        .collect()
}

fn check_oln_coverage(ext: Option<&ExternalRegionScores>, ids: impl IntoIterator<Item = u64>, path: Option<&Path>) -> Result<()> {
    if let (Some(ext), Some(path)) = (ext, path) {
        for id in ids {
            if ext.get(id).is_none() {
                bail!("{}: no entry for region {id}", path.display());
            }
        }
    }
    Ok(())
}

pub fn encode(dataset: &Path, out: &Path, role: Role, pos_weight: Option<f64>, jobs: usize) -> Result<()> {
    let ds = dataset_read(dataset)?;
    if ds.images.is_empty() {
        eprintln!("{}: no images, nothing written", dataset.display());
        return Ok(());
    }
    let mut images = ds.images.clone();
    images.sort_by_key(|i| i.id);
    let sets = images
        .iter()
        .map(|img| ds.instance_set(img.id, Some(role)).with_context(|| format!("image {}", img.id)))
        .collect::<Result<Vec<InstanceSet>>>()?;
    let pw = match pos_weight {
        Some(w) => w,
        None => dataset_pos_weight(&sets).with_context(|| format!("{}: cannot derive the positive weight", dataset.display()))?,
    };
    create_dir(out)?;
    thread_pool(jobs)?.install(|| {
        images.par_iter().zip(&sets).try_for_each(|(img, set)| -> Result<()> {
            let sup = build_supervision::<f32>(set, pw as f32).with_context(|| format!("image {}", img.id))?;
            afm_write_affinity(sup.target(), &out.join(format!("{}.afm", img.id)))?;
            let d = set.dims();
            let plane = d.len();
            let valid = (0..8)
                .map(|p| {
                    let m = BinaryMask::from_bools(d, &sup.valid()[p * plane..(p + 1) * plane]).expect("plane size");
                    RleRecord { size: [d.height(), d.width()], counts: rle_encode(&m).counts().to_vec() }
                })
                .collect();
            let target = sup.target().as_slice();
            let positives = (0..8 * plane).filter(|&i| sup.valid()[i] && target[i] == 1.0).count() as u64;
            let negatives = sup.valid().iter().filter(|&&v| v).count() as u64 - positives;
            let sidecar = SupervisionSidecar {
                image_id: img.id,
                height: d.height(),
                width: d.width(),
                pos_weight: pw,
                positives,
                negatives,
                valid,
            };
            write_json(&sidecar, &out.join(format!("{}.supervision.json", img.id)))
        })
    })
}

fn load_supervision(dir: &Path, sidecar_path: &Path) -> Result<(u64, SupervisionTarget<f32>)> {
    let bytes = std::fs::read(sidecar_path).with_context(|| format!("{}: cannot read", sidecar_path.display()))?;
    let sc: SupervisionSidecar =
        serde_json::from_slice(&bytes).with_context(|| format!("{}: malformed supervision sidecar", sidecar_path.display()))?;
    let target = read_affinity(&dir.join(format!("{}.afm", sc.image_id)))?;
    let d = GridDims::new(sc.height, sc.width)?;
    if target.dims() != d || sc.valid.len() != 8 {
        bail!("{}: sidecar does not match target {}", sidecar_path.display(), target.dims());
    }
    let mut valid = Vec::with_capacity(8 * d.len());
    for rle in &sc.valid {
        let rle = RunLengthMask::new(GridDims::new(rle.size[0], rle.size[1])?, rle.counts.clone())
            .with_context(|| format!("{}: bad validity plane", sidecar_path.display()))?;
        if rle.dims() != d {
            bail!("{}: validity plane size differs from the image", sidecar_path.display());
        }
        valid.extend(rle_decode(&rle).to_bools());
    }
    let sup = SupervisionTarget::from_parts(target, valid, sc.pos_weight as f32)
        .with_context(|| format!("{}: inconsistent sidecar", sidecar_path.display()))?;
    Ok((sc.image_id, sup))
}

pub fn supervise(targets: &Path, predictions: &[PathBuf], out: &Path, eps: f64) -> Result<()> {
    let preds = affinity_inputs(predictions)?;
    let mut sidecars: Vec<(u64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(targets).with_context(|| format!("{}: cannot list directory", targets.display()))? {
        let p = entry?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(stem) = name.strip_suffix(".supervision.json") {
            let id = stem.parse().with_context(|| format!("{}: file name is not <id>.supervision.json", p.display()))?;
            sidecars.push((id, p));
        }
    }
    sidecars.sort();
    let mut rows = Vec::new();
    for (_, path) in &sidecars {
        let (id, sup) = load_supervision(targets, path)?;
        let pred_path = preds.get(&id).ok_or_else(|| anyhow!("no prediction given for image {id}"))?;
        let pred = read_affinity(pred_path)?;
        let loss = masked_weighted_bce(&pred, &sup, eps).with_context(|| format!("{}: image {id}", pred_path.display()))?;
        rows.push(LossRow { image_id: id, loss, valid_entries: sup.valid().iter().filter(|&&v| v).count() });
    }
    let mean_loss = (!rows.is_empty()).then(|| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64);
    write_json(&LossReport { eps, images: rows, mean_loss }, out)
}

pub fn group(inputs: &[PathBuf], out: &Path, cfg: &PipelineConfig, jobs: usize) -> Result<()> {
    let files: Vec<(u64, PathBuf)> = affinity_inputs(inputs)?.into_iter().collect();
    let results = thread_pool(jobs)?.install(|| {
        files
            .par_iter()
            .map(|(id, path)| -> Result<_> {
                let aff = read_affinity(path)?;
                let g = pipeline::group(&aff, cfg.aggregation, &cfg.grouping).with_context(|| format!("{}: grouping failed", path.display()))?;
                Ok((*id, path, aff.dims(), g))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut ds = Dataset::new();
    let mut next = 1;
    for (id, path, d, g) in results {
        if g.sentinel_merges > 0 {
            eprintln!("image {id}: {} disconnected components joined at the sentinel level", g.sentinel_merges);
        }
        let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        ds.images.push(ImageRecord { id, file, height: d.height(), width: d.width() });
        for (mask, prov) in g.regions.into_vec() {
            ds.annotations.push(AnnotationRecord::from_mask(next, id, &mask, Role::Proposal).with_provenance(prov.to_string()));
            next += 1;
        }
    }
    dataset_write(&ds, out)?;
    Ok(())
}

fn score_image(
    regions: &Dataset,
    img: &ImageRecord,
    affs: &BTreeMap<u64, PathBuf>,
    ext: Option<&ExternalRegionScores>,
    ext_path: Option<&Path>,
) -> Result<(AffinityMap<f32>, Vec<ScoredRegion<f32>>)> {
    let aff = affinity_for(affs, img)?;
    let cands = candidates(regions, img.id)?;
    check_oln_coverage(ext, cands.iter().map(|c| c.0), ext_path)?;
    let scored = cands
        .into_iter()
        .map(|(id, m, p)| ScoredRegion::score(id, m, p, &aff, ext).with_context(|| format!("annotation {id}")))
        .collect::<Result<Vec<_>>>()?;
    Ok((aff, scored))
}

pub fn score(regions: &Path, affinity: &[PathBuf], oln: Option<&Path>, out: &Path, jobs: usize) -> Result<()> {
    let ds = dataset_read(regions)?;
    let affs = affinity_inputs(affinity)?;
    let ext = oln_scores(oln, false)?;
    let scored = thread_pool(jobs)?.install(|| {
        ds.images.par_iter().map(|img| score_image(&ds, img, &affs, ext.as_ref(), oln).map(|s| s.1)).collect::<Result<Vec<_>>>()
    })?;
    let by_id: BTreeMap<u64, f64> = scored.into_iter().flatten().map(|r| (r.id, r.combined as f64)).collect();
    let mut out_ds = ds.clone();
    for a in &mut out_ds.annotations {
        a.score = Some(by_id[&a.id]);
    }
    dataset_write(&out_ds, out)?;
    Ok(())
}

pub fn select(
    regions: &Path,
    affinity: &[PathBuf],
    gt: &Path,
    oln: Option<&Path>,
    out: &Path,
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<()> {
    let ds = dataset_read(regions)?;
    let gt_ds = dataset_read(gt)?;
    let affs = affinity_inputs(affinity)?;
    let ext = oln_scores(oln, cfg.selection.use_oln)?;
    let mut sel = cfg.selection.clone();
    sel.use_oln = ext.is_some();
    let picked = thread_pool(jobs)?.install(|| {
        ds.images
            .par_iter()
            .map(|img| -> Result<_> {
                let gts = gt_ds
                    .instance_set(img.id, Some(Role::Gt))
                    .with_context(|| format!("{}: image {}", gt.display(), img.id))?;
                let aff = affinity_for(&affs, img)?;
                let cands = candidates(&ds, img.id)?;
                check_oln_coverage(ext.as_ref(), cands.iter().map(|c| c.0), oln)?;
                let kept = pipeline::select(cands, &aff, &gts, ext.as_ref(), &sel).with_context(|| format!("image {}", img.id))?;
                Ok((img.id, kept))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out_ds = Dataset { images: ds.images.clone(), annotations: Vec::new() };
    for (id, kept) in picked {
        if kept.is_empty() {
            eprintln!("warning: image {id}: every candidate overlaps annotated masks above the cap; no pseudo-GT emitted");
        }
        for r in kept {
            out_ds.annotations.push(
                AnnotationRecord::from_mask(r.id, id, &r.mask, Role::Pseudo)
                    .with_score(r.combined as f64)
                    .with_provenance(r.provenance.to_string()),
            );
        }
    }
    dataset_write(&out_ds, out)?;
    Ok(())
}

pub fn eval(proposals: &Path, gt: &Path, out: &Path, csv: Option<&Path>, cfg: &PipelineConfig) -> Result<()> {
    let props_ds = dataset_read(proposals)?;
    let gt_ds = dataset_read(gt)?;
    for a in &props_ds.annotations {
        let Some(img) = gt_ds.image(a.image_id) else {
            bail!("{}: annotation {} refers to image {} absent from {}", proposals.display(), a.id, a.image_id, gt.display());
        };
        if a.rle.size != [img.height, img.width] {
            bail!("{}: annotation {} does not match the size of image {}", proposals.display(), a.id, img.id);
        }
    }
    let mut images = gt_ds.images.clone();
    images.sort_by_key(|i| i.id);
    let gts = images.iter().map(|i| gt_ds.instance_set(i.id, Some(Role::Gt))).collect::<pagroup::Result<Vec<_>>>()?;
    let props = images.iter().map(|i| props_ds.proposals(i.id, None)).collect::<pagroup::Result<Vec<_>>>()?;
    let evals: Vec<ImageEval> = images
        .iter()
        .zip(&gts)
        .zip(&props)
        .map(|((i, g), p)| ImageEval { image_id: i.id, proposals: p, gts: g })
        .collect();
    let report = evaluate(&evals, &cfg.eval.budgets, &IoUThresholdGrid::standard())?;
    write_json(&report, out)?;
    if let Some(csv) = csv {
        write_atomic(csv, report.to_csv().as_bytes())?;
    }
    Ok(())
}

pub fn synth(out: &Path, count: u64, spec: &SceneSpec, jobs: usize) -> Result<()> {
    create_dir(out)?;
    let scenes = thread_pool(jobs)?.install(|| {
        (1..=count)
            .into_par_iter()
            .map(|id| -> Result<_> {
                let s = SceneSpec { seed: derive_seed(spec.seed, "synth", id), ..spec.clone() };
                let set = generate_scene(&s).with_context(|| format!("scene {id}"))?;
                write_labelmap_png(&instances_to_labelmap(&set, OverlapPolicy::Error)?, &out.join(format!("{id}.png")))?;
                Ok((id, set))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut ds = Dataset::new();
    let mut next = 1;
    for (id, set) in scenes {
        let d = set.dims();
        ds.images.push(ImageRecord { id, file: format!("{id}.png"), height: d.height(), width: d.width() });
        for (_, m) in set.iter() {
            ds.annotations.push(AnnotationRecord::from_mask(next, id, m, Role::Gt));
            next += 1;
        }
    }
    dataset_write(&ds, &out.join("dataset.json"))?;
    Ok(())
}

pub fn render(dataset: &Path, image_id: u64, role: Option<Role>, canvas: Option<&Path>, out: &Path) -> Result<()> {
    let ds = dataset_read(dataset)?;
    let img = ds.image(image_id).ok_or_else(|| anyhow!("{}: no image {image_id}", dataset.display()))?;
    let d = img.dims()?;
    let base = match canvas {
        Some(p) => {
            let c = load_canvas(p)?;
            if (c.height() as usize, c.width() as usize) != (d.height(), d.width()) {
                bail!("{}: canvas is {}x{}, image {image_id} is {d}", p.display(), c.height(), c.width());
            }
            c
        }
        None => blank_canvas(d),
    };
    let masks: Vec<(u64, BinaryMask)> =
        ds.annotations_for(image_id, role).map(|a| Ok((a.id, a.mask()?))).collect::<pagroup::Result<_>>()?;
    let img = render_overlay(base, masks.iter().map(|(id, m)| (*id, m)))?;
    write_png(&img, out)?;
    Ok(())
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pagroup::io::afm::afm_write_affinity;
use pagroup::io::dataset::{dataset_read, dataset_write, AnnotationRecord, Dataset, ImageRecord, Role};
use pagroup::io::scores::write_scores;
use pagroup::objectness::{score_o_pa, ExternalRegionScores};
use pagroup::{AffinityMap, BinaryMask, GridDims};
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pagroup")).args(args).output().expect("spawn pagroup")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "pagroup {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn fail(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "pagroup {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn rect(d: GridDims, r0: usize, c0: usize, h: usize, w: usize) -> BinaryMask {
    BinaryMask::from_fn(d, |r, c| (r0..r0 + h).contains(&r) && (c0..c0 + w).contains(&c))
}

fn dataset(d: GridDims, masks: &[(u64, BinaryMask)], role: Role) -> Dataset {
    let mut ds = Dataset::new();
    ds.images.push(ImageRecord { id: 1, file: "1.png".into(), height: d.height(), width: d.width() });
    for (id, m) in masks {
        ds.annotations.push(AnnotationRecord::from_mask(*id, 1, m, role));
    }
    ds
}

fn write_ds(dir: &Path, name: &str, ds: &Dataset) -> PathBuf {
    let p = dir.join(name);
    dataset_write(ds, &p).unwrap();
    p
}

fn constant_afm(dir: &Path, d: GridDims, v: f32) -> PathBuf {
    let p = dir.join("1.afm");
    afm_write_affinity(&AffinityMap::from_fn(d, |_, _, _| v).unwrap(), &p).unwrap();
    p
}

fn synth(dir: &Path, name: &str, count: &str, seed: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&["synth", "--out", s(&out), "--count", count, "--seed", seed, "--height", "32", "--width", "32"]);
    out
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn encode_empty_dataset_writes_nothing() {
    let t = TempDir::new().unwrap();
    let ds = write_ds(t.path(), "empty.json", &Dataset::new());
    let out = t.path().join("targets");
    ok(&["encode", "--dataset", s(&ds), "--out", s(&out)]);
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn encode_one_image_gives_one_afm_and_reruns_identically() {
    let t = TempDir::new().unwrap();
    let d = GridDims::new(12, 12).unwrap();
    let ds = write_ds(t.path(), "gt.json", &dataset(d, &[(1, rect(d, 2, 2, 4, 5))], Role::Gt));
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["encode", "--dataset", s(&ds), "--out", s(&a)]);
    ok(&["encode", "--dataset", s(&ds), "--out", s(&b), "--jobs", "3"]);
    let fa = files(&a);
    assert_eq!(fa.iter().filter(|(n, _)| n.ends_with(".afm")).count(), 1);
    assert_eq!(fa, files(&b));
}

#[test]
fn supervise_scores_targets_against_themselves() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path(), "s", "2", "4");
    let targets = t.path().join("targets");
    ok(&["encode", "--dataset", s(&data.join("dataset.json")), "--out", s(&targets)]);
    let report = t.path().join("loss.json");
    ok(&["supervise", "--targets", s(&targets), "--predictions", s(&targets), "--out", s(&report)]);
    let r = json(&report);
    assert_eq!(r["images"].as_array().unwrap().len(), 2);
    assert!(r["mean_loss"].as_f64().unwrap() < 1e-5);
}

#[test]
fn group_all_ones_with_cc_gives_one_region() {
    let t = TempDir::new().unwrap();
    let afm = constant_afm(t.path(), GridDims::new(8, 9).unwrap(), 1.0);
    let out = t.path().join("regions.json");
    ok(&["group", s(&afm), "--out", s(&out), "--method", "cc"]);
    let ds = dataset_read(&out).unwrap();
    assert_eq!(ds.annotations.len(), 1);
    assert_eq!(ds.annotations[0].rle.size, [8, 9]);
    assert!(ds.annotations[0].provenance.as_deref().unwrap().contains("cc"));
}

#[test]
fn group_ucm_on_two_basins_builds_a_hierarchy() {
    let t = TempDir::new().unwrap();
    let d = GridDims::new(16, 16).unwrap();
    let (m1, m2) = ((5.3, 4.1), (10.2, 11.7));
    let f = |r: usize, c: usize| {
        let a: f64 = (r as f64 - m1.0).powi(2) + (c as f64 - m1.1).powi(2);
        let b = (r as f64 - m2.0).powi(2) + (c as f64 - m2.1).powi(2);
        (a.min(b) / 200.0).min(1.0)
    };
    let aff = AffinityMap::from_fn(d, |_, r, c| (1.0 - f(r, c)) as f32).unwrap();
    let afm = t.path().join("1.afm");
    afm_write_affinity(&aff, &afm).unwrap();
    let (a, b) = (t.path().join("a.json"), t.path().join("b.json"));
    ok(&["group", s(&afm), "--out", s(&a), "--method", "ucm"]);
    ok(&["group", s(&afm), "--out", s(&b), "--method", "ucm", "--jobs", "2"]);
    assert!(dataset_read(&a).unwrap().annotations.len() >= 3);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

/// Ten disjoint 2x2 candidates on a 16x16 image, one GT square elsewhere.
fn ten_candidates(dir: &Path) -> (PathBuf, PathBuf, PathBuf, GridDims) {
    let d = GridDims::new(16, 16).unwrap();
    let cands: Vec<_> = (0..10u64).map(|i| (i + 1, rect(d, 3 * (i as usize / 5), 3 * (i as usize % 5), 2, 2))).collect();
    let regions = write_ds(dir, "regions.json", &dataset(d, &cands, Role::Proposal));
    let gt = write_ds(dir, "gt.json", &dataset(d, &[(1, rect(d, 12, 12, 3, 3))], Role::Gt));
    (regions, gt, constant_afm(dir, d, 0.5), d)
}

#[test]
fn select_keeps_k() {
    let t = TempDir::new().unwrap();
    let (regions, gt, afm, _) = ten_candidates(t.path());
    let out = t.path().join("pseudo.json");
    ok(&["select", "--regions", s(&regions), "--affinity", s(&afm), "--gt", s(&gt), "--out", s(&out), "--k", "3"]);
    let ds = dataset_read(&out).unwrap();
    assert_eq!(ds.annotations.len(), 3);
    assert!(ds.annotations.iter().all(|a| a.role == Role::Pseudo));
}

#[test]
fn select_with_all_candidates_on_gt_warns_and_emits_nothing() {
    let t = TempDir::new().unwrap();
    let d = GridDims::new(10, 10).unwrap();
    let gt_masks = [(1, rect(d, 0, 0, 4, 4)), (2, rect(d, 6, 6, 4, 4))];
    let cands = [(1, rect(d, 0, 0, 4, 4)), (2, rect(d, 0, 0, 4, 3)), (3, rect(d, 6, 6, 4, 4))];
    let regions = write_ds(t.path(), "regions.json", &dataset(d, &cands, Role::Proposal));
    let gt = write_ds(t.path(), "gt.json", &dataset(d, &gt_masks, Role::Gt));
    let afm = constant_afm(t.path(), d, 1.0);
    let out = t.path().join("pseudo.json");
    let o = ok(&["select", "--regions", s(&regions), "--affinity", s(&afm), "--gt", s(&gt), "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    assert!(dataset_read(&out).unwrap().annotations.is_empty());
}

#[test]
fn select_averages_in_oln_scores() {
    let t = TempDir::new().unwrap();
    let (regions, gt, afm, d) = ten_candidates(t.path());
    let mut ext = ExternalRegionScores::new();
    for id in 1..=10 {
        ext.insert(id, 0.81, 0.49).unwrap();
    }
    let sidecar = t.path().join("oln.json");
    write_scores(&ext, &sidecar).unwrap();
    let out = t.path().join("pseudo.json");
    ok(&[
        "select", "--regions", s(&regions), "--affinity", s(&afm), "--gt", s(&gt), "--oln-scores", s(&sidecar), "--out",
        s(&out), "--k", "10",
    ]);
    let aff = AffinityMap::from_fn(d, |_, _, _| 0.5f32).unwrap();
    let ds = dataset_read(&out).unwrap();
    assert_eq!(ds.annotations.len(), 10);
    for a in &ds.annotations {
        let o_pa = score_o_pa(&a.mask().unwrap(), &aff).unwrap().o_pa as f64;
        assert!((a.score.unwrap() - (o_pa + 0.63) / 2.0).abs() < 1e-6, "{a:?}");
    }
}

#[test]
fn select_refuses_oln_flag_without_sidecar() {
    let t = TempDir::new().unwrap();
    let (regions, gt, afm, _) = ten_candidates(t.path());
    let out = t.path().join("pseudo.json");
    let err = fail(&[
        "select", "--regions", s(&regions), "--affinity", s(&afm), "--gt", s(&gt), "--out", s(&out), "--use-oln", "true",
    ]);
    assert!(err.contains("oln"), "{err}");
}

#[test]
fn score_attaches_scores_to_every_region() {
    let t = TempDir::new().unwrap();
    let (regions, _, afm, _) = ten_candidates(t.path());
    let out = t.path().join("scored.json");
    ok(&["score", "--regions", s(&regions), "--affinity", s(&afm), "--out", s(&out)]);
    assert!(dataset_read(&out).unwrap().annotations.iter().all(|a| a.score.is_some()));
}

fn eval_ar(dir: &Path, proposals: &Dataset, gt: &Dataset) -> Value {
    let p = write_ds(dir, "proposals.json", proposals);
    let g = write_ds(dir, "gt.json", gt);
    let out = dir.join("report.json");
    let csv = dir.join("report.csv");
    ok(&["eval", "--proposals", s(&p), "--gt", s(&g), "--out", s(&out), "--csv", s(&csv)]);
    assert!(csv.exists());
    json(&out)
}

#[test]
fn eval_examples() {
    let t = TempDir::new().unwrap();
    let d = GridDims::new(10, 10).unwrap();
    let gt = dataset(d, &[(1, rect(d, 0, 0, 3, 3)), (2, rect(d, 5, 5, 4, 4))], Role::Gt);

    let r = eval_ar(t.path(), &gt, &gt);
    assert_eq!(r["ar_at"]["100"].as_f64(), Some(1.0));

    let mut empty = gt.clone();
    empty.annotations.clear();
    let r = eval_ar(t.path(), &empty, &gt);
    assert_eq!(r["ar_at"]["100"].as_f64(), Some(0.0));

    let single = dataset(d, &[(1, rect(d, 0, 0, 1, 10))], Role::Gt);
    let prop = dataset(d, &[(1, rect(d, 0, 0, 1, 6))], Role::Proposal);
    let r = eval_ar(t.path(), &prop, &single);
    assert!((r["ar_at"]["10"].as_f64().unwrap() - 0.3).abs() < 1e-12, "{r}");
}

#[test]
fn synth_is_seed_deterministic() {
    let t = TempDir::new().unwrap();
    let a = synth(t.path(), "a", "3", "11");
    let b = synth(t.path(), "b", "3", "11");
    let c = synth(t.path(), "c", "3", "12");
    assert_eq!(files(&a), files(&b));
    assert_ne!(files(&a), files(&c));
    assert_eq!(dataset_read(&a.join("dataset.json")).unwrap().images.len(), 3);
}

#[test]
fn synth_zero_scenes_is_an_empty_dataset() {
    let t = TempDir::new().unwrap();
    let a = synth(t.path(), "a", "0", "1");
    let ds = dataset_read(&a.join("dataset.json")).unwrap();
    assert!(ds.images.is_empty() && ds.annotations.is_empty());
}

#[test]
fn render_is_deterministic() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path(), "s", "1", "5").join("dataset.json");
    let (a, b) = (t.path().join("a.png"), t.path().join("b.png"));
    ok(&["render", "--dataset", s(&data), "--image-id", "1", "--out", s(&a)]);
    ok(&["render", "--dataset", s(&data), "--image-id", "1", "--role", "gt", "--out", s(&b)]);
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(&bytes[..4], b"\x89PNG");
    assert_eq!(bytes, std::fs::read(&b).unwrap());
}

#[test]
fn errors_name_the_offending_file_or_id() {
    let t = TempDir::new().unwrap();
    let missing = t.path().join("7.afm");
    assert!(fail(&["group", s(&missing), "--out", s(&t.path().join("r.json"))]).contains("7.afm"));

    let d = GridDims::new(6, 6).unwrap();
    let gt = write_ds(t.path(), "gt.json", &dataset(d, &[(1, rect(d, 0, 0, 2, 2))], Role::Gt));
    let mut stray = Dataset::new();
    stray.images.push(ImageRecord { id: 42, file: "42.png".into(), height: 6, width: 6 });
    stray.annotations.push(AnnotationRecord::from_mask(4, 42, &rect(d, 0, 0, 2, 2), Role::Proposal));
    let stray = write_ds(t.path(), "stray.json", &stray);
    let err = fail(&["eval", "--proposals", s(&stray), "--gt", s(&gt), "--out", s(&t.path().join("e.json"))]);
    assert!(err.contains("42") && err.contains("stray.json"), "{err}");

    let err = fail(&["render", "--dataset", s(&gt), "--image-id", "9", "--out", s(&t.path().join("x.png"))]);
    assert!(err.contains('9') && err.contains("gt.json"), "{err}");

    let bad_cfg = t.path().join("cfg.json");
    std::fs::write(&bad_cfg, b"{\"grouping\": {\"bogus\": 1}}").unwrap();
    let afm = constant_afm(t.path(), d, 1.0);
    assert!(fail(&["group", s(&afm), "--out", s(&t.path().join("r.json")), "--config", s(&bad_cfg)]).contains("cfg.json"));
}

#[test]
fn synth_encode_group_select_eval_chain() {
    let t = TempDir::new().unwrap();
    let data = synth(t.path(), "s", "4", "2024");
    let gt = data.join("dataset.json");
    let targets = t.path().join("targets");
    ok(&["encode", "--dataset", s(&gt), "--out", s(&targets), "--jobs", "2"]);
    let regions = t.path().join("regions.json");
    ok(&["group", s(&targets), "--out", s(&regions), "--method", "cc", "--thresholds", "0.5", "--jobs", "2"]);
    let report = t.path().join("report.json");
    ok(&["eval", "--proposals", s(&regions), "--gt", s(&gt), "--out", s(&report)]);
    assert_eq!(json(&report)["recall_at_all"].as_f64(), Some(1.0));

    let pseudo = t.path().join("pseudo.json");
    ok(&["select", "--regions", s(&regions), "--affinity", s(&targets), "--gt", s(&gt), "--out", s(&pseudo), "--k", "3"]);
    let ds = dataset_read(&pseudo).unwrap();
    for img in &ds.images {
        assert!(ds.annotations_for(img.id, None).count() <= 3);
    }
}

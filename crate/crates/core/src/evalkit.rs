//! Proposal evaluation: greedy one-to-one matching, average recall at
//! proposal budgets, recall without truncation, and 101-point average
//! precision over the IoU grid 0.50:0.05:0.95.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{iou_unchecked, BinaryMask, InstanceSet};

/// The ten IoU thresholds `0.50, 0.55, ..., 0.95`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoUThresholdGrid {
    thresholds: [f64; 10],
}

impl IoUThresholdGrid {
    pub fn standard() -> Self {
        Self { thresholds: std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0) }
    }

    pub fn values(&self) -> &[f64; 10] {
        &self.thresholds
    }
}

impl Default for IoUThresholdGrid {
    fn default() -> Self {
        Self::standard()
    }
}

/// A scored candidate mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub id: u64,
    pub mask: BinaryMask,
    pub score: f64,
}

/// Proposals and ground truth of one image.
#[derive(Debug, Clone, Copy)]
pub struct ImageEval<'a> {
    pub image_id: u64,
    pub proposals: &'a [Proposal],
    pub gts: &'a InstanceSet,
}

/// IoU of every (proposal, gt) pair, row-major by proposal.
struct IouMatrix {
    n_gt: usize,
    values: Vec<f64>,
}

impl IouMatrix {
    fn new<'a>(proposals: impl IntoIterator<Item = &'a BinaryMask>, gts: &[BinaryMask]) -> Result<Self> {
        let mut values = Vec::new();
        for p in proposals {
            for g in gts {
                p.dims().check_same(&g.dims())?;
                values.push(iou_unchecked(p, g));
            }
        }
        Ok(Self { n_gt: gts.len(), values })
    }

    fn row(&self, p: usize) -> &[f64] {
        &self.values[p * self.n_gt..(p + 1) * self.n_gt]
    }
}

/// Greedy one-to-one matching of rows (already in score order) against
/// columns. Returns, per row, the matched column and its IoU.
fn greedy(m: &IouMatrix, rows: usize, t: f64) -> Vec<Option<(usize, f64)>> {
    let mut taken = vec![false; m.n_gt];
    (0..rows)
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &v) in m.row(p).iter().enumerate() {
                if !taken[g] && v >= t && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            best
        })
        .collect()
}

/// Matches proposals, given in descending score order, to GT masks.
/// Returns `(gt index, proposal index)` pairs in proposal order.
pub fn match_greedy(proposals: &[BinaryMask], gts: &InstanceSet, iou_t: f64) -> Result<Vec<(usize, usize)>> {
    let m = IouMatrix::new(proposals, gts.masks())?;
    Ok(greedy(&m, proposals.len(), iou_t)
        .into_iter()
        .enumerate()
        .filter_map(|(p, g)| g.map(|(g, _)| (g, p)))
        .collect())
}

/// Size of a maximum matching in the `IoU >= iou_t` bipartite graph, by
/// exhaustive search. Limited to 12 proposals and 8 GT masks.
pub fn oracle_match(proposals: &[BinaryMask], gts: &[BinaryMask], iou_t: f64) -> Result<usize> {
    if proposals.len() > 12 || gts.len() > 8 {
        return Err(Error::OracleBudget(format!(
            "{} proposals x {} gts exceeds 12 x 8",
            proposals.len(),
            gts.len()
        )));
    }
    let m = IouMatrix::new(proposals, gts)?;
    let ok = |p: usize, g: usize| m.row(p)[g] >= iou_t;
    fn best(g: usize, used: u16, n_gt: usize, n_p: usize, ok: &dyn Fn(usize, usize) -> bool, memo: &mut HashMap<(usize, u16), usize>) -> usize {
        if g == n_gt {
            return 0;
        }
        if let Some(&v) = memo.get(&(g, used)) {
            return v;
        }
        let mut v = best(g + 1, used, n_gt, n_p, ok, memo);
        for p in 0..n_p {
            if used & (1 << p) == 0 && ok(p, g) {
                v = v.max(1 + best(g + 1, used | (1 << p), n_gt, n_p, ok, memo));
            }
        }
        memo.insert((g, used), v);
        v
    }
    Ok(best(0, 0, gts.len(), proposals.len(), &ok, &mut HashMap::new()))
}

/// Proposal indices by descending score, ties in input order.
fn score_order(proposals: &[Proposal]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..proposals.len()).collect();
    idx.sort_by(|&a, &b| proposals[b].score.total_cmp(&proposals[a].score));
    idx
}

struct Prepared {
    order: Vec<usize>,
    iou: IouMatrix,
}

fn prepare(img: &ImageEval) -> Result<Prepared> {
    let order = score_order(img.proposals);
    let iou = IouMatrix::new(order.iter().map(|&i| &img.proposals[i].mask), img.gts.masks())?;
    Ok(Prepared { order, iou })
}

/// Micro-averaged recall per threshold with at most `budget` proposals per
/// image (`None`: no truncation).
fn recalls(images: &[ImageEval], prepared: &[Prepared], budget: Option<usize>, grid: &IoUThresholdGrid) -> Vec<f64> {
    let total: usize = images.iter().map(|i| i.gts.len()).sum();
    grid.values()
        .iter()
        .map(|&t| {
            if total == 0 {
                return 0.0;
            }
            let matched: usize = prepared
                .iter()
                .map(|p| {
                    let n = budget.map_or(p.order.len(), |b| b.min(p.order.len()));
                    greedy(&p.iou, n, t).iter().filter(|m| m.is_some()).count()
                })
                .sum();
            matched as f64 / total as f64
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// 101-point interpolated AP at one threshold, proposals pooled across
/// images by score.
fn ap_at(images: &[ImageEval], prepared: &[Prepared], t: f64) -> f64 {
    let total: usize = images.iter().map(|i| i.gts.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let mut pooled: Vec<(f64, usize, usize, bool)> = Vec::new();
    for (k, (img, p)) in images.iter().zip(prepared).enumerate() {
        let m = greedy(&p.iou, p.order.len(), t);
        for (rank, (&i, hit)) in p.order.iter().zip(&m).enumerate() {
            pooled.push((img.proposals[i].score, k, rank, hit.is_some()));
        }
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut precision = Vec::with_capacity(pooled.len());
    let mut recall = Vec::with_capacity(pooled.len());
    for &(_, _, _, hit) in &pooled {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / total as f64);
    }
    for i in (1..precision.len()).rev() {
        precision[i - 1] = precision[i - 1].max(precision[i]);
    }
    (0..=100)
        .map(|r| {
            let r = r as f64 / 100.0;
            let i = recall.partition_point(|&x| x < r);
            precision.get(i).copied().unwrap_or(0.0)
        })
        .sum::<f64>()
        / 101.0
}

/// Mean over the grid of the fraction of GT masks matched by each image's
/// top `budget` proposals, pooled over all GT masks of the dataset.
pub fn average_recall(images: &[ImageEval], budget: usize, grid: &IoUThresholdGrid) -> Result<f64> {
    let prepared = images.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    Ok(mean(&recalls(images, &prepared, Some(budget), grid)))
}

/// [`average_recall`] without truncating the proposal lists.
pub fn recall_at_all(images: &[ImageEval], grid: &IoUThresholdGrid) -> Result<f64> {
    let prepared = images.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    Ok(mean(&recalls(images, &prepared, None, grid)))
}

pub fn average_precision(images: &[ImageEval], grid: &IoUThresholdGrid) -> Result<f64> {
    let prepared = images.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    Ok(mean(&grid.values().map(|t| ap_at(images, &prepared, t))))
}

/// One row of the per-threshold recall table; `budget` is `None` for the
/// untruncated row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub budget: Option<usize>,
    pub recalls: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub image_id: u64,
    pub gt_id: u64,
    pub proposal_id: u64,
    pub iou: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_images: usize,
    pub n_gt: usize,
    pub n_proposals: usize,
    pub thresholds: Vec<f64>,
    /// AR keyed by proposal budget.
    pub ar_at: BTreeMap<usize, f64>,
    pub recall_at_all: f64,
    pub ap: f64,
    pub per_threshold_recall: Vec<RecallRow>,
    /// Untruncated matches at every threshold.
    pub matched_pairs: Vec<MatchedPair>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("budget");
        for t in &self.thresholds {
            let _ = write!(s, ",{t:.2}");
        }
        s.push('\n');
        for row in &self.per_threshold_recall {
            match row.budget {
                Some(b) => s.push_str(&b.to_string()),
                None => s.push_str("all"),
            }
            for r in &row.recalls {
                let _ = write!(s, ",{r}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn evaluate(images: &[ImageEval], budgets: &[usize], grid: &IoUThresholdGrid) -> Result<EvalReport> {
    if budgets.contains(&0) {
        return Err(Error::param("proposal budgets must be positive"));
    }
    let prepared = images.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut ar_at = BTreeMap::new();
    for &b in budgets {
        let r = recalls(images, &prepared, Some(b), grid);
        ar_at.insert(b, mean(&r));
        rows.push(RecallRow { budget: Some(b), recalls: r });
    }
    let all = recalls(images, &prepared, None, grid);
    let recall_at_all = mean(&all);
    rows.push(RecallRow { budget: None, recalls: all });
    let ap = mean(&grid.values().map(|t| ap_at(images, &prepared, t)));

    let mut matched_pairs = Vec::new();
    for &t in grid.values() {
        for (img, p) in images.iter().zip(&prepared) {
            for (rank, m) in greedy(&p.iou, p.order.len(), t).into_iter().enumerate() {
                if let Some((g, iou)) = m {
                    matched_pairs.push(MatchedPair {
                        image_id: img.image_id,
                        gt_id: img.gts.ids()[g],
                        proposal_id: img.proposals[p.order[rank]].id,
                        iou,
                        threshold: t,
                    });
                }
            }
        }
    }
    Ok(EvalReport {
        n_images: images.len(),
        n_gt: images.iter().map(|i| i.gts.len()).sum(),
        n_proposals: images.iter().map(|i| i.proposals.len()).sum(),
        thresholds: grid.values().to_vec(),
        ar_at,
        recall_at_all,
        ap,
        per_threshold_recall: rows,
        matched_pairs,
    })
}

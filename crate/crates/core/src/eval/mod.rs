//! Stratified cross-validation, confusion matrices and method comparison.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tfr::Method;
use crate::{seed, Error, Result};

const FOLD_TAG: u64 = 0x464F_4C44;
const SPLIT_TAG: u64 = 0x5350_4C54;

/// Seed for fold `fold` of a run with master seed `master`.
pub fn fold_seed(master: u64, fold: usize) -> u64 {
    seed::derive(master, &[FOLD_TAG, fold as u64])
}

/// Assignment of every sample to one of `k` test folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// `assignment[i]` is the fold in which sample `i` is held out.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    /// Held-out indices of `fold`, ascending.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    /// Training indices of `fold`, ascending: everything not held out.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    /// `counts[fold][group]` for an arbitrary grouping of the samples, e.g.
    /// class or load level.
    pub fn group_counts(&self, groups: &[usize]) -> Result<Vec<Vec<usize>>> {
        if groups.len() != self.assignment.len() {
            return Err(Error::invalid("one group per sample required"));
        }
        let n = groups.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0; n]; self.k];
        for (&f, &g) in self.assignment.iter().zip(groups) {
            counts[f][g] += 1;
        }
        Ok(counts)
    }
}

/// Stratified k-fold partition.
///
/// Each class is shuffled with its own seeded stream and dealt round-robin,
/// starting where the previous class stopped, so per-class counts differ by
/// at most one between folds and fold sizes stay balanced overall.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid("k must be at least 2"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for (&class, members) in &mut by_class {
        if members.len() < k {
            return Err(Error::invalid(format!(
                "class {} has {} samples, fewer than k = {}",
                class,
                members.len(),
                k
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[SPLIT_TAG, class as u64]));
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan {
        k,
        seed,
        assignment,
    })
}

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_predictions(preds: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        let mut m = Self::new(classes);
        m.add(preds, labels)?;
        Ok(m)
    }

    pub fn add(&mut self, preds: &[usize], labels: &[usize]) -> Result<()> {
        if preds.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} predictions", labels.len()),
                got: format!("{}", preds.len()),
            });
        }
        let n = self.classes();
        if let Some(bad) = preds.iter().chain(labels).find(|&&c| c >= n) {
            return Err(Error::invalid(format!("class {} outside 0..{}", bad, n)));
        }
        for (&p, &t) in preds.iter().zip(labels) {
            self.counts[t][p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.trace() as f64 / t as f64
        }
    }

    /// `None` when nothing was predicted as `class`.
    pub fn precision(&self, class: usize) -> Option<f64> {
        let col: u64 = self.counts.iter().map(|r| r[class]).sum();
        (col > 0).then(|| self.counts[class][class] as f64 / col as f64)
    }

    /// `None` when `class` has no samples.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let row: u64 = self.counts[class].iter().sum();
        (row > 0).then(|| self.counts[class][class] as f64 / row as f64)
    }
}

/// Outcome of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub test_count: usize,
    /// `None` when the fold failed.
    pub accuracy: Option<f64>,
    pub error: Option<String>,
    pub confusion: Option<ConfusionMatrix>,
}

impl FoldResult {
    /// Score predictions for the held-out samples of `fold`.
    pub fn scored(
        fold: usize,
        seed: u64,
        preds: &[usize],
        truth: &[usize],
        classes: usize,
    ) -> Result<Self> {
        let cm = ConfusionMatrix::from_predictions(preds, truth, classes)?;
        Ok(FoldResult {
            fold,
            seed,
            test_count: truth.len(),
            accuracy: Some(cm.accuracy()),
            error: None,
            confusion: Some(cm),
        })
    }

    pub fn failed(fold: usize, seed: u64, test_count: usize, err: &Error) -> Self {
        FoldResult {
            fold,
            seed,
            test_count,
            accuracy: None,
            error: Some(format!("{}: {}", err.kind(), err)),
            confusion: None,
        }
    }
}

/// Cross-validation summary for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    /// Mean over successful folds.
    pub mean_accuracy: f64,
    /// Population standard deviation over successful folds.
    pub std_accuracy: f64,
    pub failed_folds: usize,
    /// Pooled over successful folds.
    pub confusion: ConfusionMatrix,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
}

impl EvalReport {
    /// Aggregate per-fold results; the order of `folds` does not matter.
    pub fn assemble(
        method: Method,
        plan: &FoldPlan,
        classes: usize,
        mut folds: Vec<FoldResult>,
    ) -> Result<Self> {
        folds.sort_by_key(|f| f.fold);
        if folds.len() != plan.k || folds.iter().enumerate().any(|(i, f)| f.fold != i) {
            return Err(Error::invalid("need exactly one result per fold"));
        }
        let mut confusion = ConfusionMatrix::new(classes);
        let mut accs = Vec::new();
        for f in &folds {
            if let (Some(a), Some(cm)) = (f.accuracy, &f.confusion) {
                if cm.classes() != classes {
                    return Err(Error::invalid("fold confusion matrix has the wrong size"));
                }
                confusion.merge(cm);
                accs.push(a);
            }
        }
        let (mean, std) = mean_std(&accs);
        Ok(EvalReport {
            method,
            k: plan.k,
            seed: plan.seed,
            failed_folds: folds.len() - accs.len(),
            folds,
            mean_accuracy: mean,
            std_accuracy: std,
            precision: (0..classes).map(|c| confusion.precision(c)).collect(),
            recall: (0..classes).map(|c| confusion.recall(c)).collect(),
            confusion,
        })
    }

    pub fn fold_accuracies(&self) -> Vec<f64> {
        self.folds.iter().filter_map(|f| f.accuracy).collect()
    }
}

/// Mean and population standard deviation; zeros for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Run every fold sequentially.
///
/// `fit_predict(fold, seed, train, test)` must train a fresh model on
/// `train` only and return one predicted class per `test` index. An error
/// marks that fold failed; the remaining folds still run.
pub fn cross_validate<F>(
    method: Method,
    labels: &[usize],
    classes: usize,
    plan: &FoldPlan,
    mut fit_predict: F,
) -> Result<EvalReport>
where
    F: FnMut(usize, u64, &[usize], &[usize]) -> Result<Vec<usize>>,
{
    if labels.len() != plan.assignment.len() {
        return Err(Error::invalid(
            "plan and labels cover different sample counts",
        ));
    }
    let folds = (0..plan.k)
        .map(|f| run_fold(labels, classes, plan, f, &mut fit_predict))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::assemble(method, plan, classes, folds)
}

/// One fold of [`cross_validate`]; usable on its own to run folds in
/// parallel. Only caller mistakes (bad prediction count or class) are
/// returned as `Err`; trainer failures become a failed [`FoldResult`].
pub fn run_fold<F>(
    labels: &[usize],
    classes: usize,
    plan: &FoldPlan,
    fold: usize,
    fit_predict: &mut F,
) -> Result<FoldResult>
where
    F: FnMut(usize, u64, &[usize], &[usize]) -> Result<Vec<usize>>,
{
    let seed = fold_seed(plan.seed, fold);
    let train = plan.train_indices(fold);
    let test = plan.test_indices(fold);
    let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    match fit_predict(fold, seed, &train, &test) {
        Ok(preds) => FoldResult::scored(fold, seed, &preds, &truth, classes),
        Err(e) => Ok(FoldResult::failed(fold, seed, test.len(), &e)),
    }
}

/// Published accuracies (percent) on the real motor dataset, for
/// annotation only.
pub const PUBLISHED_ACCURACY_PCT: [(Method, f64); 5] = [
    (Method::StftO, 97.65),
    (Method::StftR, 96.32),
    (Method::Stft, 96.08),
    (Method::StftOR, 96.03),
    (Method::StftS, 88.27),
];

pub const PUBLISHED_NOTE: &str = "published, real data";

pub fn published_accuracy_pct(m: Method) -> Option<f64> {
    PUBLISHED_ACCURACY_PCT
        .iter()
        .find(|(k, _)| *k == m)
        .map(|&(_, v)| v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub folds: usize,
    pub failed_folds: usize,
    /// Reference value, percent; see [`ComparisonTable::reference_note`].
    pub published_accuracy_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub reference_note: String,
}

/// Rows sorted by measured mean accuracy, descending; ties by method code.
pub fn compare_methods(reports: &[EvalReport]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::invalid("nothing to compare"));
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            method: r.method,
            mean_accuracy: r.mean_accuracy,
            std_accuracy: r.std_accuracy,
            folds: r.k,
            failed_folds: r.failed_folds,
            published_accuracy_pct: published_accuracy_pct(r.method),
        })
        .collect();
    rows.sort_by(|a, b| {
        b.mean_accuracy
            .total_cmp(&a.mean_accuracy)
            .then_with(|| a.method.code().cmp(b.method.code()))
    });
    Ok(ComparisonTable {
        rows,
        reference_note: PUBLISHED_NOTE.into(),
    })
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "method,mean_accuracy,std_accuracy,folds,failed_folds,published_accuracy_pct ({})\n",
            self.reference_note
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.method.code(),
                r.mean_accuracy,
                r.std_accuracy,
                r.folds,
                r.failed_folds,
                r.published_accuracy_pct
                    .map(|v| format!("{:.2}", v))
                    .unwrap_or_default()
            );
        }
        s
    }

    /// Fixed-width text table.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<8} {:>16} {:>7} {:>22}\n",
            "method", "accuracy (%)", "failed", self.reference_note
        );
        for r in &self.rows {
            let acc = format!(
                "{:.2} ± {:.2}",
                100.0 * r.mean_accuracy,
                100.0 * r.std_accuracy
            );
            let publ = r
                .published_accuracy_pct
                .map(|v| format!("{:.2}", v))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<8} {:>16} {:>7} {:>22}",
                r.method.code(),
                acc,
                r.failed_folds,
                publ
            );
        }
        s
    }
}

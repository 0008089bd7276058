//! Classification metrics over vote vectors.

use super::VoteVector;

/// Macro-averaged F1.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroF {
    /// Unweighted mean of per-class F1 over classes present in the labels.
    pub score: f64,
    /// Per-class F1; `None` for classes absent from the labels.
    pub per_class: Vec<Option<f64>>,
    pub warnings: Vec<String>,
}

/// `confusion[true][predicted]`, prediction = argmax of the votes.
pub fn confusion_matrix(votes: &[VoteVector], y: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0usize; k]; k];
    for (v, &t) in votes.iter().zip(y) {
        m[t][v.argmax()] += 1;
    }
    m
}

/// Macro F-score of argmax predictions (ties to the lowest class index).
/// Classes that never occur in `y` are skipped with a warning.
pub fn macro_f_score(votes: &[VoteVector], y: &[usize], k: usize) -> MacroF {
    let m = confusion_matrix(votes, y, k);
    let mut per_class = Vec::with_capacity(k);
    let mut warnings = Vec::new();
    for (c, row) in m.iter().enumerate() {
        let support: usize = row.iter().sum();
        if support == 0 {
            warnings.push(format!("class {c} absent from labels; skipped"));
            per_class.push(None);
            continue;
        }
        let tp = row[c] as f64;
        let fp = (0..k).filter(|&r| r != c).map(|r| m[r][c]).sum::<usize>() as f64;
        let fn_ = (support as f64) - tp;
        per_class.push(Some(2.0 * tp / (2.0 * tp + fp + fn_)));
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let score = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    MacroF {
        score,
        per_class,
        warnings,
    }
}

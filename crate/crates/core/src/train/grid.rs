use super::{train, TrainConfig, TrainError, TrainOutcome};
use crate::models::ModelConfig;
use crate::pipeline::SplitAssignment;

/// Explicit value lists; every combination is trained once.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub l2: Vec<f64>,
    pub dropout: Vec<f64>,
}

impl Default for GridSpec {
    /// `{0.0001, 0.05, 0.1} × {0.10, 0.15, …, 0.50}`.
    fn default() -> Self {
        GridSpec {
            l2: vec![0.0001, 0.05, 0.1],
            dropout: (2..=10).map(|i| (i * 5) as f64 / 100.0).collect(),
        }
    }
}

impl GridSpec {
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.l2
            .iter()
            .flat_map(|&l| self.dropout.iter().map(move |&d| (l, d)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridCell {
    pub l2: f64,
    pub dropout: f64,
    pub val_acc: f64,
    pub val_loss: f64,
    pub selected_epoch: usize,
}

pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut s = String::from("l2,dropout,val_acc,val_loss,selected_epoch\n");
    for c in cells {
        s.push_str(&format!("{},{},{},{},{}\n", c.l2, c.dropout, c.val_acc, c.val_loss, c.selected_epoch));
    }
    s
}

/// Evaluate `run(l2, dropout) → (score, payload)` on every cell and return
/// the index of the best cell with all results. Highest score wins; ties go
/// to the smaller l2, then the smaller dropout.
pub fn grid_search_by<C, F>(grid: &GridSpec, mut run: F) -> Result<(usize, Vec<(f64, f64, f64, C)>), TrainError>
where
    F: FnMut(f64, f64) -> Result<(f64, C), TrainError>,
{
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let mut results: Vec<(f64, f64, f64, C)> = Vec::with_capacity(cells.len());
    let mut best = 0;
    for (l2, dropout) in cells {
        let (score, payload) = run(l2, dropout)?;
        log::info!("grid cell l2={l2} dropout={dropout}: {score:.4}");
        if !results.is_empty() && beats((score, l2, dropout), &results[best]) {
            best = results.len();
        }
        results.push((l2, dropout, score, payload));
    }
    Ok((best, results))
}

fn beats<C>((score, l2, dropout): (f64, f64, f64), b: &(f64, f64, f64, C)) -> bool {
    score > b.2 || (score == b.2 && (l2 < b.0 || (l2 == b.0 && dropout < b.1)))
}

pub struct GridOutcome {
    pub l2: f64,
    pub dropout: f64,
    pub best: TrainOutcome,
    pub table: Vec<GridCell>,
}

/// Train one model per (l2, dropout) combination with the same seed and
/// keep the one with the best selected validation accuracy.
pub fn grid_search(
    model: &ModelConfig,
    split: &SplitAssignment,
    cfg: &TrainConfig,
    grid: &GridSpec,
) -> Result<GridOutcome, TrainError> {
    // only the running best outcome is kept in memory
    let mut best: Option<(f64, f64, f64, TrainOutcome)> = None;
    let (winner, results) = grid_search_by(grid, |l2, dropout| {
        let out = train(&model.with_regularization(l2, dropout), split, cfg)?;
        let sel = *out.selected();
        if best.as_ref().is_none_or(|b| beats((sel.val_acc, l2, dropout), b)) {
            best = Some((l2, dropout, sel.val_acc, out));
        }
        Ok((sel.val_acc, (sel.val_loss, sel.epoch)))
    })?;
    let (_, _, _, outcome) = best.expect("non-empty grid");
    let table = results
        .iter()
        .map(|&(l2, dropout, val_acc, (val_loss, selected_epoch))| GridCell {
            l2,
            dropout,
            val_acc,
            val_loss,
            selected_epoch,
        })
        .collect();
    Ok(GridOutcome {
        l2: results[winner].0,
        dropout: results[winner].1,
        best: outcome,
        table,
    })
}

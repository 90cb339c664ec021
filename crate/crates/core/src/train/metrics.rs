use crate::pipeline::ClassLabel;

/// `K×K` counts, rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        assert!(counts.iter().all(|r| r.len() == counts.len()), "confusion matrix must be square");
        ConfusionMatrix { counts }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub matrix: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub total: u64,
    pub accuracy: f64,
    /// Support-weighted mean of per-class F1.
    pub weighted_f1: f64,
}

impl MetricsReport {
    /// Scores of `cm`; empty precision or recall denominators count as 0.
    pub fn from_matrix(cm: &ConfusionMatrix) -> Self {
        let k = cm.classes();
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = cm.counts[c][c];
                let precision = ratio(tp, cm.predicted(c));
                let recall = ratio(tp, cm.support(c));
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                let class = match ClassLabel::from_id(c as u8) {
                    Some(l) if k == crate::pipeline::NUM_CLASSES => l.name().to_string(),
                    _ => format!("class_{c}"),
                };
                ClassMetrics {
                    class,
                    precision,
                    recall,
                    f1,
                    support: cm.support(c),
                }
            })
            .collect();
        let total = cm.total();
        let weighted_f1 = if total == 0 {
            0.0
        } else {
            per_class.iter().map(|m| m.support as f64 * m.f1).sum::<f64>() / total as f64
        };
        MetricsReport {
            matrix: cm.clone(),
            per_class,
            total,
            accuracy: cm.accuracy(),
            weighted_f1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_two_class_matrix() {
        let r = MetricsReport::from_matrix(&ConfusionMatrix::from_counts(vec![vec![8, 2], vec![1, 9]]));
        assert_eq!(r.accuracy, 0.85);
        assert!((r.per_class[0].f1 - 0.8421).abs() < 5e-5);
        assert!((r.per_class[1].f1 - 0.8571).abs() < 5e-5);
        assert!((r.weighted_f1 - 0.8496).abs() < 5e-5);
    }

    #[test]
    fn perfect_and_partial_recall() {
        let mut cm = ConfusionMatrix::new(3);
        for c in 0..3 {
            for _ in 0..4 {
                cm.add(c, c);
            }
        }
        let r = MetricsReport::from_matrix(&cm);
        assert_eq!((r.accuracy, r.weighted_f1), (1.0, 1.0));
        let mut cm = ConfusionMatrix::new(8);
        (0..98).for_each(|_| cm.add(2, 2));
        (0..31).for_each(|_| cm.add(2, 5));
        let r = MetricsReport::from_matrix(&cm);
        assert!((r.per_class[2].recall - 0.760).abs() < 5e-4);
        assert_eq!(r.per_class[0].f1, 0.0);
        assert_eq!(r.per_class[5].precision, 0.0);
    }

    proptest! {
        #[test]
        fn total_is_example_count(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..200)) {
            let mut cm = ConfusionMatrix::new(5);
            pairs.iter().for_each(|&(t, p)| cm.add(t, p));
            prop_assert_eq!(cm.total(), pairs.len() as u64);
            let r = MetricsReport::from_matrix(&cm);
            prop_assert!((0.0..=1.0).contains(&r.weighted_f1));
            let hits = pairs.iter().filter(|(t, p)| t == p).count();
            prop_assert_eq!(r.accuracy, hits as f64 / pairs.len() as f64);
        }
    }
}

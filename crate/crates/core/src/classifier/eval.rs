use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ClassifierError, Example, MlpModel};
use crate::types::LabelKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub correct: usize,
    pub total: usize,
    /// Percentage, `None` when the class has no test examples.
    pub accuracy: Option<f64>,
}

/// Per-class counts, overall accuracy and the confusion matrix
/// (rows: true class, columns: predicted class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: Option<LabelKind>,
    pub per_class: Vec<ClassScore>,
    pub overall_correct: usize,
    pub overall_total: usize,
    pub overall_accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_confusion(
        kind: Option<LabelKind>,
        labels: Vec<String>,
        confusion: Vec<Vec<usize>>,
    ) -> Result<Self, ClassifierError> {
        let c = labels.len();
        if confusion.len() != c || confusion.iter().any(|row| row.len() != c) {
            return Err(ClassifierError::Shape("confusion matrix must be CxC".into()));
        }
        let per_class: Vec<ClassScore> = labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| {
                let total: usize = confusion[i].iter().sum();
                let correct = confusion[i][i];
                ClassScore {
                    label,
                    correct,
                    total,
                    accuracy: (total > 0).then(|| 100.0 * correct as f64 / total as f64),
                }
            })
            .collect();
        let overall_correct: usize = per_class.iter().map(|s| s.correct).sum();
        let overall_total: usize = per_class.iter().map(|s| s.total).sum();
        if overall_total == 0 {
            return Err(ClassifierError::EmptyTestSet);
        }
        Ok(EvalReport {
            kind,
            per_class,
            overall_correct,
            overall_total,
            overall_accuracy: 100.0 * overall_correct as f64 / overall_total as f64,
            confusion,
        })
    }

    /// Builds a report whose confusion matrix is diagonal apart from the
    /// misses, which are charged to the next class.
    pub fn from_counts(
        kind: Option<LabelKind>,
        rows: &[(&str, usize, usize)],
    ) -> Result<Self, ClassifierError> {
        let c = rows.len();
        let mut confusion = vec![vec![0; c]; c];
        for (i, &(_, correct, total)) in rows.iter().enumerate() {
            if correct > total {
                return Err(ClassifierError::Shape(format!("{correct} correct of {total}")));
            }
            confusion[i][i] = correct;
            if total > correct {
                if c < 2 {
                    return Err(ClassifierError::Shape("misses need a second class".into()));
                }
                confusion[i][(i + 1) % c] += total - correct;
            }
        }
        let labels = rows.iter().map(|r| r.0.to_string()).collect();
        Self::from_confusion(kind, labels, confusion)
    }

    /// Re-derives the summary fields from the confusion matrix and fails if
    /// a stored report disagrees with them.
    pub fn check_consistency(&self) -> Result<(), ClassifierError> {
        let labels = self.per_class.iter().map(|s| s.label.clone()).collect();
        let rebuilt = Self::from_confusion(self.kind, labels, self.confusion.clone())?;
        let same = rebuilt.per_class.iter().zip(&self.per_class).all(|(a, b)| {
            a.correct == b.correct && a.total == b.total && a.label == b.label
        }) && rebuilt.overall_correct == self.overall_correct
            && rebuilt.overall_total == self.overall_total;
        if same {
            Ok(())
        } else {
            Err(ClassifierError::Shape("report totals disagree with confusion matrix".into()))
        }
    }

    /// Plain-text table: one row per class with test examples, then the
    /// overall row. Columns are separated by three spaces.
    pub fn render_table(&self) -> String {
        let header_label = match self.kind {
            Some(LabelKind::Activity) => "Activity",
            Some(LabelKind::Gesture) => "Gesture",
            None => "Class",
        };
        let rows: Vec<(String, String, String)> = self
            .per_class
            .iter()
            .filter(|s| s.total > 0)
            .map(|s| (s.label.clone(), counts(s.correct, s.total), percent(s.correct, s.total)))
            .chain(std::iter::once((
                "Overall".to_string(),
                counts(self.overall_correct, self.overall_total),
                percent(self.overall_correct, self.overall_total),
            )))
            .collect();
        let header = (header_label.to_string(), "# Correct / # Total".to_string(), "Accuracy (%)".to_string());
        let w0 = rows.iter().chain([&header]).map(|r| r.0.len()).max().unwrap_or(0);
        let w1 = rows.iter().chain([&header]).map(|r| r.1.len()).max().unwrap_or(0);
        let w2 = rows.iter().chain([&header]).map(|r| r.2.len()).max().unwrap_or(0);

        let mut out = String::new();
        let mut line = |a: &str, b: &str, c: &str| {
            let _ = writeln!(out, "{a:<w0$}   {b:>w1$}   {c:>w2$}");
        };
        line(&header.0, &header.1, &header.2);
        for (a, b, c) in &rows {
            line(a, b, c);
        }
        out
    }
}

fn counts(correct: usize, total: usize) -> String {
    format!("{correct} / {total}")
}

/// One decimal place; a perfect score prints as `100`.
pub fn percent(correct: usize, total: usize) -> String {
    if correct == total {
        "100".to_string()
    } else {
        format!("{:.1}", 100.0 * correct as f64 / total as f64)
    }
}

pub fn evaluate(model: &MlpModel, test: &[Example]) -> Result<EvalReport, ClassifierError> {
    if test.is_empty() {
        return Err(ClassifierError::EmptyTestSet);
    }
    let c = model.class_count();
    let mut confusion = vec![vec![0usize; c]; c];
    for e in test {
        if e.class >= c {
            return Err(ClassifierError::InvalidClass { class: e.class, classes: c });
        }
        let (pred, _) = model.predict(&e.features)?;
        confusion[e.class][pred] += 1;
    }
    let labels = match model.kind {
        Some(kind) if kind.class_count() == c => {
            kind.class_names().into_iter().map(str::to_string).collect()
        }
        _ => (0..c).map(|i| format!("class{i}")).collect(),
    };
    EvalReport::from_confusion(model.kind, labels, confusion)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_percentages() {
        assert_eq!(percent(154, 155), "99.4");
        assert_eq!(percent(204, 204), "100");
        assert_eq!(percent(794, 806), "98.5");
        assert_eq!(percent(169, 181), "93.4");
        assert_eq!(percent(345, 350), "98.6");
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let mut model = MlpModel::zeros([2, 2, 2]);
        model.b2 = vec![1.0, 0.0];
        let test: Vec<Example> = (0..10)
            .map(|i| Example { features: vec![i as f64, 0.0], class: i % 2 })
            .collect();
        let r = evaluate(&model, &test).unwrap();
        assert_eq!(r.overall_accuracy, 50.0);
        assert_eq!(r.confusion, vec![vec![5, 0], vec![5, 0]]);
        r.check_consistency().unwrap();
        let trace: usize = (0..2).map(|i| r.confusion[i][i]).sum();
        assert_eq!(trace, r.overall_correct);
    }

    #[test]
    fn zero_initialized_model_ties_to_class_zero() {
        let model = MlpModel::zeros([1, 1, 3]);
        let test = vec![Example { features: vec![1.0], class: 2 }];
        let r = evaluate(&model, &test).unwrap();
        assert_eq!(r.confusion[2], vec![1, 0, 0]);
    }

    #[test]
    fn empty_test_set_rejected() {
        let model = MlpModel::zeros([1, 1, 2]);
        assert!(matches!(evaluate(&model, &[]), Err(ClassifierError::EmptyTestSet)));
    }

    #[test]
    fn tampered_report_fails_consistency() {
        let mut r = EvalReport::from_counts(None, &[("a", 3, 4), ("b", 2, 2)]).unwrap();
        r.check_consistency().unwrap();
        r.per_class[0].correct = 4;
        assert!(r.check_consistency().is_err());
    }

    #[test]
    fn rendering_layout() {
        let r = EvalReport::from_counts(
            Some(LabelKind::Activity),
            &[("Walk", 794, 806), ("Sit", 0, 0)],
        )
        .unwrap();
        let table = r.render_table();
        let lines: Vec<_> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "Activity   # Correct / # Total   Accuracy (%)");
        assert_eq!(lines[1], "Walk                 794 / 806           98.5");
    }
}

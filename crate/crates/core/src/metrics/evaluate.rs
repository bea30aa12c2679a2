use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{
    au_average_f1, au_total_accuracy, ccc, confusion_matrix, macro_f1, score_au, score_expr, score_va, total_accuracy,
    AuMetrics, ExprMetrics, MetricsReport, VaMetrics,
};
use crate::data::{load_image, load_manifest, DatasetManifest, Provenance, NUM_EXPRESSIONS};
use crate::error::{Error, Result};
use crate::model::MultiTaskModel;
use crate::Task;

/// One line of a prediction file.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub valence: f64,
    pub arousal: f64,
    pub expr_class: usize,
    pub au_probs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    /// AU probability at or above which a unit counts as active.
    pub au_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { au_threshold: 0.5 }
    }
}

fn prediction_header(k: usize) -> Vec<String> {
    ["id", "valence", "arousal", "expr"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..k).map(|j| format!("au_{j}")))
        .collect()
}

pub fn write_predictions<W: Write>(rows: &[PredictionRow], writer: W) -> Result<()> {
    let k = rows.first().map_or(0, |r| r.au_probs.len());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(prediction_header(k))?;
    for r in rows {
        if r.au_probs.len() != k {
            return Err(Error::Validation(format!("prediction `{}` has {} AU values, expected {k}", r.id, r.au_probs.len())));
        }
        let mut cells = vec![r.id.clone(), r.valence.to_string(), r.arousal.to_string(), r.expr_class.to_string()];
        cells.extend(r.au_probs.iter().map(f64::to_string));
        w.write_record(&cells)?;
    }
    w.flush().map_err(|e| Error::io("<predictions>", e))?;
    Ok(())
}

pub fn read_predictions<R: Read>(reader: R, name: &str) -> Result<Vec<PredictionRow>> {
    let parse_err = |row: usize, message: String| Error::Parse {
        path: name.to_string(),
        row,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let k = header.len().saturating_sub(4);
    if header.iter().collect::<Vec<_>>() != prediction_header(k) {
        return Err(parse_err(1, format!("header must be {}", prediction_header(k).join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(parse_err(row, format!("expected {} columns, found {}", header.len(), rec.len())));
        }
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(row, format!("`{}` is not a number", &rec[j])))
        };
        let expr_class = rec[3]
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(row, format!("`{}` is not a class index", &rec[3])))?;
        if expr_class >= NUM_EXPRESSIONS {
            return Err(parse_err(row, format!("class {expr_class} outside [0, {NUM_EXPRESSIONS})")));
        }
        out.push(PredictionRow {
            id: rec[0].to_string(),
            valence: num(1)?,
            arousal: num(2)?,
            expr_class,
            au_probs: (0..k).map(|j| num(4 + j)).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

fn binarize(values: &[f64], threshold: f64) -> Vec<bool> {
    values.iter().map(|&v| v >= threshold).collect()
}

/// Scores `preds` against the ground-truth labels of `labels`.
///
/// Every labelled id must have exactly one prediction and vice versa.
/// Each task is scored only over records whose label for that task is
/// ground truth; teacher-filled labels are ignored. A task without enough
/// samples (two for VA, one otherwise) is reported as absent.
pub fn evaluate(preds: &[PredictionRow], labels: &DatasetManifest, opts: &EvalOptions) -> Result<MetricsReport> {
    let mut by_id: HashMap<&str, &PredictionRow> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::Alignment(format!("duplicate prediction id `{}`", p.id)));
        }
    }
    let label_ids: HashSet<&str> = labels.records.iter().map(|r| r.id.as_str()).collect();
    if let Some(p) = preds.iter().find(|p| !label_ids.contains(p.id.as_str())) {
        return Err(Error::Alignment(format!("prediction `{}` has no label row", p.id)));
    }

    let (mut v_pred, mut v_true, mut a_pred, mut a_true) = (vec![], vec![], vec![], vec![]);
    let (mut e_pred, mut e_true) = (vec![], vec![]);
    let (mut au_pred, mut au_true) = (vec![], vec![]);
    for r in &labels.records {
        let p = by_id
            .get(r.id.as_str())
            .ok_or_else(|| Error::Alignment(format!("label `{}` has no prediction", r.id)))?;
        let gt = |t: Task| r.provenance(t) == Provenance::GroundTruth;
        if let (true, Some([v, a])) = (gt(Task::Va), r.targets.va) {
            v_pred.push(p.valence);
            a_pred.push(p.arousal);
            v_true.push(v);
            a_true.push(a);
        }
        if let (true, Some(e)) = (gt(Task::Expr), &r.targets.expr) {
            e_pred.push(p.expr_class);
            e_true.push(e.class());
        }
        if let (true, Some(au)) = (gt(Task::Au), &r.targets.au) {
            if p.au_probs.len() != au.len() {
                return Err(Error::Alignment(format!(
                    "prediction `{}` has {} AU values, labels have {}",
                    r.id,
                    p.au_probs.len(),
                    au.len()
                )));
            }
            au_pred.push(binarize(&p.au_probs, opts.au_threshold));
            au_true.push(binarize(au, 0.5));
        }
    }

    let va = if v_true.len() >= 2 {
        let cv = ccc(&v_pred, &v_true)?;
        let ca = ccc(&a_pred, &a_true)?;
        Some(VaMetrics {
            ccc_v: cv.value,
            ccc_a: ca.value,
            s_va: score_va(cv.value, ca.value),
            degenerate: cv.degenerate || ca.degenerate,
            count: v_true.len(),
        })
    } else {
        None
    };
    let expr = if e_true.is_empty() {
        None
    } else {
        let f1 = macro_f1(&confusion_matrix(&e_pred, &e_true, NUM_EXPRESSIONS)?)?;
        let tacc = total_accuracy(&e_pred, &e_true)?;
        Some(ExprMetrics {
            f1,
            tacc,
            s_expr: score_expr(f1, tacc),
            count: e_true.len(),
        })
    };
    let au = if au_true.is_empty() {
        None
    } else {
        let af1 = au_average_f1(&au_pred, &au_true)?;
        let tacc = au_total_accuracy(&au_pred, &au_true)?;
        Some(AuMetrics {
            af1,
            tacc,
            s_au: score_au(af1, tacc),
            count: au_true.len(),
        })
    };
    Ok(MetricsReport { va, expr, au })
}

pub fn evaluate_files(predictions: impl AsRef<Path>, labels: impl AsRef<Path>, opts: &EvalOptions) -> Result<MetricsReport> {
    let path = predictions.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let preds = read_predictions(f, &path.display().to_string())?;
    let labels = load_manifest(labels)?;
    evaluate(&preds, &labels, opts)
}

/// Runs `model` over every record of `manifest`, in manifest order.
pub fn predict_manifest(model: &MultiTaskModel, manifest: &DatasetManifest) -> Result<Vec<PredictionRow>> {
    let size = model.config().input_size;
    manifest
        .records
        .iter()
        .map(|r| {
            let img = load_image(manifest.resolve_image(r), size)?;
            let p = model.forward(&img)?;
            Ok(PredictionRow {
                id: r.id.clone(),
                valence: p.va[0],
                arousal: p.va[1],
                expr_class: p.expr_class(),
                au_probs: p.au_probs(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SampleRecord, Source};
    use crate::losses::{ExprTarget, TargetSet};

    fn labels() -> DatasetManifest {
        let records = (0..6)
            .map(|i| {
                let t = TargetSet {
                    va: Some([i as f64 * 0.1, -(i as f64) * 0.05]),
                    expr: Some(ExprTarget::Class(i % 3)),
                    au: Some(vec![(i % 2) as f64, 1.0]),
                };
                SampleRecord::ground_truth(format!("s{i}"), "x.png", Source::Synthetic, t)
            })
            .collect();
        DatasetManifest::new(records, 2)
    }

    fn perfect(m: &DatasetManifest) -> Vec<PredictionRow> {
        m.records
            .iter()
            .map(|r| PredictionRow {
                id: r.id.clone(),
                valence: r.targets.va.unwrap()[0],
                arousal: r.targets.va.unwrap()[1],
                expr_class: r.targets.expr.as_ref().unwrap().class(),
                au_probs: r.targets.au.clone().unwrap(),
            })
            .collect()
    }

    #[test]
    fn perfect_predictions_score_maximal() {
        let m = labels();
        let r = evaluate(&perfect(&m), &m, &EvalOptions::default()).unwrap();
        assert_eq!(r.va.as_ref().unwrap().s_va, 1.0);
        assert_eq!(r.expr.as_ref().unwrap().s_expr, 1.0);
        assert_eq!(r.au.as_ref().unwrap().s_au, 1.0);
        assert!(r.to_key_value().contains("mean_score=1"));
    }

    #[test]
    fn missing_or_extra_ids_are_alignment_errors() {
        let m = labels();
        let mut p = perfect(&m);
        p.pop();
        assert!(matches!(evaluate(&p, &m, &EvalOptions::default()), Err(Error::Alignment(_))));
        let mut p = perfect(&m);
        p[0].id = "nope".into();
        assert!(matches!(evaluate(&p, &m, &EvalOptions::default()), Err(Error::Alignment(_))));
    }

    #[test]
    fn task_without_labels_is_absent() {
        let mut m = labels();
        for r in &mut m.records {
            r.targets.clear(Task::Au);
            r.provenance[Task::Au.index()] = Provenance::Absent;
        }
        let p = perfect(&labels());
        let r = evaluate(&p, &m, &EvalOptions::default()).unwrap();
        assert!(r.au.is_none());
        assert!(r.to_key_value().contains("au=absent"));
        assert!(r.expr.is_some());
    }

    #[test]
    fn teacher_labels_are_not_scored() {
        let mut m = labels();
        m.records[0].provenance[Task::Expr.index()] = Provenance::Teacher;
        let mut p = perfect(&m);
        p[0].expr_class = 2;
        let r = evaluate(&p, &m, &EvalOptions::default()).unwrap();
        assert_eq!(r.expr.unwrap().count, 5);
    }

    #[test]
    fn prediction_file_round_trip() {
        let p = perfect(&labels());
        let mut buf = Vec::new();
        write_predictions(&p, &mut buf).unwrap();
        assert_eq!(read_predictions(&buf[..], "mem").unwrap(), p);
        let bad = b"id,valence,arousal,expr,au_0\na,0.1,0.2,9,0.5\n";
        assert!(matches!(read_predictions(&bad[..], "mem"), Err(Error::Parse { row: 2, .. })));
    }
}

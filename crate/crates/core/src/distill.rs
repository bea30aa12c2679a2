//! Teacher training, missing-label completion and the unified multi-task set.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::manifest::{manifest_header, parse_header, parse_row, row_cells};
use crate::data::{load_image, write_manifest, DatasetManifest, Provenance, SampleRecord};
use crate::error::{Error, Result};
use crate::losses::{ExprTarget, LossWeights, TargetSet};
use crate::model::{checkpoint, ModelConfig, MultiTaskModel};
use crate::tensor::Tensor;
use crate::trainer::{fit_samples, load_samples, FitOutcome, TrainConfig, ValidationSet};
use crate::Task;

/// SHA-256 of the manifest's canonical text form.
pub fn manifest_digest(manifest: &DatasetManifest) -> Result<String> {
    let mut buf = Vec::new();
    write_manifest(manifest, &mut buf)?;
    Ok(hex::encode(Sha256::digest(&buf)))
}

/// A single-task model used to fill one task's missing labels.
#[derive(Clone, Debug)]
pub struct TeacherModel {
    pub task: Task,
    pub model: MultiTaskModel,
    pub training_manifest_digest: String,
}

#[derive(Serialize, Deserialize)]
struct TeacherMeta {
    task: Task,
    training_manifest_digest: String,
    checkpoint_digest: String,
}

impl TeacherModel {
    /// Stable identity recorded next to every label the teacher produces.
    pub fn id(&self) -> String {
        format!("{}-{}", self.task, &checkpoint::digest(&self.model)[..12])
    }

    /// Writes `teacher.ckpt` and `teacher.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(&self.model, dir.join("teacher.ckpt"))?;
        let meta = TeacherMeta {
            task: self.task,
            training_manifest_digest: self.training_manifest_digest.clone(),
            checkpoint_digest: checkpoint::digest(&self.model),
        };
        let path = dir.join("teacher.json");
        let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("teacher.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: TeacherMeta =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let model = checkpoint::load(dir.join("teacher.ckpt"))?;
        if checkpoint::digest(&model) != meta.checkpoint_digest {
            return Err(Error::Checkpoint(format!("{}: checkpoint digest does not match teacher.json", dir.display())));
        }
        Ok(Self {
            task: meta.task,
            model,
            training_manifest_digest: meta.training_manifest_digest,
        })
    }
}

/// Trains a fresh model on the records labelled for `task`, with only that
/// task's loss term active.
pub fn train_teacher(
    task: Task,
    manifest: &DatasetManifest,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    val: Option<&DatasetManifest>,
) -> Result<(TeacherModel, FitOutcome)> {
    let subset = manifest.with_task(task);
    if subset.is_empty() {
        return Err(Error::Validation(format!("no {task} labels to train a teacher on")));
    }
    let mut model = MultiTaskModel::new(model_config.clone())?;
    let size = model_config.input_size;
    let samples = load_samples(&subset, size)?;
    let val = val.map(|m| ValidationSet::load(m, size).map(|v| v.restrict(&[task]))).transpose()?;
    let outcome = fit_samples(&mut model, &samples, &LossWeights::single(task), cfg, val.as_ref())?;
    let teacher = TeacherModel {
        task,
        model,
        training_manifest_digest: manifest_digest(&subset)?,
    };
    Ok((teacher, outcome))
}

/// One teacher-filled label.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletedEntry {
    pub id: String,
    pub task: Task,
    /// Exactly one task present.
    pub targets: TargetSet,
    pub teacher_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DroppedSample {
    pub id: String,
    pub reason: String,
}

/// Teacher outputs for every missing (sample, task) pair, in manifest order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompletedLabels {
    pub entries: Vec<CompletedEntry>,
    /// Samples whose image could not be read; they are left out of D_multi.
    pub dropped: Vec<DroppedSample>,
    pub num_aus: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CompletionOptions {
    /// Store argmax classes and 0/1 AU decisions instead of soft outputs.
    pub hard: bool,
}

fn teacher_for(teachers: &[TeacherModel], task: Task) -> Result<&TeacherModel> {
    let mut found = teachers.iter().filter(|t| t.task == task);
    match (found.next(), found.next()) {
        (Some(t), None) => Ok(t),
        (None, _) => Err(Error::Validation(format!("no {task} teacher supplied"))),
        (Some(_), Some(_)) => Err(Error::Validation(format!("more than one {task} teacher supplied"))),
    }
}

fn teacher_target(teacher: &TeacherModel, image: &Tensor, opts: CompletionOptions) -> Result<TargetSet> {
    let pred = teacher.model.forward(image)?;
    let mut t = TargetSet::default();
    match teacher.task {
        Task::Va => t.va = Some(pred.va),
        Task::Expr => {
            t.expr = Some(if opts.hard {
                ExprTarget::Class(pred.expr_class())
            } else {
                ExprTarget::Distribution(pred.expr_probs())
            })
        }
        Task::Au => {
            let p = pred.au_probs();
            t.au = Some(if opts.hard {
                p.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect()
            } else {
                p
            })
        }
    }
    Ok(t)
}

/// Runs each task's teacher on every sample lacking that task's label.
/// Ground-truth labels are never touched. Unreadable images drop the
/// sample with a logged reason instead of aborting.
pub fn complete_labels(
    teachers: &[TeacherModel],
    manifest: &DatasetManifest,
    opts: CompletionOptions,
) -> Result<CompletedLabels> {
    let by_task = [
        teacher_for(teachers, Task::Va)?,
        teacher_for(teachers, Task::Expr)?,
        teacher_for(teachers, Task::Au)?,
    ];
    let au_teacher = by_task[Task::Au.index()];
    if au_teacher.model.config().num_aus != manifest.num_aus {
        return Err(Error::Validation(format!(
            "AU teacher predicts {} units, manifest has {}",
            au_teacher.model.config().num_aus,
            manifest.num_aus
        )));
    }
    let ids: Vec<String> = by_task.iter().map(|t| t.id()).collect();

    let per_record: Vec<std::result::Result<Vec<CompletedEntry>, DroppedSample>> = manifest
        .records
        .par_iter()
        .map(|r| {
            let missing: Vec<Task> = Task::ALL.into_iter().filter(|&t| !r.targets.has(t)).collect();
            let mut images: HashMap<(usize, usize), Tensor> = HashMap::new();
            let mut out = Vec::with_capacity(missing.len());
            for task in missing {
                let teacher = by_task[task.index()];
                let size = teacher.model.config().input_size;
                let drop = |e: Error| DroppedSample {
                    id: r.id.clone(),
                    reason: e.to_string(),
                };
                if !images.contains_key(&size) {
                    let img = load_image(manifest.resolve_image(r), size).map_err(drop)?;
                    images.insert(size, img);
                }
                let targets = teacher_target(teacher, &images[&size], opts).map_err(drop)?;
                out.push(CompletedEntry {
                    id: r.id.clone(),
                    task,
                    targets,
                    teacher_id: ids[task.index()].clone(),
                });
            }
            Ok(out)
        })
        .collect();

    let mut completed = CompletedLabels {
        num_aus: manifest.num_aus,
        ..Default::default()
    };
    for r in per_record {
        match r {
            Ok(entries) => completed.entries.extend(entries),
            Err(d) => {
                warn!("dropped_sample={} reason={:?}", d.id, d.reason);
                completed.dropped.push(d);
            }
        }
    }
    Ok(completed)
}

/// Fills every missing label of `manifest` from `completed`, marking it
/// teacher-provided. Dropped samples are omitted; order is preserved.
pub fn build_unified(manifest: &DatasetManifest, completed: &CompletedLabels) -> Result<DatasetManifest> {
    let known: HashSet<&str> = manifest.records.iter().map(|r| r.id.as_str()).collect();
    let mut lookup: HashMap<(&str, Task), &CompletedEntry> = HashMap::with_capacity(completed.entries.len());
    for e in &completed.entries {
        if !known.contains(e.id.as_str()) {
            return Err(Error::Alignment(format!("completed label for unknown sample `{}`", e.id)));
        }
        if lookup.insert((e.id.as_str(), e.task), e).is_some() {
            return Err(Error::Validation(format!("two completed {} labels for `{}`", e.task, e.id)));
        }
    }
    let dropped: HashSet<&str> = completed.dropped.iter().map(|d| d.id.as_str()).collect();

    let mut records = Vec::with_capacity(manifest.len());
    for r in manifest.records.iter().filter(|r| !dropped.contains(r.id.as_str())) {
        let mut out = r.clone();
        for task in Task::ALL {
            let entry = lookup.get(&(r.id.as_str(), task));
            if r.targets.has(task) {
                if entry.is_some() {
                    return Err(Error::Validation(format!(
                        "teacher label for `{}` would overwrite its {task} label",
                        r.id
                    )));
                }
                continue;
            }
            let entry = entry.ok_or_else(|| Error::Completeness {
                id: r.id.clone(),
                task: task.to_string(),
            })?;
            match task {
                Task::Va => out.targets.va = entry.targets.va,
                Task::Expr => out.targets.expr = entry.targets.expr.clone(),
                Task::Au => out.targets.au = entry.targets.au.clone(),
            }
            if !out.targets.has(task) {
                return Err(Error::Completeness {
                    id: r.id.clone(),
                    task: task.to_string(),
                });
            }
            out.provenance[task.index()] = Provenance::Teacher;
        }
        records.push(out);
    }
    let mut unified = DatasetManifest::new(records, manifest.num_aus);
    unified.root = manifest.root.clone();
    unified.validate()?;
    Ok(unified)
}

/// Trains the multi-task student with all three loss terms on D_multi.
pub fn train_student(
    d_multi: &DatasetManifest,
    model_config: &ModelConfig,
    weights: &LossWeights,
    cfg: &TrainConfig,
    val: Option<&DatasetManifest>,
) -> Result<(MultiTaskModel, FitOutcome)> {
    if let Some(r) = d_multi.records.iter().find(|r| r.targets.mask() != [true; 3]) {
        let task = Task::ALL.into_iter().find(|&t| !r.targets.has(t)).expect("some task missing");
        return Err(Error::Completeness {
            id: r.id.clone(),
            task: task.to_string(),
        });
    }
    let mut model = MultiTaskModel::new(model_config.clone())?;
    let size = model_config.input_size;
    let samples = load_samples(d_multi, size)?;
    let val = val.map(|m| ValidationSet::load(m, size)).transpose()?;
    let outcome = fit_samples(&mut model, &samples, weights, cfg, val.as_ref())?;
    Ok((model, outcome))
}

const TEACHER_COLUMN: &str = "teacher_id";

/// Writes completed labels as manifest rows plus a `teacher_id` column;
/// dropped samples go to a sibling `<file>.dropped` list.
pub fn write_completed<W: Write>(completed: &CompletedLabels, writer: W) -> Result<()> {
    let k = completed.num_aus;
    let mut w = csv::Writer::from_writer(writer);
    let mut header = manifest_header(k);
    header.push(TEACHER_COLUMN.into());
    w.write_record(&header)?;
    for e in &completed.entries {
        let mut provenance = [Provenance::Absent; 3];
        provenance[e.task.index()] = Provenance::Teacher;
        let rec = SampleRecord {
            id: e.id.clone(),
            image_path: PathBuf::new(),
            source: crate::data::Source::Synthetic,
            targets: e.targets.clone(),
            provenance,
        };
        let mut cells = row_cells(&rec, k);
        // image path and source are looked up from the manifest, not stored
        cells[1].clear();
        cells[2].clear();
        cells.push(e.teacher_id.clone());
        w.write_record(&cells)?;
    }
    w.flush().map_err(|e| Error::io("<completed>", e))?;
    Ok(())
}

pub fn read_completed<R: Read>(reader: R, name: &str) -> Result<CompletedLabels> {
    let parse_err = |row: usize, message: String| Error::Parse {
        path: name.to_string(),
        row,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let k = parse_header(&header, &[TEACHER_COLUMN]).map_err(|m| parse_err(1, m))?;
    let mut entries = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let mut row = row.map_err(|e| parse_err(line, e.to_string()))?;
        if row.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", header.len(), row.len())));
        }
        let teacher_id = row[header.len() - 1].to_string();
        // parse_row needs a source; the column is informational here
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, c)| if j == 2 { "synthetic".to_string() } else { c.to_string() })
            .collect();
        row = csv::StringRecord::from(cells);
        let rec = parse_row(&row, k).map_err(|m| parse_err(line, m))?;
        let present: Vec<Task> = Task::ALL.into_iter().filter(|&t| rec.targets.has(t)).collect();
        let [task] = present[..] else {
            return Err(parse_err(line, format!("expected exactly one label, found {}", present.len())));
        };
        if rec.provenance(task) != Provenance::Teacher {
            return Err(parse_err(line, "completed label must have teacher provenance".into()));
        }
        rec.targets
            .validate(crate::data::NUM_EXPRESSIONS, k)
            .map_err(|e| parse_err(line, e.to_string()))?;
        entries.push(CompletedEntry {
            id: rec.id,
            task,
            targets: rec.targets,
            teacher_id,
        });
    }
    Ok(CompletedLabels {
        entries,
        dropped: Vec::new(),
        num_aus: k,
    })
}

pub fn save_completed(completed: &CompletedLabels, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_completed(completed, f)?;
    let dropped_path = dropped_path(path);
    let mut text = String::from("id,reason\n");
    for d in &completed.dropped {
        text.push_str(&format!("{},{:?}\n", d.id, d.reason));
    }
    fs::write(&dropped_path, text).map_err(|e| Error::io(&dropped_path, e))
}

pub fn load_completed(path: impl AsRef<Path>) -> Result<CompletedLabels> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut completed = read_completed(f, &path.display().to_string())?;
    let dp = dropped_path(path);
    if dp.exists() {
        let text = fs::read_to_string(&dp).map_err(|e| Error::io(&dp, e))?;
        for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
            let (id, reason) = line.split_once(',').unwrap_or((line, ""));
            completed.dropped.push(DroppedSample {
                id: id.to_string(),
                reason: reason.trim_matches('"').to_string(),
            });
        }
    }
    Ok(completed)
}

fn dropped_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".dropped");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Source, SyntheticSpec};

    fn tiny_config() -> ModelConfig {
        ModelConfig::tiny(8, 32)
    }

    fn untrained_teachers() -> Vec<TeacherModel> {
        Task::ALL
            .into_iter()
            .map(|task| TeacherModel {
                task,
                model: MultiTaskModel::new(tiny_config()).unwrap(),
                training_manifest_digest: String::new(),
            })
            .collect()
    }

    fn record(id: &str, targets: TargetSet) -> SampleRecord {
        SampleRecord::ground_truth(id, "missing.png", Source::Synthetic, targets)
    }

    #[test]
    fn fully_labelled_sample_needs_no_teacher() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic(&SyntheticSpec { n: 7, ..Default::default() }, dir.path()).unwrap();
        let c = complete_labels(&untrained_teachers(), &m, CompletionOptions::default()).unwrap();
        assert!(c.entries.is_empty());
        let u = build_unified(&m, &c).unwrap();
        assert_eq!(u.records, m.records);
    }

    #[test]
    fn expr_only_sample_gets_va_and_au() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = generate_synthetic(&SyntheticSpec { n: 7, ..Default::default() }, dir.path()).unwrap();
        for t in [Task::Va, Task::Au] {
            m.records[3].targets.clear(t);
            m.records[3].provenance[t.index()] = Provenance::Absent;
        }
        let c = complete_labels(&untrained_teachers(), &m, CompletionOptions::default()).unwrap();
        let tasks: Vec<Task> = c.entries.iter().map(|e| e.task).collect();
        assert_eq!(tasks, vec![Task::Va, Task::Au]);
        let au = c.entries[1].targets.au.as_ref().unwrap();
        assert!(au.iter().all(|v| (0.0..=1.0).contains(v)));
        let u = build_unified(&m, &c).unwrap();
        assert_eq!(u.coverage().as_tuple(), (7, 7, 7));
        assert_eq!(u.records[3].provenance, [Provenance::Teacher, Provenance::GroundTruth, Provenance::Teacher]);
    }

    #[test]
    fn soft_expr_sums_to_one_and_hard_is_class() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = generate_synthetic(&SyntheticSpec { n: 7, ..Default::default() }, dir.path()).unwrap();
        m.records[0].targets.clear(Task::Expr);
        m.records[0].provenance[1] = Provenance::Absent;
        let soft = complete_labels(&untrained_teachers(), &m, CompletionOptions::default()).unwrap();
        match soft.entries[0].targets.expr.as_ref().unwrap() {
            ExprTarget::Distribution(p) => assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        let hard = complete_labels(&untrained_teachers(), &m, CompletionOptions { hard: true }).unwrap();
        assert!(matches!(hard.entries[0].targets.expr, Some(ExprTarget::Class(_))));
    }

    #[test]
    fn constant_va_head_gives_identical_entries() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = generate_synthetic(&SyntheticSpec { n: 14, ..Default::default() }, dir.path()).unwrap();
        for r in &mut m.records {
            r.targets.clear(Task::Va);
            r.provenance[0] = Provenance::Absent;
        }
        let mut teachers = untrained_teachers();
        let [w, b] = teachers[0].model.head_param_indices(Task::Va);
        teachers[0].model.params_mut().by_index_mut(w).data.fill(0.0);
        teachers[0].model.params_mut().by_index_mut(b).data.copy_from_slice(&[0.2, -0.1]);
        let c = complete_labels(&teachers, &m, CompletionOptions::default()).unwrap();
        assert_eq!(c.entries.len(), 14);
        assert!(c.entries.iter().all(|e| e.targets.va == c.entries[0].targets.va));
    }

    #[test]
    fn unreadable_image_drops_sample() {
        let m = DatasetManifest::new(vec![record("x", TargetSet { va: Some([0.0, 0.0]), ..Default::default() })], 12);
        let c = complete_labels(&untrained_teachers(), &m, CompletionOptions::default()).unwrap();
        assert!(c.entries.is_empty());
        assert_eq!(c.dropped.len(), 1);
        assert_eq!(build_unified(&m, &c).unwrap().len(), 0);
    }

    #[test]
    fn coverage_arithmetic_and_completeness_error() {
        // coverage (40, 70, 55) of n = 100
        let records: Vec<SampleRecord> = (0..100)
            .map(|i| {
                record(
                    &format!("s{i}"),
                    TargetSet {
                        va: (i < 40).then_some([0.1, 0.2]),
                        expr: (i >= 30).then_some(ExprTarget::Class(i % 7)),
                        au: (i % 20 < 11).then(|| vec![1.0; 12]),
                    },
                )
            })
            .filter(|r| r.targets.mask() != [false; 3])
            .collect();
        let m = DatasetManifest::new(records, 12);
        assert_eq!(m.len(), 100);
        assert_eq!(m.coverage().as_tuple(), (40, 70, 55));
        let mut entries = Vec::new();
        for r in &m.records {
            for t in Task::ALL.into_iter().filter(|&t| !r.targets.has(t)) {
                let targets = match t {
                    Task::Va => TargetSet { va: Some([0.0, 0.0]), ..Default::default() },
                    Task::Expr => TargetSet { expr: Some(ExprTarget::Class(0)), ..Default::default() },
                    Task::Au => TargetSet { au: Some(vec![0.5; 12]), ..Default::default() },
                };
                entries.push(CompletedEntry { id: r.id.clone(), task: t, targets, teacher_id: "t".into() });
            }
        }
        let completed = CompletedLabels { entries, dropped: vec![], num_aus: 12 };
        let u = build_unified(&m, &completed).unwrap();
        assert_eq!(u.coverage().as_tuple(), (100, 100, 100));
        let teacher_counts: Vec<usize> = Task::ALL.iter().map(|&t| u.provenance_count(t, Provenance::Teacher)).collect();
        assert_eq!(teacher_counts, vec![60, 30, 45]);
        for (a, b) in m.records.iter().zip(&u.records) {
            for t in Task::ALL {
                if a.provenance(t) == Provenance::GroundTruth {
                    assert_eq!(b.provenance(t), Provenance::GroundTruth);
                }
            }
            assert_eq!(a.targets.va.is_some(), b.provenance(Task::Va) == Provenance::GroundTruth);
        }

        let mut partial = completed.clone();
        partial.entries.remove(5);
        assert!(matches!(build_unified(&m, &partial), Err(Error::Completeness { .. })));
    }

    #[test]
    fn completed_file_round_trip() {
        let completed = CompletedLabels {
            entries: vec![
                CompletedEntry {
                    id: "a".into(),
                    task: Task::Expr,
                    targets: TargetSet {
                        expr: Some(ExprTarget::Distribution(vec![0.1, 0.2, 0.3, 0.1, 0.1, 0.1, 0.1])),
                        ..Default::default()
                    },
                    teacher_id: "expr-abc".into(),
                },
                CompletedEntry {
                    id: "a".into(),
                    task: Task::Va,
                    targets: TargetSet { va: Some([0.25, -0.5]), ..Default::default() },
                    teacher_id: "va-def".into(),
                },
            ],
            dropped: vec![DroppedSample { id: "z".into(), reason: "bad, image".into() }],
            num_aus: 3,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("completed.csv");
        save_completed(&completed, &p).unwrap();
        assert_eq!(load_completed(&p).unwrap(), completed);
    }

    #[test]
    fn teacher_needs_labels_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = generate_synthetic(&SyntheticSpec { n: 14, ..Default::default() }, dir.path().join("d")).unwrap();
        for r in &mut m.records {
            r.targets.clear(Task::Au);
            r.provenance[2] = Provenance::Absent;
        }
        let cfg = TrainConfig { batch_size: 2, epochs: 1, ..Default::default() };
        assert!(matches!(train_teacher(Task::Au, &m, &tiny_config(), &cfg, None), Err(Error::Validation(_))));
        let (t, _) = train_teacher(Task::Va, &m, &tiny_config(), &cfg, None).unwrap();
        t.save(dir.path().join("teacher")).unwrap();
        let back = TeacherModel::load(dir.path().join("teacher")).unwrap();
        assert_eq!(back.task, Task::Va);
        assert_eq!(back.id(), t.id());
        assert_eq!(back.training_manifest_digest, t.training_manifest_digest);
    }
}

//! Delimited-text manifest I/O.
//!
//! Header: `id,image_path,source,valence,arousal,expr,au_0..au_{K-1},prov_va,prov_expr,prov_au`.
//! An empty cell means the label is missing. `expr` holds either a class
//! index or a `;`-separated probability vector (teacher soft labels).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{DatasetManifest, Provenance, SampleRecord, Source};
use crate::error::{Error, Result};
use crate::losses::{ExprTarget, TargetSet};
use crate::Task;

const LEADING: [&str; 6] = ["id", "image_path", "source", "valence", "arousal", "expr"];
const TRAILING: [&str; 3] = ["prov_va", "prov_expr", "prov_au"];

pub fn manifest_header(num_aus: usize) -> Vec<String> {
    LEADING
        .iter()
        .map(|s| s.to_string())
        .chain((0..num_aus).map(|j| format!("au_{j}")))
        .chain(TRAILING.iter().map(|s| s.to_string()))
        .collect()
}

/// Number of AU columns implied by a header, or an explanation of why it is malformed.
pub(crate) fn parse_header(header: &csv::StringRecord, extra_trailing: &[&str]) -> std::result::Result<usize, String> {
    let cols: Vec<&str> = header.iter().collect();
    let fixed = LEADING.len() + TRAILING.len() + extra_trailing.len();
    if cols.len() < fixed || cols[..LEADING.len()] != LEADING {
        return Err(format!("header must start with {}", LEADING.join(",")));
    }
    let k = cols.len() - fixed;
    let expected: Vec<String> = manifest_header(k).into_iter().chain(extra_trailing.iter().map(|s| s.to_string())).collect();
    if cols != expected {
        return Err(format!("header must be {}", expected.join(",")));
    }
    Ok(k)
}

fn parse_f64(cell: &str, what: &str) -> std::result::Result<f64, String> {
    cell.trim().parse::<f64>().map_err(|_| format!("{what}: `{cell}` is not a number"))
}

pub(crate) fn parse_expr(cell: &str) -> std::result::Result<ExprTarget, String> {
    if cell.contains(';') {
        let p = cell
            .split(';')
            .map(|c| parse_f64(c, "expr probability"))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(ExprTarget::Distribution(p))
    } else {
        cell.trim()
            .parse::<usize>()
            .map(ExprTarget::Class)
            .map_err(|_| format!("expr: `{cell}` is not a class index"))
    }
}

pub(crate) fn format_expr(e: &ExprTarget) -> String {
    match e {
        ExprTarget::Class(c) => c.to_string(),
        ExprTarget::Distribution(p) => p.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
    }
}

/// Parses one data row (without any extra trailing columns).
pub(crate) fn parse_row(row: &csv::StringRecord, k: usize) -> std::result::Result<SampleRecord, String> {
    let cell = |i: usize| row.get(i).unwrap_or("");
    let id = cell(0).to_string();
    if id.is_empty() {
        return Err("empty id".into());
    }
    let source: Source = cell(2).parse()?;
    let va = match (cell(3).is_empty(), cell(4).is_empty()) {
        (true, true) => None,
        (false, false) => Some([parse_f64(cell(3), "valence")?, parse_f64(cell(4), "arousal")?]),
        _ => return Err("valence and arousal must both be present or both empty".into()),
    };
    let expr = if cell(5).is_empty() { None } else { Some(parse_expr(cell(5))?) };
    let au_cells: Vec<&str> = (0..k).map(|j| cell(6 + j)).collect();
    let au = if au_cells.iter().all(|c| c.is_empty()) {
        None
    } else if au_cells.iter().any(|c| c.is_empty()) {
        return Err("AU columns must all be present or all empty".into());
    } else {
        Some(
            au_cells
                .iter()
                .map(|c| parse_f64(c, "AU"))
                .collect::<std::result::Result<Vec<_>, _>>()?,
        )
    };
    let targets = TargetSet { va, expr, au };
    let mask = targets.mask();
    let mut provenance = [Provenance::Absent; 3];
    for t in Task::ALL {
        let raw = cell(6 + k + t.index());
        provenance[t.index()] = if raw.is_empty() {
            if mask[t.index()] {
                Provenance::GroundTruth
            } else {
                Provenance::Absent
            }
        } else {
            raw.parse()?
        };
    }
    Ok(SampleRecord {
        id,
        image_path: cell(1).into(),
        source,
        targets,
        provenance,
    })
}

pub(crate) fn row_cells(r: &SampleRecord, k: usize) -> Vec<String> {
    let mut cells = vec![
        r.id.clone(),
        r.image_path.to_string_lossy().into_owned(),
        r.source.as_str().to_string(),
    ];
    match r.targets.va {
        Some([v, a]) => {
            cells.push(v.to_string());
            cells.push(a.to_string());
        }
        None => cells.extend([String::new(), String::new()]),
    }
    cells.push(r.targets.expr.as_ref().map(format_expr).unwrap_or_default());
    match &r.targets.au {
        Some(au) => cells.extend(au.iter().map(f64::to_string)),
        None => cells.extend(std::iter::repeat_n(String::new(), k)),
    }
    cells.extend(r.provenance.iter().map(|p| p.as_str().to_string()));
    cells
}

/// Parses a manifest from any reader. `name` is used in error messages.
pub fn read_manifest<R: Read>(reader: R, name: &str) -> Result<DatasetManifest> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let parse_err = |row: usize, message: String| Error::Parse {
        path: name.to_string(),
        row,
        message,
    };
    let header = rdr.headers()?.clone();
    let k = parse_header(&header, &[]).map_err(|m| parse_err(1, m))?;
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // row numbers count the header as row 1
        let line = i + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        if row.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", header.len(), row.len())));
        }
        let rec = parse_row(&row, k).map_err(|m| parse_err(line, m))?;
        rec.validate(k)
            .map_err(|e| Error::Validation(format!("{name} row {line}: {e}")))?;
        records.push(rec);
    }
    let manifest = DatasetManifest::new(records, k);
    manifest.validate()?;
    Ok(manifest)
}

/// Loads a manifest; relative image paths resolve against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut m = read_manifest(file, &path.display().to_string())?;
    let parent = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.root = if parent.as_os_str().is_empty() {
        std::env::current_dir().unwrap_or_default()
    } else {
        parent.canonicalize().unwrap_or(parent)
    };
    Ok(m)
}

pub fn write_manifest<W: Write>(manifest: &DatasetManifest, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record(manifest_header(manifest.num_aus))?;
    for r in &manifest.records {
        w.write_record(row_cells(r, manifest.num_aus))?;
    }
    w.flush().map_err(|e| Error::io("<manifest>", e))?;
    Ok(())
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_manifest(manifest, file)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,image_path,source,valence,arousal,expr,au_0,au_1,au_2,prov_va,prov_expr,prov_au\n";

    fn parse(body: &str) -> Result<DatasetManifest> {
        read_manifest(format!("{HEADER}{body}").as_bytes(), "test.csv")
    }

    #[test]
    fn full_row_sets_all_masks() {
        let m = parse("a,img/a.png,expw,0.5,-0.25,3,1,0,1,gt,gt,gt\n").unwrap();
        assert_eq!(m.num_aus, 3);
        assert_eq!(m.records[0].targets.mask(), [true; 3]);
    }

    #[test]
    fn empty_va_is_absent() {
        let m = parse("a,a.png,expw,,,3,1,0,1,,,\n").unwrap();
        let r = &m.records[0];
        assert_eq!(r.targets.mask(), [false, true, true]);
        assert_eq!(r.provenance(Task::Va), Provenance::Absent);
        assert_eq!(r.provenance(Task::Expr), Provenance::GroundTruth);
    }

    #[test]
    fn errors_carry_row_numbers() {
        let err = parse("a,a.png,expw,0.1,0.1,2,1,0,1,gt,gt,gt\nb,b.png,expw,zz,0.1,2,1,0,1,gt,gt,gt\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }), "{err}");
        let err = parse("a,a.png,expw,0.1,0.1,9,1,0,1,gt,gt,gt\n").unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("row 2")), "{err}");
        let err = parse("a,a.png,expw,1.5,0.1,2,1,0,1,gt,gt,gt\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(parse("a,a.png,expw,0.1,0.1,2,1,,1,gt,gt,gt\n").is_err());
        assert!(parse("a,a.png,expw,0.1,0.1,2,1,0,1,absent,gt,gt\n").is_err());
        assert!(read_manifest("id,path\n".as_bytes(), "x").is_err());
    }

    #[test]
    fn soft_expr_round_trips() {
        let body = "a,a.png,synthetic,,,0.125;0.125;0.25;0.125;0.125;0.125;0.125,0.5,0.25,1,absent,teacher,teacher\n";
        let m = parse(body).unwrap();
        let mut out = Vec::new();
        write_manifest(&m, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{HEADER}{body}"));
    }
}

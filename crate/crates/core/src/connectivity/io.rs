//! Dataset directories: `manifest.csv` (`subject_id,label,matrix_file`), one
//! plain CSV per matrix, and a `dataset.json` sidecar holding the class names.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ConnectivityMatrix, Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::table::fmt_f64;

pub const MANIFEST_FILE: &str = "manifest.csv";
const SIDECAR_FILE: &str = "dataset.json";
const MANIFEST_HEADER: [&str; 3] = ["subject_id", "label", "matrix_file"];

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    n_nodes: usize,
    class_names: [String; 2],
}

/// Writes `dir/manifest.csv`, `dir/dataset.json` and `dir/matrices/<id>.csv`.
pub fn save_dataset(data: &Dataset, dir: &Path) -> Result<PathBuf> {
    let mdir = dir.join("matrices");
    fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&manifest_path)?;
    w.write_record(MANIFEST_HEADER)?;
    for r in data.records() {
        let rel = format!("matrices/{}.csv", r.subject_id);
        w.write_record([
            r.subject_id.as_str(),
            data.class_names()[r.label].as_str(),
            rel.as_str(),
        ])?;
        write_matrix(&r.matrix, &dir.join(&rel))?;
    }
    w.flush().map_err(|e| Error::io(&manifest_path, e))?;

    let sidecar = Sidecar {
        format_version: 1,
        n_nodes: data.n_nodes(),
        class_names: data.class_names().clone(),
    };
    let sidecar_path = dir.join(SIDECAR_FILE);
    fs::write(
        &sidecar_path,
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )
    .map_err(|e| Error::io(&sidecar_path, e))?;
    Ok(manifest_path)
}

fn write_matrix(m: &ConnectivityMatrix, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.n_nodes() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads a dataset from its manifest. Label strings are mapped to indices
/// through `class_names`, falling back to the `dataset.json` sidecar next to
/// the manifest, then to `["0", "1"]`.
pub fn load_dataset(manifest: &Path, class_names: Option<&[String; 2]>) -> Result<Dataset> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let names: [String; 2] = match class_names {
        Some(c) => c.clone(),
        None => {
            let sidecar = base.join(SIDECAR_FILE);
            if sidecar.exists() {
                let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
                serde_json::from_str::<Sidecar>(&text)?.class_names
            } else {
                ["0".to_string(), "1".to_string()]
            }
        }
    };

    let load_err = |line: usize, message: String| Error::Load {
        path: manifest.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(manifest)
        .map_err(|e| load_err(0, e.to_string()))?;
    let header = rdr
        .headers()
        .map_err(|e| load_err(1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(load_err(
            1,
            format!("expected header {}", MANIFEST_HEADER.join(",")),
        ));
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| load_err(line, e.to_string()))?;
        if row.len() != 3 {
            return Err(load_err(
                line,
                format!("expected 3 fields, got {}", row.len()),
            ));
        }
        let label = names.iter().position(|n| n == &row[1]).ok_or_else(|| {
            load_err(
                line,
                format!("unknown label {:?} (classes {:?})", &row[1], names),
            )
        })?;
        let mpath = base.join(&row[2]);
        if !mpath.is_file() {
            return Err(load_err(
                line,
                format!("missing matrix file {}", mpath.display()),
            ));
        }
        let matrix = read_matrix(&mpath)?;
        records.push(SubjectRecord {
            subject_id: row[0].to_string(),
            label,
            matrix,
        });
    }
    if records.is_empty() {
        return Err(load_err(1, "no records".into()));
    }
    Dataset::new(records, names).map_err(|e| load_err(0, e.to_string()))
}

/// Every file a dataset consists of: the manifest, the sidecar if present,
/// and each matrix in manifest order.
pub fn dataset_files(manifest: &Path) -> Result<Vec<PathBuf>> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut files = vec![manifest.to_path_buf()];
    let sidecar = base.join(SIDECAR_FILE);
    if sidecar.exists() {
        files.push(sidecar);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(manifest)?;
    for row in rdr.records() {
        if let Some(rel) = row?.get(2) {
            files.push(base.join(rel));
        }
    }
    Ok(files)
}

fn read_matrix(path: &Path) -> Result<ConnectivityMatrix> {
    let err = |line: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(0, e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| err(i + 1, e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| err(i + 1, format!("not a number: {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(err(1, "empty matrix".into()));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(err(i + 1, format!("expected {n} columns, got {}", r.len())));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (rows[i][j], rows[j][i]);
            if (a - b).abs() > super::SYMMETRY_TOL {
                return Err(err(
                    j + 1,
                    format!("asymmetric entry ({j}, {i}) = {b} vs ({i}, {j}) = {a}"),
                ));
            }
        }
    }
    ConnectivityMatrix::new(n, rows.into_iter().flatten().collect())
        .map_err(|e| err(0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectivity::{generate_synthetic, SyntheticConfig};

    fn write(path: &Path, text: &str) {
        if let Some(p) = path.parent() {
            fs::create_dir_all(p).unwrap();
        }
        fs::write(path, text).unwrap();
    }

    #[test]
    fn round_trip_generated_dataset() {
        let cfg = SyntheticConfig {
            n_subjects: 6,
            n_nodes: 5,
            n_timepoints: 30,
            ..SyntheticConfig::default()
        };
        let d = generate_synthetic(&cfg, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&d, dir.path()).unwrap();
        let back = load_dataset(&manifest, None).unwrap();
        assert_eq!(back.class_names(), d.class_names());
        for (a, b) in d.records().iter().zip(back.records()) {
            assert_eq!(a.subject_id, b.subject_id);
            assert_eq!(a.label, b.label);
            for (x, y) in a.matrix.values().iter().zip(b.matrix.values()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn empty_manifest_reports_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join(MANIFEST_FILE);
        write(&m, "subject_id,label,matrix_file\n");
        let err = load_dataset(&m, None).unwrap_err().to_string();
        assert!(err.contains("no records"), "{err}");
    }

    #[test]
    fn labels_map_through_class_names() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join(MANIFEST_FILE);
        write(&dir.path().join("a.csv"), "1,0.5\n0.5,1\n");
        write(&dir.path().join("b.csv"), "1,-0.2\n-0.2,1\n");
        write(&m, "subject_id,label,matrix_file\ns1,F,a.csv\ns2,M,b.csv\n");
        let names = ["F".to_string(), "M".to_string()];
        let d = load_dataset(&m, Some(&names)).unwrap();
        assert_eq!(d.records()[0].label, 0);
        assert_eq!(d.records()[1].label, 1);

        let other = ["X".to_string(), "Y".to_string()];
        let err = load_dataset(&m, Some(&other)).unwrap_err().to_string();
        assert!(
            err.contains("manifest.csv:2") && err.contains("unknown label"),
            "{err}"
        );
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join(MANIFEST_FILE);
        write(&dir.path().join("a.csv"), "1,0.5\n0.5,1\n");
        write(&m, "subject_id,label,matrix_file\ns1,0,a.csv\ns1,1,a.csv\n");
        let err = load_dataset(&m, None).unwrap_err().to_string();
        assert!(err.contains("duplicate subject id s1"), "{err}");
    }

    #[test]
    fn missing_and_asymmetric_files_are_located() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join(MANIFEST_FILE);
        write(
            &dir.path().join("a.csv"),
            "1,0.5,0.1\n0.5,1,0.2\n0.3,0.2,1\n",
        );
        write(
            &m,
            "subject_id,label,matrix_file\ns1,0,a.csv\ns2,1,nope.csv\n",
        );
        let err = load_dataset(&m, None).unwrap_err().to_string();
        assert!(
            err.contains("a.csv:3") && err.contains("asymmetric"),
            "{err}"
        );

        write(
            &dir.path().join("a.csv"),
            "1,0.5,0.1\n0.5,1,0.2\n0.1,0.2,1\n",
        );
        let err = load_dataset(&m, None).unwrap_err().to_string();
        assert!(
            err.contains("manifest.csv:3") && err.contains("missing"),
            "{err}"
        );
    }
}

//! Dataset ingestion and atomic CSV export.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fgam::data::{SparseFunctionalDataset, Subject};

use crate::CliError;

/// Labelled subjects for fitting, plus subjects whose response is blank
/// and who only receive predictions.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: SparseFunctionalDataset,
    pub targets: Vec<Subject>,
}

impl LoadedData {
    /// Every subject, labelled or not, for the decomposition.
    pub fn all_subjects(&self) -> Result<SparseFunctionalDataset, CliError> {
        let mut all: Vec<Subject> = self.train.subjects().to_vec();
        all.extend(self.targets.iter().map(|s| Subject {
            y: 0.0,
            ..s.clone()
        }));
        Ok(SparseFunctionalDataset::new(all)?)
    }
}

fn parse_number(field: &str, path: &Path, line: u64, column: &str) -> Result<f64, CliError> {
    field.trim().parse::<f64>().map_err(|_| {
        CliError::Data(format!(
            "{}:{line}: column {column}: cannot parse {field:?} as a number",
            path.display()
        ))
    })
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// Reads `subject_id,t,value` observations and `subject_id,y[,u1,...]`
/// responses. A blank `y` marks a subject to predict.
pub fn load_dataset(obs_path: &Path, resp_path: &Path) -> Result<LoadedData, CliError> {
    let mut obs: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut rdr = reader(obs_path)?;
    let hdr = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", obs_path.display())))?;
    if hdr.len() < 3 {
        return Err(CliError::Data(format!(
            "{}: expected header subject_id,t,value",
            obs_path.display()
        )));
    }
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", obs_path.display())))?;
        let line = line_of(&rec);
        if rec.len() != 3 {
            return Err(CliError::Data(format!(
                "{}:{line}: expected 3 fields, found {}",
                obs_path.display(),
                rec.len()
            )));
        }
        let t = parse_number(&rec[1], obs_path, line, "t")?;
        let v = parse_number(&rec[2], obs_path, line, "value")?;
        let entry = obs.entry(rec[0].to_string()).or_default();
        if entry.iter().any(|&(s, _)| s == t) {
            return Err(CliError::Data(format!(
                "{}:{line}: duplicate observation for subject {} at t = {t}",
                obs_path.display(),
                &rec[0]
            )));
        }
        entry.push((t, v));
    }

    let mut rdr = reader(resp_path)?;
    let hdr = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", resp_path.display())))?
        .clone();
    if hdr.len() < 2 {
        return Err(CliError::Data(format!(
            "{}: expected header subject_id,y[,u1,...]",
            resp_path.display()
        )));
    }
    let mut seen: HashMap<String, u64> = HashMap::new();
    let mut train = Vec::new();
    let mut targets = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", resp_path.display())))?;
        let line = line_of(&rec);
        if rec.len() != hdr.len() {
            return Err(CliError::Data(format!(
                "{}:{line}: expected {} fields, found {}",
                resp_path.display(),
                hdr.len(),
                rec.len()
            )));
        }
        let id = rec[0].to_string();
        if let Some(first) = seen.insert(id.clone(), line) {
            return Err(CliError::Data(format!(
                "{}:{line}: subject {id} already has a response on line {first}",
                resp_path.display()
            )));
        }
        let u = (2..rec.len())
            .map(|c| parse_number(&rec[c], resp_path, line, &hdr[c]))
            .collect::<Result<Vec<_>, _>>()?;
        let points = obs.remove(&id).ok_or_else(|| {
            CliError::Data(format!(
                "{}:{line}: subject {id} has a response but no observations",
                resp_path.display()
            ))
        })?;
        let (times, values) = points.into_iter().unzip();
        if rec[1].is_empty() {
            targets.push(Subject::new(id, times, values, f64::NAN, u));
        } else {
            let y = parse_number(&rec[1], resp_path, line, &hdr[1])?;
            train.push(Subject::new(id, times, values, y, u));
        }
    }
    if let Some(id) = obs.keys().next() {
        return Err(CliError::Data(format!(
            "{}: unknown subject {id} has observations but no response row",
            obs_path.display()
        )));
    }
    if train.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no subject has a response",
            resp_path.display()
        )));
    }
    let train = SparseFunctionalDataset::new(train)?;
    // the validation sorts times; do the same for the targets
    let targets = if targets.is_empty() {
        targets
    } else {
        let fake: Vec<Subject> = targets
            .iter()
            .map(|s| Subject {
                y: 0.0,
                ..s.clone()
            })
            .collect();
        SparseFunctionalDataset::new(fake)?
            .subjects()
            .iter()
            .map(|s| Subject {
                y: f64::NAN,
                ..s.clone()
            })
            .collect()
    };
    if targets.first().is_some_and(|s| s.u.len() != train.p0()) {
        return Err(CliError::Data(
            "prediction targets and training subjects differ in offsets".into(),
        ));
    }
    Ok(LoadedData { train, targets })
}

/// Formats a float so that it parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Temporary sibling of the final file, readable like a normally created one.
fn temp_in(dir: &Path) -> Result<tempfile::NamedTempFile, CliError> {
    let mut b = tempfile::Builder::new();
    b.prefix(".fgam-");
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        b.permissions(fs::Permissions::from_mode(0o644));
    }
    b.tempfile_in(dir)
        .map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))
}

/// CSV file written to a temporary sibling and renamed into place.
pub struct AtomicCsv {
    path: PathBuf,
    tmp: tempfile::NamedTempFile,
    writer: Option<csv::Writer<BufWriter<fs::File>>>,
}

impl AtomicCsv {
    pub fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self, CliError> {
        let tmp = temp_in(dir)?;
        let file = tmp
            .reopen()
            .map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
        let mut writer = csv::WriterBuilder::new().from_writer(BufWriter::new(file));
        writer
            .write_record(header)
            .map_err(|e| CliError::Output(e.to_string()))?;
        Ok(AtomicCsv {
            path: dir.join(name),
            tmp,
            writer: Some(writer),
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .as_mut()
            .expect("open until finish")
            .write_record(fields)
            .map_err(|e| CliError::Output(format!("{}: {e}", self.path.display())))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        let w = self.writer.take().expect("open until finish");
        let mut inner = w
            .into_inner()
            .map_err(|e| CliError::Output(format!("{}: {e}", self.path.display())))?;
        inner
            .flush()
            .map_err(|e| CliError::Output(format!("{}: {e}", self.path.display())))?;
        drop(inner);
        self.tmp
            .persist(&self.path)
            .map_err(|e| CliError::Output(format!("{}: {e}", self.path.display())))?;
        Ok(())
    }
}

/// Plain text file written atomically.
pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    let mut tmp = temp_in(dir)?;
    tmp.write_all(text.as_bytes())
        .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    tmp.persist(&path)
        .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    Ok(())
}

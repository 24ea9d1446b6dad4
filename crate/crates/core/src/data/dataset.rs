use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Students with fewer logs than this are dropped at load.
pub const MIN_LOGS: usize = 15;
pub const DEFAULT_RATIO: f64 = 0.7;

/// One response `(student, exercise, score)` with dense ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Response {
    pub student: usize,
    pub exercise: usize,
    pub score: u8,
}

/// Train/test partition of a dataset's logs.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub seed: u64,
    pub ratio: f64,
    pub train: Vec<Response>,
    pub test: Vec<Response>,
}

/// Response logs, Q-matrix and the maps from dense ids to the original ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub student_ids: Vec<String>,
    pub exercise_ids: Vec<String>,
    pub concept_ids: Vec<String>,
    /// `M × K`, entries 0/1.
    pub q: Vec<Vec<u8>>,
    pub logs: Vec<Response>,
    pub split: Option<Split>,
    pub source: String,
    pub min_logs: usize,
}

/// Text manifest written next to the data files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub student_ids: Vec<String>,
    pub exercise_ids: Vec<String>,
    pub concept_ids: Vec<String>,
    pub source: String,
    pub min_logs: usize,
    pub split_seed: Option<u64>,
    pub split_ratio: Option<f64>,
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(path, line, e.to_string())
}

fn parse_binary(path: &Path, line: usize, field: &str) -> Result<u8> {
    match field {
        "0" | "0.0" => Ok(0),
        "1" | "1.0" => Ok(1),
        other => Err(parse_err(
            path,
            line,
            format!("expected 0 or 1, got '{other}'"),
        )),
    }
}

/// Exercise ids, concept ids and the 0/1 Q rows.
pub type QTable = (Vec<String>, Vec<String>, Vec<Vec<u8>>);

/// Reads a Q-matrix file: `exercise_id,c_0,…,c_{K−1}`.
pub fn read_q(path: &Path) -> Result<QTable> {
    let mut rdr = open_csv(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 || &header[0] != "exercise_id" {
        return Err(parse_err(path, 1, "header must be exercise_id,c_0,…"));
    }
    let concepts: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", header.len(), rec.len()),
            ));
        }
        let id = rec[0].to_string();
        if seen.insert(id.clone(), line).is_some() {
            return Err(parse_err(
                path,
                line,
                format!("exercise '{id}' listed twice"),
            ));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|f| parse_binary(path, line, f))
            .collect::<Result<Vec<_>>>()?;
        if row.iter().all(|v| *v == 0) {
            return Err(Error::Integrity(format!(
                "exercise '{id}' has an empty Q row ({}:{line})",
                path.display()
            )));
        }
        ids.push(id);
        rows.push(row);
    }
    Ok((ids, concepts, rows))
}

/// Reads `student_id,exercise_id,score` rows as raw string triples with their line numbers.
fn read_raw_logs(path: &Path) -> Result<Vec<(String, String, u8, usize)>> {
    let mut rdr = open_csv(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["student_id", "exercise_id", "score"] {
        return Err(parse_err(
            path,
            1,
            "header must be student_id,exercise_id,score",
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(parse_err(
                path,
                line,
                format!("expected 3 fields, got {}", rec.len()),
            ));
        }
        if rec[0].is_empty() || rec[1].is_empty() {
            return Err(parse_err(path, line, "empty id"));
        }
        let score = parse_binary(path, line, &rec[2])?;
        out.push((rec[0].to_string(), rec[1].to_string(), score, line));
    }
    Ok(out)
}

/// Loads logs and Q-matrix, drops students with fewer than [`MIN_LOGS`]
/// logs and densifies ids. Students are numbered by first appearance,
/// exercises follow the Q-file order. A repeated `(student, exercise)` pair
/// takes the score of its last occurrence.
pub fn load_logs(logs_path: &Path, q_path: &Path) -> Result<Dataset> {
    let (exercise_ids, concept_ids, q) = read_q(q_path)?;
    let ex_index: HashMap<&str, usize> = exercise_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let raw = read_raw_logs(logs_path)?;

    let mut order: Vec<String> = Vec::new();
    let mut per_student: HashMap<String, Vec<(usize, u8)>> = HashMap::new();
    let mut slot: HashMap<(String, usize), usize> = HashMap::new();
    for (s, e, score, line) in raw {
        let ex = *ex_index.get(e.as_str()).ok_or_else(|| {
            Error::Integrity(format!(
                "exercise '{e}' ({}:{line}) has no row in {}",
                logs_path.display(),
                q_path.display()
            ))
        })?;
        let entries = per_student.entry(s.clone()).or_insert_with(|| {
            order.push(s.clone());
            Vec::new()
        });
        match slot.get(&(s.clone(), ex)) {
            Some(&i) => entries[i].1 = score,
            None => {
                slot.insert((s, ex), entries.len());
                entries.push((ex, score));
            }
        }
    }

    let mut student_ids = Vec::new();
    let mut logs = Vec::new();
    for s in order {
        let entries = &per_student[&s];
        if entries.len() < MIN_LOGS {
            continue;
        }
        let sid = student_ids.len();
        student_ids.push(s);
        logs.extend(entries.iter().map(|&(exercise, score)| Response {
            student: sid,
            exercise,
            score,
        }));
    }
    if student_ids.is_empty() {
        return Err(Error::Integrity(format!(
            "no student in {} has at least {MIN_LOGS} logs",
            logs_path.display()
        )));
    }
    Ok(Dataset {
        student_ids,
        exercise_ids,
        concept_ids,
        q,
        logs,
        split: None,
        source: logs_path.display().to_string(),
        min_logs: MIN_LOGS,
    })
}

/// Train size for a student with `n` logs: `ratio·n` rounded half up.
pub fn train_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64 + 0.5 + 1e-9).floor() as usize).min(n)
}

/// Shuffled mini-batches of `0..n`; the final short batch is kept.
pub fn batches(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.student_ids.len()
    }

    pub fn m(&self) -> usize {
        self.exercise_ids.len()
    }

    pub fn k(&self) -> usize {
        self.concept_ids.len()
    }

    pub fn train(&self) -> Result<&[Response]> {
        self.split
            .as_ref()
            .map(|s| s.train.as_slice())
            .ok_or_else(|| Error::Contract("dataset has not been split".into()))
    }

    pub fn test(&self) -> Result<&[Response]> {
        self.split
            .as_ref()
            .map(|s| s.test.as_slice())
            .ok_or_else(|| Error::Contract("dataset has not been split".into()))
    }

    /// Per-student shuffle and split; the train part of a student with `n`
    /// logs has [`train_count`] entries.
    pub fn split(mut self, ratio: f64, seed: u64) -> Result<Dataset> {
        if self.split.is_some() {
            return Err(Error::Contract("dataset is already split".into()));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::Config(format!(
                "split ratio must lie in (0, 1), got {ratio}"
            )));
        }
        let mut by_student: Vec<Vec<Response>> = vec![Vec::new(); self.n()];
        for r in &self.logs {
            by_student[r.student].push(*r);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for mut logs in by_student {
            logs.shuffle(&mut rng);
            let cut = train_count(logs.len(), ratio);
            test.extend_from_slice(&logs[cut..]);
            logs.truncate(cut);
            train.extend(logs);
        }
        self.split = Some(Split {
            seed,
            ratio,
            train,
            test,
        });
        Ok(self)
    }

    /// Exercises each student answered in the training part.
    pub fn train_exercises_by_student(&self) -> Result<Vec<Vec<usize>>> {
        let mut out = vec![Vec::new(); self.n()];
        for r in self.train()? {
            out[r.student].push(r.exercise);
        }
        Ok(out)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            n: self.n(),
            m: self.m(),
            k: self.k(),
            student_ids: self.student_ids.clone(),
            exercise_ids: self.exercise_ids.clone(),
            concept_ids: self.concept_ids.clone(),
            source: self.source.clone(),
            min_logs: self.min_logs,
            split_seed: self.split.as_ref().map(|s| s.seed),
            split_ratio: self.split.as_ref().map(|s| s.ratio),
        }
    }

    fn write_logs(&self, path: &Path, logs: &[Response]) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["student_id", "exercise_id", "score"])
            .map_err(|e| csv_err(path, e))?;
        for r in logs {
            w.write_record([
                self.student_ids[r.student].as_str(),
                self.exercise_ids[r.exercise].as_str(),
                if r.score == 1 { "1" } else { "0" },
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_q(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec!["exercise_id".to_string()];
        header.extend(self.concept_ids.iter().cloned());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for (id, row) in self.exercise_ids.iter().zip(&self.q) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(u8::to_string));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes `logs.csv`, `q.csv`, `manifest.json` and, when split,
    /// `train.csv` and `test.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_logs(&dir.join("logs.csv"), &self.logs)?;
        self.write_q(&dir.join("q.csv"))?;
        if let Some(split) = &self.split {
            self.write_logs(&dir.join("train.csv"), &split.train)?;
            self.write_logs(&dir.join("test.csv"), &split.test)?;
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads back a directory written by [`Dataset::save`], using the
    /// manifest's id maps so dense ids are reproduced exactly.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| parse_err(&path, e.line(), e.to_string()))?;
        let (exercise_ids, concept_ids, q) = read_q(&dir.join("q.csv"))?;
        if exercise_ids != manifest.exercise_ids || concept_ids != manifest.concept_ids {
            return Err(Error::Integrity(
                "q.csv does not match the manifest id maps".into(),
            ));
        }
        let students: HashMap<&str, usize> = manifest
            .student_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let exercises: HashMap<&str, usize> = exercise_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let read = |name: &str| -> Result<Vec<Response>> {
            let p = dir.join(name);
            read_raw_logs(&p)?
                .into_iter()
                .map(|(s, e, score, line)| {
                    let student = *students.get(s.as_str()).ok_or_else(|| {
                        Error::Integrity(format!("{}:{line}: unknown student '{s}'", p.display()))
                    })?;
                    let exercise = *exercises.get(e.as_str()).ok_or_else(|| {
                        Error::Integrity(format!("{}:{line}: unknown exercise '{e}'", p.display()))
                    })?;
                    Ok(Response {
                        student,
                        exercise,
                        score,
                    })
                })
                .collect()
        };
        let logs = read("logs.csv")?;
        let split = match (manifest.split_seed, manifest.split_ratio) {
            (Some(seed), Some(ratio)) => Some(Split {
                seed,
                ratio,
                train: read("train.csv")?,
                test: read("test.csv")?,
            }),
            _ => None,
        };
        Ok(Dataset {
            student_ids: manifest.student_ids,
            exercise_ids,
            concept_ids,
            q,
            logs,
            split,
            source: manifest.source,
            min_logs: manifest.min_logs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    fn q_file(dir: &Path) -> std::path::PathBuf {
        let mut body = "exercise_id,c_0,c_1\n".to_string();
        for j in 0..20 {
            body += &format!("e{j},{},{}\n", j % 2, 1 - j % 2);
        }
        write(dir, "q.csv", &body)
    }

    fn logs_for(counts: &[(&str, usize)]) -> String {
        let mut body = "student_id,exercise_id,score\n".to_string();
        for (s, n) in counts {
            for j in 0..*n {
                body += &format!("{s},e{j},{}\n", j % 2);
            }
        }
        body
    }

    #[test]
    fn filter_threshold_is_inclusive_at_fifteen() {
        let dir = tempfile::tempdir().unwrap();
        let q = q_file(dir.path());
        let logs = write(
            dir.path(),
            "logs.csv",
            &logs_for(&[("a", 14), ("b", 15), ("c", 20)]),
        );
        let ds = load_logs(&logs, &q).unwrap();
        assert_eq!(ds.student_ids, vec!["b", "c"]);
        assert_eq!(ds.logs.len(), 35);
        assert_eq!(ds.m(), 20);
    }

    #[test]
    fn bad_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let q = q_file(dir.path());
        let mut body = logs_for(&[("a", 15)]);
        body += "a,e3,maybe\n";
        let logs = write(dir.path(), "logs.csv", &body);
        match load_logs(&logs, &q) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 17),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn integrity_errors() {
        let dir = tempfile::tempdir().unwrap();
        let q = q_file(dir.path());
        let logs = write(
            dir.path(),
            "logs.csv",
            "student_id,exercise_id,score\na,e99,1\n",
        );
        assert!(matches!(load_logs(&logs, &q), Err(Error::Integrity(_))));
        let empty_q = write(dir.path(), "q2.csv", "exercise_id,c_0\ne0,0\n");
        assert!(matches!(read_q(&empty_q), Err(Error::Integrity(_))));
    }

    #[test]
    fn duplicates_keep_the_last_score() {
        let dir = tempfile::tempdir().unwrap();
        let q = q_file(dir.path());
        let mut body = logs_for(&[("a", 15)]);
        body += "a,e0,1\n";
        let logs = write(dir.path(), "logs.csv", &body);
        let ds = load_logs(&logs, &q).unwrap();
        assert_eq!(ds.logs.len(), 15);
        assert_eq!(ds.logs[0].score, 1);
    }

    #[test]
    fn split_counts_round_half_up() {
        assert_eq!(train_count(10, 0.7), 7);
        assert_eq!(train_count(15, 0.7), 11);
        assert_eq!(train_count(20, 0.7), 14);
    }

    #[test]
    fn split_is_deterministic_and_rejects_resplit() {
        let dir = tempfile::tempdir().unwrap();
        let q = q_file(dir.path());
        let logs = write(dir.path(), "logs.csv", &logs_for(&[("a", 15), ("b", 20)]));
        let ds = load_logs(&logs, &q).unwrap();
        let a = ds.clone().split(0.7, 3).unwrap();
        let b = ds.split(0.7, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train().unwrap().len(), 11 + 14);
        assert!(matches!(a.split(0.7, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn batch_sizes() {
        let b = batches(300, 128, 1).unwrap();
        assert_eq!(
            b.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![128, 128, 44]
        );
        assert_eq!(batches(300, 1, 1).unwrap().len(), 300);
        assert_eq!(batches(300, 128, 9).unwrap(), batches(300, 128, 9).unwrap());
        assert!(batches(3, 0, 1).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let q = q_file(dir.path());
        let logs = write(dir.path(), "logs.csv", &logs_for(&[("x", 17), ("y", 16)]));
        let ds = load_logs(&logs, &q).unwrap().split(0.7, 11).unwrap();
        let out = dir.path().join("saved");
        ds.save(&out).unwrap();
        assert_eq!(Dataset::load(&out).unwrap(), ds);
    }
}

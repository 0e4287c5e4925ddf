//! Line-delimited dataset files.
//!
//! The first line is a header object
//! `{"env": "pendulum", "tier": "medium", "seed": 1, "obs_dim": 3, "act_dim": 1}`;
//! every following non-empty line is one transition
//! `{"s": [..], "a": [..], "r": .., "s2": [..], "done": false, "src": "offline"}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NormStats, Source, Transition};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub env: String,
    pub tier: String,
    pub seed: u64,
    pub obs_dim: usize,
    pub act_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub transitions: Vec<Transition>,
}

impl Dataset {
    pub fn stats(&self) -> Result<NormStats> {
        NormStats::from_transitions(&self.transitions, false)
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    s: Vec<f64>,
    a: Vec<f64>,
    r: f64,
    s2: Vec<f64>,
    done: bool,
    src: Source,
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, dataset).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dataset(w: &mut impl Write, dataset: &Dataset) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, &dataset.header)?;
    w.write_all(b"\n")?;
    for t in &dataset.transitions {
        let rec = Record { s: t.s.clone(), a: t.a.clone(), r: t.r, s2: t.s2.clone(), done: t.done, src: t.source };
        serde_json::to_writer(&mut *w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), &path.display().to_string())
}

pub fn read_dataset(reader: impl BufRead, origin: &str) -> Result<Dataset> {
    let err = |line: usize, msg: String| Error::Parse { path: origin.to_string(), line, msg };
    let mut lines = reader.lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| err(1, e.to_string()))?,
        None => return Err(err(1, "missing header line".into())),
    };
    let header: DatasetHeader = serde_json::from_str(&header_line).map_err(|e| err(1, format!("bad header: {e}")))?;

    let mut transitions = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| err(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| err(lineno, format!("malformed record: {e}")))?;
        if rec.s.len() != header.obs_dim || rec.s2.len() != header.obs_dim || rec.a.len() != header.act_dim {
            return Err(err(
                lineno,
                format!(
                    "dimension mismatch: header says obs {} / act {}, record has s {} / a {} / s2 {}",
                    header.obs_dim,
                    header.act_dim,
                    rec.s.len(),
                    rec.a.len(),
                    rec.s2.len()
                ),
            ));
        }
        if !rec.r.is_finite() {
            return Err(err(lineno, "non-finite reward".into()));
        }
        transitions.push(Transition { s: rec.s, a: rec.a, r: rec.r, s2: rec.s2, done: rec.done, source: rec.src });
    }
    Ok(Dataset { header, transitions })
}

/// Sidecar path for a dataset's statistics, `<dataset>.stats.json`.
pub fn stats_path(dataset: &Path) -> std::path::PathBuf {
    let mut p = dataset.as_os_str().to_owned();
    p.push(".stats.json");
    p.into()
}

pub fn save_stats(path: impl AsRef<Path>, stats: &NormStats) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(stats).expect("stats serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_stats(path: impl AsRef<Path>) -> Result<NormStats> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn header() -> DatasetHeader {
        DatasetHeader { env: "pendulum".into(), tier: "medium".into(), seed: 3, obs_dim: 3, act_dim: 1 }
    }

    #[test]
    fn round_trip_random_transitions() {
        let mut rng = rng_from_seed(1);
        let mut v = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random::<f64>() * 1e3 - 500.0).collect() };
        let transitions = (0..1000)
            .map(|i| Transition {
                s: v(3),
                a: v(1),
                r: v(1)[0],
                s2: v(3),
                done: i % 17 == 0,
                source: if i % 3 == 0 { Source::Model } else { Source::Offline },
            })
            .collect();
        let ds = Dataset { header: header(), transitions };
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        let back = read_dataset(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn header_only_file_is_empty_and_has_no_stats() {
        let text = serde_json::to_string(&header()).unwrap() + "\n";
        let ds = read_dataset(text.as_bytes(), "mem").unwrap();
        assert!(ds.transitions.is_empty());
        assert!(ds.stats().is_err());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let h = serde_json::to_string(&header()).unwrap();
        let good = r#"{"s":[1,2,3],"a":[0],"r":0,"s2":[1,2,3],"done":false,"src":"offline"}"#;
        let short = r#"{"s":[1,2],"a":[0],"r":0,"s2":[1,2,3],"done":false,"src":"offline"}"#;
        let text = format!("{h}\n{good}\n{short}\n");
        let e = read_dataset(text.as_bytes(), "d.jsonl").unwrap_err();
        assert!(e.to_string().starts_with("d.jsonl:3:"), "{e}");
        assert!(e.to_string().contains("dimension mismatch"));
        let text = format!("{h}\n{good}\n{good}\nnot json\n");
        let e = read_dataset(text.as_bytes(), "d.jsonl").unwrap_err();
        assert!(e.to_string().starts_with("d.jsonl:4:"), "{e}");
    }

    #[test]
    fn stats_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.stats.json");
        let st = NormStats {
            obs_mean: vec![0.1, -3.0],
            obs_std: vec![1.5, 1e-6],
            act_mean: Some(vec![0.0]),
            act_std: Some(vec![2.0]),
        };
        save_stats(&p, &st).unwrap();
        assert_eq!(load_stats(&p).unwrap(), st);
        assert_eq!(stats_path(Path::new("a/b.jsonl")), Path::new("a/b.jsonl.stats.json"));
    }
}

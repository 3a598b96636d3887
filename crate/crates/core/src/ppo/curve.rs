//! Tab-separated training-curve files of raw episode returns.

use std::io::Write;
use std::path::Path;

use super::{EpisodeRecord, PpoError};

const HEADER: &str = "episode\tenv\tseed\tend_step\tlen\traw_return\tavg_wait_s";

pub fn write_curve(path: &Path, records: &[EpisodeRecord]) -> Result<(), PpoError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{HEADER}")?;
    for (i, r) in records.iter().enumerate() {
        let wait = r.avg_wait_s.map_or("NA".to_string(), |v| v.to_string());
        writeln!(
            w,
            "{i}\t{}\t{}\t{}\t{}\t{}\t{wait}",
            r.env_id, r.seed, r.end_step, r.len, r.raw_return
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<Vec<EpisodeRecord>, PpoError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == HEADER => {}
        _ => {
            return Err(PpoError::BadCurve {
                line: 1,
                reason: "missing curve header".into(),
            })
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |reason: &str| PpoError::BadCurve {
            line: idx + 1,
            reason: reason.into(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(bad("expected 7 tab-separated fields"));
        }
        records.push(EpisodeRecord {
            env_id: fields[1].parse().map_err(|_| bad("bad env id"))?,
            seed: fields[2].parse().map_err(|_| bad("bad seed"))?,
            end_step: fields[3].parse().map_err(|_| bad("bad end step"))?,
            len: fields[4].parse().map_err(|_| bad("bad length"))?,
            raw_return: fields[5].parse().map_err(|_| bad("bad raw return"))?,
            avg_wait_s: match fields[6] {
                "NA" => None,
                v => Some(v.parse().map_err(|_| bad("bad waiting time"))?),
            },
        });
    }
    Ok(records)
}

//! Traffic CSV files: `slot,client_id,volume`, one row per client and slot.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use fedgcc_core::data::TrafficSeries;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

pub const HEADER: [&str; 3] = ["slot", "client_id", "volume"];

pub type SeriesMap = BTreeMap<String, TrafficSeries>;

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    slot: u64,
    client_id: String,
    volume: f64,
}

pub fn load_csv(path: &Path) -> Result<SeriesMap> {
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => AppError::MissingFile(path.to_path_buf()),
        _ => AppError::io(format!("cannot open {}", path.display()), e),
    })?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<SeriesMap> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| malformed(1, &e))?;
    if header.iter().ne(HEADER) {
        return Err(AppError::MalformedRow {
            line: 1,
            message: format!(
                "expected header {:?}, found {:?}",
                HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut rows: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, &e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record.deserialize(None).map_err(|e| malformed(line, &e))?;
        if !row.volume.is_finite() {
            return Err(AppError::MalformedRow {
                line,
                message: format!("volume {} is not finite", row.volume),
            });
        }
        if row.volume < 0.0 {
            return Err(AppError::NegativeVolume {
                line,
                volume: row.volume,
            });
        }
        rows.entry(row.client_id)
            .or_default()
            .push((row.slot, row.volume));
    }

    let mut out = SeriesMap::new();
    for (client, mut slots) in rows {
        slots.sort_by_key(|&(s, _)| s);
        for (expected, &(found, _)) in slots.iter().enumerate() {
            if found != expected as u64 {
                return Err(AppError::GapInSlots {
                    client,
                    expected: expected as u64,
                    found,
                });
            }
        }
        let volumes = slots.into_iter().map(|(_, v)| v).collect();
        out.insert(client.clone(), TrafficSeries::new(client, volumes)?);
    }
    Ok(out)
}

fn malformed(line: u64, e: &dyn std::fmt::Display) -> AppError {
    AppError::MalformedRow {
        line,
        message: e.to_string(),
    }
}

/// Rows are ordered by client id, then slot.
pub fn write_csv<W: Write>(writer: W, series: &SeriesMap) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    for s in series.values() {
        for (slot, &volume) in s.volumes.iter().enumerate() {
            w.serialize(Row {
                slot: slot as u64,
                client_id: s.client_id.clone(),
                volume,
            })
            .map_err(|e| AppError::io("cannot write csv row", e.into()))?;
        }
    }
    if series.is_empty() {
        w.write_record(HEADER)
            .map_err(|e| AppError::io("cannot write csv header", e.into()))?;
    }
    w.flush().map_err(|e| AppError::io("cannot flush csv", e))
}

pub fn save_csv(path: &Path, series: &SeriesMap) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| AppError::io(format!("cannot create {}", path.display()), e))?;
    write_csv(io::BufWriter::new(file), series)
}

/// SHA-256 of the canonical CSV encoding, as lowercase hex.
pub fn data_hash(series: &SeriesMap) -> Result<String> {
    let mut bytes = Vec::new();
    write_csv(&mut bytes, series)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SeriesMap> {
        read_csv(text.as_bytes())
    }

    #[test]
    fn reads_two_clients() {
        let data =
            parse("slot,client_id,volume\n0,a,1.5\n1,a,2\n2,a,3\n0,b,0\n2,b,1\n1,b,4\n").unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data["a"].volumes, vec![1.5, 2.0, 3.0]);
        assert_eq!(data["b"].volumes, vec![0.0, 4.0, 1.0]);
    }

    #[test]
    fn reports_bad_rows() {
        let err = parse("slot,client_id,volume\n0,a,1\n1,a,abc\n").unwrap_err();
        assert!(
            matches!(err, AppError::MalformedRow { line: 3, .. }),
            "{err:?}"
        );
        let err = parse("slot,client_id,volume\n0,a\n").unwrap_err();
        assert!(
            matches!(err, AppError::MalformedRow { line: 2, .. }),
            "{err:?}"
        );
        let err = parse("slot,client,volume\n").unwrap_err();
        assert!(
            matches!(err, AppError::MalformedRow { line: 1, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn reports_gaps_and_duplicates() {
        let err = parse("slot,client_id,volume\n0,a,1\n1,a,1\n3,a,1\n").unwrap_err();
        assert!(
            matches!(
                err,
                AppError::GapInSlots {
                    expected: 2,
                    found: 3,
                    ..
                }
            ),
            "{err:?}"
        );
        let err = parse("slot,client_id,volume\n0,a,1\n0,a,1\n").unwrap_err();
        assert!(
            matches!(
                err,
                AppError::GapInSlots {
                    expected: 1,
                    found: 0,
                    ..
                }
            ),
            "{err:?}"
        );
        let err = parse("slot,client_id,volume\n1,a,1\n").unwrap_err();
        assert!(
            matches!(
                err,
                AppError::GapInSlots {
                    expected: 0,
                    found: 1,
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn rejects_negative_volume() {
        let err = parse("slot,client_id,volume\n0,a,-0.5\n").unwrap_err();
        assert!(
            matches!(err, AppError::NegativeVolume { line: 2, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn round_trips() {
        let data = parse("slot,client_id,volume\n0,a,0.1\n1,a,2.5\n0,b,3\n1,b,1e-7\n").unwrap();
        let mut out = Vec::new();
        write_csv(&mut out, &data).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("slot,client_id,volume\n0,a,0.1\n"));
        assert!(!text.contains('\r'));
        assert_eq!(parse(&text).unwrap(), data);
    }

    #[test]
    fn hash_depends_on_content() {
        let a = parse("slot,client_id,volume\n0,a,1\n").unwrap();
        let b = parse("slot,client_id,volume\n0,a,2\n").unwrap();
        assert_eq!(data_hash(&a).unwrap().len(), 64);
        assert_ne!(data_hash(&a).unwrap(), data_hash(&b).unwrap());
    }
}

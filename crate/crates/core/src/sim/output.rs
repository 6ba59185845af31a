use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{SimStats, SlotRecord, SweepTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Sweep CSV header: the two grid keys, then one column per metric.
pub const SWEEP_COLUMNS: [&str; 8] = [
    "distance",
    "xi",
    "mean_rate",
    "coop_probability",
    "mean_relays",
    "energy_per_packet",
    "throughput_to_energy",
    "direct_equivalent_energy",
];

/// Per-slot CSV header.
pub const SLOT_COLUMNS: [&str; 13] = [
    "slot",
    "user",
    "rate",
    "cooperating",
    "relays",
    "requested_packets",
    "requested_x",
    "granted_x",
    "sent_packets",
    "delivered_packets",
    "delivered_utility",
    "energy_source",
    "energy_relays",
];

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn num(x: f64) -> String {
    format!("{x:.9}")
}

pub fn write_sweep_csv(path: &Path, table: &SweepTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(SWEEP_COLUMNS).map_err(&err)?;
    for c in &table.cells {
        w.write_record([
            num(c.distance),
            num(c.xi),
            num(c.mean_rate),
            num(c.coop_probability),
            num(c.mean_relays),
            num(c.energy_per_packet),
            num(c.throughput_to_energy),
            num(c.direct_equivalent_energy),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_slot_csv(path: &Path, records: &[SlotRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(SLOT_COLUMNS).map_err(&err)?;
    for r in records {
        w.write_record([
            r.slot.to_string(),
            r.user.to_string(),
            num(r.rate),
            u8::from(r.cooperating).to_string(),
            r.relays.to_string(),
            r.requested_packets.to_string(),
            num(r.requested_x),
            num(r.granted_x),
            r.sent_packets.to_string(),
            r.delivered_packets.to_string(),
            num(r.delivered_utility),
            format!("{:.12e}", r.energy_source),
            format!("{:.12e}", r.energy_relays),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(io_err)?;
    w.flush().map_err(io_err)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_summary(path: &Path) -> Result<SimStats> {
    read_json(path)
}

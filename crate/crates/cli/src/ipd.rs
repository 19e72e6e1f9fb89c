//! Individual patient data CSV: header
//! `trial_id,patient_id,treatment,surrogate,time,event`.

use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::path::Path;

use surrogacy_core::data::{PatientRecord, TrialDataset};

use crate::error::{CliError, Result};
use crate::output::fmt_f64;

pub const IPD_HEADER: [&str; 6] = ["trial_id", "patient_id", "treatment", "surrogate", "time", "event"];

pub fn ingest_ipd(path: &Path) -> Result<Vec<TrialDataset>> {
    let file =
        std::fs::File::open(path).map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    read_ipd(file)
}

fn flag(value: &str, column: &str, row: usize) -> Result<u8> {
    match value {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(CliError::data(format!("row {row}: {column} must be 0 or 1, got {value:?}"))),
    }
}

/// Parse IPD rows; trials keep the order of their first appearance.
pub fn read_ipd(reader: impl Read) -> Result<Vec<TrialDataset>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| CliError::data(format!("row 1: cannot read header: {e}")))?
        .clone();
    if header.is_empty() {
        return Err(CliError::data("row 1: the file is empty"));
    }
    if header.iter().ne(IPD_HEADER.iter().copied()) {
        return Err(CliError::data(format!(
            "row 1: header must be {}, got {}",
            IPD_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<PatientRecord>> = HashMap::new();
    let mut keys: HashSet<(String, String)> = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| CliError::data(format!("row {row}: {e}")))?;
        if rec.len() != 6 {
            return Err(CliError::data(format!("row {row}: expected 6 fields, got {}", rec.len())));
        }
        let trial = rec[0].to_string();
        let patient = rec[1].to_string();
        if trial.is_empty() || patient.is_empty() {
            return Err(CliError::data(format!("row {row}: trial_id and patient_id must be non-empty")));
        }
        let treatment = flag(&rec[2], "treatment", row)?;
        let surrogate = flag(&rec[3], "surrogate", row)?;
        let time: f64 = rec[4]
            .parse()
            .map_err(|_| CliError::data(format!("row {row}: time {:?} is not a number", &rec[4])))?;
        if !(time > 0.0 && time.is_finite()) {
            return Err(CliError::data(format!("row {row}: time must be positive and finite, got {time}")));
        }
        let event = flag(&rec[5], "event", row)? == 1;
        if !keys.insert((trial.clone(), patient.clone())) {
            return Err(CliError::data(format!("row {row}: duplicate patient {patient} in trial {trial}")));
        }
        if !rows.contains_key(&trial) {
            order.push(trial.clone());
        }
        rows.entry(trial).or_default().push(PatientRecord {
            time,
            event,
            surrogate,
            treatment,
        });
    }
    if order.is_empty() {
        return Err(CliError::data("the file has no data rows"));
    }
    order
        .into_iter()
        .map(|id| {
            let patients = rows.remove(&id).unwrap_or_default();
            let t = TrialDataset::new(id.clone(), patients).map_err(|e| CliError::data(format!("trial {id}: {e}")))?;
            if !t.has_both_arms() {
                return Err(CliError::data(format!("trial {id} has only one treatment arm")));
            }
            Ok(t)
        })
        .collect()
}

/// Write trials in IPD format; patient ids are 1-based positions.
pub fn write_ipd(trials: &[TrialDataset]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(IPD_HEADER).expect("in-memory write");
    for t in trials {
        for (j, p) in t.patients.iter().enumerate() {
            w.write_record([
                t.trial_id.as_str(),
                &(j + 1).to_string(),
                &p.treatment.to_string(),
                &p.surrogate.to_string(),
                &fmt_f64(p.time),
                if p.event { "1" } else { "0" },
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// One line per trial: size, events, per-arm response rates, censoring.
pub fn trial_summary(t: &TrialDataset) -> String {
    let rate = |treated: bool| {
        let (n, r) = t
            .arm(treated)
            .fold((0usize, 0usize), |(n, r), p| (n + 1, r + usize::from(p.is_responder())));
        r as f64 / n as f64
    };
    format!(
        "{}: n={} events={} response control={:.3} treated={:.3} censored={:.3}",
        t.trial_id,
        t.n(),
        t.n_events(),
        rate(false),
        rate(true),
        t.censored_fraction()
    )
}

use std::io::{Read, Write};

use super::{AdaError, Aggregate, ComparisonTable, InteractionRecord};
use crate::{Agreement, Choice};

pub const TRACE_CSV_HEADER: [&str; 26] = [
    "operator",
    "game_index",
    "game_id",
    "trial",
    "v_ha",
    "v_la",
    "v_pha",
    "v_hb",
    "v_lb",
    "v_phb",
    "initial",
    "predicted",
    "predicted_prob_a",
    "suggestion",
    "optimal",
    "agreement",
    "reliance",
    "indicator_reliance",
    "final",
    "payoff",
    "foregone",
    "capability",
    "rho",
    "preference",
    "indicator_preference",
    "ambiguous",
];

fn bit(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn csv_err(e: csv::Error) -> AdaError {
    AdaError::Invalid(format!("trace csv: {e}"))
}

/// Writes records with `0/1` flags and `-1/+1` agreement.
pub fn write_trace_csv<'a, W, I>(out: W, records: I) -> Result<(), AdaError>
where
    W: Write,
    I: IntoIterator<Item = &'a InteractionRecord>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_CSV_HEADER).map_err(csv_err)?;
    for r in records {
        let mut row: Vec<String> =
            vec![r.operator.to_string(), r.game_index.to_string(), r.game_id.to_string(), r.trial.to_string()];
        row.extend(r.context.iter().map(|v| v.to_string()));
        row.extend([
            r.initial.to_string(),
            r.predicted.to_string(),
            r.predicted_prob_a.to_string(),
            r.suggestion.to_string(),
            r.optimal.to_string(),
            r.agreement.as_i8().to_string(),
            bit(r.reliance).into(),
            bit(r.indicator_reliance).into(),
            r.final_choice.to_string(),
            r.payoff.to_string(),
            r.foregone.to_string(),
            r.capability.to_string(),
            bit(r.rho).into(),
            r.preference.to_string(),
            r.indicator_preference.to_string(),
            bit(r.ambiguous).into(),
        ]);
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(row: &csv::StringRecord, idx: usize, line: u64) -> Result<T, AdaError>
where
    T::Err: std::fmt::Display,
{
    let raw = row.get(idx).unwrap_or("");
    raw.trim()
        .parse()
        .map_err(|e| AdaError::Invalid(format!("trace line {line}, column {}: {raw:?}: {e}", TRACE_CSV_HEADER[idx])))
}

fn parse_bit(row: &csv::StringRecord, idx: usize, line: u64) -> Result<bool, AdaError> {
    match row.get(idx).map(str::trim) {
        Some("1") => Ok(true),
        Some("0") => Ok(false),
        other => Err(AdaError::Invalid(format!(
            "trace line {line}, column {}: expected 0 or 1, got {other:?}",
            TRACE_CSV_HEADER[idx]
        ))),
    }
}

/// Reads a trace written by [`write_trace_csv`]. Columns are located by
/// name; a missing column is an error naming it.
pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<InteractionRecord>, AdaError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let mut index = [0usize; TRACE_CSV_HEADER.len()];
    let mut missing = Vec::new();
    for (i, name) in TRACE_CSV_HEADER.iter().enumerate() {
        match headers.iter().position(|h| h.trim() == *name) {
            Some(p) => index[i] = p,
            None => missing.push(*name),
        }
    }
    if !missing.is_empty() {
        return Err(AdaError::Invalid(format!("trace is missing columns: {}", missing.join(", "))));
    }
    let mut out = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let raw = row.map_err(csv_err)?;
        let line = n as u64 + 2;
        let row: csv::StringRecord = index.iter().map(|&i| raw.get(i).unwrap_or("")).collect();
        let agreement: i8 = parse_field(&row, 15, line)?;
        let mut context = [0.0; 6];
        for (k, v) in context.iter_mut().enumerate() {
            *v = parse_field(&row, 4 + k, line)?;
        }
        out.push(InteractionRecord {
            operator: parse_field(&row, 0, line)?,
            game_index: parse_field(&row, 1, line)?,
            game_id: parse_field(&row, 2, line)?,
            trial: parse_field(&row, 3, line)?,
            context,
            initial: parse_field::<Choice>(&row, 10, line)?,
            predicted: parse_field::<Choice>(&row, 11, line)?,
            predicted_prob_a: parse_field(&row, 12, line)?,
            suggestion: parse_field::<Choice>(&row, 13, line)?,
            optimal: parse_field::<Choice>(&row, 14, line)?,
            agreement: Agreement::from_i8(agreement).ok_or_else(|| {
                AdaError::Invalid(format!("trace line {line}, column agreement: expected -1 or 1, got {agreement}"))
            })?,
            reliance: parse_bit(&row, 16, line)?,
            indicator_reliance: parse_bit(&row, 17, line)?,
            final_choice: parse_field::<Choice>(&row, 18, line)?,
            payoff: parse_field(&row, 19, line)?,
            foregone: parse_field(&row, 20, line)?,
            capability: parse_field(&row, 21, line)?,
            rho: parse_bit(&row, 22, line)?,
            preference: parse_field(&row, 23, line)?,
            indicator_preference: parse_field(&row, 24, line)?,
            ambiguous: parse_bit(&row, 25, line)?,
        });
    }
    Ok(out)
}

/// Aggregate JSON, optionally carrying a comparison table.
pub fn write_aggregate_json<W: Write>(
    out: W,
    aggregate: &Aggregate,
    comparison: Option<&ComparisonTable>,
) -> Result<(), AdaError> {
    #[derive(serde::Serialize)]
    struct Doc<'a> {
        #[serde(flatten)]
        aggregate: &'a Aggregate,
        mean_reliance_per_game: Vec<f64>,
        std_reliance_per_game: Vec<f64>,
        mean_rho_per_game: Vec<f64>,
        std_rho_per_game: Vec<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        comparison: Option<&'a ComparisonTable>,
    }
    let g = &aggregate.per_game;
    let doc = Doc {
        aggregate,
        mean_reliance_per_game: g.iter().map(|x| x.mean_reliance).collect(),
        std_reliance_per_game: g.iter().map(|x| x.std_reliance).collect(),
        mean_rho_per_game: g.iter().map(|x| x.mean_rho).collect(),
        std_rho_per_game: g.iter().map(|x| x.std_rho).collect(),
        comparison,
    };
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| AdaError::Invalid(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Plot series: one row per game with 1-based game numbers.
pub fn write_curves_csv<W: Write>(out: W, aggregate: &Aggregate) -> Result<(), AdaError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["game", "mean_reliance", "std_reliance", "mean_rho", "std_rho"]).map_err(csv_err)?;
    for g in &aggregate.per_game {
        w.write_record([
            (g.game_index + 1).to_string(),
            g.mean_reliance.to_string(),
            g.std_reliance.to_string(),
            g.mean_rho.to_string(),
            g.std_rho.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

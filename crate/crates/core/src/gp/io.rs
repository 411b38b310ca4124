//! CSV formats.
//!
//! * measurements: `vessel_id,x,t,u`
//! * queries: `vessel_id,x,t`
//! * posterior: `vessel_id,x,t,mean,std`

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{MeasurementSet, PosteriorField};
use crate::error::{Error, Result};
use crate::grid::SpaceTimePoint;
use crate::vasc_model::VesselId;

#[derive(Serialize, Deserialize)]
struct MeasurementRow {
    vessel_id: VesselId,
    x: f64,
    t: f64,
    u: f64,
}

#[derive(Serialize, Deserialize)]
struct QueryRow {
    vessel_id: VesselId,
    x: f64,
    t: f64,
}

#[derive(Serialize)]
struct PosteriorRow {
    vessel_id: VesselId,
    x: f64,
    t: f64,
    mean: f64,
    std: f64,
}

fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(input: R, what: &str) -> Result<Vec<T>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    rd.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Parse(format!("{what} CSV row {}: {e}", i + 1))))
        .collect()
}

fn write_rows<T: Serialize, W: Write>(out: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Numerical(format!("csv write failed: {e}"));
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Numerical(format!("csv write failed: {e}")))
}

pub fn read_measurements<R: Read>(input: R) -> Result<MeasurementSet> {
    let rows: Vec<MeasurementRow> = read_rows(input, "measurement")?;
    let (points, values) = rows.into_iter().map(|r| (SpaceTimePoint::new(r.vessel_id, r.x, r.t), r.u)).unzip();
    MeasurementSet::new(points, values)
}

pub fn write_measurements<W: Write>(out: W, mset: &MeasurementSet) -> Result<()> {
    write_rows(
        out,
        mset.points.iter().zip(&mset.values).map(|(p, u)| MeasurementRow {
            vessel_id: p.vessel,
            x: p.x,
            t: p.t,
            u: *u,
        }),
    )
}

pub fn read_queries<R: Read>(input: R) -> Result<Vec<SpaceTimePoint>> {
    let rows: Vec<QueryRow> = read_rows(input, "query")?;
    Ok(rows.into_iter().map(|r| SpaceTimePoint::new(r.vessel_id, r.x, r.t)).collect())
}

pub fn write_queries<W: Write>(out: W, points: &[SpaceTimePoint]) -> Result<()> {
    write_rows(
        out,
        points.iter().map(|p| QueryRow {
            vessel_id: p.vessel,
            x: p.x,
            t: p.t,
        }),
    )
}

pub fn write_posterior<W: Write>(out: W, field: &PosteriorField) -> Result<()> {
    write_rows(
        out,
        field
            .points
            .iter()
            .zip(field.mean.iter().zip(&field.std))
            .map(|(p, (mean, std))| PosteriorRow {
                vessel_id: p.vessel,
                x: p.x,
                t: p.t,
                mean: *mean,
                std: *std,
            }),
    )
}

//! File formats shared by the CLI and the Python bindings.
//!
//! * Measurement CSV: `x,y,z,x2,y2,z2,value,freq,time`, unused columns empty.
//!   An optional leading `# unit=<u> noise_variance=<v>` comment carries the
//!   set's metadata.
//! * GridMap file: one JSON header line (`region`, `counts`, `unit`) followed by
//!   the value matrix as CSV (last grid axis along columns).
//! * PSD CSV: `x,y,z,f_index,value` (long format).
//! * Snapshot CSV: `time,sensor_index,value`; sensor graph edge list `a,b`.
//! * Quantized CSV: `x,y,z,branch,code`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Grid, GridMap, Location, Region, Unit};
use crate::measurement::{Measurement, MeasurementSet};

pub const MEASUREMENT_HEADER: [&str; 9] = ["x", "y", "z", "x2", "y2", "z2", "value", "freq", "time"];

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

fn coord_fields(loc: Option<&Location>) -> [String; 3] {
    let mut out = [String::new(), String::new(), String::new()];
    if let Some(l) = loc {
        for (i, c) in l.coords().iter().enumerate() {
            out[i] = fmt_f(*c);
        }
    }
    out
}

fn parse_coords(fields: &[&str]) -> Result<Option<Location>> {
    let mut coords = Vec::new();
    let mut seen_empty = false;
    for f in fields {
        let f = f.trim();
        if f.is_empty() {
            seen_empty = true;
            continue;
        }
        if seen_empty {
            return invalid("coordinate columns must be filled left to right");
        }
        coords.push(parse_f(f)?);
    }
    if coords.is_empty() {
        Ok(None)
    } else {
        Ok(Some(Location::new(&coords)?))
    }
}

fn parse_f(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidInput(format!("not a number: {s:?}")))
}

fn parse_opt_usize(s: &str) -> Result<Option<usize>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<usize>()
        .map(Some)
        .map_err(|_| Error::InvalidInput(format!("not an index: {s:?}")))
}

fn unit_name(u: Unit) -> &'static str {
    match u {
        Unit::Watts => "watts",
        Unit::Db => "db",
        Unit::DbSquared => "db2",
        Unit::Unitless => "unitless",
    }
}

fn parse_unit(s: &str) -> Result<Unit> {
    match s {
        "watts" => Ok(Unit::Watts),
        "db" => Ok(Unit::Db),
        "db2" => Ok(Unit::DbSquared),
        "unitless" => Ok(Unit::Unitless),
        other => invalid(format!("unknown unit {other:?}")),
    }
}

pub fn write_measurements<W: Write>(set: &MeasurementSet, mut w: W) -> Result<()> {
    writeln!(
        w,
        "# unit={} noise_variance={}",
        unit_name(set.unit()),
        fmt_f(set.noise_variance())
    )?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(MEASUREMENT_HEADER)?;
    for m in set.measurements() {
        let a = coord_fields(Some(&m.location));
        let b = coord_fields(m.second_location.as_ref());
        let freq = m.frequency_index.map(|f| f.to_string()).unwrap_or_default();
        let time = m.time_index.map(|t| t.to_string()).unwrap_or_default();
        wr.write_record([
            &a[0], &a[1], &a[2], &b[0], &b[1], &b[2], &fmt_f(m.value), &freq, &time,
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a measurement CSV. Metadata from the comment line takes precedence
/// over `default_unit` / `default_noise`.
pub fn read_measurements<R: Read>(r: R, default_unit: Unit, default_noise: f64) -> Result<MeasurementSet> {
    let mut reader = BufReader::new(r);
    let mut unit = default_unit;
    let mut noise = default_noise;
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let mut rest = String::new();
    if let Some(meta) = first.trim().strip_prefix('#') {
        for kv in meta.split_whitespace() {
            match kv.split_once('=') {
                Some(("unit", v)) => unit = parse_unit(v)?,
                Some(("noise_variance", v)) => noise = parse_f(v)?,
                _ => {}
            }
        }
    } else {
        rest.push_str(&first);
    }
    reader.read_to_string(&mut rest)?;
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
    let header: Vec<String> = rd.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != MEASUREMENT_HEADER {
        return invalid(format!("unexpected measurement header {header:?}"));
    }
    let mut ms = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f: Vec<&str> = rec.iter().collect();
        if f.len() != 9 {
            return invalid("measurement rows must have 9 columns");
        }
        let location = parse_coords(&f[0..3])?
            .ok_or_else(|| Error::InvalidInput("measurement without a location".into()))?;
        ms.push(Measurement {
            location,
            second_location: parse_coords(&f[3..6])?,
            value: parse_f(f[6])?,
            frequency_index: parse_opt_usize(f[7])?,
            time_index: parse_opt_usize(f[8])?,
        });
    }
    MeasurementSet::new(ms, noise, unit)
}

#[derive(Serialize, Deserialize)]
struct GridMapHeader {
    region: Region,
    counts: Vec<usize>,
    unit: Unit,
}

pub fn write_grid_map<W: Write>(map: &GridMap, mut w: W) -> Result<()> {
    let header = GridMapHeader {
        region: map.grid().region().clone(),
        counts: map.grid().counts().to_vec(),
        unit: map.unit(),
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    let cols = *map.grid().counts().last().expect("grid has at least one axis");
    for row in map.values().chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| fmt_f(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_grid_map<R: Read>(r: R) -> Result<GridMap> {
    let mut reader = BufReader::new(r);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let header: GridMapHeader = serde_json::from_str(first.trim())?;
    let grid = Grid::new(header.region, header.counts)?;
    let mut values = Vec::with_capacity(grid.len());
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        for f in line.split(',') {
            values.push(parse_f(f)?);
        }
    }
    GridMap::new(grid, values, header.unit)
}

/// One PSD observation per location: `psd[f]` for each frequency index.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdRecord {
    pub location: Location,
    pub psd: Vec<f64>,
}

pub fn write_psd_csv<W: Write>(records: &[PsdRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "y", "z", "f_index", "value"])?;
    for r in records {
        let c = coord_fields(Some(&r.location));
        for (j, v) in r.psd.iter().enumerate() {
            wr.write_record([&c[0], &c[1], &c[2], &j.to_string(), &fmt_f(*v)])?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn read_psd_csv<R: Read>(r: R) -> Result<Vec<PsdRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    // Preserve first-appearance order of locations.
    let mut order: Vec<Location> = Vec::new();
    let mut by_loc: Vec<BTreeMap<usize, f64>> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f: Vec<&str> = rec.iter().collect();
        if f.len() != 5 {
            return invalid("PSD rows must have 5 columns");
        }
        let loc = parse_coords(&f[0..3])?
            .ok_or_else(|| Error::InvalidInput("PSD row without a location".into()))?;
        let j = parse_opt_usize(f[3])?
            .ok_or_else(|| Error::InvalidInput("PSD row without a frequency index".into()))?;
        let v = parse_f(f[4])?;
        let slot = match order.iter().position(|l| *l == loc) {
            Some(i) => i,
            None => {
                order.push(loc);
                by_loc.push(BTreeMap::new());
                order.len() - 1
            }
        };
        by_loc[slot].insert(j, v);
    }
    order
        .into_iter()
        .zip(by_loc)
        .map(|(location, m)| {
            let f = m.len();
            if m.keys().copied().ne(0..f) {
                return invalid("PSD frequency indices must be contiguous from 0");
            }
            Ok(PsdRecord {
                location,
                psd: m.into_values().collect(),
            })
        })
        .collect()
}

/// A `time,sensor_index,value` row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnapshotRow {
    pub time: usize,
    pub sensor: usize,
    pub value: f64,
}

pub fn write_snapshots_csv<W: Write>(rows: &[SnapshotRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["time", "sensor_index", "value"])?;
    for r in rows {
        wr.write_record([r.time.to_string(), r.sensor.to_string(), fmt_f(r.value)])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_snapshots_csv<R: Read>(r: R) -> Result<Vec<SnapshotRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return invalid("snapshot rows must have 3 columns");
        }
        out.push(SnapshotRow {
            time: parse_opt_usize(&rec[0])?.ok_or_else(|| Error::InvalidInput("missing time".into()))?,
            sensor: parse_opt_usize(&rec[1])?.ok_or_else(|| Error::InvalidInput("missing sensor".into()))?,
            value: parse_f(&rec[2])?,
        });
    }
    Ok(out)
}

pub fn read_edge_list<R: Read>(r: R) -> Result<Vec<(usize, usize)>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return invalid("edge rows must have 2 columns");
        }
        // Tolerate a textual header row.
        let (Ok(a), Ok(b)) = (rec[0].trim().parse::<usize>(), rec[1].trim().parse::<usize>()) else {
            if out.is_empty() {
                continue;
            }
            return invalid("edge endpoints must be indices");
        };
        out.push((a, b));
    }
    Ok(out)
}

pub fn write_edge_list<W: Write>(edges: &[(usize, usize)], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["a", "b"])?;
    for (a, b) in edges {
        wr.write_record([a.to_string(), b.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

/// A `x,y,z,branch,code` row.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedRow {
    pub location: Location,
    pub branch: usize,
    pub code: usize,
}

pub fn write_quantized_csv<W: Write>(rows: &[QuantizedRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "y", "z", "branch", "code"])?;
    for r in rows {
        let c = coord_fields(Some(&r.location));
        wr.write_record([&c[0], &c[1], &c[2], &r.branch.to_string(), &r.code.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_quantized_csv<R: Read>(r: R) -> Result<Vec<QuantizedRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f: Vec<&str> = rec.iter().collect();
        if f.len() != 5 {
            return invalid("quantized rows must have 5 columns");
        }
        out.push(QuantizedRow {
            location: parse_coords(&f[0..3])?
                .ok_or_else(|| Error::InvalidInput("row without a location".into()))?,
            branch: parse_opt_usize(f[3])?.ok_or_else(|| Error::InvalidInput("missing branch".into()))?,
            code: parse_opt_usize(f[4])?.ok_or_else(|| Error::InvalidInput("missing code".into()))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gridmap_roundtrip_keeps_unit() {
        let g = Grid::new(Region::rect(0.0, 0.0, 3.0, 2.0).unwrap(), vec![3, 2]).unwrap();
        for unit in [Unit::Watts, Unit::Db, Unit::DbSquared, Unit::Unitless] {
            let m = GridMap::new(g.clone(), vec![0.1, -2.5, 3.0, 1e-30, 7.0, 0.3333333333333333], unit).unwrap();
            let mut buf = Vec::new();
            write_grid_map(&m, &mut buf).unwrap();
            let back = read_grid_map(buf.as_slice()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn measurement_csv_layout() {
        let set = MeasurementSet::new(
            vec![Measurement::link(Location::xy(0.0, 1.0), Location::xy(2.0, 3.0), -4.5)],
            0.25,
            Unit::Db,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_measurements(&set, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# unit=db noise_variance=0.25");
        assert_eq!(lines[1], "x,y,z,x2,y2,z2,value,freq,time");
        assert_eq!(lines[2], "0,1,,2,3,,-4.5,,");
    }

    #[test]
    fn measurement_csv_without_metadata() {
        let text = "x,y,z,x2,y2,z2,value,freq,time\n1.5,,,,,,2,3,\n";
        let set = read_measurements(text.as_bytes(), Unit::Watts, 0.1).unwrap();
        assert_eq!(set.unit(), Unit::Watts);
        assert_eq!(set.noise_variance(), 0.1);
        assert_eq!(set.measurements()[0].location, Location::x(1.5));
        assert_eq!(set.measurements()[0].frequency_index, Some(3));
    }

    #[test]
    fn bad_header_rejected() {
        let text = "a,b\n1,2\n";
        assert!(read_measurements(text.as_bytes(), Unit::Watts, 0.0).is_err());
    }

    #[test]
    fn psd_roundtrip() {
        let recs = vec![
            PsdRecord { location: Location::xy(0.0, 0.0), psd: vec![1.0, 2.0, 3.0] },
            PsdRecord { location: Location::xy(1.0, 0.5), psd: vec![0.0, 0.5, 0.25] },
        ];
        let mut buf = Vec::new();
        write_psd_csv(&recs, &mut buf).unwrap();
        assert_eq!(read_psd_csv(buf.as_slice()).unwrap(), recs);
    }

    fn arb_location() -> impl Strategy<Value = Location> {
        prop::collection::vec(-1e6f64..1e6, 1..=3).prop_map(|c| Location::new(&c).unwrap())
    }

    proptest! {
        #[test]
        fn measurement_set_roundtrip(
            dim in 1usize..=3,
            rows in prop::collection::vec((arb_location(), -1e9f64..1e9, prop::option::of(0usize..64), prop::option::of(0usize..64)), 0..20),
            noise in 0.0f64..10.0,
        ) {
            let ms: Vec<Measurement> = rows
                .into_iter()
                .map(|(l, v, f, t)| {
                    let c: Vec<f64> = (0..dim).map(|i| l.coords().get(i).copied().unwrap_or(0.5)).collect();
                    Measurement { location: Location::new(&c).unwrap(), value: v, second_location: None, frequency_index: f, time_index: t }
                })
                .collect();
            let set = MeasurementSet::new(ms, noise, Unit::Db).unwrap();
            let mut buf = Vec::new();
            write_measurements(&set, &mut buf).unwrap();
            let back = read_measurements(buf.as_slice(), Unit::Watts, 0.0).unwrap();
            prop_assert_eq!(back, set);
        }
    }
}

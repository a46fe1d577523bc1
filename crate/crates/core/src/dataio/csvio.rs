//! CSV interchange: one row per `(sample, timestep)`, dynamic channels as
//! `<group>_<band>` columns, per-group `<group>_present` flags, and the
//! per-sample static columns repeated on every row of the sample.

use std::collections::HashMap;
use std::path::Path;

use super::groups::{ChannelGroup, DYNAMIC_CHANNELS, N_DYNAMIC_GROUPS};
use super::sample::{Dataset, PixelSample};
use super::DataError;

const STATIC_COLUMNS: [&str; 7] = ["label", "start_month", "lat", "lon", "TG_elevation", "TG_slope", "TG_present"];

pub fn header() -> Vec<String> {
    let mut h = vec!["sample".to_string(), "t".to_string(), "month".to_string()];
    for g in ChannelGroup::DYNAMIC {
        if !g.is_categorical() {
            h.extend(g.spec().bands.iter().map(|b| format!("{}_{}", g.name(), b)));
        }
    }
    h.push("DW_class".into());
    h.extend(ChannelGroup::DYNAMIC.iter().map(|g| format!("{}_present", g.name())));
    h.extend(STATIC_COLUMNS.iter().map(|s| s.to_string()));
    h
}

pub fn write_csv_to<W: std::io::Write>(w: W, ds: &Dataset) -> Result<(), DataError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header())?;
    for (i, (s, label)) in ds.samples.iter().zip(&ds.labels).enumerate() {
        for t in 0..s.timesteps() {
            let mut rec = vec![i.to_string(), t.to_string(), s.months[t].to_string()];
            rec.extend(s.continuous[t].iter().map(|v| v.to_string()));
            rec.push(s.dw[t].to_string());
            rec.extend(s.presence[t].iter().map(|&p| (p as u8).to_string()));
            rec.push(label.map(|l| l.to_string()).unwrap_or_default());
            rec.push(s.start_month.to_string());
            rec.push(s.lat.to_string());
            rec.push(s.lon.to_string());
            rec.push(s.tg[0].to_string());
            rec.push(s.tg[1].to_string());
            rec.push((s.tg_present as u8).to_string());
            wr.write_record(&rec)?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn write_csv(path: impl AsRef<Path>, ds: &Dataset) -> Result<(), DataError> {
    write_csv_to(std::fs::File::create(path)?, ds)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, col: usize, name: &str, line: usize) -> Result<T, DataError> {
    let raw = rec.get(col).unwrap_or("");
    raw.trim()
        .parse()
        .map_err(|_| DataError::Invalid(format!("row {line}: cannot parse {name} = {raw:?}")))
}

fn flag(rec: &csv::StringRecord, col: usize, name: &str, line: usize) -> Result<bool, DataError> {
    match field::<u8>(rec, col, name, line)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(DataError::Invalid(format!("row {line}: {name} must be 0 or 1, got {v}"))),
    }
}

pub fn read_csv_from<R: std::io::Read>(r: R) -> Result<Dataset, DataError> {
    let mut rd = csv::Reader::from_reader(r);
    let cols: HashMap<String, usize> =
        rd.headers()?.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect();
    let expected = header();
    if let Some(missing) = expected.iter().find(|h| !cols.contains_key(*h)) {
        return Err(DataError::LayoutMismatch(format!("missing column {missing}")));
    }
    let col = |name: &str| cols[name];
    let mut samples: Vec<PixelSample> = Vec::new();
    let mut labels = Vec::new();
    let mut last_id: Option<u64> = None;
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        let id: u64 = field(&rec, col("sample"), "sample", line)?;
        if last_id != Some(id) {
            let label_raw = rec.get(col("label")).unwrap_or("").trim();
            let label = if label_raw.is_empty() { None } else { Some(field(&rec, col("label"), "label", line)?) };
            samples.push(PixelSample {
                continuous: Vec::new(),
                dw: Vec::new(),
                tg: [field(&rec, col("TG_elevation"), "TG_elevation", line)?, field(&rec, col("TG_slope"), "TG_slope", line)?],
                lat: field(&rec, col("lat"), "lat", line)?,
                lon: field(&rec, col("lon"), "lon", line)?,
                start_month: field(&rec, col("start_month"), "start_month", line)?,
                months: Vec::new(),
                presence: Vec::new(),
                tg_present: flag(&rec, col("TG_present"), "TG_present", line)?,
            });
            labels.push(label);
            last_id = Some(id);
        }
        let s = samples.last_mut().unwrap();
        let t: usize = field(&rec, col("t"), "t", line)?;
        if t != s.months.len() {
            return Err(DataError::Invalid(format!("row {line}: sample {id} timestep {t} out of order")));
        }
        s.months.push(field(&rec, col("month"), "month", line)?);
        let mut row = [0f32; DYNAMIC_CHANNELS];
        for (c, v) in row.iter_mut().enumerate() {
            let name = &expected[3 + c];
            *v = field(&rec, col(name), name, line)?;
        }
        s.continuous.push(row);
        s.dw.push(field(&rec, col("DW_class"), "DW_class", line)?);
        let mut p = [false; N_DYNAMIC_GROUPS];
        for (g, grp) in ChannelGroup::DYNAMIC.iter().enumerate() {
            let name = format!("{}_present", grp.name());
            p[g] = flag(&rec, col(&name), &name, line)?;
        }
        s.presence.push(p);
    }
    for (i, s) in samples.iter().enumerate() {
        s.validate(false).map_err(|e| DataError::Invalid(format!("sample {i}: {e}")))?;
    }
    Dataset::new(samples, labels)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    read_csv_from(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::{generate_synthetic, SyntheticWorldConfig};

    #[test]
    fn round_trip() {
        let mut ds = generate_synthetic(&SyntheticWorldConfig::new(30, 3, 0.2, 0.3, 4)).unwrap();
        ds.labels[2] = None;
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &ds).unwrap();
        assert_eq!(read_csv_from(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn header_uses_group_band_names() {
        let h = header();
        assert!(h.contains(&"S2_RGB_B4".to_string()));
        assert!(h.contains(&"ERA5_temperature_2m".to_string()));
        assert!(h.contains(&"DW_present".to_string()));
    }

    #[test]
    fn missing_column_is_a_layout_error() {
        let text = "sample,t,month\n0,0,1\n";
        assert!(matches!(read_csv_from(text.as_bytes()), Err(DataError::LayoutMismatch(_))));
    }
}

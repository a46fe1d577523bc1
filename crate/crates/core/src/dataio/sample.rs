use serde::{Deserialize, Serialize};

use super::groups::{ChannelGroup, DYNAMIC_CHANNELS, DW_CLASSES, NDVI_COL, N_DYNAMIC_GROUPS};
use super::DataError;

/// One pixel's multi-sensor timeseries plus static variables.
///
/// Values of absent `(timestep, group)` entries are kept in storage but
/// never read by the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelSample {
    /// `T` rows of the 15 continuous dynamic channels.
    pub continuous: Vec<[f32; DYNAMIC_CHANNELS]>,
    /// Dynamic World class id per timestep.
    pub dw: Vec<u8>,
    /// Elevation (m) and slope (degrees).
    pub tg: [f32; 2],
    pub lat: f32,
    pub lon: f32,
    pub start_month: u8,
    /// Calendar month (0-11) of every timestep.
    pub months: Vec<u8>,
    /// Availability of each dynamic group at each timestep, indexed by
    /// [`ChannelGroup::index`].
    pub presence: Vec<[bool; N_DYNAMIC_GROUPS]>,
    pub tg_present: bool,
}

impl PixelSample {
    /// Fully-present monthly sample of `t` zeroed timesteps.
    pub fn empty_monthly(t: usize, start_month: u8) -> Self {
        PixelSample {
            continuous: vec![[0.0; DYNAMIC_CHANNELS]; t],
            dw: vec![0; t],
            tg: [0.0; 2],
            lat: 0.0,
            lon: 0.0,
            start_month,
            months: monthly_months(start_month, t),
            presence: vec![[true; N_DYNAMIC_GROUPS]; t],
            tg_present: true,
        }
    }

    pub fn timesteps(&self) -> usize {
        self.months.len()
    }

    pub fn is_present(&self, group: ChannelGroup, t: Option<usize>) -> bool {
        match (group, t) {
            (ChannelGroup::Loc, _) => true,
            (ChannelGroup::Tg, _) => self.tg_present,
            (g, Some(t)) => self.presence.get(t).is_some_and(|p| p[g.index()]),
            (_, None) => false,
        }
    }

    /// Marks a dynamic group absent at every timestep.
    pub fn drop_group(&mut self, group: ChannelGroup) {
        assert!(group.is_dynamic(), "only dynamic groups can be dropped per timestep");
        for p in &mut self.presence {
            p[group.index()] = false;
        }
    }

    /// Marks every dynamic group absent at timestep `t`.
    pub fn drop_timestep(&mut self, t: usize) {
        self.presence[t] = [false; N_DYNAMIC_GROUPS];
    }

    /// Cartesian location encoding of `(lat, lon)`.
    pub fn location(&self) -> Result<[f32; 3], DataError> {
        location_to_cartesian(self.lat as f64, self.lon as f64)
    }

    /// `months[i] == (start_month + i) % 12` for every step.
    pub fn is_monthly(&self) -> bool {
        self.months.iter().enumerate().all(|(i, &m)| m as usize == (self.start_month as usize + i) % 12)
    }

    /// Checks the structural invariants. `check_ndvi` applies to raw
    /// (unnormalized) samples only.
    pub fn validate(&self, check_ndvi: bool) -> Result<(), DataError> {
        let t = self.months.len();
        if t == 0 {
            return Err(DataError::Invalid("sample has no timesteps".into()));
        }
        if self.continuous.len() != t || self.dw.len() != t || self.presence.len() != t {
            return Err(DataError::Invalid(format!(
                "ragged sample: {} months, {} continuous rows, {} dw, {} presence rows",
                t,
                self.continuous.len(),
                self.dw.len(),
                self.presence.len()
            )));
        }
        if self.start_month >= 12 {
            return Err(DataError::Invalid(format!("start month {} out of range", self.start_month)));
        }
        if let Some(m) = self.months.iter().find(|&&m| m >= 12) {
            return Err(DataError::Invalid(format!("month {m} out of range")));
        }
        if let Some(c) = self.dw.iter().find(|&&c| c as usize >= DW_CLASSES) {
            return Err(DataError::Invalid(format!("Dynamic World class {c} out of range")));
        }
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(DataError::Invalid(format!("location ({}, {}) out of range", self.lat, self.lon)));
        }
        for (i, row) in self.continuous.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Invalid(format!("non-finite value at timestep {i}")));
            }
            if check_ndvi && self.presence[i][ChannelGroup::Ndvi.index()] && !(-1.0..=1.0).contains(&row[NDVI_COL]) {
                return Err(DataError::Invalid(format!("NDVI {} out of [-1, 1] at timestep {i}", row[NDVI_COL])));
            }
        }
        if self.tg.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("non-finite topography".into()));
        }
        Ok(())
    }
}

pub fn monthly_months(start_month: u8, t: usize) -> Vec<u8> {
    (0..t).map(|i| ((start_month as usize + i) % 12) as u8).collect()
}

/// Samples with optional class labels. All samples share `T`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<PixelSample>,
    pub labels: Vec<Option<u32>>,
}

impl Dataset {
    pub fn new(samples: Vec<PixelSample>, labels: Vec<Option<u32>>) -> Result<Self, DataError> {
        if samples.len() != labels.len() {
            return Err(DataError::Invalid(format!("{} samples but {} labels", samples.len(), labels.len())));
        }
        if let Some(first) = samples.first() {
            let t = first.timesteps();
            if let Some((i, _)) = samples.iter().enumerate().find(|(_, s)| s.timesteps() != t) {
                return Err(DataError::Invalid(format!("sample {i} has a different number of timesteps")));
            }
        }
        Ok(Dataset { samples, labels })
    }

    pub fn unlabeled(samples: Vec<PixelSample>) -> Result<Self, DataError> {
        let n = samples.len();
        Self::new(samples, vec![None; n])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn timesteps(&self) -> Option<usize> {
        self.samples.first().map(|s| s.timesteps())
    }

    /// Labels as class ids; errors if any sample is unlabeled.
    pub fn class_labels(&self) -> Result<Vec<usize>, DataError> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.map(|l| l as usize).ok_or_else(|| DataError::Invalid(format!("sample {i} has no label"))))
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Splits off the first `n` samples.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let a: Vec<usize> = (0..n).collect();
        let b: Vec<usize> = (n..self.len()).collect();
        (self.subset(&a), self.subset(&b))
    }
}

/// Unit vector of a geographic location:
/// `[cos(lat)cos(lon), cos(lat)sin(lon), sin(lat)]`.
pub fn location_to_cartesian(lat: f64, lon: f64) -> Result<[f32; 3], DataError> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(DataError::Invalid(format!("location ({lat}, {lon}) out of range")));
    }
    let (la, lo) = (lat.to_radians(), lon.to_radians());
    Ok([(la.cos() * lo.cos()) as f32, (la.cos() * lo.sin()) as f32, la.sin() as f32])
}

/// Normalized difference vegetation index from red (B4) and NIR (B8);
/// 0 when both are 0.
pub fn compute_ndvi(b4: f32, b8: f32) -> f32 {
    let s = b8 + b4;
    if s == 0.0 {
        0.0
    } else {
        (b8 - b4) / s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: [f32; 3], b: [f32; 3]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6)
    }

    #[test]
    fn cartesian_reference_points() {
        assert!(close(location_to_cartesian(0.0, 0.0).unwrap(), [1.0, 0.0, 0.0]));
        assert!(close(location_to_cartesian(90.0, 37.0).unwrap(), [0.0, 0.0, 1.0]));
        assert!(close(location_to_cartesian(-90.0, -120.0).unwrap(), [0.0, 0.0, -1.0]));
        assert!(close(location_to_cartesian(0.0, 90.0).unwrap(), [0.0, 1.0, 0.0]));
        assert!(location_to_cartesian(91.0, 0.0).is_err());
        assert!(location_to_cartesian(0.0, -180.5).is_err());
    }

    #[test]
    fn cartesian_is_unit_norm() {
        for lat in (-90..=90).step_by(15) {
            for lon in (-180..=180).step_by(30) {
                let v = location_to_cartesian(lat as f64, lon as f64).unwrap();
                let n: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                assert!((n - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ndvi_cases() {
        assert_eq!(compute_ndvi(0.0, 0.4), 1.0);
        assert_eq!(compute_ndvi(0.3, 0.3), 0.0);
        assert_eq!(compute_ndvi(1.0, 3.0), 0.5);
        assert_eq!(compute_ndvi(0.0, 0.0), 0.0);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut s = PixelSample::empty_monthly(12, 3);
        assert!(s.validate(true).is_ok());
        assert!(s.is_monthly());
        assert_eq!(s.months[10], 1);
        s.dw[2] = 9;
        assert!(s.validate(true).is_err());
        s.dw[2] = 8;
        s.continuous[0][NDVI_COL] = 1.5;
        assert!(s.validate(true).is_err());
        assert!(s.validate(false).is_ok());
    }

    #[test]
    fn loc_is_always_present() {
        let mut s = PixelSample::empty_monthly(2, 0);
        s.tg_present = false;
        s.drop_timestep(0);
        assert!(s.is_present(ChannelGroup::Loc, None));
        assert!(!s.is_present(ChannelGroup::Tg, None));
        assert!(!s.is_present(ChannelGroup::S1, Some(0)));
        assert!(s.is_present(ChannelGroup::S1, Some(1)));
    }
}

use serde::{Deserialize, Serialize};

use super::TokenizeError;

/// Widths of the channel, positional and month slices of a token encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingLayout {
    pub d_channel: usize,
    pub d_pos: usize,
    pub d_month: usize,
}

impl EncodingLayout {
    /// Quarter channel, half positional, quarter month.
    pub fn for_width(d: usize) -> Result<Self, TokenizeError> {
        let d_channel = d / 4;
        let d_pos = d / 2;
        let layout = EncodingLayout { d_channel, d_pos, d_month: d - d_channel - d_pos };
        layout.validate()?;
        Ok(layout)
    }

    pub fn width(&self) -> usize {
        self.d_channel + self.d_pos + self.d_month
    }

    pub fn validate(&self) -> Result<(), TokenizeError> {
        if self.d_channel == 0 || self.d_pos == 0 || self.d_month == 0 {
            return Err(TokenizeError::Layout(format!("{self:?} has an empty slice")));
        }
        if self.d_month % 2 != 0 || self.d_pos % 2 != 0 {
            return Err(TokenizeError::Layout(format!("{self:?}: month and positional widths must be even")));
        }
        Ok(())
    }

    /// Positional then month slots of a dynamic token.
    pub fn time_encoding(&self, index: usize, month: u8) -> Result<Vec<f32>, TokenizeError> {
        let mut v = positional_encoding(index, self.d_pos);
        v.extend(month_encoding(month, self.d_month)?);
        Ok(v)
    }
}

/// `[sin, cos]` of `2*pi*month/12`, repeated to fill `d_month`.
pub fn month_encoding(month: u8, d_month: usize) -> Result<Vec<f32>, TokenizeError> {
    if d_month % 2 != 0 {
        return Err(TokenizeError::Layout(format!("month encoding width {d_month} is odd")));
    }
    let angle = 2.0 * std::f64::consts::PI * (month % 12) as f64 / 12.0;
    let (s, c) = (angle.sin() as f32, angle.cos() as f32);
    Ok((0..d_month).map(|i| if i % 2 == 0 { s } else { c }).collect())
}

/// Interleaved sinusoidal encoding: `pe[2i] = sin(index / 10000^(2i/d))`,
/// `pe[2i+1] = cos(..)`.
pub fn positional_encoding(index: usize, d_pos: usize) -> Vec<f32> {
    (0..d_pos)
        .map(|j| {
            let i2 = (j - j % 2) as f64;
            let angle = index as f64 / 10000f64.powf(i2 / d_pos as f64);
            (if j % 2 == 0 { angle.sin() } else { angle.cos() }) as f32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn month_zero_and_quarter() {
        let m0 = month_encoding(0, 8).unwrap();
        assert_eq!(m0, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let m3 = month_encoding(3, 4).unwrap();
        for pair in m3.chunks(2) {
            assert!((pair[0] - 1.0).abs() < 1e-7 && pair[1].abs() < 1e-7);
        }
    }

    #[test]
    fn month_is_periodic() {
        for m in 0..12u8 {
            assert_eq!(month_encoding(m, 32).unwrap(), month_encoding(m + 12, 32).unwrap());
        }
    }

    #[test]
    fn odd_month_width_rejected() {
        assert!(month_encoding(1, 7).is_err());
    }

    #[test]
    fn positional_definition() {
        let p0 = positional_encoding(0, 8);
        assert_eq!(p0, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let p1 = positional_encoding(1, 64);
        assert_eq!((p1[0], p1[1]), (1f64.sin() as f32, 1f64.cos() as f32));
    }

    #[test]
    fn positions_do_not_collide() {
        let enc: Vec<Vec<f32>> = (0..200).map(|i| positional_encoding(i, 64)).collect();
        for i in 0..enc.len() {
            for j in i + 1..enc.len() {
                assert_ne!(enc[i], enc[j], "{i} vs {j}");
            }
        }
    }

    #[test]
    fn default_split() {
        let l = EncodingLayout::for_width(128).unwrap();
        assert_eq!((l.d_channel, l.d_pos, l.d_month), (32, 64, 32));
        assert_eq!(l.width(), 128);
    }
}

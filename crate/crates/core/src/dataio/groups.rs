use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Continuous values or class ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKind {
    Continuous,
    Categorical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Temporality {
    Dynamic,
    Static,
}

/// The eleven channel groups a pixel timeseries is split into. Each group
/// becomes one token per timestep (dynamic) or one token per sample
/// (static).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelGroup {
    S1,
    S2Rgb,
    S2RedEdge,
    S2Nir10,
    S2Nir20,
    S2Swir,
    Ndvi,
    Era5,
    Dw,
    Tg,
    Loc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelGroupSpec {
    pub group: ChannelGroup,
    pub name: &'static str,
    pub bands: &'static [&'static str],
    pub kind: GroupKind,
    pub temporality: Temporality,
}

impl ChannelGroupSpec {
    pub fn width(&self) -> usize {
        self.bands.len()
    }
}

/// Number of continuous dynamic channels per timestep.
pub const DYNAMIC_CHANNELS: usize = 15;
/// Number of continuous static channels (TG + Loc).
pub const STATIC_CHANNELS: usize = 5;
pub const N_DYNAMIC_GROUPS: usize = 9;
pub const N_STATIC_GROUPS: usize = 2;
/// Dynamic World classes; ids `0..DW_CLASSES`.
pub const DW_CLASSES: usize = 9;
/// Groups that carry a learned channel encoding (everything but Loc).
pub const N_ENCODED_GROUPS: usize = 10;

use ChannelGroup::*;
use GroupKind::*;
use Temporality::*;

const SPECS: [ChannelGroupSpec; 11] = [
    ChannelGroupSpec { group: S1, name: "S1", bands: &["VV", "VH"], kind: Continuous, temporality: Dynamic },
    ChannelGroupSpec { group: S2Rgb, name: "S2_RGB", bands: &["B2", "B3", "B4"], kind: Continuous, temporality: Dynamic },
    ChannelGroupSpec {
        group: S2RedEdge,
        name: "S2_RedEdge",
        bands: &["B5", "B6", "B7"],
        kind: Continuous,
        temporality: Dynamic,
    },
    ChannelGroupSpec { group: S2Nir10, name: "S2_NIR10", bands: &["B8"], kind: Continuous, temporality: Dynamic },
    ChannelGroupSpec { group: S2Nir20, name: "S2_NIR20", bands: &["B8A"], kind: Continuous, temporality: Dynamic },
    ChannelGroupSpec { group: S2Swir, name: "S2_SWIR", bands: &["B11", "B12"], kind: Continuous, temporality: Dynamic },
    ChannelGroupSpec { group: Ndvi, name: "NDVI", bands: &["NDVI"], kind: Continuous, temporality: Dynamic },
    ChannelGroupSpec {
        group: Era5,
        name: "ERA5",
        bands: &["precipitation", "temperature_2m"],
        kind: Continuous,
        temporality: Dynamic,
    },
    ChannelGroupSpec { group: Dw, name: "DW", bands: &["class"], kind: Categorical, temporality: Dynamic },
    ChannelGroupSpec { group: Tg, name: "TG", bands: &["elevation", "slope"], kind: Continuous, temporality: Static },
    ChannelGroupSpec { group: Loc, name: "Loc", bands: &["x", "y", "z"], kind: Continuous, temporality: Static },
];

impl ChannelGroup {
    pub const ALL: [ChannelGroup; 11] = [S1, S2Rgb, S2RedEdge, S2Nir10, S2Nir20, S2Swir, Ndvi, Era5, Dw, Tg, Loc];
    pub const DYNAMIC: [ChannelGroup; N_DYNAMIC_GROUPS] = [S1, S2Rgb, S2RedEdge, S2Nir10, S2Nir20, S2Swir, Ndvi, Era5, Dw];
    pub const STATIC: [ChannelGroup; N_STATIC_GROUPS] = [Tg, Loc];
    /// Continuous groups, each with its own input projection.
    pub const PROJECTED: [ChannelGroup; 10] = [S1, S2Rgb, S2RedEdge, S2Nir10, S2Nir20, S2Swir, Ndvi, Era5, Tg, Loc];
    /// Groups the decoder reconstructs with a regression head.
    pub const RECONSTRUCTED: [ChannelGroup; 9] = [S1, S2Rgb, S2RedEdge, S2Nir10, S2Nir20, S2Swir, Ndvi, Era5, Tg];
    /// The Sentinel-2 groups.
    pub const SENTINEL2: [ChannelGroup; 5] = [S2Rgb, S2RedEdge, S2Nir10, S2Nir20, S2Swir];

    /// Position in [`ChannelGroup::ALL`]; dynamic groups come first, so this
    /// is also the column of the group in per-timestep presence flags.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn spec(self) -> &'static ChannelGroupSpec {
        &SPECS[self.index()]
    }

    pub fn name(self) -> &'static str {
        self.spec().name
    }

    pub fn width(self) -> usize {
        self.spec().width()
    }

    pub fn is_dynamic(self) -> bool {
        self.spec().temporality == Dynamic
    }

    pub fn is_categorical(self) -> bool {
        self.spec().kind == Categorical
    }

    pub fn from_name(name: &str) -> Option<Self> {
        SPECS.iter().find(|s| s.name.eq_ignore_ascii_case(name)).map(|s| s.group)
    }

    /// Columns of this group inside the per-timestep continuous vector.
    pub fn dynamic_range(self) -> Option<Range<usize>> {
        let r = match self {
            S1 => 0..2,
            S2Rgb => 2..5,
            S2RedEdge => 5..8,
            S2Nir10 => 8..9,
            S2Nir20 => 9..10,
            S2Swir => 10..12,
            Ndvi => 12..13,
            Era5 => 13..15,
            Dw | Tg | Loc => return None,
        };
        Some(r)
    }

    /// Row of this group in a learned channel-encoding table.
    pub fn encoding_index(self) -> Option<usize> {
        (self != Loc).then(|| self.index())
    }
}

impl fmt::Display for ChannelGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Column index of band B4 (red) and B8 (NIR) in the continuous vector.
pub const B4: usize = 4;
pub const B8: usize = 8;
pub const NDVI_COL: usize = 12;

/// Names of the continuous channels, dynamic first, then TG.
pub fn continuous_channel_names() -> Vec<String> {
    let mut out = Vec::with_capacity(DYNAMIC_CHANNELS + 2);
    for g in ChannelGroup::DYNAMIC {
        if g.is_categorical() {
            continue;
        }
        for b in g.spec().bands {
            out.push(format!("{}_{}", g.name(), b));
        }
    }
    for b in Tg.spec().bands {
        out.push(format!("TG_{b}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths_match_the_data_model() {
        let expect = [2, 3, 3, 1, 1, 2, 1, 2, 1, 2, 3];
        for (g, w) in ChannelGroup::ALL.iter().zip(expect) {
            assert_eq!(g.width(), w, "{g}");
        }
        let dyn_cont: usize =
            ChannelGroup::DYNAMIC.iter().filter(|g| !g.is_categorical()).map(|g| g.width()).sum();
        assert_eq!(dyn_cont, DYNAMIC_CHANNELS);
        let stat: usize = ChannelGroup::STATIC.iter().map(|g| g.width()).sum();
        assert_eq!(stat, STATIC_CHANNELS);
        assert_eq!(ChannelGroup::ALL.iter().filter(|g| g.is_dynamic()).count(), 9);
        assert_eq!(ChannelGroup::ALL.iter().filter(|g| !g.is_dynamic()).count(), 2);
    }

    #[test]
    fn dynamic_ranges_tile_the_vector() {
        let mut next = 0;
        for g in ChannelGroup::DYNAMIC {
            if let Some(r) = g.dynamic_range() {
                assert_eq!(r.start, next);
                assert_eq!(r.len(), g.width());
                next = r.end;
            }
        }
        assert_eq!(next, DYNAMIC_CHANNELS);
        assert_eq!(continuous_channel_names()[B4], "S2_RGB_B4");
        assert_eq!(continuous_channel_names()[B8], "S2_NIR10_B8");
        assert_eq!(continuous_channel_names()[NDVI_COL], "NDVI_NDVI");
    }

    #[test]
    fn names_round_trip() {
        for g in ChannelGroup::ALL {
            assert_eq!(ChannelGroup::from_name(g.name()), Some(g));
        }
    }
}

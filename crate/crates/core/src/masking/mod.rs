//! Masking strategies for pre-training.
//!
//! A plan hides exactly `round(ratio * maskable)` tokens. Structured
//! strategies first take whole units (a channel group across all its
//! timesteps, every group at one timestep, or one contiguous run of
//! timesteps) while the next unit still fits, then fill the remaining
//! budget with uniformly random tokens. Loc is never masked.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::ChannelGroup;
use crate::tokenizer::{Token, TokenSequence, TokenSlot};

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("mask ratio {0} outside (0, 1)")]
    Ratio(f64),
    #[error("cannot mask {budget} of {maskable} maskable tokens")]
    Budget { budget: usize, maskable: usize },
    #[error("token index {index} out of {len}")]
    Index { index: usize, len: usize },
    #[error("token {0} cannot be masked")]
    NotMaskable(usize),
    #[error("unknown masking strategy {0:?}")]
    UnknownStrategy(String),
    #[error("empty strategy set")]
    NoStrategies,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskStrategy {
    Random,
    ChannelGroups,
    Timesteps,
    ContiguousTimesteps,
}

impl MaskStrategy {
    pub const ALL: [MaskStrategy; 4] =
        [MaskStrategy::Random, MaskStrategy::ChannelGroups, MaskStrategy::Timesteps, MaskStrategy::ContiguousTimesteps];

    pub fn cli_name(self) -> &'static str {
        match self {
            MaskStrategy::Random => "random",
            MaskStrategy::ChannelGroups => "channel",
            MaskStrategy::Timesteps => "timestep",
            MaskStrategy::ContiguousTimesteps => "contiguous",
        }
    }
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for MaskStrategy {
    type Err = MaskError;
    fn from_str(s: &str) -> Result<Self, MaskError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(MaskStrategy::Random),
            "channel" | "channel-groups" | "channel_groups" => Ok(MaskStrategy::ChannelGroups),
            "timestep" | "timesteps" => Ok(MaskStrategy::Timesteps),
            "contiguous" | "contiguous-timesteps" | "contiguous_timesteps" => Ok(MaskStrategy::ContiguousTimesteps),
            _ => Err(MaskError::UnknownStrategy(s.to_string())),
        }
    }
}

/// Parses a comma-separated strategy list such as `random,channel`.
pub fn parse_strategies(list: &str) -> Result<Vec<MaskStrategy>, MaskError> {
    let mut out: Vec<MaskStrategy> = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let s: MaskStrategy = part.parse()?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if out.is_empty() {
        return Err(MaskError::NoStrategies);
    }
    Ok(out)
}

/// Uniform draw from `allowed` (all four strategies when it lists them all).
pub fn draw_strategy<R: Rng + ?Sized>(rng: &mut R, allowed: &[MaskStrategy]) -> Result<MaskStrategy, MaskError> {
    allowed.choose(rng).copied().ok_or(MaskError::NoStrategies)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub strategy: MaskStrategy,
    /// Sorted token indices.
    pub masked: Vec<usize>,
    pub ratio: f64,
    pub budget: usize,
    /// How many of the masked tokens came from whole units.
    pub whole_units: usize,
}

impl MaskPlan {
    pub fn empty(strategy: MaskStrategy) -> Self {
        MaskPlan { strategy, masked: Vec::new(), ratio: 0.0, budget: 0, whole_units: 0 }
    }

    /// Token indices not in the plan, ascending.
    pub fn visible(&self, n_tokens: usize) -> Vec<usize> {
        let mut hidden = vec![false; n_tokens];
        for &i in &self.masked {
            hidden[i] = true;
        }
        (0..n_tokens).filter(|&i| !hidden[i]).collect()
    }
}

/// `round(ratio * maskable)`, halves away from zero.
pub fn mask_budget(ratio: f64, maskable: usize) -> usize {
    (ratio * maskable as f64).round() as usize
}

pub fn build_mask<R: Rng + ?Sized>(
    slots: &[TokenSlot],
    ratio: f64,
    strategy: MaskStrategy,
    rng: &mut R,
) -> Result<MaskPlan, MaskError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(MaskError::Ratio(ratio));
    }
    let maskable: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].maskable()).collect();
    let budget = mask_budget(ratio, maskable.len());
    if budget >= maskable.len() {
        return Err(MaskError::Budget { budget, maskable: maskable.len() });
    }
    let mut taken = vec![false; slots.len()];
    let mut count = 0;
    let mut take_unit = |unit: &[usize], taken: &mut Vec<bool>| {
        for &i in unit {
            taken[i] = true;
        }
        count += unit.len();
    };
    match strategy {
        MaskStrategy::Random => {}
        MaskStrategy::ChannelGroups | MaskStrategy::Timesteps => {
            let mut units = if strategy == MaskStrategy::ChannelGroups {
                group_units(slots)
            } else {
                timestep_units(slots)
            };
            units.retain(|u| !u.is_empty());
            units.shuffle(rng);
            let mut used = 0;
            for u in &units {
                if used + u.len() > budget {
                    break;
                }
                used += u.len();
                take_unit(u, &mut taken);
            }
        }
        MaskStrategy::ContiguousTimesteps => {
            let units = timestep_units(slots);
            let sizes: Vec<usize> = units.iter().map(Vec::len).collect();
            for len in (1..=units.len()).rev() {
                let starts: Vec<usize> = (0..=units.len() - len)
                    .filter(|&s| sizes[s..s + len].iter().sum::<usize>() <= budget)
                    .collect();
                if let Some(&s) = starts.choose(rng) {
                    for u in &units[s..s + len] {
                        take_unit(u, &mut taken);
                    }
                    break;
                }
            }
        }
    }
    let whole_units = count;
    let rest: Vec<usize> = maskable.iter().copied().filter(|&i| !taken[i]).collect();
    for k in index::sample(rng, rest.len(), budget - whole_units) {
        taken[rest[k]] = true;
    }
    let masked: Vec<usize> = (0..slots.len()).filter(|&i| taken[i]).collect();
    debug_assert_eq!(masked.len(), budget);
    Ok(MaskPlan { strategy, masked, ratio, budget, whole_units })
}

/// Indices of the tokens of each dynamic group.
fn group_units(slots: &[TokenSlot]) -> Vec<Vec<usize>> {
    ChannelGroup::DYNAMIC
        .iter()
        .map(|&g| (0..slots.len()).filter(|&i| slots[i].group == g).collect())
        .collect()
}

/// Indices of the dynamic tokens at each timestep, in time order.
fn timestep_units(slots: &[TokenSlot]) -> Vec<Vec<usize>> {
    let t = slots.iter().filter_map(|s| s.timestep).max().map_or(0, |m| m + 1);
    let mut units = vec![Vec::new(); t];
    for (i, s) in slots.iter().enumerate() {
        if let Some(ts) = s.timestep {
            units[ts].push(i);
        }
    }
    units
}

/// What the decoder must reconstruct at a masked token.
#[derive(Clone, Debug, PartialEq)]
pub enum MaskTarget {
    Continuous(Vec<f32>),
    Categorical(u8),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedToken {
    pub index: usize,
    pub slot: TokenSlot,
    pub target: MaskTarget,
}

/// Splits a sequence into the encoder's visible tokens and the
/// reconstruction targets of the masked ones.
pub fn apply_mask(seq: &TokenSequence, plan: &MaskPlan) -> Result<(Vec<Token>, Vec<MaskedToken>), MaskError> {
    let n = seq.len();
    let mut hidden = vec![false; n];
    for &i in &plan.masked {
        if i >= n {
            return Err(MaskError::Index { index: i, len: n });
        }
        if !seq.tokens[i].maskable() {
            return Err(MaskError::NotMaskable(i));
        }
        hidden[i] = true;
    }
    let visible = seq.tokens.iter().zip(&hidden).filter(|(_, &h)| !h).map(|(t, _)| t.clone()).collect();
    let targets = plan
        .masked
        .iter()
        .map(|&i| {
            let t = &seq.tokens[i];
            let target = if t.slot.group.is_categorical() {
                MaskTarget::Categorical(t.input[0] as u8)
            } else {
                MaskTarget::Continuous(t.input.clone())
            };
            MaskedToken { index: i, slot: t.slot, target }
        })
        .collect();
    Ok((visible, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::PixelSample;
    use crate::numcore::SeedTree;
    use crate::tokenizer::token_slots;
    use proptest::prelude::*;

    fn full() -> Vec<TokenSlot> {
        token_slots(&PixelSample::empty_monthly(12, 0))
    }

    #[test]
    fn default_budget() {
        let slots = full();
        assert_eq!(slots.len(), 110);
        let plan = build_mask(&slots, 0.75, MaskStrategy::Random, &mut SeedTree::new(0).rng()).unwrap();
        assert_eq!(plan.budget, 82);
        assert_eq!(plan.masked.len(), 82);
    }

    #[test]
    fn channel_groups_fit_six_then_top_up() {
        for seed in 0..20 {
            let plan = build_mask(&full(), 0.75, MaskStrategy::ChannelGroups, &mut SeedTree::new(seed).rng()).unwrap();
            assert_eq!(plan.whole_units, 72);
            assert_eq!(plan.masked.len(), 82);
        }
    }

    #[test]
    fn tiny_budget_timesteps_is_all_top_up() {
        let plan = build_mask(&full(), 0.05, MaskStrategy::Timesteps, &mut SeedTree::new(3).rng()).unwrap();
        assert_eq!(plan.budget, 5);
        assert_eq!(plan.whole_units, 0);
    }

    #[test]
    fn budget_covering_everything_rejected() {
        let mut s = PixelSample::empty_monthly(1, 0);
        for g in ChannelGroup::DYNAMIC {
            if g != ChannelGroup::S2Rgb {
                s.drop_group(g);
            }
        }
        let slots = token_slots(&s);
        assert!(matches!(
            build_mask(&slots, 0.75, MaskStrategy::Random, &mut SeedTree::new(0).rng()),
            Err(MaskError::Budget { .. })
        ));
        assert!(matches!(build_mask(&full(), 1.0, MaskStrategy::Random, &mut SeedTree::new(0).rng()), Err(MaskError::Ratio(_))));
    }

    #[test]
    fn draw_is_uniform_and_reproducible() {
        let draws = |seed| {
            let mut rng = SeedTree::new(seed).rng();
            (0..10_000).map(|_| draw_strategy(&mut rng, &MaskStrategy::ALL).unwrap()).collect::<Vec<_>>()
        };
        let d = draws(5);
        assert_eq!(d, draws(5));
        for s in MaskStrategy::ALL {
            let f = d.iter().filter(|&&x| x == s).count() as f64 / 1e4;
            assert!((0.22..=0.28).contains(&f), "{s}: {f}");
        }
        let mut rng = SeedTree::new(1).rng();
        assert!((0..100).all(|_| draw_strategy(&mut rng, &[MaskStrategy::Timesteps]).unwrap() == MaskStrategy::Timesteps));
    }

    #[test]
    fn parse_list() {
        assert_eq!(parse_strategies("random,channel").unwrap(), vec![MaskStrategy::Random, MaskStrategy::ChannelGroups]);
        assert!(parse_strategies("spatial").is_err());
        assert!(parse_strategies("").is_err());
    }

    fn sequence() -> TokenSequence {
        let mut s = PixelSample::empty_monthly(12, 0);
        s.dw[4] = 6;
        let tokens = token_slots(&s)
            .into_iter()
            .map(|slot| Token { slot, embedding: vec![0.0; 4], input: crate::tokenizer::slot_values(&s, &slot).unwrap() })
            .collect();
        TokenSequence { tokens, d_e: 4 }
    }

    #[test]
    fn apply_empty_and_full_plans() {
        let seq = sequence();
        let (vis, tgt) = apply_mask(&seq, &MaskPlan::empty(MaskStrategy::Random)).unwrap();
        assert_eq!((vis.len(), tgt.len()), (110, 0));
        let all = MaskPlan { masked: (0..109).collect(), ..MaskPlan::empty(MaskStrategy::Random) };
        let (vis, tgt) = apply_mask(&seq, &all).unwrap();
        assert_eq!(vis.len(), 1);
        assert_eq!(vis[0].slot.group, ChannelGroup::Loc);
        assert_eq!(tgt.len(), 109);
        let dw = tgt.iter().find(|t| t.slot.group == ChannelGroup::Dw && t.slot.timestep == Some(4)).unwrap();
        assert_eq!(dw.target, MaskTarget::Categorical(6));
        let bad = MaskPlan { masked: vec![109], ..MaskPlan::empty(MaskStrategy::Random) };
        assert!(matches!(apply_mask(&seq, &bad), Err(MaskError::NotMaskable(109))));
        let bad = MaskPlan { masked: vec![500], ..MaskPlan::empty(MaskStrategy::Random) };
        assert!(matches!(apply_mask(&seq, &bad), Err(MaskError::Index { .. })));
    }

    fn arb_sample() -> impl Strategy<Value = PixelSample> {
        (1usize..=24, 0u8..12, proptest::collection::vec(any::<bool>(), 9 * 24), any::<bool>(), 0.0f64..0.5).prop_map(
            |(t, start, bits, tg, drop)| {
                let mut s = PixelSample::empty_monthly(t, start);
                for (i, p) in s.presence.iter_mut().enumerate() {
                    for g in 0..9 {
                        p[g] = !(bits[i * 9 + g] && (i * 9 + g) as f64 / 216.0 < drop * 2.0);
                    }
                }
                s.tg_present = tg;
                s
            },
        )
    }

    proptest! {
        #[test]
        fn plans_are_exact_partitions(s in arb_sample(), strat in 0usize..4, seed in any::<u64>(), ratio in 0.05f64..0.95) {
            let slots = token_slots(&s);
            let strategy = MaskStrategy::ALL[strat];
            let maskable = slots.len() - 1;
            match build_mask(&slots, ratio, strategy, &mut SeedTree::new(seed).rng()) {
                Ok(plan) => {
                    prop_assert_eq!(plan.masked.len(), mask_budget(ratio, maskable));
                    prop_assert!(plan.masked.iter().all(|&i| slots[i].group != ChannelGroup::Loc));
                    let vis = plan.visible(slots.len());
                    prop_assert_eq!(vis.len() + plan.masked.len(), slots.len());
                    let mut all: Vec<usize> = vis.iter().chain(&plan.masked).copied().collect();
                    all.sort();
                    prop_assert_eq!(all, (0..slots.len()).collect::<Vec<_>>());
                }
                Err(MaskError::Budget { budget, maskable: m }) => prop_assert!(budget >= m),
                Err(e) => prop_assert!(false, "{}", e),
            }
        }

        #[test]
        fn channel_group_units_are_whole(seed in any::<u64>(), ratio in 0.1f64..0.9) {
            let slots = full();
            let plan = build_mask(&slots, ratio, MaskStrategy::ChannelGroups, &mut SeedTree::new(seed).rng()).unwrap();
            if plan.whole_units == plan.budget {
                for g in ChannelGroup::DYNAMIC {
                    let n = plan.masked.iter().filter(|&&i| slots[i].group == g).count();
                    prop_assert!(n == 0 || n == 12);
                }
                prop_assert!(plan.masked.iter().all(|&i| slots[i].group != ChannelGroup::Tg));
            }
        }

        #[test]
        fn contiguous_run_is_contiguous(seed in any::<u64>(), ratio in 0.1f64..0.9) {
            let slots = full();
            let mut rng = SeedTree::new(seed).rng();
            let plan = build_mask(&slots, ratio, MaskStrategy::ContiguousTimesteps, &mut rng).unwrap();
            let whole: Vec<usize> = (0..12)
                .filter(|&t| {
                    (0..slots.len())
                        .filter(|&i| slots[i].timestep == Some(t))
                        .all(|i| plan.masked.binary_search(&i).is_ok())
                })
                .collect();
            let expect = plan.whole_units / 9;
            // top-up may complete extra timesteps, but the whole-unit run is
            // contained in a contiguous stretch of fully-masked timesteps
            prop_assert!(whole.len() >= expect);
            let runs = whole.windows(2).filter(|w| w[1] != w[0] + 1).count() + 1;
            let longest = {
                let mut best = 0; let mut cur = 0; let mut prev: Option<usize> = None;
                for &t in &whole { cur = if prev == Some(t.wrapping_sub(1)) { cur + 1 } else { 1 }; best = best.max(cur); prev = Some(t); }
                best
            };
            prop_assert!(expect == 0 || longest >= expect, "runs {} longest {} expect {}", runs, longest, expect);
        }
    }
}

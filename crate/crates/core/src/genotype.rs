//! Twelve-code architecture encoding.
//!
//! A genotype holds the number of units `D`, the initial width `W`, five
//! down-sampling location codes and five channel-doubling location codes. A
//! location code `x` is active iff `x < D`: the feature map is halved before
//! unit `x + 1` (down-sampling) or unit `x + 1` doubles its output channels
//! (channel doubling). Codes `>= D` are inert.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::builder::{decode, ComponentConfig, InputShape};
use crate::error::{Error, Result};

pub const LOCATION_CODES: usize = 5;
pub const CODE_COUNT: usize = 2 + 2 * LOCATION_CODES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genotype {
    pub depth: usize,
    pub width: usize,
    pub downsample: [usize; LOCATION_CODES],
    pub doubling: [usize; LOCATION_CODES],
}

impl Genotype {
    pub fn new(
        depth: usize,
        width: usize,
        downsample: [usize; LOCATION_CODES],
        doubling: [usize; LOCATION_CODES],
    ) -> Self {
        Self {
            depth,
            width,
            downsample,
            doubling,
        }
    }

    /// Codes in serialization order: `D, W, ds[0..5], ch[0..5]`.
    pub fn codes(&self) -> [usize; CODE_COUNT] {
        let mut out = [0; CODE_COUNT];
        out[0] = self.depth;
        out[1] = self.width;
        out[2..7].copy_from_slice(&self.downsample);
        out[7..].copy_from_slice(&self.doubling);
        out
    }

    pub fn from_codes(codes: [usize; CODE_COUNT]) -> Self {
        let mut ds = [0; LOCATION_CODES];
        let mut ch = [0; LOCATION_CODES];
        ds.copy_from_slice(&codes[2..7]);
        ch.copy_from_slice(&codes[7..]);
        Self::new(codes[0], codes[1], ds, ch)
    }

    /// Distinct down-sampling codes below the depth, ascending.
    pub fn active_downsample(&self) -> BTreeSet<usize> {
        self.downsample.iter().copied().filter(|&x| x < self.depth).collect()
    }

    /// Distinct channel-doubling codes below the depth, ascending.
    pub fn active_doubling(&self) -> BTreeSet<usize> {
        self.doubling.iter().copied().filter(|&x| x < self.depth).collect()
    }

    /// Changes the depth, moving every location code to `floor(x * D' / D)`
    /// (clamped to `code_max`) so active codes keep their relative position.
    pub fn with_depth(&self, depth: usize, code_max: usize) -> Self {
        let remap = |x: usize| ((x * depth) / self.depth).min(code_max);
        Self {
            depth,
            width: self.width,
            downsample: self.downsample.map(remap),
            doubling: self.doubling.map(remap),
        }
    }

    /// Parses and checks against `bounds`.
    pub fn parse_within(text: &str, bounds: &Bounds) -> Result<Self> {
        let g: Genotype = text.parse()?;
        bounds
            .check(&g)
            .map_err(|e| Error::Parse(e.to_string()))?;
        Ok(g)
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let codes = self.codes();
        for (i, c) in codes.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for Genotype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.trim().split(',').collect();
        if fields.len() != CODE_COUNT {
            return Err(Error::Parse(format!(
                "expected {CODE_COUNT} comma-separated codes, got {}",
                fields.len()
            )));
        }
        let mut codes = [0usize; CODE_COUNT];
        for (slot, field) in codes.iter_mut().zip(&fields) {
            *slot = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("`{field}` is not a non-negative integer")))?;
        }
        if codes[0] == 0 || codes[1] == 0 {
            return Err(Error::Parse("depth and width must be positive".into()));
        }
        Ok(Self::from_codes(codes))
    }
}

impl Serialize for Genotype {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Genotype {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Search-space ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bounds {
    pub d_min: usize,
    pub d_max: usize,
    pub w_min: usize,
    pub w_max: usize,
    /// Width grid spacing: legal widths are `w_min + k * w_step <= w_max`.
    pub w_step: usize,
    pub code_max: usize,
    pub param_limit: Option<usize>,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            d_min: 1,
            d_max: 20,
            w_min: 4,
            w_max: 64,
            w_step: 4,
            code_max: 19,
            param_limit: None,
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidBounds(m));
        if self.d_min < 1 || self.w_min < 1 || self.w_step < 1 {
            return fail("d_min, w_min and w_step must be at least 1".into());
        }
        if self.d_min > self.d_max || self.w_min > self.w_max {
            return fail(format!(
                "empty range: d in [{}, {}], w in [{}, {}]",
                self.d_min, self.d_max, self.w_min, self.w_max
            ));
        }
        if self.code_max + 1 < self.d_max {
            return fail(format!(
                "code_max {} must be at least d_max - 1 = {}",
                self.code_max,
                self.d_max - 1
            ));
        }
        Ok(())
    }

    pub fn width_choices(&self) -> usize {
        (self.w_max - self.w_min) / self.w_step + 1
    }

    pub fn depth_choices(&self) -> usize {
        self.d_max - self.d_min + 1
    }

    fn width_at(&self, k: usize) -> usize {
        self.w_min + k * self.w_step
    }

    fn width_index(&self, w: usize) -> Option<usize> {
        (w >= self.w_min && w <= self.w_max && (w - self.w_min) % self.w_step == 0)
            .then(|| (w - self.w_min) / self.w_step)
    }

    /// Number of values code `i` (serialization order) may take.
    pub fn range_size(&self, i: usize) -> usize {
        match i {
            0 => self.depth_choices(),
            1 => self.width_choices(),
            _ => self.code_max + 1,
        }
    }

    pub fn check(&self, g: &Genotype) -> Result<()> {
        if g.depth < self.d_min || g.depth > self.d_max {
            return Err(Error::OutOfBounds(format!(
                "depth {} outside [{}, {}]",
                g.depth, self.d_min, self.d_max
            )));
        }
        if self.width_index(g.width).is_none() {
            return Err(Error::OutOfBounds(format!(
                "width {} not on the grid {}..={} step {}",
                g.width, self.w_min, self.w_max, self.w_step
            )));
        }
        if let Some(&x) = g
            .downsample
            .iter()
            .chain(&g.doubling)
            .find(|&&x| x > self.code_max)
        {
            return Err(Error::OutOfBounds(format!(
                "location code {x} exceeds code_max {}",
                self.code_max
            )));
        }
        Ok(())
    }
}

/// Draws every code uniformly from its range. Ignores `param_limit`; see
/// [`SearchSpace::sample`] for the budget-aware version.
pub fn random_genotype<R: Rng + ?Sized>(rng: &mut R, bounds: &Bounds) -> Result<Genotype> {
    bounds.validate()?;
    let mut codes = [0usize; CODE_COUNT];
    codes[0] = rng.gen_range(bounds.d_min..=bounds.d_max);
    codes[1] = bounds.width_at(rng.gen_range(0..bounds.width_choices()));
    for c in &mut codes[2..] {
        *c = rng.gen_range(0..=bounds.code_max);
    }
    Ok(Genotype::from_codes(codes))
}

/// Resamples exactly one mutable code to a different value. A depth change
/// remaps all location codes proportionally.
pub fn mutate<R: Rng + ?Sized>(g: &Genotype, rng: &mut R, bounds: &Bounds) -> Result<Genotype> {
    bounds.check(g)?;
    let mutable: Vec<usize> = (0..CODE_COUNT)
        .filter(|&i| bounds.range_size(i) > 1)
        .collect();
    if mutable.is_empty() {
        return Err(Error::FrozenSearchSpace);
    }
    let i = mutable[rng.gen_range(0..mutable.len())];
    let size = bounds.range_size(i);
    // uniform over the range minus the current value
    let pick = |current: usize, rng: &mut R| {
        let r = rng.gen_range(0..size - 1);
        if r >= current {
            r + 1
        } else {
            r
        }
    };
    let out = match i {
        0 => {
            let d = bounds.d_min + pick(g.depth - bounds.d_min, rng);
            g.with_depth(d, bounds.code_max)
        }
        1 => {
            let k = pick(bounds.width_index(g.width).expect("checked"), rng);
            Genotype {
                width: bounds.width_at(k),
                ..*g
            }
        }
        _ => {
            let mut codes = g.codes();
            codes[i] = pick(codes[i], rng);
            Genotype::from_codes(codes)
        }
    };
    Ok(out)
}

/// Exact parameter count of the network `g` decodes to.
pub fn count_parameters(
    g: &Genotype,
    config: &ComponentConfig,
    input: InputShape,
    num_classes: usize,
) -> Result<usize> {
    Ok(decode(g, config, input, num_classes)?.param_count())
}

/// Shrinks `g` until it fits `limit`, alternately stepping the width down one
/// grid step and the depth down one unit (width first). A dimension already
/// at its minimum is skipped.
pub fn scale_to_budget(
    g: &Genotype,
    limit: usize,
    bounds: &Bounds,
    config: &ComponentConfig,
    input: InputShape,
    num_classes: usize,
) -> Result<Genotype> {
    let mut cur = *g;
    let mut count = count_parameters(&cur, config, input, num_classes)?;
    let mut width_turn = true;
    while count > limit {
        let can_w = cur.width >= bounds.w_min + bounds.w_step;
        let can_d = cur.depth > bounds.d_min;
        if !can_w && !can_d {
            return Err(Error::InfeasibleBudget {
                limit,
                minimum: count,
            });
        }
        if (width_turn && can_w) || !can_d {
            cur.width -= bounds.w_step;
        } else {
            cur = cur.with_depth(cur.depth - 1, bounds.code_max);
        }
        width_turn = !width_turn;
        count = count_parameters(&cur, config, input, num_classes)?;
    }
    Ok(cur)
}

/// Bounds plus the decoding context needed to count parameters.
#[derive(Clone, Debug)]
pub struct SearchSpace {
    pub bounds: Bounds,
    pub config: ComponentConfig,
    pub input: InputShape,
    pub num_classes: usize,
}

impl SearchSpace {
    pub fn count(&self, g: &Genotype) -> Result<usize> {
        count_parameters(g, &self.config, self.input, self.num_classes)
    }

    /// Applies `scale_to_budget` when a limit is configured.
    pub fn fit(&self, g: &Genotype) -> Result<Genotype> {
        match self.bounds.param_limit {
            Some(limit) => scale_to_budget(
                g,
                limit,
                &self.bounds,
                &self.config,
                self.input,
                self.num_classes,
            ),
            None => Ok(*g),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Genotype> {
        let g = random_genotype(rng, &self.bounds)?;
        self.fit(&g)
    }

    pub fn mutate<R: Rng + ?Sized>(&self, g: &Genotype, rng: &mut R) -> Result<Genotype> {
        let m = mutate(g, rng, &self.bounds)?;
        self.fit(&m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_bounds_give_unique_genotype() {
        let b = Bounds {
            d_min: 1,
            d_max: 1,
            w_min: 4,
            w_max: 4,
            code_max: 0,
            ..Bounds::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_genotype(&mut rng, &b).unwrap();
        assert_eq!(g, Genotype::new(1, 4, [0; 5], [0; 5]));
        assert!(matches!(mutate(&g, &mut rng, &b), Err(Error::FrozenSearchSpace)));
    }

    #[test]
    fn sampling_is_valid_and_replayable() {
        let b = Bounds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            b.check(&random_genotype(&mut rng, &b).unwrap()).unwrap();
        }
        let a = random_genotype(&mut ChaCha8Rng::seed_from_u64(5), &b).unwrap();
        let c = random_genotype(&mut ChaCha8Rng::seed_from_u64(5), &b).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn depth_remap_examples() {
        let g = Genotype::new(4, 8, [1, 19, 19, 19, 19], [19; 5]);
        assert_eq!(g.with_depth(8, 19).downsample[0], 2);
        let g = Genotype::new(6, 8, [5, 19, 19, 19, 19], [19; 5]);
        assert_eq!(g.with_depth(3, 19).downsample[0], 2);
    }

    #[test]
    fn width_mutation_touches_only_width() {
        let b = Bounds {
            d_min: 3,
            d_max: 3,
            code_max: 0,
            ..Bounds::default()
        };
        let g = Genotype::new(3, 8, [0; 5], [0; 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let m = mutate(&g, &mut rng, &b).unwrap();
            assert_ne!(m.width, g.width);
            assert_eq!(m.codes()[0], 3);
            assert_eq!(&m.codes()[2..], &g.codes()[2..]);
        }
    }

    #[test]
    fn text_format() {
        let g = Genotype::new(3, 8, [0, 1, 7, 7, 7], [1, 7, 7, 7, 7]);
        assert_eq!(g.to_string(), "3,8,0,1,7,7,7,1,7,7,7,7");
        assert_eq!("3,8,0,1,7,7,7,1,7,7,7,7".parse::<Genotype>().unwrap(), g);
        assert!("3,8,0".parse::<Genotype>().is_err());
        assert!("3,8,0,1,7,7,x,1,7,7,7,7".parse::<Genotype>().is_err());
        assert!("3,8,0,1,7,7,-7,1,7,7,7,7".parse::<Genotype>().is_err());
        assert!(Genotype::parse_within("30,8,0,1,7,7,7,1,7,7,7,7", &Bounds::default()).is_err());
        assert!(Genotype::parse_within("3,7,0,1,7,7,7,1,7,7,7,7", &Bounds::default()).is_err());
    }

    #[test]
    fn bounds_validation() {
        assert!(Bounds::default().validate().is_ok());
        let bad = Bounds {
            code_max: 5,
            ..Bounds::default()
        };
        assert!(bad.validate().is_err());
        let empty = Bounds {
            d_min: 4,
            d_max: 3,
            ..Bounds::default()
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn inactive_codes_ignored() {
        let g = Genotype::new(3, 8, [0, 1, 1, 7, 9], [2, 3, 4, 5, 6]);
        assert_eq!(g.active_downsample().into_iter().collect::<Vec<_>>(), [0, 1]);
        assert_eq!(g.active_doubling().into_iter().collect::<Vec<_>>(), [2]);
    }
}

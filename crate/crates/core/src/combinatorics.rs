//! Power-set bookkeeping behind the irreducible subtraction.
//!
//! Every quantity here is an alternating sum over subsets of the object
//! labels `{0, .., n-1}`. Subsets are bitmasks, so `n` is capped at
//! [`MAX_OBJECTS`].

use thiserror::Error;

use crate::special::binomial;

/// Largest object count representable by a [`SubsetIndex`].
pub const MAX_OBJECTS: u32 = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CombinatoricsError {
    #[error("{0} objects exceeds the supported maximum of {MAX_OBJECTS}")]
    TooManyObjects(u32),
    #[error("subset {subset:#b} does not fit in {n} objects")]
    SubsetOutOfRange { subset: u32, n: u32 },
    #[error("survival probability {value} of object {index} lies outside [0, 1]")]
    SurvivalOutOfRange { index: usize, value: f64 },
    #[error("subset {0:#b} must be a proper subset of all objects")]
    NotProperSubset(u32),
    #[error("subset size {size} exceeds object count {n}")]
    SizeOutOfRange { size: u32, n: u32 },
}

/// A subset of object labels stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SubsetIndex(u32);

impl SubsetIndex {
    pub const EMPTY: SubsetIndex = SubsetIndex(0);

    pub fn new(bits: u32, n: u32) -> Result<Self, CombinatoricsError> {
        check_n(n)?;
        if n < 32 && bits >> n != 0 {
            return Err(CombinatoricsError::SubsetOutOfRange { subset: bits, n });
        }
        Ok(SubsetIndex(bits))
    }

    /// The full set `{0, .., n-1}`.
    pub fn full(n: u32) -> Result<Self, CombinatoricsError> {
        check_n(n)?;
        Ok(SubsetIndex(full_mask(n)))
    }

    pub fn from_members(members: &[u32], n: u32) -> Result<Self, CombinatoricsError> {
        let mut bits = 0u32;
        for &m in members {
            if m >= n {
                return Err(CombinatoricsError::SubsetOutOfRange { subset: 1 << m.min(31), n });
            }
            bits |= 1 << m;
        }
        SubsetIndex::new(bits, n)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, member: u32) -> bool {
        member < 32 && self.0 & (1 << member) != 0
    }

    pub fn intersection(self, other: SubsetIndex) -> SubsetIndex {
        SubsetIndex(self.0 & other.0)
    }

    pub fn is_subset_of(self, other: SubsetIndex) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn members(self) -> impl Iterator<Item = u32> {
        let bits = self.0;
        (0..32).filter(move |i| bits & (1 << i) != 0)
    }

    /// All subsets of `self`, in increasing bitmask order.
    pub fn subsets(self) -> impl Iterator<Item = SubsetIndex> {
        let mask = self.0;
        let mut next = Some(0u32);
        std::iter::from_fn(move || {
            let current = next?;
            next = if current == mask { None } else { Some(((current | !mask).wrapping_add(1)) & mask) };
            Some(SubsetIndex(current))
        })
    }
}

fn check_n(n: u32) -> Result<(), CombinatoricsError> {
    if n > MAX_OBJECTS {
        Err(CombinatoricsError::TooManyObjects(n))
    } else {
        Ok(())
    }
}

fn full_mask(n: u32) -> u32 {
    if n == 0 {
        0
    } else {
        u32::MAX >> (32 - n)
    }
}

/// Iterates the whole power set of `n` objects.
pub fn power_set(n: u32) -> Result<impl Iterator<Item = SubsetIndex>, CombinatoricsError> {
    Ok(SubsetIndex::full(n)?.subsets())
}

/// Inclusion–exclusion sign `(-1)^(n - |s|)` of subset `s` in the irreducible sum.
pub fn signed_weight(n: u32, subset: SubsetIndex) -> i32 {
    if (n - subset.len().min(n)) % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Total signed multiplicity with which a reduced heat-kernel coefficient of
/// a set of size `tau_size` enters the irreducible sum over `n` objects:
/// `sum_{k=tau_size}^{n} (-1)^(n-k) C(n - tau_size, n - k)`.
///
/// Vanishes unless `tau_size == n`.
pub fn astot_sum(n: u32, tau_size: u32) -> Result<i128, CombinatoricsError> {
    check_n(n)?;
    if tau_size > n {
        return Err(CombinatoricsError::SizeOutOfRange { size: tau_size, n });
    }
    let free = n - tau_size;
    Ok((tau_size..=n)
        .map(|k| {
            let sign = if (n - k) % 2 == 0 { 1 } else { -1 };
            sign * binomial(free, n - k)
        })
        .sum())
}

/// Net contribution of a loop that meets exactly the objects in `tau` (a
/// proper subset) to the irreducible sum, enumerated over every `s` in the
/// power set: `sum_s (-1)^(n-|s|) p_{s ∩ tau}`.
///
/// `survival(gamma)` supplies the loop's survival probability in the domain
/// containing the objects `gamma ⊆ tau`. The result is zero up to rounding
/// for any choice of survivals.
pub fn loopcont_sum<F>(n: u32, tau: SubsetIndex, survival: F) -> Result<f64, CombinatoricsError>
where
    F: Fn(SubsetIndex) -> f64,
{
    let full = SubsetIndex::full(n)?;
    if !tau.is_subset_of(full) {
        return Err(CombinatoricsError::SubsetOutOfRange { subset: tau.bits(), n });
    }
    if tau == full {
        return Err(CombinatoricsError::NotProperSubset(tau.bits()));
    }
    Ok(full.subsets().map(|s| signed_weight(n, s) as f64 * survival(s.intersection(tau))).sum())
}

/// The same quantity as [`loopcont_sum`], regrouped by `gamma = s ∩ tau`:
/// `sum_{gamma ⊆ tau} p_gamma sum_k (-1)^(n-k) C(n - |tau|, k - |gamma|)`.
pub fn loopcont_sum_grouped<F>(n: u32, tau: SubsetIndex, survival: F) -> Result<f64, CombinatoricsError>
where
    F: Fn(SubsetIndex) -> f64,
{
    let full = SubsetIndex::full(n)?;
    if !tau.is_subset_of(full) {
        return Err(CombinatoricsError::SubsetOutOfRange { subset: tau.bits(), n });
    }
    if tau == full {
        return Err(CombinatoricsError::NotProperSubset(tau.bits()));
    }
    let outside = n - tau.len();
    Ok(tau
        .subsets()
        .map(|gamma| {
            let g = gamma.len();
            let multiplicity: i128 = (g..=g + outside)
                .map(|k| {
                    let sign = if (n - k) % 2 == 0 { 1 } else { -1 };
                    sign * binomial(outside, k - g)
                })
                .sum();
            multiplicity as f64 * survival(gamma)
        })
        .sum())
}

/// How [`kill_probability`] composes per-object survivals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KillMode {
    /// `sum_{gamma} (-1)^|gamma| prod_{i in gamma} s_i`, O(2^n).
    PowerSet,
    /// `prod_i (1 - s_i)`, O(n).
    Product,
}

/// Probability that a path is killed by every object, given its
/// path-conditioned survival probability `s_i` against each object alone.
pub fn kill_probability(survivals: &[f64], mode: KillMode) -> Result<f64, CombinatoricsError> {
    for (index, &value) in survivals.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(CombinatoricsError::SurvivalOutOfRange { index, value });
        }
    }
    match mode {
        KillMode::Product => Ok(kill_product(survivals)),
        KillMode::PowerSet => {
            let n = survivals.len() as u32;
            let mut total = 0.0;
            for gamma in power_set(n)? {
                let p: f64 = gamma.members().map(|i| survivals[i as usize]).product();
                total += if gamma.len() % 2 == 0 { p } else { -p };
            }
            Ok(total.clamp(0.0, 1.0))
        }
    }
}

/// Unchecked product form used on the engine's hot path.
#[inline]
pub(crate) fn kill_product(survivals: &[f64]) -> f64 {
    survivals.iter().map(|s| 1.0 - s).product()
}

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error};

/// Scene categories of the authentic images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Animal,
    Architecture,
    Art,
    Character,
    Indoor,
    Nature,
    Plant,
    Scene,
    Texture,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::Animal,
        Category::Architecture,
        Category::Art,
        Category::Character,
        Category::Indoor,
        Category::Nature,
        Category::Plant,
        Category::Scene,
        Category::Texture,
    ];

    /// Authentic-image counts of the published dataset.
    pub fn misd_authentic_count(self) -> usize {
        match self {
            Category::Animal => 167,
            Category::Architecture => 35,
            Category::Art => 76,
            Category::Character => 124,
            Category::Indoor => 7,
            Category::Nature => 53,
            Category::Plant => 50,
            Category::Scene => 74,
            Category::Texture => 32,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Animal => "animal",
            Category::Architecture => "architecture",
            Category::Art => "art",
            Category::Character => "character",
            Category::Indoor => "indoor",
            Category::Nature => "nature",
            Category::Plant => "plant",
            Category::Scene => "scene",
            Category::Texture => "texture",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim().to_ascii_lowercase();
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown category '{s}'")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub authentic: usize,
    pub spliced: usize,
    /// Authentic images per category (images without a category are not listed).
    pub authentic_per_category: BTreeMap<Category, usize>,
    pub spliced_per_category: BTreeMap<Category, usize>,
    /// Number of spliced images carrying `k` regions.
    pub regions_histogram: BTreeMap<usize, usize>,
    pub min_regions: Option<usize>,
    pub max_regions: Option<usize>,
}

/// Counts images by status and category. An image is spliced iff it has at
/// least one region.
pub fn dataset_stats<I>(samples: I) -> DatasetStats
where
    I: IntoIterator<Item = (Option<Category>, usize)>,
{
    let mut s = DatasetStats::default();
    for (cat, regions) in samples {
        s.total += 1;
        if regions == 0 {
            s.authentic += 1;
            if let Some(c) = cat {
                *s.authentic_per_category.entry(c).or_default() += 1;
            }
        } else {
            s.spliced += 1;
            if let Some(c) = cat {
                *s.spliced_per_category.entry(c).or_default() += 1;
            }
            *s.regions_histogram.entry(regions).or_default() += 1;
            s.min_regions = Some(s.min_regions.map_or(regions, |m| m.min(regions)));
            s.max_regions = Some(s.max_regions.map_or(regions, |m| m.max(regions)));
        }
    }
    s
}

impl DatasetStats {
    /// Table-style text summary.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("total      {}\n", self.total));
        out.push_str(&format!("authentic  {}\n", self.authentic));
        for c in Category::ALL {
            if let Some(n) = self.authentic_per_category.get(&c) {
                out.push_str(&format!("  {:<13}{}\n", c.as_str(), n));
            }
        }
        out.push_str(&format!("spliced    {}\n", self.spliced));
        if let (Some(a), Some(b)) = (self.min_regions, self.max_regions) {
            out.push_str(&format!("  regions per spliced image: {a}..{b}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty() {
        assert_eq!(dataset_stats(std::iter::empty()), DatasetStats::default());
    }

    #[test]
    fn misd_catalogue() {
        let mut items = Vec::new();
        for c in Category::ALL {
            items.extend(std::iter::repeat_n((Some(c), 0), c.misd_authentic_count()));
        }
        items.extend((0..300).map(|i| (None, 3 + i % 5)));
        let s = dataset_stats(items);
        assert_eq!((s.total, s.authentic, s.spliced), (918, 618, 300));
        assert_eq!(s.authentic_per_category[&Category::Animal], 167);
        assert_eq!((s.min_regions, s.max_regions), (Some(3), Some(7)));
    }

    #[test]
    fn parse_category() {
        assert_eq!("Animal".parse::<Category>().unwrap(), Category::Animal);
        assert!("cars".parse::<Category>().is_err());
    }
}

//! View plans: how many views of each class a reconstruction uses.

use frk_core::geometry::ViewClass;
use frk_core::{Error, Result};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const MIN_VIEWS: usize = 2;
pub const MAX_VIEWS: usize = 8;

/// View counts in class order AP, lateral, oblique, misc.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewPlan {
    pub name: String,
    pub counts: [usize; 4],
}

impl ViewPlan {
    pub fn new(name: impl Into<String>, counts: [usize; 4]) -> Result<Self> {
        let plan = ViewPlan {
            name: name.into(),
            counts,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.total();
        if !(MIN_VIEWS..=MAX_VIEWS).contains(&n) {
            return Err(Error::invalid(
                "counts",
                format!("plan `{}` has {n} views, expected {MIN_VIEWS}..={MAX_VIEWS}", self.name),
            ));
        }
        Ok(())
    }

    /// Parses `ap/lat/ob/misc`, e.g. `1/1/1/1`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<_> = text.split('/').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::invalid("plan", format!("`{text}` is not ap/lat/ob/misc")));
        }
        let mut counts = [0; 4];
        for (c, p) in counts.iter_mut().zip(&parts) {
            *c = p
                .parse()
                .map_err(|_| Error::invalid("plan", format!("`{p}` is not a count")))?;
        }
        ViewPlan::new(text, counts)
    }

    /// Draws the views of each class without replacement. `classes[i]` is
    /// the class of candidate `i`; returns candidate indices grouped by
    /// class in the plan's class order.
    pub fn realize<R: Rng>(&self, classes: &[ViewClass], rng: &mut R) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(self.total());
        for (class, &need) in ViewClass::ALL.iter().zip(&self.counts) {
            let pool: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == *class).collect();
            if pool.len() < need {
                return Err(Error::invalid(
                    "counts",
                    format!(
                        "plan `{}` needs {need} {class} views, {} available",
                        self.name,
                        pool.len()
                    ),
                ));
            }
            out.extend(pool.choose_multiple(rng, need).copied());
        }
        Ok(out)
    }
}

/// Number-of-views rows, 2 to 8 views.
pub fn view_count_plans() -> Vec<ViewPlan> {
    let rows: [(&str, [usize; 4]); 7] = [
        ("2", [1, 1, 0, 0]),
        ("3", [1, 1, 1, 0]),
        ("4", [1, 1, 1, 1]),
        ("5", [2, 1, 1, 1]),
        ("6", [2, 2, 1, 1]),
        ("7", [2, 2, 2, 1]),
        ("8", [2, 2, 2, 2]),
    ];
    rows.iter()
        .map(|(n, c)| ViewPlan::new(*n, *c).expect("rows are valid"))
        .collect()
}

/// The four four-view class combinations.
pub fn combination_plans() -> Vec<ViewPlan> {
    let rows: [(&str, [usize; 4]); 4] = [
        ("1AP+1LAT+1OB+1MISC", [1, 1, 1, 1]),
        ("2AP+2LAT", [2, 2, 0, 0]),
        ("1AP+3LAT", [1, 3, 0, 0]),
        ("3AP+1LAT", [3, 1, 0, 0]),
    ];
    rows.iter()
        .map(|(n, c)| ViewPlan::new(*n, *c).expect("combos are valid"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use frk_core::geometry::protocol_angles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rows_follow_the_class_table() {
        let rows = view_count_plans();
        assert_eq!(rows.len(), 7);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.total(), i + 2);
            assert_eq!(r.name, (i + 2).to_string());
        }
        assert_eq!(rows[6].counts, [2, 2, 2, 2]);
        assert_eq!(rows[3].counts, [2, 1, 1, 1]);
    }

    #[test]
    fn realize_respects_counts_and_classes() {
        let classes: Vec<_> = protocol_angles().into_iter().map(|(c, _, _)| c).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for plan in view_count_plans().iter().chain(&combination_plans()) {
            let picked = plan.realize(&classes, &mut rng).unwrap();
            assert_eq!(picked.len(), plan.total());
            let mut sorted = picked.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), picked.len());
            for (k, class) in ViewClass::ALL.iter().enumerate() {
                assert_eq!(picked.iter().filter(|&&i| classes[i] == *class).count(), plan.counts[k]);
            }
        }
    }

    #[test]
    fn parse_and_bounds() {
        assert_eq!(ViewPlan::parse("2/1/1/0").unwrap().counts, [2, 1, 1, 0]);
        assert!(ViewPlan::parse("1/0/0/0").is_err());
        assert!(ViewPlan::parse("3/3/3/0").is_err());
        assert!(ViewPlan::parse("1/1").is_err());
    }

    #[test]
    fn too_few_candidates_is_an_error() {
        let classes = [ViewClass::Ap, ViewClass::Lateral];
        let plan = ViewPlan::new("x", [2, 1, 0, 0]).unwrap();
        assert!(plan.realize(&classes, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}

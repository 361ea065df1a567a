//! Positive-set strategies for the numeric contrastive objective.
//!
//! Each strategy maps a query condition and the annotated in-batch
//! candidates to one or more positive sets; every returned set drives its
//! own InfoNCE objective and the objectives are averaged.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::quantity::{satisfies, NumericalCondition, Quantity, UnitTable, Verdict};
use crate::registry::Registry;

pub trait PositiveSetStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn positive_sets(&self, cond: &NumericalCondition, candidates: &[Quantity], eq_tolerance: f64) -> Vec<Vec<usize>>;
}

impl fmt::Debug for dyn PositiveSetStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Units agree when both are absent or both convert into each other.
pub fn units_match(doc: &Quantity, cond: &NumericalCondition) -> bool {
    match (doc.unit, cond.unit) {
        (None, None) => true,
        (Some(a), Some(b)) => UnitTable::builtin().same_dimension(a, b),
        _ => false,
    }
}

fn unit_set(cond: &NumericalCondition, candidates: &[Quantity]) -> Vec<usize> {
    (0..candidates.len()).filter(|&i| units_match(&candidates[i], cond)).collect()
}

fn numeric_set(cond: &NumericalCondition, candidates: &[Quantity], tol: f64) -> Vec<usize> {
    (0..candidates.len())
        .filter(|&i| satisfies(&candidates[i], cond, tol) == Verdict::Satisfied)
        .collect()
}

pub struct UnitOnly;
pub struct NumericOnly;
pub struct Joint;
pub struct Separate;

impl PositiveSetStrategy for UnitOnly {
    fn name(&self) -> &'static str {
        "unit_only"
    }

    fn positive_sets(&self, cond: &NumericalCondition, candidates: &[Quantity], _tol: f64) -> Vec<Vec<usize>> {
        vec![unit_set(cond, candidates)]
    }
}

impl PositiveSetStrategy for NumericOnly {
    fn name(&self) -> &'static str {
        "numeric_only"
    }

    fn positive_sets(&self, cond: &NumericalCondition, candidates: &[Quantity], tol: f64) -> Vec<Vec<usize>> {
        vec![numeric_set(cond, candidates, tol)]
    }
}

impl PositiveSetStrategy for Joint {
    fn name(&self) -> &'static str {
        "joint"
    }

    fn positive_sets(&self, cond: &NumericalCondition, candidates: &[Quantity], tol: f64) -> Vec<Vec<usize>> {
        let units = unit_set(cond, candidates);
        let joint = numeric_set(cond, candidates, tol)
            .into_iter()
            .filter(|i| units.contains(i))
            .collect();
        vec![joint]
    }
}

impl PositiveSetStrategy for Separate {
    fn name(&self) -> &'static str {
        "separate"
    }

    fn positive_sets(&self, cond: &NumericalCondition, candidates: &[Quantity], tol: f64) -> Vec<Vec<usize>> {
        vec![unit_set(cond, candidates), numeric_set(cond, candidates, tol)]
    }
}

pub fn builtin_strategies() -> &'static Registry<dyn PositiveSetStrategy> {
    static REG: OnceLock<Registry<dyn PositiveSetStrategy>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn PositiveSetStrategy> = Registry::new("positive-set strategy");
        r.register("unit_only", Arc::new(UnitOnly))
            .register("numeric_only", Arc::new(NumericOnly))
            .register("joint", Arc::new(Joint))
            .register("separate", Arc::new(Separate));
        r
    })
}

pub fn build_positive_set(
    cond: &NumericalCondition,
    candidates: &[Quantity],
    strategy: &dyn PositiveSetStrategy,
    eq_tolerance: f64,
) -> Vec<Vec<usize>> {
    strategy.positive_sets(cond, candidates, eq_tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantity::{Cmp, DEFAULT_EQ_TOLERANCE, GB, MBPS, TB};
    use proptest::prelude::*;

    fn cands() -> Vec<Quantity> {
        vec![
            Quantity::new(1000.0, Some(GB)),
            Quantity::new(256.0, Some(GB)),
            Quantity::new(600.0, Some(MBPS)),
        ]
    }

    fn gt500() -> NumericalCondition {
        NumericalCondition {
            value: 500.0,
            cmp: Cmp::Gt,
            unit: Some(GB),
        }
    }

    fn sets(name: &str, cond: &NumericalCondition, c: &[Quantity]) -> Vec<Vec<usize>> {
        let s = builtin_strategies().get(name).unwrap();
        build_positive_set(cond, c, s.as_ref(), DEFAULT_EQ_TOLERANCE)
    }

    #[test]
    fn strategies_on_the_storage_example() {
        let c = cands();
        assert_eq!(sets("unit_only", &gt500(), &c), [vec![0, 1]]);
        assert_eq!(sets("numeric_only", &gt500(), &c), [vec![0]]);
        assert_eq!(sets("joint", &gt500(), &c), [vec![0]]);
        assert_eq!(sets("separate", &gt500(), &c), [vec![0, 1], vec![0]]);
    }

    #[test]
    fn unit_compatible_counts_as_same_unit() {
        let c = vec![Quantity::new(2.0, Some(TB))];
        assert_eq!(sets("unit_only", &gt500(), &c), [vec![0]]);
        assert_eq!(sets("joint", &gt500(), &c), [vec![0]]);
    }

    #[test]
    fn no_shared_unit_gives_empty_set() {
        let c = vec![Quantity::new(600.0, Some(MBPS)), Quantity::new(3.0, None)];
        assert_eq!(sets("unit_only", &gt500(), &c), [Vec::<usize>::new()]);
    }

    #[test]
    fn registry_names() {
        assert_eq!(builtin_strategies().names(), ["unit_only", "numeric_only", "joint", "separate"]);
        for (name, s) in builtin_strategies().iter() {
            assert_eq!(name, s.name());
        }
    }

    fn quantity() -> impl Strategy<Value = Quantity> {
        let units = prop::sample::select(vec![None, Some(GB), Some(TB), Some(MBPS)]);
        (0.0f64..2000.0, units).prop_map(|(v, u)| Quantity::new(v.round(), u))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn joint_is_a_subset_of_both(cands in prop::collection::vec(quantity(), 4), v in 0.0f64..2000.0, cmp in 0usize..3, unit in prop::sample::select(vec![None, Some(GB), Some(MBPS)])) {
            let cond = NumericalCondition { value: v.round(), cmp: Cmp::ALL[cmp], unit };
            let joint = &sets("joint", &cond, &cands)[0];
            let unit_only = &sets("unit_only", &cond, &cands)[0];
            let numeric = &sets("numeric_only", &cond, &cands)[0];
            prop_assert!(joint.iter().all(|i| unit_only.contains(i) && numeric.contains(i)));
        }
    }
}

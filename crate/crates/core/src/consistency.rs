//! Annotation consistency measures.
//!
//! Two views of the same question: how often do two independent annotation
//! passes disagree ([`disagreement_counts`], tiered by [`consistency_tier`]),
//! and how inconsistent are the labels of confirmed duplicate faces relative
//! to what random labeling at the same class balance would produce
//! ([`inconsistency_level`]).

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationMatrix;
use crate::error::{Error, Result};
use crate::report::Row;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tier {
    /// consistency >= 95%
    High,
    /// 85% < consistency < 95%
    Medium,
    /// consistency <= 85%
    Low,
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Tier::High => "HIGH",
            Tier::Medium => "MEDIUM",
            Tier::Low => "LOW",
        })
    }
}

/// Tier of an attribute with `n_d` disagreements over `n_images` compared
/// images. Both boundaries are closed (exactly 95% is HIGH, exactly 85% is
/// LOW); the comparison is done in integers so no rounding can move an
/// attribute across a boundary. `None` when `n_images` is zero or smaller
/// than `n_d`.
pub fn consistency_tier(n_d: u64, n_images: u64) -> Option<Tier> {
    if n_images == 0 || n_d > n_images {
        return None;
    }
    let agree20 = 20 * (n_images - n_d) as u128;
    let n = n_images as u128;
    Some(if agree20 >= 19 * n {
        Tier::High
    } else if agree20 <= 17 * n {
        Tier::Low
    } else {
        Tier::Medium
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisagreementReport {
    pub attribute: String,
    pub n_d: u64,
    pub n_images: u64,
    pub tier: Option<Tier>,
}

impl DisagreementReport {
    pub fn consistency(&self) -> Option<f64> {
        (self.n_images > 0).then(|| 1.0 - self.n_d as f64 / self.n_images as f64)
    }
}

/// Per-attribute disagreement between two annotation passes over the same
/// images. Cells where either pass says info-not-visible are left out of
/// both `n_d` and `n_images` for that attribute.
pub fn disagreement_counts(
    pass_a: &AnnotationMatrix,
    pass_b: &AnnotationMatrix,
) -> Result<Vec<DisagreementReport>> {
    let attrs_a: HashSet<&String> = pass_a.attributes().iter().collect();
    let attrs_b: HashSet<&String> = pass_b.attributes().iter().collect();
    if attrs_a != attrs_b {
        return Err(Error::MatrixShapeMismatch("attribute sets differ".into()));
    }
    let ids_a: HashSet<&str> = pass_a.usable_images().map(|(_, r)| r.image_id.as_str()).collect();
    let ids_b: HashSet<&str> = pass_b.usable_images().map(|(_, r)| r.image_id.as_str()).collect();
    if ids_a != ids_b {
        return Err(Error::MatrixShapeMismatch(format!(
            "image sets differ ({} vs {} usable images)",
            ids_a.len(),
            ids_b.len()
        )));
    }
    // row index in b for each usable row of a
    let b_rows: Vec<(usize, usize)> = pass_a
        .usable_images()
        .map(|(i, r)| Ok((i, pass_b.image_index(&r.image_id)?)))
        .collect::<Result<_>>()?;

    pass_a
        .attributes()
        .iter()
        .enumerate()
        .map(|(a_col, name)| {
            let b_col = pass_b.attribute_index(name)?;
            let (mut n_d, mut n_images) = (0u64, 0u64);
            for &(ia, ib) in &b_rows {
                let va = pass_a.cell(ia, a_col).and_then(|v| v.as_bool());
                let vb = pass_b.cell(ib, b_col).and_then(|v| v.as_bool());
                if let (Some(x), Some(y)) = (va, vb) {
                    n_images += 1;
                    if x != y {
                        n_d += 1;
                    }
                }
            }
            Ok(DisagreementReport {
                attribute: name.clone(),
                n_d,
                n_images,
                tier: consistency_tier(n_d, n_images),
            })
        })
        .collect()
}

/// Agreement rate of two labels drawn independently with positive
/// frequency `f`: `f^2 + (1-f)^2 = 1 - 2f(1-f)`.
///
/// Panics if `f` is outside `[0, 1]`.
pub fn expected_random_agreement(f: f64) -> f64 {
    assert!((0.0..=1.0).contains(&f), "frequency {f} outside [0, 1]");
    1.0 - 2.0 * f * (1.0 - f)
}

/// Label statistics of one attribute over confirmed duplicate pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateConflictStats {
    pub attribute: String,
    pub n_differ: u64,
    pub n_p: u64,
    pub n_n: u64,
    pub n_total: u64,
    pub positive_frequency: f64,
    /// Observed disagreements divided by the disagreements expected under
    /// random labeling. 0 is perfectly consistent, 1 is random. Not clamped.
    pub p_in: f64,
}

/// Inconsistency level of an attribute over duplicate pairs:
/// `n_differ / (2 f (1 - f) n_total)` with `f = n_p / (n_p + n_n)` taken
/// over both members of every pair.
pub fn inconsistency_level(
    attribute: &str,
    n_differ: u64,
    n_p: u64,
    n_n: u64,
    n_total: u64,
) -> Result<DuplicateConflictStats> {
    if n_p + n_n != 2 * n_total {
        return Err(Error::PairCountMismatch {
            labels: n_p + n_n,
            expected: 2 * n_total,
        });
    }
    if n_p == 0 || n_n == 0 {
        return Err(Error::DegenerateFrequency { n_p, n_n });
    }
    if n_differ > n_total {
        return Err(Error::InvalidArgument(format!(
            "n_differ {n_differ} exceeds n_total {n_total}"
        )));
    }
    let f = n_p as f64 / (n_p + n_n) as f64;
    let expected_differ = 2.0 * f * (1.0 - f) * n_total as f64;
    Ok(DuplicateConflictStats {
        attribute: attribute.to_string(),
        n_differ,
        n_p,
        n_n,
        n_total,
        positive_frequency: f,
        p_in: n_differ as f64 / expected_differ,
    })
}

/// Sorts stats by descending `p_in` (ties by attribute name) and drops the
/// attributes listed in `exclude`.
pub fn rank_by_inconsistency(
    mut stats: Vec<DuplicateConflictStats>,
    exclude: &[String],
) -> Vec<DuplicateConflictStats> {
    stats.retain(|s| !exclude.contains(&s.attribute));
    stats.sort_by(|a, b| {
        b.p_in
            .total_cmp(&a.p_in)
            .then_with(|| a.attribute.cmp(&b.attribute))
    });
    stats
}

impl Row for DuplicateConflictStats {
    fn header() -> Vec<&'static str> {
        vec!["attribute", "n_differ", "n_n", "n_p", "p_in"]
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.attribute.clone(),
            self.n_differ.to_string(),
            self.n_n.to_string(),
            self.n_p.to_string(),
            format!("{:.3}", self.p_in),
        ]
    }
}

impl Row for DisagreementReport {
    fn header() -> Vec<&'static str> {
        vec!["attribute", "n_d", "n_images", "consistency", "tier"]
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.attribute.clone(),
            self.n_d.to_string(),
            self.n_images.to_string(),
            self.consistency()
                .map(|c| format!("{:.3}", c))
                .unwrap_or_else(|| "-".into()),
            self.tier.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{ImageRecord, LabelValue};
    use crate::rng;
    use proptest::prelude::*;

    fn matrix(col: &[LabelValue]) -> AnnotationMatrix {
        let mut m = AnnotationMatrix::new(vec!["Eyeglasses".into()]).unwrap();
        for (i, v) in col.iter().enumerate() {
            m.push_image(ImageRecord::new(format!("{i:06}.jpg")), &[*v]).unwrap();
        }
        m
    }

    #[test]
    fn tier_boundaries() {
        assert_eq!(consistency_tier(50, 1000), Some(Tier::High));
        assert_eq!(consistency_tier(51, 1000), Some(Tier::Medium));
        assert_eq!(consistency_tier(141, 1000), Some(Tier::Medium));
        assert_eq!(consistency_tier(149, 1000), Some(Tier::Medium));
        assert_eq!(consistency_tier(150, 1000), Some(Tier::Low));
        assert_eq!(consistency_tier(0, 1000), Some(Tier::High));
        assert_eq!(consistency_tier(0, 0), None);
        assert_eq!(consistency_tier(5, 4), None);
    }

    #[test]
    fn identical_passes() {
        let col: Vec<_> = (0..1000).map(|i| LabelValue::from_bool(i % 3 == 0)).collect();
        let r = disagreement_counts(&matrix(&col), &matrix(&col)).unwrap();
        assert_eq!(r[0].n_d, 0);
        assert_eq!(r[0].n_images, 1000);
        assert_eq!(r[0].tier, Some(Tier::High));
    }

    #[test]
    fn three_differences() {
        let a: Vec<_> = (0..1000).map(|_| LabelValue::False).collect();
        let mut b = a.clone();
        for i in [10, 500, 999] {
            b[i] = LabelValue::True;
        }
        let r = disagreement_counts(&matrix(&a), &matrix(&b)).unwrap();
        assert_eq!(r[0].n_d, 3);
    }

    #[test]
    fn info_not_visible_is_excluded() {
        let a: Vec<_> = (0..1000).map(|_| LabelValue::True).collect();
        let mut b = a.clone();
        b[42] = LabelValue::InfoNotVisible;
        let r = disagreement_counts(&matrix(&a), &matrix(&b)).unwrap();
        assert_eq!((r[0].n_d, r[0].n_images), (0, 999));
    }

    #[test]
    fn shape_mismatch() {
        let a = matrix(&[LabelValue::True; 3]);
        let b = matrix(&[LabelValue::True; 4]);
        let e = disagreement_counts(&a, &b).unwrap_err();
        assert_eq!(e.code(), "MATRIX_SHAPE_MISMATCH");
    }

    #[test]
    fn random_agreement_anchors() {
        assert_eq!(expected_random_agreement(0.5), 0.5);
        assert!((expected_random_agreement(0.9) - 0.82).abs() < 1e-12);
        assert_eq!(expected_random_agreement(1.0), 1.0);
        assert_eq!(expected_random_agreement(0.0), 1.0);
    }

    #[test]
    fn table_rows() {
        let male = inconsistency_level("Male", 12, 4488, 5648, 5068).unwrap();
        assert!((male.p_in - 0.005).abs() < 0.001);
        let nose = inconsistency_level("Pointy_Nose", 860, 2798, 7338, 5068).unwrap();
        assert!((nose.p_in - 0.425).abs() < 0.001);
        let zero = inconsistency_level("X", 0, 10, 30, 20).unwrap();
        assert_eq!(zero.p_in, 0.0);
    }

    #[test]
    fn inconsistency_errors() {
        let e = inconsistency_level("X", 1, 0, 20, 10).unwrap_err();
        assert_eq!(e.code(), "DEGENERATE_FREQUENCY");
        let e = inconsistency_level("X", 1, 5, 20, 10).unwrap_err();
        assert_eq!(e.code(), "PAIR_COUNT_MISMATCH");
    }

    #[test]
    fn ranking_sorts_descending_and_excludes() {
        let stats = vec![
            inconsistency_level("Male", 12, 4488, 5648, 5068).unwrap(),
            inconsistency_level("Blurry", 154, 300, 9836, 5068).unwrap(),
            inconsistency_level("Pointy_Nose", 860, 2798, 7338, 5068).unwrap(),
        ];
        let ranked = rank_by_inconsistency(stats.clone(), &[]);
        let names: Vec<_> = ranked.iter().map(|s| s.attribute.as_str()).collect();
        assert_eq!(names, ["Blurry", "Pointy_Nose", "Male"]);
        let ranked = rank_by_inconsistency(stats, &["Blurry".to_string()]);
        assert_eq!(ranked.len(), 2);
    }

    /// Independent labels at frequency f give an expected p_in of 1.
    #[test]
    fn random_labels_have_unit_inconsistency() {
        let mut r = rng::seeded(2024);
        for f in [0.1, 0.3, 0.5] {
            let n_total = 100_000u64;
            let (mut n_p, mut n_differ) = (0u64, 0u64);
            for _ in 0..n_total {
                let a = rng::unit_f64(&mut r) < f;
                let b = rng::unit_f64(&mut r) < f;
                n_p += a as u64 + b as u64;
                n_differ += (a != b) as u64;
            }
            let s = inconsistency_level("sim", n_differ, n_p, 2 * n_total - n_p, n_total).unwrap();
            assert!((s.p_in - 1.0).abs() < 0.05, "f={f}: p_in={}", s.p_in);
        }
    }

    proptest! {
        #[test]
        fn symmetric_in_class_swap(n_total in 1u64..10_000, p_frac in 0.01f64..0.99, d_frac in 0.0f64..1.0) {
            let n_p = ((2 * n_total) as f64 * p_frac).round().clamp(1.0, (2 * n_total - 1) as f64) as u64;
            let n_n = 2 * n_total - n_p;
            let n_differ = (n_total as f64 * d_frac) as u64;
            let a = inconsistency_level("x", n_differ, n_p, n_n, n_total).unwrap();
            let b = inconsistency_level("x", n_differ, n_n, n_p, n_total).unwrap();
            prop_assert!((a.p_in - b.p_in).abs() <= 1e-12 * a.p_in.max(1.0));
        }

        #[test]
        fn linear_in_n_differ(n_total in 2u64..10_000, n_p in 1u64..1000, k in 1u64..4) {
            prop_assume!(n_p < 2 * n_total);
            let n_n = 2 * n_total - n_p;
            let base = n_total / 4;
            prop_assume!(base * k <= n_total && base > 0);
            let one = inconsistency_level("x", base, n_p, n_n, n_total).unwrap();
            let many = inconsistency_level("x", base * k, n_p, n_n, n_total).unwrap();
            prop_assert!((many.p_in - k as f64 * one.p_in).abs() <= 1e-9 * many.p_in.max(1.0));
        }
    }
}

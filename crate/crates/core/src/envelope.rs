//! Upper envelope of a family of lines `a + b·t` over the whole real line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Who a line belongs to. Products precede `Outside` in the derived order,
/// which is also the tie-break priority for coincident lines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Owner {
    Product(usize),
    Outside,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line {
    pub owner: Owner,
    pub intercept: f64,
    pub slope: f64,
}

impl Line {
    pub fn new(owner: Owner, intercept: f64, slope: f64) -> Self {
        Self {
            owner,
            intercept,
            slope,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        self.intercept + self.slope * t
    }
}

/// Maximal interval `[lower, upper]` on which `owner`'s line is the maximum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeSegment {
    pub owner: Owner,
    pub lower: f64,
    pub upper: f64,
    pub intercept: f64,
    pub slope: f64,
}

/// Abscissa where `right` overtakes `left`; requires `left.slope < right.slope`.
#[inline]
pub(crate) fn crossing(left: &Line, right: &Line) -> f64 {
    (left.intercept - right.intercept) / (right.slope - left.slope)
}

/// Convex-hull sweep over lines already ordered by `(slope, owner)`.
/// Leaves in `hull` exactly the lines that own a positive-length interval,
/// ordered left to right.
pub(crate) fn sweep_sorted<I: IntoIterator<Item = Line>>(lines: I, hull: &mut Vec<Line>) {
    hull.clear();
    for line in lines {
        if let Some(top) = hull.last() {
            if top.slope == line.slope {
                // Same slope: the larger intercept dominates everywhere; on a
                // tie the earlier (higher-priority) owner stays.
                if line.intercept > top.intercept {
                    hull.pop();
                } else {
                    continue;
                }
            }
        }
        while hull.len() >= 2 {
            let l1 = &hull[hull.len() - 2];
            let l2 = &hull[hull.len() - 1];
            if crossing(l2, &line) <= crossing(l1, l2) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(line);
    }
}

/// Breakpoints of a hull produced by [`sweep_sorted`], with `±∞` ends.
pub(crate) fn hull_segments(hull: &[Line]) -> impl Iterator<Item = EnvelopeSegment> + '_ {
    let last = hull.len().saturating_sub(1);
    hull.iter().enumerate().map(move |(k, line)| EnvelopeSegment {
        owner: line.owner,
        lower: if k == 0 {
            f64::NEG_INFINITY
        } else {
            crossing(&hull[k - 1], line)
        },
        upper: if k == last {
            f64::INFINITY
        } else {
            crossing(line, &hull[k + 1])
        },
        intercept: line.intercept,
        slope: line.slope,
    })
}

/// Builds the upper envelope of `lines`, optionally including the outside
/// option's zero line.
///
/// Segments partition `(−∞, ∞)` with strictly increasing breakpoints and
/// strictly increasing slopes. Coincident lines resolve to the lowest product
/// index, and the zero line loses ties to any product.
pub fn upper_envelope(lines: &[Line], include_zero_line: bool) -> Result<Vec<EnvelopeSegment>> {
    if lines.is_empty() && !include_zero_line {
        return Err(Error::invalid("upper envelope of an empty set of lines"));
    }
    for line in lines {
        if !line.intercept.is_finite() || !line.slope.is_finite() {
            return Err(Error::invalid(format!("non-finite line for {:?}", line.owner)));
        }
        if line.owner == Owner::Outside {
            return Err(Error::invalid("the outside option is added via include_zero_line"));
        }
    }
    let mut sorted: Vec<Line> = lines.to_vec();
    if include_zero_line {
        sorted.push(Line::new(Owner::Outside, 0.0, 0.0));
    }
    sorted.sort_by(|p, q| p.slope.total_cmp(&q.slope).then(p.owner.cmp(&q.owner)));
    let mut hull = Vec::with_capacity(sorted.len());
    sweep_sorted(sorted, &mut hull);
    Ok(hull_segments(&hull).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_crossing_at_origin() {
        let segs = upper_envelope(&[Line::new(Owner::Product(0), 0.0, 1.0)], true).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].owner, Owner::Outside);
        assert_eq!((segs[0].lower, segs[0].upper), (f64::NEG_INFINITY, 0.0));
        assert_eq!((segs[0].intercept, segs[0].slope), (0.0, 0.0));
        assert_eq!(segs[1].owner, Owner::Product(0));
        assert_eq!((segs[1].lower, segs[1].upper), (0.0, f64::INFINITY));
    }

    #[test]
    fn flat_line_above_zero_owns_everything() {
        let segs = upper_envelope(&[Line::new(Owner::Product(0), 1.0, 0.0)], true).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].owner, Owner::Product(0));
        assert_eq!((segs[0].lower, segs[0].upper), (f64::NEG_INFINITY, f64::INFINITY));
    }

    #[test]
    fn ties_go_to_lower_index_and_products_beat_outside() {
        let lines = [
            Line::new(Owner::Product(3), 0.0, 0.0),
            Line::new(Owner::Product(1), 0.0, 0.0),
        ];
        let segs = upper_envelope(&lines, true).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].owner, Owner::Product(1));
    }

    #[test]
    fn line_through_an_existing_breakpoint_gets_nothing() {
        // y = −t, y = t and y = 0 meet at the origin; the zero line has no measure.
        let lines = [
            Line::new(Owner::Product(0), 0.0, -1.0),
            Line::new(Owner::Product(1), 0.0, 1.0),
        ];
        let segs = upper_envelope(&lines, true).unwrap();
        let owners: Vec<Owner> = segs.iter().map(|s| s.owner).collect();
        assert_eq!(owners, vec![Owner::Product(0), Owner::Product(1)]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(upper_envelope(&[], false).is_err());
        assert!(upper_envelope(&[Line::new(Owner::Product(0), f64::NAN, 1.0)], true).is_err());
        assert_eq!(upper_envelope(&[], true).unwrap().len(), 1);
    }

    #[test]
    fn matches_pointwise_argmax_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..20 {
            let lines: Vec<Line> = (0..10)
                .map(|j| {
                    Line::new(
                        Owner::Product(j),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-2.0..2.0),
                    )
                })
                .collect();
            let segs = upper_envelope(&lines, true).unwrap();
            for w in segs.windows(2) {
                assert!(w[0].upper == w[1].lower && w[0].lower < w[0].upper);
                assert!(w[0].slope < w[1].slope);
                assert_ne!(w[0].owner, w[1].owner);
            }
            let points = 100_000;
            for k in 0..points {
                let t = -8.0 + 16.0 * k as f64 / (points - 1) as f64;
                if segs.iter().any(|s| (s.lower - t).abs() < 1e-9) {
                    continue;
                }
                let mut best = (Owner::Outside, 0.0);
                for line in &lines {
                    if line.at(t) > best.1 {
                        best = (line.owner, line.at(t));
                    }
                }
                let seg = segs.iter().find(|s| s.lower <= t && t <= s.upper).unwrap();
                assert_eq!(seg.owner, best.0, "t = {t}");
            }
        }
    }
}

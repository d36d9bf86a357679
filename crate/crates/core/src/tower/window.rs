//! Finite windows of two-sided trajectories and the separation metric.

use super::{ChainState, TowerError, TowerSpec};

/// States `g_i` and innovations `ε_i` for `i` in `first..=last`, with a
/// distinguished center index (time 0 for the metric).
///
/// `innovations[i]` is the symbol drawn for the transition into index `i`;
/// it only influences the state when `g_{i-1}` sits at the top of its
/// column.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryWindow {
    first: i64,
    center: i64,
    states: Vec<ChainState>,
    innovations: Vec<u32>,
}

impl TrajectoryWindow {
    pub fn new(
        first: i64,
        center: i64,
        states: Vec<ChainState>,
        innovations: Vec<u32>,
    ) -> Result<Self, TowerError> {
        if states.is_empty() {
            return Err(TowerError::BadWindow("no states"));
        }
        if states.len() != innovations.len() {
            return Err(TowerError::BadWindow("states and innovations differ in length"));
        }
        if center < first || center >= first + states.len() as i64 {
            return Err(TowerError::BadWindow("center lies outside the window"));
        }
        Ok(Self {
            first,
            center,
            states,
            innovations,
        })
    }

    pub fn first(&self) -> i64 {
        self.first
    }

    pub fn last(&self) -> i64 {
        self.first + self.states.len() as i64 - 1
    }

    pub fn center(&self) -> i64 {
        self.center
    }

    /// Largest `r` with `center ± r` inside the window.
    pub fn radius(&self) -> u64 {
        (self.center - self.first).min(self.last() - self.center) as u64
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[ChainState] {
        &self.states
    }

    pub fn innovations(&self) -> &[u32] {
        &self.innovations
    }

    #[inline]
    pub fn state(&self, index: i64) -> Option<ChainState> {
        let k = index - self.first;
        if k < 0 {
            return None;
        }
        self.states.get(k as usize).copied()
    }

    #[inline]
    pub fn innovation(&self, index: i64) -> Option<u32> {
        let k = index - self.first;
        if k < 0 {
            return None;
        }
        self.innovations.get(k as usize).copied()
    }

    /// The same data with time origin moved to `center`.
    pub fn recentered(&self, center: i64) -> Result<Self, TowerError> {
        Self::new(self.first, center, self.states.clone(), self.innovations.clone())
    }

    /// Checks every state lies in `G` and every consecutive pair is a
    /// transition the kernel allows under the recorded innovation.
    pub fn check_admissible(&self, spec: &TowerSpec) -> Result<(), TowerError> {
        for (k, &g) in self.states.iter().enumerate() {
            spec.check_state(g)?;
            let eps = self.innovations[k];
            if eps as usize >= spec.alphabet_len() {
                return Err(TowerError::InvalidSymbol(eps));
            }
            if k > 0 && crate::chain::advance(spec, self.states[k - 1], eps) != g {
                return Err(TowerError::Inadmissible {
                    index: self.first + k as i64,
                });
            }
        }
        Ok(())
    }

    /// `#{i in from..=to : g_i ∈ G_0}`.
    pub fn base_visits(&self, from: i64, to: i64) -> Result<u64, TowerError> {
        g0_visits(self, from, to)
    }
}

/// Number of base visits in `from..=to`; empty when `from > to`.
pub fn g0_visits(window: &TrajectoryWindow, from: i64, to: i64) -> Result<u64, TowerError> {
    if from > to {
        return Ok(0);
    }
    if from < window.first() || to > window.last() {
        return Err(TowerError::OutOfWindow { from, to });
    }
    let a = (from - window.first) as usize;
    let b = (to - window.first) as usize;
    Ok(window.states[a..=b].iter().filter(|g| g.in_base()).count() as u64)
}

/// Separation time `s(g, g')`. When the windows agree all the way to an
/// edge on the side that would bound it, only a lower bound is known and
/// `window_limited` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Separation {
    pub value: u64,
    pub window_limited: bool,
}

/// `d(g, g') = ξ^s`; an upper bound when the separation is window-limited.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Distance {
    pub value: f64,
    pub upper_bound: bool,
}

struct Side {
    count: u64,
    exact: bool,
}

pub fn separation_time(a: &TrajectoryWindow, b: &TrajectoryWindow) -> Result<Separation, TowerError> {
    if a.first != b.first || a.center != b.center || a.len() != b.len() {
        return Err(TowerError::WindowMismatch);
    }
    let c = a.center;
    // Forward: base visits at 0 < ℓ <= t̃⁺, the first disagreement at or after 0.
    let forward = if a.state(c) != b.state(c) {
        Side { count: 0, exact: true }
    } else {
        let mut side = Side { count: 0, exact: false };
        for i in c + 1..=a.last() {
            let g = a.state(i).unwrap();
            if g.in_base() {
                side.count += 1;
            }
            if Some(g) != b.state(i) {
                side.exact = true;
                break;
            }
        }
        side
    };
    // Backward: base visits at 0 <= ℓ < t̃⁻, looking at g_{-ℓ}.
    let backward = {
        let mut side = Side { count: 0, exact: false };
        for i in (a.first..=c).rev() {
            let g = a.state(i).unwrap();
            if Some(g) != b.state(i) {
                side.exact = true;
                break;
            }
            if g.in_base() {
                side.count += 1;
            }
        }
        side
    };
    // min over an exact side and a lower bound is exact iff the exact side
    // is no larger than the bound.
    let sep = match (forward.exact, backward.exact) {
        (true, true) => Separation {
            value: forward.count.min(backward.count),
            window_limited: false,
        },
        (true, false) => Separation {
            value: forward.count.min(backward.count),
            window_limited: forward.count > backward.count,
        },
        (false, true) => Separation {
            value: forward.count.min(backward.count),
            window_limited: backward.count > forward.count,
        },
        (false, false) => Separation {
            value: forward.count.min(backward.count),
            window_limited: true,
        },
    };
    Ok(sep)
}

pub fn metric(a: &TrajectoryWindow, b: &TrajectoryWindow, xi: f64) -> Result<Distance, TowerError> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(TowerError::Xi(xi));
    }
    let s = separation_time(a, b)?;
    Ok(Distance {
        value: xi.powi(s.value.min(i32::MAX as u64) as i32),
        upper_bound: s.window_limited,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn st(level: u32) -> ChainState {
        ChainState::new(0, level)
    }

    fn window(levels: &[u32], center: i64) -> TrajectoryWindow {
        let n = levels.len();
        TrajectoryWindow::new(0, center, levels.iter().map(|&l| st(l)).collect(), vec![0; n]).unwrap()
    }

    #[test]
    fn disagreement_at_center_gives_zero() {
        let a = window(&[0, 0, 0, 0, 0], 2);
        let b = window(&[0, 0, 1, 0, 0], 2);
        let s = separation_time(&a, &b).unwrap();
        assert_eq!(s, Separation { value: 0, window_limited: false });
        assert_eq!(metric(&a, &b, 0.5).unwrap().value, 1.0);
    }

    #[test]
    fn identical_windows_are_window_limited() {
        // base at indices 0, 2, 3, 6; center 3
        let a = window(&[0, 1, 0, 0, 1, 2, 0], 3);
        let s = separation_time(&a, &a).unwrap();
        // backward counts base over [0, 3]: 3; forward over (3, 6]: 1
        assert_eq!(s, Separation { value: 1, window_limited: true });
        let d = metric(&a, &a, 0.5).unwrap();
        assert_eq!(d.value, 0.5);
        assert!(d.upper_bound);
    }

    #[test]
    fn exact_separation_counts_disagreement_index_forward_only() {
        // center 2; forward disagreement at 4 (which is in G0 for `a`),
        // backward disagreement at 0.
        let a = window(&[0, 0, 0, 1, 0, 0], 2);
        let b = window(&[1, 0, 0, 1, 2, 0], 2);
        // s⁺ = #{3, 4 in G0 for a} = 1 ; s⁻ = #{2, 1} = 2
        let s = separation_time(&a, &b).unwrap();
        assert_eq!(s, Separation { value: 1, window_limited: false });
    }

    #[test]
    fn exact_side_smaller_than_bound_is_exact() {
        // forward disagreement right after center; backward agrees throughout.
        let a = window(&[0, 0, 0, 0], 2);
        let b = window(&[0, 0, 0, 1], 2);
        let s = separation_time(&a, &b).unwrap();
        assert_eq!(s, Separation { value: 1, window_limited: false });
    }

    #[test]
    fn mismatched_windows_rejected() {
        let a = window(&[0, 0, 0], 1);
        let b = window(&[0, 0, 0, 0], 1);
        assert_eq!(separation_time(&a, &b), Err(TowerError::WindowMismatch));
        assert_eq!(separation_time(&a, &window(&[0, 0, 0], 0)), Err(TowerError::WindowMismatch));
    }

    #[test]
    fn g0_visit_ranges() {
        let a = window(&[0, 1, 0, 0, 1], 2);
        assert_eq!(g0_visits(&a, 3, 2).unwrap(), 0);
        assert_eq!(g0_visits(&a, 0, 4).unwrap(), 3);
        assert_eq!(g0_visits(&a, 1, 1).unwrap(), 0);
        assert!(g0_visits(&a, 0, 5).is_err());
    }

    /// Admissible paths on a tower with roofs 1, 2, 3 from a start state and
    /// innovations.
    fn path(start: (u32, u32), eps: &[u32], c: i64) -> TrajectoryWindow {
        let spec = crate::tower::fixtures::spec(&[(0.4, 1), (0.3, 2), (0.3, 3)], 0.5);
        let mut g = ChainState::new(start.0, start.1 % spec.roof(start.0));
        let mut states = vec![g];
        for &e in &eps[1..] {
            g = crate::chain::advance(&spec, g, e);
            states.push(g);
        }
        let w = TrajectoryWindow::new(0, c, states, eps.to_vec()).unwrap();
        w.check_admissible(&spec).unwrap();
        w
    }

    fn innovations() -> impl Strategy<Value = Vec<u32>> {
        prop::collection::vec(0u32..3, 12)
    }

    fn mask() -> impl Strategy<Value = Vec<u32>> {
        prop::collection::vec(0u32..6, 12)
    }

    /// Changes the innovations where the mask is zero.
    fn perturb(base: &[u32], mask: &[u32]) -> Vec<u32> {
        base.iter().zip(mask).map(|(&b, &m)| if m == 0 { (b + 1) % 3 } else { b }).collect()
    }

    proptest! {
        #[test]
        fn separation_is_symmetric(x in innovations(), m in mask(), sa in (0u32..3, 0u32..3),
                                   sb in (0u32..3, 0u32..3), c in 0i64..12) {
            let (a, b) = (path(sa, &x, c), path(sb, &perturb(&x, &m), c));
            prop_assert_eq!(separation_time(&a, &b).unwrap(), separation_time(&b, &a).unwrap());
            let d = metric(&a, &b, 0.5).unwrap().value;
            prop_assert!(d > 0.0 && d <= 1.0);
        }

        #[test]
        fn metric_is_ultrametric(x in innovations(), m1 in mask(), m2 in mask(),
                                 sa in (0u32..3, 0u32..3), c in 0i64..12) {
            let a = path(sa, &x, c);
            let b = path(sa, &perturb(&x, &m1), c);
            let w = path(sa, &perturb(&x, &m2), c);
            let s = |p: &TrajectoryWindow, q: &TrajectoryWindow| separation_time(p, q).unwrap();
            // only meaningful when all separations are exact
            let (ab, bw, aw) = (s(&a, &b), s(&b, &w), s(&a, &w));
            if !ab.window_limited && !bw.window_limited && !aw.window_limited {
                prop_assert!(aw.value >= ab.value.min(bw.value));
            }
        }
    }
}

//! Goal numbering shared by every stage, and a compact set of goals.

use std::fmt;

/// Number of Sustainable Development Goals.
pub const GOAL_COUNT: u8 = 17;

/// Returns true when `goal` is a valid goal number (1..=17).
pub fn is_valid_goal(goal: i64) -> bool {
    (1..=GOAL_COUNT as i64).contains(&goal)
}

/// Iterator over all goal numbers in ascending order.
pub fn all_goals() -> impl DoubleEndedIterator<Item = u8> + Clone {
    1..=GOAL_COUNT
}

/// A set of goal numbers stored as a bitmask. Iteration is in ascending goal order.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GoalSet(u32);

impl GoalSet {
    pub const fn empty() -> Self {
        GoalSet(0)
    }

    /// Inserts `goal`. Returns false (and leaves the set unchanged) for an out-of-range goal.
    pub fn insert(&mut self, goal: u8) -> bool {
        if !is_valid_goal(goal as i64) {
            return false;
        }
        self.0 |= 1 << goal;
        true
    }

    pub fn contains(&self, goal: u8) -> bool {
        is_valid_goal(goal as i64) && self.0 & (1 << goal) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn intersection(&self, other: &GoalSet) -> GoalSet {
        GoalSet(self.0 & other.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        all_goals().filter(move |g| self.contains(*g))
    }
}

impl FromIterator<u8> for GoalSet {
    fn from_iter<I: IntoIterator<Item = u8>>(iter: I) -> Self {
        let mut set = GoalSet::empty();
        for g in iter {
            set.insert(g);
        }
        set
    }
}

impl fmt::Debug for GoalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

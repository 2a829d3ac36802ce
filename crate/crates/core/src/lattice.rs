//! Exact integer coordinates on the triangular lattice.
//!
//! A coordinate `(a, b)` stands for the Euclidean point
//! `(a + b/2, b * sqrt(3)/2)`. Vertex identity and hashing never touch
//! floating point.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// A vertex position in the triangular-lattice basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeCoord {
    pub a: i64,
    pub b: i64,
}

impl LatticeCoord {
    pub const ORIGIN: LatticeCoord = LatticeCoord { a: 0, b: 0 };

    pub const fn new(a: i64, b: i64) -> Self {
        LatticeCoord { a, b }
    }

    /// Mirror image across the vertical axis through the origin.
    pub const fn reflect(self) -> Self {
        LatticeCoord {
            a: -self.a - self.b,
            b: self.b,
        }
    }

    pub fn to_euclidean(self) -> (f64, f64) {
        (
            self.a as f64 + self.b as f64 / 2.0,
            self.b as f64 * 3f64.sqrt() / 2.0,
        )
    }

    pub fn step(self, dir: Direction) -> Self {
        self + dir.offset()
    }

    /// Key used by the rotor JSON export: `"a,b"`.
    pub fn key(self) -> String {
        format!("{},{}", self.a, self.b)
    }

    pub fn parse_key(s: &str) -> Option<Self> {
        let (a, b) = s.split_once(',')?;
        Some(LatticeCoord::new(a.trim().parse().ok()?, b.trim().parse().ok()?))
    }
}

/// Vertices are ordered lexicographically by `(b, a)`: row by row, left to right.
impl Ord for LatticeCoord {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.b, self.a).cmp(&(other.b, other.a))
    }
}

impl PartialOrd for LatticeCoord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Add for LatticeCoord {
    type Output = LatticeCoord;
    fn add(self, rhs: Self) -> Self {
        LatticeCoord::new(self.a + rhs.a, self.b + rhs.b)
    }
}

impl Sub for LatticeCoord {
    type Output = LatticeCoord;
    fn sub(self, rhs: Self) -> Self {
        LatticeCoord::new(self.a - rhs.a, self.b - rhs.b)
    }
}

impl fmt::Display for LatticeCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.a, self.b)
    }
}

/// One of the six unit steps of the triangular lattice, indexed by
/// ascending angle: 0°, 60°, 120°, 180°, 240°, 300°.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Direction(u8);

const STEPS: [(i64, i64); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction(0),
        Direction(1),
        Direction(2),
        Direction(3),
        Direction(4),
        Direction(5),
    ];

    pub fn new(index: u8) -> Option<Self> {
        (index < 6).then_some(Direction(index))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn offset(self) -> LatticeCoord {
        let (a, b) = STEPS[self.0 as usize];
        LatticeCoord::new(a, b)
    }

    pub fn opposite(self) -> Self {
        Direction((self.0 + 3) % 6)
    }

    /// Direction under the mirror map `(a, b) -> (-a - b, b)`.
    pub fn reflect(self) -> Self {
        // 0<->3, 1<->2, 4<->5
        Direction([3, 2, 1, 0, 5, 4][self.0 as usize])
    }

    /// The direction of the unit step from `from` to `to`, if they are lattice neighbours.
    pub fn between(from: LatticeCoord, to: LatticeCoord) -> Option<Self> {
        let d = to - from;
        STEPS
            .iter()
            .position(|&(a, b)| a == d.a && b == d.b)
            .map(|i| Direction(i as u8))
    }
}

//! Geometry of the box `B_N = {-N..N}^2`, its outer boundary and the
//! concentric cycle partition.
//!
//! Interior sites are indexed densely in lexicographic `(x, y)` order, so
//! index order and site order agree. Boundary sites get their own dense
//! index, also lexicographic, which is what makes the exit measure a flat
//! array.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatticeError {
    #[error("site {0} is not on the outer boundary of the box")]
    NotOnBoundary(Site),
    #[error("site {0} is not inside the box")]
    NotInBox(Site),
}

/// A point of `Z^2`. Ordering is lexicographic on `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Site {
    pub x: i32,
    pub y: i32,
}

impl Site {
    pub const ORIGIN: Site = Site { x: 0, y: 0 };

    pub const fn new(x: i32, y: i32) -> Self {
        Site { x, y }
    }

    /// `max(|x|, |y|)`.
    pub fn sup_norm(self) -> u32 {
        self.x.unsigned_abs().max(self.y.unsigned_abs())
    }

    pub fn step(self, dir: Direction) -> Site {
        let (dx, dy) = dir.offset();
        Site::new(self.x + dx, self.y + dy)
    }

    pub fn l1_distance(self, other: Site) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// One of the four lattice directions.
///
/// The discriminants fix the neighbor order `(+x, -x, +y, -y)`. Movement
/// instructions are decoded through this order, so it must never change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Direction {
    PlusX = 0,
    MinusX = 1,
    PlusY = 2,
    MinusY = 3,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::PlusX, Direction::MinusX, Direction::PlusY, Direction::MinusY];

    #[inline]
    pub fn from_index(i: usize) -> Direction {
        Self::ALL[i & 3]
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn opposite(self) -> Direction {
        Self::from_index(self.index() ^ 1)
    }

    pub fn offset(self) -> (i32, i32) {
        match self {
            Direction::PlusX => (1, 0),
            Direction::MinusX => (-1, 0),
            Direction::PlusY => (0, 1),
            Direction::MinusY => (0, -1),
        }
    }
}

/// The four nearest neighbors of `s` in the fixed order `(+x, -x, +y, -y)`.
pub fn neighbors(s: Site) -> [Site; 4] {
    Direction::ALL.map(|d| s.step(d))
}

/// Where a step out of an interior site lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Dense interior index.
    Interior(u32),
    /// Dense boundary index.
    Boundary(u32),
}

/// The box `B_N` together with precomputed neighbor and sweep tables.
///
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct SquareBox {
    radius: u32,
    side: u32,
    boundary: Vec<Site>,
    targets: Vec<[Target; 4]>,
    sweep_order: Vec<u32>,
    sweep_rank: Vec<u32>,
}

impl SquareBox {
    pub fn new(radius: u32) -> Self {
        let n = radius as i32;
        let side = 2 * radius + 1;

        let mut boundary = Vec::with_capacity(4 * side as usize);
        for t in -n..=n {
            boundary.push(Site::new(-n - 1, t));
            boundary.push(Site::new(n + 1, t));
            boundary.push(Site::new(t, -n - 1));
            boundary.push(Site::new(t, n + 1));
        }
        boundary.sort_unstable();

        let mut b = SquareBox {
            radius,
            side,
            boundary,
            targets: Vec::new(),
            sweep_order: Vec::new(),
            sweep_rank: Vec::new(),
        };

        let len = b.len();
        b.targets = (0..len)
            .map(|i| {
                let s = b.site_at(i);
                Direction::ALL.map(|d| {
                    let t = s.step(d);
                    match b.index_of(t) {
                        Some(j) => Target::Interior(j as u32),
                        None => {
                            Target::Boundary(b.boundary_index(t).expect("step leaves box onto its boundary") as u32)
                        }
                    }
                })
            })
            .collect();

        // Cycle C_0 (outermost) first, lexicographic inside a cycle.
        let mut order: Vec<u32> = (0..len as u32).collect();
        order.sort_by_key(|&i| {
            let s = b.site_at(i as usize);
            (radius - s.sup_norm(), s)
        });
        let mut rank = vec![0u32; len];
        for (r, &i) in order.iter().enumerate() {
            rank[i as usize] = r as u32;
        }
        b.sweep_order = order;
        b.sweep_rank = rank;
        b
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    /// Side length `2N + 1`.
    pub fn side(&self) -> u32 {
        self.side
    }

    /// `|B_N| = (2N+1)^2`.
    pub fn len(&self) -> usize {
        (self.side as usize) * (self.side as usize)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, s: Site) -> bool {
        s.sup_norm() <= self.radius
    }

    pub fn is_boundary(&self, s: Site) -> bool {
        self.boundary_index(s).is_some()
    }

    /// Dense interior index, lexicographic in `(x, y)`.
    #[inline]
    pub fn index_of(&self, s: Site) -> Option<usize> {
        if !self.contains(s) {
            return None;
        }
        let n = self.radius as i32;
        Some(((s.x + n) as usize) * self.side as usize + (s.y + n) as usize)
    }

    #[inline]
    pub fn site_at(&self, i: usize) -> Site {
        let n = self.radius as i32;
        let side = self.side as usize;
        Site::new((i / side) as i32 - n, (i % side) as i32 - n)
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.len()).map(|i| self.site_at(i))
    }

    /// `∂B_N`, sorted lexicographically. Always `4(2N+1)` sites; the
    /// diagonal corners are not neighbors of the box.
    pub fn boundary_sites(&self) -> &[Site] {
        &self.boundary
    }

    pub fn boundary_index(&self, s: Site) -> Option<usize> {
        self.boundary.binary_search(&s).ok()
    }

    /// The unique neighbor of a boundary site inside the box.
    pub fn interior_neighbor(&self, s: Site) -> Result<Site, LatticeError> {
        if !self.is_boundary(s) {
            return Err(LatticeError::NotOnBoundary(s));
        }
        let n = self.radius as i32;
        Ok(Site::new(s.x.clamp(-n, n), s.y.clamp(-n, n)))
    }

    /// Cycle index: `N - max(|x|,|y|)` for interior sites, `-1` on the
    /// boundary, `None` elsewhere.
    pub fn cycle_index(&self, s: Site) -> Option<i64> {
        if self.contains(s) {
            Some(self.radius as i64 - s.sup_norm() as i64)
        } else if self.is_boundary(s) {
            Some(-1)
        } else {
            None
        }
    }

    /// The sites of cycle `C_n` in lexicographic order. `n = -1` yields the
    /// boundary.
    pub fn cycle(&self, n: i64) -> Vec<Site> {
        if n == -1 {
            return self.boundary.clone();
        }
        if n < 0 || n > self.radius as i64 {
            return Vec::new();
        }
        let r = (self.radius as i64 - n) as u32;
        self.sites().filter(|s| s.sup_norm() == r).collect()
    }

    /// Backward neighbor function: maps `y ∈ C_n` to a neighbor in
    /// `C_{n-1}` (or in `∂B_N` for `n = 0`), the lexicographically smallest
    /// when there are two.
    pub fn backward_neighbor(&self, s: Site) -> Result<Site, LatticeError> {
        let n = self
            .cycle_index(s)
            .filter(|&c| c >= 0)
            .ok_or(LatticeError::NotInBox(s))?;
        let out = neighbors(s)
            .into_iter()
            .filter(|&t| self.cycle_index(t) == Some(n - 1))
            .min()
            .expect("every interior site has an outward neighbor");
        Ok(out)
    }

    #[inline]
    pub fn targets(&self, i: usize) -> &[Target; 4] {
        &self.targets[i]
    }

    /// Interior indices in cycle-sweep order.
    pub fn sweep_order(&self) -> &[u32] {
        &self.sweep_order
    }

    #[inline]
    pub fn sweep_rank(&self, i: usize) -> u32 {
        self.sweep_rank[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_boundary(n: i32) -> Vec<Site> {
        let mut out = Vec::new();
        for x in -n - 1..=n + 1 {
            for y in -n - 1..=n + 1 {
                let s = Site::new(x, y);
                if s.sup_norm() as i32 == n + 1 && neighbors(s).iter().any(|t| t.sup_norm() as i32 <= n) {
                    out.push(s);
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn neighbor_order_is_fixed() {
        assert_eq!(
            neighbors(Site::ORIGIN),
            [Site::new(1, 0), Site::new(-1, 0), Site::new(0, 1), Site::new(0, -1)]
        );
        let n = 5;
        assert_eq!(
            neighbors(Site::new(n, n)),
            [
                Site::new(n + 1, n),
                Site::new(n - 1, n),
                Site::new(n, n + 1),
                Site::new(n, n - 1)
            ]
        );
    }

    #[test]
    fn neighbors_at_unit_distance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let s = Site::new(rng.random_range(-1000..1000), rng.random_range(-1000..1000));
            for t in neighbors(s) {
                assert_eq!(s.l1_distance(t), 1);
            }
        }
    }

    #[test]
    fn boundary_small_boxes() {
        assert_eq!(
            SquareBox::new(0).boundary_sites(),
            &[Site::new(-1, 0), Site::new(0, -1), Site::new(0, 1), Site::new(1, 0)]
        );
        let b1 = SquareBox::new(1);
        assert_eq!(b1.boundary_sites().len(), 12);
        assert!(!b1.is_boundary(Site::new(2, 2)));
    }

    #[test]
    fn boundary_matches_enumeration() {
        for n in 0..=10u32 {
            let b = SquareBox::new(n);
            assert_eq!(b.boundary_sites(), brute_boundary(n as i32).as_slice());
            assert_eq!(b.boundary_sites().len(), 4 * (2 * n as usize + 1));
        }
    }

    #[test]
    fn interior_neighbor_examples() {
        assert_eq!(
            SquareBox::new(2).interior_neighbor(Site::new(3, 1)),
            Ok(Site::new(2, 1))
        );
        assert_eq!(SquareBox::new(0).interior_neighbor(Site::new(0, 1)), Ok(Site::ORIGIN));
        assert_eq!(
            SquareBox::new(2).interior_neighbor(Site::new(3, 3)),
            Err(LatticeError::NotOnBoundary(Site::new(3, 3)))
        );
        assert!(SquareBox::new(2).interior_neighbor(Site::new(1, 1)).is_err());
    }

    #[test]
    fn interior_neighbor_is_unique() {
        for n in 0..=10u32 {
            let b = SquareBox::new(n);
            for &s in b.boundary_sites() {
                let inside: Vec<Site> = neighbors(s).into_iter().filter(|&t| b.contains(t)).collect();
                assert_eq!(inside.len(), 1, "N={n} site {s}");
                assert_eq!(b.interior_neighbor(s).unwrap(), inside[0]);
            }
        }
    }

    #[test]
    fn backward_neighbor_examples() {
        let b = SquareBox::new(3);
        assert_eq!(b.backward_neighbor(Site::new(3, 0)), Ok(Site::new(4, 0)));
        assert_eq!(b.backward_neighbor(Site::new(2, 2)), Ok(Site::new(2, 3)));
        assert_eq!(
            b.backward_neighbor(Site::new(4, 0)),
            Err(LatticeError::NotInBox(Site::new(4, 0)))
        );
    }

    #[test]
    fn backward_neighbor_injective_per_cycle() {
        for n in 0..=10u32 {
            let b = SquareBox::new(n);
            for c in 0..=n as i64 {
                let cyc = b.cycle(c);
                let mut images: Vec<Site> = cyc.iter().map(|&s| b.backward_neighbor(s).unwrap()).collect();
                for (&s, &img) in cyc.iter().zip(&images) {
                    assert_eq!(b.cycle_index(img), Some(c - 1));
                    assert_eq!(s.l1_distance(img), 1);
                }
                images.sort();
                images.dedup();
                assert_eq!(images.len(), cyc.len(), "N={n} cycle {c}");
            }
        }
    }

    #[test]
    fn cycles_partition_box() {
        for n in 0..=10u32 {
            let b = SquareBox::new(n);
            let total: usize = (0..=n as i64).map(|c| b.cycle(c).len()).sum();
            assert_eq!(total, b.len());
            for s in b.sites() {
                assert_eq!(b.cycle_index(s), Some(n as i64 - s.sup_norm() as i64));
            }
        }
    }

    #[test]
    fn index_round_trip_and_targets() {
        let b = SquareBox::new(4);
        let mut prev = None;
        for i in 0..b.len() {
            let s = b.site_at(i);
            assert_eq!(b.index_of(s), Some(i));
            if let Some(p) = prev {
                assert!(p < s);
            }
            prev = Some(s);
            for d in Direction::ALL {
                let t = s.step(d);
                match b.targets(i)[d.index()] {
                    Target::Interior(j) => assert_eq!(b.site_at(j as usize), t),
                    Target::Boundary(j) => assert_eq!(b.boundary_sites()[j as usize], t),
                }
            }
        }
    }

    #[test]
    fn sweep_order_starts_with_outer_cycle() {
        let b = SquareBox::new(3);
        let first = b.site_at(b.sweep_order()[0] as usize);
        assert_eq!(first, b.cycle(0)[0]);
        let last = b.site_at(*b.sweep_order().last().unwrap() as usize);
        assert_eq!(last, Site::ORIGIN);
    }
}

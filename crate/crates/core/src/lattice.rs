//! Lieb-lattice geometry.
//!
//! Sites carry integer half-cell coordinates: corner (A) sites sit at
//! even-even positions, B sites at (even, odd) and C sites at (odd, even).
//! The origin is the lower-left A corner. Sites are indexed A first, then B,
//! then C, each block row-major (y outer, x inner).

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Boundary {
    Open,
    /// Torus. Only meaningful at zero flux.
    Periodic,
}

/// Lattice size in plaquettes (open) or unit cells (periodic).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticeSpec {
    pub nx: usize,
    pub ny: usize,
    pub boundary: Boundary,
}

impl LatticeSpec {
    pub fn open(nx: usize, ny: usize) -> Self {
        LatticeSpec {
            nx,
            ny,
            boundary: Boundary::Open,
        }
    }

    pub fn periodic(nx: usize, ny: usize) -> Self {
        LatticeSpec {
            nx,
            ny,
            boundary: Boundary::Periodic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 1 || self.ny < 1 {
            return Err(Error::InvalidLattice(format!(
                "nx and ny must be at least 1 (got {}x{})",
                self.nx, self.ny
            )));
        }
        Ok(())
    }

    /// Number of plaquettes (open) or unit cells (periodic).
    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sublattice {
    A,
    B,
    C,
}

impl fmt::Display for Sublattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Sublattice::A => "A",
            Sublattice::B => "B",
            Sublattice::C => "C",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Site {
    pub sublattice: Sublattice,
    pub x: i64,
    pub y: i64,
}

impl Site {
    pub fn new(sublattice: Sublattice, x: i64, y: i64) -> Self {
        Site { sublattice, x, y }
    }

    /// Sublattice implied by the parity of the coordinates, if any.
    pub fn sublattice_of(x: i64, y: i64) -> Option<Sublattice> {
        match (x.rem_euclid(2), y.rem_euclid(2)) {
            (0, 0) => Some(Sublattice::A),
            (0, 1) => Some(Sublattice::B),
            (1, 0) => Some(Sublattice::C),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Down,
    Right,
    Left,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Right,
        Direction::Left,
    ];

    pub fn offset(self) -> (i64, i64) {
        match self {
            Direction::Up => (0, 1),
            Direction::Down => (0, -1),
            Direction::Right => (1, 0),
            Direction::Left => (-1, 0),
        }
    }

    /// Sublattice reached from an A site.
    pub fn target(self) -> Sublattice {
        match self {
            Direction::Up | Direction::Down => Sublattice::B,
            Direction::Right | Direction::Left => Sublattice::C,
        }
    }
}

/// A nearest-neighbour hop, always stored from its A end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub from: Site,
    pub to: Site,
    pub from_index: usize,
    pub to_index: usize,
    pub direction: Direction,
}

/// Eight sites of one plaquette, counterclockwise from the lower-left A corner:
/// A, C, A, B, A, C, A, B.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Plaquette {
    pub id: usize,
    pub ix: usize,
    pub iy: usize,
    pub sites: [usize; 8],
}

impl Plaquette {
    pub fn corners(&self) -> [usize; 4] {
        [self.sites[0], self.sites[2], self.sites[4], self.sites[6]]
    }

    pub fn edge_centers(&self) -> [usize; 4] {
        [self.sites[1], self.sites[3], self.sites[5], self.sites[7]]
    }
}

/// Enumerated sites of a lattice with a coordinate index.
#[derive(Debug, Clone)]
pub struct SiteTable {
    spec: LatticeSpec,
    sites: Vec<Site>,
    index: HashMap<(i64, i64), usize>,
    counts: [usize; 3],
}

/// Enumerates the sites of `spec` in canonical order.
pub fn build_lattice(spec: LatticeSpec) -> Result<SiteTable> {
    spec.validate()?;
    let (nx, ny) = (spec.nx as i64, spec.ny as i64);
    // Open lattices carry the closing row/column of corners and edges.
    let (ax, ay, bx, by, cx, cy) = match spec.boundary {
        Boundary::Open => (nx + 1, ny + 1, nx + 1, ny, nx, ny + 1),
        Boundary::Periodic => (nx, ny, nx, ny, nx, ny),
    };

    let mut sites = Vec::with_capacity((ax * ay + bx * by + cx * cy) as usize);
    for j in 0..ay {
        for i in 0..ax {
            sites.push(Site::new(Sublattice::A, 2 * i, 2 * j));
        }
    }
    for j in 0..by {
        for i in 0..bx {
            sites.push(Site::new(Sublattice::B, 2 * i, 2 * j + 1));
        }
    }
    for j in 0..cy {
        for i in 0..cx {
            sites.push(Site::new(Sublattice::C, 2 * i + 1, 2 * j));
        }
    }

    let index = sites
        .iter()
        .enumerate()
        .map(|(k, s)| ((s.x, s.y), k))
        .collect();
    let counts = [
        (ax * ay) as usize,
        (bx * by) as usize,
        (cx * cy) as usize,
    ];
    Ok(SiteTable {
        spec,
        sites,
        index,
        counts,
    })
}

impl SiteTable {
    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, index: usize) -> Site {
        self.sites[index]
    }

    pub fn count(&self, sublattice: Sublattice) -> usize {
        match sublattice {
            Sublattice::A => self.counts[0],
            Sublattice::B => self.counts[1],
            Sublattice::C => self.counts[2],
        }
    }

    /// Index range occupied by one sublattice in the canonical ordering.
    pub fn range(&self, sublattice: Sublattice) -> std::ops::Range<usize> {
        let [a, b, c] = self.counts;
        match sublattice {
            Sublattice::A => 0..a,
            Sublattice::B => a..a + b,
            Sublattice::C => a + b..a + b + c,
        }
    }

    /// Geometric center in half-cell coordinates.
    pub fn center(&self) -> (f64, f64) {
        (self.spec.nx as f64, self.spec.ny as f64)
    }

    fn wrap(&self, x: i64, y: i64) -> (i64, i64) {
        match self.spec.boundary {
            Boundary::Open => (x, y),
            Boundary::Periodic => (
                x.rem_euclid(2 * self.spec.nx as i64),
                y.rem_euclid(2 * self.spec.ny as i64),
            ),
        }
    }

    /// Index of the site at (x, y); periodic tables wrap the coordinates.
    pub fn index_of(&self, x: i64, y: i64) -> Option<usize> {
        self.index.get(&self.wrap(x, y)).copied()
    }

    pub fn index_of_site(&self, site: &Site) -> Option<usize> {
        self.index_of(site.x, site.y)
            .filter(|&k| self.sites[k].sublattice == site.sublattice)
    }

    /// All A-B and A-C bonds, ordered by A site then direction.
    pub fn bonds(&self) -> Vec<Bond> {
        let mut out = Vec::with_capacity(4 * self.count(Sublattice::A));
        for from_index in self.range(Sublattice::A) {
            let from = self.sites[from_index];
            for direction in Direction::ALL {
                let (dx, dy) = direction.offset();
                if let Some(to_index) = self.index_of(from.x + dx, from.y + dy) {
                    out.push(Bond {
                        from,
                        to: self.sites[to_index],
                        from_index,
                        to_index,
                        direction,
                    });
                }
            }
        }
        out
    }

    /// Plaquettes, row-major; id = iy * nx + ix.
    pub fn plaquettes(&self) -> Vec<Plaquette> {
        let mut out = Vec::with_capacity(self.spec.cells());
        for iy in 0..self.spec.ny {
            for ix in 0..self.spec.nx {
                let (x, y) = (2 * ix as i64, 2 * iy as i64);
                let ring = [
                    (x, y),
                    (x + 1, y),
                    (x + 2, y),
                    (x + 2, y + 1),
                    (x + 2, y + 2),
                    (x + 1, y + 2),
                    (x, y + 2),
                    (x, y + 1),
                ];
                let mut sites = [0usize; 8];
                for (slot, (px, py)) in sites.iter_mut().zip(ring) {
                    *slot = self
                        .index_of(px, py)
                        .expect("plaquette ring lies inside the lattice");
                }
                out.push(Plaquette {
                    id: iy * self.spec.nx + ix,
                    ix,
                    iy,
                    sites,
                });
            }
        }
        out
    }

    /// Sublattice tag of every site, as a mask for quick weight sums.
    pub fn is_a_site(&self, index: usize) -> bool {
        index < self.counts[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn enumerate_open(nx: i64, ny: i64) -> (usize, usize, usize) {
        let (mut a, mut b, mut c) = (0, 0, 0);
        for x in 0..=2 * nx {
            for y in 0..=2 * ny {
                match Site::sublattice_of(x, y) {
                    Some(Sublattice::A) => a += 1,
                    Some(Sublattice::B) => b += 1,
                    Some(Sublattice::C) => c += 1,
                    None => {}
                }
            }
        }
        (a, b, c)
    }

    #[test]
    fn single_plaquette_has_eight_sites() {
        let t = build_lattice(LatticeSpec::open(1, 1)).unwrap();
        assert_eq!(t.len(), 8);
        assert_eq!(t.count(Sublattice::A), 4);
        assert_eq!(t.count(Sublattice::B), 2);
        assert_eq!(t.count(Sublattice::C), 2);
    }

    #[test]
    fn site_counts_match_formula() {
        assert_eq!(build_lattice(LatticeSpec::open(2, 2)).unwrap().len(), 21);
        assert_eq!(build_lattice(LatticeSpec::open(4, 4)).unwrap().len(), 65);
        for nx in 1..=10 {
            for ny in 1..=10 {
                let t = build_lattice(LatticeSpec::open(nx, ny)).unwrap();
                let (a, b, c) = enumerate_open(nx as i64, ny as i64);
                assert_eq!(t.count(Sublattice::A), a);
                assert_eq!(t.count(Sublattice::B), b);
                assert_eq!(t.count(Sublattice::C), c);
                assert_eq!(t.len(), 3 * nx * ny + 2 * nx + 2 * ny + 1);
            }
        }
    }

    #[test]
    fn rejects_empty_lattice() {
        assert!(matches!(
            build_lattice(LatticeSpec::open(0, 3)),
            Err(Error::InvalidLattice(_))
        ));
        assert!(build_lattice(LatticeSpec::periodic(2, 0)).is_err());
    }

    #[test]
    fn coordinates_respect_parity_and_box() {
        let t = build_lattice(LatticeSpec::open(3, 2)).unwrap();
        for (k, s) in t.sites().iter().enumerate() {
            assert_eq!(Site::sublattice_of(s.x, s.y), Some(s.sublattice));
            assert!((0..=6).contains(&s.x) && (0..=4).contains(&s.y));
            assert_eq!(t.index_of_site(s), Some(k));
        }
        // canonical order: A block, then B, then C
        let tags: Vec<_> = t.sites().iter().map(|s| s.sublattice).collect();
        let mut sorted = tags.clone();
        sorted.sort();
        assert_eq!(tags, sorted);
    }

    #[test]
    fn bond_counts() {
        let t = build_lattice(LatticeSpec::open(1, 1)).unwrap();
        assert_eq!(t.bonds().len(), 8);
        let t = build_lattice(LatticeSpec::open(2, 2)).unwrap();
        assert_eq!(t.bonds().len(), 24);
        let t = build_lattice(LatticeSpec::periodic(4, 4)).unwrap();
        assert_eq!(t.bonds().len(), 64);
    }

    #[test]
    fn edge_sites_have_two_a_neighbours() {
        for (nx, ny) in [(1, 1), (2, 3), (4, 4)] {
            let t = build_lattice(LatticeSpec::open(nx, ny)).unwrap();
            let mut degree = vec![0usize; t.len()];
            for b in t.bonds() {
                degree[b.to_index] += 1;
                degree[b.from_index] += 1;
            }
            let first_edge_center = t.len() - t.count(Sublattice::B) - t.count(Sublattice::C);
            for (k, d) in degree.iter().enumerate().skip(first_edge_center) {
                assert_eq!(*d, 2, "site {:?}", t.site(k));
            }
            // brute-force: enumerate unit-distance pairs
            let mut edges = 0;
            for (i, s) in t.sites().iter().enumerate() {
                for r in t.sites().iter().skip(i + 1) {
                    if (s.x - r.x).abs() + (s.y - r.y).abs() == 1 {
                        edges += 1;
                    }
                }
            }
            assert_eq!(edges, t.bonds().len());
        }
    }

    #[test]
    fn bonds_are_unique_and_well_formed() {
        let t = build_lattice(LatticeSpec::open(3, 3)).unwrap();
        let mut seen = HashSet::new();
        for b in t.bonds() {
            assert_eq!(b.from.sublattice, Sublattice::A);
            assert_eq!(b.to.sublattice, b.direction.target());
            assert_eq!((b.to.x - b.from.x).abs() + (b.to.y - b.from.y).abs(), 1);
            assert!(seen.insert((b.from_index, b.to_index)));
        }
    }

    #[test]
    fn plaquette_rings() {
        let t = build_lattice(LatticeSpec::open(1, 1)).unwrap();
        assert_eq!(t.plaquettes().len(), 1);
        let t = build_lattice(LatticeSpec::open(2, 2)).unwrap();
        let ps = t.plaquettes();
        assert_eq!(ps.len(), 4);
        for p in &ps {
            let ring: Vec<Site> = p.sites.iter().map(|&k| t.site(k)).collect();
            assert_eq!(ring[0].sublattice, Sublattice::A);
            assert_eq!((ring[0].x, ring[0].y), (2 * p.ix as i64, 2 * p.iy as i64));
            for k in 0..8 {
                let (a, b) = (ring[k], ring[(k + 1) % 8]);
                assert_eq!((a.x - b.x).abs() + (a.y - b.y).abs(), 1);
            }
            // counterclockwise: positive shoelace area
            let area: i64 = (0..8)
                .map(|k| ring[k].x * ring[(k + 1) % 8].y - ring[(k + 1) % 8].x * ring[k].y)
                .sum();
            assert!(area > 0);
        }
    }

    #[test]
    fn adjacent_plaquettes_share_one_edge_site() {
        let t = build_lattice(LatticeSpec::open(3, 3)).unwrap();
        let ps = t.plaquettes();
        for p in &ps {
            for q in &ps {
                let dist = (p.ix as i64 - q.ix as i64).abs() + (p.iy as i64 - q.iy as i64).abs();
                if dist != 1 {
                    continue;
                }
                let pe: HashSet<_> = p.edge_centers().into_iter().collect();
                let pc: HashSet<_> = p.corners().into_iter().collect();
                let shared_edges = q.edge_centers().iter().filter(|k| pe.contains(k)).count();
                let shared_corners = q.corners().iter().filter(|k| pc.contains(k)).count();
                assert_eq!((shared_edges, shared_corners), (1, 2));
            }
        }
    }
}

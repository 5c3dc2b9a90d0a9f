//! Axis-aligned quadrilateral meshes of a rectangle with 1-irregular refinement.
//!
//! Geometry is stored on an integer lattice: a base cell spans `2^MAX_LEVEL`
//! lattice units in each direction and a cell of level `l` spans
//! `2^(MAX_LEVEL - l)`. Facets are the common refinement of cell sides, so a
//! coarse cell next to two refined neighbours owns two facets on that side and
//! every facet has at most two adjacent cells.

use std::collections::BTreeMap;

use crate::error::{GldError, Result};

/// Finest supported refinement level.
pub const MAX_LEVEL: u32 = 20;

/// One side of a rectangle (of the domain or of a cell).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Left = 0,
    Right = 1,
    Bottom = 2,
    Top = 3,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    /// Coordinate axis of the outward normal.
    #[inline]
    pub fn normal_axis(self) -> usize {
        match self {
            Side::Left | Side::Right => 0,
            Side::Bottom | Side::Top => 1,
        }
    }

    /// Sign of the outward normal along its axis.
    #[inline]
    pub fn normal_sign(self) -> f64 {
        match self {
            Side::Left | Side::Bottom => -1.0,
            Side::Right | Side::Top => 1.0,
        }
    }

    pub fn outward_normal(self) -> [f64; 2] {
        let mut n = [0.0; 2];
        n[self.normal_axis()] = self.normal_sign();
        n
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Bottom => "bottom",
            Side::Top => "top",
        }
    }
}

/// A subset of the four domain sides.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeSet(u8);

impl EdgeSet {
    pub const NONE: EdgeSet = EdgeSet(0);
    pub const LEFT: EdgeSet = EdgeSet(1);
    pub const RIGHT: EdgeSet = EdgeSet(2);
    pub const BOTTOM: EdgeSet = EdgeSet(4);
    pub const TOP: EdgeSet = EdgeSet(8);
    pub const ALL: EdgeSet = EdgeSet(15);

    pub fn of(side: Side) -> Self {
        EdgeSet(1 << side as u8)
    }

    pub fn contains(self, side: Side) -> bool {
        self.0 & (1 << side as u8) != 0
    }

    pub fn intersects(self, other: EdgeSet) -> bool {
        self.0 & other.0 != 0
    }
}

impl std::ops::BitOr for EdgeSet {
    type Output = EdgeSet;
    fn bitor(self, rhs: EdgeSet) -> EdgeSet {
        EdgeSet(self.0 | rhs.0)
    }
}

/// Boundary condition class for the electric potential. Every boundary facet
/// additionally carries a homogeneous (or prescribed) polarization trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryMarker {
    DirichletV,
    NeumannV,
}

/// Axis-aligned rectangular cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub level: u32,
    /// Lower-left corner in lattice units.
    pub corner: [i64; 2],
    /// Corner vertex ids, counter-clockwise from the lower-left.
    pub vertices: [usize; 4],
}

impl Cell {
    #[inline]
    pub fn lattice_size(&self) -> i64 {
        1i64 << (MAX_LEVEL - self.level)
    }
}

/// A skeleton facet: a maximal segment shared by at most two cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Facet {
    pub vertices: [usize; 2],
    /// Lattice endpoints, ordered by increasing tangential coordinate.
    pub lo: [i64; 2],
    pub hi: [i64; 2],
    /// Normal axis (0: the facet is vertical).
    pub axis: usize,
    /// Unit normal pointing out of `cells[0]`.
    pub normal: [f64; 2],
    pub length: f64,
    /// First cell; for interior facets this is the cell below / to the left.
    pub cells: [usize; 2],
    pub interior: bool,
    pub boundary: Option<(Side, BoundaryMarker)>,
}

impl Facet {
    pub fn neighbor_count(&self) -> usize {
        if self.interior {
            2
        } else {
            1
        }
    }

    pub fn adjacent(&self) -> &[usize] {
        &self.cells[..self.neighbor_count()]
    }
}

/// One facet on a cell side, with the part of the side it covers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellFacet {
    pub facet: usize,
    pub side: Side,
    /// Sub-interval of the side's reference coordinate `[-1, 1]`.
    pub sub: [f64; 2],
}

/// Where a cell of a refined mesh comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellOrigin {
    Unchanged(usize),
    /// Quadrant 0..4 (lower-left, lower-right, upper-left, upper-right) of a parent.
    Child {
        parent: usize,
        quadrant: usize,
    },
}

#[derive(Clone, Debug)]
pub struct Mesh {
    width: f64,
    height: f64,
    nx: usize,
    ny: usize,
    dirichlet: EdgeSet,
    neumann: EdgeSet,
    vertices: Vec<[f64; 2]>,
    cells: Vec<Cell>,
    facets: Vec<Facet>,
    cell_facets: Vec<Vec<CellFacet>>,
    origin: Vec<CellOrigin>,
}

/// Builds an `nx` by `ny` grid of equal cells on `[0, width] x [0, height]`.
pub fn build_rectangle_mesh(
    width: f64,
    height: f64,
    nx: usize,
    ny: usize,
    dirichlet_edges: EdgeSet,
    neumann_edges: EdgeSet,
) -> Result<Mesh> {
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return Err(GldError::Config(format!(
            "domain extent must be positive, got {width} x {height}"
        )));
    }
    if nx == 0 || ny == 0 {
        return Err(GldError::Config(format!(
            "cell counts must be at least 1, got {nx} x {ny}"
        )));
    }
    if dirichlet_edges.intersects(neumann_edges) {
        return Err(GldError::Config("dirichlet and neumann edge sets overlap".into()));
    }
    if (dirichlet_edges | neumann_edges) != EdgeSet::ALL {
        return Err(GldError::Config(
            "dirichlet and neumann edge sets must cover all four sides".into(),
        ));
    }
    let s = 1i64 << MAX_LEVEL;
    let mut cells = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            cells.push(Cell {
                level: 0,
                corner: [i as i64 * s, j as i64 * s],
                vertices: [0; 4],
            });
        }
    }
    let origin = (0..cells.len()).map(CellOrigin::Unchanged).collect();
    Ok(Mesh::from_cells(
        width,
        height,
        nx,
        ny,
        dirichlet_edges,
        neumann_edges,
        cells,
        origin,
    ))
}

/// Splits every cell into four.
pub fn refine_uniform(mesh: &Mesh) -> Mesh {
    let all: Vec<usize> = (0..mesh.num_cells()).collect();
    refine_adaptive(mesh, &all)
}

/// Splits the flagged cells, plus whatever neighbours are needed to keep the
/// mesh 1-irregular. Cells already at `MAX_LEVEL` are left alone.
pub fn refine_adaptive(mesh: &Mesh, flagged_cells: &[usize]) -> Mesh {
    let mut refine = vec![false; mesh.num_cells()];
    for &c in flagged_cells {
        if c < refine.len() && mesh.cells[c].level < MAX_LEVEL {
            refine[c] = true;
        }
    }
    loop {
        let mut changed = false;
        for f in &mesh.facets {
            if !f.interior {
                continue;
            }
            let [a, b] = f.cells;
            for (x, y) in [(a, b), (b, a)] {
                // children of x would sit next to the unrefined y
                if refine[x] && !refine[y] && mesh.cells[x].level > mesh.cells[y].level {
                    refine[y] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut cells = Vec::new();
    let mut origin = Vec::new();
    for (id, c) in mesh.cells.iter().enumerate() {
        if refine[id] {
            let h = c.lattice_size() / 2;
            for (q, (di, dj)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
                cells.push(Cell {
                    level: c.level + 1,
                    corner: [c.corner[0] + di * h, c.corner[1] + dj * h],
                    vertices: [0; 4],
                });
                origin.push(CellOrigin::Child {
                    parent: id,
                    quadrant: q,
                });
            }
        } else {
            cells.push(*c);
            origin.push(CellOrigin::Unchanged(id));
        }
    }
    Mesh::from_cells(
        mesh.width,
        mesh.height,
        mesh.nx,
        mesh.ny,
        mesh.dirichlet,
        mesh.neumann,
        cells,
        origin,
    )
}

/// Facets in their deterministic order (lexicographic by midpoint).
pub fn skeleton_facets(mesh: &Mesh) -> &[Facet] {
    &mesh.facets
}

#[derive(Clone, Copy)]
struct SideSegment {
    cell: usize,
    side: Side,
    lo: i64,
    hi: i64,
}

impl Mesh {
    #[allow(clippy::too_many_arguments)]
    fn from_cells(
        width: f64,
        height: f64,
        nx: usize,
        ny: usize,
        dirichlet: EdgeSet,
        neumann: EdgeSet,
        mut cells: Vec<Cell>,
        origin: Vec<CellOrigin>,
    ) -> Mesh {
        let unit = [
            width / (nx as f64 * (1u64 << MAX_LEVEL) as f64),
            height / (ny as f64 * (1u64 << MAX_LEVEL) as f64),
        ];
        let xmax = nx as i64 * (1i64 << MAX_LEVEL);
        let ymax = ny as i64 * (1i64 << MAX_LEVEL);

        // vertices: every cell corner (hanging nodes included), sorted by (y, x)
        let mut vmap: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        for c in &cells {
            let s = c.lattice_size();
            for (dx, dy) in [(0, 0), (s, 0), (s, s), (0, s)] {
                vmap.insert((c.corner[1] + dy, c.corner[0] + dx), 0);
            }
        }
        let mut vertices = Vec::with_capacity(vmap.len());
        for (i, (key, id)) in vmap.iter_mut().enumerate() {
            *id = i;
            vertices.push([key.1 as f64 * unit[0], key.0 as f64 * unit[1]]);
        }
        let vid = |x: i64, y: i64| vmap[&(y, x)];
        for c in cells.iter_mut() {
            let s = c.lattice_size();
            let [x, y] = c.corner;
            c.vertices = [vid(x, y), vid(x + s, y), vid(x + s, y + s), vid(x, y + s)];
        }

        // group cell sides by lattice line: (axis, position)
        let mut lines: BTreeMap<(usize, i64), Vec<SideSegment>> = BTreeMap::new();
        for (id, c) in cells.iter().enumerate() {
            let s = c.lattice_size();
            let [x, y] = c.corner;
            let segs = [
                (Side::Left, 0usize, x, y, y + s),
                (Side::Right, 0, x + s, y, y + s),
                (Side::Bottom, 1, y, x, x + s),
                (Side::Top, 1, y + s, x, x + s),
            ];
            for (side, axis, pos, lo, hi) in segs {
                lines
                    .entry((axis, pos))
                    .or_default()
                    .push(SideSegment { cell: id, side, lo, hi });
            }
        }

        struct Raw {
            axis: usize,
            pos: i64,
            lo: i64,
            hi: i64,
            minus: Option<(usize, SideSegment)>,
            plus: Option<(usize, SideSegment)>,
        }
        let mut raw = Vec::new();
        for (&(axis, pos), segs) in &lines {
            let mut breaks: Vec<i64> = segs.iter().flat_map(|s| [s.lo, s.hi]).collect();
            breaks.sort_unstable();
            breaks.dedup();
            for w in breaks.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                let covering = |want: Side| {
                    segs.iter()
                        .find(|s| s.side == want && s.lo <= lo && s.hi >= hi)
                        .map(|s| (s.cell, *s))
                };
                // the cell below/left sees this line as its right/top side
                let (minus_side, plus_side) = if axis == 0 {
                    (Side::Right, Side::Left)
                } else {
                    (Side::Top, Side::Bottom)
                };
                let minus = covering(minus_side);
                let plus = covering(plus_side);
                if minus.is_none() && plus.is_none() {
                    continue;
                }
                raw.push(Raw {
                    axis,
                    pos,
                    lo,
                    hi,
                    minus,
                    plus,
                });
            }
        }
        // lexicographic by midpoint (x, then y), in doubled lattice units
        let mid = |r: &Raw| -> (i64, i64) {
            if r.axis == 0 {
                (2 * r.pos, r.lo + r.hi)
            } else {
                (r.lo + r.hi, 2 * r.pos)
            }
        };
        raw.sort_by_key(|r| mid(r));

        let mut facets = Vec::with_capacity(raw.len());
        let mut cell_facets: Vec<Vec<CellFacet>> = vec![Vec::new(); cells.len()];
        for (fid, r) in raw.iter().enumerate() {
            let (lo, hi) = if r.axis == 0 {
                ([r.pos, r.lo], [r.pos, r.hi])
            } else {
                ([r.lo, r.pos], [r.hi, r.pos])
            };
            let t = 1 - r.axis;
            let length = (r.hi - r.lo) as f64 * unit[t];
            let (cells_pair, interior, boundary, normal) = match (r.minus, r.plus) {
                (Some((a, _)), Some((b, _))) => {
                    let mut n = [0.0; 2];
                    n[r.axis] = 1.0;
                    ([a, b], true, None, n)
                }
                (Some((a, _)), None) => {
                    let side = if r.axis == 0 { Side::Right } else { Side::Top };
                    ([a, a], false, Some(side), side.outward_normal())
                }
                (None, Some((b, _))) => {
                    let side = if r.axis == 0 { Side::Left } else { Side::Bottom };
                    ([b, b], false, Some(side), side.outward_normal())
                }
                (None, None) => unreachable!(),
            };
            let boundary = boundary.map(|side| {
                debug_assert!(match side {
                    Side::Left => r.pos == 0,
                    Side::Right => r.pos == xmax,
                    Side::Bottom => r.pos == 0,
                    Side::Top => r.pos == ymax,
                });
                let marker = if dirichlet.contains(side) {
                    BoundaryMarker::DirichletV
                } else {
                    BoundaryMarker::NeumannV
                };
                (side, marker)
            });
            facets.push(Facet {
                vertices: [vid(lo[0], lo[1]), vid(hi[0], hi[1])],
                lo,
                hi,
                axis: r.axis,
                normal,
                length,
                cells: cells_pair,
                interior,
                boundary,
            });
            for (c, seg) in [r.minus, r.plus].into_iter().flatten() {
                let span = (seg.hi - seg.lo) as f64;
                cell_facets[c].push(CellFacet {
                    facet: fid,
                    side: seg.side,
                    sub: [
                        -1.0 + 2.0 * (r.lo - seg.lo) as f64 / span,
                        -1.0 + 2.0 * (r.hi - seg.lo) as f64 / span,
                    ],
                });
            }
        }
        for list in cell_facets.iter_mut() {
            list.sort_by(|a, b| a.side.cmp(&b.side).then(a.sub[0].partial_cmp(&b.sub[0]).unwrap()));
        }

        Mesh {
            width,
            height,
            nx,
            ny,
            dirichlet,
            neumann,
            vertices,
            cells,
            facets,
            cell_facets,
            origin,
        }
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn domain_extent(&self) -> (f64, f64) {
        (self.width, self.height)
    }

    /// Diagonal of the bounding box.
    pub fn diameter(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn base_resolution(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn dirichlet_edges(&self) -> EdgeSet {
        self.dirichlet
    }

    pub fn neumann_edges(&self) -> EdgeSet {
        self.neumann
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, c: usize) -> &Cell {
        &self.cells[c]
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn facet(&self, f: usize) -> &Facet {
        &self.facets[f]
    }

    /// Facets of a cell grouped by side (left, right, bottom, top), each side
    /// ordered by increasing coordinate.
    pub fn cell_facets(&self, c: usize) -> &[CellFacet] {
        &self.cell_facets[c]
    }

    /// Provenance of each cell relative to the mesh this one was refined from.
    pub fn origin(&self) -> &[CellOrigin] {
        &self.origin
    }

    /// Physical lower-left and upper-right corners of a cell.
    pub fn cell_bounds(&self, c: usize) -> ([f64; 2], [f64; 2]) {
        let cell = &self.cells[c];
        let s = cell.lattice_size();
        let u = self.lattice_unit();
        (
            [cell.corner[0] as f64 * u[0], cell.corner[1] as f64 * u[1]],
            [(cell.corner[0] + s) as f64 * u[0], (cell.corner[1] + s) as f64 * u[1]],
        )
    }

    /// Side lengths `(h1, h2)` of a cell.
    pub fn cell_size(&self, c: usize) -> [f64; 2] {
        let s = self.cells[c].lattice_size() as f64;
        let u = self.lattice_unit();
        [s * u[0], s * u[1]]
    }

    pub fn cell_diameter(&self, c: usize) -> f64 {
        let h = self.cell_size(c);
        h[0].hypot(h[1])
    }

    pub fn cell_area(&self, c: usize) -> f64 {
        let h = self.cell_size(c);
        h[0] * h[1]
    }

    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let (a, b) = self.cell_bounds(c);
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    /// Maps a reference point of `[-1,1]^2` into cell `c`.
    pub fn map_to_cell(&self, c: usize, xi: [f64; 2]) -> [f64; 2] {
        let (a, b) = self.cell_bounds(c);
        [
            a[0] + 0.5 * (xi[0] + 1.0) * (b[0] - a[0]),
            a[1] + 0.5 * (xi[1] + 1.0) * (b[1] - a[1]),
        ]
    }

    /// Physical endpoints of a facet.
    pub fn facet_endpoints(&self, f: usize) -> ([f64; 2], [f64; 2]) {
        let fa = &self.facets[f];
        let u = self.lattice_unit();
        (
            [fa.lo[0] as f64 * u[0], fa.lo[1] as f64 * u[1]],
            [fa.hi[0] as f64 * u[0], fa.hi[1] as f64 * u[1]],
        )
    }

    /// Maps a facet reference coordinate `s` in `[-1,1]` to a physical point.
    pub fn map_to_facet(&self, f: usize, s: f64) -> [f64; 2] {
        let (a, b) = self.facet_endpoints(f);
        let t = 0.5 * (s + 1.0);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    pub fn max_cell_size(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.cell_diameter(c)).fold(0.0, f64::max)
    }

    pub fn max_level(&self) -> u32 {
        self.cells.iter().map(|c| c.level).max().unwrap_or(0)
    }

    fn lattice_unit(&self) -> [f64; 2] {
        [
            self.width / (self.nx as f64 * (1u64 << MAX_LEVEL) as f64),
            self.height / (self.ny as f64 * (1u64 << MAX_LEVEL) as f64),
        ]
    }

    /// True when no two cells sharing a facet differ by more than one level.
    pub fn is_one_irregular(&self) -> bool {
        self.facets.iter().filter(|f| f.interior).all(|f| {
            let (a, b) = (self.cells[f.cells[0]].level, self.cells[f.cells[1]].level);
            a.abs_diff(b) <= 1
        })
    }

    /// Checks the structural invariants; used by tests and after refinement.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GldError::Config(format!("invalid mesh: {m}")));
        let total: f64 = (0..self.num_cells()).map(|c| self.cell_area(c)).sum();
        if ((total - self.area()) / self.area()).abs() > 1e-13 {
            return bad(format!("cell areas sum to {total}, domain area {}", self.area()));
        }
        if !self.is_one_irregular() {
            return bad("adjacent cells differ by more than one level".into());
        }
        for (i, f) in self.facets.iter().enumerate() {
            let n = f.normal[0].hypot(f.normal[1]);
            if (n - 1.0).abs() > 1e-14 || !(f.length > 0.0) {
                return bad(format!("facet {i} has bad normal or length"));
            }
            if f.interior == f.boundary.is_some() {
                return bad(format!("facet {i} is neither interior nor marked boundary"));
            }
        }
        for c in 0..self.num_cells() {
            for side in Side::ALL {
                let covered: f64 = self.cell_facets[c]
                    .iter()
                    .filter(|cf| cf.side == side)
                    .map(|cf| cf.sub[1] - cf.sub[0])
                    .sum();
                if (covered - 2.0).abs() > 1e-14 {
                    return bad(format!("side {} of cell {c} is not covered by facets", side.name()));
                }
            }
        }
        Ok(())
    }
}

//! Conforming mixed-dimensional Cartesian meshes: a bulk grid, embedded
//! fracture grids one dimension down, intersection grids two dimensions
//! down, and the interface cells tying each level to the next. Fractures
//! must lie on grid planes; conformity then holds by construction.

use std::collections::HashMap;
use thiserror::Error;

pub const NONE: usize = usize::MAX;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("non-conforming fracture: {0}")]
    NonConformingFracture(String),
    #[error("degenerate fracture: {0}")]
    DegenerateFracture(String),
    #[error("uncovered boundary: {0}")]
    UncoveredBoundary(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceKind {
    Internal,
    Boundary,
    /// Replaced by interface cells coupling to the next dimension down;
    /// no direct flux is assembled across it.
    FracAdjacent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    /// measure in the cell's own dimension (point cells have measure 1)
    pub volume: f64,
    pub centroid: [f64; 3],
    /// aperture b; 1.0 for bulk cells so b^(n-d) scalings degenerate cleanly
    pub aperture: f64,
    pub perm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Face {
    /// measure in (cell dim - 1); point faces have measure 1
    pub area: f64,
    pub normal: [f64; 3],
    pub centroid: [f64; 3],
    /// [negative-side cell, positive-side cell]; boundary faces store
    /// [inner, NONE] with an outward normal
    pub cells: [usize; 2],
    pub kind: FaceKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubMesh {
    pub dim: usize,
    pub cells: Vec<Cell>,
    pub faces: Vec<Face>,
}

/// One side of the coupling between a higher-dimensional face and a
/// lower-dimensional cell. `normal` points from the high cell into the
/// low-dimensional object.
#[derive(Clone, Debug, PartialEq)]
pub struct Interface {
    /// codimension of the higher side (0 = bulk)
    pub hi_codim: usize,
    pub hi_cell: usize,
    pub hi_face: usize,
    pub lo_cell: usize,
    pub area: f64,
    pub normal: [f64; 3],
    pub side: i8,
    /// distance from the high cell centroid to the interface
    pub hi_half_dist: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedDimMesh {
    pub dim: usize,
    pub extents: [f64; 3],
    pub resolution: [usize; 3],
    pub h: [f64; 3],
    /// indexed by codimension: subs[0] bulk, subs[1] fractures, subs[2] intersections
    pub subs: Vec<SubMesh>,
    pub interfaces: Vec<Interface>,
}

impl MixedDimMesh {
    pub fn n_cells(&self) -> usize {
        self.subs.iter().map(|s| s.cells.len()).sum()
    }

    /// offset of a codimension's cells in the global per-cell numbering
    pub fn cell_offset(&self, codim: usize) -> usize {
        self.subs[..codim].iter().map(|s| s.cells.len()).sum()
    }

    pub fn bulk_volume(&self) -> f64 {
        self.subs[0].cells.iter().map(|c| c.volume).sum()
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Fracture {
    /// axis-aligned patch corners; exactly one axis must be degenerate
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub aperture: f64,
    pub perm: f64,
}

struct FracIdx {
    deg: usize,
    plane: usize,
    lo: [usize; 3],
    hi: [usize; 3],
}

struct Builder {
    dim: usize,
    ext: [f64; 3],
    n: [usize; 3],
    h: [f64; 3],
    bulk_perm: f64,
}

pub fn build_cartesian_mdg(
    extents: [f64; 3],
    resolution: [usize; 3],
    fractures: &[Fracture],
    bulk_perm: f64,
) -> Result<MixedDimMesh, MeshError> {
    let dim = if resolution[2] == 0 { 2 } else { 3 };
    for a in 0..dim {
        assert!(
            resolution[a] >= 2 && extents[a] > 0.0,
            "need at least 2 cells and positive extent per axis"
        );
    }
    let mut h = [0.0; 3];
    for a in 0..dim {
        h[a] = extents[a] / resolution[a] as f64;
    }
    Builder {
        dim,
        ext: extents,
        n: resolution,
        h,
        bulk_perm,
    }
    .build(fractures)
}

impl Builder {
    fn snap(&self, c: f64, a: usize, what: &str) -> Result<usize, MeshError> {
        let idx = (c / self.h[a]).round();
        let tol = 1e-9 * self.ext[a].max(1.0);
        if (c - idx * self.h[a]).abs() > tol || idx < -0.5 || idx > self.n[a] as f64 + 0.5 {
            return Err(MeshError::NonConformingFracture(format!(
                "{what} coordinate {c} does not lie on a grid plane (spacing {})",
                self.h[a]
            )));
        }
        Ok(idx as usize)
    }

    fn cid(&self, ix: [usize; 3]) -> usize {
        ix[0] + self.n[0] * (ix[1] + self.n[1] * ix[2])
    }

    fn point(&self, idx: [f64; 3]) -> [f64; 3] {
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = idx[a] * self.h[a];
        }
        p
    }

    fn normalize(&self, fractures: &[Fracture]) -> Result<Vec<FracIdx>, MeshError> {
        let mut out = Vec::with_capacity(fractures.len());
        for (fi, f) in fractures.iter().enumerate() {
            if f.aperture <= 0.0 {
                return Err(MeshError::DegenerateFracture(format!(
                    "fracture {fi}: aperture must be positive"
                )));
            }
            let mut deg = Vec::new();
            for a in 0..self.dim {
                if f.hi[a] < f.lo[a] {
                    return Err(MeshError::DegenerateFracture(format!(
                        "fracture {fi}: hi < lo along axis {a}"
                    )));
                }
                if f.hi[a] - f.lo[a] < 1e-12 * self.ext[a].max(1.0) {
                    deg.push(a);
                }
            }
            match deg.len() {
                0 => {
                    return Err(MeshError::NonConformingFracture(format!(
                        "fracture {fi}: must be flat along exactly one axis"
                    )))
                }
                1 => {}
                _ => {
                    return Err(MeshError::DegenerateFracture(format!(
                        "fracture {fi}: zero extent along {} axes",
                        deg.len()
                    )))
                }
            }
            let a = deg[0];
            let plane = self.snap(f.lo[a], a, &format!("fracture {fi} plane"))?;
            if plane == 0 || plane == self.n[a] {
                return Err(MeshError::NonConformingFracture(format!(
                    "fracture {fi}: lies on the domain boundary"
                )));
            }
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            lo[a] = plane;
            hi[a] = plane;
            for t in 0..self.dim {
                if t == a {
                    continue;
                }
                lo[t] = self.snap(f.lo[t], t, &format!("fracture {fi} extent"))?;
                hi[t] = self.snap(f.hi[t], t, &format!("fracture {fi} extent"))?;
                if hi[t] <= lo[t] {
                    return Err(MeshError::DegenerateFracture(format!(
                        "fracture {fi}: spans no cell along axis {t}"
                    )));
                }
            }
            out.push(FracIdx { deg: a, plane, lo, hi });
        }
        Ok(out)
    }

    fn build(&self, fractures: &[Fracture]) -> Result<MixedDimMesh, MeshError> {
        let fr = self.normalize(fractures)?;
        let (nx, ny) = (self.n[0], self.n[1]);
        let nz = if self.dim == 3 { self.n[2] } else { 1 };

        // bulk cells
        let cell_vol: f64 = (0..self.dim).map(|a| self.h[a]).product();
        let mut bulk_cells = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    bulk_cells.push(Cell {
                        volume: cell_vol,
                        centroid: self.point([i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5]),
                        aperture: 1.0,
                        perm: self.bulk_perm,
                    });
                }
            }
        }

        // bulk faces, keyed (axis, plane, transverse cell indices)
        let mut bulk_faces = Vec::new();
        let mut face_key: HashMap<(usize, usize, usize, usize), usize> = HashMap::new();
        for a in 0..self.dim {
            let others: Vec<usize> = (0..self.dim).filter(|&o| o != a).collect();
            let area: f64 = others.iter().map(|&o| self.h[o]).product();
            let (o0, o1) = (others[0], others.get(1).copied());
            let (m0, m1) = (self.n[o0], o1.map(|o| self.n[o]).unwrap_or(1));
            for ia in 0..=self.n[a] {
                for t1 in 0..m1 {
                    for t0 in 0..m0 {
                        let mut fidx = [0.0f64; 3];
                        fidx[a] = ia as f64;
                        fidx[o0] = t0 as f64 + 0.5;
                        if let Some(o) = o1 {
                            fidx[o] = t1 as f64 + 0.5;
                        }
                        let mut e = [0.0; 3];
                        e[a] = 1.0;
                        let mut cix = [0usize; 3];
                        cix[o0] = t0;
                        if let Some(o) = o1 {
                            cix[o] = t1;
                        }
                        let (cells, normal, kind) = if ia == 0 {
                            cix[a] = 0;
                            ([self.cid(cix), NONE], [-e[0], -e[1], -e[2]], FaceKind::Boundary)
                        } else if ia == self.n[a] {
                            cix[a] = self.n[a] - 1;
                            ([self.cid(cix), NONE], e, FaceKind::Boundary)
                        } else {
                            cix[a] = ia - 1;
                            let lo = self.cid(cix);
                            cix[a] = ia;
                            ([lo, self.cid(cix)], e, FaceKind::Internal)
                        };
                        face_key.insert((a, ia, t0, t1), bulk_faces.len());
                        bulk_faces.push(Face {
                            area,
                            normal,
                            centroid: self.point(fidx),
                            cells,
                            kind,
                        });
                    }
                }
            }
        }

        // intersection cells (codim 2), deduplicated across fracture pairs
        let mut isect_cells: Vec<Cell> = Vec::new();
        let mut isect_keys: Vec<[usize; 4]> = Vec::new();
        let mut isect_map: HashMap<[usize; 4], usize> = HashMap::new();
        for i in 0..fr.len() {
            for j in (i + 1)..fr.len() {
                let (a, b) = (fr[i].deg, fr[j].deg);
                if a == b {
                    continue;
                }
                let (pa, pb) = (fr[i].plane, fr[j].plane);
                if !(fr[j].lo[a] <= pa && pa <= fr[j].hi[a]) {
                    continue;
                }
                if !(fr[i].lo[b] <= pb && pb <= fr[i].hi[b]) {
                    continue;
                }
                let ap = fractures[i].aperture.min(fractures[j].aperture);
                let kp = fractures[i].perm.max(fractures[j].perm);
                if self.dim == 2 {
                    let px = if a == 0 { pa } else { pb };
                    let py = if a == 1 { pa } else { pb };
                    let key = [px, py, 0, 0];
                    match isect_map.get(&key) {
                        Some(&id) => {
                            isect_cells[id].aperture = isect_cells[id].aperture.min(ap);
                            isect_cells[id].perm = isect_cells[id].perm.max(kp);
                        }
                        None => {
                            isect_map.insert(key, isect_cells.len());
                            isect_keys.push(key);
                            isect_cells.push(Cell {
                                volume: 1.0,
                                centroid: self.point([px as f64, py as f64, 0.0]),
                                aperture: ap,
                                perm: kp,
                            });
                        }
                    }
                } else {
                    let c = 3 - a - b;
                    let m0 = fr[i].lo[c].max(fr[j].lo[c]);
                    let m1 = fr[i].hi[c].min(fr[j].hi[c]);
                    let (u, pu, v, pv) = if a < b { (a, pa, b, pb) } else { (b, pb, a, pa) };
                    for m in m0..m1 {
                        let key = [c, m, pu, pv];
                        match isect_map.get(&key) {
                            Some(&id) => {
                                isect_cells[id].aperture = isect_cells[id].aperture.min(ap);
                                isect_cells[id].perm = isect_cells[id].perm.max(kp);
                            }
                            None => {
                                let mut cix = [0.0f64; 3];
                                cix[u] = pu as f64;
                                cix[v] = pv as f64;
                                cix[c] = m as f64 + 0.5;
                                isect_map.insert(key, isect_cells.len());
                                isect_keys.push(key);
                                isect_cells.push(Cell {
                                    volume: self.h[c],
                                    centroid: self.point(cix),
                                    aperture: ap,
                                    perm: kp,
                                });
                            }
                        }
                    }
                }
            }
        }

        // intersection-line faces (3D only): internal faces along each line,
        // boundary faces at the ends of each contiguous run
        let mut isect_faces = Vec::new();
        if self.dim == 3 {
            let mut lines: HashMap<(usize, usize, usize), Vec<(usize, usize)>> = HashMap::new();
            for (id, key) in isect_keys.iter().enumerate() {
                lines.entry((key[0], key[2], key[3])).or_default().push((key[1], id));
            }
            let mut line_list: Vec<_> = lines.into_iter().collect();
            line_list.sort_by_key(|(k, _)| *k);
            for ((c, pu, pv), mut run) in line_list {
                run.sort_by_key(|&(m, _)| m);
                let uv: Vec<usize> = (0..3).filter(|&x| x != c).collect();
                let mk_centroid = |node: usize| {
                    let mut cix = [0.0f64; 3];
                    cix[uv[0]] = pu as f64;
                    cix[uv[1]] = pv as f64;
                    cix[c] = node as f64;
                    self.point(cix)
                };
                let mut e = [0.0; 3];
                e[c] = 1.0;
                for (w, &(m, id)) in run.iter().enumerate() {
                    let prev = if w > 0 && run[w - 1].0 == m - 1 {
                        Some(run[w - 1].1)
                    } else {
                        None
                    };
                    if prev.is_none() {
                        isect_faces.push(Face {
                            area: 1.0,
                            normal: [-e[0], -e[1], -e[2]],
                            centroid: mk_centroid(m),
                            cells: [id, NONE],
                            kind: FaceKind::Boundary,
                        });
                    } else {
                        isect_faces.push(Face {
                            area: 1.0,
                            normal: e,
                            centroid: mk_centroid(m),
                            cells: [prev.unwrap(), id],
                            kind: FaceKind::Internal,
                        });
                    }
                    let next_adjacent = w + 1 < run.len() && run[w + 1].0 == m + 1;
                    if !next_adjacent {
                        isect_faces.push(Face {
                            area: 1.0,
                            normal: e,
                            centroid: mk_centroid(m + 1),
                            cells: [id, NONE],
                            kind: FaceKind::Boundary,
                        });
                    }
                }
            }
        }

        // fracture cells + bulk coupling
        let mut frac_cells = Vec::new();
        let mut frac_cell_id: HashMap<(usize, usize, usize), usize> = HashMap::new();
        let mut interfaces = Vec::new();
        for (fi, f) in fr.iter().enumerate() {
            let a = f.deg;
            let ts: Vec<usize> = (0..self.dim).filter(|&t| t != a).collect();
            let vol: f64 = ts.iter().map(|&t| self.h[t]).product();
            let (t0, t1o) = (ts[0], ts.get(1).copied());
            let (r0, r1) = (
                (f.lo[t0], f.hi[t0]),
                t1o.map(|t| (f.lo[t], f.hi[t])).unwrap_or((0, 1)),
            );
            for m1 in r1.0..r1.1 {
                for m0 in r0.0..r0.1 {
                    let mut cix = [0.0f64; 3];
                    cix[a] = f.plane as f64;
                    cix[t0] = m0 as f64 + 0.5;
                    if let Some(t) = t1o {
                        cix[t] = m1 as f64 + 0.5;
                    }
                    let gid = frac_cells.len();
                    frac_cell_id.insert((fi, m0, m1), gid);
                    frac_cells.push(Cell {
                        volume: vol,
                        centroid: self.point(cix),
                        aperture: fractures[fi].aperture,
                        perm: fractures[fi].perm,
                    });

                    // claim the bulk face this cell sits on
                    let others: Vec<usize> = (0..self.dim).filter(|&o| o != a).collect();
                    let mut trans = [0usize; 2];
                    for (w, &o) in others.iter().enumerate() {
                        trans[w] = if o == t0 { m0 } else { m1 };
                    }
                    let fid = face_key[&(a, f.plane, trans[0], trans[1])];
                    if bulk_faces[fid].kind == FaceKind::FracAdjacent {
                        return Err(MeshError::DegenerateFracture(format!(
                            "fracture {fi}: overlaps another fracture on the same grid face"
                        )));
                    }
                    bulk_faces[fid].kind = FaceKind::FracAdjacent;
                    let mut e = [0.0; 3];
                    e[a] = 1.0;
                    let area = bulk_faces[fid].area;
                    let mut cix_lo = [0usize; 3];
                    cix_lo[t0] = m0;
                    if let Some(t) = t1o {
                        cix_lo[t] = m1;
                    }
                    cix_lo[a] = f.plane - 1;
                    let below = self.cid(cix_lo);
                    cix_lo[a] = f.plane;
                    let above = self.cid(cix_lo);
                    interfaces.push(Interface {
                        hi_codim: 0,
                        hi_cell: below,
                        hi_face: fid,
                        lo_cell: gid,
                        area,
                        normal: e,
                        side: -1,
                        hi_half_dist: 0.5 * self.h[a],
                    });
                    interfaces.push(Interface {
                        hi_codim: 0,
                        hi_cell: above,
                        hi_face: fid,
                        lo_cell: gid,
                        area,
                        normal: [-e[0], -e[1], -e[2]],
                        side: 1,
                        hi_half_dist: 0.5 * self.h[a],
                    });
                }
            }
        }

        // fracture faces + coupling to intersection cells
        let mut frac_faces = Vec::new();
        for (fi, f) in fr.iter().enumerate() {
            let a = f.deg;
            let ts: Vec<usize> = (0..self.dim).filter(|&t| t != a).collect();
            if self.dim == 2 {
                let t = ts[0];
                for m in f.lo[t]..=f.hi[t] {
                    let left = (m > f.lo[t]).then(|| frac_cell_id[&(fi, m - 1, 0)]);
                    let right = (m < f.hi[t]).then(|| frac_cell_id[&(fi, m, 0)]);
                    let mut nidx = [0.0f64; 3];
                    nidx[a] = f.plane as f64;
                    nidx[t] = m as f64;
                    let centroid = self.point(nidx);
                    let mut e = [0.0; 3];
                    e[t] = 1.0;
                    let key = if t == 0 {
                        [m, f.plane, 0, 0]
                    } else {
                        [f.plane, m, 0, 0]
                    };
                    if let Some(&iid) = isect_map.get(&key) {
                        let hi_face = frac_faces.len();
                        frac_faces.push(Face {
                            area: 1.0,
                            normal: e,
                            centroid,
                            cells: [left.unwrap_or(NONE), right.unwrap_or(NONE)],
                            kind: FaceKind::FracAdjacent,
                        });
                        if let Some(lc) = left {
                            interfaces.push(Interface {
                                hi_codim: 1,
                                hi_cell: lc,
                                hi_face,
                                lo_cell: iid,
                                area: 1.0,
                                normal: e,
                                side: -1,
                                hi_half_dist: 0.5 * self.h[t],
                            });
                        }
                        if let Some(rc) = right {
                            interfaces.push(Interface {
                                hi_codim: 1,
                                hi_cell: rc,
                                hi_face,
                                lo_cell: iid,
                                area: 1.0,
                                normal: [-e[0], -e[1], -e[2]],
                                side: 1,
                                hi_half_dist: 0.5 * self.h[t],
                            });
                        }
                    } else if left.is_none() || right.is_none() {
                        let (cell, n) = if left.is_none() {
                            (right.unwrap(), [-e[0], -e[1], -e[2]])
                        } else {
                            (left.unwrap(), e)
                        };
                        frac_faces.push(Face {
                            area: 1.0,
                            normal: n,
                            centroid,
                            cells: [cell, NONE],
                            kind: FaceKind::Boundary,
                        });
                    } else {
                        frac_faces.push(Face {
                            area: 1.0,
                            normal: e,
                            centroid,
                            cells: [left.unwrap(), right.unwrap()],
                            kind: FaceKind::Internal,
                        });
                    }
                }
            } else {
                // edges normal to each tangential axis
                let (t0, t1) = (ts[0], ts[1]);
                for &(bn, cf) in &[(t0, t1), (t1, t0)] {
                    // bn: axis the edge is normal to; cf: axis the edge runs along
                    for nb in f.lo[bn]..=f.hi[bn] {
                        for mc in f.lo[cf]..f.hi[cf] {
                            let keyf = |ax: usize, val: usize| (ax == t0).then_some(val);
                            let cell_at = |idx_bn: usize| {
                                let m0 = keyf(bn, idx_bn)
                                    .or(keyf(cf, mc))
                                    .unwrap();
                                let m1 = if bn == t1 { idx_bn } else { mc };
                                frac_cell_id.get(&(fi, m0, m1)).copied()
                            };
                            let left = (nb > f.lo[bn]).then(|| cell_at(nb - 1)).flatten();
                            let right = (nb < f.hi[bn]).then(|| cell_at(nb)).flatten();
                            let mut nidx = [0.0f64; 3];
                            nidx[a] = f.plane as f64;
                            nidx[bn] = nb as f64;
                            nidx[cf] = mc as f64 + 0.5;
                            let centroid = self.point(nidx);
                            let mut e = [0.0; 3];
                            e[bn] = 1.0;
                            let area = self.h[cf];
                            let (pu, pv) = if a < bn { (f.plane, nb) } else { (nb, f.plane) };
                            let key = [cf, mc, pu, pv];
                            if let Some(&iid) = isect_map.get(&key) {
                                let hi_face = frac_faces.len();
                                frac_faces.push(Face {
                                    area,
                                    normal: e,
                                    centroid,
                                    cells: [left.unwrap_or(NONE), right.unwrap_or(NONE)],
                                    kind: FaceKind::FracAdjacent,
                                });
                                if let Some(lc) = left {
                                    interfaces.push(Interface {
                                        hi_codim: 1,
                                        hi_cell: lc,
                                        hi_face,
                                        lo_cell: iid,
                                        area,
                                        normal: e,
                                        side: -1,
                                        hi_half_dist: 0.5 * self.h[bn],
                                    });
                                }
                                if let Some(rc) = right {
                                    interfaces.push(Interface {
                                        hi_codim: 1,
                                        hi_cell: rc,
                                        hi_face,
                                        lo_cell: iid,
                                        area,
                                        normal: [-e[0], -e[1], -e[2]],
                                        side: 1,
                                        hi_half_dist: 0.5 * self.h[bn],
                                    });
                                }
                            } else {
                                match (left, right) {
                                    (Some(lc), Some(rc)) => frac_faces.push(Face {
                                        area,
                                        normal: e,
                                        centroid,
                                        cells: [lc, rc],
                                        kind: FaceKind::Internal,
                                    }),
                                    (Some(lc), None) => frac_faces.push(Face {
                                        area,
                                        normal: e,
                                        centroid,
                                        cells: [lc, NONE],
                                        kind: FaceKind::Boundary,
                                    }),
                                    (None, Some(rc)) => frac_faces.push(Face {
                                        area,
                                        normal: [-e[0], -e[1], -e[2]],
                                        centroid,
                                        cells: [rc, NONE],
                                        kind: FaceKind::Boundary,
                                    }),
                                    (None, None) => {}
                                }
                            }
                        }
                    }
                }
            }
        }

        Ok(MixedDimMesh {
            dim: self.dim,
            extents: self.ext,
            resolution: self.n,
            h: self.h,
            subs: vec![
                SubMesh {
                    dim: self.dim,
                    cells: bulk_cells,
                    faces: bulk_faces,
                },
                SubMesh {
                    dim: self.dim - 1,
                    cells: frac_cells,
                    faces: frac_faces,
                },
                SubMesh {
                    dim: self.dim - 2,
                    cells: isect_cells,
                    faces: isect_faces,
                },
            ],
            interfaces,
        })
    }
}

// ---------------------------------------------------------------------
// boundary conditions and face partitioning

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Bc {
    Dirichlet(f64),
    Neumann(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Side {
    fn axis_end(self) -> (usize, bool) {
        match self {
            Side::XMin => (0, false),
            Side::XMax => (0, true),
            Side::YMin => (1, false),
            Side::YMax => (1, true),
            Side::ZMin => (2, false),
            Side::ZMax => (2, true),
        }
    }
}

/// One boundary rule; `range` optionally restricts it to a window in the
/// side's tangential coordinates (axes in increasing order). First
/// matching rule wins.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BcRule {
    pub side: Side,
    #[serde(default)]
    pub range: Option<[[f64; 2]; 2]>,
    pub bc: Bc,
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BcSpec {
    pub flow: Vec<BcRule>,
    pub transport: Vec<BcRule>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FaceBc {
    Interior,
    /// handled through interface cells, not a direct face flux
    FracCoupled,
    Dirichlet(f64),
    Neumann(f64),
}

/// Per-codimension, per-face tags for each equation.
pub struct FacePartition {
    pub flow: Vec<Vec<FaceBc>>,
    pub transport: Vec<Vec<FaceBc>>,
}

fn boundary_side(mesh: &MixedDimMesh, face: &Face) -> Option<Side> {
    let tol = 1e-9 * mesh.extents[..mesh.dim].iter().cloned().fold(1.0, f64::max);
    let mut axes: Vec<usize> = (0..mesh.dim).collect();
    axes.sort_by(|&p, &q| {
        face.normal[q]
            .abs()
            .partial_cmp(&face.normal[p].abs())
            .unwrap()
    });
    for a in axes {
        if face.centroid[a].abs() <= tol {
            return Some(match a {
                0 => Side::XMin,
                1 => Side::YMin,
                _ => Side::ZMin,
            });
        }
        if (face.centroid[a] - mesh.extents[a]).abs() <= tol {
            return Some(match a {
                0 => Side::XMax,
                1 => Side::YMax,
                _ => Side::ZMax,
            });
        }
    }
    None
}

fn resolve(
    mesh: &MixedDimMesh,
    rules: &[BcRule],
    face: &Face,
    side: Side,
) -> Option<FaceBc> {
    let (axis, _) = side.axis_end();
    let tang: Vec<usize> = (0..mesh.dim).filter(|&a| a != axis).collect();
    let tol = 1e-9 * mesh.extents[..mesh.dim].iter().cloned().fold(1.0, f64::max);
    'rules: for r in rules {
        if r.side != side {
            continue;
        }
        if let Some(rg) = &r.range {
            for (w, &t) in tang.iter().enumerate() {
                let c = face.centroid[t];
                if c < rg[w][0] - tol || c > rg[w][1] + tol {
                    continue 'rules;
                }
            }
        }
        return Some(match r.bc {
            Bc::Dirichlet(v) => FaceBc::Dirichlet(v),
            Bc::Neumann(v) => FaceBc::Neumann(v),
        });
    }
    None
}

pub fn face_partition(mesh: &MixedDimMesh, bc: &BcSpec) -> Result<FacePartition, MeshError> {
    let mut out = FacePartition {
        flow: Vec::new(),
        transport: Vec::new(),
    };
    for (codim, sub) in mesh.subs.iter().enumerate() {
        let mut fl = Vec::with_capacity(sub.faces.len());
        let mut tr = Vec::with_capacity(sub.faces.len());
        for face in &sub.faces {
            match face.kind {
                FaceKind::Internal => {
                    fl.push(FaceBc::Interior);
                    tr.push(FaceBc::Interior);
                }
                FaceKind::FracAdjacent => {
                    fl.push(FaceBc::FracCoupled);
                    tr.push(FaceBc::FracCoupled);
                }
                FaceKind::Boundary => {
                    let side = boundary_side(mesh, face);
                    for (rules, dst, eqn) in [
                        (&bc.flow, &mut fl, "flow"),
                        (&bc.transport, &mut tr, "transport"),
                    ] {
                        let tag = match side {
                            Some(s) => resolve(mesh, rules, face, s),
                            // immersed tip: zero normal flux
                            None => Some(FaceBc::Neumann(0.0)),
                        };
                        match tag {
                            Some(t) => dst.push(t),
                            None if codim > 0 => dst.push(FaceBc::Neumann(0.0)),
                            None => {
                                return Err(MeshError::UncoveredBoundary(format!(
                                    "{eqn}: no rule covers boundary face at {:?}",
                                    face.centroid
                                )))
                            }
                        }
                    }
                }
            }
        }
        out.flow.push(fl);
        out.transport.push(tr);
    }
    Ok(out)
}

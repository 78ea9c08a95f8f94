//! Simplicial meshes of the unit box and per-cell affine geometry.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::combinatorics::{increasing_sequences, permutation_sign};
use crate::error::{FeecError, Result};

/// Affine data of one simplex: vertices, barycentric gradients, measure and diameter.
#[derive(Clone, Debug)]
pub struct CellGeometry {
    pub dim: usize,
    pub vertices: Vec<Vec<f64>>,
    /// `grads[i]` is `∇λ_i`.
    pub grads: Vec<Vec<f64>>,
    pub measure: f64,
    pub signed_measure: f64,
    pub diameter: f64,
}

impl CellGeometry {
    pub fn new(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vertices.len().saturating_sub(1);
        if dim == 0 || vertices.iter().any(|v| v.len() != dim) {
            return Err(FeecError::Mesh("a cell needs d + 1 vertices in R^d".into()));
        }
        let jac = DMatrix::from_fn(dim, dim, |r, c| vertices[c + 1][r] - vertices[0][r]);
        let det = jac.determinant();
        let factorial: f64 = (1..=dim).map(|x| x as f64).product();
        let inv = jac
            .try_inverse()
            .ok_or_else(|| FeecError::Mesh("degenerate cell".into()))?;
        let mut grads = vec![vec![0.0; dim]; dim + 1];
        for i in 0..dim {
            for k in 0..dim {
                grads[i + 1][k] = inv[(i, k)];
                grads[0][k] -= inv[(i, k)];
            }
        }
        let mut diameter: f64 = 0.0;
        for a in 0..=dim {
            for b in a + 1..=dim {
                let len = vertices[a]
                    .iter()
                    .zip(&vertices[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                diameter = diameter.max(len);
            }
        }
        Ok(Self {
            dim,
            vertices,
            grads,
            measure: det.abs() / factorial,
            signed_measure: det / factorial,
            diameter,
        })
    }

    /// The reference simplex `conv{0, e_1, …, e_d}`.
    pub fn reference(dim: usize) -> Self {
        let mut verts = vec![vec![0.0; dim]];
        for i in 0..dim {
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            verts.push(v);
        }
        Self::new(verts).expect("reference simplex is nondegenerate")
    }

    /// Cartesian point of a barycentric coordinate tuple.
    pub fn point(&self, bary: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for (v, &l) in self.vertices.iter().zip(bary) {
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi += l * vi;
            }
        }
        x
    }

    pub fn barycenter(&self) -> Vec<f64> {
        let w = 1.0 / (self.dim + 1) as f64;
        self.point(&vec![w; self.dim + 1])
    }

    /// Measure of the sub-simplex spanned by local vertices `local` (1 for a vertex).
    pub fn face_measure(&self, local: &[usize]) -> f64 {
        simplex_measure(&local.iter().map(|&i| self.vertices[i].clone()).collect::<Vec<_>>())
    }
}

/// `m`-dimensional measure of the simplex spanned by `m + 1` points, via the Gram determinant.
pub fn simplex_measure(points: &[Vec<f64>]) -> f64 {
    let m = points.len() - 1;
    if m == 0 {
        return 1.0;
    }
    let edges: Vec<Vec<f64>> = points[1..]
        .iter()
        .map(|p| p.iter().zip(&points[0]).map(|(a, b)| a - b).collect())
        .collect();
    let gram = DMatrix::from_fn(m, m, |r, c| edges[r].iter().zip(&edges[c]).map(|(a, b)| a * b).sum::<f64>());
    let factorial: f64 = (1..=m).map(|x| x as f64).product();
    gram.determinant().max(0.0).sqrt() / factorial
}

/// Sub-simplices of one dimension with incidence and boundary data.
#[derive(Clone, Debug)]
pub struct FaceTable {
    pub dim: usize,
    /// Sorted global vertex ids of each sub-simplex, in lexicographic order.
    pub vertices: Vec<Vec<usize>>,
    /// Cells containing each sub-simplex.
    pub cells: Vec<Vec<usize>>,
    pub boundary: Vec<bool>,
}

impl FaceTable {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn interior_count(&self) -> usize {
        self.boundary.iter().filter(|b| !**b).count()
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary.iter().filter(|b| **b).count()
    }
}

/// A conforming simplicial mesh.
///
/// Cells are stored positively oriented in `cells`; element construction uses the ascending
/// vertex order in `sorted_cells`, whose orientation relative to `cells` is `orientation`.
#[derive(Clone, Debug)]
pub struct SimplicialMesh {
    pub dim: usize,
    /// Cells per axis when generated by [`box_mesh`].
    pub n: Option<usize>,
    pub vertices: Vec<Vec<f64>>,
    pub cells: Vec<Vec<usize>>,
    pub sorted_cells: Vec<Vec<usize>>,
    pub orientation: Vec<i8>,
    /// Tables for sub-simplex dimensions `0..dim`.
    pub faces: Vec<FaceTable>,
    /// `cell_faces[l][c][i]`: global id of the `i`-th local `l`-face of cell `c`, local faces
    /// being increasing subsets of the sorted cell vertices in lexicographic order.
    pub cell_faces: Vec<Vec<Vec<usize>>>,
    /// Translation class of each cell.
    pub cell_class: Vec<usize>,
    /// One representative cell per class.
    pub class_representative: Vec<usize>,
}

impl SimplicialMesh {
    /// Builds all derived tables from vertices and cells (any vertex order per cell).
    pub fn from_cells(dim: usize, vertices: Vec<Vec<f64>>, raw_cells: Vec<Vec<usize>>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(FeecError::UnsupportedDimension(dim));
        }
        let mut cells = Vec::with_capacity(raw_cells.len());
        let mut sorted_cells = Vec::with_capacity(raw_cells.len());
        let mut orientation = Vec::with_capacity(raw_cells.len());
        for cell in raw_cells {
            if cell.len() != dim + 1 {
                return Err(FeecError::Mesh(format!("cell with {} vertices in dimension {dim}", cell.len())));
            }
            let geom = CellGeometry::new(cell.iter().map(|&v| vertices[v].clone()).collect())?;
            let mut positive = cell.clone();
            if geom.signed_measure < 0.0 {
                positive.swap(dim - 1, dim);
            }
            let mut sorted = positive.clone();
            sorted.sort_unstable();
            // parity of the permutation taking the positive order to the ascending one
            let perm: Vec<usize> = positive
                .iter()
                .map(|v| sorted.iter().position(|s| s == v).expect("vertex present"))
                .collect();
            orientation.push(permutation_sign(&perm) as i8);
            cells.push(positive);
            sorted_cells.push(sorted);
        }

        let mut faces = Vec::with_capacity(dim);
        let mut cell_faces = Vec::with_capacity(dim);
        for l in 0..dim {
            let local = increasing_sequences(dim + 1, l + 1);
            let mut all: Vec<Vec<usize>> = Vec::with_capacity(sorted_cells.len() * local.len());
            for cell in &sorted_cells {
                for sub in &local {
                    all.push(sub.iter().map(|&i| cell[i]).collect());
                }
            }
            all.sort_unstable();
            all.dedup();
            let index: HashMap<&[usize], usize> = all.iter().enumerate().map(|(i, f)| (f.as_slice(), i)).collect();
            let mut incident = vec![Vec::new(); all.len()];
            let mut per_cell = Vec::with_capacity(sorted_cells.len());
            for (c, cell) in sorted_cells.iter().enumerate() {
                let ids: Vec<usize> = local
                    .iter()
                    .map(|sub| {
                        let key: Vec<usize> = sub.iter().map(|&i| cell[i]).collect();
                        index[key.as_slice()]
                    })
                    .collect();
                for &id in &ids {
                    incident[id].push(c);
                }
                per_cell.push(ids);
            }
            faces.push(FaceTable { dim: l, boundary: vec![false; all.len()], vertices: all, cells: incident });
            cell_faces.push(per_cell);
        }

        // boundary facets have one incident cell; lower faces inherit from facets
        let facet_boundary: Vec<bool> = faces[dim - 1].cells.iter().map(|c| c.len() == 1).collect();
        faces[dim - 1].boundary = facet_boundary.clone();
        for l in 0..dim.saturating_sub(1) {
            let index: HashMap<Vec<usize>, usize> =
                faces[l].vertices.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect();
            let local = increasing_sequences(dim, l + 1);
            let mut flags = vec![false; faces[l].len()];
            for (f, verts) in faces[dim - 1].vertices.iter().enumerate() {
                if !facet_boundary[f] {
                    continue;
                }
                for sub in &local {
                    let key: Vec<usize> = sub.iter().map(|&i| verts[i]).collect();
                    flags[index[&key]] = true;
                }
            }
            faces[l].boundary = flags;
        }

        let mut class_map: HashMap<Vec<i64>, usize> = HashMap::new();
        let mut cell_class = Vec::with_capacity(sorted_cells.len());
        let mut class_representative = Vec::new();
        for (c, cell) in sorted_cells.iter().enumerate() {
            let key: Vec<i64> = cell[1..]
                .iter()
                .flat_map(|&v| (0..dim).map(move |k| (v, k)))
                .map(|(v, k)| ((vertices[v][k] - vertices[cell[0]][k]) * 1e9).round() as i64)
                .collect();
            let next = class_map.len();
            let id = *class_map.entry(key).or_insert_with(|| {
                class_representative.push(c);
                next
            });
            cell_class.push(id);
        }

        Ok(Self {
            dim,
            n: None,
            vertices,
            cells,
            sorted_cells,
            orientation,
            faces,
            cell_faces,
            cell_class,
            class_representative,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_representative.len()
    }

    /// Number of sub-simplices of dimension `l`, cells included for `l = d`.
    pub fn count(&self, l: usize) -> usize {
        if l == self.dim {
            self.num_cells()
        } else {
            self.faces[l].len()
        }
    }

    /// Geometry of cell `c` with vertices in ascending id order.
    pub fn geometry(&self, c: usize) -> CellGeometry {
        CellGeometry::new(self.sorted_cells[c].iter().map(|&v| self.vertices[v].clone()).collect())
            .expect("mesh cells are nondegenerate")
    }

    /// Geometry of cell `c` with vertices in positive orientation order.
    pub fn oriented_geometry(&self, c: usize) -> CellGeometry {
        CellGeometry::new(self.cells[c].iter().map(|&v| self.vertices[v].clone()).collect())
            .expect("mesh cells are nondegenerate")
    }

    /// Mesh size `max h_T`.
    pub fn h(&self) -> f64 {
        match self.n {
            Some(n) => (self.dim as f64).sqrt() / n as f64,
            None => (0..self.num_cells()).map(|c| self.geometry(c).diameter).fold(0.0, f64::max),
        }
    }

    /// Alternating count of sub-simplices.
    pub fn euler_characteristic(&self) -> i64 {
        (0..=self.dim)
            .map(|l| if l % 2 == 0 { self.count(l) as i64 } else { -(self.count(l) as i64) })
            .sum()
    }

    /// Orientation of the facet opposite local sorted vertex `i` relative to the boundary
    /// orientation induced by cell `c`.
    pub fn facet_sign(&self, c: usize, i: usize) -> i8 {
        let s = if i % 2 == 0 { 1 } else { -1 };
        s * self.orientation[c]
    }

    /// Writes `d nv nc`, then vertex coordinates, then zero-based cell vertex ids.
    pub fn write_dump(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.dim, self.num_vertices(), self.num_cells())?;
        for v in &self.vertices {
            let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            writeln!(out, "{}", parts.join(" "))?;
        }
        for c in &self.cells {
            let parts: Vec<String> = c.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{}", parts.join(" "))?;
        }
        Ok(())
    }

    pub fn dump_to_path(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_dump(&mut file)?;
        Ok(())
    }
}

/// Kuhn (Freudenthal) triangulation of `[0,1]^d` with `n` subcubes per axis, each split into
/// `d!` simplices along the diagonal `(0,…,0)–(1,…,1)`.
pub fn box_mesh(dim: usize, n: usize) -> Result<Arc<SimplicialMesh>> {
    if !(2..=3).contains(&dim) {
        return Err(FeecError::UnsupportedDimension(dim));
    }
    if n == 0 {
        return Err(FeecError::Mesh("at least one cell per axis is required".into()));
    }
    let stride: Vec<usize> = (0..dim).map(|k| (n + 1).pow(k as u32)).collect();
    let nv = (n + 1).pow(dim as u32);
    let vertices: Vec<Vec<f64>> = (0..nv)
        .map(|id| (0..dim).map(|k| ((id / stride[k]) % (n + 1)) as f64 / n as f64).collect())
        .collect();
    let perms = permutations(dim);
    let mut cells = Vec::with_capacity(n.pow(dim as u32) * perms.len());
    for cube in 0..n.pow(dim as u32) {
        let corner: usize = (0..dim).map(|k| ((cube / n.pow(k as u32)) % n) * stride[k]).sum();
        for perm in &perms {
            let mut cell = vec![corner];
            let mut cur = corner;
            for &axis in perm {
                cur += stride[axis];
                cell.push(cur);
            }
            cells.push(cell);
        }
    }
    let mut mesh = SimplicialMesh::from_cells(dim, vertices, cells)?;
    mesh.n = Some(n);
    Ok(Arc::new(mesh))
}

/// The box mesh with twice as many cells per axis.
pub fn refine_uniform(mesh: &SimplicialMesh) -> Result<Arc<SimplicialMesh>> {
    let n = mesh
        .n
        .ok_or_else(|| FeecError::Mesh("uniform refinement needs a generated box mesh".into()))?;
    box_mesh(mesh.dim, 2 * n)
}

/// The sub-simplex table of dimension `l`.
pub fn subsimplices(mesh: &SimplicialMesh, l: usize) -> Result<&FaceTable> {
    mesh.faces
        .get(l)
        .ok_or(FeecError::OutOfRange { index: l, limit: mesh.dim })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

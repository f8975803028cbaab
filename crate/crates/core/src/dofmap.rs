//! Global numbering of shared (skeleton or conforming) degrees of freedom.

use crate::basis::{classify_q, face_vertices, q_edge_sign, q_face_canonical, q_face_dofs, Family, QEntity};
use crate::mesh::{BoundaryTag, HexMesh};

/// Numbering of one shared Q_p variable on mesh edges and faces.
#[derive(Clone, Debug)]
pub struct EntityNumbering {
    pub order: usize,
    pub edge_start: Vec<Option<usize>>,
    pub face_start: Vec<Option<usize>>,
    pub offset: usize,
    pub ndofs: usize,
}

/// Local edges of a local face.
pub fn face_edges(face: usize) -> [usize; 4] {
    let fv = face_vertices(face);
    let mut out = [0; 4];
    let mut n = 0;
    for e in 0..12 {
        let (_, a, b) = crate::basis::edge_vertices(e);
        if fv.contains(&a) && fv.contains(&b) {
            out[n] = e;
            n += 1;
        }
    }
    debug_assert_eq!(n, 4);
    out
}

impl EntityNumbering {
    /// Number the dofs of faces for which `active` holds, and the edges of those faces,
    /// in element-traversal order starting at `offset`.
    pub fn new(mesh: &HexMesh, order: usize, offset: usize, active: impl Fn(Option<BoundaryTag>) -> bool) -> Self {
        let mut edge_start = vec![None; mesh.edges.len()];
        let mut face_start = vec![None; mesh.faces.len()];
        let nf = q_face_dofs(order);
        let mut next = offset;
        for el in &mesh.elements {
            for f in 0..6 {
                let gf = el.faces[f];
                if !active(mesh.faces[gf].boundary) {
                    continue;
                }
                for le in face_edges(f) {
                    let ge = el.edges[le];
                    if edge_start[ge].is_none() {
                        edge_start[ge] = Some(next);
                        next += order;
                    }
                }
                if face_start[gf].is_none() && nf > 0 {
                    face_start[gf] = Some(next);
                    next += nf;
                }
            }
        }
        EntityNumbering { order, edge_start, face_start, offset, ndofs: next - offset }
    }

    /// Global dof and sign of a local Q shape of element `e`, if it lives on an active entity.
    pub fn lookup(&self, mesh: &HexMesh, fam: &Family, e: usize, shape: usize) -> Option<(usize, f64)> {
        let el = &mesh.elements[e];
        match classify_q(fam, shape) {
            QEntity::Edge { edge, index } => {
                let start = self.edge_start[el.edges[edge]]?;
                Some((start + index, q_edge_sign(index, el.edge_reversed[edge])))
            }
            QEntity::Face { face, comp, l2, bubble } => {
                let start = self.face_start[el.faces[face]]?;
                let (idx, sign) = q_face_canonical(self.order, el.face_orient[face], comp, l2, bubble);
                Some((start + idx, sign))
            }
            QEntity::Interior => None,
        }
    }
}

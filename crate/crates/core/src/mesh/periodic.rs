use super::Mesh;
use crate::error::{Error, Result};

/// Master/slave pairing of nodes on opposite edges of the unit RVE.
///
/// Right-edge nodes are slaved to the left-edge node at the same height,
/// top-edge nodes to the bottom-edge node at the same abscissa. The anchor
/// (bottom-left corner) has its fluctuation pinned to zero and the other
/// three corners are slaved to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeriodicPairing {
    /// `(slave, master)` pairs for non-corner boundary nodes.
    pub pairs: Vec<(usize, usize)>,
    pub anchor: usize,
    /// Bottom-right, top-right, top-left corners.
    pub corners: [usize; 3],
}

impl PeriodicPairing {
    /// Total number of slaved nodes, corners included.
    pub fn num_slaves(&self) -> usize {
        self.pairs.len() + 3
    }
}

fn find_corner(mesh: &Mesh, target: [f64; 2], tol: f64) -> Result<usize> {
    mesh.nodes
        .iter()
        .position(|x| (x[0] - target[0]).abs() <= tol && (x[1] - target[1]).abs() <= tol)
        .ok_or_else(|| Error::Mesh(format!("no mesh node at RVE corner ({}, {})", target[0], target[1])))
}

/// Pairs boundary nodes of a unit-square RVE mesh by coordinate matching.
pub fn periodic_pairs(mesh: &Mesh, tol: f64) -> Result<PeriodicPairing> {
    let anchor = find_corner(mesh, [0.0, 0.0], tol)?;
    let corners = [
        find_corner(mesh, [1.0, 0.0], tol)?,
        find_corner(mesh, [1.0, 1.0], tol)?,
        find_corner(mesh, [0.0, 1.0], tol)?,
    ];
    let on = |v: f64, t: f64| (v - t).abs() <= tol;
    let is_corner = |x: &[f64; 2]| (on(x[0], 0.0) || on(x[0], 1.0)) && (on(x[1], 0.0) || on(x[1], 1.0));

    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut bottom = Vec::new();
    let mut top = Vec::new();
    for (i, x) in mesh.nodes.iter().enumerate() {
        if is_corner(x) {
            continue;
        }
        if on(x[0], 0.0) {
            left.push(i);
        } else if on(x[0], 1.0) {
            right.push(i);
        }
        if on(x[1], 0.0) {
            bottom.push(i);
        } else if on(x[1], 1.0) {
            top.push(i);
        }
    }

    let mut pairs = Vec::with_capacity(right.len() + top.len());
    let mut match_side = |slaves: &[usize], masters: &[usize], axis: usize| -> Result<()> {
        let mut used = vec![false; masters.len()];
        for &s in slaves {
            let xs = mesh.nodes[s][axis];
            let found = masters
                .iter()
                .enumerate()
                .filter(|(k, _)| !used[*k])
                .find(|(_, &m)| (mesh.nodes[m][axis] - xs).abs() <= tol);
            match found {
                Some((k, &m)) => {
                    used[k] = true;
                    pairs.push((s, m));
                }
                None => {
                    let x = mesh.nodes[s];
                    return Err(Error::UnmatchedNode { node: s, x: x[0], y: x[1] });
                }
            }
        }
        if let Some(k) = used.iter().position(|u| !u) {
            let m = masters[k];
            let x = mesh.nodes[m];
            return Err(Error::UnmatchedNode { node: m, x: x[0], y: x[1] });
        }
        Ok(())
    };
    match_side(&right, &left, 1)?;
    match_side(&top, &bottom, 0)?;
    pairs.sort_unstable();
    Ok(PeriodicPairing { pairs, anchor, corners })
}

/// Map from mesh nodes to the independent (reduced) displacement unknowns.
///
/// Each node maps to a reduced node index, or to `None` when its value is
/// prescribed to zero. Reduced vectors store two components per reduced
/// node: `[u_x(0), u_y(0), u_x(1), ...]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DofMap {
    pub node_to_reduced: Vec<Option<usize>>,
    pub num_reduced_nodes: usize,
}

impl DofMap {
    /// Periodic fluctuation unknowns: slaves share their master's unknowns,
    /// the anchor and its three slaved corners are fixed.
    pub fn periodic(mesh: &Mesh, pairing: &PeriodicPairing) -> Self {
        let n = mesh.num_nodes();
        let mut master: Vec<Option<usize>> = (0..n).map(Some).collect();
        master[pairing.anchor] = None;
        for &c in &pairing.corners {
            master[c] = None;
        }
        for &(s, m) in &pairing.pairs {
            master[s] = Some(m);
        }
        let mut node_to_reduced = vec![None; n];
        let mut count = 0;
        for i in 0..n {
            if master[i] == Some(i) {
                node_to_reduced[i] = Some(count);
                count += 1;
            }
        }
        for i in 0..n {
            if let Some(m) = master[i] {
                if m != i {
                    node_to_reduced[i] = node_to_reduced[m];
                }
            }
        }
        DofMap { node_to_reduced, num_reduced_nodes: count }
    }

    /// Every node independent except the listed ones, which are fixed.
    pub fn with_fixed(num_nodes: usize, fixed: &[usize]) -> Self {
        let mut is_fixed = vec![false; num_nodes];
        for &f in fixed {
            is_fixed[f] = true;
        }
        let mut count = 0;
        let node_to_reduced = is_fixed
            .iter()
            .map(|&f| {
                if f {
                    None
                } else {
                    count += 1;
                    Some(count - 1)
                }
            })
            .collect();
        DofMap { node_to_reduced, num_reduced_nodes: count }
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.num_reduced_nodes
    }

    /// Reduced DOF index of component `c` of node `n`.
    #[inline]
    pub fn dof(&self, n: usize, c: usize) -> Option<usize> {
        self.node_to_reduced[n].map(|r| 2 * r + c)
    }

    /// Nodal field (one 2-vector per node) from a reduced vector.
    pub fn expand(&self, reduced: &[f64]) -> Vec<[f64; 2]> {
        self.node_to_reduced
            .iter()
            .map(|r| match r {
                Some(r) => [reduced[2 * r], reduced[2 * r + 1]],
                None => [0.0, 0.0],
            })
            .collect()
    }

    /// Transpose of [`DofMap::expand`]: sums nodal contributions into reduced slots.
    pub fn restrict_sum(&self, nodal: &[[f64; 2]]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_dofs()];
        for (n, r) in self.node_to_reduced.iter().enumerate() {
            if let Some(r) = r {
                out[2 * r] += nodal[n][0];
                out[2 * r + 1] += nodal[n][1];
            }
        }
        out
    }
}

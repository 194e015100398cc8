//! Pointwise unitary frames from a Cholesky factorization of the metric.
//!
//! At each grid point the metric matrix `H = L L^H` (L lower triangular)
//! yields a frame in which the metric becomes the identity. Tensors are
//! re-expressed in that frame by contracting every holomorphic lower slot
//! with `P = L^{-1}`, every antiholomorphic lower slot with `conj(P)`, and
//! upper slots with the inverse-transpose factors. Index sums written for a
//! unitary frame then apply literally, with no metric factors.

use crate::error::{HkError, Result};
use crate::geometry::{MetricField, SlotKind, TensorField};
use crate::spectral::C64;

/// Per-point frame factors. Matrices are stored row-major as
/// `[m00, m01, m10, m11]`; only `m00` is used when n = 1.
#[derive(Debug, Clone)]
pub struct Frame {
    pub n: usize,
    npts: usize,
    chol: Vec<[C64; 4]>,
    inv_chol: Vec<[C64; 4]>,
}

impl Frame {
    /// Builds the frame of a positive-definite metric.
    pub fn new(g: &MetricField) -> Result<Frame> {
        let n = g.grid().n;
        let npts = g.grid().num_points();
        let mut chol = vec![[C64::new(0.0, 0.0); 4]; npts];
        let mut inv_chol = vec![[C64::new(0.0, 0.0); 4]; npts];
        match n {
            1 => {
                let h00 = &g.hermitian.comp(0, 0).data;
                for p in 0..npts {
                    let l = h00[p].re.sqrt();
                    chol[p][0] = C64::new(l, 0.0);
                    inv_chol[p][0] = C64::new(1.0 / l, 0.0);
                }
            }
            2 => {
                let h00 = &g.hermitian.comp(0, 0).data;
                let h10 = &g.hermitian.comp(1, 0).data;
                let h11 = &g.hermitian.comp(1, 1).data;
                for p in 0..npts {
                    let l00 = h00[p].re.sqrt();
                    let l10 = h10[p] / l00;
                    let s = h11[p].re - l10.norm_sqr();
                    if s <= 0.0 {
                        return Err(HkError::MetricDegenerate {
                            t: 0.0,
                            location: p,
                            min_eig: s,
                        });
                    }
                    let l11 = s.sqrt();
                    chol[p] = [
                        C64::new(l00, 0.0),
                        C64::new(0.0, 0.0),
                        l10,
                        C64::new(l11, 0.0),
                    ];
                    inv_chol[p] = [
                        C64::new(1.0 / l00, 0.0),
                        C64::new(0.0, 0.0),
                        -l10 / (l00 * l11),
                        C64::new(1.0 / l11, 0.0),
                    ];
                }
            }
            _ => unreachable!(),
        }
        Ok(Frame {
            n,
            npts,
            chol,
            inv_chol,
        })
    }

    fn slot_matrix(&self, kind: SlotKind, p: usize, row: usize, col: usize) -> C64 {
        let l = &self.chol[p];
        let pm = &self.inv_chol[p];
        match kind {
            // lower holomorphic: P[row][col]
            SlotKind::HolLower => pm[row * 2 + col],
            // lower antiholomorphic: conj(P)[row][col]
            SlotKind::AHolLower => pm[row * 2 + col].conj(),
            // upper holomorphic: (L^T)[row][col] = L[col][row]
            SlotKind::HolUpper => l[col * 2 + row],
            // upper antiholomorphic: conj(L^T)
            SlotKind::AHolUpper => l[col * 2 + row].conj(),
        }
    }

    /// Re-expresses a tensor in the unitary frame.
    pub fn transform(&self, t: &TensorField) -> TensorField {
        let n = self.n;
        let mut current = t.clone();
        for slot in 0..t.rank() {
            let kind = current.sig[slot];
            let mut out = current.clone();
            let ncomp = current.comps.len();
            for c in 0..ncomp {
                let idx = current.comp_decompose(c);
                let row = idx[slot];
                let data = &mut out.comps[c].data;
                for p in 0..self.npts {
                    let mut acc = C64::new(0.0, 0.0);
                    for col in 0..n {
                        let mut src = idx.clone();
                        src[slot] = col;
                        let v = current.comps[current.comp_index(&src)].data[p];
                        acc += self.slot_matrix(kind, p, row, col) * v;
                    }
                    data[p] = acc;
                }
            }
            current = out;
        }
        current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{HermitianField, MetricField};
    use crate::spectral::{Grid, ScalarField};
    use std::f64::consts::PI;

    fn curved_2d() -> MetricField {
        let g = Grid::new(2, 12, 1.0).unwrap();
        let phi = ScalarField::from_fn(&g, |x| {
            C64::new(
                3e-3 * (2.0 * PI * x[0]).cos() + 2e-3 * (2.0 * PI * (x[2] + x[3])).sin(),
                0.0,
            )
        });
        MetricField::from_potential(&MetricField::flat(&g).unwrap(), &phi).unwrap()
    }

    #[test]
    fn metric_becomes_identity() {
        let m = curved_2d();
        let frame = Frame::new(&m).unwrap();
        let ghat = frame.transform(&m.hermitian.as_tensor());
        let n = 2;
        for a in 0..n {
            for b in 0..n {
                let expect = if a == b { 1.0 } else { 0.0 };
                for v in &ghat.comps[a * n + b].data {
                    assert!((v - C64::new(expect, 0.0)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn inverse_metric_becomes_identity() {
        let m = curved_2d();
        let frame = Frame::new(&m).unwrap();
        let vt = TensorField::new(
            m.grid(),
            vec![SlotKind::HolUpper, SlotKind::AHolUpper],
            m.inv.clone(),
        )
        .unwrap();
        let vhat = frame.transform(&vt);
        for a in 0..2 {
            for b in 0..2 {
                let expect = if a == b { 1.0 } else { 0.0 };
                for v in &vhat.comps[a * 2 + b].data {
                    assert!((v - C64::new(expect, 0.0)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scalar_curvature_agrees_between_frame_and_coordinates() {
        // The plain trace of the framed Ricci tensor is the scalar
        // curvature computed with explicit inverse-metric factors.
        let m = curved_2d();
        let frame = Frame::new(&m).unwrap();
        let ric = m.ricci().unwrap();
        let r_coord = m.scalar_curvature(&ric).unwrap();
        let ric_hat = frame.transform(&ric.as_tensor());
        let r_frame = ric_hat.comps[0].add(&ric_hat.comps[3]);
        assert!(r_frame.sub(&r_coord).max_abs() < 1e-12);
    }

    #[test]
    fn frame_norm_matches_metric_contraction() {
        // |A|^2 computed with explicit inverse-metric factors equals the
        // plain component sum in the frame.
        let m = curved_2d();
        let frame = Frame::new(&m).unwrap();
        let g = m.grid().clone();
        let mut comps = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                comps.push(ScalarField::from_fn(&g, |x| {
                    C64::new(
                        0.3 * (2.0 * PI * (x[0] + a as f64 * x[2])).cos(),
                        if a != b {
                            0.1 * (2.0 * PI * x[1]).sin()
                        } else {
                            0.0
                        },
                    )
                }));
            }
        }
        // Hermitize: A[b][a] = conj(A[a][b]).
        let a01 = comps[1].clone();
        comps[2] = a01.map(|v| v.conj());
        let af = HermitianField::from_comps(&g, comps).unwrap();

        let ahat = frame.transform(&af.as_tensor());
        for p in 0..g.num_points() {
            let mut frame_norm = 0.0;
            for c in 0..4 {
                frame_norm += ahat.comps[c].data[p].norm_sqr();
            }
            // Coordinates: |A|^2 = sum V[a][c] V[d][b] A[a][b] conj(A[c][d]).
            let mut coord_norm = C64::new(0.0, 0.0);
            for a in 0..2 {
                for b in 0..2 {
                    for c in 0..2 {
                        for d in 0..2 {
                            coord_norm += m.inv_comp(a, c).data[p]
                                * m.inv_comp(d, b).data[p]
                                * af.comp(a, b).data[p]
                                * af.comp(c, d).data[p].conj();
                        }
                    }
                }
            }
            assert!((coord_norm.re - frame_norm).abs() < 1e-12);
            assert!(coord_norm.im.abs() < 1e-12);
        }
    }
}

//! Metric-level geometry on the flat torus: inverse and determinant,
//! Christoffel symbols, curvature tensors, volume data, the scalar
//! potential of the Ricci form, and Laplacians.
//!
//! Conventions, fixed once for the whole crate:
//!
//! ```text
//! H[a][b]   = g_{a bbar}            (Hermitian matrix per point)
//! V[a][b]   = g^{a bbar}            (defined by sum_b V[a][b] H[c][b] = delta_ac)
//! Gamma[k][i][j] = sum_l V[k][l] * d/dz^j H[i][l]
//! Riem[i][j][k][l] = -d2 H[i][j] / dz^k dzbar^l
//!                    + sum_{p,q} V[p][q] (d/dz^k H[i][q]) (d/dzbar^l H[p][j])
//! Ric[i][j] = -d2 log det H / dz^i dzbar^j      (primary route)
//!           = sum_{k,l} V[k][l] Riem[i][j][k][l] (trace route, cross-checked)
//! R = sum_{i,j} V[i][j] Ric[i][j]
//! ```
//!
//! The volume density in the fixed real coordinates is `det H`; only
//! ratios and vanishing integrals are ever asserted, so the constant
//! Jacobian between the complex and real volume elements drops out.

pub mod tensor;

use std::sync::Arc;

use crate::error::{HkError, Result, PD_FLOOR};
use crate::spectral::{Grid, ScalarField, C64};

pub use tensor::{SlotKind, TensorField};

/// Mixed second derivative d/dz^a then d/dzbar^b, the one operator used by
/// every curvature formula (composition of first derivatives, not a
/// squared-wavenumber multiplier).
pub fn d_dz_dzbar(f: &ScalarField, a: usize, b: usize) -> Result<ScalarField> {
    f.d_dz(a)?.d_dzbar(b)
}

/// Rank-(1,1) Hermitian tensor field `T_{a bbar}`, stored as n^2 component
/// fields with `comp(a, b) = T_{a bbar}`.
#[derive(Debug, Clone)]
pub struct HermitianField {
    pub grid: Arc<Grid>,
    pub comps: Vec<ScalarField>,
}

impl HermitianField {
    pub fn zeros(grid: &Arc<Grid>) -> HermitianField {
        HermitianField {
            grid: grid.clone(),
            comps: (0..grid.n * grid.n)
                .map(|_| ScalarField::zeros(grid))
                .collect(),
        }
    }

    /// Identity components: the flat metric.
    pub fn identity(grid: &Arc<Grid>) -> HermitianField {
        let mut h = HermitianField::zeros(grid);
        for a in 0..grid.n {
            h.comps[a * grid.n + a] = ScalarField::constant(grid, C64::new(1.0, 0.0));
        }
        h
    }

    pub fn from_comps(grid: &Arc<Grid>, comps: Vec<ScalarField>) -> Result<HermitianField> {
        if comps.len() != grid.n * grid.n {
            return Err(HkError::ShapeMismatch(format!(
                "hermitian field needs {} components, got {}",
                grid.n * grid.n,
                comps.len()
            )));
        }
        Ok(HermitianField {
            grid: grid.clone(),
            comps,
        })
    }

    pub fn comp(&self, a: usize, b: usize) -> &ScalarField {
        &self.comps[a * self.grid.n + b]
    }

    /// Complex Hessian `d_a d_bbar phi` of a real potential, Hermitian by
    /// construction (diagonal entries realized, lower triangle mirrored).
    /// The spatial mean is removed first; the Hessian kills constants, and
    /// a large zero mode would otherwise leak rounding noise into every
    /// derivative.
    pub fn potential_hessian(phi: &ScalarField) -> Result<HermitianField> {
        let grid = &phi.grid;
        let n = grid.n;
        let mean = phi.mean();
        let phi = phi.map(|v| v - mean);
        let phi = &phi;
        let mut comps = vec![ScalarField::zeros(grid); n * n];
        for a in 0..n {
            let diag = d_dz_dzbar(phi, a, a)?;
            comps[a * n + a] = diag.map(|v| C64::new(v.re, 0.0));
            for b in (a + 1)..n {
                let off = d_dz_dzbar(phi, a, b)?;
                comps[b * n + a] = off.map(|v| v.conj());
                comps[a * n + b] = off;
            }
        }
        HermitianField::from_comps(grid, comps)
    }

    pub fn add(&self, other: &HermitianField) -> HermitianField {
        HermitianField {
            grid: self.grid.clone(),
            comps: self
                .comps
                .iter()
                .zip(other.comps.iter())
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &HermitianField) -> HermitianField {
        HermitianField {
            grid: self.grid.clone(),
            comps: self
                .comps
                .iter()
                .zip(other.comps.iter())
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    pub fn scale(&self, s: C64) -> HermitianField {
        HermitianField {
            grid: self.grid.clone(),
            comps: self.comps.iter().map(|f| f.scale(s)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, f| m.max(f.max_abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(|f| f.is_finite())
    }

    /// Max deviation from Hermitian symmetry `T[a][b] = conj(T[b][a])`.
    pub fn hermitian_residual(&self) -> f64 {
        let n = self.grid.n;
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                let t = self.comp(a, b);
                let u = self.comp(b, a);
                for (x, y) in t.data.iter().zip(u.data.iter()) {
                    worst = worst.max((x - y.conj()).norm());
                }
            }
        }
        worst
    }

    pub fn as_tensor(&self) -> TensorField {
        TensorField::new(
            &self.grid,
            vec![SlotKind::HolLower, SlotKind::AHolLower],
            self.comps.clone(),
        )
        .expect("hermitian component count")
    }

    /// Spatial mean of every component (the zero mode vector).
    pub fn component_means(&self) -> Vec<C64> {
        self.comps.iter().map(|f| f.mean()).collect()
    }
}

/// Christoffel symbols `Gamma^k_{ij}` of a Kaehler metric; the conjugate
/// symbols are obtained by conjugation and are not stored.
#[derive(Debug, Clone)]
pub struct ChristoffelField {
    pub grid: Arc<Grid>,
    pub comps: Vec<ScalarField>,
}

impl ChristoffelField {
    pub fn comp(&self, k: usize, i: usize, j: usize) -> &ScalarField {
        let n = self.grid.n;
        &self.comps[(k * n + i) * n + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, f| m.max(f.max_abs()))
    }

    /// Max deviation from symmetry in the two lower indices.
    pub fn lower_symmetry_residual(&self) -> f64 {
        let n = self.grid.n;
        let mut worst = 0.0f64;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let a = self.comp(k, i, j);
                    let b = self.comp(k, j, i);
                    for (x, y) in a.data.iter().zip(b.data.iter()) {
                        worst = worst.max((x - y).norm());
                    }
                }
            }
        }
        worst
    }
}

/// Rank-(2,2) curvature tensor `R_{i jbar k lbar}`.
#[derive(Debug, Clone)]
pub struct CurvatureField {
    pub grid: Arc<Grid>,
    pub comps: Vec<ScalarField>,
}

impl CurvatureField {
    pub fn comp(&self, i: usize, j: usize, k: usize, l: usize) -> &ScalarField {
        let n = self.grid.n;
        &self.comps[((i * n + j) * n + k) * n + l]
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, f| m.max(f.max_abs()))
    }

    pub fn as_tensor(&self) -> TensorField {
        TensorField::new(
            &self.grid,
            vec![
                SlotKind::HolLower,
                SlotKind::AHolLower,
                SlotKind::HolLower,
                SlotKind::AHolLower,
            ],
            self.comps.clone(),
        )
        .expect("curvature component count")
    }

    /// Max violation of the pair-exchange and conjugation symmetries.
    pub fn symmetry_residual(&self) -> f64 {
        let n = self.grid.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let base = self.comp(i, j, k, l);
                        let swapped = self.comp(k, l, i, j);
                        let conjugated = self.comp(j, i, l, k);
                        for ((x, y), z) in base
                            .data
                            .iter()
                            .zip(swapped.data.iter())
                            .zip(conjugated.data.iter())
                        {
                            worst = worst.max((x - y).norm());
                            worst = worst.max((x - z.conj()).norm());
                        }
                    }
                }
            }
        }
        worst
    }
}

/// Positive-definite Kaehler metric with cached inverse, determinant and
/// pointwise eigenvalue floor.
#[derive(Debug, Clone)]
pub struct MetricField {
    pub hermitian: HermitianField,
    /// Inverse components `inv[a*n+b] = g^{a bbar}`.
    pub inv: Vec<ScalarField>,
    /// Real determinant field (also the volume density).
    pub det: ScalarField,
    pub min_eig: f64,
    pub min_eig_location: usize,
}

/// Pointwise inverse and determinant of a Hermitian field. Fails with
/// `MetricDegenerate` when |det| falls to the positive-definiteness floor.
pub fn inverse_det(h: &HermitianField) -> Result<(HermitianField, ScalarField)> {
    let grid = &h.grid;
    let n = grid.n;
    let npts = grid.num_points();
    let mut det = vec![C64::new(0.0, 0.0); npts];
    let mut inv = vec![vec![C64::new(0.0, 0.0); npts]; n * n];
    match n {
        1 => {
            let h00 = &h.comp(0, 0).data;
            for p in 0..npts {
                let d = h00[p].re;
                if d.abs() <= PD_FLOOR {
                    return Err(HkError::MetricDegenerate {
                        t: 0.0,
                        location: p,
                        min_eig: d,
                    });
                }
                det[p] = C64::new(d, 0.0);
                inv[0][p] = C64::new(1.0 / d, 0.0);
            }
        }
        2 => {
            let h00 = &h.comp(0, 0).data;
            let h01 = &h.comp(0, 1).data;
            let h10 = &h.comp(1, 0).data;
            let h11 = &h.comp(1, 1).data;
            for p in 0..npts {
                let d = (h00[p] * h11[p] - h01[p] * h10[p]).re;
                if d.abs() <= PD_FLOOR {
                    return Err(HkError::MetricDegenerate {
                        t: 0.0,
                        location: p,
                        min_eig: d,
                    });
                }
                det[p] = C64::new(d, 0.0);
                // V[a][b] = g^{a bbar} = (H^{-1})[b][a]
                inv[0][p] = h11[p] / d;
                inv[1][p] = -h10[p] / d;
                inv[2][p] = -h01[p] / d;
                inv[3][p] = h00[p] / d;
            }
        }
        _ => unreachable!("grid construction limits n"),
    }
    let det = ScalarField {
        grid: grid.clone(),
        data: det,
    };
    let inv = HermitianField::from_comps(
        grid,
        inv.into_iter()
            .map(|data| ScalarField {
                grid: grid.clone(),
                data,
            })
            .collect(),
    )?;
    Ok((inv, det))
}

impl MetricField {
    /// Validates positive definiteness and caches inverse + determinant.
    pub fn new(hermitian: HermitianField) -> Result<MetricField> {
        if !hermitian.is_finite() {
            return Err(HkError::NonFinite("metric components".into()));
        }
        let grid = hermitian.grid.clone();
        let n = grid.n;
        let npts = grid.num_points();
        // Closed-form minimum eigenvalue per point (n <= 2).
        let mut min_eig = f64::INFINITY;
        let mut min_loc = 0usize;
        match n {
            1 => {
                let h00 = &hermitian.comp(0, 0).data;
                for p in 0..npts {
                    if h00[p].re < min_eig {
                        min_eig = h00[p].re;
                        min_loc = p;
                    }
                }
            }
            2 => {
                let h00 = &hermitian.comp(0, 0).data;
                let h01 = &hermitian.comp(0, 1).data;
                let h10 = &hermitian.comp(1, 0).data;
                let h11 = &hermitian.comp(1, 1).data;
                for p in 0..npts {
                    let tr = h00[p].re + h11[p].re;
                    let d = (h00[p] * h11[p] - h01[p] * h10[p]).re;
                    let half = 0.5 * tr;
                    let disc = (half * half - d).max(0.0).sqrt();
                    let lam = half - disc;
                    if lam < min_eig {
                        min_eig = lam;
                        min_loc = p;
                    }
                }
            }
            _ => unreachable!(),
        }
        if min_eig <= PD_FLOOR {
            return Err(HkError::MetricDegenerate {
                t: 0.0,
                location: min_loc,
                min_eig,
            });
        }
        let (inv, det) = inverse_det(&hermitian)?;
        Ok(MetricField {
            hermitian,
            inv: inv.comps,
            det,
            min_eig,
            min_eig_location: min_loc,
        })
    }

    pub fn flat(grid: &Arc<Grid>) -> Result<MetricField> {
        MetricField::new(HermitianField::identity(grid))
    }

    /// Constant diagonal metric `diag(values)`.
    pub fn constant_diagonal(grid: &Arc<Grid>, values: &[f64]) -> Result<MetricField> {
        let mut h = HermitianField::zeros(grid);
        for a in 0..grid.n {
            h.comps[a * grid.n + a] = ScalarField::constant(grid, C64::new(values[a], 0.0));
        }
        MetricField::new(h)
    }

    /// One-dimensional conformal metric `g = exp(u)` from a real field u.
    pub fn conformal_from_log(u: &ScalarField) -> Result<MetricField> {
        if u.grid.n != 1 {
            return Err(HkError::ConfigInvalid(
                "conformal metrics are only Kaehler in complex dimension 1".into(),
            ));
        }
        if u.max_abs_im() > 1e-9 {
            return Err(HkError::ConfigInvalid(
                "conformal log-profile must be real".into(),
            ));
        }
        let h = HermitianField::from_comps(&u.grid, vec![u.map(|v| C64::new(v.re.exp(), 0.0))])?;
        MetricField::new(h)
    }

    /// `g = g0 + potential hessian(phi)`; Hermitian by construction and
    /// automatically Kaehler.
    pub fn from_potential(g0: &MetricField, phi: &ScalarField) -> Result<MetricField> {
        if phi.max_abs_im() > 1e-9 {
            return Err(HkError::ConfigInvalid(
                "potential must be real-valued".into(),
            ));
        }
        if !phi.same_grid(&ScalarField {
            grid: g0.grid().clone(),
            data: vec![],
        }) {
            // Cheap structural grid comparison through the public field.
            if phi.grid != g0.hermitian.grid {
                return Err(HkError::ShapeMismatch(
                    "potential and background metric grids differ".into(),
                ));
            }
        }
        let hess = HermitianField::potential_hessian(phi)?;
        MetricField::new(g0.hermitian.add(&hess))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.hermitian.grid
    }

    /// Inverse component `g^{a bbar}`.
    pub fn inv_comp(&self, a: usize, b: usize) -> &ScalarField {
        &self.inv[a * self.grid().n + b]
    }

    /// `Gamma^k_{ij} = sum_l V[k][l] dH[i][l]/dz^j`.
    pub fn christoffel(&self) -> Result<ChristoffelField> {
        let grid = self.grid().clone();
        let n = grid.n;
        // dh[j][i][l] = d/dz^j H[i][l]
        let mut dh = vec![Vec::new(); n];
        for j in 0..n {
            for i in 0..n {
                for l in 0..n {
                    dh[j].push(self.hermitian.comp(i, l).d_dz(j)?);
                }
            }
        }
        let mut comps = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut acc = ScalarField::zeros(&grid);
                    for l in 0..n {
                        acc = acc.add(&self.inv_comp(k, l).mul(&dh[j][i * n + l]));
                    }
                    comps.push(acc);
                }
            }
        }
        Ok(ChristoffelField { grid, comps })
    }

    /// Full curvature tensor from the local formula.
    pub fn riemann(&self) -> Result<CurvatureField> {
        let grid = self.grid().clone();
        let n = grid.n;
        // dz[k][i][q] = d/dz^k H[i][q], dzb[l][p][j] = d/dzbar^l H[p][j]
        let mut dz = vec![Vec::new(); n];
        let mut dzb = vec![Vec::new(); n];
        for a in 0..n {
            for i in 0..n {
                for q in 0..n {
                    dz[a].push(self.hermitian.comp(i, q).d_dz(a)?);
                    dzb[a].push(self.hermitian.comp(i, q).d_dzbar(a)?);
                }
            }
        }
        let mut comps = Vec::with_capacity(n * n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let mut acc = dz[k][i * n + j].d_dzbar(l)?.scale(C64::new(-1.0, 0.0));
                        for p in 0..n {
                            for q in 0..n {
                                let quad = self
                                    .inv_comp(p, q)
                                    .mul(&dz[k][i * n + q])
                                    .mul(&dzb[l][p * n + j]);
                                acc = acc.add(&quad);
                            }
                        }
                        comps.push(acc);
                    }
                }
            }
        }
        Ok(CurvatureField { grid, comps })
    }

    /// Ricci curvature through the log-determinant (primary route).
    pub fn ricci(&self) -> Result<HermitianField> {
        let grid = self.grid().clone();
        let n = grid.n;
        let s = self.det.map(|v| C64::new(v.re.ln(), 0.0));
        let mut comps = vec![ScalarField::zeros(&grid); n * n];
        for i in 0..n {
            let diag = d_dz_dzbar(&s, i, i)?.scale(C64::new(-1.0, 0.0));
            comps[i * n + i] = diag.map(|v| C64::new(v.re, 0.0));
            for j in (i + 1)..n {
                let off = d_dz_dzbar(&s, i, j)?.scale(C64::new(-1.0, 0.0));
                comps[j * n + i] = off.map(|v| v.conj());
                comps[i * n + j] = off;
            }
        }
        HermitianField::from_comps(&grid, comps)
    }

    /// Ricci curvature as the metric trace of the full curvature tensor.
    pub fn ricci_traced(&self, riem: &CurvatureField) -> Result<HermitianField> {
        let grid = self.grid().clone();
        let n = grid.n;
        let mut comps = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = ScalarField::zeros(&grid);
                for k in 0..n {
                    for l in 0..n {
                        acc = acc.add(&self.inv_comp(k, l).mul(riem.comp(i, j, k, l)));
                    }
                }
                comps.push(acc);
            }
        }
        HermitianField::from_comps(&grid, comps)
    }

    /// Scalar curvature `R = sum V[i][j] Ric[i][j]`; real up to roundoff.
    pub fn scalar_curvature(&self, ric: &HermitianField) -> Result<ScalarField> {
        if ric.grid != *self.grid() {
            return Err(HkError::ShapeMismatch(
                "ricci field not on the metric grid".into(),
            ));
        }
        let n = self.grid().n;
        let mut acc = ScalarField::zeros(self.grid());
        for i in 0..n {
            for j in 0..n {
                acc = acc.add(&self.inv_comp(i, j).mul(ric.comp(i, j)));
            }
        }
        Ok(acc)
    }

    /// Volume density, total volume, and average scalar curvature.
    pub fn volume_and_average(&self) -> Result<(ScalarField, f64, f64)> {
        let one = ScalarField::constant(self.grid(), C64::new(1.0, 0.0));
        let vol = self.det.integrate(&one)?.re;
        let ric = self.ricci()?;
        let r_field = self.scalar_curvature(&ric)?;
        let avg = r_field.integrate(&self.det)?.re / vol;
        Ok((self.det.clone(), vol, avg))
    }

    /// Mean-zero scalar potential of the Ricci form:
    /// `f = -(log det g - mean(log det g))`, so `d dbar f = Ric`.
    pub fn ricci_potential(&self) -> Result<ScalarField> {
        let s = self.det.map(|v| C64::new(v.re.ln(), 0.0));
        let mean = s.mean();
        Ok(s.map(|v| C64::new(-(v.re - mean.re), 0.0)))
    }

    /// Metric Laplacian on functions `sum V[a][b] d_a d_bbar f`.
    pub fn laplacian(&self, f: &ScalarField) -> Result<ScalarField> {
        if f.grid != *self.grid() {
            return Err(HkError::ShapeMismatch("laplacian input grid".into()));
        }
        let n = self.grid().n;
        let mut acc = ScalarField::zeros(self.grid());
        for a in 0..n {
            for b in 0..n {
                acc = acc.add(&self.inv_comp(a, b).mul(&d_dz_dzbar(f, a, b)?));
            }
        }
        Ok(acc)
    }

    /// Symmetrized rough Laplacian on tensors:
    /// `1/2 g^{b bbar'} (nabla_b nabla_bbar' + nabla_bbar' nabla_b) T`.
    pub fn laplacian_rough(
        &self,
        t: &TensorField,
        gamma: &ChristoffelField,
    ) -> Result<TensorField> {
        let r = t.rank();
        // nabla_ahol appends slot r, nabla_hol appends slot r+1.
        let a = t
            .covariant_deriv_ahol(gamma)?
            .covariant_deriv_hol(gamma)?
            .contract_inverse(r + 1, r, &self.inv)?;
        let b = t
            .covariant_deriv_hol(gamma)?
            .covariant_deriv_ahol(gamma)?
            .contract_inverse(r, r + 1, &self.inv)?;
        Ok(a.add(&b).scale(C64::new(0.5, 0.0)))
    }

    /// Max violation of `d_k H[i][j] = d_i H[k][j]` (closedness of the
    /// associated form). Trivially zero when n = 1.
    pub fn kahler_identity_residual(&self) -> Result<f64> {
        kahler_identity_residual(&self.hermitian)
    }
}

/// Kaehler identity residual of a raw Hermitian field.
pub fn kahler_identity_residual(h: &HermitianField) -> Result<f64> {
    let n = h.grid.n;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            for k in (i + 1)..n {
                let a = h.comp(i, j).d_dz(k)?;
                let b = h.comp(k, j).d_dz(i)?;
                for (x, y) in a.data.iter().zip(b.data.iter()) {
                    worst = worst.max((x - y).norm());
                }
            }
        }
    }
    Ok(worst)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const PI2: f64 = PI * PI;

    #[test]
    fn potential_examples() {
        let flat = m_flat();
        // Zero perturbation returns the flat metric.
        let g = MetricField::from_potential(&flat, &ScalarField::zeros(flat.grid())).unwrap();
        assert!((g.hermitian.comp(0, 0).data[0].re - 1.0).abs() < 1e-15);

        // phi = 0.01 cos(2 pi x): g = 1 - 0.01 pi^2 cos(2 pi x).
        let gp = m_pert(0.01);
        let at0 = gp.hermitian.comp(0, 0).data[0].re;
        assert!((at0 - (1.0 - 0.01 * PI2)).abs() < 1e-12);

        // phi = 0.2 cos(2 pi x) dips negative: degenerate.
        let g64 = grid_1d(64);
        let phi = ScalarField::from_fn(&g64, |x| C64::new(0.2 * (2.0 * PI * x[0]).cos(), 0.0));
        assert!(matches!(
            MetricField::from_potential(&m_flat(), &phi),
            Err(HkError::MetricDegenerate { .. })
        ));
    }

    #[test]
    fn inverse_det_examples() {
        let flat = m_flat();
        assert!((flat.inv_comp(0, 0).data[0].re - 1.0).abs() < 1e-15);
        assert!((flat.det.data[0].re - 1.0).abs() < 1e-15);

        let ge = m_exp();
        let inv0 = ge.inv_comp(0, 0).data[0].re;
        let det0 = ge.det.data[0].re;
        assert!((inv0 - (-0.1f64).exp()).abs() < 1e-12);
        assert!((det0 - (0.1f64).exp()).abs() < 1e-12);

        let g2 = Grid::new(2, 8, 1.0).unwrap();
        let diag = MetricField::constant_diagonal(&g2, &[2.0, 1.0]).unwrap();
        assert!((diag.inv_comp(0, 0).data[0].re - 0.5).abs() < 1e-15);
        assert!((diag.inv_comp(1, 1).data[0].re - 1.0).abs() < 1e-15);
        assert!((diag.det.data[0].re - 2.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_times_metric_is_identity() {
        let g2 = Grid::new(2, 12, 1.0).unwrap();
        let phi = ScalarField::from_fn(&g2, |x| {
            C64::new(
                2e-3 * (2.0 * PI * x[0]).cos() + 1e-3 * (2.0 * PI * (x[2] + x[3])).sin(),
                0.0,
            )
        });
        for m in [
            m_exp(),
            MetricField::from_potential(&MetricField::flat(&g2).unwrap(), &phi).unwrap(),
        ] {
            let n = m.grid().n;
            let npts = m.grid().num_points();
            for a in 0..n {
                for c in 0..n {
                    for p in 0..npts {
                        let mut acc = C64::new(0.0, 0.0);
                        for b in 0..n {
                            acc += m.inv_comp(a, b).data[p] * m.hermitian.comp(c, b).data[p];
                        }
                        let expect = if a == c { 1.0 } else { 0.0 };
                        assert!((acc - C64::new(expect, 0.0)).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn christoffel_examples() {
        assert!(m_flat().christoffel().unwrap().max_abs() < 1e-14);

        // Conformal: Gamma = du/dz = -0.1 pi sin(2 pi x); at x = 1/4 this is -0.1 pi.
        let ge = m_exp();
        let gamma = ge.christoffel().unwrap();
        let g = ge.grid();
        let at_q = gamma.comp(0, 0, 0).data[idx_at_x(g, 0.25)];
        assert!((at_q.re + 0.1 * PI).abs() < 1e-11, "got {at_q}");
        assert!(at_q.im.abs() < 1e-12);

        // Perturbed: Gamma = (0.01 pi^3 sin(2 pi x)) / g; g = 1 at x = 1/4.
        let gp = m_pert(0.01);
        let gammap = gp.christoffel().unwrap();
        let at_q = gammap.comp(0, 0, 0).data[idx_at_x(gp.grid(), 0.25)];
        assert!((at_q.re - 0.01 * PI.powi(3)).abs() < 1e-11);
    }

    #[test]
    fn riemann_examples() {
        assert!(m_flat().riemann().unwrap().max_abs() < 1e-13);

        // Conformal oracle: R_{1 1bar 1 1bar} = e^u * 0.1 pi^2 cos(2 pi x).
        let ge = m_exp();
        let riem = ge.riemann().unwrap();
        let g = ge.grid();
        for p in 0..g.num_points() {
            let x = g.coords(p)[0];
            let u = 0.1 * (2.0 * PI * x).cos();
            let expect = u.exp() * 0.1 * PI2 * (2.0 * PI * x).cos();
            assert!((riem.comp(0, 0, 0, 0).data[p] - C64::new(expect, 0.0)).norm() < 1e-11);
        }

        let g2 = Grid::new(2, 8, 1.0).unwrap();
        let diag = MetricField::constant_diagonal(&g2, &[2.0, 1.0]).unwrap();
        assert!(diag.riemann().unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn ricci_examples() {
        assert!(m_flat().ricci().unwrap().max_abs() < 1e-13);

        let ge = m_exp();
        let ric = ge.ricci().unwrap();
        let at0 = ric.comp(0, 0).data[0].re;
        assert!((at0 - 0.1 * PI2).abs() < 1e-11);

        // Trace route agrees with the log-det route.
        let gp = m_pert(0.01);
        let a = gp.ricci().unwrap();
        let b = gp.ricci_traced(&gp.riemann().unwrap()).unwrap();
        assert!(a.sub(&b).max_abs() < 1e-11);
    }

    #[test]
    fn scalar_curvature_examples() {
        let flat = m_flat();
        let r = flat.scalar_curvature(&flat.ricci().unwrap()).unwrap();
        assert!(r.max_abs() < 1e-13);

        let ge = m_exp();
        let r = ge.scalar_curvature(&ge.ricci().unwrap()).unwrap();
        let expect = (-0.1f64).exp() * 0.1 * PI2;
        assert!((r.data[0].re - expect).abs() < 1e-11);
        assert!(r.max_abs_im() < 1e-12);

        // Total curvature integral vanishes on the torus for every fixture.
        for m in [m_flat(), m_exp(), m_pert(0.01)] {
            let r = m.scalar_curvature(&m.ricci().unwrap()).unwrap();
            let total = r.integrate(&m.det).unwrap();
            assert!(total.norm() < 1e-10, "integral {total}");
        }
    }

    #[test]
    fn volume_and_average_examples() {
        let (_, vol, avg) = m_flat().volume_and_average().unwrap();
        assert!((vol - 1.0).abs() < 1e-13 && avg.abs() < 1e-13);

        // Quadrature oracle for the conformal volume integral.
        let mq = 1 << 14;
        let mut oracle = 0.0;
        for j in 0..mq {
            let x = j as f64 / mq as f64;
            oracle += (0.1 * (2.0 * PI * x).cos()).exp();
        }
        oracle /= mq as f64;
        let (_, vol, avg) = m_exp().volume_and_average().unwrap();
        assert!((vol - oracle).abs() < 1e-12, "vol {vol} oracle {oracle}");
        assert!(avg.abs() < 1e-10);

        // Potential perturbations conserve volume exactly (zero-mean hessian).
        let (_, vol, avg) = m_pert(0.01).volume_and_average().unwrap();
        assert!((vol - 1.0).abs() < 1e-13);
        assert!(avg.abs() < 1e-10);
    }

    #[test]
    fn curvature_error_decays_spectrally_with_resolution() {
        // A strongly curved conformal profile: the curvature tensor mixes
        // derivatives of exp(u) with the pointwise inverse, so its error
        // against the closed form is resolution limited and collapses by
        // orders of magnitude from 16 to 32 points per axis. (The log-det
        // Ricci route is immune: log of exp(u) cancels pointwise.)
        let err_at = |np: usize| -> f64 {
            let g = Grid::new(1, np, 1.0).unwrap();
            let u = ScalarField::from_fn(&g, |x| C64::new(1.5 * (2.0 * PI * x[0]).cos(), 0.0));
            let m = MetricField::conformal_from_log(&u).unwrap();
            let riem = m.riemann().unwrap();
            let oracle = u
                .map(|v| C64::new(v.re.exp(), 0.0))
                .mul(&d_dz_dzbar(&u, 0, 0).unwrap())
                .scale(C64::new(-1.0, 0.0));
            riem.comps[0].sub(&oracle).max_abs()
        };
        let e16 = err_at(16);
        let e32 = err_at(32);
        let e64 = err_at(64);
        assert!(e16 > 1e-9, "coarse level should be visibly off ({e16:.3e})");
        assert!(e32 < 1e-4 * e16, "16 -> 32: {e16:.3e} -> {e32:.3e}");
        assert!(e64 < 1e-11, "floor by 64: {e64:.3e}");
    }

    #[test]
    fn ricci_potential_examples() {
        assert!(m_flat().ricci_potential().unwrap().max_abs() < 1e-13);

        let ge = m_exp();
        let f = ge.ricci_potential().unwrap();
        assert!((f.data[0].re + 0.1).abs() < 1e-12);

        // d dbar f reproduces the Ricci tensor.
        let gp = m_pert(0.01);
        let f = gp.ricci_potential().unwrap();
        let hess = HermitianField::potential_hessian(&f).unwrap();
        let ric = gp.ricci().unwrap();
        assert!(hess.sub(&ric).max_abs() < 1e-11);
    }

    #[test]
    fn laplacian_examples() {
        let g64 = grid_1d(64);
        let c = ScalarField::from_fn(&g64, |x| C64::new((2.0 * PI * x[0]).cos(), 0.0));
        let flat = m_flat();
        let lap = flat.laplacian(&c).unwrap();
        assert!((lap.data[0].re + PI2).abs() < 1e-11);

        let one = ScalarField::constant(&g64, C64::new(3.0, 0.0));
        assert!(flat.laplacian(&one).unwrap().max_abs() < 1e-13);

        let ge = m_exp();
        let lap = ge.laplacian(&c).unwrap();
        assert!((lap.data[0].re + (-0.1f64).exp() * PI2).abs() < 1e-11);
    }

    #[test]
    fn covariant_derivative_examples() {
        let ge = m_exp();
        let gamma = ge.christoffel().unwrap();

        // Metric compatibility: nabla g = 0.
        let grad_g = ge
            .hermitian
            .as_tensor()
            .covariant_deriv_hol(&gamma)
            .unwrap();
        assert!(grad_g.max_abs() < 1e-11);

        // nabla_1 Ric at x = 1/4: the connection term vanishes there,
        // leaving d/dz Ric = -0.1 pi^3 sin(2 pi x).
        let ric = ge.ricci().unwrap();
        let grad_ric = ric.as_tensor().covariant_deriv_hol(&gamma).unwrap();
        let v = grad_ric.comps[0].data[idx_at_x(ge.grid(), 0.25)];
        assert!((v.re + 0.1 * PI.powi(3)).abs() < 1e-10, "got {v}");
    }

    #[test]
    fn rough_laplacian_examples() {
        let ge = m_exp();
        let gamma = ge.christoffel().unwrap();

        // Zero tensor maps to zero.
        let z = TensorField::zeros(ge.grid(), vec![SlotKind::HolLower, SlotKind::AHolLower]);
        assert!(ge.laplacian_rough(&z, &gamma).unwrap().max_abs() < 1e-14);

        // On scalars the rough Laplacian reduces to the function Laplacian.
        let f = ScalarField::from_fn(ge.grid(), |x| {
            C64::new((2.0 * PI * x[0]).sin() + 0.5 * (2.0 * PI * x[1]).cos(), 0.0)
        });
        let scalar = TensorField::new(ge.grid(), vec![], vec![f.clone()]).unwrap();
        let a = ge.laplacian_rough(&scalar, &gamma).unwrap();
        let b = ge.laplacian(&f).unwrap();
        assert!(a.comps[0].sub(&b).max_abs() < 1e-12);

        // Composition cross-check on the Ricci tensor.
        let ric = ge.ricci().unwrap().as_tensor();
        let direct = ge.laplacian_rough(&ric, &gamma).unwrap();
        let first = ric
            .covariant_deriv_ahol(&gamma)
            .unwrap()
            .covariant_deriv_hol(&gamma)
            .unwrap()
            .contract_inverse(3, 2, &ge.inv)
            .unwrap();
        let second = ric
            .covariant_deriv_hol(&gamma)
            .unwrap()
            .covariant_deriv_ahol(&gamma)
            .unwrap()
            .contract_inverse(2, 3, &ge.inv)
            .unwrap();
        let manual = first.add(&second).scale(C64::new(0.5, 0.0));
        assert!(direct.sub(&manual).max_abs() < 1e-11);
    }

    #[test]
    fn christoffel_lower_symmetry() {
        let g2 = Grid::new(2, 12, 1.0).unwrap();
        let phi = ScalarField::from_fn(&g2, |x| {
            C64::new(
                2e-3 * (2.0 * PI * x[0]).cos() + 1e-3 * (2.0 * PI * (x[2] + x[1])).cos(),
                0.0,
            )
        });
        let m = MetricField::from_potential(&MetricField::flat(&g2).unwrap(), &phi).unwrap();
        assert!(m.christoffel().unwrap().lower_symmetry_residual() < 1e-12);
        assert!(m.kahler_identity_residual().unwrap() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn curvature_symmetries_random_potentials(
            a1 in -1e-3f64..1e-3, a2 in -1e-3f64..1e-3
        ) {
            // Wavevector components stay at most 1 and amplitudes small, so
            // repeated products fold past the Nyquist mode only at an order
            // where the tail is below the cross-assembly tolerance.
            let g2 = Grid::new(2, 16, 1.0).unwrap();
            let phi = ScalarField::from_fn(&g2, |x| C64::new(
                a1 * (2.0*PI*x[0]).cos()
                    + a2 * (2.0*PI*(x[2] + x[3])).cos()
                    + 0.5*a2 * (2.0*PI*(x[0]+x[1]+x[2])).sin(),
                0.0,
            ));
            let m = MetricField::from_potential(&MetricField::flat(&g2).unwrap(), &phi).unwrap();
            let riem = m.riemann().unwrap();
            prop_assert!(riem.symmetry_residual() < 1e-11);
            // Trace route consistency.
            let diff = m.ricci().unwrap().sub(&m.ricci_traced(&riem).unwrap()).max_abs();
            prop_assert!(diff < 1e-11);
            // Vanishing total curvature.
            let r = m.scalar_curvature(&m.ricci().unwrap()).unwrap();
            prop_assert!(r.integrate(&m.det).unwrap().norm() < 1e-10);
        }

        #[test]
        fn conformal_scalar_curvature_oracle(
            b1 in -0.4f64..0.4, b2 in -0.2f64..0.2, k in 1i64..4
        ) {
            // For g = exp(u) in one complex dimension the scalar curvature is
            // -exp(-u) * d dbar u, for arbitrary band-limited u.
            let g = grid_1d(64);
            let u = ScalarField::from_fn(&g, |x| C64::new(
                b1 * (2.0*PI*k as f64*x[0]).cos() + b2 * (2.0*PI*(x[0]+3.0*x[1])).sin(),
                0.0,
            ));
            let m = MetricField::conformal_from_log(&u).unwrap();
            let r = m.scalar_curvature(&m.ricci().unwrap()).unwrap();
            let ddbar_u = d_dz_dzbar(&u, 0, 0).unwrap();
            let oracle = u.map(|v| C64::new((-v.re).exp(), 0.0))
                .mul(&ddbar_u)
                .scale(C64::new(-1.0, 0.0));
            prop_assert!(r.sub(&oracle).max_abs() < 1e-11);
        }
    }
}

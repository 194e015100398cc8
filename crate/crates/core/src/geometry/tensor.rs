//! Generic tensor fields on the torus with typed index slots.
//!
//! A slot is either a holomorphic lower index, an antiholomorphic lower
//! index, or a holomorphic/antiholomorphic upper index. Components are
//! stored per slot multi-index (row-major over slots), one [`ScalarField`]
//! each, so spectral derivatives apply component-wise.
//!
//! The covariant derivative appends the direction slot LAST:
//!
//! ```text
//! (nabla_hol T)[..., m]  = d/dz^m T[...]    - Gamma corrections
//! (nabla_ahol T)[..., m] = d/dzbar^m T[...] - conj(Gamma) corrections
//! ```
//!
//! A holomorphic connection coefficient acts with a minus sign on each
//! holomorphic lower slot and a plus sign on each holomorphic upper slot;
//! antiholomorphic lower slots are inert under the holomorphic derivative
//! and conversely.

use std::sync::Arc;

use crate::error::{HkError, Result};
use crate::spectral::{Grid, ScalarField, C64};

use super::ChristoffelField;

/// Index slot type of one tensor index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    HolLower,
    AHolLower,
    HolUpper,
    AHolUpper,
}

/// Largest supported rank; keeps intermediate storage bounded.
pub const MAX_RANK: usize = 6;

/// Tensor field with a declared index signature.
#[derive(Debug, Clone)]
pub struct TensorField {
    pub grid: Arc<Grid>,
    pub sig: Vec<SlotKind>,
    /// One field per component, row-major over the slot multi-index.
    pub comps: Vec<ScalarField>,
}

impl TensorField {
    pub fn new(
        grid: &Arc<Grid>,
        sig: Vec<SlotKind>,
        comps: Vec<ScalarField>,
    ) -> Result<TensorField> {
        if sig.len() > MAX_RANK {
            return Err(HkError::ConfigInvalid(format!(
                "tensor rank {} exceeds supported maximum {MAX_RANK}",
                sig.len()
            )));
        }
        let expect = grid.n.pow(sig.len() as u32);
        if comps.len() != expect {
            return Err(HkError::ShapeMismatch(format!(
                "tensor with {} slots needs {expect} components, got {}",
                sig.len(),
                comps.len()
            )));
        }
        Ok(TensorField {
            grid: grid.clone(),
            sig,
            comps,
        })
    }

    pub fn zeros(grid: &Arc<Grid>, sig: Vec<SlotKind>) -> TensorField {
        let ncomp = grid.n.pow(sig.len() as u32);
        TensorField {
            grid: grid.clone(),
            sig,
            comps: (0..ncomp).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn rank(&self) -> usize {
        self.sig.len()
    }

    /// Flat component index from per-slot indices.
    pub fn comp_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.grid.n + i)
    }

    /// Per-slot indices of a flat component index.
    pub fn comp_decompose(&self, mut c: usize) -> Vec<usize> {
        let mut out = vec![0; self.rank()];
        for s in (0..self.rank()).rev() {
            out[s] = c % self.grid.n;
            c /= self.grid.n;
        }
        out
    }

    pub fn comp(&self, idx: &[usize]) -> &ScalarField {
        &self.comps[self.comp_index(idx)]
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, f| m.max(f.max_abs()))
    }

    pub fn add(&self, other: &TensorField) -> TensorField {
        TensorField {
            grid: self.grid.clone(),
            sig: self.sig.clone(),
            comps: self
                .comps
                .iter()
                .zip(other.comps.iter())
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &TensorField) -> TensorField {
        TensorField {
            grid: self.grid.clone(),
            sig: self.sig.clone(),
            comps: self
                .comps
                .iter()
                .zip(other.comps.iter())
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    pub fn scale(&self, s: C64) -> TensorField {
        TensorField {
            grid: self.grid.clone(),
            sig: self.sig.clone(),
            comps: self.comps.iter().map(|f| f.scale(s)).collect(),
        }
    }

    /// Covariant derivative along holomorphic directions; the direction
    /// slot is appended last as a holomorphic lower index.
    pub fn covariant_deriv_hol(&self, gamma: &ChristoffelField) -> Result<TensorField> {
        self.check_signature()?;
        let n = self.grid.n;
        let mut sig = self.sig.clone();
        sig.push(SlotKind::HolLower);
        if sig.len() > MAX_RANK {
            return Err(HkError::ConfigInvalid(
                "covariant derivative would exceed supported tensor rank".into(),
            ));
        }
        let mut comps = Vec::with_capacity(self.comps.len() * n);
        for c in 0..self.comps.len() {
            let idx = self.comp_decompose(c);
            for m in 0..n {
                let mut out = self.comps[c].d_dz(m)?;
                for (slot, kind) in self.sig.iter().enumerate() {
                    match kind {
                        SlotKind::HolLower => {
                            // - Gamma^e_{m, idx[slot]} T[idx: slot -> e]
                            for e in 0..n {
                                let mut swapped = idx.clone();
                                swapped[slot] = e;
                                let term = gamma
                                    .comp(e, m, idx[slot])
                                    .mul(&self.comps[self.comp_index(&swapped)]);
                                out = out.sub(&term);
                            }
                        }
                        SlotKind::HolUpper => {
                            // + Gamma^{idx[slot]}_{m, e} T[idx: slot -> e]
                            for e in 0..n {
                                let mut swapped = idx.clone();
                                swapped[slot] = e;
                                let term = gamma
                                    .comp(idx[slot], m, e)
                                    .mul(&self.comps[self.comp_index(&swapped)]);
                                out = out.add(&term);
                            }
                        }
                        SlotKind::AHolLower | SlotKind::AHolUpper => {}
                    }
                }
                comps.push(out);
            }
        }
        TensorField::new(&self.grid, sig, comps)
    }

    /// Covariant derivative along antiholomorphic directions; the direction
    /// slot is appended last as an antiholomorphic lower index.
    pub fn covariant_deriv_ahol(&self, gamma: &ChristoffelField) -> Result<TensorField> {
        self.check_signature()?;
        let n = self.grid.n;
        let mut sig = self.sig.clone();
        sig.push(SlotKind::AHolLower);
        if sig.len() > MAX_RANK {
            return Err(HkError::ConfigInvalid(
                "covariant derivative would exceed supported tensor rank".into(),
            ));
        }
        let mut comps = Vec::with_capacity(self.comps.len() * n);
        for c in 0..self.comps.len() {
            let idx = self.comp_decompose(c);
            for m in 0..n {
                let mut out = self.comps[c].d_dzbar(m)?;
                for (slot, kind) in self.sig.iter().enumerate() {
                    if *kind == SlotKind::AHolLower {
                        // - conj(Gamma^e_{m, idx[slot]}) T[idx: slot -> e]
                        for e in 0..n {
                            let mut swapped = idx.clone();
                            swapped[slot] = e;
                            let term = gamma
                                .comp(e, m, idx[slot])
                                .map(|v| v.conj())
                                .mul(&self.comps[self.comp_index(&swapped)]);
                            out = out.sub(&term);
                        }
                    }
                }
                comps.push(out);
            }
        }
        TensorField::new(&self.grid, sig, comps)
    }

    fn check_signature(&self) -> Result<()> {
        if self.sig.contains(&SlotKind::AHolUpper) {
            return Err(HkError::ConfigInvalid(
                "covariant derivative of antiholomorphic upper slots is unsupported".into(),
            ));
        }
        Ok(())
    }

    /// Contracts a holomorphic lower slot with an antiholomorphic lower slot
    /// through the inverse metric `inv[a][b] = g^{a bbar}`.
    pub fn contract_inverse(
        &self,
        hol_slot: usize,
        ahol_slot: usize,
        inv: &[ScalarField],
    ) -> Result<TensorField> {
        let n = self.grid.n;
        if hol_slot >= self.rank()
            || ahol_slot >= self.rank()
            || hol_slot == ahol_slot
            || self.sig[hol_slot] != SlotKind::HolLower
            || self.sig[ahol_slot] != SlotKind::AHolLower
        {
            return Err(HkError::ConfigInvalid(
                "contraction slots must be a distinct (hol lower, ahol lower) pair".into(),
            ));
        }
        let keep: Vec<usize> = (0..self.rank())
            .filter(|s| *s != hol_slot && *s != ahol_slot)
            .collect();
        let sig: Vec<SlotKind> = keep.iter().map(|&s| self.sig[s]).collect();
        let ncomp = n.pow(sig.len() as u32);
        let mut comps = Vec::with_capacity(ncomp);
        for c in 0..ncomp {
            // Decode the kept multi-index, then sum over the bound pair.
            let mut kept_idx = vec![0; sig.len()];
            let mut cc = c;
            for s in (0..sig.len()).rev() {
                kept_idx[s] = cc % n;
                cc /= n;
            }
            let mut acc = ScalarField::zeros(&self.grid);
            for b in 0..n {
                for d in 0..n {
                    let mut full = vec![0; self.rank()];
                    for (pos, &s) in keep.iter().enumerate() {
                        full[s] = kept_idx[pos];
                    }
                    full[hol_slot] = b;
                    full[ahol_slot] = d;
                    acc = acc.add(&inv[b * n + d].mul(&self.comps[self.comp_index(&full)]));
                }
            }
            comps.push(acc);
        }
        TensorField::new(&self.grid, sig, comps)
    }
}

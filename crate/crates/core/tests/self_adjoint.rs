//! The regulariser part of the interior operator is symmetric in the
//! area-weighted inner product: for compactly supported φ, ψ,
//! Σ √g φ·Lψ = Σ √g ψ·Lφ up to discretisation error.

#![allow(clippy::needless_range_loop)]

use evflow::assembly::{assemble, row_kind, AssemblyMode, RowKind};
use evflow::geometry::GeometryAtlas;
use evflow::variational::{data_derivatives, el_coefficients_with, CoefficientForm, RegParams};
use evflow::{FrameField, Grid3, HeightField, ScalarField3};

fn bump(s: f64) -> f64 {
    // smooth, supported in (0.15, 0.85)
    let r = (s - 0.5) / 0.35;
    if r.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r * r)).exp() * std::f64::consts::E
    }
}

fn field(g: Grid3, k: f64) -> FrameField {
    let mut c = [vec![0.0; g.len()], vec![0.0; g.len()]];
    for idx in 0..g.len() {
        let (t, i, j) = g.unindex(idx);
        let [t, x, y] = g.coords(t, i, j);
        let b = bump(t) * bump(x) * bump(y);
        c[0][idx] = b * (k * x + 2.0 * y + t).sin();
        c[1][idx] = b * (x - k * y + 0.5 * t).cos();
    }
    FrameField::new(g, c).unwrap()
}

fn asymmetry(n: usize, form: CoefficientForm) -> f64 {
    let g = Grid3::new(n, n, n, 1.0 / (n - 1) as f64, 1.0 / (n - 1) as f64, 1.0 / (n - 1) as f64).unwrap();
    let z = HeightField::from_fn(g, |t, i, j| {
        let [t, x, y] = g.coords(t, i, j);
        0.4 * (1.0 + 0.5 * t) * (x * x - 0.7 * x * y + 0.3 * y * y) + 0.2 * t * y
    })
    .unwrap();
    // zero data: only the regulariser remains in the operator
    let f = ScalarField3::zeros(g);
    let atlas = GeometryAtlas::build(&z).unwrap();
    let reg = RegParams::new(0.6, 1.0).unwrap();
    let co = el_coefficients_with(&atlas, &data_derivatives(&f), reg, form).unwrap();
    let sys = assemble(&co, AssemblyMode::Spatiotemporal).unwrap();

    let (phi, psi) = (field(g, 3.0).to_unknowns(), field(g, -2.0).to_unknowns());
    let (lphi, lpsi) = (sys.matrix.matvec(&phi).unwrap(), sys.matrix.matvec(&psi).unwrap());
    let (mut s1, mut s2, mut scale) = (0.0, 0.0, 0.0);
    for idx in 0..g.len() {
        let (t, i, j) = g.unindex(idx);
        if row_kind(&g, t, i, j, true) != RowKind::Interior {
            continue;
        }
        let w = atlas.at(idx).sqrtdetg;
        for m in 0..2 {
            let r = 2 * idx + m;
            s1 += w * phi[r] * lpsi[r];
            s2 += w * psi[r] * lphi[r];
            scale += w * (phi[r] * lpsi[r]).abs();
        }
    }
    (s1 - s2).abs() / scale
}

#[test]
fn variational_form_is_self_adjoint() {
    let coarse = asymmetry(17, CoefficientForm::Variational);
    let fine = asymmetry(33, CoefficientForm::Variational);
    eprintln!("variational asymmetry: {coarse:.3e} -> {fine:.3e}");
    assert!(fine < 1e-2, "asymmetry {fine}");
    assert!(fine < coarse / 2.5, "asymmetry does not converge: {coarse} -> {fine}");
}

#[test]
fn non_symmetric_form_is_not_self_adjoint() {
    let coarse = asymmetry(17, CoefficientForm::NonSymmetric);
    let fine = asymmetry(33, CoefficientForm::NonSymmetric);
    let var = asymmetry(33, CoefficientForm::Variational);
    eprintln!("non-symmetric asymmetry: {coarse:.3e} -> {fine:.3e} (variational {var:.3e})");
    assert!(fine > 10.0 * var);
    assert!(fine > coarse / 2.0, "non-symmetric form unexpectedly converges");
}

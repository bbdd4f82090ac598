use std::sync::Arc;

use proptest::prelude::*;

use msfem::assembly::{assemble_stiffness, mean_coefficient};
use msfem::basis::build_ms_basis;
use msfem::cell::{solve_cell_problems, CellSolution};
use msfem::expansion::{error_norms, first_order_expansion, interpolate, ms_interpolant, NormContext};
use msfem::field::{FeField, SmoothFunction};
use msfem::mesh::{build_fine_submesh, regularity_report, DEFAULT_RHO_MIN};
use msfem::quadrature::DEFAULT_ORDER;
use msfem::study::{fit_rate, FitVariable};
use msfem::{BoundaryTag, CoefficientField, GridCoefficient, Mesh, Rect, SideTags, Sym2};

fn sym2() -> impl Strategy<Value = Sym2> {
    (0.3f64..3.0, -0.8f64..0.8, 0.3f64..3.0).prop_map(|(a, b, c)| Sym2([a, b * (a * c).sqrt(), c]))
}

fn grid_coefficient(n: usize) -> impl Strategy<Value = GridCoefficient> {
    prop::collection::vec(sym2(), n * n).prop_map(move |samples| {
        let text = format!(
            "{n} 0.1 5\n{}",
            samples.iter().map(|s| format!("{} {} {}\n", s.0[0], s.0[1], s.0[2])).collect::<String>()
        );
        GridCoefficient::parse(&text).unwrap()
    })
}

fn inverse(a: Sym2) -> Sym2 {
    let det = a.a11() * a.a22() - a.a12() * a.a12();
    Sym2([a.a22() / det, -a.a12() / det, a.a11() / det])
}

/// Arithmetic and harmonic means of the element-averaged tensors the cell
/// solver works with.
fn element_means(coef: &CoefficientField, n: usize) -> (Sym2, Sym2) {
    let cell = Mesh::structured(Rect::new(-0.5, -0.5, 0.5, 0.5), n, SideTags::uniform(BoundaryTag::Neumann)).unwrap();
    let mut arith = Sym2([0.0; 3]);
    let mut inv = Sym2([0.0; 3]);
    for t in 0..cell.triangle_count() {
        let a = mean_coefficient(coef, cell.corners(t), None, DEFAULT_ORDER);
        arith = arith + a * cell.area(t);
        inv = inv + inverse(a) * cell.area(t);
    }
    (arith, inverse(inv))
}

fn unit_grid(n: usize) -> Arc<Mesh> {
    Arc::new(Mesh::structured(Rect::UNIT, n, SideTags::uniform(BoundaryTag::Dirichlet)).unwrap())
}

fn random_field(mesh: &Arc<Mesh>, values: &[f64]) -> FeField {
    FeField::new(mesh.clone(), values[..mesh.vertex_count()].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn homogenized_tensor_lies_between_reuss_and_voigt(g in grid_coefficient(2), e in (-1.0f64..1.0, -1.0f64..1.0)) {
        let coef = CoefficientField::Grid(Arc::new(g));
        let cell = solve_cell_problems(&coef, 8).unwrap();
        let (voigt, reuss) = element_means(&coef, 8);
        let v = [e.0, e.1];
        let q = cell.a_hat.form(v, v);
        prop_assert!(q <= voigt.form(v, v) + 1e-9);
        prop_assert!(q >= reuss.form(v, v) - 1e-9);
        let [l1, l2] = cell.a_hat.eigenvalues();
        prop_assert!(l1 >= coef.kappa1() - 1e-12 && l2 <= coef.kappa2() + 1e-12);
    }

    #[test]
    fn transposed_coefficient_swaps_the_tensor(g in grid_coefficient(2)) {
        let n = g.n;
        let mut t = g.clone();
        for j in 0..n {
            for i in 0..n {
                let s = g.samples[j * n + i];
                t.samples[i * n + j] = Sym2([s.a22(), s.a12(), s.a11()]);
            }
        }
        let a = solve_cell_problems(&CoefficientField::Grid(Arc::new(g)), 8).unwrap().a_hat;
        let b = solve_cell_problems(&CoefficientField::Grid(Arc::new(t)), 8).unwrap().a_hat;
        prop_assert!((a.a11() - b.a22()).abs() < 1e-9);
        prop_assert!((a.a22() - b.a11()).abs() < 1e-9);
        prop_assert!((a.a12() - b.a12()).abs() < 1e-9);
    }

    #[test]
    fn correctors_have_zero_mean(g in grid_coefficient(2)) {
        let cell = solve_cell_problems(&CoefficientField::Grid(Arc::new(g)), 8).unwrap();
        for c in &cell.correctors {
            prop_assert!((c.iter().sum::<f64>() / c.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_and_h1_are_equivalent(values in prop::collection::vec(-1.0f64..1.0, 81), eps in 0.05f64..0.5) {
        let mesh = unit_grid(8);
        let coef = CoefficientField::layered(2.0, 1.8).unwrap();
        let f = random_field(&mesh, &values);
        let ctx = NormContext { coefficient: Some(&coef), epsilon: Some(eps), robin: None };
        let r = error_norms(&f, &FeField::zeros(mesh), &ctx).unwrap();
        let (h1, en) = (r.h1_semi.powi(2), r.energy.unwrap().powi(2));
        prop_assert!(coef.kappa1() * h1 <= en * (1.0 + 1e-12));
        prop_assert!(en <= coef.kappa2() * h1 * (1.0 + 1e-12));
    }

    #[test]
    fn error_norms_satisfy_the_triangle_inequality(values in prop::collection::vec(-1.0f64..1.0, 243)) {
        let mesh = unit_grid(8);
        let (a, b, c) = (random_field(&mesh, &values[..81]), random_field(&mesh, &values[81..162]), random_field(&mesh, &values[162..]));
        let ctx = NormContext::default();
        let ab = error_norms(&a, &b, &ctx).unwrap();
        let bc = error_norms(&b, &c, &ctx).unwrap();
        let ac = error_norms(&a, &c, &ctx).unwrap();
        prop_assert!(ac.h1_semi <= ab.h1_semi + bc.h1_semi + 1e-12);
        prop_assert!(ac.l2 <= ab.l2 + bc.l2 + 1e-12);
        for tag in ac.boundary_l2.keys() {
            prop_assert!(ac.boundary_l2[tag] <= ab.boundary_l2[tag] + bc.boundary_l2[tag] + 1e-12);
        }
    }

    #[test]
    fn expansion_is_linear_in_u0(a in (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0), b in (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0)) {
        let mesh = unit_grid(16);
        let cell = solve_cell_problems(&CoefficientField::layered(2.0, 1.8).unwrap(), 8).unwrap();
        let u = SmoothFunction::linear(a.0, a.1, a.2);
        let v = SmoothFunction::linear(b.0, b.1, b.2);
        let sum = SmoothFunction::linear(a.0 + b.0, a.1 + b.1, a.2 + b.2);
        let eu = first_order_expansion(&u, &cell, 0.125, mesh.clone()).unwrap();
        let ev = first_order_expansion(&v, &cell, 0.125, mesh.clone()).unwrap();
        let es = first_order_expansion(&sum, &cell, 0.125, mesh).unwrap();
        for k in 0..es.values.len() {
            prop_assert!((es.values[k] - eu.values[k] - ev.values[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolants_commute_with_scaling(c in -3.0f64..3.0) {
        prop_assume!(c.abs() > 1e-3);
        let coef = CoefficientField::layered(2.0, 1.8).unwrap();
        let coarse = unit_grid(2);
        let basis = build_ms_basis(coarse.clone(), &coef, 0.25, Some(8)).unwrap();
        let u0 = SmoothFunction::new("s", |p| (p[0] * 2.0).sin() + p[1], |p| [2.0 * (p[0] * 2.0).cos(), 1.0], |p| Sym2([-4.0 * (p[0] * 2.0).sin(), 0.0, 0.0]));
        let ui = interpolate(&u0, coarse.clone());
        let uci = interpolate(&u0.scaled(c), coarse);
        let ms = ms_interpolant(&basis, &ui).unwrap();
        let msc = ms_interpolant(&basis, &uci).unwrap();
        let fine = basis.fine.clone().unwrap();
        let exact = interpolate(&u0, fine.clone());
        let exact_c = interpolate(&u0.scaled(c), fine);
        let ctx = NormContext { coefficient: Some(&coef), epsilon: Some(0.25), robin: None };
        let r = error_norms(&ms, &exact, &ctx).unwrap();
        let rc = error_norms(&msc, &exact_c, &ctx).unwrap();
        prop_assert!((rc.h1_semi - c.abs() * r.h1_semi).abs() <= 1e-12 * (1.0 + rc.h1_semi));
        prop_assert!((rc.l2 - c.abs() * r.l2).abs() <= 1e-12 * (1.0 + rc.l2));
        prop_assert!((rc.energy.unwrap() - c.abs() * r.energy.unwrap()).abs() <= 1e-12 * (1.0 + rc.energy.unwrap()));
    }

    #[test]
    fn stiffness_rows_sum_to_zero(g in grid_coefficient(2), n in 2usize..12, eps in 0.05f64..1.0) {
        let mesh = Mesh::structured(Rect::UNIT, n, SideTags::uniform(BoundaryTag::Neumann)).unwrap();
        let k = assemble_stiffness(&mesh, &CoefficientField::Grid(Arc::new(g)), Some(eps), DEFAULT_ORDER).unwrap();
        for i in 0..k.nrows {
            prop_assert!(k.row(i).map(|(_, v)| v).sum::<f64>().abs() < 1e-10);
        }
        prop_assert!(k.asymmetry() < 1e-14);
    }

    #[test]
    fn multiscale_basis_partitions_unity(g in grid_coefficient(2), m in 2usize..10) {
        let coef = CoefficientField::Grid(Arc::new(g));
        let basis = build_ms_basis(unit_grid(2), &coef, 0.25, Some(m)).unwrap();
        prop_assert!(basis.partition_of_unity_defect() < 1e-10);
        prop_assert!(basis.row_sum_defect() < 1e-10);
    }

    #[test]
    fn rate_fit_recovers_power_laws(p in -3.0f64..3.0, c in 0.01f64..100.0, h0 in 0.01f64..1.0, k in 3usize..8) {
        let pts: Vec<(f64, f64)> = (0..k).map(|i| {
            let h = h0 / 2f64.powi(i as i32);
            (h, c * h.powf(p))
        }).collect();
        let fit = fit_rate(&pts, FitVariable::H).unwrap();
        prop_assert!((fit.slope - p).abs() < 1e-12);
        prop_assert!((fit.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn meshes_satisfy_euler_and_submesh_shape(n in 1usize..12, m in 2usize..10, e in 0usize..2) {
        let mesh = Mesh::structured(Rect::new(0.0, 0.0, 2.0, 1.0), n, SideTags::uniform(BoundaryTag::Neumann)).unwrap();
        let (v, f) = (mesh.vertex_count() as i64, mesh.triangle_count() as i64);
        prop_assert_eq!(v - mesh.edge_count() as i64 + f, 1);
        let parent = regularity_report(&mesh, DEFAULT_RHO_MIN).unwrap();
        let sub = build_fine_submesh(&mesh, e, m).unwrap();
        let child = regularity_report(&sub.mesh, DEFAULT_RHO_MIN).unwrap();
        prop_assert!((child.rho - parent.ratios[e]).abs() < 1e-12);
    }
}

#[test]
fn cell_solution_json_is_stable() {
    let cell = solve_cell_problems(&CoefficientField::separable(2.0, 1.0).unwrap(), 8).unwrap();
    let text = cell.to_json().unwrap();
    let back = CellSolution::from_json(&text).unwrap();
    assert_eq!(back, cell);
    assert_eq!(back.to_json().unwrap(), text);
    assert!(cell.corrector_grad_bound > 0.0);
}

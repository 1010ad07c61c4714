//! Matrix-free collocation systems over the FMM engine.
//!
//! The all-Dirichlet path solves the first-kind single-layer equation
//! `V q = f` (an indirect representation; q is a fictitious density). The
//! mixed path solves the direct BIE `u/2 + K u = V q` with physical traces
//! u and q, unknowns swapped per element by its boundary condition. The
//! double-layer plan shares the single-layer plan's tree, projectors and
//! translation operators; only the source-side integration differs.

use crate::bem::{BcKind, BoundaryCondition, TriMesh};
use crate::engine::{FmmConfig, FmmPlan};
use crate::error::{Error, Result};
use crate::kernel::Layer;
use crate::solver::LinearOperator;

/// First-kind single-layer Dirichlet system: `V q = f`.
pub struct DirichletSystem {
    pub plan: FmmPlan,
    pub rhs: Vec<f64>,
}

impl LinearOperator for DirichletSystem {
    fn dim(&self) -> usize {
        self.plan.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.plan.apply(x).expect("plan validated at assembly")
    }
}

/// Assembles the Dirichlet system from an already planned single-layer
/// operator. Mixed conditions are rejected.
pub fn assemble_dirichlet_system(plan: FmmPlan, bc: &BoundaryCondition) -> Result<DirichletSystem> {
    if plan.layer() != Layer::Single {
        return Err(Error::Config(
            "the Dirichlet system uses the single-layer plan".into(),
        ));
    }
    if bc.len() != plan.len() {
        return Err(Error::BoundaryCondition(format!(
            "{} conditions for {} elements",
            bc.len(),
            plan.len()
        )));
    }
    if !bc.is_all_dirichlet() {
        return Err(Error::BoundaryCondition(
            "boundary conditions are mixed; use assemble_mixed_system".into(),
        ));
    }
    let rhs = bc.values.clone();
    Ok(DirichletSystem { plan, rhs })
}

/// Direct-BIE system with mixed boundary conditions.
///
/// Unknown vector z: `z_j = q_j` on Dirichlet elements, `z_j = u_j` on
/// Neumann elements. The operator applies
/// `A z = (K + I/2) z_N - V z_D` and the right-hand side is
/// `b = V g_N - (K + I/2) f_D` with the knowns extended by zero.
pub struct MixedSystem {
    pub plan_single: FmmPlan,
    pub plan_double: FmmPlan,
    pub bc: BoundaryCondition,
    pub rhs: Vec<f64>,
}

impl MixedSystem {
    fn mask(&self, z: &[f64], kind: BcKind) -> Vec<f64> {
        z.iter()
            .zip(&self.bc.kinds)
            .map(|(&v, &k)| if k == kind { v } else { 0.0 })
            .collect()
    }

    /// (K + I/2) v through the double-layer plan.
    fn apply_h(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self
            .plan_double
            .apply(v)
            .expect("plan validated at assembly");
        for (o, &vi) in out.iter_mut().zip(v) {
            *o += 0.5 * vi;
        }
        out
    }

    fn apply_v(&self, v: &[f64]) -> Vec<f64> {
        self.plan_single
            .apply(v)
            .expect("plan validated at assembly")
    }

    /// Scatters the solution back into full per-element (u, q) traces.
    pub fn recover_traces(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.bc.len();
        let mut u = vec![0.0; n];
        let mut q = vec![0.0; n];
        for j in 0..n {
            match self.bc.kinds[j] {
                BcKind::Dirichlet => {
                    u[j] = self.bc.values[j];
                    q[j] = z[j];
                }
                BcKind::Neumann => {
                    q[j] = self.bc.values[j];
                    u[j] = z[j];
                }
            }
        }
        (u, q)
    }
}

impl LinearOperator for MixedSystem {
    fn dim(&self) -> usize {
        self.bc.len()
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        let z_d = self.mask(z, BcKind::Dirichlet);
        let z_n = self.mask(z, BcKind::Neumann);
        let h_part = self.apply_h(&z_n);
        let v_part = self.apply_v(&z_d);
        h_part
            .iter()
            .zip(&v_part)
            .map(|(h, v)| h - v)
            .collect()
    }
}

/// Assembles the mixed direct-BIE system. The mesh must be closed; the
/// double-layer plan is derived from the single-layer plan.
pub fn assemble_mixed_system(plan_single: FmmPlan, bc: &BoundaryCondition) -> Result<MixedSystem> {
    if plan_single.layer() != Layer::Single {
        return Err(Error::Config(
            "assemble_mixed_system expects the single-layer plan".into(),
        ));
    }
    if bc.len() != plan_single.len() {
        return Err(Error::BoundaryCondition(format!(
            "{} conditions for {} elements",
            bc.len(),
            plan_single.len()
        )));
    }
    let mesh = plan_single
        .core()
        .mesh
        .as_ref()
        .ok_or_else(|| Error::Config("mixed system needs a BEM plan".into()))?;
    if !mesh.is_closed() {
        return Err(Error::Mesh(
            "the direct BIE for mixed conditions needs a closed mesh".into(),
        ));
    }
    let plan_double = plan_single.with_layer(Layer::Double)?;

    let system = MixedSystem {
        plan_single,
        plan_double,
        bc: bc.clone(),
        rhs: Vec::new(),
    };
    // b = V g_N - (K + I/2) f_D.
    let f_d = system.mask(&system.bc.values.clone(), BcKind::Dirichlet);
    let g_n = system.mask(&system.bc.values.clone(), BcKind::Neumann);
    let h_f = system.apply_h(&f_d);
    let v_g = system.apply_v(&g_n);
    let rhs: Vec<f64> = v_g.iter().zip(&h_f).map(|(v, h)| v - h).collect();
    Ok(MixedSystem { rhs, ..system })
}

/// Interior potential re-evaluated from solved traces via Green's identity
/// (direct representation) at points strictly inside the domain:
/// `u(x) = V q (x) - K u (x)`.
pub fn interior_potential_direct(
    mesh: &TriMesh,
    u: &[f64],
    q: &[f64],
    points: &[nalgebra::Point3<f64>],
) -> Vec<f64> {
    use crate::bem::quadrature::{element_integral, Element, ElementQuadrature};
    let quad = ElementQuadrature::default();
    points
        .iter()
        .map(|x| {
            let mut sum = 0.0;
            for j in 0..mesh.n_elements() {
                let elem = Element::from_mesh(mesh, j);
                sum += element_integral(&elem, x, Layer::Single, &quad) * q[j];
                sum -= element_integral(&elem, x, Layer::Double, &quad) * u[j];
            }
            sum
        })
        .collect()
}

/// Interior potential of the indirect single-layer representation
/// `u(x) = V sigma (x)`.
pub fn interior_potential_single_layer(
    mesh: &TriMesh,
    sigma: &[f64],
    points: &[nalgebra::Point3<f64>],
) -> Vec<f64> {
    use crate::bem::quadrature::{element_integral, Element, ElementQuadrature};
    let quad = ElementQuadrature::default();
    points
        .iter()
        .map(|x| {
            (0..mesh.n_elements())
                .map(|j| {
                    let elem = Element::from_mesh(mesh, j);
                    element_integral(&elem, x, Layer::Single, &quad) * sigma[j]
                })
                .sum()
        })
        .collect()
}

/// Convenience: plan + assemble the Dirichlet system in one step.
pub fn dirichlet_system_for_mesh(
    mesh: TriMesh,
    f: Vec<f64>,
    config: FmmConfig,
) -> Result<DirichletSystem> {
    let bc = BoundaryCondition::all_dirichlet(f);
    let plan = FmmPlan::new_bem(mesh, Layer::Single, config)?;
    assemble_dirichlet_system(plan, &bc)
}

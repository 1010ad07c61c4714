use fmm_core::compression::{epsilon1, projectors_from_blocks};
use fmm_core::kernel::KernelSpec;
use fmm_core::octree::offset_table;
use fmm_core::surfaces::SurfaceSpec;
use fmm_core::translation::build_m2l;

#[test]
#[ignore]
fn probe_dims_vs_d() {
    let kernel = KernelSpec::single();
    for d in [0.02f64, 0.05, 0.1, 0.2] {
        let spec = SurfaceSpec::new(8, d).unwrap();
        let blocks: Vec<_> = offset_table()
            .iter()
            .map(|&o| build_m2l(o, 1.0, &spec, &kernel).unwrap())
            .collect();
        for depth in [5u32, 7, 9, 11, 13] {
            let eps1 = epsilon1(0.1, depth);
            let proj = projectors_from_blocks(&blocks, eps1, true).unwrap();
            println!("d={d} depth={depth} eps1={eps1:.3e} p_tilde={}", proj.retained_row_dim());
        }
    }
}

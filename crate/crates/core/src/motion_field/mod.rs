//! Sparse (Gaussian-splatted) and dense (propagated) motion fields.

mod exchange;
mod propagate;
mod rasterize;

pub use exchange::{
    export_constraints, import_constraints, import_dense_field, mask_path, write_constraint_files, ExternalPropagator,
};
pub use propagate::{
    propagate_dense, FlowSample, HarmonicPropagator, PropagationReport, PropagatorParams, ReferenceImage, Solver,
    SparseFlow,
};
pub use rasterize::{rasterize_sparse_field, DEFAULT_SIGMA};
pub(crate) use rasterize::snap;

use crate::pose_io::{FlowField, MotionFieldStack};
use crate::trajectory::{DisplacementKind, RefDisplacement, TrajectoryMap};
use crate::{Error, Result};

/// Expands sparse constraints plus a reference image into a dense field for driven frame `frame`.
pub trait MotionPropagator {
    fn propagate(&self, frame: usize, reference: &ReferenceImage, constraints: &SparseFlow) -> Result<FlowField>;
}

impl MotionPropagator for HarmonicPropagator {
    fn propagate(&self, _frame: usize, reference: &ReferenceImage, constraints: &SparseFlow) -> Result<FlowField> {
        propagate_dense(reference, constraints, &self.params).map(|(f, _)| f)
    }
}

/// Constraints for driven frame `n`: valid reference displacements placed at the
/// keypoints' frame-0 pixels. When two keypoints land on one pixel the lower index wins.
pub fn frame_constraints(ref_disp: &RefDisplacement, traj: &TrajectoryMap, n: usize) -> Result<SparseFlow> {
    if ref_disp.kind() != DisplacementKind::Reference {
        return Err(Error::Param("dense propagation needs reference-anchored displacements".into()));
    }
    let (w, h) = (traj.width(), traj.height());
    let mut taken = std::collections::HashSet::new();
    let mut samples = Vec::new();
    for k in 0..ref_disp.keypoint_count() {
        let Some((u, v)) = ref_disp.get(n, k) else { continue };
        let (x0, y0) = traj.point(0, k);
        let (x, y) = snap(x0, y0, w, h);
        if taken.insert((x, y)) {
            samples.push(FlowSample { x, y, u, v });
        }
    }
    SparseFlow::new(w, h, samples)
}

/// Dense field for every driven frame, each propagated from the reference image.
pub fn dense_field_stack(
    reference: &ReferenceImage,
    ref_disp: &RefDisplacement,
    traj: &TrajectoryMap,
    propagator: &dyn MotionPropagator,
) -> Result<MotionFieldStack> {
    if (reference.width(), reference.height()) != (traj.width(), traj.height()) {
        return Err(Error::shape(
            "reference vs trajectory",
            &[traj.height(), traj.width()],
            &[reference.height(), reference.width()],
        ));
    }
    let frames = (1..=ref_disp.driven_frames())
        .map(|n| {
            let c = frame_constraints(ref_disp, traj, n)?;
            propagator.propagate(n, reference, &c)
        })
        .collect::<Result<Vec<_>>>()?;
    MotionFieldStack::new(reference.width(), reference.height(), frames)
}

//! File exchange with an external propagation model: constraints go out as a
//! mostly-zero `.flo` plus a white-on-black mask PNG; dense fields come back as `.flo`.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::{FlowSample, MotionPropagator, ReferenceImage, SparseFlow};
use crate::pose_io::{load_flow, save_flow, FlowField};
use crate::{Error, Result};

/// Sidecar mask path for a constraint file: `foo.flo` -> `foo_mask.png`.
pub fn mask_path(flo_path: &Path) -> PathBuf {
    let stem = flo_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    flo_path.with_file_name(format!("{stem}_mask.png"))
}

/// Like [`write_constraint_files`] but refuses an empty set, which no propagator can use.
pub fn export_constraints(constraints: &SparseFlow, flo_path: impl AsRef<Path>) -> Result<()> {
    if constraints.is_empty() {
        return Err(Error::EmptyConstraints);
    }
    write_constraint_files(constraints, flo_path)
}

/// Writes the constraint `.flo` (zero away from samples) and its mask; an empty set gives an all-black mask.
pub fn write_constraint_files(constraints: &SparseFlow, flo_path: impl AsRef<Path>) -> Result<()> {
    let flo_path = flo_path.as_ref();
    let (w, h) = (constraints.width(), constraints.height());
    let mut field = FlowField::zeros(w, h);
    let mut mask = RgbImage::new(w as u32, h as u32);
    for s in constraints.samples() {
        field.set(s.x, s.y, (s.u, s.v));
        mask.put_pixel(s.x as u32, s.y as u32, Rgb([255, 255, 255]));
    }
    save_flow(&field, flo_path)?;
    let mpath = mask_path(flo_path);
    mask.save_with_format(&mpath, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: mpath,
            message: e.to_string(),
        })
}

/// Reads back an exported constraint set (mask pixels select the samples, row-major order).
pub fn import_constraints(flo_path: impl AsRef<Path>) -> Result<SparseFlow> {
    let flo_path = flo_path.as_ref();
    let field = load_flow(flo_path)?;
    let mpath = mask_path(flo_path);
    let mask = image::open(&mpath)
        .map_err(|e| Error::Image {
            path: mpath.clone(),
            message: e.to_string(),
        })?
        .to_rgb8();
    if (mask.width() as usize, mask.height() as usize) != (field.width(), field.height()) {
        return Err(Error::shape(
            "constraint mask",
            &[field.height(), field.width()],
            &[mask.height() as usize, mask.width() as usize],
        ));
    }
    let mut samples = Vec::new();
    for (x, y, p) in mask.enumerate_pixels() {
        if p.0[0] > 127 {
            let (u, v) = field.get(x as usize, y as usize);
            samples.push(FlowSample {
                x: x as usize,
                y: y as usize,
                u,
                v,
            });
        }
    }
    SparseFlow::new(field.width(), field.height(), samples)
}

pub fn import_dense_field(path: impl AsRef<Path>) -> Result<FlowField> {
    load_flow(path)
}

/// Delegates propagation to an external model through a directory.
///
/// For driven frame `n` it writes `constraints_{n:04}.flo` (+ mask) and reads
/// `dense_{n:04}.flo`, which the external model is expected to have produced.
#[derive(Debug, Clone)]
pub struct ExternalPropagator {
    pub dir: PathBuf,
}

impl ExternalPropagator {
    pub fn constraints_path(&self, frame: usize) -> PathBuf {
        self.dir.join(format!("constraints_{frame:04}.flo"))
    }

    pub fn dense_path(&self, frame: usize) -> PathBuf {
        self.dir.join(format!("dense_{frame:04}.flo"))
    }
}

impl MotionPropagator for ExternalPropagator {
    fn propagate(&self, frame: usize, reference: &ReferenceImage, constraints: &SparseFlow) -> Result<FlowField> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        export_constraints(constraints, self.constraints_path(frame))?;
        let dense = self.dense_path(frame);
        if !dense.exists() {
            return Err(Error::Config(format!(
                "external dense field {} not found; run the external propagator on {} and retry",
                dense.display(),
                self.constraints_path(frame).display()
            )));
        }
        let field = import_dense_field(&dense)?;
        if (field.width(), field.height()) != (reference.width(), reference.height()) {
            return Err(Error::shape(
                format!("external dense field {}", dense.display()),
                &[reference.height(), reference.width()],
                &[field.height(), field.width()],
            ));
        }
        Ok(field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constraints() -> SparseFlow {
        SparseFlow::new(
            6,
            5,
            vec![
                FlowSample { x: 1, y: 0, u: 0.5, v: -2.25 },
                FlowSample { x: 4, y: 3, u: 7.0, v: 0.0 },
                FlowSample { x: 0, y: 4, u: -1.0, v: 3.0 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.flo");
        let c = constraints();
        export_constraints(&c, &path).unwrap();
        let back = import_constraints(&path).unwrap();
        let mut want = c.samples().to_vec();
        want.sort_by_key(|s| (s.y, s.x));
        assert_eq!(back.samples(), &want[..]);
    }

    #[test]
    fn mask_counts_constraints() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.flo");
        export_constraints(&constraints(), &path).unwrap();
        let mask = image::open(mask_path(&path)).unwrap().to_rgb8();
        assert_eq!(mask.pixels().filter(|p| p.0 == [255, 255, 255]).count(), 3);
        assert_eq!(import_dense_field(&path).unwrap().nonzero_fraction(), 3.0 / 30.0);
    }

    #[test]
    fn empty_export_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = export_constraints(&SparseFlow::empty(3, 3), dir.path().join("c.flo")).unwrap_err();
        assert!(matches!(err, Error::EmptyConstraints));
    }

    #[test]
    fn external_propagator_reads_back_dense_field() {
        let dir = tempfile::tempdir().unwrap();
        let ext = ExternalPropagator { dir: dir.path().to_path_buf() };
        let img = ReferenceImage::uniform(6, 5, [0.0; 3]);
        assert!(matches!(ext.propagate(1, &img, &constraints()), Err(Error::Config(_))));
        assert!(ext.constraints_path(1).exists());
        let dense = FlowField::constant(6, 5, 1.0, 2.0);
        save_flow(&dense, ext.dense_path(1)).unwrap();
        assert_eq!(ext.propagate(1, &img, &constraints()).unwrap(), dense);
    }
}

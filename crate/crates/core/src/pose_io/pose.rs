use std::path::Path;

use serde_json::{json, Map, Value};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub conf: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, conf: f64) -> Self {
        Keypoint { x, y, conf }
    }
}

/// Per-frame keypoints for `K` joints over frames `0..=N`; frame 0 is the reference pose.
///
/// Coordinates may lie off-screen but are always finite, and confidences are in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    width: usize,
    height: usize,
    keypoint_count: usize,
    frames: Vec<Vec<Keypoint>>,
}

impl PoseSequence {
    pub fn new(
        width: usize,
        height: usize,
        keypoint_count: usize,
        frames: Vec<Vec<Keypoint>>,
    ) -> Result<Self> {
        for (n, frame) in frames.iter().enumerate() {
            if frame.len() != keypoint_count {
                return Err(Error::Schema(format!(
                    "frame {n} has {} keypoints, expected keypoint_count = {keypoint_count}",
                    frame.len()
                )));
            }
            for (k, kp) in frame.iter().enumerate() {
                if !kp.x.is_finite() || !kp.y.is_finite() {
                    return Err(Error::Schema(format!(
                        "non-finite coordinate at frame {n}, keypoint {k}"
                    )));
                }
                if !(0.0..=1.0).contains(&kp.conf) {
                    return Err(Error::Schema(format!(
                        "confidence out of range at frame {n}, keypoint {k}: {}",
                        kp.conf
                    )));
                }
            }
        }
        Ok(PoseSequence {
            width,
            height,
            keypoint_count,
            frames,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoint_count
    }

    /// Number of frames including the reference.
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Number of driven frames `N` (frames after the reference).
    pub fn driven_frames(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }

    pub fn frames(&self) -> &[Vec<Keypoint>] {
        &self.frames
    }

    pub fn keypoint(&self, frame: usize, k: usize) -> Keypoint {
        self.frames[frame][k]
    }

    pub fn to_json(&self) -> Value {
        let frames: Vec<Value> = self
            .frames
            .iter()
            .enumerate()
            .map(|(n, kps)| {
                json!({
                    "index": n,
                    "keypoints": kps.iter().map(|kp| json!([kp.x, kp.y, kp.conf])).collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({
            "width": self.width,
            "height": self.height,
            "keypoint_count": self.keypoint_count,
            "frames": frames,
        })
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| parse_err("<root>", "expected an object"))?;
        let width = get_uint(obj, "width")?;
        let height = get_uint(obj, "height")?;
        let keypoint_count = get_uint(obj, "keypoint_count")?;
        let frames_val = obj
            .get("frames")
            .ok_or_else(|| parse_err("frames", "missing field"))?
            .as_array()
            .ok_or_else(|| parse_err("frames", "expected an array"))?;

        let mut indexed = Vec::with_capacity(frames_val.len());
        for (i, fv) in frames_val.iter().enumerate() {
            let fobj = fv
                .as_object()
                .ok_or_else(|| parse_err(format!("frames[{i}]"), "expected an object"))?;
            let index = fobj
                .get("index")
                .and_then(Value::as_u64)
                .ok_or_else(|| parse_err(format!("frames[{i}].index"), "expected a non-negative integer"))?
                as usize;
            let kps = fobj
                .get("keypoints")
                .and_then(Value::as_array)
                .ok_or_else(|| parse_err(format!("frames[{i}].keypoints"), "expected an array"))?;
            let mut keypoints = Vec::with_capacity(kps.len());
            for (k, kv) in kps.iter().enumerate() {
                let field = format!("frames[{i}].keypoints[{k}]");
                let triple = kv
                    .as_array()
                    .filter(|a| a.len() == 3)
                    .ok_or_else(|| parse_err(&field, "expected [x, y, conf]"))?;
                let num = |j: usize| {
                    triple[j]
                        .as_f64()
                        .ok_or_else(|| parse_err(format!("{field}[{j}]"), "expected a number"))
                };
                keypoints.push(Keypoint::new(num(0)?, num(1)?, num(2)?));
            }
            indexed.push((index, keypoints));
        }

        indexed.sort_by_key(|(index, _)| *index);
        if indexed.iter().enumerate().any(|(n, (index, _))| *index != n) {
            return Err(Error::Schema("non-contiguous frames".into()));
        }
        PoseSequence::new(
            width,
            height,
            keypoint_count,
            indexed.into_iter().map(|(_, kps)| kps).collect(),
        )
    }
}

fn parse_err(field: impl Into<String>, message: &str) -> Error {
    Error::Parse {
        field: field.into(),
        message: message.into(),
    }
}

fn get_uint(obj: &Map<String, Value>, key: &str) -> Result<usize> {
    obj.get(key)
        .ok_or_else(|| parse_err(key, "missing field"))?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| parse_err(key, "expected a non-negative integer"))
}

pub fn load_pose_sequence(path: impl AsRef<Path>) -> Result<PoseSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        field: "<document>".into(),
        message: e.to_string(),
    })?;
    PoseSequence::from_json(&value)
}

pub fn save_pose_sequence(seq: &PoseSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&seq.to_json()).expect("pose json serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<PoseSequence> {
        PoseSequence::from_json(&serde_json::from_str(s).unwrap())
    }

    #[test]
    fn two_frame_single_keypoint() {
        let seq = parse(
            r#"{"width":32,"height":32,"keypoint_count":1,
                "frames":[{"index":0,"keypoints":[[10,20,1.0]]},{"index":1,"keypoints":[[13,24,1.0]]}]}"#,
        )
        .unwrap();
        assert_eq!(seq.driven_frames(), 1);
        assert_eq!(seq.keypoint(1, 0), Keypoint::new(13.0, 24.0, 1.0));
    }

    #[test]
    fn frames_may_arrive_out_of_order() {
        let seq = parse(
            r#"{"width":8,"height":8,"keypoint_count":1,
                "frames":[{"index":1,"keypoints":[[2,2,0.5]]},{"index":0,"keypoints":[[1,1,0.5]]}]}"#,
        )
        .unwrap();
        assert_eq!(seq.keypoint(0, 0).x, 1.0);
    }

    #[test]
    fn non_contiguous_frames_rejected() {
        let err = parse(
            r#"{"width":8,"height":8,"keypoint_count":1,
                "frames":[{"index":0,"keypoints":[[1,1,1]]},{"index":2,"keypoints":[[1,1,1]]}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("non-contiguous frames"), "{err}");
    }

    #[test]
    fn confidence_out_of_range_rejected() {
        let err = parse(
            r#"{"width":8,"height":8,"keypoint_count":1,"frames":[{"index":0,"keypoints":[[1,1,1.2]]}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("confidence out of range"), "{err}");
    }

    #[test]
    fn inconsistent_keypoint_count_is_schema_error() {
        let err = parse(
            r#"{"width":8,"height":8,"keypoint_count":2,"frames":[{"index":0,"keypoints":[[1,1,1]]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn malformed_field_is_named() {
        let err = parse(
            r#"{"width":8,"height":8,"keypoint_count":1,"frames":[{"index":0,"keypoints":[[1,"a",1]]}]}"#,
        )
        .unwrap_err();
        match err {
            Error::Parse { field, .. } => assert_eq!(field, "frames[0].keypoints[0][1]"),
            other => panic!("unexpected {other}"),
        }
        let err = parse(r#"{"height":8,"keypoint_count":1,"frames":[]}"#).unwrap_err();
        assert!(err.to_string().contains("`width`"));
    }

    #[test]
    fn off_screen_coordinates_allowed() {
        let seq = parse(
            r#"{"width":8,"height":8,"keypoint_count":1,"frames":[{"index":0,"keypoints":[[-5.5,100,0.1]]}]}"#,
        )
        .unwrap();
        assert_eq!(seq.keypoint(0, 0).x, -5.5);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let seq = PoseSequence::new(
            64,
            48,
            2,
            vec![
                vec![Keypoint::new(0.1, 1.0 / 3.0, 0.7), Keypoint::new(-2.5, 9.75, 0.0)],
                vec![Keypoint::new(1e-9, 47.123456789, 1.0), Keypoint::new(3.0, 4.0, 0.3)],
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.json");
        save_pose_sequence(&seq, &path).unwrap();
        assert_eq!(load_pose_sequence(&path).unwrap(), seq);
    }
}

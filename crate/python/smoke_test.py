"""Smoke test for the `dispose` extension module.

Build and install first:  pip install maturin && maturin develop -m crates/py/Cargo.toml
"""

import json
import os
import struct
import tempfile

import dispose


def write_poses(path, frames, width=24, height=20):
    doc = {
        "width": width,
        "height": height,
        "keypoint_count": len(frames[0]),
        "frames": [{"index": i, "keypoints": kps} for i, kps in enumerate(frames)],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def main():
    with tempfile.TemporaryDirectory() as tmp:
        poses = os.path.join(tmp, "poses.json")
        write_poses(
            poses,
            [
                [[5, 5, 1.0], [15, 12, 0.9]],
                [[7, 6, 1.0], [14, 10, 0.9]],
                [[9, 7, 1.0], [13, 8, 0.9]],
            ],
        )

        sparse, dense = dispose.poses_to_fields(poses)
        assert len(sparse) == len(dense) == 2
        assert sparse[0].get(5, 5) == (2.0, 1.0), sparse[0].get(5, 5)
        assert dense[0].nonzero_fraction() > 0.9
        print("poses_to_fields:", sparse[0], dense[0])

        flo = os.path.join(tmp, "fd.flo")
        dense[1].save(flo)
        back = dispose.FlowField.load(flo)
        f32 = lambda xs: [struct.unpack("<f", struct.pack("<f", x))[0] for x in xs]
        assert back.u() == f32(dense[1].u()) and back.v() == f32(dense[1].v())
        dense[1].save_png(os.path.join(tmp, "fd.png"))

        disc = [
            (4.0 if (x - 24) ** 2 + (y - 24) ** 2 <= 64 else 0.0)
            for y in range(48)
            for x in range(48)
        ]
        field = dispose.FlowField(48, 48, disc, [0.0] * len(disc))
        samples = dispose.sample_sparse_flow(field, 1.0, 5)
        assert (24, 24, 4.0, 0.0) in samples, samples
        print("sample_sparse_flow:", len(samples), "samples")

        frames = dispose.build_correspondence(poses, feature_dim=4, seed=3, height=10, width=12)
        assert len(frames) == 2 and all(len(f) == 2 for f in frames)
        assert all(len(col[3]) == 4 for f in frames for col in f)
        print("build_correspondence:", [len(f) for f in frames], "columns per frame")

        for variant in ("full", "exp1", "exp2"):
            p = dispose.GuidancePipeline(variant, seed=1, tiny=True)
            gap = p.transparency_gap()
            assert gap == 0.0, (variant, gap)
        print("transparency: guided == unguided at init for all variants")

        p = dispose.GuidancePipeline("full", seed=7, tiny=True)
        base = p.checksum("base")
        losses, before, after = p.train(steps=20, batch_size=2)
        assert len(losses) == 20 and all(l == l for l in losses)
        assert p.checksum("base") == base
        p.save_checkpoint(os.path.join(tmp, "ckpt"))
        print(f"train: held-out {before:.4f} -> {after:.4f}, base unchanged")

        try:
            dispose.GuidancePipeline("exp9")
        except ValueError as e:
            print("bad variant rejected:", e)
        else:
            raise AssertionError("exp9 accepted")

        results = dispose.run_checks("pose_io")
        assert results and all(r[2] for r in results), results
        print("run_checks(pose_io):", len(results), "passed")

    print("smoke test OK")


if __name__ == "__main__":
    main()

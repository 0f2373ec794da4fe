"""Writes a PLY in the layout produced by the reference 3DGS trainer
(plyfile-style header, 45 f_rest coefficients, unnormalised quaternions,
unsorted log-scales) plus a JSON sidecar with a few decoded values.

Independent of the C++ reader: uses numpy only.
"""
import json
import sys

import numpy as np

SH_C0 = 0.28209479177387814


def main(out_ply, out_json, count=100, seed=1234):
    rng = np.random.default_rng(seed)
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(45)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    data = np.zeros((count, len(names)), dtype="<f4")
    col = {n: i for i, n in enumerate(names)}
    data[:, 0:3] = rng.normal(0, 1.5, (count, 3))
    data[:, col["f_dc_0"]:col["f_dc_2"] + 1] = rng.normal(0, 1.2, (count, 3))
    data[:, col["f_rest_0"]:col["f_rest_44"] + 1] = rng.normal(0, 0.1, (count, 45))
    data[:, col["opacity"]] = rng.normal(0, 3, count)
    data[:, col["scale_0"]:col["scale_2"] + 1] = rng.uniform(-6, -1, (count, 3))
    data[:, col["rot_0"]:col["rot_3"] + 1] = rng.normal(0, 2, (count, 4))

    header = "ply\nformat binary_little_endian 1.0\n"
    header += f"element vertex {count}\n"
    header += "".join(f"property float {n}\n" for n in names)
    header += "end_header\n"
    with open(out_ply, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(data.tobytes())

    first = data[0].astype(np.float64)
    q = first[col["rot_0"]:col["rot_3"] + 1]
    summary = {
        "count": count,
        "first_mean": first[0:3].tolist(),
        "first_color": np.clip(0.5 + SH_C0 * first[col["f_dc_0"]:col["f_dc_2"] + 1], 0, 1).tolist(),
        "first_scales_sorted_desc": sorted(np.exp(first[col["scale_0"]:col["scale_2"] + 1]).tolist(), reverse=True),
        "first_opacity": float(1 / (1 + np.exp(-first[col["opacity"]]))),
        "first_rotation_matrix": _rotation(q / np.linalg.norm(q)).tolist(),
        "first_log_scales": first[col["scale_0"]:col["scale_2"] + 1].tolist(),
    }
    with open(out_json, "w") as f:
        json.dump(summary, f, indent=2)


def _rotation(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])

"""Plain-text exports of generated motion for external viewers.

Two artifacts: a CSV of per-frame world joint positions and a ``.anim``
skeleton animation. The .anim format is line-oriented UTF-8:

    skeleton <J>
    joint <index> <parent> <name>          (J lines)
    fps <fps>
    frames <T>
    frame <t> x0 y0 z0 x1 y1 z1 ...        (T lines, meters)
"""

import csv

import numpy as np


def write_positions_csv(path, positions, skeleton, fps):
    """Per-frame joint positions: frame, time, then x/y/z per joint."""
    names = skeleton.joint_names or [f"j{i}" for i in range(skeleton.joint_count)]
    header = ["frame", "time_s"]
    for name in names:
        header += [f"{name}_x", f"{name}_y", f"{name}_z"]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for t, frame in enumerate(positions):
            row = [t, f"{t / fps:.6f}"] + [f"{v:.6f}" for v in frame.reshape(-1)]
            writer.writerow(row)


def write_animation(path, positions, skeleton, fps):
    """Write the documented plain-text skeleton animation format."""
    names = skeleton.joint_names or [f"j{i}" for i in range(skeleton.joint_count)]
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"skeleton {skeleton.joint_count}\n")
        for j, (parent, name) in enumerate(zip(skeleton.parent_indices, names)):
            f.write(f"joint {j} {parent} {name}\n")
        f.write(f"fps {fps:g}\n")
        f.write(f"frames {len(positions)}\n")
        for t, frame in enumerate(positions):
            coords = " ".join(f"{v:.6f}" for v in frame.reshape(-1))
            f.write(f"frame {t} {coords}\n")


def read_animation(path):
    """Parse a .anim file back to (positions, parents, names, fps)."""
    with open(path, encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    idx = 0
    assert lines[idx].startswith("skeleton ")
    J = int(lines[idx].split()[1])
    idx += 1
    parents, names = [], []
    for _ in range(J):
        _, _j, parent, name = lines[idx].split(maxsplit=3)
        parents.append(int(parent))
        names.append(name)
        idx += 1
    fps = float(lines[idx].split()[1])
    idx += 1
    T = int(lines[idx].split()[1])
    idx += 1
    positions = np.zeros((T, J, 3))
    for _ in range(T):
        parts = lines[idx].split()
        t = int(parts[1])
        positions[t] = np.array([float(v) for v in parts[2:]]).reshape(J, 3)
        idx += 1
    return positions, parents, names, fps


def write_metrics_csv(path, report):
    """Delimited metric report: metric, mean, ci95, runs."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "mean", "ci95", "runs"])
        for name in sorted(report.means):
            ci = report.ci95.get(name)
            writer.writerow([
                name,
                f"{report.means[name]:.6f}",
                "" if ci is None else f"{ci:.6f}",
                report.runs,
            ])


def write_loss_csv(path, history):
    """Per-epoch loss records as CSV."""
    if not history:
        return
    keys = ["epoch"] + sorted(k for k in history[0] if k != "epoch")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(keys)
        for rec in history:
            writer.writerow([rec[k] for k in keys])

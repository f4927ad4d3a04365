"""Synthetic corpora: tiny content images with hidden attribute labels, and
procedural "abstract art" style images (colored blobs and stripes).

The two hidden attribute functions are smooth functionals of image
statistics.  They exist only to label the corpora; the predictors learn them
from labels alone, which gives the end-to-end evaluation a ground truth.

Images are written as 8-bit PNGs (for eyes) plus float64 .npy sidecars (for
exactness); all computation reads the sidecars.
"""

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# image statistics and hidden attributes


def saturation(img):
    """Mean over pixels of (max channel - min channel)."""
    img = np.asarray(img, dtype=np.float64)
    return float((img.max(axis=0) - img.min(axis=0)).mean())


def edge_energy(img):
    """Mean absolute horizontal+vertical finite difference over channels."""
    img = np.asarray(img, dtype=np.float64)
    dx = np.abs(np.diff(img, axis=2)).mean()
    dy = np.abs(np.diff(img, axis=1)).mean()
    return float(dx + dy)


def luminance(img):
    img = np.asarray(img, dtype=np.float64)
    return float((0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]).mean())


def red_dominance(img):
    img = np.asarray(img, dtype=np.float64)
    return float((img[0] - 0.5 * (img[1] + img[2])).mean())


def hidden_regression_attribute(img):
    """Smooth saturation/edge-energy mixture squashed by tanh."""
    return float(np.tanh(2.5 * (saturation(img) - 0.35) + 6.0 * (edge_energy(img) - 0.12)))


def hidden_binary_score(img):
    """Second hidden function: dark-and-red images score high."""
    x = 5.0 * red_dominance(img) + 3.0 * (0.55 - luminance(img))
    return float(1.0 / (1.0 + np.exp(-x)))


def hidden_binary_attribute(img, threshold=0.5):
    score = hidden_binary_score(img)
    return score, int(score > threshold)


# ---------------------------------------------------------------------------
# procedural images


def synth_content_image(rng, size=16):
    """Gradient background, a few colored shapes, mild noise; values in [0,1].

    A random fraction carries a stripe/blob texture overlay so the corpus
    spans the saturation/edge range that stylization later produces;
    predictors must agree on that range, not just on plain scenes.
    """
    c0 = rng.uniform(0.1, 0.9, 3)
    c1 = rng.uniform(0.1, 0.9, 3)
    ramp = np.linspace(0.0, 1.0, size)
    grad = ramp[None, :] if rng.random() < 0.5 else ramp[:, None]
    img = c0[:, None, None] * (1.0 - grad) + c1[:, None, None] * grad
    img = np.broadcast_to(img, (3, size, size)).copy()
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(1, 4))):
        color = rng.uniform(0.0, 1.0, 3)
        if rng.random() < 0.5:
            x0, y0 = rng.integers(0, size - 3, 2)
            w, h = rng.integers(2, size // 2, 2)
            mask = (xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)
        else:
            cx, cy = rng.uniform(2, size - 2, 2)
            r = rng.uniform(1.5, size / 3)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        img[:, mask] = 0.75 * color[:, None] + 0.25 * img[:, mask]
    if rng.random() < 0.4:
        overlay = synth_style_image(rng, size)
        w = rng.uniform(0.2, 0.8)
        img = (1.0 - w) * img + w * overlay
    img += rng.normal(0.0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0)


def synth_style_image(rng, size=16):
    """Stripes or blobs with a seeded palette; values in [0,1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if rng.random() < 0.5:
        theta = rng.uniform(0.0, np.pi)
        freq = rng.uniform(1.0, 4.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        sharp = rng.uniform(1.0, 6.0)
        t = np.cos(2.0 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) / size + phase)
        w = 0.5 + 0.5 * np.tanh(sharp * t)
        ca = rng.uniform(0.0, 1.0, 3)
        cb = rng.uniform(0.0, 1.0, 3)
        img = ca[:, None, None] * w + cb[:, None, None] * (1.0 - w)
    else:
        img = np.repeat(rng.uniform(0.0, 1.0, 3)[:, None, None], size, 1).repeat(size, 2).copy()
        for _ in range(int(rng.integers(2, 6))):
            cx, cy = rng.uniform(0, size, 2)
            s = rng.uniform(1.0, size / 2.5)
            color = rng.uniform(0.0, 1.0, 3)
            bump = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * s * s))
            img = img * (1.0 - bump[None]) + color[:, None, None] * bump[None]
    img += rng.normal(0.0, rng.uniform(0.0, 0.05), img.shape)
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# corpora


def _seeded(master_seed, *key):
    return np.random.default_rng([int(master_seed)] + [int(k) for k in key])


_STREAMS = {"styles": 1, "internal": 2, "external": 3, "test": 4}


def generate_corpora(master_seed, styles_k=500, n_internal=600, n_external=600,
                     n_test=100, image_size=16):
    """All corpora as in-memory arrays; deterministic in the master seed.

    Streams are keyed as (master_seed, stream_code, index) so each split and
    each image is independently reproducible.
    """
    out = {"master_seed": int(master_seed), "image_size": image_size}
    styles = [synth_style_image(_seeded(master_seed, _STREAMS["styles"], i), image_size)
              for i in range(styles_k)]
    out["styles"] = np.stack(styles) if styles else np.zeros((0, 3, image_size, image_size))
    out["style_ids"] = [f"sty-{i:04d}" for i in range(styles_k)]
    for split, n in (("internal", n_internal), ("external", n_external), ("test", n_test)):
        imgs = [synth_content_image(_seeded(master_seed, _STREAMS[split], i), image_size)
                for i in range(n)]
        arr = np.stack(imgs) if imgs else np.zeros((0, 3, image_size, image_size))
        out[split] = arr
        out[f"{split}_ids"] = [f"{split[:3]}-{i:04d}" for i in range(n)]
        out[f"{split}_labels_regression"] = np.array(
            [hidden_regression_attribute(im) for im in arr])
        out[f"{split}_labels_binary"] = np.array(
            [hidden_binary_attribute(im)[1] for im in arr], dtype=np.float64)
    return out


def _write_image(base_path, img):
    arr = np.asarray(img, dtype=np.float64)
    np.save(str(base_path) + ".npy", arr)
    as8 = (np.clip(arr, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(as8.transpose(1, 2, 0), mode="RGB").save(str(base_path) + ".png")


def read_image(base_path):
    return np.load(str(base_path) + ".npy")


def _write_labels(path, ids, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "value"])
        for i, v in zip(ids, values):
            w.writerow([i, f"{v:.12g}"])


def write_corpora(corp, data_dir, overwrite=False):
    """Persist corpora under ``data_dir``; refuses to clobber a previous run."""
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if manifest_path.exists() and not overwrite:
        raise FileExistsError(f"{manifest_path} exists; pass overwrite to replace it")
    (data_dir / "styles").mkdir(parents=True, exist_ok=True)
    for i, sid in enumerate(corp["style_ids"]):
        _write_image(data_dir / "styles" / sid, corp["styles"][i])
    for split in ("internal", "external", "test"):
        d = data_dir / "content" / split
        d.mkdir(parents=True, exist_ok=True)
        for i, iid in enumerate(corp[f"{split}_ids"]):
            _write_image(d / iid, corp[split][i])
        _write_labels(data_dir / f"labels_regression_{split}.csv",
                      corp[f"{split}_ids"], corp[f"{split}_labels_regression"])
        _write_labels(data_dir / f"labels_binary_{split}.csv",
                      corp[f"{split}_ids"], corp[f"{split}_labels_binary"])
    manifest = {
        "version": MANIFEST_VERSION,
        "master_seed": corp["master_seed"],
        "image_size": corp["image_size"],
        "counts": {
            "styles": len(corp["style_ids"]),
            "internal": len(corp["internal_ids"]),
            "external": len(corp["external_ids"]),
            "test": len(corp["test_ids"]),
        },
        "style_provenance": {
            "generator": "procedural stripes/blobs",
            "stream": "rng keyed by (master_seed, 1, style_index)",
        },
        "ids": {
            "styles": corp["style_ids"],
            "internal": corp["internal_ids"],
            "external": corp["external_ids"],
            "test": corp["test_ids"],
        },
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_corpora(data_dir):
    """Read a persisted data tree back into the in-memory layout."""
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    corp = {"master_seed": manifest["master_seed"],
            "image_size": manifest["image_size"]}
    corp["style_ids"] = manifest["ids"]["styles"]
    corp["styles"] = np.stack([read_image(data_dir / "styles" / sid)
                               for sid in corp["style_ids"]])
    for split in ("internal", "external", "test"):
        ids = manifest["ids"][split]
        corp[f"{split}_ids"] = ids
        corp[split] = np.stack([read_image(data_dir / "content" / split / iid)
                                for iid in ids])
        for attr in ("regression", "binary"):
            vals = {}
            with open(data_dir / f"labels_{attr}_{split}.csv") as fh:
                for row in csv.DictReader(fh):
                    vals[row["image_id"]] = float(row["value"])
            corp[f"{split}_labels_{attr}"] = np.array([vals[i] for i in ids])
    return corp

"""Attention-map export (binary PGM) and the patch localization score."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..r2dns import Classifier
from ..tensor import Tensor
from .config import RunConfig
from .data import PATCH, Dataset, iterate_batches, standardize


def quantize(a: np.ndarray) -> np.ndarray:
    """[0, 1] -> uint8 with round-half-up: 0.5 maps to 128."""
    return np.floor(np.asarray(a, dtype=np.float64) * 255 + 0.5).clip(0, 255).astype(np.uint8)


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while blob[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while not blob[end : end + 1].isspace():
            end += 1
        fields.append(blob[pos:end])
        pos = end
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(blob, np.uint8, count=w * h, offset=pos + 1).reshape(h, w)


def attention_maps(model: Classifier, image: np.ndarray, cfg: RunConfig) -> dict[tuple[int, int], np.ndarray]:
    """Eval-mode maps for one uint8 (3, 32, 32) image, keyed (flow, stage)."""
    if model.mode != "attention":
        raise ValueError(f"model in {model.mode} mode produces no attention maps")
    was_training = model.training
    model.eval()
    _, maps = model(Tensor(standardize(image[None], cfg.data_mean, cfg.data_std)))
    model.train(was_training)
    return {k: v.data[0, 0] for k, v in sorted(maps.items())}


def export_attention(model: Classifier, image: np.ndarray, cfg: RunConfig, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    maps = attention_maps(model, image, cfg)
    paths = []
    lines = ["file,flow,stage,height,width\n"]
    for (n, l), m in maps.items():
        p = out / f"attn_f{n}_s{l}.pgm"
        write_pgm(p, quantize(m))
        paths.append(p)
        lines.append(f"{p.name},{n},{l},{m.shape[0]},{m.shape[1]}\n")
    (out / "index.csv").write_text("".join(lines))
    return paths


def localization_ratio(maps: np.ndarray, patches: np.ndarray, image_size: int = 32) -> np.ndarray:
    """Per-sample mean attention inside the patch over mean attention overall."""
    n, h, w = maps.shape
    f = h / image_size
    out = np.empty(n)
    for i in range(n):
        r, c = (patches[i] * f).astype(int)
        size = max(1, int(PATCH * f))
        inside = maps[i, r : r + size, c : c + size].mean()
        out[i] = inside / maps[i].mean()
    return out


def attention_localization_score(model: Classifier, ds: Dataset, cfg: RunConfig, batch_size: int = 250) -> float:
    """Average patch/overall attention ratio of the last flow's stage-1 map."""
    if ds.patches is None:
        raise ValueError("dataset carries no patch metadata")
    if model.mode != "attention":
        raise ValueError(f"model in {model.mode} mode produces no attention maps")
    key = (model.body.plan.num_flows, 1)
    was_training = model.training
    model.eval()
    ratios = []
    for idx in iterate_batches(len(ds), batch_size, None):
        _, maps = model(Tensor(standardize(ds.images[idx], cfg.data_mean, cfg.data_std)))
        if key not in maps:
            raise ValueError("model has a single flow: no attention maps")
        ratios.append(localization_ratio(maps[key].data[:, 0].astype(np.float64), ds.patches[idx]))
    model.train(was_training)
    return float(np.concatenate(ratios).mean())

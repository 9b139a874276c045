"""Root-cause explanations from the attention-refined feature map.

The attention map of a window is the channel mean of the refined map ``F_S``
(``H x W``, one row per process variable). A variable's contribution is the
mean of its row over time, and the root cause is the variable with the largest
contribution, ties going to the lowest index.

Heatmap exports
---------------
CSV: first line ``variable,0,1,...,W-1``; then one line per variable, name first,
values written with ``repr`` so they re-parse exactly.

PGM: binary ``P5``, width ``W``, height ``H``, maxval 255, one comment line
``# min=<repr> max=<repr>`` carrying the scaling range. Pixels are
``round(255 * (v - min) / (max - min))`` with row order equal to variable order.
A constant map is written as mid-gray 128.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data.series import WindowedSample, WindowSet
from .errors import ConfigError, DataError
from .model import SCCAM, ForwardArtifacts

SOURCES = ("refined", "spatial")
FORMATS = ("csv", "pgm")


@dataclass
class AttentionMap:
    values: np.ndarray  # H x W
    variables: list
    times: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.values.shape


@dataclass
class Explanation:
    map: AttentionMap
    contributions: np.ndarray
    ranking: np.ndarray
    scope: str                 # "global" or "local"
    class_id: int
    claims_root_cause: bool    # False for the normal class: ranking is reported, no blame assigned
    n_windows: int = 1

    @property
    def root_cause(self) -> int:
        return int(self.ranking[0])

    @property
    def root_cause_name(self) -> str:
        return self.map.variables[self.root_cause]

    def verdict(self) -> str:
        names = self.map.variables
        rank = "[" + ",".join(names[i] for i in self.ranking) + "]"
        cause = self.root_cause_name if self.claims_root_cause else "none"
        return f"root_cause={cause} rank={rank}"


def attention_maps(artifacts: ForwardArtifacts, source: str = "refined") -> np.ndarray:
    """Per-window ``B x H x W`` maps: channel mean of ``F_S``, or ``A_S`` itself as a diagnostic."""
    if source == "refined":
        return artifacts.refined.data.mean(axis=1)
    if source == "spatial":
        return artifacts.spatial_map.data[:, 0]
    raise ConfigError(f"unknown attention source {source!r}; expected one of {SOURCES}")


def attention_map(artifacts: ForwardArtifacts, index: int = 0, variables: Optional[Sequence[str]] = None,
                  source: str = "refined") -> AttentionMap:
    values = attention_maps(artifacts, source)[index]
    return _wrap(values, variables)


def _wrap(values: np.ndarray, variables) -> AttentionMap:
    h, w = values.shape
    names = list(variables) if variables is not None else [f"X{i + 1}" for i in range(h)]
    if len(names) != h:
        raise ConfigError(f"{len(names)} variable names for a map with {h} rows")
    return AttentionMap(values, names, np.arange(w))


def rank_variables(contributions: np.ndarray) -> np.ndarray:
    """Descending order; the stable sort keeps the lower index first among equals."""
    return np.argsort(-np.asarray(contributions), kind="stable")


def explain_map(amap: AttentionMap, scope: str, class_id: int, normal_class: Optional[int] = 0,
                n_windows: int = 1) -> Explanation:
    contributions = amap.values.mean(axis=1)
    return Explanation(amap, contributions, rank_variables(contributions), scope, int(class_id),
                       class_id != normal_class, n_windows)


def local_explanation(model: SCCAM, window, variables: Optional[Sequence[str]] = None,
                      normal_class: Optional[int] = 0, source: str = "refined") -> Explanation:
    """Explain one window; the class is the model's prediction for it."""
    data = window.data if isinstance(window, WindowedSample) else np.asarray(window, dtype=np.float64)
    art = model.forward(data[None], "infer")
    predicted = int(np.argmax(art.logits.data[0]))
    return explain_map(attention_map(art, 0, variables, source), "local", predicted, normal_class)


def _maps(model: SCCAM, data: np.ndarray, source: str, batch_size: int = 256) -> np.ndarray:
    return np.concatenate([attention_maps(model.forward(data[i:i + batch_size], "infer"), source)
                           for i in range(0, len(data), batch_size)])


def global_explanation(model: SCCAM, test: WindowSet, class_id: int,
                       variables: Optional[Sequence[str]] = None, normal_class: Optional[int] = 0,
                       source: str = "refined") -> Explanation:
    """Explain a class through the element-wise mean of its windows' maps."""
    idx = np.flatnonzero(test.labels == class_id)
    if idx.size == 0:
        raise DataError(f"class {class_id} has no windows in the test set")
    maps = _maps(model, test.data[idx], source)
    return explain_map(_wrap(maps.mean(axis=0), variables), "global", class_id, normal_class, idx.size)


def pgm_pixels(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.full(values.shape, 128, dtype=np.uint8)
    return np.rint(255.0 * (values - lo) / (hi - lo)).astype(np.uint8)


def export_heatmap(explanation, path, fmt: str = "csv") -> Path:
    """Write an explanation's (or a bare :class:`AttentionMap`'s) map as CSV or PGM."""
    if fmt not in FORMATS:
        raise ConfigError(f"unknown heatmap format {fmt!r}; expected one of {FORMATS}")
    amap = explanation.map if isinstance(explanation, Explanation) else explanation
    path = Path(path)
    values = amap.values
    try:
        if fmt == "csv":
            lines = ["variable," + ",".join(str(int(t)) for t in amap.times)]
            lines += [name + "," + ",".join(repr(float(v)) for v in row)
                      for name, row in zip(amap.variables, values)]
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        else:
            h, w = values.shape
            head = f"P5\n# min={float(values.min())!r} max={float(values.max())!r}\n{w} {h}\n255\n"
            path.write_bytes(head.encode("ascii") + pgm_pixels(values).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write heatmap to {path}: {exc.strerror or exc}") from exc
    return path


def read_pgm(path) -> np.ndarray:
    """Pixels of a P5 file written by :func:`export_heatmap`."""
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        if not line.startswith("#"):
            fields.extend(line.split())
    magic, w, h, _ = fields
    if magic != "P5":
        raise DataError(f"{path}: not a binary PGM")
    return np.frombuffer(raw[pos:], dtype=np.uint8).reshape(int(h), int(w))

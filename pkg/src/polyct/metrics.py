"""Classification metrics for material images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MaterialImage

__all__ = ["Metrics", "evaluate", "confusion_matrix", "dice_scores", "write_metrics", "read_metrics"]


def _data(w):
    return w.data if isinstance(w, MaterialImage) else np.asarray(w, dtype=float)


def _labels(w):
    if isinstance(w, MaterialImage):
        return w.labels
    w = np.asarray(w)
    return w if w.ndim == 2 else w.argmax(axis=-1)


def confusion_matrix(truth_labels, pred_labels, n_classes):
    """Counts with rows indexed by the true class."""
    C = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(C, (np.ravel(truth_labels), np.ravel(pred_labels)), 1)
    return C


def dice_scores(C):
    C = np.asarray(C)
    tp = np.diag(C).astype(float)
    denom = C.sum(axis=0) + C.sum(axis=1)
    # a class absent from both images counts as perfectly matched
    return np.divide(2 * tp, denom, out=np.ones_like(tp), where=denom > 0)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    dice: tuple
    rel_l2: float
    confusion: np.ndarray
    material_names: tuple = ()

    def to_items(self):
        names = self.material_names or tuple(f"m{i}" for i in range(len(self.dice)))
        items = [("accuracy", self.accuracy), ("rel_l2", self.rel_l2)]
        items += [(f"dice.{n}", d) for n, d in zip(names, self.dice)]
        for i, a in enumerate(names):
            for j, b in enumerate(names):
                items.append((f"confusion.{a}.{b}", int(self.confusion[i, j])))
        return items


def evaluate(recon, truth, material_names=()) -> Metrics:
    """Argmax classification of ``recon`` against ``truth`` plus relative L2 error."""
    wr, wt = _data(recon), _data(truth)
    if wr.shape != wt.shape:
        raise ValueError(f"shape mismatch {wr.shape} vs {wt.shape}")
    n = wt.shape[-1]
    C = confusion_matrix(_labels(truth), _labels(recon), n)
    acc = float(np.trace(C) / C.sum())
    nt = np.linalg.norm(wt)
    rel = float(np.linalg.norm(wr - wt) / nt) if nt > 0 else float(np.linalg.norm(wr))
    return Metrics(acc, tuple(float(d) for d in dice_scores(C)), rel, C, tuple(material_names))


def write_metrics(m: Metrics, path) -> None:
    with open(path, "w") as fh:
        for k, v in m.to_items():
            fh.write(f"{k} = {v!r}\n")


def read_metrics(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                out[k] = float(v)
    return out

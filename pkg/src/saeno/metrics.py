"""Recovery metrics and the per-epoch report."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import DegenerateAtomError, InvalidArgumentError

ALIGNMENTS = ("none", "sign", "sign+shift")


@dataclass
class RecoveryReport:
    dict_err: List[float] = field(default_factory=list)
    recon_mse: List[float] = field(default_factory=list)
    d_orth: List[float] = field(default_factory=list)
    l_orth: List[Optional[float]] = field(default_factory=list)
    wall_time_s: List[float] = field(default_factory=list)
    initial_dict_err: Optional[float] = None

    def __len__(self):
        return len(self.dict_err)

    def append(self, dict_err, recon_mse, d_orth, l_orth, wall_time_s):
        self.dict_err.append(float(dict_err))
        self.recon_mse.append(float(recon_mse))
        self.d_orth.append(float(d_orth))
        self.l_orth.append(None if l_orth is None else float(l_orth))
        self.wall_time_s.append(float(wall_time_s))

    def validate(self):
        n = len(self.dict_err)
        series = (self.recon_mse, self.d_orth, self.l_orth, self.wall_time_s)
        if any(len(s) != n for s in series):
            raise InvalidArgumentError("report series have different lengths")
        for name in ("dict_err", "recon_mse", "d_orth", "wall_time_s"):
            values = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(values)) or np.any(values < 0):
                raise InvalidArgumentError(f"report series {name} has negative or non-finite entries")

    def epochs_to(self, threshold) -> Optional[int]:
        """First (1-based) epoch whose dictionary error is below ``threshold``."""
        for i, v in enumerate(self.dict_err, start=1):
            if v < threshold:
                return i
        return None

    def final(self):
        if not self.dict_err:
            return {"dict_err": self.initial_dict_err}
        return {
            "dict_err": self.dict_err[-1],
            "recon_mse": self.recon_mse[-1],
            "d_orth": self.d_orth[-1],
            "l_orth": self.l_orth[-1],
        }


def _as_atoms(dictionary):
    """Rows are atoms: columns of a matrix, or flattened kernels of a bank."""
    a = np.asarray(dictionary, dtype=np.float64)
    if a.ndim == 2:
        return a.T
    if a.ndim == 3:
        return a.reshape(a.shape[0], -1)
    raise InvalidArgumentError(f"unsupported dictionary rank {a.ndim}")


def _unit_atoms(atoms):
    norms = np.linalg.norm(atoms, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise DegenerateAtomError(f"atom {bad[0]} has zero norm", atom=int(bad[0]))
    return atoms / norms[:, None]


def greedy_assignment(learned, truth):
    """Match learned atoms to truth atoms by largest ``|<a, b>|`` first.

    Returns ``perm`` with ``learned[perm[i]]`` paired to ``truth[i]``.
    """
    a = _unit_atoms(_as_atoms(learned))
    b = _as_atoms(truth)
    b = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-300)
    score = np.abs(b @ a.T)
    perm = np.full(b.shape[0], -1)
    for _ in range(b.shape[0]):
        i, j = np.unravel_index(np.argmax(score), score.shape)
        perm[i] = j
        score[i, :] = -1.0
        score[:, j] = -1.0
    return perm


def dictionary_error(learned, truth, align="sign", assignment="identity"):
    """Mean over atoms of ``min ||l_i/||l_i|| - s t_i||`` over the alignment group.

    ``align='sign+shift'`` also searches circular shifts of each learned
    kernel along its spatial axis.
    """
    if align not in ALIGNMENTS:
        raise InvalidArgumentError(f"unknown alignment {align!r}")
    learned = np.asarray(learned, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if learned.shape != truth.shape:
        raise InvalidArgumentError(f"shape mismatch: {learned.shape} vs {truth.shape}")
    if assignment == "greedy":
        perm = greedy_assignment(learned, truth)
        learned = learned[:, perm] if learned.ndim == 2 else learned[perm]
    elif assignment != "identity":
        raise InvalidArgumentError(f"unknown assignment {assignment!r}")

    a = _unit_atoms(_as_atoms(learned))
    t = _as_atoms(truth)
    if align == "sign+shift" and learned.ndim == 3:
        n_shift = learned.shape[-1]
        kernels = a.reshape(learned.shape)
        candidates = np.stack([np.roll(kernels, s, axis=-1) for s in range(n_shift)])
        candidates = candidates.reshape(n_shift, a.shape[0], -1)
    else:
        candidates = a[None]
    err = np.linalg.norm(candidates - t[None], axis=2)
    if align != "none":
        err = np.minimum(err, np.linalg.norm(candidates + t[None], axis=2))
    return float(np.mean(err.min(axis=0)))


def gram_orthogonality_loss(matrix):
    """``||G - I||_F / p`` for the Gram matrix of column-normalised atoms."""
    atoms = _as_atoms(matrix)
    if atoms.size == 0:
        raise InvalidArgumentError("empty matrix")
    a = _unit_atoms(atoms)
    gram = a @ a.T
    return float(np.linalg.norm(gram - np.eye(a.shape[0])) / a.shape[0])


def reconstruction_mse(model, data):
    """Mean over samples of ``||x - decode(encode(x))||^2 / x.size``."""
    from .architectures import decode, encode

    samples = data.samples if hasattr(data, "samples") else np.asarray(data)
    if len(samples) == 0:
        raise InvalidArgumentError("empty dataset")
    total = 0.0
    for x in samples:
        r = x - decode(model, encode(model, x))
        total += float(np.sum(r * r)) / x.size
    return total / len(samples)


def _positions(code):
    code = np.asarray(code)
    if code.ndim == 1:
        code = code[None, :]
    maps, idx = np.nonzero(code)
    return list(zip(maps.tolist(), idx.tolist())), code.shape[-1]


def support_f1(code, truth, upsample_factor=1, tolerance=0):
    """F1 of detected nonzero positions against truth positions mapped ``n -> r n``.

    A detected position counts toward precision when some truth spike on the
    same map lies within ``tolerance`` cells (circular distance on the
    detected grid); a truth spike counts toward recall when some detection
    lies within ``tolerance`` of its mapped position.
    """
    if upsample_factor < 1:
        raise InvalidArgumentError("upsample_factor must be >= 1")
    detected, length = _positions(code)
    true_pos, _ = _positions(truth)
    true_pos = [(c, n * upsample_factor) for c, n in true_pos]
    if not detected and not true_pos:
        return 1.0
    if not detected or not true_pos:
        return 0.0

    def near(p, q):
        if p[0] != q[0]:
            return False
        d = abs(p[1] - q[1]) % length
        return min(d, length - d) <= tolerance

    precision = sum(any(near(d, t) for t in true_pos) for d in detected) / len(detected)
    recall = sum(any(near(t, d) for d in detected) for t in true_pos) / len(true_pos)
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def relative_error(x, x_hat):
    denom = float(np.linalg.norm(x))
    if denom == 0.0:
        return 0.0 if float(np.linalg.norm(x_hat)) == 0.0 else math.inf
    return float(np.linalg.norm(np.asarray(x) - np.asarray(x_hat)) / denom)

"""Bot detection from flooding and traceroute features with a linear SVM."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import SingleClassTraining
from .traffic import TraceResult


class Mode(str, enum.Enum):
    JOINT_FM = "joint_fm"
    FUSED_FM_TM = "fused_fm_tm"


@dataclass(frozen=True)
class FloodingMatrix:
    host: int
    start: int
    values: np.ndarray  # links x intervals


@dataclass(frozen=True)
class TracerouteMatrix:
    host: int
    values: np.ndarray  # links x subperiods


@dataclass
class FeatureVector:
    host: int
    mode: Mode
    values: np.ndarray
    label: int | None = None  # 1 bot, 0 legitimate


def extract_fm(
    volumes: np.ndarray,
    hosts: Sequence[int],
    n: int = 10,
    interval: int = 10,
    stride: int = 1,
    t0: int = 0,
) -> dict[int, list[FloodingMatrix]]:
    """Sliding-window flooding matrices per host.

    ``volumes`` has shape (hosts, links, ticks) with rows ordered like
    ``hosts`` and columns by ascending link id. Ticks past the last whole
    interval are ignored. ``stride`` counts intervals.
    """
    if volumes.ndim != 3 or volumes.shape[0] != len(hosts):
        raise ValueError("volumes must have shape (hosts, links, ticks)")
    n_int = volumes.shape[2] // interval
    if n_int < n:
        raise ValueError(f"need at least {n} intervals, got {n_int}")
    binned = volumes[:, :, : n_int * interval].reshape(
        volumes.shape[0], volumes.shape[1], n_int, interval
    ).sum(axis=3)
    out: dict[int, list[FloodingMatrix]] = {}
    for row, host in enumerate(hosts):
        out[host] = [
            FloodingMatrix(host, t0 + s * interval, binned[row, :, s : s + n].copy())
            for s in range(0, n_int - n + 1, stride)
        ]
    return out


def extract_tm(
    traces: Iterable[TraceResult],
    links: Sequence[int],
    DT: int = 5000,
    n_T: int = 5,
    t0: int = 0,
    link_paths: Mapping[tuple[int, int], Sequence[int]] | None = None,
) -> dict[int, TracerouteMatrix]:
    """Count traceroute runs per monitored link and subperiod for each prober.

    A run counts toward a link when the path it probed crosses that link and
    it started inside ``[t0, t0 + DT)``. The probed path is the prober's real
    route; ``link_paths`` may override it per (prober, server).
    """
    if DT % n_T:
        raise ValueError("DT must be divisible by n_T")
    width = DT // n_T
    col = {l: i for i, l in enumerate(links)}
    out: dict[int, np.ndarray] = {}
    for tr in traces:
        if not t0 <= tr.start_tick < t0 + DT:
            continue
        j = (tr.start_tick - t0) // width
        path = link_paths[(tr.prober, tr.dst)] if link_paths is not None else tr.real_path
        m = out.setdefault(tr.prober, np.zeros((len(links), n_T), dtype=np.int64))
        for lid in set(path):
            if lid in col:
                m[col[lid], j] += 1
    return {h: TracerouteMatrix(h, v) for h, v in sorted(out.items())}


def joint_fm(fms: Sequence[FloodingMatrix]) -> np.ndarray:
    """Element-wise maximum over a host's windows."""
    return np.max(np.stack([f.values for f in fms]), axis=0)


def build_features(
    fms: Mapping[int, Sequence[FloodingMatrix]],
    tms: Mapping[int, TracerouteMatrix],
    mode: Mode,
    labels: Mapping[int, int] | None = None,
    tm_shape: tuple[int, int] | None = None,
) -> list[FeatureVector]:
    """Raw (unnormalised) vectors in ascending host order."""
    mode = Mode(mode)
    if mode is Mode.FUSED_FM_TM and tm_shape is None:
        sample = next(iter(tms.values()), None)
        if sample is None:
            raise ValueError("tm_shape is required when no TM exists")
        tm_shape = sample.values.shape
    out = []
    for host in sorted(fms):
        parts = [joint_fm(fms[host]).astype(float).ravel()]
        if mode is Mode.FUSED_FM_TM:
            tm = tms.get(host)
            parts.append(
                tm.values.astype(float).ravel() if tm is not None else np.zeros(math.prod(tm_shape))
            )
        out.append(
            FeatureVector(host, mode, np.concatenate(parts), None if labels is None else labels[host])
        )
    return out


@dataclass(frozen=True)
class MinMax:
    low: np.ndarray
    span: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> MinMax:
        low = X.min(axis=0)
        span = X.max(axis=0) - low
        return cls(low, np.where(span > 0, span, 1.0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return np.clip((X - self.low) / self.span, 0.0, 1.0)


def split_by_host(
    hosts: Sequence[int], labels: Mapping[int, int], fraction: float, seed: int
) -> tuple[list[int], list[int]]:
    """Stratified host split; each class keeps at least one host per side when possible."""
    if not 0 < fraction < 1:
        raise ValueError("training fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in sorted({labels[h] for h in hosts}):
        members = sorted(h for h in hosts if labels[h] == cls)
        order = [members[i] for i in rng.permutation(len(members))]
        k = round(fraction * len(order))
        if len(order) > 1:
            k = min(max(k, 1), len(order) - 1)
        train.extend(order[:k])
        test.extend(order[k:])
    return sorted(train), sorted(test)


# -- linear SVM --------------------------------------------------------------------


@dataclass(frozen=True)
class SvmConfig:
    epochs: int = 60
    lam: float = 1e-3
    lr: float | None = None  # None: Pegasos schedule 1/(lam*t)


@dataclass
class SvmModel:
    weights: np.ndarray
    bias: float
    slope: float
    intercept: float
    config: SvmConfig = field(default_factory=SvmConfig)
    seed: int = 0
    normalizer: MinMax | None = None

    def margin(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.bias

    def confidence(self, X: np.ndarray) -> np.ndarray:
        """Calibrated probability that each row is a bot."""
        return _sigmoid(self.slope * self.margin(X) + self.intercept)

    def to_json(self) -> dict:
        out = {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "calibration": {"slope": self.slope, "intercept": self.intercept},
            "config": asdict(self.config),
            "seed": self.seed,
        }
        if self.normalizer is not None:
            out["normalizer"] = {
                "low": self.normalizer.low.tolist(),
                "span": self.normalizer.span.tolist(),
            }
        return out

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def from_json(cls, data: Mapping) -> SvmModel:
        norm = data.get("normalizer")
        return cls(
            np.array(data["weights"], dtype=float),
            float(data["bias"]),
            float(data["calibration"]["slope"]),
            float(data["calibration"]["intercept"]),
            SvmConfig(**data["config"]),
            int(data["seed"]),
            MinMax(np.array(norm["low"]), np.array(norm["span"])) if norm else None,
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def train_svm(
    X: np.ndarray, y: Sequence[int], seed: int = 0, config: SvmConfig | None = None
) -> SvmModel:
    """Hinge-loss SVM by stochastic subgradient descent, then Platt calibration.

    Labels are 1 for bot and 0 for legitimate. The bias is not regularised.
    """
    config = config or SvmConfig()
    X = np.asarray(X, dtype=float)
    y01 = np.asarray(y, dtype=int)
    if len(set(y01.tolist())) < 2:
        raise SingleClassTraining("training data must contain both classes")
    ys = np.where(y01 == 1, 1.0, -1.0)
    rng = np.random.default_rng(seed)
    w = np.zeros(X.shape[1])
    b = 0.0
    t = 0
    for _ in range(config.epochs):
        for i in rng.permutation(len(X)):
            t += 1
            eta = config.lr if config.lr is not None else 1.0 / (config.lam * (t + 1))
            eta = min(eta, 1.0)
            hinge = ys[i] * (X[i] @ w + b) < 1
            w *= 1.0 - eta * config.lam
            if hinge:
                w += eta * ys[i] * X[i]
                b += eta * ys[i]
    margins = X @ w + b
    slope, intercept = _platt(margins, y01)
    return SvmModel(w, float(b), slope, intercept, config, seed)


def _platt(margins: np.ndarray, y01: np.ndarray, iters: int = 100) -> tuple[float, float]:
    """Fit p = sigmoid(a*m + c) by Newton's method on smoothed targets."""
    n_pos = int(y01.sum())
    n_neg = len(y01) - n_pos
    target = np.where(y01 == 1, (n_pos + 1) / (n_pos + 2), 1 / (n_neg + 2))
    a, c = 1.0, 0.0
    for _ in range(iters):
        p = _sigmoid(a * margins + c)
        g = np.array([((p - target) * margins).sum(), (p - target).sum()])
        s = p * (1 - p) + 1e-12
        H = np.array(
            [[(s * margins * margins).sum(), (s * margins).sum()], [(s * margins).sum(), s.sum()]]
        ) + 1e-9 * np.eye(2)
        step = np.linalg.solve(H, g)
        a, c = a - step[0], c - step[1]
        if np.abs(step).max() < 1e-10:
            break
    return max(float(a), 1e-6), float(c)


@dataclass(frozen=True)
class Metrics:
    detection_rate: float | None
    false_positive_rate: float | None
    tp: int
    fn: int
    fp: int
    tn: int
    ct_svm: float

    def to_json(self) -> dict:
        return asdict(self)


def rates(tp: int, fn: int, fp: int, tn: int, ct_svm: float = 0.5) -> Metrics:
    dr = tp / (tp + fn) if tp + fn else None
    fpr = fp / (fp + tn) if fp + tn else None
    return Metrics(dr, fpr, tp, fn, fp, tn, ct_svm)


def evaluate(model: SvmModel, X: np.ndarray, y: Sequence[int], ct_svm: float = 0.5) -> Metrics:
    """Predict bot only when calibrated confidence exceeds ``ct_svm``."""
    if not 0 <= ct_svm <= 1:
        raise ValueError("CT_svm must lie in [0, 1]")
    y01 = np.asarray(y, dtype=int)
    pred = model.confidence(X) > ct_svm if len(y01) else np.zeros(0, dtype=bool)
    tp = int((pred & (y01 == 1)).sum())
    fn = int((~pred & (y01 == 1)).sum())
    fp = int((pred & (y01 == 0)).sum())
    tn = int((~pred & (y01 == 0)).sum())
    return rates(tp, fn, fp, tn, ct_svm)


def write_features_csv(vectors: Sequence[FeatureVector], path: str | Path) -> None:
    width = max((len(v.values) for v in vectors), default=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["host_id", "mode"] + [f"v{i}" for i in range(width)] + ["label"])
        for v in vectors:
            label = "" if v.label is None else ("bot" if v.label == 1 else "legitimate")
            writer.writerow([v.host, v.mode.value] + [repr(float(x)) for x in v.values] + [label])

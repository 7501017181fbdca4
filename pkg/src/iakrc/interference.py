"""Directional interference potential field and the attack-intent predictor."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .world import HISTORY_LEN, MOVES, TRAJECTORY_LEN, Cell, EntityState

logger = logging.getLogger(__name__)

EPS = 1e-8
INPUT_DIM = 2 * HISTORY_LEN + 1
DEFAULT_DIMS = (INPUT_DIM, 128, 64, 2)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ThreatParams:
    i_config: float = 2.0
    lambda_base: float = 0.3
    alpha: float = 0.5
    influence_range: float = 5.0
    cost_multiplier: float = 1.5

    def __post_init__(self):
        if self.i_config < 0 or self.alpha < 0 or self.cost_multiplier < 0:
            raise ValueError("i_config, alpha and cost_multiplier must be non-negative")
        if self.lambda_base <= 0 or self.influence_range <= 0:
            raise ValueError("lambda_base and influence_range must be positive")

    @classmethod
    def from_params(cls, params) -> "ThreatParams":
        return cls(params.i_config, params.lambda_base, params.alpha,
                   params.influence_range, params.cost_multiplier)


# ---------------------------------------------------------------------------
# threat and field


def mean_displacement(e: EntityState) -> float:
    tail = list(e.trajectory)[-HISTORY_LEN:]
    if len(tail) < 2:
        return 0.0
    steps = [math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(tail, tail[1:])]
    return sum(steps) / len(steps)


def threat_level(e: EntityState) -> float:
    t_move = min(1.0, len(e.trajectory) / TRAJECTORY_LEN)
    t_attack = min(1.0, e.recent_attacks / 10.0)
    t_health = e.health
    t_mobility = min(1.0, mean_displacement(e) / 3.0)
    return (t_move + t_attack + t_health + t_mobility) / 4.0


def base_influence(e: EntityState, p: ThreatParams) -> float:
    return p.i_config * threat_level(e)


def effective_distance(d_actual: float, theta: float, alpha: float) -> float:
    """Distance stretched by up to ``1 + 2 alpha`` as the query turns away from the intent."""
    return d_actual * (1.0 + alpha * (1.0 - math.cos(theta)))


def angle_between(u: Sequence[float], v: Sequence[float]) -> float:
    """Unsigned angle in [0, pi]; 0 when either vector is (numerically) zero."""
    nu = math.hypot(u[0], u[1])
    nv = math.hypot(v[0], v[1])
    if nu < EPS or nv < EPS:
        return 0.0
    c = (u[0] * v[0] + u[1] * v[1]) / (nu * nv)
    return math.acos(max(-1.0, min(1.0, c)))


def influence_at(x: Cell, e: EntityState, net: "IntentNet", p: ThreatParams,
                 intent: Optional[np.ndarray] = None) -> float:
    d_actual = math.dist(x, e.position)
    if d_actual > p.influence_range:
        return 0.0
    if intent is None:
        intent = intent_vector(net, e)
    theta = angle_between(intent, (x[0] - e.position[0], x[1] - e.position[1]))
    d_eff = effective_distance(d_actual, theta, p.alpha)
    return base_influence(e, p) * math.exp(-p.lambda_base * d_eff)


def enemy_field(e: EntityState, intent: np.ndarray, p: ThreatParams, shape: tuple[int, int]) -> np.ndarray:
    """``I(p | e)`` for every cell of a ``(height, width)`` grid, zero beyond the influence range."""
    height, width = shape
    ex, ey = e.position
    r = int(math.floor(p.influence_range))
    x0, x1 = max(0, ex - r), min(width, ex + r + 1)
    y0, y1 = max(0, ey - r), min(height, ey + r + 1)
    out = np.zeros(shape)
    if x0 >= x1 or y0 >= y1:
        return out
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx = (xs - ex).astype(float)
    dy = (ys - ey).astype(float)
    d_actual = np.hypot(dx, dy)
    inside = d_actual <= p.influence_range
    nv = math.hypot(float(intent[0]), float(intent[1]))
    if nv < EPS:
        theta = np.zeros_like(d_actual)
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            c = (dx * intent[0] + dy * intent[1]) / (d_actual * nv)
        c = np.where(d_actual < EPS, 1.0, np.clip(c, -1.0, 1.0))
        theta = np.arccos(c)
    d_eff = d_actual * (1.0 + p.alpha * (1.0 - np.cos(theta)))
    values = base_influence(e, p) * np.exp(-p.lambda_base * d_eff)
    out[y0:y1, x0:x1] = np.where(inside, values, 0.0)
    return out


# ---------------------------------------------------------------------------
# intent network


class IntentSample(NamedTuple):
    input: np.ndarray  # (21,)
    target: np.ndarray  # (2,)


def featurize(e: EntityState) -> np.ndarray:
    """Last ten positions relative to the current one (x, y interleaved), then health."""
    cx, cy = e.position
    feats = []
    for px, py in e.last10:
        feats.extend((px - cx, py - cy))
    feats.append(e.health)
    return np.asarray(feats, dtype=float)


class IntentNet:
    """ReLU MLP mapping an enemy feature vector to a 2-D intent vector."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix")
        for w, b in zip(weights, biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError("weight/bias shapes do not chain")
        for a, b in zip(weights, weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("layer widths do not chain")
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]

    @classmethod
    def init(cls, rng: np.random.Generator, dims: Sequence[int] = DEFAULT_DIMS) -> "IntentNet":
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(dims, dims[1:])):
            last = i == len(dims) - 2
            scale = math.sqrt(1.0 / n_in) if last else math.sqrt(2.0 / n_in)
            weights.append(rng.normal(0.0, scale, size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, dims: Sequence[int] = DEFAULT_DIMS) -> "IntentNet":
        return cls([np.zeros((a, b)) for a, b in zip(dims, dims[1:])], [np.zeros(b) for b in dims[1:]])

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "IntentNet":
        return IntentNet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray, keep: bool = False):
        """Batch forward pass; with ``keep`` also returns per-layer activations for backprop."""
        h = np.atleast_2d(np.asarray(x, dtype=float))
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return (h, acts) if keep else h

    def to_json(self) -> dict:
        return {
            "format": "iakrc-intent-net",
            "activation": "relu",
            "layers": [
                {"shape": list(w.shape), "weights": w.ravel().tolist(), "bias": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "IntentNet":
        try:
            layers = doc["layers"]
            weights = [np.asarray(l["weights"], dtype=float).reshape(l["shape"]) for l in layers]
            biases = [np.asarray(l["bias"], dtype=float) for l in layers]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed intent-net document: {exc}") from None
        return cls(weights, biases)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "IntentNet":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def intent_forward(net: IntentNet, x: np.ndarray) -> np.ndarray:
    return net.forward(x)[0]


def intent_vector(net: IntentNet, e: EntityState) -> np.ndarray:
    return intent_forward(net, featurize(e))


def predict_intent_angle(net: IntentNet, e: EntityState, x: Cell, intent: Optional[np.ndarray] = None) -> float:
    if intent is None:
        intent = intent_vector(net, e)
    return angle_between(intent, (x[0] - e.position[0], x[1] - e.position[1]))


def intent_loss(pred: Sequence[float], true: Sequence[float]) -> float:
    """Negative cosine similarity shifted to [0, 2]."""
    np_, nt = math.hypot(pred[0], pred[1]), math.hypot(true[0], true[1])
    if np_ < EPS or nt < EPS:
        return 1.0
    return 1.0 - (pred[0] * true[0] + pred[1] * true[1]) / (np_ * nt + EPS)


def _batch_loss(pred: np.ndarray, true: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row loss and its gradient with respect to ``pred``."""
    np_ = np.linalg.norm(pred, axis=1)
    nt = np.linalg.norm(true, axis=1)
    live = (np_ >= EPS) & (nt >= EPS)
    dot = np.einsum("ij,ij->i", pred, true)
    denom = np_ * nt + EPS
    loss = np.where(live, 1.0 - dot / denom, 1.0)
    safe_np = np.where(live, np_, 1.0)
    grad = -(true / denom[:, None] - (dot * nt / denom**2)[:, None] * pred / safe_np[:, None])
    grad[~live] = 0.0
    return loss, grad


def loss_and_gradients(net: IntentNet, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean intent loss over the batch and its gradient for every parameter, in ``net.params`` order."""
    out, acts = net.forward(x, keep=True)
    loss, g = _batch_loss(out, np.atleast_2d(y))
    g = g / len(loss)
    grads_w, grads_b = [], []
    for i in range(len(net.weights) - 1, -1, -1):
        grads_w.append(acts[i].T @ g)
        grads_b.append(g.sum(axis=0))
        if i > 0:
            g = (g @ net.weights[i].T) * (acts[i] > 0)
    grads = []
    for gw, gb in zip(reversed(grads_w), reversed(grads_b)):
        grads.extend((gw, gb))
    return float(loss.mean()), grads


def mean_loss(net: IntentNet, x: np.ndarray, y: np.ndarray) -> float:
    loss, _ = _batch_loss(net.forward(x), np.atleast_2d(y))
    return float(loss.mean())


def train_intent(
    net: IntentNet,
    data: Sequence[IntentSample],
    epochs: int,
    lr: float = 5e-4,
    batch_size: int = 32,
    rng: Optional[np.random.Generator] = None,
    history: Optional[list] = None,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> IntentNet:
    """Minibatch Adam on the mean intent loss; returns a trained copy of ``net``.

    After every epoch the full-dataset mean loss is logged and appended to
    ``history`` as ``(epoch, loss)``.
    """
    if not data:
        raise ValueError("training data is empty")
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    net = net.copy()
    x = np.stack([s.input for s in data]).astype(float)
    y = np.stack([s.target for s in data]).astype(float)
    params = net.params
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2 = betas
    step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(x))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            loss, grads = loss_and_gradients(net, x[idx], y[idx])
            if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch starting {start}")
            step += 1
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= b1
                mi += (1 - b1) * g
                vi *= b2
                vi += (1 - b2) * g * g
                m_hat = mi / (1 - b1**step)
                v_hat = vi / (1 - b2**step)
                p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        epoch_loss = mean_loss(net, x, y)
        if not math.isfinite(epoch_loss):
            raise TrainingError(f"non-finite loss {epoch_loss} after epoch {epoch}")
        logger.info("intent epoch %d loss %.6f", epoch, epoch_loss)
        if history is not None:
            history.append((epoch, epoch_loss))
    return net


# ---------------------------------------------------------------------------
# datasets


def straight_line_samples(n: int, rng: np.random.Generator, headings: Optional[Sequence[Cell]] = None) -> list[IntentSample]:
    """Synthetic movers that kept one grid heading; the target is that heading."""
    headings = list(headings) if headings is not None else list(MOVES.values())
    out = []
    for _ in range(n):
        dx, dy = headings[int(rng.integers(len(headings)))]
        seen = int(rng.integers(2, HISTORY_LEN + 1))
        rel = [(0, 0)] * (HISTORY_LEN - seen) + [(-k * dx, -k * dy) for k in range(seen - 1, -1, -1)]
        feats = [c for xy in rel for c in xy] + [float(rng.uniform(0.1, 1.0))]
        out.append(IntentSample(np.asarray(feats, dtype=float), np.asarray((dx, dy), dtype=float)))
    return out


CSV_HEADER = [f"f{i}" for i in range(INPUT_DIM)] + ["vx", "vy"]


def write_samples_csv(path, samples: Iterable[IntentSample]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for s in samples:
            writer.writerow([repr(float(v)) for v in s.input] + [repr(float(v)) for v in s.target])


def read_samples_csv(path) -> list[IntentSample]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or (lineno == 1 and row[0] == CSV_HEADER[0]):
                continue
            if len(row) != INPUT_DIM + 2:
                raise ValueError(f"{path}:{lineno}: expected {INPUT_DIM + 2} columns, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value") from None
            out.append(IntentSample(np.asarray(values[:INPUT_DIM]), np.asarray(values[INPUT_DIM:])))
    return out

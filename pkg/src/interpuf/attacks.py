"""Modeling attacks: CRP datasets, logistic regression and a tanh MLP written on numpy.

Exposure modes:
  oracle    labels are the device's majority-voted response bits
  deployed  labels come from the response combiner, one +/-1 symbol per
            challenge, so the raw bits never reach the attacker
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DeploymentBarrierError, DivergenceError, InvalidParameterError
from .grid import GridPUF
from .mesh import response_combine
from .puf import DEFAULT_R, phi_map, vote
from .rng import stream

N_TRAIN = 8000
N_TEST = 3000
FEATURE_MODES = ("raw", "phi", "lifted")
EXPOSURES = ("oracle", "deployed")


def attack_features(challenges, mode: str = "phi") -> np.ndarray:
    """Attacker-side features of the external challenge.

    ``lifted`` appends products of neighbouring parity features to phi.
    """
    c = np.asarray(challenges, dtype=np.uint8)
    if mode == "raw":
        return 1.0 - 2.0 * c
    phi = phi_map(c)
    if mode == "phi":
        return phi
    if mode == "lifted":
        return np.concatenate([phi, phi[:, :-2] * phi[:, 1:-1]], axis=1)
    raise InvalidParameterError(f"unknown feature mode {mode!r}")


@dataclass(frozen=True)
class AttackDataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    feature_mode: str
    exposure: str

    @property
    def n_features(self) -> int:
        return self.train_x.shape[1]


def _unique_challenges(seed: int, count: int, width: int) -> np.ndarray:
    rng = stream(seed, "attack-challenges", width)
    seen: set[bytes] = set()
    rows = []
    while len(rows) < count:
        c = rng.integers(0, 2, width, dtype=np.uint8)
        key = np.packbits(c).tobytes()
        if key not in seen:
            seen.add(key)
            rows.append(c)
    return np.stack(rows)


def build_dataset(puf: GridPUF, seed: int, feature_mode: str = "phi", exposure: str = "oracle",
                  labels: str = "auto", n_train: int = N_TRAIN, n_test: int = N_TEST,
                  repetitions: int = DEFAULT_R) -> AttackDataset:
    """Fixed, disjoint train/test CRPs for one device.

    ``labels="raw"`` asks for response bits; the deployed interface refuses.
    """
    if exposure not in EXPOSURES:
        raise InvalidParameterError(f"unknown exposure {exposure!r}")
    if exposure == "deployed" and labels == "raw":
        raise DeploymentBarrierError("the deployed interface only releases combiner symbols")
    if labels not in ("auto", "raw"):
        raise InvalidParameterError(f"unknown label source {labels!r}")
    challenges = _unique_challenges(seed, n_train + n_test, puf.width)
    bits, _ = vote(puf.reads(challenges, repetitions, stream(seed, "attack-reads")))
    if exposure == "deployed":
        symbols, n = response_combine(bits)
        y = ((1 - symbols[:n]) // 2).astype(np.uint8)
    else:
        y = bits.astype(np.uint8)
    x = attack_features(challenges, feature_mode)
    return AttackDataset(x[:n_train], y[:n_train], x[n_train:], y[n_train:], feature_mode, exposure)


def with_labels(ds: AttackDataset, train_y, test_y) -> AttackDataset:
    return AttackDataset(ds.train_x, np.asarray(train_y, dtype=np.uint8), ds.test_x,
                         np.asarray(test_y, dtype=np.uint8), ds.feature_mode, ds.exposure)


# -- scoring ------------------------------------------------------------------


def auc(scores, labels) -> float:
    """Area under the ROC curve by the trapezoid rule over every distinct threshold."""
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = np.asarray(labels).astype(bool).reshape(-1)
    pos, neg = int(y.sum()), int((~y).sum())
    if pos == 0 or neg == 0:
        raise InvalidParameterError("AUC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tpr = np.r_[0.0, np.cumsum(y)[last_of_group] / pos]
    fpr = np.r_[0.0, np.cumsum(~y)[last_of_group] / neg]
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2))


def accuracy(probabilities, labels) -> float:
    return float(np.mean((np.asarray(probabilities) >= 0.5) == np.asarray(labels).astype(bool)))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _bce(p, y) -> float:
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


@dataclass
class TrainingCurve:
    epochs: list[int] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)

    def record(self, epoch: int, train: float, test: float, loss: float) -> None:
        self.epochs.append(epoch)
        self.train_acc.append(train)
        self.test_acc.append(test)
        self.loss.append(loss)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_acc", "test_acc"])
            for e, a, b in zip(self.epochs, self.train_acc, self.test_acc):
                w.writerow([e, f"{a:.6f}", f"{b:.6f}"])


@dataclass(frozen=True)
class AttackResult:
    model: str
    train_accuracy: float
    test_accuracy: float
    test_auc: float
    epochs_run: int

    def to_json(self) -> dict:
        return {"model": self.model, "train_accuracy": round(self.train_accuracy, 6),
                "test_accuracy": round(self.test_accuracy, 6), "test_auc": round(self.test_auc, 6),
                "epochs_run": self.epochs_run}


# -- logistic regression ------------------------------------------------------


@dataclass
class LogisticRegression:
    weights: np.ndarray
    bias: float = 0.0

    @classmethod
    def zeros(cls, n_features: int) -> "LogisticRegression":
        return cls(np.zeros(n_features))

    def predict_proba(self, x) -> np.ndarray:
        return _sigmoid(np.asarray(x) @ self.weights + self.bias)

    def loss_and_grad(self, x, y) -> tuple[float, np.ndarray, float]:
        p = self.predict_proba(x)
        err = p - y
        return _bce(p, y), x.T @ err / len(y), float(err.mean())


def train_logistic_regression(ds: AttackDataset, epochs: int = 2000, learning_rate: float = 1.0,
                              tol: float = 1e-7, patience: int = 20) -> tuple[LogisticRegression, AttackResult, TrainingCurve]:
    """Full-batch gradient descent; stops once the train loss stops improving by ``tol``."""
    model = LogisticRegression.zeros(ds.n_features)
    curve = TrainingCurve()
    y = ds.train_y.astype(float)
    best, stale, epoch = np.inf, 0, 0
    for epoch in range(1, epochs + 1):
        loss, gw, gb = model.loss_and_grad(ds.train_x, y)
        if not np.isfinite(loss):
            raise DivergenceError(f"logistic regression loss diverged at epoch {epoch}")
        model.weights -= learning_rate * gw
        model.bias -= learning_rate * gb
        curve.record(epoch, accuracy(model.predict_proba(ds.train_x), ds.train_y),
                     accuracy(model.predict_proba(ds.test_x), ds.test_y), loss)
        stale = stale + 1 if best - loss < tol else 0
        best = min(best, loss)
        if stale >= patience:
            break
    scores = model.predict_proba(ds.test_x)
    result = AttackResult("logistic_regression", curve.train_acc[-1] if curve.epochs else 0.5,
                          accuracy(scores, ds.test_y), auc(scores, ds.test_y), epoch)
    return model, result, curve


# -- multilayer perceptron ----------------------------------------------------


@dataclass
class MLP:
    """One tanh hidden layer and a sigmoid output unit."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, n_features: int, hidden: int, rng: np.random.Generator) -> "MLP":
        w1 = rng.normal(0.0, 1.0 / np.sqrt(n_features), (n_features, hidden))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), hidden)
        return cls(w1, np.zeros(hidden), w2, np.zeros(1))

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def predict_proba(self, x) -> np.ndarray:
        return _sigmoid(np.tanh(x @ self.w1 + self.b1) @ self.w2 + self.b2[0])

    def loss_and_grads(self, x, y) -> tuple[float, list[np.ndarray]]:
        h = np.tanh(x @ self.w1 + self.b1)
        p = _sigmoid(h @ self.w2 + self.b2[0])
        err = (p - y) / len(y)
        gw2 = h.T @ err
        gb2 = np.array([err.sum()])
        dh = np.outer(err, self.w2) * (1 - h * h)
        return _bce(p, y), [x.T @ dh, dh.sum(axis=0), gw2, gb2]


def train_mlp(ds: AttackDataset, epochs: int = 1000, hidden: int | None = None, learning_rate: float = 0.01,
              seed: int = 0) -> tuple[MLP, AttackResult, TrainingCurve]:
    """Full-batch Adam; hidden width defaults to the feature count."""
    rng = stream(seed, "mlp-init")
    model = MLP.init(ds.n_features, hidden or ds.n_features, rng)
    curve = TrainingCurve()
    y = ds.train_y.astype(float)
    m = [np.zeros_like(p) for p in model.params()]
    v = [np.zeros_like(p) for p in model.params()]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for epoch in range(1, epochs + 1):
        loss, grads = model.loss_and_grads(ds.train_x, y)
        if not np.isfinite(loss):
            raise DivergenceError(f"MLP loss diverged at epoch {epoch}")
        for p, g, mi, vi in zip(model.params(), grads, m, v):
            mi *= beta1
            mi += (1 - beta1) * g
            vi *= beta2
            vi += (1 - beta2) * g * g
            p -= learning_rate * (mi / (1 - beta1**epoch)) / (np.sqrt(vi / (1 - beta2**epoch)) + eps)
        curve.record(epoch, accuracy(model.predict_proba(ds.train_x), ds.train_y),
                     accuracy(model.predict_proba(ds.test_x), ds.test_y), loss)
    scores = model.predict_proba(ds.test_x)
    train_acc = accuracy(model.predict_proba(ds.train_x), ds.train_y)
    return model, AttackResult("mlp", train_acc, accuracy(scores, ds.test_y), auc(scores, ds.test_y), epochs), curve

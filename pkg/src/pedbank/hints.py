"""Learnable additive hints trained through binary pedestrian classification.

Each selected codeword is refined by adding a per-codeword hint vector; the
composed feature (codeword plus hint) feeds a two-layer rectifier head that
scores pedestrian versus background. Codewords stay frozen: gradients flow
only into the classifier and the hint row selected by the routing argmax.
Every training step draws one pedestrian and one background sample, sums
their two loss gradients, and applies a single SGD update.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingDataset
from .errors import DimensionError, NumericalError, PreconditionError
from .quantizer import Codebook, quantize


@dataclass(frozen=True)
class HintSet:
    """One additive hint row per codeword."""

    n: int
    dim: int
    hints: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.hints, dtype=np.float64)
        object.__setattr__(self, "hints", mat)
        if mat.shape != (self.n, self.dim):
            raise DimensionError(
                f"hints shape {mat.shape} does not match (n, dim)=({self.n}, {self.dim})"
            )
        if not np.all(np.isfinite(mat)):
            raise PreconditionError("hints must be finite")


@dataclass
class ClassifierParams:
    """Two-layer rectifier head: logit = w2 @ relu(w1 @ x + b1) + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = float(self.b2)
        hidden = self.w1.shape[0] if self.w1.ndim == 2 else 0
        if hidden < 1 or self.b1.shape != (hidden,) or self.w2.shape != (1, hidden):
            raise DimensionError(
                "classifier shapes must be w1 (hidden, dim), b1 (hidden,), w2 (1, hidden)"
            )
        for arr in (self.w1, self.b1, self.w2):
            if not np.all(np.isfinite(arr)):
                raise PreconditionError("classifier parameters must be finite")
        if not math.isfinite(self.b2):
            raise PreconditionError("classifier parameters must be finite")

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def dim(self) -> int:
        return self.w1.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    steps: int
    seed: int = 0
    hidden: int = 128
    train_hints: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise PreconditionError("lr must be positive")
        if self.steps < 1:
            raise PreconditionError("steps must be at least 1")
        if self.hidden < 1:
            raise PreconditionError("hidden must be at least 1")


@dataclass(frozen=True)
class StepRecord:
    """One training step: total loss plus the per-sample selections."""

    loss: float
    ped_index: int
    ped_loss: float
    bg_index: int
    bg_loss: float


@dataclass(frozen=True)
class ForwardCache:
    """Intermediates of one forward pass, consumed by ``backward``."""

    index: int
    x: np.ndarray
    pre: np.ndarray
    hid: np.ndarray
    logit: float
    w1: np.ndarray = field(repr=False)
    w2: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class ClassifierGrads:
    """Loss gradients for the classifier and the selected hint row."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    hint: np.ndarray
    index: int


def init_hints(n: int, dim: int, seed: int) -> HintSet:
    """Zero-mean Gaussian hints at scale 0.01, deterministic per seed."""
    if n < 1 or dim < 1:
        raise PreconditionError("n and dim must be positive")
    rng = np.random.default_rng(seed)
    return HintSet(n=n, dim=dim, hints=rng.normal(0.0, 0.01, size=(n, dim)))


def init_classifier(dim: int, hidden: int, seed: int) -> ClassifierParams:
    """1/sqrt(fan-in) Gaussian weights, zero biases, deterministic per seed."""
    if dim < 1 or hidden < 1:
        raise PreconditionError("dim and hidden must be positive")
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(hidden, dim))
    w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(1, hidden))
    return ClassifierParams(w1=w1, b1=np.zeros(hidden), w2=w2, b2=0.0)


def compose(codebook: Codebook, hints: HintSet) -> np.ndarray:
    """Elementwise sum of codewords and hints: the composed bank features."""
    if (codebook.n, codebook.dim) != (hints.n, hints.dim):
        raise DimensionError(
            f"codebook (n, dim)=({codebook.n}, {codebook.dim}) does not match "
            f"hints ({hints.n}, {hints.dim})"
        )
    return codebook.centroids + hints.hints


def forward_classify(p, codebook: Codebook, hints: HintSet, classifier: ClassifierParams):
    """Route ``p`` to its nearest codeword and score the composed feature.

    Returns ``(logit, cache)``; the probe influences the logit only through
    the routing index, so codeword selection is unchanged by hint training.
    """
    if (codebook.n, codebook.dim) != (hints.n, hints.dim):
        raise DimensionError("codebook and hints disagree on (n, dim)")
    if classifier.dim != codebook.dim:
        raise DimensionError(
            f"classifier input dimension {classifier.dim} != codebook dimension {codebook.dim}"
        )
    index = quantize(p, codebook)
    x = codebook.centroids[index] + hints.hints[index]
    pre = classifier.w1 @ x + classifier.b1
    hid = np.maximum(pre, 0.0)
    logit = float(classifier.w2[0] @ hid + classifier.b2)
    cache = ForwardCache(
        index=index, x=x, pre=pre, hid=hid, logit=logit,
        w1=classifier.w1, w2=classifier.w2,
    )
    return logit, cache


def bce_loss(logit: float, label: int) -> float:
    """Sigmoid cross-entropy from the logit: softplus(logit) - label * logit.

    Evaluated as max(x, 0) - x * label + log1p(exp(-|x|)), which stays
    finite for any finite logit.
    """
    if label not in (0, 1):
        raise PreconditionError(f"label must be 0 or 1, got {label!r}")
    x = float(logit)
    if not math.isfinite(x):
        raise NumericalError(f"non-finite logit {x!r}")
    return max(x, 0.0) - x * label + math.log1p(math.exp(-abs(x)))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def backward(cache: ForwardCache, label: int) -> ClassifierGrads:
    """Analytic loss gradients at the cached forward pass.

    Covers the classifier parameters and the hint row selected during the
    forward pass; every other hint row receives exactly zero gradient and
    the codebook receives none.
    """
    if label not in (0, 1):
        raise PreconditionError(f"label must be 0 or 1, got {label!r}")
    d_logit = _sigmoid(cache.logit) - float(label)
    d_w2 = (d_logit * cache.hid)[None, :]
    d_hid = d_logit * cache.w2[0]
    d_pre = np.where(cache.pre > 0.0, d_hid, 0.0)
    d_w1 = np.outer(d_pre, cache.x)
    d_hint = cache.w1.T @ d_pre
    return ClassifierGrads(
        w1=d_w1, b1=d_pre, w2=d_w2, b2=d_logit, hint=d_hint, index=cache.index
    )


def train_hints(
    pedestrians: EmbeddingDataset,
    backgrounds: EmbeddingDataset,
    codebook: Codebook,
    config: TrainConfig,
) -> tuple[HintSet, ClassifierParams, list[StepRecord]]:
    """SGD over paired pedestrian/background samples.

    Hints start from ``init_hints(n, dim, config.seed)``, the classifier
    from ``init_classifier(dim, config.hidden, config.seed + 1)``, and
    sample draws use seed ``config.seed + 2``. Each step forwards one
    uniformly drawn embedding of each label through the current parameters,
    sums the two gradients, and applies one update to the classifier and,
    when ``config.train_hints`` is set, to the selected hint rows. With it
    unset the returned hints equal their initialization exactly.
    """
    if len(pedestrians) == 0 or len(backgrounds) == 0:
        raise PreconditionError("hint training requires records of both labels")
    for name, ds in (("pedestrian", pedestrians), ("background", backgrounds)):
        if ds.dim != codebook.dim:
            raise DimensionError(
                f"{name} dataset dimension {ds.dim} != codebook dimension {codebook.dim}"
            )
    hints = init_hints(codebook.n, codebook.dim, config.seed)
    hints = HintSet(n=hints.n, dim=hints.dim, hints=hints.hints.copy())
    clf = init_classifier(codebook.dim, config.hidden, config.seed + 1)
    rng = np.random.default_rng(config.seed + 2)
    ped_mat = pedestrians.matrix()
    bg_mat = backgrounds.matrix()

    history: list[StepRecord] = []
    lr = config.lr
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(config.steps):
            i_ped = int(rng.integers(len(pedestrians)))
            i_bg = int(rng.integers(len(backgrounds)))
            samples = ((ped_mat[i_ped], 1), (bg_mat[i_bg], 0))
            losses: list[float] = []
            grads: list[ClassifierGrads] = []
            for vec, label in samples:
                logit, cache = forward_classify(vec, codebook, hints, clf)
                if not math.isfinite(logit):
                    raise NumericalError(
                        f"non-finite logit at step {step} "
                        f"(label {label}, codeword {cache.index})"
                    )
                losses.append(bce_loss(logit, label))
                grads.append(backward(cache, label))
            total = losses[0] + losses[1]
            if not math.isfinite(total):
                raise NumericalError(
                    f"non-finite loss at step {step} "
                    f"(pedestrian loss {losses[0]}, background loss {losses[1]})"
                )
            clf.w1 -= lr * (grads[0].w1 + grads[1].w1)
            clf.b1 -= lr * (grads[0].b1 + grads[1].b1)
            clf.w2 -= lr * (grads[0].w2 + grads[1].w2)
            clf.b2 = clf.b2 - lr * (grads[0].b2 + grads[1].b2)
            if config.train_hints:
                hints.hints[grads[0].index] -= lr * grads[0].hint
                hints.hints[grads[1].index] -= lr * grads[1].hint
            history.append(
                StepRecord(
                    loss=total,
                    ped_index=grads[0].index,
                    ped_loss=losses[0],
                    bg_index=grads[1].index,
                    bg_loss=losses[1],
                )
            )
    return hints, clf, history


def write_history(history: list[StepRecord], path) -> None:
    """Export the history as JSON lines, one line per sample.

    Each step contributes two lines (pedestrian first) with keys ``step``,
    ``loss``, ``selected``, and ``label``.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for step, rec in enumerate(history):
            for loss, index, label in (
                (rec.ped_loss, rec.ped_index, 1),
                (rec.bg_loss, rec.bg_index, 0),
            ):
                fh.write(
                    json.dumps({"step": step, "loss": loss, "selected": index, "label": label})
                )
                fh.write("\n")

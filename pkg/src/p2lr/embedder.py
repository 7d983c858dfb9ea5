"""Trainable linear embedding model, its refinement step, and the mean teacher.

The model is a plain affine map f = W x + bias, the desk-scale stand-in for a
deep feature extractor.  Refinement minimizes the summed KL uncertainty of the
currently selected samples against frozen classifier weights, by gradient
descent with an analytic gradient propagated through the L2 normalization and
the softmax.  A mean-teacher copy tracks the student by exponential moving
average and provides the embeddings that scoring and evaluation consume.

Gradient sketch, per selected sample with weight w_i (x row vector):

    z = W x + b,  zh = z/|z|,  S_j = alpha * zh . ch_j,  p = softmax(S)
    dL/dS = w_i (p - q)                      (q the smoothed delta)
    g = alpha * (dL/dS) @ Ch                 (Ch rows are unit centroids)
    dL/dz = (g - (g . zh) zh) / |z|
    dW += outer(dL/dz, x),  db += dL/dz

and symmetrically for trainable classifier rows (used by one ablation arm).
"""

import warnings
from dataclasses import dataclass

import numpy as np

from ._util import as_features, as_labels
from .errors import (
    ConfigurationError,
    EmptySelectionWarning,
    FileFormatError,
    InputError,
    SingularNormalizationError,
)
from .fileio import read_json, write_json
from .uncertainty import _smoothed_delta_terms, log_softmax_rows, normalize_rows

__all__ = [
    "EmbeddingModel",
    "TeacherState",
    "identity_model",
    "embed",
    "selection_loss",
    "selection_loss_grad",
    "classifier_grad",
    "refine_model",
    "refine_model_and_classifier",
    "ema_update",
    "teacher_model",
    "save_checkpoint",
    "load_checkpoint",
]

# Initial attempt plus this many halvings before a descent step is abandoned.
MAX_HALVINGS = 20


@dataclass(frozen=True)
class EmbeddingModel:
    weights: np.ndarray  # (d, d)
    bias: np.ndarray  # (d,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InputError(f"weights must be square 2-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise InputError(f"bias shape {b.shape} does not match weights {w.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InputError("model parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def d(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class TeacherState:
    """EMA copy of the student; momentum is the retained fraction per update."""

    weights: np.ndarray
    bias: np.ndarray
    momentum: float

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        model = EmbeddingModel(self.weights, self.bias)  # reuse shape/finite checks
        object.__setattr__(self, "weights", model.weights)
        object.__setattr__(self, "bias", model.bias)


def identity_model(d: int) -> EmbeddingModel:
    if d < 1:
        raise ConfigurationError(f"d must be >= 1, got {d}")
    return EmbeddingModel(weights=np.eye(d), bias=np.zeros(d))


def teacher_model(teacher: TeacherState) -> EmbeddingModel:
    """View the teacher parameters as a plain embedding model."""
    return EmbeddingModel(weights=teacher.weights, bias=teacher.bias)


def embed(model: EmbeddingModel, raw) -> np.ndarray:
    raw = as_features(raw, name="raw")
    if raw.shape[1] != model.d:
        raise InputError(f"raw has d={raw.shape[1]}, model expects {model.d}")
    return raw @ model.weights.T + model.bias


def _as_weights(indicators, n: int) -> np.ndarray:
    """Selection indicators: binary bits or soft weights in [0, 1]."""
    w = np.asarray(indicators, dtype=np.float64)
    if w.shape != (n,):
        raise InputError(f"indicators must have shape ({n},), got {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0) or np.any(w > 1):
        raise InputError("indicators must be finite and within [0, 1]")
    return w


def _forward(model, raw, classifier, pseudo_labels, indicators, alpha, epsilon):
    """Shared forward pass over the selected subset.

    Returns None when nothing is selected, else a dict of intermediates.
    """
    raw = as_features(raw, name="raw")
    n = raw.shape[0]
    labels = as_labels(pseudo_labels, n=n, name="pseudo_labels")
    weights = _as_weights(indicators, n)
    classifier = as_features(classifier, name="classifier weights")
    c = classifier.shape[0]
    if c < 2:
        raise ConfigurationError(f"need >= 2 classifier rows, got {c}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InputError(f"pseudo_labels must be in [0, {c})")
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be > 0, got {alpha}")
    if not 1.0 / c < epsilon <= 1.0:
        raise ConfigurationError(
            f"epsilon must satisfy 1/c < epsilon <= 1, got {epsilon} with c={c}"
        )

    selected = np.flatnonzero(weights > 0.0)
    if selected.size == 0:
        return None

    z = embed(model, raw[selected])
    z_norms = np.linalg.norm(z, axis=1)
    bad = np.flatnonzero(z_norms == 0.0)
    if bad.size:
        raise SingularNormalizationError("embedding", int(selected[bad[0]]))
    unit_z = z / z_norms[:, None]
    unit_c, c_norms = normalize_rows(classifier, what="classifier weight")

    logits = alpha * (unit_z @ unit_c.T)
    logp = log_softmax_rows(logits)
    ys = labels[selected]
    peak, off, q_log_q = _smoothed_delta_terms(c, epsilon)
    own = logp[np.arange(selected.size), ys]
    kl_rows = np.maximum(q_log_q - (peak * own + off * (logp.sum(axis=1) - own)), 0.0)
    return {
        "selected": selected,
        "raw_sel": raw[selected],
        "w_sel": weights[selected],
        "ys": ys,
        "z_norms": z_norms,
        "unit_z": unit_z,
        "unit_c": unit_c,
        "c_norms": c_norms,
        "p": np.exp(logp),
        "peak": peak,
        "off": off,
        "alpha": alpha,
        "kl_rows": kl_rows,
    }


def _weighted_residual(state) -> np.ndarray:
    """Rows of w_i * (p_i - q_i), the softmax-side gradient driver."""
    residual = state["p"] - state["off"]
    rows = np.arange(state["ys"].size)
    residual[rows, state["ys"]] = state["p"][rows, state["ys"]] - state["peak"]
    return residual * state["w_sel"][:, None]


def selection_loss(model, raw, centroids, pseudo_labels, indicators, alpha, epsilon) -> float:
    """Summed per-sample KL uncertainty over the selected set.

    Equals the sum of the uncertainty module's kl_ideal scores over samples
    with a positive indicator, evaluated on student embeddings against fixed
    classifier rows.  An empty selection warns and returns 0.
    """
    state = _forward(model, raw, centroids, pseudo_labels, indicators, alpha, epsilon)
    if state is None:
        warnings.warn("empty selection: loss is trivially 0", EmptySelectionWarning)
        return 0.0
    return float(state["w_sel"] @ state["kl_rows"])


def selection_loss_grad(
    model, raw, centroids, pseudo_labels, indicators, alpha, epsilon
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of selection_loss w.r.t. model weights and bias."""
    state = _forward(model, raw, centroids, pseudo_labels, indicators, alpha, epsilon)
    d = model.d
    if state is None:
        warnings.warn("empty selection: gradient is 0", EmptySelectionWarning)
        return np.zeros((d, d)), np.zeros(d)
    g_unit = state["alpha"] * (_weighted_residual(state) @ state["unit_c"])
    radial = np.einsum("nd,nd->n", g_unit, state["unit_z"])
    g_z = (g_unit - radial[:, None] * state["unit_z"]) / state["z_norms"][:, None]
    return g_z.T @ state["raw_sel"], g_z.sum(axis=0)


def classifier_grad(
    model, raw, classifier, pseudo_labels, indicators, alpha, epsilon
) -> np.ndarray:
    """Gradient of the same loss w.r.t. trainable classifier rows."""
    state = _forward(model, raw, classifier, pseudo_labels, indicators, alpha, epsilon)
    if state is None:
        warnings.warn("empty selection: gradient is 0", EmptySelectionWarning)
        return np.zeros_like(np.asarray(classifier, dtype=np.float64))
    g_unit = state["alpha"] * (_weighted_residual(state).T @ state["unit_z"])
    radial = np.einsum("cd,cd->c", g_unit, state["unit_c"])
    return (g_unit - radial[:, None] * state["unit_c"]) / state["c_norms"][:, None]


def _descend(initial_params, loss_of, grads_of, lr, n_grad_steps):
    """Shared descent loop: accept only strictly improving steps.

    Each iteration retries with a halved rate up to MAX_HALVINGS times and
    gives up entirely once no improving step exists, so the final loss never
    exceeds the initial one.
    """
    if not lr > 0:
        raise ConfigurationError(f"lr must be > 0, got {lr}")
    if n_grad_steps < 1:
        raise ConfigurationError(f"n_grad_steps must be >= 1, got {n_grad_steps}")
    params = [p.copy() for p in initial_params]
    current = loss_of(params)
    for _ in range(n_grad_steps):
        grads = grads_of(params)
        if all(not g.any() for g in grads):
            break
        step = lr
        for _ in range(MAX_HALVINGS + 1):
            trial = [p - step * g for p, g in zip(params, grads)]
            trial_loss = loss_of(trial)
            if trial_loss < current:
                params, current = trial, trial_loss
                break
            step /= 2.0
        else:
            break
    return params


def refine_model(
    model, raw, centroids, pseudo_labels, indicators, alpha, epsilon,
    lr: float, n_grad_steps: int,
) -> EmbeddingModel:
    """Gradient-descent refinement of the model against frozen centroids."""

    def loss_of(params):
        return selection_loss(
            EmbeddingModel(*params), raw, centroids, pseudo_labels, indicators, alpha, epsilon
        )

    def grads_of(params):
        return selection_loss_grad(
            EmbeddingModel(*params), raw, centroids, pseudo_labels, indicators, alpha, epsilon
        )

    if not np.any(np.asarray(indicators, dtype=np.float64) > 0):
        warnings.warn("empty selection: model returned unchanged", EmptySelectionWarning)
        return model
    params = _descend([model.weights, model.bias], loss_of, grads_of, lr, n_grad_steps)
    return EmbeddingModel(*params)


def refine_model_and_classifier(
    model, classifier, raw, pseudo_labels, indicators, alpha, epsilon,
    lr: float, n_grad_steps: int,
) -> tuple[EmbeddingModel, np.ndarray]:
    """Joint refinement of the model and a trainable classifier matrix.

    Used by the ablation arm where classifier rows are persistent parameters
    instead of recomputed cluster centroids.
    """
    classifier = as_features(classifier, name="classifier weights")

    def loss_of(params):
        w, b, cls = params
        return selection_loss(
            EmbeddingModel(w, b), raw, cls, pseudo_labels, indicators, alpha, epsilon
        )

    def grads_of(params):
        w, b, cls = params
        m = EmbeddingModel(w, b)
        dw, db = selection_loss_grad(m, raw, cls, pseudo_labels, indicators, alpha, epsilon)
        dcls = classifier_grad(m, raw, cls, pseudo_labels, indicators, alpha, epsilon)
        return dw, db, dcls

    if not np.any(np.asarray(indicators, dtype=np.float64) > 0):
        warnings.warn("empty selection: parameters unchanged", EmptySelectionWarning)
        return model, classifier
    params = _descend(
        [model.weights, model.bias, classifier], loss_of, grads_of, lr, n_grad_steps
    )
    return EmbeddingModel(params[0], params[1]), params[2]


def ema_update(teacher: TeacherState, student: EmbeddingModel) -> TeacherState:
    """One exponential-moving-average step toward the student."""
    if teacher.weights.shape != student.weights.shape:
        raise InputError(
            f"teacher d={teacher.weights.shape[0]} != student d={student.d}"
        )
    m = teacher.momentum
    return TeacherState(
        weights=m * teacher.weights + (1.0 - m) * student.weights,
        bias=m * teacher.bias + (1.0 - m) * student.bias,
        momentum=m,
    )


def save_checkpoint(path: str, model: EmbeddingModel, teacher: TeacherState) -> None:
    write_json(
        path,
        {
            "d": model.d,
            "W": model.weights.tolist(),
            "bias": model.bias.tolist(),
            "teacher_W": teacher.weights.tolist(),
            "teacher_bias": teacher.bias.tolist(),
            "momentum": teacher.momentum,
        },
    )


def load_checkpoint(path: str) -> tuple[EmbeddingModel, TeacherState]:
    data = read_json(path)
    required = ("d", "W", "bias", "teacher_W", "teacher_bias", "momentum")
    missing = [k for k in required if k not in data]
    if missing:
        raise FileFormatError(f"{path}: checkpoint missing keys {missing}")
    try:
        model = EmbeddingModel(np.asarray(data["W"]), np.asarray(data["bias"]))
        teacher = TeacherState(
            weights=np.asarray(data["teacher_W"]),
            bias=np.asarray(data["teacher_bias"]),
            momentum=float(data["momentum"]),
        )
    except (InputError, ConfigurationError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: invalid checkpoint: {exc}") from exc
    if model.d != data["d"] or teacher.weights.shape[0] != data["d"]:
        raise FileFormatError(f"{path}: checkpoint d={data['d']} mismatches arrays")
    return model, teacher

"""Tiny neural substitute for the window grid transform.

A two-layer fully connected network with one ReLU maps a flattened rotation
matrix directly to the transformed canonical point set, replacing the
tall-and-skinny matrix product at placement time. The mapping depends only
on the window geometry, not on any robot, so one trained model is reusable
across robots sharing a window width.

Training is plain in-repo numpy: forward, backward, and adaptive-moment
updates on mean-absolute-error against exact targets from freshly sampled
uniform rotations.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, NotConvergedError, ValidationError
from .grids import EnvGrid
from .placement import WindowGeometry, grid_transform_exact

TMLP_MAGIC = b"TMLP"
TMLP_VERSION = 1

DEFAULT_HIDDEN = 32
DEFAULT_MAX_ERROR = 0.0013


def sample_rotations(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform random rotation matrices via normalized quaternions, (n, 3, 3)."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty((n, 3, 3))
    out[:, 0, 0] = 1 - 2 * (y * y + z * z)
    out[:, 0, 1] = 2 * (x * y - w * z)
    out[:, 0, 2] = 2 * (x * z + w * y)
    out[:, 1, 0] = 2 * (x * y + w * z)
    out[:, 1, 1] = 1 - 2 * (x * x + z * z)
    out[:, 1, 2] = 2 * (y * z - w * x)
    out[:, 2, 0] = 2 * (x * z - w * y)
    out[:, 2, 1] = 2 * (y * z + w * x)
    out[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def sample_rotation(rng: np.random.Generator) -> np.ndarray:
    """One uniform random rotation matrix."""
    return sample_rotations(rng, 1)[0]


def masked_window_points(width: int) -> np.ndarray:
    """Canonical kept-cell point set for an isotropic window of given width."""
    if width < 2 or width % 2:
        raise ValidationError(f"window width must be even and >= 2, got {width}")
    grid = EnvGrid(extent=1.0, resolution=2.0 / width)
    return WindowGeometry.build(1.0, grid).masked_points


@dataclass
class TinyMlp:
    """Two fully connected layers with one ReLU in between.

    Output layout is one (x, y, z) triple per canonical window cell, in the
    cell order of the point set the model was trained on.
    """

    w1: np.ndarray  # (9, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, 3 * n_points)
    b2: np.ndarray  # (3 * n_points,)

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float32))
        if self.w1.shape[0] != 9 or self.w2.shape[0] != self.w1.shape[1]:
            raise ValidationError(f"inconsistent layer shapes {self.w1.shape} {self.w2.shape}")
        if self.w2.shape[1] % 3:
            raise ValidationError("output width must be a multiple of 3")
        if not all(
            np.all(np.isfinite(getattr(self, n))) for n in ("w1", "b1", "w2", "b2")
        ):
            raise ValidationError("model weights must be finite")

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def n_points(self) -> int:
        return self.w2.shape[1] // 3

    @classmethod
    def initial(cls, n_points: int, hidden: int = DEFAULT_HIDDEN, seed: int = 0) -> "TinyMlp":
        """Structured starting point: paired sign units reconstruct each
        rotation entry as relu(x) - relu(-x); remaining units start random."""
        if hidden < 18:
            raise ValidationError("hidden width must be at least 18")
        rng = np.random.default_rng(seed)
        w1 = np.zeros((9, hidden), dtype=np.float32)
        w1[:, :9] = np.eye(9)
        w1[:, 9:18] = -np.eye(9)
        w1[:, 18:] = rng.normal(0.0, 0.1, size=(9, hidden - 18))
        b1 = np.zeros(hidden, dtype=np.float32)
        b1[18:] = 0.1
        w2 = np.zeros((hidden, 3 * n_points), dtype=np.float32)
        b2 = np.zeros(3 * n_points, dtype=np.float32)
        return cls(w1, b1, w2, b2)

    @classmethod
    def random(cls, n_points: int, hidden: int = DEFAULT_HIDDEN, seed: int = 0) -> "TinyMlp":
        rng = np.random.default_rng(seed)
        return cls(
            rng.normal(0.0, 0.3, size=(9, hidden)),
            np.zeros(hidden),
            rng.normal(0.0, 0.3, size=(hidden, 3 * n_points)),
            np.zeros(3 * n_points),
        )

    def predict(self, rotations: np.ndarray) -> np.ndarray:
        """(B, 3, 3) or (3, 3) rotations -> (B, n_points, 3) coordinates."""
        r = np.asarray(rotations, dtype=np.float32)
        single = r.ndim == 2
        x = r.reshape(-1, 9)
        h = np.maximum(x @ self.w1 + self.b1, 0.0)
        y = (h @ self.w2 + self.b2).reshape(-1, self.n_points, 3)
        return y[0] if single else y

    def save(self, path) -> None:
        header = struct.pack(
            "<4sIII", TMLP_MAGIC, TMLP_VERSION, self.hidden, self.n_points
        )
        with open(path, "wb") as fh:
            fh.write(header)
            for arr in (self.w1, self.b1, self.w2, self.b2):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "TinyMlp":
        with open(path, "rb") as fh:
            header = fh.read(struct.calcsize("<4sIII"))
            magic, version, hidden, n_points = struct.unpack("<4sIII", header)
            if magic != TMLP_MAGIC:
                raise ValidationError(f"{path}: bad magic {magic!r}")
            if version != TMLP_VERSION:
                raise ValidationError(f"{path}: unsupported version {version}")
            out_dim = 3 * n_points
            arrays = []
            for shape in ((9, hidden), (hidden,), (hidden, out_dim), (out_dim,)):
                count = int(np.prod(shape))
                raw = np.frombuffer(fh.read(4 * count), dtype="<f4")
                if raw.size != count:
                    raise ValidationError(f"{path}: truncated weights")
                arrays.append(raw.reshape(shape).copy())
        return cls(*arrays)


@dataclass
class TrainingConfig:
    """Mean-absolute-error regression with adaptive-moment updates."""

    learning_rate: float = 1e-4
    steps: int = 200_000
    batch_size: int = 64
    seed: int = 0
    hidden: int = DEFAULT_HIDDEN
    target_max_error: float = DEFAULT_MAX_ERROR
    # Early stopping: screen cheaply every eval_every steps, confirm on the
    # full validation set once the screen clears stop_fraction * target.
    eval_every: int = 1000
    screen_size: int = 2048
    val_size: int = 10_000
    stop_fraction: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")


def _exact_targets(points: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Exact transformed point sets, flattened to (B, 3 * V)."""
    # Row-vector form of R^T p per point; batched matmul hits BLAS.
    g = np.matmul(points[None], rotations)
    return g.reshape(len(rotations), -1)


def _max_component_error(
    model: TinyMlp, points: np.ndarray, rotations: np.ndarray, chunk: int = 512
) -> tuple[float, float]:
    """(max, mean) absolute component error vs the exact transform."""
    worst = 0.0
    total = 0.0
    count = 0
    for s in range(0, len(rotations), chunk):
        r = rotations[s : s + chunk]
        err = np.abs(
            model.predict(r).reshape(len(r), -1).astype(np.float64)
            - _exact_targets(points, r)
        )
        worst = max(worst, float(err.max()))
        total += float(err.sum())
        count += err.size
    return worst, total / count


def train_approximator(points: np.ndarray, config: TrainingConfig | None = None) -> TinyMlp:
    """Fit the transform network for one canonical point set.

    Each step regresses against exact targets on a fresh batch of uniform
    rotations. Training stops early once the held-out maximum component
    error clears the configured margin under the target; raises
    ``NotConvergedError`` (with the model attached) if the step budget runs
    out first. The returned model carries a ``history`` list of
    ``(step, val_mae, val_max)`` checkpoints.
    """
    config = config or TrainingConfig()
    points = np.ascontiguousarray(points, dtype=np.float64)
    n_points = len(points)
    points32 = points.astype(np.float32)

    rng = np.random.default_rng(config.seed)
    model = TinyMlp.initial(n_points, hidden=config.hidden, seed=config.seed)
    val_rotations = sample_rotations(rng, config.val_size)
    screen_rotations = val_rotations[: config.screen_size]

    params = [model.w1, model.b1, model.w2, model.b2]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    lr = np.float32(config.learning_rate)
    b1c, b2c = config.beta1, config.beta2

    history: list[tuple[int, float, float]] = []
    stop_at = config.stop_fraction * config.target_max_error

    step = 0
    while step < config.steps:
        step += 1
        r = sample_rotations(rng, config.batch_size)
        x = r.reshape(-1, 9).astype(np.float32)
        t = np.matmul(points32[None], r.astype(np.float32)).reshape(
            config.batch_size, -1
        )

        pre = x @ model.w1 + model.b1
        h = np.maximum(pre, 0.0)
        y = h @ model.w2 + model.b2

        dy = np.sign(y - t).astype(np.float32)
        dy /= np.float32(dy.size)
        dw2 = h.T @ dy
        db2 = dy.sum(axis=0)
        dh = dy @ model.w2.T
        dh[pre <= 0] = 0.0
        dw1 = x.T @ dh
        db1 = dh.sum(axis=0)

        bc1 = 1.0 - b1c**step
        bc2 = 1.0 - b2c**step
        for p, mi, vi, g in zip(params, m, v, (dw1, db1, dw2, db2)):
            mi += (1.0 - b1c) * (g - mi)
            vi += (1.0 - b2c) * (g * g - vi)
            p -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + config.eps)

        if step % config.eval_every == 0 or step == config.steps:
            # History always measures the same fixed screen set so the
            # checkpoints are comparable; the stop decision confirms on the
            # full validation set.
            screen_max, screen_mae = _max_component_error(
                model, points, screen_rotations
            )
            history.append((step, screen_mae, screen_max))
            if screen_max <= stop_at or step == config.steps:
                val_max, _ = _max_component_error(model, points, val_rotations)
                if val_max <= stop_at:
                    break

    val_max, val_mae = _max_component_error(model, points, val_rotations)
    model.history = history
    model.validation_max_error = val_max
    model.validation_mean_error = val_mae
    if val_max > config.target_max_error:
        raise NotConvergedError(val_max, config.target_max_error, model=model)
    return model


def infer_grid_transform(model: TinyMlp, rotations, delta_t, extent_r) -> np.ndarray:
    """Approximate sample coordinates: f(R) plus the broadcast shift.

    Mirrors :func:`linksdf.placement.grid_transform_exact` with the network
    substituted for the matrix product; the shift term stays exact.
    """
    r = np.asarray(rotations, dtype=np.float64)
    dt = np.asarray(delta_t, dtype=np.float64)
    single = r.ndim == 2
    r = r.reshape(-1, 3, 3)
    dt = dt.reshape(-1, 3)
    g = model.predict(r).astype(np.float64)
    dt_inv = -np.einsum("bj,bjk->bk", dt / float(extent_r), r)
    g = g + dt_inv[:, None, :]
    return g[0] if single else g


def evaluate_approximator(
    predict,
    points: np.ndarray,
    n_samples: int,
    rng: np.random.Generator,
    chunk: int = 512,
) -> dict[str, float]:
    """Componentwise error of a transform predictor vs the exact product.

    ``predict`` is a :class:`TinyMlp` or any callable mapping (B, 3, 3)
    rotations to (B, V, 3) coordinates. Returns max and mean absolute error
    over ``n_samples`` uniform rotations.
    """
    fn = predict.predict if isinstance(predict, TinyMlp) else predict
    points = np.ascontiguousarray(points, dtype=np.float64)
    worst = 0.0
    total = 0.0
    count = 0
    remaining = n_samples
    while remaining > 0:
        b = min(chunk, remaining)
        remaining -= b
        r = sample_rotations(rng, b)
        approx = np.asarray(fn(r), dtype=np.float64).reshape(b, -1)
        err = np.abs(approx - _exact_targets(points, r))
        worst = max(worst, float(err.max()))
        total += float(err.sum())
        count += err.size
    return {"max_abs_error": worst, "mean_abs_error": total / count}


class NeuralTransformProvider:
    """Placement transform provider backed by a trained TinyMlp."""

    def __init__(self, model: TinyMlp, window: WindowGeometry):
        if model.n_points != window.n_masked:
            raise DimensionMismatchError(
                f"model emits {model.n_points} points but the window keeps "
                f"{window.n_masked}"
            )
        self.model = model
        self.window = window

    def transform(self, rotations: np.ndarray, delta_t: np.ndarray) -> np.ndarray:
        return infer_grid_transform(
            self.model, rotations, delta_t, self.window.extent
        )


def exact_predictor(points: np.ndarray):
    """Callable matching the model's predict contract but exact (for evals)."""

    def fn(rotations: np.ndarray) -> np.ndarray:
        return grid_transform_exact(
            rotations, np.zeros((len(rotations), 3)), 1.0, points
        )

    return fn

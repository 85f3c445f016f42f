"""Class-incremental learning with a mixture posterior carried between stages.

Stage ``k`` trains a multiclass logistic regression on its own classes only.
Its prior is the mixture posterior fitted at stage ``k - 1`` (a standard
normal at stage 0).  The naive baseline resets the prior each stage and keeps
only a MAP point estimate.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import softmax

from .pursuit import PursuitConfig, PursuitTrace, run_pursuit
from .targets import LabeledDataset, logreg_logits, logreg_param_dim, make_logreg_target
from .variational import MixtureApprox, mixture_grad_log_pdf, mixture_log_pdf, mixture_sample

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
MNIST_CLASS_PAIRS = [[0, 1], [2, 3], [4, 5], [6, 7], [8, 9]]


class IDXFormatError(ValueError):
    pass


def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _parse_idx(path, magic: int, n_dims: int):
    raw = _read_bytes(path)
    header = 4 * (1 + n_dims)
    if len(raw) < header:
        raise IDXFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    found, *dims = struct.unpack(f">{1 + n_dims}I", raw[:header])
    if found != magic:
        raise IDXFormatError(f"{path}: wrong magic number {found:#010x}, expected {magic:#010x}")
    size = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) < size:
        raise IDXFormatError(f"{path}: truncated payload ({len(payload)} of {size} bytes)")
    if len(payload) > size:
        raise IDXFormatError(f"{path}: {len(payload) - size} trailing bytes after payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def read_idx_labels(path) -> np.ndarray:
    return _parse_idx(path, IDX_LABELS_MAGIC, 1).astype(np.int64)


def read_idx_images(path) -> np.ndarray:
    """Images as a ``(count, rows * cols)`` uint8 matrix."""
    arr = _parse_idx(path, IDX_IMAGES_MAGIC, 3)
    return arr.reshape(arr.shape[0], -1)


def load_idx(images_path, labels_path, n_classes: int | None = None) -> LabeledDataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1]."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    return LabeledDataset(images / 255.0, labels, n_classes)


def _find(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (data_dir / name).exists():
            return data_dir / name
    raise FileNotFoundError(f"{data_dir / stem}: MNIST file not found")


def load_mnist(data_dir):
    """``(train, test)`` from the four standard MNIST IDX files (optionally gzipped)."""
    d = Path(data_dir)
    train = load_idx(_find(d, MNIST_FILES["train_images"]), _find(d, MNIST_FILES["train_labels"]), 10)
    test = load_idx(_find(d, MNIST_FILES["test_images"]), _find(d, MNIST_FILES["test_labels"]), 10)
    return train, test


def write_idx(path, array: np.ndarray, magic: int):
    """Write a uint8 array in IDX layout (used for fixtures and format round-trips)."""
    arr = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(f">{1 + arr.ndim}I", magic, *arr.shape))
        fh.write(arr.tobytes())


@dataclass(frozen=True, eq=False)
class PCABasis:
    center: np.ndarray
    components: np.ndarray  # (out_dim, n_features), orthonormal rows

    def apply(self, data: LabeledDataset) -> LabeledDataset:
        if data.n_features != self.center.size:
            raise ValueError(f"basis expects {self.center.size} features, data has {data.n_features}")
        return LabeledDataset((data.features - self.center) @ self.components.T, data.labels, data.n_classes)


def reduce_features(data: LabeledDataset, out_dim: int, basis: PCABasis | None = None):
    """Project onto the top ``out_dim`` principal directions.

    Without ``basis`` the directions are computed from ``data`` (signs fixed so
    each direction's largest entry is positive).  Returns ``(projected, basis)``.
    """
    if basis is None:
        if not 1 <= out_dim <= data.n_features:
            raise ValueError(f"out_dim must lie in [1, {data.n_features}], got {out_dim}")
        center = data.features.mean(axis=0)
        _, s, vt = np.linalg.svd(data.features - center, full_matrices=False)
        tol = s[0] * max(data.features.shape) * np.finfo(float).eps if s.size else 0.0
        rank = int(np.sum(s > tol))
        if rank < out_dim:
            raise ValueError(f"covariance has rank {rank} < out_dim={out_dim}")
        comps = vt[:out_dim]
        flip = np.sign(comps[np.arange(out_dim), np.argmax(np.abs(comps), axis=1)])
        basis = PCABasis(center, comps * flip[:, None])
    return basis.apply(data), basis


@dataclass
class TaskSequence:
    stages: list            # (train, cumulative_test) per stage
    class_sets: list        # classes introduced at each stage
    stage_tests: list       # test samples of each stage's own classes

    @property
    def n_stages(self) -> int:
        return len(self.stages)


def split_tasks(train: LabeledDataset, test: LabeledDataset, class_sets) -> TaskSequence:
    sets = [frozenset(int(c) for c in cs) for cs in class_sets]
    seen = set()
    for s in sets:
        if seen & s:
            raise ValueError(f"class sets overlap on {sorted(seen & s)}")
        seen |= s
    stages, stage_tests = [], []
    cumulative = set()
    for k, s in enumerate(sets):
        cumulative |= s
        tr = np.isin(train.labels, sorted(s))
        te = np.isin(test.labels, sorted(s))
        if not tr.any() or not te.any():
            raise ValueError(f"stage {k} (classes {sorted(s)}) has no train or test samples")
        stages.append((train.subset(tr), test.subset(np.isin(test.labels, sorted(cumulative)))))
        stage_tests.append(test.subset(te))
    return TaskSequence(stages, [sorted(s) for s in sets], stage_tests)


def synthetic_task_data(n_train_per_class=200, n_test_per_class=200, radius=4.0, noise=0.7, seed=0):
    """Four Gaussian blobs on the axes of the plane; classes {0, 1} sit on x, {2, 3} on y.

    Training on {2, 3} alone pushes the x-axis classes' scores down, so a
    learner that forgets stage 0 misclassifies them.
    """
    rng = np.random.default_rng(seed)
    centers = radius * np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])

    def draw(n):
        x = np.concatenate([c + noise * rng.standard_normal((n, 2)) for c in centers])
        y = np.repeat(np.arange(4), n)
        return LabeledDataset(x, y, 4)

    return draw(n_train_per_class), draw(n_test_per_class)


SYNTHETIC_CLASS_PAIRS = [[0, 1], [2, 3]]


def _check_layout(dim, data: LabeledDataset):
    expected = logreg_param_dim(data.n_features, data.n_classes)
    if dim != expected:
        raise ValueError(f"parameter dimension {dim} does not match the model layout ({expected})")


def _accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    # argmax breaks ties toward the smallest class index
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def predictive_accuracy(q: MixtureApprox, test: LabeledDataset, ensemble_n: int, rng: np.random.Generator) -> float:
    """Accuracy of the ensemble that averages softmax outputs over ``ensemble_n`` draws from ``q``."""
    if ensemble_n < 1:
        raise ValueError("ensemble_n must be >= 1")
    _check_layout(q.dim, test)
    thetas = mixture_sample(q, rng, ensemble_n)
    probs = np.zeros((test.n_samples, test.n_classes))
    for theta in thetas:
        probs += softmax(logreg_logits(theta[None], test.features, test.n_classes)[0], axis=1)
    return _accuracy(probs / ensemble_n, test.labels)


def point_accuracy(theta: np.ndarray, test: LabeledDataset) -> float:
    _check_layout(theta.size, test)
    return _accuracy(logreg_logits(theta[None], test.features, test.n_classes)[0], test.labels)


@dataclass
class StageAccuracy:
    stage: int
    mean_acc: float          # accuracy on the cumulative test set
    per_stage: list          # accuracy on each seen stage's classes


@dataclass
class ContinualResult:
    rows: list = field(default_factory=list)
    posteriors: list = field(default_factory=list)
    traces: list = field(default_factory=list)


def _evaluate(tasks, k, predict_acc):
    return StageAccuracy(k, predict_acc(tasks.stages[k][1]),
                         [predict_acc(tasks.stage_tests[j]) for j in range(k + 1)])


def continual_run(tasks: TaskSequence, pursuit_config: PursuitConfig, ensemble_n: int = 32) -> ContinualResult:
    """Fit each stage by pursuit, feeding the previous mixture posterior in as the prior.

    Stage ``k`` uses the random stream seeded with ``pursuit_config.seed + k``,
    so a single-stage run reproduces ``run_pursuit`` on the same data.
    """
    result = ContinualResult()
    prior = None
    for k, (train, _) in enumerate(tasks.stages):
        if prior is None:
            target = make_logreg_target(train)
        else:
            target = make_logreg_target(train, _bind(mixture_log_pdf, prior), _bind(mixture_grad_log_pdf, prior))
        trace: PursuitTrace = run_pursuit(target, pursuit_config, np.random.default_rng(pursuit_config.seed + k))
        prior = trace.mixture
        eval_rng = np.random.default_rng((pursuit_config.seed, k, 1))
        # one ensemble per stage, reused across test subsets
        state = eval_rng.bit_generator.state

        def acc(test, q=prior):
            eval_rng.bit_generator.state = state
            return predictive_accuracy(q, test, ensemble_n, eval_rng)

        result.rows.append(_evaluate(tasks, k, acc))
        result.posteriors.append(prior)
        result.traces.append(trace)
    return result


def _bind(fn, q):
    return lambda theta: fn(q, theta)


def _map_fit(data: LabeledDataset, start: np.ndarray) -> np.ndarray:
    target = make_logreg_target(data)

    def neg(theta):
        return -target.log_density(theta), -target.grad_log_density(theta)

    res = minimize(neg, start, jac=True, method="L-BFGS-B", options={"maxiter": 2000})
    return res.x


def naive_sequential_map(tasks: TaskSequence) -> ContinualResult:
    """Baseline: MAP under a fresh standard-normal prior each stage, warm-started from the last stage."""
    first = tasks.stages[0][0]
    theta = np.zeros(logreg_param_dim(first.n_features, first.n_classes))
    result = ContinualResult()
    for k, (train, _) in enumerate(tasks.stages):
        theta = _map_fit(train, theta)
        result.rows.append(_evaluate(tasks, k, lambda test, th=theta: point_accuracy(th, test)))
        result.posteriors.append(theta.copy())
    return result

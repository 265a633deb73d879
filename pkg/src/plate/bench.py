"""Task generators and the two-task continual-learning protocol.

A run trains a fresh backbone plus a task-1 head, checkpoints it,
records the baseline task-1 metric, then (per configured method)
restores the checkpoint, freezes the task-1 head, attaches adapters,
trains a fresh task-2 head, and reports learnability on task 2 and
retention on task 1.  Sweeps share the stage-1 checkpoint across all
method configurations of a seed, so every method starts from the
bitwise-identical parameters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .adapters import (
    FullFineTune,
    Frozen,
    lora_init,
    plate_init,
    trainable_param_count,
)
from .errors import ContractViolationError, FormatError
from .geometry import drift_radius, restricted_curvature, subspace_basis
from .model import (
    Mlp,
    TrainConfig,
    accuracy,
    init_head,
    init_mlp,
    mean_loss,
    merged_copy,
    params_to_vector,
    train,
)
from .numerics import SeededRng

__all__ = [
    "Dataset",
    "MethodSpec",
    "TaskSpec",
    "ArchSpec",
    "MetricsConfig",
    "ProtocolConfig",
    "RunResult",
    "RunFailure",
    "gen_two_moons",
    "gen_rotated_regression",
    "gen_gaussian_blobs",
    "task_dissimilarity",
    "load_idx",
    "filter_digit_task",
    "make_task_pair",
    "run_protocol",
    "sweep",
    "stage1_fingerprint",
]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

# child tags for per-run seed splitting
_TAG_DATA1_TRAIN = 10
_TAG_DATA1_TEST = 11
_TAG_DATA2_TRAIN = 12
_TAG_DATA2_TEST = 13
_TAG_CENTERS1 = 14
_TAG_CENTERS2 = 15
_TAG_MODEL_INIT = 20
_TAG_HEAD2_INIT = 21
_TAG_STAGE1_SHUFFLE = 30
_TAG_STAGE2_SHUFFLE = 31
_TAG_ADAPTER = 40
_TAG_METRICS = 50


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray  # int class labels (n,) or float targets (n, d_out)
    split: str
    num_classes: int | None = None

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


# ---------------------------------------------------------------------------
# generators


def gen_two_moons(n: int, noise_sigma: float, rotation_deg: float, translation, seed: int) -> Dataset:
    """Interleaved unit half-circles with Gaussian noise.

    The task-2 variant rotates the whole cloud about its centroid and
    then translates it, so a 180-degree rotation point-reflects the
    cloud exactly.
    """
    if n < 2 or n % 2 != 0:
        raise ContractViolationError("two-moons needs an even n >= 2")
    gen = SeededRng(seed).generator()
    half = n // 2
    t0 = gen.uniform(0.0, np.pi, half)
    t1 = gen.uniform(0.0, np.pi, half)
    outer = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    inner = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    points = np.concatenate([outer, inner], axis=0)
    labels = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    if noise_sigma > 0:
        points = points + noise_sigma * gen.standard_normal(points.shape)
    if rotation_deg != 0.0:
        theta = np.deg2rad(rotation_deg)
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        centroid = points.mean(axis=0)
        points = (points - centroid) @ rot.T + centroid
    points = points + np.asarray(translation, dtype=np.float64)
    return Dataset(inputs=points, targets=labels, split="train", num_classes=2)


def regression_weights(alpha: float, d: int) -> tuple:
    """Unit target weights of the rotated-regression pair.

    Task 1 uses the first coordinate axis; task 2 rotates it by alpha
    inside the fixed plane of the first two axes (any plane containing
    the first axis is equivalent under Gaussian input symmetry).
    """
    if not 0.0 <= alpha <= np.pi:
        raise ContractViolationError("alpha must be in [0, pi]")
    if d < 2:
        raise ContractViolationError("need input dimension >= 2")
    w1 = np.zeros(d)
    w1[0] = 1.0
    w2 = np.zeros(d)
    w2[0] = np.cos(alpha)
    w2[1] = np.sin(alpha)
    return w1, w2


def gen_rotated_regression(d: int, alpha: float, n: int, seed: int) -> tuple:
    """Two scalar-regression tasks tanh(w . x) over standard Gaussian inputs."""
    w1, w2 = regression_weights(alpha, d)
    rng = SeededRng(seed)
    xs = []
    for tag in (0, 1):
        xs.append(rng.child(tag).generator().standard_normal((n, d)))
    t1 = np.tanh(xs[0] @ w1)[:, None]
    t2 = np.tanh(xs[1] @ w2)[:, None]
    return (
        Dataset(inputs=xs[0], targets=t1, split="train"),
        Dataset(inputs=xs[1], targets=t2, split="train"),
    )


def gen_gaussian_blobs(
    d: int,
    num_classes: int,
    n: int,
    seed: int,
    center_scale: float = 3.0,
    center_seed: int | None = None,
    intrinsic_dim: int | None = None,
    ambient_noise: float = 0.1,
) -> Dataset:
    """Gaussian blobs around random class centers.

    ``center_seed`` pins the centers (and the embedding) independently of
    the point draw so train and test splits describe the same task.
    ``intrinsic_dim`` < d supports the blobs on a random low-dimensional
    subspace plus small ambient noise, the way image data sits near a
    low-dimensional manifold of pixel space; the default is isotropic.
    """
    if num_classes < 2 or d < 1 or n < num_classes:
        raise ContractViolationError("blobs need num_classes >= 2 and n >= num_classes")
    q = intrinsic_dim if intrinsic_dim is not None else d
    if not 1 <= q <= d:
        raise ContractViolationError("intrinsic_dim must be in [1, d]")
    rng = SeededRng(seed)
    center_rng = SeededRng(center_seed) if center_seed is not None else rng
    centers = center_rng.child(0).generator().standard_normal((num_classes, q)) * center_scale / np.sqrt(q)
    gen = rng.child(1).generator()
    labels = np.arange(n, dtype=np.int64) % num_classes
    latent = centers[labels] + gen.standard_normal((n, q))
    if q == d:
        points = latent
    else:
        embed, _ = np.linalg.qr(center_rng.child(1).generator().standard_normal((d, q)))
        points = latent @ embed.T + ambient_noise * gen.standard_normal((n, d))
    return Dataset(inputs=points, targets=labels, split="train", num_classes=num_classes)


def task_dissimilarity(alpha: float, n_mc: int, seed: int) -> tuple:
    """Monte-Carlo estimate of the mean squared target gap between tasks.

    Returns (value, standard error).  Only the first two input
    coordinates matter, so sampling is 2-D.
    """
    if n_mc < 1000:
        raise ContractViolationError("need at least 1000 Monte-Carlo samples")
    if alpha == 0.0:
        return 0.0, 0.0
    gen = SeededRng(seed).generator()
    z = gen.standard_normal((n_mc, 2))
    diff = np.tanh(z[:, 0]) - np.tanh(np.cos(alpha) * z[:, 0] + np.sin(alpha) * z[:, 1])
    sq = diff * diff
    return float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(n_mc))


# ---------------------------------------------------------------------------
# IDX ingestion


def _read_be32(payload: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(payload):
        raise FormatError(f"{path} truncated while reading header", byte_offset=offset)
    return struct.unpack_from(">I", payload, offset)[0]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load an IDX image/label pair; pixels scaled to [0, 1]."""
    with open(images_path, "rb") as fh:
        img = fh.read()
    magic = _read_be32(img, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{images_path} has bad magic 0x{magic:08x}", byte_offset=0)
    count = _read_be32(img, 4, images_path)
    rows = _read_be32(img, 8, images_path)
    cols = _read_be32(img, 12, images_path)
    expected = 16 + count * rows * cols
    if len(img) < expected:
        raise FormatError(f"{images_path} truncated: {len(img)} bytes < {expected}", byte_offset=len(img))
    pixels = np.frombuffer(img, dtype=np.uint8, count=count * rows * cols, offset=16)
    inputs = pixels.astype(np.float64).reshape(count, rows * cols) / 255.0

    with open(labels_path, "rb") as fh:
        lab = fh.read()
    magic = _read_be32(lab, 0, labels_path)
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(f"{labels_path} has bad magic 0x{magic:08x}", byte_offset=0)
    lab_count = _read_be32(lab, 4, labels_path)
    if lab_count != count:
        raise FormatError(
            f"{labels_path} holds {lab_count} labels but {images_path} holds {count} images",
            byte_offset=4,
        )
    if len(lab) < 8 + lab_count:
        raise FormatError(f"{labels_path} truncated", byte_offset=len(lab))
    labels = np.frombuffer(lab, dtype=np.uint8, count=lab_count, offset=8).astype(np.int64)
    return Dataset(inputs=inputs, targets=labels, split="train", num_classes=10)


def filter_digit_task(ds: Dataset, low: int, high: int) -> Dataset:
    """Keep labels in [low, high] and remap them to 0..(high-low)."""
    mask = (ds.targets >= low) & (ds.targets <= high)
    return Dataset(
        inputs=ds.inputs[mask],
        targets=(ds.targets[mask] - low).astype(np.int64),
        split=ds.split,
        num_classes=high - low + 1,
    )


# ---------------------------------------------------------------------------
# protocol configuration


@dataclass(frozen=True)
class MethodSpec:
    kind: str                 # "full" | "lora" | "plate" | "frozen"
    r: int = 0
    tau: float = 0.0
    k_max: int = 512
    rho: float = 0.5          # adapter scaling (both adapter kinds)

    def tag(self) -> str:
        if self.kind == "plate":
            return f"plate_r{self.r}_tau{self.tau:g}"
        if self.kind == "lora":
            return f"lora_r{self.r}"
        return self.kind


@dataclass(frozen=True)
class TaskSpec:
    kind: str                 # "two_moons" | "rotated_regression" | "gaussian_blobs" | "mnist_split"
    n_train: int = 512
    n_test: int = 2048
    noise: float = 0.1
    rotation_deg: float = 90.0
    translation: tuple = (0.0, 0.0)
    d: int = 100
    alpha: float = np.pi / 2
    num_classes: int = 5
    center_scale: float = 3.0
    intrinsic_dim: int | None = None
    ambient_noise: float = 0.1
    images_path: str = ""
    labels_path: str = ""
    test_images_path: str = ""
    test_labels_path: str = ""


@dataclass(frozen=True)
class ArchSpec:
    hidden: tuple
    activation: str

    def head_sizes(self, task: TaskSpec) -> dict:
        if task.kind == "rotated_regression":
            return {"task1": 1, "task2": 1}
        if task.kind == "two_moons":
            return {"task1": 2, "task2": 2}
        return {"task1": task.num_classes, "task2": task.num_classes}


@dataclass(frozen=True)
class MetricsConfig:
    epsilon: bool = False
    lamda: bool = False  # "lambda" is reserved; JSON key stays "lambda"
    max_samples: int = 1024
    power_iters: int = 200
    tol: float = 1e-7


@dataclass(frozen=True)
class ProtocolConfig:
    task: TaskSpec
    arch: ArchSpec
    stage1: TrainConfig
    stage2: TrainConfig
    method: MethodSpec
    seeds: tuple
    metrics: MetricsConfig = MetricsConfig()
    srht: str = "auto"


@dataclass
class RunResult:
    method: MethodSpec
    seed: int
    trainable_params: int
    metric1_base: float       # task-1 metric after stage 1 (accuracy or loss)
    metric2: float            # task-2 metric after stage 2
    metric1_after: float      # task-1 metric after stage 2
    forgetting: float         # higher = worse retention
    ks: tuple = ()            # induced basis dims per adapted layer
    stage1_curve: tuple = ()
    stage2_curve: tuple = ()
    epsilon: float | None = None
    lambda_s: float | None = None
    classification: bool = True

    @property
    def k(self) -> int:
        return max(self.ks) if self.ks else 0

    def to_dict(self) -> dict:
        return {
            "method": self.method.tag(),
            "r": self.method.r,
            "tau": self.method.tau,
            "k": self.k,
            "ks": list(self.ks),
            "seed": self.seed,
            "trainable_params": self.trainable_params,
            "acc1_base": self.metric1_base,
            "acc2": self.metric2,
            "acc1_after": self.metric1_after,
            "forgetting": self.forgetting,
            "epsilon": self.epsilon,
            "lambda": self.lambda_s,
            "stage1_curve": list(self.stage1_curve),
            "stage2_curve": list(self.stage2_curve),
            "classification": self.classification,
        }


@dataclass
class RunFailure:
    method: MethodSpec
    seed: int
    error: str


# ---------------------------------------------------------------------------
# task construction


def make_task_pair(task: TaskSpec, seed: int) -> tuple:
    """(train1, test1, train2, test2) datasets for one run seed."""
    rng = SeededRng(seed)
    if task.kind == "two_moons":
        base = dict(noise_sigma=task.noise, translation=(0.0, 0.0))
        tr1 = gen_two_moons(task.n_train, rotation_deg=0.0, seed=rng.child(_TAG_DATA1_TRAIN).seed, **base)
        te1 = gen_two_moons(task.n_test, rotation_deg=0.0, seed=rng.child(_TAG_DATA1_TEST).seed, **base)
        base2 = dict(noise_sigma=task.noise, translation=task.translation)
        tr2 = gen_two_moons(task.n_train, rotation_deg=task.rotation_deg, seed=rng.child(_TAG_DATA2_TRAIN).seed, **base2)
        te2 = gen_two_moons(task.n_test, rotation_deg=task.rotation_deg, seed=rng.child(_TAG_DATA2_TEST).seed, **base2)
    elif task.kind == "rotated_regression":
        tr1, tr2 = gen_rotated_regression(task.d, task.alpha, task.n_train, rng.child(_TAG_DATA1_TRAIN).seed)
        te1, te2 = gen_rotated_regression(task.d, task.alpha, task.n_test, rng.child(_TAG_DATA1_TEST).seed)
    elif task.kind == "gaussian_blobs":
        # task 1 and task 2 are disjoint label sets: separate center seeds,
        # each shared between that task's train and test split
        c1 = rng.child(_TAG_CENTERS1).seed
        c2 = rng.child(_TAG_CENTERS2).seed
        blob_kw = dict(center_scale=task.center_scale, intrinsic_dim=task.intrinsic_dim,
                       ambient_noise=task.ambient_noise)
        tr1 = gen_gaussian_blobs(task.d, task.num_classes, task.n_train, rng.child(_TAG_DATA1_TRAIN).seed, center_seed=c1, **blob_kw)
        te1 = gen_gaussian_blobs(task.d, task.num_classes, task.n_test, rng.child(_TAG_DATA1_TEST).seed, center_seed=c1, **blob_kw)
        tr2 = gen_gaussian_blobs(task.d, task.num_classes, task.n_train, rng.child(_TAG_DATA2_TRAIN).seed, center_seed=c2, **blob_kw)
        te2 = gen_gaussian_blobs(task.d, task.num_classes, task.n_test, rng.child(_TAG_DATA2_TEST).seed, center_seed=c2, **blob_kw)
    elif task.kind == "mnist_split":
        full_train = load_idx(task.images_path, task.labels_path)
        full_test = load_idx(task.test_images_path, task.test_labels_path)
        full_test = replace(full_test, split="test")
        tr1 = filter_digit_task(full_train, 0, 4)
        te1 = filter_digit_task(full_test, 0, 4)
        tr2 = filter_digit_task(full_train, 5, 9)
        te2 = filter_digit_task(full_test, 5, 9)
    else:
        raise ContractViolationError(f"unknown task kind {task.kind!r}")
    te1 = replace(te1, split="test")
    te2 = replace(te2, split="test")
    return tr1, te1, tr2, te2


def _is_classification(task: TaskSpec) -> bool:
    return task.kind != "rotated_regression"


def _default_loss(task: TaskSpec) -> str:
    return "softmax_cross_entropy" if _is_classification(task) else "mse"


def _task_metric(model: Mlp, ds: Dataset, head: str, classification: bool, loss: str) -> float:
    if classification:
        return accuracy(model, ds.inputs, ds.targets, head)
    return mean_loss(model, ds.inputs, ds.targets, head, loss)


def build_adapters(model: Mlp, method: MethodSpec, seed: int, srht: str = "auto"):
    """Per-layer adapters for a method, seeded per layer."""
    rng = SeededRng(seed).child(_TAG_ADAPTER)
    adapters = []
    for idx, layer in enumerate(model.layers):
        d_out, d_in = layer.weight.shape
        if method.kind == "full":
            adapters.append(FullFineTune())
        elif method.kind == "frozen":
            adapters.append(Frozen())
        elif method.kind == "lora":
            adapters.append(lora_init(d_out, d_in, method.r, method.rho, rng.child(idx).seed))
        elif method.kind == "plate":
            adapters.append(
                plate_init(
                    layer.weight,
                    r=method.r,
                    tau=method.tau,
                    k_max=min(method.k_max, d_in),
                    rho=method.rho,
                    seed=rng.child(idx).seed,
                    srht=srht,
                )
            )
        else:
            raise ContractViolationError(f"unknown method kind {method.kind!r}")
    return adapters


def _count_trainable(model: Mlp, adapters, head: str) -> int:
    total = 0
    for layer, adapter in zip(model.layers, adapters):
        d_out, d_in = layer.weight.shape
        total += trainable_param_count(adapter, d_out, d_in)
        if isinstance(adapter, FullFineTune):
            total += layer.bias.size
    h = model.heads[head]
    return total + h.weight.size + h.bias.size


# ---------------------------------------------------------------------------
# the protocol


@dataclass
class Stage1Artifacts:
    model: Mlp
    metric1_base: float
    curve: tuple
    train1: Dataset
    test1: Dataset


def stage1_fingerprint(config: ProtocolConfig, seed: int) -> tuple:
    # task-2-only knobs (rotation angle, translation, alpha) do not touch
    # stage 1, so grid cells varying them share the same checkpoint
    task1_view = replace(config.task, alpha=0.0, rotation_deg=0.0, translation=(0.0, 0.0))
    return (task1_view, config.arch, config.stage1, seed)


def run_stage1(config: ProtocolConfig, seed: int) -> Stage1Artifacts:
    task, arch = config.task, config.arch
    tr1, te1, _, _ = make_task_pair(task, seed)
    rng = SeededRng(seed)
    model = init_mlp(
        input_dim=tr1.inputs.shape[1],
        hidden=list(arch.hidden),
        activation=arch.activation,
        heads=arch.head_sizes(task),
        seed=rng.child(_TAG_MODEL_INIT).seed,
    )
    loss = config.stage1.loss
    cfg = replace(config.stage1, seed=rng.child(_TAG_STAGE1_SHUFFLE).seed)
    adapters = [FullFineTune()] * len(model.layers)
    _, curve = train(model, adapters, tr1.inputs, tr1.targets, "task1", cfg)
    classification = _is_classification(task)
    metric = _task_metric(model, te1, "task1", classification, loss)
    return Stage1Artifacts(model=model, metric1_base=metric, curve=tuple(curve),
                           train1=tr1, test1=te1)


@dataclass
class Stage2Outcome:
    result: RunResult
    model: Mlp
    adapters: list


def run_stage2(config: ProtocolConfig, seed: int, stage1: Stage1Artifacts) -> Stage2Outcome:
    task = config.task
    method = config.method
    classification = _is_classification(task)
    loss = config.stage2.loss
    te1 = stage1.test1
    _, _, tr2, te2 = make_task_pair(task, seed)

    model = stage1.model.copy()
    rng = SeededRng(seed)
    init_head(model, "task2", model.heads["task2"].weight.shape[0], rng.child(_TAG_HEAD2_INIT).seed)
    adapters = build_adapters(model, method, seed, config.srht)
    ks = tuple(a.k for a in adapters if hasattr(a, "k"))
    trainable = _count_trainable(model, adapters, "task2")

    cfg = replace(config.stage2, seed=rng.child(_TAG_STAGE2_SHUFFLE).seed)
    _, curve = train(model, adapters, tr2.inputs, tr2.targets, "task2", cfg)

    merged = merged_copy(model, adapters)
    metric2 = _task_metric(merged, te2, "task2", classification, loss)
    metric1_after = _task_metric(merged, te1, "task1", classification, loss)
    if classification:
        forget = stage1.metric1_base - metric1_after
    else:
        forget = metric1_after - stage1.metric1_base

    epsilon = lambda_s = None
    if config.metrics.epsilon or config.metrics.lamda:
        theta0 = params_to_vector(stage1.model).data
        family_kind = {"plate": "plate", "lora": "lora_tangent"}.get(method.kind, "full")
        family_adapters = adapters if method.kind in ("plate", "lora") else [FullFineTune()] * len(model.layers)
        family = subspace_basis(stage1.model, family_adapters, family_kind)
        sub = te1.inputs[: config.metrics.max_samples]
        sub_targets = te1.targets[: config.metrics.max_samples]
        if config.metrics.epsilon:
            epsilon = drift_radius(
                stage1.model, "task1", theta0, family, sub,
                config.metrics.power_iters, config.metrics.tol,
                seed=rng.child(_TAG_METRICS).seed,
            ).epsilon
        if config.metrics.lamda:
            lambda_s = restricted_curvature(
                stage1.model, "task1", theta0, family, sub, sub_targets, loss,
                config.metrics.power_iters, config.metrics.tol,
                seed=rng.child(_TAG_METRICS).seed,
            ).lambda_s

    result = RunResult(
        method=method,
        seed=seed,
        trainable_params=trainable,
        metric1_base=stage1.metric1_base,
        metric2=metric2,
        metric1_after=metric1_after,
        forgetting=forget,
        ks=ks,
        stage1_curve=stage1.curve,
        stage2_curve=tuple(curve),
        epsilon=epsilon,
        lambda_s=lambda_s,
        classification=classification,
    )
    return Stage2Outcome(result=result, model=model, adapters=adapters)


def run_protocol(config: ProtocolConfig, stage1_cache: dict | None = None):
    """Execute the two-task protocol for every seed of one method config.

    Returns (results, failures).  A failing seed is recorded and the
    remaining seeds proceed.
    """
    if stage1_cache is None:
        stage1_cache = {}
    results = []
    failures = []
    for seed in config.seeds:
        try:
            key = stage1_fingerprint(config, seed)
            if key not in stage1_cache:
                stage1_cache[key] = run_stage1(config, seed)
            results.append(run_stage2(config, seed, stage1_cache[key]).result)
        except Exception as exc:  # noqa: BLE001 - per-seed isolation is the contract
            failures.append(RunFailure(method=config.method, seed=seed, error=f"{type(exc).__name__}: {exc}"))
    return results, failures


def sweep(configs):
    """Run a grid of protocol configs with shared stage-1 checkpoints."""
    if not configs:
        raise ContractViolationError("sweep needs a nonempty config grid")
    cache: dict = {}
    all_results = []
    all_failures = []
    for config in configs:
        results, failures = run_protocol(config, stage1_cache=cache)
        all_results.extend(results)
        all_failures.extend(failures)
    return all_results, all_failures


def aggregate(results, key=lambda r: r.method.tag()):
    """Seed-mean and seed-std of the headline metrics per group."""
    groups: dict = {}
    for r in results:
        groups.setdefault(key(r), []).append(r)
    out = {}
    for name, rows in groups.items():
        forg = np.array([r.forgetting for r in rows])
        m2 = np.array([r.metric2 for r in rows])
        out[name] = {
            "n": len(rows),
            "forgetting_mean": float(forg.mean()),
            "forgetting_std": float(forg.std(ddof=1)) if len(rows) > 1 else 0.0,
            "metric2_mean": float(m2.mean()),
            "metric2_std": float(m2.std(ddof=1)) if len(rows) > 1 else 0.0,
        }
    return out

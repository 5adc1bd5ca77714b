"""Function-class samplers, prompt encoding, and distribution-shift transforms.

A prompt interleaves inputs and labels as rows of one token matrix:
row 2i holds x_{i+1} zero-padded to d_max, row 2i+1 holds the label
token (y_{i+1}, 0, ..., 0), and the final row is the query input. The
label of the query is kept alongside as the last target but never
appears in the tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

TASK_KINDS = ("linear", "sparse_linear", "noisy_linear", "decision_tree", "relu_nn")

OOD_KINDS = (
    "skewed_covariance",
    "half_subspace",
    "noisy_output",
    "scale_x",
    "scale_w",
    "orthogonal_query",
    "duplicate_query",
    "different_orthants",
)


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    d: int
    k: int
    s: int = 0            # sparse_linear: nonzero count
    sigma: float = 0.0    # noisy_linear: label noise std
    depth: int = 4        # decision_tree
    hidden: int = 100     # relu_nn

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind '{self.kind}'")
        if self.d < 1 or self.k < 1:
            raise ValueError("task requires d >= 1 and k >= 1")
        if self.kind == "sparse_linear" and not (1 <= self.s <= self.d):
            raise ValueError(f"sparse_linear requires 1 <= s <= d, got s={self.s}")
        if self.kind == "noisy_linear" and self.sigma < 0:
            raise ValueError("noisy_linear requires sigma >= 0")
        if self.kind == "decision_tree" and self.depth < 1:
            raise ValueError("decision_tree requires depth >= 1")
        if self.kind == "relu_nn" and self.hidden < 1:
            raise ValueError("relu_nn requires hidden >= 1")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "d": self.d, "k": self.k}
        if self.kind == "sparse_linear":
            out["s"] = self.s
        if self.kind == "noisy_linear":
            out["sigma"] = self.sigma
        if self.kind == "decision_tree":
            out["depth"] = self.depth
        if self.kind == "relu_nn":
            out["hidden"] = self.hidden
        return out


@dataclass
class TaskInstance:
    """One sampled function: the spec plus its drawn parameters."""

    spec: TaskSpec
    w: np.ndarray | None = None              # linear family
    split_coords: np.ndarray | None = None   # tree: heap-ordered internal nodes
    leaf_values: np.ndarray | None = None    # tree: 2**depth leaves
    nn_w1: np.ndarray | None = None          # relu_nn: (hidden, d)
    nn_w2: np.ndarray | None = None          # relu_nn: (hidden,)


@dataclass(frozen=True)
class OodTransform:
    kind: str
    c: float = 1.0       # scale_x / scale_w factor
    sigma: float = 1.0   # noisy_output label noise std

    def __post_init__(self):
        if self.kind not in OOD_KINDS:
            raise ValueError(f"unknown transform kind '{self.kind}'")
        if self.c <= 0:
            raise ValueError("transform scale must be > 0")
        if self.sigma < 0:
            raise ValueError("transform noise std must be >= 0")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("scale_x", "scale_w"):
            out["c"] = self.c
        if self.kind == "noisy_output":
            out["sigma"] = self.sigma
        return out


@dataclass
class EncodedPrompt:
    """Token matrix (2k+1, d_max) plus retained generating context."""

    tokens: np.ndarray          # (2k+1, d_max) float64
    targets: np.ndarray         # (k+1,) labels y_1..y_{k+1}; last is the query's
    xs: np.ndarray              # (k+1, d) raw inputs before padding
    task: TaskInstance
    valid: np.ndarray = field(default=None)  # bool mask over rows

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.ones(self.tokens.shape[0], dtype=bool)

    @property
    def k(self) -> int:
        return self.targets.shape[0] - 1


@dataclass
class PromptBatch:
    tokens: np.ndarray    # (B, 2k+1, d_max)
    targets: np.ndarray   # (B, k+1)
    xs: np.ndarray        # (B, k+1, d)
    tasks: list[TaskInstance]

    @property
    def k(self) -> int:
        return self.targets.shape[1] - 1

    @property
    def batch_size(self) -> int:
        return self.tokens.shape[0]


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_task(spec: TaskSpec, rng: np.random.Generator) -> TaskInstance:
    """Draw one function from the class; all parameters are N(0, 1)."""
    if spec.kind in ("linear", "noisy_linear"):
        return TaskInstance(spec, w=rng.standard_normal(spec.d))
    if spec.kind == "sparse_linear":
        w = rng.standard_normal(spec.d)
        support = rng.choice(spec.d, size=spec.s, replace=False)
        mask = np.zeros(spec.d, dtype=bool)
        mask[support] = True
        w[~mask] = 0.0
        return TaskInstance(spec, w=w)
    if spec.kind == "decision_tree":
        n_internal = 2 ** spec.depth - 1
        coords = np.zeros(n_internal, dtype=np.int64)
        # uniform split coordinate per node, excluding ancestors' choices
        # (when possible) so every leaf stays reachable by some sign pattern
        for node in range(n_internal):
            used = set()
            anc = node
            while anc > 0:
                anc = (anc - 1) // 2
                used.add(int(coords[anc]))
            pool = [c for c in range(spec.d) if c not in used]
            if not pool:
                pool = list(range(spec.d))
            coords[node] = pool[rng.integers(0, len(pool))]
        return TaskInstance(
            spec,
            split_coords=coords,
            leaf_values=rng.standard_normal(2 ** spec.depth),
        )
    if spec.kind == "relu_nn":
        return TaskInstance(
            spec,
            nn_w1=rng.standard_normal((spec.hidden, spec.d)),
            nn_w2=rng.standard_normal(spec.hidden),
        )
    raise ValueError(spec.kind)


def eval_function_batch(task: TaskInstance, X: np.ndarray) -> np.ndarray:
    """Exact function values for rows of X (n, d)."""
    spec = task.spec
    if X.ndim != 2 or X.shape[1] != spec.d:
        raise ValueError(f"inputs must be (n, {spec.d}), got {X.shape}")
    if spec.kind in ("linear", "sparse_linear", "noisy_linear"):
        return X @ task.w
    if spec.kind == "decision_tree":
        n = X.shape[0]
        idx = np.zeros(n, dtype=np.int64)
        for _ in range(spec.depth):
            coords = task.split_coords[idx]
            go_right = X[np.arange(n), coords] > 0
            idx = 2 * idx + 1 + go_right
        return task.leaf_values[idx - (2 ** spec.depth - 1)]
    if spec.kind == "relu_nn":
        return np.maximum(X @ task.nn_w1.T, 0.0) @ task.nn_w2
    raise ValueError(spec.kind)


def eval_function(task: TaskInstance, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (task.spec.d,):
        raise ValueError(f"input must have shape ({task.spec.d},), got {x.shape}")
    return float(eval_function_batch(task, x[None, :])[0])


def encode_prompt(xs: np.ndarray, ys: np.ndarray, d_max: int,
                  task: TaskInstance) -> EncodedPrompt:
    """Interleave (k+1) inputs and their first k labels into tokens."""
    kp1, d = xs.shape
    if d > d_max:
        raise ValueError(f"input dim {d} exceeds d_max {d_max}")
    tokens = np.zeros((2 * kp1 - 1, d_max), dtype=np.float64)
    tokens[0::2, :d] = xs
    tokens[1::2, 0] = ys[:-1]
    return EncodedPrompt(tokens=tokens, targets=ys.copy(), xs=xs, task=task)


def _sample_inputs(spec: TaskSpec, k: int, rng: np.random.Generator,
                   d_active: int | None) -> np.ndarray:
    xs = rng.standard_normal((k + 1, spec.d))
    if d_active is not None and d_active < spec.d:
        xs[:, d_active:] = 0.0
    return xs


def sample_prompt(task: TaskInstance, k: int, rng: np.random.Generator,
                  d_max: int | None = None,
                  d_active: int | None = None) -> EncodedPrompt:
    """Draw k in-context pairs plus the query; inputs are i.i.d. N(0, I)."""
    spec = task.spec
    if k < 1:
        raise ValueError("k must be >= 1")
    d_max = spec.d if d_max is None else d_max
    xs = _sample_inputs(spec, k, rng, d_active)
    ys = eval_function_batch(task, xs)
    if spec.kind == "noisy_linear" and spec.sigma > 0:
        ys = ys + spec.sigma * rng.standard_normal(k + 1)
    return encode_prompt(xs, ys, d_max, task)


def apply_ood_transform(task: TaskInstance, k: int, transform: OodTransform,
                        rng: np.random.Generator, d_max: int | None = None) -> EncodedPrompt:
    """Sample one prompt under a shifted generating process.

    Labels always come from the true function applied to the transformed
    inputs; only noisy_output perturbs labels, and then only the in-context
    ones, so the error against the clean query target measures denoising.
    """
    spec = task.spec
    d = spec.d
    d_max = d if d_max is None else d_max
    kind = transform.kind

    if kind == "scale_w":
        if task.w is None:
            raise ValueError("scale_w applies to linear-family tasks only")
        task = replace_weights(task, task.w * transform.c)
        return sample_prompt(task, k, rng, d_max)

    if kind == "skewed_covariance":
        lams = 1.0 / np.arange(1, d + 1) ** 2
        lams *= d / lams.sum()
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        q *= np.sign(np.diag(r))
        A = q * np.sqrt(lams)  # x = A z has covariance Q diag(lam) Q^T
        xs = rng.standard_normal((k + 1, d)) @ A.T
    elif kind == "half_subspace":
        m = max(1, d // 2)
        q, r = np.linalg.qr(rng.standard_normal((d, m)))
        q *= np.sign(np.diag(r)[:m])
        xs = rng.standard_normal((k + 1, m)) @ q.T
    elif kind == "scale_x":
        xs = transform.c * rng.standard_normal((k + 1, d))
    elif kind == "different_orthants":
        signs = rng.choice([-1.0, 1.0], size=d)
        mags = np.abs(rng.standard_normal((k + 1, d)))
        xs = mags * signs
        xs[-1] *= -1.0  # query gets the complementary orthant
    elif kind == "orthogonal_query":
        xs = rng.standard_normal((k + 1, d))
        ctx = xs[:-1]
        if np.linalg.matrix_rank(ctx) >= d:
            raise ValueError(
                "orthogonal_query needs rank(context) < d; use k < d")
        q = xs[-1]
        norm = np.linalg.norm(q)
        basis, _ = np.linalg.qr(ctx.T)  # (d, rank-ish)
        q_perp = q - basis @ (basis.T @ q)
        q_norm = np.linalg.norm(q_perp)
        if q_norm < 1e-12:
            raise ValueError("query collapsed onto the context span")
        xs[-1] = q_perp * (norm / q_norm)
    elif kind == "duplicate_query":
        xs = rng.standard_normal((k + 1, d))
        xs[-1] = xs[rng.integers(0, k)]
    elif kind == "noisy_output":
        xs = rng.standard_normal((k + 1, d))
    else:
        raise ValueError(kind)

    ys = eval_function_batch(task, xs)
    if kind == "noisy_output" and transform.sigma > 0:
        ys[:-1] = ys[:-1] + transform.sigma * rng.standard_normal(k)
    return encode_prompt(xs, ys, d_max, task)


def replace_weights(task: TaskInstance, w: np.ndarray) -> TaskInstance:
    return TaskInstance(spec=task.spec, w=w, split_coords=task.split_coords,
                        leaf_values=task.leaf_values, nn_w1=task.nn_w1,
                        nn_w2=task.nn_w2)


def sample_prompt_batch(spec: TaskSpec, batch_size: int, k: int,
                        rng: np.random.Generator,
                        d_max: int | None = None,
                        d_active: int | None = None,
                        transform: OodTransform | None = None,
                        fixed_task: TaskInstance | None = None) -> PromptBatch:
    """Batch of independent prompts, a fresh function per prompt unless
    ``fixed_task`` pins one (probe control protocol)."""
    d_max = spec.d if d_max is None else d_max
    tokens = np.zeros((batch_size, 2 * k + 1, d_max), dtype=np.float64)
    targets = np.zeros((batch_size, k + 1), dtype=np.float64)
    xs = np.zeros((batch_size, k + 1, spec.d), dtype=np.float64)
    tasks: list[TaskInstance] = []
    for i in range(batch_size):
        task = fixed_task if fixed_task is not None else sample_task(spec, rng)
        if transform is None:
            p = sample_prompt(task, k, rng, d_max=d_max, d_active=d_active)
        else:
            p = apply_ood_transform(task, k, transform, rng, d_max=d_max)
        tokens[i] = p.tokens
        targets[i] = p.targets
        xs[i] = p.xs
        tasks.append(task)
    return PromptBatch(tokens=tokens, targets=targets, xs=xs, tasks=tasks)


def decode_prompt_tokens(tokens: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Recover (xs (B,k+1,d), context ys (B,k)) from encoded tokens."""
    if tokens.ndim == 2:
        tokens = tokens[None]
    xs = tokens[:, 0::2, :d]
    ys = tokens[:, 1::2, 0]
    return xs, ys

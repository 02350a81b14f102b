"""Per-location Gaussian statistics in embedded space and Mahalanobis scoring.

Fitting subtracts the per-location sample mean, projects residuals through
the F x k embedding and accumulates the biased (1/N) covariance of the
projected residuals, so the F x F covariance is never materialized for the
random strategies.  The k x k result S = W^T C W + eps*I is Cholesky-factored
once; scoring an image is then one batched triangular solve per location.

The eigenvector strategies are the exception: they need the per-location
F x F covariance to pick eigenvectors from, which is why they carry an
embedding grid (one matrix per location) and an F <= 512 restriction.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import embedding as emb
from . import linalg
from .errors import (
    CorruptModel,
    DimensionMismatch,
    InsufficientSamples,
    IoError,
    ModelMismatch,
    ValidationError,
)

MODEL_MAGIC = b"SOMD"
MODEL_VERSION = 1

# Cap on the float64 working set of one fitting block, in elements.
_BLOCK_BUDGET = 32_000_000


@dataclass(frozen=True)
class RunConfig:
    """Everything a fit depends on besides the training tensor itself."""

    k: int
    seed: int
    strategy: str = emb.STRATEGY_SEMI_ORTHOGONAL
    epsilon: float = 0.01
    smoothing_sigma: float = 4.0
    output_size: tuple[int, int] = (256, 256)

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.epsilon < 0:
            raise ValidationError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.strategy not in emb.STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")


@dataclass(frozen=True)
class LocationGaussian:
    """Fitted statistics of a single feature-map location."""

    mean: np.ndarray  # (f,)
    chol: np.ndarray  # (k, k) lower triangular

    @property
    def embedded_cov(self) -> np.ndarray:
        return self.chol @ self.chol.T


@dataclass
class GaussianModel:
    """Fitted per-location Gaussians plus the embedding that produced them."""

    embedding: emb.EmbeddingMatrix | emb.EmbeddingGrid
    means: np.ndarray  # (h, w, f)
    chols: np.ndarray  # (h, w, k, k)
    config: RunConfig
    n_train: int
    manifest_digest: str = ""
    prng_name: str = linalg.PRNG_NAME
    _chol_inv: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def grid_h(self) -> int:
        return self.means.shape[0]

    @property
    def grid_w(self) -> int:
        return self.means.shape[1]

    @property
    def f(self) -> int:
        return self.means.shape[2]

    @property
    def k(self) -> int:
        return self.chols.shape[3]

    def location(self, i: int, j: int) -> LocationGaussian:
        return LocationGaussian(self.means[i, j], self.chols[i, j])

    def location_embedding(self, i: int, j: int) -> np.ndarray:
        if isinstance(self.embedding, emb.EmbeddingGrid):
            return self.embedding.w[i, j]
        return self.embedding.w

    def chol_inverses(self) -> np.ndarray:
        """Batched L^-1, computed once and cached; scoring uses it."""
        if self._chol_inv is None:
            self._chol_inv = linalg.tri_inv_stack(self.chols)
        return self._chol_inv


def check_feature_tensor(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t)
    if t.ndim != 4:
        raise DimensionMismatch(f"feature tensor must be (n, f, h, w), got {t.shape}")
    if not np.isfinite(t).all():
        raise ValidationError("feature tensor contains non-finite values")
    return t


def check_dims(cfg: RunConfig, f: int) -> int:
    """Validate k/strategy against the feature size; returns the effective k.

    Callers with a manifest can run this before reading any tensor data.
    """
    if cfg.strategy == emb.STRATEGY_FULL:
        if cfg.k != f:
            raise ValidationError(f"full strategy requires k == F ({f}), got k={cfg.k}")
        return f
    if cfg.k > f:
        raise ValidationError(f"k={cfg.k} exceeds feature size F={f}")
    if cfg.strategy in emb.EIGEN_STRATEGIES and f > emb.EIGEN_MAX_F:
        raise ValidationError(
            f"eigen strategies are limited to F <= {emb.EIGEN_MAX_F}, got F={f}"
        )
    return cfg.k


def _build_global_embedding(cfg: RunConfig, f: int) -> emb.EmbeddingMatrix:
    if cfg.strategy == emb.STRATEGY_FULL:
        return emb.full_embedding(f)
    if cfg.strategy == emb.STRATEGY_SEMI_ORTHOGONAL:
        return emb.semi_orthogonal(f, cfg.k, cfg.seed)
    if cfg.strategy == emb.STRATEGY_RANDOM_SELECTION:
        return emb.random_selection(f, cfg.k, cfg.seed)
    if cfg.strategy == emb.STRATEGY_GAUSSIAN:
        return emb.gaussian_random(f, cfg.k, cfg.seed)
    raise ValidationError(f"strategy {cfg.strategy!r} has no global embedding")


def _location_blocks(hw: int, n: int, f: int) -> list[slice]:
    per_loc = max(n * f, 1)
    block = max(1, min(hw, _BLOCK_BUDGET // per_loc))
    return [slice(s, min(s + block, hw)) for s in range(0, hw, block)]


def fit(
    train: np.ndarray,
    cfg: RunConfig,
    manifest_digest: str = "",
    threads: int | None = None,
) -> GaussianModel:
    """Fit per-location Gaussians on an (n, f, h, w) training tensor."""
    train = check_feature_tensor(train)
    n, f, h, w = train.shape
    if n < 2:
        raise InsufficientSamples(f"need at least 2 training samples, got {n}")
    k = check_dims(cfg, f)
    flat = train.reshape(n, f, h * w)

    if cfg.strategy in emb.EIGEN_STRATEGIES:
        embed, s_stack, means = _fit_eigen(flat, cfg, k, (h, w))
    else:
        embed = _build_global_embedding(cfg, f)
        s_stack, means = _fit_projected(flat, embed.w, cfg.epsilon, threads)

    chols = linalg.cholesky_stack(s_stack).reshape(h, w, k, k)
    return GaussianModel(
        embedding=embed,
        means=means.reshape(h, w, f),
        chols=chols,
        config=cfg,
        n_train=n,
        manifest_digest=manifest_digest,
    )


def _fit_block(flat, w_mat, eps, sl, means, s_stack):
    n = flat.shape[0]
    k = w_mat.shape[1]
    block = flat[:, :, sl].astype(np.float64)
    mu = block.mean(axis=0)
    means[:, sl] = mu
    z = np.einsum("fk,nfb->nkb", w_mat, block - mu, optimize=True)
    s = np.einsum("nkb,nmb->bkm", z, z, optimize=True) / n
    s += eps * np.eye(k)
    s_stack[sl] = s


def _fit_projected(flat, w_mat, eps, threads):
    """Project-then-accumulate path: never materializes the F x F covariance."""
    n, f, hw = flat.shape
    k = w_mat.shape[1]
    means = np.empty((f, hw))
    s_stack = np.empty((hw, k, k))
    blocks = _location_blocks(hw, n, f)
    if threads and threads > 1 and len(blocks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda sl: _fit_block(flat, w_mat, eps, sl, means, s_stack), blocks))
    else:
        for sl in blocks:
            _fit_block(flat, w_mat, eps, sl, means, s_stack)
    return s_stack, means.T.copy()


def _fit_eigen(flat, cfg: RunConfig, k: int, grid: tuple[int, int]):
    n, f, hw = flat.shape
    which = "lower" if cfg.strategy == emb.STRATEGY_EIGEN_LOWER else "higher"
    means = np.empty((hw, f))
    w_grid = np.empty((hw, f, k))
    s_stack = np.empty((hw, k, k))
    eye = np.eye(k)
    for loc in range(hw):
        x = flat[:, :, loc].astype(np.float64)
        mu = x.mean(axis=0)
        centered = x - mu
        c = centered.T @ centered / n
        w_loc = emb.eigen_embedding(c, k, which).w
        s = w_loc.T @ c @ w_loc
        means[loc] = mu
        w_grid[loc] = w_loc
        s_stack[loc] = 0.5 * (s + s.T) + cfg.epsilon * eye
    h, w = grid
    grid_emb = emb.EmbeddingGrid(
        w_grid.reshape(h, w, f, k), cfg.strategy, h, w, f, k
    )
    return grid_emb, s_stack, means


def mahalanobis_sq(x: np.ndarray, g: LocationGaussian, w: emb.EmbeddingMatrix | np.ndarray) -> float:
    """Squared embedded Mahalanobis distance of one feature vector.

    z = W^T (x - mean); the value is z^T S^-1 z computed through the stored
    triangular factor, so it is non-negative by construction.
    """
    w_mat = w.w if isinstance(w, emb.EmbeddingMatrix) else np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (w_mat.shape[0],) or g.mean.shape != x.shape:
        raise DimensionMismatch(
            f"feature vector {x.shape}, embedding {w_mat.shape}, mean {g.mean.shape}"
        )
    z = w_mat.T @ (x - g.mean)
    y = solve_triangular(g.chol, z, lower=True)
    return float(y @ y)


def _project_residuals(model: GaussianModel, image: np.ndarray) -> np.ndarray:
    f, h, w = image.shape
    centered = image.reshape(f, h * w).astype(np.float64) - model.means.reshape(h * w, f).T
    if isinstance(model.embedding, emb.EmbeddingGrid):
        w_grid = model.embedding.w.reshape(h * w, f, model.k)
        return np.einsum("lfk,fl->kl", w_grid, centered, optimize=True)
    return model.embedding.w.T @ centered


def score_image(model: GaussianModel, test: np.ndarray) -> np.ndarray:
    """Raw (h, w) anomaly scores (distance d, not d^2) for one test image.

    Accepts (f, h, w) or a singleton (1, f, h, w) tensor.  Upsampling and
    smoothing are separate post-processing steps (features.finalize_scores).
    """
    test = np.asarray(test)
    if test.ndim == 4:
        if test.shape[0] != 1:
            raise ModelMismatch(f"score_image takes a single image, got n={test.shape[0]}")
        test = test[0]
    h, w = model.grid_h, model.grid_w
    if test.shape != (model.f, h, w):
        raise ModelMismatch(
            f"test image shape {test.shape} incompatible with model ({model.f}, {h}, {w})"
        )
    z = _project_residuals(model, test)
    y = np.einsum("lij,jl->li", model.chol_inverses().reshape(h * w, model.k, model.k), z,
                  optimize=True)
    d_sq = np.einsum("li,li->l", y, y)
    return np.sqrt(np.maximum(d_sq, 0.0)).reshape(h, w)


def score_images(model: GaussianModel, tests: np.ndarray, threads: int | None = None) -> np.ndarray:
    """Score a stack of (n, f, h, w) test images; returns (n, h, w)."""
    tests = check_feature_tensor(tests)
    model.chol_inverses()  # materialize once before any worker starts
    if threads and threads > 1 and tests.shape[0] > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            maps = list(pool.map(lambda i: score_image(model, tests[i]), range(tests.shape[0])))
    else:
        maps = [score_image(model, tests[i]) for i in range(tests.shape[0])]
    return np.stack(maps)


def _config_doc(cfg: RunConfig) -> dict:
    return {
        "k": cfg.k,
        "seed": cfg.seed,
        "strategy": cfg.strategy,
        "epsilon": cfg.epsilon,
        "smoothing_sigma": cfg.smoothing_sigma,
        "output_size": list(cfg.output_size),
    }


def _config_from_doc(doc: dict) -> RunConfig:
    return RunConfig(
        k=int(doc["k"]),
        seed=int(doc["seed"]),
        strategy=str(doc["strategy"]),
        epsilon=float(doc["epsilon"]),
        smoothing_sigma=float(doc["smoothing_sigma"]),
        output_size=tuple(int(v) for v in doc["output_size"]),
    )


def save_model(model: GaussianModel, path: str) -> None:
    """Binary container: magic, version, JSON header, raw float64 blocks.

    Block order: embedding (or per-location embedding grid), means, Cholesky
    factors.  The header carries a SHA-256 of the payload so truncation or
    corruption is detected at load time.
    """
    is_grid = isinstance(model.embedding, emb.EmbeddingGrid)
    blocks = [
        ("embedding_grid" if is_grid else "embedding", np.asarray(model.embedding.w, np.float64)),
        ("means", np.asarray(model.means, np.float64)),
        ("chols", np.asarray(model.chols, np.float64)),
    ]
    payload = io.BytesIO()
    block_docs = []
    for name, arr in blocks:
        data = np.ascontiguousarray(arr, dtype="<f8")
        payload.write(data.tobytes(order="C"))
        block_docs.append({"name": name, "shape": list(arr.shape)})
    raw = payload.getvalue()
    header = {
        "blocks": block_docs,
        "config": _config_doc(model.config),
        "dims": {
            "f": model.f,
            "grid_h": model.grid_h,
            "grid_w": model.grid_w,
            "k": model.k,
            "n_train": model.n_train,
        },
        "embedding_seed": model.embedding.seed if not is_grid else None,
        "manifest_digest": model.manifest_digest,
        "payload_sha256": hashlib.sha256(raw).hexdigest(),
        "prng": model.prng_name,
        "strategy": model.embedding.strategy,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(MODEL_MAGIC)
            f.write(MODEL_VERSION.to_bytes(4, "little"))
            f.write(len(header_bytes).to_bytes(4, "little"))
            f.write(header_bytes)
            f.write(raw)
    except OSError as exc:
        raise IoError(f"cannot write model file {path}: {exc}") from exc


def load_model(path: str) -> GaussianModel:
    try:
        f = open(path, "rb")
    except OSError as exc:
        raise IoError(f"cannot read model file {path}: {exc}") from exc
    with f:
        magic = f.read(4)
        if magic != MODEL_MAGIC:
            raise CorruptModel(f"{path}: bad magic {magic!r}")
        version = int.from_bytes(f.read(4), "little")
        if version != MODEL_VERSION:
            raise CorruptModel(f"{path}: unsupported format version {version}")
        header_len = int.from_bytes(f.read(4), "little")
        header_bytes = f.read(header_len)
        if len(header_bytes) != header_len:
            raise CorruptModel(f"{path}: truncated header")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptModel(f"{path}: unreadable header") from exc
        raw = f.read()
    if hashlib.sha256(raw).hexdigest() != header.get("payload_sha256"):
        raise CorruptModel(f"{path}: payload checksum mismatch (truncated or corrupted)")

    arrays = {}
    at = 0
    for doc in header["blocks"]:
        shape = tuple(int(s) for s in doc["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arrays[doc["name"]] = np.frombuffer(
            raw, dtype="<f8", count=count, offset=at
        ).reshape(shape).copy()
        at += count * 8
    cfg = _config_from_doc(header["config"])
    dims = header["dims"]
    strategy = header["strategy"]
    if "embedding_grid" in arrays:
        w = arrays["embedding_grid"]
        embed = emb.EmbeddingGrid(w, strategy, w.shape[0], w.shape[1], w.shape[2], w.shape[3])
    else:
        w = arrays["embedding"]
        seed = header.get("embedding_seed")
        embed = emb.EmbeddingMatrix(
            w, strategy, None if seed is None else int(seed), w.shape[0], w.shape[1]
        )
    return GaussianModel(
        embedding=embed,
        means=arrays["means"],
        chols=arrays["chols"],
        config=cfg,
        n_train=int(dims["n_train"]),
        manifest_digest=str(header.get("manifest_digest", "")),
        prng_name=str(header.get("prng", "")),
    )

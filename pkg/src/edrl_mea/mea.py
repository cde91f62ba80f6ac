"""Multiblock PLS alignment of block embeddings onto the original features.

``fit_mbpls`` extracts K latent variables with a multiblock NIPALS loop:
block weights and block scores are combined through a super weight into a
super score ``t_s``; both the predictor blocks and the response are deflated
with that super score.  ``predict`` maps new block rows to the aligned
N-dimensional vector through the regression matrix ``beta``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NumericalWarning, TooFewRows, ValidationError

MODEL_VERSION = 1
DEGENERATE_SCORE = 1e-12


@dataclass
class MbplsConfig:
    K: int = 20
    max_nipals_iters: int = 500
    tol: float = 1e-10
    scale_blocks: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError("K must be at least 1")
        if self.max_nipals_iters < 1 or self.tol <= 0:
            raise ValidationError("max_nipals_iters and tol must be positive")


@dataclass(eq=False)
class ResidualBundle:
    """Residual matrices on the (centred, scaled) training data.

    ``block`` holds the deflated blocks ``E_c`` so that
    ``Z_c = T_s P_c^T + E_c``; ``response_deflated`` is the deflated response
    so that ``X = T_s V^T + E``; ``response`` is ``X - U V^T``; and
    ``regression`` is ``X - Z beta``, which equals ``response_deflated``.
    """
    block: list
    response: np.ndarray
    response_deflated: np.ndarray
    regression: np.ndarray


@dataclass(eq=False)
class MbplsModel:
    config: MbplsConfig
    block_dims: list
    super_scores: np.ndarray          # T_s, n x K
    response_scores: np.ndarray       # U, n x K
    block_scores: list                # per block n x K
    block_loadings: np.ndarray        # P, sum(block_dims) x K
    response_loadings: np.ndarray     # V, q x K
    block_weights: list               # per block p_b x K, unit columns
    super_weights: np.ndarray         # C x K, unit columns
    beta: np.ndarray                  # sum(block_dims) x q
    block_mean: np.ndarray
    block_scale: np.ndarray
    response_mean: np.ndarray
    converged: list
    iterations: list
    stopped_early: bool = False
    block_ss: np.ndarray = field(default_factory=lambda: np.zeros(0))
    response_ss: float = 0.0
    residuals: ResidualBundle | None = None

    @property
    def K(self) -> int:
        return self.super_scores.shape[1]

    @property
    def C(self) -> int:
        return len(self.block_dims)

    @property
    def block_importance(self) -> np.ndarray:
        return self.super_weights ** 2

    def block_loading(self, c: int) -> np.ndarray:
        start = sum(self.block_dims[:c])
        return self.block_loadings[start:start + self.block_dims[c]]

    def predict(self, blocks) -> np.ndarray:
        return predict(self, blocks)

    def to_dict(self) -> dict:
        arr = lambda a: np.asarray(a).tolist()  # noqa: E731
        return {
            "format": "mbpls", "version": MODEL_VERSION,
            "config": asdict(self.config), "block_dims": list(self.block_dims),
            "K": self.K, "super_scores": arr(self.super_scores),
            "response_scores": arr(self.response_scores),
            "block_scores": [arr(t) for t in self.block_scores],
            "block_loadings": arr(self.block_loadings),
            "response_loadings": arr(self.response_loadings),
            "block_weights": [arr(w) for w in self.block_weights],
            "super_weights": arr(self.super_weights), "beta": arr(self.beta),
            "block_mean": arr(self.block_mean), "block_scale": arr(self.block_scale),
            "response_mean": arr(self.response_mean),
            "converged": list(self.converged), "iterations": list(self.iterations),
            "stopped_early": self.stopped_early,
            "block_ss": arr(self.block_ss), "response_ss": self.response_ss,
        }

    @classmethod
    def from_dict(cls, d) -> "MbplsModel":
        if d.get("format") != "mbpls" or d.get("version") != MODEL_VERSION:
            raise ValidationError("not a version-1 MBPLS model")
        K = d["K"]

        def mat(key, rows):
            return np.array(d[key], dtype=np.float64).reshape(rows, K)

        n = len(d["super_scores"])
        dims = d["block_dims"]
        q = len(d["response_mean"])
        return cls(
            config=MbplsConfig(**d["config"]), block_dims=dims,
            super_scores=mat("super_scores", n), response_scores=mat("response_scores", n),
            block_scores=[np.array(t, float).reshape(n, K) for t in d["block_scores"]],
            block_loadings=mat("block_loadings", sum(dims)),
            response_loadings=mat("response_loadings", q),
            block_weights=[np.array(w, float).reshape(p, K)
                           for w, p in zip(d["block_weights"], dims)],
            super_weights=mat("super_weights", len(dims)),
            beta=np.array(d["beta"], float).reshape(sum(dims), q),
            block_mean=np.array(d["block_mean"], float),
            block_scale=np.array(d["block_scale"], float),
            response_mean=np.array(d["response_mean"], float),
            converged=list(d["converged"]), iterations=list(d["iterations"]),
            stopped_early=d["stopped_early"], block_ss=np.array(d["block_ss"], float),
            response_ss=d["response_ss"])

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "MbplsModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def deflate(block_state, t, p) -> np.ndarray:
    """``block_state - t p^T``."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    block_state = np.asarray(block_state, dtype=np.float64)
    if block_state.shape != (t.size, p.size):
        raise DimensionMismatch(f"cannot deflate {block_state.shape} by t{t.shape}, p{p.shape}")
    return block_state - np.outer(t, p)


def _preprocess_blocks(blocks, scale):
    mats = [np.asarray(b, dtype=np.float64) for b in blocks]
    if not mats:
        raise ValidationError("at least one predictor block is required")
    n = mats[0].shape[0]
    for b in mats:
        if b.ndim != 2 or b.shape[0] != n:
            raise DimensionMismatch("all blocks must be 2-D with the same row count")
    z = np.hstack(mats)
    mean = z.mean(axis=0)
    if scale:
        std = z.std(axis=0)
        std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
    else:
        std = np.ones_like(mean)
    return (z - mean) / std, mean, std, [b.shape[1] for b in mats]


def _dominant_left_vector(x):
    u, s, _ = np.linalg.svd(x, full_matrices=False)
    return u[:, 0] * s[0]


def fit_mbpls(blocks, response, config: MbplsConfig | None = None) -> MbplsModel:
    """Fit a multiblock PLS model of ``response`` on the predictor ``blocks``.

    Parameters
    ----------
    blocks : list of array, each n x p_b
        Predictor blocks (the block embeddings).
    response : array, n x q
        Target matrix (the original features).
    config : MbplsConfig

    Notes
    -----
    Blocks are centred (and column-scaled when ``config.scale_blocks``); the
    response is centred.  Each component starts from the dominant left
    singular vector of the current response and iterates::

        w_b = Z_b^T u / ||Z_b^T u||,  t_b = Z_b w_b
        a   = T^T u / ||T^T u||,      t_s = T a        (T = [t_1 .. t_C])
        q   = X^T t_s / ||X^T t_s||,  u   = X q

    until ``||t_s - t_s_old|| <= tol * ||t_s||``.  Then
    ``p = Z^T t_s / t_s^T t_s``, ``v = X^T t_s / t_s^T t_s`` and both sides are
    deflated by ``t_s``.  Each component is sign-normalised so the
    largest-magnitude entry of ``v`` is positive.  A component whose super
    score norm falls below 1e-12 (relative to the initial data norm) ends the
    fit early with a warning.
    """
    config = config or MbplsConfig()
    z, z_mean, z_scale, dims = _preprocess_blocks(blocks, config.scale_blocks)
    x0 = np.asarray(response, dtype=np.float64)
    if x0.ndim == 1:
        x0 = x0[:, None]
    n = z.shape[0]
    if x0.shape[0] != n:
        raise DimensionMismatch("response and blocks must have the same row count")
    if n < 2:
        raise TooFewRows("MBPLS needs at least two rows")
    if config.K > min(n - 1, z.shape[1]):
        warnings.warn(f"K={config.K} exceeds min(n-1, predictors)="
                      f"{min(n - 1, z.shape[1])}; fitting stops at the data rank",
                      NumericalWarning, stacklevel=2)
    x_mean = x0.mean(axis=0)
    x = x0 - x_mean
    zc = z.copy()
    xc = x.copy()
    bounds = np.cumsum([0] + dims)
    slices = [slice(bounds[i], bounds[i + 1]) for i in range(len(dims))]
    scale_ref = max(1.0, np.linalg.norm(z))
    C = len(dims)

    T, U, P, V, Wstar, A = [], [], [], [], [], []
    Tb = [[] for _ in range(C)]
    Wb = [[] for _ in range(C)]
    converged, iterations = [], []
    stopped_early = False

    for k in range(config.K):
        if np.linalg.norm(xc) < DEGENERATE_SCORE * scale_ref:
            stopped_early = True
            break
        u = _dominant_left_vector(xc)
        t_old = None
        ok = False
        degenerate = False
        for it in range(1, config.max_nipals_iters + 1):
            ws, ts = [], []
            for sl in slices:
                w = zc[:, sl].T @ u
                norm = np.linalg.norm(w)
                w = w / norm if norm > 0 else w
                ws.append(w)
                ts.append(zc[:, sl] @ w)
            tb = np.column_stack(ts)
            a = tb.T @ u
            a_norm = np.linalg.norm(a)
            if a_norm == 0:
                degenerate = True
                break
            a = a / a_norm
            t = tb @ a
            if np.linalg.norm(t) < DEGENERATE_SCORE * scale_ref:
                degenerate = True
                break
            qv = xc.T @ t
            q_norm = np.linalg.norm(qv)
            if q_norm == 0:
                degenerate = True
                break
            u = xc @ (qv / q_norm)
            if t_old is not None and np.linalg.norm(t - t_old) <= config.tol * np.linalg.norm(t):
                ok = True
                break
            t_old = t
        if degenerate:
            stopped_early = True
            break
        if not ok:
            warnings.warn(f"NIPALS did not converge for component {k + 1} "
                          f"within {config.max_nipals_iters} iterations",
                          NumericalWarning, stacklevel=2)
        tt = t @ t
        p = zc.T @ t / tt
        v = xc.T @ t / tt
        if v[np.argmax(np.abs(v))] < 0:
            t, u, p, v = -t, -u, -p, -v
            ws = [-w for w in ws]
            tb = -tb
        T.append(t)
        U.append(u)
        P.append(p)
        V.append(v)
        A.append(a)
        Wstar.append(np.concatenate([ai * w for ai, w in zip(a, ws)]))
        for c in range(C):
            Tb[c].append(tb[:, c])
            Wb[c].append(ws[c])
        converged.append(ok)
        iterations.append(it)
        zc = deflate(zc, t, p)
        xc = deflate(xc, t, v)

    if stopped_early:
        warnings.warn(f"MBPLS stopped after {len(T)} of {config.K} components "
                      "(rank exhausted)", NumericalWarning, stacklevel=2)
    if not T:
        raise ValidationError("no MBPLS component could be extracted (degenerate data)")

    stack = lambda cols, rows: np.column_stack(cols) if cols else np.zeros((rows, 0))  # noqa: E731
    Ts, Um, Pm, Vm, Ws = (stack(T, n), stack(U, n), stack(P, z.shape[1]),
                          stack(V, x.shape[1]), stack(Wstar, z.shape[1]))
    R = Ws @ np.linalg.inv(Pm.T @ Ws)
    beta = R @ Vm.T

    model = MbplsModel(
        config=config, block_dims=dims, super_scores=Ts, response_scores=Um,
        block_scores=[np.column_stack(t) for t in Tb], block_loadings=Pm,
        response_loadings=Vm, block_weights=[np.column_stack(w) for w in Wb],
        super_weights=np.column_stack(A), beta=beta, block_mean=z_mean,
        block_scale=z_scale, response_mean=x_mean, converged=converged,
        iterations=iterations, stopped_early=stopped_early,
        block_ss=np.array([np.sum(z[:, sl] ** 2) for sl in slices]),
        response_ss=float(np.sum(x ** 2)),
    )
    model.residuals = ResidualBundle(
        block=[zc[:, sl] for sl in slices],
        response=x - Um @ Vm.T,
        response_deflated=xc,
        regression=x - z @ beta,
    )
    return model


def transform_blocks(model: MbplsModel, blocks) -> np.ndarray:
    """Centre/scale and concatenate block rows with the training statistics."""
    mats = [np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in blocks]
    if len(mats) != model.C:
        raise DimensionMismatch(f"expected {model.C} blocks, got {len(mats)}")
    for m, p in zip(mats, model.block_dims):
        if m.shape[1] != p:
            raise DimensionMismatch(f"block has {m.shape[1]} columns, expected {p}")
    if len({m.shape[0] for m in mats}) != 1:
        raise DimensionMismatch("blocks must have the same row count")
    return (np.hstack(mats) - model.block_mean) / model.block_scale


def predict(model: MbplsModel, blocks) -> np.ndarray:
    """Aligned embedding ``X'`` for rows given as C block vectors or matrices."""
    single = all(np.ndim(b) == 1 for b in blocks)
    out = transform_blocks(model, blocks) @ model.beta + model.response_mean
    return out[0] if single else out


def explained_variance(model: MbplsModel) -> dict:
    """Per-component and cumulative explained-variance fractions.

    Fractions are relative to the centred/scaled training sums of squares:
    ``||t_k p_{c,k}^T||^2 / ||Z_c||^2`` for each block and
    ``||t_k v_k^T||^2 / ||X||^2`` for the response.
    """
    tt = np.sum(model.super_scores ** 2, axis=0)
    blocks = []
    for c in range(model.C):
        pc = model.block_loading(c)
        ss = model.block_ss[c]
        blocks.append(tt * np.sum(pc ** 2, axis=0) / ss if ss > 0 else np.zeros_like(tt))
    blocks = np.array(blocks)
    resp = (tt * np.sum(model.response_loadings ** 2, axis=0) / model.response_ss
            if model.response_ss > 0 else np.zeros_like(tt))
    return {
        "blocks": blocks,
        "blocks_cumulative": np.cumsum(blocks, axis=1),
        "response": resp,
        "response_cumulative": np.cumsum(resp),
    }

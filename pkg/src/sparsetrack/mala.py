"""Preconditioned MALA on the Moreau-Yosida smoothed posterior.

The nonsmooth penalty is smoothed in the metric of the preconditioner: with
``m = P^2`` the envelope uses the prox

    z = argmin_u theta g(u) + sum_j (u_j - w_j)^2 / (2 lam m_j)

and contributes ``(w - z) / (lam m)`` to the gradient, with ``lam = 1 / L_pre``.
Proposals are ``w' = w - delta m grad(w) + sqrt(2 delta) P xi`` and are
accepted with the usual Metropolis-Hastings ratio.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import CenteredDesign
from .exceptions import TooFewDraws, TuneExhausted
from .model import ModelSpec, Preconditioner, penalty, prox
from .sapg import make_rng

CHAIN_MAGIC = b"SPTC"
CHAIN_VERSION = 1
HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class MalaConfig:
    n_samples: int = 250000
    burn_in: int = 20000
    thin: int | None = None  # None -> 1 for weights, 6 for increments
    target_accept: float = 0.60
    tune_block: int = 1000
    max_tune_rounds: int = 30
    seed: int | None = 0
    step: float | None = None  # skip tuning when given
    chain_path: str | None = None

    def __post_init__(self):
        if self.thin is not None and self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.n_samples < 1 or self.burn_in < 0 or self.tune_block < 1:
            raise ValueError("n_samples >= 1, burn_in >= 0 and tune_block >= 1 required")

    def thin_for(self, mode: str) -> int:
        if self.thin is not None:
            return self.thin
        return 1 if mode == "weights" else 6


@dataclass
class SampleChain:
    draws: np.ndarray
    step_used: float
    accept_rate: float
    mode: str
    potential_trace: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]


class SmoothedTarget:
    """Potential and gradient of the metric-smoothed posterior."""

    def __init__(self, design: CenteredDesign, spec: ModelSpec, precond: Preconditioner,
                 lam: float | None = None):
        self.R = design.R_c
        self.y = design.y_c
        self.spec = spec
        self.metric = precond.metric
        self.P = precond.diag_P
        self.lam = precond.lambda_pre if lam is None else lam

    def __call__(self, w) -> tuple[float, np.ndarray]:
        spec = self.spec
        r = self.R @ w - self.y
        s = w.sum() - spec.budget_target
        value = r @ r / (2.0 * spec.sigma2) + spec.Lambda * s * s
        grad = self.R.T @ r / spec.sigma2
        if spec.Lambda:
            grad = grad + 2.0 * spec.Lambda * s
        if spec.theta > 0 or spec.prox_kind != "weighted_l1":
            z = prox(spec.prox_kind, w, self.lam, spec.theta, spec.alpha, self.metric)
            d = w - z
            value += spec.theta * penalty(z, spec.alpha) + d @ (d / self.metric) / (2 * self.lam)
            grad = grad + d / (self.metric * self.lam)
        return float(value), grad


def log_accept_ratio(target: SmoothedTarget, w, w_prop, delta: float,
                     cache=None, cache_prop=None) -> float:
    """Log Metropolis-Hastings ratio for a move ``w -> w_prop``."""
    m = target.metric
    phi, g = cache if cache is not None else target(w)
    phi_p, g_p = cache_prop if cache_prop is not None else target(w_prop)
    fwd = w_prop - (w - delta * m * g)
    bwd = w - (w_prop - delta * m * g_p)
    return (phi - phi_p
            - (bwd @ (bwd / m) - fwd @ (fwd / m)) / (4.0 * delta))


class _Walker:
    """Mutable chain state shared by tuning and production."""

    def __init__(self, target: SmoothedTarget, w, rng):
        self.target = target
        self.rng = rng
        self.w = np.array(w, dtype=float)
        self.phi, self.grad = target(self.w)
        self.n_nonfinite = 0

    def step(self, delta: float) -> bool:
        t = self.target
        m = t.metric
        xi = self.rng.standard_normal(self.w.shape[0])
        mean = self.w - delta * m * self.grad
        prop = mean + math.sqrt(2.0 * delta) * t.P * xi
        u = self.rng.random()
        if not np.all(np.isfinite(prop)):
            self.n_nonfinite += 1
            return False
        phi_p, g_p = t(prop)
        if not (math.isfinite(phi_p) and np.all(np.isfinite(g_p))):
            self.n_nonfinite += 1
            return False
        bwd = self.w - (prop - delta * m * g_p)
        fwd = prop - mean
        log_a = self.phi - phi_p - (bwd @ (bwd / m) - fwd @ (fwd / m)) / (4.0 * delta)
        if u == 0.0 or math.log(u) < log_a:
            self.w, self.phi, self.grad = prop, phi_p, g_p
            return True
        return False


def initial_step(precond: Preconditioner) -> float:
    return 0.9 / (precond.L_pre + 1.0 / precond.lambda_pre)


def _tune(walker: _Walker, precond: Preconditioner, cfg: MalaConfig) -> tuple[float, list]:
    delta = initial_step(precond)
    history = []
    lo, hi = cfg.target_accept - 0.10, cfg.target_accept + 0.05
    for _ in range(cfg.max_tune_rounds):
        acc = sum(walker.step(delta) for _ in range(cfg.tune_block)) / cfg.tune_block
        history.append((delta, acc))
        if acc > hi:
            delta *= 1.25
        elif acc < lo:
            delta *= 0.5
        else:
            return delta, history
    warnings.warn(f"step tuning did not reach the acceptance band in {cfg.max_tune_rounds} "
                  f"blocks; using delta={delta:.4g}", TuneExhausted, stacklevel=3)
    return delta, history


def tune_step(design: CenteredDesign, spec: ModelSpec, precond: Preconditioner,
              cfg: MalaConfig, rng=None, w_init=None) -> tuple[float, list]:
    """Multiplicative step tuning over pilot blocks; returns ``(delta, history)``.

    ``history`` holds ``(delta, acceptance)`` for every pilot block.
    """
    rng = make_rng(cfg.seed) if rng is None else rng
    w0 = np.zeros(design.p) if w_init is None else w_init
    walker = _Walker(SmoothedTarget(design, spec, precond), w0, rng)
    return _tune(walker, precond, cfg)


# -- chain storage ---------------------------------------------------------


def open_chain_file(path, M: int, p: int) -> np.memmap:
    """Create a chain file and return a writable ``(M, p)`` view of its body."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(CHAIN_MAGIC, CHAIN_VERSION, M, p))
        fh.truncate(HEADER.size + 8 * M * p)
    return np.memmap(path, dtype="<f8", mode="r+", offset=HEADER.size, shape=(M, p))


def _jsonable(o):
    if isinstance(o, np.random.SeedSequence):
        return {"entropy": o.entropy, "spawn_key": list(o.spawn_key)}
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_chain(path, draws, meta: dict | None = None) -> Path:
    draws = np.asarray(draws, dtype="<f8")
    out = open_chain_file(path, *draws.shape)
    out[:] = draws
    out.flush()
    del out
    _sidecar(path).write_text(json.dumps(meta or {}, indent=2, sort_keys=True, default=_jsonable))
    return Path(path)


def read_chain(path, mmap: bool = True) -> tuple[np.ndarray, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic, version, M, p = HEADER.unpack(fh.read(HEADER.size))
    if magic != CHAIN_MAGIC:
        raise ValueError(f"{path} is not a chain file")
    if version != CHAIN_VERSION:
        raise ValueError(f"unsupported chain file version {version}")
    if mmap:
        draws = np.memmap(path, dtype="<f8", mode="r", offset=HEADER.size, shape=(M, p))
    else:
        draws = np.fromfile(path, dtype="<f8", offset=HEADER.size).reshape(M, p)
    side = _sidecar(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return draws, meta


def load_chain(path) -> SampleChain:
    draws, meta = read_chain(path)
    return SampleChain(draws, meta.get("step", float("nan")), meta.get("accept_rate", float("nan")),
                       meta.get("mode", "weights"), np.asarray(meta.get("potential_trace", [])),
                       meta)


# -- sampling --------------------------------------------------------------


def mala_run(design: CenteredDesign, spec: ModelSpec, precond: Preconditioner, cfg: MalaConfig,
             w_init, rng=None) -> SampleChain:
    """Tune (unless ``cfg.step`` is set), burn in, then keep every ``thin``-th state."""
    rng = make_rng(cfg.seed) if rng is None else rng
    w_init = np.asarray(w_init, dtype=float)
    if w_init.shape != (design.p,) or not np.all(np.isfinite(w_init)):
        raise ValueError("w_init must be a finite vector of length p")
    walker = _Walker(SmoothedTarget(design, spec, precond), w_init, rng)
    history = []
    if cfg.step is None:
        delta, history = _tune(walker, precond, cfg)
        walker.w = w_init.copy()
        walker.phi, walker.grad = walker.target(walker.w)
    else:
        delta = float(cfg.step)

    thin = cfg.thin_for(spec.mode)
    M, p = cfg.n_samples, design.p
    if cfg.chain_path:
        draws = open_chain_file(cfg.chain_path, M, p)
    else:
        draws = np.empty((M, p))
    potential = np.empty(M)

    accepted = 0
    for _ in range(cfg.burn_in):
        accepted += walker.step(delta)
    for i in range(M):
        for _ in range(thin):
            accepted += walker.step(delta)
        draws[i] = walker.w
        potential[i] = walker.phi
    n_steps = cfg.burn_in + M * thin
    rate = accepted / n_steps

    meta = {
        "step": delta,
        "accept_rate": rate,
        "seed": _jsonable(cfg.seed) if cfg.seed is not None and not isinstance(cfg.seed, int)
        else cfg.seed,
        "burn_in": cfg.burn_in,
        "thin": thin,
        "mode": spec.mode,
        "n_samples": M,
        "n_nonfinite": walker.n_nonfinite,
        "tune_history": [list(h) for h in history],
        "config": asdict(cfg),
    }
    if cfg.chain_path:
        draws.flush()
        _sidecar(cfg.chain_path).write_text(json.dumps(meta, indent=2, sort_keys=True,
                                                       default=_jsonable))
    return SampleChain(draws, delta, rate, spec.mode, potential, meta)


def chain_summaries(chain: SampleChain | np.ndarray, block: int = 10000):
    """Per-coordinate ``(sd, mean)`` with ``n - 1`` normalisation.

    Streams over row blocks so memory-mapped chains are never fully loaded.
    """
    draws = chain.draws if isinstance(chain, SampleChain) else np.asarray(chain)
    M = draws.shape[0]
    if M < 2:
        raise TooFewDraws(f"need at least 2 draws, got {M}")
    mean = np.zeros(draws.shape[1])
    for start in range(0, M, block):
        mean += np.asarray(draws[start:start + block]).sum(axis=0)
    mean /= M
    ss = np.zeros(draws.shape[1])
    for start in range(0, M, block):
        d = np.asarray(draws[start:start + block]) - mean
        ss += np.einsum("ij,ij->j", d, d)
    return np.sqrt(ss / (M - 1)), mean

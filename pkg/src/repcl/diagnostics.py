"""Information-theoretic diagnostics of learned representations.

MINE lower-bounds mutual information with a small statistics network trained
on joint vs shuffled-marginal pairs (Donsker-Varadhan objective with an EMA
bias correction on the marginal partition term). The eigen-spectrum report
exposes the covariance eigenvalues of a representation sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import InputError
from .optim import Adam

MI_PROXY_NAME = "frozen_embedding_mean"


@dataclass
class MineResult:
    estimate_nats: float
    curve: list[float]

    def to_report(self, mode: str) -> dict:
        return {
            "mode": mode,
            "estimate_nats": self.estimate_nats,
            "curve": self.curve,
            "proxy": MI_PROXY_NAME,
        }


class MineEstimator:
    """Trainable statistics network T(u, v) with running marginal EMA.

    The per-epoch Donsker-Varadhan estimates are recorded in .history so
    fitting curves can be plotted; the reported estimate smooths the last 10%
    of the curve.
    """

    def __init__(
        self,
        dim_u: int,
        dim_v: int,
        rng: np.random.Generator,
        hidden: int = 128,
        lr: float = 1e-3,
        ema_decay: float = 0.99,
    ):
        d_in = dim_u + dim_v
        self.params = {
            "w1": ag.parameter((d_in, hidden), rng=rng, std=np.sqrt(2.0 / d_in)),
            "b1": Tensor(np.zeros(hidden), requires_grad=True),
            "w2": ag.parameter((hidden, hidden), rng=rng, std=np.sqrt(2.0 / hidden)),
            "b2": Tensor(np.zeros(hidden), requires_grad=True),
            "w3": ag.parameter((hidden, 1), rng=rng, std=np.sqrt(2.0 / hidden)),
            "b3": Tensor(np.zeros(1), requires_grad=True),
        }
        self.opt = Adam([(list(self.params.values()), lr)])
        self.ema_decay = ema_decay
        self.ema_of_exp_marginal: float | None = None
        self.history: list[float] = []

    def statistic(self, uv: np.ndarray) -> Tensor:
        x = Tensor(uv)
        h = ag.relu(ag.add(ag.matmul(x, self.params["w1"]), self.params["b1"]))
        h = ag.relu(ag.add(ag.matmul(h, self.params["w2"]), self.params["b2"]))
        out = ag.add(ag.matmul(h, self.params["w3"]), self.params["b3"])
        return ag.clamp(ag.reshape(out, (uv.shape[0],)), -50.0, 50.0)

    def train_step(self, u: np.ndarray, v: np.ndarray, v_shuffled: np.ndarray) -> None:
        t_joint = self.statistic(np.concatenate([u, v], axis=1))
        t_marg = self.statistic(np.concatenate([u, v_shuffled], axis=1))
        exp_marg = ag.exp(t_marg)
        batch_mean = float(exp_marg.data.mean())
        if self.ema_of_exp_marginal is None:
            self.ema_of_exp_marginal = batch_mean
        else:
            self.ema_of_exp_marginal = (
                self.ema_decay * self.ema_of_exp_marginal + (1.0 - self.ema_decay) * batch_mean
            )
        # gradient of log E[e^T] approximated with the EMA denominator
        surrogate = ag.add(
            ag.scale(ag.mean_all(t_joint), -1.0),
            ag.scale(ag.mean_all(exp_marg), 1.0 / self.ema_of_exp_marginal),
        )
        self.opt.zero_grad()
        surrogate.backward()
        self.opt.step()

    def dv_estimate(self, u: np.ndarray, v: np.ndarray, v_shuffled: np.ndarray) -> float:
        with ag.no_grad():
            t_joint = self.statistic(np.concatenate([u, v], axis=1)).data
            t_marg = self.statistic(np.concatenate([u, v_shuffled], axis=1)).data
        m = t_marg.max()
        log_mean_exp = m + np.log(np.exp(t_marg - m).mean())
        return float(t_joint.mean() - log_mean_exp)


def _standardize(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=0, keepdims=True)
    sd = x.std(axis=0, keepdims=True)
    return (x - mu) / np.maximum(sd, 1e-8)


def mine_estimate(
    samples_u: np.ndarray,
    samples_v: np.ndarray,
    epochs: int,
    rng: np.random.Generator,
    batch_size: int = 256,
    hidden: int = 128,
    lr: float = 1e-3,
    ema_decay: float = 0.99,
) -> MineResult:
    """Train MINE on jointly drawn (u, v) pairs and return (estimate, curve).

    Inputs are standardized per dimension (an invertible affine map, so the
    MI is unchanged). The curve holds one full-data DV estimate per epoch; the
    returned estimate is the mean of the last 10% of the curve.
    """
    u = np.asarray(samples_u, dtype=np.float64)
    v = np.asarray(samples_v, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    if v.ndim == 1:
        v = v[:, None]
    if u.shape[0] != v.shape[0]:
        raise InputError("samples_u and samples_v must pair up")
    n = u.shape[0]
    if n < 2:
        raise InputError("need at least 2 joint samples")

    u = _standardize(u)
    v = _standardize(v)
    est = MineEstimator(u.shape[1], v.shape[1], rng, hidden=hidden, lr=lr, ema_decay=ema_decay)

    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            if idx.size < 2:
                continue
            shuf = rng.permutation(idx.size)
            est.train_step(u[idx], v[idx], v[idx][shuf])
        est.history.append(est.dv_estimate(u, v, v[rng.permutation(n)]))

    tail = max(1, len(est.history) // 10)
    return MineResult(estimate_nats=float(np.mean(est.history[-tail:])), curve=list(est.history))


def estimate_task_mi(
    model,
    instances,
    mode: str,
    epochs: int,
    rng: np.random.Generator,
    max_pairs: int = 4096,
    **mine_kwargs,
) -> MineResult:
    """Build mode-specific sample pairs from a task's instances and run MINE.

    x_z      pairs (frozen-embedding mean of the tokens, representation)
    z_zplus  pairs representations of two same-class instances
    z_y      pairs (representation, one-hot label)
    """
    reps = model.encode_instances(list(instances))
    labels = np.asarray([inst.label for inst in instances], dtype=np.int64)

    if mode == "x_z":
        table = model.frozen_token_embedding
        proxy = np.stack([table[np.asarray(inst.tokens)].mean(axis=0) for inst in instances])
        u, v = proxy, reps
    elif mode == "z_zplus":
        us, vs = [], []
        for c in np.unique(labels):
            idx = np.flatnonzero(labels == c)
            if idx.size < 2:
                continue  # singleton classes cannot pair
            for i in idx:
                for j in idx:
                    if i != j:
                        us.append(reps[i])
                        vs.append(reps[j])
        if not us:
            raise InputError("no class has two or more instances")
        u, v = np.stack(us), np.stack(vs)
        if u.shape[0] > max_pairs:
            keep = rng.choice(u.shape[0], size=max_pairs, replace=False)
            u, v = u[keep], v[keep]
    elif mode == "z_y":
        classes = np.unique(labels)
        onehot = np.zeros((labels.size, classes.size))
        onehot[np.arange(labels.size), np.searchsorted(classes, labels)] = 1.0
        u, v = reps, onehot
    else:
        raise InputError(f"unknown MI mode {mode!r}")
    return mine_estimate(u, v, epochs=epochs, rng=rng, **mine_kwargs)


@dataclass
class SpectrumReport:
    eigenvalues: list[float]  # descending, >= 0
    top_k: int

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("rank,eigenvalue\n")
            for rank, ev in enumerate(self.eigenvalues, start=1):
                fh.write(f"{rank},{ev:.10g}\n")


def eig_spectrum(representations: np.ndarray, top_k: int) -> SpectrumReport:
    """Descending eigenvalues of the (1/N)-normalized covariance, truncated to top_k."""
    x = np.asarray(representations, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InputError("need at least 2 representation vectors")
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / x.shape[0]
    evals = np.linalg.eigvalsh(cov)[::-1]
    evals = np.maximum(evals, 0.0)  # covariance is PSD; clip tiny negative noise
    return SpectrumReport(eigenvalues=[float(e) for e in evals[:top_k]], top_k=top_k)

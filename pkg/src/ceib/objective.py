"""Training objective: two compression terms (mixture KL to a learned prior)
plus lambda times the outcome and treatment negative log-likelihoods."""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .data import ObservationalDataset
from .model import CEIBModel, MixturePosterior, ModelConfig, concat_latent, gumbel_noise, sample_latent, to_tensor

LOG_2PI = math.log(2 * math.pi)


class TrainingDivergence(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, last_finite: "LossBreakdown | None"):
        super().__init__(f"{message}; last finite breakdown: {last_finite}")
        self.last_finite = last_finite


@dataclass
class LossBreakdown:
    """Per-unit averages in nats; ``total = kl1 + kl2 + lam * (nll_y + t_weight * nll_t)``."""

    kl1: float
    kl2: float
    nll_y: float
    nll_t: float
    total: float


@dataclass
class TrainConfig:
    lam: float = 100.0
    epochs: int = 400
    batch_size: int = 64
    lr: float = 1e-3
    temp_start: float = 1.0
    temp_end: float = 0.3
    patience: int = 20
    t_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        if not (self.temp_start > 0 and self.temp_end > 0):
            raise ValueError("temperatures must be positive")

    def temperature(self, epoch: int) -> float:
        if self.epochs == 1:
            return self.temp_end
        frac = epoch / (self.epochs - 1)
        return self.temp_start + frac * (self.temp_end - self.temp_start)


def kl_mixture(post: MixturePosterior, prior: MixturePosterior) -> torch.Tensor:
    """Per-row upper bound on KL(q || p) between diagonal Gaussian mixtures.

    Categorical KL between the mixing weights plus the responsibility-weighted
    sum of per-component Gaussian KLs. Returns a tensor of shape ``(n,)``.
    """
    if post.means.shape[-2:] != prior.means.shape[-2:]:
        raise ValueError(f"shape mismatch: {tuple(post.means.shape)} vs {tuple(prior.means.shape)}")
    log_q = torch.log_softmax(post.logits, dim=-1)
    log_p = torch.log_softmax(prior.logits, dim=-1)
    r = log_q.exp()
    cat = (r * (log_q - log_p)).sum(-1)
    var_ratio = torch.exp(post.logvars - prior.logvars)
    diff2 = (post.means - prior.means) ** 2 * torch.exp(-prior.logvars)
    gauss = 0.5 * (var_ratio + diff2 - 1.0 - (post.logvars - prior.logvars)).sum(-1)
    return cat + (r * gauss).sum(-1)


def batch_tensors(ds: ObservationalDataset) -> dict[str, torch.Tensor]:
    if not ds.fully_observed:
        raise ValueError("training batches must be fully observed; masked rows found")
    return {
        "x1": to_tensor(ds.x1),
        "x2": to_tensor(ds.x2) if ds.p2 else None,
        "t": to_tensor(ds.t.astype(float)),
        "y": to_tensor(ds.y),
    }


def draw_noise(model: CEIBModel, n: int, generator: torch.Generator) -> dict:
    """Gumbel and Gaussian noise for one reparameterized pass."""
    c = model.config
    noise = {}
    for name, k, d in (("1", c.k1, c.d1), ("2", c.k2, c.d2)):
        if name == "2" and model.encoder2 is None:
            continue
        noise["gumbel" + name] = gumbel_noise((n, k), generator)
        noise["eps" + name] = torch.randn((n, k, d), generator=generator, dtype=torch.float64)
    return noise


def outcome_nll(model: CEIBModel, z: torch.Tensor, t: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    raw = model.arm_output(z, t)
    if model.config.outcome == "bernoulli":
        return F.binary_cross_entropy_with_logits(raw, y, reduction="none")
    s = model.outcome_logvar
    return 0.5 * (LOG_2PI + s + (y - raw) ** 2 * torch.exp(-s))


def treatment_nll(model: CEIBModel, z: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(model.treatment_logit(z), t, reduction="none")


def loss(model: CEIBModel, batch: dict, lam: float, temperature: float = 1.0,
         generator: torch.Generator | None = None, noise: dict | None = None,
         t_weight: float = 1.0):
    """Return ``(total, LossBreakdown)`` for one batch; ``total`` is a
    differentiable scalar tensor."""
    x1, x2, t, y = batch["x1"], batch["x2"], batch["t"], batch["y"]
    n = x1.shape[0]
    if noise is None:
        noise = draw_noise(model, n, generator if generator is not None else torch.Generator())
    post1, post2 = model.encode(x1, x2)
    kl1 = kl_mixture(post1, model.prior1.expand(n)).mean()
    v1, _ = sample_latent(post1, temperature, gumbel=noise["gumbel1"], eps=noise["eps1"])
    if post2 is not None:
        kl2 = kl_mixture(post2, model.prior2.expand(n)).mean()
        v2, _ = sample_latent(post2, temperature, gumbel=noise["gumbel2"], eps=noise["eps2"])
    else:
        kl2 = x1.new_zeros(())
        v2 = x1.new_zeros(n, 0)
    z = concat_latent(v1, v2)
    nll_y = outcome_nll(model, z, t, y).mean()
    nll_t = treatment_nll(model, z, t).mean()
    total = kl1 + kl2 + lam * (nll_y + t_weight * nll_t)
    parts = LossBreakdown(*(float(v.detach()) for v in (kl1, kl2, nll_y, nll_t, total)))
    return total, parts


def entropy_of_y(y, binary: bool | None = None) -> float:
    """Gaussian-fit differential entropy for continuous ``y``; Bernoulli
    entropy of the empirical rate for binary ``y``."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty outcome")
    if binary is None:
        binary = bool(np.isin(y, (0.0, 1.0)).all())
    if binary:
        return bernoulli_entropy(y.mean())
    var = y.var()
    if not var > 0:
        raise ValueError("degenerate outcome: zero variance")
    return 0.5 * math.log(2 * math.pi * math.e * var)


def bernoulli_entropy(rate: float) -> float:
    if not 0.0 < rate < 1.0:
        raise ValueError("degenerate outcome: rate must lie strictly inside (0, 1)")
    return float(-(rate * math.log(rate) + (1 - rate) * math.log(1 - rate)))


@torch.no_grad()
def evaluate_loss(model: CEIBModel, ds: ObservationalDataset, lam: float, temperature: float,
                  seed: int, t_weight: float = 1.0) -> LossBreakdown:
    """Loss on a whole split with a fixed noise seed."""
    _, parts = loss(model, batch_tensors(ds), lam, temperature,
                    generator=torch.Generator().manual_seed(seed), t_weight=t_weight)
    return parts


@dataclass
class TrainingTrace:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1

    def add(self, epoch: int, split: str, parts: LossBreakdown) -> None:
        self.rows.append({"epoch": epoch, "split": split, **asdict(parts)})

    def final(self, split: str) -> LossBreakdown:
        row = [r for r in self.rows if r["split"] == split and r["epoch"] == self.best_epoch][-1]
        return LossBreakdown(*(row[k] for k in ("kl1", "kl2", "nll_y", "nll_t", "total")))

    def to_csv(self, path) -> None:
        fields = ["epoch", "split", "kl1", "kl2", "nll_y", "nll_t", "total"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in fields})


def _finite(parts: LossBreakdown) -> bool:
    return all(math.isfinite(v) for v in asdict(parts).values())


def train(train_ds: ObservationalDataset, val_ds: ObservationalDataset,
          model_config: ModelConfig | CEIBModel, cfg: TrainConfig):
    """Minibatch Adam on the total loss with early stopping on validation total.

    Returns the parameters from the best validation epoch and a
    :class:`TrainingTrace`.
    """
    model = model_config if isinstance(model_config, CEIBModel) else CEIBModel(model_config)
    batch_all = batch_tensors(train_ds)
    batch_tensors(val_ds)  # fail early on masked validation rows
    n = train_ds.n
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    trace = TrainingTrace()
    best_val = math.inf
    best_state = copy.deepcopy(model.state_dict())
    last_finite = None
    stale = 0
    for epoch in range(cfg.epochs):
        temp = cfg.temperature(epoch)
        model.train()
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = torch.as_tensor(perm[start:start + cfg.batch_size])
            batch = {k: (v[idx] if v is not None else None) for k, v in batch_all.items()}
            opt.zero_grad()
            total, parts = loss(model, batch, cfg.lam, temp, generator=gen, t_weight=cfg.t_weight)
            if not math.isfinite(parts.total):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}", last_finite)
            total.backward()
            opt.step()
            last_finite = parts

        model.eval()
        # evaluation noise is seeded per run so epochs are compared on equal footing
        tr = evaluate_loss(model, train_ds, cfg.lam, temp, cfg.seed + 1, cfg.t_weight)
        va = evaluate_loss(model, val_ds, cfg.lam, temp, cfg.seed + 2, cfg.t_weight)
        if not (_finite(tr) and _finite(va)):
            raise TrainingDivergence(f"non-finite evaluation loss at epoch {epoch}", last_finite)
        trace.add(epoch, "train", tr)
        trace.add(epoch, "val", va)
        if va.total < best_val:
            best_val = va.total
            best_state = copy.deepcopy(model.state_dict())
            trace.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    trace.stopped_epoch = epoch
    model.load_state_dict(best_state)
    model.eval()
    return model, trace

"""CEIB network: two mixture-posterior encoders, a treatment head and a
two-arm (TARnet-style) outcome head on the concatenated latent."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    p1: int
    p2: int
    k1: int = 4
    d1: int = 3
    k2: int = 4
    d2: int = 3
    hidden: int = 64
    depth: int = 2
    outcome: str = "gaussian"
    shared_trunk: bool = False
    prior_radius: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.outcome not in ("gaussian", "bernoulli"):
            raise ValueError(f"unknown outcome family {self.outcome!r}")
        if self.p1 < 1 or self.k1 < 1 or self.d1 < 1:
            raise ValueError("block 1 needs positive width, k and d")
        if self.p2 == 0:
            self.d2 = 0
            self.k2 = 1
        elif self.k2 < 1 or self.d2 < 1:
            raise ValueError("block 2 needs positive k and d")

    @property
    def latent_dim(self) -> int:
        return self.d1 + self.d2


@dataclass
class MixturePosterior:
    """Batched diagonal Gaussian mixture: ``logits (n, k)``,
    ``means (n, k, d)``, ``logvars (n, k, d)``."""

    logits: torch.Tensor
    means: torch.Tensor
    logvars: torch.Tensor

    @property
    def responsibilities(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=-1)

    def mean_latent(self) -> torch.Tensor:
        """Responsibility-weighted component means (no sampling)."""
        return (self.responsibilities.unsqueeze(-1) * self.means).sum(-2)

    def hard_assignment(self) -> torch.Tensor:
        return self.logits.argmax(dim=-1)


def mlp(sizes: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(sizes) - 2:
            layers.append(nn.ELU())
    return nn.Sequential(*layers)


def _zero_last(net: nn.Sequential) -> None:
    last = net[-1]
    nn.init.zeros_(last.weight)
    nn.init.zeros_(last.bias)


class MixtureEncoder(nn.Module):
    def __init__(self, p: int, k: int, d: int, hidden: int, depth: int):
        super().__init__()
        self.k, self.d = k, d
        self.net = mlp([p] + [hidden] * depth + [k * (1 + 2 * d)])
        _zero_last(self.net)

    def forward(self, x: torch.Tensor) -> MixturePosterior:
        if torch.isnan(x).any():
            raise ValueError("NaN reached the encoder; masked rows must not be encoded")
        out = self.net(x)
        n, k, d = x.shape[0], self.k, self.d
        logits = out[:, :k]
        means = out[:, k:k + k * d].reshape(n, k, d)
        logvars = out[:, k + k * d:].reshape(n, k, d)
        return MixturePosterior(logits, means, logvars)


class MixturePrior(nn.Module):
    """Learned mixture prior; uniform weights, unit variances and means on a
    sphere of the given radius at initialization."""

    def __init__(self, k: int, d: int, radius: float, generator: torch.Generator):
        super().__init__()
        directions = torch.randn(k, d, generator=generator, dtype=DTYPE)
        directions = directions / directions.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        self.logits = nn.Parameter(torch.zeros(k, dtype=DTYPE))
        self.means = nn.Parameter(radius * directions)
        self.logvars = nn.Parameter(torch.zeros(k, d, dtype=DTYPE))

    def expand(self, n: int) -> MixturePosterior:
        return MixturePosterior(
            self.logits.expand(n, -1), self.means.expand(n, -1, -1),
            self.logvars.expand(n, -1, -1))


def gumbel_noise(shape, generator: torch.Generator | None = None) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=DTYPE).clamp_min(1e-300)
    return -torch.log((-torch.log(u)).clamp_min(1e-300))


def sample_latent(post: MixturePosterior, temperature: float,
                  generator: torch.Generator | None = None,
                  gumbel: torch.Tensor | None = None,
                  eps: torch.Tensor | None = None):
    """Reparameterized draw from a relaxed mixture.

    The component assignment is a Gumbel-softmax sample at ``temperature``;
    each component contributes its own Gaussian draw weighted by that soft
    assignment. ``gumbel`` and ``eps`` may be supplied to fix the noise.

    Returns ``(v, soft_assign)`` with shapes ``(n, d)`` and ``(n, k)``.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if gumbel is None:
        gumbel = gumbel_noise(post.logits.shape, generator)
    if eps is None:
        eps = torch.randn(post.means.shape, generator=generator, dtype=post.means.dtype)
    soft = torch.softmax((post.logits + gumbel) / temperature, dim=-1)
    comp = post.means + torch.exp(0.5 * post.logvars) * eps
    return (soft.unsqueeze(-1) * comp).sum(-2), soft


def concat_latent(v1: torch.Tensor, v2: torch.Tensor) -> torch.Tensor:
    return torch.cat([v1, v2], dim=-1)


class CEIBModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        gen = torch.Generator().manual_seed(c.seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(c.seed)
            self.encoder1 = MixtureEncoder(c.p1, c.k1, c.d1, c.hidden, c.depth)
            self.prior1 = MixturePrior(c.k1, c.d1, c.prior_radius, gen)
            if c.p2 > 0:
                self.encoder2 = MixtureEncoder(c.p2, c.k2, c.d2, c.hidden, c.depth)
                self.prior2 = MixturePrior(c.k2, c.d2, c.prior_radius, gen)
            else:
                self.encoder2 = None
                self.prior2 = None
            zd = c.latent_dim
            hid = [c.hidden] * c.depth
            self.f1 = mlp([zd] + hid + [1])
            if c.shared_trunk:
                self.trunk = nn.Sequential(mlp([zd] + hid), nn.ELU())
                arm_in = [c.hidden]
            else:
                self.trunk = None
                arm_in = [zd] + hid
            self.f2 = mlp(arm_in + [1])
            self.f3 = mlp(arm_in + [1])
            for net in (self.f1, self.f2, self.f3):
                _zero_last(net)
            self.outcome_logvar = nn.Parameter(torch.zeros((), dtype=DTYPE))
        self.to(DTYPE)

    # -- encoders ----------------------------------------------------------

    def encode(self, x1: torch.Tensor, x2: torch.Tensor | None):
        post1 = self.encoder1(x1)
        post2 = self.encoder2(x2) if self.encoder2 is not None else None
        return post1, post2

    def mean_z(self, x1: torch.Tensor, x2: torch.Tensor | None) -> torch.Tensor:
        post1, post2 = self.encode(x1, x2)
        v1 = post1.mean_latent()
        v2 = post2.mean_latent() if post2 is not None else v1.new_zeros(v1.shape[0], 0)
        return concat_latent(v1, v2)

    # -- heads -------------------------------------------------------------

    def treatment_logit(self, z: torch.Tensor) -> torch.Tensor:
        return self.f1(z).squeeze(-1)

    def treatment_prob(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.treatment_logit(z))

    def arm_outputs(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Raw outputs of the control arm ``f3`` and treated arm ``f2``."""
        h = self.trunk(z) if self.trunk is not None else z
        return self.f3(h).squeeze(-1), self.f2(h).squeeze(-1)

    def arm_output(self, z: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        raw0, raw1 = self.arm_outputs(z)
        return torch.where(t.to(z.dtype) > 0.5, raw1, raw0)

    def outcome_params(self, z: torch.Tensor, t) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Mean and variance of ``y | t, z``; Bernoulli family returns
        ``(probability, None)``."""
        t = torch.as_tensor(t, dtype=z.dtype)
        if t.ndim == 0:
            t = t.expand(z.shape[0])
        if not bool(((t == 0) | (t == 1)).all()):
            raise ValueError("non-binary treatment")
        raw = self.arm_output(z, t)
        if self.config.outcome == "bernoulli":
            return torch.sigmoid(raw), None
        return raw, torch.exp(self.outcome_logvar).expand_as(raw)

    def predict_both_arms(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        raw0, raw1 = self.arm_outputs(z)
        if self.config.outcome == "bernoulli":
            return torch.sigmoid(raw0), torch.sigmoid(raw1)
        return raw0, raw1


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: CEIBModel, path, extra: dict | None = None) -> None:
    """Self-describing JSON checkpoint: config plus row-major arrays with shapes."""
    arrays = {}
    for name, tensor in model.state_dict().items():
        a = tensor.detach().cpu().numpy()
        arrays[name] = {"shape": list(a.shape), "data": a.reshape(-1).tolist()}
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "arrays": arrays,
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def read_checkpoint(path) -> dict:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('format_version')}")
    return payload


def load_checkpoint(path) -> tuple[CEIBModel, dict]:
    payload = read_checkpoint(path)
    model = CEIBModel(ModelConfig(**payload["config"]))
    state = {
        name: torch.from_numpy(np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"]))
        for name, entry in payload["arrays"].items()
    }
    model.load_state_dict(state)
    model.eval()
    return model, payload["extra"]


def to_tensor(a) -> torch.Tensor:
    return torch.tensor(np.asarray(a), dtype=DTYPE)

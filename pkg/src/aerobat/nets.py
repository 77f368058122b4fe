"""Policy stack: planar-rotation-equivariant linear layers, gated
nonlinearities, FiLM command conditioning, the actor, a multi-head critic,
plain-MLP ablation backbones, and the checkpoint format.

Everything runs in 64-bit floats so the symmetry tolerances (1e-9 layer,
1e-6 composed) are meaningful.

The intertwiner basis is closed-form: maps between planar pairs are
a*I2 + b*J with J = [[0,-1],[1,0]]; pair<->scalar blocks are exactly zero;
scalar<->scalar blocks are free. Pair channels carry no bias.
"""

from __future__ import annotations

import io
import json
import math
import struct

import numpy as np
import torch
from torch import nn

from .config import config_hash, network_hash
from .symmetry import FeatureLayout, Scalar, VecPair

DTYPE = torch.float64
TRUNK_DIM = 18 + 4   # rel state + previous action
CMD_DIM = 5
ACT_DIM = 4

# Grouping of the 22 modulated features into planar pairs and invariants:
# each body-frame 3-vector contributes its (x, y) as a pair and z as a
# scalar; rotation-matrix columns pair the same way (left action); previous
# thrust is a scalar, previous planar rates a pair.
OBS_CHANNELS = (
    VecPair(0, 1), Scalar(2),      # p_rel
    VecPair(3, 4), Scalar(5),      # v_rel
    VecPair(6, 7), Scalar(8),      # omega_rel
    VecPair(9, 10), Scalar(11),    # R_rel col 0
    VecPair(12, 13), Scalar(14),   # R_rel col 1
    VecPair(15, 16), Scalar(17),   # R_rel col 2
    Scalar(18),                    # prev f_sigma
    VecPair(19, 20), Scalar(21),   # prev omega
)


def obs_layout(extra_scalars: int = 0) -> FeatureLayout:
    chans = list(OBS_CHANNELS) + [Scalar(TRUNK_DIM + j) for j in range(extra_scalars)]
    return FeatureLayout(tuple(chans))


# Action order [f_sigma, omega_x, omega_y, omega_z]: the planar rate command
# transforms as a pair, thrust and yaw rate are invariant.
ACTION_LAYOUT_EQ = FeatureLayout((Scalar(0), VecPair(1, 2), Scalar(3)))
ACTION_LAYOUT_INV = FeatureLayout((Scalar(0), Scalar(1), Scalar(2), Scalar(3)))


def _uniform_(t: torch.Tensor, fan_in: int, generator: torch.Generator) -> None:
    bound = math.sqrt(3.0 / max(fan_in, 1))
    with torch.no_grad():
        t.uniform_(-bound, bound, generator=generator)


class EquivLinear(nn.Module):
    """Linear map constrained to commute with the planar rotation action.

    Free parameters: (a, b) per (pair_out, pair_in) block, a dense matrix on
    scalar channels, and biases on scalar outputs only. materialize() builds
    the equivalent dense matrix, so W rho_in(theta) = rho_out(theta) W holds
    by construction.
    """

    def __init__(self, layout_in: FeatureLayout, layout_out: FeatureLayout,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.layout_in = layout_in
        self.layout_out = layout_out
        gen = generator or torch.Generator()
        P_in, P_out = layout_in.n_pairs, layout_out.n_pairs
        S_in, S_out = layout_in.n_scalars, layout_out.n_scalars
        self._has_pair = P_in > 0 and P_out > 0
        self._has_scalar = S_in > 0 and S_out > 0
        if self._has_pair:
            self.a = nn.Parameter(torch.empty(P_out, P_in, dtype=DTYPE))
            self.b = nn.Parameter(torch.empty(P_out, P_in, dtype=DTYPE))
            _uniform_(self.a, 2 * P_in, gen)
            _uniform_(self.b, 2 * P_in, gen)
        if self._has_scalar:
            self.w = nn.Parameter(torch.empty(S_out, S_in, dtype=DTYPE))
            _uniform_(self.w, S_in, gen)
        if S_out > 0:
            self.bias = nn.Parameter(torch.zeros(S_out, dtype=DTYPE))
        ix = lambda chans, attr: torch.tensor([getattr(c, attr) for c in chans], dtype=torch.long)
        self.register_buffer("_rx", ix(layout_out.pairs, "ix"), persistent=False)
        self.register_buffer("_ry", ix(layout_out.pairs, "iy"), persistent=False)
        self.register_buffer("_cx", ix(layout_in.pairs, "ix"), persistent=False)
        self.register_buffer("_cy", ix(layout_in.pairs, "iy"), persistent=False)
        self.register_buffer("_rs", ix(layout_out.scalars, "i"), persistent=False)
        self.register_buffer("_cs", ix(layout_in.scalars, "i"), persistent=False)

    def materialize(self) -> torch.Tensor:
        W = torch.zeros(self.layout_out.dim, self.layout_in.dim, dtype=DTYPE)
        if self._has_pair:
            W[self._rx[:, None], self._cx] = self.a
            W[self._rx[:, None], self._cy] = -self.b
            W[self._ry[:, None], self._cx] = self.b
            W[self._ry[:, None], self._cy] = self.a
        if self._has_scalar:
            W[self._rs[:, None], self._cs] = self.w
        return W

    def full_bias(self) -> torch.Tensor:
        bv = torch.zeros(self.layout_out.dim, dtype=DTYPE)
        if self.layout_out.n_scalars > 0:
            bv[self._rs] = self.bias
        return bv

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.layout_in.dim:
            raise ValueError(f"expected {self.layout_in.dim} features, got {x.shape[-1]}")
        return x @ self.materialize().T + self.full_bias()


class GatedNonlinearity(nn.Module):
    """ELU on scalars; each pair scaled by sigmoid of its own gate scalar.

    Consumes a canonical layout (P pairs, S scalars, P gates appended last)
    and emits (P pairs, S scalars [, P pair norms]). Gates and norms are
    invariant, so equivariance is preserved.
    """

    def __init__(self, n_pairs: int, n_scalars: int, norm_features: bool):
        super().__init__()
        self.P, self.S = n_pairs, n_scalars
        self.norm_features = norm_features
        self.layout_in = FeatureLayout.make(n_pairs, n_scalars + n_pairs)
        self.layout_out = FeatureLayout.make(n_pairs, n_scalars + (n_pairs if norm_features else 0))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        P, S = self.P, self.S
        pairs = x[..., :2 * P].reshape(x.shape[:-1] + (P, 2))
        scalars = x[..., 2 * P:2 * P + S]
        gates = x[..., 2 * P + S:]
        v = pairs * torch.sigmoid(gates)[..., None]
        parts = [v.reshape(x.shape[:-1] + (2 * P,)), nn.functional.elu(scalars)]
        if self.norm_features:
            parts.append(torch.sqrt((v * v).sum(-1) + 1e-12))
        return torch.cat(parts, dim=-1)


class FiLM(nn.Module):
    """Command-conditioned affine modulation y = x * gamma(cmd) + beta(cmd),
    applied to the raw features before the symmetry grouping. Initialized to
    the identity (gamma = 1, beta = 0)."""

    def __init__(self, feat_dim: int = TRUNK_DIM, cmd_dim: int = CMD_DIM,
                 hidden: int = 32, generator: torch.Generator | None = None):
        super().__init__()
        gen = generator or torch.Generator()
        self.feat_dim = feat_dim
        self.l1 = nn.Linear(cmd_dim, hidden, dtype=DTYPE)
        self.l2 = nn.Linear(hidden, 2 * feat_dim, dtype=DTYPE)
        _uniform_(self.l1.weight, cmd_dim, gen)
        _uniform_(self.l1.bias, cmd_dim, gen)
        with torch.no_grad():
            self.l2.weight.zero_()
            self.l2.bias[:feat_dim] = 1.0
            self.l2.bias[feat_dim:] = 0.0

    def forward(self, x: torch.Tensor, cmd: torch.Tensor) -> torch.Tensor:
        gb = self.l2(torch.tanh(self.l1(cmd)))
        gamma, beta = gb[..., :self.feat_dim], gb[..., self.feat_dim:]
        return x * gamma + beta


class EquivTrunk(nn.Module):
    """Two equivariant hidden layers with gated nonlinearities."""

    def __init__(self, layout_in: FeatureLayout, hidden_pairs: int,
                 hidden_scalars: int, norm_features: bool,
                 generator: torch.Generator):
        super().__init__()
        P, S = hidden_pairs, hidden_scalars
        gate_out = FeatureLayout.make(P, S + P)
        self.lin1 = EquivLinear(layout_in, gate_out, generator)
        self.act1 = GatedNonlinearity(P, S, norm_features)
        self.lin2 = EquivLinear(self.act1.layout_out, gate_out, generator)
        self.act2 = GatedNonlinearity(P, S, norm_features)
        self.layout_out = self.act2.layout_out

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act2(self.lin2(self.act1(self.lin1(x))))


class MlpTrunk(nn.Module):
    def __init__(self, in_dim: int, widths: list[int], generator: torch.Generator):
        super().__init__()
        layers = []
        d = in_dim
        for wdt in widths:
            lin = nn.Linear(d, wdt, dtype=DTYPE)
            _uniform_(lin.weight, d, generator)
            _uniform_(lin.bias, d, generator)
            layers.append(lin)
            d = wdt
        self.layers = nn.ModuleList(layers)
        self.out_dim = d

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for lin in self.layers:
            x = nn.functional.elu(lin(x))
        return x


def radial_tanh(v: torch.Tensor) -> torch.Tensor:
    """tanh-saturate the magnitude of a planar vector, keeping its direction.
    Commutes with rotations; smooth at the origin (series branch)."""
    n2 = (v * v).sum(-1, keepdim=True)
    n = torch.sqrt(n2 + 1e-300)
    small = n < 1e-8
    factor = torch.where(small, 1.0 - n2 / 3.0, torch.tanh(n) / n)
    return v * factor


class Actor(nn.Module):
    """Maps the 27-dim observation to a normalized action mean in [-1, 1]^4
    plus a state-independent log standard deviation.

    Physical units: f_sigma = (a0+1)/2 * 4 f_motor_max, omega = a[1:4] * omega_max
    (applied outside, in the environment's normalized_to_physical).
    """

    def __init__(self, net_cfg: dict, hover_frac: float, generator: torch.Generator):
        super().__init__()
        self.backbone = net_cfg["backbone"]
        self.film_on = bool(net_cfg["film"])
        self.invariant_action = bool(net_cfg["invariant_action"])
        if self.film_on:
            self.film = FiLM(TRUNK_DIM, CMD_DIM, int(net_cfg["film_hidden"]), generator)
        if self.backbone == "emlp":
            extra = 0 if self.film_on else CMD_DIM
            self.layout_in = obs_layout(extra)
            self.trunk = EquivTrunk(self.layout_in, int(net_cfg["hidden_pairs"]),
                                    int(net_cfg["hidden_scalars"]),
                                    bool(net_cfg["norm_features"]), generator)
            self.out_layout = ACTION_LAYOUT_INV if self.invariant_action else ACTION_LAYOUT_EQ
            self.head = EquivLinear(self.trunk.layout_out, self.out_layout, generator)
        else:
            in_dim = TRUNK_DIM if self.film_on else TRUNK_DIM + CMD_DIM
            self.trunk = MlpTrunk(in_dim, list(net_cfg["mlp_widths"]), generator)
            self.head = nn.Linear(self.trunk.out_dim, ACT_DIM, dtype=DTYPE)
            _uniform_(self.head.weight, self.trunk.out_dim, generator)
            with torch.no_grad():
                self.head.bias.zero_()
        self.log_std = nn.Parameter(torch.full((ACT_DIM,), float(net_cfg["log_std_init"]), dtype=DTYPE))
        if net_cfg["hover_thrust_bias"]:
            # pre-tanh bias putting the initial thrust mean at hover
            t = float(np.clip(2.0 * hover_frac - 1.0, -0.999, 0.999))
            with torch.no_grad():
                if isinstance(self.head, EquivLinear):
                    f_slot = [i for i, s in enumerate(self.out_layout.scalars) if s.i == 0][0]
                    self.head.bias[f_slot] += math.atanh(t)
                else:
                    self.head.bias[0] += math.atanh(t)

    def trunk_features(self, obs: torch.Tensor) -> torch.Tensor:
        x, cmd = obs[..., :TRUNK_DIM], obs[..., TRUNK_DIM:]
        if self.film_on:
            x = self.film(x, cmd)
        else:
            x = torch.cat([x, cmd], dim=-1)
        return self.trunk(x)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        y = self.head(self.trunk_features(obs))
        if isinstance(self.head, EquivLinear) and not self.invariant_action:
            f = torch.tanh(y[..., 0:1])
            pair = radial_tanh(y[..., 1:3])
            wz = torch.tanh(y[..., 3:4])
            return torch.cat([f, pair, wz], dim=-1)
        return torch.tanh(y)

    def clamped_log_std(self) -> torch.Tensor:
        return self.log_std.clamp(-5.0, 1.0)

    def equivariance_reports(self, n_trials: int = 100, rng=None) -> dict:
        """Per-layer and composed symmetry checks (emlp backbone only)."""
        from .symmetry import check_equivariance
        if self.backbone != "emlp":
            return {}
        rng = rng if rng is not None else np.random.default_rng(0)

        def as_fn(mod):
            def fn(x):
                with torch.no_grad():
                    return mod(torch.as_tensor(x, dtype=DTYPE)).numpy()
            return fn

        layers = {
            "equiv_linear_1": self.trunk.lin1,
            "gated_nonlinearity_1": self.trunk.act1,
            "equiv_linear_2": self.trunk.lin2,
            "gated_nonlinearity_2": self.trunk.act2,
            "action_head": self.head,
        }
        out = {}
        for name, mod in layers.items():
            out[name] = check_equivariance(as_fn(mod), mod.layout_in, mod.layout_out,
                                           n_trials=n_trials, tol=1e-9, rng=rng)

        def actor_fn(x):
            with torch.no_grad():
                return self.forward(torch.as_tensor(x, dtype=DTYPE)).numpy()

        out["actor_composed"] = check_equivariance(
            actor_fn, obs_layout(CMD_DIM), self.out_layout,
            n_trials=n_trials, tol=1e-6, rng=rng)
        return out


class Critic(nn.Module):
    """Shared backbone with one scalar value head per task (or a single
    shared head when multi-head is off). Reads clean observations."""

    def __init__(self, net_cfg: dict, n_tasks: int, generator: torch.Generator):
        super().__init__()
        self.backbone = net_cfg["backbone"]
        self.film_on = bool(net_cfg["film"])
        self.n_heads = n_tasks if net_cfg["multihead"] else 1
        if self.film_on:
            self.film = FiLM(TRUNK_DIM, CMD_DIM, int(net_cfg["film_hidden"]), generator)
        if self.backbone == "emlp":
            extra = 0 if self.film_on else CMD_DIM
            self.layout_in = obs_layout(extra)
            self.trunk = EquivTrunk(self.layout_in, int(net_cfg["hidden_pairs"]),
                                    int(net_cfg["hidden_scalars"]),
                                    bool(net_cfg["norm_features"]), generator)
            head_out = FeatureLayout.make(0, 1)
            self.heads = nn.ModuleList([
                EquivLinear(self.trunk.layout_out, head_out, generator)
                for _ in range(self.n_heads)])
        else:
            in_dim = TRUNK_DIM if self.film_on else TRUNK_DIM + CMD_DIM
            self.trunk = MlpTrunk(in_dim, list(net_cfg["mlp_widths"]), generator)
            heads = []
            for _ in range(self.n_heads):
                lin = nn.Linear(self.trunk.out_dim, 1, dtype=DTYPE)
                _uniform_(lin.weight, self.trunk.out_dim, generator)
                with torch.no_grad():
                    lin.bias.zero_()
                heads.append(lin)
            self.heads = nn.ModuleList(heads)

    def trunk_features(self, obs: torch.Tensor) -> torch.Tensor:
        x, cmd = obs[..., :TRUNK_DIM], obs[..., TRUNK_DIM:]
        if self.film_on:
            x = self.film(x, cmd)
        else:
            x = torch.cat([x, cmd], dim=-1)
        return self.trunk(x)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        """All head values, shape (..., n_heads)."""
        feats = self.trunk_features(obs)
        return torch.cat([h(feats) for h in self.heads], dim=-1)

    def value_for(self, obs: torch.Tensor, task_ids: torch.Tensor) -> torch.Tensor:
        vals = self.forward(obs)
        if self.n_heads == 1:
            return vals[..., 0]
        idx = task_ids.long().unsqueeze(-1)
        return vals.gather(-1, idx).squeeze(-1)


LOG_2PI = math.log(2.0 * math.pi)


class ActorCritic(nn.Module):
    def __init__(self, cfg: dict, seed: int = 0):
        super().__init__()
        net_cfg = cfg["network"]
        dyn = cfg["dynamics"]
        self.f_total_max = float(dyn["thrust_to_weight"]) * float(dyn["mass"]) * float(dyn["gravity"])
        self.omega_max = float(cfg["task"]["omega_max"])
        hover_frac = 1.0 / float(dyn["thrust_to_weight"])
        gen = torch.Generator()
        gen.manual_seed(seed)
        self.actor = Actor(net_cfg, hover_frac, gen)
        self.critic = Critic(net_cfg, n_tasks=4, generator=gen)
        self.net_hash = network_hash(cfg)

    def distribution_params(self, obs: torch.Tensor):
        mean = self.actor(obs)
        log_std = self.actor.clamped_log_std()
        return mean, log_std

    def log_prob(self, mean, log_std, action):
        var = torch.exp(2.0 * log_std)
        return (-0.5 * ((action - mean) ** 2 / var + LOG_2PI) - log_std).sum(-1)

    def entropy(self, log_std) -> torch.Tensor:
        return (log_std + 0.5 * (LOG_2PI + 1.0)).sum()

    @torch.no_grad()
    def act(self, obs: np.ndarray, obs_clean: np.ndarray, task_ids: np.ndarray,
            generator: torch.Generator | None = None, deterministic: bool = False) -> dict:
        o = torch.as_tensor(obs, dtype=DTYPE)
        mean, log_std = self.distribution_params(o)
        if deterministic:
            action = mean
        else:
            eps = torch.randn(mean.shape, dtype=DTYPE, generator=generator)
            action = mean + eps * torch.exp(log_std)
        logp = self.log_prob(mean, log_std, action)
        oc = torch.as_tensor(obs_clean, dtype=DTYPE)
        value = self.critic.value_for(oc, torch.as_tensor(task_ids))
        return {
            "action": action.numpy(), "log_prob": logp.numpy(),
            "value": value.numpy(), "mean": mean.numpy(),
        }

    @torch.no_grad()
    def values(self, obs_clean: np.ndarray, task_ids: np.ndarray) -> np.ndarray:
        oc = torch.as_tensor(obs_clean, dtype=DTYPE)
        return self.critic.value_for(oc, torch.as_tensor(task_ids)).numpy()


def normalized_to_physical(a: np.ndarray, f_total_max: float, omega_max: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    out[..., 0] = (a[..., 0] + 1.0) * 0.5 * f_total_max
    out[..., 1:4] = a[..., 1:4] * omega_max
    return out


def build_policy(cfg: dict, seed: int = 0, backbone: str | None = None,
                 film: bool | None = None, multihead: bool | None = None) -> ActorCritic:
    """Construct a policy, optionally overriding the ablation axes."""
    if backbone is not None or film is not None or multihead is not None:
        cfg = json.loads(json.dumps(cfg))
        if backbone is not None:
            cfg["network"]["backbone"] = backbone
        if film is not None:
            cfg["network"]["film"] = bool(film)
        if multihead is not None:
            cfg["network"]["multihead"] = bool(multihead)
    return ActorCritic(cfg, seed=seed)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# ---------------------------------------------------------------------------
# Checkpoints: a JSON manifest followed by one flat little-endian float64
# blob holding every parameter in manifest order.

MAGIC = b"AEROBAT1\n"


class CheckpointFormatError(Exception):
    """File is not a readable checkpoint."""


class CheckpointMismatchError(Exception):
    """Checkpoint does not match the network it is being loaded into."""


def _layout_desc(layout: FeatureLayout) -> dict:
    return {"pairs": layout.n_pairs, "scalars": layout.n_scalars, "dim": layout.dim}


def policy_manifest(policy: ActorCritic, cfg: dict, meta: dict | None = None) -> dict:
    entries = [{"name": n, "shape": list(p.shape)} for n, p in policy.named_parameters()]
    layouts = {}
    for name, mod in policy.named_modules():
        if isinstance(mod, EquivLinear):
            layouts[name] = {"in": _layout_desc(mod.layout_in), "out": _layout_desc(mod.layout_out)}
    return {
        "version": 1,
        "config_hash": config_hash(cfg),
        "network_hash": network_hash(cfg),
        "config": cfg,
        "entries": entries,
        "layouts": layouts,
        "meta": meta or {},
    }


def save_checkpoint(path: str, policy: ActorCritic, cfg: dict, meta: dict | None = None) -> None:
    manifest = policy_manifest(policy, cfg, meta)
    mbytes = json.dumps(manifest, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<Q", len(mbytes)))
    buf.write(mbytes)
    for _, p in policy.named_parameters():
        buf.write(p.detach().cpu().numpy().astype("<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def read_checkpoint(path: str) -> tuple[dict, dict]:
    """Returns (manifest, {param name: float64 array})."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(MAGIC):
        raise CheckpointFormatError(f"{path}: bad magic")
    off = len(MAGIC)
    if len(raw) < off + 8:
        raise CheckpointFormatError(f"{path}: truncated header")
    (mlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    try:
        manifest = json.loads(raw[off:off + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path}: bad manifest: {e}")
    off += mlen
    params = {}
    for ent in manifest["entries"]:
        count = int(np.prod(ent["shape"])) if ent["shape"] else 1
        nbytes = count * 8
        if off + nbytes > len(raw):
            raise CheckpointFormatError(f"{path}: blob truncated at {ent['name']}")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(ent["shape"])
        params[ent["name"]] = arr
        off += nbytes
    if off != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - off} trailing bytes")
    return manifest, params


def load_into(policy: ActorCritic, manifest: dict, params: dict,
              strict_hash: bool = True) -> None:
    if strict_hash and manifest["network_hash"] != policy.net_hash:
        raise CheckpointMismatchError(
            f"checkpoint network hash {manifest['network_hash']} != policy {policy.net_hash}")
    own = dict(policy.named_parameters())
    if set(own) != set(params):
        missing = set(own) ^ set(params)
        raise CheckpointMismatchError(f"parameter name mismatch: {sorted(missing)[:6]}")
    with torch.no_grad():
        for name, p in own.items():
            arr = params[name]
            if list(p.shape) != list(arr.shape):
                raise CheckpointMismatchError(f"{name}: shape {list(arr.shape)} != {list(p.shape)}")
            p.copy_(torch.as_tensor(arr.copy(), dtype=DTYPE))


def restore_policy(path: str) -> tuple[ActorCritic, dict]:
    """Rebuild a policy purely from a checkpoint (config travels inside)."""
    manifest, params = read_checkpoint(path)
    policy = ActorCritic(manifest["config"], seed=0)
    load_into(policy, manifest, params)
    return policy, manifest

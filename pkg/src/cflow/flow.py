"""Flow-matching objectives, couplings, the training loop, and the sampler.

Training regresses a velocity field v(t, x) onto per-pair straight-line
target velocities x1 - x0 along the interpolation path

    psi_t(x0, x1) = (1 - t) x0 + t x1.

Two objectives are provided:

* ``cfm_loss``   mean squared regression error over the batch.
* ``erfm_loss``  the energy-reweighted form: each pair is weighted by
  w = sigmoid(-lam * F(x1)) and the batch loss is sum(w * err) / sum(w)
  (the normalized form used by the training loop; ``normalized=False``
  gives the plain weighted mean used by the gradient-equivalence check).

Pairs come from a ``Coupling``: either independent draws or an exact
minibatch optimal-transport assignment minimizing total squared distance.

``train`` drives the loop for four modes:

* ``learn``         fit a dataset target from a base sampler (also used
                    for the retrain baseline).
* ``finetune``      continue training an existing field on a dataset.
* ``refit-ot``      transport the current model's outputs onto a dataset
                    using OT-coupled pairs.
* ``unlearn-erfm``  draw BOTH endpoints from the source sampler and apply
                    the energy weights, steering mass off high-energy
                    regions without forget samples.

Sampling integrates the learned ODE with forward Euler over t in [0, 1].
A model trained on top of another model's outputs keeps that parent in its
chain, so generation always starts from the standard Gaussian root.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .datasets import EmpiricalSampler, GaussianSampler, LabeledDataset
from .diffcore import Adam, Mlp, Sgd, Tensor, velocity_mlp
from .diffcore.checkpoint import CheckpointError, mlp_from_buffer, mlp_to_bytes
from .diffcore.nn import row_sq_error_mean
from .energy import EnergySpec

__all__ = [
    "Coupling",
    "TrainConfig",
    "FlowModel",
    "ModelSampler",
    "FullySuppressedBatchError",
    "interpolate",
    "conditional_sample",
    "target_velocity",
    "cfm_loss",
    "erfm_loss",
    "independent_coupling",
    "ot_coupling",
    "train",
    "integrate",
    "sample",
    "trajectory",
    "save_model",
    "load_model",
]

MODES = ("learn", "unlearn-erfm", "refit-ot", "finetune")
SUPPRESSED_WEIGHT_SUM = 1e-12
MAX_BATCH_RESAMPLES = 100

MODEL_MAGIC = b"CFLOWMDL"
MODEL_VERSION = 1


class FullySuppressedBatchError(RuntimeError):
    """Every pair in the batch carries (numerically) zero weight."""


# -- path primitives --------------------------------------------------------


def _pair_arrays(x0, x1) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(x0, dtype=np.float64)
    b = np.asarray(x1, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"endpoint shapes differ: {a.shape} vs {b.shape}")
    return a, b


def interpolate(x0, x1, t):
    """psi_t(x0, x1) = (1 - t) x0 + t x1 for t in [0, 1]."""
    a, b = _pair_arrays(x0, x1)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("t must lie in [0, 1]")
    if t.ndim == 1 and a.ndim == 2:
        t = t[:, None]
    return (1.0 - t) * a + t * b


def conditional_sample(x0, x1, t, sigma: float, rng: np.random.Generator | None = None):
    """Draw from N(psi_t, sigma^2 I); sigma == 0 is exactly the interpolant."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    mid = interpolate(x0, x1, t)
    if sigma == 0.0:
        return mid
    if rng is None:
        raise ValueError("sigma > 0 requires an rng")
    return mid + sigma * rng.standard_normal(mid.shape)


def target_velocity(x0, x1):
    """Per-pair regression target x1 - x0 (independent of t)."""
    a, b = _pair_arrays(x0, x1)
    return b - a


# -- couplings ---------------------------------------------------------------


@dataclass(frozen=True)
class Coupling:
    """Row-aligned endpoint pairs plus how they were matched."""

    x0: np.ndarray
    x1: np.ndarray
    plan: str = "independent"
    cost: float | None = None

    def __post_init__(self):
        if self.x0.shape != self.x1.shape or self.x0.ndim != 2:
            raise ValueError("x0 and x1 must be equal-shape (n, d) arrays")

    def __len__(self) -> int:
        return self.x0.shape[0]


def independent_coupling(x0: np.ndarray, x1: np.ndarray) -> Coupling:
    a, b = _pair_arrays(x0, x1)
    return Coupling(x0=a, x1=b, plan="independent")


def pairing_cost(x0: np.ndarray, x1: np.ndarray) -> float:
    """Total squared distance of the as-given row pairing."""
    a, b = _pair_arrays(x0, x1)
    return float(((a - b) ** 2).sum())


def ot_coupling(x0: np.ndarray, x1: np.ndarray) -> Coupling:
    """Exact minibatch OT plan: the permutation of x1 minimizing total
    squared transport cost (solved as a linear assignment problem).

    Marginals are preserved: x0 keeps its order and x1 is permuted.
    """
    a, b = _pair_arrays(x0, x1)
    if a.ndim != 2:
        raise ValueError("ot_coupling expects (n, d) batches")
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    rows, cols = linear_sum_assignment(sq)
    # recompute the optimal cost directly so it is exact, not the expanded form
    cost = float(((a - b[cols]) ** 2).sum())
    return Coupling(x0=a, x1=b[cols], plan="ot", cost=cost)


# -- losses -------------------------------------------------------------------


def _field_prediction(
    model: Mlp,
    coupling: Coupling,
    t: np.ndarray,
    sigma: float,
    rng: np.random.Generator | None,
) -> tuple[Tensor, np.ndarray]:
    """Field evaluated on the conditional sample, plus the target velocity."""
    if len(coupling) == 0:
        raise ValueError("empty batch")
    xt = conditional_sample(coupling.x0, coupling.x1, t, sigma, rng)
    return model.velocity(t, xt), target_velocity(coupling.x0, coupling.x1)


def cfm_loss(
    model: Mlp,
    coupling: Coupling,
    t: np.ndarray,
    sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Mean squared flow-matching error over the batch (scalar tensor)."""
    v, delta = _field_prediction(model, coupling, t, sigma, rng)
    return row_sq_error_mean(v, delta)


def erfm_loss(
    model: Mlp,
    coupling: Coupling,
    t: np.ndarray,
    energy: EnergySpec,
    sigma: float = 0.0,
    rng: np.random.Generator | None = None,
    normalized: bool = True,
) -> Tensor:
    """Energy-reweighted flow-matching loss.

    Weights w = sigmoid(-lam * F(x1)) are constants of the batch (no
    gradient flows through them). The normalized form divides by sum(w);
    when all weights are equal they cancel exactly, so the computation
    falls through to the identical graph ``cfm_loss`` builds.
    """
    if len(coupling) == 0:
        raise ValueError("empty batch")
    w = energy.weight(coupling.x1)
    if w.sum() < SUPPRESSED_WEIGHT_SUM:
        raise FullySuppressedBatchError(
            f"batch weight sum {w.sum():.3e} below {SUPPRESSED_WEIGHT_SUM:.0e}; "
            "resample the batch"
        )
    v, delta = _field_prediction(model, coupling, t, sigma, rng)
    if normalized and w.max() == w.min():
        # constant energy: the weights cancel, so this is bit-identical to
        # the plain CFM mean on the same batch
        return row_sq_error_mean(v, delta)
    return row_sq_error_mean(v, delta, weights=w, normalized=normalized)


# -- training -----------------------------------------------------------------


@dataclass
class TrainConfig:
    """Knobs of the training loop; defaults match the 2D desk-scale runs."""

    mode: str = "learn"
    steps: int = 5000
    batch: int = 256
    lr: float = 1e-3
    lr_decay: str = "none"  # none | cosine (to 1% of lr over the run)
    lam: float = 5.0
    sigma: float = 0.0
    coupling: str | None = None  # independent | ot; defaults per mode
    seed: int = 0
    n_steps: int = 10
    hidden: tuple[int, ...] = (64, 64, 64)
    optimizer: str = "adam"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.mode == "unlearn-erfm" and not self.lam > 0:
            raise ValueError("unlearn-erfm requires lam > 0")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.coupling not in (None, "independent", "ot"):
            raise ValueError(f"unknown coupling {self.coupling!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_decay not in ("none", "cosine"):
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")
        self.hidden = tuple(int(h) for h in self.hidden)

    def resolved_coupling(self) -> str:
        if self.coupling is not None:
            return self.coupling
        return "ot" if self.mode == "refit-ot" else "independent"


class FlowModel:
    """A trained velocity field plus the generation chain it sits on.

    A model trained on another model's outputs keeps that model as its
    ``parent``; generation draws standard normal points at the root and
    integrates every stage in order, each with its own default step count
    (an explicit ``n_steps`` overrides all stages uniformly).
    """

    def __init__(
        self,
        field: Mlp,
        parent: "FlowModel | None" = None,
        n_steps: int = 10,
        provenance: dict | None = None,
    ):
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        self.field = field
        self.parent = parent
        self.n_steps = int(n_steps)
        self.provenance = dict(provenance or {})
        self.loss_trace: dict[str, list[float]] = {}

    @property
    def chain(self) -> list["FlowModel"]:
        return ([] if self.parent is None else self.parent.chain) + [self]

    @property
    def dim(self) -> int:
        return self.field.out_dim

    def velocity(self, t, x) -> np.ndarray:
        """This model's own field, evaluated without the tape."""
        return self.field.velocity(t, x, raw=True)

    def push(self, x: np.ndarray, n_steps: int | None = None) -> np.ndarray:
        """Transport points through the whole chain ending at this field."""
        if self.parent is not None:
            x = self.parent.push(x, n_steps=n_steps)
        steps = self.n_steps if n_steps is None else n_steps
        return integrate(lambda t, y: self.velocity(t, y), x, steps)

    def base_states(self, n: int, seed=0, n_steps: int | None = None) -> np.ndarray:
        """Inputs to this model's own stage: Gaussian root run through parents."""
        x = GaussianSampler(seed, dim=self.dim).sample(n)
        if self.parent is not None:
            x = self.parent.push(x, n_steps=n_steps)
        return x

    def sample(self, n: int, n_steps: int | None = None, seed=0) -> np.ndarray:
        x = GaussianSampler(seed, dim=self.dim).sample(n)
        return self.push(x, n_steps=n_steps)


class ModelSampler:
    """Base sampler backed by a flow model: seeded Gaussian draws pushed
    through the model's full chain."""

    def __init__(self, model: FlowModel, seed=0, n_steps: int | None = None):
        if model is None:
            raise ValueError("model sampler requires a loaded model")
        self.model = model
        self.seed = seed
        self.n_steps = n_steps  # None: each stage uses its own default
        self._rng = np.random.default_rng(seed)

    @classmethod
    def from_checkpoint(cls, path: str | Path, seed=0, n_steps: int | None = None):
        return cls(load_model(path), seed=seed, n_steps=n_steps)

    def sample(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        x = self._rng.standard_normal((n, self.model.dim))
        return self.model.push(x, n_steps=self.n_steps)


def train(
    cfg: TrainConfig,
    q0,
    target,
    parent: FlowModel | None = None,
    init: Mlp | FlowModel | None = None,
) -> FlowModel:
    """Run the training loop and return the fitted model.

    ``q0`` supplies x0 batches (and x1 batches in unlearn mode). ``target``
    is a LabeledDataset for the dataset modes and an EnergySpec for
    unlearn-erfm. ``parent`` is the generative stage whose outputs feed
    this field at sampling time; ``init`` (a field or model) seeds the
    weights instead of a fresh Glorot draw.

    Deterministic: identical (cfg, q0 construction, target) reproduce the
    returned parameters bit-for-bit.
    """
    dataset_mode = cfg.mode in ("learn", "finetune", "refit-ot")
    if dataset_mode and not isinstance(target, LabeledDataset):
        raise TypeError(f"mode {cfg.mode!r} requires a LabeledDataset target")
    if cfg.mode == "unlearn-erfm":
        if not isinstance(target, EnergySpec):
            raise TypeError("mode 'unlearn-erfm' requires an EnergySpec target")
        if cfg.resolved_coupling() == "ot":
            raise ValueError("unlearn-erfm pairs endpoints independently from q0")
    if cfg.mode == "refit-ot" and cfg.resolved_coupling() != "ot":
        raise ValueError("refit-ot requires the ot coupling")
    if cfg.mode == "finetune" and init is None:
        raise ValueError("finetune requires an initial model")

    if init is None:
        field = velocity_mlp(d=2, hidden=cfg.hidden, seed=cfg.seed)
    else:
        field = (init.field if isinstance(init, FlowModel) else init).copy()

    opt_cls = Adam if cfg.optimizer == "adam" else Sgd
    opt = opt_cls(field.parameters(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 0x7261696E])  # step stream (t, noise)
    data_sampler = (
        EmpiricalSampler(target.points, seed=[cfg.seed, 0x64617461]) if dataset_mode else None
    )
    use_ot = cfg.resolved_coupling() == "ot"

    losses: list[float] = []
    ot_costs: list[float] = []
    indep_costs: list[float] = []

    for step_idx in range(cfg.steps):
        if cfg.lr_decay == "cosine":
            frac = step_idx / cfg.steps
            opt.lr = cfg.lr * (0.01 + 0.99 * 0.5 * (1.0 + np.cos(np.pi * frac)))
        for attempt in range(MAX_BATCH_RESAMPLES + 1):
            if cfg.mode == "unlearn-erfm":
                both = q0.sample(2 * cfg.batch)
                x0, x1 = both[: cfg.batch], both[cfg.batch :]
            else:
                x0 = q0.sample(cfg.batch)
                x1 = data_sampler.sample(cfg.batch)
            t = rng.uniform(0.0, 1.0, size=cfg.batch)
            if use_ot:
                coupling = ot_coupling(x0, x1)
                indep_costs.append(pairing_cost(x0, x1))
                ot_costs.append(coupling.cost)
            else:
                coupling = independent_coupling(x0, x1)
            try:
                if cfg.mode == "unlearn-erfm":
                    loss = erfm_loss(field, coupling, t, target, sigma=cfg.sigma, rng=rng)
                else:
                    loss = cfm_loss(field, coupling, t, sigma=cfg.sigma, rng=rng)
                break
            except FullySuppressedBatchError:
                if attempt == MAX_BATCH_RESAMPLES:
                    raise
        loss.backward()
        opt.step()
        losses.append(loss.item())

    provenance = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "steps": cfg.steps,
        "batch": cfg.batch,
        "lam": cfg.lam if cfg.mode == "unlearn-erfm" else None,
        "target": getattr(target, "name", type(target).__name__),
    }
    model = FlowModel(field, parent=parent, n_steps=cfg.n_steps, provenance=provenance)
    model.loss_trace = {"loss": losses}
    if use_ot:
        model.loss_trace["ot_cost"] = ot_costs
        model.loss_trace["independent_cost"] = indep_costs
    return model


# -- sampling ------------------------------------------------------------------


def integrate(field_fn, x0: np.ndarray, n_steps: int, method: str = "euler") -> np.ndarray:
    """Integrate dx/dt = field_fn(t, x) over t in [0, 1] from x0.

    Forward Euler by default (first-order); ``method="midpoint"`` gives the
    second-order explicit midpoint variant.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if method not in ("euler", "midpoint"):
        raise ValueError(f"unknown integration method {method!r}")
    x = np.array(x0, dtype=np.float64, copy=True)
    dt = 1.0 / n_steps
    for k in range(n_steps):
        t = k * dt
        if method == "euler":
            x = x + dt * field_fn(t, x)
        else:
            half = x + 0.5 * dt * field_fn(t, x)
            x = x + dt * field_fn(t + 0.5 * dt, half)
    return x


def sample(model: FlowModel, n: int, n_steps: int | None = None, seed: int = 0) -> np.ndarray:
    """Generate n points: Gaussian root integrated through the model chain."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return model.sample(n, n_steps=n_steps, seed=seed)


def trajectory(
    model: FlowModel, x0: np.ndarray, n_steps: int, k_snapshots: int
) -> list[tuple[float, np.ndarray]]:
    """States of this model's own stage at k evenly spaced times in [0, 1].

    Returns (t, batch) pairs including both endpoints; the final snapshot
    coincides with running the integrator to completion from x0.
    """
    if k_snapshots < 2:
        raise ValueError("need at least the two endpoint snapshots")
    if k_snapshots > n_steps + 1:
        raise ValueError("k_snapshots must be <= n_steps + 1")
    marks = np.unique(np.round(np.linspace(0, n_steps, k_snapshots)).astype(int))
    x = np.array(x0, dtype=np.float64, copy=True)
    dt = 1.0 / n_steps
    snaps = []
    if 0 in marks:
        snaps.append((0.0, x.copy()))
    for k in range(n_steps):
        x = x + dt * model.velocity(k * dt, x)
        if (k + 1) in marks:
            snaps.append(((k + 1) * dt, x.copy()))
    return snaps


# -- persistence ----------------------------------------------------------------


def save_model(model: FlowModel, path: str | Path) -> None:
    """Write the chain (root first, each with its step count) and metadata;
    round trips are bit-exact."""
    meta = json.dumps({"provenance": model.provenance}).encode()
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<I", MODEL_VERSION))
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    chain = model.chain
    buf.write(struct.pack("<I", len(chain)))
    for stage in chain:
        buf.write(struct.pack("<I", stage.n_steps))
        buf.write(mlp_to_bytes(stage.field, kind="velocity"))
    Path(path).write_bytes(buf.getvalue())


def load_model(path: str | Path) -> FlowModel:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"model checkpoint not found: {path}")
    buf = io.BytesIO(path.read_bytes())
    if buf.read(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise CheckpointError(f"{path} is not a flow model checkpoint")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != MODEL_VERSION:
        raise CheckpointError(f"unsupported model checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", buf.read(4))
    meta = json.loads(buf.read(meta_len).decode())
    (chain_len,) = struct.unpack("<I", buf.read(4))
    if chain_len < 1:
        raise CheckpointError("model checkpoint has an empty chain")
    model = None
    for i in range(chain_len):
        (stage_steps,) = struct.unpack("<I", buf.read(4))
        net, _ = mlp_from_buffer(buf)
        provenance = meta.get("provenance", {}) if i == chain_len - 1 else {}
        model = FlowModel(net, parent=model, n_steps=stage_steps, provenance=provenance)
    return model

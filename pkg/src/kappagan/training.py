"""Alternating discriminator / generator optimisation, checkpoints and gradient checks."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import geometry, store
from .curvature import RicciMap, estimate_global_curvature, ricci_map
from .graphdata import Graph
from .model import EmbeddingTable, Generator, discriminator_loss, generate_fake, generator_loss

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None):
        super().__init__(message if checkpoint is None else f"{message}; diagnostic checkpoint at {checkpoint}")
        self.checkpoint = checkpoint


@dataclass
class TrainingConfig:
    epochs: int = 20
    d_steps: int = 10
    g_steps: int = 10
    n_s: int = 5
    dim: int = 16
    sigma: float = 1.0
    lam: float = 1.0
    lr_g: float = 0.01
    lr_d: float = 0.01
    walk_length: int = 1
    seed: int = 0
    kappa_override: float | None = None
    rho: float = 2.0
    tau: float = 1.0
    alpha: float = 0.5
    curvature_samples: int = 10
    optimizer: str = "adam"
    init_scale: float = 1e-2
    compute_ricci: bool = True
    # node classification: cross-entropy on labelled nodes plus lp_weight * link objective
    lp_weight: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("d_steps", "g_steps", "n_s", "dim", "walk_length", "curvature_samples"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        for name in ("lr_g", "lr_d", "tau"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("sigma", "lam", "lp_weight", "init_scale"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and non-negative")
        if not math.isfinite(self.rho):
            raise ConfigError("rho must be finite")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.kappa_override is not None and not math.isfinite(self.kappa_override):
            raise ConfigError("kappa_override must be finite")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "TrainingConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "TrainingConfig":
        return cls.from_json(Path(path).read_text())

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# -- sampling -----------------------------------------------------------------


def _active_nodes(graph: Graph) -> np.ndarray:
    nodes = np.flatnonzero(graph.degrees > 0)
    if len(nodes) < graph.n:
        log.warning("skipping %d isolated node(s)", graph.n - len(nodes))
    return nodes


def walk_endpoints(graph: Graph, starts, walk_length: int, rng: np.random.Generator) -> np.ndarray:
    """Endpoint of one uniform random walk of ``walk_length`` steps from each start node."""
    cur = np.asarray(starts, dtype=np.int64).copy()
    deg = graph.degrees
    if (deg[cur] == 0).any():
        raise ValueError("random walk started at an isolated node")
    for _ in range(walk_length):
        step = (rng.random(len(cur)) * deg[cur]).astype(np.int64)
        cur = graph.indices[graph.indptr[cur] + step].astype(np.int64)
    return cur


def random_walk_positives(graph: Graph, u: int, n_s: int, walk_length: int = 1,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    rng = np.random.default_rng() if rng is None else rng
    if graph.degrees[u] == 0:
        log.warning("node %d is isolated; no positives", u)
        return np.empty(0, dtype=np.int64)
    return walk_endpoints(graph, np.full(n_s, u), walk_length, rng)


def negative_draws(graph: Graph, nodes, n_s: int, rng: np.random.Generator,
                   max_rounds: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """``n_s`` uniform draws from ``V - {u} - N(u)`` for each node; returns ``(u, w)`` arrays.

    Nodes adjacent to everything are skipped.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    ok = graph.n - 1 - graph.degrees[nodes] > 0
    if not ok.all():
        log.debug("%d node(s) have no non-neighbours; no negatives", int((~ok).sum()))
    src = np.repeat(nodes[ok], n_s)
    dst = rng.integers(graph.n, size=len(src))
    bad = (dst == src) | graph.has_edges(src, dst)
    for _ in range(max_rounds):
        if not bad.any():
            break
        idx = np.flatnonzero(bad)
        dst[idx] = rng.integers(graph.n, size=len(idx))
        bad[idx] = (dst[idx] == src[idx]) | graph.has_edges(src[idx], dst[idx])
    for i in np.flatnonzero(bad):
        cand = np.setdiff1d(np.arange(graph.n), np.append(graph.neighbors(src[i]), src[i]))
        dst[i] = cand[rng.integers(len(cand))]
    return src, dst.astype(np.int64)


def random_negatives(graph: Graph, u: int, n_s: int, rng: np.random.Generator | None = None) -> np.ndarray:
    if graph.n < 2:
        raise ValueError("need at least two nodes")
    rng = np.random.default_rng() if rng is None else rng
    return negative_draws(graph, [u], n_s, rng)[1]


# -- state ----------------------------------------------------------------------


@dataclass(eq=False)
class TrainState:
    config: TrainingConfig
    kappa: float
    disc: EmbeddingTable
    gen: EmbeddingTable
    generator: Generator
    rng: np.random.Generator
    epoch: int = 0
    history: list[tuple[int, str, int, float]] = field(default_factory=list)
    ricci: np.ndarray | None = None
    head: torch.nn.Linear | None = None
    opt_d: torch.optim.Optimizer | None = None
    opt_g: torch.optim.Optimizer | None = None

    def d_params(self) -> list[torch.nn.Parameter]:
        return [self.disc.points] + ([] if self.head is None else list(self.head.parameters()))

    def g_params(self) -> list[torch.nn.Parameter]:
        return [self.gen.points] + list(self.generator.parameters())

    def make_optimizers(self) -> None:
        cls = torch.optim.SGD if self.config.optimizer == "sgd" else torch.optim.Adam
        self.opt_d = cls(self.d_params(), lr=self.config.lr_d)
        self.opt_g = cls(self.g_params(), lr=self.config.lr_g)

    def losses(self, phase: str | None = None) -> np.ndarray:
        return np.array([r[3] for r in self.history if phase is None or r[1] == phase])

    def write_losses(self, path) -> None:
        rows = ["epoch,phase,iter,loss"] + [f"{e},{p},{i},{v!r}" for e, p, i, v in self.history]
        store.atomic_write_text(path, "\n".join(rows) + "\n")

    def save(self, path) -> None:
        arrays = {"disc_points": self.disc.points.detach().numpy(),
                  "gen_points": self.gen.points.detach().numpy(),
                  "history_values": np.array([r[3] for r in self.history], dtype=np.float64),
                  "history_index": np.array([[r[0], r[2]] for r in self.history], dtype=np.int64).reshape(-1, 2)}
        for name, p in self.generator.named_parameters():
            arrays[f"generator.{name}"] = p.detach().numpy()
        if self.head is not None:
            for name, p in self.head.named_parameters():
                arrays[f"head.{name}"] = p.detach().numpy()
        if self.ricci is not None:
            arrays["ricci"] = self.ricci
        opt_meta = {}
        for tag, opt in (("opt_d", self.opt_d), ("opt_g", self.opt_g)):
            if opt is None:
                continue
            sd = opt.state_dict()
            keys = {}
            for pid, st in sd["state"].items():
                keys[str(pid)] = {}
                for k, v in st.items():
                    arrays[f"{tag}.{pid}.{k}"] = v.detach().numpy() if torch.is_tensor(v) else np.asarray(v)
                    keys[str(pid)][k] = torch.is_tensor(v)
            opt_meta[tag] = {"param_groups": sd["param_groups"], "state_keys": keys}
        header = {"kind": "train_state", "config": self.config.to_dict(), "kappa": self.kappa,
                  "epoch": self.epoch, "rng": self.rng.bit_generator.state,
                  "phases": "".join(r[1] for r in self.history), "optimizers": opt_meta,
                  "n_classes": None if self.head is None else self.head.out_features}
        store.write_container(path, header, arrays)

    @classmethod
    def load(cls, path) -> "TrainState":
        header, arrays = store.read_container(path)
        if header.get("kind") != "train_state":
            raise store.ContainerError(f"{path}: not a training checkpoint")
        config = TrainingConfig.from_dict(header["config"])
        kappa = header["kappa"]
        generator = Generator(config.dim, config.sigma, config.lam)
        with torch.no_grad():
            for name, p in generator.named_parameters():
                p.copy_(torch.from_numpy(arrays[f"generator.{name}"]))
        head = None
        if header["n_classes"] is not None:
            head = torch.nn.Linear(config.dim, header["n_classes"]).double()
            with torch.no_grad():
                for name, p in head.named_parameters():
                    p.copy_(torch.from_numpy(arrays[f"head.{name}"]))
        bitgen = np.random.PCG64()
        bitgen.state = header["rng"]
        idx, vals = arrays["history_index"], arrays["history_values"]
        history = [(int(e), ph, int(i), float(v)) for (e, i), ph, v in zip(idx, header["phases"], vals)]
        state = cls(config, kappa, EmbeddingTable(arrays["disc_points"], kappa, "discriminator", False),
                    EmbeddingTable(arrays["gen_points"], kappa, "generator", False), generator,
                    np.random.Generator(bitgen), header["epoch"], history, arrays.get("ricci"), head)
        state.make_optimizers()
        for tag in ("opt_d", "opt_g"):
            meta = header["optimizers"].get(tag)
            if meta is None:
                continue
            st = {}
            for pid, keys in meta["state_keys"].items():
                st[int(pid)] = {k: (torch.from_numpy(arrays[f"{tag}.{pid}.{k}"].copy()) if is_t
                                    else arrays[f"{tag}.{pid}.{k}"].item()) for k, is_t in keys.items()}
            getattr(state, tag).load_state_dict({"state": st, "param_groups": meta["param_groups"]})
        return state


# -- training -------------------------------------------------------------------


def resolve_kappa(graph: Graph, config: TrainingConfig) -> float:
    if config.kappa_override is not None:
        return geometry._effective(config.kappa_override)
    est = estimate_global_curvature(graph, config.curvature_samples, config.seed)
    return geometry._effective(est.kappa)


def init_state(graph: Graph, config: TrainingConfig, labels=None, kappa: float | None = None) -> TrainState:
    """Curvature estimate, Ricci map and freshly initialised parameters."""
    kappa = resolve_kappa(graph, config) if kappa is None else kappa
    ricci = ricci_map(graph, config.alpha).values if config.compute_ricci and graph.m else None
    rng = np.random.default_rng(config.seed)
    disc = EmbeddingTable.random(graph.n, config.dim, kappa, rng, config.init_scale, "discriminator")
    gen = EmbeddingTable.random(graph.n, config.dim, kappa, rng, config.init_scale, "generator")
    generator = Generator(config.dim, config.sigma, config.lam, rng=rng)
    head = None
    if labels is not None:
        n_classes = int(np.max(labels)) + 1
        head = torch.nn.Linear(config.dim, n_classes).double()
        from .model import reset_linear
        reset_linear(head, rng)
    state = TrainState(config, kappa, disc, gen, generator, rng, ricci=ricci, head=head)
    state.make_optimizers()
    return state


def ricci_values(state: TrainState, graph: Graph) -> RicciMap | None:
    return None if state.ricci is None else RicciMap(graph, state.ricci, state.config.alpha)


def _positive_pairs(graph, nodes, cfg, rng) -> np.ndarray:
    src = np.repeat(nodes, cfg.n_s)
    return np.stack([src, walk_endpoints(graph, src, cfg.walk_length, rng)], axis=1)


def _classification_loss(state: TrainState, labels, train_idx) -> torch.Tensor:
    pts = state.disc.points[train_idx]
    feats = geometry.log_map(torch.zeros_like(pts), pts, state.kappa)
    return torch.nn.functional.cross_entropy(state.head(feats), torch.as_tensor(labels[train_idx]))


def _guard(state: TrainState, loss: torch.Tensor, phase: str, checkpoint_dir) -> None:
    if torch.isfinite(loss):
        return
    path = None
    if checkpoint_dir is not None:
        path = Path(checkpoint_dir) / "diverged.bin"
        state.save(path)
    raise TrainingDiverged(f"non-finite {phase} loss at epoch {state.epoch}", path)


def train(graph: Graph, config: TrainingConfig, state: TrainState | None = None, labels=None,
          train_idx=None, checkpoint_dir=None, callback: Callable[[TrainState], None] | None = None
          ) -> TrainState:
    """Run (or resume) the alternating optimisation up to ``config.epochs`` epochs.

    With ``labels`` and ``train_idx`` the discriminator additionally fits a linear
    softmax head on tangent features of the labelled nodes, and the link
    objective is weighted by ``config.lp_weight``.
    """
    if graph.m == 0:
        raise ValueError("cannot train on a graph without edges")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        train_idx = np.arange(graph.n) if train_idx is None else np.asarray(train_idx)
    if state is None:
        state = init_state(graph, config, labels)
    cfg, k = state.config, state.kappa
    nodes = _active_nodes(graph)
    fake_nodes = np.repeat(nodes, cfg.n_s)
    rng = state.rng
    while state.epoch < cfg.epochs:
        for it in range(cfg.d_steps):
            pos = _positive_pairs(graph, nodes, cfg, rng)
            neg = np.stack(negative_draws(graph, nodes, cfg.n_s, rng), axis=1)
            with torch.no_grad():
                fakes = generate_fake(fake_nodes, state.generator, state.gen.points, rng, k)
            state.opt_d.zero_grad()
            loss = discriminator_loss(state.disc.points, pos, neg, fake_nodes, fakes, k, cfg.rho, cfg.tau)
            if state.head is not None:
                loss = _classification_loss(state, labels, train_idx) + cfg.lp_weight * loss
            _guard(state, loss, "discriminator", checkpoint_dir)
            loss.backward()
            state.opt_d.step()
            state.disc.project_()
            state.history.append((state.epoch, "D", it, loss.item()))
        for it in range(cfg.g_steps):
            state.opt_g.zero_grad()
            fakes = generate_fake(fake_nodes, state.generator, state.gen.points, rng, k)
            loss = generator_loss(fake_nodes, fakes, state.disc.points.detach(), state.gen.points,
                                  graph, k, cfg.lam, cfg.rho, cfg.tau)
            _guard(state, loss, "generator", checkpoint_dir)
            loss.backward()
            state.opt_g.step()
            state.gen.project_()
            state.history.append((state.epoch, "G", it, loss.item()))
        state.epoch += 1
        if callback is not None:
            callback(state)
    return state


def score_pairs(state: TrainState, pairs) -> np.ndarray:
    """Fermi-Dirac link probabilities from the discriminator embeddings."""
    from .model import fermi_dirac_score

    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    pts = state.disc.points.detach()
    with torch.no_grad():
        return fermi_dirac_score(pts[pairs[:, 0]], pts[pairs[:, 1]], state.kappa,
                                 state.config.rho, state.config.tau).numpy()


# -- gradient checking ----------------------------------------------------------


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    n_coords: int
    tol: float
    worst: tuple[int, int] | None

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def gradient_check(loss_fn: Callable[[], torch.Tensor], params: Sequence[torch.Tensor], n_coords: int = 100,
                   step: float = 1e-5, tol: float = 1e-4, rng: np.random.Generator | None = None,
                   atol: float = 1e-6) -> GradCheckReport:
    """Compare autograd against central differences on random coordinates of ``params``.

    ``loss_fn`` must be deterministic. Relative error is
    ``|g - fd| / max(|g|, |fd|, atol)`` so coordinates with (near) zero
    gradient are compared in absolute terms.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        p.grad = None
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise ValueError("loss is not finite at the given parameters")
    grads = torch.autograd.grad(loss, list(params), allow_unused=True)
    sizes = np.array([p.numel() for p in params])
    flat = rng.choice(sizes.sum(), size=min(n_coords, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst, worst_err = None, 0.0
    for f in flat:
        pi = int(np.searchsorted(offsets, f, side="right") - 1)
        ci = int(f - offsets[pi])
        p = params[pi]
        view = p.data.view(-1)
        orig = view[ci].item()
        with torch.no_grad():
            view[ci] = orig + step
            up = float(loss_fn())
            view[ci] = orig - step
            down = float(loss_fn())
            view[ci] = orig
        fd = (up - down) / (2 * step)
        g = 0.0 if grads[pi] is None else float(grads[pi].reshape(-1)[ci])
        err = abs(g - fd) / max(abs(g), abs(fd), atol)
        if err > worst_err:
            worst, worst_err = (pi, ci), err
    return GradCheckReport(worst_err, len(flat), tol, worst)


def read_losses_csv(path) -> list[tuple[int, str, int, float]]:
    with open(path, newline="") as fh:
        return [(int(r["epoch"]), r["phase"], int(r["iter"]), float(r["loss"])) for r in csv.DictReader(fh)]

"""Generator / discriminator pair on the stereographic model, their losses, and the
tangent-space node classifier."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
import torch
from torch import nn

from . import geometry, store
from .curvature import ricci_regularizer_terms
from .graphdata import Graph
from .sampling import reparameterize, standard_noise

PROB_EPS = 1e-7


class EmbeddingTable(nn.Module):
    """One point per node, stored as an unconstrained parameter and projected after updates."""

    def __init__(self, points, kappa: float, role: str = "discriminator", project: bool = True):
        super().__init__()
        if role not in ("generator", "discriminator"):
            raise ValueError(f"unknown role {role!r}")
        self.role = role
        self.kappa = float(kappa)
        pts = geometry.as_tensor(points).clone()
        # re-projecting a point already on the boundary shell perturbs its last bits
        pts = geometry.project_to_domain(pts, kappa) if project else geometry.check_point(pts, kappa)
        self.points = nn.Parameter(pts)

    @classmethod
    def random(cls, n: int, dim: int, kappa: float, rng: np.random.Generator,
               scale: float = 1e-2, role: str = "discriminator") -> "EmbeddingTable":
        return cls(rng.uniform(-scale, scale, size=(n, dim)), kappa, role)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @torch.no_grad()
    def project_(self) -> None:
        self.points.copy_(geometry.project_to_domain(self.points, self.kappa))

    def tangent_at_origin(self) -> torch.Tensor:
        with torch.no_grad():
            return geometry.log_map(torch.zeros_like(self.points), self.points, self.kappa)

    def to_tsv(self, path, graph: Graph | None = None) -> None:
        pts = self.points.detach().numpy()
        with open(path, "w") as fh:
            for u, row in enumerate(pts):
                name = graph.node_name(u) if graph is not None else str(u)
                fh.write(name + "\t" + "\t".join(repr(float(c)) for c in row) + "\n")

    def save(self, path) -> None:
        header = {"kind": "embeddings", "dim": self.dim, "kappa": self.kappa,
                  "node_count": self.n, "role": self.role}
        store.write_container(path, header, {"points": self.points.detach().numpy()})

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        header, arrays = store.read_container(path)
        if header.get("kind") != "embeddings":
            raise store.ContainerError(f"{path}: not an embedding table")
        pts = arrays["points"]
        if pts.shape != (header["node_count"], header["dim"]):
            raise store.ContainerError(f"{path}: header does not match payload shape {pts.shape}")
        return cls(pts, header["kappa"], header["role"], project=False)


def load_embeddings_tsv(path) -> tuple[list[str], np.ndarray]:
    names, rows = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            names.append(parts[0])
            rows.append([float(c) for c in parts[1:]])
    return names, np.array(rows)


class Generator(nn.Module):
    """Euclidean MLP applied in the tangent space at the node's own embedding."""

    def __init__(self, dim: int, sigma: float = 1.0, lam: float = 1.0, hidden: int | None = None,
                 rng: np.random.Generator | None = None):
        super().__init__()
        hidden = 2 * dim if hidden is None else hidden
        self.sigma = float(sigma)
        self.lam = float(lam)
        self.core = nn.Sequential(nn.Linear(dim, hidden), nn.Tanh(), nn.Linear(hidden, dim)).double()
        if rng is not None:
            reset_linear(self.core, rng)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.core(t)


def reset_linear(module: nn.Module, rng: np.random.Generator) -> None:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init drawn from ``rng`` for reproducibility."""
    with torch.no_grad():
        for layer in module.modules():
            if isinstance(layer, nn.Linear):
                bound = 1.0 / math.sqrt(layer.in_features)
                layer.weight.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(layer.weight.shape))))
                layer.bias.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(layer.bias.shape))))


def mobius_mlp(u: torch.Tensor, z: torch.Tensor, core: Callable, kappa: float) -> torch.Tensor:
    """``exp_u(f(log_u(z)))`` for the perturbed input ``z`` of base point ``u``."""
    out = geometry.exp_map(u, core(geometry.log_map(u, z, kappa)), kappa)
    return geometry.project_to_domain(out, kappa)


def generate_fake(nodes, gen: Generator, points: torch.Tensor, rng: np.random.Generator,
                  kappa: float, eps: torch.Tensor | None = None) -> torch.Tensor:
    """Wrapped-normal perturbation of each node's generator embedding, fed through the Mobius MLP."""
    u = points[np.asarray(nodes)]
    if eps is None:
        eps = standard_noise(rng, tuple(u.shape))
    z = reparameterize(u, gen.sigma, eps, kappa)
    return mobius_mlp(u, z, gen, kappa)


def fermi_dirac_score(a, b, kappa: float, rho: float = 2.0, tau: float = 1.0) -> torch.Tensor:
    """``1 / (exp((d^2 - rho) / tau) + 1)``, computed as a logistic so it saturates cleanly."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    d = geometry.distance(a, b, kappa)
    return torch.sigmoid((rho - d * d) / tau)


def _nlog(p: torch.Tensor) -> torch.Tensor:
    return -torch.log(p.clamp(PROB_EPS, 1 - PROB_EPS))


def discriminator_loss(points: torch.Tensor, pos_pairs, neg_pairs, fake_nodes, fakes: torch.Tensor,
                       kappa: float, rho: float = 2.0, tau: float = 1.0) -> torch.Tensor:
    """Binary cross-entropy over real edges (label 1), sampled non-edges and generated fakes (label 0).

    ``pos_pairs`` / ``neg_pairs`` are ``(m, 2)`` node-index arrays into ``points``;
    ``fakes[i]`` is scored against ``points[fake_nodes[i]]``.
    """
    pos_pairs = np.asarray(pos_pairs, dtype=np.int64).reshape(-1, 2)
    neg_pairs = np.asarray(neg_pairs, dtype=np.int64).reshape(-1, 2)
    if not len(pos_pairs) and not len(neg_pairs):
        raise ValueError("discriminator loss needs positive or negative pairs")
    loss = torch.zeros((), dtype=geometry.DTYPE)
    if len(pos_pairs):
        p = fermi_dirac_score(points[pos_pairs[:, 0]], points[pos_pairs[:, 1]], kappa, rho, tau)
        loss = loss + _nlog(p).mean()
    if len(neg_pairs):
        p = fermi_dirac_score(points[neg_pairs[:, 0]], points[neg_pairs[:, 1]], kappa, rho, tau)
        loss = loss + _nlog(1 - p).mean()
    if len(fakes):
        p = fermi_dirac_score(points[np.asarray(fake_nodes)], fakes, kappa, rho, tau)
        loss = loss + _nlog(1 - p).mean()
    return loss


def generator_loss(fake_nodes, fakes: torch.Tensor, disc_points: torch.Tensor, gen_points: torch.Tensor,
                   graph: Graph, kappa: float, lam: float = 1.0, rho: float = 2.0,
                   tau: float = 1.0) -> torch.Tensor:
    """``mean log(1 - D(u^D, fake_u)) + lam * |sum_u Reg_u|``; minimised by the generator."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    fake_nodes = np.asarray(fake_nodes, dtype=np.int64)
    p = fermi_dirac_score(disc_points[fake_nodes], fakes, kappa, rho, tau)
    adv = torch.log((1 - p).clamp(PROB_EPS, 1 - PROB_EPS)).mean()
    if lam == 0:
        return adv
    reg = ricci_regularizer_terms(fake_nodes, fakes, gen_points, graph, kappa)
    return adv + lam * reg.sum().abs()


class ClassificationError(ValueError):
    pass


def tangent_features(points, kappa: float) -> np.ndarray:
    """``log_0`` of every embedding: Euclidean features for downstream classifiers."""
    pts = geometry.as_tensor(points).detach()
    return geometry.log_map(torch.zeros_like(pts), pts, kappa).numpy()


def fit_logistic(features, labels, train_idx, test_idx, l2: float = 1.0, max_iter: int = 2000):
    """Multinomial logistic regression with an L2 penalty; ``l2`` is the inverse strength.

    Returns ``(pred, proba)`` for ``test_idx``.
    """
    from sklearn.linear_model import LogisticRegression

    labels = np.asarray(labels)
    train_idx, test_idx = np.asarray(train_idx), np.asarray(test_idx)
    if len(np.unique(labels[train_idx])) < 2:
        raise ClassificationError("training labels contain a single class")
    clf = LogisticRegression(C=l2, max_iter=max_iter, tol=1e-8)
    clf.fit(features[train_idx], labels[train_idx])
    return clf.predict(features[test_idx]), clf.predict_proba(features[test_idx])


def classify_nodes(points, labels, train_idx, test_idx, kappa: float, l2: float = 1.0,
                   max_iter: int = 2000):
    """Logistic regression on tangent features at the origin; see :func:`fit_logistic`."""
    return fit_logistic(tangent_features(points, kappa), labels, train_idx, test_idx, l2, max_iter)

"""Operations of the kappa-stereographic model of constant curvature.

Points are stored as ``(..., d)`` float64 tensors. A negative curvature gives
the Poincare ball of radius ``1/sqrt(-k)``, zero gives Euclidean space, and a
positive curvature gives the stereographic projection of a sphere. The scaled
tangent ``tan_k`` absorbs every ``sqrt(|k|)`` factor, so the distance is
``2 * arctan_k(|-x (+) y|)`` for every sign of ``k``.
"""

from __future__ import annotations

import math

import torch

DTYPE = torch.float64
EUCLIDEAN_TOL = 1e-10
BOUNDARY_EPS = 1e-5
MIN_NORM = 1e-15
SINGULAR_TOL = 1e-15


class GeometryError(ValueError):
    pass


class DomainError(GeometryError):
    """A coordinate vector lies outside ``{x : -k |x|^2 < 1}`` or is not finite."""


class SingularPairError(GeometryError):
    """Mobius addition hit the antipodal singularity of a positively curved model."""


def as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=DTYPE)


def _effective(k: float) -> float:
    k = float(k)
    if not math.isfinite(k):
        raise GeometryError(f"curvature must be finite, got {k}")
    return 0.0 if abs(k) < EUCLIDEAN_TOL else k


def _sqnorm(x: torch.Tensor) -> torch.Tensor:
    return (x * x).sum(dim=-1, keepdim=True)


def _norm(x: torch.Tensor) -> torch.Tensor:
    # clamped so that d|x|/dx stays finite at the origin
    return _sqnorm(x).clamp_min(MIN_NORM**2).sqrt()


def radius(k: float) -> float:
    """Radius of the coordinate domain (``inf`` for ``k >= 0``)."""
    k = _effective(k)
    return 1.0 / math.sqrt(-k) if k < 0 else math.inf


def check_point(x: torch.Tensor, k: float) -> torch.Tensor:
    x = as_tensor(x)
    if not torch.isfinite(x).all():
        raise DomainError("non-finite coordinates")
    k = _effective(k)
    if k < 0 and bool((-k * _sqnorm(x) >= 1.0).any()):
        raise DomainError(f"point outside the ball of radius {radius(k):.6g}")
    return x


def project_to_domain(x, k: float, eps: float = BOUNDARY_EPS) -> torch.Tensor:
    """Pull points with ``|x| >= (1 - eps) * radius`` back onto that shell."""
    x = as_tensor(x)
    if not torch.isfinite(x).all():
        raise DomainError("non-finite coordinates")
    k = _effective(k)
    if k >= 0:
        return x
    max_norm = (1.0 - eps) / math.sqrt(-k)
    norm = _norm(x)
    return torch.where(norm >= max_norm, x / norm * max_norm, x)


def conformal_factor(x, k: float, keepdim: bool = False) -> torch.Tensor:
    """``2 / (1 + k |x|^2)``."""
    x = check_point(x, k)
    lam = 2.0 / (1.0 + _effective(k) * _sqnorm(x))
    return lam if keepdim else lam.squeeze(-1)


def tan_k(u, k: float) -> torch.Tensor:
    u = as_tensor(u)
    k = _effective(k)
    if k == 0:
        return u
    s = math.sqrt(abs(k))
    return (torch.tan(s * u) if k > 0 else torch.tanh(s * u)) / s


def arctan_k(u, k: float) -> torch.Tensor:
    u = as_tensor(u)
    k = _effective(k)
    if k == 0:
        return u
    s = math.sqrt(abs(k))
    if k > 0:
        return torch.atan(s * u) / s
    if bool((s * u.abs() >= 1.0).any()):
        raise DomainError(f"arctan_k argument outside (-{1 / s:.6g}, {1 / s:.6g})")
    return torch.atanh(s * u) / s


def _arctan_k_clamped(n: torch.Tensor, k: float) -> torch.Tensor:
    # n is |-x (+) y| for validated x, y; rounding can push it onto the boundary
    if k < 0:
        n = n.clamp_max((1.0 - 1e-15) / math.sqrt(-k))
    return arctan_k(n, k)


def _mobius_add(x: torch.Tensor, y: torch.Tensor, k: float) -> torch.Tensor:
    x2, y2 = _sqnorm(x), _sqnorm(y)
    xy = (x * y).sum(dim=-1, keepdim=True)
    num = (1.0 - 2.0 * k * xy - k * y2) * x + (1.0 + k * x2) * y
    den = 1.0 - 2.0 * k * xy + k * k * x2 * y2
    if bool((den.abs() < SINGULAR_TOL).any()):
        raise SingularPairError("mobius addition of an antipodal pair")
    return num / den


def mobius_add(x, y, k: float, project: bool = True) -> torch.Tensor:
    """Gyrovector addition ``x (+)_k y``; reduces to ``x + y`` at ``k = 0``."""
    k = _effective(k)
    out = _mobius_add(as_tensor(x), as_tensor(y), k)
    return project_to_domain(out, k) if project else out


def distance(x, y, k: float, keepdim: bool = False) -> torch.Tensor:
    k = _effective(k)
    x, y = check_point(x, k), check_point(y, k)
    # |-x (+) y|^2 = |x - y|^2 / (1 + 2k<x,y> + k^2 |x|^2 |y|^2), cheaper than the full addition
    den = 1.0 + 2.0 * k * (x * y).sum(dim=-1, keepdim=True) + k * k * _sqnorm(x) * _sqnorm(y)
    if bool((den.abs() < SINGULAR_TOL).any()):
        raise SingularPairError("distance to an antipodal point")
    d = 2.0 * _arctan_k_clamped(_norm(x - y) / den.sqrt(), k)
    return d if keepdim else d.squeeze(-1)


def exp_map(x, v, k: float) -> torch.Tensor:
    """Map the tangent vector ``v`` at ``x`` onto the manifold; ``exp_x(0) = x``."""
    k = _effective(k)
    x, v = check_point(x, k), as_tensor(v)
    if not torch.isfinite(v).all():
        raise DomainError("non-finite tangent vector")
    lam = 2.0 / (1.0 + k * _sqnorm(x))
    vn = _norm(v)
    step = tan_k(lam * vn / 2.0, k) * v / vn
    if k < 0:
        # tanh saturates to exactly 1 for long vectors
        step = project_to_domain(step, k, eps=1e-15)
    return project_to_domain(_mobius_add(x, step, k), k)


def log_map(x, y, k: float) -> torch.Tensor:
    """Tangent vector at ``x`` pointing to ``y``; ``log_x(x) = 0``."""
    k = _effective(k)
    x, y = check_point(x, k), check_point(y, k)
    lam = 2.0 / (1.0 + k * _sqnorm(x))
    w = _mobius_add(-x, y, k)
    wn = _norm(w)
    return (2.0 / lam) * _arctan_k_clamped(wn, k) * w / wn


class Stereographic:
    """Curvature ``k`` bundled with the model's operations."""

    def __init__(self, kappa: float):
        self.kappa = _effective(kappa)

    def __repr__(self) -> str:
        return f"Stereographic(kappa={self.kappa:g})"

    @property
    def radius(self) -> float:
        return radius(self.kappa)

    def origin(self, dim: int) -> torch.Tensor:
        return torch.zeros(dim, dtype=DTYPE)

    def lam(self, x, keepdim: bool = False):
        return conformal_factor(x, self.kappa, keepdim)

    def add(self, x, y, project: bool = True):
        return mobius_add(x, y, self.kappa, project)

    def dist(self, x, y, keepdim: bool = False):
        return distance(x, y, self.kappa, keepdim)

    def expmap(self, x, v):
        return exp_map(x, v, self.kappa)

    def logmap(self, x, y):
        return log_map(x, y, self.kappa)

    def expmap0(self, v):
        return exp_map(torch.zeros_like(as_tensor(v)), v, self.kappa)

    def logmap0(self, y):
        return log_map(torch.zeros_like(as_tensor(y)), y, self.kappa)

    def proj(self, x, eps: float = BOUNDARY_EPS):
        return project_to_domain(x, self.kappa, eps)

    def check(self, x):
        return check_point(x, self.kappa)

"""Independent numerical ground truth on 1-D grids.

Everything here is deliberately simple: composite trapezoid quadrature,
softmax on a grid, and central finite differences. The rest of the package
is checked against these functions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from . import autodiff  # noqa: F401  (float64)

Fn = Callable[[jax.Array], jax.Array]  # vectorized: (n,) -> (n,)


@dataclass(frozen=True)
class Grid1D:
    lower: float = -1.0 + 1e-4
    upper: float = 1.0 - 1e-4
    n: int = 4001

    def __post_init__(self):
        if self.n < 3 or self.n % 2 == 0:
            raise ValueError(f"grid needs an odd point count >= 3, got {self.n}")
        if not self.upper > self.lower:
            raise ValueError("upper must exceed lower")

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / (self.n - 1)

    @property
    def points(self) -> jax.Array:
        return jnp.linspace(self.lower, self.upper, self.n, dtype=jnp.float64)

    @property
    def weights(self) -> jax.Array:
        w = jnp.full((self.n,), self.spacing, jnp.float64)
        return w.at[0].set(self.spacing / 2).at[-1].set(self.spacing / 2)

    def refine(self) -> "Grid1D":
        """Same interval, half the spacing."""
        return Grid1D(self.lower, self.upper, 2 * self.n - 1)

    def integrate(self, values) -> jax.Array:
        return jnp.sum(self.weights * jnp.asarray(values))


def boltzmann_on_grid(q) -> jax.Array:
    """``exp(q) / sum exp(q)`` with max subtraction."""
    q = jnp.asarray(q, jnp.float64)
    z = jnp.exp(q - jnp.max(q))
    return z / jnp.sum(z)


def score_fn(log_density: Callable) -> Fn:
    """Vectorized ``d/dx log_density(x)`` of a scalar function, by autodiff."""
    return jax.vmap(jax.grad(lambda x: jnp.squeeze(log_density(x))))


def normalized_density(log_density: Fn, grid: Grid1D) -> jax.Array:
    """Grid values of ``exp(log_density)`` rescaled to integrate to one."""
    lp = log_density(grid.points)
    p = jnp.exp(lp - jnp.max(lp))
    return p / grid.integrate(p)


def fisher_divergence_quadrature(p_score: Fn, q_score: Fn, p_density: Fn, grid: Grid1D) -> float:
    """``E_p[(score_p - score_q)^2]`` by the trapezoid rule.

    ``p_density`` may be unnormalized; it is normalized on the grid.
    """
    x = grid.points
    p = jnp.asarray(p_density(x))
    p = p / grid.integrate(p)
    diff = p_score(x) - q_score(x)
    return float(grid.integrate(p * diff ** 2))


def kl_divergence_quadrature(log_p: Fn, log_q: Fn, grid: Grid1D) -> float:
    """``KL(p || q)`` with both densities normalized on the grid."""
    x = grid.points
    lp, lq = log_p(x), log_q(x)
    lp = lp - jnp.log(grid.integrate(jnp.exp(lp - jnp.max(lp)))) - jnp.max(lp)
    lq = lq - jnp.log(grid.integrate(jnp.exp(lq - jnp.max(lq)))) - jnp.max(lq)
    return float(grid.integrate(jnp.exp(lp) * (lp - lq)))


def fisher_identity_sides(offset: Callable, log_mu: Callable, grid: Grid1D = Grid1D()) -> tuple[float, float]:
    """Both sides of the gradient-penalty reduction for scalar ``offset`` and ``log_mu``.

    (i) Fisher divergence from the grid Boltzmann policy of ``offset + log_mu``
    to ``mu``, with scores from autodiff; (ii) ``E_ebm[offset'(a)^2]``.
    """
    x = grid.points
    o_vec = jax.vmap(lambda a: jnp.squeeze(offset(a)))
    lm_vec = jax.vmap(lambda a: jnp.squeeze(log_mu(a)))
    q_vals = o_vec(x) + lm_vec(x)
    ebm = boltzmann_on_grid(q_vals) / grid.spacing  # density up to the trapezoid normalization
    ebm_fn = lambda pts: ebm
    s_offset = score_fn(offset)
    s_mu = score_fn(log_mu)
    s_ebm = lambda pts: s_offset(pts) + s_mu(pts)
    lhs = fisher_divergence_quadrature(s_ebm, s_mu, ebm_fn, grid)
    p = ebm / grid.integrate(ebm)
    rhs = float(grid.integrate(p * s_offset(x) ** 2))
    return lhs, rhs


def fisher_identity_check(offset: Callable, log_mu: Callable, grid: Grid1D = Grid1D()) -> float:
    """``|(i) - (ii)|`` from :func:`fisher_identity_sides`."""
    lhs, rhs = fisher_identity_sides(offset, log_mu, grid)
    return abs(lhs - rhs)


def finite_diff_grad(f: Callable, x, step: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(f(x))
        flat[i] = orig - step
        down = float(f(x))
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return g


def relative_error(a, b, floor: float = 1e-8) -> float:
    """``max|a - b| / max(max|b|, floor)``."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), floor))


def density_mass(log_density: Fn, grid: Grid1D) -> float:
    """Trapezoid integral of ``exp(log_density)``, with no renormalization."""
    return float(grid.integrate(jnp.exp(log_density(grid.points))))


def mixture_marginal(params, dim: int):
    """1-D marginal of a diagonal squashed mixture for one unbatched state.

    Components factorize across action dimensions, so the marginal keeps the
    weights and drops the other coordinates.
    """
    from .distributions import MixtureParams

    return MixtureParams(params.logits, params.means[..., dim:dim + 1], params.log_stds[..., dim:dim + 1])


def fitted_mass_residuals(behavior, states, grid: Grid1D = Grid1D(-1 + 1e-9, 1 - 1e-9, 100_001)) -> np.ndarray:
    """``|mass - 1|`` of every 1-D marginal at every state, or of a Laplace fit."""
    from .distributions import LaplaceParams, log_prob

    if isinstance(behavior, LaplaceParams):
        return np.array([abs(density_mass(lambda a: log_prob(behavior, a), grid) - 1.0)])
    dist = behavior.dist(jnp.asarray(states))
    out = []
    for i in range(np.shape(states)[0]):
        one = jax.tree_util.tree_map(lambda x: x[i], dist)
        for d in range(one.means.shape[-1]):
            marg = mixture_marginal(one, d)
            out.append(abs(density_mass(lambda a: log_prob(marg, a[:, None]), grid) - 1.0))
    return np.asarray(out)

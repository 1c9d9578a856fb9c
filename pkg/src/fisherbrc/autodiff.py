"""Reverse-mode differentiation, MLPs and Adam on top of JAX.

Parameter sets are nested dicts of float64 arrays (JAX pytrees). Graph nodes
are JAX values; anything returned by :func:`grad` can be differentiated
again, which is what the action-gradient penalty needs.
"""
from __future__ import annotations

from typing import Any, Callable, NamedTuple, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from jax.extend import core as jcore

jax.config.update("jax_enable_x64", True)

ParameterSet = dict


class NonFiniteError(FloatingPointError):
    """A forward evaluation or an update produced NaN or inf."""


class ShapeError(ValueError):
    pass


# -- graph evaluation -------------------------------------------------------

def _check_finite(name: str, values: Sequence[Any]) -> None:
    for v in values:
        arr = np.asarray(v)
        if arr.dtype.kind in "fc" and not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value produced by op '{name}'")


def _eval_checked(jaxpr, consts, args):
    env = {}

    def read(var):
        if isinstance(var, jcore.Literal):
            return var.val
        return env[var]

    for var, val in zip(jaxpr.constvars, consts):
        env[var] = val
    for var, val in zip(jaxpr.invars, args):
        env[var] = val
    for eqn in jaxpr.eqns:
        invals = [read(v) for v in eqn.invars]
        inner = eqn.params.get("jaxpr", eqn.params.get("call_jaxpr"))
        if isinstance(inner, jcore.ClosedJaxpr):
            outvals = _eval_checked(inner.jaxpr, inner.consts, invals)
        else:
            subfuns, bind_params = eqn.primitive.get_bind_params(eqn.params)
            outvals = eqn.primitive.bind(*subfuns, *invals, **bind_params)
            if not eqn.primitive.multiple_results:
                outvals = [outvals]
            _check_finite(eqn.primitive.name, outvals)
        for var, val in zip(eqn.outvars, outvals):
            env[var] = val
    return [read(v) for v in jaxpr.outvars]


def forward(fn: Callable, *args):
    """Evaluate ``fn(*args)`` op by op, raising on the first non-finite value.

    The error message names the primitive that produced it. Use this for
    diagnostics; training loops call the compiled function directly.
    """
    _check_finite("input", jax.tree_util.tree_leaves(args))
    closed = jax.make_jaxpr(fn)(*args)
    flat_args = jax.tree_util.tree_leaves(args)
    out = _eval_checked(closed.jaxpr, closed.consts, flat_args)
    out_tree = jax.tree_util.tree_structure(jax.eval_shape(fn, *args))
    return jax.tree_util.tree_unflatten(out_tree, out)


def grad(fn: Callable, argnums: int | Sequence[int] = 0) -> Callable:
    """Gradient of a scalar-valued ``fn``; the result is itself differentiable."""
    g = jax.grad(fn, argnums=argnums)

    def wrapped(*args):
        out = jax.eval_shape(fn, *args)
        if getattr(out, "shape", None) != ():
            raise ShapeError(f"grad needs a scalar root, got shape {getattr(out, 'shape', None)}")
        return g(*args)

    return wrapped


# -- parameter sets ---------------------------------------------------------

def param_count(params: ParameterSet) -> int:
    return sum(int(np.size(x)) for x in jax.tree_util.tree_leaves(params))


def flatten_params(params: ParameterSet, prefix: str = "") -> dict[str, np.ndarray]:
    """Nested dict -> ``{"a/b/c": array}`` with keys in sorted order."""
    flat = {}
    for key in sorted(params):
        value = params[key]
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten_params(value, name + "/"))
        else:
            flat[name] = np.asarray(value, dtype=np.float64)
    return flat


def unflatten_params(flat: dict[str, np.ndarray]) -> ParameterSet:
    params: dict = {}
    for name, value in flat.items():
        node = params
        *parents, leaf = name.split("/")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = jnp.asarray(value, dtype=jnp.float64)
    return params


def affine_update(params: ParameterSet, direction: ParameterSet, scale: float) -> ParameterSet:
    """``params + scale * direction`` elementwise."""
    return jax.tree_util.tree_map(lambda p, d: p + scale * d, params, direction)


def polyak(target: ParameterSet, online: ParameterSet, tau: float) -> ParameterSet:
    return jax.tree_util.tree_map(lambda t, o: (1.0 - tau) * t + tau * o, target, online)


def all_finite(tree) -> jax.Array:
    leaves = jax.tree_util.tree_leaves(tree)
    return jnp.all(jnp.stack([jnp.all(jnp.isfinite(x)) for x in leaves]))


# -- MLPs -------------------------------------------------------------------

_ACTIVATIONS = {
    "relu": jax.nn.relu,
    "tanh": jnp.tanh,
    "none": lambda x: x,
}


def init_mlp(key: jax.Array, sizes: Sequence[int], zero_final: bool = False,
             final_scale: float | None = None) -> ParameterSet:
    """Uniform fan-in init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.

    ``zero_final`` zeroes the output layer; ``final_scale`` overrides its
    uniform bound instead.
    """
    params = {}
    n_layers = len(sizes) - 1
    keys = jax.random.split(key, n_layers)
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        last = i == n_layers - 1
        if last and final_scale is not None:
            bound = final_scale
        kw, kb = jax.random.split(keys[i])
        w = jax.random.uniform(kw, (fan_in, fan_out), jnp.float64, -bound, bound)
        b = jax.random.uniform(kb, (fan_out,), jnp.float64, -bound, bound)
        if last and zero_final:
            w, b = jnp.zeros_like(w), jnp.zeros_like(b)
        params[f"w{i}"] = w
        params[f"b{i}"] = b
    return params


def mlp_layers(params: ParameterSet) -> int:
    return sum(1 for k in params if k.startswith("w"))


def mlp_apply(params: ParameterSet, x, activation: str = "relu"):
    """Apply an MLP; hidden layers use ``activation``, the output is linear."""
    x = jnp.asarray(x)
    n = mlp_layers(params)
    if n == 0:
        raise ShapeError("empty parameter set")
    if x.shape[-1] != params["w0"].shape[0]:
        raise ShapeError(f"input dim {x.shape[-1]} does not match layer 0 fan-in {params['w0'].shape[0]}")
    act = _ACTIVATIONS[activation]
    for i in range(n):
        x = x @ params[f"w{i}"] + params[f"b{i}"]
        if i < n - 1:
            x = act(x)
    return x


# -- Adam -------------------------------------------------------------------

class AdamState(NamedTuple):
    step: jax.Array
    mu: ParameterSet
    nu: ParameterSet


def adam_init(params: ParameterSet) -> AdamState:
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return AdamState(jnp.zeros((), jnp.int64), zeros, zeros)


def adam_update(params: ParameterSet, grads: ParameterSet, state: AdamState, lr,
                b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
    """Pure Adam step (safe under ``jit``); returns ``(params, state)``."""
    step = state.step + 1
    mu = jax.tree_util.tree_map(lambda m, g: b1 * m + (1 - b1) * g, state.mu, grads)
    nu = jax.tree_util.tree_map(lambda v, g: b2 * v + (1 - b2) * g * g, state.nu, grads)
    c1 = 1 - b1 ** step
    c2 = 1 - b2 ** step
    new = jax.tree_util.tree_map(
        lambda p, m, v: (p - lr * (m / c1) / (jnp.sqrt(v / c2) + eps)).astype(p.dtype),
        params, mu, nu)
    return new, AdamState(step, mu, nu)


def adam_step(params: ParameterSet, grads: ParameterSet, state: AdamState, lr,
              b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
    """Eager Adam step that refuses non-finite gradients."""
    if not bool(all_finite(grads)):
        raise NonFiniteError("non-finite gradient passed to adam_step")
    return adam_update(params, grads, state, lr, b1, b2, eps)

"""Numerical checks behind the offset critic, on random 1-D examples."""
import jax
import jax.numpy as jnp
import numpy as np

from fisherbrc.autodiff import init_mlp, mlp_apply
from fisherbrc.baselines import cql_kl_gradient_residual, cql_kl_identity_check
from fisherbrc.distributions import MixtureParams, log_prob
from fisherbrc.oracles import fisher_identity_sides

k = jax.random.split(jax.random.PRNGKey(0), 2)
net = init_mlp(k[0], [1, 32, 32, 1])
offset = lambda a: mlp_apply(net, jnp.reshape(a, (1,)), "tanh")[0]
mix = MixtureParams(jnp.zeros(3), jnp.array([[-0.5], [0.0], [0.6]]), jnp.full((3, 1), -1.5))
log_mu = lambda a: log_prob(mix, jnp.reshape(a, (1,)))

lhs, rhs = fisher_identity_sides(offset, log_mu)
print(f"Fisher divergence to mu   {lhs:.12f}")
print(f"E[offset'(a)^2]           {rhs:.12f}")

rng = np.random.default_rng(0)
q, mu = rng.normal(size=50), rng.dirichlet(np.ones(50))
print(f"KL expansion residual     {cql_kl_identity_check(q, mu):.2e}")
print(f"KL gradient residual      {cql_kl_gradient_residual(q, mu):.2e}")

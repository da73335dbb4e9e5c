"""
The score-function estimator on a two-armed bandit
==================================================

With logits theta and rewards (1, 0) the expected reward is pi_0, whose
gradient is known in closed form.  The sampled estimate should land on it,
and a constant reward should give zero in expectation.
"""

import numpy as np

from dgvqa.agent import PolicyAgent
from dgvqa.dataset import McqItem
from dgvqa.kernel import Rng, softmax, zeros_dense
from dgvqa.reinforce import reinforce_step


class Table:
    """Reward depends on the action only."""

    def __init__(self, r):
        self.r = np.asarray(r, float)

    def rewards(self, items, actions):
        return self.r[np.asarray(actions)]


# zero weights, so the logits are just the output bias
theta = np.array([0.3, -0.2])
params = zeros_dense(2, 2, 2)
params.b2[:] = theta
agent = PolicyAgent(params, 1, 1, "bandit", dropout_p=0.0)
item = McqItem("x", "what", ["x"], np.zeros(1), 0, (1, 2, 3), np.zeros(1))

pi = softmax(theta)
exact = np.array([-pi[0] * pi[1], pi[0] * pi[1]])  # d(-E[R])/d theta
for n in (100, 1_000, 10_000, 100_000):
    est = reinforce_step(agent, Table([1, 0]), [item], n, Rng(n)).grads.b2
    print(f"n={n:>6}  estimate {est}  exact {exact}  max rel err {np.max(np.abs(est - exact) / np.abs(exact)):.4f}")

# the same reward for every action: the estimate is pure noise around zero
est = reinforce_step(agent, Table([2, 2]), [item], 100_000, Rng(0)).grads.b2
print("constant reward:", est)

"""REINFORCE on a 3-arm bandit: Monte Carlo vs exact gradient, then ascent."""
import numpy as np

from advrand import policy as P

rewards = np.array([1.0, 2.0, 4.0])
pi = P.PolicyState(np.array([0.4, -0.3, 0.1]))
rng = np.random.default_rng(0)

est = np.array([P.reinforce_grad(pi, d, rewards[[x.cell for x in d]], baseline=0.0)
                for d in (P.sample(pi, rng, 4) for _ in range(20_000))])
print("exact   ", np.round(P.expected_gradient(pi, rewards), 4))
print("estimate", np.round(est.mean(axis=0), 4), "+/-", np.round(est.std(axis=0) / np.sqrt(len(est)), 4))

for it in range(300):
    draws = P.sample(pi, rng, 8)
    r = rewards[[d.cell for d in draws]]
    pi = P.policy_step(pi, P.reinforce_grad(pi, draws, r), 0.2)
    pi = P.update_baseline(pi, r)
print("after 300 steps p =", np.round(pi.probs(), 3), "baseline", round(pi.baseline, 3))

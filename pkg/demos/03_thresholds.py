"""How skewed output distributions change the match threshold, and how far
the normal approximation is from the exact Poisson-binomial tail."""

import numpy as np

import chainmarks as cm

L = 100
labels = cm.LabelSequence(10, tuple(i % 10 for i in range(L)))

uniform = cm.ClassDistribution.from_probs(np.full(10, 0.1))
skewed = cm.ClassDistribution.from_probs([0.55, 0.2, 0.1, 0.05, 0.04, 0.03, 0.02, 0.005, 0.004, 0.001])
# every class used equally often, so only the spread of p matters here
print(" p-value   uniform m_min   skewed m_min")
for p in (1e-2, 1e-4, 1e-7, 1e-10):
    a = cm.decide_threshold(uniform, labels, p)
    b = cm.decide_threshold(skewed, labels, p)
    print(f"{p:8.0e}   {a.m_min:13d}   {b.m_min:12d}")

# a signature dominated by the popular class is easier to guess
heavy = cm.LabelSequence(10, (0,) * 50 + tuple(i % 10 for i in range(50)))
print("labels half class 0, skewed model:", cm.decide_threshold(skewed, heavy, 1e-7).m_min)

# normal approximation vs exact, at two lengths
for n in (20, 200):
    lab = cm.LabelSequence(10, tuple(i % 10 for i in range(n)))
    exact = cm.exact_tails(skewed, lab)
    approx = cm.normal_tails(skewed, lab)
    ok = exact >= 1e-6
    print(f"L={n:3d}: worst |normal - exact| = {np.max(np.abs(approx - exact)[ok]):.4f}")

t1 = cm.decide_threshold(uniform, labels, 1e-4)
t2 = cm.decide_threshold(uniform, labels, 1e-7)
u = cm.marginal_utility(1e-4, 1 - t1.theta, 1e-7, 1 - t2.theta)
print(f"raising required accuracy {1 - t1.theta:.2f} -> {1 - t2.theta:.2f} buys a factor {u:.3g} per unit")

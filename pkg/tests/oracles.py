"""Independent scalar reference implementations used as test oracles."""

import math


def lifted_loss_scalar(points, labels, alpha):
    """Direct loop evaluation of the lifted structured loss."""
    n = len(points)

    def dist(a, b):
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(points[a], points[b])))

    positives = [(i, j) for i in range(n) for j in range(i + 1, n) if labels[i] == labels[j]]
    if not positives:
        return 0.0
    total = 0.0
    for i, j in positives:
        terms = [math.exp(alpha - dist(i, k)) for k in range(n) if labels[k] != labels[i]]
        terms += [math.exp(alpha - dist(j, k)) for k in range(n) if labels[k] != labels[j]]
        if not terms:
            continue
        value = math.log(sum(terms)) + dist(i, j)
        total += max(0.0, value) ** 2
    return total / (2 * len(positives))


def gaussian_log_density(x, mean, var):
    return sum(-0.5 * math.log(2 * math.pi * v) - 0.5 * (xi - m) ** 2 / v for xi, m, v in zip(x, mean, var))

"""Brute-force reference implementations used only by the tests.

Nothing here imports from hierprompt; each oracle recomputes its quantity the
slow, obvious way so the library can be checked against it.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def oracle_metrics(preds, targets):
    """(P, R, IoU, F1) in percent by explicit counting, exact rationals throughout."""
    n = len(targets)
    p_tot = r_tot = j_tot = Fraction(0)
    for pred, gt in zip(preds, targets):
        pred, gt = list(dict.fromkeys(pred)), list(dict.fromkeys(gt))
        hit = 0
        for lab in pred:
            if lab in gt:
                hit += 1
        union = len(gt)
        for lab in pred:
            if lab not in gt:
                union += 1
        p_tot += Fraction(hit, len(pred)) if len(pred) > 0 else Fraction(0)
        r_tot += Fraction(hit, len(gt))
        j_tot += Fraction(hit, union)
    P, R, J = p_tot / n, r_tot / n, j_tot / n
    F = Fraction(0) if P + R == 0 else 2 * P * R / (P + R)
    return tuple(float(100 * x) for x in (P, R, J, F))


def oracle_grad(loss_fn, params, h=1e-5):
    """Central finite differences of a scalar ``loss_fn()`` w.r.t. each entry of ``params``.

    ``params`` are float64 arrays (numpy or torch) perturbed in place and restored.
    """
    grads = []
    for arr in params:
        view = arr.detach().numpy() if hasattr(arr, "detach") else arr
        if view.dtype != np.float64:
            raise TypeError("finite differences need 64-bit parameters")
        g = np.zeros_like(view)
        flat, gflat = view.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn())
            flat[i] = orig - h
            down = float(loss_fn())
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise FloatingPointError("non-finite loss during finite differences")
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def oracle_asl(p, y, gamma_pos=1.0, gamma_neg=2.0, margin=0.05, eps=1e-8):
    """Asymmetric loss, element by element in plain floats, averaged over all entries."""
    total, count = 0.0, 0
    for p_row, y_row in zip(np.atleast_2d(p), np.atleast_2d(y)):
        for pi, yi in zip(p_row, y_row):
            pi = float(pi)
            if yi == 1:
                term = (1 - pi) ** gamma_pos * -math.log(max(pi, eps))
            else:
                shifted = pi - margin if pi > margin else 0.0
                term = shifted ** gamma_neg * -math.log(max(1 - shifted, eps))
            total += term
            count += 1
    return total / count


def oracle_nearest_prototype(features, prototypes, labels, cutoff=0.9):
    """Per region, the cosine-nearest prototype; keep it when the cosine clears ``cutoff``."""
    found = set()
    for region in features:
        norm = math.sqrt(sum(float(x) * float(x) for x in region))
        if norm == 0:
            continue
        best, best_cos = None, -2.0
        for lab, proto in zip(labels, prototypes):
            pn = math.sqrt(sum(float(x) * float(x) for x in proto))
            cos = sum(float(a) * float(b) for a, b in zip(region, proto)) / (norm * pn)
            if cos > best_cos:
                best, best_cos = lab, cos
        if best_cos >= cutoff:
            found.add(best)
    return found

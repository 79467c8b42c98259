"""Central-difference gradient verification for scalar losses."""

import numpy as np


def central_difference(f, param, flat_index, eps):
    """Two-sided difference of the scalar loss f() along one coordinate."""
    flat = param.data.reshape(-1)
    orig = float(flat[flat_index])
    flat[flat_index] = orig + eps
    plus = float(f().data)
    flat[flat_index] = orig - eps
    minus = float(f().data)
    flat[flat_index] = orig
    return (plus - minus) / (2.0 * eps)


def finite_difference_check(
    f, params, eps=1e-5, max_coords_per_param=None, rng=None, analytic=None, atol=0.0
):
    """Compare analytic gradients of f against central differences.

    Args:
        f: nullary callable returning a scalar Tensor; closes over params.
        params: dict of name -> Tensor leaves to check.
        eps: perturbation half-width, or a sequence of them. With several,
            a coordinate is scored by its best-agreeing width — truncation
            error grows with eps while cancellation noise shrinks, so no
            single width suits both stiff and nearly-flat coordinates.
        max_coords_per_param: if set, check a random subset of coordinates
            per parameter (rng required); otherwise every coordinate.
        analytic: optional precomputed {name: gradient array}; when omitted
            the check runs f, calls backward, and snapshots the gradients.
        atol: absolute floor added to the relative-error denominator, so
            near-zero coordinates (below the difference scheme's own noise)
            do not dominate the report. Zero keeps the strict ratio.

    Returns a report dict with the worst relative error overall and per
    parameter. Relative error is |a - c| / (|a| + |c| + atol + 1e-12).
    """
    eps_list = (eps,) if np.isscalar(eps) else tuple(eps)
    if analytic is None:
        for p in params.values():
            p.ensure_grad_buffer()
            p.grad[...] = 0.0
        loss = f()
        loss.backward()
        analytic = {name: p.grad.copy() for name, p in params.items()}

    report = {"max_rel_err": 0.0, "per_param": {}, "n_coords": 0}
    for name, p in params.items():
        grad = analytic[name].reshape(-1)
        n = grad.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            idxs = np.sort(rng.choice(n, size=max_coords_per_param, replace=False))
        else:
            idxs = np.arange(n)
        worst = 0.0
        for i in idxs:
            a = float(grad[i])
            rel = np.inf
            for e in eps_list:
                c = central_difference(f, p, int(i), e)
                rel = min(rel, abs(a - c) / (abs(a) + abs(c) + atol + 1e-12))
            if rel > worst:
                worst = rel
        report["per_param"][name] = worst
        report["n_coords"] += len(idxs)
        if worst > report["max_rel_err"]:
            report["max_rel_err"] = worst
    return report

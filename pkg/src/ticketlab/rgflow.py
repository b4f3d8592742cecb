"""Flow observables of iterative magnitude pruning.

For each pruning iteration ``n`` the share of total absolute weight held by
layer ``i`` is ``M_i(n)``.  Consecutive ratios ``lambda_i(n) = M_i(n+1)/M_i(n)``
are compared against the per-iteration coarse-graining factor ``l(n)`` (ratio
of surviving weight counts) through ``sigma_i(n) = ln lambda_i(n) / ln l(n)``.
Layers with ``sigma_i > 0`` gain share as the network thins out (relevant),
those with ``sigma_i < 0`` lose it (irrelevant).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hnn import NetworkParams, mask_vector


class DegenerateNetworkError(ValueError):
    pass


def layer_magnitude_fraction(params: NetworkParams, mask=None) -> np.ndarray:
    """Fraction of the total unmasked |weight| carried by each layer (biases excluded)."""
    arch = params.arch
    w = np.abs(params.weight_vector) * mask_vector(mask, arch)
    sums = np.array([w[s].sum() for s in arch.weight_slices()])
    total = sums.sum()
    if not total > 0:
        raise DegenerateNetworkError("no unmasked weight magnitude left")
    return sums / total


def eigenvalue_sequence(flow: Sequence[Sequence[float]]) -> np.ndarray:
    """Ratios ``M(n+1) / M(n)``; entries whose denominator is zero come back NaN."""
    M = np.asarray(flow, dtype=float)
    if M.ndim != 2 or M.shape[0] < 2:
        raise ValueError("need the layer fractions of at least two iterations")
    num, den = M[1:], M[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return lam


@dataclass(frozen=True)
class SigmaResult:
    sigma: np.ndarray            # aggregated per layer
    per_iteration: np.ndarray    # (n_transitions, n_layers), NaN where undefined
    used: np.ndarray             # bool per transition, included in the mean


def sigma_exponents(lambdas, scales: Sequence[float], include: Sequence[bool] | None = None) -> SigmaResult:
    """``sigma_i(n) = ln lambda_i(n) / ln l(n)`` averaged over the included transitions.

    ``include`` selects transitions for the mean (default: all); non-positive
    lambdas are flagged as NaN and skipped.
    """
    lam = np.atleast_2d(np.asarray(lambdas, dtype=float))
    l = np.asarray(scales, dtype=float)
    if l.shape != (lam.shape[0],):
        raise ValueError("need one coarse-graining factor per transition")
    if np.any(l <= 1):
        raise ValueError("coarse-graining factors must exceed 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        per = np.where(lam > 0, np.log(np.where(lam > 0, lam, 1.0)), np.nan) / np.log(l)[:, None]
    used = np.ones(lam.shape[0], bool) if include is None else np.asarray(include, bool)
    if used.shape != (lam.shape[0],):
        raise ValueError("include must have one flag per transition")
    sel = per[used]
    ok = np.isfinite(sel)
    n = ok.sum(axis=0)
    with np.errstate(invalid="ignore"):
        sigma = np.where(n > 0, np.where(ok, sel, 0.0).sum(axis=0) / n, np.nan)
    return SigmaResult(sigma, per, used)


@dataclass(frozen=True)
class FlowObservables:
    iterations: np.ndarray       # (N,)
    density: np.ndarray          # (N,)
    fractions: np.ndarray        # (N, L)   M_i(n)
    lambdas: np.ndarray          # (N-1, L)
    scales: np.ndarray           # (N-1,)   l(n)
    sigma: SigmaResult

    @property
    def relevant(self) -> np.ndarray:
        return self.sigma.sigma > 0

    def to_csv(self) -> str:
        """Columns: iteration, density, M_1..M_L, lambda_1..lambda_L, sigma_1..sigma_L.

        lambda/sigma on row ``n`` describe the step ``n -> n+1``; the last row
        leaves them empty.  A final row labelled ``mean`` carries the aggregate.
        """
        L = self.fractions.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "density"] + [f"M_{i+1}" for i in range(L)]
                   + [f"lambda_{i+1}" for i in range(L)] + [f"sigma_{i+1}" for i in range(L)])
        for n in range(len(self.iterations)):
            row = [int(self.iterations[n]), _fmt(self.density[n])] + [_fmt(v) for v in self.fractions[n]]
            if n < len(self.scales):
                row += [_fmt(v) for v in self.lambdas[n]] + [_fmt(v) for v in self.sigma.per_iteration[n]]
            else:
                row += [""] * (2 * L)
            w.writerow(row)
        w.writerow(["mean", ""] + [""] * (2 * L) + [_fmt(v) for v in self.sigma.sigma])
        return buf.getvalue()


def _fmt(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def flow_observables(fractions, counts, density=None, include=None, iterations=None) -> FlowObservables:
    """Assemble the flow from per-iteration layer fractions and surviving weight counts.

    ``include`` flags which transitions enter the sigma mean (typically those
    taken before any layer reached its density floor).
    """
    M = np.asarray(fractions, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (M.shape[0],):
        raise ValueError("need one surviving-weight count per iteration")
    lam = eigenvalue_sequence(M)
    scales = counts[:-1] / counts[1:]
    sig = sigma_exponents(lam, scales, include)
    it = np.arange(M.shape[0]) if iterations is None else np.asarray(iterations)
    d = counts / counts[0] if density is None else np.asarray(density, dtype=float)
    return FlowObservables(it, d, M, lam, scales, sig)


def flow_from_trace(trace) -> FlowObservables:
    """Flow observables of a :class:`ticketlab.pruner.PruneTrace`."""
    recs = [r for r in trace.records if not r.diverged]
    M = [r.magnitude_fraction for r in recs]
    counts = [r.n_unmasked for r in recs]
    include = [not r.floor_bound for r in recs[:-1]]
    return flow_observables(M, counts, [r.density for r in recs], include, [r.iteration for r in recs])

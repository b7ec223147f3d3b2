"""Small shared statistics helpers (G-test of (conditional) independence)."""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.stats import chi2


def g_test(a: np.ndarray, b: np.ndarray, a_card: int, b_card: int,
           cond: Optional[np.ndarray] = None, cond_card: int = 1) -> Tuple[float, int, float]:
    """Likelihood-ratio (G) test of a _||_ b given cond.

    Returns (G, degrees of freedom, p-value). Degrees of freedom use the
    full table dimensions, which is conservative for sparse strata.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if cond is None:
        cond = np.zeros(a.shape[0], dtype=np.int64)
        cond_card = 1
    else:
        cond = np.asarray(cond, dtype=np.int64)
    code = (cond * a_card + a) * b_card + b
    counts = np.bincount(code, minlength=cond_card * a_card * b_card).astype(float)
    counts = counts.reshape(cond_card, a_card, b_card)
    g_stat = 0.0
    for s in range(cond_card):
        tab = counts[s]
        tot = tab.sum()
        if tot == 0:
            continue
        expected = np.outer(tab.sum(axis=1), tab.sum(axis=0)) / tot
        nz = tab > 0
        g_stat += 2.0 * float(np.sum(tab[nz] * np.log(tab[nz] / expected[nz])))
    df = (a_card - 1) * (b_card - 1) * cond_card
    pvalue = float(chi2.sf(g_stat, df)) if df > 0 else 1.0
    return g_stat, df, pvalue

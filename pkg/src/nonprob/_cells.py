"""Group-by helpers over categorical labels."""

import numpy as np


def label_key(lab):
    return lab.item() if hasattr(lab, "item") else lab


def cell_sums(labels, values=None, levels=None):
    """Counts and sums of ``values`` per label.

    Returns ``(levels, counts, sums)``; with ``levels`` given, labels outside
    it raise ``KeyError`` and absent levels get zero counts.
    """
    labels = np.asarray(labels)
    if levels is None:
        levels, inv = np.unique(labels, return_inverse=True)
    else:
        levels = np.asarray(levels)
        order = np.argsort(levels, kind="stable")
        pos = np.searchsorted(levels[order], labels)
        pos = np.clip(pos, 0, len(levels) - 1)
        inv = order[pos]
        bad = levels[inv] != labels
        if np.any(bad):
            raise KeyError(label_key(labels[np.flatnonzero(bad)[0]]))
    inv = inv.ravel()
    counts = np.bincount(inv, minlength=len(levels))
    sums = None if values is None else np.bincount(inv, weights=values, minlength=len(levels))
    return levels, counts, sums


def sizes_arrays(stratum_sizes):
    """Split a ``{label: N_x}`` mapping into sorted label / size arrays."""
    if not stratum_sizes:
        raise ValueError("no stratum sizes given")
    labels = list(stratum_sizes)
    levels = np.asarray(labels)
    sizes = np.asarray([stratum_sizes[k] for k in labels], dtype=float)
    order = np.argsort(levels, kind="stable")
    return levels[order], sizes[order]

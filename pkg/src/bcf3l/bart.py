"""Sum-of-trees MCMC machinery shared by the causal forest and the BART baseline.

One Metropolis-Hastings step per tree per sweep (grow / prune / change), with
the integrated normal-normal leaf likelihood, conjugate leaf draws, and a
scaled-inverse-chi-square error variance update. Forests support an "active
row" mask so effect surfaces can be trained on the rows whose indicator is
switched on while still being evaluated everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

P_GROW, P_PRUNE, P_CHANGE = 0.25, 0.25, 0.5


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int
    eta: float = 0.95
    beta: float = 2.0
    leaf_sd: float = 0.1
    p_grow: float = P_GROW
    p_prune: float = P_PRUNE
    p_change: float = P_CHANGE

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0 < self.eta < 1 or self.beta < 0:
            raise ValueError("need eta in (0,1) and beta >= 0")
        if abs(self.p_grow + self.p_prune + self.p_change - 1.0) > 1e-12:
            raise ValueError("move probabilities must sum to 1")

    def p_split(self, depth):
        return self.eta * (1.0 + depth) ** (-self.beta)


class DecisionTree:
    """Binary tree stored as parallel node arrays; feature -1 marks a leaf."""

    __slots__ = ("feature", "cutpoint", "left", "right", "depth", "value", "_free")

    def __init__(self):
        self.feature = [-1]
        self.cutpoint = [0.0]
        self.left = [-1]
        self.right = [-1]
        self.depth = [0]
        self.value = [0.0]
        self._free = []

    def copy(self):
        t = DecisionTree.__new__(DecisionTree)
        t.feature = list(self.feature)
        t.cutpoint = list(self.cutpoint)
        t.left = list(self.left)
        t.right = list(self.right)
        t.depth = list(self.depth)
        t.value = list(self.value)
        t._free = list(self._free)
        return t

    def _alloc(self, depth):
        if self._free:
            i = self._free.pop()
            self.feature[i] = -1
            self.cutpoint[i] = 0.0
            self.left[i] = self.right[i] = -1
            self.depth[i] = depth
            self.value[i] = 0.0
            return i
        self.feature.append(-1)
        self.cutpoint.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.depth.append(depth)
        self.value.append(0.0)
        return len(self.feature) - 1

    def alive(self):
        """Node ids reachable from the root, preorder."""
        out, stack = [], [0]
        while stack:
            i = stack.pop()
            out.append(i)
            if self.feature[i] >= 0:
                stack.append(self.right[i])
                stack.append(self.left[i])
        return out

    def leaves(self):
        return [i for i in self.alive() if self.feature[i] < 0]

    def internals(self):
        return [i for i in self.alive() if self.feature[i] >= 0]

    def prunable(self):
        """Internal nodes with two leaf children (grow's exact inverses)."""
        return [
            i for i in self.internals()
            if self.feature[self.left[i]] < 0 and self.feature[self.right[i]] < 0
        ]

    def grow(self, leaf, feature, cutpoint):
        l = self._alloc(self.depth[leaf] + 1)
        r = self._alloc(self.depth[leaf] + 1)
        self.feature[leaf] = feature
        self.cutpoint[leaf] = cutpoint
        self.left[leaf] = l
        self.right[leaf] = r
        return l, r

    def prune(self, node):
        self._free.append(self.left[node])
        self._free.append(self.right[node])
        self.feature[node] = -1
        self.left[node] = self.right[node] = -1
        self.value[node] = 0.0

    def descendant_leaves(self, node):
        out, stack = [], [node]
        while stack:
            i = stack.pop()
            if self.feature[i] < 0:
                out.append(i)
            else:
                stack.append(self.right[i])
                stack.append(self.left[i])
        return out

    def n_nodes(self):
        return len(self.alive())


def traverse(tree, x_row):
    """Leaf id for one row: x[feature] <= cutpoint goes left."""
    i = 0
    while tree.feature[i] >= 0:
        i = tree.left[i] if x_row[tree.feature[i]] <= tree.cutpoint[i] else tree.right[i]
    return i


def leaf_map(tree, X, node=0, rows=None):
    """Vectorized traversal; returns leaf id per row (subtree-restricted if asked)."""
    n = X.shape[0]
    if rows is None:
        rows = np.arange(n)
    out = np.zeros(n, dtype=np.int64)
    stack = [(node, rows)]
    while stack:
        i, rr = stack.pop()
        if tree.feature[i] < 0:
            out[rr] = i
        else:
            go = X[rr, tree.feature[i]] <= tree.cutpoint[i]
            stack.append((tree.left[i], rr[go]))
            stack.append((tree.right[i], rr[~go]))
    return out


def log_tree_prior(tree, cfg, grids=None):
    """Depth prior of the tree shape; with ``grids``, also the rule priors.

    Each internal node contributes p_split(depth) times, when ``grids`` is
    given, a uniform rule prior 1/(n_features * n_cutpoints(feature)); each
    leaf contributes 1 - p_split(depth).
    """
    lp = 0.0
    for i in tree.alive():
        ps = cfg.p_split(tree.depth[i])
        if tree.feature[i] >= 0:
            lp += np.log(ps)
            if grids is not None:
                lp -= np.log(len(grids)) + np.log(len(grids[tree.feature[i]]))
        else:
            lp += np.log1p(-ps)
    return lp


def _leaf_core(n_l, s, sigma2, leaf_sd):
    """Data-set-independent part of the leaf log marginal (empty leaf -> 0)."""
    v = leaf_sd ** 2
    denom = sigma2 + n_l * v
    return 0.5 * np.log(sigma2 / denom) + v * s ** 2 / (2.0 * sigma2 * denom)


def log_marginal(tree, resid, leaf_of, sigma2, leaf_sd, active=None):
    """Full log marginal of residuals with leaf means integrated out.

    Sum over leaves of the closed-form normal-normal marginal; rows outside
    ``active`` do not contribute. Empty leaves contribute 0.
    """
    resid = np.asarray(resid, dtype=float)
    if active is not None:
        resid = resid[active]
        leaf_of = leaf_of[active]
    m = len(tree.feature)
    n_l = np.bincount(leaf_of, minlength=m).astype(float)
    s = np.bincount(leaf_of, weights=resid, minlength=m)
    lm = float(np.sum(_leaf_core(n_l, s, sigma2, leaf_sd)))
    n = resid.size
    lm += -0.5 * n * np.log(2.0 * np.pi * sigma2) - float(resid @ resid) / (2.0 * sigma2)
    return lm


def _active_stats(resid, active, rows):
    if active is None:
        sub = rows
    else:
        sub = rows[active[rows]]
    return sub.size, float(resid[sub].sum())


def mh_step(tree, X, grids, resid, sigma2, cfg, rng, leaf_of, active=None):
    """One grow/prune/change Metropolis-Hastings update, mutating in place.

    ``leaf_of`` is the cached full-row leaf assignment and is kept in sync.
    Proposals that would leave a leaf with zero active training rows are
    rejected outright. Returns True if the proposal was accepted.
    """
    u = rng.random()
    if u < cfg.p_grow:
        return _grow_step(tree, X, grids, resid, sigma2, cfg, rng, leaf_of, active)
    if u < cfg.p_grow + cfg.p_prune:
        return _prune_step(tree, X, grids, resid, sigma2, cfg, rng, leaf_of, active)
    return _change_step(tree, X, grids, resid, sigma2, cfg, rng, leaf_of, active)


def grow_log_alpha(tree, X, grids, resid, sigma2, cfg, leaf_of, active, leaf, f, cut):
    """Log MH acceptance ratio for growing ``leaf`` on (f, cut).

    Returns ``(log_alpha, rows_l, rows_r)`` or None when a child would have
    zero active training rows (auto-rejected proposal).
    """
    rows = np.nonzero(leaf_of == leaf)[0]
    go_left = X[rows, f] <= cut
    rows_l, rows_r = rows[go_left], rows[~go_left]
    nl, sl = _active_stats(resid, active, rows_l)
    nr, sr = _active_stats(resid, active, rows_r)
    if nl == 0 or nr == 0:
        return None

    d = tree.depth[leaf]
    ps, ps_child = cfg.p_split(d), cfg.p_split(d + 1)
    # depth prior for the new internal node and its two leaves, plus the rule
    # prior 1/(q * n_cut) for the chosen (feature, cutpoint) pair
    log_prior = (
        np.log(ps) + 2.0 * np.log1p(-ps_child) - np.log1p(-ps)
        - np.log(len(grids)) - np.log(len(grids[f]))
    )
    dlm = (
        _leaf_core(nl, sl, sigma2, cfg.leaf_sd)
        + _leaf_core(nr, sr, sigma2, cfg.leaf_sd)
        - _leaf_core(nl + nr, sl + sr, sigma2, cfg.leaf_sd)
    )
    # forward: pick this leaf, feature, cutpoint; reverse: prune in the new tree
    n_prunable_new = _n_prunable_after_grow(tree, leaf)
    log_fwd = (
        np.log(cfg.p_grow) - np.log(len(tree.leaves()))
        - np.log(len(grids)) - np.log(len(grids[f]))
    )
    log_rev = np.log(cfg.p_prune) - np.log(n_prunable_new)
    return log_prior + dlm + log_rev - log_fwd, rows_l, rows_r


def _grow_step(tree, X, grids, resid, sigma2, cfg, rng, leaf_of, active):
    leaves = tree.leaves()
    leaf = leaves[rng.integers(len(leaves))]
    f = int(rng.integers(len(grids)))
    cut = float(grids[f][rng.integers(len(grids[f]))])
    prop = grow_log_alpha(
        tree, X, grids, resid, sigma2, cfg, leaf_of, active, leaf, f, cut
    )
    if prop is None:
        return False
    log_alpha, rows_l, rows_r = prop
    if np.log(rng.random()) < log_alpha:
        l, r = tree.grow(leaf, f, cut)
        leaf_of[rows_l] = l
        leaf_of[rows_r] = r
        return True
    return False


def _n_prunable_after_grow(tree, leaf):
    count = 1  # the freshly grown node itself
    for i in tree.prunable():
        if tree.left[i] != leaf and tree.right[i] != leaf:
            count += 1
    return count


def prune_log_alpha(tree, X, grids, resid, sigma2, cfg, leaf_of, active, node):
    """Log MH acceptance ratio for pruning the two children of ``node``.

    Returns ``(log_alpha, rows_l, rows_r)``.
    """
    l, r = tree.left[node], tree.right[node]
    rows_l = np.nonzero(leaf_of == l)[0]
    rows_r = np.nonzero(leaf_of == r)[0]
    nl, sl = _active_stats(resid, active, rows_l)
    nr, sr = _active_stats(resid, active, rows_r)

    d = tree.depth[node]
    ps, ps_child = cfg.p_split(d), cfg.p_split(d + 1)
    f = tree.feature[node]
    # inverse of the grow prior ratio, including the removed rule's prior
    log_prior = (
        np.log1p(-ps) - np.log(ps) - 2.0 * np.log1p(-ps_child)
        + np.log(len(grids)) + np.log(len(grids[f]))
    )
    dlm = (
        _leaf_core(nl + nr, sl + sr, sigma2, cfg.leaf_sd)
        - _leaf_core(nl, sl, sigma2, cfg.leaf_sd)
        - _leaf_core(nr, sr, sigma2, cfg.leaf_sd)
    )
    n_leaves_new = len(tree.leaves()) - 1
    log_fwd = np.log(cfg.p_prune) - np.log(len(tree.prunable()))
    log_rev = (
        np.log(cfg.p_grow) - np.log(n_leaves_new)
        - np.log(len(grids)) - np.log(len(grids[f]))
    )
    return log_prior + dlm + log_rev - log_fwd, rows_l, rows_r


def _prune_step(tree, X, grids, resid, sigma2, cfg, rng, leaf_of, active):
    prunable = tree.prunable()
    if not prunable:
        return False
    node = prunable[rng.integers(len(prunable))]
    log_alpha, rows_l, rows_r = prune_log_alpha(
        tree, X, grids, resid, sigma2, cfg, leaf_of, active, node
    )
    if np.log(rng.random()) < log_alpha:
        tree.prune(node)
        leaf_of[rows_l] = node
        leaf_of[rows_r] = node
        return True
    return False


def _change_step(tree, X, grids, resid, sigma2, cfg, rng, leaf_of, active):
    internals = tree.internals()
    if not internals:
        return False
    node = internals[rng.integers(len(internals))]
    q = len(grids)
    f = int(rng.integers(q))
    cut = float(grids[f][rng.integers(len(grids[f]))])

    sub_leaves = tree.descendant_leaves(node)
    rows = np.nonzero(np.isin(leaf_of, sub_leaves))[0]

    old_f, old_cut = tree.feature[node], tree.cutpoint[node]
    tree.feature[node], tree.cutpoint[node] = f, cut
    new_assign = leaf_map(tree, X, node=node, rows=rows)[rows]
    tree.feature[node], tree.cutpoint[node] = old_f, old_cut

    dlm = 0.0
    ok = True
    for lf in sub_leaves:
        n_new, s_new = _active_stats(resid, active, rows[new_assign == lf])
        if n_new == 0:
            ok = False
            break
        n_old, s_old = _active_stats(resid, active, np.nonzero(leaf_of == lf)[0])
        dlm += (
            _leaf_core(n_new, s_new, sigma2, cfg.leaf_sd)
            - _leaf_core(n_old, s_old, sigma2, cfg.leaf_sd)
        )
    # symmetric proposal over (node, feature, cutpoint); prior unchanged
    if ok and np.log(rng.random()) < dlm:
        tree.feature[node], tree.cutpoint[node] = f, cut
        leaf_of[rows] = new_assign
        return True
    return False


def sample_leaves(tree, resid, leaf_of, sigma2, leaf_sd, rng, active=None):
    """Conjugate normal draw per leaf; empty leaves get pure prior draws."""
    m = len(tree.feature)
    if active is None:
        lo, rr = leaf_of, resid
    else:
        lo, rr = leaf_of[active], resid[active]
    n_l = np.bincount(lo, minlength=m).astype(float)
    s = np.bincount(lo, weights=rr, minlength=m)
    v = 1.0 / (n_l / sigma2 + 1.0 / leaf_sd ** 2)
    mean = v * s / sigma2
    draws = mean + np.sqrt(v) * rng.standard_normal(m)
    for i in tree.leaves():
        tree.value[i] = float(draws[i])
    return tree


def sample_sigma2(resid, nu_sig, lambda_sig, rng):
    """Scaled-inverse-chi-square draw: df nu+n, scale (nu*lambda + SSR)/(nu+n)."""
    if nu_sig <= 0 or lambda_sig <= 0:
        raise ValueError("nu_sig and lambda_sig must be > 0")
    resid = np.asarray(resid, dtype=float)
    n = resid.size
    ssr = float(resid @ resid)
    return (nu_sig * lambda_sig + ssr) / rng.chisquare(nu_sig + n)


def default_sigma_prior(y_scaled, nu_sig=3.0, q=0.9):
    """Scale lambda so the prior puts mass q below the outcome variance."""
    from scipy.stats import chi2

    s2 = float(np.var(y_scaled))
    if s2 <= 0:
        s2 = 1.0
    return nu_sig, s2 * chi2.ppf(1.0 - q, nu_sig) / nu_sig


class Forest:
    """A sum of trees over a fixed feature matrix, with backfitting updates."""

    def __init__(self, X, cfg, active=None):
        self.X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        self.cfg = cfg
        self.active = active
        self.grids = [np.unique(self.X[:, f]) for f in range(self.X.shape[1])]
        n = self.X.shape[0]
        self.trees = [DecisionTree() for _ in range(cfg.n_trees)]
        self.leaf_of = [np.zeros(n, dtype=np.int64) for _ in range(cfg.n_trees)]
        self.fits = np.zeros((cfg.n_trees, n))
        self.total_fit = np.zeros(n)

    def sweep(self, target, sigma2, rng):
        """One backfitting pass: MH + leaf draw for every tree against ``target``."""
        for t, tree in enumerate(self.trees):
            partial = target - (self.total_fit - self.fits[t])
            mh_step(
                tree, self.X, self.grids, partial, sigma2, self.cfg, rng,
                self.leaf_of[t], self.active,
            )
            sample_leaves(
                tree, partial, self.leaf_of[t], sigma2, self.cfg.leaf_sd, rng,
                self.active,
            )
            new_fit = np.asarray(tree.value)[self.leaf_of[t]]
            self.total_fit += new_fit - self.fits[t]
            self.fits[t] = new_fit

    def recompute_fit(self):
        """Prediction rebuilt from scratch (bookkeeping audit)."""
        out = np.zeros(self.X.shape[0])
        for t, tree in enumerate(self.trees):
            out += np.asarray(tree.value)[leaf_map(tree, self.X)]
        return out

    def predict(self, Xnew):
        Xnew = np.atleast_2d(np.asarray(Xnew, dtype=float))
        out = np.zeros(Xnew.shape[0])
        for tree in self.trees:
            out += np.asarray(tree.value)[leaf_map(tree, Xnew)]
        return out

    def snapshot(self):
        return [tree.copy() for tree in self.trees]


def predict_trees(trees, Xnew):
    """Evaluate a saved list of trees (one posterior draw of a forest)."""
    Xnew = np.atleast_2d(np.asarray(Xnew, dtype=float))
    out = np.zeros(Xnew.shape[0])
    for tree in trees:
        out += np.asarray(tree.value)[leaf_map(tree, Xnew)]
    return out

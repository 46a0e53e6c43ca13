"""Numba kernels for CART growth and traversal.

Trees are stored in flat parallel arrays: ``feature[k] == -1`` marks a leaf
whose ``value[k]`` is the class-1 proportion of its training rows; internal
nodes send rows with ``x[feature] <= threshold`` left. Feature subsampling
uses a splitmix64 stream keyed by (tree seed, node counter) so results do
not depend on growth order or thread count.
"""

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True, inline="always")
def _splitmix64(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(
        0xFFFFFFFFFFFFFFFF
    )
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(
        0xFFFFFFFFFFFFFFFF
    )
    return state, z ^ (z >> np.uint64(31))


@njit(cache=True)
def _sample_features(seed, node_counter, n_features, mtry, out):
    """Partial Fisher-Yates: first ``mtry`` entries of ``out`` are the draw."""
    for f in range(n_features):
        out[f] = f
    state = seed ^ (np.uint64(node_counter) * np.uint64(0xD1342543DE82EF95))
    for i in range(mtry):
        state, z = _splitmix64(state)
        j = i + np.int64(z % np.uint64(n_features - i))
        out[i], out[j] = out[j], out[i]


@njit(cache=True)
def grow_tree(
    X,
    y,
    sample_idx,
    mtry,
    min_leaf,
    max_depth,
    seed,
    feature,
    threshold,
    left,
    right,
    value,
):
    """Grow one CART tree on ``sample_idx`` rows; returns the node count."""
    n_features = X.shape[1]
    n = sample_idx.shape[0]
    idx = sample_idx.copy()
    buf = np.empty(n, dtype=np.int64)
    feat_buf = np.empty(n_features, dtype=np.int64)

    # stack of (node, start, end, depth) over idx segments
    cap = 2 * n + 1
    stack_node = np.empty(cap, dtype=np.int64)
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    top = 0
    stack_node[0], stack_start[0], stack_end[0], stack_depth[0] = 0, 0, n, 0
    top = 1
    n_nodes = 1
    node_counter = np.uint64(0)

    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        node_counter += np.uint64(1)

        n_node = end - start
        ones = 0
        for k in range(start, end):
            ones += y[idx[k]]
        p1 = ones / n_node

        make_leaf = (
            n_node < 2 * min_leaf
            or ones == 0
            or ones == n_node
            or (max_depth >= 0 and depth >= max_depth)
        )
        best_feature = -1
        best_threshold = 0.0
        best_cost = 1e18
        if not make_leaf:
            _sample_features(seed, node_counter, n_features, mtry, feat_buf)
            for fi in range(mtry):
                f = feat_buf[fi]
                vals = np.empty(n_node)
                labs = np.empty(n_node, dtype=np.int64)
                for k in range(n_node):
                    vals[k] = X[idx[start + k], f]
                order = np.argsort(vals, kind="mergesort")
                for k in range(n_node):
                    labs[k] = y[idx[start + order[k]]]
                ones_left = 0
                for k in range(n_node - 1):
                    ones_left += labs[k]
                    n_left = k + 1
                    n_right = n_node - n_left
                    v_here = vals[order[k]]
                    v_next = vals[order[k + 1]]
                    if v_next <= v_here:
                        continue
                    if n_left < min_leaf or n_right < min_leaf:
                        continue
                    ones_right = ones - ones_left
                    # weighted Gini: n_L*(1 - pL^2 - qL^2) + n_R*(...)
                    gl = n_left - (ones_left * ones_left + (n_left - ones_left) * (n_left - ones_left)) / n_left
                    gr = n_right - (ones_right * ones_right + (n_right - ones_right) * (n_right - ones_right)) / n_right
                    cost = gl + gr
                    if cost < best_cost:
                        best_cost = cost
                        best_feature = f
                        best_threshold = 0.5 * (v_here + v_next)
            if best_feature < 0:
                make_leaf = True  # all sampled features constant here

        if make_leaf:
            feature[node] = LEAF
            threshold[node] = 0.0
            left[node] = -1
            right[node] = -1
            value[node] = p1
            continue

        # stable partition of idx[start:end] around the split
        n_left = 0
        for k in range(start, end):
            if X[idx[k], best_feature] <= best_threshold:
                buf[n_left] = idx[k]
                n_left += 1
        n_right = 0
        for k in range(start, end):
            if X[idx[k], best_feature] > best_threshold:
                buf[n_left + n_right] = idx[k]
                n_right += 1
        for k in range(n_node):
            idx[start + k] = buf[k]

        left_id = n_nodes
        right_id = n_nodes + 1
        n_nodes += 2
        feature[node] = best_feature
        threshold[node] = best_threshold
        left[node] = left_id
        right[node] = right_id
        value[node] = p1

        stack_node[top], stack_start[top], stack_end[top], stack_depth[top] = (
            left_id,
            start,
            start + n_left,
            depth + 1,
        )
        top += 1
        stack_node[top], stack_start[top], stack_end[top], stack_depth[top] = (
            right_id,
            start + n_left,
            end,
            depth + 1,
        )
        top += 1

    return n_nodes


@njit(cache=True)
def tree_leaf_values(X, feature, threshold, left, right, value, out):
    """Per-row leaf class-1 proportions for one tree."""
    for r in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]


@njit(cache=True)
def forest_mean_leaf_values(X, features, thresholds, lefts, rights, values, offsets):
    """Mean leaf value across every tree; offsets delimit trees in the flat arrays."""
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    acc = np.zeros(n)
    for t in range(n_trees):
        o = offsets[t]
        for r in range(n):
            node = 0
            while features[o + node] != LEAF:
                if X[r, features[o + node]] <= thresholds[o + node]:
                    node = lefts[o + node]
                else:
                    node = rights[o + node]
            acc[r] += values[o + node]
    return acc / n_trees


@njit(cache=True)
def forest_oob_leaf_values(X, features, thresholds, lefts, rights, values, offsets, in_bag):
    """Out-of-bag mean leaf value per row, with the count of contributing trees.

    ``in_bag`` is (n_trees, n) counts of how often each row entered each
    tree's bootstrap sample.
    """
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    acc = np.zeros(n)
    cnt = np.zeros(n, dtype=np.int64)
    for t in range(n_trees):
        o = offsets[t]
        for r in range(n):
            if in_bag[t, r] != 0:
                continue
            node = 0
            while features[o + node] != LEAF:
                if X[r, features[o + node]] <= thresholds[o + node]:
                    node = lefts[o + node]
                else:
                    node = rights[o + node]
            acc[r] += values[o + node]
            cnt[r] += 1
    return acc, cnt

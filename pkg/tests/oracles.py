"""Independent reference implementations used only by the test suite.

These deliberately avoid the package's data structures and algorithms:
plain-Python linear scans, all-pairs loops, brute-force time stepping and
exhaustive matching. They encode the same documented semantics so that
any divergence in the optimized paths is caught.
"""

from __future__ import annotations

import itertools
import math


# -- query semantics over a raw record list ------------------------------------


def _merge(intervals, gap):
    """Sort and merge intervals (start, end, fields) whose gap <= `gap`
    (gap=0 merges overlapping/touching only)."""
    intervals = sorted(intervals, key=lambda iv: (iv[0], iv[1]))
    out = []
    for s, e, f in intervals:
        if out and s <= out[-1][1] + gap:
            ps, pe, pf = out[-1]
            out[-1] = (ps, max(pe, e), pf | f)
        else:
            out.append((s, e, f))
    return out


def _atom_matches(record, field, op, value):
    if record[3] != field:
        return False
    rv = record[4]
    if isinstance(value, str):
        return op == "=" and rv == value
    if isinstance(rv, str):
        return False
    if op == "=":
        return rv == value
    if op == ">":
        return rv > value
    if op == ">=":
        return rv >= value
    if op == "<":
        return rv < value
    if op == "<=":
        return rv <= value
    raise ValueError(op)


def oracle_search(records, ast, slack=2.0):
    """Evaluate a query AST by linear scan.

    `records` are (recording_id, t_start, t_end, field, value) tuples; the
    AST uses the package's Atom/And/Or node classes (shared contract).
    Returns sorted (recording_id, t_start, t_end, frozenset fields).
    """
    from scenariokit.query import And, Atom, Or

    def eval_node(node):
        if isinstance(node, Atom):
            per: dict[str, list] = {}
            for r in records:
                if _atom_matches(r, node.field, node.op, node.value):
                    per.setdefault(r[0], []).append((r[1], r[2], frozenset([node.field])))
            return {rid: _merge(ivs, slack) for rid, ivs in per.items()}
        if isinstance(node, Or):
            per: dict[str, list] = {}
            for child in node.children:
                for rid, ivs in eval_node(child).items():
                    per.setdefault(rid, []).extend(ivs)
            return {rid: _merge(ivs, 0.0) for rid, ivs in per.items()}
        if isinstance(node, And):
            acc = {rid: _merge(ivs, slack) for rid, ivs in eval_node(node.children[0]).items()}
            rest = node.children[1:]
            for step, child in enumerate(rest):
                operand = {rid: _merge(ivs, slack) for rid, ivs in eval_node(child).items()}
                nxt: dict[str, list] = {}
                for rid in set(acc) & set(operand):
                    pieces = []
                    for (a0, a1, af) in acc[rid]:
                        for (b0, b1, bf) in operand[rid]:
                            lo = max(a0, b0)
                            hi = min(a1, b1)
                            if hi > lo:
                                pieces.append((lo, hi, af | bf))
                            elif 0.0 < lo - hi <= slack:
                                pieces.append((hi, lo, af | bf))
                    if pieces:
                        nxt[rid] = _merge(pieces, 0.0)
                if step < len(rest) - 1:
                    nxt = {rid: _merge(ivs, slack) for rid, ivs in nxt.items()}
                acc = nxt
            return acc
        raise TypeError(type(node))

    result = eval_node(ast)
    out = []
    for rid in sorted(result):
        for s, e, f in result[rid]:
            out.append((rid, s, e, f))
    return out


# -- time to collision -----------------------------------------------------------


def ttc_time_stepping(px, py, vx, vy, qx, qy, wx, wy, radius_sum, dt=0.001, horizon=60.0):
    """First time step at which the two constant-velocity points come
    within radius_sum; math.inf if none within the horizon."""
    steps = int(horizon / dt)
    for k in range(steps + 1):
        t = k * dt
        dx = (qx + wx * t) - (px + vx * t)
        dy = (qy + wy * t) - (py + vy * t)
        if math.hypot(dx, dy) <= radius_sum:
            return t
    return math.inf


# -- multiple object tracking accuracy ---------------------------------------------


def mota_exhaustive(twin_tracks, truth_tracks, dist_max=2.0):
    """MOTA via exhaustive per-frame matching (max matches, then min total
    distance). Track format: {track_id: [(t, x, y), ...]}."""
    frames = sorted(
        {round(t, 9) for pts in truth_tracks.values() for t, _, _ in pts}
        | {round(t, 9) for pts in twin_tracks.values() for t, _, _ in pts}
    )
    truth_at = {
        f: {tid: (x, y) for tid, pts in truth_tracks.items() for t, x, y in pts if round(t, 9) == f}
        for f in frames
    }
    twin_at = {
        f: {tid: (x, y) for tid, pts in twin_tracks.items() for t, x, y in pts if round(t, 9) == f}
        for f in frames
    }
    gt = fn = fp = idsw = 0
    last_match: dict = {}
    for f in frames:
        truths = sorted(truth_at[f])
        twins = sorted(twin_at[f])
        gt += len(truths)
        best = None
        for m in range(min(len(truths), len(twins)), -1, -1):
            for t_sub in itertools.combinations(truths, m):
                for h_perm in itertools.permutations(twins, m):
                    dists = [
                        math.hypot(
                            truth_at[f][a][0] - twin_at[f][b][0],
                            truth_at[f][a][1] - twin_at[f][b][1],
                        )
                        for a, b in zip(t_sub, h_perm)
                    ]
                    if all(d <= dist_max for d in dists):
                        cand = (m, -sum(dists), list(zip(t_sub, h_perm)))
                        if best is None or (cand[0], cand[1]) > (best[0], best[1]):
                            best = cand
            if best is not None and best[0] == m:
                break
        matches = best[2] if best else []
        fn += len(truths) - len(matches)
        fp += len(twins) - len(matches)
        for a, b in matches:
            if a in last_match and last_match[a] != b:
                idsw += 1
            last_match[a] = b
    if gt == 0:
        raise ValueError("no ground truth objects")
    return 1.0 - (fn + fp + idsw) / gt


# -- numeric quadrature ---------------------------------------------------------


def integrate_pdf(pdf, lo, hi, n=20000):
    """Trapezoid quadrature, deliberately simple."""
    xs = [lo + (hi - lo) * k / n for k in range(n + 1)]
    ys = [pdf(x) for x in xs]
    h = (hi - lo) / n
    return h * (sum(ys) - 0.5 * (ys[0] + ys[-1]))

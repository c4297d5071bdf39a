"""Pure-Python decode kernel.

Reference implementation of the fused scene-model decode loop; the compiled
extension mirrors this exactly (same operation order, same libm calls), so
token streams are identical whichever backend is active.  Keep the two in
lockstep when editing.
"""
from __future__ import annotations

import math

from .errors import DegenerateDistribution

_NEG_INF = float("-inf")


def decode_scene(task) -> None:
    """Run task.n_steps of guided scene-model decoding.

    Mutates task.out (tokens), task.drawn, task.o_edrawn / task.r_edrawn.
    """
    K = task.K
    w = task.w
    n_obj = K - 1
    eager_rows = task.eager_rows
    gamma = float(task.gamma)
    alpha = float(task.alpha)
    a_sp = float(task.a_sp)
    beta_log = math.log(float(task.beta))
    sp_log = math.log(a_sp) if a_sp > 0.0 else _NEG_INF
    temperature = float(task.temperature)
    floor = float(task.floor)
    mode = task.mode  # 0 two-way original, 1 three-way, 2 two-way reformulated
    s_o = float(task.s_o)
    s_r = float(task.s_r)
    eps = float(task.eps)
    use_o = mode != 2
    use_r = mode != 0

    lu = [float(v) for v in task.lu]
    drawn = [int(v) for v in task.drawn]
    o_req = [int(v) for v in task.o_req]
    o_quota = [int(v) for v in task.o_quota]
    o_cover = [[int(x) for x in row] for row in task.o_cover]
    o_equota = [int(v) for v in task.o_equota]
    o_edrawn = [int(v) for v in task.o_edrawn]
    r_req = [int(v) for v in task.r_req]
    r_quota = [int(v) for v in task.r_quota]
    r_cover = [[int(x) for x in row] for row in task.r_cover]
    r_equota = [int(v) for v in task.r_equota]
    r_edrawn = [int(v) for v in task.r_edrawn]
    uniforms = task.uniforms

    # blind-weight logs are row-regime dependent; precompute both regimes
    # with the same product-then-log order the session path uses
    o_blind_plain = [math.log(float(v)) if v > 0.0 else _NEG_INF for v in task.o_blind]
    o_blind_eager = [math.log(float(v) * gamma) if v > 0.0 else _NEG_INF for v in task.o_blind]
    r_blind_plain = [math.log(float(v)) if v > 0.0 else _NEG_INF for v in task.r_blind]
    r_blind_eager = [math.log(float(v) * gamma) if v > 0.0 else _NEG_INF for v in task.r_blind]

    la = [0.0] * K
    lb = [0.0] * K
    z = [0.0] * K
    weights = [0.0] * K

    for i in range(task.n_steps):
        pos = task.start_pos + i
        row = pos // w
        eager = row < eager_rows
        g = gamma if eager else 1.0

        if use_o:
            la[0] = beta_log
            cov = o_cover[row]
            blind_log = o_blind_eager if eager else o_blind_plain
            for t in range(n_obj):
                if not o_req[t]:
                    la[t + 1] = sp_log
                    continue
                eid = cov[t]
                if eid >= 0:
                    need = o_equota[eid] - o_edrawn[eid]
                    la[t + 1] = math.log(alpha * need * g) if need > 0 else _NEG_INF
                else:
                    la[t + 1] = blind_log[t] if drawn[t] < o_quota[t] else _NEG_INF
        if use_r:
            lb[0] = beta_log
            cov = r_cover[row]
            blind_log = r_blind_eager if eager else r_blind_plain
            for t in range(n_obj):
                if not r_req[t]:
                    lb[t + 1] = sp_log
                    continue
                eid = cov[t]
                if eid >= 0:
                    need = r_equota[eid] - r_edrawn[eid]
                    lb[t + 1] = math.log(alpha * need * g) if need > 0 else _NEG_INF
                else:
                    lb[t + 1] = blind_log[t] if drawn[t] < r_quota[t] else _NEG_INF

        if mode == 0:
            for k in range(K):
                a = la[k]
                if a < floor:
                    a = floor
                v = a + s_o * (a - lu[k])
                z[k] = v if v > floor else _NEG_INF
        elif mode == 2:
            for k in range(K):
                a = lb[k]
                if a < floor:
                    a = floor
                v = a + s_r * (a - lu[k])
                z[k] = v if v > floor else _NEG_INF
        else:
            dot = 0.0
            nrm = 0.0
            for k in range(K):
                a = la[k]
                if a < floor:
                    a = floor
                b = lb[k]
                if b < floor:
                    b = floor
                la[k] = a
                lb[k] = b
                d_o = a - lu[k]
                d_r = b - lu[k]
                dot += d_r * d_o
                nrm += d_o * d_o
            coef = dot / nrm if nrm >= eps else 0.0
            for k in range(K):
                d_o = la[k] - lu[k]
                d_r = lb[k] - lu[k]
                v = la[k] + s_o * d_o + s_r * (d_r - coef * d_o)
                z[k] = v if v > floor else _NEG_INF

        m = _NEG_INF
        for k in range(K):
            if z[k] > m:
                m = z[k]
        if m == _NEG_INF:
            raise DegenerateDistribution(f"all guided logits -inf at position {pos}")
        total = 0.0
        for k in range(K):
            zk = z[k]
            wk = math.exp((zk - m) / temperature) if zk != _NEG_INF else 0.0
            weights[k] = wk
            total += wk
        target = uniforms[i] * total
        acc = 0.0
        token = K - 1
        for k in range(K):
            acc += weights[k]
            if target < acc:
                token = k
                break

        task.out[i] = token
        if token != 0:
            t = token - 1
            drawn[t] += 1
            if use_o:
                eid = o_cover[row][t]
                if eid >= 0:
                    o_edrawn[eid] += 1
            if use_r:
                eid = r_cover[row][t]
                if eid >= 0:
                    r_edrawn[eid] += 1

    for t in range(n_obj):
        task.drawn[t] = drawn[t]
    for j in range(len(o_edrawn)):
        task.o_edrawn[j] = o_edrawn[j]
    for j in range(len(r_edrawn)):
        task.r_edrawn[j] = r_edrawn[j]

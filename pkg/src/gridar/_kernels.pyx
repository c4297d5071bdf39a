# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled decode kernel.

Line-for-line mirror of _pure.decode_scene: identical operation order and the
same libm log/exp the interpreter uses, so both backends emit identical token
streams.  Edit the two together or not at all.
"""

from libc.math cimport log, exp, INFINITY

from .errors import DegenerateDistribution


def decode_scene(task):
    """Run task.n_steps of guided scene-model decoding (see kernels.SceneDecodeTask)."""
    cdef int K = task.K
    if K > 64:
        raise ValueError(f"codebook size {K} exceeds compiled kernel cap 64")
    cdef int w = task.w
    cdef int start_pos = task.start_pos
    cdef int n_steps = task.n_steps
    cdef int eager_rows = task.eager_rows
    cdef int mode = task.mode
    cdef double s_o = task.s_o
    cdef double s_r = task.s_r
    cdef double eps = task.eps
    cdef double floor = task.floor
    cdef double alpha = task.alpha
    cdef double a_sp = task.a_sp
    cdef double gamma = task.gamma
    cdef double beta_log = log(<double> task.beta)
    cdef double sp_log = log(a_sp) if a_sp > 0.0 else -INFINITY
    cdef double temperature = task.temperature
    cdef bint use_o = mode != 2
    cdef bint use_r = mode != 0

    cdef const double[::1] lu = task.lu
    cdef int[::1] drawn = task.drawn
    cdef const signed char[::1] o_req = task.o_req
    cdef const int[::1] o_quota = task.o_quota
    cdef const double[::1] o_blind = task.o_blind
    cdef const int[:, ::1] o_cover = task.o_cover
    cdef const int[::1] o_equota = task.o_equota
    cdef int[::1] o_edrawn = task.o_edrawn
    cdef const signed char[::1] r_req = task.r_req
    cdef const int[::1] r_quota = task.r_quota
    cdef const double[::1] r_blind = task.r_blind
    cdef const int[:, ::1] r_cover = task.r_cover
    cdef const int[::1] r_equota = task.r_equota
    cdef int[::1] r_edrawn = task.r_edrawn
    cdef const double[::1] uniforms = task.uniforms
    cdef int[::1] out = task.out

    cdef int n_obj = K - 1
    cdef double la[64]
    cdef double lb[64]
    cdef double z[64]
    cdef double weights[64]
    cdef double o_blind_plain[64]
    cdef double o_blind_eager[64]
    cdef double r_blind_plain[64]
    cdef double r_blind_eager[64]

    cdef int i, k, t, pos, row, eid, need, token
    cdef bint eager
    cdef double g, a, b, v, d_o, d_r, dot, nrm, coef, m, total, zk, wk, target, acc

    # blind-weight logs are row-regime dependent; precompute both regimes
    # with the same product-then-log order the session path uses
    for t in range(n_obj):
        o_blind_plain[t] = log(o_blind[t]) if o_blind[t] > 0.0 else -INFINITY
        o_blind_eager[t] = log(o_blind[t] * gamma) if o_blind[t] > 0.0 else -INFINITY
        r_blind_plain[t] = log(r_blind[t]) if r_blind[t] > 0.0 else -INFINITY
        r_blind_eager[t] = log(r_blind[t] * gamma) if r_blind[t] > 0.0 else -INFINITY

    for i in range(n_steps):
        pos = start_pos + i
        row = pos // w
        eager = row < eager_rows
        g = gamma if eager else 1.0

        if use_o:
            la[0] = beta_log
            for t in range(n_obj):
                if not o_req[t]:
                    la[t + 1] = sp_log
                    continue
                eid = o_cover[row, t]
                if eid >= 0:
                    need = o_equota[eid] - o_edrawn[eid]
                    la[t + 1] = log(alpha * need * g) if need > 0 else -INFINITY
                else:
                    if drawn[t] < o_quota[t]:
                        la[t + 1] = o_blind_eager[t] if eager else o_blind_plain[t]
                    else:
                        la[t + 1] = -INFINITY
        if use_r:
            lb[0] = beta_log
            for t in range(n_obj):
                if not r_req[t]:
                    lb[t + 1] = sp_log
                    continue
                eid = r_cover[row, t]
                if eid >= 0:
                    need = r_equota[eid] - r_edrawn[eid]
                    lb[t + 1] = log(alpha * need * g) if need > 0 else -INFINITY
                else:
                    if drawn[t] < r_quota[t]:
                        lb[t + 1] = r_blind_eager[t] if eager else r_blind_plain[t]
                    else:
                        lb[t + 1] = -INFINITY

        if mode == 0:
            for k in range(K):
                a = la[k]
                if a < floor:
                    a = floor
                v = a + s_o * (a - lu[k])
                z[k] = v if v > floor else -INFINITY
        elif mode == 2:
            for k in range(K):
                a = lb[k]
                if a < floor:
                    a = floor
                v = a + s_r * (a - lu[k])
                z[k] = v if v > floor else -INFINITY
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
                z[k] = v if v > floor else -INFINITY

        m = -INFINITY
        for k in range(K):
            if z[k] > m:
                m = z[k]
        if m == -INFINITY:
            raise DegenerateDistribution(f"all guided logits -inf at position {pos}")
        total = 0.0
        for k in range(K):
            zk = z[k]
            wk = exp((zk - m) / temperature) if zk != -INFINITY else 0.0
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

        out[i] = token
        if token != 0:
            t = token - 1
            drawn[t] += 1
            if use_o:
                eid = o_cover[row, t]
                if eid >= 0:
                    o_edrawn[eid] += 1
            if use_r:
                eid = r_cover[row, t]
                if eid >= 0:
                    r_edrawn[eid] += 1

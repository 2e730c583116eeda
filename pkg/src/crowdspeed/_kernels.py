"""Hot stepping loops, jit-compiled.

Heading draws are precomputed outside (they do not depend on position);
the kernels carry only the cos/sin components of the current heading,
flipping their signs on specular wall reflections.  Link crossings are
counted when consecutive x positions straddle a link, strict on the
departing side so that sitting exactly on a link never double-counts.
"""

from numba import njit


@njit(cache=True)
def walk_closed(
    x, c, u_keep, cos_fresh, keep_p, v1, v2, dt, b1, b, x1, x2, offset, burn_in, y1, y2
):
    """Advance one closed-area walker by len(u_keep) steps.

    Records crossings into y1/y2 at global step index (offset + k) - burn_in
    once past the burn-in.  Returns the carried state (x, c).
    """
    n = u_keep.shape[0]
    for k in range(n):
        v = v1 if x < b1 else v2
        xn = x + v * dt * c
        while xn < 0.0 or xn > b:
            if xn < 0.0:
                xn = -xn
            else:
                xn = 2.0 * b - xn
            c = -c
        g = offset + k - burn_in
        if g >= 0:
            if (x < x1 and xn >= x1) or (x > x1 and xn <= x1):
                y1[g] += 1
            if (x < x2 and xn >= x2) or (x > x2 and xn <= x2):
                y2[g] += 1
        x = xn
        if u_keep[k] >= keep_p:
            c = cos_fresh[k]
    return x, c


@njit(cache=True)
def walk_closed_traj(
    x,
    y,
    c,
    s,
    u_keep,
    cos_fresh,
    sin_fresh,
    keep_p,
    v1,
    v2,
    dt,
    b1,
    b,
    ell,
    x1,
    x2,
    offset,
    burn_in,
    y1,
    y2,
    xs,
    ys,
    cs,
    ss,
):
    """walk_closed plus the y coordinate and a recorded trajectory.

    Records the post-burn-in state sequence; slot g holds the state at
    post-burn-in step g, so xs needs n_steps + 1 slots including the state
    reached after the final transition.
    """
    n = u_keep.shape[0]
    for k in range(n):
        g = offset + k - burn_in
        if g >= 0:
            xs[g] = x
            ys[g] = y
            cs[g] = c
            ss[g] = s
        v = v1 if x < b1 else v2
        xn = x + v * dt * c
        yn = y + v * dt * s
        while xn < 0.0 or xn > b:
            if xn < 0.0:
                xn = -xn
            else:
                xn = 2.0 * b - xn
            c = -c
        while yn < 0.0 or yn > ell:
            if yn < 0.0:
                yn = -yn
            else:
                yn = 2.0 * ell - yn
            s = -s
        if g >= 0:
            if (x < x1 and xn >= x1) or (x > x1 and xn <= x1):
                y1[g] += 1
            if (x < x2 and xn >= x2) or (x > x2 and xn <= x2):
                y2[g] += 1
        x = xn
        y = yn
        if u_keep[k] >= keep_p:
            c = cos_fresh[k]
            s = sin_fresh[k]
    g = offset + n - burn_in
    if g >= 0:
        xs[g] = x
        ys[g] = y
        cs[g] = c
        ss[g] = s
    return x, y, c, s


@njit(cache=True)
def walk_open(
    x,
    y,
    c,
    s,
    direction,
    u_keep,
    cos_fresh,
    sin_fresh,
    keep_p,
    v1,
    v2,
    dt,
    b1,
    b,
    ell,
    x1,
    x2,
    start_step,
    y1,
    y2,
    record,
    xs,
    ys,
    cs,
    ss,
):
    """Advance an open-area walker until exit, horizon, or draws exhausted.

    Returns (x, y, c, s, steps_taken, exited).  Crossings land at absolute
    step indices; the horizon is len(y1).  When ``record`` is nonzero the
    per-chunk state sequence is written into xs/ys/cs/ss (slot k = state
    before local step k).
    """
    n = u_keep.shape[0]
    horizon = y1.shape[0]
    for k in range(n):
        g = start_step + k
        if g >= horizon:
            return x, y, c, s, k, False
        if record != 0:
            xs[k] = x
            ys[k] = y
            cs[k] = c
            ss[k] = s
        v = v1 if x < b1 else v2
        xn = x + v * dt * c
        yn = y + v * dt * s
        while yn < 0.0 or yn > ell:
            if yn < 0.0:
                yn = -yn
            else:
                yn = 2.0 * ell - yn
            s = -s
        if (x < x1 and xn >= x1) or (x > x1 and xn <= x1):
            y1[g] += 1
        if (x < x2 and xn >= x2) or (x > x2 and xn <= x2):
            y2[g] += 1
        x = xn
        y = yn
        if (direction > 0 and x >= b) or (direction < 0 and x <= 0.0):
            return x, y, c, s, k + 1, True
        if u_keep[k] >= keep_p:
            c = cos_fresh[k]
            s = sin_fresh[k]
    return x, y, c, s, n, False

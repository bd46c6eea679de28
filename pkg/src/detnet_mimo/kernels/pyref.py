"""NumPy reference implementation of the hot kernels.

Semantics here are the contract; the compiled backend must match it to
floating-point noise.  Every function is batched over the leading axis.

Shapes:
    hty   (B, K)      H^T y per sample
    gram  (B, K, K)   H^T H per sample (symmetric)
    w1    (L, Z, D)   D = 3K + V, layer input is [H^T y; x; H^T H x; v]
    w2    (L, K, Z)   w3 (L, V, Z)   b1 (L, Z)  b2 (L, K)  b3 (L, V)
    t     (L,)        soft-sign scales
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def gram_and_hty(h: np.ndarray, y: np.ndarray):
    """Per-sample H^T H and H^T y for h (B,N,K), y (B,N)."""
    ht = h.transpose(0, 2, 1)
    gram = ht @ h
    hty = (ht @ y[:, :, None])[:, :, 0]
    return gram, hty


def detnet_forward(w1, b1, w2, b2, w3, b3, t, alpha, hty, gram):
    """Full forward pass, returning the caches the backward pass needs.

    Returns (qs, zs, ss, xs, vs):
        qs (B, L, D) layer inputs, zs (B, L, Z) hidden activations,
        ss (B, L, K) pre-soft-sign values, xs (B, L, K) layer outputs,
        vs (B, L, V) carried side states.
    """
    big_l, z_size, d = w1.shape
    k = w2.shape[1]
    v_size = w3.shape[1]
    b = hty.shape[0]
    one_m_alpha = 1.0 - alpha

    qs = np.empty((b, big_l, d))
    zs = np.empty((b, big_l, z_size))
    ss = np.empty((b, big_l, k))
    xs = np.empty((b, big_l, k))
    vs = np.empty((b, big_l, v_size))

    x = np.zeros((b, k))
    v = np.zeros((b, v_size))
    for j in range(big_l):
        gx = (gram @ x[:, :, None])[:, :, 0]
        q = np.concatenate([hty, x, gx, v], axis=1)
        z = np.maximum(q @ w1[j].T + b1[j], 0.0)
        s = z @ w2[j].T + b2[j]
        at = abs(t[j])
        x = alpha * np.clip(s / at, -1.0, 1.0) + one_m_alpha * x
        v = alpha * (z @ w3[j].T + b3[j]) + one_m_alpha * v
        qs[:, j] = q
        zs[:, j] = z
        ss[:, j] = s
        xs[:, j] = x
        vs[:, j] = v
    return qs, zs, ss, xs, vs


def detnet_detect(w1, b1, w2, b2, w3, b3, t, alpha, hty, gram, exit_layer):
    """Lean forward pass: only the soft output at ``exit_layer`` (1-based)."""
    k = w2.shape[1]
    v_size = w3.shape[1]
    b = hty.shape[0]
    one_m_alpha = 1.0 - alpha

    x = np.zeros((b, k))
    v = np.zeros((b, v_size))
    for j in range(exit_layer):
        gx = (gram @ x[:, :, None])[:, :, 0]
        q = np.concatenate([hty, x, gx, v], axis=1)
        z = np.maximum(q @ w1[j].T + b1[j], 0.0)
        s = z @ w2[j].T + b2[j]
        at = abs(t[j])
        x = alpha * np.clip(s / at, -1.0, 1.0) + one_m_alpha * x
        v = alpha * (z @ w3[j].T + b3[j]) + one_m_alpha * v
    return x


def detnet_backward(w1, w2, w3, t, alpha, gram, qs, zs, ss, xs, x_true, norm, weights):
    """Reverse-mode gradients of the layer-weighted normalized loss.

    loss = mean_b sum_j weights[j] * ||x_true_b - xs_bj||^2 / norm_b

    Kink conventions: relu'(0) = 0; the soft-sign derivative is 1/|t| on
    |s| <= |t| (boundary included) and 0 outside; d(psi)/dt follows the same
    region split.  Returns (loss, gw1, gb1, gw2, gb2, gw3, gb3, gt), all
    means over the batch.
    """
    big_l, z_size, _ = w1.shape
    k = w2.shape[1]
    v_size = w3.shape[1]
    b = xs.shape[0]
    one_m_alpha = 1.0 - alpha

    err = xs - x_true[:, None, :]
    loss = float(np.mean((err**2).sum(axis=2) @ weights / norm))

    gw1 = np.zeros_like(w1)
    gb1 = np.zeros((big_l, z_size))
    gw2 = np.zeros_like(w2)
    gb2 = np.zeros((big_l, k))
    gw3 = np.zeros_like(w3)
    gb3 = np.zeros((big_l, v_size))
    gt = np.zeros(big_l)

    gx = np.zeros((b, k))
    gv = np.zeros((b, v_size))
    inv_norm = 1.0 / norm
    for j in range(big_l - 1, -1, -1):
        gx = gx + (2.0 * weights[j]) * inv_norm[:, None] * err[:, j]
        gr = alpha * gx
        gc = alpha * gv

        at = abs(t[j])
        in_linear = np.abs(ss[:, j]) <= at
        gs = np.where(in_linear, gr / at, 0.0)
        sign_t = 1.0 if t[j] >= 0.0 else -1.0
        gt[j] = float(
            np.sum(np.where(in_linear, gr * (-ss[:, j] * sign_t / (t[j] * t[j])), 0.0))
        )

        z = zs[:, j]
        gz = gs @ w2[j] + gc @ w3[j]
        ga = np.where(z > 0.0, gz, 0.0)

        gw2[j] = gs.T @ z
        gb2[j] = gs.sum(axis=0)
        gw3[j] = gc.T @ z
        gb3[j] = gc.sum(axis=0)
        gw1[j] = ga.T @ qs[:, j]
        gb1[j] = ga.sum(axis=0)

        gq = ga @ w1[j]
        gx = (
            one_m_alpha * gx
            + gq[:, k : 2 * k]
            + (gram @ gq[:, 2 * k : 3 * k, None])[:, :, 0]
        )
        gv = one_m_alpha * gv + gq[:, 3 * k :]

    inv_b = 1.0 / b
    return (
        loss,
        gw1 * inv_b,
        gb1 * inv_b,
        gw2 * inv_b,
        gb2 * inv_b,
        gw3 * inv_b,
        gb3 * inv_b,
        gt * inv_b,
    )


def amp_detect(h, y, sigma2, num_iterations):
    """Approximate-message-passing posterior means for BPSK.

    Works on the column-normalized system A = H/sqrt(N), y0 = y/sqrt(N),
    whose per-entry noise variance is sigma2/N; the denoiser is
    tanh(r / tau^2) and tau^2 tracks sigma2/N + (K/N) * mean(1 - x^2).
    Samples whose iterates go non-finite are frozen at the last finite
    estimate.  Returns (soft (B,K), iterations_used (B,)).
    """
    b, n, k = h.shape
    sqrt_n = np.sqrt(float(n))
    a = h / sqrt_n
    at = a.transpose(0, 2, 1)
    y0 = y / sqrt_n
    beta = k / n
    s2 = sigma2 / n

    x = np.zeros((b, k))
    z = y0.copy()
    tau2 = s2 + beta
    iters_used = np.zeros(b, dtype=np.int64)
    alive = np.ones(b, dtype=bool)
    for it in range(1, num_iterations + 1):
        r = x + (at @ z[:, :, None])[:, :, 0]
        x_new = np.tanh(r / tau2[:, None])
        mse = np.mean(1.0 - x_new * x_new, axis=1)
        z_new = (
            y0
            - (a @ x_new[:, :, None])[:, :, 0]
            + (beta / tau2 * mse)[:, None] * z
        )
        tau2_new = s2 + beta * mse
        finite = (
            np.isfinite(x_new).all(axis=1)
            & np.isfinite(z_new).all(axis=1)
            & np.isfinite(tau2_new)
        )
        upd = alive & finite
        x[upd] = x_new[upd]
        z[upd] = z_new[upd]
        tau2[upd] = tau2_new[upd]
        iters_used[upd] = it
        alive &= finite
    return x, iters_used


def ml_detect(h, y):
    """Exhaustive minimum-distance search over {+/-1}^K.

    Candidates are scanned in lexicographic order (-1 before +1), keeping the
    first strict minimum, so ties break toward the lexicographically smallest
    vector.  Returns xhat (B, K).
    """
    b, n, k = h.shape
    total = 1 << k
    chunk = min(total, 4096)
    shifts = np.arange(k - 1, -1, -1, dtype=np.uint64)

    best_obj = np.full(b, np.inf)
    best_x = np.zeros((b, k))
    rows = np.arange(b)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.uint64)
        cand = (((idx[:, None] >> shifts) & 1) * 2.0 - 1.0).astype(np.float64)
        diff = y[:, :, None] - h @ cand.T[None, :, :]
        obj = np.einsum("bnc,bnc->bc", diff, diff)
        loc = np.argmin(obj, axis=1)
        val = obj[rows, loc]
        better = val < best_obj
        best_obj[better] = val[better]
        best_x[better] = cand[loc[better]]
    return best_x

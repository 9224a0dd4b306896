"""Layer primitives with explicit forward caches and backward passes.

Every ``*_fwd`` returns ``(out, cache)``; the matching ``*_bwd`` consumes
``(dout, cache)`` and returns input gradients plus parameter gradients.
All functions preserve the dtype of their inputs (float32 for training,
float64 for gradient checks).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_LN_EPS = 1e-6
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def linear_fwd(x, w, b):
    return x @ w + b, (x, w)


def linear_bwd(dout, cache):
    x, w = cache
    dx = dout @ w.T
    dw = np.einsum("...i,...j->ij", x, dout)
    db = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
    return dx, dw, db


def layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def layernorm_bwd(dout, cache):
    xhat, inv, g = cache
    n = xhat.shape[-1]
    dg = np.einsum("...i,...i->i", dout, xhat)
    db = dout.reshape(-1, n).sum(axis=0)
    dxhat = dout * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def gelu_fwd(x):
    # Exact (erf-based) GELU: x * Phi(x).
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * cdf, (x, cdf)


def gelu_bwd(dout, cache):
    x, cdf = cache
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return dout * (cdf + x * pdf)


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def attention_fwd(x, p, prefix, n_heads):
    """Multi-head self-attention over (batch, tokens, dim)."""
    q, qc = linear_fwd(x, p[f"{prefix}.attn.wq"], p[f"{prefix}.attn.bq"])
    k, kc = linear_fwd(x, p[f"{prefix}.attn.wk"], p[f"{prefix}.attn.bk"])
    v, vc = linear_fwd(x, p[f"{prefix}.attn.wv"], p[f"{prefix}.attn.bv"])
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    scale = 1.0 / np.sqrt(qh.shape[-1])
    scores = np.matmul(qh, kh.transpose(0, 1, 3, 2)) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    expo = np.exp(scores)
    att = expo / expo.sum(axis=-1, keepdims=True)
    ctx = _merge_heads(np.matmul(att, vh))
    out, oc = linear_fwd(ctx, p[f"{prefix}.attn.wo"], p[f"{prefix}.attn.bo"])
    return out, (qc, kc, vc, oc, qh, kh, vh, att, scale, n_heads)


def attention_bwd(dout, cache, grads, prefix):
    qc, kc, vc, oc, qh, kh, vh, att, scale, n_heads = cache
    dctx, dwo, dbo = linear_bwd(dout, oc)
    grads[f"{prefix}.attn.wo"] = dwo
    grads[f"{prefix}.attn.bo"] = dbo

    dctx_h = _split_heads(dctx, n_heads)
    datt = np.matmul(dctx_h, vh.transpose(0, 1, 3, 2))
    dvh = np.matmul(att.transpose(0, 1, 3, 2), dctx_h)
    dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
    dscores *= scale
    dqh = np.matmul(dscores, kh)
    dkh = np.matmul(dscores.transpose(0, 1, 3, 2), qh)

    dq, dk, dv = (_merge_heads(t) for t in (dqh, dkh, dvh))
    dx_q, dwq, dbq = linear_bwd(dq, qc)
    dx_k, dwk, dbk = linear_bwd(dk, kc)
    dx_v, dwv, dbv = linear_bwd(dv, vc)
    grads[f"{prefix}.attn.wq"], grads[f"{prefix}.attn.bq"] = dwq, dbq
    grads[f"{prefix}.attn.wk"], grads[f"{prefix}.attn.bk"] = dwk, dbk
    grads[f"{prefix}.attn.wv"], grads[f"{prefix}.attn.bv"] = dwv, dbv
    return dx_q + dx_k + dx_v


def block_fwd(x, p, prefix, n_heads):
    """Pre-norm transformer block: x + MHSA(LN(x)), then x + FFN(LN(x))."""
    a, ln1c = layernorm_fwd(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    attn_out, attnc = attention_fwd(a, p, prefix, n_heads)
    x1 = x + attn_out
    h, ln2c = layernorm_fwd(x1, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    f1, f1c = linear_fwd(h, p[f"{prefix}.ffn.w1"], p[f"{prefix}.ffn.b1"])
    g1, gc = gelu_fwd(f1)
    f2, f2c = linear_fwd(g1, p[f"{prefix}.ffn.w2"], p[f"{prefix}.ffn.b2"])
    return x1 + f2, (ln1c, attnc, ln2c, f1c, gc, f2c)


def block_bwd(dout, cache, grads, prefix, n_heads):
    ln1c, attnc, ln2c, f1c, gc, f2c = cache
    dg1, dw2, db2 = linear_bwd(dout, f2c)
    grads[f"{prefix}.ffn.w2"], grads[f"{prefix}.ffn.b2"] = dw2, db2
    df1 = gelu_bwd(dg1, gc)
    dh, dw1, db1 = linear_bwd(df1, f1c)
    grads[f"{prefix}.ffn.w1"], grads[f"{prefix}.ffn.b1"] = dw1, db1
    dx1, dg2, dbt2 = layernorm_bwd(dh, ln2c)
    grads[f"{prefix}.ln2.g"], grads[f"{prefix}.ln2.b"] = dg2, dbt2
    dx1 = dx1 + dout

    da = attention_bwd(dx1, attnc, grads, prefix)
    dx, dg1_, db1_ = layernorm_bwd(da, ln1c)
    grads[f"{prefix}.ln1.g"], grads[f"{prefix}.ln1.b"] = dg1_, db1_
    return dx + dx1

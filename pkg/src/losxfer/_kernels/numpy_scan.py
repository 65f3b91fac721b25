"""Pure-numpy recurrent scan, the fallback backend.

Both backends implement the same contract. Inputs use the frozen gate-block
layout on the 4H axis: [input i | forget f | candidate c~ | output o].
The input projection (X @ kernel + bias) is done by the caller once per batch
as a single GEMM; the scan only carries the recurrence.

ReLU derivatives are taken as 0 at exactly 0.
"""

import numpy as np

name = "numpy"


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def scan_forward(x_proj, wh):
    """Run the LSTM recurrence over time.

    x_proj: (m, T, 4H) pre-activations from inputs (X @ kernel + bias).
    wh: (H, 4H) recurrent kernel.

    Returns (hseq, cseq, gates):
      hseq  (m, T, H)  hidden states,
      cseq  (m, T, H)  cell states,
      gates (m, T, 4H) post-activation gate values [i | f | c~ | o].
    """
    m, steps, four_h = x_proj.shape
    hidden = four_h // 4
    hseq = np.empty((m, steps, hidden))
    cseq = np.empty((m, steps, hidden))
    gates = np.empty((m, steps, four_h))
    h = np.zeros((m, hidden))
    c = np.zeros((m, hidden))
    for t in range(steps):
        z = x_proj[:, t, :] + h @ wh
        gi = _sigmoid(z[:, :hidden])
        gf = _sigmoid(z[:, hidden : 2 * hidden])
        gc = np.maximum(z[:, 2 * hidden : 3 * hidden], 0.0)
        go = _sigmoid(z[:, 3 * hidden :])
        c = gf * c + gi * gc
        h = go * np.maximum(c, 0.0)
        gates[:, t, :hidden] = gi
        gates[:, t, hidden : 2 * hidden] = gf
        gates[:, t, 2 * hidden : 3 * hidden] = gc
        gates[:, t, 3 * hidden :] = go
        cseq[:, t, :] = c
        hseq[:, t, :] = h
    return hseq, cseq, gates


def scan_backward(wh, gates, cseq, dhseq):
    """Backpropagate through the recurrence.

    wh: (H, 4H); gates, cseq: forward caches; dhseq: (m, T, H) gradient of the
    loss w.r.t. every hidden state (zeros except t=T-1 for many-to-one).

    Returns dz (m, T, 4H), the gradient w.r.t. the gate pre-activations; the
    caller turns dz into parameter and input gradients with batched GEMMs.
    """
    m, steps, hidden = dhseq.shape
    dz = np.empty((m, steps, 4 * hidden))
    dh_rec = np.zeros((m, hidden))
    dc = np.zeros((m, hidden))
    for t in range(steps - 1, -1, -1):
        gi = gates[:, t, :hidden]
        gf = gates[:, t, hidden : 2 * hidden]
        gc = gates[:, t, 2 * hidden : 3 * hidden]
        go = gates[:, t, 3 * hidden :]
        c = cseq[:, t, :]
        c_prev = cseq[:, t - 1, :] if t > 0 else np.zeros((m, hidden))
        dh = dhseq[:, t, :] + dh_rec
        do = dh * np.maximum(c, 0.0)
        dc = dc + dh * go * (c > 0.0)
        dz_t = dz[:, t, :]
        dz_t[:, :hidden] = dc * gc * gi * (1.0 - gi)
        dz_t[:, hidden : 2 * hidden] = dc * c_prev * gf * (1.0 - gf)
        dz_t[:, 2 * hidden : 3 * hidden] = dc * gi * (gc > 0.0)
        dz_t[:, 3 * hidden :] = do * go * (1.0 - go)
        dh_rec = dz_t @ wh.T
        dc = dc * gf
    return dz

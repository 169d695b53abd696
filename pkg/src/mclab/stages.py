"""Differentiable stages of the staged classifier, with manual backprop.

Every stage works on float64 batches and exposes:

    forward(x)            -> (output, cache)
    backward(dout, cache) -> (dx, grads)
    params() / grads keys -> ordered (name, array) pairs

Gradients are exact analytic derivatives of the forward pass; the test suite
checks each stage (and the composed model) against central finite differences.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "AttentionStage",
    "ConvStage",
    "HeadStage",
    "LstmStage",
    "relu",
    "sigmoid",
    "softmax",
]


def sigmoid(z: np.ndarray) -> np.ndarray:
    # piecewise form avoids overflow in exp for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


class ConvStage:
    """Stacked conv(3x3, stride 1, pad 1) + ReLU + maxpool(2x2, stride 2) blocks."""

    def __init__(self, in_channels: int, plan: tuple[int, ...], gen: np.random.Generator):
        self.in_channels = int(in_channels)
        self.plan = tuple(int(c) for c in plan)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        ci = self.in_channels
        for co in self.plan:
            scale = 1.0 / np.sqrt(ci * 9)
            self.weights.append(gen.standard_normal((co, ci, 3, 3)) * scale)
            self.biases.append(np.zeros(co))
            ci = co

    def params(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"conv{i}.w", w))
            out.append((f"conv{i}.b", b))
        return out

    @staticmethod
    def _conv3x3(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
        # xp: padded input (B, C, H+2, W+2); w: (O, C, 3, 3) -> (B, O, H, W)
        b_n, _, hp, wp = xp.shape
        h, wd = hp - 2, wp - 2
        acc = np.zeros((b_n, h, wd, w.shape[0]))
        for di in range(3):
            for dj in range(3):
                xs = xp[:, :, di : di + h, dj : dj + wd]
                acc += np.tensordot(xs, w[:, :, di, dj], axes=([1], [1]))
        return np.ascontiguousarray(acc.transpose(0, 3, 1, 2))

    @staticmethod
    def _maxpool(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        b_n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        if h2 == 0 or w2 == 0:
            raise ValueError(f"spatial size {h}x{w} too small to pool")
        win = (
            x[:, :, : h2 * 2, : w2 * 2]
            .reshape(b_n, c, h2, 2, w2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b_n, c, h2, w2, 4)
        )
        arg = win.argmax(axis=-1)  # first max wins; deterministic routing
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        return out, arg

    @staticmethod
    def _maxpool_backward(dout: np.ndarray, arg: np.ndarray, in_shape: tuple) -> np.ndarray:
        b_n, c, h, w = in_shape
        h2, w2 = h // 2, w // 2
        dwin = np.zeros((b_n, c, h2, w2, 4))
        np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
        dx = np.zeros(in_shape)
        dx[:, :, : h2 * 2, : w2 * 2] = (
            dwin.reshape(b_n, c, h2, w2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b_n, c, h2 * 2, w2 * 2)
        )
        return dx

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        cache = []
        for w, b in zip(self.weights, self.biases):
            xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
            pre = self._conv3x3(xp, w) + b[None, :, None, None]
            act = relu(pre)
            out, arg = self._maxpool(act)
            cache.append((xp, pre > 0, act.shape, arg))
            x = out
        return x, cache

    def backward(self, dout: np.ndarray, cache: list) -> tuple[np.ndarray, dict]:
        grads: dict[str, np.ndarray] = {}
        for i in range(len(self.weights) - 1, -1, -1):
            xp, mask, act_shape, arg = cache[i]
            dact = self._maxpool_backward(dout, arg, act_shape)
            dpre = dact * mask
            w = self.weights[i]
            h, wd = dpre.shape[2], dpre.shape[3]
            dw = np.zeros_like(w)
            dxp = np.zeros_like(xp)
            for di in range(3):
                for dj in range(3):
                    xs = xp[:, :, di : di + h, dj : dj + wd]
                    # dW[o,c] = sum_bhw dpre[b,o,h,w] * xs[b,c,h,w]
                    dw[:, :, di, dj] = np.tensordot(dpre, xs, axes=([0, 2, 3], [0, 2, 3]))
                    contrib = np.tensordot(dpre, w[:, :, di, dj], axes=([1], [0]))
                    dxp[:, :, di : di + h, dj : dj + wd] += contrib.transpose(0, 3, 1, 2)
            grads[f"conv{i}.w"] = dw
            grads[f"conv{i}.b"] = dpre.sum(axis=(0, 2, 3))
            dout = dxp[:, :, 1:-1, 1:-1]
        return dout, grads


class LstmStage:
    """Single LSTM cell unrolled over the sequence axis.

    Combined gate weights in (input, forget, cell, output) order; the forget
    gate bias starts at 1 so early gradients flow through the cell state.
    """

    def __init__(self, input_size: int, hidden_size: int, gen: np.random.Generator):
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        d, h = self.input_size, self.hidden_size
        self.wx = gen.standard_normal((d, 4 * h)) / np.sqrt(d)
        self.wh = gen.standard_normal((h, 4 * h)) / np.sqrt(h)
        self.b = np.zeros(4 * h)
        self.b[h : 2 * h] = 1.0

    def params(self) -> list[tuple[str, np.ndarray]]:
        return [("lstm.wx", self.wx), ("lstm.wh", self.wh), ("lstm.b", self.b)]

    def forward(self, seq: np.ndarray) -> tuple[np.ndarray, list]:
        b_n, t_len, d = seq.shape
        if d != self.input_size:
            raise ValueError(f"sequence feature size {d} != {self.input_size}")
        h_n = self.hidden_size
        h = np.zeros((b_n, h_n))
        c = np.zeros((b_n, h_n))
        hs = np.empty((b_n, t_len, h_n))
        cache = []
        for t in range(t_len):
            x_t = seq[:, t]
            z = x_t @ self.wx + h @ self.wh + self.b
            i = sigmoid(z[:, :h_n])
            f = sigmoid(z[:, h_n : 2 * h_n])
            g = np.tanh(z[:, 2 * h_n : 3 * h_n])
            o = sigmoid(z[:, 3 * h_n :])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            cache.append((x_t, h, c, i, f, g, o, tc))
            h, c = h_new, c_new
            hs[:, t] = h
        return hs, cache

    def backward(self, dhs: np.ndarray, cache: list) -> tuple[np.ndarray, dict]:
        b_n, t_len, _ = dhs.shape
        h_n = self.hidden_size
        dwx = np.zeros_like(self.wx)
        dwh = np.zeros_like(self.wh)
        db = np.zeros_like(self.b)
        dseq = np.empty((b_n, t_len, self.input_size))
        dh_next = np.zeros((b_n, h_n))
        dc_next = np.zeros((b_n, h_n))
        for t in range(t_len - 1, -1, -1):
            x_t, h_prev, c_prev, i, f, g, o, tc = cache[t]
            dh = dhs[:, t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dc_next = dc * f
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            dwx += x_t.T @ dz
            dwh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dseq[:, t] = dz @ self.wx.T
            dh_next = dz @ self.wh.T
        return dseq, {"lstm.wx": dwx, "lstm.wh": dwh, "lstm.b": db}


class AttentionStage:
    """Scaled dot-product self-attention with one output projection.

    Head-count generic; the default configuration uses a single head. The
    attention weights for each query position form a probability distribution
    over the T key positions.
    """

    def __init__(self, width: int, n_heads: int, gen: np.random.Generator):
        if width % n_heads != 0:
            raise ValueError(f"width {width} not divisible by {n_heads} heads")
        self.width = int(width)
        self.n_heads = int(n_heads)
        d = self.width
        scale = 1.0 / np.sqrt(d)
        self.wq = gen.standard_normal((d, d)) * scale
        self.wk = gen.standard_normal((d, d)) * scale
        self.wv = gen.standard_normal((d, d)) * scale
        self.wo = gen.standard_normal((d, d)) * scale
        self.bq = np.zeros(d)
        self.bk = np.zeros(d)
        self.bv = np.zeros(d)
        self.bo = np.zeros(d)

    def params(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("attn.wq", self.wq), ("attn.bq", self.bq),
            ("attn.wk", self.wk), ("attn.bk", self.bk),
            ("attn.wv", self.wv), ("attn.bv", self.bv),
            ("attn.wo", self.wo), ("attn.bo", self.bo),
        ]

    def _split(self, x: np.ndarray) -> np.ndarray:
        b_n, t_len, _ = x.shape
        dk = self.width // self.n_heads
        return x.reshape(b_n, t_len, self.n_heads, dk).transpose(0, 2, 1, 3)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        b_n, _, t_len, _ = x.shape
        return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b_n, t_len, self.width)

    def forward(self, hs: np.ndarray) -> tuple[np.ndarray, tuple]:
        dk = self.width // self.n_heads
        q = self._split(hs @ self.wq + self.bq)
        k = self._split(hs @ self.wk + self.bk)
        v = self._split(hs @ self.wv + self.bv)
        scores = (q @ k.transpose(0, 1, 3, 2)) / np.sqrt(dk)
        attn = softmax(scores, axis=-1)
        ctx = self._merge(attn @ v)
        out = ctx @ self.wo + self.bo
        return out, (hs, q, k, v, attn, ctx)

    def backward(self, dout: np.ndarray, cache: tuple) -> tuple[np.ndarray, dict]:
        hs, q, k, v, attn, ctx = cache
        b_n, t_len, d = hs.shape
        dk_w = self.width // self.n_heads
        flat = lambda a: a.reshape(-1, a.shape[-1])

        dwo = flat(ctx).T @ flat(dout)
        dbo = dout.sum(axis=(0, 1))
        dctx = self._split(dout @ self.wo.T)

        dattn = dctx @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dscores /= np.sqrt(dk_w)
        dq = dscores @ k
        dk_ = dscores.transpose(0, 1, 3, 2) @ q

        dq_m, dk_m, dv_m = self._merge(dq), self._merge(dk_), self._merge(dv)
        grads = {
            "attn.wq": flat(hs).T @ flat(dq_m), "attn.bq": dq_m.sum(axis=(0, 1)),
            "attn.wk": flat(hs).T @ flat(dk_m), "attn.bk": dk_m.sum(axis=(0, 1)),
            "attn.wv": flat(hs).T @ flat(dv_m), "attn.bv": dv_m.sum(axis=(0, 1)),
            "attn.wo": dwo, "attn.bo": dbo,
        }
        dhs = dq_m @ self.wq.T + dk_m @ self.wk.T + dv_m @ self.wv.T
        return dhs, grads


class HeadStage:
    """Classifier head: linear -> ReLU -> dropout -> linear."""

    def __init__(self, width: int, n_classes: int, gen: np.random.Generator):
        self.width = int(width)
        self.n_classes = int(n_classes)
        self.w1 = gen.standard_normal((width, width)) / np.sqrt(width)
        self.b1 = np.zeros(width)
        self.w2 = gen.standard_normal((width, n_classes)) / np.sqrt(width)
        self.b2 = np.zeros(n_classes)

    def params(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("head.w1", self.w1), ("head.b1", self.b1),
            ("head.w2", self.w2), ("head.b2", self.b2),
        ]

    def forward(
        self, x: np.ndarray, dropout_mask: np.ndarray | None = None
    ) -> tuple[np.ndarray, tuple]:
        z1 = x @ self.w1 + self.b1
        act = relu(z1)
        dropped = act * dropout_mask if dropout_mask is not None else act
        logits = dropped @ self.w2 + self.b2
        return logits, (x, z1 > 0, act, dropped, dropout_mask)

    def backward(self, dlogits: np.ndarray, cache: tuple) -> tuple[np.ndarray, dict]:
        x, mask1, act, dropped, dropout_mask = cache
        dw2 = dropped.T @ dlogits
        db2 = dlogits.sum(axis=0)
        ddropped = dlogits @ self.w2.T
        dact = ddropped * dropout_mask if dropout_mask is not None else ddropped
        dz1 = dact * mask1
        dw1 = x.T @ dz1
        db1 = dz1.sum(axis=0)
        dx = dz1 @ self.w1.T
        return dx, {"head.w1": dw1, "head.b1": db1, "head.w2": dw2, "head.b2": db2}

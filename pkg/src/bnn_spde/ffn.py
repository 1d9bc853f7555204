"""Multiscale Fourier-feature network with analytic input derivatives.

The network maps ``x in R^n`` to a scalar::

    H0_i = [cos(B_i x); sin(B_i x)]               i = 1..I (frozen B_i)
    H_{t+1,i} = sin(W_t H_t,i + b_t)               shared hidden layers
    U(x) = W_T [H_T,1; ...; H_T,I] + b_T

Value, gradient and the diagonal of the Hessian with respect to ``x`` are
propagated forward in closed form; ``backprop`` runs the adjoint of that
propagation so losses may depend on second input derivatives.

Flat parameter layout of one head: for each hidden layer ``W_t`` (row-major,
shape ``(out, in)``) followed by ``b_t``; then ``W_T`` (shape ``(1, I*width)``,
blocks ordered by embedding) followed by the scalar ``b_T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatch
from .numerics import Rng, as_rng

__all__ = ["FfnArch", "EvalBundle", "FourierFeatureNet", "MultiHeadNet"]


@dataclass(frozen=True)
class FfnArch:
    input_dim: int = 1
    n_features: int = 10
    scales: tuple = (1.0, 5.0)
    hidden: tuple = (200,)

    def __post_init__(self):
        if self.input_dim < 1 or self.n_features < 1:
            raise ValueError("input_dim and n_features must be >= 1")
        if len(self.scales) < 1 or any(s <= 0 for s in self.scales):
            raise ValueError("need at least one positive embedding scale")
        if len(self.hidden) < 1 or any(w < 1 for w in self.hidden):
            raise ValueError("need at least one hidden layer of positive width")


@dataclass
class EvalBundle:
    """Value, input gradient and Hessian diagonal at a batch of points."""

    value: np.ndarray  # (P,)
    grad_x: np.ndarray  # (P, n)
    hess_diag: np.ndarray  # (P, n)


@dataclass
class _Tape:
    x: np.ndarray
    layers: list = field(default_factory=list)
    last_h: np.ndarray | None = None
    last_d: np.ndarray | None = None


class FourierFeatureNet:
    """Single-output multiscale Fourier-feature network.

    ``B`` matrices are drawn once from ``N(0, scale^2)`` at construction and
    are not part of the trainable parameter vector.
    """

    def __init__(self, arch: FfnArch, random_state=None, B=None):
        self.arch = arch
        if B is None:
            rng = as_rng(random_state).split("fourier-embedding")
            B = [s * rng.standard_normal((arch.n_features, arch.input_dim)) for s in arch.scales]
        self.B = [np.array(b, dtype=float).reshape(arch.n_features, arch.input_dim) for b in B]
        if len(self.B) != len(arch.scales):
            raise ValueError("one embedding matrix per scale is required")
        for b in self.B:
            b.setflags(write=False)
        widths = (2 * arch.n_features,) + tuple(arch.hidden)
        self._shapes = [(widths[t + 1], widths[t]) for t in range(len(arch.hidden))]
        self._shapes.append((1, len(self.B) * widths[-1]))
        self.n_params = sum(o * i + o for o, i in self._shapes)

    # ----------------------------------------------------------- layout
    @property
    def n_embeddings(self):
        return len(self.B)

    def unpack(self, theta):
        """Views ``[(W_0, b_0), ..., (W_T, b_T)]`` into ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise DimensionMismatch(f"theta has shape {theta.shape}, expected ({self.n_params},)")
        out, pos = [], 0
        for o, i in self._shapes:
            W = theta[pos:pos + o * i].reshape(o, i)
            pos += o * i
            b = theta[pos:pos + o]
            pos += o
            out.append((W, b))
        return out

    def pack(self, layers):
        return np.concatenate([np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in layers])

    def output_slice(self):
        """Slice of ``theta`` holding ``W_T`` and ``b_T``."""
        o, i = self._shapes[-1]
        return slice(self.n_params - o * i - o, self.n_params)

    # -------------------------------------------------------- evaluation
    def _check_points(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 0:
            X = X.reshape(1, 1)
        elif X.ndim == 1:
            X = X[:, None] if self.arch.input_dim == 1 else X[None, :]
        if X.shape[1] != self.arch.input_dim:
            raise DimensionMismatch(f"points of dimension {X.shape[1]}, network expects {self.arch.input_dim}")
        return X

    def embed(self, i, x):
        """Fourier features ``[cos(B_i x); sin(B_i x)]`` of a single point."""
        if not 0 <= i < len(self.B):
            raise IndexError(f"embedding index {i} out of range")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.arch.input_dim,):
            raise DimensionMismatch("point dimension does not match the network input")
        z = self.B[i] @ x
        return np.concatenate([np.cos(z), np.sin(z)])

    def forward(self, theta, X):
        """Network output at each row of ``X``."""
        X = self._check_points(X)
        layers = self.unpack(theta)
        h = self._embed_value(X)
        for W, b in layers[:-1]:
            h = np.sin(h @ W.T + b)
        return self._output(h, layers[-1])

    def _embed_value(self, X):
        z = np.einsum("pn,ibn->ipb", X, np.stack(self.B))
        return np.concatenate([np.cos(z), np.sin(z)], axis=-1)

    def _output(self, h, last):
        W, b = last
        Wr = W.reshape(len(self.B), -1)
        return np.einsum("ipw,iw->p", h, Wr) + b[0]

    def eval_bundle(self, theta, X, tape=False):
        """Value, input gradient and Hessian diagonal at each row of ``X``.

        With ``tape=True`` also returns the intermediate state needed by
        :meth:`backprop`.
        """
        X = self._check_points(X)
        n = self.arch.input_dim
        layers = self.unpack(theta)
        Bs = np.stack(self.B)  # (I, b, n)
        z = np.einsum("pn,ibn->ipb", X, Bs)
        cz, sz = np.cos(z), np.sin(z)
        h = np.concatenate([cz, sz], axis=-1)  # (I, P, 2b)
        Bt = np.transpose(Bs, (2, 0, 1))[:, :, None, :]  # (n, I, 1, b)
        d1 = np.concatenate([-sz[None] * Bt, cz[None] * Bt], axis=-1)
        d2 = np.concatenate([-cz[None] * Bt**2, -sz[None] * Bt**2], axis=-1)
        D = np.concatenate([d1, d2], axis=0)  # (2n, I, P, 2b)
        rec = _Tape(X) if tape else None
        for W, b in layers[:-1]:
            a = h @ W.T + b
            Da = D @ W.T
            da, d2a = Da[:n], Da[n:]
            s, c = np.sin(a), np.cos(a)
            if tape:
                rec.layers.append((h, D, s, c, da, d2a))
            h = s
            D = np.concatenate([c * da, c * d2a - s * da**2], axis=0)
        W, b = layers[-1]
        Wr = W.reshape(len(self.B), -1)
        value = np.einsum("ipw,iw->p", h, Wr) + b[0]
        Dout = np.einsum("cipw,iw->pc", D, Wr)
        bundle = EvalBundle(value, Dout[:, :n], Dout[:, n:])
        if tape:
            rec.last_h, rec.last_d = h, D
            return bundle, rec
        return bundle

    def backprop(self, theta, tape: _Tape, adj_value=None, adj_grad=None, adj_hess=None):
        """Gradient in ``theta`` of ``sum(adj_value*value + adj_grad*grad_x + adj_hess*hess_diag)``."""
        layers = self.unpack(theta)
        P = tape.x.shape[0]
        n = self.arch.input_dim
        av = np.zeros(P) if adj_value is None else np.asarray(adj_value, dtype=float).reshape(P)
        ag = np.zeros((P, n)) if adj_grad is None else np.asarray(adj_grad, dtype=float).reshape(P, n)
        ah = np.zeros((P, n)) if adj_hess is None else np.asarray(adj_hess, dtype=float).reshape(P, n)
        aD = np.concatenate([ag.T, ah.T], axis=0)  # (2n, P)

        grads = [None] * len(layers)
        W, _ = layers[-1]
        Wr = W.reshape(len(self.B), -1)
        h, D = tape.last_h, tape.last_d
        gWr = np.einsum("p,ipw->iw", av, h) + np.einsum("cp,cipw->iw", aD, D)
        grads[-1] = (gWr.reshape(W.shape), np.array([av.sum()]))
        hb = av[None, :, None] * Wr[:, None, :]
        Db = aD[:, None, :, None] * Wr[None, :, None, :]

        for t in range(len(layers) - 2, -1, -1):
            h_in, D_in, s, c, da, d2a = tape.layers[t]
            dhb, d2hb = Db[:n], Db[n:]
            abar = c * hb - np.sum(s * da * dhb + (s * d2a + c * da**2) * d2hb, axis=0)
            Dabar = np.concatenate([c * dhb - 2.0 * s * da * d2hb, c * d2hb], axis=0)
            W, _ = layers[t]
            out_w, in_w = W.shape
            gW = abar.reshape(-1, out_w).T @ h_in.reshape(-1, in_w) \
                + Dabar.reshape(-1, out_w).T @ D_in.reshape(-1, in_w)
            gb = abar.reshape(-1, out_w).sum(axis=0)
            grads[t] = (gW, gb)
            if t > 0:
                hb = abar @ W
                Db = Dabar @ W
        return self.pack(grads)

    # ------------------------------------------------------------ I/O
    def to_dict(self):
        return {
            "input_dim": self.arch.input_dim,
            "n_features": self.arch.n_features,
            "scales": list(self.arch.scales),
            "hidden": list(self.arch.hidden),
            "B": [b.tolist() for b in self.B],
        }

    @classmethod
    def from_dict(cls, d):
        arch = FfnArch(int(d["input_dim"]), int(d["n_features"]), tuple(d["scales"]), tuple(d["hidden"]))
        return cls(arch, B=[np.asarray(b) for b in d["B"]])


class MultiHeadNet:
    """Independent networks, one per named output, sharing one flat ``theta``.

    Heads occupy disjoint consecutive blocks of ``theta`` in insertion order.
    """

    def __init__(self, heads: dict):
        if not heads:
            raise ValueError("at least one head is required")
        self.heads = dict(heads)
        self.slices = {}
        pos = 0
        for name, net in self.heads.items():
            self.slices[name] = slice(pos, pos + net.n_params)
            pos += net.n_params
        self.n_params = pos

    @classmethod
    def build(cls, archs: dict, random_state=None):
        rng = as_rng(random_state)
        return cls({name: FourierFeatureNet(a, rng.split(f"head-{name}")) for name, a in archs.items()})

    def block(self, theta, name):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise DimensionMismatch(f"theta has shape {theta.shape}, expected ({self.n_params},)")
        return theta[self.slices[name]]

    def forward(self, theta, X, head="u"):
        return self.heads[head].forward(self.block(theta, head), X)

    def eval_bundle(self, theta, X, head="u", tape=False):
        return self.heads[head].eval_bundle(self.block(theta, head), X, tape=tape)

    def init_theta(self, random_state=None, std=1.0):
        """A draw from the ``N(0, std^2 I)`` prior."""
        rng = as_rng(random_state)
        return std * rng.standard_normal(self.n_params)

    def to_dict(self):
        return {name: net.to_dict() for name, net in self.heads.items()}

    @classmethod
    def from_dict(cls, d):
        return cls({name: FourierFeatureNet.from_dict(v) for name, v in d.items()})

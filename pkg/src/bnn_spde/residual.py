"""PDE residuals of the network surrogate at the sensor locations.

A residual vector is laid out exactly like a snapshot row: ``[F, G, K]`` for
forward problems and ``[F, G, U]`` for inverse problems, where ``F`` applies
the interior operator at the f-sensors, ``G`` is the Dirichlet trace of ``U``
at the g-sensors, and the last block is the parameter head ``K`` at the
k-sensors (forward) or ``U`` at the u-sensors (inverse).
"""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionMismatch, MissingParameterField
from .ffn import EvalBundle

__all__ = ["apply_operator", "k_field", "ResidualMap", "residual_vector", "residual_pullback"]


def apply_operator(op: str, u: EvalBundle, k: EvalBundle | None = None):
    """Interior operator applied pointwise to evaluated fields.

    ``k`` carries the parameter field itself (already mapped to ``k > 0``
    where applicable), including its input gradient.
    """
    if op == "identity":
        return u.value
    if op == "neg_laplace_1d":
        return -np.sum(u.hess_diag, axis=1)
    if op == "allen_cahn_2d":
        v = u.value
        return -np.sum(u.hess_diag, axis=1) + 3.0 * v * (v * v - 1.0)
    if op == "div_form_1d":
        if k is None:
            raise MissingParameterField("div_form_1d needs the parameter field k")
        return -(k.grad_x[:, 0] * u.grad_x[:, 0] + k.value * u.hess_diag[:, 0])
    raise ValueError(f"unknown operator {op!r}")


def k_field(head: EvalBundle, shift):
    """Map the parameter head to ``k``: identity, or ``shift + exp(head)``."""
    if shift is None:
        return head
    e = np.exp(head.value)
    g = e[:, None] * head.grad_x
    h = e[:, None] * (head.hess_diag + head.grad_x**2)
    return EvalBundle(shift + e, g, h)


class ResidualMap:
    """Evaluates the residual vector and pulls adjoints back to ``theta``.

    The ``u`` head is evaluated once on the concatenated f-, g- and u-sensors
    and the ``k`` head once on the f- and k-sensors, so every residual needs at
    most one forward and one backward pass per head.
    """

    def __init__(self, spec, layout, model):
        layout.validate(spec)
        self.spec, self.layout, self.model = spec, layout, model
        c = layout.counts
        self.mode = spec.mode
        self.blocks = layout.blocks(spec.mode)
        self.length = sum(n for _, n in self.blocks)
        self.nf, self.ng = c["f"], c["g"]
        self.nlast = c["k"] if spec.mode == "forward" else c["u"]
        self.uses_k = spec.uses_k
        parts = [layout.f_sensors, layout.g_sensors]
        if spec.mode == "inverse":
            parts.append(layout.u_sensors)
        self.u_points = np.concatenate(parts)
        self.k_points = None
        if self.uses_k:
            kp = [layout.f_sensors]
            if spec.mode == "forward":
                kp.append(layout.k_sensors)
            self.k_points = np.concatenate(kp)
        for h in spec.heads:
            if h not in model.heads:
                raise ValueError(f"model is missing head {h!r}")

    def __call__(self, theta):
        return self.evaluate(theta)[0]

    def evaluate(self, theta):
        """Residual vector and a cache for :meth:`pullback`."""
        op = self.spec.operator
        ub, utape = self.model.eval_bundle(theta, self.u_points, "u", tape=True)
        nf, ng = self.nf, self.ng
        uf = _take(ub, slice(0, nf))
        kb = ktape = kf = None
        if self.k_points is not None:
            kb, ktape = self.model.eval_bundle(theta, self.k_points, "k", tape=True)
            kf = k_field(kb, self.spec.k_shift)
        F = apply_operator(op, uf, _take(kf, slice(0, nf)) if kf is not None else None)
        G = ub.value[nf:nf + ng]
        if self.mode == "forward":
            last = kf.value[nf:] if kf is not None else np.zeros(0)
        else:
            last = ub.value[nf + ng:]
        r = np.concatenate([F, G, last])
        return r, (theta, ub, utape, kb, ktape, kf)

    def pullback(self, cache, adjoint):
        """Gradient in ``theta`` of ``<adjoint, residual(theta)>``."""
        theta, ub, utape, kb, ktape, kf = cache
        adjoint = np.asarray(adjoint, dtype=float)
        if adjoint.shape != (self.length,):
            raise DimensionMismatch(f"adjoint of length {adjoint.shape}, residual has {self.length}")
        nf, ng, dim = self.nf, self.ng, self.spec.dim
        aF, aG, aL = adjoint[:nf], adjoint[nf:nf + ng], adjoint[nf + ng:]
        P = len(self.u_points)
        av, ag, ah = np.zeros(P), np.zeros((P, dim)), np.zeros((P, dim))
        op = self.spec.operator
        kv = kg = None
        if op == "identity":
            av[:nf] = aF
        elif op == "neg_laplace_1d":
            ah[:nf] = -aF[:, None]
        elif op == "allen_cahn_2d":
            ah[:nf] = -aF[:, None]
            u = ub.value[:nf]
            av[:nf] = aF * (9.0 * u * u - 3.0)
        elif op == "div_form_1d":
            ag[:nf, 0] = -aF * kf.grad_x[:nf, 0]
            ah[:nf, 0] = -aF * kf.value[:nf]
            Pk = len(self.k_points)
            kv, kg = np.zeros(Pk), np.zeros((Pk, dim))
            kv[:nf] = -aF * ub.hess_diag[:nf, 0]
            kg[:nf, 0] = -aF * ub.grad_x[:nf, 0]
        av[nf:nf + ng] = aG
        if self.mode == "inverse":
            av[nf + ng:] = aL
        grad = np.zeros(self.model.n_params)
        grad[self.model.slices["u"]] = self.model.heads["u"].backprop(
            self.model.block(theta, "u"), utape, av, ag, ah)
        if self.k_points is not None:
            Pk = len(self.k_points)
            if kv is None:
                kv, kg = np.zeros(Pk), np.zeros((Pk, dim))
            if self.mode == "forward":
                kv[nf:] += aL
            hv, hg = _k_head_adjoint(kb, kv, kg, self.spec.k_shift)
            grad[self.model.slices["k"]] = self.model.heads["k"].backprop(
                self.model.block(theta, "k"), ktape, hv, hg, None)
        return grad


def _take(b, sl):
    if b is None:
        return None
    return EvalBundle(b.value[sl], b.grad_x[sl], b.hess_diag[sl])


def _k_head_adjoint(head, kv, kg, shift):
    """Adjoints of ``k`` value/gradient mapped back to the raw head output."""
    if shift is None:
        return kv, kg
    e = np.exp(head.value)
    hv = e * kv + e * np.sum(kg * head.grad_x, axis=1)
    hg = e[:, None] * kg
    return hv, hg


def residual_vector(spec, layout, model, theta):
    return ResidualMap(spec, layout, model)(theta)


def residual_pullback(spec, layout, model, theta, adjoint):
    rm = ResidualMap(spec, layout, model)
    _, cache = rm.evaluate(theta)
    return rm.pullback(cache, adjoint)

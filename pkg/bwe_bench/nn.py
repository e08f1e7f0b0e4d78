"""Small numpy MLP gradient engine used by the policy and the trainer.

Dense layers with tanh or identity activation, manual backprop and Adam.
float32 for training; tests switch to float64 for finite-difference checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = ["Dense", "Mlp", "init_mlp", "Adam", "ACTIVATIONS"]

ACTIVATIONS = ("tanh", "identity")


@dataclass(slots=True)
class Dense:
	W: np.ndarray  # (in, out)
	b: np.ndarray  # (out,)
	activation: str = "tanh"

	@property
	def shape(self) -> tuple[int, int]:
		return self.W.shape


@dataclass(slots=True)
class Mlp:
	layers: list[Dense] = field(default_factory=list)

	@property
	def in_dim(self) -> int:
		return self.layers[0].W.shape[0]

	@property
	def out_dim(self) -> int:
		return self.layers[-1].W.shape[1]

	@property
	def dtype(self) -> np.dtype:
		return self.layers[0].W.dtype

	def params(self) -> list[np.ndarray]:
		out = []
		for layer in self.layers:
			out.extend((layer.W, layer.b))
		return out

	def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
		"""Return output and the per-layer inputs/outputs needed by backward."""
		cache = [x]
		h = x
		for layer in self.layers:
			h = h @ layer.W + layer.b
			if layer.activation == "tanh":
				h = np.tanh(h)
			cache.append(h)
		return h, cache

	def __call__(self, x: np.ndarray) -> np.ndarray:
		return self.forward(x)[0]

	def backward(self, cache: list[np.ndarray], grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
		"""Gradients (same order as params()) and dL/dx for upstream grad_out = dL/doutput."""
		grads: list[np.ndarray] = []
		g = grad_out
		for i in range(len(self.layers) - 1, -1, -1):
			layer = self.layers[i]
			if layer.activation == "tanh":
				g = g * (1.0 - cache[i + 1] ** 2)
			grads.append(g.sum(axis=0))
			grads.append(cache[i].T @ g)
			g = g @ layer.W.T
		grads.reverse()
		return grads, g

	def copy(self) -> "Mlp":
		return Mlp([Dense(d.W.copy(), d.b.copy(), d.activation) for d in self.layers])

	def astype(self, dtype) -> "Mlp":
		return Mlp([Dense(d.W.astype(dtype), d.b.astype(dtype), d.activation) for d in self.layers])

	def soft_update(self, source: "Mlp", rho: float) -> None:
		"""self <- rho * source + (1 - rho) * self, in place."""
		for dst, src in zip(self.params(), source.params()):
			dst *= 1.0 - rho
			dst += rho * src


def init_mlp(
	sizes: Sequence[int],
	activations: Sequence[str],
	rng: np.random.Generator,
	dtype=np.float32,
) -> Mlp:
	"""Glorot-uniform weights, zero biases."""
	if len(activations) != len(sizes) - 1:
		raise ValueError("need one activation per layer")
	layers = []
	for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
		if act not in ACTIVATIONS:
			raise ValueError(f"unknown activation: {act}")
		limit = np.sqrt(6.0 / (n_in + n_out))
		W = rng.uniform(-limit, limit, size=(n_in, n_out)).astype(dtype)
		layers.append(Dense(W, np.zeros(n_out, dtype=dtype), act))
	return Mlp(layers)


class Adam:
	"""Adam over a fixed list of parameter arrays (updated in place)."""

	def __init__(self, params: list[np.ndarray], lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
		self.params = params
		self.lr = lr
		self.beta1 = beta1
		self.beta2 = beta2
		self.eps = eps
		self.m = [np.zeros_like(p) for p in params]
		self.v = [np.zeros_like(p) for p in params]
		self.t = 0

	def step(self, grads: list[np.ndarray]) -> None:
		self.t += 1
		c1 = 1.0 - self.beta1 ** self.t
		c2 = 1.0 - self.beta2 ** self.t
		for p, g, m, v in zip(self.params, grads, self.m, self.v):
			m *= self.beta1
			m += (1.0 - self.beta1) * g
			v *= self.beta2
			v += (1.0 - self.beta2) * g * g
			p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)

"""Distance-based classification and the sampled predictive distribution.

The class scores are softmax(-delta) where delta_i is the squared Euclidean
distance between the encoded input and the prototype drawn for class i: the
weight matrix is fixed at minus identity, so prototype i argues for class i
and nothing else. Averaging the class probabilities over N independent
prototype draws approximates the prototype-marginalized predictive
distribution; every per-draw artifact is kept for the uncertainty and
explanation machinery downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prototypes import PrototypeSet, sample_set


@dataclass
class DistanceVector:
    delta: np.ndarray


@dataclass
class PredictiveSample:
    prototype_set: PrototypeSet
    delta: np.ndarray
    probs: np.ndarray


@dataclass
class PredictiveDistribution:
    mean_probs: np.ndarray
    samples: list
    predicted_class: int

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    def delta_matrix(self) -> np.ndarray:
        """(N, c) distances across draws."""
        return np.stack([s.delta for s in self.samples])

    def probs_matrix(self) -> np.ndarray:
        return np.stack([s.probs for s in self.samples])


def distances(e_x: np.ndarray, prototype_set: PrototypeSet) -> np.ndarray:
    """Squared Euclidean distance from the embedding to each class prototype."""
    e_x = np.asarray(e_x, dtype=np.float64).reshape(-1)
    rows = prototype_set.samples
    if rows.shape[1] != e_x.shape[0]:
        raise ValueError(f"distances: embedding dim {e_x.shape[0]} vs prototypes {rows.shape}")
    diff = rows - e_x
    return (diff * diff).sum(axis=1)


def head(delta: np.ndarray) -> np.ndarray:
    """softmax(-delta), the fixed minus-identity readout; no bias."""
    logits = -np.asarray(delta, dtype=np.float64)
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def predict(x: np.ndarray, model, n_samples: int, rng) -> PredictiveDistribution:
    """Run N sampled inference passes for one input and average the outputs."""
    if n_samples < 1:
        raise ValueError("predict: n_samples must be >= 1")
    e_x = model.encode_np(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
    samples = []
    for n in range(n_samples):
        proto = _draw(model, rng, n)
        delta = distances(e_x, proto)
        samples.append(PredictiveSample(proto, delta, head(delta)))
    mean_probs = np.mean([s.probs for s in samples], axis=0)
    return PredictiveDistribution(mean_probs=mean_probs, samples=samples,
                                  predicted_class=int(mean_probs.argmax()))


def _draw(model, rng, sample_id: int) -> PrototypeSet:
    if model.is_probabilistic():
        return sample_set(model.prototypes, rng, sample_id=sample_id)
    return model.prototypes.sample(rng, sample_id=sample_id)


def predict_batch(model, inputs: np.ndarray, n_samples: int, seed: int,
                  chunk: int = 256):
    """Vectorized predictions with an independent draw stream per input.

    Input i uses the i-th child of SeedSequence(seed), so results do not
    depend on the chunking. Returns (mean_probs (B, c), deltas (B, N, c),
    probs (B, N, c)).
    """
    if n_samples < 1:
        raise ValueError("predict_batch: n_samples must be >= 1")
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    b = inputs.shape[0]
    c, l = model.class_count, model.latent_dim
    children = np.random.SeedSequence(seed).spawn(b)
    mean_probs = np.empty((b, c))
    deltas = np.empty((b, n_samples, c))
    probs = np.empty((b, n_samples, c))
    if model.is_probabilistic():
        means = model.prototype_means()
        chols = model.prototype_chols()
    else:
        means, chols = model.prototype_means(), None
    for lo in range(0, b, chunk):
        hi = min(lo + chunk, b)
        emb = model.encode_np(inputs[lo:hi])
        if chols is not None:
            z = np.stack([np.random.default_rng(children[i]).standard_normal((n_samples, c, l))
                          for i in range(lo, hi)])
            protos = means[None, None] + np.einsum("cij,bncj->bnci", chols, z)
        else:
            protos = np.broadcast_to(means, (hi - lo, n_samples, c, l))
        diff = protos - emb[:, None, None, :]
        d = np.einsum("bncl,bncl->bnc", diff, diff)
        logits = -(d - d.min(axis=2, keepdims=True))
        e = np.exp(logits)
        p = e / e.sum(axis=2, keepdims=True)
        deltas[lo:hi] = d
        probs[lo:hi] = p
        mean_probs[lo:hi] = p.mean(axis=1)
    return mean_probs, deltas, probs


def predicted_classes(mean_probs: np.ndarray) -> np.ndarray:
    """Argmax per row; ties resolve to the lowest class index."""
    return mean_probs.argmax(axis=1)

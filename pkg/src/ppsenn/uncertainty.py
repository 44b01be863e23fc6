"""Predictive and explanatory uncertainty metrics.

Predictive uncertainty is the entropy of the draw-averaged class
distribution, split into an epistemic part (mutual information between the
class and the prototype draw) and an aleatoric part (expected per-draw
entropy); all three are normalized by log(c) so 1 means uniform. The
plug-in identity total = mutual information + expected entropy holds
exactly because every term is computed from the same draw arrays.

Explanatory uncertainty works on the per-class distance distributions
induced by the draws: the aleatoric index is the maximum density overlap
between the predicted class and any rival (Gaussian KDE, Silverman
bandwidth, trapezoidal integration on a shared grid), and the epistemic
index is the empirical quantile of the input's smallest mean distance
within the matching-class distances of the training set.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .classifier import predict_batch

KDE_GRID_SIZE = 512
POINT_MASS_TOL = 1e-9
REFERENCE_MAGIC = b"PPSENN-REF"
REFERENCE_VERSION = 1


@dataclass
class PredictiveUncertainty:
    total: float
    epistemic_mi: float
    aleatoric_expected_entropy: float


@dataclass
class DeltaStatistics:
    mean: np.ndarray
    variance: np.ndarray | None


@dataclass
class DensityEstimate:
    grid: np.ndarray
    values: np.ndarray
    bandwidth: float
    point_mass: float | None = None


@dataclass
class EpistemicReference:
    per_class: list
    source_n: int
    model_checksum: str


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0.0]
    return float(-(p * np.log(p)).sum())


def predictive_uncertainty(pd, class_count: int) -> PredictiveUncertainty:
    """Normalized entropy decomposition of a sampled predictive distribution."""
    probs = pd.probs_matrix()
    return decompose_probs(pd.mean_probs, probs, class_count)


def decompose_probs(mean_probs: np.ndarray, sample_probs: np.ndarray,
                    class_count: int) -> PredictiveUncertainty:
    norm = np.log(class_count)
    total = _entropy(np.asarray(mean_probs)) / norm
    aleatoric = float(np.mean([_entropy(row) for row in np.atleast_2d(sample_probs)])) / norm
    return PredictiveUncertainty(total=total, epistemic_mi=total - aleatoric,
                                 aleatoric_expected_entropy=aleatoric)


def delta_statistics(pd) -> DeltaStatistics:
    """Per-class sample mean and unbiased variance of the distances over draws."""
    d = pd.delta_matrix()
    mean = d.mean(axis=0)
    variance = d.var(axis=0, ddof=1) if d.shape[0] >= 2 else None
    return DeltaStatistics(mean=mean, variance=variance)


def silverman_bandwidth(samples: np.ndarray) -> float:
    n = samples.size
    return 1.06 * samples.std(ddof=1) * n ** (-0.2)


def kde(samples: np.ndarray, grid_size: int = KDE_GRID_SIZE,
        grid: np.ndarray | None = None) -> DensityEstimate:
    """Gaussian-kernel density estimate with Silverman's bandwidth.

    Degenerate samples (fewer than two, or zero spread) are represented as a
    point mass rather than a density curve.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size < 2 or samples.std(ddof=1) == 0.0:
        loc = float(samples[0]) if samples.size else 0.0
        return DensityEstimate(grid=np.array([loc]), values=np.array([np.inf]),
                               bandwidth=0.0, point_mass=loc)
    h = silverman_bandwidth(samples)
    if grid is None:
        grid = np.linspace(samples.min() - 3.0 * h, samples.max() + 3.0 * h, grid_size)
    z = (grid[:, None] - samples[None, :]) / h
    values = np.exp(-0.5 * z * z).sum(axis=1) / (samples.size * h * np.sqrt(2.0 * np.pi))
    return DensityEstimate(grid=grid, values=values, bandwidth=h)


def density_overlap(a_samples: np.ndarray, b_samples: np.ndarray,
                    grid_size: int = KDE_GRID_SIZE) -> float:
    """Integral of min(f_a, f_b) over a shared grid spanning both supports."""
    a_samples = np.asarray(a_samples, dtype=np.float64).reshape(-1)
    b_samples = np.asarray(b_samples, dtype=np.float64).reshape(-1)
    a_degenerate = a_samples.size < 2 or a_samples.std(ddof=1) == 0.0
    b_degenerate = b_samples.size < 2 or b_samples.std(ddof=1) == 0.0
    if a_degenerate and b_degenerate:
        return 1.0 if abs(a_samples[0] - b_samples[0]) <= POINT_MASS_TOL else 0.0
    if a_degenerate or b_degenerate:
        return 0.0
    h_a = silverman_bandwidth(a_samples)
    h_b = silverman_bandwidth(b_samples)
    lo = min(a_samples.min() - 3.0 * h_a, b_samples.min() - 3.0 * h_b)
    hi = max(a_samples.max() + 3.0 * h_a, b_samples.max() + 3.0 * h_b)
    grid = np.linspace(lo, hi, grid_size)
    f_a = kde(a_samples, grid=grid).values
    f_b = kde(b_samples, grid=grid).values
    overlap = float(np.trapz(np.minimum(f_a, f_b), grid))
    return min(max(overlap, 0.0), 1.0)


def aleatoric_overlap(pd) -> float:
    """Maximum distance-density overlap between the top class and any rival."""
    d = pd.delta_matrix()
    return aleatoric_overlap_from_deltas(d, pd.predicted_class)


def aleatoric_overlap_from_deltas(deltas: np.ndarray, predicted: int) -> float:
    c = deltas.shape[1]
    best = 0.0
    for j in range(c):
        if j == predicted:
            continue
        best = max(best, density_overlap(deltas[:, predicted], deltas[:, j]))
    return best


def build_reference(train, model, n_samples: int, seed: int) -> EpistemicReference:
    """Distribution of mean true-class distances over the training set.

    Every training input contributes its N-draw mean distance to the array
    of its labeled class; arrays are sorted for quantile lookups.
    """
    present = np.unique(train.labels)
    if present.size != model.class_count:
        missing = sorted(set(range(model.class_count)) - set(present.tolist()))
        raise ValueError(f"build_reference: classes missing from training data: {missing}")
    _, deltas, _ = predict_batch(model, train.inputs, n_samples, seed)
    mean_delta = deltas.mean(axis=1)
    per_class = []
    for i in range(model.class_count):
        vals = np.sort(mean_delta[train.labels == i, i])
        per_class.append(vals)
    return EpistemicReference(per_class=per_class, source_n=n_samples,
                              model_checksum=model.checksum())


def epistemic_quantile(ds: DeltaStatistics, ref: EpistemicReference,
                       checksum: str | None = None) -> float:
    """Empirical quantile of the smallest mean distance among same-class values."""
    if checksum is not None and checksum != ref.model_checksum:
        raise ValueError("epistemic_quantile: reference was built for a different model")
    i_star = int(np.argmin(ds.mean))
    return quantile_lookup(ref, i_star, float(ds.mean[i_star]))


def quantile_lookup(ref: EpistemicReference, class_index: int, value: float) -> float:
    arr = ref.per_class[class_index]
    return float(np.searchsorted(arr, value, side="right")) / arr.size


def epistemic_only_map(u_e: float, u_a: float) -> float:
    """Purely-epistemic signal: quantile score minus overlap score."""
    return u_e - u_a


def batch_epistemic(mean_deltas: np.ndarray, ref: EpistemicReference) -> np.ndarray:
    """Vectorized quantile scores for (B, c) mean-distance rows."""
    i_star = mean_deltas.argmin(axis=1)
    out = np.empty(mean_deltas.shape[0])
    for i in range(mean_deltas.shape[0]):
        out[i] = quantile_lookup(ref, int(i_star[i]), float(mean_deltas[i, i_star[i]]))
    return out


def save_reference(ref: EpistemicReference, path) -> None:
    header = json.dumps({
        "version": REFERENCE_VERSION,
        "source_n": ref.source_n,
        "model_checksum": ref.model_checksum,
        "class_lengths": [int(a.size) for a in ref.per_class],
    }, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(REFERENCE_MAGIC)
        fh.write(struct.pack("<II", REFERENCE_VERSION, len(header)))
        fh.write(header)
        for arr in ref.per_class:
            fh.write(arr.astype("<f8").tobytes())


def load_reference(path) -> EpistemicReference:
    with open(path, "rb") as fh:
        magic = fh.read(len(REFERENCE_MAGIC))
        if magic != REFERENCE_MAGIC:
            raise ValueError(f"bad reference magic {magic!r}")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != REFERENCE_VERSION:
            raise ValueError(f"unsupported reference version {version}")
        header = json.loads(fh.read(header_len).decode())
        payload = fh.read()
    per_class = []
    offset = 0
    for length in header["class_lengths"]:
        arr = np.frombuffer(payload[offset:offset + 8 * length], dtype="<f8").copy()
        if arr.size != length:
            raise ValueError("reference file truncated")
        per_class.append(arr)
        offset += 8 * length
    return EpistemicReference(per_class=per_class, source_n=header["source_n"],
                              model_checksum=header["model_checksum"])

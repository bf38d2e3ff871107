"""Weight-space analyses: embedding distances, interpolation barriers, unit matching.

Networks fitted from one shared initialization stay mutually aligned: their
embedding distances reflect shape similarity, linear interpolation between
their weights keeps the loss low, and unit matching finds the identity
permutation. Networks from different initializations lose all three
properties, which is why zoos pin a single init seed.
"""

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import ValidationError
from .fitting import FieldSampler, shape_loss
from .mlp import MLPWeights, raw_mlp_forward


def embedding_distance_matrix(embeddings, init_seed_ids=None, metric: str = "euclidean") -> np.ndarray:
    """Symmetric (N, N) distance matrix with a zero diagonal.

    Embeddings are only comparable within one shared-init zoo; passing mixed
    init_seed_ids is an error rather than a silently meaningless matrix.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or len(emb) < 1:
        raise ValidationError("embeddings must be a non-empty (N, D) matrix")
    if init_seed_ids is not None:
        seeds = set(int(s) for s in init_seed_ids)
        if len(init_seed_ids) != len(emb):
            raise ValidationError("one init seed id per embedding required")
        if len(seeds) > 1:
            raise ValidationError(f"embeddings come from different init seeds {sorted(seeds)}; distances are not comparable")
    if metric not in ("euclidean", "cosine"):
        raise ValidationError(f"unknown metric '{metric}'")
    d = cdist(emb, emb, metric=metric)
    d = np.triu(d, k=1)
    d = d + d.T
    return d


def refit_block_stats(distances: np.ndarray, groups) -> dict:
    """Mean embedding distance within refit groups (d_in) vs across them (d_out).

    Refits of one shape should cluster: d_in well below d_out. Groups label
    which rows of the distance matrix came from the same underlying shape.
    """
    d = np.asarray(distances, dtype=np.float64)
    g = np.asarray(groups)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValidationError("square distance matrix required")
    if len(g) != len(d):
        raise ValidationError("one group id per matrix row required")
    iu = np.triu_indices(len(d), k=1)
    same = g[iu[0]] == g[iu[1]]
    if not same.any() or same.all():
        raise ValidationError("need both within-group and cross-group pairs")
    d_in = float(d[iu][same].mean())
    d_out = float(d[iu][~same].mean())
    return {"d_in": d_in, "d_out": d_out, "ratio": d_in / d_out if d_out > 0 else float("inf")}


# ---------------------------------------------------------------------------
# linear mode connectivity
# ---------------------------------------------------------------------------


def interpolate_weights(nf_a: MLPWeights, nf_b: MLPWeights, t: float) -> MLPWeights:
    """Per-parameter convex combination (1 - t) * a + t * b."""
    if nf_a.arch != nf_b.arch:
        raise ValidationError("cannot interpolate networks with different architectures")
    layers = [
        ((1.0 - t) * wa + t * wb, (1.0 - t) * ba + t * bb)
        for (wa, ba), (wb, bb) in zip(nf_a.layers, nf_b.layers)
    ]
    return MLPWeights(
        arch=nf_a.arch,
        layers=layers,
        field_kind=nf_a.field_kind,
        init_seed_id=nf_a.init_seed_id,
        norm=nf_a.norm,
    )


@dataclass
class LmcCurve:
    ts: list[float]
    losses: list[float]

    @property
    def barrier_ratio(self) -> float:
        """Peak loss along the path relative to the worse endpoint."""
        endpoint = max(self.losses[0], self.losses[-1])
        if endpoint == 0:
            return float("inf") if max(self.losses) > 0 else 1.0
        return max(self.losses) / endpoint


def lmc_curve(
    nf_a: MLPWeights,
    nf_b: MLPWeights,
    sampler: FieldSampler,
    ts=None,
    probe_size: int = 4096,
    seed: int = 0,
    clamp_delta: float = 0.1,
) -> LmcCurve:
    """Loss of interpolated weights on one fixed probe batch, per t in [0, 1]."""
    if nf_a.arch != nf_b.arch or nf_a.field_kind != nf_b.field_kind:
        raise ValidationError("endpoints must share architecture and field kind")
    if ts is None:
        ts = [i / 20 for i in range(21)]
    ts = [float(t) for t in ts]
    if any(t < 0 or t > 1 for t in ts):
        raise ValidationError("interpolation coefficients must lie in [0, 1]")
    pts_np, tgt_np = sampler.sample(probe_size, np.random.default_rng(seed))
    pts = torch.from_numpy(pts_np).float()
    tgt = torch.from_numpy(np.asarray(tgt_np)).float()
    losses = []
    with torch.no_grad():
        for t in ts:
            nf_t = interpolate_weights(nf_a, nf_b, t)
            raw = raw_mlp_forward(nf_t, pts)[:, 0]
            losses.append(float(shape_loss(nf_t.field_kind, raw, tgt, clamp_delta)))
    return LmcCurve(ts=ts, losses=losses)


# ---------------------------------------------------------------------------
# permutation matching of hidden units
# ---------------------------------------------------------------------------


def permute_hidden_units(nf: MLPWeights, perms: list[np.ndarray]) -> MLPWeights:
    """Reorder hidden units; the network function is unchanged.

    perms[l] maps new unit i of hidden layer l to old unit perms[l][i]: the
    outgoing rows of linear l and the incoming columns of linear l+1 move
    together.
    """
    k = nf.arch.n_hidden_layers
    if len(perms) != k:
        raise ValidationError(f"expected {k} permutations, got {len(perms)}")
    h = nf.arch.hidden_dim
    for p in perms:
        if sorted(p) != list(range(h)):
            raise ValidationError("each permutation must reorder exactly the hidden units")
    layers = [(w.clone(), b.clone()) for w, b in nf.layers]
    for l, p in enumerate(perms):
        idx = torch.as_tensor(np.asarray(p), dtype=torch.long)
        w, b = layers[l]
        layers[l] = (w[idx], b[idx])
        w_next, b_next = layers[l + 1]
        layers[l + 1] = (w_next[:, idx], b_next)
    return MLPWeights(
        arch=nf.arch, layers=layers, field_kind=nf.field_kind, init_seed_id=nf.init_seed_id, norm=nf.norm
    )


@dataclass
class MatchResult:
    perms: list[np.ndarray]
    aligned: MLPWeights  # nf_b with matched units reordered to nf_a's order
    objective_log: list[float] = dc_field(default_factory=list)
    converged: bool = True

    @property
    def all_identity(self) -> bool:
        return all(np.array_equal(p, np.arange(len(p))) for p in self.perms)


def _alignment_objective(a: list, b: list, perms: list[np.ndarray], h: int) -> float:
    full = [np.arange(a[0][0].shape[1])] + [np.asarray(p) for p in perms] + [np.arange(a[-1][0].shape[0])]
    total = 0.0
    for l, ((wa, ba), (wb, bb)) in enumerate(zip(a, b)):
        rows, cols = full[l + 1], full[l]
        total += float((wa * wb[np.ix_(rows, cols)]).sum() + (ba * bb[rows]).sum())
    return total


def match_weights(nf_a: MLPWeights, nf_b: MLPWeights, max_sweeps: int = 100, seed: int = 0) -> MatchResult:
    """Align nf_b's hidden units to nf_a's by coordinate descent.

    One hidden layer at a time, the best unit permutation is a linear
    assignment over the alignment score between adjacent weight matrices
    (bias terms included); sweeps repeat until no permutation changes. The
    objective never decreases.
    """
    if nf_a.arch != nf_b.arch:
        raise ValidationError("cannot match networks with different architectures")
    a = [(w.numpy().astype(np.float64), b.numpy().astype(np.float64)) for w, b in nf_a.layers]
    b = [(w.numpy().astype(np.float64), b_.numpy().astype(np.float64)) for w, b_ in nf_b.layers]
    k = nf_a.arch.n_hidden_layers
    h = nf_a.arch.hidden_dim
    perms = [np.arange(h) for _ in range(k)]
    rng = np.random.default_rng(seed)
    log = [_alignment_objective(a, b, perms, h)]
    converged = False
    for _ in range(max_sweeps):
        changed = False
        for l in rng.permutation(k):
            p_prev = perms[l - 1] if l > 0 else np.arange(a[l][0].shape[1])
            p_next = perms[l + 1] if l + 1 < k else np.arange(a[l + 1][0].shape[0])
            wa, ba = a[l]
            wb, bb = b[l]
            wa_n, _ = a[l + 1]
            wb_n, _ = b[l + 1]
            m = wa @ wb[:, p_prev].T + np.outer(ba, bb) + wa_n.T @ wb_n[p_next, :]
            _, cols = linear_sum_assignment(m, maximize=True)
            if not np.array_equal(cols, perms[l]):
                changed = True
            perms[l] = cols
        log.append(_alignment_objective(a, b, perms, h))
        if not changed:
            converged = True
            break
    if not converged:
        warnings.warn("unit matching did not converge; returning the last sweep's permutations")
    return MatchResult(
        perms=[p.copy() for p in perms],
        aligned=permute_hidden_units(nf_b, perms),
        objective_log=log,
        converged=converged,
    )

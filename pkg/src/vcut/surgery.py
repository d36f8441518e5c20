"""Graph surgery for degenerate cross-attention.

Because every cross-attention site sees a single pooled key, its output is
``(e @ w_v + b_v) @ w_o + b_o`` — independent of the sequence it nominally
attends from. ``fold_site`` collapses that composition into one affine map
per spatial cross site; ``apply_vcut`` rewrites a whole model: temporal
cross sites are deleted outright, spatial cross sites are replaced by their
folded maps, and the query/key projections plus the query-path norm go with
them since the output provably never reads them. ``build_cache`` then
evaluates each folded map once per run for the conditional embedding, the
null embedding, and their midpoint, which is all a sampler ever needs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError, TransformError
from .model import AttentionSite, ModelSpec, iter_parameters, parameter_count
from .tensorops import affine, matmul


@dataclass(frozen=True)
class FoldedAffine:
    """One spatial cross site collapsed to ``e @ weight + bias``."""

    site_id: str
    weight: np.ndarray  # [D, c]
    bias: np.ndarray    # [c]

    def __call__(self, e: np.ndarray) -> np.ndarray:
        """Map embeddings [b, 1, D] (or [b, D]) to conditioner vectors [b, c]."""
        flat = e[:, 0, :] if e.ndim == 3 else e
        if flat.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"{self.site_id}: embedding width {flat.shape[-1]} != {self.weight.shape[0]}")
        return affine(flat, self.weight, self.bias)


def fold_projections(w_v, b_v, w_o, b_o) -> tuple:
    """Compose value and output affine maps into a single (weight, bias)."""
    weight = matmul(w_v, w_o)
    bias = (matmul(b_v[None, :], w_o) + b_o)[0]
    return weight, bias


def fold_site(site: AttentionSite) -> FoldedAffine:
    """Fold a spatial cross-attention site; temporal sites are deleted, not folded."""
    if site.kind != "sca":
        raise TransformError(f"fold_site expects a spatial cross site, got {site.kind!r}")
    weight, bias = fold_projections(site.w_v, site.b_v, site.w_o, site.b_o)
    return FoldedAffine(site_id=site.site_id, weight=weight, bias=bias)


def _cross_prefixes(spec: ModelSpec):
    """(spatial, temporal) cross-site weight prefixes in execution order."""
    names = [name for name, _, _, _ in iter_parameters(spec)]
    sca, tca, seen = [], [], set()
    for name in names:
        for marker, bucket in ((".sca.", sca), (".tca.", tca)):
            if marker in name:
                prefix = name.split(marker)[0] + marker[:-1]
                if prefix not in seen:
                    seen.add(prefix)
                    bucket.append(prefix)
    return sca, tca


def fold_model_sites(spec: ModelSpec, weights: dict) -> list:
    """FoldedAffine for every spatial cross site, in execution order."""
    if spec.folded:
        sca_prefixes, _ = _cross_prefixes(replace(spec, folded=False))
        return [
            FoldedAffine(
                site_id=p,
                weight=weights[p.rsplit(".", 1)[0] + ".fold.w"],
                bias=weights[p.rsplit(".", 1)[0] + ".fold.b"],
            )
            for p in sca_prefixes
        ]
    sca_prefixes, _ = _cross_prefixes(spec)
    out = []
    for p in sca_prefixes:
        weight, bias = fold_projections(
            weights[f"{p}.v.w"], weights[f"{p}.v.b"], weights[f"{p}.o.w"], weights[f"{p}.o.b"]
        )
        out.append(FoldedAffine(site_id=p, weight=weight, bias=bias))
    return out


def apply_vcut(spec: ModelSpec, weights: dict):
    """Rewrite (spec, weights) into the folded model.

    Temporal cross sites disappear; each spatial cross site's value/output
    pair becomes one stored affine map and its query/key projections and
    pre-norm are dropped. Every other parameter is carried over untouched.
    Refuses to run twice.
    """
    if spec.folded:
        raise TransformError("model is already folded; refusing double surgery")
    new_spec = replace(spec, folded=True)

    new_weights = {}
    for name, _, _, _ in iter_parameters(new_spec):
        if name.endswith(".fold.w") or name.endswith(".fold.b"):
            block = name.rsplit(".", 2)[0]
            weight, bias = fold_projections(
                weights[f"{block}.sca.v.w"], weights[f"{block}.sca.v.b"],
                weights[f"{block}.sca.o.w"], weights[f"{block}.sca.o.b"],
            )
            new_weights[name] = weight if name.endswith(".w") else bias
        else:
            new_weights[name] = weights[name]

    before = parameter_count(weights)
    after = parameter_count(new_weights)
    if after >= before:
        raise TransformError(f"surgery must shrink the model: {before} -> {after}")
    return new_spec, new_weights


def surgery_report(spec: ModelSpec, weights: dict, new_spec: ModelSpec, new_weights: dict) -> dict:
    sca_prefixes, tca_prefixes = _cross_prefixes(spec)
    return {
        "temporal_cross_sites_removed": len(tca_prefixes),
        "spatial_cross_sites_folded": len(sca_prefixes),
        "params_before": parameter_count(weights),
        "params_after": parameter_count(new_weights),
        "param_delta": parameter_count(weights) - parameter_count(new_weights),
        "removed_site_ids": tca_prefixes,
        "folded_site_ids": sca_prefixes,
    }


@dataclass(frozen=True)
class FoldedConditioner:
    """Per-site conditioner vectors, computed once and reused every step.

    ``cond`` and ``null`` hold the folded maps' images of the conditional
    and null embeddings; ``averaged`` is their elementwise midpoint, the
    single-pass conditioner used after the guidance cut. All entries are
    [b, c] arrays indexed by spatial-cross-site execution order, and none
    of them depends on the timestep or the latent.
    """

    site_ids: tuple
    cond: tuple
    null: tuple
    averaged: tuple

    def __len__(self) -> int:
        return len(self.site_ids)


def build_cache(folded, e_cond: np.ndarray, e_null: np.ndarray) -> FoldedConditioner:
    """Evaluate every folded site exactly once per embedding."""
    if e_cond.shape != e_null.shape:
        raise ShapeError(f"embedding shapes differ: {e_cond.shape} vs {e_null.shape}")
    cond, null, avg = [], [], []
    for fa in folded:
        c = fa(e_cond)
        n = fa(e_null)
        cond.append(c)
        null.append(n)
        avg.append(0.5 * (c + n))
    return FoldedConditioner(
        site_ids=tuple(fa.site_id for fa in folded),
        cond=tuple(cond), null=tuple(null), averaged=tuple(avg),
    )

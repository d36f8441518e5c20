"""Two-stage denoising loop with per-frame guidance and a guidance cut.

Steps are 1-indexed. Steps ``1 .. cut_step-1`` run classifier-free
guidance: two denoiser evaluations per step (conditional and null), blended
per frame with a linearly increasing guidance weight. From ``cut_step``
onward each step runs a single evaluation conditioned on the cached
midpoint of the two folded conditioners — no guidance arithmetic at all.
``cut_step = steps + 1`` therefore means "never cut" and costs ``2*steps``
evaluations; ``cut_step = 1`` costs ``steps``.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigError, ShapeError
from .model import ModelSpec, forward_unet, null_embedding
from .surgery import build_cache, fold_model_sites
from .tensorops import Rng, normal_like

RUN_MODES = ("baseline", "modified", "vcut")


@dataclass(frozen=True)
class GuidanceSchedule:
    """Per-frame guidance weights, linear from ``first`` to ``last``."""

    scales: np.ndarray

    @classmethod
    def linear(cls, frames: int, first: float = 1.0, last: float = 3.0) -> "GuidanceSchedule":
        if frames < 1:
            raise ArgumentError(f"frames must be >= 1, got {frames}")
        if frames == 1:
            return cls(scales=np.array([first], dtype=np.float64))
        k = np.arange(frames, dtype=np.float64)
        return cls(scales=first + (last - first) * k / (frames - 1))

    def __len__(self) -> int:
        return len(self.scales)


def cfg_combine(eps_null: np.ndarray, eps_cond: np.ndarray, sched: GuidanceSchedule) -> np.ndarray:
    """Per-frame ``eps_null + scale * (eps_cond - eps_null)`` along the frame axis.

    Frames whose scale is exactly 1 short-circuit to the conditional branch,
    so the weight-1 endpoint is exact and not subject to rounding.
    """
    if eps_null.shape != eps_cond.shape:
        raise ShapeError(f"prediction shapes differ: {eps_null.shape} vs {eps_cond.shape}")
    if eps_null.ndim != 5 or eps_null.shape[2] != len(sched):
        raise ShapeError(
            f"frame axis {eps_null.shape} does not match schedule of length {len(sched)}"
        )
    lam = sched.scales.astype(eps_null.dtype).reshape(1, 1, -1, 1, 1)
    out = eps_null + lam * (eps_cond - eps_null)
    exact = sched.scales == 1.0
    if exact.any():
        out[:, :, exact] = eps_cond[:, :, exact]
    return out


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 25
    cut_step: int = 26            # 1-indexed; steps+1 disables the cut
    sigma_max: float = 700.0
    sigma_min: float = 0.002
    seed: int = 0
    guidance_first: float = 1.0
    guidance_last: float = 3.0

    def __post_init__(self):
        if self.steps < 1:
            raise ArgumentError(f"steps must be >= 1, got {self.steps}")
        if not (1 <= self.cut_step <= self.steps + 1):
            raise ArgumentError(
                f"cut_step must lie in [1, steps+1] = [1, {self.steps + 1}], got {self.cut_step}"
            )
        if not (0 < self.sigma_min < self.sigma_max):
            raise ArgumentError("need 0 < sigma_min < sigma_max")


def sigma_schedule(config: SamplerConfig) -> np.ndarray:
    """Log-linear noise levels, highest first, with a terminal zero."""
    sig = np.exp(
        np.linspace(np.log(config.sigma_max), np.log(config.sigma_min), config.steps)
    )
    sig[0] = config.sigma_max  # exp(log(x)) wobbles in the last ulp
    sig[-1] = config.sigma_min
    return np.concatenate([sig, [0.0]])


def expected_forward_passes(steps: int, cut_step: int) -> int:
    return 2 * (cut_step - 1) + (steps - cut_step + 1)


@dataclass
class Trajectory:
    """States z_T .. z_0 (length steps+1) and the per-step noise predictions."""

    states: list
    eps: list

    def digest(self) -> str:
        h = hashlib.sha256()
        for s in self.states:
            h.update(s.tobytes())
        return h.hexdigest()[:16]


@dataclass
class RunStats:
    mode: str
    steps: int
    cut_step: int
    effective_cut_step: int
    forward_passes: int
    seed: int
    dtype: str
    final_digest: str
    per_step_seconds: list = field(default_factory=list)
    wall_seconds: float = 0.0

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "steps": self.steps,
            "cut_step": self.cut_step,
            "effective_cut_step": self.effective_cut_step,
            "forward_passes": self.forward_passes,
            "seed": self.seed,
            "dtype": self.dtype,
            "final_digest": self.final_digest,
            "per_step_seconds": self.per_step_seconds,
            "wall_seconds": self.wall_seconds,
        }


def initial_latent(spec: ModelSpec, batch: int, height: int, width: int,
                   config: SamplerConfig, dtype=np.float32) -> np.ndarray:
    rng = Rng(config.seed)
    noise = normal_like(rng, (batch, spec.latent_channels, spec.frames, height, width), dtype)
    return noise * np.asarray(config.sigma_max, dtype)


def run(
    spec: ModelSpec,
    weights: dict,
    config: SamplerConfig,
    e_cond: np.ndarray,
    e_null: np.ndarray | None = None,
    mode: str = "vcut",
    z_init: np.ndarray | None = None,
    height: int = 8,
    width: int = 8,
    recompute_conditioner: bool = False,
    perturb_embedding_each_step: float = 0.0,
):
    """Denoise from seeded noise; returns (Trajectory, RunStats).

    ``baseline`` runs the unmodified network with guidance at every step
    (the cut is ignored: that is what the unmodified inference recipe does).
    ``modified`` and ``vcut`` execute the folded conditioner path and honor
    the cut; they differ only in whether the weights were pre-folded, so
    shared seeds give bitwise-equal trajectories across the two.

    ``recompute_conditioner`` rebuilds the (identical) conditioner cache at
    every step instead of once per run, and ``perturb_embedding_each_step``
    adds a constant to the conditional embedding before each rebuild; both
    exist for the cache-policy checker.
    """
    if mode not in RUN_MODES:
        raise ArgumentError(f"unknown mode {mode!r}; expected one of {RUN_MODES}")
    if mode == "baseline" and spec.folded:
        raise ConfigError("baseline mode needs the unfolded model")
    dtype = e_cond.dtype
    if e_null is None:
        e_null = null_embedding(e_cond.shape[0], spec.embed_dim, dtype)
    if z_init is None:
        z_init = initial_latent(spec, e_cond.shape[0], height, width, config, dtype)

    effective_cut = config.steps + 1 if mode == "baseline" else config.cut_step
    sched = GuidanceSchedule.linear(spec.frames, config.guidance_first, config.guidance_last)
    sigmas = sigma_schedule(config)

    cache = None
    if mode != "baseline":
        folded = fold_model_sites(spec, weights)
        cache = build_cache(folded, e_cond, e_null)

    z = z_init
    states = [z]
    eps_log = []
    passes = 0
    step_times = []
    t0 = time.perf_counter()
    e_work = e_cond
    for step in range(1, config.steps + 1):
        ts = time.perf_counter()
        if mode != "baseline" and recompute_conditioner:
            if perturb_embedding_each_step and step > 1:
                e_work = e_work + np.asarray(perturb_embedding_each_step, dtype)
            cache = build_cache(fold_model_sites(spec, weights), e_work, e_null)
        if step < effective_cut:
            if mode == "baseline":
                eps_c = forward_unet(spec, weights, z, step, e_cond, mode="baseline")
                eps_n = forward_unet(spec, weights, z, step, e_null, mode="baseline")
            else:
                eps_c = forward_unet(spec, weights, z, step, mode="vcut-cached", conditioner=cache.cond)
                eps_n = forward_unet(spec, weights, z, step, mode="vcut-cached", conditioner=cache.null)
            passes += 2
            eps = cfg_combine(eps_n, eps_c, sched)
        else:
            eps = forward_unet(spec, weights, z, step, mode="vcut-cached", conditioner=cache.averaged)
            passes += 1
        dt = np.asarray(sigmas[step] - sigmas[step - 1], dtype)
        z = z + dt * eps
        states.append(z)
        eps_log.append(eps)
        step_times.append(time.perf_counter() - ts)

    traj = Trajectory(states=states, eps=eps_log)
    stats = RunStats(
        mode=mode,
        steps=config.steps,
        cut_step=config.cut_step,
        effective_cut_step=effective_cut,
        forward_passes=passes,
        seed=config.seed,
        dtype=str(np.dtype(dtype)),
        final_digest=traj.digest(),
        per_step_seconds=step_times,
        wall_seconds=time.perf_counter() - t0,
    )
    assert passes == expected_forward_passes(config.steps, effective_cut)
    return traj, stats


@dataclass
class CachePolicyReport:
    ok: bool
    seeds_checked: list
    first_divergence: dict  # seed -> 1-indexed step of first differing state, or None

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "seeds_checked": self.seeds_checked,
            "first_divergence": {str(k): v for k, v in self.first_divergence.items()},
        }


def cache_policy_check(
    spec: ModelSpec,
    weights: dict,
    config: SamplerConfig,
    seeds,
    mode: str = "vcut",
    height: int = 8,
    width: int = 8,
    perturb_embedding_each_step: float = 0.0,
    dtype=np.float32,
) -> CachePolicyReport:
    """Compare compute-once-and-cache against recompute-every-step, bytewise.

    The two policies must agree exactly because the cached vectors depend
    only on (weights, embeddings). ``perturb_embedding_each_step`` feeds the
    recompute arm a drifting embedding — a negative control that must make
    the checker flag the first post-perturbation step.
    """
    if mode == "baseline":
        raise ArgumentError("cache policy applies to the folded-conditioner modes")
    seeds = list(seeds)
    if not seeds:
        raise ArgumentError("need at least one seed")
    divergence = {}
    for seed in seeds:
        cfg = SamplerConfig(
            steps=config.steps, cut_step=config.cut_step, sigma_max=config.sigma_max,
            sigma_min=config.sigma_min, seed=seed,
            guidance_first=config.guidance_first, guidance_last=config.guidance_last,
        )
        e_rng = Rng(seed ^ 0x5EED)
        e_cond = e_rng.uniform(-1.0, 1.0, (1, 1, spec.embed_dim), dtype)
        e_null = null_embedding(1, spec.embed_dim, dtype)
        cached, _ = run(spec, weights, cfg, e_cond, e_null, mode=mode, height=height, width=width)
        recomputed, _ = run(
            spec, weights, cfg, e_cond, e_null, mode=mode, height=height, width=width,
            recompute_conditioner=True,
            perturb_embedding_each_step=perturb_embedding_each_step,
        )
        first = None
        for idx, (a, b) in enumerate(zip(cached.states, recomputed.states)):
            if a.tobytes() != b.tobytes():
                first = idx  # state index == 1-indexed step that produced it
                break
        divergence[seed] = first
    ok = all(v is None for v in divergence.values())
    return CachePolicyReport(ok=ok, seeds_checked=seeds, first_divergence=divergence)

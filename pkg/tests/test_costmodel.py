"""Analytical MAC/parameter counting and the savings arithmetic."""

import json
from importlib import resources

import numpy as np
import pytest

from vcut.costmodel import (
    AffineCost,
    ArchSpec,
    AttentionCost,
    ConvCost,
    NormCost,
    arch_from_model_spec,
    build_cost_report,
    conditioner_macs,
    count_macs,
    count_params,
    fold_cross_attention,
    latency_estimate,
    load_arch,
    per_step_macs,
    remove_tca,
    svd_arch,
    vcut_totals,
)
from vcut.errors import ArgumentError
from vcut.model import ModelSpec, build_weights, parameter_count
from vcut.tensorops import Rng


class TestCounting:
    def test_single_affine(self):
        layer = AffineCost(d_in=3, d_out=2, tokens=1)
        assert layer.macs() == 6
        assert layer.params() == 8

    def test_toy_attention_hand_enumeration(self):
        a = AttentionCost("sca", channels=4, heads=1, cross_dim=4, query_len=2, key_len=2)
        # count the multiplies of the scalar evaluation directly
        c, d, lq, lk, heads = 4, 4, 2, 2, 1
        d_k = c // heads
        q_proj = lq * c * c
        kv_proj = 2 * lk * d * c
        scores = heads * lq * lk * d_k
        weighted = heads * lq * lk * d_k
        out_proj = lq * c * c
        assert a.macs() == q_proj + kv_proj + scores + weighted + out_proj
        assert a.params() == (c * c + c) + 2 * (d * c + c) + (c * c + c)

    def test_depthwise_conv(self):
        layer = ConvCost(c_in=8, c_out=8, taps=3, positions=10, groups=8)
        assert layer.macs() == 10 * 1 * 8 * 3
        assert layer.params() == 3 * 8 + 8

    def test_norms_cost_no_macs(self):
        assert NormCost(width=16).macs() == 0
        assert NormCost(width=16).params() == 32


class TestVcutTotals:
    def test_published_arithmetic(self):
        assert abs(vcut_totals(35.1, 25, 17) - 719.0) <= 1.0
        assert abs(vcut_totals(62.86, 25, 20) - 1382.0) <= 1.0

    def test_no_cut_is_exact_multiple(self):
        assert vcut_totals(36.11, 25, 26) == 25 * 36.11

    def test_full_cut(self):
        assert vcut_totals(10.0, 4, 1) == 20.0

    def test_out_of_range(self):
        with pytest.raises(ArgumentError):
            vcut_totals(10.0, 4, 6)


class TestLatencyModel:
    def test_proportional_scaling(self):
        got = latency_estimate(719.0, 903.0, 68.4)
        assert abs(got - 54.7) / 54.7 <= 0.02

    def test_xt_scaling(self):
        got = latency_estimate(1288.0, 1610.0, 120.6)
        assert abs(got - 97.3) / 97.3 <= 0.02

    def test_identity_ratio(self):
        assert latency_estimate(5.0, 5.0, 68.4) == 68.4


class TestMonotonicity:
    def test_removing_layers_never_increases_costs(self):
        arch = svd_arch(frames=3)
        rng = Rng(0)
        base_macs, base_params = count_macs(arch), count_params(arch)
        for _ in range(25):
            idx = int(rng.next_u64(1)[0] % len(arch.layers))
            reduced = ArchSpec(arch.name, arch.frames,
                               arch.layers[:idx] + arch.layers[idx + 1 :])
            assert count_macs(reduced) <= base_macs
            assert count_params(reduced) <= base_params

    def test_transforms_only_reduce(self):
        arch = svd_arch(frames=14)
        for transformed in (remove_tca(arch), fold_cross_attention(arch)):
            assert count_macs(transformed) <= count_macs(arch)
            assert count_params(transformed) < count_params(arch)


class TestToyMirror:
    """The enumeration of the toy model must agree with its weights exactly."""

    SPEC = ModelSpec(
        latent_channels=2, channels=(4, 6), enc_blocks=(1, 2), attn_levels=(True, True),
        heads=2, embed_dim=8, frames=2, time_dim=4,
    )

    def test_param_counter_matches_built_weights(self):
        arch = arch_from_model_spec(self.SPEC, batch=1, height=4, width=4)
        weights = build_weights(self.SPEC, seed=0)
        assert count_params(arch) == parameter_count(weights)

    def test_svd_layout_mirror(self):
        from vcut.model import svd_layout_spec

        spec = svd_layout_spec()
        arch = arch_from_model_spec(spec, batch=1, height=8, width=8)
        assert count_params(arch) == parameter_count(build_weights(spec, seed=1))
        assert sum(1 for l in arch.layers if isinstance(l, AttentionCost) and l.kind == "tca") == 16


class TestSvdArch:
    def test_sixteen_sites_per_kind(self):
        arch = svd_arch(frames=14)
        for kind in ("ssa", "sca", "tsa", "tca"):
            assert sum(1 for l in arch.layers if isinstance(l, AttentionCost) and l.kind == kind) == 16

    def test_conditioner_cost_is_negligible(self):
        arch = svd_arch(frames=14)
        assert conditioner_macs(arch) / count_macs(arch) < 1e-4
        # and survives the fold transform
        assert conditioner_macs(fold_cross_attention(arch)) == conditioner_macs(arch)

    def test_per_pass_scales_nearly_linearly_in_frames(self):
        a14 = count_macs(svd_arch(frames=14))
        a25 = count_macs(svd_arch(frames=25))
        assert abs(a25 / a14 - 25.0 / 14.0) < 0.01

    def test_bundled_data_files_match_builder(self):
        for fname, frames, name in (("svd.json", 14, "svd"), ("svd_xt.json", 25, "svd-xt")):
            doc = json.loads(resources.files("vcut").joinpath(f"data/{fname}").read_text())
            arch = ArchSpec.from_json(doc)
            built = svd_arch(frames=frames, name=name)
            assert count_macs(arch) == count_macs(built)
            assert count_params(arch) == count_params(built)

    def test_json_round_trip(self, tmp_path):
        arch = svd_arch(frames=3)
        p = tmp_path / "arch.json"
        p.write_text(json.dumps(arch.to_json()))
        back = load_arch(p)
        assert count_macs(back) == count_macs(arch)
        assert count_params(back) == count_params(arch)

    def test_load_arch_presets(self):
        assert load_arch("svd").frames == 14
        assert load_arch("svd-xt").frames == 25
        with pytest.raises(ArgumentError):
            load_arch("svd-xxl")


class TestCostReport:
    def test_fields_and_ordering(self):
        report = build_cost_report(svd_arch(frames=14), steps=25, cut_step=17,
                                   baseline_latency_s=68.4)
        assert report.macs_per_step_modified <= report.macs_per_step
        assert report.macs_per_step_folded <= report.macs_per_step_modified
        assert report.params_after_fold < report.params_after_tca_removal < report.params
        assert report.macs_total < report.macs_total_baseline
        assert report.latency_s < 68.4

import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

import core.longvideo as longvideo
from core.enhancer import IdentityUpscaler, OracleEnhancer, ReferenceEnhancer
from core.errors import PipelineError, RangeError
from core.longvideo import (
    enhance_keyframes,
    independent_seams,
    long_seams,
    pad_frames,
    plan_clips,
    run_independent_vsr,
    run_long_vsr,
    seam_flicker,
)
from core.models import SamplerOptions
from core.sampling import bidirectional_sample
from core.schedule import cosine_schedule


class CountingEnhancer(IdentityUpscaler):
    def __init__(self, target_scale):
        super().__init__(target_scale)
        self.calls = []

    def _enhance(self, frames, index):
        self.calls.append(index)
        return super()._enhance(frames, index)


class FailingEnhancer(ReferenceEnhancer):
    name = "failing"

    def _enhance(self, frames, index):
        raise RuntimeError("model crashed")


def test_plan_examples():
    plan = plan_clips(40, 14)
    assert plan.clips == [(1, 14), (14, 27), (27, 40)]
    assert plan.pad_count == 0 and plan.m == 3
    assert plan_clips(14, 14).clips == [(1, 14)]
    padded = plan_clips(15, 14)
    assert padded.pad_count == 12
    assert padded.clips == [(1, 14), (14, 27)]


@pytest.mark.parametrize("n,k", [(1, 14), (10, 1), (0, 0)])
def test_plan_rejects_degenerate_sizes(n, k):
    with pytest.raises(RangeError):
        plan_clips(n, k)


@given(n=st.integers(2, 300), k=st.integers(2, 30))
def test_plan_invariants(n, k):
    plan = plan_clips(n, k)
    assert all(end - start + 1 == k for start, end in plan.clips)
    assert all(a[1] == b[0] for a, b in zip(plan.clips, plan.clips[1:]))
    assert plan.clips[0][0] == 1
    assert plan.clips[-1][1] == n + plan.pad_count
    assert 0 <= plan.pad_count < k - 1
    assert (n + plan.pad_count - 1) % (k - 1) == 0


def test_pad_frames_repeats_the_last_frame():
    video = torch.arange(3.0).view(3, 1, 1, 1).expand(3, 3, 2, 2)
    padded = pad_frames(video, 2)
    assert padded.shape[0] == 5
    assert torch.equal(padded[3], video[2]) and torch.equal(padded[4], video[2])
    assert pad_frames(video, 0) is video


def test_each_boundary_is_enhanced_once():
    video = torch.rand(40, 3, 4, 4)
    enhancer = CountingEnhancer(2)
    keyframes = enhance_keyframes(video, plan_clips(40, 14), enhancer)
    assert sorted(keyframes) == [1, 14, 27, 40]
    assert sorted(enhancer.calls) == [0, 13, 26, 39]
    assert keyframes[14].shape == (3, 8, 8)


def test_oracle_keyframes_are_ground_truth():
    gt = torch.rand(14, 3, 8, 8)
    keyframes = enhance_keyframes(torch.rand(14, 3, 4, 4), plan_clips(14, 14), OracleEnhancer(gt, 2))
    assert sorted(keyframes) == [1, 14]
    assert torch.equal(keyframes[1], gt[0]) and torch.equal(keyframes[14], gt[13])


def test_enhancer_failure_names_the_clip():
    with pytest.raises(PipelineError, match="clip 1, keyframe 1"):
        enhance_keyframes(torch.rand(14, 3, 4, 4), plan_clips(14, 14), FailingEnhancer(2))


def _opts():
    return cosine_schedule(2), SamplerOptions(steps=2, sdedit_strength=1.0, seed=1)


def test_adjacent_clips_receive_the_same_keyframe(bundle, monkeypatch):
    seen = []
    real = longvideo._sample

    def spy(clip, first, last, *args):
        seen.append((first, last))
        return real(clip, first, last, *args)

    monkeypatch.setattr(longvideo, "_sample", spy)
    sched, opts = _opts()
    out = run_long_vsr(torch.rand(8, 3, 8, 8), IdentityUpscaler(4), bundle, sched, opts)
    assert len(seen) == 3
    for (_, last), (first, _) in zip(seen, seen[1:]):
        assert last is first
    assert out.shape == (8, 3, 32, 32)


@pytest.mark.parametrize("n", [2, 4, 6, 9])
def test_output_length_matches_input(bundle, n):
    sched, opts = _opts()
    out = run_long_vsr(torch.rand(n, 3, 8, 8), IdentityUpscaler(4), bundle, sched, opts)
    assert out.shape == (n, 3, 32, 32)


def test_single_clip_equals_one_bidirectional_sample(bundle):
    sched, opts = _opts()
    video = torch.rand(4, 3, 8, 8, generator=torch.Generator().manual_seed(2))
    enhancer = IdentityUpscaler(4)
    long_out = run_long_vsr(video, enhancer, bundle, sched, opts)
    direct = bidirectional_sample(
        video[None], enhancer.enhance(video[0])[None], enhancer.enhance(video[3])[None], bundle, sched, opts
    )[0]
    torch.testing.assert_close(long_out, direct)


def test_independent_baseline_keeps_length(bundle):
    sched, opts = _opts()
    out = run_independent_vsr(torch.rand(6, 3, 8, 8), IdentityUpscaler(4), bundle, sched, opts)
    assert out.shape == (6, 3, 32, 32)


def test_seam_positions():
    assert long_seams(plan_clips(40, 14)) == [13, 26]
    assert long_seams(plan_clips(15, 14)) == [13]
    assert long_seams(plan_clips(14, 14)) == []
    assert independent_seams(40, 14) == [13, 27]


def test_seam_flicker():
    video = torch.zeros(4, 3, 2, 2)
    video[2:] = 1.0
    assert seam_flicker(video, [1]) == 1.0
    assert seam_flicker(video, [0]) == 0.0
    assert seam_flicker(video, []) == 0.0


def test_shared_keyframes_and_independent_clips_both_give_seam_statistics(live_bundle):
    sched, opts = _opts()
    video = torch.rand(7, 3, 8, 8, generator=torch.Generator().manual_seed(5))
    enhancer = IdentityUpscaler(4)
    shared = run_long_vsr(video, enhancer, live_bundle, sched, opts)
    independent = run_independent_vsr(video, enhancer, live_bundle, sched, opts)
    k = live_bundle.config.frames
    shared_stat = seam_flicker(shared, long_seams(plan_clips(7, k)))
    independent_stat = seam_flicker(independent, independent_seams(7, k))
    assert shared.shape == independent.shape == (7, 3, 32, 32)
    assert torch.isfinite(torch.tensor([shared_stat, independent_stat])).all()
    assert shared_stat >= 0.0 and independent_stat >= 0.0

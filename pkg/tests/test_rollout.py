import numpy as np
import pytest

from multiscale_diffusion.diffusion import GaussianDenoiser, NoiseSchedule, SamplerConfig, SamplerDivergenceError
from multiscale_diffusion.rollout import (
    RolloutError,
    RolloutRequest,
    TrajectoryEnsemble,
    ensemble_statistics,
    export_statistics_csv,
    load_ensemble,
    run,
    save_ensemble,
)
from multiscale_diffusion.rng import Stream
from multiscale_diffusion.scheme import Action, InferenceScheme, make_scheme, plan_autoregressive, plan_multiscale
from multiscale_diffusion.synthetic import Trajectory

FAST = SamplerConfig(NoiseSchedule(steps=10), seed=1)


class Recorder(GaussianDenoiser):
    """Gaussian denoiser that logs the windows it is asked about."""

    def __init__(self):
        super().__init__(1.0)
        self.seen = []

    def __call__(self, x, sigma, mask, time_indices=None):
        self.seen.append((tuple(np.asarray(time_indices)), tuple(np.asarray(mask)), x.copy()))
        return super().__call__(x, sigma, mask, time_indices)


def observed(n=20, seed=0):
    return Trajectory(Stream(seed).normal(n), n - 1)


def test_multiscale_calls_and_windows():
    d = Recorder()
    s = plan_multiscale(9, 3)
    obs = observed()
    e = run(d, RolloutRequest(s, obs, 9, 2, FAST))
    steps = FAST.schedule.steps
    assert d.calls == 3 * steps
    assert e.sampler_calls == 3 * 2
    first_t, first_mask, first_x = d.seen[0]
    assert first_t == (-9, -3, -1, 0, 1, 3, 9)
    assert first_mask == (True,) * 4 + (False,) * 3
    assert np.array_equal(first_x[0, :4], obs.at([-9, -3, -1, 0]))
    assert e.provenance[0] == (0, 0) and e.provenance[8] == (0, 0) and e.provenance[1] == (1, 0)


def test_autoregressive_conditions_on_recent_steps_only():
    d = Recorder()
    obs = observed()
    e = run(d, RolloutRequest(plan_autoregressive(9, 3), obs, 9, 1, FAST))
    assert d.calls == 3 * FAST.schedule.steps
    steps = FAST.schedule.steps
    second = d.seen[steps][2][0, :4]
    fut = e.members[0].future
    assert np.array_equal(second, np.concatenate([obs.at([0]), fut[:3]]))


def test_call_count_extended_scheme():
    d = GaussianDenoiser(1.0)
    e = run(d, RolloutRequest(make_scheme("hierarchy2", 9, 3), observed(), 32, 3, FAST))
    assert e.sampler_calls == 12 * 3
    assert d.calls == 12 * FAST.schedule.steps
    assert len(e.provenance) == 32 and {b for _, b in e.provenance} == {0, 1, 2, 3}


def test_observed_untouched_and_shared():
    obs = observed(30)
    before = obs.values.copy()
    e = run(GaussianDenoiser(), RolloutRequest(plan_multiscale(9, 3), obs, 20, 4, FAST))
    assert np.array_equal(obs.values, before)
    for m in e.members:
        assert np.array_equal(m.past, before)
        assert len(m.future) == 20 and np.all(np.isfinite(m.future))


def test_deterministic_and_member_independent():
    req = RolloutRequest(plan_multiscale(9, 3), observed(), 18, 4, FAST)
    a = run(GaussianDenoiser(), req).values()
    assert np.array_equal(a, run(GaussianDenoiser(), req).values())
    # a member does not depend on how many others are sampled with it
    small = run(GaussianDenoiser(), RolloutRequest(plan_multiscale(9, 3), observed(), 18, 2, FAST)).values()
    assert np.array_equal(a[:2], small)


def test_degenerate_all_conditioning():
    tau = (-2, -1, 0)
    s = InferenceScheme((Action(0, 0, (True, True, True)),), (tau,), 1, 1)
    d = GaussianDenoiser()
    obs = Trajectory(np.array([1.0, 2.0, 3.0]), 2)
    e = run(d, RolloutRequest(s, obs, 1, 3, FAST, validate=False))
    assert d.calls == 0
    assert all(np.array_equal(m.past, obs.values) for m in e.members)


def test_runtime_admissibility_error_names_action_and_index():
    tau = (-1, 0, 1)
    s = InferenceScheme(
        (Action(0, 0, (True, True, False)), Action(0, 2, (True, True, False))), (tau,), 3, 1
    )
    with pytest.raises(RolloutError) as info:
        run(GaussianDenoiser(), RolloutRequest(s, observed(), 3, 1, FAST, validate=False))
    assert info.value.action == 1 and info.value.index == 2
    assert "action 1" in str(info.value) and "2" in str(info.value)


def test_invalid_scheme_rejected():
    tau = (-1, 0, 1)
    s = InferenceScheme((Action(0, 0, (True, True, False)),), (tau,), 3, 1)
    with pytest.raises(RolloutError):
        run(GaussianDenoiser(), RolloutRequest(s, observed(), 3, 1, FAST))


def test_request_validation():
    with pytest.raises(ValueError):
        RolloutRequest(plan_multiscale(9, 3), observed(5), 9, 1, FAST)
    with pytest.raises(ValueError):
        RolloutRequest(plan_multiscale(9, 3), observed(), 0, 1, FAST)
    with pytest.raises(ValueError):
        RolloutRequest(plan_multiscale(9, 3), observed(), 9, 0, FAST)


def test_divergence_carries_provenance():
    def bad(x, sigma, mask, t):
        return np.full_like(x, np.inf)

    with pytest.raises(SamplerDivergenceError, match="action 0"):
        run(bad, RolloutRequest(plan_multiscale(9, 3), observed(), 9, 1, FAST))


def test_gaussian_rollout_std():
    e = run(GaussianDenoiser(1.0), RolloutRequest(plan_multiscale(9, 3), observed(), 18, 256, SamplerConfig(seed=2)))
    stats = ensemble_statistics(e)
    assert np.all(np.abs(stats.std - 1.0) < 0.1)


def test_statistics_trivial_cases():
    one = run(GaussianDenoiser(), RolloutRequest(plan_multiscale(9, 3), observed(), 9, 1, FAST))
    assert np.all(ensemble_statistics(one).std == 0)
    m = one.members[0]
    same = TrajectoryEnsemble([m, m, m], one.provenance)
    st = ensemble_statistics(same, [(1, 4)])
    assert np.array_equal(st.pooled["1:4"], np.tile(m.future[:4], 3))


def test_ensemble_round_trip(tmp_path):
    e = run(GaussianDenoiser(), RolloutRequest(plan_multiscale(9, 3), observed(), 12, 3, FAST))
    save_ensemble(tmp_path / "e.bin", e, note="x")
    back = load_ensemble(tmp_path / "e.bin")
    assert np.array_equal(back.values(), e.values())
    assert back.provenance == e.provenance and back.scheme_name == "multiscale"
    export_statistics_csv(tmp_path / "s.csv", ensemble_statistics(e))
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t,mean,std" and len(lines) == 13

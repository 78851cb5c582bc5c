import csv

import numpy as np
import pytest

from nfisac.channel import PolarCoord, Scatterer, build_scenario
from nfisac.config import desk_config
from nfisac.experiments import gen_scenario, run_baseline
from nfisac.optimizer import (TRACE_COLUMNS, PddOptions, inner_loop, load_solution, optimize,
                              save_solution, write_trace)
from nfisac.rates import comm_rates


def _segments_monotone(block_trace, slack=1e-6):
    worst = 0.0
    for prev, cur in zip(block_trace, block_trace[1:]):
        if cur[2] == "start":
            continue
        worst = max(worst, prev[3] - cur[3])
    return worst <= slack, worst


@pytest.fixture(scope="module")
def small_run():
    cfg = desk_config().replace(n_tx=8, n_rx=8, n_rf=4, n_users=2, n_targets=1)
    sc = gen_scenario(cfg, 11)
    return cfg, sc, optimize(sc, cfg, PddOptions(seed=3))


def test_inner_loop_monotone(small_run):
    _, _, sol = small_run
    ok, worst = _segments_monotone(sol.block_trace)
    assert ok, worst
    assert max(sol.inner_iters) <= 100


def test_small_run_converges(small_run):
    cfg, _, sol = small_run
    assert sol.status == "converged"
    assert sol.residual <= 1e-4
    assert np.abs(sol.beamformer.analog).min() == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(sol.precoder) ** 2 <= cfg.power_max_mw * (1 + 1e-7)
    assert sol.report.min_sensing_rate >= cfg.sense_rate_min_bps - 1e-6 - 1e-2
    assert sol.report_aux.min_sensing_rate >= cfg.sense_rate_min_bps - 1e-6
    assert abs(sol.report.min_total - sol.report_aux.min_total) <= 1e-2


def test_converged_warm_start_exits_immediately(small_run):
    cfg, sc, sol = small_run
    res = inner_loop(sol.precoder, sol.beamformer.analog, sol.beamformer.digital, sol.alloc, sol.state,
                     sc, cfg, PddOptions())
    assert res.iterations == 1


def test_single_user_capacity():
    cfg = desk_config().replace(n_users=1, n_targets=1, sense_rate_min_bps=0.0)
    sc = gen_scenario(cfg, 21)
    sol = optimize(sc, cfg, PddOptions(hybrid=False))
    h = sc.comm_channels[0]
    cap = np.log2(1 + cfg.power_max_mw * np.linalg.norm(h) ** 2 / cfg.noise_comm_mw)
    assert sol.report.min_total == pytest.approx(cap, rel=1e-4)


def test_tiny_instance_against_grid_search():
    cfg = desk_config().replace(n_tx=2, n_rx=2, n_rf=2, n_users=1, n_targets=1, n_scatterers=1,
                                sense_rate_min_bps=0.0)
    user = PolarCoord.from_degrees(20.0, 25.0)
    target = PolarCoord.from_degrees(30.0, -40.0)
    sc = build_scenario([user], [[Scatterer(PolarCoord.from_degrees(25.0, 5.0), 8.0)]], [target], cfg)
    h, G = sc.comm_channels[0], sc.sense_channels[0]

    a, phi = np.meshgrid(np.linspace(0, np.pi / 2, 801), np.linspace(0, 2 * np.pi, 1601), indexing="ij")
    p = np.sqrt(cfg.power_max_mw) * np.stack([np.cos(a), np.sin(a) * np.exp(1j * phi)])
    rate = np.log2(1 + np.abs(np.einsum("i,i...->...", h.conj(), p)) ** 2 / cfg.noise_comm_mw)
    sens = np.linalg.norm(np.einsum("ij,j...->i...", G, p), axis=0) ** 2 / cfg.noise_sense_mw
    # threshold halfway between the comm-optimal beam's sensing SINR and the best possible
    i_best = np.unravel_index(np.argmax(rate), rate.shape)
    thr = 0.5 * (sens[i_best] + sens.max())
    cfg = cfg.replace(sense_rate_min_bps=float(np.log2(1 + thr)))
    grid = rate[sens >= thr].max()

    sol = optimize(sc, cfg, PddOptions(hybrid=False, common_stream=False))
    assert sol.report.min_total == pytest.approx(grid, rel=2e-2)
    assert sol.report.min_sensing_rate >= cfg.sense_rate_min_bps - 1e-6


def test_relaxed_sensing_dominates(small_run):
    cfg, sc, sol = small_run
    relaxed = run_baseline("rsma_commonly_nf", sc, cfg, PddOptions(seed=3), incumbent=sol)
    assert relaxed.report.min_total >= sol.report.min_total - 1e-12


@pytest.mark.xfail(reason="WMMSE steps at high SNR gain less than the 1e-3 inner tolerance, so the "
                          "SDMA and RSMA runs stop at different points", strict=False)
def test_sdma_single_user_matches_rsma_without_common():
    cfg = desk_config().replace(n_users=1, n_targets=1)
    sc = gen_scenario(cfg, 8)
    sdma = run_baseline("sdma_hybrid_nf", sc, cfg, PddOptions(seed=1))
    rsma = run_baseline("rsma_hybrid_nf", sc, cfg, PddOptions(seed=1))
    # one user: the common stream adds nothing beyond a private stream in the same direction
    private_only = comm_rates(rsma.delivered, np.zeros(1), sc, cfg).private_rates[0]
    assert sdma.report.min_total == pytest.approx(rsma.report.min_total, abs=1e-3)
    assert private_only <= rsma.report.min_total + 1e-9


def test_solution_export_roundtrip(tmp_path, small_run):
    _, _, sol = small_run
    save_solution(tmp_path / "s.json", sol)
    back = load_solution(tmp_path / "s.json")
    np.testing.assert_allclose(back.precoder, sol.precoder)
    np.testing.assert_allclose(back.beamformer.analog, sol.beamformer.analog, atol=1e-12)
    np.testing.assert_allclose(back.beamformer.digital, sol.beamformer.digital)
    write_trace(tmp_path / "t.csv", sol)
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) - 1 == sum(sol.inner_iters)


def test_optimizer_is_deterministic():
    cfg = desk_config().replace(n_tx=8, n_rx=8, n_rf=4, n_users=2, n_targets=1)
    sc = gen_scenario(cfg, 2)
    a = optimize(sc, cfg, PddOptions(seed=5, max_outer=3))
    b = optimize(sc, cfg, PddOptions(seed=5, max_outer=3))
    np.testing.assert_array_equal(a.precoder, b.precoder)

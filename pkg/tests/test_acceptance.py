"""Acceptance suite: one test per criterion, each at its stated tolerance and
time budget. A pass/fail line per criterion is printed in the terminal
summary; run ``python tests/test_acceptance.py`` for this module alone."""

import hashlib
import time

import numpy as np
import pytest

from lotap.ar import fit_yule_walker
from lotap.cli import main
from lotap.data import SynConfig, TensorSeries, decode_series, encode_series, generate_syn, load_series, save_series
from lotap.evaluate import persistence_mspe, rolling_evaluate, subspace_stability, timing_benchmark
from lotap.model import FitConfig, fit, load_model, save_model
from lotap.tensor import bcirc_oracle, t_product
from lotap.tsvd import column_orthogonality_residual, truncated_tsvd, tubal_rank, tucker_ranks

criterion = pytest.mark.criterion


def rel(a, b):
    return np.linalg.norm(np.ravel(a - b)) / np.linalg.norm(np.ravel(b))


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.1f}s, budget {self.seconds}s"


@criterion(1, "t-product agrees with the block-circulant oracle")
def test_t_product_oracle(record_property):
    rng = np.random.default_rng(1)
    worst = 0.0
    with Budget(5):
        for _ in range(200):
            n1, n2, n4 = rng.integers(1, 7, size=3)
            n3 = rng.integers(1, 9)
            x, y = rng.standard_normal((n1, n2, n3)), rng.standard_normal((n2, n4, n3))
            worst = max(worst, rel(t_product(x, y), bcirc_oracle(x, y)))
    record_property("max_rel_err", f"{worst:.2e}")
    assert worst < 1e-10


@criterion(2, "truncated t-SVD is exact at the tubal rank")
def test_truncated_tsvd_exact(record_property):
    rng = np.random.default_rng(2)
    worst_rec = worst_orth = 0.0
    with Budget(5):
        for _ in range(50):
            r = int(rng.integers(1, 5))
            n1, n2 = rng.integers(r, 21, size=2)
            n3 = int(rng.integers(1, 9))
            x = t_product(rng.standard_normal((n1, r, n3)), rng.standard_normal((r, n2, n3)))
            d = truncated_tsvd(x, r)
            worst_rec = max(worst_rec, rel(d.reconstruct(), x))
            worst_orth = max(worst_orth, column_orthogonality_residual(d.u), column_orthogonality_residual(d.v))
    record_property("max_rec_err", f"{worst_rec:.2e}")
    record_property("max_orth_err", f"{worst_orth:.2e}")
    assert worst_rec < 1e-8 and worst_orth < 1e-8


@criterion(3, "tubal rank <= min(mode-1, mode-2 unfolding ranks)")
def test_rank_inequality(record_property):
    rng = np.random.default_rng(3)
    violations = 0
    with Budget(10):
        for _ in range(100):
            dims = rng.integers(4, 13, size=3)
            ranks = [int(rng.integers(1, n + 1)) for n in dims]
            core = rng.standard_normal(ranks)
            f = [rng.standard_normal((n, r)) for n, r in zip(dims, ranks)]
            x = np.einsum("abc,ia,jb,kc->ijk", core, *f)
            r1, r2, _ = tucker_ranks(x, 1e-2)
            violations += tubal_rank(x, 1e-2) > min(r1, r2)
    record_property("violations", violations)
    assert violations == 0


@criterion(4, "AR(3) coefficient recovery")
def test_yule_walker_recovery(record_property):
    truth = np.array([0.5, -0.3, 0.1])
    rng = np.random.default_rng(4)
    with Budget(1):
        x = np.zeros(1200)
        x[:3] = rng.standard_normal(3)
        for t in range(3, 1200):
            x[t] = truth @ x[t - 3:t][::-1] + 0.01 * rng.standard_normal()
        a = fit_yule_walker(x[200:], 3).a
    record_property("coeffs", np.array2string(a, precision=3))
    assert np.all(np.abs(a - truth) <= 0.1)


@criterion(5, "objective trace is non-increasing")
def test_monotone_descent(record_property):
    rng = np.random.default_rng(5)
    worst = -np.inf
    with Budget(30):
        for k in range(20):
            n1, n2 = rng.integers(15, 41, size=2)
            n3 = int(rng.integers(3, 11))
            series, _ = generate_syn(SynConfig(n1=int(n1), n2=int(n2), n3=n3, T=60, rho=float(rng.uniform(0.01, 0.2)),
                                               seed=k, burn_in=100))
            cfg = FitConfig(r=4, p=int(rng.integers(1, 4)), diag_mode=("relaxed", "full")[k % 2],
                            max_iters=10, rel_tol=1e-12, seed=k)
            trace = np.array(fit(series, cfg).report.objective_trace)
            worst = max(worst, np.max(np.diff(trace) / trace[:-1], initial=-np.inf))
    record_property("max_rel_increase", f"{worst:.2e}")
    assert worst <= 1e-6


@criterion(6, "convergence within 10 iterations on SYN defaults")
def test_convergence_speed(record_property):
    counts = []
    with Budget(120):
        for seed in range(10):
            series, _ = generate_syn(SynConfig(T=80, seed=seed))
            rep = fit(series, FitConfig(r=4, p=2, phi=10.0, diag_mode="relaxed", seed=seed)).report
            counts.append(rep.iterations_run if rep.rel_change_trace[-1] < 1e-3 else None)
    ok = sum(c is not None and c <= 10 for c in counts)
    record_property("converged", f"{ok}/10")
    record_property("iterations", counts)
    assert ok >= 9


def _syn_accuracy(n1, n2, budget, record_property):
    with Budget(budget):
        series, _ = generate_syn(SynConfig(n1=n1, n2=n2, n3=10, T=130, seed=7))
        rep = rolling_evaluate(series, 80, FitConfig(r=4, p=2), max_origins=50)
        base = persistence_mspe(series, 80, 50)
    record_property("mspe", f"{rep.mspe:.5f}")
    record_property("persistence", f"{base:.5f}")
    assert len(rep.origins) == 50
    assert rep.mspe <= 0.02
    assert rep.mspe < base


@criterion(7, "SYN forecasting accuracy, 40x40x10 smoke variant")
def test_syn_accuracy_smoke(record_property):
    _syn_accuracy(40, 40, 60, record_property)


@criterion(7, "SYN forecasting accuracy, full 100x100x10")
def test_syn_accuracy_full(record_property):
    _syn_accuracy(100, 100, 600, record_property)


@criterion(8, "per-iteration time scales linearly in T, flat in r")
def test_complexity_scaling(record_property):
    cfg = FitConfig(r=4, p=2)
    with Budget(300):
        rows = timing_benchmark([(60, 60, 8, 80, 4), (60, 60, 8, 160, 4), (60, 60, 8, 80, 2)], cfg,
                                repeats=5, warmup=1, threads=1, iterations=5)
    base, double_t, half_r = (row[-1] for row in rows)
    t_ratio, r_ratio = double_t / base, base / half_r
    record_property("T_ratio", f"{t_ratio:.2f}")
    record_property("r_ratio", f"{r_ratio:.2f}")
    assert 1.5 <= t_ratio <= 3.0
    assert 0.8 <= r_ratio <= 1.6


@criterion(9, "subspace residual starts at zero and grows")
def test_subspace_stability(record_property):
    with Budget(60):
        series, _ = generate_syn(SynConfig(T=50, drift=1e-3, seed=0))
        res = np.array([r for _, r in subspace_stability(series, rank=4, count=50)])
    early, late = res[1:10].mean(), res[39:50].mean()
    record_property("res_1", f"{res[0]:.1e}")
    record_property("early", f"{early:.4f}")
    record_property("late", f"{late:.4f}")
    assert res[0] < 1e-8
    assert late > early


@criterion(10, "bit-exact persistence and deterministic CLI")
def test_persistence_and_determinism(tmp_path, record_property):
    with Budget(10):
        series, _ = generate_syn(SynConfig(n1=20, n2=20, n3=6, T=40, burn_in=50, seed=10))
        save_series(series, tmp_path / "s.tsr")
        back = load_series(tmp_path / "s.tsr")
        assert back.data.tobytes() == series.data.tobytes()
        assert decode_series(encode_series(TensorSeries(series.data))).data.tobytes() == series.data.tobytes()

        model = fit(series, FitConfig(r=4, p=2))
        save_model(model, tmp_path / "m.lotp")
        loaded = load_model(tmp_path / "m.lotp")
        for name in ("u_hat", "v_hat", "s_hat"):
            assert getattr(loaded, name).tobytes() == getattr(model, name).tobytes()
        assert loaded.coeffs.a.tobytes() == model.coeffs.a.tobytes()

        digests = []
        for run in ("a", "b"):
            d = tmp_path / run
            d.mkdir()
            assert main(["generate", "-o", str(d / "x.tsr"), "--n1", "20", "--n2", "20", "--n3", "6",
                         "--length", "90", "--seed", "42"]) == 0
            assert main(["fit", "-i", str(d / "x.tsr"), "-m", str(d / "m.lotp"), "--train", "80"]) in (0, 3)
            assert main(["forecast", "-m", str(d / "m.lotp"), "-o", str(d / "f.tsr")]) == 0
            digests.append([hashlib.sha256((d / n).read_bytes()).hexdigest()
                            for n in ("x.tsr", "x.tsr.truth.json", "m.lotp", "m.lotp.trace.csv", "f.tsr")])
    record_property("files_compared", len(digests[0]))
    assert digests[0] == digests[1]


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))

"""Acceptance criteria, one test per criterion, each at its stated tolerance.

Every test records a one-line PASS/FAIL verdict that is printed in the
terminal summary. The desk-scale criteria (7, 8, 10) share one
experiment artifact built by the ``desk`` fixture.

Run on its own with ``pytest tests/test_acceptance.py -v``.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import record_acceptance
from sparse_evo import analysis, es
from sparse_evo.gd import gd_train, loss_and_grad, masked_grad
from sparse_evo.harness.cli import main as cli_main
from sparse_evo.harness.config import parse_config
from sparse_evo.harness.run import run_experiment
from sparse_evo.lineage import load_lineage
from sparse_evo.net import NetworkSpec, init_params
from sparse_evo.pruning import dense_mask, prune_step, survivor_schedule
from sparse_evo.rng import stream
from sparse_evo.tasks import SphereTask, make_task

SEEDS = [0, 1, 2, 3, 4]
DESK_T = 14
SPARSEST = [DESK_T - 3, DESK_T - 2, DESK_T - 1]
DESK_NET = {"kind": "mlp", "layer_dims": [784, 32, 10], "activation": "tanh", "output_transform": "logits"}
GD_STEPS = 2000


def desk_task(mnist_dir):
    return {"kind": "classify", "data_dir": mnist_dir, "train_subset": 2000, "batch_size": 256}


@pytest.fixture(scope="session")
def desk(tmp_path_factory, mnist_dir):
    """SNR and magnitude lineages plus random-pruning baselines, 5 seeds."""
    out = tmp_path_factory.mktemp("desk")
    cfg = parse_config({
        "experiment": "baselines", "algo": "snes", "task": desk_task(mnist_dir), "network": DESK_NET,
        "p": 0.2, "T": DESK_T, "G": 200, "N": 64, "sigma_init": 0.05, "hp": {"lrate_sigma": 0.2},
        "seeds": SEEDS, "heuristics": ["snr", "final_magnitude"], "baselines": ["random_global"],
        "baseline_reference": "final_magnitude", "baseline_iterations": SPARSEST,
    })
    t0 = time.perf_counter()
    run_experiment(cfg, out)
    return out, cfg, time.perf_counter() - t0


def _metrics(artifact):
    import csv
    with open(artifact / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    table = {}
    for r in rows:
        table.setdefault((r["condition"], int(r["iteration"])), {})[int(r["seed"])] = float(r["metric"])
    return table


# 1 -----------------------------------------------------------------------------

def test_01_sparsity_schedule():
    t0 = time.perf_counter()
    spec = NetworkSpec(layer_dims=(784, 32, 10))
    d = spec.num_params
    rng = np.random.default_rng(0)
    mask = dense_mask(d)
    counts = [d]
    for _ in range(20):
        scores = np.where(mask, rng.random(d), -np.inf)
        mask, _ = prune_step(scores, mask, 0.2)
        counts.append(int(mask.sum()))
    expected = [d]
    for _ in range(20):
        expected.append(expected[-1] * 4 // 5)  # integer floor(0.8 n)
    schedule_ok = counts == expected == survivor_schedule(d, 0.2, 20)
    target = d * 0.8 ** 20
    gap = abs(counts[-1] - target)
    elapsed = time.perf_counter() - t0
    ok = schedule_ok and gap <= 1 and elapsed < 1
    record_acceptance(1, ok, f"counts follow iterated floor: {schedule_ok}; D={d} final {counts[-1]} "
                             f"vs D*0.8^20={target:.2f} (gap {gap:.2f} counts, need <= 1); {elapsed:.2f}s")
    assert schedule_ok
    assert gap <= 1, "iterated floor drifts below D*0.8^20 by more than one count"
    assert elapsed < 1


# 2 -----------------------------------------------------------------------------

def _sort_oracle(scores, mask, p):
    alive = sorted((scores[i], i) for i in np.flatnonzero(mask))
    frac = Fraction(p).limit_denominator(1000)
    keep = len(alive) * (frac.denominator - frac.numerator) // frac.denominator
    out = np.zeros_like(mask)
    for _, i in alive[len(alive) - keep:]:
        out[i] = True
    return out


def test_02_threshold_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    mismatches = 0
    for k in range(1000):
        d = int(rng.integers(2, 10_001))
        p = float(rng.choice([0.1, 0.2, 0.25, 0.5, 0.75]))
        if k % 2:
            scores = rng.integers(0, max(2, d // 10), d).astype(float)  # many ties
        else:
            scores = rng.normal(size=d)
        mask = rng.random(d) < rng.uniform(0.2, 1.0)
        if mask.sum() < 2:
            mask[:2] = True
        scores = np.where(mask, scores, -np.inf)
        got, _ = prune_step(scores, mask, p)
        mismatches += not np.array_equal(got, _sort_oracle(scores, mask, p))
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 30
    record_acceptance(2, ok, f"{mismatches} mismatches vs full-sort oracle on 1000 vectors; {elapsed:.1f}s")
    assert mismatches == 0 and elapsed < 30


# 3 -----------------------------------------------------------------------------

class _ArrayTask:
    kind = "arrays"

    def __init__(self, x, y):
        self.x, self.y = x, y

    def train_data(self, spec):
        return self.x, self.y


def test_03_mask_closure():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    violations = 0
    for k in range(200):
        algo = (es.ALGOS + ("gd",))[k % 5]
        if algo == "gd":
            dims = (int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 4)))
            spec = NetworkSpec(layer_dims=dims, activation=str(rng.choice(["tanh", "relu"])))
            mask = (rng.random(spec.num_params) < rng.uniform(0.1, 0.9)).astype(float)
            x = rng.normal(size=(12, dims[0]))
            task = _ArrayTask(x, rng.integers(0, dims[-1], 12))
            init = rng.normal(size=spec.num_params)
            for steps in (1, 2, 3):
                rec = gd_train(spec, init, mask, task, steps, {"lrate": 0.01, "batch_size": 4}, np.random.default_rng(k))
                violations += int(np.any(rec.final_params[mask == 0] != 0))
            continue
        d = int(rng.integers(2, 30))
        mask = (rng.random(d) < rng.uniform(0.1, 0.9)).astype(float)
        state = es.init_state(algo, rng.normal(size=d), rng.uniform(0.01, 1, d), mask)
        hp = es.strategy_hp(algo)
        for _ in range(3):
            pop = es.sample_population(state, mask, 8, rng, antithetic=hp["antithetic"])
            state = es.es_update(algo, state, pop, rng.normal(size=8), hp, mask)
            violations += int(np.any(state.mean[mask == 0] != 0) or np.any(state.sigma[mask == 0] != 0))
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 60
    record_acceptance(3, ok, f"{violations} non-zero masked entries over 200 configs (4 ES + GD); {elapsed:.1f}s")
    assert ok


# 4 -----------------------------------------------------------------------------

def _fd_check(fitness, analytic, theta, sigma, seed):
    d = theta.size
    mask = np.ones(d)
    state = es.init_state("open_es", theta, sigma, mask)
    pop = es.sample_population(state, mask, 100_000, np.random.default_rng(seed))
    f = fitness(pop.candidates)
    g = es.fd_gradient(state, pop, f)
    se = (f[:, None] * pop.noise / state.sigma).std(axis=0, ddof=1) / np.sqrt(f.size)
    return np.max(np.abs(g - analytic) / se)


def test_04_estimator():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    d = 8
    a = rng.normal(size=d)
    theta = rng.normal(size=d)
    sigma = rng.uniform(0.05, 0.5, d)
    z_lin = _fd_check(lambda x: x @ a, a, theta, sigma, 0)
    curv = rng.uniform(0.1, 2.0, d)
    c = rng.normal(size=d)
    z_quad = _fd_check(lambda x: -np.sum(curv * (x - c) ** 2, axis=1), -2 * curv * (theta - c), theta, sigma, 1)
    elapsed = time.perf_counter() - t0
    ok = z_lin < 3 and z_quad < 3 and elapsed < 60
    record_acceptance(4, ok, f"max |error|/MC-stderr: linear {z_lin:.2f}, diagonal quadratic {z_quad:.2f} "
                             f"(need < 3, N=1e5, D=8); {elapsed:.1f}s")
    assert ok


# 5 -----------------------------------------------------------------------------

def test_05_backprop():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    h = 1e-5
    for _ in range(20):
        dims = (int(rng.integers(2, 9)), int(rng.integers(2, 10)), int(rng.integers(2, 6)))
        spec = NetworkSpec(layer_dims=dims, activation=str(rng.choice(["tanh", "relu"])),
                           output_transform=str(rng.choice(["logits", "identity", "tanh"])))
        assert spec.num_params < 200
        params = rng.normal(size=spec.num_params)
        mask = (rng.random(spec.num_params) < 0.8).astype(float)
        x, y = rng.normal(size=(10, dims[0])), rng.integers(0, dims[-1], 10)
        g = masked_grad(spec, params, mask, (x, y))
        fd = np.zeros_like(g)
        for i in np.flatnonzero(mask):
            e = np.zeros_like(params)
            e[i] = h
            fd[i] = (loss_and_grad(spec, params + e, mask, x, y)[0] - loss_and_grad(spec, params - e, mask, x, y)[0]) / (2 * h)
        worst = max(worst, np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), np.max(np.abs(fd))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 60
    record_acceptance(5, ok, f"max relative error (max|g-fd| / max|g|) {worst:.2e} on 20 MLPs (need < 1e-6); {elapsed:.1f}s")
    assert ok


# 6 -----------------------------------------------------------------------------

def test_06_es_convergence():
    t0 = time.perf_counter()
    task = SphereTask()
    finals = {}
    for algo in ("snes", "sep_cma"):
        finals[algo] = []
        for seed in range(5):
            mask = np.ones(10)
            state = es.init_state(algo, stream(seed, "init").normal(size=10), 0.5, mask)
            ev = es.evolve(algo, state, mask, task, 500, 32, stream(seed, "es"))
            finals[algo].append(np.linalg.norm(ev.final.mean))
    elapsed = time.perf_counter() - t0
    ok = all(max(v) < 1e-3 for v in finals.values()) and elapsed < 60
    record_acceptance(6, ok, "worst final |theta|: " + ", ".join(f"{k} {max(v):.1e}" for k, v in finals.items())
                      + f" (need < 1e-3, 5/5 seeds); {elapsed:.1f}s")
    assert ok


# 7 -----------------------------------------------------------------------------

@pytest.mark.desk
def test_07_ticket_effect(desk):
    out, cfg, elapsed = desk
    table = _metrics(out)
    mean = {k: np.mean([v[s] for s in SEEDS]) for k, v in table.items()}
    snr = [mean[("snr", t)] for t in SPARSEST]
    mag = [mean[("final_magnitude", t)] for t in SPARSEST]
    rnd = [mean[("random_global", t)] for t in SPARSEST]
    snr_wins = sum(s >= m for s, m in zip(snr, mag))
    mag_beats_random = all(m >= r for m, r in zip(mag, rnd))
    ok = snr_wins >= 2 and mag_beats_random and elapsed <= 7200
    lin = load_lineage(out / "lineages" / "seed0_snr")
    dens = [f"{lin.iterations[t].mask.mean():.3f}" for t in SPARSEST]
    record_acceptance(7, ok, f"densities {dens}: snr {np.round(snr, 4).tolist()}, magnitude "
                             f"{np.round(mag, 4).tolist()}, random {np.round(rnd, 4).tolist()}; "
                             f"snr>=mag at {snr_wins}/3, mag>=random at all: {mag_beats_random}; {elapsed / 60:.1f} min")
    assert mag_beats_random
    assert snr_wins >= 2
    assert elapsed <= 7200


# 8 -----------------------------------------------------------------------------

@pytest.mark.desk
def test_08_connectivity(desk, tmp_path):
    out, cfg, _ = desk
    t0 = time.perf_counter()
    task = make_task(**cfg.task)
    spec = NetworkSpec.from_dict(cfg.network)
    lin = load_lineage(out / "lineages" / "seed0_snr")
    a, b = lin.iterations[1].theta_f, lin.iterations[2].theta_f
    self_barrier = analysis.barrier_curve(task, spec, a, a).barrier
    ab = analysis.barrier_curve(task, spec, a, b)
    ba = analysis.barrier_curve(task, spec, b, a)
    sym = abs(ab.barrier - ba.barrier)
    doc = cfg.to_dict()
    doc.pop("options")
    for k in ("baselines", "baseline_reference", "baseline_iterations", "heuristics"):
        doc.pop(k)
    doc.update(experiment="connect", connect={"source": str(out), "heuristic": "snr", "iterations": [1],
                                              "gd_G": GD_STEPS, "es_pairs": True})
    art = run_experiment(parse_config(doc), tmp_path / "connect")
    import csv
    with open(art / "barriers.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    gd = [float(r["barrier"]) for r in rows if r["pair"] == "gd"]
    es_b = [float(r["barrier"]) for r in rows if r["pair"] == "es"]
    elapsed = time.perf_counter() - t0
    ok = self_barrier == 0 and sym <= 1e-12 and max(gd) < 0.02 and elapsed <= 1800
    record_acceptance(8, ok, f"barrier(theta,theta)={self_barrier}; swap asymmetry {sym:.1e}; GD-twin barriers at "
                             f"density 0.8 max {max(gd):.4f} (need < 0.02); ES-pair barriers mean "
                             f"{np.mean(es_b):.4f} (recorded); {elapsed / 60:.1f} min")
    assert self_barrier == 0 and sym <= 1e-12
    assert max(gd) < 0.02
    assert elapsed <= 1800


# 9 -----------------------------------------------------------------------------

def test_09_projection_suite(mnist_dir):
    t0 = time.perf_counter()
    spec = NetworkSpec.from_dict(DESK_NET)
    task = make_task(**desk_task(mnist_dir))
    theta = init_params(spec, "lecun_normal", 0)
    mask = np.random.default_rng(9).random(spec.num_params) < 0.3
    curve = analysis.project_loss_1d(task, spec, theta, 0, mask=mask)
    zero_exact = curve.losses[curve.xis.size // 2] == task.test_loss(spec, theta, mask)

    xi = analysis.symmetric_grid(21)
    resid = max(analysis.fit_curvature((xi, c0 + c1 * xi + c2 * xi ** 2)).residual
                for c0, c1, c2 in np.random.default_rng(9).normal(size=(20, 3)) * 10)
    sphere_fit = analysis.fit_curvature(analysis.project_loss_1d(make_task("sphere"), None, theta[:50], 3))
    eta = analysis.random_direction(50, 3)
    resid = max(resid, sphere_fit.residual, abs(sphere_fit.c2 - eta @ eta))

    d1, d2 = analysis.normalized_directions(spec, theta, (10, 11))
    block_err = max(abs(np.linalg.norm(d[idx]) / np.linalg.norm(theta[idx]) - 1)
                    for d in (d1, d2) for idx in analysis.unit_blocks(spec))
    t_grid = time.perf_counter()
    grid = analysis.project_loss_2d(task, spec, theta, None, (10, 11), 51, mask, (d1, d2))
    grid_time = time.perf_counter() - t_grid
    center_exact = grid.losses[25, 25] == task.test_loss(spec, theta, mask)
    suite_time = time.perf_counter() - t0 - grid_time
    ok = zero_exact and center_exact and resid < 1e-10 and block_err <= 1e-12 and suite_time < 60 and grid_time <= 1200
    record_acceptance(9, ok, f"xi=0 exact {zero_exact}, 2D centre exact {center_exact}; quadratic residual "
                             f"{resid:.1e}; block-norm rel. error {block_err:.1e}; suite {suite_time:.1f}s + "
                             f"51x51 grid {grid_time:.1f}s")
    assert ok


# 10 ----------------------------------------------------------------------------

@pytest.mark.desk
def test_10_transfer(desk, tmp_path):
    out, cfg, _ = desk
    t0 = time.perf_counter()
    doc = cfg.to_dict()
    doc.pop("options")
    for k in ("baselines", "baseline_reference", "baseline_iterations", "heuristics"):
        doc.pop(k)
    doc.update(experiment="transfer", transfer={"source": str(out), "heuristic": "snr", "algo": "gd",
                                                "G": GD_STEPS, "iterations": [DESK_T - 1]})
    art = run_experiment(parse_config(doc), tmp_path / "transfer")
    table = _metrics(art)
    es_mask = np.array([table[("transfer_snr", DESK_T - 1)][s] for s in SEEDS])
    rnd = np.array([table[("random_global", DESK_T - 1)][s] for s in SEEDS])
    diff = float(np.mean(es_mask - rnd))
    elapsed = time.perf_counter() - t0
    ok = diff > 0 and elapsed <= 3600
    record_acceptance(10, ok, f"GD on ES-SNR masks {es_mask.mean():.4f} vs random masks {rnd.mean():.4f} at "
                              f"iteration {DESK_T - 1}, mean difference {diff:+.4f} (need > 0); {elapsed / 60:.1f} min")
    assert ok


# 11 ----------------------------------------------------------------------------

def test_11_reproducibility(tmp_path, mnist_dir):
    import yaml
    t0 = time.perf_counter()
    cfg = {"experiment": "prune", "algo": "sep_cma", "task": {**desk_task(mnist_dir), "train_subset": 500},
           "network": {"kind": "mlp", "layer_dims": [784, 12, 10]}, "T": 3, "G": 15, "N": 16,
           "heuristics": ["snr", "final_magnitude"]}
    path = tmp_path / "prune.yaml"
    path.write_text(yaml.safe_dump(cfg))
    codes = [cli_main(["prune", "--config", str(path), "--seed", "7", "--out", str(tmp_path / f"t{n}"),
                       "--threads", str(n)]) for n in (1, 4)]
    a, b = tmp_path / "t1", tmp_path / "t4"
    files = sorted(p.relative_to(a) for p in (a / "lineages").rglob("*") if p.is_file())
    same = all((a / f).read_bytes() == (b / f).read_bytes() for f in files)
    others = all((a / f).read_bytes() == (b / f).read_bytes() for f in ("metrics.csv", "manifest.json"))
    elapsed = time.perf_counter() - t0
    ok = codes == [0, 0] and len(files) > 0 and same and others and elapsed <= 600
    record_acceptance(11, ok, f"{len(files)} lineage files bit-identical across --threads 1/4: {same}; "
                              f"metrics/manifest identical: {others}; {elapsed:.1f}s")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))

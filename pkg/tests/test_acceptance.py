"""End-to-end acceptance criteria at their stated tolerances.

Heavy experiments go through the JSON experiment runner so that the
determinism criterion can re-run the very same manifests.
"""
import json
import time

import numpy as np
import pytest

from ntklab import experiments, storage
from ntklab.kernel import alignments, empirical_l2_norm, gram, rkhs_norm_empirical, rkhs_norm_lower_bound
from ntklab.nads import nad_basis, stein_check
from ntklab.netcore import NetworkSpec, forward, init_params, mixed_jacobian, param_jacobian
from ntklab.spectral import eigendecompose
from ntklab.tasks import Dataset, synth_gaussian
from ntklab.trainer import TrainConfig, train
from oracles import fd_gradient, max_rel_err

pytestmark = pytest.mark.acceptance

DESK = {"input_dim": 64, "hidden_widths": [32, 32], "activation": "tanh"}
SEEDS = [0, 1, 2]

CONFIGS = {
    "eigenfunction-sweep": {
        "experiment": "eigenfunction-sweep", "id": "eigen-sweep", "seeds": SEEDS, "network": DESK,
        "data": {"source": "gaussian", "m": 2000},
        "params": {"j_list": [1, 10, 50, 200, 500], "train_m": 1000, "test_m": 1000},
    },
    "nad-sweep": {
        "experiment": "nad-sweep", "id": "nad-sweep", "seeds": SEEDS,
        "network": {"input_dim": 64, "hidden_widths": [32, 32], "activation": "gelu",
                    "input_scale_geometric": [1.0, 0.05]},
        "params": {"nad_indices": [1, 16, 32, 64], "train_m": 1000, "test_m": 2000},
    },
    "class-group-rotation": {
        "experiment": "rotation-trace", "id": "class-group-rotation", "seeds": SEEDS, "network": DESK,
        "data": {"source": "digits", "labels": {"kind": "class_group", "positive_classes": [0, 1, 2, 3, 4]}},
        "train": {"epochs": 200},
        "params": {"train_m": 1500, "K": 50, "J": 20, "checkpoints": [0, 200]},
    },
    "single-axis-rotation": {
        "experiment": "rotation-trace", "id": "single-axis-rotation", "seeds": SEEDS,
        "network": {"input_dim": 64, "hidden_widths": [32, 32], "activation": "gelu"},
        "data": {"source": "gaussian", "m": 1000},
        "params": {"target_j": 50, "J": 100, "K": 50},
    },
    "kernel-transfer": {
        "experiment": "kernel-transfer", "id": "kernel-transfer", "seeds": SEEDS, "network": DESK,
        "data": {"source": "gaussian", "m": 2000},
        "params": {"target_j": 200, "train_m": 1000, "test_m": 1000, "checkpoints": [0, 1, 5, 100]},
    },
}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    out = {}
    for name, cfg in CONFIGS.items():
        t0 = time.perf_counter()
        manifest = experiments.run(cfg, root / name)
        out[name] = {"dir": root / name, "manifest": manifest, "report": experiments.report(root / name),
                     "seconds": time.perf_counter() - t0}
    return out


@pytest.fixture(scope="module")
def desk_gram():
    spec = NetworkSpec(**DESK)
    params = init_params(spec, 0)
    X = synth_gaussian(64, 2000, 0).X
    t0 = time.perf_counter()
    G = gram(spec, params, X)
    es = eigendecompose(G)
    return spec, params, X, G, es, time.perf_counter() - t0


def test_c01_eigen_identity(desk_gram, criterion):
    spec, params, X, G, es, setup = desk_gram
    t0 = time.perf_counter()
    G.check()
    a = alignments(spec, params, X, es.eigenfunctions[:, :100])
    rel = float(np.max(np.abs(a - es.eigenvalues[:100]) / es.eigenvalues[:100]))
    recon = float(np.max(np.abs(es.reconstruct() - G.values)) / np.max(np.abs(G.values)))
    sym = float(np.max(np.abs(G.values - G.values.T)))
    secs = setup + time.perf_counter() - t0
    ok = rel <= 1e-8 and recon <= 1e-7 and sym <= 1e-9 * np.max(np.abs(G.values)) and secs <= 300
    criterion(1, "eigen identity", ok, f"max rel |alpha(phi_j)-lambda_j|={rel:.2e} recon={recon:.2e} {secs:.1f}s")


def test_c02_rkhs_bound(desk_gram, criterion):
    spec, params, X, G, es, _ = desk_gram
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    keep = int(np.sum(es.eigenvalues > 1e-10 * es.eigenvalues[0]))
    slack = []
    for i in range(100):
        if i % 2:
            f = G.values @ rng.standard_normal(G.m) / G.m
        else:
            k = int(rng.integers(2, keep))
            f = es.eigenfunctions[:, :k] @ (rng.standard_normal(k) / np.sqrt(np.arange(1, k + 1)))
        alpha = float(alignments(spec, params, X, f[:, None])[0])
        slack.append(rkhs_norm_empirical(es, f) - (rkhs_norm_lower_bound(alpha, empirical_l2_norm(f)) - 1e-8))
    eq = []
    for j in (1, 2, 5, 10, 50):
        phi = es.phi(j)
        alpha = float(alignments(spec, params, X, phi[:, None])[0])
        bound = rkhs_norm_lower_bound(alpha, empirical_l2_norm(phi))
        eq.append(abs(bound - rkhs_norm_empirical(es, phi)) / rkhs_norm_empirical(es, phi))
    secs = time.perf_counter() - t0
    ok = min(slack) >= 0 and max(eq) <= 1e-8 and secs <= 120
    criterion(2, "RKHS lower bound", ok, f"min slack={min(slack):.3e} max equality err={max(eq):.2e} {secs:.1f}s")


def test_c03_linearization_exactness(criterion):
    t0 = time.perf_counter()
    spec = NetworkSpec(64)
    ds = synth_gaussian(64, 1000, 3)
    w = np.random.default_rng(3).standard_normal(64)
    data = Dataset(ds.X, np.where(ds.X @ w >= 0, 1.0, -1.0))
    theta0 = init_params(spec, 3)
    a = train(spec, theta0, data, None, TrainConfig(epochs=50))
    b = train(spec, theta0, data, None, TrainConfig(epochs=50, model_kind="linearized_biased"))
    diff = float(np.max(np.abs(np.array(a.train_loss) - np.array(b.train_loss))))
    secs = time.perf_counter() - t0
    criterion(3, "linearization exactness", diff <= 1e-10 and secs <= 60, f"max loss diff={diff:.2e} {secs:.1f}s")


def test_c04_jacobian_correctness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    pj, mj = [], []
    for _ in range(50):
        d = int(rng.integers(1, 7))
        hidden = tuple(int(h) for h in rng.integers(1, 7, size=int(rng.integers(0, 3))))
        spec = NetworkSpec(d, hidden, str(rng.choice(["tanh", "gelu"])), bool(rng.integers(0, 2)))
        params = rng.standard_normal(spec.n_params)
        x = rng.standard_normal(d)
        pj.append(max_rel_err(param_jacobian(spec, params, x), fd_gradient(lambda t: forward(spec, t, x), params)))
        h = 1e-5
        fd = np.column_stack([(param_jacobian(spec, params, x + h * e) - param_jacobian(spec, params, x - h * e)) / (2 * h)
                              for e in np.eye(d)])
        mj.append(max_rel_err(mixed_jacobian(spec, params, x), fd))
    secs = time.perf_counter() - t0
    ok = max(pj) <= 1e-5 and max(mj) <= 1e-4 and secs <= 120
    criterion(4, "Jacobian correctness", ok, f"param max rel={max(pj):.2e} mixed max rel={max(mj):.2e} {secs:.1f}s")


def test_c05_stein(criterion):
    t0 = time.perf_counter()
    lin = NetworkSpec(8)
    u = np.ones(8) / np.sqrt(8)
    lin_err = stein_check(lin, init_params(lin, 0), u, 200_000, 0).rel_err
    spec = NetworkSpec(8, (16, 16), "gelu")
    params = init_params(spec, 0)
    errs = [stein_check(spec, params, u, 200_000, s).rel_err for s in range(5)]
    frozen = NetworkSpec(3, (), "gelu", False, (3.0, 2.0, 1.0))
    basis = nad_basis(frozen, np.ones(3))
    axes_ok = np.array_equal(basis.directions, np.eye(3)) and np.array_equal(basis.singular_values, [3.0, 2.0, 1.0])
    secs = time.perf_counter() - t0
    ok = lin_err <= 1e-10 and np.median(errs) <= 0.05 and axes_ok and secs <= 300
    criterion(5, "Stein identity and NAD axes", ok,
              f"linear={lin_err:.1e} gelu median={np.median(errs):.4f} axes={axes_ok} {secs:.1f}s")


def test_c06_eigenfunction_accuracy_trend(runs, criterion):
    r = runs["eigenfunction-sweep"]
    stats, table = r["report"]["statistics"], r["report"]["tables"]["eigenfunction_accuracy"]
    last = table[-1]
    ok = (stats["spearman_j_acc_nonlinear"] <= -0.8 and stats["spearman_j_acc_linear"] <= -0.8
          and last["acc_linear"] > last["acc_nonlinear"] and r["seconds"] <= 7200)
    criterion(6, "accuracy falls with eigenfunction index", ok,
              f"rho_nl={stats['spearman_j_acc_nonlinear']:.2f} rho_lin={stats['spearman_j_acc_linear']:.2f} "
              f"j=500 lin={last['acc_linear']:.3f} nl={last['acc_nonlinear']:.3f} {r['seconds']:.0f}s")


def test_c07_nad_trend(runs, criterion):
    r = runs["nad-sweep"]
    stats, table = r["report"]["statistics"], r["report"]["tables"]["nad_accuracy"]
    gap = table[0]["acc_linear"] - table[-1]["acc_linear"]
    ok = stats["spearman_index_acc_linear"] <= -0.8 and gap >= 0.10 and r["seconds"] <= 3600
    criterion(7, "linearized accuracy falls along NADs", ok,
              f"rho={stats['spearman_index_acc_linear']:.2f} acc(v1)-acc(vd)={gap:.3f} {r['seconds']:.0f}s")


def test_c08_training_dynamics_trend(runs, criterion):
    stats = runs["eigenfunction-sweep"]["report"]["statistics"]
    ok = stats["spearman_j_iters_nonlinear"] >= 0.8 and stats["spearman_j_l2_nonlinear"] >= 0.8
    criterion(8, "iterations and distance grow with index", ok,
              f"rho_iters={stats['spearman_j_iters_nonlinear']:.2f} rho_l2={stats['spearman_j_l2_nonlinear']:.2f}")


def test_c09_energy_concentration(runs, criterion):
    r = runs["class-group-rotation"]
    rows = [{k: experiments._num(v) for k, v in row.items()} for row in storage.read_csv(r["dir"] / "rotation.csv")]
    deltas = []
    for seed in SEEDS:
        e = sorted((row["checkpoint_epoch"], row["energy_concentration"]) for row in rows if row["seed"] == seed)
        deltas.append(e[-1][1] - e[0][1])
    med = float(np.median(deltas))
    ok = med >= 0.15 and r["seconds"] <= 3600
    criterion(9, "energy concentration rises", ok,
              f"median delta={100 * med:.1f} points per-seed={[round(100 * d, 1) for d in deltas]} {r['seconds']:.0f}s")


def test_c10_single_axis_rotation(runs, criterion):
    r = runs["single-axis-rotation"]
    dom = r["report"]["statistics"]["target_dominance"]
    ok = dom >= 2.0 and r["seconds"] <= 3600
    criterion(10, "target eigenfunction dominates alignment growth", ok, f"median dominance={dom:.2f} {r['seconds']:.0f}s")


def test_c11_pretrained_kernel(runs, criterion):
    r = runs["kernel-transfer"]
    table = {row["epoch"]: row for row in r["report"]["tables"]["transfer"]}
    first, last = table[0], table[100]
    faster = last["iterations_to_loss"] < first["iterations_to_loss"]
    worse = last["test_accuracy"] <= first["test_accuracy"]
    ok = faster and worse and r["seconds"] <= 3600
    criterion(11, "pretrained kernel fits faster, generalizes no better", ok,
              f"iters {first['iterations_to_loss']} -> {last['iterations_to_loss']}, "
              f"test acc {first['test_accuracy']:.3f} -> {last['test_accuracy']:.3f} {r['seconds']:.0f}s")


def test_c12_determinism(runs, tmp_path, criterion):
    mismatched = []
    for name, r in runs.items():
        manifest = json.loads((r["dir"] / "manifest.json").read_text())
        again = experiments.run(manifest["config"], tmp_path / name)
        before = {o["path"]: o["sha256"] for o in manifest["outputs"]}
        after = {o["path"]: o["sha256"] for o in again["outputs"]}
        if before != after:
            mismatched.append(name)
    n = sum(len(r["manifest"]["outputs"]) for r in runs.values())
    criterion(12, "manifests reproduce bitwise", not mismatched, f"{n} outputs across {len(runs)} manifests; mismatched={mismatched}")

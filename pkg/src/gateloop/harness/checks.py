"""Machine-checkable property suites, runnable from the CLI.

Each suite returns {"passed": bool, "max_rel_err": float, ...}; `run`
aggregates them into a JSON-friendly report. These re-verify the core
claims outside pytest: mode equivalence against the direct unfolded
sum, operator associativity, scan-mode gradients against central finite
differences, causality, and dataset determinism.
"""

from __future__ import annotations

import json

import numpy as np

from .. import diffmodes, memhorizon, modes, reference, scan
from ..numerics import CplxTensor, Tensor, backward


def rel_err(x, y, floor: float = 1e-250) -> float:
    """Max elementwise |x - y| / max(|y|, floor)."""
    x = np.asarray(x)
    y = np.asarray(y)
    denom = np.maximum(np.abs(y), floor)
    return float((np.abs(x - y) / denom).max())


def random_gateloop_inputs(batch, length, heads, rng, mag_range=(0.5, 1.0)):
    shape = (batch, length, heads, 1)
    mag = rng.uniform(*mag_range, size=shape)
    phase = rng.uniform(-np.pi, np.pi, size=shape)
    return modes.GateLoopInputs(
        q=rng.normal(size=shape) + 1j * rng.normal(size=shape),
        k=rng.normal(size=shape) + 1j * rng.normal(size=shape),
        v=rng.normal(size=shape),
        a=mag * np.exp(1j * phase),
    )


def suite_equivalence(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for length in (1, 2, 33, 128):
        inp = random_gateloop_inputs(2, length, 3, rng, mag_range=(0.9, 1.0))
        truth = reference.unfolded_reference(inp)
        for fn in (modes.recurrent_forward, modes.scan_forward,
                   modes.attention_forward):
            worst = max(worst, rel_err(fn(inp), truth))
    return {"passed": worst <= 1e-10, "max_rel_err": worst, "tolerance": 1e-10}


def suite_associativity(seed: int = 0, n_triples: int = 10_000,
                        combine=scan.gateloop_combine) -> dict:
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(6, n_triples)) + 1j * rng.normal(size=(6, n_triples))
    p, q, r = (scan.ScanTuple(z[2 * i], z[2 * i + 1]) for i in range(3))
    left = combine(combine(p, q), r)
    right = combine(p, combine(q, r))
    worst = max(rel_err(left.a, right.a), rel_err(left.b, right.b))
    ident = scan.ScanTuple(1.0 + 0j, 0.0 + 0j)
    li = combine(ident, p)
    ri = combine(p, ident)
    identity_exact = (np.array_equal(li.a, p.a) and np.array_equal(li.b, p.b)
                      and np.array_equal(ri.a, p.a) and np.array_equal(ri.b, p.b))
    return {"passed": worst <= 1e-12 and identity_exact, "max_rel_err": worst,
            "identity_exact": identity_exact, "tolerance": 1e-12}


def finite_diff_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return g


def suite_gradients(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    batch, length, heads = 1, 6, 2
    arrays = {name: rng.normal(size=(batch, length, heads)) * 0.5
              for name in ("q_re", "q_im", "k_re", "k_im", "v",
                           "gamma", "theta")}

    def build_loss():
        gamma = Tensor(arrays["gamma"], requires_grad=True)
        theta = Tensor(arrays["theta"], requires_grad=True)
        mag = gamma.sigmoid()
        a = CplxTensor(mag * theta.cos(), mag * theta.sin())
        q = CplxTensor(Tensor(arrays["q_re"], requires_grad=True),
                       Tensor(arrays["q_im"], requires_grad=True))
        k = CplxTensor(Tensor(arrays["k_re"], requires_grad=True),
                       Tensor(arrays["k_im"], requires_grad=True))
        v = Tensor(arrays["v"], requires_grad=True)
        y = diffmodes.scan_forward(q, k, v, a)
        leaves = {"q_re": q.re, "q_im": q.im, "k_re": k.re, "k_im": k.im,
                  "v": v, "gamma": gamma, "theta": theta}
        return y.re.sum(), leaves

    loss, leaves = build_loss()
    backward(loss)
    worst = 0.0
    for name, leaf in leaves.items():
        fd = finite_diff_grad(lambda: float(build_loss()[0].data), arrays[name])
        scale = max(1e-8, float(np.abs(fd).max()))
        worst = max(worst, float(np.abs(leaf.grad - fd).max()) / scale)
    return {"passed": worst <= 1e-5, "max_rel_err": worst, "tolerance": 1e-5}


def suite_causality(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    length, cut = 48, 20
    inp = random_gateloop_inputs(1, length, 2, rng, mag_range=(0.5, 1.0))
    base_rec = modes.recurrent_forward(inp)[:, :cut + 1]
    base_scan = modes.scan_forward(inp)[:, :cut + 1]
    pert = modes.GateLoopInputs(inp.q.copy(), inp.k.copy(), inp.v.copy(),
                                inp.a.copy())
    pert.q[:, cut + 1:] += rng.normal(size=pert.q[:, cut + 1:].shape)
    pert.k[:, cut + 1:] *= -2.0
    pert.v[:, cut + 1:] += 3.0
    pert.a[:, cut + 1:] *= 0.5
    rec_exact = np.array_equal(modes.recurrent_forward(pert)[:, :cut + 1], base_rec)
    scan_err = rel_err(modes.scan_forward(pert)[:, :cut + 1], base_scan)
    return {"passed": rec_exact and scan_err <= 1e-12,
            "recurrent_bit_exact": rec_exact, "max_rel_err": scan_err,
            "tolerance": 1e-12}


def _compress_recursive(window, modulo):
    """Independent formulation of the compression target: peel the outer
    pair off recursively and flip the sign at each level."""
    def peel(w, sign):
        if not w:
            return 0
        if len(w) == 1:
            return sign * w[0]
        return sign * w[0] * w[-1] + peel(w[1:-1], -sign)
    return peel(list(window), 1) % modulo


def suite_dataset(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(1000):
        window = rng.integers(0, 5, size=rng.integers(0, 12)).tolist()
        if memhorizon.compress(window, 50) != _compress_recursive(window, 50):
            mismatches += 1
    cfg = memhorizon.MemHorizonConfig(sequence_length=64, num_samples=20, seed=7)
    a = memhorizon.generate_samples(cfg)
    b = memhorizon.generate_samples(cfg)
    deterministic = all(np.array_equal(x.inputs, y.inputs)
                        and np.array_equal(x.targets, y.targets)
                        for x, y in zip(a, b))
    return {"passed": mismatches == 0 and deterministic,
            "compress_mismatches": mismatches, "deterministic": deterministic,
            "max_rel_err": 0.0 if mismatches == 0 else 1.0}


SUITES = {
    "equivalence": suite_equivalence,
    "associativity": suite_associativity,
    "gradients": suite_gradients,
    "causality": suite_causality,
    "dataset": suite_dataset,
}


def run(suite_tag: str = "all", seed: int = 0) -> dict:
    if suite_tag == "all":
        names = list(SUITES)
    elif suite_tag in SUITES:
        names = [suite_tag]
    else:
        raise ValueError(f"unknown suite {suite_tag!r}; "
                         f"choose from {sorted(SUITES)} or 'all'")
    results = {name: SUITES[name](seed=seed) for name in names}
    return {"suites": results,
            "passed": all(r["passed"] for r in results.values())}


def run_and_print(suite_tag: str = "all", seed: int = 0) -> int:
    report = run(suite_tag, seed)
    print(json.dumps(report, indent=2))
    return 0 if report["passed"] else 1

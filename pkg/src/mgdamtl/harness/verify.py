"""Named property checks at fixed seeds, with replayable counterexamples.

Each :class:`Property` has a case generator (driven by a seeded RNG) and a
checker that sees only the serialized inputs of one case. When a case fails,
its inputs are dumped to JSON with every float stored as ``float.hex`` so
:func:`replay` reruns exactly the same arithmetic.

Properties flagged ``expected_to_hold=False`` are claims that are known to
be false in general. They are still run and reported, with counterexamples,
but do not affect the suite's overall verdict.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from ..baselines import uniform_scaling_step
from ..core_types import GradientMatrix, GramMatrix, ParameterStore, SimplexWeights
from ..data import encode_idx, parse_idx, synth_quadratic_tasks
from ..mgda import CERT_RTOL, GradientMode, PassCounter, compute_task_gradients, mgda_step, task_param_step
from ..minnorm import SolverConfig, brute_force_min_norm, frank_wolfe_min_norm, two_task_alpha
from ..models import (Batch, EncoderSpec, HeadSpec, LossKind, MtlModel, _head_loss, backward_encoder,
                      backward_task_heads, encode, forward, head_forward, materialize_jacobian, task_losses)
from ..oracles import central_difference_gradient, in_hull_lp, relative_error

TIGHT = SolverConfig.tight()


# ------------------------------------------------------------ serialization

def encode_value(x):
    if isinstance(x, np.ndarray):
        if x.dtype.kind == "f":
            data = [float(v).hex() for v in x.ravel()]
        else:
            data = [int(v) for v in x.ravel()]
        return {"__ndarray__": x.dtype.str, "shape": list(x.shape), "data": data}
    if isinstance(x, (float, np.floating)):
        return {"__float__": float(x).hex()}
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, dict):
        return {k: encode_value(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [encode_value(v) for v in x]
    return x


def decode_value(x):
    if isinstance(x, dict):
        if "__ndarray__" in x:
            dt = np.dtype(x["__ndarray__"])
            vals = [float.fromhex(v) for v in x["data"]] if dt.kind == "f" else x["data"]
            return np.array(vals, dtype=dt).reshape(x["shape"])
        if "__float__" in x:
            return float.fromhex(x["__float__"])
        return {k: decode_value(v) for k, v in x.items()}
    if isinstance(x, list):
        return [decode_value(v) for v in x]
    return x


# ---------------------------------------------------------------- registry

Check = Callable[[dict], tuple[bool, str]]


@dataclass(frozen=True)
class Property:
    name: str
    cases: Callable[[np.random.Generator], Iterable[dict]]
    check: Check
    expected_to_hold: bool = True
    note: str = ""


@dataclass
class PropertyResult:
    name: str
    passed: bool
    cases: int
    detail: str
    expected_to_hold: bool = True
    counterexample: dict | None = None
    counterexample_file: str | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "cases": self.cases, "detail": self.detail,
                "expected_to_hold": self.expected_to_hold, "counterexample_file": self.counterexample_file}


@dataclass
class SuiteReport:
    seed: int
    results: list[PropertyResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results if r.expected_to_hold)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "ok": self.ok, "properties": [r.to_dict() for r in self.results]}


REGISTRY: dict[str, Property] = {}


def register(name: str, expected_to_hold: bool = True, note: str = "",
             registry: dict[str, Property] | None = None):
    """Decorator-style registration of a ``(cases_fn, check_fn)`` pair."""
    target = REGISTRY if registry is None else registry

    def deco(pair):
        cases, check = pair
        target[name] = Property(name, cases, check, expected_to_hold, note)
        return pair
    return deco


# ------------------------------------------------------------- model cases

def _random_model(rng, kind: str, d_in: int, d_repr: int, hidden: int, head_kinds: list[str], n: int):
    enc = EncoderSpec(kind, d_in, d_repr, hidden if kind == "mlp" else 0)
    heads = [HeadSpec(3 if k == "softmax_ce" else 2, LossKind(k)) for k in head_kinds]
    shared = rng.normal(scale=0.7, size=enc.n_params)
    blocks = [rng.normal(scale=0.7, size=h.d_out * d_repr + h.d_out) for h in heads]
    x = rng.normal(size=(n, d_in))
    labels = [rng.integers(0, h.d_out, n) if h.loss is LossKind.SOFTMAX_CE else rng.normal(size=(n, h.d_out))
              for h in heads]
    return {"kind": kind, "d_in": d_in, "d_repr": d_repr, "hidden": hidden, "heads": head_kinds,
            "shared": shared, "blocks": blocks, "x": x, "labels": labels}


def model_from_case(case: dict) -> tuple[MtlModel, Batch]:
    enc = EncoderSpec(case["kind"], case["d_in"], case["d_repr"], case["hidden"] if case["kind"] == "mlp" else 0)
    heads = []
    for k, blk in zip(case["heads"], case["blocks"]):
        d_out = blk.size // (case["d_repr"] + 1)
        heads.append(HeadSpec(d_out, LossKind(k)))
    model = MtlModel(enc, heads, ParameterStore(np.array(case["shared"]), [np.array(b) for b in case["blocks"]]))
    return model, Batch(case["x"], list(case["labels"]))


def _tiny_cases(rng, n_cases: int, n_tasks: int = 2):
    for i in range(n_cases):
        kind = "mlp" if i % 2 else "linear"
        yield _random_model(rng, kind, d_in=3, d_repr=2, hidden=3, head_kinds=["mse"] * n_tasks, n=2)


def _small_cases(rng, n_cases: int):
    for i in range(n_cases):
        kind = "mlp" if i % 2 else "linear"
        kinds = [["softmax_ce", "mse"], ["mse", "mse", "softmax_ce"]][i % 2]
        yield _random_model(rng, kind, d_in=int(rng.integers(2, 6)), d_repr=int(rng.integers(1, 4)),
                            hidden=int(rng.integers(2, 5)), head_kinds=kinds, n=int(rng.integers(1, 5)))


# --------------------------------------------------------------- minnorm

def _gram_cases(rng, n: int, t_max: int = 4):
    for _ in range(n):
        T, d = int(rng.integers(2, t_max + 1)), int(rng.integers(2, 21))
        yield {"g": rng.normal(size=(T, d))}


def _check_oracle(case):
    G = GradientMatrix(case["g"])
    M = G.gram()
    fw = frank_wolfe_min_norm(M)
    bf = brute_force_min_norm(M, 1e-3)
    bound = 2e-3 * float(np.trace(M.m))
    gap = abs(fw.squared_norm - bf.squared_norm)
    if gap > bound:
        return False, f"|fw - grid| = {gap:.3e} > {bound:.3e}"
    if G.rows == 2:
        a = two_task_alpha(G.data[0], G.data[1]).gamma
        closed = M.quadratic(np.array([a, 1 - a]))
        if abs(fw.squared_norm - closed) > 1e-6:
            return False, f"|fw - closed form| = {abs(fw.squared_norm - closed):.3e}"
    return True, ""


register("minnorm.oracle_agreement")((lambda rng: _gram_cases(rng, 60), _check_oracle))


def _check_monotone(case):
    sol = frank_wolfe_min_norm(GradientMatrix(case["g"]).gram())
    h = np.array(sol.history)
    worst = float(np.max(np.diff(h))) if h.size > 1 else 0.0
    return worst <= 1e-12, f"largest increase {worst:.3e}"


register("minnorm.monotone_descent")((lambda rng: _gram_cases(rng, 100, 6), _check_monotone))


def _perm_cases(rng):
    for c in _gram_cases(rng, 100, 5):
        c["perm"] = rng.permutation(c["g"].shape[0])
        yield c


def _check_perm(case):
    M = GradientMatrix(case["g"]).gram()
    p = case["perm"]
    a = frank_wolfe_min_norm(M)
    b = frank_wolfe_min_norm(GramMatrix(M.m[np.ix_(p, p)]))
    da = float(np.max(np.abs(b.alpha - a.alpha[p])))
    dn = abs(a.squared_norm - b.squared_norm)
    return da <= 1e-12 and dn <= 1e-12, f"alpha diff {da:.3e}, norm diff {dn:.3e}"


register("minnorm.permutation_equivariance")((_perm_cases, _check_perm))


def _scale_cases(rng):
    for c in _gram_cases(rng, 100, 5):
        c["log2c"] = int(rng.integers(-20, 21))
        yield c


def _check_scale(case):
    M = GradientMatrix(case["g"]).gram()
    c = 2.0 ** case["log2c"]
    a = frank_wolfe_min_norm(M)
    b = frank_wolfe_min_norm(GramMatrix(M.m * c))
    rel = abs(b.squared_norm - c * a.squared_norm) / max(c * a.squared_norm, 1e-300)
    same = np.array_equal(a.alpha, b.alpha)
    return same and rel <= 1e-9, f"alpha identical: {same}, norm rel err {rel:.3e}"


register("minnorm.scale_behavior")((_scale_cases, _check_scale))


def _check_edge(case):
    g = case["g"]
    a = two_task_alpha(g[0], g[1])
    if a.degenerate:
        return True, "degenerate"
    sol = frank_wolfe_min_norm(GradientMatrix(g).gram())
    diff = abs(sol.alpha[0] - a.gamma)
    return diff <= 1e-8, f"|alpha_fw - alpha_closed| = {diff:.3e}"


register("minnorm.edge_consistency")((lambda rng: ({"g": rng.normal(size=(2, int(rng.integers(2, 21))))}
                                                  for _ in range(100)), _check_edge))


# ----------------------------------------------------------------- core

def _check_norm_identity(case):
    G = GradientMatrix(case["g"])
    a = SimplexWeights(case["alpha"])
    d = G.combine(a)
    q = G.gram().quadratic(a.alpha)
    rel = abs(d @ d - q) / max(abs(q), 1e-300)
    return rel <= 1e-8, f"rel err {rel:.3e}"


def _norm_cases(rng):
    for c in _gram_cases(rng, 100, 6):
        c["alpha"] = rng.dirichlet(np.ones(c["g"].shape[0]))
        yield c


register("core.norm_identity")((_norm_cases, _check_norm_identity))


def _check_gram_valid(case):
    try:
        GradientMatrix(case["g"]).gram()
    except ValueError as exc:
        return False, str(exc)
    return True, ""


register("core.gram_symmetric_psd")((lambda rng: ({"g": rng.normal(size=(int(rng.integers(1, 8)),
                                                                       int(rng.integers(1, 30))))
                                                    * 10.0 ** rng.integers(-3, 4)} for _ in range(100)),
                                     _check_gram_valid))


# --------------------------------------------------------------- models

def _check_fd(case):
    model, batch = model_from_case(case)
    fwd = forward(model, batch)
    heads = backward_task_heads(model, batch, fwd)
    worst = 0.0
    for t in range(model.n_tasks):
        def loss_shared(th, t=t):
            m = model.copy()
            m.params.shared[:] = th
            return task_losses(m, batch)[t]

        def loss_head(th, t=t):
            m = model.copy()
            m.params.task_blocks[t][:] = th
            return task_losses(m, batch)[t]

        def loss_z(zf, t=t):
            z = zf.reshape(fwd.z.shape)
            return _head_loss(model.heads[t], head_forward(model, t, z), batch.labels[t])

        g_sh = backward_encoder(model, batch, heads.z_grads[t], fwd)
        for analytic, fn, x in ((g_sh, loss_shared, model.params.shared),
                                (heads.param_grads[t], loss_head, model.params.task_blocks[t]),
                                (heads.z_grads[t].ravel(), loss_z, fwd.z.ravel())):
            worst = max(worst, relative_error(analytic, central_difference_gradient(fn, x.copy(), 1e-5)))
    return worst <= 1e-4, f"worst relative error {worst:.3e}"


register("models.finite_differences")((lambda rng: _small_cases(rng, 40), _check_fd))


def _check_separation(case):
    model, batch = model_from_case(case)
    base = task_losses(model, batch)
    for tp in range(model.n_tasks):
        m = model.copy()
        m.params.task_blocks[tp] += 0.5
        after = task_losses(m, batch)
        others = [t for t in range(model.n_tasks) if t != tp]
        if not np.array_equal(after[others], base[others]):
            return False, f"perturbing head {tp} changed another task's loss"
    return True, ""


register("models.head_separation")((lambda rng: _small_cases(rng, 20), _check_separation))


def _check_linearity(case):
    model, batch = model_from_case(case)
    fwd = forward(model, batch)
    u1, u2 = case["u1"], case["u2"]
    a, b = case["a"], case["b"]
    combined = backward_encoder(model, batch, a * u1 + b * u2, fwd)
    split = a * backward_encoder(model, batch, u1, fwd) + b * backward_encoder(model, batch, u2, fwd)
    rel = relative_error(combined, split)
    return rel <= 1e-10, f"rel err {rel:.3e}"


def _linearity_cases(rng):
    for c in _small_cases(rng, 20):
        shape = (c["x"].shape[0], c["d_repr"])
        c.update(u1=rng.normal(size=shape), u2=rng.normal(size=shape), a=float(rng.normal()),
                 b=float(rng.normal()))
        yield c


register("models.backward_linearity")((_linearity_cases, _check_linearity))


def _check_jacobian(case):
    model, batch = model_from_case(case)
    ja = materialize_jacobian(model, batch, "analytic").matrix
    jf = materialize_jacobian(model, batch, "fd").matrix
    diff = float(np.max(np.abs(ja - jf)))
    return diff <= 1e-5, f"max abs diff {diff:.3e}"


register("models.jacobian_fd")((lambda rng: _small_cases(rng, 20), _check_jacobian))


# ----------------------------------------------------------------- mgda

def _check_certificate(case):
    G = GradientMatrix(case["g"])
    M = G.gram()
    sol = frank_wolfe_min_norm(M, TIGHT)
    v = M.m @ sol.alpha
    tol = CERT_RTOL * float(np.max(np.diag(M.m)))
    return bool(v.min() >= -tol), f"min d.g_t = {v.min():.3e}, tolerance {tol:.3e}"


register("mgda.descent_certificate")((lambda rng: ({"g": rng.normal(size=(3, int(rng.integers(2, 21))))}
                                                    for _ in range(300)), _check_certificate))


def _check_chain_rule(case):
    model, batch = model_from_case(case)
    fwd = forward(model, batch)
    heads = backward_task_heads(model, batch, fwd)
    jac = materialize_jacobian(model, batch).matrix
    worst = 0.0
    for gz in heads.z_grads:
        worst = max(worst, relative_error(backward_encoder(model, batch, gz, fwd), jac.T @ gz.ravel()))
    return worst <= 1e-8, f"worst rel err {worst:.3e}"


register("mgda.chain_rule")((lambda rng: _tiny_cases(rng, 40), _check_chain_rule))


def _ub_solution(model, batch):
    fwd = forward(model, batch)
    heads = backward_task_heads(model, batch, fwd)
    gz = GradientMatrix.from_rows(heads.z_grads)
    sol = frank_wolfe_min_norm(gz.gram(), TIGHT)
    return fwd, heads, gz, sol


def _check_upper_bound(case):
    model, batch = model_from_case(case)
    fwd, heads, gz, sol = _ub_solution(model, batch)
    jac = materialize_jacobian(model, batch)
    dz = gz.combine(sol.weights)
    dth = backward_encoder(model, batch, dz.reshape(fwd.z.shape), fwd)
    lhs, rhs = dth @ dth, jac.spectral_norm ** 2 * (dz @ dz)
    return bool(lhs <= rhs * (1 + 1e-8)), f"|J^T d_Z|^2 = {lhs:.6e}, |J|^2 |d_Z|^2 = {rhs:.6e}"


register("mgda.upper_bound")((lambda rng: _tiny_cases(rng, 40, 3), _check_upper_bound))


def _stationary_cases(rng):
    """Tiny full-row-rank models with two scalar MSE heads sharing weights.

    With targets ``pred + delta`` and ``pred - delta`` the representation
    gradients are exact negatives (stationary); with ``pred + delta`` for
    both they are equal (not stationary).
    """
    for i in range(40):
        kind = "mlp" if i % 2 else "linear"
        d_in, d_repr, hidden, n = 3, 2, 4, 2
        enc = EncoderSpec(kind, d_in, d_repr, hidden if kind == "mlp" else 0)
        shared = rng.normal(scale=0.7, size=enc.n_params)
        head = rng.normal(scale=0.7, size=d_repr + 1)
        x = rng.normal(size=(n, d_in))
        case = {"kind": kind, "d_in": d_in, "d_repr": d_repr, "hidden": hidden, "heads": ["mse", "mse"],
                "shared": shared, "blocks": [head, head.copy()], "x": x}
        model, _ = model_from_case(dict(case, labels=[np.zeros((n, 1))] * 2))
        pred = head_forward(model, 0, encode(model, x)[0])
        delta = rng.uniform(0.5, 1.5, size=(n, 1))
        yield dict(case, labels=[pred + delta, pred - delta], stationary=True)
        yield dict(case, labels=[pred + delta, pred + delta], stationary=False)


def _check_stationarity(case):
    model, batch = model_from_case(case)
    jac = materialize_jacobian(model, batch)
    if not jac.full_row_rank:
        return True, "skipped: Jacobian not full row rank"
    counter = PassCounter()
    full = compute_task_gradients(model, batch, GradientMode.FULL_MGDA, counter=counter)
    ub = compute_task_gradients(model, batch, GradientMode.MGDA_UB, counter=counter)
    s_full = frank_wolfe_min_norm(full.matrix.gram(), TIGHT).squared_norm <= TIGHT.stationarity_threshold
    s_ub = frank_wolfe_min_norm(ub.matrix.gram(), TIGHT).squared_norm <= TIGHT.stationarity_threshold
    ok = s_full == s_ub == bool(case["stationary"])
    return ok, f"expected {case['stationary']}, full {s_full}, ub {s_ub}"


register("mgda.stationarity_agreement")((_stationary_cases, _check_stationarity))


def _check_repr_descent(case):
    model, batch = model_from_case(case)
    rep = mgda_step(model, batch, GradientMode.MGDA_UB, 0.05, TIGHT)
    return rep.certificate_ok, f"min d_Z.g_t = {rep.certificate_min:.3e}, tol {rep.certificate_tol:.3e}"


register("mgda.representation_descent")((lambda rng: _small_cases(rng, 40), _check_repr_descent))


def _check_param_descent(case):
    model, batch = model_from_case(case)
    jac = materialize_jacobian(model, batch)
    if not jac.full_rank:
        return True, "skipped: Jacobian rank deficient"
    fwd, heads, gz, sol = _ub_solution(model, batch)
    g_th = GradientMatrix(np.stack([backward_encoder(model, batch, g, fwd) for g in heads.z_grads]))
    d = g_th.combine(sol.weights)
    prods = g_th.data @ d
    tol = CERT_RTOL * float(np.max(np.einsum("ij,ij->i", g_th.data, g_th.data)))
    return bool(prods.min() >= -tol), f"min d_theta.g_t = {prods.min():.3e}, tolerance {tol:.3e}"


register("mgda.parameter_space_descent", expected_to_hold=False,
         note="alpha solved on representation gradients need not give a parameter-space descent direction "
              "unless J J^T is a multiple of the identity")((lambda rng: _tiny_cases(rng, 40, 3),
                                                               _check_param_descent))


def _check_loss_decrease(case):
    model, batch = model_from_case(case)
    fwd = forward(model, batch)
    tg = compute_task_gradients(model, batch, GradientMode.FULL_MGDA, fwd)
    sol = frank_wolfe_min_norm(tg.matrix.gram(), TIGHT)
    if sol.squared_norm <= TIGHT.stationarity_threshold:
        return True, "stationary"
    d = tg.matrix.combine(sol.weights)
    base = fwd.losses.values
    for eta in (1e-2, 1e-3, 1e-4):
        m = model.copy()
        m.params.shared -= eta * d
        if np.all(task_losses(m, batch) < base):
            return True, f"eta {eta}"
    return False, "no step size decreased every task loss"


register("mgda.loss_decrease")((lambda rng: _small_cases(rng, 40), _check_loss_decrease))


def _check_passes(case):
    model, batch = model_from_case(case)
    steps = int(case["steps"])
    out = []
    for mode in GradientMode:
        m, c = model.copy(), PassCounter()
        stationary = 0
        for _ in range(steps):
            stationary += mgda_step(m, batch, mode, 0.01, counter=c).stationary
        # the encoder pass of MGDA-UB is skipped on stationary steps
        expect = model.n_tasks * steps if mode is GradientMode.FULL_MGDA else steps - stationary
        out.append((c.shared == expect and c.task == 2 * model.n_tasks * steps, f"{mode.value}: {c.shared}"))
    return all(o for o, _ in out), ", ".join(d for _, d in out)


register("mgda.pass_accounting")((lambda rng: (dict(c, steps=5) for c in _small_cases(rng, 10)), _check_passes))


# ----------------------------------------------------------------- data

def _check_idx(case):
    arr = case["arr"]
    back = parse_idx(encode_idx(arr)).to_array()
    return bool(back.dtype == np.uint8 and np.array_equal(back, arr)), ""


register("data.idx_roundtrip")((lambda rng: ({"arr": rng.integers(0, 256, size=tuple(
    int(s) for s in rng.integers(1, 6, size=int(rng.choice([1, 3]))))).astype(np.uint8)} for _ in range(50)),
    _check_idx))


def _hull_cases(rng):
    for _ in range(60):
        T, d = int(rng.integers(2, 5)), int(rng.integers(2, 4))
        centers = rng.normal(size=(T, d))
        w = rng.dirichlet(np.ones(T))
        inside = w @ centers
        yield {"centers": centers, "theta": inside}
        yield {"centers": centers, "theta": inside + rng.normal(scale=0.5, size=d)}


def _check_hull(case):
    q = synth_quadratic_tasks(case["centers"].shape[0], case["centers"].shape[1], case["centers"])
    dist = q.hull_distance(case["theta"])
    lp = in_hull_lp(case["centers"], case["theta"])
    if dist > 1e-6 and dist < 1e-4:
        return True, "ambiguous distance"
    return (dist <= 1e-6) == lp, f"distance {dist:.3e}, lp member {lp}"


register("data.hull_membership")((_hull_cases, _check_hull))


# ------------------------------------------------------------ baselines

def _check_uniform(case):
    model, batch = model_from_case(case)
    fwd = forward(model, batch)
    m1 = model.copy()
    uniform_scaling_step(m1, batch, 0.1)
    # reference: heads step, then alpha = 1/T over per-task shared gradients
    m2 = model.copy()
    task_param_step(m2, batch, 0.1, fwd, weights=np.full(model.n_tasks, 1.0 / model.n_tasks))
    tg = compute_task_gradients(m2, batch, GradientMode.FULL_MGDA, fwd)
    m2.params.shared -= 0.1 * tg.matrix.combine(np.full(model.n_tasks, 1.0 / model.n_tasks))
    rel = relative_error(m1.params.shared - model.params.shared, m2.params.shared - model.params.shared)
    return rel <= 1e-10, f"rel err {rel:.3e}"


register("baselines.uniform_matches_frozen_alpha")((lambda rng: _small_cases(rng, 20), _check_uniform))


# ------------------------------------------------------------------ runner

def run_property(prop: Property, seed: int = 0) -> PropertyResult:
    rng = np.random.default_rng([seed, zlib.crc32(prop.name.encode())])
    n = 0
    skipped = 0
    for case in prop.cases(rng):
        # checks only ever see the round-tripped inputs, exactly as a replay would
        enc = encode_value(case)
        ok, detail = prop.check(decode_value(enc))
        n += 1
        skipped += detail.startswith("skipped")
        if not ok:
            return PropertyResult(prop.name, False, n, f"case {n - 1}: {detail}", prop.expected_to_hold,
                                  {"property": prop.name, "seed": seed, "case_index": n - 1, "detail": detail,
                                   "inputs": enc})
    detail = f"{n} cases" + (f", {skipped} skipped" if skipped else "")
    return PropertyResult(prop.name, True, n, detail, prop.expected_to_hold)


def run_suite(seed: int = 0, names: list[str] | None = None, dump_dir=None,
              registry: dict[str, Property] | None = None) -> SuiteReport:
    reg = REGISTRY if registry is None else registry
    report = SuiteReport(seed)
    for name in (names or list(reg)):
        if name not in reg:
            raise KeyError(f"unknown property {name!r}")
        res = run_property(reg[name], seed)
        if res.counterexample is not None and dump_dir is not None:
            path = Path(dump_dir) / f"counterexample_{name}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(res.counterexample, indent=1, sort_keys=True) + "\n", encoding="utf-8")
            res.counterexample_file = str(path)
        report.results.append(res)
    return report


def replay(path, registry: dict[str, Property] | None = None) -> tuple[bool, str]:
    """Rerun the check recorded in a counterexample file."""
    reg = REGISTRY if registry is None else registry
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    prop = reg[doc["property"]]
    return prop.check(decode_value(doc["inputs"]))

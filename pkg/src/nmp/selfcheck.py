"""Oracle suites: finite-difference gradient checks and brute-force
re-evaluations of the numerical core, shared by ``nmp selfcheck`` and the
test suite."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import autodiff as ad
from .autodiff import Tensor
from .bev import RoiSpec
from .geometry import CIRCLE, CLOTHOID, STRAIGHT, PathSpec, Pose2, SdvState, Trajectory, fresnel, path_poses
from .losses import planning_loss
from .network import BackboneConfig, ModelConfig, NMPModel
from .planner import plan
from .sampler import SamplerConfig, sample_negatives, sample_trajectories

FD_STEP = 1e-5
GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.name}: {self.value:.3g} (threshold {self.threshold:g})"


# ------------------------------------------------------------ finite differences


def numeric_grad(fn, arr: np.ndarray, step: float = FD_STEP, index=None) -> np.ndarray:
    """Central-difference d fn() / d arr; ``fn`` reads ``arr`` in place.

    With ``index`` (flat positions) only those entries are perturbed; the
    rest of the returned array is NaN.
    """
    grad = np.full(arr.shape, np.nan) if index is not None else np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if index is None else index:
        old = flat[i]
        flat[i] = old + step
        up = fn()
        flat[i] = old - step
        down = fn()
        flat[i] = old
        gflat[i] = (up - down) / (2 * step)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def check_op(build, arrays: list, rng: np.random.Generator) -> float:
    """Gradient-check ``build(*tensors) -> Tensor`` against finite differences.

    The output is contracted with a fixed random projection so every output
    element contributes. Returns the worst relative error over all inputs.
    """
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*leaves)
    proj = rng.standard_normal(out.shape)

    def scalar():
        return float(np.sum(build(*[Tensor(a) for a in arrays]).data * proj))

    loss = ad.sum_all(ad.mul(out, Tensor(proj))) if out.data.ndim else out * float(proj)
    loss.backward()
    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        worst = max(worst, max_rel_error(leaf.grad, numeric_grad(scalar, arr)))
    return worst


def _conv_case(rng):
    k = int(rng.choice([1, 2, 3]))
    return dict(
        n=int(rng.integers(1, 3)),
        c=int(rng.integers(1, 4)),
        o=int(rng.integers(1, 4)),
        k=k,
        s=int(rng.integers(1, 3)),
        p=int(rng.integers(0, 2)),
        h=int(rng.integers(k, 7)),
        w=int(rng.integers(k, 7)),
    )


def _case_conv2d(rng):
    q = _conv_case(rng)
    arrays = [
        rng.standard_normal((q["n"], q["c"], q["h"], q["w"])),
        rng.standard_normal((q["o"], q["c"], q["k"], q["k"])),
        rng.standard_normal(q["o"]),
    ]
    return check_op(lambda x, w, b: ad.conv2d(x, w, b, stride=q["s"], padding=q["p"]), arrays, rng)


def _case_deconv2d(rng):
    q = _conv_case(rng)
    p = min(q["p"], q["k"] - 1)
    op = int(rng.integers(0, q["s"]))
    arrays = [
        rng.standard_normal((q["n"], q["c"], q["h"], q["w"])),
        rng.standard_normal((q["c"], q["o"], q["k"], q["k"])),
        rng.standard_normal(q["o"]),
    ]
    return check_op(
        lambda x, w, b: ad.deconv2d(x, w, b, stride=q["s"], padding=p, output_padding=op), arrays, rng
    )


def _case_maxpool(rng):
    k = int(rng.integers(1, 4))
    s = int(rng.integers(1, 3))
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(k, 8)), int(rng.integers(k, 8)))
    # distinct, well-separated values keep the argmax away from ties
    x = rng.permutation(int(np.prod(shape))).reshape(shape) * 0.1 + rng.uniform(0, 0.01, shape)
    return check_op(lambda t: ad.maxpool2d(t, k, s), [x], rng)


def _away_from(x: np.ndarray, kinks, margin: float = 1e-3, fill: float = 0.5) -> np.ndarray:
    for k in kinks:
        x = np.where(np.abs(x - k) < margin, fill, x)
    return x


def _case_relu(rng):
    x = _away_from(rng.standard_normal(tuple(int(v) for v in rng.integers(1, 5, size=4))), [0.0])
    return check_op(ad.relu, [x], rng)


def _case_sigmoid(rng):
    return check_op(ad.sigmoid, [rng.standard_normal(tuple(int(v) for v in rng.integers(1, 5, size=4)))], rng)


def _case_bilinear(rng):
    shape = (1, int(rng.integers(1, 3)), int(rng.integers(2, 9)), int(rng.integers(2, 9)))
    oh, ow = int(rng.integers(1, 10)), int(rng.integers(1, 10))
    return check_op(lambda t: ad.bilinear_resize(t, oh, ow), [rng.standard_normal(shape)], rng)


def _case_elementwise(rng):
    h, w = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    arrays = [rng.standard_normal((1, 2, h, w)), rng.standard_normal((1, 3, h, w)), rng.standard_normal((1, 5, h, w))]

    def build(x, y, z):
        return ad.mul(ad.add(ad.concat_channels([x, y]), z), z) * 0.5 - z

    return check_op(build, arrays, rng)


def _case_clip_reduce(rng):
    shape = tuple(int(v) for v in rng.integers(1, 5, size=4))
    x = _away_from(rng.uniform(-3, 3, shape), [-2.0, 2.0], fill=0.0)
    n = int(np.prod(shape))

    def build(t):
        return ad.mean_all(ad.clip(t, -2.0, 2.0)) + ad.sum_all(ad.scale(ad.reshape(t, (n,)), 0.3))

    return check_op(build, [x], rng)


def _case_bce(rng):
    shape = tuple(int(v) for v in rng.integers(1, 5, size=4))
    labels = (rng.random(shape) < 0.3).astype(float)
    weights = rng.random(shape)
    return check_op(lambda t: ad.bce_with_logits(t, labels, weights), [rng.standard_normal(shape) * 3], rng)


def _case_smooth_l1(rng):
    shape = tuple(int(v) for v in rng.integers(1, 5, size=4))
    target = rng.standard_normal(shape) * 2
    pred = target + rng.standard_normal(shape) * 1.5
    d = pred - target
    pred = np.where(np.abs(np.abs(d) - 1.0) < 1e-3, target + 0.5, pred)
    weights = rng.random(shape)
    return check_op(lambda t: ad.smooth_l1(t, target, weights), [pred], rng)


OP_CASES = {
    "conv2d": _case_conv2d,
    "deconv2d": _case_deconv2d,
    "maxpool2d": _case_maxpool,
    "relu": _case_relu,
    "sigmoid": _case_sigmoid,
    "bilinear_resize": _case_bilinear,
    "add/mul/concat": _case_elementwise,
    "clip/reshape/reductions": _case_clip_reduce,
    "bce_with_logits": _case_bce,
    "smooth_l1": _case_smooth_l1,
}


def op_gradient_errors(n_shapes: int = 20, seed: int = 0) -> dict:
    """Worst relative finite-difference error per op over random shapes."""
    out = {}
    for j, (name, case) in enumerate(OP_CASES.items()):
        errs = [case(np.random.default_rng([seed, j, i])) for i in range(n_shapes)]
        out[name] = max(errs)
    return out


def tiny_model(in_channels: int = 4, T: int = 2, seed: int = 0) -> NMPModel:
    cfg = ModelConfig(in_channels=in_channels, T=T, backbone=BackboneConfig.tiny(), cost_filters=(3, 3, 2))
    return NMPModel(cfg, seed=seed, dtype=np.float64)


def model_gradient_error(size: int = 16, per_tensor: int = 6, seed: int = 0) -> float:
    """End-to-end check of the whole network (all heads) in float64.

    The scalar is a random projection of every output. A random subset of
    each parameter tensor and of the input is perturbed.
    """
    rng = np.random.default_rng(seed)
    model = tiny_model(seed=seed)
    # zero-initialised biases put dead channels exactly on the ReLU corner
    for name, t in model.params.items():
        if name.endswith(".b"):
            t.data[...] = rng.uniform(0.05, 0.3, t.data.shape) * rng.choice([-1, 1], t.data.shape)
    x = rng.standard_normal((1, model.cfg.in_channels, size, size))
    out = model.forward(Tensor(x))
    heads = [out.cost, out.cls_logits, out.regression]
    projs = [rng.standard_normal(h.shape) for h in heads]

    def scalar():
        o = model.forward(Tensor(x))
        return float(sum(np.sum(h.data * p) for h, p in zip((o.cost, o.cls_logits, o.regression), projs)))

    model.params.zero_grad()
    xt = Tensor(x, requires_grad=True)
    o = model.forward(xt)
    loss = None
    for h, p in zip((o.cost, o.cls_logits, o.regression), projs):
        term = ad.sum_all(ad.mul(h, Tensor(p)))
        loss = term if loss is None else loss + term
    loss.backward()
    worst = 0.0
    targets = [("input", x, xt.grad)] + [(n, t.data, t.grad) for n, t in model.params.items()]
    for _, arr, grad in targets:
        k = min(per_tensor, arr.size)
        idx = rng.choice(arr.size, size=k, replace=False)
        num = numeric_grad(scalar, arr, index=idx)
        a = grad.reshape(-1)[idx]
        n = num.reshape(-1)[idx]
        worst = max(worst, max_rel_error(a, n))
    return worst


# ------------------------------------------------------------------- geometry


def fresnel_quadrature(xs: np.ndarray) -> tuple:
    """Adaptive-quadrature Fresnel integrals at sorted-or-not points.

    Integrates between consecutive sorted |x| values and accumulates, then
    restores sign by odd symmetry.
    """
    xs = np.asarray(xs, dtype=float)
    ax = np.abs(xs)
    order = np.argsort(ax)
    knots = np.concatenate([[0.0], ax[order]])

    def piece(fn, a, b):
        if b - a < 1e-9:
            return (b - a) * fn(0.5 * (a + b))
        return integrate.quad(fn, a, b, epsabs=1e-15, epsrel=1e-12, limit=200)[0]

    dc = [piece(lambda u: math.cos(0.5 * math.pi * u * u), a, b) for a, b in zip(knots, knots[1:])]
    ds = [piece(lambda u: math.sin(0.5 * math.pi * u * u), a, b) for a, b in zip(knots, knots[1:])]
    c = np.empty_like(ax)
    s = np.empty_like(ax)
    c[order] = np.cumsum(dc)
    s[order] = np.cumsum(ds)
    return np.sign(xs) * c, np.sign(xs) * s


def fresnel_check(n: int = 2001, lo: float = -10.0, hi: float = 10.0, tol: float = 1e-8) -> CheckResult:
    xs = np.linspace(lo, hi, n)
    t0 = time.perf_counter()
    c, s = fresnel(xs)
    elapsed = time.perf_counter() - t0
    qc, qs = fresnel_quadrature(xs)
    err = float(max(np.abs(c - qc).max(), np.abs(s - qs).max()))
    return CheckResult("fresnel vs quadrature", err < tol and elapsed < 5.0, err, tol, {"seconds": elapsed})


def clothoid_check(n_configs: int = 100, seed: int = 0, speed_tol: float = 1e-6, curv_tol: float = 1e-4) -> CheckResult:
    """Unit-speed arc length and the linear curvature law along random clothoids."""
    rng = np.random.default_rng(seed)
    worst_speed = worst_curv = 0.0
    for _ in range(n_configs):
        a = float(rng.uniform(6, 80))
        xi0 = float(rng.uniform(0, 2 * a))
        spec = PathSpec(CLOTHOID, scale_a=a, flipped=bool(rng.random() < 0.5), start_arc_offset=xi0)
        start = Pose2(float(rng.uniform(-20, 20)), float(rng.uniform(-20, 20)), float(rng.uniform(-3, 3)))
        xi = np.sort(rng.uniform(0.1, 2 * a, 12))
        h = 1e-4
        fwd = path_poses(spec, start, xi + h)
        back = path_poses(spec, start, xi - h)
        speed = np.hypot(fwd[:, 0] - back[:, 0], fwd[:, 1] - back[:, 1]) / (2 * h)
        dtheta = np.angle(np.exp(1j * (fwd[:, 2] - back[:, 2])))
        kappa = np.abs(dtheta) / (2 * h)
        expected = math.pi * (xi + xi0) / a**2
        worst_speed = max(worst_speed, float(np.abs(speed - 1.0).max()))
        worst_curv = max(worst_curv, float(np.max(np.abs(kappa - expected) / expected)))
    ok = worst_speed < speed_tol and worst_curv < curv_tol
    return CheckResult(
        "clothoid unit speed and curvature law",
        ok,
        max(worst_speed / speed_tol, worst_curv / curv_tol),
        1.0,
        {"speed_error": worst_speed, "curvature_rel_error": worst_curv},
    )


# ---------------------------------------------------------- planning oracles


def small_roi(n: int = 4, cell: float = 0.4) -> RoiSpec:
    """An n x n grid centred on the origin."""
    half = n * cell / 2
    return RoiSpec(length_fwd=half, length_back=half, width_half=half, cell=cell)


def _bilinear_direct(vol_t: np.ndarray, x: float, y: float, roi: RoiSpec) -> float:
    """Scalar bilinear read of one slice over the cell-centre lattice."""
    H, W = vol_t.shape
    u = min(max((x + roi.length_back) / roi.cell - 0.5, 0.0), H - 1)
    v = min(max((y + roi.width_half) / roi.cell - 0.5, 0.0), W - 1)
    i, j = min(int(math.floor(u)), H - 1), min(int(math.floor(v)), W - 1)
    i1, j1 = min(i + 1, H - 1), min(j + 1, W - 1)
    fu, fv = u - i, v - j
    return (
        vol_t[i, j] * (1 - fu) * (1 - fv)
        + vol_t[i, j1] * (1 - fu) * fv
        + vol_t[i1, j] * fu * (1 - fv)
        + vol_t[i1, j1] * fu * fv
    )


def _inside(x: float, y: float, roi: RoiSpec) -> bool:
    return -roi.length_back <= x < roi.length_fwd and -roi.width_half <= y < roi.width_half


def planning_loss_direct(volume, demo_xy, neg_xy, violations, roi, gamma, outside=1000.0) -> float:
    """Max over negatives of sum_t [c_demo - c_neg + d + gamma * viol]_+ by loops."""
    best = -math.inf
    for i in range(len(neg_xy)):
        acc = 0.0
        for t in range(volume.shape[0]):
            dx, dy = demo_xy[t]
            if not _inside(dx, dy, roi):
                continue
            nx, ny = neg_xy[i, t]
            c_demo = _bilinear_direct(volume[t], dx, dy, roi)
            c_neg = _bilinear_direct(volume[t], nx, ny, roi) if _inside(nx, ny, roi) else outside
            d = math.sqrt((dx - nx) ** 2 + (dy - ny) ** 2)
            term = c_demo - c_neg + d + (gamma if violations[i, t] else 0.0)
            acc += max(term, 0.0)
        best = max(best, acc)
    return best


def planning_loss_check(n_cases: int = 60, seed: int = 0, tol: float = 1e-12) -> CheckResult:
    """Vectorized planning loss against loops on random 4 x 4 x 2 volumes."""
    roi = small_roi(4)
    x0, x1, y0, y1 = roi.bounds
    worst = 0.0
    n_active = n_inactive = n_gamma = 0
    for k in range(n_cases):
        rng = np.random.default_rng([seed, k])
        T = 2
        scale = float(rng.choice([0.1, 1.0, 5.0]))
        vol = rng.standard_normal((T, 4, 4)) * scale
        if k % 5 == 0:
            # cell-centre demonstration: the read is exactly a volume entry
            demo = (rng.integers(0, 4, (T, 2)) + 0.5) * roi.cell + [x0, y0]
        else:
            demo = rng.uniform([x0, y0], [x1, y1], (T, 2))
        n_neg = int(rng.integers(1, 6))
        neg = rng.uniform([x0 - 0.3, y0 - 0.3], [x1 + 0.3, y1 + 0.3], (n_neg, T, 2))
        if k % 7 == 0:
            neg[0] = demo  # zero-distance negative
        viol = rng.random((n_neg, T)) < 0.4
        gamma = 10.0 if k % 2 else 0.0
        n_gamma += gamma > 0
        loss, info = planning_loss(Tensor(vol[None]), demo, neg, viol, roi, gamma)
        ref = planning_loss_direct(vol, demo, neg, viol, roi, gamma)
        worst = max(worst, abs(float(loss.data) - ref) / max(1.0, abs(ref)))
        hinge = info.hinge
        n_active += int(np.any(hinge > 0))
        n_inactive += int(np.any(hinge <= 0))
    detail = {"cases": n_cases, "with_active_hinge": n_active, "with_inactive_hinge": n_inactive, "gamma_on": n_gamma}
    return CheckResult("planning loss vs direct evaluation", worst < tol, worst, tol, detail)


def _random_samples(rng, n: int, T: int, roi: RoiSpec, tie_levels: bool) -> list:
    x0, x1, y0, y1 = roi.bounds
    pad = 0.5
    out = []
    for i in range(n):
        if tie_levels and out and rng.random() < 0.3:
            xy = out[int(rng.integers(len(out)))].xy.copy()  # exact duplicate path
        else:
            xy = rng.uniform([x0 - pad, y0 - pad], [x1 + pad, y1 + pad], (T, 2))
            if tie_levels:
                xy = (np.floor((xy - [x0, y0]) / roi.cell) + 0.5) * roi.cell + [x0, y0]
        out.append(Trajectory(xy, np.zeros(T), np.zeros(T), 0.5, meta={"id": None}))
    ids = rng.permutation(10 * n)[:n]
    for tr, i in zip(out, ids):
        tr.meta["id"] = int(i)
    order = rng.permutation(n)
    return [out[i] for i in order]


def argmin_direct(volume: np.ndarray, samples: list, roi: RoiSpec, outside: float = 1000.0) -> int:
    best_id, best_cost = None, math.inf
    for tr in samples:
        cost = 0.0
        for t, (x, y) in enumerate(tr.xy):
            cost += _bilinear_direct(volume[t], x, y, roi) if _inside(x, y, roi) else outside
        tid = tr.meta["id"]
        if cost < best_cost or (cost == best_cost and tid < best_id):
            best_id, best_cost = tid, cost
    return best_id


def argmin_check(n_pairs: int = 1000, n_samples: int = 50, seed: int = 0) -> CheckResult:
    # cell 0.5 keeps every cell centre exact in binary, so tied costs are exact
    roi = small_roi(8, cell=0.5)
    mismatches = ties = 0
    for k in range(n_pairs):
        rng = np.random.default_rng([seed, k])
        T = int(rng.integers(1, 5))
        tie_levels = k % 2 == 0
        vol = rng.integers(0, 4, (T, 8, 8)).astype(float) if tie_levels else rng.standard_normal((T, 8, 8))
        samples = _random_samples(rng, n_samples, T, roi, tie_levels)
        res = plan(vol, samples, roi)
        costs = np.array([c for _, c in res.all_costs])
        ties += int(np.sum(costs == costs.min()) > 1)
        mismatches += int(res.chosen_id != argmin_direct(vol, samples, roi))
    return CheckResult("plan() vs brute force", mismatches == 0, float(mismatches), 0.0, {"pairs": n_pairs, "ties": ties})


# -------------------------------------------------------------------- sampler


def sampler_check(n: int = 10_000, seed: int = 0, kind_tol: float = 0.02, viol_tol: float = 0.016) -> CheckResult:
    """Kind and negative-violation frequencies plus the dynamics envelope."""
    cfg = SamplerConfig(n_samples=n, seed=seed)
    rng = np.random.default_rng(seed)
    state = SdvState(Pose2(0.0, 0.0, 0.0), 8.0, 0.02)
    samples = sample_trajectories(state, cfg, 6, 0.5)
    kinds = np.array([t.path.kind for t in samples])
    freq = {k: float(np.mean(kinds == k)) for k in (STRAIGHT, CIRCLE, CLOTHOID)}
    expected = {STRAIGHT: cfg.p_straight, CIRCLE: cfg.p_circle, CLOTHOID: cfg.p_clothoid}
    kind_err = max(abs(freq[k] - expected[k]) for k in freq)
    negs = sample_negatives(state, samples[0], cfg, n, rng)
    viol = float(np.mean([t.meta["violates_initial"] for t in negs]))
    viol_err = abs(viol - cfg.negative_violate_prob)
    bad = 0
    lo_a, hi_a = cfg.accel_range
    for is_neg, t in [(False, t) for t in samples] + [(True, t) for t in negs]:
        v = np.concatenate([[t.profile.initial_velocity], t.speed])
        acc = np.diff(v) / t.dt
        ok = np.all(v >= 0) and np.all(acc >= lo_a - 1e-9) and np.all(acc <= hi_a + 1e-9)
        if t.path.kind == CLOTHOID:
            ok = ok and cfg.scale_range[0] <= t.path.scale_a <= cfg.scale_range[1]
        if not is_neg and t.profile.initial_velocity != state.velocity:
            ok = False
        bad += not ok
    passed = kind_err <= kind_tol and viol_err <= viol_tol and bad == 0
    detail = {"kind_freq": freq, "violation_freq": viol, "envelope_failures": bad}
    return CheckResult("sampler statistics", passed, max(kind_err / kind_tol, viol_err / viol_tol), 1.0, detail)


def run_all(full: bool = False, seed: int = 0) -> list:
    """Every suite; ``full`` uses the acceptance-sized case counts."""
    n_shapes = 20 if full else 3
    errs = op_gradient_errors(n_shapes, seed)
    results = [CheckResult(f"gradient {k}", v < GRAD_TOL, v, GRAD_TOL) for k, v in errs.items()]
    err = model_gradient_error(seed=seed, per_tensor=6 if full else 2)
    results.append(CheckResult("gradient full model 16x16", err < GRAD_TOL, err, GRAD_TOL))
    results.append(fresnel_check(2001 if full else 201))
    results.append(clothoid_check(100 if full else 20, seed))
    results.append(planning_loss_check(60 if full else 20, seed))
    results.append(argmin_check(1000 if full else 100, 50, seed))
    results.append(sampler_check(10_000 if full else 2_000, seed, *((0.02, 0.016) if full else (0.05, 0.04))))
    return results

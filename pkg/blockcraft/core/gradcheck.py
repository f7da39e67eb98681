"""
Central-difference gradient verification.

Usage::

    report = grad_check(lambda v: sum_(mul(v["x"], v["x"])), {"x": np.array([3.0])})
    assert report.passed

The function under test maps a dictionary of Variables to a scalar
Variable. The analytic gradient comes from one recorded tape; the numeric
gradient from ``(f(x + h) - f(x - h)) / 2h`` per coordinate with all
inputs constant.
"""

from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from blockcraft.core.autodiff import Tape, Variable, backward, mul, sum_
from blockcraft.core.tensor import Precision, Tensor, get_precision, precision
from blockcraft.errors import NonFiniteError
from blockcraft.random.distributions import RandomGenerator

logger = logging.getLogger("blockcraft.autodiff")

LossFn = Callable[[Dict[str, Variable]], Variable]

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
DEFAULT_ABS_TOLERANCE = 1e-8
RELATIVE_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    """
    Outcome of one gradient check.

    Attributes
    ----------
    name : str
        Case name
    passed : bool
        Whether every coordinate is within tolerance and finite
    max_rel_error : float
        Largest relative error over all checked coordinates
    max_abs_error : float
        Largest absolute error over all checked coordinates
    worst : Optional[Tuple[str, Tuple[int, ...]]]
        Parameter and index of the largest relative error
    per_param : Dict[str, float]
        Largest relative error per parameter
    checked : int
        Coordinates compared
    failed : int
        Coordinates outside both tolerances
    failure : Optional[str]
        Reason for a non-numeric failure (non-finite value with location)
    """

    name: str
    passed: bool
    max_rel_error: float
    max_abs_error: float = 0.0
    worst: Optional[Tuple[str, Tuple[int, ...]]] = None
    per_param: Dict[str, float] = field(default_factory=dict)
    checked: int = 0
    failed: int = 0
    failure: Optional[str] = None

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if self.failure:
            return f"{status} {self.name}: {self.failure}"
        return (
            f"{status} {self.name}: max rel err {self.max_rel_error:.3e}, "
            f"max abs err {self.max_abs_error:.3e}, {self.failed}/{self.checked} coords failed"
        )


def relative_error(analytic: float, numeric: float, floor: float = RELATIVE_FLOOR) -> float:
    """
    ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps the ratio finite near zero; gradients that small are
    judged by their absolute error instead.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _evaluate(fn: LossFn, values: Mapping[str, np.ndarray]) -> float:
    out = fn({n: Variable.constant(Tensor(v)) for n, v in values.items()})
    return float(out.value.item())


def analytic_gradients(fn: LossFn, params: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Tape gradients of ``fn`` at ``params``; parameters without a path get zeros."""
    tape = Tape("gradcheck")
    watched = {n: tape.watch(Tensor(v), name=n) for n, v in params.items()}
    loss = fn(watched)
    grads = tape.parameter_gradients(backward(tape, loss))
    return {
        n: grads[n].numpy() if n in grads else np.zeros_like(np.asarray(v, dtype=np.float64))
        for n, v in params.items()
    }


def _coordinates(shape: Tuple[int, ...], limit: Optional[int], rng: RandomGenerator) -> List[Tuple[int, ...]]:
    everything = list(np.ndindex(*shape)) if shape else [()]
    if limit is None or len(everything) <= limit:
        return everything
    picks = rng.permutation(len(everything))[:limit]
    return [everything[i] for i in sorted(picks)]


def grad_check(
    fn: LossFn,
    params: Mapping[str, np.ndarray],
    h: float = DEFAULT_STEP,
    tol: float = DEFAULT_TOLERANCE,
    atol: float = DEFAULT_ABS_TOLERANCE,
    analytic: Optional[Mapping[str, np.ndarray]] = None,
    max_coords: Optional[int] = None,
    name: str = "",
    seed: int = 0,
) -> GradCheckReport:
    """
    Compare analytic gradients with central differences.

    Parameters
    ----------
    fn : LossFn
        Map from named Variables to a scalar Variable
    params : Mapping[str, np.ndarray]
        Point of evaluation
    h : float
        Finite-difference step
    tol : float
        Pass threshold on the relative error
    atol : float
        Pass threshold on the absolute error; a coordinate fails only when
        it exceeds both
    analytic : Optional[Mapping[str, np.ndarray]]
        Gradients to verify instead of the tape's (e.g. a hand-derived rule)
    max_coords : Optional[int]
        Check at most this many coordinates per parameter (sampled)
    name : str
        Case name for the report
    seed : int
        Seed for coordinate sampling

    Raises
    ------
    ValueError
        If ``h`` is not positive or the run is not in 64-bit precision
    """
    if h <= 0:
        raise ValueError(f"finite-difference step must be > 0, got {h}")
    if atol < 0:
        raise ValueError(f"absolute tolerance must be >= 0, got {atol}")
    if get_precision() is not Precision.FLOAT64:
        raise ValueError("gradient checks require 64-bit precision")
    values = {n: np.array(v, dtype=np.float64) for n, v in params.items()}
    rng = RandomGenerator(seed)
    try:
        grads = dict(analytic) if analytic is not None else analytic_gradients(fn, values)
    except NonFiniteError as exc:
        return GradCheckReport(name, False, math.inf, failure=f"analytic pass: {exc}")

    report = GradCheckReport(name, True, 0.0)
    for pname, base in values.items():
        grad = np.asarray(grads[pname], dtype=np.float64)
        if not np.all(np.isfinite(grad)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(grad))[0])
            report.passed = False
            report.failure = f"non-finite analytic gradient at {pname}{list(bad)}"
            report.max_rel_error = math.inf
            return report
        worst_here = 0.0
        for index in _coordinates(base.shape, max_coords, rng):
            shifted = dict(values)
            plus = base.copy()
            plus[index] += h
            minus = base.copy()
            minus[index] -= h
            shifted[pname] = plus
            f_plus = _evaluate(fn, shifted)
            shifted[pname] = minus
            f_minus = _evaluate(fn, shifted)
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                report.passed = False
                report.failure = f"non-finite loss when perturbing {pname}{list(index)}"
                report.max_rel_error = math.inf
                return report
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = relative_error(float(grad[index]), numeric)
            abs_err = abs(float(grad[index]) - numeric)
            report.checked += 1
            if err > tol and abs_err > atol:
                report.failed += 1
            worst_here = max(worst_here, err)
            report.max_abs_error = max(report.max_abs_error, abs_err)
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = (pname, tuple(int(i) for i in index))
        report.per_param[pname] = worst_here
    report.passed = report.failed == 0
    logger.debug("%s", report)
    return report


def _projected(out: Variable, rng: RandomGenerator) -> Variable:
    """Scalar ``sum(out * r)`` with a fixed random ``r``, so every output coordinate matters."""
    r = Variable.constant(rng.normal(out.shape, 0.0, 1.0, dtype=np.float64))
    return sum_(mul(out, r))


def layer_suite(seed: int = 0, h: float = DEFAULT_STEP, tol: float = DEFAULT_TOLERANCE) -> List[GradCheckReport]:
    """
    Gradient checks for every layer kind and a small 3-block model.

    Runs in 64-bit precision regardless of the caller's setting.
    """
    from blockcraft.nn import functional as F

    reports: List[GradCheckReport] = []
    with precision(Precision.FLOAT64):
        rng = RandomGenerator(seed)

        def sample(*shape: int) -> np.ndarray:
            return rng.normal(shape, 0.0, 1.0, dtype=np.float64).data

        def case(name: str, fn: LossFn, params: Dict[str, np.ndarray]) -> None:
            proj_seed = seed + len(reports) + 1

            def projected(v: Dict[str, Variable]) -> Variable:
                return _projected(fn(v), RandomGenerator(proj_seed))

            reports.append(grad_check(projected, params, h, tol, name=name))

        case(
            "dense",
            lambda v: F.dense(v["x"], v["w"], v["b"]),
            {"x": sample(3, 4), "w": sample(5, 4), "b": sample(5)},
        )
        case(
            "conv2d",
            lambda v: F.conv2d(v["x"], v["w"], v["b"], stride=1, padding=1),
            {"x": sample(2, 2, 5, 5), "w": sample(3, 2, 3, 3), "b": sample(3)},
        )
        case(
            "conv2d-stride2",
            lambda v: F.conv2d(v["x"], v["w"], None, stride=2, padding=0),
            {"x": sample(2, 2, 6, 6), "w": sample(2, 2, 2, 2)},
        )
        case(
            "batchnorm-train",
            lambda v: F.batchnorm_train(v["x"], v["g"], v["b"])[0],
            {"x": sample(3, 2, 3, 3), "g": sample(2), "b": sample(2)},
        )
        running_mean, running_var = np.zeros(2), np.ones(2) * 1.5
        case(
            "batchnorm-eval",
            lambda v: F.batchnorm_eval(v["x"], v["g"], v["b"], running_mean, running_var),
            {"x": sample(2, 2, 3, 3), "g": sample(2), "b": sample(2)},
        )
        case("maxpool2d", lambda v: F.maxpool2d(v["x"], 2), {"x": sample(2, 2, 4, 4)})
        case("global-avg-pool", lambda v: F.global_avg_pool(v["x"]), {"x": sample(2, 3, 3, 3)})
        case("relu", lambda v: F.relu(v["x"]), {"x": sample(4, 5)})
        case(
            "residual-add",
            lambda v: F.residual_add(v["a"], v["b"]),
            {"a": sample(2, 2, 3, 3), "b": sample(2, 2, 3, 3)},
        )
        labels = rng.integers(0, 5, size=4)
        reports.append(
            grad_check(
                lambda v: F.softmax_cross_entropy(v["z"], labels)[0],
                {"z": sample(4, 5)},
                h,
                tol,
                name="softmax-cross-entropy",
            )
        )
        reports.extend(model_suite(seed, h, tol))
    return reports


class _VariableBinding:
    """Binding that substitutes externally supplied Variables for parameters."""

    def __init__(self, variables: Mapping[str, Variable]) -> None:
        self.variables = variables

    def __call__(self, param) -> Variable:
        bound = self.variables.get(param.name)
        return bound if bound is not None else Variable(param.value, name=param.name)


def model_suite(seed: int = 0, h: float = DEFAULT_STEP, tol: float = DEFAULT_TOLERANCE) -> List[GradCheckReport]:
    """
    Check every local loss of a randomized 3-block model.

    Each block's loss is differentiated with respect to that block's and
    its head's parameters, with the block input held constant.
    """
    from blockcraft.models.network import attach_aux
    from blockcraft.models.partition import partition
    from blockcraft.models.spec import ArchitectureSpec, StemSpec, UnitKind, UnitSpec
    from blockcraft.nn.functional import softmax_cross_entropy
    from blockcraft.random.streams import StreamManager

    reports: List[GradCheckReport] = []
    with precision(Precision.FLOAT64):
        spec = ArchitectureSpec(
            "gradcheck-tiny",
            (2, 6, 6),
            3,
            (
                UnitSpec(UnitKind.VGG, 3, 3, pool=True),
                UnitSpec(UnitKind.BASIC, 3, 4, stride=1),
                UnitSpec(UnitKind.VGG, 4, 4),
            ),
            stem=StemSpec(2, 3),
        )
        model = attach_aux(partition(spec.num_units, 3), spec, StreamManager(seed))
        rng = RandomGenerator(seed + 101)
        images = rng.normal((4, 2, 6, 6), 0.0, 1.0, dtype=np.float64).data
        labels = rng.integers(0, 3, size=4)
        x = images
        for index, block in enumerate(model.blocks):
            head = model.local_head(index)
            block_input = x
            params = {p.name: p.value.numpy() for p in model.stage_parameters(index)}

            def fn(v: Dict[str, Variable], block=block, head=head, block_input=block_input) -> Variable:
                bind = _VariableBinding(v)
                out = block.forward(Variable.constant(block_input), bind, train=True)
                return softmax_cross_entropy(head.forward(out, bind, train=True), labels)[0]

            reports.append(grad_check(fn, params, h, tol, name=f"model-{block.name}", max_coords=40))
            x = block.forward(Variable.constant(block_input), _VariableBinding({}), train=True).data
    return reports

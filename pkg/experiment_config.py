import ast
import dataclasses
import math
import os
from dataclasses import dataclass, field

import yaml

from errors import ConfigError, DomainError, LabError
from global_settings import DEFAULT_THREADS, OUTPUT_DIR, THREADS_ENV_VAR
from grid_domain import (
    Annulus,
    Ball,
    Box,
    Ellipse,
    Translate,
    Union,
    ball_of_measure,
    box_of_measure,
    l_shape,
    two_balls,
)
from logging_functions import log_action
from riesz_kernel import RieszParams, newton_params

EXPERIMENT_KINDS = (
    "spectrum",
    "schatten",
    "rfk",
    "hks",
    "trace-mc",
    "bll",
    "rearrange-check",
    "converge",
    "probe-convolution",
)

MEASURE_TOLERANCE = 1e-12

_CONSTANTS = {"pi": math.pi, "e": math.e, "inf": math.inf}
_BINARY = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}


# Expressions


def _shape_constructors(dim):
    def ball(center, radius):
        return Ball(center, radius)

    def box(corner, sides):
        return Box(corner, sides)

    def ellipse(center, semi_axes):
        return Ellipse(center, semi_axes)

    def annulus(center, inner, outer):
        return Annulus(center, inner, outer)

    def union(*members):
        return Union(members)

    def translate(shape, offset):
        return Translate(shape, offset)

    def ball_of_measure_(measure, center=None):
        return ball_of_measure(measure, dim, center)

    def box_of_measure_(measure, aspect=1.0, corner=None):
        return box_of_measure(measure, dim, aspect, corner)

    def l_shape_(measure):
        return l_shape(measure)

    def two_balls_(measure, distance):
        return two_balls(measure, distance, dim)

    return {
        "sqrt": math.sqrt,
        "ball": ball,
        "box": box,
        "ellipse": ellipse,
        "annulus": annulus,
        "union": union,
        "translate": translate,
        "ball_of_measure": ball_of_measure_,
        "box_of_measure": box_of_measure_,
        "l_shape": l_shape_,
        "two_balls": two_balls_,
    }


def _evaluate(node, functions):
    if isinstance(node, ast.Expression):
        return _evaluate(node.body, functions)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id in _CONSTANTS:
        return _CONSTANTS[node.id]
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        value = _evaluate(node.operand, functions)
        return -value if isinstance(node.op, ast.USub) else value
    if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
        return _BINARY[type(node.op)](_evaluate(node.left, functions), _evaluate(node.right, functions))
    if isinstance(node, (ast.List, ast.Tuple)):
        return [_evaluate(item, functions) for item in node.elts]
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in functions:
        args = [_evaluate(arg, functions) for arg in node.args]
        kwargs = {kw.arg: _evaluate(kw.value, functions) for kw in node.keywords}
        return functions[node.func.id](*args, **kwargs)
    raise ConfigError(f"unsupported expression element: {ast.dump(node)[:60]}")


def parse_expression(text, dim):
    """
    Evaluate a shape or number expression with the restricted grammar.

    Allowed: numbers, pi, e, inf, + - * / **, sqrt(..), lists, and the shape
    constructors ball, box, ellipse, annulus, union, translate,
    ball_of_measure, box_of_measure, l_shape, two_balls. Nothing else is
    evaluated.

    Raises:
        ConfigError: On a syntax error, a foreign name or invalid arguments.
    """
    try:
        tree = ast.parse(str(text), mode="eval")
        return _evaluate(tree, _shape_constructors(dim))
    except ConfigError:
        raise
    except (SyntaxError, TypeError, ZeroDivisionError, OverflowError) as e:
        raise ConfigError(f"cannot evaluate {text!r}: {e}") from e
    except (LabError, ValueError) as e:
        raise ConfigError(f"invalid arguments in {text!r}: {e}") from e


def parse_number(value, name="value"):
    if isinstance(value, bool):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    result = parse_expression(value, dim=1)
    if not isinstance(result, float):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    return result


def parse_shape(text, dim):
    shape = parse_expression(text, dim)
    if not hasattr(shape, "to_expression"):
        raise ConfigError(f"{text!r} is not a shape expression")
    if shape.dim != dim:
        raise ConfigError(f"shape {text!r} has dimension {shape.dim}, config dimension is {dim}")
    return shape


def _number_list(values, name):
    if values is None:
        return ()
    if not isinstance(values, (list, tuple)):
        values = [values]
    return tuple(parse_number(v, name) for v in values)


# Config


@dataclass(frozen=True)
class MCSettings:
    s: int = 3
    n_samples: int = 100_000
    seed: int = 0
    lanes: int = 1
    cross_check: bool = False


@dataclass(frozen=True)
class HKSSettings:
    total_measure: float = 1.0
    distances: tuple = ()


@dataclass(frozen=True)
class ProbeSettings:
    alpha2: float = 0.3
    r_values: tuple = (0.5, 1.0, 2.0)
    truncation_radius: float = 64.0
    quad_points: int = 200


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One experiment as read from a YAML file.

    Attributes:
        kind (str): One of EXPERIMENT_KINDS.
        dim (int): Ambient dimension.
        alpha (float | None): Order of the potential (exclusive with newton_m).
        newton_m (int | None): Polyharmonic order, alpha = 2m.
        constant (float | None): Kernel constant override.
        shapes (tuple[tuple[str, shape]]): Labelled shapes in run order.
        resolutions (tuple[float]): Cell sizes, strictly descending.
        p_values (tuple[float]): Schatten exponents (inf allowed).
        exploratory (bool): Admit non-integer p.
        mc (MCSettings): Monte Carlo settings.
        hks (HKSSettings): Two-ball sweep settings.
        probe (ProbeSettings): Convolution probe settings.
        n_functions (int): Functions per rearrangement check.
        envelope_terms (int | None): Eigenvalues used for the decay envelope.
        diagonal_rule (str): Self-term rule for assembly.
        output_dir (str): Where CSV and manifest are written.
        threads (int): Worker threads for (shape, h) jobs and MC lanes.
    """

    kind: str
    dim: int
    alpha: float = None
    newton_m: int = None
    constant: float = None
    shapes: tuple = ()
    resolutions: tuple = ()
    p_values: tuple = ()
    exploratory: bool = False
    mc: MCSettings = field(default_factory=MCSettings)
    hks: HKSSettings = field(default_factory=HKSSettings)
    probe: ProbeSettings = field(default_factory=ProbeSettings)
    n_functions: int = 50
    envelope_terms: int = None
    diagonal_rule: str = "ball"
    output_dir: str = OUTPUT_DIR
    threads: int = DEFAULT_THREADS

    def __post_init__(self):
        self.validate()

    def params(self):
        try:
            if self.newton_m is not None:
                return newton_params(self.newton_m, self.dim)
            return RieszParams(self.alpha, self.dim, self.constant)
        except DomainError as e:
            raise ConfigError(f"invalid kernel parameters: {e}") from e

    @property
    def labels(self):
        return [label for label, _ in self.shapes]

    def nominal_measure(self):
        """Common nominal measure of the shapes (None when there are none)."""
        if not self.shapes:
            return None
        try:
            return self.shapes[0][1].nominal_measure()
        except LabError as e:
            raise ConfigError(f"shape {self.shapes[0][0]!r}: {e}") from e

    def validate(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment {self.kind!r}, expected one of {EXPERIMENT_KINDS}")
        if (self.alpha is None) == (self.newton_m is None):
            raise ConfigError("give exactly one of params.alpha and params.newton_m")
        self.params()

        if self.kind != "probe-convolution" and not self.resolutions:
            raise ConfigError("resolutions must list at least one h")
        if any(not h > 0 for h in self.resolutions):
            raise ConfigError(f"resolutions must be positive, got {list(self.resolutions)}")
        if any(a <= b for a, b in zip(self.resolutions, self.resolutions[1:])):
            raise ConfigError(f"resolutions must be strictly descending, got {list(self.resolutions)}")
        if any(not p >= 1 for p in self.p_values):
            raise ConfigError(f"Schatten exponents must be >= 1, got {list(self.p_values)}")

        labels = self.labels
        if len(set(labels)) != len(labels):
            raise ConfigError(f"shape labels must be unique, got {labels}")
        for label in labels:
            if "#" in label or "\n" in label:
                raise ConfigError(f"shape label {label!r} may not contain '#' or newlines")
        if self.shapes:
            reference = self.nominal_measure()
            for label, shape in self.shapes:
                try:
                    value = shape.nominal_measure()
                except LabError as e:
                    raise ConfigError(f"shape {label!r}: {e}") from e
                if abs(value - reference) > MEASURE_TOLERANCE * reference:
                    raise ConfigError(
                        f"shape {label!r} has measure {value!r}, expected {reference!r} "
                        f"(all shapes share one measure within {MEASURE_TOLERANCE:g})"
                    )
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.mc.lanes < 1 or self.mc.n_samples < 1:
            raise ConfigError("mc.lanes and mc.n_samples must be >= 1")

    def with_overrides(self, h=None, seed=None, threads=None, output_dir=None):
        """CLI overrides: --h replaces the resolution list by [h]."""
        changes = {}
        if h is not None:
            changes["resolutions"] = (parse_number(h, "h"),)
        if seed is not None:
            changes["mc"] = dataclasses.replace(self.mc, seed=int(seed))
        if threads is not None:
            changes["threads"] = int(threads)
        if output_dir is not None:
            changes["output_dir"] = str(output_dir)
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        params = {"dim": self.dim}
        if self.alpha is not None:
            params["alpha"] = self.alpha
        if self.newton_m is not None:
            params["newton_m"] = self.newton_m
        if self.constant is not None:
            params["constant"] = self.constant
        return {
            "experiment": self.kind,
            "params": params,
            "shapes": {label: shape.to_expression() for label, shape in self.shapes},
            "resolutions": list(self.resolutions),
            "p": list(self.p_values),
            "exploratory": self.exploratory,
            "mc": dataclasses.asdict(self.mc),
            "hks": {"total_measure": self.hks.total_measure, "distances": list(self.hks.distances)},
            "probe": {
                "alpha2": self.probe.alpha2,
                "r_values": list(self.probe.r_values),
                "truncation_radius": self.probe.truncation_radius,
                "quad_points": self.probe.quad_points,
            },
            "n_functions": self.n_functions,
            "envelope_terms": self.envelope_terms,
            "diagonal_rule": self.diagonal_rule,
            "output": self.output_dir,
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls._from_dict(data)
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ConfigError(f"malformed experiment: {e}") from e

    @classmethod
    def _from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("experiment file must hold a mapping")
        unknown = set(data) - {
            "experiment", "params", "shapes", "resolutions", "p", "exploratory", "mc", "hks",
            "probe", "n_functions", "envelope_terms", "diagonal_rule", "output", "threads",
        }
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}")
        params = data.get("params") or {}
        if "dim" not in params:
            raise ConfigError("params.dim is required")
        dim = int(params["dim"])
        alpha = parse_number(params["alpha"], "alpha") if params.get("alpha") is not None else None
        newton_m = int(params["newton_m"]) if params.get("newton_m") is not None else None
        constant = parse_number(params["constant"], "constant") if params.get("constant") is not None else None

        shapes = tuple((str(label), parse_shape(text, dim)) for label, text in (data.get("shapes") or {}).items())

        mc_data = data.get("mc") or {}
        mc = MCSettings(
            s=int(mc_data.get("s", MCSettings.s)),
            n_samples=int(parse_number(mc_data.get("n_samples", MCSettings.n_samples), "n_samples")),
            seed=int(mc_data.get("seed", MCSettings.seed)),
            lanes=int(mc_data.get("lanes", MCSettings.lanes)),
            cross_check=bool(mc_data.get("cross_check", False)),
        )
        hks_data = data.get("hks") or {}
        hks = HKSSettings(
            total_measure=parse_number(hks_data.get("total_measure", 1.0), "total_measure"),
            distances=_number_list(hks_data.get("distances"), "distances"),
        )
        probe_data = data.get("probe") or {}
        probe = ProbeSettings(
            alpha2=parse_number(probe_data.get("alpha2", ProbeSettings.alpha2), "alpha2"),
            r_values=_number_list(probe_data.get("r_values", list(ProbeSettings.r_values)), "r_values"),
            truncation_radius=parse_number(
                probe_data.get("truncation_radius", ProbeSettings.truncation_radius), "truncation_radius"
            ),
            quad_points=int(probe_data.get("quad_points", ProbeSettings.quad_points)),
        )
        envelope_terms = data.get("envelope_terms")
        return cls(
            kind=str(data.get("experiment", "")),
            dim=dim,
            alpha=alpha,
            newton_m=newton_m,
            constant=constant,
            shapes=shapes,
            resolutions=_number_list(data.get("resolutions"), "resolutions"),
            p_values=_number_list(data.get("p"), "p"),
            exploratory=bool(data.get("exploratory", False)),
            mc=mc,
            hks=hks,
            probe=probe,
            n_functions=int(data.get("n_functions", 50)),
            envelope_terms=int(envelope_terms) if envelope_terms is not None else None,
            diagonal_rule=str(data.get("diagonal_rule", "ball")),
            output_dir=str(data.get("output") or os.path.join(OUTPUT_DIR, str(data.get("experiment", "")))),
            threads=int(data["threads"]) if data.get("threads") is not None else default_threads(),
        )


def default_threads():
    """Thread count from the RIESZLAB_THREADS environment variable, else DEFAULT_THREADS."""
    value = os.environ.get(THREADS_ENV_VAR)
    if not value:
        return DEFAULT_THREADS
    try:
        return int(value)
    except ValueError as e:
        raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {value!r}") from e


def load_config(path, kind=None):
    """
    Read an experiment file.

    Args:
        path (str): YAML file.
        kind (str, optional): Expected experiment; fills a missing
            `experiment` key and must match a present one.

    Raises:
        ConfigError: If the file is missing, is not valid YAML or fails validation.
    """
    try:
        with open(path, "r") as file:
            data = yaml.safe_load(file)
    except OSError as e:
        raise ConfigError(f"cannot read experiment file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"experiment file {path} is not valid YAML: {e}") from e
    if kind is not None and isinstance(data, dict):
        data.setdefault("experiment", kind)
        if data["experiment"] != kind:
            raise ConfigError(f"{path} describes a {data['experiment']!r} experiment, not {kind!r}")
    config = ExperimentConfig.from_dict(data)
    log_action(f"loaded {config.kind} experiment from {path}", action_type="CONFIG")
    return config


def save_config(config, path):
    with open(path, "w") as file:
        yaml.safe_dump(config.to_dict(), file, sort_keys=False)
    log_action(f"saved {config.kind} experiment to {path}", action_type="CONFIG")

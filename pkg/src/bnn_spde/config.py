"""Experiment configuration, presets and JSON (de)serialization.

A configuration is a nested JSON object with the sections ``problem``,
``sensors``, ``data``, ``gmm``, ``network``, ``hmc``, ``estimate`` and
``reference`` plus the top-level keys ``preset``, ``scale``, ``seed`` and
``output_dir``. Unknown keys are rejected. ``--set section.key=value`` on the
command line overrides any leaf.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

from .exceptions import ValidationError
from .gp import KERNEL_KINDS, MEAN_KINDS, GpSpec, Kernel, MeanFn
from .problem import OPERATORS, ProblemSpec, SensorLayout, equidistant_1d, square_boundary, tensor_grid_2d

__all__ = ["ExperimentConfig", "PRESETS", "preset_config", "load_config", "apply_overrides"]


@dataclass
class GpConfig:
    mean: str = "zero"
    mean_value: float = 0.0
    kernel: str = "squared_exponential"
    sigma: float = 1.0
    length: float = 0.1
    log_shift: float | None = None

    def build(self):
        return GpSpec(MeanFn(self.mean, self.mean_value), Kernel(self.kernel, self.sigma, self.length),
                      self.log_shift)


@dataclass
class ProblemConfig:
    operator: str = "neg_laplace_1d"
    mode: str = "forward"
    domain: list = field(default_factory=lambda: [[-1.0, 1.0]])
    f: GpConfig | None = field(default_factory=GpConfig)
    k: GpConfig | None = None
    noise_std: float = 0.0


@dataclass
class SensorConfig:
    """Equidistant sensors (endpoints included).

    In 2D ``n_f`` must be a perfect square (tensor grid) and ``n_g`` a
    multiple of four (equal counts per side, corners once).
    """

    n_f: int = 41
    n_g: int = 0
    n_k: int = 0
    n_u: int = 0


@dataclass
class DataConfig:
    n_snapshots: int = 20000
    n_fine: int = 401


@dataclass
class GmmConfig:
    n_components: int = 1
    reg: float | None = None
    standardize: bool = False
    max_iter: int = 200
    tol: float = 1e-8


@dataclass
class NetworkConfig:
    n_features: int = 10
    scales: list = field(default_factory=lambda: [1.0, 5.0])
    hidden: list = field(default_factory=lambda: [200])


@dataclass
class HmcSection:
    burn_in: int = 1000
    n_samples: int = 4000
    leapfrog_steps: int = 100
    step_size: float = 1e-3
    warm_start: str = "map"
    map_maxiter: int = 20000
    on_divergence: str = "reject"
    prior_std: float = 1.0


@dataclass
class EstimateConfig:
    """Evaluation grid for predicted statistics.

    ``n_grid`` points per axis (endpoints included); ``None`` uses the
    f-sensor grid. ``kernel_field`` picks the quantity whose covariance kernel
    is compared with the prescribed one: ``"log_f"`` (``log(u - shift)``),
    ``"f"`` (operator applied to ``u``), ``"k_head"`` (``log(k - shift)``) or
    ``None``.
    """

    n_grid: int | None = None
    field: str = "u"
    kernel_field: str | None = None


@dataclass
class ReferenceConfig:
    """``kind`` is ``"analytic"`` (closed-form law of the sampled field) or ``"mc"``."""

    kind: str = "mc"
    n_grid: int = 401
    n_mc: int = 500000
    cov_stride: int | None = None


@dataclass
class ExperimentConfig:
    preset: str = "custom"
    scale: str = "paper"
    seed: int = 0
    output_dir: str | None = None
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    data: DataConfig = field(default_factory=DataConfig)
    gmm: GmmConfig = field(default_factory=GmmConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    hmc: HmcSection = field(default_factory=HmcSection)
    estimate: EstimateConfig = field(default_factory=EstimateConfig)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)

    # ------------------------------------------------------------ serialization
    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d, "")

    # --------------------------------------------------------------- validation
    def validate(self):
        p, s = self.problem, self.sensors
        checks = [
            (self.scale in ("paper", "desk"), "scale", "must be 'paper' or 'desk'"),
            (p.operator in OPERATORS, "problem.operator", f"must be one of {sorted(OPERATORS)}"),
            (p.mode in ("forward", "inverse"), "problem.mode", "must be 'forward' or 'inverse'"),
            (p.noise_std >= 0, "problem.noise_std", "must be non-negative"),
            (s.n_f >= 1, "sensors.n_f", "must be >= 1"),
            (min(s.n_g, s.n_k, s.n_u) >= 0, "sensors", "counts must be non-negative"),
            (self.data.n_snapshots >= 1, "data.n_snapshots", "must be >= 1"),
            (self.gmm.n_components >= 1, "gmm.n_components", "must be >= 1"),
            (self.gmm.reg is None or self.gmm.reg >= 0, "gmm.reg", "must be non-negative"),
            (self.network.n_features >= 1, "network.n_features", "must be >= 1"),
            (len(self.network.scales) >= 1 and all(v > 0 for v in self.network.scales),
             "network.scales", "need at least one positive scale"),
            (len(self.network.hidden) >= 1 and all(int(v) >= 1 for v in self.network.hidden),
             "network.hidden", "need at least one positive width"),
            (self.hmc.burn_in >= 0, "hmc.burn_in", "must be >= 0"),
            (self.hmc.n_samples >= 1, "hmc.n_samples", "must be >= 1"),
            (self.hmc.leapfrog_steps >= 0, "hmc.leapfrog_steps", "must be >= 0"),
            (self.hmc.step_size > 0, "hmc.step_size", "must be positive"),
            (self.hmc.warm_start in ("map", "none"), "hmc.warm_start", "must be 'map' or 'none'"),
            (self.hmc.on_divergence in ("raise", "reject"), "hmc.on_divergence", "must be 'raise' or 'reject'"),
            (self.hmc.prior_std > 0, "hmc.prior_std", "must be positive"),
            (self.reference.kind in ("mc", "analytic"), "reference.kind", "must be 'mc' or 'analytic'"),
            (self.reference.n_grid >= 3, "reference.n_grid", "must be >= 3"),
            (self.reference.n_mc >= 1, "reference.n_mc", "must be >= 1"),
            (self.estimate.field in ("u", "k", "k_head", "f"), "estimate.field", "must be u, k, k_head or f"),
            (self.estimate.kernel_field in (None, "log_f", "f", "k_head"), "estimate.kernel_field",
             "must be log_f, f, k_head or null"),
        ]
        for gp_name in ("f", "k"):
            g = getattr(p, gp_name)
            if g is not None:
                checks += [
                    (g.kernel in KERNEL_KINDS, f"problem.{gp_name}.kernel", f"must be one of {KERNEL_KINDS}"),
                    (g.mean in MEAN_KINDS, f"problem.{gp_name}.mean", f"must be one of {MEAN_KINDS}"),
                    (g.sigma > 0, f"problem.{gp_name}.sigma", "must be positive"),
                    (g.length > 0, f"problem.{gp_name}.length", "must be positive"),
                ]
        if len(p.domain) == 2:
            r = int(round(s.n_f ** 0.5))
            checks += [(r * r == s.n_f, "sensors.n_f", "must be a perfect square in 2D"),
                       (s.n_g % 4 == 0, "sensors.n_g", "must be a multiple of 4 in 2D")]
        for ok, key, msg in checks:
            if not ok:
                raise ValidationError(f"{key}: {msg}")
        try:
            spec = self.problem_spec()
            self.layout().validate(spec)
        except ValidationError as exc:
            raise ValidationError(f"problem: {exc}") from exc
        except ValueError as exc:
            raise ValidationError(f"problem: {exc}") from exc
        return self

    # ------------------------------------------------------------- builders
    def problem_spec(self):
        p = self.problem
        return ProblemSpec(p.operator, tuple(tuple(d) for d in p.domain),
                           p.f.build() if p.f else None, p.k.build() if p.k else None,
                           p.mode, p.noise_std)

    def layout(self):
        s, dom = self.sensors, self.problem.domain
        if len(dom) == 1:
            d = tuple(dom[0])
            g = [[d[0]], [d[1]]] if s.n_g == 2 else (equidistant_1d(s.n_g, d) if s.n_g else None)
            return SensorLayout(equidistant_1d(s.n_f, d), g,
                                equidistant_1d(s.n_k, d) if s.n_k else None,
                                equidistant_1d(s.n_u, d) if s.n_u else None, dim=1)
        d2 = tuple(tuple(v) for v in dom)
        n = int(round(s.n_f ** 0.5))
        return SensorLayout(tensor_grid_2d(n, d2), square_boundary(s.n_g // 4, d2) if s.n_g else None,
                            tensor_grid_2d(int(round(s.n_k ** 0.5)), d2) if s.n_k else None,
                            tensor_grid_2d(int(round(s.n_u ** 0.5)), d2) if s.n_u else None, dim=2)

    def estimate_grid(self):
        dom = self.problem.domain
        n = self.estimate.n_grid
        if len(dom) == 1:
            return equidistant_1d(n or self.sensors.n_f, tuple(dom[0]))
        return tensor_grid_2d(n or int(round(self.sensors.n_f ** 0.5)), tuple(tuple(v) for v in dom))

    def solver_kwargs(self):
        h = self.hmc
        return dict(n_features=self.network.n_features, scales=tuple(self.network.scales),
                    hidden=tuple(int(v) for v in self.network.hidden), n_components=self.gmm.n_components,
                    reg=self.gmm.reg, standardize=self.gmm.standardize, prior_std=h.prior_std,
                    burn_in=h.burn_in, n_samples=h.n_samples, leapfrog_steps=h.leapfrog_steps,
                    step_size=h.step_size, warm_start=h.warm_start, map_maxiter=h.map_maxiter,
                    on_divergence=h.on_divergence)


def _from_dict(cls, d, prefix):
    if d is None:
        return None
    if not isinstance(d, dict):
        raise ValidationError(f"{prefix or 'config'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ValidationError(f"{prefix or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, f in known.items():
        if name not in d:
            continue
        v = d[name]
        sub = getattr(defaults, name)
        sub_cls = _nested_type(cls, name, sub)
        if sub_cls is not None and v is not None:
            kwargs[name] = _from_dict(sub_cls, v, f"{prefix}{name}.")
        else:
            kwargs[name] = copy.deepcopy(v)
    return cls(**kwargs)


_NESTED = {
    ("ExperimentConfig", "problem"): ProblemConfig,
    ("ExperimentConfig", "sensors"): SensorConfig,
    ("ExperimentConfig", "data"): DataConfig,
    ("ExperimentConfig", "gmm"): GmmConfig,
    ("ExperimentConfig", "network"): NetworkConfig,
    ("ExperimentConfig", "hmc"): HmcSection,
    ("ExperimentConfig", "estimate"): EstimateConfig,
    ("ExperimentConfig", "reference"): ReferenceConfig,
    ("ProblemConfig", "f"): GpConfig,
    ("ProblemConfig", "k"): GpConfig,
}


def _nested_type(cls, name, default):
    if is_dataclass(default):
        return type(default)
    return _NESTED.get((cls.__name__, name))


# --------------------------------------------------------------------- presets
def _process31():
    return ExperimentConfig(
        preset="process31",
        problem=ProblemConfig("identity", "forward", [[-1.0, 1.0]],
                              GpConfig("sin_pi", 1.0, "squared_exponential", 0.1, 0.1, 0.5)),
        sensors=SensorConfig(n_f=41),
        gmm=GmmConfig(n_components=3),
        network=NetworkConfig(7, [1.0, 5.0], [200]),
        hmc=HmcSection(leapfrog_steps=100, step_size=1e-3),
        estimate=EstimateConfig(field="u", kernel_field="log_f"),
        reference=ReferenceConfig(kind="analytic"),
    )


def _poisson32(length=0.1, n_f=41, scales=(1.0, 7.0)):
    return ExperimentConfig(
        preset="poisson32",
        problem=ProblemConfig("neg_laplace_1d", "forward", [[-1.0, 1.0]],
                              GpConfig("sin_pi", 10.0, "matern52", 1.0, length), noise_std=0.01),
        sensors=SensorConfig(n_f=n_f, n_g=2),
        gmm=GmmConfig(n_components=1),
        network=NetworkConfig(10, list(scales), [200]),
        hmc=HmcSection(leapfrog_steps=100, step_size=1e-4),
        estimate=EstimateConfig(field="u", kernel_field="f"),
        reference=ReferenceConfig(kind="mc", n_grid=401, n_mc=500000, cov_stride=None),
    )


def _poisson32_hifreq():
    c = _poisson32(0.03, 101, (1.0, 10.0))
    c.preset = "poisson32_hifreq"
    return c


def _allencahn33():
    return ExperimentConfig(
        preset="allencahn33",
        problem=ProblemConfig("allen_cahn_2d", "forward", [[-1.0, 1.0], [-1.0, 1.0]],
                              GpConfig("sin_pi_2d", 20.0, "squared_exponential", 1.0, 0.1), noise_std=0.01),
        sensors=SensorConfig(n_f=441, n_g=80),
        gmm=GmmConfig(n_components=1),
        network=NetworkConfig(50, [1.0, 5.0], [200]),
        hmc=HmcSection(leapfrog_steps=2000, step_size=5e-6),
        estimate=EstimateConfig(field="u", kernel_field=None),
        reference=ReferenceConfig(kind="mc", n_grid=101, n_mc=100000),
    )


def _elliptic34(length=0.1, n=41, scales=(1.0, 5.0), M=300, delta=3e-5):
    return ExperimentConfig(
        preset="elliptic34",
        problem=ProblemConfig(
            "div_form_1d", "inverse", [[-1.0, 1.0]],
            f=GpConfig("constant", 3.0, "squared_exponential", 0.3, length),
            k=GpConfig("sin_pi", 1.0, "squared_exponential", 0.1, length, 0.5)),
        sensors=SensorConfig(n_f=n, n_u=n),
        data=DataConfig(n_fine=401),
        gmm=GmmConfig(n_components=3, reg=1e-4),
        network=NetworkConfig(10, list(scales), [200]),
        hmc=HmcSection(leapfrog_steps=M, step_size=delta),
        estimate=EstimateConfig(field="k", kernel_field="k_head"),
        reference=ReferenceConfig(kind="analytic"),
    )


def _elliptic34_hifreq():
    c = _elliptic34(0.03, 201, (1.0, 20.0), 2000, 5e-6)
    c.preset = "elliptic34_hifreq"
    return c


PRESETS = {
    "process31": _process31,
    "poisson32": _poisson32,
    "poisson32_hifreq": _poisson32_hifreq,
    "allencahn33": _allencahn33,
    "elliptic34": _elliptic34,
    "elliptic34_hifreq": _elliptic34_hifreq,
    "custom": ExperimentConfig,
}


def _desk(c: ExperimentConfig):
    """Shrink a paper-scale configuration to desk scale."""
    c.scale = "desk"
    c.data.n_snapshots = min(c.data.n_snapshots, 2000)
    c.hmc.n_samples = min(c.hmc.n_samples, 1000)
    c.reference.n_mc = min(c.reference.n_mc, 10000 if len(c.problem.domain) == 1 else 2000)
    c.network.hidden = [max(1, int(w) // 2) for w in c.network.hidden]
    if c.preset == "elliptic34":
        # the regularized inverse likelihood is stiff (largest Hessian eigenvalue 1e11 to 1e12
        # near the MAP); leapfrog is unstable above 2 / sqrt(lambda_max) ~ 2e-6
        c.hmc.step_size = min(c.hmc.step_size, 1e-6)
    return c


def preset_config(name="custom", scale="paper", seed=0):
    if name not in PRESETS:
        raise ValidationError(f"preset: unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    if scale not in ("paper", "desk"):
        raise ValidationError("scale: must be 'paper' or 'desk'")
    c = PRESETS[name]()
    c.seed = int(seed)
    return _desk(c) if scale == "desk" else c


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: ExperimentConfig, overrides):
    """Apply ``["section.key=value", ...]`` (values parsed as JSON when possible)."""
    d = cfg.to_dict()
    for item in overrides or ():
        if "=" not in item:
            raise ValidationError(f"override {item!r}: expected key=value")
        key, val = item.split("=", 1)
        parts = key.strip().split(".")
        node = d
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                if p in node and node[p] is None:
                    node[p] = {}
                else:
                    raise ValidationError(f"{key}: unknown configuration key")
            node = node[p]
        if parts[-1] not in node and not _optional_section(parts):
            raise ValidationError(f"{key}: unknown configuration key")
        node[parts[-1]] = _parse_value(val)
    return ExperimentConfig.from_dict(d)


def _optional_section(parts):
    return len(parts) == 3 and parts[0] == "problem" and parts[1] in ("f", "k")


def load_config(path):
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))

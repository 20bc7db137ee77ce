"""JSON scenario description and model construction.

A scenario file lists bodies with their initial state, world half-spaces,
contact and solver parameters, the time-stepping scheme, and which outputs to
produce. ``Scenario.from_dict(s.to_dict()) == s`` holds for every scenario.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import model as mdl
from .errors import InvalidInputError, ScenarioError
from .geometry import DEFAULT_MARGIN
from .sap import SolverOptions
from .scheme import PRESETS, ProblemOptions, ThetaScheme

BODY_KINDS = ("particle", "free_body", "prismatic", "revolute")
_BODY_PARAMS = {
    "particle": (),
    "free_body": ("inertia",),
    "prismatic": ("axis", "origin", "stiffness", "damping", "rest"),
    "revolute": ("axis", "pivot", "arm", "inertia", "stiffness", "damping", "rest"),
}


def _tuple(x):
    return tuple(float(v) for v in x)


@dataclass(frozen=True)
class MaterialSpec:
    stiffness: float
    dissipation: float = 0.0
    friction: float = 1.0

    def __post_init__(self):
        if not (self.stiffness > 0 and self.dissipation >= 0 and self.friction >= 0):
            raise ScenarioError(f"invalid material {self}")

    def build(self):
        return mdl.Material(self.stiffness, self.dissipation, self.friction)


def _material(d):
    return None if d is None else MaterialSpec(**d)


@dataclass(frozen=True)
class SphereSpec:
    radius: float
    offset: tuple = (0.0, 0.0, 0.0)
    material: MaterialSpec | None = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ScenarioError(f"sphere radius must be positive, got {self.radius}")

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["radius"]), _tuple(d.get("offset", (0, 0, 0))), _material(d.get("material")))


@dataclass(frozen=True)
class BodySpec:
    kind: str
    name: str
    mass: float
    q0: tuple
    v0: tuple
    params: tuple = ()  # sorted (key, value) pairs of kind-specific parameters
    spheres: tuple = ()
    force: tuple = (0.0, 0.0, 0.0)

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        if kind not in BODY_KINDS:
            raise ScenarioError(f"unknown body kind {kind!r}")
        allowed = _BODY_PARAMS[kind]
        extra = set(d.get("params", {})) - set(allowed)
        if extra:
            raise ScenarioError(f"unexpected parameters {sorted(extra)} for {kind}")
        params = []
        for k, v in sorted(d.get("params", {}).items()):
            params.append((k, _tuple(v) if isinstance(v, (list, tuple)) else float(v)))
        return cls(kind, str(d["name"]), float(d["mass"]), _tuple(d["q0"]), _tuple(d["v0"]),
                   tuple(params), tuple(SphereSpec.from_dict(s) for s in d.get("spheres", ())),
                   _tuple(d.get("force", (0, 0, 0))))

    def to_dict(self):
        return {"kind": self.kind, "name": self.name, "mass": self.mass, "q0": list(self.q0),
                "v0": list(self.v0),
                "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params},
                "spheres": [_sphere_dict(s) for s in self.spheres], "force": list(self.force)}

    def build(self):
        spheres = tuple(mdl.Sphere(s.radius, s.offset, s.material.build() if s.material else None)
                        for s in self.spheres)
        p = dict(self.params)
        if self.kind == "particle":
            return mdl.Particle(self.name, self.mass, spheres, self.force)
        if self.kind == "free_body":
            return mdl.FreeBody(self.name, self.mass, p["inertia"], spheres, self.force)
        if self.kind == "prismatic":
            return mdl.PrismaticBody(self.name, self.mass, spheres=spheres, force=self.force, **p)
        return mdl.RevoluteBody(self.name, self.mass, spheres=spheres, force=self.force, **p)


def _sphere_dict(s):
    return {"radius": s.radius, "offset": list(s.offset),
            "material": None if s.material is None else asdict(s.material)}


@dataclass(frozen=True)
class HalfSpaceSpec:
    normal: tuple
    offset: float = 0.0
    material: MaterialSpec | None = None

    @classmethod
    def from_dict(cls, d):
        return cls(_tuple(d["normal"]), float(d.get("offset", 0.0)), _material(d.get("material")))

    def to_dict(self):
        return {"normal": list(self.normal), "offset": self.offset,
                "material": None if self.material is None else asdict(self.material)}


@dataclass(frozen=True)
class ClutterSpec:
    """Spheres dropped on a jittered grid inside an open box of half-width
    ``half_width`` standing on the plane z = 0."""

    count: int = 40
    half_width: float = 0.45
    radius_min: float = 0.04
    radius_max: float = 0.06
    density: float = 1000.0
    height: float = 0.1
    speed: float = 0.1
    material: MaterialSpec | None = None


@dataclass(frozen=True)
class OrderStudySpec:
    schemes: tuple = ("explicit_euler", "symplectic_euler", "midpoint")
    dt_list: tuple = (4e-3, 2e-3, 1e-3, 5e-4)
    duration: float | None = None  # defaults to one oscillator period
    reference: str = "analytic"  # or "finest"


@dataclass(frozen=True)
class OutputSpec:
    trajectory: bool = True
    energy: bool = True
    penetration: bool = True
    slip: bool = True
    solver_stats: bool = True
    figures: bool = True
    order_study: OrderStudySpec | None = None


@dataclass(frozen=True)
class ContactSpec:
    beta: float = 1.0
    sigma: float = 1e-3
    margin: float = DEFAULT_MARGIN
    delassus_norm: str = "trace"
    near_rigid_dissipation: bool = False
    default_material: MaterialSpec = MaterialSpec(1e12, 0.0, 1.0)


@dataclass(frozen=True)
class SolverSpec:
    eps_r: float = 1e-6
    eps_a: float = 1e-16
    line_search: str = "exact"
    max_iters: int = 100
    linear_solver: str = "auto"

    def build(self):
        return SolverOptions(eps_r=self.eps_r, eps_a=self.eps_a, line_search=self.line_search,
                             max_iters=self.max_iters, linear_solver=self.linear_solver)


@dataclass(frozen=True)
class Scenario:
    name: str
    scheme: str = "symplectic_euler"
    dt: float = 1e-3
    duration: float = 1.0
    seed: int = 0
    gravity: tuple = (0.0, 0.0, -9.81)
    bodies: tuple = ()
    half_spaces: tuple = ()
    clutter: ClutterSpec | None = None
    contact: ContactSpec = field(default_factory=ContactSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        if self.scheme not in PRESETS:
            raise ScenarioError(f"unknown scheme {self.scheme!r}")
        if not (self.dt > 0) or not (self.duration >= 0):
            raise ScenarioError("dt must be positive and duration non-negative")

    @property
    def n_steps(self):
        return int(round(self.duration / self.dt))

    def theta_scheme(self, dt=None):
        return ThetaScheme.preset(self.scheme, self.dt if dt is None else dt)

    def problem_options(self):
        c = self.contact
        return ProblemOptions(margin=c.margin, beta=c.beta, sigma=c.sigma,
                              delassus_norm=c.delassus_norm,
                              near_rigid_dissipation=c.near_rigid_dissipation,
                              default_material=c.default_material.build())

    def with_overrides(self, dt=None, seed=None, line_search=None, linear_solver=None, eps_r=None):
        s = self
        if dt is not None:
            s = replace(s, dt=float(dt))
        if seed is not None:
            s = replace(s, seed=int(seed))
        kw = {k: v for k, v in (("line_search", line_search), ("linear_solver", linear_solver),
                                ("eps_r", eps_r)) if v is not None}
        if kw:
            s = replace(s, solver=replace(s.solver, **kw))
        return s

    # serialization
    def to_dict(self):
        o = self.outputs
        return {
            "name": self.name, "scheme": self.scheme, "dt": self.dt, "duration": self.duration,
            "seed": self.seed, "gravity": list(self.gravity),
            "bodies": [b.to_dict() for b in self.bodies],
            "half_spaces": [h.to_dict() for h in self.half_spaces],
            "clutter": None if self.clutter is None else _clutter_dict(self.clutter),
            "contact": {**asdict(replace(self.contact, default_material=None)),
                        "default_material": asdict(self.contact.default_material)},
            "solver": asdict(self.solver),
            "outputs": {**{f.name: getattr(o, f.name) for f in fields(o) if f.name != "order_study"},
                        "order_study": None if o.order_study is None else {
                            **asdict(o.order_study), "schemes": list(o.order_study.schemes),
                            "dt_list": list(o.order_study.dt_list)}},
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls._from_dict(d)
        except ScenarioError:
            raise
        except (KeyError, TypeError, ValueError, InvalidInputError) as exc:
            raise ScenarioError(f"invalid scenario: {exc}") from exc

    @classmethod
    def _from_dict(cls, d):
        if not isinstance(d, dict):
            raise ScenarioError("scenario must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ScenarioError(f"unknown scenario keys {sorted(unknown)}")
        c = dict(d.get("contact") or {})
        if "default_material" in c:
            c["default_material"] = MaterialSpec(**c["default_material"])
        o = dict(d.get("outputs") or {})
        if o.get("order_study") is not None:
            os_ = dict(o["order_study"])
            for k in ("schemes", "dt_list"):
                if k in os_:
                    os_[k] = tuple(os_[k])
            o["order_study"] = OrderStudySpec(**os_)
        cl = d.get("clutter")
        if cl is not None:
            cl = dict(cl)
            cl["material"] = _material(cl.get("material"))
            cl = ClutterSpec(**cl)
        return cls(
            name=str(d["name"]), scheme=d.get("scheme", "symplectic_euler"),
            dt=float(d.get("dt", 1e-3)), duration=float(d.get("duration", 1.0)),
            seed=int(d.get("seed", 0)), gravity=_tuple(d.get("gravity", (0.0, 0.0, -9.81))),
            bodies=tuple(BodySpec.from_dict(b) for b in d.get("bodies", ())),
            half_spaces=tuple(HalfSpaceSpec.from_dict(h) for h in d.get("half_spaces", ())),
            clutter=cl, contact=ContactSpec(**c), solver=SolverSpec(**(d.get("solver") or {})),
            outputs=OutputSpec(**o),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"malformed JSON: {exc}") from exc
        return cls.from_dict(d)

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
        return cls.from_json(text)


def _clutter_dict(c):
    d = asdict(c)
    d["material"] = None if c.material is None else asdict(c.material)
    return d


def clutter_bodies(spec, seed):
    """Free spheres on a jittered grid above the floor, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    r_max = spec.radius_max
    pitch = 2.0 * r_max + 0.02
    per_row = max(1, int((2 * spec.half_width - 2 * r_max) // pitch) + 1)
    bodies = []
    for i in range(spec.count):
        layer, rem = divmod(i, per_row * per_row)
        ix, iy = divmod(rem, per_row)
        jitter = rng.uniform(-0.005, 0.005, 3)
        x = -spec.half_width + r_max + ix * pitch + jitter[0]
        y = -spec.half_width + r_max + iy * pitch + jitter[1]
        z = spec.height + r_max + layer * pitch + jitter[2]
        r = rng.uniform(spec.radius_min, spec.radius_max)
        m = spec.density * 4.0 / 3.0 * np.pi * r ** 3
        I = 0.4 * m * r * r
        v = rng.normal(0.0, spec.speed, 3)
        w = rng.normal(0.0, spec.speed / r, 3)
        bodies.append(BodySpec("free_body", f"sphere{i}", float(m),
                               (float(x), float(y), float(z), 1.0, 0.0, 0.0, 0.0),
                               tuple(float(a) for a in np.concatenate([v, w])),
                               (("inertia", (I, I, I)),),
                               (SphereSpec(float(r), material=spec.material),)))
    walls = (HalfSpaceSpec((0.0, 0.0, 1.0), 0.0, spec.material),
             HalfSpaceSpec((1.0, 0.0, 0.0), -spec.half_width, spec.material),
             HalfSpaceSpec((-1.0, 0.0, 0.0), -spec.half_width, spec.material),
             HalfSpaceSpec((0.0, 1.0, 0.0), -spec.half_width, spec.material),
             HalfSpaceSpec((0.0, -1.0, 0.0), -spec.half_width, spec.material))
    return bodies, walls


def expand(scenario):
    """(bodies, half_spaces) including generated clutter."""
    bodies, halves = list(scenario.bodies), list(scenario.half_spaces)
    if scenario.clutter is not None:
        b, h = clutter_bodies(scenario.clutter, scenario.seed)
        bodies += b
        halves += h
    return bodies, halves


def build(scenario):
    """(SystemModel, GeneralizedState) for a scenario."""
    bodies, halves = expand(scenario)
    try:
        model = mdl.SystemModel(
            [b.build() for b in bodies],
            [mdl.HalfSpace(h.normal, h.offset, h.material.build() if h.material else None)
             for h in halves],
            scenario.gravity)
        q0 = np.concatenate([b.q0 for b in bodies]) if bodies else np.zeros(0)
        v0 = np.concatenate([b.v0 for b in bodies]) if bodies else np.zeros(0)
        q0 = mdl.normalize_positions(model, model.check_q(q0))
        v0 = model.check_v(v0)
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid scenario {scenario.name!r}: {exc}") from exc
    return model, mdl.GeneralizedState(q0, v0, 0.0)


def shipped(name):
    """Path of a scenario file bundled with the package."""
    return Path(__file__).parent / "scenarios" / f"{name}.json"

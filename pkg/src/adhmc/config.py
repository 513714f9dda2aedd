"""Experiment configuration: a validated YAML key-value tree.

Schema (defaults in brackets; unknown keys anywhere are rejected):

.. code-block:: yaml

    kind: sample            # sample | error-sweep | converge | diagnose | advise
    seed: 42                # mandatory 64-bit integer; no wall-clock seeding
    model:
      potential: gauss-iso  # gauss-iso | gauss-aniso | logistic-ridge
      kinetic: kin-gauss    # kin-gauss | kin-logcosh
      dim: 2
      kappa: 10.0           # gauss-aniso condition number
      n_components: 100     # logistic-ridge component count
      ridge: 0.1            # logistic-ridge per-component ridge weight
      eps: 0.5              # kin-logcosh asymmetry weight
      shift: 1.0            # kin-logcosh shift
      centered: false       # mean-center the logcosh kinetic
    oracle:
      kind: exact           # exact | minibatch
      batch: 10             # required for minibatch
    sampler:
      algorithm: sghmc      # sghmc | adhmc
      eta: 0.1
      steps: 10
      n_steps: 1000
    sweep:
      etas: [0.02, 0.04, 0.08, 0.16]
      samples: 10000
    converge:
      chains: 10000
      horizon: 12
      offset: 3.0
      reference_draws: 1000000
      sigma_v_reading: squared    # squared | first_power
    advise:
      target_accept: 0.9
      exception_mass: 0.1
    diagnose:
      draws: 100000
      trials: 2000
    report:
      figures: true

Validation collects *all* problems before raising, each tagged with the
configuration path of the offending key.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import yaml

from .errors import ConfigurationError
from .integrators import DEFAULT_ETAS, LeapfrogConfig
from .oracles import exact_oracle, minibatch_oracle
from .samplers import SamplerConfig
from .zoo import KINETIC_IDS, POTENTIAL_IDS, make_kinetic, make_potential

KINDS = ("sample", "error-sweep", "converge", "diagnose", "advise")


@dataclass(frozen=True)
class ModelSpec:
    potential: str = "gauss-iso"
    kinetic: str = "kin-gauss"
    dim: int = 1
    kappa: float = 10.0
    n_components: int = 100
    ridge: float = 0.1
    eps: float = 0.5
    shift: float = 1.0
    centered: bool = False


@dataclass(frozen=True)
class OracleSpec:
    kind: str = "exact"
    batch: Optional[int] = None


@dataclass(frozen=True)
class SamplerSpec:
    algorithm: str = "sghmc"
    eta: float = 0.1
    steps: int = 10
    n_steps: int = 1000


@dataclass(frozen=True)
class SweepSpec:
    etas: tuple = DEFAULT_ETAS
    samples: int = 10_000


@dataclass(frozen=True)
class ConvergeSpec:
    chains: int = 10_000
    horizon: int = 12
    offset: float = 3.0
    reference_draws: int = 1_000_000
    sigma_v_reading: str = "squared"


@dataclass(frozen=True)
class AdviseSpec:
    target_accept: float = 0.9
    exception_mass: float = 0.1


@dataclass(frozen=True)
class DiagnoseSpec:
    draws: int = 100_000
    trials: int = 2000


@dataclass(frozen=True)
class ReportSpec:
    figures: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    model: ModelSpec = ModelSpec()
    oracle: OracleSpec = OracleSpec()
    sampler: SamplerSpec = SamplerSpec()
    sweep: SweepSpec = SweepSpec()
    converge: ConvergeSpec = ConvergeSpec()
    advise: AdviseSpec = AdviseSpec()
    diagnose: DiagnoseSpec = DiagnoseSpec()
    report: ReportSpec = ReportSpec()

    def build_potential(self):
        m = self.model
        return make_potential(m.potential, m.dim, kappa=m.kappa,
                              n_components=m.n_components, ridge=m.ridge)

    def build_kinetic(self):
        m = self.model
        return make_kinetic(m.kinetic, m.dim, eps=m.eps, shift=m.shift,
                            centered=m.centered)

    def build_oracle(self, potential, rng):
        if self.oracle.kind == "exact":
            return exact_oracle(potential)
        return minibatch_oracle(potential, self.oracle.batch, rng)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(
            leapfrog=LeapfrogConfig(eta=self.sampler.eta, steps=self.sampler.steps),
            algorithm=self.sampler.algorithm,
            seed=self.seed,
            oracle_spec=self.oracle.kind if self.oracle.kind == "exact"
            else f"minibatch(B={self.oracle.batch})",
        )

    def to_mapping(self) -> dict:
        """A plain mapping that parses back to an equal configuration."""
        out = {
            "kind": self.kind,
            "seed": self.seed,
            "model": asdict(self.model),
            "oracle": {"kind": self.oracle.kind},
            "sampler": asdict(self.sampler),
            "sweep": {"etas": list(self.sweep.etas), "samples": self.sweep.samples},
            "converge": asdict(self.converge),
            "advise": asdict(self.advise),
            "diagnose": asdict(self.diagnose),
            "report": asdict(self.report),
        }
        if self.oracle.batch is not None:
            out["oracle"]["batch"] = self.oracle.batch
        return out


class _Checker:
    """Accumulates validation problems with their configuration paths."""

    def __init__(self):
        self.problems: list = []

    def fail(self, path: str, message: str):
        self.problems.append(f"{path}: {message}")

    def section(self, mapping: dict, path: str, allowed: dict) -> dict:
        """Reject unknown keys; return the section content (defaults applied)."""
        if mapping is None:
            return {}
        if not isinstance(mapping, dict):
            self.fail(path, "must be a mapping")
            return {}
        for key in mapping:
            if key not in allowed:
                self.fail(f"{path}.{key}" if path else str(key), "unknown key")
        return mapping

    def value(self, mapping: dict, path: str, key: str, kind, default,
              check=None, required: bool = False):
        full = f"{path}.{key}" if path else key
        if key not in mapping or mapping[key] is None:
            if required:
                self.fail(full, "missing required key")
            return default
        raw = mapping[key]
        if kind is float and isinstance(raw, int) and not isinstance(raw, bool):
            raw = float(raw)
        if kind is int and isinstance(raw, bool):
            self.fail(full, "must be an integer")
            return default
        if not isinstance(raw, kind):
            self.fail(full, f"must be of type {kind.__name__}")
            return default
        if check is not None:
            problem = check(raw)
            if problem:
                self.fail(full, problem)
                return default
        return raw


def _choice(options):
    def check(v):
        if v not in options:
            return f"must be one of {', '.join(options)}"
        return None
    return check


def _positive(v):
    return None if v > 0 else "must be > 0"


def _at_least_one(v):
    return None if v >= 1 else "must be >= 1"


def _unit_interval(v):
    return None if 0.0 < v < 1.0 else "must lie strictly between 0 and 1"


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate a configuration document.

    Raises :class:`ConfigurationError` listing every problem found, each named
    with the offending configuration path.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError([f"(document): not valid YAML: {exc}"]) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError(["(document): top level must be a mapping"])

    c = _Checker()
    top = c.section(raw, "", {
        "kind": 1, "seed": 1, "model": 1, "oracle": 1, "sampler": 1,
        "sweep": 1, "converge": 1, "advise": 1, "diagnose": 1, "report": 1,
    })

    kind = c.value(top, "", "kind", str, None, _choice(KINDS), required=True)
    seed = c.value(top, "", "seed", int, None,
                   lambda v: None if -2**63 <= v < 2**64 else "must fit in 64 bits",
                   required=True)

    msec = c.section(top.get("model"), "model", {
        "potential": 1, "kinetic": 1, "dim": 1, "kappa": 1, "n_components": 1,
        "ridge": 1, "eps": 1, "shift": 1, "centered": 1,
    })
    model = ModelSpec(
        potential=c.value(msec, "model", "potential", str, "gauss-iso", _choice(POTENTIAL_IDS)),
        kinetic=c.value(msec, "model", "kinetic", str, "kin-gauss", _choice(KINETIC_IDS)),
        dim=c.value(msec, "model", "dim", int, 1, _at_least_one),
        kappa=c.value(msec, "model", "kappa", float, 10.0,
                      lambda v: None if v >= 1 else "must be >= 1"),
        n_components=c.value(msec, "model", "n_components", int, 100, _at_least_one),
        ridge=c.value(msec, "model", "ridge", float, 0.1, _positive),
        eps=c.value(msec, "model", "eps", float, 0.5,
                    lambda v: None if v >= 0 else "must be >= 0"),
        shift=c.value(msec, "model", "shift", float, 1.0),
        centered=c.value(msec, "model", "centered", bool, False),
    )

    osec = c.section(top.get("oracle"), "oracle", {"kind": 1, "batch": 1})
    oracle_kind = c.value(osec, "oracle", "kind", str, "exact", _choice(("exact", "minibatch")))
    batch = c.value(osec, "oracle", "batch", int, None, _at_least_one)
    if oracle_kind == "minibatch":
        if batch is None:
            c.fail("oracle.batch", "required when oracle.kind is minibatch")
        elif batch > model.n_components:
            c.fail("oracle.batch", f"must be <= model.n_components = {model.n_components}")
        if model.potential != "logistic-ridge":
            c.fail("oracle.kind", "minibatch requires a component-decomposed potential "
                                  "(logistic-ridge)")
    oracle = OracleSpec(kind=oracle_kind, batch=batch)

    ssec = c.section(top.get("sampler"), "sampler", {
        "algorithm": 1, "eta": 1, "steps": 1, "n_steps": 1,
    })
    sampler = SamplerSpec(
        algorithm=c.value(ssec, "sampler", "algorithm", str, "sghmc", _choice(("sghmc", "adhmc"))),
        eta=c.value(ssec, "sampler", "eta", float, 0.1, _positive),
        steps=c.value(ssec, "sampler", "steps", int, 10, _at_least_one),
        n_steps=c.value(ssec, "sampler", "n_steps", int, 1000, _at_least_one),
    )

    wsec = c.section(top.get("sweep"), "sweep", {"etas": 1, "samples": 1})
    etas_raw = wsec.get("etas", list(DEFAULT_ETAS))
    if not (isinstance(etas_raw, (list, tuple)) and len(etas_raw) >= 3
            and all(isinstance(e, (int, float)) and not isinstance(e, bool)
                    and 0 < float(e) <= 0.5 for e in etas_raw)):
        c.fail("sweep.etas", "must be a list of at least 3 step sizes in (0, 0.5]")
        etas_raw = list(DEFAULT_ETAS)
    sweep = SweepSpec(
        etas=tuple(sorted(float(e) for e in etas_raw)),
        samples=c.value(wsec, "sweep", "samples", int, 10_000,
                        lambda v: None if v >= 1000 else "must be >= 1000"),
    )

    vsec = c.section(top.get("converge"), "converge", {
        "chains": 1, "horizon": 1, "offset": 1, "reference_draws": 1, "sigma_v_reading": 1,
    })
    converge = ConvergeSpec(
        chains=c.value(vsec, "converge", "chains", int, 10_000,
                       lambda v: None if v >= 100 else "must be >= 100"),
        horizon=c.value(vsec, "converge", "horizon", int, 12,
                        lambda v: None if v >= 3 else "must be >= 3"),
        offset=c.value(vsec, "converge", "offset", float, 3.0),
        reference_draws=c.value(vsec, "converge", "reference_draws", int, 1_000_000,
                                lambda v: None if v >= 10_000 else "must be >= 10000"),
        sigma_v_reading=c.value(vsec, "converge", "sigma_v_reading", str, "squared",
                                _choice(("squared", "first_power"))),
    )

    asec = c.section(top.get("advise"), "advise", {"target_accept": 1, "exception_mass": 1})
    advise = AdviseSpec(
        target_accept=c.value(asec, "advise", "target_accept", float, 0.9, _unit_interval),
        exception_mass=c.value(asec, "advise", "exception_mass", float, 0.1, _unit_interval),
    )

    dsec = c.section(top.get("diagnose"), "diagnose", {"draws": 1, "trials": 1})
    diagnose = DiagnoseSpec(
        draws=c.value(dsec, "diagnose", "draws", int, 100_000,
                      lambda v: None if v >= 1000 else "must be >= 1000"),
        trials=c.value(dsec, "diagnose", "trials", int, 2000,
                       lambda v: None if v >= 100 else "must be >= 100"),
    )

    rsec = c.section(top.get("report"), "report", {"figures": 1})
    report = ReportSpec(figures=c.value(rsec, "report", "figures", bool, True))

    if c.problems:
        raise ConfigurationError(sorted(c.problems))
    return ExperimentConfig(
        kind=kind, seed=seed, model=model, oracle=oracle, sampler=sampler,
        sweep=sweep, converge=converge, advise=advise, diagnose=diagnose,
        report=report,
    )


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(config: ExperimentConfig) -> str:
    """Canonical YAML echo of a configuration (round-trips through parse)."""
    return yaml.safe_dump(config.to_mapping(), sort_keys=True)

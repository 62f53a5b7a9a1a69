"""Experiment configuration: JSON in ordinary units, validated, defaults filled."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass

from .cavity import CavityParams, ReadoutModel, calibrate_flip_probability
from .engine import NoiseModel
from .hyperfine import HyperfineParams

EXPERIMENTS = (
    "spectrum",
    "readout",
    "rabi",
    "decouple",
    "resonances",
    "ramsey",
    "echo",
    "teleport",
    "storage",
    "cnot",
    "bell",
    "range",
)


class ConfigError(ValueError):
    pass


DEFAULT_CAVITY = {
    "g_GHz": 5.6,
    "kappa_GHz": 33.0,
    "kappa_wg_GHz": None,  # None = critical coupling, kappa/2
    "gamma_GHz": 0.1,
    "delta_kappa": 0.25,  # cavity-atom detuning in units of kappa
    "zeeman_splitting_GHz": None,
}

DEFAULT_HYPERFINE = [{"omega_l_MHz": 2.0, "A_par_MHz": 0.70, "A_perp_MHz": -0.35}]

DEFAULT_READOUT = {
    "mean_photons_bright": 10.0,
    "dark_rate": 0.02,
    "flip_per_photon": None,  # None = calibrate to target_fidelity
    "target_fidelity": 0.92,
    "threshold": 1,
    "duration_us": 13.0,
}

DEFAULT_NOISE = {
    "T2_anchor_us": 603.0,
    "T2_anchor_N": 16,
    "scaling_exponent": 2 / 3,
    "stretch_p": 1.0,
    "electron_T1_s": None,  # None = no relaxation
    "nuclear_T2_star_ms": 2.0,
    "nuclear_T2_s": 0.2,
    "mw_rabi_MHz": 80.0,
    "readout": DEFAULT_READOUT,
}

# per-experiment settings and their defaults
DEFAULT_PARAMS = {
    "spectrum": {},
    "readout": {"shots": 100000},
    "rabi": {"t_max_ns": 50.0, "points": 201, "damped": False},
    "decouple": {"n_pulses": 16, "tau_min_ns": 100.0, "tau_max_ns": 150.0, "points": 201},
    "resonances": {"n_pulses": 16, "window_ns": [50.0, 500.0], "step_ns": 0.25},
    "ramsey": {"t_max_us": 3.0, "points": 601, "with_T2_star": True},
    "echo": {"n_pulses": 16, "t_max_ms": 2.0, "points": 201},
    "teleport": {"herald_error": 0.0, "phase_drift": 0.0, "inputs": ["e", "l", "+", "-", "+i", "-i"]},
    "storage": {"storage_time_us": 20.0, "inputs": ["+", "-"], "with_readout": False},
    "cnot": {},
    "bell": {"cnot": "auto", "werner_p": None, "shots": None, "correct": True, "nucleus": "down"},
    "range": {"memory_time_ms": 2.5, "fiber_speed": 2e8},
}

TOP_LEVEL = ("experiment", "cavity", "hyperfine", "noise", "params", "sweep", "seed", "output")


@dataclass
class ExperimentConfig:
    experiment: str
    cavity: dict
    hyperfine: list
    noise: dict | str
    params: dict
    sweep: dict | None = None
    seed: int = 0
    output: str = ""

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "cavity": copy.deepcopy(self.cavity),
            "hyperfine": copy.deepcopy(self.hyperfine),
            "noise": copy.deepcopy(self.noise),
            "params": copy.deepcopy(self.params),
            "sweep": copy.deepcopy(self.sweep),
            "seed": self.seed,
            "output": self.output,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    # physics objects

    def cavity_params(self) -> CavityParams:
        c = self.cavity
        kappa = c["kappa_GHz"]
        return CavityParams.from_ghz(
            c["g_GHz"],
            kappa,
            c["gamma_GHz"],
            delta=c["delta_kappa"] * kappa,
            kappa_wg=c["kappa_wg_GHz"],
            zeeman_splitting=c["zeeman_splitting_GHz"],
        )

    def hyperfine_params(self) -> list[HyperfineParams]:
        return [HyperfineParams.from_mhz(h["omega_l_MHz"], h["A_par_MHz"], h["A_perp_MHz"]) for h in self.hyperfine]

    @property
    def ideal(self) -> bool:
        return self.noise == "ideal"

    def noise_model(self) -> NoiseModel | None:
        if self.ideal:
            return None
        n = self.noise
        r = n["readout"]
        model = ReadoutModel(
            mean_photons_bright=r["mean_photons_bright"],
            dark_rate=r["dark_rate"],
            flip_per_photon=r["flip_per_photon"] or 0.0,
            threshold=r["threshold"],
            duration=r["duration_us"] * 1e-6,
        )
        if r["flip_per_photon"] is None:
            model = calibrate_flip_probability(model, r["target_fidelity"])
        t1 = n["electron_T1_s"]
        return NoiseModel.anchored(
            n["T2_anchor_us"] * 1e-6,
            n["T2_anchor_N"],
            n["scaling_exponent"],
            stretch_p=n["stretch_p"],
            electron_T1=math.inf if t1 is None else t1,
            nuclear_T2_star=n["nuclear_T2_star_ms"] * 1e-3,
            nuclear_T2=n["nuclear_T2_s"],
            mw_rabi=2 * math.pi * n["mw_rabi_MHz"] * 1e6,
            readout=model,
        )


def _merge(defaults: dict, given, path: str) -> dict:
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown field {path}.{unknown[0]}; valid: {sorted(defaults)}")
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(defaults[k], dict):
            out[k] = _merge(defaults[k], v, f"{path}.{k}")
        else:
            out[k] = v
    return out


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError(f"unknown field {unknown[0]}; valid: {list(TOP_LEVEL)}")
    exp = data.get("experiment", "bell")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; valid: {list(EXPERIMENTS)}")
    cavity = _merge(DEFAULT_CAVITY, data.get("cavity"), "cavity")
    hyper = data.get("hyperfine")
    if hyper is None:
        hyper = copy.deepcopy(DEFAULT_HYPERFINE)
    elif not isinstance(hyper, list) or not hyper:
        raise ConfigError("hyperfine: expected a non-empty list of nuclei")
    else:
        hyper = [_merge(DEFAULT_HYPERFINE[0], h, f"hyperfine.{i}") for i, h in enumerate(hyper)]
    noise = data.get("noise")
    if noise != "ideal":
        if isinstance(noise, str):
            raise ConfigError(f"noise: expected 'ideal' or an object, got {noise!r}")
        noise = _merge(DEFAULT_NOISE, noise, "noise")
    params = _merge(DEFAULT_PARAMS[exp], data.get("params"), "params")
    sweep = data.get("sweep")
    seed = data.get("seed", 0)
    if seed is None:
        if noise != "ideal":
            raise ConfigError("seed must be present when noise is not 'ideal'")
        seed = 0
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    output = data.get("output") or f"node-sim-out/{exp}"
    if not isinstance(output, str):
        raise ConfigError("output must be a path prefix string")
    cfg = ExperimentConfig(exp, cavity, hyper, noise, params, sweep, seed, output)
    if sweep is not None:
        _check_sweep(cfg)
    validate(cfg)
    return cfg


def load_config(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return from_dict(data)


def validate(cfg: ExperimentConfig) -> None:
    """Build the physics objects once so their invariants are checked early."""
    try:
        cfg.cavity_params()
        cfg.hyperfine_params()
        cfg.noise_model()
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None


def _check_sweep(cfg: ExperimentConfig) -> None:
    s = cfg.sweep
    if not isinstance(s, dict) or set(s) != {"path", "values"}:
        raise ConfigError("sweep must be an object with exactly 'path' and 'values'")
    if not isinstance(s["values"], list) or not s["values"]:
        raise ConfigError("sweep.values must be a non-empty list")
    d = cfg.to_dict()
    d["sweep"] = None
    get_path(d, s["path"])


def _walk(data, parts, path):
    node = data
    for p in parts:
        if isinstance(node, list):
            try:
                node = node[int(p)]
            except (ValueError, IndexError):
                raise ConfigError(f"path {path!r} does not resolve at {p!r}") from None
        elif isinstance(node, dict) and p in node:
            node = node[p]
        else:
            raise ConfigError(f"path {path!r} does not resolve at {p!r}")
    return node


def get_path(data: dict, path: str):
    return _walk(data, path.split("."), path)


def set_path(data: dict, path: str, value) -> None:
    parts = path.split(".")
    parent = _walk(data, parts[:-1], path)
    last = parts[-1]
    if isinstance(parent, list):
        try:
            parent[int(last)] = value
        except (ValueError, IndexError):
            raise ConfigError(f"path {path!r} does not resolve at {last!r}") from None
    elif isinstance(parent, dict) and last in parent:
        parent[last] = value
    else:
        raise ConfigError(f"path {path!r} does not resolve at {last!r}")


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply 'path=value' overrides to a raw config dict (defaults filled first)."""
    out = from_dict(data).to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like path=value")
        path, value = item.split("=", 1)
        if path in ("experiment", "seed", "output", "noise", "sweep"):
            out[path] = parse_value(value)
            if path == "experiment":
                if out[path] not in EXPERIMENTS:
                    raise ConfigError(f"unknown experiment {out[path]!r}; valid: {list(EXPERIMENTS)}")
                out["params"] = copy.deepcopy(DEFAULT_PARAMS[out[path]])
            if path == "noise" and isinstance(out[path], dict):
                out[path] = _merge(DEFAULT_NOISE, out[path], "noise")
            continue
        if path.startswith("noise.") and out["noise"] == "ideal":
            out["noise"] = copy.deepcopy(DEFAULT_NOISE)
        set_path(out, path, parse_value(value))
    return out


def sweep_children(cfg: ExperimentConfig) -> list[ExperimentConfig]:
    """One config per sweep value, outputs suffixed with the child index."""
    if cfg.sweep is None:
        return [cfg]
    out = []
    for i, v in enumerate(cfg.sweep["values"]):
        d = cfg.to_dict()
        d["sweep"] = None
        set_path(d, cfg.sweep["path"], v)
        d["output"] = f"{cfg.output}_{i:03d}"
        out.append(from_dict(d))
    return out

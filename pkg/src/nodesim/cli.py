"""``node-sim`` command line: config ingestion, dispatch, sweeps and file output."""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np

from . import cavity, engine, hyperfine, protocols
from .config import ConfigError, ExperimentConfig, apply_overrides, from_dict, sweep_children
from .core import QuantumError, TWO_PI
from .sequence import PulseSequence, XY8Block, decoupling_sequence


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.0.0"


def round9(obj):
    """Recursively round floats to 9 significant digits for stable JSON."""
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.9g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round9(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return round9(obj.tolist())
    return obj


def dump_json(obj) -> str:
    return json.dumps(round9(obj), indent=2, sort_keys=True) + "\n"


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(f"{float(x):.9g}" for x in row) for row in rows]
    return "\n".join(lines) + "\n"


def _config_hash(cfg: ExperimentConfig) -> str:
    """Hash of the physics-relevant config; the output prefix is left out."""
    d = cfg.to_dict()
    d.pop("output")
    return protocols.params_hash(d)


def _protocol_json(name, cfg, herald_rate, fidelity, fidelity_err=0.0, concurrence=None, concurrence_err=None, **extra):
    out = {
        "protocol": name,
        "params_hash": _config_hash(cfg),
        "shots": extra.pop("shots", None),
        "herald_rate": herald_rate,
        "fidelity": fidelity,
        "fidelity_err": fidelity_err,
        "concurrence": concurrence,
        "concurrence_err": concurrence_err,
        "corrected": extra.pop("corrected", False),
    }
    out.update(extra)
    return out


# experiments: each returns {suffix: text}


def _spectrum(cfg: ExperimentConfig) -> dict:
    p = cfg.cavity_params()
    return {"spectrum.csv": cavity.spectrum_csv(p), "spectrum.json": cavity.spectrum_sidecar(p)}


def _readout(cfg: ExperimentConfig) -> dict:
    noise = cfg.noise_model() or engine.NoiseModel()
    model = noise.readout
    shots = int(cfg.params["shots"])
    analytic = cavity.readout_confusion_matrix(model)
    mc = cavity.monte_carlo_confusion(model, shots, cfg.seed)
    sigma = np.sqrt(np.clip(analytic * (1 - analytic), 1e-300, None) / shots)
    target = cfg.noise["readout"]["target_fidelity"] if not cfg.ideal else cavity.readout_fidelity(model)
    base = cavity.ReadoutModel(
        mean_photons_bright=model.mean_photons_bright,
        dark_rate=model.dark_rate,
        threshold=model.threshold,
        duration=model.duration,
    )
    out = {
        "model": {
            "mean_photons_bright": model.mean_photons_bright,
            "dark_rate": model.dark_rate,
            "flip_per_photon": model.flip_per_photon,
            "threshold": model.threshold,
            "duration_us": model.duration * 1e6,
        },
        "analytic_confusion": analytic,
        "monte_carlo_confusion": mc,
        "max_deviation_sigma": float(np.max(np.abs(mc - analytic) / sigma)),
        "analytic_fidelity": cavity.readout_fidelity(model),
        "monte_carlo_fidelity": float((mc[0, 0] + mc[1, 1]) / 2),
        "shots": shots,
    }
    if 0 < target < 1 and model.mean_photons_bright > 0:
        try:
            out["calibrated_flip_analytic"] = cavity.calibrate_flip_probability(base, target).flip_per_photon
            out["calibrated_flip_monte_carlo"] = cavity.calibrate_flip_monte_carlo(base, target, shots, cfg.seed)
            out["target_fidelity"] = target
        except ValueError as exc:
            out["calibration_error"] = str(exc)
    return {"readout.json": dump_json(out)}


def _rabi(cfg: ExperimentConfig) -> dict:
    noise = cfg.noise_model() or engine.NoiseModel()
    p = cfg.params
    t = np.linspace(0, p["t_max_ns"] * 1e-9, int(p["points"]))
    sig = engine.rabi_trace(noise, t, damped=bool(p["damped"]) and not cfg.ideal)
    return {"rabi.csv": engine.traces_csv(t, sig)}


def _register_start(n_nuclei: int):
    from .core import DensityMatrix

    e = np.full((2, 2), 0.5, dtype=complex)
    m = e
    for _ in range(n_nuclei):
        m = np.kron(m, np.eye(2) / 2)
    return DensityMatrix([2] * (n_nuclei + 1), m)


def _decouple(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    nuclei = cfg.hyperfine_params()
    noise = cfg.noise_model()
    n = int(p["n_pulses"])
    taus = np.linspace(p["tau_min_ns"] * 1e-9, p["tau_max_ns"] * 1e-9, int(p["points"]))
    start = _register_start(len(nuclei))
    sx = np.kron(np.array([[0, 1], [1, 0]]), np.eye(2 ** len(nuclei)))
    rows = []
    for tau in taus:
        if n % 8 == 0:
            seq = PulseSequence((XY8Block(n // 8, tau),))
        else:
            seq = PulseSequence(tuple(decoupling_sequence(n, tau)))
        rho = engine.simulate_sequence(seq, start, nuclei, noise)
        rows.append((tau * 1e9, rho.expect(sx)))
    return {"decouple.csv": _csv(["tau_ns", "signal"], rows)}


def _resonances(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    nuclei = cfg.hyperfine_params()
    lo, hi = (x * 1e-9 for x in p["window_ns"])
    step = p["step_ns"] * 1e-9
    n = int(p["n_pulses"])
    dips = hyperfine.find_resonances_numeric(nuclei, (lo, hi), n, step=step)
    taus = np.linspace(lo, hi, int(round((hi - lo) / step)) + 1)
    sig = hyperfine.coherence_signal(nuclei, taus, n)
    predicted = []
    for j, nuc in enumerate(nuclei):
        k = 0
        while (t := hyperfine.resonance_time(k, nuc)) <= hi:
            if t >= lo:
                predicted.append({"nucleus": j, "k": k, "tau_ns": t * 1e9})
            k += 1
    summary = {"n_pulses": n, "dips": [{"tau_ns": d.tau * 1e9, "tau_min_ns": d.tau_min * 1e9, "depth": d.depth} for d in dips], "predicted": predicted}
    return {
        "resonances.csv": _csv(["tau_ns", "tau_min_ns", "depth"], [(d.tau * 1e9, d.tau_min * 1e9, d.depth) for d in dips]),
        "resonances_trace.csv": _csv(["tau_ns", "signal"], zip(taus * 1e9, sig)),
        "resonances.json": dump_json(summary),
    }


def _ramsey(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    nuc = cfg.hyperfine_params()[0]
    noise = cfg.noise_model()
    t2s = noise.nuclear_T2_star if (noise is not None and p["with_T2_star"]) else None
    t = np.linspace(0, p["t_max_us"] * 1e-6, int(p["points"]))
    out, summary = {}, {}
    for e in ("up", "down"):
        sig = hyperfine.ramsey_signal(nuc, e, t, t2s)
        out[f"ramsey_{e}.csv"] = engine.traces_csv(t, sig)
        summary[e] = {
            "extracted_MHz": hyperfine.extract_frequency(t, sig) / TWO_PI / 1e6,
            "expected_MHz": hyperfine.eigenfrequency(nuc, e) / TWO_PI / 1e6,
        }
    out["ramsey.json"] = dump_json(summary)
    return out


def _echo(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    noise = cfg.noise_model() or engine.NoiseModel()
    n = int(p["n_pulses"])
    t = np.linspace(0, p["t_max_ms"] * 1e-3, int(p["points"]))
    sig = np.ones_like(t) if cfg.ideal else engine.decay_envelope(noise, n, t)
    info = {"n_pulses": n, "T2_us": None if cfg.ideal else engine.coherence_time(noise, n) * 1e6}
    return {"echo.csv": engine.traces_csv(t, sig), "echo.json": dump_json(info)}


def _teleport(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    cav = None if cfg.ideal else cfg.cavity_params()
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(p["inputs"]))
    results = []
    for name, s in zip(p["inputs"], seeds):
        rec = protocols.teleport_photon(
            protocols.TimeBinQubit.cardinal(name),
            cav,
            seed=s,
            herald_error=p["herald_error"],
            phase_drift=p["phase_drift"],
        )
        results.append(
            {
                "input": name,
                "detector": rec.detector,
                "frame_correction": rec.applied_frame_correction,
                "fidelity": rec.fidelity,
                "herald_rate": rec.success_probability,
                "branches": rec.branch_probabilities,
            }
        )
    fids = [r["fidelity"] for r in results]
    body = _protocol_json(
        "teleport",
        cfg,
        float(np.mean([r["herald_rate"] for r in results])),
        float(np.mean(fids)),
        float(np.std(fids) / math.sqrt(len(fids))) if len(fids) > 1 else 0.0,
        results=results,
    )
    return {"teleport.json": dump_json(body)}


def _storage(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    noise = cfg.noise_model()
    t = p["storage_time_us"] * 1e-6
    fids = {}
    for name in p["inputs"]:
        _, f = protocols.heralded_storage(
            protocols.TimeBinQubit.cardinal(name), t, noise, seed=cfg.seed, with_readout=bool(p["with_readout"])
        )
        fids[name] = f
    vals = list(fids.values())
    body = _protocol_json(
        "storage",
        cfg,
        0.25 if cfg.ideal else None,
        float(np.mean(vals)),
        float(np.std(vals) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0,
        storage_time_us=p["storage_time_us"],
        per_input=fids,
        corrected=not bool(p["with_readout"]),
    )
    return {"storage.json": dump_json(body)}


def _cnot(cfg: ExperimentConfig) -> dict:
    gate = hyperfine.synthesize_cnot(cfg.hyperfine_params()[0])
    d = gate.to_dict()
    d["max_abs_deviation"] = gate.max_abs_deviation()
    d["duration_us"] = gate.duration * 1e6
    return {"cnot.json": dump_json(d)}


def _bell(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    nuclei = cfg.hyperfine_params()
    cnot = p["cnot"]
    if cnot == "auto":
        cnot = "ideal" if cfg.ideal else "synthesized"
    res = protocols.bell_protocol(
        nuclei[0],
        cfg.noise_model(),
        seed=cfg.seed,
        cnot=cnot,
        werner_p=p["werner_p"],
        shots=p["shots"],
        correct=bool(p["correct"]),
        nucleus=p["nucleus"],
    )
    body = res.to_dict()
    body["params_hash"] = _config_hash(cfg)
    body["cnot"] = cnot
    body["gate_infidelity"] = res.gate_infidelity
    return {"bell.json": dump_json(body)}


def _range(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    t = p["memory_time_ms"] * 1e-3
    L = protocols.distribution_range(t, p["fiber_speed"])
    body = {"memory_time_ms": p["memory_time_ms"], "fiber_speed_m_per_s": p["fiber_speed"], "range_m": L, "range_km": L / 1e3}
    return {"range.json": dump_json(body)}


DISPATCH = {
    "spectrum": _spectrum,
    "readout": _readout,
    "rabi": _rabi,
    "decouple": _decouple,
    "resonances": _resonances,
    "ramsey": _ramsey,
    "echo": _echo,
    "teleport": _teleport,
    "storage": _storage,
    "cnot": _cnot,
    "bell": _bell,
    "range": _range,
}


def compute(cfg: ExperimentConfig) -> dict[str, str]:
    """Run one (non-sweep) config; returns {file path: contents}."""
    files = DISPATCH[cfg.experiment](cfg)
    return {f"{cfg.output}_{suffix}": text for suffix, text in files.items()}


def _threads() -> int:
    raw = os.environ.get("NODE_SIM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"NODE_SIM_THREADS must be an integer, got {raw!r}") from None


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def run(cfg: ExperimentConfig) -> tuple[int, list[str]]:
    """Compute every (child) run, write outputs, then the manifest.

    Nothing is written until all children succeed, so a failure leaves no
    unmanifested files. Returns (0, written paths).
    """
    start = time.perf_counter()
    children = sweep_children(cfg)
    with ThreadPoolExecutor(max_workers=min(_threads(), len(children))) as pool:
        results = list(pool.map(compute, children))
    files = {}
    for r in results:
        files.update(r)
    written = []
    try:
        for name in sorted(files):
            _write_atomic(Path(name), files[name])
            written.append(name)
        manifest = {
            "config": cfg.to_dict(),
            "tool_version": tool_version(),
            "wall_time_s": time.perf_counter() - start,
            "outputs": {n: hashlib.sha256(files[n].encode()).hexdigest() for n in sorted(files)},
            "children": len(children),
        }
        mpath = f"{cfg.output}_manifest.json"
        _write_atomic(Path(mpath), dump_json(manifest))
    except OSError:
        for name in written:
            Path(name).unlink(missing_ok=True)
        raise
    return 0, written + [mpath]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="node-sim", description="Simulate a cavity-coupled spin-register network node.")
    ap.add_argument("experiment", help="experiment name, e.g. spectrum, resonances, cnot, bell, range")
    ap.add_argument("--config", help="JSON config file (defaults are used for missing fields)")
    ap.add_argument("--set", action="append", default=[], metavar="PATH=VALUE", help="override a config field")
    ap.add_argument("--seed", type=int, help="random seed")
    ap.add_argument("--out", help="output path prefix")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        data = {}
        if args.config:
            text = Path(args.config).read_text(encoding="utf-8")
            try:
                data = json.loads(text) if text.strip() else {}
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError("config must be a JSON object")
        if data.get("experiment", args.experiment) != args.experiment:
            data.pop("params", None)
        data["experiment"] = args.experiment
        if args.seed is not None:
            data["seed"] = args.seed
        if args.out:
            data["output"] = args.out
        cfg = from_dict(apply_overrides(data, args.set))
        _, written = run(cfg)
    except OSError as exc:
        print(f"node-sim: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, QuantumError, hyperfine.SynthesisError, ValueError, RuntimeError) as exc:
        print(f"node-sim: error: {exc}", file=sys.stderr)
        return 1
    for w in written:
        print(w)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
